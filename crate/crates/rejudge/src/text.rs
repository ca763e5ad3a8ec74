//! Case-insensitive whole-word and substring matching over ASCII text.
//!
//! Word boundaries are defined by ASCII alphanumerics: a match is a whole
//! word when the bytes immediately before and after it are absent or not
//! `[A-Za-z0-9]`. Multi-byte UTF-8 sequences therefore act as boundaries,
//! which is the right call for an English-only lexicon.

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric()
}

fn matches_at(hay: &[u8], needle: &[u8], at: usize) -> bool {
    if at + needle.len() > hay.len() {
        return false;
    }
    hay[at..at + needle.len()].eq_ignore_ascii_case(needle)
}

fn word_bounded(hay: &[u8], at: usize, len: usize) -> bool {
    let before_ok = at == 0 || !is_word_byte(hay[at - 1]);
    let end = at + len;
    let after_ok = end == hay.len() || !is_word_byte(hay[end]);
    before_ok && after_ok
}

/// Byte offset of the first whole-word, case-insensitive occurrence of
/// `needle` in `haystack`, scanning from `from`.
pub(crate) fn find_whole_word(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let hay = haystack.as_bytes();
    let ndl = needle.as_bytes();
    let mut i = from;
    while i + ndl.len() <= hay.len() {
        if matches_at(hay, ndl, i) && word_bounded(hay, i, ndl.len()) {
            return Some(i);
        }
        i += 1;
    }
    None
}

/// Whether `needle` occurs at exactly byte offset `at` as a whole word,
/// with boundaries judged against the full haystack.
pub(crate) fn whole_word_at(haystack: &str, needle: &str, at: usize) -> bool {
    !needle.is_empty()
        && matches_at(haystack.as_bytes(), needle.as_bytes(), at)
        && word_bounded(haystack.as_bytes(), at, needle.len())
}

/// All non-overlapping whole-word occurrences of `needle`.
pub(crate) fn whole_word_occurrences(haystack: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = find_whole_word(haystack, needle, from) {
        out.push(pos);
        from = pos + needle.len();
    }
    out
}

pub(crate) fn contains_whole_word(haystack: &str, needle: &str) -> bool {
    find_whole_word(haystack, needle, 0).is_some()
}

/// Plain case-insensitive substring search (no boundary requirement).
pub(crate) fn find_substring_ci(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let hay = haystack.as_bytes();
    let ndl = needle.as_bytes();
    let mut i = from;
    while i + ndl.len() <= hay.len() {
        if matches_at(hay, ndl, i) {
            return Some(i);
        }
        i += 1;
    }
    None
}

pub(crate) fn contains_substring_ci(haystack: &str, needle: &str) -> bool {
    find_substring_ci(haystack, needle, 0).is_some()
}
