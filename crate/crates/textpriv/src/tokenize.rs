//! Whitespace-and-punctuation tokenization.
//!
//! Splits on whitespace, then peels leading and trailing punctuation off
//! each chunk into standalone tokens, one character each. Punctuation
//! inside a word ("port-au-prince", "don't") stays put. Punctuation tokens
//! are ordinary tokens downstream: the mechanism perturbs them like any
//! other vocabulary entry.

use alloc::string::String;
use alloc::vec::Vec;

/// Non-ASCII punctuation that shows up in scraped text.
const UNICODE_PUNCT: &[char] = &[
    '–', '—', '…', '«', '»', '“', '”', '‘', '’', '¡', '¿', '·', '†', '‡',
];

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || UNICODE_PUNCT.contains(&c)
}

/// Tokenize `text`, optionally lowercasing.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        while start < end && is_punct(chars[start]) {
            start += 1;
        }
        while end > start && is_punct(chars[end - 1]) {
            end -= 1;
        }
        for &c in &chars[..start] {
            out.push(String::from(c));
        }
        if start < end {
            let word: String = chars[start..end].iter().collect();
            if lowercase {
                out.push(word.to_lowercase());
            } else {
                out.push(word);
            }
        }
        for &c in &chars[end..] {
            out.push(String::from(c));
        }
    }
    out
}

/// Join tokens with single spaces. After substitution the original
/// punctuation attachment is meaningless, so no reattachment is attempted.
pub fn detokenize<T: AsRef<str>>(tokens: &[T]) -> String {
    let mut s = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(t.as_ref());
    }
    s
}
