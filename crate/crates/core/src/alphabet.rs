//! The 26-letter alphabet. Letters are stored as indices `0..26`.
use alloc::string::String;
use alloc::vec::Vec;

pub const ALPHABET_SIZE: usize = 26;

/// A letter index in `0..26` (`a` = 0).
pub type Letter = u8;

/// Case-folded letter index of an ASCII alphabetic byte.
#[inline]
pub fn letter_of(byte: u8) -> Option<Letter> {
    match byte {
        b'a'..=b'z' => Some(byte - b'a'),
        b'A'..=b'Z' => Some(byte - b'A'),
        _ => None,
    }
}

#[inline]
pub fn char_of(letter: Letter) -> char {
    (b'a' + letter) as char
}

/// Render letter indices as a lowercase string.
pub fn render(letters: &[Letter]) -> String {
    letters.iter().map(|&l| char_of(l)).collect()
}

/// Parse a string into letters, dropping anything that is not a-z / A-Z.
pub fn parse(s: &str) -> Vec<Letter> {
    s.bytes().filter_map(letter_of).collect()
}
