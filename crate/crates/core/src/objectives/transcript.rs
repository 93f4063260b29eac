use crate::error::{Error, Result};

/// CTC blank id.
pub const BLANK: usize = 0;
/// Lowercase letters, space and apostrophe, in id order starting at 1.
pub const ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz '";
/// Blank plus [`ALPHABET`].
pub const VOCAB_SIZE: usize = 29;

pub fn char_to_id(c: char) -> Option<usize> {
    ALPHABET.chars().position(|a| a == c).map(|p| p + 1)
}

pub fn id_to_char(id: usize) -> Option<char> {
    id.checked_sub(1).and_then(|i| ALPHABET.chars().nth(i))
}

/// Lowercases and drops characters outside the alphabet. Returns the
/// normalized text and the number of dropped characters.
pub fn normalize(text: &str) -> (String, usize) {
    let mut dropped = 0;
    let mut out = String::with_capacity(text.len());
    for c in text.chars().flat_map(char::to_lowercase) {
        if char_to_id(c).is_some() {
            out.push(c);
        } else {
            dropped += 1;
        }
    }
    (out, dropped)
}

/// A label sequence over the character alphabet; never contains the blank.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Transcript {
    ids: Vec<usize>,
}

impl Transcript {
    pub fn from_ids(ids: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i == BLANK || i >= VOCAB_SIZE) {
            return Err(Error::Config(format!("label id {bad} outside 1..{VOCAB_SIZE}")));
        }
        Ok(Self { ids })
    }

    /// Normalizes then maps to ids; unsupported characters are dropped.
    pub fn from_text(text: &str) -> Self {
        let (norm, _) = normalize(text);
        Self {
            ids: norm.chars().filter_map(char_to_id).collect(),
        }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn text(&self) -> String {
        self.ids.iter().filter_map(|&i| id_to_char(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabet_roundtrip() {
        assert_eq!(ALPHABET.chars().count() + 1, VOCAB_SIZE);
        for c in ALPHABET.chars() {
            assert_eq!(id_to_char(char_to_id(c).unwrap()), Some(c));
        }
        assert_eq!(id_to_char(BLANK), None);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("Hello, World!"), ("hello world".to_string(), 2));
        let t = Transcript::from_text("It's ok");
        assert_eq!(t.text(), "it's ok");
        assert!(Transcript::from_ids(vec![1, 0]).is_err());
    }
}
