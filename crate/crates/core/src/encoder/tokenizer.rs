//! Word-level hashing tokenizer for class names.

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
const FIRST_WORD_ID: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    pub size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Self {
        assert!(size > FIRST_WORD_ID, "vocab too small for special tokens");
        Vocab { size }
    }

    /// FNV-1a of the word, folded into the non-special id range.
    pub fn word_id(&self, word: &str) -> usize {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in word.bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        FIRST_WORD_ID + (hash % (self.size - FIRST_WORD_ID) as u64) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub ids: Vec<usize>,
    /// Position of the END marker.
    pub end_index: usize,
}

/// `[START, words…, END, PAD…]`, padded to `max_len`.
///
/// Names are lowercase ASCII words separated by single spaces.
pub fn tokenize_class_name(name: &str, vocab: &Vocab, max_len: usize) -> Result<TokenizedText> {
    if name.is_empty() {
        return Err(Error::Validation("class name is empty".into()));
    }
    let words: Vec<&str> = name.split(' ').collect();
    if words
        .iter()
        .any(|w| w.is_empty() || !w.bytes().all(|b| b.is_ascii_lowercase()))
    {
        return Err(Error::Validation(format!(
            "class name {name:?} must be lowercase alphabetic words"
        )));
    }
    let needed = words.len() + 2;
    if needed > max_len {
        return Err(Error::TextTooLong {
            name: name.to_string(),
            needed,
            max: max_len,
        });
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(START);
    ids.extend(words.iter().map(|w| vocab.word_id(w)));
    let end_index = ids.len();
    ids.push(END);
    ids.resize(max_len, PAD);
    Ok(TokenizedText { ids, end_index })
}
