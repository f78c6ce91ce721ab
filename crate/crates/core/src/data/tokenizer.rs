//! Byte-level vocabulary: ids `0..=255` are raw bytes, followed by the
//! template markers and one verbalizer token per label.

use crate::error::{Error, Result};
use crate::hierarchy::Label;

pub const SYS: usize = 256;
pub const USER: usize = 257;
pub const ASST: usize = 258;
pub const EOT: usize = 259;
const LABEL_BASE: usize = 260;

/// Smallest vocabulary that holds every byte, marker and label token.
pub const MIN_VOCAB: usize = LABEL_BASE + Label::ALL.len();

/// Raw UTF-8 bytes as token ids. Nothing is normalised or stripped.
pub fn tokenize(text: &str) -> Vec<usize> {
    text.bytes().map(usize::from).collect()
}

/// Inverse of [`tokenize`]; marker and label tokens are rejected.
pub fn detokenize(tokens: &[usize]) -> Result<String> {
    let bytes = tokens
        .iter()
        .map(|&t| u8::try_from(t).map_err(|_| Error::Data(format!("token {t} is not a byte"))))
        .collect::<Result<Vec<u8>>>()?;
    String::from_utf8(bytes).map_err(|e| Error::Data(format!("invalid UTF-8: {e}")))
}

pub fn label_token(label: Label) -> usize {
    LABEL_BASE + label.ordinal()
}

pub fn token_label(token: usize) -> Option<Label> {
    token.checked_sub(LABEL_BASE).and_then(|i| Label::ALL.get(i).copied())
}
