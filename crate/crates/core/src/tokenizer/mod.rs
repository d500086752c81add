//! Byte-level BPE tokenizer for C/C++ source with atomic domain tokens.
//!
//! Id layout: control tokens, then domain tokens (punctuation, keywords,
//! API calls), then the 256 single-byte tokens, then learned merges.

mod bpe;
mod specials;
mod vocab;

pub use bpe::train_bpe;
pub use specials::{
    escape, parse_special_list, unescape, SpecialRegistry, SpecialToken, TokenCategory,
    BUILTIN_DOMAIN_TOKENS,
};
pub use vocab::{collate, Encoding, TokenSequence, Vocabulary, DEFAULT_VOCAB_SIZE, MAX_VOCAB_SIZE};

pub(crate) fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

pub(crate) fn is_space_byte(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}
