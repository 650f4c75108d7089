//! Byte-level reference tokenizer with a special-token registry.
//!
//! Ordinary ids are the 256 byte values; special tokens are allocated at
//! the top of the id space so they can never be produced by encoding
//! text. The production vocabulary size (50,257) is honored by
//! configuration; an external subword tokenizer can be plugged in behind
//! the same trait.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::TokenId;

/// Default vocabulary size of the production tokenizer.
pub const DEFAULT_VOCAB_SIZE: u32 = 50_257;

/// Registry of special-token roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpecialName {
    FimPrefix,
    FimSuffix,
    FimMiddle,
    RepoContinuation,
    EndOfDoc,
    FilenameMarker,
    StarsMarker,
}

impl SpecialName {
    pub const ALL: [SpecialName; 7] = [
        SpecialName::FimPrefix,
        SpecialName::FimSuffix,
        SpecialName::FimMiddle,
        SpecialName::RepoContinuation,
        SpecialName::EndOfDoc,
        SpecialName::FilenameMarker,
        SpecialName::StarsMarker,
    ];

    /// StarCoder-style default surfaces. The exact spellings are
    /// configurable; these are the documented defaults.
    pub fn default_surface(self) -> &'static str {
        match self {
            SpecialName::FimPrefix => "<fim_prefix>",
            SpecialName::FimSuffix => "<fim_suffix>",
            SpecialName::FimMiddle => "<fim_middle>",
            SpecialName::RepoContinuation => "<repo_continuation>",
            SpecialName::EndOfDoc => "<|endoftext|>",
            SpecialName::FilenameMarker => "<filename>",
            SpecialName::StarsMarker => "<gh_stars>",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialToken {
    pub name: SpecialName,
    pub id: TokenId,
    pub surface: String,
}

/// Vocabulary description: size plus the special-token table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub size: u32,
    pub specials: Vec<SpecialToken>,
}

impl Vocab {
    /// Specials at the top of the id space, default surfaces.
    pub fn with_size(size: u32) -> Result<Vocab, TokenizerError> {
        let n = SpecialName::ALL.len() as u32;
        if size < 256 + n {
            return Err(TokenizerError::VocabTooSmall { size, required: 256 + n });
        }
        let specials = SpecialName::ALL
            .iter()
            .enumerate()
            .map(|(i, &name)| SpecialToken {
                name,
                id: size - n + i as u32,
                surface: name.default_surface().to_string(),
            })
            .collect();
        Ok(Vocab { size, specials })
    }

    pub fn validate(&self) -> Result<(), TokenizerError> {
        let mut ids = std::collections::HashSet::new();
        let mut surfaces = std::collections::HashSet::new();
        for sp in &self.specials {
            if sp.id < 256 || sp.id >= self.size {
                return Err(TokenizerError::SpecialIdOutOfRange { id: sp.id });
            }
            if !ids.insert(sp.id) {
                return Err(TokenizerError::DuplicateSpecial(format!("id {}", sp.id)));
            }
            if !surfaces.insert(sp.surface.clone()) {
                return Err(TokenizerError::DuplicateSpecial(sp.surface.clone()));
            }
        }
        Ok(())
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::with_size(DEFAULT_VOCAB_SIZE).unwrap()
    }
}

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocab size {size} too small, need at least {required}")]
    VocabTooSmall { size: u32, required: u32 },
    #[error("special token id {id} collides with the ordinary range or exceeds the vocab")]
    SpecialIdOutOfRange { id: TokenId },
    #[error("duplicate special token: {0}")]
    DuplicateSpecial(String),
    #[error("token id {id} out of range (vocab size {size})")]
    IdOutOfRange { id: TokenId, size: u32 },
    #[error("token id {0} maps to nothing (gap between byte ids and specials)")]
    UnmappedId(TokenId),
    #[error("unknown special token name")]
    UnknownSpecial,
    #[error("decoded bytes are not valid UTF-8")]
    InvalidUtf8(#[from] std::string::FromUtf8Error),
}

/// Minimal surface the pipeline needs from any tokenizer.
pub trait Tokenize {
    fn encode(&self, text: &str) -> Vec<TokenId>;
    fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError>;
    fn special(&self, name: SpecialName) -> Result<&SpecialToken, TokenizerError>;
    fn vocab(&self) -> &Vocab;
}

/// Reference byte-level tokenizer. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ByteTokenizer {
    vocab: Vocab,
}

impl ByteTokenizer {
    pub fn new(vocab: Vocab) -> Result<Self, TokenizerError> {
        vocab.validate()?;
        Ok(ByteTokenizer { vocab })
    }
}

impl Default for ByteTokenizer {
    fn default() -> Self {
        ByteTokenizer::new(Vocab::default()).unwrap()
    }
}

impl Tokenize for ByteTokenizer {
    /// Byte fallback is total: every UTF-8 string encodes, and the output
    /// never contains a special id.
    fn encode(&self, text: &str) -> Vec<TokenId> {
        text.bytes().map(TokenId::from).collect()
    }

    fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::with_capacity(ids.len());
        let mut out = String::new();
        for &id in ids {
            if id >= self.vocab.size {
                return Err(TokenizerError::IdOutOfRange {
                    id,
                    size: self.vocab.size,
                });
            }
            if id < 256 {
                bytes.push(id as u8);
                continue;
            }
            match self.vocab.specials.iter().find(|sp| sp.id == id) {
                Some(sp) => {
                    if !bytes.is_empty() {
                        out.push_str(&String::from_utf8(std::mem::take(&mut bytes))?);
                    }
                    out.push_str(&sp.surface);
                }
                None => return Err(TokenizerError::UnmappedId(id)),
            }
        }
        if !bytes.is_empty() {
            out.push_str(&String::from_utf8(bytes)?);
        }
        Ok(out)
    }

    fn special(&self, name: SpecialName) -> Result<&SpecialToken, TokenizerError> {
        self.vocab
            .specials
            .iter()
            .find(|sp| sp.name == name)
            .ok_or(TokenizerError::UnknownSpecial)
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }
}
