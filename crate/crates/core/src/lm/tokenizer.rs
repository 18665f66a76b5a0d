use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

use super::TokenId;

/// Byte-level tokenizer over the alphabet of bytes seen in a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteTokenizer {
    alphabet: Vec<u8>,
    lookup: [Option<u32>; 256],
}

impl ByteTokenizer {
    /// Builds the sorted alphabet of distinct bytes in `corpus`.
    pub fn fit(corpus: &[u8]) -> Self {
        let mut seen = [false; 256];
        corpus.iter().for_each(|&b| seen[b as usize] = true);
        let alphabet = (0..=255u8).filter(|b| seen[*b as usize]).collect();
        Self::from_alphabet(alphabet).expect("distinct sorted bytes")
    }

    pub fn from_alphabet(alphabet: Vec<u8>) -> Result<Self> {
        let mut lookup = [None; 256];
        for (i, &b) in alphabet.iter().enumerate() {
            if lookup[b as usize].is_some() {
                return Err(Error::config(format!("duplicate byte {b} in alphabet")));
            }
            lookup[b as usize] = Some(i as u32);
        }
        Ok(Self { alphabet, lookup })
    }

    pub fn alphabet(&self) -> &[u8] {
        &self.alphabet
    }

    pub fn vocab_size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn encode(&self, text: &[u8]) -> Result<Vec<TokenId>> {
        text.iter()
            .map(|&b| {
                self.lookup[b as usize]
                    .map(TokenId)
                    .ok_or_else(|| Error::arg(format!("byte {b:#04x} is not in the alphabet")))
            })
            .collect()
    }

    pub fn token_of(&self, b: u8) -> Option<TokenId> {
        self.lookup[b as usize].map(TokenId)
    }

    pub fn decode(&self, tokens: &[TokenId]) -> String {
        let bytes: Vec<u8> = tokens.iter().map(|t| self.alphabet[t.index()]).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}
