use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const BLANK: TokenId = 0;
pub const PAD: TokenId = 1;
pub const SOS: TokenId = 2;
pub const BIAS: TokenId = 3;
const RESERVED: usize = 4;

pub const BIAS_SYMBOL: &str = "</bias>";
pub const DEFAULT_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz '";

/// Character-level token inventory.
///
/// Ids 0..4 are reserved (blank, padding, start-of-phrase, bias marker);
/// alphabet characters follow in the order given.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    alphabet: Vec<char>,
}

impl Vocab {
    pub fn new(alphabet: &str) -> Result<Self> {
        let chars: Vec<char> = alphabet.chars().collect();
        if chars.is_empty() {
            return Err(Error::Config("alphabet is empty".into()));
        }
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(Error::Config(format!("alphabet repeats {c:?}")));
            }
        }
        if !chars.contains(&' ') {
            return Err(Error::Config("alphabet must contain the space character".into()));
        }
        Ok(Self { alphabet: chars })
    }

    pub fn size(&self) -> usize {
        RESERVED + self.alphabet.len()
    }

    pub fn alphabet(&self) -> String {
        self.alphabet.iter().collect()
    }

    pub fn space(&self) -> TokenId {
        self.id_of(' ').expect("space is always present")
    }

    pub fn id_of(&self, c: char) -> Option<TokenId> {
        self.alphabet.iter().position(|&a| a == c).map(|i| i + RESERVED)
    }

    pub fn is_reserved(id: TokenId) -> bool {
        id < RESERVED
    }

    /// Ids the transducer may emit besides blank: every character plus the
    /// bias marker.
    pub fn is_emittable(&self, id: TokenId) -> bool {
        id == BIAS || (id >= RESERVED && id < self.size())
    }

    pub fn char_ids(&self) -> impl Iterator<Item = TokenId> {
        RESERVED..self.size()
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        text.chars()
            .enumerate()
            .map(|(pos, ch)| self.id_of(ch).ok_or(Error::OutOfAlphabet { ch, pos }))
            .collect()
    }

    /// Renders ids as text; the bias marker prints as `</bias>`, other
    /// reserved ids are rejected.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::with_capacity(ids.len());
        for &id in ids {
            if id == BIAS {
                out.push_str(BIAS_SYMBOL);
            } else if id >= RESERVED && id < self.size() {
                out.push(self.alphabet[id - RESERVED]);
            } else {
                return Err(Error::UnknownToken(id));
            }
        }
        Ok(out)
    }

    pub fn symbol(&self, id: TokenId) -> String {
        match id {
            BLANK => "<blank>".into(),
            PAD => "<pad>".into(),
            SOS => "<s>".into(),
            BIAS => BIAS_SYMBOL.into(),
            _ => self.alphabet.get(id - RESERVED).map_or("<unk>".into(), |c| c.to_string()),
        }
    }
}

pub fn strip_bias(ids: &[TokenId]) -> Vec<TokenId> {
    ids.iter().copied().filter(|&t| t != BIAS).collect()
}

/// Splits on the space token, dropping empty words.
pub fn words(ids: &[TokenId], space: TokenId) -> Vec<&[TokenId]> {
    ids.split(|&t| t == space).filter(|w| !w.is_empty()).collect()
}
