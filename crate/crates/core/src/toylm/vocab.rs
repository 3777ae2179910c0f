use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;
/// Smallest content token id; everything below is reserved.
pub const FIRST_CONTENT: TokenId = 4;

/// Tokens that generation never emits.
pub const NON_EMITTABLE: [TokenId; 3] = [PAD, BOS, SEP];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub const DEFAULT_SIZE: usize = 32;

    pub fn new(size: usize) -> Result<Self> {
        if size < 8 {
            return Err(Error::config(format!("vocab size must be >= 8, got {size}")));
        }
        if size > u32::MAX as usize {
            return Err(Error::config("vocab size exceeds u32 range"));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn num_content(&self) -> usize {
        self.size - FIRST_CONTENT as usize
    }

    pub fn content_tokens(&self) -> impl Iterator<Item = TokenId> {
        FIRST_CONTENT..self.size as TokenId
    }

    pub fn is_content(&self, t: TokenId) -> bool {
        t >= FIRST_CONTENT && (t as usize) < self.size
    }

    pub fn check(&self, t: TokenId) -> Result<()> {
        if (t as usize) < self.size {
            Ok(())
        } else {
            Err(Error::input(format!(
                "token id {t} out of range for vocab of size {}",
                self.size
            )))
        }
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self {
            size: Self::DEFAULT_SIZE,
        }
    }
}

impl TryFrom<usize> for Vocab {
    type Error = Error;
    fn try_from(size: usize) -> Result<Self> {
        Self::new(size)
    }
}

impl From<Vocab> for usize {
    fn from(v: Vocab) -> usize {
        v.size
    }
}

/// `BOS content... SEP`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Prompt(Vec<TokenId>);

impl Prompt {
    pub fn new(tokens: Vec<TokenId>, vocab: &Vocab) -> Result<Self> {
        let p = Self(tokens);
        p.validate(vocab)?;
        Ok(p)
    }

    pub fn from_content(content: &[TokenId], vocab: &Vocab) -> Result<Self> {
        let mut tokens = Vec::with_capacity(content.len() + 2);
        tokens.push(BOS);
        tokens.extend_from_slice(content);
        tokens.push(SEP);
        Self::new(tokens, vocab)
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        let t = &self.0;
        if t.len() < 2 || t[0] != BOS || t[t.len() - 1] != SEP {
            return Err(Error::input("prompt must start with BOS and end with SEP"));
        }
        for &tok in &t[1..t.len() - 1] {
            vocab.check(tok)?;
            if !vocab.is_content(tok) {
                return Err(Error::input(format!(
                    "prompt body contains reserved token {tok}"
                )));
            }
        }
        Ok(())
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    /// Tokens strictly between BOS and SEP.
    pub fn content(&self) -> &[TokenId] {
        &self.0[1..self.0.len() - 1]
    }
}

/// Content tokens, optionally terminated by a single EOS.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Response(Vec<TokenId>);

impl Response {
    pub fn new(tokens: Vec<TokenId>, vocab: &Vocab) -> Result<Self> {
        let r = Self(tokens);
        r.validate(vocab)?;
        Ok(r)
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::input("empty response"));
        }
        let last = self.0.len() - 1;
        for (i, &tok) in self.0.iter().enumerate() {
            vocab.check(tok)?;
            match tok {
                EOS if i == last => {}
                EOS => return Err(Error::input("EOS before the end of a response")),
                t if !vocab.is_content(t) => {
                    return Err(Error::input(format!("response contains reserved token {t}")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.0.last() == Some(&EOS)
    }

    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[TokenId] {
        if self.is_complete() {
            &self.0[..self.0.len() - 1]
        } else {
            &self.0
        }
    }
}
