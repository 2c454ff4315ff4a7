//! Hierarchical seeding.
//!
//! A [`SeedPath`] is a master seed plus an ordered list of labels. Every random
//! stream in the crate is derived from one, so any result is a pure function of
//! its inputs and the path it was handed. Streams for sub-tasks are obtained with
//! [`SeedPath::child`]; parallel callers must use disjoint paths.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// The RNG every stream uses.
pub type StreamRng = ChaCha12Rng;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedLabel {
    Int(u64),
    Str(String),
}

impl From<&str> for SeedLabel {
    fn from(s: &str) -> Self {
        SeedLabel::Str(s.to_string())
    }
}

impl From<String> for SeedLabel {
    fn from(s: String) -> Self {
        SeedLabel::Str(s)
    }
}

impl From<u64> for SeedLabel {
    fn from(v: u64) -> Self {
        SeedLabel::Int(v)
    }
}

impl From<usize> for SeedLabel {
    fn from(v: usize) -> Self {
        SeedLabel::Int(v as u64)
    }
}

impl fmt::Display for SeedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeedLabel::Int(v) => write!(f, "{v}"),
            SeedLabel::Str(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedPath {
    pub master: u64,
    pub labels: Vec<SeedLabel>,
}

/// Derive the stream identified by `labels` under `master`.
pub fn derive_seed<L: Into<SeedLabel>>(master: u64, labels: impl IntoIterator<Item = L>) -> SeedPath {
    SeedPath {
        master,
        labels: labels.into_iter().map(Into::into).collect(),
    }
}

impl SeedPath {
    pub fn root(master: u64) -> Self {
        SeedPath {
            master,
            labels: Vec::new(),
        }
    }

    pub fn child(&self, label: impl Into<SeedLabel>) -> Self {
        let mut labels = self.labels.clone();
        labels.push(label.into());
        SeedPath {
            master: self.master,
            labels,
        }
    }

    /// 32-byte key: a SHA-256 chain over the master seed and each label.
    /// Labels are tagged and length-prefixed so `("ab")` and `("a","b")`, or
    /// `Int(1)` and `Str("1")`, never collide.
    pub fn key(&self) -> [u8; 32] {
        let mut state: [u8; 32] = Sha256::digest(self.master.to_le_bytes()).into();
        for label in &self.labels {
            let mut h = Sha256::new();
            h.update(state);
            match label {
                SeedLabel::Int(v) => {
                    h.update([0u8]);
                    h.update(v.to_le_bytes());
                }
                SeedLabel::Str(s) => {
                    h.update([1u8]);
                    h.update((s.len() as u64).to_le_bytes());
                    h.update(s.as_bytes());
                }
            }
            state = h.finalize().into();
        }
        state
    }

    pub fn rng(&self) -> StreamRng {
        StreamRng::from_seed(self.key())
    }
}

impl fmt::Display for SeedPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.master)?;
        for l in &self.labels {
            write!(f, "/{l}")?;
        }
        Ok(())
    }
}
