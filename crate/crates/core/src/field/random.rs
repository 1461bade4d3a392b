use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{FieldElement, Permutation, PrimeModulus};

/// 32-byte seed. The same seed always yields the same stream of draws.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Seed([u8; 32]);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("seed must be 64 hex digits: {0:?}")]
pub struct SeedError(pub String);

impl Seed {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Seed(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Small integer seeds, e.g. from the command line.
    pub fn from_u64(n: u64) -> Self {
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&n.to_le_bytes());
        Seed(bytes)
    }

    /// Independent child seed for a named sub-stream.
    pub fn derive(&self, label: &str) -> Seed {
        let mut h = Sha256::new();
        h.update(self.0);
        h.update(label.as_bytes());
        Seed(h.finalize().into())
    }

    /// SHA-256 of the seed, hex encoded. Lets records name a seed without revealing it.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.0))
    }

    pub fn stream(&self) -> SeedStream {
        SeedStream(ChaCha20Rng::from_seed(self.0))
    }
}

impl fmt::Display for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Seed({self})")
    }
}

impl FromStr for Seed {
    type Err = SeedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|_| SeedError(s.to_string()))?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| SeedError(s.to_string()))?;
        Ok(Seed(arr))
    }
}

impl Serialize for Seed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Seed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A source of uniform integers. Implemented by [`SeedStream`] and, for
/// exhaustive arguments over explicit draw sequences, by [`Tape`].
pub trait UniformSource {
    /// Uniform draw from `0..n`; `n >= 1`.
    fn below(&mut self, n: u64) -> u64;
}

/// Deterministic ChaCha20 stream keyed by a [`Seed`].
#[derive(Clone, Debug)]
pub struct SeedStream(ChaCha20Rng);

impl UniformSource for SeedStream {
    fn below(&mut self, n: u64) -> u64 {
        assert!(n >= 1, "empty range");
        self.0.random_range(0..n)
    }
}

/// A fixed list of draws, replayed in order. Each entry must lie below the
/// bound requested when it is consumed.
#[derive(Clone, Debug)]
pub struct Tape {
    draws: Vec<u64>,
    pos: usize,
}

impl Tape {
    pub fn new(draws: Vec<u64>) -> Self {
        Tape { draws, pos: 0 }
    }

    pub fn consumed(&self) -> usize {
        self.pos
    }
}

impl UniformSource for Tape {
    fn below(&mut self, n: u64) -> u64 {
        let v = *self.draws.get(self.pos).expect("tape exhausted");
        assert!(v < n, "tape value {v} out of range 0..{n}");
        self.pos += 1;
        v
    }
}

pub fn sample_uniform<R: UniformSource + ?Sized>(modulus: PrimeModulus, src: &mut R) -> FieldElement {
    modulus.element(src.below(modulus.value()))
}

/// Fisher-Yates: position `i` (from the top) swaps with a uniform `j <= i`.
/// Consumes exactly `n - 1` draws with bounds `n, n-1, .., 2`.
pub fn sample_permutation<R: UniformSource + ?Sized>(n: usize, src: &mut R) -> Permutation {
    assert!(n >= 1, "permutation of an empty set");
    let mut images: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = src.below(i as u64 + 1) as usize;
        images.swap(i, j);
    }
    Permutation::from_images(images).expect("shuffle of identity is a bijection")
}
