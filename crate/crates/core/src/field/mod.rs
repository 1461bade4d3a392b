//! Prime-field arithmetic and the small numeric toolkit the rest of the crate
//! builds on: exact rationals, seeded randomness and permutations.

mod permutation;
mod random;
mod rational;

pub use permutation::{Injections, Permutation, PermutationError, Permutations};
pub use random::{sample_permutation, sample_uniform, Seed, SeedError, SeedStream, Tape, UniformSource};
pub use rational::{Rational, RationalParseError};

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("modulus mismatch: {0} vs {1}")]
    ModulusMismatch(u64, u64),
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
}

/// A prime `q`; the symbol alphabet is `GF(q)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct PrimeModulus(u64);

impl PrimeModulus {
    pub fn new(q: u64) -> Result<Self, FieldError> {
        if is_prime(q) {
            Ok(PrimeModulus(q))
        } else {
            Err(FieldError::NotPrime(q))
        }
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Reduces `v` into the field.
    pub fn element(self, v: u64) -> FieldElement {
        FieldElement { value: v % self.0, modulus: self }
    }

    pub fn zero(self) -> FieldElement {
        self.element(0)
    }

    pub fn one(self) -> FieldElement {
        self.element(1)
    }

    /// All `q` elements in ascending order.
    pub fn elements(self) -> impl Iterator<Item = FieldElement> {
        (0..self.0).map(move |v| self.element(v))
    }
}

impl TryFrom<u64> for PrimeModulus {
    type Error = FieldError;

    fn try_from(q: u64) -> Result<Self, Self::Error> {
        PrimeModulus::new(q)
    }
}

impl From<PrimeModulus> for u64 {
    fn from(q: PrimeModulus) -> u64 {
        q.0
    }
}

impl fmt::Display for PrimeModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for p in BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for a in BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// An element of `GF(q)`, always reduced.
///
/// The arithmetic operators panic when the moduli differ; the `try_*`
/// methods report the mismatch instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldElement {
    value: u64,
    modulus: PrimeModulus,
}

impl FieldElement {
    pub fn value(self) -> u64 {
        self.value
    }

    pub fn modulus(self) -> PrimeModulus {
        self.modulus
    }

    pub fn is_zero(self) -> bool {
        self.value == 0
    }

    fn check(self, rhs: FieldElement) -> Result<(), FieldError> {
        if self.modulus == rhs.modulus {
            Ok(())
        } else {
            Err(FieldError::ModulusMismatch(self.modulus.0, rhs.modulus.0))
        }
    }

    pub fn try_add(self, rhs: FieldElement) -> Result<FieldElement, FieldError> {
        self.check(rhs)?;
        let q = self.modulus.0 as u128;
        let v = (self.value as u128 + rhs.value as u128) % q;
        Ok(FieldElement { value: v as u64, modulus: self.modulus })
    }

    pub fn try_sub(self, rhs: FieldElement) -> Result<FieldElement, FieldError> {
        self.check(rhs)?;
        self.try_add(-rhs)
    }

    pub fn try_mul(self, rhs: FieldElement) -> Result<FieldElement, FieldError> {
        self.check(rhs)?;
        Ok(FieldElement { value: mul_mod(self.value, rhs.value, self.modulus.0), modulus: self.modulus })
    }

    pub fn pow(self, exp: u64) -> FieldElement {
        FieldElement { value: pow_mod(self.value, exp, self.modulus.0), modulus: self.modulus }
    }

    pub fn inverse(self) -> Result<FieldElement, FieldError> {
        if self.is_zero() {
            return Err(FieldError::ZeroInverse);
        }
        Ok(self.pow(self.modulus.0 - 2))
    }
}

impl Neg for FieldElement {
    type Output = FieldElement;

    fn neg(self) -> FieldElement {
        let value = if self.value == 0 { 0 } else { self.modulus.0 - self.value };
        FieldElement { value, modulus: self.modulus }
    }
}

impl Add for FieldElement {
    type Output = FieldElement;

    fn add(self, rhs: FieldElement) -> FieldElement {
        self.try_add(rhs).expect("field elements from different moduli")
    }
}

impl Sub for FieldElement {
    type Output = FieldElement;

    fn sub(self, rhs: FieldElement) -> FieldElement {
        self.try_sub(rhs).expect("field elements from different moduli")
    }
}

impl Mul for FieldElement {
    type Output = FieldElement;

    fn mul(self, rhs: FieldElement) -> FieldElement {
        self.try_mul(rhs).expect("field elements from different moduli")
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

// The modulus travels with the surrounding record, so only the value is written.
impl Serialize for FieldElement {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(self.value)
    }
}

/// Rank of a matrix over `GF(q)` by Gaussian elimination. Rows are given as
/// residues and reduced mod `q` first.
pub fn rank_mod(q: PrimeModulus, rows: &[Vec<u64>]) -> usize {
    let p = q.value();
    let mut m: Vec<Vec<u64>> = rows.iter().map(|r| r.iter().map(|v| v % p).collect()).collect();
    let cols = m.first().map_or(0, Vec::len);
    let mut rank = 0;
    for col in 0..cols {
        let Some(pivot) = (rank..m.len()).find(|&r| m[r][col] != 0) else {
            continue;
        };
        m.swap(rank, pivot);
        let inv = pow_mod(m[rank][col], p - 2, p);
        for v in m[rank].iter_mut() {
            *v = mul_mod(*v, inv, p);
        }
        let pivot_row = m[rank].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r == rank || row[col] == 0 {
                continue;
            }
            let factor = row[col];
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                *v = (*v + p - mul_mod(factor, *pv, p)) % p;
            }
        }
        rank += 1;
        if rank == m.len() {
            break;
        }
    }
    rank
}
