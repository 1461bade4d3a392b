use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PermutationError {
    #[error("image {0} out of range for a permutation of {1}")]
    OutOfRange(usize, usize),
    #[error("image {0} repeated")]
    Repeated(usize),
    #[error("permutations of different sizes ({0} and {1})")]
    SizeMismatch(usize, usize),
}

/// A bijection on `0..n`, stored as its image list.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn from_images(images: Vec<usize>) -> Result<Self, PermutationError> {
        let n = images.len();
        let mut seen = vec![false; n];
        for &i in &images {
            if i >= n {
                return Err(PermutationError::OutOfRange(i, n));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(PermutationError::Repeated(i));
            }
        }
        Ok(Permutation(images))
    }

    /// Transposition of `a` and `b` on `0..n`.
    pub fn swap(n: usize, a: usize, b: usize) -> Self {
        let mut images: Vec<usize> = (0..n).collect();
        images.swap(a, b);
        Permutation(images)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn images(&self) -> &[usize] {
        &self.0
    }

    pub fn apply(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &v)| i == v)
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &Permutation) -> Result<Permutation, PermutationError> {
        if self.len() != other.len() {
            return Err(PermutationError::SizeMismatch(self.len(), other.len()));
        }
        Ok(Permutation(other.0.iter().map(|&i| self.0[i]).collect()))
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.len()];
        for (i, &v) in self.0.iter().enumerate() {
            inv[v] = i;
        }
        Permutation(inv)
    }

    /// All `n!` permutations in lexicographic order of their image lists.
    pub fn all(n: usize) -> Permutations {
        Permutations { next: Some((0..n).collect()) }
    }
}

/// Lexicographic enumeration of `S_n`.
#[derive(Clone, Debug)]
pub struct Permutations {
    next: Option<Vec<usize>>,
}

impl Iterator for Permutations {
    type Item = Permutation;

    fn next(&mut self) -> Option<Permutation> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        if next_lexicographic(&mut succ) {
            self.next = Some(succ);
        }
        Some(Permutation(current))
    }
}

fn next_lexicographic(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let Some(i) = (0..v.len() - 1).rev().find(|&i| v[i] < v[i + 1]) else {
        return false;
    };
    let j = (i + 1..v.len()).rev().find(|&j| v[j] > v[i]).expect("successor exists");
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// Injective maps `0..used -> 0..n`, each completed to a full permutation by
/// sending the remaining positions to the unused images in ascending order.
/// There are `n! / (n - used)!` of them, yielded in lexicographic order.
#[derive(Clone, Debug)]
pub struct Injections {
    n: usize,
    prefix: Option<Vec<usize>>,
}

impl Injections {
    pub fn new(n: usize, used: usize) -> Self {
        assert!(used <= n);
        Injections { n, prefix: Some((0..used).collect()) }
    }

    pub fn count(n: usize, used: usize) -> u128 {
        ((n - used + 1)..=n).map(|v| v as u128).product()
    }
}

impl Iterator for Injections {
    type Item = Permutation;

    fn next(&mut self) -> Option<Permutation> {
        let prefix = self.prefix.take()?;
        let mut taken = vec![false; self.n];
        for &p in &prefix {
            taken[p] = true;
        }
        let mut images = prefix.clone();
        images.extend((0..self.n).filter(|&i| !taken[i]));
        self.prefix = advance_injection(prefix, self.n);
        Some(Permutation(images))
    }
}

// Next injective prefix in lexicographic order, or None after the last.
fn advance_injection(mut prefix: Vec<usize>, n: usize) -> Option<Vec<usize>> {
    let used = prefix.len();
    let mut pos = used;
    while pos > 0 {
        pos -= 1;
        let mut taken = vec![false; n];
        for &p in &prefix[..pos] {
            taken[p] = true;
        }
        if let Some(v) = (prefix[pos] + 1..n).find(|&v| !taken[v]) {
            prefix[pos] = v;
            taken[v] = true;
            let mut fill = (0..n).filter(|&i| !taken[i]);
            for slot in prefix[pos + 1..].iter_mut() {
                *slot = fill.next()?;
            }
            return Some(prefix);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn rejects_non_bijections() {
        assert_eq!(Permutation::from_images(vec![0, 0]), Err(PermutationError::Repeated(0)));
        assert_eq!(Permutation::from_images(vec![0, 2]), Err(PermutationError::OutOfRange(2, 2)));
    }

    #[test]
    fn composition_with_inverse_is_identity() {
        for p in Permutation::all(4) {
            assert!(p.compose(&p.inverse()).unwrap().is_identity());
            assert!(p.inverse().compose(&p).unwrap().is_identity());
        }
    }

    #[test]
    fn enumerates_symmetric_group() {
        let all: BTreeSet<_> = Permutation::all(4).collect();
        assert_eq!(all.len(), 24);
        assert_eq!(Permutation::all(1).count(), 1);
        let listed: Vec<_> = Permutation::all(3).map(|p| p.images().to_vec()).collect();
        assert_eq!(listed[0], vec![0, 1, 2]);
        assert_eq!(listed[5], vec![2, 1, 0]);
    }

    #[test]
    fn injection_counts() {
        for (n, used) in [(4, 4), (4, 2), (4, 0), (3, 1), (5, 3)] {
            let items: Vec<_> = Injections::new(n, used).collect();
            assert_eq!(items.len() as u128, Injections::count(n, used));
            let prefixes: BTreeSet<_> = items.iter().map(|p| p.images()[..used].to_vec()).collect();
            assert_eq!(prefixes.len(), items.len());
            for p in &items {
                assert!(Permutation::from_images(p.images().to_vec()).is_ok());
            }
        }
        assert_eq!(Injections::count(4, 2), 12);
    }
}
