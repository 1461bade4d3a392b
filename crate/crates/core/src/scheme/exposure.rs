//! Linear view of what a user can compute from its answers.
//!
//! Answers are linear forms over the message symbols and the CR symbols.
//! With `V` the span of the answer forms plus the user's own CR symbol, the
//! dimension of `V` intersected with a coordinate subspace `X` is
//! `rank(V) - rank(V restricted to the coordinates outside X)`.

use serde::Serialize;

use crate::field::rank_mod;
use crate::pir::{MessageIndex, SchemeParams};

use super::{CrIndex, SpirQuery};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Exposure {
    /// Every desired symbol lies in `V`.
    pub desired_recoverable: bool,
    /// `dim(V ∩ messages)`; equals `L` when only the desired message is exposed.
    pub message_dimension: usize,
    /// `dim((V + desired) ∩ (desired, CR))`; equals `L + 1` when nothing beyond
    /// the user's own CR symbol is learned about the CR, given the desired message.
    pub randomness_dimension: usize,
}

impl Exposure {
    pub fn is_clean(&self, params: &SchemeParams) -> bool {
        self.desired_recoverable && self.message_dimension == params.l && self.randomness_dimension == params.l + 1
    }
}

pub fn exposure(params: &SchemeParams, query: &SpirQuery, desired: MessageIndex, user_cr: CrIndex) -> Exposure {
    let (kl, rs) = (params.k * params.l, params.rs_size);
    let cols = kl + rs;
    let msg_col = |m: MessageIndex, s: u32| (m.get() - 1) * params.l + s as usize - 1;
    let unit = |c: usize| {
        let mut v = vec![0u64; cols];
        v[c] = 1;
        v
    };

    let mut rows: Vec<Vec<u64>> = query
        .per_db
        .iter()
        .flatten()
        .map(|r| {
            let mut v = vec![0u64; cols];
            for t in r.base.terms() {
                v[msg_col(t.message, t.symbol)] += 1;
            }
            if let Some(c) = r.cr {
                v[kl + c.get() - 1] += 1;
            }
            v
        })
        .collect();
    rows.push(unit(kl + user_cr.get() - 1));

    let q = params.q;
    let rank_v = rank_mod(q, &rows);
    let desired_cols: Vec<usize> = (1..=params.l as u32).map(|s| msg_col(desired, s)).collect();
    let desired_recoverable = desired_cols.iter().all(|&c| {
        let mut with = rows.clone();
        with.push(unit(c));
        rank_mod(q, &with) == rank_v
    });

    let restrict = |rows: &[Vec<u64>], keep: &dyn Fn(usize) -> bool| -> usize {
        let r: Vec<Vec<u64>> = rows.iter().map(|row| row.iter().enumerate().filter(|(c, _)| keep(*c)).map(|(_, &v)| v).collect()).collect();
        rank_mod(q, &r)
    };
    let message_dimension = rank_v - restrict(&rows, &|c| c >= kl);

    let mut with_desired = rows.clone();
    with_desired.extend(desired_cols.iter().map(|&c| unit(c)));
    let is_desired = |c: usize| c < kl && (c / params.l) == desired.get() - 1;
    let rank_vd = rank_mod(q, &with_desired);
    let randomness_dimension = rank_vd - restrict(&with_desired, &|c| c < kl && !is_desired(c));

    Exposure { desired_recoverable, message_dimension, randomness_dimension }
}
