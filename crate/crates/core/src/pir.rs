//! Non-symmetric PIR query plans over `N` replicated databases.
//!
//! Each database receives, for every `k`-subset of messages, `(N-1)^(k-1)`
//! requests for the sum of one fresh symbol from each message in the subset
//! (with `0^0 = 1`). A desired symbol inside a `k`-sum is paired with an
//! undesired-only `(k-1)`-sum downloaded from a different database, so the
//! user can cancel the undesired part.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{sample_permutation, Permutation, PrimeModulus, UniformSource};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParamsError {
    #[error("need at least one database")]
    NoDatabases,
    #[error("need at least two messages, got {0}")]
    TooFewMessages(usize),
    #[error("message length N^K = {n}^{k} does not fit in 32 bits")]
    TooLong { n: usize, k: usize },
    #[error("desired message {desired} outside 1..={k}")]
    DesiredOutOfRange { desired: usize, k: usize },
}

/// Scheme dimensions. Everything downstream is derived from `(N, K, q)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchemeParams {
    pub n: usize,
    pub k: usize,
    pub q: PrimeModulus,
    /// Symbols per message, `N^K`.
    pub l: usize,
    /// Server-side common randomness symbols, `1 + N + ... + N^(K-1)`.
    pub rs_size: usize,
    /// User-side common randomness symbols; always 1.
    pub ru_size: usize,
}

impl SchemeParams {
    pub fn new(n: usize, k: usize, q: PrimeModulus) -> Result<Self, ParamsError> {
        if n == 0 {
            return Err(ParamsError::NoDatabases);
        }
        if k < 2 {
            return Err(ParamsError::TooFewMessages(k));
        }
        let too_long = || ParamsError::TooLong { n, k };
        let mut l: u64 = 1;
        let mut rs: u64 = 0;
        for _ in 0..k {
            rs = rs.checked_add(l).ok_or_else(too_long)?;
            l = l.checked_mul(n as u64).ok_or_else(too_long)?;
        }
        if l > u32::MAX as u64 || k > u16::MAX as usize {
            return Err(too_long());
        }
        Ok(SchemeParams { n, k, q, l: l as usize, rs_size: rs as usize, ru_size: 1 })
    }

    pub fn desired(&self, desired: usize) -> Result<MessageIndex, ParamsError> {
        if (1..=self.k).contains(&desired) {
            Ok(MessageIndex(desired as u16))
        } else {
            Err(ParamsError::DesiredOutOfRange { desired, k: self.k })
        }
    }

    pub fn messages(&self) -> impl Iterator<Item = MessageIndex> {
        (1..=self.k as u16).map(MessageIndex)
    }

    /// Requests each database receives. Equals `rs_size`.
    pub fn requests_per_db(&self) -> usize {
        (1..=self.k).map(|k| binomial(self.k, k) * pow0(self.n - 1, k - 1)).sum()
    }

    /// Total downloaded symbols `D`.
    pub fn total_requests(&self) -> usize {
        self.n * self.requests_per_db()
    }

    /// Symbols of each undesired message that a plan touches, `N^(K-1)`.
    pub fn undesired_symbols_used(&self) -> usize {
        self.l / self.n
    }
}

/// `base^exp` with `0^0 = 1`.
pub(crate) fn pow0(base: usize, exp: usize) -> usize {
    base.pow(exp as u32)
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// 1-based message index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageIndex(pub u16);

impl MessageIndex {
    pub fn get(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for MessageIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "W{}", self.0)
    }
}

/// One message symbol: `W_message[symbol]`, both 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymbolRef {
    pub message: MessageIndex,
    pub symbol: u32,
}

/// A request for the field sum of symbols from distinct messages.
/// Terms are kept sorted by message index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SymbolRequest {
    terms: Vec<SymbolRef>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RequestError {
    #[error("request has no terms")]
    Empty,
    #[error("message {0} appears twice in one request")]
    RepeatedMessage(u16),
}

impl SymbolRequest {
    pub fn new(mut terms: Vec<SymbolRef>) -> Result<Self, RequestError> {
        if terms.is_empty() {
            return Err(RequestError::Empty);
        }
        terms.sort_by_key(|t| t.message);
        if let Some(w) = terms.windows(2).find(|w| w[0].message == w[1].message) {
            return Err(RequestError::RepeatedMessage(w[0].message.0));
        }
        Ok(SymbolRequest { terms })
    }

    pub fn terms(&self) -> &[SymbolRef] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn contains(&self, m: MessageIndex) -> bool {
        self.terms.iter().any(|t| t.message == m)
    }

    pub fn term_for(&self, m: MessageIndex) -> Option<SymbolRef> {
        self.terms.iter().copied().find(|t| t.message == m)
    }

    /// The request with message `m` dropped.
    pub fn without(&self, m: MessageIndex) -> Vec<SymbolRef> {
        self.terms.iter().copied().filter(|t| t.message != m).collect()
    }

    pub(crate) fn terms_mut(&mut self) -> &mut Vec<SymbolRef> {
        &mut self.terms
    }

    /// Canonical ordering key: size, then message indices, then symbol indices.
    pub fn sort_key(&self) -> (usize, Vec<u16>, Vec<u32>) {
        (self.terms.len(), self.terms.iter().map(|t| t.message.0).collect(), self.terms.iter().map(|t| t.symbol).collect())
    }
}

/// A user-private PIR plan. `per_db[n]` lists the requests for database
/// `n + 1` in generation order (not the transmitted order).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PirPlan {
    pub desired: MessageIndex,
    pub per_db: Vec<Vec<SymbolRequest>>,
    /// Symbol permutation of each message, `perms[m - 1]`.
    pub perms: Vec<Permutation>,
}

/// Term of a plan skeleton: (position relative to the desired message, ordinal
/// of the fresh symbol drawn from that message).
type SkeletonTerm = (usize, usize);

/// Plan structure in relative message positions (0 = desired, then cyclic
/// order `desired + 1, .., K, 1, .., desired - 1`) and symbol ordinals.
pub(crate) fn skeleton(params: &SchemeParams) -> Vec<Vec<Vec<SkeletonTerm>>> {
    let (n_db, k_msg) = (params.n, params.k);
    let mut next = vec![0usize; k_msg];
    let mut per_db: Vec<Vec<Vec<SkeletonTerm>>> = vec![Vec::new(); n_db];
    // undesired-only sums created at the previous level, per database and subset
    let mut prev_level: Vec<BTreeMap<Vec<usize>, Vec<Vec<SkeletonTerm>>>> = vec![BTreeMap::new(); n_db];

    for level in 1..=k_msg {
        let mut this_level: Vec<BTreeMap<Vec<usize>, Vec<Vec<SkeletonTerm>>>> = vec![BTreeMap::new(); n_db];
        for db in 0..n_db {
            // desired-containing sums of size `level`
            if level == 1 {
                per_db[db].push(vec![(0, take(&mut next, 0))]);
            } else {
                for side_set in (1..k_msg).combinations(level - 1) {
                    for other in (0..n_db).filter(|&o| o != db) {
                        for side in prev_level[other].get(&side_set).into_iter().flatten() {
                            let mut terms = vec![(0, take(&mut next, 0))];
                            terms.extend(side.iter().copied());
                            per_db[db].push(terms);
                        }
                    }
                }
            }
            // undesired-only sums of size `level`
            if level < k_msg {
                for subset in (1..k_msg).combinations(level) {
                    for _ in 0..pow0(n_db - 1, level - 1) {
                        let terms: Vec<SkeletonTerm> = subset.iter().map(|&m| (m, take(&mut next, m))).collect();
                        this_level[db].entry(subset.clone()).or_default().push(terms.clone());
                        per_db[db].push(terms);
                    }
                }
            }
        }
        prev_level = this_level;
    }
    per_db
}

fn take(counters: &mut [usize], m: usize) -> usize {
    let v = counters[m];
    counters[m] += 1;
    v
}

/// Actual message index for a position relative to `desired`.
pub(crate) fn absolute_message(params: &SchemeParams, desired: MessageIndex, rel: usize) -> MessageIndex {
    MessageIndex(((desired.get() - 1 + rel) % params.k + 1) as u16)
}

/// Draws one uniform symbol permutation per message and builds the plan.
pub fn build_pir_plan<R: UniformSource + ?Sized>(params: &SchemeParams, desired: MessageIndex, rng: &mut R) -> PirPlan {
    let perms: Vec<Permutation> = params.messages().map(|_| sample_permutation(params.l, rng)).collect();
    build_pir_plan_with(params, desired, perms)
}

/// Builds the plan with the given symbol permutations: the `i`-th fresh symbol
/// of message `m` is `W_m[perms[m-1](i) + 1]`.
pub fn build_pir_plan_with(params: &SchemeParams, desired: MessageIndex, perms: Vec<Permutation>) -> PirPlan {
    assert_eq!(perms.len(), params.k, "one permutation per message");
    assert!(perms.iter().all(|p| p.len() == params.l), "permutations act on 0..L");
    let per_db = skeleton(params)
        .into_iter()
        .map(|reqs| {
            reqs.into_iter()
                .map(|terms| {
                    let refs = terms
                        .into_iter()
                        .map(|(rel, ordinal)| {
                            let message = absolute_message(params, desired, rel);
                            let symbol = perms[message.get() - 1].apply(ordinal) as u32 + 1;
                            SymbolRef { message, symbol }
                        })
                        .collect();
                    SymbolRequest::new(refs).expect("skeleton terms use distinct messages")
                })
                .collect()
        })
        .collect();
    PirPlan { desired, per_db, perms }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanRule {
    DatabaseCount,
    MalformedRequest,
    ShapeCount,
    IndexReuse,
    SideInformationMissing,
}

impl fmt::Display for PlanRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PlanRule::DatabaseCount => "database count",
            PlanRule::MalformedRequest => "malformed request",
            PlanRule::ShapeCount => "shape count",
            PlanRule::IndexReuse => "index reuse",
            PlanRule::SideInformationMissing => "side-information missing",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PlanViolation {
    pub rule: PlanRule,
    /// 1-based database, when the violation is local to one.
    pub db: Option<usize>,
    pub detail: String,
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.db {
            Some(db) => write!(f, "{} at DB{}: {}", self.rule, db, self.detail),
            None => write!(f, "{}: {}", self.rule, self.detail),
        }
    }
}

/// Structural audit. Empty iff the plan has the right shape counts, every
/// desired symbol is used once, every undesired symbol enters exactly one
/// undesired-only request and never twice at one database, and every desired
/// `k`-sum (`k >= 2`) has its undesired part downloaded alone elsewhere.
pub fn validate_pir_plan(plan: &PirPlan, params: &SchemeParams) -> Vec<PlanViolation> {
    let mut out = Vec::new();
    let desired = plan.desired;
    if plan.per_db.len() != params.n {
        out.push(PlanViolation {
            rule: PlanRule::DatabaseCount,
            db: None,
            detail: format!("{} request lists for {} databases", plan.per_db.len(), params.n),
        });
        return out;
    }

    let mut well_formed = true;
    for (db, reqs) in plan.per_db.iter().enumerate() {
        for (i, r) in reqs.iter().enumerate() {
            let bad = r.is_empty()
                || r.terms().windows(2).any(|w| w[0].message >= w[1].message)
                || r.terms().iter().any(|t| t.message.get() == 0 || t.message.get() > params.k || t.symbol == 0 || t.symbol as usize > params.l);
            if bad {
                well_formed = false;
                out.push(PlanViolation { rule: PlanRule::MalformedRequest, db: Some(db + 1), detail: format!("request {}", i + 1) });
            }
        }
    }
    if !well_formed {
        return out;
    }

    for (db, reqs) in plan.per_db.iter().enumerate() {
        let mut shapes: BTreeMap<Vec<u16>, usize> = BTreeMap::new();
        for r in reqs {
            *shapes.entry(r.terms().iter().map(|t| t.message.0).collect()).or_default() += 1;
        }
        for size in 1..=params.k {
            for subset in (1..=params.k as u16).combinations(size) {
                let want = pow0(params.n - 1, size - 1);
                let got = shapes.remove(&subset).unwrap_or(0);
                if got != want {
                    out.push(PlanViolation {
                        rule: PlanRule::ShapeCount,
                        db: Some(db + 1),
                        detail: format!("{} requests over messages {:?}, expected {}", got, subset, want),
                    });
                }
            }
        }
    }

    // occurrences of every symbol: (db, undesired-only?)
    let mut seen: BTreeMap<SymbolRef, Vec<(usize, bool)>> = BTreeMap::new();
    for (db, reqs) in plan.per_db.iter().enumerate() {
        for r in reqs {
            let undesired_only = !r.contains(desired);
            for &t in r.terms() {
                seen.entry(t).or_default().push((db, undesired_only));
            }
        }
    }
    for (sym, occ) in &seen {
        let reused = if sym.message == desired {
            occ.len() > 1
        } else {
            let dbs: Vec<usize> = occ.iter().map(|o| o.0).collect();
            occ.iter().filter(|o| o.1).count() > 1 || dbs.iter().duplicates().next().is_some()
        };
        if reused {
            out.push(PlanViolation {
                rule: PlanRule::IndexReuse,
                db: None,
                detail: format!("{}[{}] used {} times", sym.message, sym.symbol, occ.len()),
            });
        }
    }

    let mut alone: HashMap<Vec<SymbolRef>, Vec<usize>> = HashMap::new();
    for (db, reqs) in plan.per_db.iter().enumerate() {
        for r in reqs.iter().filter(|r| !r.contains(desired)) {
            alone.entry(r.terms().to_vec()).or_default().push(db);
        }
    }
    for (db, reqs) in plan.per_db.iter().enumerate() {
        for r in reqs.iter().filter(|r| r.len() >= 2 && r.contains(desired)) {
            let side = r.without(desired);
            let found = alone.get(&side).is_some_and(|dbs| dbs.iter().any(|&o| o != db));
            if !found {
                let t = r.term_for(desired).expect("contains desired");
                out.push(PlanViolation {
                    rule: PlanRule::SideInformationMissing,
                    db: Some(db + 1),
                    detail: format!("no companion for {}[{}]", t.message, t.symbol),
                });
            }
        }
    }
    out
}
