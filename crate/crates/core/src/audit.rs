//! Exact audits of reliability, user privacy, database privacy and CR
//! independence by exhaustive enumeration of small instances.
//!
//! The joint space is every desired index, every user CR index, every
//! scheme realization (CR relabeling and symbol permutations), every message
//! assignment and every server CR assignment, all uniform. Zero mutual
//! information is decided by an exact factorization test on integer counts;
//! nonzero values are reported symbolically.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use itertools::Itertools;
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::field::{Injections, Permutation, PrimeModulus, Rational};
use crate::pir::{MessageIndex, SchemeParams};
use crate::scheme::{encode_requests, variant_count, variants, CrIndex, Fault, QueryTemplate, SchemeError, SpirQuery};
use crate::sim::{answer_query, decode, MessageStore, ServerRandomness, UserRandomness};

/// Default cap on the number of joint outcomes an audit may enumerate.
pub const DEFAULT_BOUND: u64 = 10_000_000;
/// Environment variable overriding [`DEFAULT_BOUND`].
pub const BOUND_ENV: &str = "SPIR_ENUM_BOUND";

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("instance too large: {needed} outcomes to enumerate, bound is {bound} (raise with --bound or {BOUND_ENV})")]
    InstanceTooLarge { needed: u128, bound: u64 },
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error("joint table is empty")]
    EmptyTable,
    #[error("joint table: {0}")]
    Table(String),
    #[error("database {db} outside 1..={n}")]
    Database { db: usize, n: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuditConfig {
    pub bound: u64,
    pub fault: Option<Fault>,
}

impl AuditConfig {
    pub fn new(bound: u64) -> Self {
        AuditConfig { bound, fault: None }
    }

    /// [`DEFAULT_BOUND`], unless [`BOUND_ENV`] holds a number.
    pub fn from_env() -> Self {
        let bound = std::env::var(BOUND_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(DEFAULT_BOUND);
        AuditConfig::new(bound)
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    fn admit(&self, needed: u128) -> Result<(), AuditError> {
        if needed > self.bound as u128 {
            Err(AuditError::InstanceTooLarge { needed, bound: self.bound })
        } else {
            Ok(())
        }
    }
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig::from_env()
    }
}

/// Exact distribution over canonical query bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Distribution {
    pub mass: BTreeMap<Vec<u8>, Rational>,
    /// Scheme realizations enumerated to build it.
    pub realizations: u64,
}

impl Distribution {
    fn from_counts(counts: HashMap<Vec<u8>, u64>, realizations: u64) -> Self {
        let total: u64 = counts.values().sum();
        let mass = counts.into_iter().map(|(k, c)| (k, Rational::new(c as i128, total as i128))).collect();
        Distribution { mass, realizations }
    }

    pub fn total(&self) -> Rational {
        self.mass.values().copied().sum()
    }

    pub fn support(&self) -> usize {
        self.mass.len()
    }

    pub fn is_uniform(&self) -> bool {
        self.mass.values().all_equal()
    }

    /// First outcome where the two distributions differ, with both masses.
    pub fn first_difference(&self, other: &Distribution) -> Option<(Vec<u8>, Rational, Rational)> {
        let keys: std::collections::BTreeSet<&Vec<u8>> = self.mass.keys().chain(other.mass.keys()).collect();
        keys.into_iter().find_map(|k| {
            let a = self.mass.get(k).copied().unwrap_or_else(Rational::zero);
            let b = other.mass.get(k).copied().unwrap_or_else(Rational::zero);
            (a != b).then(|| (k.clone(), a, b))
        })
    }
}

impl Serialize for Distribution {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.mass.len()))?;
        for (k, v) in &self.mass {
            m.serialize_entry(&hex::encode(k), v)?;
        }
        m.end()
    }
}

/// A finite joint distribution over named axes, each outcome an integer.
#[derive(Clone, Debug, Default)]
pub struct JointTable {
    axes: Vec<String>,
    mass: BTreeMap<Vec<u64>, Rational>,
}

impl JointTable {
    pub fn new(axes: &[&str]) -> Self {
        JointTable { axes: axes.iter().map(|a| a.to_string()).collect(), mass: BTreeMap::new() }
    }

    pub fn axes(&self) -> &[String] {
        &self.axes
    }

    pub fn add(&mut self, outcome: Vec<u64>, p: Rational) -> Result<(), AuditError> {
        if outcome.len() != self.axes.len() {
            return Err(AuditError::Table(format!("outcome has {} coordinates, table has {} axes", outcome.len(), self.axes.len())));
        }
        if p.is_negative() {
            return Err(AuditError::Table(format!("negative mass {p}")));
        }
        let e = self.mass.entry(outcome).or_insert_with(Rational::zero);
        *e += p;
        Ok(())
    }

    pub fn total(&self) -> Rational {
        self.mass.values().copied().sum()
    }

    fn axis_positions(&self, names: &[&str]) -> Result<Vec<usize>, AuditError> {
        names
            .iter()
            .map(|n| self.axes.iter().position(|a| a == n).ok_or_else(|| AuditError::Table(format!("no axis {n:?}"))))
            .collect()
    }

    pub fn marginal(&self, names: &[&str]) -> Result<BTreeMap<Vec<u64>, Rational>, AuditError> {
        let pos = self.axis_positions(names)?;
        let mut out: BTreeMap<Vec<u64>, Rational> = BTreeMap::new();
        for (o, &p) in &self.mass {
            *out.entry(pos.iter().map(|&i| o[i]).collect()).or_insert_with(Rational::zero) += p;
        }
        Ok(out)
    }
}

/// `p * log_base(ratio)` for a ratio that is not a power of the base.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LogTerm {
    pub coef: Rational,
    pub ratio: Rational,
}

/// Exact mutual information in base-`q` units:
/// `rational + sum(coef * log_q(ratio))`, with a decimal rendering.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MutualInformation {
    pub base: u64,
    pub rational: Rational,
    pub logs: Vec<LogTerm>,
    pub approx: f64,
    /// The joint equals the product of its marginals, checked exactly.
    pub factorizes: bool,
}

impl MutualInformation {
    pub fn is_zero(&self) -> bool {
        self.factorizes
    }

    fn from_terms(base: u64, factorizes: bool, terms: impl IntoIterator<Item = (Rational, Rational)>) -> Self {
        let mut grouped: BTreeMap<Rational, Rational> = BTreeMap::new();
        for (coef, ratio) in terms {
            *grouped.entry(ratio).or_insert_with(Rational::zero) += coef;
        }
        let mut rational = Rational::zero();
        let mut logs = Vec::new();
        let mut approx = 0.0;
        for (ratio, coef) in grouped {
            approx += coef.to_f64() * ratio.to_f64().ln() / (base as f64).ln();
            match exact_log(ratio, base) {
                Some(e) => rational += coef * Rational::integer(e as i128),
                None => logs.push(LogTerm { coef, ratio }),
            }
        }
        MutualInformation { base, rational, logs, approx, factorizes }
    }
}

impl fmt::Display for MutualInformation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factorizes {
            return f.write_str("0");
        }
        let mut parts = vec![];
        if !self.rational.is_zero() || self.logs.is_empty() {
            parts.push(self.rational.to_string());
        }
        parts.extend(self.logs.iter().map(|t| format!("{}*log_{}({})", t.coef, self.base, t.ratio)));
        write!(f, "{} (~{:.6})", parts.join(" + "), self.approx)
    }
}

/// `e` with `ratio = base^e`, if any.
fn exact_log(ratio: Rational, base: u64) -> Option<i32> {
    let power = |mut v: i128| -> Option<i32> {
        let mut e = 0;
        while v > 1 {
            if v % base as i128 != 0 {
                return None;
            }
            v /= base as i128;
            e += 1;
        }
        (v == 1).then_some(e)
    };
    match (ratio.numer(), ratio.denom()) {
        (n, 1) => power(n),
        (1, d) => power(d).map(|e| -e),
        _ => None,
    }
}

/// `I(A; B)` for two disjoint groups of axes of `joint`, in base-`base` units.
pub fn mutual_information(joint: &JointTable, a: &[&str], b: &[&str], base: u64) -> Result<MutualInformation, AuditError> {
    if joint.mass.is_empty() {
        return Err(AuditError::EmptyTable);
    }
    if joint.total() != Rational::one() {
        return Err(AuditError::Table(format!("total mass {} is not 1", joint.total())));
    }
    let pa = joint.marginal(a)?;
    let pb = joint.marginal(b)?;
    let mut ab: BTreeMap<Vec<u64>, Rational> = BTreeMap::new();
    {
        let mut names: Vec<&str> = a.to_vec();
        names.extend_from_slice(b);
        for (k, v) in joint.marginal(&names)? {
            ab.insert(k, v);
        }
    }
    let mut factorizes = true;
    'outer: for (ka, &va) in &pa {
        for (kb, &vb) in &pb {
            let key: Vec<u64> = ka.iter().chain(kb).copied().collect();
            let vab = ab.get(&key).copied().unwrap_or_else(Rational::zero);
            if vab != va * vb {
                factorizes = false;
                break 'outer;
            }
        }
    }
    let split = a.len();
    let terms = ab.iter().filter(|(_, v)| !v.is_zero()).map(|(k, &v)| {
        let va = pa[&k[..split].to_vec()];
        let vb = pb[&k[split..].to_vec()];
        (v, v / (va * vb))
    });
    Ok(MutualInformation::from_terms(base, factorizes, terms))
}

/// A named sub-check inside a report. Only gating checks decide the verdict.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditCheck {
    pub name: String,
    pub pass: bool,
    pub gating: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub constraint: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<MutualInformation>,
    pub checks: Vec<AuditCheck>,
    /// Joint outcomes (or scheme realizations, for query-only checks) enumerated.
    pub enumerated: u64,
}

impl AuditReport {
    fn from_checks(constraint: &str, checks: Vec<AuditCheck>, witness: Option<String>, value: Option<MutualInformation>, enumerated: u64) -> Self {
        let pass = checks.iter().filter(|c| c.gating).all(|c| c.pass);
        AuditReport { constraint: constraint.to_string(), pass, witness: if pass { None } else { witness }, value, checks, enumerated }
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("{:<20} {}", self.constraint, if self.pass { "PASS" } else { "FAIL" });
        if let Some(v) = &self.value {
            out += &format!("  I = {v}");
        }
        out += &format!("  ({} outcomes)\n", self.enumerated);
        for c in &self.checks {
            let tag = match (c.pass, c.gating) {
                (true, _) => "ok",
                (false, true) => "FAIL",
                (false, false) => "info",
            };
            out += &format!("  [{tag}] {}: {}\n", c.name, c.detail);
        }
        if let Some(w) = &self.witness {
            out += &format!("  witness: {w}\n");
        }
        out
    }
}

// --- enumeration ---------------------------------------------------------

/// A request compiled to flat indices: message symbol columns `(m-1)*L + (s-1)`
/// and a 0-based CR index.
#[derive(Clone, Debug)]
struct Compiled {
    cols: Vec<usize>,
    cr: Option<usize>,
}

#[derive(Clone, Debug)]
struct Realization {
    /// 0-based user CR index.
    r: usize,
    query: SpirQuery,
    compiled: Vec<Vec<Compiled>>,
}

impl Realization {
    fn eval(&self, db: usize, w: &[u64], s: &[u64], q: u64, out: &mut Vec<u64>) {
        for c in &self.compiled[db] {
            let mut acc: u64 = c.cols.iter().map(|&i| w[i]).sum();
            if let Some(j) = c.cr {
                acc += s[j];
            }
            out.push(acc % q);
        }
    }
}

/// Realizations for one desired index and the given user CR indices.
fn realization_count(params: &SchemeParams, template: &QueryTemplate, user_indices: usize) -> u128 {
    let inj: u128 = template.symbols_used().iter().map(|&u| Injections::count(params.l, u)).product();
    variant_count(params).unwrap_or(u128::MAX).saturating_mul(inj).saturating_mul(user_indices as u128)
}

fn enumerate(params: &SchemeParams, template: &QueryTemplate, users: &[usize]) -> Vec<Realization> {
    let used = template.symbols_used();
    let l = params.l;
    let vars: Vec<Permutation> = variants(params).collect();
    let mut out = Vec::new();
    for &r in users {
        for v in &vars {
            for perms in used.iter().map(|&u| Injections::new(l, u)).multi_cartesian_product() {
                let query = template.realize(&perms, v, CrIndex(r as u32 + 1));
                let compiled = query
                    .per_db
                    .iter()
                    .map(|reqs| {
                        reqs.iter()
                            .map(|req| Compiled {
                                cols: req.base.terms().iter().map(|t| (t.message.get() - 1) * l + t.symbol as usize - 1).collect(),
                                cr: req.cr.map(|c| c.get() - 1),
                            })
                            .collect()
                    })
                    .collect();
                out.push(Realization { r, query, compiled });
            }
        }
    }
    out
}

/// All vectors over `0..q` of length `len`, flattened; entry `i` is the base-`q`
/// expansion of `i`, least significant digit first.
fn digit_table(q: u64, len: usize) -> Vec<u64> {
    let count = (q as usize).pow(len as u32);
    let mut out = Vec::with_capacity(count * len);
    for i in 0..count {
        let mut v = i as u64;
        for _ in 0..len {
            out.push(v % q);
            v /= q;
        }
    }
    out
}

fn pack(digits: &[u64], q: u64) -> u128 {
    digits.iter().rev().fold(0u128, |acc, &d| acc * q as u128 + d as u128)
}

/// Largest number of base-`q` digits that [`pack`] can hold.
fn pack_capacity(q: u64) -> usize {
    let mut n = 0;
    let mut v: u128 = 1;
    while let Some(next) = v.checked_mul(q as u128) {
        v = next;
        n += 1;
    }
    n
}

struct Space {
    params: SchemeParams,
    q: u64,
    kl: usize,
    w_digits: Vec<u64>,
    s_digits: Vec<u64>,
    w_count: usize,
    s_count: usize,
}

impl Space {
    fn new(params: &SchemeParams) -> Self {
        let q = params.q.value();
        let kl = params.k * params.l;
        let w_digits = digit_table(q, kl);
        let s_digits = digit_table(q, params.rs_size);
        Space { params: *params, q, kl, w_count: w_digits.len() / kl, s_count: s_digits.len() / params.rs_size, w_digits, s_digits }
    }

    fn w(&self, i: usize) -> &[u64] {
        &self.w_digits[i * self.kl..(i + 1) * self.kl]
    }

    fn s(&self, i: usize) -> &[u64] {
        let rs = self.params.rs_size;
        &self.s_digits[i * rs..(i + 1) * rs]
    }
}

fn joint_size(params: &SchemeParams, realizations: u128) -> u128 {
    let q = params.q.value() as u128;
    let exp = (params.k * params.l + params.rs_size) as u32;
    q.checked_pow(exp).map_or(u128::MAX, |v| v.saturating_mul(realizations))
}

fn templates(params: &SchemeParams, fault: Option<Fault>) -> Result<Vec<QueryTemplate>, AuditError> {
    params.messages().map(|m| QueryTemplate::new(params, m, fault).map_err(AuditError::from)).collect()
}

fn check_db(params: &SchemeParams, db: usize) -> Result<(), AuditError> {
    if db == 0 || db > params.n {
        Err(AuditError::Database { db, n: params.n })
    } else {
        Ok(())
    }
}

/// Exact distribution of the canonical query bytes database `db` (1-based)
/// receives. With `user_cr = None` the user's CR index is marginalized uniformly.
pub fn query_distribution(
    params: &SchemeParams,
    db: usize,
    desired: MessageIndex,
    user_cr: Option<CrIndex>,
    config: &AuditConfig,
) -> Result<Distribution, AuditError> {
    check_db(params, db)?;
    let template = QueryTemplate::new(params, desired, config.fault)?;
    let users: Vec<usize> = match user_cr {
        Some(c) => vec![CrIndex::new(c.0, params.rs_size)?.get() - 1],
        None => (0..params.rs_size).collect(),
    };
    config.admit(realization_count(params, &template, users.len()))?;
    let reals = enumerate(params, &template, &users);
    Ok(distribution_of(&reals, db - 1))
}

fn distribution_of<'a>(reals: impl IntoIterator<Item = &'a Realization>, db: usize) -> Distribution {
    let mut counts: HashMap<Vec<u8>, u64> = HashMap::new();
    let mut n = 0;
    for r in reals {
        *counts.entry(encode_requests(&r.query.per_db[db])).or_default() += 1;
        n += 1;
    }
    Distribution::from_counts(counts, n)
}

/// Every database's query distribution must not depend on the desired index.
///
/// Gating: the distributions with the user's CR index marginalized are
/// identical across desired indices, and, when the joint fits the bound, so
/// are the distributions of (query, answer) given every (messages, server CR).
/// Informational: for each fixed user CR index there is some CR index under
/// every other desired index giving the same distribution.
pub fn user_privacy_audit(params: &SchemeParams, config: &AuditConfig) -> Result<AuditReport, AuditError> {
    let temps = templates(params, config.fault)?;
    let per_k = realization_count(params, &temps[0], params.rs_size);
    config.admit(per_k.saturating_mul(params.k as u128))?;
    let all_users: Vec<usize> = (0..params.rs_size).collect();
    let reals: Vec<Vec<Realization>> = temps.iter().map(|t| enumerate(params, t, &all_users)).collect();
    let mut checks = Vec::new();
    let mut witness = None;

    // marginal form
    let mut marginal_ok = true;
    for db in 0..params.n {
        let dists: Vec<Distribution> = reals.iter().map(|rs| distribution_of(rs, db)).collect();
        for (k, d) in dists.iter().enumerate().skip(1) {
            if let Some((q, a, b)) = dists[0].first_difference(d) {
                marginal_ok = false;
                witness.get_or_insert_with(|| {
                    format!("DB{}: query {} has probability {a} when W1 is desired but {b} when W{} is desired", db + 1, hex::encode(q), k + 1)
                });
            }
        }
    }
    checks.push(AuditCheck {
        name: "marginal".into(),
        pass: marginal_ok,
        gating: true,
        detail: format!("query distributions with R_U marginalized, {} databases x {} desired indices", params.n, params.k),
    });

    // seed-matched form
    let mut matched_ok = true;
    let mut matched_detail = "every (desired, R_U) has a matching R_U' under every other desired index".to_string();
    'db: for db in 0..params.n {
        let fixed: Vec<Vec<Distribution>> = reals
            .iter()
            .map(|rs| (0..params.rs_size).map(|r| distribution_of(rs.iter().filter(|x| x.r == r), db)).collect())
            .collect();
        for (k, row) in fixed.iter().enumerate() {
            for (r, d) in row.iter().enumerate() {
                for (k2, row2) in fixed.iter().enumerate() {
                    if k2 != k && !row2.iter().any(|d2| d2.mass == d.mass) {
                        matched_ok = false;
                        matched_detail = format!(
                            "DB{}: no R_U' makes the query distribution for W{} match that of (W{}, S{}); the marginal form is the one required",
                            db + 1,
                            k2 + 1,
                            k + 1,
                            r + 1
                        );
                        break 'db;
                    }
                }
            }
        }
    }
    checks.push(AuditCheck { name: "seed-matched".into(), pass: matched_ok, gating: false, detail: matched_detail });

    // answer-inclusive form
    let joint = joint_size(params, per_k.saturating_mul(params.k as u128));
    let mut enumerated = per_k as u64 * params.k as u64;
    if joint <= config.bound as u128 && params.k * params.l + params.rs_size <= pack_capacity(params.q.value()) {
        let (ok, w) = answer_inclusive(params, &reals);
        enumerated = joint as u64;
        if let Some(w) = w {
            witness.get_or_insert(w);
        }
        checks.push(AuditCheck {
            name: "answer-inclusive".into(),
            pass: ok,
            gating: true,
            detail: format!("(query, answer) distributions given every (messages, server CR), {joint} outcomes"),
        });
    } else {
        checks.push(AuditCheck {
            name: "answer-inclusive".into(),
            pass: true,
            gating: false,
            detail: format!("skipped: {joint} outcomes exceed the bound {}", config.bound),
        });
    }
    Ok(AuditReport::from_checks("user-privacy", checks, witness, None, enumerated))
}

fn answer_inclusive(params: &SchemeParams, reals: &[Vec<Realization>]) -> (bool, Option<String>) {
    let space = Space::new(params);
    let q = space.q;
    // intern query bytes per database
    let mut ids: Vec<HashMap<Vec<u8>, u32>> = vec![HashMap::new(); params.n];
    let qids: Vec<Vec<Vec<u32>>> = reals
        .iter()
        .map(|rs| {
            rs.iter()
                .map(|r| {
                    (0..params.n)
                        .map(|db| {
                            let next = ids[db].len() as u32;
                            *ids[db].entry(encode_requests(&r.query.per_db[db])).or_insert(next)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let totals: Vec<u128> = reals.iter().map(|rs| rs.len() as u128).collect();

    let shards: Vec<(usize, usize)> = (0..space.w_count).flat_map(|w| (0..space.s_count).map(move |s| (w, s))).collect();
    let failures: Vec<Option<String>> = shards
        .par_iter()
        .map(|&(wi, si)| {
            let (w, s) = (space.w(wi), space.s(si));
            let mut buf = Vec::new();
            for db in 0..params.n {
                let hists: Vec<HashMap<(u32, u128), u64>> = reals
                    .iter()
                    .zip(&qids)
                    .map(|(rs, ids)| {
                        let mut h = HashMap::new();
                        for (r, id) in rs.iter().zip(ids) {
                            buf.clear();
                            r.eval(db, w, s, q, &mut buf);
                            *h.entry((id[db], pack(&buf, q))).or_default() += 1;
                        }
                        h
                    })
                    .collect();
                for k in 1..hists.len() {
                    let differs = hists[0].len() != hists[k].len()
                        || hists[0].iter().any(|(key, &c)| hists[k].get(key).is_none_or(|&c2| c as u128 * totals[k] != c2 as u128 * totals[0]));
                    if differs {
                        return Some(format!(
                            "DB{}: with messages #{wi} and server CR #{si}, (query, answer) frequencies differ between W1 and W{}",
                            db + 1,
                            k + 1
                        ));
                    }
                }
            }
            None
        })
        .collect();
    match failures.into_iter().flatten().next() {
        Some(w) => (false, Some(w)),
        None => (true, None),
    }
}

/// Integer-count independence test between a secret `A` and the user's view `B`.
struct Independence {
    mi: MutualInformation,
    witness: Option<String>,
    outcomes: u64,
}

/// `a_of(r, w, s)` packs the secret; `b_extra(r, w, s, buf)` appends to the
/// answers whatever else the user sees. The realization itself is part of
/// the view, so each realization is a shard of its own.
fn independence<A, B>(params: &SchemeParams, reals: &[Realization], a_of: A, b_extra: B, extra_digits: usize) -> Result<Independence, AuditError>
where
    A: Fn(usize, &[u64], &[u64]) -> u64 + Sync,
    B: Fn(usize, &[u64], &[u64], &mut Vec<u64>) + Sync,
{
    let space = Space::new(params);
    let q = space.q;
    if params.total_requests() + extra_digits > pack_capacity(q) {
        return Err(AuditError::Table("user view too wide to pack".into()));
    }
    let mut per_r = vec![0u64; params.rs_size];
    for r in reals {
        per_r[r.r] += 1;
    }
    // c_a over the whole joint
    let mut c_a: BTreeMap<u64, u64> = BTreeMap::new();
    for (r, &weight) in per_r.iter().enumerate().filter(|(_, &w)| w > 0) {
        for wi in 0..space.w_count {
            for si in 0..space.s_count {
                *c_a.entry(a_of(r, space.w(wi), space.s(si))).or_default() += weight;
            }
        }
    }
    let total = (reals.len() * space.w_count * space.s_count) as u128;

    struct Shard {
        triples: HashMap<(u64, u64, u64), u64>,
        violation: Option<String>,
    }
    let shards: Vec<Shard> = reals
        .par_iter()
        .enumerate()
        .map(|(idx, real)| {
            let mut joint: HashMap<u128, HashMap<u64, u64>> = HashMap::new();
            let mut buf = Vec::with_capacity(params.total_requests() + extra_digits);
            for wi in 0..space.w_count {
                let w = space.w(wi);
                for si in 0..space.s_count {
                    let s = space.s(si);
                    buf.clear();
                    for db in 0..params.n {
                        real.eval(db, w, s, q, &mut buf);
                    }
                    b_extra(real.r, w, s, &mut buf);
                    *joint.entry(pack(&buf, q)).or_default().entry(a_of(real.r, w, s)).or_default() += 1;
                }
            }
            let mut triples: HashMap<(u64, u64, u64), u64> = HashMap::new();
            let mut violation = None;
            let mut views: Vec<_> = joint.into_iter().collect();
            views.sort_unstable_by_key(|(b, _)| *b);
            for (b, row) in views {
                let cb: u64 = row.values().sum();
                for (&a, &ca) in &c_a {
                    let cab = row.get(&a).copied().unwrap_or(0);
                    if violation.is_none() && cab as u128 * total != ca as u128 * cb as u128 {
                        violation = Some(format!(
                            "realization #{idx} (R_U = S{}), view #{b:x}, secret #{a:x}: count {cab} but product of marginals gives {}/{}",
                            real.r + 1,
                            ca as u128 * cb as u128,
                            total
                        ));
                    }
                    if cab > 0 {
                        *triples.entry((cab, ca, cb)).or_default() += 1;
                    }
                }
            }
            Shard { triples, violation }
        })
        .collect();

    let mut merged: BTreeMap<(u64, u64, u64), u64> = BTreeMap::new();
    let mut witness = None;
    for s in shards {
        for (k, v) in s.triples {
            *merged.entry(k).or_default() += v;
        }
        if witness.is_none() {
            witness = s.violation;
        }
    }
    let t = total as i128;
    let terms = merged.into_iter().map(|((cab, ca, cb), mult)| {
        (Rational::new(mult as i128 * cab as i128, t), Rational::new(cab as i128 * t, ca as i128 * cb as i128))
    });
    let mi = MutualInformation::from_terms(q, witness.is_none(), terms);
    Ok(Independence { mi, witness, outcomes: total as u64 })
}

fn full_joint(params: &SchemeParams, config: &AuditConfig) -> Result<Vec<Vec<Realization>>, AuditError> {
    let temps = templates(params, config.fault)?;
    let per_k: u128 = temps.iter().map(|t| realization_count(params, t, params.rs_size)).sum();
    config.admit(joint_size(params, per_k))?;
    let users: Vec<usize> = (0..params.rs_size).collect();
    Ok(temps.iter().map(|t| enumerate(params, t, &users)).collect())
}

fn mi_report(constraint: &str, per_desired: Vec<Independence>) -> AuditReport {
    let mut checks = Vec::new();
    let mut witness = None;
    let mut value: Option<MutualInformation> = None;
    let mut enumerated = 0;
    for (k, ind) in per_desired.into_iter().enumerate() {
        enumerated += ind.outcomes;
        checks.push(AuditCheck { name: format!("W{}", k + 1), pass: ind.mi.is_zero(), gating: true, detail: format!("I = {}", ind.mi) });
        if witness.is_none() {
            witness = ind.witness.map(|w| format!("W{} desired: {w}", k + 1));
        }
        let replace = match &value {
            None => true,
            Some(v) => v.is_zero() && !ind.mi.is_zero(),
        };
        if replace {
            value = Some(ind.mi);
        }
    }
    AuditReport::from_checks(constraint, checks, witness, value, enumerated)
}

/// `I(W_undesired; realization, answers, R_U) = 0` for every desired index.
pub fn database_privacy_audit(params: &SchemeParams, config: &AuditConfig) -> Result<AuditReport, AuditError> {
    let reals = full_joint(params, config)?;
    let l = params.l;
    let q = params.q.value();
    let mut out = Vec::new();
    for (k, rs) in reals.iter().enumerate() {
        let a_of = |_r: usize, w: &[u64], _s: &[u64]| -> u64 {
            let undesired: Vec<u64> = w.iter().enumerate().filter(|(i, _)| i / l != k).map(|(_, &v)| v).collect();
            pack(&undesired, q) as u64
        };
        let b_extra = |r: usize, _w: &[u64], s: &[u64], buf: &mut Vec<u64>| buf.push(s[r]);
        out.push(independence(params, rs, a_of, b_extra, 1)?);
    }
    Ok(mi_report("database-privacy", out))
}

/// `I(R_S without R_U; realization, answers, W_desired, R_U) = 0` for every
/// desired index. The secret is the values of the CR symbols other than the
/// user's, in index order.
pub fn cr_difference_audit(params: &SchemeParams, config: &AuditConfig) -> Result<AuditReport, AuditError> {
    let reals = full_joint(params, config)?;
    let l = params.l;
    let q = params.q.value();
    let mut out = Vec::new();
    for (k, rs) in reals.iter().enumerate() {
        let a_of = |r: usize, _w: &[u64], s: &[u64]| -> u64 {
            let rest: Vec<u64> = s.iter().enumerate().filter(|(i, _)| *i != r).map(|(_, &v)| v).collect();
            pack(&rest, q) as u64
        };
        let b_extra = |r: usize, w: &[u64], s: &[u64], buf: &mut Vec<u64>| {
            buf.extend_from_slice(&w[k * l..(k + 1) * l]);
            buf.push(s[r]);
        };
        out.push(independence(params, rs, a_of, b_extra, l + 1)?);
    }
    Ok(mi_report("cr-independence", out))
}

/// Decodes every point of the joint space and compares with the stored message.
pub fn reliability_audit(params: &SchemeParams, config: &AuditConfig) -> Result<AuditReport, AuditError> {
    let reals = full_joint(params, config)?;
    let space = Space::new(params);
    let pm: PrimeModulus = params.q;
    let stores: Vec<MessageStore> = (0..space.w_count)
        .map(|wi| MessageStore { q: pm, messages: space.w(wi).chunks(params.l).map(|c| c.iter().map(|&v| pm.element(v)).collect()).collect() })
        .collect();
    let servers: Vec<ServerRandomness> =
        (0..space.s_count).map(|si| ServerRandomness(space.s(si).iter().map(|&v| pm.element(v)).collect())).collect();

    let mut checks = Vec::new();
    let mut witness = None;
    let mut enumerated = 0u64;
    for (k, rs) in reals.iter().enumerate() {
        let desired = MessageIndex(k as u16 + 1);
        let results: Vec<(u64, Option<String>)> = rs
            .par_iter()
            .enumerate()
            .map(|(idx, real)| {
                let mut failures = 0u64;
                let mut first = None;
                for (wi, store) in stores.iter().enumerate() {
                    for (si, server) in servers.iter().enumerate() {
                        let user = UserRandomness { index: CrIndex(real.r as u32 + 1), value: server.0[real.r] };
                        let outcome = real
                            .query
                            .per_db
                            .iter()
                            .map(|reqs| answer_query(store, server, reqs))
                            .collect::<Result<Vec<_>, _>>()
                            .map_err(|e| e.to_string())
                            .and_then(|answers| decode(params, &real.query, &answers, desired, &user).map_err(|e| e.to_string()))
                            .and_then(|got| if got == store.message(desired) { Ok(()) } else { Err("decoded symbols differ".to_string()) });
                        if let Err(e) = outcome {
                            failures += 1;
                            first.get_or_insert_with(|| format!("realization #{idx} (R_U = S{}), messages #{wi}, server CR #{si}: {e}", real.r + 1));
                        }
                    }
                }
                (failures, first)
            })
            .collect();
        let failures: u64 = results.iter().map(|r| r.0).sum();
        let points = (rs.len() * space.w_count * space.s_count) as u64;
        enumerated += points;
        if witness.is_none() {
            witness = results.into_iter().find_map(|r| r.1).map(|w| format!("{desired} desired: {w}"));
        }
        checks.push(AuditCheck {
            name: desired.to_string(),
            pass: failures == 0,
            gating: true,
            detail: format!("{failures} decode failures in {points} outcomes"),
        });
    }
    Ok(AuditReport::from_checks("reliability", checks, witness, None, enumerated))
}

/// The four audits in a fixed order.
pub fn run_all(params: &SchemeParams, config: &AuditConfig) -> Vec<(&'static str, Result<AuditReport, AuditError>)> {
    vec![
        ("reliability", reliability_audit(params, config)),
        ("user-privacy", user_privacy_audit(params, config)),
        ("database-privacy", database_privacy_audit(params, config)),
        ("cr-independence", cr_difference_audit(params, config)),
    ]
}
