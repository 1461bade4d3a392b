//! Turning a PIR plan into a symmetric scheme with server- and user-side
//! common randomness (CR).
//!
//! A plan is masked into a *query cell*: every desired 1-sum carries the
//! seed CR, every undesired-only sum a fresh CR, and every desired `k`-sum
//! the CR of its companion `(k-1)`-sum. The non-seed labels are then
//! relabeled by a random permutation, and the cell is cycled so that its seed
//! equals the one CR index the user holds.

mod exposure;
mod table;

pub use exposure::{exposure, Exposure};
pub use table::{build_query_table, QueryTable, TableBlock, TableColumn, TableError};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{sample_permutation, Permutation, Permutations, Rational, UniformSource};
use crate::pir::{build_pir_plan, MessageIndex, PirPlan, SchemeParams, SymbolRef, SymbolRequest};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemeError {
    #[error("DB{db}: no companion sum for request {request} (invalid plan)")]
    CompanionNotFound { db: usize, request: usize },
    #[error("cell uses {got} fresh CR symbols, expected {expected}")]
    RandomnessCount { expected: usize, got: usize },
    #[error("permutation moves the seed index S{0}")]
    SeedMoved(u32),
    #[error("permutation acts on {got} indices, expected {expected}")]
    PermutationSize { expected: usize, got: usize },
    #[error("CR index {index} outside 1..={rs_size}")]
    CrOutOfRange { index: u32, rs_size: usize },
    #[error("fault {0} has no target in this scheme")]
    FaultNotApplicable(Fault),
    #[error("cells disagree on seed or variant")]
    CellMismatch,
}

/// 1-based index into the server-side CR symbols `S_1..S_{rs_size}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CrIndex(pub u32);

impl CrIndex {
    pub fn new(index: u32, rs_size: usize) -> Result<Self, SchemeError> {
        if index >= 1 && index as usize <= rs_size {
            Ok(CrIndex(index))
        } else {
            Err(SchemeError::CrOutOfRange { index, rs_size })
        }
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }

    /// Adds `by` modulo `rs_size`, staying 1-based.
    pub fn shifted(self, by: usize, rs_size: usize) -> CrIndex {
        CrIndex(((self.get() - 1 + by) % rs_size + 1) as u32)
    }
}

impl fmt::Display for CrIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.0)
    }
}

/// One downloaded symbol: a sum of message symbols plus, normally, one CR mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpirRequest {
    pub base: SymbolRequest,
    pub cr: Option<CrIndex>,
}

impl SpirRequest {
    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    fn key(&self) -> ((usize, Vec<u16>, Vec<u32>), u32) {
        (self.base.sort_key(), self.cr.map_or(0, |c| c.0))
    }

    /// Renders as `W1[3]+W2[2]+S3`, listing `lead` first when present.
    /// With `L = 1` the symbol subscripts are dropped.
    pub fn render(&self, lead: Option<MessageIndex>, l: usize) -> String {
        let mut terms: Vec<SymbolRef> = self.base.terms().to_vec();
        if let Some(m) = lead {
            terms.sort_by_key(|t| t.message != m);
        }
        let mut parts: Vec<String> = terms
            .iter()
            .map(|t| if l == 1 { format!("{}", t.message) } else { format!("{}[{}]", t.message, t.symbol) })
            .collect();
        if let Some(c) = self.cr {
            parts.push(c.to_string());
        }
        parts.join("+")
    }
}

impl PartialOrd for SpirRequest {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SpirRequest {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

/// A masked query table built around one seed CR index. `per_choice` holds,
/// for each desired message covered, the request list of every database in
/// generation order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QueryCell {
    pub seed: CrIndex,
    pub rs_size: usize,
    /// Relabeling of CR indices applied since assignment, as a permutation of `0..rs_size`.
    pub variant: Permutation,
    pub per_choice: BTreeMap<MessageIndex, Vec<Vec<SpirRequest>>>,
}

impl QueryCell {
    fn map_cr(&self, seed: CrIndex, variant: Permutation, f: impl Fn(CrIndex) -> CrIndex) -> QueryCell {
        let per_choice = self
            .per_choice
            .iter()
            .map(|(&m, dbs)| {
                let dbs = dbs
                    .iter()
                    .map(|reqs| reqs.iter().map(|r| SpirRequest { base: r.base.clone(), cr: r.cr.map(&f) }).collect())
                    .collect();
                (m, dbs)
            })
            .collect();
        QueryCell { seed, rs_size: self.rs_size, variant, per_choice }
    }

    /// Every CR index shifted by `by` (mod `rs_size`).
    pub fn shifted(&self, by: usize) -> QueryCell {
        let rs = self.rs_size;
        self.map_cr(self.seed.shifted(by, rs), self.variant.clone(), |c| c.shifted(by, rs))
    }

    /// Merges the desired-message columns of two cells with the same seed and variant.
    pub fn merge(&mut self, other: QueryCell) -> Result<(), SchemeError> {
        if self.seed != other.seed || self.variant != other.variant || self.rs_size != other.rs_size {
            return Err(SchemeError::CellMismatch);
        }
        self.per_choice.extend(other.per_choice);
        Ok(())
    }

    /// Canonically ordered query for one desired message.
    pub fn emit(&self, desired: MessageIndex) -> Option<SpirQuery> {
        let per_db = self.per_choice.get(&desired)?;
        Some(SpirQuery::canonical(per_db.clone()))
    }
}

/// The `rs_size` cycled copies of one cell; cell `j` has seed `S_j` when the
/// first has seed `S_1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QueryCellFamily {
    pub cells: Vec<QueryCell>,
}

impl QueryCellFamily {
    pub fn seed_cell(&self, seed: CrIndex) -> Option<&QueryCell> {
        self.cells.iter().find(|c| c.seed == seed)
    }

    /// Each cell shifted once more; `rs_size` applications return the original family.
    pub fn cycled(&self) -> QueryCellFamily {
        QueryCellFamily { cells: self.cells.iter().map(|c| c.shifted(1)).collect() }
    }
}

/// Normalized download cost and CR amounts, in symbols per message symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateTriple {
    pub d: Rational,
    pub rho_s: Rational,
    pub rho_u: Rational,
}

impl RateTriple {
    pub fn new(d: Rational, rho_s: Rational, rho_u: Rational) -> Self {
        RateTriple { d, rho_s, rho_u }
    }
}

impl fmt::Display for RateTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(d, rho_S, rho_U) = ({}, {}, {})", self.d, self.rho_s, self.rho_u)
    }
}

/// What a user transmits: one canonically sorted request list per database.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct SpirQuery {
    pub per_db: Vec<Vec<SpirRequest>>,
}

impl SpirQuery {
    pub fn canonical(mut per_db: Vec<Vec<SpirRequest>>) -> Self {
        for reqs in per_db.iter_mut() {
            reqs.sort();
        }
        SpirQuery { per_db }
    }

    pub fn total_requests(&self) -> usize {
        self.per_db.iter().map(Vec::len).sum()
    }

    /// The plan underneath, CR stripped, in transmitted order.
    pub fn stripped(&self, desired: MessageIndex, perms: Vec<Permutation>) -> PirPlan {
        PirPlan {
            desired,
            per_db: self.per_db.iter().map(|reqs| reqs.iter().map(|r| r.base.clone()).collect()).collect(),
            perms,
        }
    }
}

/// Deliberate scheme defects, used to show that each audit notices a broken scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// First undesired 1-sum at DB1 is masked with the seed CR.
    SeedReuse,
    /// First undesired 1-sum at DB1 is sent with no mask.
    UnmaskedUndesired,
    /// First desired `k`-sum (`k >= 2`) at DB1 is sent with no mask.
    UnmaskedCompanion,
}

impl Fault {
    pub const ALL: [Fault; 3] = [Fault::SeedReuse, Fault::UnmaskedUndesired, Fault::UnmaskedCompanion];

    pub fn name(self) -> &'static str {
        match self {
            Fault::SeedReuse => "seed-reuse",
            Fault::UnmaskedUndesired => "unmasked-undesired",
            Fault::UnmaskedCompanion => "unmasked-companion",
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Fault::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| {
            format!("unknown fault {s:?}; expected one of {}", Fault::ALL.map(Fault::name).join(", "))
        })
    }
}

/// Masks a plan with CR indices; the seed is `S_1` and fresh indices are
/// handed out level by level, database by database, in plan order.
pub fn assign_common_randomness(plan: &PirPlan, params: &SchemeParams) -> Result<QueryCell, SchemeError> {
    let desired = plan.desired;
    let seed = CrIndex(1);
    let mut next = 2u32;
    let mut masked: Vec<Vec<Option<SpirRequest>>> = plan.per_db.iter().map(|r| vec![None; r.len()]).collect();
    // undesired-only sums already masked: terms -> (db, CR)
    let mut alone: HashMap<Vec<SymbolRef>, Vec<(usize, CrIndex)>> = HashMap::new();
    let max_len = plan.per_db.iter().flatten().map(SymbolRequest::len).max().unwrap_or(0);

    for level in 1..=max_len {
        for (db, reqs) in plan.per_db.iter().enumerate() {
            for (i, r) in reqs.iter().enumerate().filter(|(_, r)| r.len() == level) {
                let cr = if r.contains(desired) {
                    if level == 1 {
                        seed
                    } else {
                        let side = r.without(desired);
                        alone
                            .get(&side)
                            .and_then(|v| v.iter().find(|(o, _)| *o != db))
                            .map(|&(_, c)| c)
                            .ok_or(SchemeError::CompanionNotFound { db: db + 1, request: i + 1 })?
                    }
                } else {
                    let c = CrIndex(next);
                    next += 1;
                    alone.entry(r.terms().to_vec()).or_default().push((db, c));
                    c
                };
                masked[db][i] = Some(SpirRequest { base: r.clone(), cr: Some(cr) });
            }
        }
    }
    let used = next as usize - 1;
    if used != params.rs_size {
        return Err(SchemeError::RandomnessCount { expected: params.rs_size, got: used });
    }
    let per_db = masked.into_iter().map(|reqs| reqs.into_iter().map(|r| r.expect("every request masked")).collect()).collect();
    Ok(QueryCell {
        seed,
        rs_size: params.rs_size,
        variant: Permutation::identity(params.rs_size),
        per_choice: BTreeMap::from([(desired, per_db)]),
    })
}

/// Relabels the non-seed CR indices of a cell by `perm` (acting on `0..rs_size`).
pub fn permute_nonseed(cell: &QueryCell, perm: &Permutation) -> Result<QueryCell, SchemeError> {
    if perm.len() != cell.rs_size {
        return Err(SchemeError::PermutationSize { expected: cell.rs_size, got: perm.len() });
    }
    let s = cell.seed.get() - 1;
    if perm.apply(s) != s {
        return Err(SchemeError::SeedMoved(cell.seed.0));
    }
    let variant = perm.compose(&cell.variant).expect("sizes checked");
    Ok(cell.map_cr(cell.seed, variant, |c| CrIndex(perm.apply(c.get() - 1) as u32 + 1)))
}

pub fn cycle_cells(cell: &QueryCell, params: &SchemeParams) -> QueryCellFamily {
    QueryCellFamily { cells: (0..params.rs_size).map(|j| cell.shifted(j)).collect() }
}

/// Lifts a permutation of `0..rs_size-1` to one of `0..rs_size` fixing 0.
fn lift_nonseed(p: &Permutation) -> Permutation {
    let mut images = vec![0];
    images.extend(p.images().iter().map(|&v| v + 1));
    Permutation::from_images(images).expect("lift of a bijection")
}

/// Number of CR relabelings a cell is drawn from: one for a single database
/// (cycling alone hides the desired index), `(rs_size - 1)!` otherwise.
pub fn variant_count(params: &SchemeParams) -> Option<u128> {
    if params.n == 1 {
        return Some(1);
    }
    (1..params.rs_size as u128).try_fold(1u128, |acc, v| acc.checked_mul(v))
}

/// All CR relabelings fixing `S_1`, in lexicographic order.
pub fn variants(params: &SchemeParams) -> Box<dyn Iterator<Item = Permutation>> {
    if params.n == 1 {
        Box::new(std::iter::once(Permutation::identity(params.rs_size)))
    } else {
        let it: Permutations = Permutation::all(params.rs_size - 1);
        Box::new(it.map(|p| lift_nonseed(&p)))
    }
}

pub fn sample_variant<R: UniformSource + ?Sized>(params: &SchemeParams, rng: &mut R) -> Permutation {
    if params.n == 1 {
        Permutation::identity(params.rs_size)
    } else {
        lift_nonseed(&sample_permutation(params.rs_size - 1, rng))
    }
}

/// Applies a fault to the cell's first desired column, in generation order.
pub fn apply_fault(cell: &mut QueryCell, fault: Fault) -> Result<(), SchemeError> {
    let seed = cell.seed;
    for (&desired, dbs) in cell.per_choice.iter_mut() {
        let db1 = &mut dbs[0];
        let target = match fault {
            Fault::SeedReuse | Fault::UnmaskedUndesired => db1.iter_mut().find(|r| r.len() == 1 && !r.base.contains(desired)),
            Fault::UnmaskedCompanion => db1.iter_mut().find(|r| r.len() >= 2 && r.base.contains(desired)),
        };
        let target = target.ok_or(SchemeError::FaultNotApplicable(fault))?;
        target.cr = match fault {
            Fault::SeedReuse => Some(seed),
            Fault::UnmaskedUndesired | Fault::UnmaskedCompanion => None,
        };
    }
    Ok(())
}

/// The user's full draw for one retrieval, kept for replay and testing.
#[derive(Clone, Debug)]
pub struct SelectedQuery {
    pub query: SpirQuery,
    pub plan: PirPlan,
    pub variant: Permutation,
}

/// Fresh plan, CR assignment, random non-seed relabeling, then cycling so that
/// the seed is the user's CR index. Output is canonically ordered.
pub fn select_query<R: UniformSource + ?Sized>(
    params: &SchemeParams,
    desired: MessageIndex,
    user_cr: CrIndex,
    rng: &mut R,
) -> Result<SpirQuery, SchemeError> {
    select_query_traced(params, desired, user_cr, rng, None).map(|s| s.query)
}

pub fn select_query_traced<R: UniformSource + ?Sized>(
    params: &SchemeParams,
    desired: MessageIndex,
    user_cr: CrIndex,
    rng: &mut R,
    fault: Option<Fault>,
) -> Result<SelectedQuery, SchemeError> {
    let user_cr = CrIndex::new(user_cr.0, params.rs_size)?;
    let plan = build_pir_plan(params, desired, rng);
    let mut cell = assign_common_randomness(&plan, params)?;
    if let Some(f) = fault {
        apply_fault(&mut cell, f)?;
    }
    let variant = sample_variant(params, rng);
    let cell = permute_nonseed(&cell, &variant)?.shifted(user_cr.get() - 1);
    let query = cell.emit(desired).expect("cell covers the desired message");
    Ok(SelectedQuery { query, plan, variant })
}

/// Precomputed cell with identity symbol permutations, realized directly
/// from a choice of permutations, relabeling and seed. Used for exhaustive
/// enumeration; agrees with [`select_query_traced`] on the same choices.
#[derive(Clone, Debug)]
pub struct QueryTemplate {
    params: SchemeParams,
    desired: MessageIndex,
    base: Vec<Vec<SpirRequest>>,
}

impl QueryTemplate {
    pub fn new(params: &SchemeParams, desired: MessageIndex, fault: Option<Fault>) -> Result<Self, SchemeError> {
        let perms = params.messages().map(|_| Permutation::identity(params.l)).collect();
        let plan = crate::pir::build_pir_plan_with(params, desired, perms);
        let mut cell = assign_common_randomness(&plan, params)?;
        if let Some(f) = fault {
            apply_fault(&mut cell, f)?;
        }
        let base = cell.per_choice.remove(&desired).expect("desired column");
        Ok(QueryTemplate { params: *params, desired, base })
    }

    pub fn desired(&self) -> MessageIndex {
        self.desired
    }

    /// Number of distinct symbols each message contributes, `symbols_used()[m-1]`.
    pub fn symbols_used(&self) -> Vec<usize> {
        let mut used = vec![0usize; self.params.k];
        for t in self.base.iter().flatten().flat_map(|r| r.base.terms()) {
            let u = &mut used[t.message.get() - 1];
            *u = (*u).max(t.symbol as usize);
        }
        used
    }

    pub fn realize(&self, perms: &[Permutation], variant: &Permutation, user_cr: CrIndex) -> SpirQuery {
        let rs = self.params.rs_size;
        let shift = user_cr.get() - 1;
        let per_db = self
            .base
            .iter()
            .map(|reqs| {
                reqs.iter()
                    .map(|r| {
                        let mut base = r.base.clone();
                        for t in base.terms_mut() {
                            t.symbol = perms[t.message.get() - 1].apply(t.symbol as usize - 1) as u32 + 1;
                        }
                        let cr = r.cr.map(|c| CrIndex(variant.apply(c.get() - 1) as u32 + 1).shifted(shift, rs));
                        SpirRequest { base, cr }
                    })
                    .collect()
            })
            .collect();
        SpirQuery::canonical(per_db)
    }
}

/// Rates of the implemented scheme: `D / L`, `rs_size / L`, `1 / L`.
pub fn measured_rates(params: &SchemeParams) -> RateTriple {
    let downloads: usize = crate::pir::skeleton(params).iter().map(Vec::len).sum();
    let l = params.l as i128;
    RateTriple {
        d: Rational::new(downloads as i128, l),
        rho_s: Rational::new(params.rs_size as i128, l),
        rho_u: Rational::new(params.ru_size as i128, l),
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("request {0} has no terms")]
    EmptyRequest(usize),
    #[error("request {0}: {1}")]
    BadRequest(usize, String),
}

/// Canonical byte layout of one database's request list, big-endian:
/// `count:u32`, then per request `terms:u16`, `(message:u16, symbol:u32)*`,
/// `cr:u32` (0 when unmasked).
pub fn encode_requests(reqs: &[SpirRequest]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + reqs.len() * 16);
    out.extend_from_slice(&(reqs.len() as u32).to_be_bytes());
    for r in reqs {
        out.extend_from_slice(&(r.len() as u16).to_be_bytes());
        for t in r.base.terms() {
            out.extend_from_slice(&t.message.0.to_be_bytes());
            out.extend_from_slice(&t.symbol.to_be_bytes());
        }
        out.extend_from_slice(&r.cr.map_or(0, |c| c.0).to_be_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const W: usize>(&mut self) -> Result<[u8; W], CodecError> {
        let end = self.pos + W;
        let bytes = self.buf.get(self.pos..end).ok_or_else(|| CodecError::Truncated { offset: self.pos, needed: end - self.buf.len() })?;
        self.pos = end;
        Ok(bytes.try_into().expect("width"))
    }
}

/// Inverse of [`encode_requests`]; returns the requests and the bytes consumed.
pub fn decode_requests(buf: &[u8]) -> Result<(Vec<SpirRequest>, usize), CodecError> {
    let mut rd = Reader { buf, pos: 0 };
    let count = u32::from_be_bytes(rd.take()?) as usize;
    // every request needs at least 12 bytes; do not trust a huge count
    if count > buf.len() / 12 + 1 {
        return Err(CodecError::Truncated { offset: 0, needed: count.saturating_mul(12) - buf.len() });
    }
    let mut reqs = Vec::with_capacity(count);
    for i in 0..count {
        let terms = u16::from_be_bytes(rd.take()?) as usize;
        if terms == 0 {
            return Err(CodecError::EmptyRequest(i + 1));
        }
        let mut refs = Vec::with_capacity(terms);
        for _ in 0..terms {
            let message = MessageIndex(u16::from_be_bytes(rd.take()?));
            let symbol = u32::from_be_bytes(rd.take()?);
            refs.push(SymbolRef { message, symbol });
        }
        let cr = u32::from_be_bytes(rd.take()?);
        let base = SymbolRequest::new(refs).map_err(|e| CodecError::BadRequest(i + 1, e.to_string()))?;
        reqs.push(SpirRequest { base, cr: (cr != 0).then_some(CrIndex(cr)) });
    }
    Ok((reqs, rd.pos))
}
