//! Query-table rendering: one block per (seed, CR variant), one column per
//! (desired message, database), rows in generation order.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::field::{Permutation, UniformSource};
use crate::pir::{build_pir_plan, build_pir_plan_with, MessageIndex, SchemeParams};

use super::{assign_common_randomness, permute_nonseed, sample_variant, variant_count, variants, CrIndex, QueryCell, SchemeError};

#[derive(Debug, Error)]
pub enum TableError {
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

#[derive(Clone, Debug, Serialize)]
pub struct TableColumn {
    pub desired: MessageIndex,
    /// 1-based database.
    pub db: usize,
    pub entries: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TableBlock {
    pub seed: CrIndex,
    /// 1-based position of the CR relabeling in lexicographic order (1 = none).
    pub variant: usize,
    pub columns: Vec<TableColumn>,
}

#[derive(Clone, Debug, Serialize)]
pub struct QueryTable {
    pub n: usize,
    pub k: usize,
    pub exhaustive: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
    pub blocks: Vec<TableBlock>,
}

impl QueryTable {
    /// Number of (block, desired) query sets shown.
    pub fn query_sets(&self) -> usize {
        self.blocks.len() * self.k
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        if let Some(n) = &self.notice {
            let _ = writeln!(out, "# {n}");
        }
        let header: Vec<String> = self.blocks.first().map_or(vec![], |b| b.columns.iter().map(|c| format!("{} DB{}", c.desired, c.db)).collect());
        let width = self
            .blocks
            .iter()
            .flat_map(|b| b.columns.iter().flat_map(|c| c.entries.iter().map(String::len)))
            .chain(header.iter().map(String::len))
            .max()
            .unwrap_or(0);
        let _ = writeln!(out, "{:<6}| {}", "R_U", header.iter().map(|h| format!("{h:<width$}")).collect::<Vec<_>>().join(" | "));
        for block in &self.blocks {
            let rows = block.columns.first().map_or(0, |c| c.entries.len());
            for row in 0..rows {
                let label = if row == 0 && block.variant == 1 { block.seed.to_string() } else { String::new() };
                let cells: Vec<String> = block.columns.iter().map(|c| format!("{:<width$}", c.entries[row])).collect();
                let _ = writeln!(out, "{label:<6}| {}", cells.join(" | "));
            }
            let _ = writeln!(out, "{}", "-".repeat(8 + block.columns.len() * (width + 3)));
        }
        out
    }
}

fn block_of(cell: &QueryCell, variant: usize, l: usize) -> TableBlock {
    let columns = cell
        .per_choice
        .iter()
        .flat_map(|(&desired, dbs)| {
            dbs.iter().enumerate().map(move |(db, reqs)| TableColumn {
                desired,
                db: db + 1,
                entries: reqs.iter().map(|r| r.render(Some(desired), l)).collect(),
            })
        })
        .collect();
    TableBlock { seed: cell.seed, variant, columns }
}

/// Full family for identity symbol permutations when it has at most
/// `limit` query sets; otherwise a single sampled cell with a notice.
pub fn build_query_table<R: UniformSource + ?Sized>(params: &SchemeParams, limit: usize, rng: &mut R) -> Result<QueryTable, TableError> {
    let sets = variant_count(params).and_then(|v| v.checked_mul((params.rs_size * params.k) as u128));
    let exhaustive = sets.is_some_and(|s| s <= limit as u128);
    let mut blocks = Vec::new();
    let mut notice = None;

    if exhaustive {
        let mut base: Option<QueryCell> = None;
        for desired in params.messages() {
            let perms = params.messages().map(|_| Permutation::identity(params.l)).collect();
            let cell = assign_common_randomness(&build_pir_plan_with(params, desired, perms), params)?;
            match base.as_mut() {
                None => base = Some(cell),
                Some(b) => b.merge(cell)?,
            }
        }
        let base = base.expect("K >= 2");
        let relabeled: Vec<QueryCell> = variants(params).map(|v| permute_nonseed(&base, &v)).collect::<Result<_, _>>()?;
        for shift in 0..params.rs_size {
            for (i, cell) in relabeled.iter().enumerate() {
                blocks.push(block_of(&cell.shifted(shift), i + 1, params.l));
            }
        }
    } else {
        notice = Some(format!(
            "N={} K={}: the full family has {} query sets (limit {}); showing one sampled cell",
            params.n,
            params.k,
            sets.map_or("more than 2^128".to_string(), |s| s.to_string()),
            limit
        ));
        let variant = sample_variant(params, rng);
        let mut base: Option<QueryCell> = None;
        for desired in params.messages() {
            let cell = assign_common_randomness(&build_pir_plan(params, desired, rng), params)?;
            let cell = permute_nonseed(&cell, &variant)?;
            match base.as_mut() {
                None => base = Some(cell),
                Some(b) => b.merge(cell)?,
            }
        }
        blocks.push(block_of(&base.expect("K >= 2"), 0, params.l));
    }
    Ok(QueryTable { n: params.n, k: params.k, exhaustive, notice, blocks })
}
