//! In-process retrieval: a dealer provisions messages and common randomness,
//! databases answer, the user decodes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{sample_uniform, FieldElement, PrimeModulus, Seed};
use crate::pir::{MessageIndex, SchemeParams, SymbolRef};
use crate::scheme::{measured_rates, select_query_traced, CrIndex, Fault, RateTriple, SchemeError, SpirQuery, SpirRequest};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Answer(#[from] AnswerError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnswerError {
    #[error("request {request}: message {message} outside 1..={k}")]
    Message { request: usize, message: u16, k: usize },
    #[error("request {request}: symbol {symbol} outside 1..={l}")]
    Symbol { request: usize, symbol: u32, l: usize },
    #[error("request {request}: CR index {cr} outside 1..={rs}")]
    Randomness { request: usize, cr: u32, rs: usize },
    #[error("expected {expected} requests, got {got}")]
    Count { expected: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("query has {queries} databases but {answers} answer lists")]
    Shape { queries: usize, answers: usize },
    #[error("DB{db}: {got} answers for {expected} requests")]
    AnswerCount { db: usize, expected: usize, got: usize },
    #[error("desired symbols {0:?} cannot be recovered")]
    Unrecoverable(Vec<u32>),
}

/// The `K` messages, each `L` symbols, replicated at every database.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageStore {
    pub q: PrimeModulus,
    pub messages: Vec<Vec<FieldElement>>,
}

impl MessageStore {
    pub fn symbol(&self, r: SymbolRef) -> Option<FieldElement> {
        self.messages.get(r.message.get().checked_sub(1)?)?.get((r.symbol as usize).checked_sub(1)?).copied()
    }

    pub fn message(&self, m: MessageIndex) -> &[FieldElement] {
        &self.messages[m.get() - 1]
    }
}

/// `S_1..S_{rs_size}`, shared by the databases.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServerRandomness(pub Vec<FieldElement>);

/// The one CR symbol the user holds, `S_{index}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UserRandomness {
    pub index: CrIndex,
    pub value: FieldElement,
}

/// Seeds for the dealer's three independent draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DealSeeds {
    pub messages: Seed,
    pub randomness: Seed,
    pub user: Seed,
}

/// All seeds of one retrieval, derived from a single master value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub deal: DealSeeds,
    pub query: Seed,
}

impl RunSeeds {
    pub fn from_master(master: u64) -> Self {
        let m = Seed::from_u64(master);
        RunSeeds {
            deal: DealSeeds { messages: m.derive("messages"), randomness: m.derive("randomness"), user: m.derive("user") },
            query: m.derive("query"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Deal {
    pub store: MessageStore,
    pub server: ServerRandomness,
    pub user: UserRandomness,
}

/// Uniform messages, uniform server CR, and a uniform index for the user.
pub fn deal(params: &SchemeParams, seeds: &DealSeeds) -> Deal {
    let q = params.q;
    let mut ms = seeds.messages.stream();
    let messages = (0..params.k).map(|_| (0..params.l).map(|_| sample_uniform(q, &mut ms)).collect()).collect();
    let mut rs = seeds.randomness.stream();
    let server = ServerRandomness((0..params.rs_size).map(|_| sample_uniform(q, &mut rs)).collect());
    let mut us = seeds.user.stream();
    let index = CrIndex(crate::field::UniformSource::below(&mut us, params.rs_size as u64) as u32 + 1);
    let user = UserRandomness { index, value: server.0[index.get() - 1] };
    Deal { store: MessageStore { q, messages }, server, user }
}

/// One database's answers, in request order. Rejects out-of-range references.
pub fn answer_query(store: &MessageStore, server: &ServerRandomness, requests: &[SpirRequest]) -> Result<Vec<FieldElement>, AnswerError> {
    let k = store.messages.len();
    let l = store.messages.first().map_or(0, Vec::len);
    requests
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let request = i + 1;
            let mut acc = store.q.zero();
            for &t in r.base.terms() {
                if t.message.get() == 0 || t.message.get() > k {
                    return Err(AnswerError::Message { request, message: t.message.0, k });
                }
                acc = acc + store.symbol(t).ok_or(AnswerError::Symbol { request, symbol: t.symbol, l })?;
            }
            if let Some(c) = r.cr {
                let s = c.get().checked_sub(1).and_then(|i| server.0.get(i));
                acc = acc + *s.ok_or(AnswerError::Randomness { request, cr: c.0, rs: server.0.len() })?;
            }
            Ok(acc)
        })
        .collect()
}

/// Recovers the desired message. A desired 1-sum masked with the user's CR is
/// unmasked directly; a desired `k`-sum is cancelled against the answer to
/// its undesired part under the same mask at another database.
pub fn decode(
    params: &SchemeParams,
    query: &SpirQuery,
    answers: &[Vec<FieldElement>],
    desired: MessageIndex,
    user: &UserRandomness,
) -> Result<Vec<FieldElement>, DecodeError> {
    if query.per_db.len() != answers.len() {
        return Err(DecodeError::Shape { queries: query.per_db.len(), answers: answers.len() });
    }
    for (db, (reqs, ans)) in query.per_db.iter().zip(answers).enumerate() {
        if reqs.len() != ans.len() {
            return Err(DecodeError::AnswerCount { db: db + 1, expected: reqs.len(), got: ans.len() });
        }
    }
    // Undesired-only answers by (terms, mask), with the database they came from.
    type Side<'a> = HashMap<(&'a [SymbolRef], Option<CrIndex>), Vec<(usize, FieldElement)>>;
    let mut side: Side = HashMap::new();
    for (db, (reqs, ans)) in query.per_db.iter().zip(answers).enumerate() {
        for (r, &a) in reqs.iter().zip(ans) {
            if !r.base.contains(desired) {
                side.entry((r.base.terms(), r.cr)).or_default().push((db, a));
            }
        }
    }

    let mut out: Vec<Option<FieldElement>> = vec![None; params.l];
    for (db, (reqs, ans)) in query.per_db.iter().zip(answers).enumerate() {
        for (r, &a) in reqs.iter().zip(ans) {
            let Some(t) = r.base.term_for(desired) else { continue };
            let slot = match (t.symbol as usize).checked_sub(1).and_then(|i| out.get_mut(i)) {
                Some(s) if s.is_none() => s,
                _ => continue,
            };
            if r.len() == 1 {
                match r.cr {
                    None => *slot = Some(a),
                    Some(c) if c == user.index => *slot = Some(a - user.value),
                    Some(_) => {}
                }
            } else {
                let rest = r.base.without(desired);
                if let Some(&(_, b)) = side.get(&(rest.as_slice(), r.cr)).and_then(|v| v.iter().find(|(o, _)| *o != db)) {
                    *slot = Some(a - b);
                }
            }
        }
    }
    let missing: Vec<u32> = out.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(i, _)| i as u32 + 1).collect();
    if !missing.is_empty() {
        return Err(DecodeError::Unrecoverable(missing));
    }
    Ok(out.into_iter().map(|v| v.expect("checked")).collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptSeeds {
    pub query: Seed,
    /// Known to the in-process simulator only; a networked user never sees the dealer's seeds.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub deal: Option<DealSeeds>,
}

/// How the answers travelled, when they went over a network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportInfo {
    pub endpoints: Vec<String>,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

/// Complete record of one retrieval. Field elements are stored as integers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub params: SchemeParams,
    pub desired: MessageIndex,
    pub user_cr_index: CrIndex,
    pub seeds: TranscriptSeeds,
    pub query: Vec<Vec<SpirRequest>>,
    pub answers: Vec<Vec<u64>>,
    pub decoded: Vec<u64>,
    pub rates: RateTriple,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub transport: Option<TransportInfo>,
}

impl Transcript {
    /// Equal as retrievals: everything except transport details and the dealer's seeds.
    pub fn same_retrieval(&self, other: &Transcript) -> bool {
        self.params == other.params
            && self.desired == other.desired
            && self.user_cr_index == other.user_cr_index
            && self.seeds.query == other.seeds.query
            && self.query == other.query
            && self.answers == other.answers
            && self.decoded == other.decoded
            && self.rates == other.rates
    }
}

pub(crate) fn values(v: &[FieldElement]) -> Vec<u64> {
    v.iter().map(|e| e.value()).collect()
}

/// A finished in-process retrieval together with the dealt state, so callers
/// can compare the decoded symbols with the truth.
#[derive(Clone, Debug)]
pub struct Retrieval {
    pub transcript: Transcript,
    pub deal: Deal,
}

impl Retrieval {
    pub fn correct(&self) -> bool {
        self.transcript.decoded == values(self.deal.store.message(self.transcript.desired))
    }
}

pub fn run_retrieval(params: &SchemeParams, desired: MessageIndex, seeds: &RunSeeds, fault: Option<Fault>) -> Result<Retrieval, SimError> {
    let dealt = deal(params, &seeds.deal);
    let selected = select_query_traced(params, desired, dealt.user.index, &mut seeds.query.stream(), fault)?;
    let answers: Vec<Vec<FieldElement>> =
        selected.query.per_db.iter().map(|reqs| answer_query(&dealt.store, &dealt.server, reqs)).collect::<Result<_, _>>()?;
    let decoded = decode(params, &selected.query, &answers, desired, &dealt.user)?;
    let transcript = Transcript {
        params: *params,
        desired,
        user_cr_index: dealt.user.index,
        seeds: TranscriptSeeds { query: seeds.query, deal: Some(seeds.deal) },
        query: selected.query.per_db,
        answers: answers.iter().map(|a| values(a)).collect(),
        decoded: values(&decoded),
        rates: measured_rates(params),
        transport: None,
    };
    Ok(Retrieval { transcript, deal: dealt })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, k: usize, q: u64) -> SchemeParams {
        SchemeParams::new(n, k, PrimeModulus::new(q).unwrap()).unwrap()
    }

    #[test]
    fn retrieves_every_message_across_the_grid() {
        for n in 1..=3 {
            for k in 2..=4 {
                for q in [2, 3, 5] {
                    let p = params(n, k, q);
                    for d in 1..=k {
                        let r = run_retrieval(&p, MessageIndex(d as u16), &RunSeeds::from_master((n * 100 + k * 10 + d) as u64 + q), None).unwrap();
                        assert!(r.correct(), "N={n} K={k} q={q} d={d}");
                        assert_eq!(r.transcript.answers.iter().map(Vec::len).sum::<usize>(), p.total_requests());
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_same_transcript() {
        let p = params(2, 3, 5);
        let a = run_retrieval(&p, MessageIndex(2), &RunSeeds::from_master(4), None).unwrap();
        let b = run_retrieval(&p, MessageIndex(2), &RunSeeds::from_master(4), None).unwrap();
        assert_eq!(a.transcript, b.transcript);
        let c = run_retrieval(&p, MessageIndex(2), &RunSeeds::from_master(5), None).unwrap();
        assert_ne!(a.transcript, c.transcript);
    }

    #[test]
    fn user_holds_the_dealt_symbol() {
        let p = params(2, 2, 7);
        for m in 0..20 {
            let d = deal(&p, &RunSeeds::from_master(m).deal);
            assert_eq!(d.server.0[d.user.index.get() - 1], d.user.value);
            assert_eq!(d.server.0.len(), p.rs_size);
        }
    }

    #[test]
    fn unmasked_companion_breaks_decoding() {
        let p = params(2, 2, 3);
        let err = run_retrieval(&p, MessageIndex(1), &RunSeeds::from_master(1), Some(Fault::UnmaskedCompanion)).unwrap_err();
        assert!(matches!(err, SimError::Decode(DecodeError::Unrecoverable(_))));
    }

    #[test]
    fn answers_reject_bad_references() {
        let p = params(1, 2, 3);
        let d = deal(&p, &RunSeeds::from_master(0).deal);
        let bad = |message, symbol, cr| SpirRequest {
            base: crate::pir::SymbolRequest::new(vec![SymbolRef { message: MessageIndex(message), symbol }]).unwrap(),
            cr,
        };
        assert!(matches!(answer_query(&d.store, &d.server, &[bad(3, 1, None)]), Err(AnswerError::Message { .. })));
        assert!(matches!(answer_query(&d.store, &d.server, &[bad(1, 2, None)]), Err(AnswerError::Symbol { .. })));
        assert!(matches!(answer_query(&d.store, &d.server, &[bad(1, 1, Some(CrIndex(3)))]), Err(AnswerError::Randomness { .. })));
        assert!(matches!(answer_query(&d.store, &d.server, &[bad(1, 1, Some(CrIndex(0)))]), Err(AnswerError::Randomness { .. })));
    }

    #[test]
    fn transcript_json_round_trip() {
        let p = params(2, 2, 5);
        let t = run_retrieval(&p, MessageIndex(2), &RunSeeds::from_master(3), None).unwrap().transcript;
        let back: Transcript = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        let mut net = t.clone();
        net.seeds.deal = None;
        net.transport = Some(TransportInfo { endpoints: vec!["a".into()], bytes_sent: 1, bytes_received: 2 });
        assert!(t.same_retrieval(&net));
        net.decoded[0] += 1;
        assert!(!t.same_retrieval(&net));
    }

    #[test]
    fn answer_is_the_masked_field_sum() {
        let q = PrimeModulus::new(2).unwrap();
        let store = MessageStore { q, messages: vec![vec![q.one(), q.zero()], vec![q.zero(), q.zero()]] };
        let server = ServerRandomness(vec![q.one(), q.zero(), q.zero()]);
        let req = SpirRequest {
            base: crate::pir::SymbolRequest::new(vec![SymbolRef { message: MessageIndex(1), symbol: 1 }]).unwrap(),
            cr: Some(CrIndex(1)),
        };
        // 1 + 1 over GF(2).
        assert_eq!(answer_query(&store, &server, &[req]).unwrap(), vec![q.zero()]);
    }

    #[test]
    fn query_does_not_depend_on_the_messages() {
        let p = params(2, 2, 5);
        let a = RunSeeds::from_master(21);
        let mut b = a;
        b.deal.messages = Seed::from_u64(999);
        let ta = run_retrieval(&p, MessageIndex(2), &a, None).unwrap().transcript;
        let tb = run_retrieval(&p, MessageIndex(2), &b, None).unwrap().transcript;
        assert_eq!(ta.query, tb.query);
        assert_ne!(ta.decoded, tb.decoded);
    }
}
