//! Acceptance run: one PASS/FAIL line per criterion. Exits nonzero if any fail.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use spir_core::audit::{
    cr_difference_audit, database_privacy_audit, query_distribution, reliability_audit, user_privacy_audit, AuditConfig,
};
use spir_core::capacity::{check_region, classical_point, minimal_bounds};
use spir_core::field::{Permutation, UniformSource};
use spir_core::net::{self, decode_answers, decode_frame, encode_frame, read_frame, ErrorPayload, Frame, FrameType, HelloPayload, QueryPayload};
use spir_core::scheme::{measured_rates, variants, QueryTemplate};
use spir_core::sim::{run_retrieval, RunSeeds};
use spir_core::{CrIndex, Fault, MessageIndex, PrimeModulus, RateTriple, Rational, SchemeParams, Seed};

fn params(n: usize, k: usize, q: u64) -> SchemeParams {
    SchemeParams::new(n, k, PrimeModulus::new(q).unwrap()).unwrap()
}

fn r(n: i128, d: i128) -> Rational {
    Rational::new(n, d)
}

fn triple(d: Rational, s: Rational, u: Rational) -> RateTriple {
    RateTriple::new(d, s, u)
}

/// Collects sub-check failures; a criterion passes when none are recorded
/// and it finishes inside its time budget.
#[derive(Default)]
struct Checks {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn expect(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }
}

fn cfg() -> AuditConfig {
    AuditConfig::from_env()
}

fn corner_points(c: &mut Checks) {
    let cases = [((1, 3), triple(r(3, 1), r(3, 1), r(1, 1))), ((2, 2), triple(r(3, 2), r(3, 4), r(1, 4)))];
    for ((n, k), want) in cases {
        let got = measured_rates(&params(n, k, 2));
        c.expect(got == want, format!("({n},{k}): measured {got}, expected {want}"));
    }
}

fn region_tightness(c: &mut Checks) {
    for n in 1..=3 {
        for k in 2..=4 {
            let t = measured_rates(&params(n, k, 2));
            let v = check_region(n, k, t).unwrap();
            c.expect(v.feasible && v.all_tight(), format!("({n},{k}) {t}: feasible={} all tight={}", v.feasible, v.all_tight()));
        }
    }
}

fn reliability(c: &mut Checks) {
    for (n, k, q) in [(1, 2, 2), (1, 2, 3), (1, 3, 2), (2, 2, 2)] {
        let rep = reliability_audit(&params(n, k, q), &cfg()).unwrap();
        c.expect(rep.pass, format!("({n},{k}) q={q}: {}", rep.witness.unwrap_or_default()));
        c.note(format!("({n},{k},q={q}) {} outcomes", rep.enumerated));
    }
}

fn user_privacy(c: &mut Checks) {
    // (1,3): with R_U marginalized, each desired index sees a uniform
    // distribution over 3 query sets at mass 1/3; every fixed (desired, R_U)
    // yields one of those query sets.
    let p = params(1, 3, 2);
    let mut marginals = Vec::new();
    for d in p.messages() {
        let m = query_distribution(&p, 1, d, None, &cfg()).unwrap();
        c.expect(m.support() == 3 && m.mass.values().all(|&v| v == r(1, 3)), format!("(1,3) {d}: not uniform 1/3 over 3 query sets"));
        for u in 1..=p.rs_size as u32 {
            let fixed = query_distribution(&p, 1, d, Some(CrIndex(u)), &cfg()).unwrap();
            c.expect(fixed.mass.keys().all(|q| m.mass.contains_key(q)), format!("(1,3) {d} S{u}: query outside the marginal support"));
        }
        marginals.push(m);
    }
    c.expect(marginals.windows(2).all(|w| w[0] == w[1]), "(1,3): marginals differ across desired indices");

    // (2,2): per-database distributions equal across desired indices.
    let p = params(2, 2, 2);
    for db in 1..=p.n {
        let a = query_distribution(&p, db, MessageIndex(1), None, &cfg()).unwrap();
        let b = query_distribution(&p, db, MessageIndex(2), None, &cfg()).unwrap();
        c.expect(a.first_difference(&b).is_none(), format!("(2,2) DB{db}: distributions differ"));
        c.note(format!("(2,2) DB{db}: {} query tables", a.support()));
    }
    for (n, k) in [(1, 3), (2, 2)] {
        let rep = user_privacy_audit(&params(n, k, 2), &cfg()).unwrap();
        c.expect(rep.pass, format!("({n},{k}) audit: {}", rep.witness.unwrap_or_default()));
    }
}

fn privacy_and_independence(c: &mut Checks) {
    for (n, k, q) in [(1, 2, 2), (1, 2, 3), (2, 2, 2)] {
        let p = params(n, k, q);
        let db = database_privacy_audit(&p, &cfg()).unwrap();
        let cr = cr_difference_audit(&p, &cfg()).unwrap();
        c.expect(db.pass && db.value.as_ref().is_some_and(|v| v.is_zero()), format!("({n},{k}) q={q}: database privacy I != 0"));
        c.expect(cr.pass && cr.value.as_ref().is_some_and(|v| v.is_zero()), format!("({n},{k}) q={q}: CR independence I != 0"));
    }
    // Each fault against the audit it is meant to trip.
    for (n, k) in [(1, 2), (2, 2)] {
        let rep = database_privacy_audit(&params(n, k, 2), &cfg().with_fault(Some(Fault::UnmaskedUndesired))).unwrap();
        c.expect(!rep.pass && rep.value.as_ref().is_some_and(|v| !v.is_zero()), format!("({n},{k}) unmasked-undesired not caught by database privacy"));
    }
    let rep = cr_difference_audit(&params(2, 2, 2), &cfg().with_fault(Some(Fault::UnmaskedCompanion))).unwrap();
    c.expect(!rep.pass && rep.value.as_ref().is_some_and(|v| !v.is_zero()), "(2,2) unmasked-companion not caught by CR independence");
    let rep = user_privacy_audit(&params(1, 3, 2), &cfg().with_fault(Some(Fault::SeedReuse))).unwrap();
    c.expect(!rep.pass, "(1,3) seed-reuse not caught by user privacy");
}

fn classical_reduction(c: &mut Checks) {
    // Hand values of N/(N-1) and 1/(N-1).
    for (n, d, s) in [(2, r(2, 1), r(1, 1)), (3, r(3, 2), r(1, 2)), (4, r(4, 3), r(1, 3))] {
        for k in 2..=4 {
            c.expect(minimal_bounds(n, k, Rational::zero()).unwrap() == Some((d, s)), format!("N={n} K={k}: minimal bounds at rho_U = 0"));
            let v = check_region(n, k, triple(d, s, Rational::zero())).unwrap();
            let binding = |name| v.constraint(name).is_some_and(|x| x.tight);
            c.expect(v.feasible && binding("download-vs-user") && binding("server-vs-user"), format!("N={n} K={k}: bounds not binding"));
            let eps = r(1, 1000);
            c.expect(!check_region(n, k, triple(d - eps, s, Rational::zero())).unwrap().feasible, format!("N={n} K={k}: d below N/(N-1) admitted"));
            c.expect(!check_region(n, k, triple(d, s - eps, Rational::zero())).unwrap().feasible, format!("N={n} K={k}: rho_S below 1/(N-1) admitted"));
        }
        c.expect(classical_point(n) == Some(triple(d, s, Rational::zero())), format!("N={n}: classical point"));
    }
}

fn user_randomness_saving(c: &mut Checks) {
    let a = check_region(2, 2, triple(r(2, 1), r(1, 1), r(0, 1))).unwrap();
    let b = check_region(2, 2, triple(r(2, 1), r(3, 4), r(1, 4))).unwrap();
    c.expect(a.feasible, "(2, 1, 0) infeasible");
    c.expect(b.feasible, "(2, 3/4, 1/4) infeasible");
    let eps = r(1, 1000);
    c.expect(!check_region(2, 2, triple(r(2, 1), r(1, 1) - eps, r(0, 1))).unwrap().feasible, "rho_S below 1 admitted without user randomness");
    c.expect(!check_region(2, 2, triple(r(2, 1), r(3, 4) - eps, r(1, 4))).unwrap().feasible, "rho_S below 3/4 admitted at rho_U = 1/4");
}

fn transport(c: &mut Checks) {
    let mut runs = 0;
    for (n, k) in [(2, 2), (1, 3)] {
        let p = params(n, k, 5);
        for master in 0..100u64 {
            let seeds = RunSeeds::from_master(master);
            let desired = MessageIndex((master % k as u64) as u16 + 1);
            let dir = tempfile::tempdir().unwrap();
            let placeholders: Vec<String> = (0..n).map(|i| format!("127.0.0.1:{}", 9000 + i)).collect();
            let files = net::provision(&p, &seeds.deal, &placeholders, dir.path()).unwrap();
            let servers: Vec<_> =
                files.db_files.iter().map(|f| net::serve_database(net::load_database(f).unwrap().1, "127.0.0.1:0").unwrap()).collect();
            let endpoints: Vec<String> = servers.iter().map(|s| s.local_addr().to_string()).collect();
            let user = net::load_user(&files.user_file).unwrap();
            let remote = net::run_client_retrieval(&endpoints, &user, desired, seeds.query, None);
            let local = run_retrieval(&p, desired, &seeds, None).unwrap();
            match remote {
                Ok(t) => c.expect(t.same_retrieval(&local.transcript) && local.correct(), format!("({n},{k}) seed {master}: transcripts differ")),
                Err(e) => c.expect(false, format!("({n},{k}) seed {master}: {e}")),
            }
            runs += 1;
        }
    }
    c.note(format!("{runs} networked runs"));

    let mut rng = Seed::from_u64(2024).stream();
    let valid: Vec<Vec<u8>> = vec![
        encode_frame(&Frame::empty(FrameType::Hello)),
        encode_frame(&Frame::new(FrameType::Answer, net::encode_answers(&[1, 2, 3]))),
        encode_frame(&Frame::new(FrameType::Query, vec![0, 2, 0, 2, 0, 0, 0, 0, 0, 0, 0, 5, 0, 0, 0, 4, 0, 0, 0, 1, 0, 1, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1])),
    ];
    let inputs = 100_000;
    let mut accepted = 0;
    let fuzz = catch_unwind(AssertUnwindSafe(|| {
        for i in 0..inputs {
            let bytes: Vec<u8> = match i % 3 {
                0 => (0..rng.below(80)).map(|_| rng.below(256) as u8).collect(),
                1 => {
                    let mut v = valid[i % valid.len()].clone();
                    for _ in 0..=rng.below(3) {
                        let at = rng.below(v.len() as u64) as usize;
                        v[at] = rng.below(256) as u8;
                    }
                    v.truncate(rng.below(v.len() as u64 + 1) as usize);
                    v
                }
                _ => {
                    let mut v = b"SPIR\x01".to_vec();
                    v.extend((0..rng.below(40)).map(|_| rng.below(256) as u8));
                    v
                }
            };
            if let Ok(f) = decode_frame(&bytes) {
                accepted += 1;
                let _ = QueryPayload::decode(&f.payload);
                let _ = HelloPayload::decode(&f.payload);
                let _ = decode_answers(&f.payload);
                let _ = ErrorPayload::decode(&f.payload);
            }
            let _ = read_frame(&mut &bytes[..]);
        }
    }));
    c.expect(fuzz.is_ok(), "frame decoder panicked");
    c.note(format!("{inputs} fuzz inputs, {accepted} well-formed"));

    // Garbage at a live server must not take it down.
    let p = params(2, 2, 3);
    let seeds = RunSeeds::from_master(5);
    let dir = tempfile::tempdir().unwrap();
    let files = net::provision(&p, &seeds.deal, &["a:1".into(), "b:2".into()], dir.path()).unwrap();
    let servers: Vec<_> =
        files.db_files.iter().map(|f| net::serve_database(net::load_database(f).unwrap().1, "127.0.0.1:0").unwrap()).collect();
    let endpoints: Vec<String> = servers.iter().map(|s| s.local_addr().to_string()).collect();
    for _ in 0..200 {
        let mut s = TcpStream::connect(&endpoints[0]).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        let junk: Vec<u8> = (0..rng.below(64) + 10).map(|_| rng.below(256) as u8).collect();
        let _ = s.write_all(&junk);
        let _ = s.shutdown(std::net::Shutdown::Write);
        let _ = s.read_to_end(&mut Vec::new());
    }
    let user = net::load_user(&files.user_file).unwrap();
    c.expect(net::run_client_retrieval(&endpoints, &user, MessageIndex(1), seeds.query, None).is_ok(), "server unusable after garbage");
}

fn permutation_count(c: &mut Checks) {
    let p = params(2, 2, 2);
    let mut counts = BTreeSet::new();
    for desired in p.messages() {
        let template = QueryTemplate::new(&p, desired, None).unwrap();
        for variant in variants(&p) {
            for u in 1..=p.rs_size as u32 {
                let mut distinct = BTreeSet::new();
                for pa in Permutation::all(p.l) {
                    for pb in Permutation::all(p.l) {
                        distinct.insert(template.realize(&[pa.clone(), pb], &variant, CrIndex(u)).per_db);
                    }
                }
                counts.insert(distinct.len());
            }
        }
    }
    c.expect(counts == BTreeSet::from([288]), format!("distinct realizations per CR variant: {counts:?}"));
}

type Criterion = (u32, &'static str, Duration, fn(&mut Checks));

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "corner-point rates", Duration::from_secs(1), corner_points),
        (2, "region tightness", Duration::from_secs(1), region_tightness),
        (3, "reliability", Duration::from_secs(300), reliability),
        (4, "user privacy", Duration::from_secs(300), user_privacy),
        (5, "database privacy and CR independence", Duration::from_secs(1800), privacy_and_independence),
        (6, "classical SPIR reduction", Duration::from_secs(1), classical_reduction),
        (7, "user randomness saves server randomness", Duration::from_secs(1), user_randomness_saving),
        (8, "transport transparency", Duration::from_secs(600), transport),
        (9, "permutation count", Duration::from_secs(60), permutation_count),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let mut checks = Checks::default();
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&mut checks)));
        let took = start.elapsed();
        if let Err(e) = outcome {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            checks.failures.push(format!("panicked: {msg}"));
        }
        if took > budget {
            checks.failures.push(format!("took {took:.1?}, budget {budget:?}"));
        }
        let pass = checks.failures.is_empty();
        failed += usize::from(!pass);
        let mut line = format!("criterion {id}: {} {name} ({took:.2?})", if pass { "PASS" } else { "FAIL" });
        if !checks.notes.is_empty() {
            line += &format!(" [{}]", checks.notes.join("; "));
        }
        println!("{line}");
        for f in &checks.failures {
            println!("    {f}");
        }
        let _ = std::io::stdout().flush();
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
