use std::io::Write;
use std::path::Path;

use serde::Serialize;
use spir_core::audit::{run_all, AuditError, AuditReport};
use spir_core::capacity::{baselines, boundary_csv, boundary_samples, check_region, minimal_bounds, time_share_plan, TimeShare};
use spir_core::net::{self, load_database, load_user, serve_database};
use spir_core::scheme::build_query_table;
use spir_core::sim::{run_retrieval, RunSeeds, SimError, Transcript};
use spir_core::{MessageIndex, RateTriple, Rational};

use crate::config::{Format, RunConfig};
use crate::{CliError, Outcome};

fn json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Failed(e.to_string()))
}

fn no_csv(cfg: &RunConfig, what: &str) -> Result<(), CliError> {
    if cfg.format == Format::Csv {
        return Err(CliError::Usage(format!("{what} has no CSV output")));
    }
    Ok(())
}

fn verdict(ok: bool) -> Outcome {
    if ok {
        Outcome::Success
    } else {
        Outcome::Failure
    }
}

pub fn table(cfg: &RunConfig, limit: usize) -> Result<Outcome, CliError> {
    no_csv(cfg, "table")?;
    let rng = &mut RunSeeds::from_master(cfg.seed).query.stream();
    let t = build_query_table(&cfg.params, limit, rng).map_err(|e| CliError::Failed(e.to_string()))?;
    match cfg.format {
        Format::Json => println!("{}", json(&t)?),
        _ => print!("{}", t.render_text()),
    }
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct RetrieveOutput<'a> {
    /// Known only in process, where the true message is at hand.
    correct: Option<bool>,
    transcript: &'a Transcript,
}

fn print_transcript(cfg: &RunConfig, t: &Transcript, correct: Option<bool>) -> Result<(), CliError> {
    if cfg.format == Format::Json {
        println!("{}", json(&RetrieveOutput { correct, transcript: t })?);
        return Ok(());
    }
    let p = &t.params;
    println!("N={} K={} q={} L={} desired={} user CR={}", p.n, p.k, p.q, p.l, t.desired, t.user_cr_index);
    for (db, (reqs, ans)) in t.query.iter().zip(&t.answers).enumerate() {
        println!("DB{}:", db + 1);
        for (r, a) in reqs.iter().zip(ans) {
            println!("  {:<24} -> {a}", r.render(None, p.l));
        }
    }
    println!("decoded: {:?}", t.decoded);
    let r = &t.rates;
    println!("d = {} ({:.4}), rho_S = {}, rho_U = {}", r.d, r.d.to_f64(), r.rho_s, r.rho_u);
    if let Some(tr) = &t.transport {
        println!("transport: {} bytes sent, {} received via {}", tr.bytes_sent, tr.bytes_received, tr.endpoints.join(","));
    }
    match correct {
        Some(true) => println!("correct"),
        Some(false) => println!("INCORRECT"),
        None => {}
    }
    Ok(())
}

pub fn retrieve(cfg: &RunConfig, user: Option<&Path>) -> Result<Outcome, CliError> {
    no_csv(cfg, "retrieve")?;
    let seeds = RunSeeds::from_master(cfg.seed);
    let desired = MessageIndex(cfg.desired as u16);
    if let Some(endpoints) = &cfg.endpoints {
        let user = user.ok_or_else(|| CliError::Usage("--endpoints needs --user <user.json>".into()))?;
        let user = load_user(user).map_err(|e| CliError::Usage(e.to_string()))?;
        if user.params != cfg.params {
            return Err(CliError::Usage(format!(
                "user file is for N={} K={} q={}; pass matching --n/--k/--q",
                user.params.n, user.params.k, user.params.q
            )));
        }
        return match net::run_client_retrieval(endpoints, &user, desired, seeds.query, cfg.inject) {
            Ok(t) => {
                print_transcript(cfg, &t, None)?;
                Ok(Outcome::Success)
            }
            Err(e @ net::NetError::Decode(_)) => {
                eprintln!("decode failed: {e}");
                Ok(Outcome::Failure)
            }
            Err(e) => Err(CliError::Failed(e.to_string())),
        };
    }
    match run_retrieval(&cfg.params, desired, &seeds, cfg.inject) {
        Ok(r) => {
            let ok = r.correct();
            print_transcript(cfg, &r.transcript, Some(ok))?;
            Ok(verdict(ok))
        }
        Err(SimError::Decode(e)) => {
            eprintln!("decode failed: {e}");
            Ok(Outcome::Failure)
        }
        Err(e) => Err(CliError::Failed(e.to_string())),
    }
}

#[derive(Serialize)]
struct AuditEntry {
    name: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<AuditReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn audit(cfg: &RunConfig) -> Result<Outcome, CliError> {
    no_csv(cfg, "audit")?;
    let results = run_all(&cfg.params, &cfg.audit);
    let any_fail = results.iter().any(|(_, r)| matches!(r, Ok(rep) if !rep.pass));
    let any_err = results.iter().any(|(_, r)| r.is_err());
    let too_large = results.iter().any(|(_, r)| matches!(r, Err(AuditError::InstanceTooLarge { .. })));
    match cfg.format {
        Format::Json => {
            let entries: Vec<AuditEntry> = results
                .into_iter()
                .map(|(name, r)| match r {
                    Ok(rep) => AuditEntry { name, report: Some(rep), error: None },
                    Err(e) => AuditEntry { name, report: None, error: Some(e.to_string()) },
                })
                .collect();
            println!("{}", json(&entries)?);
        }
        _ => {
            let p = &cfg.params;
            let fault = cfg.inject.map_or(String::new(), |f| format!(" fault={f}"));
            println!("N={} K={} q={}{fault}", p.n, p.k, p.q);
            for (name, r) in &results {
                match r {
                    Ok(rep) => print!("{}", rep.render_text()),
                    Err(e) => println!("{name:<20} ERROR  {e}"),
                }
            }
        }
    }
    if any_fail {
        return Ok(Outcome::Failure);
    }
    if too_large {
        return Err(CliError::Usage("instance exceeds the enumeration bound; raise --bound".into()));
    }
    if any_err {
        return Err(CliError::Failed("an audit could not run".into()));
    }
    Ok(Outcome::Success)
}

fn parse_triple(s: &str) -> Result<RateTriple, CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [d, rs, ru] = parts[..] else {
        return Err(CliError::Usage(format!("triple {s:?} needs three comma-separated values")));
    };
    let r = |v: &str| v.parse::<Rational>().map_err(|e| CliError::Usage(format!("{v:?}: {}", e.0)));
    Ok(RateTriple::new(r(d)?, r(rs)?, r(ru)?))
}

#[derive(Serialize)]
struct BoundaryRow {
    rho_u: Rational,
    d_min: Rational,
    rho_s_min: Rational,
}

pub fn region(cfg: &RunConfig, triple: Option<&str>, steps: usize) -> Result<Outcome, CliError> {
    let (n, k) = (cfg.params.n, cfg.params.k);
    let cap = |e: spir_core::capacity::CapacityError| CliError::Usage(e.to_string());
    let Some(triple) = triple else {
        let samples = boundary_samples(n, steps.max(1));
        match cfg.format {
            Format::Json => {
                let mut rows = Vec::new();
                for rho_u in samples {
                    if let Some((d_min, rho_s_min)) = minimal_bounds(n, k, rho_u).map_err(cap)? {
                        rows.push(BoundaryRow { rho_u, d_min, rho_s_min });
                    }
                }
                println!("{}", json(&rows)?);
            }
            _ => print!("{}", boundary_csv(n, k, &samples).map_err(cap)?),
        }
        return Ok(Outcome::Success);
    };
    if cfg.format == Format::Csv {
        return Err(CliError::Usage("CSV output is only for the boundary; drop --triple".into()));
    }
    let t = parse_triple(triple)?;
    let v = check_region(n, k, t).map_err(cap)?;
    let base = baselines(n, k).map_err(cap)?;
    let plan = if n >= 2 { Some(time_share_plan(n, k, t).map_err(cap)?) } else { None };
    match cfg.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                verdict: &'a spir_core::capacity::RegionVerdict,
                baselines: &'a spir_core::capacity::Baselines,
                #[serde(skip_serializing_if = "Option::is_none")]
                time_share: Option<&'a TimeShare>,
            }
            println!("{}", json(&Out { verdict: &v, baselines: &base, time_share: plan.as_ref() })?);
        }
        _ => {
            print!("{}", v.render_text());
            let opt = |r: Option<Rational>| r.map_or("-".to_string(), |r| r.to_string());
            println!(
                "baselines: C_PIR = {}, C_SPIR = {}, d_PIR = {}, d_SPIR = {}, classical rho_S = {}",
                base.c_pir,
                base.c_spir,
                base.d_pir,
                opt(base.d_spir),
                opt(base.rho_s_classical)
            );
            if let Some(TimeShare::Plan(p)) = &plan {
                println!(
                    "time sharing: lambda = {}, mixture {}, padding shared = {}, rho_S = {}, d = {}",
                    p.lambda, p.mixture, p.padding.shared, p.padding.rho_s, p.padding.d
                );
            }
        }
    }
    Ok(verdict(v.feasible))
}

pub fn serve(db: &Path, listen: Option<&str>) -> Result<Outcome, CliError> {
    let (header, state) = load_database(db).map_err(|e| CliError::Usage(e.to_string()))?;
    let addr = listen.unwrap_or(&header.endpoint);
    let index = state.db_index;
    let handle = serve_database(state, addr).map_err(|e| CliError::Failed(e.to_string()))?;
    println!("serving DB{index} on {}", handle.local_addr());
    let _ = std::io::stdout().flush();
    handle.wait();
    Ok(Outcome::Success)
}

pub fn provision(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let endpoints = cfg.endpoints.as_ref().ok_or_else(|| CliError::Usage("provision needs --endpoints".into()))?;
    let seeds = RunSeeds::from_master(cfg.seed).deal;
    let files = net::provision(&cfg.params, &seeds, endpoints, out).map_err(|e| match e {
        net::NetError::Provision(m) => CliError::Usage(m),
        other => CliError::Failed(other.to_string()),
    })?;
    for (f, ep) in files.db_files.iter().zip(endpoints) {
        println!("{} -> {ep}", f.display());
    }
    println!("{}", files.user_file.display());
    Ok(Outcome::Success)
}
