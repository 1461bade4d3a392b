//! The capacity region of `(d, rho_S, rho_U)` in exact rationals.
//!
//! For `N >= 2`:
//!
//! ```text
//! d             >= 1 + 1/N + ... + 1/N^(K-1)      download
//! rho_S - rho_U >= 1/N + ... + 1/N^(K-1)          randomness-gap
//! (N-1)/N d + rho_U >= 1                          download-vs-user
//! N/(N-1) rho_U + N rho_S >= N/(N-1)              server-vs-user
//! ```
//!
//! For `N = 1` the last two collapse into `rho_U >= 1`, and the first two
//! read `d >= K` and `rho_S - rho_U >= K - 1`.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::field::Rational;
use crate::scheme::RateTriple;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CapacityError {
    #[error("need at least one database")]
    NoDatabases,
    #[error("need at least two messages, got {0}")]
    TooFewMessages(usize),
    #[error("time sharing needs N >= 2: a single database has no classical SPIR point")]
    SingleDatabase,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Constraint {
    pub name: &'static str,
    pub lhs: Rational,
    pub rhs: Rational,
    pub slack: Rational,
    pub tight: bool,
}

impl Constraint {
    fn new(name: &'static str, lhs: Rational, rhs: Rational) -> Self {
        let slack = lhs - rhs;
        Constraint { name, lhs, rhs, slack, tight: slack.is_zero() }
    }

    pub fn holds(&self) -> bool {
        !self.slack.is_negative()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RegionVerdict {
    pub n: usize,
    pub k: usize,
    pub triple: RateTriple,
    pub feasible: bool,
    pub constraints: Vec<Constraint>,
}

impl RegionVerdict {
    pub fn constraint(&self, name: &str) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.name == name)
    }

    pub fn all_tight(&self) -> bool {
        self.constraints.iter().all(|c| c.tight)
    }

    pub fn render_text(&self) -> String {
        let mut out = format!(
            "N={} K={} {}: {}\n",
            self.n,
            self.k,
            self.triple,
            if self.feasible { "feasible" } else { "infeasible" }
        );
        for c in &self.constraints {
            let state = if !c.holds() {
                "violated"
            } else if c.tight {
                "tight"
            } else {
                "slack"
            };
            let _ = writeln!(out, "  {:<18} {} >= {}  slack {}  {}", c.name, c.lhs, c.rhs, c.slack, state);
        }
        out
    }
}

fn check_dims(n: usize, k: usize) -> Result<(), CapacityError> {
    if n == 0 {
        return Err(CapacityError::NoDatabases);
    }
    if k < 2 {
        return Err(CapacityError::TooFewMessages(k));
    }
    Ok(())
}

fn nr(n: usize) -> Rational {
    Rational::integer(n as i128)
}

/// `sum_{i=from}^{to} N^-i`.
fn geometric(n: usize, from: usize, to: usize) -> Rational {
    (from..=to).map(|i| nr(n).pow(-(i as i32))).sum()
}

pub fn check_region(n: usize, k: usize, t: RateTriple) -> Result<RegionVerdict, CapacityError> {
    check_dims(n, k)?;
    let one = Rational::one();
    let constraints = if n == 1 {
        vec![
            Constraint::new("download", t.d, nr(k)),
            Constraint::new("randomness-gap", t.rho_s - t.rho_u, nr(k - 1)),
            Constraint::new("user-randomness", t.rho_u, one),
        ]
    } else {
        let nn = nr(n);
        let n1 = nr(n - 1);
        vec![
            Constraint::new("download", t.d, geometric(n, 0, k - 1)),
            Constraint::new("randomness-gap", t.rho_s - t.rho_u, geometric(n, 1, k - 1)),
            Constraint::new("download-vs-user", n1 / nn * t.d + t.rho_u, one),
            Constraint::new("server-vs-user", nn / n1 * t.rho_u + nn * t.rho_s, nn / n1),
        ]
    };
    let feasible = constraints.iter().all(Constraint::holds);
    Ok(RegionVerdict { n, k, triple: t, feasible, constraints })
}

/// The point where every constraint is tight; the implemented scheme's rates.
pub fn corner_point(n: usize, k: usize) -> Result<RateTriple, CapacityError> {
    check_dims(n, k)?;
    if n == 1 {
        return Ok(RateTriple::new(nr(k), nr(k), Rational::one()));
    }
    let nk = nr(n).pow(k as i32);
    Ok(RateTriple::new(geometric(n, 0, k - 1), (nk - Rational::one()) / (nr(n - 1) * nk), nk.recip()))
}

/// Classical SPIR (no user-side randomness): `(N/(N-1), 1/(N-1), 0)`.
pub fn classical_point(n: usize) -> Option<RateTriple> {
    (n >= 2).then(|| RateTriple::new(nr(n) / nr(n - 1), nr(n - 1).recip(), Rational::zero()))
}

/// Capacities and download costs without user-side randomness.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Baselines {
    pub c_pir: Rational,
    pub c_spir: Rational,
    pub d_pir: Rational,
    /// Undefined for a single database, where SPIR is infeasible.
    pub d_spir: Option<Rational>,
    pub rho_s_classical: Option<Rational>,
}

pub fn baselines(n: usize, k: usize) -> Result<Baselines, CapacityError> {
    check_dims(n, k)?;
    let one = Rational::one();
    let c_pir = if n == 1 {
        nr(k).recip()
    } else {
        let inv = nr(n).recip();
        (one - inv) / (one - inv.pow(k as i32))
    };
    let c_spir = one - nr(n).recip();
    Ok(Baselines {
        c_pir,
        c_spir,
        d_pir: c_pir.recip(),
        d_spir: (n >= 2).then(|| c_spir.recip()),
        rho_s_classical: (n >= 2).then(|| nr(n - 1).recip()),
    })
}

/// What must be added on top of the mixture to reach the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Padding {
    /// Added to both rho_S and rho_U (the user gets extra CR symbols the servers also hold).
    pub shared: Rational,
    /// Further server-only randomness.
    pub rho_s: Rational,
    /// Further download.
    pub d: Rational,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TimeSharePlan {
    /// Fraction of message blocks served by the new scheme; the rest use classical SPIR.
    pub lambda: Rational,
    pub mixture: RateTriple,
    pub padding: Padding,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum TimeShare {
    Plan(TimeSharePlan),
    Infeasible(RegionVerdict),
}

/// Time sharing between the corner point and classical SPIR, with
/// `lambda = min(1, rho_U * N^K)`, then padding. For any feasible target the
/// padding is componentwise non-negative.
pub fn time_share_plan(n: usize, k: usize, target: RateTriple) -> Result<TimeShare, CapacityError> {
    check_dims(n, k)?;
    let classical = classical_point(n).ok_or(CapacityError::SingleDatabase)?;
    let verdict = check_region(n, k, target)?;
    if !verdict.feasible {
        return Ok(TimeShare::Infeasible(verdict));
    }
    let corner = corner_point(n, k)?;
    let one = Rational::one();
    let lambda = Ord::min(target.rho_u * nr(n).pow(k as i32), one);
    let mix = |a: Rational, b: Rational| lambda * a + (one - lambda) * b;
    let mixture = RateTriple::new(mix(corner.d, classical.d), mix(corner.rho_s, classical.rho_s), mix(corner.rho_u, classical.rho_u));
    let shared = target.rho_u - mixture.rho_u;
    let padding = Padding { shared, rho_s: target.rho_s - mixture.rho_s - shared, d: target.d - mixture.d };
    Ok(TimeShare::Plan(TimeSharePlan { lambda, mixture, padding }))
}

/// Smallest `d` and `rho_S` admitted at a given `rho_U`, or `None` when no
/// point with that `rho_U` is feasible.
pub fn minimal_bounds(n: usize, k: usize, rho_u: Rational) -> Result<Option<(Rational, Rational)>, CapacityError> {
    check_dims(n, k)?;
    if rho_u.is_negative() {
        return Ok(None);
    }
    if n == 1 {
        return Ok((rho_u >= Rational::one()).then(|| (nr(k), rho_u + nr(k - 1))));
    }
    let one = Rational::one();
    let n1 = nr(n - 1);
    let d = geometric(n, 0, k - 1).max(nr(n) / n1 * (one - rho_u));
    let rho_s = (rho_u + geometric(n, 1, k - 1)).max((one - rho_u) / n1);
    Ok(Some((d, rho_s)))
}

/// CSV of the minimal `d` and `rho_S` over the given `rho_U` values; infeasible rows are skipped.
pub fn boundary_csv(n: usize, k: usize, rho_u: &[Rational]) -> Result<String, CapacityError> {
    let mut out = String::from("rho_u,d_min,rho_s_min\n");
    for &u in rho_u {
        if let Some((d, s)) = minimal_bounds(n, k, u)? {
            let _ = writeln!(out, "{u},{d},{s}");
        }
    }
    Ok(out)
}

/// `steps + 1` evenly spaced `rho_U` values covering where the boundary bends:
/// `[0, 1]` for `N >= 2`, `[1, 2]` for `N = 1`.
pub fn boundary_samples(n: usize, steps: usize) -> Vec<Rational> {
    let start = if n == 1 { Rational::one() } else { Rational::zero() };
    let steps = steps.max(1);
    (0..=steps).map(|i| start + Rational::new(i as i128, steps as i128)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{PrimeModulus, Seed, UniformSource};
    use crate::pir::SchemeParams;
    use crate::scheme::measured_rates;
    use proptest::prelude::*;

    fn r(n: i128, d: i128) -> Rational {
        Rational::new(n, d)
    }

    fn t(d: Rational, s: Rational, u: Rational) -> RateTriple {
        RateTriple::new(d, s, u)
    }

    #[test]
    fn corner_points() {
        assert_eq!(corner_point(2, 2).unwrap(), t(r(3, 2), r(3, 4), r(1, 4)));
        assert_eq!(corner_point(1, 3).unwrap(), t(r(3, 1), r(3, 1), r(1, 1)));
        let c = corner_point(3, 2).unwrap();
        assert_eq!(c, t(r(4, 3), r(4, 9), r(1, 9)));
        let v = check_region(3, 2, c).unwrap();
        assert!(v.feasible && v.all_tight());
    }

    #[test]
    fn scheme_rates_sit_on_the_corner() {
        for n in 1..=3 {
            for k in 2..=4 {
                let p = SchemeParams::new(n, k, PrimeModulus::new(2).unwrap()).unwrap();
                let m = measured_rates(&p);
                assert_eq!(m, corner_point(n, k).unwrap());
                let v = check_region(n, k, m).unwrap();
                assert!(v.feasible && v.all_tight(), "{}", v.render_text());
                assert_eq!(v.constraints.len(), if n == 1 { 3 } else { 4 });
            }
        }
    }

    #[test]
    fn classical_spir_point() {
        let v = check_region(2, 2, t(r(2, 1), r(1, 1), r(0, 1))).unwrap();
        assert!(v.feasible);
        assert!(!v.constraint("download").unwrap().tight);
        assert!(v.constraint("download-vs-user").unwrap().tight);
        assert!(v.constraint("server-vs-user").unwrap().tight);
        for n in 2..=4 {
            let c = classical_point(n).unwrap();
            let v = check_region(n, 3, c).unwrap();
            assert!(v.feasible);
            assert_eq!(minimal_bounds(n, 3, Rational::zero()).unwrap(), Some((r(n as i128, n as i128 - 1), r(1, n as i128 - 1))));
        }
    }

    #[test]
    fn user_randomness_saves_server_randomness() {
        assert!(check_region(2, 2, t(r(2, 1), r(1, 1), r(0, 1))).unwrap().feasible);
        assert!(check_region(2, 2, t(r(2, 1), r(3, 4), r(1, 4))).unwrap().feasible);
        assert!(!check_region(2, 2, t(r(2, 1), r(3, 4), r(0, 1))).unwrap().feasible);
    }

    #[test]
    fn single_database_region() {
        let v = check_region(1, 3, t(r(3, 1), r(3, 1), r(1, 1))).unwrap();
        assert!(v.feasible && v.all_tight());
        assert!(!check_region(1, 3, t(r(3, 1), r(3, 1), r(1, 2))).unwrap().feasible);
        assert!(!check_region(1, 3, t(r(3, 1), r(5, 2), r(1, 1))).unwrap().feasible);
        assert_eq!(check_region(1, 1, corner_point(1, 2).unwrap()), Err(CapacityError::TooFewMessages(1)));
        assert_eq!(minimal_bounds(1, 3, r(1, 2)).unwrap(), None);
    }

    #[test]
    fn baseline_values() {
        let b = baselines(2, 2).unwrap();
        assert_eq!((b.c_pir, b.c_spir), (r(2, 3), r(1, 2)));
        assert_eq!((b.d_pir, b.d_spir, b.rho_s_classical), (r(3, 2), Some(r(2, 1)), Some(r(1, 1))));
        let b = baselines(1, 4).unwrap();
        assert_eq!((b.c_pir, b.d_pir, b.c_spir, b.d_spir), (r(1, 4), r(4, 1), r(0, 1), None));
        for n in 2..=4 {
            for k in 2..=4 {
                let b = baselines(n, k).unwrap();
                assert_eq!(b.d_pir, corner_point(n, k).unwrap().d);
                assert!(b.d_spir.unwrap() > b.d_pir);
            }
        }
    }

    #[test]
    fn remark_corner_binds_download_and_user_constraint() {
        for n in 2..=4 {
            for k in 2..=4 {
                let c = corner_point(n, k).unwrap();
                assert_eq!(c.rho_u, Rational::integer(n as i128).pow(-(k as i32)));
                let v = check_region(n, k, c).unwrap();
                assert!(v.constraint("download").unwrap().tight && v.constraint("download-vs-user").unwrap().tight);
                assert_eq!(c.d, baselines(n, k).unwrap().d_pir);
            }
        }
    }

    #[test]
    fn time_sharing() {
        let plan = |target| match time_share_plan(2, 2, target).unwrap() {
            TimeShare::Plan(p) => p,
            TimeShare::Infeasible(v) => panic!("{}", v.render_text()),
        };
        let zero = Padding { shared: Rational::zero(), rho_s: Rational::zero(), d: Rational::zero() };
        let p = plan(t(r(3, 2), r(3, 4), r(1, 4)));
        assert_eq!((p.lambda, p.padding), (r(1, 1), zero));
        let p = plan(t(r(2, 1), r(1, 1), r(0, 1)));
        assert_eq!((p.lambda, p.padding), (r(0, 1), zero));
        let p = plan(t(r(7, 4), r(7, 8), r(1, 8)));
        assert_eq!((p.lambda, p.padding), (r(1, 2), zero));
        assert!(check_region(2, 2, p.mixture).unwrap().feasible);

        let p = plan(t(r(3, 1), r(2, 1), r(1, 1)));
        assert_eq!(p.lambda, Rational::one());
        assert_eq!(p.padding.shared, r(3, 4));

        assert!(matches!(time_share_plan(2, 2, t(r(1, 1), r(1, 1), r(1, 1))).unwrap(), TimeShare::Infeasible(_)));
        assert_eq!(time_share_plan(1, 2, corner_point(1, 2).unwrap()), Err(CapacityError::SingleDatabase));
    }

    #[test]
    fn boundary_rows() {
        let csv = boundary_csv(2, 2, &boundary_samples(2, 4)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "rho_u,d_min,rho_s_min");
        assert_eq!(lines[1], "0,2,1");
        assert_eq!(lines[2], "1/4,3/2,3/4");
        assert_eq!(lines.len(), 6);
        assert_eq!(boundary_csv(1, 2, &boundary_samples(1, 2)).unwrap().lines().count(), 4);
    }

    fn random_triple(rng: &mut impl UniformSource) -> RateTriple {
        let mut v = || Rational::new(rng.below(40) as i128, 8);
        RateTriple::new(v(), v(), v())
    }

    #[test]
    fn minimal_bounds_are_feasible_and_tight() {
        let mut rng = Seed::from_u64(8).stream();
        for _ in 0..200 {
            let n = rng.below(3) as usize + 2;
            let k = rng.below(3) as usize + 2;
            let u = Rational::new(rng.below(20) as i128, 16);
            let (d, s) = minimal_bounds(n, k, u).unwrap().unwrap();
            assert!(check_region(n, k, t(d, s, u)).unwrap().feasible);
            let eps = r(1, 1000);
            assert!(!check_region(n, k, t(d - eps, s, u)).unwrap().feasible);
            assert!(!check_region(n, k, t(d, s - eps, u)).unwrap().feasible);
        }
    }

    #[test]
    fn time_share_padding_is_nonnegative_for_feasible_targets() {
        let mut rng = Seed::from_u64(9).stream();
        let mut seen = 0;
        for _ in 0..2000 {
            let n = rng.below(3) as usize + 2;
            let k = rng.below(3) as usize + 2;
            let target = random_triple(&mut rng);
            if let TimeShare::Plan(p) = time_share_plan(n, k, target).unwrap() {
                seen += 1;
                assert!(!p.padding.shared.is_negative() && !p.padding.rho_s.is_negative() && !p.padding.d.is_negative(), "{target}");
                assert!(check_region(n, k, p.mixture).unwrap().feasible);
            }
        }
        assert!(seen > 100);
    }

    proptest! {
        #[test]
        fn region_is_monotone(n in 1usize..=4, k in 2usize..=4, d in 0i128..48, s in 0i128..48, u in 0i128..24, inc in 0i128..16, which in 0usize..3) {
            let base = t(r(d, 8), r(s, 8), r(u, 8));
            let delta = r(inc, 8);
            // rho_U alone is not monotone: raising it shrinks rho_S - rho_U
            let bigger = match which {
                0 => t(base.d + delta, base.rho_s, base.rho_u),
                1 => t(base.d, base.rho_s + delta, base.rho_u),
                _ => t(base.d, base.rho_s + delta, base.rho_u + delta),
            };
            if check_region(n, k, base).unwrap().feasible {
                prop_assert!(check_region(n, k, bigger).unwrap().feasible);
            }
        }
    }
}
