//! Splitting a total sampling budget `N = n_r + n_b` between the groups.

use serde::{Deserialize, Serialize};

use crate::bounds::{combined_excess_bound, BoundConfig};
use crate::error::{FafError, Result};
use crate::model::Weight;

/// Relative tolerance under which two objective values count as tied.
pub const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationRegime {
    KnownCovRule,
    BoundSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub n_r: usize,
    pub n_b: usize,
    pub regime: AllocationRegime,
    /// For the known-covariance rule, `λ²ρ_r²/n_r + (1 − λ)²ρ_b²/n_b`; for
    /// the bound search, the combined excess bound at the plan.
    pub objective_value: f64,
}

/// `λ²ρ_r²/n_r + (1 − λ)²ρ_b²/n_b`.
pub fn known_cov_objective(lambda: Weight, rho_r: f64, rho_b: f64, n_r: usize, n_b: usize) -> f64 {
    let l = lambda.value();
    l * l * rho_r * rho_r / n_r as f64 + (1.0 - l) * (1.0 - l) * rho_b * rho_b / n_b as f64
}

fn check_budget(budget: usize, floor: usize) -> Result<()> {
    if budget < 2 {
        return Err(FafError::Invalid(format!("budget must be at least 2, got {budget}")));
    }
    if budget < 2 * floor {
        return Err(FafError::Precondition(format!(
            "n_g >= d for both groups needs budget >= 2d: budget = {budget}, d = {floor}"
        )));
    }
    Ok(())
}

/// `true` when `a` beats `b` (as `(objective, n_r)` pairs) under the
/// tie-break rule: lower objective, then smaller `|n_r − n_b|`, then lower `n_r`.
fn better(a: (f64, usize), b: (f64, usize), budget: usize) -> bool {
    let scale = a.0.abs().max(b.0.abs());
    if (a.0 - b.0).abs() > TIE_RTOL * scale {
        return a.0 < b.0;
    }
    let imbalance = |n_r: usize| n_r.abs_diff(budget - n_r);
    (imbalance(a.1), a.1) < (imbalance(b.1), b.1)
}

/// Neyman-type rule `n_r/n_b = λρ_r/((1 − λ)ρ_b)` rounded to the better
/// integer neighbour. Each group receives at least `floor` samples (minimum 1).
pub fn known_cov_allocation(budget: usize, lambda: Weight, rho_r: f64, rho_b: f64, floor: usize) -> Result<AllocationPlan> {
    let floor = floor.max(1);
    check_budget(budget, floor)?;
    if !(rho_r > 0.0 && rho_b > 0.0) {
        return Err(FafError::Invalid("rho_r and rho_b must be positive".into()));
    }
    let l = lambda.value();
    let target = budget as f64 * l * rho_r / (l * rho_r + (1.0 - l) * rho_b);
    let (lo, hi) = (floor, budget - floor);
    let clamp = |x: f64| (x.max(lo as f64).min(hi as f64)) as usize;
    let candidates = [clamp(target.floor()), clamp(target.ceil())];
    let eval = |n_r: usize| (known_cov_objective(lambda, rho_r, rho_b, n_r, budget - n_r), n_r);
    let mut best = eval(candidates[0]);
    let other = eval(candidates[1]);
    if better(other, best, budget) {
        best = other;
    }
    Ok(AllocationPlan {
        n_r: best.1,
        n_b: budget - best.1,
        regime: AllocationRegime::KnownCovRule,
        objective_value: best.0,
    })
}

/// Exhaustive scan of the combined pooled-OLS excess bound over all splits
/// with `n_g ≥ floor`. `cfg.n_r` and `cfg.n_b` are ignored.
pub fn unknown_cov_allocation(budget: usize, cfg: &BoundConfig, floor: usize) -> Result<AllocationPlan> {
    let floor = floor.max(1);
    check_budget(budget, floor)?;
    let mut probe = cfg.clone();
    let mut best: Option<(f64, usize)> = None;
    for n_r in floor..=budget - floor {
        probe.n_r = n_r;
        probe.n_b = budget - n_r;
        let cand = (combined_excess_bound(&probe)?.value, n_r);
        if best.is_none_or(|b| better(cand, b, budget)) {
            best = Some(cand);
        }
    }
    let (objective_value, n_r) = best.expect("nonempty scan range");
    Ok(AllocationPlan {
        n_r,
        n_b: budget - n_r,
        regime: AllocationRegime::BoundSearch,
        objective_value,
    })
}

/// Allocation request shared by the CLI and the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocateRequest {
    pub budget: usize,
    pub config: BoundConfig,
    #[serde(default = "default_regime")]
    pub regime: AllocationRegime,
    /// Per-group minimum; defaults to `config.d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<usize>,
}

fn default_regime() -> AllocationRegime {
    AllocationRegime::BoundSearch
}

pub fn allocate(req: &AllocateRequest) -> Result<AllocationPlan> {
    let floor = req.floor.unwrap_or(req.config.d);
    let c = &req.config;
    match req.regime {
        AllocationRegime::KnownCovRule => known_cov_allocation(req.budget, c.lambda, c.rho_r, c.rho_b, floor),
        AllocationRegime::BoundSearch => unknown_cov_allocation(req.budget, c, floor),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(l: f64) -> Weight {
        Weight::new(l).unwrap()
    }

    fn brute_known(budget: usize, lambda: Weight, rho_r: f64, rho_b: f64, floor: usize) -> (usize, f64) {
        (floor..=budget - floor)
            .map(|n| (n, known_cov_objective(lambda, rho_r, rho_b, n, budget - n)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
    }

    #[test]
    fn symmetric_split_is_even() {
        let p = known_cov_allocation(100, w(0.5), 1.0, 1.0, 1).unwrap();
        assert_eq!((p.n_r, p.n_b), (50, 50));
    }

    #[test]
    fn nine_to_one() {
        let p = known_cov_allocation(100, w(0.9), 1.0, 1.0, 1).unwrap();
        assert_eq!((p.n_r, p.n_b), (90, 10));
        assert!((p.objective_value - (0.81 / 90.0 + 0.01 / 10.0)).abs() < 1e-15);
    }

    #[test]
    fn known_rule_matches_brute_force() {
        for &(l, rr, rb) in &[(0.3, 1.0, 2.0), (0.77, 0.4, 1.3), (0.5, 3.0, 1.0), (0.05, 1.0, 1.0), (0.999, 1.0, 1.0)] {
            for budget in [7, 100, 333] {
                let p = known_cov_allocation(budget, w(l), rr, rb, 2).unwrap();
                let (n, v) = brute_known(budget, w(l), rr, rb, 2);
                assert!((p.objective_value - v).abs() <= 1e-14 * v, "l={l} budget={budget}: {} vs {n}", p.n_r);
            }
        }
    }

    #[test]
    fn endpoints_leave_floor_to_unweighted_group() {
        let p = known_cov_allocation(100, w(1.0), 1.0, 1.0, 3).unwrap();
        assert_eq!((p.n_r, p.n_b), (97, 3));
        let p = known_cov_allocation(100, w(0.0), 1.0, 1.0, 3).unwrap();
        assert_eq!((p.n_r, p.n_b), (3, 97));
    }

    #[test]
    fn budget_errors() {
        assert!(matches!(known_cov_allocation(1, w(0.5), 1.0, 1.0, 1), Err(FafError::Invalid(_))));
        let cfg = BoundConfig::gaussian(5, 0, 0, w(0.5), 1.0, 1.0, 1.0, 1.0);
        match unknown_cov_allocation(9, &cfg, 5) {
            Err(FafError::Precondition(m)) => assert!(m.contains("n_g >= d")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bound_search_without_heterogeneity_matches_rule() {
        for l in [0.2, 0.5, 0.9] {
            let cfg = BoundConfig::gaussian(2, 0, 0, w(l), 1.3, 0.7, 1.0, 0.0);
            let a = unknown_cov_allocation(200, &cfg, 2).unwrap();
            let b = known_cov_allocation(200, w(l), 1.3, 0.7, 2).unwrap();
            assert_eq!((a.n_r, a.n_b), (b.n_r, b.n_b), "lambda {l}");
        }
    }

    #[test]
    fn bound_search_balances_when_bias_dominates() {
        let cfg = BoundConfig::gaussian(2, 0, 0, w(0.9), 1.0, 1.0, 1e-6, 100.0);
        let p = unknown_cov_allocation(200, &cfg, 2).unwrap();
        assert!(p.n_r.abs_diff(p.n_b) <= 2, "{p:?}");
    }

    #[test]
    fn bound_search_is_argmin() {
        let cfg = BoundConfig::gaussian(3, 0, 0, w(0.7), 1.1, 0.8, 1.0, 0.6);
        let p = unknown_cov_allocation(200, &cfg, 3).unwrap();
        let mut c = cfg.clone();
        for n in 3..=197 {
            c.n_r = n;
            c.n_b = 200 - n;
            assert!(p.objective_value <= combined_excess_bound(&c).unwrap().value * (1.0 + TIE_RTOL));
        }
    }

    #[test]
    fn ties_prefer_balance_then_lower_n_r() {
        assert!(better((1.0, 50), (1.0, 49), 100));
        assert!(better((1.0, 49), (1.0, 51), 100));
        assert!(better((0.5, 90), (1.0, 50), 100));
    }
}
