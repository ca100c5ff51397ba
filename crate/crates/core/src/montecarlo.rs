//! Seeded Monte Carlo replicate engine.
//!
//! Replicate `i` draws its red then blue sample from stream `i` of the
//! master seed, so results do not depend on thread scheduling. Per-replicate
//! records are collected in index order and reduced by pairwise summation.
//! Population quantities are evaluated in closed form.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_gen::{
    build_assouad_bias_instance, build_assouad_variance_instance, GroupDataset, GroupSampler, SignVector,
};
use crate::error::{FafError, Result};
use crate::estimators::{blended_moments, empirical_moments, EmpiricalMoments, EstimatorKind};
use crate::linalg::{mahalanobis_sq, spd_solve, spd_solve_matrix};
use crate::model::{Group, PopulationModel, RiskPair, Weight};
use crate::rng::RngSpec;

pub const DEFAULT_REPLICATES: usize = 10_000;

/// Largest `d` for which every sign pattern is enumerated.
pub const MAX_EXHAUSTIVE_DIM: usize = 12;

const WEIGHTED_EXCESS_TOL: f64 = 1e-12;

fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

/// Sum by recursive halving.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sample mean and its standard error `sd/√m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// A single sample has `se = 0`.
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let m = xs.len();
        if m == 0 {
            return Estimate { mean: f64::NAN, se: f64::NAN };
        }
        let mean = pairwise_sum(xs) / m as f64;
        if m == 1 {
            return Estimate { mean, se: 0.0 };
        }
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&dev) / (m - 1) as f64;
        Estimate { mean, se: (var / m as f64).sqrt() }
    }

    /// `|mean − target| ≤ k·se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerGroup<T> {
    pub red: T,
    pub blue: T,
}

impl<T: Copy> PerGroup<T> {
    pub fn get(&self, g: Group) -> T {
        match g {
            Group::Red => self.red,
            Group::Blue => self.blue,
        }
    }
}

impl<T> PerGroup<T> {
    fn from_fn(mut f: impl FnMut(Group) -> T) -> Self {
        PerGroup {
            red: f(Group::Red),
            blue: f(Group::Blue),
        }
    }
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Runs `f` for replicates `0..replicates` in parallel. Rank-deficient
/// replicates are counted and dropped; any other error aborts the run with
/// the lowest-index failure.
fn replicate_map<T: Send>(replicates: usize, f: impl Fn(u64) -> Result<T> + Sync) -> Result<(Vec<T>, usize)> {
    let raw: Vec<Result<T>> = (0..replicates as u64).into_par_iter().map(&f).collect();
    let mut out = Vec::with_capacity(raw.len());
    let mut rank_deficient = 0;
    for r in raw {
        match r {
            Ok(v) => out.push(v),
            Err(FafError::RankDeficient { .. }) => rank_deficient += 1,
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(FafError::Numerical(format!(
            "all {replicates} replicates were rank-deficient"
        )));
    }
    Ok((out, rank_deficient))
}

struct Draw {
    data_r: GroupDataset,
    eps_r: DVector<f64>,
    data_b: GroupDataset,
    eps_b: DVector<f64>,
}

struct Samplers {
    red: GroupSampler,
    blue: GroupSampler,
}

impl Samplers {
    fn new(model: &PopulationModel) -> Result<Self> {
        Ok(Samplers {
            red: GroupSampler::new(model, Group::Red)?,
            blue: GroupSampler::new(model, Group::Blue)?,
        })
    }

    fn draw(&self, seed: u64, replicate: u64, n_r: usize, n_b: usize) -> Draw {
        let mut stream = RngSpec::new(seed, replicate).normals();
        let (data_r, eps_r) = self.red.draw(n_r, &mut stream);
        let (data_b, eps_b) = self.blue.draw(n_b, &mut stream);
        Draw { data_r, eps_r, data_b, eps_b }
    }

    fn moments(&self, seed: u64, replicate: u64, n_r: usize, n_b: usize) -> Result<(EmpiricalMoments, EmpiricalMoments)> {
        let d = self.draw(seed, replicate, n_r, n_b);
        Ok((empirical_moments(&d.data_r)?, empirical_moments(&d.data_b)?))
    }
}

/// Groups whose sample covariance the estimator inverts.
fn used_groups(estimator: EstimatorKind, lambda: Weight) -> Vec<Group> {
    match estimator {
        EstimatorKind::GroupOls(g) => vec![g],
        EstimatorKind::KnownCov | EstimatorKind::PooledOls => match lambda.value() {
            l if l == 1.0 => vec![Group::Red],
            l if l == 0.0 => vec![Group::Blue],
            _ => vec![Group::Red, Group::Blue],
        },
    }
}

fn check_sizes(model: &PopulationModel, n_r: usize, n_b: usize, used: &[Group], replicates: usize) -> Result<()> {
    if replicates == 0 {
        return Err(FafError::Invalid("replicates must be at least 1".into()));
    }
    let d = model.dim();
    for g in Group::BOTH {
        let n = if g == Group::Red { n_r } else { n_b };
        if n == 0 {
            return Err(FafError::Invalid(format!("n_{} must be at least 1", g.as_str())));
        }
        if used.contains(&g) && n < d {
            return Err(FafError::Precondition(format!(
                "n_g >= d violated: n_{} = {n} < d = {d}",
                g.as_str()
            )));
        }
    }
    Ok(())
}

/// One Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub model: PopulationModel,
    pub lambda: Weight,
    pub n_r: usize,
    pub n_b: usize,
    pub estimator: EstimatorKind,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        check_sizes(
            &self.model,
            self.n_r,
            self.n_b,
            &used_groups(self.estimator, self.lambda),
            self.replicates,
        )
    }
}

/// Excess-risk report. Field order is part of the JSON format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub estimator: EstimatorKind,
    pub lambda: f64,
    pub n_r: usize,
    pub n_b: usize,
    pub replicates: usize,
    pub seed: u64,
    pub valid_replicates: usize,
    pub rank_deficient_count: usize,
    pub rank_deficient: bool,
    /// `R_λ(β̂) − R_λ(β_λ)`.
    pub mean_excess: Estimate,
    /// `R_g(β̂) − R_g(β_λ)`.
    pub per_group_excess: PerGroup<Estimate>,
    /// `‖β̂ − β_λ‖²_{Σ_g}`.
    pub mean_quadratic: PerGroup<Estimate>,
    /// `2(β̂ − β_λ)ᵀΣ_g(β_λ − β_g)`.
    pub mean_cross: PerGroup<Estimate>,
    /// Fraction of replicates with `R_g(β̂) < R_g(β_λ)`.
    pub frac_group_improved: PerGroup<Estimate>,
    pub both_improved_count: usize,
    /// Per-coordinate `β̂ − β_λ`.
    pub mean_error: Vec<Estimate>,
    /// `‖mean(β̂) − β_λ‖²`.
    pub bias_vector_norm_sq: f64,
    pub min_weighted_excess: f64,
    /// Largest `|λ·cross_r + (1 − λ)·cross_b|` over replicates.
    pub max_cross_cancellation_residual: f64,
}

impl McReport {
    /// Fails when any replicate was rank-deficient.
    pub fn ensure_clean(&self) -> Result<()> {
        if self.rank_deficient {
            return Err(FafError::Numerical(format!(
                "{} of {} replicates had a singular sample covariance",
                self.rank_deficient_count, self.replicates
            )));
        }
        Ok(())
    }
}

struct ExcessRecord {
    quad: [f64; 2],
    cross: [f64; 2],
    weighted: f64,
    error: DVector<f64>,
}

pub fn run_excess_mc(cfg: &McConfig) -> Result<McReport> {
    cfg.validate()?;
    let model = &cfg.model;
    let lambda = cfg.lambda;
    let l = lambda.value();
    let opt = model.optimal_beta(lambda)?;
    let samplers = Samplers::new(model)?;
    let (records, rank_deficient) = replicate_map(cfg.replicates, |i| {
        let (mr, mb) = samplers.moments(cfg.master_seed, i, cfg.n_r, cfg.n_b)?;
        let beta = cfg.estimator.fit_moments(model, &mr, &mb, lambda)?;
        let split = |g| model.per_group_excess_at(g, &beta, &opt);
        let (r, b) = (split(Group::Red), split(Group::Blue));
        let weighted = l * (r.quadratic + r.cross) + (1.0 - l) * (b.quadratic + b.cross);
        let scale = 1.0 + l * (r.quadratic + r.cross.abs()) + (1.0 - l) * (b.quadratic + b.cross.abs());
        if weighted < -WEIGHTED_EXCESS_TOL * scale {
            return Err(FafError::Numerical(format!(
                "weighted excess {weighted} < 0 at replicate {i}"
            )));
        }
        Ok(ExcessRecord {
            quad: [r.quadratic, b.quadratic],
            cross: [r.cross, b.cross],
            weighted,
            error: beta - &opt,
        })
    })?;

    let col = |f: &dyn Fn(&ExcessRecord) -> f64| -> Vec<f64> { records.iter().map(f).collect() };
    let gi = |g: Group| if g == Group::Red { 0 } else { 1 };
    let d = model.dim();
    let mean_error: Vec<Estimate> = (0..d).map(|a| Estimate::from_samples(&col(&|r| r.error[a]))).collect();
    let bias_vector_norm_sq = mean_error.iter().map(|e| e.mean * e.mean).sum();
    let improved = |r: &ExcessRecord, k: usize| r.quad[k] + r.cross[k] < 0.0;
    Ok(McReport {
        estimator: cfg.estimator,
        lambda: l,
        n_r: cfg.n_r,
        n_b: cfg.n_b,
        replicates: cfg.replicates,
        seed: cfg.master_seed,
        valid_replicates: records.len(),
        rank_deficient_count: rank_deficient,
        rank_deficient: rank_deficient > 0,
        mean_excess: Estimate::from_samples(&col(&|r| r.weighted)),
        per_group_excess: PerGroup::from_fn(|g| {
            let k = gi(g);
            Estimate::from_samples(&col(&|r| r.quad[k] + r.cross[k]))
        }),
        mean_quadratic: PerGroup::from_fn(|g| {
            let k = gi(g);
            Estimate::from_samples(&col(&|r| r.quad[k]))
        }),
        mean_cross: PerGroup::from_fn(|g| {
            let k = gi(g);
            Estimate::from_samples(&col(&|r| r.cross[k]))
        }),
        frac_group_improved: PerGroup::from_fn(|g| {
            let k = gi(g);
            Estimate::from_samples(&col(&|r| if improved(r, k) { 1.0 } else { 0.0 }))
        }),
        both_improved_count: records.iter().filter(|r| improved(r, 0) && improved(r, 1)).count(),
        mean_error,
        bias_vector_norm_sq,
        min_weighted_excess: records.iter().map(|r| r.weighted).fold(f64::INFINITY, f64::min),
        max_cross_cancellation_residual: records
            .iter()
            .map(|r| (l * r.cross[0] + (1.0 - l) * r.cross[1]).abs())
            .fold(0.0, f64::max),
    })
}

/// Monte Carlo estimate with its rank-deficiency count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub value: Estimate,
    pub valid_replicates: usize,
    pub rank_deficient_count: usize,
}

/// Estimates
/// `λ²(σ²/n_r) E Tr(Σ_gΣ_λ⁻¹Σ_rΣ̂_r⁻¹Σ_rΣ_λ⁻¹) + (1−λ)²(σ²/n_b) E Tr(Σ_gΣ_λ⁻¹Σ_bΣ̂_b⁻¹Σ_bΣ_λ⁻¹)`,
/// the exact known-covariance risk `E‖β̃_λ − β_λ‖²_{Σ_g}`, by sampling the
/// design only.
#[allow(clippy::too_many_arguments)]
pub fn exact_risk_rhs_mc(
    model: &PopulationModel,
    lambda: Weight,
    n_r: usize,
    n_b: usize,
    group: Group,
    replicates: usize,
    seed: u64,
) -> Result<TraceEstimate> {
    check_sizes(model, n_r, n_b, &used_groups(EstimatorKind::KnownCov, lambda), replicates)?;
    let l = lambda.value();
    let d = model.dim();
    let sigma_l_inv = spd_solve_matrix(&model.sigma_lambda(lambda), &DMatrix::identity(d, d), "sigma_lambda")?;
    let m_g = &sigma_l_inv * &model.group(group).sigma * &sigma_l_inv;
    // Tr(Σ_g Σ_λ⁻¹ Σ_h Σ̂_h⁻¹ Σ_h Σ_λ⁻¹) = Tr(Σ̂_h⁻¹ Q_h), Q_h = Σ_h M_g Σ_h
    let q = PerGroup::from_fn(|h| {
        let s = &model.group(h).sigma;
        s * &m_g * s
    });
    let weights = [
        l * l * model.noise_var / n_r as f64,
        (1.0 - l) * (1.0 - l) * model.noise_var / n_b as f64,
    ];
    let samplers = Samplers::new(model)?;
    let (values, rank_deficient) = replicate_map(replicates, |i| {
        let (mr, mb) = samplers.moments(seed, i, n_r, n_b)?;
        let mut total = 0.0;
        for (k, (mom, qh)) in [(&mr, &q.red), (&mb, &q.blue)].into_iter().enumerate() {
            if weights[k] == 0.0 {
                continue;
            }
            if mom.n < d {
                return Err(FafError::RankDeficient {
                    what: format!("sigma_hat_{}", mom.group),
                    min_pivot: 0.0,
                    max_pivot: 0.0,
                });
            }
            let sol = spd_solve_matrix(&mom.sigma_hat, qh, &format!("sigma_hat_{}", mom.group))?;
            total += weights[k] * sol.trace();
        }
        Ok(total)
    })?;
    Ok(TraceEstimate {
        value: Estimate::from_samples(&values),
        valid_replicates: values.len(),
        rank_deficient_count: rank_deficient,
    })
}

/// Pooled-OLS error split `β̂_λ − β_λ = Σ̂_λ⁻¹(Z + B)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub lambda: f64,
    pub n_r: usize,
    pub n_b: usize,
    pub replicates: usize,
    pub seed: u64,
    pub valid_replicates: usize,
    pub rank_deficient_count: usize,
    /// `‖β̂_λ − β_λ‖²_{Σ_g}`.
    pub total: PerGroup<Estimate>,
    /// `‖Σ̂_λ⁻¹Z‖²_{Σ_g}`.
    pub variance: PerGroup<Estimate>,
    /// `‖Σ̂_λ⁻¹B‖²_{Σ_g}`.
    pub bias: PerGroup<Estimate>,
    /// `total − variance − bias`; zero in expectation.
    pub cross: PerGroup<Estimate>,
    pub max_abs_variance: PerGroup<f64>,
    pub max_abs_bias: PerGroup<f64>,
    /// Largest relative gap between the algebraic split and the
    /// zero-noise refit.
    pub max_route_gap: f64,
}

struct DecompRecord {
    total: [f64; 2],
    variance: [f64; 2],
    bias: [f64; 2],
    route_gap: f64,
}

pub fn decomposition_mc(cfg: &McConfig) -> Result<DecompositionReport> {
    if cfg.estimator != EstimatorKind::PooledOls {
        return Err(FafError::Invalid("decomposition requires the pooled_ols estimator".into()));
    }
    cfg.validate()?;
    let model = &cfg.model;
    let lambda = cfg.lambda;
    let l = lambda.value();
    let opt = model.optimal_beta(lambda)?;
    let samplers = Samplers::new(model)?;
    let shift_r = &model.red.beta - &opt;
    let shift_b = &model.blue.beta - &opt;
    let (records, rank_deficient) = replicate_map(cfg.replicates, |i| {
        let draw = samplers.draw(cfg.master_seed, i, cfg.n_r, cfg.n_b);
        let mr = empirical_moments(&draw.data_r)?;
        let mb = empirical_moments(&draw.data_b)?;
        for m in used_groups(EstimatorKind::PooledOls, lambda) {
            let mom = if m == Group::Red { &mr } else { &mb };
            if mom.n < mom.dim() {
                return Err(FafError::RankDeficient {
                    what: format!("sigma_hat_{m}"),
                    min_pivot: 0.0,
                    max_pivot: 0.0,
                });
            }
        }
        let (sigma_hat_l, nu_hat_l) = blended_moments(&mr, &mb, lambda);
        let z = (draw.data_r.xs.transpose() * &draw.eps_r) * (l / cfg.n_r as f64)
            + (draw.data_b.xs.transpose() * &draw.eps_b) * ((1.0 - l) / cfg.n_b as f64);
        let b = (&mr.sigma_hat * &shift_r) * l + (&mb.sigma_hat * &shift_b) * (1.0 - l);
        let beta_hat = spd_solve(&sigma_hat_l, &nu_hat_l, "sigma_hat_lambda")?;
        let zv = spd_solve(&sigma_hat_l, &z, "sigma_hat_lambda")?;
        let bv = spd_solve(&sigma_hat_l, &b, "sigma_hat_lambda")?;
        // zero-noise refit on the same design: ν̂_g = Σ̂_g β_g
        let nu0 = (&mr.sigma_hat * &model.red.beta) * l + (&mb.sigma_hat * &model.blue.beta) * (1.0 - l);
        let beta0 = spd_solve(&sigma_hat_l, &nu0, "sigma_hat_lambda")?;
        let err = &beta_hat - &opt;
        let bias_refit = &beta0 - &opt;
        let var_refit = &beta_hat - &beta0;
        let mut rec = DecompRecord {
            total: [0.0; 2],
            variance: [0.0; 2],
            bias: [0.0; 2],
            route_gap: 0.0,
        };
        for (k, g) in Group::BOTH.into_iter().enumerate() {
            let s = &model.group(g).sigma;
            rec.total[k] = mahalanobis_sq(&err, s);
            rec.variance[k] = mahalanobis_sq(&zv, s);
            rec.bias[k] = mahalanobis_sq(&bv, s);
            let gv = (rec.variance[k] - mahalanobis_sq(&var_refit, s)).abs() / (1.0 + rec.variance[k]);
            let gb = (rec.bias[k] - mahalanobis_sq(&bias_refit, s)).abs() / (1.0 + rec.bias[k]);
            rec.route_gap = rec.route_gap.max(gv).max(gb);
        }
        Ok(rec)
    })?;
    let est = |f: &dyn Fn(&DecompRecord, usize) -> f64| {
        PerGroup::from_fn(|g| {
            let k = if g == Group::Red { 0 } else { 1 };
            Estimate::from_samples(&records.iter().map(|r| f(r, k)).collect::<Vec<_>>())
        })
    };
    let max_abs = |f: &dyn Fn(&DecompRecord, usize) -> f64| {
        PerGroup::from_fn(|g| {
            let k = if g == Group::Red { 0 } else { 1 };
            records.iter().map(|r| f(r, k).abs()).fold(0.0, f64::max)
        })
    };
    Ok(DecompositionReport {
        lambda: l,
        n_r: cfg.n_r,
        n_b: cfg.n_b,
        replicates: cfg.replicates,
        seed: cfg.master_seed,
        valid_replicates: records.len(),
        rank_deficient_count: rank_deficient,
        total: est(&|r, k| r.total[k]),
        variance: est(&|r, k| r.variance[k]),
        bias: est(&|r, k| r.bias[k]),
        cross: est(&|r, k| r.total[k] - r.variance[k] - r.bias[k]),
        max_abs_variance: max_abs(&|r, k| r.variance[k]),
        max_abs_bias: max_abs(&|r, k| r.bias[k]),
        max_route_gap: records.iter().map(|r| r.route_gap).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryReport {
    pub valid_replicates: usize,
    pub frac_group_improved: PerGroup<Estimate>,
    /// Replicates in which both groups improved; zero whenever the weighted
    /// excess is nonnegative.
    pub both_improved_count: usize,
}

/// How often each group ends up better off under the known-covariance
/// estimator than under β_λ.
pub fn realization_asymmetry_mc(cfg: &McConfig) -> Result<AsymmetryReport> {
    if cfg.estimator != EstimatorKind::KnownCov {
        return Err(FafError::Invalid("realization asymmetry requires the known_cov estimator".into()));
    }
    if cfg.lambda.is_endpoint() {
        return Err(FafError::Invalid("realization asymmetry requires lambda in (0, 1)".into()));
    }
    let rep = run_excess_mc(cfg)?;
    Ok(AsymmetryReport {
        valid_replicates: rep.valid_replicates,
        frac_group_improved: rep.frac_group_improved,
        both_improved_count: rep.both_improved_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub mean_excess: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    /// Delta-method standard error from the per-point SEs.
    pub slope_se: f64,
    pub intercept: f64,
    pub points: Vec<RatePoint>,
}

/// Least-squares slope of `log mean_excess` against `log n` with
/// `n_r = n_b = n` at every grid point.
pub fn rate_fit(template: &McConfig, n_grid: &[usize]) -> Result<RateFit> {
    if n_grid.len() < 4 {
        return Err(FafError::Invalid(format!("rate fit needs at least 4 sample sizes, got {}", n_grid.len())));
    }
    if n_grid.windows(2).any(|w| w[1] <= w[0]) || n_grid[0] == 0 {
        return Err(FafError::Invalid("rate fit grid must be positive and increasing".into()));
    }
    let ratios: Vec<f64> = n_grid.windows(2).map(|w| w[1] as f64 / w[0] as f64).collect();
    if ratios.iter().any(|r| (r / ratios[0] - 1.0).abs() > 0.05) {
        return Err(FafError::Invalid("rate fit grid must be geometric".into()));
    }
    let mut points = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut cfg = template.clone();
        cfg.n_r = n;
        cfg.n_b = n;
        let rep = run_excess_mc(&cfg)?;
        rep.ensure_clean()?;
        if rep.mean_excess.mean <= 0.0 {
            return Err(FafError::Invalid(format!(
                "mean excess is {} at n = {n}; a log-log fit needs positive excess (use noise_var > 0)",
                rep.mean_excess.mean
            )));
        }
        points.push(RatePoint { n, mean_excess: rep.mean_excess });
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_excess.mean.ln()).collect();
    let k = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / k;
    let ybar = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let var: f64 = xs
        .iter()
        .zip(&points)
        .map(|(x, p)| {
            let rel = p.mean_excess.se / p.mean_excess.mean;
            (x - xbar) * (x - xbar) * rel * rel
        })
        .sum();
    Ok(RateFit {
        slope,
        slope_se: var.sqrt() / sxx,
        intercept: ybar - slope * xbar,
        points,
    })
}

/// Summary of the empirical risk cloud at one weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub lambda: f64,
    pub pop_risk_r: f64,
    pub pop_risk_b: f64,
    pub q05_r: f64,
    pub q50_r: f64,
    pub q95_r: f64,
    pub q05_b: f64,
    pub q50_b: f64,
    pub q95_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierBand {
    pub rows: Vec<BandRow>,
    /// Replicate risk pairs per weight, present when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clouds: Option<Vec<Vec<RiskPair>>>,
    /// Pairs falling strictly below the line `λx + (1−λ)y = R_λ(β_λ)`.
    pub below_line_count: usize,
    pub valid_replicates: usize,
    pub rank_deficient_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub model: PopulationModel,
    pub grid: Vec<Weight>,
    pub n_r: usize,
    pub n_b: usize,
    pub estimator: EstimatorKind,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub keep_cloud: bool,
}

/// Population frontier with the empirical risk cloud of `estimator` around
/// each point. Replicate `i` reuses the same sample across all weights.
pub fn frontier_band_mc(cfg: &BandConfig) -> Result<FrontierBand> {
    if cfg.grid.is_empty() {
        return Err(FafError::Invalid("lambda grid is empty".into()));
    }
    let mut used: Vec<Group> = cfg.grid.iter().flat_map(|&l| used_groups(cfg.estimator, l)).collect();
    used.sort_by_key(|g| g.as_str());
    used.dedup();
    check_sizes(&cfg.model, cfg.n_r, cfg.n_b, &used, cfg.replicates)?;
    let model = &cfg.model;
    let opts: Vec<DVector<f64>> = cfg.grid.iter().map(|&l| model.optimal_beta(l)).collect::<Result<_>>()?;
    let pops: Vec<RiskPair> = opts.iter().map(|b| model.risk_pair(b)).collect::<Result<_>>()?;
    let samplers = Samplers::new(model)?;
    let (clouds, rank_deficient) = replicate_map(cfg.replicates, |i| {
        let (mr, mb) = samplers.moments(cfg.master_seed, i, cfg.n_r, cfg.n_b)?;
        cfg.grid
            .iter()
            .map(|&l| model.risk_pair(&cfg.estimator.fit_moments(model, &mr, &mb, l)?))
            .collect::<Result<Vec<RiskPair>>>()
    })?;
    let mut rows = Vec::with_capacity(cfg.grid.len());
    let mut below = 0;
    for (j, (&lambda, pop)) in cfg.grid.iter().zip(&pops).enumerate() {
        let l = lambda.value();
        let floor = l * pop.risk_r + (1.0 - l) * pop.risk_b;
        let mut rs: Vec<f64> = Vec::with_capacity(clouds.len());
        let mut bs: Vec<f64> = Vec::with_capacity(clouds.len());
        for c in &clouds {
            let p = c[j];
            if l * p.risk_r + (1.0 - l) * p.risk_b < floor - WEIGHTED_EXCESS_TOL * (1.0 + floor) {
                below += 1;
            }
            rs.push(p.risk_r);
            bs.push(p.risk_b);
        }
        rs.sort_by(f64::total_cmp);
        bs.sort_by(f64::total_cmp);
        rows.push(BandRow {
            lambda: l,
            pop_risk_r: pop.risk_r,
            pop_risk_b: pop.risk_b,
            q05_r: quantile(&rs, 0.05),
            q50_r: quantile(&rs, 0.5),
            q95_r: quantile(&rs, 0.95),
            q05_b: quantile(&bs, 0.05),
            q50_b: quantile(&bs, 0.5),
            q95_b: quantile(&bs, 0.95),
        });
    }
    let valid = clouds.len();
    let clouds = cfg.keep_cloud.then(|| {
        (0..cfg.grid.len())
            .map(|j| clouds.iter().map(|c| c[j]).collect())
            .collect()
    });
    Ok(FrontierBand {
        rows,
        clouds,
        below_line_count: below,
        valid_replicates: valid,
        rank_deficient_count: rank_deficient,
    })
}

pub const BAND_CSV_HEADER: &str = "lambda,pop_risk_r,pop_risk_b,q05_r,q50_r,q95_r,q05_b,q50_b,q95_b";

pub fn write_band_csv<W: std::io::Write>(band: &FrontierBand, mut out: W) -> Result<()> {
    use crate::io::fmt17;
    writeln!(out, "{BAND_CSV_HEADER}")?;
    for r in &band.rows {
        let cols = [
            r.lambda, r.pop_risk_r, r.pop_risk_b, r.q05_r, r.q50_r, r.q95_r, r.q05_b, r.q50_b, r.q95_b,
        ];
        writeln!(out, "{}", cols.map(fmt17).join(","))?;
    }
    Ok(())
}

/// Hypercube family probed by [`assouad_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceFamily {
    /// Mean hypercube; both groups share the sign pattern.
    Variance { d: usize, rho_r: f64, rho_b: f64, noise_var: f64 },
    /// Covariance hypercube on `perturbed_group`, built for that group's
    /// sample size.
    Bias {
        beta_r: Vec<f64>,
        beta_b: Vec<f64>,
        rho_r: f64,
        rho_b: f64,
        perturbed_group: Group,
        noise_var: f64,
    },
}

impl InstanceFamily {
    pub fn dim(&self) -> usize {
        match self {
            InstanceFamily::Variance { d, .. } => *d,
            InstanceFamily::Bias { beta_r, .. } => beta_r.len(),
        }
    }

    /// Model at sign pattern `xi`.
    pub fn instance(&self, xi: &SignVector, n_r: usize, n_b: usize) -> Result<PopulationModel> {
        match self {
            InstanceFamily::Variance { rho_r, rho_b, noise_var, .. } => {
                Ok(build_assouad_variance_instance(xi, xi, n_r, n_b, *rho_r, *rho_b, *noise_var)?.model)
            }
            InstanceFamily::Bias { beta_r, beta_b, rho_r, rho_b, perturbed_group, noise_var } => {
                let n = if *perturbed_group == Group::Red { n_r } else { n_b };
                Ok(build_assouad_bias_instance(
                    xi,
                    *perturbed_group,
                    &DVector::from_row_slice(beta_r),
                    &DVector::from_row_slice(beta_b),
                    *rho_r,
                    *rho_b,
                    n,
                    *noise_var,
                )?
                .model)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignSweep {
    Exhaustive,
    /// `count` patterns drawn uniformly from the seed.
    Sampled { count: usize },
}

fn exhaustive() -> SignSweep {
    SignSweep::Exhaustive
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub instance: InstanceFamily,
    pub estimator: EstimatorKind,
    pub lambda: Weight,
    pub n_r: usize,
    pub n_b: usize,
    /// Group whose risk `E‖β̂ − β_λ‖²_{Σ_g}` is probed.
    pub group: Group,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "exhaustive")]
    pub sweep: SignSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRisk {
    pub index: u64,
    pub signs: SignVector,
    pub risk: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub group: Group,
    pub sampled: bool,
    pub patterns: Vec<PatternRisk>,
    pub worst_index: u64,
    pub worst_case_risk: Estimate,
    pub rank_deficient_count: usize,
}

/// `E‖β̂ − β_λ‖²_{Σ_g}` on one fixed model.
#[allow(clippy::too_many_arguments)]
pub fn estimation_risk_mc(
    model: &PopulationModel,
    estimator: EstimatorKind,
    lambda: Weight,
    n_r: usize,
    n_b: usize,
    group: Group,
    replicates: usize,
    seed: u64,
) -> Result<(Estimate, usize)> {
    check_sizes(model, n_r, n_b, &used_groups(estimator, lambda), replicates)?;
    let opt = model.optimal_beta(lambda)?;
    let samplers = Samplers::new(model)?;
    let sigma = &model.group(group).sigma;
    let (values, rank_deficient) = replicate_map(replicates, |i| {
        let (mr, mb) = samplers.moments(seed, i, n_r, n_b)?;
        let beta = estimator.fit_moments(model, &mr, &mb, lambda)?;
        Ok(mahalanobis_sq(&(beta - &opt), sigma))
    })?;
    Ok((Estimate::from_samples(&values), rank_deficient))
}

/// Worst-case estimation risk over sign patterns of a hypercube family.
/// Every pattern uses the same replicate streams.
pub fn assouad_probe(cfg: &ProbeConfig) -> Result<ProbeReport> {
    let d = cfg.instance.dim();
    if d == 0 {
        return Err(FafError::Invalid("instance dimension must be at least 1".into()));
    }
    let indices: Vec<u64> = match cfg.sweep {
        SignSweep::Exhaustive => {
            if d > MAX_EXHAUSTIVE_DIM {
                return Err(FafError::Invalid(format!(
                    "exhaustive sign sweep supports d <= {MAX_EXHAUSTIVE_DIM}, got d = {d}; use the sampled sweep"
                )));
            }
            (0..1u64 << d).collect()
        }
        SignSweep::Sampled { count } => {
            if count == 0 {
                return Err(FafError::Invalid("sampled sweep needs count >= 1".into()));
            }
            if d > 63 {
                return Err(FafError::Invalid(format!("sampled sweep supports d <= 63, got d = {d}")));
            }
            let mut stream = RngSpec::new(cfg.master_seed, u64::MAX).normals();
            let mut v: Vec<u64> = (0..count)
                .map(|_| {
                    let mut idx = 0u64;
                    for bit in 0..d {
                        if stream.next_uniform() <= 0.5 {
                            idx |= 1 << bit;
                        }
                    }
                    idx
                })
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        }
    };
    let mut patterns = Vec::with_capacity(indices.len());
    let mut rank_deficient = 0;
    for index in indices {
        let signs = SignVector::from_index(d, index);
        let model = cfg.instance.instance(&signs, cfg.n_r, cfg.n_b)?;
        let (risk, rd) = estimation_risk_mc(
            &model,
            cfg.estimator,
            cfg.lambda,
            cfg.n_r,
            cfg.n_b,
            cfg.group,
            cfg.replicates,
            cfg.master_seed,
        )?;
        rank_deficient += rd;
        patterns.push(PatternRisk { index, signs, risk });
    }
    let worst = patterns
        .iter()
        .fold(None::<&PatternRisk>, |best, p| match best {
            Some(b) if b.risk.mean >= p.risk.mean => Some(b),
            _ => Some(p),
        })
        .expect("at least one pattern");
    Ok(ProbeReport {
        group: cfg.group,
        sampled: matches!(cfg.sweep, SignSweep::Sampled { .. }),
        worst_index: worst.index,
        worst_case_risk: worst.risk,
        patterns,
        rank_deficient_count: rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GroupSpec;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn spherical(beta_r: &[f64], beta_b: &[f64], rho_r: f64, rho_b: f64, noise_var: f64) -> PopulationModel {
        PopulationModel::new(
            GroupSpec::spherical(Group::Red, dvec(beta_r), rho_r).unwrap(),
            GroupSpec::spherical(Group::Blue, dvec(beta_b), rho_b).unwrap(),
            noise_var,
        )
        .unwrap()
    }

    fn cfg(model: PopulationModel, lambda: f64, n: usize, estimator: EstimatorKind, replicates: usize) -> McConfig {
        McConfig {
            model,
            lambda: Weight::new(lambda).unwrap(),
            n_r: n,
            n_b: n,
            estimator,
            replicates,
            master_seed: 11,
        }
    }

    #[test]
    fn pairwise_sum_and_estimate() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 5050.0);
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        // sd = √(5/3), se = sd/2
        assert!((e.se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(Estimate::from_samples(&[7.0]).se, 0.0);
    }

    #[test]
    fn quantile_interpolates() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.5), 2.0);
        assert_eq!(quantile(&xs, 0.05), 0.2);
        assert_eq!(quantile(&xs, 1.0), 4.0);
    }

    #[test]
    fn noiseless_known_cov_has_zero_excess() {
        let m = spherical(&[1.0, -0.5], &[0.2, 0.3], 1.0, 2.0, 0.0);
        let rep = run_excess_mc(&cfg(m, 0.3, 10, EstimatorKind::KnownCov, 50)).unwrap();
        assert!(rep.mean_excess.mean.abs() < 1e-20, "{}", rep.mean_excess.mean);
    }

    #[test]
    fn noiseless_pooled_has_positive_excess() {
        let m = spherical(&[1.0, 0.0], &[0.0, 1.0], 1.0, 1.0, 0.0);
        let rep = run_excess_mc(&cfg(m, 0.5, 20, EstimatorKind::PooledOls, 50)).unwrap();
        assert!(rep.mean_excess.mean > 0.0);
        assert!(rep.max_cross_cancellation_residual < 1e-12);
    }

    #[test]
    fn reports_are_deterministic() {
        let m = spherical(&[1.0, 0.0, 0.5], &[0.0, 1.0, 0.0], 1.0, 1.5, 1.0);
        let c = cfg(m, 0.4, 15, EstimatorKind::PooledOls, 64);
        let a = serde_json::to_string(&run_excess_mc(&c).unwrap()).unwrap();
        let b = serde_json::to_string(&run_excess_mc(&c).unwrap()).unwrap();
        assert_eq!(a, b);
        let mut c2 = c.clone();
        c2.master_seed += 1;
        assert_ne!(a, serde_json::to_string(&run_excess_mc(&c2).unwrap()).unwrap());
    }

    #[test]
    fn too_few_samples_is_a_precondition_error() {
        let m = spherical(&[1.0, 0.0], &[0.0, 1.0], 1.0, 1.0, 1.0);
        let mut c = cfg(m, 0.5, 1, EstimatorKind::PooledOls, 5);
        match run_excess_mc(&c) {
            Err(FafError::Precondition(msg)) => assert!(msg.contains("n_g >= d")),
            other => panic!("{other:?}"),
        }
        c.n_r = 5;
        c.lambda = Weight::new(1.0).unwrap();
        run_excess_mc(&c).unwrap();
    }

    #[test]
    fn exact_rhs_collapses_to_ols_risk_at_lambda_one() {
        // σ²/n E Tr(Σ̂⁻¹) with Σ = I; E Tr = n d/(n − d − 1) for Gaussian design
        let m = spherical(&[0.0, 0.0], &[1.0, 1.0], 1.0, 1.0, 1.0);
        let est = exact_risk_rhs_mc(&m, Weight::new(1.0).unwrap(), 30, 30, Group::Red, 4000, 3).unwrap();
        let expected = 2.0 / 27.0;
        assert!(est.value.within(expected, 4.0), "{:?} vs {expected}", est.value);
    }

    #[test]
    fn decomposition_degenerate_cases() {
        let same = spherical(&[0.3, -0.2], &[0.3, -0.2], 1.0, 2.0, 1.0);
        let rep = decomposition_mc(&cfg(same, 0.4, 12, EstimatorKind::PooledOls, 50)).unwrap();
        assert_eq!(rep.max_abs_bias.red, 0.0);
        assert_eq!(rep.max_abs_bias.blue, 0.0);
        let noiseless = spherical(&[1.0, 0.0], &[0.0, 1.0], 1.0, 2.0, 0.0);
        let rep = decomposition_mc(&cfg(noiseless, 0.4, 12, EstimatorKind::PooledOls, 50)).unwrap();
        assert_eq!(rep.max_abs_variance.red, 0.0);
        assert_eq!(rep.max_abs_variance.blue, 0.0);
        assert!(rep.max_route_gap < 1e-10);
    }

    #[test]
    fn at_most_one_group_improves() {
        let m = spherical(&[1.0, 0.0], &[0.0, 1.0], 1.0, 1.0, 1.0);
        let rep = realization_asymmetry_mc(&cfg(m, 0.5, 40, EstimatorKind::KnownCov, 500)).unwrap();
        assert_eq!(rep.both_improved_count, 0);
    }

    #[test]
    fn band_lies_above_tangent_line() {
        let m = spherical(&[1.0, 0.0], &[0.0, 1.0], 1.0, 1.0, 1.0);
        let band = frontier_band_mc(&BandConfig {
            model: m,
            grid: crate::model::uniform_grid(5).unwrap(),
            n_r: 20,
            n_b: 20,
            estimator: EstimatorKind::PooledOls,
            replicates: 200,
            master_seed: 5,
            keep_cloud: true,
        })
        .unwrap();
        assert_eq!(band.rows.len(), 5);
        assert_eq!(band.below_line_count, 0);
        assert_eq!(band.clouds.as_ref().unwrap()[0].len(), 200);
        for r in &band.rows {
            assert!(r.q05_r <= r.q50_r && r.q50_r <= r.q95_r);
        }
        let mut buf = Vec::new();
        write_band_csv(&band, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(BAND_CSV_HEADER));
    }

    #[test]
    fn probe_symmetry_and_limits() {
        let probe = ProbeConfig {
            instance: InstanceFamily::Variance { d: 2, rho_r: 1.0, rho_b: 1.0, noise_var: 1.0 },
            estimator: EstimatorKind::KnownCov,
            lambda: Weight::new(0.5).unwrap(),
            n_r: 20,
            n_b: 20,
            group: Group::Red,
            replicates: 100,
            master_seed: 1,
            sweep: SignSweep::Exhaustive,
        };
        let rep = assouad_probe(&probe).unwrap();
        assert_eq!(rep.patterns.len(), 4);
        // ξ and −ξ: indices 0 ↔ 3, 1 ↔ 2
        let r = |i: usize| rep.patterns[i].risk.mean;
        assert!((r(0) - r(3)).abs() < 1e-12 * r(0));
        assert!((r(1) - r(2)).abs() < 1e-12 * r(1));
        let mut big = probe.clone();
        big.instance = InstanceFamily::Variance { d: 13, rho_r: 1.0, rho_b: 1.0, noise_var: 1.0 };
        assert!(assouad_probe(&big).is_err());
        big.sweep = SignSweep::Sampled { count: 2 };
        big.replicates = 2;
        assert!(assouad_probe(&big).unwrap().sampled);
    }
}
