//! Population-level objects: the two-group linear model, group risks, the
//! λ-weighted optimum, frontier tracing and FA-dominance.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FafError, Result};
use crate::linalg::{check_spd, mahalanobis_sq, scaled_identity, spd_solve, sym_eigenvalues};

/// Group label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Red,
    Blue,
}

impl Group {
    pub const BOTH: [Group; 2] = [Group::Red, Group::Blue];

    pub fn other(self) -> Group {
        match self {
            Group::Red => Group::Blue,
            Group::Blue => Group::Red,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Red => "red",
            Group::Blue => "blue",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Group {
    type Err = FafError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "red" | "r" => Ok(Group::Red),
            "blue" | "b" => Ok(Group::Blue),
            other => Err(FafError::Invalid(format!("unknown group `{other}`"))),
        }
    }
}

/// Fairness weight λ ∈ [0, 1] placed on the red group.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Weight(f64);

impl Weight {
    pub fn new(lambda: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&lambda) {
            Ok(Weight(lambda))
        } else {
            Err(FafError::Invalid(format!("lambda must lie in [0, 1], got {lambda}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// 1 − λ.
    pub fn complement(self) -> f64 {
        1.0 - self.0
    }

    /// Weight attached to `group` in the blended objective.
    pub fn of(self, group: Group) -> f64 {
        match group {
            Group::Red => self.0,
            Group::Blue => 1.0 - self.0,
        }
    }

    pub fn is_endpoint(self) -> bool {
        self.0 == 0.0 || self.0 == 1.0
    }
}

impl TryFrom<f64> for Weight {
    type Error = FafError;
    fn try_from(v: f64) -> Result<Self> {
        Weight::new(v)
    }
}

impl From<Weight> for f64 {
    fn from(w: Weight) -> f64 {
        w.0
    }
}

/// `k` uniformly spaced weights on [0, 1], endpoints included.
pub fn uniform_grid(k: usize) -> Result<Vec<Weight>> {
    match k {
        0 => Err(FafError::Invalid("lambda grid must contain at least one point".into())),
        1 => Ok(vec![Weight(0.5)]),
        _ => Ok((0..k)
            .map(|i| {
                if i == k - 1 {
                    Weight(1.0)
                } else {
                    Weight(i as f64 / (k - 1) as f64)
                }
            })
            .collect()),
    }
}

pub const DEFAULT_GRID_POINTS: usize = 101;

/// Parameters of one group: regression coefficients and covariate covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub label: Group,
    pub beta: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GroupSpec {
    pub fn new(label: Group, beta: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != beta.len() || sigma.ncols() != beta.len() {
            return Err(FafError::dim(format!("{label}.sigma"), beta.len(), sigma.nrows()));
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(FafError::Invalid(format!("{label}.beta has a non-finite entry")));
        }
        check_spd(&sigma, &format!("{label}.sigma"))?;
        Ok(GroupSpec { label, beta, sigma })
    }

    /// Spherical covariance ρ² I_d.
    pub fn spherical(label: Group, beta: DVector<f64>, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(FafError::Invalid(format!("{label}.rho must be positive, got {rho}")));
        }
        let d = beta.len();
        Self::new(label, beta, scaled_identity(d, rho * rho))
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }
}

/// The two-group homoskedastic linear model `Y = Xᵀβ_g + ε`, `E[ε²|X] = σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    pub red: GroupSpec,
    pub blue: GroupSpec,
    pub noise_var: f64,
}

/// Population risks `(R_r, R_b)` of a predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskPair {
    pub risk_r: f64,
    pub risk_b: f64,
}

impl RiskPair {
    pub fn disparity(&self) -> f64 {
        (self.risk_r - self.risk_b).abs()
    }

    pub fn get(&self, group: Group) -> f64 {
        match group {
            Group::Red => self.risk_r,
            Group::Blue => self.risk_b,
        }
    }
}

/// One point of the population frontier.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub lambda: Weight,
    pub beta: DVector<f64>,
    pub risks: RiskPair,
}

/// `(lhs, rhs)` of the weighted excess-risk identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExcessIdentity {
    pub lhs: f64,
    pub rhs: f64,
}

/// Per-group excess split into quadratic and cross terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupExcessIdentity {
    pub lhs: f64,
    pub quadratic: f64,
    pub cross: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceDiagnostic {
    pub is_balanced: bool,
    /// `R_b(β_r) − R_r(β_r)` and `R_r(β_b) − R_b(β_b)`.
    pub gaps: [f64; 2],
}

impl PopulationModel {
    pub fn new(red: GroupSpec, blue: GroupSpec, noise_var: f64) -> Result<Self> {
        if red.label != Group::Red || blue.label != Group::Blue {
            return Err(FafError::Invalid("group labels must be (red, blue)".into()));
        }
        if red.dim() != blue.dim() {
            return Err(FafError::dim("blue.beta", red.dim(), blue.dim()));
        }
        if red.dim() == 0 {
            return Err(FafError::Invalid("dimension d must be at least 1".into()));
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(FafError::Invalid(format!("noise_var must be nonnegative, got {noise_var}")));
        }
        Ok(PopulationModel { red, blue, noise_var })
    }

    pub fn dim(&self) -> usize {
        self.red.dim()
    }

    pub fn group(&self, g: Group) -> &GroupSpec {
        match g {
            Group::Red => &self.red,
            Group::Blue => &self.blue,
        }
    }

    /// ‖β_r − β_b‖₂.
    pub fn heterogeneity(&self) -> f64 {
        (&self.red.beta - &self.blue.beta).norm()
    }

    fn check_beta(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.dim() {
            return Err(FafError::dim("beta", self.dim(), beta.len()));
        }
        Ok(())
    }

    /// `R_g(β) = ‖β − β_g‖²_{Σ_g} + σ²`.
    pub fn population_risk(&self, group: Group, beta: &DVector<f64>) -> Result<f64> {
        self.check_beta(beta)?;
        let spec = self.group(group);
        Ok(mahalanobis_sq(&(beta - &spec.beta), &spec.sigma) + self.noise_var)
    }

    pub fn risk_pair(&self, beta: &DVector<f64>) -> Result<RiskPair> {
        Ok(RiskPair {
            risk_r: self.population_risk(Group::Red, beta)?,
            risk_b: self.population_risk(Group::Blue, beta)?,
        })
    }

    /// `R_λ(β) = λ R_r(β) + (1 − λ) R_b(β)`.
    pub fn weighted_risk(&self, lambda: Weight, beta: &DVector<f64>) -> Result<f64> {
        let p = self.risk_pair(beta)?;
        Ok(lambda.value() * p.risk_r + lambda.complement() * p.risk_b)
    }

    /// `Σ_λ = λ Σ_r + (1 − λ) Σ_b`.
    pub fn sigma_lambda(&self, lambda: Weight) -> DMatrix<f64> {
        &self.red.sigma * lambda.value() + &self.blue.sigma * lambda.complement()
    }

    /// `ν_λ = λ Σ_r β_r + (1 − λ) Σ_b β_b`.
    pub fn nu_lambda(&self, lambda: Weight) -> DVector<f64> {
        (&self.red.sigma * &self.red.beta) * lambda.value()
            + (&self.blue.sigma * &self.blue.beta) * lambda.complement()
    }

    /// The minimizer β_λ = Σ_λ⁻¹ ν_λ of the weighted risk.
    pub fn optimal_beta(&self, lambda: Weight) -> Result<DVector<f64>> {
        if self.red.beta == self.blue.beta || lambda.value() == 1.0 {
            return Ok(self.red.beta.clone());
        }
        if lambda.value() == 0.0 {
            return Ok(self.blue.beta.clone());
        }
        spd_solve(&self.sigma_lambda(lambda), &self.nu_lambda(lambda), "sigma_lambda")
    }

    /// Residual of the first-order condition
    /// `λΣ_r(β_r − β) + (1 − λ)Σ_b(β_b − β)` at `beta`.
    pub fn stationarity_residual(&self, lambda: Weight, beta: &DVector<f64>) -> DVector<f64> {
        (&self.red.sigma * (&self.red.beta - beta)) * lambda.value()
            + (&self.blue.sigma * (&self.blue.beta - beta)) * lambda.complement()
    }

    pub fn excess_risk_identity(&self, lambda: Weight, beta: &DVector<f64>) -> Result<ExcessIdentity> {
        self.check_beta(beta)?;
        let opt = self.optimal_beta(lambda)?;
        let lhs = self.weighted_risk(lambda, beta)? - self.weighted_risk(lambda, &opt)?;
        let diff = beta - &opt;
        let rhs = lambda.value() * mahalanobis_sq(&diff, &self.red.sigma)
            + lambda.complement() * mahalanobis_sq(&diff, &self.blue.sigma);
        Ok(ExcessIdentity { lhs, rhs })
    }

    pub fn per_group_excess_identity(
        &self,
        lambda: Weight,
        group: Group,
        beta: &DVector<f64>,
    ) -> Result<GroupExcessIdentity> {
        self.check_beta(beta)?;
        let opt = self.optimal_beta(lambda)?;
        Ok(self.per_group_excess_at(group, beta, &opt))
    }

    /// Per-group split around a precomputed β_λ.
    pub(crate) fn per_group_excess_at(
        &self,
        group: Group,
        beta: &DVector<f64>,
        opt: &DVector<f64>,
    ) -> GroupExcessIdentity {
        let spec = self.group(group);
        let diff = beta - opt;
        let lhs = mahalanobis_sq(&(beta - &spec.beta), &spec.sigma)
            - mahalanobis_sq(&(opt - &spec.beta), &spec.sigma);
        let quadratic = mahalanobis_sq(&diff, &spec.sigma);
        let cross = 2.0 * diff.dot(&(&spec.sigma * (opt - &spec.beta)));
        GroupExcessIdentity { lhs, quadratic, cross }
    }

    /// Each group's optimum does weakly better on its own group.
    pub fn group_balance_check(&self) -> BalanceDiagnostic {
        let rr = self.population_risk(Group::Red, &self.red.beta).unwrap_or(f64::NAN);
        let br = self.population_risk(Group::Blue, &self.red.beta).unwrap_or(f64::NAN);
        let rb = self.population_risk(Group::Red, &self.blue.beta).unwrap_or(f64::NAN);
        let bb = self.population_risk(Group::Blue, &self.blue.beta).unwrap_or(f64::NAN);
        let gaps = [br - rr, rb - bb];
        BalanceDiagnostic {
            is_balanced: gaps.iter().all(|g| *g >= 0.0),
            gaps,
        }
    }

    /// Whether both covariances satisfy `½ρ_g² I ⪯ Σ_g ⪯ (3/2)ρ_g² I` and
    /// `‖β_g‖ ≤ bound`. Returns the list of violated conditions.
    pub fn p_gauss_violations(&self, rho_r: f64, rho_b: f64, bound: f64) -> Vec<String> {
        let mut out = Vec::new();
        for (g, rho) in [(Group::Red, rho_r), (Group::Blue, rho_b)] {
            let spec = self.group(g);
            let ev = sym_eigenvalues(&spec.sigma);
            let (lo, hi) = (ev[0], ev[ev.len() - 1]);
            let rho2 = rho * rho;
            if lo < 0.5 * rho2 {
                out.push(format!("{g}: lambda_min(sigma) = {lo} < rho^2/2 = {}", 0.5 * rho2));
            }
            if hi > 1.5 * rho2 {
                out.push(format!("{g}: lambda_max(sigma) = {hi} > 3 rho^2/2 = {}", 1.5 * rho2));
            }
            let norm = spec.beta.norm();
            if norm > bound {
                out.push(format!("{g}: |beta| = {norm} > B = {bound}"));
            }
        }
        out
    }
}

/// FA-dominance: weakly better on both risks and on the disparity, strictly
/// better on at least one. Comparisons are exact.
pub fn fa_dominates(p1: &RiskPair, p2: &RiskPair) -> bool {
    let a = [p1.risk_r, p1.risk_b, p1.disparity()];
    let b = [p2.risk_r, p2.risk_b, p2.disparity()];
    a.iter().zip(&b).all(|(x, y)| x <= y) && a.iter().zip(&b).any(|(x, y)| x < y)
}

/// One frontier point per weight in `grid` (ascending).
pub fn trace_frontier(model: &PopulationModel, grid: &[Weight]) -> Result<Vec<FrontierPoint>> {
    if grid.is_empty() {
        return Err(FafError::Invalid("lambda grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[0].value() > w[1].value()) {
        return Err(FafError::Invalid("lambda grid must be sorted ascending".into()));
    }
    grid.iter()
        .map(|&lambda| {
            let beta = model.optimal_beta(lambda)?;
            let risks = model.risk_pair(&beta)?;
            Ok(FrontierPoint { lambda, beta, risks })
        })
        .collect()
}
