//! Closed-form risk bounds as explicit functions of the problem parameters.
//!
//! Bounds stated only up to an absolute constant are multiplied by
//! [`BoundConfig::constant_multiplier`]; the explicit known-covariance
//! bounds are not.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data_gen::{gaussian_small_ball_params, gaussian_subgaussian_param};
use crate::error::{FafError, Result};
use crate::model::{Group, Weight};

/// Small-ball parameters `(C, α)`: `P(|θᵀX| ≤ t‖θ‖_Σ) ≤ (C t)^α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallBall {
    pub c: f64,
    pub alpha: f64,
}

impl Default for SmallBall {
    fn default() -> Self {
        let (c, alpha) = gaussian_small_ball_params();
        SmallBall { c, alpha }
    }
}

/// How the eigenvalue constant `C′_g` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CPrimeMode {
    /// `3C⁴ exp(1 + 9/α)`.
    #[default]
    SmallBall,
    /// Gaussian limit `(1/h)^{3h} (√e/(1−h))^{3(1−h)}` at `h = d/n_g`.
    GaussianLimit,
}

fn one() -> f64 {
    1.0
}

fn default_k() -> f64 {
    gaussian_subgaussian_param()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    pub d: usize,
    /// May be omitted when the configuration only feeds an allocation.
    #[serde(default)]
    pub n_r: usize,
    #[serde(default)]
    pub n_b: usize,
    pub lambda: Weight,
    pub rho_r: f64,
    pub rho_b: f64,
    /// Upper eigenvalue scale `Ρ_g` of `ρ_g² I ⪯ Σ_g ⪯ Ρ_g² I`; defaults to `ρ_g`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_max_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_max_b: Option<f64>,
    pub noise_var: f64,
    /// ‖β_r − β_b‖.
    #[serde(default)]
    pub het: f64,
    #[serde(default)]
    pub smallball_r: SmallBall,
    #[serde(default)]
    pub smallball_b: SmallBall,
    #[serde(default = "default_k")]
    pub subg_r: f64,
    #[serde(default = "default_k")]
    pub subg_b: f64,
    /// Norm cap `B` on the group coefficients.
    #[serde(default = "one")]
    pub bound_b: f64,
    #[serde(default = "one")]
    pub constant_multiplier: f64,
    /// Universal constant of the refined subgaussian `C′` variant.
    #[serde(default = "one")]
    pub zeta: f64,
    #[serde(default)]
    pub cprime_mode: CPrimeMode,
    /// Use `1 + 8C′ζρ⁸K⁴d/n` in place of `C′` in the known-covariance bounds.
    #[serde(default)]
    pub refined_subgaussian: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundTarget {
    KnownCovRisk,
    Variance,
    Bias,
    CombinedExcess,
    CrossTerm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub value: f64,
    pub kind: BoundKind,
    pub target: BoundTarget,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
    pub constants_used: BTreeMap<String, f64>,
    pub preconditions_met: bool,
    pub violated: Vec<String>,
    pub warnings: Vec<String>,
}

/// `C′ = 3C⁴ exp(1 + 9/α)`.
pub fn small_ball_constant(c: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(FafError::Invalid(format!("small-ball alpha must be positive, got {alpha}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(FafError::Invalid(format!("small-ball C must be positive, got {c}")));
    }
    Ok(3.0 * c.powi(4) * (1.0 + 9.0 / alpha).exp())
}

/// Gaussian replacement for `C′` in the limit `d/n → h ∈ (0, 1)`.
pub fn gaussian_cprime_limit(h: f64) -> Result<f64> {
    if !(h > 0.0 && h < 1.0) {
        return Err(FafError::Invalid(format!("d/n must lie in (0, 1), got {h}")));
    }
    Ok((1.0 / h).powf(3.0 * h) * (std::f64::consts::E.sqrt() / (1.0 - h)).powf(3.0 * (1.0 - h)))
}

/// Refined subgaussian constant `1 + 8C′ζρ⁸K⁴d/n`.
pub fn refined_cprime(cprime: f64, zeta: f64, rho: f64, k: f64, d: usize, n: usize) -> f64 {
    1.0 + 8.0 * cprime * zeta * rho.powi(8) * k.powi(4) * d as f64 / n as f64
}

/// Accumulates precondition checks and the constants entering a bound.
struct Ledger {
    constants: BTreeMap<String, f64>,
    violated: Vec<String>,
    warnings: Vec<String>,
}

impl Ledger {
    fn new() -> Self {
        Ledger {
            constants: BTreeMap::new(),
            violated: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn constant(&mut self, name: &str, v: f64) -> f64 {
        self.constants.insert(name.to_string(), v);
        v
    }

    fn require(&mut self, ok: bool, text: String) {
        if !ok {
            self.violated.push(text);
        }
    }

    fn finish(self, value: f64, kind: BoundKind, target: BoundTarget, group: Option<Group>) -> BoundReport {
        BoundReport {
            value,
            kind,
            target,
            group,
            constants_used: self.constants,
            preconditions_met: self.violated.is_empty(),
            violated: self.violated,
            warnings: self.warnings,
        }
    }
}

impl BoundConfig {
    /// Spherical Gaussian configuration with all optional fields at default.
    pub fn gaussian(d: usize, n_r: usize, n_b: usize, lambda: Weight, rho_r: f64, rho_b: f64, noise_var: f64, het: f64) -> Self {
        BoundConfig {
            d,
            n_r,
            n_b,
            lambda,
            rho_r,
            rho_b,
            rho_max_r: None,
            rho_max_b: None,
            noise_var,
            het,
            smallball_r: SmallBall::default(),
            smallball_b: SmallBall::default(),
            subg_r: default_k(),
            subg_b: default_k(),
            bound_b: 1.0,
            constant_multiplier: 1.0,
            zeta: 1.0,
            cprime_mode: CPrimeMode::SmallBall,
            refined_subgaussian: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(FafError::Invalid(format!("{name} must be positive, got {v}")))
            }
        };
        if self.d == 0 {
            return Err(FafError::Invalid("d must be at least 1".into()));
        }
        if self.n_r == 0 || self.n_b == 0 {
            return Err(FafError::Invalid("n_r and n_b must be positive".into()));
        }
        pos("rho_r", self.rho_r)?;
        pos("rho_b", self.rho_b)?;
        pos("rho_max_r", self.rho_max(Group::Red))?;
        pos("rho_max_b", self.rho_max(Group::Blue))?;
        if self.rho_max(Group::Red) < self.rho_r || self.rho_max(Group::Blue) < self.rho_b {
            return Err(FafError::Invalid("rho_max must be at least rho".into()));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(FafError::Invalid(format!("noise_var must be nonnegative, got {}", self.noise_var)));
        }
        if !(self.het >= 0.0 && self.het.is_finite()) {
            return Err(FafError::Invalid(format!("het must be nonnegative, got {}", self.het)));
        }
        for (name, sb) in [("smallball_r", self.smallball_r), ("smallball_b", self.smallball_b)] {
            if !(sb.alpha > 0.0 && sb.alpha <= 1.0) {
                return Err(FafError::Invalid(format!("{name}.alpha must lie in (0, 1], got {}", sb.alpha)));
            }
            pos(&format!("{name}.c"), sb.c)?;
        }
        pos("subg_r", self.subg_r)?;
        pos("subg_b", self.subg_b)?;
        pos("bound_b", self.bound_b)?;
        pos("constant_multiplier", self.constant_multiplier)?;
        pos("zeta", self.zeta)?;
        Ok(())
    }

    pub fn n(&self, g: Group) -> usize {
        match g {
            Group::Red => self.n_r,
            Group::Blue => self.n_b,
        }
    }

    pub fn rho(&self, g: Group) -> f64 {
        match g {
            Group::Red => self.rho_r,
            Group::Blue => self.rho_b,
        }
    }

    pub fn rho_max(&self, g: Group) -> f64 {
        match g {
            Group::Red => self.rho_max_r.unwrap_or(self.rho_r),
            Group::Blue => self.rho_max_b.unwrap_or(self.rho_b),
        }
    }

    fn smallball(&self, g: Group) -> SmallBall {
        match g {
            Group::Red => self.smallball_r,
            Group::Blue => self.smallball_b,
        }
    }

    fn subg(&self, g: Group) -> f64 {
        match g {
            Group::Red => self.subg_r,
            Group::Blue => self.subg_b,
        }
    }

    /// `ρ_λ² = λρ_r² + (1 − λ)ρ_b²`.
    pub fn rho_lambda_sq(&self) -> f64 {
        let l = self.lambda.value();
        l * self.rho_r.powi(2) + (1.0 - l) * self.rho_b.powi(2)
    }

    /// `C′_g` under the configured mode.
    pub fn cprime(&self, g: Group) -> Result<f64> {
        match self.cprime_mode {
            CPrimeMode::SmallBall => {
                let sb = self.smallball(g);
                small_ball_constant(sb.c, sb.alpha)
            }
            CPrimeMode::GaussianLimit => gaussian_cprime_limit(self.d as f64 / self.n(g) as f64),
        }
    }

    fn cprime_logged(&self, g: Group, ledger: &mut Ledger) -> Result<f64> {
        let c = self.cprime(g)?;
        let sb = self.smallball(g);
        if self.cprime_mode == CPrimeMode::SmallBall && sb.c < 1.0 {
            ledger.warnings.push(format!(
                "{g}: small-ball C = {} < 1; the condition still holds with max(C, 1)",
                sb.c
            ));
        }
        Ok(ledger.constant(&format!("cprime_{}", g.as_str()), c))
    }

    /// `λρ_r²/C′_r + (1 − λ)ρ_b²/C′_b`.
    fn cprime_blend(&self, ledger: &mut Ledger) -> Result<f64> {
        let l = self.lambda.value();
        let cr = self.cprime_logged(Group::Red, ledger)?;
        let cb = self.cprime_logged(Group::Blue, ledger)?;
        Ok(l * self.rho_r.powi(2) / cr + (1.0 - l) * self.rho_b.powi(2) / cb)
    }

    fn require_n_at_least(&self, ledger: &mut Ledger, threshold: impl Fn(Group) -> f64, label: &str) {
        for g in Group::BOTH {
            let t = threshold(g);
            ledger.require(self.n(g) as f64 >= t, format!("n_{} >= {label}: {} < {t}", g.as_str(), self.n(g)));
        }
    }

    fn require_48_over_alpha(&self, ledger: &mut Ledger) {
        self.require_n_at_least(ledger, |g| 48.0 / self.smallball(g).alpha, "48/alpha_g");
    }

    fn require_upper_unknown_cov(&self, ledger: &mut Ledger) {
        self.require_n_at_least(
            ledger,
            |g| (48.0 / self.smallball(g).alpha).max(self.subg(g).powi(4) * self.d as f64),
            "max(48/alpha_g, K_g^4 d)",
        );
    }

    fn require_known_cov(&self, ledger: &mut Ledger) {
        if self.refined_subgaussian {
            self.require_n_at_least(
                ledger,
                |g| {
                    let a = self.smallball(g).alpha;
                    (6.0 * self.d as f64 / a).min(12.0 / a * (12.0 / a).ln())
                },
                "min(6d/alpha_g, 12/alpha_g log(12/alpha_g))",
            );
        } else {
            self.require_n_at_least(ledger, |g| 6.0 * self.d as f64 / self.smallball(g).alpha, "6d/alpha_g");
        }
        ledger.require(self.d >= 2, format!("d >= 2: d = {}", self.d));
    }

    /// `λ²C′_rρ_r²/n_r + (1 − λ)²C′_bρ_b²/n_b` with the configured `C′`.
    fn known_cov_sample_term(&self, ledger: &mut Ledger) -> Result<f64> {
        let l = self.lambda.value();
        let mut term = 0.0;
        for (g, w) in [(Group::Red, l), (Group::Blue, 1.0 - l)] {
            let mut c = self.cprime_logged(g, ledger)?;
            if self.refined_subgaussian {
                c = refined_cprime(c, self.zeta, self.rho(g), self.subg(g), self.d, self.n(g));
                ledger.constant(&format!("cprime_refined_{}", g.as_str()), c);
            }
            term += w * w * c * self.rho(g).powi(2) / self.n(g) as f64;
        }
        Ok(term)
    }

    /// `λ²a_r/n_r + (1 − λ)²a_b/n_b`.
    fn weighted_inverse_n(&self, a_r: f64, a_b: f64) -> f64 {
        let l = self.lambda.value();
        l * l * a_r / self.n_r as f64 + (1.0 - l) * (1.0 - l) * a_b / self.n_b as f64
    }

    fn k4_term(&self) -> f64 {
        self.subg_r.powi(4) / self.n_r as f64 + self.subg_b.powi(4) / self.n_b as f64
    }

    fn common_constants(&self, ledger: &mut Ledger) {
        ledger.constant("constant_multiplier", self.constant_multiplier);
        ledger.constant("k_r", self.subg_r);
        ledger.constant("k_b", self.subg_b);
    }
}

/// Known-covariance per-group bound on `E‖β̃_λ − β_λ‖²_{Σ_g}`.
pub fn known_cov_group_bound(cfg: &BoundConfig, group: Group) -> Result<BoundReport> {
    cfg.validate()?;
    let mut ledger = Ledger::new();
    cfg.require_known_cov(&mut ledger);
    let term = cfg.known_cov_sample_term(&mut ledger)?;
    let rl2 = cfg.rho_lambda_sq();
    let value = 2.0 * cfg.noise_var * cfg.d as f64 * cfg.rho(group).powi(2) / (rl2 * rl2) * term;
    Ok(ledger.finish(value, BoundKind::Upper, BoundTarget::KnownCovRisk, Some(group)))
}

/// Known-covariance bound on the weighted excess risk.
pub fn known_cov_excess_bound(cfg: &BoundConfig) -> Result<BoundReport> {
    cfg.validate()?;
    let mut ledger = Ledger::new();
    cfg.require_known_cov(&mut ledger);
    let term = cfg.known_cov_sample_term(&mut ledger)?;
    let value = 2.0 * cfg.noise_var * cfg.d as f64 / cfg.rho_lambda_sq() * term;
    Ok(ledger.finish(value, BoundKind::Upper, BoundTarget::KnownCovRisk, None))
}

pub fn variance_upper_bound(cfg: &BoundConfig, group: Group) -> Result<BoundReport> {
    cfg.validate()?;
    let mut ledger = Ledger::new();
    cfg.require_upper_unknown_cov(&mut ledger);
    cfg.common_constants(&mut ledger);
    let den = cfg.cprime_blend(&mut ledger)?;
    let n_term = cfg.weighted_inverse_n(cfg.rho_max(Group::Red).powi(2), cfg.rho_max(Group::Blue).powi(2));
    let value = cfg.constant_multiplier * cfg.rho_max(group).powi(2) * cfg.noise_var * cfg.d as f64 / (den * den) * n_term;
    Ok(ledger.finish(value, BoundKind::Upper, BoundTarget::Variance, Some(group)))
}

pub fn variance_lower_bound(cfg: &BoundConfig, group: Group) -> Result<BoundReport> {
    cfg.validate()?;
    let mut ledger = Ledger::new();
    cfg.require_n_at_least(
        &mut ledger,
        |g| cfg.noise_var / (cfg.bound_b * cfg.rho(g).powi(2)),
        "sigma^2/(B rho_g^2)",
    );
    ledger.constant("constant_multiplier", cfg.constant_multiplier);
    let rl2 = cfg.rho_lambda_sq();
    let n_term = cfg.weighted_inverse_n(cfg.rho_r.powi(2), cfg.rho_b.powi(2));
    let value = cfg.constant_multiplier * cfg.rho(group).powi(2) * cfg.noise_var * cfg.d as f64 / (rl2 * rl2) * n_term;
    Ok(ledger.finish(value, BoundKind::Lower, BoundTarget::Variance, Some(group)))
}

pub fn bias_upper_bound(cfg: &BoundConfig, group: Group) -> Result<BoundReport> {
    cfg.validate()?;
    let mut ledger = Ledger::new();
    cfg.require_48_over_alpha(&mut ledger);
    cfg.common_constants(&mut ledger);
    let den = cfg.cprime_blend(&mut ledger)?;
    let l = cfg.lambda.value();
    let (pr, pb) = (cfg.rho_max(Group::Red), cfg.rho_max(Group::Blue));
    let rl2 = cfg.rho_lambda_sq();
    let value = cfg.constant_multiplier
        * (l * l * (1.0 - l) * (1.0 - l) * cfg.rho_max(group).powi(2) * pr.powi(4) * pb.powi(4) * cfg.d as f64)
        / (den * den * rl2 * rl2)
        * cfg.k4_term()
        * cfg.het
        * cfg.het;
    Ok(ledger.finish(value, BoundKind::Upper, BoundTarget::Bias, Some(group)))
}

pub fn bias_lower_bound(cfg: &BoundConfig, group: Group) -> Result<BoundReport> {
    cfg.validate()?;
    let mut ledger = Ledger::new();
    let d2 = 16.0 * (cfg.d * cfg.d) as f64;
    cfg.require_n_at_least(&mut ledger, |_| d2, "16 d^2");
    ledger.constant("constant_multiplier", cfg.constant_multiplier);
    let l = cfg.lambda.value();
    let rl2 = cfg.rho_lambda_sq();
    let value = cfg.constant_multiplier
        * (l * l * (1.0 - l) * (1.0 - l) * cfg.rho(group).powi(2) * cfg.rho_r.powi(4) * cfg.rho_b.powi(4) * cfg.d as f64)
        / rl2.powi(4)
        * (1.0 / cfg.n_r as f64 + 1.0 / cfg.n_b as f64)
        * cfg.het
        * cfg.het;
    Ok(ledger.finish(value, BoundKind::Lower, BoundTarget::Bias, Some(group)))
}

/// Pooled-OLS excess-risk bound: a variance-type term plus a bias-type term.
pub fn combined_excess_bound(cfg: &BoundConfig) -> Result<BoundReport> {
    cfg.validate()?;
    let mut ledger = Ledger::new();
    cfg.require_upper_unknown_cov(&mut ledger);
    cfg.common_constants(&mut ledger);
    let den = cfg.cprime_blend(&mut ledger)?;
    let l = cfg.lambda.value();
    let (pr, pb) = (cfg.rho_max(Group::Red), cfg.rho_max(Group::Blue));
    let weighted_p2 = l * pr * pr + (1.0 - l) * pb * pb;
    let rl2 = cfg.rho_lambda_sq();
    let d = cfg.d as f64;
    let variance = cfg.noise_var * d * weighted_p2 / (den * den) * cfg.weighted_inverse_n(pr * pr, pb * pb);
    let bias = l * l * (1.0 - l) * (1.0 - l) * pr.powi(4) * pb.powi(4) * d * weighted_p2 / (den * den * rl2 * rl2)
        * cfg.k4_term()
        * cfg.het
        * cfg.het;
    ledger.constant("variance_term", cfg.constant_multiplier * variance);
    ledger.constant("bias_term", cfg.constant_multiplier * bias);
    let value = cfg.constant_multiplier * (variance + bias);
    Ok(ledger.finish(value, BoundKind::Upper, BoundTarget::CombinedExcess, None))
}

/// Bound on `|E(β̂_λ − β_λ)ᵀΣ_g(β_λ − β_g)|`.
pub fn cross_term_bound(cfg: &BoundConfig, group: Group) -> Result<BoundReport> {
    cfg.validate()?;
    let mut ledger = Ledger::new();
    cfg.require_48_over_alpha(&mut ledger);
    cfg.common_constants(&mut ledger);
    let den = cfg.cprime_blend(&mut ledger)?;
    let l = cfg.lambda.value();
    let prefactor = match group {
        Group::Red => l * (1.0 - l) * (1.0 - l),
        Group::Blue => l * l * (1.0 - l),
    };
    let (kr2, kb2) = (cfg.subg_r.powi(2), cfg.subg_b.powi(2));
    let (sr, sb) = ((cfg.n_r as f64).sqrt(), (cfg.n_b as f64).sqrt());
    let rl2 = cfg.rho_lambda_sq();
    let value = cfg.constant_multiplier * prefactor * cfg.d as f64 * cfg.rho_r.powi(4) * cfg.rho_b.powi(4) * cfg.het * cfg.het
        / (rl2.powi(3) * den)
        * (kr2 / sr + kb2 / sb)
        * (l * kr2 * cfg.rho_r.powi(2) / sr + (1.0 - l) * kb2 * cfg.rho_b.powi(2) / sb);
    Ok(ledger.finish(value, BoundKind::Upper, BoundTarget::CrossTerm, Some(group)))
}

/// Every bound for one configuration, keyed by a stable column name.
pub fn bound_table(cfg: &BoundConfig) -> Result<Vec<(String, BoundReport)>> {
    let mut out = Vec::new();
    for g in Group::BOTH {
        out.push((format!("known_cov_{}_upper", g.as_str()), known_cov_group_bound(cfg, g)?));
    }
    out.push(("known_cov_excess_upper".into(), known_cov_excess_bound(cfg)?));
    for g in Group::BOTH {
        let s = g.as_str();
        out.push((format!("variance_{s}_upper"), variance_upper_bound(cfg, g)?));
        out.push((format!("variance_{s}_lower"), variance_lower_bound(cfg, g)?));
        out.push((format!("bias_{s}_upper"), bias_upper_bound(cfg, g)?));
        out.push((format!("bias_{s}_lower"), bias_lower_bound(cfg, g)?));
    }
    out.push(("combined_excess_upper".into(), combined_excess_bound(cfg)?));
    for g in Group::BOTH {
        out.push((format!("cross_term_{}_upper", g.as_str()), cross_term_bound(cfg, g)?));
    }
    Ok(out)
}

/// Parameter swept by [`SweepSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    NR,
    NB,
    /// Both sample sizes together.
    N,
    Lambda,
    Het,
    NoiseVar,
}

/// `name=start:end:{lin|log}[:points]`, e.g. `n_r=10:1000:log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

pub const DEFAULT_SWEEP_POINTS: usize = 20;

impl std::str::FromStr for SweepSpec {
    type Err = FafError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| FafError::Invalid(format!("bad sweep `{s}`: {why}"));
        let (name, range) = s.split_once('=').ok_or_else(|| bad("expected name=start:end:scale"))?;
        let param = match name.trim() {
            "n_r" => SweepParam::NR,
            "n_b" => SweepParam::NB,
            "n" => SweepParam::N,
            "lambda" => SweepParam::Lambda,
            "het" => SweepParam::Het,
            "noise_var" => SweepParam::NoiseVar,
            other => return Err(bad(&format!("unknown parameter `{other}`"))),
        };
        let parts: Vec<&str> = range.split(':').collect();
        if parts.len() < 3 || parts.len() > 4 {
            return Err(bad("expected start:end:scale[:points]"));
        }
        let start: f64 = parts[0].parse().map_err(|_| bad("start is not a number"))?;
        let end: f64 = parts[1].parse().map_err(|_| bad("end is not a number"))?;
        let points: usize = match parts.get(3) {
            Some(p) => p.parse().map_err(|_| bad("points is not an integer"))?,
            None => DEFAULT_SWEEP_POINTS,
        };
        if points == 0 {
            return Err(bad("points must be positive"));
        }
        let t = |i: usize| if points == 1 { 0.0 } else { i as f64 / (points - 1) as f64 };
        let values: Vec<f64> = match parts[2] {
            "lin" => (0..points).map(|i| start + (end - start) * t(i)).collect(),
            "log" => {
                if start <= 0.0 || end <= 0.0 {
                    return Err(bad("log scale needs positive endpoints"));
                }
                let (a, b) = (start.ln(), end.ln());
                (0..points).map(|i| (a + (b - a) * t(i)).exp()).collect()
            }
            other => return Err(bad(&format!("unknown scale `{other}`"))),
        };
        let mut values = values;
        if matches!(param, SweepParam::NR | SweepParam::NB | SweepParam::N) {
            for v in values.iter_mut() {
                *v = v.round().max(1.0);
            }
            values.dedup();
        }
        Ok(SweepSpec { param, values })
    }
}

impl SweepSpec {
    pub fn configs(&self, base: &BoundConfig) -> Result<Vec<BoundConfig>> {
        self.values
            .iter()
            .map(|&v| {
                let mut c = base.clone();
                match self.param {
                    SweepParam::NR => c.n_r = v as usize,
                    SweepParam::NB => c.n_b = v as usize,
                    SweepParam::N => {
                        c.n_r = v as usize;
                        c.n_b = v as usize;
                    }
                    SweepParam::Lambda => c.lambda = Weight::new(v)?,
                    SweepParam::Het => c.het = v,
                    SweepParam::NoiseVar => c.noise_var = v,
                }
                Ok(c)
            })
            .collect()
    }
}

/// One sweep row: configuration columns plus one value per bound column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: usize,
    /// May be omitted when the configuration only feeds an allocation.
    #[serde(default)]
    pub n_r: usize,
    #[serde(default)]
    pub n_b: usize,
    pub lambda: f64,
    pub rho_r: f64,
    pub rho_b: f64,
    pub noise_var: f64,
    pub het: f64,
    pub bounds: BTreeMap<String, f64>,
    pub preconditions_met: BTreeMap<String, bool>,
}

pub fn sweep(base: &BoundConfig, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.configs(base)?
        .into_iter()
        .map(|c| {
            let table = bound_table(&c)?;
            Ok(SweepRow {
                d: c.d,
                n_r: c.n_r,
                n_b: c.n_b,
                lambda: c.lambda.value(),
                rho_r: c.rho_r,
                rho_b: c.rho_b,
                noise_var: c.noise_var,
                het: c.het,
                preconditions_met: table.iter().map(|(k, r)| (k.clone(), r.preconditions_met)).collect(),
                bounds: table.into_iter().map(|(k, r)| (k, r.value)).collect(),
            })
        })
        .collect()
}

/// Sweep rows as CSV; bound columns in [`bound_table`] order.
pub fn write_sweep_csv<W: std::io::Write>(base: &BoundConfig, spec: &SweepSpec, mut out: W) -> Result<()> {
    use crate::io::fmt17;
    let configs = spec.configs(base)?;
    let mut header = ["d", "n_r", "n_b", "lambda", "rho_r", "rho_b", "noise_var", "het"].map(String::from).to_vec();
    let mut wrote_header = false;
    for c in configs {
        let table = bound_table(&c)?;
        if !wrote_header {
            header.extend(table.iter().map(|(k, _)| k.clone()));
            writeln!(out, "{}", header.join(","))?;
            wrote_header = true;
        }
        let mut row = vec![c.d.to_string(), c.n_r.to_string(), c.n_b.to_string()];
        row.extend([c.lambda.value(), c.rho_r, c.rho_b, c.noise_var, c.het].map(fmt17));
        row.extend(table.iter().map(|(_, r)| fmt17(r.value)));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
