//! Seeded synthetic data for the linear model and the hypercube instance
//! families used to probe worst-case risk.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FafError, Result};
use crate::linalg::{cholesky_lower, scaled_identity, sym_eigenvalues};
use crate::model::{Group, GroupSpec, PopulationModel};
use crate::rng::{NormalStream, RngSpec};

/// Samples `S_g = {(X_i, Y_i)}` for one group. Rows of `xs` are covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDataset {
    pub group: Group,
    pub xs: DMatrix<f64>,
    pub ys: DVector<f64>,
}

impl GroupDataset {
    pub fn new(group: Group, xs: DMatrix<f64>, ys: DVector<f64>) -> Result<Self> {
        if xs.nrows() == 0 {
            return Err(FafError::Invalid(format!("{group} dataset is empty")));
        }
        if xs.nrows() != ys.len() {
            return Err(FafError::dim(format!("{group} responses"), xs.nrows(), ys.len()));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(FafError::Invalid(format!("{group} dataset has non-finite entries")));
        }
        Ok(GroupDataset { group, xs, ys })
    }

    pub fn n(&self) -> usize {
        self.xs.nrows()
    }

    pub fn dim(&self) -> usize {
        self.xs.ncols()
    }
}

/// JSON sidecar written next to an exported dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub seed: u64,
    pub stream: u64,
    pub n: usize,
    pub d: usize,
    pub group: Group,
}

/// Precomputed sampler for one group: Cholesky factor, coefficients and
/// noise scale.
#[derive(Debug, Clone)]
pub(crate) struct GroupSampler {
    group: Group,
    chol: DMatrix<f64>,
    beta: DVector<f64>,
    noise_sd: f64,
}

impl GroupSampler {
    pub(crate) fn new(model: &PopulationModel, group: Group) -> Result<Self> {
        let spec = model.group(group);
        Ok(GroupSampler {
            group,
            chol: cholesky_lower(&spec.sigma, &format!("{group}.sigma"))?,
            beta: spec.beta.clone(),
            noise_sd: model.noise_var.sqrt(),
        })
    }

    /// Draws `n` rows. Per row: `d` normals for the covariate, then one for
    /// the noise.
    pub(crate) fn draw(&self, n: usize, stream: &mut NormalStream) -> (GroupDataset, DVector<f64>) {
        let d = self.beta.len();
        let mut xs = DMatrix::zeros(n, d);
        let mut ys = DVector::zeros(n);
        let mut eps = DVector::zeros(n);
        let mut z = vec![0.0; d];
        for i in 0..n {
            stream.fill_normals(&mut z);
            for a in 0..d {
                let mut acc = 0.0;
                for b in 0..=a {
                    acc += self.chol[(a, b)] * z[b];
                }
                xs[(i, a)] = acc;
            }
            let e = self.noise_sd * stream.next_normal();
            let mut y = 0.0;
            for a in 0..d {
                y += xs[(i, a)] * self.beta[a];
            }
            ys[i] = y + e;
            eps[i] = e;
        }
        (
            GroupDataset {
                group: self.group,
                xs,
                ys,
            },
            eps,
        )
    }
}

/// Draw `n` samples `X ~ N(0, Σ_g)`, `Y = Xᵀβ_g + ε`, `ε ~ N(0, σ²)`.
pub fn sample_group(model: &PopulationModel, group: Group, n: usize, rng: RngSpec) -> Result<GroupDataset> {
    if n == 0 {
        return Err(FafError::Invalid("sample size n must be at least 1".into()));
    }
    let sampler = GroupSampler::new(model, group)?;
    Ok(sampler.draw(n, &mut rng.normals()).0)
}

/// Small-ball constants `(C, α)` of a Gaussian covariate:
/// `P(|θᵀX| ≤ t‖θ‖_Σ) ≤ 2φ(0)·t`.
pub fn gaussian_small_ball_params() -> (f64, f64) {
    ((2.0 / std::f64::consts::PI).sqrt(), 1.0)
}

/// ψ₂-norm of a standard normal: the smallest `t` with `E exp(Z²/t²) ≤ 2`.
pub fn gaussian_subgaussian_param() -> f64 {
    (8.0_f64 / 3.0).sqrt()
}

/// A vector in {−1, +1}^d.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct SignVector(Vec<i8>);

impl SignVector {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if signs.is_empty() {
            return Err(FafError::Invalid("sign vector is empty".into()));
        }
        if let Some(bad) = signs.iter().find(|s| **s != 1 && **s != -1) {
            return Err(FafError::Invalid(format!("sign vector entry {bad} is not ±1")));
        }
        Ok(SignVector(signs))
    }

    pub fn ones(d: usize) -> Self {
        SignVector(vec![1; d])
    }

    /// The `index`-th pattern in binary order: bit `i` set means `−1` at `i`.
    pub fn from_index(d: usize, index: u64) -> Self {
        SignVector((0..d).map(|i| if index >> i & 1 == 1 { -1 } else { 1 }).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn signs(&self) -> &[i8] {
        &self.0
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.0.len(), self.0.iter().map(|s| f64::from(*s)))
    }

    pub fn negated(&self) -> Self {
        SignVector(self.0.iter().map(|s| -s).collect())
    }

    pub fn flipped(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        v[i] = -v[i];
        SignVector(v)
    }
}

impl TryFrom<Vec<i8>> for SignVector {
    type Error = FafError;
    fn try_from(v: Vec<i8>) -> Result<Self> {
        SignVector::new(v)
    }
}

impl From<SignVector> for Vec<i8> {
    fn from(s: SignVector) -> Vec<i8> {
        s.0
    }
}

/// Mean-hypercube instance: `β_g = h_g ξ_g`, `Σ_g = ρ_g² I_d`,
/// `h_g² = σ²/(4 n_g ρ_g²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssouadVarianceInstance {
    pub xi_r: SignVector,
    pub xi_b: SignVector,
    pub h_r: f64,
    pub h_b: f64,
    pub model: PopulationModel,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(FafError::Invalid(format!("{name} must be positive, got {v}")))
    }
}

pub fn build_assouad_variance_instance(
    xi_r: &SignVector,
    xi_b: &SignVector,
    n_r: usize,
    n_b: usize,
    rho_r: f64,
    rho_b: f64,
    sigma2: f64,
) -> Result<AssouadVarianceInstance> {
    if xi_r.dim() != xi_b.dim() {
        return Err(FafError::dim("xi_b", xi_r.dim(), xi_b.dim()));
    }
    if n_r == 0 || n_b == 0 {
        return Err(FafError::Invalid("sample sizes must be positive".into()));
    }
    positive("rho_r", rho_r)?;
    positive("rho_b", rho_b)?;
    positive("sigma2", sigma2)?;
    let h = |n: usize, rho: f64| (sigma2 / (4.0 * n as f64 * rho * rho)).sqrt();
    let (h_r, h_b) = (h(n_r, rho_r), h(n_b, rho_b));
    let red = GroupSpec::spherical(Group::Red, xi_r.to_vector() * h_r, rho_r)?;
    let blue = GroupSpec::spherical(Group::Blue, xi_b.to_vector() * h_b, rho_b)?;
    Ok(AssouadVarianceInstance {
        xi_r: xi_r.clone(),
        xi_b: xi_b.clone(),
        h_r,
        h_b,
        model: PopulationModel::new(red, blue, sigma2)?,
    })
}

impl AssouadVarianceInstance {
    /// Largest Euclidean norm of the two coefficient vectors, `h_g √d`.
    pub fn max_beta_norm(&self) -> f64 {
        self.model.red.beta.norm().max(self.model.blue.beta.norm())
    }

    /// Largest coordinate magnitude of the two coefficient vectors, `h_g`.
    pub fn max_beta_amplitude(&self) -> f64 {
        self.h_r.max(self.h_b)
    }
}

/// Covariance-hypercube instance: one group's covariance is
/// `ρ² I_d + h Σ_i ξ_i u_i u_iᵀ` with `h = 2ρ²/(5√n)`, the other is spherical.
#[derive(Debug, Clone, PartialEq)]
pub struct AssouadBiasInstance {
    pub xi: SignVector,
    pub perturbed_group: Group,
    pub h: f64,
    /// ρ of the perturbed group.
    pub rho: f64,
    pub v: DVector<f64>,
    pub u: Vec<DVector<f64>>,
    pub model: PopulationModel,
}

/// Directions `u_i`: `(e_i + v)/‖e_i + v‖` when `e_iᵀv ≥ 0`, otherwise
/// `(e_i − v)/‖e_i − v‖`.
pub fn perturbation_directions(v: &DVector<f64>) -> Vec<DVector<f64>> {
    let d = v.len();
    (0..d)
        .map(|i| {
            let mut w = if v[i] >= 0.0 { v.clone() } else { -v };
            w[i] += 1.0;
            let norm = w.norm();
            w / norm
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn build_assouad_bias_instance(
    xi: &SignVector,
    perturbed_group: Group,
    beta_r: &DVector<f64>,
    beta_b: &DVector<f64>,
    rho_r: f64,
    rho_b: f64,
    n: usize,
    noise_var: f64,
) -> Result<AssouadBiasInstance> {
    let d = xi.dim();
    if beta_r.len() != d || beta_b.len() != d {
        return Err(FafError::dim("beta", d, beta_r.len().max(beta_b.len())));
    }
    positive("rho_r", rho_r)?;
    positive("rho_b", rho_b)?;
    let diff = beta_r - beta_b;
    let het = diff.norm();
    if het == 0.0 {
        return Err(FafError::Invalid(
            "beta_r equals beta_b: perturbation direction v is undefined".into(),
        ));
    }
    if n < 16 * d * d {
        return Err(FafError::Precondition(format!(
            "n_g >= 16 d^2 required for the covariance sandwich: n = {n}, 16 d^2 = {}",
            16 * d * d
        )));
    }
    let v = diff / het;
    let u = perturbation_directions(&v);
    let rho = match perturbed_group {
        Group::Red => rho_r,
        Group::Blue => rho_b,
    };
    let h = 2.0 * rho * rho / (5.0 * (n as f64).sqrt());
    let mut perturbed = scaled_identity(d, rho * rho);
    for (ui, s) in u.iter().zip(xi.signs()) {
        perturbed += (ui * ui.transpose()) * (h * f64::from(*s));
    }
    // exact symmetry for the SPD check
    perturbed = (&perturbed + perturbed.transpose()) * 0.5;
    let (sigma_r, sigma_b) = match perturbed_group {
        Group::Red => (perturbed, scaled_identity(d, rho_b * rho_b)),
        Group::Blue => (scaled_identity(d, rho_r * rho_r), perturbed),
    };
    let red = GroupSpec::new(Group::Red, beta_r.clone(), sigma_r)?;
    let blue = GroupSpec::new(Group::Blue, beta_b.clone(), sigma_b)?;
    Ok(AssouadBiasInstance {
        xi: xi.clone(),
        perturbed_group,
        h,
        rho,
        v,
        u,
        model: PopulationModel::new(red, blue, noise_var)?,
    })
}

impl AssouadBiasInstance {
    /// Extreme eigenvalues of the perturbed covariance divided by ρ².
    pub fn sandwich_ratios(&self) -> (f64, f64) {
        let rho2 = self.rho * self.rho;
        let ev = sym_eigenvalues(&self.model.group(self.perturbed_group).sigma);
        (ev[0] / rho2, ev[ev.len() - 1] / rho2)
    }

    /// `0.9ρ² I ⪯ Σ^{(ξ)} ⪯ 1.1ρ² I`.
    pub fn satisfies_sandwich(&self) -> bool {
        let (lo, hi) = self.sandwich_ratios();
        lo >= 0.9 && hi <= 1.1
    }
}
