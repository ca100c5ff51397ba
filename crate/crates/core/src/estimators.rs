//! Per-group OLS, the known-covariance estimator β̃_λ and the pooled OLS β̂_λ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_gen::GroupDataset;
use crate::error::{FafError, Result};
use crate::linalg::{min_eigenvalue, spd_solve};
use crate::model::{Group, PopulationModel, Weight};

/// Rows per block in the moment accumulation. Block partial sums are merged
/// by a pairwise tree so the result does not depend on how blocks are
/// scheduled.
const MOMENT_BLOCK: usize = 256;

/// Uncentered second moments `Σ̂_g = (1/n)ΣX_iX_iᵀ`, `ν̂_g = (1/n)ΣY_iX_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub group: Group,
    pub sigma_hat: DMatrix<f64>,
    pub nu_hat: DVector<f64>,
    pub n: usize,
}

fn block_sums(xs: &DMatrix<f64>, ys: &DVector<f64>, lo: usize, hi: usize) -> (DMatrix<f64>, DVector<f64>) {
    let d = xs.ncols();
    let mut s = DMatrix::zeros(d, d);
    let mut v = DVector::zeros(d);
    for i in lo..hi {
        let y = ys[i];
        for a in 0..d {
            let xa = xs[(i, a)];
            v[a] += y * xa;
            for b in a..d {
                s[(a, b)] += xa * xs[(i, b)];
            }
        }
    }
    (s, v)
}

fn tree_reduce(mut parts: Vec<(DMatrix<f64>, DVector<f64>)>) -> (DMatrix<f64>, DVector<f64>) {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some((s1, v1)) = it.next() {
            match it.next() {
                Some((s2, v2)) => next.push((s1 + s2, v1 + v2)),
                None => next.push((s1, v1)),
            }
        }
        parts = next;
    }
    parts.pop().expect("at least one block")
}

pub fn empirical_moments(data: &GroupDataset) -> Result<EmpiricalMoments> {
    let n = data.n();
    if n == 0 {
        return Err(FafError::Invalid(format!("{} dataset is empty", data.group)));
    }
    let blocks: Vec<_> = (0..n)
        .step_by(MOMENT_BLOCK)
        .map(|lo| block_sums(&data.xs, &data.ys, lo, (lo + MOMENT_BLOCK).min(n)))
        .collect();
    let (mut s, v) = tree_reduce(blocks);
    let d = data.dim();
    for a in 0..d {
        for b in 0..a {
            s[(a, b)] = s[(b, a)];
        }
    }
    let inv_n = 1.0 / n as f64;
    Ok(EmpiricalMoments {
        group: data.group,
        sigma_hat: s * inv_n,
        nu_hat: v * inv_n,
        n,
    })
}

impl EmpiricalMoments {
    pub fn dim(&self) -> usize {
        self.nu_hat.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.sigma_hat)
    }

    /// `Σ̂_g⁻¹ ν̂_g`.
    pub fn ols(&self) -> Result<DVector<f64>> {
        if self.n < self.dim() {
            return Err(FafError::RankDeficient {
                what: format!("sigma_hat_{} (n = {} < d = {})", self.group, self.n, self.dim()),
                min_pivot: 0.0,
                max_pivot: 0.0,
            });
        }
        spd_solve(&self.sigma_hat, &self.nu_hat, &format!("sigma_hat_{}", self.group))
    }
}

/// OLS on one group's data.
pub fn group_ols(data: &GroupDataset) -> Result<DVector<f64>> {
    empirical_moments(data)?.ols()
}

fn check_pair(r: &EmpiricalMoments, b: &EmpiricalMoments) -> Result<()> {
    if r.group != Group::Red || b.group != Group::Blue {
        return Err(FafError::Invalid("expected (red, blue) datasets".into()));
    }
    if r.dim() != b.dim() {
        return Err(FafError::dim("blue dataset", r.dim(), b.dim()));
    }
    Ok(())
}

/// `β̃_λ = Σ_λ⁻¹(λΣ_r β̂_r + (1 − λ)Σ_b β̂_b)` from precomputed moments.
pub fn known_cov_from_moments(
    mom_r: &EmpiricalMoments,
    mom_b: &EmpiricalMoments,
    sigma_r: &DMatrix<f64>,
    sigma_b: &DMatrix<f64>,
    lambda: Weight,
) -> Result<DVector<f64>> {
    check_pair(mom_r, mom_b)?;
    let d = mom_r.dim();
    if sigma_r.nrows() != d || sigma_b.nrows() != d {
        return Err(FafError::dim("population covariance", d, sigma_r.nrows().max(sigma_b.nrows())));
    }
    let l = lambda.value();
    if l == 1.0 {
        return mom_r.ols();
    }
    if l == 0.0 {
        return mom_b.ols();
    }
    let beta_r = mom_r.ols()?;
    let beta_b = mom_b.ols()?;
    let sigma_l = sigma_r * l + sigma_b * (1.0 - l);
    let rhs = (sigma_r * beta_r) * l + (sigma_b * beta_b) * (1.0 - l);
    spd_solve(&sigma_l, &rhs, "sigma_lambda")
}

pub fn known_cov_estimator(
    data_r: &GroupDataset,
    data_b: &GroupDataset,
    sigma_r: &DMatrix<f64>,
    sigma_b: &DMatrix<f64>,
    lambda: Weight,
) -> Result<DVector<f64>> {
    known_cov_from_moments(
        &empirical_moments(data_r)?,
        &empirical_moments(data_b)?,
        sigma_r,
        sigma_b,
        lambda,
    )
}

/// `(Σ̂_λ, ν̂_λ)`.
pub fn blended_moments(
    mom_r: &EmpiricalMoments,
    mom_b: &EmpiricalMoments,
    lambda: Weight,
) -> (DMatrix<f64>, DVector<f64>) {
    let l = lambda.value();
    (
        &mom_r.sigma_hat * l + &mom_b.sigma_hat * (1.0 - l),
        &mom_r.nu_hat * l + &mom_b.nu_hat * (1.0 - l),
    )
}

/// `β̂_λ = Σ̂_λ⁻¹ ν̂_λ` from precomputed moments.
pub fn pooled_from_moments(
    mom_r: &EmpiricalMoments,
    mom_b: &EmpiricalMoments,
    lambda: Weight,
) -> Result<DVector<f64>> {
    check_pair(mom_r, mom_b)?;
    match lambda.value() {
        l if l == 1.0 => mom_r.ols(),
        l if l == 0.0 => mom_b.ols(),
        _ => {
            let (s, v) = blended_moments(mom_r, mom_b, lambda);
            spd_solve(&s, &v, "sigma_hat_lambda")
        }
    }
}

pub fn pooled_ols(data_r: &GroupDataset, data_b: &GroupDataset, lambda: Weight) -> Result<DVector<f64>> {
    pooled_from_moments(&empirical_moments(data_r)?, &empirical_moments(data_b)?, lambda)
}

/// Gradient of the empirical weighted risk `R̂_λ(β) = λR̂_r(β) + (1−λ)R̂_b(β)`
/// where `R̂_g(β) = (1/n_g)Σ(X_iᵀβ − Y_i)²`.
pub fn empirical_weighted_gradient(
    mom_r: &EmpiricalMoments,
    mom_b: &EmpiricalMoments,
    lambda: Weight,
    beta: &DVector<f64>,
) -> DVector<f64> {
    let (s, v) = blended_moments(mom_r, mom_b, lambda);
    (s * beta - v) * 2.0
}

/// Cross terms `(β̂ − β_λ)ᵀ Σ_g (β_λ − β_g)` for both groups. Their
/// λ-weighted sum vanishes for any `beta_est`.
pub fn cross_term(model: &PopulationModel, lambda: Weight, beta_est: &DVector<f64>) -> Result<(f64, f64)> {
    if beta_est.len() != model.dim() {
        return Err(FafError::dim("beta_est", model.dim(), beta_est.len()));
    }
    let opt = model.optimal_beta(lambda)?;
    Ok(cross_terms_at(model, beta_est, &opt))
}

pub(crate) fn cross_terms_at(model: &PopulationModel, beta_est: &DVector<f64>, opt: &DVector<f64>) -> (f64, f64) {
    let diff = beta_est - opt;
    let term = |g: Group| {
        let spec = model.group(g);
        diff.dot(&(&spec.sigma * (opt - &spec.beta)))
    };
    (term(Group::Red), term(Group::Blue))
}

/// Which estimator to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    GroupOls(Group),
    KnownCov,
    PooledOls,
}

impl EstimatorKind {
    pub fn fit_moments(
        self,
        model: &PopulationModel,
        mom_r: &EmpiricalMoments,
        mom_b: &EmpiricalMoments,
        lambda: Weight,
    ) -> Result<DVector<f64>> {
        match self {
            EstimatorKind::GroupOls(Group::Red) => mom_r.ols(),
            EstimatorKind::GroupOls(Group::Blue) => mom_b.ols(),
            EstimatorKind::KnownCov => {
                known_cov_from_moments(mom_r, mom_b, &model.red.sigma, &model.blue.sigma, lambda)
            }
            EstimatorKind::PooledOls => pooled_from_moments(mom_r, mom_b, lambda),
        }
    }

    /// `model` supplies the true covariances for [`EstimatorKind::KnownCov`].
    pub fn fit(
        self,
        model: &PopulationModel,
        data_r: &GroupDataset,
        data_b: &GroupDataset,
        lambda: Weight,
    ) -> Result<DVector<f64>> {
        self.fit_moments(model, &empirical_moments(data_r)?, &empirical_moments(data_b)?, lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateDiagnostics {
    pub min_eig_sigma_hat_r: f64,
    pub min_eig_sigma_hat_b: f64,
}

/// Estimate JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub kind: EstimatorKind,
    pub lambda: f64,
    pub beta: Vec<f64>,
    pub diagnostics: EstimateDiagnostics,
}

pub fn estimate(
    kind: EstimatorKind,
    model: &PopulationModel,
    data_r: &GroupDataset,
    data_b: &GroupDataset,
    lambda: Weight,
) -> Result<EstimateReport> {
    let mom_r = empirical_moments(data_r)?;
    let mom_b = empirical_moments(data_b)?;
    let beta = kind.fit_moments(model, &mom_r, &mom_b, lambda)?;
    Ok(EstimateReport {
        kind,
        lambda: lambda.value(),
        beta: beta.iter().copied().collect(),
        diagnostics: EstimateDiagnostics {
            min_eig_sigma_hat_r: mom_r.min_eigenvalue(),
            min_eig_sigma_hat_b: mom_b.min_eigenvalue(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_gen::sample_group;
    use crate::model::GroupSpec;
    use crate::rng::RngSpec;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn model(noise_var: f64, same_beta: bool) -> PopulationModel {
        let red = GroupSpec::new(
            Group::Red,
            dvec(&[1.0, -0.5, 0.25]),
            DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.5]),
        )
        .unwrap();
        let blue_beta = if same_beta { red.beta.clone() } else { dvec(&[-0.5, 1.0, 0.0]) };
        let blue = GroupSpec::spherical(Group::Blue, blue_beta, 0.8).unwrap();
        PopulationModel::new(red, blue, noise_var).unwrap()
    }

    fn data(m: &PopulationModel, n_r: usize, n_b: usize, seed: u64) -> (GroupDataset, GroupDataset) {
        (
            sample_group(m, Group::Red, n_r, RngSpec::new(seed, 0)).unwrap(),
            sample_group(m, Group::Blue, n_b, RngSpec::new(seed, 1)).unwrap(),
        )
    }

    #[test]
    fn single_sample_moments() {
        let ds = GroupDataset::new(Group::Red, DMatrix::from_row_slice(1, 2, &[2.0, -1.0]), dvec(&[3.0])).unwrap();
        let m = empirical_moments(&ds).unwrap();
        assert_eq!(m.sigma_hat, DMatrix::from_row_slice(2, 2, &[4.0, -2.0, -2.0, 1.0]));
        assert_eq!(m.nu_hat, dvec(&[6.0, -3.0]));
    }

    #[test]
    fn moments_match_direct_product() {
        let m = model(1.0, false);
        let (r, _) = data(&m, 1000, 10, 4);
        let mom = empirical_moments(&r).unwrap();
        let direct = r.xs.tr_mul(&r.xs) / 1000.0;
        assert!((&mom.sigma_hat - direct).amax() < 1e-12);
        let nu = r.xs.tr_mul(&r.ys) / 1000.0;
        assert!((&mom.nu_hat - nu).amax() < 1e-12);
    }

    #[test]
    fn noiseless_cross_moment_is_sigma_hat_beta() {
        let m = model(0.0, false);
        let (r, _) = data(&m, 40, 10, 2);
        let mom = empirical_moments(&r).unwrap();
        assert!((&mom.nu_hat - &mom.sigma_hat * &m.red.beta).amax() < 1e-14);
    }

    #[test]
    fn ols_recovers_noiseless_beta() {
        let m = model(0.0, false);
        let (r, b) = data(&m, 30, 30, 9);
        assert!((group_ols(&r).unwrap() - &m.red.beta).amax() < 1e-10);
        assert!((group_ols(&b).unwrap() - &m.blue.beta).amax() < 1e-10);
    }

    #[test]
    fn square_design_interpolates() {
        let m = model(1.0, false);
        let (r, _) = data(&m, 3, 3, 5);
        let beta = group_ols(&r).unwrap();
        let resid = &r.xs * beta - &r.ys;
        assert!(resid.amax() < 1e-9, "{resid}");
    }

    #[test]
    fn rank_deficiency_names_the_group() {
        let m = model(1.0, false);
        let (r, _) = data(&m, 2, 3, 5);
        let err = group_ols(&r).unwrap_err();
        assert!(err.to_string().contains("sigma_hat_red"), "{err}");
        // duplicated rows: n ≥ d but rank 1
        let xs = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 2.0, 4.0]);
        let ds = GroupDataset::new(Group::Blue, xs, dvec(&[1.0, 1.0, 2.0])).unwrap();
        match group_ols(&ds) {
            Err(FafError::RankDeficient { what, .. }) => assert!(what.contains("blue")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn known_cov_identity_covariances_average_the_ols_fits() {
        let red = GroupSpec::spherical(Group::Red, dvec(&[1.0, 0.0]), 1.0).unwrap();
        let blue = GroupSpec::spherical(Group::Blue, dvec(&[0.0, 2.0]), 1.0).unwrap();
        let m = PopulationModel::new(red, blue, 1.0).unwrap();
        let (r, b) = data(&m, 20, 25, 3);
        let lam = Weight::new(0.3).unwrap();
        let est = known_cov_estimator(&r, &b, &m.red.sigma, &m.blue.sigma, lam).unwrap();
        let expected = group_ols(&r).unwrap() * 0.3 + group_ols(&b).unwrap() * 0.7;
        assert!((est - expected).amax() < 1e-14);
        let one = known_cov_estimator(&r, &b, &m.red.sigma, &m.blue.sigma, Weight::new(1.0).unwrap()).unwrap();
        assert_eq!(one, group_ols(&r).unwrap());
    }

    #[test]
    fn pooled_endpoints_and_homogeneous_truth() {
        let m = model(1.0, false);
        let (r, b) = data(&m, 20, 25, 3);
        assert_eq!(pooled_ols(&r, &b, Weight::new(0.0).unwrap()).unwrap(), group_ols(&b).unwrap());
        assert_eq!(pooled_ols(&r, &b, Weight::new(1.0).unwrap()).unwrap(), group_ols(&r).unwrap());

        let same = model(0.0, true);
        let (r, b) = data(&same, 10, 12, 8);
        for l in [0.0, 0.2, 0.5, 0.9, 1.0] {
            let est = pooled_ols(&r, &b, Weight::new(l).unwrap()).unwrap();
            assert!((est - &same.red.beta).amax() < 1e-12);
        }
    }

    #[test]
    fn pooled_endpoint_ignores_small_unused_group() {
        let m = model(1.0, false);
        let (r, b) = data(&m, 20, 1, 3);
        assert!(pooled_ols(&r, &b, Weight::new(1.0).unwrap()).is_ok());
        assert!(pooled_ols(&r, &b, Weight::new(0.0).unwrap()).is_err());
    }

    #[test]
    fn noiseless_known_cov_is_exact_but_pooled_is_biased() {
        let m = model(0.0, false);
        let (r, b) = data(&m, 15, 15, 21);
        let lam = Weight::new(0.4).unwrap();
        let target = m.optimal_beta(lam).unwrap();
        let kc = EstimatorKind::KnownCov.fit(&m, &r, &b, lam).unwrap();
        assert!((&kc - &target).amax() < 1e-12);
        let po = EstimatorKind::PooledOls.fit(&m, &r, &b, lam).unwrap();
        assert!((&po - &target).amax() > 1e-6);
    }

    #[test]
    fn cross_terms_cancel_under_weighting() {
        let m = model(1.0, false);
        let lam = Weight::new(0.5).unwrap();
        let opt = m.optimal_beta(lam).unwrap();
        assert_eq!(cross_term(&m, lam, &opt).unwrap(), (0.0, 0.0));
        let est = dvec(&[0.3, 2.0, -1.0]);
        let (tr, tb) = cross_term(&m, lam, &est).unwrap();
        assert!((tr + tb).abs() < 1e-12 * (1.0 + tr.abs()));
    }

    #[test]
    fn estimate_report_serializes() {
        let m = model(1.0, false);
        let (r, b) = data(&m, 20, 20, 1);
        let rep = estimate(EstimatorKind::GroupOls(Group::Blue), &m, &r, &b, Weight::new(0.5).unwrap()).unwrap();
        let text = serde_json::to_string(&rep).unwrap();
        assert!(text.starts_with(r#"{"kind":{"group_ols":"blue"},"lambda":0.5,"beta":["#), "{text}");
        assert!(rep.diagnostics.min_eig_sigma_hat_r > 0.0);
    }
}
