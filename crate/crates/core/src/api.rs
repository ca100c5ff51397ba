//! Request handlers shared by the `faf` CLI and the HTTP service. Both front
//! ends deserialize the same request types and serialize the same responses.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::allocation::{allocate, AllocateRequest, AllocationPlan};
use crate::bounds::{bound_table, sweep, BoundConfig, BoundReport, SweepRow, SweepSpec};
use crate::data_gen::{sample_group, GroupDataset};
use crate::error::{FafError, Result};
use crate::estimators::{estimate as fit_estimate, EstimateReport, EstimatorKind};
use crate::io::read_dataset_csv;
use crate::linalg::min_eigenvalue;
use crate::model::{trace_frontier, uniform_grid, Group, PopulationModel, Weight};
use crate::montecarlo::{
    assouad_probe, decomposition_mc, frontier_band_mc, rate_fit, realization_asymmetry_mc, run_excess_mc,
    BandConfig, McConfig, ProbeConfig, ProbeReport,
};
use crate::rng::RngSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub lambda: f64,
    pub risk_r: f64,
    pub risk_b: f64,
    pub disparity: f64,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierResponse {
    pub grid: usize,
    pub points: Vec<FrontierRow>,
}

pub fn frontier(model: &PopulationModel, grid: usize) -> Result<FrontierResponse> {
    let pts = trace_frontier(model, &uniform_grid(grid)?)?;
    Ok(FrontierResponse {
        grid,
        points: pts
            .into_iter()
            .map(|p| FrontierRow {
                lambda: p.lambda.value(),
                risk_r: p.risks.risk_r,
                risk_b: p.risks.risk_b,
                disparity: p.risks.disparity(),
                beta: p.beta.iter().copied().collect(),
            })
            .collect(),
    })
}

/// Frontier CSV in the same format as [`crate::io::write_frontier_csv`].
pub fn frontier_csv(model: &PopulationModel, grid: usize) -> Result<String> {
    let pts = trace_frontier(model, &uniform_grid(grid)?)?;
    let mut buf = Vec::new();
    crate::io::write_frontier_csv(&pts, &mut buf)?;
    Ok(String::from_utf8(buf).expect("ascii csv"))
}

/// Where one group's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    Rows { x: Vec<Vec<f64>>, y: Vec<f64> },
    /// Drawn from the model; `stream` defaults to 0 for red and 1 for blue.
    Sample {
        n: usize,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stream: Option<u64>,
    },
    /// CSV file written by `faf sample`; CLI only.
    Csv { csv: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateRequest {
    pub model: PopulationModel,
    pub estimator: EstimatorKind,
    pub lambda: Weight,
    pub red: DataSource,
    pub blue: DataSource,
}

fn load_data(
    src: &DataSource,
    model: &PopulationModel,
    group: Group,
    allow_files: bool,
) -> Result<GroupDataset> {
    match src {
        DataSource::Rows { x, y } => {
            let d = model.dim();
            if x.iter().any(|r| r.len() != d) {
                return Err(FafError::Invalid(format!("{group}.x rows must have length d = {d}")));
            }
            let flat: Vec<f64> = x.iter().flatten().copied().collect();
            GroupDataset::new(group, DMatrix::from_row_slice(x.len(), d, &flat), DVector::from_vec(y.clone()))
        }
        DataSource::Sample { n, seed, stream } => {
            let stream = stream.unwrap_or(if group == Group::Red { 0 } else { 1 });
            sample_group(model, group, *n, RngSpec::new(*seed, stream))
        }
        DataSource::Csv { csv } => {
            if !allow_files {
                return Err(FafError::Invalid("file data sources are not accepted here".into()));
            }
            let (xs, ys) = read_dataset_csv(&std::fs::read_to_string(csv)?)?;
            GroupDataset::new(group, xs, ys)
        }
    }
}

pub fn estimate(req: &EstimateRequest, allow_files: bool) -> Result<EstimateReport> {
    let r = load_data(&req.red, &req.model, Group::Red, allow_files)?;
    let b = load_data(&req.blue, &req.model, Group::Blue, allow_files)?;
    if r.dim() != req.model.dim() || b.dim() != req.model.dim() {
        return Err(FafError::dim("dataset", req.model.dim(), r.dim().max(b.dim())));
    }
    fit_estimate(req.estimator, &req.model, &r, &b, req.lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsRequest {
    pub config: BoundConfig,
    /// `name=start:end:{lin|log}[:points]`; omitted for a single table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundsResponse {
    Table { bounds: BTreeMap<String, BoundReport> },
    Sweep { rows: Vec<SweepRow> },
}

impl BoundsResponse {
    /// Every violated precondition, prefixed by its bound name.
    pub fn violations(&self) -> Vec<String> {
        match self {
            BoundsResponse::Table { bounds } => bounds
                .iter()
                .flat_map(|(k, r)| r.violated.iter().map(move |v| format!("{k}: {v}")))
                .collect(),
            BoundsResponse::Sweep { rows } => rows
                .iter()
                .flat_map(|row| {
                    row.preconditions_met
                        .iter()
                        .filter(|(_, ok)| !**ok)
                        .map(move |(k, _)| format!("{k} at n_r = {}, n_b = {}", row.n_r, row.n_b))
                })
                .collect(),
        }
    }
}

pub fn bounds(req: &BoundsRequest) -> Result<BoundsResponse> {
    match &req.sweep {
        None => Ok(BoundsResponse::Table {
            bounds: bound_table(&req.config)?.into_iter().collect(),
        }),
        Some(s) => Ok(BoundsResponse::Sweep {
            rows: sweep(&req.config, &s.parse::<SweepSpec>()?)?,
        }),
    }
}

pub fn bounds_csv(req: &BoundsRequest) -> Result<String> {
    let spec: SweepSpec = match &req.sweep {
        Some(s) => s.parse()?,
        None => SweepSpec { param: crate::bounds::SweepParam::NR, values: vec![req.config.n_r as f64] },
    };
    let mut buf = Vec::new();
    crate::bounds::write_sweep_csv(&req.config, &spec, &mut buf)?;
    Ok(String::from_utf8(buf).expect("ascii csv"))
}

pub fn allocation(req: &AllocateRequest) -> Result<AllocationPlan> {
    allocate(req)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McAnalysis {
    #[default]
    Excess,
    Decomposition,
    Asymmetry,
    Band,
    Rate,
}

impl std::str::FromStr for McAnalysis {
    type Err = FafError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| FafError::Invalid(format!("unknown analysis `{s}`")))
    }
}

/// Options that select the analysis run on an [`McConfig`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McOptions {
    #[serde(default)]
    pub analysis: McAnalysis,
    /// Weight grid size for the band analysis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    /// Sample sizes for the rate analysis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub keep_cloud: bool,
}

impl McOptions {
    /// Parses a comma-separated list such as `100,200,400,800`.
    pub fn parse_n_grid(s: &str) -> Result<Vec<usize>> {
        s.split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| FafError::Invalid(format!("bad n_grid entry `{t}`"))))
            .collect()
    }
}

pub const DEFAULT_RATE_GRID: [usize; 5] = [100, 200, 400, 800, 1600];

fn band_config(cfg: &McConfig, opts: &McOptions) -> Result<BandConfig> {
    Ok(BandConfig {
        model: cfg.model.clone(),
        grid: uniform_grid(opts.grid.unwrap_or(crate::model::DEFAULT_GRID_POINTS))?,
        n_r: cfg.n_r,
        n_b: cfg.n_b,
        estimator: cfg.estimator,
        replicates: cfg.replicates,
        master_seed: cfg.master_seed,
        keep_cloud: opts.keep_cloud,
    })
}

/// Runs the selected analysis. Rank-deficient replicates are a numerical
/// error for the excess analysis.
pub fn run_mc(cfg: &McConfig, opts: &McOptions) -> Result<serde_json::Value> {
    Ok(match opts.analysis {
        McAnalysis::Excess => {
            let rep = run_excess_mc(cfg)?;
            rep.ensure_clean()?;
            serde_json::to_value(rep)?
        }
        McAnalysis::Decomposition => serde_json::to_value(decomposition_mc(cfg)?)?,
        McAnalysis::Asymmetry => serde_json::to_value(realization_asymmetry_mc(cfg)?)?,
        McAnalysis::Band => serde_json::to_value(frontier_band_mc(&band_config(cfg, opts)?)?)?,
        McAnalysis::Rate => {
            let grid = opts.n_grid.clone().unwrap_or_else(|| DEFAULT_RATE_GRID.to_vec());
            serde_json::to_value(rate_fit(cfg, &grid)?)?
        }
    })
}

/// Band CSV for `faf mc --analysis band --out band.csv`.
pub fn band_csv(cfg: &McConfig, opts: &McOptions) -> Result<String> {
    let band = frontier_band_mc(&band_config(cfg, opts)?)?;
    let mut buf = Vec::new();
    crate::montecarlo::write_band_csv(&band, &mut buf)?;
    Ok(String::from_utf8(buf).expect("ascii csv"))
}

pub fn probe(cfg: &ProbeConfig) -> Result<ProbeReport> {
    assouad_probe(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub d: usize,
    pub noise_var: f64,
    pub heterogeneity: f64,
    pub min_eig_sigma_r: f64,
    pub min_eig_sigma_b: f64,
    pub group_balanced: bool,
    pub balance_gaps: [f64; 2],
}

pub fn validate(model: &PopulationModel) -> ValidationReport {
    let bal = model.group_balance_check();
    ValidationReport {
        valid: true,
        d: model.dim(),
        noise_var: model.noise_var,
        heterogeneity: model.heterogeneity(),
        min_eig_sigma_r: min_eigenvalue(&model.red.sigma),
        min_eig_sigma_b: min_eigenvalue(&model.blue.sigma),
        group_balanced: bal.is_balanced,
        balance_gaps: bal.gaps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MODEL: &str = r#"{"d": 2, "noise_var": 1.0,
        "red": {"beta": [1.0, 0.0], "sigma": [[2.0, 0.0], [0.0, 1.0]]},
        "blue": {"beta": [0.0, 1.0], "rho": 1.0}}"#;

    fn model() -> PopulationModel {
        crate::io::parse_model(MODEL).unwrap()
    }

    #[test]
    fn frontier_endpoints() {
        let f = frontier(&model(), 3).unwrap();
        assert_eq!(f.points.len(), 3);
        assert_eq!(f.points[0].beta, vec![0.0, 1.0]);
        assert_eq!(f.points[2].beta, vec![1.0, 0.0]);
        assert_eq!(f.points[2].risk_r, 1.0);
        assert_eq!(frontier_csv(&model(), 101).unwrap().lines().count(), 102);
    }

    #[test]
    fn estimate_from_rows_and_samples() {
        let req: EstimateRequest = serde_json::from_value(serde_json::json!({
            "model": serde_json::from_str::<serde_json::Value>(MODEL).unwrap(),
            "estimator": {"group_ols": "red"},
            "lambda": 1.0,
            "red": {"x": [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], "y": [2.0, 3.0, 5.0]},
            "blue": {"n": 10, "seed": 4}
        }))
        .unwrap();
        let rep = estimate(&req, false).unwrap();
        assert!((rep.beta[0] - 2.0).abs() < 1e-12 && (rep.beta[1] - 3.0).abs() < 1e-12);
        let mut csv_req = req.clone();
        csv_req.red = DataSource::Csv { csv: "/nonexistent.csv".into() };
        assert!(matches!(estimate(&csv_req, false), Err(FafError::Invalid(_))));
    }

    #[test]
    fn mc_analysis_names() {
        assert_eq!("band".parse::<McAnalysis>().unwrap(), McAnalysis::Band);
        assert!("nope".parse::<McAnalysis>().is_err());
        assert_eq!(McOptions::parse_n_grid("1, 2,3").unwrap(), vec![1, 2, 3]);
    }
}
