//! File formats: model JSON, frontier CSV, dataset CSV and float formatting.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FafError, Result};
use crate::model::{FrontierPoint, Group, GroupSpec, PopulationModel};

/// Format a float with 17 significant digits (round-trip exact).
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// JSON form of one group. Exactly one of `sigma` and `rho` must be given;
/// `rho` means `sigma = rho² I_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupJson {
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

/// JSON form of a [`PopulationModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelJson {
    pub d: usize,
    pub noise_var: f64,
    pub red: GroupJson,
    pub blue: GroupJson,
}

impl GroupJson {
    fn into_spec(self, label: Group, d: usize) -> Result<GroupSpec> {
        if self.beta.len() != d {
            return Err(FafError::dim(format!("{label}.beta"), d, self.beta.len()));
        }
        let beta = DVector::from_vec(self.beta);
        match (self.sigma, self.rho) {
            (Some(rows), None) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(FafError::Invalid(format!("{label}.sigma must be a {d}x{d} matrix")));
                }
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                GroupSpec::new(label, beta, DMatrix::from_row_slice(d, d, &flat))
            }
            (None, Some(rho)) => GroupSpec::spherical(label, beta, rho),
            (Some(_), Some(_)) => Err(FafError::Invalid(format!(
                "{label}: give either sigma or rho, not both"
            ))),
            (None, None) => Err(FafError::Invalid(format!("{label}: missing sigma or rho"))),
        }
    }

    fn from_spec(spec: &GroupSpec) -> Self {
        let d = spec.dim();
        GroupJson {
            beta: spec.beta.iter().copied().collect(),
            sigma: Some((0..d).map(|i| spec.sigma.row(i).iter().copied().collect()).collect()),
            rho: None,
        }
    }
}

impl TryFrom<ModelJson> for PopulationModel {
    type Error = FafError;

    fn try_from(j: ModelJson) -> Result<Self> {
        if j.d == 0 {
            return Err(FafError::Invalid("d must be at least 1".into()));
        }
        let red = j.red.into_spec(Group::Red, j.d)?;
        let blue = j.blue.into_spec(Group::Blue, j.d)?;
        PopulationModel::new(red, blue, j.noise_var)
    }
}

impl From<&PopulationModel> for ModelJson {
    fn from(m: &PopulationModel) -> Self {
        ModelJson {
            d: m.dim(),
            noise_var: m.noise_var,
            red: GroupJson::from_spec(&m.red),
            blue: GroupJson::from_spec(&m.blue),
        }
    }
}

impl Serialize for PopulationModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for PopulationModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ModelJson::deserialize(d)?;
        PopulationModel::try_from(j).map_err(serde::de::Error::custom)
    }
}

pub fn parse_model(text: &str) -> Result<PopulationModel> {
    let j: ModelJson = serde_json::from_str(text)?;
    PopulationModel::try_from(j)
}

pub fn read_model(path: &Path) -> Result<PopulationModel> {
    parse_model(&std::fs::read_to_string(path)?)
}

/// Frontier CSV: `lambda, risk_r, risk_b, beta_0..beta_{d-1}`.
pub fn write_frontier_csv<W: Write>(points: &[FrontierPoint], mut out: W) -> Result<()> {
    let d = points.first().map_or(0, |p| p.beta.len());
    let mut header = vec!["lambda".to_string(), "risk_r".into(), "risk_b".into()];
    header.extend((0..d).map(|i| format!("beta_{i}")));
    writeln!(out, "{}", header.join(","))?;
    for p in points {
        let mut row = vec![fmt17(p.lambda.value()), fmt17(p.risks.risk_r), fmt17(p.risks.risk_b)];
        row.extend(p.beta.iter().map(|v| fmt17(*v)));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Columnar CSV `x_0..x_{d-1}, y` for one dataset.
pub fn write_dataset_csv<W: Write>(xs: &DMatrix<f64>, ys: &DVector<f64>, mut out: W) -> Result<()> {
    let d = xs.ncols();
    let mut header: Vec<String> = (0..d).map(|i| format!("x_{i}")).collect();
    header.push("y".into());
    writeln!(out, "{}", header.join(","))?;
    for i in 0..xs.nrows() {
        let mut row: Vec<String> = xs.row(i).iter().map(|v| fmt17(*v)).collect();
        row.push(fmt17(ys[i]));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Parse a dataset CSV written by [`write_dataset_csv`].
pub fn read_dataset_csv(text: &str) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| FafError::Invalid("empty dataset CSV".into()))?;
    let cols = header.split(',').count();
    if cols < 2 {
        return Err(FafError::Invalid("dataset CSV needs at least one x column and y".into()));
    }
    let d = cols - 1;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let vals = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| FafError::Invalid(format!("row {}: {e}", lineno + 1)))?;
        if vals.len() != cols {
            return Err(FafError::Invalid(format!(
                "row {} has {} fields, expected {cols}",
                lineno + 1,
                vals.len()
            )));
        }
        xs.extend_from_slice(&vals[..d]);
        ys.push(vals[d]);
    }
    let n = ys.len();
    Ok((DMatrix::from_row_slice(n, d, &xs), DVector::from_vec(ys)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{trace_frontier, uniform_grid};

    const MODEL: &str = r#"{"d": 2, "noise_var": 1.0,
        "red": {"beta": [1.0, 0.0], "sigma": [[2.0, 0.0], [0.0, 1.0]]},
        "blue": {"beta": [0.0, 1.0], "rho": 1.5}}"#;

    #[test]
    fn parses_sigma_and_rho_forms() {
        let m = parse_model(MODEL).unwrap();
        assert_eq!(m.blue.sigma[(0, 0)], 2.25);
        assert_eq!(m.blue.sigma[(0, 1)], 0.0);
        assert_eq!(m.red.sigma[(0, 0)], 2.0);
    }

    #[test]
    fn json_round_trip() {
        let m = parse_model(MODEL).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(parse_model(&text).unwrap(), m);
    }

    #[test]
    fn rejects_bad_models() {
        let bad = MODEL.replace("[[2.0, 0.0], [0.0, 1.0]]", "[[1.0, 2.0], [2.0, 1.0]]");
        let err = parse_model(&bad).unwrap_err();
        assert!(err.to_string().contains("red.sigma"), "{err}");
        let bad_dim = MODEL.replace("\"d\": 2", "\"d\": 3");
        assert!(parse_model(&bad_dim).is_err());
        let both = MODEL.replace("\"rho\": 1.5", "\"rho\": 1.5, \"sigma\": [[1.0,0.0],[0.0,1.0]]");
        assert!(parse_model(&both).is_err());
    }

    #[test]
    fn frontier_csv_shape() {
        let m = parse_model(MODEL).unwrap();
        let pts = trace_frontier(&m, &uniform_grid(5).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_frontier_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "lambda,risk_r,risk_b,beta_0,beta_1");
        assert_eq!(lines.len(), 6);
        // 17 significant digits: one leading digit plus 16 decimals
        let first = lines[1].split(',').next().unwrap();
        assert_eq!(first, "0.0000000000000000e0");
    }

    #[test]
    fn fmt17_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
        }
    }
}
