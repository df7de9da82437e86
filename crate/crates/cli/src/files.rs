//! JSON file formats: systems, reduced models and run reports.

use std::path::Path;

use h2mm_core::lti::LtiSystem;
use h2mm_core::moments::{Provenance, ReducedModel};
use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Dense matrix stored as a list of rows.
pub type Rows = Vec<Vec<f64>>;

pub fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &Rows, name: &str) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Parse(format!("{name}: rows have different lengths")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(CliError::Parse(format!("{name}: non-finite entry")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
}

impl SystemFile {
    pub fn from_system(sys: &LtiSystem<f64>) -> Self {
        Self {
            n: Some(sys.n()),
            m: Some(sys.m()),
            p: Some(sys.p()),
            a: to_rows(sys.a()),
            b: to_rows(sys.b()),
            c: to_rows(sys.c()),
        }
    }

    pub fn to_system(&self) -> Result<LtiSystem<f64>, CliError> {
        let a = from_rows(&self.a, "A")?;
        let b = from_rows(&self.b, "B")?;
        let c = from_rows(&self.c, "C")?;
        let declared = [
            ("n", self.n, a.nrows()),
            ("m", self.m, b.ncols()),
            ("p", self.p, c.nrows()),
        ];
        for (name, want, got) in declared {
            if want.is_some_and(|w| w != got) {
                return Err(CliError::Parse(format!(
                    "declared {name} = {} but the matrices give {got}",
                    want.unwrap_or_default()
                )));
            }
        }
        LtiSystem::new(a, b, c).map_err(|e| CliError::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProvenanceFile {
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Rows>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Rows>,
    #[serde(rename = "Pi", default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Rows>,
    /// Interpolation points as `[re, im]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(rename = "F")]
    pub f: Rows,
    #[serde(rename = "G")]
    pub g: Rows,
    #[serde(rename = "H")]
    pub h: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<ProvenanceFile>,
}

impl ModelFile {
    pub fn from_model(model: &ReducedModel<f64>, points: &[Complex<f64>], mode: Option<&str>) -> Self {
        let provenance = match &model.provenance {
            Some(Provenance::Right { s, l, pi, .. }) => Some(ProvenanceFile {
                s: Some(to_rows(s)),
                l: Some(to_rows(l)),
                pi: Some(to_rows(pi)),
                points: Some(points.iter().map(|z| [z.re, z.im]).collect()),
                mode: mode.map(str::to_owned),
            }),
            _ if !points.is_empty() => Some(ProvenanceFile {
                points: Some(points.iter().map(|z| [z.re, z.im]).collect()),
                mode: mode.map(str::to_owned),
                ..ProvenanceFile::default()
            }),
            _ => None,
        };
        Self {
            f: to_rows(&model.f),
            g: to_rows(&model.g),
            h: to_rows(&model.h),
            provenance,
        }
    }

    pub fn to_model(&self) -> Result<ReducedModel<f64>, CliError> {
        ReducedModel::new(
            from_rows(&self.f, "F")?,
            from_rows(&self.g, "G")?,
            from_rows(&self.h, "H")?,
        )
        .map_err(|e| CliError::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KktFile {
    pub r_m: f64,
    pub r_w: f64,
    pub r_x: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualFile {
    pub point: [f64; 2],
    pub order: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ConstraintChecks {
    pub sigma_S_disjoint_A: bool,
    pub sigma_S_disjoint_F: bool,
    pub observable: bool,
}

impl ConstraintChecks {
    pub fn all(&self) -> bool {
        self.sigma_S_disjoint_A && self.sigma_S_disjoint_F && self.observable
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub problem: u8,
    pub method: String,
    pub mode: String,
    /// Gramian (normalized) H2 norm of the error system.
    pub h2_error: f64,
    pub h2_error_squared: f64,
    /// `√(2π)·h2_error`, the scaling without the `1/2π` factor.
    pub h2_error_unnormalized: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: String,
    pub final_gradient_norm: f64,
    pub kkt_residuals: KktFile,
    pub interpolation_points: Vec<[f64; 2]>,
    pub interpolation_residuals: Vec<ResidualFile>,
    pub stable: bool,
    pub spectral_abscissa: f64,
    pub constraint_checks: ConstraintChecks,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exactness_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restart_finals: Option<Vec<Option<f64>>>,
    pub seed: u64,
    pub timing_ms: u64,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn read_system(path: &Path) -> Result<LtiSystem<f64>, CliError> {
    read_json::<SystemFile>(path)?.to_system()
}
