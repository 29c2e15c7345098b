//! Experiment configuration (TOML).
//!
//! Everything except `kind` has a default, so `kind = "heat-report"` alone is
//! a runnable file. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleOptions;
use crate::error::{Error, Result};
use crate::model::{NetworkSpec, Region, Reservoir};
use crate::quad::QuadOptions;
use crate::spectral::{gamma_zero, CutoffShape, SpectralDensity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Dynamics,
    MasterCoefficients,
    HeatReport,
    NogoScan,
    ThirdLaw,
    OracleCompare,
    FdtSelftest,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dynamics => "dynamics",
            Self::MasterCoefficients => "master-coefficients",
            Self::HeatReport => "heat-report",
            Self::NogoScan => "nogo-scan",
            Self::ThirdLaw => "third-law",
            Self::OracleCompare => "oracle-compare",
            Self::FdtSelftest => "fdt-selftest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub nogo: NogoConfig,
    #[serde(default)]
    pub third_law: ThirdLawConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub fdt: FdtConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// The network. Give either the bare `potential` or the `renormalized_potential`
/// (the bare one is then `V_R + 2 gamma(0)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub renormalized_potential: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub regions: Vec<RegionConfig>,
}

impl Default for NetworkConfig {
    /// Two-site chain, one ohmic reservoir per site at T = 1 and T = 0.5.
    fn default() -> Self {
        let region = |id: &str, site: usize, t: f64| RegionConfig {
            id: id.into(),
            sites: vec![site],
            reservoirs: vec![ReservoirConfig {
                temperature: t,
                count: 1,
                density: DensityConfig::default(),
            }],
        };
        Self {
            potential: None,
            renormalized_potential: Some(vec![vec![1.0, -0.2], vec![-0.2, 1.1]]),
            regions: vec![region("hot", 0, 1.0), region("cold", 1, 0.5)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub id: String,
    /// 0-based coordinate indices.
    pub sites: Vec<usize>,
    pub reservoirs: Vec<ReservoirConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirConfig {
    pub temperature: f64,
    /// Identical copies of this reservoir (same temperature and density).
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default)]
    pub density: DensityConfig,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DensityConfig {
    /// `coupling * w^exponent` times the cutoff function on each listed site.
    PowerLaw {
        coupling: f64,
        #[serde(default = "ohmic_exponent")]
        exponent: f64,
        cutoff: f64,
        #[serde(default = "exp_shape")]
        shape: CutoffShape,
        /// Defaults to all sites of the region.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sites: Option<Vec<usize>>,
    },
    /// CSV with a header row; column 0 is w, then the K x K entries row-major.
    Tabulated { path: PathBuf },
}

fn ohmic_exponent() -> f64 {
    1.0
}

fn exp_shape() -> CutoffShape {
    CutoffShape::Exponential
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self::PowerLaw {
            coupling: 0.1,
            exponent: 1.0,
            cutoff: 3.0,
            shape: CutoffShape::Exponential,
            sites: None,
        }
    }
}

impl DensityConfig {
    pub fn build(
        &self,
        dim: usize,
        region_sites: &[usize],
        base: &Path,
    ) -> Result<SpectralDensity> {
        match self {
            Self::PowerLaw {
                coupling,
                exponent,
                cutoff,
                shape,
                sites,
            } => SpectralDensity::power_law(
                dim,
                sites.clone().unwrap_or_else(|| region_sites.to_vec()),
                *coupling,
                *exponent,
                *cutoff,
                *shape,
            ),
            Self::Tabulated { path } => {
                let p = if path.is_absolute() {
                    path.clone()
                } else {
                    base.join(path)
                };
                let d = SpectralDensity::from_csv(&p)?;
                if d.dim() != dim {
                    return Err(Error::config(
                        "density.path",
                        format!(
                            "{} holds {}x{} matrices, network has {dim} coordinates",
                            p.display(),
                            d.dim(),
                            d.dim()
                        ),
                    ));
                }
                Ok(d)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    /// Time step of the Volterra solver.
    pub h: f64,
    pub t_max: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
    /// Number of frequencies at which the heat-transfer matrix is sampled.
    pub omega_points: usize,
    /// Upper end of that grid; defaults to `10 x` the largest cutoff.
    pub omega_max: Option<f64>,
    /// Write every n-th time step to the CSV series.
    pub output_stride: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            h: 0.02,
            t_max: 60.0,
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_panels: 20_000,
            omega_points: 400,
            omega_max: None,
            output_stride: 10,
        }
    }
}

impl Numerics {
    pub fn quad(&self) -> QuadOptions {
        QuadOptions {
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_panels: self.max_panels,
        }
    }

    fn check(&self) -> Result<()> {
        let pos = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(
                    key,
                    format!("must be positive and finite, got {v}"),
                ))
            }
        };
        pos("numerics.h", self.h)?;
        pos("numerics.t_max", self.t_max)?;
        pos("numerics.abs_tol", self.abs_tol)?;
        pos("numerics.rel_tol", self.rel_tol)?;
        if let Some(w) = self.omega_max {
            pos("numerics.omega_max", w)?;
        }
        if self.h > self.t_max {
            return Err(Error::config("numerics.h", "step exceeds numerics.t_max"));
        }
        if self.max_panels == 0 {
            return Err(Error::config("numerics.max_panels", "must be at least 1"));
        }
        if self.omega_points < 2 {
            return Err(Error::config(
                "numerics.omega_points",
                "need at least 2 frequencies",
            ));
        }
        if self.output_stride == 0 {
            return Err(Error::config(
                "numerics.output_stride",
                "must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Initial network state for `dynamics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialState {
    /// Minimum-uncertainty state displaced to `(x, p)`; empty vectors mean the origin.
    Coherent {
        #[serde(default)]
        x: Vec<f64>,
        #[serde(default)]
        p: Vec<f64>,
    },
    /// Thermal state of the uncoupled network `V_R` at `temperature`.
    Thermal { temperature: f64 },
    /// Explicit mean (length 2K, `(x, p)` order) and 2K x 2K covariance.
    Gaussian {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
}

impl Default for InitialState {
    fn default() -> Self {
        Self::Coherent {
            x: vec![],
            p: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub initial: InitialState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NogoConfig {
    pub trials: usize,
    pub ensemble: EnsembleOptions,
}

impl Default for NogoConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            ensemble: EnsembleOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThirdLawConfig {
    /// 2 x 2 renormalized potential of the two-site scan network.
    pub renormalized_potential: Vec<Vec<f64>>,
    pub coupling: f64,
    pub exponents: Vec<f64>,
    /// Sharp cutoff of the power-law densities.
    pub cutoff: f64,
    /// Mean-temperature range; defaults to a decade ending at 1% of the lowest resonance.
    pub tbar_min: Option<f64>,
    pub tbar_max: Option<f64>,
    pub points: usize,
    /// Fixed temperature difference as a fraction of `tbar_min`.
    pub dt_fraction: f64,
}

impl Default for ThirdLawConfig {
    fn default() -> Self {
        Self {
            renormalized_potential: vec![vec![1.0, -0.2], vec![-0.2, 1.1]],
            coupling: 0.05,
            exponents: vec![1.0, 0.5, 3.0],
            cutoff: 5.0,
            tbar_min: None,
            tbar_max: None,
            points: 6,
            dt_fraction: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Oscillators per reservoir; one comparison per entry.
    pub modes: Vec<usize>,
    /// Discretization range; defaults to the cutoff (sharp) or 12x the cutoff scale.
    pub upper: Option<f64>,
    /// Compare on every n-th solver step.
    pub stride: usize,
    /// Also estimate heat currents from the bath energies.
    pub heat_current: bool,
    pub heat_samples: usize,
    pub noise_limit: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            modes: vec![125, 250, 500],
            upper: None,
            stride: 25,
            heat_current: true,
            heat_samples: 200,
            noise_limit: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdtConfig {
    pub grid_points: usize,
    /// The run fails (exit status 1) when a residual reaches this value.
    pub tolerance: f64,
    /// Single-site densities to test; defaults to the ohmic default density.
    pub densities: Vec<DensityConfig>,
}

impl Default for FdtConfig {
    fn default() -> Self {
        Self {
            grid_points: 50,
            tolerance: super::experiments::FDT_TOL,
            densities: vec![DensityConfig::default()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

fn matrix(key: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let k = rows.len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::config(
            key,
            "must be a non-empty square matrix (list of equal-length rows)",
        ));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    /// Parse TOML text, applying `KEY=VALUE` overrides (dotted keys) first.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e
                .span()
                .map(|sp| text[..sp.start].matches('\n').count() + 1)
                .map_or_else(|| "config".to_string(), |l| format!("line {l}"));
            Error::config(line, e.message().to_string())
        })?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        if !value.contains_key("kind") {
            return Err(Error::config("kind", "missing experiment kind"));
        }
        let cfg: Self =
            serde_path_to_error::deserialize(toml::Value::Table(value)).map_err(|e| {
                let path = e.path().to_string();
                let inner = e.into_inner();
                let leaf = key_of(inner.message());
                let key = match (path.as_str(), leaf) {
                    (".", Some(l)) => l,
                    (p, Some(l)) if !p.ends_with(&l) => format!("{p}.{l}"),
                    (p, _) => p.to_string(),
                };
                Error::config(key, inner.message().to_string())
            })?;
        cfg.numerics.check()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, overrides)
    }

    /// Assemble the network; relative density paths resolve against `base`.
    pub fn network(&self, base: &Path) -> Result<NetworkSpec> {
        let net = &self.network;
        let (rows, renormalized) = match (&net.potential, &net.renormalized_potential) {
            (Some(v), None) => (v, false),
            (None, Some(v)) => (v, true),
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "network.potential",
                    "give either potential or renormalized_potential, not both",
                ))
            }
            (None, None) => {
                return Err(Error::config("network.potential", "no potential given"));
            }
        };
        let key = if renormalized {
            "network.renormalized_potential"
        } else {
            "network.potential"
        };
        let v = matrix(key, rows)?;
        let k = v.nrows();
        let mut regions = Vec::with_capacity(net.regions.len());
        for (i, r) in net.regions.iter().enumerate() {
            if r.reservoirs.is_empty() {
                return Err(Error::config(
                    format!("network.regions[{i}].reservoirs"),
                    "region without reservoirs",
                ));
            }
            let mut res = Vec::new();
            for (j, b) in r.reservoirs.iter().enumerate() {
                if b.count == 0 {
                    return Err(Error::config(
                        format!("network.regions[{i}].reservoirs[{j}].count"),
                        "must be at least 1",
                    ));
                }
                if let Some(&s) = r.sites.iter().find(|&&s| s >= k) {
                    return Err(Error::config(
                        format!("network.regions[{i}].sites"),
                        format!("site {s} outside a network of {k} coordinates"),
                    ));
                }
                let d = b.density.build(k, &r.sites, base)?;
                for _ in 0..b.count {
                    res.push(Reservoir::new(b.temperature, d.clone())?);
                }
            }
            regions.push(Region::new(r.id.clone(), r.sites.clone(), res));
        }
        if !renormalized {
            return NetworkSpec::new(v, regions);
        }
        let probe = NetworkSpec::new(v.clone(), regions.clone())?;
        let dens = probe.densities();
        let bare = if dens.is_empty() {
            v
        } else {
            &v + gamma_zero(&dens, &self.numerics.quad())? * 2.0
        };
        NetworkSpec::new(bare, regions)
    }

    pub fn third_law_potential(&self) -> Result<DMatrix<f64>> {
        let m = matrix(
            "third_law.renormalized_potential",
            &self.third_law.renormalized_potential,
        )?;
        if m.nrows() != 2 {
            return Err(Error::config(
                "third_law.renormalized_potential",
                "must be 2 x 2",
            ));
        }
        Ok(m)
    }
}

/// Field named by an unknown- or missing-field message.
fn key_of(msg: &str) -> Option<String> {
    ["unknown field `", "missing field `"]
        .iter()
        .find_map(|pre| {
            let rest = msg.strip_prefix(pre)?;
            Some(rest[..rest.find('`')?].to_string())
        })
}

/// `a.b.c=value`; the value is parsed as a TOML literal, else taken as a string.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like KEY=VALUE"))?;
    let key = key.trim();
    let value: toml::Value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
