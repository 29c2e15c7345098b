//! Network description: coupling matrix, regions and their reservoirs.
//!
//! Coordinates are indexed from 0. Sites that belong to no region are
//! interior sites: they couple to the rest of the network through `V` only.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, sym_eigenvalues};
use crate::quad::QuadOptions;
use crate::spectral::{gamma_zero, SpectralDensity, ThermalDensity};

/// A thermal reservoir. `temperature = 0` is allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    pub temperature: f64,
    pub density: SpectralDensity,
}

impl Reservoir {
    pub fn new(temperature: f64, density: SpectralDensity) -> Result<Self> {
        if !(temperature >= 0.0) || !temperature.is_finite() {
            return Err(Error::Structural(format!(
                "reservoir temperature must be finite and >= 0, got {temperature}"
            )));
        }
        Ok(Self {
            temperature,
            density,
        })
    }
}

/// A set of sites coupled to one or more reservoirs with identical densities.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: String,
    pub sites: Vec<usize>,
    pub reservoirs: Vec<Reservoir>,
}

impl Region {
    pub fn new(id: impl Into<String>, sites: Vec<usize>, reservoirs: Vec<Reservoir>) -> Self {
        let mut sites = sites;
        sites.sort_unstable();
        Self {
            id: id.into(),
            sites,
            reservoirs,
        }
    }

    /// Number of attached reservoirs `N_alpha`.
    pub fn multiplicity(&self) -> usize {
        self.reservoirs.len()
    }

    /// Mean reservoir temperature (informational for multi-bath regions).
    pub fn mean_temperature(&self) -> f64 {
        self.reservoirs.iter().map(|r| r.temperature).sum::<f64>() / self.reservoirs.len() as f64
    }

    /// Temperature if all reservoirs share one, else `None`.
    pub fn common_temperature(&self) -> Option<f64> {
        let t = self.reservoirs.first()?.temperature;
        self.reservoirs
            .iter()
            .all(|r| r.temperature == t)
            .then_some(t)
    }

    /// Single-reservoir density (all attached densities are identical).
    pub fn density(&self) -> &SpectralDensity {
        &self.reservoirs[0].density
    }
}

/// Diagonal 0/1 selector of a region's sites.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    v: DMatrix<f64>,
    regions: Vec<Region>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Non-fatal warnings (e.g. an indefinite renormalized potential).
    pub advisories: Vec<String>,
    pub vr_eigenvalues: Vec<f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn stable(&self) -> bool {
        self.vr_eigenvalues.first().map_or(true, |&e| e > 0.0)
    }
}

impl NetworkSpec {
    /// Build and structurally check a network.
    pub fn new(v: DMatrix<f64>, regions: Vec<Region>) -> Result<Self> {
        let spec = Self { v, regions };
        spec.structural_checks()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn potential(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, id: &str) -> Result<&Region> {
        self.regions
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::UnknownRegion(id.to_string()))
    }

    pub fn region_index(&self, id: &str) -> Result<usize> {
        self.regions
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| Error::UnknownRegion(id.to_string()))
    }

    /// Same network with every reservoir temperature replaced, region by region.
    pub fn with_temperatures(&self, temps: &[f64]) -> Result<Self> {
        if temps.len() != self.regions.len() {
            return Err(Error::Structural(format!(
                "{} temperatures given for {} regions",
                temps.len(),
                self.regions.len()
            )));
        }
        let mut out = self.clone();
        for (r, &t) in out.regions.iter_mut().zip(temps) {
            for res in &mut r.reservoirs {
                *res = Reservoir::new(t, res.density.clone())?;
            }
        }
        Ok(out)
    }

    /// Every attached density, one entry per reservoir.
    pub fn densities(&self) -> Vec<&SpectralDensity> {
        self.regions
            .iter()
            .flat_map(|r| r.reservoirs.iter().map(|b| &b.density))
            .collect()
    }

    pub fn thermal_densities(&self) -> Vec<ThermalDensity<'_>> {
        self.regions
            .iter()
            .flat_map(|r| {
                r.reservoirs.iter().map(|b| ThermalDensity {
                    density: &b.density,
                    temperature: b.temperature,
                })
            })
            .collect()
    }

    /// Total `I(w) = sum_alpha I^(alpha)(w)` over all reservoirs.
    pub fn total_density_matrix(&self, w: f64) -> DMatrix<f64> {
        let k = self.dim();
        self.densities()
            .iter()
            .fold(DMatrix::zeros(k, k), |acc, d| acc + d.matrix(w))
    }

    /// Largest frequency at which any density carries weight.
    pub fn density_upper(&self) -> f64 {
        self.densities()
            .iter()
            .map(|d| d.upper())
            .fold(0.0, f64::max)
    }

    /// Largest cutoff scale among the reservoirs.
    pub fn cutoff_scale(&self) -> f64 {
        self.densities()
            .iter()
            .map(|d| d.cutoff_scale())
            .fold(0.0, f64::max)
    }

    /// `V_R = V - 2 gamma(0)`.
    pub fn renormalized_potential(&self, opts: &QuadOptions) -> Result<DMatrix<f64>> {
        let dens = self.densities();
        if dens.is_empty() {
            return Ok(self.v.clone());
        }
        Ok(&self.v - gamma_zero(&dens, opts)? * 2.0)
    }

    pub fn projector(&self, id: &str) -> Result<Projector> {
        let r = self.region(id)?;
        Ok(projector_for(self.dim(), &r.sites))
    }

    fn structural_checks(&self) -> Result<()> {
        let k = self.v.nrows();
        if k == 0 || self.v.ncols() != k {
            return Err(Error::Structural(
                "V must be a non-empty square matrix".into(),
            ));
        }
        if self.v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Structural("V has non-finite entries".into()));
        }
        if asymmetry(&self.v) > 1e-12 {
            return Err(Error::Structural("V is not symmetric".into()));
        }
        let mut owner: Vec<Option<usize>> = vec![None; k];
        for (ri, r) in self.regions.iter().enumerate() {
            if self.regions[..ri].iter().any(|o| o.id == r.id) {
                return Err(Error::Structural(format!("duplicate region id `{}`", r.id)));
            }
            if r.sites.is_empty() {
                return Err(Error::Structural(format!("region `{}` has no sites", r.id)));
            }
            if r.reservoirs.is_empty() {
                return Err(Error::Structural(format!(
                    "region `{}` has no reservoirs",
                    r.id
                )));
            }
            for &s in &r.sites {
                if s >= k {
                    return Err(Error::Structural(format!(
                        "region `{}` site {s} outside network of {k} coordinates",
                        r.id
                    )));
                }
                if let Some(o) = owner[s] {
                    return Err(Error::Structural(format!(
                        "regions `{}` and `{}` overlap at site {s}",
                        self.regions[o].id, r.id
                    )));
                }
                owner[s] = Some(ri);
            }
            let first = &r.reservoirs[0].density;
            for b in &r.reservoirs {
                if b.density.dim() != k {
                    return Err(Error::Structural(format!(
                        "region `{}`: density dimension {} differs from network size {k}",
                        r.id,
                        b.density.dim()
                    )));
                }
                if &b.density != first {
                    return Err(Error::Structural(format!(
                        "region `{}`: reservoirs of one region must share the same spectral density",
                        r.id
                    )));
                }
            }
            for s in first.support_sites() {
                if !r.sites.contains(&s) {
                    return Err(Error::Structural(format!(
                        "region `{}`: density acts on site {s} outside the region",
                        r.id
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn projector_for(k: usize, sites: &[usize]) -> Projector {
    let mut m = DMatrix::zeros(k, k);
    for &s in sites {
        m[(s, s)] = 1.0;
    }
    Projector { matrix: m }
}

/// Check a network and report on the renormalized potential.
pub fn validate(spec: &NetworkSpec, opts: &QuadOptions) -> Result<ValidationReport> {
    spec.structural_checks()?;
    let mut checks = vec![
        Check {
            name: "potential_symmetric",
            passed: true,
            detail: format!("asymmetry {:.3e}", asymmetry(spec.potential())),
        },
        Check {
            name: "regions_disjoint",
            passed: true,
            detail: format!("{} regions", spec.regions().len()),
        },
    ];
    let mut grid_ok = true;
    let mut detail = String::from("I(w) symmetric PSD on sample grid");
    for d in spec.densities() {
        let w_max = d.upper().max(1e-12);
        let grid: Vec<f64> = (1..=64).map(|i| w_max * i as f64 / 65.0).collect();
        if let Err(e) = d.check_psd(&grid) {
            grid_ok = false;
            detail = e.to_string();
        }
    }
    checks.push(Check {
        name: "densities_psd",
        passed: grid_ok,
        detail,
    });
    let vr = spec.renormalized_potential(opts)?;
    let ev = sym_eigenvalues(&vr);
    let mut advisories = Vec::new();
    if ev[0] <= 0.0 {
        advisories.push(format!(
            "renormalized potential V - 2 gamma(0) is not positive definite (smallest eigenvalue {:.6e}); \
             the network is dynamically unstable",
            ev[0]
        ));
    }
    checks.push(Check {
        name: "renormalized_potential_positive",
        passed: ev[0] > 0.0,
        detail: format!("smallest eigenvalue {:.6e}", ev[0]),
    });
    Ok(ValidationReport {
        checks,
        advisories,
        vr_eigenvalues: ev,
    })
}
