//! Spectral densities and the kernels derived from them.
//!
//! Conventions: `hbar = k_B = 1`, unit masses. A reservoir's spectral density
//! `I(w)` is a real symmetric positive-semidefinite `K x K` matrix vanishing
//! for `w <= 0`. From it follow
//!
//! * the dissipation kernel `gamma(t) = int_0^inf I(w) cos(w t) / w dw`,
//! * its Laplace transform `gamma_hat(s) = int_0^inf I(w)/w * s / (s^2 + w^2) dw`,
//! * the noise spectrum `nu_hat(w) = sum_a I_a(w) coth(w / 2 T_a)` and the
//!   noise kernel `nu(t) = int_0^inf nu_hat(w) cos(w t) dw`.
//!
//! On the imaginary axis `s = i w0` the transform is split into a
//! principal-value part (purely imaginary) and a half-residue
//! `Re gamma_hat(i w0) = pi I(w0) / (2 w0)`, which is the fluctuation–dissipation
//! identity `Re(2 w gamma_hat(i w)) = pi I(w)`.
//!
//! Every density is handled as a sum of scalar profiles times fixed
//! structure matrices (a power law is one profile on a diagonal site mask; a
//! tabulated density contributes one piecewise-linear profile per independent
//! matrix entry), so all kernels reduce to scalar quadratures.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::MatSeries;
use crate::quad::{integrate_from_zero, integrate_vec_from_zero, panel_breaks, QuadOptions};
use crate::special::{coth_factor, omega_coth};

/// Exponential cutoffs are integrated up to this many cutoff frequencies
/// (`exp(-40) ~ 4e-18`).
pub const EXP_CUTOFF_SPAN: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutoffShape {
    /// `theta(cutoff - w)`
    Sharp,
    /// `exp(-w / cutoff)`
    Exponential,
}

/// Scalar frequency profile of one density term.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    PowerLaw {
        coupling: f64,
        exponent: f64,
        cutoff: f64,
        shape: CutoffShape,
    },
    /// Linear interpolation between nodes, zero outside them.
    Piecewise { omegas: Vec<f64>, values: Vec<f64> },
}

impl Profile {
    pub fn value(&self, w: f64) -> f64 {
        if w <= 0.0 {
            return 0.0;
        }
        match self {
            Profile::PowerLaw {
                coupling,
                exponent,
                cutoff,
                shape,
            } => match shape {
                CutoffShape::Sharp if w >= *cutoff => 0.0,
                CutoffShape::Sharp => coupling * w.powf(*exponent),
                CutoffShape::Exponential => coupling * w.powf(*exponent) * (-w / cutoff).exp(),
            },
            Profile::Piecewise { omegas, values } => interp(omegas, values, w),
        }
    }

    /// `value(w) / w`.
    pub fn over_omega(&self, w: f64) -> f64 {
        if w <= 0.0 {
            return 0.0;
        }
        match self {
            Profile::PowerLaw {
                coupling,
                exponent,
                cutoff,
                shape,
            } => match shape {
                CutoffShape::Sharp if w >= *cutoff => 0.0,
                CutoffShape::Sharp => coupling * w.powf(exponent - 1.0),
                CutoffShape::Exponential => coupling * w.powf(exponent - 1.0) * (-w / cutoff).exp(),
            },
            Profile::Piecewise { .. } => self.value(w) / w,
        }
    }

    /// `over_omega(w) - over_omega(w0)` without cancellation when `w` is close
    /// to `w0`. Both arguments must be positive.
    fn over_omega_diff(&self, w: f64, w0: f64) -> f64 {
        match self {
            Profile::PowerLaw {
                exponent,
                cutoff,
                shape,
                ..
            } => {
                let h0 = self.over_omega(w0);
                if *shape == CutoffShape::Sharp && w >= *cutoff {
                    return -h0;
                }
                if h0 == 0.0 {
                    return self.over_omega(w);
                }
                // h(w) / h(w0) = exp((p - 1) ln(w / w0) - (w - w0) / cutoff)
                let d = w - w0;
                let ln_w = if d.abs() < 0.5 * w0 {
                    (d / w0).ln_1p()
                } else {
                    (w / w0).ln()
                };
                let mut log_ratio = (exponent - 1.0) * ln_w;
                if *shape == CutoffShape::Exponential {
                    log_ratio -= d / cutoff;
                }
                h0 * log_ratio.exp_m1()
            }
            Profile::Piecewise { .. } => self.over_omega(w) - self.over_omega(w0),
        }
    }

    /// Upper end of the integration domain.
    pub fn upper(&self) -> f64 {
        match self {
            Profile::PowerLaw { cutoff, shape, .. } => match shape {
                CutoffShape::Sharp => *cutoff,
                CutoffShape::Exponential => EXP_CUTOFF_SPAN * cutoff,
            },
            Profile::Piecewise { omegas, .. } => *omegas.last().unwrap_or(&0.0),
        }
    }

    /// Exponent `e` with `value(w) ~ w^e` as `w -> 0`.
    pub fn origin_exponent(&self) -> f64 {
        match self {
            Profile::PowerLaw { exponent, .. } => *exponent,
            Profile::Piecewise { omegas, values } => {
                if omegas.first().map_or(true, |&w| w > 0.0) {
                    // identically zero near the origin
                    4.0
                } else if values[0] != 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    fn interior_breaks(&self) -> Vec<f64> {
        match self {
            Profile::PowerLaw { cutoff, shape, .. } => match shape {
                CutoffShape::Sharp => vec![],
                CutoffShape::Exponential => vec![*cutoff, 5.0 * cutoff],
            },
            Profile::Piecewise { omegas, .. } => omegas.clone(),
        }
    }

    /// `int_0^W value(w) w^shift g(w) dw` for an oscillatory weight of angular
    /// frequency `osc` (0 for none).
    fn integrate<G: Fn(f64) -> f64>(
        &self,
        shift: f64,
        g: G,
        osc: f64,
        extra: &[f64],
        opts: &QuadOptions,
    ) -> Result<f64> {
        let upper = self.upper();
        if upper <= 0.0 {
            return Ok(0.0);
        }
        let e = self.origin_exponent() + shift;
        if e <= -1.0 {
            return Err(Error::DivergentKernel(format!(
                "integrand ~ w^{e} at the origin (exponent p <= 0 is not integrable against 1/w)"
            )));
        }
        let mut extra_pts = self.interior_breaks();
        extra_pts.extend_from_slice(extra);
        let panel = if osc > 0.0 {
            4.0 * PI / osc
        } else {
            f64::INFINITY
        };
        let breaks = panel_breaks(0.0, upper, panel, &extra_pts);
        let f = |w: f64| {
            let base = if shift == -1.0 {
                self.over_omega(w)
            } else {
                self.value(w) * w.powf(shift)
            };
            if base == 0.0 {
                0.0
            } else {
                base * g(w)
            }
        };
        integrate_from_zero(f, &breaks, e, opts).map(|(v, _)| v)
    }

    /// Principal value `w0 * PV int_0^W (value(w)/w) / (w^2 - w0^2) dw`.
    fn pv_imag(&self, w0: f64, opts: &QuadOptions) -> Result<f64> {
        let upper = self.upper();
        if upper <= 0.0 || w0 <= 0.0 {
            return Ok(0.0);
        }
        let e = self.origin_exponent() - 1.0;
        if e <= -1.0 {
            return Err(Error::DivergentKernel(
                "I(w)/w not integrable at the origin".into(),
            ));
        }
        let w02 = w0 * w0;
        let breaks_all = self.interior_breaks();
        if w0 >= upper {
            let h_edge = self.over_omega(upper * (1.0 - 1e-15));
            if w0 == upper && h_edge != 0.0 {
                return Err(Error::DivergentKernel(format!(
                    "principal value diverges at the sharp cutoff w = {w0}"
                )));
            }
            let breaks = panel_breaks(0.0, upper, f64::INFINITY, &breaks_all);
            let (v, _) =
                integrate_from_zero(|w| self.over_omega(w) / (w * w - w02), &breaks, e, opts)?;
            return Ok(w0 * v);
        }
        // subtract h(w0) everywhere; the subtracted part integrates in closed form
        let h0 = self.over_omega(w0);
        let sub = |w: f64| {
            let d = (w - w0) * (w + w0);
            if d == 0.0 {
                0.0
            } else {
                self.over_omega_diff(w, w0) / d
            }
        };
        let a = 0.5 * w0;
        let breaks = panel_breaks(0.0, a, f64::INFINITY, &breaks_all);
        let (low, _) = integrate_from_zero(sub, &breaks, e, opts)?;
        let mut pts = vec![w0, 2.0 * w0];
        // the integrand falls like 1/w above w0, so split per decade
        pts.extend(
            std::iter::successors(Some(10.0 * w0), |w| Some(10.0 * w)).take_while(|&w| w < upper),
        );
        pts.extend(breaks_all.iter().copied());
        let breaks = panel_breaks(a, upper, f64::INFINITY, &pts);
        let (high, _) = crate::quad::integrate(sub, &breaks, opts)?;
        // h0 * PV int_0^upper dw / (w^2 - w0^2)
        let closed = h0 / (2.0 * w0) * (-2.0 * w0 / (upper + w0)).ln_1p();
        Ok(w0 * (low + high + closed))
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if xs.is_empty() || x < xs[0] || x > xs[xs.len() - 1] {
        return 0.0;
    }
    let i = match xs.binary_search_by(|v| v.total_cmp(&x)) {
        Ok(i) => return ys[i],
        Err(i) => i,
    };
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// A scalar profile attached to a constant structure matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTerm {
    pub profile: Profile,
    pub structure: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityModel {
    /// `I_jj(w) = coupling * w^exponent * cutoff(w)` on each listed site.
    PowerLaw {
        coupling: f64,
        exponent: f64,
        cutoff: f64,
        shape: CutoffShape,
        sites: Vec<usize>,
    },
    Tabulated {
        omegas: Vec<f64>,
        matrices: Vec<DMatrix<f64>>,
    },
    Zero,
}

/// Matrix-valued spectral density of one reservoir on a `dim`-coordinate network.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    dim: usize,
    model: DensityModel,
}

impl SpectralDensity {
    pub fn power_law(
        dim: usize,
        sites: Vec<usize>,
        coupling: f64,
        exponent: f64,
        cutoff: f64,
        shape: CutoffShape,
    ) -> Result<Self> {
        if !(coupling > 0.0) || !coupling.is_finite() {
            return Err(Error::Structural(format!(
                "power-law coupling must be positive, got {coupling}"
            )));
        }
        if !(cutoff > 0.0) || !cutoff.is_finite() {
            return Err(Error::Structural(format!(
                "cutoff must be positive, got {cutoff}"
            )));
        }
        if !exponent.is_finite() {
            return Err(Error::Structural("exponent must be finite".into()));
        }
        if let Some(&s) = sites.iter().find(|&&s| s >= dim) {
            return Err(Error::Structural(format!(
                "density site {s} outside network of {dim} coordinates"
            )));
        }
        let mut sites = sites;
        sites.sort_unstable();
        sites.dedup();
        Ok(Self {
            dim,
            model: DensityModel::PowerLaw {
                coupling,
                exponent,
                cutoff,
                shape,
                sites,
            },
        })
    }

    /// Ohmic (`exponent = 1`) shorthand.
    pub fn ohmic(
        dim: usize,
        sites: Vec<usize>,
        coupling: f64,
        cutoff: f64,
        shape: CutoffShape,
    ) -> Result<Self> {
        Self::power_law(dim, sites, coupling, 1.0, cutoff, shape)
    }

    pub fn tabulated(omegas: Vec<f64>, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        if omegas.len() < 2 || omegas.len() != matrices.len() {
            return Err(Error::Structural(
                "tabulated density needs >= 2 samples, one matrix per frequency".into(),
            ));
        }
        if omegas[0] < 0.0 || omegas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Structural(
                "tabulated frequencies must be non-negative and strictly increasing".into(),
            ));
        }
        let dim = matrices[0].nrows();
        for (w, m) in omegas.iter().zip(&matrices) {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::Structural(
                    "tabulated matrices must all be square of equal size".into(),
                ));
            }
            if crate::linalg::asymmetry(m) > 1e-12 {
                return Err(Error::Structural(format!(
                    "tabulated I(w) not symmetric at w = {w}"
                )));
            }
            let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
            if min < -1e-12 * crate::linalg::max_abs(m).max(1e-300) {
                return Err(Error::Structural(format!(
                    "tabulated I(w) not positive semidefinite at w = {w}"
                )));
            }
        }
        Ok(Self {
            dim,
            model: DensityModel::Tabulated { omegas, matrices },
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            model: DensityModel::Zero,
        }
    }

    /// Read a tabulated density from CSV: a header row, then one row per
    /// frequency with columns `omega, I_00, I_01, ..., I_(K-1)(K-1)` (row-major).
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)?;
        let mut omegas = Vec::new();
        let mut mats = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| {
                    Error::config(path.display().to_string(), format!("bad number: {e}"))
                })?;
            let n = vals.len().saturating_sub(1);
            let k = (n as f64).sqrt().round() as usize;
            if k == 0 || k * k != n {
                return Err(Error::config(
                    path.display().to_string(),
                    format!("row has {} entries, expected 1 + K^2", vals.len()),
                ));
            }
            omegas.push(vals[0]);
            mats.push(DMatrix::from_row_slice(k, k, &vals[1..]));
        }
        Self::tabulated(omegas, mats)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model(&self) -> &DensityModel {
        &self.model
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.model, DensityModel::Zero)
    }

    /// Sites carrying a nonzero diagonal somewhere.
    pub fn support_sites(&self) -> Vec<usize> {
        match &self.model {
            DensityModel::PowerLaw { sites, .. } => sites.clone(),
            DensityModel::Tabulated { matrices, .. } => (0..self.dim)
                .filter(|&i| matrices.iter().any(|m| m[(i, i)] != 0.0))
                .collect(),
            DensityModel::Zero => vec![],
        }
    }

    /// Largest frequency carrying weight (integration domain end).
    pub fn upper(&self) -> f64 {
        self.terms()
            .iter()
            .map(|t| t.profile.upper())
            .fold(0.0, f64::max)
    }

    /// Cutoff frequency scale (for step-size advice).
    pub fn cutoff_scale(&self) -> f64 {
        match &self.model {
            DensityModel::PowerLaw { cutoff, .. } => *cutoff,
            DensityModel::Tabulated { omegas, .. } => *omegas.last().unwrap(),
            DensityModel::Zero => 0.0,
        }
    }

    pub fn terms(&self) -> Vec<DensityTerm> {
        match &self.model {
            DensityModel::PowerLaw {
                coupling,
                exponent,
                cutoff,
                shape,
                sites,
            } => {
                if sites.is_empty() {
                    return vec![];
                }
                let mut s = DMatrix::zeros(self.dim, self.dim);
                for &i in sites {
                    s[(i, i)] = 1.0;
                }
                vec![DensityTerm {
                    profile: Profile::PowerLaw {
                        coupling: *coupling,
                        exponent: *exponent,
                        cutoff: *cutoff,
                        shape: *shape,
                    },
                    structure: s,
                }]
            }
            DensityModel::Tabulated { omegas, matrices } => {
                let mut out = Vec::new();
                for i in 0..self.dim {
                    for j in i..self.dim {
                        let values: Vec<f64> = matrices.iter().map(|m| m[(i, j)]).collect();
                        if values.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        let mut s = DMatrix::zeros(self.dim, self.dim);
                        s[(i, j)] = 1.0;
                        s[(j, i)] = 1.0;
                        out.push(DensityTerm {
                            profile: Profile::Piecewise {
                                omegas: omegas.clone(),
                                values,
                            },
                            structure: s,
                        });
                    }
                }
                out
            }
            DensityModel::Zero => vec![],
        }
    }

    /// `I(w)` as a `K x K` matrix.
    pub fn matrix(&self, w: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for t in self.terms() {
            let v = t.profile.value(w);
            if v != 0.0 {
                m += &t.structure * v;
            }
        }
        m
    }

    /// Check symmetry and positive semidefiniteness on a sample grid; returns
    /// the most negative eigenvalue found.
    pub fn check_psd(&self, grid: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &w in grid {
            let m = self.matrix(w);
            if crate::linalg::asymmetry(&m) > 1e-12 {
                return Err(Error::Structural(format!("I(w) not symmetric at w = {w}")));
            }
            let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
            worst = worst.min(min);
            if min < -1e-12 * crate::linalg::max_abs(&m).max(1e-300) {
                return Err(Error::Structural(format!(
                    "I(w) not positive semidefinite at w = {w}"
                )));
            }
        }
        Ok(worst)
    }
}

/// A reservoir as seen by the kernel routines: a density at a temperature.
#[derive(Debug, Clone, Copy)]
pub struct ThermalDensity<'a> {
    pub density: &'a SpectralDensity,
    pub temperature: f64,
}

fn dim_of(densities: &[&SpectralDensity]) -> Result<usize> {
    let k = densities.first().map(|d| d.dim()).unwrap_or(0);
    if densities.iter().any(|d| d.dim() != k) {
        return Err(Error::Structural(
            "densities defined on networks of different size".into(),
        ));
    }
    Ok(k)
}

/// `gamma(0) = int_0^inf I(w)/w dw` summed over densities.
pub fn gamma_zero(densities: &[&SpectralDensity], opts: &QuadOptions) -> Result<DMatrix<f64>> {
    let k = dim_of(densities)?;
    let mut out = DMatrix::zeros(k, k);
    for d in densities {
        for t in d.terms() {
            let v = t.profile.integrate(-1.0, |_| 1.0, 0.0, &[], opts)?;
            out += &t.structure * v;
        }
    }
    Ok(out)
}

/// Dissipation kernel `gamma(tau)` sampled on `taus`.
pub fn gamma_kernel(
    densities: &[&SpectralDensity],
    taus: &[f64],
    opts: &QuadOptions,
) -> Result<MatSeries> {
    let k = dim_of(densities)?;
    let terms: Vec<DensityTerm> = densities.iter().flat_map(|d| d.terms()).collect();
    sample_kernel(k, &terms, taus, |term, tau| {
        term.profile
            .integrate(-1.0, |w| (w * tau).cos(), tau.abs(), &[], opts)
    })
}

/// Noise kernel `nu(tau) = sum_a int_0^inf I_a(w) coth(w/2T_a) cos(w tau) dw`.
pub fn noise_kernel(
    baths: &[ThermalDensity<'_>],
    taus: &[f64],
    opts: &QuadOptions,
) -> Result<MatSeries> {
    let dens: Vec<&SpectralDensity> = baths.iter().map(|b| b.density).collect();
    let k = dim_of(&dens)?;
    let terms: Vec<(DensityTerm, f64)> = baths
        .iter()
        .flat_map(|b| {
            b.density
                .terms()
                .into_iter()
                .map(move |t| (t, b.temperature))
        })
        .collect();
    if baths
        .iter()
        .any(|b| b.temperature < 0.0 || !b.temperature.is_finite())
    {
        return Err(Error::Structural(
            "reservoir temperatures must be finite and non-negative".into(),
        ));
    }
    let mut out = MatSeries::zeros(k, taus.len());
    for (term, temp) in &terms {
        let temp = *temp;
        let vals: Vec<f64> = taus
            .par_iter()
            .map(|&tau| {
                // I(w) coth(w/2T) = [I(w)/w] * [w coth(w/2T)], smooth at the origin
                term.profile.integrate(
                    -1.0,
                    |w| omega_coth(w, temp) * (w * tau).cos(),
                    tau.abs(),
                    &[temp],
                    opts,
                )
            })
            .collect::<Result<_>>()?;
        accumulate(&mut out, &term.structure, &vals);
    }
    Ok(out)
}

fn sample_kernel<F>(k: usize, terms: &[DensityTerm], taus: &[f64], f: F) -> Result<MatSeries>
where
    F: Fn(&DensityTerm, f64) -> Result<f64> + Sync,
{
    let mut out = MatSeries::zeros(k, taus.len());
    for term in terms {
        let vals: Vec<f64> = taus
            .par_iter()
            .map(|&tau| f(term, tau))
            .collect::<Result<_>>()?;
        accumulate(&mut out, &term.structure, &vals);
    }
    Ok(out)
}

fn accumulate(out: &mut MatSeries, structure: &DMatrix<f64>, vals: &[f64]) {
    let s = structure.as_slice();
    for (n, v) in vals.iter().enumerate() {
        if *v == 0.0 {
            continue;
        }
        for (o, si) in out.slice_mut(n).iter_mut().zip(s) {
            *o += si * v;
        }
    }
}

/// `nu_hat(w) = sum_a I_a(w) coth(w / 2 T_a)`.
pub fn nu_hat(baths: &[ThermalDensity<'_>], w: f64) -> DMatrix<f64> {
    let k = baths.first().map(|b| b.density.dim()).unwrap_or(0);
    let mut m = DMatrix::zeros(k, k);
    for b in baths {
        let c = coth_factor(w, b.temperature);
        m += b.density.matrix(w) * c;
    }
    m
}

/// Real and imaginary parts of `gamma_hat(i w)` for `w >= 0`.
///
/// The real part is the half-residue `pi I(w) / (2 w)`; the imaginary part is
/// the principal value `w PV int I(w')/w' / (w'^2 - w^2) dw'`, computed by
/// singularity subtraction. At `w = 0` the real part is the `s -> 0+` limit.
pub fn gamma_laplace_imag_axis(
    densities: &[&SpectralDensity],
    w: f64,
    opts: &QuadOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = dim_of(densities)?;
    let mut re = DMatrix::zeros(k, k);
    let mut im = DMatrix::zeros(k, k);
    for d in densities {
        for t in d.terms() {
            let r = if w > 0.0 {
                0.5 * PI * t.profile.over_omega(w)
            } else {
                0.5 * PI * t.profile.over_omega(1e-300_f64.max(f64::MIN_POSITIVE))
            };
            if r != 0.0 {
                re += &t.structure * r;
            }
            let j = t.profile.pv_imag(w, opts)?;
            if j != 0.0 {
                im += &t.structure * j;
            }
        }
    }
    Ok((re, im))
}

/// Laplace transform `gamma_hat(s)` for `Re s >= 0`.
pub fn gamma_laplace(
    densities: &[&SpectralDensity],
    s: Complex64,
    opts: &QuadOptions,
) -> Result<DMatrix<Complex64>> {
    if s.re < 0.0 {
        return Err(Error::Structural(format!(
            "gamma_hat(s) requires Re s >= 0, got {s}"
        )));
    }
    if s.re == 0.0 {
        let w = s.im.abs();
        let (re, im) = gamma_laplace_imag_axis(densities, w, opts)?;
        let sign = if s.im < 0.0 { -1.0 } else { 1.0 };
        return Ok(re.zip_map(&im, |a, b| Complex64::new(a, sign * b)));
    }
    let k = dim_of(densities)?;
    let mut out = DMatrix::from_element(k, k, Complex64::new(0.0, 0.0));
    for d in densities {
        for t in d.terms() {
            let upper = t.profile.upper();
            let e = t.profile.origin_exponent() - 1.0;
            let mut pts = vec![s.im.abs()];
            pts.extend(t.profile.interior_breaks());
            for m in [0.5, 2.0] {
                pts.push(s.im.abs() + m * s.re);
                pts.push((s.im.abs() - m * s.re).max(0.0));
            }
            let breaks = panel_breaks(0.0, upper, f64::INFINITY, &pts);
            let r = integrate_vec_from_zero(
                2,
                |w, o| {
                    let h = t.profile.over_omega(w);
                    let v = s / (s * s + w * w) * h;
                    o[0] = v.re;
                    o[1] = v.im;
                },
                &breaks,
                e,
                opts,
            )?;
            let v = Complex64::new(r.value[0], r.value[1]);
            out += t.structure.map(|x| Complex64::new(x, 0.0) * v);
        }
    }
    Ok(out)
}

/// Fluctuation–dissipation self-test: `max |Re(2 w gamma_hat(i w)) - pi I(w)|`
/// over the grid and over matrix entries.
pub fn fdt_residual(density: &SpectralDensity, omegas: &[f64], opts: &QuadOptions) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &w in omegas {
        let (re, _) = gamma_laplace_imag_axis(&[density], w, opts)?;
        let lhs = re * (2.0 * w);
        let rhs = density.matrix(w) * PI;
        worst = worst.max(crate::linalg::max_abs(&(lhs - rhs)));
    }
    Ok(worst)
}
