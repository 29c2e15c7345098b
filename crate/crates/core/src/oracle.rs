//! Brute-force reference: every reservoir is replaced by a finite set of
//! oscillators and the closed system + bath dynamics is solved exactly.
//!
//! Bath frequencies sit at the midpoints `w_k = (k - 1/2) dw` of a uniform grid
//! on `(0, W]`. At each `w_k` the matrix `I(w_k)` is diagonalized and every
//! positive eigenvalue `l` with eigenvector `u` becomes one mode coupled
//! through `sqrt(2 w_k l dw) u`, so that
//! `sum_k c c^T delta(w - w_k) / (2 w_k)` reproduces `I(w)`. The Hamiltonian is
//! `p^2/2 + x^T V x / 2 + x^T C q + sum (pi_k^2 + w_k^2 q_k^2) / 2`.
//!
//! The full potential matrix is diagonalized once; observables linear in the
//! phase-space coordinates then evolve in closed form in the normal-mode
//! basis. A discrete bath recurs after `2 pi / dw`, so results are only used
//! up to half of that.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::NetworkSpec;
use crate::spectral::SpectralDensity;

/// One reservoir discretized into explicit modes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedBath {
    pub omegas: Vec<f64>,
    /// `K x M` coupling matrix, column `k` couples mode `k` to the network.
    pub couplings: DMatrix<f64>,
    pub temperature: f64,
    pub d_omega: f64,
}

impl DiscretizedBath {
    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    /// `2 pi / dw`.
    pub fn recurrence_time(&self) -> f64 {
        2.0 * PI / self.d_omega
    }

    /// `sum_k c_k c_k^T cos(w_k tau) / (2 w_k^2)`.
    pub fn gamma_kernel(&self, tau: f64) -> DMatrix<f64> {
        let k = self.couplings.nrows();
        let mut out = DMatrix::zeros(k, k);
        for (j, &w) in self.omegas.iter().enumerate() {
            let c = self.couplings.column(j);
            out += c * c.transpose() * ((w * tau).cos() / (2.0 * w * w));
        }
        out
    }
}

/// Sample `density` with `m` frequencies on `(0, upper]`.
pub fn discretize(
    density: &SpectralDensity,
    m: usize,
    upper: f64,
    temperature: f64,
) -> Result<DiscretizedBath> {
    if m < 2 {
        return Err(Error::config(
            "oracle.modes",
            "need at least 2 modes per reservoir",
        ));
    }
    if !(upper > 0.0) {
        return Err(Error::config(
            "oracle.upper",
            "discretization range must be positive",
        ));
    }
    let k = density.dim();
    let dw = upper / m as f64;
    let mut omegas = Vec::new();
    let mut cols: Vec<nalgebra::DVector<f64>> = Vec::new();
    for j in 0..m {
        let w = (j as f64 + 0.5) * dw;
        let mat = density.matrix(w);
        if mat.iter().all(|&x| x == 0.0) {
            continue;
        }
        let eig = SymmetricEigen::new(mat);
        for (l, u) in eig.eigenvalues.iter().zip(eig.eigenvectors.column_iter()) {
            if *l > 1e-14 * eig.eigenvalues.amax() {
                omegas.push(w);
                cols.push(u.into_owned() * (2.0 * w * l * dw).sqrt());
            }
        }
    }
    let couplings = if cols.is_empty() {
        DMatrix::zeros(k, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    Ok(DiscretizedBath {
        omegas,
        couplings,
        temperature,
        d_omega: dw,
    })
}

/// Network plus all discretized reservoirs, diagonalized.
#[derive(Debug, Clone)]
pub struct FullSystem {
    k: usize,
    /// Reservoirs with the index of the region they belong to.
    pub baths: Vec<(usize, DiscretizedBath)>,
    offsets: Vec<usize>,
    n: usize,
    freqs: Vec<f64>,
    modes: DMatrix<f64>,
    n_regions: usize,
}

impl FullSystem {
    /// Discretize every reservoir of `spec` with `m` modes on `(0, upper]`.
    pub fn new(spec: &NetworkSpec, m: usize, upper: f64) -> Result<Self> {
        let k = spec.dim();
        let mut baths = Vec::new();
        for (ri, reg) in spec.regions().iter().enumerate() {
            for res in &reg.reservoirs {
                baths.push((ri, discretize(&res.density, m, upper, res.temperature)?));
            }
        }
        let mut offsets = Vec::new();
        let mut n = k;
        for (_, b) in &baths {
            offsets.push(n);
            n += b.len();
        }
        let mut w = DMatrix::zeros(n, n);
        w.view_mut((0, 0), (k, k)).copy_from(spec.potential());
        for ((_, b), &off) in baths.iter().zip(&offsets) {
            w.view_mut((0, off), (k, b.len())).copy_from(&b.couplings);
            w.view_mut((off, 0), (b.len(), k))
                .copy_from(&b.couplings.transpose());
            for (j, &om) in b.omegas.iter().enumerate() {
                w[(off + j, off + j)] = om * om;
            }
        }
        let eig = SymmetricEigen::new(w);
        let min = eig.eigenvalues.min();
        if min <= 0.0 {
            return Err(Error::Structural(format!(
                "discretized system + bath potential is not positive definite (smallest eigenvalue {min:.3e}); \
                 the renormalized potential is unstable"
            )));
        }
        Ok(Self {
            k,
            baths,
            offsets,
            n,
            freqs: eig.eigenvalues.iter().map(|e| e.sqrt()).collect(),
            modes: eig.eigenvectors,
            n_regions: spec.regions().len(),
        })
    }

    pub fn total_coordinates(&self) -> usize {
        self.n
    }

    pub fn recurrence_time(&self) -> f64 {
        self.baths
            .iter()
            .map(|(_, b)| b.recurrence_time())
            .fold(f64::INFINITY, f64::min)
    }

    /// Validity window: half the shortest recurrence time.
    pub fn window(&self) -> f64 {
        0.5 * self.recurrence_time()
    }

    /// Initial covariance in normal-mode coordinates for a factorized state:
    /// network covariance `cov0` (2K x 2K, `(X, P)` order), thermal baths.
    fn initial_modal(&self, cov0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (k, n) = (self.k, self.n);
        if cov0.nrows() != 2 * k || cov0.ncols() != 2 * k {
            return Err(Error::Structural(
                "initial covariance must be 2K x 2K".into(),
            ));
        }
        let mut c = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..k {
            for j in 0..k {
                c[(i, j)] = cov0[(i, j)];
                c[(i, n + j)] = cov0[(i, k + j)];
                c[(n + i, j)] = cov0[(k + i, j)];
                c[(n + i, n + j)] = cov0[(k + i, k + j)];
            }
        }
        for ((_, b), &off) in self.baths.iter().zip(&self.offsets) {
            for (j, &w) in b.omegas.iter().enumerate() {
                let ct = crate::special::coth_factor(w, b.temperature);
                c[(off + j, off + j)] = ct / (2.0 * w);
                c[(n + off + j, n + off + j)] = ct * w / 2.0;
            }
        }
        // rotate positions and momenta separately: q = U z
        let u = &self.modes;
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        for (bi, bj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let blk = c.view((bi * n, bj * n), (n, n));
            let r = u.transpose() * blk * u;
            out.view_mut((bi * n, bj * n), (n, n)).copy_from(&r);
        }
        Ok(out)
    }

    /// Rows (in the modal phase space) of the observables `A q(t)` (positions)
    /// or `A p(t)` (momenta), given `B = A U`.
    fn rows(&self, b: &DMatrix<f64>, t: f64, momenta: bool) -> DMatrix<f64> {
        let n = self.n;
        let r = b.nrows();
        let mut out = DMatrix::zeros(r, 2 * n);
        for (j, &w) in self.freqs.iter().enumerate() {
            let (s, c) = (w * t).sin_cos();
            let (a0, a1) = if momenta { (-w * s, c) } else { (c, s / w) };
            for i in 0..r {
                out[(i, j)] = b[(i, j)] * a0;
                out[(i, n + j)] = b[(i, j)] * a1;
            }
        }
        out
    }

    fn check_window(&self, times: &[f64]) -> Result<()> {
        let t_max = times.iter().copied().fold(0.0, f64::max);
        if t_max > self.window() * (1.0 + 1e-12) {
            return Err(Error::RecurrenceWindowExceeded {
                t_max,
                window: self.window(),
            });
        }
        Ok(())
    }

    /// Reduced network covariance (`(X, P)` order) at each requested time.
    pub fn reduced_covariance(
        &self,
        cov0: &DMatrix<f64>,
        times: &[f64],
    ) -> Result<Vec<DMatrix<f64>>> {
        self.check_window(times)?;
        let c0 = self.initial_modal(cov0)?;
        let k = self.k;
        let b = self.modes.rows(0, k).into_owned();
        times
            .iter()
            .map(|&t| {
                let mut rows = DMatrix::zeros(2 * k, 2 * self.n);
                rows.rows_mut(0, k).copy_from(&self.rows(&b, t, false));
                rows.rows_mut(k, k).copy_from(&self.rows(&b, t, true));
                let c = &rows * &c0 * rows.transpose();
                Ok(crate::linalg::sym(&c))
            })
            .collect()
    }

    /// Heat flowing from each region's reservoirs into the network,
    /// `sum_{i,k} C_ik <x_i pi_k>`, at each time.
    pub fn heat_powers(&self, cov0: &DMatrix<f64>, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_window(times)?;
        let c0 = self.initial_modal(cov0)?;
        let (k, n) = (self.k, self.n);
        let bx = self.modes.rows(0, k).into_owned();
        // y_i^(region) = sum_{modes of region} C_ik pi_k
        let mut ay = DMatrix::zeros(self.n_regions * k, n);
        for ((ri, b), &off) in self.baths.iter().zip(&self.offsets) {
            for j in 0..b.len() {
                for i in 0..k {
                    ay[(ri * k + i, off + j)] += b.couplings[(i, j)];
                }
            }
        }
        let by = &ay * &self.modes;
        times
            .iter()
            .map(|&t| {
                let rx = self.rows(&bx, t, false);
                let ry = self.rows(&by, t, true);
                let cross = &rx * &c0 * ry.transpose();
                let sym_cross = (&cross + (&ry * &c0 * rx.transpose()).transpose()) * 0.5;
                Ok((0..self.n_regions)
                    .map(|r| (0..k).map(|i| sym_cross[(i, r * k + i)]).sum())
                    .collect())
            })
            .collect()
    }
}

/// Finite-bath heat currents over a quasi-stationary window.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OracleCurrents {
    /// Heat entering the network from each region (minus the bath-energy slope).
    pub qdot: Vec<f64>,
    /// RMS residual of the energy fits relative to the energy change scale.
    pub spread: f64,
}

/// Fit the accumulated bath-energy change linearly over `[t_start, t_end]`.
pub fn oracle_heat_current(
    full: &FullSystem,
    cov0: &DMatrix<f64>,
    t_start: f64,
    t_end: f64,
    samples: usize,
    noise_limit: f64,
) -> Result<OracleCurrents> {
    if !(t_end > t_start) || samples < 8 {
        return Err(Error::config(
            "oracle.window",
            "need t_end > t_start and at least 8 samples",
        ));
    }
    let times: Vec<f64> = (0..samples)
        .map(|i| t_start + (t_end - t_start) * i as f64 / (samples - 1) as f64)
        .collect();
    let powers = full.heat_powers(cov0, &times)?;
    let r = full.n_regions;
    let dt = times[1] - times[0];
    let mut qdot = Vec::with_capacity(r);
    let mut spread: f64 = 0.0;
    let gross = powers.iter().flatten().fold(0.0f64, |a, p| a.max(p.abs()));
    for a in 0..r {
        // bath energy relative to the window start: E(t) = -int Q
        let mut e = vec![0.0; samples];
        for i in 1..samples {
            e[i] = e[i - 1] - 0.5 * dt * (powers[i - 1][a] + powers[i][a]);
        }
        let n = samples as f64;
        let mt = times.iter().sum::<f64>() / n;
        let me = e.iter().sum::<f64>() / n;
        let sxx: f64 = times.iter().map(|t| (t - mt).powi(2)).sum();
        let sxy: f64 = times.iter().zip(&e).map(|(t, y)| (t - mt) * (y - me)).sum();
        let slope = sxy / sxx;
        let rms = (times
            .iter()
            .zip(&e)
            .map(|(t, y)| (y - me - slope * (t - mt)).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let scale = (t_end - t_start) * slope.abs().max(gross);
        if scale > 0.0 {
            spread = spread.max(rms / scale);
        }
        qdot.push(-slope);
    }
    if spread > noise_limit {
        return Err(Error::WindowTooNoisy {
            spread,
            limit: noise_limit,
        });
    }
    Ok(OracleCurrents { qdot, spread })
}
