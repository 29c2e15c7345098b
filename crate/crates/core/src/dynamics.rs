//! Gaussian-state evolution and the time-local generator.
//!
//! With the `(X, P)` ordering the exact solution is linear:
//! `X(t) = G' X0 + G P0 + noise`, `P(t) = G'' X0 + G' P0 + noise`, so the first
//! moments map through `Phi = [[G', G], [G'', G']]` and the covariance through
//! `C(t) = Phi C0 Phi^T + Sigma(t)`, where `Sigma` has blocks
//! `sigma^(n,m)(t) = int_0^t int_0^t G^(n)(t1) nu(t1 - t2) G^(m)(t2)^T`.
//!
//! The master-equation coefficients follow from requiring that
//! `d/dt (x, p) = A(t) (x, p)` with `A = [[0, 1], [-V(t), -2 Gamma(t)]]`
//! reproduces `Phi`, i.e. `[V, 2 Gamma] = -[G''', G''] Phi^-1`, and that
//! `dC/dt = A C + C A^T + N` reproduces `Sigma` with
//! `N = [[0, -F], [-F^T, 2 D]]`,
//! `D = Sym(V sigma01 + 2 Gamma sigma11) + sigma11' / 2`,
//! `F = sigma11 - sigma00 V^T - 2 sigma01 Gamma^T - sigma01'`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::greens::{FreqEvaluator, GreensFunction};
use crate::linalg::{block, block2, gemm_acc, gemm_nt_acc, symplectic_form, MatSeries};
use crate::model::NetworkSpec;
use crate::quad::{integrate_vec, panel_breaks, QuadOptions};
use crate::spectral::{noise_kernel, nu_hat};

/// Condition number of `Phi` above which coefficients are masked.
pub const COND_MASK: f64 = 1e10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n % 2 != 0 || cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Structural(
                "state needs a 2K mean and a 2K x 2K covariance".into(),
            ));
        }
        if crate::linalg::asymmetry(&cov) > 1e-12 {
            return Err(Error::Structural("covariance is not symmetric".into()));
        }
        let s = Self { mean, cov };
        if s.uncertainty_margin() < -1e-10 {
            return Err(Error::Structural(
                "covariance violates the uncertainty relation".into(),
            ));
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.mean.len() / 2
    }

    /// Vacuum of unit-frequency oscillators displaced to `(x, p)`.
    pub fn coherent(x: &[f64], p: &[f64]) -> Self {
        let k = x.len();
        let mut mean = DVector::zeros(2 * k);
        mean.rows_mut(0, k).copy_from_slice(x);
        mean.rows_mut(k, k).copy_from_slice(p);
        Self {
            mean,
            cov: DMatrix::identity(2 * k, 2 * k) * 0.5,
        }
    }

    /// Thermal state of uncoupled oscillators with frequencies `omegas`.
    pub fn thermal(omegas: &[f64], temperature: f64) -> Self {
        let k = omegas.len();
        let mut cov = DMatrix::zeros(2 * k, 2 * k);
        for (i, &w) in omegas.iter().enumerate() {
            let c = crate::special::coth_factor(w, temperature);
            cov[(i, i)] = c / (2.0 * w);
            cov[(k + i, k + i)] = c * w / 2.0;
        }
        Self {
            mean: DVector::zeros(2 * k),
            cov,
        }
    }

    /// Thermal state of the closed network with potential `v` (positive definite).
    pub fn thermal_network(v: &DMatrix<f64>, temperature: f64) -> Result<Self> {
        let k = v.nrows();
        let eig = nalgebra::SymmetricEigen::new(v.clone());
        if eig.eigenvalues.min() <= 0.0 {
            return Err(Error::Structural(
                "thermal state needs a positive definite potential".into(),
            ));
        }
        let u = &eig.eigenvectors;
        let (mut xx, mut pp) = (DMatrix::zeros(k, k), DMatrix::zeros(k, k));
        for (i, &l) in eig.eigenvalues.iter().enumerate() {
            let w = l.sqrt();
            let c = crate::special::coth_factor(w, temperature);
            let col = u.column(i);
            xx += col * col.transpose() * (c / (2.0 * w));
            pp += col * col.transpose() * (c * w / 2.0);
        }
        let mut cov = DMatrix::zeros(2 * k, 2 * k);
        cov.view_mut((0, 0), (k, k))
            .copy_from(&crate::linalg::sym(&xx));
        cov.view_mut((k, k), (k, k))
            .copy_from(&crate::linalg::sym(&pp));
        Ok(Self {
            mean: DVector::zeros(2 * k),
            cov,
        })
    }

    /// Smallest eigenvalue of `cov + i Omega / 2`.
    pub fn uncertainty_margin(&self) -> f64 {
        uncertainty_margin(&self.cov)
    }
}

/// Smallest eigenvalue of the Hermitian matrix `cov + i Omega / 2`.
pub fn uncertainty_margin(cov: &DMatrix<f64>) -> f64 {
    let k = cov.nrows() / 2;
    let omega = symplectic_form(k);
    let h = cov.zip_map(&omega, |c, o| Complex64::new(c, 0.5 * o));
    nalgebra::SymmetricEigen::new(h).eigenvalues.min()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorMatrices {
    pub phi: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

/// Noise blocks `sigma^(0,0)`, `sigma^(0,1)`, `sigma^(1,1)` on the propagator grid.
#[derive(Debug, Clone)]
pub struct SigmaSeries {
    pub h: f64,
    pub s00: MatSeries,
    pub s01: MatSeries,
    pub s11: MatSeries,
}

impl SigmaSeries {
    pub fn len(&self) -> usize {
        self.s00.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s00.is_empty()
    }

    pub fn sigma(&self, n: usize) -> DMatrix<f64> {
        let s01 = self.s01.get(n);
        block2(&self.s00.get(n), &s01, &s01.transpose(), &self.s11.get(n))
    }
}

/// Noise kernel of the network's reservoirs sampled on the propagator grid.
pub fn noise_on_grid(
    spec: &NetworkSpec,
    gf: &GreensFunction,
    opts: &QuadOptions,
) -> Result<MatSeries> {
    let baths = spec.thermal_densities();
    if baths.is_empty() {
        return Ok(MatSeries::zeros(gf.dim(), gf.len()));
    }
    let taus: Vec<f64> = (0..gf.len()).map(|n| gf.time(n)).collect();
    noise_kernel(&baths, &taus, opts)
}

/// Trapezoidal double integrals for all grid points, built incrementally.
pub fn sigma_series(gf: &GreensFunction, nu: &MatSeries) -> Result<SigmaSeries> {
    if nu.len() != gf.len() || nu.dim() != gf.dim() {
        return Err(Error::GridMismatch(
            "noise kernel and propagator grids differ".into(),
        ));
    }
    let k = gf.dim();
    let kk = k * k;
    let n_pts = gf.len();
    let h2 = gf.h * gf.h;
    let mut s00 = MatSeries::zeros(k, n_pts);
    let mut s01 = MatSeries::zeros(k, n_pts);
    let mut s11 = MatSeries::zeros(k, n_pts);
    // U = sum_{i,j<=N} a_i a_j A_i nu_{|i-j|} B_j^T with a_0 = 1/2, a_i = 1 otherwise
    let mut u = [vec![0.0; kk], vec![0.0; kk], vec![0.0; kk]];
    let mut zg = vec![0.0; kk];
    let mut zd = vec![0.0; kk];
    let mut tmp = vec![0.0; kk];
    for n in 0..n_pts {
        // Z_A = sum_i a_i A_i nu_{N-i}
        zg.iter_mut().for_each(|x| *x = 0.0);
        zd.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..=n {
            let a = if i == 0 { 0.5 } else { 1.0 };
            gemm_acc(k, a, gf.g.slice(i), nu.slice(n - i), &mut zg);
            gemm_acc(k, a, gf.gdot.slice(i), nu.slice(n - i), &mut zd);
        }
        let an = if n == 0 { 0.5 } else { 1.0 };
        let pairs: [(&[f64], &[f64], &[f64], &[f64]); 3] = [
            (gf.g.slice(n), gf.g.slice(n), &zg, &zg),
            (gf.g.slice(n), gf.gdot.slice(n), &zg, &zd),
            (gf.gdot.slice(n), gf.gdot.slice(n), &zd, &zd),
        ];
        for (p, (an_mat, bn_mat, za, zb)) in pairs.iter().enumerate() {
            // r = A_N Z_B^T, q = Z_A B_N^T, x = A_N nu_0 B_N^T
            let mut rq = vec![0.0; kk];
            gemm_nt_acc(k, 1.0, an_mat, zb, &mut rq);
            gemm_nt_acc(k, 1.0, za, bn_mat, &mut rq);
            tmp.iter_mut().for_each(|x| *x = 0.0);
            let mut anu = vec![0.0; kk];
            gemm_acc(k, 1.0, an_mat, nu.slice(0), &mut anu);
            gemm_nt_acc(k, 1.0, &anu, bn_mat, &mut tmp);
            for i in 0..kk {
                u[p][i] += an * rq[i] - an * an * tmp[i];
            }
            if n == 0 {
                continue;
            }
            let out = match p {
                0 => s00.slice_mut(n),
                1 => s01.slice_mut(n),
                _ => s11.slice_mut(n),
            };
            for i in 0..kk {
                out[i] = h2 * (u[p][i] - 0.5 * rq[i] + 0.25 * tmp[i]);
            }
        }
    }
    Ok(SigmaSeries {
        h: gf.h,
        s00,
        s01,
        s11,
    })
}

/// `(Phi, Sigma)` at grid time `t`.
pub fn propagator_matrices(
    gf: &GreensFunction,
    sig: &SigmaSeries,
    t: f64,
) -> Result<PropagatorMatrices> {
    let x = t / gf.h;
    let n = x.round();
    if (x - n).abs() > 1e-9 * x.abs().max(1.0)
        || n < 0.0
        || n as usize >= gf.len()
        || sig.len() != gf.len()
    {
        return Err(Error::GridMismatch(format!(
            "t = {t} is not a point of the solved grid (h = {}, t_max = {})",
            gf.h,
            gf.t_max()
        )));
    }
    Ok(propagator_at(gf, sig, n as usize))
}

pub fn phi_at(gf: &GreensFunction, n: usize) -> DMatrix<f64> {
    let gd = gf.gdot.get(n);
    block2(&gd, &gf.g.get(n), &gf.gddot.get(n), &gd)
}

pub fn propagator_at(gf: &GreensFunction, sig: &SigmaSeries, n: usize) -> PropagatorMatrices {
    PropagatorMatrices {
        phi: phi_at(gf, n),
        sigma: sig.sigma(n),
    }
}

/// `mean <- Phi mean`, `cov <- Phi cov Phi^T + Sigma`.
pub fn evolve_state(state: &GaussianState, pm: &PropagatorMatrices) -> GaussianState {
    let cov = &pm.phi * &state.cov * pm.phi.transpose() + &pm.sigma;
    GaussianState {
        mean: &pm.phi * &state.mean,
        cov: crate::linalg::sym(&cov),
    }
}

/// Stationary `sigma^(n,m)` from the resolvent:
/// `sigma00 = int Re[G nu_hat G*]`, `sigma01 = int w Im[G nu_hat G*]`,
/// `sigma11 = int w^2 Re[G nu_hat G*]`, with `G = G_hat(i w)`.
pub fn stationary_sigma_freq(
    spec: &NetworkSpec,
    eval: &FreqEvaluator,
    opts: &QuadOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let k = spec.dim();
    let kk = k * k;
    let baths = spec.thermal_densities();
    let upper = spec.density_upper();
    if upper <= 0.0 {
        return Err(Error::NotStationary(
            "no reservoir coupling, G(t) does not decay".into(),
        ));
    }
    let mut pts = resonance_points(eval.vr());
    for b in &baths {
        pts.push(b.temperature);
        pts.push(5.0 * b.temperature);
    }
    let breaks = panel_breaks(0.0, upper, f64::INFINITY, &pts);
    let mut err = None;
    let r = integrate_vec(
        3 * kk,
        |w, out| {
            out.iter_mut().for_each(|x| *x = 0.0);
            if w <= 0.0 {
                return;
            }
            let g = match eval.eval(w) {
                Ok(g) => g,
                Err(e) => {
                    err.get_or_insert(e);
                    return;
                }
            };
            let nh = nu_hat(&baths, w).map(|x| Complex64::new(x, 0.0));
            let m = &g * nh * g.adjoint();
            for (i, z) in m.iter().enumerate() {
                out[i] = z.re;
                out[kk + i] = w * z.im;
                out[2 * kk + i] = w * w * z.re;
            }
        },
        &breaks,
        opts,
    )?;
    if let Some(e) = err {
        return Err(e);
    }
    let at = |o: usize| DMatrix::from_column_slice(k, k, &r.value[o * kk..(o + 1) * kk]);
    Ok((at(0), at(1), at(2)))
}

/// Square roots of the positive eigenvalues of `V_R` (used as quadrature breakpoints).
pub fn resonance_points(vr: &DMatrix<f64>) -> Vec<f64> {
    crate::linalg::sym_eigenvalues(vr)
        .into_iter()
        .filter(|&e| e > 0.0)
        .map(f64::sqrt)
        .collect()
}

/// Time series of the generator coefficients.
#[derive(Debug, Clone)]
pub struct MasterCoefficients {
    pub h: f64,
    pub v: Vec<DMatrix<f64>>,
    pub gamma: Vec<DMatrix<f64>>,
    pub d: Vec<DMatrix<f64>>,
    pub f: Vec<DMatrix<f64>>,
    /// Grid indices where `Phi` is too ill-conditioned to invert.
    pub masked: Vec<usize>,
}

impl MasterCoefficients {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn is_masked(&self, n: usize) -> bool {
        self.masked.binary_search(&n).is_ok()
    }

    /// Drift matrix `A(t_n)`.
    pub fn drift(&self, n: usize) -> DMatrix<f64> {
        let k = self.v[n].nrows();
        block2(
            &DMatrix::zeros(k, k),
            &DMatrix::identity(k, k),
            &(-&self.v[n]),
            &(&self.gamma[n] * -2.0),
        )
    }

    /// Inhomogeneous covariance source `N(t_n)`.
    pub fn source(&self, n: usize) -> DMatrix<f64> {
        let k = self.v[n].nrows();
        block2(
            &DMatrix::zeros(k, k),
            &(-&self.f[n]),
            &(-self.f[n].transpose()),
            &(&self.d[n] * 2.0),
        )
    }
}

fn series_derivative(s: &MatSeries, h: f64) -> MatSeries {
    let (k, n) = (s.dim(), s.len());
    let mut out = MatSeries::zeros(k, n);
    if n < 3 {
        return out;
    }
    for i in 0..n {
        let o = out.slice_mut(i);
        for (e, v) in o.iter_mut().enumerate() {
            *v = if i == 0 {
                (-3.0 * s.slice(0)[e] + 4.0 * s.slice(1)[e] - s.slice(2)[e]) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * s.slice(i)[e] - 4.0 * s.slice(i - 1)[e] + s.slice(i - 2)[e]) / (2.0 * h)
            } else {
                (s.slice(i + 1)[e] - s.slice(i - 1)[e]) / (2.0 * h)
            };
        }
    }
    out
}

/// Extract `V(t)`, `Gamma(t)`, `D(t)`, `F(t)` on the grid.
pub fn master_coefficients(gf: &GreensFunction, sig: &SigmaSeries) -> Result<MasterCoefficients> {
    if sig.len() != gf.len() {
        return Err(Error::GridMismatch(
            "sigma series and propagator grids differ".into(),
        ));
    }
    let k = gf.dim();
    let g3 = gf.third_derivative();
    let d01 = series_derivative(&sig.s01, gf.h);
    let d11 = series_derivative(&sig.s11, gf.h);
    let zero = DMatrix::zeros(k, k);
    let mut out = MasterCoefficients {
        h: gf.h,
        v: Vec::with_capacity(gf.len()),
        gamma: Vec::with_capacity(gf.len()),
        d: Vec::with_capacity(gf.len()),
        f: Vec::with_capacity(gf.len()),
        masked: Vec::new(),
    };
    for n in 0..gf.len() {
        let phi = phi_at(gf, n);
        let svd = phi.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let inv = if smin > 0.0 && smax / smin < COND_MASK {
            phi.try_inverse()
        } else {
            None
        };
        let Some(inv) = inv else {
            out.masked.push(n);
            out.v.push(zero.clone());
            out.gamma.push(zero.clone());
            out.d.push(zero.clone());
            out.f.push(zero.clone());
            continue;
        };
        let row = DMatrix::from_fn(k, 2 * k, |i, j| {
            if j < k {
                g3.get(n)[(i, j)]
            } else {
                gf.gddot.get(n)[(i, j - k)]
            }
        });
        let vg = -(row * inv);
        let v = vg.columns(0, k).into_owned();
        let gamma = vg.columns(k, k).into_owned() * 0.5;
        let (s00, s01, s11) = (sig.s00.get(n), sig.s01.get(n), sig.s11.get(n));
        let d = crate::linalg::sym(&(&v * &s01 + &gamma * &s11 * 2.0)) + d11.get(n) * 0.5;
        let f = &s11 - &s00 * v.transpose() - &s01 * gamma.transpose() * 2.0 - d01.get(n);
        out.v.push(v);
        out.gamma.push(gamma);
        out.d.push(d);
        out.f.push(f);
    }
    Ok(out)
}

/// Propagate `C' = A C + C A^T + N` across the grid with Heun's method,
/// starting from `cov0` at `t = 0`. Masked points stop the propagation (the
/// returned series is truncated there).
pub fn propagate_with_generator(
    coef: &MasterCoefficients,
    cov0: &DMatrix<f64>,
) -> Vec<DMatrix<f64>> {
    let h = coef.h;
    let rhs = |n: usize, c: &DMatrix<f64>| {
        let a = coef.drift(n);
        &a * c + c * a.transpose() + coef.source(n)
    };
    let mut out = vec![cov0.clone()];
    for n in 0..coef.len().saturating_sub(1) {
        if coef.is_masked(n) || coef.is_masked(n + 1) {
            break;
        }
        let c = &out[n];
        let k1 = rhs(n, c);
        let pred = c + &k1 * h;
        let k2 = rhs(n + 1, &pred);
        out.push(c + (k1 + k2) * (0.5 * h));
    }
    out
}

/// First grid index where an explicit step of size `h` no longer resolves the
/// drift (`h max|A| > 1`). Time-local coefficients spike wherever `Phi(t)`
/// approaches singularity; past such a point a fixed-step integration of the
/// generator says more about the integrator than about the generator.
pub fn first_stiff_index(coef: &MasterCoefficients) -> Option<usize> {
    (0..coef.len())
        .find(|&n| !coef.is_masked(n) && coef.h * crate::linalg::max_abs(&coef.drift(n)) > 1.0)
}

/// The two expressions for the rate of change of the renormalized energy.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnergyFlow {
    /// `tr(D - 2 Gamma sigma11)`
    pub diffusive: f64,
    /// `tr(V_R sigma01)`
    pub stationary: f64,
}

impl EnergyFlow {
    pub fn difference(&self) -> f64 {
        self.diffusive - self.stationary
    }
}

pub fn energy_flow(
    decayed: bool,
    vr: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    d: &DMatrix<f64>,
    s01: &DMatrix<f64>,
    s11: &DMatrix<f64>,
) -> Result<EnergyFlow> {
    if !decayed {
        return Err(Error::NotStationary(
            "G(t) has not decayed; no stationary regime".into(),
        ));
    }
    Ok(EnergyFlow {
        diffusive: (d - gamma * s11 * 2.0).trace(),
        stationary: (vr * s01).trace(),
    })
}

/// Reduced 2K x 2K covariance from the full exact solution at grid index `n`.
pub fn covariance_at(
    gf: &GreensFunction,
    sig: &SigmaSeries,
    cov0: &DMatrix<f64>,
    n: usize,
) -> DMatrix<f64> {
    let pm = propagator_at(gf, sig, n);
    crate::linalg::sym(&(&pm.phi * cov0 * pm.phi.transpose() + pm.sigma))
}

/// Split a `2K x 2K` matrix into its `(XX, XP, PP)` blocks.
pub fn blocks(c: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let k = c.nrows() / 2;
    (block(c, k, 0, 0), block(c, k, 0, 1), block(c, k, 1, 1))
}
