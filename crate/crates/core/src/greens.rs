//! The network propagator `G(t)`.
//!
//! `G` solves `G'' + V_R G + 2 int_0^t gamma(t - s) G'(s) ds = 0` with
//! `G(0) = 0`, `G'(0) = 1`. In the time domain the linear part is integrated
//! exactly with the matrix exponential of `[[0, 1], [-V_R, 0]]`; the memory
//! force enters through the trapezoidal Duhamel rule and the convolution
//! through the trapezoidal sum, giving a second-order scheme that is exact for
//! an uncoupled network. The frequency-domain resolvent
//! `G_hat(i w) = (-w^2 + V_R + 2 i w gamma_hat(i w))^-1` is evaluated directly.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{block, block2, gemm_acc, sym_eigenvalues, MatSeries};
use crate::model::NetworkSpec;
use crate::quad::QuadOptions;
use crate::spectral::{gamma_kernel, gamma_laplace_imag_axis, SpectralDensity};

/// Norm beyond which a time integration is declared divergent.
const OVERFLOW: f64 = 1e100;

/// Sampled propagator on the uniform grid `t_n = n h`, `n = 0..=steps`.
#[derive(Debug, Clone)]
pub struct GreensFunction {
    pub h: f64,
    pub vr: DMatrix<f64>,
    pub g: MatSeries,
    pub gdot: MatSeries,
    pub gddot: MatSeries,
    /// Dissipation kernel on the same grid.
    pub gamma: MatSeries,
    /// Non-fatal warnings from the solve (step size advice).
    pub advisories: Vec<String>,
}

impl GreensFunction {
    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.h
    }

    pub fn t_max(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    /// `G'''(t) = -V_R G' - 2 gamma(t) - 2 int_0^t gamma(t - s) G''(s) ds`,
    /// with the convolution by the trapezoidal rule.
    pub fn third_derivative(&self) -> MatSeries {
        let k = self.dim();
        let n_pts = self.len();
        let h = self.h;
        let mut out = MatSeries::zeros(k, n_pts);
        let mut acc = vec![0.0; k * k];
        for n in 0..n_pts {
            acc.iter_mut().for_each(|x| *x = 0.0);
            gemm_acc(k, -1.0, self.vr.as_slice(), self.gdot.slice(n), &mut acc);
            for (a, g) in acc.iter_mut().zip(self.gamma.slice(n)) {
                *a -= 2.0 * g;
            }
            if n > 0 {
                for j in 0..=n {
                    let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                    gemm_acc(
                        k,
                        -2.0 * h * w,
                        self.gamma.slice(n - j),
                        self.gddot.slice(j),
                        &mut acc,
                    );
                }
            }
            out.slice_mut(n).copy_from_slice(&acc);
        }
        out
    }

    /// Per-step residual `|| D2 G_n + V_R G_n + 2 (gamma * G')_n ||_F` at the
    /// interior grid points, with a centered second difference and the
    /// trapezoidal convolution. Returns the maximum over the grid.
    pub fn residual(&self) -> f64 {
        let k = self.dim();
        let h = self.h;
        let mut worst: f64 = 0.0;
        let mut acc = vec![0.0; k * k];
        for n in 1..self.len().saturating_sub(1) {
            for (i, a) in acc.iter_mut().enumerate() {
                *a = (self.g.slice(n + 1)[i] - 2.0 * self.g.slice(n)[i] + self.g.slice(n - 1)[i])
                    / (h * h);
            }
            gemm_acc(k, 1.0, self.vr.as_slice(), self.g.slice(n), &mut acc);
            for j in 0..=n {
                let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                gemm_acc(
                    k,
                    2.0 * h * w,
                    self.gamma.slice(n - j),
                    self.gdot.slice(j),
                    &mut acc,
                );
            }
            worst = worst.max(acc.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        worst
    }

    /// Frobenius norm of `G(t_n)` along the grid.
    pub fn norms(&self) -> Vec<f64> {
        (0..self.len())
            .map(|n| self.g.slice(n).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }
}

/// Largest natural frequency of the network, `sqrt(max eig V_R)`.
pub fn max_network_frequency(vr: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(vr)
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(0.0)
        .sqrt()
}

/// Integrate the propagator up to `t_max` with step `h`.
pub fn solve_g_time(
    spec: &NetworkSpec,
    t_max: f64,
    h: f64,
    opts: &QuadOptions,
) -> Result<GreensFunction> {
    if !(h > 0.0) || !(t_max > 0.0) {
        return Err(Error::config(
            "numerics.h",
            "time step and t_max must be positive",
        ));
    }
    let vr = spec.renormalized_potential(opts)?;
    let steps = (t_max / h).round() as usize;
    let taus: Vec<f64> = (0..=steps).map(|n| n as f64 * h).collect();
    let dens = spec.densities();
    let gamma = if dens.is_empty() {
        MatSeries::zeros(spec.dim(), taus.len())
    } else {
        gamma_kernel(&dens, &taus, opts)?
    };
    let mut advisories = Vec::new();
    let fastest = max_network_frequency(&vr).max(spec.cutoff_scale());
    if fastest > 0.0 && h > 0.1 / fastest {
        advisories.push(format!(
            "step too coarse: h = {h:.3e} exceeds 0.1 / {fastest:.3e} (fastest network or cutoff frequency)"
        ));
    }
    let mut gf = solve_volterra(&vr, &gamma, h)?;
    gf.advisories = advisories;
    Ok(gf)
}

/// Core time stepper given `V_R` and the sampled kernel.
pub fn solve_volterra(vr: &DMatrix<f64>, gamma: &MatSeries, h: f64) -> Result<GreensFunction> {
    let k = vr.nrows();
    let n_pts = gamma.len();
    let zero = DMatrix::zeros(k, k);
    let ident = DMatrix::identity(k, k);
    let prop = (block2(&zero, &ident, &(-vr), &zero) * h).exp();
    let (e11, e12) = (block(&prop, k, 0, 0), block(&prop, k, 0, 1));
    let (e21, e22) = (block(&prop, k, 1, 0), block(&prop, k, 1, 1));
    let gamma0 = gamma.get(0);
    let implicit = (&ident + &gamma0 * (0.5 * h * h)).lu();
    if !implicit.is_invertible() {
        return Err(Error::NonConvergence(
            "memory term makes the implicit step singular".into(),
        ));
    }

    let mut g = MatSeries::zeros(k, n_pts);
    let mut gd = MatSeries::zeros(k, n_pts);
    let mut gdd = MatSeries::zeros(k, n_pts);
    gd.set(0, &ident);
    gdd.set(0, &(-vr * g.get(0)));

    // f_n: memory force -2 int gamma(t_n - s) G'(s) ds
    let mut f_prev = DMatrix::zeros(k, k);
    let mut acc = vec![0.0; k * k];
    for n in 0..n_pts.saturating_sub(1) {
        let gn = g.get(n);
        let vn = gd.get(n);
        // Advance G and the explicit part of G'.
        let g_next = &e11 * &gn + &e12 * (&vn + &f_prev * (0.5 * h));
        let w = &e21 * &gn + &e22 * (&vn + &f_prev * (0.5 * h));
        // Known part of f_{n+1}.
        acc.iter_mut().for_each(|x| *x = 0.0);
        gemm_acc(k, -h, gamma.slice(n + 1), gd.slice(0), &mut acc);
        for j in 1..=n {
            gemm_acc(k, -2.0 * h, gamma.slice(n + 1 - j), gd.slice(j), &mut acc);
        }
        let known = DMatrix::from_column_slice(k, k, &acc);
        let v_next = implicit
            .solve(&(w + &known * (0.5 * h)))
            .ok_or_else(|| Error::NonConvergence("implicit memory step failed".into()))?;
        let f_next = known - &gamma0 * &v_next * h;
        let a_next = -vr * &g_next + &f_next;
        let norm = g_next.norm() + v_next.norm();
        if !norm.is_finite() || norm > OVERFLOW {
            return Err(Error::NonConvergence(format!(
                "G(t) overflowed at t = {:.4e}; the renormalized potential is likely unstable",
                (n + 1) as f64 * h
            )));
        }
        g.set(n + 1, &g_next);
        gd.set(n + 1, &v_next);
        gdd.set(n + 1, &a_next);
        f_prev = f_next;
    }
    Ok(GreensFunction {
        h,
        vr: vr.clone(),
        g,
        gdot: gd,
        gddot: gdd,
        gamma: gamma.clone(),
        advisories: Vec::new(),
    })
}

/// Frequency-domain resolvent with a per-frequency cache.
#[derive(Debug)]
pub struct FreqEvaluator {
    densities: Vec<SpectralDensity>,
    vr: DMatrix<f64>,
    opts: QuadOptions,
    cache: Mutex<HashMap<u64, DMatrix<Complex64>>>,
}

impl FreqEvaluator {
    pub fn new(spec: &NetworkSpec, opts: &QuadOptions) -> Result<Self> {
        Ok(Self {
            densities: spec.densities().into_iter().cloned().collect(),
            vr: spec.renormalized_potential(opts)?,
            // outer frequency integrals need a smooth integrand, so the inner
            // principal values are resolved well past the outer tolerance
            opts: QuadOptions {
                abs_tol: opts.abs_tol * 1e-2,
                rel_tol: (opts.rel_tol * 1e-2).max(1e-14),
                ..*opts
            },
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn vr(&self) -> &DMatrix<f64> {
        &self.vr
    }

    pub fn dim(&self) -> usize {
        self.vr.nrows()
    }

    /// The matrix `-w^2 + V_R + 2 i w gamma_hat(i w)` being inverted.
    pub fn kernel_matrix(&self, w: f64) -> Result<DMatrix<Complex64>> {
        let k = self.dim();
        let dens: Vec<&SpectralDensity> = self.densities.iter().collect();
        let wa = w.abs();
        let (re, im) = if wa > 0.0 && !dens.is_empty() {
            gamma_laplace_imag_axis(&dens, wa, &self.opts)?
        } else {
            (DMatrix::zeros(k, k), DMatrix::zeros(k, k))
        };
        // 2 i w (re + i im) = -2 w im + 2 i w re
        let real = &self.vr - DMatrix::identity(k, k) * (wa * wa) - im * (2.0 * wa);
        let imag = re * (2.0 * wa);
        let sign = if w < 0.0 { -1.0 } else { 1.0 };
        Ok(real.zip_map(&imag, |a, b| Complex64::new(a, sign * b)))
    }

    /// `G_hat(i w)`; negative `w` gives the complex conjugate.
    pub fn eval(&self, w: f64) -> Result<DMatrix<Complex64>> {
        let key = w.to_bits();
        if let Some(m) = self.cache.lock().unwrap().get(&key) {
            return Ok(m.clone());
        }
        let m = self.kernel_matrix(w)?;
        let inv = invert_checked(&m).ok_or(Error::SingularAtFrequency { omega: w })?;
        self.cache.lock().unwrap().insert(key, inv.clone());
        Ok(inv)
    }

    /// `|| G_hat(i w) M(w) - 1 ||` at one frequency.
    pub fn identity_residual(&self, w: f64) -> Result<f64> {
        let m = self.kernel_matrix(w)?;
        let g = self.eval(w)?;
        let k = self.dim();
        let d = g * m - DMatrix::<Complex64>::identity(k, k);
        Ok(d.iter().fold(0.0f64, |a, z| a.max(z.norm())))
    }
}

/// Inverse with a condition-number guard (1-norm estimate from the explicit inverse).
fn invert_checked(m: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    let inv = m.clone().try_inverse()?;
    let norm1 = |a: &DMatrix<Complex64>| {
        (0..a.ncols())
            .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let cond = norm1(m) * norm1(&inv);
    if !cond.is_finite() || cond > 1e13 {
        return None;
    }
    Some(inv)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DecayReport {
    pub decays: bool,
    /// Fitted exponential decay rate of the `||G||_F` envelope over the tail.
    pub rate: f64,
    /// Tail envelope divided by the peak norm.
    pub tail_ratio: f64,
}

pub const DEFAULT_DECAY_RATE: f64 = 1e-6;
pub const DEFAULT_TAIL_RATIO: f64 = 1e-4;

/// Empirical test of whether `G(t)` dies out within the solved window.
///
/// The second half of the grid is cut into blocks; the block maxima of
/// `||G||_F` form the envelope, which is fitted by least squares to
/// `log a - rate t`.
pub fn decay_check(gf: &GreensFunction, min_rate: f64, tail_limit: f64) -> Result<DecayReport> {
    const BLOCKS: usize = 16;
    let norms = gf.norms();
    let n = norms.len();
    let start = n / 2;
    if n - start < 4 * BLOCKS {
        return Err(Error::InconclusiveWindow(format!(
            "only {n} grid points; need at least {} to fit a tail envelope",
            8 * BLOCKS
        )));
    }
    let peak = norms.iter().copied().fold(0.0, f64::max);
    let len = (n - start) / BLOCKS;
    let mut ts = Vec::new();
    let mut ls = Vec::new();
    for b in 0..BLOCKS {
        let lo = start + b * len;
        let (i, m) = norms[lo..lo + len]
            .iter()
            .enumerate()
            .fold(
                (0, 0.0f64),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            );
        if m > 0.0 {
            ts.push(gf.time(lo + i));
            ls.push(m.ln());
        }
    }
    if ts.len() < 3 {
        // envelope vanished identically
        return Ok(DecayReport {
            decays: true,
            rate: f64::INFINITY,
            tail_ratio: 0.0,
        });
    }
    let mt = ts.iter().sum::<f64>() / ts.len() as f64;
    let ml = ls.iter().sum::<f64>() / ls.len() as f64;
    let sxy: f64 = ts.iter().zip(&ls).map(|(t, l)| (t - mt) * (l - ml)).sum();
    let sxx: f64 = ts.iter().map(|t| (t - mt) * (t - mt)).sum();
    let rate = -sxy / sxx;
    let tail = ls.last().unwrap().exp();
    let tail_ratio = tail / peak;
    if rate < -min_rate.max(1e-3 / gf.t_max()) && tail_ratio >= 1.0 {
        return Err(Error::NonConvergence(format!(
            "G(t) grows at rate {:.3e}; the network is unstable",
            -rate
        )));
    }
    Ok(DecayReport {
        decays: rate > min_rate && tail_ratio < tail_limit,
        rate,
        tail_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Region, Reservoir};
    use crate::spectral::CutoffShape;

    fn one_site(w0sq: f64, gc: f64, cutoff: f64) -> NetworkSpec {
        one_site_shaped(w0sq, gc, cutoff, CutoffShape::Sharp)
    }

    fn one_site_shaped(w0sq: f64, gc: f64, cutoff: f64, shape: CutoffShape) -> NetworkSpec {
        let regions = if gc > 0.0 {
            let d = SpectralDensity::ohmic(1, vec![0], gc, cutoff, shape).unwrap();
            vec![Region::new(
                "a",
                vec![0],
                vec![Reservoir::new(1.0, d).unwrap()],
            )]
        } else {
            vec![]
        };
        NetworkSpec::new(DMatrix::from_element(1, 1, w0sq), regions).unwrap()
    }

    #[test]
    fn renormalization_examples() {
        let o = QuadOptions::default();
        assert_eq!(
            one_site(2.0, 0.0, 1.0).renormalized_potential(&o).unwrap()[(0, 0)],
            2.0
        );
        let vr = one_site(9.0, 0.1, 6.0).renormalized_potential(&o).unwrap();
        assert!((vr[(0, 0)] - (9.0 - 2.0 * 0.1 * 6.0)).abs() < 1e-10);
        let d = SpectralDensity::ohmic(1, vec![0], 0.1, 6.0, CutoffShape::Sharp).unwrap();
        let two = NetworkSpec::new(
            DMatrix::from_element(1, 1, 9.0),
            vec![Region::new(
                "a",
                vec![0],
                vec![
                    Reservoir::new(1.0, d.clone()).unwrap(),
                    Reservoir::new(2.0, d).unwrap(),
                ],
            )],
        )
        .unwrap();
        let vr2 = two.renormalized_potential(&o).unwrap();
        assert!((vr2[(0, 0)] - (9.0 - 4.0 * 0.6)).abs() < 1e-10);
    }

    #[test]
    fn uncoupled_oscillator_is_exact() {
        let w0: f64 = 1.7;
        let gf = solve_g_time(
            &one_site(w0 * w0, 0.0, 1.0),
            20.0,
            0.05,
            &QuadOptions::default(),
        )
        .unwrap();
        for n in 0..gf.len() {
            let t = gf.time(n);
            assert!((gf.g.slice(n)[0] - (w0 * t).sin() / w0).abs() < 1e-12);
            assert!((gf.gdot.slice(n)[0] - (w0 * t).cos()).abs() < 1e-12);
            assert!((gf.gddot.slice(n)[0] + w0 * (w0 * t).sin()).abs() < 1e-11);
        }
        let rep = decay_check(&gf, DEFAULT_DECAY_RATE, DEFAULT_TAIL_RATIO).unwrap();
        assert!(!rep.decays);
    }

    #[test]
    fn damped_oscillator_decays() {
        let spec = one_site_shaped(4.0, 0.1, 4.0, CutoffShape::Exponential);
        let o = QuadOptions::default();
        let gf = solve_g_time(&spec, 120.0, 0.025, &o).unwrap();
        assert!(gf.advisories.is_empty());
        let rep = decay_check(&gf, DEFAULT_DECAY_RATE, DEFAULT_TAIL_RATIO).unwrap();
        assert!(rep.decays, "{rep:?}");
        // weak coupling: envelope rate ~ Re gamma_hat(i W) at the renormalized frequency W
        let w = gf.vr[(0, 0)].sqrt();
        let (re, _) = gamma_laplace_imag_axis(&[spec.densities()[0]], w, &o).unwrap();
        assert!(
            (rep.rate / re[(0, 0)] - 1.0).abs() < 0.1,
            "{} vs {}",
            rep.rate,
            re[(0, 0)]
        );
    }

    #[test]
    fn short_window_inconclusive() {
        let gf =
            solve_g_time(&one_site(4.0, 0.1, 8.0), 0.5, 0.01, &QuadOptions::default()).unwrap();
        assert!(matches!(
            decay_check(&gf, DEFAULT_DECAY_RATE, DEFAULT_TAIL_RATIO),
            Err(Error::InconclusiveWindow(_))
        ));
    }

    #[test]
    fn unstable_potential_does_not_converge() {
        // V_R = 1 - 2 * 0.5 * 4 = -3
        let spec = one_site(1.0, 0.5, 4.0);
        let r = solve_g_time(&spec, 400.0, 0.02, &QuadOptions::default())
            .and_then(|gf| decay_check(&gf, DEFAULT_DECAY_RATE, DEFAULT_TAIL_RATIO));
        assert!(matches!(r, Err(Error::NonConvergence(_))), "{r:?}");
    }

    #[test]
    fn resolvent_examples() {
        let o = QuadOptions::default();
        let v = DMatrix::from_row_slice(2, 2, &[2.0, -0.5, -0.5, 3.0]);
        let spec = NetworkSpec::new(v.clone(), vec![]).unwrap();
        let ev = FreqEvaluator::new(&spec, &o).unwrap();
        let g0 = ev.eval(0.0).unwrap();
        let want = v.try_inverse().unwrap();
        assert!(g0
            .iter()
            .zip(want.iter())
            .all(|(a, b)| (a.re - b).abs() < 1e-14 && a.im == 0.0));

        let spec = one_site(4.0, 0.05, 10.0);
        let ev = FreqEvaluator::new(&spec, &o).unwrap();
        let a = ev.eval(1.3).unwrap();
        let b = ev.eval(-1.3).unwrap();
        assert!((a[(0, 0)] - b[(0, 0)].conj()).norm() < 1e-15);
        assert!(ev.identity_residual(1.3).unwrap() < 1e-12);
        // |G_hat| peaks near the root of w^2 - V_R + 2 w Im gamma_hat(i w), i.e. the renormalized resonance
        let grid: Vec<f64> = (1..4000).map(|i| i as f64 * 1e-3).collect();
        let (wpk, _) = grid
            .iter()
            .map(|&w| (w, ev.eval(w).unwrap()[(0, 0)].norm()))
            .fold((0.0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        let vr = ev.vr()[(0, 0)];
        let f = |w: f64| {
            let (_, im) = gamma_laplace_imag_axis(&[spec.densities()[0]], w, &o).unwrap();
            w * w - vr + 2.0 * w * im[(0, 0)]
        };
        let (mut lo, mut hi) = (0.5, 3.5);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((wpk - lo).abs() < 0.01, "{wpk} vs {lo}");
    }

    #[test]
    fn undamped_resonance_is_singular() {
        let spec = one_site(4.0, 0.0, 1.0);
        let ev = FreqEvaluator::new(&spec, &QuadOptions::default()).unwrap();
        assert!(matches!(
            ev.eval(2.0),
            Err(Error::SingularAtFrequency { .. })
        ));
    }
}
