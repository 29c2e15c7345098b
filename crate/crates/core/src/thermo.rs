//! Stationary heat transport between reservoir-coupled regions.
//!
//! The heat-transfer matrix between regions `a != b` is
//! `Q_ab(w) = -pi tr(I_a G I_b G^dagger)` with `G = G_hat(i w)`, which is
//! manifestly non-positive; the diagonal follows from zero row sums. The
//! alternative form `Im tr(P_a V_R G I_b G(-i w))` is evaluated alongside for
//! every entry (diagonal included) as an independent check.
//!
//! Currents use occupation differences,
//! `Q_a = -2 sum_{b != a} int w Q_ab(w) (n_a(w) - n_b(w)) dw`, and are
//! cross-checked against `Q_a = sum_b int w Q_ab(w) coth_b(w) dw`. Regions fed
//! by several reservoirs use the averaged occupation `n~_a`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dynamics::resonance_points;
use crate::error::{Error, Result};
use crate::greens::FreqEvaluator;
use crate::model::{NetworkSpec, Region};
use crate::quad::{integrate_vec, integrate_vec_from_zero, panel_breaks, QuadOptions};
use crate::special::{bose, bose_series, gamma as gamma_fn, zeta};
use crate::spectral::{CutoffShape, DensityModel, SpectralDensity};

/// Relative tolerance used for the law verdicts.
pub const LAW_TOL: f64 = 1e-8;

/// Region-level density `I_a(w)`: the single density times the number of reservoirs.
pub fn region_density(region: &Region, w: f64) -> DMatrix<f64> {
    region.density().matrix(w) * region.multiplicity() as f64
}

/// Averaged Bose occupation of a region's reservoirs.
pub fn occupation(region: &Region, w: f64) -> f64 {
    region
        .reservoirs
        .iter()
        .map(|r| bose(w, r.temperature))
        .sum::<f64>()
        / region.multiplicity() as f64
}

/// `Q_ab(w)` in both forms at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSample {
    pub omega: f64,
    /// Off-diagonals from the trace form, diagonal from zero row sums.
    pub q: DMatrix<f64>,
    /// Every entry from `Im tr(P_a V_R G I_b G(-i w))`.
    pub q_im: DMatrix<f64>,
    /// Rounding floor of `q_im`: the Im form extracts `pi I` from a product of
    /// size `|V_R| |G I_b G^+|`, so it cannot resolve anything smaller.
    pub floor: f64,
}

pub fn transfer_at(spec: &NetworkSpec, eval: &FreqEvaluator, w: f64) -> Result<TransferSample> {
    let r = spec.regions().len();
    let g = eval.eval(w)?;
    let g_minus = g.map(|z| z.conj());
    let g_dag = g.adjoint();
    let cplx = |m: &DMatrix<f64>| m.map(|x| Complex64::new(x, 0.0));
    let dens: Vec<DMatrix<Complex64>> = spec
        .regions()
        .iter()
        .map(|reg| cplx(&region_density(reg, w)))
        .collect();
    let mut q = DMatrix::zeros(r, r);
    let mut q_im = DMatrix::zeros(r, r);
    let vr = cplx(eval.vr());
    let vr_norm = eval.vr().amax();
    let k = eval.dim() as f64;
    let mut floor: f64 = 0.0;
    for b in 0..r {
        let h_dag = &g * &dens[b] * &g_dag;
        floor = floor.max(
            64.0 * f64::EPSILON
                * k
                * k
                * vr_norm
                * h_dag.iter().fold(0.0f64, |a, z| a.max(z.norm())),
        );
        let h_conj = &g * &dens[b] * &g_minus;
        let left = &vr * h_conj;
        for (a, reg) in spec.regions().iter().enumerate() {
            if a != b {
                q[(a, b)] = -PI * (&dens[a] * &h_dag).trace().re;
            }
            // tr(P_a X) = sum of X's diagonal over the region's sites
            q_im[(a, b)] = reg.sites.iter().map(|&s| left[(s, s)].im).sum();
        }
    }
    for a in 0..r {
        let off: f64 = (0..r).filter(|&b| b != a).map(|b| q[(a, b)]).sum();
        q[(a, a)] = -off;
    }
    Ok(TransferSample {
        omega: w,
        q,
        q_im,
        floor,
    })
}

/// Sampled heat-transfer matrix with its structural diagnostics.
#[derive(Debug, Clone)]
pub struct HeatTransferMatrix {
    pub samples: Vec<TransferSample>,
}

impl HeatTransferMatrix {
    /// `max |Q_ab - Q_ba|` relative to the largest entry at each frequency.
    pub fn symmetry_residual(&self) -> f64 {
        self.fold(|s| {
            let m = &s.q;
            let scale = scale_of(m);
            (m - m.transpose())
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()))
                / scale
        })
    }

    /// Largest off-diagonal entry relative to the largest entry (must be <= 0 up to rounding).
    pub fn offdiag_max(&self) -> f64 {
        self.fold(|s| {
            let r = s.q.nrows();
            let scale = scale_of(&s.q);
            let mut worst = f64::NEG_INFINITY;
            for a in 0..r {
                for b in 0..r {
                    if a != b {
                        worst = worst.max(s.q[(a, b)] / scale);
                    }
                }
            }
            worst
        })
    }

    /// Row sums of the independently evaluated form, in excess of its
    /// rounding floor, relative to the largest entry.
    pub fn row_sum_residual(&self) -> f64 {
        self.fold(|s| {
            let scale = scale_of(&s.q);
            let r = s.q.nrows() as f64;
            s.q_im
                .row_iter()
                .map(|row| (row.sum().abs() - r * s.floor).max(0.0))
                .fold(0.0, f64::max)
                / scale
        })
    }

    /// Agreement of the two forms in excess of the rounding floor (relative to the largest entry).
    pub fn form_residual(&self) -> f64 {
        self.fold(|s| {
            let scale = scale_of(&s.q);
            (&s.q - &s.q_im)
                .iter()
                .fold(0.0f64, |a, v| a.max((v.abs() - s.floor).max(0.0)))
                / scale
        })
    }

    fn fold<F: Fn(&TransferSample) -> f64>(&self, f: F) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn scale_of(m: &DMatrix<f64>) -> f64 {
    let s = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

pub fn heat_transfer_matrix(
    spec: &NetworkSpec,
    eval: &FreqEvaluator,
    omegas: &[f64],
) -> Result<HeatTransferMatrix> {
    let samples = omegas
        .iter()
        .map(|&w| transfer_at(spec, eval, w))
        .collect::<Result<Vec<_>>>()?;
    Ok(HeatTransferMatrix { samples })
}

/// Law verdicts; `None` when the premise does not apply (e.g. no region is
/// hotter than all others at every frequency).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct Verdicts {
    pub equilibrium: Option<bool>,
    pub clausius: Option<bool>,
    pub coldest_absorbs: Option<bool>,
    pub refrigerator_possible: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HeatReport {
    pub region_ids: Vec<String>,
    /// Reservoir temperatures per region.
    pub temperatures: Vec<Vec<f64>>,
    /// Currents from occupation differences (positive: heat enters the network).
    pub qdot: Vec<f64>,
    /// Currents from the coth form.
    pub qdot_coth: Vec<f64>,
    /// `sum_a Q_a / T_a` (single-temperature regions, `T > 0` only).
    pub sdot: Option<f64>,
    /// `-sum_{a != b} int w Q_ab (n_a - n_b)(1/T_a - 1/T_b) dw`.
    pub sdot_integral: Option<f64>,
    pub conservation_residual: f64,
    /// Gross flux scale `max_a sum_b int w |Q_ab| coth_b dw` used for relative tolerances.
    pub scale: f64,
    pub hottest: Option<usize>,
    pub coldest: Option<usize>,
    pub verdicts: Verdicts,
    pub notes: Vec<String>,
}

impl HeatReport {
    /// Largest discrepancy between the two current formulas, relative to `scale`.
    pub fn form_discrepancy(&self) -> f64 {
        self.qdot
            .iter()
            .zip(&self.qdot_coth)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / self.scale.max(f64::MIN_POSITIVE)
    }
}

/// Frequencies worth splitting the integration domain at.
pub fn frequency_breaks(spec: &NetworkSpec, eval: &FreqEvaluator) -> Result<Vec<f64>> {
    let upper = spec.density_upper();
    let mut pts = resonance_points(eval.vr());
    for d in spec.densities() {
        pts.push(d.cutoff_scale());
    }
    for reg in spec.regions() {
        for res in &reg.reservoirs {
            for m in [1.0, 3.0, 10.0, 30.0, 60.0] {
                pts.push(m * res.temperature);
            }
        }
    }
    // local maxima of ||G_hat|| on a coarse scan locate narrow resonances
    let n = 400;
    let norms: Vec<(f64, f64)> = (1..=n)
        .map(|i| {
            let w = upper * i as f64 / (n + 1) as f64;
            eval.eval(w).map(|g| (w, g.norm()))
        })
        .collect::<Result<_>>()?;
    for i in 1..norms.len() - 1 {
        if norms[i].1 > norms[i - 1].1 && norms[i].1 > norms[i + 1].1 {
            pts.push(norms[i].0);
            let dw = upper / (n + 1) as f64;
            pts.push(norms[i].0 - dw);
            pts.push(norms[i].0 + dw);
        }
    }
    pts.retain(|&w| w > 0.0 && w < upper);
    Ok(pts)
}

/// Index of the region whose occupation dominates (`hot = true`) or is
/// dominated by (`hot = false`) every other region at every frequency, if any.
fn extreme_region(spec: &NetworkSpec, hot: bool, grid: &[f64]) -> Option<usize> {
    let regs = spec.regions();
    (0..regs.len()).find(|&a| {
        (0..regs.len()).filter(|&b| b != a).all(|b| {
            grid.iter().all(|&w| {
                let (na, nb) = (occupation(&regs[a], w), occupation(&regs[b], w));
                if hot {
                    na >= nb
                } else {
                    na <= nb
                }
            })
        })
    })
}

/// Stationary currents, entropy flow and verdicts.
pub fn heat_report(
    spec: &NetworkSpec,
    eval: &FreqEvaluator,
    opts: &QuadOptions,
) -> Result<HeatReport> {
    let regs = spec.regions();
    let r = regs.len();
    let upper = spec.density_upper();
    let breaks = panel_breaks(0.0, upper, f64::INFINITY, &frequency_breaks(spec, eval)?);
    let single_t: Vec<Option<f64>> = regs.iter().map(|g| g.common_temperature()).collect();
    let any_zero = single_t.iter().any(|t| *t == Some(0.0));
    let entropy_ok = single_t.iter().all(|t| t.map_or(false, |t| t > 0.0));
    // layout: [Eq. occupation form (r), coth form (r), gross scale (r), entropy integral]
    let dim = 3 * r + 1;
    let mut err = None;
    let integral = integrate_vec(
        dim,
        |w, out| {
            out.iter_mut().for_each(|x| *x = 0.0);
            if w <= 0.0 {
                return;
            }
            let s = match transfer_at(spec, eval, w) {
                Ok(s) => s,
                Err(e) => {
                    err.get_or_insert(e);
                    return;
                }
            };
            let occ: Vec<f64> = regs.iter().map(|g| occupation(g, w)).collect();
            for a in 0..r {
                for b in 0..r {
                    let cb = 1.0 + 2.0 * occ[b];
                    out[r + a] += w * s.q_im[(a, b)] * cb;
                    out[2 * r + a] += w * s.q[(a, b)].abs() * cb;
                    if a == b {
                        continue;
                    }
                    out[a] += -2.0 * w * s.q[(a, b)] * (occ[a] - occ[b]);
                    if entropy_ok {
                        let (ta, tb) = (single_t[a].unwrap(), single_t[b].unwrap());
                        out[3 * r] -= w * s.q[(a, b)] * (occ[a] - occ[b]) * (1.0 / ta - 1.0 / tb);
                    }
                }
            }
        },
        &breaks,
        opts,
    )?;
    if let Some(e) = err {
        return Err(e);
    }
    let v = &integral.value;
    let qdot: Vec<f64> = v[..r].to_vec();
    let qdot_coth: Vec<f64> = v[r..2 * r].to_vec();
    let scale = v[2 * r..3 * r].iter().copied().fold(0.0, f64::max);
    let mut notes = Vec::new();
    let sdot = if entropy_ok {
        Some(
            qdot.iter()
                .zip(&single_t)
                .map(|(q, t)| q / t.unwrap())
                .sum(),
        )
    } else {
        if any_zero {
            notes.push(
                Error::ZeroTemperature("entropy flow Q/T undefined for a region at T = 0".into())
                    .to_string(),
            );
        } else {
            notes.push(
                "entropy flow requires one temperature per region; skipped for multi-bath regions"
                    .into(),
            );
        }
        None
    };
    let sdot_integral = entropy_ok.then(|| v[3 * r]);

    let w_lo = regs
        .iter()
        .flat_map(|g| g.reservoirs.iter().map(|b| b.temperature))
        .filter(|&t| t > 0.0)
        .fold(upper, f64::min)
        * 1e-3;
    let grid: Vec<f64> = (0..200)
        .map(|i| w_lo * (upper.max(w_lo * 10.0) / w_lo).powf(i as f64 / 199.0))
        .collect();
    let hottest = extreme_region(spec, true, &grid);
    let coldest = extreme_region(spec, false, &grid);
    let tol = LAW_TOL * scale.max(f64::MIN_POSITIVE);
    let all_temps: Vec<f64> = regs
        .iter()
        .flat_map(|g| g.reservoirs.iter().map(|b| b.temperature))
        .collect();
    let equal = all_temps.windows(2).all(|w| w[0] == w[1]);
    let coldest_absorbs = coldest.map(|c| qdot[c] <= tol);
    let verdicts = Verdicts {
        equilibrium: equal.then(|| qdot.iter().all(|q| q.abs() <= tol)),
        clausius: hottest.map(|h| qdot[h] >= -tol),
        coldest_absorbs,
        refrigerator_possible: coldest_absorbs.map(|b| !b),
    };
    Ok(HeatReport {
        region_ids: regs.iter().map(|g| g.id.clone()).collect(),
        temperatures: regs
            .iter()
            .map(|g| g.reservoirs.iter().map(|b| b.temperature).collect())
            .collect(),
        conservation_residual: qdot.iter().sum::<f64>().abs(),
        qdot,
        qdot_coth,
        sdot,
        sdot_integral,
        scale,
        hottest,
        coldest,
        verdicts,
        notes,
    })
}

/// Single-site power-law parameters `(site, gamma, p)` of a region.
fn power_law_site(region: &Region) -> Result<(usize, f64, f64)> {
    let single = region.multiplicity() == 1 && region.sites.len() == 1;
    match region.density().model() {
        DensityModel::PowerLaw {
            coupling,
            exponent,
            sites,
            ..
        } if single && sites.len() == 1 => Ok((sites[0], *coupling, *exponent)),
        _ => Err(Error::Unsupported(format!(
            "region `{}`: low-temperature formulas need one reservoir with a single-site power-law density",
            region.id
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LowTemperatureCurrent {
    pub region: String,
    /// Exponential-sum form with the full `|G_hat(i w)_jk|^2`.
    pub series_form: f64,
    /// Closed form with `G_hat(0)`.
    pub closed_form: f64,
    pub ratio: f64,
    pub advisories: Vec<String>,
}

/// Low-temperature current into region `id` from all other (single-site
/// power-law) regions.
pub fn low_t_current(
    spec: &NetworkSpec,
    eval: &FreqEvaluator,
    id: &str,
    opts: &QuadOptions,
) -> Result<LowTemperatureCurrent> {
    let a = spec.region_index(id)?;
    let regs = spec.regions();
    let (j, gj, pj) = power_law_site(&regs[a])?;
    let tj = regs[a].reservoirs[0].temperature;
    let g0 = eval.eval(0.0)?;
    let w_min = resonance_points(eval.vr())
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let mut series = 0.0;
    let mut closed = 0.0;
    let mut advisories = Vec::new();
    for (b, reg) in regs.iter().enumerate() {
        if b == a {
            continue;
        }
        let (k, gk, pk) = power_law_site(reg)?;
        let tk = reg.reservoirs[0].temperature;
        let s = 2.0 + pj + pk;
        let tbar = 0.5 * (tj + tk);
        if tbar > 0.1 * w_min {
            advisories.push(format!(
                "regime: mean temperature {tbar:.3e} exceeds 10% of the smallest resonance {w_min:.3e}"
            ));
        }
        let alpha = 2.0 * PI * g0[(j, k)].norm_sqr() * gamma_fn(s) * zeta(s);
        closed += gj * gk * tbar.powf(s - 1.0) * (tj - tk) * s * alpha;

        let tmax = tj.max(tk);
        let upper = spec.density_upper();
        let pts: Vec<f64> = [1.0, 3.0, 10.0, 30.0, 60.0, 120.0]
            .iter()
            .map(|m| m * tmax)
            .collect();
        let hi = upper.min(200.0 * tmax);
        let breaks = panel_breaks(0.0, hi, f64::INFINITY, &pts);
        let mut err = None;
        let r = integrate_vec_from_zero(
            1,
            |w, out| {
                let g = match eval.eval(w) {
                    Ok(g) => g,
                    Err(e) => {
                        err.get_or_insert(e);
                        out[0] = 0.0;
                        return;
                    }
                };
                let occ = bose_series(w, tj, 1e-12) - bose_series(w, tk, 1e-12);
                out[0] = w.powf(s - 1.0) * g[(j, k)].norm_sqr() * occ;
            },
            &breaks,
            s - 2.0,
            opts,
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        series += 2.0 * PI * gj * gk * r.value[0];
    }
    Ok(LowTemperatureCurrent {
        region: id.to_string(),
        series_form: series,
        closed_form: closed,
        ratio: if closed != 0.0 {
            series / closed
        } else {
            f64::NAN
        },
        advisories,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScalingFit {
    pub tbar: Vec<f64>,
    /// Entropy flow `Q_A / T_A` per mean temperature.
    pub sdot: Vec<f64>,
    pub slope: f64,
    /// Standard error of the fitted slope.
    pub slope_stderr: f64,
    /// Largest deviation of a log-log point from the fitted line.
    pub max_residual: f64,
    pub expected_slope: f64,
    /// Closed-form over occupation-form current at the lowest mean temperature.
    pub closed_form_ratio: f64,
}

/// Two-site network with equal single-site power-law baths, built so that its
/// renormalized potential equals `vr`.
pub fn two_region_power_law(
    vr: &DMatrix<f64>,
    coupling: f64,
    exponent: f64,
    cutoff: f64,
    opts: &QuadOptions,
) -> Result<NetworkSpec> {
    if vr.nrows() != 2 {
        return Err(Error::Structural(
            "two-region scan needs a 2 x 2 potential".into(),
        ));
    }
    let dens = |s: usize| {
        SpectralDensity::power_law(2, vec![s], coupling, exponent, cutoff, CutoffShape::Sharp)
    };
    let (da, db) = (dens(0)?, dens(1)?);
    let g0 = crate::spectral::gamma_zero(&[&da, &db], opts)?;
    let v = vr + g0 * 2.0;
    let mk = |id: &str, s: usize, d: SpectralDensity| -> Result<Region> {
        Ok(Region::new(
            id,
            vec![s],
            vec![crate::model::Reservoir::new(1.0, d)?],
        ))
    };
    NetworkSpec::new(v, vec![mk("A", 0, da)?, mk("B", 1, db)?])
}

/// Fit `|Q_A / T_A|` against the mean temperature on a log-log scale with a
/// fixed temperature difference `dt`.
pub fn third_law_scan(
    base: &NetworkSpec,
    tbars: &[f64],
    dt: f64,
    opts: &QuadOptions,
) -> Result<ScalingFit> {
    if base.regions().len() != 2 {
        return Err(Error::Structural(
            "third-law scan needs exactly two regions".into(),
        ));
    }
    if tbars.len() < 3 || tbars.iter().any(|&t| t <= dt / 2.0) {
        return Err(Error::config(
            "tbar",
            "need >= 3 mean temperatures, each above dt / 2",
        ));
    }
    let (_, _, p) = power_law_site(&base.regions()[0])?;
    let (_, _, pb) = power_law_site(&base.regions()[1])?;
    if (p - pb).abs() > 1e-12 {
        return Err(Error::Unsupported(
            "third-law scan assumes equal exponents".into(),
        ));
    }
    let eval = FreqEvaluator::new(base, opts)?;
    let lowest = (0..tbars.len())
        .min_by(|&i, &j| tbars[i].total_cmp(&tbars[j]))
        .unwrap_or(0);
    let mut sdot = Vec::with_capacity(tbars.len());
    let mut ratio = f64::NAN;
    for (i, &tb) in tbars.iter().enumerate() {
        let (ta, tbb) = (tb + 0.5 * dt, tb - 0.5 * dt);
        let spec = base.with_temperatures(&[ta, tbb])?;
        let rep = heat_report(&spec, &eval, opts)?;
        sdot.push(rep.qdot[0] / ta);
        if i == lowest {
            let lt = low_t_current(&spec, &eval, &spec.regions()[0].id, opts)?;
            ratio = lt.closed_form / rep.qdot[0];
        }
    }
    let xs: Vec<f64> = tbars.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = sdot.iter().map(|s| s.abs().ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let res: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - (icpt + slope * x))
        .collect();
    let ssr: f64 = res.iter().map(|r| r * r).sum();
    let slope_stderr = if xs.len() > 2 {
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(ScalingFit {
        tbar: tbars.to_vec(),
        sdot,
        slope,
        slope_stderr,
        max_residual: res.iter().fold(0.0, |a, r| a.max(r.abs())),
        expected_slope: 2.0 * p,
        closed_form_ratio: ratio,
    })
}
