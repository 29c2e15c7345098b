//! One runner per experiment kind. Each writes its artifacts and returns a
//! JSON summary for the manifest.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{DensityConfig, ExperimentConfig, ExperimentKind, InitialState};
use super::output::{matrix_columns, row_major, OutputDir};
use crate::dynamics::{
    covariance_at, energy_flow, evolve_state, first_stiff_index, master_coefficients,
    noise_on_grid, propagate_with_generator, propagator_at, sigma_series, GaussianState,
    SigmaSeries,
};
use crate::ensemble::{random_network, random_temperatures};
use crate::error::{Error, Result};
use crate::greens::{
    decay_check, solve_g_time, FreqEvaluator, GreensFunction, DEFAULT_DECAY_RATE,
    DEFAULT_TAIL_RATIO,
};
use crate::linalg::max_abs;
use crate::model::{validate, NetworkSpec};
use crate::oracle::{oracle_heat_current, FullSystem};
use crate::spectral::{fdt_residual, CutoffShape, SpectralDensity};
use crate::thermo::{heat_report, heat_transfer_matrix, third_law_scan, two_region_power_law};

/// Default FDT self-test threshold.
pub const FDT_TOL: f64 = 1e-8;

/// What a run produced besides its files.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Value,
    /// `false` when a self-check failed (reported through the exit status).
    pub passed: bool,
}

pub fn exercises(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::Dynamics => &[
            "dissipation and noise kernels",
            "integro-differential equation for G(t)",
            "propagator blocks Phi(t) and Sigma(t)",
            "Gaussian state evolution",
        ],
        ExperimentKind::MasterCoefficients => &[
            "integro-differential equation for G(t)",
            "noise moments sigma^(n,m)(t)",
            "time-local master-equation coefficients V_R(t), Gamma(t), D(t), F(t)",
            "second-moment generator of the master equation",
        ],
        ExperimentKind::HeatReport => &[
            "Laplace-domain resolvent G_hat(i w)",
            "heat-transfer matrix Q_ab(w)",
            "stationary currents, coth and occupation-difference forms",
            "entropy flow",
            "equilibrium, Clausius and refrigerator verdicts",
        ],
        ExperimentKind::NogoScan => &[
            "heat-transfer matrix Q_ab(w)",
            "occupation-difference current with averaged multi-bath occupations",
            "refrigerator no-go",
        ],
        ExperimentKind::ThirdLaw => &[
            "low-temperature current with G_hat(0)",
            "entropy flow scaling with mean temperature",
        ],
        ExperimentKind::OracleCompare => &[
            "propagator blocks Phi(t) and Sigma(t)",
            "finite-bath exact evolution",
            "bath energy flow",
        ],
        ExperimentKind::FdtSelftest => {
            &["fluctuation-dissipation identity Re 2w gamma_hat(i w) = pi I(w)"]
        }
    }
}

pub fn run(cfg: &ExperimentConfig, base: &Path, out: &mut OutputDir) -> Result<Outcome> {
    match cfg.kind {
        ExperimentKind::Dynamics => dynamics(cfg, base, out),
        ExperimentKind::MasterCoefficients => coefficients(cfg, base, out),
        ExperimentKind::HeatReport => heat(cfg, base, out),
        ExperimentKind::NogoScan => nogo(cfg, out),
        ExperimentKind::ThirdLaw => third_law(cfg, out),
        ExperimentKind::OracleCompare => oracle(cfg, base, out),
        ExperimentKind::FdtSelftest => fdt(cfg, out),
    }
}

pub fn initial_state(cfg: &ExperimentConfig, spec: &NetworkSpec) -> Result<GaussianState> {
    let k = spec.dim();
    match &cfg.dynamics.initial {
        InitialState::Coherent { x, p } => {
            let fill = |v: &Vec<f64>, key: &str| -> Result<Vec<f64>> {
                match v.len() {
                    0 => Ok(vec![0.0; k]),
                    n if n == k => Ok(v.clone()),
                    n => Err(Error::config(
                        key,
                        format!("{n} entries for {k} coordinates"),
                    )),
                }
            };
            Ok(GaussianState::coherent(
                &fill(x, "dynamics.initial.x")?,
                &fill(p, "dynamics.initial.p")?,
            ))
        }
        InitialState::Thermal { temperature } => {
            if !(*temperature >= 0.0) {
                return Err(Error::config(
                    "dynamics.initial.temperature",
                    "must be non-negative",
                ));
            }
            GaussianState::thermal_network(
                &spec.renormalized_potential(&cfg.numerics.quad())?,
                *temperature,
            )
        }
        InitialState::Gaussian { mean, covariance } => {
            if mean.len() != 2 * k
                || covariance.len() != 2 * k
                || covariance.iter().any(|r| r.len() != 2 * k)
            {
                return Err(Error::config(
                    "dynamics.initial",
                    format!("need a mean of length {} and a {0} x {0} covariance", 2 * k),
                ));
            }
            let cov = DMatrix::from_fn(2 * k, 2 * k, |i, j| covariance[i][j]);
            GaussianState::new(DVector::from_vec(mean.clone()), cov)
        }
    }
}

struct Solved {
    spec: NetworkSpec,
    gf: GreensFunction,
    sig: SigmaSeries,
}

fn solve(cfg: &ExperimentConfig, base: &Path, t_max: f64) -> Result<Solved> {
    let spec = cfg.network(base)?;
    let q = cfg.numerics.quad();
    let gf = solve_g_time(&spec, t_max, cfg.numerics.h, &q)?;
    let nu = noise_on_grid(&spec, &gf, &q)?;
    let sig = sigma_series(&gf, &nu)?;
    Ok(Solved { spec, gf, sig })
}

fn strided(len: usize, stride: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if idx.last() != Some(&(len - 1)) {
        idx.push(len - 1);
    }
    idx
}

fn decay_json(gf: &GreensFunction) -> (bool, Value) {
    match decay_check(gf, DEFAULT_DECAY_RATE, DEFAULT_TAIL_RATIO) {
        Ok(d) => (d.decays, serde_json::to_value(d).unwrap_or(Value::Null)),
        Err(e) => (false, json!({ "error": e.to_string() })),
    }
}

fn dynamics(cfg: &ExperimentConfig, base: &Path, out: &mut OutputDir) -> Result<Outcome> {
    let Solved { spec, gf, sig } = solve(cfg, base, cfg.numerics.t_max)?;
    let report = validate(&spec, &cfg.numerics.quad())?;
    let state0 = initial_state(cfg, &spec)?;
    let k = spec.dim();
    let idx = strided(gf.len(), cfg.numerics.output_stride);

    let mut header = vec!["t".to_string()];
    header.extend(matrix_columns("g", k));
    header.extend(matrix_columns("gdot", k));
    header.extend(matrix_columns("gddot", k));
    let rows: Vec<Vec<f64>> = idx
        .iter()
        .map(|&n| {
            let mut r = vec![gf.time(n)];
            for s in [&gf.g, &gf.gdot, &gf.gddot] {
                r.extend(row_major(&s.get(n)));
            }
            r
        })
        .collect();
    out.csv("greens.csv", &header, &rows)?;

    let mut header = vec!["t".to_string()];
    header.extend((0..k).map(|i| format!("x_{i}")));
    header.extend((0..k).map(|i| format!("p_{i}")));
    header.extend(matrix_columns("cov", 2 * k));
    header.push("uncertainty_margin".into());
    let mut min_margin = f64::INFINITY;
    let mut last = state0.clone();
    let rows: Vec<Vec<f64>> = idx
        .iter()
        .map(|&n| {
            let st = evolve_state(&state0, &propagator_at(&gf, &sig, n));
            let margin = st.uncertainty_margin();
            min_margin = min_margin.min(margin);
            let mut r = vec![gf.time(n)];
            r.extend(st.mean.iter());
            r.extend(row_major(&st.cov));
            r.push(margin);
            last = st;
            r
        })
        .collect();
    out.csv("state.csv", &header, &rows)?;

    let (decays, decay) = decay_json(&gf);
    let summary = json!({
        "dimension": k,
        "steps": gf.len(),
        "h": gf.h,
        "t_max": gf.t_max(),
        "validation": report,
        "solver_residual": gf.residual(),
        "decay": decay,
        "stationary_regime": decays,
        "min_uncertainty_margin": min_margin,
        "final_mean": last.mean.iter().copied().collect::<Vec<_>>(),
        "final_covariance": rows_of(&last.cov),
        "advisories": gf.advisories,
    });
    out.json("dynamics.json", &summary)?;
    Ok(Outcome {
        passed: true,
        summary: json!({ "min_uncertainty_margin": min_margin, "stationary_regime": decays }),
    })
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn coefficients(cfg: &ExperimentConfig, base: &Path, out: &mut OutputDir) -> Result<Outcome> {
    let Solved { spec, gf, sig } = solve(cfg, base, cfg.numerics.t_max)?;
    let coef = master_coefficients(&gf, &sig)?;
    let k = spec.dim();
    let mut header = vec!["t".to_string(), "masked".to_string()];
    for p in ["v", "gamma", "d", "f"] {
        header.extend(matrix_columns(p, k));
    }
    let rows: Vec<Vec<f64>> = strided(coef.len(), cfg.numerics.output_stride)
        .into_iter()
        .map(|n| {
            let mut r = vec![gf.time(n), if coef.is_masked(n) { 1.0 } else { 0.0 }];
            for m in [&coef.v[n], &coef.gamma[n], &coef.d[n], &coef.f[n]] {
                r.extend(row_major(m));
            }
            r
        })
        .collect();
    out.csv("coefficients.csv", &header, &rows)?;

    // fidelity: second moments from the generator vs the exact solution
    let state0 = initial_state(cfg, &spec)?;
    let mut gen = propagate_with_generator(&coef, &state0.cov);
    let stiff = first_stiff_index(&coef);
    if let Some(n) = stiff {
        gen.truncate(n);
    }
    let fidelity = gen
        .iter()
        .enumerate()
        .map(|(n, c)| {
            let exact = covariance_at(&gf, &sig, &state0.cov, n);
            max_abs(&(c - &exact)) / max_abs(&exact).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max);

    let (decays, decay) = decay_json(&gf);
    let last = (0..coef.len()).rev().find(|&n| !coef.is_masked(n));
    let flow = match last {
        Some(n) => match energy_flow(
            decays,
            &gf.vr,
            &coef.gamma[n],
            &coef.d[n],
            &sig.s01.get(n),
            &sig.s11.get(n),
        ) {
            Ok(f) => {
                json!({ "t": gf.time(n), "diffusive": f.diffusive, "stationary": f.stationary, "difference": f.difference() })
            }
            Err(e) => json!({ "error": e.to_string() }),
        },
        None => Value::Null,
    };
    let masked_times: Vec<f64> = coef.masked.iter().map(|&n| gf.time(n)).collect();
    let summary = json!({
        "dimension": k,
        "steps": coef.len(),
        "h": gf.h,
        "masked_times": masked_times,
        "generator_steps": gen.len(),
        "generator_stiff_from": stiff.map(|n| gf.time(n)),
        "generator_max_rel_deviation": fidelity,
        "decay": decay,
        "energy_flow": flow,
    });
    out.json("coefficients.json", &summary)?;
    Ok(Outcome {
        passed: true,
        summary: json!({
            "masked_points": coef.masked.len(),
            "generator_max_rel_deviation": fidelity,
            "generator_stiff_from": stiff.map(|n| gf.time(n)),
        }),
    })
}

fn omega_grid(cfg: &ExperimentConfig, spec: &NetworkSpec) -> Vec<f64> {
    let top = cfg
        .numerics
        .omega_max
        .unwrap_or_else(|| spec.density_upper().min(10.0 * spec.cutoff_scale()));
    let n = cfg.numerics.omega_points;
    (1..=n).map(|i| top * i as f64 / n as f64).collect()
}

fn heat(cfg: &ExperimentConfig, base: &Path, out: &mut OutputDir) -> Result<Outcome> {
    let spec = cfg.network(base)?;
    if spec.regions().len() < 2 {
        return Err(Error::config(
            "network.regions",
            "a heat report needs at least two regions",
        ));
    }
    let q = cfg.numerics.quad();
    let eval = FreqEvaluator::new(&spec, &q)?;
    let report = heat_report(&spec, &eval, &q)?;
    let grid = omega_grid(cfg, &spec);
    // the grid may end beyond a sharp cutoff; sampling there is still defined
    let htm = heat_transfer_matrix(&spec, &eval, &grid)?;
    let r = spec.regions().len();
    let mut header = vec!["omega".to_string()];
    header.extend(matrix_columns("q", r));
    header.extend(matrix_columns("q_im", r));
    let rows: Vec<Vec<f64>> = htm
        .samples
        .iter()
        .map(|s| {
            let mut row = vec![s.omega];
            row.extend(row_major(&s.q));
            row.extend(row_major(&s.q_im));
            row
        })
        .collect();
    out.csv("transfer_matrix.csv", &header, &rows)?;
    let structure = json!({
        "symmetry_residual": htm.symmetry_residual(),
        "offdiag_max": htm.offdiag_max(),
        "row_sum_residual": htm.row_sum_residual(),
        "form_residual": htm.form_residual(),
    });
    let summary = json!({
        "report": report,
        "form_discrepancy": report.form_discrepancy(),
        "transfer_matrix": structure,
    });
    out.json("heat_report.json", &summary)?;
    Ok(Outcome {
        passed: true,
        summary: json!({
            "qdot": report.qdot,
            "verdicts": report.verdicts,
            "form_discrepancy": report.form_discrepancy(),
        }),
    })
}

#[derive(Debug, Serialize)]
struct Trial {
    trial: usize,
    regions: usize,
    dimension: usize,
    multi_bath: bool,
    temperatures: Vec<Vec<f64>>,
    qdot: Vec<f64>,
    scale: f64,
    coldest: Option<usize>,
    hottest: Option<usize>,
    temperature_redraws: usize,
    verdicts: crate::thermo::Verdicts,
}

fn nogo(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    let n = cfg.nogo.trials;
    if n == 0 {
        return Err(Error::config("nogo.trials", "must be at least 1"));
    }
    let q = cfg.numerics.quad();
    let ens = &cfg.nogo.ensemble;
    // one independent stream per trial keeps results identical under any thread count
    let trials: Vec<Trial> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Trial> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let base = random_network(&mut rng, ens, &q)?;
            let mut redraws = 0;
            loop {
                let spec = random_temperatures(&mut rng, &base, ens.temperature_range)?;
                let eval = FreqEvaluator::new(&spec, &q)?;
                let rep = heat_report(&spec, &eval, &q)?;
                if rep.coldest.is_none() && redraws < 50 {
                    redraws += 1;
                    continue;
                }
                return Ok(Trial {
                    trial: i,
                    regions: spec.regions().len(),
                    dimension: spec.dim(),
                    multi_bath: spec.regions().iter().any(|g| g.multiplicity() > 1),
                    temperatures: rep.temperatures.clone(),
                    qdot: rep.qdot.clone(),
                    scale: rep.scale,
                    coldest: rep.coldest,
                    hottest: rep.hottest,
                    temperature_redraws: redraws,
                    verdicts: rep.verdicts,
                });
            }
        })
        .collect::<Result<_>>()?;
    let absorbing = trials
        .iter()
        .filter(|t| t.verdicts.coldest_absorbs == Some(true))
        .count();
    let undefined = trials.iter().filter(|t| t.coldest.is_none()).count();
    let all = absorbing == n;
    let rows: Vec<Vec<f64>> = trials
        .iter()
        .map(|t| {
            let cq = t.coldest.map_or(f64::NAN, |c| t.qdot[c] / t.scale);
            vec![
                t.trial as f64,
                t.regions as f64,
                if t.multi_bath { 1.0 } else { 0.0 },
                cq,
                match t.verdicts.coldest_absorbs {
                    Some(true) => 1.0,
                    Some(false) => 0.0,
                    None => f64::NAN,
                },
            ]
        })
        .collect();
    let header = [
        "trial",
        "regions",
        "multi_bath",
        "coldest_qdot_over_scale",
        "coldest_absorbs",
    ]
    .map(String::from)
    .to_vec();
    out.csv("nogo_trials.csv", &header, &rows)?;
    let summary = json!({
        "trials": n,
        "coldest_absorbs": absorbing,
        "coldest_undefined": undefined,
        "all_coldest_absorb": all,
        "results": trials,
    });
    out.json("nogo_scan.json", &summary)?;
    Ok(Outcome {
        passed: true,
        summary: json!({ "trials": n, "coldest_absorbs": absorbing, "coldest_undefined": undefined }),
    })
}

fn third_law(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    let tl = &cfg.third_law;
    let vr = cfg.third_law_potential()?;
    let w_min = crate::linalg::sym_eigenvalues(&vr)[0];
    if w_min <= 0.0 {
        return Err(Error::config(
            "third_law.renormalized_potential",
            "must be positive definite",
        ));
    }
    let w_min = w_min.sqrt();
    let hi = tl.tbar_max.unwrap_or(0.01 * w_min);
    let lo = tl.tbar_min.unwrap_or(0.1 * hi);
    if !(lo > 0.0 && hi > lo) || tl.points < 3 {
        return Err(Error::config(
            "third_law.tbar_min",
            "need 0 < tbar_min < tbar_max and at least 3 points",
        ));
    }
    if tl.exponents.is_empty() {
        return Err(Error::config(
            "third_law.exponents",
            "need at least one exponent",
        ));
    }
    let tbars: Vec<f64> = (0..tl.points)
        .map(|i| lo * (hi / lo).powf(i as f64 / (tl.points - 1) as f64))
        .collect();
    let dt = tl.dt_fraction * lo;
    let q = cfg.numerics.quad();
    let fits = tl
        .exponents
        .par_iter()
        .map(|&p| {
            let base = two_region_power_law(&vr, tl.coupling, p, tl.cutoff, &q)?;
            third_law_scan(&base, &tbars, dt, &q)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (p, f) in tl.exponents.iter().zip(&fits) {
        for (t, s) in f.tbar.iter().zip(&f.sdot) {
            rows.push(vec![*p, *t, *s]);
        }
    }
    out.csv(
        "third_law.csv",
        &["exponent", "tbar", "sdot"].map(String::from),
        &rows,
    )?;
    let summary = json!({
        "dt": dt,
        "lowest_resonance": w_min,
        "fits": tl.exponents.iter().zip(&fits).map(|(p, f)| json!({ "exponent": p, "fit": f })).collect::<Vec<_>>(),
    });
    out.json("third_law.json", &summary)?;
    let brief: Vec<Value> = tl
        .exponents
        .iter()
        .zip(&fits)
        .map(|(p, f)| json!({ "exponent": p, "slope": f.slope, "expected_slope": f.expected_slope, "closed_form_ratio": f.closed_form_ratio }))
        .collect();
    Ok(Outcome {
        passed: true,
        summary: json!({ "fits": brief }),
    })
}

pub fn default_oracle_upper(spec: &NetworkSpec) -> f64 {
    let sharp = spec.densities().iter().all(|d| {
        matches!(
            d.model(),
            crate::spectral::DensityModel::PowerLaw {
                shape: CutoffShape::Sharp,
                ..
            }
        )
    });
    if sharp {
        spec.density_upper()
    } else {
        (12.0 * spec.cutoff_scale()).min(spec.density_upper())
    }
}

fn oracle(cfg: &ExperimentConfig, base: &Path, out: &mut OutputDir) -> Result<Outcome> {
    let oc = &cfg.oracle;
    if oc.modes.is_empty() || oc.stride == 0 {
        return Err(Error::config(
            "oracle.modes",
            "need at least one mode count and a positive stride",
        ));
    }
    let spec = cfg.network(base)?;
    if spec.regions().is_empty() {
        return Err(Error::config(
            "network.regions",
            "the oracle needs at least one reservoir",
        ));
    }
    let upper = oc.upper.unwrap_or_else(|| default_oracle_upper(&spec));
    let systems = oc
        .modes
        .par_iter()
        .map(|&m| FullSystem::new(&spec, m, upper))
        .collect::<Result<Vec<_>>>()?;
    let t_end = systems.iter().map(|s| s.window()).fold(0.0, f64::max);
    let Solved { gf, sig, .. } = solve(cfg, base, t_end)?;
    let state0 = initial_state(cfg, &spec)?;
    let q = cfg.numerics.quad();
    let stationary = if oc.heat_current && spec.regions().len() >= 2 {
        let eval = FreqEvaluator::new(&spec, &q)?;
        Some(heat_report(&spec, &eval, &q)?.qdot)
    } else {
        None
    };

    let results = systems
        .par_iter()
        .zip(oc.modes.par_iter())
        .map(|(full, &m)| -> Result<(Value, Vec<Vec<f64>>)> {
            let window = full.window();
            let idx: Vec<usize> = (0..gf.len())
                .step_by(oc.stride)
                .filter(|&n| gf.time(n) <= window)
                .collect();
            let times: Vec<f64> = idx.iter().map(|&n| gf.time(n)).collect();
            let exact = full.reduced_covariance(&state0.cov, &times)?;
            let mut rows = Vec::with_capacity(idx.len());
            let mut worst: f64 = 0.0;
            for (&n, e) in idx.iter().zip(&exact) {
                let c = covariance_at(&gf, &sig, &state0.cov, n);
                let gap = max_abs(&(&c - e)) / max_abs(e).max(f64::MIN_POSITIVE);
                worst = worst.max(gap);
                rows.push(vec![m as f64, gf.time(n), gap]);
            }
            let heat = if oc.heat_current {
                match oracle_heat_current(
                    full,
                    &state0.cov,
                    0.5 * window,
                    window,
                    oc.heat_samples,
                    oc.noise_limit,
                ) {
                    Ok(h) => json!({ "qdot": h.qdot, "spread": h.spread }),
                    Err(e) => json!({ "error": e.to_string() }),
                }
            } else {
                Value::Null
            };
            Ok((
                json!({
                    "modes": m,
                    "coordinates": full.total_coordinates(),
                    "recurrence_time": full.recurrence_time(),
                    "window": window,
                    "max_rel_gap": worst,
                    "heat_current": heat,
                }),
                rows,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<f64>> = results.iter().flat_map(|(_, r)| r.clone()).collect();
    out.csv(
        "oracle_compare.csv",
        &["modes", "t", "rel_gap"].map(String::from),
        &rows,
    )?;
    let ladder: Vec<Value> = results.into_iter().map(|(v, _)| v).collect();
    let gaps: Vec<f64> = ladder
        .iter()
        .map(|v| v["max_rel_gap"].as_f64().unwrap_or(f64::NAN))
        .collect();
    let mut order: Vec<usize> = (0..oc.modes.len()).collect();
    order.sort_by_key(|&i| oc.modes[i]);
    let improves = order.windows(2).all(|w| gaps[w[1]] <= gaps[w[0]]);
    let summary = json!({
        "discretization_upper": upper,
        "h": gf.h,
        "ladder": ladder,
        "gap_decreases_with_modes": improves,
        "stationary_qdot": stationary,
    });
    out.json("oracle_compare.json", &summary)?;
    Ok(Outcome {
        passed: true,
        summary: json!({ "max_rel_gap": gaps, "gap_decreases_with_modes": improves }),
    })
}

fn fdt(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    let fc = &cfg.fdt;
    if fc.grid_points < 2 || fc.densities.is_empty() {
        return Err(Error::config(
            "fdt.grid_points",
            "need at least 2 points and one density",
        ));
    }
    if !(fc.tolerance >= 0.0) {
        return Err(Error::config("fdt.tolerance", "must be non-negative"));
    }
    let q = cfg.numerics.quad();
    let mut entries = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, dc) in fc.densities.iter().enumerate() {
        if let DensityConfig::PowerLaw { sites: Some(s), .. } = dc {
            if s.iter().any(|&x| x != 0) {
                return Err(Error::config(
                    format!("fdt.densities[{i}].sites"),
                    "self-test densities act on site 0",
                ));
            }
        }
        let d: SpectralDensity = dc.build(1, &[0], Path::new("."))?;
        let top = d.upper().min(10.0 * d.cutoff_scale());
        let grid: Vec<f64> = (1..=fc.grid_points)
            .map(|j| top * j as f64 / (fc.grid_points + 1) as f64)
            .collect();
        let r = fdt_residual(&d, &grid, &q)?;
        worst = worst.max(r);
        entries.push(json!({ "density": dc, "residual": r }));
    }
    let passed = worst < fc.tolerance;
    let summary = json!({
        "grid_points": fc.grid_points,
        "tolerance": fc.tolerance,
        "max_residual": worst,
        "passed": passed,
        "densities": entries,
    });
    out.json("fdt_selftest.json", &summary)?;
    Ok(Outcome {
        passed,
        summary: json!({ "residual": worst, "passed": passed }),
    })
}
