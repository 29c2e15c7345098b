//! Globally adaptive Gauss–Kronrod (10-point Gauss / 21-point Kronrod) quadrature.
//!
//! The integrator works on vector-valued integrands so that several related
//! integrals (every entry of a matrix, or every region's heat current) share
//! the same nodes. Panels are refined largest-error first until the summed
//! error estimate drops below `max(abs_tol, rel_tol * |I|_inf)`.
//!
//! Integrals starting at the origin may carry an integrable power-law
//! singularity `x^e` with `e > -1`. The first panel `[0, b]` is then mapped
//! through `x = b v^m`, `m = 1 / (1 + e)`, which turns the integrand into a
//! bounded function of `v`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_808_623_222_893,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// 10-point Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_146,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_panels: 20_000,
        }
    }
}

impl QuadOptions {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Integral {
    pub value: Vec<f64>,
    pub error: f64,
    pub panels: usize,
}

#[derive(Debug, Clone, Copy)]
enum Map {
    Identity,
    /// x = scale * v^m on v in [0, 1].
    Power {
        scale: f64,
        m: f64,
    },
}

#[derive(Debug, Clone)]
struct Panel {
    a: f64,
    b: f64,
    map: Map,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

struct Rule<'a, F> {
    f: &'a mut F,
    dim: usize,
    buf: Vec<f64>,
    // samples[j * dim + i]: node 2j is the left point, 2j+1 the right point, 20 the center.
    samples: Vec<f64>,
}

impl<'a, F: FnMut(f64, &mut [f64])> Rule<'a, F> {
    fn new(f: &'a mut F, dim: usize) -> Self {
        Self {
            f,
            dim,
            buf: vec![0.0; dim],
            samples: vec![0.0; 21 * dim],
        }
    }

    fn eval(&mut self, map: Map, v: f64, slot: usize) {
        self.buf.iter_mut().for_each(|x| *x = 0.0);
        match map {
            Map::Identity => (self.f)(v, &mut self.buf),
            Map::Power { scale, m } => {
                if v > 0.0 {
                    let x = scale * v.powf(m);
                    (self.f)(x, &mut self.buf);
                    let jac = scale * m * v.powf(m - 1.0);
                    self.buf.iter_mut().for_each(|y| *y *= jac);
                }
            }
        }
        let d = self.dim;
        self.samples[slot * d..(slot + 1) * d].copy_from_slice(&self.buf);
    }

    fn apply(&mut self, a: f64, b: f64, map: Map) -> Panel {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let d = self.dim;
        self.eval(map, mid, 20);
        for (j, &x) in XGK.iter().take(10).enumerate() {
            self.eval(map, mid - half * x, 2 * j);
            self.eval(map, mid + half * x, 2 * j + 1);
        }
        let s = &self.samples;
        let mut value = vec![0.0; d];
        let mut error: f64 = 0.0;
        for i in 0..d {
            let c = s[20 * d + i];
            let mut kron = WGK[10] * c;
            let mut gauss = 0.0;
            let mut abs_acc = WGK[10] * c.abs();
            for j in 0..10 {
                let lo = s[2 * j * d + i];
                let hi = s[(2 * j + 1) * d + i];
                kron += WGK[j] * (lo + hi);
                abs_acc += WGK[j] * (lo.abs() + hi.abs());
                if j % 2 == 1 {
                    gauss += WG[j / 2] * (lo + hi);
                }
            }
            let kmean = 0.5 * kron;
            let mut asc = WGK[10] * (c - kmean).abs();
            for j in 0..10 {
                let lo = s[2 * j * d + i];
                let hi = s[(2 * j + 1) * d + i];
                asc += WGK[j] * ((lo - kmean).abs() + (hi - kmean).abs());
            }
            let resasc = asc * half.abs();
            let resabs = abs_acc * half.abs();
            value[i] = kron * half;
            let mut err = ((kron - gauss) * half).abs();
            if resasc != 0.0 && err != 0.0 {
                err = resasc * 1.0f64.min((200.0 * err / resasc).powf(1.5));
            }
            if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
                err = err.max(50.0 * f64::EPSILON * resabs);
            }
            if !value[i].is_finite() {
                err = f64::INFINITY;
            }
            error = error.max(err);
        }
        Panel {
            a,
            b,
            map,
            value,
            error,
        }
    }
}

/// Integrate a vector-valued function over `[breaks[0], breaks[last]]`.
///
/// Interior breakpoints become initial panel boundaries; they are never
/// evaluated, so integrable endpoint singularities and kinks are safe there.
pub fn integrate_vec<F>(
    dim: usize,
    mut f: F,
    breaks: &[f64],
    opts: &QuadOptions,
) -> Result<Integral>
where
    F: FnMut(f64, &mut [f64]),
{
    integrate_impl(dim, &mut f, breaks, None, opts)
}

/// Like [`integrate_vec`] for an interval starting at zero where the
/// integrand behaves as `x^origin_exponent` near the origin.
pub fn integrate_vec_from_zero<F>(
    dim: usize,
    mut f: F,
    breaks: &[f64],
    origin_exponent: f64,
    opts: &QuadOptions,
) -> Result<Integral>
where
    F: FnMut(f64, &mut [f64]),
{
    if origin_exponent <= -1.0 {
        return Err(Error::DivergentKernel(format!(
            "integrand behaves as x^{origin_exponent} at the origin"
        )));
    }
    let needs_map =
        origin_exponent < 0.0 || (origin_exponent.fract() != 0.0 && origin_exponent < 4.0);
    let e = if needs_map {
        Some(origin_exponent)
    } else {
        None
    };
    integrate_impl(dim, &mut f, breaks, e, opts)
}

/// Scalar convenience wrapper around [`integrate_vec`]; returns `(value, error)`.
pub fn integrate<F>(mut f: F, breaks: &[f64], opts: &QuadOptions) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let r = integrate_vec(1, |x, out| out[0] = f(x), breaks, opts)?;
    Ok((r.value[0], r.error))
}

/// Scalar convenience wrapper around [`integrate_vec_from_zero`].
pub fn integrate_from_zero<F>(
    mut f: F,
    breaks: &[f64],
    origin_exponent: f64,
    opts: &QuadOptions,
) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let r = integrate_vec_from_zero(1, |x, out| out[0] = f(x), breaks, origin_exponent, opts)?;
    Ok((r.value[0], r.error))
}

fn integrate_impl<F>(
    dim: usize,
    f: &mut F,
    breaks: &[f64],
    origin_exponent: Option<f64>,
    opts: &QuadOptions,
) -> Result<Integral>
where
    F: FnMut(f64, &mut [f64]),
{
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|x| x.is_finite()).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    if pts.len() < 2 {
        return Ok(Integral {
            value: vec![0.0; dim],
            error: 0.0,
            panels: 0,
        });
    }

    let mut rule = Rule::new(f, dim);
    let mut heap = BinaryHeap::new();
    for (i, w) in pts.windows(2).enumerate() {
        let panel = match origin_exponent {
            Some(e) if i == 0 && w[0] == 0.0 => rule.apply(
                0.0,
                1.0,
                Map::Power {
                    scale: w[1],
                    m: 1.0 / (1.0 + e),
                },
            ),
            _ => rule.apply(w[0], w[1], Map::Identity),
        };
        heap.push(panel);
    }

    let mut total = vec![0.0; dim];
    let mut err = 0.0;
    for p in heap.iter() {
        add_panel(&mut total, &mut err, p, 1.0);
    }
    loop {
        let norm = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !err.is_finite() && heap.peek().map_or(false, |p| (p.b - p.a).abs() < 1e-300) {
            return Err(Error::Quadrature("non-finite integrand".into()));
        }
        if err <= opts.abs_tol.max(opts.rel_tol * norm) {
            // exact re-summation to shed the running-sum drift
            let mut value = vec![0.0; dim];
            let mut error = 0.0;
            for p in heap.iter() {
                add_panel(&mut value, &mut error, p, 1.0);
            }
            let norm = value.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if error > opts.abs_tol.max(opts.rel_tol * norm) {
                total = value;
                err = error;
                continue;
            }
            return Ok(Integral {
                value,
                error,
                panels: heap.len(),
            });
        }
        if heap.len() >= opts.max_panels {
            return Err(Error::Quadrature(format!(
                "no convergence after {} panels: error estimate {:.3e} for |I| = {:.3e}",
                heap.len(),
                err,
                norm
            )));
        }
        let worst = heap.pop().expect("non-empty heap");
        add_panel(&mut total, &mut err, &worst, -1.0);
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel can no longer be split in floating point; accept it as is.
            let mut p = worst;
            p.error = 0.0;
            add_panel(&mut total, &mut err, &p, 1.0);
            heap.push(p);
            continue;
        }
        for p in [
            rule.apply(worst.a, mid, worst.map),
            rule.apply(mid, worst.b, worst.map),
        ] {
            add_panel(&mut total, &mut err, &p, 1.0);
            heap.push(p);
        }
        // running error can drift below zero after many subtractions
        err = err.max(0.0);
    }
}

fn add_panel(total: &mut [f64], err: &mut f64, p: &Panel, sign: f64) {
    for (t, v) in total.iter_mut().zip(&p.value) {
        *t += sign * v;
    }
    *err += sign * p.error;
}

/// Breakpoints splitting `[lo, hi]` into panels of at most `max_len` width,
/// merged with `extra` points lying inside the interval.
pub fn panel_breaks(lo: f64, hi: f64, max_len: f64, extra: &[f64]) -> Vec<f64> {
    let n = if max_len > 0.0 && max_len.is_finite() {
        (((hi - lo) / max_len).ceil() as usize).clamp(1, 100_000)
    } else {
        1
    };
    let mut pts: Vec<f64> = (0..=n)
        .map(|i| lo + (hi - lo) * i as f64 / n as f64)
        .collect();
    pts.extend(extra.iter().copied().filter(|&x| x > lo && x < hi));
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * a.abs().max(b.abs()));
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_exact() {
        let (v, _) = integrate(
            |x| x.powi(5) - 3.0 * x * x,
            &[0.0, 2.0],
            &QuadOptions::default(),
        )
        .unwrap();
        assert!((v - (64.0 / 6.0 - 8.0)).abs() < 1e-13);
    }

    #[test]
    fn oscillatory_with_panels() {
        let tau = 40.0;
        let breaks = panel_breaks(0.0, 10.0, 2.0 * PI / tau, &[]);
        let (v, _) = integrate(
            |w| (w * tau).cos(),
            &breaks,
            &QuadOptions::new(1e-13, 1e-12),
        )
        .unwrap();
        assert!((v - (10.0 * tau).sin() / tau).abs() < 1e-12);
    }

    #[test]
    fn origin_singularity_mapped() {
        // int_0^1 x^{-1/2} cos x dx, reference from mpmath
        let opts = QuadOptions::new(1e-14, 1e-13);
        let (v, _) =
            integrate_from_zero(|x| x.powf(-0.5) * x.cos(), &[0.0, 1.0], -0.5, &opts).unwrap();
        assert!((v - 1.809_048_475_800_544).abs() < 1e-12, "{v}");
        let (v, _) = integrate_from_zero(|x| x.sqrt(), &[0.0, 0.5, 1.0], 0.5, &opts).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn divergent_rejected() {
        let r = integrate_from_zero(|x| 1.0 / x, &[0.0, 1.0], -1.0, &QuadOptions::default());
        assert!(matches!(r, Err(Error::DivergentKernel(_))));
    }

    #[test]
    fn vector_integrand_shares_nodes() {
        let r = integrate_vec(
            2,
            |x, out| {
                out[0] = x.exp();
                out[1] = 0.0;
            },
            &[0.0, 1.0],
            &QuadOptions::default(),
        )
        .unwrap();
        assert!((r.value[0] - (1f64.exp() - 1.0)).abs() < 1e-13);
        assert_eq!(r.value[1], 0.0);
    }
}
