//! Thermal occupation factors and the few special functions the transport
//! formulas need.

/// Bose–Einstein occupation `n(w) = 1 / (exp(w/T) - 1)`, i.e. `(coth(w/2T) - 1) / 2`.
///
/// Evaluated through `expm1` so that it neither overflows at `T -> 0` nor loses
/// precision at `w << T`. `T = 0` gives exactly zero for `w > 0`.
pub fn bose(omega: f64, temperature: f64) -> f64 {
    if temperature <= 0.0 || omega <= 0.0 {
        return 0.0;
    }
    let x = omega / temperature;
    if x > 700.0 {
        return 0.0;
    }
    1.0 / x.exp_m1()
}

/// `coth(w / 2T) = 1 + 2 n(w)`.
pub fn coth_factor(omega: f64, temperature: f64) -> f64 {
    1.0 + 2.0 * bose(omega, temperature)
}

/// `w coth(w / 2T)`, finite (`-> 2T`) at `w -> 0`.
pub fn omega_coth(omega: f64, temperature: f64) -> f64 {
    if temperature <= 0.0 {
        return omega;
    }
    let x = omega / (2.0 * temperature);
    if x.abs() < 1e-4 {
        let x2 = x * x;
        2.0 * temperature * (1.0 + x2 / 3.0 - x2 * x2 / 45.0)
    } else {
        omega + 2.0 * omega * bose(omega, temperature)
    }
}

/// `n(w)` as the geometric series `sum_{a>=1} exp(-a w / T)`, truncated once
/// the next term falls below `rel_tail` times the partial sum.
///
/// Independent of [`bose`]; the low-temperature transport checks compare the two.
pub fn bose_series(omega: f64, temperature: f64, rel_tail: f64) -> f64 {
    if temperature <= 0.0 || omega <= 0.0 {
        return 0.0;
    }
    let q = (-omega / temperature).exp();
    if q == 0.0 {
        return 0.0;
    }
    let mut term = q;
    let mut sum = 0.0;
    for _ in 0..10_000_000 {
        sum += term;
        term *= q;
        if term <= rel_tail * sum {
            break;
        }
    }
    sum
}

pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

/// Riemann zeta for real `s > 1` via Euler–Maclaurin summation.
pub fn zeta(s: f64) -> f64 {
    assert!(s > 1.0, "zeta(s) requires s > 1");
    const N: usize = 20;
    let n = N as f64;
    let mut sum: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    // tail: int_N^inf + f(N)/2 - sum B_2j/(2j)! f^{(2j-1)}(N)
    sum += n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    // Bernoulli B2, B4, B6, B8, B10 over (2j)!
    const COEF: [f64; 5] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30240.0,
        -1.0 / 1_209_600.0,
        1.0 / 47_900_160.0,
    ];
    // f^{(2j-1)}(N) = -s(s+1)...(s+2j-2) N^{-s-2j+1}
    let mut rising = s;
    let mut power = n.powf(-s - 1.0);
    for (j, c) in COEF.iter().enumerate() {
        sum += c * rising * power;
        let k = 2.0 * j as f64;
        rising *= (s + k + 1.0) * (s + k + 2.0);
        power /= n * n;
    }
    sum
}
