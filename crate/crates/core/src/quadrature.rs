//! Adaptive Gauss–Kronrod quadrature and the Debye transport integrals.

use crate::error::{Error, Result};

// 15-point Kronrod nodes/weights with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Integrates `f` over `[a, b]` to the requested relative tolerance by
/// global bisection of the worst interval.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut intervals = vec![{
        let (v, e) = kronrod(&f, a, b);
        (a, b, v, e)
    }];
    for _ in 0..2000 {
        let total: f64 = intervals.iter().map(|i| i.2).sum();
        let err: f64 = intervals.iter().map(|i| i.3).sum();
        if err <= rel_tol * total.abs() || err < 1e-300 {
            return Ok(total);
        }
        let (k, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .unwrap();
        let (lo, hi, _, _) = intervals.swap_remove(k);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod(&f, lo, mid);
        let (v2, e2) = kronrod(&f, mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
    Err(Error::NotConverged {
        iterations: 2000,
        cost: intervals.iter().map(|i| i.3).sum(),
        reason: "adaptive quadrature subdivision limit".into(),
    })
}

/// Transport integral Jₙ(y) = ∫₀ʸ xⁿ eˣ/(eˣ−1)² dx.
pub fn transport_integral(n: i32, y: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain("transport integral needs n ≥ 2"));
    }
    if !(y >= 0.0) {
        return Err(Error::domain(format!(
            "transport integral upper limit {y} < 0"
        )));
    }
    let integrand = |x: f64| {
        if x <= 0.0 {
            0.0
        } else if x < 1e-6 {
            // eˣ/(eˣ−1)² ≈ 1/x² − 1/12
            x.powi(n - 2) * (1.0 - x * x / 12.0)
        } else {
            let em = (-x).exp();
            let d = -(-x).exp_m1();
            x.powi(n) * em / (d * d)
        }
    };
    // the integrand is negligible past x ≈ 200 for n ≤ 12
    let upper = y.min(200.0);
    let mut total = 0.0;
    let mut lo = 0.0;
    for hi in [5.0f64, 20.0, 60.0, 200.0] {
        if lo >= upper {
            break;
        }
        let h = hi.min(upper);
        total += integrate_adaptive(integrand, lo, h, 1e-12)?;
        lo = h;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate_adaptive(|x| 3.0 * x * x, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 8.0).abs() < 1e-12);
    }

    #[test]
    fn oscillatory() {
        let v = integrate_adaptive(|x| x.sin(), 0.0, PI, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-11);
    }

    #[test]
    fn j8_infinite_limit_is_8_factorial_zeta8() {
        // 8!·ζ(8) = 40320·π⁸/9450, evaluated to 30 digits independently
        let expect = 40320.0 * PI.powi(8) / 9450.0;
        assert!((expect - 40_484.399_001_9).abs() < 1e-6);
        let v = transport_integral(8, f64::INFINITY).unwrap();
        assert!((v - expect).abs() < 0.1);
        assert!(((v - expect) / expect).abs() < 1e-8);
    }

    #[test]
    fn j8_partial() {
        // mpmath quad of the integrand on [0, 5]
        let v = transport_integral(8, 5.0).unwrap();
        assert!(((v - 2_857.283_838_632_924) / v).abs() < 1e-9);
    }

    #[test]
    fn small_y_limit() {
        // integrand → x^{n-2} so J₈(y) → y⁷/7
        let y = 1e-3;
        let v = transport_integral(8, y).unwrap();
        assert!(((v - y.powi(7) / 7.0) / v).abs() < 1e-6);
    }
}
