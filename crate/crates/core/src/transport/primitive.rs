//! Compactly supported primitives of zero-mass signed densities.

use super::density::integrate;
use super::TransportError;

const PANELS: usize = 64;

/// `σ(x) = ∫_lo^x ξ`, tabulated on panels.
pub struct Primitive<'a> {
    pub lo: f64,
    pub hi: f64,
    xi: &'a dyn Fn(f64) -> f64,
    knots: Vec<f64>,
    values: Vec<f64>,
    /// `σ(hi)` as computed; the zero-mass residual.
    pub residual: f64,
}

/// Primitive of `ξ` on `[lo, hi]`; `breaks` lists kinks of `ξ` so panels
/// can align with them.
pub fn primitive_1d<'a>(
    xi: &'a dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    breaks: &[f64],
) -> Result<Primitive<'a>, TransportError> {
    let mut knots: Vec<f64> = (0..=PANELS).map(|i| lo + (hi - lo) * i as f64 / PANELS as f64).collect();
    knots.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut values = vec![0.0];
    for w in knots.windows(2) {
        let last = *values.last().unwrap();
        values.push(last + integrate(xi, w[0], w[1], 1e-16));
    }
    let residual = *values.last().unwrap();
    if residual.abs() > 1e-12 {
        return Err(TransportError::NonzeroTotal { residual });
    }
    Ok(Primitive { lo, hi, xi, knots, values, residual })
}

impl Primitive<'_> {
    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.lo || x >= self.hi {
            return 0.0;
        }
        let i = self.knots.partition_point(|&k| k <= x) - 1;
        self.values[i] + integrate(self.xi, self.knots[i], x, 1e-16)
    }

    /// `σ′ = ξ` inside the interval.
    pub fn derivative(&self, x: f64) -> f64 {
        if x <= self.lo || x >= self.hi {
            0.0
        } else {
            (self.xi)(x)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_density() {
        let z = |_: f64| 0.0;
        let p = primitive_1d(&z, 0.0, 1.0, &[]).unwrap();
        assert_eq!(p.eval(0.3), 0.0);
    }

    #[test]
    fn sine_primitive() {
        let s = |x: f64| x.sin();
        let p = primitive_1d(&s, 0.0, 2.0 * PI, &[]).unwrap();
        for k in 1..50 {
            let x = 2.0 * PI * k as f64 / 50.0;
            assert!((p.eval(x) - (1.0 - x.cos())).abs() < 1e-13);
        }
        assert!(p.residual.abs() < 1e-12);
    }

    #[test]
    fn nonzero_total_is_reported() {
        let one = |_: f64| 1.0;
        match primitive_1d(&one, 0.0, 1.0, &[]) {
            Err(TransportError::NonzeroTotal { residual }) => assert!((residual - 1.0).abs() < 1e-14),
            _ => panic!("expected failure"),
        }
    }

    #[test]
    fn random_zero_mass_pl() {
        use crate::transport::PlDensity;
        use rand::Rng;
        let mut rng = crate::fixtures::rng(43);
        for _ in 0..30 {
            let xs: Vec<f64> = (0..9).map(|k| k as f64 * 0.5).collect();
            let ys: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let d = PlDensity::new(xs.clone(), ys.clone());
            let mean = d.mass(0.0, 4.0) / 4.0;
            let shifted = PlDensity::new(xs.clone(), ys.iter().map(|y| y - mean).collect());
            let xi = |x: f64| shifted.eval(x);
            let p = primitive_1d(&xi, 0.0, 4.0, &xs).unwrap();
            assert_eq!(p.eval(4.0), 0.0);
            for k in 1..40 {
                let x = k as f64 * 0.1;
                assert!((p.eval(x) - shifted.mass(0.0, x)).abs() < 1e-12);
                assert!((p.derivative(x) - shifted.eval(x)).abs() < 1e-12);
            }
        }
    }
}
