//! Monotone piecewise-cubic (Fritsch–Carlson) interpolation of sampled maps.

use super::Map1d;

#[derive(Clone, Debug, PartialEq)]
pub struct SampledMap {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl SampledMap {
    /// Needs strictly increasing `xs` and `ys`.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, String> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err("need at least two samples".into());
        }
        if let Some(i) = (1..n).find(|&i| !(xs[i] > xs[i - 1]) || !(ys[i] > ys[i - 1])) {
            return Err(format!("samples not strictly increasing at index {i}"));
        }
        let secants: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for i in 1..n - 1 {
            let (a, b) = (secants[i - 1], secants[i]);
            let (h0, h1) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
            // weighted harmonic mean keeps each cubic monotone
            let (w0, w1) = (2.0 * h1 + h0, h1 + 2.0 * h0);
            slopes[i] = (w0 + w1) / (w0 / a + w1 / b);
        }
        Ok(SampledMap { xs, ys, slopes })
    }

    fn locate(&self, x: f64) -> usize {
        self.xs.partition_point(|&k| k <= x).clamp(1, self.xs.len() - 1) - 1
    }

    pub fn eval(&self, x: f64) -> (f64, f64) {
        let i = self.locate(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let y = (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1;
        let d = ((6.0 * t2 - 6.0 * t) * y0 + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (-6.0 * t2 + 6.0 * t) * y1 + (3.0 * t2 - 2.0 * t) * m1) / h;
        (y, d)
    }
}

impl Map1d for SampledMap {
    fn apply(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    fn derivative(&self, x: f64) -> f64 {
        self.eval(x).1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_samples_and_stays_monotone() {
        let xs: Vec<f64> = (0..=40).map(|i| i as f64 / 40.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x * x + 0.01 * x).collect();
        let m = SampledMap::new(xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((m.apply(*x) - y).abs() < 1e-15);
        }
        let mut last = f64::NEG_INFINITY;
        for k in 0..=4000 {
            let v = m.apply(k as f64 / 4000.0);
            assert!(v >= last);
            last = v;
        }
        assert!((m.apply(0.4567) - (0.4567f64.powi(3) + 0.004567)).abs() < 1e-4);
    }

    #[test]
    fn rejects_decreasing() {
        assert!(SampledMap::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 1.0]).is_err());
    }
}
