//! Piecewise-linear densities on the line with exact primitives, and
//! adaptive quadrature for everything else.

/// Continuous piecewise-linear function through `(xs[i], ys[i])`, extended
/// by constants `left`/`right` beyond the knots when those are set; outside
/// the knots it is undefined (treated as zero) otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct PlDensity {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub left: Option<f64>,
    pub right: Option<f64>,
    cum: Vec<f64>,
}

impl PlDensity {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        Self::with_tails(xs, ys, None, None)
    }

    pub fn with_tails(xs: Vec<f64>, ys: Vec<f64>, left: Option<f64>, right: Option<f64>) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(xs.len() >= 2, "need at least two knots");
        assert!(xs.windows(2).all(|w| w[0] < w[1]), "knots must increase");
        let mut cum = vec![0.0; xs.len()];
        for i in 1..xs.len() {
            cum[i] = cum[i - 1] + 0.5 * (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]);
        }
        PlDensity { xs, ys, left, right, cum }
    }

    /// Constant density `value` on `[a, b]`.
    pub fn constant(a: f64, b: f64, value: f64) -> Self {
        Self::new(vec![a, b], vec![value, value])
    }

    pub fn lo(&self) -> f64 {
        if self.left.is_some() {
            f64::NEG_INFINITY
        } else {
            self.xs[0]
        }
    }

    pub fn hi(&self) -> f64 {
        if self.right.is_some() {
            f64::INFINITY
        } else {
            *self.xs.last().unwrap()
        }
    }

    fn segment(&self, x: f64) -> usize {
        match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            i => (i - 1).min(self.xs.len() - 2),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] {
            return self.left.unwrap_or(0.0);
        }
        if x > self.xs[n - 1] {
            return self.right.unwrap_or(0.0);
        }
        let i = self.segment(x);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let w = (x - x0) / (x1 - x0);
        self.ys[i] + w * (self.ys[i + 1] - self.ys[i])
    }

    /// Primitive normalized to vanish at the first knot.
    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return -(self.xs[0] - x) * self.left.unwrap_or(0.0);
        }
        if x >= self.xs[n - 1] {
            return self.cum[n - 1] + (x - self.xs[n - 1]) * self.right.unwrap_or(0.0);
        }
        let i = self.segment(x);
        let d = x - self.xs[i];
        self.cum[i] + 0.5 * d * (self.ys[i] + self.eval(x))
    }

    pub fn mass(&self, a: f64, b: f64) -> f64 {
        self.cdf(b) - self.cdf(a)
    }

    /// Solves `cdf(x) = target` for a nonnegative density.
    pub fn inverse_cdf(&self, target: f64) -> f64 {
        let n = self.xs.len();
        if target <= 0.0 {
            let l = self.left.unwrap_or(0.0);
            return if l > 0.0 { self.xs[0] + target / l } else { self.xs[0] };
        }
        if target >= self.cum[n - 1] {
            let r = self.right.unwrap_or(0.0);
            let extra = target - self.cum[n - 1];
            return if r > 0.0 { self.xs[n - 1] + extra / r } else { self.xs[n - 1] };
        }
        let i = self.cum.partition_point(|&c| c <= target).saturating_sub(1).min(n - 2);
        let r = target - self.cum[i];
        let h = self.xs[i + 1] - self.xs[i];
        let y0 = self.ys[i];
        let slope = (self.ys[i + 1] - y0) / h;
        // y0·d + slope·d²/2 = r, root taken in the cancellation-free form
        let disc = (y0 * y0 + 2.0 * slope * r).max(0.0);
        let d = if y0 + disc.sqrt() > 0.0 { 2.0 * r / (y0 + disc.sqrt()) } else { 0.0 };
        self.xs[i] + d.clamp(0.0, h)
    }

    pub fn min_value(&self) -> f64 {
        let mut m = self.ys.iter().copied().fold(f64::INFINITY, f64::min);
        if let Some(l) = self.left {
            m = m.min(l);
        }
        if let Some(r) = self.right {
            m = m.min(r);
        }
        m
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Kronrod value, error estimate and `∫|f|` estimate on `[a, b]`.
fn gk15<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * GK_WEIGHTS[7];
    let mut gauss = fc * GAUSS_WEIGHTS[3];
    let mut abs = fc.abs() * GK_WEIGHTS[7];
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let (l, r) = (f(c - dx), f(c + dx));
        kronrod += GK_WEIGHTS[i] * (l + r);
        abs += GK_WEIGHTS[i] * (l.abs() + r.abs());
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * (l + r);
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs(), abs * h.abs())
}

/// The 15 Kronrod nodes on `[a, b]` as `(x, kronrod weight, gauss weight)`;
/// the gauss weight is zero off the embedded 7-point rule.
pub(crate) fn kronrod_nodes(a: f64, b: f64) -> [(f64, f64, f64); 15] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = [(c, GK_WEIGHTS[7] * h, GAUSS_WEIGHTS[3] * h); 15];
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let wg = if i % 2 == 1 { GAUSS_WEIGHTS[i / 2] * h } else { 0.0 };
        out[2 * i] = (c - dx, GK_WEIGHTS[i] * h, wg);
        out[2 * i + 1] = (c + dx, GK_WEIGHTS[i] * h, wg);
    }
    out
}

/// One 15-point Kronrod panel, no adaptivity.
pub(crate) fn kronrod<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64) -> f64 {
    gk15(f, a, b).0
}

/// Adaptive Gauss–Kronrod quadrature to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if a > b {
        return -integrate(f, b, a, tol);
    }
    fn go<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err, abs) = gk15(f, a, b);
        // below this the estimate is roundoff, not truncation error
        let floor = (50.0 * f64::EPSILON * abs).max(1e-20);
        if err <= tol.max(floor) || depth >= 24 || (b - a) < 1e-13 {
            return v;
        }
        let m = 0.5 * (a + b);
        go(f, a, m, 0.5 * tol, depth + 1) + go(f, m, b, 0.5 * tol, depth + 1)
    }
    go(f, a, b, tol, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_and_inverse_agree() {
        let d = PlDensity::with_tails(vec![0.0, 0.5, 1.0, 2.0], vec![1.0, 3.0, 0.5, 2.0], None, Some(2.0));
        for k in 0..50 {
            let x = -0.1 + k as f64 * 0.05;
            let x = x.max(0.0);
            let y = d.inverse_cdf(d.cdf(x));
            assert!((x - y).abs() < 1e-12, "{x} {y}");
        }
        assert!((d.mass(0.0, 0.5) - 1.0).abs() < 1e-15);
        assert!((d.mass(2.0, 3.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_start_is_invertible() {
        let d = PlDensity::new(vec![0.0, 1.0], vec![0.0, 2.0]);
        for k in 1..10 {
            let x = k as f64 / 10.0;
            assert!((d.inverse_cdf(x * x) - x).abs() < 1e-14);
        }
    }

    #[test]
    fn quadrature_is_accurate() {
        let v = integrate(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-14);
        assert!((v - 2.0).abs() < 1e-13);
        let bump = |x: f64| if x <= 0.0 || x >= 1.0 { 0.0 } else { (-1.0 / (x * (1.0 - x))).exp() };
        let a = integrate(&bump, 0.0, 1.0, 1e-15);
        let b = integrate(&bump, 0.0, 0.5, 1e-15) * 2.0;
        assert!((a - b).abs() < 1e-15);
    }
}
