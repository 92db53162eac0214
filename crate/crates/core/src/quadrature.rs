//! One dimensional quadrature rules.

/// Composite Simpson rule on `n` (rounded up to even) subintervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = (n.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Composite Simpson with panel width at most `h_max`.
pub fn simpson_h<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, h_max: f64) -> f64 {
    let n = ((b - a) / h_max).ceil().max(2.0) as usize;
    simpson(f, a, b, n)
}

/// Simpson rule on tabulated, equally spaced samples. Falls back to the
/// trapezoid rule on the last panel if the number of intervals is odd.
pub fn simpson_samples(ys: &[f64], h: f64) -> f64 {
    let n = ys.len();
    if n < 2 {
        return 0.0;
    }
    if n == 2 {
        return 0.5 * h * (ys[0] + ys[1]);
    }
    let m = if (n - 1) % 2 == 0 { n } else { n - 1 };
    let mut s = ys[0] + ys[m - 1];
    for (i, y) in ys.iter().enumerate().take(m - 1).skip(1) {
        s += if i % 2 == 1 { 4.0 * y } else { 2.0 * y };
    }
    let mut total = s * h / 3.0;
    if m < n {
        total += 0.5 * h * (ys[n - 2] + ys[n - 1]);
    }
    total
}

/// Adaptive Simpson with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        xs[i] = -z;
        xs[n - 1 - i] = z;
        ws[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        ws[n - 1 - i] = ws[i];
    }
    (xs, ws)
}

/// Composite Gauss-Legendre over the panels delimited by `breaks`.
pub fn gauss_panels<F: Fn(f64) -> f64>(f: F, breaks: &[f64], order: usize) -> f64 {
    let (xs, ws) = gauss_legendre(order);
    let mut total = 0.0;
    for p in breaks.windows(2) {
        let (a, b) = (p[0], p[1]);
        if b <= a {
            continue;
        }
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut s = 0.0;
        for (x, w) in xs.iter().zip(&ws) {
            s += w * f(c + h * x);
        }
        total += h * s;
    }
    total
}

/// `n + 1` equally spaced break points on `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}
