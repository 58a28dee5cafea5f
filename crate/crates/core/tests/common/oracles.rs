//! Independent numerical oracles: quadrature moments and finite differences.

use nalgebra::{DMatrix, DVector};

/// Mean and variance of the density `exp(f)` on the real line (or on
/// `(0, ∞)` when `positive`), by Simpson's rule over a window located from
/// the mode and curvature of `f`.
pub fn grid_moments(f: impl Fn(f64) -> f64, positive: bool) -> (f64, f64) {
    let mode = locate_mode(&f, positive);
    let h = 1e-4 * mode.abs().max(1e-3);
    let curv = (f(mode + h) - 2.0 * f(mode) + f(mode - h)) / (h * h);
    assert!(curv < 0.0, "oracle: no curvature at the mode {mode}");
    let sd = (-1.0 / curv).sqrt();
    let mut lo = mode - 12.0 * sd;
    let mut hi = mode + 12.0 * sd;
    let fmax = f(mode);
    while f(hi) > fmax - 40.0 {
        hi += 4.0 * sd;
    }
    if positive {
        lo = lo.max(0.0);
    }
    while lo > 0.0 || !positive {
        if f(lo) <= fmax - 40.0 {
            break;
        }
        lo -= 4.0 * sd;
        if positive {
            lo = lo.max(0.0);
        }
    }
    let n = 40_000;
    let step = (hi - lo) / n as f64;
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for k in 0..=n {
        let x = lo + k as f64 * step;
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let v = f(x);
        let d = if v.is_finite() {
            w * (v - fmax).exp()
        } else {
            0.0
        };
        z += d;
        m1 += d * x;
        m2 += d * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

fn locate_mode(f: &impl Fn(f64) -> f64, positive: bool) -> f64 {
    let map = |t: f64| if positive { t.exp() } else { t.sinh() };
    let (lo, hi) = if positive {
        (-30.0, 30.0)
    } else {
        (-12.0, 12.0)
    };
    let n = 60_000;
    let step = (hi - lo) / n as f64;
    let best = (0..=n)
        .map(|k| lo + k as f64 * step)
        .map(|t| (t, f(map(t))))
        .filter(|(_, v)| v.is_finite())
        .fold(
            (0.0, f64::NEG_INFINITY),
            |b, c| if c.1 > b.1 { c } else { b },
        )
        .0;
    let (mut a, mut b) = (map(best - step), map(best + step));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Mean vector and covariance of `exp(f)` on the plane, with `f` assumed
/// unimodal; Simpson's rule over ±12 marginal standard deviations.
pub fn grid_moments_2d(
    f: impl Fn(f64, f64) -> f64,
    start: (f64, f64),
) -> (DVector<f64>, DMatrix<f64>) {
    let (mut x, mut y) = start;
    for _ in 0..30 {
        x = golden(|t| f(t, y), x);
        y = golden(|t| f(x, t), y);
    }
    let h = 1e-4 * (x.abs() + y.abs()).max(1e-2);
    let fxx = (f(x + h, y) - 2.0 * f(x, y) + f(x - h, y)) / (h * h);
    let fyy = (f(x, y + h) - 2.0 * f(x, y) + f(x, y - h)) / (h * h);
    let fxy =
        (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4.0 * h * h);
    let hess = DMatrix::from_row_slice(2, 2, &[-fxx, -fxy, -fxy, -fyy]);
    let cov = hess.try_inverse().expect("oracle: singular Hessian");
    let (sx, sy) = (cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt());
    let n = 600;
    let fmax = f(x, y);
    let simpson = |k: usize| {
        if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    let mut z = 0.0;
    let mut m = DVector::zeros(2);
    let mut s = DMatrix::zeros(2, 2);
    for i in 0..=n {
        let a = x - 12.0 * sx + 24.0 * sx * i as f64 / n as f64;
        for j in 0..=n {
            let b = y - 12.0 * sy + 24.0 * sy * j as f64 / n as f64;
            let w = simpson(i) * simpson(j) * (f(a, b) - fmax).exp();
            z += w;
            let v = DVector::from_vec(vec![a, b]);
            m += &v * w;
            s += &v * v.transpose() * w;
        }
    }
    let mean = m / z;
    let cov = s / z - &mean * mean.transpose();
    (mean, cov)
}

fn golden(f: impl Fn(f64) -> f64, x0: f64) -> f64 {
    let mut w = 1.0f64.max(x0.abs());
    while f(x0 + w) > f(x0) || f(x0 - w) > f(x0) {
        w *= 2.0;
    }
    let (mut a, mut b) = (x0 - w, x0 + w);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

pub fn sample_moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Mean within 1% of `max(|mean|, sd)` and variance within 1% relative.
pub fn moments_agree(sampled: (f64, f64), oracle: (f64, f64)) -> bool {
    let scale = oracle.0.abs().max(oracle.1.sqrt());
    (sampled.0 - oracle.0).abs() <= 0.01 * scale && (sampled.1 / oracle.1 - 1.0).abs() <= 0.01
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&DMatrix<f64>) -> f64, x: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        let mut p = x.clone();
        let mut m = x.clone();
        p[(i, j)] += h;
        m[(i, j)] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    })
}
