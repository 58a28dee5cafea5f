use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::DMatrix;

use super::linalg::symmetric_eigen_sorted;
use crate::error::{BsnError, Result};

/// Node count used for the one-dimensional Gauss–Hermite rule unless configured.
pub const DEFAULT_GAUSS_HERMITE_NODES: usize = 32;
/// Smolyak level for the 3-D grid; level 6 has 1023 nodes, level 7 has 2815.
pub const DEFAULT_SPARSE_LEVEL: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureKind {
    /// `∫ h(x) φ(x) dx` with `φ` the standard normal density.
    GaussHermite1d,
    /// `∫_{(0,1)^3} h(x) dx`.
    SparseUniform3d,
}

impl FromStr for QuadratureKind {
    type Err = BsnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss-hermite-1d" => Ok(Self::GaussHermite1d),
            "sparse-uniform-3d" => Ok(Self::SparseUniform3d),
            other => Err(BsnError::Config(format!(
                "unsupported quadrature kind '{other}'"
            ))),
        }
    }
}

/// Nodes and weights of a quadrature rule; `nodes` is flat with stride `dims`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub kind: QuadratureKind,
    pub dims: usize,
    nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dims..(i + 1) * self.dims]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.nodes
            .chunks(self.dims)
            .zip(self.weights.iter().copied())
    }

    /// Applies the rule to `f`.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// Builds a rule. For Gauss–Hermite `level` is the node count; for the
/// sparse grid it is the Smolyak level (the largest 1-D level used).
pub fn build_quadrature(kind: QuadratureKind, level: usize) -> Result<QuadratureRule> {
    if level < 1 {
        return Err(BsnError::Config(
            "quadrature level must be at least 1".into(),
        ));
    }
    match kind {
        QuadratureKind::GaussHermite1d => Ok(gauss_hermite(level)),
        QuadratureKind::SparseUniform3d => {
            if level > 12 {
                return Err(BsnError::Config(format!(
                    "sparse grid level {level} is too large"
                )));
            }
            Ok(smolyak_unit_cube(3, level))
        }
    }
}

/// Orthonormal Hermite values `p_{n-1}(x)`, `p_n(x)` and `Σ_{j<n} p_j(x)²`.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64, f64) {
    let (mut prev, mut cur) = (0.0, 1.0);
    let mut sum_sq = 0.0;
    for j in 0..n {
        sum_sq += cur * cur;
        let next = (x * cur - (j as f64).sqrt() * prev) / ((j + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (prev, cur, sum_sq)
}

/// Golub–Welsch for the probabilists' Hermite polynomials (weight `φ`),
/// with Newton-polished nodes and Christoffel weights `1 / Σ p_j(x)²`.
fn gauss_hermite(n: usize) -> QuadratureRule {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let (vals, _) = symmetric_eigen_sorted(&jacobi);
    let mut nodes: Vec<f64> = (0..n).rev().map(|k| vals[k]).collect();
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            // p_n' = sqrt(n) p_{n-1}
            let (pm, pn, _) = hermite_orthonormal(n, *x);
            let step = pn / ((n as f64).sqrt() * pm);
            if step.is_finite() {
                *x -= step;
            }
        }
    }
    // symmetrise so that odd moments vanish to rounding
    for k in 0..n / 2 {
        let x = 0.5 * (nodes[n - 1 - k] - nodes[k]);
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let raw: Vec<f64> = nodes
        .iter()
        .map(|&x| 1.0 / hermite_orthonormal(n, x).2)
        .collect();
    let total: f64 = raw.iter().sum();
    QuadratureRule {
        kind: QuadratureKind::GaussHermite1d,
        dims: 1,
        nodes,
        weights: raw.iter().map(|w| w / total).collect(),
    }
}

/// Nested Fejér type-2 rule on (0,1) at 1-D level `l`: `2^l - 1` interior
/// points `(1 - cos(jπ/2^l))/2`. Returned as (index on the level-`l` dyadic
/// grid, weight).
fn fejer2_level(l: usize) -> Vec<(usize, f64)> {
    let m = 1usize << l; // n + 1
    let n = m - 1;
    (1..=n)
        .map(|j| {
            let theta = j as f64 * PI / m as f64;
            let mut s = 0.0;
            for k in 1..=m / 2 {
                let kk = (2 * k - 1) as f64;
                s += (kk * theta).sin() / kk;
            }
            let w = 4.0 * theta.sin() / m as f64 * s;
            (j, 0.5 * w)
        })
        .collect()
}

fn fejer2_node(index: usize, level: usize) -> f64 {
    let theta = index as f64 * PI / (1usize << level) as f64;
    0.5 * (1.0 - theta.cos())
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Smolyak combination of nested Fejér-2 rules on `(0,1)^dims`.
fn smolyak_unit_cube(dims: usize, level: usize) -> QuadratureRule {
    let q = level + dims - 1;
    let rules: Vec<Vec<(usize, f64)>> = (0..=level)
        .map(|l| if l == 0 { vec![] } else { fejer2_level(l) })
        .collect();
    let mut acc: BTreeMap<Vec<usize>, f64> = BTreeMap::new();

    let mut multi = vec![1usize; dims];
    loop {
        let norm: usize = multi.iter().sum();
        if norm + dims > q && norm <= q {
            let coeff = if (q - norm).is_multiple_of(2) {
                1.0
            } else {
                -1.0
            } * binomial(dims - 1, q - norm);
            tensor_accumulate(&multi, &rules, level, coeff, &mut acc);
        }
        // next multi-index with entries in 1..=level
        let mut d = 0;
        loop {
            if d == dims {
                break;
            }
            multi[d] += 1;
            if multi[d] <= level {
                break;
            }
            multi[d] = 1;
            d += 1;
        }
        if d == dims {
            break;
        }
    }

    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for (key, w) in acc {
        if w.abs() < 1e-15 {
            continue;
        }
        nodes.extend(key.iter().map(|&k| fejer2_node(k, level)));
        weights.push(w);
    }
    QuadratureRule {
        kind: QuadratureKind::SparseUniform3d,
        dims,
        nodes,
        weights,
    }
}

fn tensor_accumulate(
    multi: &[usize],
    rules: &[Vec<(usize, f64)>],
    top: usize,
    coeff: f64,
    acc: &mut BTreeMap<Vec<usize>, f64>,
) {
    let dims = multi.len();
    let mut idx = vec![0usize; dims];
    loop {
        let mut key = Vec::with_capacity(dims);
        let mut w = coeff;
        for d in 0..dims {
            let (j, wj) = rules[multi[d]][idx[d]];
            key.push(j << (top - multi[d]));
            w *= wj;
        }
        *acc.entry(key).or_insert(0.0) += w;

        let mut d = 0;
        while d < dims {
            idx[d] += 1;
            if idx[d] < rules[multi[d]].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == dims {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial_odd(k: u32) -> f64 {
        // (2k-1)!!
        (1..=k).fold(1.0, |acc, i| acc * (2 * i - 1) as f64)
    }

    #[test]
    fn gauss_hermite_second_moment() {
        let rule = build_quadrature(QuadratureKind::GaussHermite1d, 5).unwrap();
        assert_eq!(rule.len(), 5);
        let m2 = rule.integrate(|x| x[0] * x[0]);
        assert!((m2 - 1.0).abs() < 1e-12, "{m2}");
        assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_hermite_exact_to_degree_2n_minus_1() {
        for n in [3usize, 5, 8, 16, 32] {
            let rule = build_quadrature(QuadratureKind::GaussHermite1d, n).unwrap();
            for deg in 0..(2 * n) as u32 {
                let got = rule.integrate(|x| x[0].powi(deg as i32));
                let expect = if deg % 2 == 1 {
                    0.0
                } else {
                    double_factorial_odd(deg / 2)
                };
                // odd moments cancel terms of size E|x|^deg
                let scale = double_factorial_odd(deg.div_ceil(2));
                let tol = 1e-10 * scale.max(1.0);
                assert!(
                    (got - expect).abs() < tol,
                    "n={n} deg={deg} got={got} expect={expect}"
                );
            }
        }
    }

    #[test]
    fn sparse_grid_integrates_constants_and_products() {
        let rule = build_quadrature(QuadratureKind::SparseUniform3d, DEFAULT_SPARSE_LEVEL).unwrap();
        assert!(rule.len() <= 2000, "{} nodes", rule.len());
        assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let p = rule.integrate(|x| x[0] * x[1] * x[2]);
        assert!((p - 0.125).abs() < 1e-6, "{p}");
        for (x, _) in rule.iter() {
            assert!(x.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn sparse_grid_sizes_are_nested_counts() {
        let sizes: Vec<usize> = (1..=7)
            .map(|l| {
                build_quadrature(QuadratureKind::SparseUniform3d, l)
                    .unwrap()
                    .len()
            })
            .collect();
        assert_eq!(sizes, vec![1, 7, 31, 111, 351, 1023, 2815]);
    }

    #[test]
    fn sparse_grid_smooth_integrand() {
        let rule = build_quadrature(QuadratureKind::SparseUniform3d, DEFAULT_SPARSE_LEVEL).unwrap();
        // ∫ exp(x1 + 2 x2 - x3) = (e-1)(e^2-1)/2 (1-e^-1)
        let e = std::f64::consts::E;
        let expect = (e - 1.0) * (e * e - 1.0) / 2.0 * (1.0 - 1.0 / e);
        let got = rule.integrate(|x| (x[0] + 2.0 * x[1] - x[2]).exp());
        assert!((got - expect).abs() < 1e-8, "{got} vs {expect}");
    }

    #[test]
    fn unknown_kind_is_a_config_error() {
        assert!(matches!(
            "simpson".parse::<QuadratureKind>(),
            Err(BsnError::Config(_))
        ));
        assert!(matches!(
            build_quadrature(QuadratureKind::GaussHermite1d, 0),
            Err(BsnError::Config(_))
        ));
    }
}
