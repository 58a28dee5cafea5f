use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{BsnError, Result};

/// Tolerance on `max |UᵀU - I|` for a matrix to count as a Stiefel point.
pub const STIEFEL_TOL: f64 = 1e-10;

/// Relative eigenvalue floor below which `XᵀX` is treated as singular.
const RANK_TOL: f64 = 1e-12;

/// Strict lower triangle of a square matrix, column by column:
/// `[B21, ..., Bn1, B32, ..., Bn2, ..., Bn,n-1]`.
pub fn vecl(b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = b.nrows();
    if n != b.ncols() {
        return Err(BsnError::Dimension(format!(
            "vecl needs a square matrix, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for col in 0..n {
        for row in col + 1..n {
            out.push(b[(row, col)]);
        }
    }
    Ok(out)
}

/// Inverse of [`vecl`]: rebuilds the symmetric, zero-diagonal `n x n` matrix.
pub fn devecl(v: &[f64], n: usize) -> Result<DMatrix<f64>> {
    if v.len() != n * n.saturating_sub(1) / 2 {
        return Err(BsnError::Dimension(format!(
            "devecl: {} entries do not fill the strict lower triangle of a {n}x{n} matrix",
            v.len()
        )));
    }
    let mut b = DMatrix::zeros(n, n);
    let mut it = v.iter();
    for col in 0..n {
        for row in col + 1..n {
            let val = *it.next().expect("length checked above");
            b[(row, col)] = val;
            b[(col, row)] = val;
        }
    }
    Ok(b)
}

/// A symmetric connectivity matrix with zero diagonal, stored as its `vecl`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricNetwork {
    n: usize,
    data: Vec<f64>,
}

impl SymmetricNetwork {
    pub fn from_vecl(n: usize, data: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(BsnError::Dimension(format!(
                "a network needs at least 2 nodes, got {n}"
            )));
        }
        if data.len() != n * (n - 1) / 2 {
            return Err(BsnError::Dimension(format!(
                "expected {} edge values for {n} nodes, got {}",
                n * (n - 1) / 2,
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    /// Takes the strict lower triangle of `b`; the upper triangle and diagonal are ignored.
    pub fn from_dense(b: &DMatrix<f64>) -> Result<Self> {
        let data = vecl(b)?;
        Self::from_vecl(b.nrows(), data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.data.len()
    }

    pub fn vecl(&self) -> &[f64] {
        &self.data
    }

    fn index(&self, row: usize, col: usize) -> usize {
        // (row, col) with row > col; column `col` starts after the previous columns.
        col * (2 * self.n - col - 1) / 2 + (row - col - 1)
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        match j.cmp(&k) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Greater => self.data[self.index(j, k)],
            std::cmp::Ordering::Less => self.data[self.index(k, j)],
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        devecl(&self.data, self.n).expect("length validated at construction")
    }
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and eigenvector columns permuted to match.
pub fn symmetric_eigen_sorted(s: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(s.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(s.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `S^{-1/2}` for a symmetric positive definite `S`.
pub fn inv_sqrt_spd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if s.nrows() != s.ncols() {
        return Err(BsnError::Dimension(format!(
            "inv_sqrt_spd needs a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let (vals, vecs) = symmetric_eigen_sorted(s);
    if vals.iter().any(|&v| !(v > 0.0)) {
        return Err(BsnError::Singular(format!(
            "matrix is not positive definite (smallest eigenvalue {:e})",
            vals.min()
        )));
    }
    let d = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.sqrt()));
    Ok(&vecs * d * vecs.transpose())
}

/// An `N x q` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    u: DMatrix<f64>,
}

impl StiefelPoint {
    pub fn new(u: DMatrix<f64>) -> Result<Self> {
        if u.ncols() == 0 || u.ncols() > u.nrows() {
            return Err(BsnError::Dimension(format!(
                "a Stiefel frame needs 1 <= q <= N, got {}x{}",
                u.nrows(),
                u.ncols()
            )));
        }
        let gram = u.transpose() * &u;
        let q = gram.nrows();
        let dev = (gram - DMatrix::<f64>::identity(q, q)).amax();
        if dev > STIEFEL_TOL {
            return Err(BsnError::Numerical(format!(
                "columns are not orthonormal (max deviation {dev:e})"
            )));
        }
        Ok(Self { u })
    }

    pub(crate) fn new_unchecked(u: DMatrix<f64>) -> Self {
        Self { u }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.u
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn q(&self) -> usize {
        self.u.ncols()
    }
}

/// Full-column-rank `N x q` matrix living in unconstrained Euclidean space.
#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanPoint {
    x: DMatrix<f64>,
}

impl EuclideanPoint {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.ncols() == 0 || x.ncols() > x.nrows() {
            return Err(BsnError::Dimension(format!(
                "expected an N x q matrix with 1 <= q <= N, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(BsnError::Numerical("matrix has non-finite entries".into()));
        }
        let s = x.transpose() * &x;
        let (vals, _) = symmetric_eigen_sorted(&s);
        check_rank(&vals)?;
        Ok(Self { x })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }
}

impl From<StiefelPoint> for EuclideanPoint {
    fn from(u: StiefelPoint) -> Self {
        Self { x: u.u }
    }
}

fn check_rank(vals: &DVector<f64>) -> Result<()> {
    let max = vals.max();
    let min = vals.min();
    if !(max > 0.0) || min < RANK_TOL * max {
        return Err(BsnError::Singular(format!(
            "rank-deficient matrix: eigenvalues of XᵀX span [{min:e}, {max:e}]"
        )));
    }
    Ok(())
}

/// Pieces of the polar decomposition `X = U S^{1/2}` that the gradient reuses.
#[derive(Debug, Clone)]
pub struct PolarFactor {
    pub u: DMatrix<f64>,
    /// `(XᵀX)^{-1/2}`
    pub inv_sqrt: DMatrix<f64>,
    /// Eigenvalues of `XᵀX`, descending.
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl PolarFactor {
    pub fn compute(x: &DMatrix<f64>) -> Result<Self> {
        let s = x.transpose() * x;
        let (vals, vecs) = symmetric_eigen_sorted(&s);
        check_rank(&vals)?;
        let d = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.sqrt()));
        let inv_sqrt = &vecs * d * vecs.transpose();
        let u = x * &inv_sqrt;
        Ok(Self {
            u,
            inv_sqrt,
            eigenvalues: vals,
            eigenvectors: vecs,
        })
    }
}

/// Orthogonal polar factor `U_X = X (XᵀX)^{-1/2}`.
pub fn polar_expand(x: &EuclideanPoint) -> Result<StiefelPoint> {
    let pf = PolarFactor::compute(x.matrix())?;
    Ok(StiefelPoint::new_unchecked(pf.u))
}

/// Kronecker product `G ⊗ H`.
pub fn kron(g: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    g.kronecker(h)
}

/// Box product `G ⊠ H` for `G: m1 x n1`, `H: m2 x n2`.
///
/// The result is `m1·m2 x n1·n2` with entry
/// `[(i1·m2 + i2), (j1·n1 + j2)] = g[i1, j2] · h[i2, j1]`, so the first row reads
/// `g11 h11, g12 h11, ..., g1n1 h11, g11 h12, ...` and the last entry is
/// `g_{m1 n1} h_{m2 n2}`. It satisfies `(G ⊠ H) vec(X) = vec(H Xᵀ Gᵀ)`
/// with column-major `vec`.
pub fn boxprod(g: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let (m1, n1) = g.shape();
    let (m2, n2) = h.shape();
    DMatrix::from_fn(m1 * m2, n1 * n2, |row, col| {
        let (i1, i2) = (row / m2, row % m2);
        let (j1, j2) = (col / n1, col % n1);
        g[(i1, j2)] * h[(i2, j1)]
    })
}

/// `log Σ exp(v)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

/// `log |Σ sign_k exp(v_k)|` together with the sign of the sum.
/// Returns `None` when the sum is exactly zero or nothing is finite.
pub fn signed_log_sum_exp(terms: &[(f64, f64)]) -> Option<(f64, f64)> {
    let max = terms
        .iter()
        .filter(|(s, _)| *s != 0.0)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let total: f64 = terms
        .iter()
        .filter(|(s, _)| *s != 0.0)
        .map(|(s, v)| s.signum() * (v - max).exp())
        .sum();
    if total == 0.0 || !total.is_finite() {
        return None;
    }
    Some((max + total.abs().ln(), total.signum()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn vecl_examples() {
        let b = dmatrix![1.0, 2.0, 3.0; 4.0, 5.0, 6.0; 7.0, 8.0, 9.0];
        assert_eq!(vecl(&b).unwrap(), vec![4.0, 7.0, 8.0]);
        assert_eq!(vecl(&DMatrix::<f64>::identity(2, 2)).unwrap(), vec![0.0]);
        assert_eq!(
            vecl(&DMatrix::from_element(3, 3, 1.0)).unwrap(),
            vec![1.0; 3]
        );
        assert!(matches!(
            vecl(&DMatrix::zeros(2, 3)),
            Err(BsnError::Dimension(_))
        ));
    }

    #[test]
    fn network_accessors_agree_with_dense() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        let net = SymmetricNetwork::from_vecl(5, v).unwrap();
        let dense = net.to_dense();
        for j in 0..5 {
            for k in 0..5 {
                assert_eq!(net.get(j, k), dense[(j, k)]);
                assert_eq!(net.get(j, k), net.get(k, j));
            }
            assert_eq!(net.get(j, j), 0.0);
        }
        assert_eq!(net.get(1, 0), 1.0);
        assert_eq!(net.get(4, 0), 4.0);
        assert_eq!(net.get(2, 1), 5.0);
        assert_eq!(net.get(4, 3), 10.0);
    }

    #[test]
    fn polar_examples() {
        let x = EuclideanPoint::new(dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0]).unwrap();
        let u = polar_expand(&x).unwrap();
        assert!((u.matrix() - x.matrix()).amax() < 1e-14);

        let x = EuclideanPoint::new(dmatrix![2.0, 0.0; 0.0, 3.0; 0.0, 0.0]).unwrap();
        let u = polar_expand(&x).unwrap();
        assert!((u.matrix() - dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0]).amax() < 1e-14);
    }

    #[test]
    fn polar_rejects_rank_deficient() {
        let x = dmatrix![1.0, 2.0; 2.0, 4.0; 3.0, 6.0];
        assert!(matches!(
            EuclideanPoint::new(x.clone()),
            Err(BsnError::Singular(_))
        ));
        assert!(matches!(
            PolarFactor::compute(&x),
            Err(BsnError::Singular(_))
        ));
    }

    #[test]
    fn inv_sqrt_examples() {
        let r = inv_sqrt_spd(&(DMatrix::<f64>::identity(2, 2) * 4.0)).unwrap();
        assert!((r - DMatrix::<f64>::identity(2, 2) * 0.5).amax() < 1e-14);
        let r = inv_sqrt_spd(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 9.0]))).unwrap();
        assert!(
            (r - DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0 / 3.0]))).amax() < 1e-14
        );
        assert!(matches!(
            inv_sqrt_spd(&dmatrix![1.0, 0.0; 0.0, -1.0]),
            Err(BsnError::Singular(_))
        ));
    }

    #[test]
    fn kron_with_identity_is_block_diagonal() {
        let h = dmatrix![1.0, 2.0; 3.0, 4.0];
        let k = kron(&DMatrix::identity(2, 2), &h);
        let mut expect = DMatrix::zeros(4, 4);
        expect.view_mut((0, 0), (2, 2)).copy_from(&h);
        expect.view_mut((2, 2), (2, 2)).copy_from(&h);
        assert_eq!(k, expect);
    }

    #[test]
    fn boxprod_scalar_and_two_by_two() {
        assert_eq!(boxprod(&dmatrix![3.0], &dmatrix![5.0]), dmatrix![15.0]);

        let (g11, g12, g21, g22) = (2.0, 3.0, 5.0, 7.0);
        let (h11, h12, h21, h22) = (11.0, 13.0, 17.0, 19.0);
        let g = dmatrix![g11, g12; g21, g22];
        let h = dmatrix![h11, h12; h21, h22];
        // Hand expansion of the displayed block pattern.
        let expect = dmatrix![
            g11 * h11, g12 * h11, g11 * h12, g12 * h12;
            g11 * h21, g12 * h21, g11 * h22, g12 * h22;
            g21 * h11, g22 * h11, g21 * h12, g22 * h12;
            g21 * h21, g22 * h21, g21 * h22, g22 * h22
        ];
        assert_eq!(boxprod(&g, &h), expect);
    }

    #[test]
    fn boxprod_acts_as_transposed_sandwich() {
        let g = DMatrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64 + 0.5);
        let h = DMatrix::from_fn(4, 2, |i, j| (i as f64) - 2.0 * j as f64);
        // X must be n1 x n2 = 3 x 2 so that H Xᵀ Gᵀ is m2 x m1.
        let x = DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 * 0.3 - 1.0);
        let lhs = boxprod(&g, &h) * DVector::from_column_slice(x.as_slice());
        let rhs = &h * x.transpose() * g.transpose();
        assert!((lhs - DVector::from_column_slice(rhs.as_slice())).amax() < 1e-12);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        let (v, s) = signed_log_sum_exp(&[(1.0, 2f64.ln()), (-1.0, 0.0)]).unwrap();
        assert!(v.abs() < 1e-15 && s == 1.0);
        assert!(signed_log_sum_exp(&[(1.0, 0.0), (-1.0, 0.0)]).is_none());
    }
}
