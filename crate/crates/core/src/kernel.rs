//! Dense kernel and linear-algebra primitives shared by every estimator.
//!
//! Samples are stored row-major ([`SampleMatrix`]), Gram matrices likewise
//! ([`GramMatrix`]). All reductions run left to right over rows, then over
//! columns, so results are bitwise reproducible.
//!
//! ## Bandwidth convention
//!
//! The Gaussian kernel is `κ_σ(a, b) = exp(-‖a - b‖² / (2σ²))` with the
//! caller's σ used as-is. Plugging a Gaussian KDE with bandwidth `h` into the
//! exact Cauchy-Schwarz integrals yields the same estimator with
//! `σ = √2·h`; see [`KernelSpec::from_kde_bandwidth`].

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n × d` matrix of finite reals, one sample per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    /// Build from row-major storage. Fails on shape mismatch or non-finite entries.
    pub fn from_flat(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Config(format!("sample matrix must be at least 1x1, got {n}x{d}")));
        }
        if data.len() != n * d {
            return Err(Error::Config(format!(
                "declared {n}x{d} sample matrix but got {} values",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite value {} at row {}, column {}",
                data[pos],
                pos / d,
                pos % d
            )));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::Config(format!("row {i} has {} columns, expected {d}", r.len())));
        }
        Self::from_flat(n, d, rows.concat())
    }

    /// Column vector of scalars (`n × 1`).
    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::from_flat(values.len(), 1, values.to_vec())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows picked by index, in the order given.
    pub fn select(&self, indices: &[usize]) -> SampleMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        SampleMatrix { n: indices.len(), d: self.d, data }
    }

    /// Column-wise concatenation `[self ‖ other]`.
    pub fn hconcat(&self, other: &SampleMatrix) -> Result<SampleMatrix> {
        if self.n != other.n {
            return Err(Error::Config(format!(
                "cannot concatenate {} rows with {} rows",
                self.n, other.n
            )));
        }
        let d = self.d + other.d;
        let mut data = Vec::with_capacity(self.n * d);
        for i in 0..self.n {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(SampleMatrix { n: self.n, d, data })
    }

    /// Row-wise concatenation (`self` on top of `other`).
    pub fn vconcat(&self, other: &SampleMatrix) -> Result<SampleMatrix> {
        if self.d != other.d {
            return Err(Error::Config(format!(
                "cannot stack dimension {} on dimension {}",
                self.d, other.d
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(SampleMatrix { n: self.n + other.n, d: self.d, data })
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.data)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self::from_flat(m.nrows(), m.ncols(), data)
    }

    /// Apply `f` to every row, producing a matrix of the same shape.
    pub fn map_rows(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<SampleMatrix> {
        let mut data = vec![0.0; self.data.len()];
        for (src, dst) in self.data.chunks_exact(self.d).zip(data.chunks_exact_mut(self.d)) {
            f(src, dst);
        }
        Self::from_flat(self.n, self.d, data)
    }
}

/// Gaussian kernel bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    bandwidth: f64,
}

impl KernelSpec {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::Config(format!("kernel bandwidth must be positive and finite, got {bandwidth}")));
        }
        Ok(Self { bandwidth })
    }

    /// Kernel width whose estimator equals the exact CS divergence between
    /// two Gaussian KDEs with bandwidth `h`.
    pub fn from_kde_bandwidth(h: f64) -> Result<Self> {
        Self::new(std::f64::consts::SQRT_2 * h)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// `κ_σ` evaluated at a squared distance.
    #[inline]
    pub fn eval_sq(&self, sq_dist: f64) -> f64 {
        (-sq_dist / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { bandwidth: 1.0 }
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let t = x - y;
        s += t * t;
    }
    s
}

/// Dense row-major `m × n` Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    bandwidth: f64,
}

impl GramMatrix {
    pub(crate) fn from_parts(rows: usize, cols: usize, values: Vec<f64>, bandwidth: f64) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        Self { rows, cols, values, bandwidth }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / (self.rows * self.cols) as f64
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.values.chunks_exact(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn transpose(&self) -> GramMatrix {
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                values.push(self.get(i, j));
            }
        }
        GramMatrix { rows: self.cols, cols: self.rows, values, bandwidth: self.bandwidth }
    }

    /// Sub-block indexed by `row_idx × col_idx`.
    pub fn block(&self, row_idx: &[usize], col_idx: &[usize]) -> GramMatrix {
        let mut values = Vec::with_capacity(row_idx.len() * col_idx.len());
        for &i in row_idx {
            let r = self.row(i);
            values.extend(col_idx.iter().map(|&j| r[j]));
        }
        GramMatrix { rows: row_idx.len(), cols: col_idx.len(), values, bandwidth: self.bandwidth }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }
}

/// `values[i][j] = exp(-‖a_i - b_j‖² / (2σ²))`.
pub fn rbf_cross_gram(a: &SampleMatrix, b: &SampleMatrix, spec: KernelSpec) -> Result<GramMatrix> {
    if a.d() != b.d() {
        return Err(Error::Config(format!(
            "feature dimension mismatch: {} vs {}",
            a.d(),
            b.d()
        )));
    }
    let mut values = Vec::with_capacity(a.n() * b.n());
    for ra in a.rows() {
        values.extend(b.rows().map(|rb| spec.eval_sq(sq_dist(ra, rb))));
    }
    Ok(GramMatrix::from_parts(a.n(), b.n(), values, spec.bandwidth()))
}

/// Self-Gram `K(a, a)`, computed on the upper triangle and mirrored so the
/// result is exactly symmetric with a unit diagonal.
pub fn rbf_gram(a: &SampleMatrix, spec: KernelSpec) -> GramMatrix {
    let n = a.n();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let v = spec.eval_sq(sq_dist(a.row(i), a.row(j)));
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    GramMatrix::from_parts(n, n, values, spec.bandwidth())
}

/// Scale each row to unit L2 norm.
pub fn normalize_rows(x: &SampleMatrix) -> Result<SampleMatrix> {
    for (i, r) in x.rows().enumerate() {
        if r.iter().all(|v| *v == 0.0) {
            return Err(Error::Input(format!("row {i} has zero norm and cannot be normalized")));
        }
    }
    x.map_rows(|src, dst| {
        let norm = src.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (o, v) in dst.iter_mut().zip(src) {
            *o = v / norm;
        }
    })
}

/// Lower-triangular Cholesky factor of a dense symmetric matrix, row-major.
///
/// No jitter is added: a non-positive pivot is reported as failure.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factor `a` (row-major `n × n`); returns `None` when a pivot is not positive.
    pub fn factor(a: &[f64], n: usize) -> Option<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= ri[k] * rj[k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let mut s = b[i];
            for (k, v) in row.iter().enumerate() {
                s -= v * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solve `Lᵀ x = y` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let bi = b[i] / self.l[i * n + i];
            b[i] = bi;
            for k in 0..i {
                b[k] -= self.l[i * n + k] * bi;
            }
        }
    }

    /// Solve `A x = b` with two triangular solves.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.solve_lower_in_place(b);
        self.solve_upper_in_place(b);
    }

    /// `log |A|`.
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>() * 2.0
    }

    pub fn lower(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.l)
    }
}

pub(crate) fn dmatrix_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Cholesky of a square `DMatrix`, labelled for error messages.
pub fn cholesky_checked(m: &DMatrix<f64>, which: &str) -> Result<Cholesky> {
    if m.nrows() != m.ncols() {
        return Err(Error::Config(format!("{which} must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("{which} has non-finite entries")));
    }
    Cholesky::factor(&dmatrix_row_major(m), m.nrows())
        .ok_or_else(|| Error::NotPositiveDefinite { which: which.to_string() })
}

/// Eigenvalues of `Σ₂⁻¹Σ₁`, ascending. Both matrices must be symmetric PD.
pub fn eigenvalues_pd_pencil(sigma1: &DMatrix<f64>, sigma2: &DMatrix<f64>) -> Result<Vec<f64>> {
    if sigma1.shape() != sigma2.shape() {
        return Err(Error::Config(format!(
            "covariance shapes differ: {:?} vs {:?}",
            sigma1.shape(),
            sigma2.shape()
        )));
    }
    cholesky_checked(sigma1, "sigma1")?;
    let chol2 = cholesky_checked(sigma2, "sigma2")?;
    // Σ₂ = R Rᵀ; Σ₂⁻¹Σ₁ is similar to the symmetric R⁻¹ Σ₁ R⁻ᵀ.
    let d = sigma1.nrows();
    let mut w = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut col: Vec<f64> = sigma1.column(j).iter().copied().collect();
        chol2.solve_lower_in_place(&mut col);
        for i in 0..d {
            w[(i, j)] = col[i];
        }
    }
    let mut c = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let mut row: Vec<f64> = w.row(i).iter().copied().collect();
        chol2.solve_lower_in_place(&mut row);
        for j in 0..d {
            c[(i, j)] = row[j];
        }
    }
    let c = (&c + c.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Quadrature rule used by [`IntervalGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadratureRule {
    Trapezoid,
    Simpson,
}

/// Abscissae and weights on a closed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalGrid {
    lo: f64,
    hi: f64,
    rule: QuadratureRule,
    abscissae: Vec<f64>,
    weights: Vec<f64>,
}

/// Trapezoidal grid with `points` equally spaced nodes on `[lo, hi]`.
pub fn quadrature_grid(lo: f64, hi: f64, points: usize) -> Result<IntervalGrid> {
    IntervalGrid::new(lo, hi, points, QuadratureRule::Trapezoid)
}

impl IntervalGrid {
    pub fn new(lo: f64, hi: f64, points: usize, rule: QuadratureRule) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("degenerate interval [{lo}, {hi}]")));
        }
        if points < 2 {
            return Err(Error::Config(format!("need at least 2 quadrature points, got {points}")));
        }
        if rule == QuadratureRule::Simpson && points % 2 == 0 {
            return Err(Error::Config(format!("Simpson's rule needs an odd point count, got {points}")));
        }
        let h = (hi - lo) / (points - 1) as f64;
        let abscissae: Vec<f64> = (0..points)
            .map(|i| if i == points - 1 { hi } else { lo + i as f64 * h })
            .collect();
        let weights = match rule {
            QuadratureRule::Trapezoid => (0..points)
                .map(|i| if i == 0 || i == points - 1 { h / 2.0 } else { h })
                .collect(),
            QuadratureRule::Simpson => (0..points)
                .map(|i| {
                    if i == 0 || i == points - 1 {
                        h / 3.0
                    } else if i % 2 == 1 {
                        4.0 * h / 3.0
                    } else {
                        2.0 * h / 3.0
                    }
                })
                .collect(),
        };
        Ok(Self { lo, hi, rule, abscissae, weights })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn rule(&self) -> QuadratureRule {
        self.rule
    }

    /// Same interval and rule with `factor` times as many subintervals.
    pub fn refined(&self, factor: usize) -> Result<IntervalGrid> {
        IntervalGrid::new(self.lo, self.hi, (self.len() - 1) * factor.max(1) + 1, self.rule)
    }

    /// Interval length `|K|`.
    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn len(&self) -> usize {
        self.abscissae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissae.is_empty()
    }

    pub fn abscissae(&self) -> &[f64] {
        &self.abscissae
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.abscissae.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }

    /// Weighted sum of precomputed node values.
    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| w * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sm(rows: &[&[f64]]) -> SampleMatrix {
        SampleMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn gram_single_pair() {
        let g = rbf_cross_gram(&sm(&[&[0.0]]), &sm(&[&[1.0]]), KernelSpec::default()).unwrap();
        assert!((g.get(0, 0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((g.get(0, 0) - 0.6065306597126334).abs() < 1e-12);
    }

    #[test]
    fn gram_identical_points_is_one() {
        let a = sm(&[&[1.5, -2.0], &[0.25, 3.0]]);
        let g = rbf_cross_gram(&a, &a, KernelSpec::new(0.3).unwrap()).unwrap();
        assert_eq!(g.get(0, 0), 1.0);
        assert_eq!(g.get(1, 1), 1.0);
    }

    #[test]
    fn gram_wide_bandwidth_tends_to_one() {
        let a = sm(&[&[0.0, 1.0], &[4.0, -3.0]]);
        let b = sm(&[&[10.0, 2.0]]);
        let g = rbf_cross_gram(&a, &b, KernelSpec::new(1e8).unwrap()).unwrap();
        assert!(g.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn gram_dimension_mismatch_is_config_error() {
        let err = rbf_cross_gram(&sm(&[&[0.0]]), &sm(&[&[0.0, 1.0]]), KernelSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn non_finite_input_is_input_error() {
        let err = SampleMatrix::from_flat(1, 2, vec![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        assert!(KernelSpec::new(0.0).is_err());
        assert!(KernelSpec::new(-1.0).is_err());
    }

    #[test]
    fn normalize_examples() {
        let x = normalize_rows(&sm(&[&[3.0, 4.0]])).unwrap();
        assert!((x.row(0)[0] - 0.6).abs() < 1e-15 && (x.row(0)[1] - 0.8).abs() < 1e-15);
        let y = normalize_rows(&x).unwrap();
        assert!(x.as_slice().iter().zip(y.as_slice()).all(|(a, b)| (a - b).abs() < 1e-12));
        let err = normalize_rows(&sm(&[&[1.0, 0.0], &[0.0, 0.0]])).unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn pencil_examples() {
        let i2 = DMatrix::<f64>::identity(3, 3);
        let e = eigenvalues_pd_pencil(&i2, &i2).unwrap();
        assert!(e.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let e = eigenvalues_pd_pencil(&(DMatrix::identity(2, 2) * 4.0), &DMatrix::identity(2, 2)).unwrap();
        assert!(e.iter().all(|v| (v - 4.0).abs() < 1e-12));

        let s1 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 9.0]));
        let s2 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0]));
        let e = eigenvalues_pd_pencil(&s1, &s2).unwrap();
        assert!((e[0] - 0.25).abs() < 1e-12 && (e[1] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn pencil_reports_failing_matrix() {
        let good = DMatrix::<f64>::identity(2, 2);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match eigenvalues_pd_pencil(&bad, &good).unwrap_err() {
            Error::NotPositiveDefinite { which } => assert_eq!(which, "sigma1"),
            e => panic!("unexpected {e}"),
        }
        match eigenvalues_pd_pencil(&good, &bad).unwrap_err() {
            Error::NotPositiveDefinite { which } => assert_eq!(which, "sigma2"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn quadrature_examples() {
        let g = quadrature_grid(0.0, 1.0, 2).unwrap();
        assert_eq!(g.weights(), &[0.5, 0.5]);
        assert!((g.integrate(|_| 1.0) - 1.0).abs() < 1e-12);
        let g = quadrature_grid(0.0, 1.0, 1001).unwrap();
        assert!((g.integrate(|x| x * x) - 1.0 / 3.0).abs() < 1e-6);
        let s = IntervalGrid::new(0.0, 1.0, 11, QuadratureRule::Simpson).unwrap();
        assert!((s.integrate(|x| x * x) - 1.0 / 3.0).abs() < 1e-14);
        assert!(quadrature_grid(1.0, 1.0, 10).is_err());
        assert!(quadrature_grid(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn cholesky_solves() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let c = Cholesky::factor(&a, 3).unwrap();
        let mut b = vec![1.0, -2.0, 0.5];
        c.solve_in_place(&mut b);
        for i in 0..3 {
            let r: f64 = (0..3).map(|k| a[i * 3 + k] * b[k]).sum();
            assert!((r - [1.0, -2.0, 0.5][i]).abs() < 1e-12);
        }
        let det = 4.0 * (5.0 * 3.0 - 1.0) - 2.0 * (2.0 * 3.0 - 0.6) + 0.6 * (2.0 - 5.0 * 0.6);
        assert!((c.log_det() - f64::ln(det)).abs() < 1e-12);
        assert!(Cholesky::factor(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }

    fn random_points(n: usize, d: usize) -> impl Strategy<Value = SampleMatrix> {
        prop::collection::vec(-3.0f64..3.0, n * d).prop_map(move |v| SampleMatrix::from_flat(n, d, v).unwrap())
    }

    fn random_pd(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |v| {
            let a = DMatrix::from_row_slice(d, d, &v);
            &a * a.transpose() + DMatrix::identity(d, d) * 0.1
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn self_gram_is_symmetric_psd(a in (1usize..30, 1usize..5).prop_flat_map(|(n, d)| random_points(n, d)), s in 0.2f64..3.0) {
            let g = rbf_gram(&a, KernelSpec::new(s).unwrap());
            let m = g.to_dmatrix();
            for i in 0..a.n() {
                prop_assert!((m[(i, i)] - 1.0).abs() < 1e-12);
                for j in 0..a.n() {
                    prop_assert!((m[(i, j)] - m[(j, i)]).abs() < 1e-12);
                    prop_assert!(m[(i, j)] > 0.0 && m[(i, j)] <= 1.0);
                }
            }
            let min = SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(min >= -1e-9);
            // the mirrored self-Gram agrees with the generic cross-Gram
            let c = rbf_cross_gram(&a, &a, KernelSpec::new(s).unwrap()).unwrap();
            for (x, y) in c.values().iter().zip(g.values()) {
                prop_assert!((x - y).abs() < 1e-15);
            }
        }

        #[test]
        fn gram_invariant_under_rigid_motion(
            a in random_points(6, 2), b in random_points(5, 2),
            theta in 0.0f64..std::f64::consts::TAU, tx in -5.0f64..5.0, ty in -5.0f64..5.0,
        ) {
            let (c, s) = (theta.cos(), theta.sin());
            let mv = |m: &SampleMatrix| m.map_rows(|r, o| { o[0] = c * r[0] - s * r[1] + tx; o[1] = s * r[0] + c * r[1] + ty; }).unwrap();
            let spec = KernelSpec::new(1.3).unwrap();
            let g0 = rbf_cross_gram(&a, &b, spec).unwrap();
            let g1 = rbf_cross_gram(&mv(&a), &mv(&b), spec).unwrap();
            for (x, y) in g0.values().iter().zip(g1.values()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn pencil_of_equal_matrices_is_ones(s in (1usize..7).prop_flat_map(random_pd)) {
            let e = eigenvalues_pd_pencil(&s, &s).unwrap();
            prop_assert!(e.iter().all(|v| (v - 1.0).abs() < 1e-10));
        }

        #[test]
        fn quadrature_weights_sum_to_length(lo in -50.0f64..50.0, len in 1e-3f64..100.0, k in 1usize..2000) {
            let g = quadrature_grid(lo, lo + len, k + 1).unwrap();
            prop_assert!((g.weights().iter().sum::<f64>() - g.length()).abs() < 1e-10);
            let s = IntervalGrid::new(lo, lo + len, 2 * k + 1, QuadratureRule::Simpson).unwrap();
            prop_assert!((s.weights().iter().sum::<f64>() - s.length()).abs() < 1e-10);
        }
    }
}
