//! Dense vector arithmetic, thresholded Gram–Schmidt and complement projection.

use std::fmt;
use std::ops::Index;

use crate::error::{Error, Result};

/// Flat parameter (or gradient) vector.
#[derive(Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("ParamVector").field(&self.0).finish()
    }
}

impl ParamVector {
    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "parameter vector")?;
        Ok(ParamVector(values))
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        dot_slices(&self.0, &self.0).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, scale: f64, other: &ParamVector) -> Result<ParamVector> {
        same_len(self.len(), other.len())?;
        Ok(ParamVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + scale * b)
                .collect(),
        ))
    }

    pub fn scaled(&self, scale: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|x| scale * x).collect())
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.add_scaled(-1.0, other)
    }

    pub(crate) fn axpy_in_place(&mut self, scale: f64, other: &ParamVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    /// Largest entrywise absolute difference.
    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        same_len(self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values)
    }
}

pub(crate) fn check_finite(values: &[f64], context: &str) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::non_finite(context))
    }
}

fn same_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}

/// Left-to-right accumulation; the order is fixed so results are reproducible.
#[inline]
pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn dot(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    same_len(a.len(), b.len())?;
    Ok(dot_slices(&a.0, &b.0))
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                found: data.len(),
            });
        }
        check_finite(&data, "matrix")?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            same_len(cols, r.len())?;
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// How the Gram–Schmidt acceptance threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Absolute(f64),
    /// Multiple of the largest candidate norm.
    Relative(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Relative(1e-6)
    }
}

impl Threshold {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            Threshold::Absolute(v) | Threshold::Relative(v) => v,
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::config(format!("delta must be positive and finite, got {v}")))
        }
    }

    /// Absolute δ for a candidate set. Never zero, so zero vectors are always rejected.
    pub fn resolve(&self, candidates: &[ParamVector]) -> f64 {
        match *self {
            Threshold::Absolute(v) => v,
            Threshold::Relative(r) => {
                let max = candidates.iter().map(ParamVector::norm).fold(0.0, f64::max);
                (r * max).max(f64::MIN_POSITIVE)
            }
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Absolute(v) => write!(f, "{v:e}"),
            Threshold::Relative(v) => write!(f, "rel:{v:e}"),
        }
    }
}

impl std::str::FromStr for Threshold {
    type Err = Error;
    /// `rel:<r>` for a relative threshold, a bare number for an absolute one.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (rel, num) = match s.strip_prefix("rel:") {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let v: f64 = num
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("delta `{s}` is not a number or rel:<number>")))?;
        let t = if rel { Threshold::Relative(v) } else { Threshold::Absolute(v) };
        t.validate()?;
        Ok(t)
    }
}

/// Columns produced by [`gram_schmidt`], with the candidate index each came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OrthonormalBasis {
    columns: Vec<ParamVector>,
    accepted: Vec<usize>,
}

impl OrthonormalBasis {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Wraps columns that the caller guarantees are orthonormal.
    pub fn from_columns(columns: Vec<ParamVector>) -> Result<Self> {
        if let Some(first) = columns.first() {
            for c in &columns {
                same_len(first.len(), c.len())?;
            }
        }
        let accepted = (0..columns.len()).collect();
        Ok(OrthonormalBasis { columns, accepted })
    }

    pub fn rank(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[ParamVector] {
        &self.columns
    }

    /// Indices (into the candidate list) of the candidates that were kept.
    pub fn accepted(&self) -> &[usize] {
        &self.accepted
    }

    pub fn dim(&self) -> Option<usize> {
        self.columns.first().map(ParamVector::len)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        match self.dim() {
            Some(d) => same_len(d, len),
            None => Ok(()),
        }
    }

    /// `Uᵀ g`.
    pub fn coefficients(&self, g: &ParamVector) -> Result<Vec<f64>> {
        self.check_dim(g.len())?;
        Ok(self.columns.iter().map(|u| dot_slices(&g.0, &u.0)).collect())
    }

    /// Largest entry of `|UᵀU − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.columns.iter().enumerate() {
            for (j, b) in self.columns.iter().enumerate().skip(i) {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot_slices(&a.0, &b.0) - target).abs());
            }
        }
        worst
    }
}

/// Thresholded classical Gram–Schmidt with one re-orthogonalization pass.
///
/// Candidates are processed in order. Candidate `k` is kept iff the norm of
/// its residual against the already accepted directions is at least `delta`;
/// kept residuals are scaled by `1 / (‖v‖ + epsilon)`. A nonzero `epsilon`
/// shrinks every column to norm `‖v‖ / (‖v‖ + epsilon)`.
pub fn gram_schmidt(
    candidates: &[ParamVector],
    delta: f64,
    epsilon: f64,
) -> Result<OrthonormalBasis> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::config(format!("delta must be positive, got {delta}")));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::config(format!(
            "epsilon must be non-negative, got {epsilon}"
        )));
    }
    if let Some(first) = candidates.first() {
        for (k, c) in candidates.iter().enumerate() {
            same_len(first.len(), c.len())?;
            check_finite(&c.0, &format!("gram-schmidt candidate {k}"))?;
        }
    }

    let mut basis = OrthonormalBasis::empty();
    for (k, g) in candidates.iter().enumerate() {
        let mut v = g.clone();
        // CGS2: the second sweep removes what the first left behind through cancellation.
        for _ in 0..2 {
            let coeffs = basis.coefficients(&v)?;
            for (c, u) in coeffs.iter().zip(&basis.columns) {
                v.axpy_in_place(-c, u);
            }
        }
        let norm = v.norm();
        if norm >= delta && norm > 0.0 {
            let scale = 1.0 / (norm + epsilon);
            basis.columns.push(v.scaled(scale));
            basis.accepted.push(k);
        }
    }
    Ok(basis)
}

/// `g − U(Uᵀg)`: removes the components of `g` that lie in the span of `basis`.
pub fn project_complement(g: &ParamVector, basis: &OrthonormalBasis) -> Result<ParamVector> {
    let coeffs = basis.coefficients(g)?;
    let mut out = g.clone();
    for (c, u) in coeffs.iter().zip(&basis.columns) {
        out.axpy_in_place(-c, u);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, d: usize) -> ParamVector {
        pv(&(0..d).map(|_| StandardNormal.sample(rng)).collect::<Vec<f64>>())
    }

    /// Neumaier-compensated sum, independent of `dot`'s plain accumulation.
    fn compensated_dot(a: &[f64], b: &[f64]) -> f64 {
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for (x, y) in a.iter().zip(b) {
            let term = x * y;
            let t = sum + term;
            if sum.abs() >= term.abs() {
                comp += (sum - t) + term;
            } else {
                comp += (term - t) + sum;
            }
            sum = t;
        }
        sum + comp
    }

    #[test]
    fn dot_small_cases() {
        assert_eq!(dot(&pv(&[1.0, 2.0, 3.0]), &pv(&[4.0, 5.0, 6.0])).unwrap(), 32.0);
        let z = ParamVector::zeros(7);
        assert_eq!(dot(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn dot_matches_compensated_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, 1000);
        let b = random(&mut rng, 1000);
        let got = dot(&a, &b).unwrap();
        let want = compensated_dot(a.as_slice(), b.as_slice());
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn dot_rejects_length_mismatch() {
        let err = dot(&pv(&[1.0, 2.0]), &pv(&[1.0])).unwrap_err();
        assert_eq!(err, Error::Dimension { expected: 2, found: 1 });
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn gram_schmidt_hand_cases() {
        let b = gram_schmidt(&[pv(&[1.0, 0.0, 0.0]), pv(&[1.0, 1.0, 0.0])], 1e-6, 0.0).unwrap();
        assert_eq!(b.rank(), 2);
        assert_eq!(b.columns()[0], pv(&[1.0, 0.0, 0.0]));
        assert_eq!(b.columns()[1], pv(&[0.0, 1.0, 0.0]));

        let b = gram_schmidt(&[pv(&[2.0, 0.0]), pv(&[4.0, 0.0])], 1e-6, 0.0).unwrap();
        assert_eq!(b.rank(), 1);
        assert_eq!(b.columns()[0], pv(&[1.0, 0.0]));
        assert_eq!(b.accepted(), &[0]);
    }

    #[test]
    fn gram_schmidt_random_gram_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cands: Vec<_> = (0..5).map(|_| random(&mut rng, 100)).collect();
        let b = gram_schmidt(&cands, 1e-8, 0.0).unwrap();
        assert_eq!(b.rank(), 5);
        // Gram matrix formed explicitly, entry by entry.
        for i in 0..5 {
            for j in 0..5 {
                let g: f64 = b.columns()[i]
                    .iter()
                    .zip(b.columns()[j].iter())
                    .map(|(x, y)| x * y)
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() <= 1e-10, "G[{i}][{j}] = {g}");
            }
        }
    }

    #[test]
    fn zero_candidate_is_discarded_even_without_epsilon() {
        let b = gram_schmidt(&[ParamVector::zeros(3), pv(&[0.0, 3.0, 0.0])], 1e-6, 0.0).unwrap();
        assert_eq!(b.rank(), 1);
        assert_eq!(b.accepted(), &[1]);
        let t = Threshold::Relative(1e-6).resolve(&[ParamVector::zeros(3)]);
        assert!(t > 0.0);
    }

    #[test]
    fn epsilon_shrinks_columns() {
        let b = gram_schmidt(&[pv(&[2.0, 0.0])], 1e-6, 1.0).unwrap();
        assert!((b.columns()[0][0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gram_schmidt_errors() {
        assert!(matches!(
            gram_schmidt(&[pv(&[1.0, 0.0]), pv(&[1.0])], 1e-6, 0.0),
            Err(Error::Dimension { .. })
        ));
        let bad = ParamVector::from_raw(vec![f64::NAN, 1.0]);
        assert!(matches!(
            gram_schmidt(&[bad], 1e-6, 0.0),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(gram_schmidt(&[], 0.0, 0.0), Err(Error::Config(_))));
        assert!(matches!(gram_schmidt(&[], 1.0, -1.0), Err(Error::Config(_))));
        assert_eq!(gram_schmidt(&[], 1e-6, 0.0).unwrap().rank(), 0);
    }

    #[test]
    fn projection_hand_cases() {
        let basis = OrthonormalBasis::from_columns(vec![pv(&[1.0, 0.0])]).unwrap();
        assert_eq!(project_complement(&pv(&[1.0, 1.0]), &basis).unwrap(), pv(&[0.0, 1.0]));
        assert_eq!(project_complement(&pv(&[3.0, 0.0]), &basis).unwrap(), pv(&[0.0, 0.0]));
        let g = pv(&[1.5, -2.0]);
        assert_eq!(project_complement(&g, &OrthonormalBasis::empty()).unwrap(), g);
        assert!(project_complement(&pv(&[1.0, 2.0, 3.0]), &basis).is_err());
    }

    #[test]
    fn projection_reconstructs_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cands: Vec<_> = (0..3).map(|_| random(&mut rng, 50)).collect();
        let basis = gram_schmidt(&cands, 1e-8, 0.0).unwrap();
        let g = random(&mut rng, 50);
        let gt = project_complement(&g, &basis).unwrap();
        let gn = g.norm();
        for u in basis.columns() {
            assert!(dot(&gt, u).unwrap().abs() <= 1e-9 * gn);
        }
        let mut rebuilt = gt.clone();
        for (c, u) in basis.coefficients(&g).unwrap().iter().zip(basis.columns()) {
            rebuilt = rebuilt.add_scaled(*c, u).unwrap();
        }
        assert!(rebuilt.max_abs_diff(&g).unwrap() <= 1e-12);
        assert!(gt.norm() <= gn);
    }
}
