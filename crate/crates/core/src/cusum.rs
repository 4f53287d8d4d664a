//! CUSUM field of the feature matrix and the curves derived from it.
//!
//! For grid points `v_j = t_j/T <= u_i = t_i/T` and feature `k` the field is
//!
//! ```text
//! D(u_i, v_j, k) = S_k(t_j)/T - (t_j/t_i) S_k(t_i)/T,   S_k(m) = sum_{t<=m} f_k(X_t)
//! ```
//!
//! The measure curve is `sup_k sup_{j<=i} |D(u_i, v_j, k)|` and the running
//! maximum curve is its cumulative maximum. Suprema over `v` are taken on the
//! grid only.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Grids larger than this are thinned by [`default_grid`].
pub const MAX_FULL_GRID: usize = 2000;

/// Largest accepted condition number of the Setting II factor.
pub const MAX_FACTOR_CONDITION: f64 = 1e8;

/// Ascending points in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("empty grid".into()));
        }
        if points.iter().any(|&u| !(u > 0.0 && u <= 1.0)) {
            return Err(Error::InvalidArgument("grid points must lie in (0, 1]".into()));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("grid must be strictly ascending".into()));
        }
        Ok(Self { points })
    }

    /// All sample points `t/T`, `t = 1..=T`.
    pub fn full(t_len: usize) -> Self {
        Self {
            points: (1..=t_len).map(|t| t as f64 / t_len as f64).collect(),
        }
    }

    /// `n` roughly equispaced sample points `ceil(iT/n)/T`, ending at 1.
    pub fn subgrid(t_len: usize, n: usize) -> Result<Self> {
        if n == 0 || n > t_len {
            return Err(Error::InvalidArgument(format!(
                "subgrid size {n} must be in 1..={t_len}"
            )));
        }
        let points = (1..=n)
            .map(|i| ((i * t_len).div_ceil(n)) as f64 / t_len as f64)
            .collect();
        Ok(Self { points })
    }

    /// `i/n` for `i = 1..=n`.
    pub fn equispaced(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("grid size must be positive".into()));
        }
        Ok(Self {
            points: (1..=n).map(|i| i as f64 / n as f64).collect(),
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ends_at_one(&self) -> bool {
        self.points.last() == Some(&1.0)
    }

    /// 1-based sample indices `t_i` with `u_i = t_i/T`.
    pub fn sample_indices(&self, t_len: usize) -> Result<Vec<usize>> {
        self.points
            .iter()
            .map(|&u| {
                let x = u * t_len as f64;
                let t = x.round();
                if t < 1.0 || (x - t).abs() > 1e-9 * t_len as f64 {
                    Err(Error::OffGrid { point: u, t_len })
                } else {
                    Ok(t as usize)
                }
            })
            .collect()
    }
}

/// Full grid up to [`MAX_FULL_GRID`] points, otherwise a subgrid of that size.
pub fn default_grid(t_len: usize) -> Grid {
    if t_len <= MAX_FULL_GRID {
        Grid::full(t_len)
    } else {
        Grid::subgrid(t_len, MAX_FULL_GRID).expect("subgrid size below sample size")
    }
}

/// Normalization applied to a field.
#[derive(Debug, Clone, PartialEq)]
pub enum Scaling {
    None,
    /// Divided by a long-run standard deviation.
    Scalar(f64),
    /// Feature vectors left-multiplied by the inverse of this factor.
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct CusumField {
    grid: Grid,
    t_len: usize,
    /// Per feature, packed lower triangle: entry `(i, j)` with `j <= i` at `i(i+1)/2 + j`.
    values: Vec<Vec<f64>>,
    sup_curve: Vec<f64>,
    runmax_curve: Vec<f64>,
    scaling: Scaling,
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl CusumField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Sample size the field was computed from.
    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn n_features(&self) -> usize {
        self.values.len()
    }

    /// Field value at grid indices `j <= i` (0-based) for feature `k`.
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        assert!(j <= i, "field is defined for j <= i only");
        self.values[k][tri(i, j)]
    }

    /// Measure of time-variation at each grid point.
    pub fn sup_curve(&self) -> &[f64] {
        &self.sup_curve
    }

    /// Cumulative maximum of [`Self::sup_curve`].
    pub fn runmax_curve(&self) -> &[f64] {
        &self.runmax_curve
    }

    pub fn scaling(&self) -> &Scaling {
        &self.scaling
    }

    pub fn is_scaled(&self) -> bool {
        self.scaling != Scaling::None
    }

    fn refresh_curves(&mut self) {
        let n = self.grid.len();
        let mut sup = vec![0.0f64; n];
        for col in &self.values {
            for (i, s) in sup.iter_mut().enumerate() {
                let row = &col[tri(i, 0)..=tri(i, i)];
                *s = row.iter().fold(*s, |m, v| m.max(v.abs()));
            }
        }
        let mut run = 0.0f64;
        self.runmax_curve = sup
            .iter()
            .map(|&s| {
                run = run.max(s);
                run
            })
            .collect();
        self.sup_curve = sup;
    }

    /// Writes `u,sup,runmax` rows.
    pub fn write_curves_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "u,sup,runmax")?;
        for ((u, s), r) in self
            .grid
            .points()
            .iter()
            .zip(&self.sup_curve)
            .zip(&self.runmax_curve)
        {
            writeln!(w, "{u},{s:.16e},{r:.16e}")?;
        }
        Ok(())
    }
}

/// Computes the field from one prefix-sum pass per feature, `O(n^2 K)` overall.
pub fn cusum_field(features: &FeatureMatrix, grid: &Grid) -> Result<CusumField> {
    let t_len = features.len();
    let idx = grid.sample_indices(t_len)?;
    let n = grid.len();
    let total = t_len as f64;

    let mut values = Vec::with_capacity(features.n_features());
    for col in features.columns() {
        let mut prefix = Vec::with_capacity(t_len + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &x in col {
            acc += x;
            prefix.push(acc);
        }
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for &ti in &idx {
            let si = prefix[ti];
            let tif = ti as f64;
            let denom = tif * total;
            for &tj in &idx {
                if tj > ti {
                    break;
                }
                // t_i S_j - t_j S_i vanishes exactly on the diagonal
                packed.push((tif * prefix[tj] - tj as f64 * si) / denom);
            }
        }
        values.push(packed);
    }

    let mut field = CusumField {
        grid: grid.clone(),
        t_len,
        values,
        sup_curve: Vec::new(),
        runmax_curve: Vec::new(),
        scaling: Scaling::None,
    };
    field.refresh_curves();
    Ok(field)
}

/// Divides a single-feature field by a long-run standard deviation.
pub fn scale_setting1(mut field: CusumField, sigma: f64) -> Result<CusumField> {
    if field.is_scaled() {
        return Err(Error::AlreadyScaled);
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scale must be positive and finite, got {sigma}"
        )));
    }
    if field.n_features() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: field.n_features(),
        });
    }
    for v in field.values.iter_mut().flatten() {
        *v /= sigma;
    }
    field.scaling = Scaling::Scalar(sigma);
    field.refresh_curves();
    Ok(field)
}

/// Replaces every feature vector `(D(u,v,f_1), ..., D(u,v,f_K))` by
/// `A^{-1}` times it, where `A A^T` is the long-run covariance.
pub fn scale_setting2(mut field: CusumField, factor: &DMatrix<f64>) -> Result<CusumField> {
    if field.is_scaled() {
        return Err(Error::AlreadyScaled);
    }
    let k = field.n_features();
    if factor.nrows() != k || factor.ncols() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: factor.nrows(),
        });
    }
    let sv = factor.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= MAX_FACTOR_CONDITION) {
        return Err(Error::Singular { cond });
    }
    let inv = factor
        .clone()
        .try_inverse()
        .ok_or(Error::Singular { cond })?;

    let len = field.values[0].len();
    let mut x = DVector::zeros(k);
    let mut y = DVector::zeros(k);
    for p in 0..len {
        for (kk, col) in field.values.iter().enumerate() {
            x[kk] = col[p];
        }
        inv.mul_to(&x, &mut y);
        for (kk, col) in field.values.iter_mut().enumerate() {
            col[p] = y[kk];
        }
    }
    field.scaling = Scaling::Matrix(factor.clone());
    field.refresh_curves();
    Ok(field)
}

/// Writes a two-column `u,value` CSV.
pub fn write_curve_csv<W: Write>(mut w: W, header: &str, u: &[f64], values: &[f64]) -> io::Result<()> {
    writeln!(w, "u,{header}")?;
    for (a, b) in u.iter().zip(values) {
        writeln!(w, "{a},{b:.16e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{evaluate, FeatureFamily};
    use crate::series::TimeSeries;

    fn mean_field(x: &[f64]) -> CusumField {
        let s = TimeSeries::univariate(x.to_vec()).unwrap();
        let fm = evaluate(&FeatureFamily::mean(), &s).unwrap();
        cusum_field(&fm, &Grid::full(x.len())).unwrap()
    }

    #[test]
    fn constant_series_zero_field() {
        let f = mean_field(&[2.5; 30]);
        assert!(f.values[0].iter().all(|&v| v == 0.0));
        assert!(f.sup_curve().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diagonal_is_exactly_zero() {
        let x: Vec<f64> = (0..37).map(|t| ((t * 7919) % 101) as f64 / 13.0 - 3.3).collect();
        let f = mean_field(&x);
        for i in 0..x.len() {
            assert_eq!(f.get(i, i, 0), 0.0);
        }
    }

    #[test]
    fn hand_computed_small_case() {
        // x = [1, 3, 2], T = 3.  D(u_3, v_1) = 1/3 - (1/3)(6/3) = -1/3
        let f = mean_field(&[1.0, 3.0, 2.0]);
        assert!((f.get(2, 0, 0) + 1.0 / 3.0).abs() < 1e-15);
        // D(u_2, v_1) = 1/3 - (1/2)(4/3) = -1/3
        assert!((f.get(1, 0, 0) + 1.0 / 3.0).abs() < 1e-15);
        // D(u_3, v_2) = 4/3 - (2/3)(6/3) = 0
        assert!(f.get(2, 1, 0).abs() < 1e-15);
        assert!((f.sup_curve()[2] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn runmax_is_cumulative_max() {
        let x: Vec<f64> = (0..50).map(|t| ((t * 31) % 17) as f64).collect();
        let f = mean_field(&x);
        let mut m = 0.0f64;
        for (s, r) in f.sup_curve().iter().zip(f.runmax_curve()) {
            m = m.max(*s);
            assert_eq!(*r, m);
        }
    }

    #[test]
    fn off_grid_point_rejected() {
        let s = TimeSeries::univariate(vec![1.0; 10]).unwrap();
        let fm = evaluate(&FeatureFamily::mean(), &s).unwrap();
        let g = Grid::new(vec![0.25, 1.0]).unwrap();
        assert!(matches!(cusum_field(&fm, &g), Err(Error::OffGrid { .. })));
    }

    #[test]
    fn subgrid_ends_at_one_and_is_on_sample_grid() {
        let g = Grid::subgrid(4999, 2000).unwrap();
        assert!(g.ends_at_one());
        assert_eq!(g.len(), 2000);
        assert!(g.sample_indices(4999).is_ok());
        assert_eq!(default_grid(100).len(), 100);
        assert_eq!(default_grid(5000).len(), 2000);
    }

    #[test]
    fn setting1_scaling() {
        let x: Vec<f64> = (0..20).map(|t| (t as f64).sin()).collect();
        let f = mean_field(&x);
        let one = scale_setting1(f.clone(), 1.0).unwrap();
        assert_eq!(one.values, f.values);
        let half = scale_setting1(f.clone(), 2.0).unwrap();
        for (a, b) in half.values[0].iter().zip(&f.values[0]) {
            assert_eq!(*a, b / 2.0);
        }
        assert_eq!(half.sup_curve()[19], f.sup_curve()[19] / 2.0);
        assert!(matches!(scale_setting1(half, 2.0), Err(Error::AlreadyScaled)));
        assert!(scale_setting1(f.clone(), 0.0).is_err());
        assert!(scale_setting1(f, -1.0).is_err());
    }

    #[test]
    fn setting2_identity_and_diagonal() {
        let s = TimeSeries::new((0..40).map(|v| (v as f64 * 0.7).cos()).collect(), 20, 2).unwrap();
        let fam = FeatureFamily::covariance_matrix(2).unwrap();
        let fm = evaluate(&fam, &s).unwrap();
        let f = cusum_field(&fm, &Grid::full(20)).unwrap();
        let id = scale_setting2(f.clone(), &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(id.values, f.values);
        let two = scale_setting2(f.clone(), &(DMatrix::identity(3, 3) * 2.0)).unwrap();
        for (a, b) in two.values.iter().flatten().zip(f.values.iter().flatten()) {
            assert!((a - b / 2.0).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn setting2_singular_factor() {
        let s = TimeSeries::new((0..40).map(|v| v as f64).collect(), 20, 2).unwrap();
        let fm = evaluate(&FeatureFamily::covariance_matrix(2).unwrap(), &s).unwrap();
        let f = cusum_field(&fm, &Grid::full(20)).unwrap();
        let mut a = DMatrix::identity(3, 3);
        a[(2, 2)] = 0.0;
        assert!(matches!(scale_setting2(f, &a), Err(Error::Singular { .. })));
    }
}
