//! Quantiles of the supremum of the limiting Gaussian process.
//!
//! The covariance of `H(u, v, k)` is assembled over the triangular index set
//! `{(i, j, k) : j <= i}` of a grid, repaired to be positive semidefinite by
//! eigenvalue clipping, and sampled through the spectral factor
//! `S sqrt(Lambda')`. For each draw the running supremum
//! `max_k max_{j <= i' <= i} |H(u_i', u_j, k)|` is recorded, and the
//! empirical `(1 - alpha)`-quantiles over draws form the quantile curve.
//!
//! Under the scalar or matrix normalization the kernel is known in closed
//! form and features are independent; otherwise the long-run variances are
//! plugged in from estimates.

use std::collections::HashMap;
use std::io::{self, Write};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::cusum::Grid;
use crate::error::{Error, Result};

pub const DEFAULT_REL_THRESHOLD: f64 = 1e-10;
pub const DEFAULT_SIM_GRID: usize = 50;
pub const DEFAULT_DRAWS: usize = 5000;
pub const MIN_DRAWS: usize = 100;

/// Draws sharing one RNG substream.
const DRAW_BLOCK: usize = 256;

/// Covariance of the normalized limit process:
/// `(v v'/u u') min(u,u') - (v'/u') min(v,u') - (v/u) min(u,v') + min(v,v')`.
pub fn known_cov(u: f64, u2: f64, v: f64, v2: f64) -> f64 {
    (v * v2) / (u * u2) * u.min(u2) - (v2 / u2) * v.min(u2) - (v / u) * u.min(v2) + v.min(v2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    Known,
    PlugIn,
}

/// Covariance kernel of the limit process on a grid.
#[derive(Debug, Clone)]
pub struct CovKernel {
    mode: KernelMode,
    /// Plug-in only: `sigma2[m][(k, k')]` at grid point `m`.
    table: Vec<DMatrix<f64>>,
}

impl CovKernel {
    pub fn known() -> Self {
        Self {
            mode: KernelMode::Known,
            table: Vec::new(),
        }
    }

    /// Tabulates `sigma2(u, k, k')` at every grid point. The function should
    /// estimate the long-run cross-covariance accumulated over `[0, u]`.
    pub fn plug_in(
        grid: &Grid,
        n_features: usize,
        sigma2: impl Fn(f64, usize, usize) -> Result<f64>,
    ) -> Result<Self> {
        let mut table = Vec::with_capacity(grid.len());
        for &u in grid.points() {
            let mut m = DMatrix::zeros(n_features, n_features);
            for a in 0..n_features {
                for b in a..n_features {
                    let v = sigma2(u, a, b)?;
                    m[(a, b)] = v;
                    m[(b, a)] = v;
                }
            }
            table.push(m);
        }
        Ok(Self {
            mode: KernelMode::PlugIn,
            table,
        })
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

fn triangle_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).collect()
}

/// Covariance matrix over `(i, j, k)`, `j <= i`, ordered feature-major and
/// then by packed lower-triangle position.
pub fn assemble_covariance(kernel: &CovKernel, grid: &Grid, n_features: usize) -> Result<DMatrix<f64>> {
    let n = grid.len();
    let u = grid.points();
    if kernel.mode == KernelMode::PlugIn
        && (kernel.table.len() != n
            || kernel.table.iter().any(|m| m.nrows() != n_features))
    {
        return Err(Error::InvalidArgument(
            "plug-in kernel was tabulated on a different grid or family".into(),
        ));
    }
    let pairs = triangle_pairs(n);
    let ntri = pairs.len();
    let dim = ntri * n_features;
    let mut m = DMatrix::zeros(dim, dim);

    for k in 0..n_features {
        for k2 in 0..n_features {
            if kernel.mode == KernelMode::Known && k != k2 {
                continue;
            }
            for (a, &(i, j)) in pairs.iter().enumerate() {
                let (ui, vj) = (u[i], u[j]);
                for (b, &(i2, j2)) in pairs.iter().enumerate() {
                    let (ui2, vj2) = (u[i2], u[j2]);
                    let c = match kernel.mode {
                        KernelMode::Known => known_cov(ui, ui2, vj, vj2),
                        KernelMode::PlugIn => {
                            // grid is ascending, so min over points is min over indices
                            let s = |p: usize| kernel.table[p][(k, k2)];
                            (vj * vj2) / (ui * ui2) * s(i.min(i2))
                                - (vj2 / ui2) * s(j.min(i2))
                                - (vj / ui) * s(i.min(j2))
                                + s(j.min(j2))
                        }
                    };
                    m[(k * ntri + a, k2 * ntri + b)] = c;
                }
            }
        }
    }
    Ok(m)
}

/// Result of eigenvalue clipping.
#[derive(Debug, Clone)]
pub struct PsdRepair {
    /// `S Lambda' S^T`.
    pub matrix: DMatrix<f64>,
    /// Clipped eigenvalues, in the solver's order.
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub rank: usize,
    /// `sum |clipped eigenvalues| / sum |eigenvalues|`.
    pub clipped_mass: f64,
}

struct Spectrum {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    rank: usize,
    clipped_mass: f64,
}

fn clipped_spectrum(m: &DMatrix<f64>, rel_threshold: f64) -> Result<Spectrum> {
    if !m.is_square() {
        return Err(Error::InvalidArgument("matrix must be square".into()));
    }
    if m.nrows() == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut values = eig.eigenvalues;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    let total: f64 = values.iter().map(|v| v.abs()).sum();
    let cutoff = rel_threshold * values.max();
    let mut clipped = 0.0;
    let mut rank = 0;
    for v in values.iter_mut() {
        if *v < cutoff || *v <= 0.0 {
            clipped += v.abs();
            *v = 0.0;
        } else {
            rank += 1;
        }
    }
    Ok(Spectrum {
        values,
        vectors: eig.eigenvectors,
        rank,
        clipped_mass: if total > 0.0 { clipped / total } else { 0.0 },
    })
}

/// Sets eigenvalues below `rel_threshold * lambda_max` to zero and rebuilds
/// the matrix. The input is symmetrized first.
pub fn psd_repair(m: &DMatrix<f64>, rel_threshold: f64) -> Result<PsdRepair> {
    let spec = clipped_spectrum(m, rel_threshold)?;
    let factor = factor_from(&spec);
    let matrix = &factor * factor.transpose();
    Ok(PsdRepair {
        matrix,
        eigenvalues: spec.values,
        eigenvectors: spec.vectors,
        rank: spec.rank,
        clipped_mass: spec.clipped_mass,
    })
}

/// `S_r sqrt(Lambda_r)` over the retained eigenpairs.
fn factor_from(spec: &Spectrum) -> DMatrix<f64> {
    let n = spec.vectors.nrows();
    let kept: Vec<usize> = (0..spec.values.len()).filter(|&i| spec.values[i] > 0.0).collect();
    let mut f = DMatrix::zeros(n, kept.len());
    for (c, &i) in kept.iter().enumerate() {
        let s = spec.values[i].sqrt();
        f.set_column(c, &(spec.vectors.column(i) * s));
    }
    f
}

/// Spectral factor `F` with `F F^T` equal to the repaired matrix.
pub fn spectral_factor(m: &DMatrix<f64>, rel_threshold: f64) -> Result<DMatrix<f64>> {
    Ok(factor_from(&clipped_spectrum(m, rel_threshold)?))
}

type FactorKey = (Vec<u64>, u64);

fn known_factor(grid: &Grid, rel_threshold: f64) -> Result<Arc<DMatrix<f64>>> {
    static CACHE: OnceLock<Mutex<HashMap<FactorKey, Arc<DMatrix<f64>>>>> = OnceLock::new();
    let key = (
        grid.points().iter().map(|u| u.to_bits()).collect(),
        rel_threshold.to_bits(),
    );
    let cache = CACHE.get_or_init(Default::default);
    if let Some(f) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
        return Ok(Arc::clone(f));
    }
    let m = assemble_covariance(&CovKernel::known(), grid, 1)?;
    let f = Arc::new(spectral_factor(&m, rel_threshold)?);
    cache
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .insert(key, Arc::clone(&f));
    Ok(f)
}

/// Simulated running suprema, sorted per grid point, reusable across levels.
#[derive(Debug, Clone)]
pub struct SupDraws {
    grid: Grid,
    mode: KernelMode,
    n_features: usize,
    draws: usize,
    seed: u64,
    rank: usize,
    /// `sorted[i]` holds the draws of the running supremum at `u_i`, ascending.
    sorted: Vec<Vec<f64>>,
}

impl SupDraws {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Rank of the sampling factor (per feature block for the known kernel).
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Empirical `(1 - alpha)`-quantile at grid index `i`, taken as the
    /// order statistic of rank `ceil((1 - alpha) N)`.
    pub fn quantile_at(&self, i: usize, alpha: f64) -> f64 {
        let col = &self.sorted[i];
        let n = col.len();
        let rank = (((1.0 - alpha) * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
        col[rank - 1]
    }

    pub fn quantile_curve(&self, alpha: f64) -> Result<QuantileCurve> {
        check_alpha(alpha)?;
        let q = (0..self.grid.len()).map(|i| self.quantile_at(i, alpha)).collect();
        let mut warnings = Vec::new();
        if alpha * (self.draws as f64) < 5.0 {
            warnings.push(format!(
                "only {:.1} expected exceedances for alpha = {alpha} with {} draws",
                alpha * self.draws as f64,
                self.draws
            ));
        }
        Ok(QuantileCurve {
            alpha,
            grid: self.grid.clone(),
            q,
            draws: self.draws,
            seed: self.seed,
            mode: self.mode,
            n_features: self.n_features,
            warnings,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Simulates `draws` realizations of the running supremum on `grid`.
///
/// Draws are split into fixed blocks, each with its own ChaCha8 stream
/// derived from `seed`, so results do not depend on evaluation order.
pub fn simulate_sup_draws(
    kernel: &CovKernel,
    grid: &Grid,
    n_features: usize,
    draws: usize,
    seed: u64,
    rel_threshold: f64,
) -> Result<SupDraws> {
    if draws < MIN_DRAWS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_DRAWS} draws, got {draws}"
        )));
    }
    if n_features == 0 {
        return Err(Error::InvalidArgument("no features".into()));
    }
    let n = grid.len();
    let ntri = n * (n + 1) / 2;

    // Known kernel: independent features sharing one factor over the triangle.
    // Plug-in: one joint factor over all features.
    let (factor, blocks) = match kernel.mode {
        KernelMode::Known => (known_factor(grid, rel_threshold)?, n_features),
        KernelMode::PlugIn => {
            let m = assemble_covariance(kernel, grid, n_features)?;
            (Arc::new(spectral_factor(&m, rel_threshold)?), 1)
        }
    };
    let rank = factor.ncols();
    let block_len = factor.nrows();

    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(draws); n];
    let mut z = DVector::zeros(rank);
    let mut h = DVector::zeros(block_len);
    let mut row_max = vec![0.0f64; n];

    for (b, start) in (0..draws).step_by(DRAW_BLOCK).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64 + 1);
        for _ in start..(start + DRAW_BLOCK).min(draws) {
            row_max.iter_mut().for_each(|m| *m = 0.0);
            for _ in 0..blocks {
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                h.gemv(1.0, &factor, &z, 0.0);
                for part in h.as_slice().chunks_exact(ntri) {
                    for (i, m) in row_max.iter_mut().enumerate() {
                        let row = &part[tri(i, 0)..=tri(i, i)];
                        *m = row.iter().fold(*m, |acc, v| acc.max(v.abs()));
                    }
                }
            }
            let mut run = 0.0f64;
            for (col, m) in columns.iter_mut().zip(&row_max) {
                run = run.max(*m);
                col.push(run);
            }
        }
    }
    for col in &mut columns {
        col.sort_by(f64::total_cmp);
    }
    Ok(SupDraws {
        grid: grid.clone(),
        mode: kernel.mode,
        n_features,
        draws,
        seed,
        rank,
        sorted: columns,
    })
}

pub fn simulate_quantiles(
    kernel: &CovKernel,
    grid: &Grid,
    n_features: usize,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<QuantileCurve> {
    check_alpha(alpha)?;
    simulate_sup_draws(kernel, grid, n_features, draws, seed, DEFAULT_REL_THRESHOLD)?
        .quantile_curve(alpha)
}

/// Estimated `(1 - alpha)`-quantiles of the running supremum on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileCurve {
    pub alpha: f64,
    #[serde(serialize_with = "ser_grid")]
    pub grid: Grid,
    pub q: Vec<f64>,
    pub draws: usize,
    pub seed: u64,
    pub mode: KernelMode,
    pub n_features: usize,
    pub warnings: Vec<String>,
}

fn ser_grid<S: serde::Serializer>(g: &Grid, s: S) -> std::result::Result<S::Ok, S::Error> {
    g.points().serialize(s)
}

impl QuantileCurve {
    /// Left-continuous step reading: the quantile at the largest grid point
    /// `<= u`, or at the first grid point when `u` lies below the grid.
    pub fn value_at(&self, u: f64) -> f64 {
        let pts = self.grid.points();
        let idx = pts.partition_point(|&p| p <= u + 1e-12);
        self.q[idx.saturating_sub(1)]
    }

    /// Value at the last grid point.
    pub fn terminal(&self) -> f64 {
        *self.q.last().expect("non-empty grid")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        crate::cusum::write_curve_csv(w, "q", self.grid.points(), &self.q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_kernel_degenerate_diagonal() {
        for &u in &[0.1, 0.5, 1.0] {
            assert_eq!(known_cov(u, u, u, u), 0.0);
        }
    }

    #[test]
    fn known_kernel_at_one_is_brownian_bridge() {
        for &(v, v2) in &[(0.2, 0.7), (0.5, 0.5), (0.9, 0.1)] {
            let bb: f64 = f64::min(v, v2) - v * v2;
            assert!((known_cov(1.0, 1.0, v, v2) - bb).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_features_are_independent_under_known_kernel() {
        let g = Grid::equispaced(4).unwrap();
        let m = assemble_covariance(&CovKernel::known(), &g, 2).unwrap();
        assert_eq!(m.nrows(), 20);
        assert!(m.view((0, 10), (10, 10)).iter().all(|&v| v == 0.0));
        assert_eq!(m.view((0, 0), (10, 10)), m.view((10, 10), (10, 10)));
    }

    #[test]
    fn repair_tiny_negative() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-15]));
        let r = psd_repair(&m, DEFAULT_REL_THRESHOLD).unwrap();
        assert_eq!(r.rank, 1);
        assert!((r.matrix[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(r.matrix[(1, 1)].abs() < 1e-15);
        assert!(r.matrix[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn repair_keeps_psd_input() {
        let b = DMatrix::from_fn(6, 4, |i, j| ((i * 3 + j * 7) % 5) as f64 - 2.0);
        let m = &b * b.transpose();
        let r = psd_repair(&m, DEFAULT_REL_THRESHOLD).unwrap();
        assert!((r.matrix - &m).abs().max() < 1e-10);
        assert_eq!(r.rank, 4);
    }

    #[test]
    fn quantile_rule_is_ceiling_order_statistic() {
        let g = Grid::equispaced(2).unwrap();
        let mut sd = simulate_sup_draws(&CovKernel::known(), &g, 1, 100, 1, 1e-10).unwrap();
        sd.sorted = vec![(1..=100).map(f64::from).collect(); 2];
        assert_eq!(sd.quantile_at(0, 0.1), 90.0);
        assert_eq!(sd.quantile_at(0, 0.5), 50.0);
        assert_eq!(sd.quantile_at(0, 0.015), 99.0);
        assert_eq!(sd.quantile_at(0, 0.999), 1.0);
    }

    #[test]
    fn value_at_reads_left_step() {
        let c = QuantileCurve {
            alpha: 0.1,
            grid: Grid::new(vec![0.25, 0.5, 0.75, 1.0]).unwrap(),
            q: vec![1.0, 2.0, 3.0, 4.0],
            draws: 100,
            seed: 0,
            mode: KernelMode::Known,
            n_features: 1,
            warnings: vec![],
        };
        assert_eq!(c.value_at(0.1), 1.0);
        assert_eq!(c.value_at(0.5), 2.0);
        assert_eq!(c.value_at(0.74), 2.0);
        assert_eq!(c.value_at(1.0), 4.0);
        assert_eq!(c.terminal(), 4.0);
    }

    #[test]
    fn argument_checks() {
        let g = Grid::equispaced(3).unwrap();
        assert!(simulate_quantiles(&CovKernel::known(), &g, 1, 0.1, 50, 0).is_err());
        assert!(simulate_quantiles(&CovKernel::known(), &g, 1, 1.0, 200, 0).is_err());
        assert!(simulate_quantiles(&CovKernel::known(), &g, 1, 0.0, 200, 0).is_err());
    }

    #[test]
    fn few_draws_warns() {
        let g = Grid::equispaced(3).unwrap();
        let c = simulate_quantiles(&CovKernel::known(), &g, 1, 0.01, 200, 0).unwrap();
        assert_eq!(c.warnings.len(), 1);
    }
}
