//! Test-side oracles, written without the library's prefix sums or formulas.
#![allow(dead_code)]

use gradwatch::features::FeatureFamily;
use gradwatch::series::TimeSeries;
use gradwatch::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `D(u_i, v_j, k)` by direct summation over the raw feature values.
pub fn naive_field(series: &TimeSeries, family: &FeatureFamily, grid_t: &[usize]) -> Vec<Vec<Vec<f64>>> {
    let t_len = series.len() as f64;
    let f = |t: usize, k: usize| family.maps()[k].eval(series.row(t - 1));
    let mut out = vec![vec![Vec::new(); grid_t.len()]; family.len()];
    for k in 0..family.len() {
        for (i, &ti) in grid_t.iter().enumerate() {
            let mut si = 0.0;
            for t in 1..=ti {
                si += f(t, k);
            }
            for &tj in &grid_t[..=i] {
                let mut sj = 0.0;
                for t in 1..=tj {
                    sj += f(t, k);
                }
                let v = tj as f64 / t_len;
                let u = ti as f64 / t_len;
                out[k][i].push(sj / t_len - (v / u) * si / t_len);
            }
        }
    }
    out
}

/// `sup_j max_k |D(u_i, v_j, k)|` from a naive field.
pub fn naive_sup(field: &[Vec<Vec<f64>>]) -> Vec<f64> {
    let n = field[0].len();
    (0..n)
        .map(|i| {
            field
                .iter()
                .flat_map(|fk| fk[i].iter())
                .fold(0.0f64, |m, v| m.max(v.abs()))
        })
        .collect()
}

/// Covariance of `B(v) - (v/u) B(u)` for a standard Brownian motion, computed
/// by expanding both processes over the increments on the grid cells.
pub fn bridge_cov_oracle(grid: &[f64], (i, j): (usize, usize), (i2, j2): (usize, usize)) -> f64 {
    let coeffs = |i: usize, j: usize| -> Vec<f64> {
        (0..grid.len())
            .map(|c| {
                let in_v = if c <= j { 1.0 } else { 0.0 };
                let in_u = if c <= i { 1.0 } else { 0.0 };
                in_v - grid[j] / grid[i] * in_u
            })
            .collect()
    };
    let (a, b) = (coeffs(i, j), coeffs(i2, j2));
    let mut prev = 0.0;
    let mut s = 0.0;
    for c in 0..grid.len() {
        s += a[c] * b[c] * (grid[c] - prev);
        prev = grid[c];
    }
    s
}

pub fn random_series(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> TimeSeries {
    let values = (0..len * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
    TimeSeries::new(values, len, dim).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn full_indices(grid: &Grid, t_len: usize) -> Vec<usize> {
    grid.sample_indices(t_len).unwrap()
}

/// Lower-triangle pairs `(i, j)`, `j <= i`, in packed order.
pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).collect()
}
