//! Long-run (co)variance estimation.
//!
//! Residuals `Z_t(f) = f(X_t) - E^[f(X_t)]` come from a Nadaraya-Watson fit
//! with an Epanechnikov kernel. The HAC estimator then sums lag-window
//! weighted residual cross-covariances up to `|l| <= b`.

use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::quantiles::{psd_repair, DEFAULT_REL_THRESHOLD};
use crate::series::TimeSeries;

/// Largest accepted condition number of the Setting II long-run matrix.
pub const MAX_LONG_RUN_CONDITION: f64 = 1e12;

pub fn epanechnikov(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        0.75 * (1.0 - x * x)
    } else {
        0.0
    }
}

/// Bandwidth `h` (rescaled time) of the Epanechnikov smoother.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherConfig {
    pub bandwidth: f64,
}

impl SmootherConfig {
    /// Bandwidth used for residual centering in the scalar mean setting.
    pub const SETTING1: Self = Self { bandwidth: 0.2 };
    /// Bandwidth used for the one-sided weights in the matrix setting.
    pub const SETTING2: Self = Self { bandwidth: 0.1 };

    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "smoothing bandwidth must lie in (0, 1], got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth })
    }
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self::SETTING1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LagWindow {
    /// `(1 - |x|)` on `[-1, 1]`.
    #[default]
    Bartlett,
    /// Trapezoid: 1 on `|x| <= 0.5`, `2(1 - |x|)` on `0.5 < |x| <= 1`.
    FlatTop,
}

impl LagWindow {
    pub fn weight(&self, x: f64) -> f64 {
        let a = x.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self {
            LagWindow::Bartlett => 1.0 - a,
            LagWindow::FlatTop => {
                if a <= 0.5 {
                    1.0
                } else {
                    2.0 * (1.0 - a)
                }
            }
        }
    }
}

impl FromStr for LagWindow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bartlett" => Ok(LagWindow::Bartlett),
            "flattop" | "flat-top" => Ok(LagWindow::FlatTop),
            _ => Err(Error::InvalidArgument(format!(
                "unknown lag window {s:?} (expected bartlett or flattop)"
            ))),
        }
    }
}

/// Lag window and lag bandwidth `b`; `b = 0` keeps lag 0 only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HacConfig {
    pub window: LagWindow,
    pub bandwidth: usize,
}

impl Default for HacConfig {
    fn default() -> Self {
        Self {
            window: LagWindow::Bartlett,
            bandwidth: 10,
        }
    }
}

impl HacConfig {
    /// `(l, W(l/b))` for `l = 0..=b` with nonzero weight.
    fn lag_weights(&self) -> Vec<(usize, f64)> {
        if self.bandwidth == 0 {
            return vec![(0, 1.0)];
        }
        let b = self.bandwidth as f64;
        (0..=self.bandwidth)
            .map(|l| (l, self.window.weight(l as f64 / b)))
            .filter(|&(_, w)| w != 0.0)
            .collect()
    }
}

/// Residuals and fitted local means, one column per feature.
#[derive(Debug, Clone)]
pub struct Centered {
    pub residuals: Vec<Vec<f64>>,
    pub fitted: Vec<Vec<f64>>,
}

/// Nadaraya-Watson fit at every sample point, with the kernel mass
/// renormalized near the boundaries.
pub fn nw_smooth(column: &[f64], cfg: &SmootherConfig) -> Result<Vec<f64>> {
    let n = column.len();
    let span = cfg.bandwidth * n as f64;
    if span < 4.0 {
        return Err(Error::InvalidArgument(format!(
            "smoothing window h*T = {span:.2} is too small (need at least 4 points)"
        )));
    }
    let reach = span.floor() as usize;
    let mut fit = Vec::with_capacity(n);
    for t in 0..n {
        let lo = t.saturating_sub(reach);
        let hi = (t + reach).min(n - 1);
        let (mut num, mut den) = (0.0, 0.0);
        for (s, &x) in column.iter().enumerate().take(hi + 1).skip(lo) {
            let w = epanechnikov((t as f64 - s as f64) / span);
            num += w * x;
            den += w;
        }
        if den <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "empty kernel window at t = {}",
                t + 1
            )));
        }
        fit.push(num / den);
    }
    Ok(fit)
}

pub fn nw_center(features: &FeatureMatrix, cfg: &SmootherConfig) -> Result<Centered> {
    let mut residuals = Vec::with_capacity(features.n_features());
    let mut fitted = Vec::with_capacity(features.n_features());
    for col in features.columns() {
        let fit = nw_smooth(col, cfg)?;
        residuals.push(col.iter().zip(&fit).map(|(x, m)| x - m).collect());
        fitted.push(fit);
    }
    Ok(Centered { residuals, fitted })
}

/// Subtracts a Nadaraya-Watson mean from every column of a series.
pub fn center_series(series: &TimeSeries, cfg: &SmootherConfig) -> Result<TimeSeries> {
    let cols: Vec<Vec<f64>> = (0..series.dim())
        .map(|k| {
            let c = series.column(k);
            let fit = nw_smooth(&c, cfg)?;
            Ok(c.iter().zip(&fit).map(|(x, m)| x - m).collect())
        })
        .collect::<Result<_>>()?;
    let out = TimeSeries::from_columns(&cols)?;
    match series.labels() {
        Some(l) => out.with_labels(l.to_vec()),
        None => Ok(out),
    }
}

/// `T^{-1} sum_{t=1}^{floor(uT)} Z_t(a) Z_{t-l}(b)`, terms with `t - l < 1` dropped.
fn gamma(za: &[f64], zb: &[f64], upto: usize, lag: usize) -> f64 {
    let n = za.len();
    let s: f64 = (lag..upto).map(|t| za[t] * zb[t - lag]).sum();
    s / n as f64
}

/// HAC estimate of the long-run cross-covariance of features `k` and `k2`
/// accumulated over `[0, u]`. Negative lags use `G_{-l}(f, f') = G_l(f', f)`.
pub fn hac_sigma2(residuals: &[Vec<f64>], u: f64, k: usize, k2: usize, cfg: &HacConfig) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::InvalidArgument(format!("u must lie in (0, 1], got {u}")));
    }
    let (Some(za), Some(zb)) = (residuals.get(k), residuals.get(k2)) else {
        return Err(Error::InvalidArgument(format!(
            "feature index out of range ({k}, {k2}) for {} features",
            residuals.len()
        )));
    };
    let n = za.len();
    let upto = ((u * n as f64) + 1e-9).floor() as usize;
    let mut total = 0.0;
    for (l, w) in cfg.lag_weights() {
        if l == 0 {
            total += w * gamma(za, zb, upto, 0);
        } else {
            total += w * (gamma(za, zb, upto, l) + gamma(zb, za, upto, l));
        }
    }
    Ok(total)
}

/// Long-run covariance `Sigma` of the features near rescaled time 0 and a
/// factor `A` with `A A^T = Sigma`.
#[derive(Debug, Clone)]
pub struct LongRunMatrix {
    pub sigma2: DMatrix<f64>,
    /// Symmetric square root of the repaired `sigma2`.
    pub factor: DMatrix<f64>,
    /// Ratio of largest to smallest eigenvalue of the repaired `sigma2`.
    pub cond: f64,
}

/// One-sided kernel weighted HAC matrix at rescaled time 0:
/// `c_l(k,k') = sum_{t>l} K_h(t/T) Z_t(k) Z_{t-l}(k') / sum_t K_h(t/T)`.
pub fn setting2_matrix(
    residuals: &[Vec<f64>],
    smoother: &SmootherConfig,
    hac: &HacConfig,
) -> Result<LongRunMatrix> {
    let kf = residuals.len();
    if kf == 0 {
        return Err(Error::InvalidArgument("no residual columns".into()));
    }
    let n = residuals[0].len();
    let span = smoother.bandwidth * n as f64;
    // 1-based t: weight K(t / (hT)); the 1/h factor cancels in the ratio
    let weights: Vec<f64> = (1..=n).map(|t| epanechnikov(t as f64 / span)).collect();
    let mass: f64 = weights.iter().sum();
    if mass <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "kernel window h*T = {span:.2} holds no observations"
        )));
    }

    let c = |a: usize, b: usize, lag: usize| -> f64 {
        let (za, zb) = (&residuals[a], &residuals[b]);
        (lag..n).map(|t| weights[t] * za[t] * zb[t - lag]).sum::<f64>() / mass
    };

    let mut sigma = DMatrix::zeros(kf, kf);
    for (l, w) in hac.lag_weights() {
        for a in 0..kf {
            for b in 0..kf {
                let v = if l == 0 { c(a, b, 0) } else { c(a, b, l) + c(b, a, l) };
                sigma[(a, b)] += w * v;
            }
        }
    }
    let sigma = (&sigma + sigma.transpose()) * 0.5;

    let repaired = psd_repair(&sigma, DEFAULT_REL_THRESHOLD)?;
    let lmax = repaired.eigenvalues.max();
    let lmin = repaired.eigenvalues.min();
    let cond = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if repaired.rank < kf || !(cond <= MAX_LONG_RUN_CONDITION) {
        return Err(Error::Singular { cond });
    }
    let s = &repaired.eigenvectors;
    let root = DMatrix::from_diagonal(&repaired.eigenvalues.map(f64::sqrt));
    let factor = s * root * s.transpose();
    Ok(LongRunMatrix {
        sigma2: sigma,
        factor,
        cond,
    })
}

/// `T^{-1} sum_{t=2}^T (X_t - X_{t-1})^2 / 2`.
pub fn diff_variance(series: &TimeSeries) -> Result<f64> {
    if series.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: series.dim(),
        });
    }
    Ok(diff_variance_slice(series.values()))
}

pub(crate) fn diff_variance_slice(x: &[f64]) -> f64 {
    let s: f64 = x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    s / (2.0 * x.len() as f64)
}
