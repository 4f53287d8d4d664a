//! Two-step estimation of the time point where a feature starts to vary.
//!
//! `u0(tau)` is the share of the grid on which the scaled measure
//! `sqrt(T) D(u)` stays at or below `tau`. The preliminary threshold is the
//! quantile of the supremum at `u = 1`; the refined threshold is the
//! quantile at the preliminary estimate.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::cusum::{cusum_field, default_grid, scale_setting1, scale_setting2, CusumField, Grid};
use crate::error::{Error, Result, Stage};
use crate::features::{evaluate, FeatureFamily, FeatureKind};
use crate::longrun::{
    center_series, diff_variance_slice, hac_sigma2, nw_center, setting2_matrix, HacConfig,
    SmootherConfig,
};
use crate::quantiles::{
    simulate_sup_draws, CovKernel, QuantileCurve, DEFAULT_DRAWS, DEFAULT_REL_THRESHOLD,
    DEFAULT_SIM_GRID,
};
use crate::series::{embed_lags, reverse_time, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Feature constant on `[0, u0]`.
    #[default]
    FromLeft,
    /// Feature constant on `[u0, 1]`; estimated on the time-reversed series.
    FromRight,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" | "from-left" => Ok(Direction::FromLeft),
            "right" | "from-right" => Ok(Direction::FromRight),
            _ => Err(Error::InvalidArgument(format!(
                "unknown direction {s:?} (expected left or right)"
            ))),
        }
    }
}

/// How the statistic is normalized and where its quantiles come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Single feature divided by its long-run standard deviation; known kernel.
    Setting1,
    /// Features whitened by the long-run covariance at time 0; known kernel.
    Setting2,
    /// Unscaled statistic; plug-in kernel from HAC estimates.
    General,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "setting1" => Ok(Mode::Setting1),
            "setting2" => Ok(Mode::Setting2),
            "general" => Ok(Mode::General),
            _ => Err(Error::InvalidArgument(format!(
                "unknown mode {s:?} (expected setting1, setting2 or general)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Setting1 => "setting1",
            Mode::Setting2 => "setting2",
            Mode::General => "general",
        })
    }
}

/// Long-run variance estimator for the scalar normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceEstimator {
    /// HAC on Nadaraya-Watson residuals.
    #[default]
    Hac,
    /// Half mean squared first difference; for independent errors.
    Diff,
}

impl FromStr for VarianceEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hac" => Ok(VarianceEstimator::Hac),
            "diff" => Ok(VarianceEstimator::Diff),
            _ => Err(Error::InvalidArgument(format!(
                "unknown variance estimator {s:?} (expected hac or diff)"
            ))),
        }
    }
}

/// Level `alpha`, either fixed or shrinking as `c T^{-r}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSpec {
    Fixed(f64),
    Schedule { c: f64, r: f64 },
}

impl AlphaSpec {
    pub fn resolve(&self, t_len: usize) -> Result<f64> {
        let a = match *self {
            AlphaSpec::Fixed(a) => a,
            AlphaSpec::Schedule { c, r } => c * (t_len as f64).powf(-r),
        };
        if a > 0.0 && a < 1.0 {
            Ok(a)
        } else {
            Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {a} for T = {t_len}"
            )))
        }
    }
}

impl FromStr for AlphaSpec {
    type Err = Error;

    /// Parses `c,r` as a schedule.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad alpha schedule {s:?} (expected c,r)"));
        let (c, r) = s.split_once(',').ok_or_else(bad)?;
        let c: f64 = c.trim().parse().map_err(|_| bad())?;
        let r: f64 = r.trim().parse().map_err(|_| bad())?;
        if !(c > 0.0 && r >= 0.0) {
            return Err(bad());
        }
        Ok(AlphaSpec::Schedule { c, r })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub alpha: AlphaSpec,
    /// `None` uses 0.2 for `Setting1`/`General` and 0.1 for `Setting2`.
    pub smoother: Option<SmootherConfig>,
    pub hac: HacConfig,
    pub variance: VarianceEstimator,
    pub sim_grid: usize,
    pub draws: usize,
    pub seed: u64,
    pub rel_threshold: f64,
    /// Subtract a Nadaraya-Watson mean from the series before evaluating features.
    pub center: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            alpha: AlphaSpec::Fixed(0.1),
            smoother: None,
            hac: HacConfig::default(),
            variance: VarianceEstimator::Hac,
            sim_grid: DEFAULT_SIM_GRID,
            draws: DEFAULT_DRAWS,
            seed: 0,
            rel_threshold: DEFAULT_REL_THRESHOLD,
            center: false,
        }
    }
}

impl PipelineConfig {
    pub fn smoother_for(&self, mode: Mode) -> SmootherConfig {
        self.smoother.unwrap_or(match mode {
            Mode::Setting2 => SmootherConfig::SETTING2,
            Mode::Setting1 | Mode::General => SmootherConfig::SETTING1,
        })
    }
}

/// Curves behind an estimate, on the (possibly reversed) analysis time axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curves {
    pub field_grid: Vec<f64>,
    /// `sqrt(T)` times the measure of time-variation.
    pub statistic: Vec<f64>,
    pub quantile_grid: Vec<f64>,
    pub quantile: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeEstimate {
    pub u0: f64,
    pub u0_prelim: f64,
    pub tau_prelim: f64,
    pub tau_refined: f64,
    pub alpha: f64,
    pub direction: Direction,
    pub mode: Option<Mode>,
    /// Sample size after any lag embedding.
    pub t_len: usize,
    /// Set when the statistic exceeds the preliminary threshold on every grid
    /// point except the first, where it is zero by construction.
    pub prelim_degenerate: bool,
    /// Long-run standard deviation used by `Setting1`.
    pub scale: Option<f64>,
    /// Condition estimate of the `Setting2` long-run matrix.
    pub condition: Option<f64>,
    pub quantile_seed: u64,
    pub draws: usize,
    pub warnings: Vec<String>,
    pub curves: Curves,
}

/// Grid Riemann sum of `1(sqrt(T) D(u_i) <= tau)` with cell widths
/// `u_i - u_{i-1}`, `u_0 = 0`.
pub fn u0_at_threshold(field: &CusumField, tau: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be >= 0, got {tau}")));
    }
    if !field.grid().ends_at_one() {
        return Err(Error::InvalidArgument("field grid must end at 1".into()));
    }
    let root_t = (field.t_len() as f64).sqrt();
    let mut prev = 0.0;
    let mut total = 0.0;
    for (&u, &d) in field.grid().points().iter().zip(field.sup_curve()) {
        if root_t * d <= tau {
            total += u - prev;
        }
        prev = u;
    }
    Ok(total)
}

/// Steps 1(b), 1(c) and 2 of the threshold procedure, on the analysis time axis.
pub fn two_step_estimate(field: &CusumField, qcurve: &QuantileCurve, alpha: f64) -> Result<ChangeEstimate> {
    if (qcurve.alpha - alpha).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "quantile curve was computed for alpha = {}, not {alpha}",
            qcurve.alpha
        )));
    }
    if !qcurve.grid.ends_at_one() {
        return Err(Error::InvalidArgument("quantile grid must end at 1".into()));
    }
    let tau_prelim = qcurve.terminal();
    let u0_prelim = u0_at_threshold(field, tau_prelim)?;
    let tau_refined = qcurve.value_at(u0_prelim);
    let u0 = u0_at_threshold(field, tau_refined)?;

    let root_t = (field.t_len() as f64).sqrt();
    let mut warnings = qcurve.warnings.clone();
    // the first grid cell always passes since the measure vanishes there
    let prelim_degenerate = u0_prelim <= field.grid().points()[0];
    if prelim_degenerate {
        warnings.push("statistic exceeds the preliminary threshold everywhere".into());
    }
    Ok(ChangeEstimate {
        u0,
        u0_prelim,
        tau_prelim,
        tau_refined,
        alpha,
        direction: Direction::FromLeft,
        mode: None,
        t_len: field.t_len(),
        prelim_degenerate,
        scale: None,
        condition: None,
        quantile_seed: qcurve.seed,
        draws: qcurve.draws,
        warnings,
        curves: Curves {
            field_grid: field.grid().points().to_vec(),
            statistic: field.sup_curve().iter().map(|d| d * root_t).collect(),
            quantile_grid: qcurve.grid.points().to_vec(),
            quantile: qcurve.q.clone(),
        },
    })
}

/// Quantile curve of the normalized limit with `n_features` independent
/// features, as used by `Setting1` (`n_features = 1`) and `Setting2`.
pub fn known_quantile_curve(n_features: usize, alpha: f64, cfg: &PipelineConfig) -> Result<QuantileCurve> {
    let grid = Grid::equispaced(cfg.sim_grid)?;
    simulate_sup_draws(
        &CovKernel::known(),
        &grid,
        n_features,
        cfg.draws,
        cfg.seed,
        cfg.rel_threshold,
    )?
    .quantile_curve(alpha)
}

/// Runs the full pipeline on one series.
pub fn detect(
    series: &TimeSeries,
    family: &FeatureFamily,
    mode: Mode,
    direction: Direction,
    cfg: &PipelineConfig,
) -> Result<ChangeEstimate> {
    detect_with_quantiles(series, family, mode, direction, cfg, None)
}

/// As [`detect`], reusing a precomputed known-kernel quantile curve when
/// one is given. The curve is ignored in `General` mode.
pub fn detect_with_quantiles(
    series: &TimeSeries,
    family: &FeatureFamily,
    mode: Mode,
    direction: Direction,
    cfg: &PipelineConfig,
    quantiles: Option<&QuantileCurve>,
) -> Result<ChangeEstimate> {
    let smoother = cfg.smoother_for(mode);

    let mut x = match direction {
        Direction::FromLeft => series.clone(),
        Direction::FromRight => reverse_time(series),
    };
    if cfg.center {
        x = center_series(&x, &smoother).map_err(Error::at(Stage::Transform))?;
    }
    if let FeatureKind::Autocovariance(p) = *family.kind() {
        if x.dim() == 1 && p > 0 {
            x = embed_lags(&x, p).map_err(Error::at(Stage::Transform))?;
        }
    }

    let features = evaluate(family, &x).map_err(Error::at(Stage::Features))?;
    let t_len = features.len();
    let n_features = features.n_features();
    let alpha = cfg.alpha.resolve(t_len).map_err(Error::at(Stage::Estimate))?;
    let field = cusum_field(&features, &default_grid(t_len)).map_err(Error::at(Stage::Cusum))?;

    let long_run = Error::at(Stage::LongRun);
    let mut scale = None;
    let mut condition = None;
    let (field, curve) = match mode {
        Mode::Setting1 => {
            if n_features != 1 {
                return Err(long_run(Error::InvalidArgument(format!(
                    "setting1 needs a single feature, family has {n_features}"
                ))));
            }
            let sigma2 = match cfg.variance {
                VarianceEstimator::Hac => {
                    let c = nw_center(&features, &smoother).map_err(Error::at(Stage::LongRun))?;
                    hac_sigma2(&c.residuals, 1.0, 0, 0, &cfg.hac).map_err(Error::at(Stage::LongRun))?
                }
                VarianceEstimator::Diff => diff_variance_slice(features.column(0)),
            };
            if !(sigma2 > 0.0) {
                return Err(Error::at(Stage::LongRun)(Error::InvalidArgument(format!(
                    "long-run variance estimate is not positive ({sigma2})"
                ))));
            }
            scale = Some(sigma2.sqrt());
            let field = scale_setting1(field, sigma2.sqrt()).map_err(Error::at(Stage::Cusum))?;
            (field, known_or_given(quantiles, 1, alpha, cfg)?)
        }
        Mode::Setting2 => {
            let c = nw_center(&features, &smoother).map_err(Error::at(Stage::LongRun))?;
            let lr = setting2_matrix(&c.residuals, &smoother, &cfg.hac)
                .map_err(Error::at(Stage::LongRun))?;
            condition = Some(lr.cond);
            let field = scale_setting2(field, &lr.factor).map_err(Error::at(Stage::Cusum))?;
            (field, known_or_given(quantiles, n_features, alpha, cfg)?)
        }
        Mode::General => {
            let c = nw_center(&features, &smoother).map_err(Error::at(Stage::LongRun))?;
            let grid = Grid::equispaced(cfg.sim_grid).map_err(Error::at(Stage::Quantiles))?;
            let kernel = CovKernel::plug_in(&grid, n_features, |u, a, b| {
                hac_sigma2(&c.residuals, u, a, b, &cfg.hac)
            })
            .map_err(Error::at(Stage::LongRun))?;
            let curve = simulate_sup_draws(
                &kernel,
                &grid,
                n_features,
                cfg.draws,
                cfg.seed,
                cfg.rel_threshold,
            )
            .and_then(|d| d.quantile_curve(alpha))
            .map_err(Error::at(Stage::Quantiles))?;
            (field, curve)
        }
    };

    let mut est = two_step_estimate(&field, &curve, alpha).map_err(Error::at(Stage::Estimate))?;
    est.mode = Some(mode);
    est.scale = scale;
    est.condition = condition;
    est.direction = direction;
    if direction == Direction::FromRight {
        est.u0 = 1.0 - est.u0;
        est.u0_prelim = 1.0 - est.u0_prelim;
    }
    Ok(est)
}

fn known_or_given(
    given: Option<&QuantileCurve>,
    n_features: usize,
    alpha: f64,
    cfg: &PipelineConfig,
) -> Result<QuantileCurve> {
    match given {
        Some(q) => {
            if q.n_features != n_features || (q.alpha - alpha).abs() > 1e-12 {
                return Err(Error::at(Stage::Quantiles)(Error::InvalidArgument(format!(
                    "precomputed quantile curve is for {} features at alpha = {}, \
                     need {n_features} at alpha = {alpha}",
                    q.n_features, q.alpha
                ))));
            }
            Ok(q.clone())
        }
        None => known_quantile_curve(n_features, alpha, cfg).map_err(Error::at(Stage::Quantiles)),
    }
}
