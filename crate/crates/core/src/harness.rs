//! Simulation designs, Monte Carlo replications and result files.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{
    detect_with_quantiles, known_quantile_curve, ChangeEstimate, Direction, Mode, PipelineConfig,
    VarianceEstimator,
};
use crate::features::FeatureSpec;
use crate::longrun::SmootherConfig;
use crate::quantiles::QuantileCurve;
use crate::series::{format_full, TimeSeries};

pub const HISTOGRAM_BINS: usize = 50;
pub const DEFAULT_REPLICATIONS: usize = 300;
pub const FULL_REPLICATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Mu1,
    Mu2,
    Mu4,
    Mu5,
    NoChange,
    Returns,
    Piecewise,
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mu1" => DesignKind::Mu1,
            "mu2" => DesignKind::Mu2,
            "mu4" => DesignKind::Mu4,
            "mu5" => DesignKind::Mu5,
            "nochange" => DesignKind::NoChange,
            "returns" => DesignKind::Returns,
            "piecewise" => DesignKind::Piecewise,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown design {s:?} (expected mu1, mu2, mu4, mu5, nochange, returns, piecewise)"
                )))
            }
        })
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesignKind::Mu1 => "mu1",
            DesignKind::Mu2 => "mu2",
            DesignKind::Mu4 => "mu4",
            DesignKind::Mu5 => "mu5",
            DesignKind::NoChange => "nochange",
            DesignKind::Returns => "returns",
            DesignKind::Piecewise => "piecewise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ErrorSpec {
    /// `e_t = phi e_{t-1} + eta_t`, `eta ~ N(0, sd^2)`, started from the stationary law.
    Ar1 { phi: f64, sd: f64 },
    Iid { sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Design {
    pub kind: DesignKind,
    pub t_len: usize,
    pub errors: ErrorSpec,
    /// Cross-sectional dimension; only `nochange` uses more than one.
    pub dim: usize,
    /// Jump location of `piecewise`, start of the flat volatility segment of `returns`.
    pub change_at: f64,
    /// Volatility slope `a` in `sigma(u) = 1 + a (change_at - u)_+` for `returns`.
    pub vol_slope: f64,
}

impl Design {
    pub fn new(kind: DesignKind, t_len: usize) -> Result<Self> {
        if t_len < 10 {
            return Err(Error::InvalidArgument(format!("design length must be >= 10, got {t_len}")));
        }
        let errors = match kind {
            DesignKind::Mu1 | DesignKind::Mu2 | DesignKind::Piecewise => ErrorSpec::Ar1 { phi: 0.25, sd: 0.5 },
            DesignKind::Mu4 | DesignKind::Mu5 | DesignKind::NoChange => ErrorSpec::Iid { sd: 0.2 },
            DesignKind::Returns => ErrorSpec::Iid { sd: 1.0 },
        };
        let change_at = match kind {
            DesignKind::Returns => 0.6,
            _ => 0.5,
        };
        Ok(Self {
            kind,
            t_len,
            errors,
            dim: 1,
            change_at,
            vol_slope: 8.0,
        })
    }

    /// Dimension of the `nochange` design; its components have covariance
    /// `sd^2 0.5^{|i-j|}`.
    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        if dim == 0 || (dim > 1 && self.kind != DesignKind::NoChange) {
            return Err(Error::InvalidArgument(format!(
                "design {} does not support dimension {dim}",
                self.kind
            )));
        }
        self.dim = dim;
        Ok(self)
    }

    pub fn with_errors(mut self, errors: ErrorSpec) -> Self {
        self.errors = errors;
        self
    }

    pub fn with_change_at(mut self, u: f64) -> Result<Self> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidArgument(format!("change point must lie in (0, 1), got {u}")));
        }
        self.change_at = u;
        Ok(self)
    }

    pub fn with_vol_slope(mut self, a: f64) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::InvalidArgument(format!("volatility slope must be >= 0, got {a}")));
        }
        self.vol_slope = a;
        Ok(self)
    }

    pub fn mean_at(&self, u: f64) -> f64 {
        let step = |b: bool| if b { 1.0 } else { 0.0 };
        match self.kind {
            DesignKind::Mu1 => step(u > 0.5),
            DesignKind::Mu2 => 10.0 * (u - 0.5) * step(0.5 < u && u < 0.6) + step(u > 0.6),
            DesignKind::Mu4 => 2.0 * (u - 0.5) * step(u > 0.5),
            DesignKind::Mu5 => 10.0 * (u - 0.5) * step(0.5 < u && u < 0.6) + step(u >= 0.6),
            DesignKind::Piecewise => step(u > self.change_at) * (1.0 + (u - self.change_at)),
            DesignKind::NoChange | DesignKind::Returns => 0.0,
        }
    }

    pub fn vol_at(&self, u: f64) -> f64 {
        match self.kind {
            DesignKind::Returns => 1.0 + self.vol_slope * (self.change_at - u).max(0.0),
            _ => 1.0,
        }
    }

    /// Time point from which (`returns`: up to which) the feature varies; 1 without change.
    pub fn u0_true(&self) -> f64 {
        match self.kind {
            DesignKind::NoChange => 1.0,
            DesignKind::Returns | DesignKind::Piecewise => self.change_at,
            _ => 0.5,
        }
    }
}

/// Draws one path of `design`.
pub fn generate(design: &Design, seed: u64) -> TimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_len = design.t_len;
    let d = design.dim;
    let mut z = || -> f64 { rng.sample(StandardNormal) };

    let mut values = Vec::with_capacity(t_len * d);
    match design.errors {
        ErrorSpec::Ar1 { phi, sd } => {
            let mut e = sd / (1.0 - phi * phi).sqrt() * z();
            for t in 1..=t_len {
                if t > 1 {
                    e = phi * e + sd * z();
                }
                let u = t as f64 / t_len as f64;
                values.push(design.mean_at(u) + design.vol_at(u) * e);
            }
        }
        ErrorSpec::Iid { sd } if d == 1 => {
            for t in 1..=t_len {
                let u = t as f64 / t_len as f64;
                values.push(design.mean_at(u) + design.vol_at(u) * sd * z());
            }
        }
        ErrorSpec::Iid { sd } => {
            // Cholesky factor of 0.5^{|i-j|}: row i is 0.5^{i-j} * c_j with
            // c_0 = 1 and c_j = sqrt(1 - 0.25) for j > 0.
            let c = (0.75f64).sqrt();
            let mut w = vec![0.0; d];
            for _ in 0..t_len {
                w.iter_mut().for_each(|w| *w = z());
                for i in 0..d {
                    let mut x = 0.5f64.powi(i as i32) * w[0];
                    for (j, wj) in w.iter().enumerate().take(i + 1).skip(1) {
                        x += 0.5f64.powi((i - j) as i32) * c * wj;
                    }
                    values.push(sd * x);
                }
            }
        }
    }
    TimeSeries::new(values, t_len, d).expect("generated values are finite")
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSetup {
    pub feature: FeatureSpec,
    pub mode: Mode,
    pub direction: Direction,
    pub pipeline: PipelineConfig,
}

impl McSetup {
    /// Setup used for each design in the simulation study.
    pub fn for_design(design: &Design) -> Self {
        let mut pipeline = PipelineConfig::default();
        let (feature, mode, direction) = match design.kind {
            DesignKind::Mu1 | DesignKind::Mu2 | DesignKind::Piecewise => {
                (FeatureSpec::Mean, Mode::Setting1, Direction::FromLeft)
            }
            DesignKind::Mu4 | DesignKind::Mu5 => {
                pipeline.variance = VarianceEstimator::Diff;
                (FeatureSpec::Mean, Mode::Setting1, Direction::FromLeft)
            }
            DesignKind::NoChange if design.dim == 1 => {
                pipeline.variance = VarianceEstimator::Diff;
                (FeatureSpec::Mean, Mode::Setting1, Direction::FromLeft)
            }
            DesignKind::NoChange => {
                pipeline.hac.bandwidth = 0;
                (FeatureSpec::CovMat, Mode::Setting2, Direction::FromLeft)
            }
            DesignKind::Returns => {
                pipeline.smoother = Some(SmootherConfig::SETTING2);
                pipeline.hac.bandwidth = 0;
                (FeatureSpec::SecondMoment, Mode::Setting2, Direction::FromRight)
            }
        };
        Self {
            feature,
            mode,
            direction,
            pipeline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub u0: Option<f64>,
    pub u0_prelim: Option<f64>,
    pub tau_prelim: Option<f64>,
    pub tau_refined: Option<f64>,
    pub prelim_degenerate: bool,
    pub error: Option<String>,
}

impl Replication {
    fn from_result(index: usize, seed: u64, r: Result<ChangeEstimate>) -> Self {
        match r {
            Ok(e) => Self {
                index,
                seed,
                u0: Some(e.u0),
                u0_prelim: Some(e.u0_prelim),
                tau_prelim: Some(e.tau_prelim),
                tau_refined: Some(e.tau_refined),
                prelim_degenerate: e.prelim_degenerate,
                error: None,
            },
            Err(e) => Self {
                index,
                seed,
                u0: None,
                u0_prelim: None,
                tau_prelim: None,
                tau_refined: None,
                prelim_degenerate: false,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub median: Option<f64>,
    pub mean: Option<f64>,
    /// Share of estimates below the true change point.
    pub underestimation: Option<f64>,
    /// Share of estimates below 1.
    pub below_one: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub design: Design,
    pub feature: String,
    pub mode: Mode,
    pub direction: Direction,
    pub alpha: f64,
    pub replications: usize,
    pub base_seed: u64,
    pub quantile_seed: u64,
    pub failures: usize,
    /// Successful estimates in replication order.
    pub estimates: Vec<f64>,
    #[serde(skip)]
    pub records: Vec<Replication>,
    pub summary: Summary,
    pub histogram: Vec<usize>,
}

impl McReport {
    /// Builds a report from per-replication records.
    pub fn from_records(
        design: Design,
        setup: &McSetup,
        alpha: f64,
        base_seed: u64,
        records: Vec<Replication>,
    ) -> Self {
        let estimates: Vec<f64> = records.iter().filter_map(|r| r.u0).collect();
        let failures = records.len() - estimates.len();
        let summary = summarize(&estimates, design.u0_true());
        Self {
            feature: setup.feature.to_string(),
            mode: setup.mode,
            direction: setup.direction,
            alpha,
            replications: records.len(),
            base_seed,
            quantile_seed: setup.pipeline.seed,
            failures,
            histogram: histogram(&estimates),
            estimates,
            records,
            summary,
            design,
        }
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn summarize(estimates: &[f64], u0_true: f64) -> Summary {
    let n = estimates.len() as f64;
    let share = |f: &dyn Fn(f64) -> bool| {
        (!estimates.is_empty()).then(|| estimates.iter().filter(|&&u| f(u)).count() as f64 / n)
    };
    Summary {
        median: median(estimates),
        mean: (!estimates.is_empty()).then(|| estimates.iter().sum::<f64>() / n),
        underestimation: share(&|u| u < u0_true),
        below_one: share(&|u| u < 1.0),
    }
}

/// Counts over 50 bins of width 0.02 on `[0, 1]`; 1 falls in the last bin.
pub fn histogram(estimates: &[f64]) -> Vec<usize> {
    let mut counts = vec![0; HISTOGRAM_BINS];
    for &u in estimates {
        let b = (u * HISTOGRAM_BINS as f64 + 1e-9).floor().max(0.0) as usize;
        counts[b.min(HISTOGRAM_BINS - 1)] += 1;
    }
    counts
}

/// `n` replications with data seeds `base_seed + r`. The known-kernel
/// quantile curve is simulated once with `setup.pipeline.seed`.
pub fn run_mc(design: &Design, n: usize, setup: &McSetup, base_seed: u64) -> Result<McReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one replication".into()));
    }
    let family = setup.feature.family_for(design.dim)?;
    let embedded_len = match setup.feature {
        FeatureSpec::Autocov(p) if design.dim == 1 => design.t_len.saturating_sub(p),
        _ => design.t_len,
    };
    let alpha = setup.pipeline.alpha.resolve(embedded_len)?;
    let shared: Option<QuantileCurve> = match setup.mode {
        Mode::Setting1 => Some(known_quantile_curve(1, alpha, &setup.pipeline)?),
        Mode::Setting2 => Some(known_quantile_curve(family.len(), alpha, &setup.pipeline)?),
        Mode::General => None,
    };

    let records = (0..n)
        .map(|r| {
            let seed = base_seed.wrapping_add(r as u64);
            let x = generate(design, seed);
            let est = detect_with_quantiles(
                &x,
                &family,
                setup.mode,
                setup.direction,
                &setup.pipeline,
                shared.as_ref(),
            );
            Replication::from_result(r, seed, est)
        })
        .collect();
    Ok(McReport::from_records(design.clone(), setup, alpha, base_seed, records))
}

/// Writes `summary.json`, `replications.csv` and `histogram.csv` into `out`.
pub fn emit(report: &McReport, out: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out = out.as_ref();
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source: io::Error| Error::Io { path, source }
    };
    fs::create_dir_all(out).map_err(io_err(out))?;

    let summary = out.join("summary.json");
    let mut json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::InvalidArgument(format!("cannot serialize report: {e}")))?;
    json.push('\n');
    fs::write(&summary, json).map_err(io_err(&summary))?;

    let reps = out.join("replications.csv");
    let mut buf = Vec::new();
    write_replications(&report.records, &mut buf).map_err(io_err(&reps))?;
    fs::write(&reps, buf).map_err(io_err(&reps))?;

    let hist = out.join("histogram.csv");
    let mut buf = Vec::new();
    writeln!(buf, "bin_left,count").map_err(io_err(&hist))?;
    for (b, c) in report.histogram.iter().enumerate() {
        writeln!(buf, "{},{c}", b as f64 / HISTOGRAM_BINS as f64).map_err(io_err(&hist))?;
    }
    fs::write(&hist, buf).map_err(io_err(&hist))?;

    Ok(vec![summary, reps, hist])
}

fn write_replications<W: Write>(records: &[Replication], mut w: W) -> io::Result<()> {
    let opt = |v: Option<f64>| v.map(format_full).unwrap_or_default();
    writeln!(w, "index,seed,u0,u0_prelim,tau_prelim,tau_refined,prelim_degenerate,error")?;
    for r in records {
        let error = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        writeln!(
            w,
            "{},{},{},{},{},{},{},\"{error}\"",
            r.index,
            r.seed,
            opt(r.u0),
            opt(r.u0_prelim),
            opt(r.tau_prelim),
            opt(r.tau_refined),
            r.prelim_degenerate,
        )?;
    }
    Ok(())
}
