//! Finite families of moment maps `f_k : R^d -> R`.
//!
//! A family characterizes the feature of interest through the moments
//! `E[f_k(X_t)]`: the mean through the identity, autocovariances through
//! lagged products, a covariance matrix through pairwise products, the
//! variance level of a centered series through its square. Nothing here
//! centers the data.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::series::TimeSeries;

pub type CustomMap = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum FeatureMap {
    /// `x -> x[i]`
    Coordinate(usize),
    /// `x -> x[i] * x[j]`
    Product(usize, usize),
    Custom(CustomMap),
}

impl FeatureMap {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            FeatureMap::Coordinate(i) => x[*i],
            FeatureMap::Product(i, j) => x[*i] * x[*j],
            FeatureMap::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMap::Coordinate(i) => write!(f, "x[{i}]"),
            FeatureMap::Product(i, j) => write!(f, "x[{i}]*x[{j}]"),
            FeatureMap::Custom(_) => f.write_str("custom"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureKind {
    Mean,
    Autocovariance(usize),
    CovarianceMatrix,
    SecondMoment,
    Custom(String),
}

#[derive(Debug, Clone)]
pub struct FeatureFamily {
    kind: FeatureKind,
    maps: Vec<FeatureMap>,
    names: Vec<String>,
    input_dim: usize,
}

impl FeatureFamily {
    pub fn mean() -> Self {
        Self {
            kind: FeatureKind::Mean,
            maps: vec![FeatureMap::Coordinate(0)],
            names: vec!["mean".into()],
            input_dim: 1,
        }
    }

    /// `f_l(x) = x_0 x_l` for `l = 0..=p` on lag-embedded `(p+1)`-vectors.
    pub fn autocovariance(p: usize) -> Self {
        Self {
            kind: FeatureKind::Autocovariance(p),
            maps: (0..=p).map(|l| FeatureMap::Product(0, l)).collect(),
            names: (0..=p).map(|l| format!("gamma{l}")).collect(),
            input_dim: p + 1,
        }
    }

    /// `f_ij(x) = x_i x_j` for `i <= j`, row-major over the upper triangle.
    pub fn covariance_matrix(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        let mut maps = Vec::with_capacity(dim * (dim + 1) / 2);
        let mut names = Vec::with_capacity(maps.capacity());
        for i in 0..dim {
            for j in i..dim {
                maps.push(FeatureMap::Product(i, j));
                names.push(format!("cov{}{}", i + 1, j + 1));
            }
        }
        Ok(Self {
            kind: FeatureKind::CovarianceMatrix,
            maps,
            names,
            input_dim: dim,
        })
    }

    pub fn second_moment() -> Self {
        Self {
            kind: FeatureKind::SecondMoment,
            maps: vec![FeatureMap::Product(0, 0)],
            names: vec!["second_moment".into()],
            input_dim: 1,
        }
    }

    pub fn custom(name: &str, input_dim: usize, maps: Vec<CustomMap>) -> Result<Self> {
        if maps.is_empty() || input_dim == 0 {
            return Err(Error::InvalidArgument(
                "custom family needs at least one map and one input dimension".into(),
            ));
        }
        let names = (1..=maps.len()).map(|k| format!("{name}{k}")).collect();
        Ok(Self {
            kind: FeatureKind::Custom(name.to_string()),
            maps: maps.into_iter().map(FeatureMap::Custom).collect(),
            names,
            input_dim,
        })
    }

    pub fn kind(&self) -> &FeatureKind {
        &self.kind
    }

    pub fn maps(&self) -> &[FeatureMap] {
        &self.maps
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Family size `K`.
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
}

/// Image of a series under a family; column `k` holds `f_k(X_t)` for all `t`.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    columns: Vec<Vec<f64>>,
    family: FeatureFamily,
}

impl FeatureMatrix {
    /// Wraps precomputed columns. Used by tests and by callers that already
    /// hold feature values.
    pub fn from_columns(columns: Vec<Vec<f64>>, family: FeatureFamily) -> Result<Self> {
        if columns.len() != family.len() {
            return Err(Error::DimensionMismatch {
                expected: family.len(),
                found: columns.len(),
            });
        }
        let len = columns.first().map_or(0, Vec::len);
        if len < 2 || columns.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidArgument(
                "feature columns must share a length of at least 2".into(),
            ));
        }
        Ok(Self { columns, family })
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.columns[k]
    }

    pub fn family(&self) -> &FeatureFamily {
        &self.family
    }

    /// Number of rows `T`.
    pub fn len(&self) -> usize {
        self.columns[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of features `K`.
    pub fn n_features(&self) -> usize {
        self.columns.len()
    }
}

pub fn evaluate(family: &FeatureFamily, series: &TimeSeries) -> Result<FeatureMatrix> {
    if series.dim() != family.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: family.input_dim(),
            found: series.dim(),
        });
    }
    let mut columns = vec![Vec::with_capacity(series.len()); family.len()];
    for row in series.rows() {
        for (col, map) in columns.iter_mut().zip(family.maps()) {
            let v = map.eval(row);
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "feature map {map:?} produced a non-finite value"
                )));
            }
            col.push(v);
        }
    }
    Ok(FeatureMatrix {
        columns,
        family: family.clone(),
    })
}

/// Family selector as written on the command line:
/// `mean`, `autocov:<p>`, `covmat`, `second-moment`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSpec {
    Mean,
    Autocov(usize),
    CovMat,
    SecondMoment,
}

impl FeatureSpec {
    /// Resolves the family for a series of dimension `dim` (before any lag embedding).
    pub fn family_for(&self, dim: usize) -> Result<FeatureFamily> {
        match self {
            FeatureSpec::Mean => Ok(FeatureFamily::mean()),
            FeatureSpec::Autocov(p) => Ok(FeatureFamily::autocovariance(*p)),
            FeatureSpec::CovMat => FeatureFamily::covariance_matrix(dim),
            FeatureSpec::SecondMoment => Ok(FeatureFamily::second_moment()),
        }
    }
}

impl FromStr for FeatureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(FeatureSpec::Mean),
            "covmat" => Ok(FeatureSpec::CovMat),
            "second-moment" => Ok(FeatureSpec::SecondMoment),
            _ => match s.strip_prefix("autocov:") {
                Some(p) => p.parse().map(FeatureSpec::Autocov).map_err(|_| {
                    Error::InvalidArgument(format!("bad lag order in feature spec {s:?}"))
                }),
                None => Err(Error::InvalidArgument(format!(
                    "unknown feature {s:?} (expected mean, autocov:<p>, covmat, second-moment)"
                ))),
            },
        }
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSpec::Mean => f.write_str("mean"),
            FeatureSpec::Autocov(p) => write!(f, "autocov:{p}"),
            FeatureSpec::CovMat => f.write_str("covmat"),
            FeatureSpec::SecondMoment => f.write_str("second-moment"),
        }
    }
}
