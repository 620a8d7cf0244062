//! Core estimators: cross-sectional OLS, Fama-MacBeth two-stage inference,
//! Newey-West and Hansen-Hodrick long-run variances, and IQR-scaled economic
//! magnitudes.
//!
//! Conventions fixed here and relied on by the tests:
//! - autocovariances use a 1/T denominator;
//! - the Bartlett weight at lag `l` is `1 - l/(L+1)`;
//! - a Hansen-Hodrick variance that comes out nonpositive falls back to the
//!   Bartlett value and is flagged, never silently NaN;
//! - a zero standard error reports an infinite t-statistic with a flag;
//! - stage-two reductions run in ascending period order with compensated
//!   summation, so results do not depend on how stage one was scheduled.

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EconError {
    #[error("design matrix is singular{}", .column.as_deref().map(|c| format!(" (column {c:?})")).unwrap_or_default())]
    Singular { column: Option<String> },
    #[error("too few rows: n={n} with {k} columns (need n >= k + 1)")]
    TooFewRows { n: usize, k: usize },
    #[error("series of length {t} too short for {lags} lags (need T >= lags + 2)")]
    SeriesTooShort { t: usize, lags: usize },
    #[error("too few usable periods: {used} (need at least {need})")]
    TooFewPeriods { used: usize, need: usize },
    #[error("column {0:?} missing from data set")]
    UnknownColumn(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// Neumaier compensated sum; deterministic for a fixed iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

// ---------------------------------------------------------------------------
// OLS
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct OlsFit {
    /// Coefficient names; the first is the intercept.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub n: usize,
    /// Regressor count excluding the intercept.
    pub k: usize,
}

/// Least squares on a design matrix whose first column is the intercept.
/// Solved by column-pivoted QR; a numerically rank-deficient design errors
/// out, naming the first column that is dependent on its predecessors.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<OlsFit, EconError> {
    let n = x.nrows();
    let p = x.ncols();
    assert_eq!(names.len(), p, "one name per design column");
    assert_eq!(y.len(), n);
    if n < p + 1 {
        return Err(EconError::TooFewRows { n, k: p });
    }
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let d0 = r[(0, 0)].abs();
    let tol = d0 * 1e-12 * n.max(p) as f64;
    for j in 0..p {
        if r[(j, j)].abs() <= tol {
            return Err(EconError::Singular { column: first_dependent_column(x, names) });
        }
    }
    // Least-squares solve from the thin factorization X P = Q R:
    // beta = P (R^-1 Q' y).
    let mut beta = qr.q().transpose() * y;
    if !r.solve_upper_triangular_mut(&mut beta) {
        return Err(EconError::Singular { column: first_dependent_column(x, names) });
    }
    qr.p().inv_permute_rows(&mut beta);
    let fitted = x * &beta;
    let residuals: Vec<f64> = (y - &fitted).iter().copied().collect();
    let ybar = compensated_sum(y.iter().copied()) / n as f64;
    let sst = compensated_sum(y.iter().map(|v| (v - ybar) * (v - ybar)));
    let ssr = compensated_sum(residuals.iter().map(|u| u * u));
    let r_squared = if sst > 0.0 {
        1.0 - ssr / sst
    } else if ssr.abs() <= 1e-24 {
        1.0
    } else {
        0.0
    };
    let k = p - 1;
    let adj_r_squared = 1.0 - (1.0 - r_squared) * (n as f64 - 1.0) / (n as f64 - k as f64 - 1.0);
    Ok(OlsFit {
        names: names.to_vec(),
        coefficients: beta.iter().copied().collect(),
        residuals,
        r_squared,
        adj_r_squared,
        n,
        k,
    })
}

/// First column (by modified Gram-Schmidt) that is numerically dependent on
/// the columns before it. Only used to label `Singular` errors.
fn first_dependent_column(x: &DMatrix<f64>, names: &[String]) -> Option<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..x.ncols() {
        let mut v = x.column(j).clone_owned();
        let orig = v.norm();
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        if v.norm() <= orig.max(f64::MIN_POSITIVE) * 1e-10 {
            return Some(names[j].clone());
        }
        let norm = v.norm();
        basis.push(v / norm);
    }
    None
}

// ---------------------------------------------------------------------------
// Long-run variances of a mean
// ---------------------------------------------------------------------------

fn autocovariance(series: &[f64], mean: f64, lag: usize) -> f64 {
    let t = series.len() as f64;
    let mut s = 0.0;
    for i in lag..series.len() {
        s += (series[i] - mean) * (series[i - lag] - mean);
    }
    s / t
}

/// Newey-West (Bartlett kernel) variance of the sample mean:
/// `(1/T) * [g0 + 2 * sum_{l=1..L} (1 - l/(L+1)) * g_l]`.
pub fn newey_west_var(series: &[f64], lags: usize) -> Result<f64, EconError> {
    let t = series.len();
    if t < lags + 2 {
        return Err(EconError::SeriesTooShort { t, lags });
    }
    let mean = compensated_sum(series.iter().copied()) / t as f64;
    let mut v = autocovariance(series, mean, 0);
    for l in 1..=lags {
        let w = 1.0 - l as f64 / (lags as f64 + 1.0);
        v += 2.0 * w * autocovariance(series, mean, l);
    }
    // The Bartlett form is positive semidefinite; clamp fp round-off.
    Ok((v / t as f64).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LongRunVariance {
    pub value: f64,
    /// True when the unweighted sum was nonpositive and the Bartlett value
    /// was used instead.
    pub nw_fallback: bool,
}

/// Hansen-Hodrick variance of the sample mean: unit weights on the first `L`
/// autocovariances. Not guaranteed positive; nonpositive values fall back to
/// [`newey_west_var`] with a flag.
pub fn hansen_hodrick_var(series: &[f64], lags: usize) -> Result<LongRunVariance, EconError> {
    let t = series.len();
    if t < lags + 2 {
        return Err(EconError::SeriesTooShort { t, lags });
    }
    let mean = compensated_sum(series.iter().copied()) / t as f64;
    let mut v = autocovariance(series, mean, 0);
    for l in 1..=lags {
        v += 2.0 * autocovariance(series, mean, l);
    }
    let v = v / t as f64;
    if v <= 0.0 {
        Ok(LongRunVariance { value: newey_west_var(series, lags)?, nw_fallback: true })
    } else {
        Ok(LongRunVariance { value: v, nw_fallback: false })
    }
}

// ---------------------------------------------------------------------------
// HAC covariance for a time-series regression
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HacKernel {
    Bartlett,
    /// Unit weights on all `L` lags (the Hansen-Hodrick choice).
    Uniform,
}

#[derive(Debug, Clone, Serialize)]
pub struct HacOls {
    pub fit: OlsFit,
    pub se: Vec<f64>,
    pub tstat: Vec<f64>,
    pub zero_se: Vec<bool>,
    /// True when the uniform kernel produced a nonpositive coefficient
    /// variance and the Bartlett covariance was used instead.
    pub nw_fallback: bool,
}

/// OLS with a HAC sandwich covariance on the score series `x_t * u_t`.
///
/// With an intercept-only design this reduces exactly to the long-run
/// variance of the mean of `y`.
pub fn hac_ols(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    names: &[String],
    lags: usize,
    kernel: HacKernel,
) -> Result<HacOls, EconError> {
    let t = x.nrows();
    if t < lags + 2 {
        return Err(EconError::SeriesTooShort { t, lags });
    }
    let fit = ols(x, y, names)?;
    let cov = hac_cov(x, &fit.residuals, lags, kernel);
    let mut nw_fallback = false;
    let cov = if kernel == HacKernel::Uniform && (0..cov.nrows()).any(|j| cov[(j, j)] <= 0.0) {
        nw_fallback = true;
        hac_cov(x, &fit.residuals, lags, HacKernel::Bartlett)
    } else {
        cov
    };
    let mut se = Vec::with_capacity(cov.nrows());
    let mut tstat = Vec::with_capacity(cov.nrows());
    let mut zero_se = Vec::with_capacity(cov.nrows());
    for j in 0..cov.nrows() {
        let s = cov[(j, j)].max(0.0).sqrt();
        se.push(s);
        zero_se.push(s == 0.0);
        tstat.push(t_statistic(fit.coefficients[j], s));
    }
    Ok(HacOls { fit, se, tstat, zero_se, nw_fallback })
}

fn hac_cov(x: &DMatrix<f64>, residuals: &[f64], lags: usize, kernel: HacKernel) -> DMatrix<f64> {
    let t = x.nrows();
    let p = x.ncols();
    let tf = t as f64;
    // Score vectors g_t = x_t * u_t.
    let mut scores = DMatrix::<f64>::zeros(t, p);
    for i in 0..t {
        for j in 0..p {
            scores[(i, j)] = x[(i, j)] * residuals[i];
        }
    }
    let mut s = DMatrix::<f64>::zeros(p, p);
    for l in 0..=lags {
        let w = match kernel {
            _ if l == 0 => 1.0,
            HacKernel::Bartlett => 1.0 - l as f64 / (lags as f64 + 1.0),
            HacKernel::Uniform => 1.0,
        };
        let mut gamma = DMatrix::<f64>::zeros(p, p);
        for i in l..t {
            for a in 0..p {
                for b in 0..p {
                    gamma[(a, b)] += scores[(i, a)] * scores[(i - l, b)];
                }
            }
        }
        gamma /= tf;
        if l == 0 {
            s += gamma;
        } else {
            s += (&gamma + gamma.transpose()) * w;
        }
    }
    let xtx = x.transpose() * x;
    let xtx_inv = xtx.try_inverse().expect("ols already verified invertibility");
    &xtx_inv * (s * tf) * &xtx_inv
}

fn t_statistic(mean: f64, se: f64) -> f64 {
    if se > 0.0 {
        mean / se
    } else if mean == 0.0 {
        0.0
    } else {
        // Zero-variance sentinel, flagged separately.
        mean.signum() * f64::INFINITY
    }
}

// ---------------------------------------------------------------------------
// Long-format data set and formulas
// ---------------------------------------------------------------------------

/// Column store for panel rows keyed by an integer period.
#[derive(Debug, Clone, Default)]
pub struct DataSet {
    periods: Vec<i64>,
    columns: IndexMap<String, Vec<Option<f64>>>,
}

impl DataSet {
    pub fn new<S: Into<String>>(column_names: impl IntoIterator<Item = S>) -> DataSet {
        let columns = column_names.into_iter().map(|n| (n.into(), Vec::new())).collect();
        DataSet { periods: Vec::new(), columns }
    }

    /// Append one observation; `values` align with the construction order.
    pub fn push_row(&mut self, period: i64, values: &[Option<f64>]) {
        assert_eq!(values.len(), self.columns.len(), "one value per column");
        self.periods.push(period);
        for (slot, v) in self.columns.values_mut().zip(values) {
            slot.push(*v);
        }
    }

    pub fn len(&self) -> usize {
        self.periods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }

    pub fn periods(&self) -> &[i64] {
        &self.periods
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>], EconError> {
        self.columns
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| EconError::UnknownColumn(name.to_string()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Formula {
    pub response: String,
    pub regressors: Vec<String>,
}

impl Formula {
    pub fn new(response: impl Into<String>, regressors: &[&str]) -> Formula {
        Formula {
            response: response.into(),
            regressors: regressors.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Coefficient names: intercept first, then the regressors.
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.regressors.len() + 1);
        names.push("Intercept".to_string());
        names.extend(self.regressors.iter().cloned());
        names
    }
}

// ---------------------------------------------------------------------------
// Fama-MacBeth
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PeriodFit {
    pub period: i64,
    pub coefficients: Vec<f64>,
    pub adj_r_squared: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FmResult {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub tstat: Vec<f64>,
    /// Flags coefficients whose standard error is exactly zero; their t-stat
    /// is the infinite sentinel.
    pub zero_se: Vec<bool>,
    pub per_period: Vec<PeriodFit>,
    pub mean_adj_r_squared: f64,
    pub lags: usize,
    pub periods_used: usize,
    pub periods_skipped: usize,
}

impl FmResult {
    pub fn coefficient(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Time-series inference over per-period coefficient vectors: means,
/// Newey-West standard errors, and t-statistics. `per_period` must already be
/// in ascending period order.
pub fn fm_stage2(
    names: Vec<String>,
    per_period: Vec<PeriodFit>,
    lags: usize,
    periods_skipped: usize,
) -> Result<FmResult, EconError> {
    let t = per_period.len();
    if t < lags + 2 {
        return Err(EconError::TooFewPeriods { used: t, need: lags + 2 });
    }
    let p = names.len();
    let mut mean = Vec::with_capacity(p);
    let mut se = Vec::with_capacity(p);
    let mut tstat = Vec::with_capacity(p);
    let mut zero_se = Vec::with_capacity(p);
    for j in 0..p {
        let series: Vec<f64> = per_period.iter().map(|f| f.coefficients[j]).collect();
        let m = compensated_sum(series.iter().copied()) / t as f64;
        let var = newey_west_var(&series, lags)?;
        let s = var.sqrt();
        mean.push(m);
        se.push(s);
        zero_se.push(s == 0.0);
        tstat.push(t_statistic(m, s));
    }
    let mean_adj_r_squared = compensated_sum(per_period.iter().map(|f| f.adj_r_squared)) / t as f64;
    Ok(FmResult {
        names,
        mean,
        se,
        tstat,
        zero_se,
        per_period,
        mean_adj_r_squared,
        lags,
        periods_used: t,
        periods_skipped,
    })
}

/// Two-stage panel estimator: a cross-sectional OLS per period, then
/// time-series inference on the coefficient paths.
///
/// Rows with a missing response or regressor drop listwise within their
/// period. Periods left with fewer than `regressors + 2` complete rows are
/// skipped and counted. Stage one runs in parallel; the reduction is ordered.
pub fn fama_macbeth(data: &DataSet, formula: &Formula, lags: usize) -> Result<FmResult, EconError> {
    let response = data.column(&formula.response)?;
    let regressors: Vec<&[Option<f64>]> = formula
        .regressors
        .iter()
        .map(|r| data.column(r))
        .collect::<Result<_, _>>()?;
    let ncols = formula.regressors.len() + 1;
    let names = formula.coefficient_names();

    let mut by_period: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, period) in data.periods().iter().enumerate() {
        by_period.entry(*period).or_default().push(i);
    }
    let jobs: Vec<(i64, Vec<usize>)> = by_period
        .into_iter()
        .map(|(period, rows)| {
            let complete = rows
                .into_iter()
                .filter(|&i| response[i].is_some() && regressors.iter().all(|c| c[i].is_some()))
                .collect();
            (period, complete)
        })
        .collect();

    let fits: Vec<Result<Option<PeriodFit>, EconError>> = jobs
        .par_iter()
        .map(|(period, rows)| {
            if rows.len() < ncols + 1 {
                return Ok(None);
            }
            let n = rows.len();
            let mut x = DMatrix::<f64>::zeros(n, ncols);
            let mut y = DVector::<f64>::zeros(n);
            for (r, &i) in rows.iter().enumerate() {
                x[(r, 0)] = 1.0;
                for (c, col) in regressors.iter().enumerate() {
                    x[(r, c + 1)] = col[i].unwrap();
                }
                y[r] = response[i].unwrap();
            }
            let fit = ols(&x, &y, &names)?;
            Ok(Some(PeriodFit {
                period: *period,
                coefficients: fit.coefficients,
                adj_r_squared: fit.adj_r_squared,
                n,
            }))
        })
        .collect();

    let mut per_period = Vec::new();
    let mut skipped = 0usize;
    for f in fits {
        match f? {
            Some(fit) => per_period.push(fit),
            None => skipped += 1,
        }
    }
    fm_stage2(names, per_period, lags, skipped)
}

// ---------------------------------------------------------------------------
// Economic magnitude
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EconomicMagnitude {
    pub weekly_pct: f64,
    pub annual_pct: f64,
}

/// Return difference implied by moving a regressor across its interquartile
/// range: `coefficient * IQR`, reported in percent per week and per year
/// (52 weeks).
pub fn economic_magnitude(coefficient: f64, iqr: f64) -> EconomicMagnitude {
    let weekly_pct = coefficient * iqr * 100.0;
    EconomicMagnitude { weekly_pct, annual_pct: weekly_pct * 52.0 }
}
