//! Velocity/distance risk matrix for IMO and the linear expectation curves
//! derived from it.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trial_data::{merge_trials, MergePolicy, TrialError, TrialRecord};

/// Default extent of the EMU limit, meters.
pub const DEFAULT_D_MAX: f64 = 0.30;
/// Default IMO threshold.
pub const DEFAULT_Q_R: f64 = 0.15;

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("bin width must be positive and finite, got {0}")]
    InvalidBinWidth(f64),
    #[error("no trials left to build a risk matrix")]
    EmptyMatrix,
    #[error("distance bin {0} m has no cell with trials")]
    Coverage(f64),
    #[error("threshold q_r must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("need at least 2 crossings to fit a curve, got {0}")]
    TooFewCrossings(usize),
    #[error("crossings must span at least two distinct distances")]
    DegenerateFit,
    #[error("invalid crossing ({0}, {1})")]
    InvalidCrossing(f64, f64),
    #[error("distance must be >= 0, got {0}")]
    NegativeDistance(f64),
    #[error("invalid risk matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid expectation curve: {0}")]
    InvalidCurve(String),
    #[error(transparent)]
    Trial(#[from] TrialError),
}

/// One (distance, velocity) cell of the risk matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskCell {
    pub distance: f64,
    pub velocity: f64,
    pub n_trials: u64,
    pub n_imo: u64,
}

impl RiskCell {
    /// Relative IMO frequency; `None` for cells without trials.
    pub fn frequency(&self) -> Option<f64> {
        (self.n_trials > 0).then(|| self.n_imo as f64 / self.n_trials as f64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellDoc {
    d: f64,
    v: f64,
    n: u64,
    n_imo: u64,
    #[serde(default)]
    f: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatrixDoc {
    distance_bins: Vec<f64>,
    velocity_bins: Vec<f64>,
    cells: Vec<CellDoc>,
}

/// Sparse grid of IMO frequencies. Cells are kept sorted by distance, then
/// velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixDoc", into = "MatrixDoc")]
pub struct RiskMatrix {
    distance_bins: Vec<f64>,
    velocity_bins: Vec<f64>,
    cells: Vec<RiskCell>,
}

impl From<RiskMatrix> for MatrixDoc {
    fn from(m: RiskMatrix) -> Self {
        MatrixDoc {
            distance_bins: m.distance_bins,
            velocity_bins: m.velocity_bins,
            cells: m
                .cells
                .iter()
                .map(|c| CellDoc {
                    d: c.distance,
                    v: c.velocity,
                    n: c.n_trials,
                    n_imo: c.n_imo,
                    f: c.frequency(),
                })
                .collect(),
        }
    }
}

impl TryFrom<MatrixDoc> for RiskMatrix {
    type Error = RiskError;

    fn try_from(doc: MatrixDoc) -> Result<Self, Self::Error> {
        let bad = |m: String| RiskError::InvalidMatrix(m);
        check_bins(&doc.distance_bins).map_err(|m| bad(format!("distance_bins {m}")))?;
        check_bins(&doc.velocity_bins).map_err(|m| bad(format!("velocity_bins {m}")))?;
        let mut cells = Vec::with_capacity(doc.cells.len());
        for c in &doc.cells {
            let di = grid_index(&doc.distance_bins, c.d)
                .ok_or_else(|| bad(format!("cell distance {} is not on the grid", c.d)))?;
            let vi = grid_index(&doc.velocity_bins, c.v)
                .ok_or_else(|| bad(format!("cell velocity {} is not on the grid", c.v)))?;
            if c.n_imo > c.n {
                return Err(bad(format!("cell ({}, {}) has n_imo > n", c.d, c.v)));
            }
            let cell = RiskCell {
                distance: doc.distance_bins[di],
                velocity: doc.velocity_bins[vi],
                n_trials: c.n,
                n_imo: c.n_imo,
            };
            match (c.f, cell.frequency()) {
                (Some(f), Some(expected)) if (f - expected).abs() > GRID_TOL => {
                    return Err(bad(format!(
                        "cell ({}, {}) has f = {f}, expected {expected}",
                        c.d, c.v
                    )))
                }
                (Some(_), None) => {
                    return Err(bad(format!("cell ({}, {}) has f but no trials", c.d, c.v)))
                }
                _ => {}
            }
            cells.push(((di, vi), cell));
        }
        cells.sort_by_key(|(k, _)| *k);
        if cells.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(bad("duplicate cell".into()));
        }
        Ok(RiskMatrix {
            distance_bins: doc.distance_bins,
            velocity_bins: doc.velocity_bins,
            cells: cells.into_iter().map(|(_, c)| c).collect(),
        })
    }
}

fn check_bins(bins: &[f64]) -> Result<(), String> {
    if bins.iter().any(|b| !b.is_finite()) {
        return Err("contain a non-finite value".into());
    }
    if bins.windows(2).any(|w| w[0] >= w[1]) {
        return Err("are not strictly increasing".into());
    }
    Ok(())
}

fn grid_index(bins: &[f64], x: f64) -> Option<usize> {
    bins.iter().position(|b| (b - x).abs() <= GRID_TOL)
}

/// Bin center nearest to `x` on the grid `{k·width}`. Centers are rounded to
/// 1e-9 so that e.g. `3·0.05` prints as `0.15`.
fn snap(x: f64, width: f64) -> (i64, f64) {
    let k = (x / width).round() as i64;
    (k, ((k as f64 * width) * 1e9).round() / 1e9)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixOptions {
    pub exclude_first_trial: bool,
    pub distance_bin_width: f64,
    pub velocity_bin_width: f64,
    pub merge_policy: MergePolicy,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        MatrixOptions {
            exclude_first_trial: true,
            distance_bin_width: 0.05,
            velocity_bin_width: 0.05,
            merge_policy: MergePolicy::EitherCoder,
        }
    }
}

/// Build the risk matrix from coded trials.
///
/// Coder ratings are merged per `(participant, trial)` first, so a cell's
/// `n_trials` counts approaches, not annotations. The bin lists contain only
/// occupied grid positions.
pub fn build_risk_matrix(
    records: &[TrialRecord],
    options: &MatrixOptions,
) -> Result<RiskMatrix, RiskError> {
    for w in [options.distance_bin_width, options.velocity_bin_width] {
        if !(w.is_finite() && w > 0.0) {
            return Err(RiskError::InvalidBinWidth(w));
        }
    }
    let trials = merge_trials(records, &options.merge_policy)?;

    let mut grid: BTreeMap<(i64, i64), (f64, f64, u64, u64)> = BTreeMap::new();
    for t in trials
        .iter()
        .filter(|t| !(options.exclude_first_trial && t.trial_index == 1))
    {
        let (dk, dc) = snap(t.distance, options.distance_bin_width);
        let (vk, vc) = snap(t.velocity, options.velocity_bin_width);
        let e = grid.entry((dk, vk)).or_insert((dc, vc, 0, 0));
        e.2 += 1;
        e.3 += u64::from(t.imo);
    }
    if grid.is_empty() {
        return Err(RiskError::EmptyMatrix);
    }

    let mut distance_bins: Vec<(i64, f64)> = grid.iter().map(|(k, e)| (k.0, e.0)).collect();
    distance_bins.dedup_by_key(|x| x.0);
    let mut velocity_bins: Vec<(i64, f64)> = grid.iter().map(|(k, e)| (k.1, e.1)).collect();
    velocity_bins.sort_by_key(|x| x.0);
    velocity_bins.dedup_by_key(|x| x.0);

    Ok(RiskMatrix {
        distance_bins: distance_bins.into_iter().map(|x| x.1).collect(),
        velocity_bins: velocity_bins.into_iter().map(|x| x.1).collect(),
        cells: grid
            .into_values()
            .map(|(distance, velocity, n_trials, n_imo)| RiskCell {
                distance,
                velocity,
                n_trials,
                n_imo,
            })
            .collect(),
    })
}

impl RiskMatrix {
    pub fn distance_bins(&self) -> &[f64] {
        &self.distance_bins
    }

    pub fn velocity_bins(&self) -> &[f64] {
        &self.velocity_bins
    }

    pub fn cells(&self) -> &[RiskCell] {
        &self.cells
    }

    pub fn cell(&self, distance: f64, velocity: f64) -> Option<&RiskCell> {
        self.cells.iter().find(|c| {
            (c.distance - distance).abs() <= GRID_TOL && (c.velocity - velocity).abs() <= GRID_TOL
        })
    }

    pub fn total_trials(&self) -> u64 {
        self.cells.iter().map(|c| c.n_trials).sum()
    }

    /// `(velocity, f)` for the defined cells of one distance bin, by velocity.
    pub fn frequency_profile(&self, distance: f64) -> Vec<(f64, f64)> {
        self.cells
            .iter()
            .filter(|c| (c.distance - distance).abs() <= GRID_TOL)
            .filter_map(|c| c.frequency().map(|f| (c.velocity, f)))
            .collect()
    }
}

/// Piecewise-linear interpolation over `(x, y)` points sorted by `x`,
/// saturating outside the sampled range.
pub fn interpolate(points: &[(f64, f64)], x: f64) -> Option<f64> {
    let (first, last) = (points.first()?, points.last()?);
    if x <= first.0 {
        return Some(first.1);
    }
    if x >= last.0 {
        return Some(last.1);
    }
    let hi = points.partition_point(|p| p.0 < x);
    let (x0, y0) = points[hi - 1];
    let (x1, y1) = points[hi];
    Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
}

/// Highest velocity a distance bin tolerates at threshold `q_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub d: f64,
    pub v: f64,
}

/// Document form of a crossing list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_r: Option<f64>,
    pub crossings: Vec<Crossing>,
}

fn check_threshold(q_r: f64) -> Result<(), RiskError> {
    if q_r > 0.0 && q_r < 1.0 {
        Ok(())
    } else {
        Err(RiskError::InvalidThreshold(q_r))
    }
}

/// Velocity at which a bin's interpolated IMO frequency first exceeds `q_r`.
///
/// Walking upward from the slowest sampled velocity, the crossing is the end
/// of the first run where `f(v) <= q_r`. When even the slowest cell is over
/// the threshold, the frequency is assumed to fall linearly to zero at
/// `v = 0`, giving `v_min · q_r / f(v_min)`.
fn bin_crossing(profile: &[(f64, f64)], q_r: f64) -> f64 {
    let (v0, f0) = profile[0];
    if f0 > q_r {
        return v0 * q_r / f0;
    }
    for w in profile.windows(2) {
        let ((va, fa), (vb, fb)) = (w[0], w[1]);
        if fb > q_r {
            return va + (q_r - fa) / (fb - fa) * (vb - va);
        }
    }
    profile[profile.len() - 1].0
}

pub fn threshold_crossings(matrix: &RiskMatrix, q_r: f64) -> Result<Vec<Crossing>, RiskError> {
    check_threshold(q_r)?;
    matrix
        .distance_bins
        .iter()
        .map(|&d| {
            let profile = matrix.frequency_profile(d);
            if profile.is_empty() {
                return Err(RiskError::Coverage(d));
            }
            Ok(Crossing {
                d,
                v: bin_crossing(&profile, q_r),
            })
        })
        .collect()
}

/// Linear limit `v_EMU(d) = a·d + b` on `[0, d_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CurveDoc", into = "CurveDoc")]
pub struct ExpectationCurve {
    q_r: f64,
    a: f64,
    b: f64,
    d_max: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct CurveDoc {
    q_r: f64,
    a: f64,
    b: f64,
    d_max: f64,
}

impl From<ExpectationCurve> for CurveDoc {
    fn from(c: ExpectationCurve) -> Self {
        CurveDoc {
            q_r: c.q_r,
            a: c.a,
            b: c.b,
            d_max: c.d_max,
        }
    }
}

impl TryFrom<CurveDoc> for ExpectationCurve {
    type Error = RiskError;

    fn try_from(d: CurveDoc) -> Result<Self, Self::Error> {
        ExpectationCurve::new(d.q_r, d.a, d.b, d.d_max)
    }
}

/// Result of evaluating an expectation curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmuLimit {
    Limit(f64),
    /// Beyond `d_max` the EMU does not constrain the velocity.
    NoLimit,
}

impl fmt::Display for EmuLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmuLimit::Limit(v) => write!(f, "{v}"),
            EmuLimit::NoLimit => f.write_str("no_limit"),
        }
    }
}

impl ExpectationCurve {
    pub fn new(q_r: f64, a: f64, b: f64, d_max: f64) -> Result<Self, RiskError> {
        check_threshold(q_r)?;
        let bad = |m: &str| Err(RiskError::InvalidCurve(m.to_string()));
        if !(a.is_finite() && a >= 0.0) {
            return bad("slope must be finite and >= 0");
        }
        if !(b.is_finite() && b >= 0.0) {
            return bad("intercept must be finite and >= 0");
        }
        if !(d_max.is_finite() && d_max > 0.0) {
            return bad("d_max must be finite and > 0");
        }
        Ok(ExpectationCurve { q_r, a, b, d_max })
    }

    pub fn q_r(&self) -> f64 {
        self.q_r
    }

    pub fn slope(&self) -> f64 {
        self.a
    }

    pub fn intercept(&self) -> f64 {
        self.b
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    /// `a·d + b` without the `d_max` cutoff.
    #[inline]
    pub fn line(&self, d: f64) -> f64 {
        self.a * d + self.b
    }

    #[inline]
    pub fn eval(&self, d_h: f64) -> Result<EmuLimit, RiskError> {
        if !(d_h >= 0.0) {
            return Err(RiskError::NegativeDistance(d_h));
        }
        Ok(if d_h <= self.d_max {
            EmuLimit::Limit(self.line(d_h))
        } else {
            EmuLimit::NoLimit
        })
    }
}

pub fn eval_expectation(curve: &ExpectationCurve, d_h: f64) -> Result<EmuLimit, RiskError> {
    curve.eval(d_h)
}

/// Fit a conservative linear expectation curve through threshold crossings.
///
/// Ordinary least squares first; a negative slope is clamped to zero. The
/// intercept is then lowered just enough that the line stays at or below
/// every crossing. If that pushes the intercept below zero it is clamped to
/// zero and the slope reduced until the envelope holds again.
pub fn fit_expectation_curve(
    crossings: &[Crossing],
    q_r: f64,
    d_max: f64,
) -> Result<ExpectationCurve, RiskError> {
    check_threshold(q_r)?;
    if crossings.len() < 2 {
        return Err(RiskError::TooFewCrossings(crossings.len()));
    }
    if let Some(c) = crossings
        .iter()
        .find(|c| !(c.d.is_finite() && c.d >= 0.0 && c.v.is_finite() && c.v >= 0.0))
    {
        return Err(RiskError::InvalidCrossing(c.d, c.v));
    }

    let n = crossings.len() as f64;
    let mean_d = crossings.iter().map(|c| c.d).sum::<f64>() / n;
    let mean_v = crossings.iter().map(|c| c.v).sum::<f64>() / n;
    let (sxx, sxy) = crossings.iter().fold((0.0, 0.0), |(sxx, sxy), c| {
        let dd = c.d - mean_d;
        (sxx + dd * dd, sxy + dd * (c.v - mean_v))
    });
    if sxx <= 0.0 {
        return Err(RiskError::DegenerateFit);
    }

    let mut a = sxy / sxx;
    let mut b = mean_v - a * mean_d;
    if a < 0.0 {
        a = 0.0;
        b = crossings.iter().map(|c| c.v).fold(f64::INFINITY, f64::min);
    }
    let envelope = crossings
        .iter()
        .map(|c| c.v - a * c.d)
        .fold(f64::INFINITY, f64::min);
    b = b.min(envelope);
    if b < 0.0 {
        b = 0.0;
        a = crossings
            .iter()
            .filter(|c| c.d > 0.0)
            .map(|c| c.v / c.d)
            .fold(a, f64::min);
    }
    ExpectationCurve::new(q_r, a, b, d_max)
}

/// Largest `|v − (a·d + b)|` over the crossings.
pub fn max_residual(curve: &ExpectationCurve, crossings: &[Crossing]) -> f64 {
    crossings
        .iter()
        .map(|c| (c.v - curve.line(c.d)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxemicZone {
    CloseIntimate,
    Intimate,
    Personal,
    Social,
    Public,
}

/// Social zone of a human-robot distance. Intervals are `[lo, hi)` with edges
/// at 0.15, 0.45, 1.20 and 3.60 m.
pub fn proxemic_zone(d_h: f64) -> ProxemicZone {
    if d_h < 0.15 {
        ProxemicZone::CloseIntimate
    } else if d_h < 0.45 {
        ProxemicZone::Intimate
    } else if d_h < 1.20 {
        ProxemicZone::Personal
    } else if d_h < 3.60 {
        ProxemicZone::Social
    } else {
        ProxemicZone::Public
    }
}
