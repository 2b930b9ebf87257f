//! Piecewise-constant functions on the line or on a bounded interval.
//!
//! A [`StepFunction`] with breakpoints `x_0 < … < x_{N-1}` carries `N + 1`
//! values; value `k` holds on the open interval between breakpoints `k - 1`
//! and `k`. The outermost intervals are unbounded tails for the Cauchy
//! problem and end at the domain walls for the Neumann problem.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("breakpoints are not strictly increasing at index {0}")]
    NonSortedBreakpoints(usize),
    #[error("expected {expected} values for {breakpoints} breakpoints, got {got}")]
    LengthMismatch {
        breakpoints: usize,
        expected: usize,
        got: usize,
    },
    #[error("breakpoint {0} lies outside the open domain")]
    OutsideDomain(f64),
    #[error("invalid domain [{0}, {1}]")]
    InvalidDomain(f64, f64),
    #[error("non-finite number in input")]
    NonFinite,
    #[error("nonzero value on an unbounded interval gives infinite mass")]
    InfiniteMass,
    #[error("difference has infinite norm")]
    InfiniteNorm,
    #[error("interval does not meet the domain")]
    EmptyIntersection,
    #[error("functions live on different domains")]
    DomainMismatch,
}

/// Boundary treatment of the outermost intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary {
    /// Whole line; the first and last values extend to infinity.
    Cauchy,
    /// Bounded domain `[a, b]` with zero-flux ends.
    Neumann { a: f64, b: f64 },
}

impl Boundary {
    pub fn neumann(a: f64, b: f64) -> Result<Self, StepError> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(StepError::InvalidDomain(a, b));
        }
        Ok(Boundary::Neumann { a, b })
    }

    pub fn is_cauchy(&self) -> bool {
        matches!(self, Boundary::Cauchy)
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            Boundary::Cauchy => (f64::NEG_INFINITY, f64::INFINITY),
            Boundary::Neumann { a, b } => (a, b),
        }
    }
}

/// Closed interval `[lo, hi]`, possibly with infinite ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}] is reversed");
        Interval { lo, hi }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    /// Length of the intersection with `other` (zero when disjoint).
    pub fn overlap(&self, other: &Interval) -> f64 {
        (self.hi.min(other.hi) - self.lo.max(other.lo)).max(0.0)
    }
}

/// Extremum classification of one interval against its neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtremumTag {
    LocalMax,
    LocalMin,
    Monotone,
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    boundary: Boundary,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    /// Builds a normalized step function, merging equal neighbouring values.
    pub fn new(
        boundary: Boundary,
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self, StepError> {
        if values.len() != breakpoints.len() + 1 {
            return Err(StepError::LengthMismatch {
                breakpoints: breakpoints.len(),
                expected: breakpoints.len() + 1,
                got: values.len(),
            });
        }
        if breakpoints.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(StepError::NonFinite);
        }
        for (i, w) in breakpoints.windows(2).enumerate() {
            if w[0] >= w[1] {
                return Err(StepError::NonSortedBreakpoints(i + 1));
            }
        }
        if let Boundary::Neumann { a, b } = boundary {
            if !(a.is_finite() && b.is_finite()) || a >= b {
                return Err(StepError::InvalidDomain(a, b));
            }
            if let Some(&x) = breakpoints.iter().find(|&&x| x <= a || x >= b) {
                return Err(StepError::OutsideDomain(x));
            }
        }
        Ok(Self::from_parts_unchecked(boundary, breakpoints, values))
    }

    /// Merges equal neighbours; inputs are assumed sorted and consistent.
    pub(crate) fn from_parts_unchecked(
        boundary: Boundary,
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    ) -> Self {
        let mut bp = Vec::with_capacity(breakpoints.len());
        let mut vals = Vec::with_capacity(values.len());
        vals.push(values[0]);
        for (x, &v) in breakpoints.into_iter().zip(&values[1..]) {
            if v != *vals.last().unwrap() {
                bp.push(x);
                vals.push(v);
            }
        }
        StepFunction {
            boundary,
            breakpoints: bp,
            values: vals,
        }
    }

    pub fn constant(boundary: Boundary, value: f64) -> Self {
        StepFunction {
            boundary,
            breakpoints: Vec::new(),
            values: vec![value],
        }
    }

    pub fn zero(boundary: Boundary) -> Self {
        Self::constant(boundary, 0.0)
    }

    /// `height · χ_[lo, hi]` on the line.
    pub fn indicator(lo: f64, hi: f64, height: f64) -> Self {
        Self::from_parts_unchecked(Boundary::Cauchy, vec![lo, hi], vec![0.0, height, 0.0])
    }

    /// Compactly supported Cauchy datum from interior values on consecutive
    /// cells `[edges[k], edges[k+1]]`.
    pub fn from_cells(edges: &[f64], heights: &[f64]) -> Result<Self, StepError> {
        let mut values = Vec::with_capacity(heights.len() + 2);
        values.push(0.0);
        values.extend_from_slice(heights);
        values.push(0.0);
        Self::new(Boundary::Cauchy, edges.to_vec(), values)
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_intervals(&self) -> usize {
        self.values.len()
    }

    pub fn interval(&self, k: usize) -> Interval {
        let (lo, hi) = self.boundary.bounds();
        let left = if k == 0 { lo } else { self.breakpoints[k - 1] };
        let right = if k == self.breakpoints.len() {
            hi
        } else {
            self.breakpoints[k]
        };
        Interval::new(left, right)
    }

    pub fn lengths(&self) -> Vec<f64> {
        (0..self.num_intervals())
            .map(|k| self.interval(k).len())
            .collect()
    }

    pub fn domain(&self) -> Interval {
        let (lo, hi) = self.boundary.bounds();
        Interval::new(lo, hi)
    }

    /// Value at `x`; at a breakpoint the right value is returned.
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&b| b <= x);
        self.values[k]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// Both tails vanish (always true on a bounded domain).
    pub fn has_compact_support(&self) -> bool {
        match self.boundary {
            Boundary::Cauchy => self.values[0] == 0.0 && *self.values.last().unwrap() == 0.0,
            Boundary::Neumann { .. } => true,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `∫ u`, exact over bounded intervals.
    pub fn mass(&self) -> Result<f64, StepError> {
        let mut total = 0.0;
        for (k, &v) in self.values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let len = self.interval(k).len();
            if !len.is_finite() {
                return Err(StepError::InfiniteMass);
            }
            total += v * len;
        }
        Ok(total)
    }

    /// `∫_I u` over a bounded window.
    pub fn integral_over(&self, window: Interval) -> Result<f64, StepError> {
        let mut total = 0.0;
        for (k, &v) in self.values.iter().enumerate() {
            let overlap = self.interval(k).overlap(&window);
            if overlap > 0.0 && v != 0.0 {
                if !overlap.is_finite() {
                    return Err(StepError::InfiniteMass);
                }
                total += v * overlap;
            }
        }
        Ok(total)
    }

    /// `sup − inf` of the values on intervals meeting the open window.
    pub fn oscillation(&self, window: Interval) -> Result<f64, StepError> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (k, &v) in self.values.iter().enumerate() {
            if self.interval(k).overlap(&window) > 0.0 {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if lo > hi {
            return Err(StepError::EmptyIntersection);
        }
        Ok(hi - lo)
    }

    /// Sum of absolute jumps, tail jumps included.
    pub fn total_variation(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    pub fn classify(&self) -> Vec<ExtremumTag> {
        let n = self.values.len();
        let neumann = !self.boundary.is_cauchy();
        (0..n)
            .map(|k| {
                if k == 0 || k + 1 == n {
                    return if neumann {
                        ExtremumTag::Boundary
                    } else {
                        ExtremumTag::Monotone
                    };
                }
                let (l, v, r) = (self.values[k - 1], self.values[k], self.values[k + 1]);
                if v > l && v > r {
                    ExtremumTag::LocalMax
                } else if v < l && v < r {
                    ExtremumTag::LocalMin
                } else {
                    ExtremumTag::Monotone
                }
            })
            .collect()
    }

    pub fn extrema_count(&self) -> usize {
        self.classify()
            .iter()
            .filter(|t| matches!(t, ExtremumTag::LocalMax | ExtremumTag::LocalMin))
            .count()
    }

    /// Smallest closed interval containing `{u ≠ 0}`; `None` for `u ≡ 0`.
    pub fn extended_support(&self) -> Option<Interval> {
        let first = self.values.iter().position(|&v| v != 0.0)?;
        let last = self.values.iter().rposition(|&v| v != 0.0)?;
        Some(Interval::new(
            self.interval(first).lo,
            self.interval(last).hi,
        ))
    }

    /// Measure of `{u ≠ 0}`.
    pub fn support_measure(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(k, _)| self.interval(k).len())
            .sum()
    }

    /// Applies `f` cellwise on the merged breakpoint grid of `self` and `other`.
    pub fn zip_with(
        &self,
        other: &StepFunction,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<StepFunction, StepError> {
        if self.boundary != other.boundary {
            return Err(StepError::DomainMismatch);
        }
        let (grid, pairs) = merged_cells(self, other);
        let values = pairs.iter().map(|&(a, b)| f(a, b)).collect();
        Ok(Self::from_parts_unchecked(self.boundary, grid, values))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> StepFunction {
        Self::from_parts_unchecked(
            self.boundary,
            self.breakpoints.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn scale(&self, factor: f64) -> StepFunction {
        self.map(|v| v * factor)
    }

    /// `‖self − other‖_p` for `p = 1` or `p = ∞` (`p_infinity = true`).
    pub fn lp_distance(&self, other: &StepFunction, norm: Norm) -> Result<f64, StepError> {
        let diff = self.zip_with(other, |a, b| a - b)?;
        match norm {
            Norm::L1 => diff.map(f64::abs).mass().map_err(|_| StepError::InfiniteNorm),
            Norm::LInf => Ok(diff.sup_norm()),
        }
    }

    /// `∫_I |self − other|` over a bounded window.
    pub fn l1_distance_on(&self, other: &StepFunction, window: Interval) -> Result<f64, StepError> {
        self.zip_with(other, |a, b| (a - b).abs())?
            .integral_over(window)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    LInf,
}

/// Union grid of two step functions and the value pair on each cell.
fn merged_cells(u: &StepFunction, v: &StepFunction) -> (Vec<f64>, Vec<(f64, f64)>) {
    let (a, b) = (&u.breakpoints, &v.breakpoints);
    let mut grid = Vec::with_capacity(a.len() + b.len());
    let mut pairs = Vec::with_capacity(a.len() + b.len() + 1);
    let (mut i, mut j) = (0, 0);
    pairs.push((u.values[0], v.values[0]));
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        if a.get(i) == Some(&x) {
            i += 1;
        }
        if b.get(j) == Some(&x) {
            j += 1;
        }
        grid.push(x);
        pairs.push((u.values[i], v.values[j]));
    }
    (grid, pairs)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepFunctionJson {
    mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<[f64; 2]>,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl Serialize for StepFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let (mode, domain) = match self.boundary {
            Boundary::Cauchy => ("cauchy", None),
            Boundary::Neumann { a, b } => ("neumann", Some([a, b])),
        };
        StepFunctionJson {
            mode: mode.to_string(),
            domain,
            breakpoints: self.breakpoints.clone(),
            values: self.values.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StepFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = StepFunctionJson::deserialize(d)?;
        let boundary = match (raw.mode.as_str(), raw.domain) {
            ("cauchy", None) => Boundary::Cauchy,
            ("cauchy", Some(_)) => return Err(D::Error::custom("cauchy mode takes no domain")),
            ("neumann", Some([a, b])) => Boundary::neumann(a, b).map_err(D::Error::custom)?,
            ("neumann", None) => return Err(D::Error::custom("neumann mode requires a domain")),
            (other, _) => return Err(D::Error::custom(format!("unknown mode {other:?}"))),
        };
        StepFunction::new(boundary, raw.breakpoints, raw.values).map_err(D::Error::custom)
    }
}
