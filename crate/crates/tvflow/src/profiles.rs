//! Continuous piecewise-linear data.
//!
//! A single-peaked profile evolves by cutting its top at a level `h(t)` that
//! removes area `2t`. General profiles are evolved through a pair of step
//! functions enclosing them; the order-preserving flow keeps the exact
//! solution between the two evolved halves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{FlowError, FlowSimulator};
use crate::stepfn::{StepError, StepFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("knots are not strictly increasing at index {0}")]
    NonSortedKnots(usize),
    #[error("{knots} knots but {values} values")]
    LengthMismatch { knots: usize, values: usize },
    #[error("need at least two knots")]
    TooFewKnots,
    #[error("non-finite number in input")]
    NonFinite,
    #[error("profile is not a single nonnegative bump")]
    NotUnimodal,
    #[error("time {t} exceeds the extinction time {extinction}")]
    BeyondExtinction { t: f64, extinction: f64 },
    #[error("invalid time {0}")]
    InvalidTime(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    knots: Vec<f64>,
    values: Vec<f64>,
}

/// Affine between knots, zero outside `[x_0, x_M]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile")]
pub struct PiecewiseLinear {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<RawProfile> for PiecewiseLinear {
    type Error = ProfileError;
    fn try_from(raw: RawProfile) -> Result<Self, Self::Error> {
        PiecewiseLinear::new(raw.knots, raw.values)
    }
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self, ProfileError> {
        if knots.len() != values.len() {
            return Err(ProfileError::LengthMismatch {
                knots: knots.len(),
                values: values.len(),
            });
        }
        if knots.len() < 2 {
            return Err(ProfileError::TooFewKnots);
        }
        if knots.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(ProfileError::NonFinite);
        }
        if let Some(i) = knots.windows(2).position(|w| w[0] >= w[1]) {
            return Err(ProfileError::NonSortedKnots(i + 1));
        }
        Ok(PiecewiseLinear { knots, values })
    }

    /// `(1 − |x − c|/r)₊ · height`.
    pub fn hat(center: f64, radius: f64, height: f64) -> Self {
        PiecewiseLinear {
            knots: vec![center - radius, center, center + radius],
            values: vec![0.0, height, 0.0],
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (a, b) = self.support();
        if x < a || x > b {
            return 0.0;
        }
        let i = self.knots.partition_point(|&k| k <= x).clamp(1, self.knots.len() - 1);
        let (x0, x1) = (self.knots[i - 1], self.knots[i]);
        let (y0, y1) = (self.values[i - 1], self.values[i]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    pub fn mass(&self) -> f64 {
        self.segments()
            .map(|(x0, x1, y0, y1)| 0.5 * (x1 - x0) * (y0 + y1))
            .sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    fn segments(&self) -> impl Iterator<Item = (f64, f64, f64, f64)> + '_ {
        self.knots
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, y)| (x[0], x[1], y[0], y[1]))
    }

    /// Nonnegative, nondecreasing and then nonincreasing.
    pub fn is_unimodal(&self) -> bool {
        if self.values.iter().any(|&v| v < 0.0) {
            return false;
        }
        let mut descending = false;
        for w in self.values.windows(2) {
            if w[1] < w[0] {
                descending = true;
            } else if w[1] > w[0] && descending {
                return false;
            }
        }
        true
    }

    /// `max |u(x) − u(y)| / |x − y|^α` over pairs of knots.
    pub fn holder_modulus(&self, alpha: f64) -> f64 {
        let mut best = 0.0_f64;
        for i in 0..self.knots.len() {
            for j in i + 1..self.knots.len() {
                let d = (self.values[j] - self.values[i]).abs();
                best = best.max(d / (self.knots[j] - self.knots[i]).powf(alpha));
            }
        }
        best
    }

    /// `∫ [u − h]₊`.
    pub fn area_above(&self, h: f64) -> f64 {
        self.segments()
            .map(|(x0, x1, y0, y1)| {
                let len = x1 - x0;
                let (lo, hi) = (y0.min(y1), y0.max(y1));
                if lo >= h {
                    len * (0.5 * (y0 + y1) - h)
                } else if hi <= h {
                    0.0
                } else {
                    len * (hi - h) * (hi - h) / (2.0 * (hi - lo))
                }
            })
            .sum()
    }

    /// Measure of `{u > s}`.
    fn width_above(&self, s: f64) -> f64 {
        self.segments()
            .map(|(x0, x1, y0, y1)| {
                let len = x1 - x0;
                let (lo, hi) = (y0.min(y1), y0.max(y1));
                if lo > s {
                    len
                } else if hi <= s {
                    0.0
                } else {
                    len * (hi - s) / (hi - lo)
                }
            })
            .sum()
    }

    /// Leftmost and rightmost points where `u ≥ h`.
    fn level_interval(&self, h: f64) -> (f64, f64) {
        let crossing = |x0: f64, x1: f64, y0: f64, y1: f64| x0 + (h - y0) * (x1 - x0) / (y1 - y0);
        let mut left = self.knots[0];
        for (x0, x1, y0, y1) in self.segments() {
            if y0 >= h {
                left = x0;
                break;
            }
            if y1 >= h {
                left = crossing(x0, x1, y0, y1);
                break;
            }
        }
        let mut right = *self.knots.last().unwrap();
        for (x0, x1, y0, y1) in self.segments().collect::<Vec<_>>().into_iter().rev() {
            if y1 >= h {
                right = x1;
                break;
            }
            if y0 >= h {
                right = crossing(x0, x1, y0, y1);
                break;
            }
        }
        (left, right)
    }

    /// `min{u, h}` with knots inserted where `u` crosses `h`.
    pub fn clip_above(&self, h: f64) -> PiecewiseLinear {
        let mut knots = Vec::with_capacity(self.knots.len() + 2);
        let mut values = Vec::with_capacity(self.knots.len() + 2);
        for (x0, x1, y0, y1) in self.segments() {
            knots.push(x0);
            values.push(y0.min(h));
            if (y0 - h) * (y1 - h) < 0.0 {
                let x = x0 + (h - y0) * (x1 - x0) / (y1 - y0);
                if x > x0 && x < x1 {
                    knots.push(x);
                    values.push(h);
                }
            }
        }
        knots.push(*self.knots.last().unwrap());
        values.push(self.values.last().unwrap().min(h));
        PiecewiseLinear { knots, values }
    }
}

/// Top of a single bump at time `t`: `u(t) = min{u0, level}` and the plateau
/// `[left, right]` where the cut is active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelCut {
    pub t: f64,
    pub level: f64,
    pub left: f64,
    pub right: f64,
    /// `dh/dt = −2/(right − left)`.
    pub rate: f64,
    /// `|∫[u0 − level]₊ − 2t|`.
    pub residual: f64,
}

fn check_unimodal(u0: &PiecewiseLinear, t: f64) -> Result<f64, ProfileError> {
    if !u0.is_unimodal() {
        return Err(ProfileError::NotUnimodal);
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(ProfileError::InvalidTime(t));
    }
    let extinction = 0.5 * u0.mass();
    if t > extinction {
        return Err(ProfileError::BeyondExtinction { t, extinction });
    }
    Ok(extinction)
}

/// Solves `∫ [u0 − h]₊ = 2t` for a single-bump profile.
pub fn level_cut(u0: &PiecewiseLinear, t: f64) -> Result<LevelCut, ProfileError> {
    let extinction = check_unimodal(u0, t)?;
    let target = 2.0 * t;
    let h = if t == extinction {
        0.0
    } else {
        let mut levels: Vec<f64> = u0.values().to_vec();
        levels.push(0.0);
        levels.sort_by(|a, b| b.total_cmp(a));
        levels.dedup();
        // Area is nondecreasing along the descending levels.
        let j = levels.partition_point(|&l| u0.area_above(l) <= target);
        if j == 0 {
            levels[0]
        } else if j == levels.len() {
            0.0
        } else {
            let (top, bottom) = (levels[j - 1], levels[j]);
            let base = u0.area_above(top);
            let gap = top - bottom;
            let (s1, s2) = (bottom + gap / 3.0, bottom + 2.0 * gap / 3.0);
            let (w1, w2) = (u0.width_above(s1), u0.width_above(s2));
            // W(s) = w_top + k·(top − s)
            let k = (w1 - w2) / (s2 - s1);
            let w_top = w2 - k * (top - s2);
            let c = target - base;
            if c <= 0.0 {
                top
            } else {
                let d = 2.0 * c / (w_top + (w_top * w_top + 2.0 * k * c).sqrt());
                (top - d).clamp(bottom, top)
            }
        }
    };
    let (left, right) = u0.level_interval(h);
    let rate = if right > left {
        -2.0 / (right - left)
    } else {
        f64::NEG_INFINITY
    };
    Ok(LevelCut {
        t,
        level: h,
        left,
        right,
        rate,
        residual: (u0.area_above(h) - target).abs(),
    })
}

/// `u(t) = min{u0, h(t)}` for a single-bump profile.
pub fn evolve_unimodal(u0: &PiecewiseLinear, t: f64) -> Result<PiecewiseLinear, ProfileError> {
    let cut = level_cut(u0, t)?;
    Ok(u0.clip_above(cut.level))
}

/// Step functions `lower ≤ u0 ≤ upper` with `upper − lower ≤ ε`.
pub fn sandwich(
    u0: &PiecewiseLinear,
    eps: f64,
) -> Result<(StepFunction, StepFunction), ProfileError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ProfileError::InvalidTolerance(eps));
    }
    let mut edges = vec![u0.knots[0]];
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for (x0, x1, y0, y1) in u0.segments() {
        let n = ((y1 - y0).abs() / eps).ceil().max(1.0) as usize;
        let mut prev = y0;
        for j in 1..=n {
            let (x, y) = if j == n {
                (x1, y1)
            } else {
                let f = j as f64 / n as f64;
                (x0 + f * (x1 - x0), y0 + f * (y1 - y0))
            };
            edges.push(x);
            lower.push(prev.min(y));
            upper.push(prev.max(y));
            prev = y;
        }
    }
    Ok((
        StepFunction::from_cells(&edges, &lower)?,
        StepFunction::from_cells(&edges, &upper)?,
    ))
}

/// Two-sided enclosure of the solution at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Bracket {
    pub t: f64,
    pub lower: StepFunction,
    pub upper: StepFunction,
}

impl Bracket {
    /// `‖upper − lower‖_∞`.
    pub fn gap(&self) -> f64 {
        self.upper
            .zip_with(&self.lower, |a, b| a - b)
            .map(|d| d.sup_norm())
            .unwrap_or(f64::INFINITY)
    }

    pub fn contains(&self, x: f64, value: f64, slack: f64) -> bool {
        self.lower.eval(x) - slack <= value && value <= self.upper.eval(x) + slack
    }
}

/// Evolves both halves of a sandwich; queried times must not decrease.
#[derive(Debug, Clone)]
pub struct BracketEvolution {
    lower: FlowSimulator,
    upper: FlowSimulator,
}

impl BracketEvolution {
    pub fn new(lower: &StepFunction, upper: &StepFunction) -> Result<Self, ProfileError> {
        Ok(BracketEvolution {
            lower: FlowSimulator::new(lower)?,
            upper: FlowSimulator::new(upper)?,
        })
    }

    pub fn from_profile(u0: &PiecewiseLinear, eps: f64) -> Result<Self, ProfileError> {
        let (lo, up) = sandwich(u0, eps)?;
        Self::new(&lo, &up)
    }

    pub fn at(&mut self, t: f64) -> Result<Bracket, ProfileError> {
        if !(t >= self.lower.time() && t.is_finite()) {
            return Err(ProfileError::InvalidTime(t));
        }
        self.lower.advance_to(t);
        self.upper.advance_to(t);
        Ok(Bracket {
            t,
            lower: self.lower.state(),
            upper: self.upper.state(),
        })
    }
}

pub fn evolve_continuous(
    u0: &PiecewiseLinear,
    t: f64,
    eps: f64,
) -> Result<Bracket, ProfileError> {
    BracketEvolution::from_profile(u0, eps)?.at(t)
}
