//! Exact continuous-time total variation flow of step functions.
//!
//! Between merge events every interval value moves affinely in time with
//! slope `(σ_right − σ_left)/|I|`, where `σ` is the sign of the jump at the
//! corresponding end (zero at a Neumann wall). Unbounded intervals do not
//! move. When two neighbouring values meet the intervals are fused and the
//! slopes of the affected intervals are recomputed.
//!
//! [`FlowSimulator`] advances a single state and scales to large inputs;
//! [`evolve`] records a full [`Trajectory`] with a snapshot per event.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::stepfn::{Boundary, StepError, StepFunction};

/// Relative window inside which merge times count as simultaneous.
pub const SIMULTANEITY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("unbounded data: {0}")]
    UnboundedData(String),
    #[error("time {t} lies outside the trajectory horizon [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("extinction time needs nonnegative data")]
    SignedData,
    #[error("extinction time needs compactly supported data")]
    NotCompactlySupported,
    #[error("extinction time is defined for the Cauchy problem only")]
    NotCauchy,
    #[error("invalid time {0}")]
    InvalidTime(f64),
    #[error(transparent)]
    Step(#[from] StepError),
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-interval slopes of a normalized state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeField {
    pub slopes: Vec<f64>,
    /// Time until the first pair of neighbours meets; `∞` when stationary.
    pub horizon: f64,
}

pub fn slope_field(u: &StepFunction) -> SlopeField {
    let v = u.values();
    let lengths = u.lengths();
    let n = v.len();
    let slopes: Vec<f64> = (0..n)
        .map(|k| {
            if !lengths[k].is_finite() {
                return 0.0;
            }
            let left = if k == 0 { 0.0 } else { sign(v[k] - v[k - 1]) };
            let right = if k + 1 == n { 0.0 } else { sign(v[k + 1] - v[k]) };
            (right - left) / lengths[k]
        })
        .collect();
    let horizon = (0..n.saturating_sub(1))
        .filter_map(|k| merge_delay(v[k + 1] - v[k], slopes[k + 1] - slopes[k]))
        .fold(f64::INFINITY, f64::min);
    SlopeField { slopes, horizon }
}

/// Time for a gap `gap` shrinking at rate `rate` to close.
fn merge_delay(gap: f64, rate: f64) -> Option<f64> {
    if gap * rate < 0.0 {
        Some(-gap / rate)
    } else {
        None
    }
}

#[derive(Debug, Clone)]
struct Cell {
    /// Left end; `−∞` for a Cauchy left tail.
    left: f64,
    len: f64,
    value: f64,
    since: f64,
    slope: f64,
    prev: Option<usize>,
    next: Option<usize>,
    alive: bool,
    version: u64,
}

impl Cell {
    fn value_at(&self, t: f64) -> f64 {
        if self.slope == 0.0 {
            self.value
        } else {
            self.value + self.slope * (t - self.since)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    time: f64,
    left: usize,
    right: usize,
    left_version: u64,
    right_version: u64,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on time, ties broken by position.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.left.cmp(&self.left))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Outcome of one group of simultaneous merges.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeReport {
    pub time: f64,
    /// Breakpoints removed by the merge.
    pub removed: Vec<f64>,
    pub extinct: bool,
}

/// Event-driven integrator for a single state.
#[derive(Debug, Clone)]
pub struct FlowSimulator {
    boundary: Boundary,
    cells: Vec<Cell>,
    head: usize,
    heap: BinaryHeap<Candidate>,
    time: f64,
    live: usize,
}

fn validate(u0: &StepFunction) -> Result<(), FlowError> {
    if u0.values().iter().chain(u0.breakpoints()).any(|v| !v.is_finite()) {
        return Err(FlowError::UnboundedData("non-finite value".into()));
    }
    Ok(())
}

impl FlowSimulator {
    pub fn new(u0: &StepFunction) -> Result<Self, FlowError> {
        validate(u0)?;
        let n = u0.num_intervals();
        let field = slope_field(u0);
        let lengths = u0.lengths();
        let cells = (0..n)
            .map(|k| Cell {
                left: u0.interval(k).lo,
                len: lengths[k],
                value: u0.values()[k],
                since: 0.0,
                slope: field.slopes[k],
                prev: k.checked_sub(1),
                next: if k + 1 < n { Some(k + 1) } else { None },
                alive: true,
                version: 0,
            })
            .collect();
        let mut sim = FlowSimulator {
            boundary: u0.boundary(),
            cells,
            head: 0,
            heap: BinaryHeap::new(),
            time: 0.0,
            live: n,
        };
        for k in 0..n.saturating_sub(1) {
            sim.push_candidate(k);
        }
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn num_intervals(&self) -> usize {
        self.live
    }

    fn push_candidate(&mut self, left: usize) {
        let Some(right) = self.cells[left].next else {
            return;
        };
        let (a, b) = (&self.cells[left], &self.cells[right]);
        let gap = b.value_at(self.time) - a.value_at(self.time);
        if let Some(delay) = merge_delay(gap, b.slope - a.slope) {
            self.heap.push(Candidate {
                time: self.time + delay,
                left,
                right,
                left_version: a.version,
                right_version: b.version,
            });
        }
    }

    fn is_current(&self, c: &Candidate) -> bool {
        let (a, b) = (&self.cells[c.left], &self.cells[c.right]);
        a.alive
            && b.alive
            && a.next == Some(c.right)
            && a.version == c.left_version
            && b.version == c.right_version
    }

    /// Time of the next merge, if any.
    pub fn next_event_time(&mut self) -> Option<f64> {
        while let Some(top) = self.heap.peek() {
            if self.is_current(top) {
                return Some(top.time);
            }
            self.heap.pop();
        }
        None
    }

    /// Processes every merge occurring at the next event time.
    pub fn step_event(&mut self) -> Option<MergeReport> {
        let t = self.next_event_time()?;
        let window = t + SIMULTANEITY_TOL * t.abs().max(f64::MIN_POSITIVE);
        let mut joins = Vec::new();
        while let Some(top) = self.heap.peek().copied() {
            if top.time > window {
                break;
            }
            self.heap.pop();
            if self.is_current(&top) {
                joins.push(top.left);
            }
        }
        self.time = t;
        let joined_right: HashSet<usize> = joins.iter().copied().collect();
        joins.sort_by(|&a, &b| self.cells[a].left.total_cmp(&self.cells[b].left));
        joins.dedup();
        let mut removed = Vec::new();
        let mut touched = Vec::new();
        for &start in &joins {
            if !self.cells[start].alive
                || self.cells[start]
                    .prev
                    .is_some_and(|p| joined_right.contains(&p) && self.cells[p].alive)
            {
                continue;
            }
            let mut members = vec![start];
            let mut cur = start;
            while joined_right.contains(&cur) {
                cur = self.cells[cur].next.expect("joined cell has a neighbour");
                members.push(cur);
            }
            let mut tail_value = None;
            let mut weighted = 0.0;
            let mut len = 0.0;
            for &m in &members {
                let c = &self.cells[m];
                let v = c.value_at(t);
                if !c.len.is_finite() {
                    tail_value = Some(v);
                }
                weighted += v * c.len;
                len += c.len;
            }
            let value = tail_value.unwrap_or(weighted / len);
            for w in members.windows(2) {
                removed.push(self.cells[w[1]].left);
            }
            let last_next = self.cells[cur].next;
            for &m in &members[1..] {
                self.cells[m].alive = false;
            }
            self.live -= members.len() - 1;
            let c = &mut self.cells[start];
            c.len = len;
            c.value = value;
            c.since = t;
            c.next = last_next;
            if let Some(nx) = last_next {
                self.cells[nx].prev = Some(start);
            }
            touched.push(start);
        }
        removed.sort_by(f64::total_cmp);
        // Recompute slopes on the merged cells and their neighbours.
        let mut affected: Vec<usize> = Vec::new();
        for &c in &touched {
            affected.push(c);
            affected.extend(self.cells[c].prev);
            affected.extend(self.cells[c].next);
        }
        affected.sort_unstable();
        affected.dedup();
        touched.sort_unstable();
        for &c in &affected {
            let slope = self.local_slope(c, t);
            let cell = &mut self.cells[c];
            if slope != cell.slope || touched.binary_search(&c).is_ok() {
                cell.value = cell.value_at(t);
                cell.since = t;
                cell.slope = slope;
                cell.version += 1;
            }
        }
        for &c in &affected {
            self.push_candidate(c);
            if let Some(p) = self.cells[c].prev {
                self.push_candidate(p);
            }
        }
        let extinct = self.boundary.is_cauchy()
            && self.live == 1
            && self.cells[self.head].value == 0.0;
        Some(MergeReport {
            time: t,
            removed,
            extinct,
        })
    }

    fn local_slope(&self, k: usize, t: f64) -> f64 {
        let c = &self.cells[k];
        if !c.len.is_finite() {
            return 0.0;
        }
        let v = c.value_at(t);
        let left = c
            .prev
            .map_or(0.0, |p| sign(v - self.cells[p].value_at(t)));
        let right = c
            .next
            .map_or(0.0, |n| sign(self.cells[n].value_at(t) - v));
        (right - left) / c.len
    }

    /// Processes all events up to `t` and moves the clock to `t`.
    pub fn advance_to(&mut self, t: f64) -> Vec<MergeReport> {
        assert!(t >= self.time, "cannot advance backwards");
        let mut out = Vec::new();
        while let Some(te) = self.next_event_time() {
            if te > t {
                break;
            }
            out.extend(self.step_event());
        }
        self.time = t;
        out
    }

    fn order(&self) -> Vec<usize> {
        let mut ids = Vec::with_capacity(self.live);
        let mut cur = Some(self.head);
        while let Some(c) = cur {
            ids.push(c);
            cur = self.cells[c].next;
        }
        ids
    }

    /// Current state.
    pub fn state(&self) -> StepFunction {
        let ids = self.order();
        let values = ids.iter().map(|&c| self.cells[c].value_at(self.time)).collect();
        let breakpoints = ids[1..].iter().map(|&c| self.cells[c].left).collect();
        StepFunction::from_parts_unchecked(self.boundary, breakpoints, values)
    }

    /// Slopes of the intervals of [`FlowSimulator::state`].
    pub fn slopes(&self) -> Vec<f64> {
        self.order().iter().map(|&c| self.cells[c].slope).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum FlowEventKind {
    /// Neighbouring pairs `(k, k + 1)` of the state before the event that
    /// were fused.
    LevelsMerge { pairs: Vec<(usize, usize)> },
    Extinction,
    HorizonReached,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowEvent {
    pub time: f64,
    pub kind: FlowEventKind,
    pub state_after: StepFunction,
}

/// Stretch of time with a fixed interval structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub state: StepFunction,
    pub slopes: SlopeField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: StepFunction,
    pub events: Vec<FlowEvent>,
    pub segments: Vec<Segment>,
    pub horizon: f64,
}

/// Full trajectory up to `t_end` (which may be `∞`).
pub fn evolve(u0: &StepFunction, t_end: f64) -> Result<Trajectory, FlowError> {
    if t_end.is_nan() || t_end < 0.0 {
        return Err(FlowError::InvalidTime(t_end));
    }
    let mut sim = FlowSimulator::new(u0)?;
    let mut events = Vec::new();
    let mut segments = Vec::new();
    loop {
        let start = sim.time();
        let state = sim.state();
        let slopes = SlopeField {
            slopes: sim.slopes(),
            horizon: slope_field(&state).horizon,
        };
        match sim.next_event_time() {
            Some(te) if te <= t_end => {
                let report = sim.step_event().expect("event pending");
                let after = sim.state();
                let bps = state.breakpoints();
                let pairs = report
                    .removed
                    .iter()
                    .map(|x| {
                        let j = bps.partition_point(|b| b < x);
                        (j, j + 1)
                    })
                    .collect();
                events.push(FlowEvent {
                    time: te,
                    kind: FlowEventKind::LevelsMerge { pairs },
                    state_after: after.clone(),
                });
                if report.extinct {
                    events.push(FlowEvent {
                        time: te,
                        kind: FlowEventKind::Extinction,
                        state_after: after,
                    });
                }
                segments.push(Segment {
                    start,
                    end: te,
                    state,
                    slopes,
                });
            }
            _ => {
                segments.push(Segment {
                    start,
                    end: t_end,
                    state,
                    slopes,
                });
                if t_end.is_finite() {
                    sim.advance_to(t_end);
                    events.push(FlowEvent {
                        time: t_end,
                        kind: FlowEventKind::HorizonReached,
                        state_after: sim.state(),
                    });
                }
                break;
            }
        }
    }
    Ok(Trajectory {
        initial: u0.clone(),
        events,
        segments,
        horizon: t_end,
    })
}

impl Trajectory {
    /// Exact state at time `t`; at an event time the post-merge state.
    pub fn sample(&self, t: f64) -> Result<StepFunction, FlowError> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(FlowError::OutOfHorizon {
                t,
                horizon: self.horizon,
            });
        }
        let i = self
            .segments
            .partition_point(|s| s.start <= t)
            .saturating_sub(1);
        let seg = &self.segments[i];
        let dt = t - seg.start;
        let values = seg
            .state
            .values()
            .iter()
            .zip(&seg.slopes.slopes)
            .map(|(v, s)| if *s == 0.0 { *v } else { v + s * dt })
            .collect();
        Ok(StepFunction::from_parts_unchecked(
            seg.state.boundary(),
            seg.state.breakpoints().to_vec(),
            values,
        ))
    }

    pub fn extinction(&self) -> Option<f64> {
        self.events
            .iter()
            .find(|e| e.kind == FlowEventKind::Extinction)
            .map(|e| e.time)
    }

    /// Times of the merge events.
    pub fn merge_times(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, FlowEventKind::LevelsMerge { .. }))
            .map(|e| e.time)
            .collect()
    }
}

/// `½ ∫ u0` for nonnegative compactly supported Cauchy data.
pub fn extinction_time(u0: &StepFunction) -> Result<f64, FlowError> {
    if !u0.boundary().is_cauchy() {
        return Err(FlowError::NotCauchy);
    }
    if !u0.has_compact_support() {
        return Err(FlowError::NotCompactlySupported);
    }
    if !u0.is_nonnegative() {
        return Err(FlowError::SignedData);
    }
    Ok(0.5 * u0.mass()?)
}

pub fn mass_at(traj: &Trajectory, t: f64) -> Result<f64, FlowError> {
    Ok(traj.sample(t)?.mass()?)
}
