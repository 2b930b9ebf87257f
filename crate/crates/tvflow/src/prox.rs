//! One implicit-Euler step of the total variation flow.
//!
//! For a step function `u0` and a step size `h > 0` this minimizes
//!
//! ```text
//!   Φ_h(u) = TV(u) + 1/(2h) ∫ |u − u0|²
//! ```
//!
//! The minimizer is constant on every interval of `u0`, so the problem is a
//! fused-lasso over interval values with weights `|I_k|`. Unbounded Cauchy
//! tails carry infinite weight and keep their value. [`tv_prox`] solves it
//! exactly with a forward/backward dynamic program over the derivative of the
//! value function; [`brute_force_prox`] is an independent dual solver used
//! as an oracle.

use std::collections::VecDeque;

use serde::Serialize;
use thiserror::Error;

use crate::flow::slope_field;
use crate::stepfn::{Boundary, Interval, StepError, StepFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProxError {
    #[error("time step must be positive and finite, got {0}")]
    NonpositiveStep(f64),
    #[error("unbounded problem: {0}")]
    UnboundedProblem(String),
    #[error("dual coordinate descent stopped at gap {gap:e} after {sweeps} sweeps")]
    NotConverged { gap: f64, sweeps: usize },
    #[error("too many intervals for the oracle ({0} > {max})", max = ORACLE_MAX_INTERVALS)]
    TooLarge(usize),
    #[error(transparent)]
    Step(#[from] StepError),
}

/// Dual field `z` sampled at the breakpoints of `u0`; affine in between.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualCertificate {
    pub positions: Vec<f64>,
    pub z: Vec<f64>,
    pub step: f64,
    /// `false` when `u_h` has no jump inside a Cauchy problem; `z` is then one
    /// member of a family of valid certificates, and its values outside the
    /// extended support are not determined by the problem.
    pub anchored: bool,
}

/// Largest violations of the three certificate conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateResiduals {
    /// `max(|z| − 1, 0)`.
    pub bound: f64,
    /// `|z − sign(jump)|` over jumps of `u_h`.
    pub jump_sign: f64,
    /// `|h·Δz/|I_k| − (u_h − u0)|` over bounded intervals, with `z = 0` at
    /// Neumann walls.
    pub balance: f64,
}

impl CertificateResiduals {
    pub fn max(&self) -> f64 {
        self.bound.max(self.jump_sign).max(self.balance)
    }
}

#[derive(Debug, Clone)]
pub struct ProxResult {
    pub uh: StepFunction,
    pub certificate: DualCertificate,
    pub objective: f64,
}

/// `TV(u) + 1/(2h) Σ |I_k| (u_k − u0_k)²` on the grid of `u0`.
///
/// Returns `+∞` when `u` differs from `u0` on an unbounded interval.
pub fn objective(u0: &StepFunction, u: &StepFunction, h: f64) -> Result<f64, StepError> {
    let fidelity = u.zip_with(u0, |a, b| (a - b) * (a - b))?;
    let quad = match fidelity.mass() {
        Ok(m) => m,
        Err(StepError::InfiniteMass) => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
    };
    Ok(u.total_variation() + quad / (2.0 * h))
}

/// Weighted interval problem extracted from a step function.
struct Grid {
    /// Interval values of `u0`.
    alpha: Vec<f64>,
    /// Interval lengths; `∞` for Cauchy tails.
    weight: Vec<f64>,
    /// Index range of the free (finite-weight) intervals.
    free: std::ops::Range<usize>,
    cauchy: bool,
}

impl Grid {
    fn new(u0: &StepFunction) -> Self {
        let n = u0.num_intervals();
        let cauchy = u0.boundary().is_cauchy();
        let free = if cauchy {
            1..n.saturating_sub(1).max(1)
        } else {
            0..n
        };
        Grid {
            alpha: u0.values().to_vec(),
            weight: u0.lengths(),
            free,
            cauchy,
        }
    }
}

fn check_step(h: f64) -> Result<(), ProxError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(ProxError::NonpositiveStep(h));
    }
    Ok(())
}

/// Derivative of a convex piecewise-quadratic function of one variable,
/// stored as linear pieces between sorted knots plus a lazily applied
/// global linear term.
struct Derivative {
    knots: VecDeque<f64>,
    /// `(slope, intercept)` of each piece, `knots.len() + 1` of them.
    pieces: VecDeque<(f64, f64)>,
    shift: (f64, f64),
}

impl Derivative {
    fn zero() -> Self {
        Derivative {
            knots: VecDeque::new(),
            pieces: VecDeque::from([(0.0, 0.0)]),
            shift: (0.0, 0.0),
        }
    }

    /// Subgradient of `|u − c|`.
    fn abs_at(c: f64) -> Self {
        Derivative {
            knots: VecDeque::from([c]),
            pieces: VecDeque::from([(0.0, -1.0), (0.0, 1.0)]),
            shift: (0.0, 0.0),
        }
    }

    fn add_linear(&mut self, slope: f64, intercept: f64) {
        self.shift.0 += slope;
        self.shift.1 += intercept;
    }

    fn piece_value(&self, i: usize, x: f64) -> f64 {
        let (s, c) = self.pieces[i];
        (s + self.shift.0) * x + (c + self.shift.1)
    }

    /// Solves `piece_i(x) = target` and clamps into the piece's range.
    fn piece_solve(&self, i: usize, target: f64) -> f64 {
        let (s, c) = self.pieces[i];
        let slope = s + self.shift.0;
        let x = (target - c - self.shift.1) / slope;
        let lo = if i == 0 { f64::NEG_INFINITY } else { self.knots[i - 1] };
        let hi = self.knots.get(i).copied().unwrap_or(f64::INFINITY);
        x.clamp(lo, hi)
    }

    /// Point where the (strictly increasing) derivative crosses `target`.
    fn solve(&self, target: f64) -> f64 {
        for (i, &k) in self.knots.iter().enumerate() {
            if self.piece_value(i, k) >= target {
                return self.piece_solve(i, target);
            }
            if self.piece_value(i + 1, k) >= target {
                return k;
            }
        }
        self.piece_solve(self.knots.len(), target)
    }

    fn constant_piece(&self, value: f64) -> (f64, f64) {
        (-self.shift.0, value - self.shift.1)
    }

    /// Replaces `f` by `clamp(f, −1, 1)`; returns the points where `f`
    /// crosses `−1` and `+1`.
    fn clamp_unit(&mut self) -> (f64, f64) {
        // Lower side, scanning from the front.
        let lower = loop {
            let Some(&k) = self.knots.front() else {
                let x = self.piece_solve(0, -1.0);
                break x;
            };
            if self.piece_value(0, k) >= -1.0 {
                break self.piece_solve(0, -1.0);
            }
            if self.piece_value(1, k) >= -1.0 {
                self.pieces.pop_front();
                self.knots.pop_front();
                self.knots.push_front(k);
                self.pieces.push_front(self.constant_piece(-1.0));
                break k;
            }
            self.pieces.pop_front();
            self.knots.pop_front();
        };
        let front_is_const = self.knots.front() == Some(&lower)
            && self.pieces[0] == self.constant_piece(-1.0);
        if !front_is_const {
            if self.knots.front() == Some(&lower) {
                self.pieces[0] = self.constant_piece(-1.0);
            } else {
                self.knots.push_front(lower);
                self.pieces.push_front(self.constant_piece(-1.0));
            }
        }

        // Upper side, scanning from the back.
        let upper = loop {
            let m = self.knots.len();
            let k = *self.knots.back().expect("lower knot present");
            if self.piece_value(m, k) <= 1.0 {
                let x = self.piece_solve(m, 1.0);
                if x == k {
                    self.pieces[m] = self.constant_piece(1.0);
                } else {
                    self.knots.push_back(x);
                    self.pieces.push_back(self.constant_piece(1.0));
                }
                break x;
            }
            if self.piece_value(m - 1, k) <= 1.0 {
                self.pieces[m] = self.constant_piece(1.0);
                break k;
            }
            self.pieces.pop_back();
            self.knots.pop_back();
        };
        (lower, upper)
    }
}

/// Exact minimizer of the weighted problem over the free intervals.
fn solve_grid(grid: &Grid, h: f64) -> Vec<f64> {
    let mut u = grid.alpha.clone();
    let free = grid.free.clone();
    if free.is_empty() || (grid.cauchy && grid.alpha.len() < 3) {
        return u;
    }
    let mut msg = if grid.cauchy {
        Derivative::abs_at(grid.alpha[free.start - 1])
    } else {
        Derivative::zero()
    };
    let mut windows = Vec::with_capacity(free.len());
    for k in free.clone() {
        let w = grid.weight[k];
        msg.add_linear(w / h, -w * grid.alpha[k] / h);
        if k + 1 == free.end {
            break;
        }
        windows.push(msg.clamp_unit());
    }
    let last = free.end - 1;
    u[last] = if grid.cauchy {
        let tail = grid.alpha[free.end];
        // g'(u) + sign(u − tail) = 0
        let left = msg_left_limit(&msg, tail) - 1.0;
        let right = msg_right_limit(&msg, tail) + 1.0;
        if left <= 0.0 && 0.0 <= right {
            tail
        } else if left > 0.0 {
            msg.solve(1.0)
        } else {
            msg.solve(-1.0)
        }
    } else {
        msg.solve(0.0)
    };
    for (k, &(lo, hi)) in (free.start..last).zip(&windows).rev() {
        u[k] = u[k + 1].clamp(lo, hi);
    }
    u
}

fn msg_left_limit(d: &Derivative, x: f64) -> f64 {
    let i = d.knots.partition_point(|&k| k < x);
    d.piece_value(i, x)
}

fn msg_right_limit(d: &Derivative, x: f64) -> f64 {
    let i = d.knots.partition_point(|&k| k <= x);
    d.piece_value(i, x)
}

/// Exact TV-proximal step with its dual certificate.
pub fn tv_prox(u0: &StepFunction, h: f64) -> Result<ProxResult, ProxError> {
    check_step(h)?;
    if u0.is_zero() {
        let positions = u0.breakpoints().to_vec();
        let z = vec![0.0; positions.len()];
        return Ok(ProxResult {
            uh: u0.clone(),
            certificate: DualCertificate {
                positions,
                z,
                step: h,
                anchored: true,
            },
            objective: 0.0,
        });
    }
    let grid = Grid::new(u0);
    let values = solve_grid(&grid, h);
    let uh = StepFunction::from_parts_unchecked(
        u0.boundary(),
        u0.breakpoints().to_vec(),
        values.clone(),
    );
    let certificate = recover_certificate(u0, &values, h);
    let objective = objective(u0, &uh, h)?;
    Ok(ProxResult {
        uh,
        certificate,
        objective,
    })
}

/// Integrates `(u_h − u0)/h` from a boundary condition to rebuild `z`.
///
/// `values` are the minimizer's values on the intervals of `u0`.
fn recover_certificate(u0: &StepFunction, values: &[f64], h: f64) -> DualCertificate {
    let alpha = u0.values();
    let lengths = u0.lengths();
    let positions = u0.breakpoints().to_vec();
    let m = positions.len();
    // increment[j]: change of z across interval j.
    let increment = |j: usize| lengths[j] * (values[j] - alpha[j]) / h;

    let mut z = vec![0.0; m];
    let mut anchored = true;
    match u0.boundary() {
        Boundary::Neumann { .. } => {
            let mut acc = 0.0;
            for j in 0..m {
                acc += increment(j);
                z[j] = acc;
            }
        }
        Boundary::Cauchy => {
            let anchor = (0..m).find(|&j| values[j + 1] != values[j]);
            // Offsets relative to z[0]; interval j (1 ≤ j < m) lies between
            // breakpoints j−1 and j.
            let mut offset = vec![0.0; m];
            for j in 1..m {
                offset[j] = offset[j - 1] + increment(j);
            }
            let base = match anchor {
                Some(j) => (values[j + 1] - values[j]).signum() - offset[j],
                None => {
                    anchored = false;
                    let lo = -1.0 - offset.iter().fold(f64::INFINITY, |a, &b| a.min(b));
                    let hi = 1.0 - offset.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    0.5 * (lo + hi)
                }
            };
            for j in 0..m {
                z[j] = base + offset[j];
            }
        }
    }
    DualCertificate {
        positions,
        z,
        step: h,
        anchored,
    }
}

/// Checks a certificate against `u0` and the candidate minimizer `uh`.
pub fn certificate_residuals(
    u0: &StepFunction,
    uh: &StepFunction,
    cert: &DualCertificate,
) -> CertificateResiduals {
    let bound = cert.z.iter().fold(0.0_f64, |m, z| m.max(z.abs() - 1.0));
    let mut jump_sign = 0.0_f64;
    for (&x, &z) in cert.positions.iter().zip(&cert.z) {
        let jump = uh.eval(x) - uh.eval(prev_float(x));
        if jump != 0.0 {
            jump_sign = jump_sign.max((z - jump.signum()).abs());
        }
    }
    let mut balance = 0.0_f64;
    let n = u0.num_intervals();
    let neumann = !u0.boundary().is_cauchy();
    for k in 0..n {
        let iv = u0.interval(k);
        if !iv.is_bounded() {
            continue;
        }
        let z_left = if k == 0 {
            debug_assert!(neumann);
            0.0
        } else {
            cert.z[k - 1]
        };
        let z_right = if k + 1 == n { 0.0 } else { cert.z[k] };
        let mid = 0.5 * (iv.lo + iv.hi);
        let lhs = cert.step * (z_right - z_left) / iv.len();
        let rhs = uh.eval(mid) - u0.eval(mid);
        balance = balance.max((lhs - rhs).abs());
    }
    CertificateResiduals {
        bound: bound.max(0.0),
        jump_sign,
        balance,
    }
}

fn prev_float(x: f64) -> f64 {
    if x == 0.0 {
        -f64::MIN_POSITIVE
    } else if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

/// `∫_I (u_h − u0)`; bounded windows only.
pub fn local_mass_shift(
    u0: &StepFunction,
    uh: &StepFunction,
    window: Interval,
) -> Result<f64, StepError> {
    uh.zip_with(u0, |a, b| a - b)?.integral_over(window)
}

/// `ℓ` successive proximal steps of size `h`.
pub fn discrete_flow(u0: &StepFunction, h: f64, steps: usize) -> Result<StepFunction, ProxError> {
    check_step(h)?;
    let mut u = u0.clone();
    for _ in 0..steps {
        u = tv_prox(&u, h)?.uh;
    }
    Ok(u)
}

/// `min_j |α_j − α_{j+1}|·min(|I_j|, |I_{j+1}|)`, the classical smallness
/// quantity for `ℓh`. It does not by itself rule out neighbours meeting: a
/// maximum falls by up to `2ℓh/|I_k|`. See [`closed_form_horizon`].
pub fn small_step_bound(u0: &StepFunction) -> f64 {
    let lengths = u0.lengths();
    u0.values()
        .windows(2)
        .enumerate()
        .map(|(j, w)| (w[0] - w[1]).abs() * lengths[j].min(lengths[j + 1]))
        .fold(f64::INFINITY, f64::min)
}

/// Largest total time `ℓh` for which no two neighbouring values meet, so the
/// implicit steps move every value at its own constant rate.
pub fn closed_form_horizon(u0: &StepFunction) -> f64 {
    slope_field(u0).horizon
}

/// Closed-form interior values after total time `lh = ℓ·h` up to
/// [`closed_form_horizon`]: maxima drop by `2ℓh/|I_k|`, minima rise by the
/// same, monotone intervals stay. Entry `k − 1` holds interval `k`,
/// `1 ≤ k ≤ N`.
pub fn closed_form_interior(u0: &StepFunction, lh: f64) -> Option<Vec<f64>> {
    if !(lh > 0.0 && lh <= closed_form_horizon(u0)) {
        return None;
    }
    let a = u0.values();
    let lengths = u0.lengths();
    let n = a.len();
    Some(
        (1..n.saturating_sub(1))
            .map(|k| {
                if a[k] > a[k - 1].max(a[k + 1]) {
                    a[k] - 2.0 * lh / lengths[k]
                } else if a[k] < a[k - 1].min(a[k + 1]) {
                    a[k] + 2.0 * lh / lengths[k]
                } else {
                    a[k]
                }
            })
            .collect(),
    )
}

pub const ORACLE_MAX_INTERVALS: usize = 12;

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub gap_tol: f64,
    pub max_sweeps: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            gap_tol: 1e-10,
            max_sweeps: 5_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub uh: StepFunction,
    pub z: Vec<f64>,
    pub gap: f64,
    pub sweeps: usize,
}

/// Box-constrained dual of the weighted problem, `z_j ∈ [−1, 1]` on the
/// breakpoints. Interval `k` sits between `z_{k−1}` and `z_k`; Neumann walls
/// hold `z = 0` and Cauchy tails have `1/|I| = 0`.
struct DualProblem {
    alpha: Vec<f64>,
    inv_w: Vec<f64>,
    h: f64,
}

impl DualProblem {
    fn z_at(z: &[f64], j: isize) -> f64 {
        if j < 0 || j as usize >= z.len() {
            0.0
        } else {
            z[j as usize]
        }
    }

    fn primal_values(&self, z: &[f64]) -> Vec<f64> {
        (0..self.alpha.len())
            .map(|k| {
                let dz = Self::z_at(z, k as isize) - Self::z_at(z, k as isize - 1);
                self.alpha[k] + self.h * dz * self.inv_w[k]
            })
            .collect()
    }

    fn dual_value(&self, z: &[f64]) -> f64 {
        let linear: f64 = z
            .iter()
            .enumerate()
            .map(|(j, zj)| zj * (self.alpha[j + 1] - self.alpha[j]))
            .sum();
        let quad: f64 = (0..self.alpha.len())
            .map(|k| {
                let dz = Self::z_at(z, k as isize) - Self::z_at(z, k as isize - 1);
                dz * dz * self.inv_w[k]
            })
            .sum();
        linear - 0.5 * self.h * quad
    }

    fn primal_value(&self, u: &[f64]) -> f64 {
        let tv: f64 = u.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        let fid: f64 = (0..u.len())
            .filter(|&k| self.inv_w[k] > 0.0)
            .map(|k| (u[k] - self.alpha[k]).powi(2) / self.inv_w[k])
            .sum();
        tv + fid / (2.0 * self.h)
    }

    fn gap(&self, z: &[f64]) -> f64 {
        self.primal_value(&self.primal_values(z)) - self.dual_value(z)
    }

    fn coordinate_target(&self, z: &[f64], j: usize) -> f64 {
        let (wl, wr) = (self.inv_w[j], self.inv_w[j + 1]);
        let denom = wl + wr;
        let grad = (self.alpha[j + 1] - self.alpha[j]) / self.h;
        if denom == 0.0 {
            return grad.signum();
        }
        let zl = Self::z_at(z, j as isize - 1);
        let zr = Self::z_at(z, j as isize + 1);
        ((grad + zl * wl + zr * wr) / denom).clamp(-1.0, 1.0)
    }

    /// Solves the stationarity equations for the unclamped coordinates with
    /// the clamped ones held fixed.
    fn polish(&self, z: &[f64]) -> Vec<f64> {
        let m = z.len();
        let (mut sub, mut diag, mut sup, mut rhs) =
            (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for j in 0..m {
            let (wl, wr) = (self.inv_w[j], self.inv_w[j + 1]);
            if z[j].abs() == 1.0 || wl + wr == 0.0 {
                diag[j] = 1.0;
                rhs[j] = z[j];
            } else {
                diag[j] = wl + wr;
                rhs[j] = (self.alpha[j + 1] - self.alpha[j]) / self.h;
                if j > 0 {
                    sub[j] = -wl;
                }
                if j + 1 < m {
                    sup[j] = -wr;
                }
            }
        }
        thomas(&sub, &diag, &sup, &rhs)
    }
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    for i in 0..m {
        let denom = diag[i] - if i > 0 { sub[i] * c[i - 1] } else { 0.0 };
        c[i] = sup[i] / denom;
        d[i] = (rhs[i] - if i > 0 { sub[i] * d[i - 1] } else { 0.0 }) / denom;
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        x[i] = d[i] - if i + 1 < m { c[i] * x[i + 1] } else { 0.0 };
    }
    x
}

/// Verification oracle: projected coordinate ascent on the dual, run until
/// the duality gap is below `gap_tol` and the iterate is stationary, then
/// polished by an exact solve on the detected active set.
pub fn brute_force_prox(
    u0: &StepFunction,
    h: f64,
    opts: OracleOptions,
) -> Result<OracleResult, ProxError> {
    check_step(h)?;
    let n = u0.num_intervals();
    if n > ORACLE_MAX_INTERVALS + 2 {
        return Err(ProxError::TooLarge(n));
    }
    let inv_w = u0
        .lengths()
        .iter()
        .map(|&w| if w.is_finite() { 1.0 / w } else { 0.0 })
        .collect();
    let dual = DualProblem {
        alpha: u0.values().to_vec(),
        inv_w,
        h,
    };
    let mut z = vec![0.0; n - 1];
    let mut sweeps = 0;
    let mut gap;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut moved = 0.0_f64;
        for j in 0..z.len() {
            let target = dual.coordinate_target(&z, j);
            moved = moved.max((target - z[j]).abs());
            z[j] = target;
        }
        if sweeps % 16 == 0 || moved == 0.0 {
            gap = dual.gap(&z);
            if gap < opts.gap_tol && moved < 1e-13 {
                break;
            }
        }
    }
    gap = dual.gap(&z);
    if gap >= opts.gap_tol {
        return Err(ProxError::NotConverged { gap, sweeps });
    }
    let polished = dual.polish(&z);
    if polished.iter().all(|v| v.abs() <= 1.0 + 1e-12) {
        let polished: Vec<f64> = polished.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let pg = dual.gap(&polished);
        if pg <= gap.max(1e-13) {
            z = polished;
            gap = pg;
        }
    }
    let uh = StepFunction::from_parts_unchecked(
        u0.boundary(),
        u0.breakpoints().to_vec(),
        dual.primal_values(&z),
    );
    Ok(OracleResult { uh, z, gap, sweeps })
}
