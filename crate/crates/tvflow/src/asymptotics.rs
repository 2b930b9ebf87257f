//! Behaviour near extinction.
//!
//! Nonnegative compactly supported data vanish at `T = ½∫u0` and, after
//! division by `T − t`, approach `2χ_[a,b]/(b − a)` on the extended support.
//! The rate of that approach is not universal; [`build_rate_profile`] builds
//! profiles whose error decays no faster (or no slower) than a prescribed
//! rate function.

use serde::Serialize;
use thiserror::Error;

use crate::flow::{extinction_time, FlowError, Trajectory};
use crate::profiles::{level_cut, BracketEvolution, PiecewiseLinear, ProfileError};
use crate::stepfn::{Interval, Norm, StepError, StepFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsymptoticsError {
    #[error("time {t} is at or past the extinction time {extinction}")]
    AtOrPastExtinction { t: f64, extinction: f64 },
    #[error("the zero function has no extinction profile")]
    ZeroFunction,
    #[error("invalid rate function: {0}")]
    InvalidRateFunction(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Step(#[from] StepError),
}

/// `w = T/(T − t) · u(t)` at `s = T log(T/(T − t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledState {
    pub w: StepFunction,
    pub s: f64,
    pub extinction_time: f64,
}

pub fn rescale(traj: &Trajectory, t: f64) -> Result<RescaledState, AsymptoticsError> {
    let extinction = extinction_time(&traj.initial)?;
    if t >= extinction {
        return Err(AsymptoticsError::AtOrPastExtinction { t, extinction });
    }
    let u = traj.sample(t)?;
    let remaining = extinction - t;
    Ok(RescaledState {
        w: u.scale(extinction / remaining),
        s: extinction * (extinction / remaining).ln(),
        extinction_time: extinction,
    })
}

/// Inverse of the logarithmic time change.
pub fn original_time(extinction: f64, s: f64) -> f64 {
    extinction * (1.0 - (-s / extinction).exp())
}

/// `S = 2T/(b − a) · χ_[a,b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationaryProfile {
    pub support: Interval,
    pub height: f64,
    pub extinction_time: f64,
}

impl StationaryProfile {
    pub fn as_step(&self) -> StepFunction {
        StepFunction::indicator(self.support.lo, self.support.hi, self.height)
    }
}

pub fn extinction_profile(u0: &StepFunction) -> Result<StationaryProfile, AsymptoticsError> {
    let extinction = extinction_time(u0)?;
    let support = u0.extended_support().ok_or(AsymptoticsError::ZeroFunction)?;
    Ok(StationaryProfile {
        support,
        height: 2.0 * extinction / support.len(),
        extinction_time: extinction,
    })
}

/// `‖u(t)/(T − t) − 2χ_[a,b]/(b − a)‖₁`.
pub fn relative_error(traj: &Trajectory, t: f64) -> Result<f64, AsymptoticsError> {
    let profile = extinction_profile(&traj.initial)?;
    let extinction = profile.extinction_time;
    if t >= extinction {
        return Err(AsymptoticsError::AtOrPastExtinction { t, extinction });
    }
    let u = traj.sample(t)?.scale(1.0 / (extinction - t));
    let target = profile.as_step().scale(1.0 / extinction);
    Ok(u.lp_distance(&target, Norm::L1)?)
}

/// `[lo, hi]` containing `∫ |f/scale − g|` for every `lower ≤ f ≤ upper`.
pub fn certified_l1_interval(
    lower: &StepFunction,
    upper: &StepFunction,
    target: &StepFunction,
    scale: f64,
) -> (f64, f64) {
    let mut grid: Vec<f64> = lower
        .breakpoints()
        .iter()
        .chain(upper.breakpoints())
        .chain(target.breakpoints())
        .copied()
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let (mut lo, mut hi) = (0.0, 0.0);
    for w in grid.windows(2) {
        let len = w[1] - w[0];
        let mid = 0.5 * (w[0] + w[1]);
        let (l, u, g) = (
            lower.eval(mid) / scale,
            upper.eval(mid) / scale,
            target.eval(mid),
        );
        let dist = if g < l {
            l - g
        } else if g > u {
            g - u
        } else {
            0.0
        };
        lo += len * dist;
        hi += len * (l - g).abs().max((u - g).abs());
    }
    (lo, hi)
}

type Scalar = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Increasing `ξ` with `ξ(0) = 0`, together with its inverse.
pub struct RateFunction {
    pub name: String,
    xi: Scalar,
    xi_inv: Scalar,
}

impl std::fmt::Debug for RateFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RateFunction").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMode {
    NoRate,
    FastRate,
}

impl RateFunction {
    pub fn new(
        name: impl Into<String>,
        xi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        xi_inv: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        RateFunction {
            name: name.into(),
            xi: Box::new(xi),
            xi_inv: Box::new(xi_inv),
        }
    }

    pub fn sqrt() -> Self {
        Self::new("sqrt", f64::sqrt, |s| s * s)
    }

    pub fn identity() -> Self {
        Self::new("identity", |s| s, |s| s)
    }

    /// `ξ(s) = s^p`.
    pub fn power(p: f64) -> Self {
        Self::new(format!("pow:{p}"), move |s| s.powf(p), move |s| s.powf(1.0 / p))
    }

    /// Parses `sqrt`, `identity` or `pow:<p>`.
    pub fn parse(name: &str) -> Result<Self, AsymptoticsError> {
        match name {
            "sqrt" => Ok(Self::sqrt()),
            "identity" => Ok(Self::identity()),
            _ => {
                let p = name
                    .strip_prefix("pow:")
                    .and_then(|p| p.parse::<f64>().ok())
                    .filter(|p| *p > 0.0 && p.is_finite())
                    .ok_or_else(|| AsymptoticsError::InvalidRateFunction(name.to_string()))?;
                Ok(Self::power(p))
            }
        }
    }

    pub fn xi(&self, s: f64) -> f64 {
        (self.xi)(s)
    }

    pub fn xi_inv(&self, s: f64) -> f64 {
        (self.xi_inv)(s)
    }

    /// Checks monotonicity, `ξ(0) = 0`, the inverse pair and the mode
    /// inequality on a grid of `[0, 1]`.
    pub fn validate(&self, mode: RateMode) -> Result<(), AsymptoticsError> {
        let bad = |why: &str| Err(AsymptoticsError::InvalidRateFunction(format!("{}: {why}", self.name)));
        if self.xi(0.0) != 0.0 {
            return bad("ξ(0) ≠ 0");
        }
        let n = 1000;
        let mut prev = 0.0;
        for i in 1..=n {
            let s = i as f64 / n as f64;
            let v = self.xi(s);
            if !v.is_finite() || v <= prev {
                return bad("not strictly increasing on [0,1]");
            }
            prev = v;
            if (self.xi_inv(v) - s).abs() > 1e-9 * s.max(1.0) {
                return bad("inverse does not match");
            }
            let ok = match mode {
                RateMode::NoRate => v >= s * (1.0 - 1e-15),
                RateMode::FastRate => v <= s * (1.0 + 1e-15),
            };
            if !ok {
                return bad(match mode {
                    RateMode::NoRate => "ξ(s) < s somewhere on [0,1]",
                    RateMode::FastRate => "ξ(s) > s somewhere on [0,1]",
                });
            }
        }
        Ok(())
    }
}

/// Profile `c0 ξ⁻¹(x)` on `[0, ¼]`, `1` on `[¼, ¾]`, `c0 ξ⁻¹(1 − x)` on
/// `[¾, 1]`, with `c0 = 1/ξ⁻¹(¼)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateProfile {
    pub profile: PiecewiseLinear,
    pub c0: f64,
    /// Mass of the exact (non-sampled) profile.
    pub reference_mass: f64,
    pub extinction_time: f64,
}

pub const RATE_PROFILE_MASS_TOL: f64 = 1e-6;

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

pub fn build_rate_profile(xi: &RateFunction, mode: RateMode) -> Result<RateProfile, AsymptoticsError> {
    xi.validate(mode)?;
    let c0 = 1.0 / xi.xi_inv(0.25);
    let side = |x: f64| c0 * xi.xi_inv(x);
    let side_mass = adaptive_simpson(&side, 0.0, 0.25, 1e-14);
    let reference_mass = 2.0 * side_mass + 0.5;

    // Bisect the worst segment until the sampled mass is close enough.
    let mut xs = vec![0.0, 0.0625, 0.125, 0.1875, 0.25];
    let mut ys: Vec<f64> = xs.iter().map(|&x| side(x)).collect();
    *ys.last_mut().unwrap() = 1.0;
    let target = 0.1 * RATE_PROFILE_MASS_TOL;
    loop {
        let trap: f64 = xs
            .windows(2)
            .zip(ys.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum();
        if (2.0 * (trap - side_mass)).abs() < target {
            break;
        }
        if xs.len() > 2_000_000 {
            return Err(AsymptoticsError::InvalidRateFunction(format!(
                "{}: sampling did not reach the mass tolerance",
                xi.name
            )));
        }
        // Local error estimate: trapezoid minus the midpoint-refined value.
        let mut new_xs = Vec::with_capacity(xs.len() * 2);
        let mut new_ys = Vec::with_capacity(xs.len() * 2);
        let seg_tol = target / (4.0 * xs.len() as f64);
        for i in 0..xs.len() - 1 {
            new_xs.push(xs[i]);
            new_ys.push(ys[i]);
            let m = 0.5 * (xs[i] + xs[i + 1]);
            let fm = side(m);
            let coarse = 0.5 * (xs[i + 1] - xs[i]) * (ys[i] + ys[i + 1]);
            let fine = 0.25 * (xs[i + 1] - xs[i]) * (ys[i] + 2.0 * fm + ys[i + 1]);
            if (coarse - fine).abs() > seg_tol {
                new_xs.push(m);
                new_ys.push(fm);
            }
        }
        new_xs.push(0.25);
        new_ys.push(1.0);
        if new_xs.len() == xs.len() {
            // All segments already pass locally; refine uniformly.
            let mut u_xs = Vec::with_capacity(xs.len() * 2);
            let mut u_ys = Vec::with_capacity(xs.len() * 2);
            for i in 0..xs.len() - 1 {
                u_xs.push(xs[i]);
                u_ys.push(ys[i]);
                let m = 0.5 * (xs[i] + xs[i + 1]);
                u_xs.push(m);
                u_ys.push(side(m));
            }
            u_xs.push(0.25);
            u_ys.push(1.0);
            xs = u_xs;
            ys = u_ys;
        } else {
            xs = new_xs;
            ys = new_ys;
        }
    }
    let mut knots = xs.clone();
    let mut values = ys.clone();
    for (x, y) in xs.iter().zip(&ys).rev() {
        knots.push(1.0 - x);
        values.push(*y);
    }
    let profile = PiecewiseLinear::new(knots, values)?;
    let extinction_time = 0.5 * profile.mass();
    Ok(RateProfile {
        profile,
        c0,
        reference_mass,
        extinction_time,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
    NotApplicable,
}

/// Result at one sample `τ = T − t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSample {
    pub tau: f64,
    pub t: f64,
    /// `2ξ(τ)` (no-rate) or `ξ(8τ)` (fast-rate).
    pub bound: f64,
    /// Certified range of the relative error.
    pub error_lower: f64,
    pub error_upper: f64,
    /// Relative error of the level-cut solution of the sampled profile.
    pub error_level_cut: f64,
    pub verdict: Verdict,
    /// Certified range of `‖u(t)‖_∞`.
    pub sup_lower: f64,
    pub sup_upper: f64,
    pub envelope_verdict: Verdict,
    /// `ξ(2τ/c0)` and the measured point where `u(t)/τ = 2`.
    pub alpha0_formula: f64,
    pub alpha0_measured: f64,
    /// `ξ(τ)`, the lower estimate for `α0`.
    pub xi_tau: f64,
    /// Level-cut speed `dh/dt`.
    pub level_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub rate_function: String,
    pub mode: RateMode,
    pub c0: f64,
    pub extinction_time: f64,
    pub profile_knots: usize,
    pub mass_error: f64,
    pub eps: f64,
    pub samples: Vec<RateSample>,
}

/// Exact `∫_0^1 |min(u0, h)/τ − 2|` for a profile supported in `[0, 1]`.
fn level_cut_error(profile: &PiecewiseLinear, h: f64, tau: f64) -> f64 {
    let u = profile.clip_above(h);
    let mut total = 0.0;
    for (x, y) in u.knots().windows(2).zip(u.values().windows(2)) {
        let (a, b) = (y[0] / tau - 2.0, y[1] / tau - 2.0);
        let len = x[1] - x[0];
        total += if a * b >= 0.0 {
            0.5 * len * (a.abs() + b.abs())
        } else {
            0.5 * len * (a * a + b * b) / (a.abs() + b.abs())
        };
    }
    let (lo, hi) = profile.support();
    total + 2.0 * ((lo - 0.0).max(0.0) + (1.0 - hi).max(0.0))
}

/// First point from the left where the profile reaches `level`.
fn left_crossing(profile: &PiecewiseLinear, level: f64) -> f64 {
    for (x, y) in profile.knots().windows(2).zip(profile.values().windows(2)) {
        if y[1] >= level {
            if y[0] >= level {
                return x[0];
            }
            return x[0] + (level - y[0]) * (x[1] - x[0]) / (y[1] - y[0]);
        }
    }
    f64::NAN
}

/// Evolves the rate profile of `ξ` through a certified bracket of width `eps`
/// and compares its relative error with the rate bound at each `τ = T − t`.
pub fn verify_rate(
    xi: &RateFunction,
    mode: RateMode,
    taus: &[f64],
    eps: f64,
) -> Result<RateReport, AsymptoticsError> {
    let rp = build_rate_profile(xi, mode)?;
    let extinction = rp.extinction_time;
    let mut order: Vec<usize> = (0..taus.len()).collect();
    order.sort_by(|&a, &b| taus[b].total_cmp(&taus[a]));
    let mut evolution = BracketEvolution::from_profile(&rp.profile, eps)?;
    let target = StepFunction::indicator(0.0, 1.0, 2.0);
    let mut samples: Vec<Option<RateSample>> = vec![None; taus.len()];
    for i in order {
        let tau = taus[i];
        let t = extinction - tau;
        let bound = match mode {
            RateMode::NoRate => 2.0 * xi.xi(tau),
            RateMode::FastRate => xi.xi(8.0 * tau),
        };
        let applicable = t >= 0.0 && tau > 0.0 && tau <= 1.0;
        let mut sample = RateSample {
            tau,
            t,
            bound,
            error_lower: f64::NAN,
            error_upper: f64::NAN,
            error_level_cut: f64::NAN,
            verdict: Verdict::NotApplicable,
            sup_lower: f64::NAN,
            sup_upper: f64::NAN,
            envelope_verdict: Verdict::NotApplicable,
            alpha0_formula: xi.xi(2.0 * tau / rp.c0),
            alpha0_measured: f64::NAN,
            xi_tau: xi.xi(tau),
            level_rate: f64::NAN,
        };
        if applicable {
            let bracket = evolution.at(t)?;
            let (lo, hi) = certified_l1_interval(&bracket.lower, &bracket.upper, &target, tau);
            let cut = level_cut(&rp.profile, t)?;
            sample.error_lower = lo;
            sample.error_upper = hi;
            sample.error_level_cut = level_cut_error(&rp.profile, cut.level, tau);
            sample.level_rate = cut.rate;
            sample.alpha0_measured = left_crossing(&rp.profile, 2.0 * tau);
            sample.verdict = match mode {
                RateMode::NoRate if bound <= lo => Verdict::Pass,
                RateMode::NoRate if bound > hi => Verdict::Fail,
                RateMode::FastRate if hi <= bound => Verdict::Pass,
                RateMode::FastRate if lo > bound => Verdict::Fail,
                _ => Verdict::Inconclusive,
            };
            sample.sup_lower = bracket.lower.sup_norm();
            sample.sup_upper = bracket.upper.sup_norm();
            sample.envelope_verdict = if 2.0 * tau <= sample.sup_lower && sample.sup_upper <= 4.0 * tau {
                Verdict::Pass
            } else if 2.0 * tau > sample.sup_upper || sample.sup_lower > 4.0 * tau {
                Verdict::Fail
            } else {
                Verdict::Inconclusive
            };
        }
        samples[i] = Some(sample);
    }
    Ok(RateReport {
        rate_function: xi.name.clone(),
        mode,
        c0: rp.c0,
        extinction_time: extinction,
        profile_knots: rp.profile.knots().len(),
        mass_error: (rp.profile.mass() - rp.reference_mass).abs(),
        eps,
        samples: samples.into_iter().map(Option::unwrap).collect(),
    })
}

pub fn verify_no_rate(xi: &RateFunction, taus: &[f64], eps: f64) -> Result<RateReport, AsymptoticsError> {
    verify_rate(xi, RateMode::NoRate, taus, eps)
}
