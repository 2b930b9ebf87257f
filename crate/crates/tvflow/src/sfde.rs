//! Sign fast diffusion `v_t = (sign v)_xx` on atomic measures.
//!
//! The evolution is defined through the total variation flow of the
//! primitive: `v(t) = ∂_x u(t)` with `u0 = ∫_{−∞}^x v0`. For a sum of atoms
//! this reduces to piecewise-affine weights; [`evolve_deltas`] integrates
//! those directly and serves as an independent check of [`solve`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{FlowError, FlowSimulator};
use crate::profiles::{Bracket, BracketEvolution, PiecewiseLinear, ProfileError};
use crate::stepfn::{Boundary, StepError, StepFunction};

/// Relative window inside which atom extinctions count as simultaneous.
const SIMULTANEITY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SfdeError {
    #[error("atom positions are not strictly increasing at index {0}")]
    NonSortedAtoms(usize),
    #[error("non-finite number in input")]
    NonFinite,
    #[error("atom at {0} lies outside the open domain")]
    OutsideDomain(f64),
    #[error("the direct Dirichlet rule needs atoms of one sign")]
    DirichletSignedAtoms,
    #[error("invalid time {0}")]
    InvalidTime(f64),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasure {
    atoms: Vec<(f64, f64)>,
}

/// `Σ a_i δ_{x_i}` with strictly increasing positions and nonzero weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct DeltaMeasure {
    atoms: Vec<(f64, f64)>,
}

impl TryFrom<RawMeasure> for DeltaMeasure {
    type Error = SfdeError;
    fn try_from(raw: RawMeasure) -> Result<Self, Self::Error> {
        DeltaMeasure::new(raw.atoms)
    }
}

impl DeltaMeasure {
    /// Validates positions and drops zero weights.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self, SfdeError> {
        if atoms.iter().any(|(x, a)| !x.is_finite() || !a.is_finite()) {
            return Err(SfdeError::NonFinite);
        }
        if let Some(i) = atoms.windows(2).position(|w| w[0].0 >= w[1].0) {
            return Err(SfdeError::NonSortedAtoms(i + 1));
        }
        Ok(DeltaMeasure {
            atoms: atoms.into_iter().filter(|&(_, a)| a != 0.0).collect(),
        })
    }

    pub fn empty() -> Self {
        DeltaMeasure::default()
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn positions(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.0).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.1).collect()
    }

    /// Weight at `x` (zero when there is no atom there).
    pub fn weight_at(&self, x: f64) -> f64 {
        self.atoms
            .binary_search_by(|a| a.0.total_cmp(&x))
            .map_or(0.0, |i| self.atoms[i].1)
    }

    /// Largest weight difference over the union of atom positions.
    pub fn max_weight_difference(&self, other: &DeltaMeasure) -> f64 {
        let mut xs: Vec<f64> = self.positions();
        xs.extend(other.positions());
        xs.iter()
            .map(|&x| (self.weight_at(x) - other.weight_at(x)).abs())
            .fold(0.0, f64::max)
    }
}

pub fn total_mass(v: &DeltaMeasure) -> f64 {
    v.atoms.iter().map(|a| a.1).sum()
}

/// Whether the Cauchy evolution reaches zero in finite time.
pub fn extinguishes(v0: &DeltaMeasure) -> bool {
    let scale = v0.atoms.iter().map(|a| a.1.abs()).fold(1.0, f64::max);
    total_mass(v0).abs() <= 1e-12 * scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SfdeMode {
    Cauchy,
    /// Zero boundary values on `[a, b]`.
    Dirichlet { a: f64, b: f64 },
}

impl SfdeMode {
    pub fn dirichlet(a: f64, b: f64) -> Result<Self, SfdeError> {
        Boundary::neumann(a, b)?;
        Ok(SfdeMode::Dirichlet { a, b })
    }

    fn check(&self, v: &DeltaMeasure) -> Result<(), SfdeError> {
        if let SfdeMode::Dirichlet { a, b } = *self {
            if let Some(&(x, _)) = v.atoms.iter().find(|(x, _)| *x <= a || *x >= b) {
                return Err(SfdeError::OutsideDomain(x));
            }
        }
        Ok(())
    }
}

/// `u(x) = ∫_{−∞}^x v`.
pub fn integrate(v: &DeltaMeasure) -> StepFunction {
    integrate_with(v, Boundary::Cauchy)
}

fn integrate_with(v: &DeltaMeasure, boundary: Boundary) -> StepFunction {
    let mut values = Vec::with_capacity(v.len() + 1);
    let mut acc = 0.0;
    values.push(acc);
    for &(_, a) in &v.atoms {
        acc += a;
        values.push(acc);
    }
    StepFunction::from_parts_unchecked(boundary, v.positions(), values)
}

/// Primitive on `[a, b]` vanishing at `a`, as a Neumann step function.
pub fn integrate_on(v: &DeltaMeasure, a: f64, b: f64) -> Result<StepFunction, SfdeError> {
    let mode = SfdeMode::dirichlet(a, b)?;
    mode.check(v)?;
    Ok(integrate_with(v, Boundary::Neumann { a, b }))
}

/// Jumps of `u` as atoms.
pub fn differentiate(u: &StepFunction) -> DeltaMeasure {
    let atoms = u
        .breakpoints()
        .iter()
        .zip(u.values().windows(2))
        .map(|(&x, w)| (x, w[1] - w[0]))
        .filter(|&(_, a)| a != 0.0)
        .collect();
    DeltaMeasure { atoms }
}

/// The evolution by definition: integrate, run the flow, differentiate.
pub fn solve(v0: &DeltaMeasure, t: f64, mode: SfdeMode) -> Result<DeltaMeasure, SfdeError> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(SfdeError::InvalidTime(t));
    }
    let u0 = match mode {
        SfdeMode::Cauchy => integrate(v0),
        SfdeMode::Dirichlet { a, b } => integrate_on(v0, a, b)?,
    };
    let mut sim = FlowSimulator::new(&u0)?;
    sim.advance_to(t);
    Ok(differentiate(&sim.state()))
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

/// `da_i/dt` for each atom. Neighbouring gaps `L` contribute
/// `(σ_{i+1} − σ_i)/L_i − (σ_i − σ_{i−1})/L_{i−1}`; a Dirichlet wall acts as
/// a neighbour with `σ = 0`, an unbounded side contributes nothing.
pub fn weight_rates(v: &DeltaMeasure, mode: SfdeMode) -> Vec<f64> {
    let n = v.len();
    let (wall_l, wall_r) = match mode {
        SfdeMode::Cauchy => (None, None),
        SfdeMode::Dirichlet { a, b } => (Some(a), Some(b)),
    };
    (0..n)
        .map(|i| {
            let (x, a) = v.atoms[i];
            let s = sign(a);
            let right = if i + 1 < n {
                let (y, b) = v.atoms[i + 1];
                (sign(b) - s) / (y - x)
            } else {
                wall_r.map_or(0.0, |b| -s / (b - x))
            };
            let left = if i > 0 {
                let (y, b) = v.atoms[i - 1];
                (s - sign(b)) / (x - y)
            } else {
                wall_l.map_or(0.0, |a| s / (x - a))
            };
            right - left
        })
        .collect()
}

/// Direct event-driven evolution of the atom weights.
pub fn evolve_deltas(v0: &DeltaMeasure, t: f64, mode: SfdeMode) -> Result<DeltaMeasure, SfdeError> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(SfdeError::InvalidTime(t));
    }
    mode.check(v0)?;
    if let SfdeMode::Dirichlet { .. } = mode {
        let positive = v0.atoms.iter().all(|a| a.1 > 0.0);
        let negative = v0.atoms.iter().all(|a| a.1 < 0.0);
        if !(positive || negative) {
            return Err(SfdeError::DirichletSignedAtoms);
        }
    }
    let mut v = v0.clone();
    let mut now = 0.0;
    loop {
        let rates = weight_rates(&v, mode);
        let next = v
            .atoms
            .iter()
            .zip(&rates)
            .filter(|((_, a), r)| a * **r < 0.0)
            .map(|((_, a), r)| now + (-a / r))
            .fold(f64::INFINITY, f64::min);
        if next > t {
            for ((_, a), r) in v.atoms.iter_mut().zip(&rates) {
                if *r != 0.0 {
                    *a += r * (t - now);
                }
            }
            return Ok(v);
        }
        let window = next + SIMULTANEITY_TOL * next.abs().max(f64::MIN_POSITIVE);
        let atoms = v
            .atoms
            .iter()
            .zip(&rates)
            .filter_map(|(&(x, a), &r)| {
                if a * r < 0.0 && now + (-a / r) <= window {
                    None
                } else if r == 0.0 {
                    Some((x, a))
                } else {
                    Some((x, a + r * (next - now)))
                }
            })
            .collect();
        v = DeltaMeasure { atoms };
        now = next;
    }
}

/// Extinction time of the Dirichlet problem with one-signed atoms.
pub fn dirichlet_extinction_time(v0: &DeltaMeasure, a: f64, b: f64) -> Result<f64, SfdeError> {
    let mode = SfdeMode::dirichlet(a, b)?;
    evolve_deltas(v0, 0.0, mode)?;
    let mut v = v0.clone();
    let mut now = 0.0;
    while !v.is_empty() {
        let rates = weight_rates(&v, mode);
        let next = v
            .atoms
            .iter()
            .zip(&rates)
            .filter(|((_, w), r)| w * **r < 0.0)
            .map(|((_, w), r)| now + (-w / r))
            .fold(f64::INFINITY, f64::min);
        v = evolve_deltas(&v, next - now, mode)?;
        now = next;
    }
    Ok(now)
}

/// Atoms plus a continuous piecewise-linear density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedMeasure {
    pub atoms: DeltaMeasure,
    pub density: PiecewiseLinear,
}

impl MixedMeasure {
    fn density_left(&self, x: f64) -> f64 {
        let (lo, hi) = self.density.support();
        if x <= lo || x > hi {
            0.0
        } else {
            self.density.eval(x)
        }
    }

    fn density_right(&self, x: f64) -> f64 {
        let (lo, hi) = self.density.support();
        if x < lo || x >= hi {
            0.0
        } else {
            self.density.eval(x)
        }
    }

    /// Step functions below and above the primitive, within `eps` of each
    /// other away from the atoms.
    pub fn primitive_bracket(&self, eps: f64) -> Result<(StepFunction, StepFunction), SfdeError> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(SfdeError::Profile(ProfileError::InvalidTolerance(eps)));
        }
        let mut special: Vec<f64> = self.density.knots().to_vec();
        special.extend(self.atoms.positions());
        special.sort_by(f64::total_cmp);
        special.dedup();
        let mut edges = vec![special[0]];
        let (mut lower, mut upper) = (Vec::new(), Vec::new());
        let mut level = self.atoms.weight_at(special[0]);
        for w in special.windows(2) {
            let (p, q) = (w[0], w[1]);
            let len = q - p;
            let (r0, r1) = (self.density_right(p), self.density_left(q));
            // F(p + d) − F(p⁺)
            let prim = |d: f64| r0 * d + (r1 - r0) * d * d / (2.0 * len);
            let variation = if r0 * r1 >= 0.0 {
                0.5 * len * (r0.abs() + r1.abs())
            } else {
                0.5 * len * (r0 * r0 + r1 * r1) / (r0.abs() + r1.abs())
            };
            let n = (variation / eps).ceil().max(1.0) as usize;
            let vertex = if r0 * r1 < 0.0 { Some(len * r0 / (r0 - r1)) } else { None };
            for j in 0..n {
                let (d0, d1) = (len * j as f64 / n as f64, len * (j + 1) as f64 / n as f64);
                let mut lo = prim(d0).min(prim(d1));
                let mut hi = prim(d0).max(prim(d1));
                if let Some(dv) = vertex {
                    if dv > d0 && dv < d1 {
                        lo = lo.min(prim(dv));
                        hi = hi.max(prim(dv));
                    }
                }
                edges.push(if j + 1 == n { q } else { p + d1 });
                lower.push(level + lo);
                upper.push(level + hi);
            }
            level += prim(len) + self.atoms.weight_at(q);
        }
        let mut lo_vals = vec![0.0];
        lo_vals.extend(&lower);
        lo_vals.push(level);
        let mut up_vals = vec![0.0];
        up_vals.extend(&upper);
        up_vals.push(level);
        Ok((
            StepFunction::new(Boundary::Cauchy, edges.clone(), lo_vals)?,
            StepFunction::new(Boundary::Cauchy, edges, up_vals)?,
        ))
    }

    pub fn total_mass(&self) -> f64 {
        total_mass(&self.atoms) + self.density.mass()
    }
}

/// Certified enclosure of the primitive at time `t`, with the resulting
/// range for each original atom.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedReport {
    pub bracket: Bracket,
    /// `(x, lowest, highest)` possible atom weight at each original atom.
    pub atom_ranges: Vec<(f64, f64, f64)>,
    /// Area-rule model, when the datum has its geometry.
    pub atom_extinction: Option<f64>,
    pub fronts: Option<Fronts>,
}

/// Jump of the bracketed solution at `x`.
pub fn jump_range(bracket: &Bracket, x: f64) -> (f64, f64) {
    let left = |u: &StepFunction| {
        let k = u.breakpoints().partition_point(|&b| b < x);
        u.values()[k]
    };
    let right = |u: &StepFunction| u.eval(x);
    (
        right(&bracket.lower) - left(&bracket.upper),
        right(&bracket.upper) - left(&bracket.lower),
    )
}

pub fn evolve_mixed(v0: &MixedMeasure, t: f64, eps: f64) -> Result<MixedReport, SfdeError> {
    let (lo, up) = v0.primitive_bracket(eps)?;
    let bracket = BracketEvolution::new(&lo, &up)?.at(t)?;
    let atom_ranges = v0
        .atoms
        .positions()
        .into_iter()
        .map(|x| {
            let (a, b) = jump_range(&bracket, x);
            (x, a, b)
        })
        .collect();
    let model = FrontModel::new(v0);
    Ok(MixedReport {
        bracket,
        atom_ranges,
        atom_extinction: model.as_ref().map(FrontModel::atom_extinction),
        fronts: model.map(|m| m.fronts(t.min(m.merge_time()))),
    })
}

/// Area-rule fronts for an atom of mass `alpha` at the left end of the
/// zero set `[p, a]` of a density that is negative on `(a, x0)` and positive
/// beyond `x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontModel {
    density: PiecewiseLinear,
    pub alpha: f64,
    pub atom: f64,
    pub a: f64,
    pub x0: f64,
    /// Cumulative `∫|v̂|` at the knots of `abs_knots`.
    abs_knots: Vec<f64>,
    abs_values: Vec<f64>,
    abs_cum: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fronts {
    pub t: f64,
    pub atom_mass: f64,
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
    /// Largest defect in the three area equations.
    pub residual: f64,
}

impl FrontModel {
    /// Detects `a` and `x0` from the density to the right of the atom.
    pub fn new(v0: &MixedMeasure) -> Option<FrontModel> {
        let [(atom, alpha)] = v0.atoms.atoms() else {
            return None;
        };
        let (atom, alpha) = (*atom, *alpha);
        let d = &v0.density;
        // Insert sign-change points so |v̂| is piecewise linear.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (x, y) in d.knots().windows(2).zip(d.values().windows(2)) {
            xs.push(x[0]);
            ys.push(y[0]);
            if y[0] * y[1] < 0.0 {
                xs.push(x[0] + y[0] * (x[1] - x[0]) / (y[0] - y[1]));
                ys.push(0.0);
            }
        }
        xs.push(*d.knots().last().unwrap());
        ys.push(*d.values().last().unwrap());
        let mut cum = vec![0.0];
        for i in 1..xs.len() {
            let c = cum[i - 1] + 0.5 * (xs[i] - xs[i - 1]) * (ys[i - 1].abs() + ys[i].abs());
            cum.push(c);
        }
        // a: end of the zero stretch starting at the atom; x0: next zero.
        let start = xs.iter().position(|&x| x >= atom)?;
        if xs[start] != atom || ys[start] != 0.0 {
            return None;
        }
        let mut i = start;
        while i + 1 < xs.len() && ys[i + 1] == 0.0 {
            i += 1;
        }
        let a = xs[i];
        if i + 1 >= xs.len() || ys[i + 1] >= 0.0 {
            return None;
        }
        let mut j = i + 1;
        while j < xs.len() && ys[j] < 0.0 {
            j += 1;
        }
        if j >= xs.len() || ys[j] != 0.0 || j + 1 >= xs.len() || ys[j + 1] <= 0.0 {
            return None;
        }
        Some(FrontModel {
            density: d.clone(),
            alpha,
            atom,
            a,
            x0: xs[j],
            abs_knots: xs,
            abs_values: ys.iter().map(|y| y.abs()).collect(),
            abs_cum: cum,
        })
    }

    pub fn density(&self) -> &PiecewiseLinear {
        &self.density
    }

    /// `∫_{−∞}^x |v̂|`.
    pub fn abs_primitive(&self, x: f64) -> f64 {
        let xs = &self.abs_knots;
        if x <= xs[0] {
            return 0.0;
        }
        if x >= *xs.last().unwrap() {
            return *self.abs_cum.last().unwrap();
        }
        let i = xs.partition_point(|&k| k <= x) - 1;
        let d = x - xs[i];
        let len = xs[i + 1] - xs[i];
        let (r0, r1) = (self.abs_values[i], self.abs_values[i + 1]);
        self.abs_cum[i] + r0 * d + (r1 - r0) * d * d / (2.0 * len)
    }

    /// Point `x` with `∫_{−∞}^x |v̂| = level`, solved exactly per segment.
    fn invert(&self, level: f64) -> f64 {
        let xs = &self.abs_knots;
        let i = self.abs_cum.partition_point(|&c| c < level).clamp(1, xs.len() - 1) - 1;
        let len = xs[i + 1] - xs[i];
        let (r0, r1) = (self.abs_values[i], self.abs_values[i + 1]);
        let c = level - self.abs_cum[i];
        let k = (r1 - r0) / len;
        // r0 d + k d²/2 = c
        let d = if c <= 0.0 {
            0.0
        } else {
            2.0 * c / (r0 + (r0 * r0 + 2.0 * k * c).sqrt())
        };
        (xs[i] + d).clamp(xs[i], xs[i + 1])
    }

    /// `t0 = α/2`.
    pub fn atom_extinction(&self) -> f64 {
        0.5 * self.alpha.abs()
    }

    /// `B0 = ∫_a^{x0} |v̂|`.
    pub fn b0(&self) -> f64 {
        self.abs_primitive(self.x0) - self.abs_primitive(self.a)
    }

    /// Time when `z1` meets `z2`.
    pub fn merge_time(&self) -> f64 {
        0.25 * self.b0()
    }

    pub fn fronts(&self, t: f64) -> Fronts {
        let fa = self.abs_primitive(self.a);
        let fx = self.abs_primitive(self.x0);
        let z1 = self.invert(fa + 2.0 * t).clamp(self.a, self.x0);
        let z2 = self.invert(fx - 2.0 * t).max(self.a);
        let z3 = self.invert(fx + 2.0 * t);
        let residual = [
            (self.abs_primitive(z1) - fa - 2.0 * t).abs(),
            (fx - self.abs_primitive(z2) - 2.0 * t).abs(),
            (self.abs_primitive(z3) - fx - 2.0 * t).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        Fronts {
            t,
            atom_mass: self.alpha.signum() * (self.alpha.abs() - 2.0 * t).max(0.0),
            z1,
            z2,
            z3,
            residual,
        }
    }

    /// `(B0, B1, B2)` at the merge time.
    pub fn area_bookkeeping(&self) -> (f64, f64, f64) {
        let f = self.fronts(self.merge_time());
        let b1 = self.abs_primitive(f.z1) - self.abs_primitive(self.a);
        let b2 = self.abs_primitive(self.x0) - self.abs_primitive(f.z2);
        (self.b0(), b1, b2)
    }
}
