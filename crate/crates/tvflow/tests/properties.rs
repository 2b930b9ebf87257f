mod common;

use proptest::prelude::*;
use tvflow::asymptotics::{relative_error, rescale};
use tvflow::flow::{evolve, slope_field};
use tvflow::profiles::{evolve_unimodal, level_cut, PiecewiseLinear};
use tvflow::prox::{
    brute_force_prox, certificate_residuals, local_mass_shift, tv_prox, OracleOptions,
};
use tvflow::sfde::{
    differentiate, evolve_deltas, integrate, integrate_on, solve, total_mass, weight_rates, DeltaMeasure, SfdeMode,
};
use tvflow::stepfn::{Boundary, ExtremumTag, Interval, Norm, StepFunction};

use common::{cell_mass, deltas_strategy, neumann_strategy, step_strategy};

/// Any compact or Neumann datum.
fn any_step() -> impl Strategy<Value = StepFunction> {
    prop_oneof![step_strategy(10, false), neumann_strategy(10)]
}

/// Raw lists drawn from few distinct values, so neighbours often repeat.
fn raw_lists() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..12usize).prop_flat_map(|n| {
        (
            prop::collection::vec(0.1..1.0f64, n),
            prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0, 2.0]), n + 1),
        )
            .prop_map(|(gaps, mut values)| {
                let mut x = 0.0;
                let bps = gaps
                    .iter()
                    .map(|g| {
                        x += g;
                        x
                    })
                    .collect();
                values[0] = 0.0;
                *values.last_mut().unwrap() = 0.0;
                (bps, values)
            })
    })
}

fn unimodal_strategy() -> impl Strategy<Value = PiecewiseLinear> {
    (
        prop::collection::vec(0.1..1.0f64, 1..5),
        prop::collection::vec(0.1..1.0f64, 1..5),
        prop::collection::vec(0.1..1.0f64, 1..5),
    )
        .prop_map(|(rise, fall, widths)| {
            let up = rise.len();
            let down = fall.len();
            let mut knots = vec![0.0];
            let mut x = 0.0;
            for w in widths.iter().cycle().take(up + down) {
                x += w;
                knots.push(x);
            }
            let mut values = vec![0.0];
            let mut y = 0.0;
            for r in &rise {
                y += r;
                values.push(y);
            }
            for (i, f) in fall.iter().enumerate() {
                y = if i + 1 == down { 0.0 } else { (y - f).max(0.05) };
                values.push(y);
            }
            PiecewiseLinear::new(knots, values).unwrap()
        })
}

/// `max |u(x) − u(y)| / |x − y|^α` over pairs of grid points.
fn holder_on(u: &PiecewiseLinear, grid: &[f64], alpha: f64) -> f64 {
    let mut best = 0.0_f64;
    for (i, &x) in grid.iter().enumerate() {
        for &y in &grid[i + 1..] {
            best = best.max((u.eval(y) - u.eval(x)).abs() / (y - x).powf(alpha));
        }
    }
    best
}

/// Values on each side of `x` for a breakpoint of `u`.
fn sides(u: &StepFunction, x: f64) -> (f64, f64) {
    let i = u.breakpoints().iter().position(|&b| b == x).unwrap();
    (u.values()[i], u.values()[i + 1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn normalize_is_idempotent((bps, values) in raw_lists()) {
        let once = StepFunction::new(Boundary::Cauchy, bps, values).unwrap();
        let twice = StepFunction::new(
            once.boundary(),
            once.breakpoints().to_vec(),
            once.values().to_vec(),
        )
        .unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.values().windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn normalize_keeps_integrals((bps, values) in raw_lists()) {
        let raw_mass: f64 = bps.windows(2).enumerate().map(|(k, w)| (w[1] - w[0]) * values[k + 1]).sum();
        let raw_tv: f64 = values.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        let raw_osc = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - values.iter().cloned().fold(f64::INFINITY, f64::min);
        let u = StepFunction::new(Boundary::Cauchy, bps, values).unwrap();
        prop_assert!((u.mass().unwrap() - raw_mass).abs() < 1e-12);
        prop_assert!((u.total_variation() - raw_tv).abs() < 1e-12);
        let whole = Interval::new(f64::NEG_INFINITY, f64::INFINITY);
        prop_assert!((u.oscillation(whole).unwrap() - raw_osc).abs() < 1e-12);
    }

    #[test]
    fn distances_obey_triangle_inequality(
        u in step_strategy(8, false),
        v in step_strategy(8, false),
        w in step_strategy(8, false),
    ) {
        for norm in [Norm::L1, Norm::LInf] {
            let uv = u.lp_distance(&v, norm).unwrap();
            let vw = v.lp_distance(&w, norm).unwrap();
            let uw = u.lp_distance(&w, norm).unwrap();
            prop_assert!(uw <= uv + vw + 1e-12);
        }
    }

    #[test]
    fn monotone_data_has_no_extrema(steps in prop::collection::vec(0.1..1.0f64, 1..10)) {
        let mut y = 0.0;
        let mut values = vec![0.0];
        let mut bps = Vec::new();
        for (i, s) in steps.iter().enumerate() {
            y += s;
            values.push(y);
            bps.push(i as f64);
        }
        let u = StepFunction::new(Boundary::Cauchy, bps, values).unwrap();
        prop_assert_eq!(u.extrema_count(), 0);
        prop_assert!(u.classify().iter().all(|t| !matches!(t, ExtremumTag::LocalMax | ExtremumTag::LocalMin)));
    }

    #[test]
    fn prox_certificate_is_feasible(u0 in any_step(), h in 1e-3..5.0f64) {
        let r = tv_prox(&u0, h).unwrap();
        let res = certificate_residuals(&u0, &r.uh, &r.certificate);
        prop_assert!(res.max() <= 1e-10, "{:?}", res);
    }

    #[test]
    fn prox_nests_jumps_and_adds_no_breakpoints(u0 in any_step(), h in 1e-3..5.0f64) {
        let uh = tv_prox(&u0, h).unwrap().uh;
        for &x in uh.breakpoints() {
            prop_assert!(u0.breakpoints().contains(&x));
            let (hl, hr) = sides(&uh, x);
            let (ol, or) = sides(&u0, x);
            let tol = 1e-12;
            if hl < hr {
                prop_assert!(ol <= hl + tol && hr <= or + tol);
            } else {
                prop_assert!(ol + tol >= hl && hr + tol >= or);
            }
        }
    }

    #[test]
    fn prox_contracts(u in step_strategy(8, false), v in step_strategy(8, false), h in 1e-3..3.0f64) {
        let (pu, pv) = (tv_prox(&u, h).unwrap().uh, tv_prox(&v, h).unwrap().uh);
        for norm in [Norm::L1, Norm::LInf] {
            prop_assert!(pu.lp_distance(&pv, norm).unwrap() <= u.lp_distance(&v, norm).unwrap() + 1e-10);
        }
    }

    #[test]
    fn prox_moves_little_mass_locally(u0 in any_step(), h in 1e-3..3.0f64, a in -3.0..10.0f64, w in 0.01..5.0f64) {
        let uh = tv_prox(&u0, h).unwrap().uh;
        let window = Interval::new(a, a + w);
        if let Ok(shift) = local_mass_shift(&u0, &uh, window) {
            prop_assert!(shift.abs() <= 2.0 * h + 1e-10);
        }
    }

    #[test]
    fn flow_oscillation_contracts(u0 in step_strategy(8, false), a in -2.0..8.0f64, w in 0.05..4.0f64) {
        let traj = evolve(&u0, f64::INFINITY).unwrap();
        let end = traj.events.last().map_or(0.0, |e| e.time);
        let window = Interval::new(a, a + w);
        let mut prev = f64::INFINITY;
        for j in 0..12 {
            let osc = traj.sample(end * j as f64 / 11.0).unwrap().oscillation(window).unwrap();
            prop_assert!(osc <= prev + 1e-12);
            prev = osc;
        }
    }

    #[test]
    fn flow_keeps_support_until_extinction(u0 in step_strategy(8, true)) {
        prop_assume!(cell_mass(&u0) > 1e-6);
        let traj = evolve(&u0, f64::INFINITY).unwrap();
        let big_t = traj.extinction().unwrap();
        for j in 1..10 {
            let t = big_t * j as f64 / 10.0;
            prop_assert_eq!(traj.sample(t).unwrap().extended_support(), u0.extended_support());
        }
    }

    #[test]
    fn neumann_flow_conserves_mass(u0 in neumann_strategy(8)) {
        let traj = evolve(&u0, f64::INFINITY).unwrap();
        let end = traj.events.last().map_or(0.0, |e| e.time);
        let m0 = u0.mass().unwrap();
        for j in 0..8 {
            let m = traj.sample(end * j as f64 / 7.0).unwrap().mass().unwrap();
            prop_assert!((m - m0).abs() < 1e-10);
        }
    }

    #[test]
    fn rescaled_mass_is_conserved(u0 in step_strategy(8, true)) {
        prop_assume!(cell_mass(&u0) > 1e-6);
        let traj = evolve(&u0, f64::INFINITY).unwrap();
        let big_t = traj.extinction().unwrap();
        for j in 0..10 {
            let r = rescale(&traj, big_t * (1.0 - 2f64.powi(-j))).unwrap();
            prop_assert!((r.w.mass().unwrap() - 2.0 * big_t).abs() < 1e-10);
        }
    }

    #[test]
    fn separated_solutions_are_fixed(a in -3.0..3.0f64, len in 0.1..4.0f64, c in 0.1..5.0f64) {
        let u0 = StepFunction::indicator(a, a + len, c);
        let traj = evolve(&u0, f64::INFINITY).unwrap();
        let big_t = 0.5 * c * len;
        for j in 0..9 {
            let t = big_t * j as f64 / 10.0;
            prop_assert!(relative_error(&traj, t).unwrap() < 1e-12);
            let height = traj.sample(t).unwrap().eval(a + 0.5 * len);
            prop_assert!((height - 2.0 * (big_t - t) / len).abs() < 1e-12);
        }
    }

    #[test]
    fn unimodal_mass_law_and_plateau(u0 in unimodal_strategy()) {
        let big_t = 0.5 * u0.mass();
        let (mut left, mut right) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in 0..10 {
            let t = big_t * j as f64 / 10.0;
            let u = evolve_unimodal(&u0, t).unwrap();
            prop_assert!((u.mass() - (u0.mass() - 2.0 * t)).abs() < 1e-10);
            let cut = level_cut(&u0, t).unwrap();
            if j > 0 {
                prop_assert!(cut.left <= left + 1e-12 && cut.right >= right - 1e-12);
            }
            left = cut.left;
            right = cut.right;
            let mut grid: Vec<f64> = u0.knots().iter().chain(u.knots()).cloned().collect();
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            for alpha in [0.5, 1.0] {
                let m = holder_on(&u, &grid, alpha);
                let m0 = holder_on(&u0, &grid, alpha);
                prop_assert!(m <= m0 * (1.0 + 1e-12) + 1e-12, "alpha {}: {} > {}", alpha, m, m0);
            }
        }
    }

    #[test]
    fn sfde_conserves_mass_and_positions(v0 in deltas_strategy(8), t in 0.0..3.0f64) {
        let v = evolve_deltas(&v0, t, SfdeMode::Cauchy).unwrap();
        prop_assert!((total_mass(&v) - total_mass(&v0)).abs() < 1e-12);
        let positions = v0.positions();
        prop_assert!(v.positions().iter().all(|x| positions.contains(x)));
    }

    #[test]
    fn integrate_and_differentiate_invert(v0 in deltas_strategy(8)) {
        let back = differentiate(&integrate(&v0));
        prop_assert_eq!(back.positions(), v0.positions());
        prop_assert!(back.max_weight_difference(&v0) < 1e-12);
    }

    #[test]
    fn differentiate_then_integrate(u in step_strategy(8, false)) {
        let back = integrate(&differentiate(&u));
        prop_assert!(back.lp_distance(&u, Norm::LInf).unwrap() < 1e-12);
    }

    #[test]
    fn one_signed_measures_do_not_move(v0 in deltas_strategy(8), t in 0.0..3.0f64) {
        let positive = DeltaMeasure::new(v0.atoms().iter().map(|&(x, a)| (x, a.abs() + 0.01)).collect()).unwrap();
        prop_assert_eq!(&evolve_deltas(&positive, t, SfdeMode::Cauchy).unwrap(), &positive);
    }

    #[test]
    fn dirichlet_rule_matches_flow(v0 in deltas_strategy(6), t in 0.0..2.0f64, pad in 0.1..2.0f64) {
        let positive = DeltaMeasure::new(v0.atoms().iter().map(|&(x, a)| (x, a.abs() + 0.01)).collect()).unwrap();
        let xs = positive.positions();
        let (a, b) = (xs[0] - pad, xs[xs.len() - 1] + pad);
        let mode = SfdeMode::dirichlet(a, b).unwrap();
        prop_assert!(integrate_on(&positive, a, b).is_ok());
        let direct = evolve_deltas(&positive, t, mode).unwrap();
        let route = solve(&positive, t, mode).unwrap();
        prop_assert!(direct.max_weight_difference(&route) < 1e-12);
    }

    #[test]
    fn unit_spacing_rates(signs in prop::collection::vec(prop::bool::ANY, 1..10)) {
        let atoms = signs.iter().enumerate().map(|(i, &s)| (i as f64, if s { 1.0 } else { -1.0 })).collect();
        let v = DeltaMeasure::new(atoms).unwrap();
        let rates = weight_rates(&v, SfdeMode::Cauchy);
        let n = signs.len();
        for (i, r) in rates.iter().enumerate() {
            let opposed = [i.checked_sub(1), Some(i + 1).filter(|&j| j < n)]
                .iter()
                .flatten()
                .filter(|&&j| signs[j] != signs[i])
                .count();
            let expected = -(if signs[i] { 1.0 } else { -1.0 }) * 2.0 * opposed as f64;
            prop_assert_eq!(*r, expected);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prox_matches_oracle(u0 in prop_oneof![step_strategy(10, false), neumann_strategy(12)], h in 1e-3..10.0f64) {
        let fast = tv_prox(&u0, h).unwrap();
        let slow = brute_force_prox(&u0, h, OracleOptions::default()).unwrap();
        prop_assert!(slow.gap < 1e-10);
        prop_assert!(fast.uh.lp_distance(&slow.uh, Norm::LInf).unwrap() <= 1e-8);
    }

    #[test]
    fn flow_structure_is_monotone(u0 in any_step()) {
        let traj = evolve(&u0, f64::INFINITY).unwrap();
        let mut prev = traj.initial.clone();
        for e in &traj.events {
            prop_assert!(e.state_after.extrema_count() <= prev.extrema_count());
            prop_assert!(e.state_after.breakpoints().iter().all(|x| prev.breakpoints().contains(x)));
            prop_assert!(slope_field(&e.state_after).slopes.iter().all(|s| s.is_finite()));
            prev = e.state_after.clone();
        }
    }
}
