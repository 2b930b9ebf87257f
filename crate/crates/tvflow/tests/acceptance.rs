//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the verdict table is always printed. The process
//! exits nonzero only when a check marked `attainable` fails; checks that are
//! known to be false for the stated construction are reported, never hidden.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvflow::asymptotics::{relative_error, verify_no_rate, RateFunction, Verdict};
use tvflow::flow::{evolve, mass_at, Trajectory};
use tvflow::profiles::{level_cut, PiecewiseLinear};
use tvflow::prox::{brute_force_prox, discrete_flow, small_step_bound, tv_prox, OracleOptions};
use tvflow::sfde::{differentiate, evolve_deltas, integrate, DeltaMeasure, SfdeMode};
use tvflow::stepfn::{Norm, StepFunction};

use common::{cell_mass, random_deltas, random_neumann, random_step};

struct Check {
    label: String,
    pass: bool,
    attainable: bool,
}

struct Outcome {
    id: u32,
    title: &'static str,
    checks: Vec<Check>,
}

impl Outcome {
    fn new(id: u32, title: &'static str) -> Self {
        Outcome { id, title, checks: Vec::new() }
    }

    fn check(&mut self, label: impl Into<String>, pass: bool) {
        self.checks.push(Check { label: label.into(), pass, attainable: true });
    }

    fn known_false(&mut self, label: impl Into<String>, pass: bool) {
        self.checks.push(Check { label: label.into(), pass, attainable: false });
    }

    fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn suite(seed: u64, count: usize, max_intervals: usize, nonnegative: bool) -> Vec<StepFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_step(&mut rng, max_intervals, nonnegative)).collect()
}

fn last_event(traj: &Trajectory) -> f64 {
    traj.events.last().map_or(0.0, |e| e.time)
}

fn extinction_law() -> (Outcome, Outcome) {
    let mut c1 = Outcome::new(1, "extinction time equals mass/2");
    let mut c2 = Outcome::new(2, "mass decreases as 2(T - t)");
    let data = suite(1, 50, 10, true);
    let start = Instant::now();
    let trajs: Vec<Trajectory> = data.iter().map(|u| evolve(u, f64::INFINITY).unwrap()).collect();
    let elapsed = start.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    for (u, traj) in data.iter().zip(&trajs) {
        let big_t = 0.5 * cell_mass(u);
        let got = traj.extinction().unwrap_or(f64::NAN);
        worst = worst.max((got - big_t).abs());
        for j in 0..20 {
            let t = big_t * j as f64 / 19.0;
            let m = mass_at(traj, t).unwrap();
            worst_mass = worst_mass.max((m - 2.0 * (big_t - t)).abs());
        }
    }
    c1.check(format!("max |T - mass/2| = {worst:.2e} (tol 1e-10)"), worst < 1e-10);
    c1.check(format!("runtime {elapsed:.3} s (limit 1 s)"), elapsed < 1.0);
    c2.check(format!("max mass residual = {worst_mass:.2e} (tol 1e-10)"), worst_mass < 1e-10);
    (c1, c2)
}

/// Interior values after total time `lh` from the explicit step rule.
fn explicit_interior(u0: &StepFunction, lh: f64) -> Vec<f64> {
    let a = u0.values();
    let len: Vec<f64> = (0..a.len()).map(|k| u0.interval(k).len()).collect();
    (1..a.len() - 1)
        .map(|k| {
            if a[k] > a[k - 1] && a[k] > a[k + 1] {
                a[k] - 2.0 * lh / len[k]
            } else if a[k] < a[k - 1] && a[k] < a[k + 1] {
                a[k] + 2.0 * lh / len[k]
            } else {
                a[k]
            }
        })
        .collect()
}

fn closed_form_step() -> Outcome {
    let mut c = Outcome::new(3, "discrete steps match the explicit interior values");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_all, mut worst_safe): (f64, f64) = (0.0, 0.0);
    let mut violations = 0;
    for _ in 0..50 {
        let u0 = random_step(&mut rng, 8, false);
        let bound = small_step_bound(&u0);
        let l = rng.gen_range(1..=5usize);
        let lh = bound * rng.gen_range(0.01..0.99);
        let u = discrete_flow(&u0, lh / l as f64, l).unwrap();
        let expected = explicit_interior(&u0, lh);
        let err = expected
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let iv = u0.interval(j + 1);
                (u.eval(0.5 * (iv.lo + iv.hi)) - v).abs()
            })
            .fold(0.0, f64::max);
        // A maximum and a neighbouring minimum close their gap at rate
        // 2/|I_j| + 2/|I_{j+1}|; the explicit values only hold before that.
        let safe = tvflow::flow::slope_field(&u0).horizon;
        worst_all = worst_all.max(err);
        if lh <= safe {
            worst_safe = worst_safe.max(err);
        } else {
            violations += 1;
        }
    }
    c.known_false(
        format!("all 50 draws under the smallness quantity: max err {worst_all:.2e} (tol 1e-12; {violations} draws let neighbours meet)"),
        worst_all <= 1e-12,
    );
    c.check(
        format!("draws before the first merge: max err {worst_safe:.2e} (tol 1e-12)"),
        worst_safe <= 1e-12,
    );
    c
}

fn prox_oracle() -> Outcome {
    let mut c = Outcome::new(4, "exact prox agrees with the dual oracle");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst, mut worst_gap): (f64, f64) = (0.0, 0.0);
    let mut merged = 0;
    for i in 0..100 {
        let u0 = if i % 4 == 3 { random_neumann(&mut rng, 12) } else { random_step(&mut rng, 10, false) };
        // Log-uniform steps reach the regime where several levels fuse.
        let h = 10f64.powf(rng.gen_range(-3.0..1.0));
        let fast = tv_prox(&u0, h).unwrap();
        let slow = brute_force_prox(&u0, h, OracleOptions::default()).unwrap();
        if fast.uh.num_intervals() + 1 < u0.num_intervals() {
            merged += 1;
        }
        worst = worst.max(fast.uh.lp_distance(&slow.uh, Norm::LInf).unwrap());
        worst_gap = worst_gap.max(slow.gap);
    }
    c.check(format!("max sup difference {worst:.2e} (tol 1e-8)"), worst <= 1e-8);
    c.check(format!("max oracle gap {worst_gap:.2e} (tol 1e-10)"), worst_gap < 1e-10);
    c.check(format!("{merged} instances fuse two or more levels"), merged >= 10);
    c
}

fn crandall_liggett() -> Outcome {
    let mut c = Outcome::new(5, "implicit steps converge to the exact flow");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_final, mut worst_rise): (f64, f64) = (0.0, 0.0);
    for _ in 0..10 {
        let mut u0 = random_step(&mut rng, 6, true);
        while u0.num_intervals() < 8 {
            u0 = random_step(&mut rng, 6, true);
        }
        let traj = evolve(&u0, f64::INFINITY).unwrap();
        let t = 0.5 * traj.extinction().unwrap();
        let exact = traj.sample(t).unwrap();
        let mut prev = f64::INFINITY;
        for n in [64usize, 128, 256, 512, 1024] {
            let approx = discrete_flow(&u0, t / n as f64, n).unwrap();
            let err = approx.lp_distance(&exact, Norm::L1).unwrap();
            worst_rise = worst_rise.max(err - prev);
            prev = err;
        }
        worst_final = worst_final.max(prev);
    }
    c.check(format!("max L1 error at n = 1024: {worst_final:.2e} (tol 1e-3)"), worst_final < 1e-3);
    c.check(format!("largest increase between doublings {worst_rise:.2e} (slack 1e-12)"), worst_rise <= 1e-12);
    c
}

fn contraction_and_structure() -> (Outcome, Outcome) {
    let mut c6 = Outcome::new(6, "L1 and Linf distances contract");
    let mut c7 = Outcome::new(7, "extrema and breakpoints never increase");
    let data = suite(6, 200, 8, false);
    let (mut rise1, mut rise_inf): (f64, f64) = (0.0, 0.0);
    let (mut extrema_ok, mut breaks_ok) = (true, true);
    let mut trajs = Vec::new();
    for pair in data.chunks(2) {
        let (a, b) = (evolve(&pair[0], f64::INFINITY).unwrap(), evolve(&pair[1], f64::INFINITY).unwrap());
        let end = last_event(&a).max(last_event(&b));
        let (mut p1, mut pinf) = (f64::INFINITY, f64::INFINITY);
        for j in 0..10 {
            let t = end * j as f64 / 9.0;
            let (ua, ub) = (a.sample(t).unwrap(), b.sample(t).unwrap());
            let d1 = ua.lp_distance(&ub, Norm::L1).unwrap();
            let dinf = ua.lp_distance(&ub, Norm::LInf).unwrap();
            rise1 = rise1.max(d1 - p1);
            rise_inf = rise_inf.max(dinf - pinf);
            p1 = d1;
            pinf = dinf;
        }
        trajs.push(a);
        trajs.push(b);
    }
    trajs.extend(suite(1, 50, 10, true).iter().map(|u| evolve(u, f64::INFINITY).unwrap()));
    for traj in &trajs {
        let mut prev = &traj.initial;
        for e in &traj.events {
            let next = &e.state_after;
            extrema_ok &= next.extrema_count() <= prev.extrema_count();
            breaks_ok &= next.breakpoints().iter().all(|x| prev.breakpoints().contains(x));
            prev = next;
        }
    }
    c6.check(format!("largest L1 increase {rise1:.2e} (slack 1e-10)"), rise1 <= 1e-10);
    c6.check(format!("largest Linf increase {rise_inf:.2e} (slack 1e-10)"), rise_inf <= 1e-10);
    c7.check(format!("extrema count nonincreasing over {} trajectories", trajs.len()), extrema_ok);
    c7.check("breakpoint sets nested across events", breaks_ok);
    (c6, c7)
}

fn extinction_profile() -> Outcome {
    let mut c = Outcome::new(8, "convergence to the extinction profile");
    let data = suite(8, 20, 10, true);
    let mut worst: f64 = 0.0;
    let mut support_ok = true;
    for u0 in &data {
        let traj = evolve(u0, f64::INFINITY).unwrap();
        let big_t = traj.extinction().unwrap();
        let late = big_t * (1.0 - 2f64.powi(-10));
        worst = worst.max(relative_error(&traj, late).unwrap());
        let target = u0.extended_support();
        let mut times: Vec<f64> = (1..10).map(|j| big_t * j as f64 / 10.0).collect();
        times.extend(traj.events.iter().map(|e| e.time).filter(|&t| t > 0.0 && t < big_t));
        times.push(late);
        for t in times {
            support_ok &= traj.sample(t).unwrap().extended_support() == target;
        }
    }
    c.check(format!("max relative error at T(1 - 2^-10): {worst:.2e} (tol 1e-3)"), worst < 1e-3);
    c.check("extended support unchanged before extinction", support_ok);
    c
}

fn no_rate() -> (Outcome, Outcome) {
    let mut c9 = Outcome::new(9, "no-rate lower bound 2 xi(T - t) <= error");
    let mut c10 = Outcome::new(10, "Linf envelope 2(T - t) <= |u|inf <= 4(T - t)");
    let start = Instant::now();
    let report = verify_no_rate(&RateFunction::sqrt(), &[0.5, 0.1, 0.01], 1e-4).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    for s in &report.samples {
        let label = format!(
            "T - t = {}: error in [{:.4}, {:.4}], bound {:.4}, {:?}",
            s.tau, s.error_lower, s.error_upper, s.bound, s.verdict
        );
        c9.known_false(label, s.verdict == Verdict::Pass);
        let label = format!(
            "T - t = {}: |u|inf in [{:.4}, {:.4}], {:?}",
            s.tau, s.sup_lower, s.sup_upper, s.envelope_verdict
        );
        if s.envelope_verdict == Verdict::NotApplicable {
            c10.known_false(format!("{label} (t < 0 for T = {:.4})", report.extinction_time), false);
        } else {
            c10.check(label, s.envelope_verdict == Verdict::Pass);
        }
    }
    c9.check(format!("runtime {elapsed:.2} s (limit 30 s)"), elapsed < 30.0);
    (c9, c10)
}

fn commuting_square() -> Outcome {
    let mut c = Outcome::new(11, "SFDE through the flow equals the atom rule");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let v0 = random_deltas(&mut rng, 8);
        let times: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..2.0)).collect();
        let traj = evolve(&integrate(&v0), 2.0).unwrap();
        for t in times {
            let route = differentiate(&traj.sample(t).unwrap());
            let direct = evolve_deltas(&v0, t, SfdeMode::Cauchy).unwrap();
            worst = worst.max(route.max_weight_difference(&direct));
        }
    }
    c.check(format!("max atom weight difference {worst:.2e} (tol 1e-12)"), worst <= 1e-12);
    let dipole = DeltaMeasure::new(vec![(0.0, 1.0), (1.0, -1.0)]).unwrap();
    let ext = evolve(&integrate(&dipole), f64::INFINITY).unwrap().extinction();
    let gone = evolve_deltas(&dipole, 0.5, SfdeMode::Cauchy).unwrap().is_empty();
    let alive = !evolve_deltas(&dipole, 0.5 - 1e-9, SfdeMode::Cauchy).unwrap().is_empty();
    c.check(format!("delta_0 - delta_1 extinction at {ext:?}"), ext == Some(0.5) && gone && alive);
    c
}

fn unimodal_level_cut() -> Outcome {
    let mut c = Outcome::new(12, "hat profile level cut");
    let hat = PiecewiseLinear::hat(0.0, 1.0, 1.0);
    let (a, b) = hat.support();
    let (mut worst_level, mut worst_res): (f64, f64) = (0.0, 0.0);
    for j in 0..20 {
        let t = 0.5 * j as f64 / 20.0;
        let cut = level_cut(&hat, t).unwrap();
        worst_level = worst_level.max((cut.level - (1.0 - (2.0 * t).sqrt())).abs());
        worst_res = worst_res.max(cut.residual);
    }
    c.check(format!("max |h(t) - (1 - sqrt(2t))| {worst_level:.2e} (tol 1e-10)"), worst_level < 1e-10);
    c.check(format!("max area residual {worst_res:.2e} (tol 1e-10)"), worst_res < 1e-10);
    let end = level_cut(&hat, 0.5).unwrap();
    c.check(format!("level at t = 1/2 is {:.2e}", end.level), end.level.abs() < 1e-12 && 0.5 * hat.mass() == 0.5);
    let (lo, hi) = (-2.0 / (b - a), -1.0 / (b - a));
    let mut inside = true;
    let mut rate_err: f64 = 0.0;
    let mut rates = Vec::new();
    for k in 3..=8 {
        let t = 0.5 * (1.0 - 2f64.powi(-k));
        let cut = level_cut(&hat, t).unwrap();
        rate_err = rate_err.max((cut.rate + 1.0 / (2.0 * t).sqrt()).abs());
        inside &= lo <= cut.rate && cut.rate <= hi;
        rates.push(cut.rate);
    }
    c.check(format!("dh/dt matches -1/sqrt(2t) to {rate_err:.2e}"), rate_err < 1e-8);
    c.known_false(
        format!("dh/dt in [{lo}, {hi}] near T: observed {:.4}..{:.4}", rates[0], rates[rates.len() - 1]),
        inside,
    );
    c
}

fn main() {
    let mut outcomes = Vec::new();
    let (c1, c2) = extinction_law();
    outcomes.push(c1);
    outcomes.push(c2);
    outcomes.push(closed_form_step());
    outcomes.push(prox_oracle());
    outcomes.push(crandall_liggett());
    let (c6, c7) = contraction_and_structure();
    outcomes.push(c6);
    outcomes.push(c7);
    outcomes.push(extinction_profile());
    let (c9, c10) = no_rate();
    outcomes.push(c9);
    outcomes.push(c10);
    outcomes.push(commuting_square());
    outcomes.push(unimodal_level_cut());

    let mut broken = Vec::new();
    for o in &outcomes {
        println!("{} {:>2} {}", if o.pass() { "PASS" } else { "FAIL" }, o.id, o.title);
        for ch in &o.checks {
            let mark = match (ch.pass, ch.attainable) {
                (true, _) => "ok",
                (false, true) => "FAILED",
                (false, false) => "false as stated",
            };
            println!("        [{mark}] {}", ch.label);
            if !ch.pass && ch.attainable {
                broken.push(o.id);
            }
        }
    }
    let passed = outcomes.iter().filter(|o| o.pass()).count();
    println!("acceptance: {passed}/{} criteria pass", outcomes.len());
    if !broken.is_empty() {
        eprintln!("attainable checks failed in criteria {broken:?}");
        std::process::exit(1);
    }
}
