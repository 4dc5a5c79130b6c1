//! Randomized invariant suites run by the `verify` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::basis::{build_tree_with_budget, JumpSpec, NodeRef, ScenarioTree, TimeGrid};
use crate::generator::{builtin, probe_lipschitz, Builtin, LinearCoefficients, LinearDelay};
use crate::process::{norm_h2_beta, norm_l2_beta, norm_s2_beta, segment_view, AdaptedProcess, SegmentKind};

/// Tolerance for exact identities (moments, tower property).
pub const MOMENT_TOL: f64 = 1e-12;
/// Relative tolerance for inequalities.
pub const INEQUALITY_TOL: f64 = 1e-9;
pub const PROBE_TRIALS: usize = 10_000;
pub const PROBE_SCALE: f64 = 10.0;

const SUITE_NODE_BUDGET: usize = 6_000;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub violations: usize,
    /// Largest excess over the bound, absolute for identities and relative
    /// for inequalities.
    pub max_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

struct Tally {
    name: &'static str,
    tolerance: f64,
    violations: usize,
    max_violation: f64,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            violations: 0,
            max_violation: 0.0,
        }
    }

    /// `|a − b| ≤ tol`.
    fn equal(&mut self, a: f64, b: f64) {
        self.record((a - b).abs());
    }

    /// `lhs ≤ rhs` up to a relative tolerance.
    fn below(&mut self, lhs: f64, rhs: f64) {
        let excess = (lhs - rhs) / rhs.abs().max(1e-300);
        self.record(if lhs <= rhs { 0.0 } else { excess });
    }

    fn record(&mut self, v: f64) {
        let v = if v.is_nan() { f64::INFINITY } else { v };
        self.max_violation = self.max_violation.max(v);
        if v > self.tolerance {
            self.violations += 1;
        }
    }

    fn finish(self, cases: usize) -> SuiteResult {
        SuiteResult {
            name: self.name.to_string(),
            cases,
            violations: self.violations,
            max_violation: self.max_violation,
            tolerance: self.tolerance,
            pass: self.violations == 0,
        }
    }
}

fn random_tree(rng: &mut ChaCha8Rng) -> ScenarioTree {
    loop {
        let m = rng.gen_range(0..=2usize);
        let steps = rng.gen_range(1..=6usize);
        let horizon = rng.gen_range(0.5..2.0);
        let dt = horizon / steps as f64;
        let delay = rng.gen_range(0..=steps) as f64 * dt;
        let marks: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let intensities: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..0.9 / (m as f64 * dt))).collect();
        let Ok(grid) = TimeGrid::new(horizon, steps, delay, 0.0) else { continue };
        let Ok(jumps) = JumpSpec::new(marks, intensities) else { continue };
        if let Ok(tree) = build_tree_with_budget(grid, jumps, SUITE_NODE_BUDGET) {
            return tree;
        }
    }
}

fn random_process(rng: &mut ChaCha8Rng, tree: &ScenarioTree, width: usize, layers: usize) -> AdaptedProcess {
    let data = (0..layers)
        .map(|i| (0..tree.layer_len(i) * width).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect();
    AdaptedProcess::from_layers(width, data)
}

fn tower(seed: u64, cases: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("tower_property", MOMENT_TOL);
    for _ in 0..cases {
        let tree = random_tree(&mut rng);
        let i = rng.gen_range(0..tree.steps());
        let next: Vec<f64> = (0..tree.layer_len(i + 1)).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let direct = tree.layer_expectation(&next, i + 1).unwrap();
        let cond: Vec<f64> = (0..tree.layer_len(i))
            .map(|k| tree.conditional_expectation(&next, NodeRef::new(i, k)).unwrap())
            .collect();
        t.equal(direct, tree.layer_expectation(&cond, i).unwrap());
    }
    t.finish(cases)
}

fn increment_moments(seed: u64, cases: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("increment_moments", MOMENT_TOL);
    for _ in 0..cases {
        let tree = random_tree(&mut rng);
        let dt = tree.grid().dt();
        let p = tree.jump_probs().to_vec();
        let br = tree.branches();
        let e = |f: &dyn Fn(&crate::basis::Branch) -> f64| br.iter().map(|b| b.prob * f(b)).sum::<f64>();
        t.equal(e(&|b| b.db), 0.0);
        t.equal(e(&|b| b.db * b.db), dt);
        t.equal(e(&|_| 1.0), 1.0);
        for j in 0..p.len() {
            t.equal(e(&|b| b.dn[j]), 0.0);
            t.equal(e(&|b| b.dn[j] * b.dn[j]), p[j] * (1.0 - p[j]));
            t.equal(e(&|b| b.db * b.dn[j]), 0.0);
        }
        for i in 0..=tree.steps() {
            t.equal(tree.layer_probs(i).iter().sum::<f64>(), 1.0);
        }
    }
    t.finish(cases)
}

fn norm_equivalence(seed: u64, cases: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("norm_equivalence", INEQUALITY_TOL);
    for _ in 0..cases {
        let tree = random_tree(&mut rng);
        let n = tree.steps();
        let horizon = tree.grid().horizon();
        let beta = rng.gen_range(0.0..3.0);
        let y = random_process(&mut rng, &tree, 1, n + 1);
        let z = random_process(&mut rng, &tree, 1, n);
        let k = random_process(&mut rng, &tree, tree.jumps().len(), n);
        let pairs = [
            (norm_s2_beta(&tree, &y, 0.0), norm_s2_beta(&tree, &y, beta)),
            (norm_l2_beta(&tree, &z, 0.0), norm_l2_beta(&tree, &z, beta)),
            (
                norm_h2_beta(&tree, &k, 0.0, tree.jumps()),
                norm_h2_beta(&tree, &k, beta, tree.jumps()),
            ),
        ];
        for (plain, weighted) in pairs {
            t.below(plain, weighted);
            t.below(weighted, (beta * horizon).exp() * plain);
        }
    }
    t.finish(cases)
}

/// `E[Σ_{i<N} e^{β t_i} |P(t_i − d·dt)|² dt]` through delayed windows.
fn shifted_integral(tree: &ScenarioTree, p: &AdaptedProcess, kind: SegmentKind, d: usize, beta: f64) -> f64 {
    let grid = tree.grid();
    let lambda = tree.jumps().intensities();
    let mut total = 0.0;
    for i in 0..tree.steps() {
        let w = (beta * grid.time(i)).exp() * grid.dt();
        let mut layer = 0.0;
        for (idx, prob) in tree.layer_probs(i).iter().enumerate() {
            let view = segment_view(tree, p, NodeRef::new(i, idx), kind, d).unwrap();
            let v = view.back(d);
            let sq: f64 = match kind {
                SegmentKind::K => v.iter().zip(lambda).map(|(x, l)| l * x * x).sum(),
                _ => v.iter().map(|x| x * x).sum(),
            };
            layer += prob * sq;
        }
        total += w * layer;
    }
    total
}

/// `Σ_{i<N} e^{β t_i} (E|P(t_i)|)² dt`.
fn mean_integral(tree: &ScenarioTree, p: &AdaptedProcess, beta: f64) -> f64 {
    let grid = tree.grid();
    (0..tree.steps())
        .map(|i| {
            let abs: Vec<f64> = p.layer(i).iter().map(|v| v.abs()).collect();
            let m = tree.layer_expectation(&abs, i).unwrap();
            (beta * grid.time(i)).exp() * m * m * grid.dt()
        })
        .sum()
}

fn shift_inequalities(seed: u64, cases: usize) -> Vec<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ss = Tally::new("shift_s2", INEQUALITY_TOL);
    let mut sl2 = Tally::new("shift_l2", INEQUALITY_TOL);
    let mut sh = Tally::new("shift_h2", INEQUALITY_TOL);
    let mut ms = Tally::new("mean_s2", INEQUALITY_TOL);
    let mut ml = Tally::new("mean_l2", INEQUALITY_TOL);
    let mut ws = Tally::new("full_window_s2", INEQUALITY_TOL);
    let mut wl = Tally::new("full_window_l2", INEQUALITY_TOL);
    for _ in 0..cases {
        let tree = random_tree(&mut rng);
        let grid = *tree.grid();
        let n = grid.steps();
        let dt = grid.dt();
        let horizon = grid.horizon();
        let beta = rng.gen_range(0.0..3.0);
        let y = random_process(&mut rng, &tree, 1, n + 1);
        let z = random_process(&mut rng, &tree, 1, n);
        let k = random_process(&mut rng, &tree, tree.jumps().len(), n);
        let sy = norm_s2_beta(&tree, &y, beta);
        let lz = norm_l2_beta(&tree, &z, beta);
        let hk = norm_h2_beta(&tree, &k, beta, tree.jumps());

        let d = rng.gen_range(0..=grid.delay_steps());
        let factor = (beta * d as f64 * dt).exp();
        ss.below(shifted_integral(&tree, &y, SegmentKind::Y, d, beta), horizon * factor * sy);
        sl2.below(shifted_integral(&tree, &z, SegmentKind::Z, d, beta), factor * lz);
        sh.below(shifted_integral(&tree, &k, SegmentKind::K, d, beta), factor * hk);
        ms.below(mean_integral(&tree, &y, beta), horizon * sy);
        ml.below(mean_integral(&tree, &z, beta), lz);

        let full = grid.delay_steps();
        let e = (beta * grid.delay()).exp();
        ws.below(shifted_integral(&tree, &y, SegmentKind::Y, full, beta), horizon * e * sy);
        wl.below(shifted_integral(&tree, &z, SegmentKind::Z, full, beta), e * lz);
    }
    [ss, sl2, sh, ms, ml, ws, wl].into_iter().map(|t| t.finish(cases)).collect()
}

fn homogeneity(seed: u64, cases: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("homogeneity", MOMENT_TOL);
    for _ in 0..cases {
        let tree = random_tree(&mut rng);
        let n = tree.steps();
        let beta = rng.gen_range(0.0..3.0);
        let c = rng.gen_range(-4.0..4.0);
        let y = random_process(&mut rng, &tree, 1, n + 1);
        let z = random_process(&mut rng, &tree, 1, n);
        let k = random_process(&mut rng, &tree, tree.jumps().len(), n);
        let jumps = tree.jumps();
        let norms = |y: &AdaptedProcess, z: &AdaptedProcess, k: &AdaptedProcess| {
            [
                norm_s2_beta(&tree, y, beta),
                norm_l2_beta(&tree, z, beta),
                norm_h2_beta(&tree, k, beta, jumps),
            ]
        };
        let base = norms(&y, &z, &k);
        let scaled = norms(&y.map(|v| c * v), &z.map(|v| c * v), &k.map(|v| c * v));
        let zero = norms(&y.map(|_| 0.0), &z.map(|_| 0.0), &k.map(|_| 0.0));
        for i in 0..3 {
            t.record(((scaled[i] - c * c * base[i]) / base[i].max(1.0)).abs());
            t.record((-base[i]).max(0.0));
            t.record(zero[i].abs());
        }
        // positive on a nonzero Y
        t.record(if base[0] > 0.0 { 0.0 } else { 1.0 });
    }
    t.finish(cases)
}

fn probes(seed: u64) -> SuiteResult {
    let mut t = Tally::new("builtin_lipschitz_probes", 0.0);
    let grid = TimeGrid::new(1.0, 8, 0.5, 0.0).unwrap();
    let jumps = JumpSpec::new(vec![0.5, -1.0], vec![0.6, 1.2]).unwrap();
    let cases = [
        Builtin::Zero,
        Builtin::AffineMeanfield { a: 0.3, b: 1.0 },
        Builtin::PointDelay { a: 0.25, shift: -0.5 },
        Builtin::TwoPoint {
            a1: 0.2,
            a2: -0.1,
            delta: 0.25,
        },
        Builtin::RecursiveUtility {
            c: 0.7,
            pi: vec![1.0; 8],
            dt: 0.125,
        },
        Builtin::ForcedDecay { a: 1.0, kappa: 1.0 },
        Builtin::Linear(LinearCoefficients {
            y: 0.2,
            z: -0.3,
            k: 0.1,
            mean_y: 0.4,
            mean_z: 0.1,
            mean_k: -0.2,
            intercept: 1.0,
            delay: LinearDelay::Lebesgue { delta: 0.5 },
        }),
    ];
    for (i, b) in cases.iter().enumerate() {
        let ok = builtin(b, &jumps)
            .and_then(|g| probe_lipschitz(&g, &grid, &jumps, PROBE_TRIALS, PROBE_SCALE, seed.wrapping_add(i as u64)));
        t.record(match ok {
            Ok(r) if r.pass => 0.0,
            Ok(r) => r.max_ratio - 1.0,
            Err(_) => f64::INFINITY,
        });
    }
    t.finish(cases.len())
}

/// Runs every suite with `cases` random instances each.
pub fn run_all(seed: u64, cases: usize) -> Vec<SuiteResult> {
    let mut out = vec![
        tower(seed, cases),
        increment_moments(seed.wrapping_add(1), cases),
        norm_equivalence(seed.wrapping_add(2), cases),
    ];
    out.extend(shift_inequalities(seed.wrapping_add(3), cases));
    out.push(homogeneity(seed.wrapping_add(4), cases));
    out.push(probes(seed.wrapping_add(5)));
    out
}
