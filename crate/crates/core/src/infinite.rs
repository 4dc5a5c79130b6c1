//! Infinite horizon by truncation: solve on `[0, n]` with zero terminal
//! value for an increasing ladder of `n`, monitor the Cauchy property in the
//! weighted norm and check decay and the a-priori estimate.

use serde::{Deserialize, Serialize};

use crate::basis::{full_tree_size, JumpSpec, NodeRef, TimeGrid, DEFAULT_NODE_BUDGET};
use crate::contraction::{infinite_condition, InfiniteCheck};
use crate::error::{Error, Result};
use crate::generator::GeneratorSpec;
use crate::picard::{FiniteProblem, FiniteRun, PicardConfig, Route, SolveMode};
use crate::process::{norm_call, norm_h2_beta, norm_l2_beta, norm_s2_beta, SolutionTriple};
use crate::terminal::Terminal;

fn default_budget() -> usize {
    DEFAULT_NODE_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    /// Strictly increasing truncation horizons.
    pub horizons: Vec<f64>,
    pub dt: f64,
    pub beta: f64,
    pub epsilon: f64,
    /// Stop at the first consecutive-rung distance at or below this.
    pub tol: f64,
    /// Shift `r ∈ [−δ, 0]`.
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub mode: SolveMode,
    #[serde(default = "default_budget")]
    pub node_budget: usize,
}

impl LadderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(Error::param("horizons", "ladder is empty"));
        }
        if self.horizons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("horizons", "must be strictly increasing"));
        }
        for (name, v) in [("dt", self.dt), ("beta", self.beta), ("epsilon", self.epsilon), ("tol", self.tol)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.r.is_finite() && self.r <= 0.0) {
            return Err(Error::param("r", format!("must be <= 0, got {}", self.r)));
        }
        Ok(())
    }

    fn grid(&self, gen: &GeneratorSpec, horizon: f64) -> Result<TimeGrid> {
        let delay = gen.delay().reach().max(-self.r);
        TimeGrid::with_step(horizon, self.dt, delay, self.r)
    }
}

/// Solution on `[0, n]` with `ξ ≡ 0`.
pub fn solve_truncated(
    gen: &GeneratorSpec,
    jumps: &JumpSpec,
    grid: TimeGrid,
    picard: &PicardConfig,
    mode: SolveMode,
    budget: usize,
) -> Result<FiniteRun> {
    let problem = FiniteProblem {
        grid,
        jumps: jumps.clone(),
        generator: gen.clone(),
        terminal: Terminal::Constant(0.0),
    };
    problem.solve(picard, mode, budget)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RungSummary {
    pub horizon: f64,
    pub steps: usize,
    pub route: Route,
    pub iterations: usize,
    pub picard_beta: f64,
    pub y0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderTrace {
    pub beta: f64,
    pub epsilon: f64,
    pub condition: InfiniteCheck,
    pub rungs: Vec<RungSummary>,
    /// `Δ` between rungs `i` and `i + 1`, restricted to `[0, n_i]`.
    pub deltas: Vec<f64>,
    /// `∫_{n_i}^∞ e^{βs} w(s)² ds` from the witness (`None` if divergent).
    pub tails: Vec<Option<f64>>,
    /// Whether `ε·Δ_i` is at most the tail integral.
    pub dominated: Vec<Option<bool>>,
    /// Index into `deltas` of the first value at or below the tolerance.
    pub converged_at: Option<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct InfiniteRun {
    pub solution: SolutionTriple,
    pub horizon: f64,
    pub trace: LadderTrace,
}

/// Truncation ladder with Cauchy monitoring.
pub fn solve_infinite(gen: &GeneratorSpec, jumps: &JumpSpec, ladder: &LadderConfig, picard: &PicardConfig) -> Result<InfiniteRun> {
    ladder.validate()?;
    let condition = infinite_condition(ladder.beta, ladder.epsilon, gen.lipschitz(), ladder.r)?;
    let mut warnings = Vec::new();
    if !condition.ok {
        warnings.push(format!(
            "(beta, epsilon) = ({}, {}) do not satisfy the infinite-horizon condition with C = {}: slacks {} and {}",
            ladder.beta,
            ladder.epsilon,
            gen.lipschitz(),
            condition.slack_beta,
            condition.slack_eps
        ));
    }
    if gen.witness().weighted_integral(ladder.beta, 0.0, None).is_none() {
        warnings.push(format!(
            "integrability witness is not square-integrable against e^(beta t) at beta = {}",
            ladder.beta
        ));
    }

    let grids = ladder
        .horizons
        .iter()
        .map(|&n| ladder.grid(gen, n))
        .collect::<Result<Vec<_>>>()?;
    // one route for the whole ladder so consecutive rungs share a tree shape
    let mode = match ladder.mode {
        SolveMode::Auto => {
            let last = grids.last().expect("validated non-empty");
            if full_tree_size(last.steps(), jumps.len()).is_some_and(|s| s <= ladder.node_budget) {
                SolveMode::FullTree
            } else {
                SolveMode::Reduced
            }
        }
        m => m,
    };

    let mut trace = LadderTrace {
        beta: ladder.beta,
        epsilon: ladder.epsilon,
        condition,
        rungs: Vec::new(),
        deltas: Vec::new(),
        tails: Vec::new(),
        dominated: Vec::new(),
        converged_at: None,
        warnings,
    };
    let mut prev: Option<FiniteRun> = None;
    for (i, grid) in grids.into_iter().enumerate() {
        let run = solve_truncated(gen, jumps, grid, picard, mode, ladder.node_budget)?;
        trace.rungs.push(RungSummary {
            horizon: grid.horizon(),
            steps: grid.steps(),
            route: run.route,
            iterations: run.trace.iterations(),
            picard_beta: run.trace.beta,
            y0: run.solution.y0(),
        });
        for w in &run.trace.warnings {
            trace.warnings.push(format!("rung {}: {w}", grid.horizon()));
        }
        if let Some(p) = prev.take() {
            let restricted = run.solution.restrict(p.solution.tree.clone())?;
            let diff = restricted.difference(&p.solution)?;
            let delta = norm_call(&diff, ladder.beta);
            let n = ladder.horizons[i - 1];
            let tail = gen.witness().weighted_integral(ladder.beta, n, None);
            trace.deltas.push(delta);
            trace.tails.push(tail);
            trace.dominated.push(tail.map(|t| ladder.epsilon * delta <= t));
            if delta <= ladder.tol {
                trace.converged_at = Some(trace.deltas.len() - 1);
                return Ok(InfiniteRun {
                    solution: run.solution,
                    horizon: grid.horizon(),
                    trace,
                });
            }
        }
        prev = Some(run);
    }
    Err(Error::LadderExhausted(Box::new(trace)))
}

/// Values of a truncated solution at a node, zero beyond its horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedSample {
    pub y: f64,
    pub z: f64,
    pub k: Vec<f64>,
}

/// Looks up `(Y, Z, K)` at `node`, with the zero extension past the last
/// layer (`Y` past layer `N`, `Z` and `K` from layer `N` on).
pub fn query_extended(sol: &SolutionTriple, node: NodeRef) -> ExtendedSample {
    let n = sol.tree.steps();
    let m = sol.tree.jumps().len();
    let y = if node.layer <= n { sol.y.value(node) } else { 0.0 };
    if node.layer < n {
        ExtendedSample {
            y,
            z: sol.z.value(node),
            k: sol.k.values(node).to_vec(),
        }
    } else {
        ExtendedSample { y, z: 0.0, k: vec![0.0; m] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub beta_prime: f64,
    pub beta: f64,
    /// `E[sup_u e^{βu}|Y(u)|²]`.
    pub sup_moment: f64,
    /// `e^{β′t}·E|Y(t)|²` per layer.
    pub lhs: Vec<f64>,
    /// `e^{(β′−β)t}·E[sup_u e^{βu}|Y(u)|²]` per layer.
    pub rhs: Vec<f64>,
    pub holds: bool,
    /// The weighted moment at the second-to-last layer is at most its value
    /// at three quarters of the grid.
    pub downward: bool,
}

/// Weighted-moment decay of `Y` for `β′ < β`.
pub fn decay_check(sol: &SolutionTriple, beta_prime: f64, beta: f64) -> Result<DecayReport> {
    if !(beta_prime < beta) {
        return Err(Error::Domain(format!("need beta' < beta, got {beta_prime} >= {beta}")));
    }
    let tree = &*sol.tree;
    let grid = tree.grid();
    let n = tree.steps();
    let sup_moment = norm_s2_beta(tree, &sol.y, beta);
    let mut lhs = Vec::with_capacity(n + 1);
    let mut rhs = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let sq: Vec<f64> = sol.y.layer(i).iter().map(|v| v * v).collect();
        let t = grid.time(i);
        lhs.push((beta_prime * t).exp() * tree.layer_expectation(&sq, i)?);
        rhs.push(((beta_prime - beta) * t).exp() * sup_moment);
    }
    let holds = lhs.iter().zip(&rhs).all(|(l, r)| *l <= r * (1.0 + 1e-9));
    let late = n.saturating_sub(1);
    let quarter = 3 * n / 4;
    let downward = lhs.iter().all(|v| *v == 0.0) || lhs[late] <= lhs[quarter];
    Ok(DecayReport {
        beta_prime,
        beta,
        sup_moment,
        lhs,
        rhs,
        holds,
        downward,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriReport {
    pub lhs: f64,
    pub rhs: f64,
    /// The unnamed constant of the estimate, taken as `1/ε`.
    pub constant: f64,
    /// `lhs / rhs` (infinite when `rhs = 0 < lhs`).
    pub factor: f64,
    pub holds: bool,
}

/// `E sup e^{βt}|Y|² + E∫e^{βt}(|Y|² + |Z|² + ∫|K|²ν)dt ≤ (1/ε)∫e^{βt}|f(t,0)|²dt`.
pub fn apriori_check(sol: &SolutionTriple, gen: &GeneratorSpec, beta: f64, epsilon: f64) -> Result<AprioriReport> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be > 0, got {epsilon}")));
    }
    let integral = gen.witness().weighted_integral(beta, 0.0, None).ok_or_else(|| {
        Error::config(
            "/generator",
            format!("integrability witness of `{}` is not integrable at beta = {beta}", gen.name()),
        )
    })?;
    let tree = &*sol.tree;
    let n = tree.steps();
    let lhs = norm_s2_beta(tree, &sol.y, beta)
        + norm_l2_beta(tree, &sol.y.truncated(n), beta)
        + norm_l2_beta(tree, &sol.z, beta)
        + norm_h2_beta(tree, &sol.k, beta, tree.jumps());
    let rhs = integral / epsilon;
    let factor = if rhs > 0.0 {
        lhs / rhs
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(AprioriReport {
        lhs,
        rhs,
        constant: 1.0 / epsilon,
        factor,
        holds: lhs <= rhs * (1.0 + 1e-9),
    })
}
