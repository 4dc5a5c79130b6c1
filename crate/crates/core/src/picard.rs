//! Finite-horizon solver: the Picard map Υ on a scenario tree, its
//! iteration to a fixed point, residual verification and the stability
//! estimate.
//!
//! One application of Υ runs three phases: the driver is evaluated on the
//! previous iterate (left endpoint), `Ȳ` is obtained by exact backward
//! induction, and `(Z̄, K̄)` by projecting the one-step martingale increment
//! onto `(ΔB, ΔÑ_1, …, ΔÑ_m)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{build_collapsed_tree, build_tree_with_budget, full_tree_size, JumpSpec, NodeRef, ScenarioTree, TimeGrid};
use crate::contraction::{c_beta, search_beta, AnalysisMode, FeasibilityReport};
use crate::error::{Error, Result};
use crate::generator::{DriverInput, GeneratorSpec};
use crate::process::{segment_view, triple_distance, AdaptedProcess, SegmentKind, SolutionTriple};
use crate::terminal::Terminal;

/// β used when the analyzer finds no admissible value and none is configured.
pub const DEFAULT_BETA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    /// Stopping threshold on the squared β-distance between iterates.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Norm weight used when the analyzer reports the instance infeasible.
    pub beta: Option<f64>,
    pub divergence_patience: usize,
    /// Scan size for the β analyzer.
    pub analysis_budget: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 200,
            beta: None,
            divergence_patience: 3,
            analysis_budget: 200,
        }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::param("tolerance", format!("must be > 0, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::param("max_iterations", "must be >= 1"));
        }
        if let Some(b) = self.beta {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::param("beta", format!("must be > 0, got {b}")));
            }
        }
        if self.divergence_patience == 0 {
            return Err(Error::param("divergence_patience", "must be >= 1"));
        }
        if self.analysis_budget < 10 {
            return Err(Error::param("analysis_budget", "must be >= 10"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSource {
    Analyzer,
    Config,
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationTrace {
    pub beta: f64,
    pub beta_source: BetaSource,
    /// Contraction condition evaluated at `beta`.
    pub condition: Option<f64>,
    pub analysis: FeasibilityReport,
    /// `d_k`, squared β-distance between iterates `k` and `k − 1`.
    pub distances: Vec<f64>,
    /// `ρ_k = d_k / d_{k−1}` for `k ≥ 2`; `None` when `d_{k−1} = 0`.
    pub ratios: Vec<Option<f64>>,
    pub patience: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl IterationTrace {
    /// Number of Υ applications performed.
    pub fn iterations(&self) -> usize {
        self.distances.len()
    }

    pub fn max_ratio(&self) -> Option<f64> {
        self.ratios.iter().flatten().copied().reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub z: f64,
    pub k: Vec<f64>,
    /// Conditional L² norm of what the increments do not span.
    pub residual: f64,
}

pub(crate) fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Least-squares projection of the children's values onto the increments.
///
/// The Gram matrix of `(ΔÑ_j)` is `diag(p) − p·pᵀ` with `p_j = λ_j·dt`, so
/// its inverse is `diag(1/p) + 𝟙𝟙ᵀ/(1 − Σp)` on the marks with `p_j > 0`.
/// `ΔB` is uncorrelated with every `ΔÑ_j`.
pub fn project_children(tree: &ScenarioTree, children: &[f64]) -> Projection {
    let branches = tree.branches();
    let m = tree.jumps().len();
    let mean = branches.iter().zip(children).fold(0.0, |a, (br, v)| a + br.prob * v);
    let var_b = tree.brownian_var();
    let p = tree.jump_probs();

    let mut cov_b = 0.0;
    let mut cov_n = vec![0.0; m];
    for (br, v) in branches.iter().zip(children) {
        let u = v - mean;
        cov_b += br.prob * u * br.db;
        for j in 0..m {
            cov_n[j] += br.prob * u * br.dn[j];
        }
    }
    let z = if var_b > 0.0 { cov_b / var_b } else { 0.0 };
    let mut k = vec![0.0; m];
    let p_active: f64 = p.iter().filter(|x| **x > 0.0).sum();
    let b_active: f64 = (0..m).filter(|&j| p[j] > 0.0).map(|j| cov_n[j]).sum();
    if p_active > 0.0 {
        let common = b_active / (1.0 - p_active);
        for j in 0..m {
            if p[j] > 0.0 {
                k[j] = cov_n[j] / p[j] + common;
            }
        }
    }
    let mut res2 = 0.0;
    for (br, v) in branches.iter().zip(children) {
        let r = v - mean - z * br.db - (0..m).map(|j| k[j] * br.dn[j]).sum::<f64>();
        res2 += br.prob * r * r;
    }
    Projection {
        z,
        k,
        residual: res2.sqrt(),
    }
}

/// Projection at `node` given the full next layer.
pub fn martingale_projection(tree: &ScenarioTree, node: NodeRef, next_layer: &[f64]) -> Result<Projection> {
    tree.check_node(node)?;
    let b = tree.branching();
    let start = node.index * b;
    if node.layer >= tree.steps() || next_layer.len() < start + b {
        return Err(Error::IncompleteLayer {
            layer: node.layer + 1,
            expected: start + b,
            got: next_layer.len(),
        });
    }
    Ok(project_children(tree, &next_layer[start..start + b]))
}

/// Driver values `f(t_i, ·)` along `input`, layers `0..N`.
pub fn driver_values(gen: &GeneratorSpec, input: &SolutionTriple) -> Result<Vec<Vec<f64>>> {
    let tree = &*input.tree;
    let n = tree.steps();
    let grid = tree.grid();
    let delay = grid.delay_steps();
    let m = tree.jumps().len();
    let lambda = tree.jumps().intensities();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mean_y = tree.layer_expectation(input.y.layer(i), i)?;
        let mean_z = tree.layer_expectation(input.z.layer(i), i)?;
        let mean_k = tree.layer_expectation_vec(input.k.layer(i), m, i)?;
        let t = grid.time(i);
        let pi = gen.pi_at(i);
        let values = map_indices(tree.layer_len(i), |idx| {
            let node = NodeRef::new(i, idx);
            let y = segment_view(tree, &input.y, node, SegmentKind::Y, delay)?;
            let z = segment_view(tree, &input.z, node, SegmentKind::Z, delay)?;
            let k = segment_view(tree, &input.k, node, SegmentKind::K, delay)?;
            gen.evaluate_at(
                &DriverInput {
                    t,
                    y: &y,
                    z: &z,
                    k: &k,
                    mean_y,
                    mean_z,
                    mean_k: &mean_k,
                    pi,
                    intensities: lambda,
                },
                Some(node),
            )
        });
        out.push(values.into_iter().collect::<Result<Vec<f64>>>()?);
    }
    Ok(out)
}

fn check_terminal(tree: &ScenarioTree, xi: &[f64]) -> Result<()> {
    let n = tree.steps();
    if xi.len() != tree.layer_len(n) {
        return Err(Error::IncompleteLayer {
            layer: n,
            expected: tree.layer_len(n),
            got: xi.len(),
        });
    }
    if let Some(v) = xi.iter().find(|v| !v.is_finite()) {
        return Err(Error::param("terminal", format!("must be finite, got {v}")));
    }
    Ok(())
}

/// Solves the plain backward recursion with given driver values.
fn backward(tree: &Arc<ScenarioTree>, xi: &[f64], phi: &[Vec<f64>]) -> SolutionTriple {
    let n = tree.steps();
    let m = tree.jumps().len();
    let b = tree.branching();
    let dt = tree.grid().dt();
    let mut y_layers: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut z_layers: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut k_layers: Vec<Vec<f64>> = vec![Vec::new(); n];
    y_layers[n] = xi.to_vec();
    for i in (0..n).rev() {
        let next = &y_layers[i + 1];
        let rows = map_indices(tree.layer_len(i), |idx| {
            let children = &next[idx * b..idx * b + b];
            let cond = tree
                .branches()
                .iter()
                .zip(children)
                .fold(0.0, |a, (br, v)| a + br.prob * v);
            let proj = project_children(tree, children);
            (cond + phi[i][idx] * dt, proj)
        });
        let mut y = Vec::with_capacity(rows.len());
        let mut z = Vec::with_capacity(rows.len());
        let mut k = Vec::with_capacity(rows.len() * m);
        for (yv, proj) in rows {
            y.push(yv);
            z.push(proj.z);
            k.extend_from_slice(&proj.k);
        }
        y_layers[i] = y;
        z_layers[i] = z;
        k_layers[i] = k;
    }
    SolutionTriple {
        tree: tree.clone(),
        y: AdaptedProcess::from_layers(1, y_layers),
        z: AdaptedProcess::from_layers(1, z_layers),
        k: AdaptedProcess::from_layers(m, k_layers),
    }
}

/// One application of Υ.
pub fn apply_upsilon(gen: &GeneratorSpec, xi: &[f64], input: &SolutionTriple) -> Result<SolutionTriple> {
    check_terminal(&input.tree, xi)?;
    let phi = driver_values(gen, input)?;
    Ok(backward(&input.tree, xi, &phi))
}

#[derive(Debug, Clone)]
pub struct FiniteSolve {
    pub solution: SolutionTriple,
    pub trace: IterationTrace,
}

/// Analyzer-backed choice of the norm weight.
pub fn choose_beta(gen: &GeneratorSpec, grid: &TimeGrid, cfg: &PicardConfig) -> Result<(f64, BetaSource, FeasibilityReport, Vec<String>)> {
    let mode = AnalysisMode::for_delay(gen.delay(), grid.horizon());
    let analysis = search_beta(mode, gen.lipschitz(), cfg.analysis_budget)?;
    if analysis.feasible {
        return Ok((analysis.best_beta, BetaSource::Analyzer, analysis, Vec::new()));
    }
    let (beta, source) = match cfg.beta {
        Some(b) => (b, BetaSource::Config),
        None => (DEFAULT_BETA, BetaSource::Default),
    };
    let warning = format!(
        "contraction condition ({}) not satisfied: best value {} at beta {}; iterating with beta = {beta}",
        mode.name(),
        analysis.value.map_or("undefined".to_string(), |v| v.to_string()),
        analysis.best_beta
    );
    Ok((beta, source, analysis, vec![warning]))
}

/// Picard iteration from the zero triple.
pub fn solve_finite(tree: Arc<ScenarioTree>, gen: &GeneratorSpec, xi: &[f64], cfg: &PicardConfig) -> Result<FiniteSolve> {
    let start = SolutionTriple::zeros(tree);
    solve_finite_from(start, gen, xi, cfg)
}

/// Picard iteration from an arbitrary starting triple.
pub fn solve_finite_from(start: SolutionTriple, gen: &GeneratorSpec, xi: &[f64], cfg: &PicardConfig) -> Result<FiniteSolve> {
    cfg.validate()?;
    let tree = start.tree.clone();
    gen.validate(tree.grid())?;
    check_terminal(&tree, xi)?;
    let (beta, beta_source, analysis, warnings) = choose_beta(gen, tree.grid(), cfg)?;
    let condition = analysis.mode.value(beta, gen.lipschitz())?;
    let mut trace = IterationTrace {
        beta,
        beta_source,
        condition,
        analysis,
        distances: Vec::new(),
        ratios: Vec::new(),
        patience: cfg.divergence_patience,
        converged: false,
        warnings,
    };
    let mut current = start;
    let mut increases = 0;
    for _ in 0..cfg.max_iterations {
        let next = apply_upsilon(gen, xi, &current)?;
        let d = triple_distance(&next, &current, beta)?;
        if let Some(&prev) = trace.distances.last() {
            trace.ratios.push((prev > 0.0).then(|| d / prev));
            if d > prev {
                increases += 1;
            } else {
                increases = 0;
            }
        }
        trace.distances.push(d);
        current = next;
        if d <= cfg.tolerance {
            trace.converged = true;
            return Ok(FiniteSolve {
                solution: current,
                trace,
            });
        }
        if !d.is_finite() || increases >= cfg.divergence_patience {
            return Err(Error::Divergence(Box::new(trace)));
        }
    }
    Err(Error::NonConvergence(Box::new(trace)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    /// Full tree when it fits the node budget, otherwise the reduced route.
    #[default]
    Auto,
    FullTree,
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    FullTree,
    /// Deterministic recursion on a single-path tree. Exact when `ξ` is
    /// deterministic; for mean-only generators with random `ξ` the path
    /// carries the means `E[Y], E[Z], E[K]`.
    Reduced,
}

/// Mean-field inputs contributed by the martingale part of `ξ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanOffsets {
    pub z: f64,
    pub k: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FiniteProblem {
    pub grid: TimeGrid,
    pub jumps: JumpSpec,
    pub generator: GeneratorSpec,
    pub terminal: Terminal,
}

#[derive(Debug, Clone)]
pub struct FiniteRun {
    pub route: Route,
    pub solution: SolutionTriple,
    pub trace: IterationTrace,
    /// Generator actually iterated (offset on the reduced route).
    pub generator: GeneratorSpec,
    pub xi: Vec<f64>,
    pub offsets: Option<MeanOffsets>,
}

impl FiniteProblem {
    /// Whether the reduced route is exact for this problem.
    pub fn reducible(&self) -> bool {
        self.terminal.is_deterministic() || self.generator.is_mean_only()
    }

    pub fn solve(&self, cfg: &PicardConfig, mode: SolveMode, budget: usize) -> Result<FiniteRun> {
        let fits = full_tree_size(self.grid.steps(), self.jumps.len()).is_some_and(|n| n <= budget);
        match mode {
            SolveMode::FullTree => self.solve_full(cfg, budget),
            SolveMode::Reduced => self.solve_reduced(cfg),
            SolveMode::Auto if fits => self.solve_full(cfg, budget),
            SolveMode::Auto if self.reducible() => self.solve_reduced(cfg),
            SolveMode::Auto => {
                // reports the budget error
                self.solve_full(cfg, budget)
            }
        }
    }

    fn solve_full(&self, cfg: &PicardConfig, budget: usize) -> Result<FiniteRun> {
        let tree = Arc::new(build_tree_with_budget(self.grid, self.jumps.clone(), budget)?);
        let xi = self.terminal.values_on(&tree)?;
        let out = solve_finite(tree, &self.generator, &xi, cfg)?;
        Ok(FiniteRun {
            route: Route::FullTree,
            solution: out.solution,
            trace: out.trace,
            generator: self.generator.clone(),
            xi,
            offsets: None,
        })
    }

    fn solve_reduced(&self, cfg: &PicardConfig) -> Result<FiniteRun> {
        let tree = Arc::new(build_collapsed_tree(self.grid, self.jumps.clone())?);
        if self.terminal.is_deterministic() {
            let xi = self.terminal.values_on(&tree)?;
            let out = solve_finite(tree, &self.generator, &xi, cfg)?;
            return Ok(FiniteRun {
                route: Route::Reduced,
                solution: out.solution,
                trace: out.trace,
                generator: self.generator.clone(),
                xi,
                offsets: None,
            });
        }
        if !self.generator.is_mean_only() {
            return Err(Error::NotReducible(format!(
                "generator `{}` reads the solution pathwise and the terminal value is random",
                self.generator.name()
            )));
        }
        let moments = self.terminal.moments(&self.grid, &self.jumps)?;
        let n = self.grid.steps() as f64;
        let dz = moments.brownian / self.grid.horizon();
        let p: Vec<f64> = self.jumps.intensities().iter().map(|l| l * self.grid.dt()).collect();
        let b: Vec<f64> = moments.jumps.iter().map(|x| x / n).collect();
        let p_active: f64 = p.iter().filter(|x| **x > 0.0).sum();
        let b_active: f64 = (0..p.len()).filter(|&j| p[j] > 0.0).map(|j| b[j]).sum();
        let dk: Vec<f64> = (0..p.len())
            .map(|j| if p[j] > 0.0 { b[j] / p[j] + b_active / (1.0 - p_active) } else { 0.0 })
            .collect();
        let gen = self.generator.with_mean_offsets(dz, dk.clone());
        let xi = vec![moments.mean];
        let mut out = solve_finite(tree, &gen, &xi, cfg)?;
        let steps = self.grid.steps();
        let m = self.jumps.len();
        out.solution.z = AdaptedProcess::from_layers(1, vec![vec![dz]; steps]);
        out.solution.k = AdaptedProcess::from_layers(m, vec![dk.clone(); steps]);
        out.trace
            .warnings
            .push("reduced route: trajectories hold the mean path E[Y], E[Z], E[K]".into());
        Ok(FiniteRun {
            route: Route::Reduced,
            solution: out.solution,
            trace: out.trace,
            generator: gen,
            xi,
            offsets: Some(MeanOffsets { z: dz, k: dk }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub tolerance: f64,
    /// Largest `|Y − E[Y_next] − f·dt|`.
    pub max_one_step: f64,
    pub worst_node: Option<NodeRef>,
    /// Largest `|E[res·ΔB]|` or `|E[res·ΔÑ_j]|`.
    pub max_orthogonality: f64,
    /// Largest projection residual (not part of the pass criterion).
    pub max_projection_residual: f64,
    pub terminal_exact: bool,
}

/// Checks the one-step identity and the orthogonality of the projection
/// residual at every node, with the driver evaluated on `sol` itself.
pub fn verify_solution(gen: &GeneratorSpec, xi: &[f64], sol: &SolutionTriple, tol: f64) -> Result<VerifyReport> {
    let tree = &*sol.tree;
    check_terminal(tree, xi)?;
    let n = tree.steps();
    let m = tree.jumps().len();
    let b = tree.branching();
    let dt = tree.grid().dt();
    let phi = driver_values(gen, sol)?;
    let mut max_one_step: f64 = 0.0;
    let mut worst_node = None;
    let mut max_orth: f64 = 0.0;
    let mut max_res: f64 = 0.0;
    for i in 0..n {
        let next = sol.y.layer(i + 1);
        for idx in 0..tree.layer_len(i) {
            let children = &next[idx * b..idx * b + b];
            let mut cond = 0.0;
            for (br, v) in tree.branches().iter().zip(children) {
                cond += br.prob * v;
            }
            let node = NodeRef::new(i, idx);
            let r = (sol.y.value(node) - cond - phi[i][idx] * dt).abs();
            if r > max_one_step || (r.is_nan() && worst_node.is_none()) {
                max_one_step = r;
                worst_node = Some(node);
            }
            let z = sol.z.value(node);
            let k = sol.k.values(node);
            let mut eb = 0.0;
            let mut en = vec![0.0; m];
            let mut res2 = 0.0;
            for (br, v) in tree.branches().iter().zip(children) {
                let res = v - cond - z * br.db - (0..m).map(|j| k[j] * br.dn[j]).sum::<f64>();
                eb += br.prob * res * br.db;
                for j in 0..m {
                    en[j] += br.prob * res * br.dn[j];
                }
                res2 += br.prob * res * res;
            }
            max_orth = en.iter().fold(max_orth.max(eb.abs()), |a, v| a.max(v.abs()));
            max_res = max_res.max(res2.sqrt());
        }
    }
    let terminal_exact = sol.y.layer(n).iter().zip(xi).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok(VerifyReport {
        pass: max_one_step <= tol && max_orth <= tol && terminal_exact,
        tolerance: tol,
        max_one_step,
        worst_node,
        max_orthogonality: max_orth,
        max_projection_residual: max_res,
        terminal_exact,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub c_beta: f64,
    pub holds: bool,
}

/// One solved instance: generator, terminal values and solution.
#[derive(Debug, Clone, Copy)]
pub struct Instance<'a> {
    pub generator: &'a GeneratorSpec,
    pub xi: &'a [f64],
    pub solution: &'a SolutionTriple,
}

/// `‖Δ(Y,Z,K)‖²_β ≤ C_β (E|Δξ|² + E Σ e^{βt}|Δf|² dt)` with each driver
/// evaluated along its own solution.
pub fn stability_check(a: Instance<'_>, b: Instance<'_>, beta: f64) -> Result<StabilityReport> {
    let tree = &*a.solution.tree;
    if !tree.same_model(&b.solution.tree) {
        return Err(Error::TreeMismatch);
    }
    check_terminal(tree, a.xi)?;
    check_terminal(tree, b.xi)?;
    let grid = tree.grid();
    let cb = c_beta(beta, grid.horizon())?;
    let lhs = triple_distance(a.solution, b.solution, beta)?;
    let n = tree.steps();
    let dxi: Vec<f64> = a.xi.iter().zip(b.xi).map(|(x, y)| (x - y).powi(2)).collect();
    let mut rhs = tree.layer_expectation(&dxi, n)?;
    let fa = driver_values(a.generator, a.solution)?;
    let fb = driver_values(b.generator, b.solution)?;
    for i in 0..n {
        let d: Vec<f64> = fa[i].iter().zip(&fb[i]).map(|(x, y)| (x - y).powi(2)).collect();
        rhs += (beta * grid.time(i)).exp() * grid.dt() * tree.layer_expectation(&d, i)?;
    }
    let rhs = cb * rhs;
    Ok(StabilityReport {
        lhs,
        rhs,
        c_beta: cb,
        holds: lhs <= rhs * (1.0 + 1e-9),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_tree;
    use crate::generator::{builtin, Builtin};

    fn tree(t: f64, n: usize, delta: f64, jumps: JumpSpec) -> Arc<ScenarioTree> {
        Arc::new(build_tree(TimeGrid::new(t, n, delta, 0.0).unwrap(), jumps).unwrap())
    }

    #[test]
    fn projection_examples() {
        let tr = tree(0.25, 1, 0.0, JumpSpec::none());
        let p = martingale_projection(&tr, NodeRef::root(), &[1.0, -1.0]).unwrap();
        assert!((p.z - 2.0).abs() < 1e-15);
        assert!(p.residual < 1e-15);

        let tr = tree(0.25, 1, 0.0, JumpSpec::single(1.0, 0.4).unwrap());
        let p = martingale_projection(&tr, NodeRef::root(), &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(p.z.abs() < 1e-15);
        assert!((p.k[0] - 1.0).abs() < 1e-14);
        assert!(p.residual < 1e-14);

        let p = martingale_projection(&tr, NodeRef::root(), &[2.0; 4]).unwrap();
        assert_eq!((p.z, p.k[0], p.residual), (0.0, 0.0, 0.0));
        assert!(martingale_projection(&tr, NodeRef::root(), &[2.0; 3]).is_err());
    }

    #[test]
    fn projection_with_two_marks_spans_jump_outcomes() {
        // three jump outcomes and two signs: any value that is a function of
        // the outcome alone plus a multiple of ΔB is represented exactly
        let tr = tree(0.25, 1, 0.0, JumpSpec::new(vec![1.0, 2.0], vec![0.4, 1.2]).unwrap());
        let g = |br: &crate::basis::Branch| {
            let base = match br.jump {
                None => 0.3,
                Some(0) => -1.0,
                _ => 2.5,
            };
            base + 0.7 * br.db
        };
        let values: Vec<f64> = tr.branches().iter().map(g).collect();
        let p = martingale_projection(&tr, NodeRef::root(), &values).unwrap();
        assert!((p.z - 0.7).abs() < 1e-14);
        assert!(p.residual < 1e-14);
        // k_j is the jump outcome's value against the no-jump value; a
        // componentwise division by E[ΔÑ_j²] would miss the cross terms
        assert!((p.k[0] - (-1.0 - 0.3)).abs() < 1e-12, "{:?}", p.k);
        assert!((p.k[1] - (2.5 - 0.3)).abs() < 1e-12);
    }

    #[test]
    fn zero_generator_constant_terminal() {
        let tr = tree(1.0, 3, 0.0, JumpSpec::single(1.0, 0.5).unwrap());
        let g = builtin(&Builtin::Zero, tr.jumps()).unwrap();
        let xi = vec![3.0; tr.layer_len(3)];
        let out = solve_finite(tr.clone(), &g, &xi, &PicardConfig::default()).unwrap();
        assert_eq!(out.trace.distances.len(), 2);
        assert_eq!(out.trace.distances[1], 0.0);
        assert!(out.solution.y.layers().iter().flatten().all(|v| *v == 3.0));
        assert!(out.solution.z.layers().iter().flatten().all(|v| *v == 0.0));
        assert!(out.solution.k.layers().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_generator_brownian_terminal() {
        let tr = tree(1.0, 4, 0.0, JumpSpec::none());
        let g = builtin(&Builtin::Zero, tr.jumps()).unwrap();
        let levels = tr.brownian_levels();
        let out = solve_finite(tr.clone(), &g, &levels[4], &PicardConfig::default()).unwrap();
        for (i, layer) in levels.iter().enumerate() {
            for (a, b) in out.solution.y.layer(i).iter().zip(layer) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        assert!(out.solution.z.layers().iter().flatten().all(|v| (v - 1.0).abs() < 1e-12));
        let rep = verify_solution(&g, &levels[4], &out.solution, 1e-12).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.max_projection_residual < 1e-14);
    }

    #[test]
    fn affine_one_application() {
        let tr = tree(1.0, 1, 0.0, JumpSpec::none());
        let g = builtin(&Builtin::AffineMeanfield { a: 0.5, b: 0.0 }, tr.jumps()).unwrap();
        let xi: Vec<f64> = tr.brownian_levels()[1].iter().map(|b| 1.0 + b).collect();
        let once = apply_upsilon(&g, &xi, &SolutionTriple::zeros(tr.clone())).unwrap();
        assert_eq!(once.y0(), 1.0);
        let twice = apply_upsilon(&g, &xi, &once).unwrap();
        assert_eq!(twice.y0(), 1.5);
    }

    #[test]
    fn point_delay_fixed_point() {
        for n in [1, 2, 4, 8] {
            let grid = TimeGrid::new(1.0, n, 1.0, 0.0).unwrap();
            let tr = Arc::new(build_collapsed_tree(grid, JumpSpec::none()).unwrap());
            let g = builtin(&Builtin::PointDelay { a: 0.25, shift: -1.0 }, tr.jumps()).unwrap();
            let cfg = PicardConfig {
                tolerance: 1e-24,
                ..PicardConfig::default()
            };
            let out = solve_finite(tr, &g, &[1.0], &cfg).unwrap();
            assert!((out.solution.y0() - 4.0 / 3.0).abs() < 1e-9, "n={n}: {}", out.solution.y0());
        }
    }

    #[test]
    fn perturbed_solution_fails_verification() {
        let tr = tree(1.0, 3, 0.0, JumpSpec::none());
        let g = builtin(&Builtin::Zero, tr.jumps()).unwrap();
        let xi = vec![1.0; 8];
        let mut sol = solve_finite(tr.clone(), &g, &xi, &PicardConfig::default()).unwrap().solution;
        assert!(verify_solution(&g, &xi, &sol, 1e-12).unwrap().pass);
        let node = NodeRef::new(2, 1);
        sol.y.set(node, sol.y.value(node) + 0.1);
        let rep = verify_solution(&g, &xi, &sol, 1e-12).unwrap();
        assert!(!rep.pass);
        assert_eq!(rep.worst_node, Some(node));
        assert!((rep.max_one_step - 0.1).abs() < 1e-12);
    }

    #[test]
    fn stability_constant_shift() {
        let tr = tree(1.0, 3, 0.0, JumpSpec::none());
        let g = builtin(&Builtin::Zero, tr.jumps()).unwrap();
        let xa = vec![1.0; 8];
        let xb = vec![1.1; 8];
        let cfg = PicardConfig::default();
        let sa = solve_finite(tr.clone(), &g, &xa, &cfg).unwrap().solution;
        let sb = solve_finite(tr.clone(), &g, &xb, &cfg).unwrap().solution;
        let a = Instance {
            generator: &g,
            xi: &xa,
            solution: &sa,
        };
        let b = Instance {
            generator: &g,
            xi: &xb,
            solution: &sb,
        };
        let same = stability_check(a, a, 1.0).unwrap();
        assert_eq!((same.lhs, same.rhs), (0.0, 0.0));
        assert!(same.holds);
        let r = stability_check(a, b, 1.0).unwrap();
        assert!((r.lhs - std::f64::consts::E * 0.01).abs() < 1e-12);
        assert!((r.rhs - 9.0 * std::f64::consts::E * 0.01).abs() < 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn reduced_route_matches_full_tree() {
        let grid = TimeGrid::new(1.0, 8, 0.0, 0.0).unwrap();
        let jumps = JumpSpec::single(1.0, 0.6).unwrap();
        let coeffs = crate::generator::LinearCoefficients {
            y: 0.0,
            z: 0.0,
            k: 0.0,
            mean_y: 0.4,
            mean_z: -0.3,
            mean_k: 0.5,
            intercept: 0.1,
            delay: crate::generator::LinearDelay::Point { shift: 0.0 },
        };
        let problem = FiniteProblem {
            grid,
            jumps: jumps.clone(),
            generator: builtin(&Builtin::Linear(coeffs), &jumps).unwrap(),
            terminal: Terminal::Affine {
                constant: 1.0,
                brownian: 0.8,
                jumps: vec![0.5],
            },
        };
        let cfg = PicardConfig {
            tolerance: 1e-26,
            ..PicardConfig::default()
        };
        let full = problem.solve(&cfg, SolveMode::FullTree, 1 << 26).unwrap();
        let reduced = problem.solve(&cfg, SolveMode::Reduced, 0).unwrap();
        assert_eq!(reduced.route, Route::Reduced);
        for i in 0..=8 {
            let e = full.solution.tree.layer_expectation(full.solution.y.layer(i), i).unwrap();
            assert!((e - reduced.solution.y.layer(i)[0]).abs() < 1e-12, "layer {i}");
        }
        let ez = full.solution.tree.layer_expectation(full.solution.z.layer(5), 5).unwrap();
        assert!((ez - reduced.offsets.as_ref().unwrap().z).abs() < 1e-12);
        let ek = full.solution.tree.layer_expectation_vec(full.solution.k.layer(5), 1, 5).unwrap();
        assert!((ek[0] - reduced.offsets.as_ref().unwrap().k[0]).abs() < 1e-12);
    }

    #[test]
    fn auto_route_reports_not_reducible() {
        let grid = TimeGrid::new(1.0, 40, 0.0, 0.0).unwrap();
        let jumps = JumpSpec::none();
        let problem = FiniteProblem {
            grid,
            jumps: jumps.clone(),
            generator: builtin(&Builtin::ForcedDecay { a: 1.0, kappa: 1.0 }, &jumps).unwrap(),
            terminal: Terminal::BrownianCall { strike: 0.0 },
        };
        let err = problem.solve(&PicardConfig::default(), SolveMode::Auto, 1000).unwrap_err();
        assert!(matches!(err, Error::NodeBudget { .. }));
        let err = problem.solve(&PicardConfig::default(), SolveMode::Reduced, 1000).unwrap_err();
        assert!(matches!(err, Error::NotReducible(_)));
    }

    #[test]
    fn non_convergence_carries_trace() {
        let tr = tree(1.0, 2, 0.0, JumpSpec::none());
        let g = builtin(&Builtin::AffineMeanfield { a: 0.5, b: 1.0 }, tr.jumps()).unwrap();
        let cfg = PicardConfig {
            max_iterations: 2,
            tolerance: 1e-30,
            ..PicardConfig::default()
        };
        match solve_finite(tr, &g, &[0.0; 4], &cfg) {
            Err(Error::NonConvergence(t)) => assert_eq!(t.distances.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn divergence_is_detected() {
        let grid = TimeGrid::new(8.0, 64, 0.0, 0.0).unwrap();
        let tr = Arc::new(build_collapsed_tree(grid, JumpSpec::none()).unwrap());
        let g = builtin(&Builtin::ForcedDecay { a: 3.0, kappa: 1.0 }, tr.jumps()).unwrap();
        let err = solve_finite(tr, &g, &[0.0], &PicardConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err:?}");
    }
}
