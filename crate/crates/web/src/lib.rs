//! Browser bindings: β-scan of the contraction condition, a finite-horizon
//! solve and the infinite-horizon ladder, all JSON in and JSON out.

use mfdbsde::config::parse_config;
use mfdbsde::contraction::{search_beta, AnalysisMode};
use mfdbsde::picard::FiniteProblem;
use mfdbsde::{solve_infinite, SolutionTriple};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Node budget in the browser; larger problems take the reduced route.
pub const WEB_NODE_BUDGET: usize = 200_000;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveRequest {
    pub mode: AnalysisMode,
    pub lipschitz: f64,
    #[serde(default = "default_budget")]
    pub budget: usize,
}

fn default_budget() -> usize {
    200
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub betas: Vec<f64>,
    pub values: Vec<Option<f64>>,
    pub feasible: bool,
    pub best_beta: f64,
    pub best_value: Option<f64>,
    pub best_epsilon: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct MeanPath {
    pub times: Vec<f64>,
    pub mean_y: Vec<f64>,
    pub min_y: Vec<f64>,
    pub max_y: Vec<f64>,
}

impl MeanPath {
    fn of(sol: &SolutionTriple) -> Self {
        let tree = &*sol.tree;
        let mut out = MeanPath {
            times: Vec::new(),
            mean_y: Vec::new(),
            min_y: Vec::new(),
            max_y: Vec::new(),
        };
        for i in 0..sol.y.layer_count() {
            let layer = sol.y.layer(i);
            out.times.push(tree.grid().time(i));
            out.mean_y.push(tree.layer_expectation(layer, i).unwrap_or(f64::NAN));
            out.min_y.push(layer.iter().copied().fold(f64::INFINITY, f64::min));
            out.max_y.push(layer.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        out
    }
}

#[derive(Debug, Serialize)]
pub struct FiniteDemo {
    pub route: String,
    pub y0: f64,
    pub beta: f64,
    pub condition: Option<f64>,
    pub iterations: usize,
    pub distances: Vec<f64>,
    pub warnings: Vec<String>,
    pub path: MeanPath,
}

#[derive(Debug, Serialize)]
pub struct LadderDemo {
    pub horizons: Vec<f64>,
    pub y0: Vec<f64>,
    pub deltas: Vec<f64>,
    pub tails: Vec<Option<f64>>,
    pub converged_at: Option<usize>,
    pub warnings: Vec<String>,
    pub path: MeanPath,
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// Condition value over the β grid.
pub fn feasibility_curve_json(request: &str) -> Result<String, String> {
    let req: CurveRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let r = search_beta(req.mode, req.lipschitz, req.budget).map_err(|e| e.to_string())?;
    to_json(&Curve {
        betas: r.trace.iter().map(|p| p.beta).collect(),
        values: r.trace.iter().map(|p| p.value).collect(),
        feasible: r.feasible,
        best_beta: r.best_beta,
        best_value: r.value,
        best_epsilon: r.best_epsilon,
    })
}

/// Finite-horizon solve of a configuration document.
pub fn solve_finite_json(config: &str) -> Result<String, String> {
    let cfg = parse_config(config).map_err(|e| e.to_string())?;
    let grid = cfg.require_grid().map_err(|e| e.to_string())?;
    let problem = FiniteProblem {
        grid,
        jumps: cfg.jumps.clone(),
        generator: cfg.require_generator().map_err(|e| e.to_string())?.clone(),
        terminal: cfg.terminal.clone(),
    };
    let budget = cfg.raw.picard.node_budget.min(WEB_NODE_BUDGET);
    let run = problem
        .solve(&cfg.picard, cfg.raw.picard.mode, budget)
        .map_err(|e| e.to_string())?;
    to_json(&FiniteDemo {
        route: format!("{:?}", run.route),
        y0: run.solution.y0(),
        beta: run.trace.beta,
        condition: run.trace.condition,
        iterations: run.trace.iterations(),
        distances: run.trace.distances.clone(),
        warnings: run.trace.warnings.clone(),
        path: MeanPath::of(&run.solution),
    })
}

/// Truncation ladder of a configuration document with a `ladder` section.
pub fn solve_ladder_json(config: &str) -> Result<String, String> {
    let cfg = parse_config(config).map_err(|e| e.to_string())?;
    let mut ladder = cfg.require_ladder().map_err(|e| e.to_string())?.clone();
    ladder.node_budget = ladder.node_budget.min(WEB_NODE_BUDGET);
    let gen = cfg.require_generator().map_err(|e| e.to_string())?;
    let run = solve_infinite(gen, &cfg.jumps, &ladder, &cfg.picard).map_err(|e| e.to_string())?;
    let t = &run.trace;
    to_json(&LadderDemo {
        horizons: t.rungs.iter().map(|r| r.horizon).collect(),
        y0: t.rungs.iter().map(|r| r.y0).collect(),
        deltas: t.deltas.clone(),
        tails: t.tails.clone(),
        converged_at: t.converged_at,
        warnings: t.warnings.clone(),
        path: MeanPath::of(&run.solution),
    })
}

#[wasm_bindgen]
pub fn feasibility_curve(request: &str) -> Result<String, JsValue> {
    feasibility_curve_json(request).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn solve_finite(config: &str) -> Result<String, JsValue> {
    solve_finite_json(config).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn solve_ladder(config: &str) -> Result<String, JsValue> {
    solve_ladder_json(config).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn curve_finds_the_feasible_minimum() {
        let req = r#"{"mode": {"mode": "finite_point", "horizon": 1.0, "shift": 0.0}, "lipschitz": 0.01}"#;
        let v: Value = serde_json::from_str(&feasibility_curve_json(req).unwrap()).unwrap();
        assert_eq!(v["feasible"], true);
        assert!((v["best_value"].as_f64().unwrap() - 0.235).abs() < 0.01);
        assert_eq!(v["betas"].as_array().unwrap().len(), 200);
    }

    #[test]
    fn finite_demo_reports_mean_path() {
        let cfg = r#"{
          "grid": {"horizon": 1.0, "steps": 8, "delta": 1.0},
          "generator": {"name": "point_delay", "params": {"a": 0.25, "shift": -1.0}},
          "terminal": {"kind": "constant", "value": 1.0},
          "picard": {"tolerance": 1e-24}
        }"#;
        let v: Value = serde_json::from_str(&solve_finite_json(cfg).unwrap()).unwrap();
        assert!((v["y0"].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(v["path"]["mean_y"].as_array().unwrap().len(), 9);
    }

    #[test]
    fn ladder_demo_runs() {
        let cfg = r#"{
          "generator": {"name": "forced_decay", "params": {"a": 1.0, "kappa": 1.0}},
          "ladder": {"horizons": [2.0, 4.0], "dt": 0.125, "beta": 1.0, "epsilon": 0.02, "tol": 0.1},
          "picard": {"tolerance": 1e-12, "max_iterations": 500, "divergence_patience": 50}
        }"#;
        let v: Value = serde_json::from_str(&solve_ladder_json(cfg).unwrap()).unwrap();
        assert_eq!(v["deltas"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn errors_are_strings() {
        assert!(solve_finite_json("{").is_err());
        assert!(feasibility_curve_json(r#"{"mode": {"mode": "infinite", "r": 0.0}, "lipschitz": -1}"#).is_err());
    }
}
