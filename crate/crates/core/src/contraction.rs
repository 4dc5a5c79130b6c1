//! Feasibility conditions for the weighted-norm contraction and a
//! reproducible search over β (and ε in the infinite-horizon case).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{DelayDescriptor, DelayMeasure};

/// Lower end of the β scan.
pub const BETA_MIN: f64 = 1e-4;
/// Upper end of the β scan.
pub const BETA_MAX: f64 = 50.0;
/// Width at which golden-section refinement stops.
pub const REFINE_TOL: f64 = 1e-9;

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::Domain(format!("beta must be > 0, got {beta}")));
    }
    Ok(())
}

/// `C_β = max(9e^{βT}, 8T + 1/β)`.
pub fn c_beta(beta: f64, horizon: f64) -> Result<f64> {
    check_beta(beta)?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Domain(format!("horizon must be > 0, got {horizon}")));
    }
    Ok((9.0 * (beta * horizon).exp()).max(8.0 * horizon + 1.0 / beta))
}

/// `C_β·C_f·(1 + e^{−βs})·max(1, T)` for a point shift `s ≤ 0`.
pub fn finite_condition(beta: f64, c_f: f64, horizon: f64, shift: f64) -> Result<f64> {
    Ok(c_beta(beta, horizon)? * c_f * (1.0 + (-beta * shift).exp()) * horizon.max(1.0))
}

/// `2 + ∫ e^{−βs} μ(ds)`.
pub fn measure_factor(beta: f64, mu: &DelayMeasure) -> f64 {
    2.0 + mu.exp_moment(beta)
}

/// `C_β·C_f·(2 + ∫ e^{−βs} μ(ds))·max(1, T)`.
pub fn measure_condition(beta: f64, c_f: f64, horizon: f64, mu: &DelayMeasure) -> Result<f64> {
    Ok(c_beta(beta, horizon)? * c_f * measure_factor(beta, mu) * horizon.max(1.0))
}

/// `C_β·Ĉ_f·(2 + e^{βδ})·max(1, T)`.
pub fn special_condition(beta: f64, c_hat: f64, horizon: f64, delta: f64) -> Result<f64> {
    Ok(c_beta(beta, horizon)? * c_hat * (2.0 + (beta * delta).exp()) * horizon.max(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfiniteCheck {
    pub ok: bool,
    /// `β − 6C²/ε − 1/2`.
    pub slack_beta: f64,
    /// `1/2 − 6ε(2 + e^{−βr})`.
    pub slack_eps: f64,
}

/// The two strict inequalities required on an infinite horizon.
pub fn infinite_condition(beta: f64, epsilon: f64, c: f64, r: f64) -> Result<InfiniteCheck> {
    check_beta(beta)?;
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Domain(format!("epsilon must be > 0, got {epsilon}")));
    }
    let slack_beta = beta - 6.0 * c * c / epsilon - 0.5;
    let slack_eps = 0.5 - 6.0 * epsilon * (2.0 + (-beta * r).exp());
    Ok(InfiniteCheck {
        ok: slack_beta > 0.0 && slack_eps > 0.0,
        slack_beta,
        slack_eps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AnalysisMode {
    FinitePoint { horizon: f64, shift: f64 },
    FiniteMeasure { horizon: f64, measure: DelayMeasure },
    SpecialTwoPoint { horizon: f64, delta: f64 },
    Infinite { r: f64 },
}

impl AnalysisMode {
    /// The condition that matches a generator's delay structure.
    pub fn for_delay(delay: DelayDescriptor, horizon: f64) -> Self {
        match delay {
            DelayDescriptor::PointShift { shift } => AnalysisMode::FinitePoint { horizon, shift },
            DelayDescriptor::TwoPoint { delta } => AnalysisMode::SpecialTwoPoint { horizon, delta },
            DelayDescriptor::Measure(measure) => AnalysisMode::FiniteMeasure { horizon, measure },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnalysisMode::FinitePoint { .. } => "finite_point",
            AnalysisMode::FiniteMeasure { .. } => "finite_measure",
            AnalysisMode::SpecialTwoPoint { .. } => "special_two_point",
            AnalysisMode::Infinite { .. } => "infinite",
        }
    }

    /// Condition value at `beta`; `None` where it is not defined (infinite
    /// mode with `β ≤ 1/2`).
    pub fn value(&self, beta: f64, c: f64) -> Result<Option<f64>> {
        Ok(Some(match *self {
            AnalysisMode::FinitePoint { horizon, shift } => finite_condition(beta, c, horizon, shift)?,
            AnalysisMode::FiniteMeasure { horizon, measure } => measure_condition(beta, c, horizon, &measure)?,
            AnalysisMode::SpecialTwoPoint { horizon, delta } => special_condition(beta, c, horizon, delta)?,
            AnalysisMode::Infinite { r } => {
                check_beta(beta)?;
                if beta <= 0.5 {
                    return Ok(None);
                }
                72.0 * c * c * (2.0 + (-beta * r).exp()) / (beta - 0.5)
            }
        }))
    }
}

/// One scanned point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanPoint {
    pub beta: f64,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub mode: AnalysisMode,
    pub constant: f64,
    pub feasible: bool,
    /// Condition value at the best β. In infinite mode this is
    /// `72C²(2 + e^{−βr})/(β − 1/2)`, which is below one exactly when an
    /// admissible ε exists.
    pub value: Option<f64>,
    pub best_beta: f64,
    pub best_epsilon: Option<f64>,
    pub margin: Option<f64>,
    pub infinite_check: Option<InfiniteCheck>,
    pub trace: Vec<ScanPoint>,
}

fn key(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::INFINITY)
}

/// Log-grid scan of β over `[1e−4, 50]` followed by golden-section
/// refinement inside the bracket around the best grid point.
pub fn search_beta(mode: AnalysisMode, c: f64, budget: usize) -> Result<FeasibilityReport> {
    if budget < 10 {
        return Err(Error::param("budget", format!("must be >= 10, got {budget}")));
    }
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::param("lipschitz", format!("must be >= 0, got {c}")));
    }
    let (lo, hi) = (BETA_MIN.ln(), BETA_MAX.ln());
    let step = (hi - lo) / (budget - 1) as f64;
    let mut trace = Vec::with_capacity(budget);
    for i in 0..budget {
        let beta = if i == budget - 1 { BETA_MAX } else { (lo + step * i as f64).exp() };
        trace.push(ScanPoint {
            beta,
            value: mode.value(beta, c)?,
        });
    }
    // strict comparison keeps the smallest β among ties
    let mut best = 0;
    for (i, p) in trace.iter().enumerate() {
        if key(p.value) < key(trace[best].value) {
            best = i;
        }
    }
    let mut best_beta = trace[best].beta;
    let mut best_value = trace[best].value;

    if best_value.is_some() {
        let mut a = trace[best.saturating_sub(1)].beta;
        let mut b = trace[(best + 1).min(budget - 1)].beta;
        let f = |x: f64| mode.value(x, c).map(key);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let mut f1 = f(x1)?;
        let mut f2 = f(x2)?;
        while b - a > REFINE_TOL {
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = f(x1)?;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = f(x2)?;
            }
        }
        let x = 0.5 * (a + b);
        let fx = mode.value(x, c)?;
        if key(fx) < key(best_value) {
            best_beta = x;
            best_value = fx;
        }
    }

    let mut report = FeasibilityReport {
        mode,
        constant: c,
        feasible: false,
        value: best_value,
        best_beta,
        best_epsilon: None,
        margin: best_value.map(|v| 1.0 - v),
        infinite_check: None,
        trace,
    };
    match mode {
        AnalysisMode::Infinite { r } => {
            if best_beta > 0.5 {
                let low = 6.0 * c * c / (best_beta - 0.5);
                let high = 1.0 / (12.0 * (2.0 + (-best_beta * r).exp()));
                if low < high {
                    let eps = 0.5 * (low + high);
                    let check = infinite_condition(best_beta, eps, c, r)?;
                    report.best_epsilon = Some(eps);
                    report.feasible = check.ok;
                    report.infinite_check = Some(check);
                }
            }
        }
        _ => report.feasible = best_value.is_some_and(|v| v < 1.0),
    }
    Ok(report)
}
