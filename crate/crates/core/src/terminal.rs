//! Terminal values `ξ` as functions of the terminal state `(B(T), N(T))`.

use std::fmt;
use std::sync::Arc;

use crate::basis::{JumpSpec, ScenarioTree, TerminalState, TimeGrid, TreeKind};
use crate::error::{Error, Result};

/// Largest number of terminal outcomes enumerated when computing exact
/// moments on the recombined law.
pub const MAX_MOMENT_OUTCOMES: usize = 20_000_000;

#[derive(Clone)]
pub enum Terminal {
    Constant(f64),
    /// `constant + brownian·B(T) + Σ_j jumps[j]·N_j(T)` with raw jump counts.
    Affine {
        constant: f64,
        brownian: f64,
        jumps: Vec<f64>,
    },
    /// `max(B(T) − strike, 0)`.
    BrownianCall { strike: f64 },
    Function(Arc<dyn Fn(&TerminalState) -> f64 + Send + Sync>),
}

impl fmt::Debug for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            Terminal::Affine {
                constant,
                brownian,
                jumps,
            } => f
                .debug_struct("Affine")
                .field("constant", constant)
                .field("brownian", brownian)
                .field("jumps", jumps)
                .finish(),
            Terminal::BrownianCall { strike } => f.debug_struct("BrownianCall").field("strike", strike).finish(),
            Terminal::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// `E[ξ]`, `E[ξ·B(T)]` and `E[ξ·Ñ_j(T)]` under the tree law.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalMoments {
    pub mean: f64,
    pub brownian: f64,
    pub jumps: Vec<f64>,
}

impl Terminal {
    pub fn function(f: impl Fn(&TerminalState) -> f64 + Send + Sync + 'static) -> Self {
        Terminal::Function(Arc::new(f))
    }

    pub fn eval(&self, s: &TerminalState) -> f64 {
        match self {
            Terminal::Constant(c) => *c,
            Terminal::Affine {
                constant,
                brownian,
                jumps,
            } => {
                constant
                    + brownian * s.brownian
                    + jumps
                        .iter()
                        .zip(&s.jump_counts)
                        .map(|(a, n)| a * *n as f64)
                        .sum::<f64>()
            }
            Terminal::BrownianCall { strike } => (s.brownian - strike).max(0.0),
            Terminal::Function(f) => f(s),
        }
    }

    /// True when `ξ` does not depend on the path.
    pub fn is_deterministic(&self) -> bool {
        match self {
            Terminal::Constant(_) => true,
            Terminal::Affine { brownian, jumps, .. } => *brownian == 0.0 && jumps.iter().all(|a| *a == 0.0),
            _ => false,
        }
    }

    pub fn validate(&self, jumps: &JumpSpec) -> Result<()> {
        let ok = match self {
            Terminal::Constant(c) => c.is_finite(),
            Terminal::Affine {
                constant,
                brownian,
                jumps: a,
            } => {
                if a.len() > jumps.len() {
                    return Err(Error::param(
                        "terminal",
                        format!("{} jump coefficients for {} marks", a.len(), jumps.len()),
                    ));
                }
                constant.is_finite() && brownian.is_finite() && a.iter().all(|v| v.is_finite())
            }
            Terminal::BrownianCall { strike } => strike.is_finite(),
            Terminal::Function(_) => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param("terminal", "coefficients must be finite"))
        }
    }

    /// `ξ` at every leaf of `tree`, in leaf index order.
    pub fn values_on(&self, tree: &ScenarioTree) -> Result<Vec<f64>> {
        self.validate(tree.jumps())?;
        if tree.kind() == TreeKind::Collapsed {
            if !self.is_deterministic() {
                return Err(Error::NotReducible("random terminal value on a collapsed tree".into()));
            }
            let s = TerminalState {
                brownian: 0.0,
                jump_counts: vec![0; tree.jumps().len()],
            };
            return Ok(vec![self.eval(&s)]);
        }
        Ok(tree.leaf_states().iter().map(|s| self.eval(s)).collect())
    }

    /// Exact moments under the tree law on `grid`, by enumerating the
    /// number of up-moves and the multinomial jump counts.
    pub fn moments(&self, grid: &TimeGrid, jumps: &JumpSpec) -> Result<TerminalMoments> {
        self.validate(jumps)?;
        let n = grid.steps();
        let m = jumps.len();
        let dt = grid.dt();
        let p: Vec<f64> = jumps.intensities().iter().map(|l| l * dt).collect();
        let p_none = 1.0 - p.iter().sum::<f64>();
        if p_none <= 0.0 {
            return Err(Error::InvalidThinning(1.0 - p_none));
        }
        let active: Vec<usize> = (0..m).filter(|&j| p[j] > 0.0).collect();
        let outcomes = count_compositions(n, active.len()).and_then(|c| c.checked_mul(n + 1));
        match outcomes {
            Some(c) if c <= MAX_MOMENT_OUTCOMES => {}
            _ => {
                return Err(Error::NotReducible(format!(
                    "terminal law has too many outcomes ({n} steps, {} active marks)",
                    active.len()
                )))
            }
        }

        let lf = ln_factorials(n);
        let sqrt_dt = dt.sqrt();
        let ln_half_n = n as f64 * 0.5f64.ln();
        let brownian: Vec<(f64, f64)> = (0..=n)
            .map(|u| {
                let w = (lf[n] - lf[u] - lf[n - u] + ln_half_n).exp();
                (w, (2.0 * u as f64 - n as f64) * sqrt_dt)
            })
            .collect();

        let mut out = TerminalMoments {
            mean: 0.0,
            brownian: 0.0,
            jumps: vec![0.0; m],
        };
        let mut counts = vec![0u32; m];
        let mut stack = vec![0usize; active.len()];
        loop {
            let total: usize = stack.iter().sum();
            if total <= n {
                let mut lw = lf[n] - lf[n - total] + (n - total) as f64 * p_none.ln();
                for (slot, &j) in active.iter().enumerate() {
                    let c = stack[slot];
                    counts[j] = c as u32;
                    lw += -lf[c] + c as f64 * p[j].ln();
                }
                let wj = lw.exp();
                let comp: Vec<f64> = (0..m).map(|j| counts[j] as f64 - n as f64 * p[j]).collect();
                for &(wb, b) in &brownian {
                    let s = TerminalState {
                        brownian: b,
                        jump_counts: counts.clone(),
                    };
                    let w = wj * wb;
                    let x = self.eval(&s);
                    out.mean += w * x;
                    out.brownian += w * x * b;
                    for j in 0..m {
                        out.jumps[j] += w * x * comp[j];
                    }
                }
            }
            if !advance(&mut stack, n) {
                break;
            }
        }
        Ok(out)
    }
}

/// Next tuple of nonnegative counts with sum at most `n`, odometer order.
fn advance(stack: &mut [usize], n: usize) -> bool {
    for i in (0..stack.len()).rev() {
        let rest: usize = stack[..i].iter().sum();
        if rest + stack[i] < n {
            stack[i] += 1;
            for v in &mut stack[i + 1..] {
                *v = 0;
            }
            return true;
        }
    }
    false
}

/// Number of `k`-tuples of nonnegative integers with sum at most `n`.
fn count_compositions(n: usize, k: usize) -> Option<usize> {
    // C(n + k, k)
    let mut c: u128 = 1;
    for i in 1..=k as u128 {
        c = c * (n as u128 + i) / i;
        if c > usize::MAX as u128 {
            return None;
        }
    }
    Some(c as usize)
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}
