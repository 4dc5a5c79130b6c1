//! Generators (drivers) `f(t, Y_t, Z_t, K_t, E[Y], E[Z], E[K], π(t))`.
//!
//! A [`GeneratorSpec`] bundles the evaluation callback with the metadata the
//! contraction analysis needs: a Lipschitz constant, the delay structure and
//! an integrability witness for `|f(t, 0, …, 0)|`.
//!
//! Lipschitz constants are declared in squared form for every slot,
//!
//! ```text
//! |f − f̃|² ≤ C (Σ_delayed |Δy|² + |Δz|² + Σ_j λ_j |Δk_j|²  +  |ΔE[Y]|² + |ΔE[Z]|² + Σ_j λ_j |ΔE[K_j]|²)
//! ```
//!
//! where the delayed slots are read from the windows through the delay
//! descriptor: one point for [`DelayDescriptor::PointShift`], two points for
//! [`DelayDescriptor::TwoPoint`], and the `μ`-weighted sum of squares over the
//! window for [`DelayDescriptor::Measure`].

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{JumpSpec, NodeRef, TimeGrid};
use crate::error::{Error, Result};
use crate::process::{offset_steps, SegmentKind, SegmentView};

/// Everything a generator may read at one node.
#[derive(Debug, Clone, Copy)]
pub struct DriverInput<'a> {
    pub t: f64,
    pub y: &'a SegmentView,
    pub z: &'a SegmentView,
    pub k: &'a SegmentView,
    pub mean_y: f64,
    pub mean_z: f64,
    pub mean_k: &'a [f64],
    pub pi: Option<f64>,
    /// Jump intensities `λ_j`, for integrals against `ν`.
    pub intensities: &'a [f64],
}

pub trait Driver: Send + Sync {
    fn eval(&self, input: &DriverInput<'_>) -> f64;
}

impl<F> Driver for F
where
    F: Fn(&DriverInput<'_>) -> f64 + Send + Sync,
{
    fn eval(&self, input: &DriverInput<'_>) -> f64 {
        self(input)
    }
}

/// Delay measure `μ` on `[−δ, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayMeasure {
    /// Lebesgue measure on `[−delta, 0]`.
    Lebesgue { delta: f64 },
    /// Unit point mass at `t0 ∈ [−δ, 0]`.
    Dirac { t0: f64 },
}

impl DelayMeasure {
    /// `μ([−δ, 0])`.
    pub fn total_mass(&self) -> f64 {
        match *self {
            DelayMeasure::Lebesgue { delta } => delta,
            DelayMeasure::Dirac { .. } => 1.0,
        }
    }

    /// `∫ e^{−βs} μ(ds)` in closed form.
    pub fn exp_moment(&self, beta: f64) -> f64 {
        match *self {
            DelayMeasure::Lebesgue { delta } => {
                if delta == 0.0 {
                    0.0
                } else if beta == 0.0 {
                    delta
                } else {
                    (beta * delta).exp_m1() / beta
                }
            }
            DelayMeasure::Dirac { t0 } => (-beta * t0).exp(),
        }
    }

    /// Weights over a window of `len` samples (oldest first); left-endpoint
    /// rule for Lebesgue.
    pub fn weights(&self, dt: f64, len: usize) -> Vec<f64> {
        let mut w = vec![0.0; len];
        match *self {
            DelayMeasure::Lebesgue { delta } => {
                let steps = offset_steps(-delta, dt);
                for back in 1..=steps {
                    w[len - 1 - back] = dt;
                }
            }
            DelayMeasure::Dirac { t0 } => {
                w[len - 1 - offset_steps(t0, dt)] = 1.0;
            }
        }
        w
    }

    fn reach(&self) -> f64 {
        match *self {
            DelayMeasure::Lebesgue { delta } => delta,
            DelayMeasure::Dirac { t0 } => -t0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayDescriptor {
    /// Dependence on the value at `t + shift`.
    PointShift { shift: f64 },
    /// Dependence on the values at `t` and `t − delta`.
    TwoPoint { delta: f64 },
    /// Dependence on `∫ X(t+s) μ(ds)`.
    Measure(DelayMeasure),
}

impl DelayDescriptor {
    /// How far back (in time) the generator looks.
    pub fn reach(&self) -> f64 {
        match *self {
            DelayDescriptor::PointShift { shift } => -shift,
            DelayDescriptor::TwoPoint { delta } => delta,
            DelayDescriptor::Measure(m) => m.reach(),
        }
    }

    /// Checks the descriptor against a grid: aligned offsets inside the
    /// grid's delay window.
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        let reach = self.reach();
        if !(reach.is_finite() && reach >= 0.0) {
            return Err(Error::param("delay", format!("offset must be <= 0, got {}", -reach)));
        }
        let steps = grid.steps_for("delay", reach)?;
        if steps > grid.delay_steps() {
            return Err(Error::param(
                "delay",
                format!(
                    "generator looks back {reach} but the grid window is only {}",
                    grid.delay()
                ),
            ));
        }
        Ok(())
    }

    /// Delayed-slot part of the squared Lipschitz bound for windows of
    /// differences.
    fn slot_sum(&self, dy: &SegmentView, dz: &SegmentView, dk: &SegmentView, lambda: &[f64]) -> f64 {
        let at = |back: usize| {
            dy.scalar_back(back).powi(2)
                + dz.scalar_back(back).powi(2)
                + dk.back(back).iter().zip(lambda).map(|(v, l)| l * v * v).sum::<f64>()
        };
        match *self {
            DelayDescriptor::PointShift { shift } => at(offset_steps(shift, dy.dt())),
            DelayDescriptor::TwoPoint { delta } => at(0) + at(offset_steps(-delta, dy.dt())),
            DelayDescriptor::Measure(m) => {
                let w = m.weights(dy.dt(), dy.len());
                w.iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(i, w)| w * at(dy.len() - 1 - i))
                    .sum()
            }
        }
    }
}

/// Known behaviour of `|f(t, 0, …, 0)|`.
#[derive(Debug, Clone, PartialEq)]
pub enum Witness {
    Zero,
    /// `scale · e^{−rate·t}`.
    ExpDecay { scale: f64, rate: f64 },
    /// Piecewise constant on the grid cells `[i·dt, (i+1)·dt)`.
    Path { values: Arc<[f64]>, dt: f64 },
}

impl Witness {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Witness::Zero => 0.0,
            Witness::ExpDecay { scale, rate } => scale * (-rate * t).exp(),
            Witness::Path { values, dt } => {
                let i = (t / dt + 1e-9).floor() as usize;
                values.get(i).map_or(0.0, |v| v.abs())
            }
        }
    }

    /// `∫_from^to e^{βt} w(t)² dt`, `to = None` meaning infinity. `None` is
    /// returned when the integral diverges or the witness is not defined on
    /// the whole range.
    pub fn weighted_integral(&self, beta: f64, from: f64, to: Option<f64>) -> Option<f64> {
        match self {
            Witness::Zero => Some(0.0),
            Witness::ExpDecay { scale, rate } => {
                let m2 = scale * scale;
                if m2 == 0.0 {
                    return Some(0.0);
                }
                let r = beta - 2.0 * rate;
                match to {
                    None if r < 0.0 => Some(m2 * (r * from).exp() / -r),
                    None => None,
                    Some(b) if r == 0.0 => Some(m2 * (b - from)),
                    Some(b) => Some(m2 * ((r * b).exp() - (r * from).exp()) / r),
                }
            }
            Witness::Path { values, dt } => {
                let end = values.len() as f64 * dt;
                let to = match to {
                    Some(b) if b <= end + 1e-12 => b,
                    _ => return None,
                };
                let mut total = 0.0;
                for (i, v) in values.iter().enumerate() {
                    let a = (i as f64 * dt).max(from);
                    let b = ((i + 1) as f64 * dt).min(to);
                    if b <= a {
                        continue;
                    }
                    let exp_int = if beta == 0.0 {
                        b - a
                    } else {
                        ((beta * b).exp() - (beta * a).exp()) / beta
                    };
                    total += v * v * exp_int;
                }
                Some(total)
            }
        }
    }
}

/// A generator together with its declared metadata.
#[derive(Clone)]
pub struct GeneratorSpec {
    name: String,
    driver: Arc<dyn Driver>,
    lipschitz: f64,
    delay: DelayDescriptor,
    witness: Witness,
    mean_only: bool,
    pi_path: Option<Arc<[f64]>>,
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratorSpec")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .field("delay", &self.delay)
            .field("witness", &self.witness)
            .field("mean_only", &self.mean_only)
            .finish_non_exhaustive()
    }
}

impl GeneratorSpec {
    pub fn new(
        name: impl Into<String>,
        driver: impl Driver + 'static,
        lipschitz: f64,
        delay: DelayDescriptor,
        witness: Witness,
    ) -> Result<Self> {
        if !(lipschitz.is_finite() && lipschitz >= 0.0) {
            return Err(Error::param("lipschitz", format!("must be >= 0, got {lipschitz}")));
        }
        Ok(Self {
            name: name.into(),
            driver: Arc::new(driver),
            lipschitz,
            delay,
            witness,
            mean_only: false,
            pi_path: None,
        })
    }

    /// Marks the generator as reading `(Y, Z, K)` only through their means.
    pub fn mean_only(mut self, yes: bool) -> Self {
        self.mean_only = yes;
        self
    }

    /// Attaches an exogenous path `π(t_i)`, one value per grid step.
    pub fn with_pi(mut self, path: Vec<f64>) -> Self {
        self.pi_path = Some(path.into());
        self
    }

    /// Same generator with a different declared constant.
    pub fn with_lipschitz(mut self, lipschitz: f64) -> Self {
        self.lipschitz = lipschitz;
        self
    }

    /// Wraps the driver so that the mean-field inputs are shifted by fixed
    /// offsets. Used when the martingale part of the solution is removed.
    pub fn with_mean_offsets(&self, dz: f64, dk: Vec<f64>) -> Self {
        let inner = self.driver.clone();
        let driver = move |x: &DriverInput<'_>| {
            let mk: Vec<f64> = if x.mean_k.len() == dk.len() {
                x.mean_k.iter().zip(&dk).map(|(a, b)| a + b).collect()
            } else {
                dk.clone()
            };
            inner.eval(&DriverInput {
                mean_z: x.mean_z + dz,
                mean_k: &mk,
                ..*x
            })
        };
        Self {
            driver: Arc::new(driver),
            ..self.clone()
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Declared constant in squared form.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn delay(&self) -> DelayDescriptor {
        self.delay
    }

    pub fn witness(&self) -> &Witness {
        &self.witness
    }

    pub fn is_mean_only(&self) -> bool {
        self.mean_only
    }

    pub fn pi_path(&self) -> Option<&[f64]> {
        self.pi_path.as_deref()
    }

    pub fn pi_at(&self, layer: usize) -> Option<f64> {
        self.pi_path.as_ref().and_then(|p| p.get(layer).copied())
    }

    /// Checks the generator against a grid: delay alignment and π coverage.
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        self.delay.validate(grid)?;
        if let Some(p) = &self.pi_path {
            if p.len() < grid.steps() {
                return Err(Error::param(
                    "pi",
                    format!("path has {} values, grid needs {}", p.len(), grid.steps()),
                ));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, input: &DriverInput<'_>) -> Result<f64> {
        self.evaluate_at(input, None)
    }

    pub(crate) fn evaluate_at(&self, input: &DriverInput<'_>, node: Option<NodeRef>) -> Result<f64> {
        let v = self.driver.eval(input);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::GeneratorEval {
                name: self.name.clone(),
                value: v,
                node,
                inputs: format!(
                    "t={} y={:?} z={:?} k={:?} E[Y]={} E[Z]={} E[K]={:?} pi={:?}",
                    input.t,
                    input.y.samples(),
                    input.z.samples(),
                    input.k.samples(),
                    input.mean_y,
                    input.mean_z,
                    input.mean_k,
                    input.pi
                ),
            })
        }
    }

    /// Largest gap between `|f(t_i, 0, …, 0)|` and the witness on the grid.
    pub fn witness_gap(&self, grid: &TimeGrid, jumps: &JumpSpec) -> Result<f64> {
        let len = grid.delay_steps() + 1;
        let m = jumps.len();
        let dt = grid.dt();
        let y = SegmentView::zeros(SegmentKind::Y, dt, 1, len);
        let z = SegmentView::zeros(SegmentKind::Z, dt, 1, len);
        let k = SegmentView::zeros(SegmentKind::K, dt, m, len);
        let mk = vec![0.0; m];
        let mut gap: f64 = 0.0;
        for i in 0..grid.steps() {
            let t = grid.time(i);
            let v = self.evaluate(&DriverInput {
                t,
                y: &y,
                z: &z,
                k: &k,
                mean_y: 0.0,
                mean_z: 0.0,
                mean_k: &mk,
                pi: self.pi_at(i),
                intensities: jumps.intensities(),
            })?;
            gap = gap.max((v.abs() - self.witness.value(t)).abs());
        }
        Ok(gap)
    }
}

/// Delay structure of the general linear builtin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearDelay {
    Point { shift: f64 },
    Lebesgue { delta: f64 },
    Dirac { t0: f64 },
}

impl Default for LinearDelay {
    fn default() -> Self {
        LinearDelay::Point { shift: 0.0 }
    }
}

/// Coefficients of `f = y·Y⟨t⟩ + z·Z⟨t⟩ + k·Σλ_j K_j⟨t⟩ + mean_y·E[Y] +
/// mean_z·E[Z] + mean_k·Σλ_j E[K_j] + intercept`, where `X⟨t⟩` is the
/// delayed slot (point value or `μ`-integral). Omitted coefficients are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearCoefficients {
    pub y: f64,
    pub z: f64,
    pub k: f64,
    pub mean_y: f64,
    pub mean_z: f64,
    pub mean_k: f64,
    pub intercept: f64,
    pub delay: LinearDelay,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Builtin {
    Zero,
    AffineMeanfield { a: f64, b: f64 },
    PointDelay { a: f64, shift: f64 },
    TwoPoint { a1: f64, a2: f64, delta: f64 },
    /// `f = π(t) − c·Y(t)`; `pi` holds one value per grid step of size `dt`.
    RecursiveUtility { c: f64, pi: Vec<f64>, dt: f64 },
    /// `f = −a·Y(t) + e^{−κt}`.
    ForcedDecay { a: f64, kappa: f64 },
    Linear(LinearCoefficients),
}

impl Builtin {
    pub const NAMES: [&'static str; 7] = [
        "zero",
        "affine_meanfield",
        "point_delay",
        "two_point",
        "recursive_utility",
        "forced_decay",
        "linear",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Builtin::Zero => "zero",
            Builtin::AffineMeanfield { .. } => "affine_meanfield",
            Builtin::PointDelay { .. } => "point_delay",
            Builtin::TwoPoint { .. } => "two_point",
            Builtin::RecursiveUtility { .. } => "recursive_utility",
            Builtin::ForcedDecay { .. } => "forced_decay",
            Builtin::Linear(_) => "linear",
        }
    }
}

fn finite(field: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::param(field, format!("must be finite, got {v}")))
    }
}

fn nonpositive(field: &'static str, v: f64) -> Result<f64> {
    if finite(field, v)? <= 0.0 {
        Ok(v)
    } else {
        Err(Error::param(field, format!("must be <= 0, got {v}")))
    }
}

fn nonnegative(field: &'static str, v: f64) -> Result<f64> {
    if finite(field, v)? >= 0.0 {
        Ok(v)
    } else {
        Err(Error::param(field, format!("must be >= 0, got {v}")))
    }
}

/// Builds a library generator with exact squared-form constants.
pub fn builtin(kind: &Builtin, jumps: &JumpSpec) -> Result<GeneratorSpec> {
    let here = DelayDescriptor::PointShift { shift: 0.0 };
    match kind.clone() {
        Builtin::Zero => {
            Ok(GeneratorSpec::new("zero", |_: &DriverInput<'_>| 0.0, 0.0, here, Witness::Zero)?.mean_only(true))
        }
        Builtin::AffineMeanfield { a, b } => {
            let (a, b) = (finite("a", a)?, finite("b", b)?);
            Ok(GeneratorSpec::new(
                "affine_meanfield",
                move |x: &DriverInput<'_>| a * x.mean_y + b,
                a * a,
                here,
                Witness::ExpDecay {
                    scale: b.abs(),
                    rate: 0.0,
                },
            )?
            .mean_only(true))
        }
        Builtin::PointDelay { a, shift } => {
            let a = finite("a", a)?;
            let shift = nonpositive("shift", shift)?;
            GeneratorSpec::new(
                "point_delay",
                move |x: &DriverInput<'_>| a * x.y.at_offset(shift),
                a * a,
                DelayDescriptor::PointShift { shift },
                Witness::Zero,
            )
        }
        Builtin::TwoPoint { a1, a2, delta } => {
            let (a1, a2) = (finite("a1", a1)?, finite("a2", a2)?);
            let delta = nonnegative("delta", delta)?;
            GeneratorSpec::new(
                "two_point",
                move |x: &DriverInput<'_>| a1 * x.y.at_offset(0.0) + a2 * x.y.at_offset(-delta),
                a1 * a1 + a2 * a2,
                DelayDescriptor::TwoPoint { delta },
                Witness::Zero,
            )
        }
        Builtin::RecursiveUtility { c, pi, dt } => {
            let c = finite("c", c)?;
            if let Some(v) = pi.iter().find(|v| !v.is_finite()) {
                return Err(Error::param("pi", format!("must be finite, got {v}")));
            }
            if pi.is_empty() {
                return Err(Error::param("pi", "consumption path is empty"));
            }
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::param("dt", format!("must be > 0, got {dt}")));
            }
            let values: Arc<[f64]> = pi.iter().map(|v| v.abs()).collect();
            Ok(GeneratorSpec::new(
                "recursive_utility",
                move |x: &DriverInput<'_>| x.pi.unwrap_or(f64::NAN) - c * x.y.at_offset(0.0),
                c * c,
                here,
                Witness::Path { values, dt },
            )?
            .with_pi(pi))
        }
        Builtin::ForcedDecay { a, kappa } => {
            let a = finite("a", a)?;
            let kappa = finite("kappa", kappa)?;
            if a <= 0.0 || kappa <= 0.0 {
                return Err(Error::param("forced_decay", format!("a and kappa must be > 0, got a={a}, kappa={kappa}")));
            }
            GeneratorSpec::new(
                "forced_decay",
                move |x: &DriverInput<'_>| -a * x.y.at_offset(0.0) + (-kappa * x.t).exp(),
                a * a,
                here,
                Witness::ExpDecay { scale: 1.0, rate: kappa },
            )
        }
        Builtin::Linear(c) => linear(c, jumps),
    }
}

fn linear(c: LinearCoefficients, jumps: &JumpSpec) -> Result<GeneratorSpec> {
    for (field, v) in [
        ("y", c.y),
        ("z", c.z),
        ("k", c.k),
        ("mean_y", c.mean_y),
        ("mean_z", c.mean_z),
        ("mean_k", c.mean_k),
        ("intercept", c.intercept),
    ] {
        finite(field, v)?;
    }
    let (delay, mass) = match c.delay {
        LinearDelay::Point { shift } => (DelayDescriptor::PointShift { shift: nonpositive("shift", shift)? }, 1.0),
        LinearDelay::Lebesgue { delta } => {
            let m = DelayMeasure::Lebesgue { delta: nonnegative("delta", delta)? };
            (DelayDescriptor::Measure(m), m.total_mass())
        }
        LinearDelay::Dirac { t0 } => {
            let m = DelayMeasure::Dirac { t0: nonpositive("t0", t0)? };
            (DelayDescriptor::Measure(m), m.total_mass())
        }
    };
    let total = jumps.total_intensity();
    let lipschitz = mass * (c.y * c.y + c.z * c.z + total * c.k * c.k)
        + c.mean_y * c.mean_y
        + c.mean_z * c.mean_z
        + total * c.mean_k * c.mean_k;
    let mean_only = c.y == 0.0 && c.z == 0.0 && c.k == 0.0;

    let driver = move |x: &DriverInput<'_>| {
        let nu = |v: &[f64]| v.iter().zip(x.intensities).map(|(k, l)| k * l).sum::<f64>();
        let (ys, zs, ks) = match delay {
            DelayDescriptor::PointShift { shift } => {
                (x.y.at_offset(shift), x.z.at_offset(shift), nu(x.k.vec_at_offset(shift)))
            }
            DelayDescriptor::Measure(m) => {
                let w = m.weights(x.y.dt(), x.y.len());
                let mut acc = (0.0, 0.0, 0.0);
                for (i, w) in w.iter().enumerate().filter(|(_, w)| **w != 0.0) {
                    acc.0 += w * x.y.sample(i)[0];
                    acc.1 += w * x.z.sample(i)[0];
                    acc.2 += w * nu(x.k.sample(i));
                }
                acc
            }
            DelayDescriptor::TwoPoint { .. } => unreachable!("linear builtin has no two-point form"),
        };
        c.y * ys + c.z * zs + c.k * ks + c.mean_y * x.mean_y + c.mean_z * x.mean_z + c.mean_k * nu(x.mean_k)
            + c.intercept
    };
    Ok(GeneratorSpec::new(
        "linear",
        driver,
        lipschitz,
        delay,
        Witness::ExpDecay {
            scale: c.intercept.abs(),
            rate: 0.0,
        },
    )?
    .mean_only(mean_only))
}

/// Outcome of an empirical Lipschitz probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub generator: String,
    pub declared: f64,
    pub trials: usize,
    pub max_ratio: f64,
    pub pass: bool,
    /// Always `"squared"`: every slot enters the bound squared.
    pub form: &'static str,
}

/// Draws random input pairs and compares `|f − f̃|²` against the declared
/// squared-form bound. Passes iff every ratio is at most `1 + 1e−9`.
pub fn probe_lipschitz(
    gen: &GeneratorSpec,
    grid: &TimeGrid,
    jumps: &JumpSpec,
    trials: usize,
    scale: f64,
    seed: u64,
) -> Result<ProbeReport> {
    gen.validate(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = grid.delay_steps() + 1;
    let m = jumps.len();
    let dt = grid.dt();
    let lambda = jumps.intensities();
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-scale..=scale)).collect()
    };
    let mut max_ratio: f64 = 0.0;
    for _ in 0..trials.max(1) {
        let layer = rng.gen_range(0..grid.steps());
        let t = grid.time(layer);
        let pi = gen.pi_at(layer);
        let side = |rng: &mut ChaCha8Rng| {
            let y = SegmentView::with_len(SegmentKind::Y, dt, 1, len, draw(len, rng));
            let z = SegmentView::with_len(SegmentKind::Z, dt, 1, len, draw(len, rng));
            let k = SegmentView::with_len(SegmentKind::K, dt, m, len, draw(len * m, rng));
            let means = draw(2 + m, rng);
            (y, z, k, means)
        };
        let a = side(&mut rng);
        let b = side(&mut rng);
        let eval = |s: &(SegmentView, SegmentView, SegmentView, Vec<f64>)| {
            gen.evaluate(&DriverInput {
                t,
                y: &s.0,
                z: &s.1,
                k: &s.2,
                mean_y: s.3[0],
                mean_z: s.3[1],
                mean_k: &s.3[2..],
                pi,
                intensities: lambda,
            })
        };
        let df = eval(&a)? - eval(&b)?;
        let diff = |u: &SegmentView, v: &SegmentView| {
            let d = u.samples().iter().zip(v.samples()).map(|(p, q)| p - q).collect();
            SegmentView::with_len(u.kind(), dt, u.width(), len, d)
        };
        let (dy, dz, dk) = (diff(&a.0, &b.0), diff(&a.1, &b.1), diff(&a.2, &b.2));
        let mean_part = (a.3[0] - b.3[0]).powi(2)
            + (a.3[1] - b.3[1]).powi(2)
            + (0..m).map(|j| lambda[j] * (a.3[2 + j] - b.3[2 + j]).powi(2)).sum::<f64>();
        let bound = gen.lipschitz() * (gen.delay().slot_sum(&dy, &dz, &dk, lambda) + mean_part);
        let lhs = df * df;
        let ratio = if lhs == 0.0 {
            0.0
        } else if bound == 0.0 {
            f64::INFINITY
        } else {
            lhs / bound
        };
        max_ratio = max_ratio.max(ratio);
    }
    Ok(ProbeReport {
        generator: gen.name().to_string(),
        declared: gen.lipschitz(),
        trials: trials.max(1),
        max_ratio,
        pass: max_ratio <= 1.0 + 1e-9,
        form: "squared",
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(kind: SegmentKind, samples: Vec<f64>) -> SegmentView {
        SegmentView::new(kind, 0.25, 1, samples)
    }

    fn input<'a>(y: &'a SegmentView, z: &'a SegmentView, k: &'a SegmentView, mean_y: f64) -> DriverInput<'a> {
        DriverInput {
            t: 0.5,
            y,
            z,
            k,
            mean_y,
            mean_z: 0.0,
            mean_k: &[],
            pi: None,
            intensities: &[],
        }
    }

    #[test]
    fn evaluate_examples() {
        let j = JumpSpec::none();
        let y = window(SegmentKind::Y, vec![4.0 / 3.0, 7.0, 9.0]);
        let z = window(SegmentKind::Z, vec![0.0; 3]);
        let k = SegmentView::zeros(SegmentKind::K, 0.25, 0, 3);

        let zero = builtin(&Builtin::Zero, &j).unwrap();
        assert_eq!(zero.evaluate(&input(&y, &z, &k, 5.0)).unwrap(), 0.0);

        let aff = builtin(&Builtin::AffineMeanfield { a: 0.5, b: 0.0 }, &j).unwrap();
        assert_eq!(aff.evaluate(&input(&y, &z, &k, 2.0)).unwrap(), 1.0);

        let pd = builtin(&Builtin::PointDelay { a: 0.25, shift: -0.5 }, &j).unwrap();
        let v = pd.evaluate(&input(&y, &z, &k, 0.0)).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let j = JumpSpec::none();
        let g = GeneratorSpec::new(
            "bad",
            |_: &DriverInput<'_>| f64::NAN,
            0.0,
            DelayDescriptor::PointShift { shift: 0.0 },
            Witness::Zero,
        )
        .unwrap();
        let y = window(SegmentKind::Y, vec![1.0]);
        let z = window(SegmentKind::Z, vec![0.0]);
        let k = SegmentView::zeros(SegmentKind::K, 0.25, j.len(), 1);
        let err = g.evaluate(&input(&y, &z, &k, 0.0)).unwrap_err();
        assert!(err.to_string().contains("bad"));
        assert!(err.to_string().contains("E[Y]=0"));
    }

    #[test]
    fn builtin_constants() {
        let j = JumpSpec::none();
        assert_eq!(builtin(&Builtin::Zero, &j).unwrap().lipschitz(), 0.0);
        assert_eq!(builtin(&Builtin::AffineMeanfield { a: -0.5, b: 1.0 }, &j).unwrap().lipschitz(), 0.25);
        let tp = builtin(&Builtin::TwoPoint { a1: 0.1, a2: 0.1, delta: 0.5 }, &j).unwrap();
        assert!((tp.lipschitz() - 0.02).abs() < 1e-16);
        let fd = builtin(&Builtin::ForcedDecay { a: 1.0, kappa: 1.0 }, &j).unwrap();
        assert_eq!(fd.lipschitz(), 1.0);
        assert!(builtin(&Builtin::ForcedDecay { a: 0.0, kappa: 1.0 }, &j).is_err());
        assert!(builtin(&Builtin::PointDelay { a: 1.0, shift: 0.5 }, &j).is_err());
    }

    #[test]
    fn forced_decay_witness_integrability() {
        let fd = builtin(&Builtin::ForcedDecay { a: 1.0, kappa: 1.0 }, &JumpSpec::none()).unwrap();
        let w = fd.witness();
        assert_eq!(w.value(1.0), (-1.0f64).exp());
        assert!((w.weighted_integral(1.0, 0.0, None).unwrap() - 1.0).abs() < 1e-15);
        assert!((w.weighted_integral(1.5, 0.0, None).unwrap() - 2.0).abs() < 1e-15);
        assert!(w.weighted_integral(2.0, 0.0, None).is_none());
        assert!(w.weighted_integral(2.5, 0.0, None).is_none());
        let tail = w.weighted_integral(1.0, 4.0, None).unwrap();
        assert!((tail - (-4.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn witness_matches_generator_at_zero() {
        let grid = TimeGrid::new(2.0, 8, 0.5, 0.0).unwrap();
        let j = JumpSpec::single(1.0, 0.3).unwrap();
        let cases = [
            Builtin::Zero,
            Builtin::AffineMeanfield { a: 0.3, b: -0.7 },
            Builtin::ForcedDecay { a: 1.0, kappa: 0.5 },
            Builtin::TwoPoint { a1: 0.2, a2: 0.1, delta: 0.5 },
        ];
        for c in &cases {
            let g = builtin(c, &j).unwrap();
            assert!(g.witness_gap(&grid, &j).unwrap() < 1e-9, "{}", g.name());
        }
    }

    #[test]
    fn probe_examples() {
        let grid = TimeGrid::new(1.0, 4, 0.5, 0.0).unwrap();
        let j = JumpSpec::none();
        let zero = builtin(&Builtin::Zero, &j).unwrap();
        let r = probe_lipschitz(&zero, &grid, &j, 100, 10.0, 1).unwrap();
        assert_eq!(r.max_ratio, 0.0);
        assert!(r.pass);

        let aff = builtin(&Builtin::AffineMeanfield { a: 0.5, b: 1.0 }, &j).unwrap();
        assert_eq!(aff.lipschitz(), 0.25);
        assert!(probe_lipschitz(&aff, &grid, &j, 1000, 10.0, 2).unwrap().pass);

        let weak = aff.clone().with_lipschitz(0.1);
        let r = probe_lipschitz(&weak, &grid, &j, 1000, 10.0, 3).unwrap();
        assert!(!r.pass);
        // only the mean slot moves f, so ratios approach 0.25 / 0.1 from below
        assert!(r.max_ratio > 2.0 && r.max_ratio <= 2.5, "{}", r.max_ratio);
    }

    #[test]
    fn measure_weights() {
        let leb = DelayMeasure::Lebesgue { delta: 0.5 };
        assert_eq!(leb.weights(0.25, 3), vec![0.25, 0.25, 0.0]);
        assert_eq!(DelayMeasure::Dirac { t0: -0.25 }.weights(0.25, 3), vec![0.0, 1.0, 0.0]);
        assert!((leb.exp_moment(1.0) - 0.5f64.exp_m1()).abs() < 1e-15);
        assert_eq!(DelayMeasure::Lebesgue { delta: 0.0 }.exp_moment(1.0), 0.0);
        assert_eq!(DelayMeasure::Dirac { t0: 0.0 }.exp_moment(1.0), 1.0);
    }
}
