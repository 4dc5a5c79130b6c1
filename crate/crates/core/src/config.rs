//! Run configuration: strict JSON parsing with JSON-pointer error paths.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::basis::{JumpSpec, TimeGrid, DEFAULT_NODE_BUDGET};
use crate::contraction::AnalysisMode;
use crate::error::{Error, Result};
use crate::generator::{builtin, Builtin, DelayMeasure, GeneratorSpec, LinearCoefficients};
use crate::infinite::LadderConfig;
use crate::picard::{PicardConfig, SolveMode};
use crate::terminal::Terminal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub horizon: Option<f64>,
    pub steps: Option<usize>,
    pub dt: Option<f64>,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSection {
    pub marks: Vec<f64>,
    pub intensities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub name: String,
    #[serde(default = "empty_object")]
    pub params: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalSection {
    Constant {
        value: f64,
    },
    Affine {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        brownian: f64,
        #[serde(default)]
        jumps: Vec<f64>,
    },
    BrownianCall {
        strike: f64,
    },
}

impl TerminalSection {
    pub fn to_terminal(&self) -> Terminal {
        match self {
            TerminalSection::Constant { value } => Terminal::Constant(*value),
            TerminalSection::Affine {
                constant,
                brownian,
                jumps,
            } => Terminal::Affine {
                constant: *constant,
                brownian: *brownian,
                jumps: jumps.clone(),
            },
            TerminalSection::BrownianCall { strike } => Terminal::BrownianCall { strike: *strike },
        }
    }
}

fn default_budget() -> usize {
    DEFAULT_NODE_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSection {
    #[serde(default = "PicardSection::tolerance")]
    pub tolerance: f64,
    #[serde(default = "PicardSection::max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "PicardSection::patience")]
    pub divergence_patience: usize,
    #[serde(default = "PicardSection::analysis_budget")]
    pub analysis_budget: usize,
    #[serde(default)]
    pub mode: SolveMode,
    #[serde(default = "default_budget")]
    pub node_budget: usize,
}

impl PicardSection {
    fn tolerance() -> f64 {
        PicardConfig::default().tolerance
    }
    fn max_iterations() -> usize {
        PicardConfig::default().max_iterations
    }
    fn patience() -> usize {
        PicardConfig::default().divergence_patience
    }
    fn analysis_budget() -> usize {
        PicardConfig::default().analysis_budget
    }

    pub fn picard(&self) -> PicardConfig {
        PicardConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            beta: self.beta,
            divergence_patience: self.divergence_patience,
            analysis_budget: self.analysis_budget,
        }
    }
}

impl Default for PicardSection {
    fn default() -> Self {
        let p = PicardConfig::default();
        Self {
            tolerance: p.tolerance,
            max_iterations: p.max_iterations,
            beta: p.beta,
            divergence_patience: p.divergence_patience,
            analysis_budget: p.analysis_budget,
            mode: SolveMode::Auto,
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    pub beta_prime: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    FinitePoint,
    FiniteMeasure,
    SpecialTwoPoint,
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub mode: Option<AnalysisKind>,
    #[serde(default = "AnalysisSection::budget")]
    pub budget: usize,
    /// Overrides the generator's declared constant.
    pub lipschitz: Option<f64>,
    /// Measure for `finite_measure` when the generator carries none.
    pub measure: Option<DelayMeasure>,
}

impl AnalysisSection {
    fn budget() -> usize {
        400
    }
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            mode: None,
            budget: Self::budget(),
            lipschitz: None,
            measure: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "VerifySection::cases")]
    pub cases: usize,
}

impl VerifySection {
    fn cases() -> usize {
        100
    }
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: Self::cases(),
        }
    }
}

/// The document as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub grid: Option<GridSection>,
    pub jumps: Option<JumpSection>,
    pub generator: Option<GeneratorSection>,
    pub pi: Option<Vec<f64>>,
    pub terminal: Option<TerminalSection>,
    #[serde(default)]
    pub picard: PicardSection,
    pub ladder: Option<LadderConfig>,
    pub decay: Option<DecaySection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub verify: VerifySection,
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub raw: RawConfig,
    pub grid: Option<TimeGrid>,
    pub jumps: JumpSpec,
    pub generator: Option<GeneratorSpec>,
    pub terminal: Terminal,
    pub picard: PicardConfig,
}

impl RunConfig {
    pub fn require_grid(&self) -> Result<TimeGrid> {
        self.grid
            .ok_or_else(|| Error::config("/grid", "a grid with horizon and steps (or dt) is required"))
    }

    pub fn require_generator(&self) -> Result<&GeneratorSpec> {
        self.generator
            .as_ref()
            .ok_or_else(|| Error::config("/generator", "a generator is required"))
    }

    pub fn require_ladder(&self) -> Result<&LadderConfig> {
        self.raw
            .ladder
            .as_ref()
            .ok_or_else(|| Error::config("/ladder", "a ladder section is required"))
    }

    /// Contraction condition requested by the `analysis` section.
    pub fn analysis_mode(&self) -> Result<(AnalysisMode, f64)> {
        let a = &self.raw.analysis;
        let c = match (a.lipschitz, &self.generator) {
            (Some(c), _) => {
                if !(c.is_finite() && c >= 0.0) {
                    return Err(Error::config("/analysis/lipschitz", format!("must be >= 0, got {c}")));
                }
                c
            }
            (None, Some(g)) => g.lipschitz(),
            (None, None) => {
                return Err(Error::config("/analysis/lipschitz", "needed when no generator is configured"))
            }
        };
        let r = self.raw.ladder.as_ref().map_or(self.raw.grid.as_ref().map_or(0.0, |g| g.shift), |l| l.r);
        let mode = match a.mode {
            Some(AnalysisKind::Infinite) => AnalysisMode::Infinite { r },
            None if self.grid.is_none() && self.raw.ladder.is_some() => AnalysisMode::Infinite { r },
            kind => {
                let grid = self.require_grid()?;
                let horizon = grid.horizon();
                match kind {
                    None => match &self.generator {
                        Some(g) => AnalysisMode::for_delay(g.delay(), horizon),
                        None => AnalysisMode::FinitePoint {
                            horizon,
                            shift: grid.shift(),
                        },
                    },
                    Some(AnalysisKind::FinitePoint) => AnalysisMode::FinitePoint {
                        horizon,
                        shift: grid.shift(),
                    },
                    Some(AnalysisKind::SpecialTwoPoint) => AnalysisMode::SpecialTwoPoint {
                        horizon,
                        delta: grid.delay(),
                    },
                    Some(AnalysisKind::FiniteMeasure) => {
                        let measure = match (a.measure, self.generator.as_ref().map(|g| g.delay())) {
                            (Some(m), _) => m,
                            (None, Some(crate::generator::DelayDescriptor::Measure(m))) => m,
                            _ => {
                                return Err(Error::config(
                                    "/analysis/measure",
                                    "finite_measure needs a measure (lebesgue or dirac)",
                                ))
                            }
                        };
                        AnalysisMode::FiniteMeasure { horizon, measure }
                    }
                    Some(AnalysisKind::Infinite) => unreachable!(),
                }
            }
        };
        Ok((mode, c))
    }
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{key}")),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

fn from_value<T: serde::de::DeserializeOwned>(prefix: &str, value: &Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let p = pointer(e.path());
        let p = if p == "/" { prefix.to_string() } else { format!("{prefix}{p}") };
        Error::config(p, e.inner().to_string())
    })
}

/// Re-homes parameter errors raised by library constructors.
fn at(section: &str, err: Error) -> Error {
    match err {
        Error::Alignment { field, value, dt } => Error::config(
            format!("{section}/{field}"),
            format!("{value} is not an integer multiple of dt = {dt}"),
        ),
        Error::InvalidParameter { field, reason } => Error::config(format!("{section}/{field}"), reason),
        Error::InvalidThinning(x) => Error::config(
            "/jumps/intensities",
            format!("total intensity x dt = {x} must be < 1"),
        ),
        other => other,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AffineParams {
    a: f64,
    #[serde(default)]
    b: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PointDelayParams {
    a: f64,
    shift: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TwoPointParams {
    a1: f64,
    a2: f64,
    delta: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UtilityParams {
    c: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ForcedDecayParams {
    a: f64,
    kappa: f64,
}

fn resolve_builtin(section: &GeneratorSection, pi: Option<&Vec<f64>>, dt: Option<f64>) -> Result<Builtin> {
    const P: &str = "/generator/params";
    Ok(match section.name.as_str() {
        "zero" => {
            from_value::<NoParams>(P, &section.params)?;
            Builtin::Zero
        }
        "affine_meanfield" => {
            let p: AffineParams = from_value(P, &section.params)?;
            Builtin::AffineMeanfield { a: p.a, b: p.b }
        }
        "point_delay" => {
            let p: PointDelayParams = from_value(P, &section.params)?;
            Builtin::PointDelay { a: p.a, shift: p.shift }
        }
        "two_point" => {
            let p: TwoPointParams = from_value(P, &section.params)?;
            Builtin::TwoPoint {
                a1: p.a1,
                a2: p.a2,
                delta: p.delta,
            }
        }
        "recursive_utility" => {
            let p: UtilityParams = from_value(P, &section.params)?;
            let pi = pi.ok_or_else(|| Error::config("/pi", "recursive_utility needs a consumption path"))?;
            let dt = dt.ok_or_else(|| Error::config("/grid", "recursive_utility needs a grid step"))?;
            Builtin::RecursiveUtility {
                c: p.c,
                pi: pi.clone(),
                dt,
            }
        }
        "forced_decay" => {
            let p: ForcedDecayParams = from_value(P, &section.params)?;
            Builtin::ForcedDecay { a: p.a, kappa: p.kappa }
        }
        "linear" => Builtin::Linear(from_value::<LinearCoefficients>(P, &section.params)?),
        other => {
            return Err(Error::config(
                "/generator/name",
                format!("unknown generator `{other}`; expected one of {}", Builtin::NAMES.join(", ")),
            ))
        }
    })
}

fn build_grid(g: &GridSection) -> Result<Option<TimeGrid>> {
    let horizon = match g.horizon {
        Some(h) => h,
        None => return Ok(None),
    };
    let grid = match (g.steps, g.dt) {
        (Some(_), Some(_)) => return Err(Error::config("/grid/dt", "give either steps or dt, not both")),
        (Some(n), None) => TimeGrid::new(horizon, n, g.delta, g.shift),
        (None, Some(dt)) => TimeGrid::with_step(horizon, dt, g.delta, g.shift),
        (None, None) => return Err(Error::config("/grid/steps", "steps or dt is required")),
    };
    grid.map(Some).map_err(|e| match e {
        Error::InvalidParameter { field: "dt", reason } => Error::config("/grid/dt", reason),
        other => at("/grid", other),
    })
}

/// Parses and validates a configuration document.
pub fn parse_config(document: &str) -> Result<RunConfig> {
    let value: Value = serde_json::from_str(document).map_err(|e| Error::config("/", format!("invalid JSON: {e}")))?;
    let raw: RawConfig = from_value("", &value)?;

    let grid = match &raw.grid {
        Some(g) => build_grid(g)?,
        None => None,
    };
    let jumps = match &raw.jumps {
        Some(j) => JumpSpec::new(j.marks.clone(), j.intensities.clone()).map_err(|e| at("/jumps", e))?,
        None => JumpSpec::none(),
    };
    if let Some(g) = &grid {
        let thinning = jumps.total_intensity() * g.dt();
        if thinning >= 1.0 {
            return Err(at("/jumps", Error::InvalidThinning(thinning)));
        }
    }
    let picard = raw.picard.picard();
    picard.validate().map_err(|e| at("/picard", e))?;
    if let Some(l) = &raw.ladder {
        l.validate().map_err(|e| at("/ladder", e))?;
    }
    let dt = grid.map(|g| g.dt()).or(raw.ladder.as_ref().map(|l| l.dt));
    let generator = match &raw.generator {
        Some(section) => {
            let kind = resolve_builtin(section, raw.pi.as_ref(), dt)?;
            let gen = builtin(&kind, &jumps).map_err(|e| at("/generator/params", e))?;
            if let Some(g) = &grid {
                gen.validate(g).map_err(|e| match e {
                    Error::InvalidParameter { field: "pi", reason } => Error::config("/pi", reason),
                    other => at("/generator/params", other),
                })?;
            }
            Some(gen)
        }
        None => None,
    };
    let terminal = raw
        .terminal
        .as_ref()
        .map_or(Terminal::Constant(0.0), TerminalSection::to_terminal);
    terminal.validate(&jumps).map_err(|e| at("/terminal", e))?;
    if raw.analysis.budget < 10 {
        return Err(Error::config("/analysis/budget", "must be >= 10"));
    }
    Ok(RunConfig {
        raw,
        grid,
        jumps,
        generator,
        terminal,
        picard,
    })
}
