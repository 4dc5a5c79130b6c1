//! Discrete stochastic basis: time grid, finite jump measure and the
//! non-recombining scenario tree that carries Brownian and compensated
//! Poisson increments.
//!
//! The Brownian increment is a symmetric coin (`±√dt`, probability 1/2) and
//! each step carries at most one jump, mark `j` occurring with probability
//! `λ_j·dt`. Both choices match the first two conditional moments of the
//! continuous increments exactly, so every conditional expectation on the
//! tree is a finite, exact sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance when checking that a delay or shift sits on the grid.
pub const ALIGNMENT_TOL: f64 = 1e-9;

/// Default cap on the number of tree nodes.
pub const DEFAULT_NODE_BUDGET: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
    delay: f64,
    shift: f64,
    delay_steps: usize,
    shift_steps: usize,
}

impl TimeGrid {
    /// Grid on `[0, horizon]` with `steps` cells, delay window `delay` and
    /// shift `shift ∈ [-delay, 0]`.
    pub fn new(horizon: f64, steps: usize, delay: f64, shift: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::param("horizon", format!("must be > 0, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::param("steps", "must be >= 1"));
        }
        if !(delay.is_finite() && delay >= 0.0) {
            return Err(Error::param("delta", format!("must be >= 0, got {delay}")));
        }
        if !(shift.is_finite() && shift <= 0.0 && shift >= -delay) {
            return Err(Error::param(
                "shift",
                format!("must lie in [-{delay}, 0], got {shift}"),
            ));
        }
        let dt = horizon / steps as f64;
        let delay_steps = aligned_steps("delta", delay, dt)?;
        let shift_steps = aligned_steps("shift", -shift, dt)?;
        Ok(Self {
            horizon,
            steps,
            dt,
            delay,
            shift,
            delay_steps,
            shift_steps,
        })
    }

    /// Grid with a prescribed step; `horizon / dt` must be integral.
    pub fn with_step(horizon: f64, dt: f64, delay: f64, shift: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::param("dt", format!("must be > 0, got {dt}")));
        }
        let steps = aligned_steps("horizon", horizon, dt)?;
        if steps == 0 {
            return Err(Error::param("horizon", format!("must be > 0, got {horizon}")));
        }
        Self::new(horizon, steps, delay, shift)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// `delay / dt`.
    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }

    /// `|shift| / dt`.
    pub fn shift_steps(&self) -> usize {
        self.shift_steps
    }

    /// Time of layer `i`, computed as `i·dt` (no accumulated rounding).
    pub fn time(&self, layer: usize) -> f64 {
        layer as f64 * self.dt
    }

    /// Number of grid steps spanned by a nonnegative offset, if aligned.
    pub fn steps_for(&self, field: &'static str, offset: f64) -> Result<usize> {
        aligned_steps(field, offset.abs(), self.dt)
    }
}

fn aligned_steps(field: &'static str, value: f64, dt: f64) -> Result<usize> {
    let ratio = value / dt;
    let rounded = ratio.round();
    if (ratio - rounded).abs() > ALIGNMENT_TOL * rounded.max(1.0) {
        return Err(Error::Alignment { field, value, dt });
    }
    Ok(rounded as usize)
}

/// Finite compensator measure `ν = Σ_j λ_j δ_{ζ_j}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JumpSpec {
    marks: Vec<f64>,
    intensities: Vec<f64>,
}

impl JumpSpec {
    pub fn new(marks: Vec<f64>, intensities: Vec<f64>) -> Result<Self> {
        if marks.len() != intensities.len() {
            return Err(Error::param(
                "intensities",
                format!("{} marks but {} intensities", marks.len(), intensities.len()),
            ));
        }
        for (i, &z) in marks.iter().enumerate() {
            if !z.is_finite() || z == 0.0 {
                return Err(Error::param("marks", format!("mark {i} must be finite and nonzero, got {z}")));
            }
            if marks[..i].contains(&z) {
                return Err(Error::param("marks", format!("mark {z} repeated")));
            }
        }
        if let Some(l) = intensities.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::param("intensities", format!("must be finite and >= 0, got {l}")));
        }
        Ok(Self { marks, intensities })
    }

    /// No jumps at all.
    pub fn none() -> Self {
        Self::default()
    }

    pub fn single(mark: f64, intensity: f64) -> Result<Self> {
        Self::new(vec![mark], vec![intensity])
    }

    pub fn marks(&self) -> &[f64] {
        &self.marks
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn total_intensity(&self) -> f64 {
        self.intensities.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BrownianSign {
    Up,
    Down,
}

/// One outcome of a single step, shared by every node of the tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    /// `None` on a collapsed tree.
    pub sign: Option<BrownianSign>,
    /// Index of the mark that jumped, if any.
    pub jump: Option<usize>,
    pub prob: f64,
    pub db: f64,
    pub dn: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TreeKind {
    /// Full product law of Brownian sign and jump outcome.
    Full,
    /// One child per node with zero increments: the trivial filtration,
    /// used when the solution is known to be deterministic.
    Collapsed,
}

/// A node addressed by layer and position within the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeRef {
    pub layer: usize,
    pub index: usize,
}

impl NodeRef {
    pub fn new(layer: usize, index: usize) -> Self {
        Self { layer, index }
    }

    pub fn root() -> Self {
        Self::new(0, 0)
    }
}

/// Finite non-recombining event tree.
///
/// Children of node `k` on layer `i` occupy indices `k·b .. k·b + b` on layer
/// `i + 1`, where `b` is the branching factor. Child `c` takes branch `c`,
/// ordered jump outcome first (none, mark 1, ...) and Brownian sign second.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioTree {
    grid: TimeGrid,
    jumps: JumpSpec,
    kind: TreeKind,
    branches: Vec<Branch>,
    layer_sizes: Vec<usize>,
    offsets: Vec<usize>,
    path_prob: Vec<Vec<f64>>,
    jump_probs: Vec<f64>,
    brownian_var: f64,
}

/// Number of nodes a full tree on `steps` steps with `marks` marks needs.
pub fn full_tree_size(steps: usize, marks: usize) -> Option<usize> {
    let b = 2usize.checked_mul(marks + 1)?;
    let mut width = 1usize;
    let mut total = 1usize;
    for _ in 0..steps {
        width = width.checked_mul(b)?;
        total = total.checked_add(width)?;
    }
    Some(total)
}

pub fn build_tree(grid: TimeGrid, jumps: JumpSpec) -> Result<ScenarioTree> {
    build_tree_with_budget(grid, jumps, DEFAULT_NODE_BUDGET)
}

pub fn build_tree_with_budget(grid: TimeGrid, jumps: JumpSpec, budget: usize) -> Result<ScenarioTree> {
    let thinning = jumps.total_intensity() * grid.dt();
    if thinning >= 1.0 {
        return Err(Error::InvalidThinning(thinning));
    }
    match full_tree_size(grid.steps(), jumps.len()) {
        Some(n) if n <= budget => {}
        Some(n) => {
            return Err(Error::NodeBudget {
                required: n.to_string(),
                budget,
            })
        }
        None => {
            return Err(Error::NodeBudget {
                required: "more than usize::MAX".into(),
                budget,
            })
        }
    }

    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let m = jumps.len();
    let jump_probs: Vec<f64> = jumps.intensities().iter().map(|l| l * dt).collect();
    let p_none = 1.0 - thinning;

    let mut branches = Vec::with_capacity(2 * (m + 1));
    for outcome in 0..=m {
        let jump = outcome.checked_sub(1);
        let p_jump = match jump {
            None => p_none,
            Some(j) => jump_probs[j],
        };
        let dn: Vec<f64> = (0..m)
            .map(|l| if jump == Some(l) { 1.0 } else { 0.0 } - jump_probs[l])
            .collect();
        for sign in [BrownianSign::Up, BrownianSign::Down] {
            let db = match sign {
                BrownianSign::Up => sqrt_dt,
                BrownianSign::Down => -sqrt_dt,
            };
            branches.push(Branch {
                sign: Some(sign),
                jump,
                prob: 0.5 * p_jump,
                db,
                dn: dn.clone(),
            });
        }
    }
    Ok(ScenarioTree::assemble(grid, jumps, TreeKind::Full, branches, jump_probs, dt))
}

/// Tree with a single path: every increment is zero and each layer holds one
/// node of probability one.
pub fn build_collapsed_tree(grid: TimeGrid, jumps: JumpSpec) -> Result<ScenarioTree> {
    let thinning = jumps.total_intensity() * grid.dt();
    if thinning >= 1.0 {
        return Err(Error::InvalidThinning(thinning));
    }
    let m = jumps.len();
    let branches = vec![Branch {
        sign: None,
        jump: None,
        prob: 1.0,
        db: 0.0,
        dn: vec![0.0; m],
    }];
    Ok(ScenarioTree::assemble(
        grid,
        jumps,
        TreeKind::Collapsed,
        branches,
        vec![0.0; m],
        0.0,
    ))
}

impl ScenarioTree {
    fn assemble(
        grid: TimeGrid,
        jumps: JumpSpec,
        kind: TreeKind,
        branches: Vec<Branch>,
        jump_probs: Vec<f64>,
        brownian_var: f64,
    ) -> Self {
        let b = branches.len();
        let n = grid.steps();
        let mut layer_sizes = Vec::with_capacity(n + 1);
        let mut offsets = Vec::with_capacity(n + 2);
        let mut path_prob: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        layer_sizes.push(1);
        offsets.push(0);
        path_prob.push(vec![1.0]);
        for i in 0..n {
            let prev = &path_prob[i];
            let mut next = Vec::with_capacity(prev.len() * b);
            for &p in prev {
                next.extend(branches.iter().map(|br| p * br.prob));
            }
            offsets.push(offsets[i] + layer_sizes[i]);
            layer_sizes.push(next.len());
            path_prob.push(next);
        }
        offsets.push(offsets[n] + layer_sizes[n]);
        Self {
            grid,
            jumps,
            kind,
            branches,
            layer_sizes,
            offsets,
            path_prob,
            jump_probs,
            brownian_var,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn jumps(&self) -> &JumpSpec {
        &self.jumps
    }

    pub fn kind(&self) -> TreeKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn branching(&self) -> usize {
        self.branches.len()
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn layer_len(&self, layer: usize) -> usize {
        self.layer_sizes[layer]
    }

    pub fn node_count(&self) -> usize {
        self.offsets[self.steps() + 1]
    }

    /// Global node id in (layer, index) order.
    pub fn node_id(&self, node: NodeRef) -> usize {
        self.offsets[node.layer] + node.index
    }

    pub fn node_from_id(&self, id: usize) -> Option<NodeRef> {
        if id >= self.node_count() {
            return None;
        }
        let layer = self.offsets.partition_point(|&o| o <= id) - 1;
        Some(NodeRef::new(layer, id - self.offsets[layer]))
    }

    pub fn check_node(&self, node: NodeRef) -> Result<()> {
        if node.layer > self.steps() || node.index >= self.layer_sizes[node.layer] {
            return Err(Error::InvalidNode {
                layer: node.layer,
                index: node.index,
            });
        }
        Ok(())
    }

    pub fn parent(&self, node: NodeRef) -> Option<NodeRef> {
        (node.layer > 0).then(|| NodeRef::new(node.layer - 1, node.index / self.branching()))
    }

    /// Ancestor `back` layers above `node` (`back = 0` is the node itself).
    pub fn ancestor(&self, node: NodeRef, back: usize) -> NodeRef {
        let b = self.branching();
        let mut index = node.index;
        for _ in 0..back {
            index /= b;
        }
        NodeRef::new(node.layer - back, index)
    }

    /// The branch taken to arrive at a non-root node.
    pub fn branch_of(&self, node: NodeRef) -> Option<&Branch> {
        (node.layer > 0).then(|| &self.branches[node.index % self.branching()])
    }

    pub fn transition_prob(&self, node: NodeRef) -> f64 {
        self.branch_of(node).map_or(1.0, |br| br.prob)
    }

    pub fn path_prob(&self, node: NodeRef) -> f64 {
        self.path_prob[node.layer][node.index]
    }

    pub fn layer_probs(&self, layer: usize) -> &[f64] {
        &self.path_prob[layer]
    }

    /// Per-step jump probabilities `λ_j·dt` (zero on a collapsed tree).
    pub fn jump_probs(&self) -> &[f64] {
        &self.jump_probs
    }

    /// Conditional variance of the Brownian increment (`dt`, or 0 collapsed).
    pub fn brownian_var(&self) -> f64 {
        self.brownian_var
    }

    /// Whether two trees describe the same probability model.
    pub fn same_model(&self, other: &ScenarioTree) -> bool {
        std::ptr::eq(self, other)
            || (self.kind == other.kind && self.grid == other.grid && self.jumps == other.jumps)
    }

    /// `E[values | node]` for values given on layer `node.layer + 1`.
    pub fn conditional_expectation(&self, next: &[f64], node: NodeRef) -> Result<f64> {
        let b = self.branching();
        let start = node.index * b;
        if next.len() < start + b {
            return Err(Error::IncompleteLayer {
                layer: node.layer + 1,
                expected: start + b,
                got: next.len(),
            });
        }
        Ok(self
            .branches
            .iter()
            .zip(&next[start..start + b])
            .fold(0.0, |acc, (br, v)| acc + br.prob * v))
    }

    /// `E[values at layer]` weighting each node by its path probability.
    pub fn layer_expectation(&self, values: &[f64], layer: usize) -> Result<f64> {
        let probs = &self.path_prob[layer];
        if values.len() != probs.len() {
            return Err(Error::IncompleteLayer {
                layer,
                expected: probs.len(),
                got: values.len(),
            });
        }
        Ok(probs.iter().zip(values).fold(0.0, |acc, (p, v)| acc + p * v))
    }

    /// Layer expectation of a vector-valued quantity stored node-major with
    /// `width` entries per node.
    pub fn layer_expectation_vec(&self, values: &[f64], width: usize, layer: usize) -> Result<Vec<f64>> {
        let probs = &self.path_prob[layer];
        if values.len() != probs.len() * width {
            return Err(Error::IncompleteLayer {
                layer,
                expected: probs.len() * width,
                got: values.len(),
            });
        }
        let mut out = vec![0.0; width];
        for (p, chunk) in probs.iter().zip(values.chunks_exact(width.max(1))) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += p * v;
            }
        }
        Ok(out)
    }

    /// Brownian level `B(t_i)` at every node, layer by layer.
    pub fn brownian_levels(&self) -> Vec<Vec<f64>> {
        let b = self.branching();
        let mut out: Vec<Vec<f64>> = vec![vec![0.0]];
        for i in 0..self.steps() {
            let next: Vec<f64> = (0..self.layer_sizes[i + 1])
                .map(|k| out[i][k / b] + self.branches[k % b].db)
                .collect();
            out.push(next);
        }
        out
    }

    /// Terminal state (Brownian level and jump counts) at every leaf.
    pub fn leaf_states(&self) -> Vec<TerminalState> {
        let b = self.branching();
        let m = self.jumps.len();
        let mut layer = vec![TerminalState {
            brownian: 0.0,
            jump_counts: vec![0; m],
        }];
        for i in 0..self.steps() {
            let mut next = Vec::with_capacity(self.layer_sizes[i + 1]);
            for k in 0..self.layer_sizes[i + 1] {
                let parent = &layer[k / b];
                let br = &self.branches[k % b];
                let mut counts = parent.jump_counts.clone();
                if let Some(j) = br.jump {
                    counts[j] += 1;
                }
                next.push(TerminalState {
                    brownian: parent.brownian + br.db,
                    jump_counts: counts,
                });
            }
            layer = next;
        }
        layer
    }
}

/// Path summary at the horizon: `B(T)` and the number of jumps per mark.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalState {
    pub brownian: f64,
    pub jump_counts: Vec<u32>,
}
