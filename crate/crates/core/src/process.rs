//! Adapted processes on a scenario tree, delayed segment views and the
//! β-weighted norms.
//!
//! Integrals in time use the left-endpoint rule on the grid; the supremum in
//! the S-norm runs over grid points. Path-space norms are reported in
//! expectation.

use std::sync::Arc;

use serde::Serialize;

use crate::basis::{JumpSpec, NodeRef, ScenarioTree};
use crate::error::{Error, Result};

/// Values of an adapted process, one `Vec` per layer, `width` entries per
/// node (1 for `Y` and `Z`, the number of marks for `K`).
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    width: usize,
    layers: Vec<Vec<f64>>,
}

impl AdaptedProcess {
    pub fn zeros(tree: &ScenarioTree, width: usize, layer_count: usize) -> Self {
        let layers = (0..layer_count)
            .map(|i| vec![0.0; tree.layer_len(i) * width])
            .collect();
        Self { width, layers }
    }

    /// Scalar process with values produced per node.
    pub fn from_fn(
        tree: &ScenarioTree,
        layer_count: usize,
        mut f: impl FnMut(NodeRef) -> f64,
    ) -> Self {
        let layers = (0..layer_count)
            .map(|i| (0..tree.layer_len(i)).map(|k| f(NodeRef::new(i, k))).collect())
            .collect();
        Self { width: 1, layers }
    }

    pub fn from_layers(width: usize, layers: Vec<Vec<f64>>) -> Self {
        Self { width, layers }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> &[f64] {
        &self.layers[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut Vec<f64> {
        &mut self.layers[i]
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    /// Scalar value at a node.
    pub fn value(&self, node: NodeRef) -> f64 {
        self.layers[node.layer][node.index * self.width]
    }

    /// All `width` entries at a node.
    pub fn values(&self, node: NodeRef) -> &[f64] {
        let w = self.width;
        &self.layers[node.layer][node.index * w..(node.index + 1) * w]
    }

    pub fn set(&mut self, node: NodeRef, value: f64) {
        self.layers[node.layer][node.index * self.width] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            layers: self.layers.iter().map(|l| l.iter().map(|v| f(*v)).collect()).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.width != other.width
            || self.layers.len() != other.layers.len()
            || self.layers.iter().zip(&other.layers).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::TreeMismatch);
        }
        Ok(Self {
            width: self.width,
            layers: self
                .layers
                .iter()
                .zip(&other.layers)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
                .collect(),
        })
    }

    /// First `count` layers.
    pub fn truncated(&self, count: usize) -> Self {
        Self {
            width: self.width,
            layers: self.layers[..count].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SegmentKind {
    Y,
    Z,
    K,
}

/// Delayed window of a process at an anchor node, oldest sample first.
///
/// Before time 0 a `Y` window repeats the root value; `Z` and `K` windows
/// are zero there.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentView {
    kind: SegmentKind,
    dt: f64,
    width: usize,
    len: usize,
    samples: Vec<f64>,
}

impl SegmentView {
    /// Window of `len` samples stored oldest first, `width` entries each.
    pub fn with_len(kind: SegmentKind, dt: f64, width: usize, len: usize, samples: Vec<f64>) -> Self {
        assert_eq!(samples.len(), len * width, "window storage does not match its shape");
        Self {
            kind,
            dt,
            width,
            len,
            samples,
        }
    }

    /// Window with `width >= 1`; the length follows from the storage.
    pub fn new(kind: SegmentKind, dt: f64, width: usize, samples: Vec<f64>) -> Self {
        assert!(width > 0, "use with_len for width-0 windows");
        let len = samples.len() / width;
        Self::with_len(kind, dt, width, len, samples)
    }

    /// A window of `len` zero samples.
    pub fn zeros(kind: SegmentKind, dt: f64, width: usize, len: usize) -> Self {
        Self::with_len(kind, dt, width, len, vec![0.0; len * width])
    }

    pub fn kind(&self) -> SegmentKind {
        self.kind
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of samples, `delta/dt + 1`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Sample `i` counted from the oldest.
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.width..(i + 1) * self.width]
    }

    /// Sample `back` steps before the anchor (0 is the anchor itself).
    pub fn back(&self, back: usize) -> &[f64] {
        self.sample(self.len - 1 - back)
    }

    /// Scalar sample `back` steps before the anchor.
    pub fn scalar_back(&self, back: usize) -> f64 {
        self.back(back)[0]
    }

    /// Scalar sample at time offset `s ≤ 0` relative to the anchor.
    pub fn at_offset(&self, s: f64) -> f64 {
        self.scalar_back(offset_steps(s, self.dt))
    }

    /// Sample vector at time offset `s ≤ 0`.
    pub fn vec_at_offset(&self, s: f64) -> &[f64] {
        self.back(offset_steps(s, self.dt))
    }
}

pub(crate) fn offset_steps(s: f64, dt: f64) -> usize {
    (-s / dt).round() as usize
}

/// Window of `delay_steps + 1` samples ending at `node`.
pub fn segment_view(
    tree: &ScenarioTree,
    process: &AdaptedProcess,
    node: NodeRef,
    kind: SegmentKind,
    delay_steps: usize,
) -> Result<SegmentView> {
    tree.check_node(node)?;
    if node.layer >= process.layer_count() {
        return Err(Error::InvalidNode {
            layer: node.layer,
            index: node.index,
        });
    }
    let w = process.width();
    let mut samples = Vec::with_capacity((delay_steps + 1) * w);
    for back in (0..=delay_steps).rev() {
        if back > node.layer {
            match kind {
                SegmentKind::Y => samples.extend_from_slice(process.values(NodeRef::root())),
                SegmentKind::Z | SegmentKind::K => samples.extend(std::iter::repeat_n(0.0, w)),
            }
        } else {
            samples.extend_from_slice(process.values(tree.ancestor(node, back)));
        }
    }
    Ok(SegmentView::with_len(kind, tree.grid().dt(), w, delay_steps + 1, samples))
}

/// `(Y, Z, K)` on a tree: `Y` on layers `0..=N`, `Z` and `K` on `0..N`.
#[derive(Debug, Clone)]
pub struct SolutionTriple {
    pub tree: Arc<ScenarioTree>,
    pub y: AdaptedProcess,
    pub z: AdaptedProcess,
    pub k: AdaptedProcess,
}

impl SolutionTriple {
    pub fn zeros(tree: Arc<ScenarioTree>) -> Self {
        let n = tree.steps();
        let m = tree.jumps().len();
        let y = AdaptedProcess::zeros(&tree, 1, n + 1);
        let z = AdaptedProcess::zeros(&tree, 1, n);
        let k = AdaptedProcess::zeros(&tree, m, n);
        Self { tree, y, z, k }
    }

    pub fn y0(&self) -> f64 {
        self.y.value(NodeRef::root())
    }

    fn check_same_tree(&self, other: &Self) -> Result<()> {
        if self.tree.same_model(&other.tree) {
            Ok(())
        } else {
            Err(Error::TreeMismatch)
        }
    }

    /// Componentwise difference `self − other`.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.check_same_tree(other)?;
        Ok(Self {
            tree: self.tree.clone(),
            y: self.y.zip_with(&other.y, |a, b| a - b)?,
            z: self.z.zip_with(&other.z, |a, b| a - b)?,
            k: self.k.zip_with(&other.k, |a, b| a - b)?,
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            tree: self.tree.clone(),
            y: self.y.map(|v| v * factor),
            z: self.z.map(|v| v * factor),
            k: self.k.map(|v| v * factor),
        }
    }

    /// Restriction to the first `steps` steps, living on `prefix` (a tree
    /// with the same step and jumps but a shorter horizon).
    pub fn restrict(&self, prefix: Arc<ScenarioTree>) -> Result<Self> {
        let steps = prefix.steps();
        if steps > self.tree.steps()
            || prefix.kind() != self.tree.kind()
            || prefix.jumps() != self.tree.jumps()
            || prefix.grid().dt() != self.tree.grid().dt()
        {
            return Err(Error::TreeMismatch);
        }
        Ok(Self {
            tree: prefix,
            y: self.y.truncated(steps + 1),
            z: self.z.truncated(steps),
            k: self.k.truncated(steps),
        })
    }
}

/// `E[sup_i e^{β t_i} Y(t_i)²]` over all paths.
pub fn norm_s2_beta(tree: &ScenarioTree, y: &AdaptedProcess, beta: f64) -> f64 {
    let b = tree.branching();
    let grid = tree.grid();
    let layers = y.layer_count();
    let mut running: Vec<f64> = vec![y.layer(0)[0].powi(2)];
    for i in 1..layers {
        let w = (beta * grid.time(i)).exp();
        running = y
            .layer(i)
            .iter()
            .enumerate()
            .map(|(k, v)| running[k / b].max(w * v * v))
            .collect();
    }
    let last = layers - 1;
    tree.layer_probs(last)
        .iter()
        .zip(&running)
        .fold(0.0, |acc, (p, r)| acc + p * r)
}

/// `E[Σ_i e^{β t_i} Q(t_i)² dt]` over the layers the process carries.
pub fn norm_l2_beta(tree: &ScenarioTree, q: &AdaptedProcess, beta: f64) -> f64 {
    let grid = tree.grid();
    let mut total = 0.0;
    for i in 0..q.layer_count() {
        let w = (beta * grid.time(i)).exp() * grid.dt();
        let layer_sum = tree
            .layer_probs(i)
            .iter()
            .zip(q.layer(i).chunks_exact(q.width().max(1)))
            .fold(0.0, |acc, (p, v)| acc + p * v.iter().map(|x| x * x).sum::<f64>());
        total += w * layer_sum;
    }
    total
}

/// `E[Σ_i Σ_j e^{β t_i} K(t_i, ζ_j)² λ_j dt]`.
pub fn norm_h2_beta(tree: &ScenarioTree, k: &AdaptedProcess, beta: f64, jumps: &JumpSpec) -> f64 {
    let m = k.width();
    if m == 0 {
        return 0.0;
    }
    let grid = tree.grid();
    let lambda = jumps.intensities();
    let mut total = 0.0;
    for i in 0..k.layer_count() {
        let w = (beta * grid.time(i)).exp() * grid.dt();
        let layer_sum = tree
            .layer_probs(i)
            .iter()
            .zip(k.layer(i).chunks_exact(m))
            .fold(0.0, |acc, (p, v)| {
                acc + p * v.iter().zip(lambda).map(|(x, l)| l * x * x).sum::<f64>()
            });
        total += w * layer_sum;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentNorm {
    S,
    L,
    H,
}

/// Squared norm of a single window in the segment spaces.
pub fn norm_segment(view: &SegmentView, kind: SegmentNorm, jumps: Option<&JumpSpec>) -> Result<f64> {
    let samples = view.samples();
    match kind {
        SegmentNorm::S => Ok(samples.iter().fold(0.0, |acc: f64, v| acc.max(v * v))),
        SegmentNorm::L => Ok(samples.iter().map(|v| v * v).sum::<f64>() * view.dt()),
        SegmentNorm::H => {
            let jumps = jumps.ok_or(Error::MissingMeasure)?;
            let lambda = jumps.intensities();
            let sum: f64 = (0..view.len())
                .map(|i| view.sample(i).iter().zip(lambda).map(|(v, l)| l * v * v).sum::<f64>())
                .sum();
            Ok(sum * view.dt())
        }
    }
}

/// `‖Y−Ỹ‖²_S + ‖Z−Z̃‖²_L + ‖K−K̃‖²_H`, all β-weighted.
pub fn triple_distance(a: &SolutionTriple, b: &SolutionTriple, beta: f64) -> Result<f64> {
    let d = a.difference(b)?;
    Ok(triple_norm(&d, beta))
}

/// Squared β-norm of a triple in the product space.
pub fn triple_norm(t: &SolutionTriple, beta: f64) -> f64 {
    let tree = &t.tree;
    norm_s2_beta(tree, &t.y, beta)
        + norm_l2_beta(tree, &t.z, beta)
        + norm_h2_beta(tree, &t.k, beta, tree.jumps())
}

/// The infinite-horizon norm restricted to the grid the triple lives on:
/// `E[sup e^{βt}|Y|²] + E[Σ e^{βt}(|Z|² + Σ_j λ_j K_j²) dt]`.
pub fn norm_call(t: &SolutionTriple, beta: f64) -> f64 {
    triple_norm(t, beta)
}
