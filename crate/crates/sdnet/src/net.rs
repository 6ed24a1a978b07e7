//! The sliding door network: forward pass, door assignment, door-absence
//! regularized loss, Adam training, and evaluation metrics.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::pattern::{ActivationPattern, DoorAssignment};
use crate::rules::{AffineMap, Bounds};

/// Feedforward net whose hidden layers use sliding door activation and whose
/// output layer is softmax. Hidden layer h (1-based) has
/// `group_count[h-1] * group_size[h-1]` neurons.
#[derive(Debug, Clone)]
pub struct SdNetwork {
    pub layers: Vec<AffineMap>,
    pub group_size: Vec<usize>,
    pub group_count: Vec<usize>,
    pub alpha: f64,
    pub classes: usize,
    pub input_bounds: Bounds,
}

/// Hidden layer shapes as (group_count, group_size) pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<(usize, usize)>,
}

impl Architecture {
    pub fn widths(&self) -> Vec<usize> {
        self.hidden.iter().map(|(g, s)| g * s).collect()
    }
}

impl SdNetwork {
    pub fn new(
        layers: Vec<AffineMap>,
        group_size: Vec<usize>,
        group_count: Vec<usize>,
        alpha: f64,
        classes: usize,
        input_bounds: Bounds,
    ) -> Self {
        assert!(alpha > 1.0, "alpha must exceed 1");
        assert_eq!(layers.len(), group_size.len() + 1, "one map per hidden layer plus the output map");
        assert_eq!(group_size.len(), group_count.len());
        for (h, map) in layers.iter().enumerate() {
            assert_eq!(map.source, h);
            assert_eq!(map.target, h + 1);
            if h > 0 {
                assert_eq!(map.in_dim(), group_size[h - 1] * group_count[h - 1]);
            }
            if h < group_size.len() {
                assert_eq!(map.out_dim(), group_size[h] * group_count[h]);
            }
        }
        assert_eq!(layers.last().unwrap().out_dim(), classes);
        assert_eq!(layers[0].in_dim(), input_bounds.dim());
        SdNetwork { layers, group_size, group_count, alpha, classes, input_bounds }
    }

    pub fn hidden_layers(&self) -> usize {
        self.group_size.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_map(&self) -> &AffineMap {
        self.layers.last().unwrap()
    }

    /// Map feeding hidden layer h (1-based).
    pub fn hidden_map(&self, h: usize) -> &AffineMap {
        &self.layers[h - 1]
    }

    /// Fresh net with fan-in scaled uniform weights and zero biases.
    pub fn init(
        input_dim: usize,
        arch: &Architecture,
        classes: usize,
        alpha: f64,
        input_bounds: Bounds,
        rng: &mut impl Rng,
    ) -> Self {
        let mut dims = vec![input_dim];
        dims.extend(arch.widths());
        dims.push(classes);
        let layers = (0..dims.len() - 1)
            .map(|i| {
                let (nin, nout) = (dims[i], dims[i + 1]);
                let limit = 1.0 / (nin as f64).sqrt();
                let w = Array2::from_shape_fn((nin, nout), |_| rng.random_range(-limit..limit));
                AffineMap::new(i, i + 1, w, Array1::zeros(nout))
            })
            .collect();
        SdNetwork::new(
            layers,
            arch.hidden.iter().map(|&(_, s)| s).collect(),
            arch.hidden.iter().map(|&(g, _)| g).collect(),
            alpha,
            classes,
            input_bounds,
        )
    }

    /// Forward pass of one input: softmax scores plus the realized pattern.
    pub fn forward(&self, x: &[f64]) -> ForwardPass {
        assert_eq!(x.len(), self.input_dim());
        let mut a = Array1::from_iter(x.iter().copied());
        let mut doors = Vec::with_capacity(self.hidden_layers());
        for h in 0..self.hidden_layers() {
            let z = self.layers[h].apply(a.view());
            let d = assign_doors(z.as_slice().unwrap(), self.group_size[h]);
            a = sda_apply(&z, d, self.group_size[h], self.alpha);
            doors.push(d);
        }
        let logits = self.layers.last().unwrap().apply(a.view());
        let probs = softmax(logits.view());
        ForwardPass { logits, probs, pattern: ActivationPattern::new(doors) }
    }

    /// `forward` with a finiteness check; non-finite values indicate a
    /// diverged or corrupted model.
    pub fn try_forward(&self, x: &[f64]) -> Result<ForwardPass> {
        let pass = self.forward(x);
        if pass.logits.iter().all(|v| v.is_finite()) {
            Ok(pass)
        } else {
            Err(Error::NonFiniteForward)
        }
    }

    /// Realized (class, pattern) pair; the region identity of `x`.
    pub fn realized(&self, x: &[f64]) -> (usize, ActivationPattern) {
        let pass = self.forward(x);
        (pass.predicted_class(), pass.pattern)
    }

    /// Top-1 accuracy over a dataset.
    pub fn accuracy(&self, data: &Dataset) -> f64 {
        let correct: usize = self
            .eval_counts(data)
            .iter()
            .map(|c| c.correct)
            .sum();
        correct as f64 / data.len() as f64
    }

    /// Fraction of (sample, hidden layer) pairs where both doors exist.
    pub fn sat_rate(&self, data: &Dataset) -> f64 {
        let both: usize = self.eval_counts(data).iter().map(|c| c.doors_both).sum();
        both as f64 / (data.len() * self.hidden_layers()) as f64
    }

    fn eval_counts(&self, data: &Dataset) -> Vec<EvalCounts> {
        let n = data.len();
        exec::run_tasks(exec::chunk_count(n), |i| {
            let range = exec::chunk_range(i, n);
            let mut counts = EvalCounts::default();
            for r in range {
                let pass = self.forward(data.inputs.row(r).as_slice().unwrap());
                if pass.predicted_class() == data.labels[r] {
                    counts.correct += 1;
                }
                counts.doors_both +=
                    pass.pattern.doors.iter().filter(|d| d.both_present()).count();
            }
            counts
        })
    }
}

#[derive(Default)]
struct EvalCounts {
    correct: usize,
    doors_both: usize,
}

/// Result of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
    pub pattern: ActivationPattern,
}

impl ForwardPass {
    /// Argmax of the logits; softmax is order-preserving so this equals the
    /// argmax of the class scores.
    pub fn predicted_class(&self) -> usize {
        argmax(self.logits.view())
    }
}

pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let max = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut e: Array1<f64> = z.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e /= sum;
    e
}

/// Doors of one layer: minimal-index all-positive group is the active door,
/// minimal-index all-negative group the inactive door. Exact zeros are
/// neither positive nor negative, so an all-zero group forms no door.
pub fn assign_doors(pre: &[f64], group_size: usize) -> DoorAssignment {
    assert_eq!(pre.len() % group_size, 0);
    let mut active = None;
    let mut inactive = None;
    for (g, chunk) in pre.chunks_exact(group_size).enumerate() {
        if active.is_none() && chunk.iter().all(|&v| v > 0.0) {
            active = Some(g);
        }
        if inactive.is_none() && chunk.iter().all(|&v| v < 0.0) {
            inactive = Some(g);
        }
        if active.is_some() && inactive.is_some() {
            break;
        }
    }
    DoorAssignment::new(active, inactive)
}

/// Sliding door activation: zeroes the inactive door, amplifies the active
/// door by alpha, copies everything else.
pub fn sda_apply(
    pre: &Array1<f64>,
    doors: DoorAssignment,
    group_size: usize,
    alpha: f64,
) -> Array1<f64> {
    let mut out = pre.clone();
    if let Some(g) = doors.active {
        for v in out.slice_mut(ndarray::s![g * group_size..(g + 1) * group_size]) {
            *v *= alpha;
        }
    }
    if let Some(g) = doors.inactive {
        for v in out.slice_mut(ndarray::s![g * group_size..(g + 1) * group_size]) {
            *v = 0.0;
        }
    }
    out
}

/// Per-neuron slope of the activation under the current doors: alpha on the
/// active door, 0 on the inactive door, 1 elsewhere. The assignment is
/// treated as locally constant for differentiation; the same vector is the
/// variable scaling of rule inheritance.
pub fn sda_slopes(doors: DoorAssignment, group_count: usize, group_size: usize, alpha: f64) -> Vec<f64> {
    let mut s = vec![1.0; group_count * group_size];
    if let Some(g) = doors.active {
        s[g * group_size..(g + 1) * group_size].fill(alpha);
    }
    if let Some(g) = doors.inactive {
        s[g * group_size..(g + 1) * group_size].fill(0.0);
    }
    s
}

/// Door-absence penalty of one layer's preactivations, split into the
/// active-door term (negative neurons of the group with the most positives)
/// and the inactive-door term (positive neurons of the group with the most
/// negatives). Each term is zero when its door exists. Ties on the counts go
/// to the lower group index.
pub fn door_penalty(pre: &[f64], group_size: usize, doors: DoorAssignment) -> (f64, f64) {
    let mut active_term = 0.0;
    let mut inactive_term = 0.0;
    if doors.active.is_none() {
        let g = extreme_group(pre, group_size, |v| v > 0.0);
        active_term = pre[g * group_size..(g + 1) * group_size]
            .iter()
            .filter(|&&v| v < 0.0)
            .map(|v| -v)
            .sum();
    }
    if doors.inactive.is_none() {
        let g = extreme_group(pre, group_size, |v| v < 0.0);
        inactive_term = pre[g * group_size..(g + 1) * group_size]
            .iter()
            .filter(|&&v| v > 0.0)
            .sum();
    }
    (active_term, inactive_term)
}

fn extreme_group(pre: &[f64], group_size: usize, pred: impl Fn(f64) -> bool) -> usize {
    let mut best = 0;
    let mut best_count = usize::MAX;
    for (g, chunk) in pre.chunks_exact(group_size).enumerate() {
        let count = chunk.iter().filter(|&&v| pred(v)).count();
        if best_count == usize::MAX || count > best_count {
            best = g;
            best_count = count;
        }
    }
    best
}

/// Gradient of `door_penalty` w.r.t. one layer's preactivations.
fn door_penalty_grad(pre: &[f64], group_size: usize, doors: DoorAssignment) -> Vec<f64> {
    let mut grad = vec![0.0; pre.len()];
    if doors.active.is_none() {
        let g = extreme_group(pre, group_size, |v| v > 0.0);
        for i in g * group_size..(g + 1) * group_size {
            if pre[i] < 0.0 {
                grad[i] = -1.0;
            }
        }
    }
    if doors.inactive.is_none() {
        let g = extreme_group(pre, group_size, |v| v < 0.0);
        for i in g * group_size..(g + 1) * group_size {
            if pre[i] > 0.0 {
                grad[i] += 1.0;
            }
        }
    }
    grad
}

/// Data-term choice for training. Cross entropy is the default; squared
/// error over the softmax outputs is the alternative formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    SquaredError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub loss_kind: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 256,
            learning_rate: 1e-3,
            lambda: 0.01,
            loss_kind: LossKind::CrossEntropy,
            seed: 0,
        }
    }
}

/// Per-epoch training metrics, measured on the training batches as they are
/// consumed (before each update).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub sat_rate: f64,
}

pub fn training_log_csv(log: &[EpochLog]) -> String {
    use std::fmt::Write;
    let mut out = String::from("epoch,loss,accuracy,sat_rate\n");
    for e in log {
        writeln!(out, "{},{},{},{}", e.epoch, e.loss, e.accuracy, e.sat_rate).unwrap();
    }
    out
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub net: SdNetwork,
    pub log: Vec<EpochLog>,
}

/// Batch loss: data term plus lambda times the mean per-sample sum of layer
/// penalties.
pub fn loss(net: &SdNetwork, inputs: ArrayView2<f64>, labels: &[usize], config: &TrainConfig) -> f64 {
    let (l, _) = batch_grads(net, inputs, labels, config);
    l.loss_sum / inputs.nrows() as f64
}

/// Batch loss with its gradients (per layer: weights then biases), scaled as
/// in training. Doors are treated as constant within the step.
pub fn loss_grads(
    net: &SdNetwork,
    inputs: ArrayView2<f64>,
    labels: &[usize],
    config: &TrainConfig,
) -> (f64, Vec<Array2<f64>>, Vec<Array1<f64>>) {
    let (l, g) = batch_grads(net, inputs, labels, config);
    (l.loss_sum / inputs.nrows() as f64, g.dw, g.db)
}

struct BatchStats {
    loss_sum: f64,
    correct: usize,
    doors_both: usize,
}

struct Grads {
    dw: Vec<Array2<f64>>,
    db: Vec<Array1<f64>>,
}

impl Grads {
    fn zeros_like(net: &SdNetwork) -> Self {
        Grads {
            dw: net.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            db: net.layers.iter().map(|l| Array1::zeros(l.biases.len())).collect(),
        }
    }

    fn add(&mut self, other: &Grads) {
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            *a += b;
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            *a += b;
        }
    }
}

/// Forward/backward over one batch. Gradients are scaled by 1/batch_rows.
/// The batch is processed in fixed-size row chunks (parallel when enabled)
/// and reduced in chunk order, so results do not depend on the thread count.
fn batch_grads(
    net: &SdNetwork,
    inputs: ArrayView2<f64>,
    labels: &[usize],
    config: &TrainConfig,
) -> (BatchStats, Grads) {
    let n = inputs.nrows();
    const GRAD_CHUNK: usize = 64;
    let chunks = n.div_ceil(GRAD_CHUNK);
    let results = exec::run_tasks(chunks, |i| {
        let lo = i * GRAD_CHUNK;
        let hi = ((i + 1) * GRAD_CHUNK).min(n);
        chunk_grads(
            net,
            inputs.slice(ndarray::s![lo..hi, ..]),
            &labels[lo..hi],
            config,
            n,
        )
    });
    let mut stats = BatchStats { loss_sum: 0.0, correct: 0, doors_both: 0 };
    let mut grads = Grads::zeros_like(net);
    for (s, g) in &results {
        stats.loss_sum += s.loss_sum;
        stats.correct += s.correct;
        stats.doors_both += s.doors_both;
        grads.add(g);
    }
    (stats, grads)
}

fn chunk_grads(
    net: &SdNetwork,
    x: ArrayView2<f64>,
    labels: &[usize],
    config: &TrainConfig,
    batch_rows: usize,
) -> (BatchStats, Grads) {
    let rows = x.nrows();
    let hidden = net.hidden_layers();
    let scale = 1.0 / batch_rows as f64;

    // Forward, keeping per-layer pre- and post-activations.
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(hidden);
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(hidden);
    let mut doors: Vec<Vec<DoorAssignment>> = Vec::with_capacity(hidden);
    let mut a = x.to_owned();
    for h in 0..hidden {
        let z = a.dot(&net.layers[h].weights) + &net.layers[h].biases;
        let layer_doors: Vec<DoorAssignment> = z
            .axis_iter(Axis(0))
            .map(|row| assign_doors(row.as_slice().unwrap(), net.group_size[h]))
            .collect();
        let mut act = z.clone();
        for (r, &d) in layer_doors.iter().enumerate() {
            let slopes = sda_slopes(d, net.group_count[h], net.group_size[h], net.alpha);
            for (c, s) in slopes.iter().enumerate() {
                act[[r, c]] = z[[r, c]] * s;
            }
        }
        pre.push(z);
        post.push(act.clone());
        doors.push(layer_doors);
        a = act;
    }
    let out_map = net.layers.last().unwrap();
    let logits = a.dot(&out_map.weights) + &out_map.biases;

    let mut stats = BatchStats { loss_sum: 0.0, correct: 0, doors_both: 0 };
    let mut dlogits = Array2::zeros(logits.dim());
    for r in 0..rows {
        let row = logits.row(r);
        let p = softmax(row);
        let y = labels[r];
        if argmax(row) == y {
            stats.correct += 1;
        }
        match config.loss_kind {
            LossKind::CrossEntropy => {
                // The clamp guards exp underflow only; NaN must propagate so
                // divergence is detected.
                let py = p[y];
                stats.loss_sum += if py.is_nan() { f64::NAN } else { -py.max(f64::MIN_POSITIVE).ln() };
                for k in 0..net.classes {
                    dlogits[[r, k]] = (p[k] - f64::from(k == y)) * scale;
                }
            }
            LossKind::SquaredError => {
                let mut g = Array1::zeros(net.classes);
                for k in 0..net.classes {
                    let diff = p[k] - f64::from(k == y);
                    stats.loss_sum += diff * diff;
                    g[k] = 2.0 * diff;
                }
                let gp = g.dot(&p);
                for k in 0..net.classes {
                    dlogits[[r, k]] = p[k] * (g[k] - gp) * scale;
                }
            }
        }
        for h in 0..hidden {
            let d = doors[h][r];
            if d.both_present() {
                stats.doors_both += 1;
            }
            let (pa, pi) =
                door_penalty(pre[h].row(r).as_slice().unwrap(), net.group_size[h], d);
            stats.loss_sum += config.lambda * (pa + pi);
        }
    }

    let mut grads = Grads::zeros_like(net);
    let last = net.layers.len() - 1;
    let a_top = if hidden > 0 { post[hidden - 1].view() } else { x.view() };
    grads.dw[last] = a_top.t().dot(&dlogits);
    grads.db[last] = dlogits.sum_axis(Axis(0));
    let mut da = dlogits.dot(&net.layers[last].weights.t());

    for h in (0..hidden).rev() {
        let mut dz = da;
        for r in 0..rows {
            let d = doors[h][r];
            let slopes = sda_slopes(d, net.group_count[h], net.group_size[h], net.alpha);
            let pgrad =
                door_penalty_grad(pre[h].row(r).as_slice().unwrap(), net.group_size[h], d);
            for c in 0..slopes.len() {
                dz[[r, c]] = dz[[r, c]] * slopes[c] + config.lambda * pgrad[c] * scale;
            }
        }
        let a_below = if h > 0 { post[h - 1].view() } else { x.view() };
        grads.dw[h] = a_below.t().dot(&dz);
        grads.db[h] = dz.sum_axis(Axis(0));
        da = dz.dot(&net.layers[h].weights.t());
    }
    (stats, grads)
}

struct Adam {
    mw: Vec<Array2<f64>>,
    vw: Vec<Array2<f64>>,
    mb: Vec<Array1<f64>>,
    vb: Vec<Array1<f64>>,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(net: &SdNetwork) -> Self {
        Adam {
            mw: net.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            vw: net.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            mb: net.layers.iter().map(|l| Array1::zeros(l.biases.len())).collect(),
            vb: net.layers.iter().map(|l| Array1::zeros(l.biases.len())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut SdNetwork, grads: &Grads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        for l in 0..net.layers.len() {
            ndarray::Zip::from(&mut self.mw[l])
                .and(&grads.dw[l])
                .for_each(|m, &g| *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g);
            ndarray::Zip::from(&mut self.vw[l])
                .and(&grads.dw[l])
                .for_each(|v, &g| *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g);
            ndarray::Zip::from(&mut net.layers[l].weights)
                .and(&self.mw[l])
                .and(&self.vw[l])
                .for_each(|w, &m, &v| *w -= lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS));
            ndarray::Zip::from(&mut self.mb[l])
                .and(&grads.db[l])
                .for_each(|m, &g| *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g);
            ndarray::Zip::from(&mut self.vb[l])
                .and(&grads.db[l])
                .for_each(|v, &g| *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g);
            ndarray::Zip::from(&mut net.layers[l].biases)
                .and(&self.mb[l])
                .and(&self.vb[l])
                .for_each(|b, &m, &v| *b -= lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS));
        }
    }
}

/// Trains a fresh network. Deterministic given the seed: stream 0 of the
/// seed initializes weights, stream 1 drives the epoch shuffles.
pub fn train(
    arch: &Architecture,
    alpha: f64,
    config: &TrainConfig,
    data: &Dataset,
) -> Result<TrainOutcome> {
    if data.len() == 0 {
        return Err(Error::BadDataset("empty training set".into()));
    }
    assert!(config.batch_size >= 1 && config.lambda >= 0.0);
    let mut init_rng = exec::stream_rng(config.seed, 0);
    let mut net = SdNetwork::init(
        data.inputs.ncols(),
        arch,
        data.classes,
        alpha,
        data.bounds.clone(),
        &mut init_rng,
    );
    let mut shuffle_rng = exec::stream_rng(config.seed, 1);
    let mut adam = Adam::new(&net);
    let mut log = Vec::with_capacity(config.epochs);
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_stats = BatchStats { loss_sum: 0.0, correct: 0, doors_both: 0 };
        for batch in order.chunks(config.batch_size) {
            let x = data.gather_inputs(batch);
            let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let (stats, grads) = batch_grads(&net, x.view(), &y, config);
            if !stats.loss_sum.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            epoch_stats.loss_sum += stats.loss_sum;
            epoch_stats.correct += stats.correct;
            epoch_stats.doors_both += stats.doors_both;
            adam.step(&mut net, &grads, config.learning_rate);
        }
        log.push(EpochLog {
            epoch,
            loss: epoch_stats.loss_sum / n as f64,
            accuracy: epoch_stats.correct as f64 / n as f64,
            sat_rate: epoch_stats.doors_both as f64 / (n * net.hidden_layers().max(1)) as f64,
        });
    }
    Ok(TrainOutcome { net, log })
}

// ---------------------------------------------------------------------------
// Model (de)serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

/// On-disk model. Field order is fixed so seeded reruns serialize
/// byte-identically.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: String,
    pub alpha: f64,
    pub group_size: Vec<usize>,
    pub group_count: Vec<usize>,
    pub classes: usize,
    pub input_bounds: Bounds,
    layers: Vec<LayerFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
}

impl ModelFile {
    pub fn from_net(net: &SdNetwork, train_config: Option<TrainConfig>) -> Self {
        ModelFile {
            version: env!("CARGO_PKG_VERSION").to_string(),
            alpha: net.alpha,
            group_size: net.group_size.clone(),
            group_count: net.group_count.clone(),
            classes: net.classes,
            input_bounds: net.input_bounds.clone(),
            layers: net
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
                    biases: l.biases.to_vec(),
                })
                .collect(),
            train_config,
        }
    }

    pub fn into_net(self) -> Result<SdNetwork> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.into_iter().enumerate() {
            let rows = l.weights.len();
            let cols = l.biases.len();
            if l.weights.iter().any(|r| r.len() != cols) {
                return Err(Error::BadDataset(format!("layer {i}: ragged weight matrix")));
            }
            let flat: Vec<f64> = l.weights.into_iter().flatten().collect();
            layers.push(AffineMap::new(
                i,
                i + 1,
                Array2::from_shape_vec((rows, cols), flat).expect("shape checked above"),
                Array1::from_vec(l.biases),
            ));
        }
        Ok(SdNetwork::new(
            layers,
            self.group_size,
            self.group_count,
            self.alpha,
            self.classes,
            self.input_bounds,
        ))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}
