//! A small permutation-invariant point-cloud classifier.
//!
//! Architecture: a shared per-point MLP (3 -> 64 -> 128 -> 256, rectified),
//! a global channelwise max pool, and a dense head (256 -> 128 -> C).
//! Everything is double precision with hand-written backpropagation; the
//! max pool routes gradients winner-take-all with ties broken toward the
//! lowest point index, so gradients are deterministic.

mod model_io;
mod train;

pub use model_io::{load_model, save_model};
pub use train::{evaluate_accuracy, load_split, train, EpochStats, TrainConfig, TrainReport};
#[doc(hidden)]
pub use train::{loss_at_flat, param_grads_for};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::geometry::{Point3, PointCloud};
use crate::{seed, Error, Result};

pub const POINT_WIDTHS: [usize; 4] = [3, 64, 128, 256];
pub const HEAD_HIDDEN: usize = 128;

/// One dense layer; `w` is stored out-by-in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Dense {
        Dense {
            w: Array2::zeros((out, inp)),
            b: Array1::zeros(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    /// Shared per-point layers (widths `POINT_WIDTHS`).
    pub point_layers: Vec<Dense>,
    /// Dense head after the max pool; last layer is linear with `n_classes` outputs.
    pub head_layers: Vec<Dense>,
    pub n_classes: usize,
}

/// Forward readout: logits, softmax probabilities, argmax class.
#[derive(Debug, Clone)]
pub struct LogitsRecord {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub predicted: usize,
}

impl LogitsRecord {
    fn from_logits(logits: Vec<f64>) -> LogitsRecord {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let probabilities = exps.iter().map(|&e| e / sum).collect();
        let predicted = argmax_lowest(&logits);
        LogitsRecord {
            logits,
            probabilities,
            predicted,
        }
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Scalar readouts of the logits that gradients can flow through.
#[derive(Debug, Clone, Copy)]
pub enum ScalarObjective {
    /// `scale * logits[class]`.
    Logit { class: usize, scale: f64 },
    /// Margin loss `max(f_label - max_{c != label} f_c, 0)`.
    MarginLoss { label: usize },
}

impl ScalarObjective {
    pub fn value(&self, logits: &[f64]) -> f64 {
        match *self {
            ScalarObjective::Logit { class, scale } => scale * logits[class],
            ScalarObjective::MarginLoss { label } => margin_loss(logits, label),
        }
    }

    /// Gradient of the scalar with respect to the logits. The margin kink
    /// at zero uses the one-sided subgradient 0.
    pub fn dlogits(&self, logits: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; logits.len()];
        match *self {
            ScalarObjective::Logit { class, scale } => d[class] = scale,
            ScalarObjective::MarginLoss { label } => {
                let runner = runner_up(logits, label);
                if logits[label] - logits[runner] > 0.0 {
                    d[label] = 1.0;
                    d[runner] = -1.0;
                }
            }
        }
        d
    }
}

/// `max(f_label - max_{c != label} f_c, 0)`; zero once any other class wins.
pub fn margin_loss(logits: &[f64], label: usize) -> f64 {
    (logits[label] - logits[runner_up(logits, label)]).max(0.0)
}

fn runner_up(logits: &[f64], label: usize) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in logits.iter().enumerate() {
        if i == label {
            continue;
        }
        if best == usize::MAX || v > logits[best] {
            best = i;
        }
    }
    best
}

/// Cached activations of the per-point layers for a specific point list.
#[derive(Debug, Clone)]
pub struct PointFeatTrace {
    pub x: Array2<f64>,
    pub a1: Array2<f64>,
    pub a2: Array2<f64>,
    /// Final per-point features; the pool input.
    pub a3: Array2<f64>,
}

impl PointFeatTrace {
    pub fn gather_rows(&self, rows: &[usize]) -> PointFeatTrace {
        PointFeatTrace {
            x: self.x.select(Axis(0), rows),
            a1: self.a1.select(Axis(0), rows),
            a2: self.a2.select(Axis(0), rows),
            a3: self.a3.select(Axis(0), rows),
        }
    }
}

/// Cached head activations.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    pub pooled: Array1<f64>,
    pub hidden: Array1<f64>,
    pub record: LogitsRecord,
}

/// Per-parameter gradients, same shapes as the model.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub point_layers: Vec<Dense>,
    pub head_layers: Vec<Dense>,
}

/// Gradient of a scalar objective with respect to input coordinates.
pub type InputGradient = Vec<[f64; 3]>;

impl ClassifierModel {
    /// Fresh model with fan-in-scaled uniform weights and zero biases.
    pub fn new_seeded(n_classes: usize, seed_value: u64) -> ClassifierModel {
        let mut rng = seed::rng(seed_value);
        let mut init = |out: usize, inp: usize| {
            let bound = 1.0 / (inp as f64).sqrt();
            let mut layer = Dense::zeros(out, inp);
            for v in layer.w.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            layer
        };
        let point_layers = (0..POINT_WIDTHS.len() - 1)
            .map(|i| init(POINT_WIDTHS[i + 1], POINT_WIDTHS[i]))
            .collect();
        let feat = *POINT_WIDTHS.last().unwrap();
        let head_layers = vec![init(HEAD_HIDDEN, feat), init(n_classes, HEAD_HIDDEN)];
        ClassifierModel {
            point_layers,
            head_layers,
            n_classes,
        }
    }

    pub fn feature_width(&self) -> usize {
        *POINT_WIDTHS.last().unwrap()
    }

    /// Run the shared per-point MLP, keeping every activation.
    pub fn point_feature_trace(&self, points: &[Point3]) -> PointFeatTrace {
        let n = points.len();
        let mut x = Array2::zeros((n, 3));
        for (i, p) in points.iter().enumerate() {
            x[[i, 0]] = p.x;
            x[[i, 1]] = p.y;
            x[[i, 2]] = p.z;
        }
        let a1 = dense_forward_relu(&x, &self.point_layers[0]);
        let a2 = dense_forward_relu(&a1, &self.point_layers[1]);
        let a3 = dense_forward_relu(&a2, &self.point_layers[2]);
        PointFeatTrace { x, a1, a2, a3 }
    }

    /// Head forward from a pooled feature vector.
    pub fn head_forward(&self, pooled: Array1<f64>) -> HeadTrace {
        let l0 = &self.head_layers[0];
        let hidden = (l0.w.dot(&pooled) + &l0.b).mapv(|v| v.max(0.0));
        let l1 = &self.head_layers[1];
        let logits = l1.w.dot(&hidden) + &l1.b;
        HeadTrace {
            pooled,
            hidden,
            record: LogitsRecord::from_logits(logits.to_vec()),
        }
    }

    pub fn forward(&self, cloud: &PointCloud) -> Result<LogitsRecord> {
        let (_, head) = self.forward_traced(cloud)?;
        Ok(head.record)
    }

    pub fn forward_traced(&self, cloud: &PointCloud) -> Result<(PointFeatTrace, HeadTrace)> {
        if cloud.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "forward on empty cloud {:?}",
                cloud.name
            )));
        }
        let trace = self.point_feature_trace(&cloud.points);
        let (pooled, _) = colmax_with_winners(&trace.a3);
        let head = self.head_forward(Array1::from(pooled));
        Ok((trace, head))
    }

    /// Gradient of `objective` with respect to each input coordinate.
    pub fn input_gradient(
        &self,
        cloud: &PointCloud,
        objective: ScalarObjective,
    ) -> Result<InputGradient> {
        let (trace, head) = self.forward_traced(cloud)?;
        let (_, winners) = colmax_with_winners(&trace.a3);
        let dlogits = objective.dlogits(&head.record.logits);
        let dpooled = self.head_backward(&head, &dlogits, None);
        let channel_rows: Vec<Option<usize>> = winners.iter().map(|&r| Some(r)).collect();
        let mut grad = vec![[0.0f64; 3]; cloud.len()];
        self.pool_backward(&trace, &channel_rows, &dpooled, &mut grad, None);
        Ok(grad)
    }

    /// Backward through the head. Returns d(objective)/d(pooled); fills
    /// head parameter gradients when `grads` is given.
    pub fn head_backward(
        &self,
        head: &HeadTrace,
        dlogits: &[f64],
        grads: Option<&mut ParamGrads>,
    ) -> Array1<f64> {
        let dlogits = Array1::from(dlogits.to_vec());
        let l1 = &self.head_layers[1];
        let dhidden_post = l1.w.t().dot(&dlogits);
        let relu_mask = head.hidden.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let dhidden = &dhidden_post * &relu_mask;
        let l0 = &self.head_layers[0];
        let dpooled = l0.w.t().dot(&dhidden);
        if let Some(g) = grads {
            g.head_layers[1].w += &outer(&dlogits, &head.hidden);
            g.head_layers[1].b += &dlogits;
            g.head_layers[0].w += &outer(&dhidden, &head.pooled);
            g.head_layers[0].b += &dhidden;
        }
        dpooled
    }

    /// Route `dpooled` through the max pool and the per-point layers.
    ///
    /// `channel_rows[c]` names the trace row that won channel `c`, or `None`
    /// to block the channel (the attack blocks channels won by points it is
    /// not allowed to move). `input_grad` accumulates coordinate gradients
    /// indexed by trace row; `grads` accumulates parameter gradients.
    pub fn pool_backward(
        &self,
        trace: &PointFeatTrace,
        channel_rows: &[Option<usize>],
        dpooled: &Array1<f64>,
        input_grad: &mut [[f64; 3]],
        grads: Option<&mut ParamGrads>,
    ) {
        let feat = self.feature_width();
        // Unique receiving rows, ascending for determinism.
        let mut rows: Vec<usize> = channel_rows
            .iter()
            .enumerate()
            .filter_map(|(c, r)| if dpooled[c] != 0.0 { *r } else { None })
            .collect();
        rows.sort_unstable();
        rows.dedup();
        if rows.is_empty() {
            return;
        }
        let pos: std::collections::HashMap<usize, usize> =
            rows.iter().enumerate().map(|(k, &r)| (r, k)).collect();
        let mut da3 = Array2::zeros((rows.len(), feat));
        for (c, r) in channel_rows.iter().enumerate() {
            if let Some(r) = r {
                if dpooled[c] != 0.0 {
                    da3[[pos[r], c]] += dpooled[c];
                }
            }
        }
        let sub = trace.gather_rows(&rows);
        let dx = self.backprop_point_rows(&sub, da3, grads);
        for (k, &r) in rows.iter().enumerate() {
            input_grad[r][0] += dx[[k, 0]];
            input_grad[r][1] += dx[[k, 1]];
            input_grad[r][2] += dx[[k, 2]];
        }
    }

    /// Backward through the per-point MLP for a compact row block.
    fn backprop_point_rows(
        &self,
        t: &PointFeatTrace,
        da3: Array2<f64>,
        grads: Option<&mut ParamGrads>,
    ) -> Array2<f64> {
        let dz3 = &da3 * &relu_mask(&t.a3);
        let da2 = dz3.dot(&self.point_layers[2].w);
        let dz2 = &da2 * &relu_mask(&t.a2);
        let da1 = dz2.dot(&self.point_layers[1].w);
        let dz1 = &da1 * &relu_mask(&t.a1);
        let dx = dz1.dot(&self.point_layers[0].w);
        if let Some(g) = grads {
            g.point_layers[2].w += &dz3.t().dot(&t.a2);
            g.point_layers[2].b += &dz3.sum_axis(Axis(0));
            g.point_layers[1].w += &dz2.t().dot(&t.a1);
            g.point_layers[1].b += &dz2.sum_axis(Axis(0));
            g.point_layers[0].w += &dz1.t().dot(&t.x);
            g.point_layers[0].b += &dz1.sum_axis(Axis(0));
        }
        dx
    }

    // Flat parameter order: point layers then head layers, each W row-major
    // followed by b. Model I/O and the optimizer share this order.
    pub fn param_count(&self) -> usize {
        self.layers()
            .map(|l| l.w.len() + l.b.len())
            .sum()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.point_layers.iter().chain(self.head_layers.iter())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for l in self
            .point_layers
            .iter_mut()
            .chain(self.head_layers.iter_mut())
        {
            for v in l.w.iter_mut() {
                *v = *it.next().expect("flat parameter vector too short");
            }
            for v in l.b.iter_mut() {
                *v = *it.next().expect("flat parameter vector too short");
            }
        }
        assert!(it.next().is_none(), "flat parameter vector too long");
    }
}

impl ParamGrads {
    pub fn zeros_like(model: &ClassifierModel) -> ParamGrads {
        ParamGrads {
            point_layers: model
                .point_layers
                .iter()
                .map(|l| Dense::zeros(l.w.nrows(), l.w.ncols()))
                .collect(),
            head_layers: model
                .head_layers
                .iter()
                .map(|l| Dense::zeros(l.w.nrows(), l.w.ncols()))
                .collect(),
        }
    }

    pub fn add(&mut self, other: &ParamGrads) {
        for (a, b) in self
            .point_layers
            .iter_mut()
            .chain(self.head_layers.iter_mut())
            .zip(other.point_layers.iter().chain(other.head_layers.iter()))
        {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in self
            .point_layers
            .iter_mut()
            .chain(self.head_layers.iter_mut())
        {
            l.w *= s;
            l.b *= s;
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in self.point_layers.iter().chain(self.head_layers.iter()) {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }
}

fn dense_forward_relu(input: &Array2<f64>, layer: &Dense) -> Array2<f64> {
    let mut z = input.dot(&layer.w.t());
    z += &layer.b;
    z.mapv_into(|v| v.max(0.0))
}

fn relu_mask(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (n, m) = (a.len(), b.len());
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            out[[i, j]] = a[i] * b[j];
        }
    }
    out
}

/// Channelwise max over rows with the lowest winning row index per channel.
pub fn colmax_with_winners(a: &Array2<f64>) -> (Vec<f64>, Vec<usize>) {
    let (n, m) = a.dim();
    assert!(n > 0, "max pool over zero points");
    let mut pooled = vec![f64::NEG_INFINITY; m];
    let mut winners = vec![0usize; m];
    for r in 0..n {
        let row = a.row(r);
        for c in 0..m {
            if row[c] > pooled[c] {
                pooled[c] = row[c];
                winners[c] = r;
            }
        }
    }
    (pooled, winners)
}
