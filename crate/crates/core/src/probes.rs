//! Task-specific heads trained on frozen embeddings: a single fully-connected
//! layer or an MLP, with multi-label binary cross-entropy, masked missing
//! labels, adaptive-moment optimization, and validation-AUC model selection.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, EmbeddingSet};
use crate::error::{Error, Result};
use crate::metrics::{auc, ScoreTable};
use crate::sampling::substream_rng;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const SCORE_CLAMP: f64 = 1e-15;
/// Substream offset separating batch-shuffle streams from layer-init streams.
const SHUFFLE_STREAM: u64 = 0x10000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Linear,
    Mlp {
        hidden_layers: usize,
        hidden_width: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub architecture: Architecture,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl ProbeSpec {
    fn with_architecture(architecture: Architecture, seed: u64) -> Self {
        ProbeSpec {
            architecture,
            learning_rate: 1e-4,
            batch_size: 256,
            max_epochs: 100,
            patience: 10,
            seed,
        }
    }

    /// Single fully-connected classification layer.
    pub fn linear(seed: u64) -> Self {
        Self::with_architecture(Architecture::Linear, seed)
    }

    /// Three hidden layers, width 256, rectified-linear activations.
    pub fn mlp3(seed: u64) -> Self {
        Self::with_architecture(
            Architecture::Mlp {
                hidden_layers: 3,
                hidden_width: 256,
            },
            seed,
        )
    }

    /// Five hidden layers, width 256, rectified-linear activations.
    pub fn mlp5(seed: u64) -> Self {
        Self::with_architecture(
            Architecture::Mlp {
                hidden_layers: 5,
                hidden_width: 256,
            },
            seed,
        )
    }

    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0
            || self.batch_size == 0
            || self.max_epochs == 0
            || self.patience == 0
        {
            return Err(Error::invalid(
                "probe spec",
                "all training hyperparameters must be positive",
            ));
        }
        if let Architecture::Mlp {
            hidden_layers,
            hidden_width,
        } = self.architecture
        {
            if hidden_layers == 0 || hidden_width == 0 {
                return Err(Error::invalid(
                    "probe spec",
                    "hidden layers and width must be positive",
                ));
            }
        }
        Ok(())
    }

    /// Layer dimensions from input `d` to `labels` outputs.
    fn layer_dims(&self, d: usize, labels: usize) -> Vec<(usize, usize)> {
        match self.architecture {
            Architecture::Linear => vec![(labels, d)],
            Architecture::Mlp {
                hidden_layers,
                hidden_width,
            } => {
                let mut dims = vec![(hidden_width, d)];
                for _ in 1..hidden_layers {
                    dims.push((hidden_width, hidden_width));
                }
                dims.push((labels, hidden_width));
                dims
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// out x in.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// A trained head: rectified-linear hidden layers, logistic outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub layers: Vec<Layer>,
    pub input_dim: usize,
    pub labels: Vec<String>,
}

impl ProbeModel {
    /// Seeded initialization: layer `i` draws from substream `i` of the spec
    /// seed, weights uniform in ±1/sqrt(fan_in), biases zero.
    pub fn init(spec: &ProbeSpec, input_dim: usize, labels: Vec<String>) -> Result<Self> {
        spec.validate()?;
        if input_dim == 0 || labels.is_empty() {
            return Err(Error::invalid("probe init", "empty input or label set"));
        }
        let mut layers = Vec::new();
        for (i, (out, inp)) in spec.layer_dims(input_dim, labels.len()).iter().enumerate() {
            let mut rng = substream_rng(spec.seed, i as u64);
            let bound = 1.0 / (*inp as f64).sqrt();
            let weight =
                Array2::from_shape_fn((*out, *inp), |_| rng.random_range(-bound..bound));
            layers.push(Layer {
                weight,
                bias: Array1::zeros(*out),
            });
        }
        Ok(ProbeModel {
            layers,
            input_dim,
            labels,
        })
    }

    /// Post-activation outputs of every layer; the last entry holds logits.
    fn forward(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weight.t()) + &layer.bias;
            if i + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(z.clone());
            current = z;
        }
        activations
    }

    fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(x).pop().expect("at least one layer")
    }

    fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }
}

/// Numerically stable binary cross-entropy from a logit.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Mean masked BCE over active entries. Returns (loss sum, active count).
fn masked_loss_sum(logits: &Array2<f64>, y: &Array2<f64>, mask: &Array2<f64>) -> (f64, usize) {
    let mut sum = 0.0;
    let mut active = 0usize;
    for ((z, y), m) in logits.iter().zip(y.iter()).zip(mask.iter()) {
        if *m > 0.0 {
            sum += bce_from_logit(*z, *y);
            active += 1;
        }
    }
    (sum, active)
}

/// Gradients of the mean masked BCE with respect to every parameter.
fn backward(
    model: &ProbeModel,
    x: &Array2<f64>,
    y: &Array2<f64>,
    mask: &Array2<f64>,
    active: usize,
) -> Vec<Layer> {
    let activations = model.forward(x);
    let n_layers = model.layers.len();

    // dL/dz at the output, averaged over active entries
    let logits = &activations[n_layers - 1];
    let mut delta = Array2::zeros(logits.dim());
    for ((d, (&z, &t)), &m) in delta
        .iter_mut()
        .zip(logits.iter().zip(y.iter()))
        .zip(mask.iter())
    {
        if m > 0.0 {
            *d = (sigmoid(z) - t) / active as f64;
        }
    }

    let mut grads: Vec<Layer> = Vec::with_capacity(n_layers);
    for l in (0..n_layers).rev() {
        let input: &Array2<f64> = if l == 0 { x } else { &activations[l - 1] };
        let grad_w = delta.t().dot(input);
        let grad_b = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut next = delta.dot(&model.layers[l].weight);
            // rectifier gate: post-activation > 0 iff pre-activation > 0
            for (d, &a) in next.iter_mut().zip(activations[l - 1].iter()) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            delta = next;
        }
        grads.push(Layer {
            weight: grad_w,
            bias: grad_b,
        });
    }
    grads.reverse();
    grads
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_auc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_macro_auc\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_macro_auc));
        }
        out
    }
}

/// Supervised design matrix: embeddings aligned with label targets and a
/// missing-label mask.
struct Assembled {
    x: Array2<f64>,
    y: Array2<f64>,
    mask: Array2<f64>,
}

fn assemble(
    embeddings: &EmbeddingSet,
    cohort: &Cohort,
    labels: &[String],
    drop_fully_masked: bool,
) -> Result<Assembled> {
    let label_idx: Vec<usize> = labels
        .iter()
        .map(|l| {
            cohort
                .label_index(l)
                .ok_or_else(|| Error::invalid("label", format!("unknown label {l:?}")))
        })
        .collect::<Result<_>>()?;

    let mut keep_rows = Vec::new();
    let mut y_rows: Vec<Vec<f64>> = Vec::new();
    let mut m_rows: Vec<Vec<f64>> = Vec::new();
    for (row, id) in embeddings.ids().iter().enumerate() {
        let crow = cohort.row_of(id).ok_or_else(|| Error::Alignment {
            detail: format!("sample id {id:?} not present in cohort"),
        })?;
        let mut yr = Vec::with_capacity(labels.len());
        let mut mr = Vec::with_capacity(labels.len());
        let mut any = false;
        for &li in &label_idx {
            match cohort.label_value(crow, li) {
                Some(v) => {
                    yr.push(if v { 1.0 } else { 0.0 });
                    mr.push(1.0);
                    any = true;
                }
                None => {
                    yr.push(0.0);
                    mr.push(0.0);
                }
            }
        }
        if any || !drop_fully_masked {
            keep_rows.push(row);
            y_rows.push(yr);
            m_rows.push(mr);
        }
    }
    if keep_rows.is_empty() {
        return Err(Error::NoSupervisedSignal);
    }

    let d = embeddings.dim();
    let mut x = Array2::zeros((keep_rows.len(), d));
    for (out, &r) in keep_rows.iter().enumerate() {
        x.row_mut(out).assign(&embeddings.matrix().row(r));
    }
    let flat_y: Vec<f64> = y_rows.into_iter().flatten().collect();
    let flat_m: Vec<f64> = m_rows.into_iter().flatten().collect();
    let y = Array2::from_shape_vec((keep_rows.len(), labels.len()), flat_y).expect("shape");
    let mask = Array2::from_shape_vec((keep_rows.len(), labels.len()), flat_m).expect("shape");
    Ok(Assembled { x, y, mask })
}

struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: usize,
}

impl AdamState {
    fn new(model: &ProbeModel) -> Self {
        let zeros = |layers: &[Layer]| {
            layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect::<Vec<_>>()
        };
        AdamState {
            m: zeros(&model.layers),
            v: zeros(&model.layers),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut ProbeModel, grads: &[Layer], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (l, grad) in grads.iter().enumerate() {
            let update =
                |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                };
            for ((p, &g), (m, v)) in model.layers[l]
                .weight
                .iter_mut()
                .zip(grad.weight.iter())
                .zip(self.m[l].weight.iter_mut().zip(self.v[l].weight.iter_mut()))
            {
                update(p, g, m, v);
            }
            for ((p, &g), (m, v)) in model.layers[l]
                .bias
                .iter_mut()
                .zip(grad.bias.iter())
                .zip(self.m[l].bias.iter_mut().zip(self.v[l].bias.iter_mut()))
            {
                update(p, g, m, v);
            }
        }
    }
}

/// Trains a head on frozen embeddings, selecting the epoch with the best
/// validation macro-AUC and stopping after `patience` epochs without
/// improvement. Deterministic given the spec seed. Samples whose labels are
/// all missing are dropped before training, so they cannot influence either
/// gradients or batch composition.
pub fn train_probe(
    spec: &ProbeSpec,
    train: (&EmbeddingSet, &Cohort),
    val: (&EmbeddingSet, &Cohort),
    labels: &[String],
) -> Result<(ProbeModel, TrainingLog)> {
    spec.validate()?;
    if labels.is_empty() {
        return Err(Error::invalid("train_probe", "no labels requested"));
    }
    let tr = assemble(train.0, train.1, labels, true)?;
    let va = assemble(val.0, val.1, labels, true)?;
    if val.0.dim() != train.0.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.0.dim(),
            found: val.0.dim(),
            context: "validation embedding width".into(),
        });
    }

    // every trained label needs both classes in the training data
    for (li, label) in labels.iter().enumerate() {
        let mut pos = false;
        let mut neg = false;
        for row in 0..tr.x.nrows() {
            if tr.mask[(row, li)] > 0.0 {
                if tr.y[(row, li)] > 0.5 {
                    pos = true;
                } else {
                    neg = true;
                }
            }
        }
        if !(pos && neg) {
            return Err(Error::SingleClassLabel {
                label: label.clone(),
            });
        }
    }

    let mut model = ProbeModel::init(spec, train.0.dim(), labels.to_vec())?;
    let mut adam = AdamState::new(&model);
    let n = tr.x.nrows();

    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(f64, ProbeModel)> = None;

    for epoch in 1..=spec.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = substream_rng(spec.seed, SHUFFLE_STREAM + epoch as u64);
        for j in 0..n.saturating_sub(1) {
            let k = rng.random_range(j..n);
            order.swap(j, k);
        }

        let mut epoch_loss_sum = 0.0;
        let mut epoch_active = 0usize;
        for (batch_no, chunk) in order.chunks(spec.batch_size).enumerate() {
            let xb = take_rows(&tr.x, chunk);
            let yb = take_rows(&tr.y, chunk);
            let mb = take_rows(&tr.mask, chunk);
            let logits = model.logits(&xb);
            let (loss_sum, active) = masked_loss_sum(&logits, &yb, &mb);
            if active == 0 {
                continue;
            }
            if !loss_sum.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                    detail: format!("loss sum {loss_sum} over {active} active entries"),
                });
            }
            epoch_loss_sum += loss_sum;
            epoch_active += active;
            let grads = backward(&model, &xb, &yb, &mb, active);
            adam.step(&mut model, &grads, spec.learning_rate);
        }
        let train_loss = epoch_loss_sum / epoch_active.max(1) as f64;

        let val_auc = macro_auc(&model, &va)?;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_macro_auc: val_auc,
        });

        let improved = best.as_ref().is_none_or(|(b, _)| val_auc > *b);
        if improved {
            best = Some((val_auc, model.clone()));
            log.best_epoch = epoch;
        } else if epoch - log.best_epoch >= spec.patience {
            break;
        }
    }

    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, log))
}

fn take_rows(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), m.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&m.row(r));
    }
    out
}

/// Mean AUC over the labels that have both classes in the validation data.
fn macro_auc(model: &ProbeModel, va: &Assembled) -> Result<f64> {
    let logits = model.logits(&va.x);
    let mut aucs = Vec::new();
    for li in 0..va.y.ncols() {
        let mut scores = Vec::new();
        let mut targets = Vec::new();
        for row in 0..va.x.nrows() {
            if va.mask[(row, li)] > 0.0 {
                scores.push(logits[(row, li)]);
                targets.push(va.y[(row, li)] > 0.5);
            }
        }
        if targets.iter().any(|&t| t) && targets.iter().any(|&t| !t) {
            aucs.push(auc(&scores, &targets)?);
        }
    }
    if aucs.is_empty() {
        return Err(Error::invalid(
            "validation",
            "no label has both classes present; model selection is impossible",
        ));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

/// Forward pass with logistic outputs. Scores are clamped into the open
/// interval (0, 1) so downstream log-odds stay finite.
pub fn predict_probe(model: &ProbeModel, x: &EmbeddingSet) -> Result<ScoreTable> {
    if x.dim() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            found: x.dim(),
            context: "predict_probe input width".into(),
        });
    }
    let mut scores = model.logits(x.matrix());
    scores.mapv_inplace(|z| sigmoid(z).clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP));
    ScoreTable::new(x.ids().to_vec(), model.labels.clone(), scores)
}

/// Compares the analytic gradient of the masked loss against central finite
/// differences (step 1e-5) over every parameter. Entries with both gradient
/// magnitudes below 1e-6 compare by absolute difference. Returns the maximum
/// error over all parameters.
pub fn gradient_check(
    spec: &ProbeSpec,
    x: &Array2<f64>,
    y: &Array2<f64>,
    mask: &Array2<f64>,
) -> Result<f64> {
    if x.nrows() == 0 || x.nrows() != y.nrows() || y.dim() != mask.dim() {
        return Err(Error::invalid("gradient_check", "inconsistent batch shapes"));
    }
    let labels: Vec<String> = (0..y.ncols()).map(|i| format!("label{i}")).collect();
    let mut model = ProbeModel::init(spec, x.ncols(), labels)?;
    let (_, active) = masked_loss_sum(&model.logits(x), y, mask);
    if active == 0 {
        return Err(Error::NoSupervisedSignal);
    }
    let analytic = backward(&model, x, y, mask, active);

    let step = 1e-5;
    let mut max_err: f64 = 0.0;
    let n_params = model.parameter_count();
    for p in 0..n_params {
        let a = read_grad(&analytic, p);
        let orig = read_param(&model, p);
        write_param(&mut model, p, orig + step);
        let (up, _) = masked_loss_sum(&model.logits(x), y, mask);
        write_param(&mut model, p, orig - step);
        let (down, _) = masked_loss_sum(&model.logits(x), y, mask);
        write_param(&mut model, p, orig);
        let numeric = (up - down) / (active as f64 * 2.0 * step);
        let err = if a.abs().max(numeric.abs()) > 1e-6 {
            (a - numeric).abs() / a.abs().max(numeric.abs())
        } else {
            (a - numeric).abs()
        };
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

fn locate(model: &ProbeModel, p: usize) -> (usize, bool, usize) {
    let mut offset = p;
    for (l, layer) in model.layers.iter().enumerate() {
        if offset < layer.weight.len() {
            return (l, true, offset);
        }
        offset -= layer.weight.len();
        if offset < layer.bias.len() {
            return (l, false, offset);
        }
        offset -= layer.bias.len();
    }
    panic!("parameter index out of range");
}

fn read_param(model: &ProbeModel, p: usize) -> f64 {
    let (l, is_weight, off) = locate(model, p);
    if is_weight {
        *model.layers[l].weight.as_slice().expect("contiguous").get(off).unwrap()
    } else {
        model.layers[l].bias[off]
    }
}

fn write_param(model: &mut ProbeModel, p: usize, value: f64) {
    let (l, is_weight, off) = locate(model, p);
    if is_weight {
        model.layers[l].weight.as_slice_mut().expect("contiguous")[off] = value;
    } else {
        model.layers[l].bias[off] = value;
    }
}

fn read_grad(grads: &[Layer], p: usize) -> f64 {
    let mut offset = p;
    for layer in grads {
        if offset < layer.weight.len() {
            return layer.weight.as_slice().expect("contiguous")[offset];
        }
        offset -= layer.weight.len();
        if offset < layer.bias.len() {
            return layer.bias[offset];
        }
        offset -= layer.bias.len();
    }
    panic!("parameter index out of range");
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerJson {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProbeModelJson {
    input_dim: usize,
    labels: Vec<String>,
    hidden_activation: String,
    output_activation: String,
    layers: Vec<LayerJson>,
}

impl ProbeModel {
    pub fn to_json(&self) -> String {
        let doc = ProbeModelJson {
            input_dim: self.input_dim,
            labels: self.labels.clone(),
            hidden_activation: "relu".into(),
            output_activation: "sigmoid".into(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerJson {
                    rows: l.weight.nrows(),
                    cols: l.weight.ncols(),
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("plain floats serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ProbeModelJson = serde_json::from_str(text)
            .map_err(|e| Error::invalid("probe model json", e.to_string()))?;
        let mut layers = Vec::with_capacity(doc.layers.len());
        let mut expected_in = doc.input_dim;
        for (i, l) in doc.layers.iter().enumerate() {
            if l.weight.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::invalid(
                    "probe model json",
                    format!("layer {i} shape does not match payload"),
                ));
            }
            if l.cols != expected_in {
                return Err(Error::DimensionMismatch {
                    expected: expected_in,
                    found: l.cols,
                    context: format!("layer {i} input width"),
                });
            }
            expected_in = l.rows;
            let weight = Array2::from_shape_vec((l.rows, l.cols), l.weight.clone())
                .expect("length checked");
            if weight.iter().any(|v| !v.is_finite()) || l.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    "probe model json",
                    format!("layer {i} has non-finite parameters"),
                ));
            }
            layers.push(Layer {
                weight,
                bias: Array1::from_vec(l.bias.clone()),
            });
        }
        if layers.is_empty() {
            return Err(Error::invalid("probe model json", "no layers"));
        }
        if expected_in != doc.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: doc.labels.len(),
                found: expected_in,
                context: "final layer width vs labels".into(),
            });
        }
        Ok(ProbeModel {
            layers,
            input_dim: doc.input_dim,
            labels: doc.labels,
        })
    }
}
