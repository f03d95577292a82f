//! Baseline sequence model: a single-layer LSTM with a linear head, trained
//! by backpropagation through time for next-state prediction, with a
//! closed-loop rollout. Inputs and targets are standardized per dimension
//! with statistics from the training split.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_VERSION: u32 = 1;
/// Gate index order in the weight arrays.
pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_OUTPUT: usize = 2;
pub const GATE_CANDIDATE: usize = 3;

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid LSTM config: {0}")]
    InvalidConfig(String),
    #[error("closed-loop rollout requires full-state outputs")]
    RolloutNeedsFullState,
    #[error("{path}: {message}")]
    Persistence { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay; damps the late-stage
    /// Adam oscillation on long runs.
    pub lr_decay: f64,
    pub epochs: usize,
    /// Sequences per minibatch.
    pub batch_size: usize,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Predict positions only instead of the full state (no closed loop).
    pub positions_only: bool,
    pub seed: u64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            hidden: 64,
            learning_rate: 1e-3,
            lr_decay: 0.9995,
            epochs: 400,
            batch_size: 16,
            grad_clip: 1.0,
            positions_only: false,
            seed: 0,
        }
    }
}

/// Per-dimension affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(rows: impl Iterator<Item = Vec<f64>> + Clone, dim: usize) -> Self {
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for row in rows.clone() {
            for (m, x) in mean.iter_mut().zip(row.iter()) {
                *m += x;
            }
            count += 1;
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((v, m), x) in var.iter_mut().zip(mean.iter()).zip(row.iter()) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .iter()
            .map(|v| (v / count as f64).sqrt().max(1e-8))
            .collect();
        Normalizer { mean, std }
    }

    fn encode(&self, raw: &[f64]) -> DVector<f64> {
        DVector::from_fn(raw.len(), |i, _| (raw[i] - self.mean[i]) / self.std[i])
    }

    fn decode(&self, norm: &DVector<f64>) -> Vec<f64> {
        norm.iter()
            .enumerate()
            .map(|(i, x)| x * self.std[i] + self.mean[i])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub config: LstmConfig,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Input weights per gate, hidden x input.
    pub w: [DMatrix<f64>; 4],
    /// Recurrent weights per gate, hidden x hidden.
    pub u: [DMatrix<f64>; 4],
    /// Gate biases; the forget gate starts at +1.
    pub b: [DVector<f64>; 4],
    pub w_out: DMatrix<f64>,
    pub b_out: DVector<f64>,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
    pub loss_history: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fresh model with uniform(+-1/sqrt(fan_in)) weights, zero biases except
/// the forget gate at +1, identity normalizers.
pub fn init_model(input_dim: usize, config: &LstmConfig) -> Result<LstmModel, LstmError> {
    if input_dim == 0 || config.hidden == 0 {
        return Err(LstmError::InvalidConfig(
            "input_dim and hidden must be >= 1".into(),
        ));
    }
    let output_dim = if config.positions_only {
        input_dim / 2
    } else {
        input_dim
    };
    let n = config.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let s_in = 1.0 / (input_dim as f64).sqrt();
    let s_hid = 1.0 / (n as f64).sqrt();
    let mut mat = |rows: usize, cols: usize, s: f64| {
        DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-s..s))
    };
    let w = [
        mat(n, input_dim, s_in),
        mat(n, input_dim, s_in),
        mat(n, input_dim, s_in),
        mat(n, input_dim, s_in),
    ];
    let u = [
        mat(n, n, s_hid),
        mat(n, n, s_hid),
        mat(n, n, s_hid),
        mat(n, n, s_hid),
    ];
    let mut b = [
        DVector::zeros(n),
        DVector::zeros(n),
        DVector::zeros(n),
        DVector::zeros(n),
    ];
    b[GATE_FORGET].fill(1.0);
    let w_out = mat(output_dim, n, s_hid);
    Ok(LstmModel {
        config: *config,
        input_dim,
        output_dim,
        w,
        u,
        b,
        w_out,
        b_out: DVector::zeros(output_dim),
        input_norm: Normalizer::identity(input_dim),
        output_norm: Normalizer::identity(output_dim),
        loss_history: Vec::new(),
    })
}

/// One LSTM cell step on an (already normalized) input.
pub fn cell_step(
    model: &LstmModel,
    h_prev: &DVector<f64>,
    c_prev: &DVector<f64>,
    x: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let gate = |g: usize| -> DVector<f64> { &model.w[g] * x + &model.u[g] * h_prev + &model.b[g] };
    let i = gate(GATE_INPUT).map(sigmoid);
    let f = gate(GATE_FORGET).map(sigmoid);
    let o = gate(GATE_OUTPUT).map(sigmoid);
    let g = gate(GATE_CANDIDATE).map(f64::tanh);
    let c = f.component_mul(c_prev) + i.component_mul(&g);
    let h = o.component_mul(&c.map(f64::tanh));
    (h, c)
}

/// One input/target sequence (raw, unnormalized coordinates).
#[derive(Debug, Clone)]
pub struct LstmSequence {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl LstmSequence {
    /// Next-state supervision from a trajectory's flattened states.
    pub fn next_state(states: &[Vec<f64>], positions_only: bool) -> Self {
        let targets = states[1..]
            .iter()
            .map(|s| {
                if positions_only {
                    s[..s.len() / 2].to_vec()
                } else {
                    s.clone()
                }
            })
            .collect();
        LstmSequence {
            inputs: states[..states.len() - 1].to_vec(),
            targets,
        }
    }
}

fn check_sequences(model: &LstmModel, sequences: &[LstmSequence]) -> Result<(), LstmError> {
    if sequences.is_empty() || sequences.iter().any(|s| s.inputs.is_empty()) {
        return Err(LstmError::EmptyBatch);
    }
    for (k, seq) in sequences.iter().enumerate() {
        if seq.inputs.len() != seq.targets.len() {
            return Err(LstmError::DimensionMismatch(format!(
                "sequence {k}: {} inputs vs {} targets",
                seq.inputs.len(),
                seq.targets.len()
            )));
        }
        for (x, y) in seq.inputs.iter().zip(seq.targets.iter()) {
            if x.len() != model.input_dim || y.len() != model.output_dim {
                return Err(LstmError::DimensionMismatch(format!(
                    "sequence {k}: input {} target {} vs model {}/{}",
                    x.len(),
                    y.len(),
                    model.input_dim,
                    model.output_dim
                )));
            }
        }
    }
    Ok(())
}

/// Teacher-forced predictions for one input sequence (raw coordinates).
pub fn forward_sequence(model: &LstmModel, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, LstmError> {
    if inputs.is_empty() {
        return Err(LstmError::EmptyBatch);
    }
    let n = model.config.hidden;
    let mut h = DVector::zeros(n);
    let mut c = DVector::zeros(n);
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        if x.len() != model.input_dim {
            return Err(LstmError::DimensionMismatch(format!(
                "input of {} into a {}-input model",
                x.len(),
                model.input_dim
            )));
        }
        let xn = model.input_norm.encode(x);
        let (h_next, c_next) = cell_step(model, &h, &c, &xn);
        h = h_next;
        c = c_next;
        let y = &model.w_out * &h + &model.b_out;
        out.push(model.output_norm.decode(&y));
    }
    Ok(out)
}

/// Mean squared error in normalized target space, averaged over every
/// (sequence, step, component).
pub fn loss(model: &LstmModel, sequences: &[LstmSequence]) -> Result<f64, LstmError> {
    check_sequences(model, sequences)?;
    let mut sse = 0.0;
    let mut count = 0usize;
    for seq in sequences {
        let n = model.config.hidden;
        let mut h = DVector::zeros(n);
        let mut c = DVector::zeros(n);
        for (x, y) in seq.inputs.iter().zip(seq.targets.iter()) {
            let xn = model.input_norm.encode(x);
            let (h2, c2) = cell_step(model, &h, &c, &xn);
            h = h2;
            c = c2;
            let pred = &model.w_out * &h + &model.b_out;
            let yn = model.output_norm.encode(y);
            sse += (pred - yn).norm_squared();
            count += model.output_dim;
        }
    }
    Ok(sse / count as f64)
}

/// Parameter gradients in one flat container, gate-major.
#[derive(Debug, Clone)]
pub struct LstmGradient {
    pub w: [DMatrix<f64>; 4],
    pub u: [DMatrix<f64>; 4],
    pub b: [DVector<f64>; 4],
    pub w_out: DMatrix<f64>,
    pub b_out: DVector<f64>,
}

impl LstmGradient {
    fn zeros_like(model: &LstmModel) -> Self {
        let zm = |m: &DMatrix<f64>| DMatrix::zeros(m.nrows(), m.ncols());
        let zv = |v: &DVector<f64>| DVector::zeros(v.len());
        LstmGradient {
            w: [zm(&model.w[0]), zm(&model.w[1]), zm(&model.w[2]), zm(&model.w[3])],
            u: [zm(&model.u[0]), zm(&model.u[1]), zm(&model.u[2]), zm(&model.u[3])],
            b: [zv(&model.b[0]), zv(&model.b[1]), zv(&model.b[2]), zv(&model.b[3])],
            w_out: zm(&model.w_out),
            b_out: zv(&model.b_out),
        }
    }

    fn norm_squared(&self) -> f64 {
        let mut s = 0.0;
        for g in 0..4 {
            s += self.w[g].norm_squared() + self.u[g].norm_squared() + self.b[g].norm_squared();
        }
        s + self.w_out.norm_squared() + self.b_out.norm_squared()
    }

    fn scale(&mut self, factor: f64) {
        for g in 0..4 {
            self.w[g] *= factor;
            self.u[g] *= factor;
            self.b[g] *= factor;
        }
        self.w_out *= factor;
        self.b_out *= factor;
    }
}

struct StepCache {
    x: DVector<f64>,
    h_prev: DVector<f64>,
    c_prev: DVector<f64>,
    i: DVector<f64>,
    f: DVector<f64>,
    o: DVector<f64>,
    g: DVector<f64>,
    tc: DVector<f64>,
    /// d(loss)/d(prediction), already weighted by the global 1/count.
    dy: DVector<f64>,
}

/// Full (untruncated) backpropagation through time of [`loss`] over the
/// batch; exact up to floating-point rounding.
pub fn bptt_gradient(
    model: &LstmModel,
    sequences: &[LstmSequence],
) -> Result<LstmGradient, LstmError> {
    check_sequences(model, sequences)?;
    let n = model.config.hidden;
    let mut grad = LstmGradient::zeros_like(model);
    let total: usize = sequences.iter().map(|s| s.inputs.len()).sum::<usize>() * model.output_dim;
    let weight = 2.0 / total as f64;

    for seq in sequences {
        let mut h = DVector::zeros(n);
        let mut c = DVector::zeros(n);
        let mut caches: Vec<StepCache> = Vec::with_capacity(seq.inputs.len());
        for (x, y) in seq.inputs.iter().zip(seq.targets.iter()) {
            let xn = model.input_norm.encode(x);
            let gate = |g: usize| -> DVector<f64> {
                &model.w[g] * &xn + &model.u[g] * &h + &model.b[g]
            };
            let i = gate(GATE_INPUT).map(sigmoid);
            let f = gate(GATE_FORGET).map(sigmoid);
            let o = gate(GATE_OUTPUT).map(sigmoid);
            let g = gate(GATE_CANDIDATE).map(f64::tanh);
            let c_next = f.component_mul(&c) + i.component_mul(&g);
            let tc = c_next.map(f64::tanh);
            let h_next = o.component_mul(&tc);
            let pred = &model.w_out * &h_next + &model.b_out;
            let yn = model.output_norm.encode(y);
            caches.push(StepCache {
                x: xn,
                h_prev: h.clone(),
                c_prev: c.clone(),
                i,
                f,
                o,
                g,
                tc,
                dy: (pred - yn) * weight,
            });
            h = h_next;
            c = c_next;
        }

        let mut dh_rec = DVector::zeros(n);
        let mut dc_rec = DVector::zeros(n);
        for cache in caches.iter().rev() {
            let h_t = cache.o.component_mul(&cache.tc);
            grad.w_out += &cache.dy * h_t.transpose();
            grad.b_out += &cache.dy;
            let dh = model.w_out.transpose() * &cache.dy + &dh_rec;

            let d_o = dh.component_mul(&cache.tc);
            let da_o = d_o.zip_map(&cache.o, |d, o| d * o * (1.0 - o));
            let dtc = dh.component_mul(&cache.o);
            let dc = &dc_rec + dtc.zip_map(&cache.tc, |d, t| d * (1.0 - t * t));
            let d_f = dc.component_mul(&cache.c_prev);
            let da_f = d_f.zip_map(&cache.f, |d, f| d * f * (1.0 - f));
            let d_i = dc.component_mul(&cache.g);
            let da_i = d_i.zip_map(&cache.i, |d, i| d * i * (1.0 - i));
            let d_g = dc.component_mul(&cache.i);
            let da_g = d_g.zip_map(&cache.g, |d, g| d * (1.0 - g * g));

            dc_rec = dc.component_mul(&cache.f);
            let mut dh_prev = DVector::zeros(n);
            for (gate, da) in [
                (GATE_INPUT, &da_i),
                (GATE_FORGET, &da_f),
                (GATE_OUTPUT, &da_o),
                (GATE_CANDIDATE, &da_g),
            ] {
                grad.w[gate] += da * cache.x.transpose();
                grad.u[gate] += da * cache.h_prev.transpose();
                grad.b[gate] += da;
                dh_prev += model.u[gate].transpose() * da;
            }
            dh_rec = dh_prev;
        }
    }
    Ok(grad)
}

struct Adam {
    m: LstmGradient,
    v: LstmGradient,
    t: usize,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &LstmModel) -> Self {
        Adam {
            m: LstmGradient::zeros_like(model),
            v: LstmGradient::zeros_like(model),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut LstmModel, grad: &LstmGradient, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + Self::EPS);
        };
        for g in 0..4 {
            for (idx, grad_val) in grad.w[g].iter().enumerate() {
                update(
                    &mut model.w[g].as_mut_slice()[idx],
                    &mut self.m.w[g].as_mut_slice()[idx],
                    &mut self.v.w[g].as_mut_slice()[idx],
                    *grad_val,
                );
            }
            for (idx, grad_val) in grad.u[g].iter().enumerate() {
                update(
                    &mut model.u[g].as_mut_slice()[idx],
                    &mut self.m.u[g].as_mut_slice()[idx],
                    &mut self.v.u[g].as_mut_slice()[idx],
                    *grad_val,
                );
            }
            for (idx, grad_val) in grad.b[g].iter().enumerate() {
                update(
                    &mut model.b[g].as_mut_slice()[idx],
                    &mut self.m.b[g].as_mut_slice()[idx],
                    &mut self.v.b[g].as_mut_slice()[idx],
                    *grad_val,
                );
            }
        }
        for (idx, grad_val) in grad.w_out.iter().enumerate() {
            update(
                &mut model.w_out.as_mut_slice()[idx],
                &mut self.m.w_out.as_mut_slice()[idx],
                &mut self.v.w_out.as_mut_slice()[idx],
                *grad_val,
            );
        }
        for (idx, grad_val) in grad.b_out.iter().enumerate() {
            update(
                &mut model.b_out.as_mut_slice()[idx],
                &mut self.m.b_out.as_mut_slice()[idx],
                &mut self.v.b_out.as_mut_slice()[idx],
                *grad_val,
            );
        }
    }
}

/// Adam with global gradient-norm clipping, deterministic per seed. The
/// normalizers are fitted on the training sequences before the first step.
pub fn train(sequences: &[LstmSequence], config: &LstmConfig) -> Result<LstmModel, LstmError> {
    if sequences.is_empty() {
        return Err(LstmError::EmptyBatch);
    }
    let input_dim = sequences[0].inputs[0].len();
    let mut model = init_model(input_dim, config)?;

    let all_inputs = || {
        sequences
            .iter()
            .flat_map(|s| s.inputs.iter().cloned())
    };
    model.input_norm = Normalizer::fit(all_inputs(), input_dim);
    model.output_norm = if config.positions_only {
        let half = input_dim / 2;
        Normalizer {
            mean: model.input_norm.mean[..half].to_vec(),
            std: model.input_norm.std[..half].to_vec(),
        }
    } else {
        model.input_norm.clone()
    };
    check_sequences(&model, sequences)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6c73746d);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut adam = Adam::new(&model);
    let batch_size = config.batch_size.max(1);

    let mut lr = config.learning_rate;
    for epoch in 0..config.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<LstmSequence> =
                chunk.iter().map(|i| sequences[*i].clone()).collect();
            let batch_loss = loss(&model, &batch)?;
            if !batch_loss.is_finite() {
                return Err(LstmError::NonFiniteLoss { epoch });
            }
            let mut grad = bptt_gradient(&model, &batch)?;
            let norm = grad.norm_squared().sqrt();
            if norm > config.grad_clip {
                grad.scale(config.grad_clip / norm);
            }
            adam.step(&mut model, &grad, lr);
            epoch_loss += batch_loss;
            batches += 1;
        }
        model.loss_history.push(epoch_loss / batches as f64);
        lr *= config.lr_decay;
    }
    Ok(model)
}

/// Closed-loop rollout: teacher-force through `warmup`, then feed each
/// prediction back as the next input. Returns raw-coordinate predictions.
pub fn rollout(
    model: &LstmModel,
    warmup: &[Vec<f64>],
    n_steps: usize,
) -> Result<Vec<Vec<f64>>, LstmError> {
    if model.output_dim != model.input_dim {
        return Err(LstmError::RolloutNeedsFullState);
    }
    if warmup.is_empty() {
        return Err(LstmError::EmptyBatch);
    }
    let n = model.config.hidden;
    let mut h = DVector::zeros(n);
    let mut c = DVector::zeros(n);
    for x in warmup {
        let xn = model.input_norm.encode(x);
        let (h2, c2) = cell_step(model, &h, &c, &xn);
        h = h2;
        c = c2;
    }
    let mut out = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let pred_norm = &model.w_out * &h + &model.b_out;
        out.push(model.output_norm.decode(&pred_norm));
        let (h2, c2) = cell_step(model, &h, &c, &pred_norm);
        h = h2;
        c = c2;
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct LstmModelFile {
    model_version: u32,
    kind: String,
    architecture: String,
    config: LstmConfig,
    input_dim: usize,
    output_dim: usize,
    /// Gate arrays in (input, forget, output, candidate) order, row-major.
    w: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    w_out: Vec<f64>,
    b_out: Vec<f64>,
    input_norm: Normalizer,
    output_norm: Normalizer,
    loss_history: Vec<f64>,
}

pub fn save_model(model: &LstmModel, path: &Path) -> Result<(), LstmError> {
    let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
    let file = LstmModelFile {
        model_version: MODEL_VERSION,
        kind: "lstm".into(),
        architecture: "single-layer-lstm-linear-head".into(),
        config: model.config,
        input_dim: model.input_dim,
        output_dim: model.output_dim,
        w: model.w.iter().map(row_major).collect(),
        u: model.u.iter().map(row_major).collect(),
        b: model.b.iter().map(|b| b.as_slice().to_vec()).collect(),
        w_out: row_major(&model.w_out),
        b_out: model.b_out.as_slice().to_vec(),
        input_norm: model.input_norm.clone(),
        output_norm: model.output_norm.clone(),
        loss_history: model.loss_history.clone(),
    };
    let json = serde_json::to_string(&file).expect("model serialization cannot fail");
    std::fs::write(path, json).map_err(|e| LstmError::Persistence {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_model(path: &Path) -> Result<LstmModel, LstmError> {
    let fail = |message: String| LstmError::Persistence {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
    let file: LstmModelFile = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
    if file.model_version != MODEL_VERSION {
        return Err(fail(format!("unsupported model version {}", file.model_version)));
    }
    if file.kind != "lstm" {
        return Err(fail(format!("expected an lstm model, found {:?}", file.kind)));
    }
    let n = file.config.hidden;
    if file.w.len() != 4 || file.u.len() != 4 || file.b.len() != 4 {
        return Err(fail("expected four gate arrays".into()));
    }
    let mat = |data: &[f64], rows: usize, cols: usize, what: &str| {
        if data.len() != rows * cols {
            Err(fail(format!("{what} has {} values, expected {}", data.len(), rows * cols)))
        } else {
            Ok(DMatrix::from_row_slice(rows, cols, data))
        }
    };
    let w = [
        mat(&file.w[0], n, file.input_dim, "w[0]")?,
        mat(&file.w[1], n, file.input_dim, "w[1]")?,
        mat(&file.w[2], n, file.input_dim, "w[2]")?,
        mat(&file.w[3], n, file.input_dim, "w[3]")?,
    ];
    let u = [
        mat(&file.u[0], n, n, "u[0]")?,
        mat(&file.u[1], n, n, "u[1]")?,
        mat(&file.u[2], n, n, "u[2]")?,
        mat(&file.u[3], n, n, "u[3]")?,
    ];
    let b = [
        DVector::from_column_slice(&file.b[0]),
        DVector::from_column_slice(&file.b[1]),
        DVector::from_column_slice(&file.b[2]),
        DVector::from_column_slice(&file.b[3]),
    ];
    Ok(LstmModel {
        config: file.config,
        input_dim: file.input_dim,
        output_dim: file.output_dim,
        w,
        u,
        b,
        w_out: mat(&file.w_out, file.output_dim, n, "w_out")?,
        b_out: DVector::from_column_slice(&file.b_out),
        input_norm: file.input_norm,
        output_norm: file.output_norm,
        loss_history: file.loss_history,
    })
}
