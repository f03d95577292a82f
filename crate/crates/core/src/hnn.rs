//! Hamiltonian neural network: a scalar-output MLP H(q, p) whose exact
//! input gradients are trained to match the canonical derivatives, so that
//! dq/dt = dH/dp and dp/dt = -dH/dq. Training differentiates through the
//! input-gradient computation (second-order backpropagation, derived by
//! hand and gated by finite-difference checks).

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SupervisedPair;
use crate::dynamics::{PhaseDerivative, SystemState, Vec3};
use crate::integrators::{Trajectory, TrajectoryMeta};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HnnError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("learned field produced a non-finite state at step {step}")]
    NonFiniteState { step: usize },
    #[error("invalid HNN config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {message}")]
    Persistence { path: PathBuf, message: String },
}

/// Reduction applied to the two gradient-matching residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Mean squared residual per term (differentiable at zero; default).
    Squared,
    /// Sum of the two L2 residual norms, as written.
    LiteralNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HnnConfig {
    /// Hidden layer widths; the full stack is [input, hidden..., 1].
    pub hidden: Vec<usize>,
    pub loss_mode: LossMode,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for HnnConfig {
    fn default() -> Self {
        HnnConfig {
            hidden: vec![64, 64],
            loss_mode: LossMode::Squared,
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnnModel {
    /// Layer sizes including input and the scalar output.
    pub layers: Vec<usize>,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub loss_mode: LossMode,
    pub seed: u64,
    /// Epoch-mean training losses, appended by `train`.
    pub loss_history: Vec<f64>,
}

impl HnnModel {
    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }
}

/// Parameter-shaped accumulator used for gradients and optimizer moments.
#[derive(Debug, Clone)]
pub struct HnnGradient {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl HnnGradient {
    fn zeros_like(model: &HnnModel) -> Self {
        HnnGradient {
            weights: model
                .weights
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect(),
            biases: model
                .biases
                .iter()
                .map(|b| DVector::zeros(b.len()))
                .collect(),
        }
    }

    fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            *w *= s;
        }
        for b in &mut self.biases {
            *b *= s;
        }
    }
}

/// Uniform init in [-s, s] with s = 1/sqrt(fan_in), deterministic per seed.
pub fn init_model(input_dim: usize, config: &HnnConfig) -> Result<HnnModel, HnnError> {
    if input_dim == 0 {
        return Err(HnnError::InvalidConfig("input_dim must be >= 1".into()));
    }
    if config.hidden.contains(&0) {
        return Err(HnnError::InvalidConfig("hidden widths must be >= 1".into()));
    }
    let mut layers = vec![input_dim];
    layers.extend_from_slice(&config.hidden);
    layers.push(1);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = Vec::with_capacity(layers.len() - 1);
    let mut biases = Vec::with_capacity(layers.len() - 1);
    for l in 0..layers.len() - 1 {
        let fan_in = layers[l];
        let s = 1.0 / (fan_in as f64).sqrt();
        weights.push(DMatrix::from_fn(layers[l + 1], fan_in, |_, _| {
            rng.gen_range(-s..s)
        }));
        biases.push(DVector::zeros(layers[l + 1]));
    }
    Ok(HnnModel {
        layers,
        weights,
        biases,
        loss_mode: config.loss_mode,
        seed: config.seed,
        loss_history: Vec::new(),
    })
}

/// Forward activations of one sample: `zs[l]` is the input of layer `l`
/// (zs[0] = x), `pre[l]` its pre-activation output.
struct Tape {
    zs: Vec<DVector<f64>>,
    pre: Vec<DVector<f64>>,
}

fn forward_tape(model: &HnnModel, input: &[f64]) -> Result<Tape, HnnError> {
    if input.len() != model.input_dim() {
        return Err(HnnError::DimensionMismatch(format!(
            "input of length {} into a [{}]-input network",
            input.len(),
            model.input_dim()
        )));
    }
    let depth = model.weights.len();
    let mut zs = Vec::with_capacity(depth + 1);
    let mut pre = Vec::with_capacity(depth);
    zs.push(DVector::from_column_slice(input));
    for l in 0..depth {
        let a = &model.weights[l] * &zs[l] + &model.biases[l];
        let z = if l < depth - 1 { a.map(f64::tanh) } else { a.clone() };
        pre.push(a);
        zs.push(z);
    }
    Ok(Tape { zs, pre })
}

/// Scalar output H(x).
pub fn forward(model: &HnnModel, input: &[f64]) -> Result<f64, HnnError> {
    let tape = forward_tape(model, input)?;
    Ok(tape.zs.last().unwrap()[0])
}

/// Backward quantities of the input-gradient computation: `delta[l]` is
/// dH/d(pre[l]), `u[l]` is dH/d(zs[l]); `u[0]` is the input gradient.
struct GradTape {
    delta: Vec<DVector<f64>>,
    u: Vec<DVector<f64>>,
}

fn backward_tape(model: &HnnModel, tape: &Tape) -> GradTape {
    let depth = model.weights.len();
    let mut delta = vec![DVector::zeros(0); depth];
    let mut u = vec![DVector::zeros(0); depth];
    delta[depth - 1] = DVector::from_element(1, 1.0);
    for l in (0..depth).rev() {
        u[l] = model.weights[l].transpose() * &delta[l];
        if l > 0 {
            let phi_prime = tape.pre[l - 1].map(|a| {
                let t = a.tanh();
                1.0 - t * t
            });
            delta[l - 1] = u[l].component_mul(&phi_prime);
        }
    }
    GradTape { delta, u }
}

/// Exact reverse-mode gradient of `forward` with respect to the input.
pub fn input_gradient(model: &HnnModel, input: &[f64]) -> Result<Vec<f64>, HnnError> {
    let tape = forward_tape(model, input)?;
    let grads = backward_tape(model, &tape);
    Ok(grads.u[0].iter().copied().collect())
}

/// Residuals of one sample against its `(dq/dt, dp/dt)` target:
/// `r_p = dH/dp - dq/dt` and `r_q = dH/dq + dp/dt`.
fn residuals(gradient: &DVector<f64>, target: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let half = gradient.len() / 2;
    let g_q = gradient.rows(0, half);
    let g_p = gradient.rows(half, half);
    let dq_dt = DVector::from_column_slice(&target[..half]);
    let dp_dt = DVector::from_column_slice(&target[half..]);
    (g_p - dq_dt, g_q + dp_dt)
}

fn sample_loss(mode: LossMode, r_p: &DVector<f64>, r_q: &DVector<f64>) -> f64 {
    match mode {
        LossMode::Squared => {
            let half = r_p.len() as f64;
            r_p.norm_squared() / half + r_q.norm_squared() / half
        }
        LossMode::LiteralNorm => r_p.norm() + r_q.norm(),
    }
}

/// d(sample loss)/d(input gradient), laid out as (q-block, p-block).
fn loss_gradient_wrt_g(
    mode: LossMode,
    r_p: &DVector<f64>,
    r_q: &DVector<f64>,
) -> DVector<f64> {
    let half = r_p.len();
    let mut v = DVector::zeros(2 * half);
    match mode {
        LossMode::Squared => {
            for i in 0..half {
                v[i] = 2.0 * r_q[i] / half as f64;
                v[half + i] = 2.0 * r_p[i] / half as f64;
            }
        }
        LossMode::LiteralNorm => {
            let np = r_p.norm();
            let nq = r_q.norm();
            for i in 0..half {
                if nq > 0.0 {
                    v[i] = r_q[i] / nq;
                }
                if np > 0.0 {
                    v[half + i] = r_p[i] / np;
                }
            }
        }
    }
    v
}

fn check_batch(model: &HnnModel, batch: &[SupervisedPair]) -> Result<(), HnnError> {
    if batch.is_empty() {
        return Err(HnnError::EmptyBatch);
    }
    let n = model.input_dim();
    for (k, pair) in batch.iter().enumerate() {
        if pair.input.len() != n || pair.target.len() != n {
            return Err(HnnError::DimensionMismatch(format!(
                "pair {k}: input {} / target {} vs network input {n}",
                pair.input.len(),
                pair.target.len()
            )));
        }
    }
    Ok(())
}

/// Gradient-matching loss over a batch (mean over samples).
pub fn hnn_loss(model: &HnnModel, batch: &[SupervisedPair]) -> Result<f64, HnnError> {
    check_batch(model, batch)?;
    let mut total = 0.0;
    for pair in batch {
        let tape = forward_tape(model, &pair.input)?;
        let grads = backward_tape(model, &tape);
        let (r_p, r_q) = residuals(&grads.u[0], &pair.target);
        total += sample_loss(model.loss_mode, &r_p, &r_q);
    }
    Ok(total / batch.len() as f64)
}

/// Exact gradient of [`hnn_loss`] with respect to every weight and bias.
///
/// The loss depends on parameters through the input gradient, so this is a
/// second reverse pass over the combined forward/backward graph. With
/// adjoint seeds `u_hat[0] = dloss/dg`, the chain `u[l] = W_l^T delta[l]`,
/// `delta[l-1] = u[l] * phi'(pre[l-1])` propagates upward, and the
/// pre-activation adjoints it produces flow back down the forward chain.
pub fn param_gradient(model: &HnnModel, batch: &[SupervisedPair]) -> Result<HnnGradient, HnnError> {
    check_batch(model, batch)?;
    let depth = model.weights.len();
    let mut grad = HnnGradient::zeros_like(model);

    for pair in batch {
        let tape = forward_tape(model, &pair.input)?;
        let back = backward_tape(model, &tape);
        let (r_p, r_q) = residuals(&back.u[0], &pair.target);
        let v = loss_gradient_wrt_g(model.loss_mode, &r_p, &r_q);

        // a_hat[l]: adjoint of pre[l] accumulated from the second pass.
        let mut a_hat: Vec<DVector<f64>> = model
            .biases
            .iter()
            .map(|b| DVector::zeros(b.len()))
            .collect();

        // Upward sweep along the backward chain.
        let mut u_hat = v;
        for l in 0..depth {
            // u[l] = W_l^T delta[l]
            grad.weights[l] += &back.delta[l] * u_hat.transpose();
            let delta_hat = &model.weights[l] * &u_hat;
            if l < depth - 1 {
                // delta[l] = u[l+1] * phi'(pre[l])
                let t = tape.pre[l].map(f64::tanh);
                let phi_prime = t.map(|ti| 1.0 - ti * ti);
                let phi_second = t.zip_map(&phi_prime, |ti, pi| -2.0 * ti * pi);
                u_hat = delta_hat.component_mul(&phi_prime);
                a_hat[l] += delta_hat
                    .component_mul(&back.u[l + 1])
                    .component_mul(&phi_second);
            } else {
                // delta at the top is the constant 1.
                break;
            }
        }

        // Downward sweep along the forward chain.
        for l in (0..depth).rev() {
            let a = a_hat[l].clone();
            grad.weights[l] += &a * tape.zs[l].transpose();
            grad.biases[l] += &a;
            if l > 0 {
                let z_hat = model.weights[l].transpose() * a;
                let phi_prime = tape.pre[l - 1].map(|p| {
                    let t = p.tanh();
                    1.0 - t * t
                });
                a_hat[l - 1] += z_hat.component_mul(&phi_prime);
            }
        }
    }

    grad.scale(1.0 / batch.len() as f64);
    Ok(grad)
}

struct Adam {
    m: HnnGradient,
    v: HnnGradient,
    t: usize,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &HnnModel) -> Self {
        Adam {
            m: HnnGradient::zeros_like(model),
            v: HnnGradient::zeros_like(model),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut HnnModel, grad: &HnnGradient, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for l in 0..model.weights.len() {
            update_matrix(
                &mut model.weights[l],
                &mut self.m.weights[l],
                &mut self.v.weights[l],
                &grad.weights[l],
                lr,
                bc1,
                bc2,
            );
            update_vector(
                &mut model.biases[l],
                &mut self.m.biases[l],
                &mut self.v.biases[l],
                &grad.biases[l],
                lr,
                bc1,
                bc2,
            );
        }
    }
}

fn update_matrix(
    p: &mut DMatrix<f64>,
    m: &mut DMatrix<f64>,
    v: &mut DMatrix<f64>,
    g: &DMatrix<f64>,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    for ((p, m), (v, g)) in p
        .iter_mut()
        .zip(m.iter_mut())
        .zip(v.iter_mut().zip(g.iter()))
    {
        *m = Adam::BETA1 * *m + (1.0 - Adam::BETA1) * g;
        *v = Adam::BETA2 * *v + (1.0 - Adam::BETA2) * g * g;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + Adam::EPS);
    }
}

fn update_vector(
    p: &mut DVector<f64>,
    m: &mut DVector<f64>,
    v: &mut DVector<f64>,
    g: &DVector<f64>,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    for ((p, m), (v, g)) in p
        .iter_mut()
        .zip(m.iter_mut())
        .zip(v.iter_mut().zip(g.iter()))
    {
        *m = Adam::BETA1 * *m + (1.0 - Adam::BETA1) * g;
        *v = Adam::BETA2 * *v + (1.0 - Adam::BETA2) * g * g;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + Adam::EPS);
    }
}

/// Minibatch Adam over the gradient-matching loss. Deterministic per seed:
/// initialization and the per-epoch shuffle share one seeded stream.
pub fn train(pairs: &[SupervisedPair], config: &HnnConfig) -> Result<HnnModel, HnnError> {
    if pairs.is_empty() {
        return Err(HnnError::EmptyBatch);
    }
    let input_dim = pairs[0].input.len();
    let mut model = init_model(input_dim, config)?;
    check_batch(&model, pairs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261696e);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut adam = Adam::new(&model);
    let batch_size = config.batch_size.max(1);

    for epoch in 0..config.epochs {
        // Fisher-Yates with the shared stream.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<SupervisedPair> = chunk.iter().map(|i| pairs[*i].clone()).collect();
            let loss = hnn_loss(&model, &batch)?;
            if !loss.is_finite() {
                return Err(HnnError::NonFiniteLoss { epoch });
            }
            let grad = param_gradient(&model, &batch)?;
            adam.step(&mut model, &grad, config.learning_rate);
            epoch_loss += loss;
            batches += 1;
        }
        model.loss_history.push(epoch_loss / batches as f64);
    }
    Ok(model)
}

/// The learned field: `dq/dt = dH/dp`, `dp/dt = -dH/dq` at the state's
/// canonical coordinates.
pub fn symplectic_field(model: &HnnModel, state: &SystemState) -> Result<PhaseDerivative, HnnError> {
    let input = state.to_canonical_flat();
    let g = input_gradient(model, &input)?;
    let d = state.dim.components();
    let half = 3 * d;
    let mut dq_dt = [Vec3::ZERO; 3];
    let mut dp_dt = [Vec3::ZERO; 3];
    for body in 0..3 {
        let qg = &g[body * d..(body + 1) * d];
        let pg = &g[half + body * d..half + (body + 1) * d];
        dq_dt[body] = vec_from(pg);
        dp_dt[body] = -vec_from(qg);
    }
    Ok(PhaseDerivative { dq_dt, dp_dt })
}

fn vec_from(c: &[f64]) -> Vec3 {
    match c.len() {
        2 => Vec3::new(c[0], c[1], 0.0),
        _ => Vec3::new(c[0], c[1], c[2]),
    }
}

/// RK4 rollout of an arbitrary phase-space field (the learned Hamiltonian is
/// not separable, so a splitting integrator does not apply). Also used to
/// validate the rollout machinery with the exact equations of motion.
pub fn rollout_field<F>(
    field: F,
    start: &SystemState,
    n_steps: usize,
    dt: f64,
) -> Result<Trajectory, HnnError>
where
    F: Fn(&SystemState) -> Result<PhaseDerivative, HnnError>,
{
    if dt <= 0.0 || !dt.is_finite() {
        return Err(HnnError::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    if start.masses.iter().any(|m| *m <= 0.0) {
        return Err(HnnError::InvalidConfig(
            "canonical rollout requires strictly positive masses".into(),
        ));
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(*start);
    let mut current = *start;
    for step in 0..n_steps {
        let k1 = field(&current)?;
        let s2 = offset(&current, &k1, dt / 2.0);
        let k2 = field(&s2)?;
        let s3 = offset(&current, &k2, dt / 2.0);
        let k3 = field(&s3)?;
        let s4 = offset(&current, &k3, dt);
        let k4 = field(&s4)?;
        let mut next = current;
        for i in 0..3 {
            let m = current.masses[i];
            let dq = (k1.dq_dt[i] + (k2.dq_dt[i] + k3.dq_dt[i]) * 2.0 + k4.dq_dt[i]) * (dt / 6.0);
            let dp = (k1.dp_dt[i] + (k2.dp_dt[i] + k3.dp_dt[i]) * 2.0 + k4.dp_dt[i]) * (dt / 6.0);
            next.positions[i] += dq;
            next.velocities[i] += dp * (1.0 / m);
        }
        next.time = current.time + dt;
        for i in 0..3 {
            if !next.positions[i].is_finite() || !next.velocities[i].is_finite() {
                return Err(HnnError::NonFiniteState { step });
            }
        }
        current = next;
        states.push(current);
    }
    Ok(Trajectory {
        states,
        meta: TrajectoryMeta {
            integrator: "hnn-rk4".to_string(),
            tolerance: None,
            step: Some(dt),
            dt_sample: dt,
            seed: None,
            converged: None,
        },
    })
}

fn offset(base: &SystemState, deriv: &PhaseDerivative, scale: f64) -> SystemState {
    let mut s = *base;
    for i in 0..3 {
        let m = base.masses[i];
        s.positions[i] = base.positions[i] + deriv.dq_dt[i] * scale;
        s.velocities[i] = base.velocities[i] + deriv.dp_dt[i] * (scale / m);
    }
    s.time = base.time + scale;
    s
}

/// Closed rollout of the learned field from `start`.
pub fn rollout(
    model: &HnnModel,
    start: &SystemState,
    n_steps: usize,
    dt: f64,
) -> Result<Trajectory, HnnError> {
    rollout_field(|s| symplectic_field(model, s), start, n_steps, dt)
}

#[derive(Serialize, Deserialize)]
struct HnnModelFile {
    model_version: u32,
    kind: String,
    layers: Vec<usize>,
    activation: String,
    loss_mode: LossMode,
    seed: u64,
    /// Row-major, one entry per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    loss_history: Vec<f64>,
}

pub fn save_model(model: &HnnModel, path: &Path) -> Result<(), HnnError> {
    let file = HnnModelFile {
        model_version: MODEL_VERSION,
        kind: "hnn".into(),
        layers: model.layers.clone(),
        activation: "tanh".into(),
        loss_mode: model.loss_mode,
        seed: model.seed,
        weights: model
            .weights
            .iter()
            .map(|w| w.transpose().as_slice().to_vec())
            .collect(),
        biases: model.biases.iter().map(|b| b.as_slice().to_vec()).collect(),
        loss_history: model.loss_history.clone(),
    };
    let json = serde_json::to_string(&file).expect("model serialization cannot fail");
    std::fs::write(path, json).map_err(|e| HnnError::Persistence {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_model(path: &Path) -> Result<HnnModel, HnnError> {
    let fail = |message: String| HnnError::Persistence {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
    let file: HnnModelFile = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
    if file.model_version != MODEL_VERSION {
        return Err(fail(format!("unsupported model version {}", file.model_version)));
    }
    if file.kind != "hnn" {
        return Err(fail(format!("expected an hnn model, found {:?}", file.kind)));
    }
    if file.layers.len() < 2 || *file.layers.last().unwrap() != 1 {
        return Err(fail("layer stack must end in a scalar output".into()));
    }
    let depth = file.layers.len() - 1;
    if file.weights.len() != depth || file.biases.len() != depth {
        return Err(fail("weight/bias count does not match the layer stack".into()));
    }
    let mut weights = Vec::with_capacity(depth);
    let mut biases = Vec::with_capacity(depth);
    for l in 0..depth {
        let (rows, cols) = (file.layers[l + 1], file.layers[l]);
        if file.weights[l].len() != rows * cols || file.biases[l].len() != rows {
            return Err(fail(format!("layer {l} arrays do not match its dimensions")));
        }
        weights.push(DMatrix::from_row_slice(rows, cols, &file.weights[l]));
        biases.push(DVector::from_column_slice(&file.biases[l]));
    }
    Ok(HnnModel {
        layers: file.layers,
        weights,
        biases,
        loss_mode: file.loss_mode,
        seed: file.seed,
        loss_history: file.loss_history,
    })
}
