//! Echo state network: a fixed sparse random reservoir conditioned to a
//! target spectral radius, a dense input map, and a ridge-regression readout
//! (the only trained weights). Forecasting is closed-loop: each prediction
//! is fed back as the next input.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EsnError {
    #[error("reservoir spectral radius is zero after {attempts} resampling attempts")]
    DegenerateReservoir { attempts: usize },
    #[error("power iteration hit the {cap}-iteration cap; best estimate {best}")]
    NoConvergence { cap: usize, best: f64 },
    #[error("ridge normal matrix is not positive definite (lambda = {lambda:e})")]
    IllConditioned { lambda: f64 },
    #[error("model has no trained readout")]
    Untrained,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid ESN config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {message}")]
    Persistence { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutActivation {
    /// Linear readout, required for the closed-form ridge solution.
    Identity,
    /// Bounded readout kept for fidelity experiments; the ridge solve still
    /// fits the pre-activation.
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsnConfig {
    pub reservoir_size: usize,
    /// Probability that a reservoir entry is nonzero.
    pub density: f64,
    /// Spectral radius the reservoir is rescaled to.
    pub spectral_radius: f64,
    pub input_scale: f64,
    pub ridge_lambda: f64,
    /// Leading reservoir states discarded before the readout fit.
    pub washout: usize,
    /// Leak rate in (0, 1]; 1 is the plain update.
    pub leak_rate: f64,
    pub readout_activation: ReadoutActivation,
    pub seed: u64,
}

impl Default for EsnConfig {
    fn default() -> Self {
        EsnConfig {
            reservoir_size: 300,
            density: 0.05,
            spectral_radius: 0.9,
            input_scale: 0.5,
            ridge_lambda: 1e-6,
            washout: 20,
            leak_rate: 1.0,
            readout_activation: ReadoutActivation::Identity,
            seed: 0,
        }
    }
}

impl EsnConfig {
    fn validate(&self) -> Result<(), EsnError> {
        if self.reservoir_size == 0 {
            return Err(EsnError::InvalidConfig("reservoir_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.density) || self.density == 0.0 {
            return Err(EsnError::InvalidConfig("density must be in (0, 1]".into()));
        }
        if self.spectral_radius <= 0.0 {
            return Err(EsnError::InvalidConfig("spectral_radius must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.leak_rate) || self.leak_rate == 0.0 {
            return Err(EsnError::InvalidConfig("leak_rate must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsnModel {
    pub config: EsnConfig,
    pub input_dim: usize,
    /// Dense input weights, reservoir_size x input_dim.
    pub w_in: DMatrix<f64>,
    /// Sparse reservoir weights (dense storage, sparse pattern).
    pub w: DMatrix<f64>,
    /// Trained readout, input_dim x reservoir_size. Empty until fitted.
    pub w_out: Option<DMatrix<f64>>,
    pub achieved_rho: f64,
    pub train_mse: Option<f64>,
}

const MATVEC_CAP: usize = 10_000;
const POWER_ITERATION_TOL: f64 = 1e-9;
/// Power-purification steps before each Krylov refinement.
const PURIFY_STEPS: usize = 20;
/// Krylov depth of one refinement; deep enough to resolve the near-tied
/// dominant cluster of sparse random reservoirs.
const KRYLOV_DEPTH: usize = 20;

/// |largest eigenvalue| of a square matrix. Power iteration purifies the
/// start vector toward the dominant subspace; a small Krylov refinement then
/// resolves the dominant cluster, including complex-conjugate pairs and
/// near-tied moduli where the plain power estimate oscillates. Stagnation
/// triggers a deflation-free restart from a fresh deterministic vector.
pub fn spectral_radius(matrix: &DMatrix<f64>) -> Result<f64, EsnError> {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols(), "spectral_radius requires a square matrix");
    if n == 0 {
        return Ok(0.0);
    }

    let seed_vector = |round: u64| -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ round);
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let norm = v.norm();
        v / norm
    };

    let mut v = seed_vector(0);
    let mut restarts = 1u64;
    let mut dead_starts = 0usize;
    let mut prev = f64::NAN;
    let mut stable = 0usize;
    let mut best = 0.0f64;
    let mut matvecs = 0usize;

    while matvecs < MATVEC_CAP {
        // Purify toward the dominant subspace. A dead direction (A v = 0)
        // triggers a deflation-free restart from a fresh vector; several
        // dead starts in a row mean the matrix is (numerically) nilpotent.
        let mut died = false;
        for _ in 0..PURIFY_STEPS {
            let w = matrix * &v;
            matvecs += 1;
            let norm = w.norm();
            if norm == 0.0 {
                died = true;
                break;
            }
            v = w / norm;
        }
        if died {
            dead_starts += 1;
            if dead_starts > 4 {
                return Ok(0.0);
            }
            v = seed_vector(restarts);
            restarts += 1;
            continue;
        }

        let estimate = arnoldi_estimate(matrix, &v, KRYLOV_DEPTH.min(n), &mut matvecs);
        if estimate.is_finite() {
            best = estimate;
            if prev.is_finite()
                && (estimate - prev).abs() <= POWER_ITERATION_TOL * estimate.max(1e-300)
            {
                stable += 1;
                if stable >= 2 {
                    return Ok(estimate);
                }
            } else {
                stable = 0;
            }
            prev = estimate;
        }
    }
    Err(EsnError::NoConvergence {
        cap: MATVEC_CAP,
        best,
    })
}

/// Largest eigenvalue modulus of the Arnoldi projection of `matrix` onto the
/// depth-`m` Krylov space of `v0` (orthonormal basis, modified Gram-Schmidt
/// with one re-orthogonalization pass). An invariant-subspace breakdown
/// yields exact eigenvalues of the captured block.
fn arnoldi_estimate(
    matrix: &DMatrix<f64>,
    v0: &DVector<f64>,
    m: usize,
    matvecs: &mut usize,
) -> f64 {
    let mut basis: Vec<DVector<f64>> = vec![v0.clone()];
    let mut h = DMatrix::<f64>::zeros(m + 1, m);
    let mut dim = m;
    let scale = matrix.abs().max().max(1e-300);

    for k in 0..m {
        let mut w = matrix * &basis[k];
        *matvecs += 1;
        for j in 0..=k {
            let c = basis[j].dot(&w);
            w -= &basis[j] * c;
            h[(j, k)] += c;
        }
        for j in 0..=k {
            let c = basis[j].dot(&w);
            w -= &basis[j] * c;
            h[(j, k)] += c;
        }
        let norm = w.norm();
        h[(k + 1, k)] = norm;
        if norm <= 1e-13 * scale {
            dim = k + 1;
            break;
        }
        basis.push(w / norm);
    }

    let block = h.view((0, 0), (dim, dim)).into_owned();
    hessenberg_radius(&block)
}

/// Largest root modulus of det(zI - H) for a small upper Hessenberg H, by
/// Durand-Kerner on Hyman-evaluated determinant values.
fn hessenberg_radius(h: &DMatrix<f64>) -> f64 {
    use nalgebra::Complex;
    let m = h.nrows();
    if m == 0 {
        return 0.0;
    }
    if m == 1 {
        return h[(0, 0)].abs();
    }

    // det(zI - H) = (-1)^m det(H - zI); Hyman's back-substitution gives
    // det(H - zI) = (-1)^(m-1) prod(subdiag) * r(z).
    let subdiag_prod: f64 = (1..m).map(|i| h[(i, i - 1)]).product();
    let char_poly = |z: Complex<f64>| -> Complex<f64> {
        let mut x = vec![Complex::new(0.0, 0.0); m];
        x[m - 1] = Complex::new(1.0, 0.0);
        for i in (1..m).rev() {
            let mut acc = Complex::new(0.0, 0.0);
            for j in i..m {
                let hij = Complex::new(h[(i, j)], 0.0);
                let diag = if i == j { z } else { Complex::new(0.0, 0.0) };
                acc += (hij - diag) * x[j];
            }
            x[i - 1] = -acc / Complex::new(h[(i, i - 1)], 0.0);
        }
        let mut r = Complex::new(0.0, 0.0);
        for j in 0..m {
            let h0j = Complex::new(h[(0, j)], 0.0);
            let diag = if j == 0 { z } else { Complex::new(0.0, 0.0) };
            r += (h0j - diag) * x[j];
        }
        // det(zI - H) = (-1)^m det(H - zI) = -prod(subdiag) r(z), monic.
        r * Complex::new(-subdiag_prod, 0.0)
    };

    // Durand-Kerner from a scaled standard start.
    let radius = h.abs().max().max(1e-30);
    let mut roots: Vec<Complex<f64>> = (0..m)
        .map(|j| Complex::new(0.4, 0.9).powu(j as u32 + 1) * Complex::new(radius, 0.0))
        .collect();
    for _ in 0..200 {
        let mut moved = 0.0f64;
        for j in 0..m {
            let mut denom = Complex::new(1.0, 0.0);
            for i in 0..m {
                if i != j {
                    denom *= roots[j] - roots[i];
                }
            }
            if denom.norm() < 1e-300 {
                continue;
            }
            let step = char_poly(roots[j]) / denom;
            roots[j] -= step;
            moved = moved.max(step.norm());
        }
        if moved < 1e-13 * radius {
            break;
        }
    }
    roots.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Build the untrained reservoir: W entries nonzero with probability
/// `density`, uniform in [-1, 1], rescaled so the spectral radius equals the
/// configured target; W_in dense uniform in [-input_scale, input_scale].
/// Deterministic per seed.
pub fn init_reservoir(config: &EsnConfig, input_dim: usize) -> Result<EsnModel, EsnError> {
    config.validate()?;
    if input_dim == 0 {
        return Err(EsnError::InvalidConfig("input_dim must be >= 1".into()));
    }
    let n = config.reservoir_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let w_in = DMatrix::from_fn(n, input_dim, |_, _| {
        rng.gen_range(-config.input_scale..config.input_scale)
    });

    let mut attempts = 0usize;
    let (w, rho_raw) = loop {
        attempts += 1;
        let raw = DMatrix::from_fn(n, n, |_, _| {
            if rng.gen_range(0.0..1.0) < config.density {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let rho = spectral_radius(&raw)?;
        if rho > 0.0 {
            break (raw, rho);
        }
        if attempts >= 100 {
            return Err(EsnError::DegenerateReservoir { attempts });
        }
    };

    let w = w * (config.spectral_radius / rho_raw);
    let achieved_rho = spectral_radius(&w)?;
    Ok(EsnModel {
        config: *config,
        input_dim,
        w_in,
        w,
        w_out: None,
        achieved_rho,
        train_mse: None,
    })
}

/// One reservoir update:
/// `h = (1 - alpha) h_prev + alpha tanh(W h_prev + W_in x)`.
/// With `alpha = 1` this is the plain reservoir equation.
pub fn advance(model: &EsnModel, h_prev: &DVector<f64>, x: &[f64]) -> DVector<f64> {
    assert_eq!(h_prev.len(), model.config.reservoir_size, "state length");
    assert_eq!(x.len(), model.input_dim, "input length");
    let x = DVector::from_column_slice(x);
    let mut pre = &model.w * h_prev;
    pre += &model.w_in * x;
    let alpha = model.config.leak_rate;
    DVector::from_fn(h_prev.len(), |i, _| {
        (1.0 - alpha) * h_prev[i] + alpha * pre[i].tanh()
    })
}

/// One teacher-forced input/target sequence for the readout fit.
#[derive(Debug, Clone)]
pub struct EsnSequence {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl EsnSequence {
    /// Next-state sequence from a trajectory's flattened states.
    pub fn next_state(states: &[Vec<f64>]) -> Self {
        EsnSequence {
            inputs: states[..states.len() - 1].to_vec(),
            targets: states[1..].to_vec(),
        }
    }
}

/// Fit the readout by ridge regression over reservoir states collected
/// after washout from every sequence (teacher-forced on the ground truth):
/// `W_out = Y H^T (H H^T + lambda I)^{-1}`. Returns the trained model with
/// its training MSE.
pub fn fit_readout(model: &EsnModel, sequences: &[EsnSequence]) -> Result<EsnModel, EsnError> {
    if sequences.is_empty() {
        return Err(EsnError::InvalidConfig("need at least one sequence".into()));
    }
    let n = model.config.reservoir_size;
    let washout = model.config.washout;
    let out_dim = sequences[0]
        .targets
        .first()
        .map(|t| t.len())
        .ok_or_else(|| EsnError::DimensionMismatch("empty target sequence".into()))?;

    let mut hht = DMatrix::<f64>::zeros(n, n);
    let mut hyt = DMatrix::<f64>::zeros(n, out_dim);
    let mut collected: Vec<(DVector<f64>, Vec<f64>)> = Vec::new();

    for (s_idx, seq) in sequences.iter().enumerate() {
        if seq.inputs.len() != seq.targets.len() {
            return Err(EsnError::DimensionMismatch(format!(
                "sequence {s_idx}: {} inputs vs {} targets",
                seq.inputs.len(),
                seq.targets.len()
            )));
        }
        if seq.inputs.len() <= washout {
            return Err(EsnError::InvalidConfig(format!(
                "sequence {s_idx} has {} steps, washout is {washout}",
                seq.inputs.len()
            )));
        }
        let mut h = DVector::zeros(n);
        for (k, (input, target)) in seq.inputs.iter().zip(seq.targets.iter()).enumerate() {
            if input.len() != model.input_dim || target.len() != out_dim {
                return Err(EsnError::DimensionMismatch(format!(
                    "sequence {s_idx} step {k}: input {} target {}",
                    input.len(),
                    target.len()
                )));
            }
            h = advance(model, &h, input);
            if k >= washout {
                collected.push((h.clone(), target.clone()));
            }
        }
    }

    for (h, y) in &collected {
        // hht += h h^T, hyt += h y^T
        for i in 0..n {
            let hi = h[i];
            for j in 0..n {
                hht[(i, j)] += hi * h[j];
            }
            for (j, yj) in y.iter().enumerate() {
                hyt[(i, j)] += hi * yj;
            }
        }
    }
    for i in 0..n {
        hht[(i, i)] += model.config.ridge_lambda;
    }

    let chol = hht.cholesky().ok_or(EsnError::IllConditioned {
        lambda: model.config.ridge_lambda,
    })?;
    let solution = chol.solve(&hyt); // n x out
    let w_out = solution.transpose(); // out x n

    let mut sse = 0.0f64;
    let mut count = 0usize;
    for (h, y) in &collected {
        let pred = readout(model, &w_out, h);
        for (p, t) in pred.iter().zip(y.iter()) {
            sse += (p - t) * (p - t);
            count += 1;
        }
    }

    let mut trained = model.clone();
    trained.w_out = Some(w_out);
    trained.train_mse = Some(sse / count as f64);
    Ok(trained)
}

fn readout(model: &EsnModel, w_out: &DMatrix<f64>, h: &DVector<f64>) -> DVector<f64> {
    let mut y = w_out * h;
    if model.config.readout_activation == ReadoutActivation::Tanh {
        y.apply(|v| *v = v.tanh());
    }
    y
}

/// Closed-loop forecast: teacher-force the reservoir through `warmup`, then
/// roll forward `n_steps`, feeding each prediction back as the next input.
pub fn forecast(
    model: &EsnModel,
    warmup: &[Vec<f64>],
    n_steps: usize,
) -> Result<Vec<Vec<f64>>, EsnError> {
    let w_out = model.w_out.as_ref().ok_or(EsnError::Untrained)?;
    if warmup.len() < model.config.washout {
        return Err(EsnError::InvalidConfig(format!(
            "warmup of {} states is shorter than washout {}",
            warmup.len(),
            model.config.washout
        )));
    }
    if w_out.nrows() != model.input_dim {
        return Err(EsnError::DimensionMismatch(format!(
            "readout emits {} values, reservoir consumes {}; closed loop impossible",
            w_out.nrows(),
            model.input_dim
        )));
    }
    let mut h = DVector::zeros(model.config.reservoir_size);
    for x in warmup {
        h = advance(model, &h, x);
    }
    let mut out = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let y = readout(model, w_out, &h);
        let y_vec: Vec<f64> = y.iter().copied().collect();
        h = advance(model, &h, &y_vec);
        out.push(y_vec);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SparseCoo {
    rows: Vec<u32>,
    cols: Vec<u32>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EsnModelFile {
    model_version: u32,
    kind: String,
    config: EsnConfig,
    input_dim: usize,
    achieved_rho: f64,
    train_mse: Option<f64>,
    /// Row-major reservoir_size x input_dim.
    w_in: Vec<f64>,
    w: SparseCoo,
    /// Row-major input_dim x reservoir_size, when trained.
    w_out: Option<Vec<f64>>,
}

/// Serialize to versioned JSON (decimal arrays round-trip f64 exactly).
pub fn save_model(model: &EsnModel, path: &Path) -> Result<(), EsnError> {
    let n = model.config.reservoir_size;
    let mut coo = SparseCoo {
        rows: Vec::new(),
        cols: Vec::new(),
        values: Vec::new(),
    };
    for i in 0..n {
        for j in 0..n {
            let v = model.w[(i, j)];
            if v != 0.0 {
                coo.rows.push(i as u32);
                coo.cols.push(j as u32);
                coo.values.push(v);
            }
        }
    }
    let file = EsnModelFile {
        model_version: MODEL_VERSION,
        kind: "esn".into(),
        config: model.config,
        input_dim: model.input_dim,
        achieved_rho: model.achieved_rho,
        train_mse: model.train_mse,
        w_in: model.w_in.transpose().as_slice().to_vec(),
        w: coo,
        w_out: model
            .w_out
            .as_ref()
            .map(|m| m.transpose().as_slice().to_vec()),
    };
    let json = serde_json::to_string(&file).expect("model serialization cannot fail");
    std::fs::write(path, json).map_err(|e| EsnError::Persistence {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_model(path: &Path) -> Result<EsnModel, EsnError> {
    let fail = |message: String| EsnError::Persistence {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
    let file: EsnModelFile = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
    if file.model_version != MODEL_VERSION {
        return Err(fail(format!(
            "model version {} not readable by this build ({MODEL_VERSION})",
            file.model_version
        )));
    }
    if file.kind != "esn" {
        return Err(fail(format!("expected an esn model, found {:?}", file.kind)));
    }
    let n = file.config.reservoir_size;
    if file.w_in.len() != n * file.input_dim {
        return Err(fail("w_in length does not match dimensions".into()));
    }
    let w_in = DMatrix::from_row_slice(n, file.input_dim, &file.w_in);
    let mut w = DMatrix::zeros(n, n);
    for ((&r, &c), &v) in file
        .w
        .rows
        .iter()
        .zip(file.w.cols.iter())
        .zip(file.w.values.iter())
    {
        if r as usize >= n || c as usize >= n {
            return Err(fail(format!("reservoir entry ({r}, {c}) out of range")));
        }
        w[(r as usize, c as usize)] = v;
    }
    let w_out = match file.w_out {
        Some(values) => {
            if values.len() != file.input_dim * n {
                return Err(fail("w_out length does not match dimensions".into()));
            }
            Some(DMatrix::from_row_slice(file.input_dim, n, &values))
        }
        None => None,
    };
    Ok(EsnModel {
        config: file.config,
        input_dim: file.input_dim,
        w_in,
        w,
        w_out,
        achieved_rho: file.achieved_rho,
        train_mse: file.train_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_radius_of_identity() {
        let m = DMatrix::<f64>::identity(5, 5);
        assert!((spectral_radius(&m).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn spectral_radius_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.9, 0.1]));
        assert!((spectral_radius(&m).unwrap() - 0.9).abs() < 1e-9);
    }

    #[test]
    fn spectral_radius_of_rotation_block() {
        // Pure complex pair with modulus 1.
        let theta = 0.7f64;
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
        );
        assert!((spectral_radius(&m).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn spectral_radius_of_zero_and_nilpotent() {
        let z = DMatrix::<f64>::zeros(4, 4);
        assert_eq!(spectral_radius(&z).unwrap(), 0.0);
        let mut nil = DMatrix::<f64>::zeros(3, 3);
        nil[(0, 1)] = 2.0;
        nil[(1, 2)] = 3.0;
        let rho = spectral_radius(&nil).unwrap();
        assert!(rho < 1e-6, "nilpotent matrix reported rho = {rho}");
    }

    #[test]
    fn spectral_radius_matches_dense_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..5 {
            let m = DMatrix::from_fn(50, 50, |_, _| rng.gen_range(-1.0..1.0));
            let oracle = m
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0f64, f64::max);
            let estimate = spectral_radius(&m).unwrap();
            assert!(
                (estimate - oracle).abs() <= 1e-6 * oracle,
                "power iteration {estimate} vs eigensolver {oracle}"
            );
        }
    }

    #[test]
    fn spectral_radius_resolves_near_tied_sparse_cluster() {
        // Reservoir-sized sparse matrices have many eigenvalues within a
        // fraction of a percent of the dominant modulus; the estimator must
        // still separate them.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = DMatrix::from_fn(300, 300, |_, _| {
            if rng.gen_range(0.0..1.0) < 0.05 {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let oracle = m
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0f64, f64::max);
        let estimate = spectral_radius(&m).unwrap();
        assert!(
            (estimate - oracle).abs() <= 1e-6 * oracle,
            "estimate {estimate} vs oracle {oracle}"
        );
    }

    #[test]
    fn init_hits_the_target_radius() {
        let config = EsnConfig {
            reservoir_size: 80,
            seed: 3,
            ..Default::default()
        };
        let model = init_reservoir(&config, 12).unwrap();
        assert!(
            (model.achieved_rho - 0.9).abs() <= 1e-6 * 0.9,
            "achieved rho {}",
            model.achieved_rho
        );
        // Sparsity within sampling noise of the Bernoulli density.
        let nonzero = model.w.iter().filter(|v| **v != 0.0).count() as f64;
        let expected = 0.05 * (80.0 * 80.0);
        assert!((nonzero - expected).abs() < 4.0 * expected.sqrt() + 10.0);
    }

    #[test]
    fn single_unit_reservoir() {
        let config = EsnConfig {
            reservoir_size: 1,
            density: 1.0,
            spectral_radius: 0.7,
            seed: 1,
            ..Default::default()
        };
        let model = init_reservoir(&config, 2).unwrap();
        assert!((model.w[(0, 0)].abs() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn init_is_deterministic() {
        let config = EsnConfig {
            reservoir_size: 40,
            seed: 11,
            ..Default::default()
        };
        let a = init_reservoir(&config, 8).unwrap();
        let b = init_reservoir(&config, 8).unwrap();
        assert_eq!(a.w, b.w);
        assert_eq!(a.w_in, b.w_in);
    }

    #[test]
    fn scaling_is_a_projection() {
        // Rescaling any positive multiple of W lands on the same matrix.
        let config = EsnConfig {
            reservoir_size: 30,
            seed: 5,
            ..Default::default()
        };
        let model = init_reservoir(&config, 4).unwrap();
        let scaled = &model.w * 3.0;
        let rho = spectral_radius(&scaled).unwrap();
        let back = scaled * (config.spectral_radius / rho);
        let diff = (&back - &model.w).abs().max();
        assert!(diff < 1e-9, "projection moved entries by {diff}");
    }

    #[test]
    fn advance_fixes_zero_and_respects_leak() {
        let config = EsnConfig {
            reservoir_size: 20,
            seed: 2,
            ..Default::default()
        };
        let model = init_reservoir(&config, 3).unwrap();
        let h0 = DVector::zeros(20);
        let h = advance(&model, &h0, &[0.0, 0.0, 0.0]);
        assert_eq!(h, h0);

        // alpha = 1 reduces to tanh(W h + W_in x).
        let x = [0.3, -0.2, 0.7];
        let h1 = advance(&model, &h0, &x);
        let x_vec = DVector::from_column_slice(&x);
        let literal = (&model.w * &h0 + &model.w_in * x_vec).map(f64::tanh);
        assert!((h1 - literal).norm() < 1e-14);
    }

    #[test]
    fn exact_linear_targets_are_recovered() {
        let config = EsnConfig {
            reservoir_size: 20,
            ridge_lambda: 0.0,
            washout: 5,
            seed: 7,
            ..Default::default()
        };
        let model = init_reservoir(&config, 3).unwrap();
        // Build inputs, collect true reservoir states, make targets an exact
        // linear map of them.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let map = DMatrix::from_fn(3, 20, |i, j| ((i * 20 + j) as f64 * 0.01).sin());
        let mut h = DVector::zeros(20);
        let mut targets = Vec::new();
        for x in &inputs {
            h = advance(&model, &h, x);
            let y = &map * &h;
            targets.push(y.iter().copied().collect::<Vec<f64>>());
        }
        let trained = fit_readout(
            &model,
            &[EsnSequence {
                inputs,
                targets,
            }],
        )
        .unwrap();
        let w_out = trained.w_out.unwrap();
        assert!(
            (&w_out - &map).abs().max() < 1e-8,
            "recovered map off by {}",
            (&w_out - &map).abs().max()
        );
        assert!(trained.train_mse.unwrap() < 1e-16);
    }

    #[test]
    fn huge_ridge_shrinks_the_readout() {
        let config = EsnConfig {
            reservoir_size: 15,
            ridge_lambda: 1e6,
            washout: 3,
            seed: 9,
            ..Default::default()
        };
        let model = init_reservoir(&config, 2).unwrap();
        let inputs: Vec<Vec<f64>> = (0..50).map(|k| vec![(k as f64).sin(), 0.5]).collect();
        let targets: Vec<Vec<f64>> = (0..50).map(|k| vec![(k as f64).cos(), 1.0]).collect();
        let trained = fit_readout(&model, &[EsnSequence { inputs, targets }]).unwrap();
        let max_w = trained.w_out.unwrap().abs().max();
        assert!(max_w < 1e-3, "ridge failed to shrink weights: {max_w}");
    }

    #[test]
    fn forecast_requires_training_and_handles_zero_steps() {
        let config = EsnConfig {
            reservoir_size: 10,
            washout: 2,
            seed: 4,
            ..Default::default()
        };
        let model = init_reservoir(&config, 2).unwrap();
        let warmup = vec![vec![0.1, 0.2]; 5];
        assert!(matches!(
            forecast(&model, &warmup, 3),
            Err(EsnError::Untrained)
        ));

        let inputs: Vec<Vec<f64>> = (0..30).map(|k| vec![(k as f64 * 0.1).sin(), 0.3]).collect();
        let targets = inputs.clone();
        let trained = fit_readout(&model, &[EsnSequence { inputs, targets }]).unwrap();
        assert!(forecast(&trained, &warmup, 0).unwrap().is_empty());
        assert_eq!(forecast(&trained, &warmup, 4).unwrap().len(), 4);
    }

    #[test]
    fn rank_deficient_unregularized_fit_is_ill_conditioned() {
        // Fewer collected states than reservoir units with lambda = 0: the
        // normal matrix is singular.
        let config = EsnConfig {
            reservoir_size: 30,
            ridge_lambda: 0.0,
            washout: 1,
            seed: 3,
            ..Default::default()
        };
        let model = init_reservoir(&config, 2).unwrap();
        let inputs: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64 * 0.1, 0.2]).collect();
        let targets = inputs.clone();
        assert!(matches!(
            fit_readout(&model, &[EsnSequence { inputs, targets }]),
            Err(EsnError::IllConditioned { .. })
        ));
    }

    #[test]
    fn fixed_point_input_yields_constant_forecast() {
        let config = EsnConfig {
            reservoir_size: 40,
            washout: 5,
            seed: 8,
            ..Default::default()
        };
        let model = init_reservoir(&config, 2).unwrap();
        let x_star = vec![0.4, -0.3];
        let inputs = vec![x_star.clone(); 80];
        let targets = inputs.clone();
        let trained = fit_readout(&model, &[EsnSequence { inputs, targets }]).unwrap();
        let warmup = vec![x_star.clone(); 40];
        let preds = forecast(&trained, &warmup, 10).unwrap();
        for p in preds {
            for (a, b) in p.iter().zip(x_star.iter()) {
                assert!((a - b).abs() < 1e-3, "drifted off the fixed point: {a} vs {b}");
            }
        }
    }

    #[test]
    fn model_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("esn.json");
        let config = EsnConfig {
            reservoir_size: 12,
            washout: 2,
            seed: 21,
            ..Default::default()
        };
        let model = init_reservoir(&config, 4).unwrap();
        let inputs: Vec<Vec<f64>> = (0..20)
            .map(|k| vec![(k as f64).sin(), 0.1, -0.4, (k as f64).cos()])
            .collect();
        let targets = inputs.clone();
        let trained = fit_readout(&model, &[EsnSequence { inputs, targets }]).unwrap();
        save_model(&trained, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(trained, back);
    }
}
