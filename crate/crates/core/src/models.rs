//! Loss models (value + gradient) and the inexact proximal solver for the
//! personalized-model subproblem.
//!
//! Three model kinds: least-squares linear regression (the `1/(2N)` scaling
//! of the analytic setting), multinomial logistic regression, and a two-
//! hidden-layer ReLU MLP with softmax output and exact backpropagation. All
//! are bound to their client's data at construction and immutable afterwards,
//! so concurrent calls from distinct clients are safe.

use std::sync::Arc;

use rand::Rng;

use crate::datasets::{LabeledDataset, LinRegClientData};
use crate::error::{Error, Result};
use crate::vecmath::{all_finite, axpy, dot, zeros, Matrix, ParamVector};

/// Classification data binding: the shared store plus this client's rows.
#[derive(Debug, Clone)]
pub struct ClassifierBinding {
    pub data: Arc<LabeledDataset>,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum LossModel {
    /// `f(θ) = 1/(2N) ‖Xθ − y‖²`
    LinReg { x: Matrix, y: Vec<f64> },
    /// Linear softmax with bias; cross-entropy loss.
    Logistic { binding: ClassifierBinding },
    /// `d → h1 → h2 → C`, ReLU activations, softmax cross-entropy.
    Mlp {
        binding: ClassifierBinding,
        hidden: (usize, usize),
    },
}

impl LossModel {
    pub fn linreg(x: Matrix, y: Vec<f64>) -> Self {
        assert_eq!(x.rows(), y.len());
        LossModel::LinReg { x, y }
    }

    pub fn linreg_from(data: &LinRegClientData) -> Self {
        LossModel::linreg(data.x.clone(), data.y.clone())
    }

    pub fn logistic(data: Arc<LabeledDataset>, indices: Vec<usize>) -> Self {
        LossModel::Logistic {
            binding: ClassifierBinding { data, indices },
        }
    }

    pub fn mlp(data: Arc<LabeledDataset>, indices: Vec<usize>, hidden: (usize, usize)) -> Self {
        LossModel::Mlp {
            binding: ClassifierBinding { data, indices },
            hidden,
        }
    }

    /// Number of local samples bound to this model.
    pub fn n_local(&self) -> usize {
        match self {
            LossModel::LinReg { y, .. } => y.len(),
            LossModel::Logistic { binding } | LossModel::Mlp { binding, .. } => {
                binding.indices.len()
            }
        }
    }

    /// Parameter dimension.
    pub fn dim(&self) -> usize {
        match self {
            LossModel::LinReg { x, .. } => x.cols(),
            LossModel::Logistic { binding } => {
                let d = binding.data.dim();
                let c = binding.data.num_classes;
                c * d + c
            }
            LossModel::Mlp { binding, hidden } => {
                let d = binding.data.dim();
                let c = binding.data.num_classes;
                let (h1, h2) = *hidden;
                h1 * d + h1 + h2 * h1 + h2 + c * h2 + c
            }
        }
    }

    pub fn is_classifier(&self) -> bool {
        !matches!(self, LossModel::LinReg { .. })
    }

    /// Gradient-Lipschitz estimate where one is analytically available
    /// (isotropic linear regression: `L = b`).
    pub fn smoothness_hint(&self) -> Option<f64> {
        match self {
            LossModel::LinReg { x, .. } => {
                let g = x.gram();
                let n = x.rows() as f64;
                // isotropic designs: all diagonal entries equal N·b
                let mut max_diag: f64 = 0.0;
                for i in 0..g.rows() {
                    max_diag = max_diag.max(g.get(i, i));
                }
                Some(max_diag / n)
            }
            _ => None,
        }
    }

    /// Zero init for the convex models, scaled uniform `±1/√fan_in` for the
    /// MLP layers.
    pub fn init_theta(&self, rng: &mut impl Rng) -> ParamVector {
        match self {
            LossModel::Mlp { binding, hidden } => {
                let d = binding.data.dim();
                let c = binding.data.num_classes;
                let (h1, h2) = *hidden;
                let mut theta = Vec::with_capacity(self.dim());
                for (fan_in, rows) in [(d, h1), (h1, h2), (h2, c)] {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for _ in 0..rows * fan_in + rows {
                        theta.push(rng.random_range(-bound..bound));
                    }
                }
                theta
            }
            _ => zeros(self.dim()),
        }
    }

    fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: theta.len(),
            });
        }
        Ok(())
    }

    /// Mean loss over `batch` (positions into this client's local samples).
    pub fn loss(&self, theta: &[f64], batch: &[usize]) -> Result<f64> {
        self.check_dim(theta)?;
        if batch.is_empty() {
            return Err(Error::InvalidParam("empty batch".into()));
        }
        let inv = 1.0 / batch.len() as f64;
        match self {
            LossModel::LinReg { x, y } => {
                let mut acc = 0.0;
                for &j in batch {
                    let r = dot(x.row(j), theta) - y[j];
                    acc += r * r;
                }
                Ok(0.5 * acc * inv)
            }
            LossModel::Logistic { binding } => {
                let mut acc = 0.0;
                for &j in batch {
                    let row = binding.data.features.row(binding.indices[j]);
                    let label = binding.data.labels[binding.indices[j]];
                    let logits = logistic_logits(binding, theta, row);
                    acc += cross_entropy(&logits, label);
                }
                Ok(acc * inv)
            }
            LossModel::Mlp { binding, hidden } => {
                let mut acc = 0.0;
                for &j in batch {
                    let row = binding.data.features.row(binding.indices[j]);
                    let label = binding.data.labels[binding.indices[j]];
                    let fwd = mlp_forward(binding, *hidden, theta, row);
                    acc += cross_entropy(&fwd.logits, label);
                }
                Ok(acc * inv)
            }
        }
    }

    /// Gradient of the mean batch loss.
    pub fn grad(&self, theta: &[f64], batch: &[usize]) -> Result<ParamVector> {
        self.check_dim(theta)?;
        if batch.is_empty() {
            return Err(Error::InvalidParam("empty batch".into()));
        }
        let inv = 1.0 / batch.len() as f64;
        let mut g = zeros(self.dim());
        match self {
            LossModel::LinReg { x, y } => {
                for &j in batch {
                    let r = dot(x.row(j), theta) - y[j];
                    axpy(&mut g, r * inv, x.row(j));
                }
            }
            LossModel::Logistic { binding } => {
                let d = binding.data.dim();
                let c = binding.data.num_classes;
                for &j in batch {
                    let row = binding.data.features.row(binding.indices[j]);
                    let label = binding.data.labels[binding.indices[j]];
                    let mut p = logistic_logits(binding, theta, row);
                    softmax_in_place(&mut p);
                    for k in 0..c {
                        let coef = (p[k] - f64::from(k == label)) * inv;
                        axpy(&mut g[k * d..(k + 1) * d], coef, row);
                        g[c * d + k] += coef;
                    }
                }
            }
            LossModel::Mlp { binding, hidden } => {
                for &j in batch {
                    let row = binding.data.features.row(binding.indices[j]);
                    let label = binding.data.labels[binding.indices[j]];
                    mlp_backward(binding, *hidden, theta, row, label, inv, &mut g);
                }
            }
        }
        Ok(g)
    }

    pub fn full_batch(&self) -> Vec<usize> {
        (0..self.n_local()).collect()
    }

    pub fn full_loss(&self, theta: &[f64]) -> Result<f64> {
        self.loss(theta, &self.full_batch())
    }

    pub fn full_grad(&self, theta: &[f64]) -> Result<ParamVector> {
        self.grad(theta, &self.full_batch())
    }

    /// Top-1 accuracy over `batch`; argmax ties break toward the lowest
    /// class index.
    pub fn accuracy(&self, theta: &[f64], batch: &[usize]) -> Result<f64> {
        self.check_dim(theta)?;
        if batch.is_empty() {
            return Err(Error::InvalidParam("empty evaluation set".into()));
        }
        let (binding, hidden) = match self {
            LossModel::LinReg { .. } => return Err(Error::NotClassifier),
            LossModel::Logistic { binding } => (binding, None),
            LossModel::Mlp { binding, hidden } => (binding, Some(*hidden)),
        };
        let mut correct = 0usize;
        for &j in batch {
            let row = binding.data.features.row(binding.indices[j]);
            let label = binding.data.labels[binding.indices[j]];
            let logits = match hidden {
                None => logistic_logits(binding, theta, row),
                Some(h) => mlp_forward(binding, h, theta, row).logits,
            };
            let mut best = 0usize;
            for k in 1..logits.len() {
                if logits[k] > logits[best] {
                    best = k;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / batch.len() as f64)
    }
}

fn logistic_logits(binding: &ClassifierBinding, theta: &[f64], row: &[f64]) -> ParamVector {
    let d = binding.data.dim();
    let c = binding.data.num_classes;
    (0..c)
        .map(|k| dot(&theta[k * d..(k + 1) * d], row) + theta[c * d + k])
        .collect()
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        z += *l;
    }
    for l in logits.iter_mut() {
        *l /= z;
    }
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

struct MlpForward {
    a1: ParamVector,
    a2: ParamVector,
    logits: ParamVector,
}

struct MlpLayout {
    d: usize,
    c: usize,
    h1: usize,
    h2: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

fn mlp_layout(binding: &ClassifierBinding, hidden: (usize, usize)) -> MlpLayout {
    let d = binding.data.dim();
    let c = binding.data.num_classes;
    let (h1, h2) = hidden;
    let w1 = 0;
    let b1 = w1 + h1 * d;
    let w2 = b1 + h1;
    let b2 = w2 + h2 * h1;
    let w3 = b2 + h2;
    let b3 = w3 + c * h2;
    MlpLayout {
        d,
        c,
        h1,
        h2,
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
    }
}

fn mlp_forward(
    binding: &ClassifierBinding,
    hidden: (usize, usize),
    theta: &[f64],
    row: &[f64],
) -> MlpForward {
    let l = mlp_layout(binding, hidden);
    let mut a1 = zeros(l.h1);
    for i in 0..l.h1 {
        let z = dot(&theta[l.w1 + i * l.d..l.w1 + (i + 1) * l.d], row) + theta[l.b1 + i];
        a1[i] = z.max(0.0);
    }
    let mut a2 = zeros(l.h2);
    for i in 0..l.h2 {
        let z = dot(&theta[l.w2 + i * l.h1..l.w2 + (i + 1) * l.h1], &a1) + theta[l.b2 + i];
        a2[i] = z.max(0.0);
    }
    let mut logits = zeros(l.c);
    for k in 0..l.c {
        logits[k] = dot(&theta[l.w3 + k * l.h2..l.w3 + (k + 1) * l.h2], &a2) + theta[l.b3 + k];
    }
    MlpForward { a1, a2, logits }
}

fn mlp_backward(
    binding: &ClassifierBinding,
    hidden: (usize, usize),
    theta: &[f64],
    row: &[f64],
    label: usize,
    scale: f64,
    g: &mut [f64],
) {
    let l = mlp_layout(binding, hidden);
    let fwd = mlp_forward(binding, hidden, theta, row);
    let mut delta3 = fwd.logits.clone();
    softmax_in_place(&mut delta3);
    delta3[label] -= 1.0;

    for k in 0..l.c {
        let coef = delta3[k] * scale;
        axpy(&mut g[l.w3 + k * l.h2..l.w3 + (k + 1) * l.h2], coef, &fwd.a2);
        g[l.b3 + k] += coef;
    }
    let mut delta2 = zeros(l.h2);
    for i in 0..l.h2 {
        if fwd.a2[i] > 0.0 {
            let mut acc = 0.0;
            for k in 0..l.c {
                acc += delta3[k] * theta[l.w3 + k * l.h2 + i];
            }
            delta2[i] = acc;
        }
    }
    for i in 0..l.h2 {
        let coef = delta2[i] * scale;
        if coef != 0.0 {
            axpy(&mut g[l.w2 + i * l.h1..l.w2 + (i + 1) * l.h1], coef, &fwd.a1);
        }
        g[l.b2 + i] += coef;
    }
    let mut delta1 = zeros(l.h1);
    for i in 0..l.h1 {
        if fwd.a1[i] > 0.0 {
            let mut acc = 0.0;
            for j in 0..l.h2 {
                acc += delta2[j] * theta[l.w2 + j * l.h1 + i];
            }
            delta1[i] = acc;
        }
    }
    for i in 0..l.h1 {
        let coef = delta1[i] * scale;
        if coef != 0.0 {
            axpy(&mut g[l.w1 + i * l.d..l.w1 + (i + 1) * l.d], coef, row);
        }
        g[l.b1 + i] += coef;
    }
}

/// Anchor of the proximal penalty: either the local model itself or its
/// image under a fixed projection.
pub enum Anchor<'a> {
    Direct(&'a [f64]),
    Projected { p: &'a Matrix, target: &'a [f64] },
}

impl Anchor<'_> {
    /// `(θ − w)` or `Pᵀ(Pθ − w)`: the penalty gradient without the λ factor.
    pub fn penalty_grad(&self, theta: &[f64]) -> ParamVector {
        match self {
            Anchor::Direct(w) => crate::vecmath::sub(theta, w),
            Anchor::Projected { p, target } => {
                let mut proj = p.matvec(theta);
                for (v, t) in proj.iter_mut().zip(*target) {
                    *v -= t;
                }
                p.matvec_t(&proj)
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProxConfig {
    pub lambda: f64,
    /// Client weight; the stopping residual is `‖α(∇f + λ·pen)‖²`.
    pub alpha: f64,
    pub eta: f64,
    pub max_passes: usize,
    pub eps_target: f64,
    /// Mini-batch size; values `>= n` run full-batch passes (and draw no
    /// shuffle randomness).
    pub batch_size: usize,
}

#[derive(Debug, Clone)]
pub struct ProxResult {
    pub theta: ParamVector,
    /// `‖α(∇f(θ) + λ·pen(θ))‖²` on the full local dataset.
    pub residual_sq: f64,
    pub iters_used: usize,
    pub met_tolerance: bool,
}

/// Inexact solve of `min_θ f(θ) + (λ/2)‖θ − w‖²` (or its projected variant)
/// by mini-batch gradient descent. The tolerance is checked on the full
/// local dataset once per pass; mini-batch steps inside a pass use the
/// provided RNG for the shuffle.
pub fn prox_solve(
    model: &LossModel,
    anchor: &Anchor,
    warm_start: &[f64],
    cfg: &ProxConfig,
    rng: &mut impl Rng,
) -> Result<ProxResult> {
    if cfg.eta <= 0.0 || cfg.lambda <= 0.0 || cfg.max_passes == 0 {
        return Err(Error::InvalidParam(
            "prox solve needs eta > 0, lambda > 0, max_passes >= 1".into(),
        ));
    }
    let n = model.n_local();
    let mut theta = warm_start.to_vec();
    let full_batch = cfg.batch_size >= n;
    let mut order: Vec<usize> = (0..n).collect();

    let mut residual_sq = f64::INFINITY;
    let mut met = false;
    let mut passes = 0usize;
    for pass in 1..=cfg.max_passes {
        passes = pass;
        if full_batch {
            let g = model.grad(&theta, &order)?;
            let pen = anchor.penalty_grad(&theta);
            for k in 0..theta.len() {
                theta[k] -= cfg.eta * (g[k] + cfg.lambda * pen[k]);
            }
        } else {
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            for batch in order.chunks(cfg.batch_size) {
                let g = model.grad(&theta, batch)?;
                let pen = anchor.penalty_grad(&theta);
                for k in 0..theta.len() {
                    theta[k] -= cfg.eta * (g[k] + cfg.lambda * pen[k]);
                }
            }
        }
        if !all_finite(&theta) {
            return Err(Error::ProxDiverged { pass });
        }
        let g = model.full_grad(&theta)?;
        let pen = anchor.penalty_grad(&theta);
        let mut r = 0.0;
        for k in 0..theta.len() {
            let v = g[k] + cfg.lambda * pen[k];
            r += v * v;
        }
        residual_sq = cfg.alpha * cfg.alpha * r;
        if !residual_sq.is_finite() {
            return Err(Error::ProxDiverged { pass });
        }
        if residual_sq <= cfg.eps_target {
            met = true;
            break;
        }
    }
    Ok(ProxResult {
        theta,
        residual_sq,
        iters_used: passes,
        met_tolerance: met,
    })
}

/// Gradient of the Moreau envelope: `λ(w − θ̂(w))` with `θ̂` from
/// [`prox_solve`].
pub fn moreau_grad(
    model: &LossModel,
    w: &[f64],
    warm_start: &[f64],
    cfg: &ProxConfig,
    rng: &mut impl Rng,
) -> Result<ParamVector> {
    let result = prox_solve(model, &Anchor::Direct(w), warm_start, cfg, rng)?;
    let mut g = zeros(w.len());
    for k in 0..w.len() {
        g[k] = cfg.lambda * (w[k] - result.theta[k]);
    }
    Ok(g)
}

/// Central finite differences of the mean batch loss; the independent oracle
/// for every analytic gradient. Lives here so integration tests and the
/// acceptance suite can share it, but is not used by any solver path.
pub fn finite_diff_grad(model: &LossModel, theta: &[f64], batch: &[usize]) -> Result<ParamVector> {
    let mut g = zeros(theta.len());
    let mut t = theta.to_vec();
    for k in 0..theta.len() {
        let h = 1e-5 * (1.0 + theta[k].abs());
        t[k] = theta[k] + h;
        let up = model.loss(&t, batch)?;
        t[k] = theta[k] - h;
        let down = model.loss(&t, batch)?;
        t[k] = theta[k];
        g[k] = (up - down) / (2.0 * h);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_classification, synth_linreg, ThetaGen};
    use crate::rng::{global_stream, Purpose};
    use crate::vecmath::{dist_sq, norm};

    fn rel_err(got: &[f64], want: &[f64]) -> f64 {
        (dist_sq(got, want)).sqrt() / (1.0 + norm(want))
    }

    fn toy_classifier(kind: &str, seed: u64) -> LossModel {
        let ds = Arc::new(synth_classification(2, 15, 4, 3, 2.0, seed).unwrap());
        let indices: Vec<usize> = (0..ds.len()).collect();
        match kind {
            "logistic" => LossModel::logistic(ds, indices),
            "mlp" => LossModel::mlp(ds, indices, (5, 4)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn linreg_loss_hand_arithmetic() {
        // d=1, X=(1;1), y=(0;2), theta=0, N=2 -> (0+4)/(2*2) = 1
        let x = Matrix::from_rows(vec![vec![1.0], vec![1.0]]);
        let m = LossModel::linreg(x, vec![0.0, 2.0]);
        assert_eq!(m.full_loss(&[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn linreg_zero_loss_at_truth_when_noiseless() {
        let c = synth_linreg(1, 6, 3, 1.0, 0.0, &ThetaGen::Gaussian { std: 1.0 }, 2).unwrap();
        let m = LossModel::linreg_from(&c[0]);
        assert!(m.full_loss(&c[0].true_theta).unwrap() < 1e-24);
    }

    #[test]
    fn linreg_grad_vanishes_at_estimator() {
        let c = synth_linreg(1, 8, 3, 2.0, 0.7, &ThetaGen::Gaussian { std: 1.0 }, 3).unwrap();
        let m = LossModel::linreg_from(&c[0]);
        let g = m.full_grad(&c[0].theta_hat()).unwrap();
        assert!(norm(&g) < 1e-10);
    }

    #[test]
    fn logistic_uniform_softmax_at_zero() {
        let model = toy_classifier("logistic", 4);
        let loss = model.full_loss(&zeros(model.dim())).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logistic_grad_single_sample_at_zero() {
        // C=2: grad of the class-k weight block is (p_k - onehot_k) x with
        // p = (1/2, 1/2).
        let features = Matrix::from_rows(vec![vec![2.0, -1.0, 0.5]]);
        let ds = Arc::new(LabeledDataset::new(features, vec![1], 2).unwrap());
        let m = LossModel::logistic(ds, vec![0]);
        let g = m.grad(&zeros(m.dim()), &[0]).unwrap();
        let x = [2.0, -1.0, 0.5];
        for j in 0..3 {
            assert!((g[j] - 0.5 * x[j]).abs() < 1e-14); // class 0: p - 0
            assert!((g[3 + j] + 0.5 * x[j]).abs() < 1e-14); // class 1: p - 1
        }
        assert!((g[6] - 0.5).abs() < 1e-14);
        assert!((g[7] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        // 10 seeded random (theta, batch) pairs per model kind.
        let lin = {
            let c = synth_linreg(1, 10, 4, 1.5, 0.5, &ThetaGen::Gaussian { std: 1.0 }, 5).unwrap();
            LossModel::linreg_from(&c[0])
        };
        for (name, model) in [
            ("linreg", lin),
            ("logistic", toy_classifier("logistic", 6)),
            ("mlp", toy_classifier("mlp", 7)),
        ] {
            let mut rng = global_stream(11, Purpose::Trial);
            for trial in 0..10 {
                let theta: ParamVector =
                    (0..model.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = model.n_local();
                let batch: Vec<usize> =
                    (0..5).map(|_| rng.random_range(0..n)).collect();
                let g = model.grad(&theta, &batch).unwrap();
                let fd = finite_diff_grad(&model, &theta, &batch).unwrap();
                let err = rel_err(&g, &fd);
                assert!(err <= 1e-5, "{name} trial {trial}: rel err {err}");
            }
        }
    }

    #[test]
    fn prox_matches_closed_form_on_linreg() {
        let c = synth_linreg(1, 12, 3, 2.0, 0.4, &ThetaGen::Gaussian { std: 1.0 }, 8).unwrap();
        let model = LossModel::linreg_from(&c[0]);
        let (b, lambda) = (c[0].b, 0.7);
        let w: ParamVector = vec![0.3, -0.2, 1.1];
        let hat = c[0].theta_hat();
        let expected: ParamVector = (0..3).map(|k| (b * hat[k] + lambda * w[k]) / (b + lambda)).collect();
        let cfg = ProxConfig {
            lambda,
            alpha: 1.0,
            eta: 0.2,
            max_passes: 500,
            eps_target: 1e-22,
            batch_size: usize::MAX,
        };
        let mut rng = global_stream(0, Purpose::Batch);
        let res = prox_solve(&model, &Anchor::Direct(&w), &zeros(3), &cfg, &mut rng).unwrap();
        assert!(rel_err(&res.theta, &expected) < 1e-6, "{:?}", res.theta);
        assert!(res.met_tolerance);
    }

    #[test]
    fn prox_large_lambda_pins_to_anchor() {
        let c = synth_linreg(1, 8, 2, 1.0, 0.2, &ThetaGen::Gaussian { std: 1.0 }, 9).unwrap();
        let model = LossModel::linreg_from(&c[0]);
        let w = vec![0.5, -1.5];
        let cfg = ProxConfig {
            lambda: 1e6,
            alpha: 1.0,
            eta: 0.9e-6,
            max_passes: 200,
            eps_target: 1e-12,
            batch_size: usize::MAX,
        };
        let mut rng = global_stream(0, Purpose::Batch);
        let res = prox_solve(&model, &Anchor::Direct(&w), &w, &cfg, &mut rng).unwrap();
        let rel = (dist_sq(&res.theta, &w)).sqrt() / norm(&w);
        assert!(rel < 1e-4, "rel {rel}");
    }

    #[test]
    fn prox_huge_tolerance_met_after_first_pass() {
        let c = synth_linreg(1, 8, 2, 1.0, 0.2, &ThetaGen::Gaussian { std: 1.0 }, 10).unwrap();
        let model = LossModel::linreg_from(&c[0]);
        let cfg = ProxConfig {
            lambda: 1.0,
            alpha: 0.1,
            eta: 0.1,
            max_passes: 50,
            eps_target: 1e9,
            batch_size: usize::MAX,
        };
        let mut rng = global_stream(0, Purpose::Batch);
        let res = prox_solve(&model, &Anchor::Direct(&[0.0, 0.0]), &zeros(2), &cfg, &mut rng).unwrap();
        assert!(res.met_tolerance);
        assert_eq!(res.iters_used, 1);
    }

    #[test]
    fn prox_diverges_with_absurd_step() {
        let c = synth_linreg(1, 8, 2, 1.0, 0.2, &ThetaGen::Gaussian { std: 1.0 }, 11).unwrap();
        let model = LossModel::linreg_from(&c[0]);
        let cfg = ProxConfig {
            lambda: 1.0,
            alpha: 1.0,
            eta: 1e12,
            max_passes: 4000,
            eps_target: 1e-20,
            batch_size: usize::MAX,
        };
        let mut rng = global_stream(0, Purpose::Batch);
        match prox_solve(&model, &Anchor::Direct(&[0.0, 0.0]), &[1.0, 1.0], &cfg, &mut rng) {
            Err(Error::ProxDiverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn prox_objective_monotone_below_critical_step() {
        // eta < 1/(L + lambda) with L = b for full-batch steps.
        let c = synth_linreg(1, 10, 3, 2.0, 0.5, &ThetaGen::Gaussian { std: 1.0 }, 12).unwrap();
        let model = LossModel::linreg_from(&c[0]);
        let (lambda, eta) = (1.0, 0.9 / (c[0].b + 1.0));
        let w = vec![0.1, 0.2, -0.4];
        let objective = |theta: &[f64]| {
            model.full_loss(theta).unwrap() + 0.5 * lambda * dist_sq(theta, &w)
        };
        let mut theta = vec![1.0, -1.0, 0.5];
        let mut prev = objective(&theta);
        for _ in 0..40 {
            let g = model.full_grad(&theta).unwrap();
            for k in 0..3 {
                theta[k] -= eta * (g[k] + lambda * (theta[k] - w[k]));
            }
            let cur = objective(&theta);
            assert!(cur <= prev + 1e-12, "objective rose: {prev} -> {cur}");
            prev = cur;
        }
    }

    #[test]
    fn moreau_grad_matches_algebra() {
        let c = synth_linreg(1, 10, 3, 1.5, 0.3, &ThetaGen::Gaussian { std: 1.0 }, 13).unwrap();
        let model = LossModel::linreg_from(&c[0]);
        let (b, lambda) = (c[0].b, 0.8);
        let hat = c[0].theta_hat();
        let cfg = ProxConfig {
            lambda,
            alpha: 1.0,
            eta: 1.0 / (b + lambda),
            max_passes: 300,
            eps_target: 1e-26,
            batch_size: usize::MAX,
        };
        let w = vec![0.4, -0.9, 0.2];
        let mut rng = global_stream(0, Purpose::Batch);
        let g = moreau_grad(&model, &w, &zeros(3), &cfg, &mut rng).unwrap();
        let coef = lambda * b / (b + lambda);
        let expected: ParamVector = (0..3).map(|k| coef * (w[k] - hat[k])).collect();
        assert!(rel_err(&g, &expected) < 1e-6);

        // at w = theta_hat the envelope gradient vanishes
        let mut rng = global_stream(0, Purpose::Batch);
        let g0 = moreau_grad(&model, &hat, &zeros(3), &cfg, &mut rng).unwrap();
        assert!(norm(&g0) < 1e-7);
    }

    #[test]
    fn moreau_grad_matches_envelope_finite_differences() {
        let c = synth_linreg(1, 8, 2, 1.2, 0.3, &ThetaGen::Gaussian { std: 1.0 }, 14).unwrap();
        let model = LossModel::linreg_from(&c[0]);
        let lambda = 0.6;
        let cfg = ProxConfig {
            lambda,
            alpha: 1.0,
            eta: 1.0 / (c[0].b + lambda),
            max_passes: 400,
            eps_target: 1e-26,
            batch_size: usize::MAX,
        };
        let envelope = |w: &[f64]| {
            let mut rng = global_stream(0, Purpose::Batch);
            let res = prox_solve(&model, &Anchor::Direct(w), &zeros(2), &cfg, &mut rng).unwrap();
            model.full_loss(&res.theta).unwrap() + 0.5 * lambda * dist_sq(&res.theta, w)
        };
        let mut rng = global_stream(21, Purpose::Trial);
        for _ in 0..5 {
            let w: ParamVector = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut prng = global_stream(0, Purpose::Batch);
            let g = moreau_grad(&model, &w, &zeros(2), &cfg, &mut prng).unwrap();
            for k in 0..2 {
                let h = 1e-5 * (1.0 + w[k].abs());
                let mut wp = w.clone();
                wp[k] += h;
                let mut wm = w.clone();
                wm[k] -= h;
                let fd = (envelope(&wp) - envelope(&wm)) / (2.0 * h);
                assert!((g[k] - fd).abs() <= 1e-3 * (1.0 + fd.abs()), "{} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn accuracy_perfect_constant_and_errors() {
        let features = Matrix::from_rows(vec![
            vec![5.0, 0.0],
            vec![0.0, 5.0],
            vec![5.0, 0.0],
            vec![0.0, 5.0],
        ]);
        let ds = Arc::new(LabeledDataset::new(features, vec![0, 1, 0, 1], 2).unwrap());
        let m = LossModel::logistic(ds, vec![0, 1, 2, 3]);
        // perfect: W maps feature j to class j
        let mut theta = zeros(m.dim());
        theta[0] = 1.0; // class0 <- x0
        theta[3] = 1.0; // class1 <- x1
        assert_eq!(m.accuracy(&theta, &m.full_batch()).unwrap(), 1.0);
        // constant predictor (all-zero weights, argmax ties to class 0) on a
        // balanced set: accuracy 1/C
        assert_eq!(m.accuracy(&zeros(m.dim()), &m.full_batch()).unwrap(), 0.5);
        assert!(m.accuracy(&theta, &[]).is_err());

        let c = synth_linreg(1, 4, 2, 1.0, 0.0, &ThetaGen::Gaussian { std: 1.0 }, 15).unwrap();
        let lin = LossModel::linreg_from(&c[0]);
        assert!(matches!(
            lin.accuracy(&zeros(2), &[0]),
            Err(Error::NotClassifier)
        ));
    }

    #[test]
    fn separation_zero_is_chance_level() {
        let ds = Arc::new(synth_classification(2, 200, 4, 4, 0.0, 16).unwrap());
        let idx: Vec<usize> = (0..ds.len()).collect();
        let m = LossModel::logistic(ds, idx);
        // any fixed parameter vector cannot beat chance by a wide margin
        let mut rng = global_stream(3, Purpose::Trial);
        let theta: ParamVector = (0..m.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let acc = m.accuracy(&theta, &m.full_batch()).unwrap();
        assert!(acc < 0.25 + 0.12, "acc {acc}");
    }

    #[test]
    fn wide_separation_is_linearly_separable() {
        // Direct logistic-regression fit (the oracle) reaches 0.99 train
        // accuracy when clusters are 10 sigma apart.
        let ds = Arc::new(synth_classification(2, 100, 2, 2, 10.0, 17).unwrap());
        let idx: Vec<usize> = (0..ds.len()).collect();
        let m = LossModel::logistic(ds, idx);
        let mut theta = zeros(m.dim());
        for _ in 0..300 {
            let g = m.full_grad(&theta).unwrap();
            for k in 0..theta.len() {
                theta[k] -= 0.5 * g[k];
            }
        }
        assert!(m.accuracy(&theta, &m.full_batch()).unwrap() >= 0.99);
    }

    #[test]
    fn projected_anchor_with_identity_matches_direct() {
        let c = synth_linreg(1, 8, 3, 1.0, 0.3, &ThetaGen::Gaussian { std: 1.0 }, 18).unwrap();
        let model = LossModel::linreg_from(&c[0]);
        let w = vec![0.2, -0.3, 0.5];
        let eye = Matrix::identity(3);
        let cfg = ProxConfig {
            lambda: 0.9,
            alpha: 0.5,
            eta: 0.3,
            max_passes: 60,
            eps_target: 1e-18,
            batch_size: usize::MAX,
        };
        let mut r1 = global_stream(1, Purpose::Batch);
        let mut r2 = global_stream(1, Purpose::Batch);
        let direct = prox_solve(&model, &Anchor::Direct(&w), &zeros(3), &cfg, &mut r1).unwrap();
        let projected = prox_solve(
            &model,
            &Anchor::Projected { p: &eye, target: &w },
            &zeros(3),
            &cfg,
            &mut r2,
        )
        .unwrap();
        assert_eq!(direct.theta, projected.theta);
        assert_eq!(direct.residual_sq, projected.residual_sq);
    }
}
