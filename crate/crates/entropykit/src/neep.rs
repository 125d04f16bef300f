//! Neural entropy-production estimation.
//!
//! A learned scorer h maps an ordered state pair to a scalar through a
//! per-state embedding and a small MLP; the antisymmetrized output
//! ΔS(a,b) = h(a,b) − h(b,a) is trained by gradient ascent on
//! J = E[ΔS − exp(−ΔS)], whose maximum is attained when ΔS equals the true
//! per-transition entropy production. The mean ΔS over a trajectory is the
//! estimated entropy-production rate in nats per step.
//!
//! Training is single-threaded and bit-reproducible for a given seed. The
//! batch gradient is computed by grouping the batch by ordered pair type
//! (there are at most n² of them), which is algebraically identical to the
//! per-sample sum but needs one forward/backward per pair type.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::LocationAlphabet;
use crate::markov::Trajectory;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient ascent with momentum.
    SgdMomentum,
    /// Per-parameter adaptive moments with bias correction. Default: the
    /// zero-initialized output layer gives tiny early gradients, which
    /// plain SGD at a safe learning rate escapes too slowly.
    AdaptiveMoments,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Embedding width per state.
    pub d: usize,
    /// Hidden layer widths of the MLP.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Momentum coefficient, used by `SgdMomentum` only.
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Fraction of transitions held out for best-epoch selection.
    pub holdout_fraction: f64,
    /// Minimum number of training transitions.
    pub min_transitions: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 8,
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 256,
            epochs: 200,
            seed: 0,
            optimizer: Optimizer::AdaptiveMoments,
            holdout_fraction: 0.1,
            min_transitions: 100,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidConfig("embedding width d must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum {} must be in [0, 1)",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(
                "batch size and epochs must be positive".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.holdout_fraction) {
            return Err(Error::InvalidConfig(format!(
                "holdout fraction {} must be in [0, 0.5]",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Embedding table plus MLP scorer. All parameters live in one flat vector
/// (embedding first, then each layer's weights and bias) so optimizers and
/// the gradient check can treat the model as a point in R^P.
#[derive(Clone, Debug, PartialEq)]
pub struct NeepModel {
    n: usize,
    d: usize,
    hidden: Vec<usize>,
    params: Vec<f64>,
}

struct ForwardCache {
    x: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl NeepModel {
    /// Layer input/output sizes: 2d -> hidden... -> 1.
    fn sizes(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.hidden.len() + 2);
        s.push(2 * self.d);
        s.extend_from_slice(&self.hidden);
        s.push(1);
        s
    }

    fn param_count(n: usize, d: usize, hidden: &[usize]) -> usize {
        let mut total = n * d;
        let mut prev = 2 * d;
        for &h in hidden.iter().chain(std::iter::once(&1)) {
            total += prev * h + h;
            prev = h;
        }
        total
    }

    /// Offset of layer k's weights; its bias follows the weight block.
    fn layer_offset(&self, k: usize) -> usize {
        let sizes = self.sizes();
        let mut off = self.n * self.d;
        for l in 0..k {
            off += sizes[l] * sizes[l + 1] + sizes[l + 1];
        }
        off
    }

    /// Fresh model with the documented initialization: embeddings uniform
    /// in [-0.1, 0.1], hidden weights uniform in ±1/sqrt(fan-in), biases
    /// zero, and the output layer all zero so that ΔS ≡ 0 and J = −1 at
    /// the start.
    pub fn init(n: usize, config: &TrainConfig, rng: &mut Rng) -> Self {
        let d = config.d;
        let mut params = vec![0.0; Self::param_count(n, d, &config.hidden)];
        let mut emb_rng = rng.derive("embedding");
        for p in params[..n * d].iter_mut() {
            *p = emb_rng.uniform(-0.1, 0.1);
        }
        let model = Self {
            n,
            d,
            hidden: config.hidden.clone(),
            params,
        };
        let sizes = model.sizes();
        let mut params = model.params;
        for k in 0..sizes.len() - 2 {
            let mut layer_rng = rng.derive(&format!("layer{k}"));
            let (ins, outs) = (sizes[k], sizes[k + 1]);
            let scale = 1.0 / (ins as f64).sqrt();
            let off = {
                let mut o = n * d;
                for l in 0..k {
                    o += sizes[l] * sizes[l + 1] + sizes[l + 1];
                }
                o
            };
            for p in params[off..off + ins * outs].iter_mut() {
                *p = layer_rng.uniform(-scale, scale);
            }
        }
        Self {
            n,
            d,
            hidden: model.hidden,
            params,
        }
    }

    /// Model with every parameter (including the output layer) drawn
    /// uniformly from ±0.5; used to exercise properties at arbitrary θ.
    pub fn randomized(n: usize, d: usize, hidden: Vec<usize>, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let params = (0..Self::param_count(n, d, &hidden))
            .map(|_| rng.uniform(-0.5, 0.5))
            .collect();
        Self { n, d, hidden, params }
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn embedding_width(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.n {
            return Err(Error::InvalidAlphabet(format!(
                "state {s} out of range for model over {} states",
                self.n
            )));
        }
        Ok(())
    }

    /// Scorer value h(a, b).
    pub fn h(&self, a: usize, b: usize) -> f64 {
        let d = self.d;
        let sizes = self.sizes();
        let mut act: Vec<f64> = Vec::with_capacity(2 * d);
        act.extend_from_slice(&self.params[a * d..(a + 1) * d]);
        act.extend_from_slice(&self.params[b * d..(b + 1) * d]);
        let mut off = self.n * d;
        for k in 0..sizes.len() - 1 {
            let (ins, outs) = (sizes[k], sizes[k + 1]);
            let weights = &self.params[off..off + ins * outs];
            let bias = &self.params[off + ins * outs..off + ins * outs + outs];
            off += ins * outs + outs;
            let last = k == sizes.len() - 2;
            let mut next = Vec::with_capacity(outs);
            for o in 0..outs {
                let mut z = bias[o];
                for (w, a) in weights[o * ins..(o + 1) * ins].iter().zip(&act) {
                    z += w * a;
                }
                next.push(if last { z } else { softplus(z) });
            }
            act = next;
        }
        act[0]
    }

    fn forward_cached(&self, a: usize, b: usize) -> (f64, ForwardCache) {
        let d = self.d;
        let sizes = self.sizes();
        let mut x: Vec<f64> = Vec::with_capacity(2 * d);
        x.extend_from_slice(&self.params[a * d..(a + 1) * d]);
        x.extend_from_slice(&self.params[b * d..(b + 1) * d]);
        let mut pre = Vec::with_capacity(sizes.len() - 1);
        let mut post = Vec::with_capacity(sizes.len() - 1);
        let mut act = x.clone();
        let mut off = self.n * d;
        for k in 0..sizes.len() - 1 {
            let (ins, outs) = (sizes[k], sizes[k + 1]);
            let weights = &self.params[off..off + ins * outs];
            let bias = &self.params[off + ins * outs..off + ins * outs + outs];
            off += ins * outs + outs;
            let last = k == sizes.len() - 2;
            let mut z = Vec::with_capacity(outs);
            for o in 0..outs {
                let mut acc = bias[o];
                for (w, a) in weights[o * ins..(o + 1) * ins].iter().zip(&act) {
                    acc += w * a;
                }
                z.push(acc);
            }
            let activated: Vec<f64> = if last {
                z.clone()
            } else {
                z.iter().map(|&v| softplus(v)).collect()
            };
            pre.push(z);
            post.push(activated.clone());
            act = activated;
        }
        (act[0], ForwardCache { x, pre, post })
    }

    /// Backpropagate `gout` (gradient of the objective with respect to
    /// h(a, b)) through a cached forward pass, accumulating into `grad`.
    fn backward(&self, a: usize, b: usize, cache: &ForwardCache, gout: f64, grad: &mut [f64]) {
        let d = self.d;
        let sizes = self.sizes();
        let layers = sizes.len() - 1;
        let mut g = vec![gout];
        for k in (0..layers).rev() {
            let (ins, outs) = (sizes[k], sizes[k + 1]);
            let off = self.layer_offset(k);
            let input: &[f64] = if k == 0 { &cache.x } else { &cache.post[k - 1] };
            let mut gin = vec![0.0; ins];
            for o in 0..outs {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                let wrow = &self.params[off + o * ins..off + (o + 1) * ins];
                let grow = &mut grad[off + o * ins..off + (o + 1) * ins];
                for i in 0..ins {
                    grow[i] += go * input[i];
                    gin[i] += go * wrow[i];
                }
                grad[off + ins * outs + o] += go;
            }
            if k == 0 {
                for i in 0..d {
                    grad[a * d + i] += gin[i];
                    grad[b * d + i] += gin[d + i];
                }
            } else {
                for (gi, &z) in gin.iter_mut().zip(&cache.pre[k - 1]) {
                    *gi *= sigmoid(z);
                }
                g = gin;
            }
        }
    }
}

/// ΔS(a, b) = h(a, b) − h(b, a). Exactly antisymmetric and exactly zero on
/// the diagonal, because both orientations reuse the same two evaluations.
pub fn delta_s(model: &NeepModel, s: usize, s_next: usize) -> Result<f64> {
    model.check_state(s)?;
    model.check_state(s_next)?;
    if s == s_next {
        return Ok(0.0);
    }
    Ok(model.h(s, s_next) - model.h(s_next, s))
}

fn pair_counts(pairs: &[(usize, usize)], n: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n * n];
    for &(a, b) in pairs {
        counts[a * n + b] += 1;
    }
    counts
}

/// J over grouped pair counts: Σ c_ab (ΔS_ab − exp(−ΔS_ab)) / Σ c_ab.
fn objective_grouped(model: &NeepModel, counts: &[u64], total: u64) -> f64 {
    let n = model.n;
    let mut j = 0.0;
    for a in 0..n {
        let c_diag = counts[a * n + a];
        if c_diag > 0 {
            // ΔS = 0 on the diagonal, so each such transition scores −1.
            j -= c_diag as f64;
        }
        for b in (a + 1)..n {
            let c_ab = counts[a * n + b];
            let c_ba = counts[b * n + a];
            if c_ab == 0 && c_ba == 0 {
                continue;
            }
            let ds = model.h(a, b) - model.h(b, a);
            if c_ab > 0 {
                j += c_ab as f64 * (ds - (-ds).exp());
            }
            if c_ba > 0 {
                j += c_ba as f64 * (-ds - ds.exp());
            }
        }
    }
    j / total as f64
}

/// Mean of ΔS − exp(−ΔS) over a batch of (s_t, s_{t+1}) pairs.
pub fn objective(model: &NeepModel, batch: &[(usize, usize)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    for &(a, b) in batch {
        model.check_state(a)?;
        model.check_state(b)?;
    }
    Ok(objective_grouped(model, &pair_counts(batch, model.n), batch.len() as u64))
}

/// Batch objective and its gradient with respect to every parameter.
/// Diagonal pairs contribute a constant −1 to J and exactly zero gradient
/// (ΔS(a, a) ≡ 0 for every θ), so only off-diagonal pair types are
/// backpropagated.
fn objective_and_grad(model: &NeepModel, counts: &[u64], total: u64, grad: &mut [f64]) -> f64 {
    let n = model.n;
    grad.fill(0.0);
    let mut j = 0.0;
    let inv_total = 1.0 / total as f64;
    for a in 0..n {
        let c_diag = counts[a * n + a];
        if c_diag > 0 {
            j -= c_diag as f64;
        }
        for b in (a + 1)..n {
            let c_ab = counts[a * n + b];
            let c_ba = counts[b * n + a];
            if c_ab == 0 && c_ba == 0 {
                continue;
            }
            let (h_ab, cache_ab) = model.forward_cached(a, b);
            let (h_ba, cache_ba) = model.forward_cached(b, a);
            let ds = h_ab - h_ba;
            // d/dΔS of (ΔS − exp(−ΔS)) is 1 + exp(−ΔS); the reverse
            // orientation sees −ΔS and the opposite sign through h.
            let mut gout = 0.0;
            if c_ab > 0 {
                j += c_ab as f64 * (ds - (-ds).exp());
                gout += c_ab as f64 * inv_total * (1.0 + (-ds).exp());
            }
            if c_ba > 0 {
                j += c_ba as f64 * (-ds - ds.exp());
                gout -= c_ba as f64 * inv_total * (1.0 + ds.exp());
            }
            if gout != 0.0 {
                model.backward(a, b, &cache_ab, gout, grad);
                model.backward(b, a, &cache_ba, -gout, grad);
            }
        }
    }
    j * inv_total
}

/// Estimated entropy-production rate: mean ΔS over the trajectory's
/// transitions. Computed through per-pair net counts so that reversing the
/// trajectory negates the result exactly.
pub fn ep_rate(model: &NeepModel, trajectory: &Trajectory) -> Result<f64> {
    ep_rate_over(model, std::slice::from_ref(trajectory))
}

/// `ep_rate` over the pooled transitions of several trajectories.
/// Transitions only form within a trajectory, never across two.
pub fn ep_rate_over(model: &NeepModel, trajectories: &[Trajectory]) -> Result<f64> {
    let n = model.n;
    let mut counts = vec![0i64; n * n];
    let mut n_transitions = 0u64;
    for trajectory in trajectories {
        model.check_state(trajectory.max_state())?;
        for (a, b) in trajectory.transitions() {
            counts[a * n + b] += 1;
        }
        n_transitions += trajectory.n_transitions() as u64;
    }
    if n_transitions == 0 {
        return Err(Error::InsufficientData(
            "entropy production needs at least one transition".into(),
        ));
    }
    let mut total = 0.0;
    for a in 0..n {
        for b in (a + 1)..n {
            let net = counts[a * n + b] - counts[b * n + a];
            if net != 0 {
                total += net as f64 * (model.h(a, b) - model.h(b, a));
            }
        }
    }
    Ok(total / n_transitions as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Full-pass J over the training transitions after this epoch.
    pub train_j: f64,
    /// J over the held-out transitions (the training set when no holdout).
    pub selection_j: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub n_train: usize,
    pub n_holdout: usize,
}

enum OptState {
    Momentum { velocity: Vec<f64> },
    Adaptive { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

/// Incremental trainer: owns the model, the train/holdout split, and the
/// optimizer state. `run_epoch` advances one epoch; the best-selection
/// snapshot is tracked automatically.
pub struct Trainer {
    model: NeepModel,
    config: TrainConfig,
    train_pairs: Vec<(usize, usize)>,
    holdout_counts: Vec<u64>,
    n_holdout: usize,
    shuffle_rng: Rng,
    opt: OptState,
    grad: Vec<f64>,
    epoch: usize,
    log: Vec<EpochStats>,
    best_params: Vec<f64>,
    best_epoch: usize,
    best_j: f64,
}

impl Trainer {
    pub fn new(trajectories: &[Trajectory], n_states: usize, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if n_states < 2 {
            return Err(Error::InvalidConfig("need at least 2 states".into()));
        }
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for traj in trajectories {
            if traj.max_state() >= n_states {
                return Err(Error::InvalidAlphabet(format!(
                    "state {} out of range for alphabet of {n_states}",
                    traj.max_state()
                )));
            }
            pairs.extend(traj.transitions());
        }
        if pairs.len() < config.min_transitions {
            return Err(Error::InsufficientData(format!(
                "{} transitions, need at least {}",
                pairs.len(),
                config.min_transitions
            )));
        }

        let mut root = Rng::new(config.seed);
        let model = NeepModel::init(n_states, config, &mut root);

        let mut split_rng = root.derive("holdout");
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        split_rng.shuffle(&mut order);
        let n_holdout = (pairs.len() as f64 * config.holdout_fraction) as usize;
        let holdout_pairs: Vec<(usize, usize)> =
            order[..n_holdout].iter().map(|&i| pairs[i]).collect();
        let train_pairs: Vec<(usize, usize)> =
            order[n_holdout..].iter().map(|&i| pairs[i]).collect();

        let p = model.params.len();
        let opt = match config.optimizer {
            Optimizer::SgdMomentum => OptState::Momentum {
                velocity: vec![0.0; p],
            },
            Optimizer::AdaptiveMoments => OptState::Adaptive {
                m: vec![0.0; p],
                v: vec![0.0; p],
                t: 0,
            },
        };
        let holdout_counts = pair_counts(&holdout_pairs, n_states);
        Ok(Self {
            shuffle_rng: root.derive("shuffle"),
            best_params: model.params.clone(),
            grad: vec![0.0; p],
            model,
            config: config.clone(),
            train_pairs,
            holdout_counts,
            n_holdout,
            opt,
            epoch: 0,
            log: Vec::new(),
            best_epoch: 0,
            best_j: f64::NEG_INFINITY,
        })
    }

    pub fn model(&self) -> &NeepModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn log(&self) -> &[EpochStats] {
        &self.log
    }

    fn step(&mut self) {
        let lr = self.config.learning_rate;
        match &mut self.opt {
            OptState::Momentum { velocity } => {
                let mom = self.config.momentum;
                for ((p, v), g) in self
                    .model
                    .params
                    .iter_mut()
                    .zip(velocity.iter_mut())
                    .zip(&self.grad)
                {
                    *v = mom * *v + g;
                    *p += lr * *v;
                }
            }
            OptState::Adaptive { m, v, t } => {
                *t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(*t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(*t as i32);
                for ((p, g), (mi, vi)) in self
                    .model
                    .params
                    .iter_mut()
                    .zip(&self.grad)
                    .zip(m.iter_mut().zip(v.iter_mut()))
                {
                    *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                    *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = *mi / bc1;
                    let vhat = *vi / bc2;
                    *p += lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
    }

    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        self.epoch += 1;
        let n = self.model.n;
        let mut order: Vec<usize> = (0..self.train_pairs.len()).collect();
        self.shuffle_rng.shuffle(&mut order);
        let mut counts = vec![0u64; n * n];
        for chunk in order.chunks(self.config.batch_size) {
            counts.fill(0);
            for &i in chunk {
                let (a, b) = self.train_pairs[i];
                counts[a * n + b] += 1;
            }
            let j = objective_and_grad(&self.model, &counts, chunk.len() as u64, &mut self.grad);
            if !j.is_finite() {
                return Err(Error::Diverged {
                    epoch: self.epoch,
                    what: format!("batch objective is {j}"),
                });
            }
            if self.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch: self.epoch,
                    what: "non-finite gradient".into(),
                });
            }
            self.step();
        }

        let train_counts = pair_counts(&self.train_pairs, n);
        let train_j =
            objective_grouped(&self.model, &train_counts, self.train_pairs.len() as u64);
        let selection_j = if self.n_holdout > 0 {
            objective_grouped(&self.model, &self.holdout_counts, self.n_holdout as u64)
        } else {
            train_j
        };
        if !train_j.is_finite() || !selection_j.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch,
                what: format!("objective train={train_j} selection={selection_j}"),
            });
        }
        if selection_j > self.best_j {
            self.best_j = selection_j;
            self.best_epoch = self.epoch;
            self.best_params.copy_from_slice(&self.model.params);
        }
        let stats = EpochStats {
            epoch: self.epoch,
            train_j,
            selection_j,
        };
        self.log.push(stats.clone());
        Ok(stats)
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    /// Model carrying the parameters from the best-selection epoch.
    pub fn best_model(&self) -> NeepModel {
        let mut model = self.model.clone();
        model.params.copy_from_slice(&self.best_params);
        model
    }

    pub fn finish(self) -> (NeepModel, TrainLog) {
        let mut model = self.model;
        model.params = self.best_params;
        (
            model,
            TrainLog {
                epochs: self.log,
                best_epoch: self.best_epoch,
                n_train: self.train_pairs.len(),
                n_holdout: self.n_holdout,
            },
        )
    }
}

/// Train for `config.epochs` epochs and return the parameters from the
/// epoch with the highest held-out J.
pub fn train(
    trajectories: &[Trajectory],
    n_states: usize,
    config: &TrainConfig,
) -> Result<(NeepModel, TrainLog)> {
    let mut trainer = Trainer::new(trajectories, n_states, config)?;
    for _ in 0..config.epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}

/// Compare the analytic batch gradient against central finite differences
/// on up to 128 randomly chosen parameters. Returns the maximum relative
/// error with denominator max(|analytic|, |numeric|, 1e-8); directions
/// where both gradients are below 1e-12 count as exact.
pub fn gradient_check(
    model: &NeepModel,
    batch: &[(usize, usize)],
    epsilon: f64,
    seed: u64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!(
            "epsilon {epsilon} must be in [1e-7, 1e-3]"
        )));
    }
    for &(a, b) in batch {
        model.check_state(a)?;
        model.check_state(b)?;
    }
    let n = model.n;
    let counts = pair_counts(batch, n);
    let total = batch.len() as u64;
    let mut grad = vec![0.0; model.params.len()];
    objective_and_grad(model, &counts, total, &mut grad);

    let mut indices: Vec<usize> = (0..model.params.len()).collect();
    Rng::new(seed).shuffle(&mut indices);
    indices.truncate(128.min(model.params.len()));

    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for &i in &indices {
        let original = probe.params[i];
        probe.params[i] = original + epsilon;
        let plus = objective_grouped(&probe, &counts, total);
        probe.params[i] = original - epsilon;
        let minus = objective_grouped(&probe, &counts, total);
        probe.params[i] = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let analytic = grad[i];
        if analytic.abs() < 1e-12 && numeric.abs() < 1e-12 {
            continue;
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    alphabet: LocationAlphabet,
    d: usize,
    hidden: Vec<usize>,
    seed: u64,
    config: TrainConfig,
    embedding: Vec<Vec<f64>>,
    layers: Vec<LayerParams>,
}

#[derive(Serialize, Deserialize)]
struct LayerParams {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

/// Serialize a trained model (with its alphabet and the config that
/// produced it) to JSON. Loading restores every parameter value exactly.
pub fn save_checkpoint(model: &NeepModel, alphabet: &LocationAlphabet, config: &TrainConfig) -> String {
    let d = model.d;
    let embedding: Vec<Vec<f64>> = (0..model.n)
        .map(|s| model.params[s * d..(s + 1) * d].to_vec())
        .collect();
    let sizes = model.sizes();
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for k in 0..sizes.len() - 1 {
        let (ins, outs) = (sizes[k], sizes[k + 1]);
        let off = model.layer_offset(k);
        let weights = (0..outs)
            .map(|o| model.params[off + o * ins..off + (o + 1) * ins].to_vec())
            .collect();
        let bias = model.params[off + ins * outs..off + ins * outs + outs].to_vec();
        layers.push(LayerParams { weights, bias });
    }
    let file = CheckpointFile {
        version: CHECKPOINT_FORMAT_VERSION,
        alphabet: alphabet.clone(),
        d,
        hidden: model.hidden.clone(),
        seed: config.seed,
        config: config.clone(),
        embedding,
        layers,
    };
    serde_json::to_string_pretty(&file).expect("checkpoint serializes")
}

pub fn load_checkpoint(text: &str) -> Result<(NeepModel, LocationAlphabet, TrainConfig)> {
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("bad checkpoint: {e}")))?;
    if file.version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported checkpoint version {}",
            file.version
        )));
    }
    let n = file.alphabet.len();
    let d = file.d;
    if file.embedding.len() != n || file.embedding.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidConfig("embedding shape mismatch".into()));
    }
    let mut params = Vec::with_capacity(NeepModel::param_count(n, d, &file.hidden));
    for row in &file.embedding {
        params.extend_from_slice(row);
    }
    let mut sizes = vec![2 * d];
    sizes.extend_from_slice(&file.hidden);
    sizes.push(1);
    if file.layers.len() != sizes.len() - 1 {
        return Err(Error::InvalidConfig("layer count mismatch".into()));
    }
    for (k, layer) in file.layers.iter().enumerate() {
        let (ins, outs) = (sizes[k], sizes[k + 1]);
        if layer.weights.len() != outs
            || layer.weights.iter().any(|r| r.len() != ins)
            || layer.bias.len() != outs
        {
            return Err(Error::InvalidConfig(format!("layer {k} shape mismatch")));
        }
        for row in &layer.weights {
            params.extend_from_slice(row);
        }
        params.extend_from_slice(&layer.bias);
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("checkpoint contains non-finite parameters".into()));
    }
    Ok((
        NeepModel {
            n,
            d,
            hidden: file.hidden,
            params,
        },
        file.alphabet,
        file.config,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::ProbabilityDistribution;
    use crate::markov::{analytic_ep_rate, simulate_trajectory, TransitionMatrix};

    fn ring(bias: f64) -> TransitionMatrix {
        let names: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
        let mut rows = vec![vec![0.0; 3]; 3];
        for i in 0..3 {
            rows[i][(i + 1) % 3] = bias;
            rows[i][(i + 2) % 3] = 1.0 - bias;
        }
        TransitionMatrix::from_probs(LocationAlphabet::new(names).unwrap(), rows).unwrap()
    }

    fn small_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            d: 4,
            hidden: vec![16],
            epochs,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn delta_s_is_zero_on_diagonal_and_for_fresh_models() {
        let model = NeepModel::randomized(4, 6, vec![8, 8], 3);
        for s in 0..4 {
            assert_eq!(delta_s(&model, s, s).unwrap(), 0.0);
        }
        let mut rng = Rng::new(1);
        let fresh = NeepModel::init(4, &TrainConfig::default(), &mut rng);
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(delta_s(&fresh, a, b).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn antisymmetry_is_exact_for_random_parameters() {
        for seed in 0..50 {
            let model = NeepModel::randomized(5, 8, vec![16, 16], seed);
            for a in 0..5 {
                for b in 0..5 {
                    let fwd = delta_s(&model, a, b).unwrap();
                    let rev = delta_s(&model, b, a).unwrap();
                    assert_eq!(fwd + rev, 0.0, "seed {seed} pair ({a},{b})");
                }
            }
        }
    }

    #[test]
    fn fresh_model_objective_is_exactly_minus_one() {
        let mut rng = Rng::new(123);
        let model = NeepModel::init(3, &TrainConfig::default(), &mut rng);
        let batch = vec![(0, 1), (1, 2), (2, 0), (0, 0), (2, 1)];
        assert_eq!(objective(&model, &batch).unwrap(), -1.0);
    }

    #[test]
    fn objective_matches_per_pair_closed_form() {
        let model = NeepModel::randomized(3, 5, vec![12], 9);
        let ds = delta_s(&model, 0, 2).unwrap();
        let j = objective(&model, &[(0, 2)]).unwrap();
        assert!((j - (ds - (-ds).exp())).abs() < 1e-15);
    }

    #[test]
    fn grouped_objective_equals_naive_mean() {
        let model = NeepModel::randomized(4, 4, vec![8], 11);
        let mut rng = Rng::new(2);
        let batch: Vec<(usize, usize)> =
            (0..300).map(|_| (rng.below(4), rng.below(4))).collect();
        let grouped = objective(&model, &batch).unwrap();
        let mut naive = 0.0;
        for &(a, b) in &batch {
            let ds = delta_s(&model, a, b).unwrap();
            naive += ds - (-ds).exp();
        }
        naive /= batch.len() as f64;
        assert!((grouped - naive).abs() < 1e-12, "{grouped} vs {naive}");
    }

    #[test]
    fn ep_rate_reversal_is_exact() {
        let model = NeepModel::randomized(5, 8, vec![16, 16], 17);
        let mut rng = Rng::new(4);
        let states: Vec<usize> = (0..400).map(|_| rng.below(5)).collect();
        let traj = Trajectory::new(states).unwrap();
        let fwd = ep_rate(&model, &traj).unwrap();
        let rev = ep_rate(&model, &traj.reversed()).unwrap();
        assert_eq!(fwd, -rev);
    }

    #[test]
    fn ep_rate_trivial_cases() {
        let model = NeepModel::randomized(3, 4, vec![8], 21);
        let constant = Trajectory::new(vec![1; 50]).unwrap();
        assert_eq!(ep_rate(&model, &constant).unwrap(), 0.0);
        let single = Trajectory::new(vec![2]).unwrap();
        assert!(matches!(
            ep_rate(&model, &single),
            Err(Error::InsufficientData(_))
        ));
        let mut rng = Rng::new(1);
        let fresh = NeepModel::init(3, &TrainConfig::default(), &mut rng);
        let traj = Trajectory::new(vec![0, 1, 2, 0, 1]).unwrap();
        assert_eq!(ep_rate(&fresh, &traj).unwrap(), 0.0);
    }

    #[test]
    fn gradient_check_passes_on_default_architecture() {
        let model = NeepModel::randomized(5, 8, vec![64, 64], 33);
        let mut rng = Rng::new(6);
        let batch: Vec<(usize, usize)> =
            (0..64).map(|_| (rng.below(5), rng.below(5))).collect();
        let err = gradient_check(&model, &batch, 1e-5, 0).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_catches_an_injected_fault() {
        // Flip the sign of one analytic gradient entry by hand and rerun
        // the same comparison the checker performs.
        let model = NeepModel::randomized(3, 4, vec![8], 7);
        let batch = [(0usize, 1usize), (1, 2), (2, 0), (1, 0)];
        let counts = pair_counts(&batch, 3);
        let mut grad = vec![0.0; model.params.len()];
        objective_and_grad(&model, &counts, batch.len() as u64, &mut grad);
        let target = grad
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap();
        let analytic = -grad[target];
        let eps = 1e-5;
        let mut probe = model.clone();
        probe.params[target] += eps;
        let plus = objective_grouped(&probe, &counts, batch.len() as u64);
        probe.params[target] -= 2.0 * eps;
        let minus = objective_grouped(&probe, &counts, batch.len() as u64);
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        assert!(rel > 0.1, "fault went undetected: {rel}");
    }

    #[test]
    fn training_is_deterministic() {
        let t = ring(0.7);
        let start = ProbabilityDistribution::uniform(3);
        let traj = simulate_trajectory(&t, &start, 2_000, 8).unwrap();
        let config = small_config(3);
        let (m1, log1) = train(std::slice::from_ref(&traj), 3, &config).unwrap();
        let (m2, log2) = train(&[traj], 3, &config).unwrap();
        assert_eq!(m1.params(), m2.params());
        assert_eq!(log1.best_epoch, log2.best_epoch);
    }

    #[test]
    fn objective_is_nondecreasing_over_first_epochs() {
        let t = ring(0.7);
        let start = ProbabilityDistribution::uniform(3);
        let traj = simulate_trajectory(&t, &start, 10_001, 15).unwrap();
        let mut trainer = Trainer::new(&[traj], 3, &TrainConfig::default()).unwrap();
        // Batch reshuffling wiggles J at the 1e-6 scale while ΔS is still
        // near zero, so non-decrease is asserted with that much slack.
        let mut last = f64::NEG_INFINITY;
        for _ in 0..5 {
            let stats = trainer.run_epoch().unwrap();
            assert!(stats.train_j.is_finite());
            assert!(
                stats.train_j >= last - 1e-5,
                "J fell from {last} to {}",
                stats.train_j
            );
            last = stats.train_j;
        }
    }

    #[test]
    fn holdout_split_sizes_follow_the_fraction() {
        let t = ring(0.7);
        let start = ProbabilityDistribution::uniform(3);
        let traj = simulate_trajectory(&t, &start, 1_001, 2).unwrap();
        let trainer = Trainer::new(&[traj], 3, &small_config(1)).unwrap();
        assert_eq!(trainer.n_holdout, 100);
        assert_eq!(trainer.train_pairs.len(), 900);
    }

    #[test]
    fn too_few_transitions_is_an_error() {
        let traj = Trajectory::new(vec![0, 1, 0, 1]).unwrap();
        match Trainer::new(&[traj], 2, &TrainConfig::default()) {
            Err(Error::InsufficientData(_)) => {}
            Err(other) => panic!("wrong error: {other}"),
            Ok(_) => panic!("expected an error"),
        }
    }

    #[test]
    fn absurd_learning_rate_diverges_with_an_epoch_number() {
        let t = ring(0.7);
        let start = ProbabilityDistribution::uniform(3);
        let traj = simulate_trajectory(&t, &start, 2_000, 3).unwrap();
        let config = TrainConfig {
            learning_rate: 1e9,
            optimizer: Optimizer::SgdMomentum,
            epochs: 50,
            ..small_config(50)
        };
        match train(&[traj], 3, &config) {
            Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_value_exact() {
        let t = ring(0.7);
        let start = ProbabilityDistribution::uniform(3);
        let traj = simulate_trajectory(&t, &start, 2_000, 8).unwrap();
        let config = small_config(2);
        let (model, _) = train(&[traj], 3, &config).unwrap();
        let alphabet = LocationAlphabet::new(["s0", "s1", "s2"]).unwrap();
        let text = save_checkpoint(&model, &alphabet, &config);
        let (loaded, alpha_back, config_back) = load_checkpoint(&text).unwrap();
        assert_eq!(loaded.params(), model.params());
        assert_eq!(loaded.hidden(), model.hidden());
        assert_eq!(alpha_back, alphabet);
        assert_eq!(config_back, config);
    }

    #[test]
    fn checkpoint_rejects_bad_shapes_and_versions() {
        let alphabet = LocationAlphabet::new(["a", "b"]).unwrap();
        let config = TrainConfig::default();
        let mut rng = Rng::new(0);
        let model = NeepModel::init(2, &config, &mut rng);
        let good = save_checkpoint(&model, &alphabet, &config);
        let bad_version = good.replacen("\"version\": 1", "\"version\": 9", 1);
        assert!(load_checkpoint(&bad_version).is_err());
        let mut value: serde_json::Value = serde_json::from_str(&good).unwrap();
        value["embedding"] = serde_json::json!([[0.0]]);
        assert!(load_checkpoint(&value.to_string()).is_err());
    }

    // Slow oracle convergence paths are exercised by the acceptance suite;
    // here a shortened run checks the trained estimate moves toward the
    // analytic value.
    #[test]
    fn short_training_moves_toward_the_ring_oracle() {
        let t = ring(0.7);
        let start = ProbabilityDistribution::uniform(3);
        let train_traj = simulate_trajectory(&t, &start, 20_001, 42).unwrap();
        let eval_traj = simulate_trajectory(&t, &start, 20_001, 43).unwrap();
        let config = TrainConfig {
            epochs: 60,
            seed: 42,
            ..TrainConfig::default()
        };
        let (model, log) = train(&[train_traj], 3, &config).unwrap();
        assert!(log.best_epoch >= 1);
        let est = ep_rate(&model, &eval_traj).unwrap();
        let sigma = analytic_ep_rate(&t).unwrap();
        assert!(
            (est - sigma).abs() / sigma < 0.25,
            "estimate {est} vs analytic {sigma}"
        );
    }
}
