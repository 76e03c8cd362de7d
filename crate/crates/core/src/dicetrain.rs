//! V-DICE value learning with true, semi and orthogonal gradient rules.
//!
//! One training step follows the usual loop: sample a batch, build the
//! forward gradient (target network on `s'`) and the backward gradient
//! (target network on `s`), combine them according to [`GradMode`], take an
//! Adam step, refresh the target by EMA and finally run one weighted
//! behavior-cloning step on the policy.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, DiagnosticsRecord};
use crate::divergence::{ConjugateMode, DivergenceSpec};
use crate::error::{Error, Result};
use crate::gridworld::{self, Action, Cell, Dataset, GridSpec, Transition};
use crate::netcore::{
    ema_update, forward_batch, Activation, AdamState, NetworkArchitecture, ParamVector,
};
use crate::seeds;

/// Metrics are logged once every this many steps.
pub const LOG_EVERY: usize = 100;

/// Below this squared norm the forward gradient is treated as zero.
pub const PROJECTION_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    TrueGrad,
    SemiGrad,
    Orthogonal,
}

impl GradMode {
    pub const ALL: [GradMode; 3] = [GradMode::TrueGrad, GradMode::SemiGrad, GradMode::Orthogonal];

    pub fn name(self) -> &'static str {
        match self {
            GradMode::TrueGrad => "true_grad",
            GradMode::SemiGrad => "semi_grad",
            GradMode::Orthogonal => "orthogonal",
        }
    }
}

impl fmt::Display for GradMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "true_grad" | "true" => Ok(GradMode::TrueGrad),
            "semi_grad" | "semi" => Ok(GradMode::SemiGrad),
            "orthogonal" | "ortho" => Ok(GradMode::Orthogonal),
            other => Err(format!(
                "unknown grad_mode `{other}` (expected true_grad, semi_grad or orthogonal)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub eta: f64,
    pub lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub grad_mode: GradMode,
    pub conjugate_mode: ConjugateMode,
    pub bc_trick: bool,
    pub seed: u64,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.6,
            eta: 1.0,
            lr: 1e-4,
            tau: 5e-3,
            gamma: 0.99,
            batch_size: 256,
            steps: 10_000,
            grad_mode: GradMode::Orthogonal,
            conjugate_mode: ConjugateMode::Unconstrained,
            bc_trick: true,
            seed: 0,
            hidden_widths: vec![128, 128],
            activation: Activation::Relu,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::contract(format!("{name} out of range (0,1): {v}")))
            }
        };
        open_unit("lambda", self.lambda)?;
        open_unit("gamma", self.gamma)?;
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::contract(format!("eta must be >= 0, got {}", self.eta)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::contract(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::contract(format!("tau out of range [0,1]: {}", self.tau)));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be >= 1"));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::contract("hidden widths must be non-empty and >= 1"));
        }
        Ok(())
    }

    pub fn divergence(&self) -> DivergenceSpec {
        DivergenceSpec::pearson(self.conjugate_mode)
    }

    pub fn value_arch(&self) -> NetworkArchitecture {
        NetworkArchitecture {
            input_dim: 2,
            hidden_widths: self.hidden_widths.clone(),
            activation: self.activation,
            output_dim: 1,
        }
    }

    pub fn policy_arch(&self) -> NetworkArchitecture {
        NetworkArchitecture {
            output_dim: Action::ALL.len(),
            ..self.value_arch()
        }
    }
}

/// Encoded transitions ready for batched network evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub s: Array2<f64>,
    pub s_next: Array2<f64>,
    pub r: Vec<f64>,
    pub done: Vec<bool>,
    pub actions: Vec<Action>,
}

impl Batch {
    pub fn from_transitions<'t>(
        spec: &GridSpec,
        transitions: impl IntoIterator<Item = &'t Transition>,
    ) -> Batch {
        let mut s = Vec::new();
        let mut s_next = Vec::new();
        let (mut r, mut done, mut actions) = (Vec::new(), Vec::new(), Vec::new());
        for t in transitions {
            s.extend(gridworld::encode(spec, t.s));
            s_next.extend(gridworld::encode(spec, t.s_next));
            r.push(t.r);
            done.push(t.done);
            actions.push(t.a);
        }
        let n = r.len();
        Batch {
            s: Array2::from_shape_vec((n, 2), s).expect("two coordinates per state"),
            s_next: Array2::from_shape_vec((n, 2), s_next).expect("two coordinates per state"),
            r,
            done,
            actions,
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    fn check_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::contract("batch must be non-empty"))
        } else {
            Ok(())
        }
    }

    fn not_done(&self, i: usize) -> f64 {
        if self.done[i] {
            0.0
        } else {
            1.0
        }
    }
}

/// An online/target value-network pair sharing one architecture.
#[derive(Clone, Copy)]
pub struct ValuePair<'a> {
    pub arch: &'a NetworkArchitecture,
    pub online: &'a ParamVector,
    pub target: &'a ParamVector,
}

/// Batch-mean gradients of one value step.
struct StepGradients {
    /// mean grad V(s)
    linear: ParamVector,
    /// mean grad f*(r + g V_target(s') - V(s))
    forward: ParamVector,
    /// mean grad f*(r + g V(s') - V_target(s)), when requested
    backward: Option<ParamVector>,
}

impl<'a> ValuePair<'a> {
    fn values(&self, params: &ParamVector, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(forward_batch(params, self.arch, x)?.values())
    }

    /// `r + gamma (1 - done) V_target(s') - V_online(s)`
    pub fn residual_forward(&self, batch: &Batch, gamma: f64) -> Result<Vec<f64>> {
        batch.check_non_empty()?;
        let v_s = self.values(self.online, batch.s.view())?;
        let v_next = self.values(self.target, batch.s_next.view())?;
        Ok(residuals(batch, gamma, &v_s, &v_next))
    }

    /// `r + gamma (1 - done) V_online(s') - V_target(s)`
    pub fn residual_backward(&self, batch: &Batch, gamma: f64) -> Result<Vec<f64>> {
        batch.check_non_empty()?;
        let v_s = self.values(self.target, batch.s.view())?;
        let v_next = self.values(self.online, batch.s_next.view())?;
        Ok(residuals(batch, gamma, &v_s, &v_next))
    }

    /// Residual with the online network on both ends.
    pub fn residual_online(&self, batch: &Batch, gamma: f64) -> Result<Vec<f64>> {
        batch.check_non_empty()?;
        let v_s = self.values(self.online, batch.s.view())?;
        let v_next = self.values(self.online, batch.s_next.view())?;
        Ok(residuals(batch, gamma, &v_s, &v_next))
    }

    /// Forward-loss value: mean `f*(residual_forward)`.
    pub fn forward_loss(&self, batch: &Batch, div: &DivergenceSpec, gamma: f64) -> Result<f64> {
        let res = self.residual_forward(batch, gamma)?;
        Ok(mean(res.iter().map(|&d| div.f_conj(d))))
    }

    /// Backward-loss value: mean `f*(residual_backward)`.
    pub fn backward_loss(&self, batch: &Batch, div: &DivergenceSpec, gamma: f64) -> Result<f64> {
        let res = self.residual_backward(batch, gamma)?;
        Ok(mean(res.iter().map(|&d| div.f_conj(d))))
    }

    /// Full lambda-form objective with the online network everywhere.
    pub fn total_loss(
        &self,
        batch: &Batch,
        div: &DivergenceSpec,
        gamma: f64,
        lambda: f64,
    ) -> Result<f64> {
        let v_s = self.values(self.online, batch.s.view())?;
        let v_next = self.values(self.online, batch.s_next.view())?;
        let res = residuals(batch, gamma, &v_s, &v_next);
        Ok(mean(
            v_s.iter()
                .zip(&res)
                .map(|(&v, &d)| (1.0 - lambda) * v + lambda * div.f_conj(d)),
        ))
    }

    pub fn linear_gradient(&self, batch: &Batch) -> Result<ParamVector> {
        batch.check_non_empty()?;
        let n = batch.len() as f64;
        let pass = forward_batch(self.online, self.arch, batch.s.view())?;
        pass.backward_scalar(&vec![1.0 / n; batch.len()])
    }

    /// Batch mean of `-(f*)'(delta_fwd) grad V_online(s)`.
    pub fn forward_gradient(
        &self,
        batch: &Batch,
        div: &DivergenceSpec,
        gamma: f64,
    ) -> Result<ParamVector> {
        let res = self.residual_forward(batch, gamma)?;
        let n = batch.len() as f64;
        let seeds: Vec<f64> = res.iter().map(|&d| -div.f_conj_prime(d) / n).collect();
        forward_batch(self.online, self.arch, batch.s.view())?.backward_scalar(&seeds)
    }

    /// Batch mean of `gamma (1 - done) (f*)'(delta_back) grad V_online(s')`.
    pub fn backward_gradient(
        &self,
        batch: &Batch,
        div: &DivergenceSpec,
        gamma: f64,
    ) -> Result<ParamVector> {
        let res = self.residual_backward(batch, gamma)?;
        let n = batch.len() as f64;
        let seeds: Vec<f64> = res
            .iter()
            .enumerate()
            .map(|(i, &d)| gamma * batch.not_done(i) * div.f_conj_prime(d) / n)
            .collect();
        forward_batch(self.online, self.arch, batch.s_next.view())?.backward_scalar(&seeds)
    }

    /// All gradients of one step from four shared forward passes.
    fn step_gradients(
        &self,
        batch: &Batch,
        div: &DivergenceSpec,
        gamma: f64,
        need_backward: bool,
    ) -> Result<StepGradients> {
        batch.check_non_empty()?;
        let n = batch.len() as f64;
        let online_s = forward_batch(self.online, self.arch, batch.s.view())?;
        let v_s = online_s.values();
        let v_target_next = self.values(self.target, batch.s_next.view())?;
        let res_fwd = residuals(batch, gamma, &v_s, &v_target_next);

        let linear = online_s.backward_scalar(&vec![1.0 / n; batch.len()])?;
        let fwd_seeds: Vec<f64> = res_fwd.iter().map(|&d| -div.f_conj_prime(d) / n).collect();
        let forward = online_s.backward_scalar(&fwd_seeds)?;

        let backward = if need_backward {
            let online_next = forward_batch(self.online, self.arch, batch.s_next.view())?;
            let v_target_s = self.values(self.target, batch.s.view())?;
            let res_back = residuals(batch, gamma, &v_target_s, &online_next.values());
            let seeds: Vec<f64> = res_back
                .iter()
                .enumerate()
                .map(|(i, &d)| gamma * batch.not_done(i) * div.f_conj_prime(d) / n)
                .collect();
            Some(online_next.backward_scalar(&seeds)?)
        } else {
            None
        };
        Ok(StepGradients {
            linear,
            forward,
            backward,
        })
    }
}

fn residuals(batch: &Batch, gamma: f64, v_s: &[f64], v_next: &[f64]) -> Vec<f64> {
    (0..batch.len())
        .map(|i| batch.r[i] + gamma * batch.not_done(i) * v_next[i] - v_s[i])
        .collect()
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Component of `g_back` orthogonal to `g_fwd`.
///
/// A (numerically) zero `g_fwd` spans no direction, so `g_back` comes back
/// unchanged.
pub fn project(g_back: &ParamVector, g_fwd: &ParamVector) -> Result<ParamVector> {
    if g_back.len() != g_fwd.len() {
        return Err(Error::DimensionMismatch {
            what: "projection operands",
            expected: g_fwd.len(),
            got: g_back.len(),
        });
    }
    let denom = g_fwd.norm_sq();
    if denom < PROJECTION_EPS {
        return Ok(g_back.clone());
    }
    let coef = g_back.dot(g_fwd) / denom;
    let mut out = g_back.clone();
    out.axpy(-coef, g_fwd);
    Ok(out)
}

/// Mutable learner state: value/target/policy parameters, optimisers and the
/// batch-sampling RNG.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub value_arch: NetworkArchitecture,
    pub policy_arch: NetworkArchitecture,
    pub value_params: ParamVector,
    pub value_target: ParamVector,
    pub policy_params: ParamVector,
    pub value_adam: AdamState,
    pub policy_adam: AdamState,
    pub step: usize,
    rng: ChaCha8Rng,
}

impl TrainerState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let value_arch = config.value_arch();
        let policy_arch = config.policy_arch();
        let value_params = value_arch.init_params(&mut seeds::rng(config.seed, seeds::VALUE_INIT));
        let policy_params =
            policy_arch.init_params(&mut seeds::rng(config.seed, seeds::POLICY_INIT));
        Ok(TrainerState {
            value_adam: AdamState::new(value_params.len()),
            policy_adam: AdamState::new(policy_params.len()),
            value_target: value_params.clone(),
            value_params,
            policy_params,
            value_arch,
            policy_arch,
            step: 0,
            rng: seeds::rng(config.seed, seeds::BATCH),
        })
    }

    pub fn value_pair(&self) -> ValuePair<'_> {
        ValuePair {
            arch: &self.value_arch,
            online: &self.value_params,
            target: &self.value_target,
        }
    }

    /// Uniform sample with replacement.
    pub fn sample_batch(&mut self, dataset: &Dataset, batch_size: usize) -> Result<Batch> {
        if dataset.is_empty() {
            return Err(Error::contract("dataset must be non-empty"));
        }
        let n = dataset.len();
        let picks: Vec<&Transition> = (0..batch_size)
            .map(|_| &dataset.transitions[self.rng.random_range(0..n)])
            .collect();
        Ok(Batch::from_transitions(&dataset.spec, picks))
    }
}

pub fn residual_forward(state: &TrainerState, batch: &Batch, gamma: f64) -> Result<Vec<f64>> {
    state.value_pair().residual_forward(batch, gamma)
}

pub fn forward_gradient(
    state: &TrainerState,
    batch: &Batch,
    div: &DivergenceSpec,
    gamma: f64,
) -> Result<ParamVector> {
    state.value_pair().forward_gradient(batch, div, gamma)
}

pub fn backward_gradient(
    state: &TrainerState,
    batch: &Batch,
    div: &DivergenceSpec,
    gamma: f64,
) -> Result<ParamVector> {
    state.value_pair().backward_gradient(batch, div, gamma)
}

/// The direction fed to Adam for one value step.
pub fn combined_value_gradient(
    pair: ValuePair<'_>,
    batch: &Batch,
    config: &TrainConfig,
) -> Result<ParamVector> {
    let div = config.divergence();
    let need_backward = config.grad_mode != GradMode::SemiGrad;
    let grads = pair.step_gradients(batch, &div, config.gamma, need_backward)?;
    let (lam, eta) = (config.lambda, config.eta);
    let StepGradients {
        linear,
        forward,
        backward,
    } = grads;
    let combined: Vec<f64> = match (config.grad_mode, backward) {
        (GradMode::SemiGrad, _) => linear
            .iter()
            .zip(forward.iter())
            .map(|(l, f)| (1.0 - lam) * l + lam * f)
            .collect(),
        (GradMode::TrueGrad, Some(back)) => linear
            .iter()
            .zip(forward.iter())
            .zip(back.iter())
            .map(|((l, f), b)| (1.0 - lam) * l + lam * (f + b))
            .collect(),
        (GradMode::Orthogonal, Some(back)) => {
            let perp = project(&back, &forward)?;
            linear
                .iter()
                .zip(forward.iter())
                .zip(perp.iter())
                .map(|((l, f), p)| (1.0 - lam) * l + lam * (f + eta * p))
                .collect()
        }
        (_, None) => unreachable!("backward gradient computed for non-semi modes"),
    };
    Ok(ParamVector::from_vec(combined))
}

/// One value step: combined gradient through Adam, then the EMA target
/// refresh.
pub fn value_update(state: &mut TrainerState, batch: &Batch, config: &TrainConfig) -> Result<()> {
    let grad = combined_value_gradient(state.value_pair(), batch, config)?;
    if !grad.is_finite() {
        return Err(Error::NonFinite(format!(
            "combined value gradient at step {} ({} mode)",
            state.step + 1,
            config.grad_mode
        )));
    }
    state
        .value_adam
        .step(&mut state.value_params, &grad, config.lr)?;
    state.value_target = ema_update(&state.value_target, &state.value_params, config.tau)?;
    Ok(())
}

/// Behavior-cloning weights from the current value pair.
pub fn bc_weights(state: &TrainerState, batch: &Batch, config: &TrainConfig) -> Result<Vec<f64>> {
    let div = config.divergence();
    let res = residual_forward(state, batch, config.gamma)?;
    Ok(res.iter().map(|&d| div.bc_weight(d, config.bc_trick)).collect())
}

/// Log-softmax of one logit row.
fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    row.iter().map(|z| z - log_z).collect()
}

/// One Adam ascent step on `mean w(s,a) log pi(a|s)`. Returns the weights
/// used. A batch whose weights are all zero carries no signal and leaves the
/// policy (and its optimiser) untouched.
pub fn policy_update(
    state: &mut TrainerState,
    batch: &Batch,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    let weights = bc_weights(state, batch, config)?;
    policy_update_weighted(state, batch, &weights, config.lr)?;
    Ok(weights)
}

/// Weighted-BC step with externally supplied weights.
pub fn policy_update_weighted(
    state: &mut TrainerState,
    batch: &Batch,
    weights: &[f64],
    lr: f64,
) -> Result<()> {
    batch.check_non_empty()?;
    if weights.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            what: "bc weights",
            expected: batch.len(),
            got: weights.len(),
        });
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Ok(());
    }
    let n = batch.len() as f64;
    let k = state.policy_arch.output_dim;
    let pass = forward_batch(&state.policy_params, &state.policy_arch, batch.s.view())?;
    let logits = pass.output();
    let mut seeds = Array2::zeros((batch.len(), k));
    for (i, row) in logits.outer_iter().enumerate() {
        let logp = log_softmax(row.as_slice().expect("contiguous logits"));
        let a = batch.actions[i].index();
        // d(-w log p_a)/dz_j = w (p_j - 1[j = a])
        for j in 0..k {
            let indicator = if j == a { 1.0 } else { 0.0 };
            seeds[[i, j]] = weights[i] * (logp[j].exp() - indicator) / n;
        }
    }
    let grad = pass.backward(seeds.view())?;
    drop(pass);
    state.policy_adam.step(&mut state.policy_params, &grad, lr)
}

/// Action probabilities of a policy network at `s`.
pub fn policy_probs(
    params: &ParamVector,
    arch: &NetworkArchitecture,
    spec: &GridSpec,
    s: Cell,
) -> Result<Vec<f64>> {
    let x = gridworld::encode(spec, s);
    let logits = crate::netcore::forward(params, arch, &x)?;
    Ok(log_softmax(&logits).into_iter().map(f64::exp).collect())
}

/// Most likely policy action at `s`, ties to the earlier action.
pub fn policy_action(
    params: &ParamVector,
    arch: &NetworkArchitecture,
    spec: &GridSpec,
    s: Cell,
) -> Result<Action> {
    let probs = policy_probs(params, arch, spec, s)?;
    Ok(argmax_first(&probs).and_then(Action::from_index).unwrap_or(Action::Up))
}

fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Result of a full training run.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub state: TrainerState,
    pub log: Vec<DiagnosticsRecord>,
}

pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutput> {
    config.validate()?;
    dataset.spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::contract("dataset must be non-empty"));
    }
    let mut state = TrainerState::new(config)?;
    let probe_pairs = diagnostics::PsiPairs::subsample(dataset, diagnostics::PSI_SUBSAMPLE);
    let mut log = Vec::with_capacity(config.steps / LOG_EVERY);
    for t in 1..=config.steps {
        let batch = state.sample_batch(dataset, config.batch_size)?;
        let logging = t % LOG_EVERY == 0;
        let pre = if logging {
            Some(diagnostics::batch_snapshot(state.value_pair(), &batch, config)?)
        } else {
            None
        };
        value_update(&mut state, &batch, config)?;
        let weights = policy_update(&mut state, &batch, config)?;
        debug_assert!(weights.iter().all(|&w| w >= 0.0));
        state.step = t;
        if let Some(pre) = pre {
            let psi = probe_pairs.stats(&state.value_params, &state.value_arch)?;
            log.push(DiagnosticsRecord {
                step: t,
                loss_total: pre.loss_total,
                loss_fwd: pre.loss_fwd,
                psi_mean: psi.psi_mean,
                cos_phi_mean: psi.cos_phi_mean,
                bc_weight_mean: mean(weights.iter().copied()),
                grad_fwd_norm: pre.grad_fwd_norm,
                grad_perp_norm: pre.grad_perp_norm,
            });
        }
    }
    Ok(TrainOutput { state, log })
}

/// `V_online` evaluated on every grid cell, row-major with `y` as the row.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    pub width: i32,
    pub height: i32,
    pub values: Vec<f64>,
}

impl ValueTable {
    pub fn new(params: &ParamVector, arch: &NetworkArchitecture, spec: &GridSpec) -> Result<Self> {
        let coords: Vec<f64> = spec.cells().flat_map(|c| gridworld::encode(spec, c)).collect();
        let x = Array2::from_shape_vec((spec.n_cells(), 2), coords).expect("two coords per cell");
        let values = forward_batch(params, arch, x.view())?.values();
        Ok(ValueTable {
            width: spec.width,
            height: spec.height,
            values,
        })
    }

    pub fn get(&self, c: Cell) -> f64 {
        self.values[(c.y * self.width + c.x) as usize]
    }

    /// Greedy move towards the best reachable neighbour.
    pub fn greedy_action(&self, spec: &GridSpec, s: Cell) -> Action {
        let scores: Vec<f64> = Action::ALL
            .iter()
            .map(|&a| self.get(spec.clipped_move(s, a)))
            .collect();
        argmax_first(&scores)
            .and_then(Action::from_index)
            .unwrap_or(Action::Up)
    }
}

/// Picks the action whose (border-clipped) destination has the highest
/// online value; ties go to the earlier action in up, right, down, left.
pub fn greedy_v_policy(
    params: &ParamVector,
    arch: &NetworkArchitecture,
    spec: &GridSpec,
    s: Cell,
) -> Result<Action> {
    if !spec.contains(s) {
        return Err(Error::contract(format!("cell {s} outside grid")));
    }
    let coords: Vec<f64> = Action::ALL
        .iter()
        .flat_map(|&a| gridworld::encode(spec, spec.clipped_move(s, a)))
        .collect();
    let x = Array2::from_shape_vec((4, 2), coords).expect("four neighbours");
    let values = forward_batch(params, arch, x.view())?.values();
    Ok(argmax_first(&values)
        .and_then(Action::from_index)
        .unwrap_or(Action::Up))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub success_rate: f64,
    pub returns: Vec<f64>,
}

impl EvalReport {
    pub fn mean_return(&self) -> f64 {
        mean(self.returns.iter().copied())
    }
}

/// Rolls `policy` out from the start cell `episodes` times in the slippery
/// environment. An episode succeeds when it reaches any goal cell.
pub fn rollout_eval<F>(mut policy: F, spec: &GridSpec, episodes: usize, seed: u64) -> Result<EvalReport>
where
    F: FnMut(Cell) -> Action,
{
    spec.validate()?;
    if episodes == 0 {
        return Err(Error::contract("episodes must be >= 1"));
    }
    let mut rng = seeds::rng(seed, seeds::EVAL);
    let mut successes = 0usize;
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = spec.start;
        let mut ret = 0.0;
        for _ in 0..spec.max_episode_len {
            let a = gridworld::slip(spec, policy(s), &mut rng);
            let out = gridworld::step(spec, s, a)?;
            ret += out.r;
            s = out.s_next;
            if out.done {
                successes += 1;
                break;
            }
        }
        returns.push(ret);
    }
    Ok(EvalReport {
        success_rate: successes as f64 / episodes as f64,
        returns,
    })
}

/// Evaluates the argmax action of a policy network.
pub fn eval_policy_network(
    params: &ParamVector,
    arch: &NetworkArchitecture,
    spec: &GridSpec,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let actions = spec
        .cells()
        .map(|c| policy_action(params, arch, spec, c))
        .collect::<Result<Vec<_>>>()?;
    rollout_eval(|s| actions[spec.cell_index(s)], spec, episodes, seed)
}

/// Evaluates the greedy-V policy of a trained value network.
pub fn eval_greedy_v(
    params: &ParamVector,
    arch: &NetworkArchitecture,
    spec: &GridSpec,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let table = ValueTable::new(params, arch, spec)?;
    rollout_eval(|s| table.greedy_action(spec, s), spec, episodes, seed)
}
