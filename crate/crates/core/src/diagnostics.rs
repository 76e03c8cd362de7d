//! Probes that check the orthogonal update's optimisation and
//! representation claims on concrete networks.
//!
//! All probes are read-only over parameter snapshots and take plain
//! gradient steps (no Adam), so their outputs depend only on the inputs.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dicetrain::{project, Batch, GradMode, TrainConfig, ValuePair};
use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::gridworld::{self, Cell, Dataset, GridSpec, SupportMask, Transition};
use crate::netcore::{forward_batch, grad_value, per_sample_grad_dots, NetworkArchitecture, ParamVector};
use crate::seeds;

/// Maximum number of transition pairs used for the logged feature dot product.
pub const PSI_SUBSAMPLE: usize = 512;

/// One row of the training metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub loss_total: f64,
    pub loss_fwd: f64,
    pub psi_mean: f64,
    pub cos_phi_mean: f64,
    pub bc_weight_mean: f64,
    pub grad_fwd_norm: f64,
    pub grad_perp_norm: f64,
}

pub const METRICS_HEADER: &str =
    "step,loss_total,loss_fwd,psi_mean,cos_phi_mean,bc_weight_mean,grad_fwd_norm,grad_perp_norm";

pub fn metrics_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.loss_total,
            r.loss_fwd,
            r.psi_mean,
            r.cos_phi_mean,
            r.bc_weight_mean,
            r.grad_fwd_norm,
            r.grad_perp_norm
        );
    }
    out
}

/// Losses and gradient norms of a batch before it is applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchSnapshot {
    pub loss_total: f64,
    pub loss_fwd: f64,
    pub grad_fwd_norm: f64,
    pub grad_perp_norm: f64,
}

pub fn batch_snapshot(pair: ValuePair<'_>, batch: &Batch, config: &TrainConfig) -> Result<BatchSnapshot> {
    let div = config.divergence();
    let g_fwd = pair.forward_gradient(batch, &div, config.gamma)?;
    let g_back = pair.backward_gradient(batch, &div, config.gamma)?;
    let perp = project(&g_back, &g_fwd)?;
    Ok(BatchSnapshot {
        loss_total: pair.total_loss(batch, &div, config.gamma, config.lambda)?,
        loss_fwd: pair.forward_loss(batch, &div, config.gamma)?,
        grad_fwd_norm: g_fwd.norm(),
        grad_perp_norm: perp.norm(),
    })
}

/// Encoded `(s, s')` pairs of non-terminal transitions.
#[derive(Clone, Debug)]
pub struct PsiPairs {
    s: Array2<f64>,
    s_next: Array2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiStats {
    pub psi_mean: f64,
    pub cos_phi_mean: f64,
}

impl PsiPairs {
    fn from_transitions<'t>(spec: &GridSpec, ts: impl Iterator<Item = &'t Transition>) -> Self {
        let batch = Batch::from_transitions(spec, ts.filter(|t| !t.done));
        PsiPairs {
            s: batch.s,
            s_next: batch.s_next,
        }
    }

    pub fn all(dataset: &Dataset) -> Self {
        Self::from_transitions(&dataset.spec, dataset.transitions.iter())
    }

    /// Evenly strided subsample of at most `max` non-terminal transitions.
    pub fn subsample(dataset: &Dataset, max: usize) -> Self {
        let live: Vec<&Transition> = dataset.transitions.iter().filter(|t| !t.done).collect();
        if live.len() <= max {
            return Self::from_transitions(&dataset.spec, live.into_iter());
        }
        let picked = (0..max).map(|i| live[i * live.len() / max]);
        Self::from_transitions(&dataset.spec, picked)
    }

    pub fn len(&self) -> usize {
        self.s.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self, params: &ParamVector, arch: &NetworkArchitecture) -> Result<PsiStats> {
        if self.is_empty() {
            return Ok(PsiStats {
                psi_mean: 0.0,
                cos_phi_mean: 0.0,
            });
        }
        let dots = per_sample_grad_dots(params, arch, self.s.view(), self.s_next.view())?;
        let n = dots.len() as f64;
        Ok(PsiStats {
            psi_mean: dots.iter().map(|d| d.cross).sum::<f64>() / n,
            cos_phi_mean: dots.iter().map(|d| d.cosine()).sum::<f64>() / n,
        })
    }
}

/// Mean of `<grad V(s), grad V(s')>` over every non-terminal transition.
pub fn feature_dot_mean(
    params: &ParamVector,
    arch: &NetworkArchitecture,
    dataset: &Dataset,
) -> Result<f64> {
    let pairs = PsiPairs::all(dataset);
    if pairs.is_empty() {
        return Err(Error::contract("feature_dot_mean needs a non-terminal transition"));
    }
    Ok(pairs.stats(params, arch)?.psi_mean)
}

/// Second step used by [`theorem1_scaling_probe`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeStep {
    /// `theta'' = theta' - alpha * eta * perp(grad L2)`
    Orthogonal,
    /// `theta'' = theta' - alpha * grad L2`
    TrueGrad,
}

impl ProbeStep {
    pub fn name(self) -> &'static str {
        match self {
            ProbeStep::Orthogonal => GradMode::Orthogonal.name(),
            ProbeStep::TrueGrad => GradMode::TrueGrad.name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingFit {
    pub alphas: Vec<f64>,
    /// `|L1(theta'') - L1(theta')|` per alpha.
    pub diffs: Vec<f64>,
    /// Least-squares slope of `ln diff` against `ln alpha`; `None` when any
    /// difference is exactly zero.
    pub slope: Option<f64>,
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if ys.iter().any(|&y| !(y > 0.0 && y.is_finite())) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

/// Measures how much the second half of a decomposed update disturbs the
/// forward loss `L1`, across step sizes.
///
/// `theta' = theta - alpha grad L1`, then `theta''` per [`ProbeStep`]; all
/// gradients are taken at `theta` with the pair's target frozen.
pub fn theorem1_scaling_probe(
    pair: ValuePair<'_>,
    batch: &Batch,
    config: &TrainConfig,
    alphas: &[f64],
    step: ProbeStep,
) -> Result<ScalingFit> {
    if alphas.len() < 4 || alphas.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::contract("need at least 4 positive step sizes"));
    }
    let (lo, hi) = alphas
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &a| (lo.min(a), hi.max(a)));
    if hi / lo < 100.0 {
        return Err(Error::contract("step sizes must span at least two decades"));
    }
    let div = config.divergence();
    let g1 = pair.forward_gradient(batch, &div, config.gamma)?;
    let g2 = pair.backward_gradient(batch, &div, config.gamma)?;
    let second = match step {
        ProbeStep::Orthogonal => project(&g2, &g1)?.scaled(config.eta),
        ProbeStep::TrueGrad => g2,
    };
    let mut diffs = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut theta1 = pair.online.clone();
        theta1.axpy(-alpha, &g1);
        let mut theta2 = theta1.clone();
        theta2.axpy(-alpha, &second);
        let l1 = |theta: &ParamVector| {
            ValuePair {
                arch: pair.arch,
                online: theta,
                target: pair.target,
            }
            .forward_loss(batch, &div, config.gamma)
        };
        diffs.push((l1(&theta2)? - l1(&theta1)?).abs());
    }
    Ok(ScalingFit {
        alphas: alphas.to_vec(),
        slope: loglog_slope(alphas, &diffs),
        diffs,
    })
}

/// Right-hand side of the descent condition
/// `eta > (cos(phi) rho - rho^2) / sin^2(phi)` with
/// `rho = |grad V(s)| / (gamma |grad V(s')|)`.
pub fn eta_threshold(grad_s: &ParamVector, grad_next: &ParamVector, gamma: f64) -> Result<f64> {
    let na = grad_s.norm();
    let nb = grad_next.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Undefined(
            "threshold undefined: vanishing value gradient".into(),
        ));
    }
    let cos = grad_s.dot(grad_next) / (na * nb);
    // sin^2 from the orthogonal residual, which keeps precision near cos = 1
    let sin_sq = (project(grad_next, grad_s)?.norm_sq() / (nb * nb)).min(1.0);
    if sin_sq < 1e-12 {
        return Err(Error::Undefined(
            "threshold undefined: parallel gradients (phi = 0)".into(),
        ));
    }
    let rho = na / (gamma * nb);
    Ok((cos * rho - rho * rho) / sin_sq)
}

/// Threshold at one transition for a value network with `target = online`.
pub fn theorem2_eta_threshold(
    params: &ParamVector,
    arch: &NetworkArchitecture,
    spec: &GridSpec,
    transition: &Transition,
    gamma: f64,
) -> Result<f64> {
    let a = grad_value(params, arch, &gridworld::encode(spec, transition.s))?;
    let b = grad_value(params, arch, &gridworld::encode(spec, transition.s_next))?;
    eta_threshold(&a, &b, gamma)
}

/// Step strength used by the descent probe: 10% above the threshold (in
/// absolute terms) plus 0.1, so the probe never uses a non-positive eta.
pub fn probe_eta(threshold: f64) -> f64 {
    (threshold + 0.1 * threshold.abs()).max(0.0) + 0.1
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentCheck {
    pub threshold: f64,
    pub eta: f64,
    pub loss_before: f64,
    pub loss_after: f64,
}

impl DescentCheck {
    pub fn decreased(&self) -> bool {
        self.loss_after < self.loss_before
    }
}

/// One orthogonal step `theta'' = theta - alpha (grad L1 + eta perp(grad L2))`
/// on a single transition, returning the full loss before and after.
pub fn theorem2_descent_check(
    params: &ParamVector,
    arch: &NetworkArchitecture,
    spec: &GridSpec,
    transition: &Transition,
    div: &DivergenceSpec,
    gamma: f64,
    alpha: f64,
) -> Result<DescentCheck> {
    if transition.done {
        return Err(Error::contract("descent probe needs a non-terminal transition"));
    }
    let batch = Batch::from_transitions(spec, std::iter::once(transition));
    let loss = |theta: &ParamVector| -> Result<f64> {
        let pair = ValuePair {
            arch,
            online: theta,
            target: theta,
        };
        let d = pair.residual_online(&batch, gamma)?[0];
        Ok(div.f_conj(d))
    };
    let threshold = theorem2_eta_threshold(params, arch, spec, transition, gamma)?;
    let eta = probe_eta(threshold);
    let pair = ValuePair {
        arch,
        online: params,
        target: params,
    };
    let g1 = pair.forward_gradient(&batch, div, gamma)?;
    let g2 = pair.backward_gradient(&batch, div, gamma)?;
    let perp = project(&g2, &g1)?;
    let mut next = params.clone();
    next.axpy(-alpha, &g1);
    next.axpy(-alpha * eta, &perp);
    Ok(DescentCheck {
        threshold,
        eta,
        loss_before: loss(params)?,
        loss_after: loss(&next)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescentProbe {
    pub checks: Vec<DescentCheck>,
    /// Draws rejected because the threshold was undefined.
    pub skipped: usize,
}

impl DescentProbe {
    pub fn decrease_fraction(&self) -> f64 {
        let ok = self.checks.iter().filter(|c| c.decreased()).count();
        ok as f64 / self.checks.len().max(1) as f64
    }
}

/// Runs `n_probes` descent checks, each on a freshly initialised value
/// network and a random non-terminal dataset transition.
pub fn theorem2_descent_probe(
    dataset: &Dataset,
    config: &TrainConfig,
    n_probes: usize,
    alpha: f64,
    seed: u64,
) -> Result<DescentProbe> {
    let live: Vec<&Transition> = dataset.transitions.iter().filter(|t| !t.done).collect();
    if live.is_empty() {
        return Err(Error::contract("descent probe needs non-terminal transitions"));
    }
    let arch = config.value_arch();
    let div = config.divergence();
    let mut rng = seeds::rng(seed, seeds::PROBE);
    let mut checks = Vec::with_capacity(n_probes);
    let mut skipped = 0;
    while checks.len() < n_probes {
        let params = arch.init_params(&mut rng);
        let t = live[rng.random_range(0..live.len())];
        match theorem2_descent_check(&params, &arch, &dataset.spec, t, &div, config.gamma, alpha) {
            Ok(c) => checks.push(c),
            Err(Error::Undefined(_)) => {
                skipped += 1;
                if skipped > 10 * n_probes {
                    return Err(Error::Undefined("descent probe: too many degenerate draws".into()));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(DescentProbe { checks, skipped })
}

/// Fraction of `(transition, noise)` pairs for which Gaussian noise on the
/// encoded `s'` flips the sign of `V(s') - V(s)`. Exact zeros on either
/// side count as no flip.
pub fn robustness_sign_flip(
    params: &ParamVector,
    arch: &NetworkArchitecture,
    dataset: &Dataset,
    sigma: f64,
    n_noise: usize,
    seed: u64,
) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::contract(format!("sigma must be > 0, got {sigma}")));
    }
    let live: Vec<&Transition> = dataset.transitions.iter().filter(|t| !t.done).collect();
    if live.is_empty() || n_noise == 0 {
        return Ok(0.0);
    }
    let spec = &dataset.spec;
    let base = Batch::from_transitions(spec, live.iter().copied());
    let v_s = forward_batch(params, arch, base.s.view())?.values();
    let v_next = forward_batch(params, arch, base.s_next.view())?.values();

    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    let mut rng = seeds::rng(seed, seeds::NOISE);
    let rows = live.len() * n_noise;
    let mut noisy = Array2::zeros((rows, 2));
    for i in 0..live.len() {
        for k in 0..n_noise {
            let row = i * n_noise + k;
            noisy[[row, 0]] = base.s_next[[i, 0]] + normal.sample(&mut rng);
            noisy[[row, 1]] = base.s_next[[i, 1]] + normal.sample(&mut rng);
        }
    }
    let v_noisy = forward_batch(params, arch, noisy.view())?.values();
    let flips = (0..rows)
        .filter(|&row| {
            let i = row / n_noise;
            let clean = v_next[i] - v_s[i];
            let perturbed = v_noisy[row] - v_s[i];
            clean * perturbed < 0.0
        })
        .count();
    Ok(flips as f64 / rows as f64)
}

/// `100 (mean - worst) / |mean|` over episode returns.
pub fn percent_difference(returns: &[f64]) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::contract("percent_difference needs at least one return"));
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    if mean == 0.0 {
        return Err(Error::contract("percent_difference undefined for zero mean return"));
    }
    let worst = returns.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(100.0 * (mean - worst) / mean.abs())
}

/// Value function over the grid rescaled to `[0, 100]`, row-major with `y`
/// as the row.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub width: i32,
    pub height: i32,
    pub values: Vec<f64>,
}

impl Heatmap {
    /// Affine rescale of raw values; a constant field maps to 50 everywhere.
    pub fn normalize(width: i32, height: i32, raw: &[f64]) -> Heatmap {
        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let values = if hi > lo {
            // divide first: the maximum then maps to exactly 100
            raw.iter().map(|&v| 100.0 * ((v - lo) / (hi - lo))).collect()
        } else {
            vec![50.0; raw.len()]
        };
        Heatmap {
            width,
            height,
            values,
        }
    }

    pub fn get(&self, c: Cell) -> f64 {
        self.values[(c.y * self.width + c.x) as usize]
    }

    /// CSV with one row per `y` (row 0 is `y = 0`) and one column per `x`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.width as usize) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Plain (P2) greymap, `round(2.55 * heat)`. The image's first row is
    /// the top of the grid (`y = height - 1`).
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.width, self.height);
        for row in self.values.chunks(self.width as usize).rev() {
            let line: Vec<String> = row
                .iter()
                .map(|v| ((v * 2.55).round() as i64).clamp(0, 255).to_string())
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// `(in-support mean, out-of-support mean)`; `None` when either region
    /// is empty.
    pub fn region_means(&self, mask: &SupportMask) -> Option<(f64, f64)> {
        let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0usize, 0.0, 0usize);
        for (v, &inside) in self.values.iter().zip(mask.as_slice()) {
            if inside {
                sin += v;
                nin += 1;
            } else {
                sout += v;
                nout += 1;
            }
        }
        (nin > 0 && nout > 0).then(|| (sin / nin as f64, sout / nout as f64))
    }

    /// In-support mean minus out-of-support mean.
    pub fn ood_gap(&self, mask: &SupportMask) -> Option<f64> {
        self.region_means(mask).map(|(i, o)| i - o)
    }
}

pub fn value_heatmap(
    params: &ParamVector,
    arch: &NetworkArchitecture,
    spec: &GridSpec,
) -> Result<Heatmap> {
    let coords: Vec<f64> = spec.cells().flat_map(|c| gridworld::encode(spec, c)).collect();
    let x = Array2::from_shape_vec((spec.n_cells(), 2), coords).expect("two coords per cell");
    let raw = forward_batch(params, arch, x.view())?.values();
    Ok(Heatmap::normalize(spec.width, spec.height, &raw))
}
