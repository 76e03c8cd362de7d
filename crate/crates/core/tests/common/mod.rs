//! Reference implementations shared by the integration tests. They are
//! written with plain loops and no code from the crate's math paths.
#![allow(dead_code)]

use odice::netcore::{Activation, NetworkArchitecture};

/// Naive forward pass over the documented flat layout: per layer a
/// `fan_in x fan_out` row-major weight block followed by `fan_out` biases.
pub fn naive_forward(params: &[f64], arch: &NetworkArchitecture, x: &[f64]) -> Vec<f64> {
    let mut dims = vec![arch.input_dim];
    dims.extend(&arch.hidden_widths);
    dims.push(arch.output_dim);
    let mut h = x.to_vec();
    let mut off = 0;
    for l in 0..dims.len() - 1 {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let mut next = vec![0.0; n_out];
        for j in 0..n_out {
            let mut acc = params[off + n_in * n_out + j];
            for i in 0..n_in {
                acc += h[i] * params[off + i * n_out + j];
            }
            let hidden = l + 1 < dims.len() - 1;
            next[j] = match (hidden, arch.activation) {
                (false, _) => acc,
                (true, Activation::Relu) => acc.max(0.0),
                (true, Activation::Tanh) => acc.tanh(),
            };
        }
        off += n_in * n_out + n_out;
        h = next;
    }
    assert_eq!(off, params.len());
    h
}

/// Central finite difference of a scalar function of the parameters.
pub fn fd_gradient(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||, floor)`.
pub fn rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// Smallest distance of any hidden pre-activation from zero; FD checks of
/// relu networks are only meaningful away from the kink.
pub fn min_preactivation_margin(params: &[f64], arch: &NetworkArchitecture, x: &[f64]) -> f64 {
    let mut dims = vec![arch.input_dim];
    dims.extend(&arch.hidden_widths);
    dims.push(arch.output_dim);
    let mut h = x.to_vec();
    let mut off = 0;
    let mut margin = f64::INFINITY;
    for l in 0..dims.len() - 2 {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let mut next = vec![0.0; n_out];
        for j in 0..n_out {
            let mut acc = params[off + n_in * n_out + j];
            for i in 0..n_in {
                acc += h[i] * params[off + i * n_out + j];
            }
            margin = margin.min(acc.abs());
            next[j] = match arch.activation {
                Activation::Relu => acc.max(0.0),
                Activation::Tanh => acc.tanh(),
            };
        }
        off += n_in * n_out + n_out;
        h = next;
    }
    margin
}

/// Textbook Adam over a sequence of gradients, starting from `theta`.
pub fn reference_adam(theta: &[f64], grads: &[Vec<f64>], lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut th = theta.to_vec();
    let mut m = vec![0.0; th.len()];
    let mut v = vec![0.0; th.len()];
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        for i in 0..th.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            th[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    th
}

// ---------------------------------------------------------------------------
// Checks shared by the module tests and the acceptance target. Each returns
// a one-line detail on success and a reason on failure.

use odice::dicetrain::{combined_value_gradient, project, value_update, Batch, GradMode, TrainConfig, TrainerState};
use odice::diagnostics::{theorem1_scaling_probe, theorem2_descent_probe, ProbeStep};
use odice::divergence::{ConjugateMode, DivergenceSpec};
use odice::gridworld::{generate_dataset, Dataset, GridSpec};
use odice::netcore::{forward, grad_value, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Outcome = Result<String, String>;

pub fn toy_dataset() -> Dataset {
    generate_dataset(&GridSpec::default(), 20, 0).expect("toy dataset")
}

/// Value-gradient check against central differences on `per_arch` random
/// (params, input) pairs for each of several architectures.
pub fn check_gradients(per_arch: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let archs = [
        NetworkArchitecture::new(2, vec![8], Activation::Relu, 1).unwrap(),
        NetworkArchitecture::new(2, vec![16, 16], Activation::Relu, 1).unwrap(),
        NetworkArchitecture::new(2, vec![12, 6], Activation::Tanh, 1).unwrap(),
        NetworkArchitecture::new(3, vec![5, 5, 5], Activation::Tanh, 1).unwrap(),
    ];
    let mut worst = 0.0f64;
    for arch in &archs {
        let mut checked = 0;
        while checked < per_arch {
            let params = arch.init_params(&mut rng);
            let x: Vec<f64> = (0..arch.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if min_preactivation_margin(&params, arch, &x) < 1e-3 {
                continue;
            }
            let g = grad_value(&params, arch, &x).map_err(|e| e.to_string())?;
            let fd = fd_gradient(&params, 1e-6, |p| {
                forward(&ParamVector::from_vec(p.to_vec()), arch, &x).unwrap()[0]
            });
            let err = rel_error(&g, &fd, 1e-8);
            if err > 1e-4 {
                return Err(format!("{arch:?}: relative error {err:.3e}"));
            }
            worst = worst.max(err);
            checked += 1;
        }
    }
    Ok(format!("{} archs x {per_arch} pairs, worst rel err {worst:.2e}", archs.len()))
}

pub fn check_projection(pairs: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst_orth = 0.0f64;
    let mut worst_recon = 0.0f64;
    for _ in 0..pairs {
        let n = rng.random_range(2..64);
        let scale_b = 10f64.powf(rng.random_range(-3.0..3.0));
        let scale_f = 10f64.powf(rng.random_range(-3.0..3.0));
        let b = ParamVector::from_vec((0..n).map(|_| scale_b * rng.random_range(-1.0..1.0)).collect());
        let f = ParamVector::from_vec((0..n).map(|_| scale_f * rng.random_range(-1.0..1.0)).collect());
        let p = project(&b, &f).map_err(|e| e.to_string())?;
        let bound = 1e-8 * p.norm() * f.norm();
        let orth = p.dot(&f).abs();
        if orth > bound && orth > 0.0 {
            return Err(format!("<g_perp, g_fwd> = {orth:e} exceeds {bound:e}"));
        }
        let coef = b.dot(&f) / f.norm_sq();
        let recon = (0..n).map(|i| (p[i] + coef * f[i] - b[i]).abs()).fold(0.0, f64::max);
        if recon > 1e-10 * b.norm().max(1.0) {
            return Err(format!("reconstruction error {recon:e}"));
        }
        worst_orth = worst_orth.max(if bound > 0.0 { orth / bound * 1e-8 } else { 0.0 });
        worst_recon = worst_recon.max(recon);
    }
    Ok(format!("{pairs} pairs, worst normalized inner product {worst_orth:.1e}, worst reconstruction {worst_recon:.1e}"))
}

pub fn check_conjugates() -> Outcome {
    let unc = DivergenceSpec::pearson(ConjugateMode::Unconstrained);
    let nn = DivergenceSpec::pearson(ConjugateMode::Nonneg);
    let grid = |lo: f64, hi: f64| {
        let n = ((hi - lo) / 0.05).round() as i64;
        (0..=n).map(move |i| lo + i as f64 * 0.05)
    };
    let mut points = 0usize;
    for y in grid(-6.0, 6.0) {
        for x in grid(-3.0, 3.0) {
            if unc.f(x) + unc.f_conj(y) < x * y - 1e-12 {
                return Err(format!("Fenchel-Young violated at x={x}, y={y}"));
            }
            points += 1;
        }
        let xs = unc.f_prime_inv(y);
        let gap = unc.f(xs) + unc.f_conj(y) - xs * y;
        if gap.abs() > 1e-10 {
            return Err(format!("Fenchel-Young equality off by {gap:e} at y={y}"));
        }
        if nn.f_conj_prime(y) < 0.0 {
            return Err(format!("(f*)' negative at y={y}"));
        }
        // constrained supremum over x in [0, 100] on a 1e-4 grid; the
        // objective is concave so the grid max is within (1e-4)^2 of it
        let sup = (0..=1_000_000)
            .map(|i| {
                let x = i as f64 * 1e-4;
                x * y - nn.f(x)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        if (sup - nn.f_conj(y)).abs() > 1e-6 {
            return Err(format!("nonneg conjugate {} vs numeric sup {sup} at y={y}", nn.f_conj(y)));
        }
        if (y + 2.0).abs() > 1e-3 {
            let h = 1e-5;
            for d in [unc, nn] {
                let fd = (d.f_conj(y + h) - d.f_conj(y - h)) / (2.0 * h);
                if (fd - d.f_conj_prime(y)).abs() > 1e-6 {
                    return Err(format!("{:?}: (f*)' off finite difference at y={y}", d.conjugate));
                }
            }
        }
    }
    Ok(format!("{points} Fenchel-Young points, 241 supremum and Lemma 1 points"))
}

fn random_batch(ds: &Dataset, n: usize, rng: &mut ChaCha8Rng) -> Batch {
    let picks: Vec<_> = (0..n).map(|_| &ds.transitions[rng.random_range(0..ds.len())]).collect();
    Batch::from_transitions(&ds.spec, picks.into_iter())
}

/// Slopes of the interference probe for seeds `0..n_seeds`.
pub fn theorem1_slopes(n_seeds: u64) -> Result<Vec<(f64, f64)>, String> {
    let ds = toy_dataset();
    let cfg = TrainConfig::default();
    let alphas = [1e-2, 1e-3, 1e-4, 1e-5];
    (0..n_seeds)
        .map(|seed| {
            let state = TrainerState::new(&TrainConfig { seed, ..cfg.clone() }).map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let batch = random_batch(&ds, cfg.batch_size, &mut rng);
            let slope = |step| {
                theorem1_scaling_probe(state.value_pair(), &batch, &cfg, &alphas, step)
                    .map_err(|e| e.to_string())?
                    .slope
                    .ok_or_else(|| format!("seed {seed}: zero difference in {step:?} probe"))
            };
            Ok((slope(ProbeStep::Orthogonal)?, slope(ProbeStep::TrueGrad)?))
        })
        .collect()
}

pub fn check_theorem1() -> Outcome {
    let slopes = theorem1_slopes(5)?;
    let desc: Vec<String> = slopes.iter().map(|(o, t)| format!("{o:.2}/{t:.2}")).collect();
    let bad: Vec<usize> = (0..slopes.len())
        .filter(|&i| {
            let (o, t) = slopes[i];
            o < 1.9 || t > 1.2 || o <= t
        })
        .collect();
    let msg = format!("orthogonal/true slopes per seed: {}", desc.join(", "));
    if bad.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}; out of bounds on seeds {bad:?}"))
    }
}

pub fn check_theorem2() -> Outcome {
    let ds = toy_dataset();
    let probe = theorem2_descent_probe(&ds, &TrainConfig::default(), 1000, 1e-5, 0).map_err(|e| e.to_string())?;
    let frac = probe.decrease_fraction();
    let detail = format!("{:.1}% of 1000 probes decreased ({} degenerate draws skipped)", 100.0 * frac, probe.skipped);
    if frac >= 0.99 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn check_mode_collapse() -> Outcome {
    let ds = toy_dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..3 {
        let ortho = TrainConfig { eta: 0.0, grad_mode: GradMode::Orthogonal, seed, ..TrainConfig::default() };
        let semi = TrainConfig { grad_mode: GradMode::SemiGrad, ..ortho.clone() };
        let mut a = TrainerState::new(&ortho).map_err(|e| e.to_string())?;
        let mut b = a.clone();
        // move away from the initial point first so Adam moments are non-trivial
        for _ in 0..3 {
            let batch = random_batch(&ds, 64, &mut rng);
            value_update(&mut a, &batch, &semi).map_err(|e| e.to_string())?;
            value_update(&mut b, &batch, &semi).map_err(|e| e.to_string())?;
        }
        let batch = random_batch(&ds, 256, &mut rng);
        let ga = combined_value_gradient(a.value_pair(), &batch, &ortho).map_err(|e| e.to_string())?;
        let gb = combined_value_gradient(b.value_pair(), &batch, &semi).map_err(|e| e.to_string())?;
        value_update(&mut a, &batch, &ortho).map_err(|e| e.to_string())?;
        value_update(&mut b, &batch, &semi).map_err(|e| e.to_string())?;
        let same_bits = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
        if !same_bits(&ga, &gb) || !same_bits(&a.value_params, &b.value_params) || !same_bits(&a.value_target, &b.value_target) {
            return Err(format!("seed {seed}: eta=0 orthogonal update differs from semi-gradient update"));
        }
    }
    Ok("3 states: parameters, target and combined gradient bitwise equal".into())
}

/// A value pair whose online and target parameters differ.
pub fn distinct_pair_state(seed: u64) -> TrainerState {
    let cfg = TrainConfig { hidden_widths: vec![16, 16], seed, ..TrainConfig::default() };
    let mut st = TrainerState::new(&cfg).unwrap();
    let other = cfg.value_arch().init_params(&mut ChaCha8Rng::seed_from_u64(seed + 1000));
    st.value_target = other;
    st
}
