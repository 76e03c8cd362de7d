mod common;

use common::{distinct_pair_state, fd_gradient, rel_error, toy_dataset};
use odice::dicetrain::{
    combined_value_gradient, project, train, Batch, GradMode, TrainConfig, TrainerState, ValuePair,
};
use odice::divergence::{ConjugateMode, DivergenceSpec};
use odice::gridworld::{encode, GridSpec};
use odice::netcore::{forward, ParamVector};
use proptest::prelude::*;

fn value(params: &ParamVector, st: &TrainerState, x: [f64; 2]) -> f64 {
    forward(params, &st.value_arch, &x).unwrap()[0]
}

#[test]
fn residuals_match_scalar_recomputation() {
    let ds = toy_dataset();
    let st = distinct_pair_state(3);
    let spec = &ds.spec;
    let picks = [&ds.transitions[0], &ds.transitions[7], ds.transitions.iter().find(|t| t.done).unwrap()];
    let batch = Batch::from_transitions(spec, picks);
    let pair = st.value_pair();
    let fwd = pair.residual_forward(&batch, 0.99).unwrap();
    let back = pair.residual_backward(&batch, 0.99).unwrap();
    for (i, t) in picks.iter().enumerate() {
        let mask = if t.done { 0.0 } else { 1.0 };
        let want_f = t.r + 0.99 * mask * value(&st.value_target, &st, encode(spec, t.s_next))
            - value(&st.value_params, &st, encode(spec, t.s));
        let want_b = t.r + 0.99 * mask * value(&st.value_params, &st, encode(spec, t.s_next))
            - value(&st.value_target, &st, encode(spec, t.s));
        assert!((fwd[i] - want_f).abs() < 1e-12);
        assert!((back[i] - want_b).abs() < 1e-12);
    }
}

fn loss_gradients_match_fd(mode: ConjugateMode) {
    let ds = toy_dataset();
    let div = DivergenceSpec::pearson(mode);
    for seed in 0..4 {
        let st = distinct_pair_state(seed);
        let batch = Batch::from_transitions(&ds.spec, ds.transitions.iter().skip(seed as usize * 13).take(24));
        let pair = st.value_pair();
        let arch = &st.value_arch;

        let g = pair.forward_gradient(&batch, &div, 0.99).unwrap();
        let fd = fd_gradient(&st.value_params, 1e-6, |p| {
            let p = ParamVector::from_vec(p.to_vec());
            ValuePair { arch, online: &p, target: &st.value_target }.forward_loss(&batch, &div, 0.99).unwrap()
        });
        assert!(rel_error(&g, &fd, 1e-8) < 1e-4, "forward gradient, seed {seed}");

        let g = pair.backward_gradient(&batch, &div, 0.99).unwrap();
        let fd = fd_gradient(&st.value_params, 1e-6, |p| {
            let p = ParamVector::from_vec(p.to_vec());
            ValuePair { arch, online: &p, target: &st.value_target }.backward_loss(&batch, &div, 0.99).unwrap()
        });
        assert!(rel_error(&g, &fd, 1e-8) < 1e-4, "backward gradient, seed {seed}");
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    loss_gradients_match_fd(ConjugateMode::Unconstrained);
    loss_gradients_match_fd(ConjugateMode::Nonneg);
}

#[test]
fn single_sample_gradients_are_scaled_value_gradients() {
    let ds = toy_dataset();
    let st = distinct_pair_state(9);
    let t = ds.transitions.iter().find(|t| !t.done).unwrap();
    let batch = Batch::from_transitions(&ds.spec, [t]);
    let div = DivergenceSpec::default();
    let pair = st.value_pair();
    let gs = odice::netcore::grad_value(&st.value_params, &st.value_arch, &encode(&ds.spec, t.s)).unwrap();
    let gn = odice::netcore::grad_value(&st.value_params, &st.value_arch, &encode(&ds.spec, t.s_next)).unwrap();
    let df = div.f_conj_prime(pair.residual_forward(&batch, 0.99).unwrap()[0]);
    let db = div.f_conj_prime(pair.residual_backward(&batch, 0.99).unwrap()[0]);
    let fwd = pair.forward_gradient(&batch, &div, 0.99).unwrap();
    let back = pair.backward_gradient(&batch, &div, 0.99).unwrap();
    for i in 0..gs.len() {
        assert!((fwd[i] + df * gs[i]).abs() < 1e-12);
        assert!((back[i] - 0.99 * db * gn[i]).abs() < 1e-12);
    }
}

#[test]
fn combined_gradient_structure() {
    let ds = toy_dataset();
    let st = distinct_pair_state(4);
    let batch = Batch::from_transitions(&ds.spec, ds.transitions.iter().take(64));
    let pair = st.value_pair();
    let cfg = TrainConfig { lambda: 0.6, eta: 0.7, ..TrainConfig::default() };
    let div = cfg.divergence();
    let lin = pair.linear_gradient(&batch).unwrap();
    let fwd = pair.forward_gradient(&batch, &div, cfg.gamma).unwrap();
    let perp = project(&pair.backward_gradient(&batch, &div, cfg.gamma).unwrap(), &fwd).unwrap();

    // what remains after removing the linear and projected parts is the
    // forward part, orthogonal to the projected one
    let g = combined_value_gradient(pair, &batch, &cfg).unwrap();
    let mut rest = g.clone();
    rest.axpy(-(1.0 - cfg.lambda), &lin);
    rest.axpy(-cfg.lambda * cfg.eta, &perp);
    assert!(rel_error(&rest, &fwd.scaled(cfg.lambda), 1e-12) < 1e-10);
    let rel = rest.dot(&perp).abs() / (rest.norm() * perp.norm());
    assert!(rel < 1e-8 || perp.norm() == 0.0, "{rel}");

    // small lambda: direction approaches the mean value gradient
    let tiny = TrainConfig { lambda: 1e-9, ..cfg.clone() };
    let g = combined_value_gradient(pair, &batch, &tiny).unwrap();
    assert!(rel_error(&g, &lin, 1e-12) < 1e-6);
}

#[test]
fn training_is_deterministic_and_logs_every_100_steps() {
    let ds = toy_dataset();
    let cfg = TrainConfig { steps: 300, hidden_widths: vec![16, 16], ..TrainConfig::default() };
    let a = train(&cfg, &ds).unwrap();
    let b = train(&cfg, &ds).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.iter().map(|r| r.step).collect::<Vec<_>>(), vec![100, 200, 300]);
    assert_eq!(a.state.value_params, b.state.value_params);
    assert_eq!(a.state.policy_params, b.state.policy_params);
    for r in &a.log {
        assert!(r.cos_phi_mean >= -1.0 && r.cos_phi_mean <= 1.0);
        assert!(r.psi_mean.is_finite() && r.bc_weight_mean >= 0.0);
    }
    // a different training seed changes the run; the dataset is untouched
    let c = train(&TrainConfig { seed: 1, ..cfg }, &ds).unwrap();
    assert_ne!(a.state.value_params, c.state.value_params);
}

#[test]
fn all_modes_train_without_blowing_up() {
    let ds = toy_dataset();
    for mode in [GradMode::TrueGrad, GradMode::SemiGrad, GradMode::Orthogonal] {
        for conj in [ConjugateMode::Unconstrained, ConjugateMode::Nonneg] {
            let cfg = TrainConfig {
                steps: 200,
                hidden_widths: vec![16, 16],
                grad_mode: mode,
                conjugate_mode: conj,
                ..TrainConfig::default()
            };
            let out = train(&cfg, &ds).unwrap();
            assert!(out.state.value_params.is_finite());
        }
    }
    let spec = GridSpec::default();
    assert!(spec.validate().is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_is_orthogonal_and_complete(
        pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..40)
    ) {
        let (b, f): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (b, f) = (ParamVector::from_vec(b), ParamVector::from_vec(f));
        let p = project(&b, &f).unwrap();
        if f.norm_sq() < 1e-12 {
            prop_assert_eq!(p.as_slice(), b.as_slice());
        } else {
            prop_assert!(p.dot(&f).abs() <= 1e-8 * p.norm() * f.norm() + 1e-9);
            let c = b.dot(&f) / f.norm_sq();
            for i in 0..b.len() {
                prop_assert!((p[i] + c * f[i] - b[i]).abs() <= 1e-10 * b.norm().max(1.0));
            }
            // idempotent
            let pp = project(&p, &f).unwrap();
            for i in 0..p.len() {
                prop_assert!((pp[i] - p[i]).abs() <= 1e-9 * p.norm().max(1.0));
            }
        }
    }
}
