mod common;

use common::{naive_forward, reference_adam};
use odice::netcore::{
    adam_step, forward, forward_batch, grad_value, per_sample_grad_dots, read_checkpoint,
    write_checkpoint, Activation, AdamState, NetworkArchitecture, ParamVector,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn archs() -> Vec<NetworkArchitecture> {
    vec![
        NetworkArchitecture::new(2, vec![8], Activation::Relu, 1).unwrap(),
        NetworkArchitecture::new(2, vec![16, 16], Activation::Relu, 1).unwrap(),
        NetworkArchitecture::new(2, vec![12, 6], Activation::Tanh, 1).unwrap(),
        NetworkArchitecture::new(3, vec![5, 5, 5], Activation::Tanh, 1).unwrap(),
    ]
}

fn random_input(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn grad_value_matches_central_differences() {
    common::check_gradients(100).unwrap();
}

#[test]
fn forward_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut archs = archs();
    archs.push(NetworkArchitecture::new(2, vec![7, 3], Activation::Relu, 4).unwrap());
    for arch in archs {
        for _ in 0..20 {
            let params = arch.init_params(&mut rng);
            let rows: Vec<Vec<f64>> = (0..5).map(|_| random_input(&mut rng, arch.input_dim)).collect();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let x = Array2::from_shape_vec((5, arch.input_dim), flat).unwrap();
            let batch = forward_batch(&params, &arch, x.view()).unwrap();
            for (i, row) in rows.iter().enumerate() {
                let want = naive_forward(&params, &arch, row);
                let single = forward(&params, &arch, row).unwrap();
                for k in 0..arch.output_dim {
                    assert!((batch.output()[[i, k]] - want[k]).abs() < 1e-12);
                    assert!((single[k] - want[k]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn grad_dots_match_explicit_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let arch = NetworkArchitecture::new(2, vec![10, 10], Activation::Relu, 1).unwrap();
    let params = arch.init_params(&mut rng);
    let xs: Vec<Vec<f64>> = (0..6).map(|_| random_input(&mut rng, 2)).collect();
    let ys: Vec<Vec<f64>> = (0..6).map(|_| random_input(&mut rng, 2)).collect();
    let to_arr = |v: &Vec<Vec<f64>>| Array2::from_shape_vec((6, 2), v.iter().flatten().copied().collect()).unwrap();
    let dots = per_sample_grad_dots(&params, &arch, to_arr(&xs).view(), to_arr(&ys).view()).unwrap();
    for i in 0..6 {
        let gx = grad_value(&params, &arch, &xs[i]).unwrap();
        let gy = grad_value(&params, &arch, &ys[i]).unwrap();
        assert!((dots[i].cross - gx.dot(&gy)).abs() < 1e-10);
        assert!((dots[i].x_norm_sq - gx.norm_sq()).abs() < 1e-10);
        assert!((dots[i].y_norm_sq - gy.norm_sq()).abs() < 1e-10);
    }
}

#[test]
fn adam_matches_reference_over_100_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let dim = 37;
    let theta: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grads: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let want = reference_adam(&theta, &grads, 1e-3);

    let mut params = ParamVector::from_vec(theta.clone());
    let mut state = AdamState::new(dim);
    for g in &grads {
        state.step(&mut params, &ParamVector::from_vec(g.clone()), 1e-3).unwrap();
    }
    assert_eq!(state.step, 100);
    for (a, b) in params.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    // the functional form agrees with the in-place one
    let (mut p2, mut s2) = (ParamVector::from_vec(theta), AdamState::new(dim));
    for g in &grads {
        let (np, ns) = adam_step(&s2, &p2, &ParamVector::from_vec(g.clone()), 1e-3).unwrap();
        p2 = np;
        s2 = ns;
    }
    assert_eq!(p2, params);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn checkpoint_round_trips(
        widths in prop::collection::vec(1usize..6, 1..4),
        tanh in any::<bool>(),
        out in 1usize..5,
        seed in any::<u64>(),
    ) {
        let act = if tanh { Activation::Tanh } else { Activation::Relu };
        let arch = NetworkArchitecture::new(2, widths, act, out).unwrap();
        let params = arch.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &arch, &params).unwrap();
        let (a2, p2) = read_checkpoint(&buf[..]).unwrap();
        prop_assert_eq!(&a2, &arch);
        prop_assert_eq!(p2.as_slice(), params.as_slice());
        let mut again = Vec::new();
        write_checkpoint(&mut again, &a2, &p2).unwrap();
        prop_assert_eq!(&again, &buf);
        // any strict prefix is rejected
        let cut = (seed as usize) % buf.len();
        prop_assert!(read_checkpoint(&buf[..cut]).is_err());
    }

    #[test]
    fn ema_stays_between_endpoints(
        pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..20),
        tau in 0.0f64..=1.0,
    ) {
        let (t, o): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let out = odice::netcore::ema_update(&ParamVector::from_vec(t.clone()), &ParamVector::from_vec(o.clone()), tau).unwrap();
        for i in 0..t.len() {
            let (lo, hi) = (t[i].min(o[i]), t[i].max(o[i]));
            prop_assert!(out[i] >= lo - 1e-12 && out[i] <= hi + 1e-12);
        }
    }
}
