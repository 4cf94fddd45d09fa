use nalgebra::DMatrix;
use proptest::prelude::*;
use proxy_latent::autodiff::{Eager, Graph, Tape};
use proxy_latent::flow::{self, Parity};
use proxy_latent::{Execution, FlowModel, Tensor2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_codes(rows: usize, dim: usize, seed: u64) -> Tensor2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor2::new(rows, dim, (0..rows * dim).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
}

fn numerical_logdet(model: &FlowModel, w: &[f64]) -> f64 {
    let d = w.len();
    let h = 1e-5;
    let mut jac = DMatrix::<f64>::zeros(d, d);
    for c in 0..d {
        let mut up = w.to_vec();
        up[c] += h;
        let mut down = w.to_vec();
        down[c] -= h;
        let (yu, _) = model.forward(&Tensor2::row_vector(&up)).unwrap();
        let (yd, _) = model.forward(&Tensor2::row_vector(&down)).unwrap();
        for r in 0..d {
            jac[(r, c)] = (yu.get(0, r) - yd.get(0, r)) / (2.0 * h);
        }
    }
    jac.determinant().abs().ln()
}

#[test]
fn random_models_invert_and_match_jacobian_volume() {
    for seed in 0..100u64 {
        let dim = if seed % 2 == 0 { 6 } else { 32 };
        let layers = 1 + (seed as usize / 2) % 4;
        let model = FlowModel::init_random(dim, layers, 16, seed, 0.5).unwrap();
        let w = random_codes(5, dim, seed + 1000);
        let (y, logdet) = model.forward(&w).unwrap();
        let back = model.inverse(&y).unwrap();
        let err = back.max_abs_diff(&w);
        assert!(err < 1e-6, "seed {seed}: round trip error {err:e}");
        if dim == 6 {
            for r in 0..w.rows() {
                let num = numerical_logdet(&model, w.row(r));
                let rel = (num - logdet[r]).abs() / logdet[r].abs().max(1e-12);
                assert!(rel < 1e-3, "seed {seed} row {r}: analytic {} numerical {num}", logdet[r]);
            }
        }
    }
}

#[test]
fn d32_round_trip_is_tight() {
    let model = FlowModel::init_random(32, 3, 32, 9, 0.5).unwrap();
    let w = random_codes(64, 32, 4);
    let (y, _) = model.forward(&w).unwrap();
    assert!(model.inverse(&y).unwrap().max_abs_diff(&w) < 1e-8);
}

#[test]
fn inverse_pass_volume_is_consistent() {
    let model = FlowModel::init_random(8, 4, 12, 21, 0.8).unwrap();
    let w = random_codes(10, 8, 2);
    let (y, fwd) = model.forward(&w).unwrap();
    let (_, inv) = model.inverse_with_logdet(&y).unwrap();
    for (a, b) in fwd.iter().zip(&inv) {
        assert!((a - b).abs() < 1e-9);
    }
    let bound = model.bind(&mut Eager, |_, t| t);
    let (_, raw) = flow::inverse_on(&mut Eager, &bound, &y).unwrap();
    for (a, b) in fwd.iter().zip(raw.data()) {
        assert!((a + b).abs() < 1e-9, "inverse-pass logdet {b} vs forward {a}");
    }
}

#[test]
fn fresh_flow_is_exact_identity() {
    let model = FlowModel::init(32, 3, 32, 77).unwrap();
    let w = random_codes(20, 32, 3);
    let (y, logdet) = model.forward(&w).unwrap();
    assert_eq!(y, w);
    assert!(logdet.iter().all(|&v| v == 0.0));
    assert_eq!(model.inverse(&w).unwrap(), w);
}

#[test]
fn parities_alternate_through_the_stack() {
    let model = FlowModel::init(10, 5, 4, 0).unwrap();
    for (i, layer) in model.layers().iter().enumerate() {
        assert_eq!(layer.parity, Parity::for_layer(i));
    }
    assert_ne!(Parity::for_layer(0), Parity::for_layer(1));
}

/// `Σ T(w) ⊙ P + Σ logdet`; checked against finite differences in every
/// parameter.
#[test]
fn scalar_of_forward_has_exact_parameter_gradient() {
    let model = FlowModel::init_random(6, 2, 5, 31, 0.6).unwrap();
    let w = random_codes(3, 6, 8);
    let probe = random_codes(3, 6, 9);
    let eval = |m: &FlowModel| {
        let (y, ld) = m.forward(&w).unwrap();
        y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>() + ld.iter().sum::<f64>()
    };

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, |t, v| t.parameter(v));
    let x = tape.constant(w.clone());
    let (y, ld) = flow::forward_on(&mut tape, &bound, &x).unwrap();
    let p = tape.constant(probe.clone());
    let yp = tape.hadamard(&y, &p).unwrap();
    let a = tape.sum_all(&yp).unwrap();
    let b = tape.sum_all(&ld).unwrap();
    let root = tape.add(&a, &b).unwrap();
    let grads = tape.backward(root).unwrap();
    let mut analytic = Vec::new();
    for (node, t) in bound.nodes().zip(model.tensors()) {
        match grads.get(*node) {
            Some(g) => analytic.extend_from_slice(g.data()),
            None => analytic.extend(std::iter::repeat_n(0.0, t.len())),
        }
    }

    let base = model.flat_params();
    let h = 1e-5;
    for i in 0..base.len() {
        let mut m = model.clone();
        let mut p = base.clone();
        p[i] += h;
        m.set_flat_params(&p).unwrap();
        let up = eval(&m);
        p[i] -= 2.0 * h;
        m.set_flat_params(&p).unwrap();
        let down = eval(&m);
        let fd = (up - down) / (2.0 * h);
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-8);
        assert!(rel < 1e-4, "param {i}: analytic {} numeric {fd}", analytic[i]);
    }
}

#[test]
fn batch_evaluation_agrees_across_execution_modes() {
    let model = FlowModel::init_random(16, 3, 16, 5, 0.4).unwrap();
    let w = random_codes(700, 16, 6);
    let seq = model.forward_batch(&w, Execution::Sequential).unwrap();
    let par = model.forward_batch(&w, Execution::Parallel).unwrap();
    assert_eq!(seq, par);
    assert_eq!(seq, model.forward(&w).unwrap().0);
    let back = model.inverse_batch(&seq, Execution::Parallel).unwrap();
    assert!(back.max_abs_diff(&w) < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bijective_for_any_seeded_model(
        seed in any::<u64>(),
        half in 1usize..6,
        layers in 1usize..5,
        bound in 0.01f64..1.0,
        scale in 0.1f64..4.0,
    ) {
        let dim = 2 * half;
        let model = FlowModel::init_random(dim, layers, 8, seed, bound).unwrap();
        let w = random_codes(4, dim, seed ^ 0xabc).map(|v| v * scale);
        let (y, fwd) = model.forward(&w).unwrap();
        let (back, inv) = model.inverse_with_logdet(&y).unwrap();
        prop_assert!(back.max_abs_diff(&w) < 1e-6);
        for (a, b) in fwd.iter().zip(&inv) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_at_initialization(seed in any::<u64>(), half in 1usize..8, layers in 1usize..4) {
        let dim = 2 * half;
        let model = FlowModel::init(dim, layers, dim, seed).unwrap();
        let w = random_codes(3, dim, seed);
        let (y, ld) = model.forward(&w).unwrap();
        prop_assert_eq!(y, w);
        prop_assert!(ld.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flat_parameters_round_trip(seed in any::<u64>()) {
        let model = FlowModel::init_random(6, 2, 4, seed, 0.3).unwrap();
        let mut other = FlowModel::init(6, 2, 4, 0).unwrap();
        other.set_flat_params(&model.flat_params()).unwrap();
        prop_assert_eq!(other, model);
    }
}
