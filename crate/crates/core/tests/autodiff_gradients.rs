use proxy_latent::autodiff::{forward_op, Eager, Graph, Op, Tape};
use proxy_latent::Tensor2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-8;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

#[derive(Clone, Copy)]
enum Domain {
    Any,
    Positive,
    AwayFromZero,
}

fn sample(rng: &mut ChaCha8Rng, rows: usize, cols: usize, domain: Domain) -> Tensor2 {
    let data = (0..rows * cols)
        .map(|_| match domain {
            Domain::Any => rng.random_range(-2.0..2.0),
            Domain::Positive => rng.random_range(0.3..3.0),
            Domain::AwayFromZero => {
                let m: f64 = rng.random_range(0.1..2.0);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            }
        })
        .collect();
    Tensor2::new(rows, cols, data).unwrap()
}

/// `Σ (op(inputs) ⊙ probe)`, a scalar with a generic cotangent.
fn probed(op: Op, inputs: &[Tensor2], probe: &Tensor2) -> f64 {
    let refs: Vec<&Tensor2> = inputs.iter().collect();
    let out = forward_op(op, &refs).unwrap();
    out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
}

fn check_op(op: Op, shapes: &[(usize, usize)], domain: Domain, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor2> = shapes.iter().map(|&(r, c)| sample(&mut rng, r, c, domain)).collect();
    let refs: Vec<&Tensor2> = inputs.iter().collect();
    let out_shape = forward_op(op, &refs).unwrap().shape();
    let probe = sample(&mut rng, out_shape.0, out_shape.1, Domain::Any);

    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.parameter(t.clone())).collect();
    let var_refs: Vec<_> = vars.iter().collect();
    let out = tape.apply(op, &var_refs).unwrap();
    let p = tape.constant(probe.clone());
    let prod = tape.hadamard(&out, &p).unwrap();
    let root = tape.sum_all(&prod).unwrap();
    let grads = tape.backward(root).unwrap();

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let g = grads.get(*v).expect("parameter gradient");
        assert_eq!(g.shape(), inputs[i].shape());
        for e in 0..inputs[i].len() {
            let mut up = inputs.clone();
            up[i].data_mut()[e] += H;
            let mut down = inputs.clone();
            down[i].data_mut()[e] -= H;
            let fd = (probed(op, &up, &probe) - probed(op, &down, &probe)) / (2.0 * H);
            worst = worst.max(rel_err(g.data()[e], fd));
        }
    }
    assert!(worst < REL_TOL, "{op:?} seed {seed}: max relative error {worst:e}");
}

fn cases() -> Vec<(Op, Vec<(usize, usize)>, Domain)> {
    vec![
        (Op::MatMul, vec![(3, 4), (4, 2)], Domain::Any),
        (Op::Add, vec![(3, 4), (3, 4)], Domain::Any),
        (Op::Add, vec![(3, 4), (1, 4)], Domain::Any),
        (Op::Sub, vec![(3, 4), (3, 4)], Domain::Any),
        (Op::Sub, vec![(3, 4), (1, 4)], Domain::Any),
        (Op::Hadamard, vec![(3, 4), (3, 4)], Domain::Any),
        (Op::Scale(-1.7), vec![(3, 4)], Domain::Any),
        (Op::LeakyRelu(0.01), vec![(3, 4)], Domain::AwayFromZero),
        (Op::Tanh, vec![(3, 4)], Domain::Any),
        (Op::Sigmoid, vec![(3, 4)], Domain::Any),
        (Op::LogSigmoid, vec![(3, 4)], Domain::Any),
        (Op::Exp, vec![(3, 4)], Domain::Any),
        (Op::Log, vec![(3, 4)], Domain::Positive),
        (Op::Abs, vec![(3, 4)], Domain::AwayFromZero),
        (Op::SumAll, vec![(3, 4)], Domain::Any),
        (Op::SumRows, vec![(3, 4)], Domain::Any),
        (Op::ConcatCols, vec![(3, 2), (3, 1), (3, 3)], Domain::Any),
        (Op::SplitCols { start: 1, end: 3 }, vec![(3, 4)], Domain::Any),
    ]
}

#[test]
fn every_op_matches_central_differences_on_fifty_inputs() {
    for (op, shapes, domain) in cases() {
        for seed in 0..50 {
            check_op(op, &shapes, domain, seed);
        }
    }
}

#[test]
fn taped_forward_equals_eager_forward() {
    for (op, shapes, domain) in cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inputs: Vec<Tensor2> = shapes.iter().map(|&(r, c)| sample(&mut rng, r, c, domain)).collect();
        let mut eager = Eager;
        let e_nodes: Vec<Tensor2> = inputs.clone();
        let e_refs: Vec<&Tensor2> = e_nodes.iter().collect();
        let e_out = eager.apply(op, &e_refs).unwrap();
        let mut tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.parameter(t.clone())).collect();
        let var_refs: Vec<_> = vars.iter().collect();
        let t_out = tape.apply(op, &var_refs).unwrap();
        let t_val = tape.value(&t_out);
        assert_eq!(t_val.shape(), e_out.shape());
        for (a, b) in t_val.data().iter().zip(e_out.data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{op:?}");
        }
    }
}

/// `sum(log(sigmoid(tanh(A·B) + c) ⊙ exp(d)) - |A|·e)` over five parameters.
fn composite<G: Graph>(g: &mut G, p: &[G::Node; 5]) -> G::Node {
    let ab = g.matmul(&p[0], &p[1]).unwrap();
    let t = g.tanh(&ab).unwrap();
    let tc = g.add(&t, &p[2]).unwrap();
    let s = g.sigmoid(&tc).unwrap();
    let l = g.log(&s).unwrap();
    let ed = g.exp(&p[3]).unwrap();
    let m = g.hadamard(&l, &ed).unwrap();
    let a = g.abs(&p[0]).unwrap();
    let ae = g.matmul(&a, &p[4]).unwrap();
    let ae = g.leaky_relu(&ae, 0.01).unwrap();
    let ms = g.sum_rows(&m).unwrap();
    let diff = g.sub(&ms, &ae).unwrap();
    g.sum_all(&diff).unwrap()
}

#[test]
fn random_five_parameter_graph_matches_central_differences() {
    let shapes = [(3, 4), (4, 2), (1, 2), (3, 2), (4, 1)];
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let params: Vec<Tensor2> = shapes.iter().map(|&(r, c)| sample(&mut rng, r, c, Domain::AwayFromZero)).collect();
        let eval = |ps: &[Tensor2]| {
            let arr: [Tensor2; 5] = std::array::from_fn(|i| ps[i].clone());
            composite(&mut Eager, &arr).get(0, 0)
        };
        let mut tape = Tape::new();
        let vars: [_; 5] = std::array::from_fn(|i| tape.parameter(params[i].clone()));
        let root = composite(&mut tape, &vars);
        assert_eq!(tape.value(&root).get(0, 0).to_bits(), eval(&params).to_bits());
        let grads = tape.backward(root).unwrap();
        for i in 0..5 {
            let g = grads.get(vars[i]).unwrap();
            for e in 0..params[i].len() {
                let mut up = params.clone();
                up[i].data_mut()[e] += H;
                let mut down = params.clone();
                down[i].data_mut()[e] -= H;
                let fd = (eval(&up) - eval(&down)) / (2.0 * H);
                let err = rel_err(g.data()[e], fd);
                assert!(err < REL_TOL, "seed {seed} param {i} entry {e}: {err:e}");
            }
        }
    }
}

#[test]
fn repeated_backward_is_bitwise_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params: Vec<Tensor2> = [(3, 4), (4, 2), (1, 2), (3, 2), (4, 1)]
        .iter()
        .map(|&(r, c)| sample(&mut rng, r, c, Domain::AwayFromZero))
        .collect();
    let run = || {
        let mut tape = Tape::new();
        let vars: [_; 5] = std::array::from_fn(|i| tape.parameter(params[i].clone()));
        let root = composite(&mut tape, &vars);
        let grads = tape.backward(root).unwrap();
        vars.iter()
            .flat_map(|v| grads.get(*v).unwrap().data().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<u64>>()
    };
    assert_eq!(run(), run());
}
