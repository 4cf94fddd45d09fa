use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proxy_latent::classifiers::{svm_accuracy, train_svm, SvmConfig};
use proxy_latent::metrics::dci::{dci, dci_scores, DciConfig, ImportanceMatrix};
use proxy_latent::metrics::lasso::{lasso_fit, soft_threshold, LassoOptions};
use proxy_latent::metrics::{separability, SeparabilityConfig};
use proxy_latent::{Execution, LabeledLatentDataset, LatentSpace, Provenance, Tensor2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Walsh function `k` on `n = 2^m` points: `(-1)^{popcount(k & i)}`.
fn walsh(k: usize, i: usize) -> f64 {
    if (k & i).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

#[test]
fn lasso_on_orthonormal_design_is_the_soft_threshold() {
    let n = 32;
    let d = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z: Vec<Vec<f64>> = (1..=d).map(|k| (0..n).map(|i| walsh(k, i)).collect()).collect();
    for alpha in [0.0, 0.05, 0.3, 0.8] {
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let ols: Vec<f64> = z
            .iter()
            .map(|col| col.iter().zip(&y).map(|(a, b)| a * (b - y_mean)).sum::<f64>() / n as f64)
            .collect();

        let x = Tensor2::new(n, d, (0..n).flat_map(|i| z.iter().map(move |c| c[i])).collect()).unwrap();
        let fit = lasso_fit(&x, &y, &LassoOptions { alpha, ..Default::default() }).unwrap();
        for j in 0..d {
            assert!((fit.coef[j] - soft_threshold(ols[j], alpha)).abs() < 1e-8, "α={alpha} j={j}");
        }
        assert!((fit.intercept - y_mean).abs() < 1e-8);

        // shifted and rescaled columns give the same standardized solution
        let scales: Vec<f64> = (0..d).map(|j| 0.5 + j as f64).collect();
        let shifts: Vec<f64> = (0..d).map(|j| j as f64 - 2.5).collect();
        let x2 = Tensor2::new(
            n,
            d,
            (0..n)
                .flat_map(|i| (0..d).map(|j| scales[j] * z[j][i] + shifts[j]).collect::<Vec<_>>())
                .collect(),
        )
        .unwrap();
        let fit2 = lasso_fit(&x2, &y, &LassoOptions { alpha, ..Default::default() }).unwrap();
        let raw = fit2.raw_coef();
        let mut intercept = y_mean;
        for j in 0..d {
            let b = soft_threshold(ols[j], alpha);
            assert!((fit2.coef[j] - b).abs() < 1e-8);
            assert!((raw[j] - b / scales[j]).abs() < 1e-8);
            intercept -= b / scales[j] * shifts[j];
        }
        assert!((fit2.intercept - intercept).abs() < 1e-8);
    }
}

#[test]
fn unregularized_lasso_is_least_squares() {
    let n = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = 0.3 * a + rng.sample::<f64, _>(StandardNormal);
        rows.push(vec![2.0 * a + 1.0, b - 0.5]);
        y.push(1.5 * a - 0.7 * b + 0.2 + 0.1 * rng.sample::<f64, _>(StandardNormal));
    }
    let x = Tensor2::from_rows(&rows).unwrap();
    let fit = lasso_fit(&x, &y, &LassoOptions { alpha: 0.0, ..Default::default() }).unwrap();
    assert!(fit.converged);

    let design = DMatrix::from_fn(n, 3, |r, c| if c == 0 { 1.0 } else { rows[r][c - 1] });
    let target = DVector::from_vec(y);
    let gram = design.transpose() * &design;
    let beta = gram.lu().solve(&(design.transpose() * target)).unwrap();
    let raw = fit.raw_coef();
    assert!((fit.intercept - beta[0]).abs() < 1e-6, "{} vs {}", fit.intercept, beta[0]);
    assert!((raw[0] - beta[1]).abs() < 1e-6);
    assert!((raw[1] - beta[2]).abs() < 1e-6);
}

#[test]
fn lasso_objective_never_increases_between_sweeps() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, d) = (120, 10);
    let base: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let data: Vec<f64> = (0..n * d)
        .map(|i| base[i / d] * (i % d) as f64 * 0.2 + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let x = Tensor2::new(n, d, data).unwrap();
    let y: Vec<f64> = base.iter().map(|b| f64::from(*b > 0.0)).collect();
    for alpha in [0.0, 0.01, 0.05, 0.2] {
        let opts = LassoOptions {
            alpha,
            track_objective: true,
            ..Default::default()
        };
        let fit = lasso_fit(&x, &y, &opts).unwrap();
        assert!(fit.objective_trace.len() >= 2);
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "α={alpha}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn one_hot_and_uniform_importance() {
    let id = ImportanceMatrix::new(4, 4, (0..16).map(|i| f64::from(i % 5 == 0)).collect()).unwrap();
    let s = dci_scores(&id);
    assert_eq!((s.disentanglement, s.completeness), (1.0, 1.0));
    let uni = ImportanceMatrix::new(4, 6, vec![0.7; 24]).unwrap();
    let s = dci_scores(&uni);
    assert!(s.disentanglement.abs() < 1e-12 && s.completeness.abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dci_is_invariant_to_global_rescaling(
        entries in proptest::collection::vec(0.0f64..5.0, 12),
        c in 1e-3f64..1e3,
    ) {
        let r = ImportanceMatrix::new(3, 4, entries).unwrap();
        let a = dci_scores(&r);
        let b = dci_scores(&r.scaled(c).unwrap());
        prop_assert!((a.disentanglement - b.disentanglement).abs() < 1e-12);
        prop_assert!((a.completeness - b.completeness).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a.disentanglement));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a.completeness));
    }
}

fn axis_dataset(n: usize, d: usize, k: usize, seed: u64) -> LabeledLatentDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = Tensor2::new(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let labels = (0..n).flat_map(|r| (0..k).map(|i| u8::from(codes.get(r, i) >= 0.0)).collect::<Vec<_>>()).collect();
    let names = (0..k).map(|i| format!("axis{i}")).collect();
    LabeledLatentDataset::new(codes, labels, names, Provenance::Synthetic, Some(seed)).unwrap()
}

#[test]
fn axis_aligned_space_is_disentangled_and_complete() {
    let data = axis_dataset(2000, 8, 4, 4);
    let (rep, r) = dci(&data, LatentSpace::Original, &DciConfig::default(), Execution::default()).unwrap();
    assert!(rep.disentanglement >= 0.95, "{rep:?}");
    assert!(rep.completeness >= 0.95, "{rep:?}");
    assert!(rep.informativeness <= 0.01, "{rep:?}");
    for k in 0..4 {
        let best = (0..8).max_by(|&a, &b| r.get(k, a).total_cmp(&r.get(k, b))).unwrap();
        assert_eq!(best, k);
    }
}

/// Points at least one unit from the line `n·x + b = 0`, labelled by side.
fn margin_one_points(normal: [f64; 2], bias: f64, count: usize, seed: u64) -> (Tensor2, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    while rows.len() < count {
        let p = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let s = normal[0] * p[0] + normal[1] * p[1] + bias;
        if s.abs() >= 1.0 {
            rows.push(p.to_vec());
            labels.push(u8::from(s > 0.0));
        }
    }
    (Tensor2::from_rows(&rows).unwrap(), labels)
}

fn hinge_objective(x: &Tensor2, y: &[u8], v: [f64; 2], b: f64, lambda: f64) -> f64 {
    let hinge: f64 = (0..x.rows())
        .map(|r| {
            let t = if y[r] == 1 { 1.0 } else { -1.0 };
            (1.0 - t * (v[0] * x.get(r, 0) + v[1] * x.get(r, 1) + b)).max(0.0)
        })
        .sum();
    0.5 * lambda * (v[0] * v[0] + v[1] * v[1]) + hinge / x.rows() as f64
}

/// Coarse grid then a fine grid around the coarse winner.
fn grid_minimum(x: &Tensor2, y: &[u8], lambda: f64) -> f64 {
    let mut best = (f64::INFINITY, [0.0, 0.0], 0.0);
    let search = |center: ([f64; 2], f64), half: f64, steps: i32, best: &mut (f64, [f64; 2], f64)| {
        let h = half / steps as f64;
        for i in -steps..=steps {
            for j in -steps..=steps {
                for k in -steps..=steps {
                    let v = [center.0[0] + i as f64 * h, center.0[1] + j as f64 * h];
                    let b = center.1 + k as f64 * h;
                    let f = hinge_objective(x, y, v, b, lambda);
                    if f < best.0 {
                        *best = (f, v, b);
                    }
                }
            }
        }
    };
    search(([0.0, 0.0], 0.0), 3.0, 30, &mut best);
    let coarse = (best.1, best.2);
    search(coarse, 0.1, 20, &mut best);
    best.0
}

#[test]
fn svm_objective_is_near_the_grid_optimum() {
    let (x, y) = margin_one_points([0.6, 0.8], 0.3, 1000, 5);
    for lambda in [0.3, 0.1, 0.03] {
        let h = train_svm(&x, &y, 0, &SvmConfig { lambda, ..Default::default() }).unwrap();
        let got = h.objective(&x, &y, lambda);
        let oracle = grid_minimum(&x, &y, lambda);
        assert!(got <= oracle * 1.05, "λ={lambda}: svm {got} vs grid {oracle}");
    }
}

#[test]
fn svm_recovers_the_separating_direction() {
    for (seed, angle) in [(6u64, 0.3f64), (7, 2.0), (8, -1.1)] {
        let normal = [angle.cos(), angle.sin()];
        let (x, y) = margin_one_points(normal, -0.4, 400, seed);
        let h = train_svm(&x, &y, 0, &SvmConfig { seed, ..Default::default() }).unwrap();
        let u = h.unit_normal().unwrap();
        let cos = u[0] * normal[0] + u[1] * normal[1];
        assert!(cos.abs() >= 0.99, "angle {angle}: cosine {cos}");
        assert_eq!(svm_accuracy(&h, &x, &y).unwrap(), 1.0);
    }
}

#[test]
fn random_labels_sit_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, d, k) = (2000, 8, 4);
    let codes = Tensor2::new(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let labels = (0..n * k).map(|_| u8::from(rng.random_bool(0.5))).collect();
    let data =
        LabeledLatentDataset::new(codes, labels, (0..k).map(|i| format!("r{i}")).collect(), Provenance::Synthetic, None)
            .unwrap();
    let rep = separability(&data, LatentSpace::Original, &SeparabilityConfig::default(), Execution::default()).unwrap();
    assert!((rep.mean - 0.5).abs() <= 0.05, "{rep:?}");
}

#[test]
fn separability_is_deterministic_and_mode_independent() {
    let data = axis_dataset(800, 6, 3, 10);
    let cfg = SeparabilityConfig::default();
    let a = separability(&data, LatentSpace::Original, &cfg, Execution::Sequential).unwrap();
    let b = separability(&data, LatentSpace::Original, &cfg, Execution::Parallel).unwrap();
    let c = separability(&data, LatentSpace::Original, &cfg, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(b, c);
    assert!(a.min <= a.mean && a.mean <= a.max);
}

