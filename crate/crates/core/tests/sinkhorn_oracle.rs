use otkit::divergence::sinkhorn_divergence;
use otkit::exact_ot::exact_ot;
use otkit::kernels::{CostSpec, KernelSpec};
use otkit::measures::{kl_weights, BoundingBox, DiscreteMeasure};
use otkit::sinkhorn::{ot_infinity, solve, SinkhornConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain matrix scaling, u ← a / Kv, v ← b / Kᵀu, run to a fixed count.
/// Returns Σ cπ + ε KL(π | a⊗b).
fn scaling_oracle(c: &[Vec<f64>], a: &[f64], b: &[f64], eps: f64) -> (f64, Vec<Vec<f64>>) {
    let (n, m) = (a.len(), b.len());
    let k: Vec<Vec<f64>> = c.iter().map(|r| r.iter().map(|x| (-x / eps).exp()).collect()).collect();
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    for _ in 0..20000 {
        for i in 0..n {
            u[i] = a[i] / (0..m).map(|j| k[i][j] * v[j]).sum::<f64>();
        }
        for j in 0..m {
            v[j] = b[j] / (0..n).map(|i| k[i][j] * u[i]).sum::<f64>();
        }
    }
    let pi: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| u[i] * k[i][j] * v[j]).collect()).collect();
    let flat: Vec<f64> = pi.iter().flatten().copied().collect();
    let prod: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
    let transport: f64 = (0..n).map(|i| (0..m).map(|j| c[i][j] * pi[i][j]).sum::<f64>()).sum();
    (transport + eps * kl_weights(&flat, &prod), pi)
}

fn instance(seed: u64, n: usize, m: usize) -> (BoundingBox, DiscreteMeasure, DiscreteMeasure) {
    let b = BoundingBox::cube(2, 0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = DiscreteMeasure::from_points(b.sample_uniform(&mut rng, n), (0..n).map(|_| rng.gen_range(0.1..1.0)).collect()).unwrap();
    let nu = DiscreteMeasure::from_points(b.sample_uniform(&mut rng, m), (0..m).map(|_| rng.gen_range(0.1..1.0)).collect()).unwrap();
    (b, mu, nu)
}

#[test]
fn matches_matrix_scaling() {
    for (seed, eps) in [(1, 0.1), (2, 0.5), (3, 2.0), (4, 10.0)] {
        let (b, mu, nu) = instance(seed, 6, 5);
        let cost = CostSpec::abs_distance(&b).unwrap();
        let c: Vec<Vec<f64>> = mu
            .points()
            .iter()
            .map(|x| nu.points().iter().map(|y| cost.eval(x, y)).collect())
            .collect();
        let (oracle, pi) = scaling_oracle(&c, mu.weights(), nu.weights(), eps);
        let s = solve(&cost, &mu, &nu, &SinkhornConfig::new(eps)).unwrap();
        assert!(s.converged);
        assert!((s.value - oracle).abs() <= 1e-10, "eps={eps}: {} vs {oracle}", s.value);
        let plan = s.plan.entries();
        for i in 0..mu.len() {
            for j in 0..nu.len() {
                assert!((plan[[i, j]] - pi[i][j]).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn value_lies_between_exact_and_independent_coupling() {
    for seed in 0..10 {
        let (b, mu, nu) = instance(100 + seed, 7, 4);
        let cost = CostSpec::abs_distance(&b).unwrap();
        let lo = exact_ot(&cost, &mu, &nu).unwrap().value;
        let hi = ot_infinity(&cost, &mu, &nu).ot_inf;
        for eps in [0.01, 0.1, 1.0, 10.0] {
            let v = solve(&cost, &mu, &nu, &SinkhornConfig::new(eps).with_max_iter(100000)).unwrap().value;
            assert!(lo - 1e-10 <= v && v <= hi + 1e-10, "{lo} <= {v} <= {hi}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn divergence_vanishes_on_identical_inputs(seed in any::<u64>(), eps in 0.05f64..50.0) {
        let (b, mu, _) = instance(seed, 6, 1);
        let k = KernelSpec::gaussian(0.5, &b).unwrap();
        for cost in [CostSpec::abs_distance(&b).unwrap(), CostSpec::negated_kernel(k)] {
            let s = sinkhorn_divergence(&cost, &mu, &mu, &SinkhornConfig::new(eps)).unwrap();
            prop_assert!(s.s_eps.abs() <= 1e-9, "{}", s.s_eps);
        }
    }

    #[test]
    fn divergence_is_symmetric_and_nonnegative(seed in any::<u64>(), eps in 0.05f64..50.0) {
        let (b, mu, nu) = instance(seed, 5, 4);
        let cost = CostSpec::abs_distance(&b).unwrap();
        let cfg = SinkhornConfig::new(eps).with_max_iter(100000);
        let ab = sinkhorn_divergence(&cost, &mu, &nu, &cfg).unwrap().s_eps;
        let ba = sinkhorn_divergence(&cost, &nu, &mu, &cfg).unwrap().s_eps;
        prop_assert!(ab >= -1e-9);
        prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab.abs()));
    }

    #[test]
    fn plan_marginals_hold(seed in any::<u64>(), eps in 0.01f64..100.0) {
        let (b, mu, nu) = instance(seed, 8, 6);
        let cost = CostSpec::abs_distance(&b).unwrap();
        let s = solve(&cost, &mu, &nu, &SinkhornConfig::new(eps).with_max_iter(200000)).unwrap();
        prop_assert!(s.converged);
        prop_assert!(s.plan.marginal_error(mu.weights(), nu.weights()) <= 1e-8);
        prop_assert!(s.duality_gap <= 1e-8);
    }
}
