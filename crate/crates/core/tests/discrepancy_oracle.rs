use std::f64::consts::TAU;

use otkit::discrepancy::{discrepancy, spectral_discrepancy, witness_eval, SpectralKernel};
use otkit::kernels::{Kernel, KernelSpec};
use otkit::measures::{kl_divergence, tv_norm, BoundingBox, DiscreteMeasure, PointSet};
use proptest::prelude::*;

/// Σ_{|k| ≤ N} α_|k| e^{2πik(x−y)}, summed term by term.
fn fourier(alpha: &[f64], x: f64, y: f64) -> f64 {
    alpha[0] + 2.0 * (1..alpha.len()).map(|k| alpha[k] * (TAU * k as f64 * (x - y)).cos()).sum::<f64>()
}

fn gram_d2(alpha: &[f64], mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let mut atoms: Vec<(f64, f64)> = mu.points().iter().zip(mu.weights()).map(|(p, w)| (p[0], *w)).collect();
    atoms.extend(nu.points().iter().zip(nu.weights()).map(|(p, w)| (p[0], -*w)));
    let mut s = 0.0;
    for (x, a) in &atoms {
        for (y, b) in &atoms {
            s += a * b * fourier(alpha, *x, *y);
        }
    }
    s
}

fn measure(d: usize) -> impl Strategy<Value = DiscreteMeasure> {
    (1usize..8).prop_flat_map(move |n| {
        (prop::collection::vec(0.0f64..1.0, n * d), prop::collection::vec(0.01f64..1.0, n))
            .prop_map(move |(c, w)| DiscreteMeasure::new(d, c, w).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectral_matches_fourier_sum(
        alpha in prop::collection::vec(0.0f64..2.0, 1..10),
        mu in measure(1), nu in measure(1),
    ) {
        let sk = SpectralKernel::new(alpha.clone()).unwrap();
        let oracle = gram_d2(&alpha, &mu, &nu);
        let s = spectral_discrepancy(&sk, &mu, &nu).unwrap().squared;
        prop_assert!((s - oracle).abs() <= 1e-10 * (1.0 + oracle.abs()), "{s} vs {oracle}");
    }

    #[test]
    fn gaussian_discrepancy_is_a_metric(a in measure(2), b in measure(2), c in measure(2)) {
        let k = KernelSpec::gaussian(0.3, &BoundingBox::cube(2, 0.0, 1.0).unwrap()).unwrap();
        let ab = discrepancy(&k, &a, &b).unwrap().value;
        let bc = discrepancy(&k, &b, &c).unwrap().value;
        let ac = discrepancy(&k, &a, &c).unwrap().value;
        prop_assert!(discrepancy(&k, &a, &a).unwrap().value <= 1e-7);
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert!((ab - discrepancy(&k, &b, &a).unwrap().value).abs() <= 1e-12);
    }

    #[test]
    fn witness_integrates_to_discrepancy(a in measure(2), b in measure(2)) {
        let k = KernelSpec::gaussian(0.3, &BoundingBox::cube(2, 0.0, 1.0).unwrap()).unwrap();
        let d = discrepancy(&k, &a, &b).unwrap().value;
        prop_assume!(d > 1e-4);
        let wa = witness_eval(&k, &a, &b, a.points()).unwrap();
        let wb = witness_eval(&k, &a, &b, b.points()).unwrap();
        let pairing: f64 = wa.iter().zip(a.weights()).map(|(w, m)| w * m).sum::<f64>()
            - wb.iter().zip(b.weights()).map(|(w, m)| w * m).sum::<f64>();
        prop_assert!((pairing - d).abs() <= 1e-9 * (1.0 + d));
    }

    #[test]
    fn pinsker_sharp_form(
        wa in prop::collection::vec(0.001f64..1.0, 2..12),
        seed in prop::collection::vec(0.001f64..1.0, 12),
    ) {
        let n = wa.len();
        let pts = PointSet::new(1, (0..n).map(|i| i as f64).collect()).unwrap();
        let mu = DiscreteMeasure::from_points(pts.clone(), wa).unwrap();
        let nu = DiscreteMeasure::from_points(pts, seed[..n].to_vec()).unwrap();
        let kl = kl_divergence(&mu, &nu).unwrap();
        let tv = tv_norm(&mu, &nu).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!(tv * tv <= 2.0 * kl + 1e-14, "tv={tv} kl={kl}");
    }
}

#[test]
fn literal_pinsker_fails_on_two_points() {
    let pts = PointSet::new(1, vec![0.0, 1.0]).unwrap();
    let mu = DiscreteMeasure::from_points(pts.clone(), vec![0.5, 0.5]).unwrap();
    let nu = DiscreteMeasure::from_points(pts, vec![0.25, 0.75]).unwrap();
    let kl = kl_divergence(&mu, &nu).unwrap();
    let tv = tv_norm(&mu, &nu).unwrap();
    let expect = 0.5 * (2.0f64).ln() + 0.5 * (2.0f64 / 3.0).ln();
    assert!((kl - expect).abs() <= 1e-15);
    assert!((tv - 0.5).abs() <= 1e-15);
    assert!(tv * tv > kl);
    assert!(tv * tv <= 2.0 * kl);
}

#[test]
fn spectral_kernel_matches_its_series() {
    let sk = SpectralKernel::new(vec![0.5, 1.0, 0.25]).unwrap();
    for (x, y) in [(0.0, 0.0), (0.1, 0.7), (0.9, 0.2)] {
        assert!((sk.eval(&[x], &[y]) - fourier(&[0.5, 1.0, 0.25], x, y)).abs() <= 1e-13);
    }
}
