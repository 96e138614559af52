//! Kernel discrepancies (maximum mean discrepancy) between discrete measures.
//!
//! For a kernel `K` and probability measures μ, ν
//!
//! ```text
//! D_K²(μ,ν) = ∫∫K d(μ⊗μ) + ∫∫K d(ν⊗ν) − 2∫∫K d(μ⊗ν)
//! ```
//!
//! which is the squared RKHS norm of `∫K(x,·) d(μ−ν)(x)`. The normalized
//! embedding difference is the witness function attaining the supremum in
//! the dual form. On the 1-torus, kernels given by Fourier coefficients
//! admit the spectral form `Σ_k α_k |μ̂_k − ν̂_k|²`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::kernels::{gram, Kernel};
use crate::measures::{dot, seq_sum, DiscreteMeasure, PointSet};
use crate::{Error, Result};

/// Below this discrepancy the witness function is undefined.
pub const WITNESS_MIN_DISCREPANCY: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscrepancyResult {
    /// `√max(squared, 0)`
    pub value: f64,
    /// Raw double-sum value; may be slightly negative from cancellation.
    pub squared: f64,
    /// RKHS norm of the unnormalized witness; equals `value`.
    pub witness_norm: f64,
}

impl DiscrepancyResult {
    fn from_squared(squared: f64) -> Self {
        let value = squared.max(0.0).sqrt();
        Self {
            value,
            squared,
            witness_norm: value,
        }
    }
}

fn check_dims(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    Ok(())
}

/// `aᵀ G b` with sequential accumulation.
fn bilinear<K: Kernel + ?Sized>(k: &K, xs: &PointSet, a: &[f64], ys: &PointSet, b: &[f64]) -> f64 {
    let g = gram(k, xs, ys);
    seq_sum(
        g.outer_iter()
            .zip(a)
            .map(|(row, ai)| ai * dot(row.as_slice().expect("standard layout"), b)),
    )
}

/// `∫∫K d(μ⊗ν)`.
pub fn cross_energy<K: Kernel + ?Sized>(k: &K, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    bilinear(k, mu.points(), mu.weights(), nu.points(), nu.weights())
}

pub fn discrepancy<K: Kernel + ?Sized>(k: &K, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<DiscrepancyResult> {
    check_dims(mu, nu)?;
    let squared = cross_energy(k, mu, mu) + cross_energy(k, nu, nu) - 2.0 * cross_energy(k, mu, nu);
    Ok(DiscrepancyResult::from_squared(squared))
}

/// `Σ_i μ_i K(x_i, x) − Σ_j ν_j K(y_j, x)` at every query point.
pub fn embedding_difference<K: Kernel + ?Sized>(
    k: &K,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    queries: &PointSet,
) -> Vec<f64> {
    queries
        .iter()
        .map(|x| {
            let a = seq_sum(mu.points().iter().zip(mu.weights()).map(|(p, w)| w * k.eval(p, x)));
            let b = seq_sum(nu.points().iter().zip(nu.weights()).map(|(p, w)| w * k.eval(p, x)));
            a - b
        })
        .collect()
}

/// Witness function `φ_K(x) = (∫K(·,x) dμ − ∫K(·,x) dν) / D_K(μ,ν)` at each query.
pub fn witness_eval<K: Kernel + ?Sized>(
    k: &K,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    queries: &PointSet,
) -> Result<Vec<f64>> {
    let d = discrepancy(k, mu, nu)?;
    if d.value <= WITNESS_MIN_DISCREPANCY {
        return Err(Error::ZeroDiscrepancy { value: d.value });
    }
    if queries.dim() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: queries.dim(),
        });
    }
    Ok(embedding_difference(k, mu, nu, queries)
        .into_iter()
        .map(|v| v / d.value)
        .collect())
}

/// Attraction–repulsion energy of the uniform measure on `positions`:
///
/// ```text
/// 1/(2M²) Σ_{i,j} K(p_i,p_j) − 1/M Σ_i Σ_a w_a K(x_a,p_i)
/// ```
///
/// This is `½D_K²(ν_p, target) − ½∫∫K d(target⊗target)`.
pub fn halftoning_energy<K: Kernel + ?Sized>(k: &K, target: &DiscreteMeasure, positions: &PointSet) -> Result<f64> {
    if positions.is_empty() {
        return Err(Error::InvalidParameter("need at least one position".into()));
    }
    if positions.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            found: positions.dim(),
        });
    }
    let m = positions.len() as f64;
    let ones = vec![1.0; positions.len()];
    let repulsion = bilinear(k, positions, &ones, positions, &ones) / (2.0 * m * m);
    let attraction = bilinear(k, target.points(), target.weights(), positions, &ones) / m;
    Ok(repulsion - attraction)
}

/// Translation-invariant kernel on the 1-torus `[0,1)` with
/// `K(x,y) = Σ_{|k|≤N} α_k e^{2πik(x−y)}`, stored as `α_0..α_N` with the
/// symmetric completion `α_{−k} = α_k` implied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralKernel {
    alpha: Vec<f64>,
}

impl SpectralKernel {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidParameter("need at least alpha_0".into()));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Fourier coefficients must be non-negative, got {a}"
            )));
        }
        Ok(Self { alpha })
    }

    /// Truncation order `N`.
    pub fn order(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn alpha(&self, k: i64) -> f64 {
        self.alpha[k.unsigned_abs() as usize]
    }

    pub fn validate(self) -> Result<Self> {
        Self::new(self.alpha)
    }
}

impl Kernel for SpectralKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let t = (x[0] - y[0]).abs();
        let mut acc = self.alpha[0];
        for (k, a) in self.alpha.iter().enumerate().skip(1) {
            acc += 2.0 * a * (2.0 * std::f64::consts::PI * k as f64 * t).cos();
        }
        acc
    }
}

/// Fourier coefficients `μ̂_k = Σ_j μ_j e^{−2πik x_j}` for `k = −N..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoeffs {
    order: usize,
    values: Vec<Complex64>,
}

impl FourierCoeffs {
    /// Direct `O(N·n)` summation; points are read modulo 1.
    pub fn of(m: &DiscreteMeasure, order: usize) -> Result<Self> {
        if m.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: m.dim(),
            });
        }
        let n = order as i64;
        let values = (-n..=n)
            .map(|k| {
                m.points()
                    .iter()
                    .zip(m.weights())
                    .fold(Complex64::new(0.0, 0.0), |acc, (x, w)| {
                        let angle = -2.0 * std::f64::consts::PI * k as f64 * x[0].rem_euclid(1.0);
                        acc + Complex64::from_polar(*w, angle)
                    })
            })
            .collect();
        Ok(Self { order, values })
    }

    pub fn get(&self, k: i64) -> Complex64 {
        self.values[(k + self.order as i64) as usize]
    }

    pub fn order(&self) -> usize {
        self.order
    }
}

pub fn spectral_discrepancy(sk: &SpectralKernel, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<DiscrepancyResult> {
    check_dims(mu, nu)?;
    let n = sk.order();
    let a = FourierCoeffs::of(mu, n)?;
    let b = FourierCoeffs::of(nu, n)?;
    let squared = seq_sum((-(n as i64)..=n as i64).map(|k| sk.alpha(k) * (a.get(k) - b.get(k)).norm_sqr()));
    Ok(DiscrepancyResult::from_squared(squared))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelSpec, KernelVariant};
    use crate::measures::BoundingBox;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m1(points: &[f64], weights: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(1, points.to_vec(), weights.to_vec()).unwrap()
    }

    fn unit() -> BoundingBox {
        BoundingBox::cube(1, 0.0, 1.0).unwrap()
    }

    fn one_minus_dist() -> KernelSpec {
        KernelSpec::new(KernelVariant::ShiftedNegativeDistance { shift: 1.0 }, &unit()).unwrap()
    }

    fn random_measure(rng: &mut ChaCha8Rng, n: usize, bbox: &BoundingBox) -> DiscreteMeasure {
        let pts = bbox.sample_uniform(rng, n);
        let w = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        DiscreteMeasure::from_points(pts, w).unwrap()
    }

    /// Brute-force quadruple loop over atom pairs, independent of `gram`.
    fn brute_squared<K: Kernel>(k: &K, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
        let mut s = 0.0;
        let signed: Vec<(&[f64], f64)> = mu
            .points()
            .iter()
            .zip(mu.weights().iter().copied())
            .chain(nu.points().iter().zip(nu.weights().iter().map(|w| -w)))
            .collect();
        for (x, a) in &signed {
            for (y, b) in &signed {
                s += a * b * k.eval(x, y);
            }
        }
        s
    }

    #[test]
    fn identical_measures_have_zero_discrepancy() {
        let mu = m1(&[0.1, 0.4, 0.8], &[1.0, 2.0, 3.0]);
        let d = discrepancy(&one_minus_dist(), &mu, &mu).unwrap();
        assert!(d.squared.abs() <= 1e-12);
        assert_eq!(d.value, d.squared.max(0.0).sqrt());
        assert!(matches!(
            witness_eval(&one_minus_dist(), &mu, &mu, mu.points()),
            Err(Error::ZeroDiscrepancy { .. })
        ));
    }

    #[test]
    fn two_diracs_under_one_minus_distance() {
        let mu = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let nu = DiscreteMeasure::dirac(&[1.0]).unwrap();
        let k = one_minus_dist();
        let d = discrepancy(&k, &mu, &nu).unwrap();
        assert_eq!(d.squared, 2.0);
        assert_eq!(d.value, 2f64.sqrt());
        assert_eq!(d.witness_norm, d.value);

        let q = PointSet::new(1, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let w = witness_eval(&k, &mu, &nu, &q).unwrap();
        for (x, v) in q.iter().zip(&w) {
            assert!((v - (1.0 - 2.0 * x[0]) / 2f64.sqrt()).abs() < 1e-15);
        }
        assert!((w[0] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((w[0] - w[3] - d.value).abs() < 1e-15);
    }

    #[test]
    fn cpd_shift_preserves_discrepancy() {
        let b = unit();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let nd = KernelSpec::negative_distance(&b).unwrap();
        let shifted = KernelSpec::cpd_shifted(nd.clone(), Some(vec![0.3]), &b).unwrap();
        for _ in 0..50 {
            let mu = random_measure(&mut rng, 6, &b);
            let nu = random_measure(&mut rng, 9, &b);
            let a = brute_squared(&nd, &mu, &nu);
            let c = brute_squared(&shifted, &mu, &nu);
            assert!((a - c).abs() < 1e-10);
            assert!((discrepancy(&nd, &mu, &nu).unwrap().squared - a).abs() < 1e-12);
            assert!((discrepancy(&shifted, &mu, &nu).unwrap().squared - c).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetry_and_positivity() {
        let b = BoundingBox::cube(2, -1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let kernels = [
            KernelSpec::gaussian(0.4, &b).unwrap(),
            KernelSpec::shifted_negative_distance(&b).unwrap(),
            KernelSpec::cpd_shifted(KernelSpec::negative_distance(&b).unwrap(), None, &b).unwrap(),
        ];
        for _ in 0..30 {
            let mu = random_measure(&mut rng, 5, &b);
            let nu = random_measure(&mut rng, 7, &b);
            for k in &kernels {
                let a = discrepancy(k, &mu, &nu).unwrap();
                let c = discrepancy(k, &nu, &mu).unwrap();
                assert!((a.value - c.value).abs() < 1e-14);
                assert!(a.squared >= -1e-10);
            }
        }
    }

    #[test]
    fn witness_pairing_equals_discrepancy() {
        let b = BoundingBox::cube(2, -1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = KernelSpec::gaussian(0.5, &b).unwrap();
        for _ in 0..20 {
            let mu = random_measure(&mut rng, 5, &b);
            let nu = random_measure(&mut rng, 4, &b);
            let d = discrepancy(&k, &mu, &nu).unwrap().value;
            let wm = witness_eval(&k, &mu, &nu, mu.points()).unwrap();
            let wn = witness_eval(&k, &mu, &nu, nu.points()).unwrap();
            let pairing = dot(&wm, mu.weights()) - dot(&wn, nu.weights());
            assert!((pairing - d).abs() < 1e-10);
        }
    }

    #[test]
    fn spectral_hand_instance() {
        let sk = SpectralKernel::new(vec![1.0, 1.0]).unwrap();
        let mu = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let nu = DiscreteMeasure::dirac(&[0.5]).unwrap();
        let s = spectral_discrepancy(&sk, &mu, &nu).unwrap();
        assert!((s.squared - 8.0).abs() < 1e-12);
        let g = discrepancy(&sk, &mu, &nu).unwrap();
        assert!((g.squared - 8.0).abs() < 1e-12);
        assert!((s.squared - g.squared).abs() < 1e-10);
        assert!(spectral_discrepancy(&sk, &mu, &mu).unwrap().squared.abs() < 1e-15);
    }

    #[test]
    fn spectral_rejects_bad_input() {
        assert!(SpectralKernel::new(vec![1.0, -0.5]).is_err());
        assert!(SpectralKernel::new(vec![]).is_err());
        let sk = SpectralKernel::new(vec![1.0]).unwrap();
        let mu = DiscreteMeasure::dirac(&[0.0, 0.0]).unwrap();
        assert!(matches!(
            spectral_discrepancy(&sk, &mu, &mu),
            Err(Error::DimensionMismatch { .. })
        ));
        let parsed: SpectralKernel = serde_json::from_str(r#"{"alpha": [1.0, 0.5, 0.25]}"#).unwrap();
        assert_eq!(parsed.order(), 2);
        assert_eq!(parsed.alpha(-2), 0.25);
    }

    #[test]
    fn fourier_coefficients_conjugate_symmetric() {
        let mu = m1(&[0.1, 0.35, 0.9], &[0.2, 0.3, 0.5]);
        let f = FourierCoeffs::of(&mu, 4).unwrap();
        assert!((f.get(0) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        for k in 1..=4 {
            assert!((f.get(-k) - f.get(k).conj()).norm() < 1e-15);
        }
    }

    #[test]
    fn halftoning_examples() {
        let b = unit();
        let k = one_minus_dist();
        let pts = PointSet::new(1, vec![0.1, 0.5, 0.7]).unwrap();
        let target = DiscreteMeasure::uniform(pts.clone()).unwrap();
        let self_energy = cross_energy(&k, &target, &target);
        let e = halftoning_energy(&k, &target, &pts).unwrap();
        assert!((e + 0.5 * self_energy).abs() < 1e-15);

        let single = PointSet::new(1, vec![0.2]).unwrap();
        let t = DiscreteMeasure::dirac(&[0.9]).unwrap();
        let e = halftoning_energy(&k, &t, &single).unwrap();
        assert!((e - (0.5 * 1.0 - (1.0 - 0.7))).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = KernelSpec::gaussian(0.3, &b).unwrap();
        for _ in 0..20 {
            let target = random_measure(&mut rng, 8, &b);
            let p = b.sample_uniform(&mut rng, 4);
            let nu = DiscreteMeasure::uniform(p.clone()).unwrap();
            let lhs = halftoning_energy(&g, &target, &p).unwrap() + 0.5 * cross_energy(&g, &target, &target);
            let rhs = 0.5 * discrepancy(&g, &nu, &target).unwrap().squared;
            assert!((lhs - rhs).abs() < 1e-12);
        }
        assert!(halftoning_energy(&g, &target, &PointSet::new(1, vec![]).unwrap()).is_err());
    }
}
