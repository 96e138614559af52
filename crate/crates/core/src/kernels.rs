//! Kernels and transport costs.
//!
//! Every radial kernel is `K(x,y) = h(‖x−y‖)` for a scalar profile `h`.
//! The distance is evaluated once per call so `K(x,y) == K(y,x)` holds
//! bitwise. Lipschitz constants are the maximum of `|h'|` over
//! `[0, diam(box)]` on a fine grid, inflated by 5%.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::measures::{BoundingBox, PointSet};
use crate::{Error, Result};

const LIPSCHITZ_GRID: usize = 10_000;
const LIPSCHITZ_INFLATION: f64 = 1.05;

/// Anything that can be evaluated as a symmetric kernel.
pub trait Kernel: Sync {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelVariant {
    /// `exp(−r²/c²)`
    Gaussian { c: f64 },
    /// `(c² + r²)^(−p)`
    InverseMultiquadric { c: f64, p: f64 },
    /// `(1 − r)₊^p`
    WendlandPower { p: f64 },
    /// `−r`
    NegativeDistance,
    /// `C − r`
    ShiftedNegativeDistance { shift: f64 },
    /// `−√(c² + r²)`
    SmoothedNegativeDistance { c: f64 },
    /// `K(x,y) − K(u,y) − K(x,u) + K(u,u)` for an order-1 cpd base kernel.
    CpdShifted {
        base: Box<KernelSpec>,
        anchor: Vec<f64>,
    },
}

impl KernelVariant {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Gaussian { .. } => "Gaussian",
            Self::InverseMultiquadric { .. } => "InverseMultiquadric",
            Self::WendlandPower { .. } => "WendlandPower",
            Self::NegativeDistance => "NegativeDistance",
            Self::ShiftedNegativeDistance { .. } => "ShiftedNegativeDistance",
            Self::SmoothedNegativeDistance { .. } => "SmoothedNegativeDistance",
            Self::CpdShifted { .. } => "CpdShifted",
        }
    }

    fn profile(&self, r: f64) -> f64 {
        match *self {
            Self::Gaussian { c } => (-(r * r) / (c * c)).exp(),
            Self::InverseMultiquadric { c, p } => (c * c + r * r).powf(-p),
            Self::WendlandPower { p } => {
                if r < 1.0 {
                    (1.0 - r).powf(p)
                } else {
                    0.0
                }
            }
            Self::NegativeDistance => -r,
            Self::ShiftedNegativeDistance { shift } => shift - r,
            Self::SmoothedNegativeDistance { c } => -(c * c + r * r).sqrt(),
            Self::CpdShifted { .. } => unreachable!("CpdShifted is not radial"),
        }
    }

    /// `h'(r)`, one-sided from the right at kinks.
    fn profile_derivative(&self, r: f64) -> f64 {
        match *self {
            Self::Gaussian { c } => -2.0 * r / (c * c) * (-(r * r) / (c * c)).exp(),
            Self::InverseMultiquadric { c, p } => -2.0 * p * r * (c * c + r * r).powf(-p - 1.0),
            Self::WendlandPower { p } => {
                if r < 1.0 {
                    -p * (1.0 - r).powf(p - 1.0)
                } else {
                    0.0
                }
            }
            Self::NegativeDistance | Self::ShiftedNegativeDistance { .. } => -1.0,
            Self::SmoothedNegativeDistance { c } => -r / (c * c + r * r).sqrt(),
            Self::CpdShifted { .. } => unreachable!("CpdShifted is not radial"),
        }
    }

    /// Whether `h` is differentiable at `r = 0` as a function of `x − y`.
    fn smooth_at_origin(&self) -> bool {
        match *self {
            Self::Gaussian { .. }
            | Self::InverseMultiquadric { .. }
            | Self::SmoothedNegativeDistance { .. } => true,
            Self::WendlandPower { .. }
            | Self::NegativeDistance
            | Self::ShiftedNegativeDistance { .. } => false,
            Self::CpdShifted { .. } => unreachable!("CpdShifted is not radial"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    variant: KernelVariant,
    lipschitz: f64,
}

impl KernelSpec {
    /// Validates the variant parameters and computes the Lipschitz bound on `bbox`.
    pub fn new(variant: KernelVariant, bbox: &BoundingBox) -> Result<Self> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        let lipschitz = match &variant {
            KernelVariant::Gaussian { c } => {
                positive("c", *c)?;
                radial_lipschitz(&variant, bbox.diameter())
            }
            KernelVariant::InverseMultiquadric { c, p } => {
                positive("c", *c)?;
                positive("p", *p)?;
                radial_lipschitz(&variant, bbox.diameter())
            }
            KernelVariant::WendlandPower { p } => {
                let min_p = (bbox.dim() / 2 + 1) as f64;
                if !(*p >= min_p) {
                    return Err(Error::InvalidParameter(format!(
                        "WendlandPower needs p >= {min_p} in dimension {}, got {p}",
                        bbox.dim()
                    )));
                }
                radial_lipschitz(&variant, bbox.diameter())
            }
            KernelVariant::NegativeDistance => radial_lipschitz(&variant, bbox.diameter()),
            KernelVariant::ShiftedNegativeDistance { shift } => {
                positive("C", *shift)?;
                radial_lipschitz(&variant, bbox.diameter())
            }
            KernelVariant::SmoothedNegativeDistance { c } => {
                positive("c", *c)?;
                radial_lipschitz(&variant, bbox.diameter())
            }
            KernelVariant::CpdShifted { base, anchor } => {
                if anchor.len() != bbox.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: bbox.dim(),
                        found: anchor.len(),
                    });
                }
                // x enters through K(x,y) and K(x,u).
                2.0 * base.lipschitz
            }
        };
        Ok(Self { variant, lipschitz })
    }

    pub fn gaussian(c: f64, bbox: &BoundingBox) -> Result<Self> {
        Self::new(KernelVariant::Gaussian { c }, bbox)
    }

    pub fn negative_distance(bbox: &BoundingBox) -> Result<Self> {
        Self::new(KernelVariant::NegativeDistance, bbox)
    }

    /// `C − ‖x−y‖` with the default `C = 2·diam(box)`.
    pub fn shifted_negative_distance(bbox: &BoundingBox) -> Result<Self> {
        Self::new(
            KernelVariant::ShiftedNegativeDistance {
                shift: 2.0 * bbox.diameter(),
            },
            bbox,
        )
    }

    pub fn smoothed_negative_distance(c: f64, bbox: &BoundingBox) -> Result<Self> {
        Self::new(KernelVariant::SmoothedNegativeDistance { c }, bbox)
    }

    /// Anchor shift of `base`; the anchor defaults to the lower box corner.
    pub fn cpd_shifted(base: KernelSpec, anchor: Option<Vec<f64>>, bbox: &BoundingBox) -> Result<Self> {
        let anchor = anchor.unwrap_or_else(|| bbox.lower().to_vec());
        Self::new(
            KernelVariant::CpdShifted {
                base: Box::new(base),
                anchor,
            },
            bbox,
        )
    }

    pub fn variant(&self) -> &KernelVariant {
        &self.variant
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Strictly positive definite variants, plus anchor-shifted ones.
    /// `ShiftedNegativeDistance` counts as positive definite for a large
    /// enough shift; see [`empirical_pd_check`].
    pub fn is_positive_definite(&self) -> bool {
        !self.is_cpd_order_one()
    }

    /// Conditionally positive definite of order 1 but not positive definite.
    pub fn is_cpd_order_one(&self) -> bool {
        matches!(
            self.variant,
            KernelVariant::NegativeDistance | KernelVariant::SmoothedNegativeDistance { .. }
        )
    }

    /// `∇_y K(x, y)`.
    pub fn eval_gradient(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; y.len()];
        self.add_gradient(x, y, 1.0, &mut g)?;
        Ok(g)
    }

    /// `out += scale · ∇_y K(x, y)`.
    pub fn add_gradient(&self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        match &self.variant {
            KernelVariant::CpdShifted { base, anchor } => {
                base.add_gradient(x, y, scale, out)?;
                base.add_gradient(anchor, y, -scale, out)
            }
            v => {
                let r = dist(x, y);
                if r == 0.0 {
                    return if v.smooth_at_origin() {
                        Ok(())
                    } else {
                        Err(Error::NonDifferentiablePoint)
                    };
                }
                let f = scale * v.profile_derivative(r) / r;
                for ((o, yi), xi) in out.iter_mut().zip(y).zip(x) {
                    *o += f * (yi - xi);
                }
                Ok(())
            }
        }
    }
}

impl Kernel for KernelSpec {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.variant {
            KernelVariant::CpdShifted { base, anchor } => {
                let u = anchor.as_slice();
                let kxy = base.eval(x, y);
                let kuy = base.eval(u, y);
                let kxu = base.eval(x, u);
                let kuu = base.eval(u, u);
                // Averaging the two groupings keeps the value bitwise symmetric
                // and exactly zero when x or y equals the anchor.
                0.5 * (((kxy - kuy) - (kxu - kuu)) + ((kxy - kxu) - (kuy - kuu)))
            }
            v => v.profile(dist(x, y)),
        }
    }
}

fn radial_lipschitz(variant: &KernelVariant, diameter: f64) -> f64 {
    max_abs_derivative(|r| variant.profile_derivative(r), diameter)
}

fn max_abs_derivative(deriv: impl Fn(f64) -> f64, diameter: f64) -> f64 {
    let mut best: f64 = 0.0;
    for k in 0..=LIPSCHITZ_GRID {
        let r = diameter * k as f64 / LIPSCHITZ_GRID as f64;
        best = best.max(deriv(r).abs());
    }
    best * LIPSCHITZ_INFLATION
}

pub(crate) fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .fold(0.0, |acc, v| acc + v)
        .sqrt()
}

/// Transport cost `c(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    /// `‖x − y‖`
    AbsDistance,
    /// `‖x − y‖^p`, `p ≥ 1`
    PowerDistance { p: f64 },
    /// `−K(x, y)`; may be negative.
    NegatedKernel(KernelSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    kind: CostKind,
    lipschitz: f64,
}

impl CostSpec {
    pub fn new(kind: CostKind, bbox: &BoundingBox) -> Result<Self> {
        let lipschitz = match &kind {
            CostKind::AbsDistance => max_abs_derivative(|_| 1.0, bbox.diameter()),
            CostKind::PowerDistance { p } => {
                if !(*p >= 1.0) || !p.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "PowerDistance needs a finite p >= 1, got {p}"
                    )));
                }
                let p = *p;
                max_abs_derivative(|r| p * r.powf(p - 1.0), bbox.diameter())
            }
            CostKind::NegatedKernel(k) => k.lipschitz(),
        };
        Ok(Self { kind, lipschitz })
    }

    pub fn abs_distance(bbox: &BoundingBox) -> Result<Self> {
        Self::new(CostKind::AbsDistance, bbox)
    }

    pub fn negated_kernel(k: KernelSpec) -> Self {
        let lipschitz = k.lipschitz();
        Self {
            kind: CostKind::NegatedKernel(k),
            lipschitz,
        }
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.kind {
            CostKind::AbsDistance => dist(x, y),
            CostKind::PowerDistance { p } => dist(x, y).powf(*p),
            CostKind::NegatedKernel(k) => -k.eval(x, y),
        }
    }

    /// `out += scale · ∇_y c(x, y)`.
    pub fn add_gradient(&self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        match &self.kind {
            CostKind::NegatedKernel(k) => k.add_gradient(x, y, -scale, out),
            CostKind::AbsDistance | CostKind::PowerDistance { .. } => {
                let p = match self.kind {
                    CostKind::PowerDistance { p } => p,
                    _ => 1.0,
                };
                let r = dist(x, y);
                if r == 0.0 {
                    return if p > 1.0 {
                        Ok(())
                    } else {
                        Err(Error::NonDifferentiablePoint)
                    };
                }
                let f = scale * p * r.powf(p - 2.0);
                for ((o, yi), xi) in out.iter_mut().zip(y).zip(x) {
                    *o += f * (yi - xi);
                }
                Ok(())
            }
        }
    }

    /// The kernel `K` with `c = −K`, when the cost has that form.
    /// `‖x−y‖` maps to `NegativeDistance`.
    pub fn as_kernel(&self, bbox: &BoundingBox) -> Option<KernelSpec> {
        match &self.kind {
            CostKind::NegatedKernel(k) => Some(k.clone()),
            CostKind::AbsDistance => KernelSpec::negative_distance(bbox).ok(),
            CostKind::PowerDistance { p } if *p == 1.0 => KernelSpec::negative_distance(bbox).ok(),
            CostKind::PowerDistance { .. } => None,
        }
    }

    /// Row-major cost matrix `C[i][j] = c(xs[i], ys[j])`.
    pub fn matrix(&self, xs: &PointSet, ys: &PointSet) -> Array2<f64> {
        pairwise(xs, ys, |x, y| self.eval(x, y))
    }
}

/// Gram matrix `G[i][j] = K(xs[i], ys[j])`. Rows may be filled in
/// parallel; entries within a row are evaluated left to right.
pub fn gram<K: Kernel + ?Sized>(k: &K, xs: &PointSet, ys: &PointSet) -> Array2<f64> {
    pairwise(xs, ys, |x, y| k.eval(x, y))
}

fn pairwise(xs: &PointSet, ys: &PointSet, f: impl Fn(&[f64], &[f64]) -> f64 + Sync) -> Array2<f64> {
    let (n, m) = (xs.len(), ys.len());
    let mut data = vec![0.0; n * m];
    if m > 0 {
        let fill = |(i, row): (usize, &mut [f64])| {
            let x = xs.point(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = f(x, ys.point(j));
            }
        };
        if n * m >= 1 << 14 {
            data.par_chunks_mut(m).enumerate().for_each(fill);
        } else {
            data.chunks_mut(m).enumerate().for_each(fill);
        }
    }
    Array2::from_shape_vec((n, m), data).expect("shape matches buffer")
}

/// Smallest eigenvalue of the Gram matrix on `n` seeded uniform points in `bbox`.
pub fn empirical_pd_check<K: Kernel + ?Sized>(k: &K, n: usize, seed: u64, bbox: &BoundingBox) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParameter("empirical_pd_check needs n >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = bbox.sample_uniform(&mut rng, n);
    let g = gram(k, &pts, &pts);
    let m = DMatrix::from_fn(n, n, |i, j| g[[i, j]]);
    let eig = SymmetricEigen::new(m);
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}
