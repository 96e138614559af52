//! Discrete probability measures on a box in R^d.
//!
//! A [`DiscreteMeasure`] is an ordered list of atoms with non-negative
//! weights summing to one. Duplicate atoms are kept as separate entries.
//! All sums run left to right in stored atom order so that reported values
//! are bitwise reproducible.

use std::fmt::Write as _;

use rand::Rng;

use crate::{Error, Result};

/// Absolute tolerance on the total mass of a probability measure.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Axis-aligned box `[lower, upper]` in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidBox("dimension must be positive".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidBox(format!(
                    "axis {k}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Euclidean length of the main diagonal.
    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    /// Clamp `x` into the box in place.
    pub fn project(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// `n` points drawn independently and uniformly from the box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> PointSet {
        let d = self.dim();
        let mut coords = Vec::with_capacity(n * d);
        for _ in 0..n {
            for k in 0..d {
                coords.push(rng.gen_range(self.lower[k]..=self.upper[k]));
            }
        }
        PointSet { dim: d, coords }
    }

    /// Cell centres of a regular grid with `n_per_axis` cells per axis.
    /// The first axis varies slowest.
    pub fn grid(&self, n_per_axis: usize) -> PointSet {
        let d = self.dim();
        let total = n_per_axis.pow(d as u32);
        let mut coords = Vec::with_capacity(total * d);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            for k in 0..d {
                let h = (self.upper[k] - self.lower[k]) / n_per_axis as f64;
                coords.push(self.lower[k] + (idx[k] as f64 + 0.5) * h);
            }
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < n_per_axis {
                    break;
                }
                idx[k] = 0;
            }
        }
        PointSet { dim: d, coords }
    }
}

/// Ordered list of points in R^d, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if coords.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: coords.len() % dim,
            });
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let dim = points.first().map(|p| p.as_ref().len()).unwrap_or(0);
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn point_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    /// Concatenation of two point sets of the same dimension.
    pub fn concat(&self, other: &PointSet) -> Result<PointSet> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Ok(PointSet {
            dim: self.dim,
            coords,
        })
    }
}

/// Weighted point cloud representing a probability measure.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: PointSet,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from raw data without touching the weights.
    /// Only structural checks are performed; use [`DiscreteMeasure::validate`]
    /// for the probability-measure invariants.
    pub fn from_raw(points: PointSet, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if weights.is_empty() {
            return Err(Error::ZeroMass);
        }
        Ok(Self { points, weights })
    }

    /// Builds a probability measure, rejecting negative weights and
    /// dividing once by the total mass.
    pub fn new(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::from_points(PointSet::new(dim, coords)?, weights)
    }

    pub fn from_points(points: PointSet, weights: Vec<f64>) -> Result<Self> {
        let mut m = Self::from_raw(points, weights)?;
        for (index, &w) in m.weights.iter().enumerate() {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::NegativeWeight { index, weight: w });
            }
        }
        let total = seq_sum(m.weights.iter().copied());
        if total <= 0.0 {
            return Err(Error::ZeroMass);
        }
        m.weights.iter_mut().for_each(|w| *w /= total);
        Ok(m)
    }

    pub fn uniform(points: PointSet) -> Result<Self> {
        let n = points.len();
        Self::from_points(points, vec![1.0; n])
    }

    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::new(point.len(), point.to_vec(), vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.point(i)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        seq_sum(self.weights.iter().copied())
    }

    /// Checks every probability-measure invariant against `bbox`.
    pub fn validate(&self, bbox: &BoundingBox) -> Result<&Self> {
        if self.dim() != bbox.dim() {
            return Err(Error::DimensionMismatch {
                expected: bbox.dim(),
                found: self.dim(),
            });
        }
        for (index, &w) in self.weights.iter().enumerate() {
            if !(w >= 0.0) {
                return Err(Error::NegativeWeight { index, weight: w });
            }
        }
        let sum = self.total_mass();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::WeightSumDeviation { sum });
        }
        if let Some(index) = self.points.iter().position(|p| !bbox.contains(p)) {
            return Err(Error::PointOutsideBox { index });
        }
        Ok(self)
    }

    /// True when both measures list bitwise identical atoms in the same order.
    pub fn same_support(&self, other: &DiscreteMeasure) -> bool {
        self.points == other.points
    }
}

pub(crate) fn seq_sum(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, |acc, v| acc + v)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    seq_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

fn require_same_support(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.same_support(nu) {
        Ok(())
    } else {
        Err(Error::SupportMismatch)
    }
}

/// Σ_j μ_j log(μ_j / ν_j) with 0·log 0 = 0; +∞ when some ν_j = 0 < μ_j.
pub fn kl_divergence(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    require_same_support(mu, nu)?;
    Ok(kl_weights(mu.weights(), nu.weights()))
}

/// KL divergence between two weight vectors over a common index set.
pub fn kl_weights(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return f64::INFINITY;
        }
        acc += a * (a / b).ln();
    }
    acc
}

/// Total variation norm Σ_j |μ_j − ν_j| of the difference on a common support.
pub fn tv_norm(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    require_same_support(mu, nu)?;
    Ok(seq_sum(
        mu.weights()
            .iter()
            .zip(nu.weights())
            .map(|(a, b)| (a - b).abs()),
    ))
}

/// μ ⊗ ν on R^{2d}; atom `(x_i, y_j)` sits at index `i * |ν| + j`.
pub fn product_measure(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    let d = mu.dim() + nu.dim();
    let mut coords = Vec::with_capacity(mu.len() * nu.len() * d);
    let mut weights = Vec::with_capacity(mu.len() * nu.len());
    for (x, &a) in mu.points().iter().zip(mu.weights()) {
        for (y, &b) in nu.points().iter().zip(nu.weights()) {
            coords.extend_from_slice(x);
            coords.extend_from_slice(y);
            weights.push(a * b);
        }
    }
    DiscreteMeasure::from_raw(PointSet::new(d, coords)?, weights)
}

/// Discretizes a non-negative density on the cell centres of a regular grid,
/// weights proportional to `f(node)` and normalized to one.
pub fn sample_grid_density<F>(f: F, bbox: &BoundingBox, n_per_axis: usize) -> Result<DiscreteMeasure>
where
    F: Fn(&[f64]) -> f64,
{
    if n_per_axis == 0 {
        return Err(Error::InvalidParameter("n_per_axis must be positive".into()));
    }
    let nodes = bbox.grid(n_per_axis);
    let mut weights = Vec::with_capacity(nodes.len());
    for (index, p) in nodes.iter().enumerate() {
        let w = f(p);
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::NegativeWeight { index, weight: w });
        }
        weights.push(w);
    }
    DiscreteMeasure::from_points(nodes, weights)
}

/// Parses the text measure format: one atom per line as `weight,x1,...,xd`,
/// `#` comments and blank lines skipped. Weights are renormalized.
pub fn parse_measure(text: &str) -> Result<DiscreteMeasure> {
    let (points, weights) = parse_columns(text)?;
    DiscreteMeasure::from_points(points, weights)
}

/// Parses the same format without renormalizing, for validation of raw files.
pub fn parse_measure_raw(text: &str) -> Result<DiscreteMeasure> {
    let (points, weights) = parse_columns(text)?;
    DiscreteMeasure::from_raw(points, weights)
}

fn parse_columns(text: &str) -> Result<(PointSet, Vec<f64>)> {
    let mut dim: Option<usize> = None;
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = line
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    msg: format!("{s:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "expected weight followed by at least one coordinate".into(),
            });
        }
        let d = fields.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected {expected} coordinates, found {d}"),
                })
            }
            _ => {}
        }
        weights.push(fields[0]);
        coords.extend_from_slice(&fields[1..]);
    }
    let dim = dim.ok_or(Error::ZeroMass)?;
    Ok((PointSet::new(dim, coords)?, weights))
}

/// Serializes a measure in the text format with 17 significant digits.
pub fn format_measure(m: &DiscreteMeasure) -> String {
    format_point_values(m.points(), m.weights())
}

/// Same layout as the measure format with `values` in the first column.
/// Used for potential dumps.
pub fn format_point_values(points: &PointSet, values: &[f64]) -> String {
    let mut out = String::new();
    for (p, v) in points.iter().zip(values) {
        let _ = write!(out, "{}", fmt17(*v));
        for c in p {
            let _ = write!(out, ",{}", fmt17(*c));
        }
        out.push('\n');
    }
    out
}

/// 17 significant digits; round-trips every finite f64.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(points: &[f64], weights: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(1, points.to_vec(), weights.to_vec()).unwrap()
    }

    fn raw1(points: &[f64], weights: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::from_raw(PointSet::new(1, points.to_vec()).unwrap(), weights.to_vec())
            .unwrap()
    }

    #[test]
    fn validate_examples() {
        let unit = BoundingBox::cube(1, 0.0, 1.0).unwrap();
        assert!(m1(&[0.0, 1.0], &[0.5, 0.5]).validate(&unit).is_ok());
        assert!(matches!(
            raw1(&[0.0, 1.0], &[0.5, 0.6]).validate(&unit),
            Err(Error::WeightSumDeviation { .. })
        ));
        assert!(matches!(
            raw1(&[0.0, 1.0], &[-0.1, 1.1]).validate(&unit),
            Err(Error::NegativeWeight { index: 0, .. })
        ));
        assert!(matches!(
            m1(&[0.0, 1.5], &[0.5, 0.5]).validate(&unit),
            Err(Error::PointOutsideBox { index: 1 })
        ));
        let square = BoundingBox::cube(2, 0.0, 1.0).unwrap();
        assert!(matches!(
            m1(&[0.0], &[1.0]).validate(&square),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn constructor_renormalizes_and_rejects_negative() {
        let m = m1(&[0.0, 1.0], &[1.0, 3.0]);
        assert_eq!(m.weights(), &[0.25, 0.75]);
        assert!(DiscreteMeasure::new(1, vec![0.0], vec![-1.0]).is_err());
        assert!(matches!(
            DiscreteMeasure::new(1, vec![0.0, 1.0], vec![0.0, 0.0]),
            Err(Error::ZeroMass)
        ));
    }

    #[test]
    fn duplicates_are_kept() {
        let m = m1(&[0.5, 0.5], &[1.0, 1.0]);
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn box_rejects_degenerate() {
        assert!(BoundingBox::new(vec![0.0], vec![0.0]).is_err());
        assert!(BoundingBox::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(BoundingBox::new(vec![], vec![]).is_err());
        let b = BoundingBox::cube(2, -1.0, 1.0).unwrap();
        assert!((b.diameter() - 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn kl_examples() {
        let mu = m1(&[0.0, 1.0], &[0.5, 0.5]);
        let nu = m1(&[0.0, 1.0], &[0.25, 0.75]);
        assert_eq!(kl_divergence(&mu, &mu).unwrap(), 0.0);
        // 0.5 ln 2 + 0.5 ln(2/3), evaluated independently.
        assert!((kl_divergence(&mu, &nu).unwrap() - 0.143_841_036_225_890_1).abs() < 1e-12);
        let a = m1(&[0.0, 1.0], &[1.0, 0.0]);
        let b = m1(&[0.0, 1.0], &[0.0, 1.0]);
        assert_eq!(kl_divergence(&a, &b).unwrap(), f64::INFINITY);
        assert_eq!(kl_divergence(&b, &b).unwrap(), 0.0);
        let other = m1(&[0.0, 0.5], &[0.5, 0.5]);
        assert!(matches!(kl_divergence(&mu, &other), Err(Error::SupportMismatch)));
    }

    #[test]
    fn tv_examples() {
        let mu = m1(&[0.0, 1.0], &[0.5, 0.5]);
        let nu = m1(&[0.0, 1.0], &[0.25, 0.75]);
        assert_eq!(tv_norm(&mu, &mu).unwrap(), 0.0);
        assert_eq!(tv_norm(&mu, &nu).unwrap(), 0.5);
        let a = m1(&[0.0, 1.0], &[1.0, 0.0]);
        let b = m1(&[0.0, 1.0], &[0.0, 1.0]);
        assert_eq!(tv_norm(&a, &b).unwrap(), 2.0);
        let other = m1(&[0.0, 0.5], &[0.5, 0.5]);
        assert!(tv_norm(&mu, &other).is_err());
    }

    #[test]
    fn product_examples() {
        let p = product_measure(&m1(&[0.0], &[1.0]), &m1(&[1.0], &[1.0])).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.point(0), &[0.0, 1.0]);
        assert_eq!(p.weights(), &[1.0]);

        let u = m1(&[0.0, 1.0], &[1.0, 1.0]);
        let p = product_measure(&u, &u).unwrap();
        assert_eq!(p.weights(), &[0.25; 4]);

        let mu = m1(&[0.0, 1.0], &[0.3, 0.7]);
        let nu = m1(&[0.0, 1.0], &[0.5, 0.5]);
        let p = product_measure(&mu, &nu).unwrap();
        let expected = [0.15, 0.15, 0.35, 0.35];
        for (w, e) in p.weights().iter().zip(expected) {
            assert!((w - e).abs() < 1e-15);
        }
        assert_eq!(p.point(1), &[0.0, 1.0]);
        assert_eq!(p.point(2), &[1.0, 0.0]);
        assert!((p.total_mass() - 1.0).abs() < WEIGHT_SUM_TOL);
    }

    #[test]
    fn grid_sampling() {
        let unit = BoundingBox::cube(2, 0.0, 1.0).unwrap();
        let m = sample_grid_density(|_| 3.0, &unit, 2).unwrap();
        assert_eq!(m.len(), 4);
        assert!(m.weights().iter().all(|&w| w == 0.25));
        assert_eq!(m.point(1), &[0.25, 0.75]);

        let half = sample_grid_density(|x| if x[0] < 0.5 { 1.0 } else { 0.0 }, &unit, 4).unwrap();
        for (p, &w) in half.points().iter().zip(half.weights()) {
            let expected = if p[0] < 0.5 { 1.0 / 8.0 } else { 0.0 };
            assert_eq!(w, expected);
        }

        assert!(matches!(
            sample_grid_density(|_| 0.0, &unit, 3),
            Err(Error::ZeroMass)
        ));

        let sq = BoundingBox::cube(2, -1.0, 1.0).unwrap();
        let g = sample_grid_density(|x| (-4.5 * (x[0] * x[0] + x[1] * x[1])).exp(), &sq, 90).unwrap();
        assert_eq!(g.len(), 8100);
        assert!(g.validate(&sq).is_ok());
    }

    #[test]
    fn text_format_roundtrip() {
        let m = m1(&[0.1, 0.2, 0.3], &[1.0, 2.0, 3.0]);
        let text = format!("# comment\n\n{}", format_measure(&m));
        let back = parse_measure(&text).unwrap();
        assert_eq!(back, m);
        let raw = parse_measure_raw("2,0.5\n2,0.25\n").unwrap();
        assert_eq!(raw.weights(), &[2.0, 2.0]);
        assert!(parse_measure("1,0.5\n1,0.5,0.5\n").is_err());
        assert!(parse_measure("abc,1\n").is_err());
    }
}
