//! Log-domain Sinkhorn iterations for entropically regularized transport
//!
//! ```text
//! OT_ε(μ,ν) = min_{π ∈ Π(μ,ν)} ∫c dπ + ε KL(π, μ⊗ν)
//! ```
//!
//! The dual potentials are updated with the softmin operator
//! `T_{μ,ε}(φ)(x) = −ε log ∫ exp((φ(y) − c(x,y))/ε) dμ(y)`:
//! `φ ← T_{ν,ε}(ψ)`, `ψ ← T_{μ,ε}(φ)`, starting from `ψ = 0`. Iteration
//! stops when the oscillation norm `½(max Δψ − min Δψ)` of successive
//! updates drops below `tol · min(1, ε)`. Every exponential is taken after
//! subtracting the running maximum, so neither very small nor very large ε
//! overflows. The plan is only exponentiated once, after normalization.

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::exact_ot::TransportPlan;
use crate::kernels::CostSpec;
use crate::measures::{dot, seq_sum, BoundingBox, DiscreteMeasure, PointSet};
use crate::{Error, Result};

/// Below this many matrix entries the softmin runs on one thread.
const PARALLEL_THRESHOLD: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Tolerance on the oscillation norm of successive ψ updates, scaled by `min(1, ε)`.
    pub tol: f64,
    /// Shift the potentials so that `Σ φ_i μ_i = ½ OT_∞(μ,ν)`.
    pub normalize: bool,
}

impl SinkhornConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            max_iter: 10_000,
            tol: 1e-10,
            normalize: true,
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_normalize(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be positive".into()));
        }
        Ok(())
    }

    /// Threshold actually compared against the residual.
    pub fn effective_tol(&self) -> f64 {
        self.tol * self.epsilon.min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPair {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub epsilon: f64,
    pub normalized: bool,
}

#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub potentials: PotentialPair,
    /// `OT_ε(μ,ν) = Σ φ_i μ_i + Σ ψ_j ν_j`
    pub value: f64,
    pub plan: TransportPlan,
    pub iterations: usize,
    pub final_residual: f64,
    /// `|Σ c π + ε KL(π, μ⊗ν) − value|`
    pub duality_gap: f64,
    pub converged: bool,
    /// Oscillation norm of every update, in iteration order.
    pub residuals: Vec<f64>,
    /// `OT_∞(μ,ν) = Σ c_ij μ_i ν_j`, used for normalization.
    pub ot_inf: f64,
}

impl SinkhornSolution {
    /// Turns a flagged non-converged run into [`Error::NotConverged`].
    pub fn ensure_converged(&self, term: &str) -> Result<&Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                term: term.to_string(),
                iterations: self.iterations,
                residual: self.final_residual,
            })
        }
    }

    /// Largest ratio of successive residuals, skipping steps whose previous
    /// residual is below `floor` (round-off dominates there).
    pub fn max_contraction_ratio(&self, floor: f64) -> Option<f64> {
        self.residuals
            .windows(2)
            .filter(|w| w[0] > floor)
            .map(|w| w[1] / w[0])
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
    }

    pub fn diagnostics(&self, kappa: f64) -> SinkhornDiagnostics {
        SinkhornDiagnostics {
            epsilon: self.potentials.epsilon,
            value: self.value,
            iterations: self.iterations,
            final_residual: self.final_residual,
            duality_gap: self.duality_gap,
            kappa,
        }
    }
}

/// JSON-facing summary of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinkhornDiagnostics {
    pub epsilon: f64,
    pub value: f64,
    pub iterations: usize,
    pub final_residual: f64,
    pub duality_gap: f64,
    pub kappa: f64,
}

/// Round-off floor for residual ratios at a given ε and cost scale.
pub fn residual_noise_floor(epsilon: f64, cost_scale: f64) -> f64 {
    1e-12 * epsilon.max(1.0) * (1.0 + cost_scale)
}

/// ε → ∞ limits of the normalized potentials and of `OT_ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitPotentials {
    pub phi_inf: Vec<f64>,
    pub psi_inf: Vec<f64>,
    pub ot_inf: f64,
}

/// Contraction factor of the softmin in the oscillation norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionEstimate {
    pub lipschitz: f64,
    pub diam: f64,
    pub epsilon: f64,
    /// `1 − exp(−2 L diam / ε)`
    pub kappa: f64,
}

fn oscillation(a: &[f64], b: &[f64]) -> f64 {
    let (lo, hi) = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
    0.5 * (hi - lo)
}

/// `−ε (max_j a_j + log Σ_j w_j exp(a_j − max_j a_j))` with `a_j = (pot_j − c_j)/ε`,
/// over entries with positive weight.
#[inline]
fn softmin_row(c: &[f64], weights: &[f64], pot: &[f64], eps: f64) -> f64 {
    let mut amax = f64::NEG_INFINITY;
    for ((cj, wj), pj) in c.iter().zip(weights).zip(pot) {
        if *wj > 0.0 {
            amax = amax.max((pj - cj) / eps);
        }
    }
    let mut s = 0.0;
    for ((cj, wj), pj) in c.iter().zip(weights).zip(pot) {
        if *wj > 0.0 {
            s += wj * ((pj - cj) / eps - amax).exp();
        }
    }
    -eps * (amax + s.ln())
}

/// Applies the softmin to every row of `c` (rows are query points).
fn softmin_matrix(c: &Array2<f64>, weights: &[f64], pot: &[f64], eps: f64, out: &mut [f64]) {
    let m = c.ncols();
    let data = c.as_slice().expect("standard layout");
    if c.len() >= PARALLEL_THRESHOLD {
        out.par_iter_mut()
            .zip(data.par_chunks(m))
            .for_each(|(o, row)| *o = softmin_row(row, weights, pot, eps));
    } else {
        for (o, row) in out.iter_mut().zip(data.chunks(m)) {
            *o = softmin_row(row, weights, pot, eps);
        }
    }
}

/// `T_{m,ε}(φ)` evaluated at each query point.
pub fn softmin(cost: &CostSpec, m: &DiscreteMeasure, phi: &[f64], epsilon: f64, queries: &PointSet) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if phi.len() != m.len() {
        return Err(Error::InvalidParameter("potential length does not match support".into()));
    }
    let c = cost.matrix(queries, m.points());
    let mut out = vec![0.0; queries.len()];
    softmin_matrix(&c, m.weights(), phi, epsilon, &mut out);
    Ok(out)
}

/// `OT_∞(μ,ν)` and the limit potentials.
pub fn ot_infinity(cost: &CostSpec, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> LimitPotentials {
    let c = cost.matrix(mu.points(), nu.points());
    limits_from_matrix(&c, mu.weights(), nu.weights())
}

pub(crate) fn limits_from_matrix(c: &Array2<f64>, a: &[f64], b: &[f64]) -> LimitPotentials {
    let row_means: Vec<f64> = c
        .outer_iter()
        .map(|r| dot(r.as_slice().expect("standard layout"), b))
        .collect();
    let ot_inf = dot(&row_means, a);
    let mut col_means = vec![0.0; c.ncols()];
    for (row, ai) in c.outer_iter().zip(a) {
        for (o, v) in col_means.iter_mut().zip(row.iter()) {
            *o += ai * v;
        }
    }
    let half = 0.5 * ot_inf;
    LimitPotentials {
        phi_inf: row_means.into_iter().map(|v| v - half).collect(),
        psi_inf: col_means.into_iter().map(|v| v - half).collect(),
        ot_inf,
    }
}

/// `φ_∞(x) = Σ_j c(x, y_j) ν_j − ½ OT_∞` at arbitrary points.
pub fn limit_potential_at(cost: &CostSpec, other: &DiscreteMeasure, ot_inf: f64, queries: &PointSet) -> Vec<f64> {
    queries
        .iter()
        .map(|x| {
            seq_sum(other.points().iter().zip(other.weights()).map(|(y, w)| w * cost.eval(x, y))) - 0.5 * ot_inf
        })
        .collect()
}

pub fn contraction_estimate(cost: &CostSpec, bbox: &BoundingBox, epsilon: f64) -> ContractionEstimate {
    let lipschitz = cost.lipschitz();
    let diam = bbox.diameter();
    ContractionEstimate {
        lipschitz,
        diam,
        epsilon,
        kappa: -(-2.0 * lipschitz * diam / epsilon).exp_m1(),
    }
}

/// Largest difference quotient `|T(φ)(x₁) − T(φ)(x₂)| / ‖x₁ − x₂‖` over probe pairs.
pub fn potential_lipschitz_check(
    cost: &CostSpec,
    m: &DiscreteMeasure,
    phi: &[f64],
    epsilon: f64,
    probes: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (x1, x2) in probes {
        let q = PointSet::from_points(&[x1.as_slice(), x2.as_slice()])?;
        let t = softmin(cost, m, phi, epsilon, &q)?;
        let d = crate::kernels::dist(x1, x2);
        if d > 0.0 {
            worst = worst.max((t[0] - t[1]).abs() / d);
        }
    }
    Ok(worst)
}

pub fn solve(cost: &CostSpec, mu: &DiscreteMeasure, nu: &DiscreteMeasure, cfg: &SinkhornConfig) -> Result<SinkhornSolution> {
    solve_from(cost, mu, nu, cfg, None)
}

/// Like [`solve`] but starting from `psi0` instead of zero.
pub fn solve_from(
    cost: &CostSpec,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SinkhornConfig,
    psi0: Option<&[f64]>,
) -> Result<SinkhornSolution> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    let c = cost.matrix(mu.points(), nu.points());
    solve_matrix(&c, mu.weights(), nu.weights(), cfg, psi0)
}

/// Alternating Sinkhorn on an explicit cost matrix (`rows` ↔ `a`, `cols` ↔ `b`).
pub fn solve_matrix(
    c: &Array2<f64>,
    a: &[f64],
    b: &[f64],
    cfg: &SinkhornConfig,
    psi0: Option<&[f64]>,
) -> Result<SinkhornSolution> {
    cfg.validate()?;
    let (n, m) = c.dim();
    if a.len() != n || b.len() != m {
        return Err(Error::InvalidParameter("cost matrix does not match the weights".into()));
    }
    if let Some(p) = psi0 {
        if p.len() != m {
            return Err(Error::InvalidParameter("initial potential has the wrong length".into()));
        }
    }
    let eps = cfg.epsilon;
    let ct = c.t().as_standard_layout().into_owned();
    let mut phi = vec![0.0; n];
    let mut psi = psi0.map_or_else(|| vec![0.0; m], <[f64]>::to_vec);
    let mut next = vec![0.0; m];
    let mut residuals = Vec::new();
    let tol = cfg.effective_tol();
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        softmin_matrix(c, b, &psi, eps, &mut phi);
        softmin_matrix(&ct, a, &phi, eps, &mut next);
        let r = oscillation(&next, &psi);
        residuals.push(r);
        std::mem::swap(&mut psi, &mut next);
        if r <= tol {
            converged = true;
            break;
        }
    }
    Ok(finish(c, a, b, phi, psi, cfg, residuals, converged))
}

/// `OT_ε(μ,μ)` with the averaged update `φ ← ½(φ + T_{μ,ε}(φ))` on a single potential.
pub fn solve_symmetric(cost: &CostSpec, mu: &DiscreteMeasure, cfg: &SinkhornConfig) -> Result<SinkhornSolution> {
    let c = cost.matrix(mu.points(), mu.points());
    solve_symmetric_matrix(&c, mu.weights(), cfg, None)
}

pub fn solve_symmetric_matrix(
    c: &Array2<f64>,
    a: &[f64],
    cfg: &SinkhornConfig,
    phi0: Option<&[f64]>,
) -> Result<SinkhornSolution> {
    cfg.validate()?;
    let n = a.len();
    if c.dim() != (n, n) {
        return Err(Error::InvalidParameter("cost matrix does not match the weights".into()));
    }
    let eps = cfg.epsilon;
    let mut phi = phi0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut t = vec![0.0; n];
    let mut residuals = Vec::new();
    let tol = cfg.effective_tol();
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        softmin_matrix(c, a, &phi, eps, &mut t);
        for (ti, pi) in t.iter_mut().zip(&phi) {
            *ti = 0.5 * (*ti + pi);
        }
        let r = oscillation(&t, &phi);
        residuals.push(r);
        std::mem::swap(&mut phi, &mut t);
        if r <= tol {
            converged = true;
            break;
        }
    }
    let psi = phi.clone();
    Ok(finish(c, a, a, phi, psi, cfg, residuals, converged))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    c: &Array2<f64>,
    a: &[f64],
    b: &[f64],
    mut phi: Vec<f64>,
    mut psi: Vec<f64>,
    cfg: &SinkhornConfig,
    residuals: Vec<f64>,
    converged: bool,
) -> SinkhornSolution {
    let eps = cfg.epsilon;
    let ot_inf = limits_from_matrix(c, a, b).ot_inf;
    if cfg.normalize {
        let delta = 0.5 * ot_inf - dot(&phi, a);
        phi.iter_mut().for_each(|v| *v += delta);
        psi.iter_mut().for_each(|v| *v -= delta);
    }
    let value = dot(&phi, a) + dot(&psi, b);

    let (n, m) = c.dim();
    let mut plan = Array2::zeros((n, m));
    let mut transport = 0.0;
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..m {
            let w = a[i] * b[j];
            if w == 0.0 {
                continue;
            }
            let s = (phi[i] + psi[j] - c[[i, j]]) / eps;
            let p = w * s.exp();
            plan[[i, j]] = p;
            transport += c[[i, j]] * p;
            kl += p * s;
        }
    }
    let duality_gap = (transport + eps * kl - value).abs();
    SinkhornSolution {
        potentials: PotentialPair {
            phi,
            psi,
            epsilon: eps,
            normalized: cfg.normalize,
        },
        value,
        plan: TransportPlan::new(plan),
        iterations: residuals.len(),
        final_residual: residuals.last().copied().unwrap_or(0.0),
        duality_gap,
        converged,
        residuals,
        ot_inf,
    }
}
