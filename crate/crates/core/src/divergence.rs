//! Debiased Sinkhorn divergence
//!
//! ```text
//! S_ε(μ,ν) = OT_ε(μ,ν) − ½ OT_ε(μ,μ) − ½ OT_ε(ν,ν)
//! ```
//!
//! For `c = −K` the ε → ∞ limit is `½ D_K²(μ,ν)`, which is computed from the
//! kernel double sums rather than from a Sinkhorn run at huge ε.

use rayon::prelude::*;
use serde::Serialize;

use crate::discrepancy::{discrepancy, embedding_difference, WITNESS_MIN_DISCREPANCY};
use crate::kernels::{CostKind, CostSpec, KernelSpec};
use crate::measures::{BoundingBox, DiscreteMeasure, PointSet};
use crate::sinkhorn::{limit_potential_at, ot_infinity, solve, solve_symmetric, SinkhornConfig, SinkhornSolution};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergenceResult {
    pub s_eps: f64,
    pub ot_mu_nu: f64,
    pub ot_mu_mu: f64,
    pub ot_nu_nu: f64,
    /// `f64::INFINITY` for the ε = ∞ limit.
    pub epsilon: f64,
}

impl DivergenceResult {
    fn combine(epsilon: f64, ot_mu_nu: f64, ot_mu_mu: f64, ot_nu_nu: f64) -> Self {
        Self {
            s_eps: ot_mu_nu - 0.5 * ot_mu_mu - 0.5 * ot_nu_nu,
            ot_mu_nu,
            ot_mu_mu,
            ot_nu_nu,
            epsilon,
        }
    }
}

/// The three solves behind one divergence value, converged or not.
#[derive(Debug, Clone)]
pub struct DivergenceSolves {
    pub cross: SinkhornSolution,
    pub self_mu: SinkhornSolution,
    pub self_nu: SinkhornSolution,
}

impl DivergenceSolves {
    pub fn result(&self) -> DivergenceResult {
        DivergenceResult::combine(
            self.cross.potentials.epsilon,
            self.cross.value,
            self.self_mu.value,
            self.self_nu.value,
        )
    }

    pub fn converged(&self) -> bool {
        self.cross.converged && self.self_mu.converged && self.self_nu.converged
    }

    pub fn ensure_converged(&self) -> Result<()> {
        self.cross.ensure_converged("OT_eps(mu,nu)")?;
        self.self_mu.ensure_converged("OT_eps(mu,mu)")?;
        self.self_nu.ensure_converged("OT_eps(nu,nu)")?;
        Ok(())
    }
}

/// Runs the cross and both self solves without failing on non-convergence.
/// A cross term between identical measures reuses the symmetric solve.
pub fn divergence_solves(
    cost: &CostSpec,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SinkhornConfig,
) -> Result<DivergenceSolves> {
    let self_mu = solve_symmetric(cost, mu, cfg)?;
    let self_nu = solve_symmetric(cost, nu, cfg)?;
    // Identical inputs make the alternating plan near-diagonal at small ε,
    // where the alternation stalls; the self solution is the same problem.
    let cross = if mu == nu { self_mu.clone() } else { solve(cost, mu, nu, cfg)? };
    Ok(DivergenceSolves { cross, self_mu, self_nu })
}

pub fn sinkhorn_divergence(
    cost: &CostSpec,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SinkhornConfig,
) -> Result<DivergenceResult> {
    let solves = divergence_solves(cost, mu, nu, cfg)?;
    solves.ensure_converged()?;
    Ok(solves.result())
}

fn negated_kernel(cost: &CostSpec) -> Result<&KernelSpec> {
    match cost.kind() {
        CostKind::NegatedKernel(k) => Ok(k),
        _ => Err(Error::NotNegatedKernel),
    }
}

/// `S_∞(μ,ν) = ½ D_K²(μ,ν)` for `c = −K`.
pub fn s_infinity(cost: &CostSpec, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    let k = negated_kernel(cost)?;
    Ok(0.5 * discrepancy(k, mu, nu)?.squared)
}

/// `OT_∞(μ,ν) − ½ OT_∞(μ,μ) − ½ OT_∞(ν,ν)` for any cost.
pub fn s_infinity_from_limits(cost: &CostSpec, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> DivergenceResult {
    DivergenceResult::combine(
        f64::INFINITY,
        ot_infinity(cost, mu, nu).ot_inf,
        ot_infinity(cost, mu, mu).ot_inf,
        ot_infinity(cost, nu, nu).ot_inf,
    )
}

/// Witness function built from the ε = ∞ potentials of `c = −K̃`.
///
/// Kernels that are only conditionally positive definite of order one are
/// replaced by their anchor shift `K̃` (anchor at the box's lower corner);
/// the anchor terms `c_μ − c_ν` with `c_μ = ∫K(u,y) dμ(y)` restore the
/// witness of the original kernel.
pub fn witness_from_limits(
    k: &KernelSpec,
    bbox: &BoundingBox,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    queries: &PointSet,
) -> Result<Vec<f64>> {
    if mu.dim() != nu.dim() || queries.dim() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: if nu.dim() != mu.dim() { nu.dim() } else { queries.dim() },
        });
    }
    let shifted = !k.is_positive_definite();
    let kt = if shifted {
        KernelSpec::cpd_shifted(k.clone(), None, bbox)?
    } else {
        k.clone()
    };
    let cost = CostSpec::negated_kernel(kt);
    let s_inf = s_infinity_from_limits(&cost, mu, nu).s_eps;
    let d = (2.0 * s_inf).max(0.0).sqrt();
    if d <= WITNESS_MIN_DISCREPANCY {
        return Err(Error::ZeroDiscrepancy { value: d });
    }

    let ot_mu_nu = ot_infinity(&cost, mu, nu).ot_inf;
    let phi = limit_potential_at(&cost, nu, ot_mu_nu, queries);
    let psi = limit_potential_at(&cost, mu, ot_mu_nu, queries);
    let anchor_terms = if shifted {
        let u = PointSet::new(mu.dim(), bbox.lower().to_vec())?;
        embedding_difference(k, mu, nu, &u)[0]
    } else {
        0.0
    };
    Ok(phi
        .iter()
        .zip(&psi)
        .map(|(p, q)| (p - q + anchor_terms) / d)
        .collect())
}

/// One row of an ε sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRecord {
    pub epsilon: f64,
    pub ot_eps: f64,
    pub s_eps: f64,
    /// `max_i |φ_ε(x_i) − φ_∞(x_i)|` on supp(μ)
    pub phi_dist_to_inf: f64,
    pub psi_dist_to_inf: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// 25 log-spaced values from 1e-4 to 1e3.
pub fn default_epsilon_grid() -> Vec<f64> {
    log_grid(1e-4, 1e3, 25)
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64))
        .collect()
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Independent cold solves at every ε plus a terminal ε = ∞ record.
///
/// Records are returned in grid order. Non-converged solves are flagged in
/// the record instead of aborting the sweep.
pub fn epsilon_sweep(
    cost: &CostSpec,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    epsilons: &[f64],
    template: &SinkhornConfig,
) -> Result<Vec<SweepRecord>> {
    if epsilons.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::InvalidParameter("sweep epsilons must be positive and finite".into()));
    }
    if epsilons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("sweep epsilons must be strictly increasing".into()));
    }
    let limits = ot_infinity(cost, mu, nu);
    let mut records = epsilons
        .par_iter()
        .map(|&eps| {
            let cfg = SinkhornConfig {
                epsilon: eps,
                normalize: true,
                ..*template
            };
            let solves = divergence_solves(cost, mu, nu, &cfg)?;
            let r = solves.result();
            Ok(SweepRecord {
                epsilon: eps,
                ot_eps: r.ot_mu_nu,
                s_eps: r.s_eps,
                phi_dist_to_inf: sup_dist(&solves.cross.potentials.phi, &limits.phi_inf),
                psi_dist_to_inf: sup_dist(&solves.cross.potentials.psi, &limits.psi_inf),
                iterations: solves.cross.iterations,
                converged: solves.converged(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let s_inf = match cost.kind() {
        CostKind::NegatedKernel(_) => s_infinity(cost, mu, nu)?,
        _ => s_infinity_from_limits(cost, mu, nu).s_eps,
    };
    records.push(SweepRecord {
        epsilon: f64::INFINITY,
        ot_eps: limits.ot_inf,
        s_eps: s_inf,
        phi_dist_to_inf: 0.0,
        psi_dist_to_inf: 0.0,
        iterations: 0,
        converged: true,
    });
    Ok(records)
}

pub const SWEEP_CSV_HEADER: &str = "epsilon,ot_eps,s_eps,phi_dist_inf,psi_dist_inf,iterations";

fn csv_num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn format_sweep_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_num(r.epsilon),
            csv_num(r.ot_eps),
            csv_num(r.s_eps),
            csv_num(r.phi_dist_to_inf),
            csv_num(r.psi_dist_to_inf),
            r.iterations
        ));
    }
    out
}
