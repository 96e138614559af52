//! Dithering: approximate a target measure by `M` equal-weight atoms by
//! minimizing `S_ε(target, ν_p)` over the atom positions `p`.
//!
//! For finite ε the gradient comes from the envelope theorem at converged
//! potentials,
//!
//! ```text
//! ∇_{p_j} S_ε = Σ_i π^{μν}_{ij} ∇₂c(x_i, p_j) − Σ_k π^{νν}_{kj} ∇₂c(p_k, p_j)
//! ```
//!
//! and for ε = ∞ from differentiating the attraction–repulsion energy
//! directly. Positions move by projected gradient descent with Armijo
//! backtracking, so the energy trace never increases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::discrepancy::{cross_energy, halftoning_energy};
use crate::kernels::{CostKind, CostSpec, KernelSpec, KernelVariant};
use crate::measures::{BoundingBox, DiscreteMeasure, PointSet};
use crate::sinkhorn::{solve_matrix, solve_symmetric_matrix, SinkhornConfig, SinkhornSolution};
use crate::{Error, Result};

/// Target atoms per dithering atom below which a warning is issued.
pub const MIN_SAMPLING_RATIO: usize = 10;

/// Smallest step the line search tries before giving up.
pub const STEP_UNDERFLOW: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct DitherConfig {
    pub m: usize,
    /// `f64::INFINITY` selects the kernel discrepancy objective.
    pub epsilon: f64,
    pub cost: CostSpec,
    pub bbox: BoundingBox,
    pub max_outer_iter: usize,
    /// Stop once the sup-norm of the position gradient is at most this.
    pub grad_tol: f64,
    /// First trial step, in units of the per-atom gradient `M · ∇`.
    pub initial_step: f64,
    pub backtrack: f64,
    pub armijo: f64,
    pub seed: u64,
    /// Width of the smoothing that replaces `‖x − y‖` costs.
    pub smoothing: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl DitherConfig {
    pub fn new(m: usize, epsilon: f64, cost: CostSpec, bbox: BoundingBox) -> Self {
        Self {
            m,
            epsilon,
            cost,
            bbox,
            max_outer_iter: 500,
            grad_tol: 1e-6,
            initial_step: 0.1,
            backtrack: 0.5,
            armijo: 1e-4,
            seed: 0,
            smoothing: 1e-2,
            inner_tol: 1e-9,
            inner_max_iter: 100_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.m == 0 {
            return bad("M must be at least 1".into());
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive or inf, got {}", self.epsilon));
        }
        if !(self.grad_tol >= 0.0) || !(self.initial_step > 0.0) {
            return bad("grad_tol must be non-negative and initial_step positive".into());
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad(format!("backtrack must lie in (0,1), got {}", self.backtrack));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return bad(format!("armijo must lie in (0,1), got {}", self.armijo));
        }
        if !(self.smoothing > 0.0) || !(self.inner_tol > 0.0) || self.inner_max_iter == 0 {
            return bad("smoothing, inner_tol and inner_max_iter must be positive".into());
        }
        if self.epsilon.is_infinite() && self.objective_cost()?.1.is_none() {
            return Err(Error::NotNegatedKernel);
        }
        Ok(())
    }

    /// Non-fatal problems with the setup.
    pub fn warnings(&self, target: &DiscreteMeasure) -> Vec<String> {
        let mut out = Vec::new();
        if target.len() < MIN_SAMPLING_RATIO * self.m {
            out.push(format!(
                "target has {} atoms, fewer than {}x the {} dithering atoms; expect clustering on target atoms",
                target.len(),
                MIN_SAMPLING_RATIO,
                self.m
            ));
        }
        out
    }

    /// The differentiable cost actually optimized, and its kernel when `c = −K`.
    ///
    /// `‖x − y‖` becomes `√(s² + ‖x − y‖²)`, the negation of the smoothed
    /// negative-distance kernel.
    pub fn objective_cost(&self) -> Result<(CostSpec, Option<KernelSpec>)> {
        let smoothed = || KernelSpec::smoothed_negative_distance(self.smoothing, &self.bbox);
        let k = match self.cost.kind() {
            CostKind::AbsDistance => Some(smoothed()?),
            CostKind::PowerDistance { p } if *p == 1.0 => Some(smoothed()?),
            CostKind::PowerDistance { .. } => None,
            CostKind::NegatedKernel(k) => match k.variant() {
                KernelVariant::NegativeDistance => Some(smoothed()?),
                _ => Some(k.clone()),
            },
        };
        let cost = match &k {
            Some(k) => CostSpec::negated_kernel(k.clone()),
            None => self.cost.clone(),
        };
        Ok((cost, k))
    }

    fn inner_config(&self) -> SinkhornConfig {
        SinkhornConfig::new(self.epsilon)
            .with_tol(self.inner_tol)
            .with_max_iter(self.inner_max_iter)
    }

    pub fn initial_positions(&self) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.bbox.sample_uniform(&mut rng, self.m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub energy: f64,
    pub grad_norm: f64,
    /// Accepted step; 0 for the initial state.
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradTol,
    MaxIter,
    /// The line search found no decrease above the step floor.
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct DitherState {
    pub positions: PointSet,
    pub energy: f64,
    /// Row-major `M × d`.
    pub grad: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    pub termination: Termination,
}

impl DitherState {
    pub fn converged(&self) -> bool {
        self.termination == Termination::GradTol
    }

    pub fn measure(&self) -> Result<DiscreteMeasure> {
        DiscreteMeasure::uniform(self.positions.clone())
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Objective and gradient evaluation with cached target terms and warm starts.
pub struct Dither<'a> {
    cfg: &'a DitherConfig,
    target: &'a DiscreteMeasure,
    cost: CostSpec,
    kernel: Option<KernelSpec>,
    /// `½ OT_ε(target, target)` or `½ ∫∫K d(target⊗target)`
    target_term: f64,
    warm_cross: Option<Vec<f64>>,
    warm_self: Option<Vec<f64>>,
}

impl<'a> Dither<'a> {
    pub fn new(cfg: &'a DitherConfig, target: &'a DiscreteMeasure) -> Result<Self> {
        cfg.validate()?;
        if target.dim() != cfg.bbox.dim() {
            return Err(Error::DimensionMismatch {
                expected: cfg.bbox.dim(),
                found: target.dim(),
            });
        }
        target.validate(&cfg.bbox)?;
        let (cost, kernel) = cfg.objective_cost()?;
        let target_term = if cfg.epsilon.is_infinite() {
            0.5 * cross_energy(kernel.as_ref().expect("validated"), target, target)
        } else {
            let c = cost.matrix(target.points(), target.points());
            let s = solve_symmetric_matrix(&c, target.weights(), &cfg.inner_config(), None)?;
            s.ensure_converged("OT_eps(target,target)")?;
            0.5 * s.value
        };
        Ok(Self {
            cfg,
            target,
            cost,
            kernel,
            target_term,
            warm_cross: None,
            warm_self: None,
        })
    }

    /// The cost whose `S_ε` is minimized.
    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    fn check(&self, positions: &PointSet) -> Result<()> {
        if positions.len() != self.cfg.m || positions.dim() != self.cfg.bbox.dim() {
            return Err(Error::InvalidParameter(format!(
                "expected {} positions in dimension {}",
                self.cfg.m,
                self.cfg.bbox.dim()
            )));
        }
        if let Some(i) = positions.iter().position(|p| !self.cfg.bbox.contains(p)) {
            return Err(Error::PointOutsideBox { index: i });
        }
        Ok(())
    }

    fn solves(&mut self, positions: &PointSet) -> Result<(SinkhornSolution, SinkhornSolution)> {
        let cfg = self.cfg.inner_config();
        let w = vec![1.0 / self.cfg.m as f64; self.cfg.m];
        let c = self.cost.matrix(self.target.points(), positions);
        let cross = solve_matrix(&c, self.target.weights(), &w, &cfg, self.warm_cross.as_deref())?;
        cross.ensure_converged("OT_eps(target,nu)")?;
        let cs = self.cost.matrix(positions, positions);
        let own = solve_symmetric_matrix(&cs, &w, &cfg, self.warm_self.as_deref())?;
        own.ensure_converged("OT_eps(nu,nu)")?;
        self.warm_cross = Some(cross.potentials.psi.clone());
        self.warm_self = Some(own.potentials.phi.clone());
        Ok((cross, own))
    }

    fn energy_infinite(&self, positions: &PointSet) -> Result<f64> {
        let k = self.kernel.as_ref().expect("validated");
        Ok(halftoning_energy(k, self.target, positions)? + self.target_term)
    }

    pub fn objective(&mut self, positions: &PointSet) -> Result<f64> {
        self.check(positions)?;
        if self.cfg.epsilon.is_infinite() {
            return self.energy_infinite(positions);
        }
        let (cross, own) = self.solves(positions)?;
        Ok(cross.value - 0.5 * own.value - self.target_term)
    }

    /// Energy and its gradient with respect to the positions (row-major `M × d`).
    pub fn value_and_gradient(&mut self, positions: &PointSet) -> Result<(f64, Vec<f64>)> {
        self.check(positions)?;
        let (m, d) = (self.cfg.m, positions.dim());
        let mut g = vec![0.0; m * d];
        if self.cfg.epsilon.is_infinite() {
            let k = self.kernel.as_ref().expect("validated");
            let inv_m = 1.0 / m as f64;
            for j in 0..m {
                let pj = positions.point(j);
                let out = &mut g[j * d..(j + 1) * d];
                for pk in positions.iter() {
                    k.add_gradient(pk, pj, inv_m * inv_m, out)?;
                }
                for (x, w) in self.target.points().iter().zip(self.target.weights()) {
                    k.add_gradient(x, pj, -inv_m * w, out)?;
                }
            }
            return Ok((self.energy_infinite(positions)?, g));
        }
        let (cross, own) = self.solves(positions)?;
        let pi = cross.plan.entries();
        let pn = own.plan.entries();
        for j in 0..m {
            let pj = positions.point(j);
            let out = &mut g[j * d..(j + 1) * d];
            for (i, x) in self.target.points().iter().enumerate() {
                let w = pi[[i, j]];
                if w != 0.0 {
                    self.cost.add_gradient(x, pj, w, out)?;
                }
            }
            for (k, pk) in positions.iter().enumerate() {
                let w = pn[[k, j]];
                if w != 0.0 {
                    self.cost.add_gradient(pk, pj, -w, out)?;
                }
            }
        }
        Ok((cross.value - 0.5 * own.value - self.target_term, g))
    }
}

pub fn objective(cfg: &DitherConfig, target: &DiscreteMeasure, positions: &PointSet) -> Result<f64> {
    Dither::new(cfg, target)?.objective(positions)
}

pub fn gradient(cfg: &DitherConfig, target: &DiscreteMeasure, positions: &PointSet) -> Result<Vec<f64>> {
    Ok(Dither::new(cfg, target)?.value_and_gradient(positions)?.1)
}

/// Projected gradient descent from seeded uniform positions.
pub fn dither(cfg: &DitherConfig, target: &DiscreteMeasure) -> Result<DitherState> {
    dither_from(cfg, target, cfg.initial_positions())
}

pub fn dither_from(cfg: &DitherConfig, target: &DiscreteMeasure, start: PointSet) -> Result<DitherState> {
    let mut ev = Dither::new(cfg, target)?;
    let mut positions = start;
    positions.coords_mut().chunks_exact_mut(cfg.bbox.dim()).for_each(|p| cfg.bbox.project(p));
    let (mut energy, mut grad) = ev.value_and_gradient(&positions)?;
    let mut trace = vec![TraceEntry {
        iter: 0,
        energy,
        grad_norm: sup_norm(&grad),
        step: 0.0,
    }];
    let scale = cfg.m as f64;
    let mut step = cfg.initial_step;
    let mut termination = Termination::MaxIter;
    for iter in 1..=cfg.max_outer_iter {
        if sup_norm(&grad) <= cfg.grad_tol {
            termination = Termination::GradTol;
            break;
        }
        let mut accepted = None;
        while step >= STEP_UNDERFLOW {
            let mut trial = positions.clone();
            for (t, g) in trial.coords_mut().iter_mut().zip(&grad) {
                *t -= step * scale * g;
            }
            trial.coords_mut().chunks_exact_mut(cfg.bbox.dim()).for_each(|p| cfg.bbox.project(p));
            let decrease: f64 = positions
                .coords()
                .iter()
                .zip(trial.coords())
                .zip(&grad)
                .map(|((p, t), g)| g * (p - t))
                .sum();
            let (e, g) = ev.value_and_gradient(&trial)?;
            if e <= energy - cfg.armijo * decrease && e <= energy {
                accepted = Some((trial, e, g));
                break;
            }
            step *= cfg.backtrack;
        }
        let Some((trial, e, g)) = accepted else {
            termination = Termination::LineSearchFailure;
            break;
        };
        positions = trial;
        energy = e;
        grad = g;
        trace.push(TraceEntry {
            iter,
            energy,
            grad_norm: sup_norm(&grad),
            step,
        });
        step /= cfg.backtrack;
    }
    if termination == Termination::MaxIter && sup_norm(&grad) <= cfg.grad_tol {
        termination = Termination::GradTol;
    }
    Ok(DitherState {
        positions,
        energy,
        grad,
        trace,
        termination,
    })
}
