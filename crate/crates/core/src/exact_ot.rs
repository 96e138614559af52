//! Exact (unregularized) optimal transport oracles.
//!
//! [`wasserstein1_1d`] integrates `|F_μ − F_ν|` over the merged breakpoints.
//! [`exact_ot`] solves the discrete Kantorovich problem with the
//! transportation simplex (northwest-corner start, MODI duals, Dantzig
//! entering rule). Degenerate bases are avoided by perturbing the supplies;
//! the reported plan is recomputed on the final basis tree from the
//! unperturbed marginals, and the MODI duals certify optimality.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::kernels::CostSpec;
use crate::measures::{dot, seq_sum, DiscreteMeasure};
use crate::{Error, Result};

/// Largest `rows · cols` accepted by [`exact_ot`].
pub const MAX_EXACT_SIZE: usize = 1_000_000;

/// Supply perturbation used to keep every basis non-degenerate.
const PERTURBATION: f64 = 1e-12;

/// Coupling between two discrete measures, `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    entries: Array2<f64>,
}

impl TransportPlan {
    pub fn new(entries: Array2<f64>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries
            .outer_iter()
            .map(|r| seq_sum(r.iter().copied()))
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        for row in self.entries.outer_iter() {
            for (o, v) in out.iter_mut().zip(row.iter()) {
                *o += v;
            }
        }
        out
    }

    /// Largest absolute deviation of either marginal from `(a, b)`.
    pub fn marginal_error(&self, a: &[f64], b: &[f64]) -> f64 {
        let r = self.row_sums().iter().zip(a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let c = self.col_sums().iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        r.max(c)
    }

    /// `Σ_ij C_ij π_ij` in row-major order.
    pub fn cost(&self, c: &Array2<f64>) -> f64 {
        seq_sum(self.entries.iter().zip(c.iter()).map(|(p, c)| p * c))
    }
}

#[derive(Debug, Clone)]
pub struct ExactOTResult {
    pub value: f64,
    pub plan: TransportPlan,
    /// Dual certificate on supp(μ).
    pub phi: Vec<f64>,
    /// Dual certificate on supp(ν).
    pub psi: Vec<f64>,
    pub pivots: usize,
}

impl ExactOTResult {
    /// `Σ φ_i μ_i + Σ ψ_j ν_j`.
    pub fn dual_value(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
        dot(&self.phi, mu.weights()) + dot(&self.psi, nu.weights())
    }
}

/// Closed-form W₁ on the real line: `∫ |F_μ(t) − F_ν(t)| dt`.
pub fn wasserstein1_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    for m in [mu, nu] {
        if m.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: m.dim(),
            });
        }
    }
    let mut events: Vec<(f64, f64)> = mu
        .points()
        .iter()
        .zip(mu.weights())
        .map(|(x, w)| (x[0], *w))
        .chain(nu.points().iter().zip(nu.weights()).map(|(y, w)| (y[0], -*w)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf_diff = 0.0;
    let mut total = 0.0;
    for pair in events.windows(2) {
        cdf_diff += pair[0].1;
        total += cdf_diff.abs() * (pair[1].0 - pair[0].0);
    }
    Ok(total)
}

pub fn exact_ot(cost: &CostSpec, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<ExactOTResult> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    let (n, m) = (mu.len(), nu.len());
    if n.saturating_mul(m) > MAX_EXACT_SIZE {
        return Err(Error::SizeExceeded { rows: n, cols: m });
    }
    let c = cost.matrix(mu.points(), nu.points());
    solve_transportation(&c, mu.weights(), nu.weights())
}

/// `max_{i,j} (φ_i + ψ_j − c(x_i, y_j))`; non-positive iff the pair is dual feasible.
pub fn dual_feasibility_check(
    cost: &CostSpec,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    phi: &[f64],
    psi: &[f64],
) -> Result<f64> {
    if phi.len() != mu.len() || psi.len() != nu.len() {
        return Err(Error::InvalidParameter("potential length does not match support".into()));
    }
    let mut worst = f64::NEG_INFINITY;
    for (x, p) in mu.points().iter().zip(phi) {
        for (y, q) in nu.points().iter().zip(psi) {
            worst = worst.max(p + q - cost.eval(x, y));
        }
    }
    Ok(worst)
}

/// Spanning-tree basis over `rows + cols` nodes; column `j` is node `rows + j`.
struct Basis {
    rows: usize,
    cols: usize,
    adj: Vec<Vec<usize>>,
    in_basis: Vec<bool>,
}

impl Basis {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            adj: vec![Vec::new(); rows + cols],
            in_basis: vec![false; rows * cols],
        }
    }

    fn insert(&mut self, i: usize, j: usize) {
        self.in_basis[i * self.cols + j] = true;
        self.adj[i].push(self.rows + j);
        self.adj[self.rows + j].push(i);
    }

    fn remove(&mut self, i: usize, j: usize) {
        self.in_basis[i * self.cols + j] = false;
        let cj = self.rows + j;
        self.adj[i].retain(|&v| v != cj);
        self.adj[cj].retain(|&v| v != i);
    }

    fn cell(&self, a: usize, b: usize) -> (usize, usize) {
        if a < self.rows {
            (a, b - self.rows)
        } else {
            (b, a - self.rows)
        }
    }

    /// MODI duals with `u_0 = 0`.
    fn duals(&self, c: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
        let total = self.rows + self.cols;
        let mut pot = vec![f64::NAN; total];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(a) = queue.pop_front() {
            for &b in &self.adj[a] {
                if pot[b].is_nan() {
                    let (i, j) = self.cell(a, b);
                    pot[b] = c[[i, j]] - pot[a];
                    queue.push_back(b);
                }
            }
        }
        let v = pot.split_off(self.rows);
        (pot, v)
    }

    /// Tree path from node `from` to node `to`, as a node list.
    fn path(&self, from: usize, to: usize) -> Vec<usize> {
        let mut parent = vec![usize::MAX; self.rows + self.cols];
        parent[from] = from;
        let mut queue = VecDeque::from([from]);
        while let Some(a) = queue.pop_front() {
            if a == to {
                break;
            }
            for &b in &self.adj[a] {
                if parent[b] == usize::MAX {
                    parent[b] = a;
                    queue.push_back(b);
                }
            }
        }
        let mut nodes = vec![to];
        let mut cur = to;
        while cur != from {
            cur = parent[cur];
            nodes.push(cur);
        }
        nodes.reverse();
        nodes
    }

    /// Basic flows for the given marginals by leaf elimination.
    fn flows(&self, a: &[f64], b: &[f64]) -> Array2<f64> {
        let mut rest: Vec<f64> = a.iter().chain(b).copied().collect();
        let mut degree: Vec<usize> = self.adj.iter().map(Vec::len).collect();
        let mut done = vec![false; self.rows + self.cols];
        let mut x = Array2::zeros((self.rows, self.cols));
        let mut leaves: VecDeque<usize> = (0..degree.len()).filter(|&v| degree[v] == 1).collect();
        while let Some(leaf) = leaves.pop_front() {
            if done[leaf] || degree[leaf] != 1 {
                continue;
            }
            let other = *self.adj[leaf]
                .iter()
                .find(|&&v| !done[v])
                .expect("leaf has one live neighbour");
            let (i, j) = self.cell(leaf, other);
            let f = rest[leaf];
            x[[i, j]] = f;
            rest[other] -= f;
            done[leaf] = true;
            degree[other] -= 1;
            if degree[other] == 1 {
                leaves.push_back(other);
            }
        }
        x
    }
}

fn solve_transportation(c: &Array2<f64>, a: &[f64], b: &[f64]) -> Result<ExactOTResult> {
    let (n, m) = c.dim();
    let mut sa: Vec<f64> = a.iter().map(|v| v + PERTURBATION).collect();
    let mut sb = b.to_vec();
    let supply = seq_sum(sa.iter().copied());
    sb[m - 1] = supply - seq_sum(sb[..m - 1].iter().copied());

    // Northwest corner: each step advances exactly one index, giving n+m−1 cells.
    let mut basis = Basis::new(n, m);
    let mut flow = Array2::<f64>::zeros((n, m));
    let (mut i, mut j) = (0, 0);
    loop {
        let q = sa[i].min(sb[j]);
        basis.insert(i, j);
        flow[[i, j]] = q;
        sa[i] -= q;
        sb[j] -= q;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if (sa[i] <= sb[j] && i < n - 1) || j == m - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }

    let scale = c.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    let tol = 1e-12 * scale;
    let max_pivots = 50 * n * m + 1000;
    let mut pivots = 0;
    let (u, v) = loop {
        let (u, v) = basis.duals(c);
        let mut best = (-tol, usize::MAX, usize::MAX);
        for i in 0..n {
            for j in 0..m {
                if basis.in_basis[i * m + j] {
                    continue;
                }
                let r = c[[i, j]] - u[i] - v[j];
                if r < best.0 {
                    best = (r, i, j);
                }
            }
        }
        if best.1 == usize::MAX {
            break (u, v);
        }
        if pivots >= max_pivots {
            return Err(Error::NotConverged {
                term: "exact_ot".into(),
                iterations: pivots,
                residual: -best.0,
            });
        }
        pivots += 1;
        let (ei, ej) = (best.1, best.2);
        // Cycle: entering cell (+), then alternate along the tree path col ej → row ei.
        let nodes = basis.path(n + ej, ei);
        let cells: Vec<(usize, usize)> = nodes.windows(2).map(|w| basis.cell(w[0], w[1])).collect();
        let mut theta = f64::INFINITY;
        let mut leaving = cells[0];
        for (k, &(ci, cj)) in cells.iter().enumerate() {
            if k % 2 == 0 && flow[[ci, cj]] < theta {
                theta = flow[[ci, cj]];
                leaving = (ci, cj);
            }
        }
        flow[[ei, ej]] = theta;
        for (k, &(ci, cj)) in cells.iter().enumerate() {
            if k % 2 == 0 {
                flow[[ci, cj]] -= theta;
            } else {
                flow[[ci, cj]] += theta;
            }
        }
        flow[[leaving.0, leaving.1]] = 0.0;
        basis.remove(leaving.0, leaving.1);
        basis.insert(ei, ej);
    };

    // Recompute the optimal basic solution from the unperturbed marginals.
    let mut plan = basis.flows(a, b);
    plan.mapv_inplace(|x| x.max(0.0));
    let plan = TransportPlan::new(plan);
    let value = plan.cost(c);
    Ok(ExactOTResult {
        value,
        plan,
        phi: u,
        psi: v,
        pivots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::BoundingBox;

    fn m1(points: &[f64], weights: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(1, points.to_vec(), weights.to_vec()).unwrap()
    }

    fn example_41() -> (DiscreteMeasure, DiscreteMeasure) {
        (m1(&[0.0, 1.0], &[0.5, 0.5]), m1(&[0.1, 0.9], &[0.5, 0.5]))
    }

    #[test]
    fn w1_examples() {
        let (mu, nu) = example_41();
        assert!((wasserstein1_1d(&mu, &nu).unwrap() - 0.1).abs() < 1e-12);
        let a = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let b = DiscreteMeasure::dirac(&[1.0]).unwrap();
        assert_eq!(wasserstein1_1d(&a, &b).unwrap(), 1.0);
        let u = m1(&[0.0, 0.5], &[1.0, 1.0]);
        let v = m1(&[0.25, 0.75], &[1.0, 1.0]);
        assert!((wasserstein1_1d(&u, &v).unwrap() - 0.25).abs() < 1e-15);
        let two_d = DiscreteMeasure::dirac(&[0.0, 0.0]).unwrap();
        assert!(wasserstein1_1d(&two_d, &two_d).is_err());
    }

    #[test]
    fn example_41_plan_and_value() {
        let bbox = BoundingBox::cube(1, 0.0, 1.0).unwrap();
        let cost = CostSpec::abs_distance(&bbox).unwrap();
        let (mu, nu) = example_41();
        let r = exact_ot(&cost, &mu, &nu).unwrap();
        assert!((r.value - 0.1).abs() < 1e-12);
        let p = r.plan.entries();
        assert!((p[[0, 0]] - 0.5).abs() < 1e-12 && (p[[1, 1]] - 0.5).abs() < 1e-12);
        assert!(p[[0, 1]].abs() < 1e-12 && p[[1, 0]].abs() < 1e-12);
        assert!(dual_feasibility_check(&cost, &mu, &nu, &r.phi, &r.psi).unwrap() <= 1e-9);
        assert!((r.dual_value(&mu, &nu) - r.value).abs() < 1e-9);
    }

    #[test]
    fn identical_measures_cost_nothing() {
        let bbox = BoundingBox::cube(1, 0.0, 1.0).unwrap();
        let cost = CostSpec::abs_distance(&bbox).unwrap();
        let mu = m1(&[0.1, 0.4, 0.8], &[0.2, 0.5, 0.3]);
        let r = exact_ot(&cost, &mu, &mu).unwrap();
        assert!(r.value.abs() < 1e-15);
        for i in 0..3 {
            assert!((r.plan.entries()[[i, i]] - mu.weights()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn example_potentials_are_feasible_with_equal_value() {
        let bbox = BoundingBox::cube(1, 0.0, 1.0).unwrap();
        let cost = CostSpec::abs_distance(&bbox).unwrap();
        let (mu, nu) = example_41();
        let phi1 = |x: f64| {
            if x <= 0.1 {
                0.1 - x
            } else if x >= 0.9 {
                x - 0.9
            } else {
                0.0
            }
        };
        let phi2 = |x: f64| {
            if x <= 0.2 {
                0.2 - x
            } else if x >= 0.9 {
                x - 0.9
            } else {
                0.0
            }
        };
        let mut values = Vec::new();
        for f in [&phi1 as &dyn Fn(f64) -> f64, &phi2] {
            let phi: Vec<f64> = mu.points().iter().map(|x| f(x[0])).collect();
            let psi: Vec<f64> = nu.points().iter().map(|y| -f(y[0])).collect();
            assert!(dual_feasibility_check(&cost, &mu, &nu, &phi, &psi).unwrap() <= 1e-12);
            values.push(dot(&phi, mu.weights()) + dot(&psi, nu.weights()));
        }
        assert!((values[0] - 0.1).abs() < 1e-12);
        assert!((values[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_potentials_feasible_for_nonnegative_cost() {
        let bbox = BoundingBox::cube(1, 0.0, 1.0).unwrap();
        let cost = CostSpec::abs_distance(&bbox).unwrap();
        let (mu, nu) = example_41();
        assert!(dual_feasibility_check(&cost, &mu, &nu, &[0.0; 2], &[0.0; 2]).unwrap() <= 0.0);
    }

    #[test]
    fn size_cap() {
        let bbox = BoundingBox::cube(1, 0.0, 1.0).unwrap();
        let cost = CostSpec::abs_distance(&bbox).unwrap();
        let pts: Vec<f64> = (0..1001).map(|i| i as f64 / 1000.0).collect();
        let mu = DiscreteMeasure::uniform(crate::measures::PointSet::new(1, pts).unwrap()).unwrap();
        assert!(matches!(exact_ot(&cost, &mu, &mu), Err(Error::SizeExceeded { .. })));
    }
}
