//! Sparse Laplacian products, the Laplacian-solver interface consumed by
//! the estimators, and the block-elimination operators `Z1`, `Z2`.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};

use crate::graph::{laplacian, WeightedGraph};

/// `L(G)·x` in `O(m)`.
pub fn lap_apply(g: &WeightedGraph, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; g.n()];
    for (_, e) in g.proper_edges() {
        let d = e.weight * (x[e.u] - x[e.v]);
        y[e.u] += d;
        y[e.v] -= d;
    }
    y
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn project_mean_zero(x: &mut [f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v -= mean;
    }
    mean
}

/// `sqrt(xᵀ L x)`.
pub fn energy_norm(g: &WeightedGraph, x: &[f64]) -> f64 {
    dot(x, &lap_apply(g, x)).max(0.0).sqrt()
}

/// A (possibly approximate) solver for `L(G) x = b`, returning the
/// mean-zero solution for mean-zero `b`.
pub trait LaplacianSolver {
    fn n(&self) -> usize;

    fn solve(&self, b: &[f64]) -> Vec<f64>;

    /// Solves for every column of `b`.
    fn solve_many(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let x = self.solve(b.column(j).as_slice());
            out.set_column(j, &DVector::from_vec(x));
        }
        out
    }

    /// Number of right-hand sides solved so far.
    fn calls(&self) -> usize;
}

/// Builds Laplacian solvers for the estimators.
pub trait SolverFactory {
    fn build(&self, g: &WeightedGraph) -> Box<dyn LaplacianSolver>;
}

/// Factory of [`DenseLaplacianSolver`]s.
#[derive(Debug, Clone, Copy, Default)]
pub struct DenseFactory;

impl SolverFactory for DenseFactory {
    fn build(&self, g: &WeightedGraph) -> Box<dyn LaplacianSolver> {
        Box::new(DenseLaplacianSolver::new(g))
    }
}

/// Exact dense solver through a Cholesky factor of `L + J/n`. Requires a
/// connected graph.
#[derive(Debug, Clone)]
pub struct DenseLaplacianSolver {
    n: usize,
    factor: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    pinv: Option<DMatrix<f64>>,
    calls: Cell<usize>,
}

impl DenseLaplacianSolver {
    pub fn new(g: &WeightedGraph) -> Self {
        let n = g.n();
        let mut m = laplacian(g);
        if n > 0 {
            let j = 1.0 / n as f64;
            m.add_scalar_mut(j);
        }
        match nalgebra::Cholesky::new(m) {
            Some(factor) => Self { n, factor: Some(factor), pinv: None, calls: Cell::new(0) },
            None => {
                let pinv = crate::oracle::laplacian_pinv(&laplacian(g)).expect("Laplacian is symmetric");
                Self { n, factor: None, pinv: Some(pinv), calls: Cell::new(0) }
            }
        }
    }
}

impl LaplacianSolver for DenseLaplacianSolver {
    fn n(&self) -> usize {
        self.n
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b);
        self.solve_many(&m).column(0).iter().copied().collect()
    }

    fn solve_many(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.calls.set(self.calls.get() + b.ncols());
        let mut rhs = b.clone();
        for mut col in rhs.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        let mut x = match (&self.factor, &self.pinv) {
            (Some(f), _) => f.solve(&rhs),
            (None, Some(p)) => p * &rhs,
            _ => unreachable!(),
        };
        for mut col in x.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        x
    }

    fn calls(&self) -> usize {
        self.calls.get()
    }
}

/// One pivot of a sequential elimination: node `v` with weighted degree
/// `d` and its neighbours at elimination time.
#[derive(Debug, Clone, PartialEq)]
pub struct Pivot {
    pub v: usize,
    pub d: f64,
    pub nbrs: Vec<(usize, f64)>,
}

/// Elimination of an α-DD block `F` against the rest `C`, with a truncated
/// Jacobi series standing in for `L_FF⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobiBlock {
    pub f: Vec<usize>,
    /// Diagonal of `L_FF`.
    pub diag: Vec<f64>,
    /// Edges inside `F`, as positions into `f`, with weights.
    pub inner: Vec<(usize, usize, f64)>,
    /// Edges from `F` (position into `f`) to `C` (node id), with weights.
    pub cross: Vec<(usize, usize, f64)>,
    /// Number of correction terms of the series.
    pub terms: usize,
}

impl JacobiBlock {
    /// `Z·b` for `b` indexed by positions in `f`.
    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        let mut u: Vec<f64> = b.iter().zip(&self.diag).map(|(x, d)| x / d).collect();
        let mut acc = u.clone();
        for _ in 0..self.terms {
            let mut next = vec![0.0; u.len()];
            for &(i, j, w) in &self.inner {
                next[i] += w * u[j];
                next[j] += w * u[i];
            }
            for (x, d) in next.iter_mut().zip(&self.diag) {
                *x /= d;
            }
            for (a, x) in acc.iter_mut().zip(&next) {
                *a += x;
            }
            u = next;
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Pivots(Vec<Pivot>),
    Jacobi(JacobiBlock),
}

/// `Z1ᵀ·diag(Z2, inner)·Z1` over a fixed node space, as a sequence of
/// elimination steps; `terminals` are the coordinates left for `inner`.
#[derive(Debug, Clone, PartialEq)]
pub struct EliminationOps {
    pub n: usize,
    pub steps: Vec<Step>,
    pub terminals: Vec<usize>,
}

impl EliminationOps {
    pub fn identity(n: usize) -> Self {
        Self { n, steps: Vec::new(), terminals: (0..n).collect() }
    }

    pub fn eliminated(&self) -> usize {
        self.n - self.terminals.len()
    }

    /// `Z1·b`: the reduced right-hand side lives on `terminals`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        for step in &self.steps {
            match step {
                Step::Pivots(ps) => {
                    for p in ps {
                        let yv = y[p.v];
                        for &(u, w) in &p.nbrs {
                            y[u] += w / p.d * yv;
                        }
                    }
                }
                Step::Jacobi(j) => {
                    let bf: Vec<f64> = j.f.iter().map(|&v| y[v]).collect();
                    let z = j.apply(&bf);
                    for &(i, c, w) in &j.cross {
                        y[c] += w * z[i];
                    }
                }
            }
        }
        y
    }

    /// Completes `x` (already holding the terminal solution) by
    /// back-substitution from the forward image `y`.
    pub fn backward(&self, y: &[f64], x: &mut [f64]) {
        for step in self.steps.iter().rev() {
            match step {
                Step::Pivots(ps) => {
                    for p in ps.iter().rev() {
                        x[p.v] = y[p.v] / p.d + p.nbrs.iter().map(|&(u, w)| w / p.d * x[u]).sum::<f64>();
                    }
                }
                Step::Jacobi(j) => {
                    let mut r: Vec<f64> = j.f.iter().map(|&v| y[v]).collect();
                    for &(i, c, w) in &j.cross {
                        r[i] += w * x[c];
                    }
                    for (&v, z) in j.f.iter().zip(j.apply(&r)) {
                        x[v] = z;
                    }
                }
            }
        }
    }

    /// `Z1ᵀ·diag(Z2, inner)·Z1·b`, where `inner` maps the reduced
    /// right-hand side on `terminals` to a solution on `terminals`.
    pub fn apply(&self, b: &[f64], inner: impl FnOnce(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let y = self.forward(b);
        let reduced: Vec<f64> = self.terminals.iter().map(|&t| y[t]).collect();
        let sol = inner(&reduced);
        let mut x = vec![0.0; self.n];
        for (&t, s) in self.terminals.iter().zip(sol) {
            x[t] = s;
        }
        self.backward(&y, &mut x);
        x
    }

    /// Runs `other` after `self`; `other` acts on the same node space and
    /// eliminates among `self.terminals`.
    pub fn then(mut self, other: EliminationOps) -> Self {
        assert_eq!(self.n, other.n, "operators over different node spaces");
        self.steps.extend(other.steps);
        self.terminals = other.terminals;
        self
    }

    /// Dense matrix of `x ↦ Π·apply(Π x)` with the given inner operator.
    pub fn materialize(&self, inner: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            project_mean_zero(&mut e);
            let mut x = self.apply(&e, |r| (inner * DVector::from_column_slice(r)).iter().copied().collect());
            project_mean_zero(&mut x);
            out.set_column(j, &DVector::from_vec(x));
        }
        (&out + out.transpose()) * 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::generators::{cycle, grid};
    use crate::oracle::{laplacian_pinv, laplacian_schur, pseudo_inverse};

    #[test]
    fn dense_solver_matches_pinv() {
        let g = grid(3, 4);
        let s = DenseLaplacianSolver::new(&g);
        let mut b: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).cos()).collect();
        project_mean_zero(&mut b);
        let x = s.solve(&b);
        let exact = laplacian_pinv(&laplacian(&g)).unwrap() * DVector::from_column_slice(&b);
        for i in 0..12 {
            assert!((x[i] - exact[i]).abs() < 1e-10);
        }
        assert_eq!(s.calls(), 1);
    }

    #[test]
    fn pivot_elimination_of_a_cycle_node() {
        // Eliminate node 0 of C4: neighbours 1 and 3.
        let g = cycle(4);
        let ops = EliminationOps {
            n: 4,
            steps: vec![Step::Pivots(vec![Pivot { v: 0, d: 2.0, nbrs: vec![(1, 1.0), (3, 1.0)] }])],
            terminals: vec![1, 2, 3],
        };
        let sc = laplacian_schur(&g, &[1, 2, 3]);
        let composite = ops.materialize(&pseudo_inverse(&sc).unwrap());
        let lp = laplacian_pinv(&laplacian(&g)).unwrap();
        assert!((composite - lp).amax() < 1e-10);
    }

    #[test]
    fn jacobi_block_is_exact_without_inner_edges() {
        let g = cycle(4);
        // F = {0, 2} has no internal edges.
        let ops = EliminationOps {
            n: 4,
            steps: vec![Step::Jacobi(JacobiBlock {
                f: vec![0, 2],
                diag: vec![2.0, 2.0],
                inner: vec![],
                cross: vec![(0, 1, 1.0), (0, 3, 1.0), (1, 1, 1.0), (1, 3, 1.0)],
                terms: 0,
            })],
            terminals: vec![1, 3],
        };
        let sc = laplacian_schur(&g, &[1, 3]);
        let composite = ops.materialize(&pseudo_inverse(&sc).unwrap());
        let lp = laplacian_pinv(&laplacian(&g)).unwrap();
        assert!((composite - lp).amax() < 1e-10);
    }
}
