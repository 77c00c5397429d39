//! Thin backend-agnostic layer over a convex conic solver.
//!
//! Programs are stated in the standard form
//!   minimize    (1/2) v' P v + c' v
//!   subject to  A v + s = b,  s in K,
//! with K a product of zero, nonnegative, and second-order cones, in that
//! row order.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Zero(usize),
    Nonneg(usize),
    SecondOrder(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match self {
            Cone::Zero(n) | Cone::Nonneg(n) | Cone::SecondOrder(n) => *n,
        }
    }
}

/// Sparse triplet builder for constraint and cost matrices.
#[derive(Debug, Clone, Default)]
pub struct TripletMatrix {
    pub nrows: usize,
    pub ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletMatrix { nrows, ncols, entries: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    pub fn to_csc(&self) -> CscMatrix<f64> {
        let mut entries = self.entries.clone();
        entries.sort_by_key(|&(r, c, _)| (c, r));
        let mut colptr = vec![0usize; self.ncols + 1];
        let mut rowval = Vec::with_capacity(entries.len());
        let mut nzval: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *nzval.last_mut().unwrap() += v;
            } else {
                colptr[c + 1] += 1;
                rowval.push(r);
                nzval.push(v);
                last = Some((r, c));
            }
        }
        for c in 0..self.ncols {
            colptr[c + 1] += colptr[c];
        }
        CscMatrix::new(self.nrows, self.ncols, colptr, rowval, nzval)
    }
}

#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub num_vars: usize,
    /// Quadratic cost (upper triangle), may be empty.
    pub p: TripletMatrix,
    pub c: Vec<f64>,
    pub a: TripletMatrix,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProgram {
    pub fn new(num_vars: usize) -> Self {
        ConicProgram {
            num_vars,
            p: TripletMatrix::new(num_vars, num_vars),
            c: vec![0.0; num_vars],
            a: TripletMatrix::new(0, num_vars),
            b: Vec::new(),
            cones: Vec::new(),
        }
    }

    /// Appends `count` constraint rows under the given cone and returns the
    /// index of the first new row.
    pub fn add_rows(&mut self, cone: Cone, count: usize) -> usize {
        debug_assert_eq!(cone.dim(), count);
        let first = self.a.nrows;
        self.a.nrows += count;
        self.b.extend(std::iter::repeat(0.0).take(count));
        self.cones.push(cone);
        first
    }
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    /// Primal objective of the minimization form.
    pub objective: f64,
    /// max of primal residual, dual residual, and relative duality gap.
    pub kkt_residual: f64,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solver stopped with status {status}; kkt residual {kkt_residual:.3e}")]
    Failure { status: String, kkt_residual: f64, last_iterate: Vec<f64> },
}

pub trait ConicBackend {
    fn solve(&self, program: &ConicProgram, tolerance: f64) -> Result<ConicSolution, SolverError>;
}

/// Interior-point backend.
pub struct ClarabelBackend;

impl ConicBackend for ClarabelBackend {
    fn solve(&self, program: &ConicProgram, tolerance: f64) -> Result<ConicSolution, SolverError> {
        let p = program.p.to_csc();
        let a = program.a.to_csc();
        let cones: Vec<SupportedConeT<f64>> = program
            .cones
            .iter()
            .map(|c| match c {
                Cone::Zero(n) => SupportedConeT::ZeroConeT(*n),
                Cone::Nonneg(n) => SupportedConeT::NonnegativeConeT(*n),
                Cone::SecondOrder(n) => SupportedConeT::SecondOrderConeT(*n),
            })
            .collect();
        let eps = (tolerance * 1e-3).clamp(1e-11, 1e-9);
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_gap_abs(eps)
            .tol_gap_rel(eps)
            .tol_feas(eps)
            .max_iter(200)
            .build()
            .expect("static settings");
        let mut solver = DefaultSolver::new(&p, &program.c, &a, &program.b, &cones, settings)
            .map_err(|e| SolverError::Failure {
                status: format!("setup error: {e:?}"),
                kkt_residual: f64::INFINITY,
                last_iterate: vec![],
            })?;
        solver.solve();
        let info = &solver.info;
        let gap = (info.cost_primal - info.cost_dual).abs()
            / f64::max(1.0, info.cost_primal.abs());
        let kkt_residual = info.res_primal.max(info.res_dual).max(gap);
        let x = solver.solution.x.clone();
        match info.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved if kkt_residual <= tolerance => {
                Ok(ConicSolution { x, objective: info.cost_primal, kkt_residual })
            }
            status => Err(SolverError::Failure {
                status: format!("{status:?}"),
                kkt_residual,
                last_iterate: x,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// maximize r - c*x with r <= x(x-q)/m, 0 <= x <= cap, stated as a
    /// minimization. Closed form: x* = clamp((q + m*c)/2, 0, cap).
    fn revenue_toy(m: f64, q: f64, cost: f64, cap: f64) -> ConicProgram {
        // vars: [x, r]
        let mut prog = ConicProgram::new(2);
        prog.c = vec![cost, -1.0];
        let row = prog.add_rows(Cone::Nonneg(3), 3);
        // x >= 0, x <= cap, r >= 0
        prog.a.push(row, 0, -1.0);
        prog.a.push(row + 1, 0, 1.0);
        prog.b[row + 1] = cap;
        prog.a.push(row + 2, 1, -1.0);
        // x^2 <= s with s = q*x + m*r encoded as (s+1, s-1, 2x) in a SOC
        let soc = prog.add_rows(Cone::SecondOrder(3), 3);
        prog.a.push(soc, 0, -q);
        prog.a.push(soc, 1, -m);
        prog.b[soc] = 1.0;
        prog.a.push(soc + 1, 0, -q);
        prog.a.push(soc + 1, 1, -m);
        prog.b[soc + 1] = -1.0;
        prog.a.push(soc + 2, 0, -2.0);
        prog
    }

    #[test]
    fn quadratic_revenue_interior_optimum() {
        let (m, q, cost, cap) = (-5.0, 40.0, 2.0, 100.0);
        let sol = ClarabelBackend.solve(&revenue_toy(m, q, cost, cap), 1e-7).unwrap();
        let x_star = (q + m * cost) / 2.0;
        // the objective is flat at the top: x error scales like sqrt(gap)
        assert!((sol.x[0] - x_star).abs() < 1e-3, "x = {}, want {x_star}", sol.x[0]);
        assert!(sol.kkt_residual < 1e-7);
    }

    #[test]
    fn quadratic_revenue_capped_optimum() {
        let (m, q, cost, cap) = (-5.0, 40.0, 2.0, 10.0);
        let sol = ClarabelBackend.solve(&revenue_toy(m, q, cost, cap), 1e-7).unwrap();
        assert!((sol.x[0] - cap).abs() < 1e-5);
    }

    #[test]
    fn zero_cone_equality_respected() {
        // minimize x0 + x1 subject to x0 - x1 = 3, x0 >= 0, x1 >= 0
        let mut prog = ConicProgram::new(2);
        prog.c = vec![1.0, 1.0];
        let eq = prog.add_rows(Cone::Zero(1), 1);
        prog.a.push(eq, 0, 1.0);
        prog.a.push(eq, 1, -1.0);
        prog.b[eq] = 3.0;
        let nn = prog.add_rows(Cone::Nonneg(2), 2);
        prog.a.push(nn, 0, -1.0);
        prog.a.push(nn + 1, 1, -1.0);
        let sol = ClarabelBackend.solve(&prog, 1e-8).unwrap();
        assert!((sol.x[0] - 3.0).abs() < 1e-6);
        assert!(sol.x[1].abs() < 1e-6);
    }

    #[test]
    fn duplicate_triplets_accumulate() {
        let mut t = TripletMatrix::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.0);
        t.push(1, 1, 5.0);
        let m = t.to_csc();
        assert_eq!(m.nzval, vec![3.0, 5.0]);
    }
}
