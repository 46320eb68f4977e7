//! Thin linear-programming layer.
//!
//! Problems are assembled column-first into a [`LinearProgram`], solved with
//! the HiGHS dual simplex (so the reported duals are basic/vertex duals), and
//! returned as an [`LpSolution`] holding primal values, row duals and reduced
//! costs of the *minimisation* form. Maximisation problems are negated before
//! being handed to the solver; their reported objective is negated back.

use std::fmt;
use std::io::{self, Write};
use std::num::NonZeroU32;

use highs::{HighsModelStatus, RowProblem, Sense as HighsSense};

use crate::error::{Error, Result};

/// Optimisation direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimise,
    Maximise,
}

/// Handle to a variable (column).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

/// Handle to a constraint (row).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub coeffs: Vec<(VarId, f64)>,
}

/// A linear program `opt c'x  s.t.  lo <= Ax <= hi,  l <= x <= u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    pub columns: Vec<Column>,
    pub rows: Vec<Constraint>,
}

/// Primal/dual optimum. Duals follow the minimisation convention: the
/// reduced cost satisfies `d = c_min - A' y`, and a positive dual marks an
/// active lower bound.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub row_activity: Vec<f64>,
    pub row_duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    /// Objective in the problem's own sense.
    pub objective: f64,
}

impl LpSolution {
    pub fn value(&self, v: VarId) -> f64 {
        self.x[v.0]
    }

    pub fn dual(&self, r: RowId) -> f64 {
        self.row_duals[r.0]
    }
}

/// Solver knobs. Defaults are tight enough for the 1e-6 relative contract.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub feasibility_tolerance: f64,
    pub optimality_tolerance: f64,
    pub presolve: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tolerance: 1e-9,
            optimality_tolerance: 1e-9,
            presolve: true,
        }
    }
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            columns: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn minimise() -> Self {
        Self::new(Sense::Minimise)
    }

    pub fn maximise() -> Self {
        Self::new(Sense::Maximise)
    }

    pub fn num_vars(&self) -> usize {
        self.columns.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: f64) -> VarId {
        self.columns.push(Column {
            name: name.into(),
            lower,
            upper,
            cost,
        });
        VarId(self.columns.len() - 1)
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        coeffs: Vec<(VarId, f64)>,
    ) -> RowId {
        self.rows.push(Constraint {
            name: name.into(),
            lower,
            upper,
            coeffs,
        });
        RowId(self.rows.len() - 1)
    }

    pub fn add_eq(&mut self, name: impl Into<String>, rhs: f64, coeffs: Vec<(VarId, f64)>) -> RowId {
        self.add_row(name, rhs, rhs, coeffs)
    }

    pub fn add_le(&mut self, name: impl Into<String>, rhs: f64, coeffs: Vec<(VarId, f64)>) -> RowId {
        self.add_row(name, f64::NEG_INFINITY, rhs, coeffs)
    }

    pub fn add_ge(&mut self, name: impl Into<String>, rhs: f64, coeffs: Vec<(VarId, f64)>) -> RowId {
        self.add_row(name, rhs, f64::INFINITY, coeffs)
    }

    pub fn set_cost(&mut self, v: VarId, cost: f64) {
        self.columns[v.0].cost = cost;
    }

    /// Cost vector of the minimisation form.
    pub fn min_costs(&self) -> Vec<f64> {
        let sign = self.sign();
        self.columns.iter().map(|c| sign * c.cost).collect()
    }

    fn sign(&self) -> f64 {
        match self.sense {
            Sense::Minimise => 1.0,
            Sense::Maximise => -1.0,
        }
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.columns.iter().zip(x).map(|(c, v)| c.cost * v).sum()
    }

    pub fn row_activity(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.coeffs.iter().map(|(v, a)| a * x[v.0]).sum())
            .collect()
    }

    pub fn solve(&self) -> Result<LpSolution> {
        self.solve_with(SolverOptions::default())
    }

    pub fn solve_with(&self, opts: SolverOptions) -> Result<LpSolution> {
        let sign = self.sign();
        let mut problem = RowProblem::default();
        let cols: Vec<_> = self
            .columns
            .iter()
            .map(|c| problem.add_column(sign * c.cost, c.lower..=c.upper))
            .collect();
        for row in &self.rows {
            problem.add_row(
                row.lower..=row.upper,
                row.coeffs.iter().map(|(v, a)| (cols[v.0], *a)),
            );
        }
        let mut model = problem
            .try_optimise(HighsSense::Minimise)
            .map_err(|s| Error::Solver(format!("model rejected by HiGHS: {s:?}")))?;
        model.make_quiet();
        model.set_threads(NonZeroU32::new(1).expect("nonzero"));
        model.set_option("solver", "simplex");
        model.set_option("presolve", if opts.presolve { "on" } else { "off" });
        model.set_option("primal_feasibility_tolerance", opts.feasibility_tolerance);
        model.set_option("dual_feasibility_tolerance", opts.optimality_tolerance);
        let solved = model
            .try_solve()
            .map_err(|s| Error::Solver(format!("HiGHS run failed: {s:?}")))?;
        match solved.status() {
            HighsModelStatus::Optimal => {}
            HighsModelStatus::ModelEmpty => {
                return Ok(LpSolution::default());
            }
            HighsModelStatus::Infeasible => return Err(Error::Solver("LP infeasible".into())),
            HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible => {
                return Err(Error::Solver("LP unbounded".into()))
            }
            other => return Err(Error::Solver(format!("LP not solved: {other:?}"))),
        }
        let sol = solved.get_solution();
        let x = sol.columns().to_vec();
        let objective = self.objective_at(&x);
        Ok(LpSolution {
            row_activity: sol.rows().to_vec(),
            row_duals: sol.dual_rows().to_vec(),
            reduced_costs: sol.dual_columns().to_vec(),
            x,
            objective,
        })
    }

    /// Objective of the dual of the minimisation form, evaluated at the
    /// given duals. Each dual multiplies the bound it is signed towards;
    /// a dual pointing at an infinite bound contributes nothing when it is
    /// numerically zero and is reported as infinite otherwise.
    pub fn dual_objective(&self, row_duals: &[f64], reduced_costs: &[f64]) -> f64 {
        const ZERO: f64 = 1e-9;
        let pick = |dual: f64, lower: f64, upper: f64| -> f64 {
            if dual.abs() <= ZERO {
                0.0
            } else if dual > 0.0 {
                if lower.is_finite() {
                    dual * lower
                } else {
                    f64::NEG_INFINITY
                }
            } else if upper.is_finite() {
                dual * upper
            } else {
                f64::NEG_INFINITY
            }
        };
        let rows: f64 = self
            .rows
            .iter()
            .zip(row_duals)
            .map(|(r, &y)| pick(y, r.lower, r.upper))
            .sum();
        let cols: f64 = self
            .columns
            .iter()
            .zip(reduced_costs)
            .map(|(c, &d)| pick(d, c.lower, c.upper))
            .sum();
        rows + cols
    }

    /// Quality report for a candidate primal/dual pair.
    pub fn residuals(&self, sol: &LpSolution) -> LpResiduals {
        let activity = self.row_activity(&sol.x);
        let primal_row = self
            .rows
            .iter()
            .zip(&activity)
            .map(|(r, &a)| (r.lower - a).max(a - r.upper).max(0.0))
            .fold(0.0, f64::max);
        let primal_bound = self
            .columns
            .iter()
            .zip(&sol.x)
            .map(|(c, &v)| (c.lower - v).max(v - c.upper).max(0.0))
            .fold(0.0, f64::max);

        // dual feasibility: c - A'y - d = 0
        let mut aty = vec![0.0; self.columns.len()];
        for (r, &y) in self.rows.iter().zip(&sol.row_duals) {
            for (v, a) in &r.coeffs {
                aty[v.0] += a * y;
            }
        }
        let costs = self.min_costs();
        let dual_infeasibility = costs
            .iter()
            .zip(&aty)
            .zip(&sol.reduced_costs)
            .map(|((c, a), d)| (c - a - d).abs())
            .fold(0.0, f64::max);

        let slack = |dual: f64, value: f64, lower: f64, upper: f64| -> f64 {
            if dual > 0.0 {
                dual * (value - lower)
            } else if dual < 0.0 {
                -dual * (upper - value)
            } else {
                0.0
            }
        };
        let cs_rows = self
            .rows
            .iter()
            .zip(&activity)
            .zip(&sol.row_duals)
            .map(|((r, &a), &y)| slack(y, a, r.lower, r.upper).abs())
            .fold(0.0, f64::max);
        let cs_cols = self
            .columns
            .iter()
            .zip(&sol.x)
            .zip(&sol.reduced_costs)
            .map(|((c, &v), &d)| slack(d, v, c.lower, c.upper).abs())
            .fold(0.0, f64::max);

        let primal_min = self.sign() * self.objective_at(&sol.x);
        let dual = self.dual_objective(&sol.row_duals, &sol.reduced_costs);
        let gap = (primal_min - dual).abs();
        LpResiduals {
            primal_row,
            primal_bound,
            dual_infeasibility,
            complementary_slackness: cs_rows.max(cs_cols),
            duality_gap: gap,
            relative_duality_gap: gap / primal_min.abs().max(1.0),
        }
    }

    /// Writes the problem in CPLEX LP text format.
    pub fn write_lp<W: Write>(&self, mut w: W) -> io::Result<()> {
        let names = self.sanitised_names();
        writeln!(
            w,
            "{}",
            match self.sense {
                Sense::Minimise => "Minimize",
                Sense::Maximise => "Maximize",
            }
        )?;
        write!(w, " obj:")?;
        let mut any = false;
        for (i, c) in self.columns.iter().enumerate() {
            if c.cost != 0.0 {
                write!(w, " {}", Term(c.cost, &names[i]))?;
                any = true;
            }
        }
        if !any {
            write!(w, " 0 {}", names.first().map(String::as_str).unwrap_or("x"))?;
        }
        writeln!(w)?;
        writeln!(w, "Subject To")?;
        for (ri, r) in self.rows.iter().enumerate() {
            let mut expr = String::new();
            for (v, a) in &r.coeffs {
                expr.push_str(&format!(" {}", Term(*a, &names[v.0])));
            }
            if expr.is_empty() {
                continue;
            }
            let label = format!("r{ri}_{}", sanitise(&r.name));
            if r.lower == r.upper {
                writeln!(w, " {label}:{expr} = {}", r.lower)?;
            } else {
                if r.lower.is_finite() {
                    writeln!(w, " {label}_lo:{expr} >= {}", r.lower)?;
                }
                if r.upper.is_finite() {
                    writeln!(w, " {label}_up:{expr} <= {}", r.upper)?;
                }
            }
        }
        writeln!(w, "Bounds")?;
        for (i, c) in self.columns.iter().enumerate() {
            let n = &names[i];
            match (c.lower.is_finite(), c.upper.is_finite()) {
                (false, false) => writeln!(w, " {n} free")?,
                (true, true) => writeln!(w, " {} <= {n} <= {}", c.lower, c.upper)?,
                (true, false) => writeln!(w, " {n} >= {}", c.lower)?,
                (false, true) => writeln!(w, " -inf <= {n} <= {}", c.upper)?,
            }
        }
        writeln!(w, "End")
    }

    fn sanitised_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .enumerate()
            .map(|(i, c)| format!("x{i}_{}", sanitise(&c.name)))
            .collect()
    }
}

fn sanitise(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect()
}

struct Term<'a>(f64, &'a str);

impl fmt::Display for Term<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 < 0.0 {
            write!(f, "- {} {}", -self.0, self.1)
        } else {
            write!(f, "+ {} {}", self.0, self.1)
        }
    }
}

/// Worst-case violations of a primal/dual pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LpResiduals {
    pub primal_row: f64,
    pub primal_bound: f64,
    pub dual_infeasibility: f64,
    pub complementary_slackness: f64,
    pub duality_gap: f64,
    pub relative_duality_gap: f64,
}
