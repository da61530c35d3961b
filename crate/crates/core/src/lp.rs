//! Dense two-phase tableau simplex.
//!
//! Problems are stated as `minimize c·x` over `x ≥ 0` subject to rows
//! `a·x {≤,=,≥} b`. Entering and leaving variables follow Bland's rule so
//! degenerate problems (which every zero-valued per-round game is) cannot
//! cycle.

/// Pivot and reduced-cost tolerance.
pub const PIVOT_TOL: f64 = 1e-10;

const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    num_vars: usize,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
    /// Pivot limit hit; indicates a numerical problem.
    Stalled,
}

impl LinearProgram {
    /// A program over `num_vars` nonnegative variables with a zero objective.
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    /// Set the (minimized) objective.
    pub fn minimize(&mut self, objective: Vec<f64>) -> &mut Self {
        assert_eq!(objective.len(), self.num_vars, "objective length");
        self.objective = objective;
        self
    }

    pub fn constrain(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        assert_eq!(coeffs.len(), self.num_vars, "constraint length");
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        self
    }

    pub fn solve(&self) -> LpOutcome {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// Row-major `rows × (cols + 1)`; the last column is the right-hand side.
    data: Vec<f64>,
    basis: Vec<usize>,
    first_artificial: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.num_vars;
        let m = lp.constraints.len();

        // Normalize to nonnegative right-hand sides.
        let rows: Vec<(Vec<f64>, Relation, f64)> = lp
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let flipped = match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (c.coeffs.iter().map(|v| -v).collect(), flipped, -c.rhs)
                } else {
                    (c.coeffs.clone(), c.relation, c.rhs)
                }
            })
            .collect();

        let slack_count = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let art_count = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let first_slack = n;
        let first_artificial = n + slack_count;
        let cols = first_artificial + art_count;
        let width = cols + 1;

        let mut data = vec![0.0; m * width];
        let mut basis = vec![0; m];
        let mut next_slack = first_slack;
        let mut next_art = first_artificial;
        for (i, (coeffs, rel, rhs)) in rows.into_iter().enumerate() {
            let row = &mut data[i * width..(i + 1) * width];
            row[..n].copy_from_slice(&coeffs);
            row[cols] = rhs;
            match rel {
                Relation::Le => {
                    row[next_slack] = 1.0;
                    basis[i] = next_slack;
                    next_slack += 1;
                }
                Relation::Ge => {
                    row[next_slack] = -1.0;
                    next_slack += 1;
                    row[next_art] = 1.0;
                    basis[i] = next_art;
                    next_art += 1;
                }
                Relation::Eq => {
                    row[next_art] = 1.0;
                    basis[i] = next_art;
                    next_art += 1;
                }
            }
        }

        Self {
            rows: m,
            cols,
            data,
            basis,
            first_artificial,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.cols + 1) + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.data[i * (self.cols + 1) + self.cols]
    }

    fn pivot(&mut self, obj: &mut [f64], pr: usize, pc: usize) {
        let width = self.cols + 1;
        let p = self.at(pr, pc);
        for v in &mut self.data[pr * width..(pr + 1) * width] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.data[pr * width..(pr + 1) * width].to_vec();
        for i in 0..self.rows {
            if i == pr {
                continue;
            }
            let factor = self.data[i * width + pc];
            if factor != 0.0 {
                let row = &mut self.data[i * width..(i + 1) * width];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * pv;
                }
                row[pc] = 0.0;
            }
        }
        let factor = obj[pc];
        if factor != 0.0 {
            for (v, pv) in obj.iter_mut().zip(&pivot_row) {
                *v -= factor * pv;
            }
            obj[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Objective row (reduced costs, last entry = −objective value) for cost
    /// vector `cost` given the current basis.
    fn objective_row(&self, cost: &[f64]) -> Vec<f64> {
        let mut obj = vec![0.0; self.cols + 1];
        obj[..cost.len()].copy_from_slice(cost);
        for i in 0..self.rows {
            let cb = cost.get(self.basis[i]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for j in 0..=self.cols {
                    obj[j] -= cb * self.at(i, j);
                }
            }
        }
        obj
    }

    /// Bland's-rule simplex iterations over columns `< limit`.
    fn iterate(&mut self, obj: &mut [f64], limit: usize) -> Result<(), LpOutcome> {
        // Columns whose negative reduced cost is rounding noise: every
        // positive entry is below the pivot tolerance, so no ratio test is
        // trustworthy. They are passed over until the basis changes.
        let mut noise = vec![false; limit];
        for _ in 0..MAX_PIVOTS {
            let Some(pc) = (0..limit).find(|&j| !noise[j] && obj[j] < -PIVOT_TOL) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            let mut any_positive = false;
            for i in 0..self.rows {
                let a = self.at(i, pc);
                any_positive |= a > 0.0;
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12
                                || ((ratio - br).abs() <= 1e-12 && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((pr, _)) => {
                    self.pivot(obj, pr, pc);
                    noise.iter_mut().for_each(|v| *v = false);
                }
                None if any_positive => noise[pc] = true,
                None => return Err(LpOutcome::Unbounded),
            }
        }
        Err(LpOutcome::Stalled)
    }

    fn run(mut self, lp: &LinearProgram) -> LpOutcome {
        let n = lp.num_vars;

        // Phase one: minimize the sum of artificial variables.
        if self.first_artificial < self.cols {
            let mut cost = vec![0.0; self.cols];
            for c in cost.iter_mut().skip(self.first_artificial) {
                *c = 1.0;
            }
            let mut obj = self.objective_row(&cost);
            if let Err(outcome) = self.iterate(&mut obj, self.cols) {
                return outcome;
            }
            let scale = 1.0
                + (0..self.rows)
                    .map(|i| self.rhs(i).abs())
                    .fold(0.0, f64::max);
            let infeasibility = -obj[self.cols];
            if infeasibility > 1e-9 * scale {
                return LpOutcome::Infeasible;
            }
            // Drive zero-level artificials out of the basis; drop redundant rows.
            let mut i = 0;
            while i < self.rows {
                if self.basis[i] >= self.first_artificial {
                    let col = (0..self.first_artificial).find(|&j| self.at(i, j).abs() > PIVOT_TOL);
                    match col {
                        Some(j) => {
                            self.pivot(&mut obj, i, j);
                            i += 1;
                        }
                        None => {
                            let width = self.cols + 1;
                            self.data.drain(i * width..(i + 1) * width);
                            self.basis.remove(i);
                            self.rows -= 1;
                        }
                    }
                } else {
                    i += 1;
                }
            }
        }

        // Phase two over the original and slack columns.
        let mut obj = self.objective_row(&lp.objective);
        if let Err(outcome) = self.iterate(&mut obj, self.first_artificial) {
            return outcome;
        }

        let mut x = vec![0.0; n];
        for i in 0..self.rows {
            if self.basis[i] < n {
                x[self.basis[i]] = self.rhs(i).max(0.0);
            }
        }
        let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        LpOutcome::Optimal { x, objective }
    }
}
