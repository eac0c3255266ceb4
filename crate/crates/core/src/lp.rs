//! Dense two-phase simplex over non-negative variables.
//!
//! Bland's rule is used for both entering and leaving choices, so degenerate
//! problems terminate. Problems solved here are small (tens of variables and
//! rows), so a dense tableau is simplest.

use crate::error::{Error, Result};

/// Pivot and reduced-cost tolerance.
pub const LP_TOL: f64 = 1e-9;

const MAX_PIVOTS: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub rel: Relation,
    pub rhs: f64,
}

/// `min objective·x` subject to `rows` and `x >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn push(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.num_vars());
        self.rows.push(Row { coeffs, rel, rhs });
    }

    /// Solves the program. Returns [`Error::Infeasible`] or [`Error::Unbounded`]
    /// when no optimum exists.
    pub fn solve(&self) -> Result<LpSolution> {
        Tableau::build(self)?.solve(&self.objective)
    }

    /// Returns some feasible point, or [`Error::Infeasible`].
    pub fn feasible_point(&self) -> Result<Vec<f64>> {
        let mut t = Tableau::build(self)?;
        t.phase_one()?;
        Ok(t.primal())
    }
}

struct Tableau {
    /// `rows x (cols + 1)`; the last column holds the right-hand side.
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    num_vars: usize,
    /// Columns at or beyond this index are artificial.
    first_artificial: usize,
    cols: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Result<Self> {
        let n = lp.num_vars();
        if let Some(r) = lp.rows.iter().find(|r| {
            r.coeffs.len() != n || !r.rhs.is_finite() || r.coeffs.iter().any(|c| !c.is_finite())
        }) {
            return Err(Error::InvalidParameter(format!(
                "malformed constraint row with {} coefficients for {n} variables",
                r.coeffs.len()
            )));
        }
        // Normalize so every right-hand side is non-negative.
        let rows: Vec<(Vec<f64>, Relation, f64)> = lp
            .rows
            .iter()
            .map(|r| {
                if r.rhs < 0.0 {
                    let rel = match r.rel {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (r.coeffs.iter().map(|c| -c).collect(), rel, -r.rhs)
                } else {
                    (r.coeffs.clone(), r.rel, r.rhs)
                }
            })
            .collect();
        let slacks = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let artificials = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let first_artificial = n + slacks;
        let cols = first_artificial + artificials;
        let mut a = Vec::with_capacity(rows.len());
        let mut basis = Vec::with_capacity(rows.len());
        let (mut s, mut art) = (n, first_artificial);
        for (coeffs, rel, rhs) in rows {
            let mut row = vec![0.0; cols + 1];
            row[..n].copy_from_slice(&coeffs);
            row[cols] = rhs;
            match rel {
                Relation::Le => {
                    row[s] = 1.0;
                    basis.push(s);
                    s += 1;
                }
                Relation::Ge => {
                    row[s] = -1.0;
                    s += 1;
                    row[art] = 1.0;
                    basis.push(art);
                    art += 1;
                }
                Relation::Eq => {
                    row[art] = 1.0;
                    basis.push(art);
                    art += 1;
                }
            }
            a.push(row);
        }
        Ok(Self {
            a,
            basis,
            num_vars: n,
            first_artificial,
            cols,
        })
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.a[r][c];
        for v in self.a[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.a[r].clone();
        for (i, row) in self.a.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes `cost` over columns `< limit`. Returns false when unbounded.
    fn optimize(&mut self, cost: &[f64], limit: usize) -> Result<bool> {
        for _ in 0..MAX_PIVOTS {
            let entering = (0..limit).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let reduced = cost[j]
                    - self
                        .a
                        .iter()
                        .zip(&self.basis)
                        .map(|(row, &b)| cost[b] * row[j])
                        .sum::<f64>();
                reduced < -LP_TOL
            });
            let Some(c) = entering else {
                return Ok(true);
            };
            let mut leave: Option<(f64, usize, usize)> = None;
            for (r, row) in self.a.iter().enumerate() {
                if row[c] > LP_TOL {
                    let ratio = row[self.cols] / row[c];
                    let better = match leave {
                        None => true,
                        Some((best, _, b)) => {
                            ratio < best - LP_TOL || (ratio <= best + LP_TOL && self.basis[r] < b)
                        }
                    };
                    if better {
                        leave = Some((ratio, r, self.basis[r]));
                    }
                }
            }
            match leave {
                None => return Ok(false),
                Some((_, r, _)) => self.pivot(r, c),
            }
        }
        Err(Error::Validation("simplex pivot limit reached".into()))
    }

    fn phase_one(&mut self) -> Result<()> {
        if self.first_artificial == self.cols {
            return Ok(());
        }
        let mut cost = vec![0.0; self.cols];
        for c in cost[self.first_artificial..].iter_mut() {
            *c = 1.0;
        }
        self.optimize(&cost, self.cols)?;
        let infeasibility: f64 = self
            .a
            .iter()
            .zip(&self.basis)
            .filter(|(_, &b)| b >= self.first_artificial)
            .map(|(row, _)| row[self.cols])
            .sum();
        let scale = 1.0
            + self
                .a
                .iter()
                .map(|row| row[self.cols].abs())
                .fold(0.0, f64::max);
        if infeasibility > 1e-7 * scale {
            return Err(Error::Infeasible);
        }
        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut r = 0;
        while r < self.a.len() {
            if self.basis[r] >= self.first_artificial {
                match (0..self.first_artificial).find(|&j| self.a[r][j].abs() > LP_TOL) {
                    Some(c) => self.pivot(r, c),
                    None => {
                        self.a.remove(r);
                        self.basis.remove(r);
                        continue;
                    }
                }
            }
            r += 1;
        }
        Ok(())
    }

    fn primal(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.num_vars];
        for (row, &b) in self.a.iter().zip(&self.basis) {
            if b < self.num_vars {
                x[b] = row[self.cols];
            }
        }
        x
    }

    fn solve(mut self, objective: &[f64]) -> Result<LpSolution> {
        self.phase_one()?;
        let mut cost = vec![0.0; self.cols];
        cost[..self.num_vars].copy_from_slice(objective);
        if !self.optimize(&cost, self.first_artificial)? {
            return Err(Error::Unbounded);
        }
        let x = self.primal();
        let value = x.iter().zip(objective).map(|(a, b)| a * b).sum();
        Ok(LpSolution { x, value })
    }
}
