//! Brute-force reference computations used to cross-check the solvers.
//!
//! These are deliberately independent of [`crate::lp`]: they enumerate
//! vertices by solving square linear systems and never pivot a tableau.

use rand::Rng;

use crate::env::{welfare_against, TypeProfile};
use crate::geometry::{LinearConstraint, Polytope, FEAS_TOL};
use crate::lp::Relation;

/// Row `coeffs·x ≤ rhs` (or `=` when `equality`).
struct HalfRow {
    coeffs: Vec<f64>,
    rhs: f64,
    equality: bool,
}

/// Minimum of `w(θ̃, θ_{-i})` over the polytope, by enumerating the
/// vertices of `{(θ̃, γ) : θ̃ ∈ P, θ̃[α] + Σ_{j≠i}θ_j[α] ≤ γ, γ ≥ 0}`.
///
/// The objective is a maximum of affine functions, so its minimum over `P`
/// need not sit at a vertex of `P` itself; lifting the epigraph variable `γ`
/// restores a linear objective whose minimum is attained at a vertex.
/// Returns `None` when the polytope is empty. Cost is exponential in `|Γ|`.
pub fn min_welfare_by_vertices(
    polytope: &Polytope,
    profile: &TypeProfile,
    agent: usize,
) -> Option<(f64, Vec<f64>)> {
    let others = profile.others_sum(agent).ok()?;
    let m = others.len();
    let d = m + 1;
    let mut rows: Vec<HalfRow> = Vec::new();
    for c in &polytope.constraints {
        let mut coeffs = vec![0.0; d];
        for (&a, &v) in &c.coeffs {
            coeffs[a] += v;
        }
        match c.rel {
            Relation::Le => rows.push(HalfRow {
                coeffs,
                rhs: c.bound,
                equality: false,
            }),
            Relation::Ge => rows.push(HalfRow {
                coeffs: coeffs.iter().map(|v| -v).collect(),
                rhs: -c.bound,
                equality: false,
            }),
            Relation::Eq => rows.push(HalfRow {
                coeffs,
                rhs: c.bound,
                equality: true,
            }),
        }
    }
    for (a, &o) in others.iter().enumerate() {
        let mut coeffs = vec![0.0; d];
        coeffs[a] = 1.0;
        coeffs[m] = -1.0;
        rows.push(HalfRow {
            coeffs,
            rhs: -o,
            equality: false,
        });
    }
    for k in 0..d {
        let mut coeffs = vec![0.0; d];
        coeffs[k] = -1.0;
        rows.push(HalfRow {
            coeffs,
            rhs: 0.0,
            equality: false,
        });
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut subset: Vec<usize> = (0..d).collect();
    loop {
        if let Some(x) = solve_active(&rows, &subset) {
            if feasible(&rows, &x) {
                let theta = x[..m].to_vec();
                let w = welfare_against(&others, &theta).0;
                if best.as_ref().is_none_or(|(b, _)| w < *b) {
                    best = Some((w, theta));
                }
            }
        }
        if !next_combination(&mut subset, rows.len()) {
            break;
        }
    }
    best
}

fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Solves the square system of the chosen rows at equality by Gaussian
/// elimination with partial pivoting; `None` when singular.
fn solve_active(rows: &[HalfRow], subset: &[usize]) -> Option<Vec<f64>> {
    let d = subset.len();
    let mut a: Vec<Vec<f64>> = subset
        .iter()
        .map(|&r| {
            let mut row = rows[r].coeffs.clone();
            row.push(rows[r].rhs);
            row
        })
        .collect();
    for col in 0..d {
        let pivot = (col..d).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, pivot);
        let pivot_row = a[col].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != col {
                let f = row[col] / pivot_row[col];
                if f != 0.0 {
                    for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                        *x -= f * p;
                    }
                }
            }
        }
    }
    Some((0..d).map(|i| a[i][d] / a[i][i]).collect())
}

fn feasible(rows: &[HalfRow], x: &[f64]) -> bool {
    rows.iter().all(|r| {
        let lhs: f64 = r.coeffs.iter().zip(x).map(|(c, v)| c * v).sum();
        let norm = r.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt().max(1.0);
        let slack = (lhs - r.rhs) / norm;
        if r.equality {
            slack.abs() <= FEAS_TOL
        } else {
            slack <= FEAS_TOL
        }
    })
}

/// Random polytope in `dim` coordinates that contains a random point, so it
/// is feasible by construction. Uses between 1 and `max_constraints` rows.
pub fn random_feasible_polytope<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    max_constraints: usize,
) -> Polytope {
    let anchor: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..10.0)).collect();
    random_polytope_around(rng, &anchor, max_constraints)
}

/// Random polytope with between 1 and `max_constraints` rows, each
/// satisfied by `anchor`.
pub fn random_polytope_around<R: Rng + ?Sized>(
    rng: &mut R,
    anchor: &[f64],
    max_constraints: usize,
) -> Polytope {
    let dim = anchor.len();
    let scale = anchor.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let count = rng.gen_range(1..=max_constraints);
    let mut constraints = Vec::with_capacity(count);
    while constraints.len() < count {
        let mut coeffs = std::collections::BTreeMap::new();
        for a in 0..dim {
            if rng.gen_bool(0.5) {
                let c: f64 = rng.gen_range(-1.0..1.0);
                if c.abs() > 0.05 {
                    coeffs.insert(a, c);
                }
            }
        }
        if coeffs.is_empty() {
            continue;
        }
        let lhs: f64 = coeffs.iter().map(|(&a, c)| c * anchor[a]).sum();
        let slack = rng.gen_range(0.0..0.3) * scale;
        let (rel, bound) = match rng.gen_range(0..10) {
            0 => (Relation::Eq, lhs),
            1..=4 => (Relation::Le, lhs + slack),
            _ => (Relation::Ge, lhs - slack),
        };
        constraints.push(LinearConstraint { coeffs, rel, bound });
    }
    Polytope::new(constraints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::weakest_type_lp;

    #[test]
    fn unit_error_vertex_minimum() {
        let profile = TypeProfile::from_rows(vec![vec![4.0, 0.0], vec![1.0, 3.0]]).unwrap();
        let p = Polytope::new(vec![
            LinearConstraint::single(0, Relation::Ge, 3.0),
            LinearConstraint::single(0, Relation::Le, 5.0),
            LinearConstraint::single(1, Relation::Le, 1.0),
        ]);
        let (w, _) = min_welfare_by_vertices(&p, &profile, 0).unwrap();
        assert!((w - 4.0).abs() < 1e-9);
    }

    #[test]
    fn lifted_minimum_can_leave_polytope_vertices() {
        // Segment from (0, 2) to (2, 0) with zero others: both endpoints give
        // welfare 2 but the midpoint (1, 1) gives 1.
        let profile = TypeProfile::from_rows(vec![vec![1.0, 1.0]]).unwrap();
        let mut coeffs = std::collections::BTreeMap::new();
        coeffs.insert(0, 1.0);
        coeffs.insert(1, 1.0);
        let p = Polytope::new(vec![LinearConstraint {
            coeffs,
            rel: Relation::Eq,
            bound: 2.0,
        }]);
        let (w, theta) = min_welfare_by_vertices(&p, &profile, 0).unwrap();
        assert!((w - 1.0).abs() < 1e-9, "{w} at {theta:?}");
        assert!((weakest_type_lp(&p, &profile, 0).unwrap().welfare - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_polytope_has_no_vertices() {
        let profile = TypeProfile::from_rows(vec![vec![1.0]]).unwrap();
        let p = Polytope::new(vec![
            LinearConstraint::single(0, Relation::Ge, 2.0),
            LinearConstraint::single(0, Relation::Le, 1.0),
        ]);
        assert!(min_welfare_by_vertices(&p, &profile, 0).is_none());
    }
}
