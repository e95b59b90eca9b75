//! Linear complementarity: find z >= 0 with w = B + A z >= 0 and z^T w = 0.
//!
//! `lemke` is the production solver; `lcp_oracle` enumerates active sets and
//! is only meant for small verification problems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LcpProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LcpStatus {
    Solved,
    RayTermination,
    CycleLimit,
    /// Oracle only: no active set yields a complementary solution.
    NoSolution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcpSolution {
    pub z: DVector<f64>,
    pub w: DVector<f64>,
    pub status: LcpStatus,
    pub pivots: usize,
}

impl LcpProblem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let p = LcpProblem { a, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.b.len();
        if self.a.nrows() != m || self.a.ncols() != m {
            return Err(Error::Dimension {
                expected: m,
                got: self.a.nrows().max(self.a.ncols()),
            });
        }
        if m == 0 {
            return Err(Error::Lcp("empty problem".into()));
        }
        if self.a.iter().chain(self.b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Lcp("non-finite data".into()));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    /// `1e-9 * (|A|_max + |B|_max)`
    pub fn epsilon(&self) -> f64 {
        1e-9 * (self.a.amax() + self.b.amax()).max(f64::MIN_POSITIVE)
    }

    pub fn w_of(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.b + &self.a * z
    }

    /// Independent check of a candidate solution.
    pub fn certify(&self, z: &DVector<f64>) -> bool {
        let eps = self.epsilon();
        let w = self.w_of(z);
        z.iter().all(|&v| v >= -eps)
            && w.iter().all(|&v| v >= -eps)
            && z.dot(&w).abs() <= eps * (1.0 + z.norm() * w.norm())
    }
}

/// Gauss-Jordan pivot on `t[(r, c)]`.
fn pivot(t: &mut DMatrix<f64>, r: usize, c: usize) {
    let p = t[(r, c)];
    let ncols = t.ncols();
    for j in 0..ncols {
        t[(r, j)] /= p;
    }
    for i in 0..t.nrows() {
        if i == r {
            continue;
        }
        let f = t[(i, c)];
        if f != 0.0 {
            for j in 0..ncols {
                let v = t[(r, j)];
                t[(i, j)] -= f * v;
            }
        }
    }
}

/// Lexicographic minimum ratio test over rows with a positive entry in
/// column `c`. The comparison vector of row `i` is
/// `(rhs_i, (B^-1)_i) / t[(i, c)]`; `B^-1` lives in the first `m` columns.
fn lex_ratio(t: &DMatrix<f64>, c: usize, candidates: &[usize], rhs: usize, m: usize) -> usize {
    let key = |i: usize, k: usize| -> f64 {
        let num = if k == 0 { t[(i, rhs)] } else { t[(i, k - 1)] };
        num / t[(i, c)]
    };
    let mut best = candidates[0];
    for &i in &candidates[1..] {
        for k in 0..=m {
            let (a, b) = (key(i, k), key(best, k));
            if a < b {
                best = i;
                break;
            }
            if a > b {
                break;
            }
        }
    }
    best
}

/// Lemke's complementary pivoting with covering vector `e = 1`.
///
/// Tableau columns: `w_1..w_m, z_1..z_m, z_0, rhs`.
pub fn lemke(prob: &LcpProblem) -> Result<LcpSolution> {
    prob.validate()?;
    let m = prob.m();
    if prob.b.iter().all(|&v| v >= 0.0) {
        let z = DVector::zeros(m);
        return Ok(LcpSolution {
            w: prob.b.clone(),
            z,
            status: LcpStatus::Solved,
            pivots: 0,
        });
    }
    let z0 = 2 * m;
    let rhs = 2 * m + 1;
    let mut t = DMatrix::zeros(m, 2 * m + 2);
    for i in 0..m {
        t[(i, i)] = 1.0;
        for j in 0..m {
            t[(i, m + j)] = -prob.a[(i, j)];
        }
        t[(i, z0)] = -1.0;
        t[(i, rhs)] = prob.b[i];
    }
    let mut basis: Vec<usize> = (0..m).collect();

    // z0 enters at the level that makes every basic variable nonnegative;
    // the leaving row is the lexicographically most negative one.
    // On ties the perturbed rhs (B + B^-1 (eps, eps^2, ..)) is smallest for
    // the largest index.
    let mut r = 0;
    for i in 1..m {
        if t[(i, rhs)] <= t[(r, rhs)] {
            r = i;
        }
    }
    let mut leaving = basis[r];
    pivot(&mut t, r, z0);
    basis[r] = z0;

    let scale = prob.a.amax().max(1.0);
    let cap = 50 * m;
    let mut pivots = 1;
    let status = loop {
        let entering = if leaving < m { leaving + m } else { leaving - m };
        let tol = 1e-12 * scale;
        let candidates: Vec<usize> = (0..m).filter(|&i| t[(i, entering)] > tol).collect();
        if candidates.is_empty() {
            break LcpStatus::RayTermination;
        }
        if pivots >= cap {
            break LcpStatus::CycleLimit;
        }
        let r = lex_ratio(&t, entering, &candidates, rhs, m);
        leaving = basis[r];
        pivot(&mut t, r, entering);
        basis[r] = entering;
        pivots += 1;
        if leaving == z0 {
            break LcpStatus::Solved;
        }
    };

    let mut z = DVector::zeros(m);
    for (i, &v) in basis.iter().enumerate() {
        if (m..2 * m).contains(&v) {
            z[v - m] = t[(i, rhs)].max(0.0);
        }
    }
    if status == LcpStatus::Solved {
        z = polish(prob, z);
    }
    let w = prob.w_of(&z);
    Ok(LcpSolution { z, w, status, pivots })
}

/// Re-solves `A_aa z_a = -B_a` on the support of `z` to remove pivoting
/// round-off; keeps the original if the refined point is no better.
fn polish(prob: &LcpProblem, z: DVector<f64>) -> DVector<f64> {
    let act: Vec<usize> = (0..prob.m()).filter(|&i| z[i] > 0.0).collect();
    if act.is_empty() {
        return z;
    }
    let Some(za) = solve_active(prob, &act) else {
        return z;
    };
    let mut refined = DVector::zeros(prob.m());
    for (k, &i) in act.iter().enumerate() {
        refined[i] = za[k];
    }
    let violation = |z: &DVector<f64>| {
        let w = prob.w_of(z);
        let neg = z.iter().chain(w.iter()).fold(0.0f64, |m, &v| m.max(-v));
        neg.max(z.dot(&w).abs())
    };
    if violation(&refined) <= violation(&z) {
        refined.iter_mut().for_each(|v| *v = v.max(0.0));
        refined
    } else {
        z
    }
}

fn solve_active(prob: &LcpProblem, act: &[usize]) -> Option<DVector<f64>> {
    let k = act.len();
    let aa = DMatrix::from_fn(k, k, |i, j| prob.a[(act[i], act[j])]);
    let rhs = DVector::from_fn(k, |i, _| -prob.b[act[i]]);
    let lu = aa.lu();
    let x = lu.solve(&rhs)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Enumeration over all `2^m` active sets in ascending bitmask order.
pub fn lcp_oracle(prob: &LcpProblem) -> Result<LcpSolution> {
    prob.validate()?;
    let m = prob.m();
    if m > 12 {
        return Err(Error::Lcp(format!("oracle limited to m <= 12, got {m}")));
    }
    let eps = prob.epsilon();
    for mask in 0u32..(1 << m) {
        let act: Vec<usize> = (0..m).filter(|&i| mask & (1 << i) != 0).collect();
        let mut z = DVector::zeros(m);
        if !act.is_empty() {
            let Some(za) = solve_active(prob, &act) else {
                continue;
            };
            if za.iter().any(|&v| v < -eps) {
                continue;
            }
            for (k, &i) in act.iter().enumerate() {
                z[i] = za[k].max(0.0);
            }
        }
        let w = prob.w_of(&z);
        if (0..m).all(|i| mask & (1 << i) != 0 || w[i] >= -eps) {
            return Ok(LcpSolution {
                z,
                w,
                status: LcpStatus::Solved,
                pivots: 0,
            });
        }
    }
    Ok(LcpSolution {
        z: DVector::zeros(m),
        w: prob.b.clone(),
        status: LcpStatus::NoSolution,
        pivots: 0,
    })
}
