//! Symmetric operators in sparse (CSC) or dense storage, and a profile
//! (skyline) LDL^T factorization with reverse Cuthill-McKee ordering for the
//! sparse case.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};

pub fn to_dense(a: &CsMat<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.rows(), a.cols());
    for (v, (i, j)) in a.iter() {
        d[(i, j)] += *v;
    }
    d
}

pub fn matvec(a: &CsMat<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.rows());
    for (v, (i, j)) in a.iter() {
        y[i] += v * x[j];
    }
    y
}

/// `A[rows, cols]` as a sparse matrix.
pub fn submatrix(a: &CsMat<f64>, rows: &[usize], cols: &[usize]) -> CsMat<f64> {
    let mut rmap = vec![usize::MAX; a.rows()];
    for (k, &r) in rows.iter().enumerate() {
        rmap[r] = k;
    }
    let mut cmap = vec![usize::MAX; a.cols()];
    for (k, &c) in cols.iter().enumerate() {
        cmap[c] = k;
    }
    let mut t = TriMat::new((rows.len(), cols.len()));
    for (v, (i, j)) in a.iter() {
        if rmap[i] != usize::MAX && cmap[j] != usize::MAX {
            t.add_triplet(rmap[i], cmap[j], *v);
        }
    }
    t.to_csc()
}

/// Symmetric matrix in either storage.
#[derive(Debug, Clone)]
pub enum SymMatrix {
    Sparse(CsMat<f64>),
    Dense(DMatrix<f64>),
}

impl SymMatrix {
    pub fn dim(&self) -> usize {
        match self {
            SymMatrix::Sparse(a) => a.rows(),
            SymMatrix::Dense(a) => a.nrows(),
        }
    }

    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            SymMatrix::Sparse(a) => matvec(a, x),
            SymMatrix::Dense(a) => a * x,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SymMatrix::Sparse(a) => to_dense(a),
            SymMatrix::Dense(a) => a.clone(),
        }
    }

    /// Calls `f(i, j, v)` for every stored entry (both triangles).
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, f64)) {
        match self {
            SymMatrix::Sparse(a) => {
                for (v, (i, j)) in a.iter() {
                    f(i, j, *v);
                }
            }
            SymMatrix::Dense(a) => {
                for j in 0..a.ncols() {
                    for i in 0..a.nrows() {
                        f(i, j, a[(i, j)]);
                    }
                }
            }
        }
    }
}

/// Positive-definite factorization of a symmetric operator.
#[derive(Debug, Clone)]
pub enum SymFactor {
    Skyline(SkylineLdl),
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
}

impl SymFactor {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            SymFactor::Skyline(f) => f.solve(b),
            SymFactor::Dense(c) => c.solve(b),
        }
    }

    pub fn dense(a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        // locate the failing pivot for the error message
        match nalgebra::Cholesky::new(a.clone()) {
            Some(c) => Ok(SymFactor::Dense(c)),
            None => {
                let pivot = (1..=n)
                    .find(|&k| nalgebra::Cholesky::new(a.view((0, 0), (k, k)).into_owned()).is_none())
                    .unwrap_or(0);
                Err(Error::Indefinite {
                    pivot: pivot.saturating_sub(1),
                    value: f64::NAN,
                })
            }
        }
    }

    /// Factors a symmetric matrix given as triplets containing both
    /// triangles (duplicates are summed).
    pub fn sparse(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        SkylineLdl::factor(n, triplets).map(SymFactor::Skyline)
    }
}

/// Reverse Cuthill-McKee ordering of a symmetric pattern. Returns
/// `order[new] = old`.
pub fn rcm_order(n: usize, pairs: impl Iterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j) in pairs {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (degree[u], u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Variable-band LDL^T. Only positive pivots are accepted, so a successful
/// factorization certifies positive definiteness.
#[derive(Debug, Clone)]
pub struct SkylineLdl {
    /// `perm[new] = old`
    perm: Vec<usize>,
    first: Vec<usize>,
    col_ptr: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl SkylineLdl {
    pub fn factor(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let perm = rcm_order(n, triplets.iter().map(|&(i, j, _)| (i, j)));
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for &(i, j, _) in triplets {
            let (a, b) = (inv[i], inv[j]);
            let (r, c) = if a <= b { (a, b) } else { (b, a) };
            first[c] = first[c].min(r);
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        for j in 0..n {
            col_ptr.push(col_ptr[j] + (j - first[j] + 1));
        }
        let mut vals = vec![0.0; col_ptr[n]];
        let mut amax = 0.0f64;
        for &(i, j, v) in triplets {
            let (a, b) = (inv[i], inv[j]);
            if a <= b {
                vals[col_ptr[b] + a - first[b]] += v;
            }
        }
        for j in 0..n {
            amax = amax.max(vals[col_ptr[j + 1] - 1].abs());
        }

        let mut diag = vec![0.0; n];
        for j in 0..n {
            let fj = first[j];
            let cj = col_ptr[j];
            for i in fj..j {
                let fi = first[i];
                let k0 = fi.max(fj);
                let ci = col_ptr[i];
                let mut s = 0.0;
                for k in k0..i {
                    s += vals[ci + k - fi] * vals[cj + k - fj];
                }
                vals[cj + i - fj] -= s;
            }
            let mut djj = vals[cj + j - fj];
            for i in fj..j {
                let g = vals[cj + i - fj];
                let l = g / diag[i];
                vals[cj + i - fj] = l;
                djj -= l * g;
            }
            if !(djj > 1e-13 * amax) {
                return Err(Error::Indefinite {
                    pivot: perm[j],
                    value: djj,
                });
            }
            diag[j] = djj;
        }
        Ok(SkylineLdl {
            perm,
            first,
            col_ptr,
            vals,
            diag,
        })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Entries stored in the profile.
    pub fn profile_size(&self) -> usize {
        self.vals.len()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut x: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for j in 0..n {
            let fj = self.first[j];
            let cj = self.col_ptr[j];
            let col = &self.vals[cj..cj + j - fj];
            let s: f64 = col.iter().zip(&x[fj..j]).map(|(l, xi)| l * xi).sum();
            x[j] -= s;
        }
        for (xj, d) in x.iter_mut().zip(&self.diag) {
            *xj /= d;
        }
        for j in (0..n).rev() {
            let fj = self.first[j];
            let cj = self.col_ptr[j];
            let xj = x[j];
            let col = &self.vals[cj..cj + j - fj];
            for (xi, l) in x[fj..j].iter_mut().zip(col) {
                *xi -= l * xj;
            }
        }
        let mut out = DVector::zeros(n);
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}

/// Triplets (both triangles) of a sparse matrix scaled by `alpha`.
pub fn push_scaled(out: &mut Vec<(usize, usize, f64)>, a: &CsMat<f64>, alpha: f64) {
    if alpha == 0.0 {
        return;
    }
    out.reserve(a.nnz());
    for (v, (i, j)) in a.iter() {
        out.push((i, j, alpha * v));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_spd_sparse(n: usize, seed: u64) -> (Vec<(usize, usize, f64)>, DMatrix<f64>) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut d = DMatrix::<f64>::zeros(n, n);
        let mut trip = Vec::new();
        for _ in 0..3 * n {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i == j {
                continue;
            }
            let v: f64 = rng.gen_range(-1.0..1.0);
            d[(i, j)] += v;
            d[(j, i)] += v;
            trip.push((i, j, v));
            trip.push((j, i, v));
        }
        for i in 0..n {
            let s: f64 = (0..n).map(|j| d[(i, j)].abs()).sum::<f64>() + 1.0;
            d[(i, i)] += s;
            trip.push((i, i, s));
        }
        (trip, d)
    }

    #[test]
    fn skyline_solves_random_spd() {
        for seed in 0..5 {
            let n = 40;
            let (trip, d) = random_spd_sparse(n, seed);
            let f = SkylineLdl::factor(n, &trip).unwrap();
            let b = DVector::from_fn(n, |i, _| (i as f64).sin());
            let x = f.solve(&b);
            assert!((&d * &x - &b).amax() < 1e-12 * b.amax() * d.amax());
        }
    }

    #[test]
    fn skyline_rejects_indefinite() {
        let trip = vec![(0, 0, 1.0), (1, 1, -1.0), (0, 1, 0.1), (1, 0, 0.1)];
        assert!(matches!(
            SkylineLdl::factor(2, &trip),
            Err(Error::Indefinite { .. })
        ));
        assert!(SymFactor::dense(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
    }

    #[test]
    fn rcm_reduces_profile_of_shuffled_band() {
        // tridiagonal matrix with scrambled numbering
        let n = 50;
        let shuffle: Vec<usize> = (0..n).map(|i| (i * 17) % n).collect();
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((shuffle[i], shuffle[i], 4.0));
            if i + 1 < n {
                trip.push((shuffle[i], shuffle[i + 1], -1.0));
                trip.push((shuffle[i + 1], shuffle[i], -1.0));
            }
        }
        let f = SkylineLdl::factor(n, &trip).unwrap();
        assert!(f.profile_size() <= 2 * n);
    }
}
