//! Dual formulation of the contact problem. For a multiplier vector λ the
//! displacement w(λ) solves a linear system with the effective stiffness
//! `S(λ) = K - Σ λ_k (D_k + D_k^T)`, and the contact conditions become the
//! NCP `λ >= 0, F(λ) >= 0, λ^T F(λ) = 0` with `F_k = w^T D_k w + c_k^T w + b_k`.
//! The NCP is solved by a sequence of LCPs (Josephy-Newton).

use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::ConstraintSet;
use crate::error::{Error, Result};
use crate::fem::TimeLoad;
use crate::lcp::{lemke, LcpProblem, LcpStatus};
use crate::linalg::{push_scaled, SymFactor, SymMatrix};

/// System data of a full or reduced model.
#[derive(Debug, Clone)]
pub struct OperatorBundle {
    pub mass: SymMatrix,
    pub stiffness: SymMatrix,
    pub constraints: ConstraintSet,
    /// `D_k + D_k^T` on the local DOFs of constraint k.
    pub d_sym: Vec<DMatrix<f64>>,
    pub load: TimeLoad,
    cache: CondensedCache,
}

/// `αM + βK` factored once, plus its inverse restricted to the constraint
/// support: `G = P^T A0^{-1} P` and `XG = A0^{-1} P G^{-1}`.
#[derive(Debug)]
struct Condensed {
    alpha: f64,
    beta: f64,
    base: SymFactor,
    support: Vec<usize>,
    xg: DMatrix<f64>,
    g_inv: DMatrix<f64>,
}

#[derive(Debug, Default)]
struct CondensedCache(Mutex<Vec<Arc<Condensed>>>);

impl Clone for CondensedCache {
    fn clone(&self) -> Self {
        CondensedCache(Mutex::new(self.0.lock().unwrap().clone()))
    }
}

/// Solver for `αM + β S(λ)`. For sparse operators the λ-dependent part only
/// lives on the constraint support, so `A = A0 - P E P^T`. With
/// `y = A0^{-1} r`, `t = P^T y` and the support Schur complement
/// `H = G^{-1} - E`: `A^{-1} r = y + XG (H^{-1} G^{-1} t - t)`.
/// `A` is positive definite exactly when `H` is.
enum StepSolver {
    Direct(SymFactor),
    Condensed { base: Arc<Condensed>, h: Cholesky<f64, Dyn> },
}

impl StepSolver {
    fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        match self {
            StepSolver::Direct(f) => f.solve(r),
            StepSolver::Condensed { base, h } => {
                let mut y = base.base.solve(r);
                if base.support.is_empty() {
                    return y;
                }
                let t = DVector::from_iterator(base.support.len(), base.support.iter().map(|&i| y[i]));
                let corr = h.solve(&(&base.g_inv * &t)) - t;
                y.gemv(1.0, &base.xg, &corr, 1.0);
                y
            }
        }
    }
}

impl OperatorBundle {
    pub fn new(mass: SymMatrix, stiffness: SymMatrix, constraints: ConstraintSet, load: TimeLoad) -> Result<Self> {
        let n = stiffness.dim();
        for (what, got) in [
            ("mass", mass.dim()),
            ("constraints", constraints.dim),
            ("load", load.dim()),
        ] {
            if got != n {
                log::error!("{what} dimension {got} does not match stiffness {n}");
                return Err(Error::Dimension { expected: n, got });
            }
        }
        let d_sym = constraints.constraints.iter().map(|c| c.d_sym()).collect();
        Ok(OperatorBundle {
            mass,
            stiffness,
            constraints,
            d_sym,
            load,
            cache: CondensedCache::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.stiffness.dim()
    }

    pub fn m(&self) -> usize {
        self.constraints.m()
    }

    pub fn set_constraints(&mut self, constraints: ConstraintSet) -> Result<()> {
        if constraints.dim != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: constraints.dim,
            });
        }
        self.d_sym = constraints.constraints.iter().map(|c| c.d_sym()).collect();
        if constraints.support() != self.constraints.support() {
            self.cache.0.lock().unwrap().clear();
        }
        self.constraints = constraints;
        Ok(())
    }

    /// `S(λ)` as a dense matrix.
    pub fn effective_stiffness(&self, lambda: &DVector<f64>) -> DMatrix<f64> {
        let mut s = self.stiffness.to_dense();
        for (k, con) in self.constraints.constraints.iter().enumerate() {
            let l = lambda[k];
            if l == 0.0 {
                continue;
            }
            for (a, &i) in con.dofs.iter().enumerate() {
                for (b, &j) in con.dofs.iter().enumerate() {
                    s[(i, j)] -= l * self.d_sym[k][(a, b)];
                }
            }
        }
        s
    }

    fn condensed(&self, alpha: f64, beta: f64, m: &sprs::CsMat<f64>, k: &sprs::CsMat<f64>) -> Result<Arc<Condensed>> {
        let mut cache = self.cache.0.lock().unwrap();
        if let Some(c) = cache.iter().find(|c| c.alpha == alpha && c.beta == beta) {
            return Ok(c.clone());
        }
        let n = self.n();
        let mut trip = Vec::with_capacity(m.nnz() + k.nnz());
        push_scaled(&mut trip, m, alpha);
        push_scaled(&mut trip, k, beta);
        let base = SymFactor::sparse(n, &trip)?;
        let support = self.constraints.support();
        let cols: Vec<DVector<f64>> = support
            .par_iter()
            .map(|&i| {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                base.solve(&e)
            })
            .collect();
        let s = support.len();
        let x = DMatrix::from_fn(n, s, |i, j| cols[j][i]);
        let g = DMatrix::from_fn(s, s, |a, b| 0.5 * (x[(support[a], b)] + x[(support[b], a)]));
        let g_inv = Cholesky::new(g)
            .ok_or(Error::Indefinite {
                pivot: 0,
                value: f64::NAN,
            })?
            .inverse();
        let xg = x * &g_inv;
        let c = Arc::new(Condensed {
            alpha,
            beta,
            base,
            support,
            xg,
            g_inv,
        });
        cache.push(c.clone());
        Ok(c)
    }

    /// Factorization of `alpha M + beta S(λ)`.
    fn factor(&self, alpha: f64, beta: f64, lambda: &DVector<f64>) -> Result<StepSolver> {
        let result = match (&self.mass, &self.stiffness) {
            (SymMatrix::Sparse(m), SymMatrix::Sparse(k)) => self.condensed(alpha, beta, m, k).and_then(|base| {
                let mut h = base.g_inv.clone();
                for (kk, con) in self.constraints.constraints.iter().enumerate() {
                    let l = lambda[kk];
                    if l == 0.0 {
                        continue;
                    }
                    let pos: Vec<usize> = con
                        .dofs
                        .iter()
                        .map(|d| base.support.binary_search(d).unwrap())
                        .collect();
                    for (a, &i) in pos.iter().enumerate() {
                        for (b, &j) in pos.iter().enumerate() {
                            h[(i, j)] -= beta * l * self.d_sym[kk][(a, b)];
                        }
                    }
                }
                Cholesky::new(h)
                    .map(|h| StepSolver::Condensed { base, h })
                    .ok_or(Error::Indefinite {
                        pivot: 0,
                        value: f64::NAN,
                    })
            }),
            _ => {
                let mut a = self.effective_stiffness(lambda) * beta;
                if alpha != 0.0 {
                    a += self.mass.to_dense() * alpha;
                }
                SymFactor::dense(a).map(StepSolver::Direct)
            }
        };
        result.map_err(|e| match e {
            Error::Indefinite { .. } => Error::IndefiniteAtMultiplier {
                lambda: lambda.iter().copied().collect(),
            },
            other => other,
        })
    }

    /// `F(w)`, the constraint values at displacement `w`.
    pub fn constraint_f(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.constraints.constraints.iter().map(|c| c.eval(w)))
    }

    /// Rows `Z_k = w^T (D_k + D_k^T) + c_k^T` as dense columns.
    fn z_columns(&self, w: &DVector<f64>) -> Vec<DVector<f64>> {
        let n = self.n();
        self.constraints.constraints.iter().map(|c| c.gradient(w, n)).collect()
    }

    pub fn static_w(&self, t: f64, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        let fac = self.factor(0.0, 1.0, lambda)?;
        Ok(fac.solve(&self.static_rhs(t, lambda)))
    }

    fn static_rhs(&self, t: f64, lambda: &DVector<f64>) -> DVector<f64> {
        self.load.eval(t) + self.constraints.c_transpose_mul(lambda)
    }

    fn dynamic_rhs(&self, hist: &StepHistory, lambda: &DVector<f64>) -> DVector<f64> {
        let h2 = hist.h * hist.h;
        let mut rhs = (self.load.eval(hist.t_next) + self.constraints.c_transpose_mul(lambda)) * h2;
        rhs += self.mass.mul(&(&hist.w_prev * 2.0 - &hist.w_prev2));
        rhs
    }

    /// `w = (M + h^2 S(λ_S))^{-1} (h^2 f + h^2 C^T λ + 2 M w_i - M w_{i-1})`
    /// with `λ_S = λ`, or `λ_S = λ_prev` under [`StiffnessLag::PreviousStep`].
    pub fn dynamic_w(&self, hist: &StepHistory, lambda: &DVector<f64>, lag: StiffnessLag) -> Result<DVector<f64>> {
        let ls = match lag {
            StiffnessLag::Current => lambda,
            StiffnessLag::PreviousStep => &hist.lambda_prev,
        };
        let fac = self.factor(1.0, hist.h * hist.h, ls)?;
        Ok(fac.solve(&self.dynamic_rhs(hist, lambda)))
    }

    /// `w(λ)`, `F(λ)` and `DF(λ)` from a single factorization.
    pub fn linearize(&self, ctx: &Context, lambda: &DVector<f64>) -> Result<Linearization> {
        let m = self.m();
        let (fac, rhs, scale, ls_is_lambda) = match ctx {
            Context::Static { t } => (self.factor(0.0, 1.0, lambda)?, self.static_rhs(*t, lambda), 1.0, true),
            Context::Dynamic { hist, lag } => {
                let h2 = hist.h * hist.h;
                let ls = match lag {
                    StiffnessLag::Current => lambda,
                    StiffnessLag::PreviousStep => &hist.lambda_prev,
                };
                (
                    self.factor(1.0, h2, ls)?,
                    self.dynamic_rhs(hist, lambda),
                    h2,
                    *lag == StiffnessLag::Current,
                )
            }
        };
        let w = fac.solve(&rhs);
        let f = self.constraint_f(&w);
        let z = self.z_columns(&w);
        // dw/dλ_j = scale * A^{-1} (c_j + D_sym_j w) when S follows λ, else
        // scale * A^{-1} c_j
        let n = self.n();
        let jac = if let StepSolver::Condensed { base, h } = &fac {
            // on the support A^{-1} P = XG H^{-1} and P^T XG = I
            let restrict = |v: &DVector<f64>| DVector::from_iterator(base.support.len(), base.support.iter().map(|&i| v[i]));
            let zs: Vec<DVector<f64>> = z.iter().map(restrict).collect();
            let rhs: Vec<DVector<f64>> = if ls_is_lambda {
                zs.clone()
            } else {
                self.constraints.constraints.iter().map(|c| restrict(&c.dense_c(n))).collect()
            };
            let sens: Vec<DVector<f64>> = rhs.iter().map(|v| h.solve(v)).collect();
            DMatrix::from_fn(m, m, |i, j| scale * zs[i].dot(&sens[j]))
        } else {
            let sens: Vec<DVector<f64>> = if ls_is_lambda {
                z.par_iter().map(|zj| fac.solve(zj)).collect()
            } else {
                self.constraints
                    .constraints
                    .par_iter()
                    .map(|c| fac.solve(&c.dense_c(n)))
                    .collect()
            };
            DMatrix::from_fn(m, m, |i, j| scale * z[i].dot(&sens[j]))
        };
        Ok(Linearization { w, f, jac })
    }

    pub fn jacobian(&self, ctx: &Context, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.linearize(ctx, lambda)?.jac)
    }

    /// `w(λ)` for the given context.
    pub fn w(&self, ctx: &Context, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        match ctx {
            Context::Static { t } => self.static_w(*t, lambda),
            Context::Dynamic { hist, lag } => self.dynamic_w(hist, lambda, *lag),
        }
    }
}

/// Displacement history of the two-step implicit scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct StepHistory {
    /// w at t_i
    pub w_prev: DVector<f64>,
    /// w at t_{i-1}
    pub w_prev2: DVector<f64>,
    pub lambda_prev: DVector<f64>,
    pub h: f64,
    pub t_next: f64,
}

/// Which multiplier the effective stiffness inside the dynamic solve uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StiffnessLag {
    /// S(λ) at the current iterate.
    #[default]
    Current,
    /// S frozen at the previous step's converged multiplier.
    PreviousStep,
}

#[derive(Debug, Clone)]
pub enum Context {
    Static { t: f64 },
    Dynamic { hist: StepHistory, lag: StiffnessLag },
}

#[derive(Debug, Clone)]
pub struct Linearization {
    pub w: DVector<f64>,
    pub f: DVector<f64>,
    pub jac: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcpOptions {
    /// Absolute step tolerance; `None` uses `1e-10 (1 + max(|λ0|, |z_l|))`.
    pub tol: Option<f64>,
    pub max_iter: usize,
}

impl Default for NcpOptions {
    fn default() -> Self {
        NcpOptions {
            tol: None,
            max_iter: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcpReport {
    pub lambda: DVector<f64>,
    pub w: DVector<f64>,
    /// F at the returned multiplier.
    pub f: DVector<f64>,
    pub iterations: usize,
    /// `|z_l - z_{l-1}|` per iteration.
    pub residuals: Vec<f64>,
    pub restarted: bool,
}

impl NcpReport {
    /// `λ >= 0, F >= -ε, |λ^T F| <= ε` with `ε = 1e-8 (1 + |λ|)(1 + |F|)`.
    pub fn complementarity_holds(&self) -> bool {
        complementarity_holds(&self.lambda, &self.f)
    }
}

pub fn complementarity_holds(lambda: &DVector<f64>, f: &DVector<f64>) -> bool {
    let eps = 1e-8 * (1.0 + lambda.norm()) * (1.0 + f.norm());
    lambda.iter().all(|&l| l >= 0.0) && f.iter().all(|&v| v >= -eps) && lambda.dot(f).abs() <= eps
}

/// Sequential LCP iteration: at `z_{l-1}` solve the LCP with
/// `A = DF(z_{l-1})`, `B = F(z_{l-1}) - A z_{l-1}` by Lemke's method, stop once
/// `|z_l - z_{l-1}|` drops below the tolerance.
pub fn solve_ncp(
    ops: &OperatorBundle,
    ctx: &Context,
    lambda0: &DVector<f64>,
    opts: &NcpOptions,
) -> Result<NcpReport> {
    let m = ops.m();
    if lambda0.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: lambda0.len(),
        });
    }
    if lambda0.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::Lcp("initial multiplier must be nonnegative".into()));
    }
    if m == 0 {
        let w = ops.w(ctx, lambda0)?;
        return Ok(NcpReport {
            lambda: DVector::zeros(0),
            w,
            f: DVector::zeros(0),
            iterations: 1,
            residuals: vec![0.0],
            restarted: false,
        });
    }
    let norm0 = lambda0.norm();
    let mut z = lambda0.clone();
    let mut residuals = Vec::new();
    let mut restarted = false;
    for _ in 0..opts.max_iter {
        let lin = ops.linearize(ctx, &z)?;
        let b = &lin.f - &lin.jac * &z;
        let sol = lemke(&LcpProblem::new(lin.jac.clone(), b)?)?;
        if sol.status != LcpStatus::Solved {
            if restarted {
                return Err(Error::Lcp(format!(
                    "{:?} after restart at iteration {}",
                    sol.status,
                    residuals.len() + 1
                )));
            }
            log::debug!("lcp {:?}, restarting from zero", sol.status);
            restarted = true;
            residuals.push(f64::NAN);
            z = DVector::zeros(m);
            continue;
        }
        let r = (&sol.z - &z).norm();
        residuals.push(r);
        z = sol.z;
        let tol = opts.tol.unwrap_or(1e-10 * (1.0 + norm0.max(z.norm())));
        if r < tol {
            // w and F at the accepted multiplier
            let w = ops.w(ctx, &z)?;
            let f = ops.constraint_f(&w);
            return Ok(NcpReport {
                lambda: z,
                w,
                f,
                iterations: residuals.len(),
                residuals,
                restarted,
            });
        }
    }
    Err(Error::NcpNotConverged {
        iterations: residuals.len(),
        last_residual: residuals.last().copied().unwrap_or(f64::NAN),
        residuals,
    })
}
