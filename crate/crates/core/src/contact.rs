//! Node-to-segment contact: the angular gap function, its exact quadratic
//! expansion in the nodal displacements, and the local segment update for
//! sliding nodes.
//!
//! The gap of node `r` against segment `(p, p~)` is `M = n^T (r - p)` with the
//! unnormalized normal `n = R (p~ - p)`, `R` the +90 degree rotation. `M`
//! scales with the segment length, so contact multipliers scale inversely
//! with it.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::mesh::{ContactSection, DofMap, DofPartition, Mesh2D};

/// Default smoothing band for [`update_pairing`].
pub const DEFAULT_UPDATE_TOL: f64 = 0.1;

fn rot90() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

/// `R (p~ - p)`; not normalized.
pub fn segment_normal(p: [f64; 2], p_end: [f64; 2]) -> Result<[f64; 2]> {
    if p == p_end {
        return Err(Error::CoincidentEndpoints);
    }
    let n = rot90() * Vector2::new(p_end[0] - p[0], p_end[1] - p[1]);
    Ok([n[0], n[1]])
}

/// Signed angular gap `n^T (r - p)`: positive on the normal side of the
/// segment line, zero on the line.
pub fn angular_gap(p: [f64; 2], p_end: [f64; 2], r: [f64; 2]) -> Result<f64> {
    let n = segment_normal(p, p_end)?;
    Ok(n[0] * (r[0] - p[0]) + n[1] * (r[1] - p[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

/// Penetrating nodes, the ordered segment list and the selecting map
/// `selecting[i]` = segment of `nodes[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactPairing {
    pub nodes: Vec<usize>,
    pub segments: Vec<Segment>,
    pub selecting: Vec<usize>,
}

impl ContactPairing {
    pub fn new(nodes: Vec<usize>, segments: Vec<Segment>, selecting: Vec<usize>) -> Result<Self> {
        let p = ContactPairing {
            nodes,
            segments,
            selecting,
        };
        p.validate()?;
        Ok(p)
    }

    /// From a mesh contact section. Without an explicit pairing, node `i`
    /// is paired with segment `i` (counts must agree).
    pub fn from_section(section: &ContactSection) -> Result<Self> {
        let segments = section
            .segments
            .iter()
            .map(|s| Segment {
                start: s[0],
                end: s[1],
            })
            .collect::<Vec<_>>();
        let selecting = if section.pairing.is_empty() {
            if section.nodes.len() != segments.len() {
                return Err(Error::InvalidContact(format!(
                    "no pairing given and {} nodes vs {} segments",
                    section.nodes.len(),
                    segments.len()
                )));
            }
            (0..segments.len()).collect()
        } else {
            section.pairing.clone()
        };
        Self::new(section.nodes.clone(), segments, selecting)
    }

    pub fn to_section(&self) -> ContactSection {
        ContactSection {
            nodes: self.nodes.clone(),
            segments: self.segments.iter().map(|s| [s.start, s.end]).collect(),
            pairing: self.selecting.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.selecting.len() != self.nodes.len() {
            return Err(Error::InvalidContact("selecting map is not total".into()));
        }
        if let Some(&s) = self.selecting.iter().find(|&&s| s >= self.segments.len()) {
            return Err(Error::InvalidContact(format!("selected segment {s} does not exist")));
        }
        if let Some(s) = self.segments.iter().find(|s| s.start == s.end) {
            return Err(Error::InvalidContact(format!(
                "segment with equal endpoints {}",
                s.start
            )));
        }
        Ok(())
    }

    /// Every node touched by a node or a segment.
    pub fn all_nodes(&self) -> std::collections::BTreeSet<usize> {
        self.nodes
            .iter()
            .copied()
            .chain(self.segments.iter().flat_map(|s| [s.start, s.end]))
            .collect()
    }

    /// (segment start, segment end, node) of constraint `k`.
    pub fn triple(&self, k: usize) -> (usize, usize, usize) {
        let s = self.segments[self.selecting[k]];
        (s.start, s.end, self.nodes[k])
    }
}

/// One constraint `q^T D q + c^T q + b >= 0` restricted to the DOFs it
/// touches. `d` is stored unsymmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticConstraint {
    pub dofs: Vec<usize>,
    pub d: DMatrix<f64>,
    pub c: DVector<f64>,
    pub b: f64,
}

impl QuadraticConstraint {
    fn gather(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dofs.len(), self.dofs.iter().map(|&i| q[i]))
    }

    pub fn eval(&self, q: &DVector<f64>) -> f64 {
        let x = self.gather(q);
        x.dot(&(&self.d * &x)) + self.c.dot(&x) + self.b
    }

    /// `D + D^T` on the local DOFs.
    pub fn d_sym(&self) -> DMatrix<f64> {
        &self.d + self.d.transpose()
    }

    /// `(D + D^T) q + c` scattered to a vector of length `n`.
    pub fn gradient(&self, q: &DVector<f64>, n: usize) -> DVector<f64> {
        let x = self.gather(q);
        let g = self.d_sym() * x + &self.c;
        let mut out = DVector::zeros(n);
        for (a, &i) in self.dofs.iter().enumerate() {
            out[i] += g[a];
        }
        out
    }

    /// The local data embedded in `n x n` / length-`n` storage.
    pub fn dense_d(&self, n: usize) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(n, n);
        for (a, &i) in self.dofs.iter().enumerate() {
            for (b, &j) in self.dofs.iter().enumerate() {
                d[(i, j)] += self.d[(a, b)];
            }
        }
        d
    }

    pub fn dense_c(&self, n: usize) -> DVector<f64> {
        let mut c = DVector::zeros(n);
        for (a, &i) in self.dofs.iter().enumerate() {
            c[i] += self.c[a];
        }
        c
    }
}

/// All contact constraints of one pairing, on a displacement space of
/// dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub dim: usize,
    pub constraints: Vec<QuadraticConstraint>,
}

impl ConstraintSet {
    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn b(&self) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.constraints.iter().map(|c| c.b))
    }

    /// Dense `m x dim` matrix with rows `c_k^T`.
    pub fn c_matrix(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.m(), self.dim);
        for (k, con) in self.constraints.iter().enumerate() {
            for (a, &i) in con.dofs.iter().enumerate() {
                c[(k, i)] += con.c[a];
            }
        }
        c
    }

    /// `C^T lambda`.
    pub fn c_transpose_mul(&self, lambda: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for (con, &l) in self.constraints.iter().zip(lambda.iter()) {
            for (a, &i) in con.dofs.iter().enumerate() {
                out[i] += l * con.c[a];
            }
        }
        out
    }

    /// DOFs touched by any constraint, ascending.
    pub fn support(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.constraints.iter().flat_map(|c| c.dofs.iter().copied()).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// `g_k = q^T D_k q + c_k^T q + b_k` via the local blocks.
    pub fn evaluate(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        if q.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: q.len(),
            });
        }
        Ok(DVector::from_iterator(
            self.m(),
            self.constraints.iter().map(|c| c.eval(q)),
        ))
    }
}

/// Local quadratic data of `M` for DOF order (u_p, u_p~, u_r), expanded about
/// the reference positions.
pub fn local_quadratic(p: [f64; 2], p_end: [f64; 2], r: [f64; 2]) -> (DMatrix<f64>, DVector<f64>, f64) {
    // M(x) = (A0 + Ea x)^T R^T (B0 + Eb x)
    let rt = rot90().transpose();
    let a0 = Vector2::new(p_end[0] - p[0], p_end[1] - p[1]);
    let b0 = Vector2::new(r[0] - p[0], r[1] - p[1]);
    let mut ea = DMatrix::zeros(2, 6);
    let mut eb = DMatrix::zeros(2, 6);
    for i in 0..2 {
        ea[(i, i)] = -1.0;
        ea[(i, 2 + i)] = 1.0;
        eb[(i, i)] = -1.0;
        eb[(i, 4 + i)] = 1.0;
    }
    let rt_d = DMatrix::from_fn(2, 2, |i, j| rt[(i, j)]);
    let r_d = rt_d.transpose();
    let a0d = DVector::from_column_slice(a0.as_slice());
    let b0d = DVector::from_column_slice(b0.as_slice());
    let d = ea.transpose() * &rt_d * &eb;
    let c = ea.transpose() * (&rt_d * &b0d) + eb.transpose() * (&r_d * &a0d);
    let b = a0.dot(&(rt * b0));
    (d, c, b)
}

/// Assembles `(D_k, c_k, b_k)` for every node of the pairing from the
/// reference coordinates. Fixed DOFs drop out; every remaining DOF must be a
/// master DOF of `partition` when one is given.
pub fn assemble_constraints(
    mesh: &Mesh2D,
    dofs: &DofMap,
    pairing: &ContactPairing,
    partition: Option<&DofPartition>,
) -> Result<ConstraintSet> {
    pairing.validate()?;
    let n_nodes = mesh.n_nodes();
    let mut constraints = Vec::with_capacity(pairing.len());
    for k in 0..pairing.len() {
        let (p, pe, r) = pairing.triple(k);
        if p >= n_nodes || pe >= n_nodes || r >= n_nodes {
            return Err(Error::InvalidContact(format!(
                "constraint {k} references a node outside the mesh"
            )));
        }
        let (d6, c6, b) = local_quadratic(mesh.coords[p], mesh.coords[pe], mesh.coords[r]);
        let local: Vec<Option<usize>> = [p, pe, r]
            .iter()
            .flat_map(|&node| [dofs.free(node, 0), dofs.free(node, 1)])
            .collect();
        let mut uniq: Vec<usize> = local.iter().flatten().copied().collect();
        uniq.sort_unstable();
        uniq.dedup();
        if let Some(part) = partition {
            if let Some(&bad) = uniq.iter().find(|&&f| part.master_position(f).is_none()) {
                return Err(Error::InvalidContact(format!(
                    "constraint {k} touches non-master DOF {bad}"
                )));
            }
        }
        let pos = |f: usize| uniq.binary_search(&f).unwrap();
        let mut d = DMatrix::zeros(uniq.len(), uniq.len());
        let mut c = DVector::zeros(uniq.len());
        for a in 0..6 {
            let Some(fa) = local[a] else { continue };
            c[pos(fa)] += c6[a];
            for bb in 0..6 {
                let Some(fb) = local[bb] else { continue };
                d[(pos(fa), pos(fb))] += d6[(a, bb)];
            }
        }
        constraints.push(QuadraticConstraint { dofs: uniq, d, c, b });
    }
    Ok(ConstraintSet {
        dim: dofs.n_free(),
        constraints,
    })
}

/// `g(q)` for a constraint set.
pub fn evaluate_gap(cs: &ConstraintSet, q: &DVector<f64>) -> Result<DVector<f64>> {
    cs.evaluate(q)
}

/// Result of one sweep of the segment update.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingUpdate {
    pub pairing: ContactPairing,
    /// Positions (in the node list) whose segment changed.
    pub moved: Vec<usize>,
    /// Positions skipped because their deformed segment degenerated.
    pub skipped: Vec<usize>,
    /// Projection parameter of every node against its old segment.
    pub alpha: Vec<f64>,
}

impl PairingUpdate {
    pub fn changed(&self) -> bool {
        !self.moved.is_empty()
    }
}

/// Projection parameter of `r` on the line through `p`, `p_end`.
pub fn projection_parameter(p: [f64; 2], p_end: [f64; 2], r: [f64; 2]) -> Option<f64> {
    let t = [p_end[0] - p[0], p_end[1] - p[1]];
    let len2 = t[0] * t[0] + t[1] * t[1];
    (len2 > 0.0).then(|| ((r[0] - p[0]) * t[0] + (r[1] - p[1]) * t[1]) / len2)
}

/// One sweep over the nodes: a node whose projection leaves its segment by
/// more than `tol` (in segment-length units) moves to the neighbouring
/// segment of the list. Positions are the deformed ones, `X + u`.
pub fn update_pairing(
    pairing: &ContactPairing,
    mesh: &Mesh2D,
    dofs: &DofMap,
    q: &DVector<f64>,
    tol: f64,
) -> Result<PairingUpdate> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidContact(format!("update tolerance {tol} not in (0, 1)")));
    }
    if q.len() != dofs.n_free() {
        return Err(Error::Dimension {
            expected: dofs.n_free(),
            got: q.len(),
        });
    }
    let eps_geom = 1e-12 * mesh.diameter();
    let pos = |node: usize| {
        let u = dofs.node_displacement(q.as_slice(), node);
        [mesh.coords[node][0] + u[0], mesh.coords[node][1] + u[1]]
    };
    let mut next = pairing.clone();
    let mut moved = Vec::new();
    let mut skipped = Vec::new();
    let mut alphas = Vec::with_capacity(pairing.len());
    let k_s = pairing.segments.len();
    for i in 0..pairing.len() {
        let j = pairing.selecting[i];
        let seg = pairing.segments[j];
        let (p, pe, r) = (pos(seg.start), pos(seg.end), pos(pairing.nodes[i]));
        let len = (pe[0] - p[0]).hypot(pe[1] - p[1]);
        if len < eps_geom {
            log::warn!("contact node {} skipped: degenerate segment {j}", pairing.nodes[i]);
            skipped.push(i);
            alphas.push(f64::NAN);
            continue;
        }
        let alpha = projection_parameter(p, pe, r).unwrap();
        alphas.push(alpha);
        if alpha < -tol && j > 0 {
            next.selecting[i] = j - 1;
            moved.push(i);
        } else if alpha > 1.0 + tol && j + 1 < k_s {
            next.selecting[i] = j + 1;
            moved.push(i);
        }
    }
    Ok(PairingUpdate {
        pairing: next,
        moved,
        skipped,
        alpha: alphas,
    })
}
