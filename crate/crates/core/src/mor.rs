//! Model order reduction: Arnoldi bases of `K^{-1} M`, the Craig-Bampton
//! transformation for a master/slave split, and projection of the system,
//! constraint and load data.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sprs::CsMat;

use crate::contact::{ConstraintSet, QuadraticConstraint};
use crate::error::{Error, Result};
use crate::fem::{SystemMatrices, TimeLoad, Waveform};
use crate::linalg::{push_scaled, submatrix, SymFactor, SymMatrix};
use crate::mesh::DofPartition;

/// Relative size below which a new Arnoldi direction counts as breakdown.
pub const BREAKDOWN_TOL: f64 = 1e-12;

fn factor_sparse(a: &CsMat<f64>) -> Result<SymFactor> {
    let mut trip = Vec::with_capacity(a.nnz());
    push_scaled(&mut trip, a, 1.0);
    SymFactor::sparse(a.rows(), &trip)
}

fn sparse_mul(a: &CsMat<f64>, x: &DVector<f64>) -> DVector<f64> {
    crate::linalg::matvec(a, x)
}

/// Orthonormal basis of `span{K^{-1} f, (K^{-1} M) K^{-1} f, ...}` with at
/// most `dim` columns. Modified Gram-Schmidt, applied twice.
pub fn arnoldi_basis(k: &CsMat<f64>, m: &CsMat<f64>, f: &DVector<f64>, dim: usize) -> Result<DMatrix<f64>> {
    let fac = factor_sparse(k)?;
    arnoldi_with(&fac, |x| sparse_mul(m, x), f, dim)
}

pub(crate) fn arnoldi_with(
    k_fac: &SymFactor,
    m_mul: impl Fn(&DVector<f64>) -> DVector<f64>,
    f: &DVector<f64>,
    dim: usize,
) -> Result<DMatrix<f64>> {
    if dim == 0 {
        return Ok(DMatrix::zeros(f.len(), 0));
    }
    if f.amax() == 0.0 {
        return Err(Error::EmptyKrylovSeed);
    }
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(dim);
    let mut v = k_fac.solve(f);
    for j in 0..dim.min(f.len()) {
        if j > 0 {
            v = k_fac.solve(&m_mul(&basis[j - 1]));
        }
        let before = v.norm();
        for _ in 0..2 {
            for q in &basis {
                let h = q.dot(&v);
                v.axpy(-h, q, 1.0);
            }
        }
        let after = v.norm();
        if !(after > BREAKDOWN_TOL * before) {
            log::info!("arnoldi breakdown at dimension {j}");
            break;
        }
        basis.push(v.clone() / after);
    }
    Ok(DMatrix::from_columns(&basis))
}

/// `Q_CB` with rows in free-DOF order and columns `[masters, Krylov]`.
pub fn craig_bampton(part: &DofPartition, k: &CsMat<f64>, q_s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k_ss = submatrix(k, &part.slave, &part.slave);
    let fac = factor_sparse(&k_ss)?;
    craig_bampton_with(part, k, &fac, q_s)
}

fn craig_bampton_with(part: &DofPartition, k: &CsMat<f64>, k_ss: &SymFactor, q_s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (nm, ns) = (part.n_master(), part.n_slave());
    if q_s.nrows() != ns {
        return Err(Error::Dimension {
            expected: ns,
            got: q_s.nrows(),
        });
    }
    let k_sm = submatrix(k, &part.slave, &part.master);
    let k_sm_t = k_sm.transpose_view().to_csr();
    // X = -K_SS^{-1} K_SM, one column per master DOF
    let coupling: Vec<DVector<f64>> = (0..nm)
        .into_par_iter()
        .map(|j| {
            let mut col = DVector::zeros(ns);
            if let Some(row) = k_sm_t.outer_view(j) {
                for (i, &v) in row.iter() {
                    col[i] = -v;
                }
            }
            k_ss.solve(&col)
        })
        .collect();
    let n = nm + q_s.ncols();
    let mut q = DMatrix::zeros(part.n_free(), n);
    for (j, &f) in part.master.iter().enumerate() {
        q[(f, j)] = 1.0;
    }
    for (j, col) in coupling.iter().enumerate() {
        for (i, &f) in part.slave.iter().enumerate() {
            q[(f, j)] = col[i];
        }
    }
    for c in 0..q_s.ncols() {
        for (i, &f) in part.slave.iter().enumerate() {
            q[(f, nm + c)] = q_s[(i, c)];
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionKind {
    CraigBampton,
    PlainKrylov,
}

#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub kind: ReductionKind,
    /// `N x n`, rows in free-DOF order.
    pub q: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub constraints: ConstraintSet,
    pub load: TimeLoad,
    /// Present for Craig-Bampton models.
    pub partition: Option<DofPartition>,
    pub n_krylov: usize,
}

/// Builds a Craig-Bampton model: Krylov seed is the slave part of the
/// load's peak-weighted pattern.
pub fn build_craig_bampton(
    sys: &SystemMatrices,
    part: &DofPartition,
    cs: &ConstraintSet,
    load: &TimeLoad,
    n_krylov: usize,
) -> Result<ReducedModel> {
    let k_ss = submatrix(&sys.stiffness, &part.slave, &part.slave);
    let m_ss = submatrix(&sys.mass, &part.slave, &part.slave);
    let fac = factor_sparse(&k_ss)?;
    let f = load.position_vector();
    let f_s = DVector::from_iterator(part.n_slave(), part.slave.iter().map(|&i| f[i]));
    let q_s = if n_krylov == 0 {
        DMatrix::zeros(part.n_slave(), 0)
    } else {
        arnoldi_with(&fac, |x| sparse_mul(&m_ss, x), &f_s, n_krylov)?
    };
    let q = craig_bampton_with(part, &sys.stiffness, &fac, &q_s)?;
    let n_krylov = q_s.ncols();
    reduce(sys, cs, load, q, ReductionKind::CraigBampton, Some(part.clone()), n_krylov)
}

/// Baseline without a master/slave split: Arnoldi on the full system.
pub fn build_plain_krylov(sys: &SystemMatrices, cs: &ConstraintSet, load: &TimeLoad, dim: usize) -> Result<ReducedModel> {
    let q = arnoldi_basis(&sys.stiffness, &sys.mass, &load.position_vector(), dim)?;
    let n = q.ncols();
    reduce(sys, cs, load, q, ReductionKind::PlainKrylov, None, n)
}

/// `A Q` for sparse `A`.
fn sparse_times_dense(a: &CsMat<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.rows(), q.ncols());
    for (v, (i, j)) in a.iter() {
        for c in 0..q.ncols() {
            out[(i, c)] += v * q[(j, c)];
        }
    }
    out
}

fn congruence(a: &CsMat<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let r = q.transpose() * sparse_times_dense(a, q);
    (&r + r.transpose()) * 0.5
}

/// Projects system, constraints and loads onto the columns of `q`.
pub fn reduce(
    sys: &SystemMatrices,
    cs: &ConstraintSet,
    load: &TimeLoad,
    q: DMatrix<f64>,
    kind: ReductionKind,
    partition: Option<DofPartition>,
    n_krylov: usize,
) -> Result<ReducedModel> {
    if q.nrows() != sys.n() {
        return Err(Error::Dimension {
            expected: sys.n(),
            got: q.nrows(),
        });
    }
    let mass = congruence(&sys.mass, &q);
    let stiffness = congruence(&sys.stiffness, &q);
    for (what, a) in [("mass", &mass), ("stiffness", &stiffness)] {
        if a.clone().cholesky().is_none() {
            log::error!("reduced {what} matrix is not positive definite");
            return Err(Error::Indefinite {
                pivot: 0,
                value: f64::NAN,
            });
        }
    }
    let qt = q.transpose();
    let load = load.map_patterns(|p| &qt * p);
    let mut model = ReducedModel {
        kind,
        constraints: ConstraintSet {
            dim: q.ncols(),
            constraints: Vec::new(),
        },
        q,
        mass,
        stiffness,
        load,
        partition,
        n_krylov,
    };
    model.constraints = model.reduce_constraints(cs)?;
    Ok(model)
}

impl ReducedModel {
    pub fn n(&self) -> usize {
        self.q.ncols()
    }

    pub fn n_full(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_master(&self) -> usize {
        self.partition.as_ref().map_or(0, |p| p.n_master())
    }

    /// Reduced constraint data. Craig-Bampton: the master-block entries are
    /// copied to their reduced positions. Plain Krylov: `Q_loc^T D Q_loc`.
    pub fn reduce_constraints(&self, cs: &ConstraintSet) -> Result<ConstraintSet> {
        if cs.dim != self.n_full() {
            return Err(Error::Dimension {
                expected: self.n_full(),
                got: cs.dim,
            });
        }
        let n = self.n();
        let constraints = match &self.partition {
            Some(part) => cs
                .constraints
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let dofs = c
                        .dofs
                        .iter()
                        .map(|&f| {
                            part.master_position(f).ok_or_else(|| {
                                Error::InvalidContact(format!("constraint {k} touches non-master DOF {f}"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(QuadraticConstraint { dofs, ..c.clone() })
                })
                .collect::<Result<Vec<_>>>()?,
            None => cs
                .constraints
                .iter()
                .map(|c| {
                    let q_loc = DMatrix::from_fn(c.dofs.len(), n, |a, j| self.q[(c.dofs[a], j)]);
                    QuadraticConstraint {
                        dofs: (0..n).collect(),
                        d: q_loc.transpose() * &c.d * &q_loc,
                        c: q_loc.transpose() * &c.c,
                        b: c.b,
                    }
                })
                .collect(),
        };
        Ok(ConstraintSet { dim: n, constraints })
    }

    /// `q = Q w`. Master entries of a Craig-Bampton model are copied.
    pub fn expand(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        if w.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: w.len(),
            });
        }
        let mut q = &self.q * w;
        if let Some(part) = &self.partition {
            for (j, &f) in part.master.iter().enumerate() {
                q[f] = w[j];
            }
        }
        Ok(q)
    }

    /// Selected rows of `Q w` (tracked sensor DOFs).
    pub fn expand_rows(&self, rows: &[usize], w: &DVector<f64>) -> Result<Vec<f64>> {
        if w.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: w.len(),
            });
        }
        Ok(rows
            .iter()
            .map(|&r| match self.partition.as_ref().and_then(|p| p.master_position(r)) {
                Some(j) => w[j],
                None => self.q.row(r).transpose().dot(w),
            })
            .collect())
    }

    /// Least-squares reduced coordinates of a full vector.
    pub fn project(&self, q: &DVector<f64>) -> DVector<f64> {
        let qt = self.q.transpose();
        let g = &qt * &self.q;
        g.cholesky()
            .map(|c| c.solve(&(&qt * q)))
            .unwrap_or_else(|| DVector::zeros(self.n()))
    }

    pub fn bundle(&self) -> Result<crate::ncp::OperatorBundle> {
        crate::ncp::OperatorBundle::new(
            SymMatrix::Dense(self.mass.clone()),
            SymMatrix::Dense(self.stiffness.clone()),
            self.constraints.clone(),
            self.load.clone(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf);
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::read_from(&bytes)
    }

    /// Header `CROM`, version, kind, dimensions, then little-endian
    /// row-major payloads.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        let mut w = Writer(out);
        w.0.write_all(MAGIC).unwrap();
        w.u64(VERSION);
        w.u64(match self.kind {
            ReductionKind::CraigBampton => 0,
            ReductionKind::PlainKrylov => 1,
        });
        for d in [
            self.n_full(),
            self.n(),
            self.n_krylov,
            self.constraints.m(),
            self.load.terms.len(),
        ] {
            w.u64(d as u64);
        }
        w.matrix(&self.q);
        w.matrix(&self.mass);
        w.matrix(&self.stiffness);
        for c in &self.constraints.constraints {
            w.indices(&c.dofs);
            w.matrix(&c.d);
            w.f64s(c.c.as_slice());
            w.f64s(&[c.b]);
        }
        for (wave, pattern) in &self.load.terms {
            let json = serde_json::to_vec(wave).unwrap();
            w.u64(json.len() as u64);
            w.0.write_all(&json).unwrap();
            w.f64s(pattern.as_slice());
        }
        match &self.partition {
            Some(p) => {
                w.u64(1);
                w.indices(&p.master);
                w.indices(&p.slave);
            }
            None => w.u64(0),
        }
    }

    pub fn read_from(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Parse {
                line: 0,
                msg: "not a reduced-model file".into(),
            });
        }
        let version = r.u64()?;
        if version != VERSION {
            return Err(Error::Parse {
                line: 0,
                msg: format!("unsupported reduced-model version {version}"),
            });
        }
        let kind = match r.u64()? {
            0 => ReductionKind::CraigBampton,
            1 => ReductionKind::PlainKrylov,
            k => {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("unknown reduction kind {k}"),
                })
            }
        };
        let nf = r.usize()?;
        let n = r.usize()?;
        let n_krylov = r.usize()?;
        let m = r.usize()?;
        let nl = r.usize()?;
        let q = r.matrix(nf, n)?;
        let mass = r.matrix(n, n)?;
        let stiffness = r.matrix(n, n)?;
        let mut constraints = Vec::with_capacity(m);
        for _ in 0..m {
            let dofs = r.indices()?;
            let k = dofs.len();
            let d = r.matrix(k, k)?;
            let c = DVector::from_vec(r.f64s(k)?);
            let b = r.f64s(1)?[0];
            constraints.push(QuadraticConstraint { dofs, d, c, b });
        }
        let mut terms = Vec::with_capacity(nl);
        for _ in 0..nl {
            let len = r.usize()?;
            let wave: Waveform = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Parse {
                line: 0,
                msg: e.to_string(),
            })?;
            terms.push((wave, DVector::from_vec(r.f64s(n)?)));
        }
        let partition = match r.u64()? {
            0 => None,
            _ => {
                let master = r.indices()?;
                let slave = r.indices()?;
                let mut full_to_reordered = vec![0; master.len() + slave.len()];
                for (p, &f) in master.iter().chain(slave.iter()).enumerate() {
                    if f >= full_to_reordered.len() {
                        return Err(Error::Parse {
                            line: 0,
                            msg: "partition index out of range".into(),
                        });
                    }
                    full_to_reordered[f] = p;
                }
                Some(DofPartition {
                    master,
                    slave,
                    full_to_reordered,
                })
            }
        };
        Ok(ReducedModel {
            kind,
            q,
            mass,
            stiffness,
            constraints: ConstraintSet { dim: n, constraints },
            load: TimeLoad { terms },
            partition,
            n_krylov,
        })
    }
}

const MAGIC: &[u8; 4] = b"CROM";
const VERSION: u64 = 1;

struct Writer<'a>(&'a mut Vec<u8>);

impl Writer<'_> {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn indices(&mut self, v: &[usize]) {
        self.u64(v.len() as u64);
        for &i in v {
            self.u64(i as u64);
        }
    }

    fn matrix(&mut self, a: &DMatrix<f64>) {
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                self.0.extend_from_slice(&a[(i, j)].to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Parse {
            line: 0,
            msg: "truncated reduced-model file".into(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u64()? as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.saturating_mul(8))?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn indices(&mut self) -> Result<Vec<usize>> {
        let n = self.usize()?;
        let raw = self.take(n.saturating_mul(8))?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect())
    }

    fn matrix(&mut self, r: usize, c: usize) -> Result<DMatrix<f64>> {
        let v = self.f64s(r * c)?;
        Ok(DMatrix::from_row_slice(r, c, &v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{assemble_constraints, ContactPairing, Segment};
    use crate::fem::{assemble, LoadSpec, Material, Materials};
    use crate::linalg::to_dense;
    use crate::mesh::{build_rect_mesh, partition_dofs, CrackOrientation, CrackSpec, DofMap};
    use proptest::prelude::*;

    struct Fixture {
        sys: SystemMatrices,
        part: DofPartition,
        cs: ConstraintSet,
        load: TimeLoad,
    }

    fn fixture(nx: usize, ny: usize) -> Fixture {
        let crack = CrackSpec {
            orientation: CrackOrientation::Vertical,
            position: 0.5,
            start: 0.5,
            end: 1.0,
        };
        let mut rm = build_rect_mesh(nx, ny, 1.0, 1.0, Some(&crack)).unwrap();
        rm.mesh.dirichlet = rm.mesh.nodes_where(|x, _| x == 0.0).into_iter().collect();
        let nodes = rm.face_plus.clone();
        let segments: Vec<Segment> = rm
            .face_minus
            .windows(2)
            .map(|w| Segment { start: w[1], end: w[0] })
            .collect();
        let np = nodes.len();
        let pairing = ContactPairing::new(nodes, segments, (0..np).map(|i| i.min(np - 2)).collect()).unwrap();
        let dofs = DofMap::new(&rm.mesh);
        let part = partition_dofs(&rm.mesh, &dofs, &pairing.all_nodes()).unwrap();
        let mats = Materials::from([(0, Material::new(1000.0, 0.3, 1.0).unwrap())]);
        let sys = assemble(&rm.mesh, &mats, &dofs).unwrap();
        let cs = assemble_constraints(&rm.mesh, &dofs, &pairing, Some(&part)).unwrap();
        let right = rm.mesh.nodes_where(|x, _| x == 1.0);
        let spec = LoadSpec {
            nodes: right,
            direction: [1.0, 0.3],
            waveform: Waveform::Sine {
                amplitude: 1.5,
                angular_frequency: 0.1 * std::f64::consts::PI,
                phase: 0.0,
            },
        };
        let load = TimeLoad::new(&[spec], &dofs);
        Fixture { sys, part, cs, load }
    }

    #[test]
    fn single_vector_is_normalized_static_response() {
        let fx = fixture(4, 4);
        let f = fx.load.position_vector();
        let q = arnoldi_basis(&fx.sys.stiffness, &fx.sys.mass, &f, 1).unwrap();
        let k = to_dense(&fx.sys.stiffness);
        let u = k.clone().cholesky().unwrap().solve(&f);
        let expect = &u / u.norm();
        assert!((q.column(0) - expect).amax() < 1e-12);
    }

    #[test]
    fn arnoldi_is_orthonormal_and_contains_seed() {
        let fx = fixture(6, 6);
        let f = fx.load.position_vector();
        let q = arnoldi_basis(&fx.sys.stiffness, &fx.sys.mass, &f, 12).unwrap();
        assert_eq!(q.ncols(), 12);
        let g = q.transpose() * &q;
        assert!((g - DMatrix::identity(12, 12)).amax() < 1e-12);
        let u = to_dense(&fx.sys.stiffness).cholesky().unwrap().solve(&f);
        let proj = &q * (q.transpose() * &u);
        assert!((proj - &u).norm() <= 1e-10 * u.norm());
    }

    #[test]
    fn empty_seed_is_rejected() {
        let fx = fixture(4, 4);
        let f = DVector::zeros(fx.sys.n());
        assert!(matches!(
            arnoldi_basis(&fx.sys.stiffness, &fx.sys.mass, &f, 2),
            Err(Error::EmptyKrylovSeed)
        ));
    }

    #[test]
    fn arnoldi_stops_on_invariant_subspace() {
        // diagonal system: the seed e_0 spans an invariant subspace
        let n = 5;
        let mut t = sprs::TriMat::new((n, n));
        for i in 0..n {
            t.add_triplet(i, i, 1.0 + i as f64);
        }
        let k: CsMat<f64> = t.to_csc();
        let mut f = DVector::zeros(n);
        f[0] = 1.0;
        let q = arnoldi_basis(&k, &k, &f, 4).unwrap();
        assert_eq!(q.ncols(), 1);
    }

    #[test]
    fn craig_bampton_structure() {
        let fx = fixture(6, 6);
        let m = build_craig_bampton(&fx.sys, &fx.part, &fx.cs, &fx.load, 3).unwrap();
        let nm = fx.part.n_master();
        assert_eq!(m.n(), nm + 3);
        for (j, &f) in fx.part.master.iter().enumerate() {
            for c in 0..m.n() {
                assert_eq!(m.q[(f, c)], if c == j { 1.0 } else { 0.0 });
            }
        }
        // K_SS X + K_SM = 0
        let k = to_dense(&fx.sys.stiffness);
        let sl = &fx.part.slave;
        let ms = &fx.part.master;
        let kss = DMatrix::from_fn(sl.len(), sl.len(), |i, j| k[(sl[i], sl[j])]);
        let ksm = DMatrix::from_fn(sl.len(), ms.len(), |i, j| k[(sl[i], ms[j])]);
        let x = DMatrix::from_fn(sl.len(), ms.len(), |i, j| m.q[(sl[i], j)]);
        assert!((&kss * x + &ksm).amax() <= 1e-10 * ksm.amax());
        let qs = DMatrix::from_fn(sl.len(), 3, |i, j| m.q[(sl[i], nm + j)]);
        assert!((qs.transpose() * &qs - DMatrix::identity(3, 3)).amax() < 1e-12);
        // reduced operators symmetric positive definite
        for a in [&m.mass, &m.stiffness] {
            assert_eq!(a, &a.transpose());
            assert!(a.symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn all_master_partition_gives_identity() {
        let fx = fixture(2, 2);
        let n = fx.sys.n();
        let all = DofPartition {
            master: (0..n).collect(),
            slave: vec![],
            full_to_reordered: (0..n).collect(),
        };
        let q = craig_bampton(&all, &fx.sys.stiffness, &DMatrix::zeros(0, 0)).unwrap();
        assert_eq!(q, DMatrix::identity(n, n));
        let red = reduce(&fx.sys, &fx.cs, &fx.load, q, ReductionKind::CraigBampton, Some(all), 0).unwrap();
        assert!((&red.stiffness - to_dense(&fx.sys.stiffness)).amax() < 1e-12);
        assert!((&red.mass - to_dense(&fx.sys.mass)).amax() < 1e-16);
        assert_eq!(red.constraints, fx.cs);
        let w = DVector::from_fn(n, |i, _| (i as f64).cos());
        assert_eq!(red.expand(&w).unwrap(), w);
    }

    #[test]
    fn guyan_condensation_is_exact_for_master_loads() {
        let fx = fixture(6, 6);
        let m = build_craig_bampton(&fx.sys, &fx.part, &fx.cs, &fx.load, 2).unwrap();
        let mut f = DVector::zeros(fx.sys.n());
        for (k, &i) in fx.part.master.iter().enumerate() {
            f[i] = ((k + 1) as f64).sin();
        }
        let full = to_dense(&fx.sys.stiffness).cholesky().unwrap().solve(&f);
        let red = m.stiffness.clone().cholesky().unwrap().solve(&(m.q.transpose() * &f));
        let q = m.expand(&red).unwrap();
        for &i in &fx.part.master {
            assert!((q[i] - full[i]).abs() <= 1e-10 * full.amax());
        }
    }

    #[test]
    fn padded_constraints_equal_triple_product() {
        let fx = fixture(6, 6);
        let m = build_craig_bampton(&fx.sys, &fx.part, &fx.cs, &fx.load, 3).unwrap();
        let (nf, n) = (fx.sys.n(), m.n());
        for (k, c) in fx.cs.constraints.iter().enumerate() {
            let dfull = c.dense_d(nf);
            let dsym = &dfull + dfull.transpose();
            let triple = m.q.transpose() * &dsym * &m.q;
            let red = &m.constraints.constraints[k];
            let padded = red.dense_d(n) + red.dense_d(n).transpose();
            assert!((&triple - &padded).amax() <= 1e-14 * dsym.amax());
            let ct = m.q.transpose() * c.dense_c(nf);
            assert!((ct - red.dense_c(n)).amax() <= 1e-14 * c.c.amax());
            // entries vanish outside the master block
            for i in 0..n {
                for j in 0..n {
                    if i >= fx.part.n_master() || j >= fx.part.n_master() {
                        assert_eq!(padded[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn plain_krylov_constraints_are_projected() {
        let fx = fixture(6, 4);
        let m = build_plain_krylov(&fx.sys, &fx.cs, &fx.load, 8).unwrap();
        assert!(m.partition.is_none());
        let w = DVector::from_fn(m.n(), |i, _| 1e-3 * (i as f64 + 1.0).sin());
        let g_red = m.constraints.evaluate(&w).unwrap();
        let g_full = fx.cs.evaluate(&m.expand(&w).unwrap()).unwrap();
        assert!((g_red - g_full).amax() < 1e-14);
    }

    #[test]
    fn expand_round_trip_with_full_basis() {
        let fx = fixture(2, 2);
        let ns = fx.part.n_slave();
        let m = build_craig_bampton(&fx.sys, &fx.part, &fx.cs, &fx.load, ns).unwrap();
        assert_eq!(m.n(), fx.sys.n());
        let q = DVector::from_fn(fx.sys.n(), |i, _| (0.7 * i as f64).sin());
        let back = m.expand(&m.project(&q)).unwrap();
        assert!((back - &q).amax() < 1e-10);
        let rows = [fx.part.master[0], fx.part.slave[0]];
        let w = m.project(&q);
        let full = m.expand(&w).unwrap();
        let picked = m.expand_rows(&rows, &w).unwrap();
        assert_eq!(picked[0], full[rows[0]]);
        assert!((picked[1] - full[rows[1]]).abs() < 1e-14);
    }

    #[test]
    fn sidecar_round_trip() {
        let fx = fixture(4, 4);
        for model in [
            build_craig_bampton(&fx.sys, &fx.part, &fx.cs, &fx.load, 3).unwrap(),
            build_plain_krylov(&fx.sys, &fx.cs, &fx.load, 4).unwrap(),
        ] {
            let mut buf = Vec::new();
            model.write_to(&mut buf);
            let back = ReducedModel::read_from(&buf).unwrap();
            assert_eq!(back.q, model.q);
            assert_eq!(back.mass, model.mass);
            assert_eq!(back.constraints, model.constraints);
            assert_eq!(back.partition, model.partition);
            assert_eq!(back.load.eval(3.0), model.load.eval(3.0));
            assert!(ReducedModel::read_from(&buf[..buf.len() - 3]).is_err());
        }
        assert!(ReducedModel::read_from(b"nope").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn expansion_preserves_constraints(seed in 0u64..10_000) {
            use rand::{Rng, SeedableRng};
            let fx = fixture(4, 4);
            let m = build_craig_bampton(&fx.sys, &fx.part, &fx.cs, &fx.load, 3).unwrap();
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let w = DVector::from_fn(m.n(), |_, _| rng.gen_range(-0.05..0.05));
            let g_red = m.constraints.evaluate(&w).unwrap();
            let g_full = fx.cs.evaluate(&m.expand(&w).unwrap()).unwrap();
            prop_assert!((g_red - g_full).amax() <= 1e-12);
        }
    }
}
