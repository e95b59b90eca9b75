//! Plane-stress linear elasticity: element matrices, global assembly with
//! Dirichlet elimination, nodal loads and stress evaluation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};
use crate::mesh::{DofMap, ElementKind, Mesh2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
}

impl Material {
    pub fn new(young_modulus: f64, poisson_ratio: f64, density: f64) -> Result<Self> {
        let m = Material {
            young_modulus,
            poisson_ratio,
            density,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young_modulus > 0.0) {
            return Err(Error::InvalidMaterial("Young's modulus must be positive".into()));
        }
        if !(self.density > 0.0) {
            return Err(Error::InvalidMaterial("density must be positive".into()));
        }
        let nu = self.poisson_ratio;
        if !(-1.0..=0.5).contains(&nu) || nu == 0.5 || nu == -1.0 {
            return Err(Error::InvalidMaterial(format!(
                "Poisson's ratio {nu} outside (-1, 0.5)"
            )));
        }
        Ok(())
    }

    /// Plane-stress constitutive matrix in Voigt order (xx, yy, xy) with
    /// engineering shear strain.
    pub fn plane_stress(&self) -> Matrix3<f64> {
        let (e, nu) = (self.young_modulus, self.poisson_ratio);
        let s = e / (1.0 - nu * nu);
        Matrix3::new(
            s,
            s * nu,
            0.0,
            s * nu,
            s,
            0.0,
            0.0,
            0.0,
            s * (1.0 - nu) / 2.0,
        )
    }
}

pub type Materials = BTreeMap<u32, Material>;

const GAUSS: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

pub(crate) const Q4_NODES: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

/// Bilinear shape functions and their reference derivatives.
pub fn q4_shape(xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    let mut n = [0.0; 4];
    let mut dn = [[0.0; 2]; 4];
    for (a, p) in Q4_NODES.iter().enumerate() {
        n[a] = 0.25 * (1.0 + xi * p[0]) * (1.0 + eta * p[1]);
        dn[a][0] = 0.25 * p[0] * (1.0 + eta * p[1]);
        dn[a][1] = 0.25 * p[1] * (1.0 + xi * p[0]);
    }
    (n, dn)
}

/// Physical shape-function gradients and the Jacobian determinant at a
/// reference point.
fn shape_gradients(
    coords: &[[f64; 2]],
    kind: ElementKind,
    xi: f64,
    eta: f64,
) -> (Vec<f64>, Vec<[f64; 2]>, f64) {
    match kind {
        ElementKind::T3 => {
            let [x1, y1] = coords[0];
            let [x2, y2] = coords[1];
            let [x3, y3] = coords[2];
            let det = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1);
            let g = vec![
                [(y2 - y3) / det, (x3 - x2) / det],
                [(y3 - y1) / det, (x1 - x3) / det],
                [(y1 - y2) / det, (x2 - x1) / det],
            ];
            let n = vec![1.0 - xi - eta, xi, eta];
            (n, g, det)
        }
        ElementKind::Q4 => {
            let (n, dn) = q4_shape(xi, eta);
            let mut j = [[0.0; 2]; 2];
            for a in 0..4 {
                for r in 0..2 {
                    for c in 0..2 {
                        j[r][c] += dn[a][c] * coords[a][r];
                    }
                }
            }
            // j[r][c] = d x_r / d xi_c
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
            let g = dn
                .iter()
                .map(|d| {
                    [
                        d[0] * inv[0][0] + d[1] * inv[1][0],
                        d[0] * inv[0][1] + d[1] * inv[1][1],
                    ]
                })
                .collect();
            (n.to_vec(), g, det)
        }
    }
}

fn quadrature(kind: ElementKind) -> Vec<([f64; 2], f64)> {
    match kind {
        ElementKind::Q4 => {
            let mut pts = Vec::with_capacity(4);
            for &eta in &[-GAUSS, GAUSS] {
                for &xi in &[-GAUSS, GAUSS] {
                    pts.push(([xi, eta], 1.0));
                }
            }
            pts
        }
        ElementKind::T3 => vec![([1.0 / 3.0, 1.0 / 3.0], 0.5)],
    }
}

/// `Ok` if the element has positive orientation everywhere it is integrated.
pub fn check_element_geometry(coords: &[[f64; 2]], kind: ElementKind) -> std::result::Result<(), String> {
    let scale = coords
        .iter()
        .flat_map(|c| c.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let pts: Vec<[f64; 2]> = match kind {
        ElementKind::T3 => vec![[0.0, 0.0]],
        ElementKind::Q4 => quadrature(kind).into_iter().map(|(p, _)| p).collect(),
    };
    for p in pts {
        let (_, _, det) = shape_gradients(coords, kind, p[0], p[1]);
        if !(det > 1e-14 * scale * scale) {
            return Err(format!("non-positive Jacobian {det:e}"));
        }
    }
    Ok(())
}

pub fn element_area(coords: &[[f64; 2]], kind: ElementKind) -> f64 {
    quadrature(kind)
        .iter()
        .map(|(p, w)| w * shape_gradients(coords, kind, p[0], p[1]).2)
        .sum()
}

/// Element stiffness and consistent mass, DOFs interleaved (x0, y0, x1, ...).
pub fn element_matrices(
    coords: &[[f64; 2]],
    kind: ElementKind,
    mat: &Material,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_element_geometry(coords, kind).map_err(|msg| Error::DegenerateElement { element: 0, msg })?;
    let nn = kind.nodes_per_element();
    let nd = 2 * nn;
    let d = mat.plane_stress();
    let mut ke = DMatrix::zeros(nd, nd);
    let mut me = DMatrix::zeros(nd, nd);
    for (p, w) in quadrature(kind) {
        let (n, g, det) = shape_gradients(coords, kind, p[0], p[1]);
        let mut b = DMatrix::zeros(3, nd);
        for a in 0..nn {
            b[(0, 2 * a)] = g[a][0];
            b[(1, 2 * a + 1)] = g[a][1];
            b[(2, 2 * a)] = g[a][1];
            b[(2, 2 * a + 1)] = g[a][0];
        }
        let db = DMatrix::from_fn(3, nd, |r, c| (0..3).map(|k| d[(r, k)] * b[(k, c)]).sum());
        ke += b.transpose() * db * (w * det);
        if kind == ElementKind::Q4 {
            for a in 0..nn {
                for bb in 0..nn {
                    let v = mat.density * n[a] * n[bb] * w * det;
                    me[(2 * a, 2 * bb)] += v;
                    me[(2 * a + 1, 2 * bb + 1)] += v;
                }
            }
        }
    }
    if kind == ElementKind::T3 {
        let area = 0.5 * shape_gradients(coords, kind, 0.0, 0.0).2;
        for a in 0..3 {
            for bb in 0..3 {
                let v = mat.density * area / 12.0 * if a == bb { 2.0 } else { 1.0 };
                me[(2 * a, 2 * bb)] = v;
                me[(2 * a + 1, 2 * bb + 1)] = v;
            }
        }
    }
    Ok((ke, me))
}

/// Displacement gradient `du_i/dx_j` inside an element at reference point
/// `local` (ignored for T3, whose gradient is constant).
pub fn displacement_gradient(
    coords: &[[f64; 2]],
    kind: ElementKind,
    u: &[[f64; 2]],
    local: [f64; 2],
) -> [[f64; 2]; 2] {
    let (_, g, _) = shape_gradients(coords, kind, local[0], local[1]);
    let mut grad = [[0.0; 2]; 2];
    for (ga, ua) in g.iter().zip(u) {
        for i in 0..2 {
            for j in 0..2 {
                grad[i][j] += ua[i] * ga[j];
            }
        }
    }
    grad
}

/// Plane-stress stress `[sxx, syy, sxy]` from a displacement gradient.
pub fn stress_from_gradient(mat: &Material, grad: &[[f64; 2]; 2]) -> [f64; 3] {
    let eps = nalgebra::Vector3::new(grad[0][0], grad[1][1], grad[0][1] + grad[1][0]);
    let s = mat.plane_stress() * eps;
    [s[0], s[1], s[2]]
}

pub fn von_mises(s: &[f64; 3]) -> f64 {
    (s[0] * s[0] - s[0] * s[1] + s[1] * s[1] + 3.0 * s[2] * s[2]).sqrt()
}

/// Global mass and stiffness on the free DOFs.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub mass: CsMat<f64>,
    pub stiffness: CsMat<f64>,
}

impl SystemMatrices {
    pub fn n(&self) -> usize {
        self.stiffness.rows()
    }
}

/// Scatter-adds all element matrices; rows and columns of fixed DOFs are
/// dropped.
pub fn assemble(mesh: &Mesh2D, materials: &Materials, dofs: &DofMap) -> Result<SystemMatrices> {
    for b in mesh.bodies() {
        let m = materials.get(&b).ok_or(Error::MissingMaterial(b))?;
        m.validate()?;
    }
    let locals: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let mat = &materials[&mesh.body[mesh.elements[e][0]]];
            element_matrices(&mesh.element_coords(e), mesh.kind, mat).map_err(|err| match err {
                Error::DegenerateElement { msg, .. } => Error::DegenerateElement { element: e, msg },
                other => other,
            })
        })
        .collect::<Result<_>>()?;

    let n = dofs.n_free();
    let nnz = locals.iter().map(|(k, _)| k.len()).sum();
    let mut kt = TriMat::with_capacity((n, n), nnz);
    let mut mt = TriMat::with_capacity((n, n), nnz);
    for (el, (ke, me)) in mesh.elements.iter().zip(&locals) {
        let map: Vec<Option<usize>> = el
            .iter()
            .flat_map(|&node| [dofs.free(node, 0), dofs.free(node, 1)])
            .collect();
        for (a, ga) in map.iter().enumerate() {
            let Some(ga) = *ga else { continue };
            for (b, gb) in map.iter().enumerate() {
                let Some(gb) = *gb else { continue };
                kt.add_triplet(ga, gb, ke[(a, b)]);
                mt.add_triplet(ga, gb, me[(a, b)]);
            }
        }
    }
    Ok(SystemMatrices {
        mass: mt.to_csc(),
        stiffness: kt.to_csc(),
    })
}

/// Scalar time history of a load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Waveform {
    /// `amplitude * sin(angular_frequency * t + phase)`
    Sine {
        amplitude: f64,
        angular_frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    Constant { value: f64 },
}

impl Waveform {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Waveform::Sine {
                amplitude,
                angular_frequency,
                phase,
            } => amplitude * (angular_frequency * t + phase).sin(),
            Waveform::Constant { value } => value,
        }
    }

    /// Largest magnitude the waveform reaches.
    pub fn peak(&self) -> f64 {
        match *self {
            Waveform::Sine { amplitude, .. } => amplitude.abs(),
            Waveform::Constant { value } => value.abs(),
        }
    }
}

/// Nodal force of `waveform(t)` along `direction` at every loaded node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub nodes: Vec<usize>,
    pub direction: [f64; 2],
    pub waveform: Waveform,
}

impl LoadSpec {
    pub fn validate(&self, mesh: &Mesh2D) -> Result<()> {
        let norm = self.direction[0].hypot(self.direction[1]);
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Scenario(format!(
                "load direction {:?} is not a unit vector",
                self.direction
            )));
        }
        for &n in &self.nodes {
            if n >= mesh.n_nodes() || mesh.dirichlet.contains(&n) {
                return Err(Error::Scenario(format!("loaded node {n} is not free")));
            }
        }
        Ok(())
    }

    /// Unit-amplitude spatial pattern on the free DOFs.
    pub fn pattern(&self, dofs: &DofMap) -> DVector<f64> {
        let mut f = DVector::zeros(dofs.n_free());
        for &node in &self.nodes {
            for c in 0..2 {
                if let Some(i) = dofs.free(node, c) {
                    f[i] += self.direction[c];
                }
            }
        }
        f
    }
}

/// Superposition of separable loads `sum_s waveform_s(t) * pattern_s`.
#[derive(Debug, Clone, Default)]
pub struct TimeLoad {
    pub terms: Vec<(Waveform, DVector<f64>)>,
}

impl TimeLoad {
    pub fn new(specs: &[LoadSpec], dofs: &DofMap) -> Self {
        if specs.is_empty() {
            return Self::zero(dofs.n_free());
        }
        TimeLoad {
            terms: specs.iter().map(|s| (s.waveform, s.pattern(dofs))).collect(),
        }
    }

    pub fn zero(n: usize) -> Self {
        TimeLoad {
            terms: vec![(Waveform::Constant { value: 0.0 }, DVector::zeros(n))],
        }
    }

    pub fn dim(&self) -> usize {
        self.terms.first().map_or(0, |(_, p)| p.len())
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut f = DVector::zeros(self.dim());
        for (w, p) in &self.terms {
            f.axpy(w.eval(t), p, 1.0);
        }
        f
    }

    /// Peak-weighted pattern used to seed Krylov bases.
    pub fn position_vector(&self) -> DVector<f64> {
        let mut f = DVector::zeros(self.dim());
        for (w, p) in &self.terms {
            f.axpy(w.peak(), p, 1.0);
        }
        f
    }

    pub fn map_patterns(&self, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> TimeLoad {
        TimeLoad {
            terms: self.terms.iter().map(|(w, p)| (*w, f(p))).collect(),
        }
    }
}

/// `f(t)` for a list of load specs.
pub fn load_vector(specs: &[LoadSpec], t: f64, dofs: &DofMap) -> DVector<f64> {
    TimeLoad::new(specs, dofs).eval(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_rect_mesh;
    use crate::linalg::to_dense;
    use rand::{Rng, SeedableRng};

    fn steel_like() -> Material {
        Material::new(1000.0, 0.3, 1.0).unwrap()
    }

    fn unit_square() -> Vec<[f64; 2]> {
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    }

    fn distorted_quad() -> Vec<[f64; 2]> {
        vec![[0.1, -0.2], [1.3, 0.05], [1.1, 1.2], [-0.15, 0.9]]
    }

    #[test]
    fn material_validation() {
        assert!(Material::new(0.0, 0.3, 1.0).is_err());
        assert!(Material::new(1.0, 0.5, 1.0).is_err());
        assert!(Material::new(1.0, 0.3, -1.0).is_err());
        assert!(Material::new(1.0, -0.5, 1.0).is_ok());
    }

    #[test]
    fn rigid_translation_is_strain_free() {
        let mat = steel_like();
        for (coords, kind) in [
            (distorted_quad(), ElementKind::Q4),
            (vec![[0.0, 0.0], [2.0, 0.3], [0.4, 1.5]], ElementKind::T3),
        ] {
            let (ke, _) = element_matrices(&coords, kind, &mat).unwrap();
            let n = ke.nrows();
            for dir in 0..2 {
                let u = DVector::from_fn(n, |i, _| if i % 2 == dir { 1.0 } else { 0.0 });
                assert!((&ke * u).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn t3_mass_sums_to_area() {
        let (_, me) = element_matrices(
            &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            ElementKind::T3,
            &steel_like(),
        )
        .unwrap();
        let sum_x: f64 = (0..3).flat_map(|a| (0..3).map(move |b| (a, b))).map(|(a, b)| me[(2 * a, 2 * b)]).sum();
        assert!((sum_x - 0.5).abs() < 1e-14);
    }

    #[test]
    fn q4_mass_sums_to_area() {
        let coords = distorted_quad();
        let (_, me) = element_matrices(&coords, ElementKind::Q4, &steel_like()).unwrap();
        let area = element_area(&coords, ElementKind::Q4);
        let sum_x: f64 = (0..4).flat_map(|a| (0..4).map(move |b| (a, b))).map(|(a, b)| me[(2 * a, 2 * b)]).sum();
        assert!((sum_x - area).abs() < 1e-13);
    }

    /// Strain energy 1/2 int eps:D:eps by 3x3 Gauss, independent of the
    /// B-matrix assembly path.
    fn energy_oracle(coords: &[[f64; 2]], mat: &Material, u: &[f64]) -> f64 {
        let gp = [-(0.6f64).sqrt(), 0.0, (0.6f64).sqrt()];
        let gw = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let d = mat.plane_stress();
        let nodal: Vec<[f64; 2]> = (0..4).map(|a| [u[2 * a], u[2 * a + 1]]).collect();
        let mut e = 0.0;
        for (i, &xi) in gp.iter().enumerate() {
            for (j, &eta) in gp.iter().enumerate() {
                // finite-difference the isoparametric map for the Jacobian
                let map = |s: f64, t: f64| {
                    let (n, _) = q4_shape(s, t);
                    let mut x = [0.0; 2];
                    let mut uu = [0.0; 2];
                    for a in 0..4 {
                        for c in 0..2 {
                            x[c] += n[a] * coords[a][c];
                            uu[c] += n[a] * nodal[a][c];
                        }
                    }
                    (x, uu)
                };
                let hs = 1e-6;
                let (xp, up) = map(xi + hs, eta);
                let (xm, um) = map(xi - hs, eta);
                let (xq, uq) = map(xi, eta + hs);
                let (xr, ur) = map(xi, eta - hs);
                let jac = nalgebra::Matrix2::new(
                    (xp[0] - xm[0]) / (2.0 * hs),
                    (xq[0] - xr[0]) / (2.0 * hs),
                    (xp[1] - xm[1]) / (2.0 * hs),
                    (xq[1] - xr[1]) / (2.0 * hs),
                );
                let du_ref = nalgebra::Matrix2::new(
                    (up[0] - um[0]) / (2.0 * hs),
                    (uq[0] - ur[0]) / (2.0 * hs),
                    (up[1] - um[1]) / (2.0 * hs),
                    (uq[1] - ur[1]) / (2.0 * hs),
                );
                let grad = du_ref * jac.try_inverse().unwrap();
                let eps = nalgebra::Vector3::new(grad[(0, 0)], grad[(1, 1)], grad[(0, 1)] + grad[(1, 0)]);
                e += 0.5 * (eps.transpose() * d * eps)[0] * jac.determinant() * gw[i] * gw[j];
            }
        }
        e
    }

    #[test]
    fn stiffness_matches_energy_oracle() {
        let mat = steel_like();
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        // 2x2 Gauss is exact only for affine maps
        let parallelogram = vec![[0.0, 0.0], [2.0, 0.3], [2.5, 1.3], [0.5, 1.0]];
        for coords in [unit_square(), parallelogram] {
            let (ke, _) = element_matrices(&coords, ElementKind::Q4, &mat).unwrap();
            for _ in 0..20 {
                let u: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let uv = DVector::from_column_slice(&u);
                let e_k = 0.5 * (uv.transpose() * &ke * &uv)[0];
                let e_o = energy_oracle(&coords, &mat, &u);
                assert!((e_k - e_o).abs() <= 1e-7 * e_o.abs().max(1.0), "{e_k} vs {e_o}");
            }
        }
    }

    #[test]
    fn stiffness_is_gradient_of_energy() {
        // central differences of the energy oracle reproduce Ke u
        let mat = steel_like();
        let coords = unit_square();
        let (ke, _) = element_matrices(&coords, ElementKind::Q4, &mat).unwrap();
        let u: Vec<f64> = vec![0.1, -0.3, 0.2, 0.05, -0.1, 0.4, 0.0, 0.2];
        let ku = &ke * DVector::from_column_slice(&u);
        for i in 0..8 {
            let h = 1e-4;
            let mut up = u.clone();
            let mut um = u.clone();
            up[i] += h;
            um[i] -= h;
            let fd = (energy_oracle(&coords, &mat, &up) - energy_oracle(&coords, &mat, &um)) / (2.0 * h);
            assert!((fd - ku[i]).abs() < 1e-5 * ku.amax(), "dof {i}: {fd} vs {}", ku[i]);
        }
    }

    fn fixed_left(nx: usize, ny: usize) -> Mesh2D {
        let mut m = build_rect_mesh(nx, ny, 1.0, 1.0, None).unwrap().mesh;
        m.dirichlet = m.nodes_where(|x, _| x == 0.0).into_iter().collect();
        m
    }

    fn mats(mat: Material) -> Materials {
        [(0u32, mat)].into_iter().collect()
    }

    #[test]
    fn assembled_matrices_symmetric_and_definite() {
        let mesh = fixed_left(2, 2);
        let dofs = DofMap::new(&mesh);
        let sys = assemble(&mesh, &mats(steel_like()), &dofs).unwrap();
        assert_eq!(sys.n(), 12);
        for a in [&sys.stiffness, &sys.mass] {
            let d = to_dense(a);
            let asym = (&d - d.transpose()).amax();
            assert!(asym <= 1e-12 * d.amax());
            let eig = nalgebra::SymmetricEigen::new(d.clone()).eigenvalues;
            assert!(eig.min() > 0.0, "min eigenvalue {}", eig.min());
        }
    }

    #[test]
    fn unconstrained_stiffness_has_rigid_modes() {
        let mesh = build_rect_mesh(3, 2, 1.5, 1.0, None).unwrap().mesh;
        let dofs = DofMap::unconstrained(mesh.n_nodes());
        let sys = assemble(&mesh, &mats(steel_like()), &dofs).unwrap();
        let k = to_dense(&sys.stiffness);
        let n = k.nrows();
        let tx = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { 0.0 });
        let rot = DVector::from_fn(n, |i, _| {
            let c = mesh.coords[i / 2];
            if i % 2 == 0 { -c[1] } else { c[0] }
        });
        assert!((&k * tx).amax() < 1e-10 * k.amax());
        assert!((&k * rot).amax() < 1e-10 * k.amax());
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for _ in 0..1000 {
            let u = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            assert!((u.transpose() * &k * &u)[0] >= -1e-10);
        }
    }

    #[test]
    fn two_bodies_do_not_couple() {
        let text = "NODES 8\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n2 0 1\n3 0 1\n3 1 1\n2 1 1\nELEMENTS 2 Q4\n0 1 2 3\n4 5 6 7\n";
        let mesh = Mesh2D::parse(text).unwrap();
        let mut materials = mats(steel_like());
        assert!(matches!(
            assemble(&mesh, &materials, &DofMap::new(&mesh)),
            Err(Error::MissingMaterial(1))
        ));
        materials.insert(1, Material::new(2000.0, 0.25, 2.0).unwrap());
        let sys = assemble(&mesh, &materials, &DofMap::new(&mesh)).unwrap();
        let k = to_dense(&sys.stiffness);
        for i in 0..8 {
            for j in 8..16 {
                assert_eq!(k[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn patch_test_constant_stress() {
        // distorted 2x2 patch, linear displacement field
        let mut mesh = build_rect_mesh(2, 2, 2.0, 2.0, None).unwrap().mesh;
        mesh.coords[4] = [1.13, 0.87];
        mesh.coords[1] = [0.92, 0.0];
        mesh.validate().unwrap();
        let mat = steel_like();
        let (ex, ey, gxy) = (1e-3, -4e-4, 6e-4);
        let field = |p: [f64; 2]| [ex * p[0] + 0.5 * gxy * p[1], ey * p[1] + 0.5 * gxy * p[0]];
        let expected = stress_from_gradient(&mat, &[[ex, 0.5 * gxy], [0.5 * gxy, ey]]);
        for (e, el) in mesh.elements.iter().enumerate() {
            let coords = mesh.element_coords(e);
            let u: Vec<[f64; 2]> = el.iter().map(|&n| field(mesh.coords[n])).collect();
            for p in [[0.0, 0.0], [0.3, -0.7], [-1.0, 1.0]] {
                let s = stress_from_gradient(&mat, &displacement_gradient(&coords, mesh.kind, &u, p));
                for c in 0..3 {
                    assert!((s[c] - expected[c]).abs() <= 1e-8 * expected[0].abs());
                }
            }
        }
        // interior equilibrium: K u has no residual at the free interior node
        let dofs = DofMap::unconstrained(mesh.n_nodes());
        let sys = assemble(&mesh, &mats(mat), &dofs).unwrap();
        let u: Vec<f64> = mesh.coords.iter().flat_map(|&p| field(p)).collect();
        let r = to_dense(&sys.stiffness) * DVector::from_vec(u);
        assert!(r[8].abs() < 1e-10 && r[9].abs() < 1e-10);
    }

    #[test]
    fn crack_load_values() {
        let mesh = fixed_left(2, 2);
        let dofs = DofMap::new(&mesh);
        let spec = LoadSpec {
            nodes: mesh.nodes_where(|x, _| x == 1.0),
            direction: [1.0, 0.0],
            waveform: Waveform::Sine {
                amplitude: 1.5,
                angular_frequency: 0.1 * std::f64::consts::PI,
                phase: 0.0,
            },
        };
        spec.validate(&mesh).unwrap();
        let f = load_vector(std::slice::from_ref(&spec), 5.0, &dofs);
        for &n in &spec.nodes {
            assert!((f[dofs.free(n, 0).unwrap()] - 1.5).abs() < 1e-14);
            assert_eq!(f[dofs.free(n, 1).unwrap()], 0.0);
        }
        assert!((f.sum() - 4.5).abs() < 1e-13);
        assert_eq!(load_vector(&[spec], 0.0, &dofs).amax(), 0.0);
    }

    #[test]
    fn superposed_loads() {
        let mesh = fixed_left(2, 2);
        let dofs = DofMap::new(&mesh);
        let vertical = LoadSpec {
            nodes: vec![8],
            direction: [0.0, -1.0],
            waveform: Waveform::Constant { value: 100.0 },
        };
        let rotating = LoadSpec {
            nodes: vec![8],
            direction: [1.0, 0.0],
            waveform: Waveform::Sine {
                amplitude: 25000.0,
                angular_frequency: 2.0 * std::f64::consts::PI * 4.0,
                phase: 0.0,
            },
        };
        let t = 1.0 / 16.0; // quarter period at 4 Hz
        let f = load_vector(&[vertical, rotating], t, &dofs);
        assert!((f[dofs.free(8, 0).unwrap()] - 25000.0).abs() < 1e-9);
        assert_eq!(f[dofs.free(8, 1).unwrap()], -100.0);
    }
}
