//! Two-step implicit Euler march with contact, for full and reduced models.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::contact::{assemble_constraints, update_pairing, ContactPairing, ConstraintSet};
use crate::error::{Error, Result};
use crate::fem::{assemble, displacement_gradient, stress_from_gradient, von_mises, Materials, SystemMatrices, TimeLoad, Q4_NODES};
use crate::linalg::SymMatrix;
use crate::mesh::{partition_dofs, DofMap, DofPartition, ElementKind, Mesh2D};
use crate::mor::{build_craig_bampton, build_plain_krylov, ReducedModel};
use crate::ncp::{complementarity_holds, solve_ncp, Context, OperatorBundle, StepHistory};
use crate::scenario::{Mode, Scenario};

/// Result of the offline phase.
#[derive(Debug, Clone)]
pub struct Offline {
    pub mode: Mode,
    pub seconds: f64,
    pub dofs: DofMap,
    pub materials: Materials,
    pub system: SystemMatrices,
    pub pairing: ContactPairing,
    pub partition: Option<DofPartition>,
    /// Full-space constraints for the current pairing.
    pub constraints: ConstraintSet,
    pub load: TimeLoad,
    pub reduced: Option<ReducedModel>,
    pub ops: OperatorBundle,
}

fn empty_pairing() -> ContactPairing {
    ContactPairing {
        nodes: Vec::new(),
        segments: Vec::new(),
        selecting: Vec::new(),
    }
}

/// Nodes of the elements around `node`.
fn element_neighbours(mesh: &Mesh2D, node: usize) -> BTreeSet<usize> {
    mesh.elements_of_node(node)
        .into_iter()
        .flat_map(|e| mesh.elements[e].iter().copied())
        .collect()
}

/// Assembles the system and builds the reduction requested by `mode`.
pub fn offline(scenario: &Scenario, mode: Mode) -> Result<Offline> {
    let start = Instant::now();
    let mesh = &scenario.mesh;
    let cfg = &scenario.config;
    let materials = scenario.materials()?;
    let dofs = DofMap::new(mesh);
    let system = assemble(mesh, &materials, &dofs)?;
    let pairing = scenario.pairing()?.unwrap_or_else(empty_pairing);
    let load = TimeLoad::new(&cfg.loads, &dofs);
    let mut partition = None;
    if mode == Mode::ReducedCb {
        let mut masters = pairing.all_nodes();
        if cfg.reduction.promote_stress_neighbours {
            if let Some(k) = cfg.output.contact_sensor {
                masters.extend(element_neighbours(mesh, pairing.nodes[k]));
            }
        }
        masters.retain(|n| !mesh.dirichlet.contains(n));
        partition = Some(partition_dofs(mesh, &dofs, &masters)?);
    }
    let constraints = assemble_constraints(mesh, &dofs, &pairing, partition.as_ref())?;
    let (reduced, ops) = match mode {
        Mode::Full => {
            let ops = OperatorBundle::new(
                SymMatrix::Sparse(system.mass.clone()),
                SymMatrix::Sparse(system.stiffness.clone()),
                constraints.clone(),
                load.clone(),
            )?;
            (None, ops)
        }
        Mode::ReducedCb => {
            let part = partition.as_ref().unwrap();
            let rm = build_craig_bampton(&system, part, &constraints, &load, cfg.reduction.krylov)?;
            let ops = rm.bundle()?;
            (Some(rm), ops)
        }
        Mode::ReducedPlainKrylov => {
            let dim = cfg.reduction.plain_dim.unwrap_or_else(|| {
                let masters = pairing.all_nodes().iter().filter(|n| !mesh.dirichlet.contains(n)).count();
                2 * masters + cfg.reduction.krylov
            });
            let rm = build_plain_krylov(&system, &constraints, &load, dim)?;
            let ops = rm.bundle()?;
            (Some(rm), ops)
        }
    };
    log::info!(
        "offline: N = {}, n = {}, m = {}, mode {}",
        dofs.n_free(),
        ops.n(),
        ops.m(),
        mode
    );
    Ok(Offline {
        mode,
        seconds: start.elapsed().as_secs_f64(),
        dofs,
        materials,
        system,
        pairing,
        partition,
        constraints,
        load,
        reduced,
        ops,
    })
}

impl Offline {
    fn to_full(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.reduced {
            Some(rm) => rm.expand(w),
            None => Ok(w.clone()),
        }
    }

    fn to_reduced(&self, q: &DVector<f64>) -> DVector<f64> {
        match &self.reduced {
            Some(rm) => rm.project(q),
            None => q.clone(),
        }
    }

    fn set_pairing(&mut self, mesh: &Mesh2D, pairing: ContactPairing) -> Result<()> {
        let full = assemble_constraints(mesh, &self.dofs, &pairing, self.partition.as_ref())?;
        let reduced = match &self.reduced {
            Some(rm) => rm.reduce_constraints(&full)?,
            None => full.clone(),
        };
        self.ops.set_constraints(reduced)?;
        self.constraints = full;
        self.pairing = pairing;
        Ok(())
    }
}

/// One accepted time point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    /// Displacement on the free DOFs (expanded for reduced runs).
    pub q: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Constraint values the complementarity certificate was checked on.
    pub gap: Vec<f64>,
    /// 0 for the two bootstrap points.
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub restarted: bool,
    pub certified: bool,
    pub pairing_version: usize,
    /// von Mises stress at the contact sensor node.
    pub von_mises: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub name: String,
    pub mode: Mode,
    /// Free DOFs of the full model.
    pub n_full: usize,
    /// Unknowns of the model that was integrated.
    pub n: usize,
    pub n_master: usize,
    pub n_krylov: usize,
    pub m: usize,
    pub sensors: Vec<usize>,
    pub contact_sensor: Option<usize>,
    /// Free-DOF indices of each sensor, `None` for a fixed component.
    pub sensor_dofs: Vec<[Option<usize>; 2]>,
    pub offline_seconds: f64,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn online_seconds(&self) -> f64 {
        self.steps.iter().map(|s| s.seconds).sum()
    }

    pub fn all_certified(&self) -> bool {
        self.steps.iter().all(|s| s.certified)
    }

    /// NCP iteration counts of the solved steps (bootstrap points excluded).
    pub fn iteration_counts(&self) -> Vec<usize> {
        self.steps.iter().skip(2).map(|s| s.iterations).collect()
    }

    pub fn sensor_displacement(&self, step: usize, sensor: usize) -> [f64; 2] {
        let q = &self.steps[step].q;
        self.sensor_dofs[sensor].map(|d| d.map_or(0.0, |i| q[i]))
    }

    /// `(g, λ)` at the contact sensor for every step.
    pub fn contact_trace(&self) -> Option<Vec<(f64, f64)>> {
        let k = self.contact_sensor?;
        Some(self.steps.iter().map(|s| (s.gap[k], s.lambda[k])).collect())
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from("t");
        for s in &self.sensors {
            let _ = write!(h, ",ux_{s},uy_{s}");
        }
        h.push_str(",g_CN,p_CN,ncp_iterations,pairing_version,von_mises_CN");
        h
    }

    /// One row per time point; floats use the shortest representation that
    /// round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for (i, s) in self.steps.iter().enumerate() {
            let _ = write!(out, "{}", s.t);
            for k in 0..self.sensors.len() {
                let [ux, uy] = self.sensor_displacement(i, k);
                let _ = write!(out, ",{ux},{uy}");
            }
            let (g, p) = self.contact_sensor.map_or((f64::NAN, f64::NAN), |k| (s.gap[k], s.lambda[k]));
            let _ = writeln!(
                out,
                ",{g},{p},{},{},{}",
                s.iterations,
                s.pairing_version,
                s.von_mises.unwrap_or(f64::NAN)
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn summary(&self, scenario: &Scenario, failure: Option<&Error>) -> RunSummary {
        let counts = self.iteration_counts();
        let solver = &scenario.config.solver;
        RunSummary {
            name: self.name.clone(),
            mode: self.mode,
            n_full: self.n_full,
            n: self.n,
            n_master: self.n_master,
            n_krylov: self.n_krylov,
            m: self.m,
            h: scenario.config.time.h,
            t0: scenario.config.time.t0,
            steps_requested: scenario.config.time.steps,
            steps_completed: self.steps.len(),
            ncp_tol: solver.tol,
            ncp_max_iter: solver.max_iter,
            stiffness_lag: solver.stiffness_lag,
            total_iterations: counts.iter().sum(),
            max_iterations: counts.iter().copied().max().unwrap_or(0),
            restarts: self.steps.iter().filter(|s| s.restarted).count(),
            pairing_updates: self.steps.last().map_or(0, |s| s.pairing_version),
            all_certified: self.all_certified(),
            offline_seconds: self.offline_seconds,
            online_seconds: self.online_seconds(),
            error: failure.map(|e| e.to_string()),
        }
    }
}

/// Dimensions, tolerances and totals of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub mode: Mode,
    pub n_full: usize,
    pub n: usize,
    pub n_master: usize,
    pub n_krylov: usize,
    pub m: usize,
    pub h: f64,
    pub t0: f64,
    pub steps_requested: usize,
    pub steps_completed: usize,
    pub ncp_tol: Option<f64>,
    pub ncp_max_iter: usize,
    pub stiffness_lag: crate::ncp::StiffnessLag,
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub restarts: usize,
    pub pairing_updates: usize,
    pub all_certified: bool,
    pub offline_seconds: f64,
    pub online_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Nodal stress: element displacement gradients evaluated at the node and
/// averaged over the adjacent elements. `q` lives on the free DOFs.
pub fn recover_stress(
    mesh: &Mesh2D,
    materials: &Materials,
    dofs: &DofMap,
    q: &[f64],
    node: usize,
) -> Result<([[f64; 2]; 2], f64)> {
    let elements = mesh.elements_of_node(node);
    if elements.is_empty() {
        return Err(Error::InvalidMesh(format!("node {node} belongs to no element")));
    }
    let mut grad = [[0.0; 2]; 2];
    for &e in &elements {
        let el = &mesh.elements[e];
        let u: Vec<[f64; 2]> = el.iter().map(|&a| dofs.node_displacement(q, a)).collect();
        let local = match mesh.kind {
            ElementKind::Q4 => Q4_NODES[el.iter().position(|&a| a == node).unwrap()],
            ElementKind::T3 => [0.0; 2],
        };
        let g = displacement_gradient(&mesh.element_coords(e), mesh.kind, &u, local);
        for i in 0..2 {
            for j in 0..2 {
                grad[i][j] += g[i][j];
            }
        }
    }
    let inv = 1.0 / elements.len() as f64;
    for row in &mut grad {
        for v in row {
            *v *= inv;
        }
    }
    let mat = materials
        .get(&mesh.body[node])
        .ok_or(Error::MissingMaterial(mesh.body[node]))?;
    let s = stress_from_gradient(mat, &grad);
    Ok(([[s[0], s[2]], [s[2], s[1]]], von_mises(&s)))
}

/// Free DOFs a stress evaluation at `node` reads.
fn stress_rows(mesh: &Mesh2D, dofs: &DofMap, node: usize) -> Vec<usize> {
    element_neighbours(mesh, node)
        .into_iter()
        .flat_map(|a| [dofs.free(a, 0), dofs.free(a, 1)])
        .flatten()
        .collect()
}

/// Runs the scenario. A failing step ends the march; the error is returned
/// next to the trajectory accepted so far. Offline failures are the outer
/// error.
pub fn run_partial(scenario: &Scenario, mode: Mode) -> Result<(Trajectory, Option<Error>)> {
    scenario.validate()?;
    march(scenario, offline(scenario, mode)?)
}

/// Online phase on a prepared offline model.
pub fn march(scenario: &Scenario, mut off: Offline) -> Result<(Trajectory, Option<Error>)> {
    let mode = off.mode;
    let cfg = &scenario.config;
    let mesh = &scenario.mesh;
    let (h, t0) = (cfg.time.h, cfg.time.t0);
    let opts = cfg.solver.ncp_options();
    let m = off.ops.m();

    let stress_node = cfg.output.contact_sensor.map(|k| off.pairing.nodes[k]);
    let rows = stress_node.map(|n| stress_rows(mesh, &off.dofs, n)).unwrap_or_default();
    let stress_at = |off: &Offline, w: &DVector<f64>, q: &DVector<f64>| -> Result<Option<f64>> {
        let Some(node) = stress_node else { return Ok(None) };
        let vm = match &off.reduced {
            // tracked rows of the basis
            Some(rm) => {
                let vals = rm.expand_rows(&rows, w)?;
                let mut sparse = vec![0.0; off.dofs.n_free()];
                for (&r, v) in rows.iter().zip(vals) {
                    sparse[r] = v;
                }
                recover_stress(mesh, &off.materials, &off.dofs, &sparse, node)?.1
            }
            None => recover_stress(mesh, &off.materials, &off.dofs, q.as_slice(), node)?.1,
        };
        Ok(Some(vm))
    };

    let mut traj = Trajectory {
        name: scenario.name().to_string(),
        mode,
        n_full: off.dofs.n_free(),
        n: off.ops.n(),
        n_master: off.reduced.as_ref().map_or(0, |r| r.n_master()),
        n_krylov: off.reduced.as_ref().map_or(0, |r| r.n_krylov),
        m,
        sensors: cfg.output.sensors.clone(),
        contact_sensor: cfg.output.contact_sensor,
        sensor_dofs: cfg
            .output
            .sensors
            .iter()
            .map(|&s| [off.dofs.free(s, 0), off.dofs.free(s, 1)])
            .collect(),
        offline_seconds: off.seconds,
        steps: Vec::with_capacity(cfg.time.steps),
    };

    // explicit Euler bootstrap with λ = 0
    let (q0, v0) = scenario.initial_state(off.dofs.n_free());
    let w0 = off.to_reduced(&q0);
    let w1 = &w0 + off.to_reduced(&v0) * h;
    let zero = DVector::zeros(m);
    for (i, w) in [&w0, &w1].into_iter().enumerate() {
        let clock = Instant::now();
        let q = off.to_full(w)?;
        let gap = off.ops.constraint_f(w);
        let von_mises = stress_at(&off, w, &q)?;
        traj.steps.push(StepRecord {
            t: t0 + i as f64 * h,
            q: q.as_slice().to_vec(),
            lambda: vec![0.0; m],
            certified: complementarity_holds(&zero, &gap),
            gap: gap.as_slice().to_vec(),
            iterations: 0,
            residuals: Vec::new(),
            restarted: false,
            pairing_version: 0,
            von_mises,
            seconds: clock.elapsed().as_secs_f64(),
        });
    }

    let mut w_prev2 = w0;
    let mut w_prev = w1;
    let mut lambda_prev = zero;
    let mut version = 0;
    for i in 2..cfg.time.steps {
        let clock = Instant::now();
        let t_next = t0 + i as f64 * h;
        let ctx = Context::Dynamic {
            hist: StepHistory {
                w_prev: w_prev.clone(),
                w_prev2: w_prev2.clone(),
                lambda_prev: lambda_prev.clone(),
                h,
                t_next,
            },
            lag: cfg.solver.stiffness_lag,
        };
        let rep = match solve_ncp(&off.ops, &ctx, &lambda_prev, &opts) {
            Ok(r) => r,
            Err(e) => {
                log::error!("step {i} (t = {t_next}) failed: {e}");
                return Ok((
                    traj,
                    Some(Error::Step {
                        step: i,
                        source: Box::new(e),
                    }),
                ));
            }
        };
        let q = off.to_full(&rep.w)?;
        let certified = rep.complementarity_holds();
        if !certified {
            log::warn!("step {i}: complementarity certificate failed");
        }
        log::debug!(
            "step {i}: t = {t_next}, {} iterations, residuals {:?}",
            rep.iterations,
            rep.residuals
        );
        let von_mises = stress_at(&off, &rep.w, &q)?;
        let record_version = version;
        if cfg.contact.update && m > 0 {
            let upd = update_pairing(&off.pairing, mesh, &off.dofs, &q, cfg.contact.tol)?;
            if upd.changed() {
                version += 1;
                log::info!("step {i}: pairing update moved nodes {:?}", upd.moved);
                if let Err(e) = off.set_pairing(mesh, upd.pairing) {
                    return Ok((traj, Some(Error::Step { step: i, source: Box::new(e) })));
                }
            }
        }
        traj.steps.push(StepRecord {
            t: t_next,
            q: q.as_slice().to_vec(),
            lambda: rep.lambda.as_slice().to_vec(),
            gap: rep.f.as_slice().to_vec(),
            iterations: rep.iterations,
            residuals: rep.residuals.clone(),
            restarted: rep.restarted,
            certified,
            pairing_version: record_version,
            von_mises,
            seconds: clock.elapsed().as_secs_f64(),
        });
        w_prev2 = std::mem::replace(&mut w_prev, rep.w);
        lambda_prev = rep.lambda;
    }
    Ok((traj, None))
}

/// Runs the scenario; a failing step is an error.
pub fn run(scenario: &Scenario, mode: Mode) -> Result<Trajectory> {
    match run_partial(scenario, mode)? {
        (traj, None) => Ok(traj),
        (_, Some(e)) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Material;
    use crate::mesh::build_rect_mesh;
    use crate::scenario::{crack_scenario, CrackParams};

    fn coarse(mode: Mode, t_end: f64) -> Scenario {
        let mut p = CrackParams::square(6);
        p.t_end = t_end;
        p.mode = mode;
        crack_scenario(&p).unwrap()
    }

    #[test]
    fn zero_load_stays_at_rest() {
        let mut s = coarse(Mode::Full, 1.0);
        s.config.loads.clear();
        let traj = run(&s, Mode::Full).unwrap();
        assert_eq!(traj.steps.len(), 21);
        for st in &traj.steps[2..] {
            assert!(st.q.iter().all(|&v| v == 0.0));
            assert!(st.lambda.iter().all(|&v| v == 0.0));
            assert_eq!(st.iterations, 1);
        }
    }

    #[test]
    fn crack_run_is_certified_and_monotone() {
        let s = coarse(Mode::Full, 20.0);
        let traj = run(&s, Mode::Full).unwrap();
        assert!(traj.all_certified());
        assert!(traj.steps.windows(2).all(|w| w[1].t > w[0].t));
        assert!(traj.steps.iter().all(|st| st.lambda.iter().all(|&l| l >= 0.0)));
        // the load pulls the faces apart in the first half period and
        // pushes them together in the second
        let lam_max = traj.steps.iter().flat_map(|s| s.lambda.iter().copied()).fold(0.0, f64::max);
        assert!(lam_max > 0.0);
        let csv = traj.to_csv();
        assert_eq!(csv.lines().count(), traj.steps.len() + 1);
        assert_eq!(csv, run(&s, Mode::Full).unwrap().to_csv());
    }

    #[test]
    fn reduced_runs_expand_to_full_space() {
        for mode in [Mode::ReducedCb, Mode::ReducedPlainKrylov] {
            let s = coarse(mode, 2.0);
            let traj = run(&s, mode).unwrap();
            assert_eq!(traj.steps[0].q.len(), traj.n_full);
            assert!(traj.n < traj.n_full);
        }
    }

    #[test]
    fn stress_of_uniform_strain_and_rigid_motion() {
        let rm = build_rect_mesh(3, 2, 3.0, 2.0, None).unwrap();
        let mesh = rm.mesh;
        let dofs = DofMap::unconstrained(mesh.n_nodes());
        let mat = Material::new(200.0, 0.25, 1.0).unwrap();
        let mats: Materials = [(0, mat)].into_iter().collect();
        let eps = 1e-3;
        let mut q = vec![0.0; dofs.n_free()];
        for (a, x) in mesh.coords.iter().enumerate() {
            q[2 * a] = eps * x[0];
        }
        for node in 0..mesh.n_nodes() {
            let (s, _) = recover_stress(&mesh, &mats, &dofs, &q, node).unwrap();
            let expect = 200.0 * eps / (1.0 - 0.0625);
            assert!((s[0][0] - expect).abs() < 1e-12 * expect);
            assert!(s[0][1].abs() < 1e-12);
        }
        // rotation plus translation
        let th = 1e-4;
        for (a, x) in mesh.coords.iter().enumerate() {
            q[2 * a] = 0.3 - th * x[1];
            q[2 * a + 1] = -0.1 + th * x[0];
        }
        for node in 0..mesh.n_nodes() {
            let (_, vm) = recover_stress(&mesh, &mats, &dofs, &q, node).unwrap();
            assert!(vm.abs() < 1e-10);
        }
    }

    #[test]
    fn stress_averages_over_a_triangle_fan() {
        // node 0 at the origin shared by three triangles
        let coords = vec![[0.0, 0.0], [1.0, 0.0], [0.2, 1.0], [-1.0, 0.3], [0.1, -1.0]];
        let elements = vec![vec![0, 1, 2], vec![0, 2, 3], vec![0, 4, 1]];
        let mesh = Mesh2D::new(coords.clone(), elements.clone(), ElementKind::T3, BTreeSet::new(), None).unwrap();
        let dofs = DofMap::unconstrained(5);
        let mat = Material::new(10.0, 0.3, 1.0).unwrap();
        let mats: Materials = [(0, mat)].into_iter().collect();
        let q = [0.1, -0.2, 0.05, 0.3, -0.4, 0.2, 0.7, 0.1, 0.0, -0.3];
        // per-element gradient from the affine interpolant
        let mut avg = [[0.0; 2]; 2];
        for el in &elements {
            let [a, b, c] = [el[0], el[1], el[2]];
            let j = nalgebra::Matrix2::new(
                coords[b][0] - coords[a][0],
                coords[c][0] - coords[a][0],
                coords[b][1] - coords[a][1],
                coords[c][1] - coords[a][1],
            );
            let jinv = j.try_inverse().unwrap();
            for i in 0..2 {
                let du = nalgebra::RowVector2::new(q[2 * b + i] - q[2 * a + i], q[2 * c + i] - q[2 * a + i]);
                let g = du * jinv;
                avg[i][0] += g[0] / 3.0;
                avg[i][1] += g[1] / 3.0;
            }
        }
        let s = stress_from_gradient(&mat, &avg);
        let (sig, vm) = recover_stress(&mesh, &mats, &dofs, &q, 0).unwrap();
        assert!((sig[0][0] - s[0]).abs() < 1e-12);
        assert!((sig[1][1] - s[1]).abs() < 1e-12);
        assert!((sig[0][1] - s[2]).abs() < 1e-12);
        assert!((vm - von_mises(&s)).abs() < 1e-12);
    }
}
