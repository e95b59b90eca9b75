//! Declarative scenario files (TOML next to a mesh file) and generators for
//! the two reference problems.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::contact::ContactPairing;
use crate::error::{Error, Result};
use crate::fem::{LoadSpec, Material, Materials, Waveform};
use crate::mesh::{build_rect_mesh, ContactSection, CrackOrientation, CrackSpec, ElementKind, Mesh2D};
use crate::ncp::{NcpOptions, StiffnessLag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
pub enum Mode {
    #[default]
    #[serde(rename = "full")]
    #[value(name = "full")]
    Full,
    #[serde(rename = "rom-cb")]
    #[value(name = "rom-cb")]
    ReducedCb,
    #[serde(rename = "rom-plain")]
    #[value(name = "rom-plain")]
    ReducedPlainKrylov,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::ReducedCb => "rom-cb",
            Mode::ReducedPlainKrylov => "rom-plain",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSection {
    /// Relative paths are resolved against the scenario file's directory.
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialEntry {
    pub body: u32,
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSettings {
    #[serde(default)]
    pub update: bool,
    #[serde(default = "default_update_tol")]
    pub tol: f64,
}

fn default_update_tol() -> f64 {
    crate::contact::DEFAULT_UPDATE_TOL
}

impl Default for ContactSettings {
    fn default() -> Self {
        ContactSettings {
            update: false,
            tol: default_update_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSettings {
    #[serde(default)]
    pub t0: f64,
    pub h: f64,
    /// Number of time points including the two bootstrap points.
    pub steps: usize,
    /// Initial displacement on the free DOFs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Vec<f64>>,
    /// Initial velocity on the free DOFs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub stiffness_lag: StiffnessLag,
}

fn default_max_iter() -> usize {
    25
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: None,
            max_iter: default_max_iter(),
            stiffness_lag: StiffnessLag::Current,
        }
    }
}

impl SolverSettings {
    pub fn ncp_options(&self) -> NcpOptions {
        NcpOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionSettings {
    #[serde(default)]
    pub mode: Mode,
    /// Krylov vectors for the slave block.
    #[serde(default = "default_krylov")]
    pub krylov: usize,
    /// Basis size of the plain Krylov baseline; defaults to the
    /// Craig-Bampton size (masters + `krylov`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plain_dim: Option<usize>,
    /// Make the element neighbours of the contact sensor masters so its
    /// stress needs no basis rows.
    #[serde(default)]
    pub promote_stress_neighbours: bool,
}

fn default_krylov() -> usize {
    3
}

impl Default for ReductionSettings {
    fn default() -> Self {
        ReductionSettings {
            mode: Mode::Full,
            krylov: default_krylov(),
            plain_dim: None,
            promote_stress_neighbours: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    #[serde(default)]
    pub name: String,
    /// Mesh nodes whose displacements are written every step.
    #[serde(default)]
    pub sensors: Vec<usize>,
    /// Position in the contact node list used for gap and pressure output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact_sensor: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mesh: MeshSection,
    #[serde(rename = "material")]
    pub materials: Vec<MaterialEntry>,
    #[serde(default, rename = "load")]
    pub loads: Vec<LoadSpec>,
    #[serde(default)]
    pub contact: ContactSettings,
    pub time: TimeSettings,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub reduction: ReductionSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

/// A scenario with its mesh loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub mesh: Mesh2D,
}

impl Scenario {
    pub fn new(config: ScenarioConfig, mesh: Mesh2D) -> Result<Self> {
        let s = Scenario { config, mesh };
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ScenarioConfig =
            toml::from_str(&text).map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))?;
        let mesh_path = if config.mesh.file.is_absolute() {
            config.mesh.file.clone()
        } else {
            path.parent().unwrap_or(Path::new(".")).join(&config.mesh.file)
        };
        let mesh = Mesh2D::load(&mesh_path)?;
        Self::new(config, mesh)
    }

    /// Writes `<dir>/<stem>.toml` and the mesh file named in the config.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.mesh.save(dir.join(&self.config.mesh.file))?;
        let path = dir.join(format!("{stem}.toml"));
        let text = toml::to_string_pretty(&self.config).map_err(|e| Error::Scenario(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn materials(&self) -> Result<Materials> {
        let mut out = Materials::new();
        for m in &self.config.materials {
            let mat = Material::new(m.young_modulus, m.poisson_ratio, m.density)?;
            if out.insert(m.body, mat).is_some() {
                return Err(Error::Scenario(format!("material for body {} given twice", m.body)));
            }
        }
        Ok(out)
    }

    pub fn pairing(&self) -> Result<Option<ContactPairing>> {
        if self.mesh.contact.is_empty() {
            return Ok(None);
        }
        ContactPairing::from_section(&self.mesh.contact).map(Some)
    }

    pub fn name(&self) -> &str {
        if self.config.output.name.is_empty() {
            "run"
        } else {
            &self.config.output.name
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.config.time;
        if !(t.h > 0.0) || !t.h.is_finite() {
            return Err(Error::Scenario(format!("time step h = {} must be positive", t.h)));
        }
        if t.steps < 2 {
            return Err(Error::Scenario("at least two time points are required".into()));
        }
        let materials = self.materials()?;
        for b in self.mesh.bodies() {
            if !materials.contains_key(&b) {
                return Err(Error::MissingMaterial(b));
            }
        }
        for l in &self.config.loads {
            l.validate(&self.mesh)?;
        }
        let n_free = crate::mesh::DofMap::new(&self.mesh).n_free();
        for (what, v) in [("q0", &t.q0), ("v0", &t.v0)] {
            if let Some(v) = v {
                if v.len() != n_free {
                    return Err(Error::Scenario(format!(
                        "{what} has {} entries, the mesh has {n_free} free DOFs",
                        v.len()
                    )));
                }
            }
        }
        if let Some(&s) = self.config.output.sensors.iter().find(|&&s| s >= self.mesh.n_nodes()) {
            return Err(Error::Scenario(format!("sensor node {s} out of range")));
        }
        let m = self.mesh.contact.nodes.len();
        if let Some(k) = self.config.output.contact_sensor {
            if k >= m {
                return Err(Error::Scenario(format!(
                    "contact sensor {k} out of range ({m} contact nodes)"
                )));
            }
        }
        let c = &self.config.contact;
        if self.config.contact.update && !(c.tol > 0.0 && c.tol < 1.0) {
            return Err(Error::Scenario(format!("contact update tolerance {} not in (0, 1)", c.tol)));
        }
        if let Some(p) = self.pairing()? {
            for n in p.all_nodes() {
                if n >= self.mesh.n_nodes() {
                    return Err(Error::InvalidContact(format!("contact node {n} out of range")));
                }
                if self.mesh.dirichlet.contains(&n) {
                    return Err(Error::FixedContactNode(n));
                }
            }
        }
        Ok(())
    }

    pub fn initial_state(&self, n_free: usize) -> (DVector<f64>, DVector<f64>) {
        let t = &self.config.time;
        let q0 = t.q0.as_ref().map_or_else(|| DVector::zeros(n_free), |v| DVector::from_column_slice(v));
        let v0 = t.v0.as_ref().map_or_else(|| DVector::zeros(n_free), |v| DVector::from_column_slice(v));
        (q0, v0)
    }
}

/// Parameters of the torn-square problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CrackParams {
    pub nx: usize,
    pub ny: usize,
    /// Crack cells counted from the top edge.
    pub crack_cells: usize,
    pub h: f64,
    pub t_end: f64,
    pub mode: Mode,
    pub krylov: usize,
}

impl CrackParams {
    /// Square of `n x n` cells with a crack over the top 30 %.
    pub fn square(n: usize) -> Self {
        CrackParams {
            nx: n,
            ny: n,
            crack_cells: ((0.3 * n as f64).round() as usize).max(1),
            h: 0.05,
            t_end: 20.0,
            mode: Mode::Full,
            krylov: 3,
        }
    }
}

/// Unit square, left edge clamped, vertical crack at `x = 0.5` from the top
/// edge down. The right crack face carries the contact nodes, the left face
/// the segments (top to bottom, normals pointing into the right face). Every
/// right-edge node is loaded with `1.5 sin(0.1 pi t)` along x.
pub fn crack_scenario(p: &CrackParams) -> Result<Scenario> {
    if !p.nx.is_multiple_of(2) {
        return Err(Error::Scenario("crack scenario needs an even nx".into()));
    }
    if p.crack_cells == 0 || p.crack_cells >= p.ny {
        return Err(Error::Scenario("crack must cover between 1 and ny-1 cells".into()));
    }
    let dy = 1.0 / p.ny as f64;
    let crack = CrackSpec {
        orientation: CrackOrientation::Vertical,
        position: 0.5,
        start: (p.ny - p.crack_cells) as f64 * dy,
        end: 1.0,
    };
    let rm = build_rect_mesh(p.nx, p.ny, 1.0, 1.0, Some(&crack))?;
    let mut mesh = rm.mesh;
    mesh.dirichlet = mesh.nodes_where(|x, _| x == 0.0).into_iter().collect();
    let top = rm.face_minus.len() - 1;
    // face lists run bottom (tip) to top
    let segments: Vec<[usize; 2]> = (0..top).map(|s| [rm.face_minus[top - s], rm.face_minus[top - s - 1]]).collect();
    let nodes: Vec<usize> = (0..top).map(|s| rm.face_plus[top - s]).collect();
    mesh.contact = ContactSection {
        nodes,
        segments,
        pairing: (0..top).collect(),
    };
    let right = mesh.nodes_where(|x, _| x == 1.0);
    let mid_right = *right
        .iter()
        .min_by(|&&a, &&b| {
            let da = (mesh.coords[a][1] - 0.5).abs();
            let db = (mesh.coords[b][1] - 0.5).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    let contact_sensor = top / 2;
    let steps = (p.t_end / p.h).round() as usize + 1;
    let config = ScenarioConfig {
        mesh: MeshSection {
            file: PathBuf::from("crack.mesh"),
        },
        materials: vec![MaterialEntry {
            body: 0,
            young_modulus: 1000.0,
            poisson_ratio: 0.3,
            density: 1.0,
        }],
        loads: vec![LoadSpec {
            nodes: right,
            direction: [1.0, 0.0],
            waveform: Waveform::Sine {
                amplitude: 1.5,
                angular_frequency: 0.1 * std::f64::consts::PI,
                phase: 0.0,
            },
        }],
        contact: ContactSettings::default(),
        time: TimeSettings {
            t0: 0.0,
            h: p.h,
            steps,
            q0: None,
            v0: None,
        },
        solver: SolverSettings::default(),
        reduction: ReductionSettings {
            mode: p.mode,
            krylov: p.krylov,
            ..ReductionSettings::default()
        },
        output: OutputSettings {
            name: "crack".into(),
            sensors: vec![mesh.contact.nodes[contact_sensor], mid_right],
            contact_sensor: Some(contact_sensor),
        },
    };
    Scenario::new(config, mesh)
}

/// Parameters of the wheel-on-rail problem (units N, mm, s).
#[derive(Debug, Clone, PartialEq)]
pub struct WheelRailParams {
    /// Rail cells along x and y.
    pub rail_nx: usize,
    pub rail_ny: usize,
    /// Wheel cells around the half circumference and through the steel rim.
    pub wheel_nt: usize,
    pub wheel_nr: usize,
    pub h: f64,
    pub t_end: f64,
    pub mode: Mode,
    pub krylov: usize,
    /// Total vertical load.
    pub vertical: f64,
    /// Amplitude and frequency (Hz) of the horizontal load.
    pub horizontal: f64,
    pub frequency: f64,
}

impl Default for WheelRailParams {
    fn default() -> Self {
        WheelRailParams {
            rail_nx: 24,
            rail_ny: 6,
            wheel_nt: 40,
            wheel_nr: 6,
            h: 2.5e-3,
            t_end: 0.5,
            mode: Mode::Full,
            krylov: 3,
            vertical: 5.0e4,
            horizontal: 2.5e4,
            frequency: 4.0,
        }
    }
}

const RAIL_WIDTH: f64 = 120.0;
const RAIL_HEIGHT: f64 = 40.0;
const WHEEL_OUTER: f64 = 100.0;
const WHEEL_INNER: f64 = 60.0;

/// Lower half of an annular steel wheel (body 1, hub arc clamped) resting
/// on a rectangular rail (body 0, bottom clamped). Rim nodes near the bottom
/// are contact nodes against the rail's top segments (left to right, normal
/// +y). Loads act on the wheel's two cut faces.
pub fn wheelrail_scenario(p: &WheelRailParams) -> Result<Scenario> {
    if p.rail_nx < 2 || p.rail_ny < 1 || p.wheel_nt < 4 || p.wheel_nr < 1 {
        return Err(Error::Scenario("wheel-rail mesh too coarse".into()));
    }
    let mut coords: Vec<[f64; 2]> = Vec::new();
    let mut body = Vec::new();
    let mut elements = Vec::new();
    let (dx, dy) = (RAIL_WIDTH / p.rail_nx as f64, RAIL_HEIGHT / p.rail_ny as f64);
    for j in 0..=p.rail_ny {
        for i in 0..=p.rail_nx {
            coords.push([i as f64 * dx, j as f64 * dy]);
            body.push(0);
        }
    }
    let rid = |i: usize, j: usize| j * (p.rail_nx + 1) + i;
    for j in 0..p.rail_ny {
        for i in 0..p.rail_nx {
            elements.push(vec![rid(i, j), rid(i + 1, j), rid(i + 1, j + 1), rid(i, j + 1)]);
        }
    }
    let base = coords.len();
    let center = [RAIL_WIDTH / 2.0, RAIL_HEIGHT + WHEEL_OUTER];
    let rim = p.wheel_nr;
    // ring 0 is the hub, ring `rim` the tread; angles run from pi to 2 pi
    for r in 0..=rim {
        let rad = WHEEL_INNER + (WHEEL_OUTER - WHEEL_INNER) * r as f64 / rim as f64;
        for k in 0..=p.wheel_nt {
            let th = std::f64::consts::PI * (1.0 + k as f64 / p.wheel_nt as f64);
            let mut x = center[0] + rad * th.cos();
            let mut y = center[1] + rad * th.sin();
            if 2 * k == p.wheel_nt {
                x = center[0];
            }
            if k == 0 || k == p.wheel_nt {
                y = center[1];
            }
            coords.push([x, y]);
            body.push(1);
        }
    }
    let wid = |k: usize, r: usize| base + r * (p.wheel_nt + 1) + k;
    for r in 0..rim {
        for k in 0..p.wheel_nt {
            elements.push(vec![wid(k, r + 1), wid(k + 1, r + 1), wid(k + 1, r), wid(k, r)]);
        }
    }
    let mut dirichlet: BTreeSet<usize> = (0..=p.rail_nx).map(|i| rid(i, 0)).collect();
    dirichlet.extend((0..=p.wheel_nt).map(|k| wid(k, 0)));

    // contact window: rim nodes within 20 % of the radius from the bottom
    let half = 0.2 * WHEEL_OUTER;
    let nodes: Vec<usize> = (0..=p.wheel_nt)
        .map(|k| wid(k, rim))
        .filter(|&n| (coords[n][0] - center[0]).abs() <= half && coords[n][1] < center[1])
        .collect();
    let top: Vec<usize> = (0..=p.rail_nx).map(|i| rid(i, p.rail_ny)).collect();
    if nodes.is_empty() {
        return Err(Error::Scenario("wheel-rail contact window is empty".into()));
    }
    let segments: Vec<[usize; 2]> = top.windows(2).map(|w| [w[0], w[1]]).collect();
    let pairing: Vec<usize> = nodes
        .iter()
        .map(|&n| {
            let x = coords[n][0];
            segments
                .iter()
                .position(|s| x >= coords[s[0]][0] && x < coords[s[1]][0])
                .unwrap_or(segments.len() - 1)
        })
        .collect();
    let mut mesh = Mesh2D::new(coords, elements, ElementKind::Q4, dirichlet, Some(body))?;
    let contact_sensor = nodes
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let da = (mesh.coords[*a.1][0] - center[0]).abs();
            let db = (mesh.coords[*b.1][0] - center[0]).abs();
            da.partial_cmp(&db).unwrap()
        })
        .map(|(i, _)| i)
        .unwrap();
    mesh.contact = ContactSection {
        nodes: nodes.clone(),
        segments,
        pairing,
    };
    mesh.validate()?;

    let cut: Vec<usize> = (1..=rim).flat_map(|r| [wid(0, r), wid(p.wheel_nt, r)]).collect();
    let per_node = 1.0 / cut.len() as f64;
    let steps = (p.t_end / p.h).round() as usize + 1;
    let steel = MaterialEntry {
        body: 0,
        young_modulus: 206_940.0,
        poisson_ratio: 0.288,
        density: 7.85e-9,
    };
    let config = ScenarioConfig {
        mesh: MeshSection {
            file: PathBuf::from("wheelrail.mesh"),
        },
        materials: vec![steel.clone(), MaterialEntry { body: 1, ..steel }],
        loads: vec![
            LoadSpec {
                nodes: cut.clone(),
                direction: [0.0, -1.0],
                waveform: Waveform::Constant {
                    value: p.vertical * per_node,
                },
            },
            LoadSpec {
                nodes: cut,
                direction: [1.0, 0.0],
                waveform: Waveform::Sine {
                    amplitude: p.horizontal * per_node,
                    angular_frequency: 2.0 * std::f64::consts::PI * p.frequency,
                    phase: 0.0,
                },
            },
        ],
        contact: ContactSettings {
            update: true,
            tol: crate::contact::DEFAULT_UPDATE_TOL,
        },
        time: TimeSettings {
            t0: 0.0,
            h: p.h,
            steps,
            q0: None,
            v0: None,
        },
        solver: SolverSettings::default(),
        reduction: ReductionSettings {
            mode: p.mode,
            krylov: p.krylov,
            ..ReductionSettings::default()
        },
        output: OutputSettings {
            name: "wheelrail".into(),
            sensors: vec![nodes[contact_sensor]],
            contact_sensor: Some(contact_sensor),
        },
    };
    Scenario::new(config, mesh)
}
