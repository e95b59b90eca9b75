//! Planar meshes, mesh files, Dirichlet elimination and master/slave DOF
//! partitioning.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementKind {
    Q4,
    T3,
}

impl ElementKind {
    pub fn nodes_per_element(self) -> usize {
        match self {
            ElementKind::Q4 => 4,
            ElementKind::T3 => 3,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ElementKind::Q4 => "Q4",
            ElementKind::T3 => "T3",
        }
    }
}

/// Contact data stored alongside a mesh: penetrating nodes, the ordered
/// segment list and the initial node -> segment selection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactSection {
    pub nodes: Vec<usize>,
    pub segments: Vec<[usize; 2]>,
    pub pairing: Vec<usize>,
}

impl ContactSection {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.segments.is_empty()
    }

    /// Every node referenced by a node or a segment, ascending.
    pub fn all_nodes(&self) -> BTreeSet<usize> {
        self.nodes
            .iter()
            .copied()
            .chain(self.segments.iter().flat_map(|s| s.iter().copied()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh2D {
    pub coords: Vec<[f64; 2]>,
    pub elements: Vec<Vec<usize>>,
    pub kind: ElementKind,
    pub dirichlet: BTreeSet<usize>,
    pub body: Vec<u32>,
    pub contact: ContactSection,
}

impl Mesh2D {
    /// Builds a mesh and checks every invariant.
    pub fn new(
        coords: Vec<[f64; 2]>,
        elements: Vec<Vec<usize>>,
        kind: ElementKind,
        dirichlet: BTreeSet<usize>,
        body: Option<Vec<u32>>,
    ) -> Result<Self> {
        let body = body.unwrap_or_else(|| vec![0; coords.len()]);
        let mesh = Mesh2D {
            coords,
            elements,
            kind,
            dirichlet,
            body,
            contact: ContactSection::default(),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element_coords(&self, e: usize) -> Vec<[f64; 2]> {
        self.elements[e].iter().map(|&n| self.coords[n]).collect()
    }

    /// Largest extent of the bounding box.
    pub fn diameter(&self) -> f64 {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for c in &self.coords {
            for d in 0..2 {
                lo[d] = lo[d].min(c[d]);
                hi[d] = hi[d].max(c[d]);
            }
        }
        (hi[0] - lo[0]).max(hi[1] - lo[1]).max(0.0)
    }

    /// Nodes whose coordinates satisfy `pred`, ascending.
    pub fn nodes_where(&self, pred: impl Fn(f64, f64) -> bool) -> Vec<usize> {
        self.coords
            .iter()
            .enumerate()
            .filter(|(_, c)| pred(c[0], c[1]))
            .map(|(i, _)| i)
            .collect()
    }

    /// Elements adjacent to `node`.
    pub fn elements_of_node(&self, node: usize) -> Vec<usize> {
        self.elements
            .iter()
            .enumerate()
            .filter(|(_, el)| el.contains(&node))
            .map(|(e, _)| e)
            .collect()
    }

    pub fn bodies(&self) -> BTreeSet<u32> {
        self.body.iter().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if self.body.len() != n {
            return Err(Error::InvalidMesh(format!(
                "{} body labels for {} nodes",
                self.body.len(),
                n
            )));
        }
        if let Some((i, _)) = self
            .coords
            .iter()
            .enumerate()
            .find(|(_, c)| !c[0].is_finite() || !c[1].is_finite())
        {
            return Err(Error::InvalidMesh(format!("node {i} has non-finite coordinates")));
        }
        let npe = self.kind.nodes_per_element();
        for (e, el) in self.elements.iter().enumerate() {
            if el.len() != npe {
                return Err(Error::InvalidMesh(format!(
                    "element {e} has {} nodes, expected {npe}",
                    el.len()
                )));
            }
            if let Some(&bad) = el.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "element {e} references node {bad} of {n}"
                )));
            }
            let b0 = self.body[el[0]];
            if el.iter().any(|&i| self.body[i] != b0) {
                return Err(Error::InvalidMesh(format!("element {e} spans two bodies")));
            }
            fem::check_element_geometry(&self.element_coords(e), self.kind)
                .map_err(|msg| Error::DegenerateElement { element: e, msg })?;
        }
        if let Some(&bad) = self.dirichlet.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidMesh(format!(
                "Dirichlet node {bad} out of range ({n} nodes)"
            )));
        }
        let c = &self.contact;
        if let Some(&bad) = c.nodes.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidMesh(format!("contact node {bad} out of range")));
        }
        for (s, seg) in c.segments.iter().enumerate() {
            if seg[0] >= n || seg[1] >= n {
                return Err(Error::InvalidMesh(format!("segment {s} references a missing node")));
            }
            if seg[0] == seg[1] {
                return Err(Error::InvalidMesh(format!("segment {s} has equal endpoints")));
            }
        }
        if !c.pairing.is_empty() {
            if c.pairing.len() != c.nodes.len() {
                return Err(Error::InvalidMesh(format!(
                    "pairing has {} entries for {} contact nodes",
                    c.pairing.len(),
                    c.nodes.len()
                )));
            }
            if let Some(&bad) = c.pairing.iter().find(|&&s| s >= c.segments.len()) {
                return Err(Error::InvalidMesh(format!("pairing references segment {bad}")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Canonical text form. Floats use the shortest round-trip decimal.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "NODES {}", self.n_nodes());
        for (c, b) in self.coords.iter().zip(&self.body) {
            let _ = writeln!(s, "{} {} {}", c[0], c[1], b);
        }
        let _ = writeln!(s, "ELEMENTS {} {}", self.n_elements(), self.kind.name());
        for el in &self.elements {
            let _ = writeln!(s, "{}", join(el.iter()));
        }
        let _ = writeln!(s, "DIRICHLET {}", self.dirichlet.len());
        if !self.dirichlet.is_empty() {
            let _ = writeln!(s, "{}", join(self.dirichlet.iter()));
        }
        let c = &self.contact;
        if !c.is_empty() {
            let _ = writeln!(s, "CONTACT_NODES {}", c.nodes.len());
            if !c.nodes.is_empty() {
                let _ = writeln!(s, "{}", join(c.nodes.iter()));
            }
            let _ = writeln!(s, "CONTACT_SEGMENTS {}", c.segments.len());
            for seg in &c.segments {
                let _ = writeln!(s, "{} {}", seg[0], seg[1]);
            }
            if !c.pairing.is_empty() {
                let _ = writeln!(s, "CONTACT_PAIRING {}", c.pairing.len());
                let _ = writeln!(s, "{}", join(c.pairing.iter()));
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let mut coords = Vec::new();
        let mut body = Vec::new();
        let mut elements = Vec::new();
        let mut kind = None;
        let mut dirichlet = BTreeSet::new();
        let mut contact = ContactSection::default();

        while let Some((line_no, toks)) = lines.next_tokens() {
            let header = toks[0];
            let count = |idx: usize| -> Result<usize> {
                toks.get(idx)
                    .ok_or_else(|| Error::parse(line_no, format!("{header} needs a count")))?
                    .parse::<usize>()
                    .map_err(|_| Error::parse(line_no, format!("bad count in {header}")))
            };
            match header {
                "NODES" => {
                    let n = count(1)?;
                    for _ in 0..n {
                        let (ln, t) = lines
                            .next_tokens()
                            .ok_or_else(|| Error::parse(line_no, "unexpected end of node list"))?;
                        if t.len() < 2 || t.len() > 3 {
                            return Err(Error::parse(ln, "node line must be `x y [body_id]`"));
                        }
                        let x = parse_f64(t[0], ln)?;
                        let y = parse_f64(t[1], ln)?;
                        let b = match t.get(2) {
                            Some(s) => s
                                .parse::<u32>()
                                .map_err(|_| Error::parse(ln, format!("bad body id `{s}`")))?,
                            None => 0,
                        };
                        coords.push([x, y]);
                        body.push(b);
                    }
                }
                "ELEMENTS" => {
                    let k = count(1)?;
                    let ek = match toks.get(2).copied() {
                        Some("Q4") => ElementKind::Q4,
                        Some("T3") => ElementKind::T3,
                        other => {
                            return Err(Error::parse(
                                line_no,
                                format!("unknown element kind {other:?}"),
                            ))
                        }
                    };
                    kind = Some(ek);
                    for _ in 0..k {
                        let (ln, t) = lines
                            .next_tokens()
                            .ok_or_else(|| Error::parse(line_no, "unexpected end of element list"))?;
                        if t.len() != ek.nodes_per_element() {
                            return Err(Error::parse(
                                ln,
                                format!("expected {} node indices", ek.nodes_per_element()),
                            ));
                        }
                        elements.push(
                            t.iter()
                                .map(|s| parse_usize(s, ln))
                                .collect::<Result<Vec<_>>>()?,
                        );
                    }
                }
                "DIRICHLET" => {
                    let k = count(1)?;
                    dirichlet = lines.read_indices(k, line_no)?.into_iter().collect();
                }
                "CONTACT_NODES" => {
                    let k = count(1)?;
                    contact.nodes = lines.read_indices(k, line_no)?;
                }
                "CONTACT_SEGMENTS" => {
                    let k = count(1)?;
                    for _ in 0..k {
                        let (ln, t) = lines
                            .next_tokens()
                            .ok_or_else(|| Error::parse(line_no, "unexpected end of segment list"))?;
                        if t.len() != 2 {
                            return Err(Error::parse(ln, "segment line must be `p q`"));
                        }
                        contact
                            .segments
                            .push([parse_usize(t[0], ln)?, parse_usize(t[1], ln)?]);
                    }
                }
                "CONTACT_PAIRING" => {
                    let k = count(1)?;
                    contact.pairing = lines.read_indices(k, line_no)?;
                }
                other => {
                    return Err(Error::parse(line_no, format!("unknown section `{other}`")));
                }
            }
        }

        let kind = kind.ok_or_else(|| Error::parse(0, "missing ELEMENTS section"))?;
        let mesh = Mesh2D {
            coords,
            elements,
            kind,
            dirichlet,
            body,
            contact,
        };
        mesh.validate()?;
        Ok(mesh)
    }
}

fn join<T: std::fmt::Display>(it: impl Iterator<Item = T>) -> String {
    it.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::parse(line, format!("bad number `{s}`")))
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| Error::parse(line, format!("bad index `{s}`")))
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
        }
    }

    /// Next non-blank, non-comment line as (1-based line number, tokens).
    fn next_tokens(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            let line = line.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                return Some((i + 1, line.split_whitespace().collect()));
            }
        }
        None
    }

    /// Reads `k` indices that may span several lines.
    fn read_indices(&mut self, k: usize, header_line: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let (ln, toks) = self
                .next_tokens()
                .ok_or_else(|| Error::parse(header_line, "unexpected end of index list"))?;
            for t in toks {
                out.push(parse_usize(t, ln)?);
            }
        }
        if out.len() != k {
            return Err(Error::parse(header_line, format!("expected {k} indices, got {}", out.len())));
        }
        Ok(out)
    }
}

/// Numbering of the free (non-Dirichlet) degrees of freedom. Global DOF
/// `2*node + c` is component `c` of `node`; free DOFs keep ascending global
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    free_of_global: Vec<Option<usize>>,
    global_of_free: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &Mesh2D) -> Self {
        Self::with_fixed(mesh.n_nodes(), &mesh.dirichlet)
    }

    /// Every DOF free, used for pre-elimination checks.
    pub fn unconstrained(n_nodes: usize) -> Self {
        Self::with_fixed(n_nodes, &BTreeSet::new())
    }

    fn with_fixed(n_nodes: usize, fixed: &BTreeSet<usize>) -> Self {
        let mut free_of_global = vec![None; 2 * n_nodes];
        let mut global_of_free = Vec::new();
        for node in 0..n_nodes {
            if fixed.contains(&node) {
                continue;
            }
            for c in 0..2 {
                free_of_global[2 * node + c] = Some(global_of_free.len());
                global_of_free.push(2 * node + c);
            }
        }
        DofMap {
            free_of_global,
            global_of_free,
        }
    }

    pub fn n_free(&self) -> usize {
        self.global_of_free.len()
    }

    pub fn n_global(&self) -> usize {
        self.free_of_global.len()
    }

    pub fn free(&self, node: usize, comp: usize) -> Option<usize> {
        self.free_of_global.get(2 * node + comp).copied().flatten()
    }

    pub fn global(&self, free: usize) -> usize {
        self.global_of_free[free]
    }

    /// Free vector to a global vector with zeros at fixed DOFs.
    pub fn expand(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_global()];
        for (f, &g) in self.global_of_free.iter().enumerate() {
            out[g] = q[f];
        }
        out
    }

    /// Displacement of `node` from a free vector.
    pub fn node_displacement(&self, q: &[f64], node: usize) -> [f64; 2] {
        [
            self.free(node, 0).map_or(0.0, |i| q[i]),
            self.free(node, 1).map_or(0.0, |i| q[i]),
        ]
    }
}

/// Split of the free DOFs into retained contact (master) DOFs and the
/// remaining (slave) DOFs. Indices refer to the free numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct DofPartition {
    pub master: Vec<usize>,
    pub slave: Vec<usize>,
    /// `full_to_reordered[free] = position in [master, slave]`.
    pub full_to_reordered: Vec<usize>,
}

impl DofPartition {
    pub fn n_master(&self) -> usize {
        self.master.len()
    }

    pub fn n_slave(&self) -> usize {
        self.slave.len()
    }

    pub fn n_free(&self) -> usize {
        self.full_to_reordered.len()
    }

    /// Position of a free DOF inside the master block.
    pub fn master_position(&self, free: usize) -> Option<usize> {
        let p = self.full_to_reordered[free];
        (p < self.master.len()).then_some(p)
    }

    pub fn reorder(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (i, &p) in self.full_to_reordered.iter().enumerate() {
            out[p] = v[i];
        }
        out
    }

    pub fn restore(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (i, &p) in self.full_to_reordered.iter().enumerate() {
            out[i] = v[p];
        }
        out
    }
}

/// Both DOFs of every contact node become masters (ascending node order);
/// every other free DOF is a slave.
pub fn partition_dofs(
    mesh: &Mesh2D,
    dofs: &DofMap,
    contact_nodes: &BTreeSet<usize>,
) -> Result<DofPartition> {
    if let Some(&n) = contact_nodes.iter().find(|n| mesh.dirichlet.contains(n)) {
        return Err(Error::FixedContactNode(n));
    }
    if let Some(&n) = contact_nodes.iter().find(|&&n| n >= mesh.n_nodes()) {
        return Err(Error::InvalidMesh(format!("contact node {n} out of range")));
    }
    let mut is_master = vec![false; dofs.n_free()];
    let mut master = Vec::with_capacity(2 * contact_nodes.len());
    for &node in contact_nodes {
        for c in 0..2 {
            let f = dofs
                .free(node, c)
                .ok_or(Error::FixedContactNode(node))?;
            is_master[f] = true;
            master.push(f);
        }
    }
    let slave: Vec<usize> = (0..dofs.n_free()).filter(|&f| !is_master[f]).collect();
    let mut full_to_reordered = vec![0; dofs.n_free()];
    for (p, &f) in master.iter().chain(slave.iter()).enumerate() {
        full_to_reordered[f] = p;
    }
    Ok(DofPartition {
        master,
        slave,
        full_to_reordered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrackOrientation {
    Vertical,
    Horizontal,
}

/// Straight tear along a mesh line. For a vertical crack `position` is the x
/// coordinate and `start..end` the y range; horizontal swaps the roles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrackSpec {
    pub orientation: CrackOrientation,
    pub position: f64,
    pub start: f64,
    pub end: f64,
}

/// Generated rectangle, possibly torn. `face_minus[i]` and `face_plus[i]`
/// are the two copies of the i-th crack point (equal at an interior tip).
#[derive(Debug, Clone)]
pub struct RectMesh {
    pub mesh: Mesh2D,
    pub nx: usize,
    pub ny: usize,
    pub face_minus: Vec<usize>,
    pub face_plus: Vec<usize>,
}

impl RectMesh {
    /// Distinct nodes on either crack face.
    pub fn crack_nodes(&self) -> BTreeSet<usize> {
        self.face_minus
            .iter()
            .chain(self.face_plus.iter())
            .copied()
            .collect()
    }
}

fn grid_index(v: f64, step: f64, what: &str) -> Result<usize> {
    let r = v / step;
    let k = r.round();
    if (r - k).abs() > 1e-9 * r.abs().max(1.0) || k < 0.0 {
        return Err(Error::CrackNotAligned(format!(
            "{what} = {v} is not on a mesh line (spacing {step})"
        )));
    }
    Ok(k as usize)
}

/// Structured Q4 mesh of `[0,width] x [0,height]`, nodes ordered by (y, x).
/// Along a crack every non-tip node is duplicated directly after the original;
/// elements on the positive side of the crack use the duplicates.
pub fn build_rect_mesh(
    nx: usize,
    ny: usize,
    width: f64,
    height: f64,
    crack: Option<&CrackSpec>,
) -> Result<RectMesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidMesh("nx and ny must be at least 1".into()));
    }
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::InvalidMesh("width and height must be positive".into()));
    }
    let dx = width / nx as f64;
    let dy = height / ny as f64;

    // crack line as (fixed index along the normal, range along the line)
    let layout = match crack {
        None => None,
        Some(c) => {
            let (step_n, step_t, n_lines, n_along) = match c.orientation {
                CrackOrientation::Vertical => (dx, dy, nx, ny),
                CrackOrientation::Horizontal => (dy, dx, ny, nx),
            };
            let line = grid_index(c.position, step_n, "crack position")?;
            let a = grid_index(c.start, step_t, "crack start")?;
            let b = grid_index(c.end, step_t, "crack end")?;
            if line == 0 || line >= n_lines {
                return Err(Error::CrackNotAligned(
                    "crack must lie on an interior mesh line".into(),
                ));
            }
            if a >= b || b > n_along {
                return Err(Error::CrackNotAligned(format!(
                    "crack range {}..{} is empty or leaves the domain",
                    c.start, c.end
                )));
            }
            if a == 0 && b == n_along {
                return Err(Error::CrackNotAligned(
                    "crack must not cut through the whole domain".into(),
                ));
            }
            Some((c.orientation, line, a, b, n_along))
        }
    };

    // is grid node (i, j) duplicated?
    let duplicated = |i: usize, j: usize| -> bool {
        match layout {
            None => false,
            Some((o, line, a, b, n_along)) => {
                let (across, along) = match o {
                    CrackOrientation::Vertical => (i, j),
                    CrackOrientation::Horizontal => (j, i),
                };
                if across != line || along < a || along > b {
                    return false;
                }
                // interior ends are tips and stay shared
                let is_tip = (along == a && a > 0) || (along == b && b < n_along);
                !is_tip
            }
        }
    };

    let mut coords = Vec::new();
    let mut id = vec![vec![0usize; nx + 1]; ny + 1];
    let mut dup = vec![vec![None; nx + 1]; ny + 1];
    for j in 0..=ny {
        for i in 0..=nx {
            let p = [i as f64 * dx, j as f64 * dy];
            id[j][i] = coords.len();
            coords.push(p);
            if duplicated(i, j) {
                dup[j][i] = Some(coords.len());
                coords.push(p);
            }
        }
    }

    let mut elements = Vec::with_capacity(nx * ny);
    for ej in 0..ny {
        for ei in 0..nx {
            let positive_side = match layout {
                Some((CrackOrientation::Vertical, line, ..)) => ei == line,
                Some((CrackOrientation::Horizontal, line, ..)) => ej == line,
                None => false,
            };
            let node = |i: usize, j: usize| -> usize {
                if positive_side {
                    dup[j][i].unwrap_or(id[j][i])
                } else {
                    id[j][i]
                }
            };
            elements.push(vec![
                node(ei, ej),
                node(ei + 1, ej),
                node(ei + 1, ej + 1),
                node(ei, ej + 1),
            ]);
        }
    }

    let (mut face_minus, mut face_plus) = (Vec::new(), Vec::new());
    if let Some((o, line, a, b, _)) = layout {
        for along in a..=b {
            let (i, j) = match o {
                CrackOrientation::Vertical => (line, along),
                CrackOrientation::Horizontal => (along, line),
            };
            face_minus.push(id[j][i]);
            face_plus.push(dup[j][i].unwrap_or(id[j][i]));
        }
    }

    let mesh = Mesh2D::new(coords, elements, ElementKind::Q4, BTreeSet::new(), None)?;
    Ok(RectMesh {
        mesh,
        nx,
        ny,
        face_minus,
        face_plus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square_file() -> &'static str {
        "NODES 4\n0 0 0\n1 0 0\n1 1 0\n0 1 0\nELEMENTS 1 Q4\n0 1 2 3\nDIRICHLET 0\n"
    }

    #[test]
    fn grid_counts() {
        let m = build_rect_mesh(2, 2, 1.0, 1.0, None).unwrap();
        assert_eq!(m.mesh.n_nodes(), 9);
        assert_eq!(m.mesh.n_elements(), 4);
        let m = build_rect_mesh(1, 1, 2.0, 3.0, None).unwrap();
        assert_eq!(m.mesh.n_nodes(), 4);
        let area = fem::element_area(&m.mesh.element_coords(0), ElementKind::Q4);
        assert!((area - 6.0).abs() < 1e-14);
    }

    #[test]
    fn lexicographic_node_order() {
        let m = build_rect_mesh(3, 2, 3.0, 2.0, None).unwrap().mesh;
        for w in m.coords.windows(2) {
            assert!((w[0][1], w[0][0]) < (w[1][1], w[1][0]));
        }
    }

    #[test]
    fn edge_crack_duplicates_non_tip_nodes() {
        let crack = CrackSpec {
            orientation: CrackOrientation::Vertical,
            position: 0.5,
            start: 0.5,
            end: 1.0,
        };
        let m = build_rect_mesh(4, 4, 1.0, 1.0, Some(&crack)).unwrap();
        // rows 3 and 4 duplicated, row 2 is the tip
        assert_eq!(m.mesh.n_nodes(), 25 + 2);
        assert_eq!(m.face_minus.len(), 3);
        assert_eq!(m.face_minus[0], m.face_plus[0]);
        for k in 1..3 {
            assert_ne!(m.face_minus[k], m.face_plus[k]);
            assert_eq!(m.mesh.coords[m.face_minus[k]], m.mesh.coords[m.face_plus[k]]);
        }
        // faces are topologically disconnected
        for e in &m.mesh.elements {
            let has_minus = m.face_minus[1..].iter().any(|n| e.contains(n));
            let has_plus = m.face_plus[1..].iter().any(|n| e.contains(n));
            assert!(!(has_minus && has_plus));
        }
        assert_eq!(m.crack_nodes().len(), 5);
    }

    #[test]
    fn interior_crack_keeps_both_tips() {
        let crack = CrackSpec {
            orientation: CrackOrientation::Horizontal,
            position: 0.5,
            start: 0.25,
            end: 0.75,
        };
        let m = build_rect_mesh(4, 4, 1.0, 1.0, Some(&crack)).unwrap();
        assert_eq!(m.mesh.n_nodes(), 26);
        assert_eq!(m.face_minus.first(), m.face_plus.first());
        assert_eq!(m.face_minus.last(), m.face_plus.last());
    }

    #[test]
    fn misaligned_crack_rejected() {
        let crack = CrackSpec {
            orientation: CrackOrientation::Vertical,
            position: 0.3,
            start: 0.5,
            end: 1.0,
        };
        let err = build_rect_mesh(4, 4, 1.0, 1.0, Some(&crack)).unwrap_err();
        assert!(matches!(err, Error::CrackNotAligned(_)), "{err}");
    }

    #[test]
    fn load_minimal_file() {
        let m = Mesh2D::parse(unit_square_file()).unwrap();
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.kind, ElementKind::Q4);
    }

    #[test]
    fn bad_index_is_rejected() {
        let m = build_rect_mesh(2, 2, 1.0, 1.0, None).unwrap().mesh;
        let text = m.to_text().replace("\n0 1 4 3\n", "\n0 1 99 3\n");
        let err = Mesh2D::parse(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("99") && msg.contains("element 0"), "{msg}");
    }

    #[test]
    fn parse_error_names_line() {
        let text = "NODES 2\n0 0\n1 x\nELEMENTS 0 T3\n";
        match Mesh2D::parse(text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn degenerate_element_rejected() {
        // clockwise quad: negative Jacobian
        let text = "NODES 4\n0 0\n0 1\n1 1\n1 0\nELEMENTS 1 Q4\n0 1 2 3\n";
        assert!(matches!(
            Mesh2D::parse(text).unwrap_err(),
            Error::DegenerateElement { element: 0, .. }
        ));
    }

    #[test]
    fn element_spanning_bodies_rejected() {
        let text = "NODES 3\n0 0 0\n1 0 0\n0 1 1\nELEMENTS 1 T3\n0 1 2\n";
        assert!(Mesh2D::parse(text).is_err());
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let crack = CrackSpec {
            orientation: CrackOrientation::Vertical,
            position: 0.5,
            start: 0.65,
            end: 1.3,
        };
        let mut m = build_rect_mesh(4, 4, 1.0, 1.3, Some(&crack)).unwrap();
        m.mesh.dirichlet = m.mesh.nodes_where(|x, _| x == 0.0).into_iter().collect();
        m.mesh.contact = ContactSection {
            nodes: m.face_plus[1..].to_vec(),
            segments: m.face_minus.windows(2).map(|w| [w[1], w[0]]).collect(),
            pairing: vec![0, 1],
        };
        let text = m.mesh.to_text();
        let back = Mesh2D::parse(&text).unwrap();
        assert_eq!(back, m.mesh);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn partition_of_nine_node_mesh() {
        let m = build_rect_mesh(2, 2, 1.0, 1.0, None).unwrap().mesh;
        let dofs = DofMap::new(&m);
        let p = partition_dofs(&m, &dofs, &[4].into_iter().collect()).unwrap();
        assert_eq!(p.master, vec![8, 9]);
        assert_eq!(p.n_slave(), 16);
        let p = partition_dofs(&m, &dofs, &BTreeSet::new()).unwrap();
        assert!(p.master.is_empty());
        assert_eq!(p.n_slave(), 18);
    }

    #[test]
    fn fixed_contact_node_is_an_error() {
        let mut m = build_rect_mesh(2, 2, 1.0, 1.0, None).unwrap().mesh;
        m.dirichlet.insert(4);
        let dofs = DofMap::new(&m);
        assert!(matches!(
            partition_dofs(&m, &dofs, &[4].into_iter().collect()),
            Err(Error::FixedContactNode(4))
        ));
    }
}
