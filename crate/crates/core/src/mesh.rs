//! Triangulations of the two benchmark geometries and the plain-text mesh
//! format.
//!
//! The text format is line oriented:
//!
//! ```text
//! nodes N triangles T bedges B
//! x y                 (N lines)
//! i j k               (T lines, 0-based, counter-clockwise)
//! i j tag             (B lines, tag in {inflow, wall, neumann})
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary part an edge belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    /// Non-homogeneous Dirichlet boundary (inflow profile or moving lid).
    Inflow,
    /// Homogeneous Dirichlet boundary.
    Wall,
    /// Natural (do-nothing) outflow boundary.
    Neumann,
}

impl BoundaryTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::Inflow => "inflow",
            BoundaryTag::Wall => "wall",
            BoundaryTag::Neumann => "neumann",
        }
    }

    pub fn is_dirichlet(self) -> bool {
        !matches!(self, BoundaryTag::Neumann)
    }
}

impl std::str::FromStr for BoundaryTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "inflow" => Ok(BoundaryTag::Inflow),
            "wall" => Ok(BoundaryTag::Wall),
            "neumann" => Ok(BoundaryTag::Neumann),
            other => Err(format!("unknown boundary tag `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
}

/// Conforming triangulation with tagged boundary edges.
#[derive(Clone, Debug)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    diameters: Vec<f64>,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    /// Builds a mesh and checks every structural invariant.
    pub fn new(
        nodes: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<BoundaryEdge>,
    ) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("no triangles".into()));
        }
        let mut diameters = Vec::with_capacity(triangles.len());
        for (k, t) in triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= nodes.len()) {
                return Err(Error::InvalidMesh(format!("triangle {k} references a missing node")));
            }
            let [a, b, c] = t.map(|i| nodes[i]);
            let area = signed_area(a, b, c);
            if !(area > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {k} is inverted or degenerate (signed area {area:e})"
                )));
            }
            diameters.push(dist(a, b).max(dist(b, c)).max(dist(c, a)));
        }

        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &triangles {
            for e in 0..3 {
                *edge_count.entry(edge_key(t[e], t[(e + 1) % 3])).or_default() += 1;
            }
        }
        if let Some((e, n)) = edge_count.iter().find(|(_, &n)| n > 2) {
            return Err(Error::InvalidMesh(format!("edge {e:?} shared by {n} triangles")));
        }
        let mut tagged: HashMap<(usize, usize), BoundaryTag> = HashMap::new();
        for be in &boundary_edges {
            let key = edge_key(be.nodes[0], be.nodes[1]);
            match edge_count.get(&key) {
                Some(1) => {}
                Some(_) => {
                    return Err(Error::InvalidMesh(format!("tagged edge {key:?} is interior")))
                }
                None => return Err(Error::InvalidMesh(format!("tagged edge {key:?} is not a mesh edge"))),
            }
            if tagged.insert(key, be.tag).is_some() {
                return Err(Error::InvalidMesh(format!("edge {key:?} tagged twice")));
            }
        }
        let untagged = edge_count
            .iter()
            .filter(|(k, &n)| n == 1 && !tagged.contains_key(k))
            .count();
        if untagged > 0 {
            return Err(Error::InvalidMesh(format!("{untagged} boundary edges carry no tag")));
        }

        Ok(Mesh {
            nodes,
            triangles,
            boundary_edges,
            diameters,
        })
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    /// Element diameters h_K (longest edge).
    pub fn diameters(&self) -> &[f64] {
        &self.diameters
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, k: usize) -> f64 {
        let [a, b, c] = self.triangles[k].map(|i| self.nodes[i]);
        signed_area(a, b, c)
    }

    pub fn area(&self) -> f64 {
        (0..self.n_triangles()).map(|k| self.triangle_area(k)).sum()
    }

    pub fn max_diameter(&self) -> f64 {
        self.diameters.iter().cloned().fold(0.0, f64::max)
    }

    /// Diameter of the bounding box, used to scale geometric tolerances.
    pub fn extent(&self) -> f64 {
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for p in &self.nodes {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        dist(lo, hi)
    }

    pub fn has_neumann_boundary(&self) -> bool {
        self.boundary_edges.iter().any(|e| e.tag == BoundaryTag::Neumann)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "nodes {} triangles {} bedges {}",
            self.nodes.len(),
            self.triangles.len(),
            self.boundary_edges.len()
        );
        for p in &self.nodes {
            let _ = writeln!(s, "{:e} {:e}", p[0], p[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        for e in &self.boundary_edges {
            let _ = writeln!(s, "{} {} {}", e.nodes[0], e.nodes[1], e.tag.as_str());
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let eof = text.lines().count();
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let perr = |line: usize, msg: String| Error::parse(origin, line + 1, msg);

        let (hl, header) = lines.next().ok_or_else(|| perr(0, "empty mesh file".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 6 || h[0] != "nodes" || h[2] != "triangles" || h[4] != "bedges" {
            return Err(perr(hl, format!("malformed header `{header}`")));
        }
        let count = |s: &str| s.parse::<usize>().map_err(|e| perr(hl, format!("bad count `{s}`: {e}")));
        let (nn, nt, nb) = (count(h[1])?, count(h[3])?, count(h[5])?);

        let mut nodes = Vec::with_capacity(nn);
        for _ in 0..nn {
            let (l, s) = lines.next().ok_or_else(|| perr(eof, "unexpected end of file in node block".into()))?;
            let v: Vec<f64> = s
                .split_whitespace()
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| perr(l, format!("bad coordinate: {e}")))?;
            if v.len() != 2 {
                return Err(perr(l, format!("expected 2 coordinates, found {}", v.len())));
            }
            nodes.push([v[0], v[1]]);
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (l, s) = lines.next().ok_or_else(|| perr(eof, "unexpected end of file in triangle block".into()))?;
            let v: Vec<usize> = s
                .split_whitespace()
                .map(|x| x.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| perr(l, format!("bad node index: {e}")))?;
            if v.len() != 3 {
                return Err(perr(l, format!("expected 3 node indices, found {}", v.len())));
            }
            triangles.push([v[0], v[1], v[2]]);
        }
        let mut bedges = Vec::with_capacity(nb);
        for _ in 0..nb {
            let (l, s) = lines.next().ok_or_else(|| perr(eof, "unexpected end of file in boundary block".into()))?;
            let v: Vec<&str> = s.split_whitespace().collect();
            if v.len() != 3 {
                return Err(perr(l, format!("expected `i j tag`, found `{s}`")));
            }
            let i = v[0].parse::<usize>().map_err(|e| perr(l, format!("bad node index: {e}")))?;
            let j = v[1].parse::<usize>().map_err(|e| perr(l, format!("bad node index: {e}")))?;
            let tag = v[2].parse::<BoundaryTag>().map_err(|e| perr(l, e))?;
            bedges.push(BoundaryEdge { nodes: [i, j], tag });
        }
        if let Some((l, _)) = lines.next() {
            return Err(perr(l, "trailing content after boundary block".into()));
        }
        Mesh::new(nodes, triangles, bedges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Mesh::from_text(&text, path)
    }
}

/// Collects the edges that belong to exactly one triangle and tags them.
fn tag_boundary(triangles: &[[usize; 3]], mut tag: impl FnMut(usize, usize) -> BoundaryTag) -> Vec<BoundaryEdge> {
    let mut count: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
    for t in triangles {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            count.entry(edge_key(a, b)).or_insert((0, [a, b])).0 += 1;
        }
    }
    let mut edges: Vec<[usize; 2]> = count
        .into_values()
        .filter(|(n, _)| *n == 1)
        .map(|(_, e)| e)
        .collect();
    edges.sort_unstable();
    edges
        .into_iter()
        .map(|[a, b]| BoundaryEdge {
            nodes: [a, b],
            tag: tag(a, b),
        })
        .collect()
}

/// Structured triangulation of the unit square with `n` cells per side.
///
/// The lid `y = 1` is tagged [`BoundaryTag::Inflow`], the other three sides
/// [`BoundaryTag::Wall`].
pub fn generate_cavity_mesh(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidArgument("cavity mesh needs n >= 1".into()));
    }
    let h = 1.0 / n as f64;
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let x = if i == n { 1.0 } else { i as f64 * h };
            let y = if j == n { 1.0 } else { j as f64 * h };
            nodes.push([x, y]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let bedges = tag_boundary(&triangles, |a, b| {
        if nodes[a][1] == 1.0 && nodes[b][1] == 1.0 {
            BoundaryTag::Inflow
        } else {
            BoundaryTag::Wall
        }
    });
    Mesh::new(nodes, triangles, bedges)
}

/// Backward-facing step: channel `[0, length] x [0, height]` minus the step
/// `[0, inlet_length] x [0, height / 2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepGeometry {
    pub length: f64,
    pub height: f64,
    pub inlet_length: f64,
}

impl Default for StepGeometry {
    fn default() -> Self {
        StepGeometry {
            length: 20.0,
            height: 2.0,
            inlet_length: 4.0,
        }
    }
}

impl StepGeometry {
    pub fn area(&self) -> f64 {
        self.length * self.height - self.inlet_length * 0.5 * self.height
    }
}

/// Structured triangulation of the step channel with `resolution` cells
/// across the step height.
///
/// The inlet `x = 0` is tagged [`BoundaryTag::Inflow`], the outlet
/// `x = length` [`BoundaryTag::Neumann`], everything else [`BoundaryTag::Wall`].
pub fn generate_step_mesh(resolution: usize, geometry: &StepGeometry) -> Result<Mesh> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("step mesh needs resolution >= 1".into()));
    }
    let g = *geometry;
    if !(g.length > g.inlet_length && g.inlet_length > 0.0 && g.height > 0.0) {
        return Err(Error::InvalidArgument(format!("inconsistent step geometry {g:?}")));
    }
    let k = resolution;
    let cell = 0.5 * g.height / k as f64;
    let n_in = ((g.inlet_length / cell).round() as usize).max(1);
    let n_main = (((g.length - g.inlet_length) / cell).round() as usize).max(1);
    let nx = n_in + n_main;
    let ny = 2 * k;
    let xs: Vec<f64> = (0..=nx)
        .map(|i| {
            if i <= n_in {
                g.inlet_length * i as f64 / n_in as f64
            } else {
                g.inlet_length + (g.length - g.inlet_length) * (i - n_in) as f64 / n_main as f64
            }
        })
        .collect();
    let ys: Vec<f64> = (0..=ny).map(|j| g.height * j as f64 / ny as f64).collect();

    let node_inside = |i: usize, j: usize| i >= n_in || j >= k;
    let mut id = vec![usize::MAX; (nx + 1) * (ny + 1)];
    let mut nodes = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            if node_inside(i, j) {
                id[j * (nx + 1) + i] = nodes.len();
                nodes.push([xs[i], ys[j]]);
            }
        }
    }
    let at = |i: usize, j: usize| id[j * (nx + 1) + i];
    let mut triangles = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if i >= n_in || j >= k {
                let (a, b, c, d) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
    }
    let (x_out, x_in) = (xs[nx], xs[0]);
    let bedges = tag_boundary(&triangles, |a, b| {
        let (pa, pb) = (nodes[a], nodes[b]);
        if pa[0] == x_in && pb[0] == x_in {
            BoundaryTag::Inflow
        } else if pa[0] == x_out && pb[0] == x_out {
            BoundaryTag::Neumann
        } else {
            BoundaryTag::Wall
        }
    });
    Mesh::new(nodes, triangles, bedges)
}
