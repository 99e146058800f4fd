//! Honeycomb sensor networks and the per-node canonical frames.
//!
//! Cells are pointy-top hexagons of circumradius `l` addressed by axial
//! coordinates `(q, r)`; the centre of cell `(q, r)` sits at
//! `(√3 l (q + r/2), 3 l r / 2)` relative to the origin. With this
//! orientation every "upper" vertex sees its neighbours in the canonical
//! Y-shaped triad `(0, l)`, `(-√3 l/2, -l/2)`, `(√3 l/2, -l/2)` and every
//! "lower" vertex sees the inverted triad.
//!
//! Node indices are assigned by sorting positions lexicographically on
//! `(y, x)`, each rounded to a quantum of `1e-6 l`.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{canonical_positions, Point, SQRT_3};

/// Relative tolerance for edge lengths and frame validation.
pub const GEOMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatticeError {
    #[error("edge length must be finite and positive, got {0}")]
    EdgeLength(f64),
    #[error("node {0} is out of range")]
    NodeOutOfRange(usize),
    #[error("node {node} has {degree} neighbours; only degree-3 nodes estimate")]
    NotInnerNode { node: usize, degree: usize },
    #[error("neighbours of node {0} are not a 120-degree triad at distance l")]
    NonCanonicalNeighborhood(usize),
    #[error("edge ({0}, {1}) has length {2}, expected {3}")]
    EdgeLengthMismatch(usize, usize, f64, f64),
    #[error("invalid edge ({0}, {1})")]
    InvalidEdge(usize, usize),
    #[error("declared inner set does not match the degree-3 nodes")]
    InnerMismatch,
}

/// Regular plane tessellations compared for coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TessellationKind {
    Hexagonal,
    Triangular,
    Square,
}

/// Area covered by `n` nodes of a regular tessellation with edge `l`.
pub fn coverage_area(kind: TessellationKind, l: f64, n: usize) -> f64 {
    let n = n as f64;
    match kind {
        TessellationKind::Hexagonal => 3.0 * SQRT_3 / 4.0 * l * l * n,
        TessellationKind::Triangular => SQRT_3 / 2.0 * l * l * n,
        TessellationKind::Square => l * l * n,
    }
}

/// Sensor positions, links and the set of estimating (degree-3) nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkFile", into = "NetworkFile")]
pub struct HexNetwork {
    nodes: Vec<Point>,
    edges: Vec<[usize; 2]>,
    l: f64,
    inner: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
}

/// On-disk layout: `{"nodes": [[x, y], ...], "edges": [[i, j], ...], "l": .., "inner": [..]}`.
#[derive(Serialize, Deserialize)]
struct NetworkFile {
    nodes: Vec<Point>,
    edges: Vec<[usize; 2]>,
    l: f64,
    inner: Vec<usize>,
}

impl TryFrom<NetworkFile> for HexNetwork {
    type Error = LatticeError;

    fn try_from(file: NetworkFile) -> Result<Self, LatticeError> {
        let net = HexNetwork::from_parts(file.nodes, file.edges, file.l)?;
        let mut declared = file.inner;
        declared.sort_unstable();
        if declared != net.inner {
            return Err(LatticeError::InnerMismatch);
        }
        Ok(net)
    }
}

impl From<HexNetwork> for NetworkFile {
    fn from(net: HexNetwork) -> Self {
        NetworkFile {
            nodes: net.nodes,
            edges: net.edges,
            l: net.l,
            inner: net.inner,
        }
    }
}

impl HexNetwork {
    /// Builds a network from explicit positions and links, keeping the given
    /// node order. Every edge must have length `l` within [`GEOMETRY_TOL`].
    pub fn from_parts(
        nodes: Vec<Point>,
        edges: Vec<[usize; 2]>,
        l: f64,
    ) -> Result<Self, LatticeError> {
        if !(l.is_finite() && l > 0.0) {
            return Err(LatticeError::EdgeLength(l));
        }
        let n = nodes.len();
        let mut set = BTreeSet::new();
        for &[a, b] in &edges {
            if a >= n || b >= n || a == b {
                return Err(LatticeError::InvalidEdge(a, b));
            }
            let len = dist(nodes[a], nodes[b]);
            if ((len - l) / l).abs() > GEOMETRY_TOL {
                return Err(LatticeError::EdgeLengthMismatch(a, b, len, l));
            }
            if !set.insert([a.min(b), a.max(b)]) {
                return Err(LatticeError::InvalidEdge(a, b));
            }
        }
        let edges: Vec<[usize; 2]> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n];
        for &[a, b] in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in adjacency.iter_mut() {
            adj.sort_unstable();
        }
        let inner = (0..n).filter(|&i| adjacency[i].len() == 3).collect();
        Ok(HexNetwork {
            nodes,
            edges,
            l,
            inner,
            adjacency,
        })
    }

    // Deduplicated vertices are sorted into canonical order before edges are
    // remapped.
    fn from_unsorted(
        points: Vec<Point>,
        edges: Vec<[usize; 2]>,
        l: f64,
    ) -> Result<Self, LatticeError> {
        let quantum = 1e-6 * l;
        let key = |p: &Point| {
            (
                (p[1] / quantum).round() as i64,
                (p[0] / quantum).round() as i64,
            )
        };
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by_key(|&i| key(&points[i]));
        let mut new_index = vec![0; points.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        let nodes = order.iter().map(|&i| points[i]).collect();
        let edges = edges
            .into_iter()
            .map(|[a, b]| [new_index[a], new_index[b]])
            .collect();
        Self::from_parts(nodes, edges, l)
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Point {
        self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn edge_length(&self) -> f64 {
        self.l
    }

    /// Degree-3 nodes, ascending.
    pub fn inner(&self) -> &[usize] {
        &self.inner
    }

    pub fn is_inner(&self, i: usize) -> bool {
        self.inner.binary_search(&i).is_ok()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Whether the subgraph spanned by `nodes` (using edges among them) is connected.
    pub fn is_connected_among(&self, nodes: &[usize]) -> bool {
        if nodes.is_empty() {
            return true;
        }
        let members: BTreeSet<usize> = nodes.iter().copied().collect();
        let mut seen = BTreeSet::new();
        let mut stack = vec![nodes[0]];
        while let Some(v) = stack.pop() {
            if !seen.insert(v) {
                continue;
            }
            for &w in &self.adjacency[v] {
                if members.contains(&w) && !seen.contains(&w) {
                    stack.push(w);
                }
            }
        }
        seen.len() == members.len()
    }
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Vertices of every hexagonal cell within `rings` rings of the central cell,
/// centred at `origin`. `rings = 0` yields a single hexagon.
pub fn generate_honeycomb(rings: usize, l: f64, origin: Point) -> Result<HexNetwork, LatticeError> {
    if !(l.is_finite() && l > 0.0) {
        return Err(LatticeError::EdgeLength(l));
    }
    let r = rings as i64;
    let mut dedup = VertexSet::new(l);
    let mut edges = BTreeSet::new();
    for q in -r..=r {
        for s in (-r).max(-q - r)..=r.min(-q + r) {
            let cx = origin[0] + SQRT_3 * l * (q as f64 + 0.5 * s as f64);
            let cy = origin[1] + 1.5 * l * s as f64;
            let ids: Vec<usize> = (0..6)
                .map(|k| {
                    let a = PI / 6.0 + k as f64 * FRAC_PI_3;
                    dedup.insert([cx + l * a.cos(), cy + l * a.sin()])
                })
                .collect();
            for k in 0..6 {
                let (a, b) = (ids[k], ids[(k + 1) % 6]);
                edges.insert([a.min(b), a.max(b)]);
            }
        }
    }
    HexNetwork::from_unsorted(dedup.points, edges.into_iter().collect(), l)
}

/// The twelve-node network: a hexagonal 6-cycle of inner nodes centred at the
/// origin, each with one pendant neighbour pointing radially outward.
pub fn preset_twelve_node_network(l: f64) -> Result<HexNetwork, LatticeError> {
    if !(l.is_finite() && l > 0.0) {
        return Err(LatticeError::EdgeLength(l));
    }
    let mut points = Vec::with_capacity(12);
    let mut edges = Vec::with_capacity(12);
    for k in 0..6 {
        let a = PI / 6.0 + k as f64 * FRAC_PI_3;
        points.push([l * a.cos(), l * a.sin()]);
    }
    for k in 0..6 {
        let a = PI / 6.0 + k as f64 * FRAC_PI_3;
        points.push([2.0 * l * a.cos(), 2.0 * l * a.sin()]);
        edges.push([k, (k + 1) % 6]);
        edges.push([k, k + 6]);
    }
    HexNetwork::from_unsorted(points, edges, l)
}

struct VertexSet {
    tol: f64,
    cell: f64,
    points: Vec<Point>,
    grid: HashMap<(i64, i64), Vec<usize>>,
}

impl VertexSet {
    fn new(l: f64) -> Self {
        VertexSet {
            tol: GEOMETRY_TOL * l,
            cell: 0.25 * l,
            points: Vec::new(),
            grid: HashMap::new(),
        }
    }

    fn insert(&mut self, p: Point) -> usize {
        let cx = (p[0] / self.cell).floor() as i64;
        let cy = (p[1] / self.cell).floor() as i64;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = self.grid.get(&(cx + dx, cy + dy)) {
                    for &i in bucket {
                        if dist(self.points[i], p) <= self.tol {
                            return i;
                        }
                    }
                }
            }
        }
        let id = self.points.len();
        self.points.push(p);
        self.grid.entry((cx, cy)).or_default().push(id);
        id
    }
}

/// Proper isometry taking an inner node to the origin and its neighbours to
/// the canonical triad.
///
/// `apply(p) = R p + t`. `neighbors[k]` is the network index of the
/// neighbour carrying label `k + 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub node: usize,
    pub angle: f64,
    pub rotation: [[f64; 2]; 2],
    pub translation: Point,
    pub neighbors: [usize; 3],
}

impl LocalFrame {
    pub fn apply(&self, p: Point) -> Point {
        let v = self.rotate(p);
        [v[0] + self.translation[0], v[1] + self.translation[1]]
    }

    pub fn apply_inverse(&self, q: Point) -> Point {
        self.rotate_inverse([q[0] - self.translation[0], q[1] - self.translation[1]])
    }

    pub fn rotate(&self, v: Point) -> Point {
        let r = &self.rotation;
        [
            r[0][0] * v[0] + r[0][1] * v[1],
            r[1][0] * v[0] + r[1][1] * v[1],
        ]
    }

    pub fn rotate_inverse(&self, v: Point) -> Point {
        let r = &self.rotation;
        [
            r[0][0] * v[0] + r[1][0] * v[1],
            r[0][1] * v[0] + r[1][1] * v[1],
        ]
    }

    /// Label (2, 3 or 4) of neighbour `j`, if `j` is a neighbour.
    pub fn label_of(&self, j: usize) -> Option<u8> {
        self.neighbors
            .iter()
            .position(|&n| n == j)
            .map(|k| k as u8 + 2)
    }

    /// Network indices in reading order `(μ1, μ2, μ3, μ4)`.
    pub fn reading_order(&self) -> [usize; 4] {
        [
            self.node,
            self.neighbors[0],
            self.neighbors[1],
            self.neighbors[2],
        ]
    }
}

fn rotation_matrix(angle: f64) -> [[f64; 2]; 2] {
    let (s, c) = angle.sin_cos();
    [[c, -s], [s, c]]
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Canonical frame of an inner node.
///
/// Of the (up to three) proper rotations mapping the neighbour triad onto the
/// canonical triad, the one with the smallest absolute angle wins; ties go to
/// the counter-clockwise rotation.
pub fn local_frame(net: &HexNetwork, node: usize) -> Result<LocalFrame, LatticeError> {
    if node >= net.len() {
        return Err(LatticeError::NodeOutOfRange(node));
    }
    let degree = net.degree(node);
    if degree != 3 {
        return Err(LatticeError::NotInnerNode { node, degree });
    }
    let l = net.edge_length();
    let tol = GEOMETRY_TOL * l;
    let origin = net.node(node);
    let nbrs = net.neighbors(node);
    let offsets: Vec<Point> = nbrs
        .iter()
        .map(|&j| {
            let p = net.node(j);
            [p[0] - origin[0], p[1] - origin[1]]
        })
        .collect();
    let canon = &canonical_positions(l)[1..];

    let mut best: Option<LocalFrame> = None;
    for pivot in &offsets {
        let angle = wrap_angle(FRAC_PI_2 - pivot[1].atan2(pivot[0]));
        let rotation = rotation_matrix(angle);
        let mut frame = LocalFrame {
            node,
            angle,
            rotation,
            translation: [0.0, 0.0],
            neighbors: [usize::MAX; 3],
        };
        let mut ok = true;
        for (k, off) in offsets.iter().enumerate() {
            let v = frame.rotate(*off);
            match canon.iter().position(|c| dist(*c, v) <= tol) {
                Some(slot) if frame.neighbors[slot] == usize::MAX => {
                    frame.neighbors[slot] = nbrs[k]
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let t = frame.rotate(origin);
        frame.translation = [-t[0], -t[1]];
        let better = match &best {
            None => true,
            Some(b) => {
                let (da, db) = (angle.abs(), b.angle.abs());
                da < db - 1e-9 || ((da - db).abs() <= 1e-9 && angle > b.angle)
            }
        };
        if better {
            best = Some(frame);
        }
    }
    best.ok_or(LatticeError::NonCanonicalNeighborhood(node))
}
