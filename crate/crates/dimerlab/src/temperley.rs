//! Temperley's bijection between spanning arborescences and dimer coverings
//! of the superposition graph, the dimer height function, and the
//! matrix-tree and Kasteleyn partition functions.

use std::collections::{HashMap, VecDeque};

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeDomain, LatticeKind, Site, SvgCanvas, Target};
use crate::numeric::KahanSum;
use crate::walk::Arborescence;

/// Node of the superposition graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    /// Interior base vertex.
    Vertex(usize),
    /// Base edge with at least one interior endpoint.
    Edge(usize),
    /// Lattice cell with at least one interior vertex.
    Face(usize),
}

/// Lattice edge carrying an edge-node; `tail → head` is the lattice
/// orientation on the triangular lattice and an arbitrary one on the square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseEdge {
    pub tail: Site,
    pub head: Site,
    /// The two adjacent cells.
    pub cells: [usize; 2],
}

/// Lattice cell (triangle or square).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub sites: Vec<Site>,
    pub centroid: Complex64,
    /// Sides carrying edge-nodes.
    pub edges: Vec<usize>,
    pub touches_outside: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkKind {
    VertexEdge { vertex: usize, direction: usize },
    EdgeFace,
}

/// Link between a black node (vertex- or face-node) and a white edge-node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub black: usize,
    pub white: usize,
    pub log_weight: f64,
    pub kind: LinkKind,
}

/// Face of the embedded superposition graph.
#[derive(Clone, Debug, PartialEq)]
struct DimerFace {
    darts: Vec<usize>,
    area: f64,
    centroid: Complex64,
}

/// Superposition graph of a base domain with one boundary face-node removed.
#[derive(Clone, Debug)]
pub struct TemperleyanDomain {
    base: LatticeDomain,
    edges: Vec<BaseEdge>,
    cells: Vec<Cell>,
    removed_cell: usize,
    nodes: Vec<NodeKind>,
    n_black: usize,
    positions: Vec<Complex64>,
    links: Vec<Link>,
    adj: Vec<Vec<usize>>,
    link_pos: Vec<[usize; 2]>,
    vertex_link: Vec<[usize; 4]>,
    edge_node: Vec<usize>,
    cell_node: Vec<Option<usize>>,
    link_lookup: HashMap<(usize, usize), usize>,
    faces: Vec<DimerFace>,
    dart_face: Vec<usize>,
    outer_face: usize,
    kasteleyn_sign: Vec<f64>,
    inner_faces: Vec<usize>,
    dart_cell: Vec<usize>,
    n_height_cells: usize,
    height_tree: Vec<(usize, usize, usize, i64)>,
    anchor_cell: usize,
}

fn add(a: Site, b: Site) -> Site {
    (a.0 + b.0, a.1 + b.1)
}

fn sub(a: Site, b: Site) -> Site {
    (a.0 - b.0, a.1 - b.1)
}

/// Cells of the lattice containing a site, as (type, anchor) keys.
fn cells_around(kind: LatticeKind, s: Site) -> Vec<(u8, Site)> {
    match kind {
        LatticeKind::DirectedTriangular => vec![
            (0, s),
            (0, sub(s, (1, 0))),
            (0, sub(s, (1, 1))),
            (1, s),
            (1, sub(s, (1, 1))),
            (1, sub(s, (0, 1))),
        ],
        LatticeKind::SquareZ2 => vec![(0, s), (0, sub(s, (1, 0))), (0, sub(s, (0, 1))), (0, sub(s, (1, 1)))],
    }
}

/// Corner sites of a cell in counterclockwise order.
fn cell_sites(kind: LatticeKind, key: (u8, Site)) -> Vec<Site> {
    let (t, s) = key;
    match (kind, t) {
        (LatticeKind::DirectedTriangular, 0) => vec![s, add(s, (1, 0)), add(s, (1, 1))],
        (LatticeKind::DirectedTriangular, _) => vec![s, add(s, (1, 1)), add(s, (0, 1))],
        (LatticeKind::SquareZ2, _) => vec![s, add(s, (1, 0)), add(s, (1, 1)), add(s, (0, 1))],
    }
}

fn unordered(a: Site, b: Site) -> (Site, Site) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn cross(a: Complex64, b: Complex64) -> f64 {
    a.re * b.im - a.im * b.re
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let n = self.0[y];
            self.0[y] = r;
            y = n;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Build the superposition graph of `base`, removing the boundary face-node
/// with the lexicographically smallest centroid.
pub fn build_temperleyan(base: &LatticeDomain) -> Result<TemperleyanDomain> {
    build_temperleyan_with(base, None)
}

/// As [`build_temperleyan`], but when `removed_near` is given the removed
/// boundary face-node is the one whose centroid is nearest to that point.
pub fn build_temperleyan_with(base: &LatticeDomain, removed_near: Option<Complex64>) -> Result<TemperleyanDomain> {
    let kind = base.kind();
    let interior = |s: Site| base.vertex_at(s).is_some();

    let mut edges: Vec<BaseEdge> = Vec::new();
    let mut edge_lookup: HashMap<(Site, Site), usize> = HashMap::new();
    let mut push_edge = |tail: Site, head: Site, edges: &mut Vec<BaseEdge>| {
        let key = unordered(tail, head);
        if let std::collections::hash_map::Entry::Vacant(e) = edge_lookup.entry(key) {
            e.insert(edges.len());
            edges.push(BaseEdge { tail, head, cells: [usize::MAX; 2] });
        }
    };
    for &s in base.sites() {
        for st in kind.steps() {
            push_edge(s, add(s, *st), &mut edges);
        }
        if kind == LatticeKind::DirectedTriangular {
            for st in kind.steps() {
                let t = sub(s, *st);
                if !interior(t) {
                    push_edge(t, s, &mut edges);
                }
            }
        }
    }
    let edge_lookup: HashMap<(Site, Site), usize> =
        edges.iter().enumerate().map(|(i, e)| (unordered(e.tail, e.head), i)).collect();

    let mut cell_keys: Vec<(u8, Site)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for &s in base.sites() {
        for key in cells_around(kind, s) {
            if seen.insert(key) {
                cell_keys.push(key);
            }
        }
    }
    let mut cells = Vec::with_capacity(cell_keys.len());
    for (ci, &key) in cell_keys.iter().enumerate() {
        let sites = cell_sites(kind, key);
        let centroid = sites.iter().map(|&s| base.site_position(s)).sum::<Complex64>() / sites.len() as f64;
        let mut ce = Vec::new();
        for i in 0..sites.len() {
            let (a, b) = (sites[i], sites[(i + 1) % sites.len()]);
            if let Some(&e) = edge_lookup.get(&unordered(a, b)) {
                ce.push(e);
                let slot = &mut edges[e].cells;
                if slot[0] == usize::MAX {
                    slot[0] = ci;
                } else {
                    slot[1] = ci;
                }
            }
        }
        let touches_outside = sites.iter().any(|&s| !interior(s));
        cells.push(Cell { sites, centroid, edges: ce, touches_outside });
    }
    if edges.iter().any(|e| e.cells.contains(&usize::MAX)) {
        return Err(Error::NotSimplyConnected);
    }
    let (nv, ne, nf) = (base.len() as i64, edges.len() as i64, cells.len() as i64);
    if (nv + 1) - ne + nf != 2 {
        return Err(Error::NotSimplyConnected);
    }

    let candidates: Vec<usize> = (0..cells.len()).filter(|&c| cells[c].touches_outside).collect();
    let removed_cell = match removed_near {
        None => *candidates
            .iter()
            .min_by(|&&a, &&b| {
                let (za, zb) = (cells[a].centroid, cells[b].centroid);
                za.re.partial_cmp(&zb.re).unwrap().then(za.im.partial_cmp(&zb.im).unwrap())
            })
            .ok_or(Error::NotSimplyConnected)?,
        Some(p) => *candidates
            .iter()
            .min_by(|&&a, &&b| (cells[a].centroid - p).norm().partial_cmp(&(cells[b].centroid - p).norm()).unwrap())
            .ok_or(Error::NotSimplyConnected)?,
    };

    let mut nodes = Vec::new();
    let mut positions = Vec::new();
    for v in 0..base.len() {
        nodes.push(NodeKind::Vertex(v));
        positions.push(base.position(v));
    }
    let mut cell_node = vec![None; cells.len()];
    for (c, cell) in cells.iter().enumerate() {
        if c != removed_cell {
            cell_node[c] = Some(nodes.len());
            nodes.push(NodeKind::Face(c));
            positions.push(cell.centroid);
        }
    }
    let n_black = nodes.len();
    let mut edge_node = Vec::with_capacity(edges.len());
    for (e, be) in edges.iter().enumerate() {
        edge_node.push(nodes.len());
        nodes.push(NodeKind::Edge(e));
        positions.push((base.site_position(be.tail) + base.site_position(be.head)) * 0.5);
    }
    if n_black != edges.len() {
        return Err(Error::UnequalColorClasses { black: n_black, white: edges.len() });
    }

    let mut links = Vec::new();
    let mut vertex_link = vec![[usize::MAX; 4]; base.len()];
    for v in 0..base.len() {
        let s = base.site(v);
        for (k, st) in kind.steps().iter().enumerate() {
            let e = edge_lookup[&unordered(s, add(s, *st))];
            vertex_link[v][k] = links.len();
            links.push(Link {
                black: v,
                white: edge_node[e],
                log_weight: base.log_weight(v, k),
                kind: LinkKind::VertexEdge { vertex: v, direction: k },
            });
        }
    }
    for (c, cell) in cells.iter().enumerate() {
        if let Some(fnode) = cell_node[c] {
            for &e in &cell.edges {
                links.push(Link { black: fnode, white: edge_node[e], log_weight: 0.0, kind: LinkKind::EdgeFace });
            }
        }
    }
    let link_lookup: HashMap<(usize, usize), usize> = links.iter().enumerate().map(|(i, l)| ((l.black, l.white), i)).collect();

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, l) in links.iter().enumerate() {
        adj[l.black].push(i);
        adj[l.white].push(i);
    }
    let other = |l: &Link, x: usize| if l.black == x { l.white } else { l.black };
    for (x, list) in adj.iter_mut().enumerate() {
        list.sort_by(|&a, &b| {
            let za = positions[other(&links[a], x)] - positions[x];
            let zb = positions[other(&links[b], x)] - positions[x];
            za.arg().partial_cmp(&zb.arg()).unwrap()
        });
    }
    let mut link_pos = vec![[0usize; 2]; links.len()];
    for (x, list) in adj.iter().enumerate() {
        for (p, &l) in list.iter().enumerate() {
            let side = if links[l].black == x { 0 } else { 1 };
            link_pos[l][side] = p;
        }
    }

    let mut t = TemperleyanDomain {
        base: base.clone(),
        edges,
        cells,
        removed_cell,
        nodes,
        n_black,
        positions,
        links,
        adj,
        link_pos,
        vertex_link,
        edge_node,
        cell_node,
        link_lookup,
        faces: Vec::new(),
        dart_face: Vec::new(),
        outer_face: 0,
        kasteleyn_sign: Vec::new(),
        inner_faces: Vec::new(),
        dart_cell: Vec::new(),
        n_height_cells: 0,
        height_tree: Vec::new(),
        anchor_cell: 0,
    };
    t.trace_faces()?;
    t.orient_kasteleyn();
    t.prepare_heights();
    Ok(t)
}

impl TemperleyanDomain {
    pub fn base(&self) -> &LatticeDomain {
        &self.base
    }

    pub fn nodes(&self) -> &[NodeKind] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn base_edges(&self) -> &[BaseEdge] {
        &self.edges
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Cell whose face-node was removed.
    pub fn removed_cell(&self) -> usize {
        self.removed_cell
    }

    /// Number of black nodes (vertex-nodes followed by face-nodes).
    pub fn n_black(&self) -> usize {
        self.n_black
    }

    pub fn n_white(&self) -> usize {
        self.nodes.len() - self.n_black
    }

    pub fn position(&self, node: usize) -> Complex64 {
        self.positions[node]
    }

    /// Counts of vertex-, edge- and face-nodes.
    pub fn node_counts(&self) -> (usize, usize, usize) {
        let v = self.base.len();
        (v, self.edges.len(), self.n_black - v)
    }

    /// Link joining a black and a white node, if any.
    pub fn link_between(&self, black: usize, white: usize) -> Option<usize> {
        self.link_lookup.get(&(black, white)).copied()
    }

    fn dart_ends(&self, d: usize) -> (usize, usize) {
        let l = &self.links[d / 2];
        if d % 2 == 0 {
            (l.black, l.white)
        } else {
            (l.white, l.black)
        }
    }

    fn next_dart(&self, d: usize) -> usize {
        let (_, b) = self.dart_ends(d);
        let l = d / 2;
        let side = if d % 2 == 0 { 1 } else { 0 };
        let p = self.link_pos[l][side];
        let deg = self.adj[b].len();
        let l2 = self.adj[b][(p + deg - 1) % deg];
        if self.links[l2].black == b {
            2 * l2
        } else {
            2 * l2 + 1
        }
    }

    fn trace_faces(&mut self) -> Result<()> {
        let nd = 2 * self.links.len();
        let mut dart_face = vec![usize::MAX; nd];
        let mut faces = Vec::new();
        for d0 in 0..nd {
            if dart_face[d0] != usize::MAX {
                continue;
            }
            let id = faces.len();
            let mut darts = Vec::new();
            let mut d = d0;
            let mut area = 0.0;
            let mut cen = Complex64::new(0.0, 0.0);
            loop {
                dart_face[d] = id;
                darts.push(d);
                let (a, b) = self.dart_ends(d);
                area += cross(self.positions[a], self.positions[b]) / 2.0;
                cen += self.positions[a];
                d = self.next_dart(d);
                if d == d0 {
                    break;
                }
            }
            let centroid = cen / darts.len() as f64;
            faces.push(DimerFace { darts, area, centroid });
        }
        let outer: Vec<usize> = (0..faces.len()).filter(|&f| faces[f].area < 0.0).collect();
        let n = self.nodes.len() as i64;
        if outer.len() != 1 || n - self.links.len() as i64 + faces.len() as i64 != 2 {
            return Err(Error::NotSimplyConnected);
        }
        self.outer_face = outer[0];
        self.faces = faces;
        self.dart_face = dart_face;
        self.inner_faces = (0..self.faces.len()).filter(|&f| f != self.outer_face).collect();
        Ok(())
    }

    fn orient_kasteleyn(&mut self) {
        let nl = self.links.len();
        let mut sign = vec![0.0f64; nl];
        let mut in_tree = vec![false; nl];
        let mut seen = vec![false; self.nodes.len()];
        let mut q = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(x) = q.pop_front() {
            for &l in &self.adj[x] {
                let y = if self.links[l].black == x { self.links[l].white } else { self.links[l].black };
                if !seen[y] {
                    seen[y] = true;
                    in_tree[l] = true;
                    sign[l] = 1.0;
                    q.push_back(y);
                }
            }
        }
        let nf = self.faces.len();
        let mut parent_link = vec![usize::MAX; nf];
        let mut order = Vec::with_capacity(nf);
        let mut fseen = vec![false; nf];
        let mut fq = VecDeque::from([self.outer_face]);
        fseen[self.outer_face] = true;
        while let Some(f) = fq.pop_front() {
            order.push(f);
            for &d in &self.faces[f].darts {
                let l = d / 2;
                if in_tree[l] {
                    continue;
                }
                let g = self.dart_face[d ^ 1];
                if !fseen[g] {
                    fseen[g] = true;
                    parent_link[g] = l;
                    fq.push_back(g);
                }
            }
        }
        for &f in order.iter().rev() {
            if f == self.outer_face {
                continue;
            }
            let p = parent_link[f];
            let mut prod = 1.0;
            for &d in &self.faces[f].darts {
                if d / 2 != p {
                    prod *= sign[d / 2];
                }
            }
            let k = self.faces[f].darts.len() / 2;
            let want = if k % 2 == 1 { 1.0 } else { -1.0 };
            sign[p] = want * prod;
        }
        self.kasteleyn_sign = sign;
    }

    fn prepare_heights(&mut self) {
        let nd = 2 * self.links.len();
        let ni = self.inner_faces.len();
        let mut face_cell = vec![usize::MAX; self.faces.len()];
        for (i, &f) in self.inner_faces.iter().enumerate() {
            face_cell[f] = i;
        }
        let outer_darts = self.faces[self.outer_face].darts.clone();
        let mut slot_of = vec![usize::MAX; nd];
        for (i, &d) in outer_darts.iter().enumerate() {
            slot_of[d] = i;
        }
        let mut uf = UnionFind((0..outer_darts.len()).collect());
        let mut corners: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
        for &d in &outer_darts {
            let n = self.next_dart(d);
            let (_, x) = self.dart_ends(d);
            corners.entry(x).or_default().push((n, d));
        }
        let mut keys: Vec<usize> = corners.keys().copied().collect();
        keys.sort_unstable();
        for x in keys {
            let mut cs = corners.remove(&x).unwrap();
            cs.sort_unstable();
            for &(dout, din) in cs.iter().skip(1) {
                uf.union(slot_of[dout], slot_of[din]);
            }
        }
        let mut group = HashMap::new();
        let mut dart_cell = vec![usize::MAX; nd];
        for d in 0..nd {
            let f = self.dart_face[d];
            dart_cell[d] = if f == self.outer_face {
                let r = uf.find(slot_of[d]);
                let next = ni + group.len();
                *group.entry(r).or_insert(next)
            } else {
                face_cell[f]
            };
        }
        let ncells = ni + group.len();

        let removed_whites: Vec<usize> = self.cells[self.removed_cell].edges.iter().map(|&e| self.edge_node[e]).collect();
        let anchor_dart = outer_darts
            .iter()
            .copied()
            .filter(|&d| {
                let (a, b) = self.dart_ends(d);
                removed_whites.contains(&a) || removed_whites.contains(&b)
            })
            .min()
            .or_else(|| outer_darts.iter().copied().min())
            .unwrap_or(0);
        let anchor = dart_cell[anchor_dart];

        let mut cell_links: Vec<Vec<usize>> = vec![Vec::new(); ncells];
        for l in 0..self.links.len() {
            cell_links[dart_cell[2 * l]].push(l);
            cell_links[dart_cell[2 * l + 1]].push(l);
        }
        let mut tree = Vec::with_capacity(ncells);
        let mut seen = vec![false; ncells];
        for root in std::iter::once(anchor).chain(0..ncells) {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            let mut q = VecDeque::from([root]);
            while let Some(c) = q.pop_front() {
                for &l in &cell_links[c] {
                    let (c0, c1) = (dart_cell[2 * l], dart_cell[2 * l + 1]);
                    let (o, s) = if c0 == c { (c1, 1) } else { (c0, -1) };
                    if !seen[o] {
                        seen[o] = true;
                        tree.push((o, c, l, s));
                        q.push_back(o);
                    }
                }
            }
        }
        self.dart_cell = dart_cell;
        self.n_height_cells = ncells;
        self.height_tree = tree;
        self.anchor_cell = anchor;
    }

    /// Kasteleyn sign of each link.
    pub fn kasteleyn_signs(&self) -> &[f64] {
        &self.kasteleyn_sign
    }

    /// Centroids of the inner faces of the superposition graph, in the order
    /// used by [`HeightField::values`].
    pub fn inner_face_centroids(&self) -> Vec<Complex64> {
        self.inner_faces.iter().map(|&f| self.faces[f].centroid).collect()
    }

    /// Inner face whose centroid is nearest to `z`.
    pub fn inner_face_near(&self, z: Complex64) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, &f) in self.inner_faces.iter().enumerate() {
            let d = (self.faces[f].centroid - z).norm_sqr();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Lengths of the inner face boundary walks.
    pub fn inner_face_lengths(&self) -> Vec<usize> {
        self.inner_faces.iter().map(|&f| self.faces[f].darts.len()).collect()
    }

    /// SVG drawing of the superposition graph, optionally with a matching.
    pub fn to_svg(&self, matching: Option<&DimerMatching>) -> String {
        let mut c = SvgCanvas::fit(self.positions.iter().copied(), self.base.delta());
        let w = self.base.delta() * 0.03;
        for l in &self.links {
            c.line(self.positions[l.black], self.positions[l.white], "#bbbbbb", w);
        }
        if let Some(m) = matching {
            for &l in &m.links {
                let k = &self.links[l];
                c.line(self.positions[k.black], self.positions[k.white], "#c0392b", 4.0 * w);
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let col = match n {
                NodeKind::Vertex(_) => "#000000",
                NodeKind::Face(_) => "#555555",
                NodeKind::Edge(_) => "#ffffff",
            };
            c.dot(self.positions[i], self.base.delta() * 0.08, col);
        }
        c.finish()
    }
}

/// A perfect matching of the superposition graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimerMatching {
    /// Matched link ids, sorted.
    pub links: Vec<usize>,
    pub log_weight: f64,
}

impl DimerMatching {
    /// Matching from link ids; checks that every node is covered once.
    pub fn new(tdom: &TemperleyanDomain, mut links: Vec<usize>) -> Result<Self> {
        links.sort_unstable();
        let mut covered = vec![false; tdom.nodes.len()];
        for &l in &links {
            let k = tdom.links.get(l).ok_or(Error::InvalidArgument(format!("link {l} out of range")))?;
            for x in [k.black, k.white] {
                if covered[x] {
                    return Err(Error::InvalidArgument(format!("node {x} covered twice")));
                }
                covered[x] = true;
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(Error::InvalidArgument("matching is not perfect".into()));
        }
        let log_weight = links.iter().map(|&l| tdom.links[l].log_weight).collect::<KahanSum>().value();
        Ok(Self { links, log_weight })
    }
}

/// Dimer covering associated with an arborescence.
pub fn tree_to_dimers(tree: &Arborescence, tdom: &TemperleyanDomain) -> Result<DimerMatching> {
    let base = &tdom.base;
    if tree.parent.len() != base.len() {
        return Err(Error::InvalidArgument("tree does not span the base domain".into()));
    }
    let mut links = Vec::with_capacity(tdom.n_black);
    let mut in_tree = vec![false; tdom.edges.len()];
    for v in 0..base.len() {
        let l = tdom.vertex_link[v][tree.parent[v] as usize];
        links.push(l);
        if let NodeKind::Edge(e) = tdom.nodes[tdom.links[l].white] {
            in_tree[e] = true;
        }
    }
    let nc = tdom.cells.len();
    let mut cell_adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nc];
    for (e, be) in tdom.edges.iter().enumerate() {
        if !in_tree[e] {
            cell_adj[be.cells[0]].push((be.cells[1], e));
            cell_adj[be.cells[1]].push((be.cells[0], e));
        }
    }
    let mut seen = vec![false; nc];
    let mut used = vec![false; tdom.edges.len()];
    seen[tdom.removed_cell] = true;
    let mut q = VecDeque::from([tdom.removed_cell]);
    while let Some(c) = q.pop_front() {
        for &(d, e) in &cell_adj[c] {
            if used[e] {
                continue;
            }
            used[e] = true;
            if seen[d] {
                return Err(Error::NoCompletion("dual of the tree complement has a cycle".into()));
            }
            seen[d] = true;
            let fnode = tdom.cell_node[d].ok_or(Error::NoCompletion("removed cell reached twice".into()))?;
            let l = tdom
                .link_between(fnode, tdom.edge_node[e])
                .ok_or(Error::NoCompletion("missing edge-face link".into()))?;
            links.push(l);
            q.push_back(d);
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::NoCompletion("tree complement does not span the dual".into()));
    }
    DimerMatching::new(tdom, links).map_err(|e| Error::NoCompletion(e.to_string()))
}

/// Arborescence read off the vertex-node dimers of a matching.
pub fn dimers_to_tree(matching: &DimerMatching, tdom: &TemperleyanDomain) -> Result<Arborescence> {
    let mut parent = vec![u8::MAX; tdom.base.len()];
    for &l in &matching.links {
        if let LinkKind::VertexEdge { vertex, direction } = tdom.links[l].kind {
            if parent[vertex] != u8::MAX {
                return Err(Error::InvalidArgument(format!("vertex {vertex} matched twice")));
            }
            parent[vertex] = direction as u8;
        }
    }
    if parent.contains(&u8::MAX) {
        return Err(Error::InvalidArgument("a vertex-node is unmatched".into()));
    }
    Arborescence::new(&tdom.base, parent)
}

/// `log|det|` of a dense square matrix via partial-pivoting LU with row scaling.
pub fn log_abs_det(m: &Mat<f64>) -> Result<f64> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::InvalidArgument("matrix is not square".into()));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut scaled = m.clone();
    let mut acc = KahanSum::new();
    for i in 0..n {
        let s = (0..n).map(|j| m[(i, j)].abs()).fold(0.0, f64::max);
        if s == 0.0 {
            return Err(Error::SingularSystem("zero row".into()));
        }
        acc.add(s.ln());
        for j in 0..n {
            scaled[(i, j)] /= s;
        }
    }
    let lu = scaled.partial_piv_lu();
    let u = lu.U();
    for i in 0..n {
        let d = u[(i, i)].abs();
        if d == 0.0 || !d.is_finite() {
            return Err(Error::SingularSystem("zero pivot".into()));
        }
        acc.add(d.ln());
    }
    Ok(acc.value())
}

/// Directed Laplacian with the outer root removed.
pub fn directed_laplacian(dom: &LatticeDomain) -> Mat<f64> {
    let n = dom.len();
    let mut l = Mat::<f64>::zeros(n, n);
    for v in 0..n {
        l[(v, v)] = dom.total_weight(v);
        for (k, t) in dom.targets(v).iter().enumerate() {
            if let Target::Interior(w) = *t {
                l[(v, w)] -= dom.weight(v, k);
            }
        }
    }
    l
}

/// `log Σ_T Π a_{k(v)}(v)` over arborescences rooted at the outer vertex.
pub fn arborescence_partition(dom: &LatticeDomain) -> Result<f64> {
    log_abs_det(&directed_laplacian(dom))
}

/// `log|det|` of a weighted bipartite adjacency matrix given as
/// `(black, white, value)` entries.
pub fn bipartite_log_det(n_black: usize, n_white: usize, entries: &[(usize, usize, f64)]) -> Result<f64> {
    if n_black != n_white {
        return Err(Error::UnequalColorClasses { black: n_black, white: n_white });
    }
    let mut k = Mat::<f64>::zeros(n_black, n_white);
    for &(b, w, x) in entries {
        k[(b, w)] += x;
    }
    log_abs_det(&k)
}

/// Signed, weighted Kasteleyn entries `(black, white, ±a)`.
pub fn kasteleyn_entries(tdom: &TemperleyanDomain) -> Vec<(usize, usize, f64)> {
    let nb = tdom.n_black();
    tdom.links
        .iter()
        .enumerate()
        .map(|(i, l)| (l.black, l.white - nb, tdom.kasteleyn_sign[i] * l.log_weight.exp()))
        .collect()
}

/// `log |det K|`, the log of the weighted number of dimer coverings.
pub fn kasteleyn_partition(tdom: &TemperleyanDomain) -> Result<f64> {
    bipartite_log_det(tdom.n_black(), tdom.n_white(), &kasteleyn_entries(tdom))
}

/// Dimer height function on the faces of the superposition graph.
///
/// Values are stored in units of `1/deg`, `deg` being the degree of an
/// edge-node in the full lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightField {
    pub deg: i64,
    /// Scaled heights of the inner faces.
    pub inner: Vec<i64>,
    /// Scaled heights of the outer boundary slots.
    pub boundary: Vec<i64>,
}

impl HeightField {
    /// Heights of inner faces in natural units.
    pub fn values(&self) -> Vec<f64> {
        self.inner.iter().map(|&h| h as f64 / self.deg as f64).collect()
    }

    pub fn value(&self, face: usize) -> f64 {
        self.inner[face] as f64 / self.deg as f64
    }
}

/// Height function of a matching; crossing a link from the face right of
/// its white-to-black dart to the face on its left adds `1_M − 1/deg`.
pub fn height_function(matching: &DimerMatching, tdom: &TemperleyanDomain) -> HeightField {
    let deg = tdom.base.kind().white_degree();
    let mut in_m = vec![false; tdom.links.len()];
    for &l in &matching.links {
        in_m[l] = true;
    }
    let mut h = vec![0i64; tdom.n_height_cells];
    for &(o, c, l, s) in &tdom.height_tree {
        let w = if in_m[l] { deg - 1 } else { -1 };
        h[o] = h[c] + s * w;
    }
    let ni = tdom.inner_faces.len();
    let anchor = h[tdom.anchor_cell];
    HeightField {
        deg,
        inner: h[..ni].iter().map(|x| x - anchor).collect(),
        boundary: h[ni..].iter().map(|x| x - anchor).collect(),
    }
}

/// Largest violation of the height increment rule over all links.
pub fn height_defect(matching: &DimerMatching, tdom: &TemperleyanDomain, field: &HeightField) -> i64 {
    let deg = field.deg;
    let mut in_m = vec![false; tdom.links.len()];
    matching.links.iter().for_each(|&l| in_m[l] = true);
    let ni = tdom.inner_faces.len();
    let get = |c: usize| if c < ni { field.inner[c] } else { field.boundary[c - ni] };
    (0..tdom.links.len())
        .map(|l| {
            let w = if in_m[l] { deg - 1 } else { -1 };
            (get(tdom.dart_cell[2 * l + 1]) - get(tdom.dart_cell[2 * l]) - w).abs()
        })
        .max()
        .unwrap_or(0)
}

/// Every arborescence of a small domain, by exhaustive search.
pub fn enumerate_arborescences(dom: &LatticeDomain, limit: usize) -> Result<Vec<Arborescence>> {
    let n = dom.len();
    let deg = dom.degree();
    if (deg as f64).powi(n as i32) > 5e7 {
        return Err(Error::InvalidArgument("domain too large to enumerate".into()));
    }
    let mut out = Vec::new();
    let mut parent = vec![0u8; n];
    loop {
        if let Ok(t) = Arborescence::new(dom, parent.clone()) {
            out.push(t);
            if out.len() > limit {
                return Err(Error::InvalidArgument("too many arborescences".into()));
            }
        }
        let mut i = 0;
        loop {
            if i == n {
                return Ok(out);
            }
            parent[i] += 1;
            if (parent[i] as usize) < deg {
                break;
            }
            parent[i] = 0;
            i += 1;
        }
    }
}

/// Every perfect matching of a small superposition graph.
pub fn enumerate_matchings(tdom: &TemperleyanDomain, limit: usize) -> Result<Vec<DimerMatching>> {
    let nb = tdom.n_black();
    let mut black_links: Vec<Vec<usize>> = vec![Vec::new(); nb];
    for (i, l) in tdom.links.iter().enumerate() {
        black_links[l.black].push(i);
    }
    let mut used = vec![false; tdom.nodes.len()];
    let mut chosen = Vec::with_capacity(nb);
    let mut out = Vec::new();
    fn rec(
        b: usize,
        t: &TemperleyanDomain,
        bl: &[Vec<usize>],
        used: &mut [bool],
        chosen: &mut Vec<usize>,
        out: &mut Vec<DimerMatching>,
        limit: usize,
    ) -> Result<()> {
        if b == bl.len() {
            out.push(DimerMatching::new(t, chosen.clone())?);
            if out.len() > limit {
                return Err(Error::InvalidArgument("too many matchings".into()));
            }
            return Ok(());
        }
        for &l in &bl[b] {
            let w = t.links[l].white;
            if !used[w] {
                used[w] = true;
                chosen.push(l);
                rec(b + 1, t, bl, used, chosen, out, limit)?;
                chosen.pop();
                used[w] = false;
            }
        }
        Ok(())
    }
    rec(0, tdom, &black_links, &mut used, &mut chosen, &mut out, limit)?;
    Ok(out)
}
