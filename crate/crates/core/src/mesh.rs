//! Structured nested triangulations of the unit square and localization patches.
//!
//! Node `(i, j)` sits at `(i/n, j/n)` and has id `j*(n+1) + i`. Cell `(i, j)` is
//! split along its lower-left to upper-right diagonal into a lower triangle
//! `(v00, v10, v11)` with id `2*(j*n+i)` and an upper triangle `(v00, v11, v01)`
//! with id `2*(j*n+i)+1`. Refining this pattern by midpoints reproduces the same
//! pattern, so meshes with `n` and `n*2^r` cells per axis are nested.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
}

/// Classification of a mesh node. Nodes shared by Dirichlet and Neumann edges are Dirichlet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Interior,
    Dirichlet,
    Neumann,
}

/// Side of the unit square. The boundary parameter runs along `x` for
/// bottom/top and along `y` for left/right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

/// Closed axis-aligned piece `[from, to]` of one side of the unit square.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySegment {
    pub side: Side,
    pub from: f64,
    pub to: f64,
}

/// Boundary partition: the listed segments form the Neumann part, everything else is Dirichlet.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    neumann: Vec<BoundarySegment>,
}

impl BoundarySpec {
    pub fn all_dirichlet() -> Self {
        Self::default()
    }

    pub fn with_neumann(segments: Vec<BoundarySegment>) -> Self {
        Self { neumann: segments }
    }

    pub fn neumann_segments(&self) -> &[BoundarySegment] {
        &self.neumann
    }

    /// Tag of the boundary edge on `side` spanning parameters `[t0, t1]`.
    pub fn tag(&self, side: Side, t0: f64, t1: f64) -> BoundaryTag {
        const EPS: f64 = 1e-12;
        let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        let covered = self
            .neumann
            .iter()
            .any(|s| s.side == side && s.from - EPS <= lo && hi <= s.to + EPS);
        if covered {
            BoundaryTag::Neumann
        } else {
            BoundaryTag::Dirichlet
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
    pub side: Side,
    /// The mesh element owning this edge.
    pub elem: usize,
}

#[derive(Clone, Debug)]
pub struct TriMesh {
    n_cells: usize,
    boundary: BoundarySpec,
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    node_kind: Vec<NodeKind>,
    node_elem_offsets: Vec<usize>,
    node_elems: Vec<usize>,
}

/// Builds the structured mesh with `n_cells` cells per axis.
pub fn build_structured_mesh(n_cells: usize, boundary: &BoundarySpec) -> Result<TriMesh> {
    if n_cells == 0 || !n_cells.is_power_of_two() {
        return Err(Error::Config(format!(
            "cells per axis must be a power of two, got {n_cells}"
        )));
    }
    let n = n_cells;
    let np = n + 1;
    let inv = 1.0 / n as f64;
    let mut nodes = Vec::with_capacity(np * np);
    for j in 0..np {
        for i in 0..np {
            nodes.push([i as f64 * inv, j as f64 * inv]);
        }
    }
    let nid = |i: usize, j: usize| j * np + i;
    let mut elements = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v11, v01) = (nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1));
            elements.push([v00, v10, v11]);
            elements.push([v00, v11, v01]);
        }
    }

    let eid = |i: usize, j: usize, t: usize| 2 * (j * n + i) + t;
    let mut boundary_edges = Vec::with_capacity(4 * n);
    for i in 0..n {
        let (t0, t1) = (i as f64 * inv, (i + 1) as f64 * inv);
        boundary_edges.push(BoundaryEdge {
            nodes: [nid(i, 0), nid(i + 1, 0)],
            tag: boundary.tag(Side::Bottom, t0, t1),
            side: Side::Bottom,
            elem: eid(i, 0, 0),
        });
    }
    for j in 0..n {
        let (t0, t1) = (j as f64 * inv, (j + 1) as f64 * inv);
        boundary_edges.push(BoundaryEdge {
            nodes: [nid(n, j), nid(n, j + 1)],
            tag: boundary.tag(Side::Right, t0, t1),
            side: Side::Right,
            elem: eid(n - 1, j, 0),
        });
    }
    for i in (0..n).rev() {
        let (t0, t1) = (i as f64 * inv, (i + 1) as f64 * inv);
        boundary_edges.push(BoundaryEdge {
            nodes: [nid(i + 1, n), nid(i, n)],
            tag: boundary.tag(Side::Top, t0, t1),
            side: Side::Top,
            elem: eid(i, n - 1, 1),
        });
    }
    for j in (0..n).rev() {
        let (t0, t1) = (j as f64 * inv, (j + 1) as f64 * inv);
        boundary_edges.push(BoundaryEdge {
            nodes: [nid(0, j + 1), nid(0, j)],
            tag: boundary.tag(Side::Left, t0, t1),
            side: Side::Left,
            elem: eid(0, j, 1),
        });
    }

    let mut node_kind = vec![NodeKind::Interior; np * np];
    for e in &boundary_edges {
        if e.tag == BoundaryTag::Neumann {
            for &v in &e.nodes {
                if node_kind[v] == NodeKind::Interior {
                    node_kind[v] = NodeKind::Neumann;
                }
            }
        }
    }
    for e in &boundary_edges {
        if e.tag == BoundaryTag::Dirichlet {
            for &v in &e.nodes {
                node_kind[v] = NodeKind::Dirichlet;
            }
        }
    }

    let mut counts = vec![0usize; np * np + 1];
    for el in &elements {
        for &v in el {
            counts[v + 1] += 1;
        }
    }
    for k in 0..np * np {
        counts[k + 1] += counts[k];
    }
    let mut fill = counts.clone();
    let mut node_elems = vec![0usize; counts[np * np]];
    for (e, el) in elements.iter().enumerate() {
        for &v in el {
            node_elems[fill[v]] = e;
            fill[v] += 1;
        }
    }

    Ok(TriMesh {
        n_cells,
        boundary: boundary.clone(),
        nodes,
        elements,
        boundary_edges,
        node_kind,
        node_elem_offsets: counts,
        node_elems,
    })
}

impl TriMesh {
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Cell width `1/n`.
    pub fn cell_size(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    /// Maximum element diameter, `sqrt(2)/n`.
    pub fn h_max(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.n_cells as f64
    }

    pub fn boundary_spec(&self) -> &BoundarySpec {
        &self.boundary
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn node_id(&self, i: usize, j: usize) -> usize {
        j * (self.n_cells + 1) + i
    }

    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % (self.n_cells + 1), node / (self.n_cells + 1))
    }

    /// Element id of triangle `t` (0 lower, 1 upper) in cell `(i, j)`.
    pub fn elem_id(&self, i: usize, j: usize, t: usize) -> usize {
        2 * (j * self.n_cells + i) + t
    }

    /// Cell indices and lower/upper flag of an element.
    pub fn elem_cell(&self, elem: usize) -> (usize, usize, usize) {
        let c = elem / 2;
        (c % self.n_cells, c / self.n_cells, elem % 2)
    }

    pub fn node_kind(&self, node: usize) -> NodeKind {
        self.node_kind[node]
    }

    pub fn is_dirichlet(&self, node: usize) -> bool {
        self.node_kind[node] == NodeKind::Dirichlet
    }

    pub fn is_on_boundary(&self, node: usize) -> bool {
        let (i, j) = self.node_ij(node);
        i == 0 || j == 0 || i == self.n_cells || j == self.n_cells
    }

    pub fn has_neumann(&self) -> bool {
        self.boundary_edges.iter().any(|e| e.tag == BoundaryTag::Neumann)
    }

    pub fn elements_of_node(&self, node: usize) -> &[usize] {
        &self.node_elems[self.node_elem_offsets[node]..self.node_elem_offsets[node + 1]]
    }

    pub fn elem_coords(&self, elem: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.elements[elem];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn elem_area(&self, _elem: usize) -> f64 {
        0.5 / (self.n_cells * self.n_cells) as f64
    }

    pub fn barycenter(&self, elem: usize) -> [f64; 2] {
        let [p, q, r] = self.elem_coords(elem);
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
    }

    /// Neighbours across the three edges, in the order (v0,v1), (v1,v2), (v2,v0).
    pub fn elem_neighbors(&self, elem: usize) -> [Option<usize>; 3] {
        let n = self.n_cells;
        let (i, j, t) = self.elem_cell(elem);
        if t == 0 {
            [
                (j > 0).then(|| self.elem_id(i, j - 1, 1)),
                (i + 1 < n).then(|| self.elem_id(i + 1, j, 1)),
                Some(self.elem_id(i, j, 1)),
            ]
        } else {
            [
                Some(self.elem_id(i, j, 0)),
                (j + 1 < n).then(|| self.elem_id(i, j + 1, 0)),
                (i > 0).then(|| self.elem_id(i - 1, j, 0)),
            ]
        }
    }

    /// Plain-text dump: header, nodes with kind, elements, boundary edges.
    pub fn write_debug<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# trimesh n_cells={} nodes={} elements={}", self.n_cells, self.n_nodes(), self.n_elements())?;
        for (k, p) in self.nodes.iter().enumerate() {
            writeln!(w, "node {k} {} {} {:?}", p[0], p[1], self.node_kind[k])?;
        }
        for (k, el) in self.elements.iter().enumerate() {
            writeln!(w, "elem {k} {} {} {}", el[0], el[1], el[2])?;
        }
        for e in &self.boundary_edges {
            writeln!(w, "bedge {} {} {:?} {:?}", e.nodes[0], e.nodes[1], e.tag, e.side)?;
        }
        Ok(())
    }
}

/// A coarse mesh, its uniform refinement and the nesting maps between them.
#[derive(Clone, Debug)]
pub struct CoarseFineMap {
    coarse: TriMesh,
    fine: TriMesh,
    refine_levels: usize,
    fine_elem_to_coarse: Vec<usize>,
    coarse_node_to_fine_node: Vec<usize>,
    coarse_elem_to_fine: Vec<Vec<usize>>,
}

/// Refines `mesh` uniformly `levels` times (each level halves the cell size).
pub fn refine_uniform(mesh: &TriMesh, levels: usize) -> Result<CoarseFineMap> {
    if levels == 0 {
        return Err(Error::Config("refinement requires at least one level (h <= H/2)".into()));
    }
    let ratio = 1usize << levels;
    let fine = build_structured_mesh(mesh.n_cells * ratio, &mesh.boundary)?;
    let mut fine_elem_to_coarse = Vec::with_capacity(fine.n_elements());
    let mut coarse_elem_to_fine = vec![Vec::with_capacity(ratio * ratio); mesh.n_elements()];
    for e in 0..fine.n_elements() {
        let (fi, fj, ft) = fine.elem_cell(e);
        let (a, b) = (fi % ratio, fj % ratio);
        let ct = match a.cmp(&b) {
            std::cmp::Ordering::Greater => 0,
            std::cmp::Ordering::Less => 1,
            std::cmp::Ordering::Equal => ft,
        };
        let c = mesh.elem_id(fi / ratio, fj / ratio, ct);
        fine_elem_to_coarse.push(c);
        coarse_elem_to_fine[c].push(e);
    }
    let coarse_node_to_fine_node = (0..mesh.n_nodes())
        .map(|z| {
            let (i, j) = mesh.node_ij(z);
            fine.node_id(i * ratio, j * ratio)
        })
        .collect();
    Ok(CoarseFineMap {
        coarse: mesh.clone(),
        fine,
        refine_levels: levels,
        fine_elem_to_coarse,
        coarse_node_to_fine_node,
        coarse_elem_to_fine,
    })
}

impl CoarseFineMap {
    /// Convenience: coarse mesh with `2^coarse_level` cells refined to `2^fine_level`.
    pub fn unit_square(coarse_level: u32, fine_level: u32, boundary: &BoundarySpec) -> Result<Self> {
        if fine_level <= coarse_level {
            return Err(Error::Config(format!(
                "fine level {fine_level} must exceed coarse level {coarse_level}"
            )));
        }
        let coarse = build_structured_mesh(1 << coarse_level, boundary)?;
        refine_uniform(&coarse, (fine_level - coarse_level) as usize)
    }

    pub fn coarse(&self) -> &TriMesh {
        &self.coarse
    }

    pub fn fine(&self) -> &TriMesh {
        &self.fine
    }

    pub fn refine_levels(&self) -> usize {
        self.refine_levels
    }

    /// Number of fine cells per coarse cell along one axis.
    pub fn ratio(&self) -> usize {
        1 << self.refine_levels
    }

    pub fn fine_elem_to_coarse(&self, e: usize) -> usize {
        self.fine_elem_to_coarse[e]
    }

    pub fn coarse_node_to_fine_node(&self, z: usize) -> usize {
        self.coarse_node_to_fine_node[z]
    }

    pub fn fine_elems_of(&self, coarse_elem: usize) -> &[usize] {
        &self.coarse_elem_to_fine[coarse_elem]
    }

    /// Values of the coarse nodal basis functions at fine node `x`, as
    /// `(coarse node, value)` pairs with nonzero value.
    pub fn coarse_basis_at(&self, x: usize) -> Vec<(usize, f64)> {
        let r = self.ratio();
        let nc = self.coarse.n_cells;
        let (fi, fj) = self.fine.node_ij(x);
        let ci = (fi / r).min(nc - 1);
        let cj = (fj / r).min(nc - 1);
        let a = (fi - ci * r) as f64 / r as f64;
        let b = (fj - cj * r) as f64 / r as f64;
        let c = &self.coarse;
        let (v00, v10, v11, v01) = (c.node_id(ci, cj), c.node_id(ci + 1, cj), c.node_id(ci + 1, cj + 1), c.node_id(ci, cj + 1));
        let cand = if a >= b {
            [(v00, 1.0 - a), (v10, a - b), (v11, b)]
        } else {
            [(v00, 1.0 - b), (v11, a), (v01, b - a)]
        };
        cand.into_iter().filter(|&(_, w)| w != 0.0).collect()
    }
}

/// How a patch grows by one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerRule {
    /// Add every triangle sharing at least one vertex with the current patch.
    TriangleVertex,
    /// Add both triangles of every grid cell sharing at least one vertex with
    /// the current patch. This is the rule that reproduces the published patch
    /// averages for fine-layer patches.
    CellVertex,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PatchKind {
    CoarseLayers(usize),
    FineLayers(usize),
    Global,
}

/// Admissible localization patch of one coarse element.
#[derive(Clone, Debug)]
pub struct Patch {
    pub coarse_elem: usize,
    pub kind: PatchKind,
    /// Sorted fine element ids.
    pub fine_elems: Vec<usize>,
    /// Number of fine nodes in the closed patch.
    pub n_fine_nodes: usize,
    /// Sorted fine nodes where a patch function may be nonzero.
    pub interior_dofs: Vec<usize>,
    /// Sorted free coarse nodes whose hat support meets the patch.
    pub active_coarse_nodes: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
struct CellBox {
    i0: usize,
    i1: usize,
    j0: usize,
    j1: usize,
}

impl CellBox {
    fn of_elems(mesh: &TriMesh, elems: &[usize]) -> Self {
        let mut b = CellBox { i0: usize::MAX, i1: 0, j0: usize::MAX, j1: 0 };
        for &e in elems {
            let (i, j, _) = mesh.elem_cell(e);
            b.i0 = b.i0.min(i);
            b.i1 = b.i1.max(i);
            b.j0 = b.j0.min(j);
            b.j1 = b.j1.max(j);
        }
        b
    }

    fn grown(&self, n: usize) -> Self {
        CellBox {
            i0: self.i0.saturating_sub(1),
            i1: (self.i1 + 1).min(n - 1),
            j0: self.j0.saturating_sub(1),
            j1: (self.j1 + 1).min(n - 1),
        }
    }
}

/// Grows an element set by `layers` layers. Returns the element mask and a
/// bounding box of cells containing it.
fn grow_layers(mesh: &TriMesh, seed: &[usize], layers: usize, rule: LayerRule) -> (Vec<bool>, CellBox) {
    let n = mesh.n_cells;
    let mut mask = vec![false; mesh.n_elements()];
    for &e in seed {
        mask[e] = true;
    }
    let mut bbox = CellBox::of_elems(mesh, seed);
    let mut node_mask = vec![false; mesh.n_nodes()];
    let mut count = seed.len();
    for _ in 0..layers {
        if count == mesh.n_elements() {
            break;
        }
        for j in bbox.j0..=bbox.j1 {
            for i in bbox.i0..=bbox.i1 {
                for t in 0..2 {
                    let e = mesh.elem_id(i, j, t);
                    if mask[e] {
                        for &v in &mesh.elements[e] {
                            node_mask[v] = true;
                        }
                    }
                }
            }
        }
        let next = bbox.grown(n);
        for j in next.j0..=next.j1 {
            for i in next.i0..=next.i1 {
                match rule {
                    LayerRule::TriangleVertex => {
                        for t in 0..2 {
                            let e = mesh.elem_id(i, j, t);
                            if !mask[e] && mesh.elements[e].iter().any(|&v| node_mask[v]) {
                                mask[e] = true;
                                count += 1;
                            }
                        }
                    }
                    LayerRule::CellVertex => {
                        let touched = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
                            .iter()
                            .any(|&(a, b)| node_mask[mesh.node_id(a, b)]);
                        if touched {
                            for t in 0..2 {
                                let e = mesh.elem_id(i, j, t);
                                if !mask[e] {
                                    mask[e] = true;
                                    count += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        bbox = next;
    }
    (mask, bbox)
}

impl Patch {
    /// Builds the patch from a fine element mask whose support lies in `bbox`.
    fn from_mask(cfmap: &CoarseFineMap, coarse_elem: usize, kind: PatchKind, mask: &[bool], bbox: CellBox) -> Patch {
        let fine = &cfmap.fine;
        let mut fine_elems = Vec::new();
        for j in bbox.j0..=bbox.j1 {
            for i in bbox.i0..=bbox.i1 {
                for t in 0..2 {
                    let e = fine.elem_id(i, j, t);
                    if mask[e] {
                        fine_elems.push(e);
                    }
                }
            }
        }
        fine_elems.sort_unstable();
        let global = fine_elems.len() == fine.n_elements();
        let kind = if global { PatchKind::Global } else { kind };

        let mut nodes = BTreeSet::new();
        for &e in &fine_elems {
            nodes.extend(fine.elements[e]);
        }
        let interior_dofs: Vec<usize> = nodes
            .iter()
            .copied()
            .filter(|&v| !fine.is_dirichlet(v) && fine.elements_of_node(v).iter().all(|&e| mask[e]))
            .collect();

        let mut coarse_elems = BTreeSet::new();
        for &e in &fine_elems {
            coarse_elems.insert(cfmap.fine_elem_to_coarse[e]);
        }
        let mut active = BTreeSet::new();
        for &c in &coarse_elems {
            for &z in &cfmap.coarse.elements[c] {
                if !cfmap.coarse.is_dirichlet(z) {
                    active.insert(z);
                }
            }
        }

        Patch {
            coarse_elem,
            kind,
            fine_elems,
            n_fine_nodes: nodes.len(),
            interior_dofs,
            active_coarse_nodes: active.into_iter().collect(),
        }
    }

    pub fn is_global(&self) -> bool {
        matches!(self.kind, PatchKind::Global)
    }

    pub fn write_debug<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# patch T={} kind={:?} elems={} nodes={} interior={} constraints={}",
            self.coarse_elem,
            self.kind,
            self.fine_elems.len(),
            self.n_fine_nodes,
            self.interior_dofs.len(),
            self.active_coarse_nodes.len()
        )?;
        for e in &self.fine_elems {
            writeln!(w, "elem {e}")?;
        }
        for v in &self.interior_dofs {
            writeln!(w, "dof {v}")?;
        }
        for z in &self.active_coarse_nodes {
            writeln!(w, "coarse {z}")?;
        }
        Ok(())
    }
}

/// Patch `U_k(T)`: `k` layers of coarse elements around `T`.
pub fn build_patch_coarse_layers(cfmap: &CoarseFineMap, coarse_elem: usize, k: usize, rule: LayerRule) -> Patch {
    let (cmask, _) = grow_layers(&cfmap.coarse, &[coarse_elem], k, rule);
    let mut mask = vec![false; cfmap.fine.n_elements()];
    let mut fine_seed = Vec::new();
    for (c, &inside) in cmask.iter().enumerate() {
        if inside {
            for &e in &cfmap.coarse_elem_to_fine[c] {
                mask[e] = true;
                fine_seed.push(e);
            }
        }
    }
    let bbox = CellBox::of_elems(&cfmap.fine, &fine_seed);
    Patch::from_mask(cfmap, coarse_elem, PatchKind::CoarseLayers(k), &mask, bbox)
}

/// Patch `U_{h,l}(T)`: `l` layers of fine elements around `T`.
pub fn build_patch_fine_layers(cfmap: &CoarseFineMap, coarse_elem: usize, layers: usize, rule: LayerRule) -> Patch {
    let (mask, bbox) = grow_layers(&cfmap.fine, &cfmap.coarse_elem_to_fine[coarse_elem], layers, rule);
    Patch::from_mask(cfmap, coarse_elem, PatchKind::FineLayers(layers), &mask, bbox)
}

/// The whole domain as patch of `coarse_elem`.
pub fn build_patch_global(cfmap: &CoarseFineMap, coarse_elem: usize) -> Patch {
    let mask = vec![true; cfmap.fine.n_elements()];
    let n = cfmap.fine.n_cells;
    let bbox = CellBox { i0: 0, i1: n - 1, j0: 0, j1: n - 1 };
    Patch::from_mask(cfmap, coarse_elem, PatchKind::Global, &mask, bbox)
}

/// Largest `m` with `dist(barycenter, boundary of U inside Omega) >= m |ln H| H`;
/// infinite when the patch has no interior boundary.
pub fn patch_category(patch: &Patch, mesh: &TriMesh, coarse_h: f64) -> f64 {
    let mut inside = vec![false; mesh.n_elements()];
    for &e in &patch.fine_elems {
        inside[e] = true;
    }
    let mut cx = 0.0;
    let mut cy = 0.0;
    for &e in &patch.fine_elems {
        let b = mesh.barycenter(e);
        cx += b[0];
        cy += b[1];
    }
    let count = patch.fine_elems.len() as f64;
    let (cx, cy) = (cx / count, cy / count);

    let mut dist = f64::INFINITY;
    for &e in &patch.fine_elems {
        let nb = mesh.elem_neighbors(e);
        let el = mesh.elements[e];
        for k in 0..3 {
            if let Some(other) = nb[k] {
                if !inside[other] {
                    let p = mesh.nodes[el[k]];
                    let q = mesh.nodes[el[(k + 1) % 3]];
                    dist = dist.min(point_segment_distance([cx, cy], p, q));
                }
            }
        }
    }
    if dist.is_infinite() {
        return f64::INFINITY;
    }
    dist / (coarse_h.ln().abs() * coarse_h)
}

fn point_segment_distance(x: [f64; 2], p: [f64; 2], q: [f64; 2]) -> f64 {
    let d = [q[0] - p[0], q[1] - p[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = (((x[0] - p[0]) * d[0] + (x[1] - p[1]) * d[1]) / len2).clamp(0.0, 1.0);
    let c = [p[0] + t * d[0] - x[0], p[1] + t * d[1] - x[1]];
    (c[0] * c[0] + c[1] * c[1]).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchStats {
    pub avg_fine_elems: f64,
    pub avg_fine_nodes: f64,
}

pub fn patch_stats<'a, I>(patches: I) -> Result<PatchStats>
where
    I: IntoIterator<Item = &'a Patch>,
{
    PatchStats::from_counts(patches.into_iter().map(|p| (p.fine_elems.len(), p.n_fine_nodes)))
}

impl PatchStats {
    /// Averages of `(fine elements, fine nodes)` pairs, one per patch.
    pub fn from_counts<I>(counts: I) -> Result<PatchStats>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut count = 0usize;
        let mut elems = 0usize;
        let mut nodes = 0usize;
        for (e, n) in counts {
            count += 1;
            elems += e;
            nodes += n;
        }
        if count == 0 {
            return Err(Error::Config("patch statistics of an empty patch set".into()));
        }
        Ok(PatchStats {
            avg_fine_elems: elems as f64 / count as f64,
            avg_fine_nodes: nodes as f64 / count as f64,
        })
    }
}
