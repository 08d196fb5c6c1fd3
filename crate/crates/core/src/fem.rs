//! P1 finite element assembly, the fine-scale reference solve and error norms.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsolve::{cg_solve, dot, SkylineCholesky, SparseMat};
use crate::mesh::{BoundaryTag, CoarseFineMap, TriMesh};

/// Piecewise constant scalar diffusion coefficient on the fine elements.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefField {
    values: Vec<f64>,
    alpha: f64,
    beta: f64,
}

impl CoefField {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Model("empty coefficient field".into()));
        }
        let mut alpha = f64::INFINITY;
        let mut beta = f64::NEG_INFINITY;
        for (e, &v) in values.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Model(format!("coefficient {v} on element {e} is not positive")));
            }
            alpha = alpha.min(v);
            beta = beta.max(v);
        }
        Ok(CoefField { values, alpha, beta })
    }

    pub fn constant(mesh: &TriMesh, value: f64) -> Result<Self> {
        Self::from_values(vec![value; mesh.n_elements()])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, elem: usize) -> f64 {
        self.values[elem]
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn contrast(&self) -> f64 {
        self.beta / self.alpha
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Samples `a` at the barycenter of every element.
pub fn sample_coefficient<F>(mesh: &TriMesh, a: F) -> Result<CoefField>
where
    F: Fn([f64; 2]) -> f64,
{
    CoefField::from_values((0..mesh.n_elements()).map(|e| a(mesh.barycenter(e))).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Coarse,
    Fine,
}

/// Nodal values of a P1 function on either the coarse or the fine mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct FeFunction {
    pub space: Space,
    pub values: Vec<f64>,
}

impl FeFunction {
    pub fn zeros(space: Space, n: usize) -> Self {
        FeFunction { space, values: vec![0.0; n] }
    }

    pub fn fine(values: Vec<f64>) -> Self {
        FeFunction { space: Space::Fine, values }
    }

    pub fn coarse(values: Vec<f64>) -> Self {
        FeFunction { space: Space::Coarse, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Gradients of the three barycentric basis functions and the element area.
pub fn p1_gradients(p: &[[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        g[i] = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    }
    (g, 0.5 * det.abs())
}

/// Local stiffness `a * |e| * grad(phi_i) . grad(phi_j)`.
pub fn element_stiffness(p: &[[f64; 2]; 3], a: f64) -> [[f64; 3]; 3] {
    let (g, area) = p1_gradients(p);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = a * area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    k
}

pub fn element_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// Stiffness matrix over all nodes, no boundary conditions applied.
pub fn assemble_stiffness(mesh: &TriMesh, coef: &CoefField) -> Result<SparseMat> {
    if coef.len() != mesh.n_elements() {
        return Err(Error::Dimension(format!(
            "coefficient has {} values for {} elements",
            coef.len(),
            mesh.n_elements()
        )));
    }
    let mut trip = Vec::with_capacity(9 * mesh.n_elements());
    for (e, tri) in mesh.elements().iter().enumerate() {
        let k = element_stiffness(&mesh.elem_coords(e), coef.value(e));
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], k[i][j]));
            }
        }
    }
    SparseMat::from_triplets(mesh.n_nodes(), mesh.n_nodes(), &trip)
}

/// Stiffness of the unit coefficient.
pub fn assemble_laplacian(mesh: &TriMesh) -> SparseMat {
    let coef = CoefField { values: vec![1.0; mesh.n_elements()], alpha: 1.0, beta: 1.0 };
    assemble_stiffness(mesh, &coef).expect("sizes match by construction")
}

pub fn assemble_mass(mesh: &TriMesh) -> SparseMat {
    let mut trip = Vec::with_capacity(9 * mesh.n_elements());
    for (e, tri) in mesh.elements().iter().enumerate() {
        let m = element_mass(mesh.elem_area(e));
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], m[i][j]));
            }
        }
    }
    SparseMat::from_triplets(mesh.n_nodes(), mesh.n_nodes(), &trip).expect("indices in range")
}

fn midpoint(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

/// Load vector `int f phi_x` with the edge-midpoint rule on every element.
pub fn assemble_load<F>(mesh: &TriMesh, f: F) -> Vec<f64>
where
    F: Fn([f64; 2]) -> f64,
{
    let mut load = vec![0.0; mesh.n_nodes()];
    for (e, tri) in mesh.elements().iter().enumerate() {
        let p = mesh.elem_coords(e);
        let w = mesh.elem_area(e) / 3.0;
        let f01 = f(midpoint(p[0], p[1]));
        let f12 = f(midpoint(p[1], p[2]));
        let f20 = f(midpoint(p[2], p[0]));
        load[tri[0]] += 0.5 * w * (f01 + f20);
        load[tri[1]] += 0.5 * w * (f01 + f12);
        load[tri[2]] += 0.5 * w * (f12 + f20);
    }
    load
}

/// Contribution of one Neumann edge: `int_E q phi` for its two end nodes,
/// using two-point Gauss quadrature.
pub fn neumann_edge_load<F>(a: [f64; 2], b: [f64; 2], q: &F) -> [f64; 2]
where
    F: Fn([f64; 2]) -> f64,
{
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let s = 0.5 / 3f64.sqrt();
    let mut out = [0.0; 2];
    for t in [0.5 - s, 0.5 + s] {
        let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        let v = 0.5 * len * q(x);
        out[0] += v * (1.0 - t);
        out[1] += v * t;
    }
    out
}

/// Per-edge Neumann loads as `(boundary edge index, [load on node 0, load on node 1])`.
pub fn neumann_edge_loads<F>(mesh: &TriMesh, q: F) -> Vec<(usize, [f64; 2])>
where
    F: Fn([f64; 2]) -> f64,
{
    let nodes = mesh.nodes();
    mesh.boundary_edges()
        .iter()
        .enumerate()
        .filter(|(_, be)| be.tag == BoundaryTag::Neumann)
        .map(|(k, be)| (k, neumann_edge_load(nodes[be.nodes[0]], nodes[be.nodes[1]], &q)))
        .collect()
}

/// Neumann vector `int_{Gamma_N} q phi_x`.
pub fn assemble_neumann<F>(mesh: &TriMesh, q: F) -> Vec<f64>
where
    F: Fn([f64; 2]) -> f64,
{
    let mut out = vec![0.0; mesh.n_nodes()];
    if !mesh.has_neumann() {
        warn!("Neumann data requested on a mesh without Neumann edges");
        return out;
    }
    for (k, loads) in neumann_edge_loads(mesh, q) {
        let be = &mesh.boundary_edges()[k];
        out[be.nodes[0]] += loads[0];
        out[be.nodes[1]] += loads[1];
    }
    out
}

/// Coarse extension `g_H` (boundary values at coarse Dirichlet nodes, zero
/// elsewhere) and fine extension `g_h` (boundary values at fine Dirichlet
/// nodes, `g_H` elsewhere).
pub fn build_dirichlet_extension<F>(cfmap: &CoarseFineMap, g: F) -> (FeFunction, FeFunction)
where
    F: Fn([f64; 2]) -> f64,
{
    let coarse = cfmap.coarse();
    let fine = cfmap.fine();
    let g_coarse: Vec<f64> = (0..coarse.n_nodes())
        .map(|z| if coarse.is_dirichlet(z) { g(coarse.nodes()[z]) } else { 0.0 })
        .collect();
    let g_fine: Vec<f64> = (0..fine.n_nodes())
        .map(|x| {
            if fine.is_dirichlet(x) {
                g(fine.nodes()[x])
            } else {
                cfmap.coarse_basis_at(x).iter().map(|&(z, w)| w * g_coarse[z]).sum()
            }
        })
        .collect();
    (FeFunction::coarse(g_coarse), FeFunction::fine(g_fine))
}

/// Nodes that are not on the Dirichlet boundary, in increasing order.
pub fn free_nodes(mesh: &TriMesh) -> Vec<usize> {
    (0..mesh.n_nodes()).filter(|&x| !mesh.is_dirichlet(x)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ReferenceSolver {
    /// Envelope Cholesky of the free-node stiffness.
    Direct,
    /// Jacobi-preconditioned conjugate gradients.
    Cg { tol: f64, max_iter: usize },
}

impl Default for ReferenceSolver {
    fn default() -> Self {
        ReferenceSolver::Direct
    }
}

#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    pub u: FeFunction,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves for `v_h` in the free nodes with right-hand side
/// `load + neumann - S g_h` and returns `u_h = v_h + g_h`.
pub fn solve_reference(
    mesh: &TriMesh,
    stiffness: &SparseMat,
    load: &[f64],
    neumann: &[f64],
    g_h: &FeFunction,
    solver: ReferenceSolver,
) -> Result<ReferenceSolution> {
    let n = mesh.n_nodes();
    if stiffness.n_rows() != n || load.len() != n || neumann.len() != n || g_h.len() != n {
        return Err(Error::Dimension("reference solve inputs do not match the fine mesh".into()));
    }
    let free = free_nodes(mesh);
    let mut map = vec![usize::MAX; n];
    for (k, &x) in free.iter().enumerate() {
        map[x] = k;
    }
    let sg = stiffness.mul_vec(&g_h.values);
    let rhs: Vec<f64> = free.iter().map(|&x| load[x] + neumann[x] - sg[x]).collect();
    let s_free = stiffness.select(&free, &map, free.len());
    let (v, iterations) = match solver {
        ReferenceSolver::Direct => (SkylineCholesky::factor(&s_free)?.solve(&rhs), 1),
        ReferenceSolver::Cg { tol, max_iter } => {
            let out = cg_solve(&s_free, &rhs, tol, max_iter)?;
            (out.x, out.iterations)
        }
    };
    let res = s_free.mul_vec(&v);
    let rnorm: f64 = res.iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let bnorm = dot(&rhs, &rhs).sqrt();
    let relative_residual = if bnorm > 0.0 { rnorm / bnorm } else { rnorm };
    let mut u = g_h.values.clone();
    for (k, &x) in free.iter().enumerate() {
        u[x] += v[k];
    }
    Ok(ReferenceSolution { u: FeFunction::fine(u), iterations, relative_residual })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rel_l2: f64,
    pub rel_h1: f64,
    pub abs_l2: f64,
    pub abs_h1: f64,
}

/// Mass and unit-coefficient stiffness matrices for measuring L2 and H1 norms.
#[derive(Clone, Debug)]
pub struct NormMatrices {
    pub mass: SparseMat,
    pub laplacian: SparseMat,
}

impl NormMatrices {
    pub fn new(mesh: &TriMesh) -> Self {
        NormMatrices { mass: assemble_mass(mesh), laplacian: assemble_laplacian(mesh) }
    }

    pub fn l2(&self, v: &[f64]) -> f64 {
        self.mass.bilinear(v, v).max(0.0).sqrt()
    }

    pub fn h1_semi(&self, v: &[f64]) -> f64 {
        self.laplacian.bilinear(v, v).max(0.0).sqrt()
    }

    /// Full H1 norm (L2 part plus seminorm).
    pub fn h1(&self, v: &[f64]) -> f64 {
        (self.mass.bilinear(v, v) + self.laplacian.bilinear(v, v)).max(0.0).sqrt()
    }

    pub fn errors(&self, u_h: &FeFunction, u_other: &FeFunction) -> Result<ErrorReport> {
        if u_h.len() != self.mass.n_rows() || u_other.len() != u_h.len() {
            return Err(Error::Dimension("error norms need two fine functions".into()));
        }
        let e: Vec<f64> = u_h.values.iter().zip(&u_other.values).map(|(a, b)| a - b).collect();
        let ref_l2 = self.l2(&u_h.values);
        let ref_h1 = self.h1(&u_h.values);
        if ref_l2 == 0.0 || ref_h1 == 0.0 {
            return Err(Error::Model("reference solution has zero norm".into()));
        }
        let abs_l2 = self.l2(&e);
        let abs_h1 = self.h1(&e);
        Ok(ErrorReport { rel_l2: abs_l2 / ref_l2, rel_h1: abs_h1 / ref_h1, abs_l2, abs_h1 })
    }
}

/// Relative and absolute L2/H1 errors of `u_other` against `u_h`.
pub fn compute_errors(mesh: &TriMesh, u_h: &FeFunction, u_other: &FeFunction) -> Result<ErrorReport> {
    NormMatrices::new(mesh).errors(u_h, u_other)
}
