//! Weighted Clément quasi-interpolation onto the coarse space and the
//! constraint rows describing its kernel.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::{assemble_mass, element_mass, FeFunction, Space};
use crate::linsolve::SparseMat;
use crate::mesh::{CoarseFineMap, Patch};

/// `I_H v = sum_z v_z Phi_z` over free coarse nodes with
/// `v_z = (v, Phi_z) / (1, Phi_z)`.
#[derive(Clone, Debug)]
pub struct ClementOp {
    /// Rows: free coarse nodes; columns: fine nodes; entries `(phi_x, Phi_z)`.
    weights: SparseMat,
    denominators: Vec<f64>,
    free_coarse: Vec<usize>,
    row_of: Vec<usize>,
    n_coarse: usize,
}

/// Prolongation of coarse P1 functions to the fine mesh (fine nodes x coarse nodes).
pub fn prolongation(cfmap: &CoarseFineMap) -> SparseMat {
    let fine = cfmap.fine();
    let mut trip = Vec::with_capacity(3 * fine.n_nodes());
    for x in 0..fine.n_nodes() {
        for (z, w) in cfmap.coarse_basis_at(x) {
            trip.push((x, z, w));
        }
    }
    SparseMat::from_triplets(fine.n_nodes(), cfmap.coarse().n_nodes(), &trip).expect("indices in range")
}

pub fn prolongate(cfmap: &CoarseFineMap, v: &FeFunction) -> Result<FeFunction> {
    if v.space != Space::Coarse || v.len() != cfmap.coarse().n_nodes() {
        return Err(Error::Dimension("prolongation expects a coarse function".into()));
    }
    let fine = cfmap.fine();
    let values = (0..fine.n_nodes())
        .map(|x| cfmap.coarse_basis_at(x).iter().map(|&(z, w)| w * v.values[z]).sum())
        .collect();
    Ok(FeFunction::fine(values))
}

pub fn assemble_clement(cfmap: &CoarseFineMap) -> ClementOp {
    let coarse = cfmap.coarse();
    let fine = cfmap.fine();
    let free_coarse: Vec<usize> = (0..coarse.n_nodes()).filter(|&z| !coarse.is_dirichlet(z)).collect();
    let mut row_of = vec![usize::MAX; coarse.n_nodes()];
    for (r, &z) in free_coarse.iter().enumerate() {
        row_of[z] = r;
    }
    let basis: Vec<Vec<(usize, f64)>> = (0..fine.n_nodes()).map(|x| cfmap.coarse_basis_at(x)).collect();
    let mut trip = Vec::new();
    for (e, tri) in fine.elements().iter().enumerate() {
        let m = element_mass(fine.elem_area(e));
        // Phi_z is linear on e, so the fine mass matrix integrates phi_x Phi_z exactly
        for (j, &y) in tri.iter().enumerate() {
            for &(z, w) in &basis[y] {
                let r = row_of[z];
                if r == usize::MAX {
                    continue;
                }
                for (i, &x) in tri.iter().enumerate() {
                    trip.push((r, x, m[i][j] * w));
                }
            }
        }
    }
    let weights = SparseMat::from_triplets(free_coarse.len(), fine.n_nodes(), &trip).expect("indices in range");
    let denominators = (0..free_coarse.len()).map(|r| weights.row(r).1.iter().sum()).collect();
    ClementOp { weights, denominators, free_coarse, row_of, n_coarse: coarse.n_nodes() }
}

/// Constraint rows of one patch, restricted to its interior degrees of freedom.
#[derive(Clone, Debug)]
pub struct PatchConstraints {
    /// One row per kept coarse node, columns indexed like `patch.interior_dofs`.
    pub matrix: SparseMat,
    pub coarse_nodes: Vec<usize>,
}

impl ClementOp {
    pub fn weights(&self) -> &SparseMat {
        &self.weights
    }

    pub fn denominators(&self) -> &[f64] {
        &self.denominators
    }

    /// Free coarse nodes in row order.
    pub fn free_coarse_nodes(&self) -> &[usize] {
        &self.free_coarse
    }

    /// Row of a coarse node, `None` for Dirichlet nodes.
    pub fn row_of(&self, z: usize) -> Option<usize> {
        let r = self.row_of[z];
        (r != usize::MAX).then_some(r)
    }

    pub fn n_free(&self) -> usize {
        self.free_coarse.len()
    }

    /// Nodal values `v_z` for the free coarse nodes, in row order.
    pub fn nodal_values(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.weights.mul_vec(v);
        for (o, d) in out.iter_mut().zip(&self.denominators) {
            *o /= d;
        }
        out
    }

    /// Applies `I_H`: a coarse function with `v_z` at free nodes and zero on the Dirichlet boundary.
    pub fn apply(&self, v: &FeFunction) -> Result<FeFunction> {
        if v.space != Space::Fine || v.len() != self.weights.n_cols() {
            return Err(Error::Dimension("quasi-interpolation expects a fine function".into()));
        }
        Ok(self.expand(&self.nodal_values(&v.values)))
    }

    /// Coarse function from values on the free nodes.
    pub fn expand(&self, free_values: &[f64]) -> FeFunction {
        let mut out = vec![0.0; self.n_coarse];
        for (&z, &v) in self.free_coarse.iter().zip(free_values) {
            out[z] = v;
        }
        FeFunction::coarse(out)
    }

    /// Matrix of `I_H` restricted to the coarse space on the free nodes:
    /// `E[z][y] = (Phi_y, Phi_z) / (1, Phi_z)`.
    pub fn coarse_restriction(&self, cfmap: &CoarseFineMap) -> DMatrix<f64> {
        let mass = assemble_mass(cfmap.coarse());
        let n = self.n_free();
        let mut e = DMatrix::zeros(n, n);
        for (r, &z) in self.free_coarse.iter().enumerate() {
            let (cols, vals) = mass.row(z);
            for (&y, &m) in cols.iter().zip(vals) {
                if let Some(c) = self.row_of(y) {
                    e[(r, c)] = m / self.denominators[r];
                }
            }
        }
        e
    }

    /// Solves `I_H v_H = w_H` for `v_H` in the coarse space; `w` is a coarse function.
    pub fn invert_on_coarse(&self, cfmap: &CoarseFineMap, w: &FeFunction) -> Result<FeFunction> {
        if w.space != Space::Coarse || w.len() != self.n_coarse {
            return Err(Error::Dimension("expected a coarse function".into()));
        }
        let rhs = DVector::from_iterator(self.n_free(), self.free_coarse.iter().map(|&z| w.values[z]));
        let sol = self
            .coarse_restriction(cfmap)
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Model("quasi-interpolation restricted to the coarse space is singular".into()))?;
        Ok(self.expand(sol.as_slice()))
    }

    /// Constraint rows `v_z = 0` for the active coarse nodes of `patch`, scaled
    /// by the denominators and restricted to the interior degrees of freedom.
    /// Rows that vanish on the interior are dropped.
    pub fn constraint_rows(&self, patch: &Patch) -> PatchConstraints {
        let mut col_map = vec![usize::MAX; self.weights.n_cols()];
        for (k, &x) in patch.interior_dofs.iter().enumerate() {
            col_map[x] = k;
        }
        self.constraint_rows_mapped(patch, &col_map)
    }

    /// Same as [`ClementOp::constraint_rows`] with a precomputed fine-to-local column map.
    pub fn constraint_rows_mapped(&self, patch: &Patch, col_map: &[usize]) -> PatchConstraints {
        let mut trip = Vec::new();
        let mut coarse_nodes = Vec::new();
        for &z in &patch.active_coarse_nodes {
            let Some(r) = self.row_of(z) else { continue };
            let (cols, vals) = self.weights.row(r);
            let row = coarse_nodes.len();
            let mut any = false;
            for (&x, &v) in cols.iter().zip(vals) {
                let c = col_map[x];
                if c != usize::MAX && v != 0.0 {
                    trip.push((row, c, v / self.denominators[r]));
                    any = true;
                }
            }
            if any {
                coarse_nodes.push(z);
            }
        }
        let matrix = SparseMat::from_triplets(coarse_nodes.len(), patch.interior_dofs.len(), &trip)
            .expect("indices in range");
        PatchConstraints { matrix, coarse_nodes }
    }
}
