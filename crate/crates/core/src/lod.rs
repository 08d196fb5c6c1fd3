//! The coarse multiscale system and reconstruction of the LOD solution.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::corrector::CorrectorSet;
use crate::error::{Error, Result};
use crate::fem::{FeFunction, Space};
use crate::interp::{prolongate, ClementOp};
use crate::linsolve::SparseMat;
use crate::mesh::CoarseFineMap;

/// Multiscale basis `R_h(Phi_z) = Phi_z + sum_T Q_h^T(Phi_z)` for the free coarse nodes.
#[derive(Clone, Debug)]
pub struct MsBasis {
    /// Fine nodes x free coarse nodes.
    pub r: SparseMat,
    /// Coarse node of each column.
    pub free_coarse: Vec<usize>,
    n_coarse: usize,
}

impl MsBasis {
    pub fn n_cols(&self) -> usize {
        self.free_coarse.len()
    }

    /// Dense fine vector of column `c`.
    pub fn column(&self, c: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.r.n_rows()];
        for (x, o) in out.iter_mut().enumerate() {
            *o = self.r.get(x, c);
        }
        out
    }

    /// `R v` for coefficients on the free coarse nodes.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        self.r.mul_vec(coeffs)
    }

    /// Coarse function with the column coefficients at the free nodes.
    pub fn coarse_function(&self, coeffs: &[f64]) -> FeFunction {
        let mut v = vec![0.0; self.n_coarse];
        for (&z, &c) in self.free_coarse.iter().zip(coeffs) {
            v[z] = c;
        }
        FeFunction::coarse(v)
    }
}

pub fn assemble_ms_basis(correctors: &CorrectorSet, cfmap: &CoarseFineMap, clement: &ClementOp) -> Result<MsBasis> {
    let coarse = cfmap.coarse();
    let fine = cfmap.fine();
    if correctors.n_coarse_elems() != coarse.n_elements() || correctors.n_fine != fine.n_nodes() {
        return Err(Error::Dimension("corrector set does not match the meshes".into()));
    }
    let free_coarse = clement.free_coarse_nodes().to_vec();
    let nf = fine.n_nodes();
    let mut acc = vec![0.0; nf];
    let mut seen = vec![false; nf];
    let mut touched: Vec<usize> = Vec::new();
    // rows of R', one per free coarse node
    let mut row_ptr = vec![0usize];
    let mut trip_cols = Vec::new();
    let mut trip_vals = Vec::new();
    let p = crate::interp::prolongation(cfmap).transpose();
    for &z in &free_coarse {
        touched.clear();
        let (cols, vals) = p.row(z);
        for (&x, &v) in cols.iter().zip(vals) {
            if !seen[x] {
                seen[x] = true;
                touched.push(x);
            }
            acc[x] += v;
        }
        for &t in coarse.elements_of_node(z) {
            let vertex = coarse.elements()[t].iter().position(|&n| n == z).expect("node of its element");
            for (x, v) in correctors.element(t, vertex)?.iter() {
                if !seen[x] {
                    seen[x] = true;
                    touched.push(x);
                }
                acc[x] += v;
            }
        }
        touched.sort_unstable();
        for &x in &touched {
            if acc[x] != 0.0 {
                trip_cols.push(x);
                trip_vals.push(acc[x]);
            }
            acc[x] = 0.0;
            seen[x] = false;
        }
        row_ptr.push(trip_cols.len());
    }
    let mut trip = Vec::with_capacity(trip_cols.len());
    for r in 0..free_coarse.len() {
        for k in row_ptr[r]..row_ptr[r + 1] {
            trip.push((r, trip_cols[k], trip_vals[k]));
        }
    }
    drop(trip_cols);
    drop(trip_vals);
    let rt = SparseMat::from_triplets(free_coarse.len(), nf, &trip)?;
    Ok(MsBasis { r: rt.transpose(), free_coarse, n_coarse: coarse.n_nodes() })
}

/// Result of the coarse LOD solve.
#[derive(Clone, Debug)]
pub struct LodSolution {
    /// Coarse part `v_H`.
    pub v_coarse: FeFunction,
    /// `u_LOD = R_h(v_H + g_h) - B_h` on the fine mesh.
    pub u: FeFunction,
    /// Smallest eigenvalue of the coarse stiffness.
    pub min_eigenvalue: f64,
    pub size: usize,
}

/// `R' S R` for a fine matrix `S`.
pub fn coarse_stiffness(basis: &MsBasis, stiffness: &SparseMat) -> Result<DMatrix<f64>> {
    let sr = stiffness.matmul(&basis.r)?;
    let k = basis.r.transpose().matmul(&sr)?;
    let n = basis.n_cols();
    let mut dense = DMatrix::zeros(n, n);
    for r in 0..n {
        let (cols, vals) = k.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            dense[(r, c)] = v;
        }
    }
    // symmetrize the rounding
    Ok((&dense + dense.transpose()) * 0.5)
}

/// Solves the LOD system with right-hand side
/// `R'(load + neumann - S (R_h(g_h) - B_h))` and reconstructs `u_LOD`.
pub fn solve_lod(
    basis: &MsBasis,
    correctors: &CorrectorSet,
    stiffness: &SparseMat,
    load: &[f64],
    neumann: &[f64],
    g_h: &FeFunction,
) -> Result<LodSolution> {
    let nf = basis.r.n_rows();
    if stiffness.n_rows() != nf || load.len() != nf || neumann.len() != nf || g_h.len() != nf || g_h.space != Space::Fine {
        return Err(Error::Dimension("LOD inputs do not match the fine mesh".into()));
    }
    let mut lift = g_h.values.clone();
    for (l, (d, b)) in lift.iter_mut().zip(correctors.dirichlet_sum().into_iter().zip(correctors.neumann_sum())) {
        *l += d - b;
    }
    let s_lift = stiffness.mul_vec(&lift);
    let f: Vec<f64> = (0..nf).map(|x| load[x] + neumann[x] - s_lift[x]).collect();
    let rhs = DVector::from_vec(basis.r.mul_transpose_vec(&f));
    let k = coarse_stiffness(basis, stiffness)?;
    let n = basis.n_cols();
    let min_eigenvalue = if n > 0 { k.clone().symmetric_eigenvalues().min() } else { 0.0 };
    let coeffs = if n > 0 {
        let chol = k.cholesky().ok_or(Error::NotPositiveDefinite { row: 0, pivot: min_eigenvalue })?;
        chol.solve(&rhs)
    } else {
        DVector::zeros(0)
    };
    let rv = basis.apply(coeffs.as_slice());
    let u: Vec<f64> = rv.iter().zip(&lift).map(|(a, b)| a + b).collect();
    Ok(LodSolution { v_coarse: basis.coarse_function(coeffs.as_slice()), u: FeFunction::fine(u), min_eigenvalue, size: n })
}

/// Largest coarse grid and refinement depth the dense oracle accepts.
pub const ORACLE_MAX_CELLS: usize = 8;
pub const ORACLE_MAX_LEVELS: usize = 2;

/// Ideal method evaluated densely: `(1 - P_{A,h}) (I_H|_{V_H})^{-1} I_H u_h`,
/// where `P_{A,h}` is the `A`-orthogonal projection onto the kernel of `I_H`.
pub fn ideal_projection_oracle(
    cfmap: &CoarseFineMap,
    clement: &ClementOp,
    stiffness: &SparseMat,
    u_h: &FeFunction,
) -> Result<FeFunction> {
    if cfmap.coarse().n_cells() > ORACLE_MAX_CELLS || cfmap.refine_levels() > ORACLE_MAX_LEVELS {
        return Err(Error::Config(format!(
            "dense oracle limited to {ORACLE_MAX_CELLS} coarse cells and {ORACLE_MAX_LEVELS} refinement levels"
        )));
    }
    let fine = cfmap.fine();
    let free: Vec<usize> = (0..fine.n_nodes()).filter(|&x| !fine.is_dirichlet(x)).collect();
    let n = free.len();
    let m = clement.n_free();
    let w = clement.weights();
    let cmat = DMatrix::from_fn(m, n, |r, c| w.get(r, free[c]));
    let eig = SymmetricEigen::new(cmat.transpose() * &cmat);
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] < 1e-10 * max_eig).collect();
    if keep.len() + m != n {
        return Err(Error::Model(format!("kernel dimension {} differs from {} - {}", keep.len(), n, m)));
    }
    let z = DMatrix::from_fn(n, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]);
    let s = DMatrix::from_fn(n, n, |i, j| stiffness.get(free[i], free[j]));

    let coarse_part = clement.invert_on_coarse(cfmap, &clement.apply(u_h)?)?;
    let pv = prolongate(cfmap, &coarse_part)?;
    let v = DVector::from_iterator(n, free.iter().map(|&x| pv.values[x]));
    let zsz = z.transpose() * &s * &z;
    let proj = &z
        * zsz
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { row: 0, pivot: 0.0 })?
            .solve(&(z.transpose() * (&s * &v)));
    let mut out = pv.values.clone();
    for (k, &x) in free.iter().enumerate() {
        out[x] -= proj[k];
    }
    Ok(FeFunction::fine(out))
}
