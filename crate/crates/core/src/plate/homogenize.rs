//! First-order computational homogenization of a square unit cell with a
//! centered square fiber: three background-strain cell problems under
//! periodic boundary conditions give the averaged plane-stress stiffness.

use nalgebra::{DVector, Matrix3};

use super::{stiffness, DofMapBuilder, MaterialField, QuadMesh, Quadrature};
use crate::error::{Error, Result};
use crate::surrogate::SymmetricTensor3;

pub const CELL_DIVISIONS: usize = 36;

/// Constituent stiffnesses of the reinforced composite.
#[derive(Clone, Debug)]
pub struct CellPhases {
    pub matrix: SymmetricTensor3,
    pub fiber: SymmetricTensor3,
}

impl Default for CellPhases {
    fn default() -> CellPhases {
        CellPhases {
            matrix: SymmetricTensor3::isotropic_plane_stress(1000.0, 0.49999),
            fiber: SymmetricTensor3::isotropic_plane_stress(3000.0, 0.39999),
        }
    }
}

pub fn homogenize_unit_cell(vf: f64, phases: &CellPhases) -> Result<SymmetricTensor3> {
    homogenize_cell(vf, phases, CELL_DIVISIONS)
}

/// Homogenize with an explicit grid resolution. The fiber is the centered
/// square of area `vf`; elements are assigned by centroid, so fractions
/// whose side length aligns with the grid (1/9 and 1/4 on 36 divisions) are
/// resolved exactly.
pub fn homogenize_cell(
    vf: f64,
    phases: &CellPhases,
    divisions: usize,
) -> Result<SymmetricTensor3> {
    if !(0.0..1.0).contains(&vf) || vf == 0.0 {
        return Err(Error::contract(format!(
            "fiber fraction {vf} outside (0,1)"
        )));
    }
    if divisions < 2 {
        return Err(Error::contract("cell grid too coarse"));
    }
    let mesh = QuadMesh::new(0.0, 0.0, 1.0, 1.0, divisions, divisions)?;
    let side = vf.sqrt();
    let (lo, hi) = (0.5 - side / 2.0, 0.5 + side / 2.0);
    let tensors = (0..mesh.element_count())
        .map(|e| {
            let [x, y] = mesh.element_centroid(e);
            if (lo..hi).contains(&x) && (lo..hi).contains(&y) {
                phases.fiber
            } else {
                phases.matrix
            }
        })
        .collect();
    let field = MaterialField { tensors };

    // Opposite edges share unknowns; the tie chains leave the four corners
    // on the pinned origin node, which removes the remaining translations.
    let mut b = DofMapBuilder::new(mesh.dof_count());
    for j in 0..=divisions {
        let slave = mesh.node_id(divisions, j);
        let master = mesh.node_id(0, j);
        b.tie(2 * slave, 2 * master);
        b.tie(2 * slave + 1, 2 * master + 1);
    }
    for i in 0..divisions {
        let slave = mesh.node_id(i, divisions);
        let master = mesh.node_id(i, 0);
        b.tie(2 * slave, 2 * master);
        b.tie(2 * slave + 1, 2 * master + 1);
    }
    b.fix(2 * mesh.node_id(0, 0));
    b.fix(2 * mesh.node_id(0, 0) + 1);
    let dofs = b.finish()?;

    let k = stiffness(&mesh, &dofs, &field)?;
    let chol = k
        .cholesky()
        .ok_or(Error::singular("unit cell stiffness"))?;

    let quad = Quadrature::for_mesh(&mesh);
    let mut columns = [[0.0; 3]; 3];
    for (case, col) in columns.iter_mut().enumerate() {
        let mut e0 = [0.0; 3];
        e0[case] = 1.0;
        let mut rhs = vec![0.0; dofs.free_count()];
        for e in 0..mesh.element_count() {
            let s0 = field.tensor(e).apply(&e0);
            let ed = mesh.element_dofs(e);
            for g in 0..4 {
                let bg = quad.b_rows(g);
                for (a, &d) in ed.iter().enumerate() {
                    if let Some(i) = dofs.index(d) {
                        rhs[i] -=
                            (bg[0][a] * s0[0] + bg[1][a] * s0[1] + bg[2][a] * s0[2]) * quad.weight;
                    }
                }
            }
        }
        let sol = chol.solve(&DVector::from_column_slice(&rhs));
        let full = dofs.expand(sol.as_slice());

        // Cell area is 1, so the averaged stress is the plain weighted sum.
        for e in 0..mesh.element_count() {
            let ue = super::gather_element(&mesh, e, &full);
            for g in 0..4 {
                let eps = quad.strain(g, &ue);
                let total = [e0[0] + eps[0], e0[1] + eps[1], e0[2] + eps[2]];
                let sig = field.tensor(e).apply(&total);
                for r in 0..3 {
                    col[r] += sig[r] * quad.weight;
                }
            }
        }
    }

    let m = Matrix3::from_fn(|r, c| columns[c][r]);
    Ok(SymmetricTensor3::from_matrix_symmetrized(&m))
}
