//! Plane-stress plate on a structured quad mesh: Q4 assembly with 2x2 Gauss
//! quadrature, parabolic end traction, unit-cell homogenization of fiber
//! composites, synthetic observation generation, and recovery of the
//! homogenized stiffness tensor from indirect data.

use nalgebra::DMatrix;

use crate::calibrate::{minimize, DesignLoss, TrainConfig, TrainResult};
use crate::error::{Error, Result};
use crate::surrogate::{SurrogateModel, SymmetricTensor3};

pub const PLATE_LENGTH: f64 = 100.0;
pub const PLATE_HALF_HEIGHT: f64 = 10.0;
pub const PLATE_NX: usize = 24;
pub const PLATE_NY: usize = 12;

/// Structured rectangular mesh of bilinear quads. Node (i, j) sits at
/// (x0 + i dx, y0 + j dy) with id j*(nx+1)+i; element (ex, ey) has id
/// ey*nx+ex and counterclockwise corner nodes.
#[derive(Clone, Debug)]
pub struct QuadMesh {
    nx: usize,
    ny: usize,
    x0: f64,
    y0: f64,
    dx: f64,
    dy: f64,
}

impl QuadMesh {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64, nx: usize, ny: usize) -> Result<QuadMesh> {
        if nx == 0 || ny == 0 || !(x1 > x0) || !(y1 > y0) {
            return Err(Error::contract("degenerate mesh extents"));
        }
        Ok(QuadMesh {
            nx,
            ny,
            x0,
            y0,
            dx: (x1 - x0) / nx as f64,
            dy: (y1 - y0) / ny as f64,
        })
    }

    /// The macro plate: [0,100] x [-10,10], 24 x 12 elements.
    pub fn plate() -> QuadMesh {
        QuadMesh::new(
            0.0,
            -PLATE_HALF_HEIGHT,
            PLATE_LENGTH,
            PLATE_HALF_HEIGHT,
            PLATE_NX,
            PLATE_NY,
        )
        .unwrap()
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn spacing(&self) -> (f64, f64) {
        (self.dx, self.dy)
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn element_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn dof_count(&self) -> usize {
        2 * self.node_count()
    }

    pub fn node_id(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_coord(&self, n: usize) -> [f64; 2] {
        let i = n % (self.nx + 1);
        let j = n / (self.nx + 1);
        [self.x0 + i as f64 * self.dx, self.y0 + j as f64 * self.dy]
    }

    /// Corner nodes in counterclockwise order starting at the lower left.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let ex = e % self.nx;
        let ey = e / self.nx;
        [
            self.node_id(ex, ey),
            self.node_id(ex + 1, ey),
            self.node_id(ex + 1, ey + 1),
            self.node_id(ex, ey + 1),
        ]
    }

    pub fn element_centroid(&self, e: usize) -> [f64; 2] {
        let ex = e % self.nx;
        let ey = e / self.nx;
        [
            self.x0 + (ex as f64 + 0.5) * self.dx,
            self.y0 + (ey as f64 + 0.5) * self.dy,
        ]
    }

    /// Element dof slots in nodal order: [ux0, uy0, ux1, uy1, ...].
    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        let n = self.element_nodes(e);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    pub fn gauss_count(&self) -> usize {
        4 * self.element_count()
    }
}

enum DofState {
    Free,
    Fixed,
    Tied(usize),
}

/// Reduction from full nodal dofs to free unknowns. Fixed dofs carry value
/// zero; tied (periodic slave) dofs share their master's unknown.
pub struct DofMapBuilder {
    state: Vec<DofState>,
}

impl DofMapBuilder {
    pub fn new(total: usize) -> DofMapBuilder {
        DofMapBuilder {
            state: (0..total).map(|_| DofState::Free).collect(),
        }
    }

    pub fn fix(&mut self, dof: usize) {
        self.state[dof] = DofState::Fixed;
    }

    pub fn tie(&mut self, slave: usize, master: usize) {
        self.state[slave] = DofState::Tied(master);
    }

    pub fn finish(self) -> Result<DofMap> {
        let n = self.state.len();
        // Resolve tie chains to a terminal free or fixed dof.
        let mut terminal = vec![usize::MAX; n];
        for d in 0..n {
            let mut cur = d;
            let mut hops = 0;
            while let DofState::Tied(m) = self.state[cur] {
                cur = m;
                hops += 1;
                if hops > n {
                    return Err(Error::contract("cyclic dof tie"));
                }
            }
            terminal[d] = cur;
        }
        let mut index = vec![None; n];
        let mut free = 0;
        for d in 0..n {
            if terminal[d] == d && matches!(self.state[d], DofState::Free) {
                index[d] = Some(free);
                free += 1;
            }
        }
        for d in 0..n {
            if terminal[d] != d {
                index[d] = index[terminal[d]];
            }
        }
        Ok(DofMap { index, free })
    }
}

pub struct DofMap {
    index: Vec<Option<usize>>,
    free: usize,
}

impl DofMap {
    pub fn free_count(&self) -> usize {
        self.free
    }

    pub fn full_count(&self) -> usize {
        self.index.len()
    }

    /// Reduced index of a full dof; None when fixed.
    pub fn index(&self, dof: usize) -> Option<usize> {
        self.index[dof]
    }

    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        self.index
            .iter()
            .map(|slot| slot.map_or(0.0, |i| reduced[i]))
            .collect()
    }
}

/// Supports for the macro plate: the mid-height left node is pinned, the two
/// left corners roll vertically (u_x fixed).
pub fn plate_dofs(mesh: &QuadMesh) -> Result<DofMap> {
    if mesh.ny() % 2 != 0 {
        return Err(Error::contract("plate mesh needs an even element row count"));
    }
    let mut b = DofMapBuilder::new(mesh.dof_count());
    let center = mesh.node_id(0, mesh.ny() / 2);
    b.fix(2 * center);
    b.fix(2 * center + 1);
    b.fix(2 * mesh.node_id(0, 0));
    b.fix(2 * mesh.node_id(0, mesh.ny()));
    b.finish()
}

const GP: f64 = 0.577_350_269_189_625_8;
const XI: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
const ETA: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

/// Shared reference-element quadrature data: global shape gradients per
/// Gauss point (the mesh is uniform, so one table serves every element).
pub struct Quadrature {
    /// dn[g][a] = (dN_a/dx, dN_a/dy) at Gauss point g.
    dn: [[(f64, f64); 4]; 4],
    /// Integration weight times Jacobian determinant (equal at all points).
    pub weight: f64,
}

impl Quadrature {
    pub fn for_mesh(mesh: &QuadMesh) -> Quadrature {
        let (dx, dy) = mesh.spacing();
        let mut dn = [[(0.0, 0.0); 4]; 4];
        let pts = [(-GP, -GP), (GP, -GP), (GP, GP), (-GP, GP)];
        for (g, &(xi, eta)) in pts.iter().enumerate() {
            for a in 0..4 {
                let dxi = XI[a] * (1.0 + ETA[a] * eta) / 4.0;
                let deta = ETA[a] * (1.0 + XI[a] * xi) / 4.0;
                dn[g][a] = (dxi * 2.0 / dx, deta * 2.0 / dy);
            }
        }
        Quadrature {
            dn,
            weight: dx * dy / 4.0,
        }
    }

    /// Rows of the strain-displacement matrix at Gauss point g, as the
    /// coefficient of each of the 8 element dofs in (e_xx, e_yy, g_xy).
    pub fn b_rows(&self, g: usize) -> [[f64; 8]; 3] {
        let mut b = [[0.0; 8]; 3];
        for a in 0..4 {
            let (nx, ny) = self.dn[g][a];
            b[0][2 * a] = nx;
            b[1][2 * a + 1] = ny;
            b[2][2 * a] = ny;
            b[2][2 * a + 1] = nx;
        }
        b
    }

    pub fn strain(&self, g: usize, ue: &[f64; 8]) -> [f64; 3] {
        let mut e = [0.0; 3];
        for a in 0..4 {
            let (nx, ny) = self.dn[g][a];
            e[0] += nx * ue[2 * a];
            e[1] += ny * ue[2 * a + 1];
            e[2] += ny * ue[2 * a] + nx * ue[2 * a + 1];
        }
        e
    }
}

fn gather_element(mesh: &QuadMesh, e: usize, full: &[f64]) -> [f64; 8] {
    let dofs = mesh.element_dofs(e);
    let mut ue = [0.0; 8];
    for (slot, &d) in ue.iter_mut().zip(&dofs) {
        *slot = full[d];
    }
    ue
}

/// Per-element constitutive tensors for the macro plate.
#[derive(Clone)]
pub struct MaterialField {
    tensors: Vec<SymmetricTensor3>,
}

/// Fiber-fraction generators for the space-varying studies. The linear
/// profile decreases toward the right edge; the radial profile peaks at the
/// plate center and decays toward the corners.
#[derive(Clone, Copy, Debug)]
pub enum FieldKind {
    Uniform { vf: f64 },
    LinearX,
    Radial,
}

pub const VF_LOW: f64 = 1.0 / 9.0;
pub const VF_HIGH: f64 = 0.25;

/// Pointwise fiber volume fraction of the generator field.
pub fn fiber_fraction(kind: FieldKind, x: f64, y: f64) -> f64 {
    match kind {
        FieldKind::Uniform { vf } => vf,
        FieldKind::LinearX => {
            let s = x / (2.0 * PLATE_LENGTH);
            VF_LOW * s + VF_HIGH * (1.0 - s)
        }
        FieldKind::Radial => {
            let l2 = PLATE_LENGTH / 2.0;
            let c = PLATE_HALF_HEIGHT;
            let rho = (((x - l2) * (x - l2) + y * y) / (l2 * l2 + c * c)).sqrt();
            VF_LOW * rho + VF_HIGH * (1.0 - rho)
        }
    }
}

impl MaterialField {
    pub fn uniform(mesh: &QuadMesh, c: SymmetricTensor3) -> MaterialField {
        MaterialField {
            tensors: vec![c; mesh.element_count()],
        }
    }

    /// Element tensors interpolated between the two homogenized endpoints
    /// (`c_low` at fiber fraction 1/9, `c_high` at 1/4), with the fraction
    /// sampled at element centroids.
    pub fn interpolated(
        mesh: &QuadMesh,
        kind: FieldKind,
        c_low: &SymmetricTensor3,
        c_high: &SymmetricTensor3,
    ) -> Result<MaterialField> {
        let tensors = (0..mesh.element_count())
            .map(|e| {
                let [x, y] = mesh.element_centroid(e);
                let vf = fiber_fraction(kind, x, y);
                let t = (vf - VF_LOW) / (VF_HIGH - VF_LOW);
                if !(-1e-12..=1.0 + 1e-12).contains(&t) {
                    return Err(Error::domain(
                        "material interpolation",
                        format!("weight {t} outside [0,1] at element {e}"),
                    ));
                }
                Ok(c_low.lerp(c_high, t.clamp(0.0, 1.0)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MaterialField { tensors })
    }

    pub fn from_model(mesh: &QuadMesh, model: &SurrogateModel) -> Result<MaterialField> {
        match model {
            SurrogateModel::Tensor(t) => Ok(MaterialField::uniform(mesh, *t)),
            _ => Err(Error::contract("plate assembly wants a tensor model")),
        }
    }

    pub fn tensor(&self, e: usize) -> &SymmetricTensor3 {
        &self.tensors[e]
    }

    pub fn element_count(&self) -> usize {
        self.tensors.len()
    }
}

/// Reduced stiffness matrix for a per-element linear material.
pub fn stiffness(mesh: &QuadMesh, dofs: &DofMap, field: &MaterialField) -> Result<DMatrix<f64>> {
    if field.element_count() != mesh.element_count() {
        return Err(Error::contract("material field does not cover the mesh"));
    }
    let quad = Quadrature::for_mesh(mesh);
    let n = dofs.free_count();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for e in 0..mesh.element_count() {
        let d = field.tensor(e);
        let mut ke = [[0.0; 8]; 8];
        for g in 0..4 {
            let b = quad.b_rows(g);
            // D B columnwise, then B^T (D B).
            for col in 0..8 {
                let eb = [b[0][col], b[1][col], b[2][col]];
                let s = d.apply(&eb);
                for row in 0..8 {
                    ke[row][col] +=
                        (b[0][row] * s[0] + b[1][row] * s[1] + b[2][row] * s[2]) * quad.weight;
                }
            }
        }
        let ed = mesh.element_dofs(e);
        for (row, &dr) in ed.iter().enumerate() {
            let Some(ir) = dofs.index(dr) else { continue };
            for (col, &dc) in ed.iter().enumerate() {
                if let Some(ic) = dofs.index(dc) {
                    k[(ir, ic)] += ke[row][col];
                }
            }
        }
    }
    Ok(k)
}

/// Reduced internal force for a displacement state (linear material).
pub fn internal_force(
    mesh: &QuadMesh,
    dofs: &DofMap,
    field: &MaterialField,
    u_red: &[f64],
) -> Result<Vec<f64>> {
    if u_red.len() != dofs.free_count() {
        return Err(Error::contract("state length != free dof count"));
    }
    let quad = Quadrature::for_mesh(mesh);
    let full = dofs.expand(u_red);
    let mut p = vec![0.0; dofs.free_count()];
    for e in 0..mesh.element_count() {
        let ue = gather_element(mesh, e, &full);
        let ed = mesh.element_dofs(e);
        for g in 0..4 {
            let eps = quad.strain(g, &ue);
            let sig = field.tensor(e).apply(&eps);
            let b = quad.b_rows(g);
            for (a, &d) in ed.iter().enumerate() {
                if let Some(i) = dofs.index(d) {
                    p[i] += (b[0][a] * sig[0] + b[1][a] * sig[1] + b[2][a] * sig[2]) * quad.weight;
                }
            }
        }
    }
    Ok(p)
}

/// Traction on the right edge: constant axial component -3pL/(2c^2) and a
/// parabolic shear 3p(1-(y/c)^2)/(4c) whose resultant is exactly p.
pub fn edge_traction(mesh: &QuadMesh, p: f64, y: f64) -> [f64; 2] {
    let [x0, _] = mesh.node_coord(0);
    let [x1, ytop] = mesh.node_coord(mesh.node_count() - 1);
    let l = x1 - x0;
    let ymid = ytop - (mesh.ny() as f64 * mesh.spacing().1) / 2.0;
    let c = ytop - ymid;
    let yc = y - ymid;
    [
        -3.0 * p * l / (2.0 * c * c),
        3.0 * p * (1.0 - (yc / c) * (yc / c)) / (4.0 * c),
    ]
}

/// Reduced consistent load vector for the right-edge traction, integrated
/// with two Gauss points per edge segment (exact for the parabolic profile).
pub fn external_force(mesh: &QuadMesh, dofs: &DofMap, p: f64) -> Vec<f64> {
    let mut f = vec![0.0; dofs.free_count()];
    let dy = mesh.spacing().1;
    for ey in 0..mesh.ny() {
        let lower = mesh.node_id(mesh.nx(), ey);
        let upper = mesh.node_id(mesh.nx(), ey + 1);
        let y_lower = mesh.node_coord(lower)[1];
        for &xi in &[-GP, GP] {
            let y = y_lower + (xi + 1.0) / 2.0 * dy;
            let t = edge_traction(mesh, p, y);
            let shape = [(1.0 - xi) / 2.0, (1.0 + xi) / 2.0];
            for (node, n) in [(lower, shape[0]), (upper, shape[1])] {
                for comp in 0..2 {
                    if let Some(i) = dofs.index(2 * node + comp) {
                        f[i] += n * t[comp] * dy / 2.0;
                    }
                }
            }
        }
    }
    f
}

pub fn solve_linear(k: &DMatrix<f64>, f: &[f64]) -> Result<Vec<f64>> {
    let rhs = nalgebra::DVector::from_column_slice(f);
    let lu = k.clone().lu();
    let sol = lu.solve(&rhs).ok_or(Error::singular("plate stiffness"))?;
    Ok(sol.as_slice().to_vec())
}

/// One synthetic data point: a converged state and the load that caused it,
/// both on free dofs.
#[derive(Clone, Debug)]
pub struct Observation {
    pub p: f64,
    pub u: Vec<f64>,
    pub f: Vec<f64>,
}

pub fn generate_observations(
    mesh: &QuadMesh,
    dofs: &DofMap,
    field: &MaterialField,
    loads: &[f64],
) -> Result<Vec<Observation>> {
    if loads.is_empty() {
        return Err(Error::contract("no load strengths given"));
    }
    let k = stiffness(mesh, dofs, field)?;
    let lu = k.lu();
    loads
        .iter()
        .map(|&p| {
            let f = external_force(mesh, dofs, p);
            let rhs = nalgebra::DVector::from_column_slice(&f);
            let sol = lu
                .solve(&rhs)
                .ok_or(Error::singular("plate stiffness"))?;
            Ok(Observation {
                p,
                u: sol.as_slice().to_vec(),
                f,
            })
        })
        .collect()
}

/// Gauss-point strains of a reduced state, in global Gauss-id order.
pub fn gauss_strains(mesh: &QuadMesh, dofs: &DofMap, u_red: &[f64]) -> Vec<[f64; 3]> {
    let quad = Quadrature::for_mesh(mesh);
    let full = dofs.expand(u_red);
    let mut out = Vec::with_capacity(mesh.gauss_count());
    for e in 0..mesh.element_count() {
        let ue = gather_element(mesh, e, &full);
        for g in 0..4 {
            out.push(quad.strain(g, &ue));
        }
    }
    out
}

/// Indirect-observation loss for tensor recovery: rows are the free dofs of
/// each observation's balance residual, inputs are the observation's Gauss
/// strains, and the scatter carries B^T times the quadrature weight.
pub fn recovery_loss(
    mesh: &QuadMesh,
    dofs: &DofMap,
    observations: &[Observation],
) -> Result<DesignLoss> {
    if observations.is_empty() {
        return Err(Error::contract("tensor recovery needs observations"));
    }
    let quad = Quadrature::for_mesh(mesh);
    let model = SurrogateModel::Tensor(SymmetricTensor3::zero());
    let mut loss = DesignLoss::new(model);
    for obs in observations {
        if obs.u.len() != dofs.free_count() || obs.f.len() != dofs.free_count() {
            return Err(Error::contract("observation length != free dof count"));
        }
        let offset: Vec<f64> = obs.f.iter().map(|v| -v).collect();
        loss.begin_observation(&offset);
        let full = dofs.expand(&obs.u);
        for e in 0..mesh.element_count() {
            let ue = gather_element(mesh, e, &full);
            let ed = mesh.element_dofs(e);
            for g in 0..4 {
                let eps = quad.strain(g, &ue);
                let b = quad.b_rows(g);
                let mut scatter = [Vec::new(), Vec::new(), Vec::new()];
                for (a, &d) in ed.iter().enumerate() {
                    if let Some(i) = dofs.index(d) {
                        for comp in 0..3 {
                            if b[comp][a] != 0.0 {
                                scatter[comp].push((i, b[comp][a] * quad.weight));
                            }
                        }
                    }
                }
                loss.add_point(&eps, &scatter)?;
            }
        }
    }
    Ok(loss)
}

pub fn recover_tensor(
    mesh: &QuadMesh,
    dofs: &DofMap,
    observations: &[Observation],
    cfg: &TrainConfig,
) -> Result<(SymmetricTensor3, TrainResult)> {
    let mut loss = recovery_loss(mesh, dofs, observations)?;
    let theta0 = vec![0.0; 6];
    let result = minimize(&mut loss, &theta0, cfg, None)?;
    let c = SymmetricTensor3::new([
        result.theta[0],
        result.theta[1],
        result.theta[2],
        result.theta[3],
        result.theta[4],
        result.theta[5],
    ]);
    Ok((c, result))
}

/// Largest in-plane principal stress.
pub fn principal_stress(s: &[f64; 3]) -> f64 {
    let mid = (s[0] + s[1]) / 2.0;
    let half = (s[0] - s[1]) / 2.0;
    mid + (half * half + s[2] * s[2]).sqrt()
}

/// Maximum principal stress over all Gauss points and the point's global id.
/// Ties keep the lowest id.
pub fn max_principal_stress(
    strains: &[[f64; 3]],
    mut stress: impl FnMut(usize, &[f64; 3]) -> Result<[f64; 3]>,
) -> Result<(f64, usize)> {
    if strains.is_empty() {
        return Err(Error::contract("no gauss points"));
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_id = 0;
    for (id, eps) in strains.iter().enumerate() {
        let s1 = principal_stress(&stress(id, eps)?);
        if s1 > best {
            best = s1;
            best_id = id;
        }
    }
    Ok((best, best_id))
}

mod homogenize;
pub use homogenize::{homogenize_cell, homogenize_unit_cell, CellPhases, CELL_DIVISIONS};

#[cfg(test)]
mod tests;
