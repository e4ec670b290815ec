//! Axisymmetric inflation of an incompressible two-term Mooney-Rivlin
//! membrane, nondimensionalized so the shear modulus and reference radius
//! drop out. Linear meridian elements on the reference radius, 3-point
//! Gauss quadrature, live (follower) pressure on the deformed surface.
//!
//! The common 2*pi factor is dropped from internal and external virtual
//! work throughout; a rigid unit transverse displacement therefore does
//! external work p * r_edge^2 / 2.

use nalgebra::DMatrix;

use crate::ad::{Tape, TapeVar};
use crate::calibrate::{minimize, minimize_bounded, DesignLoss, TrainConfig, TrainResult};
use crate::error::{Error, Result};
use crate::surrogate::SurrogateModel;


pub const MEMBRANE_ELEMENTS: usize = 100;
pub const EDGE_DISPLACEMENT: f64 = 0.1;

/// Pressures used to generate the training sweep: 0.0, 0.5, ..., 8.0.
pub fn training_loads() -> Vec<f64> {
    (0..=16).map(|k| k as f64 * 0.5).collect()
}

/// Held-out pressures, each falling between training levels.
pub const TEST_LOADS: [f64; 3] = [2.2, 4.2, 6.2];

const GAUSS_XI: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GAUSS_W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Uniform 1D mesh of the reference meridian [0, 1] with two unknowns
/// (radial, transverse) per node. Constrained dofs: radial at the pole
/// (symmetry), both at the rim, where the radial value is the prescribed
/// pre-stretch displacement. Free dofs keep their full-vector order.
pub struct MembraneMesh {
    n_e: usize,
    edge_displacement: f64,
}

impl MembraneMesh {
    pub fn new(n_e: usize, edge_displacement: f64) -> Result<MembraneMesh> {
        if n_e < 2 {
            return Err(Error::contract("membrane mesh needs at least 2 elements"));
        }
        if edge_displacement <= -1.0 {
            return Err(Error::contract(
                "edge displacement must keep the rim at positive radius",
            ));
        }
        Ok(MembraneMesh {
            n_e,
            edge_displacement,
        })
    }

    pub fn standard() -> MembraneMesh {
        MembraneMesh::new(MEMBRANE_ELEMENTS, EDGE_DISPLACEMENT).unwrap()
    }

    pub fn element_count(&self) -> usize {
        self.n_e
    }

    pub fn node_count(&self) -> usize {
        self.n_e + 1
    }

    pub fn dof_count(&self) -> usize {
        2 * (self.n_e + 1)
    }

    pub fn free_count(&self) -> usize {
        2 * self.n_e - 1
    }

    pub fn gauss_count(&self) -> usize {
        3 * self.n_e
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_e as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    pub fn edge_displacement(&self) -> f64 {
        self.edge_displacement
    }

    /// Free index of a full dof id, None when prescribed. Radial dof of
    /// node i is 2i, transverse is 2i+1.
    pub fn index(&self, dof: usize) -> Option<usize> {
        let last = 2 * self.n_e;
        if dof == 0 || dof >= last {
            None
        } else {
            Some(dof - 1)
        }
    }

    fn prescribed(&self, dof: usize) -> f64 {
        if dof == 2 * self.n_e {
            self.edge_displacement
        } else {
            0.0
        }
    }

    pub fn expand(&self, u_free: &[f64]) -> Result<Vec<f64>> {
        if u_free.len() != self.free_count() {
            return Err(Error::contract(format!(
                "state length {} does not match {} free dofs",
                u_free.len(),
                self.free_count()
            )));
        }
        let mut full = vec![0.0; self.dof_count()];
        for dof in 0..self.dof_count() {
            full[dof] = match self.index(dof) {
                Some(i) => u_free[i],
                None => self.prescribed(dof),
            };
        }
        Ok(full)
    }

    pub fn reduce(&self, full: &[f64]) -> Result<Vec<f64>> {
        if full.len() != self.dof_count() {
            return Err(Error::contract(format!(
                "full state length {} does not match {} dofs",
                full.len(),
                self.dof_count()
            )));
        }
        let mut out = vec![0.0; self.free_count()];
        for dof in 0..self.dof_count() {
            if let Some(i) = self.index(dof) {
                out[i] = full[dof];
            }
        }
        Ok(out)
    }

    /// Flat pre-stretched configuration: radial displacement grows linearly
    /// to the rim value, no transverse deflection. Exact equilibrium at zero
    /// pressure for a spatially constant material, and the Newton starting
    /// point otherwise.
    pub fn flat_state(&self) -> Vec<f64> {
        let mut full = vec![0.0; self.dof_count()];
        for i in 0..self.node_count() {
            full[2 * i] = self.edge_displacement * self.node(i);
        }
        self.reduce(&full).unwrap()
    }
}

/// Principal stretches at a quadrature point. `normal` is fixed by
/// incompressibility: 1 / (meridian * hoop).
#[derive(Clone, Copy, Debug)]
pub struct Stretches {
    pub meridian: f64,
    pub hoop: f64,
    pub normal: f64,
}

/// Second-invariant coefficient profile over the reference radius.
#[derive(Clone, Debug)]
pub enum AlphaProfile {
    Constant(f64),
    /// Piecewise-linear through the tabulated anchor points below.
    Tabulated,
}

pub const ALPHA_TABLE: [(f64, f64); 4] = [
    (0.0, 0.098),
    (1.0 / 3.0, 0.108),
    (2.0 / 3.0, 0.093),
    (1.0, 0.106),
];

impl AlphaProfile {
    pub fn value(&self, r: f64) -> f64 {
        match self {
            AlphaProfile::Constant(a) => *a,
            AlphaProfile::Tabulated => {
                if r <= ALPHA_TABLE[0].0 {
                    return ALPHA_TABLE[0].1;
                }
                for w in ALPHA_TABLE.windows(2) {
                    let (r0, a0) = w[0];
                    let (r1, a1) = w[1];
                    if r <= r1 {
                        return a0 + (a1 - a0) * (r - r0) / (r1 - r0);
                    }
                }
                ALPHA_TABLE[3].1
            }
        }
    }
}

impl Default for AlphaProfile {
    fn default() -> Self {
        AlphaProfile::Constant(0.1)
    }
}

/// Reduced two-term Mooney-Rivlin principal stresses (per unit reference
/// length, thickness and modulus scaled out). With the thickness stretch
/// eliminated, the stored energy is
///   W = (l1^2 + l2^2 + l1^-2 l2^-2 - 3) + alpha (l1^2 l2^2 + l1^-2 + l2^-2 - 3)
/// and the returned pair is (dW/dl1, dW/dl2).
pub fn reference_stress(l1: f64, l2: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(l1 > 0.0) || !(l2 > 0.0) {
        return Err(Error::domain(
            "membrane stress",
            format!("non-positive stretch ({l1}, {l2})"),
        ));
    }
    let i13 = l1.powi(-3);
    let i23 = l2.powi(-3);
    let p1 = 2.0 * l1 + (-2.0) * (i13 * l2.powi(-2)) + 2.0 * alpha * (l1 * (l2 * l2) - i13);
    let p2 = 2.0 * l2 + (-2.0) * (i23 * l1.powi(-2)) + 2.0 * alpha * (l2 * (l1 * l1) - i23);
    Ok((p1, p2))
}

fn record_reference_stress(
    tape: &mut Tape,
    l1: TapeVar,
    l2: TapeVar,
    alpha: f64,
) -> (TapeVar, TapeVar) {
    let one_dir = |tape: &mut Tape, a: TapeVar, b: TapeVar| {
        let lead = tape.scale(a, 2.0);
        let ia3 = tape.powi(a, -3);
        let ib2 = tape.powi(b, -2);
        let prod = tape.mul(ia3, ib2);
        let second = tape.scale(prod, -2.0);
        let b2 = tape.mul(b, b);
        let ab2 = tape.mul(a, b2);
        let inner = tape.sub(ab2, ia3);
        let third = tape.scale(inner, 2.0 * alpha);
        tape.sum(&[lead, second, third])
    };
    let p1 = one_dir(tape, l1, l2);
    let p2 = one_dir(tape, l2, l1);
    (p1, p2)
}

/// Constitutive law mapping principal stretches to principal stresses:
/// either the reference material (with a possibly space-varying alpha) or
/// a trained surrogate, which sees stretches only, never position.
pub enum Material<'a> {
    MooneyRivlin(AlphaProfile),
    Surrogate(&'a SurrogateModel),
}

impl Material<'_> {
    fn check_surrogate(model: &SurrogateModel) -> Result<()> {
        if model.input_dim() != 2 || model.output_dim() != 2 {
            return Err(Error::contract(
                "membrane surrogate must map 2 stretches to 2 stresses",
            ));
        }
        Ok(())
    }

    /// Principal stresses at a quadrature point whose element midpoint sits
    /// at reference radius `mid` (only the reference material looks at it).
    pub fn stress(&self, mid: f64, l1: f64, l2: f64) -> Result<(f64, f64)> {
        match self {
            Material::MooneyRivlin(profile) => reference_stress(l1, l2, profile.value(mid)),
            Material::Surrogate(model) => {
                Material::check_surrogate(model)?;
                let mut out = [0.0; 2];
                model.evaluate(&[l1, l2], &mut out)?;
                Ok((out[0], out[1]))
            }
        }
    }

    fn record(&self, tape: &mut Tape, mid: f64, l1: TapeVar, l2: TapeVar) -> Result<(TapeVar, TapeVar)> {
        match self {
            Material::MooneyRivlin(profile) => {
                Ok(record_reference_stress(tape, l1, l2, profile.value(mid)))
            }
            Material::Surrogate(model) => {
                Material::check_surrogate(model)?;
                let out = model.record_on_tape(tape, &[l1, l2])?;
                Ok((out[0], out[1]))
            }
        }
    }
}

/// Quadrature-point scatter data: the stretch pair fed to the material and
/// the constant weights mapping its two stress outputs into the reduced
/// internal-force vector. `meridian_rows` covers all four element dofs
/// (radial, transverse at both nodes), `hoop_rows` the two radial dofs.
/// These weights depend only on the state the scatter was built from.
pub struct GaussPoint {
    pub id: usize,
    pub element: usize,
    pub radius: f64,
    pub midpoint: f64,
    pub input: [f64; 2],
    /// Quadrature measure r_ref * w. Dividing a scatter weight by this
    /// recovers the stretch derivative with respect to that dof.
    pub factor: f64,
    pub meridian_rows: [(Option<usize>, f64); 4],
    pub hoop_rows: [(Option<usize>, f64); 2],
}

fn element_gradients(mesh: &MembraneMesh, full: &[f64], e: usize) -> Result<(f64, f64, f64)> {
    let h = mesh.h();
    let ur0 = full[2 * e];
    let uz0 = full[2 * e + 1];
    let ur1 = full[2 * e + 2];
    let uz1 = full[2 * e + 3];
    let rp = 1.0 + (ur1 - ur0) / h;
    let zp = (uz1 - uz0) / h;
    let l1 = (rp * rp + zp * zp).sqrt();
    if !(l1 > 1e-12) {
        return Err(Error::domain_at(
            "membrane kinematics",
            e,
            "degenerate meridian segment",
        ));
    }
    Ok((rp, zp, l1))
}

/// Kinematics and scatter weights for every quadrature point of `full`.
/// Errors with a domain error when an element is inverted (non-positive
/// current radius), which forward solvers treat as a backtrack signal.
pub fn gauss_points(mesh: &MembraneMesh, full: &[f64]) -> Result<Vec<GaussPoint>> {
    let h = mesh.h();
    let mut pts = Vec::with_capacity(mesh.gauss_count());
    for e in 0..mesh.element_count() {
        let (rp, zp, l1) = element_gradients(mesh, full, e)?;
        let il1 = 1.0 / l1;
        let mid = (e as f64 + 0.5) * h;
        let dl1 = [-rp * il1 / h, -zp * il1 / h, rp * il1 / h, zp * il1 / h];
        for g in 0..3 {
            let rg_ref = mid + GAUSS_XI[g] * h / 2.0;
            let wg = GAUSS_W[g] * h / 2.0;
            let n0 = (1.0 - GAUSS_XI[g]) / 2.0;
            let n1 = (1.0 + GAUSS_XI[g]) / 2.0;
            let r_cur = rg_ref + n0 * full[2 * e] + n1 * full[2 * e + 2];
            if !(r_cur > 0.0) {
                return Err(Error::domain_at(
                    "membrane kinematics",
                    e,
                    "element inverted: non-positive current radius",
                ));
            }
            let l2 = r_cur / rg_ref;
            let c = rg_ref * wg;
            let idx = |local: usize| mesh.index(2 * e + local);
            pts.push(GaussPoint {
                id: 3 * e + g,
                element: e,
                radius: rg_ref,
                midpoint: mid,
                input: [l1, l2],
                factor: c,
                meridian_rows: [
                    (idx(0), dl1[0] * c),
                    (idx(1), dl1[1] * c),
                    (idx(2), dl1[2] * c),
                    (idx(3), dl1[3] * c),
                ],
                hoop_rows: [(idx(0), n0 * wg), (idx(2), n1 * wg)],
            });
        }
    }
    Ok(pts)
}

pub fn gauss_stretches(mesh: &MembraneMesh, u_free: &[f64]) -> Result<Vec<Stretches>> {
    let full = mesh.expand(u_free)?;
    Ok(gauss_points(mesh, &full)?
        .into_iter()
        .map(|p| Stretches {
            meridian: p.input[0],
            hoop: p.input[1],
            normal: 1.0 / (p.input[0] * p.input[1]),
        })
        .collect())
}

/// Reduced internal force: rows of d(stored energy)/d(free dof).
pub fn internal_force(mesh: &MembraneMesh, material: &Material, u_free: &[f64]) -> Result<Vec<f64>> {
    let full = mesh.expand(u_free)?;
    let mut f = vec![0.0; mesh.free_count()];
    for pt in gauss_points(mesh, &full)? {
        let (p1, p2) = material.stress(pt.midpoint, pt.input[0], pt.input[1])?;
        for (idx, w) in pt.meridian_rows {
            if let Some(i) = idx {
                f[i] += p1 * w;
            }
        }
        for (idx, w) in pt.hoop_rows {
            if let Some(i) = idx {
                f[i] += p2 * w;
            }
        }
    }
    Ok(f)
}

/// Full-length follower pressure force. The pressure acts on the deformed
/// surface, so the nodal force depends on the current state.
pub fn follower_force_full(mesh: &MembraneMesh, u_free: &[f64], p: f64) -> Result<Vec<f64>> {
    let full = mesh.expand(u_free)?;
    let h = mesh.h();
    let mut f = vec![0.0; mesh.dof_count()];
    for e in 0..mesh.element_count() {
        let (rp, zp, _) = element_gradients(mesh, full.as_slice(), e)?;
        let mid = (e as f64 + 0.5) * h;
        for g in 0..3 {
            let rg_ref = mid + GAUSS_XI[g] * h / 2.0;
            let wg = GAUSS_W[g] * h / 2.0;
            let n0 = (1.0 - GAUSS_XI[g]) / 2.0;
            let n1 = (1.0 + GAUSS_XI[g]) / 2.0;
            let r_cur = rg_ref + n0 * full[2 * e] + n1 * full[2 * e + 2];
            let common = p * r_cur * wg;
            f[2 * e] += -zp * n0 * common;
            f[2 * e + 1] += rp * n0 * common;
            f[2 * e + 2] += -zp * n1 * common;
            f[2 * e + 3] += rp * n1 * common;
        }
    }
    Ok(f)
}

pub fn follower_force(mesh: &MembraneMesh, u_free: &[f64], p: f64) -> Result<Vec<f64>> {
    let full = follower_force_full(mesh, u_free, p)?;
    let mut out = vec![0.0; mesh.free_count()];
    for dof in 0..mesh.dof_count() {
        if let Some(i) = mesh.index(dof) {
            out[i] = full[dof];
        }
    }
    Ok(out)
}

/// Out-of-balance force at pressure `p`: internal minus follower load.
pub fn residual(mesh: &MembraneMesh, material: &Material, u_free: &[f64], p: f64) -> Result<Vec<f64>> {
    let mut r = internal_force(mesh, material, u_free)?;
    let f = follower_force(mesh, u_free, p)?;
    for (ri, fi) in r.iter_mut().zip(f) {
        *ri -= fi;
    }
    Ok(r)
}

/// Residual and its state derivative, assembled from per-element tapes.
/// Each element records its four-dof contribution (constitutive response
/// and follower geometry included) and is swept backward once per local
/// row, so the tangent carries the full follower asymmetry.
pub fn tangent(
    mesh: &MembraneMesh,
    material: &Material,
    u_free: &[f64],
    p: f64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let full = mesh.expand(u_free)?;
    let h = mesh.h();
    let inv_h = 1.0 / h;
    let nf = mesh.free_count();
    let mut res = vec![0.0; nf];
    let mut k = DMatrix::zeros(nf, nf);
    let mut tape = Tape::new();
    for e in 0..mesh.element_count() {
        tape.reset();
        let q = tape.vars(&full[2 * e..2 * e + 4]);
        let dur = tape.sub(q[2], q[0]);
        let durh = tape.scale(dur, inv_h);
        let rp = tape.add_const(durh, 1.0);
        let duz = tape.sub(q[3], q[1]);
        let zp = tape.scale(duz, inv_h);
        let rp2 = tape.mul(rp, rp);
        let zp2 = tape.mul(zp, zp);
        let l1sq = tape.add(rp2, zp2);
        if !(tape.value(l1sq) > 1e-24) {
            return Err(Error::domain_at(
                "membrane kinematics",
                e,
                "degenerate meridian segment",
            ));
        }
        let l1 = tape.sqrt(l1sq)?;
        let il1 = tape.powi(l1, -1);
        let rp_il1 = tape.mul(rp, il1);
        let zp_il1 = tape.mul(zp, il1);
        let dl1 = [
            tape.scale(rp_il1, -inv_h),
            tape.scale(zp_il1, -inv_h),
            tape.scale(rp_il1, inv_h),
            tape.scale(zp_il1, inv_h),
        ];
        let mid = (e as f64 + 0.5) * h;
        let mut rows: [Vec<TapeVar>; 4] = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        for g in 0..3 {
            let rg_ref = mid + GAUSS_XI[g] * h / 2.0;
            let wg = GAUSS_W[g] * h / 2.0;
            let n0 = (1.0 - GAUSS_XI[g]) / 2.0;
            let n1 = (1.0 + GAUSS_XI[g]) / 2.0;
            let a0 = tape.scale(q[0], n0);
            let a1 = tape.scale(q[2], n1);
            let asum = tape.add(a0, a1);
            let r_cur = tape.add_const(asum, rg_ref);
            if !(tape.value(r_cur) > 0.0) {
                return Err(Error::domain_at(
                    "membrane kinematics",
                    e,
                    "element inverted: non-positive current radius",
                ));
            }
            let l2 = tape.scale(r_cur, 1.0 / rg_ref);
            let (p1, p2) = material.record(&mut tape, mid, l1, l2)?;
            let c = rg_ref * wg;
            for a in 0..4 {
                let t = tape.mul(p1, dl1[a]);
                rows[a].push(tape.scale(t, c));
            }
            let h0 = tape.scale(p2, n0 * wg);
            let h1 = tape.scale(p2, n1 * wg);
            rows[0].push(h0);
            rows[2].push(h1);
            if p != 0.0 {
                // subtracting the follower force flips its signs
                let zr = tape.mul(zp, r_cur);
                let rr = tape.mul(rp, r_cur);
                rows[0].push(tape.scale(zr, p * n0 * wg));
                rows[2].push(tape.scale(zr, p * n1 * wg));
                rows[1].push(tape.scale(rr, -p * n0 * wg));
                rows[3].push(tape.scale(rr, -p * n1 * wg));
            }
        }
        for a in 0..4 {
            let Some(ia) = mesh.index(2 * e + a) else {
                continue;
            };
            let fa = tape.sum(&rows[a]);
            res[ia] += tape.value(fa);
            let grads = tape.backward(fa)?;
            for b in 0..4 {
                if let Some(ib) = mesh.index(2 * e + b) {
                    k[(ia, ib)] += grads.wrt(q[b]);
                }
            }
        }
    }
    Ok((res, k))
}

/// One converged state of the pressure sweep.
#[derive(Clone, Debug)]
pub struct Observation {
    pub load: f64,
    pub state: Vec<f64>,
}

/// Forward-solve the pressure sweep with the given material, warm-starting
/// each level from the previous converged state.
pub fn generate_observations(
    mesh: &MembraneMesh,
    material: &Material,
    loads: &[f64],
    cfg: &crate::predict::NewtonConfig,
) -> Result<Vec<Observation>> {
    let mut sys = crate::predict::MembraneSystem { mesh, material };
    let mut u = mesh.flat_state();
    let mut p_prev = 0.0;
    let mut out = Vec::with_capacity(loads.len());
    for &p in loads {
        let report = crate::predict::continue_from(&mut sys, u, p_prev, p, cfg)?;
        u = report.state.clone();
        p_prev = p;
        out.push(Observation {
            load: p,
            state: report.state,
        });
    }
    Ok(out)
}

/// Sum-of-squared-residual training loss over observed states. For fixed
/// states the scatter weights and follower loads are constants, so the
/// loss is a fixed sparse map applied to the surrogate's stress outputs
/// at the observed stretch pairs; no equation solve is involved.
pub fn training_loss(
    mesh: &MembraneMesh,
    observations: &[Observation],
    model: SurrogateModel,
) -> Result<DesignLoss> {
    Material::check_surrogate(&model)?;
    let mut loss = DesignLoss::new(model);
    for obs in observations {
        let f_ext = follower_force(mesh, &obs.state, obs.load)?;
        let offset: Vec<f64> = f_ext.iter().map(|v| -v).collect();
        let full = mesh.expand(&obs.state)?;
        loss.begin_observation(&offset);
        let mut scatter: [Vec<(usize, f64)>; 2] = [Vec::new(), Vec::new()];
        for pt in gauss_points(mesh, &full)? {
            scatter[0].clear();
            scatter[1].clear();
            for (idx, w) in pt.meridian_rows {
                if let Some(i) = idx {
                    scatter[0].push((i, w));
                }
            }
            for (idx, w) in pt.hoop_rows {
                if let Some(i) = idx {
                    scatter[1].push((i, w));
                }
            }
            loss.add_point(&pt.input, &scatter)?;
        }
    }
    Ok(loss)
}

/// Train a stress surrogate against a pressure sweep. When `test` is given
/// its loss is evaluated at every iterate and returned as the test trace.
pub fn train_surrogate(
    mesh: &MembraneMesh,
    observations: &[Observation],
    test: Option<&[Observation]>,
    model: SurrogateModel,
    cfg: &TrainConfig,
) -> Result<(SurrogateModel, TrainResult)> {
    let theta0 = model.parameter_vector();
    let lower = model.lower_bounds();
    let mut test_loss = match test {
        Some(obs) => Some(training_loss(mesh, obs, model.clone())?),
        None => None,
    };
    let mut loss = training_loss(mesh, observations, model)?;
    let mut monitor_fn;
    let monitor: Option<&mut dyn FnMut(&[f64]) -> f64> = match test_loss.as_mut() {
        Some(tl) => {
            monitor_fn = move |theta: &[f64]| {
                crate::calibrate::Objective::value(tl, theta).unwrap_or(f64::NAN)
            };
            Some(&mut monitor_fn)
        }
        None => None,
    };
    let result = match lower {
        Some(lb) => minimize_bounded(&mut loss, &theta0, &lb, cfg, monitor)?,
        None => minimize(&mut loss, &theta0, cfg, monitor)?,
    };
    let mut model = loss.into_model();
    model.load_parameters(&result.theta)?;
    Ok((model, result))
}
