use super::*;
use crate::calibrate::Objective;
use crate::surrogate::SymmetricTensor3;

fn unconstrained(mesh: &QuadMesh) -> DofMap {
    DofMapBuilder::new(mesh.dof_count()).finish().unwrap()
}

fn steel_like() -> SymmetricTensor3 {
    SymmetricTensor3::isotropic_plane_stress(1000.0, 0.3)
}

#[test]
fn plate_mesh_counts() {
    let mesh = QuadMesh::plate();
    assert_eq!(mesh.element_count(), 288);
    assert_eq!(mesh.node_count(), 325);
    assert_eq!(mesh.dof_count(), 650);
    let dofs = plate_dofs(&mesh).unwrap();
    assert_eq!(dofs.free_count(), 646);
    assert_eq!(mesh.gauss_count(), 1152);
}

#[test]
fn plate_supports_sit_on_the_left_edge() {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh).unwrap();
    let center = mesh.node_id(0, 6);
    assert_eq!(mesh.node_coord(center), [0.0, 0.0]);
    assert!(dofs.index(2 * center).is_none());
    assert!(dofs.index(2 * center + 1).is_none());
    for corner in [mesh.node_id(0, 0), mesh.node_id(0, 12)] {
        assert!(dofs.index(2 * corner).is_none(), "corner u_x fixed");
        assert!(dofs.index(2 * corner + 1).is_some(), "corner u_y rolls");
    }
}

#[test]
fn mesh_connectivity_is_counterclockwise() {
    let mesh = QuadMesh::new(0.0, 0.0, 3.0, 2.0, 3, 2).unwrap();
    assert_eq!(mesh.element_nodes(0), [0, 1, 5, 4]);
    assert_eq!(mesh.element_nodes(5), [6, 7, 11, 10]);
    assert_eq!(mesh.node_coord(5), [1.0, 1.0]);
    assert_eq!(mesh.element_centroid(0), [0.5, 0.5]);
}

#[test]
fn single_element_patch_test() {
    // Impose a linear displacement field on one rectangular element; the
    // strain is uniform and the consistent nodal forces have the closed form
    // F_ax = s_xx I^x_a + s_xy I^y_a with I^x_a = ±dy/2, I^y_a = ±dx/2.
    let (dx, dy) = (2.0, 1.0);
    let mesh = QuadMesh::new(0.0, 0.0, dx, dy, 1, 1).unwrap();
    let dofs = unconstrained(&mesh);
    let c = steel_like();
    let (a1, b1, a2, b2) = (0.3, -0.2, 0.11, 0.07);
    let mut u = vec![0.0; mesh.dof_count()];
    for n in 0..mesh.node_count() {
        let [x, y] = mesh.node_coord(n);
        u[2 * n] = a1 * x + b1 * y;
        u[2 * n + 1] = a2 * x + b2 * y;
    }
    let eps = [a1, b2, b1 + a2];
    for e in gauss_strains(&mesh, &dofs, &u) {
        for k in 0..3 {
            assert!((e[k] - eps[k]).abs() <= 1e-14);
        }
    }
    let sig = c.apply(&eps);
    let p = internal_force(&mesh, &dofs, &MaterialField::uniform(&mesh, c), &u).unwrap();
    let ix = [-dy / 2.0, dy / 2.0, dy / 2.0, -dy / 2.0];
    let iy = [-dx / 2.0, -dx / 2.0, dx / 2.0, dx / 2.0];
    let en = mesh.element_nodes(0);
    for a in 0..4 {
        let fx = sig[0] * ix[a] + sig[2] * iy[a];
        let fy = sig[1] * iy[a] + sig[2] * ix[a];
        assert!((p[2 * en[a]] - fx).abs() <= 1e-12, "node {a} x");
        assert!((p[2 * en[a] + 1] - fy).abs() <= 1e-12, "node {a} y");
    }
}

#[test]
fn zero_state_gives_zero_internal_force() {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh).unwrap();
    let field = MaterialField::uniform(&mesh, steel_like());
    let p = internal_force(&mesh, &dofs, &field, &vec![0.0; dofs.free_count()]).unwrap();
    assert!(p.iter().all(|&v| v == 0.0));
}

#[test]
fn stiffness_is_symmetric() {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh).unwrap();
    let c_low = steel_like();
    let c_high = SymmetricTensor3::isotropic_plane_stress(3000.0, 0.4);
    let field = MaterialField::interpolated(&mesh, FieldKind::Radial, &c_low, &c_high).unwrap();
    let k = stiffness(&mesh, &dofs, &field).unwrap();
    let mut worst: f64 = 0.0;
    for r in 0..k.nrows() {
        for cidx in (r + 1)..k.ncols() {
            worst = worst.max((k[(r, cidx)] - k[(cidx, r)]).abs());
        }
    }
    assert!(worst <= 1e-10, "max asymmetry {worst:e}");
}

#[test]
fn edge_traction_profile() {
    let mesh = QuadMesh::plate();
    let p = 20.0;
    assert!(edge_traction(&mesh, p, 10.0)[1].abs() <= 1e-14);
    assert!(edge_traction(&mesh, p, -10.0)[1].abs() <= 1e-14);
    let mid = edge_traction(&mesh, p, 0.0);
    assert!((mid[1] - 3.0 * p / 40.0).abs() <= 1e-14);
    assert!((mid[0] + 3.0 * p * 100.0 / 200.0).abs() <= 1e-12);
}

#[test]
fn external_force_resultants_are_exact() {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh).unwrap();
    let p = 20.0;
    let f = external_force(&mesh, &dofs, p);
    let full = dofs.expand(&f);
    let (mut fx, mut fy) = (0.0, 0.0);
    for n in 0..mesh.node_count() {
        fx += full[2 * n];
        fy += full[2 * n + 1];
    }
    // The shear profile is quadratic, so two Gauss points integrate it
    // exactly; the resultant is p. The axial resultant is -3pL/c.
    assert!((fy - p).abs() <= 1e-10, "fy = {fy}");
    assert!((fx + 3.0 * p * 100.0 / 10.0).abs() <= 1e-9, "fx = {fx}");
}

#[test]
fn reactions_balance_external_load() {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh).unwrap();
    let field = MaterialField::uniform(&mesh, steel_like());
    let p = 20.0;
    let k = stiffness(&mesh, &dofs, &field).unwrap();
    let f = external_force(&mesh, &dofs, p);
    let u = solve_linear(&k, &f).unwrap();

    let free_all = unconstrained(&mesh);
    let u_full = dofs.expand(&u);
    let p_full = internal_force(&mesh, &free_all, &field, &u_full).unwrap();
    let f_full = external_force(&mesh, &free_all, p);
    let (mut rx, mut ry) = (0.0, 0.0);
    for d in 0..mesh.dof_count() {
        if dofs.index(d).is_none() {
            let r = p_full[d] - f_full[d];
            if d % 2 == 0 {
                rx += r;
            } else {
                ry += r;
            }
        }
    }
    let scale = 3.0 * p * 100.0 / 10.0;
    assert!((rx - scale).abs() <= 1e-8 * scale, "rx = {rx}");
    assert!((ry + p).abs() <= 1e-8 * scale, "ry = {ry}");
}

#[test]
fn doubling_load_doubles_displacement_exactly() {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh).unwrap();
    let field = MaterialField::uniform(&mesh, steel_like());
    let obs = generate_observations(&mesh, &dofs, &field, &[20.0, 40.0]).unwrap();
    for (a, b) in obs[0].u.iter().zip(&obs[1].u) {
        assert_eq!((2.0 * a).to_bits(), b.to_bits());
    }
}

#[test]
fn observations_satisfy_balance() {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh).unwrap();
    let field = MaterialField::uniform(&mesh, steel_like());
    let obs = generate_observations(&mesh, &dofs, &field, &[20.0]).unwrap();
    let p_int = internal_force(&mesh, &dofs, &field, &obs[0].u).unwrap();
    let fnorm = obs[0].f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rnorm = p_int
        .iter()
        .zip(&obs[0].f)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!(rnorm <= 1e-9 * fnorm, "residual {rnorm:e} vs {fnorm:e}");
}

#[test]
fn recovery_loss_vanishes_at_generating_tensor() {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh).unwrap();
    let c = SymmetricTensor3::new([1000.0, 0.0, 0.0, 1000.0, 0.0, 400.0]);
    let field = MaterialField::uniform(&mesh, c);
    let obs = generate_observations(&mesh, &dofs, &field, &[20.0]).unwrap();
    let mut loss = recovery_loss(&mesh, &dofs, &obs).unwrap();
    let v = loss.value(&c.parameter_vector()).unwrap();
    assert!(v <= 1e-16, "loss at truth = {v:e}");
}

#[test]
fn recovers_diagonal_tensor_from_one_observation() {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh).unwrap();
    let truth = [1000.0, 0.0, 0.0, 1000.0, 0.0, 400.0];
    let field = MaterialField::uniform(&mesh, SymmetricTensor3::new(truth));
    let obs = generate_observations(&mesh, &dofs, &field, &[20.0]).unwrap();
    let (c, result) = recover_tensor(&mesh, &dofs, &obs, &TrainConfig::plate()).unwrap();
    let got = c.parameter_vector();
    for k in 0..6 {
        let tol = if truth[k] == 0.0 { 1e-6 } else { 1e-6 * truth[k] };
        assert!(
            (got[k] - truth[k]).abs() <= tol,
            "entry {k}: {} vs {} ({:?}, loss {:e})",
            got[k],
            truth[k],
            result.reason,
            result.loss
        );
    }
}

#[test]
fn recovery_is_invariant_to_observation_scaling() {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh).unwrap();
    let field = MaterialField::uniform(&mesh, steel_like());
    let obs = generate_observations(&mesh, &dofs, &field, &[20.0]).unwrap();
    let scaled: Vec<Observation> = obs
        .iter()
        .map(|o| Observation {
            p: o.p,
            u: o.u.iter().map(|v| 4.0 * v).collect(),
            f: o.f.iter().map(|v| 4.0 * v).collect(),
        })
        .collect();
    let (c1, _) = recover_tensor(&mesh, &dofs, &obs, &TrainConfig::plate()).unwrap();
    let (c2, _) = recover_tensor(&mesh, &dofs, &scaled, &TrainConfig::plate()).unwrap();
    for (a, b) in c1.parameter_vector().iter().zip(c2.parameter_vector()) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn principal_stress_closed_forms() {
    assert_eq!(principal_stress(&[5.0, 5.0, 0.0]), 5.0);
    assert_eq!(principal_stress(&[1.0, -1.0, 0.0]), 1.0);
    let tau = 0.7;
    assert!((principal_stress(&[0.0, 0.0, tau]) - tau).abs() <= 1e-15);
}

#[test]
fn max_principal_stress_ties_take_lowest_id() {
    let strains = vec![[1.0e-3, 0.0, 0.0]; 10];
    let c = steel_like();
    let (val, id) = max_principal_stress(&strains, |_, e| Ok(c.apply(e))).unwrap();
    assert_eq!(id, 0);
    assert!(val > 0.0);

    let mut bumped = strains.clone();
    bumped[7] = [2.0e-3, 0.0, 0.0];
    let (_, id) = max_principal_stress(&bumped, |_, e| Ok(c.apply(e))).unwrap();
    assert_eq!(id, 7);
}

#[test]
fn fiber_fraction_fields_hit_their_anchors() {
    assert!((fiber_fraction(FieldKind::LinearX, 0.0, 3.0) - VF_HIGH).abs() <= 1e-15);
    let right = fiber_fraction(FieldKind::LinearX, PLATE_LENGTH, -5.0);
    assert!((right - (VF_LOW + VF_HIGH) / 2.0).abs() <= 1e-15);
    assert!(
        (fiber_fraction(FieldKind::Radial, PLATE_LENGTH / 2.0, 0.0) - VF_HIGH).abs() <= 1e-15
    );
    for (x, y) in [(0.0, PLATE_HALF_HEIGHT), (PLATE_LENGTH, -PLATE_HALF_HEIGHT)] {
        assert!((fiber_fraction(FieldKind::Radial, x, y) - VF_LOW).abs() <= 1e-12);
    }
}

#[test]
fn interpolated_field_stays_between_endpoints() {
    let mesh = QuadMesh::plate();
    let c_low = steel_like();
    let c_high = SymmetricTensor3::isotropic_plane_stress(3000.0, 0.4);
    for kind in [FieldKind::LinearX, FieldKind::Radial] {
        let field = MaterialField::interpolated(&mesh, kind, &c_low, &c_high).unwrap();
        let lo = c_low.parameter_vector();
        let hi = c_high.parameter_vector();
        for e in 0..field.element_count() {
            let v = field.tensor(e).parameter_vector();
            for k in 0..6 {
                let (a, b) = (lo[k].min(hi[k]), lo[k].max(hi[k]));
                assert!(v[k] >= a - 1e-12 && v[k] <= b + 1e-12);
            }
        }
    }
}

#[test]
fn dof_ties_resolve_through_chains() {
    let mut b = DofMapBuilder::new(6);
    b.tie(0, 1);
    b.tie(1, 2);
    b.fix(3);
    b.tie(4, 3);
    let map = b.finish().unwrap();
    assert_eq!(map.index(0), map.index(2));
    assert!(map.index(0).is_some());
    assert!(map.index(4).is_none(), "slave of a fixed dof is fixed");
    assert_eq!(map.free_count(), 2);

    let mut cyc = DofMapBuilder::new(2);
    cyc.tie(0, 1);
    cyc.tie(1, 0);
    assert!(cyc.finish().is_err());
}

#[test]
fn uniform_cell_reproduces_isotropic_stiffness() {
    let c = steel_like();
    let phases = CellPhases {
        matrix: c,
        fiber: c,
    };
    let hom = homogenize_cell(0.25, &phases, 6).unwrap();
    let want = c.parameter_vector();
    let got = hom.parameter_vector();
    for k in 0..6 {
        let scale = want[k].abs().max(1.0);
        assert!(
            (got[k] - want[k]).abs() <= 1e-8 * scale,
            "entry {k}: {} vs {}",
            got[k],
            want[k]
        );
    }
}

#[test]
fn two_phase_cell_is_spd_orthotropic_and_bounded() {
    let phases = CellPhases::default();
    let hom = homogenize_cell(1.0 / 9.0, &phases, 9).unwrap();
    assert!(hom.is_spd(1e-10));
    let v = hom.parameter_vector();
    // Square symmetry kills the normal-shear coupling.
    assert!(v[2].abs() <= 1e-8 && v[4].abs() <= 1e-8);
    // Diagonal entries sit between the Reuss and Voigt mixture bounds.
    let m = phases.matrix.parameter_vector();
    let f = phases.fiber.parameter_vector();
    let vf = 1.0 / 9.0;
    for k in [0, 3, 5] {
        let voigt = (1.0 - vf) * m[k] + vf * f[k];
        let reuss = 1.0 / ((1.0 - vf) / m[k] + vf / f[k]);
        assert!(
            v[k] >= reuss - 1e-9 && v[k] <= voigt + 1e-9,
            "entry {k}: {} outside [{reuss}, {voigt}]",
            v[k]
        );
    }
    // x-y swap symmetry of the centered square fiber.
    assert!((v[0] - v[3]).abs() <= 1e-8 * v[0]);
}

#[test]
fn rejects_bad_inputs() {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh).unwrap();
    let field = MaterialField::uniform(&mesh, steel_like());
    assert!(internal_force(&mesh, &dofs, &field, &[0.0; 3]).is_err());
    assert!(generate_observations(&mesh, &dofs, &field, &[]).is_err());
    assert!(homogenize_cell(0.0, &CellPhases::default(), 6).is_err());
    assert!(homogenize_cell(1.5, &CellPhases::default(), 6).is_err());
    assert!(QuadMesh::new(0.0, 0.0, 0.0, 1.0, 2, 2).is_err());
}
