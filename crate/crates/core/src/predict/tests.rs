use super::*;
use crate::membrane::{residual, AlphaProfile, Material, MembraneMesh};
use crate::plate::FieldKind;
use crate::surrogate::SymmetricTensor3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn plate_parts() -> (QuadMesh, DofMap, MaterialField) {
    let mesh = QuadMesh::plate();
    let dofs = crate::plate::plate_dofs(&mesh).unwrap();
    let c_low = SymmetricTensor3::isotropic_plane_stress(1400.0, 0.33);
    let c_high = SymmetricTensor3::isotropic_plane_stress(1700.0, 0.31);
    let field = MaterialField::interpolated(&mesh, FieldKind::LinearX, &c_low, &c_high).unwrap();
    (mesh, dofs, field)
}

#[test]
fn config_validation_rejects_bad_values() {
    let mut cfg = NewtonConfig::default();
    assert_eq!(cfg.tol, 1e-9);
    assert_eq!(cfg.max_iters, 50);
    cfg.tol = 0.0;
    let mesh = MembraneMesh::standard();
    let mat = Material::MooneyRivlin(AlphaProfile::Constant(0.1));
    let mut sys = MembraneSystem {
        mesh: &mesh,
        material: &mat,
    };
    assert!(solve(&mut sys, 1.0, &cfg).is_err());
}

#[test]
fn plate_solve_reproduces_generated_observation() {
    let (mesh, dofs, field) = plate_parts();
    let obs = crate::plate::generate_observations(&mesh, &dofs, &field, &[20.0]).unwrap();
    let mut sys = PlateSystem::new(&mesh, &dofs, &field).unwrap();
    let rep = solve(&mut sys, 20.0, &NewtonConfig::default()).unwrap();
    let num: f64 = rep
        .state
        .iter()
        .zip(&obs[0].u)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = obs[0].u.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(num <= 1e-8 * den, "rel err {}", num / den);
}

#[test]
fn plate_load_path_independence() {
    let (mesh, dofs, field) = plate_parts();
    let mut sys = PlateSystem::new(&mesh, &dofs, &field).unwrap();
    let one = NewtonConfig {
        load_steps: 1,
        ..NewtonConfig::default()
    };
    let ten = NewtonConfig {
        load_steps: 10,
        ..NewtonConfig::default()
    };
    let a = solve(&mut sys, 50.0, &one).unwrap().state;
    let b = solve(&mut sys, 50.0, &ten).unwrap().state;
    let scale: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    assert!(diff <= 1e-12 * scale, "path dependence {}", diff / scale);
}

#[test]
fn plate_system_is_linear_in_load() {
    let (mesh, dofs, field) = plate_parts();
    let mut sys = PlateSystem::new(&mesh, &dofs, &field).unwrap();
    assert!(sys.linear());
    let cfg = NewtonConfig::default();
    let a = solve(&mut sys, 25.0, &cfg).unwrap().state;
    let b = solve(&mut sys, 50.0, &cfg).unwrap().state;
    for (x, y) in a.iter().zip(&b) {
        assert!((2.0 * x - y).abs() <= 1e-10 * y.abs().max(1e-12));
    }
}

#[test]
fn membrane_zero_pressure_stays_flat() {
    let mesh = MembraneMesh::standard();
    let mat = Material::MooneyRivlin(AlphaProfile::Constant(0.1));
    let mut sys = MembraneSystem {
        mesh: &mesh,
        material: &mat,
    };
    let rep = solve(&mut sys, 0.0, &NewtonConfig::default()).unwrap();
    let flat = mesh.flat_state();
    for (a, b) in rep.state.iter().zip(&flat) {
        assert!((a - b).abs() < 1e-12);
    }
    // transverse components stay zero
    let full = mesh.expand(&rep.state).unwrap();
    for i in 0..mesh.node_count() {
        assert!(full[2 * i + 1].abs() < 1e-12);
    }
}

#[test]
fn membrane_converges_with_quadratic_tail() {
    let mesh = MembraneMesh::standard();
    let mat = Material::MooneyRivlin(AlphaProfile::Constant(0.1));
    let mut sys = MembraneSystem {
        mesh: &mesh,
        material: &mat,
    };
    let cfg = NewtonConfig::default();
    let rep = solve(&mut sys, 1.0, &cfg).unwrap();
    let r = residual(&mesh, &mat, &rep.state, 1.0).unwrap();
    let rnorm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(rnorm <= cfg.tol * rep.force_norm);
    // once inside the quadratic window, each iteration at least halves
    let window = 1e-3 * rep.force_norm;
    let hist = &rep.final_residuals;
    for w in hist.windows(2) {
        if w[0] < window {
            assert!(w[1] <= 0.5 * w[0], "slow contraction: {} -> {}", w[0], w[1]);
        }
    }
}

fn apex_deflection(mesh: &MembraneMesh, state: &[f64]) -> f64 {
    // transverse dof of the pole node is the first free dof
    state[mesh.index(1).unwrap()]
}

#[test]
fn membrane_apex_deflection_grows_with_pressure() {
    let mesh = MembraneMesh::standard();
    let mat = Material::MooneyRivlin(AlphaProfile::Constant(0.1));
    let mut sys = MembraneSystem {
        mesh: &mesh,
        material: &mat,
    };
    let cfg = NewtonConfig::default();
    let mut last = 0.0;
    for p in [0.5, 1.0, 2.0, 4.0, 8.0] {
        let rep = solve(&mut sys, p, &cfg).unwrap();
        let apex = apex_deflection(&mesh, &rep.state);
        assert!(apex > last, "apex {apex} at p {p} not above {last}");
        last = apex;
    }
}

#[test]
fn membrane_tangent_nonsingular_at_flat_prestretch() {
    let mesh = MembraneMesh::standard();
    let mat = Material::MooneyRivlin(AlphaProfile::Constant(0.1));
    let (_, k) = crate::membrane::tangent(&mesh, &mat, &mesh.flat_state(), 0.0).unwrap();
    let rhs = vec![1.0; mesh.free_count()];
    assert!(solve_lu(k, &rhs).is_ok());
}

#[test]
fn space_varying_alpha_deforms_at_zero_pressure() {
    let mesh = MembraneMesh::standard();
    let mat = Material::MooneyRivlin(AlphaProfile::Tabulated);
    let mut sys = MembraneSystem {
        mesh: &mesh,
        material: &mat,
    };
    let rep = solve(&mut sys, 0.0, &NewtonConfig::default()).unwrap();
    let flat = mesh.flat_state();
    let moved: f64 = rep
        .state
        .iter()
        .zip(&flat)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(moved > 1e-6, "state should adjust to the varying material");
    let r = residual(&mesh, &mat, &rep.state, 0.0).unwrap();
    let rnorm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(rnorm <= 1e-12);
}

#[test]
fn tangent_directional_derivative_matches_fd_at_converged_state() {
    let mesh = MembraneMesh::standard();
    let mat = Material::MooneyRivlin(AlphaProfile::Constant(0.1));
    let mut sys = MembraneSystem {
        mesh: &mesh,
        material: &mat,
    };
    let rep = solve(&mut sys, 2.0, &NewtonConfig::default()).unwrap();
    let u = rep.state;
    let (_, k) = sys.tangent(&u, 2.0).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    let eps = 1e-6;
    for _ in 0..10 {
        let v: Vec<f64> = (0..u.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let up: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
        let um: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - eps * b).collect();
        let rp = sys.residual(&up, 2.0).unwrap();
        let rm = sys.residual(&um, 2.0).unwrap();
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..u.len() {
            let fd = (rp[i] - rm[i]) / (2.0 * eps);
            let kv: f64 = (0..u.len()).map(|j| k[(i, j)] * v[j]).sum();
            err = err.max((fd - kv).abs());
            scale = scale.max(kv.abs());
        }
        assert!(err <= 1e-5 * scale, "err {err} vs scale {scale}");
    }
}

#[test]
fn observations_satisfy_balance_at_every_load() {
    let mesh = MembraneMesh::standard();
    let mat = Material::MooneyRivlin(AlphaProfile::Constant(0.1));
    let cfg = NewtonConfig::default();
    let loads = [0.0, 0.5, 1.0, 2.2];
    let obs = crate::membrane::generate_observations(&mesh, &mat, &loads, &cfg).unwrap();
    assert_eq!(obs.len(), loads.len());
    for o in &obs {
        assert_eq!(o.state.len(), mesh.free_count());
        let r = residual(&mesh, &mat, &o.state, o.load).unwrap();
        let rnorm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let f = crate::membrane::follower_force(&mesh, &o.state, o.load).unwrap();
        let fnorm: f64 = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rnorm <= cfg.tol * fnorm.max(1e-4), "load {}", o.load);
    }
}

#[test]
fn newton_failure_reports_last_residual() {
    let mesh = MembraneMesh::standard();
    let mat = Material::MooneyRivlin(AlphaProfile::Constant(0.1));
    let mut sys = MembraneSystem {
        mesh: &mesh,
        material: &mat,
    };
    let cfg = NewtonConfig {
        max_iters: 1,
        load_steps: 1,
        min_step: 0.6,
        ..NewtonConfig::default()
    };
    match solve(&mut sys, 8.0, &cfg) {
        Err(Error::NoConvergence {
            residual,
            load,
            iterations,
        }) => {
            assert!(residual.is_finite());
            assert!(load > 0.0);
            assert_eq!(iterations, 1);
        }
        other => panic!("expected NoConvergence, got {other:?}"),
    }
}
