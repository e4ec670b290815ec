use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::calibrate::TrainConfig;
use crate::membrane::{self, AlphaProfile, Material, MembraneMesh, Observation};
use crate::plate::{self, QuadMesh, Quadrature};
use crate::surrogate::{
    Activation, FullyConnectedNet, InitScheme, PiecewiseLinear, SurrogateModel, SymmetricTensor3,
};

fn tanh_net(widths: &[usize], seed: u64) -> SurrogateModel {
    let mut m = SurrogateModel::Net(FullyConnectedNet::new(widths, Activation::Tanh).unwrap());
    m.initialize(&InitScheme::ScaledUniform { seed }).unwrap();
    m
}

fn tight() -> NewtonConfig {
    NewtonConfig { tol: 1e-12, ..NewtonConfig::default() }
}

struct PlateParts {
    mesh: QuadMesh,
    dofs: plate::DofMap,
    model: SurrogateModel,
}

fn plate_parts() -> PlateParts {
    let mesh = QuadMesh::new(0.0, -1.0, 4.0, 1.0, 4, 2).unwrap();
    let dofs = plate::plate_dofs(&mesh).unwrap();
    let model = SurrogateModel::Tensor(SymmetricTensor3::isotropic_plane_stress(1500.0, 0.3));
    PlateParts { mesh, dofs, model }
}

fn plate_qoi_at(parts: &PlateParts, params: &[f64], p: f64) -> f64 {
    let mut model = parts.model.clone();
    model.load_parameters(params).unwrap();
    let case = UqCase::Plate { mesh: &parts.mesh, dofs: &parts.dofs, model: &model };
    let u = case.solve(p, &tight()).unwrap().state;
    qoi_value(&case, &u).unwrap().0
}

/// Trained membrane surrogate shared by the heavier tests. Constant material
/// so the flat ramp is a genuine solution family and every solve is tame.
fn trained_membrane() -> &'static (MembraneMesh, SurrogateModel, Vec<Observation>) {
    static CELL: OnceLock<(MembraneMesh, SurrogateModel, Vec<Observation>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let mesh = MembraneMesh::new(8, 0.1).unwrap();
        let material = Material::MooneyRivlin(AlphaProfile::Constant(0.1));
        let loads = [0.0, 0.25, 0.5, 0.75, 1.0];
        let obs =
            membrane::generate_observations(&mesh, &material, &loads, &NewtonConfig::default())
                .unwrap();
        let cfg = TrainConfig {
            max_iters: 250,
            grad_tol: 1e-12,
            rel_obj_tol: 1e-12,
            memory: 10,
            call_budget: None,
            seed: 0,
        };
        let (model, res) =
            membrane::train_surrogate(&mesh, &obs, None, tanh_net(&[2, 10, 10, 2], 1), &cfg)
                .unwrap();
        assert!(res.loss < res.trace[0] * 1e-2, "fixture training stalled");
        (mesh, model, obs)
    })
}

#[test]
fn plate_qoi_gradient_matches_resolved_fd() {
    let parts = plate_parts();
    let case = UqCase::Plate { mesh: &parts.mesh, dofs: &parts.dofs, model: &parts.model };
    let p = 20.0;
    let u = case.solve(p, &tight()).unwrap().state;
    let qg = qoi_gradient(&case, &u, p).unwrap();
    assert!(qg.value.is_finite() && qg.value > 0.0);

    let v0 = parts.model.parameter_vector();
    let scale = qg.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    assert!(scale > 0.0);
    for k in 0..v0.len() {
        let h = 1e-5 * v0[k].abs().max(1.0);
        let mut vp = v0.clone();
        vp[k] += h;
        let mut vm = v0.clone();
        vm[k] -= h;
        let fd = (plate_qoi_at(&parts, &vp, p) - plate_qoi_at(&parts, &vm, p)) / (2.0 * h);
        assert!(
            (qg.grad[k] - fd).abs() <= 1e-5 * scale,
            "entry {k}: adjoint {} vs fd {}",
            qg.grad[k],
            fd
        );
    }
}

#[test]
fn membrane_flat_qoi_matches_direct_evaluation() {
    // power-of-two spacing and edge displacement make every gauss input
    // exactly (1.5, 1.5)
    let mesh = MembraneMesh::new(4, 0.5).unwrap();
    let model = tanh_net(&[2, 8, 2], 7);
    let case = UqCase::Membrane { mesh: &mesh, model: &model };
    let u = mesh.flat_state();
    let (j, _) = qoi_value(&case, &u).unwrap();
    let out = model.eval_vec(&[1.5, 1.5]).unwrap();
    assert_eq!(j, out[0].max(out[1]));
}

#[test]
fn qoi_tie_keeps_lowest_gauss_id() {
    let mesh = MembraneMesh::new(4, 0.5).unwrap();
    // zero-initialized lattice: identically zero outputs, every point ties
    let model =
        SurrogateModel::PiecewiseLinear(PiecewiseLinear::from_span(0.0, 7.0, 0.5, 2).unwrap());
    let case = UqCase::Membrane { mesh: &mesh, model: &model };
    let (j, id) = qoi_value(&case, &mesh.flat_state()).unwrap();
    assert_eq!(j, 0.0);
    assert_eq!(id, 0);
}

#[test]
fn direction_ignores_gradient_scale() {
    let g: Vec<f64> = vec![3.0, -1.5, 0.25, 8.0];
    let scaled: Vec<f64> = g.iter().map(|v| 7.0 * v).collect();
    let d1 = active_direction(&g).unwrap();
    let d2 = active_direction(&scaled).unwrap();
    let n: f64 = d1.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((n - 1.0).abs() < 1e-14);
    for (a, b) in d1.iter().zip(&d2) {
        assert!((a - b).abs() < 1e-14);
    }
    assert!(matches!(active_direction(&[0.0, 0.0]), Err(Error::Contract(_))));
}

#[test]
fn plate_sensitivity_column_matches_perturbed_resolve() {
    let parts = plate_parts();
    let case = UqCase::Plate { mesh: &parts.mesh, dofs: &parts.dofs, model: &parts.model };
    let p = 20.0;
    let u = case.solve(p, &tight()).unwrap().state;
    let w = active_direction(&qoi_gradient(&case, &u, p).unwrap().grad).unwrap();
    let s = state_sensitivity(&case, &u, p, &w).unwrap();
    assert_eq!(s.nrows(), parts.dofs.free_count());
    assert_eq!(s.ncols(), parts.mesh.gauss_count());

    let field = plate::MaterialField::from_model(&parts.mesh, &parts.model).unwrap();
    let k0 = plate::stiffness(&parts.mesh, &parts.dofs, &field).unwrap();
    let f = DVector::from_vec(plate::external_force(&parts.mesh, &parts.dofs, p));
    let quad = Quadrature::for_mesh(&parts.mesh);

    let eps = 1.0;
    let v0 = parts.model.parameter_vector();
    let perturbed = |sign: f64| {
        let mut m = parts.model.clone();
        let v: Vec<f64> = v0.iter().zip(&w).map(|(a, b)| a + sign * eps * b).collect();
        m.load_parameters(&v).unwrap();
        m
    };
    let mp = perturbed(1.0);
    let mm = perturbed(-1.0);
    // constitutive shift as a 3x3 action, recovered column by column
    let dc = |m: &SurrogateModel| {
        let mut d = [[0.0f64; 3]; 3];
        for col in 0..3 {
            let mut e = [0.0; 3];
            e[col] = 1.0;
            let a = m.eval_vec(&e).unwrap();
            let b = parts.model.eval_vec(&e).unwrap();
            for row in 0..3 {
                d[row][col] = a[row] - b[row];
            }
        }
        d
    };
    let dcp = dc(&mp);
    let dcm = dc(&mm);

    for gauss in [0usize, 13, parts.mesh.gauss_count() - 1] {
        let e = gauss / 4;
        let g = gauss % 4;
        let ed = parts.mesh.element_dofs(e);
        let b = quad.b_rows(g);
        let resolve = |d: &[[f64; 3]; 3]| {
            let mut k = k0.clone();
            for a in 0..8 {
                let Some(ia) = parts.dofs.index(ed[a]) else { continue };
                for bcol in 0..8 {
                    let Some(ib) = parts.dofs.index(ed[bcol]) else { continue };
                    let mut kab = 0.0;
                    for r in 0..3 {
                        for c in 0..3 {
                            kab += b[r][a] * d[r][c] * b[c][bcol];
                        }
                    }
                    k[(ia, ib)] += kab * quad.weight;
                }
            }
            k.lu().solve(&f).unwrap()
        };
        let up = resolve(&dcp);
        let um = resolve(&dcm);
        let col = s.column(gauss);
        let mut err = 0.0f64;
        let mut norm = 0.0f64;
        for j in 0..col.len() {
            let fd = (up[j] - um[j]) / (2.0 * eps);
            err += (col[j] - fd) * (col[j] - fd);
            norm += fd * fd;
        }
        assert!(norm > 0.0, "gauss {gauss} produced a zero sensitivity column");
        assert!(
            err.sqrt() <= 1e-4 * norm.sqrt(),
            "gauss {gauss}: column error {} vs {}",
            err.sqrt(),
            norm.sqrt()
        );
    }
}

#[test]
fn plate_sensitivity_scales_linearly_with_load() {
    let parts = plate_parts();
    let case = UqCase::Plate { mesh: &parts.mesh, dofs: &parts.dofs, model: &parts.model };
    let u20 = case.solve(20.0, &tight()).unwrap().state;
    let u40 = case.solve(40.0, &tight()).unwrap().state;
    let w = active_direction(&qoi_gradient(&case, &u20, 20.0).unwrap().grad).unwrap();
    let s20 = state_sensitivity(&case, &u20, 20.0, &w).unwrap();
    let s40 = state_sensitivity(&case, &u40, 40.0, &w).unwrap();
    let diff = (&s40 - &s20 * 2.0).norm();
    assert!(diff <= 1e-10 * s40.norm(), "departure from linear scaling: {diff:e}");
}

#[test]
fn zero_direction_gives_zero_sensitivity() {
    let parts = plate_parts();
    let case = UqCase::Plate { mesh: &parts.mesh, dofs: &parts.dofs, model: &parts.model };
    let u = case.solve(20.0, &tight()).unwrap().state;
    let s = state_sensitivity(&case, &u, 20.0, &vec![0.0; 6]).unwrap();
    assert_eq!(s.norm(), 0.0);
}

#[test]
fn membrane_gradient_matches_resolved_fd() {
    let (mesh, model, _) = trained_membrane();
    let case = UqCase::Membrane { mesh, model };
    let p = 0.5;
    let u = case.solve(p, &tight()).unwrap().state;
    let qg = qoi_gradient(&case, &u, p).unwrap();
    let scale = qg.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    assert!(scale > 0.0);

    let v0 = model.parameter_vector();
    let mut checked = 0;
    for k in (0..v0.len()).step_by(31) {
        let h = 1e-4;
        let j_at = |vk: f64| {
            let mut m = model.clone();
            let mut v = v0.clone();
            v[k] = vk;
            m.load_parameters(&v).unwrap();
            let c = UqCase::Membrane { mesh, model: &m };
            let u = c.solve(p, &tight()).unwrap().state;
            qoi_value(&c, &u).unwrap().0
        };
        let fd = (j_at(v0[k] + h) - j_at(v0[k] - h)) / (2.0 * h);
        assert!(
            (qg.grad[k] - fd).abs() <= 1e-4 * scale,
            "parameter {k}: adjoint {} vs fd {}",
            qg.grad[k],
            fd
        );
        checked += 1;
    }
    assert!(checked >= 5);
}

#[test]
fn membrane_sensitivity_matches_global_resolve() {
    let (mesh, model, _) = trained_membrane();
    let case = UqCase::Membrane { mesh, model };
    let p = 0.5;
    let u = case.solve(p, &tight()).unwrap().state;
    let w = active_direction(&qoi_gradient(&case, &u, p).unwrap().grad).unwrap();
    let s = state_sensitivity(&case, &u, p, &w).unwrap();

    // moving every gauss point together along w is a global parameter shift
    let predicted = &s * DVector::from_element(s.ncols(), 1.0);

    let eps = 1e-3;
    let v0 = model.parameter_vector();
    let solve_shift = |sign: f64| {
        let mut m = model.clone();
        let v: Vec<f64> = v0.iter().zip(&w).map(|(a, b)| a + sign * eps * b).collect();
        m.load_parameters(&v).unwrap();
        let c = UqCase::Membrane { mesh, model: &m };
        c.solve(p, &tight()).unwrap().state
    };
    let up = solve_shift(1.0);
    let um = solve_shift(-1.0);

    let mut err = 0.0f64;
    let mut norm = 0.0f64;
    for j in 0..predicted.len() {
        let fd = (up[j] - um[j]) / (2.0 * eps);
        err += (predicted[j] - fd) * (predicted[j] - fd);
        norm += fd * fd;
    }
    assert!(norm > 0.0);
    assert!(
        err.sqrt() <= 1e-4 * norm.sqrt(),
        "row-sum error {} vs {}",
        err.sqrt(),
        norm.sqrt()
    );
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

#[test]
fn variance_zero_residual_is_zero() {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let s = random_matrix(12, 9, &mut rng);
    let vc = VarianceCase { delta: vec![0.0; 12], sensitivity: s };
    assert_eq!(estimate_variance(&[vc]).unwrap(), 0.0);
}

#[test]
fn variance_rejects_pure_zero_sensitivity() {
    let vc = VarianceCase { delta: vec![1.0; 5], sensitivity: DMatrix::zeros(5, 4) };
    assert!(matches!(estimate_variance(&[vc]), Err(Error::NoInformation)));
    assert!(matches!(estimate_variance(&[]), Err(Error::Contract(_))));
}

#[test]
fn variance_ignores_case_ordering() {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let make = |rng: &mut ChaCha12Rng| {
        let s = random_matrix(10, 6, rng);
        let delta: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        (s, delta)
    };
    let (s1, d1) = make(&mut rng);
    let (s2, d2) = make(&mut rng);
    let fwd = estimate_variance(&[
        VarianceCase { delta: d1.clone(), sensitivity: s1.clone() },
        VarianceCase { delta: d2.clone(), sensitivity: s2.clone() },
    ])
    .unwrap();
    let rev = estimate_variance(&[
        VarianceCase { delta: d2, sensitivity: s2 },
        VarianceCase { delta: d1, sensitivity: s1 },
    ])
    .unwrap();
    assert!((fwd - rev).abs() <= 1e-12 * fwd.abs());
}

#[test]
fn variance_recovers_synthetic_truth() {
    let truth = 4.0f64;
    let n = 40;
    let g = 30;
    let cases_n = 60;
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let normal = Normal::new(0.0, truth.sqrt()).unwrap();
    let mut cases = Vec::new();
    let mut per_case = Vec::new();
    for _ in 0..cases_n {
        let s = random_matrix(n, g, &mut rng);
        let lam = DVector::from_fn(g, |_, _| normal.sample(&mut rng));
        let delta = (&s * &lam).iter().copied().collect::<Vec<_>>();
        let vc = VarianceCase { delta: delta.clone(), sensitivity: s.clone() };
        per_case.push(estimate_variance(std::slice::from_ref(&vc)).unwrap());
        cases.push(vc);
    }
    let pooled = estimate_variance(&cases).unwrap();
    let mean = per_case.iter().sum::<f64>() / cases_n as f64;
    let var = per_case.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>()
        / (cases_n as f64 - 1.0);
    let se = (var / cases_n as f64).sqrt();
    assert!(
        (pooled - truth).abs() <= 3.0 * se,
        "estimate {pooled} vs truth {truth}, se {se}"
    );
}

#[test]
fn noisy_variance_with_zero_noise_matches_plain() {
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let s = random_matrix(15, 8, &mut rng);
    let delta: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let plain = estimate_variance(&[VarianceCase {
        delta: delta.clone(),
        sensitivity: s.clone(),
    }])
    .unwrap();
    let noisy = estimate_variance_noisy(
        &[VarianceCase { delta, sensitivity: s }],
        &[vec![0.0; 15]],
    )
    .unwrap();
    assert_eq!(plain, noisy);
}

#[test]
fn noisy_variance_grows_with_noise_and_rejects_bad_input() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let s = random_matrix(15, 8, &mut rng);
    let delta: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let case = || VarianceCase { delta: delta.clone(), sensitivity: s.clone() };
    let plain = estimate_variance(&[case()]).unwrap();
    let bumped = estimate_variance_noisy(&[case()], &[vec![0.5; 15]]).unwrap();
    assert!(bumped > plain);

    assert!(matches!(
        estimate_variance_noisy(&[case()], &[vec![-1.0; 15]]),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        estimate_variance_noisy(&[case()], &[vec![0.0; 3]]),
        Err(Error::Contract(_))
    ));
    assert!(matches!(estimate_variance_noisy(&[case()], &[]), Err(Error::Contract(_))));
}

#[test]
fn noisy_variance_recovers_truth_with_matched_noise() {
    let truth = 4.0f64;
    let n = 40;
    let g = 30;
    let cases_n = 60;
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let lam_dist = Normal::new(0.0, truth.sqrt()).unwrap();
    let mut cases = Vec::new();
    let mut noise = Vec::new();
    for _ in 0..cases_n {
        let s = random_matrix(n, g, &mut rng);
        let lam = DVector::from_fn(g, |_, _| lam_dist.sample(&mut rng));
        let clean = &s * &lam;
        // per-dof measurement variance pinned at 5% of the model-error level
        let mut e2 = vec![0.0; n];
        let mut delta = vec![0.0; n];
        for j in 0..n {
            let c: f64 = s.row(j).iter().map(|v| v * v).sum();
            e2[j] = 0.05 * truth * c;
            let e = Normal::new(0.0, e2[j].sqrt()).unwrap().sample(&mut rng);
            delta[j] = clean[j] - e;
        }
        cases.push(VarianceCase { delta, sensitivity: s });
        noise.push(e2);
    }
    let est = estimate_variance_noisy(&cases, &noise).unwrap();
    assert!(
        (est - truth).abs() <= 0.2 * truth,
        "estimate {est} strays more than 20% from {truth}"
    );
}

#[test]
fn quantile_matches_nearest_rank_oracle() {
    let sorted: Vec<f64> = (1..=100).map(|i| i as f64).collect();
    assert_eq!(empirical_quantile(&sorted, 0.05), 5.0);
    assert_eq!(empirical_quantile(&sorted, 0.95), 95.0);
    assert_eq!(empirical_quantile(&sorted, 1.0), 100.0);
    assert_eq!(empirical_quantile(&sorted, 1e-9), 1.0);
    assert_eq!(empirical_quantile(&[7.0], 0.05), 7.0);
    assert_eq!(empirical_quantile(&[7.0], 0.95), 7.0);
}

#[test]
fn quantiles_widen_under_symmetric_extremes() {
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = rng.gen_range(5..120);
        let mut xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        xs.sort_by(|a, b| a.total_cmp(b));
        let lo = empirical_quantile(&xs, 0.05);
        let hi = empirical_quantile(&xs, 0.95);
        let spread = rng.gen_range(0.1..5.0);
        let mut aug = xs.clone();
        aug.push(xs[0] - spread);
        aug.push(xs[n - 1] + spread);
        aug.sort_by(|a, b| a.total_cmp(b));
        assert!(empirical_quantile(&aug, 0.05) <= lo);
        assert!(empirical_quantile(&aug, 0.95) >= hi);
    }
}

#[test]
fn mirrored_draws_mirror_the_perturbation() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let s = random_matrix(10, 6, &mut rng);
    let lam = DVector::from_fn(6, |_, _| rng.gen_range(-2.0..2.0));
    let plus = &s * &lam;
    let minus = &s * &(-&lam);
    for j in 0..plus.len() {
        assert_eq!(minus[j], -plus[j]);
    }
}

#[test]
fn bands_collapse_at_zero_variance() {
    let (mesh, model, _) = trained_membrane();
    let case = UqCase::Membrane { mesh, model };
    let report = confidence_bands(&case, 0.5, 0.0, 40, 11, &NewtonConfig::default()).unwrap();
    assert_eq!(report.q05, report.prediction);
    assert_eq!(report.q95, report.prediction);
    assert_eq!(report.samples, 40);
    assert_eq!(report.seed, 11);
}

#[test]
fn bands_are_deterministic_and_ordered() {
    let (mesh, model, _) = trained_membrane();
    let case = UqCase::Membrane { mesh, model };
    let cfg = NewtonConfig::default();
    let a = confidence_bands(&case, 0.5, 1e-6, 200, 21, &cfg).unwrap();
    let b = confidence_bands(&case, 0.5, 1e-6, 200, 21, &cfg).unwrap();
    assert_eq!(a.q05, b.q05);
    assert_eq!(a.q95, b.q95);
    for j in 0..a.q05.len() {
        assert!(a.q05[j] <= a.q95[j]);
    }
    let c = confidence_bands(&case, 0.5, 1e-6, 200, 22, &cfg).unwrap();
    assert!(a.q05 != c.q05 || a.q95 != c.q95, "different seeds drew identical bands");
}

#[test]
fn band_width_scales_with_sqrt_variance() {
    let (mesh, model, _) = trained_membrane();
    let case = UqCase::Membrane { mesh, model };
    let cfg = NewtonConfig::default();
    let base = confidence_bands(&case, 0.5, 1e-6, 200, 31, &cfg).unwrap();
    let quad = confidence_bands(&case, 0.5, 4e-6, 200, 31, &cfg).unwrap();
    let mut any = false;
    for j in 0..base.q05.len() {
        let w1 = base.q95[j] - base.q05[j];
        let w2 = quad.q95[j] - quad.q05[j];
        if w1 <= 1e-12 {
            continue;
        }
        any = true;
        assert!(
            (w2 / w1 - 2.0).abs() <= 0.05 * 2.0,
            "dof {j}: width ratio {}",
            w2 / w1
        );
    }
    assert!(any, "all bands degenerate");
}

#[test]
fn bands_reject_bad_inputs() {
    let (mesh, model, _) = trained_membrane();
    let case = UqCase::Membrane { mesh, model };
    let cfg = NewtonConfig::default();
    assert!(matches!(
        confidence_bands(&case, 0.5, -1.0, 10, 0, &cfg),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        confidence_bands(&case, 0.5, f64::NAN, 10, 0, &cfg),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        confidence_bands(&case, 0.5, 1.0, 0, 0, &cfg),
        Err(Error::Contract(_))
    ));
}

#[test]
fn calibration_variance_vanishes_on_exact_observations() {
    let parts = plate_parts();
    let case = UqCase::Plate { mesh: &parts.mesh, dofs: &parts.dofs, model: &parts.model };
    let cfg = NewtonConfig::default();
    let data: Vec<LoadCase> = [10.0, 20.0]
        .iter()
        .map(|&p| LoadCase { load: p, observed: case.solve(p, &cfg).unwrap().state })
        .collect();
    assert_eq!(calibration_variance(&case, &data, &cfg).unwrap(), 0.0);

    let mut shifted = data;
    for lc in &mut shifted {
        for v in &mut lc.observed {
            *v += 1e-3;
        }
    }
    assert!(calibration_variance(&case, &shifted, &cfg).unwrap() > 0.0);

    let bad = [LoadCase { load: 10.0, observed: vec![0.0; 3] }];
    assert!(matches!(
        calibration_variance(&case, &bad, &cfg),
        Err(Error::Contract(_))
    ));
}

#[test]
fn membrane_variance_case_consistency() {
    let (mesh, model, obs) = trained_membrane();
    let case = UqCase::Membrane { mesh, model };
    let cfg = NewtonConfig::default();
    let data: Vec<LoadCase> = obs
        .iter()
        .filter(|o| o.load > 0.0)
        .map(|o| LoadCase { load: o.load, observed: o.state.clone() })
        .collect();
    assert!(data.len() >= 4);
    let sigma = calibration_variance(&case, &data, &cfg).unwrap();
    assert!(sigma.is_finite() && sigma >= 0.0);
    // the surrogate misfits the generating material, so some variance shows
    assert!(sigma > 0.0);
}
