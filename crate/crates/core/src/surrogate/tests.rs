use super::*;
use crate::ad::{central_diff, Tape};
use approx::assert_relative_eq;
use proptest::prelude::*;

fn gaussian(mean: f64, std: f64, seed: u64) -> InitScheme {
    InitScheme::Gaussian { mean, std, seed }
}

/// One small, fully generic instance per family, parameters away from zero so
/// every gradient path is exercised.
fn all_families() -> Vec<SurrogateModel> {
    let mut net =
        SurrogateModel::Net(FullyConnectedNet::new(&[2, 4, 3, 2], Activation::Tanh).unwrap());
    net.initialize(&gaussian(0.1, 0.6, 11)).unwrap();

    let mut pl =
        SurrogateModel::PiecewiseLinear(PiecewiseLinear::with_nodes(0.0, 0.5, 5, 2).unwrap());
    pl.initialize(&gaussian(0.3, 0.8, 12)).unwrap();

    let mut rbf =
        SurrogateModel::RadialBasis(RadialBasis::from_span(0.0, 3.0, 1.0, 0.8, 2).unwrap());
    rbf.initialize(&gaussian(-0.2, 0.5, 13)).unwrap();

    let mut rbfn = SurrogateModel::RadialBasisNet(RadialBasisNet::new(3, 2).unwrap());
    // Explicit parameters keep every shape comfortably positive so finite
    // differencing never crosses the sigma >= 0 clamp.
    let mut p = Vec::new();
    for k in 0..2 {
        let s = k as f64;
        p.extend_from_slice(&[0.7 + s, -0.4, 1.1]); // w
        p.extend_from_slice(&[0.9, 1.3 + 0.2 * s, 0.5]); // sigma
        p.extend_from_slice(&[0.1, 0.2, 1.4, 0.8, 0.6, 1.9]); // centers
    }
    rbfn.load_parameters(&p).unwrap();

    let tensor = SurrogateModel::Tensor(SymmetricTensor3::new([2.0, 0.7, -0.3, 1.6, 0.2, 1.1]));

    vec![net, pl, rbf, rbfn, tensor]
}

/// An in-domain probe point per family (tensor takes a 3-component strain).
fn probe(model: &SurrogateModel) -> Vec<f64> {
    if model.input_dim() == 3 {
        vec![0.4, -0.7, 0.9]
    } else {
        vec![0.7, 1.1]
    }
}

#[test]
fn zero_net_outputs_zero() {
    let net = SurrogateModel::Net(FullyConnectedNet::new(&[2, 5, 2], Activation::Tanh).unwrap());
    let out = net.eval_vec(&[3.0, -4.0]).unwrap();
    assert_eq!(out, vec![0.0, 0.0]);
}

#[test]
fn single_transition_net_is_linear_map() {
    // One transition means no bias and no activation: y = W x.
    let mut net = SurrogateModel::Net(FullyConnectedNet::new(&[2, 2], Activation::Relu).unwrap());
    net.load_parameters(&[1.0, 0.0, 0.0, 1.0]).unwrap();
    let out = net.eval_vec(&[-2.5, 3.5]).unwrap();
    assert_eq!(out, vec![-2.5, 3.5]);
    let jac = net.input_gradient(&[-2.5, 3.5]).unwrap();
    assert_eq!(jac, vec![1.0, 0.0, 0.0, 1.0]);
}

#[test]
fn parameter_counts_match_architecture_tables() {
    let net = FullyConnectedNet::new(&[2, 20, 20, 2], Activation::Tanh).unwrap();
    assert_eq!(net.parameter_count(), 520);

    let coarse = PiecewiseLinear::from_span(0.0, 20.0, 2.0, 2).unwrap();
    assert_eq!(coarse.nodes_per_output(), 100);
    assert_eq!(coarse.parameter_count(), 200);

    let fine = PiecewiseLinear::from_span(0.0, 20.0, 0.4, 2).unwrap();
    assert_eq!(fine.nodes_per_output(), 2500);
    assert_eq!(fine.parameter_count(), 5000);

    let rbf = RadialBasis::from_span(0.0, 20.0, 1.0, 2.0, 2).unwrap();
    assert_eq!(rbf.center_count(), 400);

    let rbf_fine = RadialBasis::from_span(0.0, 20.0, 0.1, 0.2, 2).unwrap();
    assert_eq!(rbf_fine.center_count(), 40_000);

    let rbfn = SurrogateModel::RadialBasisNet(RadialBasisNet::new(2500, 1).unwrap());
    assert_eq!(rbfn.table_dof(), 10_000);
    assert_eq!(rbfn.parameter_count(), 10_000);
}

#[test]
fn pl_reproduces_node_values_exactly() {
    let mut m = PiecewiseLinear::with_nodes(0.0, 0.5, 4, 1).unwrap();
    for iy in 0..4 {
        for ix in 0..4 {
            *m.node_value_mut(0, ix, iy) = (ix * 10 + iy) as f64;
        }
    }
    let m = SurrogateModel::PiecewiseLinear(m);
    for iy in 0..4 {
        for ix in 0..4 {
            let x = [0.5 * ix as f64, 0.5 * iy as f64];
            assert_eq!(m.eval_vec(&x).unwrap()[0], (ix * 10 + iy) as f64);
        }
    }
}

#[test]
fn pl_reproduces_affine_functions() {
    let (a, b, c) = (0.75, -1.25, 2.5);
    let mut m = PiecewiseLinear::with_nodes(0.0, 1.0, 3, 1).unwrap();
    for iy in 0..3 {
        for ix in 0..3 {
            *m.node_value_mut(0, ix, iy) = a + b * ix as f64 + c * iy as f64;
        }
    }
    let m = SurrogateModel::PiecewiseLinear(m);
    for &(x, y) in &[(0.5, 0.5), (1.25, 0.75), (0.1, 1.9), (2.0, 2.0), (1.0, 0.0)] {
        let v = m.eval_vec(&[x, y]).unwrap()[0];
        assert_relative_eq!(v, a + b * x + c * y, max_relative = 1e-14, epsilon = 1e-14);
        let jac = m.input_gradient(&[x, y]).unwrap();
        assert_relative_eq!(jac[0], b, max_relative = 1e-14);
        assert_relative_eq!(jac[1], c, max_relative = 1e-14);
    }
}

#[test]
fn pl_rejects_query_outside_grid() {
    let m = SurrogateModel::PiecewiseLinear(PiecewiseLinear::with_nodes(0.0, 1.0, 3, 1).unwrap());
    let err = m.eval_vec(&[2.5, 0.5]).unwrap_err();
    assert!(matches!(err, Error::Domain { .. }), "got {err}");
    assert!(m.eval_vec(&[2.0, 0.0]).is_ok());
}

#[test]
fn pl_span_and_grid_accessors() {
    let m = PiecewiseLinear::from_span(0.0, 20.0, 2.0, 1).unwrap();
    assert_eq!(m.grid(), (0.0, 2.0, 10));
    assert_eq!(m.span(), (0.0, 18.0));
    assert_eq!(m.node_coord(9), 18.0);
}

#[test]
fn rbf_affine_tail_alone() {
    let mut m =
        SurrogateModel::RadialBasis(RadialBasis::with_centers(vec![[0.0, 0.0]], 1.0, 1).unwrap());
    // w = 0, a = 1, bx = by = 0: constant one everywhere.
    m.load_parameters(&[0.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(m.eval_vec(&[5.0, -3.0]).unwrap()[0], 1.0);
    assert_eq!(m.eval_vec(&[0.0, 0.0]).unwrap()[0], 1.0);
}

#[test]
fn rbf_single_kernel_values_and_slope() {
    let mut m =
        SurrogateModel::RadialBasis(RadialBasis::with_centers(vec![[0.0, 0.0]], 1.0, 1).unwrap());
    m.load_parameters(&[1.0, 0.0, 0.0, 0.0]).unwrap();
    // Inverse multiquadric: g(r) = 1/sqrt(r^2 + sigma^2).
    assert_eq!(m.eval_vec(&[0.0, 0.0]).unwrap()[0], 1.0);
    assert_relative_eq!(
        m.eval_vec(&[1.0, 0.0]).unwrap()[0],
        std::f64::consts::FRAC_1_SQRT_2,
        max_relative = 1e-15
    );
    let jac = m.input_gradient(&[1.0, 0.0]).unwrap();
    // d/dx 1/sqrt(x^2+1) at 1 = -2^(-3/2)
    assert_relative_eq!(jac[0], -0.3535533905932738, max_relative = 1e-14);
    assert_relative_eq!(jac[1], 0.0, epsilon = 1e-16);
}

#[test]
fn rbf_center_permutation_is_no_op() {
    let mut m = RadialBasis::from_span(0.0, 2.0, 1.0, 0.7, 2).unwrap();
    let mut base = SurrogateModel::RadialBasis(m.clone());
    base.initialize(&gaussian(0.0, 1.0, 21)).unwrap();
    let theta = base.parameter_vector();

    // Reverse the centers and the matching weight entries in each block.
    let nc = m.center_count();
    let mut centers: Vec<[f64; 2]> = m.centers().to_vec();
    centers.reverse();
    let mut permuted = Vec::new();
    for k in 0..2 {
        let block = &theta[k * (nc + 3)..(k + 1) * (nc + 3)];
        let mut w: Vec<f64> = block[..nc].to_vec();
        w.reverse();
        permuted.extend_from_slice(&w);
        permuted.extend_from_slice(&block[nc..]);
    }
    m = RadialBasis::with_centers(centers, 0.7, 2).unwrap();
    let mut swapped = SurrogateModel::RadialBasis(m);
    swapped.load_parameters(&permuted).unwrap();

    for &(x, y) in &[(0.3, 0.9), (1.7, 0.2), (2.0, 2.0)] {
        let a = base.eval_vec(&[x, y]).unwrap();
        let b = swapped.eval_vec(&[x, y]).unwrap();
        assert_relative_eq!(a[0], b[0], max_relative = 1e-13);
        assert_relative_eq!(a[1], b[1], max_relative = 1e-13);
    }
}

#[test]
fn rbfn_single_kernel_matches_closed_form() {
    let mut m = SurrogateModel::RadialBasisNet(RadialBasisNet::new(1, 1).unwrap());
    m.load_parameters(&[1.0, 1.0, 0.0, 0.0]).unwrap();
    let e1 = (-1.0_f64).exp();
    assert_relative_eq!(m.eval_vec(&[1.0, 0.0]).unwrap()[0], e1, max_relative = 1e-15);
    let jac = m.input_gradient(&[1.0, 0.0]).unwrap();
    // d/dx exp(-x^2) at 1 = -2/e
    assert_relative_eq!(jac[0], -0.7357588823428847, max_relative = 1e-14);
    assert_eq!(jac[1], 0.0);
}

#[test]
fn rbfn_clamps_shapes_on_load() {
    let mut m = SurrogateModel::RadialBasisNet(RadialBasisNet::new(2, 1).unwrap());
    m.load_parameters(&[1.0, 2.0, -0.5, 0.4, 0.0, 0.0, 1.0, 1.0])
        .unwrap();
    let theta = m.parameter_vector();
    assert_eq!(theta[2], 0.0);
    assert_eq!(theta[3], 0.4);

    let lb = m.lower_bounds().unwrap();
    for (i, &b) in lb.iter().enumerate() {
        if (2..4).contains(&i) {
            assert_eq!(b, 0.0);
        } else {
            assert_eq!(b, f64::NEG_INFINITY);
        }
    }
}

#[test]
fn rbfn_default_init_places_centers_in_window() {
    let mut m = SurrogateModel::RadialBasisNet(RadialBasisNet::new(50, 2).unwrap());
    m.initialize(&InitScheme::RbfnDefault { seed: 5 }).unwrap();
    let theta = m.parameter_vector();
    for k in 0..2 {
        let base = k * 200;
        assert!(theta[base..base + 50].iter().all(|&w| w == 0.0));
        assert!(theta[base + 50..base + 100].iter().all(|&s| s == 1.0));
        let centers = &theta[base + 100..base + 200];
        assert!(centers.iter().all(|&c| (0.0..=7.0).contains(&c)));
        // Deterministic in the seed but not degenerate.
        assert!(centers.windows(2).any(|w| w[0] != w[1]));
    }
    let mut again = SurrogateModel::RadialBasisNet(RadialBasisNet::new(50, 2).unwrap());
    again.initialize(&InitScheme::RbfnDefault { seed: 5 }).unwrap();
    assert_eq!(again.parameter_vector(), theta);
}

#[test]
fn tensor_isotropic_plane_stress_closed_form() {
    let (e, nu) = (1000.0, 0.3);
    let m = SymmetricTensor3::isotropic_plane_stress(e, nu);
    let f = e / (1.0 - nu * nu);
    let s = m.apply(&[1.0, 0.0, 0.0]);
    assert_relative_eq!(s[0], f, max_relative = 1e-15);
    assert_relative_eq!(s[1], nu * f, max_relative = 1e-15);
    assert_eq!(s[2], 0.0);
    // Engineering shear: sigma_xy = G * gamma.
    let s = m.apply(&[0.0, 0.0, 1.0]);
    assert_relative_eq!(s[2], f * (1.0 - nu) / 2.0, max_relative = 1e-15);
    assert!(m.is_spd(1e-12));

    let other = SymmetricTensor3::isotropic_plane_stress(2.0 * e, nu);
    let mid = m.lerp(&other, 0.5);
    assert_relative_eq!(
        mid.apply(&[1.0, 0.0, 0.0])[0],
        1.5 * f,
        max_relative = 1e-15
    );
}

#[test]
fn input_gradients_match_finite_differences() {
    for model in all_families() {
        let x0 = probe(&model);
        let jac = model.input_gradient(&x0).unwrap();
        let (od, id) = (model.output_dim(), model.input_dim());
        for k in 0..od {
            for j in 0..id {
                let fd = central_diff(
                    |t| {
                        let mut x = x0.clone();
                        x[j] = t;
                        model.eval_vec(&x).unwrap()[k]
                    },
                    x0[j],
                    1e-5,
                );
                assert_relative_eq!(
                    jac[k * id + j],
                    fd,
                    max_relative = 1e-6,
                    epsilon = 1e-8
                );
            }
        }
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    for mut model in all_families() {
        let x0 = probe(&model);
        let od = model.output_dim();
        let theta = model.parameter_vector();
        let mut scratch = Scratch::default();
        let mut out = vec![0.0; od];
        // Mixed seed exercises the accumulation across output components.
        let seed: Vec<f64> = (0..od).map(|k| 1.0 + 0.5 * k as f64).collect();
        let mut gp = vec![0.0; theta.len()];
        model
            .vjp(&mut scratch, &x0, &seed, &mut out, None, Some(&mut gp))
            .unwrap();
        for j in 0..theta.len() {
            let fd = central_diff(
                |t| {
                    let mut th = theta.clone();
                    th[j] = t;
                    model.load_parameters(&th).unwrap();
                    let v = model.eval_vec(&x0).unwrap();
                    v.iter().zip(&seed).map(|(a, s)| a * s).sum::<f64>()
                },
                theta[j],
                1e-5,
            );
            assert_relative_eq!(gp[j], fd, max_relative = 2e-6, epsilon = 1e-8);
        }
        model.load_parameters(&theta).unwrap();
    }
}

#[test]
fn taped_evaluation_agrees_with_direct() {
    for model in all_families() {
        let x0 = probe(&model);
        let direct = model.eval_vec(&x0).unwrap();
        let jac = model.input_gradient(&x0).unwrap();

        let mut tape = Tape::new();
        let xs = tape.vars(&x0);
        let outs = model.record_on_tape(&mut tape, &xs).unwrap();
        assert_eq!(outs.len(), model.output_dim());
        for (k, &o) in outs.iter().enumerate() {
            assert_relative_eq!(tape.value(o), direct[k], max_relative = 1e-13, epsilon = 1e-13);
            let g = tape.backward(o).unwrap();
            for (j, &xv) in xs.iter().enumerate() {
                assert_relative_eq!(
                    g.wrt(xv),
                    jac[k * model.input_dim() + j],
                    max_relative = 1e-12,
                    epsilon = 1e-13
                );
            }
        }
    }
}

#[test]
fn taped_parameter_gradients_agree_with_fused_pass() {
    for model in all_families() {
        let x0 = probe(&model);
        let theta = model.parameter_vector();
        let od = model.output_dim();

        let mut tape = Tape::new();
        let tv = tape.vars(&theta);
        let outs = model.record_with_params(&mut tape, &x0, &tv).unwrap();

        let mut scratch = Scratch::default();
        let mut out = vec![0.0; od];
        let mut seed = vec![0.0; od];
        for k in 0..od {
            seed.iter_mut().for_each(|s| *s = 0.0);
            seed[k] = 1.0;
            let mut gp = vec![0.0; theta.len()];
            model
                .vjp(&mut scratch, &x0, &seed, &mut out, None, Some(&mut gp))
                .unwrap();
            assert_relative_eq!(tape.value(outs[k]), out[k], max_relative = 1e-13, epsilon = 1e-13);
            let g = tape.backward(outs[k]).unwrap();
            for (j, &p) in tv.iter().enumerate() {
                assert_relative_eq!(g.wrt(p), gp[j], max_relative = 1e-11, epsilon = 1e-13);
            }
        }
    }
}

#[test]
fn scaled_uniform_init_bounds_and_determinism() {
    let mut net =
        SurrogateModel::Net(FullyConnectedNet::new(&[2, 20, 20, 2], Activation::Tanh).unwrap());
    net.initialize(&InitScheme::ScaledUniform { seed: 3 }).unwrap();
    let theta = net.parameter_vector();
    assert_eq!(theta.len(), 520);
    assert!(theta.iter().any(|&v| v != 0.0));
    // Transition bounds: sqrt(6/(fan_in+fan_out)).
    let b01 = (6.0_f64 / 22.0).sqrt();
    assert!(theta[..40].iter().all(|&v| v.abs() <= b01));
    // Hidden biases start at zero: slots 40..60 follow the first weight block.
    assert!(theta[40..60].iter().all(|&v| v == 0.0));

    let mut again =
        SurrogateModel::Net(FullyConnectedNet::new(&[2, 20, 20, 2], Activation::Tanh).unwrap());
    again.initialize(&InitScheme::ScaledUniform { seed: 3 }).unwrap();
    assert_eq!(again.parameter_vector(), theta);

    let mut other =
        SurrogateModel::Net(FullyConnectedNet::new(&[2, 20, 20, 2], Activation::Tanh).unwrap());
    other.initialize(&InitScheme::ScaledUniform { seed: 4 }).unwrap();
    assert_ne!(other.parameter_vector(), theta);
}

#[test]
fn gaussian_init_statistics() {
    let mut m =
        SurrogateModel::PiecewiseLinear(PiecewiseLinear::with_nodes(0.0, 1.0, 60, 1).unwrap());
    m.initialize(&gaussian(0.3, 0.05, 9)).unwrap();
    let theta = m.parameter_vector();
    let n = theta.len() as f64;
    let mean = theta.iter().sum::<f64>() / n;
    let var = theta.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    assert!((mean - 0.3).abs() < 5.0 * 0.05 / n.sqrt(), "mean {mean}");
    assert!((var.sqrt() - 0.05).abs() < 0.005, "std {}", var.sqrt());
}

#[test]
fn init_scheme_mismatches_are_rejected() {
    let mut pl = SurrogateModel::PiecewiseLinear(PiecewiseLinear::with_nodes(0.0, 1.0, 3, 1).unwrap());
    assert!(pl.initialize(&InitScheme::ScaledUniform { seed: 0 }).is_err());
    let mut net = SurrogateModel::Net(FullyConnectedNet::new(&[2, 3, 1], Activation::Elu).unwrap());
    assert!(net.initialize(&InitScheme::RbfnDefault { seed: 0 }).is_err());
}

#[test]
fn load_parameters_validates_shape_and_values() {
    let mut m = SurrogateModel::Tensor(SymmetricTensor3::zero());
    assert!(m.load_parameters(&[1.0; 5]).is_err());
    assert!(m.load_parameters(&[1.0, 2.0, f64::NAN, 0.0, 0.0, 0.0]).is_err());
    assert!(m.load_parameters(&[1.0; 6]).is_ok());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = std::env::temp_dir().join("invcal-ckpt-test");
    std::fs::create_dir_all(&dir).unwrap();
    for (i, model) in all_families().into_iter().enumerate() {
        let text = model.to_text();
        let back = SurrogateModel::from_text(&text).unwrap();
        assert_eq!(back.kind_name(), model.kind_name());
        assert_eq!(back.parameter_count(), model.parameter_count());
        let a = model.parameter_vector();
        let b = back.parameter_vector();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let x0 = probe(&model);
        assert_eq!(model.eval_vec(&x0).unwrap(), back.eval_vec(&x0).unwrap());

        let path = dir.join(format!("model-{i}.txt"));
        model.save(&path).unwrap();
        let loaded = SurrogateModel::load(&path).unwrap();
        assert_eq!(loaded.parameter_vector(), a);
    }
}

#[test]
fn checkpoint_rejects_corrupt_input() {
    let model = all_families().remove(0);
    let text = model.to_text();

    let junk = SurrogateModel::from_text("not a checkpoint");
    assert!(matches!(junk.unwrap_err(), Error::Parse { line: 1, .. }));

    let truncated: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
    assert!(matches!(
        SurrogateModel::from_text(&truncated).unwrap_err(),
        Error::Parse { .. }
    ));

    let garbled = text.replacen("kind net", "kind blob", 1);
    let err = SurrogateModel::from_text(&garbled).unwrap_err();
    match err {
        Error::Parse { line, detail } => {
            assert_eq!(line, 2);
            assert!(detail.contains("blob"));
        }
        other => panic!("expected parse error, got {other}"),
    }
}

#[test]
fn atomic_write_replaces_existing_content() {
    let dir = std::env::temp_dir().join("invcal-atomic-test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("target.txt");
    atomic_write(&path, b"first").unwrap();
    atomic_write(&path, b"second").unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
    assert!(!dir.join("target.txt.tmp").exists());
}

proptest! {
    #[test]
    fn pl_reproduces_random_affine_fields(
        a in -5.0_f64..5.0,
        b in -5.0_f64..5.0,
        c in -5.0_f64..5.0,
        px in 0.0_f64..2.0,
        py in 0.0_f64..2.0,
    ) {
        let mut m = PiecewiseLinear::with_nodes(0.0, 1.0, 3, 1).unwrap();
        for iy in 0..3 {
            for ix in 0..3 {
                *m.node_value_mut(0, ix, iy) = a + b * ix as f64 + c * iy as f64;
            }
        }
        let m = SurrogateModel::PiecewiseLinear(m);
        let v = m.eval_vec(&[px, py]).unwrap()[0];
        let want = a + b * px + c * py;
        prop_assert!((v - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn checkpoint_round_trips_random_parameters(
        raw in proptest::collection::vec(-1.0e6_f64..1.0e6, 8)
    ) {
        let mut m = SurrogateModel::Net(
            FullyConnectedNet::new(&[2, 2, 1], Activation::Selu).unwrap());
        prop_assert_eq!(m.parameter_count(), 8);
        m.load_parameters(&raw).unwrap();
        let back = SurrogateModel::from_text(&m.to_text()).unwrap();
        let b = back.parameter_vector();
        for (x, y) in raw.iter().zip(&b) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
