//! Plate experiments: homogenized stiffness endpoints, synthetic edge-load
//! observations, constitutive tensor recovery, forward prediction, and the
//! space-varying pipeline with Monte-Carlo confidence bands.

use std::path::Path;

use invcal_core::plate::{
    generate_observations, homogenize_unit_cell, plate_dofs, recover_tensor, CellPhases, DofMap,
    FieldKind, MaterialField, Observation, QuadMesh, VF_HIGH, VF_LOW,
};
use invcal_core::surrogate::{SurrogateModel, SymmetricTensor3};
use invcal_core::uq::{calibration_variance, confidence_bands, LoadCase, UqCase};
use invcal_core::{Error, Result};

use crate::driver::Run;
use crate::out::{line_plot, load_tag, num, write_text, Csv, Series};

/// Homogenized stiffness entries published for the two fiber fractions,
/// upper triangle [c11, c12, c13, c22, c23, c33].
const TABLE_C_LOW: [f64; 6] = [1491.24, 701.024, 0.0, 1450.24, 0.0, 362.941];
const TABLE_C_HIGH: [f64; 6] = [1695.92, 747.42, 0.0, 1633.96, 0.0, 405.76];

/// Reference slope of the top-right corner vertical displacement per unit
/// load strength, from the space-varying study this mirrors. The published
/// curves carry a constant offset (they plot the deformed corner position),
/// so only the slope is comparable.
const CORNER_SLOPE_LINEAR_X: f64 = (26.4449730641338 - 2.14832435471132) / 50.0;
const CORNER_SLOPE_RADIAL: f64 = (27.7930822282811 - 2.59769407609375) / 50.0;

/// Order-of-magnitude anchors for the fitted reduced-coordinate variance.
const SIGMA_LAMBDA_LINEAR_X: f64 = 1.15e5;
const SIGMA_LAMBDA_RADIAL: f64 = 4.21e5;

fn endpoints() -> Result<(SymmetricTensor3, SymmetricTensor3)> {
    let phases = CellPhases::default();
    Ok((
        homogenize_unit_cell(VF_LOW, &phases)?,
        homogenize_unit_cell(VF_HIGH, &phases)?,
    ))
}

fn uniform_tensor(
    vf: f64,
    c_low: &SymmetricTensor3,
    c_high: &SymmetricTensor3,
) -> Result<SymmetricTensor3> {
    if (vf - VF_LOW).abs() < 1e-12 {
        Ok(*c_low)
    } else if (vf - VF_HIGH).abs() < 1e-12 {
        Ok(*c_high)
    } else {
        homogenize_unit_cell(vf, &CellPhases::default())
    }
}

fn material_field(
    mesh: &QuadMesh,
    kind: FieldKind,
    c_low: &SymmetricTensor3,
    c_high: &SymmetricTensor3,
) -> Result<MaterialField> {
    match kind {
        FieldKind::Uniform { vf } => Ok(MaterialField::uniform(
            mesh,
            uniform_tensor(vf, c_low, c_high)?,
        )),
        kind => MaterialField::interpolated(mesh, kind, c_low, c_high),
    }
}

fn tensor_csv(c: &SymmetricTensor3, sidecars: &[(&str, String)]) -> Csv {
    let mut csv = Csv::new();
    for (k, v) in sidecars {
        csv.sidecar(k, v);
    }
    let m = c.matrix();
    for i in 0..3 {
        csv.row(&[num(m[(i, 0)]), num(m[(i, 1)]), num(m[(i, 2)])]);
    }
    csv
}

/// Reload a 3x3 stiffness written by `tensor_csv`. Comment lines are
/// sidecars; the matrix must be symmetric to parse as a tensor.
pub fn read_tensor_csv(path: &Path) -> Result<SymmetricTensor3> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<[f64; 3]> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = s.split(',').map(str::trim).collect();
        if cells.len() != 3 {
            return Err(Error::Parse {
                line,
                detail: format!("expected 3 comma-separated entries, got {}", cells.len()),
            });
        }
        let mut row = [0.0; 3];
        for (slot, cell) in row.iter_mut().zip(&cells) {
            *slot = cell.parse::<f64>().map_err(|_| Error::Parse {
                line,
                detail: format!("'{cell}' is not a number"),
            })?;
        }
        rows.push(row);
    }
    if rows.len() != 3 {
        return Err(Error::Parse {
            line: text.lines().count(),
            detail: format!("expected a 3x3 matrix, got {} rows", rows.len()),
        });
    }
    let scale = rows.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut skew = 0.0f64;
    for i in 0..3 {
        for j in (i + 1)..3 {
            skew = skew.max((rows[i][j] - rows[j][i]).abs());
        }
    }
    if skew > 1e-9 * scale.max(1.0) {
        return Err(Error::contract(format!(
            "stiffness matrix is not symmetric (max skew {skew:.3e})"
        )));
    }
    let avg = |i: usize, j: usize| 0.5 * (rows[i][j] + rows[j][i]);
    Ok(SymmetricTensor3::new([
        rows[0][0],
        avg(0, 1),
        avg(0, 2),
        rows[1][1],
        avg(1, 2),
        rows[2][2],
    ]))
}

fn write_observations(
    run: &Run,
    mesh: &QuadMesh,
    dofs: &DofMap,
    observations: &[Observation],
    prefix: &str,
    predicted: bool,
) -> Result<()> {
    for obs in observations {
        let mut csv = Csv::new();
        csv.sidecar("p", &num(obs.p));
        if predicted {
            csv.sidecar("predicted", "true");
        }
        csv.header(&["node_id", "x", "y", "ux", "uy"]);
        let full = dofs.expand(&obs.u);
        for n in 0..mesh.node_count() {
            let [x, y] = mesh.node_coord(n);
            csv.row(&[
                n.to_string(),
                num(x),
                num(y),
                num(full[2 * n]),
                num(full[2 * n + 1]),
            ]);
        }
        csv.write(&run.path(&format!("{prefix}_p{}.csv", load_tag(obs.p))))?;
    }
    Ok(())
}

fn write_trace(run: &Run, trace: &[f64]) -> Result<()> {
    let mut csv = Csv::new();
    csv.header(&["iteration", "train_loss"]);
    for (i, l) in trace.iter().enumerate() {
        csv.row(&[i.to_string(), num(*l)]);
    }
    csv.write(&run.path("trace.csv"))
}

fn tensor_results(run: &mut Run, label: &str, c: &SymmetricTensor3) {
    const NAMES: [&str; 6] = ["c11", "c12", "c13", "c22", "c23", "c33"];
    for (name, v) in NAMES.iter().zip(c.c) {
        run.result(&format!("{label}_{name}"), num(v));
    }
}

/// Worst per-entry deviation from a target upper triangle. Entries the
/// target sets to zero are measured absolutely against `zero_scale`.
fn tensor_deviation(got: &SymmetricTensor3, want: &[f64; 6], zero_scale: f64) -> (f64, String) {
    const NAMES: [&str; 6] = ["c11", "c12", "c13", "c22", "c23", "c33"];
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for k in 0..6 {
        let err = if want[k] == 0.0 {
            got.c[k].abs() / zero_scale
        } else {
            (got.c[k] - want[k]).abs() / want[k].abs()
        };
        if err > worst {
            worst = err;
            detail = format!("{} = {:.6} vs {:.6}", NAMES[k], got.c[k], want[k]);
        }
    }
    (worst, detail)
}

fn homogenize_endpoints(run: &mut Run) -> Result<(SymmetricTensor3, SymmetricTensor3)> {
    let (c_low, c_high) = endpoints()?;
    tensor_csv(&c_low, &[("vf", num(VF_LOW))]).write(&run.path("c_low.csv"))?;
    tensor_csv(&c_high, &[("vf", num(VF_HIGH))]).write(&run.path("c_high.csv"))?;
    tensor_results(run, "c_low", &c_low);
    tensor_results(run, "c_high", &c_high);
    Ok((c_low, c_high))
}

pub fn invariant(run: &mut Run) -> Result<()> {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh)?;
    let (c_low, c_high) = homogenize_endpoints(run)?;

    for (c, want, tag) in [
        (&c_low, &TABLE_C_LOW, "1/9"),
        (&c_high, &TABLE_C_HIGH, "1/4"),
    ] {
        let (worst, detail) = tensor_deviation(c, want, want[5]);
        run.checks.record(
            &format!("homogenized stiffness (vf={tag}) within 2% of expected"),
            worst <= 0.02,
            format!("worst entry {detail} ({:.2}%)", worst * 100.0),
        );
        run.checks.record(
            &format!("homogenized stiffness (vf={tag}) positive definite"),
            c.is_spd(1e-10),
            "eigenvalue floor 1e-10".to_string(),
        );
    }

    let field = material_field(&mesh, run.cfg.plate.field, &c_low, &c_high)?;
    let observations = generate_observations(&mesh, &dofs, &field, &run.cfg.plate.loads)?;
    write_observations(run, &mesh, &dofs, &observations, "obs", false)?;

    let (c_hat, res) = recover_tensor(&mesh, &dofs, &observations, &run.cfg.train)?;
    tensor_csv(&c_hat, &[]).write(&run.path("recovered.csv"))?;
    write_trace(run, &res.trace)?;
    tensor_results(run, "recovered", &c_hat);
    run.result("final_loss", num(res.loss));
    run.result("iterations", res.iterations.to_string());

    if let FieldKind::Uniform { vf } = run.cfg.plate.field {
        let target = uniform_tensor(vf, &c_low, &c_high)?;
        let mut worst_rel = 0.0f64;
        for k in [0usize, 1, 3, 5] {
            worst_rel = worst_rel.max((c_hat.c[k] - target.c[k]).abs() / target.c[k].abs());
        }
        run.checks.record(
            "recovered stiffness matches the generating tensor (rel 1e-6)",
            worst_rel <= 1e-6,
            format!("worst relative entry error {worst_rel:.3e}"),
        );
        let shear = c_hat.c[2].abs().max(c_hat.c[4].abs());
        run.checks.record(
            "recovered shear couplings vanish (abs 1e-6)",
            shear <= 1e-6,
            format!("max |c13|, |c23| = {shear:.3e}"),
        );
    } else {
        println!("note: non-uniform field configured; exact-recovery checks skipped");
    }

    if run.cfg.svg {
        let series = [Series {
            name: "train loss".to_string(),
            points: res
                .trace
                .iter()
                .enumerate()
                .map(|(i, &l)| (i as f64, l))
                .collect(),
        }];
        let svg = line_plot("Tensor recovery", "iteration", "loss", &series, true);
        write_text(&run.path("trace.svg"), &svg)?;
    }
    Ok(())
}

pub fn varying(run: &mut Run) -> Result<()> {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh)?;
    let (c_low, c_high) = homogenize_endpoints(run)?;
    let kind = run.cfg.plate.field;
    let field = material_field(&mesh, kind, &c_low, &c_high)?;

    let observations = generate_observations(&mesh, &dofs, &field, &run.cfg.plate.loads)?;
    write_observations(run, &mesh, &dofs, &observations, "obs", false)?;

    let (c_hat, res) = recover_tensor(&mesh, &dofs, &observations, &run.cfg.train)?;
    tensor_csv(&c_hat, &[]).write(&run.path("recovered.csv"))?;
    write_trace(run, &res.trace)?;
    tensor_results(run, "recovered", &c_hat);
    run.result("final_loss", num(res.loss));
    run.result("iterations", res.iterations.to_string());

    let model = SurrogateModel::Tensor(c_hat);
    let case = UqCase::Plate {
        mesh: &mesh,
        dofs: &dofs,
        model: &model,
    };

    if !run.cfg.uq.enabled {
        println!("note: uncertainty pass disabled; bands skipped");
        return Ok(());
    }

    let load_cases: Vec<LoadCase> = observations
        .iter()
        .map(|o| LoadCase {
            load: o.p,
            observed: o.u.clone(),
        })
        .collect();
    let sigma_lambda = calibration_variance(&case, &load_cases, &run.cfg.newton)?;
    run.result("sigma_lambda", num(sigma_lambda));
    run.checks.record(
        "fitted variance is positive",
        sigma_lambda > 0.0 && sigma_lambda.is_finite(),
        format!("sigma_lambda = {sigma_lambda:.6e}"),
    );
    let anchor = match kind {
        FieldKind::Radial => SIGMA_LAMBDA_RADIAL,
        _ => SIGMA_LAMBDA_LINEAR_X,
    };
    let factor = (sigma_lambda / anchor).max(anchor / sigma_lambda);
    run.checks.record(
        "fitted variance within a factor 10 of expected",
        factor <= 10.0,
        format!("sigma_lambda = {sigma_lambda:.3e}, expected about {anchor:.2e}"),
    );

    let reference = generate_observations(&mesh, &dofs, &field, &run.cfg.plate.test_loads)?;
    let corner = mesh.node_id(mesh.nx(), mesh.ny());
    let corner_idx = dofs
        .index(2 * corner + 1)
        .ok_or_else(|| Error::contract("corner uy is constrained"))?;

    let mut contained = Vec::new();
    let mut corner_rows: Vec<(f64, f64, f64, f64, f64)> = Vec::new();
    for refer in &reference {
        let p = refer.p;
        let report = confidence_bands(
            &case,
            p,
            sigma_lambda,
            run.cfg.uq.samples,
            run.cfg.uq.seed,
            &run.cfg.newton,
        )?;

        let mut csv = Csv::new();
        csv.sidecar("p", &num(p));
        csv.sidecar("sigma_lambda", &num(sigma_lambda));
        csv.sidecar("samples", &report.samples.to_string());
        csv.sidecar("seed", &report.seed.to_string());
        csv.header(&["node_id", "x", "y", "component", "u_pred", "q05", "q95", "u_ref"]);
        let full_ref = dofs.expand(&refer.u);
        for n in 0..mesh.node_count() {
            let [x, y] = mesh.node_coord(n);
            for (comp, name) in ["ux", "uy"].iter().enumerate() {
                let dof = 2 * n + comp;
                let (pred, lo, hi) = match dofs.index(dof) {
                    Some(i) => (report.prediction[i], report.q05[i], report.q95[i]),
                    None => (0.0, 0.0, 0.0),
                };
                csv.row(&[
                    n.to_string(),
                    num(x),
                    num(y),
                    name.to_string(),
                    num(pred),
                    num(lo),
                    num(hi),
                    num(full_ref[dof]),
                ]);
            }
        }
        csv.write(&run.path(&format!("bands_p{}.csv", load_tag(p))))?;

        let r = refer.u[corner_idx];
        let (lo, hi) = (report.q05[corner_idx], report.q95[corner_idx]);
        contained.push((p, r, lo, hi, lo <= r && r <= hi));
        corner_rows.push((p, report.prediction[corner_idx], lo, hi, r));
        run.result(&format!("corner_uy_ref_p{}", load_tag(p)), num(r));
        run.result(
            &format!("corner_uy_pred_p{}", load_tag(p)),
            num(report.prediction[corner_idx]),
        );
    }

    let all_in = contained.iter().all(|c| c.4);
    let detail = contained
        .iter()
        .map(|(p, r, lo, hi, ok)| {
            format!(
                "p={p}: {:.4} in [{:.4}, {:.4}] {}",
                r,
                lo,
                hi,
                if *ok { "yes" } else { "NO" }
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    run.checks.record(
        "reference corner displacement inside the 5%-95% band at every test load",
        all_in,
        detail,
    );

    if reference.len() >= 2 {
        let first = &reference[0];
        let last = &reference[reference.len() - 1];
        let slope = (last.u[corner_idx] - first.u[corner_idx]) / (last.p - first.p);
        let want = match kind {
            FieldKind::Radial => CORNER_SLOPE_RADIAL,
            _ => CORNER_SLOPE_LINEAR_X,
        };
        let rel = (slope - want).abs() / want;
        run.checks.record(
            "corner displacement slope within 10% of the published curve",
            rel <= 0.10,
            format!("slope {slope:.6} vs {want:.6} ({:.2}%)", rel * 100.0),
        );
    }

    if run.cfg.svg {
        let mk = |name: &str, sel: fn(&(f64, f64, f64, f64, f64)) -> f64| Series {
            name: name.to_string(),
            points: corner_rows.iter().map(|r| (r.0, sel(r))).collect(),
        };
        let series = [
            mk("prediction", |r| r.1),
            mk("q05", |r| r.2),
            mk("q95", |r| r.3),
            mk("reference", |r| r.4),
        ];
        let svg = line_plot(
            "Corner displacement bands",
            "load strength",
            "corner uy",
            &series,
            false,
        );
        write_text(&run.path("corner_bands.svg"), &svg)?;
    }
    Ok(())
}

pub fn op_homogenize(run: &mut Run, vf: f64) -> Result<()> {
    let c = homogenize_unit_cell(vf, &CellPhases::default())?;
    tensor_csv(&c, &[("vf", num(vf))]).write(&run.path("homogenized.csv"))?;
    let m = c.matrix();
    for i in 0..3 {
        println!("  [{:12.6} {:12.6} {:12.6}]", m[(i, 0)], m[(i, 1)], m[(i, 2)]);
    }
    tensor_results(run, "c", &c);
    Ok(())
}

pub fn op_generate(run: &mut Run) -> Result<()> {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh)?;
    let (c_low, c_high) = endpoints()?;
    let field = material_field(&mesh, run.cfg.plate.field, &c_low, &c_high)?;
    let observations = generate_observations(&mesh, &dofs, &field, &run.cfg.plate.loads)?;
    write_observations(run, &mesh, &dofs, &observations, "obs", false)?;
    run.result("observations", observations.len().to_string());
    Ok(())
}

pub fn op_recover(run: &mut Run) -> Result<()> {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh)?;
    let (c_low, c_high) = endpoints()?;
    let field = material_field(&mesh, run.cfg.plate.field, &c_low, &c_high)?;
    let observations = generate_observations(&mesh, &dofs, &field, &run.cfg.plate.loads)?;
    write_observations(run, &mesh, &dofs, &observations, "obs", false)?;
    let (c_hat, res) = recover_tensor(&mesh, &dofs, &observations, &run.cfg.train)?;
    tensor_csv(&c_hat, &[]).write(&run.path("recovered.csv"))?;
    write_trace(run, &res.trace)?;
    tensor_results(run, "recovered", &c_hat);
    run.result("final_loss", num(res.loss));
    run.result("iterations", res.iterations.to_string());
    Ok(())
}

pub fn op_predict(run: &mut Run, tensor_file: Option<&Path>) -> Result<()> {
    let mesh = QuadMesh::plate();
    let dofs = plate_dofs(&mesh)?;
    let field = match tensor_file {
        Some(path) => {
            let c = read_tensor_csv(path)?;
            tensor_results(run, "tensor", &c);
            MaterialField::uniform(&mesh, c)
        }
        None => {
            let (c_low, c_high) = endpoints()?;
            material_field(&mesh, run.cfg.plate.field, &c_low, &c_high)?
        }
    };
    let predictions = generate_observations(&mesh, &dofs, &field, &run.cfg.plate.loads)?;
    write_observations(run, &mesh, &dofs, &predictions, "predicted", true)?;
    run.result("predictions", predictions.len().to_string());
    Ok(())
}
