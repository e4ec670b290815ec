//! Batch driver for the calibration experiments. Every run resolves a full
//! configuration (defaults, then config file, then flags), writes its tables
//! and an exactly replayable run summary, and exits 0 only when the checks
//! attached to the experiment pass.

mod compare;
mod config;
mod driver;
mod membrane_run;
mod out;
mod plate_run;
mod study;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use invcal_core::plate::{FieldKind, VF_LOW};
use invcal_core::{Error, Result};

use config::{CompareCase, CompareFamily, Experiment, InitKind, ModelKind, RunConfig};
use driver::Run;

#[derive(Parser)]
#[command(
    name = "invcal",
    version,
    about = "Calibration experiments: coefficient learning, tensor recovery, \
             stress surrogates, and confidence bands"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a named experiment end to end
    Run(RunArgs),
    /// Train surrogate families on the membrane sweep and compare them
    Compare(CompareArgs),
    /// Mesh-size convergence study for the 1d coefficient problem
    Converge(ConvergeArgs),
    /// Thin-plate operations
    #[command(subcommand)]
    Plate(PlateOp),
    /// Membrane operations
    #[command(subcommand)]
    Membrane(MembraneOp),
}

#[derive(Args)]
struct Common {
    /// Config file; a previous run summary replays that run
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed for initialization and sampling
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Output format: csv (tables only) or svg (tables plus plots)
    #[arg(long, value_name = "csv|svg")]
    format: Option<String>,
}

impl Common {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            for line in cfg.apply_file(&text)? {
                println!("config: {line}");
            }
        }
        if let Some(seed) = self.seed {
            println!("override: run.seed = {seed}");
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            println!("override: run.out = {}", out.display());
            cfg.out = out.clone();
        }
        if let Some(format) = &self.format {
            println!("override: run.format = {format}");
            cfg.svg = config::parse_format(format)?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment: appendix-smoke, converge, activations, plate-invariant,
    /// plate-varying-linear, plate-varying-radial, membrane-invariant,
    /// membrane-varying, compare-pl, compare-rbf, compare-rbfn
    experiment: Option<String>,
    #[command(flatten)]
    common: Common,
    /// Table spacing; narrows a comparison to that single pl/rbf model
    #[arg(long, value_name = "H")]
    h: Option<f64>,
    /// Center count; narrows a comparison to that single rbfn model
    #[arg(long, value_name = "N")]
    n: Option<usize>,
    /// Loads to predict after training (comma separated)
    #[arg(long, value_name = "P,...")]
    predict: Option<String>,
    /// Fit the perturbation variance and write confidence bands
    #[arg(long)]
    uq: bool,
    /// Uniform fiber fraction for the plate field
    #[arg(long, value_name = "VF")]
    vf: Option<f64>,
    /// Plate fiber-fraction field: uniform, linear-x, radial
    #[arg(long, value_name = "KIND")]
    field: Option<String>,
    /// Training load strengths (comma separated)
    #[arg(long, value_name = "P,...")]
    loads: Option<String>,
    /// Membrane response profile: constant or varying
    #[arg(long, value_name = "constant|varying")]
    alpha: Option<String>,
    /// Comparison data case: invariant or varying
    #[arg(long, value_name = "CASE")]
    case: Option<String>,
    /// Comparison family: all, nn, pl, rbf, rbfn
    #[arg(long, value_name = "FAMILY")]
    family: Option<String>,
    /// Objective-call budget per comparison member
    #[arg(long, value_name = "CALLS")]
    budget: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Family to sweep: all, nn, pl, rbf, rbfn
    #[arg(long, value_name = "FAMILY")]
    family: Option<String>,
    /// Data-generation case: invariant or varying
    #[arg(long, value_name = "CASE")]
    case: Option<String>,
    /// Objective-call budget per member
    #[arg(long, value_name = "CALLS")]
    budget: Option<usize>,
    /// Table spacing; narrows the sweep to that single pl/rbf model
    #[arg(long, value_name = "H")]
    h: Option<f64>,
    /// Center count; narrows the sweep to that single rbfn model
    #[arg(long, value_name = "N")]
    n: Option<usize>,
}

#[derive(Args)]
struct ConvergeArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum PlateOp {
    /// Homogenize the two-phase unit cell at a fiber fraction
    Homogenize {
        #[command(flatten)]
        common: Common,
        /// Fiber volume fraction
        #[arg(long, value_name = "VF")]
        vf: Option<f64>,
    },
    /// Solve the plate under edge loads and write displacement tables
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        field: PlateFieldArgs,
    },
    /// Recover the constitutive tensor from generated observations
    Recover {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        field: PlateFieldArgs,
    },
    /// Forward-solve under a stiffness tensor and write predicted tables
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        field: PlateFieldArgs,
        /// 3x3 stiffness table written by an earlier recovery
        #[arg(long, value_name = "PATH")]
        tensor_file: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PlateFieldArgs {
    /// Fiber-fraction field: uniform, linear-x, radial
    #[arg(long, value_name = "KIND")]
    field: Option<String>,
    /// Uniform fiber fraction
    #[arg(long, value_name = "VF")]
    vf: Option<f64>,
    /// Load strengths (comma separated)
    #[arg(long, value_name = "P,...")]
    loads: Option<String>,
}

impl PlateFieldArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(field) = &self.field {
            cfg.plate.field = config::parse_field(field)?;
        }
        if let Some(vf) = self.vf {
            cfg.plate.field = FieldKind::Uniform { vf };
        }
        if let Some(loads) = &self.loads {
            cfg.plate.loads = flag_f64_list(loads)?;
        }
        Ok(())
    }
}

#[derive(Subcommand)]
enum MembraneOp {
    /// Forward-solve the reference pressure sweep and write state tables
    Generate {
        #[command(flatten)]
        common: Common,
        /// Response profile: constant or varying
        #[arg(long, value_name = "constant|varying")]
        alpha: Option<String>,
        /// Sweep load strengths (comma separated)
        #[arg(long, value_name = "P,...")]
        loads: Option<String>,
    },
    /// Train a stress surrogate on the pressure sweep
    Train {
        #[command(flatten)]
        common: Common,
        /// Surrogate kind: nn, pl, rbf, rbfn
        #[arg(long, value_name = "KIND")]
        model: Option<String>,
        /// Table spacing for pl/rbf surrogates
        #[arg(long, value_name = "H")]
        h: Option<f64>,
        /// Center count for rbfn surrogates
        #[arg(long, value_name = "N")]
        n: Option<usize>,
        /// Response profile: constant or varying
        #[arg(long, value_name = "constant|varying")]
        alpha: Option<String>,
        /// Sweep load strengths (comma separated)
        #[arg(long, value_name = "P,...")]
        loads: Option<String>,
    },
    /// Predict states under a trained model (reference response when absent)
    Predict {
        #[command(flatten)]
        common: Common,
        /// Loads to predict (comma separated)
        #[arg(long, value_name = "P,...")]
        p: Option<String>,
        /// Checkpoint written by an earlier training
        #[arg(long, value_name = "PATH")]
        model_file: Option<PathBuf>,
        /// Response profile for the reference material: constant or varying
        #[arg(long, value_name = "constant|varying")]
        alpha: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<bool> {
    let command = echo();
    match cmd {
        Cmd::Run(args) => cmd_run(args, &command),
        Cmd::Compare(args) => cmd_compare(args, &command),
        Cmd::Converge(args) => {
            let mut cfg = RunConfig::for_experiment(Experiment::Converge);
            args.common.apply(&mut cfg)?;
            cfg.experiment = Experiment::Converge;
            driver::run_experiment(cfg, &command)
        }
        Cmd::Plate(op) => cmd_plate(op, &command),
        Cmd::Membrane(op) => cmd_membrane(op, &command),
    }
}

fn cmd_run(args: RunArgs, command: &str) -> Result<bool> {
    let positional = args
        .experiment
        .as_deref()
        .map(Experiment::parse)
        .transpose()?;
    let exp = match positional {
        Some(e) => e,
        None => {
            let path = args.common.config.as_ref().ok_or_else(|| {
                Error::contract(
                    "an experiment name is required (or give --config naming one under [run])",
                )
            })?;
            let text = std::fs::read_to_string(path)?;
            config::peek_experiment(&text)?
                .ok_or_else(|| Error::contract("the config file names no experiment"))?
        }
    };
    let mut cfg = RunConfig::for_experiment(exp);
    args.common.apply(&mut cfg)?;
    // the positional name wins over a config file naming something else
    cfg.experiment = exp;

    let is_compare = matches!(
        exp,
        Experiment::ComparePl | Experiment::CompareRbf | Experiment::CompareRbfn
    );
    if let Some(h) = args.h {
        cfg.model.h = h;
        if is_compare {
            cfg.compare.single = true;
        }
    }
    if let Some(n) = args.n {
        cfg.model.centers = n;
        if is_compare {
            cfg.compare.single = true;
        }
    }
    if let Some(predict) = &args.predict {
        cfg.membrane.predict = flag_f64_list(predict)?;
    }
    if args.uq {
        cfg.uq.enabled = true;
    }
    if let Some(field) = &args.field {
        cfg.plate.field = config::parse_field(field)?;
    }
    if let Some(vf) = args.vf {
        cfg.plate.field = FieldKind::Uniform { vf };
    }
    if let Some(loads) = &args.loads {
        let loads = flag_f64_list(loads)?;
        match exp {
            Experiment::PlateInvariant
            | Experiment::PlateVaryingLinear
            | Experiment::PlateVaryingRadial => cfg.plate.loads = loads,
            Experiment::MembraneInvariant
            | Experiment::MembraneVarying
            | Experiment::ComparePl
            | Experiment::CompareRbf
            | Experiment::CompareRbfn => cfg.membrane.loads = loads,
            _ => {
                return Err(Error::contract(
                    "--loads applies to the plate, membrane, and comparison experiments",
                ))
            }
        }
    }
    if let Some(alpha) = &args.alpha {
        cfg.membrane.varying_alpha = parse_alpha(alpha)?;
    }
    if let Some(case) = &args.case {
        cfg.compare.case = CompareCase::parse(case)?;
    }
    if let Some(family) = &args.family {
        cfg.compare.family = CompareFamily::parse(family)?;
    }
    if let Some(budget) = args.budget {
        cfg.compare.budget = budget;
    }
    driver::run_experiment(cfg, command)
}

fn cmd_compare(args: CompareArgs, command: &str) -> Result<bool> {
    // the family decides which compare experiment carries the run
    let family = match &args.family {
        Some(f) => CompareFamily::parse(f)?,
        None => match &args.common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                peek_family(&text)?.unwrap_or(CompareFamily::All)
            }
            None => CompareFamily::All,
        },
    };
    let carrier = match family {
        CompareFamily::Rbf => Experiment::CompareRbf,
        CompareFamily::Rbfn => Experiment::CompareRbfn,
        _ => Experiment::ComparePl,
    };
    let mut cfg = RunConfig::for_experiment(carrier);
    cfg.out = PathBuf::from("out").join(format!("compare-{}", family.name()));
    args.common.apply(&mut cfg)?;
    cfg.compare.family = family;
    if let Some(case) = &args.case {
        cfg.compare.case = CompareCase::parse(case)?;
    }
    if let Some(budget) = args.budget {
        cfg.compare.budget = budget;
    }
    if let Some(h) = args.h {
        cfg.model.h = h;
        cfg.compare.single = true;
    }
    if let Some(n) = args.n {
        cfg.model.centers = n;
        cfg.compare.single = true;
    }
    driver::run_experiment(cfg, command)
}

fn cmd_plate(op: PlateOp, command: &str) -> Result<bool> {
    let mut cfg = RunConfig::for_experiment(Experiment::PlateInvariant);
    match op {
        PlateOp::Homogenize { common, vf } => {
            cfg.out = PathBuf::from("out/plate-homogenize");
            common.apply(&mut cfg)?;
            let vf = vf.or(match cfg.plate.field {
                FieldKind::Uniform { vf } => Some(vf),
                _ => None,
            });
            finish_op(cfg, command, |run| {
                plate_run::op_homogenize(run, vf.unwrap_or(VF_LOW))
            })
        }
        PlateOp::Generate { common, field } => {
            cfg.out = PathBuf::from("out/plate-generate");
            common.apply(&mut cfg)?;
            field.apply(&mut cfg)?;
            finish_op(cfg, command, plate_run::op_generate)
        }
        PlateOp::Recover { common, field } => {
            cfg.out = PathBuf::from("out/plate-recover");
            common.apply(&mut cfg)?;
            field.apply(&mut cfg)?;
            finish_op(cfg, command, plate_run::op_recover)
        }
        PlateOp::Predict {
            common,
            field,
            tensor_file,
        } => {
            cfg.out = PathBuf::from("out/plate-predict");
            common.apply(&mut cfg)?;
            field.apply(&mut cfg)?;
            finish_op(cfg, command, |run| {
                plate_run::op_predict(run, tensor_file.as_deref())
            })
        }
    }
}

fn cmd_membrane(op: MembraneOp, command: &str) -> Result<bool> {
    let mut cfg = RunConfig::for_experiment(Experiment::MembraneInvariant);
    match op {
        MembraneOp::Generate {
            common,
            alpha,
            loads,
        } => {
            cfg.out = PathBuf::from("out/membrane-generate");
            common.apply(&mut cfg)?;
            if let Some(alpha) = &alpha {
                cfg.membrane.varying_alpha = parse_alpha(alpha)?;
            }
            if let Some(loads) = &loads {
                cfg.membrane.loads = flag_f64_list(loads)?;
            }
            finish_op(cfg, command, membrane_run::op_generate)
        }
        MembraneOp::Train {
            common,
            model,
            h,
            n,
            alpha,
            loads,
        } => {
            cfg.out = PathBuf::from("out/membrane-train");
            common.apply(&mut cfg)?;
            if let Some(model) = &model {
                let kind = ModelKind::parse(model)?;
                cfg.model.kind = kind;
                cfg.model.init = default_init(kind);
            }
            if let Some(h) = h {
                cfg.model.h = h;
            }
            if let Some(n) = n {
                cfg.model.centers = n;
            }
            if let Some(alpha) = &alpha {
                cfg.membrane.varying_alpha = parse_alpha(alpha)?;
            }
            if let Some(loads) = &loads {
                cfg.membrane.loads = flag_f64_list(loads)?;
            }
            finish_op(cfg, command, membrane_run::op_train)
        }
        MembraneOp::Predict {
            common,
            p,
            model_file,
            alpha,
        } => {
            cfg.out = PathBuf::from("out/membrane-predict");
            common.apply(&mut cfg)?;
            if let Some(p) = &p {
                cfg.membrane.predict = flag_f64_list(p)?;
            }
            if let Some(alpha) = &alpha {
                cfg.membrane.varying_alpha = parse_alpha(alpha)?;
            }
            finish_op(cfg, command, |run| {
                membrane_run::op_predict(run, model_file.as_deref())
            })
        }
    }
}

fn finish_op(
    cfg: RunConfig,
    command: &str,
    f: impl FnOnce(&mut Run) -> Result<()>,
) -> Result<bool> {
    let mut run = Run::new(cfg, command)?;
    f(&mut run)?;
    run.finish()
}

fn default_init(kind: ModelKind) -> InitKind {
    match kind {
        ModelKind::Nn => InitKind::ScaledUniform,
        ModelKind::Pl | ModelKind::Rbf => InitKind::Zeros,
        ModelKind::Rbfn => InitKind::RbfnDefault,
    }
}

fn parse_alpha(v: &str) -> Result<bool> {
    match v {
        "constant" => Ok(false),
        "varying" => Ok(true),
        other => Err(Error::contract(format!(
            "alpha is 'constant' or 'varying', got '{other}'"
        ))),
    }
}

fn flag_f64_list(s: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::contract(format!("'{t}' is not a number")))
        })
        .collect::<Result<_>>()?;
    if vals.is_empty() {
        return Err(Error::contract("empty number list"));
    }
    Ok(vals)
}

fn peek_family(text: &str) -> Result<Option<CompareFamily>> {
    for entry in config::parse_entries(text)? {
        if entry.section == "compare" && entry.key == "family" {
            return CompareFamily::parse(&entry.value).map(Some);
        }
    }
    Ok(None)
}

fn echo() -> String {
    let mut parts = vec!["invcal".to_string()];
    parts.extend(std::env::args().skip(1));
    parts.join(" ")
}
