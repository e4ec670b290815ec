//! Run configuration: one flat struct covering every experiment, with
//! defaults per experiment, a sectioned key=value file format, and a
//! writer whose output doubles as the run summary. Reading a summary back
//! as `--config` reproduces the run ([results]/[checks] sections are
//! ignored on input).

use std::path::PathBuf;

use invcal_core::calibrate::TrainConfig;
use invcal_core::membrane::{self, AlphaProfile};
use invcal_core::plate::{FieldKind, VF_LOW};
use invcal_core::predict::NewtonConfig;
use invcal_core::surrogate::{
    Activation, FullyConnectedNet, InitScheme, PiecewiseLinear, RadialBasis, RadialBasisNet,
    SurrogateModel,
};
use invcal_core::{Error, Result};

use crate::out::num;

pub const PLATE_TEST_LOADS: [f64; 6] = [25.0, 35.0, 45.0, 55.0, 65.0, 75.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    AppendixSmoke,
    Converge,
    Activations,
    PlateInvariant,
    PlateVaryingLinear,
    PlateVaryingRadial,
    MembraneInvariant,
    MembraneVarying,
    ComparePl,
    CompareRbf,
    CompareRbfn,
}

impl Experiment {
    pub fn parse(s: &str) -> Result<Experiment> {
        Ok(match s {
            "appendix-smoke" => Experiment::AppendixSmoke,
            "converge" => Experiment::Converge,
            "activations" => Experiment::Activations,
            "plate-invariant" => Experiment::PlateInvariant,
            "plate-varying-linear" => Experiment::PlateVaryingLinear,
            "plate-varying-radial" => Experiment::PlateVaryingRadial,
            "membrane-invariant" => Experiment::MembraneInvariant,
            "membrane-varying" => Experiment::MembraneVarying,
            "compare-pl" => Experiment::ComparePl,
            "compare-rbf" => Experiment::CompareRbf,
            "compare-rbfn" => Experiment::CompareRbfn,
            other => {
                return Err(Error::contract(format!(
                    "unknown experiment '{other}' (expected appendix-smoke, converge, \
                     activations, plate-invariant, plate-varying-linear, plate-varying-radial, \
                     membrane-invariant, membrane-varying, compare-pl, compare-rbf, compare-rbfn)"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Experiment::AppendixSmoke => "appendix-smoke",
            Experiment::Converge => "converge",
            Experiment::Activations => "activations",
            Experiment::PlateInvariant => "plate-invariant",
            Experiment::PlateVaryingLinear => "plate-varying-linear",
            Experiment::PlateVaryingRadial => "plate-varying-radial",
            Experiment::MembraneInvariant => "membrane-invariant",
            Experiment::MembraneVarying => "membrane-varying",
            Experiment::ComparePl => "compare-pl",
            Experiment::CompareRbf => "compare-rbf",
            Experiment::CompareRbfn => "compare-rbfn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Nn,
    Pl,
    Rbf,
    Rbfn,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<ModelKind> {
        Ok(match s {
            "nn" => ModelKind::Nn,
            "pl" => ModelKind::Pl,
            "rbf" => ModelKind::Rbf,
            "rbfn" => ModelKind::Rbfn,
            other => {
                return Err(Error::contract(format!(
                    "unknown model kind '{other}' (nn|pl|rbf|rbfn)"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Nn => "nn",
            ModelKind::Pl => "pl",
            ModelKind::Rbf => "rbf",
            ModelKind::Rbfn => "rbfn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Zeros,
    ScaledUniform,
    Gaussian,
    RbfnDefault,
}

impl InitKind {
    fn parse(s: &str) -> Result<InitKind> {
        Ok(match s {
            "zeros" => InitKind::Zeros,
            "scaled-uniform" => InitKind::ScaledUniform,
            "gaussian" => InitKind::Gaussian,
            "rbfn-default" => InitKind::RbfnDefault,
            other => {
                return Err(Error::contract(format!(
                    "unknown init scheme '{other}' (zeros|scaled-uniform|gaussian|rbfn-default)"
                )))
            }
        })
    }

    fn name(self) -> &'static str {
        match self {
            InitKind::Zeros => "zeros",
            InitKind::ScaledUniform => "scaled-uniform",
            InitKind::Gaussian => "gaussian",
            InitKind::RbfnDefault => "rbfn-default",
        }
    }
}

/// Surrogate architecture plus its initialization. Stretch-to-stress models
/// are 2-in 2-out; the hidden `widths` list both boundary layers for the
/// summary's sake.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub h: f64,
    pub span: (f64, f64),
    pub sigma: f64,
    pub centers: usize,
    pub init: InitKind,
    pub init_mean: f64,
    pub init_std: f64,
}

impl ModelSpec {
    fn membrane_net() -> ModelSpec {
        ModelSpec {
            kind: ModelKind::Nn,
            widths: vec![2, 20, 20, 2],
            activation: Activation::Tanh,
            h: 2.0,
            span: (0.0, 20.0),
            sigma: 20.0,
            centers: 100,
            init: InitKind::ScaledUniform,
            init_mean: 0.0,
            init_std: 100.0,
        }
    }

    pub fn init_scheme(&self, seed: u64) -> InitScheme {
        match self.init {
            InitKind::Zeros => InitScheme::Zeros,
            InitKind::ScaledUniform => InitScheme::ScaledUniform { seed },
            InitKind::Gaussian => InitScheme::Gaussian {
                mean: self.init_mean,
                std: self.init_std,
                seed,
            },
            InitKind::RbfnDefault => InitScheme::RbfnDefault { seed },
        }
    }

    pub fn build(&self, seed: u64) -> Result<SurrogateModel> {
        let mut model = match self.kind {
            ModelKind::Nn => {
                SurrogateModel::Net(FullyConnectedNet::new(&self.widths, self.activation)?)
            }
            ModelKind::Pl => SurrogateModel::PiecewiseLinear(PiecewiseLinear::from_span(
                self.span.0,
                self.span.1,
                self.h,
                2,
            )?),
            ModelKind::Rbf => SurrogateModel::RadialBasis(RadialBasis::from_span(
                self.span.0,
                self.span.1,
                self.h,
                self.sigma,
                2,
            )?),
            ModelKind::Rbfn => SurrogateModel::RadialBasisNet(RadialBasisNet::new(self.centers, 2)?),
        };
        model.initialize(&self.init_scheme(seed))?;
        Ok(model)
    }

    /// Hyperparameter tag used in file names and comparison tables.
    pub fn label(&self) -> String {
        match self.kind {
            ModelKind::Nn => "nn".to_string(),
            ModelKind::Pl => format!("pl-{}", self.h),
            ModelKind::Rbf => format!("rbf-{}", self.h),
            ModelKind::Rbfn => format!("rbfn-{}", self.centers),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MembraneSettings {
    pub elements: usize,
    pub edge_displacement: f64,
    pub varying_alpha: bool,
    pub alpha_value: f64,
    pub loads: Vec<f64>,
    pub predict: Vec<f64>,
}

impl MembraneSettings {
    pub fn alpha(&self) -> AlphaProfile {
        if self.varying_alpha {
            AlphaProfile::Tabulated
        } else {
            AlphaProfile::Constant(self.alpha_value)
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlateSettings {
    pub field: FieldKind,
    pub loads: Vec<f64>,
    pub test_loads: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StudySettings {
    pub mesh_sizes: Vec<usize>,
    /// Seed count; individual runs use seeds 0..seeds.
    pub seeds: u64,
    pub activations: Vec<Activation>,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
    pub elements: usize,
    pub b0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompareCase {
    Invariant,
    Varying,
}

impl CompareCase {
    pub fn parse(s: &str) -> Result<CompareCase> {
        Ok(match s {
            "invariant" => CompareCase::Invariant,
            "varying" => CompareCase::Varying,
            other => {
                return Err(Error::contract(format!(
                    "unknown case '{other}' (invariant|varying)"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CompareCase::Invariant => "invariant",
            CompareCase::Varying => "varying",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompareFamily {
    All,
    Nn,
    Pl,
    Rbf,
    Rbfn,
}

impl CompareFamily {
    pub fn parse(s: &str) -> Result<CompareFamily> {
        Ok(match s {
            "all" => CompareFamily::All,
            "nn" => CompareFamily::Nn,
            "pl" => CompareFamily::Pl,
            "rbf" => CompareFamily::Rbf,
            "rbfn" => CompareFamily::Rbfn,
            other => {
                return Err(Error::contract(format!(
                    "unknown family '{other}' (all|nn|pl|rbf|rbfn)"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CompareFamily::All => "all",
            CompareFamily::Nn => "nn",
            CompareFamily::Pl => "pl",
            CompareFamily::Rbf => "rbf",
            CompareFamily::Rbfn => "rbfn",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CompareSettings {
    pub family: CompareFamily,
    pub case: CompareCase,
    pub budget: usize,
    pub pl_h: Vec<f64>,
    pub rbf_h: Vec<f64>,
    pub rbfn_n: Vec<usize>,
    /// Train only the configured model instead of the family sweep.
    pub single: bool,
    /// Robustness variant: gaussian(0, 100) initial guesses for NN and PL.
    pub gaussian_init: bool,
}

#[derive(Clone, Debug)]
pub struct UqSettings {
    pub enabled: bool,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub out: PathBuf,
    pub svg: bool,
    /// Worker cap from INVCAL_THREADS. Parsed and echoed in the summary;
    /// execution is sequential either way in this build.
    pub threads: usize,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub newton: NewtonConfig,
    pub uq: UqSettings,
    pub membrane: MembraneSettings,
    pub plate: PlateSettings,
    pub study: StudySettings,
    pub compare: CompareSettings,
}

impl RunConfig {
    pub fn for_experiment(exp: Experiment) -> RunConfig {
        let mut cfg = RunConfig {
            experiment: exp,
            seed: 0,
            out: PathBuf::from("out").join(exp.name()),
            svg: false,
            threads: threads_from_env(),
            model: ModelSpec::membrane_net(),
            train: TrainConfig::membrane(),
            newton: NewtonConfig::default(),
            uq: UqSettings {
                enabled: false,
                samples: 2000,
                seed: 0,
            },
            membrane: MembraneSettings {
                elements: membrane::MEMBRANE_ELEMENTS,
                edge_displacement: membrane::EDGE_DISPLACEMENT,
                varying_alpha: false,
                alpha_value: 0.1,
                loads: membrane::training_loads(),
                predict: Vec::new(),
            },
            plate: PlateSettings {
                field: FieldKind::Uniform { vf: VF_LOW },
                loads: vec![20.0],
                test_loads: PLATE_TEST_LOADS.to_vec(),
            },
            study: StudySettings {
                mesh_sizes: vec![3, 4, 5, 8, 10, 13, 15, 18, 21],
                seeds: 10,
                activations: vec![Activation::Tanh, Activation::Relu],
                widths: vec![20],
                depths: vec![3],
                elements: 50,
                b0: 10.0,
            },
            compare: CompareSettings {
                family: CompareFamily::All,
                case: CompareCase::Invariant,
                budget: 15_000,
                pl_h: vec![0.4, 1.0, 2.0],
                rbf_h: vec![0.1, 0.4, 1.0, 2.0],
                rbfn_n: vec![100, 400, 1600, 2500],
                single: false,
                gaussian_init: false,
            },
        };
        match exp {
            Experiment::AppendixSmoke | Experiment::Converge | Experiment::Activations => {
                cfg.train = TrainConfig::convergence();
            }
            Experiment::PlateInvariant => {
                cfg.train = TrainConfig::plate();
            }
            Experiment::PlateVaryingLinear => {
                cfg.train = TrainConfig::plate();
                cfg.plate.field = FieldKind::LinearX;
                cfg.uq.enabled = true;
            }
            Experiment::PlateVaryingRadial => {
                cfg.train = TrainConfig::plate();
                cfg.plate.field = FieldKind::Radial;
                cfg.uq.enabled = true;
            }
            Experiment::MembraneInvariant => {}
            Experiment::MembraneVarying => {
                cfg.membrane.varying_alpha = true;
                cfg.membrane.predict = membrane::TEST_LOADS.to_vec();
                cfg.uq.enabled = true;
            }
            Experiment::ComparePl => {
                cfg.train = TrainConfig::comparison();
                cfg.compare.family = CompareFamily::Pl;
                cfg.model.kind = ModelKind::Pl;
                cfg.model.init = InitKind::Zeros;
            }
            Experiment::CompareRbf => {
                cfg.train = TrainConfig::comparison();
                cfg.compare.family = CompareFamily::Rbf;
                cfg.model.kind = ModelKind::Rbf;
                cfg.model.h = 1.0;
                cfg.model.init = InitKind::Zeros;
            }
            Experiment::CompareRbfn => {
                cfg.train = TrainConfig::comparison();
                cfg.compare.family = CompareFamily::Rbfn;
                cfg.model.kind = ModelKind::Rbfn;
                cfg.model.init = InitKind::RbfnDefault;
            }
        }
        cfg
    }

    /// Apply a config file. Returns override descriptions for logging.
    pub fn apply_file(&mut self, text: &str) -> Result<Vec<String>> {
        let mut logged = Vec::new();
        for entry in parse_entries(text)? {
            if entry.section == "results" || entry.section == "checks" {
                continue;
            }
            self.apply(&entry)?;
            logged.push(format!("{}.{} = {}", entry.section, entry.key, entry.value));
        }
        Ok(logged)
    }

    fn apply(&mut self, e: &Entry) -> Result<()> {
        let line = e.line;
        let v = e.value.as_str();
        match (e.section.as_str(), e.key.as_str()) {
            ("run", "experiment") => self.experiment = Experiment::parse(v).map_err(at(line))?,
            ("run", "seed") => self.seed = p_u64(v, line)?,
            ("run", "out") => self.out = PathBuf::from(v),
            ("run", "format") => self.svg = parse_format(v).map_err(at(line))?,
            ("run", "threads") => self.threads = p_usize(v, line)?,
            ("model", "kind") => self.model.kind = ModelKind::parse(v).map_err(at(line))?,
            ("model", "widths") => self.model.widths = p_usize_list(v, line)?,
            ("model", "activation") => {
                self.model.activation = Activation::parse(v).map_err(at(line))?
            }
            ("model", "h") => self.model.h = p_f64(v, line)?,
            ("model", "span") => {
                let s = p_f64_list(v, line)?;
                if s.len() != 2 {
                    return Err(Error::Parse {
                        line,
                        detail: "span wants two numbers lo,hi".into(),
                    });
                }
                self.model.span = (s[0], s[1]);
            }
            ("model", "sigma") => self.model.sigma = p_f64(v, line)?,
            ("model", "centers") => self.model.centers = p_usize(v, line)?,
            ("model", "init") => self.model.init = InitKind::parse(v).map_err(at(line))?,
            ("model", "init_mean") => self.model.init_mean = p_f64(v, line)?,
            ("model", "init_std") => self.model.init_std = p_f64(v, line)?,
            ("train", "max_iters") => self.train.max_iters = p_usize(v, line)?,
            ("train", "grad_tol") => self.train.grad_tol = p_f64(v, line)?,
            ("train", "rel_obj_tol") => self.train.rel_obj_tol = p_f64(v, line)?,
            ("train", "memory") => self.train.memory = p_usize(v, line)?,
            ("train", "call_budget") => {
                self.train.call_budget = if v.is_empty() || v == "none" {
                    None
                } else {
                    Some(p_usize(v, line)?)
                }
            }
            ("train", "seed") => self.train.seed = p_u64(v, line)?,
            ("newton", "tol") => self.newton.tol = p_f64(v, line)?,
            ("newton", "max_iters") => self.newton.max_iters = p_usize(v, line)?,
            ("newton", "load_steps") => self.newton.load_steps = p_usize(v, line)?,
            ("newton", "min_step") => self.newton.min_step = p_f64(v, line)?,
            ("uq", "enabled") => self.uq.enabled = p_bool(v, line)?,
            ("uq", "samples") => self.uq.samples = p_usize(v, line)?,
            ("uq", "seed") => self.uq.seed = p_u64(v, line)?,
            ("membrane", "elements") => self.membrane.elements = p_usize(v, line)?,
            ("membrane", "edge_displacement") => {
                self.membrane.edge_displacement = p_f64(v, line)?
            }
            ("membrane", "alpha") => {
                self.membrane.varying_alpha = match v {
                    "constant" => false,
                    "varying" => true,
                    other => {
                        return Err(Error::Parse {
                            line,
                            detail: format!("alpha is 'constant' or 'varying', got '{other}'"),
                        })
                    }
                }
            }
            ("membrane", "alpha_value") => self.membrane.alpha_value = p_f64(v, line)?,
            ("membrane", "loads") => self.membrane.loads = p_f64_list(v, line)?,
            ("membrane", "predict") => self.membrane.predict = p_f64_list(v, line)?,
            ("plate", "field") => self.plate.field = parse_field(v).map_err(at(line))?,
            ("plate", "vf") => {
                if let FieldKind::Uniform { vf } = &mut self.plate.field {
                    *vf = p_f64(v, line)?;
                } else {
                    self.plate.field = FieldKind::Uniform {
                        vf: p_f64(v, line)?,
                    };
                }
            }
            ("plate", "loads") => self.plate.loads = p_f64_list(v, line)?,
            ("plate", "test_loads") => self.plate.test_loads = p_f64_list(v, line)?,
            ("study", "mesh_sizes") => self.study.mesh_sizes = p_usize_list(v, line)?,
            ("study", "seeds") => self.study.seeds = p_u64(v, line)?,
            ("study", "activations") => {
                let mut acts = Vec::new();
                for tok in list_tokens(v) {
                    acts.push(Activation::parse(tok).map_err(at(line))?);
                }
                self.study.activations = acts;
            }
            ("study", "widths") => self.study.widths = p_usize_list(v, line)?,
            ("study", "depths") => self.study.depths = p_usize_list(v, line)?,
            ("study", "elements") => self.study.elements = p_usize(v, line)?,
            ("study", "b0") => self.study.b0 = p_f64(v, line)?,
            ("compare", "family") => {
                self.compare.family = CompareFamily::parse(v).map_err(at(line))?
            }
            ("compare", "case") => self.compare.case = CompareCase::parse(v).map_err(at(line))?,
            ("compare", "budget") => self.compare.budget = p_usize(v, line)?,
            ("compare", "pl_h") => self.compare.pl_h = p_f64_list(v, line)?,
            ("compare", "rbf_h") => self.compare.rbf_h = p_f64_list(v, line)?,
            ("compare", "rbfn_n") => self.compare.rbfn_n = p_usize_list(v, line)?,
            ("compare", "single") => self.compare.single = p_bool(v, line)?,
            ("compare", "gaussian_init") => self.compare.gaussian_init = p_bool(v, line)?,
            (section, key) => {
                return Err(Error::Parse {
                    line,
                    detail: format!("unknown config key [{section}] {key}"),
                })
            }
        }
        Ok(())
    }

    /// Canonical serialization: every resolved parameter, suitable both as
    /// the head of the run summary and as a reusable config file.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("[run]\n");
        kv(&mut s, "experiment", self.experiment.name());
        kv(&mut s, "seed", &self.seed.to_string());
        kv(&mut s, "out", &self.out.display().to_string());
        kv(&mut s, "format", if self.svg { "svg" } else { "csv" });
        kv(&mut s, "threads", &self.threads.to_string());

        s.push_str("\n[model]\n");
        kv(&mut s, "kind", self.model.kind.name());
        kv(&mut s, "widths", &join_usize(&self.model.widths));
        kv(&mut s, "activation", self.model.activation.name());
        kv(&mut s, "h", &num(self.model.h));
        kv(
            &mut s,
            "span",
            &format!("{},{}", num(self.model.span.0), num(self.model.span.1)),
        );
        kv(&mut s, "sigma", &num(self.model.sigma));
        kv(&mut s, "centers", &self.model.centers.to_string());
        kv(&mut s, "init", self.model.init.name());
        kv(&mut s, "init_mean", &num(self.model.init_mean));
        kv(&mut s, "init_std", &num(self.model.init_std));

        s.push_str("\n[train]\n");
        kv(&mut s, "max_iters", &self.train.max_iters.to_string());
        kv(&mut s, "grad_tol", &num(self.train.grad_tol));
        kv(&mut s, "rel_obj_tol", &num(self.train.rel_obj_tol));
        kv(&mut s, "memory", &self.train.memory.to_string());
        kv(
            &mut s,
            "call_budget",
            &match self.train.call_budget {
                Some(b) => b.to_string(),
                None => "none".to_string(),
            },
        );
        kv(&mut s, "seed", &self.train.seed.to_string());

        s.push_str("\n[newton]\n");
        kv(&mut s, "tol", &num(self.newton.tol));
        kv(&mut s, "max_iters", &self.newton.max_iters.to_string());
        kv(&mut s, "load_steps", &self.newton.load_steps.to_string());
        kv(&mut s, "min_step", &num(self.newton.min_step));

        s.push_str("\n[uq]\n");
        kv(&mut s, "enabled", bool_str(self.uq.enabled));
        kv(&mut s, "samples", &self.uq.samples.to_string());
        kv(&mut s, "seed", &self.uq.seed.to_string());

        s.push_str("\n[membrane]\n");
        kv(&mut s, "elements", &self.membrane.elements.to_string());
        kv(
            &mut s,
            "edge_displacement",
            &num(self.membrane.edge_displacement),
        );
        kv(
            &mut s,
            "alpha",
            if self.membrane.varying_alpha {
                "varying"
            } else {
                "constant"
            },
        );
        kv(&mut s, "alpha_value", &num(self.membrane.alpha_value));
        kv(&mut s, "loads", &join_f64(&self.membrane.loads));
        kv(&mut s, "predict", &join_f64(&self.membrane.predict));

        s.push_str("\n[plate]\n");
        let (field, vf) = field_parts(self.plate.field);
        kv(&mut s, "field", field);
        if let Some(vf) = vf {
            kv(&mut s, "vf", &num(vf));
        }
        kv(&mut s, "loads", &join_f64(&self.plate.loads));
        kv(&mut s, "test_loads", &join_f64(&self.plate.test_loads));

        s.push_str("\n[study]\n");
        kv(&mut s, "mesh_sizes", &join_usize(&self.study.mesh_sizes));
        kv(&mut s, "seeds", &self.study.seeds.to_string());
        kv(
            &mut s,
            "activations",
            &self
                .study
                .activations
                .iter()
                .map(|a| a.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv(&mut s, "widths", &join_usize(&self.study.widths));
        kv(&mut s, "depths", &join_usize(&self.study.depths));
        kv(&mut s, "elements", &self.study.elements.to_string());
        kv(&mut s, "b0", &num(self.study.b0));

        s.push_str("\n[compare]\n");
        kv(&mut s, "family", self.compare.family.name());
        kv(&mut s, "case", self.compare.case.name());
        kv(&mut s, "budget", &self.compare.budget.to_string());
        kv(&mut s, "pl_h", &join_f64(&self.compare.pl_h));
        kv(&mut s, "rbf_h", &join_f64(&self.compare.rbf_h));
        kv(&mut s, "rbfn_n", &join_usize(&self.compare.rbfn_n));
        kv(&mut s, "single", bool_str(self.compare.single));
        kv(&mut s, "gaussian_init", bool_str(self.compare.gaussian_init));
        s
    }
}

fn kv(s: &mut String, key: &str, value: &str) {
    s.push_str(key);
    s.push_str(" = ");
    s.push_str(value);
    s.push('\n');
}

fn bool_str(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(",")
}

fn join_usize(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn parse_format(v: &str) -> Result<bool> {
    match v {
        "csv" => Ok(false),
        "svg" => Ok(true),
        other => Err(Error::contract(format!(
            "unknown format '{other}' (csv|svg)"
        ))),
    }
}

pub fn parse_field(v: &str) -> Result<FieldKind> {
    Ok(match v {
        "uniform" => FieldKind::Uniform { vf: VF_LOW },
        "linear-x" => FieldKind::LinearX,
        "radial" => FieldKind::Radial,
        other => {
            return Err(Error::contract(format!(
                "unknown field '{other}' (uniform|linear-x|radial)"
            )))
        }
    })
}

fn field_parts(f: FieldKind) -> (&'static str, Option<f64>) {
    match f {
        FieldKind::Uniform { vf } => ("uniform", Some(vf)),
        FieldKind::LinearX => ("linear-x", None),
        FieldKind::Radial => ("radial", None),
    }
}

fn threads_from_env() -> usize {
    match std::env::var("INVCAL_THREADS") {
        Ok(v) => v.trim().parse().unwrap_or(1).max(1),
        Err(_) => 1,
    }
}

pub struct Entry {
    pub section: String,
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Sectioned key=value text. `#` starts a comment; blank lines are skipped;
/// keys before any section header are rejected.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let t = stripped.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(name) = t.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(Error::Parse {
                line,
                detail: "unterminated section header".into(),
            })?;
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = t.split_once('=').ok_or(Error::Parse {
            line,
            detail: format!("expected key = value, got '{t}'"),
        })?;
        if section.is_empty() {
            return Err(Error::Parse {
                line,
                detail: "key outside any [section]".into(),
            });
        }
        entries.push(Entry {
            section: section.clone(),
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            line,
        });
    }
    Ok(entries)
}

/// Peek run.experiment out of a config file before defaults are chosen.
pub fn peek_experiment(text: &str) -> Result<Option<Experiment>> {
    for e in parse_entries(text)? {
        if e.section == "run" && e.key == "experiment" {
            return Experiment::parse(&e.value).map(Some).map_err(at(e.line));
        }
    }
    Ok(None)
}

fn at(line: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Parse {
        line,
        detail: e.to_string(),
    }
}

fn p_f64(v: &str, line: usize) -> Result<f64> {
    v.trim().parse().map_err(|_| Error::Parse {
        line,
        detail: format!("bad number '{v}'"),
    })
}

fn p_usize(v: &str, line: usize) -> Result<usize> {
    v.trim().parse().map_err(|_| Error::Parse {
        line,
        detail: format!("bad integer '{v}'"),
    })
}

fn p_u64(v: &str, line: usize) -> Result<u64> {
    v.trim().parse().map_err(|_| Error::Parse {
        line,
        detail: format!("bad integer '{v}'"),
    })
}

fn p_bool(v: &str, line: usize) -> Result<bool> {
    match v.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(Error::Parse {
            line,
            detail: format!("bad boolean '{other}'"),
        }),
    }
}

fn list_tokens(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|t| !t.is_empty())
}

pub fn p_f64_list(v: &str, line: usize) -> Result<Vec<f64>> {
    list_tokens(v).map(|t| p_f64(t, line)).collect()
}

fn p_usize_list(v: &str, line: usize) -> Result<Vec<usize>> {
    list_tokens(v).map(|t| p_usize(t, line)).collect()
}
