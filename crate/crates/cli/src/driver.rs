//! Run lifecycle: create the output directory, collect results and checks,
//! write the run summary, and decide the exit status. Every invocation
//! (experiment or utility op) goes through a `Run`.

use std::path::PathBuf;

use invcal_core::Result;

use crate::config::RunConfig;
use crate::out::{write_text, Checks};
use crate::{compare, membrane_run, plate_run, study};

pub struct Run {
    pub cfg: RunConfig,
    pub checks: Checks,
    /// Command line shape echoed at the top of the summary.
    pub command: String,
    results: Vec<(String, String)>,
}

impl Run {
    pub fn new(cfg: RunConfig, command: &str) -> Result<Run> {
        std::fs::create_dir_all(&cfg.out)?;
        println!("{command} -> {}", cfg.out.display());
        if cfg.threads > 1 {
            println!(
                "INVCAL_THREADS = {}: noted; this build executes sequentially",
                cfg.threads
            );
        }
        Ok(Run {
            cfg,
            checks: Checks::new(),
            command: command.to_string(),
            results: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    pub fn result(&mut self, key: &str, value: String) {
        println!("  {key} = {value}");
        self.results.push((key.to_string(), value));
    }

    /// Write the run summary and report whether every attached check passed.
    pub fn finish(self) -> Result<bool> {
        let mut text = format!("# {}\n", self.command);
        text.push_str(&self.cfg.to_text());
        text.push_str("\n[results]\n");
        for (k, v) in &self.results {
            text.push_str(&format!("{k} = {v}\n"));
        }
        if !self.checks.is_empty() {
            text.push_str(&self.checks.summary_section());
        }
        write_text(&self.path("run-summary.txt"), &text)?;
        let ok = self.checks.all_pass();
        if !ok {
            println!("run finished with failing checks");
        }
        Ok(ok)
    }
}

/// Experiment dispatch for `invcal run`. Returns whether all attached
/// acceptance checks passed.
pub fn run_experiment(cfg: RunConfig, command: &str) -> Result<bool> {
    use crate::config::Experiment::*;
    let mut run = Run::new(cfg, command)?;
    match run.cfg.experiment {
        AppendixSmoke => study::smoke(&mut run)?,
        Converge => study::converge(&mut run)?,
        Activations => study::activations(&mut run)?,
        PlateInvariant => plate_run::invariant(&mut run)?,
        PlateVaryingLinear | PlateVaryingRadial => plate_run::varying(&mut run)?,
        MembraneInvariant | MembraneVarying => membrane_run::experiment(&mut run)?,
        ComparePl | CompareRbf | CompareRbfn => compare::harness(&mut run)?,
    }
    run.finish()
}
