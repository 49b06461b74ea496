//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Instance family of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Consensus,
    ModelFit,
    RandomLs,
    Opf15,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineChoice {
    Rbcd,
    Pda,
    /// DSO/aggregator price loop (opf15 only).
    Ppdlmp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingChoice {
    /// One block per step; uniform unless `probs` is given.
    Single,
    Nice,
    /// Each block independently with probability `p`.
    Uniform,
    Full,
    PairedDso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub kind: SamplingChoice,
    /// Block count per step of the nice sampling.
    pub m: Option<usize>,
    /// Inclusion probability of the uniform sampling.
    pub p: Option<f64>,
    /// Probabilities of the single-block sampling.
    pub probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    Convex,
    Accelerated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyChoice,
    /// Initial τ of the accelerated policy.
    pub tau0: Option<f64>,
}

/// Instance parameters; which keys apply depends on the experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    /// Seed of the instance generator (defaults to the run seed).
    pub seed: Option<u64>,
    // random_ls
    pub blocks: Option<usize>,
    pub block_dim: Option<usize>,
    pub q: Option<usize>,
    pub noise: Option<f64>,
    pub lipschitz: Option<f64>,
    pub mu: Option<f64>,
    pub l1: Option<f64>,
    pub bounds: Option<[f64; 2]>,
    // consensus
    pub nodes: Option<usize>,
    pub edges: Option<Vec<[usize; 2]>>,
    // model_fit
    pub samples: Option<usize>,
    pub features: Option<usize>,
    // opf15
    pub network: Option<PathBuf>,
    pub edges_file: Option<PathBuf>,
    pub keep_shunt: Option<bool>,
    pub aggregators: Option<Vec<Vec<usize>>>,
    // custom
    pub a_file: Option<PathBuf>,
    pub b_file: Option<PathBuf>,
    pub dims: Option<Vec<usize>>,
}

/// Complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    pub k_max: usize,
    #[serde(default = "default_trace_every")]
    pub trace_every: usize,
    /// Stop once the KKT residual falls below this value.
    pub stop_tol: Option<f64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_engine")]
    pub engine: EngineChoice,
    /// Record the Lyapunov value in the trace (needs a reference solution).
    #[serde(default)]
    pub lyapunov: bool,
    /// Append elapsed seconds to each trace row; this makes traces differ between reruns.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "default_recompute")]
    pub recompute_every: usize,
    /// Length of the full-sampling reference run when no exact solution is known (0 disables it).
    #[serde(default)]
    pub oracle_steps: usize,
    pub sampling: Option<SamplingConfig>,
    pub policy: Option<PolicyConfig>,
    #[serde(default)]
    pub instance: InstanceConfig,
}

fn default_trace_every() -> usize {
    10
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_engine() -> EngineChoice {
    EngineChoice::Rbcd
}

fn default_recompute() -> usize {
    1000
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative instance paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.instance.network,
            &mut cfg.instance.edges_file,
            &mut cfg.instance.a_file,
            &mut cfg.instance.b_file,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(msg.to_string()));
        if self.k_max < 1 {
            return bad("k_max must be at least 1");
        }
        if self.trace_every < 1 {
            return bad("trace_every must be at least 1");
        }
        if self.recompute_every < 1 {
            return bad("recompute_every must be at least 1");
        }
        if self.engine == EngineChoice::Ppdlmp && self.experiment != Experiment::Opf15 {
            return bad("engine = \"ppdlmp\" requires experiment = \"opf15\"");
        }
        if self.experiment == Experiment::Custom
            && (self.instance.a_file.is_none()
                || self.instance.b_file.is_none()
                || self.instance.dims.is_none())
        {
            return bad(
                "custom experiments need instance.a_file, instance.b_file and instance.dims",
            );
        }
        if let Some(s) = &self.sampling {
            match s.kind {
                SamplingChoice::Nice if s.m.is_none() => {
                    return bad("sampling.m is required for nice sampling")
                }
                SamplingChoice::Uniform if s.p.is_none() => {
                    return bad("sampling.p is required for uniform sampling")
                }
                _ => {}
            }
        }
        if let Some(t) = self.stop_tol {
            if !(t > 0.0) {
                return bad("stop_tol must be positive");
            }
        }
        Ok(())
    }

    /// Checks that every referenced file exists.
    pub fn check_files(&self) -> Result<(), CliError> {
        for p in [
            &self.instance.network,
            &self.instance.edges_file,
            &self.instance.a_file,
            &self.instance.b_file,
        ]
        .into_iter()
        .flatten()
        {
            if !p.is_file() {
                return Err(CliError::Config(format!(
                    "referenced file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::parse("experiment = \"random_ls\"\nk_max = 5\n").unwrap();
        assert_eq!(cfg.trace_every, 10);
        assert_eq!(cfg.engine, EngineChoice::Rbcd);
        assert_eq!(cfg.instance, InstanceConfig::default());
    }

    #[test]
    fn unknown_field_names_the_key_and_line() {
        let err =
            RunConfig::parse("experiment = \"random_ls\"\nk_max = 5\nstep = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("step") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn zero_k_max_is_rejected() {
        assert!(matches!(
            RunConfig::parse("experiment = \"random_ls\"\nk_max = 0\n"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn missing_file_is_rejected() {
        let cfg = RunConfig::parse(
            "experiment = \"custom\"\nk_max = 5\n[instance]\na_file = \"/nonexistent/a.csv\"\nb_file = \"/nonexistent/b.csv\"\ndims = [1]\n",
        )
        .unwrap();
        assert!(matches!(cfg.check_files(), Err(CliError::Config(_))));
    }
}
