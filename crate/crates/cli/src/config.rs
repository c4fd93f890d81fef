use std::path::{Path, PathBuf};

use mimic::algorithm::AlgoConfig;
use mimic::bench::RunSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A training run as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub algorithm: AlgoConfig,
    #[serde(default)]
    pub seed: u64,
    /// Units of `train` budget; see each algorithm for its unit.
    #[serde(default)]
    pub budget: Option<usize>,
    /// Expert demos generated when `demo_file` is absent.
    #[serde(default)]
    pub demos: Option<usize>,
    #[serde(default)]
    pub demo_file: Option<PathBuf>,
    /// Root of the run directory.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn spec(&self) -> RunSpec {
        RunSpec {
            env: self.env.clone(),
            algorithm: self.algorithm,
            seed: self.seed,
            budget: self.budget,
            demos: self.demos,
        }
    }

    /// Every default made explicit. `demo_count` is the number of demos read
    /// from `demo_file`, if any.
    pub fn resolved(&self, out: &Path, demo_count: Option<usize>) -> Result<Self, CliError> {
        let spec = self.spec().resolved()?;
        Ok(Self {
            env: spec.env,
            algorithm: spec.algorithm,
            seed: spec.seed,
            budget: spec.budget,
            demos: demo_count.or(spec.demos),
            demo_file: self.demo_file.clone(),
            out: Some(out.to_path_buf()),
        })
    }

    /// `<out>/<algo>-<env>-<seed>`.
    pub fn run_dir(&self, out: &Path) -> PathBuf {
        out.join(format!("{}-{}-{}", self.algorithm.name(), self.env, self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_named() {
        let err = serde_json::from_str::<RunConfig>(
            r#"{"env":"cliffworld","algorithm":{"algo":"bc","params":{}},"learningRate":1}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("learningRate"));
    }

    #[test]
    fn resolution_is_idempotent() {
        let c: RunConfig =
            serde_json::from_str(r#"{"env":"gridworld-5x5","algorithm":{"algo":"drlhp","params":{}}}"#).unwrap();
        let out = Path::new("runs");
        let r = c.resolved(out, None).unwrap();
        assert_eq!(r.budget, Some(10));
        assert_eq!(r.resolved(out, None).unwrap(), r);
        assert_eq!(r.run_dir(out), Path::new("runs/drlhp-gridworld-5x5-0"));
    }
}
