//! Run configuration: a TOML file with every section optional, then flag
//! overrides on top. The resolved value is written into every output.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use synth_eval::code::Lang;
use synth_eval::exec::SandboxConfig;
use synth_eval::scorer::ScoreConfig;
use synth_eval::trainer::TrainerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for transforms, mutation, perturbation and grad-check draws.
    pub seed: u64,
    /// Worker threads; 1 keeps runs bit-reproducible on any machine.
    pub jobs: usize,
    /// Language of code files whose extension says nothing.
    pub lang: Option<Lang>,
    pub score: ScoreConfig,
    pub train: TrainerConfig,
    pub sandbox: SandboxConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            jobs: 1,
            lang: None,
            score: ScoreConfig::default(),
            train: TrainerConfig::default(),
            sandbox: SandboxConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Apply the global flags. `--seed` also seeds training.
    pub fn override_with(mut self, seed: Option<u64>, jobs: Option<usize>, lang: Option<Lang>) -> anyhow::Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
            self.train.seed = s;
        }
        if let Some(j) = jobs {
            self.jobs = j;
        }
        if lang.is_some() {
            self.lang = lang;
        }
        anyhow::ensure!(self.jobs >= 1, "--jobs must be at least 1");
        Ok(self)
    }
}

/// What every output carries: the command line and the resolved config.
#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub config: RunConfig,
}

impl Header {
    /// One comment line for CSV and text outputs.
    pub fn comment(&self) -> String {
        format!("# {}\n", serde_json::to_string(self).expect("header serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_are_optional_and_flags_win() {
        let cfg: RunConfig = toml::from_str("seed = 4\n[score]\nthreshold = 0.7\n").unwrap();
        assert_eq!(cfg.score.threshold, 0.7);
        assert_eq!(cfg.jobs, 1);
        let cfg = cfg.override_with(Some(9), None, Some(Lang::Java)).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed, cfg.lang), (9, 9, Some(Lang::Java)));
        assert!(toml::from_str::<RunConfig>("sed = 1").is_err());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = toml::to_string(&RunConfig {
            lang: Some(Lang::Python),
            ..RunConfig::default()
        })
        .unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.lang, Some(Lang::Python));
        assert_eq!(back, RunConfig { lang: Some(Lang::Python), ..RunConfig::default() });
    }
}
