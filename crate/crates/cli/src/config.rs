use std::fmt;
use std::path::{Path, PathBuf};

use randhyp::scenarios::ScenarioSpec;
use serde::{Deserialize, Serialize};

/// Top-level run file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every sampled value derives from it.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; machine parallelism when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    pub scenario: ScenarioSpec,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("randhyp-out")
}

#[derive(Debug)]
pub enum ConfigError {
    Io { path: PathBuf, source: std::io::Error },
    Schema { path: String, message: String },
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, source } => write!(f, "cannot read {}: {source}", path.display()),
            ConfigError::Schema { path, message } if path.is_empty() || path == "." => write!(f, "{message}"),
            ConfigError::Schema { path, message } => write!(f, "at `{path}`: {message}"),
            ConfigError::Invalid(m) => write!(f, "invalid configuration: {m}"),
        }
    }
}

impl std::error::Error for ConfigError {}

pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Schema {
        path: String::new(),
        message: e.to_string().trim_end().to_string(),
    })?;
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string().trim_end().to_string(),
    })?;
    if cfg.jobs == Some(0) {
        return Err(ConfigError::Invalid("jobs must be at least 1".into()));
    }
    cfg.scenario
        .validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_str(&text)
}

impl RunConfig {
    /// The configuration with all defaults filled in.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use randhyp::scenarios::OgawaSpec;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse_str("seed = 7\n[scenario]\nkind = \"ogawa\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.output_dir, PathBuf::from("randhyp-out"));
        assert_eq!(cfg.scenario, ScenarioSpec::Ogawa(OgawaSpec::default()));
        let again = parse_str(&cfg.resolved_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse_str("seed = 7\n[scenario]\nkind = \"ogawa\"\nepsilonn = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("epsilonn"), "{e}");
        let e = parse_str("seed = 7\nsede = 1\n[scenario]\nkind = \"ogawa\"\n").unwrap_err();
        assert!(e.to_string().contains("sede"), "{e}");
    }

    #[test]
    fn seed_is_mandatory() {
        let e = parse_str("[scenario]\nkind = \"calibration\"\n").unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
    }

    #[test]
    fn ladder_ratio_rejected() {
        let e =
            parse_str("seed = 1\n[scenario]\nkind = \"geometric-wave\"\n[scenario.ladder]\nratio = 1.0\n").unwrap_err();
        assert!(matches!(e, ConfigError::Invalid(_)));
        assert!(e.to_string().contains("ratio"), "{e}");
    }

    #[test]
    fn nested_type_error_has_path() {
        let e = parse_str("seed = 1\njobs = \"many\"\n[scenario]\nkind = \"calibration\"\n").unwrap_err();
        assert!(e.to_string().contains("jobs"), "{e}");
    }
}
