//! Service configuration: a TOML document plus `LABRUN_*` environment overrides.
//!
//! ```toml
//! data_dir = "labrun-data"
//! port = 8080
//! step_delay_ms = 0
//! event_buffer = 256
//! proposer_url = "http://127.0.0.1:9000/propose"
//! validator_url = "http://127.0.0.1:9000/validate"
//!
//! [detector]
//! alpha = 0.9
//!
//! [gp]
//! length_scale = 0.2
//! noise = 1e-4
//! candidates = 2048
//!
//! [provider]
//! fixtures = true
//! dir = "protocols"
//! url = "http://127.0.0.1:9000/generate"
//!
//! [datasets]
//! rpe = "data/rpe.csv"
//!
//! [[envs]]
//! id = "small"
//! max_pipette_volume = 5.0
//! ```
//!
//! Overrides: `LABRUN_DATA_DIR`, `LABRUN_PORT`, `LABRUN_STEP_DELAY_MS`, `LABRUN_EVENT_BUFFER`,
//! `LABRUN_DETECTOR_ALPHA`, `LABRUN_GP_LENGTH_SCALE`, `LABRUN_GP_NOISE`, `LABRUN_GP_CANDIDATES`,
//! `LABRUN_PROVIDER_FIXTURES`, `LABRUN_PROVIDER_DIR`, `LABRUN_PROVIDER_URL`,
//! `LABRUN_PROPOSER_URL`, `LABRUN_VALIDATOR_URL`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use labrun_core::detector::DetectorConfig;
use labrun_core::env::EnvConfig;
use labrun_core::optimizer::GpConfig;
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "LABRUN_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub alpha: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            alpha: DetectorConfig::default().alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpSection {
    pub length_scale: f64,
    pub noise: f64,
    pub candidates: usize,
}

impl Default for GpSection {
    fn default() -> Self {
        let gp = GpConfig::default();
        Self {
            length_scale: gp.length_scale,
            noise: gp.noise,
            candidates: gp.candidates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    /// Serve the bundled transcripts for their queries.
    pub fixtures: bool,
    /// Directory of `<slug>.blp` protocol files.
    pub dir: Option<PathBuf>,
    /// Remote generator endpoint.
    pub url: Option<String>,
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self {
            fixtures: true,
            dir: None,
            url: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub port: u16,
    /// Pause between micro-phases; 0 runs as fast as possible.
    pub step_delay_ms: u64,
    /// Per-run subscriber buffer; slower consumers are disconnected with a resume cursor.
    pub event_buffer: usize,
    pub detector: DetectorSection,
    pub gp: GpSection,
    pub provider: ProviderSection,
    pub proposer_url: Option<String>,
    pub validator_url: Option<String>,
    pub datasets: BTreeMap<String, PathBuf>,
    pub envs: Vec<EnvConfig>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("labrun-data"),
            port: 8080,
            step_delay_ms: 0,
            event_buffer: 256,
            detector: DetectorSection::default(),
            gp: GpSection::default(),
            provider: ProviderSection::default(),
            proposer_url: None,
            validator_url: None,
            datasets: BTreeMap::new(),
            envs: Vec::new(),
        }
    }
}

fn parse_var<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: T::Err| ConfigError::Invalid {
            key: key.to_string(),
            message: e.to_string(),
        })
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    /// File (if any), then process environment overrides.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        config.apply_overrides(std::env::vars())?;
        Ok(config)
    }

    /// Applies `LABRUN_*` variables; unknown `LABRUN_*` names are rejected.
    pub fn apply_overrides(
        &mut self,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<(), ConfigError> {
        for (name, value) in vars {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            match key {
                "DATA_DIR" => self.data_dir = PathBuf::from(value),
                "PORT" => self.port = parse_var(&name, &value)?,
                "STEP_DELAY_MS" => self.step_delay_ms = parse_var(&name, &value)?,
                "EVENT_BUFFER" => self.event_buffer = parse_var(&name, &value)?,
                "DETECTOR_ALPHA" => self.detector.alpha = parse_var(&name, &value)?,
                "GP_LENGTH_SCALE" => self.gp.length_scale = parse_var(&name, &value)?,
                "GP_NOISE" => self.gp.noise = parse_var(&name, &value)?,
                "GP_CANDIDATES" => self.gp.candidates = parse_var(&name, &value)?,
                "PROVIDER_FIXTURES" => self.provider.fixtures = parse_var(&name, &value)?,
                "PROVIDER_DIR" => self.provider.dir = Some(PathBuf::from(value)),
                "PROVIDER_URL" => self.provider.url = Some(value),
                "PROPOSER_URL" => self.proposer_url = Some(value),
                "VALIDATOR_URL" => self.validator_url = Some(value),
                "LOG" => {}
                _ => {
                    return Err(ConfigError::Invalid {
                        key: name,
                        message: "unknown override".into(),
                    })
                }
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: &str| {
            Err(ConfigError::Invalid {
                key: key.into(),
                message: message.into(),
            })
        };
        if !(self.detector.alpha > 0.0 && self.detector.alpha <= 1.0) {
            return bad("detector.alpha", "must be in (0, 1]");
        }
        if !(self.gp.length_scale.is_finite() && self.gp.length_scale > 0.0) {
            return bad("gp.length_scale", "must be positive");
        }
        if !(self.gp.noise.is_finite() && self.gp.noise >= 0.0) {
            return bad("gp.noise", "must be non-negative");
        }
        if self.gp.candidates == 0 {
            return bad("gp.candidates", "must be positive");
        }
        if self.event_buffer == 0 {
            return bad("event_buffer", "must be positive");
        }
        for env in &self.envs {
            env.validate().map_err(|e| ConfigError::Invalid {
                key: format!("envs.{}", env.id),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn gp_config(&self) -> GpConfig {
        GpConfig {
            length_scale: self.gp.length_scale,
            noise: self.gp.noise,
            candidates: self.gp.candidates,
            ..GpConfig::default()
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            alpha: self.detector.alpha,
            ..DetectorConfig::default()
        }
    }

    /// The default lab plus every configured catalog; a configured `default` replaces the builtin.
    pub fn env_catalog(&self) -> IndexMap<String, EnvConfig> {
        let mut out = IndexMap::new();
        let lab = EnvConfig::default_lab();
        out.insert(lab.id.clone(), lab);
        for env in &self.envs {
            out.insert(env.id.clone(), env.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_core_constants() {
        let c = ServiceConfig::default();
        assert_eq!(c.gp_config(), GpConfig::default());
        assert_eq!(c.detector_config().alpha, DetectorConfig::default().alpha);
        assert!(c.env_catalog().contains_key("default"));
    }

    #[test]
    fn toml_sections_and_env_catalogs_load() {
        let c = ServiceConfig::from_toml_str(
            r#"
            data_dir = "/tmp/x"
            [detector]
            alpha = 0.8
            [gp]
            candidates = 64
            [datasets]
            rpe = "rpe.csv"
            [[envs]]
            id = "small"
            max_pipette_volume = 5.0
            "#,
        )
        .unwrap();
        assert_eq!(c.detector.alpha, 0.8);
        assert_eq!(c.gp_config().candidates, 64);
        assert_eq!(c.gp.length_scale, GpSection::default().length_scale);
        assert_eq!(c.env_catalog()["small"].max_pipette_volume, 5.0);
        assert_eq!(c.datasets["rpe"], PathBuf::from("rpe.csv"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ServiceConfig::from_toml_str("colour = 1").is_err());
        assert!(ServiceConfig::from_toml_str("[detector]\nalpha = 0").is_err());
    }

    #[test]
    fn overrides_apply_and_ignore_foreign_vars() {
        let mut c = ServiceConfig::default();
        c.apply_overrides([
            ("LABRUN_PORT".to_string(), "9091".to_string()),
            ("LABRUN_GP_NOISE".into(), "0.01".into()),
            ("LABRUN_PROVIDER_URL".into(), "http://x/gen".into()),
            ("HOME".into(), "/root".into()),
        ])
        .unwrap();
        assert_eq!(c.port, 9091);
        assert_eq!(c.gp.noise, 0.01);
        assert_eq!(c.provider.url.as_deref(), Some("http://x/gen"));
        assert!(c
            .apply_overrides([("LABRUN_PORT".to_string(), "many".to_string())])
            .is_err());
        assert!(c
            .apply_overrides([("LABRUN_COLOUR".to_string(), "red".to_string())])
            .is_err());
    }
}
