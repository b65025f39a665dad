//! TOML configuration shared by the subcommands.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ptxlat_core::analysis::AnalysisConfig;
use ptxlat_core::codegen::DeviceLimits;
use ptxlat_core::runner::{ExternalToolchainConfig, DEFAULT_TIMEOUT_SECONDS};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub device: DeviceSection,
    #[serde(default)]
    pub analysis: Option<AnalysisConfig>,
    #[serde(default)]
    pub external: ExternalSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub l1_bytes: Option<u64>,
    pub l2_bytes: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSection {
    pub compile_command_template: Option<String>,
    pub launch_command_template: Option<String>,
    pub trace_command_template: Option<String>,
    pub working_dir: Option<PathBuf>,
    pub timeout_seconds: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub jobs: Option<usize>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Capacities from flags, then the config file, then A100 defaults.
    pub fn device(&self, l1: Option<u64>, l2: Option<u64>) -> DeviceLimits {
        let d = DeviceLimits::default();
        DeviceLimits {
            l1_bytes: l1.or(self.device.l1_bytes).unwrap_or(d.l1_bytes),
            l2_bytes: l2.or(self.device.l2_bytes).unwrap_or(d.l2_bytes),
        }
    }

    /// External toolchain from `PTXLAT_*` environment variables, falling
    /// back to the `[external]` section.
    pub fn external(&self) -> Result<ExternalToolchainConfig> {
        let env = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let e = &self.external;
        let need = |v: Option<String>, name: &str, var: &str| {
            v.with_context(|| {
                format!("external backend needs {name} ([external] in the config or {var})")
            })
        };
        let cfg = ExternalToolchainConfig {
            compile_command_template: need(
                env("PTXLAT_COMPILE_CMD").or_else(|| e.compile_command_template.clone()),
                "compile_command_template",
                "PTXLAT_COMPILE_CMD",
            )?,
            launch_command_template: need(
                env("PTXLAT_LAUNCH_CMD").or_else(|| e.launch_command_template.clone()),
                "launch_command_template",
                "PTXLAT_LAUNCH_CMD",
            )?,
            trace_command_template: need(
                env("PTXLAT_TRACE_CMD").or_else(|| e.trace_command_template.clone()),
                "trace_command_template",
                "PTXLAT_TRACE_CMD",
            )?,
            working_dir: env("PTXLAT_WORK_DIR")
                .map(PathBuf::from)
                .or_else(|| e.working_dir.clone())
                .unwrap_or_else(|| PathBuf::from("ptxlat-work")),
            timeout_seconds: e.timeout_seconds.unwrap_or(DEFAULT_TIMEOUT_SECONDS),
        };
        cfg.check()?;
        Ok(cfg)
    }
}
