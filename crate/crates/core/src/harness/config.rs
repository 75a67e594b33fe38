use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use super::presets::{defaults, ReferenceConfig};
use crate::collocation::NodeFamily;
use crate::controller::ControllerConfig;
use crate::error::{Result, SdcError};
use crate::problems::{AcParams, NlsParams, QuenchParams, VdpParams};
use crate::sweeper::{InnerSolve, PrecondKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Dahlquist,
    Vdp,
    VdpTransition,
    Quench,
    Nls,
    AllenCahn,
}

impl Preset {
    pub const ALL: [Preset; 6] =
        [Preset::Dahlquist, Preset::Vdp, Preset::VdpTransition, Preset::Quench, Preset::Nls, Preset::AllenCahn];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Dahlquist => "dahlquist",
            Preset::Vdp => "vdp",
            Preset::VdpTransition => "vdp-transition",
            Preset::Quench => "quench",
            Preset::Nls => "nls",
            Preset::AllenCahn => "allen-cahn",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = SdcError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| SdcError::UnknownPreset(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DahlquistParams {
    pub lambda: f64,
}

/// Problem parameters of a preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ProblemParams {
    Dahlquist(DahlquistParams),
    Vdp(VdpParams),
    Quench(QuenchParams),
    Nls(NlsParams),
    AllenCahn(AcParams),
}

impl ProblemParams {
    fn patched(&self, patch: Option<&Table>) -> Result<Self> {
        Ok(match self {
            ProblemParams::Dahlquist(p) => ProblemParams::Dahlquist(overlay(p, patch, "problem")?),
            ProblemParams::Vdp(p) => ProblemParams::Vdp(overlay(p, patch, "problem")?),
            ProblemParams::Quench(p) => ProblemParams::Quench(overlay(p, patch, "problem")?),
            ProblemParams::Nls(p) => ProblemParams::Nls(overlay(p, patch, "problem")?),
            ProblemParams::AllenCahn(p) => ProblemParams::AllenCahn(overlay(p, patch, "problem")?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub nodes: NodeFamily,
    pub m: usize,
    pub preconditioner: PrecondKind,
    /// Inner tolerance relative to the current residual; absent means the
    /// implicit systems are solved to `inner_tol`.
    pub inner_ratio: Option<f64>,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl MethodConfig {
    pub fn inner(&self) -> InnerSolve {
        InnerSolve { ratio: self.inner_ratio, tol: self.inner_tol, max_iter: self.inner_max_iter }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PintConfig {
    /// Steps per block; 1 runs the serial controller.
    pub block_steps: usize,
    pub pipelined: bool,
    /// Workers for node-parallel sweeps; 1 sweeps sequentially.
    pub workers: usize,
}

impl Default for PintConfig {
    fn default() -> Self {
        PintConfig { block_steps: 1, pipelined: false, workers: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotFormat {
    None,
    Csv,
    Binary,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub snapshot: SnapshotFormat,
    /// Compare the final state against the preset's reference.
    pub global_error: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out"), snapshot: SnapshotFormat::Csv, global_error: true }
    }
}

/// Fully resolved experiment definition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub t0: f64,
    pub t_end: f64,
    pub problem: ProblemParams,
    pub method: MethodConfig,
    pub controller: ControllerConfig,
    /// When set, `controller.r_tol` follows `r_tol_factor * eps_tol`.
    pub r_tol_factor: Option<f64>,
    pub pint: PintConfig,
    pub output: OutputConfig,
    pub reference: ReferenceConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: String,
    t0: Option<f64>,
    t_end: Option<f64>,
    problem: Option<Table>,
    method: Option<Table>,
    controller: Option<Table>,
    pint: Option<Table>,
    output: Option<Table>,
}

fn config_err(msg: impl fmt::Display) -> SdcError {
    SdcError::Config(msg.to_string())
}

/// Serialize `base`, replace the keys present in `patch` and read it back,
/// so every override is type-checked against the target struct.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: Option<&Table>, section: &str) -> Result<T> {
    let mut value = Value::try_from(base).map_err(|e| config_err(format!("[{section}]: {e}")))?;
    let table = value.as_table_mut().ok_or_else(|| config_err(format!("[{section}] is not a table")))?;
    for (k, v) in patch.into_iter().flatten() {
        table.insert(k.clone(), v.clone());
    }
    value.try_into().map_err(|e| config_err(format!("[{section}]: {e}")))
}

/// Parse `key=value` with a dotted key. The value is read as TOML and falls
/// back to a bare string.
pub fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| config_err(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(config_err(format!("override `{spec}` has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn apply_override(doc: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap_or_default();
    let mut table = doc;
    for p in parts {
        let entry = table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = entry.as_table_mut().ok_or_else(|| config_err(format!("`{p}` in `{key}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Defaults of `preset` with no file.
    pub fn from_preset(preset: Preset) -> Self {
        let d = defaults(preset);
        let mut controller = d.controller;
        if let Some(f) = d.r_tol_factor {
            controller.r_tol = f * controller.eps_tol;
        }
        RunConfig {
            preset,
            t0: d.t0,
            t_end: d.t_end,
            problem: d.problem,
            method: d.method,
            controller,
            r_tol_factor: d.r_tol_factor,
            pint: PintConfig::default(),
            output: OutputConfig { dir: PathBuf::from("out").join(preset.as_str()), ..OutputConfig::default() },
            reference: d.reference,
        }
    }

    /// Read a TOML document, apply dotted-key overrides, resolve against the
    /// preset defaults and validate.
    pub fn from_toml_str(text: &str, overrides: &[(String, Value)]) -> Result<Self> {
        let mut doc: Table = text.parse().map_err(|e| config_err(format!("parse error: {e}")))?;
        for (k, v) in overrides {
            apply_override(&mut doc, k, v.clone())?;
        }
        Self::from_table(doc)
    }

    pub fn from_table(doc: Table) -> Result<Self> {
        if !doc.contains_key("preset") {
            return Err(config_err("missing `preset`"));
        }
        let raw: RawConfig = Value::Table(doc).try_into().map_err(config_err)?;
        let preset: Preset = raw.preset.parse()?;
        let base = RunConfig::from_preset(preset);

        let mut controller_patch = raw.controller.clone();
        let mut r_tol_factor = base.r_tol_factor;
        if let Some(p) = controller_patch.as_mut() {
            if let Some(v) = p.remove("r_tol_factor") {
                let f = v.as_float().or_else(|| v.as_integer().map(|i| i as f64));
                r_tol_factor = Some(f.ok_or_else(|| config_err("controller.r_tol_factor must be a number"))?);
            } else if p.contains_key("r_tol") {
                r_tol_factor = None;
            }
        }
        let mut controller: ControllerConfig = overlay(&base.controller, controller_patch.as_ref(), "controller")?;
        if let Some(f) = r_tol_factor {
            controller.r_tol = f * controller.eps_tol;
        }
        let cfg = RunConfig {
            preset,
            t0: raw.t0.unwrap_or(base.t0),
            t_end: raw.t_end.unwrap_or(base.t_end),
            problem: base.problem.patched(raw.problem.as_ref())?,
            method: overlay(&base.method, raw.method.as_ref(), "method")?,
            controller,
            r_tol_factor,
            pint: overlay(&base.pint, raw.pint.as_ref(), "pint")?,
            output: overlay(&base.output, raw.output.as_ref(), "output")?,
            reference: base.reference,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Preset defaults plus overrides.
    pub fn from_overrides(preset: Preset, overrides: &[(String, Value)]) -> Result<Self> {
        Self::from_toml_str(&format!("preset = \"{preset}\""), overrides)
    }

    /// Set the tolerance, keeping `r_tol` tied to it when a factor is set.
    pub fn set_eps_tol(&mut self, eps_tol: f64) {
        self.controller.eps_tol = eps_tol;
        if let Some(f) = self.r_tol_factor {
            self.controller.r_tol = f * eps_tol;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > self.t0) || !self.t0.is_finite() || !self.t_end.is_finite() {
            return Err(config_err("need finite t0 < t_end"));
        }
        if self.method.m == 0 {
            return Err(config_err("method.m must be positive"));
        }
        if self.pint.block_steps == 0 || self.pint.workers == 0 {
            return Err(config_err("pint.block_steps and pint.workers must be positive"));
        }
        if let Some(f) = self.r_tol_factor {
            if !(f > 0.0) {
                return Err(config_err("controller.r_tol_factor must be positive"));
            }
        }
        self.controller.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::Strategy;

    #[test]
    fn presets_resolve_and_validate() {
        for p in Preset::ALL {
            let c = RunConfig::from_preset(p);
            c.validate().unwrap();
            assert_eq!(RunConfig::from_overrides(p, &[]).unwrap(), c);
            assert_eq!(p.as_str().parse::<Preset>().unwrap(), p);
        }
    }

    #[test]
    fn file_sections_override_defaults() {
        let text = r#"
            preset = "vdp"
            t_end = 2.0
            [problem]
            mu = 3.0
            [method]
            m = 4
            preconditioner = "lu"
            [controller]
            strategy = "dt-adaptive"
            eps_tol = 1e-7
            [pint]
            workers = 2
        "#;
        let c = RunConfig::from_toml_str(text, &[]).unwrap();
        assert_eq!(c.t_end, 2.0);
        assert!(matches!(c.problem, ProblemParams::Vdp(p) if p.mu == 3.0 && p.u0 == 1.1));
        assert_eq!(c.method.m, 4);
        assert_eq!(c.method.preconditioner, PrecondKind::Lu);
        assert_eq!(c.controller.strategy, Strategy::DtAdaptive);
        assert_eq!(c.controller.r_tol, c.r_tol_factor.unwrap() * 1e-7);
        assert_eq!(c.pint.workers, 2);
    }

    #[test]
    fn dotted_overrides_are_type_checked() {
        let o = vec![parse_override("controller.eps_tol=1e-8").unwrap(), parse_override("controller.strategy=fixed").unwrap()];
        let c = RunConfig::from_overrides(Preset::Dahlquist, &o).unwrap();
        assert_eq!(c.controller.eps_tol, 1e-8);
        assert_eq!(c.controller.strategy, Strategy::Fixed);

        let explicit = vec![parse_override("controller.r_tol=1e-9").unwrap()];
        let c = RunConfig::from_overrides(Preset::Dahlquist, &explicit).unwrap();
        assert_eq!((c.controller.r_tol, c.r_tol_factor), (1e-9, None));

        for bad in ["controller.eps_tol=\"x\"", "controller.bogus=1", "problem.mu=2", "method.m=0", "extra=1"] {
            let o = vec![parse_override(bad).unwrap()];
            assert!(matches!(RunConfig::from_overrides(Preset::Dahlquist, &o), Err(SdcError::Config(_))), "{bad}");
        }
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn unknown_preset_and_syntax_errors() {
        assert!(matches!(RunConfig::from_toml_str("preset = \"lorenz\"", &[]), Err(SdcError::UnknownPreset(_))));
        assert!(matches!(RunConfig::from_toml_str("preset = ", &[]), Err(SdcError::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("t0 = 1.0", &[]), Err(SdcError::Config(_))));
    }
}
