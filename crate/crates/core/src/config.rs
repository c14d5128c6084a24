//! Experiment configuration files.
//!
//! A config is TOML with the sections `[link]`, `[signal]`, `[quadrature]`,
//! `[model]`, `[simulation]` and `[sweep]`. User files are merged over
//! [`DEFAULTS_TOML`]; unknown keys are rejected with their full path.
//!
//! ```
//! use megn::config::ExperimentConfig;
//!
//! let cfg = ExperimentConfig::from_toml_str("[link]\nnum_spans = 5\n").unwrap();
//! assert_eq!(cfg.link.num_spans, 5);
//! assert_eq!(cfg.model.memory, 50);
//! ```

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::QuadratureConfig;
use crate::linkmodel::{Link, LinkConfig, PulseShape};
use crate::megn::{ase_power, MegnConfig};
use crate::shaping::{make_composition, AmplitudeSource, ShapingScheme, QAM64_LEVELS};
use crate::ssfm::SimConfig;
use crate::stats::{AmplitudeComposition, Mapping};

/// The versioned defaults every config is merged over.
pub const DEFAULTS_TOML: &str = include_str!("../defaults.toml");

/// Keys that may appear although the defaults leave them out.
const OPTIONAL_KEYS: &[&str] = &[
    "quadrature.integration_bound_hz",
    "quadrature.singular_refinement",
    "sweep.blocklength",
    "sweep.mapping",
    "sweep.symbol_rate_gbd",
    "sweep.num_spans",
    "sweep.memory",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub symbol_rate_gbd: f64,
    pub rolloff: f64,
    /// Probabilities of the amplitudes 1, 3, 5, 7.
    pub pmf: Vec<f64>,
    pub blocklength: usize,
    /// `H`: 1, 2 or 4.
    pub mapping: u32,
    pub source: AmplitudeSource,
    pub launch_power_dbm: f64,
}

impl SignalConfig {
    pub fn pulse(&self) -> Result<PulseShape> {
        PulseShape::new(self.symbol_rate_gbd * 1e9, self.rolloff)
    }

    pub fn mapping(&self) -> Result<Mapping> {
        Mapping::from_h(self.mapping)
    }

    pub fn composition(&self) -> Result<AmplitudeComposition> {
        make_composition(&self.pmf, &QAM64_LEVELS, self.blocklength)
    }

    pub fn launch_power_w(&self) -> f64 {
        1e-3 * 10f64.powf(self.launch_power_dbm / 10.0)
    }

    pub fn scheme(&self) -> Result<ShapingScheme> {
        Ok(ShapingScheme::new(self.composition()?, self.mapping()?, self.launch_power_w())?.with_source(self.source))
    }
}

/// Artifacts a sweep can write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Artifact {
    Psd,
    Eta,
    Snr,
    Covariances,
    Kernels,
}

/// Named axes over which a sweep runs. A missing axis holds the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocklength: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol_rate_gbd: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_spans: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<Vec<usize>>,
    pub outputs: Vec<Artifact>,
    pub compare_sim: bool,
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub blocklength: usize,
    pub mapping: u32,
    pub symbol_rate_gbd: f64,
    pub num_spans: usize,
    pub memory: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub link: LinkConfig,
    pub signal: SignalConfig,
    pub quadrature: QuadratureConfig,
    pub model: MegnConfig,
    pub simulation: SimConfig,
    pub sweep: SweepSpec,
}

/// SI values derived from a config, for inspection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedParameters {
    pub link: Link,
    pub pulse: PulseShape,
    pub correlation_length: usize,
    pub launch_power_w: f64,
    pub ase_power_w: f64,
    pub steps_per_span: usize,
}

fn config_err(key: impl Into<String>, reason: impl std::fmt::Display) -> Error {
    Error::Config { key: key.into(), reason: reason.to_string() }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn check_keys(defaults: &toml::Table, user: &toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (defaults.get(k), v) {
            (Some(toml::Value::Table(d)), toml::Value::Table(u)) => check_keys(d, u, &path)?,
            (Some(toml::Value::Table(_)), _) => return Err(config_err(path, "expected a table")),
            (Some(_), _) => {}
            (None, _) if OPTIONAL_KEYS.contains(&path.as_str()) => {}
            (None, _) => return Err(config_err(path, "unknown key")),
        }
    }
    Ok(())
}

fn section<T: DeserializeOwned>(table: &toml::Table, key: &str) -> Result<T> {
    let v = table.get(key).cloned().ok_or_else(|| config_err(key, "missing section"))?;
    v.try_into().map_err(|e: toml::de::Error| config_err(key, e.message().trim()))
}

fn check_axis<T: Copy>(key: &str, axis: &Option<Vec<T>>, check: impl Fn(T) -> Result<()>) -> Result<()> {
    if let Some(values) = axis {
        if values.is_empty() {
            return Err(config_err(format!("sweep.{key}"), "axis must not be empty"));
        }
        for (i, v) in values.iter().enumerate() {
            check(*v).map_err(|e| config_err(format!("sweep.{key}[{i}]"), e))?;
        }
    }
    Ok(())
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::from_toml_str("").expect("embedded defaults are valid")
    }
}

impl ExperimentConfig {
    /// Parse a user config and merge it over the defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut base: toml::Table = DEFAULTS_TOML.parse().map_err(|e: toml::de::Error| config_err("<defaults>", e))?;
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err("<file>", e.message().trim()))?;
        check_keys(&base, &user, "")?;
        merge(&mut base, user);
        let cfg = ExperimentConfig {
            link: section(&base, "link")?,
            signal: section(&base, "signal")?,
            quadrature: section(&base, "quadrature")?,
            model: section(&base, "model")?,
            simulation: section(&base, "simulation")?,
            sweep: section(&base, "sweep")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    /// Fully resolved config as TOML. Stable for a given config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Range checks, reported against the offending key.
    pub fn validate(&self) -> Result<()> {
        let link = self.link.to_si().map_err(|e| keyed("link", e))?;
        self.signal.pulse().map_err(|e| keyed("signal", e))?;
        self.signal.mapping().map_err(|e| config_err("signal.mapping", e))?;
        if self.signal.pmf.len() != QAM64_LEVELS.len() {
            return Err(config_err("signal.pmf", format!("needs {} probabilities", QAM64_LEVELS.len())));
        }
        self.signal.scheme().map_err(|e| keyed("signal", e))?;
        self.quadrature.validate().map_err(|e| keyed("quadrature", e))?;
        self.model.validate().map_err(|e| keyed("model", e))?;
        if self.model.memory == 0 {
            return Err(config_err("model.memory", "must be at least 1"));
        }
        self.simulation.validate(&link).map_err(|e| keyed("simulation", e))?;
        let pmf = &self.signal.pmf;
        check_axis("blocklength", &self.sweep.blocklength, |n| {
            make_composition(pmf, &QAM64_LEVELS, n)?.correlation_length(Mapping::FourD).map(|_| ())
        })?;
        check_axis("mapping", &self.sweep.mapping, |h| Mapping::from_h(h).map(|_| ()))?;
        check_axis("symbol_rate_gbd", &self.sweep.symbol_rate_gbd, |r| {
            PulseShape::new(r * 1e9, self.signal.rolloff).map(|_| ())
        })?;
        let positive = |what: &'static str| {
            move |n: usize| if n == 0 { Err(Error::param(what, "must be at least 1")) } else { Ok(()) }
        };
        check_axis("num_spans", &self.sweep.num_spans, positive("num_spans"))?;
        check_axis("memory", &self.sweep.memory, positive("memory"))?;
        Ok(())
    }

    pub fn link(&self) -> Result<Link> {
        self.link.to_si()
    }

    pub fn derived(&self) -> Result<DerivedParameters> {
        let link = self.link()?;
        let pulse = self.signal.pulse()?;
        Ok(DerivedParameters {
            link,
            pulse,
            correlation_length: self.signal.composition()?.correlation_length(self.signal.mapping()?)?,
            launch_power_w: self.signal.launch_power_w(),
            ase_power_w: ase_power(&link, &pulse),
            steps_per_span: self.simulation.steps_per_span(&link)?,
        })
    }

    /// Cartesian product of the sweep axes, in row-major order
    /// (rate, spans, memory, mapping, blocklength).
    pub fn grid(&self) -> Vec<GridPoint> {
        let s = &self.sweep;
        let rates = s.symbol_rate_gbd.clone().unwrap_or_else(|| vec![self.signal.symbol_rate_gbd]);
        let spans = s.num_spans.clone().unwrap_or_else(|| vec![self.link.num_spans]);
        let mems = s.memory.clone().unwrap_or_else(|| vec![self.model.memory]);
        let maps = s.mapping.clone().unwrap_or_else(|| vec![self.signal.mapping]);
        let ns = s.blocklength.clone().unwrap_or_else(|| vec![self.signal.blocklength]);
        let mut out = Vec::with_capacity(rates.len() * spans.len() * mems.len() * maps.len() * ns.len());
        for &symbol_rate_gbd in &rates {
            for &num_spans in &spans {
                for &memory in &mems {
                    for &mapping in &maps {
                        for &blocklength in &ns {
                            out.push(GridPoint { blocklength, mapping, symbol_rate_gbd, num_spans, memory });
                        }
                    }
                }
            }
        }
        out
    }

    /// The config specialized to one grid point.
    pub fn at(&self, p: &GridPoint) -> ExperimentConfig {
        let mut c = self.clone();
        c.signal.blocklength = p.blocklength;
        c.signal.mapping = p.mapping;
        c.signal.symbol_rate_gbd = p.symbol_rate_gbd;
        c.link.num_spans = p.num_spans;
        c.model.memory = p.memory;
        c
    }
}

/// Attach a section prefix to a library error.
fn keyed(section: &str, e: Error) -> Error {
    match e {
        Error::Parameter { name, reason } => config_err(format!("{section}.{name}"), reason),
        Error::Config { .. } => e,
        other => config_err(section, other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_validate() {
        let c = ExperimentConfig::default();
        assert_eq!(c.link, LinkConfig::default());
        assert_eq!(c.model, MegnConfig::default());
        assert_eq!(c.simulation, SimConfig::default());
        assert_eq!(c.quadrature, QuadratureConfig::default());
        assert_eq!(c.grid().len(), 1);
        let d = c.derived().unwrap();
        assert_eq!(d.correlation_length, 25);
        assert_eq!(d.steps_per_span, 1000);
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = ExperimentConfig::from_toml_str("[sweep]\nmapping = [1, 2, 4]\nnum_spans = [5, 10]\n").unwrap();
        let again = ExperimentConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.to_toml(), again.to_toml());
        assert_eq!(c.grid().len(), 6);
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = ExperimentConfig::from_toml_str("[link]\nalpha = 0.2\n").unwrap_err();
        assert_eq!(e, Error::Config { key: "link.alpha".into(), reason: "unknown key".into() });
        let e = ExperimentConfig::from_toml_str("[bogus]\nx = 1\n").unwrap_err();
        assert!(matches!(e, Error::Config { key, .. } if key == "bogus"));
    }

    #[test]
    fn bad_axis_values_are_named() {
        let e = ExperimentConfig::from_toml_str("[sweep]\nmapping = [1, 3]\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "sweep.mapping[1]"), "{e}");
        let e = ExperimentConfig::from_toml_str("[sweep]\nblocklength = [100, 102]\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "sweep.blocklength[1]"), "{e}");
        let e = ExperimentConfig::from_toml_str("[sweep]\nmemory = []\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "sweep.memory"), "{e}");
    }

    #[test]
    fn range_errors_carry_the_section() {
        let e = ExperimentConfig::from_toml_str("[link]\nspan_length_km = -1.0\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "link.span_length_km"), "{e}");
        let e = ExperimentConfig::from_toml_str("[simulation]\nstep_km = 0.3\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "simulation.step_km"), "{e}");
        let e = ExperimentConfig::from_toml_str("[model]\nmode = \"exact\"\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "model"), "{e}");
    }

    #[test]
    fn grid_point_overrides_base() {
        let c = ExperimentConfig::from_toml_str("[sweep]\nblocklength = [40, 1000]\nnum_spans = [3]\n").unwrap();
        let g = c.grid();
        assert_eq!(g.len(), 2);
        let at = c.at(&g[1]);
        assert_eq!(at.signal.blocklength, 1000);
        assert_eq!(at.link.num_spans, 3);
    }
}
