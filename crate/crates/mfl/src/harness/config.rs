use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::meanfield::NmfConfig;
use crate::quadrature::{QuadratureSpec, Scheme};
use crate::tap_amp::{AmpConfig, Onsager};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Nmf,
    Amp,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Nmf => "nmf",
            Algorithm::Amp => "amp",
        }
    }

    /// Threshold on `V(Ŵ)` used by the phase-diagram aggregate.
    pub fn v_epsilon(&self) -> f64 {
        match self {
            Algorithm::Nmf => 1e-4,
            Algorithm::Amp => 5e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NmfOverrides {
    pub max_iters: Option<usize>,
    pub min_iters: Option<usize>,
    pub conv_threshold: Option<f64>,
    pub init_epsilon: Option<f64>,
}

impl NmfOverrides {
    pub fn apply(&self, mut c: NmfConfig) -> NmfConfig {
        c.max_iters = self.max_iters.unwrap_or(c.max_iters);
        c.min_iters = self.min_iters.unwrap_or(c.min_iters);
        c.conv_threshold = self.conv_threshold.unwrap_or(c.conv_threshold);
        c.init_epsilon = self.init_epsilon.unwrap_or(c.init_epsilon);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmpOverrides {
    pub gamma: Option<f64>,
    pub onsager: Option<Onsager>,
    pub max_iters: Option<usize>,
    pub min_iters: Option<usize>,
    pub conv_threshold: Option<f64>,
    pub init_epsilon: Option<f64>,
}

impl AmpOverrides {
    pub fn apply(&self, mut c: AmpConfig) -> AmpConfig {
        c.gamma = self.gamma.unwrap_or(c.gamma);
        c.onsager = self.onsager.unwrap_or(c.onsager);
        c.max_iters = self.max_iters.unwrap_or(c.max_iters);
        c.min_iters = self.min_iters.unwrap_or(c.min_iters);
        c.conv_threshold = self.conv_threshold.unwrap_or(c.conv_threshold);
        c.init_epsilon = self.init_epsilon.unwrap_or(c.init_epsilon);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub k: usize,
    pub d: usize,
    pub nu: f64,
    pub delta_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub replicates: usize,
    pub base_seed: u64,
    /// Quadrature for the Dirichlet side; `None` selects the default for `k`.
    pub quad: Option<QuadratureSpec>,
    pub nmf_cfg: NmfOverrides,
    pub amp_cfg: AmpOverrides,
    pub output_dir: PathBuf,
    /// Record wall-clock times. Off by default so that outputs are
    /// byte-identical across reruns.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: Algorithm::Nmf,
            k: 2,
            d: 400,
            nu: 1.0,
            delta_grid: vec![1.0],
            beta_grid: vec![1.0, 2.5, 4.1, 6.0, 9.0],
            replicates: 20,
            base_seed: 0,
            quad: None,
            nmf_cfg: NmfOverrides::default(),
            amp_cfg: AmpOverrides::default(),
            output_dir: PathBuf::from("out"),
            timing: false,
        }
    }
}

/// Parses `grid:N` or `mc:N` (also `monte_carlo:N`).
pub fn parse_quad(s: &str) -> Result<QuadratureSpec> {
    let (scheme, nodes) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("quadrature must look like grid:N or mc:N, got {s:?}")))?;
    let nodes: usize = nodes.trim().parse().map_err(|_| Error::Config(format!("bad node count in {s:?}")))?;
    let spec = match scheme.trim() {
        "grid" => QuadratureSpec::grid(nodes),
        "mc" | "monte_carlo" => QuadratureSpec::monte_carlo(nodes),
        other => return Err(Error::Config(format!("unknown quadrature scheme {other:?}"))),
    };
    spec.validate()?;
    Ok(spec)
}

pub fn format_quad(q: &QuadratureSpec) -> String {
    match q.scheme {
        Scheme::Grid => format!("grid:{}", q.nodes),
        Scheme::MonteCarlo => format!("mc:{}", q.nodes),
    }
}

/// Interprets one `key=value` pair: JSON when it parses, comma-separated
/// numbers for grids, the `grid:N` shorthand for `quad`, a string otherwise.
fn parse_value(key: &str, raw: &str) -> Result<Value> {
    let raw = raw.trim();
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        if !(key.ends_with("_grid") && v.is_number()) {
            return Ok(v);
        }
    }
    if key.ends_with("_grid") {
        let vals = raw
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number {t:?} in {key}"))))
            .collect::<Result<Vec<_>>>()?;
        return Ok(serde_json::to_value(vals)?);
    }
    if key == "quad" {
        return Ok(serde_json::to_value(parse_quad(raw)?)?);
    }
    Ok(Value::String(raw.to_string()))
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Reads a flat `key=value` file or a JSON object.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::load_text(text, &[])
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// File contents (if any) with `key=value` overrides applied on top.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::load_text(&text, overrides)
    }

    fn load_text(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut map = if text.trim_start().starts_with('{') {
            match serde_json::from_str::<Value>(text).map_err(|e| Error::Config(e.to_string()))? {
                Value::Object(m) => m,
                _ => return Err(Error::Config("JSON config must be an object".into())),
            }
        } else {
            let mut m = Map::new();
            for (k, v) in parse_pairs(text)? {
                m.insert(k.clone(), parse_value(&k, &v)?);
            }
            m
        };
        for (k, v) in overrides {
            map.insert(k.clone(), parse_value(k, v)?);
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn quad(&self) -> QuadratureSpec {
        self.quad.unwrap_or_else(|| QuadratureSpec::default_for(self.k))
    }

    pub fn nmf_config(&self, seed: u64) -> NmfConfig {
        let mut c = self.nmf_cfg.apply(NmfConfig::new(self.k, seed));
        c.quad = self.quad();
        c
    }

    pub fn amp_config(&self, seed: u64) -> AmpConfig {
        let mut c = self.amp_cfg.apply(AmpConfig::new(self.k, seed));
        c.quad = self.quad();
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta_grid.is_empty() || self.beta_grid.is_empty() {
            return Err(Error::Config("delta_grid and beta_grid must be nonempty".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.k < 2 || self.d == 0 {
            return Err(Error::Config("need k >= 2 and d >= 1".into()));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::Config(format!("nu must be positive, got {}", self.nu)));
        }
        if self.delta_grid.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("delta_grid entries must be positive".into()));
        }
        if self.beta_grid.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("beta_grid entries must be nonnegative".into()));
        }
        self.nmf_config(0).validate().map_err(|e| Error::Config(e.to_string()))?;
        self.amp_config(0).validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_and_json_agree() {
        let kv = "algorithm=amp\nk=2\nd=50\nbeta_grid=1,2.5\ndelta_grid=1\nquad=grid:128\n# comment\nreplicates=3\n";
        let js = r#"{"algorithm":"amp","k":2,"d":50,"beta_grid":[1,2.5],"delta_grid":[1],
            "quad":{"scheme":"grid","nodes":128,"tolerance":1e-8},"replicates":3}"#;
        assert_eq!(ExperimentConfig::from_text(kv).unwrap(), ExperimentConfig::from_text(js).unwrap());
    }

    #[test]
    fn overrides_win() {
        let over = vec![("d".to_string(), "77".to_string()), ("nmf_cfg".to_string(), r#"{"max_iters":5,"min_iters":2}"#.to_string())];
        let c = ExperimentConfig::load_text("d=10\n", &over).unwrap();
        assert_eq!(c.d, 77);
        assert_eq!(c.nmf_config(1).max_iters, 5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(ExperimentConfig::from_text("replicates=0"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_text("beta_grid=[]"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_text("colour=red"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_text("k"), Err(Error::Config(_))));
    }

    #[test]
    fn quad_shorthand() {
        assert_eq!(parse_quad("grid:256").unwrap(), QuadratureSpec::grid(256));
        assert_eq!(format_quad(&parse_quad("mc:20000").unwrap()), "mc:20000");
        assert!(parse_quad("grid:8").is_err());
    }
}
