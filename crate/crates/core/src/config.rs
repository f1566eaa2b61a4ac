//! Experiment configuration: a flat `dotted.key = value` text format (JSON
//! also accepted), validation, and built-in presets.
//!
//! ```text
//! qubit.omega = 2
//! qubit.initial_bloch = 1, 0, 0
//! ancilla.0.omega = 2
//! ancilla.0.gamma = 0.6
//! ancilla.0.kappa = 1
//! ancilla.0.sigma = y
//! probe.gamma = 0.8
//! probe.operator = x
//! numerics.dt = 1e-3
//! numerics.t_final = 10
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::filter::{FilterModel, SmeScheme};
use crate::master::uniform_grid;
use crate::operator::DensityMatrix;
use crate::slh::{build_ancilla_bank, build_augmented, build_probed, AncillaParams, FieldMode, QubitCoupling, QubitOpKind, SlhModel};

pub const PRESET_PAPER_FIG4: &str = "paper-fig4";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AncillaConfig {
    pub omega: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub sigma: QubitOpKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub gamma: f64,
    pub operator: QubitOpKind,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { gamma: 0.0, operator: QubitOpKind::X }
    }
}

/// Frequency window for the `spectrum` command; unset bounds follow the
/// ancilla lines (center ± 10 linewidths).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumConfig {
    pub omega_min: Option<f64>,
    pub omega_max: Option<f64>,
    pub points: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { omega_min: None, omega_max: None, points: 401 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Spectrum CSV to fit; defaults to `spectrum.csv` in the output directory.
    pub input: Option<PathBuf>,
    pub components: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { input: None, components: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub omega_q: f64,
    #[serde(default)]
    pub ancillas: Vec<AncillaConfig>,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub field_mode: FieldMode,
    #[serde(default = "default_bloch")]
    pub initial_bloch: [f64; 3],
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub scheme: SmeScheme,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub fit: FitConfig,
}

fn default_bloch() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

fn default_truncation() -> usize {
    5
}

fn default_n_traj() -> usize {
    100
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Built-in presets. `paper-fig4`: resonant qubit and ancilla at
    /// frequency 2, one `sigma_y`-coupled ancilla with `kappa = 1`,
    /// `gamma = 0.6`, a `sigma_x` probe with `gamma_q = 0.8`, qubit starting
    /// in `(I + sigma_x) / 2`, 500 trajectories.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            PRESET_PAPER_FIG4 => Ok(Self {
                omega_q: 2.0,
                ancillas: vec![AncillaConfig { omega: 2.0, gamma: 0.6, kappa: 1.0, sigma: QubitOpKind::Y }],
                probe: ProbeConfig { gamma: 0.8, operator: QubitOpKind::X },
                field_mode: FieldMode::Independent,
                initial_bloch: [1.0, 0.0, 0.0],
                truncation: 5,
                dt: 1e-3,
                t_final: 10.0,
                n_traj: 500,
                base_seed: 0,
                scheme: SmeScheme::Kraus,
                output_dir: default_output(),
                spectrum: SpectrumConfig::default(),
                fit: FitConfig::default(),
            }),
            other => Err(Error::config("preset", format!("unknown preset `{other}` (available: {PRESET_PAPER_FIG4})"))),
        }
    }

    /// Reads a config file; content starting with `{` is parsed as JSON.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg = if text.trim_start().starts_with('{') {
            serde_json::from_str::<ExperimentConfig>(text).map_err(|e| Error::config("json", e.to_string()))?
        } else {
            parse_key_values(text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        finite("qubit.omega", self.omega_q)?;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(Error::config("t_final", format!("must be positive, got {}", self.t_final)));
        }
        if self.dt > self.t_final {
            return Err(Error::config("dt", format!("{} exceeds t_final = {}", self.dt, self.t_final)));
        }
        if self.truncation < 2 {
            return Err(Error::config("truncation", format!("must be at least 2, got {}", self.truncation)));
        }
        if self.n_traj < 1 {
            return Err(Error::config("n_traj", "must be at least 1"));
        }
        let [x, y, z] = self.initial_bloch;
        for (i, v) in self.initial_bloch.iter().enumerate() {
            finite(&format!("qubit.initial_bloch[{i}]"), *v)?;
        }
        if (x * x + y * y + z * z).sqrt() > 1.0 + 1e-12 {
            return Err(Error::config("initial_bloch", "Bloch vector norm exceeds 1"));
        }
        if !(self.probe.gamma >= 0.0) || !self.probe.gamma.is_finite() {
            return Err(Error::config("probe.gamma", format!("must be non-negative, got {}", self.probe.gamma)));
        }
        for (k, a) in self.ancillas.iter().enumerate() {
            finite(&format!("ancilla.{k}.omega"), a.omega)?;
            if !(a.gamma > 0.0) || !a.gamma.is_finite() {
                return Err(Error::config(format!("ancilla.{k}.gamma"), format!("must be positive, got {}", a.gamma)));
            }
            if !(a.kappa >= 0.0) || !a.kappa.is_finite() {
                return Err(Error::config(format!("ancilla.{k}.kappa"), format!("must be non-negative, got {}", a.kappa)));
            }
        }
        if self.spectrum.points < 2 {
            return Err(Error::config("spectrum.points", "need at least 2 points"));
        }
        if let (Some(lo), Some(hi)) = (self.spectrum.omega_min, self.spectrum.omega_max) {
            if !(hi > lo) {
                return Err(Error::config("spectrum.omega_max", "must exceed spectrum.omega_min"));
            }
        }
        if self.fit.components < 1 {
            return Err(Error::config("fit.components", "must be at least 1"));
        }
        Ok(())
    }

    /// Key-value text that [`ExperimentConfig::parse`] reads back unchanged.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let [x, y, z] = self.initial_bloch;
        let _ = writeln!(s, "qubit.omega = {:?}", self.omega_q);
        let _ = writeln!(s, "qubit.initial_bloch = {x:?}, {y:?}, {z:?}");
        for (k, a) in self.ancillas.iter().enumerate() {
            let _ = writeln!(s, "ancilla.{k}.omega = {:?}", a.omega);
            let _ = writeln!(s, "ancilla.{k}.gamma = {:?}", a.gamma);
            let _ = writeln!(s, "ancilla.{k}.kappa = {:?}", a.kappa);
            let _ = writeln!(s, "ancilla.{k}.sigma = {}", a.sigma);
        }
        let _ = writeln!(s, "probe.gamma = {:?}", self.probe.gamma);
        let _ = writeln!(s, "probe.operator = {}", self.probe.operator);
        let _ = writeln!(s, "field_mode = {}", self.field_mode);
        let _ = writeln!(s, "numerics.truncation = {}", self.truncation);
        let _ = writeln!(s, "numerics.dt = {:?}", self.dt);
        let _ = writeln!(s, "numerics.t_final = {:?}", self.t_final);
        let _ = writeln!(s, "ensemble.n_traj = {}", self.n_traj);
        let _ = writeln!(s, "ensemble.base_seed = {}", self.base_seed);
        let _ = writeln!(s, "filter.scheme = {}", self.scheme);
        let _ = writeln!(s, "output.dir = {}", self.output_dir.display());
        if let Some(v) = self.spectrum.omega_min {
            let _ = writeln!(s, "spectrum.omega_min = {v:?}");
        }
        if let Some(v) = self.spectrum.omega_max {
            let _ = writeln!(s, "spectrum.omega_max = {v:?}");
        }
        let _ = writeln!(s, "spectrum.points = {}", self.spectrum.points);
        if let Some(p) = &self.fit.input {
            let _ = writeln!(s, "fit.input = {}", p.display());
        }
        let _ = writeln!(s, "fit.components = {}", self.fit.components);
        s
    }

    /// Hex SHA-256 of the serialized config (first 16 digits).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.serialize().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn ancilla_params(&self) -> Result<Vec<AncillaParams<f64>>> {
        self.ancillas
            .iter()
            .map(|a| AncillaParams::new(a.omega, a.gamma, a.kappa, a.sigma, self.truncation))
            .collect()
    }

    /// Qubit + ancilla bank with direct couplings and the probe channel.
    pub fn build_model(&self) -> Result<SlhModel<f64>> {
        let params = self.ancilla_params()?;
        let bank = build_ancilla_bank(&params, self.field_mode)?;
        let aug = build_augmented(self.omega_q, &bank, &params)?;
        build_probed(&aug, self.probe.gamma, QubitCoupling::new(self.probe.operator))
    }

    pub fn filter_model(&self) -> Result<FilterModel<f64>> {
        Ok(FilterModel::from_model(&self.build_model()?)?.with_scheme(self.scheme))
    }

    /// Qubit at `initial_bloch`, every ancilla in vacuum.
    pub fn initial_state(&self) -> Result<DensityMatrix<f64>> {
        let [x, y, z] = self.initial_bloch;
        let mut factors = vec![DensityMatrix::from_bloch(x, y, z)?];
        for _ in &self.ancillas {
            factors.push(DensityMatrix::fock(self.truncation, 0)?);
        }
        DensityMatrix::product(&factors)
    }

    pub fn initial_qubit(&self) -> Result<DensityMatrix<f64>> {
        let [x, y, z] = self.initial_bloch;
        DensityMatrix::from_bloch(x, y, z)
    }

    pub fn time_grid(&self) -> Result<Vec<f64>> {
        uniform_grid(self.dt, self.t_final)
    }
}

fn finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, "must be finite"))
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| Error::config(key, format!("cannot parse `{raw}`: {e}")))
}

#[derive(Default)]
struct PartialAncilla {
    omega: Option<f64>,
    gamma: Option<f64>,
    kappa: Option<f64>,
    sigma: Option<QubitOpKind>,
}

fn parse_key_values(text: &str) -> Result<ExperimentConfig> {
    let mut seen = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", lineno + 1), "expected `key = value`"))?;
        let key = k.trim().to_string();
        if seen.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::config(key, "given more than once"));
        }
    }

    let mut omega_q = None;
    let mut dt = None;
    let mut t_final = None;
    let mut cfg = ExperimentConfig {
        omega_q: 0.0,
        ancillas: Vec::new(),
        probe: ProbeConfig::default(),
        field_mode: FieldMode::default(),
        initial_bloch: default_bloch(),
        truncation: default_truncation(),
        dt: 0.0,
        t_final: 0.0,
        n_traj: default_n_traj(),
        base_seed: 0,
        scheme: SmeScheme::default(),
        output_dir: default_output(),
        spectrum: SpectrumConfig::default(),
        fit: FitConfig::default(),
    };
    let mut ancillas: BTreeMap<usize, PartialAncilla> = BTreeMap::new();

    for (key, raw) in &seen {
        let raw = raw.as_str();
        match key.as_str() {
            "qubit.omega" | "omega_q" => omega_q = Some(value::<f64>(key, raw)?),
            "qubit.initial_bloch" => {
                let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(Error::config(key, "expected three comma-separated numbers"));
                }
                for (i, p) in parts.iter().enumerate() {
                    cfg.initial_bloch[i] = value::<f64>(key, p)?;
                }
            }
            "probe.gamma" => cfg.probe.gamma = value(key, raw)?,
            "probe.operator" => cfg.probe.operator = value(key, raw)?,
            "field_mode" => cfg.field_mode = value(key, raw)?,
            "numerics.truncation" | "truncation" => cfg.truncation = value(key, raw)?,
            "numerics.dt" | "dt" => dt = Some(value::<f64>(key, raw)?),
            "numerics.t_final" | "t_final" => t_final = Some(value::<f64>(key, raw)?),
            "ensemble.n_traj" | "n_traj" => cfg.n_traj = value(key, raw)?,
            "ensemble.base_seed" | "base_seed" | "seed" => cfg.base_seed = value(key, raw)?,
            "filter.scheme" => cfg.scheme = value(key, raw)?,
            "output.dir" => cfg.output_dir = PathBuf::from(raw),
            "spectrum.omega_min" => cfg.spectrum.omega_min = Some(value(key, raw)?),
            "spectrum.omega_max" => cfg.spectrum.omega_max = Some(value(key, raw)?),
            "spectrum.points" => cfg.spectrum.points = value(key, raw)?,
            "fit.input" => cfg.fit.input = Some(PathBuf::from(raw)),
            "fit.components" => cfg.fit.components = value(key, raw)?,
            other => {
                let mut parts = other.splitn(3, '.');
                let (head, idx, field) = (parts.next(), parts.next(), parts.next());
                let idx = match (head, idx.and_then(|i| i.parse::<usize>().ok()), field) {
                    (Some("ancilla"), Some(i), Some(_)) => i,
                    _ => return Err(Error::config(other, "unknown key")),
                };
                let entry = ancillas.entry(idx).or_default();
                match field.unwrap() {
                    "omega" => entry.omega = Some(value(key, raw)?),
                    "gamma" => entry.gamma = Some(value(key, raw)?),
                    "kappa" => entry.kappa = Some(value(key, raw)?),
                    "sigma" => entry.sigma = Some(value(key, raw)?),
                    _ => return Err(Error::config(other, "unknown key")),
                }
            }
        }
    }

    cfg.omega_q = omega_q.ok_or_else(|| Error::config("qubit.omega", "missing required field"))?;
    cfg.dt = dt.ok_or_else(|| Error::config("dt", "missing required field `numerics.dt`"))?;
    cfg.t_final = t_final.ok_or_else(|| Error::config("t_final", "missing required field `numerics.t_final`"))?;
    for (expected, (idx, a)) in ancillas.into_iter().enumerate() {
        if idx != expected {
            return Err(Error::config(format!("ancilla.{expected}"), "ancilla indices must be contiguous from 0"));
        }
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::config(format!("ancilla.{idx}.{name}"), "missing required field"));
        cfg.ancillas.push(AncillaConfig {
            omega: need(a.omega, "omega")?,
            gamma: need(a.gamma, "gamma")?,
            kappa: need(a.kappa, "kappa")?,
            sigma: a.sigma.ok_or_else(|| Error::config(format!("ancilla.{idx}.sigma"), "missing required field"))?,
        });
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_values() {
        let c = ExperimentConfig::preset(PRESET_PAPER_FIG4).unwrap();
        assert_eq!(c.omega_q, c.ancillas[0].omega);
        assert_eq!((c.ancillas[0].kappa, c.probe.gamma, c.ancillas[0].gamma), (1.0, 0.8, 0.6));
        assert_eq!(c.initial_bloch, [1.0, 0.0, 0.0]);
        assert_eq!(c.n_traj, 500);
        assert!(ExperimentConfig::preset("nope").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::preset(PRESET_PAPER_FIG4).unwrap();
        c.dt = 0.1 + 0.2;
        c.spectrum.omega_min = Some(-1.5);
        c.fit.input = Some(PathBuf::from("a/b.csv"));
        c.field_mode = FieldMode::Shared;
        let back = ExperimentConfig::parse(&c.serialize()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn json_round_trip() {
        let c = ExperimentConfig::preset(PRESET_PAPER_FIG4).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::parse(&json).unwrap(), c);
    }

    #[test]
    fn errors_name_the_field() {
        let base = ExperimentConfig::preset(PRESET_PAPER_FIG4).unwrap().serialize();
        let bad = base.replace("numerics.dt = 0.001", "numerics.dt = 0");
        match ExperimentConfig::parse(&bad) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "dt"),
            other => panic!("{other:?}"),
        }
        let missing = base.replace("numerics.t_final = 10.0\n", "");
        assert!(matches!(ExperimentConfig::parse(&missing), Err(Error::Config { field, .. }) if field == "t_final"));
        let unknown = format!("{base}qubit.colour = red\n");
        assert!(matches!(ExperimentConfig::parse(&unknown), Err(Error::Config { field, .. }) if field == "qubit.colour"));
        let gamma = base.replace("ancilla.0.gamma = 0.6", "ancilla.0.gamma = -1");
        assert!(matches!(ExperimentConfig::parse(&gamma), Err(Error::Config { field, .. }) if field == "ancilla.0.gamma"));
        let bloch = base.replace("qubit.initial_bloch = 1.0, 0.0, 0.0", "qubit.initial_bloch = 1, 1, 0");
        assert!(matches!(ExperimentConfig::parse(&bloch), Err(Error::Config { field, .. }) if field == "initial_bloch"));
        let dup = format!("{base}numerics.dt = 0.01\n");
        assert!(ExperimentConfig::parse(&dup).is_err());
    }

    #[test]
    fn defaults_fill_optional_fields() {
        let c = ExperimentConfig::parse("qubit.omega = 1\nnumerics.dt = 0.01\nnumerics.t_final = 1\n").unwrap();
        assert_eq!(c.truncation, 5);
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert!(c.ancillas.is_empty());
        assert_eq!(c.initial_state().unwrap().dim(), 2);
    }

    #[test]
    fn model_layout_from_preset() {
        let c = ExperimentConfig::preset(PRESET_PAPER_FIG4).unwrap();
        let m = c.build_model().unwrap();
        assert_eq!(m.layout().dims(), &[2, 5]);
        assert_eq!(c.initial_state().unwrap().layout().dims(), &[2, 5]);
        assert_eq!(c.time_grid().unwrap().len(), 10_001);
    }
}
