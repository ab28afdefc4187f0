//! Key-value experiment files with unit-suffixed quantities.
//!
//! ```text
//! # reference operating point
//! bit_interval = 400 us
//! samples_per_bit = 10
//! sample_spacing = 20 us
//! threshold_d = 20
//! receiver_distance = 500 nm
//! ```

use std::fmt::{self, Write as _};
use std::path::PathBuf;

use mc_relay::analysis::MeanMode;
use mc_relay::channel::{DiffusionMedium, SamplingScheme};
use mc_relay::config::{SystemConfig, DEFAULT_K_MAX};
use mc_relay::protocols::{DetectionConfig, SourceModel};
use mc_relay::simulator::{Engine, SimulationOptions, DEFAULT_CULL_INTERVALS};

/// Fields that must appear whenever a file is given.
pub const REQUIRED_FIELDS: [&str; 4] = ["bit_interval", "samples_per_bit", "sample_spacing", "threshold_d"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}, field `{field}`: {message}")]
    Field { line: usize, field: String, message: String },
    #[error("missing required field `{field}`")]
    Missing { field: String },
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtocolName {
    Baseline,
    FixedAf,
    Type1Af,
    Type2Af,
    DecodeForward,
}

impl ProtocolName {
    pub const ALL: [ProtocolName; 5] = [
        ProtocolName::FixedAf,
        ProtocolName::Type1Af,
        ProtocolName::Type2Af,
        ProtocolName::DecodeForward,
        ProtocolName::Baseline,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ProtocolName::Baseline => "baseline",
            ProtocolName::FixedAf => "fixed_af",
            ProtocolName::Type1Af => "type1_af",
            ProtocolName::Type2Af => "type2_af",
            ProtocolName::DecodeForward => "df",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.label() == s)
    }
}

impl fmt::Display for ProtocolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Culling {
    Off,
    /// After [`DEFAULT_CULL_INTERVALS`] bit intervals.
    Default,
    /// After this many seconds.
    After(f64),
}

/// Everything one CLI run needs. Lengths in m, times in s, diffusion in m²/s.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub receiver_distance: f64,
    pub relay_radius: f64,
    pub destination_radius: f64,
    pub diffusion_a1: f64,
    pub diffusion_a2: f64,
    pub p1: f64,
    pub n_a1: u64,
    pub seq_len: usize,
    pub bit_interval: f64,
    pub samples_per_bit: usize,
    pub sample_spacing: f64,
    pub threshold_d: u64,
    /// `None`: derived from the destination threshold.
    pub threshold_r: Option<u64>,
    pub protocol: ProtocolName,
    /// Fixed-gain override; `None` uses the averaged closed form.
    pub gain: Option<f64>,
    /// `None`: the library default, or the figure's own clamp.
    pub k_max: Option<u64>,
    pub df_emission: Option<u64>,
    /// Average relay emission the baseline is matched to (`ber` only).
    pub baseline_budget: Option<f64>,
    pub gain_samples: usize,
    pub sequence_samples: usize,
    pub realization_draws: usize,
    pub mean_mode: MeanMode,
    pub trials: u64,
    pub seed: u64,
    pub engine: Engine,
    pub culling: Culling,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    /// The reference environment at `T = 400 µs`, `M = 10`, `t₀ = 20 µs`, `ξ_D = 20`.
    fn default() -> Self {
        Self {
            receiver_distance: 500e-9,
            relay_radius: 45e-9,
            destination_radius: 45e-9,
            diffusion_a1: 4.365e-10,
            diffusion_a2: 4.365e-10,
            p1: 0.5,
            n_a1: 2500,
            seq_len: 50,
            bit_interval: 400e-6,
            samples_per_bit: 10,
            sample_spacing: 20e-6,
            threshold_d: 20,
            threshold_r: None,
            protocol: ProtocolName::FixedAf,
            gain: None,
            k_max: None,
            df_emission: None,
            baseline_budget: None,
            gain_samples: 10_000,
            sequence_samples: 2_000,
            realization_draws: 1,
            mean_mode: MeanMode::Sampled,
            trials: 3_000,
            seed: 1,
            engine: Engine::HitSampling,
            culling: Culling::Off,
            output: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Length,
    Time,
    Diffusivity,
    Count,
    Real,
    Text,
}

const FIELDS: [(&str, Kind); 27] = [
    ("receiver_distance", Kind::Length),
    ("relay_radius", Kind::Length),
    ("destination_radius", Kind::Length),
    ("diffusion_a1", Kind::Diffusivity),
    ("diffusion_a2", Kind::Diffusivity),
    ("p1", Kind::Real),
    ("n_a1", Kind::Count),
    ("seq_len", Kind::Count),
    ("bit_interval", Kind::Time),
    ("samples_per_bit", Kind::Count),
    ("sample_spacing", Kind::Time),
    ("threshold_d", Kind::Count),
    ("threshold_r", Kind::Count),
    ("protocol", Kind::Text),
    ("gain", Kind::Real),
    ("k_max", Kind::Count),
    ("df_emission", Kind::Count),
    ("baseline_budget", Kind::Real),
    ("gain_samples", Kind::Count),
    ("sequence_samples", Kind::Count),
    ("realization_draws", Kind::Count),
    ("mean_mode", Kind::Text),
    ("trials", Kind::Count),
    ("seed", Kind::Count),
    ("engine", Kind::Text),
    ("culling", Kind::Time),
    ("output", Kind::Text),
];

/// Units with the number of them in one SI base unit; values are divided
/// by the factor so that e.g. `400 us` is exactly the literal `400e-6`.
fn units(kind: Kind) -> &'static [(&'static str, f64)] {
    match kind {
        Kind::Length => &[("m", 1.0), ("mm", 1e3), ("um", 1e6), ("µm", 1e6), ("nm", 1e9)],
        Kind::Time => &[("s", 1.0), ("ms", 1e3), ("us", 1e6), ("µs", 1e6), ("ns", 1e9)],
        Kind::Diffusivity => &[
            ("m2/s", 1.0),
            ("m^2/s", 1.0),
            ("m²/s", 1.0),
            ("um2/s", 1e12),
            ("um^2/s", 1e12),
            ("µm²/s", 1e12),
            ("nm2/s", 1e18),
            ("nm^2/s", 1e18),
        ],
        _ => &[],
    }
}

/// Units tried, in order, when writing a quantity back out.
fn preferred_units(kind: Kind) -> &'static [(&'static str, f64)] {
    match kind {
        Kind::Length => &[("nm", 1e9), ("um", 1e6), ("m", 1.0)],
        Kind::Time => &[("us", 1e6), ("ms", 1e3), ("s", 1.0)],
        Kind::Diffusivity => &[("m2/s", 1.0)],
        _ => &[],
    }
}

fn parse_quantity(kind: Kind, value: &str) -> Result<f64, String> {
    let mut parts = value.split_whitespace();
    let number = parts.next().ok_or("empty value")?;
    let unit = parts.next();
    if parts.next().is_some() {
        return Err(format!("unexpected trailing text in `{value}`"));
    }
    let x: f64 = number.parse().map_err(|_| format!("`{number}` is not a number"))?;
    if !x.is_finite() {
        return Err(format!("`{number}` is not finite"));
    }
    let table = units(kind);
    match unit {
        None if table.is_empty() => Ok(x),
        None => Err(format!(
            "a unit is required (one of {})",
            table.iter().map(|u| u.0).collect::<Vec<_>>().join(", ")
        )),
        Some(u) => table
            .iter()
            .find(|(name, _)| *name == u)
            .map(|(_, per_si)| x / per_si)
            .ok_or_else(|| format!("unknown unit `{u}`")),
    }
}

fn parse_count(value: &str) -> Result<u64, String> {
    value
        .parse::<u64>()
        .map_err(|_| format!("`{value}` is not a nonnegative integer"))
}

fn format_quantity(kind: Kind, x: f64) -> String {
    for &(name, per_si) in preferred_units(kind) {
        let text = format!("{}", x * per_si);
        if text.parse::<f64>().map(|v| v / per_si) == Ok(x) {
            return format!("{text} {name}");
        }
    }
    format!("{x} {}", preferred_units(kind).last().map_or("", |u| u.0))
}

impl ExperimentConfig {
    /// Parses a file. Every [`REQUIRED_FIELDS`] entry must be present; all
    /// other fields fall back to [`ExperimentConfig::default`].
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen: Vec<&'static str> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let (name, kind) = FIELDS
                .iter()
                .copied()
                .find(|(n, _)| *n == key)
                .ok_or_else(|| ConfigError::Field {
                    line,
                    field: key.to_string(),
                    message: "unknown field".into(),
                })?;
            if seen.contains(&name) {
                return Err(ConfigError::Field {
                    line,
                    field: name.into(),
                    message: "given more than once".into(),
                });
            }
            seen.push(name);
            cfg.set(name, kind, value).map_err(|message| ConfigError::Field {
                line,
                field: name.into(),
                message,
            })?;
        }
        if let Some(missing) = REQUIRED_FIELDS.iter().find(|f| !seen.contains(f)) {
            return Err(ConfigError::Missing {
                field: (*missing).to_string(),
            });
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn set(&mut self, name: &str, kind: Kind, value: &str) -> Result<(), String> {
        let auto = value == "auto";
        match name {
            "receiver_distance" => self.receiver_distance = parse_quantity(kind, value)?,
            "relay_radius" => self.relay_radius = parse_quantity(kind, value)?,
            "destination_radius" => self.destination_radius = parse_quantity(kind, value)?,
            "diffusion_a1" => self.diffusion_a1 = parse_quantity(kind, value)?,
            "diffusion_a2" => self.diffusion_a2 = parse_quantity(kind, value)?,
            "p1" => self.p1 = parse_quantity(kind, value)?,
            "n_a1" => self.n_a1 = parse_count(value)?,
            "seq_len" => self.seq_len = parse_count(value)? as usize,
            "bit_interval" => self.bit_interval = parse_quantity(kind, value)?,
            "samples_per_bit" => self.samples_per_bit = parse_count(value)? as usize,
            "sample_spacing" => self.sample_spacing = parse_quantity(kind, value)?,
            "threshold_d" => self.threshold_d = parse_count(value)?,
            "threshold_r" => self.threshold_r = if auto { None } else { Some(parse_count(value)?) },
            "protocol" => {
                self.protocol = ProtocolName::parse(value).ok_or_else(|| {
                    format!(
                        "unknown protocol `{value}` (expected one of {})",
                        ProtocolName::ALL.map(|p| p.label()).join(", ")
                    )
                })?
            }
            "gain" => self.gain = if auto { None } else { Some(parse_quantity(kind, value)?) },
            "k_max" => self.k_max = if auto { None } else { Some(parse_count(value)?) },
            "df_emission" => self.df_emission = if auto { None } else { Some(parse_count(value)?) },
            "baseline_budget" => {
                self.baseline_budget = if auto { None } else { Some(parse_quantity(kind, value)?) }
            }
            "gain_samples" => self.gain_samples = parse_count(value)? as usize,
            "sequence_samples" => self.sequence_samples = parse_count(value)? as usize,
            "realization_draws" => self.realization_draws = parse_count(value)? as usize,
            "mean_mode" => {
                self.mean_mode = match value {
                    "sampled" => MeanMode::Sampled,
                    "deterministic" => MeanMode::Deterministic,
                    _ => return Err(format!("unknown mean mode `{value}` (sampled or deterministic)")),
                }
            }
            "trials" => self.trials = parse_count(value)?,
            "seed" => self.seed = parse_count(value)?,
            "engine" => {
                self.engine = match value {
                    "hit_sampling" => Engine::HitSampling,
                    "direct" => Engine::Direct,
                    _ => return Err(format!("unknown engine `{value}` (hit_sampling or direct)")),
                }
            }
            "culling" => {
                self.culling = match value {
                    "off" => Culling::Off,
                    "on" => Culling::Default,
                    _ => Culling::After(parse_quantity(kind, value)?),
                }
            }
            "output" => self.output = Some(PathBuf::from(value)),
            _ => unreachable!("field table and setter disagree on `{name}`"),
        }
        Ok(())
    }

    /// Range checks that do not need the physical model.
    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, message: String| {
            Err(ConfigError::Invalid {
                field: field.into(),
                message,
            })
        };
        for (field, v) in [
            ("receiver_distance", self.receiver_distance),
            ("relay_radius", self.relay_radius),
            ("destination_radius", self.destination_radius),
            ("diffusion_a1", self.diffusion_a1),
            ("diffusion_a2", self.diffusion_a2),
            ("bit_interval", self.bit_interval),
            ("sample_spacing", self.sample_spacing),
        ] {
            if !(v > 0.0) {
                return bad(field, format!("must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.p1) {
            return bad("p1", format!("must lie in [0, 1], got {}", self.p1));
        }
        if self.seq_len == 0 {
            return bad("seq_len", "must be at least 1".into());
        }
        if self.samples_per_bit == 0 {
            return bad("samples_per_bit", "must be at least 1".into());
        }
        if self.samples_per_bit as f64 * self.sample_spacing > self.bit_interval * (1.0 + 1e-12) {
            return bad(
                "sample_spacing",
                format!(
                    "{} samples every {} s do not fit in a {} s bit interval",
                    self.samples_per_bit, self.sample_spacing, self.bit_interval
                ),
            );
        }
        if self.k_max == Some(0) {
            return bad("k_max", "must be at least 1".into());
        }
        if let Some(g) = self.gain {
            if !(g >= 0.0) {
                return bad("gain", format!("must be nonnegative, got {g}"));
            }
        }
        if let Some(b) = self.baseline_budget {
            if !(b >= 0.0) {
                return bad("baseline_budget", format!("must be nonnegative, got {b}"));
            }
        }
        if let Culling::After(h) = self.culling {
            if !(h > 0.0) {
                return bad("culling", format!("horizon must be positive, got {h}"));
            }
        }
        for (field, n) in [
            ("gain_samples", self.gain_samples),
            ("sequence_samples", self.sequence_samples),
            ("realization_draws", self.realization_draws),
        ] {
            if n == 0 {
                return bad(field, "must be at least 1".into());
            }
        }
        Ok(())
    }

    /// Canonical text form; [`ExperimentConfig::parse`] reads it back unchanged.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let q = |k, v| format_quantity(k, v);
        let opt = |v: Option<u64>| v.map_or_else(|| "auto".to_string(), |x| x.to_string());
        let optf = |v: Option<f64>| v.map_or_else(|| "auto".to_string(), |x| format!("{x}"));
        let lines: Vec<(&str, String)> = vec![
            ("receiver_distance", q(Kind::Length, self.receiver_distance)),
            ("relay_radius", q(Kind::Length, self.relay_radius)),
            ("destination_radius", q(Kind::Length, self.destination_radius)),
            ("diffusion_a1", q(Kind::Diffusivity, self.diffusion_a1)),
            ("diffusion_a2", q(Kind::Diffusivity, self.diffusion_a2)),
            ("p1", format!("{}", self.p1)),
            ("n_a1", self.n_a1.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("bit_interval", q(Kind::Time, self.bit_interval)),
            ("samples_per_bit", self.samples_per_bit.to_string()),
            ("sample_spacing", q(Kind::Time, self.sample_spacing)),
            ("threshold_d", self.threshold_d.to_string()),
            ("threshold_r", opt(self.threshold_r)),
            ("protocol", self.protocol.label().to_string()),
            ("gain", optf(self.gain)),
            ("k_max", opt(self.k_max)),
            ("df_emission", opt(self.df_emission)),
            ("baseline_budget", optf(self.baseline_budget)),
            ("gain_samples", self.gain_samples.to_string()),
            ("sequence_samples", self.sequence_samples.to_string()),
            ("realization_draws", self.realization_draws.to_string()),
            (
                "mean_mode",
                match self.mean_mode {
                    MeanMode::Sampled => "sampled",
                    MeanMode::Deterministic => "deterministic",
                }
                .to_string(),
            ),
            ("trials", self.trials.to_string()),
            ("seed", self.seed.to_string()),
            (
                "engine",
                match self.engine {
                    Engine::HitSampling => "hit_sampling",
                    Engine::Direct => "direct",
                }
                .to_string(),
            ),
            (
                "culling",
                match self.culling {
                    Culling::Off => "off".to_string(),
                    Culling::Default => "on".to_string(),
                    Culling::After(h) => q(Kind::Time, h),
                },
            ),
        ];
        for (k, v) in lines {
            let _ = writeln!(out, "{k} = {v}");
        }
        if let Some(p) = &self.output {
            let _ = writeln!(out, "output = {}", p.display());
        }
        out
    }

    pub fn sampling(&self) -> mc_relay::Result<SamplingScheme<f64>> {
        SamplingScheme::new(self.bit_interval, self.samples_per_bit, self.sample_spacing)
    }

    /// Physical model; `default_k_max` applies when the file leaves `k_max` on auto.
    pub fn system(&self, default_k_max: u64) -> mc_relay::Result<SystemConfig<f64>> {
        let cfg = SystemConfig {
            medium: DiffusionMedium::new(self.diffusion_a1, self.diffusion_a2)?,
            receiver_distance: self.receiver_distance,
            relay_radius: self.relay_radius,
            destination_radius: self.destination_radius,
            source: SourceModel::new(self.p1, self.n_a1, self.seq_len)?,
            sampling: self.sampling()?,
            detection: DetectionConfig::new(self.threshold_d, self.threshold_r),
            k_max: self.k_max.unwrap_or(default_k_max),
            df_emission: self.df_emission,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// [`ExperimentConfig::system`] with the library's default clamp.
    pub fn system_default(&self) -> mc_relay::Result<SystemConfig<f64>> {
        self.system(DEFAULT_K_MAX)
    }

    pub fn simulation_options(&self) -> SimulationOptions<f64> {
        SimulationOptions {
            engine: self.engine,
            cull_horizon: match self.culling {
                Culling::Off => None,
                Culling::Default => Some(DEFAULT_CULL_INTERVALS as f64 * self.bit_interval),
                Culling::After(h) => Some(h),
            },
        }
    }
}
