//! Optional TOML run configuration. Command-line flags override file values.

use std::path::Path;

use anyhow::{bail, Context};
use serde::Deserialize;
use spin_readout::{InitStrategy, PhotodynamicsParams, TrainConfig};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub rabi: RabiSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub preset: Option<String>,
    pub reps: Option<f64>,
    pub rabi_reps: Option<f64>,
    pub seed: Option<u64>,
}

/// Overrides applied on top of the preset.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    pub steady_rate: Option<f64>,
    pub bright_boost: Option<f64>,
    pub dark_dip: Option<f64>,
    pub tau_bright_ns: Option<f64>,
    pub tau_isc_ns: Option<f64>,
    pub tau_onset_ns: Option<f64>,
    pub trace_length_ns: Option<f64>,
    pub bin_width_ns: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiSection {
    pub points: Option<usize>,
    pub start_ns: Option<f64>,
    pub step_ns: Option<f64>,
    pub period_ns: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub start_bin: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub weight_factor: Option<f64>,
    pub learning_rate: Option<f64>,
    pub max_iterations: Option<usize>,
    pub tolerance: Option<f64>,
    pub init: Option<String>,
    pub accelerate: Option<bool>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn preset(name: &str) -> anyhow::Result<PhotodynamicsParams> {
    match name {
        "paper-like" => Ok(PhotodynamicsParams::paper_like()),
        "uncalibrated" => Ok(PhotodynamicsParams::uncalibrated()),
        other => bail!("unknown preset `{other}` (expected paper-like or uncalibrated)"),
    }
}

impl PhysicsSection {
    pub fn apply(&self, mut p: PhotodynamicsParams) -> PhotodynamicsParams {
        let fields = [
            (self.steady_rate, &mut p.steady_rate),
            (self.bright_boost, &mut p.bright_boost),
            (self.dark_dip, &mut p.dark_dip),
            (self.tau_bright_ns, &mut p.tau_bright_ns),
            (self.tau_isc_ns, &mut p.tau_isc_ns),
            (self.tau_onset_ns, &mut p.tau_onset_ns),
            (self.trace_length_ns, &mut p.trace_length_ns),
            (self.bin_width_ns, &mut p.bin_width_ns),
        ];
        for (value, slot) in fields {
            if let Some(v) = value {
                *slot = v;
            }
        }
        p
    }
}

/// Training flags as given on the command line.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct TrainFlags {
    /// Weight of the prediction-error term relative to the variance term.
    #[arg(long)]
    pub weight_factor: Option<f64>,
    /// Step size on the normalized loss.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Relative loss decrease per 100 iterations below which training stops.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// gated-equal-weights or zeros.
    #[arg(long)]
    pub init: Option<String>,
    /// Nesterov momentum on the gradient steps (default true).
    #[arg(long, value_name = "BOOL")]
    pub accelerate: Option<bool>,
}

impl TrainFlags {
    pub fn resolve(&self, file: &TrainSection) -> anyhow::Result<TrainConfig> {
        let d = TrainConfig::default();
        let init = match self.init.as_ref().or(file.init.as_ref()) {
            Some(s) => s.parse::<InitStrategy>()?,
            None => d.init,
        };
        let config = TrainConfig {
            weight_factor: self
                .weight_factor
                .or(file.weight_factor)
                .unwrap_or(d.weight_factor),
            learning_rate: self
                .learning_rate
                .or(file.learning_rate)
                .unwrap_or(d.learning_rate),
            max_iterations: self
                .max_iterations
                .or(file.max_iterations)
                .unwrap_or(d.max_iterations),
            relative_tolerance: self
                .tolerance
                .or(file.tolerance)
                .unwrap_or(d.relative_tolerance),
            init,
            accelerate: self.accelerate.or(file.accelerate).unwrap_or(d.accelerate),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Parses a repetition count written as an integer or in exponent form (`1e6`).
pub fn parse_reps(s: &str) -> Result<u64, String> {
    if let Ok(n) = s.parse::<u64>() {
        return if n > 0 {
            Ok(n)
        } else {
            Err("must be at least 1".into())
        };
    }
    let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    reps_from_f64(x)
}

pub fn reps_from_f64(x: f64) -> Result<u64, String> {
    if !(x >= 1.0) || x.fract() != 0.0 || x > 9.007_199_254_740_992e15 {
        return Err(format!(
            "`{x}` is not a whole number of repetitions between 1 and 2^53"
        ));
    }
    Ok(x as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reps_accept_exponent_form() {
        assert_eq!(parse_reps("1e6"), Ok(1_000_000));
        assert_eq!(parse_reps("250000"), Ok(250_000));
        assert!(parse_reps("0").is_err());
        assert!(parse_reps("1.5").is_err());
        assert!(parse_reps("abc").is_err());
    }

    #[test]
    fn config_sections_parse_and_reject_unknown_keys() {
        let c: RunConfig = toml::from_str(
            "[simulate]\nreps = 1e6\nseed = 7\n[physics]\ndark_dip = 0.4\n[train]\ninit = \"zeros\"\n",
        )
        .unwrap();
        assert_eq!(c.simulate.seed, Some(7));
        assert_eq!(
            c.physics.apply(PhotodynamicsParams::paper_like()).dark_dip,
            0.4
        );
        let t = TrainFlags::default().resolve(&c.train).unwrap();
        assert_eq!(t.init, InitStrategy::Zeros);
        assert!(toml::from_str::<RunConfig>("[simulate]\nrepz = 1\n").is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = TrainSection {
            learning_rate: Some(1e-4),
            ..Default::default()
        };
        let flags = TrainFlags {
            learning_rate: Some(5e-4),
            ..Default::default()
        };
        assert_eq!(flags.resolve(&file).unwrap().learning_rate, 5e-4);
        assert_eq!(
            TrainFlags::default().resolve(&file).unwrap().learning_rate,
            1e-4
        );
    }
}
