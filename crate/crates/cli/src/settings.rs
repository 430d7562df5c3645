//! Values shared by every subcommand, resolved as flag > config file > default.

use std::path::Path;

use palmpipe_core::config::KeyValues;
use palmpipe_core::downsample::FusionMode;
use palmpipe_core::kinematics::KinematicsConfig;

use crate::UsageError;

/// Everything a config file may set. Absent keys stay `None` so the
/// subcommand defaults apply.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub seed: Option<u64>,
    pub noise: Option<f64>,
    pub n_reps: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub trials: Option<usize>,
    pub ticks: Option<usize>,
    pub duration: Option<f64>,
    pub port: Option<u16>,
    pub fusion: FusionMode,
    pub kinematics: KinematicsConfig,
}

pub fn parse_fusion(s: &str) -> Result<FusionMode, String> {
    match s {
        "max" => Ok(FusionMode::Max),
        "finger-a" => Ok(FusionMode::FingerAOnly),
        other => Err(format!("unknown fusion {other:?} (max or finger-a)")),
    }
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let bad = |e: palmpipe_core::Error| UsageError(format!("config: {e}"));
        let mut kv = KeyValues::parse(text).map_err(bad)?;
        let mut s = Settings {
            seed: kv.take_parsed("seed").map_err(bad)?,
            noise: kv.take_f64("noise").map_err(bad)?,
            n_reps: kv.take_parsed("n_reps").map_err(bad)?,
            epochs: kv.take_parsed("epochs").map_err(bad)?,
            batch_size: kv.take_parsed("batch_size").map_err(bad)?,
            lr: kv.take_f64("lr").map_err(bad)?,
            trials: kv.take_parsed("trials").map_err(bad)?,
            ticks: kv.take_parsed("ticks").map_err(bad)?,
            duration: kv.take_f64("duration").map_err(bad)?,
            port: kv.take_parsed("port").map_err(bad)?,
            ..Default::default()
        };
        if let Some(f) = kv.take("fusion") {
            s.fusion = parse_fusion(&f).map_err(|e| UsageError(format!("config: {e}")))?;
        }
        s.kinematics = KinematicsConfig::from_key_values(&mut kv).map_err(bad)?;
        kv.finish().map_err(bad)?;
        Ok(s)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, UsageError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| UsageError(format!("config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }
}

/// First present value wins.
pub fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}
