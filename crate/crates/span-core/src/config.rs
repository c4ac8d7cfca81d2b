//! Flat key=value configuration shared by every command.
//!
//! One string map with a closed key registry: defaults < config file <
//! command-line overrides, the winner echoed verbatim into every output
//! manifest. Keys whose default is `preset` resolve from the image-size
//! preset unless set explicitly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Result, SpanError};
use crate::model::{ConvSpec, GfTarget, SpanConfig};
use crate::sim::SimConfig;

/// (key, default, help). `preset` marks values resolved from the image-size
/// preset when not set explicitly.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("image_size", "64", "frame height/width in pixels (presets: 64, 32, 16)"),
    ("k_points", "preset", "number of attention points / channels"),
    ("lstm_hidden", "preset", "LSTM hidden width"),
    ("encoder_plan", "preset", "conv stack, e.g. 16c5s2,32c5s2,8c5s1"),
    ("decoder_plan", "preset", "deconv stack, e.g. 32c5s1,16c5s2,3c5s2"),
    ("alpha", "0.01", "weight of the point-consistency loss"),
    ("sigma", "0.1", "heatmap width in normalized units"),
    ("beta", "1.0", "soft-argmax temperature"),
    ("lr", "0.001", "Adam learning rate"),
    ("gf_target", "same", "consistency reference: same|next"),
    ("cnnrnn_feature_dim", "15", "baseline bottleneck width"),
    ("epochs", "1500", "training epochs"),
    ("seed", "0", "master seed (SPAN_SEED env is the fallback)"),
    ("episode_len", "100", "frames per episode"),
    ("demos_per_position", "4", "demonstrations per taught position"),
    ("positions", "A,C,E", "positions for data generation (taught only)"),
    ("trials", "10", "evaluation trials per position"),
    ("situation", "i", "evaluation situation: i|ii|iii|iv"),
    ("workers", "1", "parallel evaluation workers"),
    ("demo_noise", "0.05", "start-pose jitter amplitude in radians"),
    ("model", "span", "model kind: span|span_alpha0|cnnrnn"),
];

#[derive(Clone, Debug)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Config::new()
    }
}

impl Config {
    pub fn new() -> Config {
        Config {
            values: KEYS
                .iter()
                .map(|(k, d, _)| (k.to_string(), d.to_string()))
                .collect(),
        }
    }

    fn check_key(key: &str) -> Result<()> {
        if KEYS.iter().any(|(k, _, _)| *k == key) {
            Ok(())
        } else {
            Err(SpanError::Config(format!("unknown configuration key {key:?}")))
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        Self::check_key(key)?;
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Parse `key = value` lines; '#' starts a comment.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let pstr = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| SpanError::io(&pstr, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(SpanError::Config(format!(
                    "{pstr}:{}: expected key=value, got {raw:?}",
                    lineno + 1
                )));
            };
            self.set(key.trim(), value.trim())
                .map_err(|e| SpanError::Config(format!("{pstr}:{}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .unwrap_or_else(|| panic!("key {key} missing from registry"))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)
            .parse()
            .map_err(|_| SpanError::Config(format!("{key} must be an integer, got {:?}", self.get(key))))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.get(key)
            .parse()
            .map_err(|_| SpanError::Config(format!("{key} must be an integer, got {:?}", self.get(key))))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)
            .parse()
            .map_err(|_| SpanError::Config(format!("{key} must be a number, got {:?}", self.get(key))))
    }

    /// Resolved key=value map for provenance echoes.
    pub fn echo(&self) -> Result<BTreeMap<String, String>> {
        let mut map = self.values.clone();
        // resolve preset markers so manifests carry concrete values
        let span = self.span_config()?;
        map.insert("k_points".into(), span.k_points.to_string());
        map.insert("lstm_hidden".into(), span.lstm_hidden.to_string());
        map.insert("encoder_plan".into(), format_plan(&span.encoder_plan));
        map.insert("decoder_plan".into(), format_plan(&span.decoder_plan));
        Ok(map)
    }

    pub fn span_config(&self) -> Result<SpanConfig> {
        let image_hw = self.get_usize("image_size")?;
        let mut cfg = SpanConfig::preset(image_hw).unwrap_or_else(|_| {
            let mut c = SpanConfig::default64();
            c.image_hw = image_hw;
            c
        });
        if self.get("k_points") != "preset" {
            cfg.k_points = self.get_usize("k_points")?;
        }
        if self.get("lstm_hidden") != "preset" {
            cfg.lstm_hidden = self.get_usize("lstm_hidden")?;
        }
        if self.get("encoder_plan") != "preset" {
            cfg.encoder_plan = parse_plan(self.get("encoder_plan"))?;
        }
        if self.get("decoder_plan") != "preset" {
            cfg.decoder_plan = parse_plan(self.get("decoder_plan"))?;
        }
        cfg.alpha = self.get_f64("alpha")?;
        cfg.sigma = self.get_f64("sigma")?;
        cfg.beta = self.get_f64("beta")?;
        cfg.learning_rate = self.get_f64("lr")?;
        cfg.gf_target = GfTarget::parse(self.get("gf_target"))?;
        cfg.cnnrnn_feature_dim = self.get_usize("cnnrnn_feature_dim")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let mut cfg = SimConfig::new(self.get_usize("image_size")?);
        cfg.episode_len = self.get_usize("episode_len")?;
        cfg.demo_noise = self.get_f64("demo_noise")?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Plan syntax: comma-separated `<out_ch>c<kernel>s<stride>`.
pub fn parse_plan(text: &str) -> Result<Vec<ConvSpec>> {
    let mut plan = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        let bad = || SpanError::Config(format!("bad layer spec {part:?}, expected e.g. 16c5s2"));
        let (ch, rest) = part.split_once('c').ok_or_else(bad)?;
        let (k, s) = rest.split_once('s').ok_or_else(bad)?;
        plan.push(ConvSpec::new(
            ch.parse().map_err(|_| bad())?,
            k.parse().map_err(|_| bad())?,
            s.parse().map_err(|_| bad())?,
        ));
    }
    Ok(plan)
}

pub fn format_plan(plan: &[ConvSpec]) -> String {
    plan.iter()
        .map(|s| format!("{}c{}s{}", s.out_ch, s.kernel, s.stride))
        .collect::<Vec<_>>()
        .join(",")
}
