//! Run configuration: flat `key = value` text, bundled presets, and the
//! translation into core types.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pif_core::data::DatasetName;
use pif_core::dists::Family;
use pif_core::flow::{FlowConfig, LaplaceLossMode, LossWeights, Priors};
use pif_core::net::{AdamConfig, NetConfig};
use pif_core::schedule::Schedule;

use crate::error::{CliError, Result};

pub const PRESETS: [(&str, &str); 6] = [
    ("swissroll", include_str!("../presets/swissroll.conf")),
    ("swissroll-moons", include_str!("../presets/swissroll-moons.conf")),
    ("chessboard-sparse", include_str!("../presets/chessboard-sparse.conf")),
    ("chessboard-dense", include_str!("../presets/chessboard-dense.conf")),
    ("typed-mixture", include_str!("../presets/typed-mixture.conf")),
    ("polygon5", include_str!("../presets/polygon5.conf")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetName,
    pub n_samples: usize,
    pub gamma: f64,
    pub n_steps: usize,
    pub family: Family,
    pub eps0: f64,
    pub beta0: f64,
    pub laplace_loss: LaplaceLossMode,
    pub lambda_x: f64,
    pub lambda_v: f64,
    pub mask_prob: f64,
    pub point_mask_prob: f64,
    pub mask_flags: bool,
    pub hidden_dim: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetName::Swissroll,
            n_samples: 100_000,
            gamma: 0.009,
            n_steps: 100,
            family: Family::Gaussian,
            eps0: 1.0,
            beta0: 1.0,
            laplace_loss: LaplaceLossMode::Normalized,
            lambda_x: 1.0,
            lambda_v: 1.0,
            mask_prob: 0.3,
            point_mask_prob: 0.3,
            mask_flags: true,
            hidden_dim: 128,
            depth: 6,
            time_embed_dim: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 100,
            batch_size: 2048,
            checkpoint_every: 0,
            seed: 0,
            out: PathBuf::from("."),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value {value:?} for key {key}")))
}

fn parse_family(value: &str) -> Result<Family> {
    match value {
        "gaussian" => Ok(Family::Gaussian),
        "laplace" => Ok(Family::Laplace),
        _ => Err(CliError::Config(format!("family must be gaussian or laplace, got {value:?}"))),
    }
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Gaussian => "gaussian",
        Family::Laplace => "laplace",
        Family::Dirichlet => "dirichlet",
    }
}

impl RunConfig {
    /// Defaults with the named preset applied.
    pub fn preset(name: &str) -> Result<Self> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| CliError::Config(format!("unknown preset {name:?}")))?;
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = value.parse().map_err(|e: pif_core::Error| CliError::Config(e.to_string()))?,
            "n_samples" => self.n_samples = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "n_steps" => self.n_steps = parse_value(key, value)?,
            "family" => self.family = parse_family(value)?,
            "eps0" => self.eps0 = parse_value(key, value)?,
            "beta0" => self.beta0 = parse_value(key, value)?,
            "laplace_loss" => {
                self.laplace_loss = match value {
                    "normalized" => LaplaceLossMode::Normalized,
                    "literal" => LaplaceLossMode::Literal,
                    _ => return Err(CliError::Config(format!("laplace_loss must be normalized or literal, got {value:?}"))),
                }
            }
            "lambda_x" => self.lambda_x = parse_value(key, value)?,
            "lambda_v" => self.lambda_v = parse_value(key, value)?,
            "mask_prob" => self.mask_prob = parse_value(key, value)?,
            "point_mask_prob" => self.point_mask_prob = parse_value(key, value)?,
            "mask_flags" => self.mask_flags = parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, value)?,
            "depth" => self.depth = parse_value(key, value)?,
            "time_embed_dim" => self.time_embed_dim = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Every key in a fixed order, floats with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let f = |x: f64| format!("{x:.16e}");
        kv("dataset", self.dataset.as_str().to_string());
        kv("n_samples", self.n_samples.to_string());
        kv("gamma", f(self.gamma));
        kv("n_steps", self.n_steps.to_string());
        kv("family", family_name(self.family).to_string());
        kv("eps0", f(self.eps0));
        kv("beta0", f(self.beta0));
        kv(
            "laplace_loss",
            match self.laplace_loss {
                LaplaceLossMode::Normalized => "normalized",
                LaplaceLossMode::Literal => "literal",
            }
            .to_string(),
        );
        kv("lambda_x", f(self.lambda_x));
        kv("lambda_v", f(self.lambda_v));
        kv("mask_prob", f(self.mask_prob));
        kv("point_mask_prob", f(self.point_mask_prob));
        kv("mask_flags", self.mask_flags.to_string());
        kv("hidden_dim", self.hidden_dim.to_string());
        kv("depth", self.depth.to_string());
        kv("time_embed_dim", self.time_embed_dim.to_string());
        kv("lr", f(self.lr));
        kv("beta1", f(self.beta1));
        kv("beta2", f(self.beta2));
        kv("adam_eps", f(self.adam_eps));
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("seed", self.seed.to_string());
        kv("out", self.out.display().to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.n_samples == 0 {
            return bad("n_samples must be >= 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.n_steps == 0 {
            return bad("n_steps must be >= 1".into());
        }
        for (k, v) in [("eps0", self.eps0), ("beta0", self.beta0), ("lr", self.lr), ("adam_eps", self.adam_eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{k} must be positive, got {v}"));
            }
        }
        for (k, v) in [("lambda_x", self.lambda_x), ("lambda_v", self.lambda_v)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{k} must be non-negative, got {v}"));
            }
        }
        for (k, v) in [
            ("mask_prob", self.mask_prob),
            ("point_mask_prob", self.point_mask_prob),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{k} must lie in [0, 1], got {v}"));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return bad("adam betas must be below 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        self.flow_config()?;
        self.net_config().validate()?;
        Ok(())
    }

    pub fn priors(&self) -> Priors {
        match self.family {
            Family::Laplace => Priors::laplace(self.beta0),
            _ => Priors::gaussian(self.eps0),
        }
    }

    pub fn flow_config(&self) -> Result<FlowConfig> {
        let cfg = FlowConfig {
            shape: self.dataset.shape(),
            schedule: Schedule::new(self.gamma, self.n_steps)?,
            priors: self.priors(),
            loss_weights: LossWeights::new(self.lambda_x, self.lambda_v)?,
            laplace_loss: self.laplace_loss,
            mask_prob: self.mask_prob,
            point_mask_prob: self.point_mask_prob,
            mask_flags: self.mask_flags,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn net_config(&self) -> NetConfig {
        let shape = self.dataset.shape();
        let mut net = NetConfig::new(
            shape.position_width() + shape.type_width() + if self.mask_flags { shape.points } else { 0 },
            shape.position_width(),
            shape.classes,
            shape.points,
        );
        net.hidden_dim = self.hidden_dim;
        net.depth = self.depth;
        net.time_embed_dim = self.time_embed_dim;
        net
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = RunConfig::default();
        assert_eq!((c.gamma, c.eps0, c.beta0), (0.009, 1.0, 1.0));
        assert_eq!((c.mask_prob, c.point_mask_prob), (0.3, 0.3));
        assert_eq!((c.batch_size, c.lr, c.depth), (2048, 1e-3, 6));
        c.validate().unwrap();
    }

    #[test]
    fn presets_load() {
        for (name, _) in PRESETS {
            RunConfig::preset(name).unwrap().validate().unwrap();
        }
        let s = RunConfig::preset("swissroll").unwrap();
        assert_eq!((s.epochs, s.n_steps), (100, 40));
        let c = RunConfig::preset("chessboard-sparse").unwrap();
        assert_eq!((c.epochs, c.n_steps), (600, 100));
        let d = RunConfig::preset("chessboard-dense").unwrap();
        assert_eq!((d.epochs, d.n_steps), (10_000, 500));
        assert!(RunConfig::preset("moons").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::preset("polygon5").unwrap();
        c.family = Family::Laplace;
        c.gamma = 0.1 + 0.2;
        let text = c.to_text();
        let mut back = RunConfig::default();
        back.apply_text(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn rejects_bad_lines() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("gamma 0.5").is_err());
        assert!(c.apply_text("colour = red").is_err());
        assert!(c.apply_text("family = dirichlet").is_err());
        assert!(c.apply_text("epochs = -1").is_err());
        c.apply_text("# comment\n\n gamma = 0.5 # trailing\n").unwrap();
        assert_eq!(c.gamma, 0.5);
        c.gamma = 1.0;
        assert!(c.validate().is_err());
    }
}
