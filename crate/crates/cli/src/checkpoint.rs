//! Versioned plain-text checkpoints. Floats are written with 17
//! significant digits so a load/save cycle reproduces the file byte for
//! byte.

use std::fmt::Write as _;
use std::path::Path;

use pif_core::data::Normalization;
use pif_core::net::{AdamState, Mlp};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "pif-checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub normalization: Normalization,
    pub weights: Vec<f64>,
    pub adam: AdamState,
    pub rng: RngState,
    /// Completed training epochs.
    pub epoch: usize,
}

fn push_floats(s: &mut String, name: &str, values: &[f64]) {
    let _ = writeln!(s, "[{name} {}]", values.len());
    for v in values {
        let _ = writeln!(s, "{v:.16e}");
    }
}

impl Checkpoint {
    pub fn network(&self) -> Result<Mlp> {
        Ok(Mlp::from_params(self.config.net_config(), self.weights.clone())?)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MAGIC} {FORMAT_VERSION}\n[config]\n");
        s.push_str(&self.config.to_text());
        s.push_str("[normalization]\n");
        s.push_str(
            io::normalization_to_text(&self.normalization)
                .lines()
                .skip(1)
                .map(|l| format!("{l}\n"))
                .collect::<String>()
                .as_str(),
        );
        s.push_str("[state]\n");
        let _ = writeln!(s, "epoch = {}", self.epoch);
        let seed: String = self.rng.seed.iter().map(|b| format!("{b:02x}")).collect();
        let _ = writeln!(s, "rng_seed = {seed}");
        let _ = writeln!(s, "rng_stream = {}", self.rng.stream);
        let _ = writeln!(s, "rng_word_pos = {}", self.rng.word_pos);
        let _ = writeln!(s, "adam_step = {}", self.adam.step);
        push_floats(&mut s, "weights", &self.weights);
        push_floats(&mut s, "adam_first_moment", &self.adam.first_moment);
        push_floats(&mut s, "adam_second_moment", &self.adam.second_moment);
        s.push_str("[end]\n");
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let bad = |m: String| CliError::format(path, m);
        let mut lines = text.lines().peekable();
        let first = lines.next().ok_or_else(|| bad("empty checkpoint".into()))?;
        let version = first
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad(format!("not a checkpoint (first line {first:?})")))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(CliError::Version {
                path: path.to_path_buf(),
                found: version.to_string(),
                expected: FORMAT_VERSION,
            });
        }

        let mut section = |name: &str| -> Result<Vec<&str>> {
            match lines.next() {
                Some(l) if l == format!("[{name}]") => {}
                other => return Err(bad(format!("expected [{name}], found {other:?}"))),
            }
            let mut body = Vec::new();
            while let Some(l) = lines.peek() {
                if l.starts_with('[') {
                    break;
                }
                body.push(lines.next().expect("peeked"));
            }
            Ok(body)
        };

        let mut config = RunConfig::default();
        config
            .apply_text(&section("config")?.join("\n"))
            .map_err(|e| bad(e.to_string()))?;
        let norm_body = section("normalization")?;
        let normalization = io::normalization_from_text(&format!("pif-normalization 1\n{}", norm_body.join("\n")), path)?;

        let mut state = std::collections::BTreeMap::new();
        for l in section("state")? {
            let (k, v) = l.split_once('=').ok_or_else(|| bad(format!("bad state line {l:?}")))?;
            state.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| state.get(k).ok_or_else(|| bad(format!("missing state key {k}")));
        let parse_err = |k: &str| bad(format!("invalid state value for {k}"));
        let epoch = get("epoch")?.parse().map_err(|_| parse_err("epoch"))?;
        let seed_hex = get("rng_seed")?;
        if seed_hex.len() != 64 {
            return Err(parse_err("rng_seed"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(|_| parse_err("rng_seed"))?;
        }
        let stream = get("rng_stream")?.parse().map_err(|_| parse_err("rng_stream"))?;
        let word_pos = get("rng_word_pos")?.parse().map_err(|_| parse_err("rng_word_pos"))?;
        let adam_step = get("adam_step")?.parse().map_err(|_| parse_err("adam_step"))?;

        let mut floats = |name: &str| -> Result<Vec<f64>> {
            let head = lines.next().ok_or_else(|| bad(format!("missing [{name}]")))?;
            let count: usize = head
                .strip_prefix(&format!("[{name} "))
                .and_then(|r| r.strip_suffix(']'))
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| bad(format!("expected [{name} <count>], found {head:?}")))?;
            (0..count)
                .map(|_| {
                    lines
                        .next()
                        .and_then(|l| l.parse::<f64>().ok())
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| bad(format!("truncated or invalid {name}")))
                })
                .collect()
        };
        let weights = floats("weights")?;
        let first_moment = floats("adam_first_moment")?;
        let second_moment = floats("adam_second_moment")?;
        if lines.next() != Some("[end]") {
            return Err(bad("missing [end]".into()));
        }

        let expected = Mlp::zeros(config.net_config())?.num_params();
        for (what, len) in [
            ("weights", weights.len()),
            ("adam_first_moment", first_moment.len()),
            ("adam_second_moment", second_moment.len()),
        ] {
            if len != expected {
                return Err(bad(format!("{what} has {len} values, network needs {expected}")));
            }
        }
        Ok(Self {
            adam: AdamState {
                config: config.adam_config(),
                first_moment,
                second_moment,
                step: adam_step,
            },
            config,
            normalization,
            weights,
            rng: RngState { seed, stream, word_pos },
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_text(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn small() -> Checkpoint {
        let mut config = RunConfig::preset("typed-mixture").unwrap();
        config.hidden_dim = 4;
        config.depth = 2;
        config.time_embed_dim = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(config.net_config(), &mut rng).unwrap();
        let mut adam = AdamState::new(net.num_params(), config.adam_config());
        adam.step = 17;
        for (m, v) in adam.first_moment.iter_mut().zip(adam.second_moment.iter_mut()) {
            *m = rng.random::<f64>() - 0.5;
            *v = rng.random::<f64>() * 1e-9;
        }
        Checkpoint {
            normalization: Normalization::new(vec![0.1, 0.2], vec![0.3, 1.0 / 7.0]).unwrap(),
            weights: net.params().to_vec(),
            adam,
            rng: RngState::capture(&rng),
            epoch: 5,
            config,
        }
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let c = small();
        let text = c.to_text();
        let back = Checkpoint::from_text(&text, Path::new("c")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let _: [u64; 5] = rng.random();
        let mut resumed = RngState::capture(&rng).restore();
        assert_eq!(rng.random::<u64>(), resumed.random::<u64>());
    }

    #[test]
    fn rejects_other_versions_and_truncation() {
        let text = small().to_text();
        let v2 = text.replacen("pif-checkpoint 1", "pif-checkpoint 2", 1);
        assert!(matches!(Checkpoint::from_text(&v2, Path::new("c")), Err(CliError::Version { .. })));
        let cut = &text[..text.len() / 2];
        assert!(matches!(Checkpoint::from_text(cut, Path::new("c")), Err(CliError::Format { .. })));
    }
}
