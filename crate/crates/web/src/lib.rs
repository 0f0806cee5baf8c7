//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Point clouds cross the boundary as flat `[x, y, type, x, y, type, ...]`
//! arrays in normalized units; `type` is `-1` for untyped datasets.

use pif_core::data::{generate, DatasetName, DatasetSpec};
use pif_core::dists::{self, Family};
use pif_core::flow::{make_theta_t, sample_chain, train_step, FlowConfig, LaplaceLossMode, LossWeights, PointSet, Priors};
use pif_core::net::{AdamConfig, AdamState, Mlp};
use pif_core::schedule::Schedule;
use pif_core::Error;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

pub const STRIDE: usize = 3;
const GAMMA: f64 = 0.009;
const TRAIN_SAMPLES: usize = 20_000;
const BATCH: usize = 256;
const HIDDEN: usize = 64;
const DEPTH: usize = 6;
const TIME_EMBED: usize = 16;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

pub fn parse_family(name: &str) -> Result<Family, Error> {
    match name {
        "gaussian" => Ok(Family::Gaussian),
        "laplace" => Ok(Family::Laplace),
        _ => Err(Error::Config(format!("unknown family {name:?}"))),
    }
}

fn priors(family: Family) -> Priors {
    match family {
        Family::Laplace => Priors::laplace(1.0),
        _ => Priors::gaussian(1.0),
    }
}

fn flatten(entities: &[PointSet]) -> Vec<f64> {
    let mut out = Vec::new();
    for e in entities {
        let pos = e.positions();
        for p in 0..e.num_points() {
            out.extend([pos[[p, 0]], pos[[p, 1]], e.class_of(p).map_or(-1.0, |c| c as f64)]);
        }
    }
    out
}

/// Normalized draws of a toy dataset.
pub fn dataset_cloud(name: &str, count: usize, seed: u64) -> Result<Vec<f64>, Error> {
    let name: DatasetName = name.parse()?;
    Ok(flatten(&generate(&DatasetSpec::new(name, count, seed))?.entities))
}

/// One draw from the interpolated distribution at `t` for each of `count`
/// data entities. Types are the argmax of the sampled simplex.
pub fn interpolated(name: &str, family: &str, count: usize, seed: u64, t: f64) -> Result<Vec<f64>, Error> {
    let name: DatasetName = name.parse()?;
    let priors = priors(parse_family(family)?);
    let data = generate(&DatasetSpec::new(name, count, seed))?;
    let schedule = Schedule::new(GAMMA, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut out = Vec::with_capacity(count * name.shape().points * STRIDE);
    for e in &data.entities {
        let theta = make_theta_t(e, &schedule, t, &priors)?;
        for (p, params) in theta.positions.iter().enumerate() {
            let x = dists::sample(params, &mut rng);
            let ty = match &theta.types {
                Some(types) => {
                    let v = dists::sample(&types[p], &mut rng);
                    (0..v.len()).fold(0, |best, k| if v[k] > v[best] { k } else { best }) as f64
                }
                None => -1.0,
            };
            out.extend([x[0], x[1], ty]);
        }
    }
    Ok(out)
}

#[wasm_bindgen(js_name = datasetCloud)]
pub fn dataset_cloud_js(name: &str, count: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    dataset_cloud(name, count, seed).map_err(js)
}

#[wasm_bindgen(js_name = interpolatedCloud)]
pub fn interpolated_js(name: &str, family: &str, count: usize, seed: u64, t: f64) -> Result<Vec<f64>, JsError> {
    interpolated(name, family, count, seed, t).map_err(js)
}

/// A small flow trained step by step from the page.
#[wasm_bindgen]
pub struct Trainer {
    cfg: FlowConfig,
    net: Mlp,
    opt: AdamState,
    data: Vec<PointSet>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn create(name: &str, family: &str, n_steps: usize, seed: u64) -> Result<Trainer, Error> {
        let name: DatasetName = name.parse()?;
        let masked = name.shape().points > 1;
        let cfg = FlowConfig {
            shape: name.shape(),
            schedule: Schedule::new(GAMMA, n_steps)?,
            priors: priors(parse_family(family)?),
            loss_weights: LossWeights::default(),
            laplace_loss: LaplaceLossMode::Normalized,
            mask_prob: if masked { 0.3 } else { 0.0 },
            point_mask_prob: 0.3,
            mask_flags: masked,
        };
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = generate(&DatasetSpec::new(name, TRAIN_SAMPLES, seed))?.entities;
        let net = Mlp::new(cfg.net_config(HIDDEN, DEPTH, TIME_EMBED), &mut rng)?;
        let opt = AdamState::new(net.num_params(), AdamConfig::default());
        let order = (0..data.len()).collect();
        Ok(Trainer {
            cfg,
            net,
            opt,
            data,
            order,
            cursor: TRAIN_SAMPLES,
            rng,
        })
    }

    /// Run `steps` optimizer steps; returns their mean loss.
    pub fn train(&mut self, steps: usize) -> Result<f64, Error> {
        let mut total = 0.0;
        let mut batch = Vec::with_capacity(BATCH);
        for _ in 0..steps {
            if self.cursor + BATCH > self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.clear();
            batch.extend(self.order[self.cursor..self.cursor + BATCH].iter().map(|&i| self.data[i].clone()));
            self.cursor += BATCH;
            total += train_step(&mut self.net, &mut self.opt, &batch, &self.cfg, &mut self.rng)?.loss;
        }
        Ok(total / steps.max(1) as f64)
    }

    pub fn generate(&mut self, count: usize) -> Result<Vec<f64>, Error> {
        Ok(flatten(&sample_chain(&self.net, &self.cfg, count, &[], &mut self.rng, None)?))
    }
}

#[wasm_bindgen]
impl Trainer {
    #[wasm_bindgen(constructor)]
    pub fn new(name: &str, family: &str, n_steps: usize, seed: u64) -> Result<Trainer, JsError> {
        Trainer::create(name, family, n_steps, seed).map_err(js)
    }

    #[wasm_bindgen(js_name = step)]
    pub fn step_js(&mut self, steps: usize) -> Result<f64, JsError> {
        self.train(steps).map_err(js)
    }

    #[wasm_bindgen(js_name = sample)]
    pub fn sample_js(&mut self, count: usize) -> Result<Vec<f64>, JsError> {
        self.generate(count).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn steps(&self) -> f64 {
        self.opt.step as f64
    }
}
