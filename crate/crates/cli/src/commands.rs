use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pif_core::data::{generate, DatasetSpec, Normalization};
use pif_core::flow::{sample_chain, train_step, PointSet};
use pif_core::metrics::{class_proportion_error, class_proportions, cloud_jsd, outlier_rate, Bounds, JSD_BINS, OUTLIER_INFLATION};
use pif_core::net::{AdamState, Mlp};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, RngState};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io;

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const METRICS_FILE: &str = "metrics.csv";

/// Generate `cfg.n_samples` normalized entities of `cfg.dataset` from
/// `cfg.seed`; writes `<out>/<dataset>.csv` and its sidecar.
pub fn gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let data = generate(&DatasetSpec::new(cfg.dataset, cfg.n_samples, cfg.seed))?;
    let path = cfg.out.join(format!("{}.csv", cfg.dataset.as_str()));
    io::write_entities(&path, &data.entities)?;
    io::write_normalization(&io::sidecar_path(&path), &data.normalization)?;
    Ok(path)
}

/// Per-epoch progress passed to an optional callback.
#[derive(Debug, Clone, Copy)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: u64,
    pub mean_loss: f64,
}

/// Output of [`train`].
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub final_epoch_loss: f64,
}

fn sidecar_or_identity(data: &Path, dim: usize) -> Result<Normalization> {
    let side = io::sidecar_path(data);
    if side.exists() {
        let n = io::read_normalization(&side)?;
        if n.dim() != dim {
            return Err(CliError::schema(&side, format!("normalization has dim {}, data has {dim}", n.dim())));
        }
        Ok(n)
    } else {
        Ok(Normalization::identity(dim))
    }
}

/// Train on the entities in `data`, resuming from `resume` when given.
/// Runs `ceil(n / batch_size)` steps per epoch up to `cfg.epochs`.
pub fn train(
    cfg: &RunConfig,
    data: &Path,
    resume: Option<&Path>,
    mut progress: Option<&mut dyn FnMut(&EpochReport)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let flow = cfg.flow_config()?;
    let entities = io::read_entities(data, flow.shape)?;
    let normalization = sidecar_or_identity(data, flow.shape.dim)?;

    let (mut net, mut opt, mut rng, start_epoch) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config.net_config() != cfg.net_config() || ck.config.dataset != cfg.dataset {
                return Err(CliError::Config(format!(
                    "{} was trained with a different dataset or network",
                    path.display()
                )));
            }
            let mut adam = ck.adam.clone();
            adam.config = cfg.adam_config();
            (ck.network()?, adam, ck.rng.restore(), ck.epoch)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let net = Mlp::new(cfg.net_config(), &mut rng)?;
            let adam = AdamState::new(net.num_params(), cfg.adam_config());
            (net, adam, rng, 0)
        }
    };

    let ck_path = cfg.out.join(CHECKPOINT_FILE);
    let log_path = cfg.out.join(LOSS_FILE);
    let mut log = String::from("step,epoch,loss,position_loss,type_loss\n");
    let mut order: Vec<usize> = Vec::with_capacity(entities.len());
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut last_mean = f64::NAN;
    let save = |net: &Mlp, opt: &AdamState, rng: &ChaCha8Rng, epoch: usize| {
        Checkpoint {
            config: cfg.clone(),
            normalization: normalization.clone(),
            weights: net.params().to_vec(),
            adam: opt.clone(),
            rng: RngState::capture(rng),
            epoch,
        }
        .save(&ck_path)
    };

    for epoch in start_epoch..cfg.epochs {
        // Fresh permutation per epoch so a resumed run matches an uninterrupted one.
        order.clear();
        order.extend(0..entities.len());
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| entities[i].clone()));
            let step = opt.step + 1;
            let loss = train_step(&mut net, &mut opt, &batch, &flow, &mut rng)
                .map_err(|source| CliError::Step { epoch, step, source })?;
            let _ = writeln!(
                log,
                "{step},{epoch},{},{},{}",
                loss.loss,
                loss.parts.position,
                loss.parts.types.map(|v| v.to_string()).unwrap_or_default()
            );
            total += loss.loss;
            count += 1;
        }
        last_mean = total / count as f64;
        if let Some(cb) = progress.as_deref_mut() {
            cb(&EpochReport {
                epoch,
                steps: opt.step,
                mean_loss: last_mean,
            });
        }
        let done = epoch + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.epochs {
            save(&net, &opt, &rng, done)?;
            io::write_atomic(&log_path, log.as_bytes())?;
        }
    }
    save(&net, &opt, &rng, cfg.epochs.max(start_epoch))?;
    io::write_atomic(&log_path, log.as_bytes())?;
    Ok(TrainOutcome {
        checkpoint: ck_path,
        loss_log: log_path,
        final_epoch_loss: last_mean,
    })
}

/// Options for [`sample`] that override the checkpoint's configuration.
#[derive(Debug, Clone, Default)]
pub struct SampleOptions {
    pub count: usize,
    pub mask: Option<PathBuf>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Draw `opts.count` entities from a checkpoint; writes
/// `<out>/samples.csv` and a sidecar carrying the training normalization.
pub fn sample(checkpoint: &Path, opts: &SampleOptions) -> Result<PathBuf> {
    if opts.count == 0 {
        return Err(CliError::Usage("--count must be >= 1".into()));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = ck.config.clone();
    if let Some(n) = opts.steps {
        cfg.n_steps = n;
    }
    cfg.validate()?;
    let flow = cfg.flow_config()?;
    let net = ck.network()?;
    let conditions = match &opts.mask {
        Some(p) => io::read_conditions(p, flow.shape)?,
        None => Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.unwrap_or(cfg.seed));
    let out = sample_chain(&net, &flow, opts.count, &conditions, &mut rng, None)?;
    let path = opts.out.clone().unwrap_or(cfg.out).join(SAMPLES_FILE);
    io::write_entities(&path, &out)?;
    io::write_normalization(&io::sidecar_path(&path), &ck.normalization)?;
    Ok(path)
}

/// Metrics of one evaluation, also written as CSV rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub jsd: f64,
    pub jsd_bounds: Bounds,
    pub outlier_rate: f64,
    pub outlier_bounds: Bounds,
    pub class_error: Option<f64>,
    pub generated_classes: Option<Vec<f64>>,
    pub reference_classes: Option<Vec<f64>>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value,bins,x_min,x_max,y_min,y_max\n");
        let b = |b: &Bounds| format!("{},{},{},{}", b.x_min, b.x_max, b.y_min, b.y_max);
        let _ = writeln!(s, "jsd,{},{JSD_BINS},{}", self.jsd, b(&self.jsd_bounds));
        let _ = writeln!(s, "outlier_rate,{},,{}", self.outlier_rate, b(&self.outlier_bounds));
        if let (Some(e), Some(g), Some(r)) = (self.class_error, &self.generated_classes, &self.reference_classes) {
            let _ = writeln!(s, "class_proportion_error,{e},,,,,");
            for (k, (g, r)) in g.iter().zip(r).enumerate() {
                let _ = writeln!(s, "class_{k}_generated,{g},,,,,");
                let _ = writeln!(s, "class_{k}_reference,{r},,,,,");
            }
        }
        s
    }
}

fn non_empty(table: io::Table, path: &Path) -> Result<io::Table> {
    if table.rows.is_empty() {
        Err(CliError::schema(path, "no data rows"))
    } else {
        Ok(table)
    }
}

pub fn evaluate(generated: &Path, reference: &Path) -> Result<EvalReport> {
    let gen = non_empty(io::read_table(generated, false)?, generated)?;
    let refr = non_empty(io::read_table(reference, false)?, reference)?;
    if gen.typed != refr.typed {
        return Err(CliError::schema(generated, "generated and reference files disagree on the type column"));
    }
    let gp = gen.points_2d(generated)?;
    let rp = refr.points_2d(reference)?;
    let (jsd, jsd_bounds) = cloud_jsd(&gp, &rp)?;
    let rb = Bounds::of_points(&rp)?;
    let outlier = outlier_rate(&gp, rb, OUTLIER_INFLATION)?;
    let (mut class_error, mut gc, mut rc) = (None, None, None);
    if let (Some(g), Some(r)) = (gen.classes(), refr.classes()) {
        let k = g.iter().chain(&r).max().map_or(2, |m| (m + 1).max(2));
        let gp = class_proportions(&g, k)?;
        let rp = class_proportions(&r, k)?;
        class_error = Some(class_proportion_error(&g, &rp)?);
        gc = Some(gp);
        rc = Some(rp);
    }
    Ok(EvalReport {
        jsd,
        jsd_bounds,
        outlier_rate: outlier,
        outlier_bounds: rb.inflate(OUTLIER_INFLATION),
        class_error,
        generated_classes: gc,
        reference_classes: rc,
    })
}

/// Compare two point files; writes `<out>/metrics.csv`.
pub fn eval(generated: &Path, reference: &Path, out: &Path) -> Result<(PathBuf, EvalReport)> {
    let report = evaluate(generated, reference)?;
    let path = out.join(METRICS_FILE);
    io::write_atomic(&path, report.to_csv().as_bytes())?;
    Ok((path, report))
}

/// Render `samples` to `<out>/<stem>.svg`, in data units when a sidecar
/// is present.
pub fn plot(samples: &Path, out: &Path, density: bool, seed: u64) -> Result<PathBuf> {
    let table = non_empty(io::read_table(samples, false)?, samples)?;
    let mut points = table.points_2d(samples)?;
    let side = io::sidecar_path(samples);
    if side.exists() {
        let n = io::read_normalization(&side)?;
        if n.dim() != 2 {
            return Err(CliError::schema(&side, "normalization is not 2-D"));
        }
        for p in &mut points {
            n.invert(p);
        }
    }
    let classes = table.classes();
    let svg = crate::svg::render(&points, classes.as_deref(), density, seed)?;
    let stem = samples.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "plot".into());
    let path = out.join(format!("{stem}.svg"));
    io::write_atomic(&path, svg.as_bytes())?;
    Ok(path)
}

/// Entities of a dataset file mapped back to data units with its sidecar.
pub fn read_denormalized(path: &Path, shape: pif_core::flow::EntityShape) -> Result<Vec<PointSet>> {
    let entities = io::read_entities(path, shape)?;
    let n = sidecar_or_identity(path, shape.dim)?;
    Ok(entities.iter().map(|e| n.invert_entity(e)).collect())
}
