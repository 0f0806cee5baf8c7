//! The flow engine: interpolated parameters for whole entities, the three
//! loss terms, one training step, masking, conditional substitution and the
//! iterative sampling chain.
//!
//! An entity is a [`PointSet`] of `M` points, each with a `d`-dimensional
//! position and optionally a one-hot type over `K` classes. The network sees
//! one flattened row per entity: sampled positions, sampled type simplex
//! points and, when enabled, one fixed/unfixed flag per point.

use ndarray::{s, Array2, ArrayView2, ArrayViewMut1, Axis};
use rand::Rng;

use crate::dists::{self, Datum, DistParams, Family};
use crate::error::{Error, Result};
use crate::net::{AdamState, Mlp, NetConfig, Prediction};
use crate::schedule::{Schedule, GAMMA_POW_FLOOR};
use crate::special::{digamma_unchecked, ln_gamma_unchecked, trigamma_unchecked};

/// Chains are run through the network this many at a time.
const SAMPLE_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    positions: Array2<f64>,
    types: Option<Array2<f64>>,
}

impl PointSet {
    pub fn new(positions: Array2<f64>, types: Option<Array2<f64>>) -> Result<Self> {
        if positions.nrows() == 0 || positions.ncols() == 0 {
            return Err(Error::OutOfRange("a point set needs at least one point and one dimension".into()));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point positions"));
        }
        if let Some(types) = &types {
            if types.nrows() != positions.nrows() {
                return Err(Error::DimensionMismatch {
                    what: "type rows",
                    expected: positions.nrows(),
                    got: types.nrows(),
                });
            }
            if types.ncols() < 2 {
                return Err(Error::OutOfRange("types need at least 2 classes".into()));
            }
            for row in types.axis_iter(Axis(0)) {
                if row.iter().any(|&v| !(v >= 0.0)) || (row.sum() - 1.0).abs() > 1e-9 {
                    return Err(Error::OutOfRange("each type row must lie on the simplex".into()));
                }
            }
        }
        Ok(Self { positions, types })
    }

    /// Points with one-hot types built from class indices.
    pub fn with_classes(positions: Array2<f64>, classes: &[usize], num_classes: usize) -> Result<Self> {
        let mut types = Array2::zeros((classes.len(), num_classes));
        for (row, &c) in classes.iter().enumerate() {
            if c >= num_classes {
                return Err(Error::IndexOutOfRange { index: c, classes: num_classes });
            }
            types[[row, c]] = 1.0;
        }
        Self::new(positions, Some(types))
    }

    pub fn untyped(positions: Array2<f64>) -> Result<Self> {
        Self::new(positions, None)
    }

    pub fn positions(&self) -> ArrayView2<'_, f64> {
        self.positions.view()
    }

    pub fn types(&self) -> Option<ArrayView2<'_, f64>> {
        self.types.as_ref().map(|t| t.view())
    }

    pub fn num_points(&self) -> usize {
        self.positions.nrows()
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.types.as_ref().map_or(0, |t| t.ncols())
    }

    pub fn shape(&self) -> EntityShape {
        EntityShape {
            points: self.num_points(),
            dim: self.dim(),
            classes: self.num_classes(),
        }
    }

    /// Class with the largest weight for point `i` (the vertex for one-hot rows).
    pub fn class_of(&self, i: usize) -> Option<usize> {
        self.types.as_ref().map(|t| argmax(t.row(i).iter().copied()))
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EntityShape {
    pub points: usize,
    pub dim: usize,
    /// Number of type classes; 0 for untyped entities.
    pub classes: usize,
}

impl EntityShape {
    pub fn position_width(&self) -> usize {
        self.points * self.dim
    }

    pub fn type_width(&self) -> usize {
        self.points * self.classes
    }

    pub fn is_typed(&self) -> bool {
        self.classes > 0
    }
}

/// Which points are held fixed as context, per feature group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSpec {
    pub fixed_position: Vec<bool>,
    pub fixed_type: Vec<bool>,
}

impl MaskSpec {
    pub fn empty(points: usize) -> Self {
        Self {
            fixed_position: vec![false; points],
            fixed_type: vec![false; points],
        }
    }

    pub fn all(points: usize) -> Self {
        Self {
            fixed_position: vec![true; points],
            fixed_type: vec![true; points],
        }
    }

    /// Fix position and type of the listed points.
    pub fn fixing(points: usize, fixed: &[usize]) -> Self {
        let mut mask = Self::empty(points);
        for &i in fixed {
            mask.fixed_position[i] = true;
            mask.fixed_type[i] = true;
        }
        mask
    }

    pub fn len(&self) -> usize {
        self.fixed_position.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.fixed_position.iter().chain(&self.fixed_type).any(|&f| f)
    }

    fn check(&self, points: usize) -> Result<()> {
        for (what, len) in [("position mask", self.fixed_position.len()), ("type mask", self.fixed_type.len())] {
            if len != points {
                return Err(Error::DimensionMismatch { what, expected: points, got: len });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_x: f64,
    pub lambda_v: f64,
}

impl LossWeights {
    pub fn new(lambda_x: f64, lambda_v: f64) -> Result<Self> {
        if !(lambda_x >= 0.0 && lambda_v >= 0.0) || !lambda_x.is_finite() || !lambda_v.is_finite() {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        if lambda_x == 0.0 && lambda_v == 0.0 {
            return Err(Error::Config("loss weights cannot both be zero".into()));
        }
        Ok(Self { lambda_x, lambda_v })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_x: 1.0,
            lambda_v: 1.0,
        }
    }
}

/// Coordinate prior: `N(0, ε₀² I)` or `La(0, β₀)`, plus the uniform
/// Dirichlet prior for types.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priors {
    pub family: Family,
    /// ε₀ for the Gaussian family, β₀ for the Laplace family.
    pub scale: f64,
}

impl Priors {
    pub fn gaussian(eps0: f64) -> Self {
        Self {
            family: Family::Gaussian,
            scale: eps0,
        }
    }

    pub fn laplace(beta0: f64) -> Self {
        Self {
            family: Family::Laplace,
            scale: beta0,
        }
    }

    fn check(&self) -> Result<()> {
        if self.family == Family::Dirichlet {
            return Err(Error::FamilyMismatch(Family::Gaussian, Family::Dirichlet));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::NonPositive {
                what: "prior scale",
                value: self.scale,
            });
        }
        Ok(())
    }

    pub fn coordinate(&self, dim: usize) -> Result<DistParams> {
        self.check()?;
        dists::prior_of(self.family, dim, self.scale)
    }
}

/// Per-point distribution parameters for one entity.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityParams {
    pub positions: Vec<DistParams>,
    pub types: Option<Vec<DistParams>>,
}

impl EntityParams {
    /// Prior parameters for every point.
    pub fn prior(shape: EntityShape, priors: &Priors) -> Result<Self> {
        let coord = priors.coordinate(shape.dim)?;
        let types = if shape.is_typed() {
            Some(vec![dists::prior_of(Family::Dirichlet, shape.classes, 1.0)?; shape.points])
        } else {
            None
        };
        Ok(Self {
            positions: vec![coord; shape.points],
            types,
        })
    }
}

/// Loss on the continuous coordinates for the Laplace family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LaplaceLossMode {
    /// Subtract the per-coordinate constant so a perfect prediction scores 0.
    #[default]
    Normalized,
    /// Keep the constant: a perfect prediction scores `d` per point.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub shape: EntityShape,
    pub schedule: Schedule,
    pub priors: Priors,
    pub loss_weights: LossWeights,
    pub laplace_loss: LaplaceLossMode,
    /// Probability that an entity is trained in masked mode (`P_m`).
    pub mask_prob: f64,
    /// Per-point fix probability inside masked mode (`P_am`).
    pub point_mask_prob: f64,
    /// Append one fixed/unfixed indicator per point to the network input.
    pub mask_flags: bool,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        self.priors.check()?;
        if self.shape.points == 0 || self.shape.dim == 0 || self.shape.classes == 1 {
            return Err(Error::Config(format!("invalid entity shape {:?}", self.shape)));
        }
        for (name, p) in [("mask_prob", self.mask_prob), ("point_mask_prob", self.point_mask_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    /// Width of one flattened network input row.
    pub fn input_width(&self) -> usize {
        self.shape.position_width() + self.shape.type_width() + if self.mask_flags { self.shape.points } else { 0 }
    }

    /// Network shape for this flow with the given trunk.
    pub fn net_config(&self, hidden_dim: usize, depth: usize, time_embed_dim: usize) -> NetConfig {
        NetConfig {
            in_dim: self.input_width(),
            hidden_dim,
            depth,
            out_cont_dim: self.shape.position_width(),
            out_type_dim: self.shape.classes,
            type_groups: if self.shape.is_typed() { self.shape.points } else { 0 },
            time_embed_dim,
        }
    }

    fn check_entity(&self, entity: &PointSet) -> Result<()> {
        if entity.shape() != self.shape {
            return Err(Error::Config(format!(
                "entity shape {:?} does not match flow shape {:?}",
                entity.shape(),
                self.shape
            )));
        }
        Ok(())
    }
}

/// Anything that maps network input rows and times to predicted Dirac
/// parameters.
pub trait Predictor {
    fn predict(&self, input: ArrayView2<'_, f64>, t: &[f64]) -> Result<Prediction>;
}

impl Predictor for Mlp {
    fn predict(&self, input: ArrayView2<'_, f64>, t: &[f64]) -> Result<Prediction> {
        Mlp::predict(self, input, t)
    }
}

/// `θ_t = f(t) θ_data + (1 - f(t)) θ_prior` for every point of `entity`.
pub fn make_theta_t(entity: &PointSet, schedule: &Schedule, t: f64, priors: &Priors) -> Result<EntityParams> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange(format!("t must lie in [0, 1], got {t}")));
    }
    let w = schedule.weight(t);
    let coord_prior = priors.coordinate(entity.dim())?;
    let positions = entity
        .positions
        .axis_iter(Axis(0))
        .map(|row| {
            let row = row.to_vec();
            dists::interpolate(&dists::dirac_of(Datum::Point(&row), priors.family)?, &coord_prior, w)
        })
        .collect::<Result<Vec<_>>>()?;
    let types = match &entity.types {
        None => None,
        Some(types) => {
            let type_prior = dists::prior_of(Family::Dirichlet, types.ncols(), 1.0)?;
            Some(
                types
                    .axis_iter(Axis(0))
                    .map(|row| {
                        let data = DistParams::Dirichlet(dists::DirichletParams::new(row.to_vec())?);
                        dists::interpolate(&data, &type_prior, w)
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        }
    };
    Ok(EntityParams { positions, types })
}

/// Replace the parameters of fixed points with Dirac endpoints at the
/// entity's own values.
pub fn conditional_params(theta: &EntityParams, mask: &MaskSpec, entity: &PointSet) -> Result<EntityParams> {
    let points = entity.num_points();
    mask.check(points)?;
    if theta.positions.len() != points {
        return Err(Error::DimensionMismatch {
            what: "conditioned parameters",
            expected: points,
            got: theta.positions.len(),
        });
    }
    let mut out = theta.clone();
    for i in 0..points {
        if mask.fixed_position[i] {
            let row = entity.positions.row(i).to_vec();
            out.positions[i] = dists::dirac_of(Datum::Point(&row), theta.positions[i].family())?;
        }
    }
    if let (Some(out_types), Some(types)) = (out.types.as_mut(), entity.types.as_ref()) {
        for i in 0..points {
            if mask.fixed_type[i] {
                out_types[i] = DistParams::Dirichlet(dists::DirichletParams::new(types.row(i).to_vec())?);
            }
        }
    }
    Ok(out)
}

/// With probability `1 - P_m` the empty mask; otherwise each point is fixed
/// (position and type) independently with probability `P_am`.
pub fn draw_mask<R: Rng + ?Sized>(points: usize, mask_prob: f64, point_mask_prob: f64, rng: &mut R) -> Result<MaskSpec> {
    for (name, p) in [("P_m", mask_prob), ("P_am", point_mask_prob)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    if rng.random::<f64>() >= mask_prob {
        return Ok(MaskSpec::empty(points));
    }
    let fixed: Vec<bool> = (0..points).map(|_| rng.random::<f64>() < point_mask_prob).collect();
    Ok(MaskSpec {
        fixed_position: fixed.clone(),
        fixed_type: fixed,
    })
}

/// Write one network input row from sampled parameters.
fn encode_row<R: Rng + ?Sized>(
    params: &EntityParams,
    mask: &MaskSpec,
    cfg: &FlowConfig,
    rng: &mut R,
    mut row: ArrayViewMut1<'_, f64>,
) {
    let shape = cfg.shape;
    let row = row.as_slice_mut().expect("input rows are contiguous");
    let (pos, rest) = row.split_at_mut(shape.position_width());
    for (p, out) in params.positions.iter().zip(pos.chunks_mut(shape.dim)) {
        out.copy_from_slice(&dists::sample(p, rng));
    }
    let (types, flags) = rest.split_at_mut(shape.type_width());
    if let Some(type_params) = &params.types {
        for (p, out) in type_params.iter().zip(types.chunks_mut(shape.classes)) {
            out.copy_from_slice(&dists::sample(p, rng));
        }
    }
    if cfg.mask_flags {
        for (flag, &fixed) in flags.iter_mut().zip(&mask.fixed_position) {
            *flag = if fixed { 1.0 } else { 0.0 };
        }
    }
}

/// Split a flattened input row back into a point set.
pub fn decode_row(row: &[f64], shape: EntityShape) -> Result<PointSet> {
    let positions = Array2::from_shape_vec((shape.points, shape.dim), row[..shape.position_width()].to_vec())
        .expect("row holds the position block");
    let types = shape.is_typed().then(|| {
        Array2::from_shape_vec(
            (shape.points, shape.classes),
            row[shape.position_width()..shape.position_width() + shape.type_width()].to_vec(),
        )
        .expect("row holds the type block")
    });
    PointSet::new(positions, types)
}

fn gamma_pow_floor(schedule: &Schedule, t: f64) -> f64 {
    schedule.gamma_pow(t).max(GAMMA_POW_FLOOR)
}

/// Coefficient `(1 - γ^t)² / (2 γ^t ε₀²)` of the Gaussian loss at node `t`.
pub fn gaussian_coefficient(schedule: &Schedule, t: f64, eps0: f64) -> f64 {
    let g = schedule.gamma_pow(t);
    (1.0 - g).powi(2) / (2.0 * g.max(GAMMA_POW_FLOOR) * eps0 * eps0)
}

fn check_pair(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, what: &'static str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            what,
            expected: b.len(),
            got: a.len(),
        });
    }
    if a.nrows() == 0 {
        return Err(Error::OutOfRange(format!("{what}: empty batch")));
    }
    Ok(())
}

/// Gaussian coordinate loss at the divergence node `t` (one step ahead of
/// the network input node): the squared distance between predicted and true
/// Dirac locations times [`gaussian_coefficient`], summed over the columns
/// of each row and averaged over rows.
pub fn loss_gaussian(
    pred_means: ArrayView2<'_, f64>,
    data: ArrayView2<'_, f64>,
    schedule: &Schedule,
    t: f64,
    eps0: f64,
) -> Result<f64> {
    check_pair(pred_means, data, "gaussian loss")?;
    let coef = gaussian_coefficient(schedule, t, eps0);
    let total: f64 = pred_means.iter().zip(data.iter()).map(|(p, d)| (p - d) * (p - d)).sum();
    Ok(coef * total / pred_means.nrows() as f64)
}

/// `Σ exp(-|Δ|/s) + |Δ|/s` with `s = β₀ γ^t`, per coordinate, averaged
/// over rows. Normalized mode subtracts 1 per coordinate.
pub fn loss_laplace(
    pred_locations: ArrayView2<'_, f64>,
    data: ArrayView2<'_, f64>,
    schedule: &Schedule,
    t: f64,
    beta0: f64,
    mode: LaplaceLossMode,
) -> Result<f64> {
    check_pair(pred_locations, data, "laplace loss")?;
    let s = beta0 * gamma_pow_floor(schedule, t);
    let total: f64 = pred_locations
        .iter()
        .zip(data.iter())
        .map(|(p, d)| laplace_term(p - d, s, mode).0)
        .sum();
    Ok(total / pred_locations.nrows() as f64)
}

#[inline]
fn laplace_term(delta: f64, s: f64, mode: LaplaceLossMode) -> (f64, f64) {
    let r = delta.abs() / s;
    let e = (-r).exp();
    let constant = match mode {
        LaplaceLossMode::Normalized => 1.0,
        LaplaceLossMode::Literal => 0.0,
    };
    (e + r - constant, delta.signum() * (1.0 - e) / s)
}

/// Dirichlet type loss for one point: interpolates prediction and truth at
/// weight `w` and evaluates
/// `Σ lnΓ(θ_i) - lnΓ(θ̂_i) + (θ̂_i - θ_i)(ψ(θ̂_i) - ψ(1))`.
/// Returns the value and its gradient with respect to the predicted
/// probabilities.
fn dirichlet_term(pred: &[f64], truth: &[f64], w: f64, grad: Option<&mut [f64]>) -> f64 {
    let uniform = 1.0 / pred.len() as f64;
    let psi_one = digamma_unchecked(1.0);
    let mut value = 0.0;
    let mut grad = grad;
    for i in 0..pred.len() {
        let th_hat = (w * pred[i] + (1.0 - w) * uniform).max(dists::CONCENTRATION_FLOOR);
        let th = (w * truth[i] + (1.0 - w) * uniform).max(dists::CONCENTRATION_FLOOR);
        value += ln_gamma_unchecked(th) - ln_gamma_unchecked(th_hat) + (th_hat - th) * (digamma_unchecked(th_hat) - psi_one);
        if let Some(g) = grad.as_deref_mut() {
            g[i] = w * (-psi_one + (th_hat - th) * trigamma_unchecked(th_hat));
        }
    }
    value
}

/// Dirichlet type loss at the divergence node `t`, summed over the `K`-wide
/// groups of each row and averaged over rows. `data` holds one-hot rows in
/// the same layout as `pred_simplex`.
pub fn loss_dirichlet(
    pred_simplex: ArrayView2<'_, f64>,
    data: ArrayView2<'_, f64>,
    classes: usize,
    schedule: &Schedule,
    t: f64,
) -> Result<f64> {
    check_pair(pred_simplex, data, "dirichlet loss")?;
    if classes < 2 || pred_simplex.ncols() % classes != 0 {
        return Err(Error::OutOfRange(format!(
            "{} columns do not split into groups of {classes} classes",
            pred_simplex.ncols()
        )));
    }
    if pred_simplex.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::OutOfRange("predicted probabilities must be strictly positive".into()));
    }
    let w = schedule.weight(t);
    let mut total = 0.0;
    for (p, d) in pred_simplex.axis_iter(Axis(0)).zip(data.axis_iter(Axis(0))) {
        let p = p.to_vec();
        let d = d.to_vec();
        for (pg, dg) in p.chunks(classes).zip(d.chunks(classes)) {
            total += dirichlet_term(pg, dg, w, None);
        }
    }
    Ok(total / pred_simplex.nrows() as f64)
}

/// Per-term losses of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub position: f64,
    /// Absent without a categorical head.
    pub types: Option<f64>,
}

/// `λ_x L_x + λ_v L_v`; a missing type term contributes 0.
pub fn total_loss(parts: LossParts, weights: LossWeights) -> f64 {
    weights.lambda_x * parts.position + parts.types.map_or(0.0, |v| weights.lambda_v * v)
}

/// A training batch after noise has been drawn: network inputs, the input
/// node of every entity and the node its divergence is evaluated at.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub input: Array2<f64>,
    pub t: Vec<f64>,
    pub t_eval: Vec<f64>,
    pub masks: Vec<MaskSpec>,
}

/// Draw a time index, a mask and a sample of `θ_t` for every entity.
pub fn prepare_batch<R: Rng + ?Sized>(batch: &[PointSet], cfg: &FlowConfig, rng: &mut R) -> Result<PreparedBatch> {
    if batch.is_empty() {
        return Err(Error::OutOfRange("empty training batch".into()));
    }
    let n = cfg.schedule.n_steps();
    let mut input = Array2::zeros((batch.len(), cfg.input_width()));
    let mut t = Vec::with_capacity(batch.len());
    let mut t_eval = Vec::with_capacity(batch.len());
    let mut masks = Vec::with_capacity(batch.len());
    for (entity, row) in batch.iter().zip(input.axis_iter_mut(Axis(0))) {
        cfg.check_entity(entity)?;
        let i = rng.random_range(0..n);
        let ti = cfg.schedule.t_at(i);
        let mask = draw_mask(entity.num_points(), cfg.mask_prob, cfg.point_mask_prob, rng)?;
        let theta = make_theta_t(entity, &cfg.schedule, ti, &cfg.priors)?;
        let theta = conditional_params(&theta, &mask, entity)?;
        encode_row(&theta, &mask, cfg, rng, row);
        t.push(ti);
        t_eval.push(cfg.schedule.t_at(i + 1));
        masks.push(mask);
    }
    Ok(PreparedBatch { input, t, t_eval, masks })
}

/// Loss of a prediction for a prepared batch, with its gradient with
/// respect to the network outputs. Fixed points contribute nothing.
pub struct BatchLoss {
    pub loss: f64,
    pub parts: LossParts,
    pub d_cont: Array2<f64>,
    pub d_simplex: Array2<f64>,
}

pub fn evaluate_loss(pred: &Prediction, batch: &[PointSet], prepared: &PreparedBatch, cfg: &FlowConfig) -> Result<BatchLoss> {
    let shape = cfg.shape;
    let b = batch.len();
    let scale = 1.0 / b as f64;
    let weights = cfg.loss_weights;
    let mut d_cont = Array2::zeros((b, shape.position_width()));
    let mut d_simplex = Array2::zeros((b, shape.type_width()));
    let mut pos_total = 0.0;
    let mut type_total = 0.0;
    let mut group_grad = vec![0.0; shape.classes];
    for (idx, entity) in batch.iter().enumerate() {
        let t_eval = prepared.t_eval[idx];
        let mask = &prepared.masks[idx];
        let pred_pos = pred.cont.row(idx);
        let mut entity_pos = 0.0;
        let mut entity_type = 0.0;
        for p in 0..shape.points {
            if mask.fixed_position[p] {
                continue;
            }
            for k in 0..shape.dim {
                let col = p * shape.dim + k;
                let delta = pred_pos[col] - entity.positions[[p, k]];
                let (value, grad) = match cfg.priors.family {
                    Family::Gaussian => {
                        let coef = gaussian_coefficient(&cfg.schedule, t_eval, cfg.priors.scale);
                        (coef * delta * delta, 2.0 * coef * delta)
                    }
                    _ => {
                        let s = cfg.priors.scale * gamma_pow_floor(&cfg.schedule, t_eval);
                        laplace_term(delta, s, cfg.laplace_loss)
                    }
                };
                entity_pos += value;
                d_cont[[idx, col]] = weights.lambda_x * grad * scale;
            }
        }
        if let Some(types) = &entity.types {
            let w = cfg.schedule.weight(t_eval);
            let pred_row = pred.simplex.row(idx);
            let pred_row = pred_row.as_slice().expect("prediction rows are contiguous");
            for p in 0..shape.points {
                if mask.fixed_type[p] {
                    continue;
                }
                let range = p * shape.classes..(p + 1) * shape.classes;
                let truth = types.row(p).to_vec();
                entity_type += dirichlet_term(&pred_row[range.clone()], &truth, w, Some(&mut group_grad));
                for (k, col) in range.enumerate() {
                    d_simplex[[idx, col]] = weights.lambda_v * group_grad[k] * scale;
                }
            }
        }
        let entity_loss = weights.lambda_x * entity_pos + weights.lambda_v * entity_type;
        if !entity_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                t: prepared.t[idx],
                index: idx,
            });
        }
        pos_total += entity_pos;
        type_total += entity_type;
    }
    let parts = LossParts {
        position: pos_total * scale,
        types: shape.is_typed().then_some(type_total * scale),
    };
    Ok(BatchLoss {
        loss: total_loss(parts, weights),
        parts,
        d_cont,
        d_simplex,
    })
}

/// One optimizer step on `batch`; returns the batch loss before the update.
pub fn train_step<R: Rng + ?Sized>(
    net: &mut Mlp,
    optimizer: &mut AdamState,
    batch: &[PointSet],
    cfg: &FlowConfig,
    rng: &mut R,
) -> Result<BatchLoss> {
    let prepared = prepare_batch(batch, cfg, rng)?;
    let trace = net.forward_batch(prepared.input.view(), &prepared.t)?;
    let loss = evaluate_loss(&trace.output, batch, &prepared, cfg)?;
    let grad = net.backward_batch(&trace, loss.d_cont.view(), loss.d_simplex.view())?;
    optimizer.step(net.params_mut(), &grad)?;
    Ok(loss)
}

/// A fixed substructure for one chain: the mask and the entity supplying
/// the fixed values.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub mask: MaskSpec,
    pub context: PointSet,
}

/// State of a batch of chains at one step, after conditional substitution
/// and sampling, handed to an observer.
pub struct ChainStep<'a> {
    pub step: usize,
    pub t: f64,
    /// Index of the first chain in this batch.
    pub first_chain: usize,
    pub params: &'a [EntityParams],
    pub input: ArrayView2<'a, f64>,
}

/// Run `count` independent sampling chains. Chain `j` uses
/// `conditions[j % conditions.len()]` when conditions are given.
///
/// Each step samples the current parameters (fixed points substituted by
/// their Diracs), predicts Dirac endpoints, and re-interpolates them with
/// the prior at the next node. The result takes positions from the last
/// predicted means and types from the argmax of the last predicted simplex;
/// fixed entries are copied from the context.
pub fn sample_chain<P, R>(
    net: &P,
    cfg: &FlowConfig,
    count: usize,
    conditions: &[Condition],
    rng: &mut R,
    mut observer: Option<&mut dyn FnMut(&ChainStep<'_>)>,
) -> Result<Vec<PointSet>>
where
    P: Predictor + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let shape = cfg.shape;
    for c in conditions {
        cfg.check_entity(&c.context)?;
        c.mask.check(shape.points)?;
    }
    let prior = EntityParams::prior(shape, &cfg.priors)?;
    let coord_prior = cfg.priors.coordinate(shape.dim)?;
    let type_prior = if shape.is_typed() {
        Some(dists::prior_of(Family::Dirichlet, shape.classes, 1.0)?)
    } else {
        None
    };
    let empty_mask = MaskSpec::empty(shape.points);
    let n = cfg.schedule.n_steps();
    let mut out = Vec::with_capacity(count);

    let mut start = 0;
    while start < count {
        let len = SAMPLE_CHUNK.min(count - start);
        let cond_of = |j: usize| (!conditions.is_empty()).then(|| &conditions[(start + j) % conditions.len()]);
        let mut params = vec![prior.clone(); len];
        let mut last: Option<Prediction> = None;
        for i in 0..n {
            let t = cfg.schedule.t_at(i);
            let mut input = Array2::zeros((len, cfg.input_width()));
            for (j, row) in input.axis_iter_mut(Axis(0)).enumerate() {
                let (mask, theta) = match cond_of(j) {
                    Some(c) => (&c.mask, conditional_params(&params[j], &c.mask, &c.context)?),
                    None => (&empty_mask, params[j].clone()),
                };
                encode_row(&theta, mask, cfg, rng, row);
                params[j] = theta;
            }
            if let Some(obs) = observer.as_deref_mut() {
                obs(&ChainStep {
                    step: i,
                    t,
                    first_chain: start,
                    params: &params,
                    input: input.view(),
                });
            }
            let pred = net.predict(input.view(), &vec![t; len])?;
            if pred.cont.iter().chain(pred.simplex.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinitePrediction { step: i });
            }
            let w = cfg.schedule.weight(cfg.schedule.t_at(i + 1));
            for (j, theta) in params.iter_mut().enumerate() {
                let cont = pred.cont.row(j);
                for (p, slot) in theta.positions.iter_mut().enumerate() {
                    let mean = cont.slice(s![p * shape.dim..(p + 1) * shape.dim]).to_vec();
                    *slot = dists::interpolate(&dists::dirac_of(Datum::Point(&mean), cfg.priors.family)?, &coord_prior, w)?;
                }
                if let (Some(types), Some(type_prior)) = (theta.types.as_mut(), type_prior.as_ref()) {
                    let simplex = pred.simplex.row(j);
                    for (p, slot) in types.iter_mut().enumerate() {
                        let probs = simplex.slice(s![p * shape.classes..(p + 1) * shape.classes]).to_vec();
                        let probs = DistParams::Dirichlet(dists::DirichletParams::new(probs)?);
                        *slot = dists::interpolate(&probs, type_prior, w)?;
                    }
                }
            }
            last = Some(pred);
        }
        let last = last.expect("schedule has at least one step");
        for j in 0..len {
            let mut positions = Array2::from_shape_vec((shape.points, shape.dim), last.cont.row(j).to_vec())
                .expect("prediction width matches shape");
            let mut types = shape.is_typed().then(|| {
                let mut types = Array2::zeros((shape.points, shape.classes));
                let simplex = last.simplex.row(j);
                for p in 0..shape.points {
                    let k = argmax(simplex.slice(s![p * shape.classes..(p + 1) * shape.classes]).iter().copied());
                    types[[p, k]] = 1.0;
                }
                types
            });
            if let Some(c) = cond_of(j) {
                for p in 0..shape.points {
                    if c.mask.fixed_position[p] {
                        positions.row_mut(p).assign(&c.context.positions.row(p));
                    }
                    if let (Some(types), Some(ctx)) = (types.as_mut(), c.context.types.as_ref()) {
                        if c.mask.fixed_type[p] {
                            types.row_mut(p).assign(&ctx.row(p));
                        }
                    }
                }
            }
            out.push(PointSet::new(positions, types).map_err(|_| Error::NonFinitePrediction { step: n - 1 })?);
        }
        start += len;
    }
    Ok(out)
}
