//! Deterministic toy datasets.
//!
//! Four 2-D densities (`swissroll`, `swissroll_moons`, `chessboard_sparse`,
//! `chessboard_dense`) with one untyped point per entity, and two typed
//! families that exercise the categorical head and conditioning:
//! `typed_mixture` (one typed point per entity) and `polygon5` (five typed
//! points forming a jittered regular pentagon).
//!
//! Generators work in data units; [`generate`] then maps every coordinate to
//! zero mean and unit standard deviation and returns the affine map so
//! samples can be taken back to data units.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::flow::{EntityShape, PointSet};

/// The spiral is divided by this before jitter so it has roughly unit spread.
pub const SWISSROLL_SCALE: f64 = 7.0;
/// Gaussian jitter on the spiral and moons, in the scaled units above.
pub const SWISSROLL_NOISE: f64 = 0.05;
/// Moons are shifted right by this so they sit clear of the spiral.
pub const MOONS_OFFSET: [f64; 2] = [3.5, -0.25];
/// Cluster centers of `typed_mixture`; the class id is the index.
pub const MIXTURE_CENTERS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]];
pub const MIXTURE_STD: f64 = 0.25;
pub const PENTAGON_RADIUS: f64 = 1.0;
/// Relative radial jitter per pentagon vertex (uniform in ±).
pub const PENTAGON_JITTER: f64 = 0.02;
/// Pentagon centers are uniform in `[-h, h]²`.
pub const PENTAGON_TRANSLATION: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetName {
    Swissroll,
    SwissrollMoons,
    ChessboardSparse,
    ChessboardDense,
    TypedMixture,
    Polygon5,
}

impl DatasetName {
    pub const ALL: [DatasetName; 6] = [
        DatasetName::Swissroll,
        DatasetName::SwissrollMoons,
        DatasetName::ChessboardSparse,
        DatasetName::ChessboardDense,
        DatasetName::TypedMixture,
        DatasetName::Polygon5,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::Swissroll => "swissroll",
            DatasetName::SwissrollMoons => "swissroll_moons",
            DatasetName::ChessboardSparse => "chessboard_sparse",
            DatasetName::ChessboardDense => "chessboard_dense",
            DatasetName::TypedMixture => "typed_mixture",
            DatasetName::Polygon5 => "polygon5",
        }
    }

    pub fn shape(&self) -> EntityShape {
        match self {
            DatasetName::TypedMixture => EntityShape { points: 1, dim: 2, classes: 4 },
            DatasetName::Polygon5 => EntityShape { points: 5, dim: 2, classes: 5 },
            _ => EntityShape { points: 1, dim: 2, classes: 0 },
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    /// Accepts `snake_case` and `kebab-case` names.
    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        DatasetName::ALL
            .into_iter()
            .find(|d| d.as_str() == key)
            .ok_or_else(|| Error::UnknownDataset(s.to_string()))
    }
}

/// Per-coordinate affine map `x ↦ (x - center) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            center: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn new(center: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if center.len() != scale.len() {
            return Err(Error::DimensionMismatch {
                what: "normalization",
                expected: center.len(),
                got: scale.len(),
            });
        }
        if center.iter().any(|c| !c.is_finite()) || scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("normalization must be finite with positive scale".into()));
        }
        Ok(Self { center, scale })
    }

    /// Mean and population standard deviation of every coordinate over all
    /// points of all entities.
    pub fn fit(entities: &[PointSet]) -> Result<Self> {
        let dim = entities.first().map(|e| e.dim()).ok_or_else(|| Error::OutOfRange("empty dataset".into()))?;
        let mut sum = vec![0.0; dim];
        let mut count = 0usize;
        for e in entities {
            for row in e.positions().rows() {
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
                count += 1;
            }
        }
        let center: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; dim];
        for e in entities {
            for row in e.positions().rows() {
                for ((acc, v), c) in var.iter_mut().zip(row).zip(&center) {
                    *acc += (v - c) * (v - c);
                }
            }
        }
        let scale = var.iter().map(|v| (v / count as f64).sqrt()).collect();
        Self::new(center, scale)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn apply(&self, x: &mut [f64]) {
        for ((v, c), s) in x.iter_mut().zip(&self.center).zip(&self.scale) {
            *v = (*v - c) / s;
        }
    }

    pub fn invert(&self, x: &mut [f64]) {
        for ((v, c), s) in x.iter_mut().zip(&self.center).zip(&self.scale) {
            *v = *v * s + c;
        }
    }

    fn map_entity(&self, e: &PointSet, forward: bool) -> PointSet {
        let mut positions = e.positions().to_owned();
        for mut row in positions.rows_mut() {
            let row = row.as_slice_mut().expect("owned rows are contiguous");
            if forward {
                self.apply(row)
            } else {
                self.invert(row)
            }
        }
        PointSet::new(positions, e.types().map(|t| t.to_owned())).expect("affine map keeps a valid point set")
    }

    pub fn apply_entity(&self, e: &PointSet) -> PointSet {
        self.map_entity(e, true)
    }

    pub fn invert_entity(&self, e: &PointSet) -> PointSet {
        self.map_entity(e, false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub n_samples: usize,
    pub seed: u64,
    /// Fit from the generated data when `None`.
    pub normalization: Option<Normalization>,
}

impl DatasetSpec {
    pub fn new(name: DatasetName, n_samples: usize, seed: u64) -> Self {
        Self {
            name,
            n_samples,
            seed,
            normalization: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: DatasetName,
    pub entities: Vec<PointSet>,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn shape(&self) -> EntityShape {
        self.name.shape()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// All entities mapped back to data units.
    pub fn denormalized(&self) -> Vec<PointSet> {
        self.entities.iter().map(|e| self.normalization.invert_entity(e)).collect()
    }
}

/// Normalized dataset plus the map that was applied.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    let raw = generate_raw(spec.name, spec.n_samples, spec.seed)?;
    let normalization = match &spec.normalization {
        Some(n) => {
            if n.dim() != spec.name.shape().dim {
                return Err(Error::DimensionMismatch {
                    what: "normalization",
                    expected: spec.name.shape().dim,
                    got: n.dim(),
                });
            }
            n.clone()
        }
        None => Normalization::fit(&raw)?,
    };
    let entities = raw.iter().map(|e| normalization.apply_entity(e)).collect();
    Ok(Dataset {
        name: spec.name,
        entities,
        normalization,
    })
}

/// Entities in data units.
pub fn generate_raw(name: DatasetName, n_samples: usize, seed: u64) -> Result<Vec<PointSet>> {
    if n_samples == 0 {
        return Err(Error::OutOfRange("n_samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let one = |x: f64, y: f64| PointSet::untyped(Array2::from_shape_vec((1, 2), vec![x, y]).expect("1x2"));
    (0..n_samples)
        .map(|_| match name {
            DatasetName::Swissroll => {
                let [x, y] = swissroll_point(rng);
                one(x, y)
            }
            DatasetName::SwissrollMoons => {
                let [x, y] = if rng.random::<bool>() { swissroll_point(rng) } else { moons_point(rng) };
                one(x, y)
            }
            DatasetName::ChessboardSparse => {
                let [x, y] = chessboard_point(4, rng);
                one(x, y)
            }
            DatasetName::ChessboardDense => {
                let [x, y] = chessboard_point(8, rng);
                one(x, y)
            }
            DatasetName::TypedMixture => {
                let class = rng.random_range(0..MIXTURE_CENTERS.len());
                let c = MIXTURE_CENTERS[class];
                let x = c[0] + MIXTURE_STD * rng.sample::<f64, _>(StandardNormal);
                let y = c[1] + MIXTURE_STD * rng.sample::<f64, _>(StandardNormal);
                PointSet::with_classes(Array2::from_shape_vec((1, 2), vec![x, y]).expect("1x2"), &[class], 4)
            }
            DatasetName::Polygon5 => pentagon(rng),
        })
        .collect()
}

fn swissroll_point<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    let theta = 1.5 * PI * (1.0 + 2.0 * rng.random::<f64>());
    let jx: f64 = rng.sample(StandardNormal);
    let jy: f64 = rng.sample(StandardNormal);
    [
        theta * theta.cos() / SWISSROLL_SCALE + SWISSROLL_NOISE * jx,
        theta * theta.sin() / SWISSROLL_SCALE + SWISSROLL_NOISE * jy,
    ]
}

/// Two interleaved half circles.
fn moons_point<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    let s = PI * rng.random::<f64>();
    let (x, y) = if rng.random::<bool>() {
        (s.cos(), s.sin())
    } else {
        (1.0 - s.cos(), 0.5 - s.sin())
    };
    let jx: f64 = rng.sample(StandardNormal);
    let jy: f64 = rng.sample(StandardNormal);
    [
        x + MOONS_OFFSET[0] + SWISSROLL_NOISE * jx,
        y + MOONS_OFFSET[1] + SWISSROLL_NOISE * jy,
    ]
}

/// Uniform over the black cells of a `cells × cells` board on `[-1, 1]²`;
/// a cell `(i, j)` is black when `i + j` is odd.
fn chessboard_point<R: Rng + ?Sized>(cells: usize, rng: &mut R) -> [f64; 2] {
    let black = cells * cells / 2;
    let k = rng.random_range(0..black);
    let row = k / (cells / 2);
    let col = 2 * (k % (cells / 2)) + (row + 1) % 2;
    let width = 2.0 / cells as f64;
    [
        -1.0 + width * (col as f64 + rng.random::<f64>()),
        -1.0 + width * (row as f64 + rng.random::<f64>()),
    ]
}

/// Parity of the board cell holding `(x, y)`, in data units.
pub fn chessboard_cell_is_black(x: f64, y: f64, cells: usize) -> bool {
    let i = (cells as f64 * (x + 1.0) / 2.0).floor() as i64;
    let j = (cells as f64 * (y + 1.0) / 2.0).floor() as i64;
    (i + j).rem_euclid(2) == 1
}

fn pentagon<R: Rng + ?Sized>(rng: &mut R) -> Result<PointSet> {
    let phase = 2.0 * PI * rng.random::<f64>();
    let cx = rng.random_range(-PENTAGON_TRANSLATION..PENTAGON_TRANSLATION);
    let cy = rng.random_range(-PENTAGON_TRANSLATION..PENTAGON_TRANSLATION);
    let mut positions = Array2::zeros((5, 2));
    for v in 0..5 {
        let r = PENTAGON_RADIUS * (1.0 + PENTAGON_JITTER * rng.random_range(-1.0..=1.0));
        let a = phase + 2.0 * PI * v as f64 / 5.0;
        positions[[v, 0]] = cx + r * a.cos();
        positions[[v, 1]] = cy + r * a.sin();
    }
    PointSet::with_classes(positions, &[0, 1, 2, 3, 4], 5)
}

/// Chord length between pentagon vertices `i` and `j` of a regular pentagon
/// with circumradius `radius`.
pub fn pentagon_chord(i: usize, j: usize, radius: f64) -> f64 {
    let k = (i as i64 - j as i64).unsigned_abs() as usize % 5;
    let k = k.min(5 - k);
    2.0 * radius * (k as f64 * PI / 5.0).sin()
}

/// Largest relative deviation of the pairwise distances of `points` (data
/// units, vertex `i` at row `i`) from the regular-pentagon chords.
pub fn pentagon_chord_error(points: &PointSet, radius: f64) -> f64 {
    let pos = points.positions();
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        for j in i + 1..5 {
            let d = ((pos[[i, 0]] - pos[[j, 0]]).powi(2) + (pos[[i, 1]] - pos[[j, 1]]).powi(2)).sqrt();
            let chord = pentagon_chord(i, j, radius);
            worst = worst.max((d - chord).abs() / chord);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for name in DatasetName::ALL {
            assert_eq!(name.as_str().parse::<DatasetName>().unwrap(), name);
            assert_eq!(name.as_str().replace('_', "-").parse::<DatasetName>().unwrap(), name);
        }
        assert!(matches!("spiral".parse::<DatasetName>(), Err(Error::UnknownDataset(_))));
    }

    #[test]
    fn exact_counts() {
        let d = generate(&DatasetSpec::new(DatasetName::Swissroll, 100_000, 1)).unwrap();
        assert_eq!(d.len(), 100_000);
        let p = generate(&DatasetSpec::new(DatasetName::Polygon5, 10, 1)).unwrap();
        assert_eq!(p.len(), 10);
        assert!(p.entities.iter().all(|e| e.num_points() == 5 && e.num_classes() == 5));
        assert!(generate(&DatasetSpec::new(DatasetName::Swissroll, 0, 1)).is_err());
    }

    #[test]
    fn chessboard_parity() {
        for (name, cells) in [(DatasetName::ChessboardSparse, 4), (DatasetName::ChessboardDense, 8)] {
            let d = generate(&DatasetSpec::new(name, 20_000, 7)).unwrap();
            for e in d.denormalized() {
                let p = e.positions();
                assert!(chessboard_cell_is_black(p[[0, 0]], p[[0, 1]], cells));
                assert!(p[[0, 0]].abs() <= 1.0 + 1e-12 && p[[0, 1]].abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn pentagon_chords_within_jitter() {
        let raw = generate_raw(DatasetName::Polygon5, 2000, 3).unwrap();
        for e in &raw {
            assert!(pentagon_chord_error(e, PENTAGON_RADIUS) < 0.05);
        }
        let d = generate(&DatasetSpec::new(DatasetName::Polygon5, 2000, 3)).unwrap();
        for (a, b) in d.denormalized().iter().zip(&raw) {
            for (x, y) in a.positions().iter().zip(b.positions().iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalized_moments_and_determinism() {
        for name in DatasetName::ALL {
            let spec = DatasetSpec::new(name, 100_000 / name.shape().points, 11);
            let d = generate(&spec).unwrap();
            let again = generate(&spec).unwrap();
            assert_eq!(d, again);
            let n = Normalization::fit(&d.entities).unwrap();
            for k in 0..2 {
                assert!(n.center[k].abs() < 0.01, "{name} mean {}", n.center[k]);
                assert!((0.95..=1.05).contains(&n.scale[k]), "{name} std {}", n.scale[k]);
            }
        }
    }

    #[test]
    fn mixture_proportions() {
        let d = generate(&DatasetSpec::new(DatasetName::TypedMixture, 100_000, 5)).unwrap();
        let mut counts = [0usize; 4];
        for e in &d.entities {
            counts[e.class_of(0).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e5 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn supplied_normalization_is_used() {
        let norm = Normalization::new(vec![1.0, -1.0], vec![2.0, 4.0]).unwrap();
        let mut spec = DatasetSpec::new(DatasetName::ChessboardSparse, 10, 2);
        spec.normalization = Some(norm.clone());
        let d = generate(&spec).unwrap();
        assert_eq!(d.normalization, norm);
        let raw = generate_raw(DatasetName::ChessboardSparse, 10, 2).unwrap();
        assert!((d.entities[0].positions()[[0, 0]] - (raw[0].positions()[[0, 0]] - 1.0) / 2.0).abs() < 1e-15);
        assert!(Normalization::new(vec![0.0], vec![0.0]).is_err());
    }
}
