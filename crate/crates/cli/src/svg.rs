//! Static SVG scatter plots with an optional density underlay.

use std::fmt::Write as _;

use pif_core::metrics::{Bounds, Histogram2D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};

pub const MAX_POINTS: usize = 20_000;
pub const DENSITY_BINS: usize = 64;
const SIZE: f64 = 600.0;
const MARGIN: f64 = 20.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Square bounds around `points`, padded by 5%.
fn square_bounds(points: &[[f64; 2]]) -> Result<Bounds> {
    let b = Bounds::of_points(points)?;
    let (cx, cy) = ((b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0);
    let half = 0.5 * (b.x_max - b.x_min).max(b.y_max - b.y_min).max(1e-9) * 1.05;
    Ok(Bounds {
        x_min: cx - half,
        x_max: cx + half,
        y_min: cy - half,
        y_max: cy + half,
    })
}

/// Indices of at most [`MAX_POINTS`] points, in increasing order.
pub fn subsample(n: usize, seed: u64) -> Vec<usize> {
    if n <= MAX_POINTS {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, MAX_POINTS).into_vec();
    idx.sort_unstable();
    idx
}

pub fn render(points: &[[f64; 2]], classes: Option<&[usize]>, density: bool, seed: u64) -> Result<String> {
    if points.is_empty() {
        return Err(CliError::Usage("nothing to plot".into()));
    }
    let b = square_bounds(points)?;
    let span = SIZE - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - b.x_min) / (b.x_max - b.x_min) * span;
    let py = |y: f64| MARGIN + (b.y_max - y) / (b.y_max - b.y_min) * span;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    if density {
        let h = Histogram2D::new(points, b, DENSITY_BINS)?;
        let max = h.counts().iter().copied().max().unwrap_or(0).max(1) as f64;
        let cell = span / DENSITY_BINS as f64;
        let _ = writeln!(s, r#"<g id="density" fill="black">"#);
        for (k, &c) in h.counts().iter().enumerate().filter(|(_, &c)| c > 0) {
            let (i, j) = (k % DENSITY_BINS, k / DENSITY_BINS);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill-opacity="{:.4}"/>"#,
                MARGIN + i as f64 * cell,
                MARGIN + span - (j + 1) as f64 * cell,
                0.6 * c as f64 / max
            );
        }
        s.push_str("</g>\n");
    }
    let _ = writeln!(s, r#"<g id="points" stroke="none">"#);
    for i in subsample(points.len(), seed) {
        let [x, y] = points[i];
        let color = classes.map_or(PALETTE[0], |c| PALETTE[c[i] % PALETTE.len()]);
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.2" fill="{color}"/>"#, px(x), py(y));
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsample_caps_and_is_deterministic() {
        let a = subsample(50_000, 1);
        assert_eq!(a.len(), MAX_POINTS);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, subsample(50_000, 1));
        assert_eq!(subsample(10, 1), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn single_point_renders() {
        let s = render(&[[1.0, 1.0]], None, true, 0).unwrap();
        assert_eq!(s.matches("<circle").count(), 1);
    }
}
