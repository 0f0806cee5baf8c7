use ndarray::Array2;
use pif_core::dists::{self, DirichletParams, DistParams, GaussParams, LaplaceKl, LaplaceParams};
use pif_core::flow::{loss_dirichlet, loss_gaussian, loss_laplace, LaplaceLossMode};
use pif_core::schedule::Schedule;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::{digamma, ln_gamma};

fn schedule(rng: &mut ChaCha8Rng) -> (Schedule, f64) {
    let n = rng.random_range(1..=200);
    let s = Schedule::new(0.009, n).unwrap();
    let t = s.t_at(rng.random_range(1..=n));
    (s, t)
}

#[test]
fn gaussian_loss_equals_kl_of_interpolated_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let (s, t) = schedule(&mut rng);
        let eps0 = rng.random_range(0.5..2.0);
        let dim = rng.random_range(1..=4);
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x_hat: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = s.weight(t);
        let var = (1.0 - f) * eps0 * eps0;
        let interp = |m: &[f64]| DistParams::Gauss(GaussParams::new(m.iter().map(|v| f * v).collect(), var).unwrap());
        let kl = dists::kl(&interp(&x), &interp(&x_hat)).unwrap();
        let pred = Array2::from_shape_vec((1, dim), x_hat.clone()).unwrap();
        let data = Array2::from_shape_vec((1, dim), x.clone()).unwrap();
        let loss = loss_gaussian(pred.view(), data.view(), &s, t, eps0).unwrap();
        assert!((loss - kl).abs() <= 1e-10 * kl.abs().max(1.0), "loss {loss} kl {kl} at t {t}");
    }
}

#[test]
fn literal_laplace_loss_at_zero_offset_counts_coordinates() {
    let s = Schedule::new(0.009, 40).unwrap();
    for dim in 1..=5 {
        let x = Array2::from_shape_fn((3, dim), |(i, j)| i as f64 - 0.5 * j as f64);
        for t in [0.025, 0.5, 1.0] {
            let literal = loss_laplace(x.view(), x.view(), &s, t, 1.0, LaplaceLossMode::Literal).unwrap();
            assert_eq!(literal, dim as f64);
            let normalized = loss_laplace(x.view(), x.view(), &s, t, 1.0, LaplaceLossMode::Normalized).unwrap();
            assert_eq!(normalized, 0.0);
        }
    }
}

#[test]
fn laplace_loss_tracks_exact_kl_up_to_weight() {
    // Normalized loss is the equal-scale Laplace KL at the raw offset; the
    // interpolated pair only sees the offset scaled by f.
    let s = Schedule::new(0.009, 40).unwrap();
    let t = s.t_at(20);
    let f = s.weight(t);
    let scale = s.gamma_pow(t);
    let (x, x_hat) = (0.3, -0.1);
    let p = LaplaceParams::new(vec![x], scale).unwrap();
    let q = LaplaceParams::new(vec![x_hat], scale).unwrap();
    let raw = dists::kl_laplace(&p, &q, LaplaceKl::Exact).unwrap();
    let pred = Array2::from_elem((1, 1), x_hat);
    let data = Array2::from_elem((1, 1), x);
    let loss = loss_laplace(pred.view(), data.view(), &s, t, 1.0, LaplaceLossMode::Normalized).unwrap();
    assert!((loss - raw).abs() < 1e-12);
    let pf = LaplaceParams::new(vec![f * x], scale).unwrap();
    let qf = LaplaceParams::new(vec![f * x_hat], scale).unwrap();
    let weighted = dists::kl_laplace(&pf, &qf, LaplaceKl::Exact).unwrap();
    assert!(weighted < loss);
}

/// Independent evaluation of the Dirichlet loss with statrs special
/// functions. `truth` and `pred` are probability vectors, interpolated with
/// the uniform prior at weight `w`.
fn dirichlet_oracle(pred: &[f64], truth: &[f64], w: f64) -> f64 {
    let k = pred.len() as f64;
    pred.iter()
        .zip(truth)
        .map(|(&p, &d)| {
            let th_hat = w * p + (1.0 - w) / k;
            let th = (w * d + (1.0 - w) / k).max(1e-8);
            ln_gamma(th) - ln_gamma(th_hat) + (th_hat - th) * (digamma(th_hat) - digamma(1.0))
        })
        .sum()
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

#[test]
fn dirichlet_loss_matches_independent_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let (s, t) = schedule(&mut rng);
        let k = rng.random_range(2..=6);
        let groups = rng.random_range(1..=3);
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        let mut expected = 0.0;
        for _ in 0..groups {
            let p = random_simplex(&mut rng, k);
            let mut d = vec![0.0; k];
            d[rng.random_range(0..k)] = 1.0;
            expected += dirichlet_oracle(&p, &d, s.weight(t));
            pred.extend(p);
            truth.extend(d);
        }
        let pred = Array2::from_shape_vec((1, k * groups), pred).unwrap();
        let truth = Array2::from_shape_vec((1, k * groups), truth).unwrap();
        let loss = loss_dirichlet(pred.view(), truth.view(), k, &s, t).unwrap();
        assert!((loss - expected).abs() <= 1e-9 * expected.abs().max(1.0), "loss {loss} oracle {expected}");
    }
}

#[test]
fn dirichlet_loss_direction_against_generic_kl() {
    // The loss equals KL(Dir(θ̂) ‖ Dir(θ)) with θ̂ predicted, the reverse of
    // the order used for the continuous coordinates.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let s = Schedule::new(0.009, 10).unwrap();
    let t = s.t_at(3);
    let w = s.weight(t);
    let mut worst_reverse: f64 = 0.0;
    let mut worst_forward: f64 = 0.0;
    for _ in 0..200 {
        let p = random_simplex(&mut rng, 4);
        let mut d = vec![0.0; 4];
        d[rng.random_range(0..4)] = 1.0;
        let interp = |v: &[f64]| DistParams::Dirichlet(DirichletParams::new(v.iter().map(|x| w * x + (1.0 - w) / 4.0).collect()).unwrap());
        let pred = Array2::from_shape_vec((1, 4), p.clone()).unwrap();
        let truth = Array2::from_shape_vec((1, 4), d.clone()).unwrap();
        let loss = loss_dirichlet(pred.view(), truth.view(), 4, &s, t).unwrap();
        let reverse = dists::kl(&interp(&p), &interp(&d)).unwrap();
        let forward = dists::kl(&interp(&d), &interp(&p)).unwrap();
        worst_reverse = worst_reverse.max((loss - reverse).abs());
        worst_forward = worst_forward.max((loss - forward).abs());
    }
    println!("dirichlet loss vs KL(pred||truth): max |diff| {worst_reverse:.3e}; vs KL(truth||pred): {worst_forward:.3e}");
    assert!(worst_reverse < 1e-9);
    assert!(worst_forward > 1e-3);
}
