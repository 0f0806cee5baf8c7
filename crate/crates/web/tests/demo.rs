use pif_core::data::{generate, DatasetName, DatasetSpec};
use pif_web::{dataset_cloud, interpolated, Trainer, STRIDE};

fn mean_and_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    (mean, xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

#[test]
fn dataset_cloud_layout() {
    let flat = dataset_cloud("polygon5", 12, 3).unwrap();
    assert_eq!(flat.len(), 12 * 5 * STRIDE);
    assert!(flat.chunks(STRIDE).all(|c| (0.0..5.0).contains(&c[2])));
    assert!(dataset_cloud("swissroll", 12, 3).unwrap().chunks(STRIDE).all(|c| c[2] == -1.0));

    let typed = dataset_cloud("typed-mixture", 200, 3).unwrap();
    assert!(typed.chunks(STRIDE).all(|c| (0.0..4.0).contains(&c[2]) && c[2].fract() == 0.0));
    assert_eq!(typed, dataset_cloud("typed_mixture", 200, 3).unwrap());
    assert!(dataset_cloud("spiral", 10, 0).is_err());
}

#[test]
fn interpolated_cloud_endpoints() {
    let prior = interpolated("swissroll", "gaussian", 20_000, 4, 0.0).unwrap();
    for axis in 0..2 {
        let (m, v) = mean_and_var(prior.chunks(STRIDE).map(|c| c[axis]));
        assert!(m.abs() < 0.03, "prior mean {m}");
        assert!((v - 1.0).abs() < 0.05, "prior variance {v}");
    }

    // Near t = 1 the cloud sits on the data with residual variance γ ε₀².
    let data = generate(&DatasetSpec::new(DatasetName::TypedMixture, 5000, 5)).unwrap();
    let near = interpolated("typed_mixture", "gaussian", 5000, 5, 1.0).unwrap();
    let mut sq = 0.0;
    let mut same_type = 0;
    for (e, c) in data.entities.iter().zip(near.chunks(STRIDE)) {
        let p = e.positions();
        sq += (c[0] - p[[0, 0]]).powi(2) + (c[1] - p[[0, 1]]).powi(2);
        same_type += usize::from(e.class_of(0) == Some(c[2] as usize));
    }
    let per_coord = sq / (2.0 * 5000.0);
    assert!((per_coord - 0.009).abs() < 0.001, "residual variance {per_coord}");
    assert!(same_type as f64 / 5000.0 > 0.9);

    let lap = interpolated("swissroll", "laplace", 100, 4, 0.5).unwrap();
    assert_eq!(lap.len(), 100 * STRIDE);
    assert!(interpolated("swissroll", "cauchy", 10, 0, 0.5).is_err());
    assert!(interpolated("swissroll", "gaussian", 10, 0, 1.5).is_err());
}

#[test]
fn trainer_reduces_loss_and_samples() {
    let mut a = Trainer::create("swissroll", "gaussian", 20, 7).unwrap();
    let first = a.train(5).unwrap();
    let later = a.train(150).unwrap();
    assert!(later < first, "loss {first} -> {later}");
    assert_eq!(a.steps(), 155.0);

    let out = a.generate(50).unwrap();
    assert_eq!(out.len(), 50 * STRIDE);
    assert!(out.iter().all(|x| x.is_finite()));

    let mut b = Trainer::create("swissroll", "gaussian", 20, 7).unwrap();
    b.train(155).unwrap();
    assert_eq!(b.generate(50).unwrap(), out);
}

#[test]
fn trainer_handles_masked_typed_data() {
    let mut t = Trainer::create("typed-mixture", "laplace", 10, 1).unwrap();
    assert!(t.train(3).unwrap().is_finite());
    let out = t.generate(8).unwrap();
    assert!(out.chunks(STRIDE).all(|c| c[2] >= 0.0));
    assert!(Trainer::create("polygon5", "dirichlet", 10, 1).is_err());
}
