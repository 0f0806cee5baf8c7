use ndarray::{Array2, ArrayView2};
use pif_core::dists::DistParams;
use pif_core::flow::{
    draw_mask, sample_chain, train_step, ChainStep, Condition, EntityShape, FlowConfig, LaplaceLossMode, LossWeights,
    MaskSpec, PointSet, Predictor, Priors,
};
use pif_core::net::{AdamConfig, AdamState, Mlp, Prediction};
use pif_core::schedule::Schedule;
use pif_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPE: EntityShape = EntityShape { points: 5, dim: 2, classes: 3 };

fn config(mask_flags: bool) -> FlowConfig {
    FlowConfig {
        shape: SHAPE,
        schedule: Schedule::new(0.009, 6).unwrap(),
        priors: Priors::gaussian(1.0),
        loss_weights: LossWeights::default(),
        laplace_loss: LaplaceLossMode::Normalized,
        mask_prob: 0.3,
        point_mask_prob: 0.3,
        mask_flags,
    }
}

fn entity(rng: &mut ChaCha8Rng) -> PointSet {
    let pos = Array2::from_shape_fn((SHAPE.points, SHAPE.dim), |_| rng.random_range(-1.0..1.0));
    let classes: Vec<usize> = (0..SHAPE.points).map(|_| rng.random_range(0..SHAPE.classes)).collect();
    PointSet::with_classes(pos, &classes, SHAPE.classes).unwrap()
}

fn small_net(cfg: &FlowConfig, seed: u64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mlp::new(cfg.net_config(16, 3, 4), &mut rng).unwrap()
}

#[test]
fn fixed_entries_hold_at_every_chain_step() {
    let cfg = config(true);
    let net = small_net(&cfg, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let conditions: Vec<Condition> = (0..3)
        .map(|i| Condition {
            mask: MaskSpec::fixing(SHAPE.points, &[i, i + 2]),
            context: entity(&mut rng),
        })
        .collect();
    let pw = SHAPE.position_width();
    let mut steps = 0;
    let mut check = |s: &ChainStep<'_>| {
        steps += 1;
        for (j, params) in s.params.iter().enumerate() {
            let c = &conditions[(s.first_chain + j) % conditions.len()];
            let row = s.input.row(j);
            for p in 0..SHAPE.points {
                if !c.mask.fixed_position[p] {
                    continue;
                }
                match &params.positions[p] {
                    DistParams::Gauss(g) => {
                        assert_eq!(g.variance(), 0.0);
                        assert_eq!(g.mean(), c.context.positions().row(p).as_slice().unwrap());
                    }
                    other => panic!("unexpected {other:?}"),
                }
                for k in 0..SHAPE.dim {
                    assert_eq!(row[p * SHAPE.dim + k], c.context.positions()[[p, k]]);
                }
                for k in 0..SHAPE.classes {
                    assert_eq!(row[pw + p * SHAPE.classes + k], c.context.types().unwrap()[[p, k]]);
                }
                assert_eq!(row[pw + SHAPE.type_width() + p], 1.0);
            }
        }
    };
    let out = sample_chain(&net, &cfg, 7, &conditions, &mut rng, Some(&mut check)).unwrap();
    assert_eq!(steps, cfg.schedule.n_steps());
    for (j, e) in out.iter().enumerate() {
        let c = &conditions[j % conditions.len()];
        for p in 0..SHAPE.points {
            if c.mask.fixed_position[p] {
                assert_eq!(e.positions().row(p), c.context.positions().row(p));
                assert_eq!(e.class_of(p), c.context.class_of(p));
            }
        }
    }
}

#[test]
fn full_mask_returns_context() {
    let cfg = config(true);
    let net = small_net(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let context = entity(&mut rng);
    let cond = [Condition {
        mask: MaskSpec::all(SHAPE.points),
        context: context.clone(),
    }];
    let out = sample_chain(&net, &cfg, 3, &cond, &mut rng, None).unwrap();
    assert!(out.iter().all(|e| *e == context));
}

/// Permutation-equivariant stand-in for the network: every free point is
/// sent to the centroid of the fixed points, every fixed point to itself.
/// Free-point noise never reaches the output.
struct CentroidOracle;

impl Predictor for CentroidOracle {
    fn predict(&self, input: ArrayView2<'_, f64>, _t: &[f64]) -> Result<Prediction> {
        let (m, d, k) = (SHAPE.points, SHAPE.dim, SHAPE.classes);
        let pw = SHAPE.position_width();
        let flags = pw + SHAPE.type_width();
        let mut cont = Array2::zeros((input.nrows(), pw));
        let mut simplex = Array2::zeros((input.nrows(), SHAPE.type_width()));
        for (b, row) in input.rows().into_iter().enumerate() {
            let fixed: Vec<usize> = (0..m).filter(|&p| row[flags + p] == 1.0).collect();
            let mut centroid = vec![0.0; d];
            let mut types = vec![1.0; k];
            for &p in &fixed {
                for c in 0..d {
                    centroid[c] += row[p * d + c] / fixed.len() as f64;
                }
                for c in 0..k {
                    types[c] += row[pw + p * k + c];
                }
            }
            let total: f64 = types.iter().sum();
            for p in 0..m {
                let free = !fixed.contains(&p);
                for c in 0..d {
                    cont[[b, p * d + c]] = if free { centroid[c] } else { row[p * d + c] };
                }
                for c in 0..k {
                    simplex[[b, p * k + c]] = types[c] / total;
                }
            }
        }
        Ok(Prediction { cont, simplex })
    }
}

fn permute_entity(e: &PointSet, perm: &[usize]) -> PointSet {
    let pos = Array2::from_shape_fn((SHAPE.points, SHAPE.dim), |(p, c)| e.positions()[[perm[p], c]]);
    let classes: Vec<usize> = perm.iter().map(|&p| e.class_of(p).unwrap()).collect();
    PointSet::with_classes(pos, &classes, SHAPE.classes).unwrap()
}

#[test]
fn chain_output_permutes_with_its_input() {
    let cfg = config(true);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let context = entity(&mut rng);
    let mask = MaskSpec::fixing(SHAPE.points, &[0, 3]);
    let perm = [3, 1, 4, 0, 2];
    let permuted_mask = MaskSpec {
        fixed_position: perm.iter().map(|&p| mask.fixed_position[p]).collect(),
        fixed_type: perm.iter().map(|&p| mask.fixed_type[p]).collect(),
    };
    let a = sample_chain(&CentroidOracle, &cfg, 4, &[Condition { mask, context: context.clone() }], &mut ChaCha8Rng::seed_from_u64(6), None).unwrap();
    let b = sample_chain(
        &CentroidOracle,
        &cfg,
        4,
        &[Condition {
            mask: permuted_mask,
            context: permute_entity(&context, &perm),
        }],
        &mut ChaCha8Rng::seed_from_u64(7),
        None,
    )
    .unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(permute_entity(x, &perm), *y);
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = config(true);
    let run = || {
        let mut net = small_net(&cfg, 8);
        let mut opt = AdamState::new(net.num_params(), AdamConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<PointSet> = (0..64).map(|_| entity(&mut rng)).collect();
        let mut losses = Vec::new();
        for step in 0..50 {
            let batch = &data[(step * 16) % 64..(step * 16) % 64 + 16];
            losses.push(train_step(&mut net, &mut opt, batch, &cfg, &mut rng).unwrap().loss);
        }
        (net.params().to_vec(), losses)
    };
    let (pa, la) = run();
    let (pb, lb) = run();
    assert_eq!(pa, pb);
    assert_eq!(la, lb);

    let net = Mlp::from_params(cfg.net_config(16, 3, 4), pa).unwrap();
    let a = sample_chain(&net, &cfg, 10, &[], &mut ChaCha8Rng::seed_from_u64(10), None).unwrap();
    let b = sample_chain(&net, &cfg, 10, &[], &mut ChaCha8Rng::seed_from_u64(10), None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn mask_rates_match_settings() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let points = 64;
    let draws = 100_000;
    let mut masked = 0usize;
    let mut fixed = 0usize;
    for _ in 0..draws {
        let m = draw_mask(points, 0.3, 0.3, &mut rng).unwrap();
        assert_eq!(m.fixed_position, m.fixed_type);
        if !m.is_empty() {
            masked += 1;
            fixed += m.fixed_position.iter().filter(|&&f| f).count();
        }
    }
    let p_m = masked as f64 / draws as f64;
    let p_am = fixed as f64 / (masked * points) as f64;
    assert!((p_m - 0.3).abs() < 0.01, "P_m {p_m}");
    assert!((p_am - 0.3).abs() < 0.01, "P_am {p_am}");
}
