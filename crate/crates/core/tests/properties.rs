use lessvfl_core::data::{synth_generate, SyntheticSpec};
use lessvfl_core::metrics::{cost_to_targets, MetricsPoint, TargetSpec};
use lessvfl_core::nn::{
    loss_and_grad, Activation, DenseNetwork, Labels, Layer, LossKind, OptimizerConfig, OptimizerState,
};
use lessvfl_core::protocol::{BatchPlan, Party, Phase, VflSystem};
use lessvfl_core::regularization::{prox_group, prox_group_lasso, surviving_groups};
use lessvfl_core::seed;
use lessvfl_core::selectors::pretrain;
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;
use rand::Rng;

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

fn point(mb: f64, acc: f64, removal: f64) -> MetricsPoint {
    MetricsPoint {
        step: 0,
        phase: Phase::Standard,
        epoch: 0,
        cumulative_mb: mb,
        train_loss: None,
        test_loss: 0.0,
        test_accuracy: Some(acc),
        spurious_removed_fraction: removal,
        surviving_features: vec![],
        components: vec![],
    }
}

fn cost_or_inf(c: Option<f64>) -> f64 {
    c.unwrap_or(f64::INFINITY)
}

/// System plus the first party's shard and the labels.
fn system(
    seed_value: u64,
    n: usize,
    dims: &[(usize, usize)],
    activation: Activation,
    optimizer: OptimizerConfig,
) -> (VflSystem, Array2<f64>, Labels) {
    let mut rng = seed::rng(seed_value);
    let mut shards = Vec::new();
    let parties = dims
        .iter()
        .map(|&(d, e)| {
            let net = DenseNetwork::init(d, &[5], e, activation, &mut rng).unwrap();
            let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
            shards.push(x.clone());
            Party::new(net, optimizer, x.clone(), x).unwrap()
        })
        .collect();
    let width = dims.iter().map(|d| d.1).sum();
    let server = DenseNetwork::init(width, &[], 3, Activation::Identity, &mut rng).unwrap();
    let labels = Labels::Classes {
        index: (0..n).map(|_| rng.random_range(0..3)).collect(),
        classes: 3,
    };
    let sys = VflSystem::new(server, optimizer, parties, labels.clone(), labels.clone(), seed_value).unwrap();
    (sys, shards.swap_remove(0), labels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn prox_is_non_expansive(
        a in proptest::collection::vec(-5.0f64..5.0, 1..12),
        shift in proptest::collection::vec(-2.0f64..2.0, 12),
        tau in 0.0f64..6.0,
    ) {
        let a = Array1::from(a);
        let b = &a + &Array1::from(shift[..a.len()].to_vec());
        let (mut pa, mut pb) = (a.clone(), b.clone());
        prox_group(pa.view_mut(), tau);
        prox_group(pb.view_mut(), tau);
        prop_assert!(norm(&(&pa - &pb)) <= norm(&(&a - &b)) + 1e-12);
        prop_assert!(norm(&pa) <= norm(&a) + 1e-12);
    }

    #[test]
    fn prox_survivors_shrink_with_threshold(
        w in proptest::collection::vec(-2.0f64..2.0, 12),
        lo in 0.0f64..1.0,
        extra in 0.0f64..1.0,
    ) {
        let net_from = |w: &[f64]| DenseNetwork::new(vec![
            Layer::new(Array2::from_shape_vec((3, 4), w.to_vec()).unwrap(), Array1::zeros(3), Activation::Tanh),
            Layer::new(Array2::ones((1, 3)), Array1::zeros(1), Activation::Identity),
        ]).unwrap();
        let (mut small, mut large) = (net_from(&w), net_from(&w));
        prox_group_lasso(&mut small, lo, 1.0);
        prox_group_lasso(&mut large, lo + extra, 1.0);
        prop_assert!(surviving_groups(&large).is_subset(&surviving_groups(&small)));
    }

    #[test]
    fn cost_is_monotone_in_targets(
        raw in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..30),
        baseline in 0.5f64..1.0,
        bump in 0.0f64..0.2,
        frac in 0.5f64..0.95,
        removal in 0.1f64..0.9,
        removal_bump in 0.0f64..0.1,
    ) {
        let series: Vec<MetricsPoint> = raw
            .iter()
            .enumerate()
            .map(|(i, &(acc, rem))| point(0.01 * (i + 1) as f64, acc, rem))
            .collect();
        let t = TargetSpec { accuracy_fraction: frac, removal };
        let harder = TargetSpec { accuracy_fraction: frac, removal: (removal + removal_bump).min(1.0) };
        let base = cost_or_inf(cost_to_targets(&series, baseline, &t));
        prop_assert!(cost_or_inf(cost_to_targets(&series, baseline + bump, &t)) >= base);
        prop_assert!(cost_or_inf(cost_to_targets(&series, baseline, &harder)) >= base);
        if let Some(c) = cost_to_targets(&series, baseline, &t) {
            let hit = series.iter().find(|p| p.cumulative_mb == c).unwrap();
            prop_assert!(hit.test_accuracy.unwrap() >= frac * baseline);
            prop_assert!(hit.spurious_removed_fraction >= removal);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pretrain_bytes_follow_formula(
        n in 10usize..300,
        b in 1usize..64,
        t0 in 1usize..4,
        dims in proptest::collection::vec((1usize..5, 1usize..5), 1..4),
    ) {
        let (mut sys, _, _) = system(3, n, &dims, Activation::Tanh, OptimizerConfig::adam(0.01));
        let plan = BatchPlan::new(n, b, 1).unwrap();
        pretrain(&mut sys, &plan, t0, LossKind::SoftmaxCrossEntropy, &mut ()).unwrap();
        let width: usize = dims.iter().map(|d| d.1).sum();
        let expected = (2 * 4 * t0 * n * width) as u64;
        let counters = sys.ledger().phase(Phase::Pretrain);
        prop_assert_eq!(counters.total(), expected);
        prop_assert_eq!(counters.bytes_up, counters.bytes_down);
        prop_assert_eq!(counters.rounds, (t0 * n.div_ceil(b)) as u64);
        prop_assert_eq!(sys.ledger().total_bytes(), expected);
    }

    #[test]
    fn single_party_matches_composed_network(seed_value in 0u64..1000, relu in any::<bool>()) {
        let activation = if relu { Activation::Relu } else { Activation::Tanh };
        let lr = 0.1;
        let (mut sys, x, labels) = system(seed_value, 40, &[(4, 3)], activation, OptimizerConfig::sgd(lr));
        let layers: Vec<Layer> = sys.parties()[0].net().layers().iter().chain(sys.server().layers()).cloned().collect();
        let mut composed = DenseNetwork::new(layers).unwrap();
        let mut opt = OptimizerState::new(OptimizerConfig::sgd(lr), &composed);
        let plan = BatchPlan::new(40, 8, seed_value).unwrap();
        for batch in (0..4).flat_map(|e| plan.epoch(e)) {
            sys.train_step(&batch, LossKind::SoftmaxCrossEntropy, None).unwrap();
            let (out, trace) = composed.forward(x.select(Axis(0), &batch).view()).unwrap();
            let (_, g) = loss_and_grad(LossKind::SoftmaxCrossEntropy, out.view(), &labels.select(&batch)).unwrap();
            let grads = composed.backward(&trace, g.view()).unwrap();
            opt.step(&mut composed, &grads).unwrap();
        }
        let vfl = sys.parties()[0].net().layers().iter().chain(sys.server().layers());
        for (a, b) in vfl.zip(composed.layers()) {
            prop_assert!((&a.weights - &b.weights).iter().all(|v| v.abs() <= 1e-12));
            prop_assert!((&a.bias - &b.bias).iter().all(|v| v.abs() <= 1e-12));
        }
    }
}

#[test]
fn synthetic_generation_is_seeded() {
    let spec = SyntheticSpec::regression(2, 3, 2);
    let (a, _) = synth_generate(&spec, 5).unwrap();
    let (b, _) = synth_generate(&spec, 5).unwrap();
    let (c, _) = synth_generate(&spec, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.features, c.features);
}
