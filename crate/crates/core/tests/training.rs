mod common;

use common::{random_image, randomized_params, small_network};
use lshr_core::data::synth::synthetic_digits;
use lshr_core::network::{forward, ModelParams, NetworkConfig};
use lshr_core::sensing::PatternMode;
use lshr_core::training::{loss, train, Reduction, TrainConfig, Trainer};
use lshr_tensor::Tensor;

fn charb_loop(a: &Tensor<f64>, b: &Tensor<f64>, eps: f64) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| ((x - y) * (x - y) + eps).sqrt()).sum()
}

#[test]
fn loss_matches_loop_oracle() {
    let net = small_network(2);
    let params = randomized_params::<f64>(&net, 3);
    let (gl, gh) = (random_image::<f64>([2, 1, 16, 16], 1), random_image::<f64>([2, 1, 32, 32], 2));
    let (pl, ph) = (random_image::<f64>([2, 1, 16, 16], 3), random_image::<f64>([2, 1, 32, 32], 4));
    let sq: f64 = params
        .trainable_ids()
        .into_iter()
        .flat_map(|id| params.get(id).unwrap().data().to_vec())
        .map(|w| w * w)
        .sum();
    for reduction in [Reduction::Mean, Reduction::Sum] {
        let cfg = TrainConfig {
            reduction,
            epsilon: 1e-3,
            ..TrainConfig::default()
        };
        let got = loss(&pl, &ph, &gl, &gh, &params, &cfg).unwrap();
        let (nl, nh) = match reduction {
            Reduction::Mean => (512.0, 2048.0),
            Reduction::Sum => (2.0, 2.0),
        };
        let want = 2.0 * charb_loop(&pl, &gl, 1e-3) / nl + 4.0 * charb_loop(&ph, &gh, 1e-3) / nh + 1e-4 / 4.0 * sq;
        assert!((got - want).abs() < 1e-10 * want.abs(), "{reduction:?}: {got} vs {want}");
    }
}

fn digits(count: usize, seed: u64) -> Vec<Tensor<f64>> {
    synthetic_digits(count, 32, seed)
}

fn quick_config(steps: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        epochs: 100,
        max_steps: Some(steps),
        lr_recon_init: 3e-2,
        lr_residual_init: 3e-3,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn static_patterns_never_change() {
    let net = NetworkConfig {
        pattern_mode: PatternMode::Static,
        ..small_network(2)
    };
    let params = ModelParams::<f64>::init(&net, 1).unwrap();
    let before = params.bank.clone();
    let mut trainer = Trainer::new(net, quick_config(8), params).unwrap();
    trainer.run(&digits(16, 1), &[], |_, _| Ok(())).unwrap();
    assert_eq!(trainer.step_count(), 8);
    assert_eq!(trainer.params.bank, before);
    assert!(trainer.history.sparsity.is_empty());
}

#[test]
fn training_is_deterministic() {
    let net = small_network(2);
    let data = digits(12, 2);
    let (a, ha) = train(&data, &data[..4], &quick_config(6), &net).unwrap();
    let (b, hb) = train(&data, &data[..4], &quick_config(6), &net).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    let (c, _) = train(&data, &data[..4], &TrainConfig { seed: 6, ..quick_config(6) }, &net).unwrap();
    assert_ne!(a, c);
}

#[test]
fn validation_loss_decreases() {
    let net = small_network(2);
    let (tr, va) = (digits(64, 3), digits(16, 4));
    let mut trainer = Trainer::new(net, quick_config(120), ModelParams::init(&small_network(2), 5).unwrap()).unwrap();
    trainer.run(&tr, &va, |_, _| Ok(())).unwrap();
    let first = trainer.history.initial_val.unwrap().loss;
    let last = trainer.history.epochs.last().unwrap().val.unwrap().loss;
    assert!(last < first, "val loss {first} -> {last}");
    assert!(trainer.history.steps.iter().any(|s| s.val_loss.is_some()));
}

#[test]
fn gradients_do_not_depend_on_batch_order() {
    let net = small_network(2);
    let params = randomized_params::<f64>(&net, 9);
    let trainer = Trainer::new(net, TrainConfig::default(), params).unwrap();
    let (a, b) = (random_image::<f64>([1, 1, 32, 32], 1), random_image::<f64>([1, 1, 32, 32], 2));
    let (l1, g1) = trainer.gradients(&Tensor::concat_batch(&[a.clone(), b.clone()]).unwrap()).unwrap();
    let (l2, g2) = trainer.gradients(&Tensor::concat_batch(&[b, a]).unwrap()).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for (id, g) in &g1 {
        assert!(g.max_abs_diff(&g2[id]).unwrap() < 1e-12, "{}", id.name());
    }
}

#[test]
fn learned_shadow_stays_clipped() {
    let net = small_network(2);
    let mut cfg = quick_config(10);
    cfg.lr_recon_init = 5.0;
    let (params, hist) = train(&digits(20, 6), &[], &cfg, &net).unwrap();
    assert!(params.bank.shadow().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(hist.sparsity.len(), 11);
    let out = forward(&digits(1, 7)[0], &params, &net).unwrap();
    assert!(out.output.all_finite());
}
