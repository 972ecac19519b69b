use dfdg_core::data::{class_balanced_batches, generate_spurious_gaussian, Batch, SpuriousGaussianParams, TrainView};
use dfdg_core::models::Model;
use dfdg_core::rng;
use dfdg_core::trainer::{
    choose_strategy, lr_schedule, train_step, train_with, ModelSpec, Momentum, Strategy, StrategyMode,
    TrainConfig,
};
use dfdg_core::{Error, Exec};

fn view(n: usize) -> TrainView {
    generate_spurious_gaussian(&SpuriousGaussianParams {
        n_per_domain_class: n,
        ..Default::default()
    })
    .unwrap()
    .train_view()
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        iterations: 40,
        batch_size: 32,
        sg_n: 5,
        ..Default::default()
    }
}

fn param_bits(m: &Model) -> Vec<u64> {
    m.params()
        .iter()
        .flat_map(|p| p.tensor.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

fn first_batch(v: &TrainView, cfg: &TrainConfig) -> Batch {
    class_balanced_batches(v, cfg.batch_size, cfg.min_class_ratio, cfg.seed)
        .unwrap()
        .next()
        .unwrap()
}

fn fresh(v: &TrainView, cfg: &TrainConfig) -> Model {
    Model::build(&cfg.model.architecture(v.input_shape()).unwrap(), v.num_classes(), cfg.seed).unwrap()
}

fn one_step(v: &TrainView, cfg: &TrainConfig, strategy: Strategy, lr: f64) -> (Model, Momentum) {
    let mut model = fresh(v, cfg);
    let mut momentum = Momentum::zeros(&model);
    let batch = first_batch(v, cfg);
    let mut r = rng::stream(cfg.seed, rng::Stream::Masking);
    train_step(&mut model, &batch, strategy, cfg, lr, 0, &mut r, &mut momentum, Exec::Sequential).unwrap();
    (model, momentum)
}

#[test]
fn schedule_examples() {
    assert_eq!(lr_schedule(0.001, 0, 2000, 0.1, 0.8).unwrap(), 0.001);
    assert_eq!(lr_schedule(0.001, 1599, 2000, 0.1, 0.8).unwrap(), 0.001);
    assert_eq!(lr_schedule(0.001, 1600, 2000, 0.1, 0.8).unwrap(), 0.0001);
    for i in 0..50 {
        assert_eq!(lr_schedule(0.01, i, 50, 0.1, 1.0).unwrap(), 0.01);
    }
    // 0.07·100 evaluates to 7.000000000000001 in binary floating point.
    assert_eq!(lr_schedule(1.0, 7, 100, 0.5, 0.07).unwrap(), 0.5);
    assert!(matches!(lr_schedule(0.001, 2000, 2000, 0.1, 0.8), Err(Error::Contract(_))));
}

#[test]
fn fixed_modes_always_pick_their_strategy() {
    let mut r = rng::seeded(0);
    for i in 0..100 {
        assert_eq!(choose_strategy(StrategyMode::AlignOnly, i, &mut r), Strategy::Align);
        assert_eq!(choose_strategy(StrategyMode::MaskOnly, i, &mut r), Strategy::Mask);
        assert_eq!(choose_strategy(StrategyMode::CeOnly, i, &mut r), Strategy::PlainCe);
        let expected = if i % 2 == 0 { Strategy::Align } else { Strategy::Mask };
        assert_eq!(choose_strategy(StrategyMode::EvenOdd, i, &mut r), expected);
    }
}

#[test]
fn alternate_is_a_fair_coin() {
    let mut r = rng::seeded(1);
    let draws: Vec<Strategy> = (0..10_000).map(|i| choose_strategy(StrategyMode::Alternate, i, &mut r)).collect();
    let align = draws.iter().filter(|&&s| s == Strategy::Align).count() as f64 / 1e4;
    assert!((0.47..=0.53).contains(&align), "{align}");
    let mut again = rng::seeded(1);
    let replay: Vec<Strategy> = (0..10_000).map(|i| choose_strategy(StrategyMode::Alternate, i, &mut again)).collect();
    assert_eq!(draws, replay);
}

#[test]
fn strategy_mode_parses_and_prints() {
    for m in StrategyMode::ALL {
        assert_eq!(m.as_str().parse::<StrategyMode>().unwrap(), m);
    }
    assert!(matches!("sometimes".parse::<StrategyMode>(), Err(Error::Config(_))));
}

#[test]
fn align_with_zero_alpha_matches_plain_ce() {
    let v = view(30);
    let cfg = TrainConfig { alpha: 0.0, ..small_cfg() };
    let (a, _) = one_step(&v, &cfg, Strategy::Align, 0.01);
    let (b, _) = one_step(&v, &cfg, Strategy::PlainCe, 0.01);
    assert_eq!(param_bits(&a), param_bits(&b));
}

#[test]
fn mask_with_zero_share_matches_plain_ce() {
    let v = view(30);
    let cfg = TrainConfig { m_percent: 0.0, ..small_cfg() };
    let (a, _) = one_step(&v, &cfg, Strategy::Mask, 0.01);
    let (b, _) = one_step(&v, &cfg, Strategy::PlainCe, 0.01);
    assert_eq!(param_bits(&a), param_bits(&b));
}

#[test]
fn zero_learning_rate_moves_only_momentum() {
    let v = view(30);
    let cfg = small_cfg();
    for strategy in [Strategy::Align, Strategy::Mask, Strategy::PlainCe] {
        let (after, momentum) = one_step(&v, &cfg, strategy, 0.0);
        assert_eq!(param_bits(&after), param_bits(&fresh(&v, &cfg)));
        assert!(momentum.buffers.iter().flatten().any(|&m| m != 0.0));
    }
}

#[test]
fn momentum_update_by_hand() {
    // Two steps on the same batch: v1 = g1, θ1 = θ0 − lr·g1; v2 = μ·g1 + g2.
    let v = view(30);
    let cfg = TrainConfig {
        momentum: 0.5,
        ..small_cfg()
    };
    let batch = first_batch(&v, &cfg);
    let mut model = fresh(&v, &cfg);
    let theta0: Vec<f64> = model.params().iter().flat_map(|p| p.tensor.to_vec()).collect();
    let mut momentum = Momentum::zeros(&model);
    let mut r = rng::seeded(0);
    train_step(&mut model, &batch, Strategy::PlainCe, &cfg, 0.1, 0, &mut r, &mut momentum, Exec::Sequential).unwrap();
    let g1: Vec<f64> = momentum.buffers.iter().flatten().copied().collect();
    let theta1: Vec<f64> = model.params().iter().flat_map(|p| p.tensor.to_vec()).collect();
    for ((t0, t1), g) in theta0.iter().zip(&theta1).zip(&g1) {
        assert_eq!(*t1, t0 - 0.1 * g);
    }
    let mut probe = model.clone();
    let mut fresh_m = Momentum::zeros(&probe);
    train_step(&mut probe, &batch, Strategy::PlainCe, &cfg, 0.0, 1, &mut r, &mut fresh_m, Exec::Sequential).unwrap();
    let g2: Vec<f64> = fresh_m.buffers.iter().flatten().copied().collect();
    train_step(&mut model, &batch, Strategy::PlainCe, &cfg, 0.1, 1, &mut r, &mut momentum, Exec::Sequential).unwrap();
    for ((v2, a), b) in momentum.buffers.iter().flatten().zip(&g1).zip(&g2) {
        assert_eq!(*v2, 0.5 * a + b);
    }
}

#[test]
fn training_is_deterministic_and_exec_independent() {
    let v = view(40);
    let cfg = small_cfg();
    let (a, ha) = train_with(&v, &cfg, Exec::Sequential).unwrap();
    let (b, hb) = train_with(&v, &cfg, Exec::Sequential).unwrap();
    let (c, hc) = train_with(&v, &cfg, Exec::Parallel).unwrap();
    assert_eq!(param_bits(&a), param_bits(&b));
    assert_eq!(param_bits(&a), param_bits(&c));
    let losses = |h: &dfdg_core::trainer::TrainHistory| h.records.iter().map(|r| (r.strategy, r.ce.to_bits())).collect::<Vec<_>>();
    assert_eq!(losses(&ha), losses(&hb));
    assert_eq!(losses(&ha), losses(&hc));
}

#[test]
fn single_iteration_history() {
    let cfg = TrainConfig {
        iterations: 1,
        ..small_cfg()
    };
    let (_, h) = train_with(&view(10), &cfg, Exec::Sequential).unwrap();
    assert_eq!(h.len(), 1);
}

#[test]
fn alternate_history_contains_both_strategies() {
    let cfg = TrainConfig {
        iterations: 50,
        ..small_cfg()
    };
    let (_, h) = train_with(&view(20), &cfg, Exec::Sequential).unwrap();
    assert!(h.records.iter().any(|r| r.strategy == Strategy::Align && r.align.is_some()));
    assert!(h.records.iter().any(|r| r.strategy == Strategy::Mask && r.align.is_none()));
    for (i, r) in h.records.iter().enumerate() {
        assert_eq!(r.iteration, i);
        assert_eq!(r.lr, lr_schedule(cfg.base_lr, i, 50, 0.1, 0.8).unwrap());
    }
}

#[test]
fn first_loss_is_near_ln_c() {
    let cfg = TrainConfig {
        iterations: 1,
        strategy_mode: StrategyMode::CeOnly,
        ..small_cfg()
    };
    let (_, h) = train_with(&view(30), &cfg, Exec::Sequential).unwrap();
    let ln3 = 3f64.ln();
    assert!((h.records[0].ce - ln3).abs() < 0.2 * ln3, "{}", h.records[0].ce);
}

#[test]
fn linear_and_cnn_backbones_train() {
    let v = view(10);
    for model in [
        ModelSpec::Mlp { hidden: vec![] },
        ModelSpec::Cnn1d {
            channels: vec![4],
            kernel: 3,
        },
    ] {
        let cfg = TrainConfig {
            iterations: 3,
            model,
            ..small_cfg()
        };
        let (_, h) = train_with(&v, &cfg, Exec::Sequential).unwrap();
        assert_eq!(h.len(), 3);
    }
}

#[test]
fn divergence_reports_iteration_and_strategy() {
    let cfg = TrainConfig {
        base_lr: 1e300,
        strategy_mode: StrategyMode::AlignOnly,
        ..small_cfg()
    };
    match train_with(&view(20), &cfg, Exec::Sequential) {
        Err(Error::Numeric(msg)) => {
            assert!(msg.contains("iteration"), "{msg}");
            assert!(msg.contains("align"), "{msg}");
        }
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let v = view(5);
    for cfg in [
        TrainConfig { iterations: 0, ..small_cfg() },
        TrainConfig { alpha: -0.1, ..small_cfg() },
        TrainConfig { momentum: 1.5, ..small_cfg() },
        TrainConfig { q_max: 120.0, ..small_cfg() },
        TrainConfig { lr_decay_at_fraction: -0.2, ..small_cfg() },
        TrainConfig { min_class_ratio: 0.0, ..small_cfg() },
    ] {
        assert!(matches!(train_with(&v, &cfg, Exec::Sequential), Err(Error::Config(_))), "{cfg:?}");
    }
}

#[test]
fn config_json_round_trip_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    let cfg = TrainConfig {
        alpha: 0.25,
        strategy_mode: StrategyMode::MaskOnly,
        ..Default::default()
    };
    cfg.save(&path).unwrap();
    assert_eq!(TrainConfig::load(&path).unwrap(), cfg);
    std::fs::write(&path, r#"{"iterations": 7}"#).unwrap();
    let partial = TrainConfig::load(&path).unwrap();
    assert_eq!(partial.iterations, 7);
    assert_eq!(partial.alpha, 0.1);
    assert_eq!(partial.m_percent, 50.0);
    assert_eq!(partial.q_max, 70.0);
    assert_eq!(partial.batch_size, 128);
    std::fs::write(&path, r#"{"strategy_mode": "sometimes"}"#).unwrap();
    assert!(matches!(TrainConfig::load(&path), Err(Error::Json { .. })));
}

#[test]
fn history_csv_has_one_row_per_iteration() {
    let (_, h) = train_with(&view(10), &small_cfg(), Exec::Sequential).unwrap();
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration,strategy,ce,align,lr,wall_time");
    assert_eq!(lines.len(), 41);
}
