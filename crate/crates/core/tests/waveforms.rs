use dfdg_core::autodiff::Tensor;
use dfdg_core::data::{generate_shifted_waveforms, WaveformParams};
use dfdg_core::eval::evaluate;
use dfdg_core::saliency::vanilla_saliency;
use dfdg_core::trainer::{train, ModelSpec, StrategyMode, TrainConfig};

#[test]
fn trained_model_attends_to_the_motif() {
    let p = WaveformParams {
        n_per_domain_class: 60,
        ..Default::default()
    };
    let ds = generate_shifted_waveforms(&p).unwrap();
    let cfg = TrainConfig {
        iterations: 300,
        batch_size: 64,
        base_lr: 0.01,
        strategy_mode: StrategyMode::CeOnly,
        model: ModelSpec::Mlp { hidden: vec![16] },
        ..Default::default()
    };
    let (model, _) = train(&ds.train_view(), &cfg).unwrap();
    assert!(evaluate(&model, &ds).unwrap() > 0.9);

    let window = p.motif_window();
    let (mut motif, mut background) = (0.0, 0.0);
    for i in (0..ds.len()).step_by(7) {
        let x = Tensor::new(ds.row(i).to_vec(), ds.input_shape()).unwrap();
        let sal = vanilla_saliency(&model, &x, ds.labels()[i]).unwrap();
        for (t, s) in sal.scores.iter().enumerate() {
            if window.contains(&t) {
                motif += s / p.motif_width as f64;
            } else {
                background += s / (p.length - p.motif_width) as f64;
            }
        }
    }
    assert!(motif > background, "motif {motif} vs background {background}");
}
