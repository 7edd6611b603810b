use startle_core::classifier::{
    fit_normalization, to_tensor, train, Architecture, Hyperparameters, ModelBundle, TrackTensor,
};
use startle_core::features::{build_lmcm_kernel, extract_features};
use startle_core::synth::{self, match_tracks_to_truth, ScenarioConfig};
use startle_core::tracker::{track_clip, TrackerConfig};

fn separable_set() -> (Vec<TrackTensor>, Vec<bool>, ModelBundle) {
    let cfg = ScenarioConfig {
        seed: 21,
        n_clips: 60,
        ..ScenarioConfig::default()
    };
    let data = synth::generate(&cfg).unwrap();
    let tracker = TrackerConfig::default();
    let gate = tracker.gate(cfg.frame_width, cfg.frame_height);
    let kernel = build_lmcm_kernel();
    let mut series = Vec::new();
    let mut labels = Vec::new();
    for sc in &data.clips {
        let tracks = track_clip(&sc.clip, &tracker).unwrap();
        for (t, m) in tracks.iter().zip(match_tracks_to_truth(&tracks, &sc.truth, gate)) {
            series.push(extract_features(t, &sc.clip, &kernel).unwrap());
            labels.push(m.label);
        }
    }
    let norm = fit_normalization(&series).unwrap();
    let arch = Architecture::default();
    let tensors = series.iter().map(|s| to_tensor(s, &norm, arch.seq_len).unwrap()).collect();
    let model = ModelBundle::initialize(arch, norm, Hyperparameters::default()).unwrap();
    (tensors, labels, model)
}

#[test]
fn full_batch_training_converges_monotonically() {
    let (tensors, labels, model) = separable_set();
    assert!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
    let hyper = Hyperparameters {
        batch_size: tensors.len(),
        ..Hyperparameters::default()
    };
    let (_, report) = train(&model, &tensors, &labels, &hyper).unwrap();
    let losses = &report.epoch_losses;
    assert_eq!(losses.len(), 200);
    let tail = &losses[losses.len() - 10..];
    assert!(tail.windows(2).all(|w| w[1] <= w[0]), "{tail:?}");
    assert!(*losses.last().unwrap() < 0.1, "final loss {}", losses.last().unwrap());
}

#[test]
fn minibatch_training_reaches_low_loss_and_repeats() {
    let (tensors, labels, model) = separable_set();
    let hyper = Hyperparameters::default();
    let (a, ra) = train(&model, &tensors, &labels, &hyper).unwrap();
    let (b, rb) = train(&model, &tensors, &labels, &hyper).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.epoch_losses, rb.epoch_losses);
    assert!(*ra.epoch_losses.last().unwrap() < 0.1);
}
