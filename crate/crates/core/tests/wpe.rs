use dasr_core::audio::WaveformSet;
use dasr_core::stft::{istft, stft, Spectrogram, StftConfig, WindowKind};
use dasr_core::synth;
use dasr_core::wpe::{wpe_dereverberate, wpe_dereverberate_with_report, WpeConfig};
use ndarray::Array3;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SR: u32 = 16000;

/// Spectrogram whose entries are iid complex Gaussian, i.e. nothing is
/// predictable from past frames.
fn iid_spectrogram(seed: u64, bins: usize, frames: usize, k: usize) -> Spectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = StftConfig {
        window_length: 2 * (bins - 1),
        hop: (bins - 1) / 2,
        window: WindowKind::SqrtHann,
        fft_size: 2 * (bins - 1),
    };
    let data = Array3::from_shape_fn((bins, frames, k), |_| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        Complex64::new(re, im)
    });
    Spectrogram::zeros(cfg, SR, 0, k).with_data(data)
}

fn energy(a: &Array3<Complex64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

fn diff_energy(a: &Array3<Complex64>, b: &Array3<Complex64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum()
}

#[test]
fn unpredictable_input_is_barely_touched() {
    let spec = iid_spectrogram(1, 17, 4000, 2);
    let (out, report) = wpe_dereverberate_with_report(&spec, &WpeConfig::default()).unwrap();
    assert!(report.prediction_ratio < 0.1, "{}", report.prediction_ratio);
    let rel = (diff_energy(&out.data, &spec.data) / energy(&spec.data)).sqrt();
    assert!(rel < 0.1, "{rel}");
}

#[test]
fn single_tap_far_delay_is_near_identity() {
    let spec = iid_spectrogram(2, 9, 20000, 2);
    let cfg = WpeConfig {
        taps: 1,
        delay: 50,
        ..Default::default()
    };
    let out = wpe_dereverberate(&spec, &cfg).unwrap();
    let rel = diff_energy(&out.data, &spec.data) / energy(&spec.data);
    assert!(rel < 1e-3, "{rel}");
}

#[test]
fn reverberant_tail_is_reduced() {
    let mut gains = Vec::new();
    for seed in 0..3 {
        let scene = synth::reverberant_scene(seed, SR, 5.0, 4, 0.5, 0.05);
        let spec = stft(&scene.observed, &StftConfig::default()).unwrap();
        let out = istft(&wpe_dereverberate(&spec, &WpeConfig::default()).unwrap()).unwrap();
        let before = synth::tail_to_direct_db(&scene.observed.channels[0], &scene.early[0]);
        let after = synth::tail_to_direct_db(&out.channels[0], &scene.early[0]);
        gains.push(before - after);
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    assert!(mean >= 3.0, "{gains:?}");
}

#[test]
fn shape_finiteness_and_idempotence_trend() {
    let scene = synth::reverberant_scene(9, SR, 3.0, 3, 0.5, 0.05);
    let spec = stft(&scene.observed, &StftConfig::default()).unwrap();
    let cfg = WpeConfig::default();
    let once = wpe_dereverberate(&spec, &cfg).unwrap();
    assert_eq!(once.data.dim(), spec.data.dim());
    assert!(once.data.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
    let twice = wpe_dereverberate(&once, &cfg).unwrap();
    assert!(diff_energy(&twice.data, &once.data) < diff_energy(&once.data, &spec.data));
    assert_eq!(wpe_dereverberate(&spec, &cfg).unwrap(), once);
}

#[test]
fn mono_input_works() {
    let scene = synth::reverberant_scene(4, SR, 2.0, 1, 0.4, 0.05);
    let spec = stft(&WaveformSet::new(scene.observed.channels, SR).unwrap(), &StftConfig::default()).unwrap();
    let out = wpe_dereverberate(&spec, &WpeConfig::default()).unwrap();
    assert_eq!(out.num_channels(), 1);
}
