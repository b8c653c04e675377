//! Mel filterbank features shared by microphone ranking and the stub
//! embedding extractor.

use ndarray::Array2;

use crate::stft::Spectrogram;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-style filters, `[band, bin]`.
pub fn mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Array2<f64> {
    let bins = fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut fb = Array2::zeros((n_mels, bins));
    for b in 0..n_mels {
        let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            fb[[b, k]] = w;
        }
    }
    fb
}

/// Mel-band power `[band, frame]` of one channel.
pub fn mel_power(spec: &Spectrogram, channel: usize, fb: &Array2<f64>) -> Array2<f64> {
    let power = spec.data.index_axis(ndarray::Axis(2), channel).mapv(|v| v.norm_sqr());
    fb.dot(&power)
}
