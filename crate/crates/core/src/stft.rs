//! STFT analysis and weighted overlap-add synthesis.
//!
//! Frames are taken from a reflect-padded copy of the signal so that every
//! original sample is covered by the same number of windows; synthesis divides
//! by the summed squared window and crops the padding back off.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array3;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::WaveformSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    SqrtHann,
    Hann,
    Rect,
}

impl WindowKind {
    /// Periodic window of the given length.
    pub fn samples(self, len: usize) -> Vec<f64> {
        let hann = |n: usize| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos();
        (0..len)
            .map(|n| match self {
                WindowKind::SqrtHann => hann(n).sqrt(),
                WindowKind::Hann => hann(n),
                WindowKind::Rect => 1.0,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub fft_size: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_length: 1024,
            hop: 256,
            window: WindowKind::SqrtHann,
            fft_size: 1024,
        }
    }
}

impl StftConfig {
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_length || self.window_length > self.fft_size {
            return Err(Error::invalid(format!(
                "stft requires 0 < hop <= window_length <= fft_size (got {} / {} / {})",
                self.hop, self.window_length, self.fft_size
            )));
        }
        Ok(())
    }

    /// Value of the summed squared window when it is constant over time.
    pub fn cola_constant(&self) -> Option<f64> {
        let w = self.window.samples(self.window_length);
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| {
                (n..self.window_length)
                    .step_by(self.hop)
                    .map(|m| w[m] * w[m])
                    .sum()
            })
            .collect();
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        let max_dev = sums.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max);
        (mean > 0.0 && max_dev <= 1e-9 * mean).then_some(mean)
    }

    pub fn is_cola(&self) -> bool {
        self.cola_constant().is_some()
    }

    fn padding(&self, len: usize) -> (usize, usize) {
        let front = self.window_length - self.hop;
        let covered = len + 2 * front - self.window_length;
        let extra = (self.hop - covered % self.hop) % self.hop;
        (front, front + extra)
    }

    /// Frame count produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        let (front, back) = self.padding(len);
        1 + (len + front + back - self.window_length) / self.hop
    }

    /// Time in seconds of the centre of frame `t`, relative to the signal start.
    pub fn frame_center(&self, t: usize, sample_rate: u32) -> f64 {
        let (front, _) = self.padding(self.window_length);
        let centre = (t * self.hop + self.window_length / 2) as f64 - front as f64;
        centre / sample_rate as f64
    }
}

/// Complex STFT tensor indexed `[frequency, frame, channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array3<Complex64>,
    pub config: StftConfig,
    pub sample_rate: u32,
    /// Length in samples of the analysed signal.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn num_bins(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn num_frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn num_channels(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn zeros(config: StftConfig, sample_rate: u32, signal_len: usize, channels: usize) -> Self {
        let shape = (config.num_bins(), config.num_frames(signal_len), channels);
        Self {
            data: Array3::zeros(shape),
            config,
            sample_rate,
            signal_len,
        }
    }

    /// Same metadata, new data with possibly different channel count.
    pub fn with_data(&self, data: Array3<Complex64>) -> Self {
        Self {
            data,
            config: self.config,
            sample_rate: self.sample_rate,
            signal_len: self.signal_len,
        }
    }

    /// Window-normalised energy; equals the signal energy for COLA configs
    /// when the signal is zero over the padded edges.
    pub fn normalized_energy(&self) -> Option<f64> {
        let c = self.config.cola_constant()?;
        let nyq = self.config.fft_size / 2;
        let even = self.config.fft_size.is_multiple_of(2);
        let mut total = 0.0;
        for ((f, _, _), x) in self.data.indexed_iter() {
            let weight = if f == 0 || (even && f == nyq) { 1.0 } else { 2.0 };
            total += weight * x.norm_sqr();
        }
        Some(total / (self.config.fft_size as f64 * c))
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(n),
        inverse: planner.plan_fft_inverse(n),
    }
}

fn reflect_pad(x: &[f64], front: usize, back: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + front + back);
    out.extend((1..=front).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((1..=back).map(|i| x[n - 1 - i]));
    out
}

pub fn stft(wave: &WaveformSet, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let len = wave.len();
    if len < cfg.window_length {
        return Err(Error::invalid(format!(
            "signal of {len} samples is shorter than one window ({})",
            cfg.window_length
        )));
    }
    let window = cfg.window.samples(cfg.window_length);
    let (front, back) = cfg.padding(len);
    let frames = cfg.num_frames(len);
    let bins = cfg.num_bins();
    let fft = plans(cfg.fft_size).forward;
    let mut data = Array3::zeros((bins, frames, wave.num_channels()));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    for (k, ch) in wave.channels.iter().enumerate() {
        let padded = reflect_pad(ch, front, back);
        for t in 0..frames {
            let start = t * cfg.hop;
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            for (n, (&x, &w)) in padded[start..start + cfg.window_length]
                .iter()
                .zip(&window)
                .enumerate()
            {
                buf[n] = Complex64::new(x * w, 0.0);
            }
            fft.process(&mut buf);
            for f in 0..bins {
                data[[f, t, k]] = buf[f];
            }
        }
    }
    Ok(Spectrogram {
        data,
        config: *cfg,
        sample_rate: wave.sample_rate,
        signal_len: len,
    })
}

pub fn istft(spec: &Spectrogram) -> Result<WaveformSet> {
    let cfg = spec.config;
    cfg.validate()?;
    if !cfg.is_cola() {
        return Err(Error::invalid(
            "stft config does not satisfy constant overlap-add",
        ));
    }
    let (front, back) = cfg.padding(spec.signal_len);
    let frames = spec.num_frames();
    if frames != cfg.num_frames(spec.signal_len) || spec.num_bins() != cfg.num_bins() {
        return Err(Error::invalid("spectrogram shape inconsistent with its config"));
    }
    let window = cfg.window.samples(cfg.window_length);
    let padded_len = spec.signal_len + front + back;
    let ifft = plans(cfg.fft_size).inverse;
    let n_fft = cfg.fft_size;
    let bins = cfg.num_bins();

    let mut norm = vec![0.0; padded_len];
    for t in 0..frames {
        for (n, &w) in window.iter().enumerate() {
            norm[t * cfg.hop + n] += w * w;
        }
    }

    let mut channels = Vec::with_capacity(spec.num_channels());
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for k in 0..spec.num_channels() {
        let mut out = vec![0.0; padded_len];
        for t in 0..frames {
            for f in 0..bins {
                buf[f] = spec.data[[f, t, k]];
            }
            // Hermitian completion of the upper half.
            for f in bins..n_fft {
                buf[f] = spec.data[[n_fft - f, t, k]].conj();
            }
            ifft.process(&mut buf);
            for (n, &w) in window.iter().enumerate() {
                out[t * cfg.hop + n] += w * buf[n].re / n_fft as f64;
            }
        }
        let ch: Vec<f64> = out[front..front + spec.signal_len]
            .iter()
            .zip(&norm[front..front + spec.signal_len])
            .map(|(&x, &d)| if d > 0.0 { x / d } else { 0.0 })
            .collect();
        channels.push(ch);
    }
    WaveformSet::new(channels, spec.sample_rate)
}
