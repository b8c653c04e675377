//! Weighted prediction error dereverberation (iterative, MIMO, STFT domain).

use log::warn;
use ndarray::{s, Array2};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat};
use crate::stft::Spectrogram;

const POWER_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WpeConfig {
    pub taps: usize,
    /// Prediction delay in frames. Keep `delay * hop >= window_length` so the
    /// prediction never sees samples of the frame it predicts; shorter delays
    /// cancel the direct sound on noise-like sources.
    pub delay: usize,
    pub iterations: usize,
    /// Relative to `trace(R) / dim`.
    pub regularization: f64,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self {
            taps: 10,
            delay: 4,
            iterations: 3,
            regularization: 1e-10,
        }
    }
}

impl WpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 || self.delay == 0 || self.iterations == 0 {
            return Err(Error::invalid("WPE taps, delay and iterations must be at least 1"));
        }
        if !(self.regularization > 0.0 && self.regularization.is_finite()) {
            return Err(Error::invalid("WPE regularization must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WpeReport {
    /// Bins whose correlation matrix could not be inverted; passed through unchanged.
    pub singular_bins: Vec<usize>,
    /// `||predicted tail||_F / ||observation||_F` after the last iteration.
    pub prediction_ratio: f64,
}

pub fn wpe_dereverberate(spec: &Spectrogram, cfg: &WpeConfig) -> Result<Spectrogram> {
    wpe_dereverberate_with_report(spec, cfg).map(|(s, _)| s)
}

pub fn wpe_dereverberate_with_report(spec: &Spectrogram, cfg: &WpeConfig) -> Result<(Spectrogram, WpeReport)> {
    cfg.validate()?;
    let (bins, frames, _) = spec.data.dim();
    if frames <= cfg.delay + cfg.taps {
        return Err(Error::invalid(format!(
            "WPE needs more than delay + taps = {} frames, got {frames}",
            cfg.delay + cfg.taps
        )));
    }
    let results: Vec<(Array2<Complex64>, bool, f64)> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let y = spec.data.slice(s![f, .., ..]).to_owned();
            match wpe_bin(&y, cfg) {
                Some((x, pred)) => (x, false, pred),
                None => (y, true, 0.0),
            }
        })
        .collect();

    let mut out = spec.data.clone();
    let mut report = WpeReport::default();
    let mut pred_energy = 0.0;
    for (f, (x, singular, pred)) in results.into_iter().enumerate() {
        out.slice_mut(s![f, .., ..]).assign(&x);
        pred_energy += pred;
        if singular {
            report.singular_bins.push(f);
        }
    }
    let obs_energy: f64 = spec.data.iter().map(|v| v.norm_sqr()).sum();
    report.prediction_ratio = if obs_energy > 0.0 { (pred_energy / obs_energy).sqrt() } else { 0.0 };
    if !report.singular_bins.is_empty() {
        warn!("wpe: {} bins singular, left unprocessed", report.singular_bins.len());
    }
    Ok((spec.with_data(out), report))
}

/// One frequency bin, `y` is `[frame, channel]`. Returns the dereverberated
/// bin and the energy of the subtracted prediction.
fn wpe_bin(y: &Array2<Complex64>, cfg: &WpeConfig) -> Option<(Array2<Complex64>, f64)> {
    let (frames, k) = y.dim();
    let dim = k * cfg.taps;
    // Stacked delayed observations, row t = [y(t-D), y(t-D-1), ...].
    let mut stacked = vec![Complex64::new(0.0, 0.0); frames * dim];
    for t in 0..frames {
        for tap in 0..cfg.taps {
            let Some(src) = t.checked_sub(cfg.delay + tap) else { break };
            for m in 0..k {
                stacked[t * dim + tap * k + m] = y[[src, m]];
            }
        }
    }

    let mut x = y.clone();
    let mut pred_energy = 0.0;
    for _ in 0..cfg.iterations {
        let mut r = CMat::zeros(dim, dim);
        let mut p = CMat::zeros(dim, k);
        for t in 0..frames {
            let lambda = (x.row(t).iter().map(|v| v.norm_sqr()).sum::<f64>() / k as f64).max(POWER_FLOOR);
            let row = &stacked[t * dim..(t + 1) * dim];
            linalg::add_outer(&mut r, row, 1.0 / lambda);
            for m in 0..k {
                let ym = y[[t, m]].conj() / lambda;
                for (i, v) in row.iter().enumerate() {
                    p[(i, m)] += v * ym;
                }
            }
        }
        let r = linalg::hermitize(&r);
        let tr = linalg::trace_re(&r);
        if tr <= 0.0 {
            // Nothing in the past to predict from.
            return Some((x, pred_energy));
        }
        let r = r + CMat::identity(dim, dim) * c(cfg.regularization * tr / dim as f64);
        let g = linalg::solve(&r, &p)?;

        pred_energy = 0.0;
        for t in 0..frames {
            let row = &stacked[t * dim..(t + 1) * dim];
            for m in 0..k {
                let pred: Complex64 = row.iter().enumerate().map(|(i, v)| g[(i, m)].conj() * v).sum();
                x[[t, m]] = y[[t, m]] - pred;
                pred_energy += pred.norm_sqr();
            }
        }
    }
    Some((x, pred_energy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;
    use ndarray::Array3;

    #[test]
    fn config_validation() {
        assert!(WpeConfig::default().validate().is_ok());
        for bad in [
            WpeConfig { taps: 0, ..Default::default() },
            WpeConfig { delay: 0, ..Default::default() },
            WpeConfig { iterations: 0, ..Default::default() },
            WpeConfig { regularization: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn too_few_frames() {
        let cfg = StftConfig::default();
        let spec = Spectrogram::zeros(cfg, 16000, 0, 2).with_data(Array3::from_elem((513, 14, 2), c(1.0)));
        assert!(wpe_dereverberate(&spec, &WpeConfig::default()).is_err());
        let spec = spec.with_data(Array3::from_elem((513, 15, 2), c(1.0)));
        assert!(wpe_dereverberate(&spec, &WpeConfig::default()).is_ok());
    }

    #[test]
    fn silence_stays_silent() {
        let spec = Spectrogram::zeros(StftConfig::default(), 16000, 0, 2).with_data(Array3::zeros((4, 40, 2)));
        let (out, report) = wpe_dereverberate_with_report(&spec, &WpeConfig::default()).unwrap();
        assert!(out.data.iter().all(|v| *v == c(0.0)));
        assert!(report.singular_bins.is_empty());
    }
}
