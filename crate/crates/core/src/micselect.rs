//! Microphone subset selection from envelope variance (EV) and C50 scores.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::audio::WaveformSet;
use crate::error::{Error, Result};
use crate::features::{mel_filterbank, mel_power};
use crate::stft::{stft, StftConfig, WindowKind};

/// Shortest signal `envelope_variance` accepts, seconds.
pub const MIN_EV_DURATION: f64 = 0.5;
const EV_MELS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreSource {
    Computed,
    File,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicScores {
    pub ev: Vec<f64>,
    /// dB.
    pub c50: Vec<f64>,
    pub source: ScoreSource,
}

impl MicScores {
    pub fn new(ev: Vec<f64>, c50: Vec<f64>, source: ScoreSource) -> Result<Self> {
        if ev.len() != c50.len() {
            return Err(Error::invalid(format!(
                "{} EV scores but {} C50 scores",
                ev.len(),
                c50.len()
            )));
        }
        if ev.iter().chain(&c50).any(|v| !v.is_finite()) {
            return Err(Error::invalid("microphone scores must be finite"));
        }
        Ok(Self { ev, c50, source })
    }

    pub fn num_mics(&self) -> usize {
        self.ev.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMethod {
    EvTopk,
    EvC50,
    /// Keep every microphone.
    All,
}

impl std::str::FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ev-topk" => Ok(Self::EvTopk),
            "ev-c50" => Ok(Self::EvC50),
            "all" => Ok(Self::All),
            _ => Err(Error::invalid(format!("unknown selection method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub method: SelectionMethod,
    pub k_min: usize,
    pub ratio_k1: f64,
    pub baseline_ratio: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            method: SelectionMethod::EvC50,
            k_min: 15,
            ratio_k1: 0.65,
            baseline_ratio: 0.8,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min == 0 {
            return Err(Error::invalid("k_min must be at least 1"));
        }
        for (name, r) in [("ratio_k1", self.ratio_k1), ("baseline_ratio", self.baseline_ratio)] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// `ceil(ratio * m)`, immune to products like `0.65 * 40 = 26.000000000000004`.
pub fn top_count(ratio: f64, m: usize) -> usize {
    let x = ratio * m as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k as usize).clamp(1.min(m), m)
}

/// Envelope variance per channel.
///
/// Each mel band's power envelope is divided by its temporal mean, cube-root
/// compressed, and its variance taken; variances are normalised by the
/// largest across microphones in that band and averaged over bands.
/// Reverberation and additive noise both flatten the envelope and lower
/// the score. Scores do not depend on channel gain.
pub fn envelope_variance(wave: &WaveformSet) -> Result<Vec<f64>> {
    if wave.num_channels() == 0 {
        return Err(Error::invalid("no channels to score"));
    }
    if wave.duration() < MIN_EV_DURATION {
        return Err(Error::invalid(format!(
            "envelope variance needs at least {MIN_EV_DURATION} s of audio, got {:.3} s",
            wave.duration()
        )));
    }
    let cfg = StftConfig {
        window_length: 512,
        hop: 128,
        window: WindowKind::Hann,
        fft_size: 512,
    };
    let spec = stft(wave, &cfg)?;
    let fb = mel_filterbank(EV_MELS, cfg.fft_size, wave.sample_rate, 0.0, wave.sample_rate as f64 / 2.0);
    let mics = wave.num_channels();
    let mut var = vec![vec![0.0; EV_MELS]; mics];
    for (m, row) in var.iter_mut().enumerate() {
        let mel = mel_power(&spec, m, &fb);
        for (b, band) in mel.rows().into_iter().enumerate() {
            let mean = band.mean().unwrap_or(0.0);
            if mean <= 0.0 {
                continue;
            }
            let env: Vec<f64> = band.iter().map(|p| (p / mean).cbrt()).collect();
            let mu = env.iter().sum::<f64>() / env.len() as f64;
            row[b] = env.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / env.len() as f64;
        }
    }
    let mut scores = vec![0.0; mics];
    for b in 0..EV_MELS {
        let max = var.iter().map(|v| v[b]).fold(0.0, f64::max);
        if max <= 0.0 {
            continue;
        }
        for m in 0..mics {
            scores[m] += var[m][b] / max / EV_MELS as f64;
        }
    }
    Ok(scores)
}

/// Indices of the `k` highest scores, ties to the lower index, returned ascending.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

pub fn select_topk_ev(scores: &MicScores, ratio: f64) -> Result<Vec<usize>> {
    let m = scores.num_mics();
    if m == 0 {
        return Err(Error::invalid("no microphones to select from"));
    }
    Ok(top_k(&scores.ev, top_count(ratio, m)))
}

/// Which rule produced a selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionBranch {
    /// Too few microphones to select from.
    AllMics,
    /// The EV/C50 intersection was already large enough.
    Intersection,
    /// Intersection topped up with the best remaining microphones by EV.
    Fallback,
}

pub fn select_mics_ev_c50(scores: &MicScores, cfg: &SelectionConfig) -> Result<Vec<usize>> {
    select_mics_ev_c50_branch(scores, cfg).map(|(s, _)| s)
}

pub fn select_mics_ev_c50_branch(scores: &MicScores, cfg: &SelectionConfig) -> Result<(Vec<usize>, SelectionBranch)> {
    cfg.validate()?;
    let m = scores.num_mics();
    if m == 0 {
        return Err(Error::invalid("no microphones to select from"));
    }
    if m <= cfg.k_min {
        return Ok(((0..m).collect(), SelectionBranch::AllMics));
    }
    let k1 = top_count(cfg.ratio_k1, m);
    let by_ev = top_k(&scores.ev, k1);
    let by_c50 = top_k(&scores.c50, k1);
    let both: Vec<usize> = by_ev.iter().copied().filter(|i| by_c50.contains(i)).collect();
    debug!("mic selection: M={m} K1={k1} |EV∩C50|={}", both.len());
    if both.len() >= cfg.k_min {
        return Ok((both, SelectionBranch::Intersection));
    }
    let rest: Vec<usize> = (0..m).filter(|i| !both.contains(i)).collect();
    let rest_ev: Vec<f64> = rest.iter().map(|&i| scores.ev[i]).collect();
    let mut out = both;
    out.extend(top_k(&rest_ev, cfg.k_min - out.len()).into_iter().map(|j| rest[j]));
    out.sort_unstable();
    Ok((out, SelectionBranch::Fallback))
}

/// Dispatches on `cfg.method`.
pub fn select_mics(scores: &MicScores, cfg: &SelectionConfig) -> Result<Vec<usize>> {
    match cfg.method {
        SelectionMethod::EvTopk => select_topk_ev(scores, cfg.baseline_ratio),
        SelectionMethod::EvC50 => select_mics_ev_c50(scores, cfg),
        SelectionMethod::All => Ok((0..scores.num_mics()).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_use_exact_ceilings() {
        assert_eq!(top_count(0.65, 40), 26);
        assert_eq!(top_count(0.65, 35), 23);
        assert_eq!(top_count(0.8, 10), 8);
        assert_eq!(top_count(0.8, 1), 1);
        assert_eq!(top_count(0.65, 20), 13);
        assert_eq!(top_count(0.65, 21), 14);
    }

    #[test]
    fn small_arrays_keep_everything() {
        let s = MicScores::new((0..10).map(f64::from).collect(), vec![0.0; 10], ScoreSource::File).unwrap();
        let cfg = SelectionConfig::default();
        let (sel, br) = select_mics_ev_c50_branch(&s, &cfg).unwrap();
        assert_eq!(sel, (0..10).collect::<Vec<_>>());
        assert_eq!(br, SelectionBranch::AllMics);
        let one = MicScores::new(vec![1.0], vec![1.0], ScoreSource::File).unwrap();
        assert_eq!(select_topk_ev(&one, 0.8).unwrap(), vec![0]);
        assert_eq!(select_topk_ev(&s, 0.8).unwrap(), (2..10).collect::<Vec<_>>());
    }

    #[test]
    fn intersection_branch() {
        // EV ranks 0..40 descending; C50 keeps 20 of EV's top 26 in its top 26.
        let ev: Vec<f64> = (0..40).map(|i| 100.0 - i as f64).collect();
        let mut c50 = vec![0.0; 40];
        for i in 0..20 {
            c50[i] = 50.0 - i as f64;
        }
        for i in 0..6 {
            c50[30 + i] = 20.0 - i as f64;
        }
        let s = MicScores::new(ev, c50, ScoreSource::File).unwrap();
        let (sel, br) = select_mics_ev_c50_branch(&s, &SelectionConfig::default()).unwrap();
        assert_eq!(br, SelectionBranch::Intersection);
        assert_eq!(sel, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn fallback_branch() {
        // M=35, K1=23: two 23-subsets of 35 share at least 11 mics, so the
        // smallest possible intersection is 0..11.
        let ev: Vec<f64> = (0..35).map(|i| 100.0 - i as f64).collect();
        let mut c50 = vec![-100.0; 35];
        for i in 0..11 {
            c50[i] = 50.0;
        }
        for i in 23..35 {
            c50[i] = 10.0;
        }
        let s = MicScores::new(ev, c50, ScoreSource::File).unwrap();
        let (sel, br) = select_mics_ev_c50_branch(&s, &SelectionConfig::default()).unwrap();
        assert_eq!(br, SelectionBranch::Fallback);
        assert_eq!(sel.len(), 15);
        // 0..11 from the intersection, then 11..15 are the best remaining by EV.
        assert_eq!(sel, (0..15).collect::<Vec<_>>());
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(top_k(&[1.0, 2.0, 2.0, 2.0], 2), vec![1, 2]);
    }

    #[test]
    fn rejects_mismatched_scores() {
        assert!(MicScores::new(vec![1.0], vec![], ScoreSource::File).is_err());
        assert!(MicScores::new(vec![f64::NAN], vec![1.0], ScoreSource::File).is_err());
    }
}
