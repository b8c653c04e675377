//! Multi-channel speaker counting.
//!
//! Microphones are grouped by waveform correlation (Ward linkage), the
//! speaker count of each group is estimated from its pooled embeddings by
//! normalised maximum eigengap (NME) analysis, and group counts are combined
//! by an embedding-count weighted average.

use log::{debug, warn};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::audio::WaveformSet;
use crate::error::{Error, Result};
use crate::features::{mel_filterbank, mel_power};
use crate::gss::ActivityMatrix;
use crate::stft::{stft, StftConfig, WindowKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountingConfig {
    /// Subchunk length, seconds.
    pub subchunk: f64,
    /// Embeddings with less speech than this are dropped, seconds.
    pub t_min: f64,
    pub theta_mic: f64,
    /// Samples used for microphone correlation, seconds.
    pub t_corr: f64,
    /// Neighbour counts p range over `[1, N / p_max_divisor]`.
    pub p_max_divisor: usize,
    /// Largest count the eigengap search considers.
    pub max_speakers: usize,
}

impl Default for CountingConfig {
    fn default() -> Self {
        Self {
            subchunk: 15.0,
            t_min: 0.75,
            theta_mic: 0.05,
            t_corr: 120.0,
            p_max_divisor: 10,
            max_speakers: 16,
        }
    }
}

impl CountingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.subchunk > 0.0 && self.t_corr > 0.0) {
            return Err(Error::invalid("subchunk and t_corr must be positive"));
        }
        if self.t_min < 0.0 || !self.theta_mic.is_finite() {
            return Err(Error::invalid("t_min must be non-negative and theta_mic finite"));
        }
        if self.p_max_divisor == 0 || self.max_speakers == 0 {
            return Err(Error::invalid("p_max_divisor and max_speakers must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingIndex {
    pub mic: usize,
    pub chunk: usize,
    pub subchunk: usize,
    pub local_speaker: usize,
    /// Speech duration behind the embedding, seconds.
    pub duration: f64,
}

/// Embedding vectors `[entry, dim]` with their index rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub vectors: Array2<f64>,
    pub index: Vec<EmbeddingIndex>,
}

impl EmbeddingSet {
    pub fn new(vectors: Array2<f64>, index: Vec<EmbeddingIndex>) -> Result<Self> {
        if vectors.nrows() != index.len() {
            return Err(Error::invalid(format!(
                "{} embeddings but {} index rows",
                vectors.nrows(),
                index.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embeddings must be finite"));
        }
        if index.iter().any(|i| !(i.duration >= 0.0)) {
            return Err(Error::invalid("embedding durations must be non-negative"));
        }
        Ok(Self { vectors, index })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            vectors: Array2::zeros((0, dim)),
            index: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn select(&self, keep: impl Fn(&EmbeddingIndex) -> bool) -> Self {
        let rows: Vec<usize> = (0..self.len()).filter(|&r| keep(&self.index[r])).collect();
        Self {
            vectors: self.vectors.select(ndarray::Axis(0), &rows),
            index: rows.iter().map(|&r| self.index[r]).collect(),
        }
    }

    /// Concatenates sets of equal dimension.
    pub fn concat(sets: &[EmbeddingSet]) -> Result<Self> {
        let Some(first) = sets.first() else {
            return Ok(Self::empty(0));
        };
        let dim = first.dim();
        if sets.iter().any(|s| s.dim() != dim && !s.is_empty()) {
            return Err(Error::invalid("embedding dimensions differ between files"));
        }
        let views: Vec<_> = sets.iter().filter(|s| !s.is_empty()).map(|s| s.vectors.view()).collect();
        let vectors = if views.is_empty() {
            Array2::zeros((0, dim))
        } else {
            ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))?
        };
        let index = sets.iter().flat_map(|s| s.index.iter().copied()).collect();
        Self::new(vectors, index)
    }
}

/// Keeps entries with `duration >= t_min`.
pub fn filter_embeddings(set: &EmbeddingSet, t_min: f64) -> EmbeddingSet {
    set.select(|i| i.duration >= t_min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subchunk {
    pub chunk: usize,
    /// Position within the chunk.
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub activity: ActivityMatrix,
}

/// Cuts a session activity matrix into chunks of `chunk_len` seconds and each
/// chunk into subchunks of `subchunk_len`; a short remainder is kept.
pub fn split_subchunks(activity: &ActivityMatrix, chunk_len: f64, subchunk_len: f64) -> Result<Vec<Subchunk>> {
    if !(chunk_len > 0.0 && subchunk_len > 0.0) {
        return Err(Error::invalid("chunk and subchunk lengths must be positive"));
    }
    let fr = activity.frame_rate;
    let total = activity.num_frames();
    let to_frame = |t: f64| ((t * fr).round() as usize).min(total);
    let duration = activity.duration();
    let mut out = Vec::new();
    let mut chunk = 0;
    let mut c0 = 0.0;
    while to_frame(c0) < total {
        let c1 = (c0 + chunk_len).min(duration);
        let mut index = 0;
        let mut s0 = c0;
        while s0 < c1 - 1e-9 {
            let s1 = (s0 + subchunk_len).min(c1);
            let (f0, f1) = (to_frame(s0), to_frame(s1));
            if f1 > f0 {
                let values = activity.values.slice(s![.., f0..f1]).to_owned();
                out.push(Subchunk {
                    chunk,
                    index,
                    start: s0,
                    end: s1,
                    activity: ActivityMatrix::new(values, fr)?,
                });
                index += 1;
            }
            s0 = s1;
        }
        chunk += 1;
        c0 += chunk_len;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicSimilarity {
    /// Pearson correlation, symmetric with unit diagonal.
    pub matrix: Array2<f64>,
    /// Channels with zero variance; correlated with nothing.
    pub zero_variance: Vec<usize>,
}

/// Pearson correlation between channels over the first `t_corr` seconds
/// (the whole recording when shorter).
pub fn mic_similarity(wave: &WaveformSet, t_corr: f64) -> Result<MicSimilarity> {
    let m = wave.num_channels();
    if m == 0 {
        return Err(Error::invalid("no channels"));
    }
    if wave.duration() < 1.0 {
        return Err(Error::invalid(format!(
            "microphone correlation needs at least 1 s of audio, got {:.3} s",
            wave.duration()
        )));
    }
    let n = ((t_corr * wave.sample_rate as f64) as usize).min(wave.len());
    let centered: Vec<Vec<f64>> = wave
        .channels
        .iter()
        .map(|ch| {
            let x = &ch[..n];
            let mean = x.iter().sum::<f64>() / n as f64;
            x.iter().map(|v| v - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centered.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let zero_variance: Vec<usize> = (0..m).filter(|&i| norms[i] == 0.0).collect();
    if !zero_variance.is_empty() {
        warn!("channels {zero_variance:?} have zero variance; treated as uncorrelated");
    }
    let mut matrix = Array2::eye(m);
    for i in 0..m {
        for j in i + 1..m {
            let r = if norms[i] > 0.0 && norms[j] > 0.0 {
                let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            matrix[[i, j]] = r;
            matrix[[j, i]] = r;
        }
    }
    Ok(MicSimilarity { matrix, zero_variance })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicGroups {
    /// Ascending mic indices per group; groups ordered by their first mic.
    pub groups: Vec<Vec<usize>>,
    pub similarity: Array2<f64>,
}

/// Ward agglomerative clustering on the distance `1 - L`; merging stops once
/// the closest pair of clusters has similarity `1 - d` below `theta_mic`.
pub fn group_microphones(similarity: &Array2<f64>, theta_mic: f64) -> Result<MicGroups> {
    let m = similarity.nrows();
    if m == 0 || similarity.ncols() != m {
        return Err(Error::invalid("similarity matrix must be square and non-empty"));
    }
    let mut dist = similarity.mapv(|l| 1.0 - l);
    let mut members: Vec<Option<Vec<usize>>> = (0..m).map(|i| Some(vec![i])).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..m {
            if members[i].is_none() {
                continue;
            }
            for j in i + 1..m {
                if members[j].is_none() {
                    continue;
                }
                let d = dist[[i, j]];
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let Some((d, i, j)) = best else { break };
        if 1.0 - d < theta_mic {
            break;
        }
        let ni = members[i].as_ref().map_or(0, Vec::len) as f64;
        let nj = members[j].as_ref().map_or(0, Vec::len) as f64;
        // Lance-Williams update for Ward linkage; cluster i absorbs j.
        for k in 0..m {
            if k == i || k == j || members[k].is_none() {
                continue;
            }
            let nk = members[k].as_ref().map_or(0, Vec::len) as f64;
            let v = ((ni + nk) * dist[[k, i]] + (nj + nk) * dist[[k, j]] - nk * d) / (ni + nj + nk);
            dist[[k, i]] = v;
            dist[[i, k]] = v;
        }
        let absorbed = members[j].take().unwrap_or_default();
        if let Some(mi) = members[i].as_mut() {
            mi.extend(absorbed);
            mi.sort_unstable();
        }
    }
    let mut groups: Vec<Vec<usize>> = members.into_iter().flatten().collect();
    groups.sort_by_key(|g| g[0]);
    Ok(MicGroups {
        groups,
        similarity: similarity.clone(),
    })
}

/// Result of the NME search.
#[derive(Debug, Clone, PartialEq)]
pub struct NmeResult {
    pub count: usize,
    /// Chosen neighbour count; 0 when every p produced a flat spectrum.
    pub p: usize,
    /// `p / max eigengap` at the chosen p.
    pub ratio: f64,
}

fn cosine_affinity(vectors: &Array2<f64>) -> Array2<f64> {
    let norms: Vec<f64> = vectors.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let n = vectors.nrows();
    let mut a = vectors.dot(&vectors.t());
    for i in 0..n {
        for j in 0..n {
            let d = norms[i] * norms[j];
            a[[i, j]] = if d > 0.0 { (a[[i, j]] / d).clamp(-1.0, 1.0) } else { 0.0 };
        }
    }
    a
}

/// Ascending Laplacian eigenvalues of the symmetrised p-nearest-neighbour graph.
fn pnn_laplacian_spectrum(affinity: &Array2<f64>, p: usize) -> Vec<f64> {
    let n = affinity.nrows();
    let mut b = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| affinity[[i, y]].total_cmp(&affinity[[i, x]]).then(x.cmp(&y)));
        for &j in order.iter().take(p) {
            b[(i, j)] = 1.0;
            b[(j, i)] = 1.0;
        }
    }
    for i in 0..n {
        b[(i, i)] = 0.0;
    }
    let mut lap = -b.clone();
    for i in 0..n {
        lap[(i, i)] = b.row(i).sum();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(lap).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Speaker count by normalised maximum eigengap analysis.
pub fn nme_count(vectors: &Array2<f64>, p_max_divisor: usize, max_speakers: usize) -> Result<NmeResult> {
    let n = vectors.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("NME needs at least two embeddings, got {n}")));
    }
    if p_max_divisor == 0 {
        return Err(Error::invalid("p_max_divisor must be at least 1"));
    }
    let affinity = cosine_affinity(vectors);
    let p_max = (n / p_max_divisor).max(1);
    let k_max = (n - 1).min(max_speakers.max(1));
    let mut best: Option<NmeResult> = None;
    for p in 1..=p_max {
        let ev = pnn_laplacian_spectrum(&affinity, p);
        let (mut gap, mut count) = (0.0, 1);
        for k in 1..=k_max {
            let g = ev[k] - ev[k - 1];
            if g > gap {
                gap = g;
                count = k;
            }
        }
        if gap <= 1e-12 {
            continue;
        }
        let ratio = p as f64 / gap;
        if best.as_ref().is_none_or(|b| ratio < b.ratio) {
            best = Some(NmeResult { count, p, ratio });
        }
    }
    Ok(best.unwrap_or(NmeResult {
        count: 1,
        p: 0,
        ratio: f64::INFINITY,
    }))
}

/// `round(sum w s / sum w)` with halves rounded up, computed exactly.
pub fn aggregate_counts(per_group: &[(usize, usize)]) -> Result<usize> {
    if per_group.is_empty() {
        return Err(Error::invalid("no group counts to aggregate"));
    }
    if per_group.iter().any(|&(_, w)| w == 0) {
        return Err(Error::invalid("group weights must be positive"));
    }
    let num: u128 = per_group.iter().map(|&(s, w)| s as u128 * w as u128).sum();
    let den: u128 = per_group.iter().map(|&(_, w)| w as u128).sum();
    Ok(((2 * num + den) / (2 * den)) as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCount {
    pub mics: Vec<usize>,
    pub count: usize,
    /// Embeddings that survived filtering.
    pub weight: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountEstimate {
    pub per_group: Vec<GroupCount>,
    pub session: usize,
}

/// Counts speakers from embeddings given a microphone grouping.
pub fn count_with_groups(groups: &MicGroups, embeddings: &EmbeddingSet, cfg: &CountingConfig) -> Result<CountEstimate> {
    cfg.validate()?;
    let kept = filter_embeddings(embeddings, cfg.t_min);
    if kept.is_empty() {
        return Err(Error::invalid(format!(
            "no embedding has at least {} s of speech; cannot count speakers",
            cfg.t_min
        )));
    }
    let mut per_group = Vec::new();
    for mics in &groups.groups {
        let set = kept.select(|i| mics.contains(&i.mic));
        if set.is_empty() {
            continue;
        }
        let count = if set.len() < 2 {
            1
        } else {
            nme_count(&set.vectors, cfg.p_max_divisor, cfg.max_speakers)?.count
        };
        debug!("count: group {mics:?} -> {count} speakers from {} embeddings", set.len());
        per_group.push(GroupCount {
            mics: mics.clone(),
            count,
            weight: set.len(),
        });
    }
    let pairs: Vec<(usize, usize)> = per_group.iter().map(|g| (g.count, g.weight)).collect();
    let session = aggregate_counts(&pairs)?;
    Ok(CountEstimate { per_group, session })
}

/// Full counting: correlation grouping on the recording, then NME per group.
pub fn count_speakers(wave: &WaveformSet, embeddings: &EmbeddingSet, cfg: &CountingConfig) -> Result<CountEstimate> {
    cfg.validate()?;
    let sim = mic_similarity(wave, cfg.t_corr)?;
    let groups = group_microphones(&sim.matrix, cfg.theta_mic)?;
    if let Some(bad) = embeddings.index.iter().find(|i| i.mic >= wave.num_channels()) {
        return Err(Error::invalid(format!(
            "embedding refers to mic {} but the session has {} channels",
            bad.mic,
            wave.num_channels()
        )));
    }
    count_with_groups(&groups, embeddings, cfg)
}

pub const STUB_EMBEDDING_DIM: usize = 80;

/// Deterministic stand-in for a neural speaker embedding: mean and standard
/// deviation of 40 log-mel bands over the frames inside `intervals`.
pub fn stub_embedding(samples: &[f64], sample_rate: u32, intervals: &[(f64, f64)]) -> Result<Vec<f64>> {
    let wave = WaveformSet::new(vec![samples.to_vec()], sample_rate)?;
    let cfg = StftConfig {
        window_length: 400,
        hop: 160,
        window: WindowKind::Hann,
        fft_size: 512,
    };
    let spec = stft(&wave, &cfg)?;
    let fb = mel_filterbank(STUB_EMBEDDING_DIM / 2, cfg.fft_size, sample_rate, 20.0, sample_rate as f64 / 2.0);
    let logmel = mel_power(&spec, 0, &fb).mapv(|p| (p + 1e-10).ln());
    let frames: Vec<usize> = (0..spec.num_frames())
        .filter(|&t| {
            let c = cfg.frame_center(t, sample_rate);
            intervals.iter().any(|&(a, b)| c >= a && c < b)
        })
        .collect();
    if frames.is_empty() {
        return Err(Error::invalid("no frames inside the requested intervals"));
    }
    let n = frames.len() as f64;
    let mut out = Vec::with_capacity(STUB_EMBEDDING_DIM);
    let mut stds = Vec::with_capacity(STUB_EMBEDDING_DIM / 2);
    for band in logmel.rows() {
        let mean = frames.iter().map(|&t| band[t]).sum::<f64>() / n;
        let var = frames.iter().map(|&t| (band[t] - mean).powi(2)).sum::<f64>() / n;
        out.push(mean);
        stds.push(var.sqrt());
    }
    out.extend(stds);
    Ok(out)
}
