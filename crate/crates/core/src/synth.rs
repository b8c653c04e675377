//! Deterministic synthetic signals used by tests, benchmarks and demos.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::WaveformSet;

/// Harmonic source with a slowly gliding pitch and syllable-rate amplitude
/// modulation; sparse in time-frequency like voiced speech.
pub fn speech_like<R: Rng>(rng: &mut R, len: usize, sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    let f0_base = rng.gen_range(100.0..240.0);
    let glide_rate = rng.gen_range(0.2..0.8);
    let glide_depth = rng.gen_range(0.05..0.15);
    let syllable_rate = rng.gen_range(3.0..5.0);
    let syllable_phase = rng.gen_range(0.0..2.0 * PI);
    let n_harm = ((4000.0 / f0_base) as usize).max(1);
    let amps: Vec<f64> = (1..=n_harm)
        .map(|h| rng.gen_range(0.5..1.0) / h as f64)
        .collect();
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(len);
    for n in 0..len {
        let t = n as f64 / sr;
        let f0 = f0_base * (1.0 + glide_depth * (2.0 * PI * glide_rate * t).sin());
        phase += 2.0 * PI * f0 / sr;
        let env = (0.5 - 0.5 * (2.0 * PI * syllable_rate * t + syllable_phase).cos()).powi(2);
        let voiced: f64 = amps
            .iter()
            .enumerate()
            .map(|(h, a)| a * ((h + 1) as f64 * phase).sin())
            .sum();
        let breath: f64 = StandardNormal.sample(rng);
        out.push(env * (voiced + 0.02 * breath));
    }
    normalize_peak(&mut out, 0.5);
    out
}

/// White noise under a random syllable-rate envelope with pauses; unlike
/// [`speech_like`] it is unpredictable from frame to frame.
pub fn modulated_noise<R: Rng>(rng: &mut R, len: usize, sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    let mut out = Vec::with_capacity(len);
    let mut n = 0;
    while n < len {
        let dur = (rng.gen_range(0.1..0.3) * sr) as usize;
        let gap = (rng.gen_range(0.05..0.25) * sr) as usize;
        let level = rng.gen_range(0.3..1.0);
        for i in 0..dur.min(len - n) {
            let env = (PI * i as f64 / dur as f64).sin();
            let g: f64 = StandardNormal.sample(rng);
            out.push(level * env * g);
        }
        n = out.len();
        out.extend(std::iter::repeat_n(0.0, gap.min(len - n)));
        n = out.len();
    }
    normalize_peak(&mut out, 0.5);
    out
}

pub fn white_noise<R: Rng>(rng: &mut R, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            std * g
        })
        .collect()
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / max);
    }
}

/// `gain * x[n - delay]`, zero before the delay.
pub fn delayed(x: &[f64], delay: usize, gain: f64) -> Vec<f64> {
    (0..x.len())
        .map(|n| if n >= delay { gain * x[n - delay] } else { 0.0 })
        .collect()
}

/// Unit direct path followed, after `gap_s`, by a Gaussian tail decaying 60 dB
/// over `t60` seconds and lasting `tail_s` seconds.
pub fn exp_tail_rir<R: Rng>(rng: &mut R, sample_rate: u32, t60: f64, gap_s: f64, tail_s: f64, tail_gain: f64) -> Vec<f64> {
    let sr = sample_rate as f64;
    let gap = (gap_s * sr) as usize;
    let len = gap + (tail_s * sr) as usize;
    let decay = 3.0 * 10f64.ln() / (t60 * sr);
    let mut h = vec![0.0; len.max(1)];
    h[0] = 1.0;
    for (n, v) in h.iter_mut().enumerate().skip(gap.max(1)) {
        let g: f64 = StandardNormal.sample(rng);
        *v = tail_gain * g * (-decay * (n - gap) as f64).exp();
    }
    h
}

/// Linear convolution truncated to `x.len()` samples.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (k, &hk) in h.iter().enumerate() {
        if hk == 0.0 {
            continue;
        }
        for n in k..x.len() {
            out[n] += hk * x[n - k];
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Scale-invariant signal-to-distortion ratio in dB.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> f64 {
    let dot: f64 = estimate.iter().zip(reference).map(|(e, r)| e * r).sum();
    let ref_energy: f64 = reference.iter().map(|r| r * r).sum();
    let alpha = dot / ref_energy;
    let (mut target, mut residual) = (0.0, 0.0);
    for (e, r) in estimate.iter().zip(reference) {
        let s = alpha * r;
        target += s * s;
        residual += (e - s) * (e - s);
    }
    10.0 * (target / residual).log10()
}

/// Anechoic multi-speaker recording with per-speaker clean images.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub observed: WaveformSet,
    /// `[speaker][mic][sample]`.
    pub images: Vec<Vec<Vec<f64>>>,
    /// Active interval of each speaker, seconds.
    pub intervals: Vec<(f64, f64)>,
}

/// Speaker `i` reaches mic `m` after `delays[i][m]` samples and talks only
/// within `intervals[i]`; white sensor noise of `noise_std` on every mic.
pub fn anechoic_mixture(
    seed: u64,
    sample_rate: u32,
    secs: f64,
    delays: &[Vec<usize>],
    intervals: &[(f64, f64)],
    noise_std: f64,
) -> Mixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (secs * sample_rate as f64) as usize;
    let mics = delays.first().map_or(0, Vec::len);
    let mut mix = vec![vec![0.0; len]; mics];
    let mut images = Vec::with_capacity(delays.len());
    for (d, &(a, b)) in delays.iter().zip(intervals) {
        let mut src = speech_like(&mut rng, len, sample_rate);
        for (n, v) in src.iter_mut().enumerate() {
            let t = n as f64 / sample_rate as f64;
            if t < a || t >= b {
                *v = 0.0;
            }
        }
        let chans: Vec<Vec<f64>> = d.iter().map(|&dl| delayed(&src, dl, 1.0)).collect();
        for (acc, ch) in mix.iter_mut().zip(&chans) {
            acc.iter_mut().zip(ch).for_each(|(x, y)| *x += y);
        }
        images.push(chans);
    }
    for ch in mix.iter_mut() {
        for v in ch.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v += noise_std * g;
        }
    }
    Mixture {
        observed: WaveformSet::new(mix, sample_rate).expect("valid synthetic channels"),
        images,
        intervals: intervals.to_vec(),
    }
}

/// Single talker in a reverberant room seen by several mics.
#[derive(Debug, Clone)]
pub struct ReverbScene {
    pub observed: WaveformSet,
    /// Source convolved with the first `early_s` seconds of each RIR.
    pub early: Vec<Vec<f64>>,
}

pub fn reverberant_scene(seed: u64, sample_rate: u32, secs: f64, mics: usize, t60: f64, early_s: f64) -> ReverbScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (secs * sample_rate as f64) as usize;
    let src = modulated_noise(&mut rng, len, sample_rate);
    let cut = (early_s * sample_rate as f64) as usize;
    let (mut observed, mut early) = (Vec::new(), Vec::new());
    for m in 0..mics {
        let mut h = vec![0.0; m];
        h.extend(exp_tail_rir(&mut rng, sample_rate, t60, 0.002, 1.2 * t60, 0.05));
        observed.push(convolve(&src, &h));
        early.push(convolve(&src, &h[..cut.min(h.len())]));
    }
    ReverbScene {
        observed: WaveformSet::new(observed, sample_rate).expect("valid synthetic channels"),
        early,
    }
}

/// `10 log10(||x - early||^2 / ||early||^2)`.
pub fn tail_to_direct_db(x: &[f64], early: &[f64]) -> f64 {
    let (mut tail, mut direct) = (0.0, 0.0);
    for (a, e) in x.iter().zip(early) {
        tail += (a - e) * (a - e);
        direct += e * e;
    }
    10.0 * (tail / direct).log10()
}

/// `k` clusters of `per_cluster` unit vectors in `dim` dimensions around
/// mutually orthogonal centroids. Each member is `c + noise * u` normalised,
/// with `u` a random unit vector, so its cosine to the centroid is about
/// `1 / sqrt(1 + noise^2)`. Returns vectors `[k * per_cluster, dim]` and labels.
pub fn planted_clusters<R: Rng>(
    rng: &mut R,
    k: usize,
    per_cluster: usize,
    dim: usize,
    noise: f64,
) -> (ndarray::Array2<f64>, Vec<usize>) {
    assert!(k <= dim, "cannot plant {k} orthogonal centroids in {dim} dimensions");
    let gauss = |rng: &mut R| -> Vec<f64> { (0..dim).map(|_| StandardNormal.sample(rng)).collect() };
    let unit = |mut v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    };
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    while centroids.len() < k {
        let mut v = gauss(rng);
        for c in &centroids {
            let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
        }
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            centroids.push(unit(v));
        }
    }
    let mut out = ndarray::Array2::zeros((k * per_cluster, dim));
    let mut labels = Vec::with_capacity(k * per_cluster);
    for (c, centroid) in centroids.iter().enumerate() {
        for i in 0..per_cluster {
            let u = unit(gauss(rng));
            let v = unit(centroid.iter().zip(&u).map(|(a, b)| a + noise * b).collect());
            out.row_mut(c * per_cluster + i).assign(&ndarray::Array1::from(v));
            labels.push(c);
        }
    }
    (out, labels)
}

pub const DEMO_SECONDS: f64 = 30.0;
pub const DEMO_MICS: usize = 4;
pub const DEMO_CHUNK: f64 = 10.0;
const DEMO_FRAME_RATE: f64 = 100.0;
const DEMO_LOCAL: usize = 4;
const DEMO_EMBEDDING_DIM: usize = 32;
pub const DEMO_SUBCHUNKS: usize = 4;

/// A small recorded meeting with the neural side simulated: posteriors from
/// the true turns plus noise, and embeddings around per-speaker centroids.
#[derive(Debug, Clone)]
pub struct DemoSession {
    pub wave: WaveformSet,
    pub truth: crate::diarize::UtteranceBoundaries,
    /// One per microphone.
    pub posteriors: Vec<crate::diarize::ChunkSegmentation>,
    pub embeddings: crate::spkcount::EmbeddingSet,
    pub c50: Vec<f64>,
}

/// Three talkers, four mics, 30 s at 16 kHz.
pub fn demo_session(seed: u64) -> DemoSession {
    use crate::diarize::{single_speaker_mask, ChunkSegmentation, Segment, UtteranceBoundaries};
    use crate::spkcount::{EmbeddingIndex, EmbeddingSet};

    let sr = 16_000u32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let turns: [&[(f64, f64)]; 3] = [
        &[(0.5, 6.0), (14.0, 19.0), (25.0, 29.0)],
        &[(5.0, 11.0), (20.0, 24.5)],
        &[(10.5, 14.5), (18.5, 21.0), (24.0, 27.0)],
    ];
    let len = (DEMO_SECONDS * sr as f64) as usize;
    let mut mix = vec![vec![0.0; len]; DEMO_MICS];
    let mut segments = Vec::new();
    for (s, spk_turns) in turns.iter().enumerate() {
        let mut src = speech_like(&mut rng, len, sr);
        for (n, v) in src.iter_mut().enumerate() {
            let t = n as f64 / sr as f64;
            if !spk_turns.iter().any(|&(a, b)| t >= a && t < b) {
                *v = 0.0;
            }
        }
        for (m, acc) in mix.iter_mut().enumerate() {
            let delay = (3 * s + (s + 1) * m) % 11;
            let gain = 1.0 - 0.1 * ((s + m) % 3) as f64;
            acc.iter_mut().zip(delayed(&src, delay, gain)).for_each(|(x, y)| *x += 0.3 * y);
        }
        for &(a, b) in spk_turns.iter() {
            segments.push(Segment {
                speaker: format!("S{}", s + 1),
                start: a,
                end: b,
            });
        }
    }
    for ch in mix.iter_mut() {
        for v in ch.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v = (*v + 0.005 * g).clamp(-1.0, 1.0);
        }
    }
    let ids = (0..DEMO_MICS).map(|m| format!("mic{m}")).collect();
    let wave = WaveformSet::with_ids(mix, sr, ids).expect("valid demo channels");

    let chunks = (DEMO_SECONDS / DEMO_CHUNK).ceil() as usize;
    let frames = (DEMO_CHUNK * DEMO_FRAME_RATE) as usize;
    let (centroids, _) = planted_clusters(&mut rng, turns.len(), 1, DEMO_EMBEDDING_DIM, 0.0);
    let mut posteriors = Vec::with_capacity(DEMO_MICS);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut index = Vec::new();
    for m in 0..DEMO_MICS {
        let mut post = ndarray::Array3::zeros((chunks, DEMO_LOCAL, frames));
        let mut owner = vec![[None; DEMO_LOCAL]; chunks];
        for i in 0..chunks {
            let mut slots: Vec<usize> = (0..DEMO_LOCAL).collect();
            for k in (1..DEMO_LOCAL).rev() {
                slots.swap(k, rng.gen_range(0..=k));
            }
            for (s, spk_turns) in turns.iter().enumerate() {
                let slot = slots[s];
                owner[i][slot] = Some(s);
                for t in 0..frames {
                    let time = i as f64 * DEMO_CHUNK + t as f64 / DEMO_FRAME_RATE;
                    let on = spk_turns.iter().any(|&(a, b)| time >= a && time < b);
                    post[[i, slot, t]] = if on { rng.gen_range(0.75..0.98) } else { rng.gen_range(0.0..0.2) };
                }
            }
            for slot in slots.iter().skip(turns.len()) {
                for t in 0..frames {
                    post[[i, *slot, t]] = rng.gen_range(0.0..0.05);
                }
            }
        }
        let seg = ChunkSegmentation::new(post, DEMO_FRAME_RATE, DEMO_CHUNK).expect("posteriors in range");
        let sub_len = frames / DEMO_SUBCHUNKS;
        for i in 0..chunks {
            for local in 0..DEMO_LOCAL {
                let mask = single_speaker_mask(&seg, i, local, 0.5).expect("indices in range");
                for sub in 0..DEMO_SUBCHUNKS {
                    let speech = mask[sub * sub_len..(sub + 1) * sub_len].iter().filter(|b| **b).count();
                    let Some(s) = owner[i][local] else { continue };
                    if speech == 0 {
                        continue;
                    }
                    let v: Vec<f64> = centroids
                        .row(s)
                        .iter()
                        .map(|c| {
                            let g: f64 = StandardNormal.sample(&mut rng);
                            c + 0.3 * g / (DEMO_EMBEDDING_DIM as f64).sqrt()
                        })
                        .collect();
                    rows.push(v);
                    index.push(EmbeddingIndex {
                        mic: m,
                        chunk: i,
                        subchunk: sub,
                        local_speaker: local,
                        duration: speech as f64 / DEMO_FRAME_RATE,
                    });
                }
            }
        }
        posteriors.push(seg);
    }
    let vectors = ndarray::Array2::from_shape_vec((rows.len(), DEMO_EMBEDDING_DIM), rows.concat())
        .expect("embedding rows have the declared width");
    let embeddings = EmbeddingSet::new(vectors, index).expect("consistent demo embeddings");
    let c50 = (0..DEMO_MICS).map(|m| 12.0 - 1.5 * m as f64).collect();
    DemoSession {
        wave,
        truth: UtteranceBoundaries::new(segments).expect("demo turns are disjoint per speaker"),
        posteriors,
        embeddings,
        c50,
    }
}
