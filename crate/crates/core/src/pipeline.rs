//! End-to-end flows: utterance-wise enhancement, chunk-wise enhancement for
//! diarization, and diarization assembly across microphones.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{load_channels, write_wav, Manifest, SampleEncoding, WaveformSet};
use crate::beamform::{
    apply_beamformer, ban_postfilter, compute_beamformer, db_to_amplitude, estimate_covariances, select_reference_mic,
    tf_mask_postfilter, BeamformerKind,
};
use crate::diarize::{
    assemble_mic, ChunkSegmentation, ClusteringConfig, MicAssembly, PostprocessConfig, UtteranceBoundaries,
};
use crate::error::{Error, Result};
use crate::formats;
use crate::fusion::{fuse, DEFAULT_RESOLUTION};
use crate::gss::{expand_segment, gss_estimate_masks_with_report, ActivityMatrix, GssConfig, GssReport};
use crate::micselect::{envelope_variance, select_mics_ev_c50_branch, select_topk_ev, MicScores, ScoreSource, SelectionBranch, SelectionConfig, SelectionMethod, MIN_EV_DURATION};
use crate::spkcount::{count_speakers, CountEstimate, CountingConfig, EmbeddingIndex, EmbeddingSet};
use crate::stft::{istft, stft, Spectrogram, StftConfig};
use crate::wpe::{wpe_dereverberate, WpeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamformConfig {
    pub kind: BeamformerKind,
    pub gamma: f64,
    pub ban: bool,
    /// Floor of the mask post-filter, dB. 0 disables masking.
    pub delta_db: f64,
}

impl Default for BeamformConfig {
    fn default() -> Self {
        Self {
            kind: BeamformerKind::SpMwf,
            gamma: 0.0,
            ban: false,
            delta_db: -9.0,
        }
    }
}

impl BeamformConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("beamformer gamma must be >= 0"));
        }
        if !(self.delta_db <= 0.0) {
            return Err(Error::invalid("mask floor must be <= 0 dB"));
        }
        Ok(())
    }
}

/// Every tunable of the pipeline, loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Context added on both sides of an utterance before WPE and GSS, seconds.
    pub context: f64,
    /// Chunk length of the diarization posteriors, seconds.
    pub chunk: f64,
    /// Rate at which segment boundaries are rasterised for GSS guidance.
    pub guidance_frame_rate: f64,
    pub dereverberate: bool,
    pub stft: StftConfig,
    pub wpe: WpeConfig,
    pub gss: GssConfig,
    pub beamformer: BeamformConfig,
    pub selection: SelectionConfig,
    pub counting: CountingConfig,
    pub clustering: ClusteringConfig,
    pub postprocessing: PostprocessConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            context: 15.0,
            chunk: 30.0,
            guidance_frame_rate: 100.0,
            dereverberate: true,
            stft: StftConfig::default(),
            wpe: WpeConfig::default(),
            gss: GssConfig::default(),
            beamformer: BeamformConfig::default(),
            selection: SelectionConfig::default(),
            counting: CountingConfig::default(),
            clustering: ClusteringConfig::default(),
            postprocessing: PostprocessConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.context >= 0.0 && self.context.is_finite()) {
            return Err(Error::invalid("context must be >= 0"));
        }
        if !(self.chunk > 0.0 && self.chunk.is_finite()) {
            return Err(Error::invalid("chunk length must be positive"));
        }
        if !(self.guidance_frame_rate > 0.0) {
            return Err(Error::invalid("guidance frame rate must be positive"));
        }
        self.stft.validate()?;
        self.wpe.validate()?;
        self.beamformer.validate()?;
        self.selection.validate()?;
        self.counting.validate()?;
        self.clustering.validate()?;
        self.postprocessing.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Result of enhancing one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedUtterance {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    /// Session channel indices that took part.
    pub mics: Vec<usize>,
    pub branch: Option<SelectionBranch>,
    /// Session channel index used as beamformer reference.
    pub reference: usize,
    pub gss: Option<GssReport>,
}

/// Mic subset for one utterance.
pub fn select_for_segment(
    session: &WaveformSet,
    start: f64,
    end: f64,
    window: (f64, f64),
    c50: Option<&[f64]>,
    cfg: &SelectionConfig,
) -> Result<(Vec<usize>, Option<SelectionBranch>)> {
    let m = session.num_channels();
    if m == 1 || cfg.method == SelectionMethod::All {
        return Ok(((0..m).collect(), None));
    }
    // EV on the segment itself unless it is too short to score.
    let (a, b) = if end - start >= MIN_EV_DURATION { (start, end) } else { window };
    let all: Vec<usize> = (0..m).collect();
    let ev = envelope_variance(&session.slice(&all, session.sample_at(a), session.sample_at(b))?)?;
    match cfg.method {
        SelectionMethod::EvTopk => {
            let scores = MicScores::new(ev, vec![0.0; m], ScoreSource::Computed)?;
            Ok((select_topk_ev(&scores, cfg.baseline_ratio)?, None))
        }
        SelectionMethod::EvC50 => {
            let c50 = c50.ok_or_else(|| Error::invalid("ev-c50 selection needs C50 scores (c50_file)"))?;
            let scores = MicScores::new(ev, c50.to_vec(), ScoreSource::File)?;
            let (sel, branch) = select_mics_ev_c50_branch(&scores, cfg)?;
            Ok((sel, Some(branch)))
        }
        SelectionMethod::All => unreachable!(),
    }
}

/// Speakers active inside `[a, b]`, rasterised relative to `a`.
fn guidance(boundaries: &UtteranceBoundaries, a: f64, b: f64, frame_rate: f64, must_include: &str) -> Result<(Vec<String>, ActivityMatrix)> {
    let mut speakers: Vec<String> = boundaries
        .segments
        .iter()
        .filter(|s| s.end > a && s.start < b)
        .map(|s| s.speaker.clone())
        .collect();
    speakers.push(must_include.to_string());
    speakers.sort();
    speakers.dedup();
    let frames = (((b - a) * frame_rate).ceil() as usize).max(1);
    let mut values = Array2::zeros((speakers.len(), frames));
    for s in &boundaries.segments {
        let Ok(row) = speakers.binary_search(&s.speaker) else { continue };
        let lo = ((s.start - a) * frame_rate).floor().max(0.0) as usize;
        let hi = (((s.end - a) * frame_rate).ceil().max(0.0) as usize).min(frames);
        for t in lo..hi {
            values[[row, t]] = 1.0;
        }
    }
    Ok((speakers, ActivityMatrix::new(values, frame_rate)?))
}

fn frames_within(spec: &Spectrogram, a: f64, b: f64) -> std::ops::Range<usize> {
    let centers: Vec<usize> = (0..spec.num_frames())
        .filter(|&t| {
            let c = spec.config.frame_center(t, spec.sample_rate);
            c >= a && c < b
        })
        .collect();
    match (centers.first(), centers.last()) {
        (Some(&lo), Some(&hi)) => lo..hi + 1,
        _ => 0..spec.num_frames(),
    }
}

fn maybe_wpe(spec: Spectrogram, cfg: &PipelineConfig) -> Result<Spectrogram> {
    if !cfg.dereverberate {
        return Ok(spec);
    }
    if spec.num_frames() <= cfg.wpe.delay + cfg.wpe.taps {
        debug!("segment too short for WPE ({} frames), skipping", spec.num_frames());
        return Ok(spec);
    }
    wpe_dereverberate(&spec, &cfg.wpe)
}

/// Mic selection, context expansion, WPE, GSS, beamforming, reference
/// selection and post-filtering for the utterance `[start, end]` of `speaker`.
/// The context is cut off again in the output.
pub fn enhance_segment(
    session: &WaveformSet,
    boundaries: &UtteranceBoundaries,
    speaker: &str,
    start: f64,
    end: f64,
    c50: Option<&[f64]>,
    cfg: &PipelineConfig,
) -> Result<EnhancedUtterance> {
    cfg.validate()?;
    let window = expand_segment(start, end, cfg.context, session.duration())?;
    let (mics, branch) = select_for_segment(session, start, end, window, c50, &cfg.selection)?;
    let (s0, s1) = (session.sample_at(window.0), session.sample_at(window.1));
    let (t0, t1) = (session.sample_at(start) - s0, session.sample_at(end) - s0);
    let audio = session.slice(&mics, s0, s1)?;
    if mics.len() == 1 {
        return Ok(EnhancedUtterance {
            samples: audio.channels[0][t0..t1].to_vec(),
            sample_rate: session.sample_rate,
            reference: mics[0],
            mics,
            branch,
            gss: None,
        });
    }

    let spec = maybe_wpe(stft(&audio, &cfg.stft)?, cfg)?;
    let (speakers, act) = guidance(boundaries, window.0, window.1, cfg.guidance_frame_rate, speaker)?;
    let target = speakers.binary_search(&speaker.to_string()).expect("target included");
    let act = act.align_to(&spec, 0.0);
    let (masks, report) = gss_estimate_masks_with_report(&spec, &act, &cfg.gss)?;

    let frames = frames_within(&spec, start - window.0, end - window.0);
    let cov = estimate_covariances(&spec, &masks, target, frames)?;
    let bank = compute_beamformer(&cov, cfg.beamformer.kind, cfg.beamformer.gamma)?;
    let reference = select_reference_mic(&bank, &cov)?.index;
    let mut out = apply_beamformer(&spec, &bank, reference)?;
    if cfg.beamformer.ban {
        let filters: Vec<_> = (0..bank.num_bins()).map(|f| bank.column(f, reference)).collect();
        out = ban_postfilter(&out, &filters, &cov.noise)?.0;
    }
    let delta = db_to_amplitude(cfg.beamformer.delta_db);
    if delta < 1.0 {
        out = tf_mask_postfilter(&out, masks.class(target)?, delta)?;
    }
    let wave = istft(&out)?;
    let samples = wave.channels[0][t0.min(wave.len())..t1.min(wave.len())].to_vec();
    Ok(EnhancedUtterance {
        samples,
        sample_rate: session.sample_rate,
        mics: mics.clone(),
        branch,
        reference: mics[reference],
        gss: Some(report),
    })
}

/// Enhances the `index`-th segment (in start order) of `speaker`.
pub fn enhance_utterance(
    session: &WaveformSet,
    boundaries: &UtteranceBoundaries,
    speaker: &str,
    index: usize,
    c50: Option<&[f64]>,
    cfg: &PipelineConfig,
) -> Result<EnhancedUtterance> {
    let seg = boundaries
        .segments
        .iter()
        .filter(|s| s.speaker == speaker)
        .nth(index)
        .ok_or_else(|| Error::invalid(format!("speaker '{speaker}' has no segment {index}")))?;
    enhance_segment(session, boundaries, speaker, seg.start, seg.end, c50, cfg)
}

/// Per microphone, per chunk, per local speaker: the beamformed chunk
/// guided by that microphone's posteriors. No mask post-filter and no
/// context in this path; inactive local speakers yield silence.
pub fn enhance_chunkwise(
    session: &WaveformSet,
    posteriors: &[ChunkSegmentation],
    cfg: &PipelineConfig,
) -> Result<Vec<Vec<Vec<Vec<f64>>>>> {
    cfg.validate()?;
    let m = session.num_channels();
    if posteriors.len() != m {
        return Err(Error::invalid(format!(
            "activities for {} mics but the session has {m} channels",
            posteriors.len()
        )));
    }
    if m < 2 {
        return Err(Error::invalid("chunk-wise enhancement needs at least two channels"));
    }
    let chunks = posteriors[0].num_chunks();
    if posteriors.iter().any(|p| p.num_chunks() != chunks) {
        return Err(Error::invalid("microphones disagree on the number of chunks"));
    }
    let all: Vec<usize> = (0..m).collect();
    let theta = cfg.postprocessing.theta_eend;
    let mut out = vec![Vec::with_capacity(chunks); m];
    for i in 0..chunks {
        let p0 = &posteriors[0];
        let start = p0.chunk_offset(i) as f64 / p0.frame_rate;
        let end = (start + p0.frames_per_chunk() as f64 / p0.frame_rate).min(session.duration());
        let (s0, s1) = (session.sample_at(start), session.sample_at(end));
        if s1 <= s0 {
            return Err(Error::invalid(format!("chunk {i} starts after the end of the session")));
        }
        let spec = maybe_wpe(stft(&session.slice(&all, s0, s1)?, &cfg.stft)?, cfg)?;
        let per_mic: Vec<Vec<Vec<f64>>> = posteriors
            .par_iter()
            .map(|post| {
                let values = post.posteriors.index_axis(ndarray::Axis(0), i).to_owned();
                let act = ActivityMatrix::new(values, post.frame_rate)?.binarize(theta).align_to(&spec, 0.0);
                let (masks, _) = gss_estimate_masks_with_report(&spec, &act, &cfg.gss)?;
                (0..post.num_local())
                    .map(|s| {
                        if act.values.row(s).iter().all(|&v| v == 0.0) {
                            return Ok(vec![0.0; s1 - s0]);
                        }
                        let cov = estimate_covariances(&spec, &masks, s, 0..spec.num_frames())?;
                        let bank = compute_beamformer(&cov, cfg.beamformer.kind, cfg.beamformer.gamma)?;
                        let reference = select_reference_mic(&bank, &cov)?.index;
                        let mut y = apply_beamformer(&spec, &bank, reference)?;
                        if cfg.beamformer.ban {
                            let filters: Vec<_> = (0..bank.num_bins()).map(|f| bank.column(f, reference)).collect();
                            y = ban_postfilter(&y, &filters, &cov.noise)?.0;
                        }
                        let mut w = istft(&y)?.channels.swap_remove(0);
                        w.resize(s1 - s0, 0.0);
                        Ok(w)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (mic, outputs) in per_mic.into_iter().enumerate() {
            out[mic].push(outputs);
        }
    }
    Ok(out)
}

/// Outputs of the diarization assembly for one session.
#[derive(Debug, Clone)]
pub struct AssemblyOutput {
    pub count: CountEstimate,
    pub per_mic: Vec<MicAssembly>,
    pub fused: UtteranceBoundaries,
}

/// Chunk-level embedding of each local speaker: mean of its unit-normalised
/// subchunk embeddings that carry any speech.
pub fn chunk_embeddings(set: &EmbeddingSet, mic: usize) -> Result<EmbeddingSet> {
    let mut groups: BTreeMap<(usize, usize), (Vec<f64>, f64)> = BTreeMap::new();
    for (row, idx) in set.vectors.rows().into_iter().zip(&set.index) {
        if idx.mic != mic || idx.duration <= 0.0 {
            continue;
        }
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            continue;
        }
        let entry = groups
            .entry((idx.chunk, idx.local_speaker))
            .or_insert_with(|| (vec![0.0; set.dim()], 0.0));
        entry.0.iter_mut().zip(row).for_each(|(a, v)| *a += v / norm);
        entry.1 += idx.duration;
    }
    let n = groups.len();
    let mut vectors = Array2::zeros((n, set.dim()));
    let mut index = Vec::with_capacity(n);
    for (r, ((chunk, local), (v, duration))) in groups.into_iter().enumerate() {
        vectors.row_mut(r).assign(&ndarray::Array1::from(v));
        index.push(EmbeddingIndex {
            mic,
            chunk,
            subchunk: 0,
            local_speaker: local,
            duration,
        });
    }
    EmbeddingSet::new(vectors, index)
}

fn check_geometry(session: &WaveformSet, posteriors: &[ChunkSegmentation], embeddings: &EmbeddingSet) -> Result<()> {
    if posteriors.len() != session.num_channels() {
        return Err(Error::invalid(format!(
            "inconsistent geometry: posteriors for {} mics, session has {} channels",
            posteriors.len(),
            session.num_channels()
        )));
    }
    for idx in &embeddings.index {
        let Some(p) = posteriors.get(idx.mic) else {
            return Err(Error::invalid(format!("inconsistent geometry: embedding for unknown mic {}", idx.mic)));
        };
        if idx.chunk >= p.num_chunks() || idx.local_speaker >= p.num_local() {
            return Err(Error::invalid(format!(
                "inconsistent geometry: embedding for mic {} chunk {} speaker {} but posteriors have {} chunks x {} speakers",
                idx.mic,
                idx.chunk,
                idx.local_speaker,
                p.num_chunks(),
                p.num_local()
            )));
        }
    }
    Ok(())
}

/// Speaker counting, per-mic clustering, stitching and post-processing, then
/// fusion across microphones.
pub fn run_diarization_assembly(
    session: &WaveformSet,
    posteriors: &[ChunkSegmentation],
    embeddings: &EmbeddingSet,
    cfg: &PipelineConfig,
) -> Result<AssemblyOutput> {
    cfg.validate()?;
    check_geometry(session, posteriors, embeddings)?;
    let count = count_speakers(session, embeddings, &cfg.counting)?;
    info!("estimated {} speakers", count.session);
    let per_mic = posteriors
        .par_iter()
        .enumerate()
        .map(|(m, post)| {
            let emb = chunk_embeddings(embeddings, m)?;
            assemble_mic(post, &emb, count.session, &cfg.clustering, &cfg.postprocessing, cfg.seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let hyps: Vec<UtteranceBoundaries> = per_mic.iter().map(|a| a.boundaries.clone()).collect();
    let fused = fuse(&hyps, DEFAULT_RESOLUTION)?;
    Ok(AssemblyOutput { count, per_mic, fused })
}

/// Everything a session manifest points to, loaded.
pub struct SessionData {
    pub manifest: Manifest,
    pub wave: WaveformSet,
}

impl SessionData {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let wave = load_channels(&manifest)?;
        Ok(Self { manifest, wave })
    }

    pub fn c50(&self) -> Result<Option<Vec<f64>>> {
        self.manifest
            .c50_file
            .as_ref()
            .map(|p| formats::read_c50(p, &self.wave.channel_ids))
            .transpose()
    }

    fn dir(&self, which: Option<&PathBuf>, key: &str) -> Result<PathBuf> {
        which
            .cloned()
            .ok_or_else(|| Error::invalid(format!("manifest has no {key}")))
    }

    /// Chunk posteriors `act_m{m}_c{i}.dmx` of every microphone.
    pub fn posteriors(&self, chunk_len: f64) -> Result<Vec<ChunkSegmentation>> {
        let dir = self.dir(self.manifest.activities_dir.as_ref(), "activities_dir")?;
        let frame_rate = self
            .manifest
            .activity_frame_rate
            .ok_or_else(|| Error::invalid("manifest has no activity_frame_rate"))?;
        let mut out = Vec::with_capacity(self.wave.num_channels());
        for m in 0..self.wave.num_channels() {
            let mut chunks = Vec::new();
            loop {
                let path = formats::activity_file(&dir, m, chunks.len());
                if !path.exists() {
                    break;
                }
                chunks.push(formats::read_dmx(&path)?);
            }
            if chunks.is_empty() {
                return Err(Error::MissingFile(formats::activity_file(&dir, m, 0)));
            }
            let (s, t) = chunks[0].dim();
            if chunks.iter().any(|c| c.dim() != (s, t)) {
                return Err(Error::invalid(format!("mic {m}: chunk posteriors differ in shape")));
            }
            let mut post = ndarray::Array3::zeros((chunks.len(), s, t));
            for (i, c) in chunks.iter().enumerate() {
                post.index_axis_mut(ndarray::Axis(0), i).assign(&c.mapv(|v| v.clamp(0.0, 1.0)));
            }
            out.push(ChunkSegmentation::new(post, frame_rate, chunk_len)?);
        }
        let n = out[0].num_chunks();
        if out.iter().any(|p| p.num_chunks() != n) {
            warn!("microphones have different numbers of posterior chunks");
        }
        Ok(out)
    }

    /// Embeddings `emb_m{m}.dmx` of every microphone, concatenated.
    pub fn embeddings(&self) -> Result<EmbeddingSet> {
        let dir = self.dir(self.manifest.embeddings_dir.as_ref(), "embeddings_dir")?;
        let sets = (0..self.wave.num_channels())
            .map(|m| formats::read_embeddings(&formats::embedding_file(&dir, m)))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingSet::concat(&sets)
    }
}

/// Writes a session produced by [`crate::synth::demo_session`] to `dir`:
/// channel WAVs, manifest, C50 scores, posteriors, embeddings, reference RTTM
/// and a matching pipeline config. Returns the manifest path.
pub fn write_demo_session(dir: &Path, seed: u64) -> Result<PathBuf> {
    let demo = crate::synth::demo_session(seed);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let audio = dir.join("audio");
    std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    let mut channels = Vec::new();
    for (m, ch) in demo.wave.channels.iter().enumerate() {
        let name = format!("audio/{}.wav", demo.wave.channel_ids[m]);
        write_wav(&dir.join(&name), std::slice::from_ref(ch), demo.wave.sample_rate, SampleEncoding::Pcm16)?;
        channels.push(PathBuf::from(name));
    }
    for (m, post) in demo.posteriors.iter().enumerate() {
        for i in 0..post.num_chunks() {
            let a = post.posteriors.index_axis(ndarray::Axis(0), i).to_owned();
            formats::write_dmx(&formats::activity_file(&dir.join("activities"), m, i), &a)?;
        }
    }
    for m in 0..demo.wave.num_channels() {
        let set = demo.embeddings.select(|i| i.mic == m);
        formats::write_embeddings(&formats::embedding_file(&dir.join("embeddings"), m), &set)?;
    }
    formats::write_bytes(&dir.join("c50.txt"), formats::format_c50(&demo.wave.channel_ids, &demo.c50).as_bytes())?;
    formats::write_rttm(&dir.join("reference.rttm"), "demo", &demo.truth)?;
    formats::write_bytes(&dir.join("counts.ref"), format!("demo {}\n", demo.truth.speakers().len()).as_bytes())?;
    let manifest = Manifest {
        sample_rate: demo.wave.sample_rate,
        channels,
        session: Some("demo".into()),
        activities_dir: Some("activities".into()),
        embeddings_dir: Some("embeddings".into()),
        c50_file: Some("c50.txt".into()),
        activity_frame_rate: Some(demo.posteriors[0].frame_rate),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::format("manifest", e.to_string()))?;
    let path = dir.join("session.toml");
    formats::write_bytes(&path, text.as_bytes())?;
    formats::write_bytes(&dir.join("pipeline.toml"), demo_config().to_toml().as_bytes())?;
    Ok(path)
}

/// Settings sized for the demo session: 10 s chunks and a short context.
pub fn demo_config() -> PipelineConfig {
    let mut cfg = PipelineConfig {
        context: 2.0,
        chunk: crate::synth::DEMO_CHUNK,
        ..Default::default()
    };
    cfg.counting.subchunk = crate::synth::DEMO_CHUNK / crate::synth::DEMO_SUBCHUNKS as f64;
    cfg.counting.t_corr = 30.0;
    cfg.gss.iterations = 10;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_is_a_fixed_point() {
        let mut cfg = PipelineConfig::default();
        cfg.beamformer.kind = BeamformerKind::MvdrSouden;
        cfg.postprocessing.offset = 0.1;
        let text = cfg.to_toml();
        let back = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
        assert!(PipelineConfig::from_toml("context = -1.0").is_err());
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn guidance_covers_overlapping_speakers() {
        let b = UtteranceBoundaries::new(vec![
            crate::diarize::Segment { speaker: "a".into(), start: 0.0, end: 1.0 },
            crate::diarize::Segment { speaker: "b".into(), start: 5.0, end: 6.0 },
        ])
        .unwrap();
        let (spk, act) = guidance(&b, 0.5, 2.0, 100.0, "c").unwrap();
        assert_eq!(spk, vec!["a", "c"]);
        assert_eq!(act.num_frames(), 150);
        assert_eq!(act.values.row(0).iter().filter(|v| **v == 1.0).count(), 50);
    }
}
