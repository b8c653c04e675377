//! Diarization assembly from chunk-wise local speaker posteriors:
//! single-speaker masks, constrained spectral clustering of local speaker
//! embeddings, stitching into session-level activity, and post-processing
//! into utterance boundaries.

use log::debug;
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spkcount::EmbeddingSet;

/// Local speaker posteriors of one microphone, `[chunk, local speaker, frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSegmentation {
    pub posteriors: Array3<f64>,
    pub frame_rate: f64,
    /// Chunk hop, seconds.
    pub chunk_len: f64,
}

impl ChunkSegmentation {
    pub fn new(posteriors: Array3<f64>, frame_rate: f64, chunk_len: f64) -> Result<Self> {
        if !(frame_rate > 0.0 && chunk_len > 0.0) {
            return Err(Error::invalid("frame rate and chunk length must be positive"));
        }
        if posteriors.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("posteriors must lie in [0, 1]"));
        }
        Ok(Self {
            posteriors,
            frame_rate,
            chunk_len,
        })
    }

    pub fn num_chunks(&self) -> usize {
        self.posteriors.shape()[0]
    }

    pub fn num_local(&self) -> usize {
        self.posteriors.shape()[1]
    }

    pub fn frames_per_chunk(&self) -> usize {
        self.posteriors.shape()[2]
    }

    /// First session frame of chunk `i`.
    pub fn chunk_offset(&self, i: usize) -> usize {
        (i as f64 * self.chunk_len * self.frame_rate).round() as usize
    }

    pub fn total_frames(&self) -> usize {
        match self.num_chunks() {
            0 => 0,
            n => self.chunk_offset(n - 1) + self.frames_per_chunk(),
        }
    }
}

/// Frames where local speaker `s` is the only one at or above `theta`.
pub fn single_speaker_mask(post: &ChunkSegmentation, chunk: usize, speaker: usize, theta: f64) -> Result<Vec<bool>> {
    if chunk >= post.num_chunks() || speaker >= post.num_local() {
        return Err(Error::invalid(format!("no local speaker ({chunk}, {speaker})")));
    }
    let a = post.posteriors.slice(s![chunk, .., ..]);
    Ok((0..post.frames_per_chunk())
        .map(|t| {
            a[[speaker, t]] >= theta && (0..post.num_local()).all(|o| o == speaker || a[[o, t]] < theta)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AffinityKernel {
    /// `exp(-gamma (1 - cos))`.
    CosineExp,
    /// `exp(-gamma ||a - b||^2)` on unit-normalised vectors.
    SquaredEuclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringConfig {
    pub kernel: AffinityKernel,
    pub gamma: f64,
    /// Threshold for the single-speaker embedding masks.
    pub theta_emb: f64,
    pub kmeans_restarts: usize,
    pub kmeans_iterations: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            kernel: AffinityKernel::CosineExp,
            gamma: 1.0,
            theta_emb: 0.5,
            kmeans_restarts: 10,
            kmeans_iterations: 100,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("clustering gamma must be positive"));
        }
        if !(self.theta_emb > 0.0 && self.theta_emb < 1.0) {
            return Err(Error::invalid("theta_emb must lie in (0, 1)"));
        }
        if self.kmeans_restarts == 0 || self.kmeans_iterations == 0 {
            return Err(Error::invalid("k-means restarts and iterations must be at least 1"));
        }
        Ok(())
    }
}

/// Global cluster of each (chunk, local speaker); `None` for local speakers
/// that had no embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub phi: Vec<Vec<Option<usize>>>,
    pub n_clusters: usize,
}

impl ClusterAssignment {
    pub fn from_labels(set: &EmbeddingSet, labels: &[usize], chunks: usize, local: usize, n_clusters: usize) -> Result<Self> {
        let mut phi = vec![vec![None; local]; chunks];
        for (idx, &l) in set.index.iter().zip(labels) {
            if idx.chunk >= chunks || idx.local_speaker >= local {
                return Err(Error::invalid(format!(
                    "embedding for chunk {} speaker {} outside {chunks} x {local} posteriors",
                    idx.chunk, idx.local_speaker
                )));
            }
            phi[idx.chunk][idx.local_speaker] = Some(l);
        }
        Ok(Self { phi, n_clusters })
    }

    /// Applies `perm[old] = new` to every label.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        Self {
            phi: self.phi.iter().map(|row| row.iter().map(|c| c.map(|c| perm[c])).collect()).collect(),
            n_clusters: self.n_clusters,
        }
    }
}

fn unit_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    y
}

fn affinity(x: &Array2<f64>, cfg: &ClusteringConfig) -> DMatrix<f64> {
    let u = unit_rows(x);
    let cos = u.dot(&u.t());
    let n = x.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        let c = cos[[i, j]].clamp(-1.0, 1.0);
        match cfg.kernel {
            AffinityKernel::CosineExp => (-cfg.gamma * (1.0 - c)).exp(),
            AffinityKernel::SquaredEuclidean => (-cfg.gamma * 2.0 * (1.0 - c)).exp(),
        }
    })
}

/// Ng-Jordan-Weiss embedding: top-k eigenvectors of `D^-1/2 A D^-1/2`,
/// rows normalised to unit length.
fn njw_embedding(a: &DMatrix<f64>, k: usize) -> Array2<f64> {
    let n = a.nrows();
    let d: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let s = (d[i] * d[j]).sqrt();
        if s > 0.0 {
            a[(i, j)] / s
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let mut y = Array2::zeros((n, k));
    for (c, &col) in order.iter().take(k).enumerate() {
        // Fix the sign so results do not depend on the eigensolver's choice.
        let v = eig.eigenvectors.column(col);
        let pivot = (0..n).max_by(|&p, &q| v[p].abs().total_cmp(&v[q].abs())).unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            y[[i, c]] = sign * v[i];
        }
    }
    unit_rows(&y)
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means with k-means++ seeding; returns labels and centroids of
/// the restart with the lowest inertia.
pub fn kmeans(x: &Array2<f64>, k: usize, restarts: usize, iterations: usize, seed: u64) -> (Vec<usize>, Array2<f64>) {
    let n = x.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>, Array2<f64>)> = None;
    for _ in 0..restarts.max(1) {
        let mut centroids = Array2::zeros((k, x.ncols()));
        centroids.row_mut(0).assign(&x.row(rng.gen_range(0..n)));
        let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), centroids.row(0))).collect();
        for c in 1..k {
            let total: f64 = d2.iter().sum();
            let pick = if total > 0.0 {
                let mut r = rng.gen::<f64>() * total;
                let mut chosen = n - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if r < w {
                        chosen = i;
                        break;
                    }
                    r -= w;
                }
                chosen
            } else {
                rng.gen_range(0..n)
            };
            centroids.row_mut(c).assign(&x.row(pick));
            for i in 0..n {
                d2[i] = d2[i].min(sq_dist(x.row(i), centroids.row(c)));
            }
        }
        let mut labels = vec![0; n];
        for _ in 0..iterations {
            let mut changed = false;
            for i in 0..n {
                let l = nearest(x.row(i), &centroids);
                if l != labels[i] {
                    labels[i] = l;
                    changed = true;
                }
            }
            let mut sums = Array2::zeros(centroids.dim());
            let mut counts = vec![0usize; k];
            for i in 0..n {
                let mut row = sums.row_mut(labels[i]);
                row += &x.row(i);
                counts[labels[i]] += 1;
            }
            for c in 0..k {
                if counts[c] > 0 {
                    let mean = &sums.row(c) / counts[c] as f64;
                    centroids.row_mut(c).assign(&mean);
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = (0..n).map(|i| sq_dist(x.row(i), centroids.row(labels[i]))).sum();
        if best.as_ref().is_none_or(|b| inertia < b.0 - 1e-12) {
            best = Some((inertia, labels, centroids));
        }
    }
    let (_, labels, centroids) = best.expect("at least one restart");
    (labels, centroids)
}

fn nearest(p: ndarray::ArrayView1<f64>, centroids: &Array2<f64>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(p, row);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// Spectral clustering into exactly `n_clusters` with the cannot-link
/// constraint that local speakers of one chunk land in different clusters.
pub fn constrained_spectral_clustering(
    set: &EmbeddingSet,
    n_clusters: usize,
    cfg: &ClusteringConfig,
    seed: u64,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let n = set.len();
    if n_clusters == 0 {
        return Err(Error::invalid("need at least one cluster"));
    }
    if n < n_clusters {
        return Err(Error::invalid(format!("{n} embeddings cannot form {n_clusters} clusters")));
    }
    if n_clusters == 1 {
        return Ok(vec![0; n]);
    }
    let a = affinity(&set.vectors, cfg);
    let y = njw_embedding(&a, n_clusters);
    let (mut labels, centroids) = kmeans(&y, n_clusters, cfg.kmeans_restarts, cfg.kmeans_iterations, seed);

    let mut chunks: Vec<usize> = set.index.iter().map(|i| i.chunk).collect();
    chunks.sort_unstable();
    chunks.dedup();
    let mut repaired = 0;
    for chunk in chunks {
        let members: Vec<usize> = (0..n).filter(|&e| set.index[e].chunk == chunk).collect();
        if members.len() < 2 {
            continue;
        }
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(members.len() * n_clusters);
        for &e in &members {
            for c in 0..n_clusters {
                pairs.push((sq_dist(y.row(e), centroids.row(c)), e, c));
            }
        }
        pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
        let mut assigned: Vec<Option<usize>> = vec![None; n];
        let mut taken = vec![false; n_clusters];
        for &(_, e, c) in &pairs {
            if assigned[e].is_none() && !taken[c] {
                assigned[e] = Some(c);
                taken[c] = true;
            }
        }
        for &e in &members {
            // More local speakers than clusters: the leftovers keep their nearest centroid.
            let c = assigned[e].unwrap_or(labels[e]);
            if c != labels[e] {
                repaired += 1;
            }
            labels[e] = c;
        }
    }
    if repaired > 0 {
        debug!("cannot-link repair moved {repaired} embeddings");
    }
    Ok(labels)
}

/// Session activity `[cluster, frame]`; a cluster fed by several local
/// speakers on the same frames takes the maximum.
pub fn stitch(post: &ChunkSegmentation, phi: &ClusterAssignment) -> Result<Array2<f64>> {
    if phi.phi.len() != post.num_chunks() || phi.phi.iter().any(|r| r.len() != post.num_local()) {
        return Err(Error::invalid("cluster assignment does not match the posterior geometry"));
    }
    let mut out = Array2::<f64>::zeros((phi.n_clusters, post.total_frames()));
    for (i, row) in phi.phi.iter().enumerate() {
        let off = post.chunk_offset(i);
        for (s, c) in row.iter().enumerate() {
            let Some(c) = *c else { continue };
            if c >= phi.n_clusters {
                return Err(Error::invalid(format!(
                    "cluster {c} out of range for {} speakers",
                    phi.n_clusters
                )));
            }
            for t in 0..post.frames_per_chunk() {
                let v = post.posteriors[[i, s, t]];
                let cell = &mut out[[c, off + t]];
                *cell = cell.max(v);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub speaker: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UtteranceBoundaries {
    /// Sorted by speaker, then start.
    pub segments: Vec<Segment>,
}

impl UtteranceBoundaries {
    pub fn new(mut segments: Vec<Segment>) -> Result<Self> {
        segments.sort_by(|a, b| a.speaker.cmp(&b.speaker).then(a.start.total_cmp(&b.start)));
        for s in &segments {
            if !(s.start < s.end) || !s.start.is_finite() || !s.end.is_finite() {
                return Err(Error::invalid(format!(
                    "segment [{}, {}] of {} is empty or not finite",
                    s.start, s.end, s.speaker
                )));
            }
        }
        for w in segments.windows(2) {
            if w[0].speaker == w[1].speaker && w[1].start < w[0].end {
                return Err(Error::invalid(format!("overlapping segments for {}", w[0].speaker)));
            }
        }
        Ok(Self { segments })
    }

    /// Segments from per-row runs of a binary matrix.
    pub fn from_binary(active: &Array2<bool>, frame_rate: f64, labels: &[String]) -> Self {
        let mut segments = Vec::new();
        for (r, row) in active.rows().into_iter().enumerate() {
            for (a, b) in runs(row.as_slice().unwrap_or(&row.to_vec())) {
                segments.push(Segment {
                    speaker: labels[r].clone(),
                    start: a as f64 / frame_rate,
                    end: b as f64 / frame_rate,
                });
            }
        }
        segments.sort_by(|a, b| a.speaker.cmp(&b.speaker).then(a.start.total_cmp(&b.start)));
        Self { segments }
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.segments.iter().map(|s| s.speaker.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.end).fold(0.0, f64::max)
    }
}

/// Half-open `[start, end)` index runs of `true`.
pub fn runs(x: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &v) in x.iter().enumerate() {
        match (v, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, x.len()));
    }
    out
}

pub fn speaker_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("spk{i}")).collect()
}

/// Running median with nearest-edge padding.
pub fn median_filter(x: &[f64], kernel: usize) -> Result<Vec<f64>> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::invalid(format!("median kernel must be odd, got {kernel}")));
    }
    let n = x.len();
    let half = kernel / 2;
    let mut window = Vec::with_capacity(kernel);
    Ok((0..n)
        .map(|t| {
            window.clear();
            for k in 0..kernel {
                let idx = (t + k).saturating_sub(half).min(n - 1);
                window.push(x[idx]);
            }
            window.sort_by(f64::total_cmp);
            window[half]
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostprocessMethod {
    Eend,
    Tsvad,
}

/// Padding and pause filling only make sense for segments fed to ASR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputProfile {
    ForAsr,
    ForGss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostprocessConfig {
    pub method: PostprocessMethod,
    pub theta_eend: f64,
    pub median_kernel: usize,
    pub theta: f64,
    /// Seconds added on both sides of every segment.
    pub offset: f64,
    /// Same-speaker pauses shorter than this are filled, seconds.
    pub merge: f64,
    pub profile: OutputProfile,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            method: PostprocessMethod::Eend,
            theta_eend: 0.5,
            median_kernel: 25,
            theta: 0.3,
            offset: 0.0,
            merge: 1.5,
            profile: OutputProfile::ForAsr,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.median_kernel.is_multiple_of(2) {
            return Err(Error::invalid("median kernel must be odd"));
        }
        for (name, th) in [("theta_eend", self.theta_eend), ("theta", self.theta)] {
            if !(th > 0.0 && th < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.offset >= 0.0 && self.merge >= 0.0) {
            return Err(Error::invalid("offset and merge must be non-negative"));
        }
        Ok(())
    }

    /// Runs the configured chain; the GSS profile drops padding and merging.
    pub fn apply(&self, activity: &Array2<f64>, frame_rate: f64, labels: &[String]) -> Result<UtteranceBoundaries> {
        self.validate()?;
        match self.method {
            PostprocessMethod::Eend => postprocess_eend(activity, frame_rate, self.theta_eend, self.median_kernel, labels),
            PostprocessMethod::Tsvad => {
                let (offset, merge) = match self.profile {
                    OutputProfile::ForAsr => (self.offset, self.merge),
                    OutputProfile::ForGss => (0.0, 0.0),
                };
                postprocess_tsvad(activity, frame_rate, self.theta, offset, merge, labels)
            }
        }
    }
}

fn check_labels(activity: &Array2<f64>, labels: &[String]) -> Result<()> {
    if labels.len() != activity.nrows() {
        return Err(Error::invalid(format!(
            "{} labels for {} activity rows",
            labels.len(),
            activity.nrows()
        )));
    }
    Ok(())
}

/// Median smoothing, then `a >= theta`.
pub fn postprocess_eend(
    activity: &Array2<f64>,
    frame_rate: f64,
    theta: f64,
    kernel: usize,
    labels: &[String],
) -> Result<UtteranceBoundaries> {
    check_labels(activity, labels)?;
    let mut active = Array2::from_elem(activity.dim(), false);
    if activity.ncols() > 0 {
        for (r, row) in activity.rows().into_iter().enumerate() {
            let smooth = median_filter(&row.to_vec(), kernel)?;
            for (t, v) in smooth.into_iter().enumerate() {
                active[[r, t]] = v >= theta;
            }
        }
    } else if kernel.is_multiple_of(2) {
        return Err(Error::invalid(format!("median kernel must be odd, got {kernel}")));
    }
    Ok(UtteranceBoundaries::from_binary(&active, frame_rate, labels))
}

/// Threshold at `theta`, pad every segment by `offset` on both sides
/// (clamped to the recording), then fill same-speaker gaps shorter than
/// `merge`. All arithmetic is on frames.
pub fn postprocess_tsvad(
    activity: &Array2<f64>,
    frame_rate: f64,
    theta: f64,
    offset: f64,
    merge: f64,
    labels: &[String],
) -> Result<UtteranceBoundaries> {
    check_labels(activity, labels)?;
    let active = tsvad_frames(activity, frame_rate, theta, offset, merge);
    Ok(UtteranceBoundaries::from_binary(&active, frame_rate, labels))
}

/// Frame-level result of [`postprocess_tsvad`].
pub fn tsvad_frames(activity: &Array2<f64>, frame_rate: f64, theta: f64, offset: f64, merge: f64) -> Array2<bool> {
    let (rows, n) = activity.dim();
    let pad = (offset * frame_rate).round() as usize;
    let merge_frames = merge * frame_rate;
    let mut out = Array2::from_elem((rows, n), false);
    for r in 0..rows {
        let bin: Vec<bool> = activity.row(r).iter().map(|&v| v >= theta).collect();
        let mut segs: Vec<(usize, usize)> = runs(&bin)
            .into_iter()
            .map(|(a, b)| (a.saturating_sub(pad), (b + pad).min(n)))
            .collect();
        segs.sort_unstable();
        let mut merged: Vec<(usize, usize)> = Vec::with_capacity(segs.len());
        for (a, b) in segs {
            match merged.last_mut() {
                Some(last) if a <= last.1 || ((a - last.1) as f64) < merge_frames => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        for (a, b) in merged {
            for t in a..b {
                out[[r, t]] = true;
            }
        }
    }
    out
}

/// Everything the per-microphone assembly produces.
#[derive(Debug, Clone, PartialEq)]
pub struct MicAssembly {
    pub assignment: ClusterAssignment,
    pub activity: Array2<f64>,
    pub boundaries: UtteranceBoundaries,
}

/// Clustering, stitching and post-processing for one microphone.
pub fn assemble_mic(
    post: &ChunkSegmentation,
    embeddings: &EmbeddingSet,
    n_speakers: usize,
    clustering: &ClusteringConfig,
    postprocess: &PostprocessConfig,
    seed: u64,
) -> Result<MicAssembly> {
    let k = n_speakers.min(embeddings.len()).max(1);
    if k < n_speakers {
        debug!("only {} embeddings, clustering into {k} instead of {n_speakers}", embeddings.len());
    }
    let labels = if embeddings.is_empty() {
        Vec::new()
    } else {
        constrained_spectral_clustering(embeddings, k, clustering, seed)?
    };
    let mut assignment = ClusterAssignment::from_labels(embeddings, &labels, post.num_chunks(), post.num_local(), k)?;
    assignment.n_clusters = n_speakers.max(1);
    let activity = stitch(post, &assignment)?;
    let boundaries = postprocess.apply(&activity, post.frame_rate, &speaker_labels(assignment.n_clusters))?;
    Ok(MicAssembly {
        assignment,
        activity,
        boundaries,
    })
}
