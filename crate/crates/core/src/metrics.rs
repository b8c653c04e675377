//! Diarization error rate and speaker counting scores.

use std::fmt;

use ndarray::Array2;

use crate::diarize::UtteranceBoundaries;
use crate::error::{Error, Result};
use crate::fusion::{horizon, max_weight_matching, to_frame, FrameGrid};

/// Scoring frame length, seconds.
pub const SCORING_RESOLUTION: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerReport {
    pub miss: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub der: f64,
    pub collar: f64,
    /// Scored reference speech, seconds.
    pub reference_speech: f64,
}

impl fmt::Display for DerReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "der {:.6}", self.der)?;
        writeln!(f, "miss {:.6}", self.miss)?;
        writeln!(f, "false_alarm {:.6}", self.false_alarm)?;
        writeln!(f, "confusion {:.6}", self.confusion)?;
        writeln!(f, "collar {:.3}", self.collar)?;
        writeln!(f, "reference_speech {:.3}", self.reference_speech)
    }
}

/// Frames excluded by a collar around every reference segment boundary.
fn collar_mask(reference: &UtteranceBoundaries, collar: f64, frames: usize) -> Vec<bool> {
    let mut skip = vec![false; frames];
    if collar <= 0.0 {
        return skip;
    }
    for s in &reference.segments {
        for edge in [s.start, s.end] {
            let a = to_frame(edge - collar, SCORING_RESOLUTION);
            let b = to_frame(edge + collar, SCORING_RESOLUTION).min(frames);
            for t in a.min(frames)..b {
                skip[t] = true;
            }
        }
    }
    skip
}

/// Error components for a fixed reference-to-hypothesis speaker map.
fn score_with_map(
    r: &Array2<bool>,
    h: &Array2<bool>,
    map: &[Option<usize>],
    skip: &[bool],
) -> (u64, u64, u64, u64) {
    let (mut total, mut miss, mut fa, mut conf) = (0u64, 0u64, 0u64, 0u64);
    for t in 0..r.ncols() {
        if skip[t] {
            continue;
        }
        let nr = r.column(t).iter().filter(|v| **v).count() as u64;
        let nh = h.column(t).iter().filter(|v| **v).count() as u64;
        let correct = map
            .iter()
            .enumerate()
            .filter(|(i, m)| r[[*i, t]] && m.is_some_and(|j| h[[j, t]]))
            .count() as u64;
        total += nr;
        miss += nr.saturating_sub(nh);
        fa += nh.saturating_sub(nr);
        conf += nr.min(nh) - correct;
    }
    (total, miss, fa, conf)
}

/// Rasterises both sides at 1 ms and returns grids plus the collar mask.
fn prepare(reference: &UtteranceBoundaries, hypothesis: &UtteranceBoundaries, collar: f64) -> Result<(FrameGrid, FrameGrid, Vec<bool>)> {
    if !(collar >= 0.0) {
        return Err(Error::invalid("collar must be non-negative"));
    }
    if reference.segments.is_empty() {
        return Err(Error::invalid("reference has no speech"));
    }
    let frames = horizon(&[reference, hypothesis], SCORING_RESOLUTION);
    let r = FrameGrid::from_boundaries(reference, SCORING_RESOLUTION, frames)?;
    let h = FrameGrid::from_boundaries(hypothesis, SCORING_RESOLUTION, frames)?;
    Ok((r, h, collar_mask(reference, collar, frames)))
}

/// Optimal reference-to-hypothesis mapping on scored frames.
pub fn speaker_mapping(reference: &UtteranceBoundaries, hypothesis: &UtteranceBoundaries, collar: f64) -> Result<Vec<(String, String)>> {
    let (r, h, skip) = prepare(reference, hypothesis, collar)?;
    let map = optimal_map(&r.active, &h.active, &skip);
    Ok(map
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| (r.labels[i].clone(), h.labels[j].clone())))
        .collect())
}

fn optimal_map(r: &Array2<bool>, h: &Array2<bool>, skip: &[bool]) -> Vec<Option<usize>> {
    let weights: Vec<Vec<i64>> = r
        .rows()
        .into_iter()
        .map(|rr| {
            h.rows()
                .into_iter()
                .map(|hh| {
                    rr.iter()
                        .zip(hh)
                        .zip(skip)
                        .filter(|((a, b), s)| **a && **b && !**s)
                        .count() as i64
                })
                .collect()
        })
        .collect();
    max_weight_matching(&weights)
}

/// Overlap-aware DER with the md-eval style collar: frames within `collar`
/// seconds of any reference boundary are not scored.
pub fn der(reference: &UtteranceBoundaries, hypothesis: &UtteranceBoundaries, collar: f64) -> Result<DerReport> {
    let (r, h, skip) = prepare(reference, hypothesis, collar)?;
    let map = optimal_map(&r.active, &h.active, &skip);
    let (total, miss, fa, conf) = score_with_map(&r.active, &h.active, &map, &skip);
    if total == 0 {
        return Err(Error::invalid("no reference speech left after the collar"));
    }
    let t = total as f64;
    let (miss, false_alarm, confusion) = (miss as f64 / t, fa as f64 / t, conf as f64 / t);
    Ok(DerReport {
        miss,
        false_alarm,
        confusion,
        der: miss + false_alarm + confusion,
        collar,
        reference_speech: t * SCORING_RESOLUTION,
    })
}

/// Miss, false alarm and confusion frame counts for an explicit speaker map
/// (`(reference label, hypothesis label)` pairs), without collar.
pub fn error_frames_with_map(
    reference: &UtteranceBoundaries,
    hypothesis: &UtteranceBoundaries,
    pairs: &[(String, String)],
) -> Result<(u64, u64, u64)> {
    let (r, h, skip) = prepare(reference, hypothesis, 0.0)?;
    let map: Vec<Option<usize>> = r
        .labels
        .iter()
        .map(|l| {
            pairs
                .iter()
                .find(|(a, _)| a == l)
                .and_then(|(_, b)| h.labels.iter().position(|x| x == b))
        })
        .collect();
    let (_, miss, fa, conf) = score_with_map(&r.active, &h.active, &map, &skip);
    Ok((miss, fa, conf))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountReport {
    /// Percent of sessions with the exact count.
    pub sca: f64,
    /// Mean absolute count error.
    pub sce: f64,
}

impl fmt::Display for CountReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sca {:.2}", self.sca)?;
        writeln!(f, "sce {:.4}", self.sce)
    }
}

pub fn count_metrics(reference: &[usize], hypothesis: &[usize]) -> Result<CountReport> {
    if reference.len() != hypothesis.len() {
        return Err(Error::invalid(format!(
            "{} reference counts but {} hypotheses",
            reference.len(),
            hypothesis.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::invalid("no sessions to score"));
    }
    let n = reference.len() as f64;
    let exact = reference.iter().zip(hypothesis).filter(|(r, h)| r == h).count() as f64;
    let abs: f64 = reference.iter().zip(hypothesis).map(|(&r, &h)| r.abs_diff(h) as f64).sum();
    Ok(CountReport {
        sca: 100.0 * exact / n,
        sce: abs / n,
    })
}
