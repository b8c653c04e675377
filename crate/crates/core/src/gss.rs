//! Guided source separation: activity-constrained cACGMM mask estimation.
//!
//! Observations are unit-normalised STFT vectors `z(f,t)`. Each class (every
//! guided source plus an always-present noise class) is an angular central
//! Gaussian with shape matrix `B_c(f)`. The prior of class `c` at frame `t` is
//! `pi_c(f) g_c(t) / sum_c' pi_c'(f) g_c'(t)` where `g` is the guiding activity,
//! so a source is impossible wherever its activity is zero.
//!
//! The prior weights are updated with a minorise-maximise step and the shape
//! matrices with the usual fixed-point update, which keeps the negative
//! log-likelihood non-increasing from one iteration to the next.

use log::debug;
use ndarray::{s, Array2, Array3, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, CVec};
use crate::stft::Spectrogram;

/// Per-source activity over frames, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityMatrix {
    /// `[source, frame]`.
    pub values: Array2<f64>,
    pub frame_rate: f64,
    pub binary: bool,
}

impl ActivityMatrix {
    pub fn new(values: Array2<f64>, frame_rate: f64) -> Result<Self> {
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::invalid("activity frame rate must be positive"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("activity values must lie in [0, 1]"));
        }
        let binary = values.iter().all(|&v| v == 0.0 || v == 1.0);
        Ok(Self {
            values,
            frame_rate,
            binary,
        })
    }

    pub fn num_sources(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.num_frames() as f64 / self.frame_rate
    }

    /// `1(a >= threshold)`.
    pub fn binarize(&self, threshold: f64) -> Self {
        Self {
            values: self.values.mapv(|v| if v >= threshold { 1.0 } else { 0.0 }),
            frame_rate: self.frame_rate,
            binary: true,
        }
    }

    /// Nearest-frame resampling onto the frames of `spec`, whose first sample
    /// sits at `offset` seconds on this matrix's time axis.
    pub fn align_to(&self, spec: &Spectrogram, offset: f64) -> Self {
        let n = spec.num_frames();
        let last = self.num_frames().saturating_sub(1);
        let mut values = Array2::zeros((self.num_sources(), n));
        if self.num_frames() > 0 {
            for t in 0..n {
                let time = offset + spec.config.frame_center(t, spec.sample_rate);
                let idx = ((time * self.frame_rate).floor().max(0.0) as usize).min(last);
                values.column_mut(t).assign(&self.values.column(idx));
            }
        }
        Self {
            values,
            frame_rate: spec.sample_rate as f64 / spec.config.hop as f64,
            binary: self.binary,
        }
    }
}

/// Per-class masks `[class, frequency, frame]`; the last class is noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TfMaskSet {
    pub masks: Array3<f64>,
}

impl TfMaskSet {
    pub fn num_classes(&self) -> usize {
        self.masks.shape()[0]
    }

    pub fn num_sources(&self) -> usize {
        self.num_classes() - 1
    }

    pub fn noise_class(&self) -> usize {
        self.num_classes() - 1
    }

    pub fn class(&self, c: usize) -> Result<ArrayView2<'_, f64>> {
        if c >= self.num_classes() {
            return Err(Error::invalid(format!("mask class {c} out of range")));
        }
        Ok(self.masks.slice(s![c, .., ..]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GssConfig {
    pub iterations: usize,
    /// Ridge added to each shape matrix after its update.
    pub shape_regularization: f64,
}

impl Default for GssConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            shape_regularization: 1e-10,
        }
    }
}

/// Diagnostics collected during EM, one entry per E-step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GssReport {
    /// Summed over bins, up to an additive constant.
    pub neg_log_likelihood: Vec<f64>,
    /// Largest `|sum_c mask - 1|` seen in each E-step.
    pub max_sum_error: Vec<f64>,
    /// Largest mask value on a frame where the class's guidance is zero.
    pub max_clamp_violation: Vec<f64>,
}

/// Pads `[start, end]` by `context` seconds on both sides, clamped to the session.
pub fn expand_segment(start: f64, end: f64, context: f64, session_length: f64) -> Result<(f64, f64)> {
    if !(start <= end) || start < 0.0 || end > session_length || context < 0.0 {
        return Err(Error::invalid(format!(
            "bad segment [{start}, {end}] with context {context} in session of {session_length} s"
        )));
    }
    Ok(((start - context).max(0.0), (end + context).min(session_length)))
}

pub fn gss_estimate_masks(spec: &Spectrogram, activities: &ActivityMatrix, iterations: usize) -> Result<TfMaskSet> {
    let cfg = GssConfig {
        iterations,
        ..GssConfig::default()
    };
    gss_estimate_masks_with_report(spec, activities, &cfg).map(|(m, _)| m)
}

/// Runs guided cACGMM EM. `activities` must already be frame-aligned with `spec`.
pub fn gss_estimate_masks_with_report(
    spec: &Spectrogram,
    activities: &ActivityMatrix,
    cfg: &GssConfig,
) -> Result<(TfMaskSet, GssReport)> {
    let (bins, frames, k) = spec.data.dim();
    if k < 2 {
        return Err(Error::invalid("guided separation needs at least two channels"));
    }
    if activities.num_frames() != frames {
        return Err(Error::invalid(format!(
            "activity has {} frames, spectrogram {frames}; align it first",
            activities.num_frames()
        )));
    }
    if activities.values.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("every source has zero activity; nothing to separate"));
    }
    let n_src = activities.num_sources();
    let n_cls = n_src + 1;
    let mut guide = Array2::<f64>::ones((n_cls, frames));
    guide.slice_mut(s![..n_src, ..]).assign(&activities.values);

    let per_bin: Vec<BinResult> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let obs: Vec<CVec> = (0..frames)
                .map(|t| {
                    let y = CVec::from_iterator(k, (0..k).map(|m| spec.data[[f, t, m]]));
                    let norm = y.norm();
                    if norm > 0.0 {
                        y / c(norm)
                    } else {
                        CVec::from_element(k, c(1.0 / (k as f64).sqrt()))
                    }
                })
                .collect();
            em_for_bin(&obs, &guide, cfg)
        })
        .collect();

    let mut masks = Array3::zeros((n_cls, bins, frames));
    let mut report = GssReport::default();
    let steps = cfg.iterations + 1;
    report.neg_log_likelihood = vec![0.0; steps];
    report.max_sum_error = vec![0.0; steps];
    report.max_clamp_violation = vec![0.0; steps];
    for (f, bin) in per_bin.into_iter().enumerate() {
        masks.slice_mut(s![.., f, ..]).assign(&bin.posterior);
        for i in 0..steps {
            report.neg_log_likelihood[i] += bin.nll[i];
            report.max_sum_error[i] = report.max_sum_error[i].max(bin.sum_err[i]);
            report.max_clamp_violation[i] = report.max_clamp_violation[i].max(bin.clamp[i]);
        }
    }
    debug!(
        "gss: {} classes, {bins} bins, {frames} frames, nll {:.3} -> {:.3}",
        n_cls,
        report.neg_log_likelihood[0],
        report.neg_log_likelihood[steps - 1]
    );
    Ok((TfMaskSet { masks }, report))
}

struct BinResult {
    posterior: Array2<f64>,
    nll: Vec<f64>,
    sum_err: Vec<f64>,
    clamp: Vec<f64>,
}

struct ClassModel {
    inv: CMat,
    log_det: f64,
}

fn class_model(shape: &CMat) -> Option<ClassModel> {
    let chol = shape.clone().cholesky()?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
    Some(ClassModel {
        inv: chol.inverse(),
        log_det,
    })
}

fn em_for_bin(obs: &[CVec], guide: &Array2<f64>, cfg: &GssConfig) -> BinResult {
    let (n_cls, frames) = guide.dim();
    let k = obs[0].len();
    let kf = k as f64;
    let mut shapes = vec![CMat::identity(k, k); n_cls];
    let mut prior = vec![1.0 / n_cls as f64; n_cls];
    let mut posterior = Array2::zeros((n_cls, frames));
    let mut quad = Array2::zeros((n_cls, frames));
    let steps = cfg.iterations + 1;
    let (mut nll, mut sum_err, mut clamp) = (vec![0.0; steps], vec![0.0; steps], vec![0.0; steps]);

    for step in 0..steps {
        // E-step.
        let models: Vec<Option<ClassModel>> = shapes.iter().map(class_model).collect();
        let mut total_nll = 0.0;
        let mut log_p = vec![0.0; n_cls];
        for t in 0..frames {
            let z = &obs[t];
            let norm: f64 = (0..n_cls).map(|cl| prior[cl] * guide[[cl, t]]).sum();
            let mut max_lp = f64::NEG_INFINITY;
            for cl in 0..n_cls {
                let w = prior[cl] * guide[[cl, t]];
                log_p[cl] = match (&models[cl], w > 0.0) {
                    (Some(m), true) => {
                        let q = linalg::quad_form_slice(&m.inv, z.as_slice()).max(1e-300);
                        quad[[cl, t]] = q;
                        (w / norm).ln() - m.log_det - kf * q.ln()
                    }
                    _ => f64::NEG_INFINITY,
                };
                max_lp = max_lp.max(log_p[cl]);
            }
            let mut denom = 0.0;
            for cl in 0..n_cls {
                let p = if log_p[cl].is_finite() { (log_p[cl] - max_lp).exp() } else { 0.0 };
                posterior[[cl, t]] = p;
                denom += p;
            }
            total_nll -= max_lp + denom.ln();
            let mut s = 0.0;
            for cl in 0..n_cls {
                posterior[[cl, t]] /= denom;
                s += posterior[[cl, t]];
                if guide[[cl, t]] == 0.0 {
                    clamp[step] = f64::max(clamp[step], posterior[[cl, t]]);
                }
            }
            sum_err[step] = f64::max(sum_err[step], (s - 1.0).abs());
        }
        nll[step] = total_nll;
        debug_assert!(sum_err[step] < 1e-6, "mask normalisation broken at step {step}");
        debug_assert!(clamp[step] == 0.0, "guidance clamp broken at step {step}");
        if step == cfg.iterations {
            break;
        }

        // M-step: prior weights.
        let norms: Vec<f64> = (0..frames)
            .map(|t| (0..n_cls).map(|cl| prior[cl] * guide[[cl, t]]).sum())
            .collect();
        let mut new_prior = vec![0.0; n_cls];
        for cl in 0..n_cls {
            let a: f64 = posterior.row(cl).sum();
            let b: f64 = (0..frames)
                .filter(|&t| norms[t] > 0.0)
                .map(|t| guide[[cl, t]] / norms[t])
                .sum();
            new_prior[cl] = if b > 0.0 { a / b } else { 0.0 };
        }
        let total: f64 = new_prior.iter().sum();
        if total > 0.0 {
            prior = new_prior.into_iter().map(|p| p / total).collect();
        }

        // M-step: shape matrices.
        for cl in 0..n_cls {
            let weight: f64 = posterior.row(cl).sum();
            if weight <= 0.0 || models[cl].is_none() {
                continue;
            }
            let mut acc = CMat::zeros(k, k);
            for t in 0..frames {
                let g = posterior[[cl, t]];
                if g > 0.0 {
                    linalg::add_outer(&mut acc, obs[t].as_slice(), g / quad[[cl, t]]);
                }
            }
            let mut b = linalg::hermitize(&(acc * c(kf / weight)));
            let tr = linalg::trace_re(&b);
            if tr > 0.0 && tr.is_finite() {
                b *= c(kf / tr);
            }
            b += CMat::identity(k, k) * c(cfg.shape_regularization);
            if linalg::is_finite(&b) {
                shapes[cl] = b;
            }
        }
    }
    BinResult {
        posterior,
        nll,
        sum_err,
        clamp,
    }
}

/// Sum of all masks except `target`.
pub fn complement_mask(masks: &TfMaskSet, target: usize) -> Result<Array2<f64>> {
    let t = masks.class(target)?;
    Ok(t.mapv(|a| (1.0 - a).max(0.0)))
}
