//! Mask-driven MIMO beamforming: spatial covariances, the MWF filter family,
//! reference microphone selection and post-filters.
//!
//! A [`BeamformerBank`] holds, per frequency, a `K x K` matrix whose column `r`
//! is the filter `w_r` estimating the target image at microphone `r`. The
//! output for reference `r` is `w_r(f)^H y(f, t)`.
//!
//! Channel indices are zero-based throughout.

use std::ops::Range;

use log::debug;
use ndarray::{Array3, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gss::TfMaskSet;
use crate::linalg::{self, c, CMat, CVec};
use crate::stft::Spectrogram;

/// Relative diagonal loading applied to the noise covariance before inversion.
pub const NOISE_LOADING: f64 = 1e-6;

/// Mask-weighted target and noise spatial covariances, one `K x K` matrix per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair {
    pub target: Vec<CMat>,
    pub noise: Vec<CMat>,
    /// Bins where a class had zero mask mass and the unweighted average was used.
    pub fallback_bins: Vec<usize>,
}

impl CovariancePair {
    pub fn num_bins(&self) -> usize {
        self.target.len()
    }

    pub fn num_channels(&self) -> usize {
        self.target.first().map_or(0, |m| m.nrows())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeamformerKind {
    /// Souden MVDR, i.e. the rank-1 MWF with `gamma = 0`.
    #[serde(rename = "mvdr")]
    MvdrSouden,
    R1Mwf,
    SpMwf,
    SdwMwf,
}

impl std::str::FromStr for BeamformerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mvdr" | "mvdr-souden" => Ok(Self::MvdrSouden),
            "r1-mwf" => Ok(Self::R1Mwf),
            "sp-mwf" => Ok(Self::SpMwf),
            "sdw-mwf" => Ok(Self::SdwMwf),
            other => Err(Error::invalid(format!("unknown beamformer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerBank {
    /// Per bin, columns are the per-reference filters.
    pub filters: Vec<CMat>,
    pub kind: BeamformerKind,
    pub gamma: f64,
    /// Bins whose filter was zeroed after a non-finite solution.
    pub zeroed_bins: Vec<usize>,
}

impl BeamformerBank {
    pub fn num_bins(&self) -> usize {
        self.filters.len()
    }

    pub fn num_channels(&self) -> usize {
        self.filters.first().map_or(0, |m| m.nrows())
    }

    /// Filter for reference `r` at bin `f`.
    pub fn column(&self, f: usize, r: usize) -> CVec {
        self.filters[f].column(r).into_owned()
    }
}

fn frame_vector(spec: &Spectrogram, f: usize, t: usize) -> CVec {
    CVec::from_iterator(
        spec.num_channels(),
        (0..spec.num_channels()).map(|k| spec.data[[f, t, k]]),
    )
}

/// Covariances for `target` against everything else in the mask set.
pub fn estimate_covariances(
    spec: &Spectrogram,
    masks: &TfMaskSet,
    target: usize,
    frames: Range<usize>,
) -> Result<CovariancePair> {
    let alpha_n = crate::gss::complement_mask(masks, target)?;
    estimate_covariances_weighted(spec, masks.class(target)?, alpha_n.view(), frames)
}

/// `R(f) = sum_t a(f,t) y y^H / sum_t a(f,t)` over `frames`, for both masks.
pub fn estimate_covariances_weighted(
    spec: &Spectrogram,
    alpha_s: ArrayView2<f64>,
    alpha_n: ArrayView2<f64>,
    frames: Range<usize>,
) -> Result<CovariancePair> {
    let (bins, n_frames, k) = spec.data.dim();
    if frames.start >= frames.end || frames.end > n_frames {
        return Err(Error::invalid(format!(
            "frame range {frames:?} outside spectrogram of {n_frames} frames"
        )));
    }
    for a in [&alpha_s, &alpha_n] {
        if a.dim() != (bins, n_frames) {
            return Err(Error::invalid("mask shape does not match spectrogram"));
        }
    }
    let mut target = Vec::with_capacity(bins);
    let mut noise = Vec::with_capacity(bins);
    let mut fallback_bins = Vec::new();
    for f in 0..bins {
        let mut rs = CMat::zeros(k, k);
        let mut rn = CMat::zeros(k, k);
        let mut plain = CMat::zeros(k, k);
        let (mut ws, mut wn) = (0.0, 0.0);
        for t in frames.clone() {
            let y = frame_vector(spec, f, t);
            let outer = &y * y.adjoint();
            rs += &outer * c(alpha_s[[f, t]]);
            rn += &outer * c(alpha_n[[f, t]]);
            plain += outer;
            ws += alpha_s[[f, t]];
            wn += alpha_n[[f, t]];
        }
        let count = frames.len() as f64;
        let mut fallback = false;
        let mut finish = |acc: CMat, w: f64| {
            if w > 0.0 {
                linalg::hermitize(&(acc / c(w)))
            } else {
                fallback = true;
                linalg::hermitize(&(&plain / c(count)))
            }
        };
        target.push(finish(rs, ws));
        noise.push(finish(rn, wn));
        if fallback {
            fallback_bins.push(f);
        }
    }
    if !fallback_bins.is_empty() {
        debug!(
            "{} bins fell back to unweighted covariance",
            fallback_bins.len()
        );
    }
    Ok(CovariancePair {
        target,
        noise,
        fallback_bins,
    })
}

/// Per-bin MWF-family filters. `gamma` is ignored (forced to 0) for MVDR.
pub fn compute_beamformer(
    cov: &CovariancePair,
    kind: BeamformerKind,
    gamma: f64,
) -> Result<BeamformerBank> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
    }
    let gamma = if kind == BeamformerKind::MvdrSouden { 0.0 } else { gamma };
    let k = cov.num_channels();
    let mut filters = Vec::with_capacity(cov.num_bins());
    let mut zeroed_bins = Vec::new();
    for (f, (rs, rn)) in cov.target.iter().zip(&cov.noise).enumerate() {
        match filters_for_bin(rs, rn, kind, gamma) {
            Some(w) => filters.push(w),
            None => {
                zeroed_bins.push(f);
                filters.push(CMat::zeros(k, k));
            }
        }
    }
    if !zeroed_bins.is_empty() {
        debug!("{} bins produced non-finite filters and were zeroed", zeroed_bins.len());
    }
    Ok(BeamformerBank {
        filters,
        kind,
        gamma,
        zeroed_bins,
    })
}

fn filters_for_bin(rs: &CMat, rn: &CMat, kind: BeamformerKind, gamma: f64) -> Option<CMat> {
    let k = rs.nrows();
    let w = match kind {
        BeamformerKind::SdwMwf => {
            let lhs = linalg::load_diagonal(&(rs + rn * c(gamma)), NOISE_LOADING);
            linalg::solve(&lhs, rs)?
        }
        BeamformerKind::MvdrSouden | BeamformerKind::R1Mwf => {
            let a = linalg::solve(&linalg::load_diagonal(rn, NOISE_LOADING), rs)?;
            let denom = gamma + linalg::trace_re(&a);
            a / c(denom)
        }
        BeamformerKind::SpMwf => {
            let mut a = linalg::solve(&linalg::load_diagonal(rn, NOISE_LOADING), rs)?;
            // u_r^T R_s R_n^-1 R_s u_r / u_r^T R_s u_r, per reference r.
            let rs_a = rs * &a;
            for r in 0..k {
                let ref_power = rs[(r, r)].re;
                let denom = gamma + rs_a[(r, r)].re / ref_power;
                let mut col = a.column_mut(r);
                col /= c(denom);
            }
            a
        }
    };
    linalg::is_finite(&w).then_some(w)
}

/// Relative transfer function `R_s u_r / (u_r^T R_s u_r)` per bin.
pub fn estimate_rtf(cov: &CovariancePair, reference: usize) -> Result<Vec<CVec>> {
    let k = cov.num_channels();
    if reference >= k {
        return Err(Error::invalid(format!("reference {reference} out of range for {k} channels")));
    }
    cov.target
        .iter()
        .enumerate()
        .map(|(f, rs)| {
            let power = rs[(reference, reference)].re;
            if power <= 0.0 {
                return Err(Error::Numerical(format!(
                    "zero reference power at bin {f} for mic {reference}"
                )));
            }
            let mut z: CVec = rs.column(reference) / c(power);
            z[reference] = c(1.0);
            Ok(z)
        })
        .collect()
}

/// Chosen reference channel and the per-reference output SNR it maximised.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceChoice {
    pub index: usize,
    pub snr: Vec<f64>,
}

/// Picks `argmax_r sum_f w_r^H R_s w_r / sum_f w_r^H R_n w_r`, lowest index on ties.
pub fn select_reference_mic(bank: &BeamformerBank, cov: &CovariancePair) -> Result<ReferenceChoice> {
    if bank.num_bins() != cov.num_bins() || bank.num_channels() != cov.num_channels() {
        return Err(Error::invalid("beamformer and covariances disagree in shape"));
    }
    let k = bank.num_channels();
    let mut snr = Vec::with_capacity(k);
    for r in 0..k {
        let (mut num, mut den) = (0.0, 0.0);
        for f in 0..bank.num_bins() {
            let w = bank.column(f, r);
            num += linalg::quad_form(&cov.target[f], &w);
            den += linalg::quad_form(&cov.noise[f], &w);
        }
        snr.push(if den > 0.0 { num / den } else { f64::NAN });
    }
    let mut best: Option<usize> = None;
    for (r, &v) in snr.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| v > snr[b]) {
            best = Some(r);
        }
    }
    let index = best.ok_or_else(|| {
        Error::Numerical("output noise power is zero for every reference".into())
    })?;
    Ok(ReferenceChoice { index, snr })
}

/// Single-channel output `w_ref(f)^H y(f, t)`.
pub fn apply_beamformer(spec: &Spectrogram, bank: &BeamformerBank, reference: usize) -> Result<Spectrogram> {
    let (bins, frames, k) = spec.data.dim();
    if reference >= k || bank.num_channels() != k || bank.num_bins() != bins {
        return Err(Error::invalid(format!(
            "reference {reference} / filter shape incompatible with {k}-channel spectrogram"
        )));
    }
    let mut out = Array3::zeros((bins, frames, 1));
    for f in 0..bins {
        let w = bank.filters[f].column(reference);
        for t in 0..frames {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..k {
                acc += w[m].conj() * spec.data[[f, t, m]];
            }
            out[[f, t, 0]] = acc;
        }
    }
    Ok(spec.with_data(out))
}

/// Per-bin BAN gain `sqrt(w^H R_n R_n w) / (w^H R_n w)`; bins with a degenerate
/// denominator get gain 1 and are listed in the second return value.
pub fn ban_gains(filters: &[CVec], noise: &[CMat]) -> (Vec<f64>, Vec<usize>) {
    let mut flagged = Vec::new();
    let gains = filters
        .iter()
        .zip(noise)
        .enumerate()
        .map(|(f, (w, rn))| {
            let rn_w = rn * w;
            let num = rn_w.norm_squared().sqrt();
            let den = linalg::quad_form(rn, w);
            let g = num / den;
            if den > 0.0 && g.is_finite() {
                g
            } else {
                flagged.push(f);
                1.0
            }
        })
        .collect();
    (gains, flagged)
}

/// Applies the BAN post-filter to a single-channel beamformer output.
pub fn ban_postfilter(signal: &Spectrogram, filters: &[CVec], noise: &[CMat]) -> Result<(Spectrogram, Vec<usize>)> {
    if signal.num_channels() != 1 || filters.len() != signal.num_bins() || noise.len() != signal.num_bins() {
        return Err(Error::invalid("ban post-filter expects a mono spectrogram and one filter per bin"));
    }
    let (gains, flagged) = ban_gains(filters, noise);
    let mut out = signal.clone();
    for (f, g) in gains.iter().enumerate() {
        out.data
            .slice_mut(ndarray::s![f, .., ..])
            .mapv_inplace(|x| x * g);
    }
    Ok((out, flagged))
}

/// `out(f,t) = max(mask(f,t), delta) * in(f,t)`.
pub fn tf_mask_postfilter(signal: &Spectrogram, mask: ArrayView2<f64>, delta: f64) -> Result<Spectrogram> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid(format!("mask floor {delta} outside [0, 1]")));
    }
    if signal.num_channels() != 1 || mask.dim() != (signal.num_bins(), signal.num_frames()) {
        return Err(Error::invalid("mask shape does not match signal"));
    }
    let mut out = signal.clone();
    for ((f, t, _), x) in out.data.indexed_iter_mut() {
        *x *= mask[[f, t]].max(delta);
    }
    Ok(out)
}

/// Amplitude floor for a level in dB, e.g. -9 dB -> 0.355.
pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cn(rng: &mut ChaCha8Rng) -> Complex64 {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    fn random_spec(rng: &mut ChaCha8Rng, bins: usize, frames: usize, k: usize) -> Spectrogram {
        let cfg = StftConfig {
            window_length: 2 * (bins - 1),
            hop: bins - 1,
            window: crate::stft::WindowKind::SqrtHann,
            fft_size: 2 * (bins - 1),
        };
        let mut spec = Spectrogram::zeros(cfg, 16000, 0, k);
        spec.data = Array3::from_shape_fn((bins, frames, k), |_| cn(rng));
        spec
    }

    fn random_psd(rng: &mut ChaCha8Rng, k: usize, rank: usize) -> CMat {
        let a = CMat::from_fn(k, rank, |_, _| cn(rng));
        &a * a.adjoint()
    }

    /// Direct double-loop evaluation of the weighted covariance.
    fn brute_covariance(spec: &Spectrogram, mask: &Array2<f64>, f: usize, frames: Range<usize>) -> Vec<Vec<Complex64>> {
        let k = spec.num_channels();
        let mut acc = vec![vec![Complex64::new(0.0, 0.0); k]; k];
        let mut w = 0.0;
        for t in frames {
            w += mask[[f, t]];
            for i in 0..k {
                for j in 0..k {
                    acc[i][j] += mask[[f, t]] * spec.data[[f, t, i]] * spec.data[[f, t, j]].conj();
                }
            }
        }
        acc.iter()
            .map(|row| row.iter().map(|x| x / w).collect())
            .collect()
    }

    #[test]
    fn covariance_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = random_spec(&mut rng, 5, 50, 3);
        let ms = Array2::from_shape_fn((5, 50), |_| rng.gen_range(0.0..1.0));
        let mn = Array2::from_shape_fn((5, 50), |_| rng.gen_range(0.0..1.0));
        let cov = estimate_covariances_weighted(&spec, ms.view(), mn.view(), 0..50).unwrap();
        for f in 0..5 {
            for (est, mask) in [(&cov.target[f], &ms), (&cov.noise[f], &mn)] {
                let oracle = brute_covariance(&spec, mask, f, 0..50);
                for i in 0..3 {
                    for j in 0..3 {
                        assert!((est[(i, j)] - oracle[i][j]).norm() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn equal_masks_give_sample_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = random_spec(&mut rng, 3, 20, 2);
        let ones = Array2::ones((3, 20));
        let cov = estimate_covariances_weighted(&spec, ones.view(), ones.view(), 0..20).unwrap();
        for f in 0..3 {
            assert!((&cov.target[f] - &cov.noise[f]).norm() < 1e-14);
        }
    }

    #[test]
    fn single_frame_is_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = random_spec(&mut rng, 3, 4, 3);
        let ones = Array2::ones((3, 4));
        let cov = estimate_covariances_weighted(&spec, ones.view(), ones.view(), 2..3).unwrap();
        let y = frame_vector(&spec, 1, 2);
        assert!((&cov.target[1] - &y * y.adjoint()).norm() < 1e-12);
    }

    #[test]
    fn zero_mask_mass_falls_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let spec = random_spec(&mut rng, 3, 6, 2);
        let ones = Array2::ones((3, 6));
        let mut zs = Array2::ones((3, 6));
        zs.row_mut(1).fill(0.0);
        let cov = estimate_covariances_weighted(&spec, zs.view(), ones.view(), 0..6).unwrap();
        assert_eq!(cov.fallback_bins, vec![1]);
        assert!((&cov.target[1] - &cov.noise[1]).norm() < 1e-12);
    }

    fn pair(rs: CMat, rn: CMat) -> CovariancePair {
        CovariancePair {
            target: vec![rs],
            noise: vec![rn],
            fallback_bins: vec![],
        }
    }

    #[test]
    fn rank_one_r1_and_sp_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for gamma in [0.0, 0.5, 1.0] {
            let z = CVec::from_fn(4, |_, _| cn(&mut rng));
            let rs = (&z * z.adjoint()) * c(2.5);
            let rn = random_psd(&mut rng, 4, 6);
            let cov = pair(rs, rn);
            let r1 = compute_beamformer(&cov, BeamformerKind::R1Mwf, gamma).unwrap();
            let sp = compute_beamformer(&cov, BeamformerKind::SpMwf, gamma).unwrap();
            for r in 0..4 {
                let (a, b) = (r1.column(0, r), sp.column(0, r));
                assert!((&a - &b).norm() <= 1e-8 * a.norm());
            }
        }
    }

    #[test]
    fn general_rank_sp_is_positive_multiple_of_r1() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cov = pair(random_psd(&mut rng, 3, 3), random_psd(&mut rng, 3, 5));
        let r1 = compute_beamformer(&cov, BeamformerKind::R1Mwf, 0.5).unwrap();
        let sp = compute_beamformer(&cov, BeamformerKind::SpMwf, 0.5).unwrap();
        for r in 0..3 {
            let (a, b) = (r1.column(0, r), sp.column(0, r));
            let scale = a.dotc(&b) / a.dotc(&a);
            assert!(scale.re > 0.0 && scale.im.abs() < 1e-10 * scale.re);
            assert!((&b - &a * scale).norm() < 1e-8 * b.norm());
        }
    }

    #[test]
    fn mvdr_is_distortionless_for_rank_one_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let z = CVec::from_fn(3, |_, _| cn(&mut rng));
        let cov = pair((&z * z.adjoint()) * c(0.7), random_psd(&mut rng, 3, 4));
        let bank = compute_beamformer(&cov, BeamformerKind::MvdrSouden, 0.9).unwrap();
        assert_eq!(bank.gamma, 0.0);
        for r in 0..3 {
            let response = bank.column(0, r).dotc(&z);
            assert!((response - z[r]).norm() < 1e-8 * z[r].norm());
        }
    }

    #[test]
    fn sdw_mwf_with_zero_gamma_passes_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cov = pair(random_psd(&mut rng, 3, 3), random_psd(&mut rng, 3, 3));
        let bank = compute_beamformer(&cov, BeamformerKind::SdwMwf, 0.0).unwrap();
        assert!((&bank.filters[0] - CMat::identity(3, 3)).norm() < 1e-4);
    }

    #[test]
    fn non_finite_bins_are_zeroed() {
        let rs = CMat::from_element(2, 2, c(f64::NAN));
        let bank = compute_beamformer(&pair(rs, CMat::identity(2, 2)), BeamformerKind::R1Mwf, 0.0).unwrap();
        assert_eq!(bank.zeroed_bins, vec![0]);
        assert!(bank.filters[0].iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn rtf_recovers_normalised_steering_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let z0 = CVec::from_fn(4, |_, _| cn(&mut rng));
        let cov = pair((&z0 * z0.adjoint()) * c(3.0), CMat::identity(4, 4));
        for r in 0..4 {
            let z = &estimate_rtf(&cov, r).unwrap()[0];
            let expected = &z0 / z0[r];
            assert!((z - expected).norm() < 1e-10);
            assert_eq!(z[r], c(1.0));
        }
        let scalar = pair(CMat::from_element(1, 1, c(2.0)), CMat::identity(1, 1));
        assert_eq!(estimate_rtf(&scalar, 0).unwrap()[0][0], c(1.0));
        let silent = pair(CMat::zeros(2, 2), CMat::identity(2, 2));
        assert!(estimate_rtf(&silent, 0).is_err());
    }

    fn diag_bank(cols: &[[f64; 2]]) -> BeamformerBank {
        BeamformerBank {
            filters: cols
                .iter()
                .map(|d| CMat::from_diagonal(&CVec::from_iterator(2, d.iter().map(|&x| c(x)))))
                .collect(),
            kind: BeamformerKind::R1Mwf,
            gamma: 0.0,
            zeroed_bins: vec![],
        }
    }

    #[test]
    fn reference_selection_picks_highest_snr() {
        // Identity filters: ratio for mic r is R_s[r,r] / R_n[r,r] = {3, 5}.
        let bank = diag_bank(&[[1.0, 1.0]]);
        let rs = CMat::from_diagonal(&CVec::from_vec(vec![c(3.0), c(5.0)]));
        let cov = pair(rs, CMat::identity(2, 2));
        let choice = select_reference_mic(&bank, &cov).unwrap();
        assert_eq!(choice.index, 1);
        assert!((choice.snr[0] - 3.0).abs() < 1e-12 && (choice.snr[1] - 5.0).abs() < 1e-12);

        let mut scaled = bank.clone();
        scaled.filters.iter_mut().for_each(|w| *w *= c(7.5));
        assert_eq!(select_reference_mic(&scaled, &cov).unwrap().index, 1);
    }

    #[test]
    fn reference_selection_ties_and_single_mic() {
        let bank = diag_bank(&[[1.0, 1.0]]);
        let cov = pair(CMat::identity(2, 2), CMat::identity(2, 2));
        assert_eq!(select_reference_mic(&bank, &cov).unwrap().index, 0);

        let one = BeamformerBank {
            filters: vec![CMat::identity(1, 1)],
            kind: BeamformerKind::SpMwf,
            gamma: 0.0,
            zeroed_bins: vec![],
        };
        let cov = pair(CMat::identity(1, 1), CMat::identity(1, 1));
        assert_eq!(select_reference_mic(&one, &cov).unwrap().index, 0);

        let zero = diag_bank(&[[0.0, 0.0]]);
        assert!(select_reference_mic(&zero, &cov_2x2()).is_err());
    }

    fn cov_2x2() -> CovariancePair {
        pair(CMat::identity(2, 2), CMat::identity(2, 2))
    }

    #[test]
    fn apply_matches_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let spec = random_spec(&mut rng, 4, 7, 3);
        let bank = BeamformerBank {
            filters: (0..4).map(|_| CMat::from_fn(3, 3, |_, _| cn(&mut rng))).collect(),
            kind: BeamformerKind::SpMwf,
            gamma: 0.0,
            zeroed_bins: vec![],
        };
        let out = apply_beamformer(&spec, &bank, 2).unwrap();
        for f in 0..4 {
            for t in 0..7 {
                let mut expected = Complex64::new(0.0, 0.0);
                for m in 0..3 {
                    expected += bank.filters[f][(m, 2)].conj() * spec.data[[f, t, m]];
                }
                assert!((out.data[[f, t, 0]] - expected).norm() < 1e-12);
            }
        }
        assert!(apply_beamformer(&spec, &bank, 3).is_err());
    }

    #[test]
    fn identity_and_zero_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let spec = random_spec(&mut rng, 3, 5, 2);
        let ident = BeamformerBank {
            filters: vec![CMat::identity(2, 2); 3],
            kind: BeamformerKind::SpMwf,
            gamma: 0.0,
            zeroed_bins: vec![],
        };
        let out = apply_beamformer(&spec, &ident, 0).unwrap();
        for ((f, t, _), x) in out.data.indexed_iter() {
            assert_eq!(*x, spec.data[[f, t, 0]]);
        }
        let zero = BeamformerBank {
            filters: vec![CMat::zeros(2, 2); 3],
            ..ident
        };
        assert!(apply_beamformer(&spec, &zero, 1).unwrap().data.iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn ban_gain_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let w = CVec::from_fn(3, |_, _| cn(&mut rng));
        let (g, _) = ban_gains(std::slice::from_ref(&w), &[CMat::identity(3, 3)]);
        assert!((g[0] - 1.0 / w.norm()).abs() < 1e-12);

        let d = CMat::from_diagonal(&CVec::from_vec(vec![c(2.0), c(0.5), c(4.0)]));
        let mut u = CVec::zeros(3);
        u[1] = c(1.0);
        let (g, _) = ban_gains(&[u], &[d]);
        assert!((g[0] - 1.0).abs() < 1e-12);

        let (g, flagged) = ban_gains(&[CVec::zeros(2)], &[CMat::identity(2, 2)]);
        assert_eq!((g[0], flagged), (1.0, vec![0]));
    }

    #[test]
    fn ban_output_is_independent_of_filter_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let spec = random_spec(&mut rng, 3, 6, 3);
        let rn: Vec<CMat> = (0..3).map(|_| random_psd(&mut rng, 3, 4)).collect();
        let bank = BeamformerBank {
            filters: (0..3).map(|_| CMat::from_fn(3, 3, |_, _| cn(&mut rng))).collect(),
            kind: BeamformerKind::SpMwf,
            gamma: 0.0,
            zeroed_bins: vec![],
        };
        let run = |bank: &BeamformerBank| {
            let y = apply_beamformer(&spec, bank, 1).unwrap();
            let cols: Vec<CVec> = (0..3).map(|f| bank.column(f, 1)).collect();
            ban_postfilter(&y, &cols, &rn).unwrap().0
        };
        let base = run(&bank);
        let mut scaled = bank.clone();
        scaled.filters.iter_mut().for_each(|w| *w *= c(3.7));
        let other = run(&scaled);
        for (a, b) in base.data.iter().zip(other.data.iter()) {
            assert!((a - b).norm() <= 1e-10 * a.norm().max(1e-300));
        }
    }

    #[test]
    fn mask_postfilter_floors_the_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let spec = random_spec(&mut rng, 2, 3, 1);
        let delta = db_to_amplitude(-9.0);
        assert!((delta - 0.355).abs() < 1e-3);

        let low = Array2::from_elem((2, 3), 0.1);
        let out = tf_mask_postfilter(&spec, low.view(), delta).unwrap();
        assert!((out.data[[0, 0, 0]] - spec.data[[0, 0, 0]] * delta).norm() < 1e-15);

        let high = Array2::from_elem((2, 3), 0.9);
        let out = tf_mask_postfilter(&spec, high.view(), delta).unwrap();
        assert!((out.data[[1, 2, 0]] - spec.data[[1, 2, 0]] * 0.9).norm() < 1e-15);

        let out = tf_mask_postfilter(&spec, low.view(), 1.0).unwrap();
        assert_eq!(out, spec);

        assert!(tf_mask_postfilter(&spec, low.view(), 1.5).is_err());
        assert!(tf_mask_postfilter(&spec, low.view(), -0.1).is_err());
    }
}
