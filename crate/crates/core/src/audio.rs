//! Multichannel waveform container, WAV I/O and session manifests.
//!
//! A session manifest is a small TOML file:
//!
//! ```toml
//! sample_rate = 16000
//! channels = ["U01_CH1.wav", "U02_CH1.wav"]
//! activities_dir = "activities"   # optional
//! embeddings_dir = "embeddings"   # optional
//! c50_file = "c50.txt"            # optional
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equal-length multichannel audio with a shared sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformSet {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
    pub channel_ids: Vec<String>,
}

impl WaveformSet {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        let ids = (0..channels.len()).map(|k| format!("ch{k}")).collect();
        Self::with_ids(channels, sample_rate, ids)
    }

    pub fn with_ids(
        channels: Vec<Vec<f64>>,
        sample_rate: u32,
        channel_ids: Vec<String>,
    ) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if channels.is_empty() {
            return Err(Error::invalid("waveform set has zero channels"));
        }
        if channel_ids.len() != channels.len() {
            return Err(Error::invalid("one channel id per channel required"));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::invalid("channels differ in length"));
        }
        if channels.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite sample"));
        }
        Ok(Self {
            channels,
            sample_rate,
            channel_ids,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Samples `[start, end)` of the given channels, in the given order.
    pub fn slice(&self, channels: &[usize], start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return Err(Error::invalid(format!(
                "sample range [{start}, {end}) outside signal of {} samples",
                self.len()
            )));
        }
        let mut data = Vec::with_capacity(channels.len());
        let mut ids = Vec::with_capacity(channels.len());
        for &k in channels {
            let ch = self
                .channels
                .get(k)
                .ok_or_else(|| Error::invalid(format!("channel {k} out of range")))?;
            data.push(ch[start..end].to_vec());
            ids.push(self.channel_ids[k].clone());
        }
        Self::with_ids(data, self.sample_rate, ids)
    }

    /// Sample index nearest to `t` seconds, clamped to the signal.
    pub fn sample_at(&self, t: f64) -> usize {
        ((t * self.sample_rate as f64).round().max(0.0) as usize).min(self.len())
    }
}

/// Parsed session manifest with paths already resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sample_rate: u32,
    pub channels: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activities_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c50_file: Option<PathBuf>,
    /// Frame rate of activity posterior files, frames per second.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity_frame_rate: Option<f64>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest =
            toml::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        manifest.channels.iter_mut().for_each(resolve);
        manifest.activities_dir.iter_mut().for_each(resolve);
        manifest.embeddings_dir.iter_mut().for_each(resolve);
        manifest.c50_file.iter_mut().for_each(resolve);
        if manifest.session.is_none() {
            manifest.session = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned());
        }
        Ok(manifest)
    }

    pub fn session_name(&self) -> &str {
        self.session.as_deref().unwrap_or("session")
    }
}

/// Loads every channel listed in the manifest, in order.
///
/// Channels of unequal length are truncated to the shortest one.
pub fn read_session(manifest_path: &Path) -> Result<WaveformSet> {
    let manifest = Manifest::load(manifest_path)?;
    load_channels(&manifest)
}

pub fn load_channels(manifest: &Manifest) -> Result<WaveformSet> {
    if manifest.channels.is_empty() {
        return Err(Error::invalid("manifest lists zero channels"));
    }
    let mut channels = Vec::new();
    let mut ids = Vec::new();
    for path in &manifest.channels {
        let (data, rate) = read_wav(path)?;
        if rate != manifest.sample_rate {
            return Err(Error::SampleRateMismatch {
                path: path.clone(),
                expected: manifest.sample_rate,
                found: rate,
            });
        }
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let n = data.len();
        for (c, ch) in data.into_iter().enumerate() {
            ids.push(if n == 1 { stem.clone() } else { format!("{stem}.{c}") });
            channels.push(ch);
        }
    }
    let shortest = channels.iter().map(Vec::len).min().unwrap_or(0);
    let longest = channels.iter().map(Vec::len).max().unwrap_or(0);
    if shortest != longest {
        warn!("channel lengths differ ({shortest}..{longest} samples); truncating to {shortest}");
        channels.iter_mut().for_each(|c| c.truncate(shortest));
    }
    WaveformSet::with_ids(channels, manifest.sample_rate, ids)
}

/// Reads a PCM WAV file into per-channel float samples in [-1, 1].
pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f64>>, u32)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / n_ch.max(1)); n_ch];
    for frame in interleaved.chunks_exact(n_ch) {
        for (c, &x) in frame.iter().enumerate() {
            channels[c].push(x);
        }
    }
    Ok((channels, spec.sample_rate))
}

/// Writes one channel as 32-bit float WAV.
pub fn write_wav_mono(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    write_wav(path, &[samples.to_vec()], sample_rate, SampleEncoding::Float32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleEncoding {
    Pcm16,
    Float32,
}

pub fn write_wav(
    path: &Path,
    channels: &[Vec<f64>],
    sample_rate: u32,
    encoding: SampleEncoding,
) -> Result<()> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = match encoding {
        SampleEncoding::Pcm16 => hound::WavSpec {
            channels: channels.len() as u16,
            sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        },
        SampleEncoding::Float32 => hound::WavSpec {
            channels: channels.len() as u16,
            sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    let len = channels.first().map_or(0, Vec::len);
    for n in 0..len {
        for ch in channels {
            match encoding {
                SampleEncoding::Pcm16 => {
                    let v = (ch[n].clamp(-1.0, 1.0) * 32767.0).round() as i16;
                    writer.write_sample(v).map_err(wav_err)?;
                }
                SampleEncoding::Float32 => {
                    writer.write_sample(ch[n] as f32).map_err(wav_err)?;
                }
            }
        }
    }
    writer.finalize().map_err(wav_err)
}
