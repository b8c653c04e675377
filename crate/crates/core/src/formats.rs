//! On-disk formats: `DMX1` matrices, RTTM, embedding index sidecars, C50
//! score files and per-session speaker counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::diarize::{Segment, UtteranceBoundaries};
use crate::error::{Error, Result};
use crate::spkcount::{EmbeddingIndex, EmbeddingSet};

const DMX_MAGIC: &str = "DMX1";

/// `DMX1 <rows> <cols> f32\n` followed by row-major little-endian `f32`.
pub fn encode_dmx(m: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = m.dim();
    let mut out = format!("{DMX_MAGIC} {rows} {cols} f32\n").into_bytes();
    out.reserve(rows * cols * 4);
    for v in m.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_dmx(bytes: &[u8]) -> Result<Array2<f64>> {
    let bad = |msg: String| Error::format("DMX1 matrix", msg);
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("no header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not ASCII".into()))?;
    let fields: Vec<&str> = header.split_ascii_whitespace().collect();
    let [magic, rows, cols, dtype] = fields[..] else {
        return Err(bad(format!("header '{header}' needs 4 fields")));
    };
    if magic != DMX_MAGIC || dtype != "f32" {
        return Err(bad(format!("unsupported header '{header}'")));
    }
    let rows: usize = rows.parse().map_err(|_| bad(format!("bad row count '{rows}'")))?;
    let cols: usize = cols.parse().map_err(|_| bad(format!("bad column count '{cols}'")))?;
    let body = &bytes[nl + 1..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("matrix too large".into()))?;
    if body.len() != expected {
        return Err(bad(format!("{rows}x{cols} needs {expected} bytes, found {}", body.len())));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(e.to_string()))
}

pub fn read_dmx(path: &Path) -> Result<Array2<f64>> {
    let bytes = read_bytes(path)?;
    decode_dmx(&bytes).map_err(|e| with_path(e, path))
}

pub fn write_dmx(path: &Path, m: &Array2<f64>) -> Result<()> {
    write_bytes(path, &encode_dmx(m))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { what, msg } => Error::Format {
            what,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    }
}

/// Posterior file of microphone `mic`, chunk `chunk`.
pub fn activity_file(dir: &Path, mic: usize, chunk: usize) -> PathBuf {
    dir.join(format!("act_m{mic}_c{chunk}.dmx"))
}

/// Embedding matrix of microphone `mic`; its index is the `.idx` sidecar.
pub fn embedding_file(dir: &Path, mic: usize) -> PathBuf {
    dir.join(format!("emb_m{mic}.dmx"))
}

pub fn index_sidecar(dmx: &Path) -> PathBuf {
    dmx.with_extension("idx")
}

/// Rounds to the 3-decimal RTTM grid.
fn ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

pub fn format_rttm(session: &str, b: &UtteranceBoundaries) -> String {
    let mut segs: Vec<&Segment> = b.segments.iter().collect();
    segs.sort_by(|x, y| x.start.total_cmp(&y.start).then(x.speaker.cmp(&y.speaker)));
    let mut out = String::new();
    for s in segs {
        let (start, end) = (ms(s.start), ms(s.end));
        if end <= start {
            continue;
        }
        let _ = writeln!(
            out,
            "SPEAKER {session} 1 {start:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            end - start,
            s.speaker
        );
    }
    out
}

/// Segments of every session in the text, keyed by session name.
pub fn parse_rttm(text: &str) -> Result<BTreeMap<String, UtteranceBoundaries>> {
    let mut per_session: BTreeMap<String, Vec<Segment>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_ascii_whitespace().collect();
        if f.len() < 8 || f[0] != "SPEAKER" {
            return Err(Error::format("RTTM", format!("line {}: '{line}'", n + 1)));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format("RTTM", format!("line {}: bad number '{s}'", n + 1)))
        };
        let (start, dur) = (num(f[3])?, num(f[4])?);
        if dur <= 0.0 {
            continue;
        }
        per_session.entry(f[1].to_string()).or_default().push(Segment {
            speaker: f[7].to_string(),
            start,
            end: ms(start + dur),
        });
    }
    per_session
        .into_iter()
        .map(|(k, segs)| Ok((k, merge_overlaps(segs))))
        .collect()
}

/// Same-speaker overlapping or touching segments are merged.
fn merge_overlaps(mut segs: Vec<Segment>) -> UtteranceBoundaries {
    segs.sort_by(|a, b| a.speaker.cmp(&b.speaker).then(a.start.total_cmp(&b.start)));
    let mut out: Vec<Segment> = Vec::with_capacity(segs.len());
    for s in segs {
        match out.last_mut() {
            Some(last) if last.speaker == s.speaker && s.start <= last.end => last.end = last.end.max(s.end),
            _ => out.push(s),
        }
    }
    UtteranceBoundaries { segments: out }
}

/// Reads an RTTM holding exactly one session.
pub fn read_rttm(path: &Path) -> Result<(String, UtteranceBoundaries)> {
    let mut all = parse_rttm(&read_text(path)?).map_err(|e| with_path(e, path))?;
    match all.len() {
        0 => {
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, UtteranceBoundaries::default()))
        }
        1 => Ok(all.pop_first().expect("one entry")),
        n => Err(Error::format("RTTM", format!("{}: {n} sessions, expected one", path.display()))),
    }
}

pub fn write_rttm(path: &Path, session: &str, b: &UtteranceBoundaries) -> Result<()> {
    write_bytes(path, format_rttm(session, b).as_bytes())
}

pub fn format_index(index: &[EmbeddingIndex]) -> String {
    let mut out = String::new();
    for i in index {
        let _ = writeln!(out, "{} {} {} {} {}", i.mic, i.chunk, i.subchunk, i.local_speaker, i.duration);
    }
    out
}

pub fn parse_index(text: &str) -> Result<Vec<EmbeddingIndex>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_ascii_whitespace().collect();
        let bad = || Error::format("embedding index", format!("line {}: '{line}'", n + 1));
        if f.len() != 5 {
            return Err(bad());
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad());
        let duration: f64 = f[4].parse().map_err(|_| bad())?;
        if !(duration >= 0.0) {
            return Err(bad());
        }
        out.push(EmbeddingIndex {
            mic: int(f[0])?,
            chunk: int(f[1])?,
            subchunk: int(f[2])?,
            local_speaker: int(f[3])?,
            duration,
        });
    }
    Ok(out)
}

/// Reads `path` and its `.idx` sidecar.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let vectors = read_dmx(path)?;
    let idx_path = index_sidecar(path);
    let index = parse_index(&read_text(&idx_path)?).map_err(|e| with_path(e, &idx_path))?;
    EmbeddingSet::new(vectors, index).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::format("embedding set", format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    write_dmx(path, &set.vectors)?;
    write_bytes(&index_sidecar(path), format_index(&set.index).as_bytes())
}

/// `mic_id value_dB` per line, ordered to match `mic_ids`.
pub fn read_c50(path: &Path, mic_ids: &[String]) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    let mut values = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_ascii_whitespace().collect();
        let v = (f.len() == 2).then(|| f[1].parse::<f64>().ok()).flatten();
        let Some(v) = v.filter(|v| v.is_finite()) else {
            return Err(Error::format("C50 file", format!("{}: line {}: '{line}'", path.display(), n + 1)));
        };
        values.insert(f[0].to_string(), v);
    }
    mic_ids
        .iter()
        .map(|id| {
            values
                .get(id)
                .copied()
                .ok_or_else(|| Error::format("C50 file", format!("{}: no score for mic '{id}'", path.display())))
        })
        .collect()
}

pub fn format_c50(mic_ids: &[String], values: &[f64]) -> String {
    mic_ids
        .iter()
        .zip(values)
        .map(|(id, v)| format!("{id} {v}\n"))
        .collect()
}

/// `session count` per line.
pub fn parse_counts(text: &str) -> Result<BTreeMap<String, usize>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_ascii_whitespace().collect();
        let count = (f.len() == 2).then(|| f[1].parse::<usize>().ok()).flatten();
        let Some(count) = count else {
            return Err(Error::format("count file", format!("line {}: '{line}'", n + 1)));
        };
        if out.insert(f[0].to_string(), count).is_some() {
            return Err(Error::format("count file", format!("session '{}' listed twice", f[0])));
        }
    }
    Ok(out)
}

pub fn read_counts(path: &Path) -> Result<BTreeMap<String, usize>> {
    parse_counts(&read_text(path)?).map_err(|e| with_path(e, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dmx_round_trip_and_errors() {
        let m = array![[0.5, -1.25, 3.0], [0.0, 1e-3, 7.0]];
        let bytes = encode_dmx(&m);
        assert!(bytes.starts_with(b"DMX1 2 3 f32\n"));
        let back = decode_dmx(&bytes).unwrap();
        assert!(back.iter().zip(&m).all(|(a, b)| (a - b).abs() < 1e-6));
        assert!(decode_dmx(b"DMX1 2 3 f32\n\0\0").is_err());
        assert!(decode_dmx(b"DMX2 0 0 f32\n").is_err());
        assert_eq!(decode_dmx(b"DMX1 0 4 f32\n").unwrap().dim(), (0, 4));
    }

    #[test]
    fn rttm_round_trip() {
        let b = UtteranceBoundaries::new(vec![
            Segment { speaker: "spk2".into(), start: 0.5, end: 1.25 },
            Segment { speaker: "spk1".into(), start: 0.0, end: 2.0 },
        ])
        .unwrap();
        let text = format_rttm("S01", &b);
        assert_eq!(
            text.lines().next().unwrap(),
            "SPEAKER S01 1 0.000 2.000 <NA> <NA> spk1 <NA> <NA>"
        );
        let parsed = parse_rttm(&text).unwrap();
        assert_eq!(parsed["S01"], b);
        assert!(parse_rttm("SPEAKER x 1 a b").is_err());
    }

    #[test]
    fn index_and_counts() {
        let idx = parse_index("0 1 2 3 4.5\n\n1 0 0 0 0\n").unwrap();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx[0].local_speaker, 3);
        assert_eq!(parse_index(&format_index(&idx)).unwrap(), idx);
        assert!(parse_index("0 1 2\n").is_err());
        let c = parse_counts("a 3\nb 4\n").unwrap();
        assert_eq!(c["b"], 4);
        assert!(parse_counts("a 3\na 4\n").is_err());
    }
}
