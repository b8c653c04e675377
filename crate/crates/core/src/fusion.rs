//! Fusion of several diarization hypotheses: rasterise to a shared frame
//! grid, align speaker labels to the first input with the Hungarian
//! algorithm, and keep frames that at least half of the inputs mark active.

use ndarray::Array2;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rayon::prelude::*;

use crate::diarize::{runs, Segment, UtteranceBoundaries};
use crate::error::{Error, Result};

pub const DEFAULT_RESOLUTION: f64 = 0.01;

/// Binary speaker activity on a regular frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGrid {
    /// Seconds per frame.
    pub resolution: f64,
    pub labels: Vec<String>,
    /// `[speaker, frame]`.
    pub active: Array2<bool>,
}

/// Frame index of a time, exact for times on the grid.
pub fn to_frame(time: f64, resolution: f64) -> usize {
    (time / resolution).round().max(0.0) as usize
}

impl FrameGrid {
    /// Frames `round(start / r) .. round(end / r)` of each segment are active.
    pub fn from_boundaries(b: &UtteranceBoundaries, resolution: f64, frames: usize) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(Error::invalid("grid resolution must be positive"));
        }
        let labels = b.speakers();
        let mut active = Array2::from_elem((labels.len(), frames), false);
        for s in &b.segments {
            let r = labels.binary_search(&s.speaker).expect("label collected above");
            let (a, e) = (to_frame(s.start, resolution), to_frame(s.end, resolution).min(frames));
            for t in a..e {
                active[[r, t]] = true;
            }
        }
        Ok(Self {
            resolution,
            labels,
            active,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.active.ncols()
    }

    pub fn to_boundaries(&self) -> UtteranceBoundaries {
        let mut segments = Vec::new();
        for (r, row) in self.active.rows().into_iter().enumerate() {
            for (a, b) in runs(&row.to_vec()) {
                segments.push(Segment {
                    speaker: self.labels[r].clone(),
                    start: a as f64 * self.resolution,
                    end: b as f64 * self.resolution,
                });
            }
        }
        segments.sort_by(|a, b| a.speaker.cmp(&b.speaker).then(a.start.total_cmp(&b.start)));
        UtteranceBoundaries { segments }
    }
}

/// Frames needed to hold every segment of every input.
pub fn horizon(inputs: &[&UtteranceBoundaries], resolution: f64) -> usize {
    inputs
        .iter()
        .map(|b| to_frame(b.duration(), resolution))
        .max()
        .unwrap_or(0)
}

/// Maximum-weight matching of rows to columns. Pairs with zero weight are
/// reported as unmatched.
pub fn max_weight_matching(weights: &[Vec<i64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    // kuhn_munkres needs at least as many columns as rows.
    let n = rows.max(cols);
    let square = Matrix::from_fn(rows, n, |(r, c)| if c < cols { weights[r][c] } else { 0 });
    let (_, assign) = kuhn_munkres(&square);
    assign
        .into_iter()
        .enumerate()
        .map(|(r, c)| (c < cols && weights[r][c] > 0).then_some(c))
        .collect()
}

fn overlap(a: ndarray::ArrayView1<bool>, b: ndarray::ArrayView1<bool>) -> i64 {
    a.iter().zip(b).filter(|(x, y)| **x && **y).count() as i64
}

/// Per input, the global label index of each of its speakers. Global labels
/// start as the first input's speakers; speakers of later inputs that match
/// nothing become new global labels.
pub fn align_speakers(grids: &[FrameGrid]) -> Result<Vec<Vec<usize>>> {
    let Some(anchor) = grids.first() else {
        return Err(Error::invalid("nothing to align"));
    };
    let frames = anchor.num_frames();
    if grids.iter().any(|g| g.num_frames() != frames || g.resolution != anchor.resolution) {
        return Err(Error::invalid("inputs must share the frame grid"));
    }
    // Activity that represents each global label during matching.
    let mut global: Vec<ndarray::Array1<bool>> = anchor.active.rows().into_iter().map(|r| r.to_owned()).collect();
    let mut out = vec![(0..anchor.labels.len()).collect::<Vec<_>>()];
    for g in &grids[1..] {
        let weights: Vec<Vec<i64>> = g
            .active
            .rows()
            .into_iter()
            .map(|row| global.iter().map(|gl| overlap(row, gl.view())).collect())
            .collect();
        let matched = max_weight_matching(&weights);
        let mut map = Vec::with_capacity(matched.len());
        for (r, m) in matched.into_iter().enumerate() {
            match m {
                Some(c) => map.push(c),
                None => {
                    map.push(global.len());
                    global.push(g.active.row(r).to_owned());
                }
            }
        }
        out.push(map);
    }
    Ok(out)
}

/// Grids relabelled to the global label set of `mapping`.
fn relabel(grids: &[FrameGrid], mapping: &[Vec<usize>], n_global: usize) -> Vec<Array2<bool>> {
    grids
        .par_iter()
        .zip(mapping)
        .map(|(g, map)| {
            let mut a = Array2::from_elem((n_global, g.num_frames()), false);
            for (r, &c) in map.iter().enumerate() {
                a.row_mut(c).assign(&g.active.row(r));
            }
            a
        })
        .collect()
}

/// Active where `2 * votes >= inputs`.
pub fn majority_vote(aligned: &[Array2<bool>]) -> Result<Array2<bool>> {
    let Some(first) = aligned.first() else {
        return Err(Error::invalid("nothing to vote on"));
    };
    if aligned.iter().any(|a| a.dim() != first.dim()) {
        return Err(Error::invalid("aligned inputs differ in shape"));
    }
    let n = aligned.len();
    let mut votes = Array2::<usize>::zeros(first.dim());
    for a in aligned {
        votes.zip_mut_with(a, |v, &x| *v += x as usize);
    }
    Ok(votes.mapv(|v| v > 0 && 2 * v >= n))
}

/// Fuses hypotheses; speakers keep the first input's labels, newly created
/// global speakers keep their own label unless it is taken.
pub fn fuse(inputs: &[UtteranceBoundaries], resolution: f64) -> Result<UtteranceBoundaries> {
    if inputs.is_empty() {
        return Err(Error::invalid("fusion needs at least one input"));
    }
    let refs: Vec<&UtteranceBoundaries> = inputs.iter().collect();
    let frames = horizon(&refs, resolution);
    let grids = inputs
        .par_iter()
        .map(|b| FrameGrid::from_boundaries(b, resolution, frames))
        .collect::<Result<Vec<_>>>()?;
    let mapping = align_speakers(&grids)?;
    let n_global = mapping.iter().flatten().map(|&c| c + 1).max().unwrap_or(0);

    let mut labels: Vec<Option<String>> = vec![None; n_global];
    for (g, map) in grids.iter().zip(&mapping) {
        for (r, &c) in map.iter().enumerate() {
            if labels[c].is_none() {
                let mut name = g.labels[r].clone();
                let mut k = 1;
                while labels.iter().flatten().any(|l| *l == name) {
                    name = format!("{}_{k}", g.labels[r]);
                    k += 1;
                }
                labels[c] = Some(name);
            }
        }
    }
    let voted = majority_vote(&relabel(&grids, &mapping, n_global))?;
    let fused = FrameGrid {
        resolution,
        labels: labels.into_iter().map(|l| l.expect("every global label has a source")).collect(),
        active: voted,
    };
    Ok(fused.to_boundaries())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matching_prefers_total_overlap() {
        let w = vec![vec![5, 4], vec![4, 0]];
        assert_eq!(max_weight_matching(&w), vec![Some(1), Some(0)]);
        let tall = vec![vec![1], vec![3], vec![0]];
        assert_eq!(max_weight_matching(&tall), vec![None, Some(0), None]);
        assert_eq!(max_weight_matching(&[vec![0, 0]]), vec![None]);
    }

    #[test]
    fn vote_tie_is_active() {
        let a = array![[true, false, true]];
        let b = array![[false, false, true]];
        assert_eq!(majority_vote(&[a.clone(), b]).unwrap(), array![[true, false, true]]);
        let c = array![[false, true, false]];
        assert_eq!(majority_vote(&[a.clone(), a, c]).unwrap(), array![[true, false, true]]);
    }

    #[test]
    fn grid_round_trip() {
        let b = UtteranceBoundaries::new(vec![
            Segment { speaker: "b".into(), start: 0.5, end: 1.25 },
            Segment { speaker: "a".into(), start: 0.0, end: 2.0 },
        ])
        .unwrap();
        let g = FrameGrid::from_boundaries(&b, 0.01, 200).unwrap();
        assert_eq!(g.labels, vec!["a", "b"]);
        assert_eq!(g.active.row(1).iter().filter(|v| **v).count(), 75);
        let back = g.to_boundaries();
        assert_eq!(back.segments.len(), 2);
        assert!((back.segments[1].end - 1.25).abs() < 1e-9);
    }
}
