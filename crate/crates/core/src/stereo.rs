//! Stereo pair extraction and the output composers (side-by-side, red-cyan
//! anaglyph, preview grid).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::io::write_frame_sequence;
use crate::imaging::FrameBuffer;
use crate::matrix::FrameMatrix;

pub const OUTPUT_PATTERN: &str = "f###.png";
/// Separator width in the preview grid.
pub const GRID_GAP: usize = 2;
const GRID_GAP_VALUE: f32 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct StereoPairSequence {
    pub left: Vec<FrameBuffer>,
    pub right: Vec<FrameBuffer>,
}

impl StereoPairSequence {
    pub fn new(left: Vec<FrameBuffer>, right: Vec<FrameBuffer>) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::DimensionMismatch {
                expected: (left.len(), 0),
                found: (right.len(), 0),
                context: "left/right sequence lengths".into(),
            });
        }
        for (l, r) in left.iter().zip(&right) {
            if l.dims() != r.dims() || l.channels() != r.channels() {
                return Err(Error::DimensionMismatch {
                    expected: l.dims(),
                    found: r.dims(),
                    context: "stereo pair frame".into(),
                });
            }
        }
        Ok(Self { left, right })
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum StereoStatus {
    Complete,
    /// The right column still has disoccluded pixels.
    Uninpainted { unknown_pixels: usize },
}

/// Left = column 0, right = column V.
pub fn extract_stereo(fm: &FrameMatrix) -> (StereoPairSequence, StereoStatus) {
    let right_col = fm.n_views() - 1;
    let left: Vec<FrameBuffer> = fm.column(0).into_iter().cloned().collect();
    let right: Vec<FrameBuffer> = fm.column(right_col).into_iter().cloned().collect();
    let unknown = fm.column_unknown_count(right_col);
    let status = if unknown == 0 { StereoStatus::Complete } else { StereoStatus::Uninpainted { unknown_pixels: unknown } };
    (StereoPairSequence { left, right }, status)
}

/// Left and right side by side, width doubled.
pub fn compose_sbs(pair: &StereoPairSequence) -> Result<Vec<FrameBuffer>> {
    pair.left
        .iter()
        .zip(&pair.right)
        .map(|(l, r)| {
            check_same(l, r)?;
            let (w, h, c) = (l.width(), l.height(), l.channels());
            let mut data = Vec::with_capacity(2 * w * h * c);
            for y in 0..h {
                data.extend_from_slice(&l.data()[y * w * c..(y + 1) * w * c]);
                data.extend_from_slice(&r.data()[y * w * c..(y + 1) * w * c]);
            }
            FrameBuffer::new(2 * w, h, c, data)
        })
        .collect()
}

/// Inverse of [`compose_sbs`].
pub fn split_sbs(frames: &[FrameBuffer]) -> Result<StereoPairSequence> {
    let mut left = Vec::with_capacity(frames.len());
    let mut right = Vec::with_capacity(frames.len());
    for f in frames {
        if f.width() % 2 != 0 {
            return Err(Error::InvalidArgument(format!("side-by-side frame of odd width {}", f.width())));
        }
        let (w, h, c) = (f.width() / 2, f.height(), f.channels());
        let (mut l, mut r) = (Vec::with_capacity(w * h * c), Vec::with_capacity(w * h * c));
        for row in f.data().chunks_exact(2 * w * c) {
            l.extend_from_slice(&row[..w * c]);
            r.extend_from_slice(&row[w * c..]);
        }
        left.push(FrameBuffer::new(w, h, c, l)?);
        right.push(FrameBuffer::new(w, h, c, r)?);
    }
    Ok(StereoPairSequence { left, right })
}

/// Red-cyan anaglyph: red from the left eye, green and blue from the right.
pub fn compose_anaglyph(pair: &StereoPairSequence) -> Result<Vec<FrameBuffer>> {
    pair.left
        .iter()
        .zip(&pair.right)
        .map(|(l, r)| {
            check_same(l, r)?;
            if l.channels() != 3 {
                return Err(Error::InvalidArgument("anaglyph needs RGB frames".into()));
            }
            let mut out = r.clone();
            for (o, px) in out.data_mut().chunks_exact_mut(3).zip(l.data().chunks_exact(3)) {
                o[0] = px[0];
            }
            Ok(out)
        })
        .collect()
}

fn check_same(l: &FrameBuffer, r: &FrameBuffer) -> Result<()> {
    if l.dims() != r.dims() || l.channels() != r.channels() {
        return Err(Error::DimensionMismatch { expected: l.dims(), found: r.dims(), context: "stereo pair frame".into() });
    }
    Ok(())
}

/// Top-left corner of tile `(row, col)` in a preview grid of `w x h` tiles.
pub fn tile_origin(row: usize, col: usize, w: usize, h: usize) -> (usize, usize) {
    (GRID_GAP + col * (w + GRID_GAP), GRID_GAP + row * (h + GRID_GAP))
}

/// Tiles the selected cells (`frames` x `views`) with white separators and
/// a border of the same width.
pub fn render_preview_grid(fm: &FrameMatrix, frames: &[usize], views: &[usize]) -> Result<FrameBuffer> {
    if let Some(&s) = frames.iter().find(|&&s| s >= fm.n_frames()) {
        return Err(Error::InvalidArgument(format!("frame {s} outside a {}-frame matrix", fm.n_frames())));
    }
    if let Some(&v) = views.iter().find(|&&v| v >= fm.n_views()) {
        return Err(Error::InvalidArgument(format!("view {v} outside a {}-view matrix", fm.n_views())));
    }
    let (w, h) = fm.dims();
    let c = fm.frame(0, 0).channels();
    let gw = views.len() * (w + GRID_GAP) + GRID_GAP;
    let gh = frames.len() * (h + GRID_GAP) + GRID_GAP;
    let mut out = FrameBuffer::filled(gw, gh, &vec![GRID_GAP_VALUE; c]);
    for (i, &s) in frames.iter().enumerate() {
        for (j, &v) in views.iter().enumerate() {
            let (ox, oy) = tile_origin(i, j, w, h);
            let tile = fm.frame(s, v);
            for y in 0..h {
                let src = &tile.data()[y * w * c..(y + 1) * w * c];
                let start = ((oy + y) * gw + ox) * c;
                out.data_mut()[start..start + w * c].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

/// Writes `left/`, `right/`, `sbs/` and `anaglyph/` PNG sequences.
pub fn write_stereo_outputs(out_dir: impl AsRef<Path>, pair: &StereoPairSequence) -> Result<()> {
    let out = out_dir.as_ref();
    write_frame_sequence(out.join("left"), OUTPUT_PATTERN, &pair.left)?;
    write_frame_sequence(out.join("right"), OUTPUT_PATTERN, &pair.right)?;
    write_frame_sequence(out.join("sbs"), OUTPUT_PATTERN, &compose_sbs(pair)?)?;
    write_frame_sequence(out.join("anaglyph"), OUTPUT_PATTERN, &compose_anaglyph(pair)?)?;
    Ok(())
}
