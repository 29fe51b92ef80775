//! Binary PPM (P6) frames and PGM (P5) label maps, both maxval 255.
//!
//! Readers are strict: unknown magic, non-255 maxval, short pixel data and
//! trailing bytes are all typed errors with a byte offset, never a crash.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Result, TtrError};
use crate::patching::Frame;

/// A decoded label map: one class index byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: impl Into<String>) -> TtrError {
        TtrError::Parse {
            path: self.path.display().to_string(),
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_space_and_comments();
        if self.pos >= self.data.len() {
            return Err(self.err("unexpected end of header"));
        }
        let start = self.pos;
        while self.pos < self.data.len()
            && !matches!(self.data[self.pos], b' ' | b'\t' | b'\r' | b'\n' | b'#')
        {
            self.pos += 1;
        }
        Ok(&self.data[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        let s = std::str::from_utf8(tok).map_err(|_| self.err(format!("{what} is not ASCII")))?;
        s.parse::<usize>()
            .map_err(|_| self.err(format!("{what} {s:?} is not a number")))
    }
}

fn parse_pnm(
    path: &Path,
    data: &[u8],
    magic: &str,
    samples_per_pixel: usize,
) -> Result<(usize, usize, usize)> {
    let mut cur = Cursor { data, pos: 0, path };
    let found = cur.token()?;
    if found != magic.as_bytes() {
        return Err(TtrError::BadMagic {
            path: path.display().to_string(),
            expected: magic.to_string(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(TtrError::UnsupportedDepth {
            path: path.display().to_string(),
            maxval: maxval as u32,
        });
    }
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if cur.pos >= data.len() || !matches!(data[cur.pos], b' ' | b'\t' | b'\r' | b'\n') {
        return Err(cur.err("missing whitespace before pixel data"));
    }
    cur.pos += 1;

    let expected = width * height * samples_per_pixel;
    let available = data.len() - cur.pos;
    if available < expected {
        return Err(TtrError::Parse {
            path: path.display().to_string(),
            offset: data.len(),
            reason: format!("pixel data truncated: need {expected} bytes, found {available}"),
        });
    }
    if available > expected {
        return Err(TtrError::Parse {
            path: path.display().to_string(),
            offset: cur.pos + expected,
            reason: format!("{} trailing bytes after pixel data", available - expected),
        });
    }
    Ok((width, height, cur.pos))
}

pub fn read_ppm(path: &Path) -> Result<Frame> {
    let data = fs::read(path).map_err(|e| TtrError::io(path, e))?;
    let (width, height, start) = parse_pnm(path, &data, "P6", 3)?;
    Frame::new(height, width, data[start..].to_vec())
}

pub fn write_ppm(frame: &Frame, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(frame.rgb().len() + 32);
    write!(out, "P6\n{} {}\n255\n", frame.width, frame.height).expect("vec write");
    out.extend_from_slice(frame.rgb());
    fs::write(path, out).map_err(|e| TtrError::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<LabelMap> {
    let data = fs::read(path).map_err(|e| TtrError::io(path, e))?;
    let (width, height, start) = parse_pnm(path, &data, "P5", 1)?;
    Ok(LabelMap {
        height,
        width,
        labels: data[start..].to_vec(),
    })
}

/// Write a label map as binary PGM, one byte per pixel = class index.
/// Class indices are u8 here by construction; the 256-class ceiling is
/// enforced where class counts are configured.
pub fn write_pgm(labels: &[u8], height: usize, width: usize, path: &Path) -> Result<()> {
    if labels.len() != height * width {
        return Err(TtrError::Dimension(format!(
            "label count {} does not match {}x{}",
            labels.len(),
            width,
            height
        )));
    }
    let mut out = Vec::with_capacity(labels.len() + 32);
    write!(out, "P5\n{width} {height}\n255\n").expect("vec write");
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| TtrError::io(path, e))
}

/// Frame file name for index `i`: zero-padded six digits plus extension.
pub fn frame_file_name(index: usize, ext: &str) -> String {
    format!("{index:06}.{ext}")
}

/// An ordered, validated list of frame files: named `NNNNNN.ppm`,
/// zero-padded, consecutive from 000000.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    paths: Vec<PathBuf>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }

    /// Lazily decode frames in order, enforcing constant geometry.
    pub fn iter(&self) -> FrameIter<'_> {
        FrameIter {
            paths: self.paths.iter(),
            geometry: None,
        }
    }

    /// Decode the whole sequence eagerly.
    pub fn load_all(&self) -> Result<Vec<Frame>> {
        self.iter().collect()
    }
}

pub struct FrameIter<'a> {
    paths: std::slice::Iter<'a, PathBuf>,
    geometry: Option<(usize, usize)>,
}

impl<'a> Iterator for FrameIter<'a> {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        let path = self.paths.next()?;
        let frame = match read_ppm(path) {
            Ok(f) => f,
            Err(e) => return Some(Err(e)),
        };
        match self.geometry {
            None => self.geometry = Some((frame.height, frame.width)),
            Some((h, w)) => {
                if frame.height != h || frame.width != w {
                    return Some(Err(TtrError::StreamConsistency(format!(
                        "geometry drift at {}: {}x{} after {}x{}",
                        path.display(),
                        frame.width,
                        frame.height,
                        w,
                        h
                    ))));
                }
            }
        }
        Some(Ok(frame))
    }
}

/// Discover the frame files of a sequence directory.
pub fn read_frame_sequence(dir: &Path) -> Result<FrameSequence> {
    let entries = fs::read_dir(dir).map_err(|e| TtrError::io(dir, e))?;
    let mut names: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| TtrError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".ppm") {
            names.push(name);
        }
    }
    if names.is_empty() {
        return Err(TtrError::Parse {
            path: dir.display().to_string(),
            offset: 0,
            reason: "no .ppm frames found".into(),
        });
    }
    names.sort();
    for (i, name) in names.iter().enumerate() {
        let expected = frame_file_name(i, "ppm");
        if *name != expected {
            return Err(TtrError::Parse {
                path: dir.join(name).display().to_string(),
                offset: 0,
                reason: format!("frame files must be consecutive, expected {expected}"),
            });
        }
    }
    Ok(FrameSequence {
        paths: names.into_iter().map(|n| dir.join(n)).collect(),
    })
}
