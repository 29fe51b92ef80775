//! Frame-to-patch partitioning, inter-frame cosine similarity and the
//! per-frame sparsity mask.
//!
//! A frame is cut into a fixed grid of `block_size` x `block_size` patches.
//! Each patch (raw RGB, flattened channel-major) is compared to the same
//! cell of the previous frame; a cell whose similarity exceeds the threshold
//! tau is marked REDUNDANT and its cached features will be reused, otherwise
//! it is ACTIVE and gets recomputed. The first frame of a stream is always
//! all-ACTIVE.

use crate::error::{Result, TtrError};

/// Interleaved 8-bit RGB frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    rgb: Vec<u8>,
}

impl Frame {
    pub fn new(height: usize, width: usize, rgb: Vec<u8>) -> Result<Self> {
        if rgb.len() != 3 * height * width {
            return Err(TtrError::Dimension(format!(
                "frame byte length {} does not match 3x{}x{}",
                rgb.len(),
                height,
                width
            )));
        }
        Ok(Frame { height, width, rgb })
    }

    #[inline]
    pub fn rgb(&self) -> &[u8] {
        &self.rgb
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> (u8, u8, u8) {
        let i = 3 * (y * self.width + x);
        (self.rgb[i], self.rgb[i + 1], self.rgb[i + 2])
    }

    pub fn check_divisible(&self, block_size: usize) -> Result<()> {
        if block_size == 0
            || !self.height.is_multiple_of(block_size)
            || !self.width.is_multiple_of(block_size)
        {
            return Err(TtrError::Config(format!(
                "frame {}x{} is not divisible by block size {}",
                self.width, self.height, block_size
            )));
        }
        Ok(())
    }
}

/// One flattened b x b raw-RGB patch, channel-major then row then column,
/// length 3*b*b.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchVector {
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellState {
    Active,
    Redundant,
}

/// Per-block ACTIVE/REDUNDANT grid governing one frame's forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityMask {
    pub grid_rows: usize,
    pub grid_cols: usize,
    states: Vec<CellState>,
}

impl SparsityMask {
    pub fn new(grid_rows: usize, grid_cols: usize, states: Vec<CellState>) -> Result<Self> {
        if states.len() != grid_rows * grid_cols {
            return Err(TtrError::Dimension(format!(
                "mask state count {} does not match {}x{} grid",
                states.len(),
                grid_rows,
                grid_cols
            )));
        }
        Ok(SparsityMask {
            grid_rows,
            grid_cols,
            states,
        })
    }

    pub fn all_active(grid_rows: usize, grid_cols: usize) -> Self {
        SparsityMask {
            grid_rows,
            grid_cols,
            states: vec![CellState::Active; grid_rows * grid_cols],
        }
    }

    #[inline]
    pub fn state(&self, row: usize, col: usize) -> CellState {
        self.states[row * self.grid_cols + col]
    }

    #[inline]
    pub fn is_active(&self, row: usize, col: usize) -> bool {
        self.state(row, col) == CellState::Active
    }

    pub fn cells(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn active_count(&self) -> usize {
        self.states
            .iter()
            .filter(|s| **s == CellState::Active)
            .count()
    }

    pub fn redundant_count(&self) -> usize {
        self.cells() - self.active_count()
    }

    /// Row-major list of ACTIVE cell coordinates.
    pub fn active_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.grid_rows {
            for c in 0..self.grid_cols {
                if self.is_active(r, c) {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Row-major list of REDUNDANT cell coordinates.
    pub fn redundant_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.grid_rows {
            for c in 0..self.grid_cols {
                if !self.is_active(r, c) {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

/// Previous frame's raw patch vectors, one per grid cell.
#[derive(Debug, Clone)]
pub struct PatchCache {
    pub block_size: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub patches: Vec<PatchVector>,
}

impl PatchCache {
    /// Cache footprint in bytes (the patch vectors only).
    pub fn byte_size(&self) -> usize {
        self.patches.iter().map(|p| p.values.len() * 4).sum()
    }
}

/// Cut the frame into its patch grid, row-major. Each patch holds the raw
/// RGB bytes of its block as f32, channel-major, without normalization.
pub fn extract_patches(frame: &Frame, block_size: usize) -> Result<Vec<PatchVector>> {
    frame.check_divisible(block_size)?;
    let rows = frame.height / block_size;
    let cols = frame.width / block_size;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut values = Vec::with_capacity(3 * block_size * block_size);
            for ch in 0..3 {
                for y in 0..block_size {
                    for x in 0..block_size {
                        let py = r * block_size + y;
                        let px = c * block_size + x;
                        values.push(frame.rgb[3 * (py * frame.width + px) + ch] as f32);
                    }
                }
            }
            out.push(PatchVector { values });
        }
    }
    Ok(out)
}

/// Cosine similarity of two patch vectors, in [-1, 1].
///
/// Two zero-norm vectors are defined as identical (1.0): two all-black
/// patches must never be marked ACTIVE. Exactly one zero norm gives 0.0.
pub fn cosine_similarity(a: &PatchVector, b: &PatchVector) -> Result<f64> {
    if a.values.len() != b.values.len() {
        return Err(TtrError::Dimension(format!(
            "patch lengths differ: {} vs {}",
            a.values.len(),
            b.values.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.values.iter().zip(b.values.iter()) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 && nb == 0.0 {
        return Ok(1.0);
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Classify every cell of `frame` against the previous frame's patch cache.
///
/// A cell is ACTIVE iff its similarity is <= tau, REDUNDANT otherwise. With
/// no previous cache (first frame) every cell is ACTIVE. The returned cache
/// always holds the *current* frame's patches.
pub fn generate_mask(
    frame: &Frame,
    prev_cache: Option<&PatchCache>,
    tau: f64,
    block_size: usize,
) -> Result<(SparsityMask, PatchCache)> {
    if !(-1.0..=1.0).contains(&tau) {
        return Err(TtrError::Config(format!("tau {tau} outside [-1, 1]")));
    }
    let patches = extract_patches(frame, block_size)?;
    let grid_rows = frame.height / block_size;
    let grid_cols = frame.width / block_size;

    let states = match prev_cache {
        None => vec![CellState::Active; grid_rows * grid_cols],
        Some(prev) => {
            if prev.grid_rows != grid_rows
                || prev.grid_cols != grid_cols
                || prev.block_size != block_size
            {
                return Err(TtrError::StreamConsistency(format!(
                    "patch cache grid {}x{} (block {}) does not match frame grid {}x{} (block {})",
                    prev.grid_rows,
                    prev.grid_cols,
                    prev.block_size,
                    grid_rows,
                    grid_cols,
                    block_size
                )));
            }
            let mut states = Vec::with_capacity(grid_rows * grid_cols);
            for (cur, old) in patches.iter().zip(prev.patches.iter()) {
                let sim = cosine_similarity(cur, old)?;
                states.push(if sim <= tau {
                    CellState::Active
                } else {
                    CellState::Redundant
                });
            }
            states
        }
    };

    let mask = SparsityMask::new(grid_rows, grid_cols, states)?;
    let cache = PatchCache {
        block_size,
        grid_rows,
        grid_cols,
        patches,
    };
    Ok((mask, cache))
}

/// Element operations spent on similarity for one frame: dot product plus
/// the two norms, i.e. 3 multiply-adds per vector element per compared cell.
pub fn similarity_op_count(grid_rows: usize, grid_cols: usize, block_size: usize) -> u64 {
    (grid_rows * grid_cols) as u64 * 3 * (3 * block_size * block_size) as u64
}
