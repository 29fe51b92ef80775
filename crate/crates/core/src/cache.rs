//! Per-stream mutable state: the raw patch cache and the per-stage feature
//! caches, rotated once per frame.
//!
//! Caches are double-buffered: during a frame the previous caches are
//! immutable (the halo path reads them mid-pass); the fully assembled maps of
//! the current frame replace them atomically at rotation.

use crate::blockskip::BlockSet;
use crate::error::{Result, TtrError};
use crate::patching::{PatchCache, SparsityMask};
use crate::tensor::FeatureMap;

/// One cached checkpoint: the fully assembled activation after a conv unit,
/// plus the block edge length in feature pixels at that resolution.
#[derive(Debug, Clone)]
pub struct StageCheckpoint {
    pub map: FeatureMap,
    pub feat_block: usize,
}

/// All checkpoints of one frame, in backbone order. There is one entry per
/// 3x3 convolution unit; the last entry is the classifier head's input.
#[derive(Debug, Clone)]
pub struct StageCacheSet {
    pub per_stage: Vec<StageCheckpoint>,
}

impl StageCacheSet {
    pub fn byte_size(&self) -> usize {
        self.per_stage.iter().map(|s| s.map.data().len() * 4).sum()
    }
}

/// Expected shape of one checkpoint, captured when a stream starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub feat_block: usize,
}

/// Per-stream state. Both caches are ABSENT exactly until the first frame
/// has been processed and rotated in.
#[derive(Debug, Clone)]
pub struct StreamState {
    pub patch_cache: Option<PatchCache>,
    pub feature_caches: Option<StageCacheSet>,
    pub frame_index: u64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub block_size: usize,
    expected: Vec<CheckpointShape>,
}

impl StreamState {
    pub fn new(
        frame_height: usize,
        frame_width: usize,
        block_size: usize,
        expected: Vec<CheckpointShape>,
    ) -> Result<Self> {
        if block_size == 0
            || !frame_height.is_multiple_of(block_size)
            || !frame_width.is_multiple_of(block_size)
        {
            return Err(TtrError::Config(format!(
                "frame {frame_width}x{frame_height} not divisible by block size {block_size}"
            )));
        }
        Ok(StreamState {
            patch_cache: None,
            feature_caches: None,
            frame_index: 0,
            grid_rows: frame_height / block_size,
            grid_cols: frame_width / block_size,
            block_size,
            expected,
        })
    }

    pub fn expected_shapes(&self) -> &[CheckpointShape] {
        &self.expected
    }

    /// Total cache footprint in bytes once both caches are installed.
    pub fn cache_byte_size(&self) -> usize {
        self.feature_caches
            .as_ref()
            .map(|f| f.byte_size())
            .unwrap_or(0)
            + self
                .patch_cache
                .as_ref()
                .map(|p| p.byte_size())
                .unwrap_or(0)
    }
}

/// Install the caches produced by the frame just processed, discarding the
/// previous ones, and advance the frame index.
pub fn rotate(
    state: StreamState,
    new_patches: PatchCache,
    new_features: StageCacheSet,
) -> Result<StreamState> {
    if new_patches.grid_rows != state.grid_rows
        || new_patches.grid_cols != state.grid_cols
        || new_patches.block_size != state.block_size
    {
        return Err(TtrError::StreamConsistency(format!(
            "patch cache grid {}x{} (block {}) does not match stream {}x{} (block {})",
            new_patches.grid_rows,
            new_patches.grid_cols,
            new_patches.block_size,
            state.grid_rows,
            state.grid_cols,
            state.block_size
        )));
    }
    if new_features.per_stage.len() != state.expected.len() {
        return Err(TtrError::StreamConsistency(format!(
            "feature cache has {} checkpoints, stream expects {}",
            new_features.per_stage.len(),
            state.expected.len()
        )));
    }
    for (i, (got, want)) in new_features
        .per_stage
        .iter()
        .zip(state.expected.iter())
        .enumerate()
    {
        if got.map.channels != want.channels
            || got.map.height != want.height
            || got.map.width != want.width
            || got.feat_block != want.feat_block
        {
            return Err(TtrError::StreamConsistency(format!(
                "checkpoint {i} is {}x{}x{} (block {}), expected {}x{}x{} (block {})",
                got.map.channels,
                got.map.height,
                got.map.width,
                got.feat_block,
                want.channels,
                want.height,
                want.width,
                want.feat_block
            )));
        }
    }
    Ok(StreamState {
        patch_cache: Some(new_patches),
        feature_caches: Some(new_features),
        frame_index: state.frame_index + 1,
        grid_rows: state.grid_rows,
        grid_cols: state.grid_cols,
        block_size: state.block_size,
        expected: state.expected,
    })
}

/// Copy, for every REDUNDANT cell, the corresponding feature block from the
/// cached map of checkpoint `stage`.
pub fn read_redundant_blocks(
    caches: &StageCacheSet,
    stage: usize,
    mask: &SparsityMask,
) -> Result<BlockSet> {
    let ckpt = caches.per_stage.get(stage).ok_or_else(|| {
        TtrError::Invariant(format!(
            "stage {stage} out of range ({} checkpoints)",
            caches.per_stage.len()
        ))
    })?;
    let n = ckpt.feat_block;
    if ckpt.map.height != mask.grid_rows * n || ckpt.map.width != mask.grid_cols * n {
        return Err(TtrError::Dimension(format!(
            "cached map {}x{} (block {}) does not match {}x{} mask grid",
            ckpt.map.height, ckpt.map.width, n, mask.grid_rows, mask.grid_cols
        )));
    }
    let mut cells = Vec::new();
    let mut blocks = Vec::new();
    for (r, c) in mask.redundant_cells() {
        cells.push((r, c));
        blocks.push(ckpt.map.copy_block(r * n, c * n, n));
    }
    BlockSet::new(cells, blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patching::{CellState, PatchVector};

    fn pseudo_map(channels: usize, h: usize, w: usize, seed: u32) -> FeatureMap {
        let mut state = seed.wrapping_mul(2654435761).wrapping_add(7);
        let data = (0..channels * h * w)
            .map(|_| {
                state = state.wrapping_mul(1664525).wrapping_add(1013904223);
                (state >> 8) as f32 / (1u32 << 24) as f32
            })
            .collect();
        FeatureMap::new(channels, h, w, data).unwrap()
    }

    fn dummy_patches(grid_rows: usize, grid_cols: usize, block_size: usize) -> PatchCache {
        PatchCache {
            block_size,
            grid_rows,
            grid_cols,
            patches: (0..grid_rows * grid_cols)
                .map(|i| PatchVector {
                    values: vec![i as f32; 3 * block_size * block_size],
                })
                .collect(),
        }
    }

    fn shapes() -> Vec<CheckpointShape> {
        vec![CheckpointShape {
            channels: 2,
            height: 4,
            width: 4,
            feat_block: 2,
        }]
    }

    fn features(seed: u32) -> StageCacheSet {
        StageCacheSet {
            per_stage: vec![StageCheckpoint {
                map: pseudo_map(2, 4, 4, seed),
                feat_block: 2,
            }],
        }
    }

    #[test]
    fn fresh_state_has_no_caches() {
        let state = StreamState::new(8, 8, 4, shapes()).unwrap();
        assert!(state.patch_cache.is_none());
        assert!(state.feature_caches.is_none());
        assert_eq!(state.frame_index, 0);
    }

    #[test]
    fn rotate_installs_caches_and_increments() {
        let state = StreamState::new(8, 8, 4, shapes()).unwrap();
        let rotated = rotate(state, dummy_patches(2, 2, 4), features(1)).unwrap();
        assert_eq!(rotated.frame_index, 1);
        assert!(rotated.patch_cache.is_some());
        assert!(rotated.feature_caches.is_some());
    }

    #[test]
    fn second_rotate_replaces_caches() {
        let state = StreamState::new(8, 8, 4, shapes()).unwrap();
        let state = rotate(state, dummy_patches(2, 2, 4), features(1)).unwrap();
        let state = rotate(state, dummy_patches(2, 2, 4), features(2)).unwrap();
        assert_eq!(state.frame_index, 2);
        let current = &state.feature_caches.as_ref().unwrap().per_stage[0].map;
        assert_eq!(current.data(), features(2).per_stage[0].map.data());
    }

    #[test]
    fn rotate_rejects_shape_mismatch() {
        let state = StreamState::new(8, 8, 4, shapes()).unwrap();
        let bad = StageCacheSet {
            per_stage: vec![StageCheckpoint {
                map: pseudo_map(2, 8, 8, 3),
                feat_block: 4,
            }],
        };
        assert!(matches!(
            rotate(state, dummy_patches(2, 2, 4), bad),
            Err(TtrError::StreamConsistency(_))
        ));
    }

    #[test]
    fn read_redundant_all_active_is_empty() {
        let caches = features(4);
        let mask = SparsityMask::all_active(2, 2);
        let set = read_redundant_blocks(&caches, 0, &mask).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn read_redundant_all_redundant_tiles_cache() {
        let caches = features(5);
        let mask = SparsityMask::new(2, 2, vec![CellState::Redundant; 4]).unwrap();
        let set = read_redundant_blocks(&caches, 0, &mask).unwrap();
        assert_eq!(set.len(), 4);
        let rebuilt = crate::blockskip::assemble(&BlockSet::empty(), &set, &mask, 2, 4, 4).unwrap();
        assert_eq!(rebuilt.data(), caches.per_stage[0].map.data());
    }

    #[test]
    fn read_redundant_single_cell_matches_slice() {
        let caches = features(6);
        let mut states = vec![CellState::Active; 4];
        states[3] = CellState::Redundant; // cell (1,1)
        let mask = SparsityMask::new(2, 2, states).unwrap();
        let set = read_redundant_blocks(&caches, 0, &mask).unwrap();
        assert_eq!(set.cells(), &[(1, 1)]);
        let map = &caches.per_stage[0].map;
        for c in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    assert_eq!(set.blocks()[0].at(c, y, x), map.at(c, 2 + y, 2 + x));
                }
            }
        }
    }

    #[test]
    fn memory_bound_is_constant_across_frames() {
        let state = StreamState::new(8, 8, 4, shapes()).unwrap();
        let state = rotate(state, dummy_patches(2, 2, 4), features(1)).unwrap();
        let first = state.cache_byte_size();
        // 2x4x4 floats + 4 patches of 48 floats.
        assert_eq!(first, 2 * 4 * 4 * 4 + 4 * 48 * 4);
        let state = rotate(state, dummy_patches(2, 2, 4), features(9)).unwrap();
        assert_eq!(state.cache_byte_size(), first);
    }
}
