//! Sparse execution mechanics: gather ACTIVE feature blocks, pad each with a
//! one-pixel halo drawn from its 8 neighbors, and scatter results back into a
//! dense map.
//!
//! Halo sourcing rule: an ACTIVE neighbor contributes pixels from the current
//! map, a REDUNDANT neighbor contributes pixels from the previous frame's
//! stage cache, and positions beyond the frame boundary contribute zeros —
//! exactly matching the dense path's zero padding. A one-pixel halo supports
//! exactly one 3x3 convolution, so callers re-pad before every 3x3 layer.

use crate::error::{Result, TtrError};
use crate::patching::SparsityMask;
use crate::tensor::FeatureMap;

/// Where a halo pixel was sourced from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Current,
    Cache,
    Zero,
}

/// An ACTIVE block padded to (n+2) x (n+2) with its one-pixel neighborhood.
/// `provenance` has one tag per spatial position of the payload; the n x n
/// interior is always `Current`.
#[derive(Debug, Clone)]
pub struct HaloBlock {
    pub cell: (usize, usize),
    pub payload: FeatureMap,
    pub provenance: Vec<Provenance>,
}

impl HaloBlock {
    #[inline]
    pub fn tag(&self, y: usize, x: usize) -> Provenance {
        self.provenance[y * self.payload.width + x]
    }
}

/// Ordered set of feature blocks, cells strictly row-major without duplicates.
#[derive(Debug, Clone)]
pub struct BlockSet {
    cells: Vec<(usize, usize)>,
    blocks: Vec<FeatureMap>,
}

impl BlockSet {
    pub fn new(cells: Vec<(usize, usize)>, blocks: Vec<FeatureMap>) -> Result<Self> {
        if cells.len() != blocks.len() {
            return Err(TtrError::Dimension(format!(
                "cell count {} does not match block count {}",
                cells.len(),
                blocks.len()
            )));
        }
        if cells.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TtrError::Invariant(
                "block set cells must be strictly row-major sorted".into(),
            ));
        }
        Ok(BlockSet { cells, blocks })
    }

    pub fn empty() -> Self {
        BlockSet {
            cells: Vec::new(),
            blocks: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn blocks(&self) -> &[FeatureMap] {
        &self.blocks
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &FeatureMap)> {
        self.cells.iter().zip(self.blocks.iter())
    }
}

fn check_geometry(map: &FeatureMap, mask: &SparsityMask, feat_block: usize) -> Result<()> {
    if feat_block == 0
        || !map.height.is_multiple_of(feat_block)
        || !map.width.is_multiple_of(feat_block)
        || map.height / feat_block != mask.grid_rows
        || map.width / feat_block != mask.grid_cols
    {
        return Err(TtrError::Dimension(format!(
            "map {}x{} with block {} does not match {}x{} mask grid",
            map.height, map.width, feat_block, mask.grid_rows, mask.grid_cols
        )));
    }
    Ok(())
}

/// Copy the ACTIVE blocks of `map` in row-major order.
pub fn gather_active(map: &FeatureMap, mask: &SparsityMask, feat_block: usize) -> Result<BlockSet> {
    check_geometry(map, mask, feat_block)?;
    let mut cells = Vec::new();
    let mut blocks = Vec::new();
    for r in 0..mask.grid_rows {
        for c in 0..mask.grid_cols {
            if mask.is_active(r, c) {
                cells.push((r, c));
                blocks.push(map.copy_block(r * feat_block, c * feat_block, feat_block));
            }
        }
    }
    BlockSet::new(cells, blocks)
}

/// Build an (n+2) x (n+2) halo-padded block for every block in `blocks`.
///
/// Border pixels come from the 8 neighbor cells: edge strips of length n from
/// edge-adjacent neighbors, single corner pixels from diagonal neighbors. A
/// pixel in an ACTIVE neighbor is read from `current_map`; in a REDUNDANT
/// neighbor from `prev_stage_cache`; beyond the frame boundary it is 0.0.
/// The current map is never read inside a REDUNDANT cell: that region may be
/// stale or unwritten mid-pass.
pub fn pad_with_halo(
    blocks: &BlockSet,
    current_map: &FeatureMap,
    prev_stage_cache: Option<&FeatureMap>,
    mask: &SparsityMask,
) -> Result<Vec<HaloBlock>> {
    if blocks.is_empty() {
        return Ok(Vec::new());
    }
    let n = blocks.blocks()[0].height;
    check_geometry(current_map, mask, n)?;
    if let Some(prev) = prev_stage_cache {
        if prev.channels != current_map.channels
            || prev.height != current_map.height
            || prev.width != current_map.width
        {
            return Err(TtrError::Dimension(format!(
                "stage cache {}x{}x{} does not match current map {}x{}x{}",
                prev.channels,
                prev.height,
                prev.width,
                current_map.channels,
                current_map.height,
                current_map.width
            )));
        }
    }

    let channels = current_map.channels;
    let rows = mask.grid_rows as isize;
    let cols = mask.grid_cols as isize;
    let mut out = Vec::with_capacity(blocks.len());

    for (&(r, c), block) in blocks.iter() {
        if block.height != n || block.width != n || block.channels != channels {
            return Err(TtrError::Dimension(
                "inconsistent block shapes in block set".into(),
            ));
        }
        let side = n + 2;
        let mut payload = FeatureMap::zeros(channels, side, side);
        let mut provenance = vec![Provenance::Zero; side * side];

        // Interior: the gathered block itself.
        payload.paste_block(block, 1, 1);
        for y in 1..=n {
            for x in 1..=n {
                provenance[y * side + x] = Provenance::Current;
            }
        }

        // Border: walk every halo position, resolve its neighbor cell.
        let base_y = (r * n) as isize;
        let base_x = (c * n) as isize;
        for hy in 0..side {
            for hx in 0..side {
                if hy >= 1 && hy <= n && hx >= 1 && hx <= n {
                    continue;
                }
                let gy = base_y + hy as isize - 1; // global feature coords
                let gx = base_x + hx as isize - 1;
                if gy < 0 || gy >= rows * n as isize || gx < 0 || gx >= cols * n as isize {
                    // Beyond the frame: stays zero, tagged Zero.
                    continue;
                }
                let nr = (gy / n as isize) as usize;
                let nc = (gx / n as isize) as usize;
                let (source, tag) = if mask.is_active(nr, nc) {
                    (current_map, Provenance::Current)
                } else {
                    match prev_stage_cache {
                        Some(prev) => (prev, Provenance::Cache),
                        None => {
                            return Err(TtrError::Invariant(format!(
                                "halo for cell ({r},{c}) needs cached features of redundant \
                                 neighbor ({nr},{nc}) but no stage cache is present"
                            )));
                        }
                    }
                };
                for ch in 0..channels {
                    payload.set(ch, hy, hx, source.at(ch, gy as usize, gx as usize));
                }
                provenance[hy * side + hx] = tag;
            }
        }

        out.push(HaloBlock {
            cell: (r, c),
            payload,
            provenance,
        });
    }
    Ok(out)
}

/// Scatter newly computed ACTIVE blocks and reused REDUNDANT blocks into a
/// dense map. The union of the two cell sets must cover the grid exactly once.
pub fn assemble(
    new_blocks: &BlockSet,
    reused_blocks: &BlockSet,
    mask: &SparsityMask,
    channels: usize,
    height: usize,
    width: usize,
) -> Result<FeatureMap> {
    let cells = mask.grid_rows * mask.grid_cols;
    if new_blocks.len() + reused_blocks.len() != cells {
        return Err(TtrError::Invariant(format!(
            "assemble coverage mismatch: {} new + {} reused != {} grid cells",
            new_blocks.len(),
            reused_blocks.len(),
            cells
        )));
    }
    if !height.is_multiple_of(mask.grid_rows) || !width.is_multiple_of(mask.grid_cols) {
        return Err(TtrError::Dimension(format!(
            "output {height}x{width} not divisible by {}x{} grid",
            mask.grid_rows, mask.grid_cols
        )));
    }
    let n = height / mask.grid_rows;
    if width / mask.grid_cols != n {
        return Err(TtrError::Dimension(
            "assemble output blocks are not square".into(),
        ));
    }

    let mut seen = vec![false; cells];
    let mut out = FeatureMap::zeros(channels, height, width);
    for set in [new_blocks, reused_blocks] {
        for (&(r, c), block) in set.iter() {
            if r >= mask.grid_rows || c >= mask.grid_cols {
                return Err(TtrError::Invariant(format!(
                    "assemble cell ({r},{c}) outside grid"
                )));
            }
            let idx = r * mask.grid_cols + c;
            if seen[idx] {
                return Err(TtrError::Invariant(format!(
                    "assemble cell ({r},{c}) covered twice"
                )));
            }
            seen[idx] = true;
            if block.channels != channels || block.height != n || block.width != n {
                return Err(TtrError::Dimension(format!(
                    "assemble block at ({r},{c}) is {}x{}x{}, expected {}x{}x{}",
                    block.channels, block.height, block.width, channels, n, n
                )));
            }
            out.paste_block(block, r * n, c * n);
        }
    }
    // seen is all-true here: counts matched and no duplicates were found.
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patching::CellState;
    use crate::tensor::{conv2d, Border, ConvWeights, Kernel};
    use proptest::prelude::*;

    fn pseudo_map(channels: usize, h: usize, w: usize, seed: u32) -> FeatureMap {
        let mut state = seed.wrapping_mul(2654435761).wrapping_add(99);
        let data = (0..channels * h * w)
            .map(|_| {
                state = state.wrapping_mul(1664525).wrapping_add(1013904223);
                ((state >> 8) as f32 / (1u32 << 24) as f32) * 2.0 - 1.0
            })
            .collect();
        FeatureMap::new(channels, h, w, data).unwrap()
    }

    fn mask_from(rows: usize, cols: usize, active: &[(usize, usize)]) -> SparsityMask {
        let mut states = vec![CellState::Redundant; rows * cols];
        for &(r, c) in active {
            states[r * cols + c] = CellState::Active;
        }
        SparsityMask::new(rows, cols, states).unwrap()
    }

    #[test]
    fn gather_all_redundant_is_empty() {
        let map = pseudo_map(2, 8, 8, 1);
        let mask = mask_from(2, 2, &[]);
        let set = gather_active(&map, &mask, 4).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn gather_all_active_tiles_and_roundtrips() {
        let map = pseudo_map(3, 8, 12, 2);
        let mask = SparsityMask::all_active(2, 3);
        let set = gather_active(&map, &mask, 4).unwrap();
        assert_eq!(set.len(), 6);
        let rebuilt = assemble(&set, &BlockSet::empty(), &mask, 3, 8, 12).unwrap();
        assert_eq!(rebuilt.data(), map.data());
    }

    #[test]
    fn gather_checkerboard_matches_slicing_oracle() {
        let map = pseudo_map(1, 8, 8, 3);
        let active: Vec<(usize, usize)> = (0..2)
            .flat_map(|r| (0..2).map(move |c| (r, c)))
            .filter(|&(r, c)| (r + c) % 2 == 0)
            .collect();
        let mask = mask_from(2, 2, &active);
        let set = gather_active(&map, &mask, 4).unwrap();
        assert_eq!(set.cells(), active.as_slice());
        for (&(r, c), block) in set.iter() {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(block.at(0, y, x), map.at(0, r * 4 + y, c * 4 + x));
                }
            }
        }
    }

    #[test]
    fn gather_geometry_mismatch_is_dimension_error() {
        let map = pseudo_map(1, 8, 8, 4);
        let mask = SparsityMask::all_active(3, 3);
        assert!(matches!(
            gather_active(&map, &mask, 4),
            Err(TtrError::Dimension(_))
        ));
    }

    #[test]
    fn single_cell_grid_has_all_zero_border() {
        let map = pseudo_map(2, 4, 4, 5);
        let mask = SparsityMask::all_active(1, 1);
        let set = gather_active(&map, &mask, 4).unwrap();
        let halos = pad_with_halo(&set, &map, None, &mask).unwrap();
        assert_eq!(halos.len(), 1);
        let h = &halos[0];
        for y in 0..6 {
            for x in 0..6 {
                let border = y == 0 || y == 5 || x == 0 || x == 5;
                if border {
                    assert_eq!(h.tag(y, x), Provenance::Zero);
                    for c in 0..2 {
                        assert_eq!(h.payload.at(c, y, x), 0.0);
                    }
                } else {
                    assert_eq!(h.tag(y, x), Provenance::Current);
                }
            }
        }
    }

    /// The load-bearing dense-equivalence kernel lemma: all-ACTIVE halo +
    /// NoPad conv per block + assemble is bit-identical to dense ZeroPad conv.
    #[test]
    fn halo_conv_assemble_equals_dense_conv_bit_exact() {
        let map = pseudo_map(3, 8, 12, 6);
        let w = ConvWeights::new(
            2,
            3,
            Kernel::Three,
            pseudo_map(1, 1, 54, 7).data().to_vec(),
            vec![0.3, -0.4],
        )
        .unwrap();
        let mask = SparsityMask::all_active(2, 3);
        let set = gather_active(&map, &mask, 4).unwrap();
        let halos = pad_with_halo(&set, &map, None, &mask).unwrap();

        let mut cells = Vec::new();
        let mut blocks = Vec::new();
        for h in &halos {
            cells.push(h.cell);
            blocks.push(conv2d(&h.payload, &w, Border::NoPad).unwrap());
        }
        let new_set = BlockSet::new(cells, blocks).unwrap();
        let sparse = assemble(&new_set, &BlockSet::empty(), &mask, 2, 8, 12).unwrap();

        let dense = conv2d(&map, &w, Border::ZeroPad).unwrap();
        assert_eq!(sparse.data(), dense.data());
    }

    #[test]
    fn redundant_neighbors_read_previous_cache() {
        // Two-frame static scenario: previous cache holds frame-0 features.
        let prev = pseudo_map(1, 8, 8, 8);
        // Current map only has the active cell written; the rest is garbage.
        let mut current = FeatureMap::zeros(1, 8, 8);
        for v in current.data_mut().iter_mut() {
            *v = f32::MAX; // poison: must never leak into a halo
        }
        let block = prev.copy_block(0, 0, 4);
        current.paste_block(&block, 0, 0);

        let mask = mask_from(2, 2, &[(0, 0)]);
        let set = gather_active(&current, &mask, 4).unwrap();
        let halos = pad_with_halo(&set, &current, Some(&prev), &mask).unwrap();
        let h = &halos[0];

        // Right edge strip comes from the redundant neighbor (0,1) in prev.
        for y in 1..=4 {
            assert_eq!(h.tag(y, 5), Provenance::Cache);
            assert_eq!(h.payload.at(0, y, 5), prev.at(0, y - 1, 4));
        }
        // Bottom edge from (1,0), corner from (1,1).
        for x in 1..=4 {
            assert_eq!(h.tag(5, x), Provenance::Cache);
            assert_eq!(h.payload.at(0, 5, x), prev.at(0, 4, x - 1));
        }
        assert_eq!(h.tag(5, 5), Provenance::Cache);
        assert_eq!(h.payload.at(0, 5, 5), prev.at(0, 4, 4));
        // Frame-boundary edges are zero.
        for k in 0..6 {
            assert_eq!(h.tag(0, k), Provenance::Zero);
            assert_eq!(h.tag(k, 0), Provenance::Zero);
        }
        // Provenance soundness: nothing was read from the poisoned region.
        assert!(h.payload.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn missing_cache_with_redundant_neighbor_is_invariant_violation() {
        let map = pseudo_map(1, 8, 8, 9);
        let mask = mask_from(2, 2, &[(0, 0)]);
        let set = gather_active(&map, &mask, 4).unwrap();
        assert!(matches!(
            pad_with_halo(&set, &map, None, &mask),
            Err(TtrError::Invariant(_))
        ));
    }

    #[test]
    fn assemble_all_redundant_returns_cache_content() {
        let cached = pseudo_map(2, 8, 8, 10);
        let mask = mask_from(2, 2, &[]);
        let mut cells = Vec::new();
        let mut blocks = Vec::new();
        for r in 0..2 {
            for c in 0..2 {
                cells.push((r, c));
                blocks.push(cached.copy_block(r * 4, c * 4, 4));
            }
        }
        let reused = BlockSet::new(cells, blocks).unwrap();
        let out = assemble(&BlockSet::empty(), &reused, &mask, 2, 8, 8).unwrap();
        assert_eq!(out.data(), cached.data());
    }

    #[test]
    fn assemble_mixed_constant_blocks() {
        let mask = mask_from(1, 2, &[(0, 1)]);
        let reused = BlockSet::new(
            vec![(0, 0)],
            vec![FeatureMap::new(1, 2, 2, vec![5.0; 4]).unwrap()],
        )
        .unwrap();
        let fresh = BlockSet::new(
            vec![(0, 1)],
            vec![FeatureMap::new(1, 2, 2, vec![9.0; 4]).unwrap()],
        )
        .unwrap();
        let out = assemble(&fresh, &reused, &mask, 1, 2, 4).unwrap();
        assert_eq!(out.data(), &[5.0, 5.0, 9.0, 9.0, 5.0, 5.0, 9.0, 9.0]);
    }

    #[test]
    fn assemble_gap_or_overlap_is_invariant_violation() {
        let mask = mask_from(1, 2, &[(0, 1)]);
        let one = BlockSet::new(
            vec![(0, 0)],
            vec![FeatureMap::new(1, 2, 2, vec![0.0; 4]).unwrap()],
        )
        .unwrap();
        // Gap: only one of two cells covered.
        assert!(matches!(
            assemble(&one, &BlockSet::empty(), &mask, 1, 2, 4),
            Err(TtrError::Invariant(_))
        ));
        // Overlap: same cell provided twice.
        let dup = BlockSet::new(
            vec![(0, 0)],
            vec![FeatureMap::new(1, 2, 2, vec![1.0; 4]).unwrap()],
        )
        .unwrap();
        assert!(matches!(
            assemble(&one, &dup, &mask, 1, 2, 4),
            Err(TtrError::Invariant(_))
        ));
    }

    proptest! {
        /// gather/assemble round-trip is lossless for any mask when reused
        /// blocks are taken from the same map.
        #[test]
        fn gather_assemble_roundtrip(seed in 0u32..2000, bits in 0u16..512) {
            let map = pseudo_map(2, 12, 12, seed);
            let states: Vec<CellState> = (0..9)
                .map(|i| if bits >> i & 1 == 1 { CellState::Active } else { CellState::Redundant })
                .collect();
            let mask = SparsityMask::new(3, 3, states).unwrap();
            let active = gather_active(&map, &mask, 4).unwrap();
            let mut cells = Vec::new();
            let mut blocks = Vec::new();
            for (r, c) in mask.redundant_cells() {
                cells.push((r, c));
                blocks.push(map.copy_block(r * 4, c * 4, 4));
            }
            let reused = BlockSet::new(cells, blocks).unwrap();
            let rebuilt = assemble(&active, &reused, &mask, 2, 12, 12).unwrap();
            prop_assert_eq!(rebuilt.data(), map.data());
        }
    }
}
