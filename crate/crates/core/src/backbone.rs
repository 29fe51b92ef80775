//! The staged segmentation CNN, runnable two ways: a dense reference pass
//! and the sparse pass that skips backbone computation for REDUNDANT blocks
//! and reuses cached per-stage features.
//!
//! Execution is decomposed into conv units: one 3x3 convolution plus its relu
//! and optional trailing 2x2 average pool. A one-pixel halo survives exactly
//! one 3x3 convolution, so the sparse path re-gathers and re-pads before
//! every unit, and one checkpoint per unit is cached for the next frame. The
//! final checkpoint (the head's input) feeds a dense 1x1 classifier, which
//! keeps logits over reused cells bit-identical to the previous frame's.

use std::time::Instant;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blockskip::{assemble, gather_active, pad_with_halo, BlockSet};
use crate::cache::{
    read_redundant_blocks, rotate, CheckpointShape, StageCacheSet, StageCheckpoint, StreamState,
};
use crate::error::{Result, TtrError};
use crate::metrics::{mac_count, FrameStats};
use crate::patching::{generate_mask, similarity_op_count, Frame, SparsityMask};
use crate::tensor::{
    avg_pool2, conv2d, relu, upsample_nearest, Border, ConvWeights, FeatureMap, Kernel,
};

/// Architecture description without weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneDesc {
    pub stem_channels: usize,
    pub stem_pool: bool,
    pub stages: Vec<StageDesc>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageDesc {
    pub out_channels: usize,
    pub convs: usize,
    pub pool: bool,
}

impl BackboneDesc {
    /// The default backbone: stem 3->16 conv+relu+pool, stage of two 3x3
    /// convs to 32 with pool, stage of two 3x3 convs to 64 with pool, and a
    /// 1x1 head. Total downsampling factor 8.
    pub fn reference(num_classes: usize) -> Self {
        BackboneDesc {
            stem_channels: 16,
            stem_pool: true,
            stages: vec![
                StageDesc {
                    out_channels: 32,
                    convs: 2,
                    pool: true,
                },
                StageDesc {
                    out_channels: 64,
                    convs: 2,
                    pool: true,
                },
            ],
            num_classes,
        }
    }

    pub fn total_pool_factor(&self) -> usize {
        let mut f = if self.stem_pool { 2 } else { 1 };
        for s in &self.stages {
            if s.pool {
                f *= 2;
            }
        }
        f
    }

    /// Conv layer list in declared order: (kernel, out_channels, in_channels).
    /// The final entry is the 1x1 head.
    pub fn layer_dims(&self) -> Vec<(Kernel, usize, usize)> {
        let mut out = vec![(Kernel::Three, self.stem_channels, 3)];
        let mut c = self.stem_channels;
        for s in &self.stages {
            for i in 0..s.convs {
                let cin = if i == 0 { c } else { s.out_channels };
                out.push((Kernel::Three, s.out_channels, cin));
            }
            c = s.out_channels;
        }
        out.push((Kernel::One, self.num_classes, c));
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem_channels == 0 {
            return Err(TtrError::Config("stem must have output channels".into()));
        }
        if self.num_classes == 0 || self.num_classes > 256 {
            return Err(TtrError::Config(format!(
                "num_classes {} outside 1..=256",
                self.num_classes
            )));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.out_channels == 0 || s.convs == 0 {
                return Err(TtrError::Config(format!(
                    "stage {i} must have channels and at least one conv"
                )));
            }
        }
        Ok(())
    }
}

/// One stage: 3x3 conv layers followed by an optional 2x2 average pool.
#[derive(Debug, Clone)]
pub struct Stage {
    pub convs: Vec<ConvWeights>,
    pub pool: bool,
}

/// Fully populated backbone: stem, stages, 1x1 head.
#[derive(Debug, Clone)]
pub struct BackboneSpec {
    pub stem: ConvWeights,
    pub stem_pool: bool,
    pub stages: Vec<Stage>,
    pub head: ConvWeights,
    pub num_classes: usize,
}

/// Borrowed view of one conv unit of the flattened pipeline.
pub struct UnitView<'a> {
    pub weights: &'a ConvWeights,
    pub pool: bool,
    /// Cumulative downsampling factor at the unit's input.
    pub in_scale: usize,
    /// Cumulative downsampling factor at the unit's output.
    pub out_scale: usize,
}

impl BackboneSpec {
    /// Deterministically initialize weights and biases from a 64-bit seed,
    /// uniform in (-0.1, 0.1). The raw generator stream is mapped explicitly
    /// so files produced on different machines are identical.
    pub fn from_seed(desc: &BackboneDesc, seed: u64) -> Result<Self> {
        desc.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = move || (rng.next_u32() as f64 / 4294967296.0 * 0.2 - 0.1) as f32;
        let mut build = |kernel: Kernel, out_c: usize, in_c: usize| -> Result<ConvWeights> {
            let k = kernel.size();
            let weights = (0..out_c * in_c * k * k).map(|_| next()).collect();
            let bias = (0..out_c).map(|_| next()).collect();
            ConvWeights::new(out_c, in_c, kernel, weights, bias)
        };

        let dims = desc.layer_dims();
        let mut layers = Vec::with_capacity(dims.len());
        for (kernel, out_c, in_c) in dims {
            layers.push(build(kernel, out_c, in_c)?);
        }
        Self::from_layers(desc, layers)
    }

    /// Assemble a spec from conv layers in declared order (stem, stage convs,
    /// head), validating dimensions against the description.
    pub fn from_layers(desc: &BackboneDesc, mut layers: Vec<ConvWeights>) -> Result<Self> {
        desc.validate()?;
        let expected = desc.layer_dims();
        if layers.len() != expected.len() {
            return Err(TtrError::Config(format!(
                "expected {} conv layers, got {}",
                expected.len(),
                layers.len()
            )));
        }
        for (i, ((kernel, out_c, in_c), layer)) in expected.iter().zip(layers.iter()).enumerate() {
            if layer.kernel != *kernel || layer.out_channels != *out_c || layer.in_channels != *in_c
            {
                return Err(TtrError::Config(format!(
                    "layer {i} is {:?} {}->{}, expected {:?} {}->{}",
                    layer.kernel, layer.in_channels, layer.out_channels, kernel, in_c, out_c
                )));
            }
        }
        let head = layers.pop().expect("validated non-empty");
        let stem = layers.remove(0);
        let mut stages = Vec::with_capacity(desc.stages.len());
        let mut rest = layers.into_iter();
        for sd in &desc.stages {
            let convs: Vec<ConvWeights> = rest.by_ref().take(sd.convs).collect();
            stages.push(Stage {
                convs,
                pool: sd.pool,
            });
        }
        Ok(BackboneSpec {
            stem,
            stem_pool: desc.stem_pool,
            stages,
            head,
            num_classes: desc.num_classes,
        })
    }

    pub fn total_pool_factor(&self) -> usize {
        let mut f = if self.stem_pool { 2 } else { 1 };
        for s in &self.stages {
            if s.pool {
                f *= 2;
            }
        }
        f
    }

    /// Flattened conv units in execution order.
    pub fn units(&self) -> Vec<UnitView<'_>> {
        let mut units = Vec::new();
        let mut scale = 1usize;
        let in_scale = scale;
        if self.stem_pool {
            scale *= 2;
        }
        units.push(UnitView {
            weights: &self.stem,
            pool: self.stem_pool,
            in_scale,
            out_scale: scale,
        });
        for stage in &self.stages {
            let last = stage.convs.len() - 1;
            for (i, conv) in stage.convs.iter().enumerate() {
                let pool = stage.pool && i == last;
                let in_scale = scale;
                if pool {
                    scale *= 2;
                }
                units.push(UnitView {
                    weights: conv,
                    pool,
                    in_scale,
                    out_scale: scale,
                });
            }
        }
        units
    }

    /// Conv layers in declared order, head last (the weight-file order).
    pub fn layers(&self) -> Vec<&ConvWeights> {
        let mut out = vec![&self.stem];
        for s in &self.stages {
            out.extend(s.convs.iter());
        }
        out.push(&self.head);
        out
    }

    /// Expected checkpoint shapes for a stream of the given geometry.
    pub fn checkpoint_shapes(
        &self,
        frame_height: usize,
        frame_width: usize,
        block_size: usize,
    ) -> Result<Vec<CheckpointShape>> {
        self.validate_geometry(frame_height, frame_width, block_size)?;
        Ok(self
            .units()
            .iter()
            .map(|u| CheckpointShape {
                channels: u.weights.out_channels,
                height: frame_height / u.out_scale,
                width: frame_width / u.out_scale,
                feat_block: block_size / u.out_scale,
            })
            .collect())
    }

    /// Check that a frame geometry and block size are compatible with this
    /// backbone: the frame tiles into blocks and the block size survives
    /// every pooling step.
    pub fn validate_geometry(
        &self,
        frame_height: usize,
        frame_width: usize,
        block_size: usize,
    ) -> Result<()> {
        if block_size == 0
            || !frame_height.is_multiple_of(block_size)
            || !frame_width.is_multiple_of(block_size)
        {
            return Err(TtrError::Config(format!(
                "frame {frame_width}x{frame_height} not divisible by block size {block_size}"
            )));
        }
        let factor = self.total_pool_factor();
        if !block_size.is_multiple_of(factor) {
            return Err(TtrError::Config(format!(
                "block size {block_size} not divisible by total pool factor {factor}"
            )));
        }
        for (i, u) in self.units().iter().enumerate() {
            let n = block_size / u.in_scale;
            if u.pool && !n.is_multiple_of(2) {
                return Err(TtrError::Config(format!(
                    "unit {i}: feature block {n} is odd at a pooling step"
                )));
            }
        }
        Ok(())
    }
}

/// Dense class scores at input resolution plus the per-pixel argmax labels,
/// ties broken toward the lowest class index.
#[derive(Debug, Clone)]
pub struct SegmentationOutput {
    pub logits: FeatureMap,
    pub labels: Vec<u8>,
}

/// RGB bytes to a 3 x h x w float map in [0, 1].
pub fn normalize_frame(frame: &Frame) -> FeatureMap {
    let mut map = FeatureMap::zeros(3, frame.height, frame.width);
    for y in 0..frame.height {
        for x in 0..frame.width {
            let (r, g, b) = frame.pixel(y, x);
            map.set(0, y, x, r as f32 / 255.0);
            map.set(1, y, x, g as f32 / 255.0);
            map.set(2, y, x, b as f32 / 255.0);
        }
    }
    map
}

fn argmax_labels(logits: &FeatureMap) -> Vec<u8> {
    let mut labels = vec![0u8; logits.height * logits.width];
    for y in 0..logits.height {
        for x in 0..logits.width {
            let mut best = 0usize;
            let mut best_v = logits.at(0, y, x);
            for c in 1..logits.channels {
                let v = logits.at(c, y, x);
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            labels[y * logits.width + x] = best as u8;
        }
    }
    labels
}

fn upsample_labels(labels: &[u8], h: usize, w: usize, factor: usize) -> Vec<u8> {
    let mut out = vec![0u8; h * w * factor * factor];
    let ow = w * factor;
    for y in 0..h * factor {
        for x in 0..ow {
            out[y * ow + x] = labels[(y / factor) * w + x / factor];
        }
    }
    out
}

fn head_and_output(spec: &BackboneSpec, last: &FeatureMap) -> Result<SegmentationOutput> {
    let logits_low = conv2d(last, &spec.head, Border::ZeroPad)?;
    let factor = spec.total_pool_factor();
    let labels_low = argmax_labels(&logits_low);
    let logits = upsample_nearest(&logits_low, factor);
    let labels = upsample_labels(&labels_low, logits_low.height, logits_low.width, factor);
    Ok(SegmentationOutput { logits, labels })
}

/// Standard full-map execution. Returns the output and every per-unit
/// checkpoint (for oracle comparisons and first-frame seeding).
pub fn forward_dense(
    frame: &Frame,
    spec: &BackboneSpec,
    block_size: usize,
) -> Result<(SegmentationOutput, StageCacheSet)> {
    spec.validate_geometry(frame.height, frame.width, block_size)?;
    let mut x = normalize_frame(frame);
    let mut checkpoints = Vec::new();
    for unit in spec.units() {
        x = relu(&conv2d(&x, unit.weights, Border::ZeroPad)?);
        if unit.pool {
            x = avg_pool2(&x)?;
        }
        checkpoints.push(StageCheckpoint {
            map: x.clone(),
            feat_block: block_size / unit.out_scale,
        });
    }
    let output = head_and_output(spec, &x)?;
    Ok((
        output,
        StageCacheSet {
            per_stage: checkpoints,
        },
    ))
}

/// One sparse frame step: classify blocks, recompute ACTIVE ones with halo
/// padding, reuse cached features for REDUNDANT ones, run the dense 1x1 head,
/// rotate the caches, and report per-frame statistics.
pub fn forward_ttr(
    frame: &Frame,
    spec: &BackboneSpec,
    state: StreamState,
    tau: f64,
) -> Result<(SegmentationOutput, StreamState, FrameStats)> {
    let started = Instant::now();
    let block_size = state.block_size;
    spec.validate_geometry(frame.height, frame.width, block_size)?;
    if frame.height / block_size != state.grid_rows || frame.width / block_size != state.grid_cols {
        return Err(TtrError::StreamConsistency(format!(
            "frame {}x{} does not match stream grid {}x{}",
            frame.width, frame.height, state.grid_cols, state.grid_rows
        )));
    }
    let expected = spec.checkpoint_shapes(frame.height, frame.width, block_size)?;
    if expected.as_slice() != state.expected_shapes() {
        return Err(TtrError::StreamConsistency(
            "stream state was created for a different backbone geometry".into(),
        ));
    }

    let (mask, new_patches) = generate_mask(frame, state.patch_cache.as_ref(), tau, block_size)?;
    let all_active_mask = SparsityMask::all_active(mask.grid_rows, mask.grid_cols);

    let mut x = normalize_frame(frame);
    let mut checkpoints: Vec<StageCheckpoint> = Vec::new();
    for (k, unit) in spec.units().iter().enumerate() {
        let n_in = block_size / unit.in_scale;
        let active_set = gather_active(&x, &mask, n_in)?;

        // The stem reads the raw image, which is fully available for the
        // current frame, so its halo treats every neighbor as current. Later
        // units source REDUNDANT neighbors from the previous frame's cache
        // of this unit's input (checkpoint k-1).
        let (provenance_mask, prev_input) = if k == 0 {
            (&all_active_mask, None)
        } else {
            let prev = state
                .feature_caches
                .as_ref()
                .map(|f| &f.per_stage[k - 1].map);
            (&mask, prev)
        };
        let halos = pad_with_halo(&active_set, &x, prev_input, provenance_mask)?;

        let mut cells = Vec::with_capacity(halos.len());
        let mut blocks = Vec::with_capacity(halos.len());
        for halo in &halos {
            let mut block = relu(&conv2d(&halo.payload, unit.weights, Border::NoPad)?);
            if unit.pool {
                block = avg_pool2(&block)?;
            }
            cells.push(halo.cell);
            blocks.push(block);
        }
        let new_set = BlockSet::new(cells, blocks)?;

        let reused = if mask.redundant_count() > 0 {
            let caches = state.feature_caches.as_ref().ok_or_else(|| {
                TtrError::Invariant(
                    "redundant cells present but no feature caches (first frame must be all-active)"
                        .into(),
                )
            })?;
            read_redundant_blocks(caches, k, &mask)?
        } else {
            BlockSet::empty()
        };

        let shape = expected[k];
        x = assemble(
            &new_set,
            &reused,
            &mask,
            shape.channels,
            shape.height,
            shape.width,
        )?;
        checkpoints.push(StageCheckpoint {
            map: x.clone(),
            feat_block: shape.feat_block,
        });
    }

    let output = head_and_output(spec, &x)?;

    let macs = mac_count(spec, &mask, frame.height, frame.width, block_size)?;
    let similarity_ops = if state.frame_index > 0 {
        similarity_op_count(mask.grid_rows, mask.grid_cols, block_size)
    } else {
        0
    };
    let stats = FrameStats {
        frame_index: state.frame_index,
        blocks_total: mask.cells() as u64,
        blocks_active: mask.active_count() as u64,
        blocks_reused: mask.redundant_count() as u64,
        stage_macs: macs.stage_macs,
        head_macs: macs.head_macs,
        similarity_ops,
        wall_micros: started.elapsed().as_micros() as u64,
    };

    let new_state = rotate(
        state,
        new_patches,
        StageCacheSet {
            per_stage: checkpoints,
        },
    )?;
    Ok((output, new_state, stats))
}

/// Convenience: fresh stream state for this backbone and geometry.
pub fn new_stream(
    spec: &BackboneSpec,
    frame_height: usize,
    frame_width: usize,
    block_size: usize,
) -> Result<StreamState> {
    let shapes = spec.checkpoint_shapes(frame_height, frame_width, block_size)?;
    StreamState::new(frame_height, frame_width, block_size, shapes)
}
