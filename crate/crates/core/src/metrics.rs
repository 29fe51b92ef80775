//! Accuracy scoring, compute-cost accounting, reuse statistics, the scene
//! dynamism proxy and threshold-sweep analysis.
//!
//! MACs (one multiply-accumulate; 2 FLOPs when reported as FLOPs) are counted
//! analytically from the mask, never measured: a 3x3 convolution on an active
//! block contributes out*in*9*n^2 with n the block side at that layer's
//! resolution, and the 1x1 head is always counted densely. Scene dynamism is
//! the mean absolute inter-frame pixel difference, a documented stand-in for
//! optical-flow magnitude.

use crate::backbone::{forward_dense, forward_ttr, new_stream, BackboneSpec};
use crate::error::{Result, TtrError};
use crate::patching::{Frame, SparsityMask};

/// Per-frame execution record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameStats {
    pub frame_index: u64,
    pub blocks_total: u64,
    pub blocks_active: u64,
    pub blocks_reused: u64,
    /// Multiply-accumulates actually executed in the stem and stages.
    pub stage_macs: u64,
    /// Multiply-accumulates of the dense 1x1 head.
    pub head_macs: u64,
    /// Element operations spent on the similarity comparisons.
    pub similarity_ops: u64,
    /// Measured duration; the one field excluded from determinism claims.
    pub wall_micros: u64,
}

/// Analytic operation counts for one frame under a given mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacCounts {
    pub stage_macs: u64,
    pub head_macs: u64,
    /// Relu and pooling element ops, reported separately from MACs.
    pub elementwise: u64,
}

/// Count the multiply-accumulates a masked forward pass executes.
pub fn mac_count(
    spec: &BackboneSpec,
    mask: &SparsityMask,
    frame_height: usize,
    frame_width: usize,
    block_size: usize,
) -> Result<MacCounts> {
    spec.validate_geometry(frame_height, frame_width, block_size)?;
    if mask.grid_rows != frame_height / block_size || mask.grid_cols != frame_width / block_size {
        return Err(TtrError::Dimension(format!(
            "mask grid {}x{} does not match frame {}x{} with block {}",
            mask.grid_rows, mask.grid_cols, frame_width, frame_height, block_size
        )));
    }
    let active = mask.active_count() as u64;
    let mut per_block_macs = 0u64;
    let mut per_block_elem = 0u64;
    for unit in spec.units() {
        let n = (block_size / unit.in_scale) as u64;
        let w = unit.weights;
        per_block_macs += w.out_channels as u64 * w.in_channels as u64 * 9 * n * n;
        per_block_elem += w.out_channels as u64 * n * n; // relu
        if unit.pool {
            per_block_elem += w.out_channels as u64 * (n / 2) * (n / 2);
        }
    }
    let factor = spec.total_pool_factor();
    let head_macs = (spec.head.in_channels * spec.num_classes) as u64
        * (frame_height / factor) as u64
        * (frame_width / factor) as u64;
    Ok(MacCounts {
        stage_macs: active * per_block_macs,
        head_macs,
        elementwise: active * per_block_elem,
    })
}

/// Stage MACs of a fully dense pass on this geometry.
pub fn dense_stage_macs(
    spec: &BackboneSpec,
    frame_height: usize,
    frame_width: usize,
    block_size: usize,
) -> Result<u64> {
    let mask = SparsityMask::all_active(frame_height / block_size, frame_width / block_size);
    Ok(mac_count(spec, &mask, frame_height, frame_width, block_size)?.stage_macs)
}

/// Pixel tallies indexed by (predicted, true) class.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    #[inline]
    pub fn count(&self, pred: usize, truth: usize) -> u64 {
        self.counts[pred * self.num_classes + truth]
    }

    #[inline]
    pub fn record(&mut self, pred: u8, truth: u8) -> Result<()> {
        let (p, t) = (pred as usize, truth as usize);
        if p >= self.num_classes || t >= self.num_classes {
            return Err(TtrError::Range(format!(
                "label ({p},{t}) outside {} classes",
                self.num_classes
            )));
        }
        self.counts[p * self.num_classes + t] += 1;
        Ok(())
    }

    pub fn accumulate(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(TtrError::Dimension(format!(
                "label map lengths differ: {} vs {}",
                pred.len(),
                truth.len()
            )));
        }
        for (&p, &t) in pred.iter().zip(truth.iter()) {
            self.record(p, t)?;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Mean over classes of TP/(TP+FP+FN); classes absent from both prediction
/// and truth are excluded from the mean.
pub fn miou(cm: &ConfusionMatrix) -> Result<f64> {
    let n = cm.num_classes;
    let mut sum = 0.0;
    let mut present = 0usize;
    for c in 0..n {
        let tp = cm.count(c, c);
        let fp: u64 = (0..n).map(|t| cm.count(c, t)).sum::<u64>() - tp;
        let fne: u64 = (0..n).map(|p| cm.count(p, c)).sum::<u64>() - tp;
        let denom = tp + fp + fne;
        if denom > 0 {
            sum += tp as f64 / denom as f64;
            present += 1;
        }
    }
    if present == 0 {
        return Err(TtrError::UndefinedMetric(
            "mIoU undefined: no class present".into(),
        ));
    }
    Ok(sum / present as f64)
}

/// Fraction of pixels whose prediction equals the reference.
pub fn pixel_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(TtrError::UndefinedMetric(
            "pixel accuracy undefined on empty matrix".into(),
        ));
    }
    let trace: u64 = (0..cm.num_classes).map(|c| cm.count(c, c)).sum();
    Ok(trace as f64 / total as f64)
}

/// Mean absolute inter-frame pixel difference, normalized to [0, 1].
pub fn dynamism_proxy(frame_t: &Frame, frame_prev: &Frame) -> Result<f64> {
    if frame_t.height != frame_prev.height || frame_t.width != frame_prev.width {
        return Err(TtrError::Dimension(format!(
            "frame geometries differ: {}x{} vs {}x{}",
            frame_t.width, frame_t.height, frame_prev.width, frame_prev.height
        )));
    }
    let sum: u64 = frame_t
        .rgb()
        .iter()
        .zip(frame_prev.rgb().iter())
        .map(|(&a, &b)| (a as i32 - b as i32).unsigned_abs() as u64)
        .sum();
    Ok(sum as f64 / (frame_t.rgb().len() as f64 * 255.0))
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(TtrError::Dimension(format!(
            "series lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(TtrError::UndefinedMetric(
            "correlation needs at least 2 samples".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(TtrError::UndefinedMetric(
            "correlation undefined for a constant series".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// One row of the threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    pub miou_vs_dense: f64,
    pub pixacc_vs_dense: f64,
    /// Mean reused-block percentage over the frames after the first (the
    /// first frame is forced all-active and would dilute the signal).
    pub reused_pct: f64,
    /// Mean stage MACs over the frames after the first.
    pub mean_stage_macs: f64,
}

/// Run the sparse pass over `frames` once per threshold, scoring every frame
/// against the dense pass's own labels (agreement mIoU: no trained reference
/// exists at this scale, so the dense output is the accuracy yardstick).
pub fn sweep_tradeoff(
    frames: &[Frame],
    spec: &BackboneSpec,
    taus: &[f64],
    block_size: usize,
) -> Result<Vec<SweepRow>> {
    if taus.is_empty() {
        return Err(TtrError::Usage("sweep needs at least one tau".into()));
    }
    if frames.len() < 2 {
        return Err(TtrError::Usage("sweep needs at least 2 frames".into()));
    }
    // Dense reference labels, computed once.
    let mut dense_labels = Vec::with_capacity(frames.len());
    for frame in frames {
        let (out, _) = forward_dense(frame, spec, block_size)?;
        dense_labels.push(out.labels);
    }

    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let mut state = new_stream(&spec.clone(), frames[0].height, frames[0].width, block_size)?;
        let mut cm = ConfusionMatrix::new(spec.num_classes);
        let mut reused_pct_sum = 0.0;
        let mut macs_sum = 0u64;
        let mut post_first = 0u64;
        for frame in frames {
            let (out, next, stats) = forward_ttr(frame, spec, state, tau)?;
            state = next;
            cm.accumulate(&out.labels, &dense_labels[stats.frame_index as usize])?;
            if stats.frame_index > 0 {
                reused_pct_sum += 100.0 * stats.blocks_reused as f64 / stats.blocks_total as f64;
                macs_sum += stats.stage_macs;
                post_first += 1;
            }
        }
        rows.push(SweepRow {
            tau,
            miou_vs_dense: miou(&cm)?,
            pixacc_vs_dense: pixel_accuracy(&cm)?,
            reused_pct: reused_pct_sum / post_first as f64,
            mean_stage_macs: macs_sum as f64 / post_first as f64,
        });
    }
    Ok(rows)
}
