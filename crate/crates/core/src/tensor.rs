//! Dense numeric substrate: feature maps, 2-D convolution, pointwise
//! nonlinearity, pooling and nearest upsampling.
//!
//! Every operation is a pure function and accumulates in f32 with a fixed
//! loop order (out-channel, row, column, in-channel, kernel row, kernel
//! column). The per-block sparse path and the dense path therefore produce
//! bit-identical sums, which the equivalence checks rely on.

use crate::error::{Result, TtrError};

/// channels x height x width array of f32, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(TtrError::Dimension(format!(
                "feature map data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy the `size`x`size` block whose top-left corner is (y0, x0),
    /// all channels.
    pub fn copy_block(&self, y0: usize, x0: usize, size: usize) -> FeatureMap {
        debug_assert!(y0 + size <= self.height && x0 + size <= self.width);
        let mut out = Vec::with_capacity(self.channels * size * size);
        for c in 0..self.channels {
            for y in 0..size {
                let base = (c * self.height + y0 + y) * self.width + x0;
                out.extend_from_slice(&self.data[base..base + size]);
            }
        }
        FeatureMap {
            channels: self.channels,
            height: size,
            width: size,
            data: out,
        }
    }

    /// Write `block` (all channels) so its top-left corner lands at (y0, x0).
    pub fn paste_block(&mut self, block: &FeatureMap, y0: usize, x0: usize) {
        debug_assert_eq!(block.channels, self.channels);
        debug_assert!(y0 + block.height <= self.height && x0 + block.width <= self.width);
        for c in 0..self.channels {
            for y in 0..block.height {
                let src = (c * block.height + y) * block.width;
                let dst = (c * self.height + y0 + y) * self.width + x0;
                self.data[dst..dst + block.width]
                    .copy_from_slice(&block.data[src..src + block.width]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    One,
    Three,
}

impl Kernel {
    #[inline]
    pub fn size(self) -> usize {
        match self {
            Kernel::One => 1,
            Kernel::Three => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    /// Implicit one-pixel zero border; output keeps the input's spatial size.
    ZeroPad,
    /// No padding; a 3x3 kernel shrinks the output by 2 per axis.
    NoPad,
}

/// Weights for one convolution layer, kernel 1x1 or 3x3.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: Kernel,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvWeights {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel: Kernel,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        let k = kernel.size();
        if weights.len() != out_channels * in_channels * k * k {
            return Err(TtrError::Dimension(format!(
                "weight length {} does not match {}x{}x{}x{}",
                weights.len(),
                out_channels,
                in_channels,
                k,
                k
            )));
        }
        if bias.len() != out_channels {
            return Err(TtrError::Dimension(format!(
                "bias length {} does not match {} output channels",
                bias.len(),
                out_channels
            )));
        }
        Ok(ConvWeights {
            out_channels,
            in_channels,
            kernel,
            weights,
            bias,
        })
    }

    #[inline]
    pub fn at(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        let k = self.kernel.size();
        self.weights[((o * self.in_channels + i) * k + ky) * k + kx]
    }

    #[inline]
    pub fn bias(&self, o: usize) -> f32 {
        self.bias[o]
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn biases(&self) -> &[f32] {
        &self.bias
    }
}

/// 2-D convolution.
///
/// Output value at (o, y, x) is
/// `bias[o] + sum over (i, ky, kx) of w[o,i,ky,kx] * input[i, y+ky-1, x+kx-1]`
/// with out-of-range reads contributing 0 under `ZeroPad`. The zero terms are
/// accumulated (not skipped) so that border sums follow the exact same f32
/// operation sequence as the halo path, which multiplies literal zeros.
pub fn conv2d(input: &FeatureMap, w: &ConvWeights, border: Border) -> Result<FeatureMap> {
    if input.channels != w.in_channels {
        return Err(TtrError::Config(format!(
            "conv input has {} channels, weights expect {}",
            input.channels, w.in_channels
        )));
    }
    let k = w.kernel.size();
    let (out_h, out_w, off) = match (w.kernel, border) {
        (Kernel::One, _) => (input.height, input.width, 0isize),
        (Kernel::Three, Border::ZeroPad) => (input.height, input.width, -1isize),
        (Kernel::Three, Border::NoPad) => {
            if input.height < 3 || input.width < 3 {
                return Err(TtrError::Dimension(format!(
                    "NoPad 3x3 conv needs height,width >= 3, got {}x{}",
                    input.height, input.width
                )));
            }
            (input.height - 2, input.width - 2, 0isize)
        }
    };

    let mut out = FeatureMap::zeros(w.out_channels, out_h, out_w);
    let ih = input.height;
    let iw = input.width;
    let plane = ih * iw;
    let in_c = w.in_channels;
    let data = input.data();
    let weights = w.weights();

    if k == 1 {
        for o in 0..w.out_channels {
            let bias = w.bias[o];
            let wo = &weights[o * in_c..(o + 1) * in_c];
            let out_plane = &mut out.data[o * plane..(o + 1) * plane];
            for (p, slot) in out_plane.iter_mut().enumerate() {
                let mut acc = bias;
                for (i, &wv) in wo.iter().enumerate() {
                    acc += wv * data[i * plane + p];
                }
                *slot = acc;
            }
        }
        debug_assert!(out.all_finite());
        return Ok(out);
    }

    // 3x3. Out-of-range taps are zero contributions; adding w*0.0 and
    // skipping the term produce the same accumulator up to the sign of zero,
    // which no downstream comparison can observe, so the border path skips.
    let out_plane_len = out_h * out_w;
    for o in 0..w.out_channels {
        let bias = w.bias[o];
        let wo = &weights[o * in_c * 9..(o + 1) * in_c * 9];
        for y in 0..out_h {
            let sy0 = y as isize + off;
            for x in 0..out_w {
                let sx0 = x as isize + off;
                let mut acc = bias;
                if sy0 >= 0 && (sy0 as usize) + 3 <= ih && sx0 >= 0 && (sx0 as usize) + 3 <= iw {
                    // All nine taps in range.
                    let (sy, sx) = (sy0 as usize, sx0 as usize);
                    for i in 0..in_c {
                        let pl = &data[i * plane..(i + 1) * plane];
                        let wl = &wo[i * 9..i * 9 + 9];
                        let r0 = &pl[sy * iw + sx..sy * iw + sx + 3];
                        let r1 = &pl[(sy + 1) * iw + sx..(sy + 1) * iw + sx + 3];
                        let r2 = &pl[(sy + 2) * iw + sx..(sy + 2) * iw + sx + 3];
                        acc += wl[0] * r0[0];
                        acc += wl[1] * r0[1];
                        acc += wl[2] * r0[2];
                        acc += wl[3] * r1[0];
                        acc += wl[4] * r1[1];
                        acc += wl[5] * r1[2];
                        acc += wl[6] * r2[0];
                        acc += wl[7] * r2[1];
                        acc += wl[8] * r2[2];
                    }
                } else {
                    for i in 0..in_c {
                        let pl = &data[i * plane..(i + 1) * plane];
                        let wl = &wo[i * 9..i * 9 + 9];
                        for ky in 0..3usize {
                            let sy = sy0 + ky as isize;
                            if sy < 0 || sy >= ih as isize {
                                continue;
                            }
                            let row = &pl[sy as usize * iw..(sy as usize + 1) * iw];
                            for kx in 0..3usize {
                                let sx = sx0 + kx as isize;
                                if sx < 0 || sx >= iw as isize {
                                    continue;
                                }
                                acc += wl[ky * 3 + kx] * row[sx as usize];
                            }
                        }
                    }
                }
                out.data[o * out_plane_len + y * out_w + x] = acc;
            }
        }
    }
    debug_assert!(out.all_finite());
    Ok(out)
}

/// Elementwise max(0, v). Maps -0.0 to 0.0 so outputs are sign-normalized.
pub fn relu(input: &FeatureMap) -> FeatureMap {
    let data = input
        .data
        .iter()
        .map(|&v| if v > 0.0 { v } else { 0.0 })
        .collect();
    FeatureMap {
        channels: input.channels,
        height: input.height,
        width: input.width,
        data,
    }
}

/// Non-overlapping 2x2 window mean; halves each spatial axis.
pub fn avg_pool2(input: &FeatureMap) -> Result<FeatureMap> {
    if !input.height.is_multiple_of(2) || !input.width.is_multiple_of(2) {
        return Err(TtrError::Dimension(format!(
            "avg_pool2 needs even dimensions, got {}x{}",
            input.height, input.width
        )));
    }
    let oh = input.height / 2;
    let ow = input.width / 2;
    let mut out = FeatureMap::zeros(input.channels, oh, ow);
    for c in 0..input.channels {
        for y in 0..oh {
            for x in 0..ow {
                let a = input.at(c, 2 * y, 2 * x);
                let b = input.at(c, 2 * y, 2 * x + 1);
                let d = input.at(c, 2 * y + 1, 2 * x);
                let e = input.at(c, 2 * y + 1, 2 * x + 1);
                out.set(c, y, x, (((a + b) + d) + e) * 0.25);
            }
        }
    }
    debug_assert!(out.all_finite());
    Ok(out)
}

/// Replicate each value into a factor x factor block. `factor` must be >= 1.
pub fn upsample_nearest(input: &FeatureMap, factor: usize) -> FeatureMap {
    assert!(factor >= 1, "upsample factor must be >= 1");
    if factor == 1 {
        return input.clone();
    }
    let oh = input.height * factor;
    let ow = input.width * factor;
    let mut out = FeatureMap::zeros(input.channels, oh, ow);
    for c in 0..input.channels {
        for y in 0..oh {
            for x in 0..ow {
                out.set(c, y, x, input.at(c, y / factor, x / factor));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent scalar triple-loop convolution oracle, f64 accumulation.
    fn conv_oracle(input: &FeatureMap, w: &ConvWeights, zero_pad: bool) -> Vec<f64> {
        let k = w.kernel.size() as isize;
        let (oh, ow, off) = if zero_pad || k == 1 {
            (input.height, input.width, if k == 3 { -1 } else { 0 })
        } else {
            (input.height - 2, input.width - 2, 0)
        };
        let mut out = vec![0.0f64; w.out_channels * oh * ow];
        for o in 0..w.out_channels {
            for y in 0..oh as isize {
                for x in 0..ow as isize {
                    let mut acc = w.bias(o) as f64;
                    for i in 0..w.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y + ky + off;
                                let sx = x + kx + off;
                                if sy >= 0
                                    && sy < input.height as isize
                                    && sx >= 0
                                    && sx < input.width as isize
                                {
                                    acc += w.at(o, i, ky as usize, kx as usize) as f64
                                        * input.at(i, sy as usize, sx as usize) as f64;
                                }
                            }
                        }
                    }
                    out[(o * oh + y as usize) * ow + x as usize] = acc;
                }
            }
        }
        out
    }

    fn pseudo_map(channels: usize, h: usize, w: usize, seed: u32) -> FeatureMap {
        // Cheap deterministic value pattern, good enough for oracles.
        let mut state = seed.wrapping_mul(2654435761).wrapping_add(12345);
        let data = (0..channels * h * w)
            .map(|_| {
                state = state.wrapping_mul(1664525).wrapping_add(1013904223);
                ((state >> 8) as f32 / (1u32 << 24) as f32) * 2.0 - 1.0
            })
            .collect();
        FeatureMap::new(channels, h, w, data).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let input = FeatureMap::new(1, 3, 3, vec![1.0; 9]).unwrap();
        let mut kw = vec![0.0; 9];
        kw[4] = 1.0; // center
        let w = ConvWeights::new(1, 1, Kernel::Three, kw, vec![0.0]).unwrap();
        let out = conv2d(&input, &w, Border::ZeroPad).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn scalar_one_by_one() {
        let input = FeatureMap::new(1, 1, 1, vec![2.0]).unwrap();
        let w = ConvWeights::new(1, 1, Kernel::One, vec![3.0], vec![0.5]).unwrap();
        let out = conv2d(&input, &w, Border::ZeroPad).unwrap();
        assert_eq!(out.data(), &[6.5]);
    }

    #[test]
    fn ones_kernel_center_matches_oracle() {
        let input = pseudo_map(1, 4, 4, 7);
        let w = ConvWeights::new(1, 1, Kernel::Three, vec![1.0; 9], vec![0.0]).unwrap();
        let out = conv2d(&input, &w, Border::ZeroPad).unwrap();
        // Center (1,1) sees the full 3x3 neighborhood.
        let mut sum = 0.0f64;
        for y in 0..3 {
            for x in 0..3 {
                sum += input.at(0, y, x) as f64;
            }
        }
        assert!((out.at(0, 1, 1) as f64 - sum).abs() < 1e-5);
        // And the whole map against the triple-loop oracle.
        let oracle = conv_oracle(&input, &w, true);
        for (got, want) in out.data().iter().zip(oracle.iter()) {
            assert!((*got as f64 - want).abs() < 1e-5);
        }
    }

    #[test]
    fn conv_channel_mismatch_is_config_error() {
        let input = FeatureMap::zeros(2, 4, 4);
        let w = ConvWeights::new(1, 1, Kernel::One, vec![1.0], vec![0.0]).unwrap();
        assert!(matches!(
            conv2d(&input, &w, Border::ZeroPad),
            Err(TtrError::Config(_))
        ));
    }

    #[test]
    fn nopad_too_small_is_dimension_error() {
        let input = FeatureMap::zeros(1, 2, 5);
        let w = ConvWeights::new(1, 1, Kernel::Three, vec![0.0; 9], vec![0.0]).unwrap();
        assert!(matches!(
            conv2d(&input, &w, Border::NoPad),
            Err(TtrError::Dimension(_))
        ));
    }

    #[test]
    fn relu_basics() {
        let input = FeatureMap::new(1, 1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&input).data(), &[0.0, 0.0, 2.0]);
        let nonneg = FeatureMap::new(1, 1, 3, vec![0.5, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&nonneg).data(), nonneg.data());
        // Idempotence on random data.
        let m = pseudo_map(2, 5, 5, 3);
        let once = relu(&m);
        assert_eq!(relu(&once).data(), once.data());
    }

    #[test]
    fn avg_pool_single_window() {
        let input = FeatureMap::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = avg_pool2(&input).unwrap();
        assert_eq!(out.data(), &[2.5]);
    }

    #[test]
    fn avg_pool_constant_stays_constant() {
        let input = FeatureMap::new(1, 4, 4, vec![3.25; 16]).unwrap();
        let out = avg_pool2(&input).unwrap();
        assert_eq!(out.data(), &[3.25; 4]);
    }

    #[test]
    fn avg_pool_ramp_window_means() {
        let input = FeatureMap::new(1, 4, 4, (0..16).map(|v| v as f32).collect()).unwrap();
        let out = avg_pool2(&input).unwrap();
        assert_eq!(out.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn avg_pool_odd_dimension_is_error() {
        let input = FeatureMap::zeros(1, 3, 4);
        assert!(matches!(avg_pool2(&input), Err(TtrError::Dimension(_))));
    }

    #[test]
    fn upsample_factor_one_is_identity() {
        let m = pseudo_map(2, 3, 3, 11);
        assert_eq!(upsample_nearest(&m, 1).data(), m.data());
    }

    #[test]
    fn upsample_replicates() {
        let input = FeatureMap::new(1, 1, 1, vec![7.0]).unwrap();
        let out = upsample_nearest(&input, 2);
        assert_eq!(out.data(), &[7.0; 4]);
    }

    #[test]
    fn pool_then_upsample_roundtrips_constants() {
        let input = FeatureMap::new(1, 4, 4, vec![1.5; 16]).unwrap();
        let out = upsample_nearest(&avg_pool2(&input).unwrap(), 2);
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn zeropad_equals_nopad_on_bordered_input() {
        let input = pseudo_map(2, 4, 5, 21);
        let w = ConvWeights::new(
            3,
            2,
            Kernel::Three,
            pseudo_map(1, 1, 54, 5).data().to_vec(),
            vec![0.1, -0.2, 0.3],
        )
        .unwrap();
        // Explicitly zero-border the input, then NoPad must agree bit-exactly.
        let mut bordered = FeatureMap::zeros(2, 6, 7);
        bordered.paste_block(&input, 1, 1);
        let a = conv2d(&input, &w, Border::ZeroPad).unwrap();
        let b = conv2d(&bordered, &w, Border::NoPad).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn conv_is_pure() {
        let input = pseudo_map(3, 6, 6, 9);
        let w = ConvWeights::new(
            2,
            3,
            Kernel::Three,
            pseudo_map(1, 1, 54, 4).data().to_vec(),
            vec![0.5, -0.5],
        )
        .unwrap();
        let a = conv2d(&input, &w, Border::ZeroPad).unwrap();
        let b = conv2d(&input, &w, Border::ZeroPad).unwrap();
        assert_eq!(a.data(), b.data());
    }

    proptest! {
        #[test]
        fn conv_is_linear(seed_x in 0u32..1000, seed_y in 0u32..1000,
                          a in -2.0f32..2.0, b in -2.0f32..2.0) {
            let x = pseudo_map(2, 4, 4, seed_x);
            let y = pseudo_map(2, 4, 4, seed_y.wrapping_add(5000));
            let w = ConvWeights::new(
                2, 2, Kernel::Three,
                pseudo_map(1, 1, 36, 77).data().to_vec(),
                vec![0.0, 0.0],
            ).unwrap();
            let mixed_data: Vec<f32> = x.data().iter().zip(y.data())
                .map(|(xv, yv)| a * xv + b * yv).collect();
            let mixed = FeatureMap::new(2, 4, 4, mixed_data).unwrap();
            let cm = conv2d(&mixed, &w, Border::ZeroPad).unwrap();
            let cx = conv2d(&x, &w, Border::ZeroPad).unwrap();
            let cy = conv2d(&y, &w, Border::ZeroPad).unwrap();
            for ((m, xv), yv) in cm.data().iter().zip(cx.data()).zip(cy.data()) {
                let want = a as f64 * *xv as f64 + b as f64 * *yv as f64;
                let tol = 1e-5 * (1.0 + want.abs());
                prop_assert!((*m as f64 - want).abs() < tol);
            }
        }

        #[test]
        fn conv_matches_f64_oracle(seed in 0u32..10_000) {
            let input = pseudo_map(2, 5, 6, seed);
            let w = ConvWeights::new(
                3, 2, Kernel::Three,
                pseudo_map(1, 1, 54, seed.wrapping_add(1)).data().to_vec(),
                vec![0.25, -0.25, 0.0],
            ).unwrap();
            let out = conv2d(&input, &w, Border::ZeroPad).unwrap();
            let oracle = conv_oracle(&input, &w, true);
            for (got, want) in out.data().iter().zip(oracle.iter()) {
                prop_assert!((*got as f64 - want).abs() < 1e-5);
            }
        }
    }
}
