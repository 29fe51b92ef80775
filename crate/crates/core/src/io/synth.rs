//! Deterministic synthetic frame sequences used as fixtures: a static noise
//! scene, a textured square translating over static noise (constant or
//! sinusoidally modulated velocity), and a multiplicative brightness ramp.

use std::fs;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TtrError};
use crate::io::pnm::{frame_file_name, write_ppm};
use crate::patching::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// One noise frame repeated.
    Static,
    /// A block-sized noise-textured square translating at constant speed
    /// (px/frame), ping-ponging between the frame edges.
    MovingSquare { speed: usize },
    /// Same square, position driven by a sinusoid so the speed varies
    /// smoothly between 0 and its maximum over `period` frames.
    VariableSpeed { period: usize },
    /// A static noise frame under a per-frame multiplicative gain ramping
    /// 0.5 -> 1.5. Base values stay in [20, 160] so no pixel ever clips.
    BrightnessRamp,
}

impl SynthKind {
    /// CLI name to kind, with per-kind defaults derived from the block size.
    pub fn parse(name: &str, block_size: usize) -> Result<SynthKind> {
        match name {
            "static" => Ok(SynthKind::Static),
            "moving_square" => Ok(SynthKind::MovingSquare {
                speed: (block_size / 4).max(1),
            }),
            "variable_speed" => Ok(SynthKind::VariableSpeed { period: 24 }),
            "brightness_ramp" => Ok(SynthKind::BrightnessRamp),
            other => Err(TtrError::Config(format!(
                "unknown fixture kind {other:?}; expected static, moving_square, \
                 variable_speed or brightness_ramp"
            ))),
        }
    }
}

fn ping_pong(v: usize, span: usize) -> usize {
    if span == 0 {
        return 0;
    }
    let m = v % (2 * span);
    if m <= span {
        m
    } else {
        2 * span - m
    }
}

struct SquareScene {
    background: Vec<u8>,
    texture: Vec<u8>,
    side: usize,
    y0: usize,
    span: usize,
}

impl SquareScene {
    fn new(height: usize, width: usize, block_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let side = block_size;
        let background = (0..3 * height * width)
            .map(|_| (rng.next_u32() >> 24) as u8)
            .collect();
        let texture = (0..3 * side * side)
            .map(|_| (rng.next_u32() >> 24) as u8)
            .collect();
        // Straddle two block rows when the frame is tall enough; richer masks.
        let y0 = (block_size / 2).min(height - side);
        SquareScene {
            background,
            texture,
            side,
            y0,
            span: width - side,
        }
    }

    fn frame_at(&self, x0: usize, height: usize, width: usize) -> Frame {
        let mut rgb = self.background.clone();
        for y in 0..self.side {
            for x in 0..self.side {
                let dst = 3 * ((self.y0 + y) * width + x0 + x);
                let src = 3 * (y * self.side + x);
                rgb[dst..dst + 3].copy_from_slice(&self.texture[src..src + 3]);
            }
        }
        Frame::new(height, width, rgb).expect("scene geometry is valid")
    }
}

/// Generate `frames` deterministic frames in memory.
pub fn generate_frames(
    kind: SynthKind,
    frames: usize,
    height: usize,
    width: usize,
    block_size: usize,
    seed: u64,
) -> Result<Vec<Frame>> {
    if block_size == 0 || !height.is_multiple_of(block_size) || !width.is_multiple_of(block_size) {
        return Err(TtrError::Config(format!(
            "geometry {width}x{height} not divisible by block size {block_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = match kind {
        SynthKind::Static => {
            let rgb: Vec<u8> = (0..3 * height * width)
                .map(|_| (rng.next_u32() >> 24) as u8)
                .collect();
            let frame = Frame::new(height, width, rgb)?;
            vec![frame; frames]
        }
        SynthKind::MovingSquare { speed } => {
            let scene = SquareScene::new(height, width, block_size, &mut rng);
            (0..frames)
                .map(|t| scene.frame_at(ping_pong(t * speed, scene.span), height, width))
                .collect()
        }
        SynthKind::VariableSpeed { period } => {
            let scene = SquareScene::new(height, width, block_size, &mut rng);
            // Velocity modulated sinusoidally, position integrated with
            // reflection at the edges. The rounded velocity passes through
            // exact zero, so the sequence has genuinely static frames.
            let vmax = (block_size / 2).max(1) as f64;
            let span = scene.span as isize;
            let mut x = span / 2;
            (0..frames)
                .map(|t| {
                    if t > 0 {
                        let phase = 2.0 * std::f64::consts::PI * t as f64 / period.max(1) as f64;
                        x += (vmax * phase.sin()).round() as isize;
                        if span > 0 {
                            while x < 0 || x > span {
                                x = if x < 0 { -x } else { 2 * span - x };
                            }
                        } else {
                            x = 0;
                        }
                    }
                    scene.frame_at(x as usize, height, width)
                })
                .collect()
        }
        SynthKind::BrightnessRamp => {
            let base: Vec<u8> = (0..3 * height * width)
                .map(|_| 20 + (rng.next_u32() % 141) as u8)
                .collect();
            (0..frames)
                .map(|t| {
                    let gain = if frames > 1 {
                        0.5 + t as f64 / (frames - 1) as f64
                    } else {
                        1.0
                    };
                    let rgb = base
                        .iter()
                        .map(|&v| (v as f64 * gain).round().clamp(0.0, 255.0) as u8)
                        .collect();
                    Frame::new(height, width, rgb).expect("geometry is valid")
                })
                .collect()
        }
    };
    Ok(out)
}

/// Generate a fixture sequence and write it as a PPM frame directory.
pub fn synth_sequence(
    kind: SynthKind,
    frames: usize,
    height: usize,
    width: usize,
    block_size: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let all = generate_frames(kind, frames, height, width, block_size, seed)?;
    fs::create_dir_all(out_dir).map_err(|e| TtrError::io(out_dir, e))?;
    for (i, frame) in all.iter().enumerate() {
        write_ppm(frame, &out_dir.join(frame_file_name(i, "ppm")))?;
    }
    Ok(())
}
