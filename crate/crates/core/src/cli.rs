//! Operator entry point: segment a sequence with temporal reuse, verify it
//! against the dense pass, sweep thresholds, generate fixtures, and score
//! label maps.
//!
//! Exit codes: 0 success, 1 assertion/verification failure, 2 usage/config
//! error, 3 I/O or format error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::backbone::{
    forward_dense, forward_ttr, new_stream, BackboneDesc, BackboneSpec, StageDesc,
};
use crate::error::{Result, TtrError};
use crate::io::config::{parse_config_file, parse_geometry, parse_stages, parse_stem, parse_taus};
use crate::io::pnm::{frame_file_name, read_frame_sequence, read_pgm, write_pgm};
use crate::io::stats::{format_sig9, write_frame_stats, write_sweep_rows, FrameRecord};
use crate::io::synth::{synth_sequence, SynthKind};
use crate::io::weights::load_weights;
use crate::metrics::{
    dense_stage_macs, dynamism_proxy, miou, pixel_accuracy, sweep_tradeoff, ConfusionMatrix,
};
use crate::patching::Frame;

#[derive(Parser)]
#[command(
    name = "ttr",
    version,
    about = "Block-sparse video semantic segmentation with temporal feature reuse"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct RunArgs {
    /// Directory of P6 frames named 000000.ppm, 000001.ppm, ...
    #[arg(long)]
    frames: Option<PathBuf>,
    /// TTRW weight file (alternative to --seed)
    #[arg(long)]
    weights: Option<PathBuf>,
    /// 64-bit seed for deterministic weight initialization
    #[arg(long)]
    seed: Option<u64>,
    /// Similarity threshold in [-1, 1]; similarity > tau means reuse
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    /// Patch edge length in pixels
    #[arg(long = "block-size")]
    block_size: Option<usize>,
    /// Number of segmentation classes
    #[arg(long)]
    classes: Option<usize>,
    /// Output directory for PGM label maps
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stats CSV path
    #[arg(long)]
    stats: Option<PathBuf>,
    /// key=value config file; flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stem description, e.g. 16p (channels, trailing p = pool)
    #[arg(long)]
    stem: Option<String>,
    /// Stage list, e.g. 32x2p,64x2p (channels x convs, trailing p = pool)
    #[arg(long)]
    stages: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a frame sequence, writing label maps and per-frame stats
    Segment {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run sparse and dense passes side by side and verify their agreement
    CompareDense {
        #[command(flatten)]
        run: RunArgs,
        /// Minimum label agreement fraction for exit 0 (default 0.995)
        #[arg(long = "agreement-floor")]
        agreement_floor: Option<f64>,
    },
    /// Evaluate several thresholds and write the accuracy/reuse tradeoff
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated thresholds (default 0.90,0.95,0.99,0.995,0.999)
        #[arg(long, allow_hyphen_values = true)]
        taus: Option<String>,
    },
    /// Generate a synthetic fixture sequence
    Synth {
        /// static | moving_square | variable_speed | brightness_ramp
        #[arg(long)]
        kind: String,
        /// Number of frames
        #[arg(long)]
        nframes: usize,
        /// Frame geometry WxH, e.g. 128x128
        #[arg(long)]
        geometry: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "block-size")]
        block_size: Option<usize>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted label maps against reference label maps
    Eval {
        /// Directory of predicted .pgm maps
        pred: PathBuf,
        /// Directory of reference .pgm maps
        gt: PathBuf,
    },
}

/// Fully resolved run settings (flags over config file over defaults).
#[derive(Debug, Clone)]
struct RunConfig {
    frames: PathBuf,
    weights: Option<PathBuf>,
    seed: Option<u64>,
    tau: f64,
    block_size: usize,
    out: Option<PathBuf>,
    stats: Option<PathBuf>,
    agreement_floor: f64,
    desc: BackboneDesc,
}

impl RunConfig {
    fn resolve(run: &RunArgs) -> Result<RunConfig> {
        let file = match &run.config {
            Some(path) => parse_config_file(path)?,
            None => Default::default(),
        };

        // Weight source: an explicit flag overrides the whole file-level
        // choice so a config seed cannot shadow a --weights flag (and vice
        // versa). Two sources at the same level are ambiguous.
        let (weights, seed) = match (&run.weights, run.seed) {
            (Some(_), Some(_)) => {
                return Err(TtrError::Usage(
                    "--weights and --seed are mutually exclusive".into(),
                ))
            }
            (Some(w), None) => (Some(w.clone()), None),
            (None, Some(s)) => (None, Some(s)),
            (None, None) => match (&file.weights, file.seed) {
                (Some(_), Some(_)) => {
                    return Err(TtrError::Usage(
                        "config file sets both weights and seed".into(),
                    ))
                }
                (w, s) => (w.clone(), s),
            },
        };

        let tau = run.tau.or(file.tau).unwrap_or(0.99);
        if !(-1.0..=1.0).contains(&tau) {
            return Err(TtrError::Config(format!("tau {tau} outside [-1, 1]")));
        }
        let block_size = run.block_size.or(file.block_size).unwrap_or(32);
        let classes = run.classes.or(file.classes).unwrap_or(3);
        let agreement_floor = run_agreement_floor(&file)?;

        let (stem_channels, stem_pool) = match run.stem.as_ref().or(file.stem.as_ref()) {
            Some(s) => parse_stem(s)?,
            None => (16, true),
        };
        let stages: Vec<StageDesc> = match run.stages.as_ref().or(file.stages.as_ref()) {
            Some(s) => parse_stages(s)?,
            None => BackboneDesc::reference(classes).stages,
        };
        let desc = BackboneDesc {
            stem_channels,
            stem_pool,
            stages,
            num_classes: classes,
        };
        desc.validate()?;

        let frames = run
            .frames
            .clone()
            .or(file.frames)
            .ok_or_else(|| TtrError::Usage("missing --frames".into()))?;

        Ok(RunConfig {
            frames,
            weights,
            seed,
            tau,
            block_size,
            out: run.out.clone().or(file.out),
            stats: run.stats.clone().or(file.stats),
            agreement_floor,
            desc,
        })
    }

    fn build_spec(&self) -> Result<BackboneSpec> {
        match (&self.weights, self.seed) {
            (Some(path), _) => load_weights(path, &self.desc),
            (None, Some(seed)) => BackboneSpec::from_seed(&self.desc, seed),
            (None, None) => Err(TtrError::Usage(
                "no weight source: give --weights FILE or --seed N".into(),
            )),
        }
    }
}

fn run_agreement_floor(file: &crate::io::config::FileConfig) -> Result<f64> {
    let floor = file.agreement_floor.unwrap_or(0.995);
    if !(0.0..=1.0).contains(&floor) {
        return Err(TtrError::Config(format!(
            "agreement_floor {floor} outside [0, 1]"
        )));
    }
    Ok(floor)
}

fn cmd_segment(run: &RunArgs) -> Result<()> {
    let cfg = RunConfig::resolve(run)?;
    let spec = cfg.build_spec()?;
    let out_dir = cfg
        .out
        .clone()
        .ok_or_else(|| TtrError::Usage("segment needs --out DIR for label maps".into()))?;
    std::fs::create_dir_all(&out_dir).map_err(|e| TtrError::io(&out_dir, e))?;
    let stats_path = cfg
        .stats
        .clone()
        .unwrap_or_else(|| out_dir.join("stats.csv"));

    let seq = read_frame_sequence(&cfg.frames)?;
    let mut state = None;
    let mut prev_frame: Option<Frame> = None;
    let mut records: Vec<FrameRecord> = Vec::new();
    let mut geometry = (0usize, 0usize);

    for item in seq.iter() {
        let frame = item?;
        geometry = (frame.height, frame.width);
        let stream = match state.take() {
            Some(s) => s,
            None => new_stream(&spec, frame.height, frame.width, cfg.block_size)?,
        };
        let (output, next, stats) = forward_ttr(&frame, &spec, stream, cfg.tau)?;
        state = Some(next);
        let index = stats.frame_index as usize;
        write_pgm(
            &output.labels,
            frame.height,
            frame.width,
            &out_dir.join(frame_file_name(index, "pgm")),
        )?;
        let dynamism = match &prev_frame {
            Some(prev) => dynamism_proxy(&frame, prev)?,
            None => 0.0,
        };
        records.push(FrameRecord { stats, dynamism });
        prev_frame = Some(frame);
    }
    write_frame_stats(&records, &stats_path)?;

    let frames = records.len();
    let total_stage_macs: u64 = records.iter().map(|r| r.stats.stage_macs).sum();
    let dense_per_frame = dense_stage_macs(&spec, geometry.0, geometry.1, cfg.block_size)?;
    let dense_total = dense_per_frame * frames as u64;
    let reuse_after_first: f64 = if frames > 1 {
        records[1..]
            .iter()
            .map(|r| 100.0 * r.stats.blocks_reused as f64 / r.stats.blocks_total as f64)
            .sum::<f64>()
            / (frames - 1) as f64
    } else {
        0.0
    };
    let reduction = 100.0 * (1.0 - total_stage_macs as f64 / dense_total as f64);
    println!(
        "frames={frames} mean_reuse_pct_after_first={} total_stage_macs={total_stage_macs} \
         dense_stage_macs={dense_total} mac_reduction_pct={}",
        format_sig9(reuse_after_first),
        format_sig9(reduction)
    );
    Ok(())
}

fn cmd_compare_dense(run: &RunArgs, agreement_floor: Option<f64>) -> Result<()> {
    let cfg = RunConfig::resolve(run)?;
    let floor = match agreement_floor {
        Some(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(TtrError::Config(format!(
                    "agreement floor {f} outside [0, 1]"
                )));
            }
            f
        }
        None => cfg.agreement_floor,
    };
    let spec = cfg.build_spec()?;
    let seq = read_frame_sequence(&cfg.frames)?;

    let mut state = None;
    let mut max_abs_diff = 0.0f64;
    let mut agree: u64 = 0;
    let mut total: u64 = 0;
    let mut cm = ConfusionMatrix::new(spec.num_classes);
    let mut ttr_macs_total: u64 = 0;
    let mut ttr_macs_after_first: u64 = 0;
    let mut frames = 0usize;
    let mut geometry = (0usize, 0usize);

    for item in seq.iter() {
        let frame = item?;
        geometry = (frame.height, frame.width);
        let stream = match state.take() {
            Some(s) => s,
            None => new_stream(&spec, frame.height, frame.width, cfg.block_size)?,
        };
        let (dense, _) = forward_dense(&frame, &spec, cfg.block_size)?;
        let (sparse, next, stats) = forward_ttr(&frame, &spec, stream, cfg.tau)?;
        state = Some(next);

        for (a, b) in sparse.logits.data().iter().zip(dense.logits.data()) {
            let d = (*a as f64 - *b as f64).abs();
            if d > max_abs_diff {
                max_abs_diff = d;
            }
        }
        agree += sparse
            .labels
            .iter()
            .zip(dense.labels.iter())
            .filter(|(a, b)| a == b)
            .count() as u64;
        total += sparse.labels.len() as u64;
        cm.accumulate(&sparse.labels, &dense.labels)?;
        ttr_macs_total += stats.stage_macs;
        if stats.frame_index > 0 {
            ttr_macs_after_first += stats.stage_macs;
        }
        frames += 1;
    }

    let agreement = agree as f64 / total as f64;
    let agreement_miou = miou(&cm)?;
    let dense_per_frame = dense_stage_macs(&spec, geometry.0, geometry.1, cfg.block_size)?;
    let reduction =
        100.0 * (1.0 - ttr_macs_total as f64 / (dense_per_frame * frames as u64) as f64);
    let reduction_after_first = if frames > 1 {
        100.0 * (1.0 - ttr_macs_after_first as f64 / (dense_per_frame * (frames as u64 - 1)) as f64)
    } else {
        0.0
    };

    println!("frames={frames}");
    println!("max_abs_logit_diff={}", format_sig9(max_abs_diff));
    println!("label_agreement_pct={}", format_sig9(100.0 * agreement));
    println!("agreement_miou={}", format_sig9(agreement_miou));
    println!("stage_mac_reduction_pct={}", format_sig9(reduction));
    println!(
        "stage_mac_reduction_pct_after_first={}",
        format_sig9(reduction_after_first)
    );

    if cfg.tau == 1.0 && (max_abs_diff != 0.0 || agree != total) {
        return Err(TtrError::Verification(format!(
            "tau=1.0 must be bit-exact: max_abs_logit_diff={max_abs_diff}, \
             agreement={:.6}",
            100.0 * agreement
        )));
    }
    if agreement < floor {
        return Err(TtrError::Verification(format!(
            "label agreement {:.4}% below floor {:.4}%",
            100.0 * agreement,
            100.0 * floor
        )));
    }
    println!("result=ok");
    Ok(())
}

fn cmd_sweep(run: &RunArgs, taus: Option<&str>) -> Result<()> {
    let cfg = RunConfig::resolve(run)?;
    let taus = match taus {
        Some(s) => parse_taus(s)?,
        None => vec![0.90, 0.95, 0.99, 0.995, 0.999],
    };
    if taus.len() < 2 {
        return Err(TtrError::Usage("sweep needs at least 2 taus".into()));
    }
    for &t in &taus {
        if !(-1.0..=1.0).contains(&t) {
            return Err(TtrError::Config(format!("tau {t} outside [-1, 1]")));
        }
    }
    let spec = cfg.build_spec()?;
    let frames = read_frame_sequence(&cfg.frames)?.load_all()?;
    let rows = sweep_tradeoff(&frames, &spec, &taus, cfg.block_size)?;

    let stats_path = cfg
        .stats
        .clone()
        .unwrap_or_else(|| PathBuf::from("sweep.csv"));
    write_sweep_rows(&rows, &stats_path)?;
    println!("{}", crate::io::stats::SWEEP_HEADER);
    for r in &rows {
        println!(
            "{},{},{},{},{}",
            format_sig9(r.tau),
            format_sig9(r.miou_vs_dense),
            format_sig9(r.pixacc_vs_dense),
            format_sig9(r.reused_pct),
            format_sig9(r.mean_stage_macs)
        );
    }

    // Reuse must be non-increasing in tau.
    let mut sorted: Vec<&crate::metrics::SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.tau.partial_cmp(&b.tau).expect("taus are finite"));
    for pair in sorted.windows(2) {
        if pair[1].reused_pct > pair[0].reused_pct + 1e-9 {
            return Err(TtrError::Verification(format!(
                "reuse not monotone: {}% at tau={} but {}% at tau={}",
                pair[0].reused_pct, pair[0].tau, pair[1].reused_pct, pair[1].tau
            )));
        }
    }
    Ok(())
}

fn cmd_synth(
    kind: &str,
    nframes: usize,
    geometry: &str,
    seed: Option<u64>,
    block_size: Option<usize>,
    out: &Path,
) -> Result<()> {
    let block_size = block_size.unwrap_or(32);
    let (width, height) = parse_geometry(geometry)?;
    let kind = SynthKind::parse(kind, block_size)?;
    synth_sequence(
        kind,
        nframes,
        height,
        width,
        block_size,
        seed.unwrap_or(0),
        out,
    )?;
    println!("wrote {nframes} frames to {}", out.display());
    Ok(())
}

fn list_pgms(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| TtrError::io(dir, e))?;
    let mut names: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| TtrError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".pgm") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names.into_iter().map(|n| dir.join(n)).collect())
}

fn cmd_eval(pred_dir: &Path, gt_dir: &Path) -> Result<()> {
    let pred_paths = list_pgms(pred_dir)?;
    let gt_paths = list_pgms(gt_dir)?;
    if pred_paths.is_empty() {
        return Err(TtrError::Usage(format!(
            "no .pgm maps in {}",
            pred_dir.display()
        )));
    }
    if pred_paths.len() != gt_paths.len() {
        return Err(TtrError::Config(format!(
            "label set length mismatch: {} predictions vs {} references",
            pred_paths.len(),
            gt_paths.len()
        )));
    }
    let mut max_class = 0u8;
    let mut pairs = Vec::with_capacity(pred_paths.len());
    for (p, g) in pred_paths.iter().zip(gt_paths.iter()) {
        let pred = read_pgm(p)?;
        let gt = read_pgm(g)?;
        if pred.height != gt.height || pred.width != gt.width {
            return Err(TtrError::Config(format!(
                "geometry mismatch: {} is {}x{}, {} is {}x{}",
                p.display(),
                pred.width,
                pred.height,
                g.display(),
                gt.width,
                gt.height
            )));
        }
        for &v in pred.labels.iter().chain(gt.labels.iter()) {
            max_class = max_class.max(v);
        }
        pairs.push((pred, gt));
    }
    let mut cm = ConfusionMatrix::new(max_class as usize + 1);
    for (pred, gt) in &pairs {
        cm.accumulate(&pred.labels, &gt.labels)?;
    }
    println!("miou={}", format_sig9(miou(&cm)?));
    println!("pixel_accuracy={}", format_sig9(pixel_accuracy(&cm)?));
    Ok(())
}

/// Parse arguments, run the selected command and map errors to exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Segment { run } => cmd_segment(run),
        Command::CompareDense {
            run,
            agreement_floor,
        } => cmd_compare_dense(run, *agreement_floor),
        Command::Sweep { run, taus } => cmd_sweep(run, taus.as_deref()),
        Command::Synth {
            kind,
            nframes,
            geometry,
            seed,
            block_size,
            out,
        } => cmd_synth(kind, *nframes, geometry, *seed, *block_size, out),
        Command::Eval { pred, gt } => cmd_eval(pred, gt),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::TempDir::new().unwrap();
        let cfg_path = dir.path().join("run.cfg");
        std::fs::write(&cfg_path, "frames=seq\ntau=0.5\nseed=1\nblock_size=16\n").unwrap();
        let args = RunArgs {
            tau: Some(0.75),
            config: Some(cfg_path),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.tau, 0.75);
        assert_eq!(cfg.block_size, 16);
        assert_eq!(cfg.seed, Some(1));
        assert_eq!(cfg.frames, PathBuf::from("seq"));
    }

    #[test]
    fn weights_and_seed_together_is_usage_error() {
        let args = RunArgs {
            frames: Some(PathBuf::from("seq")),
            weights: Some(PathBuf::from("w.ttrw")),
            seed: Some(3),
            ..Default::default()
        };
        assert!(matches!(RunConfig::resolve(&args), Err(TtrError::Usage(_))));
    }

    #[test]
    fn missing_weight_source_is_usage_error() {
        let args = RunArgs {
            frames: Some(PathBuf::from("seq")),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert!(matches!(cfg.build_spec(), Err(TtrError::Usage(_))));
    }

    #[test]
    fn flag_weight_source_overrides_file_seed() {
        let dir = tempfile::TempDir::new().unwrap();
        let cfg_path = dir.path().join("run.cfg");
        std::fs::write(&cfg_path, "frames=seq\nseed=1\n").unwrap();
        let args = RunArgs {
            weights: Some(PathBuf::from("w.ttrw")),
            config: Some(cfg_path),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.weights, Some(PathBuf::from("w.ttrw")));
        assert_eq!(cfg.seed, None);
    }
}
