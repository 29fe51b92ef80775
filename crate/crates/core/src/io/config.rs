//! Plain-text `key=value` run configuration, one entry per line, `#`
//! comments. Command-line flags override file values.

use std::fs;
use std::path::{Path, PathBuf};

use crate::backbone::StageDesc;
use crate::error::{Result, TtrError};

/// Raw values read from a config file; everything optional.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    pub frames: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub block_size: Option<usize>,
    pub classes: Option<usize>,
    pub out: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub agreement_floor: Option<f64>,
    pub stem: Option<String>,
    pub stages: Option<String>,
}

pub fn parse_config_file(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path).map_err(|e| TtrError::io(path, e))?;
    let mut cfg = FileConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            TtrError::Config(format!(
                "{}:{}: expected key=value, got {line:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| {
            TtrError::Config(format!(
                "{}:{}: invalid {what} value {value:?}",
                path.display(),
                lineno + 1
            ))
        };
        match key {
            "frames" => cfg.frames = Some(PathBuf::from(value)),
            "weights" => cfg.weights = Some(PathBuf::from(value)),
            "seed" => cfg.seed = Some(value.parse().map_err(|_| bad("seed"))?),
            "tau" => cfg.tau = Some(value.parse().map_err(|_| bad("tau"))?),
            "block_size" => cfg.block_size = Some(value.parse().map_err(|_| bad("block_size"))?),
            "classes" => cfg.classes = Some(value.parse().map_err(|_| bad("classes"))?),
            "out" => cfg.out = Some(PathBuf::from(value)),
            "stats" => cfg.stats = Some(PathBuf::from(value)),
            "agreement_floor" => {
                cfg.agreement_floor = Some(value.parse().map_err(|_| bad("agreement_floor"))?)
            }
            "stem" => cfg.stem = Some(value.to_string()),
            "stages" => cfg.stages = Some(value.to_string()),
            other => {
                return Err(TtrError::Config(format!(
                    "{}:{}: unknown key {other:?}",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(cfg)
}

/// Stem description: output channels with an optional trailing `p` for a
/// pooling step, e.g. `16p`.
pub fn parse_stem(s: &str) -> Result<(usize, bool)> {
    let (digits, pool) = match s.strip_suffix('p') {
        Some(d) => (d, true),
        None => (s, false),
    };
    let channels = digits
        .parse::<usize>()
        .map_err(|_| TtrError::Config(format!("invalid stem description {s:?}")))?;
    Ok((channels, pool))
}

/// Stage list: comma-separated `<out_channels>x<convs>[p]`, e.g. `32x2p,64x2p`.
pub fn parse_stages(s: &str) -> Result<Vec<StageDesc>> {
    let mut stages = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        let (body, pool) = match part.strip_suffix('p') {
            Some(d) => (d, true),
            None => (part, false),
        };
        let (ch, convs) = body.split_once('x').ok_or_else(|| {
            TtrError::Config(format!("invalid stage description {part:?}, want NxMp"))
        })?;
        stages.push(StageDesc {
            out_channels: ch
                .parse()
                .map_err(|_| TtrError::Config(format!("invalid stage channels in {part:?}")))?,
            convs: convs
                .parse()
                .map_err(|_| TtrError::Config(format!("invalid stage conv count in {part:?}")))?,
            pool,
        });
    }
    if stages.is_empty() {
        return Err(TtrError::Config("empty stage list".into()));
    }
    Ok(stages)
}

/// Comma-separated threshold list, e.g. `0.9,0.95,0.99`.
pub fn parse_taus(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| TtrError::Config(format!("invalid tau {t:?}")))
        })
        .collect()
}

/// Geometry `WxH`, e.g. `128x128` -> (width, height).
pub fn parse_geometry(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s
        .split_once('x')
        .ok_or_else(|| TtrError::Config(format!("invalid geometry {s:?}, want WxH")))?;
    let width = w
        .parse::<usize>()
        .map_err(|_| TtrError::Config(format!("invalid width in {s:?}")))?;
    let height = h
        .parse::<usize>()
        .map_err(|_| TtrError::Config(format!("invalid height in {s:?}")))?;
    if width == 0 || height == 0 {
        return Err(TtrError::Config(format!("zero geometry {s:?}")));
    }
    Ok((width, height))
}
