//! Stats CSV output. Fixed headers, floats printed with 9 significant
//! digits (enough to round-trip f32-derived values exactly).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, TtrError};
use crate::metrics::{FrameStats, SweepRow};

pub const FRAME_HEADER: &str =
    "frame,blocks_total,blocks_active,blocks_reused,stage_macs,head_macs,similarity_ops,wall_micros,dynamism";
pub const SWEEP_HEADER: &str = "tau,miou_vs_dense,pixacc_vs_dense,reused_pct,mean_stage_macs";

/// One segment-mode CSV row: the frame stats plus the frame's dynamism proxy
/// (0 for the first frame, where no previous frame exists).
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub stats: FrameStats,
    pub dynamism: f64,
}

/// 9 significant digits, exponent notation.
pub fn format_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn write_frame_stats(records: &[FrameRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{FRAME_HEADER}").expect("vec write");
    for r in records {
        let s = &r.stats;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.frame_index,
            s.blocks_total,
            s.blocks_active,
            s.blocks_reused,
            s.stage_macs,
            s.head_macs,
            s.similarity_ops,
            s.wall_micros,
            format_sig9(r.dynamism)
        )
        .expect("vec write");
    }
    fs::write(path, out).map_err(|e| TtrError::io(path, e))
}

pub fn write_sweep_rows(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{SWEEP_HEADER}").expect("vec write");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            format_sig9(r.tau),
            format_sig9(r.miou_vs_dense),
            format_sig9(r.pixacc_vs_dense),
            format_sig9(r.reused_pct),
            format_sig9(r.mean_stage_macs)
        )
        .expect("vec write");
    }
    fs::write(path, out).map_err(|e| TtrError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn record(i: u64) -> FrameRecord {
        FrameRecord {
            stats: FrameStats {
                frame_index: i,
                blocks_total: 16,
                blocks_active: 4,
                blocks_reused: 12,
                stage_macs: 123456,
                head_macs: 789,
                similarity_ops: 42,
                wall_micros: 1000 + i,
            },
            dynamism: 0.017 + i as f64 * 0.003,
        }
    }

    #[test]
    fn empty_records_give_header_only_file() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("s.csv");
        write_frame_stats(&[], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{FRAME_HEADER}\n"));
    }

    #[test]
    fn single_record_is_generic_csv() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("s.csv");
        write_frame_stats(&[record(0)], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 9);
        assert_eq!(lines[1].split(',').count(), 9);
        // Every field parses as a number.
        for field in lines[1].split(',') {
            field.parse::<f64>().unwrap();
        }
    }

    #[test]
    fn hundred_row_roundtrip_preserves_nine_digits() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("s.csv");
        let records: Vec<FrameRecord> = (0..100).map(record).collect();
        write_frame_stats(&records, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        for (line, r) in text.lines().skip(1).zip(&records) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[4].parse::<u64>().unwrap(), r.stats.stage_macs);
            // Parse-then-reformat is the identity at 9 significant digits.
            let parsed: f64 = fields[8].parse().unwrap();
            assert_eq!(format_sig9(parsed), fields[8]);
            assert_eq!(format_sig9(r.dynamism), fields[8]);
        }
    }

    #[test]
    fn sweep_rows_written_with_header() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("sweep.csv");
        let rows = vec![crate::metrics::SweepRow {
            tau: 0.99,
            miou_vs_dense: 1.0,
            pixacc_vs_dense: 1.0,
            reused_pct: 50.0,
            mean_stage_macs: 123.0,
        }];
        write_sweep_rows(&rows, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(SWEEP_HEADER));
        assert_eq!(text.lines().count(), 2);
    }
}
