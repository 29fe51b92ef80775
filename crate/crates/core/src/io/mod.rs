//! File formats and fixtures: PPM frame sequences, PGM label maps, the TTRW
//! weight container, run configuration files, stats CSV output and the
//! synthetic sequence generator.

pub mod config;
pub mod pnm;
pub mod stats;
pub mod synth;
pub mod weights;

pub use config::{
    parse_config_file, parse_geometry, parse_stages, parse_stem, parse_taus, FileConfig,
};
pub use pnm::{
    read_frame_sequence, read_pgm, read_ppm, write_pgm, write_ppm, FrameSequence, LabelMap,
};
pub use stats::{
    format_sig9, write_frame_stats, write_sweep_rows, FrameRecord, FRAME_HEADER, SWEEP_HEADER,
};
pub use synth::{generate_frames, synth_sequence, SynthKind};
pub use weights::{load_weights, save_weights};
