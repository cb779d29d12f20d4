//! Dataset loading, the portable on-disk format, and row preprocessing.

mod portable;
mod preprocess;
mod raven;

pub use portable::{load_portable, save_portable, ManifestRecord, PortableSummary, CELL_DIR, MANIFEST};
pub use preprocess::*;
pub use raven::load_raven_archive;
