//! Electrodogram images.

use std::path::Path;

use cisid_core::Electrodogram;

use crate::error::{HarnessError, Result};

/// Writes `eg` as a binary PGM: one row per electrode with the most apical
/// electrode at the bottom, one column per frame, grey level equal to the
/// current level (0 is black).
pub fn plot_electrodogram(eg: &Electrodogram, path: impl AsRef<Path>) -> Result<()> {
    if eg.is_empty() {
        return Err(HarnessError::Data("cannot plot an empty electrodogram".into()));
    }
    Ok(eg.write_pgm(path)?)
}
