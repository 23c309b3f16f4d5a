//! File formats: the canonical cell CSV (input tables and predictions),
//! yearly-population exposure construction and the sample archive.

mod archive;
mod cells;

use std::io::Write;
use std::path::Path;

pub use archive::{
    decode_archive, encode_archive, read_sample_archive, write_sample_archive, ArchiveIndex, Field,
    ARCHIVE_FORMAT, ARCHIVE_VERSION,
};
pub use cells::{
    ingest_registry_csv, person_years_from_yearly, read_header, read_predictions_csv,
    read_registry_csv, read_yearly_population, write_header, write_predictions_csv,
    write_registry_csv, IngestReport, CELL_HEADER,
};

use crate::error::{Error, Result};

/// Writes through a sibling temporary file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
