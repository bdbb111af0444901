//! Synthetic search universe, ground-truth user clicks, and impression logs.

mod click;
mod simulate;
mod universe;

pub use click::{ClickModelConfig, GroundTruth, UserClickModel};
pub use simulate::{sample_clicks, simulate_day, ImpressionRecord, Recommender};
pub use universe::{build_universe, Query, QueryUniverse, SessionParams, WorldConfig};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_log(path: &Path, records: &[ImpressionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(w, "{}", r.to_json_line()?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<ImpressionRecord>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            ImpressionRecord::from_json_line(&line)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
