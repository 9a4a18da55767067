use std::path::Path;

use crate::data::impute::impute_serve_speed;
use crate::data::normalize::{fit_normalization, NormalizationMeta};
use crate::data::record::{clean_points, parse_point_csv, write_points_csv, PointRecord};
use crate::data::sequence::{build_match_sequences, MatchSequence};
use crate::error::Result;

/// Cleaned, imputed and normalized records with their statistics.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub records: Vec<PointRecord>,
    pub meta: NormalizationMeta,
    /// Set when every running distance was identical.
    pub distance_zero_spread: bool,
}

impl Ingested {
    pub fn sequences(&self) -> Result<Vec<MatchSequence>> {
        build_match_sequences(&self.records)
    }

    /// Writes `points.csv` and `normalization.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
        write_points_csv(&dir.join("points.csv"), &self.records)?;
        self.meta.save(&dir.join("normalization.txt"))
    }
}

/// Imputes missing serve speeds and normalizes cleaned records. Records are
/// ordered by match id then point number.
pub fn ingest_records(mut records: Vec<PointRecord>, seed: u64) -> Result<Ingested> {
    records.sort_by(|a, b| a.match_id.cmp(&b.match_id).then(a.point_no.cmp(&b.point_no)));
    impute_serve_speed(&mut records, seed)?;
    let (meta, distance_zero_spread) = fit_normalization(&mut records)?;
    Ok(Ingested { records, meta, distance_zero_spread })
}

pub fn ingest_file(raw_csv: &Path, seed: u64) -> Result<Ingested> {
    ingest_records(clean_points(&parse_point_csv(raw_csv)?)?, seed)
}
