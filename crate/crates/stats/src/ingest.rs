use std::path::Path;

use serde::Deserialize;

use crate::{Criterion, RatingRecord, StatsError};

#[derive(Debug, Deserialize)]
struct CsvRow {
    participant_id: String,
    condition: String,
    #[serde(default)]
    genre_group: Option<String>,
    theme: u8,
    setting: u8,
    structure: u8,
    plot: u8,
    pace: u8,
    consistency: u8,
    characters: u8,
    dialogue: u8,
    holistic: u8,
    #[serde(default)]
    free_text: Option<String>,
}

fn non_blank(s: Option<String>) -> Option<String> {
    s.filter(|v| !v.trim().is_empty())
}

impl From<CsvRow> for RatingRecord {
    fn from(row: CsvRow) -> Self {
        let values = [
            row.theme,
            row.setting,
            row.structure,
            row.plot,
            row.pace,
            row.consistency,
            row.characters,
            row.dialogue,
        ];
        RatingRecord {
            participant_id: row.participant_id.trim().to_string(),
            condition: row.condition.trim().to_string(),
            genre_group: non_blank(row.genre_group).map(|g| g.trim().to_string()),
            ratings: Criterion::ALL.into_iter().zip(values).collect(),
            holistic: row.holistic,
            free_text: non_blank(row.free_text),
        }
    }
}

fn validated(records: Vec<RatingRecord>) -> Result<Vec<RatingRecord>, StatsError> {
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

/// CSV with a header row naming the columns.
pub fn parse_csv(text: &str) -> Result<Vec<RatingRecord>, StatsError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let records = reader
        .deserialize::<CsvRow>()
        .enumerate()
        .map(|(i, row)| {
            row.map(RatingRecord::from)
                .map_err(|e| StatsError::Parse(format!("CSV row {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    validated(records)
}

/// A JSON array of records.
pub fn parse_json(text: &str) -> Result<Vec<RatingRecord>, StatsError> {
    let records: Vec<RatingRecord> =
        serde_json::from_str(text).map_err(|e| StatsError::Parse(format!("ratings JSON: {e}")))?;
    validated(records)
}

fn read(path: &Path) -> Result<String, StatsError> {
    std::fs::read_to_string(path).map_err(|e| StatsError::Parse(format!("reading {}: {e}", path.display())))
}

pub fn load_csv(path: &Path) -> Result<Vec<RatingRecord>, StatsError> {
    parse_csv(&read(path)?)
}

pub fn load_json(path: &Path) -> Result<Vec<RatingRecord>, StatsError> {
    parse_json(&read(path)?)
}

/// Pick the format from the file extension: `.csv` or anything else as JSON.
pub fn load_dataset(path: &Path) -> Result<Vec<RatingRecord>, StatsError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => load_csv(path),
        _ => load_json(path),
    }
}
