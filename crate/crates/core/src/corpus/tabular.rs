use std::path::Path;

use crate::error::{Error, Result};

use super::LabeledExample;

/// Column names and label tokens of a delimited text dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabularFormat {
    pub text_column: String,
    pub label_column: String,
    pub positive_label: String,
    pub negative_label: String,
    pub delimiter: u8,
}

impl TabularFormat {
    /// Comma-delimited unless the path ends in `.tsv`.
    pub fn delimiter_for(path: &Path) -> u8 {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => b'\t',
            _ => b',',
        }
    }
}

pub fn load_tabular(path: &Path, format: &TabularFormat) -> Result<Vec<LabeledExample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tabular(file, format)
}

/// Reads a headed, delimited UTF-8 table. Label cells are compared after
/// trimming surrounding whitespace; text cells are kept byte for byte.
pub fn read_tabular<R: std::io::Read>(
    reader: R,
    format: &TabularFormat,
) -> Result<Vec<LabeledExample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("header row: {e}")))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| {
                Error::Schema(format!(
                    "column {name:?} not found; header has {:?}",
                    headers.iter().collect::<Vec<_>>()
                ))
            })
    };
    let text_ix = column(&format.text_column)?;
    let label_ix = column(&format.label_column)?;
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::data(format!("row {row}: {e}")))?;
        let text = record
            .get(text_ix)
            .ok_or_else(|| Error::data(format!("row {row}: missing text cell")))?;
        let token = record
            .get(label_ix)
            .ok_or_else(|| Error::data(format!("row {row}: missing label cell")))?
            .trim();
        let label = if token == format.positive_label {
            1
        } else if token == format.negative_label {
            0
        } else {
            return Err(Error::data(format!(
                "row {row}: unknown label {token:?} (expected {:?} or {:?})",
                format.positive_label, format.negative_label
            )));
        };
        out.push(LabeledExample {
            text: text.to_string(),
            label,
            source_id: Some(format!("row{row}")),
        });
    }
    Ok(out)
}
