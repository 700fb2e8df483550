use super::{Classification, ClassificationTable, ReportError};
use crate::corpus::CategorySet;

pub const CSV_HEADER: [&str; 5] = ["id", "title", "category_key", "category_name", "confidence"];

/// Reads a table previously written in CSV form.
///
/// Category names are taken from `categories`; the name column is only checked
/// for presence. Rows are numbered from 1, header excluded.
pub fn load_replay_table(
    csv_text: &str,
    categories: &CategorySet,
) -> Result<ClassificationTable, ReportError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(csv_text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| ReportError::Replay {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols != CSV_HEADER {
        return Err(ReportError::Replay {
            row: 0,
            message: format!(
                "expected header `{}`, found `{}`",
                CSV_HEADER.join(","),
                cols.join(",")
            ),
        });
    }

    let mut table = ClassificationTable::new(categories.clone());
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let bad = |message: String| ReportError::Replay { row, message };
        let record = record.map_err(|e| bad(e.to_string()))?;
        let key = record[2].trim();
        let spec = categories
            .get(
                categories
                    .index_of(key)
                    .ok_or_else(|| bad(format!("unknown category_key `{key}`")))?,
            )
            .expect("index_of returns a valid index");
        let raw = record[4].trim();
        let confidence: f64 = raw
            .parse()
            .map_err(|_| bad(format!("confidence `{raw}` is not a number")))?;
        if !(confidence > 0.0 && confidence <= 1.0) {
            return Err(bad(format!("confidence {confidence} outside (0, 1]")));
        }
        table.rows.push(Classification {
            paper_id: record[0].to_owned(),
            title: record[1].to_owned(),
            category_key: spec.key.clone(),
            category_name: spec.name.clone(),
            confidence,
        });
    }
    Ok(table)
}
