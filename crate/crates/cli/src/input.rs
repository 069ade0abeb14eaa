//! Numeric CSV input with an optional header row.

use std::path::Path;

use fusepath::DataMatrix;

/// Reads an `n x p` matrix. The first row is taken as a header when any of
/// its fields is non-empty text that is not a number. Errors name the line
/// and column.
pub fn read_matrix(path: &Path) -> Result<DataMatrix, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("cannot open {}: {e}", path.display()))?;
    parse_records(reader.records())
}

#[cfg(test)]
pub fn parse_str(text: &str) -> Result<DataMatrix, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    parse_records(reader.records())
}

fn parse_records<I>(records: I) -> Result<DataMatrix, String>
where
    I: Iterator<Item = csv::Result<csv::StringRecord>>,
{
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in records.enumerate() {
        let record = record.map_err(|e| format!("malformed CSV: {e}"))?;
        let line = record.position().map(|p| p.line()).unwrap_or(idx as u64 + 1);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Vec<Result<f64, String>> = record.iter().map(parse_field).collect();
        let textual = record.iter().any(|f| !f.is_empty() && f.parse::<f64>().is_err());
        if idx == 0 && textual {
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(format!("line {line}: found {} columns, expected {expected}", record.len()));
        }
        let mut row = Vec::with_capacity(expected);
        for (col, value) in parsed.into_iter().enumerate() {
            row.push(value.map_err(|e| format!("line {line}, column {}: {e}", col + 1))?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err("input has no data rows".into());
    }
    DataMatrix::from_rows(&rows).map_err(|e| e.to_string())
}

fn parse_field(field: &str) -> Result<f64, String> {
    if field.is_empty() {
        return Err("empty field".into());
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(format!("non-finite value '{field}'")),
        Err(_) => Err(format!("cannot parse '{field}' as a number")),
    }
}
