//! Flawfinder `--csv` reports.

use super::{ScanError, StaticFinding, Tool};

const REQUIRED: [&str; 5] = ["file", "line", "level", "category", "name"];

fn first_cwe(field: &str) -> Option<u32> {
    let start = field.find("CWE-")? + 4;
    let digits: String = field[start..]
        .chars()
        .take_while(char::is_ascii_digit)
        .collect();
    digits.parse().ok()
}

/// One finding per data row. Columns are located by header name
/// (case-insensitive); `File`, `Line`, `Level`, `Category` and `Name` are
/// required, `CWEs` and `Warning` are optional. `Level` becomes the severity.
pub fn parse_flawfinder(report: &str) -> Result<Vec<StaticFinding>, ScanError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(report.as_bytes());
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(ScanError::Format(format!("flawfinder header: {e}"))),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Ok(Vec::new());
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
    };
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(REQUIRED) {
        *slot = column(name).ok_or_else(|| {
            ScanError::Format(format!("flawfinder report is missing column \"{name}\""))
        })?;
    }
    let [file_col, line_col, level_col, _category_col, name_col] = idx;
    let cwe_col = column("cwes");
    let warning_col = column("warning");

    let mut findings = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| ScanError::Row {
            row: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let line: u32 = field(line_col).parse().map_err(|_| ScanError::Row {
            row,
            message: format!("line \"{}\" is not a number", field(line_col)),
        })?;
        if line == 0 {
            return Err(ScanError::Row {
                row,
                message: "line must be >= 1".into(),
            });
        }
        let level: i64 = field(level_col).parse().map_err(|_| ScanError::Row {
            row,
            message: format!("level \"{}\" is not a number", field(level_col)),
        })?;
        if !(0..=5).contains(&level) {
            return Err(ScanError::Row {
                row,
                message: format!("level {level} is outside 0-5"),
            });
        }
        findings.push(StaticFinding {
            tool: Tool::Flawfinder,
            rule_id: field(name_col).to_owned(),
            cwe: cwe_col.and_then(|c| first_cwe(field(c))),
            severity: level as u8,
            message: warning_col.map(|c| field(c).to_owned()).unwrap_or_default(),
            file: field(file_col).to_owned(),
            line,
        });
    }
    Ok(findings)
}
