//! Cppcheck `--xml-version=2` reports.

use std::collections::BTreeMap;

use super::{ScanError, StaticFinding, Tool};

/// One finding per `<error>` element. The first `<location>` gives file and
/// line; an error without a location gets an empty file and line 1.
pub fn parse_cppcheck_with(
    report: &str,
    severity_table: &BTreeMap<String, u8>,
) -> Result<Vec<StaticFinding>, ScanError> {
    let doc = roxmltree::Document::parse(report)
        .map_err(|e| ScanError::Format(format!("cppcheck XML: {e}")))?;
    let mut findings = Vec::new();
    for error in doc.descendants().filter(|n| n.has_tag_name("error")) {
        let rule_id = error
            .attribute("id")
            .ok_or_else(|| ScanError::Format("cppcheck <error> without id".into()))?;
        let class = error.attribute("severity").unwrap_or("");
        let severity = *severity_table
            .get(class)
            .ok_or_else(|| ScanError::UnknownSeverity(class.to_owned()))?;
        let cwe = match error.attribute("cwe") {
            Some(v) => Some(v.parse::<u32>().map_err(|_| {
                ScanError::Format(format!("cppcheck {rule_id}: cwe \"{v}\" is not a number"))
            })?),
            None => None,
        };
        let location = error.children().find(|n| n.has_tag_name("location"));
        let file = location
            .and_then(|l| l.attribute("file"))
            .unwrap_or("")
            .to_owned();
        let line = match location.and_then(|l| l.attribute("line")) {
            Some(v) => v.parse::<u32>().map_err(|_| {
                ScanError::Format(format!("cppcheck {rule_id}: line \"{v}\" is not a number"))
            })?,
            None => 1,
        }
        .max(1);
        findings.push(StaticFinding {
            tool: Tool::Cppcheck,
            rule_id: rule_id.to_owned(),
            cwe: cwe.filter(|c| *c != 0),
            severity,
            message: error.attribute("msg").unwrap_or("").to_owned(),
            file,
            line,
        });
    }
    Ok(findings)
}
