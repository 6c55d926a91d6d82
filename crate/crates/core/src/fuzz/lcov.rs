use std::collections::BTreeMap;

use super::{CoverageMap, FileCoverage, FuzzError};

fn parse_err(line: usize, message: impl Into<String>) -> FuzzError {
    FuzzError::Parse {
        line,
        message: message.into(),
    }
}

fn number<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T, FuzzError> {
    s.trim().parse().map_err(|_| parse_err(line, format!("invalid {what} `{s}`")))
}

/// Parses lcov tracefile text into exact per-file line sets.
///
/// `DA` records define the instrumentable lines; a positive hit count marks
/// a line covered. `LF`/`LH` totals, when present, must agree with the `DA`
/// records. Function and branch records are accepted and ignored.
pub fn parse_coverage(raw: &str, attribution: &str) -> Result<CoverageMap, FuzzError> {
    let mut files: BTreeMap<String, FileCoverage> = BTreeMap::new();
    let mut current: Option<(String, FileCoverage, Option<usize>, Option<usize>)> = None;
    let mut last_line = 0;
    for (i, text) in raw.lines().enumerate() {
        let n = i + 1;
        last_line = n;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        if text == "end_of_record" {
            let (path, cov, lf, lh) = current.take().ok_or_else(|| parse_err(n, "end_of_record without SF"))?;
            if let Some(lf) = lf {
                if lf != cov.instrumentable.len() {
                    return Err(parse_err(n, format!("LF {lf} disagrees with {} DA records", cov.instrumentable.len())));
                }
            }
            if let Some(lh) = lh {
                if lh != cov.covered.len() {
                    return Err(parse_err(n, format!("LH {lh} disagrees with {} covered lines", cov.covered.len())));
                }
            }
            let slot = files.entry(path).or_default();
            slot.covered.extend(cov.covered);
            slot.instrumentable.extend(cov.instrumentable);
            continue;
        }
        let (key, value) = text
            .split_once(':')
            .ok_or_else(|| parse_err(n, format!("expected KEY:VALUE, found `{text}`")))?;
        match key {
            "TN" => {}
            "SF" => {
                if current.is_some() {
                    return Err(parse_err(n, "SF inside an unterminated record"));
                }
                if value.trim().is_empty() {
                    return Err(parse_err(n, "empty source path"));
                }
                current = Some((value.trim().to_string(), FileCoverage::default(), None, None));
            }
            "DA" | "LF" | "LH" | "FN" | "FNDA" | "FNF" | "FNH" | "BRDA" | "BRF" | "BRH" => {
                let (_, cov, lf, lh) = current
                    .as_mut()
                    .ok_or_else(|| parse_err(n, format!("{key} record outside SF ... end_of_record")))?;
                match key {
                    "DA" => {
                        let mut parts = value.split(',');
                        let line: u32 = number(parts.next().unwrap_or(""), n, "line number")?;
                        let hits: u64 = number(parts.next().unwrap_or(""), n, "hit count")?;
                        if line == 0 {
                            return Err(parse_err(n, "line numbers start at 1"));
                        }
                        cov.instrumentable.insert(line);
                        if hits > 0 {
                            cov.covered.insert(line);
                        }
                    }
                    "LF" => *lf = Some(number(value, n, "LF")?),
                    "LH" => *lh = Some(number(value, n, "LH")?),
                    _ => {}
                }
            }
            other => return Err(parse_err(n, format!("unknown lcov record `{other}`"))),
        }
    }
    if current.is_some() {
        return Err(parse_err(last_line, "missing end_of_record"));
    }
    Ok(CoverageMap {
        attribution: attribution.to_string(),
        files,
    })
}
