use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::InteractionLog;
use crate::error::{Error, Result};

/// More than this fraction of malformed lines rejects the whole file.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// `user::item::rating::timestamp`
    Movielens,
    /// `user,item,rating,timestamp`
    Amazon,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens" => Ok(DataFormat::Movielens),
            "amazon" => Ok(DataFormat::Amazon),
            other => Err(Error::Config(format!("unknown format {other:?} (expected movielens|amazon)"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub lines: usize,
    pub records: usize,
    pub malformed: usize,
    pub header_skipped: bool,
    /// 1-based line numbers of the first few malformed lines.
    pub first_malformed: Vec<usize>,
}

fn parse_fields(fields: &[&str]) -> Option<(String, String, f64, i64)> {
    let [user, item, rating, ts] = fields else {
        return None;
    };
    let (user, item) = (user.trim(), item.trim());
    if user.is_empty() || item.is_empty() {
        return None;
    }
    let rating: f64 = rating.trim().parse().ok()?;
    if !(1.0..=5.0).contains(&rating) {
        return None;
    }
    let ts = ts.trim();
    let timestamp = ts
        .parse::<i64>()
        .ok()
        .or_else(|| ts.parse::<f64>().ok().filter(|t| t.is_finite()).map(|t| t as i64))?;
    Some((user.to_owned(), item.to_owned(), rating, timestamp))
}

fn parse_lines<'a>(
    lines: impl Iterator<Item = &'a str>,
    split: impl Fn(&'a str) -> Vec<&'a str>,
    allow_header: bool,
) -> Result<(InteractionLog, ParseReport)> {
    let mut log = InteractionLog::default();
    let mut report = ParseReport::default();
    for (n, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields = split(line);
        if n == 0 && allow_header && fields.len() == 4 && fields[2].trim().parse::<f64>().is_err() {
            report.header_skipped = true;
            continue;
        }
        report.lines += 1;
        match parse_fields(&fields) {
            Some((u, i, r, t)) => log.push(&u, &i, r, t),
            None => {
                report.malformed += 1;
                if report.first_malformed.len() < 5 {
                    report.first_malformed.push(n + 1);
                }
            }
        }
    }
    report.records = log.records.len();
    if log.records.is_empty() {
        return Err(Error::Data("no records".into()));
    }
    if report.malformed as f64 > MAX_MALFORMED_FRACTION * report.lines as f64 {
        return Err(Error::Data(format!(
            "{} of {} lines malformed (first at lines {:?})",
            report.malformed, report.lines, report.first_malformed
        )));
    }
    Ok((log, report))
}

fn read(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

pub fn parse_movielens_str(text: &str) -> Result<(InteractionLog, ParseReport)> {
    parse_lines(text.lines(), |l| l.split("::").collect(), false)
}

/// Reads a MovieLens `ratings.dat` (`user::item::rating::timestamp`).
pub fn parse_movielens(path: impl AsRef<Path>) -> Result<(InteractionLog, ParseReport)> {
    parse_movielens_str(&read(path.as_ref())?)
}

/// A first line whose rating field is not numeric is treated as a header.
pub fn parse_amazon_str(text: &str) -> Result<(InteractionLog, ParseReport)> {
    parse_lines(text.lines(), |l| l.split(',').collect(), true)
}

/// Reads a 4-column `user,item,rating,timestamp` CSV.
pub fn parse_amazon_csv(path: impl AsRef<Path>) -> Result<(InteractionLog, ParseReport)> {
    parse_amazon_str(&read(path.as_ref())?)
}
