//! Record streams on disk: CSV with a mandatory header, or JSON lines.
//!
//! A replica that fails part-way leaves a marker line in the merged file,
//! `#TRUNCATED replica=<r> reason=<text>` for CSV and
//! `{"truncated":true,"replica":r,"reason":"..."}` for JSON lines.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EpisodeRecord, HarnessError, SweepRow};
use crate::harness::config::OutputFormat;

pub const CSV_HEADER: &str =
    "replica,episode,policy_value,optimal_value,gap,cum_regret,suboptimal,clamped_entries,min_visit_release";

pub const SUMMARY_HEADER: &str = "epsilon,mean_final_regret,std_final_regret,mean_pac_count,replicas";

pub const TRUNCATION_PREFIX: &str = "#TRUNCATED";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationMarker {
    pub replica: usize,
    pub reason: String,
}

impl TruncationMarker {
    fn csv_line(&self) -> String {
        let reason = self.reason.replace(['\n', '\r'], " ");
        format!("{TRUNCATION_PREFIX} replica={} reason={reason}", self.replica)
    }

    fn parse_csv_line(line: &str) -> Option<Self> {
        let rest = line.strip_prefix(TRUNCATION_PREFIX)?.trim_start();
        let rest = rest.strip_prefix("replica=")?;
        let (replica, reason) = rest.split_once(' ').unwrap_or((rest, ""));
        Some(Self {
            replica: replica.parse().ok()?,
            reason: reason.strip_prefix("reason=").unwrap_or(reason).to_string(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct JsonMarker {
    truncated: bool,
    replica: usize,
    reason: String,
}

fn csv_row(record: &EpisodeRecord) -> String {
    let opt = |x: Option<String>| x.unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{}",
        record.replica,
        record.episode,
        record.policy_value,
        record.optimal_value,
        record.gap,
        record.cum_regret,
        u8::from(record.suboptimal),
        opt(record.clamped_entries.map(|c| c.to_string())),
        opt(record.min_visit_release.map(|m| m.to_string())),
    )
}

/// Incremental writer for one record stream.
pub struct RecordWriter {
    format: OutputFormat,
    out: BufWriter<File>,
    path: PathBuf,
}

impl RecordWriter {
    pub fn create(path: &Path, format: OutputFormat, header: bool) -> Result<Self, HarnessError> {
        let file = File::create(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut writer = Self {
            format,
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        if header && format == OutputFormat::Csv {
            writer.line(CSV_HEADER)?;
        }
        Ok(writer)
    }

    fn line(&mut self, text: &str) -> Result<(), HarnessError> {
        writeln!(self.out, "{text}").map_err(|source| HarnessError::Io {
            path: self.path.clone(),
            source,
        })
    }

    pub fn write_record(&mut self, record: &EpisodeRecord) -> Result<(), HarnessError> {
        let text = match self.format {
            OutputFormat::Csv => csv_row(record),
            OutputFormat::Json => serde_json::to_string(record).expect("record is serializable"),
        };
        self.line(&text)
    }

    pub fn write_marker(&mut self, marker: &TruncationMarker) -> Result<(), HarnessError> {
        let text = match self.format {
            OutputFormat::Csv => marker.csv_line(),
            OutputFormat::Json => serde_json::to_string(&JsonMarker {
                truncated: true,
                replica: marker.replica,
                reason: marker.reason.clone(),
            })
            .expect("marker is serializable"),
        };
        self.line(&text)
    }

    /// Appends the raw lines of a per-replica part file.
    pub fn append_file(&mut self, part: &Path) -> Result<(), HarnessError> {
        let file = File::open(part).map_err(|source| HarnessError::Io {
            path: part.to_path_buf(),
            source,
        })?;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|source| HarnessError::Io {
                path: part.to_path_buf(),
                source,
            })?;
            self.line(&line)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), HarnessError> {
        self.out.flush().map_err(|source| HarnessError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

/// Parsed contents of a record file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordFile {
    pub records: Vec<EpisodeRecord>,
    pub truncated: Vec<TruncationMarker>,
}

impl RecordFile {
    pub fn is_truncated(&self) -> bool {
        !self.truncated.is_empty()
    }

    /// Records grouped by replica, in ascending replica order.
    pub fn by_replica(&self) -> Vec<Vec<EpisodeRecord>> {
        let mut groups: std::collections::BTreeMap<usize, Vec<EpisodeRecord>> = Default::default();
        for r in &self.records {
            groups.entry(r.replica).or_default().push(r.clone());
        }
        groups.into_values().collect()
    }
}

fn schema_error(path: &Path, line: usize, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Schema(format!("{}:{line}: {msg}", path.display()))
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    name: &str,
    raw: &str,
) -> Result<T, HarnessError> {
    raw.parse()
        .map_err(|_| schema_error(path, line, format!("bad {name} value {raw:?}")))
}

fn parse_optional<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    name: &str,
    raw: &str,
) -> Result<Option<T>, HarnessError> {
    if raw.is_empty() {
        Ok(None)
    } else {
        parse_field(path, line, name, raw).map(Some)
    }
}

fn parse_csv(path: &Path, text: &str) -> Result<RecordFile, HarnessError> {
    let mut out = RecordFile::default();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(schema_error(path, 1, format!("unexpected header {header:?}")));
        }
        None => return Err(schema_error(path, 1, "empty file")),
    }
    for (i, line) in lines {
        let line_no = i + 1;
        if line.starts_with(TRUNCATION_PREFIX) {
            let marker = TruncationMarker::parse_csv_line(line)
                .ok_or_else(|| schema_error(path, line_no, "malformed truncation marker"))?;
            out.truncated.push(marker);
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(schema_error(
                path,
                line_no,
                format!("expected 9 fields, found {}", fields.len()),
            ));
        }
        let suboptimal = match fields[6] {
            "0" => false,
            "1" => true,
            other => return Err(schema_error(path, line_no, format!("bad suboptimal flag {other:?}"))),
        };
        out.records.push(EpisodeRecord {
            replica: parse_field(path, line_no, "replica", fields[0])?,
            episode: parse_field(path, line_no, "episode", fields[1])?,
            policy_value: parse_field(path, line_no, "policy_value", fields[2])?,
            optimal_value: parse_field(path, line_no, "optimal_value", fields[3])?,
            gap: parse_field(path, line_no, "gap", fields[4])?,
            cum_regret: parse_field(path, line_no, "cum_regret", fields[5])?,
            suboptimal,
            clamped_entries: parse_optional(path, line_no, "clamped_entries", fields[7])?,
            min_visit_release: parse_optional(path, line_no, "min_visit_release", fields[8])?,
        });
    }
    Ok(out)
}

fn parse_json_lines(path: &Path, text: &str) -> Result<RecordFile, HarnessError> {
    let mut out = RecordFile::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| schema_error(path, i + 1, e))?;
        if value.get("truncated").is_some() {
            let m: JsonMarker = serde_json::from_value(value).map_err(|e| schema_error(path, i + 1, e))?;
            out.truncated.push(TruncationMarker {
                replica: m.replica,
                reason: m.reason,
            });
        } else {
            out.records
                .push(serde_json::from_value(value).map_err(|e| schema_error(path, i + 1, e))?);
        }
    }
    Ok(out)
}

/// Reads a record file; the format follows the extension (`.jsonl`/`.json`
/// for JSON lines, anything else CSV).
pub fn read_records(path: &Path) -> Result<RecordFile, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => parse_json_lines(path, &text),
        _ => parse_csv(path, &text),
    }
}

pub fn format_epsilon(epsilon: f64) -> String {
    if epsilon.is_infinite() {
        "inf".to_string()
    } else {
        epsilon.to_string()
    }
}

pub fn write_summary(path: &Path, rows: &[SweepRow]) -> Result<(), HarnessError> {
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            format_epsilon(row.epsilon),
            row.mean_final_regret,
            row.std_final_regret,
            row.mean_pac_count,
            row.replicas
        ));
    }
    std::fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(replica: usize, episode: usize, gap: f64, cum: f64) -> EpisodeRecord {
        EpisodeRecord {
            replica,
            episode,
            policy_value: 1.0 - gap,
            optimal_value: 1.0,
            gap,
            cum_regret: cum,
            suboptimal: gap > 0.25,
            clamped_entries: if replica == 0 { Some(3) } else { None },
            min_visit_release: if replica == 0 { Some(0.1 + 0.2) } else { None },
        }
    }

    #[test]
    fn csv_and_json_round_trip_exactly() {
        let dir = std::env::temp_dir().join(format!("pucb-output-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let records = vec![record(0, 1, 0.5, 0.5), record(0, 2, 1.0 / 3.0, 0.5 + 1.0 / 3.0), record(1, 1, 0.0, 0.0)];
        let marker = TruncationMarker {
            replica: 2,
            reason: "disk full\nreally".into(),
        };
        for format in [OutputFormat::Csv, OutputFormat::Json] {
            let path = dir.join(format!("records.{}", format.extension()));
            let mut w = RecordWriter::create(&path, format, true).unwrap();
            for r in &records {
                w.write_record(r).unwrap();
            }
            w.write_marker(&marker).unwrap();
            w.finish().unwrap();
            let back = read_records(&path).unwrap();
            assert_eq!(back.records, records);
            assert_eq!(back.truncated.len(), 1);
            assert_eq!(back.truncated[0].replica, 2);
            assert_eq!(back.by_replica().len(), 2);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn header_is_mandatory() {
        let path = Path::new("x.csv");
        assert!(matches!(parse_csv(path, "1,1,1,1,0,0,0,,\n"), Err(HarnessError::Schema(_))));
        assert!(parse_csv(path, &format!("{CSV_HEADER}\n1,1,1,1,0,0,2,,\n")).is_err());
        let ok = parse_csv(path, &format!("{CSV_HEADER}\n1,1,1,1,0,0,0,,\n")).unwrap();
        assert_eq!(ok.records.len(), 1);
    }
}
