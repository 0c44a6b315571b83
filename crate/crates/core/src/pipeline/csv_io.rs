use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, SecondsFormat, Timelike, Utc};
use serde::Serialize;

use super::PipelineError;
use crate::model::{parse_severity, CodeField, CrashRecord, Flag, GeoPoint, WeatherCategory};

const REQUIRED: [&str; 8] = ["ID", "DEC_LAT", "DEC_LONG", "CRASH_DATETIME", "HOUR_OF_DAY", "CRASH_MONTH", "SEVERITY", "COUNTY"];

/// Column order used when writing.
pub fn csv_header() -> Vec<&'static str> {
    let mut cols: Vec<&'static str> = REQUIRED.to_vec();
    cols.extend(Flag::ALL.iter().map(|f| f.name()));
    cols.extend(CodeField::ALL.iter().map(|c| c.name()));
    cols
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowError {
    /// 1-based line number in the source file.
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct IngestResult {
    pub records: Vec<CrashRecord>,
    pub errors: Vec<RowError>,
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<IngestResult, PipelineError> {
    let path = path.as_ref();
    let file =
        File::open(path).map_err(|source| PipelineError::UnreadableFile { path: path.display().to_string(), source })?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<IngestResult, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(PipelineError::MissingHeader(REQUIRED.iter().map(|s| s.to_string()).collect()));
    }
    let index: HashMap<String, usize> =
        headers.iter().enumerate().map(|(i, h)| (h.trim().trim_start_matches('\u{feff}').to_ascii_uppercase(), i)).collect();
    let missing: Vec<String> = REQUIRED.iter().filter(|c| !index.contains_key(**c)).map(|c| c.to_string()).collect();
    if !missing.is_empty() {
        return Err(PipelineError::MissingHeader(missing));
    }
    let columns = ColumnMap {
        required: REQUIRED.map(|c| index[c]),
        flags: Flag::ALL.map(|f| index.get(f.name()).copied()),
        codes: CodeField::ALL.map(|c| index.get(c.name()).copied()),
    };

    let mut out = IngestResult::default();
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                out.errors.push(RowError { line, message: e.to_string() });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&row, &columns) {
            Ok(rec) => out.records.push(rec),
            Err(message) => out.errors.push(RowError { line, message }),
        }
    }
    Ok(out)
}

struct ColumnMap {
    required: [usize; 8],
    flags: [Option<usize>; 15],
    codes: [Option<usize>; 3],
}

fn field<'a>(row: &'a csv::StringRecord, idx: usize) -> Option<&'a str> {
    row.get(idx).map(str::trim).filter(|s| !s.is_empty())
}

fn parse_row(row: &csv::StringRecord, cols: &ColumnMap) -> Result<CrashRecord, String> {
    let [id_i, lat_i, lon_i, dt_i, hour_i, month_i, sev_i, county_i] = cols.required;
    let id = field(row, id_i).ok_or("ID is empty")?.to_string();

    let location = match (field(row, lat_i), field(row, lon_i)) {
        (Some(lat), Some(lon)) => {
            let lat: f64 = lat.parse().map_err(|_| format!("DEC_LAT {lat:?} is not a number"))?;
            let lon: f64 = lon.parse().map_err(|_| format!("DEC_LONG {lon:?} is not a number"))?;
            Some(GeoPoint::new(lat, lon).map_err(|e| e.to_string())?)
        }
        _ => None,
    };

    let occurred_at = field(row, dt_i)
        .map(|s| {
            DateTime::parse_from_rfc3339(s)
                .map(|t| t.with_timezone(&Utc))
                .map_err(|e| format!("CRASH_DATETIME {s:?}: {e}"))
        })
        .transpose()?;

    let hour_of_day = match field(row, hour_i) {
        Some(s) => s.parse::<u8>().ok().filter(|h| *h <= 23).ok_or_else(|| format!("HOUR_OF_DAY {s:?} outside 0..=23"))?,
        None => occurred_at.map(|t| t.hour() as u8).ok_or("HOUR_OF_DAY is empty")?,
    };
    let crash_month = match field(row, month_i) {
        Some(s) => s
            .parse::<u8>()
            .ok()
            .filter(|m| (1..=12).contains(m))
            .ok_or_else(|| format!("CRASH_MONTH {s:?} outside 1..=12"))?,
        None => occurred_at.map(|t| t.month() as u8).ok_or("CRASH_MONTH is empty")?,
    };

    let severity = field(row, sev_i)
        .map(|s| {
            let code: i64 = s.parse().map_err(|_| format!("SEVERITY {s:?} is not an integer"))?;
            parse_severity(code).map_err(|e| e.to_string())
        })
        .transpose()?;

    let county = field(row, county_i).unwrap_or("").to_string();

    let mut flags = [None; 15];
    for (slot, (flag, col)) in flags.iter_mut().zip(Flag::ALL.iter().zip(cols.flags.iter())) {
        if let Some(s) = col.and_then(|c| field(row, c)) {
            *slot = Some(match s {
                "0" | "0.0" => false,
                "1" | "1.0" => true,
                other => return Err(format!("{} value {other:?} is not 0 or 1", flag.name())),
            });
        }
    }

    let mut rec = CrashRecord {
        id,
        location,
        occurred_at,
        hour_of_day,
        crash_month,
        severity,
        county,
        flags,
        weather: None,
        illumination: None,
        road_condition: None,
    };
    for (code, col) in CodeField::ALL.iter().zip(cols.codes.iter()) {
        if let Some(s) = col.and_then(|c| field(row, c)) {
            match code {
                CodeField::Weather1 => rec.weather = Some(s.parse::<WeatherCategory>().map_err(|e| e.to_string())?),
                _ => {
                    let v: u8 = s.parse().map_err(|_| format!("{} value {s:?} is not a small integer", code.name()))?;
                    rec.set_code(*code, Some(v)).map_err(|e| e.to_string())?;
                }
            }
        }
    }
    Ok(rec)
}

fn format_row(rec: &CrashRecord) -> Vec<String> {
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut row = vec![
        rec.id.clone(),
        opt(rec.location.map(|p| p.lat().to_string())),
        opt(rec.location.map(|p| p.lon().to_string())),
        opt(rec.occurred_at.map(|t| t.to_rfc3339_opts(SecondsFormat::AutoSi, true))),
        rec.hour_of_day.to_string(),
        rec.crash_month.to_string(),
        opt(rec.severity.map(|s| s.code().to_string())),
        rec.county.clone(),
    ];
    row.extend(rec.flags.iter().map(|f| opt(f.map(|b| if b { "1" } else { "0" }.to_string()))));
    row.extend(CodeField::ALL.iter().map(|c| opt(rec.code(*c).map(|v| v.to_string()))));
    row
}

pub fn write_csv<W: Write>(writer: W, records: &[CrashRecord]) -> Result<(), PipelineError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(csv_header())?;
    for rec in records {
        wtr.write_record(format_row(rec))?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_csv_file(path: impl AsRef<Path>, records: &[CrashRecord]) -> Result<(), PipelineError> {
    let path = path.as_ref();
    let file =
        File::create(path).map_err(|source| PipelineError::UnreadableFile { path: path.display().to_string(), source })?;
    write_csv(std::io::BufWriter::new(file), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SeverityLevel;

    #[test]
    fn header_only_file_yields_nothing() {
        let text = csv_header().join(",") + "\n";
        let res = read_csv(text.as_bytes()).unwrap();
        assert!(res.records.is_empty());
        assert!(res.errors.is_empty());
    }

    #[test]
    fn header_is_order_and_case_insensitive() {
        let text = "severity,county,id,dec_long,dec_lat,crash_datetime,hour_of_day,crash_month,Distracted\n\
                    2,C1,7,-75.1,40.2,2023-01-05T08:15:00Z,8,1,1\n";
        let res = read_csv(text.as_bytes()).unwrap();
        assert_eq!(res.errors, vec![]);
        let r = &res.records[0];
        assert_eq!(r.severity, Some(SeverityLevel::Serious));
        assert_eq!(r.flag(Flag::Distracted), Some(true));
        assert_eq!(r.flag(Flag::IcyRoad), None);
        assert_eq!(r.location.unwrap().lat(), 40.2);
    }

    #[test]
    fn bad_severity_isolated_to_its_line() {
        let mut text = csv_header().join(",") + "\n";
        let blanks = ",".repeat(18);
        text += &format!("1,40.1,-75.2,2023-02-01T10:00:00Z,10,2,3,C1{blanks}\n");
        text += &format!("2,40.1,-75.2,2023-02-01T10:00:00Z,10,2,9,C1{blanks}\n");
        text += &format!("3,40.1,-75.2,2023-02-01T10:00:00Z,10,2,,C1{blanks}\n");
        let res = read_csv(text.as_bytes()).unwrap();
        assert_eq!(res.records.len(), 2);
        assert_eq!(res.errors.len(), 1);
        assert_eq!(res.errors[0].line, 3);
        assert_eq!(res.records[1].severity, None);
    }

    #[test]
    fn missing_required_column() {
        let err = read_csv("ID,DEC_LAT\n1,40\n".as_bytes()).unwrap_err();
        assert!(matches!(err, PipelineError::MissingHeader(cols) if cols.contains(&"SEVERITY".to_string())));
        assert!(matches!(read_csv("".as_bytes()), Err(PipelineError::MissingHeader(_))));
    }

    #[test]
    fn unreadable_file() {
        assert!(matches!(ingest_csv("/nonexistent/crashes.csv"), Err(PipelineError::UnreadableFile { .. })));
    }
}
