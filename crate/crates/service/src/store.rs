use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use crashcast_core::cell::{cell_of, cells_covering, CellId};
use crashcast_core::model::{BoundingBox, CrashRecord};
use thiserror::Error;

pub const STORE_RESOLUTION: u8 = 8;
pub const LOG_FILE: &str = "crashes.log";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("store holds {capacity} records and cannot take {incoming} more")]
    StorageFull { capacity: usize, incoming: usize },
    #[error("record log line {line} is corrupt: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
}

/// Append-only record log, one `crc32-hex<TAB>json` line per record, with an
/// in-memory grid index rebuilt on open.
pub struct RecordStore {
    path: Option<PathBuf>,
    file: Option<File>,
    records: Vec<CrashRecord>,
    index: HashMap<CellId, Vec<u32>>,
    resolution: u8,
    max_records: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

pub fn encode_line(record: &CrashRecord) -> String {
    let json = serde_json::to_string(record).expect("records serialise");
    format!("{:08x}\t{json}\n", crc32fast::hash(json.as_bytes()))
}

fn decode_line(line: &str, number: usize) -> Result<CrashRecord, StoreError> {
    let corrupt = |reason: &str| StoreError::CorruptLog { line: number, reason: reason.to_string() };
    let (crc, json) = line.split_once('\t').ok_or_else(|| corrupt("missing checksum"))?;
    let want = u32::from_str_radix(crc, 16).map_err(|_| corrupt("unreadable checksum"))?;
    if crc32fast::hash(json.as_bytes()) != want {
        return Err(corrupt("checksum mismatch"));
    }
    serde_json::from_str(json).map_err(|e| corrupt(&e.to_string()))
}

/// Checks what the store and its index rely on.
pub fn check_record(r: &CrashRecord) -> Result<(), StoreError> {
    let invalid = |reason: &str| StoreError::InvalidRecord { id: r.id.clone(), reason: reason.to_string() };
    if r.location.is_none() {
        return Err(invalid("missing location"));
    }
    if r.occurred_at.is_none() {
        return Err(invalid("missing timestamp"));
    }
    if !r.has_hour_and_month_in_range() {
        return Err(invalid("hour or month out of range"));
    }
    Ok(())
}

impl RecordStore {
    pub fn in_memory(max_records: usize) -> Self {
        RecordStore {
            path: None,
            file: None,
            records: Vec::new(),
            index: HashMap::new(),
            resolution: STORE_RESOLUTION,
            max_records,
        }
    }

    /// Re-indexes at grid resolution `r`.
    pub fn with_resolution(mut self, r: u8) -> Self {
        self.resolution = r;
        self.index.clear();
        for (i, rec) in self.records.iter().enumerate() {
            if let Some(p) = rec.location {
                self.index.entry(cell_of(p, r)).or_default().push(i as u32);
            }
        }
        self
    }

    pub fn resolution(&self) -> u8 {
        self.resolution
    }

    /// Opens or creates the log in `dir`, verifying every line.
    pub fn open(dir: impl AsRef<Path>, max_records: usize) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(LOG_FILE);
        let mut store = RecordStore::in_memory(max_records);
        if path.exists() {
            let f = File::open(&path).map_err(io_err(&path))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(io_err(&path))?;
                if line.is_empty() {
                    continue;
                }
                let r = decode_line(&line, i + 1)?;
                store.index_record(r);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        store.path = Some(path);
        store.file = Some(file);
        Ok(store)
    }

    fn index_record(&mut self, r: CrashRecord) {
        if let Some(p) = r.location {
            self.index.entry(cell_of(p, self.resolution)).or_default().push(self.records.len() as u32);
        }
        self.records.push(r);
    }

    /// Appends all records or none.
    pub fn insert(&mut self, records: Vec<CrashRecord>) -> Result<usize, StoreError> {
        records.iter().try_for_each(check_record)?;
        if self.records.len() + records.len() > self.max_records {
            return Err(StoreError::StorageFull { capacity: self.max_records, incoming: records.len() });
        }
        if let (Some(f), Some(path)) = (self.file.as_mut(), self.path.as_ref()) {
            let text: String = records.iter().map(encode_line).collect();
            f.write_all(text.as_bytes()).and_then(|_| f.flush()).map_err(io_err(path))?;
        }
        let n = records.len();
        records.into_iter().for_each(|r| self.index_record(r));
        Ok(n)
    }

    /// Records inside `bbox` whose timestamp lies in `[from, to]`.
    pub fn query(&self, bbox: &BoundingBox, from: Option<DateTime<Utc>>, to: Option<DateTime<Utc>>) -> Vec<&CrashRecord> {
        let mut hits: Vec<u32> = cells_covering(bbox, self.resolution)
            .iter()
            .filter_map(|c| self.index.get(c))
            .flatten()
            .copied()
            .filter(|&i| matches(&self.records[i as usize], bbox, from, to))
            .collect();
        hits.sort_unstable();
        hits.into_iter().map(|i| &self.records[i as usize]).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[CrashRecord] {
        &self.records
    }
}

pub fn matches(r: &CrashRecord, bbox: &BoundingBox, from: Option<DateTime<Utc>>, to: Option<DateTime<Utc>>) -> bool {
    let Some(p) = r.location else { return false };
    let Some(t) = r.occurred_at else { return false };
    bbox.contains(p) && from.is_none_or(|f| t >= f) && to.is_none_or(|e| t <= e)
}

fn sql_text(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

/// The records as PostgreSQL/PostGIS DDL plus inserts. The timestamp column
/// is plain `TIMESTAMPTZ`.
pub fn export_sql(records: &[CrashRecord]) -> String {
    let mut out = String::from(
        "CREATE TABLE crashes (\n  id SERIAL PRIMARY KEY,\n  location GEOMETRY(Point, 4326),\n  crash_datetime TIMESTAMPTZ,\n  severity INTEGER,\n  weather_condition VARCHAR(50),\n  road_condition VARCHAR(50)\n);\nCREATE INDEX idx_crashes_location ON crashes USING GIST (location);\nCREATE INDEX idx_crashes_datetime ON crashes (crash_datetime);\n",
    );
    for r in records {
        let loc = r.location.map_or("NULL".to_string(), |p| format!("ST_SetSRID(ST_MakePoint({}, {}), 4326)", p.lon(), p.lat()));
        let at = r.occurred_at.map_or("NULL".to_string(), |t| sql_text(&t.to_rfc3339_opts(SecondsFormat::Secs, true)));
        let sev = r.severity.map_or("NULL".to_string(), |s| s.code().to_string());
        let weather = r.weather.map_or("NULL".to_string(), |w| sql_text(w.name()));
        let road = r.road_condition.map_or("NULL".to_string(), |c| sql_text(&c.to_string()));
        out.push_str(&format!(
            "INSERT INTO crashes (location, crash_datetime, severity, weather_condition, road_condition) VALUES ({loc}, {at}, {sev}, {weather}, {road});\n"
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use crashcast_core::model::{GeoPoint, SeverityLevel};
    use crashcast_core::rng::seeded;
    use rand::Rng;

    fn record(i: usize, lat: f64, lon: f64, t: DateTime<Utc>) -> CrashRecord {
        let mut r = CrashRecord::blank(format!("r{i}"), t);
        r.location = Some(GeoPoint::new(lat, lon).unwrap());
        r.severity = Some(SeverityLevel::Minor);
        r
    }

    #[test]
    fn query_equals_linear_scan() {
        let mut rng = seeded(11);
        let t0 = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
        let recs: Vec<CrashRecord> = (0..10_000)
            .map(|i| record(i, rng.random_range(39.5..42.5), rng.random_range(-80.6..-74.6), t0 + Duration::minutes(rng.random_range(0..525_600))))
            .collect();
        let mut store = RecordStore::in_memory(20_000);
        store.insert(recs.clone()).unwrap();
        for trial in 0..60 {
            if trial % 20 == 0 {
                store = store.with_resolution([8, 5, 10][trial / 20]);
            }
            let (a, b) = (rng.random_range(39.0..43.0), rng.random_range(39.0..43.0));
            let (c, d) = (rng.random_range(-81.0..-74.0), rng.random_range(-81.0..-74.0));
            let bbox = BoundingBox::new(f64::min(a, b), f64::min(c, d), f64::max(a, b), f64::max(c, d)).unwrap();
            let from = rng.random_bool(0.5).then(|| t0 + Duration::days(rng.random_range(0..365)));
            let to = rng.random_bool(0.5).then(|| t0 + Duration::days(rng.random_range(0..365)));
            let got: Vec<&str> = store.query(&bbox, from, to).iter().map(|r| r.id.as_str()).collect();
            let want: Vec<&str> = recs.iter().filter(|r| matches(r, &bbox, from, to)).map(|r| r.id.as_str()).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn persists_detects_corruption_and_fills() {
        let dir = tempfile::tempdir().unwrap();
        let t = Utc.with_ymd_and_hms(2023, 3, 1, 8, 0, 0).unwrap();
        {
            let mut s = RecordStore::open(dir.path(), 3).unwrap();
            s.insert(vec![record(0, 40.0, -77.0, t), record(1, 41.0, -76.0, t)]).unwrap();
            assert!(matches!(s.insert(vec![record(2, 40.0, -77.0, t), record(3, 40.0, -77.0, t)]), Err(StoreError::StorageFull { .. })));
            let bad = CrashRecord::blank("x", t);
            assert!(matches!(s.insert(vec![bad]), Err(StoreError::InvalidRecord { .. })));
        }
        let s = RecordStore::open(dir.path(), 3).unwrap();
        assert_eq!(s.len(), 2);
        let bbox = BoundingBox::new(39.9, -77.1, 40.1, -76.9).unwrap();
        assert_eq!(s.query(&bbox, None, None).len(), 1);
        assert!(s.query(&BoundingBox::new(10.0, 10.0, 11.0, 11.0).unwrap(), None, None).is_empty());
        drop(s);
        let path = dir.path().join(LOG_FILE);
        let text = std::fs::read_to_string(&path).unwrap().replacen("r1", "r9", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(RecordStore::open(dir.path(), 3), Err(StoreError::CorruptLog { line: 2, .. })));
    }

    #[test]
    fn sql_uses_single_timestamptz() {
        let t = Utc.with_ymd_and_hms(2023, 3, 1, 8, 0, 0).unwrap();
        let sql = export_sql(&[record(0, 40.0, -77.0, t)]);
        assert!(sql.contains("crash_datetime TIMESTAMPTZ,"));
        assert!(!sql.contains("WITH TIME ZONE"));
        assert!(sql.contains("ST_MakePoint(-77, 40)"));
        assert!(sql.contains("'2023-03-01T08:00:00Z'"));
    }
}
