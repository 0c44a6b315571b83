//! Canonical crash record schema and geographic primitives.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used by every distance computation in the crate.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("severity code {0} is outside 0..=3")]
    OutOfRangeSeverity(i64),
    #[error("coordinate ({lat}, {lon}) is invalid")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("weather category {0:?} is not one of '1'..'6'")]
    InvalidWeatherCategory(String),
    #[error("{field} must be nonnegative, got {value}")]
    NegativeMeasurement { field: &'static str, value: f64 },
    #[error("unknown field {0}")]
    UnknownField(String),
}

/// A WGS84 latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeoPoint", into = "RawGeoPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGeoPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawGeoPoint> for GeoPoint {
    type Error = ModelError;
    fn try_from(raw: RawGeoPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawGeoPoint {
    fn from(p: GeoPoint) -> Self {
        RawGeoPoint { lat: p.lat, lon: p.lon }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, ModelError> {
        if lat.is_nan() || lon.is_nan() || !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(ModelError::InvalidCoordinate { lat, lon });
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Axis-aligned latitude/longitude box, inclusive on every edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    /// Default service region.
    pub const PENNSYLVANIA: BoundingBox = BoundingBox { min_lat: 39.5, min_lon: -80.6, max_lat: 42.5, max_lon: -74.6 };

    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self, ModelError> {
        GeoPoint::new(min_lat, min_lon)?;
        GeoPoint::new(max_lat, max_lon)?;
        if min_lat > max_lat || min_lon > max_lon {
            return Err(ModelError::InvalidCoordinate { lat: min_lat, lon: min_lon });
        }
        Ok(BoundingBox { min_lat, min_lon, max_lat, max_lon })
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lat >= self.min_lat && p.lat <= self.max_lat && p.lon >= self.min_lon && p.lon <= self.max_lon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "i64")]
pub enum SeverityLevel {
    Minor = 0,
    Moderate = 1,
    Serious = 2,
    Fatal = 3,
}

impl SeverityLevel {
    pub const ALL: [SeverityLevel; 4] =
        [SeverityLevel::Minor, SeverityLevel::Moderate, SeverityLevel::Serious, SeverityLevel::Fatal];
    pub const COUNT: usize = 4;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SeverityLevel::Minor => "Minor",
            SeverityLevel::Moderate => "Moderate",
            SeverityLevel::Serious => "Serious",
            SeverityLevel::Fatal => "Fatal",
        }
    }
}

impl From<SeverityLevel> for u8 {
    fn from(s: SeverityLevel) -> u8 {
        s.code()
    }
}

impl TryFrom<i64> for SeverityLevel {
    type Error = ModelError;
    fn try_from(code: i64) -> Result<Self, Self::Error> {
        parse_severity(code)
    }
}

pub fn parse_severity(code: i64) -> Result<SeverityLevel, ModelError> {
    match code {
        0 => Ok(SeverityLevel::Minor),
        1 => Ok(SeverityLevel::Moderate),
        2 => Ok(SeverityLevel::Serious),
        3 => Ok(SeverityLevel::Fatal),
        other => Err(ModelError::OutOfRangeSeverity(other)),
    }
}

macro_rules! canonical_flags {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// Canonical binary risk flags.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum Flag {
            $(#[serde(rename = $name)] $variant),+
        }

        impl Flag {
            pub const ALL: [Flag; 15] = [$(Flag::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(Flag::$variant => $name),+
                }
            }
        }
    };
}

canonical_flags! {
    AlcoholRelated => "ALCOHOL_RELATED",
    DruggedDriver => "DRUGGED_DRIVER",
    MarijuanaRelated => "MARIJUANA_RELATED",
    CellPhone => "CELL_PHONE",
    Distracted => "DISTRACTED",
    FatigueAsleep => "FATIGUE_ASLEEP",
    IcyRoad => "ICY_ROAD",
    WetRoad => "WET_ROAD",
    SnowSlushRoad => "SNOW_SLUSH_ROAD",
    AggressiveDriving => "AGGRESSIVE_DRIVING",
    LocalRoad => "LOCAL_ROAD",
    Unbelted => "UNBELTED",
    CurveDvrError => "CURVE_DVR_ERROR",
    Interstate => "INTERSTATE",
    IntersectionRelated => "INTERSECTION_RELATED",
}

impl Flag {
    pub fn index(self) -> usize {
        Flag::ALL.iter().position(|f| *f == self).expect("flag listed in ALL")
    }

    /// The flags making up the behavioral weight sets, in weight order.
    pub const IMPAIRMENT: [Flag; 3] = [Flag::AlcoholRelated, Flag::DruggedDriver, Flag::MarijuanaRelated];
    pub const DISTRACTION: [Flag; 3] = [Flag::CellPhone, Flag::Distracted, Flag::FatigueAsleep];
    pub const ROAD_SURFACE: [Flag; 3] = [Flag::IcyRoad, Flag::WetRoad, Flag::SnowSlushRoad];
}

impl FromStr for Flag {
    type Err = ModelError;
    /// Case-insensitive lookup of the canonical name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        Flag::ALL.iter().copied().find(|f| f.name() == upper).ok_or_else(|| ModelError::UnknownField(s.to_string()))
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// WEATHER1 category code, `'1'` (clear) through `'6'` (fog).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct WeatherCategory(u8);

impl WeatherCategory {
    pub const CLEAR: WeatherCategory = WeatherCategory(1);
    pub const CLOUDY: WeatherCategory = WeatherCategory(2);
    pub const RAIN: WeatherCategory = WeatherCategory(3);
    pub const SNOW: WeatherCategory = WeatherCategory(4);
    pub const SLEET: WeatherCategory = WeatherCategory(5);
    pub const FOG: WeatherCategory = WeatherCategory(6);
    pub const ALL: [WeatherCategory; 6] = [
        WeatherCategory::CLEAR,
        WeatherCategory::CLOUDY,
        WeatherCategory::RAIN,
        WeatherCategory::SNOW,
        WeatherCategory::SLEET,
        WeatherCategory::FOG,
    ];

    pub fn new(code: u8) -> Result<Self, ModelError> {
        if (1..=6).contains(&code) {
            Ok(WeatherCategory(code))
        } else {
            Err(ModelError::InvalidWeatherCategory(code.to_string()))
        }
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            1 => "Clear",
            2 => "Cloudy",
            3 => "Rain",
            4 => "Snow",
            5 => "Sleet/Hail",
            _ => "Fog",
        }
    }
}

impl FromStr for WeatherCategory {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        // integer-typed inputs such as "4.0" are accepted and stringified
        let code = trimmed
            .parse::<u8>()
            .ok()
            .or_else(|| trimmed.parse::<f64>().ok().filter(|v| v.fract() == 0.0 && *v >= 0.0 && *v < 256.0).map(|v| v as u8))
            .ok_or_else(|| ModelError::InvalidWeatherCategory(s.to_string()))?;
        WeatherCategory::new(code).map_err(|_| ModelError::InvalidWeatherCategory(s.to_string()))
    }
}

impl TryFrom<String> for WeatherCategory {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<WeatherCategory> for String {
    fn from(c: WeatherCategory) -> String {
        c.0.to_string()
    }
}

impl fmt::Display for WeatherCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Categorical code columns carried on each record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CodeField {
    #[serde(rename = "WEATHER1")]
    Weather1,
    #[serde(rename = "ILLUMINATION")]
    Illumination,
    #[serde(rename = "ROAD_CONDITION")]
    RoadCondition,
}

impl CodeField {
    pub const ALL: [CodeField; 3] = [CodeField::Weather1, CodeField::Illumination, CodeField::RoadCondition];

    pub fn name(self) -> &'static str {
        match self {
            CodeField::Weather1 => "WEATHER1",
            CodeField::Illumination => "ILLUMINATION",
            CodeField::RoadCondition => "ROAD_CONDITION",
        }
    }
}

impl FromStr for CodeField {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        CodeField::ALL.iter().copied().find(|c| c.name() == upper).ok_or_else(|| ModelError::UnknownField(s.to_string()))
    }
}

/// Tri-state flag storage: `None` means the value was not reported.
pub type FlagValue = Option<bool>;

/// One crash event. Critical fields are optional so unvalidated input can be
/// represented faithfully; [`crate::pipeline::validate_batch`] rejects records
/// missing any of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashRecord {
    pub id: String,
    pub location: Option<GeoPoint>,
    pub occurred_at: Option<DateTime<Utc>>,
    pub hour_of_day: u8,
    pub crash_month: u8,
    pub severity: Option<SeverityLevel>,
    pub county: String,
    pub flags: [FlagValue; 15],
    pub weather: Option<WeatherCategory>,
    pub illumination: Option<u8>,
    pub road_condition: Option<u8>,
}

impl CrashRecord {
    /// A record with every optional field missing and the time fields derived from `at`.
    pub fn blank(id: impl Into<String>, at: DateTime<Utc>) -> Self {
        CrashRecord {
            id: id.into(),
            location: None,
            occurred_at: Some(at),
            hour_of_day: at.hour() as u8,
            crash_month: at.month() as u8,
            severity: None,
            county: String::new(),
            flags: [None; 15],
            weather: None,
            illumination: None,
            road_condition: None,
        }
    }

    pub fn flag(&self, flag: Flag) -> FlagValue {
        self.flags[flag.index()]
    }

    pub fn set_flag(&mut self, flag: Flag, value: FlagValue) {
        self.flags[flag.index()] = value;
    }

    /// Flag as a number with missing treated as 0.
    pub fn flag_or_zero(&self, flag: Flag) -> f64 {
        if self.flag(flag) == Some(true) {
            1.0
        } else {
            0.0
        }
    }

    pub fn code(&self, field: CodeField) -> Option<u8> {
        match field {
            CodeField::Weather1 => self.weather.map(|w| w.code()),
            CodeField::Illumination => self.illumination,
            CodeField::RoadCondition => self.road_condition,
        }
    }

    pub fn set_code(&mut self, field: CodeField, value: Option<u8>) -> Result<(), ModelError> {
        match field {
            CodeField::Weather1 => self.weather = value.map(WeatherCategory::new).transpose()?,
            CodeField::Illumination => self.illumination = value,
            CodeField::RoadCondition => self.road_condition = value,
        }
        Ok(())
    }

    pub fn has_hour_and_month_in_range(&self) -> bool {
        self.hour_of_day <= 23 && (1..=12).contains(&self.crash_month)
    }

    /// Saturday or Sunday, from `occurred_at` when present.
    pub fn is_weekend(&self) -> bool {
        self.occurred_at.map(|t| t.weekday().number_from_monday() >= 6).unwrap_or(false)
    }
}

/// Point-in-time weather observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherSnapshot {
    pub category: WeatherCategory,
    pub temperature_c: f64,
    pub precipitation_mm_hr: f64,
    pub visibility_km: f64,
    pub wind_kmh: f64,
    pub observed_at: DateTime<Utc>,
}

impl WeatherSnapshot {
    pub fn new(
        category: WeatherCategory,
        temperature_c: f64,
        precipitation_mm_hr: f64,
        visibility_km: f64,
        wind_kmh: f64,
        observed_at: DateTime<Utc>,
    ) -> Result<Self, ModelError> {
        for (field, value) in
            [("precipitation_mm_hr", precipitation_mm_hr), ("visibility_km", visibility_km), ("wind_kmh", wind_kmh)]
        {
            if !(value >= 0.0) {
                return Err(ModelError::NegativeMeasurement { field, value });
            }
        }
        Ok(WeatherSnapshot { category, temperature_c, precipitation_mm_hr, visibility_km, wind_kmh, observed_at })
    }

    /// Representative conditions for a category when no observation exists.
    pub fn typical(category: WeatherCategory, observed_at: DateTime<Utc>) -> Self {
        let (t, p, v, w) = match category.code() {
            1 => (15.0, 0.0, 16.0, 10.0),
            2 => (12.0, 0.0, 12.0, 15.0),
            3 => (10.0, 4.0, 6.0, 20.0),
            4 => (-3.0, 2.5, 2.0, 18.0),
            5 => (-1.0, 3.0, 3.0, 25.0),
            _ => (8.0, 0.1, 0.5, 5.0),
        };
        WeatherSnapshot {
            category,
            temperature_c: t,
            precipitation_mm_hr: p,
            visibility_km: v,
            wind_kmh: w,
            observed_at,
        }
    }

    /// The four continuous measurements used for similarity search.
    pub fn measurements(&self) -> [f64; 4] {
        [self.temperature_c, self.precipitation_mm_hr, self.visibility_km, self.wind_kmh]
    }
}

/// Count records per severity level, indexed by level code.
pub fn severity_counts<'a>(levels: impl IntoIterator<Item = &'a SeverityLevel>) -> [usize; 4] {
    let mut counts = [0usize; 4];
    for s in levels {
        counts[s.index()] += 1;
    }
    counts
}

/// Ordered map keyed by severity, used in reports.
pub type SeverityMap<T> = BTreeMap<SeverityLevel, T>;
