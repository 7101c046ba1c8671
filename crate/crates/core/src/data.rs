//! Household power dataset ingestion, regular load series, hourly
//! resampling, calendar split and normalisation statistics.
//!
//! Raw input is the semicolon-separated benchmark file:
//!
//! ```text
//! Date;Time;Global_active_power;Global_reactive_power;Voltage;Global_intensity;Sub_metering_1;Sub_metering_2;Sub_metering_3
//! 16/12/2006;17:24:00;4.216;0.418;234.840;18.400;0.000;1.000;17.000
//! ```
//!
//! `?` marks a missing value. Series are written in a canonical CSV with the
//! header `timestamp,active_power_kw,valid`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, Months, NaiveDate, NaiveDateTime, NaiveTime, Timelike};

use crate::error::{Error, Result};

pub const DATASET_HEADER: &str = "Date;Time;Global_active_power;Global_reactive_power;Voltage;Global_intensity;Sub_metering_1;Sub_metering_2;Sub_metering_3";
pub const CANONICAL_HEADER: &str = "timestamp,active_power_kw,valid";
const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
const MAX_REPORTED_LINES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Resolution {
    Minute,
    Hour,
}

impl Resolution {
    pub fn step(self) -> Duration {
        match self {
            Resolution::Minute => Duration::minutes(1),
            Resolution::Hour => Duration::hours(1),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Resolution::Minute => "minute",
            Resolution::Hour => "hour",
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minute" => Ok(Resolution::Minute),
            "hour" => Ok(Resolution::Hour),
            other => Err(Error::invalid(format!("unknown resolution '{other}' (expected minute|hour)"))),
        }
    }
}

/// One line of the benchmark file. Only `global_active_power` feeds the
/// models; the other columns are kept for validation.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub timestamp: NaiveDateTime,
    pub global_active_power: Option<f64>,
    pub global_reactive_power: Option<f64>,
    pub voltage: Option<f64>,
    pub global_intensity: Option<f64>,
    pub sub_metering: [Option<f64>; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParseReport {
    /// Data lines seen (header excluded, blank lines ignored).
    pub total: usize,
    pub records: usize,
    /// Records whose active power is missing.
    pub missing: usize,
    pub malformed: usize,
    /// First few malformed lines as `(line number, reason)`.
    pub malformed_lines: Vec<(usize, String)>,
}

fn parse_field(s: &str) -> std::result::Result<Option<f64>, String> {
    let s = s.trim();
    if s == "?" || s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(format!("not a number: '{s}'")),
    }
}

fn parse_date_dmy(s: &str) -> std::result::Result<NaiveDate, String> {
    let mut it = s.trim().split('/');
    let mut next = |what: &str| -> std::result::Result<u32, String> {
        it.next().and_then(|p| p.parse::<u32>().ok()).ok_or_else(|| format!("bad {what} in date '{s}'"))
    };
    let d = next("day")?;
    let m = next("month")?;
    let y = next("year")?;
    NaiveDate::from_ymd_opt(y as i32, m, d).ok_or_else(|| format!("invalid date '{s}'"))
}

fn parse_line(line: &str) -> std::result::Result<RawRecord, String> {
    let fields: Vec<&str> = line.split(';').collect();
    if fields.len() != 9 {
        return Err(format!("expected 9 fields, found {}", fields.len()));
    }
    let date = parse_date_dmy(fields[0])?;
    let time = NaiveTime::parse_from_str(fields[1].trim(), "%H:%M:%S").map_err(|_| format!("bad time '{}'", fields[1]))?;
    if time.second() != 0 {
        return Err(format!("timestamp not on a minute boundary: '{}'", fields[1]));
    }
    let power = parse_field(fields[2])?;
    if matches!(power, Some(p) if p < 0.0) {
        return Err(format!("negative active power '{}'", fields[2]));
    }
    Ok(RawRecord {
        timestamp: date.and_time(time),
        global_active_power: power,
        global_reactive_power: parse_field(fields[3])?,
        voltage: parse_field(fields[4])?,
        global_intensity: parse_field(fields[5])?,
        sub_metering: [parse_field(fields[6])?, parse_field(fields[7])?, parse_field(fields[8])?],
    })
}

/// Parses the benchmark file. A bad header is an error; bad data lines are
/// counted in the report and skipped.
pub fn parse_dataset<R: BufRead>(reader: R, source: &str) -> Result<(Vec<RawRecord>, ParseReport)> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(source, e))?,
        None => return Err(Error::Parse { path: source.into(), line: 1, msg: "empty file".into() }),
    };
    if header.trim_start_matches('\u{feff}').trim() != DATASET_HEADER {
        return Err(Error::Parse {
            path: source.into(),
            line: 1,
            msg: format!("unexpected header '{}'", header.trim()),
        });
    }
    let mut report = ParseReport::default();
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.total += 1;
        match parse_line(&line) {
            Ok(rec) => {
                if rec.global_active_power.is_none() {
                    report.missing += 1;
                }
                records.push(rec);
            }
            Err(msg) => {
                report.malformed += 1;
                if report.malformed_lines.len() < MAX_REPORTED_LINES {
                    report.malformed_lines.push((idx + 2, msg));
                }
            }
        }
    }
    report.records = records.len();
    Ok((records, report))
}

pub fn parse_dataset_file(path: impl AsRef<Path>) -> Result<(Vec<RawRecord>, ParseReport)> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(BufReader::with_capacity(1 << 20, f), &path.display().to_string())
}

/// A load series on a strictly regular time grid; index `i` is
/// `start + i * resolution`. Missing samples are `None`, never dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadSeries {
    resolution: Resolution,
    start: NaiveDateTime,
    values: Vec<Option<f64>>,
}

impl LoadSeries {
    pub fn new(resolution: Resolution, start: NaiveDateTime, values: Vec<Option<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::data("load series must not be empty"));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::data("load series contains non-finite values"));
        }
        Ok(LoadSeries { resolution, start, values })
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        self.values.get(i).copied().flatten()
    }

    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start + self.resolution.step() * i as i32
    }

    pub fn end(&self) -> NaiveDateTime {
        self.timestamp(self.len() - 1)
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Index of `ts` on this grid, if it lies on the grid within range.
    pub fn index_of(&self, ts: NaiveDateTime) -> Option<usize> {
        let delta = ts.signed_duration_since(self.start);
        let step = self.resolution.step().num_seconds();
        let secs = delta.num_seconds();
        if secs < 0 || secs % step != 0 {
            return None;
        }
        let i = (secs / step) as usize;
        (i < self.len()).then_some(i)
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<LoadSeries> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::data(format!("slice {range:?} outside series of length {}", self.len())));
        }
        Ok(LoadSeries {
            resolution: self.resolution,
            start: self.timestamp(range.start),
            values: self.values[range].to_vec(),
        })
    }

    /// All values, or `None` if any slot is invalid.
    pub fn dense_values(&self) -> Option<Vec<f64>> {
        self.values.iter().copied().collect()
    }

    /// Replaces each invalid slot with the last valid value before it.
    /// Leading invalid slots stay invalid. Off by default in every pipeline.
    pub fn forward_filled(&self) -> LoadSeries {
        let mut last = None;
        let values = self
            .values
            .iter()
            .map(|v| {
                if v.is_some() {
                    last = *v;
                }
                last
            })
            .collect();
        LoadSeries { resolution: self.resolution, start: self.start, values }
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> LoadSeries {
        LoadSeries {
            resolution: self.resolution,
            start: self.start,
            values: self.values.iter().map(|v| v.map(&f)).collect(),
        }
    }

    pub fn write_canonical<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CANONICAL_HEADER}")?;
        for (i, v) in self.values.iter().enumerate() {
            let ts = self.timestamp(i).format(TIMESTAMP_FORMAT);
            match v {
                Some(x) => writeln!(w, "{ts},{x},1")?,
                None => writeln!(w, "{ts},,0")?,
            }
        }
        Ok(())
    }

    pub fn write_canonical_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_canonical(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    /// Reads a canonical CSV. The resolution is inferred from the spacing of
    /// the first two rows and every later row must continue the grid.
    pub fn read_canonical<R: BufRead>(reader: R, source: &str) -> Result<LoadSeries> {
        let perr = |line: usize, msg: String| Error::Parse { path: source.into(), line, msg };
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| perr(1, "empty file".into()))?.map_err(|e| Error::io(source, e))?;
        if header.trim_start_matches('\u{feff}').trim() != CANONICAL_HEADER {
            return Err(perr(1, format!("expected header '{CANONICAL_HEADER}', found '{}'", header.trim())));
        }
        let mut stamps = Vec::new();
        let mut values = Vec::new();
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            let line = line.map_err(|e| Error::io(source, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(perr(lineno, format!("expected 3 fields, found {}", fields.len())));
            }
            let ts = NaiveDateTime::parse_from_str(fields[0].trim(), TIMESTAMP_FORMAT)
                .map_err(|_| perr(lineno, format!("bad timestamp '{}'", fields[0])))?;
            let value = match fields[2].trim() {
                "1" => Some(
                    fields[1]
                        .trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| perr(lineno, format!("bad value '{}'", fields[1])))?,
                ),
                "0" => None,
                other => return Err(perr(lineno, format!("valid flag must be 0 or 1, found '{other}'"))),
            };
            stamps.push((lineno, ts));
            values.push(value);
        }
        if stamps.len() < 2 {
            return Err(perr(2, "a series needs at least two rows to fix its resolution".into()));
        }
        let resolution = match (stamps[1].1 - stamps[0].1).num_seconds() {
            60 => Resolution::Minute,
            3600 => Resolution::Hour,
            s => return Err(perr(stamps[1].0, format!("unsupported spacing of {s} s"))),
        };
        let start = stamps[0].1;
        for (k, (lineno, ts)) in stamps.iter().enumerate() {
            if *ts != start + resolution.step() * k as i32 {
                return Err(perr(*lineno, format!("timestamp {ts} breaks the regular {resolution} grid")));
            }
        }
        LoadSeries::new(resolution, start, values)
    }
}

/// Loads either a raw benchmark file or a canonical CSV, by header.
/// Returns the parse report when the input was the raw file.
pub fn read_series_file(path: impl AsRef<Path>) -> Result<(LoadSeries, Option<ParseReport>)> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::with_capacity(1 << 20, f);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::with_capacity(1 << 20, f);
    let source = path.display().to_string();
    if first.trim_start_matches('\u{feff}').trim() == DATASET_HEADER {
        let (records, report) = parse_dataset(reader, &source)?;
        Ok((to_minute_series(records)?, Some(report)))
    } else {
        Ok((LoadSeries::read_canonical(reader, &source)?, None))
    }
}

/// Lays records onto a full minute grid from the first to the last
/// timestamp. Absent minutes and missing powers become invalid slots.
pub fn to_minute_series(mut records: Vec<RawRecord>) -> Result<LoadSeries> {
    if records.is_empty() {
        return Err(Error::data("no records"));
    }
    if !records.windows(2).all(|w| w[0].timestamp <= w[1].timestamp) {
        records.sort_by_key(|r| r.timestamp);
    }
    let mut conflicts = Vec::new();
    for w in records.windows(2) {
        if w[0].timestamp == w[1].timestamp && w[0].global_active_power != w[1].global_active_power {
            conflicts.push(w[0].timestamp);
        }
    }
    if !conflicts.is_empty() {
        conflicts.dedup();
        let shown: Vec<String> = conflicts.iter().take(20).map(|t| t.to_string()).collect();
        return Err(Error::data(format!(
            "{} duplicate timestamps with conflicting values: {}",
            conflicts.len(),
            shown.join(", ")
        )));
    }
    let start = records[0].timestamp;
    let end = records[records.len() - 1].timestamp;
    let len = (end - start).num_minutes() as usize + 1;
    let mut values = vec![None; len];
    for r in &records {
        let i = (r.timestamp - start).num_minutes() as usize;
        values[i] = r.global_active_power;
    }
    LoadSeries::new(Resolution::Minute, start, values)
}

/// Clock-hour averages of a minute series. An hour is valid when it holds
/// at least `min_valid_minutes` valid minutes.
pub fn resample_hourly(s: &LoadSeries, min_valid_minutes: usize) -> Result<LoadSeries> {
    if s.resolution() != Resolution::Minute {
        return Err(Error::data("resample_hourly expects a minute-resolution series"));
    }
    let min_valid = min_valid_minutes.max(1);
    let start = s.start();
    let hour_start = start.date().and_hms_opt(start.hour(), 0, 0).expect("valid hour");
    let offset = start.minute() as usize;
    let n_hours = (offset + s.len()).div_ceil(60);
    let mut sums = vec![0.0; n_hours];
    let mut counts = vec![0usize; n_hours];
    for (i, v) in s.values().iter().enumerate() {
        if let Some(x) = v {
            let h = (offset + i) / 60;
            sums[h] += x;
            counts[h] += 1;
        }
    }
    let values = sums
        .into_iter()
        .zip(counts)
        .map(|(sum, n)| (n >= min_valid).then(|| sum / n as f64))
        .collect();
    LoadSeries::new(Resolution::Hour, hour_start, values)
}

/// Train/test split: training covers the first `train_months` calendar
/// months after the series start, testing the remainder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_months: u32,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_months: 36 }
    }
}

impl SplitSpec {
    pub fn boundary(&self, s: &LoadSeries) -> Result<NaiveDateTime> {
        s.start()
            .checked_add_months(Months::new(self.train_months))
            .ok_or_else(|| Error::data("split boundary overflows the calendar"))
    }

    /// Index of the first test sample.
    pub fn boundary_index(&self, s: &LoadSeries) -> Result<usize> {
        let b = self.boundary(s)?;
        let step = s.resolution().step().num_seconds();
        let secs = (b - s.start()).num_seconds();
        Ok(((secs + step - 1) / step) as usize)
    }
}

pub fn split(s: &LoadSeries, spec: SplitSpec) -> Result<(LoadSeries, LoadSeries)> {
    let k = spec.boundary_index(s)?;
    if k == 0 || k >= s.len() {
        return Err(Error::data(format!(
            "split at {} leaves an empty partition (series {} .. {})",
            spec.boundary(s)?,
            s.start(),
            s.end()
        )));
    }
    Ok((s.slice(0..k)?, s.slice(k..s.len())?))
}

/// z-score statistics fitted on valid training samples (population std).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats { mean: 0.0, std: 1.0 }
    }

    #[inline]
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    #[inline]
    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

pub fn fit_norm(train: &LoadSeries) -> Result<NormStats> {
    let valid: Vec<f64> = train.values().iter().flatten().copied().collect();
    if valid.len() < 2 {
        return Err(Error::data("normalisation needs at least two valid training samples"));
    }
    let n = valid.len() as f64;
    let mean = valid.iter().sum::<f64>() / n;
    let var = valid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(Error::data("training partition has zero variance"));
    }
    Ok(NormStats { mean, std })
}

/// Calendar fields of a timestamp, unscaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CalendarFeatures {
    /// Day of month, 1..=31.
    pub day: u32,
    /// Day of week, Monday = 0.
    pub day_week: u32,
    /// Hour of day, 0..=23.
    pub hour: u32,
    /// Minute of hour, 0..=59. Only used when the minute feature is enabled.
    pub minute: u32,
}

impl CalendarFeatures {
    pub fn validate(&self) -> Result<()> {
        if !(1..=31).contains(&self.day) || self.day_week > 6 || self.hour > 23 || self.minute > 59 {
            return Err(Error::invalid(format!("calendar fields out of range: {self:?}")));
        }
        Ok(())
    }

    /// `[(day-1)/30, day_week/6, hour/23]`, plus `minute/59` when requested.
    pub fn scaled(&self, with_minute: bool) -> Result<Vec<f64>> {
        self.validate()?;
        let mut v = vec![(self.day - 1) as f64 / 30.0, self.day_week as f64 / 6.0, self.hour as f64 / 23.0];
        if with_minute {
            v.push(self.minute as f64 / 59.0);
        }
        Ok(v)
    }
}

pub fn calendar_features(ts: NaiveDateTime) -> CalendarFeatures {
    CalendarFeatures {
        day: ts.day(),
        day_week: ts.weekday().num_days_from_monday(),
        hour: ts.hour(),
        minute: ts.minute(),
    }
}

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    for fmt in [TIMESTAMP_FORMAT, "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s.trim(), fmt) {
            return Ok(t);
        }
    }
    Err(Error::invalid(format!("cannot parse timestamp '{s}' (use YYYY-MM-DDTHH:MM[:SS])")))
}

pub fn format_timestamp(ts: NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}
