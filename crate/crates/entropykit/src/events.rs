//! Location event streams: alphabet, parsing, validation, and slicing into
//! per-day, per-period trajectories.
//!
//! Input records are `(household_id, timestamp, location)` rows, CSV or
//! JSONL. Timestamps may carry an explicit UTC offset or be naive, in which
//! case they are read as civil time in the configured zone. All windowing
//! runs on civil time; the absolute instant is kept for ordering.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::{
    DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, TimeZone, Timelike, Utc,
};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::Trajectory;

/// Ordered set of distinct location names. Index positions are stable and
/// used as the state space everywhere downstream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocationAlphabet {
    symbols: Vec<String>,
}

impl LocationAlphabet {
    /// At least two unique, non-empty symbols.
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.len() < 2 {
            return Err(Error::InvalidAlphabet(format!(
                "need at least 2 locations, got {}",
                symbols.len()
            )));
        }
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::InvalidAlphabet(format!("empty symbol at index {i}")));
            }
            if symbols[..i].contains(s) {
                return Err(Error::InvalidAlphabet(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(Self { symbols })
    }

    /// The five default in-home locations.
    pub fn default_rooms() -> Self {
        Self::new(["bathroom", "bedroom", "lounge", "kitchen", "hallway"])
            .expect("default alphabet is valid")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, index: usize) -> &str {
        &self.symbols[index]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }
}

/// Half-open day partition: Daytime = [06:00, 18:00), Night = the rest of
/// the civil date. Every instant belongs to exactly one period.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayPeriod {
    Daytime,
    Night,
}

impl DayPeriod {
    pub fn of(time: NaiveTime) -> Self {
        if (6..18).contains(&time.hour()) {
            DayPeriod::Daytime
        } else {
            DayPeriod::Night
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DayPeriod::Daytime => "daytime",
            DayPeriod::Night => "night",
        }
    }

    pub const ALL: [DayPeriod; 2] = [DayPeriod::Daytime, DayPeriod::Night];
}

/// One sensor firing, validated against the alphabet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivityEvent {
    pub household_id: String,
    /// Absolute instant, second precision; used for ordering.
    pub instant: DateTime<Utc>,
    /// Civil-time projection in the configured zone; used for windowing.
    pub civil: NaiveDateTime,
    /// Index into the alphabet.
    pub location: usize,
}

/// Key of one per-day, per-period window.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WindowKey {
    pub household_id: String,
    /// Monday of the ISO week containing `day`.
    pub week_start: NaiveDate,
    pub day: NaiveDate,
    pub period: DayPeriod,
}

/// One window's location sequence, broken into contiguous runs. Daytime
/// windows have a single run. A night window covers [00:00, 06:00) and
/// [18:00, 24:00) of its civil date, so it can have two: the last pre-dawn
/// event and the first evening event are twelve civil hours apart and do
/// not form a transition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DayWindow {
    segments: Vec<Trajectory>,
}

impl DayWindow {
    /// Build from the window's chunks in time order; empty chunks vanish.
    fn from_chunks(chunks: [Vec<usize>; 2]) -> Self {
        let segments = chunks
            .into_iter()
            .filter(|c| !c.is_empty())
            .map(|c| Trajectory::new(c).expect("chunk is non-empty"))
            .collect();
        Self { segments }
    }

    /// The contiguous runs in time order (one or two, each non-empty).
    pub fn segments(&self) -> &[Trajectory] {
        &self.segments
    }

    /// Total number of events in the window.
    pub fn len(&self) -> usize {
        self.segments.iter().map(Trajectory::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Transitions within runs; never bridges the night window's gap.
    pub fn n_transitions(&self) -> usize {
        self.segments.iter().map(Trajectory::n_transitions).sum()
    }

    /// Collapse consecutive repeats within each run.
    pub fn collapse_repeats(&self) -> Self {
        Self {
            segments: self.segments.iter().map(collapse_repeats).collect(),
        }
    }
}

/// A single contiguous run, as every daytime window is.
impl From<Trajectory> for DayWindow {
    fn from(trajectory: Trajectory) -> Self {
        Self { segments: vec![trajectory] }
    }
}

/// Monday of the ISO week containing `day`.
pub fn week_monday(day: NaiveDate) -> NaiveDate {
    day - Duration::days(i64::from(day.weekday().num_days_from_monday()))
}

/// Week origin convention for windowing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WeekOrigin {
    /// Weeks start on the ISO Monday.
    #[default]
    IsoMonday,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    Csv,
    Jsonl,
}

/// One rejected record or skipped entity, reported on stderr as JSONL.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Diagnostic {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub household_id: Option<String>,
    pub reason: String,
}

impl Diagnostic {
    pub fn record(line: u64, reason: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            household_id: None,
            reason: reason.into(),
        }
    }

    pub fn household(id: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            line: None,
            household_id: Some(id.into()),
            reason: reason.into(),
        }
    }
}

/// Parsing options; `tz` is the zone naive timestamps are interpreted in.
#[derive(Clone, Debug)]
pub struct ParseOptions {
    pub format: InputFormat,
    pub tz: Tz,
    /// Fatal "corrupt input" error when more than this fraction of records
    /// is rejected.
    pub reject_threshold: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            format: InputFormat::Csv,
            tz: chrono_tz::UTC,
            reject_threshold: 0.5,
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    household_id: String,
    timestamp: String,
    location: String,
}

/// Resolve a timestamp string to (absolute instant, civil time in `tz`).
///
/// Accepted forms: RFC 3339 with offset (`2021-03-01T07:15:02+01:00`,
/// trailing `Z`), or a naive `YYYY-MM-DDTHH:MM:SS` / `YYYY-MM-DD HH:MM:SS`
/// read as civil time in `tz`. Fractional seconds are accepted and
/// truncated to whole seconds. An ambiguous civil time (DST fold) resolves
/// to the earlier instant; a nonexistent one (DST gap) keeps its civil
/// value and takes the first representable instant at or after it.
fn parse_timestamp(s: &str, tz: Tz) -> std::result::Result<(DateTime<Utc>, NaiveDateTime), String> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        let utc = dt.with_timezone(&Utc).with_nanosecond(0).unwrap();
        return Ok((utc, utc.with_timezone(&tz).naive_local()));
    }
    let naive = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f"))
        .map_err(|e| format!("bad timestamp {s:?}: {e}"))?
        .with_nanosecond(0)
        .unwrap();
    match tz.from_local_datetime(&naive) {
        chrono::LocalResult::Single(dt) => Ok((dt.with_timezone(&Utc), naive)),
        chrono::LocalResult::Ambiguous(a, b) => {
            let earliest = a.min(b);
            Ok((earliest.with_timezone(&Utc), naive))
        }
        chrono::LocalResult::None => {
            // DST gap: probe forward in 15-minute steps for the first
            // representable civil time; the window assignment keeps the
            // original civil value.
            let mut probe = naive;
            for _ in 0..12 {
                probe += Duration::minutes(15);
                if let chrono::LocalResult::Single(dt) = tz.from_local_datetime(&probe) {
                    return Ok((dt.with_timezone(&Utc), naive));
                }
            }
            Err(format!("timestamp {s:?} falls in an unresolvable DST gap"))
        }
    }
}

fn validate_record(
    raw: RawRecord,
    line: u64,
    opts: &ParseOptions,
    alphabet: &LocationAlphabet,
) -> std::result::Result<ActivityEvent, Diagnostic> {
    let household_id = raw.household_id.trim().to_string();
    if household_id.is_empty() {
        return Err(Diagnostic::record(line, "empty household_id"));
    }
    let (instant, civil) = parse_timestamp(raw.timestamp.trim(), opts.tz)
        .map_err(|reason| Diagnostic::record(line, reason))?;
    let location_name = raw.location.trim();
    let location = alphabet.index_of(location_name).ok_or_else(|| {
        Diagnostic::record(line, format!("unknown location {location_name:?}"))
    })?;
    Ok(ActivityEvent {
        household_id,
        instant,
        civil,
        location,
    })
}

/// Parse an event stream. Returns schema-valid events sorted by
/// `(household_id, instant, input order)` plus one diagnostic per rejected
/// record. Lines starting with `#` are metadata comments and are skipped.
pub fn parse_events<R: Read>(
    source: R,
    opts: &ParseOptions,
    alphabet: &LocationAlphabet,
) -> Result<(Vec<ActivityEvent>, Vec<Diagnostic>)> {
    let mut events: Vec<ActivityEvent> = Vec::new();
    let mut diagnostics: Vec<Diagnostic> = Vec::new();
    let mut total = 0usize;

    match opts.format {
        InputFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .comment(Some(b'#'))
                .trim(csv::Trim::All)
                .from_reader(source);
            let headers = reader
                .headers()
                .map_err(|e| Error::Schema(e.to_string()))?
                .clone();
            for required in ["household_id", "timestamp", "location"] {
                if !headers.iter().any(|h| h == required) {
                    return Err(Error::Schema(format!(
                        "missing required CSV column {required:?}"
                    )));
                }
            }
            for result in reader.records() {
                total += 1;
                match result {
                    Ok(record) => {
                        let line = record.position().map_or(0, csv::Position::line);
                        match record.deserialize::<RawRecord>(Some(&headers)) {
                            Ok(raw) => match validate_record(raw, line, opts, alphabet) {
                                Ok(ev) => events.push(ev),
                                Err(d) => diagnostics.push(d),
                            },
                            Err(e) => diagnostics.push(Diagnostic::record(line, e.to_string())),
                        }
                    }
                    Err(e) => {
                        let line = e.position().map_or(0, csv::Position::line);
                        diagnostics.push(Diagnostic::record(line, e.to_string()));
                    }
                }
            }
        }
        InputFormat::Jsonl => {
            let mut text = String::new();
            let mut source = source;
            source.read_to_string(&mut text)?;
            for (i, raw_line) in text.lines().enumerate() {
                let line = i as u64 + 1;
                let trimmed = raw_line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                total += 1;
                match serde_json::from_str::<RawRecord>(trimmed) {
                    Ok(raw) => match validate_record(raw, line, opts, alphabet) {
                        Ok(ev) => events.push(ev),
                        Err(d) => diagnostics.push(d),
                    },
                    Err(e) => diagnostics.push(Diagnostic::record(line, e.to_string())),
                }
            }
        }
    }

    if total > 0 {
        let rejected = diagnostics.len();
        if rejected as f64 > opts.reject_threshold * total as f64 {
            return Err(Error::CorruptInput {
                rejected,
                total,
                threshold: opts.reject_threshold,
            });
        }
    }

    // Stable sort keeps input order for equal (household, instant) keys.
    events.sort_by(|a, b| {
        (a.household_id.as_str(), a.instant).cmp(&(b.household_id.as_str(), b.instant))
    });
    Ok((events, diagnostics))
}

/// Assign every event to exactly one `(household, week, day, period)`
/// window and collect the per-window location sequences in event order.
/// Windows with no events are absent from the map. Night events split into
/// the pre-dawn and evening chunks of their civil date so that no
/// transition bridges the daytime gap between them.
pub fn slice_windows(
    events: &[ActivityEvent],
    origin: WeekOrigin,
) -> BTreeMap<WindowKey, DayWindow> {
    let WeekOrigin::IsoMonday = origin;
    let mut windows: BTreeMap<WindowKey, [Vec<usize>; 2]> = BTreeMap::new();
    for ev in events {
        let day = ev.civil.date();
        let time = ev.civil.time();
        let key = WindowKey {
            household_id: ev.household_id.clone(),
            week_start: week_monday(day),
            day,
            period: DayPeriod::of(time),
        };
        let chunk = usize::from(key.period == DayPeriod::Night && time.hour() >= 18);
        windows.entry(key).or_default()[chunk].push(ev.location);
    }
    windows
        .into_iter()
        .map(|(k, chunks)| (k, DayWindow::from_chunks(chunks)))
        .collect()
}

/// Drop consecutive repeats of the same location (optional CLI behavior;
/// self-transitions are kept by default).
pub fn collapse_repeats(trajectory: &Trajectory) -> Trajectory {
    let mut states: Vec<usize> = Vec::with_capacity(trajectory.len());
    for &s in trajectory.states() {
        if states.last() != Some(&s) {
            states.push(s);
        }
    }
    Trajectory::new(states).expect("collapse keeps at least one state")
}
