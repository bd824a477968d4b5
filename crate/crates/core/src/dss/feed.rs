use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{render_table, IngestSummary, Service};
use crate::io::IoError;
use crate::sim::ReplicationLog;
use crate::time::{format_clock, parse_clock, Seconds};

/// One arrival prediction for a trip at a stop.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// Feed time the prediction was issued.
    pub timestamp: Seconds,
    /// External trip id; empty when the feed carries none.
    pub trip_id: String,
    pub stop: usize,
    pub predicted_arrival: Seconds,
}

pub const FEED_COLUMNS: [&str; 4] = ["timestamp", "trip_id", "stop", "predicted_arrival"];

/// Records parsed from a feed file plus the number of lines skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeedFile {
    pub records: Vec<PredictionRecord>,
    pub malformed: usize,
}

pub fn write_feed(path: &Path, records: &[PredictionRecord]) -> Result<(), IoError> {
    let io = |source| IoError::Io { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(FEED_COLUMNS).map_err(|e| io(e.into()))?;
    for r in records {
        let row = [format_clock(r.timestamp), r.trip_id.clone(), r.stop.to_string(), format_clock(r.predicted_arrival)];
        w.write_record(&row).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

/// Parses a feed; a wrong header is an error, a bad data line is skipped and counted.
pub fn read_feed(path: &Path) -> Result<FeedFile, IoError> {
    let file = std::fs::File::open(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(file);
    let headers = rdr.headers().map_err(|e| IoError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    if headers.is_empty() {
        return Ok(FeedFile::default());
    }
    for (k, col) in FEED_COLUMNS.iter().enumerate() {
        if headers.get(k) != Some(*col) {
            return Err(IoError::MissingColumn { path: path.to_path_buf(), column: col.to_string() });
        }
    }
    if let Some(extra) = headers.get(FEED_COLUMNS.len()) {
        return Err(IoError::UnknownColumn { path: path.to_path_buf(), column: extra.to_string() });
    }
    let mut out = FeedFile::default();
    for row in rdr.records() {
        match row.ok().as_ref().and_then(parse_record) {
            Some(r) => out.records.push(r),
            None => out.malformed += 1,
        }
    }
    Ok(out)
}

fn parse_record(row: &csv::StringRecord) -> Option<PredictionRecord> {
    if row.len() != FEED_COLUMNS.len() {
        return None;
    }
    Some(PredictionRecord {
        timestamp: parse_clock(&row[0]).ok()?,
        trip_id: row[1].to_string(),
        stop: row[2].parse().ok()?,
        predicted_arrival: parse_clock(&row[3]).ok()?,
    })
}

/// Turns a simulated replication into the feed a perfect predictor would have
/// published: every `interval` seconds, each trip due at a control stop within
/// `lookahead` seconds gets its realised arrival as the prediction.
pub fn export_prediction_feed(
    log: &ReplicationLog,
    control_stops: &[usize],
    interval: Seconds,
    lookahead: Seconds,
) -> Vec<PredictionRecord> {
    let interval = interval.max(1);
    let mut out = Vec::new();
    for trip in &log.trips {
        for &j in control_stops {
            let Some(arrival) = trip.arrivals.get(j).copied().flatten() else { continue };
            let first = (arrival - lookahead).div_euclid(interval) * interval;
            let mut t = if first < arrival - lookahead { first + interval } else { first };
            while t <= arrival {
                out.push(PredictionRecord { timestamp: t, trip_id: trip.trip_id.clone(), stop: j, predicted_arrival: arrival });
                t += interval;
            }
        }
    }
    out.sort_by(|a, b| (a.timestamp, a.stop, a.predicted_arrival, &a.trip_id).cmp(&(b.timestamp, b.stop, b.predicted_arrival, &b.trip_id)));
    out
}

/// Waits between replay batches.
pub trait Pacer {
    fn wait(&mut self, d: Duration);
}

/// Replays as fast as possible.
pub struct NoPacer;

impl Pacer for NoPacer {
    fn wait(&mut self, _: Duration) {}
}

/// Sleeps the scaled feed gap on the current thread.
pub struct SleepPacer;

impl Pacer for SleepPacer {
    fn wait(&mut self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Records requested waits instead of sleeping.
#[derive(Debug, Default)]
pub struct RecordingPacer(pub Vec<Duration>);

impl Pacer for RecordingPacer {
    fn wait(&mut self, d: Duration) {
        self.0.push(d);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplaySummary {
    pub batches: usize,
    pub ingest: IngestSummary,
    pub malformed: usize,
}

/// Feeds records to `service` in timestamp batches, waiting the feed gap
/// divided by `speed` before each one. `observe` runs after every batch.
pub fn replay_records(
    service: &mut Service,
    records: &[PredictionRecord],
    speed: f64,
    pacer: &mut dyn Pacer,
    mut observe: impl FnMut(&Service, Seconds),
) -> ReplaySummary {
    let speed = if speed.is_finite() && speed > 0.0 { speed } else { 1.0 };
    let mut summary = ReplaySummary::default();
    let mut last: Option<Seconds> = None;
    for batch in records.chunk_by(|a, b| a.timestamp == b.timestamp) {
        let t = batch[0].timestamp;
        if let Some(prev) = last {
            let gap = (t - prev).max(0) as f64 / speed;
            pacer.wait(Duration::from_secs_f64(gap));
        }
        last = Some(t);
        summary.ingest += service.ingest(batch);
        summary.batches += 1;
        observe(service, t);
    }
    summary
}

pub fn replay_feed(
    service: &mut Service,
    path: &Path,
    speed: f64,
    pacer: &mut dyn Pacer,
    observe: impl FnMut(&Service, Seconds),
) -> Result<ReplaySummary, IoError> {
    let feed = read_feed(path)?;
    let mut summary = replay_records(service, &feed.records, speed, pacer, observe);
    summary.malformed = feed.malformed;
    Ok(summary)
}

/// Replays `records` and renders the table of each stop in `stops` after every batch.
pub fn replay_transcript(
    service: &mut Service,
    records: &[PredictionRecord],
    speed: f64,
    pacer: &mut dyn Pacer,
    stops: &[usize],
) -> (String, ReplaySummary) {
    let mut out = String::new();
    let summary = replay_records(service, records, speed, pacer, |s, t| {
        for &j in stops {
            if let Ok(rows) = s.upcoming_trips(j) {
                out.push_str(&render_table(t, j, &rows));
            }
        }
    });
    (out, summary)
}
