//! Line-delimited runner histories.
//!
//! One JSON object per line:
//! `{"runner_id": "...", "gender": "F", "events": [{...EventRecord...}, ...]}`.
//! Pace is seconds per mile; cadence fields are whole weeks. `weeks_to_target`
//! in the file is measured to the runner's last recorded event; windows
//! recompute it relative to whichever event they target.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METERS_PER_MILE: f64 = 1609.344;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub temperature_c: f64,
    pub feels_like_c: f64,
    pub humidity_pct: f64,
    pub wind_kph: f64,
    pub conditions: String,
    pub distance_m: f64,
    pub age_years: u32,
    /// Filled from the runner line when reading.
    #[serde(skip)]
    pub gender: String,
    pub weeks_since_last: u32,
    pub weeks_to_target: u32,
    /// Seconds per mile.
    pub pace: f64,
}

impl EventRecord {
    pub fn validate(&self) -> Result<()> {
        let numeric = [
            ("temperature_c", self.temperature_c),
            ("feels_like_c", self.feels_like_c),
            ("humidity_pct", self.humidity_pct),
            ("wind_kph", self.wind_kph),
            ("distance_m", self.distance_m),
            ("pace", self.pace),
        ];
        if let Some((name, v)) = numeric.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!("{name} is not finite ({v})")));
        }
        if !(self.distance_m > 0.0) || !(self.pace > 0.0) {
            return Err(Error::Data("distance and pace must be positive".into()));
        }
        Ok(())
    }

    /// Finishing time in seconds.
    pub fn total_time_s(&self) -> f64 {
        self.pace * self.distance_m / METERS_PER_MILE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunnerHistory {
    pub runner_id: String,
    pub gender: String,
    /// Chronological.
    pub events: Vec<EventRecord>,
}

#[derive(Serialize, Deserialize)]
struct RunnerLine {
    runner_id: String,
    gender: String,
    events: Vec<EventRecord>,
}

impl RunnerHistory {
    pub fn new(runner_id: impl Into<String>, gender: impl Into<String>, mut events: Vec<EventRecord>) -> Self {
        let gender = gender.into();
        for e in &mut events {
            e.gender = gender.clone();
        }
        RunnerHistory { runner_id: runner_id.into(), gender, events }
    }

    pub fn validate(&self) -> Result<()> {
        if self.events.is_empty() {
            return Err(Error::Data(format!("runner {} has no events", self.runner_id)));
        }
        for (i, e) in self.events.iter().enumerate() {
            e.validate()
                .map_err(|err| Error::Data(format!("runner {} event {i}: {err}", self.runner_id)))?;
        }
        Ok(())
    }

    /// Weeks from event `from` forward to event `to` (`from <= to`).
    pub fn weeks_between(&self, from: usize, to: usize) -> u32 {
        self.events[from + 1..=to].iter().map(|e| e.weeks_since_last).sum()
    }

    pub fn to_line(&self) -> String {
        let line = RunnerLine {
            runner_id: self.runner_id.clone(),
            gender: self.gender.clone(),
            events: self.events.clone(),
        };
        serde_json::to_string(&line).expect("runner serializes")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let parsed: RunnerLine = serde_json::from_str(line)?;
        let history = RunnerHistory::new(parsed.runner_id, parsed.gender, parsed.events);
        history.validate()?;
        Ok(history)
    }
}

pub fn write_dataset(path: &Path, histories: &[RunnerHistory]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for h in histories {
        writeln!(out, "{}", h.to_line())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<RunnerHistory>> {
    let reader = BufReader::new(File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let h = RunnerHistory::from_line(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(h);
    }
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn line_round_trip_preserves_full_precision() {
        let mut h = history("r1", 3);
        h.events[1].pace = 0.1 + 0.2;
        h.events[2].temperature_c = -1.0 / 3.0;
        let back = RunnerHistory::from_line(&h.to_line()).unwrap();
        assert_eq!(back, h);
        assert_eq!(back.events[0].gender, "F");
    }

    #[test]
    fn rejects_bad_records() {
        assert!(RunnerHistory::from_line(r#"{"runner_id":"a","gender":"F","events":[]}"#).is_err());
        let mut h = history("r1", 2);
        h.events[0].pace = -3.0;
        assert!(RunnerHistory::from_line(&h.to_line()).is_err());
        assert!(RunnerHistory::from_line("not json").is_err());
    }

    #[test]
    fn weeks_between_sums_gaps() {
        let h = history("r", 4);
        assert_eq!(h.weeks_between(0, 3), 9);
        assert_eq!(h.weeks_between(2, 2), 0);
    }
}
