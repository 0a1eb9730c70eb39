//! Joint longitudinal/survival datasets and their CSV representation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that observation times do not exceed the
/// follow-up time.
const TIME_TOL: f64 = 1e-12;

/// Survival information and baseline covariates of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    /// Follow-up (event or censoring) time.
    pub time: f64,
    /// Whether the follow-up time is an observed event.
    pub event: bool,
    pub covariates: BTreeMap<String, f64>,
}

/// One longitudinal measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub value: f64,
}

/// Survival triples plus per-marker irregular longitudinal observations.
///
/// `longitudinal[i][k]` holds the observations of marker `k` for subject `i`
/// sorted by time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongSurvDataset {
    pub subjects: Vec<Subject>,
    pub longitudinal: Vec<Vec<Vec<Observation>>>,
    pub num_markers: usize,
}

impl LongSurvDataset {
    /// Builds and validates a dataset.
    pub fn new(
        subjects: Vec<Subject>,
        mut longitudinal: Vec<Vec<Vec<Observation>>>,
        num_markers: usize,
    ) -> Result<Self> {
        if longitudinal.len() != subjects.len() {
            return Err(Error::Schema(format!(
                "{} subjects but {} longitudinal records",
                subjects.len(),
                longitudinal.len()
            )));
        }
        for obs in longitudinal.iter_mut() {
            for series in obs.iter_mut() {
                series.sort_by(|a, b| a.time.total_cmp(&b.time));
            }
        }
        let data = Self { subjects, longitudinal, num_markers };
        data.validate()?;
        Ok(data)
    }

    /// Checks the dataset invariants.
    pub fn validate(&self) -> Result<()> {
        if self.num_markers == 0 {
            return Err(Error::Schema("dataset needs at least one marker".into()));
        }
        let mut names: Option<Vec<&String>> = None;
        for (s, obs) in self.subjects.iter().zip(&self.longitudinal) {
            if !(s.time.is_finite() && s.time > 0.0) {
                return Err(Error::Domain(format!(
                    "subject {}: follow-up time {} must be positive and finite",
                    s.id, s.time
                )));
            }
            if obs.len() != self.num_markers {
                return Err(Error::Schema(format!(
                    "subject {}: {} marker series, expected {}",
                    s.id,
                    obs.len(),
                    self.num_markers
                )));
            }
            let these: Vec<&String> = s.covariates.keys().collect();
            match &names {
                None => names = Some(these),
                Some(n) if *n != these => {
                    return Err(Error::Schema(format!(
                        "subject {}: covariate set differs from the first subject",
                        s.id
                    )))
                }
                _ => {}
            }
            for (k, series) in obs.iter().enumerate() {
                for o in series {
                    if !(o.time.is_finite() && o.value.is_finite()) {
                        return Err(Error::Domain(format!(
                            "subject {}, marker {}: non-finite observation",
                            s.id,
                            k + 1
                        )));
                    }
                    if o.time < 0.0 || o.time > s.time + TIME_TOL {
                        return Err(Error::Domain(format!(
                            "subject {}, marker {}: observation time {} outside [0, {}]",
                            s.id,
                            k + 1,
                            o.time,
                            s.time
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// Total number of observations of marker `k`.
    pub fn num_observations(&self, k: usize) -> usize {
        self.longitudinal.iter().map(|o| o[k].len()).sum()
    }

    /// Names of the baseline covariates.
    pub fn covariate_names(&self) -> Vec<String> {
        self.subjects.first().map(|s| s.covariates.keys().cloned().collect()).unwrap_or_default()
    }

    /// Value of a baseline covariate for subject `i`.
    pub fn covariate(&self, i: usize, name: &str) -> Result<f64> {
        self.subjects[i]
            .covariates
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("covariate '{name}' not present in the data")))
    }

    /// Largest follow-up time.
    pub fn max_time(&self) -> f64 {
        self.subjects.iter().map(|s| s.time).fold(0.0, f64::max)
    }

    /// Restriction to the given subject indices.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            subjects: idx.iter().map(|&i| self.subjects[i].clone()).collect(),
            longitudinal: idx.iter().map(|&i| self.longitudinal[i].clone()).collect(),
            num_markers: self.num_markers,
        }
    }

    /// Writes `survival.csv` and `longitudinal.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let covs = self.covariate_names();
        let mut w = csv::Writer::from_path(dir.join("survival.csv"))?;
        let mut header = vec!["id".to_string(), "time".into(), "event".into()];
        header.extend(covs.iter().cloned());
        w.write_record(&header)?;
        for s in &self.subjects {
            let mut row = vec![s.id.clone(), s.time.to_string(), u8::from(s.event).to_string()];
            row.extend(covs.iter().map(|c| s.covariates[c].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("longitudinal.csv"))?;
        w.write_record(["id", "marker", "time", "value"])?;
        for (s, obs) in self.subjects.iter().zip(&self.longitudinal) {
            for (k, series) in obs.iter().enumerate() {
                for o in series {
                    w.write_record([s.id.clone(), (k + 1).to_string(), o.time.to_string(), o.value.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `survival.csv` and `longitudinal.csv` from `dir`.
    ///
    /// The number of markers is the largest marker index found unless given
    /// explicitly.
    pub fn read_csv(dir: &Path, num_markers: Option<usize>) -> Result<Self> {
        let surv = std::fs::read_to_string(dir.join("survival.csv"))?;
        let long = std::fs::read_to_string(dir.join("longitudinal.csv"))?;
        Self::from_csv_str(&surv, &long, num_markers)
    }

    /// Parses the two CSV documents.
    pub fn from_csv_str(survival: &str, longitudinal: &str, num_markers: Option<usize>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(survival.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        for (pos, name) in ["id", "time", "event"].iter().enumerate() {
            if header.get(pos).map(String::as_str) != Some(*name) {
                return Err(Error::Schema(format!("survival.csv: column {} must be '{}'", pos + 1, name)));
            }
        }
        let mut subjects = Vec::new();
        let mut index = BTreeMap::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = r + 2;
            if rec.len() != header.len() {
                return Err(Error::Schema(format!(
                    "survival.csv row {row}: expected {} fields, found {}",
                    header.len(),
                    rec.len()
                )));
            }
            let id = rec[0].trim().to_string();
            let time = parse_field(&rec[1], "survival.csv", row, "time")?;
            let event = match rec[2].trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Schema(format!(
                        "survival.csv row {row}, column 'event': expected 0 or 1, found '{other}'"
                    )))
                }
            };
            let mut covariates = BTreeMap::new();
            for (c, name) in header.iter().enumerate().skip(3) {
                covariates.insert(name.clone(), parse_field(&rec[c], "survival.csv", row, name)?);
            }
            if index.insert(id.clone(), subjects.len()).is_some() {
                return Err(Error::Schema(format!("survival.csv row {row}: duplicate id '{id}'")));
            }
            subjects.push(Subject { id, time, event, covariates });
        }

        let mut rdr = csv::Reader::from_reader(longitudinal.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header != ["id", "marker", "time", "value"] {
            return Err(Error::Schema("longitudinal.csv: header must be 'id,marker,time,value'".into()));
        }
        let mut rows = Vec::new();
        let mut max_marker = 0;
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = r + 2;
            if rec.len() != 4 {
                return Err(Error::Schema(format!(
                    "longitudinal.csv row {row}: expected 4 fields, found {}",
                    rec.len()
                )));
            }
            let id = rec[0].trim();
            let i = *index.get(id).ok_or_else(|| {
                Error::Schema(format!("longitudinal.csv row {row}, column 'id': unknown subject '{id}'"))
            })?;
            let marker: usize = rec[1].trim().parse().ok().filter(|&m| m >= 1).ok_or_else(|| {
                Error::Schema(format!(
                    "longitudinal.csv row {row}, column 'marker': expected a positive integer, found '{}'",
                    &rec[1]
                ))
            })?;
            let time = parse_field(&rec[2], "longitudinal.csv", row, "time")?;
            let value = parse_field(&rec[3], "longitudinal.csv", row, "value")?;
            max_marker = max_marker.max(marker);
            rows.push((i, marker - 1, Observation { time, value }));
        }
        let k = num_markers.unwrap_or(max_marker).max(1);
        if max_marker > k {
            return Err(Error::Schema(format!(
                "longitudinal.csv: marker {max_marker} exceeds the declared {k} markers"
            )));
        }
        let mut longitudinal = vec![vec![Vec::new(); k]; subjects.len()];
        for (i, m, o) in rows {
            longitudinal[i][m].push(o);
        }
        Self::new(subjects, longitudinal, k)
    }
}

fn parse_field(raw: &str, file: &str, row: usize, column: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| {
        Error::Schema(format!("{file} row {row}, column '{column}': cannot parse '{}' as a number", raw.trim()))
    })
}
