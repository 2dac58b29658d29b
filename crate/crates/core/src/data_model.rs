//! Longitudinal trial data: participants observed at time points `0..K`,
//! with the outcome `y`, time-varying confounders `z`, a biomarker `b` and
//! self-reported compliance `d` (post-baseline only), and in simulated data
//! the true compliance `c`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("non-numeric value `{value}` in column `{column}` (line {line})")]
    NonNumeric { column: String, line: usize, value: String },
    #[error("duplicate observation for participant `{id}` at time {time}")]
    DuplicateKey { id: String, time: usize },
    #[error("participant `{id}`: {reason}")]
    Invalid { id: String, reason: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub time: usize,
    pub y: Option<f64>,
    pub z: Vec<Option<f64>>,
    pub b: Option<f64>,
    pub d: Option<bool>,
    pub c: Option<bool>,
}

impl Observation {
    /// An observation is missing when the outcome or any confounder is absent.
    pub fn is_missing(&self) -> bool {
        self.y.is_none() || self.z.iter().any(Option::is_none)
    }

    /// Confounder values; `None` when the observation is missing.
    pub fn z_values(&self) -> Option<Vec<f64>> {
        self.z.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Participant {
    pub id: String,
    pub arm: String,
    pub x: Vec<f64>,
    /// Ordered by strictly increasing time.
    pub observations: Vec<Observation>,
}

impl Participant {
    pub fn at(&self, time: usize) -> Option<&Observation> {
        self.observations.binary_search_by_key(&time, |o| o.time).ok().map(|i| &self.observations[i])
    }

    pub fn baseline(&self) -> Option<&Observation> {
        self.at(0).filter(|o| !o.is_missing())
    }
}

/// Column support bounds for a confounder.
pub type Bounds = (f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    pub participants: Vec<Participant>,
    /// Number of time points including baseline.
    pub k: usize,
    pub z_names: Vec<String>,
    pub x_names: Vec<String>,
    pub z_bounds: Vec<Option<Bounds>>,
}

/// Orders identifiers numerically when both parse as integers, lexically otherwise.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

impl LongitudinalDataset {
    pub fn n_participants(&self) -> usize {
        self.participants.len()
    }

    pub fn n_observations(&self) -> usize {
        self.participants.iter().map(|p| p.observations.len()).sum()
    }

    pub fn arms(&self) -> BTreeSet<&str> {
        self.participants.iter().map(|p| p.arm.as_str()).collect()
    }

    pub fn has_true_compliance(&self) -> bool {
        self.participants.iter().flat_map(|p| &p.observations).any(|o| o.c.is_some())
    }

    /// Participants of one arm, same layout otherwise.
    pub fn restrict_to_arm(&self, arm: &str) -> LongitudinalDataset {
        LongitudinalDataset {
            participants: self.participants.iter().filter(|p| p.arm == arm).cloned().collect(),
            ..self.clone_layout()
        }
    }

    pub(crate) fn clone_layout(&self) -> LongitudinalDataset {
        LongitudinalDataset {
            participants: Vec::new(),
            k: self.k,
            z_names: self.z_names.clone(),
            x_names: self.x_names.clone(),
            z_bounds: self.z_bounds.clone(),
        }
    }

    pub fn sort_participants(&mut self) {
        self.participants.sort_by(|a, b| compare_ids(&a.id, &b.id));
    }

    /// Treats missed post-baseline visits as self-reported noncompliance.
    pub fn mark_missing_noncompliant(&mut self) {
        for obs in self.participants.iter_mut().flat_map(|p| p.observations.iter_mut()) {
            if obs.time >= 1 && obs.is_missing() {
                obs.d = Some(false);
            }
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let nz = self.z_names.len();
        let nx = self.x_names.len();
        if self.z_bounds.len() != nz {
            return Err(DataError::Invalid {
                id: String::new(),
                reason: format!("{} bounds for {} confounders", self.z_bounds.len(), nz),
            });
        }
        let mut seen = BTreeSet::new();
        for p in &self.participants {
            let invalid = |reason: String| DataError::Invalid { id: p.id.clone(), reason };
            if !seen.insert(p.id.as_str()) {
                return Err(invalid("participant listed twice".into()));
            }
            if p.x.len() != nx {
                return Err(invalid(format!("{} baseline covariates, expected {nx}", p.x.len())));
            }
            for pair in p.observations.windows(2) {
                if pair[0].time >= pair[1].time {
                    return Err(invalid("time indices not strictly increasing".into()));
                }
            }
            for o in &p.observations {
                if o.time >= self.k {
                    return Err(invalid(format!("time {} outside 0..{}", o.time, self.k)));
                }
                if o.z.len() != nz {
                    return Err(invalid(format!("{} confounders at time {}", o.z.len(), o.time)));
                }
                if o.time == 0 && (o.b.is_some() || o.d.is_some()) {
                    return Err(invalid("biomarker/self-report present at baseline".into()));
                }
                if o.time >= 1 && !o.is_missing() {
                    match o.d {
                        None => return Err(invalid(format!("self-report absent at time {}", o.time))),
                        Some(true) if o.b.is_none() => {
                            return Err(invalid(format!("biomarker absent at time {}", o.time)))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub id: String,
    pub time: String,
    pub arm: String,
    pub y: String,
    pub z: Vec<String>,
    pub x: Vec<String>,
    /// Subset of `x` holding category labels, one-hot encoded on load.
    pub x_categorical: Vec<String>,
    pub b: String,
    pub d: String,
    pub c: Option<String>,
    /// Parallel to `z`.
    pub z_bounds: Vec<Option<Bounds>>,
}

impl Schema {
    /// Default layout `id,time,arm,y,<z*>,<x*>,b,d[,c]`: confounder columns
    /// are recognised by a leading `z`, baseline covariates by a leading `x`.
    pub fn infer(header: &[String]) -> Schema {
        let fixed = ["id", "time", "arm", "y", "b", "d", "c"];
        let free: Vec<&String> = header.iter().filter(|h| !fixed.contains(&h.as_str())).collect();
        let z: Vec<String> = free.iter().filter(|h| h.starts_with('z')).map(|h| h.to_string()).collect();
        let x = free.iter().filter(|h| h.starts_with('x')).map(|h| h.to_string()).collect();
        Schema {
            id: "id".into(),
            time: "time".into(),
            arm: "arm".into(),
            y: "y".into(),
            z_bounds: vec![None; z.len()],
            z,
            x,
            x_categorical: Vec::new(),
            b: "b".into(),
            d: "d".into(),
            c: header.iter().any(|h| h == "c").then(|| "c".to_string()),
        }
    }
}

struct RawRow {
    line: usize,
    id: String,
    time: usize,
    arm: String,
    y: Option<f64>,
    z: Vec<Option<f64>>,
    x_raw: Vec<String>,
    b: Option<f64>,
    d: Option<bool>,
    c: Option<bool>,
}

fn parse_opt_f64(s: &str, column: &str, line: usize) -> Result<Option<f64>, DataError> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| DataError::NonNumeric { column: column.into(), line, value: s.into() })
}

fn parse_opt_bool(s: &str, column: &str, line: usize) -> Result<Option<bool>, DataError> {
    match parse_opt_f64(s, column, line)? {
        None => Ok(None),
        Some(0.0) => Ok(Some(false)),
        Some(1.0) => Ok(Some(true)),
        Some(_) => Err(DataError::NonNumeric { column: column.into(), line, value: s.trim().into() }),
    }
}

/// Reads a long-format CSV.
pub fn load_dataset(path: impl AsRef<Path>, schema: Option<&Schema>) -> Result<LongitudinalDataset, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let inferred;
    let schema = match schema {
        Some(s) => s,
        None => {
            inferred = Schema::infer(&header);
            &inferred
        }
    };
    let col = |name: &str| -> Result<usize, DataError> {
        header.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let id_i = col(&schema.id)?;
    let time_i = col(&schema.time)?;
    let arm_i = col(&schema.arm)?;
    let y_i = col(&schema.y)?;
    let z_i: Vec<usize> = schema.z.iter().map(|n| col(n)).collect::<Result<_, _>>()?;
    let x_i: Vec<usize> = schema.x.iter().map(|n| col(n)).collect::<Result<_, _>>()?;
    let b_i = col(&schema.b)?;
    let d_i = col(&schema.d)?;
    let c_i = schema.c.as_deref().map(col).transpose()?;

    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let line = r + 2;
        let field = |i: usize| record.get(i).unwrap_or("");
        let time_s = field(time_i).trim();
        let time = time_s.parse::<usize>().map_err(|_| DataError::NonNumeric {
            column: schema.time.clone(),
            line,
            value: time_s.into(),
        })?;
        let z = z_i.iter().zip(&schema.z).map(|(&i, n)| parse_opt_f64(field(i), n, line)).collect::<Result<_, _>>()?;
        rows.push(RawRow {
            line,
            id: field(id_i).trim().to_string(),
            time,
            arm: field(arm_i).trim().to_string(),
            y: parse_opt_f64(field(y_i), &schema.y, line)?,
            z,
            x_raw: x_i.iter().map(|&i| field(i).trim().to_string()).collect(),
            b: parse_opt_f64(field(b_i), &schema.b, line)?,
            d: parse_opt_bool(field(d_i), &schema.d, line)?,
            c: match c_i {
                Some(i) => parse_opt_bool(field(i), schema.c.as_deref().unwrap_or("c"), line)?,
                None => None,
            },
        });
    }

    // Categorical levels, lexicographic; the first level is the reference.
    let mut levels: Vec<Option<Vec<String>>> = vec![None; schema.x.len()];
    for (j, name) in schema.x.iter().enumerate() {
        if schema.x_categorical.contains(name) {
            let set: BTreeSet<&str> = rows.iter().map(|r| r.x_raw[j].as_str()).filter(|s| !s.is_empty()).collect();
            levels[j] = Some(set.into_iter().map(String::from).collect());
        }
    }
    let mut x_names = Vec::new();
    for (j, name) in schema.x.iter().enumerate() {
        match &levels[j] {
            Some(lv) => x_names.extend(lv.iter().skip(1).map(|l| format!("{name}_{l}"))),
            None => x_names.push(name.clone()),
        }
    }
    let encode_x = |row: &RawRow| -> Result<Vec<f64>, DataError> {
        let mut out = Vec::with_capacity(x_names.len());
        for (j, raw) in row.x_raw.iter().enumerate() {
            match &levels[j] {
                Some(lv) => {
                    if raw.is_empty() {
                        return Err(DataError::Invalid {
                            id: row.id.clone(),
                            reason: format!("empty categorical covariate `{}`", schema.x[j]),
                        });
                    }
                    out.extend(lv.iter().skip(1).map(|l| if l == raw { 1.0 } else { 0.0 }));
                }
                None => match parse_opt_f64(raw, &schema.x[j], row.line)? {
                    Some(v) => out.push(v),
                    None => {
                        return Err(DataError::Invalid {
                            id: row.id.clone(),
                            reason: format!("empty baseline covariate `{}`", schema.x[j]),
                        })
                    }
                },
            }
        }
        Ok(out)
    };

    let mut grouped: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for row in rows {
        grouped.entry(row.id.clone()).or_default().push(row);
    }
    let mut participants = Vec::with_capacity(grouped.len());
    let mut k = 0;
    for (id, mut rows) in grouped {
        rows.sort_by_key(|r| r.time);
        for pair in rows.windows(2) {
            if pair[0].time == pair[1].time {
                return Err(DataError::DuplicateKey { id, time: pair[0].time });
            }
        }
        let arm = rows[0].arm.clone();
        let x = encode_x(&rows[0])?;
        for r in &rows[1..] {
            if r.arm != arm || encode_x(r)? != x {
                return Err(DataError::Invalid { id, reason: "arm or baseline covariates differ across rows".into() });
            }
        }
        k = k.max(rows.last().map(|r| r.time + 1).unwrap_or(0));
        let observations =
            rows.into_iter().map(|r| Observation { time: r.time, y: r.y, z: r.z, b: r.b, d: r.d, c: r.c }).collect();
        participants.push(Participant { id, arm, x, observations });
    }

    let mut ds = LongitudinalDataset {
        participants,
        k,
        z_names: schema.z.clone(),
        x_names,
        z_bounds: if schema.z_bounds.is_empty() { vec![None; schema.z.len()] } else { schema.z_bounds.clone() },
    };
    ds.sort_participants();
    ds.validate()?;
    Ok(ds)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn fmt_bool(v: Option<bool>) -> String {
    v.map(|v| if v { "1".to_string() } else { "0".to_string() }).unwrap_or_default()
}

/// Writes the long-format CSV read by [`load_dataset`]. Floats use the
/// shortest representation that parses back exactly.
pub fn write_csv(ds: &LongitudinalDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let with_c = ds.has_true_compliance();
    let mut header: Vec<String> = vec!["id".into(), "time".into(), "arm".into(), "y".into()];
    header.extend(ds.z_names.iter().cloned());
    header.extend(ds.x_names.iter().cloned());
    header.push("b".into());
    header.push("d".into());
    if with_c {
        header.push("c".into());
    }
    w.write_record(&header)?;
    for p in &ds.participants {
        for o in &p.observations {
            let mut rec = vec![p.id.clone(), o.time.to_string(), p.arm.clone(), fmt_opt(o.y)];
            rec.extend(o.z.iter().map(|&v| fmt_opt(v)));
            rec.extend(p.x.iter().map(|v| v.to_string()));
            rec.push(fmt_opt(o.b));
            rec.push(fmt_bool(o.d));
            if with_c {
                rec.push(fmt_bool(o.c));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One element of the estimation set: a post-baseline observation with
/// self-reported compliance together with its (non-missing) predecessor.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub current: &'a Observation,
    pub lagged: &'a Observation,
    pub participant: &'a Participant,
    pub participant_index: usize,
}

/// Transitions `(j-1 -> j)` whose current observation is non-missing with
/// `d = 1` and whose lagged observation is non-missing. Self-reported
/// noncompliance is taken as truthful, so those rows never enter.
pub fn estimation_view(ds: &LongitudinalDataset) -> Vec<Transition<'_>> {
    let mut out = Vec::new();
    for (pi, p) in ds.participants.iter().enumerate() {
        let by_time: HashMap<usize, &Observation> = p.observations.iter().map(|o| (o.time, o)).collect();
        for o in &p.observations {
            if o.time == 0 || o.is_missing() || o.d != Some(true) {
                continue;
            }
            if let Some(lag) = by_time.get(&(o.time - 1)) {
                if !lag.is_missing() {
                    out.push(Transition { current: o, lagged: lag, participant: p, participant_index: pi });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(time: usize, y: f64, d: Option<bool>) -> Observation {
        Observation { time, y: Some(y), z: vec![Some(1.0)], b: d.map(|_| 2.0), d, c: None }
    }

    fn one_participant(ds_d: &[bool]) -> LongitudinalDataset {
        let mut observations = vec![obs(0, 0.0, None)];
        for (j, &d) in ds_d.iter().enumerate() {
            observations.push(obs(j + 1, 1.0, Some(d)));
        }
        LongitudinalDataset {
            participants: vec![Participant { id: "1".into(), arm: "a".into(), x: vec![0.0], observations }],
            k: ds_d.len() + 1,
            z_names: vec!["z1".into()],
            x_names: vec!["x1".into()],
            z_bounds: vec![None],
        }
    }

    #[test]
    fn view_drops_self_reported_noncompliance() {
        let ds = one_participant(&[true, true, false, true, true]);
        let times: Vec<usize> = estimation_view(&ds).iter().map(|t| t.current.time).collect();
        assert_eq!(times, vec![1, 2, 4, 5]);
    }

    #[test]
    fn view_empty_when_nobody_reports_compliance() {
        let ds = one_participant(&[false; 5]);
        assert!(estimation_view(&ds).is_empty());
    }

    #[test]
    fn view_requires_nonmissing_lag() {
        let mut ds = one_participant(&[true, true, true]);
        ds.participants[0].observations[1].y = None;
        let times: Vec<usize> = estimation_view(&ds).iter().map(|t| t.current.time).collect();
        assert_eq!(times, vec![3]);
    }

    #[test]
    fn missing_visits_become_noncompliant() {
        let mut ds = one_participant(&[true, true]);
        ds.participants[0].observations[2].y = None;
        ds.mark_missing_noncompliant();
        assert_eq!(ds.participants[0].observations[2].d, Some(false));
        assert_eq!(ds.participants[0].observations[1].d, Some(true));
    }

    #[test]
    fn ids_sort_numerically() {
        let mut ids = vec!["10", "2", "b", "1"];
        ids.sort_by(|a, b| compare_ids(a, b));
        assert_eq!(ids, vec!["1", "2", "10", "b"]);
    }
}
