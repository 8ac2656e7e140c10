//! Discrete-visit panels: observation of continuous paths at integer times
//! and a long-format CSV representation.
//!
//! Outcomes and covariates are recorded as left limits at each visit, the
//! treatment as its value at the visit, and cumulative treatment as the
//! exposure integral up to (not including) the visit.

use crate::dgp::ContinuousPath;
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

/// One subject's visits `0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub y: Vec<f64>,
    pub a: Vec<u8>,
    pub cum_a: Vec<f64>,
    /// Time-varying covariates other than the outcome, one vector per visit.
    pub l: Vec<Vec<f64>>,
    /// Baseline covariates.
    pub v: Vec<f64>,
}

impl SubjectRecord {
    pub fn n_visits(&self) -> usize {
        self.y.len()
    }
}

/// Invariant checks applied to a panel. The defaults suit unit-spaced visits
/// with exposure starting at the first visit; real surveys often record
/// exposure in other units or from before the first visit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelRules {
    pub max_cum_increment: Option<f64>,
    pub zero_start: bool,
}

impl Default for PanelRules {
    fn default() -> Self {
        Self {
            max_cum_increment: Some(1.0),
            zero_start: true,
        }
    }
}

impl PanelRules {
    pub fn relaxed() -> Self {
        Self {
            max_cum_increment: None,
            zero_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PanelDataset {
    pub k_max: usize,
    /// Label of visit 0 in the source data.
    pub first_visit: i64,
    pub l_names: Vec<String>,
    pub v_names: Vec<String>,
    pub subjects: Vec<SubjectRecord>,
}

const CUM_TOL: f64 = 1e-9;

impl PanelDataset {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn validate(&self, rules: &PanelRules) -> Result<()> {
        let visits = self.k_max + 1;
        for s in &self.subjects {
            let err = |visit: usize, message: String| Error::Visit {
                subject: s.id.clone(),
                visit: visit as i64,
                message,
            };
            if s.y.len() != visits || s.a.len() != visits || s.cum_a.len() != visits || s.l.len() != visits {
                return Err(Error::Subject {
                    subject: s.id.clone(),
                    message: format!("expected {visits} visits"),
                });
            }
            if s.v.len() != self.v_names.len() {
                return Err(Error::Subject {
                    subject: s.id.clone(),
                    message: format!("expected {} baseline covariates", self.v_names.len()),
                });
            }
            if s.v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Subject {
                    subject: s.id.clone(),
                    message: "baseline covariate is not finite".into(),
                });
            }
            for k in 0..visits {
                if !s.y[k].is_finite() || !s.cum_a[k].is_finite() {
                    return Err(err(k, "outcome or cumulative treatment is not finite".into()));
                }
                if s.a[k] > 1 {
                    return Err(err(k, format!("treatment {} is not binary", s.a[k])));
                }
                if s.l[k].len() != self.l_names.len() || s.l[k].iter().any(|x| !x.is_finite()) {
                    return Err(err(k, "time-varying covariates malformed".into()));
                }
                if k > 0 {
                    let inc = s.cum_a[k] - s.cum_a[k - 1];
                    if inc < -CUM_TOL {
                        return Err(err(k, "cumulative treatment decreases".into()));
                    }
                    if let Some(max) = rules.max_cum_increment {
                        if inc > max + CUM_TOL {
                            return Err(err(k, format!("cumulative treatment grows by {inc} > {max}")));
                        }
                    }
                }
            }
            if rules.zero_start && s.cum_a[0].abs() > CUM_TOL {
                return Err(err(0, "cumulative treatment must start at 0".into()));
            }
        }
        Ok(())
    }

    /// Panel of `paths` observed at visits `0..=k_max`.
    pub fn from_paths(paths: &[ContinuousPath], k_max: usize) -> Result<Self> {
        let visits: Vec<usize> = (0..=k_max).collect();
        let subjects = paths
            .iter()
            .enumerate()
            .map(|(i, p)| discretize(p, &visits, i.to_string()))
            .collect::<Result<Vec<_>>>()?;
        let l_names = match paths.first().and_then(|p| p.l_minus.as_ref()) {
            Some(_) => vec!["lead".to_string()],
            None => Vec::new(),
        };
        Ok(Self {
            k_max,
            first_visit: 0,
            l_names,
            v_names: Vec::new(),
            subjects,
        })
    }

    /// `Y*_m - psi * cumA*_m` for every subject and visit.
    pub fn putative_untreated(&self, psi: f64) -> Vec<Vec<f64>> {
        self.subjects
            .iter()
            .map(|s| s.y.iter().zip(&s.cum_a).map(|(y, c)| y - psi * c).collect())
            .collect()
    }
}

fn visit_indices(path: &ContinuousPath, visits: &[usize]) -> Result<Vec<usize>> {
    visits
        .iter()
        .map(|&k| {
            path.grid
                .index_of(k as f64)
                .ok_or_else(|| Error::Structural(format!("visit time {k} is not on the simulation grid")))
        })
        .collect()
}

/// Observes `path` at the integer `visits`.
///
/// The outcome, covariate and exposure integral are continuous in time, so
/// the grid value at a visit is their left limit there. The treatment is
/// right-continuous, so its value at the visit already reflects a flip at
/// that instant.
pub fn discretize(path: &ContinuousPath, visits: &[usize], id: String) -> Result<SubjectRecord> {
    let idx = visit_indices(path, visits)?;
    let l = match &path.l_minus {
        Some(l) => idx.iter().map(|&j| vec![l[j]]).collect(),
        None => vec![Vec::new(); idx.len()],
    };
    Ok(SubjectRecord {
        id,
        y: idx.iter().map(|&j| path.y[j]).collect(),
        a: idx.iter().map(|&j| path.a[j]).collect(),
        cum_a: idx.iter().map(|&j| path.cum_a[j]).collect(),
        l,
        v: Vec::new(),
    })
}

/// Untreated outcome `Y0` observed at `visits` (known only for simulated data).
pub fn observe_untreated(path: &ContinuousPath, visits: &[usize]) -> Result<Vec<f64>> {
    Ok(visit_indices(path, visits)?.into_iter().map(|j| path.y0[j]).collect())
}

/// Column mapping for panel CSV files.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSchema {
    pub id: String,
    pub visit: String,
    pub y: String,
    pub a: String,
    pub cum_a: String,
    pub l_prefix: String,
    pub v_prefix: String,
    pub rules: PanelRules,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            visit: "visit".into(),
            y: "y".into(),
            a: "a".into(),
            cum_a: "cum_a".into(),
            l_prefix: "l_".into(),
            v_prefix: "v_".into(),
            rules: PanelRules::default(),
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Structural(format!("missing required column `{name}`")))
}

fn parse_num(field: &str, what: &str, id: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Subject {
        subject: id.to_string(),
        message: format!("cannot parse {what} value `{field}`"),
    })
}

struct RawRow {
    visit: i64,
    y: f64,
    a: u8,
    cum_a: f64,
    l: Vec<f64>,
    v: Vec<f64>,
}

/// Reads a long-format panel: one row per subject and visit. Visits must be
/// consecutive integers shared by all subjects; they are renumbered from 0.
pub fn read_panel_csv(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let c_id = column(&headers, &schema.id)?;
    let c_visit = column(&headers, &schema.visit)?;
    let c_y = column(&headers, &schema.y)?;
    let c_a = column(&headers, &schema.a)?;
    let c_cum = column(&headers, &schema.cum_a)?;
    let prefixed = |prefix: &str| -> Vec<(usize, String)> {
        headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(prefix) && h.len() > prefix.len())
            .map(|(i, h)| (i, h[prefix.len()..].to_string()))
            .collect()
    };
    let l_cols = prefixed(&schema.l_prefix);
    let v_cols = prefixed(&schema.v_prefix);

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<RawRow>> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let id = record[c_id].to_string();
        let visit_f = parse_num(&record[c_visit], "visit", &id)?;
        if visit_f.fract() != 0.0 {
            return Err(Error::Subject {
                subject: id,
                message: format!("visit {visit_f} is not an integer"),
            });
        }
        let visit = visit_f as i64;
        let a_f = parse_num(&record[c_a], "treatment", &id)?;
        if a_f != 0.0 && a_f != 1.0 {
            return Err(Error::Visit {
                subject: id,
                visit,
                message: format!("treatment {a_f} is not binary"),
            });
        }
        let row = RawRow {
            visit,
            y: parse_num(&record[c_y], "outcome", &id)?,
            a: a_f as u8,
            cum_a: parse_num(&record[c_cum], "cumulative treatment", &id)?,
            l: l_cols
                .iter()
                .map(|(i, n)| parse_num(&record[*i], n, &id))
                .collect::<Result<_>>()?,
            v: v_cols
                .iter()
                .map(|(i, n)| parse_num(&record[*i], n, &id))
                .collect::<Result<_>>()?,
        };
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push(row);
    }

    let mut panel = PanelDataset {
        k_max: 0,
        first_visit: 0,
        l_names: l_cols.into_iter().map(|(_, n)| n).collect(),
        v_names: v_cols.into_iter().map(|(_, n)| n).collect(),
        subjects: Vec::with_capacity(order.len()),
    };
    if order.is_empty() {
        return Ok(panel);
    }
    let first_visit = rows.values().flatten().map(|r| r.visit).min().unwrap();
    let last_visit = rows.values().flatten().map(|r| r.visit).max().unwrap();
    panel.k_max = (last_visit - first_visit) as usize;
    panel.first_visit = first_visit;

    for id in order {
        let mut subject_rows = rows.remove(&id).unwrap();
        subject_rows.sort_by_key(|r| r.visit);
        for (expected, r) in (first_visit..=last_visit).zip(subject_rows.iter()) {
            if r.visit != expected {
                let message = if r.visit < expected { "duplicate visit" } else { "missing visit" };
                return Err(Error::Visit {
                    subject: id,
                    visit: if r.visit < expected { r.visit } else { expected },
                    message: message.into(),
                });
            }
        }
        if subject_rows.len() != panel.k_max + 1 {
            return Err(Error::Visit {
                subject: id,
                visit: first_visit + subject_rows.len() as i64,
                message: "missing visit".into(),
            });
        }
        let v = subject_rows[0].v.clone();
        if subject_rows.iter().any(|r| r.v != v) {
            return Err(Error::Subject {
                subject: id,
                message: "baseline covariates change across visits".into(),
            });
        }
        panel.subjects.push(SubjectRecord {
            id,
            y: subject_rows.iter().map(|r| r.y).collect(),
            a: subject_rows.iter().map(|r| r.a).collect(),
            cum_a: subject_rows.iter().map(|r| r.cum_a).collect(),
            l: subject_rows.iter_mut().map(|r| std::mem::take(&mut r.l)).collect(),
            v,
        });
    }
    panel.validate(&schema.rules).map_err(|e| match e {
        Error::Visit { subject, visit, message } => Error::Visit {
            subject,
            visit: visit + first_visit,
            message,
        },
        other => other,
    })?;
    Ok(panel)
}

/// Writes `panel` in long format with columns
/// `id,visit,y,a,cum_a,l_<name>...,v_<name>...`.
pub fn write_panel_csv(panel: &PanelDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_panel(panel, file)
}

pub fn write_panel<W: Write>(panel: &PanelDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["id", "visit", "y", "a", "cum_a"].iter().map(|s| s.to_string()).collect();
    header.extend(panel.l_names.iter().map(|n| format!("l_{n}")));
    header.extend(panel.v_names.iter().map(|n| format!("v_{n}")));
    w.write_record(&header)?;
    for s in &panel.subjects {
        for k in 0..=panel.k_max {
            let mut rec = vec![
                s.id.clone(),
                (k as i64 + panel.first_visit).to_string(),
                s.y[k].to_string(),
                s.a[k].to_string(),
                s.cum_a[k].to_string(),
            ];
            rec.extend(s.l[k].iter().map(|x| x.to_string()));
            rec.extend(s.v.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
