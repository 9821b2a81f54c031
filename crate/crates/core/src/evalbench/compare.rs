use super::format_value;
use super::metrics::{apcer_at_bpcer, det_curve, DetCurve, OperatingPoint};
use super::protocol::{Protocol, ScoreSet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: String,
    pub delta: f64,
    pub point: OperatingPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub protocol: String,
    pub deltas: Vec<f64>,
    pub rows: Vec<CompareRow>,
    pub dets: Vec<(String, DetCurve)>,
}

impl Comparison {
    pub fn apcer(&self, method: &str, delta: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.delta == delta)
            .map(|r| r.point.apcer)
    }

    /// One row per (method, delta): `method,delta,apcer,threshold`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,delta,apcer,threshold\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.method,
                r.delta,
                format_value(r.point.apcer),
                format_value(r.point.threshold)
            ));
        }
        s
    }

    /// One row per method with a column per delta.
    pub fn to_table(&self) -> String {
        let mut s = String::from("method,protocol");
        for d in &self.deltas {
            s.push_str(&format!(",apcer@{d}"));
        }
        s.push('\n');
        for (method, _) in &self.dets {
            s.push_str(&format!("{method},{}", self.protocol));
            for &d in &self.deltas {
                let v = self.apcer(method, d).expect("row exists for every method and delta");
                s.push_str(&format!(",{}", format_value(v)));
            }
            s.push('\n');
        }
        s
    }
}

/// APCER at each BPCER target for every method, plus its DET curve.
pub fn compare_runs(
    runs: &[(String, ScoreSet)],
    protocol: &Protocol,
    protocol_name: &str,
    deltas: &[f64],
) -> Result<Comparison> {
    if runs.is_empty() {
        return Err(Error::Config("nothing to compare".into()));
    }
    if deltas.is_empty() {
        return Err(Error::Config("at least one delta is required".into()));
    }
    let mut names = std::collections::HashSet::new();
    let mut rows = Vec::new();
    let mut dets = Vec::new();
    for (name, set) in runs {
        if name.is_empty() || name.contains(',') || !names.insert(name.as_str()) {
            return Err(Error::Config(format!("invalid or duplicate method name `{name}`")));
        }
        let (scores, truths) = set
            .align(protocol)
            .map_err(|e| Error::Alignment(format!("{name}: {e}")))?;
        for &delta in deltas {
            rows.push(CompareRow {
                method: name.clone(),
                delta,
                point: apcer_at_bpcer(&scores, &truths, delta)?,
            });
        }
        dets.push((name.clone(), det_curve(&scores, &truths)?));
    }
    Ok(Comparison {
        protocol: protocol_name.into(),
        deltas: deltas.to_vec(),
        rows,
        dets,
    })
}
