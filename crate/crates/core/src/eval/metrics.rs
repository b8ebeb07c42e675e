//! Scenario-level confusion counts, detection metrics and alert lead time.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scenario::{GroundTruth, Lighting};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("scenario ids differ: missing outcome for {missing:?}, no ground truth for {unexpected:?}")]
    IdMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("duplicate scenario id `{0}`")]
    DuplicateId(String),
    #[error("truth line {line}: {reason}")]
    TruthFormat { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// `None` marks an undefined ratio (zero denominator).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix, total: u64) -> Metrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Metrics {
        precision,
        recall,
        accuracy: ratio(cm.tp + cm.tn, total),
        f1,
    }
}

fn check_ids<V>(first_alerts: &BTreeMap<String, V>, truths: &[GroundTruth]) -> Result<(), EvalError> {
    let mut seen = BTreeSet::new();
    for t in truths {
        if !seen.insert(t.scenario_id.as_str()) {
            return Err(EvalError::DuplicateId(t.scenario_id.clone()));
        }
    }
    let missing: Vec<String> = seen
        .iter()
        .filter(|id| !first_alerts.contains_key(**id))
        .map(|s| s.to_string())
        .collect();
    let unexpected: Vec<String> = first_alerts
        .keys()
        .filter(|id| !seen.contains(id.as_str()))
        .cloned()
        .collect();
    if missing.is_empty() && unexpected.is_empty() {
        Ok(())
    } else {
        Err(EvalError::IdMismatch { missing, unexpected })
    }
}

/// Counts one outcome per scenario. `first_alerts` maps a scenario id to the
/// frame of its first braking command.
///
/// A collision scenario is a true positive when that frame is at or before
/// contact; any alert in a non-collision scenario is a false positive.
pub fn confusion(
    first_alerts: &BTreeMap<String, Option<u64>>,
    truths: &[GroundTruth],
) -> Result<ConfusionMatrix, EvalError> {
    check_ids(first_alerts, truths)?;
    let mut cm = ConfusionMatrix::default();
    for truth in truths {
        let alert = first_alerts[&truth.scenario_id];
        match (truth.collision, alert) {
            (true, Some(frame)) if truth.contact_frame.is_some_and(|c| frame <= c as u64) => cm.tp += 1,
            (true, _) => cm.fn_ += 1,
            (false, Some(_)) => cm.fp += 1,
            (false, None) => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LeadTimeSummary {
    /// Mean over scenarios alerted at or before contact.
    pub mean_s: Option<f64>,
    pub leads_s: Vec<f64>,
    /// Collision scenarios alerted only after contact.
    pub late: usize,
    /// Collision scenarios never alerted.
    pub missed: usize,
}

impl LeadTimeSummary {
    pub fn misses(&self) -> usize {
        self.late + self.missed
    }
}

/// Lead = `(contact_frame - first_alert_frame) / fps` over collision scenarios.
pub fn lead_time(first_alerts: &BTreeMap<String, Option<u64>>, truths: &[GroundTruth], fps: f64) -> LeadTimeSummary {
    let mut out = LeadTimeSummary::default();
    for truth in truths.iter().filter(|t| t.collision) {
        let Some(contact) = truth.contact_frame else {
            continue;
        };
        match first_alerts.get(&truth.scenario_id).copied().flatten() {
            Some(frame) if frame <= contact as u64 => {
                out.leads_s.push((contact as u64 - frame) as f64 / fps);
            }
            Some(_) => out.late += 1,
            None => out.missed += 1,
        }
    }
    if !out.leads_s.is_empty() {
        out.mean_s = Some(out.leads_s.iter().sum::<f64>() / out.leads_s.len() as f64);
    }
    out
}

/// One line per scenario: `id,collision(0/1),contact_frame|-1,day|night`.
pub fn format_truth(truth: &GroundTruth) -> String {
    format!(
        "{},{},{},{}",
        truth.scenario_id,
        u8::from(truth.collision),
        truth.contact_frame.map_or(-1, i64::from),
        truth.lighting.as_str()
    )
}

pub fn parse_truth(text: &str) -> Result<Vec<GroundTruth>, EvalError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |reason: String| EvalError::TruthFormat { line, reason };
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let [id, collision, contact, tag] = fields[..] else {
            return Err(err(format!("expected 4 fields, got {}", fields.len())));
        };
        if id.is_empty() {
            return Err(err("empty scenario id".into()));
        }
        let collision = match collision {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("collision flag must be 0 or 1, got `{other}`"))),
        };
        let contact: i64 = contact
            .parse()
            .map_err(|_| err(format!("contact frame `{contact}` is not an integer")))?;
        let contact_frame = match (collision, contact) {
            (true, c) if c >= 0 => Some(u32::try_from(c).map_err(|_| err("contact frame too large".into()))?),
            (false, -1) => None,
            _ => return Err(err("contact frame must be >= 0 for collisions and -1 otherwise".into())),
        };
        let lighting: Lighting = tag.parse().map_err(err)?;
        out.push(GroundTruth {
            scenario_id: id.to_owned(),
            collision,
            contact_frame,
            lighting,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(id: &str, contact: Option<u32>) -> GroundTruth {
        GroundTruth {
            scenario_id: id.into(),
            collision: contact.is_some(),
            contact_frame: contact,
            lighting: Lighting::Day,
        }
    }

    fn alerts(items: &[(&str, Option<u64>)]) -> BTreeMap<String, Option<u64>> {
        items.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn single_scenario_cells() {
        let cm = confusion(&alerts(&[("a", Some(20))]), &[truth("a", Some(30))]).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(1, 0, 0, 0));
        let cm = confusion(&alerts(&[("b", None)]), &[truth("b", None)]).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(0, 0, 0, 1));
    }

    #[test]
    fn mixed_hand_count() {
        let truths = [truth("a", Some(30)), truth("b", Some(30)), truth("c", None), truth("d", None)];
        // a: alert at contact (TP), b: alert after contact (FN), c: alert (FP), d: none (TN).
        let a = alerts(&[("a", Some(30)), ("b", Some(31)), ("c", Some(5)), ("d", None)]);
        assert_eq!(confusion(&a, &truths).unwrap(), ConfusionMatrix::new(1, 1, 1, 1));
    }

    #[test]
    fn id_mismatch_is_an_error() {
        let err = confusion(&alerts(&[("x", None)]), &[truth("a", None)]).unwrap_err();
        assert_eq!(
            err,
            EvalError::IdMismatch {
                missing: vec!["a".into()],
                unexpected: vec!["x".into()]
            }
        );
    }

    #[test]
    fn undefined_precision() {
        let m = metrics(&ConfusionMatrix::new(0, 0, 0, 10), 10);
        assert_eq!(m.accuracy, Some(1.0));
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, None);
        assert_eq!(m.f1, None);
    }

    #[test]
    fn lead_time_rules() {
        let truths = [truth("a", Some(30)), truth("b", Some(30)), truth("c", Some(30))];
        let s = lead_time(&alerts(&[("a", Some(18)), ("b", Some(35)), ("c", None)]), &truths, 10.0);
        assert_eq!(s.leads_s.len(), 1);
        assert!((s.mean_s.unwrap() - 1.2).abs() < 1e-12);
        assert_eq!((s.late, s.missed), (1, 1));
    }

    #[test]
    fn truth_round_trip() {
        let items = vec![truth("s1", Some(34)), truth("s2", None)];
        let text: String = items.iter().map(|t| format_truth(t) + "\n").collect();
        assert_eq!(text, "s1,1,34,day\ns2,0,-1,day\n");
        assert_eq!(parse_truth(&text).unwrap(), items);
        assert_eq!(parse_truth("a, 1, 3, night").unwrap()[0].lighting, Lighting::Night);
    }

    #[test]
    fn bad_truth_lines() {
        assert!(matches!(parse_truth("a,1,-1,day"), Err(EvalError::TruthFormat { line: 1, .. })));
        assert!(matches!(parse_truth("\na,0,-1,dusk"), Err(EvalError::TruthFormat { line: 2, .. })));
        assert!(parse_truth("a,2,3,day").is_err());
        assert!(parse_truth("a,1,3").is_err());
    }
}
