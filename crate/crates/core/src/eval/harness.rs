//! Scenario suites, parallel evaluation and the metrics report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::metrics::{confusion, lead_time, metrics, parse_truth, ConfusionMatrix, EvalError, LeadTimeSummary, Metrics};
use super::scenario::{generate_scenario, GeneratedScenario, GroundTruth, LeadProfile, Lighting, ScenarioError, ScenarioKind, ScenarioSpec};
use crate::config::PipelineConfig;
use crate::detection::FramePacket;
use crate::pipeline::{read_stream_file, run_pipeline, PipelineError, RunStats};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("scenario `{id}`: {source}")]
    Pipeline {
        id: String,
        #[source]
        source: PipelineError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no scenario directories with camera streams under {0}")]
    EmptyScenarioDir(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub truth: GroundTruth,
    pub first_alert_frame: Option<u64>,
    pub emergency: bool,
    pub stats: RunStats,
    pub log_text: String,
}

impl ScenarioOutcome {
    /// Alerted at or before contact (collisions) or alerted at all (others).
    pub fn alerted_in_time(&self) -> bool {
        match (self.first_alert_frame, self.truth.contact_frame) {
            (Some(f), Some(c)) => f <= c as u64,
            (Some(_), None) => true,
            (None, _) => false,
        }
    }
}

pub fn run_streams(
    truth: GroundTruth,
    streams: Vec<Vec<FramePacket>>,
    config: &PipelineConfig,
) -> Result<ScenarioOutcome, HarnessError> {
    let out = run_pipeline(streams, config).map_err(|source| HarnessError::Pipeline {
        id: truth.scenario_id.clone(),
        source,
    })?;
    Ok(ScenarioOutcome {
        first_alert_frame: out.first_command_frame(),
        emergency: out.has_emergency(),
        stats: out.stats,
        log_text: out.log_text(),
        truth,
    })
}

pub fn run_scenario(generated: GeneratedScenario, config: &PipelineConfig) -> Result<ScenarioOutcome, HarnessError> {
    run_streams(generated.truth, generated.streams, config)
}

/// Generates and runs every spec in parallel; spec `i` uses seed `base_seed + i`.
/// The actuation log file setting is ignored.
pub fn evaluate_specs(
    specs: &[ScenarioSpec],
    base_seed: u64,
    config: &PipelineConfig,
) -> Result<Vec<ScenarioOutcome>, HarnessError> {
    let labels = config.labels().map_err(|e| HarnessError::Pipeline {
        id: String::new(),
        source: PipelineError::Config(crate::config::ConfigError::Invalid {
            field: "vehicle_classes".into(),
            reason: e.to_string(),
        }),
    })?;
    let config = PipelineConfig {
        actuation_log: None,
        ..config.clone()
    };
    specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let generated = generate_scenario(spec, base_seed.wrapping_add(i as u64), &labels)?;
            run_scenario(generated, &config)
        })
        .collect()
}

/// Fraction of outcomes with [`ScenarioOutcome::alerted_in_time`].
pub fn alert_rate(outcomes: &[ScenarioOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.alerted_in_time()).count() as f64 / outcomes.len() as f64
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..=hi)
}

/// Lead vehicle that starts braking hard enough to hit the host at frame `contact`.
fn braking_profile(rng: &mut ChaCha8Rng, contact: u32, max_gap: f64) -> LeadProfile {
    let closing = uniform(rng, 0.0, 1.0);
    let decel = uniform(rng, 1.0, 1.4);
    let max_k = ((2.0 * (max_gap - closing * contact as f64) / decel).sqrt().floor() as u32).min(contact);
    let k = rng.random_range(22.min(max_k)..=max_k);
    let onset = contact - k;
    let reach = closing * contact as f64 + 0.5 * decel * (k * k) as f64;
    LeadProfile {
        initial_gap_px: reach - 0.25 * decel,
        closing_speed_px: closing,
        deceleration_px: decel,
        deceleration_onset_frame: onset,
        x_px: uniform(rng, 900.0, 1020.0),
    }
}

/// Day collisions: contact between frames 30 and 46, noise 2 px, dropout 0.05, no brake lights.
pub fn day_collision_suite(n: usize, seed: u64) -> Vec<ScenarioSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let contact = rng.random_range(30..=46);
            let spec = ScenarioSpec {
                id: format!("day-collision-{i:03}"),
                kind: ScenarioKind::Collision,
                lighting: Lighting::Day,
                lead: braking_profile(&mut rng, contact, 880.0),
                side_traffic: 2,
                noise_std_px: 2.0,
                dropout: Some(0.05),
                ..ScenarioSpec::default()
            };
            debug_assert_eq!(spec.contact_frame(), Some(contact));
            spec
        })
        .collect()
}

/// Non-collision traffic: steady following, receding leads and near misses.
pub fn benign_suite(n: usize, seed: u64) -> Vec<ScenarioSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (kind, lead) = match i % 3 {
                0 => (
                    ScenarioKind::Benign,
                    LeadProfile {
                        initial_gap_px: uniform(&mut rng, 300.0, 700.0),
                        ..LeadProfile::default()
                    },
                ),
                1 => (
                    ScenarioKind::Benign,
                    LeadProfile {
                        initial_gap_px: uniform(&mut rng, 200.0, 500.0),
                        closing_speed_px: -uniform(&mut rng, 0.5, 3.0),
                        ..LeadProfile::default()
                    },
                ),
                _ => {
                    // Closes, then the gap opens again before reaching `min_gap`.
                    let closing = uniform(&mut rng, 4.0, 8.0);
                    let opening = uniform(&mut rng, 0.4, 0.8);
                    let onset = rng.random_range(5..=15);
                    let min_gap = uniform(&mut rng, 150.0, 300.0);
                    let turn = closing / opening;
                    let gap0 = min_gap + closing * (onset as f64 + turn) - 0.5 * opening * turn * turn;
                    (
                        ScenarioKind::NearMiss,
                        LeadProfile {
                            initial_gap_px: gap0,
                            closing_speed_px: closing,
                            deceleration_px: -opening,
                            deceleration_onset_frame: onset,
                            x_px: 960.0,
                        },
                    )
                }
            };
            ScenarioSpec {
                id: format!("benign-{i:03}"),
                kind,
                lighting: Lighting::Day,
                lead: LeadProfile {
                    x_px: uniform(&mut rng, 900.0, 1020.0),
                    ..lead
                },
                side_traffic: 2,
                noise_std_px: 2.0,
                dropout: Some(0.05),
                ..ScenarioSpec::default()
            }
        })
        .collect()
}

/// Night collisions: dropout 0.3, brake lights on from the braking onset, and
/// the vehicle body only detectable within a randomized headlight range.
pub fn night_collision_suite(n: usize, seed: u64) -> Vec<ScenarioSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let contact = rng.random_range(30..=46);
            let lead = braking_profile(&mut rng, contact, 880.0);
            ScenarioSpec {
                id: format!("night-collision-{i:03}"),
                kind: ScenarioKind::Collision,
                lighting: Lighting::Night,
                lead,
                side_traffic: 2,
                noise_std_px: 3.0,
                dropout: Some(0.3),
                brake_onset_frame: Some(lead.deceleration_onset_frame),
                visibility_gap_px: Some(uniform(&mut rng, 250.0, 700.0)),
                ..ScenarioSpec::default()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumReport {
    pub name: String,
    pub scenarios: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub lead_time: LeadTimeSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Day and night rows (when present), then the overall row.
    pub strata: Vec<StratumReport>,
    pub frames: u64,
    pub elapsed_s: f64,
    pub fps: Option<f64>,
}

fn stratum(name: &str, outcomes: &[&ScenarioOutcome], fps: f64) -> Result<StratumReport, EvalError> {
    let truths: Vec<GroundTruth> = outcomes.iter().map(|o| o.truth.clone()).collect();
    let alerts: BTreeMap<String, Option<u64>> = outcomes
        .iter()
        .map(|o| (o.truth.scenario_id.clone(), o.first_alert_frame))
        .collect();
    let cm = confusion(&alerts, &truths)?;
    Ok(StratumReport {
        name: name.to_owned(),
        scenarios: outcomes.len(),
        confusion: cm,
        metrics: metrics(&cm, cm.total()),
        lead_time: lead_time(&alerts, &truths, fps),
    })
}

pub fn build_report(outcomes: &[ScenarioOutcome], fps: f64, elapsed_s: f64) -> Result<EvalReport, EvalError> {
    let mut strata = Vec::new();
    for lighting in [Lighting::Day, Lighting::Night] {
        let subset: Vec<&ScenarioOutcome> = outcomes.iter().filter(|o| o.truth.lighting == lighting).collect();
        if !subset.is_empty() {
            strata.push(stratum(lighting.as_str(), &subset, fps)?);
        }
    }
    let all: Vec<&ScenarioOutcome> = outcomes.iter().collect();
    strata.push(stratum("all", &all, fps)?);
    let frames: u64 = outcomes.iter().map(|o| o.stats.processed).sum();
    Ok(EvalReport {
        strata,
        frames,
        elapsed_s,
        fps: (elapsed_s > 0.0).then(|| frames as f64 / elapsed_s),
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{:.2}%", v * 100.0))
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>5} {:>5} {:>5} {:>5} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "stratum", "n", "TP", "FP", "FN", "TN", "precision", "recall", "accuracy", "F1", "lead(s)"
        );
        for r in &self.strata {
            let c = &r.confusion;
            let lead = r.lead_time.mean_s.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.2}"));
            let _ = writeln!(
                s,
                "{:<8} {:>5} {:>5} {:>5} {:>5} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10}",
                r.name,
                r.scenarios,
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                pct(r.metrics.precision),
                pct(r.metrics.recall),
                pct(r.metrics.accuracy),
                pct(r.metrics.f1),
                lead
            );
        }
        let fps = self.fps.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.0}"));
        let _ = writeln!(s, "frames {} in {:.3} s, {} fps", self.frames, self.elapsed_s, fps);
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

/// Scenario directories under `dir` that contain `cam*.jsonl` streams, keyed by name.
pub fn scenario_dirs(dir: &Path) -> Result<BTreeMap<String, Vec<PathBuf>>, HarnessError> {
    let io = |source| HarnessError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        if !entry.file_type().map_err(io)?.is_dir() {
            continue;
        }
        let mut streams: Vec<PathBuf> = std::fs::read_dir(entry.path())
            .map_err(io)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                name.starts_with("cam") && name.ends_with(".jsonl")
            })
            .collect();
        if streams.is_empty() {
            continue;
        }
        streams.sort();
        out.insert(entry.file_name().to_string_lossy().into_owned(), streams);
    }
    Ok(out)
}

/// Evaluates recorded scenarios: `truth_path` lists ids, `dir/<id>/cam*.jsonl` holds streams.
pub fn evaluate_dir(
    truth_path: &Path,
    dir: &Path,
    config: &PipelineConfig,
) -> Result<(EvalReport, Vec<ScenarioOutcome>), HarnessError> {
    let text = std::fs::read_to_string(truth_path).map_err(|source| HarnessError::Io {
        path: truth_path.to_owned(),
        source,
    })?;
    let truths = parse_truth(&text)?;
    let dirs = scenario_dirs(dir)?;
    if dirs.is_empty() {
        return Err(HarnessError::EmptyScenarioDir(dir.to_owned()));
    }
    let present: BTreeMap<String, Option<u64>> = dirs.keys().map(|k| (k.clone(), None)).collect();
    confusion(&present, &truths)?;

    let labels = config.labels().expect("validated config");
    let config = PipelineConfig {
        actuation_log: None,
        ..config.clone()
    };
    let started = Instant::now();
    let outcomes: Vec<ScenarioOutcome> = truths
        .par_iter()
        .map(|truth| {
            let streams = dirs[&truth.scenario_id]
                .iter()
                .map(|p| read_stream_file(p, &labels))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|source| HarnessError::Pipeline {
                    id: truth.scenario_id.clone(),
                    source,
                })?;
            run_streams(truth.clone(), streams, &config)
        })
        .collect::<Result<_, _>>()?;
    let report = build_report(&outcomes, config.fps, started.elapsed().as_secs_f64())?;
    Ok((report, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_are_deterministic_and_valid() {
        for suite in [day_collision_suite, benign_suite, night_collision_suite] {
            let a = suite(30, 5);
            assert_eq!(a, suite(30, 5));
            for spec in &a {
                spec.validate().unwrap();
            }
        }
        for spec in day_collision_suite(50, 1) {
            let c = spec.contact_frame().unwrap();
            assert!((30..=46).contains(&c), "{c}");
        }
    }

    #[test]
    fn report_rows() {
        let outcome = |id: &str, lighting, contact: Option<u32>, alert| ScenarioOutcome {
            truth: GroundTruth {
                scenario_id: id.into(),
                collision: contact.is_some(),
                contact_frame: contact,
                lighting,
            },
            first_alert_frame: alert,
            emergency: false,
            stats: RunStats::default(),
            log_text: String::new(),
        };
        let outcomes = vec![
            outcome("a", Lighting::Day, Some(30), Some(18)),
            outcome("b", Lighting::Day, None, None),
            outcome("c", Lighting::Night, Some(30), None),
            outcome("d", Lighting::Night, None, Some(3)),
        ];
        let r = build_report(&outcomes, 10.0, 0.0).unwrap();
        let names: Vec<_> = r.strata.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["day", "night", "all"]);
        assert_eq!(r.strata[0].confusion, ConfusionMatrix::new(1, 0, 0, 1));
        assert_eq!(r.strata[1].confusion, ConfusionMatrix::new(0, 1, 1, 0));
        assert_eq!(r.strata[2].confusion, ConfusionMatrix::new(1, 1, 1, 1));
        assert!((r.strata[0].lead_time.mean_s.unwrap() - 1.2).abs() < 1e-12);
        assert!(r.table().contains("day"));
        assert!(r.to_json().contains("\"night\""));
    }
}
