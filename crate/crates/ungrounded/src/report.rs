//! Serializable report records and their CSV renderings. Column sets and
//! orders are fixed; see the README for the schemas.

use serde::{Deserialize, Serialize};
use ungrounded_core::alphabet::ALPHABET_SIZE;
use ungrounded_core::baselines::ClusterReport;
use ungrounded_core::detection::{CharacterReport, DetectionReport, SweepReport};
use ungrounded_core::training::{DiscoveryTrace, RestartResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub trigger: String,
    pub length: usize,
    pub source: String,
    pub accuracy: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub theta: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl From<&DetectionReport> for DetectionRecord {
    fn from(r: &DetectionReport) -> Self {
        Self {
            trigger: r.trigger.render(),
            length: r.trigger.len(),
            source: r.trigger.source.as_str().to_string(),
            accuracy: r.accuracy,
            tpr: r.true_positive_rate,
            tnr: r.true_negative_rate,
            theta: r.theta,
            n_pos: r.n_pos,
            n_neg: r.n_neg,
        }
    }
}

pub const DETECTION_CSV_HEADER: &str = "trigger,length,source,accuracy,tpr,tnr,theta";

pub fn detection_csv<'a>(rows: impl IntoIterator<Item = &'a DetectionRecord>) -> String {
    let mut out = format!("{DETECTION_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{},{},{}\n", r.trigger, r.length, r.source, r.accuracy, r.tpr, r.tnr, r.theta));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterRecord {
    pub accuracy: f64,
    pub per_class: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

impl From<&CharacterReport> for CharacterRecord {
    fn from(r: &CharacterReport) -> Self {
        Self { accuracy: r.accuracy, per_class: r.per_class, confusion: r.confusion.iter().map(|row| row.to_vec()).collect() }
    }
}

/// A 26 x 26 matrix with letter row and column headers; rows are true letters.
pub fn confusion_csv(confusion: &[[u64; ALPHABET_SIZE]; ALPHABET_SIZE]) -> String {
    let letters: Vec<String> = (b'a'..=b'z').map(|c| (c as char).to_string()).collect();
    let mut out = format!("true,{}\n", letters.join(","));
    for (l, row) in letters.iter().zip(confusion) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        out.push_str(&format!("{l},{}\n", cells.join(",")));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub seed: u64,
    pub final_train_loss: f64,
    pub steps_run: usize,
    pub diverged: bool,
    pub loss_history: Vec<(usize, f64)>,
}

impl From<&RestartResult> for RestartRecord {
    fn from(r: &RestartResult) -> Self {
        Self {
            seed: r.seed,
            final_train_loss: r.final_train_loss,
            steps_run: r.steps_run,
            diverged: r.diverged,
            loss_history: r.loss_history.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTable {
    pub best_index: usize,
    pub best_seed: u64,
    pub restarts: Vec<RestartRecord>,
}

pub const RESTART_CSV_HEADER: &str = "seed,final_train_loss,steps_run,diverged,best";

pub fn restart_csv(t: &RestartTable) -> String {
    let mut out = format!("{RESTART_CSV_HEADER}\n");
    for (i, r) in t.restarts.iter().enumerate() {
        out.push_str(&format!("{},{},{},{},{}\n", r.seed, r.final_train_loss, r.steps_run, r.diverged, i == t.best_index));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRecord {
    pub length: usize,
    pub mean_accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub triggers: usize,
    pub mean_accuracy: f64,
    pub per_length: Vec<LengthRecord>,
    pub pearson_r: Option<f64>,
}

impl From<&SweepReport> for SweepSummary {
    fn from(s: &SweepReport) -> Self {
        let n = s.reports.len();
        Self {
            triggers: n,
            mean_accuracy: s.reports.iter().map(|r| r.accuracy).sum::<f64>() / n.max(1) as f64,
            per_length: s
                .per_length
                .iter()
                .map(|l| LengthRecord { length: l.length, mean_accuracy: l.mean_accuracy, count: l.count })
                .collect(),
            pearson_r: s.pearson_r,
        }
    }
}

pub const INTERPOLATION_CSV_HEADER: &str = "seed,alpha,loss";

pub fn interpolation_csv(curves: &[(u64, Vec<(f64, f64)>)]) -> String {
    let mut out = format!("{INTERPOLATION_CSV_HEADER}\n");
    for (seed, curve) in curves {
        for (a, l) in curve {
            out.push_str(&format!("{seed},{a},{l}\n"));
        }
    }
    out
}

pub const DISCOVERY_CSV_HEADER: &str = "step,loss,letters";

pub fn discovery_csv(trace: &DiscoveryTrace) -> String {
    let mut out = format!("{DISCOVERY_CSV_HEADER}\n");
    for e in &trace.events {
        out.push_str(&format!("{},{},{}\n", e.step, e.loss, e.render()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub accuracy: f64,
    pub max_class_accuracy_stream: f64,
    pub max_class_accuracy_unigram: f64,
    pub k: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Letter assigned to each cluster, `null` when unassigned.
    pub assignment: Vec<Option<char>>,
    pub entropies: Vec<f64>,
}

impl ClusterRecord {
    pub fn new(r: &ClusterReport, k: usize, iterations: usize, converged: bool, unigram_max: f64) -> Self {
        Self {
            accuracy: r.accuracy,
            max_class_accuracy_stream: r.max_class_accuracy,
            max_class_accuracy_unigram: unigram_max,
            k,
            iterations,
            converged,
            assignment: r.assignment.perm.iter().map(|l| l.map(ungrounded_core::alphabet::char_of)).collect(),
            entropies: r.entropies.clone(),
        }
    }
}

pub const ENTROPY_CSV_HEADER: &str = "cluster,letter,size,entropy_nats";

pub fn entropy_csv(r: &ClusterReport) -> String {
    let mut out = format!("{ENTROPY_CSV_HEADER}\n");
    for (i, (row, h)) in r.assignment.counts.iter().zip(&r.entropies).enumerate() {
        let letter = r.assignment.perm[i].map(|l| ungrounded_core::alphabet::char_of(l).to_string()).unwrap_or_default();
        out.push_str(&format!("{i},{letter},{},{h}\n", row.iter().sum::<u64>()));
    }
    out
}
