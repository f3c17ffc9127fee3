//! Confusion-matrix accounting and the Accuracy / ECC / EMC indices.
//!
//! Rows are the true label, columns the predicted label, both in canonical
//! [`EmotionLabel::ALL`] order. Replies that named no target label go to a
//! separate non-target column: they count toward `n_test` (and toward the
//! error count) but contribute nothing to the weighted ECC and EMC sums.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::emotion::{EmotionLabel, EmotionWheel, ParsedOutput};
use crate::error::{Error, Result};

const N: usize = EmotionLabel::COUNT;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; N]; N],
    non_target: [u64; N],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(counts: [[u64; N]; N], non_target: [u64; N]) -> Self {
        ConfusionMatrix { counts, non_target }
    }

    pub fn record(&mut self, truth: EmotionLabel, predicted: &ParsedOutput) {
        match predicted.label() {
            Some(p) => self.counts[truth.index()][p.index()] += 1,
            None => self.non_target[truth.index()] += 1,
        }
    }

    pub fn add(&mut self, truth: EmotionLabel, predicted: EmotionLabel, n: u64) {
        self.counts[truth.index()][predicted.index()] += n;
    }

    pub fn add_non_target(&mut self, truth: EmotionLabel, n: u64) {
        self.non_target[truth.index()] += n;
    }

    pub fn count(&self, truth: EmotionLabel, predicted: EmotionLabel) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn non_target(&self, truth: EmotionLabel) -> u64 {
        self.non_target[truth.index()]
    }

    pub fn counts(&self) -> &[[u64; N]; N] {
        &self.counts
    }

    pub fn non_target_counts(&self) -> &[u64; N] {
        &self.non_target
    }

    pub fn n_test(&self) -> u64 {
        let labelled: u64 = self.counts.iter().flatten().sum();
        labelled + self.non_target.iter().sum::<u64>()
    }

    pub fn n_correct(&self) -> u64 {
        (0..N).map(|i| self.counts[i][i]).sum()
    }

    /// Element-wise sum; associative and commutative.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for i in 0..N {
            for j in 0..N {
                self.counts[i][j] += other.counts[i][j];
            }
            self.non_target[i] += other.non_target[i];
        }
    }

    fn require_samples(&self) -> Result<u64> {
        match self.n_test() {
            0 => Err(Error::EmptyEvaluation("confusion matrix holds no samples".into())),
            n => Ok(n),
        }
    }

    /// `Σ_{α≠β} S_αβ / W_αβ`.
    fn off_diagonal_ecc_sum(&self, wheel: &EmotionWheel) -> f64 {
        let mut sum = 0.0;
        for a in EmotionLabel::ALL {
            for b in EmotionLabel::ALL {
                if a != b {
                    sum += self.count(a, b) as f64 / wheel.weight(a, b) as f64;
                }
            }
        }
        sum
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let n = cm.require_samples()?;
    Ok(cm.n_correct() as f64 / n as f64)
}

/// Emotion Confusion Confidence: accuracy plus partial credit `1/W` for
/// each misclassification.
pub fn ecc(cm: &ConfusionMatrix, wheel: &EmotionWheel) -> Result<f64> {
    let n = cm.require_samples()?;
    Ok((cm.n_correct() as f64 + cm.off_diagonal_ecc_sum(wheel)) / n as f64)
}

/// Emotional Misclassification Confidence. `None` when there are no
/// misclassifications.
pub fn emc(cm: &ConfusionMatrix, wheel: &EmotionWheel) -> Result<Option<f64>> {
    let n = cm.require_samples()?;
    let errors = n - cm.n_correct();
    if errors == 0 {
        return Ok(None);
    }
    let mut sum = 0.0;
    for a in EmotionLabel::ALL {
        for b in EmotionLabel::ALL {
            if a != b {
                sum += cm.count(a, b) as f64 / (wheel.weight(a, b) - 1) as f64;
            }
        }
    }
    Ok(Some(sum / errors as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub ecc: f64,
    pub emc: Option<f64>,
    pub n_test: u64,
    pub n_correct: u64,
}

impl MetricReport {
    pub fn from_confusion(cm: &ConfusionMatrix, wheel: &EmotionWheel) -> Result<Self> {
        Ok(MetricReport {
            accuracy: accuracy(cm)?,
            ecc: ecc(cm, wheel)?,
            emc: emc(cm, wheel)?,
            n_test: cm.n_test(),
            n_correct: cm.n_correct(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation. `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MeanStd {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub users: usize,
    pub accuracy: MeanStd,
    pub ecc: MeanStd,
    /// Over users that had at least one misclassification.
    pub emc: Option<MeanStd>,
    pub emc_users: usize,
}

pub fn aggregate(reports: &[MetricReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::EmptyEvaluation("no user reports to aggregate".into()));
    }
    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let ecc: Vec<f64> = reports.iter().map(|r| r.ecc).collect();
    let emc: Vec<f64> = reports.iter().filter_map(|r| r.emc).collect();
    Ok(AggregateReport {
        users: reports.len(),
        accuracy: MeanStd::of(&acc).expect("non-empty"),
        ecc: MeanStd::of(&ecc).expect("non-empty"),
        emc: MeanStd::of(&emc),
        emc_users: emc.len(),
    })
}

/// On-disk form of one user's confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionFile {
    pub user_id: String,
    pub labels: Vec<EmotionLabel>,
    pub counts: Vec<Vec<u64>>,
    pub non_target: Vec<u64>,
}

impl ConfusionFile {
    pub fn new(user_id: impl Into<String>, cm: &ConfusionMatrix) -> Self {
        ConfusionFile {
            user_id: user_id.into(),
            labels: EmotionLabel::ALL.to_vec(),
            counts: cm.counts.iter().map(|row| row.to_vec()).collect(),
            non_target: cm.non_target.to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<ConfusionMatrix> {
        if self.labels != EmotionLabel::ALL {
            return Err(Error::Data(format!(
                "confusion file for {} must list the labels in canonical order",
                self.user_id
            )));
        }
        if self.counts.len() != N || self.counts.iter().any(|r| r.len() != N) || self.non_target.len() != N {
            return Err(Error::Data(format!(
                "confusion file for {} must be {N}x{N} with {N} non-target counts",
                self.user_id
            )));
        }
        let mut cm = ConfusionMatrix::new();
        for (i, row) in self.counts.iter().enumerate() {
            cm.counts[i].copy_from_slice(row);
        }
        cm.non_target.copy_from_slice(&self.non_target);
        Ok(cm)
    }
}

/// One line of the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportRecord {
    User {
        user_id: String,
        n_test: u64,
        n_correct: u64,
        accuracy: f64,
        ecc: f64,
        emc: Option<f64>,
    },
    Aggregate {
        users: usize,
        accuracy_mean: f64,
        accuracy_std: f64,
        ecc_mean: f64,
        ecc_std: f64,
        emc_mean: Option<f64>,
        emc_std: Option<f64>,
        emc_users: usize,
    },
}

/// Writes one `user` record per report followed by one `aggregate` record,
/// as line-delimited JSON.
pub fn write_report<W: Write>(
    mut out: W,
    users: &[(String, MetricReport)],
    agg: &AggregateReport,
) -> std::io::Result<()> {
    for (user_id, r) in users {
        let rec = ReportRecord::User {
            user_id: user_id.clone(),
            n_test: r.n_test,
            n_correct: r.n_correct,
            accuracy: r.accuracy,
            ecc: r.ecc,
            emc: r.emc,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    let rec = ReportRecord::Aggregate {
        users: agg.users,
        accuracy_mean: agg.accuracy.mean,
        accuracy_std: agg.accuracy.std,
        ecc_mean: agg.ecc.mean,
        ecc_std: agg.ecc.std,
        emc_mean: agg.emc.map(|m| m.mean),
        emc_std: agg.emc.map(|m| m.std),
        emc_users: agg.emc_users,
    };
    serde_json::to_writer(&mut out, &rec)?;
    out.write_all(b"\n")
}

/// Human-readable table with percentages; absent EMC shows as `n/a`.
pub fn render_table(users: &[(String, MetricReport)], agg: &AggregateReport) -> String {
    let pct = |v: f64| format!("{:.1}%", v * 100.0);
    let mut s = String::from("user\taccuracy\tECC\tEMC\n");
    for (user, r) in users {
        let emc = r.emc.map(pct).unwrap_or_else(|| "n/a".into());
        s.push_str(&format!("{user}\t{}\t{}\t{emc}\n", pct(r.accuracy), pct(r.ecc)));
    }
    let ms = |m: MeanStd| format!("{} ± {}", pct(m.mean), pct(m.std));
    let emc = agg.emc.map(ms).unwrap_or_else(|| "n/a".into());
    s.push_str(&format!("mean ± std\t{}\t{}\t{emc}\n", ms(agg.accuracy), ms(agg.ecc)));
    s
}
