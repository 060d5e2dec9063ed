//! Standard and change-aware evaluation metrics. Defective is the positive class.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::llm::ParsePath;
use crate::matching::{EvolutionRecord, Subset};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_pairs(labels: &[Label], preds: &[Label]) -> ConfusionCounts {
        assert_eq!(labels.len(), preds.len(), "labels and predictions differ in length");
        let mut c = ConfusionCounts::default();
        for (&y, &p) in labels.iter().zip(preds) {
            match (y, p) {
                (Label::Defective, Label::Defective) => c.tp += 1,
                (Label::Benign, Label::Defective) => c.fp += 1,
                (Label::Benign, Label::Benign) => c.tn += 1,
                (Label::Defective, Label::Benign) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn).unwrap_or(0.0)
    }

    pub fn mcc(&self) -> f64 {
        let (tp, fp, tn, fn_) = (self.tp as f64, self.fp as f64, self.tn as f64, self.fn_ as f64);
        let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        if den == 0.0 {
            0.0
        } else {
            (tp * tn - fp * fn_) / den
        }
    }

    /// Unweighted mean over both classes of per-class precision, recall and F1.
    pub fn macro_prf(&self) -> (f64, f64, f64) {
        let per_class = |tp: usize, fp: usize, fn_: usize| {
            let p = ratio(tp, tp + fp).unwrap_or(0.0);
            let r = ratio(tp, tp + fn_).unwrap_or(0.0);
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            (p, r, f)
        };
        let d = per_class(self.tp, self.fp, self.fn_);
        let b = per_class(self.tn, self.fn_, self.fp);
        ((d.0 + b.0) / 2.0, (d.1 + b.1) / 2.0, (d.2 + b.2) / 2.0)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn macro_prf(labels: &[Label], preds: &[Label]) -> (f64, f64, f64) {
    ConfusionCounts::from_pairs(labels, preds).macro_prf()
}

/// Rank-based ROC AUC; tied scores count one half. `None` when one class is missing.
pub fn roc_auc(labels: &[Label], scores: &[f64]) -> Option<f64> {
    assert_eq!(labels.len(), scores.len(), "labels and scores differ in length");
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks over tie groups
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|l| l.is_defective()).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let rank_sum: f64 = labels.iter().zip(&ranks).filter(|(l, _)| l.is_defective()).map(|(_, r)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Returns (AUC, FPR, MCC) for binary predictions.
pub fn auc_fpr_mcc(labels: &[Label], preds: &[Label]) -> (Option<f64>, f64, f64) {
    let scores: Vec<f64> = preds.iter().map(|p| p.bit() as f64).collect();
    let c = ConfusionCounts::from_pairs(labels, preds);
    (roc_auc(labels, &scores), c.fpr(), c.mcc())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardMetrics {
    pub n: usize,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub fpr: f64,
    pub mcc: f64,
}

impl StandardMetrics {
    pub fn compute(labels: &[Label], preds: &[Label]) -> Option<StandardMetrics> {
        if labels.is_empty() {
            return None;
        }
        let counts = ConfusionCounts::from_pairs(labels, preds);
        let (precision, recall, f1) = counts.macro_prf();
        let (auc, fpr, mcc) = auc_fpr_mcc(labels, preds);
        Some(StandardMetrics {
            n: labels.len(),
            counts,
            accuracy: counts.accuracy().unwrap_or(0.0),
            precision,
            recall,
            f1,
            auc,
            fpr,
            mcc,
        })
    }
}

/// Harmonic mean of two subset accuracies.
///
/// Both absent gives `None`. A single absent partner counts as 0, and a zero
/// denominator gives 0.
pub fn harmonic(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    if a.is_none() && b.is_none() {
        return None;
    }
    let (a, b) = (a.unwrap_or(0.0), b.unwrap_or(0.0));
    Some(if a + b == 0.0 { 0.0 } else { 2.0 * a * b / (a + b) })
}

/// Ground truth needed to score one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub id: String,
    pub subset: Subset,
    pub truth: Label,
}

impl From<&EvolutionRecord> for LabeledRecord {
    fn from(r: &EvolutionRecord) -> LabeledRecord {
        LabeledRecord { id: r.id().to_string(), subset: r.subset, truth: r.new_label() }
    }
}

/// One per-record prediction. `parse_path` is empty for baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: String,
    pub label: Option<Label>,
    pub confidence: Option<f64>,
    pub parse_path: Option<ParsePath>,
}

impl Prediction {
    pub fn is_failed(&self) -> bool {
        self.label.is_none()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_secs: f64,
    pub llm_calls: u64,
    pub llm_attempts: u64,
    pub llm_latency_secs: f64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub evaluated: usize,
    /// Records whose answer could not be parsed.
    pub excluded: usize,
    pub subset_counts: BTreeMap<Subset, usize>,
    /// `None` for an empty subset.
    pub subset_accuracy: BTreeMap<Subset, Option<f64>>,
    pub hmb: Option<f64>,
    pub hmd: Option<f64>,
    pub total: Option<StandardMetrics>,
    pub changed: Option<StandardMetrics>,
    pub unchanged: Option<StandardMetrics>,
    pub timing: Timing,
}

/// Scores the predictions against the records they name.
///
/// Records without a prediction are not part of the population; predictions
/// for unknown records are a data error.
pub fn evaluate(records: &[LabeledRecord], preds: &[Prediction], method: &str) -> Result<EvaluationReport> {
    let by_id: BTreeMap<&str, &LabeledRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut excluded = 0;
    let mut scored: Vec<(&LabeledRecord, Label)> = Vec::new();
    for p in preds {
        let rec = by_id
            .get(p.record_id.as_str())
            .ok_or_else(|| Error::Data(format!("prediction for unknown record `{}`", p.record_id)))?;
        match p.label {
            Some(l) => scored.push((rec, l)),
            None => excluded += 1,
        }
    }

    let metrics_where = |keep: &dyn Fn(Subset) -> bool| {
        let (y, p): (Vec<Label>, Vec<Label>) =
            scored.iter().filter(|(r, _)| keep(r.subset)).map(|(r, p)| (r.truth, *p)).unzip();
        StandardMetrics::compute(&y, &p)
    };

    let mut subset_counts = BTreeMap::new();
    let mut subset_accuracy = BTreeMap::new();
    for s in Subset::TRANSITIONS {
        let hits: Vec<bool> = scored.iter().filter(|(r, _)| r.subset == s).map(|(r, p)| r.truth == *p).collect();
        subset_counts.insert(s, hits.len());
        subset_accuracy.insert(s, ratio(hits.iter().filter(|&&h| h).count(), hits.len()));
    }
    let acc = |s: Subset| subset_accuracy[&s];

    Ok(EvaluationReport {
        method: method.to_string(),
        evaluated: scored.len(),
        excluded,
        hmb: harmonic(acc(Subset::B00), acc(Subset::D01)),
        hmd: harmonic(acc(Subset::B10), acc(Subset::D11)),
        subset_counts,
        subset_accuracy,
        total: metrics_where(&|_| true),
        changed: metrics_where(&Subset::is_status_changed),
        unchanged: metrics_where(&Subset::is_status_unchanged),
        timing: Timing::default(),
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn opt_csv(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

impl EvaluationReport {
    pub const CSV_HEADER: &'static str = "method,evaluated,excluded,n_b00,n_b10,n_d01,n_d11,acc_b00,acc_b10,acc_d01,acc_d11,hmb,hmd,precision,recall,f1,auc,fpr,mcc,changed_f1,unchanged_f1,wall_secs,llm_calls,llm_attempts,total_tokens";

    pub fn csv_row(&self) -> String {
        let n = |s| self.subset_counts.get(&s).copied().unwrap_or(0).to_string();
        let a = |s| opt_csv(self.subset_accuracy.get(&s).copied().flatten());
        let t = self.total.as_ref();
        let fields = [
            self.method.clone(),
            self.evaluated.to_string(),
            self.excluded.to_string(),
            n(Subset::B00),
            n(Subset::B10),
            n(Subset::D01),
            n(Subset::D11),
            a(Subset::B00),
            a(Subset::B10),
            a(Subset::D01),
            a(Subset::D11),
            opt_csv(self.hmb),
            opt_csv(self.hmd),
            opt_csv(t.map(|m| m.precision)),
            opt_csv(t.map(|m| m.recall)),
            opt_csv(t.map(|m| m.f1)),
            opt_csv(t.and_then(|m| m.auc)),
            opt_csv(t.map(|m| m.fpr)),
            opt_csv(t.map(|m| m.mcc)),
            opt_csv(self.changed.map(|m| m.f1)),
            opt_csv(self.unchanged.map(|m| m.f1)),
            format!("{:.3}", self.timing.wall_secs),
            self.timing.llm_calls.to_string(),
            self.timing.llm_attempts.to_string(),
            self.timing.total_tokens.to_string(),
        ];
        fields.join(",")
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }

    /// Aligned text tables: subset accuracies with HMB/HMD, then P/R/F1 per population.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let a = |s| opt(self.subset_accuracy.get(&s).copied().flatten());
        let _ = writeln!(out, "method: {}   evaluated: {}   excluded: {}", self.method, self.evaluated, self.excluded);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<8}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}", "", "B00", "D01", "HMB", "B10", "D11", "HMD");
        let _ = writeln!(
            out,
            "{:<8}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}",
            "acc",
            a(Subset::B00),
            a(Subset::D01),
            opt(self.hmb),
            a(Subset::B10),
            a(Subset::D11),
            opt(self.hmd)
        );
        let n = |s| self.subset_counts.get(&s).copied().unwrap_or(0).to_string();
        let _ = writeln!(
            out,
            "{:<8}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}",
            "n",
            n(Subset::B00),
            n(Subset::D01),
            "",
            n(Subset::B10),
            n(Subset::D11),
            ""
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<11}{:>6}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}",
            "population", "n", "P", "R", "F1", "AUC", "FPR", "MCC"
        );
        for (name, m) in [("total", &self.total), ("changed", &self.changed), ("unchanged", &self.unchanged)] {
            match m {
                Some(m) => {
                    let _ = writeln!(
                        out,
                        "{:<11}{:>6}{:>8.4}{:>8.4}{:>8.4}{:>8}{:>8.4}{:>8.4}",
                        name,
                        m.n,
                        m.precision,
                        m.recall,
                        m.f1,
                        opt(m.auc),
                        m.fpr,
                        m.mcc
                    );
                }
                None => {
                    let _ = writeln!(out, "{name:<11}{:>6}", 0);
                }
            }
        }
        if self.timing.llm_calls > 0 || self.timing.wall_secs > 0.0 {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "wall {:.2}s   llm calls {}   attempts {}   llm latency {:.2}s   tokens {}",
                self.timing.wall_secs,
                self.timing.llm_calls,
                self.timing.llm_attempts,
                self.timing.llm_latency_secs,
                self.timing.total_tokens
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Benign as B, Defective as D};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn expand(c: ConfusionCounts) -> (Vec<Label>, Vec<Label>) {
        let mut y = Vec::new();
        let mut p = Vec::new();
        for (n, yl, pl) in [(c.tp, D, D), (c.fp, B, D), (c.tn, B, B), (c.fn_, D, B)] {
            y.extend(std::iter::repeat_n(yl, n));
            p.extend(std::iter::repeat_n(pl, n));
        }
        (y, p)
    }

    #[test]
    fn all_correct() {
        assert_eq!(macro_prf(&[D, B, D], &[D, B, D]), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_computed_macro_f1() {
        let (y, p) = expand(ConfusionCounts { tp: 2, fp: 1, tn: 6, fn_: 1 });
        let (_, _, f1) = macro_prf(&y, &p);
        // (2/3 + 6/7) / 2
        assert!(close(f1, 0.7619, 5e-5), "{f1}");
    }

    #[test]
    fn lucene_naive_row() {
        let (y, p) = expand(ConfusionCounts { tp: 48, fp: 66, tn: 1196, fn_: 27 });
        let m = StandardMetrics::compute(&y, &p).unwrap();
        assert!(close(m.precision, 0.6995, 5e-5), "{}", m.precision);
        assert!(close(m.recall, 0.7939, 5e-5), "{}", m.recall);
        assert!(close(m.f1, 0.7353, 5e-5), "{}", m.f1);
        assert!(close(m.auc.unwrap(), 0.7939, 5e-5));
        assert!(close(m.fpr, 0.0523, 5e-5), "{}", m.fpr);
        assert!(close(m.mcc, 0.4842, 5e-5), "{}", m.mcc);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[B, B, D, D], &[0.1, 0.2, 0.8, 0.9]), Some(1.0));
        assert_eq!(roc_auc(&[B, D], &[0.5, 0.5]), Some(0.5));
        assert_eq!(roc_auc(&[D, D], &[0.5, 0.1]), None);
    }

    #[test]
    fn degenerate_counts() {
        let c = ConfusionCounts { tp: 0, fp: 0, tn: 5, fn_: 0 };
        assert_eq!(c.mcc(), 0.0);
        assert_eq!(c.fpr(), 0.0);
        assert_eq!(c.macro_prf(), (0.5, 0.5, 0.5));
    }

    #[test]
    fn harmonic_rules() {
        let hmb = harmonic(Some(0.71), Some(0.52)).unwrap();
        assert!(close(hmb, 0.60, 0.005), "{hmb}");
        let hmd = harmonic(Some(0.18), Some(0.80)).unwrap();
        assert!(close(hmd, 0.29, 0.01), "{hmd}");
        assert_eq!(harmonic(Some(0.9), Some(0.0)), Some(0.0));
        assert_eq!(harmonic(Some(0.9), None), Some(0.0));
        assert_eq!(harmonic(None, None), None);
        assert_eq!(harmonic(Some(0.0), Some(0.0)), Some(0.0));
    }

    fn rec(id: &str, subset: Subset) -> LabeledRecord {
        let truth = match subset {
            Subset::D01 | Subset::D11 => D,
            _ => B,
        };
        LabeledRecord { id: id.into(), subset, truth }
    }

    fn pred(id: &str, label: Option<Label>) -> Prediction {
        Prediction { record_id: id.into(), label, confidence: None, parse_path: None }
    }

    #[test]
    fn constant_benign_subset_accuracy() {
        let recs = vec![rec("a", Subset::B00), rec("b", Subset::B10), rec("c", Subset::D01), rec("d", Subset::D11)];
        let preds: Vec<Prediction> = recs.iter().map(|r| pred(&r.id, Some(B))).collect();
        let r = evaluate(&recs, &preds, "M5").unwrap();
        assert_eq!(r.subset_accuracy[&Subset::B00], Some(1.0));
        assert_eq!(r.subset_accuracy[&Subset::B10], Some(1.0));
        assert_eq!(r.subset_accuracy[&Subset::D01], Some(0.0));
        assert_eq!(r.subset_accuracy[&Subset::D11], Some(0.0));
        assert_eq!(r.hmb, Some(0.0));
        assert_eq!(r.changed.unwrap().n, 2);
        assert_eq!(r.unchanged.unwrap().n, 2);
    }

    #[test]
    fn failed_parses_are_excluded_and_counted() {
        let recs = vec![rec("a", Subset::B00), rec("b", Subset::B00)];
        let preds = vec![pred("a", Some(B)), pred("b", None)];
        let r = evaluate(&recs, &preds, "debate").unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.evaluated, 1);
        assert_eq!(r.subset_accuracy[&Subset::B10], None);
        assert_eq!(r.hmd, None);
        assert!(r.changed.is_none());
        assert!(evaluate(&recs, &[pred("zzz", Some(B))], "x").is_err());
    }

    #[test]
    fn report_renders() {
        let recs = vec![rec("a", Subset::B00), rec("b", Subset::D01)];
        let preds = vec![pred("a", Some(B)), pred("b", Some(D))];
        let r = evaluate(&recs, &preds, "M0").unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
        assert!(r.to_text().contains("HMB"));
    }
}
