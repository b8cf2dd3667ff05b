//! In-domain accuracy, OOS recall, their sum (the joint score), and threshold
//! calibration by sweeping observed confidences.

pub mod report;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::classify::{Scored, Threshold, REJECT_ALL};
use crate::corpus::Label;
use crate::error::{Error, Result};

/// Model output for one labeled utterance, before any threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredInstance {
    pub confidence: f64,
    pub predicted_label: String,
    pub gold: Label,
}

impl ScoredInstance {
    pub fn new(confidence: f64, predicted_label: impl Into<String>, gold: Label) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::validation(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(ScoredInstance {
            confidence,
            predicted_label: predicted_label.into(),
            gold,
        })
    }

    pub fn from_scored(scored: &Scored, gold: Label) -> Result<Self> {
        ScoredInstance::new(scored.confidence, scored.predicted_label.clone(), gold)
    }

    fn in_domain_correct(&self) -> bool {
        self.gold.intent() == Some(self.predicted_label.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub c_in: usize,
    pub n_in: usize,
    pub c_oos: usize,
    pub n_oos: usize,
    pub acc_in: f64,
    pub r_oos: f64,
    pub joint: f64,
    /// `(C_in + C_oos) / (N_in + N_oos)`. Reported only; never used to pick a
    /// threshold.
    pub overall_acc: f64,
}

impl Metrics {
    pub fn from_counts(c_in: usize, n_in: usize, c_oos: usize, n_oos: usize) -> Result<Self> {
        if n_in == 0 || n_oos == 0 {
            return Err(Error::validation(format!(
                "joint score needs both populations (N_in = {n_in}, N_oos = {n_oos})"
            )));
        }
        assert!(c_in <= n_in && c_oos <= n_oos);
        let acc_in = c_in as f64 / n_in as f64;
        let r_oos = c_oos as f64 / n_oos as f64;
        Ok(Metrics {
            c_in,
            n_in,
            c_oos,
            n_oos,
            acc_in,
            r_oos,
            joint: acc_in + r_oos,
            overall_acc: (c_in + c_oos) as f64 / (n_in + n_oos) as f64,
        })
    }

    /// Exact comparison of joint scores via cross-multiplied counts, immune to
    /// rounding in `acc_in + r_oos`.
    pub fn cmp_joint(&self, other: &Metrics) -> Ordering {
        let lhs = (self.c_in as u128 * self.n_oos as u128 + self.c_oos as u128 * self.n_in as u128)
            * (other.n_in as u128 * other.n_oos as u128);
        let rhs = (other.c_in as u128 * other.n_oos as u128 + other.c_oos as u128 * other.n_in as u128)
            * (self.n_in as u128 * self.n_oos as u128);
        lhs.cmp(&rhs)
    }
}

fn populations(instances: &[ScoredInstance]) -> Result<(usize, usize)> {
    let n_oos = instances.iter().filter(|i| i.gold.is_oos()).count();
    let n_in = instances.len() - n_oos;
    if let Some(bad) = instances.iter().find(|i| !(0.0..=1.0).contains(&i.confidence)) {
        return Err(Error::validation(format!("confidence {} outside [0, 1]", bad.confidence)));
    }
    if n_in == 0 || n_oos == 0 {
        return Err(Error::validation(format!(
            "joint score needs both populations (N_in = {n_in}, N_oos = {n_oos})"
        )));
    }
    Ok((n_in, n_oos))
}

/// Metrics at threshold `t`: in-domain instances count as correct when
/// accepted (`confidence >= t`) with the right label; OOS instances count as
/// correct when rejected.
pub fn compute_metrics(instances: &[ScoredInstance], t: Threshold) -> Result<Metrics> {
    let (n_in, n_oos) = populations(instances)?;
    let mut c_in = 0;
    let mut c_oos = 0;
    for i in instances {
        let accepted = t.accepts(i.confidence);
        if i.gold.is_oos() {
            c_oos += usize::from(!accepted);
        } else {
            c_in += usize::from(accepted && i.in_domain_correct());
        }
    }
    Metrics::from_counts(c_in, n_in, c_oos, n_oos)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub threshold: Threshold,
    pub joint_at_threshold: f64,
    pub metrics: Metrics,
    /// One point per candidate, ascending by threshold.
    pub curve: Vec<CurvePoint>,
}

/// Choose the threshold maximizing the joint score.
///
/// The joint score only changes where `t` crosses an observed confidence, so
/// the candidates are the distinct confidences plus 0 and the reject-all
/// sentinel. Among maximizers the largest candidate wins, which favors OOS
/// recall.
pub fn calibrate_threshold(instances: &[ScoredInstance]) -> Result<CalibrationResult> {
    let (n_in, n_oos) = populations(instances)?;

    // (confidence, is_oos, in-domain correct) sorted by confidence.
    let mut sorted: Vec<(f64, bool, bool)> = instances
        .iter()
        .map(|i| (i.confidence, i.gold.is_oos(), i.in_domain_correct()))
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut candidates: Vec<f64> = Vec::with_capacity(sorted.len() + 2);
    candidates.push(0.0);
    for &(c, _, _) in &sorted {
        if *candidates.last().expect("non-empty") != c {
            candidates.push(c);
        }
    }
    candidates.push(REJECT_ALL);

    // Sweep upward. Instances below the current candidate are rejected.
    let correct_total = sorted.iter().filter(|s| !s.1 && s.2).count();
    let mut below = 0;
    let mut correct_below = 0;
    let mut oos_below = 0;
    let mut curve = Vec::with_capacity(candidates.len());
    for &t in &candidates {
        while below < sorted.len() && sorted[below].0 < t {
            let (_, is_oos, correct) = sorted[below];
            if is_oos {
                oos_below += 1;
            } else if correct {
                correct_below += 1;
            }
            below += 1;
        }
        let metrics = Metrics::from_counts(correct_total - correct_below, n_in, oos_below, n_oos)?;
        curve.push(CurvePoint { threshold: t, metrics });
    }

    let best = curve
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.metrics.cmp_joint(&b.metrics).then(ia.cmp(ib)))
        .map(|(i, _)| i)
        .expect("curve has at least two points");
    let point = curve[best];
    Ok(CalibrationResult {
        threshold: Threshold::new(point.threshold)?,
        joint_at_threshold: point.metrics.joint,
        metrics: point.metrics,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(c: f64, pred: &str, gold: &str) -> ScoredInstance {
        ScoredInstance::new(c, pred, Label::parse(gold)).unwrap()
    }

    fn t(v: f64) -> Threshold {
        Threshold::new(v).unwrap()
    }

    #[test]
    fn hand_case() {
        let xs = vec![
            inst(0.9, "a", "a"),
            inst(0.8, "b", "b"),
            inst(0.7, "a", "a"),
            inst(0.2, "a", "a"),
            inst(0.1, "a", "oos"),
            inst(0.9, "a", "oos"),
        ];
        let m = compute_metrics(&xs, t(0.5)).unwrap();
        assert_eq!((m.acc_in, m.r_oos, m.joint), (0.75, 0.5, 1.25));
        assert_eq!(m.overall_acc, 4.0 / 6.0);
    }

    #[test]
    fn boundaries() {
        let xs = vec![inst(0.4, "a", "a"), inst(0.9, "b", "b"), inst(0.3, "a", "oos")];
        let m = compute_metrics(&xs, t(0.0)).unwrap();
        assert_eq!((m.acc_in, m.r_oos), (1.0, 0.0));
        let m = compute_metrics(&xs, t(0.9f64.next_up())).unwrap();
        assert_eq!((m.acc_in, m.r_oos, m.joint), (0.0, 1.0, 1.0));
        // Equality counts as accepted.
        let m = compute_metrics(&xs, t(0.4)).unwrap();
        assert_eq!(m.c_in, 2);
    }

    #[test]
    fn wrong_label_never_counts() {
        let xs = vec![inst(0.9, "b", "a"), inst(0.1, "a", "oos")];
        assert_eq!(compute_metrics(&xs, t(0.0)).unwrap().c_in, 0);
    }

    #[test]
    fn needs_both_populations() {
        assert!(compute_metrics(&[inst(0.5, "a", "a")], t(0.5)).is_err());
        assert!(calibrate_threshold(&[inst(0.5, "a", "oos")]).is_err());
        assert!(calibrate_threshold(&[]).is_err());
    }

    #[test]
    fn separable_case_picks_largest() {
        let xs = vec![inst(0.9, "a", "a"), inst(0.8, "b", "b"), inst(0.3, "a", "oos")];
        let cal = calibrate_threshold(&xs).unwrap();
        assert_eq!(cal.threshold.value(), 0.8);
        assert_eq!(cal.joint_at_threshold, 2.0);
    }

    #[test]
    fn all_equal_confidences_tie_to_sentinel() {
        let xs = vec![inst(0.7, "a", "a"), inst(0.7, "b", "b"), inst(0.7, "a", "oos")];
        let cal = calibrate_threshold(&xs).unwrap();
        let ts: Vec<f64> = cal.curve.iter().map(|p| p.threshold).collect();
        assert_eq!(ts, vec![0.0, 0.7, REJECT_ALL]);
        // Exhaustive: every candidate scores joint 1.
        for p in &cal.curve {
            assert_eq!(p.metrics.joint, 1.0);
        }
        assert_eq!(cal.threshold.value(), REJECT_ALL);
    }

    #[test]
    fn zero_confidence_candidate_not_duplicated() {
        let xs = vec![inst(0.0, "a", "a"), inst(0.5, "a", "oos")];
        let cal = calibrate_threshold(&xs).unwrap();
        assert_eq!(cal.curve.len(), 3);
    }

    #[test]
    fn cmp_joint_is_exact() {
        let a = Metrics::from_counts(1, 3, 2, 3).unwrap();
        let b = Metrics::from_counts(2, 3, 1, 3).unwrap();
        assert_eq!(a.cmp_joint(&b), Ordering::Equal);
        let c = Metrics::from_counts(2, 3, 2, 3).unwrap();
        assert_eq!(c.cmp_joint(&a), Ordering::Greater);
    }
}
