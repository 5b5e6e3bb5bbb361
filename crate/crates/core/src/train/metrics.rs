use std::io::Write;

/// Bag-level classification summary.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Mean binary cross-entropy.
    pub loss: f64,
}

impl Metrics {
    /// Thresholds each probability at 0.5 (inclusive, toward class 1).
    pub fn from_predictions(probs: &[f64], labels: &[u8], losses: &[f64]) -> Metrics {
        let mut m = Metrics::default();
        for (&p, &y) in probs.iter().zip(labels) {
            match (predict_class(p), y) {
                (1, 1) => m.tp += 1,
                (0, 0) => m.tn += 1,
                (1, _) => m.fp += 1,
                _ => m.fn_ += 1,
            }
        }
        let total = m.total();
        if total > 0 {
            m.accuracy = (m.tp + m.tn) as f64 / total as f64;
            m.loss = losses.iter().sum::<f64>() / total as f64;
        }
        m
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn predict_class(p: f64) -> u8 {
    u8::from(p >= 0.5)
}

/// `split,accuracy,tp,tn,fp,fn,loss`.
pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[(&str, Metrics)]) -> std::io::Result<()> {
    writeln!(w, "split,accuracy,tp,tn,fp,fn,loss")?;
    for (name, m) in rows {
        writeln!(
            w,
            "{name},{:.6},{},{},{},{},{:.6}",
            m.accuracy, m.tp, m.tn, m.fp, m.fn_, m.loss
        )?;
    }
    Ok(())
}

/// Area under the ROC curve via the rank-sum statistic, ties averaged.
/// `None` if either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64 * avg_rank;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}
