use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{normalize, DenseMatrix, RngState};

fn unit_rows(m: &DenseMatrix) -> Result<DenseMatrix> {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let u = normalize(m.row(i))?;
        out.row_mut(i).copy_from_slice(&u);
    }
    Ok(out)
}

fn check_inputs(zq: &DenseMatrix, gallery: &DenseMatrix, gt: &[usize]) -> Result<()> {
    if gallery.rows() == 0 {
        return Err(Error::input("gallery is empty"));
    }
    if zq.cols() != gallery.cols() {
        return Err(Error::shape(format!(
            "queries have dim {}, gallery {}",
            zq.cols(),
            gallery.cols()
        )));
    }
    if gt.len() != zq.rows() {
        return Err(Error::shape(format!(
            "{} ground-truth indices for {} queries",
            gt.len(),
            zq.rows()
        )));
    }
    if let Some(&bad) = gt.iter().find(|&&g| g >= gallery.rows()) {
        return Err(Error::input(format!(
            "ground-truth index {bad} outside the gallery"
        )));
    }
    Ok(())
}

/// 1-based rank of `gt` among `candidates` under descending score with ties
/// going to the lower gallery index.
fn rank_of(scores: &[f64], gt: usize, candidates: impl Iterator<Item = usize>) -> usize {
    let s = scores[gt];
    1 + candidates
        .filter(|&j| j != gt && (scores[j] > s || (scores[j] == s && j < gt)))
        .count()
}

fn cosine_scores(zq: &DenseMatrix, gallery: &DenseMatrix) -> Result<DenseMatrix> {
    unit_rows(zq)?.matmul(&unit_rows(gallery)?.transpose())
}

fn recall_from_ranks(ranks: &[usize], ks: &[usize]) -> BTreeMap<usize, f64> {
    let n = ranks.len().max(1) as f64;
    ks.iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect()
}

/// Fraction of queries whose ground-truth gallery item ranks within the top
/// `k` by cosine similarity, for each `k`.
pub fn recall_at_k(
    zq: &DenseMatrix,
    gallery: &DenseMatrix,
    gt: &[usize],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    check_inputs(zq, gallery, gt)?;
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > gallery.rows()) {
        return Err(Error::config(format!(
            "k = {k} outside 1..={}",
            gallery.rows()
        )));
    }
    let s = cosine_scores(zq, gallery)?;
    let ranks: Vec<usize> = gt
        .iter()
        .enumerate()
        .map(|(q, &g)| rank_of(s.row(q), g, 0..gallery.rows()))
        .collect();
    Ok(recall_from_ranks(&ranks, ks))
}

/// Recall against a small candidate set: the ground truth plus
/// `m_distractors` distinct gallery items drawn for query `q` from
/// `rng.derive(q)`.
pub fn subset_recall(
    zq: &DenseMatrix,
    gallery: &DenseMatrix,
    gt: &[usize],
    m_distractors: usize,
    ks: &[usize],
    rng: RngState,
) -> Result<BTreeMap<usize, f64>> {
    check_inputs(zq, gallery, gt)?;
    let n = gallery.rows();
    if m_distractors + 1 > n {
        return Err(Error::config(format!(
            "{m_distractors} distractors need a gallery larger than {n}"
        )));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > m_distractors + 1) {
        return Err(Error::config(format!(
            "k = {k} outside 1..={}",
            m_distractors + 1
        )));
    }
    let s = cosine_scores(zq, gallery)?;
    let ranks: Vec<usize> = gt
        .iter()
        .enumerate()
        .map(|(q, &g)| {
            let picks = index::sample(&mut rng.derive(q as u64).generator(), n - 1, m_distractors);
            let cands = picks
                .into_iter()
                .map(move |j| if j >= g { j + 1 } else { j });
            rank_of(s.row(q), g, cands)
        })
        .collect();
    Ok(recall_from_ranks(&ranks, ks))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub c_hat: Vec<f64>,
    /// True where the triplet is clean.
    pub clean: Vec<bool>,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub accuracy: f64,
    /// Precision and recall of the clean class; 0 when undefined.
    pub precision: f64,
    pub recall: f64,
    pub auc: Option<f64>,
}

/// Area under the ROC curve via the Mann–Whitney statistic with average
/// ranks, i.e. ties count one half.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let mut end = k;
        while end + 1 < idx.len() && scores[idx[end + 1]] == scores[idx[k]] {
            end += 1;
        }
        let avg_rank = (k + end) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * idx[k..=end].iter().filter(|&&i| positive[i]).count() as f64;
        k = end + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Accuracy, clean-class precision/recall (ĉ above the threshold counts as
/// clean) and AUC.
pub fn detection_metrics(det: &DetectionResult) -> Result<DetectionMetrics> {
    if det.c_hat.len() != det.clean.len() {
        return Err(Error::shape("confidences and labels differ in length"));
    }
    if det.c_hat.is_empty() {
        return Err(Error::input("no samples to score"));
    }
    if det.c_hat.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::input("confidences must lie in [0, 1]"));
    }
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&c, &y) in det.c_hat.iter().zip(&det.clean) {
        match (c > det.threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(DetectionMetrics {
        accuracy: ratio(tp + tn, det.c_hat.len()),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
        auc: auc(&det.c_hat, &det.clean),
    })
}
