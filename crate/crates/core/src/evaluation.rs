//! Performance scores, Tug-of-War, likelihood-ratio membership inference and
//! the distance-binned hardness / drop analyses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierState;
use crate::data::{Batch, Dataset, TaskKind, UnlearningRequest};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Likelihoods below this are clamped before forming ratios.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

/// Average precision of one attribute: mean over positives of the precision
/// at that positive's rank. Scores are ranked descending; ties keep input
/// order. `None` when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// mAP over attributes (multi-label) or top-1 accuracy (multi-class).
pub fn score_logits(logits: &Matrix, targets: &Matrix, kind: TaskKind) -> Result<f64> {
    if logits.rows == 0 {
        return Err(Error::Metric("empty dataset".into()));
    }
    if logits.rows != targets.rows || logits.cols != targets.cols {
        return Err(Error::Dimension("logits and targets disagree".into()));
    }
    match kind {
        TaskKind::MultiLabel => {
            let mut total = 0.0;
            let mut counted = 0usize;
            let mut col = Vec::with_capacity(logits.rows);
            let mut lab = Vec::with_capacity(logits.rows);
            for k in 0..logits.cols {
                col.clear();
                lab.clear();
                for r in 0..logits.rows {
                    col.push(logits.data[r * logits.cols + k]);
                    lab.push(targets.data[r * targets.cols + k] > 0.5);
                }
                if let Some(ap) = average_precision(&col, &lab) {
                    total += ap;
                    counted += 1;
                }
            }
            if counted == 0 {
                return Err(Error::Metric("no attribute has a positive sample".into()));
            }
            Ok(total / counted as f64)
        }
        TaskKind::MultiClass => {
            let correct = (0..logits.rows)
                .filter(|&r| crate::data::argmax(logits.row(r)) == crate::data::argmax(targets.row(r)))
                .count();
            Ok(correct as f64 / logits.rows as f64)
        }
    }
}

pub fn performance_on_batch(state: &ClassifierState, batch: &Batch) -> Result<f64> {
    let logits = state.logits(&batch.inputs)?;
    score_logits(&logits, &batch.targets, state.arch.task_kind)
}

pub fn performance_score(state: &ClassifierState, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Metric("empty dataset".into()));
    }
    performance_on_batch(state, &data.to_batch())
}

/// Scores of one model on the retain, forget and test splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfTriple {
    pub retain: f64,
    pub forget: f64,
    pub test: f64,
}

impl PerfTriple {
    fn validate(&self) -> Result<()> {
        for v in [self.retain, self.forget, self.test] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Metric(format!("score {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Tug-of-War: product over splits of one minus the absolute score gap.
pub fn tow(unlearned: &PerfTriple, retrained: &PerfTriple) -> Result<f64> {
    unlearned.validate()?;
    retrained.validate()?;
    Ok((1.0 - (unlearned.retain - retrained.retain).abs())
        * (1.0 - (unlearned.forget - retrained.forget).abs())
        * (1.0 - (unlearned.test - retrained.test).abs()))
}

/// `ln Pr(labels | model)` per sample, floored at `ln 1e-12`.
pub fn log_likelihoods(state: &ClassifierState, batch: &Batch) -> Result<Vec<f64>> {
    let logits = state.logits(&batch.inputs)?;
    let c = logits.cols;
    let floor = LIKELIHOOD_FLOOR.ln();
    Ok((0..logits.rows)
        .map(|r| {
            let z = logits.row(r);
            let y = batch.targets.row(r);
            let ll = match state.arch.task_kind {
                TaskKind::MultiLabel => z
                    .iter()
                    .zip(y)
                    .map(|(&z, &y)| {
                        // ln σ(±z) = -softplus(∓z)
                        let signed = if y > 0.5 { z } else { -z };
                        -((-signed).max(0.0) + (-signed.abs()).exp().ln_1p())
                    })
                    .sum::<f64>(),
                TaskKind::MultiClass => {
                    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    z[crate::data::argmax(y)] - lse
                }
            };
            debug_assert_eq!(y.len(), c);
            ll.max(floor)
        })
        .collect())
}

/// Log likelihood ratio target/reference per sample.
fn log_ratios(target: &ClassifierState, reference: &ClassifierState, data: &Dataset) -> Result<Vec<f64>> {
    let batch = data.to_batch();
    let t = log_likelihoods(target, &batch)?;
    let r = log_likelihoods(reference, &batch)?;
    Ok(t.iter().zip(&r).map(|(a, b)| a - b).collect())
}

/// Sorted population log-ratios, reused across every scored sample.
struct Population {
    sorted: Vec<f64>,
}

impl Population {
    fn new(mut ratios: Vec<f64>) -> Self {
        ratios.sort_by(|a, b| a.partial_cmp(b).expect("finite log ratios"));
        Self { sorted: ratios }
    }

    /// Fraction of z with LR(x, z) ≥ γ, i.e. `r_z ≤ r_x − ln γ`.
    fn score(&self, r_x: f64, ln_gamma: f64) -> f64 {
        let cut = r_x - ln_gamma;
        self.sorted.partition_point(|&r| r <= cut) as f64 / self.sorted.len() as f64
    }
}

fn check_gamma(gamma: f64) -> Result<f64> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    Ok(gamma.ln())
}

/// Relative membership score of every sample in `samples` against `population`.
pub fn mia_scores(
    target: &ClassifierState,
    reference: &ClassifierState,
    samples: &Dataset,
    population: &Dataset,
    gamma: f64,
) -> Result<Vec<f64>> {
    let ln_gamma = check_gamma(gamma)?;
    if population.is_empty() {
        return Err(Error::Metric("empty MIA population".into()));
    }
    let pop = Population::new(log_ratios(target, reference, population)?);
    let rx = log_ratios(target, reference, samples)?;
    Ok(rx.into_iter().map(|r| pop.score(r, ln_gamma)).collect())
}

/// Score of a single sample `x`; the population must not contain `x`.
pub fn mia_score(
    target: &ClassifierState,
    reference: &ClassifierState,
    x: &crate::data::Sample,
    population: &Dataset,
    gamma: f64,
) -> Result<f64> {
    if population.samples().iter().any(|z| z.sample_id == x.sample_id) {
        return Err(Error::Metric(format!("sample {} is part of the population", x.sample_id)));
    }
    let single = Dataset::new(population.schema(), vec![x.clone()])?;
    Ok(mia_scores(target, reference, &single, population, gamma)?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiaConfig {
    pub gamma: f64,
    pub target_fpr: f64,
}

impl Default for MiaConfig {
    fn default() -> Self {
        Self { gamma: 1.0, target_fpr: 1e-4 }
    }
}

impl MiaConfig {
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if !(self.target_fpr > 0.0 && self.target_fpr <= 1.0) {
            return Err(Error::Config("target_fpr must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Fraction of `scores` at or above `beta`.
pub fn rate_at(scores: &[f64], beta: f64) -> f64 {
    scores.iter().filter(|&&s| s >= beta).count() as f64 / scores.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub beta: f64,
    /// Too few negatives to resolve the target rate; β sits just above the max.
    pub underpowered: bool,
}

/// Smallest β (in floating point) with `rate_at(negatives, β) ≤ target_fpr`.
pub fn threshold_at_fpr(negatives: &[f64], target_fpr: f64) -> Result<Threshold> {
    if negatives.is_empty() {
        return Err(Error::Metric("no nonmember scores".into()));
    }
    if negatives.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("nonmember score".into()));
    }
    let n = negatives.len();
    let underpowered = (n as f64) < (1.0 / target_fpr).ceil();
    let mut sorted = negatives.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    // Largest number of false positives the target rate allows.
    let mut allowed = ((target_fpr * n as f64).floor() as usize).min(n);
    while allowed > 0 && allowed as f64 / n as f64 > target_fpr {
        allowed -= 1;
    }
    while allowed < n && (allowed + 1) as f64 / n as f64 <= target_fpr {
        allowed += 1;
    }
    let beta = if allowed >= n {
        sorted[n - 1]
    } else {
        // Every score strictly above the (allowed+1)-th largest may pass;
        // ties at that value would push the rate over the target.
        sorted[allowed].next_up()
    };
    Ok(Threshold { beta, underpowered })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiaOutcome {
    pub tpr: f64,
    pub beta: f64,
    pub underpowered: bool,
    pub member_scores: Vec<f64>,
    pub nonmember_scores: Vec<f64>,
}

/// Thresholded membership attack: β calibrated on nonmembers at the target
/// false-positive rate, TPR measured on members.
pub fn mia_attack(
    target: &ClassifierState,
    reference: &ClassifierState,
    members: &Dataset,
    nonmembers: &Dataset,
    population: &Dataset,
    cfg: &MiaConfig,
) -> Result<MiaOutcome> {
    cfg.validate()?;
    if members.is_empty() {
        return Err(Error::Metric("no member samples".into()));
    }
    let member_scores = mia_scores(target, reference, members, population, cfg.gamma)?;
    let nonmember_scores = mia_scores(target, reference, nonmembers, population, cfg.gamma)?;
    let outcome = attack_from_scores(member_scores, nonmember_scores, cfg.target_fpr)?;
    if outcome.underpowered {
        log::warn!(
            "only {} nonmembers for a target FPR of {}; threshold placed above the largest nonmember score",
            outcome.nonmember_scores.len(),
            cfg.target_fpr
        );
    }
    Ok(outcome)
}

pub fn attack_from_scores(member_scores: Vec<f64>, nonmember_scores: Vec<f64>, target_fpr: f64) -> Result<MiaOutcome> {
    let th = threshold_at_fpr(&nonmember_scores, target_fpr)?;
    Ok(MiaOutcome {
        tpr: rate_at(&member_scores, th.beta),
        beta: th.beta,
        underpowered: th.underpowered,
        member_scores,
        nonmember_scores,
    })
}

/// Per-identity diagnostic point used by the binned analyses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityPoint {
    pub identity: u32,
    pub distance: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub mean_gap: f64,
    pub count: usize,
}

/// Equal-width distance bins over `[min, max]`; only occupied bins are
/// returned, ordered by distance.
pub fn bin_points(points: &[IdentityPoint], num_bins: usize) -> Result<Vec<BinRow>> {
    if num_bins == 0 {
        return Err(Error::Config("num_bins must be positive".into()));
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let lo = points.iter().map(|p| p.distance).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.distance).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / num_bins as f64;
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for p in points {
        let b = if width > 0.0 { (((p.distance - lo) / width) as usize).min(num_bins - 1) } else { 0 };
        let e = acc.entry(b).or_insert((0.0, 0));
        e.0 += p.gap;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(bin, (sum, count))| BinRow {
            bin,
            lo: lo + width * bin as f64,
            hi: if width > 0.0 { lo + width * (bin + 1) as f64 } else { hi },
            mean_gap: sum / count as f64,
            count,
        })
        .collect())
}

fn centroid(m: &Matrix) -> Vec<f64> {
    let mut c = vec![0.0; m.cols];
    for r in 0..m.rows {
        for (a, v) in c.iter_mut().zip(m.row(r)) {
            *a += v;
        }
    }
    c.iter_mut().for_each(|v| *v /= m.rows as f64);
    c
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn by_identity(data: &Dataset) -> BTreeMap<u32, Dataset> {
    data.identity_index().keys().map(|&id| (id, data.filter_identities(|i| i == id))).collect()
}

/// Per forget identity: distance from its support sample to the centroid of
/// its forget samples (in extractor feature space) and the score gap
/// `perf(θ_u) − perf(θ_r)` on those forget samples.
pub fn hardness_points(
    theta_u: &ClassifierState,
    theta_r: &ClassifierState,
    request: &UnlearningRequest,
    extractor: &ClassifierState,
) -> Result<Vec<IdentityPoint>> {
    let support = request.support();
    let forget = by_identity(request.forget_set());
    let mut points = Vec::new();
    for s in support.samples() {
        let Some(slice) = forget.get(&s.identity) else { continue };
        if slice.is_empty() {
            continue;
        }
        let batch = slice.to_batch();
        let (gap_u, gap_r) = match (performance_on_batch(theta_u, &batch), performance_on_batch(theta_r, &batch)) {
            (Ok(u), Ok(r)) => (u, r),
            // Identity without a positive on any attribute: no defined score.
            (Err(Error::Metric(_)), _) | (_, Err(Error::Metric(_))) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let (feats, _) = extractor.forward(&batch.inputs)?;
        let single = Matrix::from_vec(1, s.features.len(), s.features.clone());
        let (sf, _) = extractor.forward(&single)?;
        points.push(IdentityPoint {
            identity: s.identity,
            distance: euclidean(sf.row(0), &centroid(&feats)),
            gap: gap_u - gap_r,
        });
    }
    Ok(points)
}

pub fn hardness_analysis(
    theta_u: &ClassifierState,
    theta_r: &ClassifierState,
    request: &UnlearningRequest,
    extractor: &ClassifierState,
    num_bins: usize,
) -> Result<Vec<BinRow>> {
    bin_points(&hardness_points(theta_u, theta_r, request, extractor)?, num_bins)
}

/// Per retain identity: distance from its centroid to the nearest forget
/// identity centroid and the drop `perf(θ_pre) − perf(θ_u)` on its samples.
pub fn drop_points(
    theta_u: &ClassifierState,
    theta_pre: &ClassifierState,
    request: &UnlearningRequest,
    extractor: &ClassifierState,
) -> Result<Vec<IdentityPoint>> {
    let mut forget_centroids = Vec::new();
    for slice in by_identity(request.forget_set()).values() {
        let (f, _) = extractor.forward(&slice.to_batch().inputs)?;
        forget_centroids.push(centroid(&f));
    }
    if forget_centroids.is_empty() {
        return Err(Error::Metric("request has no forget samples".into()));
    }
    let mut points = Vec::new();
    for (id, slice) in by_identity(request.retain_set()) {
        let batch = slice.to_batch();
        let (pre, post) = match (performance_on_batch(theta_pre, &batch), performance_on_batch(theta_u, &batch)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(Error::Metric(_)), _) | (_, Err(Error::Metric(_))) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let (f, _) = extractor.forward(&batch.inputs)?;
        let c = centroid(&f);
        let distance = forget_centroids.iter().map(|fc| euclidean(&c, fc)).fold(f64::INFINITY, f64::min);
        points.push(IdentityPoint { identity: id, distance, gap: pre - post });
    }
    Ok(points)
}

pub fn drop_analysis(
    theta_u: &ClassifierState,
    theta_pre: &ClassifierState,
    request: &UnlearningRequest,
    extractor: &ClassifierState,
    num_bins: usize,
) -> Result<Vec<BinRow>> {
    bin_points(&drop_points(theta_u, theta_pre, request, extractor)?, num_bins)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; 0 when undefined.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return 0.0;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut num, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        num += (a - mean) * (b - mean);
        sx += (a - mean) * (a - mean);
        sy += (b - mean) * (b - mean);
    }
    if sx == 0.0 || sy == 0.0 {
        0.0
    } else {
        num / (sx * sy).sqrt()
    }
}

/// Per-identity row of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityDiagnostic {
    pub identity: u32,
    pub perf_diff: f64,
    pub support_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub seed: u64,
    pub perf_r: f64,
    pub perf_f: f64,
    pub perf_te: f64,
    /// Absent for the retrained reference itself.
    pub tow: Option<f64>,
    pub mia_tpr: Option<f64>,
    pub forget_loss: f64,
    pub validation_loss: f64,
    pub per_identity: Vec<IdentityDiagnostic>,
}

impl EvalReport {
    pub fn perf(&self) -> PerfTriple {
        PerfTriple { retain: self.perf_r, forget: self.perf_f, test: self.perf_te }
    }

    /// |L_task(D_f) − L_task(D_v)| of the evaluated model.
    pub fn loss_gap(&self) -> f64 {
        (self.forget_loss - self.validation_loss).abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_hand_case() {
        let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.3, 0.2], &[false, false]), None);
        assert_eq!(average_precision(&[0.1, 0.9, 0.5], &[false, true, true]), Some(1.0));
    }

    #[test]
    fn ap_ties_follow_input_order() {
        // Tied scores: the earlier sample ranks first.
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]), Some(1.0));
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]), Some(0.5));
    }

    #[test]
    fn score_logits_modes() {
        let logits = Matrix::from_vec(3, 2, vec![2.0, -1.0, -2.0, 1.0, 1.0, 0.5]);
        let perfect = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(score_logits(&logits, &perfect, TaskKind::MultiLabel).unwrap(), 1.0);
        let onehot = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(score_logits(&logits, &onehot, TaskKind::MultiClass).unwrap(), 1.0);
        let none = Matrix::zeros(3, 2);
        assert!(score_logits(&logits, &none, TaskKind::MultiLabel).is_err());
        // Attributes without positives are dropped from the mean.
        let half = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(score_logits(&logits, &half, TaskKind::MultiLabel).unwrap(), 1.0);
    }

    #[test]
    fn tow_values() {
        let a = PerfTriple { retain: 0.8, forget: 0.7, test: 0.75 };
        assert_eq!(tow(&a, &a).unwrap(), 1.0);
        let r = PerfTriple { retain: 0.81, forget: 0.75, test: 0.75 };
        assert!((tow(&a, &r).unwrap() - 0.9405).abs() < 1e-12);
        assert_eq!(tow(&a, &r).unwrap(), tow(&r, &a).unwrap());
        let bad = PerfTriple { retain: 1.2, ..a };
        assert!(tow(&bad, &a).is_err());
    }

    #[test]
    fn threshold_examples() {
        let th = threshold_at_fpr(&[0.0; 5], 1e-4).unwrap();
        assert!(th.underpowered);
        assert_eq!(rate_at(&[1.0; 3], th.beta), 1.0);
        assert_eq!(rate_at(&[0.0; 5], th.beta), 0.0);

        let neg = [0.1, 0.4, 0.4, 0.9];
        let th = threshold_at_fpr(&neg, 0.25).unwrap();
        assert!(rate_at(&neg, th.beta) <= 0.25);
        assert!(rate_at(&neg, th.beta.next_down()) > 0.25);
        let th = threshold_at_fpr(&neg, 0.5).unwrap();
        // The tie at 0.4 cannot be split, so only the 0.9 score passes.
        assert_eq!(rate_at(&neg, th.beta), 0.25);
    }

    #[test]
    fn perfectly_separated_attack() {
        let out = attack_from_scores(vec![1.0; 10], vec![0.0; 50], 1e-4).unwrap();
        assert_eq!(out.tpr, 1.0);
    }

    #[test]
    fn binning() {
        let pts: Vec<IdentityPoint> = [(0.0, 1.0), (0.1, 3.0), (1.0, -1.0), (0.55, 0.0)]
            .iter()
            .enumerate()
            .map(|(i, &(d, g))| IdentityPoint { identity: i as u32, distance: d, gap: g })
            .collect();
        let bins = bin_points(&pts, 2).unwrap();
        assert_eq!(bins.len(), 2);
        assert_eq!((bins[0].count, bins[0].mean_gap), (2, 2.0));
        assert_eq!((bins[1].count, bins[1].mean_gap), (2, -0.5));
        assert!(bins[0].hi <= bins[1].lo + 1e-15);

        let flat: Vec<IdentityPoint> = (0..4).map(|i| IdentityPoint { identity: i, distance: 0.0, gap: 0.5 }).collect();
        let one = bin_points(&flat, 5).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].count, 4);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1., 2., 3., 4.], &[10., 20., 30., 40.]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1., 2., 3.], &[3., 2., 1.]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1., 2.], &[5., 5.]), 0.0);
    }
}
