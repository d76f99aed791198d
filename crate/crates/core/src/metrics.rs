//! Segmentation metrics, lesion extraction and matching, and ranking metrics.

use std::cmp::Ordering;
use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Image, LabelImage, Mask};
use crate::synthdata::{SyntheticCase, Task};

/// `2|P ∩ R| / (|P| + |R|)`; two empty masks score 1.
pub fn dice(pred: &Mask, reference: &Mask) -> Result<f64> {
    pred.check_shape(reference)?;
    let (mut inter, mut np, mut nr) = (0usize, 0usize, 0usize);
    for (&p, &r) in pred.as_slice().iter().zip(reference.as_slice()) {
        inter += (p && r) as usize;
        np += p as usize;
        nr += r as usize;
    }
    if np + nr == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (np + nr) as f64)
}

/// Mask pixels with at least one background 4-neighbour; outside the image counts as background.
pub fn boundary(mask: &Mask) -> Mask {
    let (h, w) = mask.shape();
    Mask::from_fn(h, w, |r, c| {
        if !*mask.get(r, c) {
            return false;
        }
        r == 0
            || c == 0
            || r + 1 == h
            || c + 1 == w
            || !*mask.get(r - 1, c)
            || !*mask.get(r + 1, c)
            || !*mask.get(r, c - 1)
            || !*mask.get(r, c + 1)
    })
}

/// Lower-envelope squared distance transform of one line, `min_q f(q) + weight (p - q)^2`.
fn distance_transform_1d(f: &[f64], weight: f64, out: &mut [f64]) {
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        out.iter_mut().for_each(|v| *v = f64::INFINITY);
        return;
    }
    let key = |q: usize| f[q] + weight * (q * q) as f64;
    let mut v = vec![0usize; sites.len()];
    let mut z = vec![0.0f64; sites.len() + 1];
    let mut k = 0;
    v[0] = sites[0];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for &q in &sites[1..] {
        let mut s = (key(q) - key(v[k])) / (2.0 * weight * (q as f64 - v[k] as f64));
        // z[0] is -inf, so this never pops past the first parabola
        while s <= z[k] {
            k -= 1;
            s = (key(q) - key(v[k])) / (2.0 * weight * (q as f64 - v[k] as f64));
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while z[k + 1] < p as f64 {
            k += 1;
        }
        let d = p as f64 - v[k] as f64;
        *o = weight * d * d + f[v[k]];
    }
}

/// Squared Euclidean distance (spacing-scaled) from every pixel to the nearest `sites` pixel.
pub fn squared_distance_map(sites: &Mask, spacing: (f64, f64)) -> Image {
    let (h, w) = sites.shape();
    let mut cols_pass = Image::filled(h, w, 0.0);
    let mut line = vec![0.0; w.max(h)];
    let mut out = vec![0.0; w.max(h)];
    for r in 0..h {
        for c in 0..w {
            line[c] = if *sites.get(r, c) { 0.0 } else { f64::INFINITY };
        }
        distance_transform_1d(&line[..w], spacing.1 * spacing.1, &mut out[..w]);
        for c in 0..w {
            cols_pass.set(r, c, out[c]);
        }
    }
    let mut result = Image::filled(h, w, 0.0);
    for c in 0..w {
        for r in 0..h {
            line[r] = *cols_pass.get(r, c);
        }
        distance_transform_1d(&line[..h], spacing.0 * spacing.0, &mut out[..h]);
        for r in 0..h {
            result.set(r, c, out[r]);
        }
    }
    result
}

/// Linear-interpolation percentile (`q` in [0, 1]) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, q)
}

pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Max of the two directed 95th percentiles of boundary-to-boundary distances.
pub fn hd95(pred: &Mask, reference: &Mask, spacing: (f64, f64)) -> Result<f64> {
    pred.check_shape(reference)?;
    if pred.count() == 0 || reference.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let (bp, br) = (boundary(pred), boundary(reference));
    let directed = |from: &Mask, to: &Mask| {
        let dist = squared_distance_map(to, spacing);
        let d: Vec<f64> = from
            .as_slice()
            .iter()
            .zip(dist.as_slice())
            .filter(|(&b, _)| b)
            .map(|(_, d2)| d2.sqrt())
            .collect();
        percentile(&d, 0.95)
    };
    Ok(directed(&bp, &br).max(directed(&br, &bp)))
}

/// Absolute relative volume difference in percent.
pub fn rvd(pred: &Mask, reference: &Mask) -> Result<f64> {
    pred.check_shape(reference)?;
    let nr = reference.count();
    if nr == 0 {
        return Err(Error::EmptyReference);
    }
    let np = pred.count();
    Ok(100.0 * (np as f64 - nr as f64).abs() / nr as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceRule {
    /// Mean probability over the region.
    Mean,
    /// Probability at the region's peak.
    Peak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionParams {
    pub peak_floor: f64,
    pub growth_fraction: f64,
    pub max_lesions: usize,
    pub min_area: usize,
    pub confidence: ConfidenceRule,
    /// IoU needed for a candidate to hit a ground-truth lesion.
    pub iou_threshold: f64,
}

impl Default for LesionParams {
    fn default() -> Self {
        Self {
            peak_floor: 0.10,
            growth_fraction: 0.40,
            max_lesions: 5,
            min_area: 4,
            confidence: ConfidenceRule::Mean,
            iou_threshold: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCandidate {
    pub case_id: String,
    /// Linear pixel indices, ascending.
    pub region: Vec<usize>,
    pub confidence: f64,
    pub peak: f64,
}

/// Iterative peak-seeded region growing on a probability map.
///
/// Each iteration takes the global peak `p`; below `peak_floor` extraction
/// stops. The 8-connected region of pixels `>= growth_fraction * p` around the
/// peak becomes a candidate. The region and every pixel reachable from it by a
/// non-increasing path above `peak_floor` are then zeroed. Regions smaller than `min_area` are
/// discarded and do not count towards `max_lesions`. The result is sorted by
/// descending confidence.
pub fn extract_lesions(
    case_id: &str,
    prob: &Image,
    params: &LesionParams,
) -> Vec<DetectionCandidate> {
    let (h, w) = prob.shape();
    let mut work = prob.as_slice().to_vec();
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    let mut in_region = vec![false; h * w];
    while out.len() < params.max_lesions {
        let (peak_idx, peak) =
            work.iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                });
        // zeroed pixels never seed a region
        if !(peak >= params.peak_floor) || peak <= 0.0 {
            break;
        }
        let level = params.growth_fraction * peak;
        let mut region = vec![peak_idx];
        in_region[peak_idx] = true;
        queue.push_back(peak_idx);
        while let Some(i) = queue.pop_front() {
            let (r, c) = ((i / w) as i64, (i % w) as i64);
            for dr in -1..=1i64 {
                for dc in -1..=1i64 {
                    let (rr, cc) = (r + dr, c + dc);
                    if (dr == 0 && dc == 0) || rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64
                    {
                        continue;
                    }
                    let j = rr as usize * w + cc as usize;
                    if !in_region[j] && work[j] >= level && work[j] > 0.0 {
                        in_region[j] = true;
                        region.push(j);
                        queue.push_back(j);
                    }
                }
            }
        }
        region.sort_unstable();
        let mean = region.iter().map(|&i| prob.as_slice()[i]).sum::<f64>() / region.len() as f64;
        // Suppress the lesion and its descending flank down to the floor so
        // the skirt of one blob is not re-extracted as a ring of fragments.
        let mut suppressed = region.clone();
        queue.extend(region.iter().copied());
        while let Some(i) = queue.pop_front() {
            let (r, c) = ((i / w) as i64, (i % w) as i64);
            for dr in -1..=1i64 {
                for dc in -1..=1i64 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        continue;
                    }
                    let j = rr as usize * w + cc as usize;
                    if !in_region[j]
                        && work[j] >= params.peak_floor
                        && work[j] <= work[i]
                        && work[j] > 0.0
                    {
                        in_region[j] = true;
                        suppressed.push(j);
                        queue.push_back(j);
                    }
                }
            }
        }
        for &i in &suppressed {
            in_region[i] = false;
        }
        for &i in &suppressed {
            work[i] = 0.0;
        }
        if region.len() >= params.min_area {
            out.push(DetectionCandidate {
                case_id: case_id.to_string(),
                region,
                confidence: match params.confidence {
                    ConfidenceRule::Mean => mean,
                    ConfidenceRule::Peak => peak,
                },
                peak,
            });
        }
    }
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    out
}

/// Max candidate confidence, 0 without candidates.
pub fn patient_score(candidates: &[DetectionCandidate]) -> f64 {
    candidates.iter().map(|c| c.confidence).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    TruePositive,
    FalsePositive,
    /// Overlaps a non-significant lesion only; excluded from AP.
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionMatch {
    /// Status per candidate, in the order given.
    pub candidates: Vec<CandidateStatus>,
    /// Hit flag per significant ground-truth lesion, ordered by label.
    pub significant_hits: Vec<bool>,
}

fn iou(region: &[usize], lesion: &[usize]) -> f64 {
    // both sorted ascending
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < region.len() && j < lesion.len() {
        match region[i].cmp(&lesion[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = region.len() + lesion.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Greedy matching in descending confidence; each significant lesion is hit at most once.
pub fn match_lesions(
    candidates: &[DetectionCandidate],
    labels: &LabelImage,
    significant: &[bool],
    iou_threshold: f64,
) -> Result<LesionMatch> {
    let n_pix = labels.len();
    let mut lesions: Vec<Vec<usize>> = vec![Vec::new(); significant.len()];
    for (i, &l) in labels.as_slice().iter().enumerate() {
        if l > 0 {
            let slot = lesions.get_mut(l as usize - 1).ok_or_else(|| {
                Error::ShapeMismatch(format!("label {l} has no significance flag"))
            })?;
            slot.push(i);
        }
    }
    if let Some(c) = candidates
        .iter()
        .find(|c| c.region.iter().any(|&i| i >= n_pix))
    {
        return Err(Error::ShapeMismatch(format!(
            "candidate region of {} exceeds the {}x{} label image",
            c.case_id,
            labels.rows(),
            labels.cols()
        )));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .confidence
            .total_cmp(&candidates[a].confidence)
    });
    let mut taken = vec![false; lesions.len()];
    let mut status = vec![CandidateStatus::FalsePositive; candidates.len()];
    for ci in order {
        let cand = &candidates[ci];
        let best = (0..lesions.len())
            .filter(|&l| significant[l] && !taken[l])
            .map(|l| (l, iou(&cand.region, &lesions[l])))
            .fold(None, |best: Option<(usize, f64)>, x| match best {
                Some(b) if b.1 >= x.1 => Some(b),
                _ => Some(x),
            });
        if let Some((l, v)) = best {
            if v >= iou_threshold {
                taken[l] = true;
                status[ci] = CandidateStatus::TruePositive;
                continue;
            }
        }
        let hits_benign = (0..lesions.len())
            .any(|l| !significant[l] && iou(&cand.region, &lesions[l]) >= iou_threshold);
        if hits_benign {
            status[ci] = CandidateStatus::Ignored;
        }
    }
    Ok(LesionMatch {
        candidates: status,
        significant_hits: (0..lesions.len())
            .filter(|&l| significant[l])
            .map(|l| taken[l])
            .collect(),
    })
}

/// Mann–Whitney AUC: `(concordant + 0.5 ties) / (pos * neg)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(
            "scores and labels differ in length".into(),
        ));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// One candidate in a dataset-wide AP ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub case_id: String,
    pub confidence: f64,
    pub area: usize,
    pub true_positive: bool,
}

fn rank_order(cands: &[RankedCandidate]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..cands.len()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (&cands[a], &cands[b]);
        y.confidence
            .total_cmp(&x.confidence)
            .then_with(|| x.case_id.cmp(&y.case_id))
            .then_with(|| x.area.cmp(&y.area))
    });
    idx
}

/// `Σ (R_n - R_{n-1}) P_n` over the confidence-ranked candidates; recall is
/// relative to `total_gt`, so missed lesions cap it below one.
pub fn average_precision(candidates: &[RankedCandidate], total_gt: usize) -> Result<f64> {
    if total_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    // recall steps are all 1/total_gt, so divide once at the end
    let (mut tp, mut precision_sum) = (0usize, 0.0);
    for (n, &i) in rank_order(candidates).iter().enumerate() {
        if candidates[i].true_positive {
            tp += 1;
            precision_sum += tp as f64 / (n + 1) as f64;
        }
    }
    Ok(precision_sum / total_gt as f64)
}

pub fn picai_score(auc: f64, ap: f64) -> Result<f64> {
    for v in [auc, ap] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange(v));
        }
    }
    Ok((auc + ap) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// ROC points at every distinct score, thresholds strictly decreasing from `+inf`.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let t = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == t {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(points)
}

/// Precision/recall at every distinct candidate confidence.
pub fn pr_curve(candidates: &[RankedCandidate], total_gt: usize) -> Result<Vec<PrPoint>> {
    if total_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    let order = rank_order(candidates);
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = candidates[order[i]].confidence;
        while i < order.len() && candidates[order[i]].confidence == t {
            tp += candidates[order[i]].true_positive as usize;
            seen += 1;
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            recall: tp as f64 / total_gt as f64,
            precision: tp as f64 / seen as f64,
        });
    }
    Ok(points)
}

/// Anything that turns a case into a probability map.
pub trait ProbabilityModel: Sync {
    fn predict(&self, case: &SyntheticCase) -> Result<Image>;
}

impl<F> ProbabilityModel for F
where
    F: Fn(&SyntheticCase) -> Result<Image> + Sync,
{
    fn predict(&self, case: &SyntheticCase) -> Result<Image> {
        self(case)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegCaseRecord {
    pub case_id: String,
    pub dice: f64,
    /// `None` when either mask is empty.
    pub hd95: Option<f64>,
    pub rvd_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub cases: Vec<SegCaseRecord>,
    pub mean_dice: f64,
    pub mean_hd95: Option<f64>,
    pub mean_rvd_percent: Option<f64>,
    pub hd95_missing: usize,
    pub n_cases: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

impl SegReport {
    pub fn from_cases(cases: Vec<SegCaseRecord>) -> Self {
        let n_cases = cases.len();
        Self {
            mean_dice: mean(cases.iter().map(|c| c.dice)).unwrap_or(0.0),
            mean_hd95: mean(cases.iter().filter_map(|c| c.hd95)),
            mean_rvd_percent: mean(cases.iter().filter_map(|c| c.rvd_percent)),
            hd95_missing: cases.iter().filter(|c| c.hd95.is_none()).count(),
            n_cases,
            cases,
        }
    }
}

pub fn segment_case(prob: &Image, case: &SyntheticCase, threshold: f64) -> Result<SegCaseRecord> {
    let pred = Mask::threshold(prob, threshold);
    let reference = &case.gland_mask;
    let hd = match hd95(&pred, reference, case.pixel_spacing) {
        Ok(v) => Some(v),
        Err(Error::EmptyMask) => None,
        Err(e) => return Err(e),
    };
    let rv = match rvd(&pred, reference) {
        Ok(v) => Some(v),
        Err(Error::EmptyReference) => None,
        Err(e) => return Err(e),
    };
    Ok(SegCaseRecord {
        case_id: case.case_id.clone(),
        dice: dice(&pred, reference)?,
        hd95: hd,
        rvd_percent: rv,
    })
}

/// Thresholds each predicted map and scores it against the gland mask.
pub fn evaluate_segmentation(
    model: &dyn ProbabilityModel,
    cases: &[SyntheticCase],
    threshold: f64,
) -> Result<SegReport> {
    let records = cases
        .par_iter()
        .map(|case| segment_case(&model.predict(case)?, case, threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok(SegReport::from_cases(records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub confidence: f64,
    pub area: usize,
    pub status: CandidateStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCaseRecord {
    pub case_id: String,
    pub label: bool,
    pub score: f64,
    pub candidates: Vec<CandidateRecord>,
    pub gt_lesions: usize,
    pub gt_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cases: Vec<DetectionCaseRecord>,
    pub auc: f64,
    pub ap: f64,
    pub picai_score: f64,
    pub n_cases: usize,
    pub n_gt_lesions: usize,
}

/// AP ranking entries of a set of case records (ignored candidates dropped).
pub fn ranked_candidates<'a>(
    cases: impl IntoIterator<Item = &'a DetectionCaseRecord>,
) -> Vec<RankedCandidate> {
    cases
        .into_iter()
        .flat_map(|c| {
            c.candidates
                .iter()
                .filter(|k| k.status != CandidateStatus::Ignored)
                .map(move |k| RankedCandidate {
                    case_id: c.case_id.clone(),
                    confidence: k.confidence,
                    area: k.area,
                    true_positive: k.status == CandidateStatus::TruePositive,
                })
        })
        .collect()
}

/// Dataset-level `(auc, ap)` recomputed from case records.
pub fn detection_scores(cases: &[&DetectionCaseRecord]) -> Result<(f64, f64)> {
    let scores: Vec<f64> = cases.iter().map(|c| c.score).collect();
    let labels: Vec<bool> = cases.iter().map(|c| c.label).collect();
    let a = auc(&scores, &labels)?;
    let total_gt = cases.iter().map(|c| c.gt_lesions).sum();
    let p = average_precision(&ranked_candidates(cases.iter().copied()), total_gt)?;
    Ok((a, p))
}

impl EvalReport {
    pub fn from_cases(cases: Vec<DetectionCaseRecord>) -> Result<Self> {
        let refs: Vec<&DetectionCaseRecord> = cases.iter().collect();
        let (a, p) = detection_scores(&refs)?;
        Ok(Self {
            auc: a,
            ap: p,
            picai_score: picai_score(a, p)?,
            n_cases: cases.len(),
            n_gt_lesions: cases.iter().map(|c| c.gt_lesions).sum(),
            cases,
        })
    }

    pub fn roc_curve(&self) -> Result<Vec<RocPoint>> {
        let scores: Vec<f64> = self.cases.iter().map(|c| c.score).collect();
        let labels: Vec<bool> = self.cases.iter().map(|c| c.label).collect();
        roc_curve(&scores, &labels)
    }

    pub fn pr_curve(&self) -> Result<Vec<PrPoint>> {
        pr_curve(&ranked_candidates(&self.cases), self.n_gt_lesions)
    }
}

pub fn detect_case(
    prob: &Image,
    case: &SyntheticCase,
    params: &LesionParams,
) -> Result<DetectionCaseRecord> {
    prob.check_shape(&case.lesion_labels)?;
    let candidates = extract_lesions(&case.case_id, prob, params);
    let matched = match_lesions(
        &candidates,
        &case.lesion_labels,
        &case.lesion_significant,
        params.iou_threshold,
    )?;
    Ok(DetectionCaseRecord {
        case_id: case.case_id.clone(),
        label: case.is_positive(),
        score: patient_score(&candidates),
        candidates: candidates
            .iter()
            .zip(&matched.candidates)
            .map(|(c, s)| CandidateRecord {
                confidence: c.confidence,
                area: c.region.len(),
                status: *s,
            })
            .collect(),
        gt_lesions: matched.significant_hits.len(),
        gt_hits: matched.significant_hits.iter().filter(|&&h| h).count(),
    })
}

/// Map -> lesion extraction -> patient score per case; dataset AUC/AP/PI-CAI.
pub fn evaluate_detection(
    model: &dyn ProbabilityModel,
    cases: &[SyntheticCase],
    params: &LesionParams,
) -> Result<EvalReport> {
    let records = cases
        .par_iter()
        .map(|case| detect_case(&model.predict(case)?, case, params))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_cases(records)
}

/// Validation metric used for model selection: mean Dice or PI-CAI score.
pub fn selection_metric(
    task: Task,
    model: &dyn ProbabilityModel,
    cases: &[SyntheticCase],
    params: &LesionParams,
) -> Result<f64> {
    match task {
        Task::Segmentation => Ok(evaluate_segmentation(model, cases, 0.5)?.mean_dice),
        Task::Detection => Ok(evaluate_detection(model, cases, params)?.picai_score),
    }
}
