// Lesion extraction, matching and dataset-level AUC / AP / PI-CAI on hand-made maps.

use fedsim::grid::{Image, LabelImage};
use fedsim::metrics::{
    auc, average_precision, extract_lesions, match_lesions, patient_score, picai_score, pr_curve,
    roc_curve, CandidateStatus, LesionParams, RankedCandidate,
};

fn bump(h: usize, w: usize, peaks: &[(f64, f64, f64)]) -> Image {
    Image::from_fn(h, w, |r, c| {
        peaks
            .iter()
            .map(|&(pr, pc, amp)| {
                amp * (-((r as f64 - pr).powi(2) + (c as f64 - pc).powi(2)) / 8.0).exp()
            })
            .fold(0.0, f64::max)
    })
}

pub fn run_example() -> fedsim::Result<()> {
    let params = LesionParams::default();
    // case 0: one true lesion found, one false alarm; case 1: clean; case 2: missed lesion
    let maps = [
        bump(32, 32, &[(8.0, 8.0, 0.9), (24.0, 24.0, 0.4)]),
        bump(32, 32, &[(16.0, 16.0, 0.15)]),
        bump(32, 32, &[]),
    ];
    let mut truth = vec![LabelImage::filled(32, 32, 0); 3];
    for (r, c) in (6..11).flat_map(|r| (6..11).map(move |c| (r, c))) {
        truth[0].set(r, c, 1);
    }
    for (r, c) in (20..25).flat_map(|r| (4..9).map(move |c| (r, c))) {
        truth[2].set(r, c, 1);
    }

    let mut ranked = Vec::new();
    let (mut scores, mut labels) = (vec![], vec![]);
    for (i, (map, labels_img)) in maps.iter().zip(&truth).enumerate() {
        let id = format!("case{i}");
        let cands = extract_lesions(&id, map, &params);
        let positive = labels_img.as_slice().iter().any(|&l| l > 0);
        let significant: Vec<bool> = if positive { vec![true] } else { vec![] };
        let m = match_lesions(&cands, labels_img, &significant, params.iou_threshold)?;
        for (c, s) in cands.iter().zip(&m.candidates) {
            println!(
                "{id}: candidate conf {:.3} area {:>3} {:?}",
                c.confidence,
                c.region.len(),
                s
            );
            if *s != CandidateStatus::Ignored {
                ranked.push(RankedCandidate {
                    case_id: id.clone(),
                    confidence: c.confidence,
                    area: c.region.len(),
                    true_positive: *s == CandidateStatus::TruePositive,
                });
            }
        }
        scores.push(patient_score(&cands));
        labels.push(positive);
    }
    let a = auc(&scores, &labels)?;
    let ap = average_precision(&ranked, 2)?;
    println!("auc {a:.3}  ap {ap:.3}  picai {:.3}", picai_score(a, ap)?);
    for p in roc_curve(&scores, &labels)? {
        println!(
            "roc  t={:<8.3} fpr={:.2} tpr={:.2}",
            p.threshold, p.fpr, p.tpr
        );
    }
    for p in pr_curve(&ranked, 2)? {
        println!(
            "pr   t={:<8.3} recall={:.2} precision={:.2}",
            p.threshold, p.recall, p.precision
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedsim::Result<()> {
    run_example()
}
