//! Seeded synthetic 2D cases and their per-client partitioning.
//!
//! A case is an elliptical "gland" on a shaded background with 0-3 Gaussian
//! lesion blobs inside it. Clients differ in scanner gain/offset, noise,
//! gland geometry and lesion prevalence/conspicuity, which is what makes the
//! federation non-IID.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Image, LabelImage, Mask};
use crate::seeding;
use crate::tensor::{Tensor, TensorData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Segmentation,
    Detection,
}

impl Task {
    /// One T2W-like channel for segmentation; T2W/DWI/ADC analogs for detection.
    pub fn channels(self) -> usize {
        match self {
            Task::Segmentation => 1,
            Task::Detection => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCase {
    pub case_id: String,
    pub channels: Vec<Image>,
    pub gland_mask: Mask,
    pub lesion_labels: LabelImage,
    pub lesion_significant: Vec<bool>,
    pub pixel_spacing: (f64, f64),
}

impl SyntheticCase {
    pub fn shape(&self) -> (usize, usize) {
        self.gland_mask.shape()
    }

    /// Patient-level label: any significant lesion.
    pub fn is_positive(&self) -> bool {
        self.lesion_significant.iter().any(|&s| s)
    }

    pub fn lesion_count(&self) -> usize {
        self.lesion_significant.len()
    }

    pub fn significant_lesion_mask(&self) -> Mask {
        self.lesion_labels
            .map(|&l| l > 0 && self.lesion_significant[(l - 1) as usize])
    }

    /// Training/evaluation target for a task.
    pub fn target(&self, task: Task) -> Mask {
        match task {
            Task::Segmentation => self.gland_mask.clone(),
            Task::Detection => self.significant_lesion_mask(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.shape();
        if h < 16 || w < 16 {
            return Err(Error::ShapeMismatch(format!(
                "case {} is {h}x{w}",
                self.case_id
            )));
        }
        if self.channels.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "case {} has no channels",
                self.case_id
            )));
        }
        for ch in &self.channels {
            ch.check_shape(&self.gland_mask)?;
        }
        self.lesion_labels.check_shape(&self.gland_mask)?;
        let mut seen = BTreeSet::new();
        for (l, g) in self
            .lesion_labels
            .as_slice()
            .iter()
            .zip(self.gland_mask.as_slice())
        {
            if *l > 0 {
                if !g {
                    return Err(Error::ShapeMismatch(format!(
                        "case {} has lesion pixels outside the gland",
                        self.case_id
                    )));
                }
                seen.insert(*l);
            }
        }
        let expected: BTreeSet<u16> = (1..=self.lesion_significant.len() as u16).collect();
        if seen != expected {
            return Err(Error::ShapeMismatch(format!(
                "case {} lesion labels {:?} are not 1..={}",
                self.case_id,
                seen,
                self.lesion_significant.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client_id: String,
    pub task: Task,
    pub n_cases: usize,
    pub noise_sigma: f64,
    pub contrast_gain: f64,
    /// Additive scanner offset applied after the gain.
    pub intensity_offset: f64,
    /// Semi-major axis as a fraction of the smaller image side.
    pub gland_size_range: (f64, f64),
    pub gland_eccentricity_range: (f64, f64),
    pub lesion_prevalence: f64,
    pub lesion_intensity_shift: f64,
    pub image_size: (usize, usize),
    pub pixel_spacing: (f64, f64),
}

impl ClientProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProfile(format!("{}: {msg}", self.client_id)));
        if self.client_id.is_empty()
            || !self
                .client_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            return bad("client_id must be non-empty [A-Za-z0-9_]".into());
        }
        if self.n_cases < 5 {
            return bad(format!("n_cases {} < 5", self.n_cases));
        }
        if !(0.0..=1.0).contains(&self.lesion_prevalence) {
            return bad(format!(
                "lesion_prevalence {} outside [0,1]",
                self.lesion_prevalence
            ));
        }
        let (lo, hi) = self.gland_size_range;
        if !(lo > 0.0 && lo <= hi && hi < 0.5) {
            return bad(format!(
                "gland_size_range {:?} must satisfy 0 < lo <= hi < 0.5",
                self.gland_size_range
            ));
        }
        let (lo, hi) = self.gland_eccentricity_range;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return bad(format!(
                "gland_eccentricity_range {:?} must lie in [0,1)",
                self.gland_eccentricity_range
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {}", self.noise_sigma));
        }
        if !(self.contrast_gain > 0.0 && self.contrast_gain.is_finite()) {
            return bad(format!("contrast_gain {}", self.contrast_gain));
        }
        if !self.intensity_offset.is_finite() || !self.lesion_intensity_shift.is_finite() {
            return bad("non-finite intensity parameter".into());
        }
        if self.image_size.0 < 16 || self.image_size.1 < 16 {
            return bad(format!("image_size {:?} below 16x16", self.image_size));
        }
        if !(self.pixel_spacing.0 > 0.0 && self.pixel_spacing.1 > 0.0) {
            return bad(format!("pixel_spacing {:?}", self.pixel_spacing));
        }
        Ok(())
    }

    fn case_id(&self, index: usize) -> String {
        format!("{}-{:04}", self.client_id, index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub local_test_count: usize,
    pub train_fraction: f64,
}

impl SplitSpec {
    pub fn new(local_test_count: usize) -> Self {
        Self {
            local_test_count,
            train_fraction: 0.8,
        }
    }
}

/// Minimum number of cases left for train+validation after the local test draw.
pub const MIN_TRAIN_VAL: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSplit {
    pub train: Vec<SyntheticCase>,
    pub validation: Vec<SyntheticCase>,
    pub local_test: Vec<SyntheticCase>,
}

// Per-channel (background, gland) intensities and lesion response sign/scale.
const CHANNEL_TISSUE: [(f64, f64, f64); 3] =
    [(0.25, 0.75, -0.4), (0.2, 0.3, 1.0), (0.7, 0.6, -1.0)];
const NON_SIGNIFICANT_AMPLITUDE: f64 = 0.35;

struct Ellipse {
    center: (f64, f64),
    semi_major: f64,
    semi_minor: f64,
    angle: f64,
}

impl Ellipse {
    /// Normalized radius; ≤ 1 inside.
    fn rho(&self, r: f64, c: f64) -> f64 {
        let (dr, dc) = (r - self.center.0, c - self.center.1);
        let (s, co) = self.angle.sin_cos();
        let u = (dr * co + dc * s) / self.semi_major;
        let v = (-dr * s + dc * co) / self.semi_minor;
        (u * u + v * v).sqrt()
    }
}

struct Lesion {
    center: (f64, f64),
    radius: f64,
    significant: bool,
}

pub fn generate_case(profile: &ClientProfile, index: usize, seed: u64) -> SyntheticCase {
    let mut rng = seeding::stream(seed, &profile.client_id, index as u64);
    let (h, w) = profile.image_size;
    let side = h.min(w) as f64;

    let semi_major = rng.gen_range(profile.gland_size_range.0..=profile.gland_size_range.1) * side;
    let ecc =
        rng.gen_range(profile.gland_eccentricity_range.0..=profile.gland_eccentricity_range.1);
    let gland = Ellipse {
        center: (
            (h as f64 - 1.0) / 2.0 + rng.gen_range(-0.06..=0.06) * h as f64,
            (w as f64 - 1.0) / 2.0 + rng.gen_range(-0.06..=0.06) * w as f64,
        ),
        semi_major,
        semi_minor: semi_major * (1.0 - ecc * ecc).sqrt(),
        angle: rng.gen_range(0.0..PI),
    };
    let gland_mask = Mask::from_fn(h, w, |r, c| gland.rho(r as f64, c as f64) <= 1.0);

    // Low-frequency shading of the background.
    let shade_phase = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    let shade_amp = rng.gen_range(0.0..0.08);

    let mut lesion_labels = LabelImage::filled(h, w, 0);
    let mut lesions: Vec<Lesion> = Vec::new();
    if rng.gen::<f64>() < profile.lesion_prevalence {
        let wanted = rng.gen_range(1..=3);
        let scale = side / 64.0;
        for _ in 0..(wanted * 20) {
            if lesions.len() == wanted {
                break;
            }
            let radius = rng.gen_range(2.5..=4.5) * scale;
            // center inside the inner part of the gland
            let t = rng.gen_range(0.0..2.0 * PI);
            let rad = rng.gen::<f64>().sqrt() * 0.65;
            let (s, co) = gland.angle.sin_cos();
            let (u, v) = (
                rad * t.cos() * gland.semi_major,
                rad * t.sin() * gland.semi_minor,
            );
            let center = (
                gland.center.0 + u * co - v * s,
                gland.center.1 + u * s + v * co,
            );
            let clear = lesions.iter().all(|l| {
                let d = ((l.center.0 - center.0).powi(2) + (l.center.1 - center.1).powi(2)).sqrt();
                d > l.radius + radius + 3.0
            });
            if !clear {
                continue;
            }
            let label = lesions.len() as u16 + 1;
            let mut pixels = Vec::new();
            for r in 0..h {
                for c in 0..w {
                    let d2 = (r as f64 - center.0).powi(2) + (c as f64 - center.1).powi(2);
                    if d2 <= radius * radius
                        && *gland_mask.get(r, c)
                        && *lesion_labels.get(r, c) == 0
                    {
                        pixels.push((r, c));
                    }
                }
            }
            if pixels.len() < 6 {
                continue;
            }
            for (r, c) in pixels {
                lesion_labels.set(r, c, label);
            }
            let significant = lesions.is_empty() || rng.gen::<f64>() < 0.5;
            lesions.push(Lesion {
                center,
                radius,
                significant,
            });
        }
    }

    let noise = Normal::new(0.0, profile.noise_sigma.max(0.0)).expect("validated sigma");
    let channels = (0..profile.task.channels())
        .map(|ch| {
            let (bg, gl, lesion_response) = CHANNEL_TISSUE[ch];
            Image::from_fn(h, w, |r, c| {
                let (rf, cf) = (r as f64, c as f64);
                let rho = gland.rho(rf, cf);
                // soft gland boundary about one pixel wide
                let inside = 1.0 / (1.0 + ((rho - 1.0) * gland.semi_minor.max(1.0)).exp());
                let shading = shade_amp
                    * (2.0 * PI * rf / h as f64 + shade_phase.0).sin()
                    * (2.0 * PI * cf / w as f64 + shade_phase.1).cos();
                let mut v = bg + (gl - bg) * inside + shading;
                for l in &lesions {
                    let d2 = (rf - l.center.0).powi(2) + (cf - l.center.1).powi(2);
                    let amp = if l.significant {
                        1.0
                    } else {
                        NON_SIGNIFICANT_AMPLITUDE
                    };
                    let sigma = l.radius / 1.2;
                    v += lesion_response
                        * amp
                        * profile.lesion_intensity_shift
                        * (-d2 / (2.0 * sigma * sigma)).exp();
                }
                let n = if profile.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                profile.contrast_gain * v + profile.intensity_offset + n
            })
        })
        .collect();

    SyntheticCase {
        case_id: profile.case_id(index),
        channels,
        gland_mask,
        lesion_labels,
        lesion_significant: lesions.iter().map(|l| l.significant).collect(),
        pixel_spacing: profile.pixel_spacing,
    }
}

/// Generates `profile.n_cases` cases; case `i` depends only on `(profile, seed, i)`.
pub fn generate_client_dataset(profile: &ClientProfile, seed: u64) -> Result<Vec<SyntheticCase>> {
    profile.validate()?;
    use rayon::prelude::*;
    Ok((0..profile.n_cases)
        .into_par_iter()
        .map(|i| generate_case(profile, i, seed))
        .collect())
}

/// Held-out dataset from a profile whose id differs from every training client.
pub fn generate_independent_test(
    profile: &ClientProfile,
    seed: u64,
    training_client_ids: &[&str],
) -> Result<Vec<SyntheticCase>> {
    if training_client_ids.contains(&profile.client_id.as_str()) {
        return Err(Error::InvalidProfile(format!(
            "independent test profile reuses training client id {}",
            profile.client_id
        )));
    }
    generate_client_dataset(profile, seed)
}

/// Draws the local test set first, then splits the rest into train/validation.
pub fn split(dataset: &[SyntheticCase], spec: SplitSpec, seed: u64) -> Result<ClientSplit> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction {} outside (0,1)",
            spec.train_fraction
        )));
    }
    let need = spec.local_test_count + MIN_TRAIN_VAL;
    if dataset.len() < need {
        return Err(Error::TooFewCases {
            have: dataset.len(),
            need,
        });
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut seeding::stream(seed, "split", 0));
    let (test_idx, rest) = order.split_at(spec.local_test_count);
    let n_train = ((rest.len() as f64) * spec.train_fraction).round() as usize;
    let n_train = n_train.clamp(1, rest.len() - 1);
    let (train_idx, val_idx) = rest.split_at(n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset[i].clone()).collect::<Vec<_>>();
    Ok(ClientSplit {
        train: pick(train_idx),
        validation: pick(val_idx),
        local_test: pick(test_idx),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Seeded k-fold partition of `0..n`; validation fold sizes differ by at most one.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || n < k {
        return Err(Error::BadK { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeding::stream(seed, "kfold", k as u64));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        let mut validation = order[start..start + size].to_vec();
        let mut train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .copied()
            .collect();
        validation.sort_unstable();
        train.sort_unstable();
        folds.push(Fold { train, validation });
        start += size;
    }
    Ok(folds)
}

/// Segmentation client counts in the reference topology, before scaling.
pub const SEGMENTATION_CLIENT_SIZES: [usize; 4] = [138, 111, 763, 282];
/// Detection client counts in the reference topology, before scaling.
pub const DETECTION_CLIENT_SIZES: [usize; 3] = [350, 800, 350];

fn scaled(count: usize, scale: f64, floor: usize) -> usize {
    ((count as f64 * scale).round() as usize).max(floor)
}

/// Four heterogeneous T2W-like clients (S1..S4). Sizes follow the reference
/// topology times `scale`, with a floor of 60 cases.
pub fn default_segmentation_profiles(scale: f64) -> Vec<ClientProfile> {
    let base = |id: &str, n: usize| ClientProfile {
        client_id: id.to_string(),
        task: Task::Segmentation,
        n_cases: scaled(n, scale, 60),
        noise_sigma: 0.1,
        contrast_gain: 1.0,
        intensity_offset: 0.0,
        gland_size_range: (0.2, 0.28),
        gland_eccentricity_range: (0.3, 0.6),
        lesion_prevalence: 0.3,
        lesion_intensity_shift: 0.3,
        image_size: (64, 64),
        pixel_spacing: (0.6, 0.6),
    };
    let sizes = SEGMENTATION_CLIENT_SIZES;
    vec![
        ClientProfile {
            noise_sigma: 0.12,
            contrast_gain: 1.4,
            intensity_offset: -0.3,
            gland_size_range: (0.13, 0.18),
            ..base("S1", sizes[0])
        },
        ClientProfile {
            noise_sigma: 0.3,
            contrast_gain: 0.6,
            intensity_offset: 0.35,
            gland_size_range: (0.17, 0.23),
            gland_eccentricity_range: (0.4, 0.7),
            pixel_spacing: (0.5, 0.5),
            ..base("S2", sizes[1])
        },
        ClientProfile {
            noise_sigma: 0.1,
            contrast_gain: 1.1,
            intensity_offset: 0.0,
            gland_size_range: (0.22, 0.3),
            gland_eccentricity_range: (0.2, 0.5),
            pixel_spacing: (0.7, 0.7),
            ..base("S3", sizes[2])
        },
        ClientProfile {
            noise_sigma: 0.2,
            contrast_gain: 0.8,
            intensity_offset: 0.2,
            gland_size_range: (0.29, 0.36),
            gland_eccentricity_range: (0.5, 0.8),
            ..base("S4", sizes[3])
        },
    ]
}

/// Independent segmentation test profile (50 cases) distinct from all clients.
pub fn default_segmentation_independent() -> ClientProfile {
    ClientProfile {
        client_id: "PROMISE".into(),
        task: Task::Segmentation,
        n_cases: 50,
        noise_sigma: 0.15,
        contrast_gain: 1.0,
        intensity_offset: 0.05,
        gland_size_range: (0.13, 0.36),
        gland_eccentricity_range: (0.3, 0.75),
        lesion_prevalence: 0.3,
        lesion_intensity_shift: 0.3,
        image_size: (64, 64),
        pixel_spacing: (0.6, 0.6),
    }
}

/// Three bpMRI-like clients (D1..D3).
pub fn default_detection_profiles(scale: f64) -> Vec<ClientProfile> {
    let base = |id: &str, n: usize| ClientProfile {
        client_id: id.to_string(),
        task: Task::Detection,
        n_cases: scaled(n, scale, 60),
        noise_sigma: 0.1,
        contrast_gain: 1.0,
        intensity_offset: 0.0,
        gland_size_range: (0.22, 0.3),
        gland_eccentricity_range: (0.3, 0.6),
        lesion_prevalence: 0.4,
        lesion_intensity_shift: 0.5,
        image_size: (64, 64),
        pixel_spacing: (0.5, 0.5),
    };
    let sizes = DETECTION_CLIENT_SIZES;
    vec![
        ClientProfile {
            noise_sigma: 0.15,
            contrast_gain: 1.6,
            intensity_offset: -0.4,
            lesion_intensity_shift: 0.45,
            lesion_prevalence: 0.45,
            ..base("D1", sizes[0])
        },
        ClientProfile {
            noise_sigma: 0.12,
            contrast_gain: 1.0,
            intensity_offset: 0.0,
            lesion_intensity_shift: 0.3,
            lesion_prevalence: 0.35,
            ..base("D2", sizes[1])
        },
        ClientProfile {
            noise_sigma: 0.3,
            contrast_gain: 0.6,
            intensity_offset: 0.4,
            lesion_intensity_shift: 0.45,
            lesion_prevalence: 0.4,
            gland_size_range: (0.2, 0.27),
            ..base("D3", sizes[2])
        },
    ]
}

/// Independent detection test profile (199 cases).
pub fn default_detection_independent() -> ClientProfile {
    ClientProfile {
        client_id: "INHOUSE".into(),
        task: Task::Detection,
        n_cases: 199,
        noise_sigma: 0.18,
        contrast_gain: 1.0,
        intensity_offset: 0.05,
        gland_size_range: (0.2, 0.3),
        gland_eccentricity_range: (0.3, 0.65),
        lesion_prevalence: 0.4,
        lesion_intensity_shift: 0.3,
        image_size: (64, 64),
        pixel_spacing: (0.5, 0.5),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CaseSidecar {
    case_id: String,
    lesion_significant: Vec<bool>,
    pixel_spacing: (f64, f64),
}

/// File stems written for one case inside a dataset directory.
pub fn case_files(case_id: &str) -> [String; 4] {
    [
        format!("{case_id}.image.fstn"),
        format!("{case_id}.gland.fstn"),
        format!("{case_id}.lesions.fstn"),
        format!("{case_id}.json"),
    ]
}

pub fn save_case(dir: &Path, case: &SyntheticCase) -> Result<()> {
    let (h, w) = case.shape();
    let [image, gland, lesions, sidecar] = case_files(&case.case_id);
    let mut pixels = Vec::with_capacity(case.channels.len() * h * w);
    for ch in &case.channels {
        pixels.extend_from_slice(ch.as_slice());
    }
    Tensor::new(vec![case.channels.len(), h, w], TensorData::F64(pixels))?
        .write(&dir.join(image))?;
    Tensor::new(
        vec![h, w],
        TensorData::U8(
            case.gland_mask
                .as_slice()
                .iter()
                .map(|&b| b as u8)
                .collect(),
        ),
    )?
    .write(&dir.join(gland))?;
    Tensor::new(
        vec![h, w],
        TensorData::U16(case.lesion_labels.as_slice().to_vec()),
    )?
    .write(&dir.join(lesions))?;
    let meta = CaseSidecar {
        case_id: case.case_id.clone(),
        lesion_significant: case.lesion_significant.clone(),
        pixel_spacing: case.pixel_spacing,
    };
    let path = dir.join(sidecar);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_case(dir: &Path, case_id: &str) -> Result<SyntheticCase> {
    let [image, gland, lesions, sidecar] = case_files(case_id);
    let path = dir.join(&sidecar);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CaseSidecar = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;

    let image_path = dir.join(image);
    let t = Tensor::read(&image_path)?;
    let (c, h, w) = match (t.dims.as_slice(), &t.data) {
        ([c, h, w], TensorData::F64(_)) => (*c, *h, *w),
        _ => return Err(Error::format(&image_path, "expected f64 tensor of rank 3")),
    };
    let TensorData::F64(pixels) = t.data else {
        unreachable!()
    };
    let channels = pixels
        .chunks_exact(h * w)
        .take(c)
        .map(|chunk| Image::from_vec(h, w, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;

    let gland_path = dir.join(gland);
    let gland_mask = match Tensor::read(&gland_path)? {
        Tensor {
            dims,
            data: TensorData::U8(v),
        } if dims == [h, w] => Mask::from_vec(h, w, v.into_iter().map(|b| b != 0).collect())?,
        _ => {
            return Err(Error::format(
                &gland_path,
                "expected u8 tensor matching the image",
            ))
        }
    };
    let lesion_path = dir.join(lesions);
    let lesion_labels = match Tensor::read(&lesion_path)? {
        Tensor {
            dims,
            data: TensorData::U16(v),
        } if dims == [h, w] => LabelImage::from_vec(h, w, v)?,
        _ => {
            return Err(Error::format(
                &lesion_path,
                "expected u16 tensor matching the image",
            ))
        }
    };
    let case = SyntheticCase {
        case_id: meta.case_id,
        channels,
        gland_mask,
        lesion_labels,
        lesion_significant: meta.lesion_significant,
        pixel_spacing: meta.pixel_spacing,
    };
    case.validate()?;
    Ok(case)
}
