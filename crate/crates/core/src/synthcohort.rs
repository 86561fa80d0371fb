//! Seeded synthetic cohorts of Monte-Carlo-dropout-like predictive samples.
//!
//! Every image gets a latent mean stroke probability and its T runs are
//! drawn from a Beta distribution with that mean. Easy images sit well on
//! the side of their true class with concentration `concentration`; hard
//! images sit near 0.5 with a quarter of that concentration, so they are
//! both wrong more often and more spread out. With probability
//! `label_noise` an image's latent mean is placed confidently on the wrong
//! side, which produces errors that carry no uncertainty signal.
//!
//! Stroke patients carry one contiguous run of stroke slices whose length
//! is Poisson distributed (truncated to the patient's image count); TIA
//! patients have no stroke images. Each patient is generated from its own
//! seeded substream, so generation order and parallelism do not matter.

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::predstore::{CohortDataset, ImageLabel, ImageRecord, PatientLabel, PatientRecord, PredictiveSamples};
use crate::{seeds, Error, Result};

/// Concentration multiplier for hard images.
pub const HARD_CONCENTRATION_SCALE: f64 = 0.25;
/// Hard images draw their latent mean uniformly from this range.
pub const HARD_MEAN_RANGE: (f64, f64) = (0.3, 0.7);
/// Easy images sit this far (uniformly) from the certain answer.
pub const EASY_DISTANCE_RANGE: (f64, f64) = (0.02, 0.25);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_stroke_patients: usize,
    pub n_tia_patients: usize,
    pub min_images: usize,
    pub max_images: usize,
    /// Target mean images per patient (binomial between min and max).
    pub mean_images: f64,
    /// Mean length of the stroke slice run in stroke patients.
    pub stroke_images_mean: f64,
    pub mc_runs: usize,
    pub concentration: f64,
    pub difficulty_mix: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    /// Cohort shape of the reference study: 355 stroke and 156 TIA patients,
    /// 21-46 images each with 15188 images in total, 12.5 stroke slices on
    /// average, 500 MC runs.
    fn default() -> Self {
        Self {
            n_stroke_patients: 355,
            n_tia_patients: 156,
            min_images: 21,
            max_images: 46,
            mean_images: 15188.0 / 511.0,
            stroke_images_mean: 12.5,
            mc_runs: 500,
            concentration: 20.0,
            difficulty_mix: 0.1,
            label_noise: 0.01,
            seed: seeds::DEFAULT_SEED,
        }
    }
}

impl GeneratorConfig {
    /// Same shape as the default with a different patient count, keeping the
    /// stroke : TIA ratio.
    pub fn scaled(patients: usize) -> Self {
        let base = Self::default();
        let stroke = ((patients as f64) * base.n_stroke_patients as f64 / 511.0).round() as usize;
        Self {
            n_stroke_patients: stroke,
            n_tia_patients: patients - stroke,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_stroke_patients + self.n_tia_patients == 0 {
            return fail("the cohort needs at least one patient".into());
        }
        if self.min_images == 0 || self.min_images > self.max_images {
            return fail(format!(
                "image range {}..={} is empty",
                self.min_images, self.max_images
            ));
        }
        if !(self.min_images as f64..=self.max_images as f64).contains(&self.mean_images) {
            return fail(format!("mean_images {} outside the image range", self.mean_images));
        }
        if !(self.stroke_images_mean > 0.0 && self.stroke_images_mean <= self.min_images as f64) {
            return fail(format!(
                "stroke_images_mean {} must be positive and at most min_images {}",
                self.stroke_images_mean, self.min_images
            ));
        }
        if self.mc_runs == 0 {
            return fail("mc_runs must be at least 1".into());
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return fail(format!("concentration {} must be positive", self.concentration));
        }
        if !(0.0..1.0).contains(&self.difficulty_mix) {
            return fail(format!("difficulty_mix {} outside [0, 1)", self.difficulty_mix));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return fail(format!("label_noise {} outside [0, 0.5)", self.label_noise));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedCounts {
    pub stroke_patients: usize,
    pub tia_patients: usize,
    pub images: usize,
    pub stroke_images: usize,
    pub hard_images: usize,
    pub noisy_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSeed {
    pub patient_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub config: GeneratorConfig,
    pub realized: RealizedCounts,
    pub patient_seeds: Vec<PatientSeed>,
}

struct GeneratedPatient {
    record: PatientRecord,
    hard: usize,
    noisy: usize,
}

fn beta_runs<R: Rng>(mean: f64, concentration: f64, runs: usize, rng: &mut R) -> Result<Vec<f64>> {
    let beta = Beta::new(mean * concentration, (1.0 - mean) * concentration)
        .map_err(|e| Error::Config(format!("beta({mean}, {concentration}): {e}")))?;
    Ok((0..runs).map(|_| beta.sample(rng).clamp(0.0, 1.0)).collect())
}

fn generate_patient(cfg: &GeneratorConfig, id: String, label: PatientLabel, seed: u64) -> Result<GeneratedPatient> {
    let mut rng = seeds::rng(seed);
    let span = (cfg.max_images - cfg.min_images) as u64;
    let extra = if span == 0 {
        0
    } else {
        let p = (cfg.mean_images - cfg.min_images as f64) / span as f64;
        Binomial::new(span, p)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(&mut rng)
    };
    let n = cfg.min_images + extra as usize;

    let stroke_slices = match label {
        PatientLabel::Tia => 0..0,
        PatientLabel::Stroke => {
            let len = Poisson::new(cfg.stroke_images_mean)
                .map_err(|e| Error::Config(e.to_string()))?
                .sample(&mut rng) as usize;
            let len = len.clamp(1, n);
            let start = rng.random_range(0..=n - len);
            start..start + len
        }
    };

    let (mut hard, mut noisy) = (0, 0);
    let mut images = Vec::with_capacity(n);
    for slice in 0..n {
        let true_label = if stroke_slices.contains(&slice) {
            ImageLabel::Stroke
        } else {
            ImageLabel::NoStroke
        };
        let flipped = rng.random::<f64>() < cfg.label_noise;
        let is_hard = rng.random::<f64>() < cfg.difficulty_mix;
        let target_stroke = (true_label == ImageLabel::Stroke) != flipped;
        let (mean, concentration) = if is_hard {
            hard += 1;
            let m = rng.random_range(HARD_MEAN_RANGE.0..HARD_MEAN_RANGE.1);
            (m, cfg.concentration * HARD_CONCENTRATION_SCALE)
        } else {
            let d = rng.random_range(EASY_DISTANCE_RANGE.0..EASY_DISTANCE_RANGE.1);
            (if target_stroke { 1.0 - d } else { d }, cfg.concentration)
        };
        noisy += usize::from(flipped && !is_hard);
        let runs = beta_runs(mean, concentration, cfg.mc_runs, &mut rng)?;
        images.push(ImageRecord {
            image_id: format!("{id}-s{slice:02}"),
            slice_index: slice as u32,
            true_label,
            samples: PredictiveSamples::from_stroke_probs(&runs)?,
        });
    }
    Ok(GeneratedPatient {
        record: PatientRecord::new(id, label, images)?,
        hard,
        noisy,
    })
}

/// Generates a cohort and its manifest; identical output for identical
/// configs regardless of thread count.
pub fn generate(config: &GeneratorConfig) -> Result<(CohortDataset, GenerationManifest)> {
    config.validate()?;
    let total = config.n_stroke_patients + config.n_tia_patients;
    let mut master = seeds::rng(config.seed);
    // interleave labels so patient order does not reveal the class
    let mut labels: Vec<PatientLabel> = std::iter::repeat_n(PatientLabel::Stroke, config.n_stroke_patients)
        .chain(std::iter::repeat_n(PatientLabel::Tia, config.n_tia_patients))
        .collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut master);
    let plan: Vec<(String, PatientLabel, u64)> = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| (format!("P{:04}", i + 1), label, master.random::<u64>()))
        .collect();

    let generated = plan
        .par_iter()
        .map(|(id, label, seed)| generate_patient(config, id.clone(), *label, *seed))
        .collect::<Result<Vec<_>>>()?;

    let realized = RealizedCounts {
        stroke_patients: config.n_stroke_patients,
        tia_patients: config.n_tia_patients,
        images: generated.iter().map(|g| g.record.images().len()).sum(),
        stroke_images: generated
            .iter()
            .flat_map(|g| g.record.images())
            .filter(|im| im.true_label == ImageLabel::Stroke)
            .count(),
        hard_images: generated.iter().map(|g| g.hard).sum(),
        noisy_images: generated.iter().map(|g| g.noisy).sum(),
    };
    debug_assert_eq!(total, generated.len());
    let dataset = CohortDataset::new(generated.into_iter().map(|g| g.record).collect())?;
    let manifest = GenerationManifest {
        config: config.clone(),
        realized,
        patient_seeds: plan
            .into_iter()
            .map(|(patient_id, _, seed)| PatientSeed { patient_id, seed })
            .collect(),
    };
    Ok((dataset, manifest))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateKind {
    /// Every run is exactly right with probability 1.
    AllConfidentCorrect,
    /// Every run is exactly 0.5.
    AllUniform,
    /// One stroke patient.
    SinglePatient,
}

/// Small fixtures with analytically known measures: 5 stroke and 5 TIA
/// patients of 21 images and 10 runs (one stroke patient for
/// `SinglePatient`). Stroke patients have stroke slices 5..15.
pub fn degenerate_cohort(kind: DegenerateKind) -> CohortDataset {
    let (n_stroke, n_tia) = match kind {
        DegenerateKind::SinglePatient => (1, 0),
        _ => (5, 5),
    };
    let patients = (0..n_stroke + n_tia)
        .map(|i| {
            let label = if i < n_stroke {
                PatientLabel::Stroke
            } else {
                PatientLabel::Tia
            };
            let id = format!("D{:02}", i + 1);
            let images = (0..21u32)
                .map(|s| {
                    let true_label = if label == PatientLabel::Stroke && (5..15).contains(&s) {
                        ImageLabel::Stroke
                    } else {
                        ImageLabel::NoStroke
                    };
                    let p = match kind {
                        DegenerateKind::AllUniform => 0.5,
                        _ if true_label == ImageLabel::Stroke => 1.0,
                        _ => 0.0,
                    };
                    ImageRecord {
                        image_id: format!("{id}-s{s:02}"),
                        slice_index: s,
                        true_label,
                        samples: PredictiveSamples::from_stroke_probs(&[p; 10]).expect("valid fixture"),
                    }
                })
                .collect();
            PatientRecord::new(id, label, images).expect("valid fixture")
        })
        .collect();
    CohortDataset::new(patients).expect("unique fixture ids")
}
