//! Seeded synthetic multi-modal benchmark.
//!
//! Every sample is drawn from its own counter-based random stream keyed by
//! `(seed, index)`, so generation order and parallelism never affect the
//! result. A label drives both modalities: the image carries a blob (or
//! near-pixel dots) whose amplitude is weakly informative, and the metadata
//! carries shifted density and age distributions.

mod augment;
mod io;
mod oracle;
mod preprocess;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use augment::{augment, augment_with, AugmentConfig, AugmentParams};
pub use io::{generate_dataset, read_images, write_images, Dataset, ImageDesc, Split, DATASET_FILES};
pub use oracle::{bayes_auc_oracle, OracleReport};
pub use preprocess::{preprocess, resize_bilinear, DEFAULT_THRESHOLD};

use crate::error::{Error, Result};
use crate::report::{Density, Domains, MetadataRecord, MetadataRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Malignancy,
    Calcification,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Malignancy => "malignancy",
            Task::Calcification => "calcification",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "malignancy" => Ok(Task::Malignancy),
            "calcification" => Ok(Task::Calcification),
            _ => Err(Error::Config(format!("unknown task `{s}` (malignancy, calcification)"))),
        }
    }
}

/// Mean and standard deviation of a normal distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gauss {
    pub mean: f64,
    pub sd: f64,
}

impl Gauss {
    pub const fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }

    fn sample(self, rng: &mut ChaCha8Rng) -> f64 {
        if self.sd == 0.0 {
            return self.mean;
        }
        Normal::new(self.mean, self.sd).expect("validated sd").sample(rng)
    }
}

/// Generator settings. Every planted-signal constant lives here so the
/// signal strength can be recalibrated against [`bayes_auc_oracle`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub height: usize,
    pub width: usize,
    pub task: Task,
    pub p_pos: f64,
    /// Probability that a positive's lesion is strong rather than faint.
    pub strong_prob: f64,
    pub strong_amp: Gauss,
    pub faint_amp: Gauss,
    /// Probability that a negative carries a look-alike distractor.
    pub distractor_prob: f64,
    pub distractor_amp: Gauss,
    pub blob_sigma: f64,
    pub dots_min: usize,
    pub dots_max: usize,
    pub dot_sigma: f64,
    pub density_pos: [f64; 4],
    pub density_neg: [f64; 4],
    pub age_pos: Gauss,
    pub age_neg: Gauss,
    pub age_min: u32,
    pub age_max: u32,
    pub background: Gauss,
    pub texture_amp: f64,
    pub missing_rate: f64,
    pub include_birads: bool,
    pub val_fraction: f64,
    pub seed: u64,
    pub oracle_mc: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 8000,
            n_test: 2000,
            height: 64,
            width: 64,
            task: Task::Malignancy,
            p_pos: 0.3,
            strong_prob: 0.75,
            strong_amp: Gauss::new(0.8, 0.3),
            faint_amp: Gauss::new(0.3, 0.1),
            distractor_prob: 0.8,
            distractor_amp: Gauss::new(0.4, 0.1),
            blob_sigma: 3.0,
            dots_min: 5,
            dots_max: 15,
            dot_sigma: 0.6,
            density_pos: [0.05, 0.20, 0.35, 0.40],
            density_neg: [0.20, 0.40, 0.30, 0.10],
            age_pos: Gauss::new(60.0, 8.0),
            age_neg: Gauss::new(52.0, 10.0),
            age_min: 35,
            age_max: 85,
            background: Gauss::new(0.2, 0.05),
            texture_amp: 0.05,
            missing_rate: 0.05,
            include_birads: true,
            val_fraction: 0.1,
            seed: 0,
            oracle_mc: 100_000,
        }
    }
}

pub const EXAM_YEARS: std::ops::RangeInclusive<u32> = 2005..=2022;

impl SynthConfig {
    pub fn n_samples(&self) -> usize {
        self.n_train + self.n_test
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("p_pos", self.p_pos),
            ("strong_prob", self.strong_prob),
            ("distractor_prob", self.distractor_prob),
            ("missing_rate", self.missing_rate),
            ("val_fraction", self.val_fraction),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("data.{name} = {p} is not a probability")));
            }
        }
        for (name, d) in [("density_pos", self.density_pos), ("density_neg", self.density_neg)] {
            if d.iter().any(|&p| p < 0.0) || (d.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("data.{name} = {d:?} is not a distribution")));
            }
        }
        let gauss = [
            ("strong_amp", self.strong_amp),
            ("faint_amp", self.faint_amp),
            ("distractor_amp", self.distractor_amp),
            ("age_pos", self.age_pos),
            ("age_neg", self.age_neg),
            ("background", self.background),
        ];
        for (name, g) in gauss {
            if !(g.sd >= 0.0 && g.sd.is_finite() && g.mean.is_finite()) {
                return Err(Error::Config(format!("data.{name} has invalid parameters {g:?}")));
            }
        }
        if self.n_train == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("data.n_train and image size must be positive".into()));
        }
        if self.dots_min == 0 || self.dots_min > self.dots_max {
            return Err(Error::Config(format!("data.dots range {}..={} is empty", self.dots_min, self.dots_max)));
        }
        if !(18..=120).contains(&self.age_min) || self.age_max > 120 || self.age_min > self.age_max {
            return Err(Error::Config(format!("data.age range {}..={} is invalid", self.age_min, self.age_max)));
        }
        if self.blob_sigma <= 0.0 || self.dot_sigma <= 0.0 {
            return Err(Error::Config("data.blob_sigma and data.dot_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// One generated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Row-major `H×W` pixels in `[0, 1]`.
    pub image: Vec<f32>,
    pub record: MetadataRecord,
    pub label: u8,
    /// Planted lesion amplitude; `None` when the image has no lesion.
    pub amplitude: Option<f64>,
}

impl Sample {
    pub fn to_row(&self, index: usize, task: Task) -> MetadataRow {
        let (m, c) = match task {
            Task::Malignancy => (self.label, 0),
            Task::Calcification => (0, self.label),
        };
        MetadataRow {
            exam_id: format!("e{index:05}"),
            image_id: image_id(index),
            record: self.record.clone(),
            label_malignancy: m,
            label_calcification: c,
        }
    }
}

pub fn image_id(index: usize) -> String {
    format!("i{index:05}")
}

pub(crate) fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn categorical(rng: &mut ChaCha8Rng, probs: &[f64; 4]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(3)
}

/// Latent draw shared by the generator and the oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Latent {
    pub label: u8,
    pub amplitude: Option<f64>,
    pub density: usize,
    pub age: u32,
    pub density_missing: bool,
    pub age_missing: bool,
}

pub(crate) fn draw_latent(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Latent {
    let label = u8::from(rng.gen::<f64>() < cfg.p_pos);
    let amplitude = if label == 1 {
        let strong = rng.gen::<f64>() < cfg.strong_prob;
        Some(if strong { cfg.strong_amp.sample(rng) } else { cfg.faint_amp.sample(rng) })
    } else {
        (rng.gen::<f64>() < cfg.distractor_prob).then(|| cfg.distractor_amp.sample(rng))
    };
    let (dens, age_dist) = if label == 1 { (&cfg.density_pos, cfg.age_pos) } else { (&cfg.density_neg, cfg.age_neg) };
    let density = categorical(rng, dens);
    let age = age_dist.sample(rng).round().clamp(cfg.age_min as f64, cfg.age_max as f64) as u32;
    let density_missing = rng.gen::<f64>() < cfg.missing_rate;
    let age_missing = rng.gen::<f64>() < cfg.missing_rate;
    Latent { label, amplitude, density, age, density_missing, age_missing }
}

/// Draws sample `index` of the dataset described by `cfg`.
pub fn generate_sample(cfg: &SynthConfig, domains: &Domains, index: usize) -> Sample {
    let mut rng = sample_rng(cfg.seed, index as u64);
    let lat = draw_latent(cfg, &mut rng);

    let pick = |xs: &[String], rng: &mut ChaCha8Rng| {
        let v = (!xs.is_empty()).then(|| xs[rng.gen_range(0..xs.len())].clone());
        if rng.gen::<f64>() < cfg.missing_rate {
            None
        } else {
            v
        }
    };
    let nationality = pick(&domains.nationality, &mut rng);
    let device_manufacturer = pick(&domains.device_manufacturer, &mut rng);
    let device_model = pick(&domains.device_model, &mut rng);
    let institution = pick(&domains.institution, &mut rng);
    let year = rng.gen_range(EXAM_YEARS);
    let year_missing = rng.gen::<f64>() < cfg.missing_rate;
    let birads = rng.gen_range(0..=6u8);
    let birads_missing = rng.gen::<f64>() < cfg.missing_rate;
    let record = MetadataRecord {
        age: (!lat.age_missing).then_some(lat.age),
        nationality,
        device_manufacturer,
        device_model,
        institution,
        exam_year: (!year_missing).then_some(year),
        breast_density: (!lat.density_missing).then(|| Density::from_index(lat.density).expect("index < 4")),
        birads: (cfg.include_birads && !birads_missing).then_some(birads),
    };

    let image = render_image(cfg, &mut rng, lat.amplitude);
    Sample { image, record, label: lat.label, amplitude: lat.amplitude }
}

fn render_image(cfg: &SynthConfig, rng: &mut ChaCha8Rng, amplitude: Option<f64>) -> Vec<f32> {
    let (h, w) = (cfg.height, cfg.width);
    let mut img = vec![0f64; h * w];
    for v in img.iter_mut() {
        *v = cfg.background.sample(rng);
    }
    // Smooth texture: two low-frequency plane waves.
    for _ in 0..2 {
        let fx = rng.gen_range(0.5..2.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let fy = rng.gen_range(0.5..2.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for y in 0..h {
            for x in 0..w {
                let arg = std::f64::consts::TAU * (fx * x as f64 / w as f64 + fy * y as f64 / h as f64) + phase;
                img[y * w + x] += cfg.texture_amp * arg.sin();
            }
        }
    }
    if let Some(a) = amplitude {
        match cfg.task {
            Task::Malignancy => {
                let margin = (3.0 * cfg.blob_sigma).min(h.min(w) as f64 / 2.0 - 1.0).max(0.0);
                let cy = rng.gen_range(margin..=(h as f64 - 1.0 - margin));
                let cx = rng.gen_range(margin..=(w as f64 - 1.0 - margin));
                add_gaussian(&mut img, h, w, cy, cx, cfg.blob_sigma, a);
            }
            Task::Calcification => {
                // A tight cluster of near-pixel dots.
                let count = rng.gen_range(cfg.dots_min..=cfg.dots_max);
                let margin = (h.min(w) as f64 / 4.0).min(12.0);
                let cy = rng.gen_range(margin..=(h as f64 - 1.0 - margin));
                let cx = rng.gen_range(margin..=(w as f64 - 1.0 - margin));
                for _ in 0..count {
                    let dy = rng.gen_range(-6.0..=6.0f64);
                    let dx = rng.gen_range(-6.0..=6.0f64);
                    let (py, px) = ((cy + dy).round(), (cx + dx).round());
                    add_gaussian(&mut img, h, w, py, px, cfg.dot_sigma, a);
                }
            }
        }
    }
    img.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect()
}

fn add_gaussian(img: &mut [f64], h: usize, w: usize, cy: f64, cx: f64, sigma: f64, amp: f64) {
    let r = (4.0 * sigma).ceil() as isize;
    let (iy, ix) = (cy.round() as isize, cx.round() as isize);
    for y in (iy - r).max(0)..=(iy + r).min(h as isize - 1) {
        for x in (ix - r).max(0)..=(ix + r).min(w as isize - 1) {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            img[y as usize * w + x as usize] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
}

#[cfg(test)]
mod tests;
