use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn small(n: usize) -> SynthConfig {
    SynthConfig { n_train: n, n_test: n / 4, oracle_mc: 10_000, ..SynthConfig::default() }
}

#[test]
fn samples_are_deterministic_and_valid() {
    let cfg = small(40);
    let domains = Domains::default();
    for i in 0..40 {
        let a = generate_sample(&cfg, &domains, i);
        let b = generate_sample(&cfg, &domains, i);
        assert_eq!(a, b);
        a.record.validate(&domains).unwrap();
        assert_eq!(a.image.len(), 64 * 64);
        assert!(a.image.iter().all(|v| (0.0..=1.0).contains(v)));
        if a.label == 1 {
            assert!(a.amplitude.is_some());
        }
    }
    // Generation order does not matter: sample 7 alone equals sample 7 in sequence.
    let other_seed = SynthConfig { seed: 1, ..cfg.clone() };
    assert_ne!(generate_sample(&cfg, &domains, 7).image, generate_sample(&other_seed, &domains, 7).image);
}

#[test]
fn zero_prevalence_gives_no_positives_or_lesions() {
    let cfg = SynthConfig { p_pos: 0.0, distractor_prob: 0.0, ..small(200) };
    for i in 0..200 {
        let s = generate_sample(&cfg, &Domains::default(), i);
        assert_eq!(s.label, 0);
        assert!(s.amplitude.is_none());
    }
    // With distractors enabled negatives may carry look-alikes, but nothing is labelled positive.
    let cfg = SynthConfig { p_pos: 0.0, ..small(200) };
    assert!((0..200).all(|i| generate_sample(&cfg, &Domains::default(), i).label == 0));
}

#[test]
fn positive_density_distribution_converges() {
    let cfg = SynthConfig::default();
    let mut counts = [0usize; 4];
    let mut n = 0;
    for i in 0..50_000u64 {
        let lat = draw_latent(&cfg, &mut sample_rng(99, i));
        if lat.label == 1 {
            counts[lat.density] += 1;
            n += 1;
        }
    }
    for (c, p) in counts.iter().zip(cfg.density_pos) {
        assert!((*c as f64 / n as f64 - p).abs() < 0.02, "{counts:?}");
    }
}

#[test]
fn birads_can_be_excluded() {
    let cfg = SynthConfig { include_birads: false, ..small(50) };
    assert!((0..50).all(|i| generate_sample(&cfg, &Domains::default(), i).record.birads.is_none()));
}

#[test]
fn calcification_plants_dots() {
    let cfg = SynthConfig { task: Task::Calcification, p_pos: 1.0, strong_prob: 1.0, strong_amp: Gauss::new(0.8, 0.0), ..small(10) };
    let s = generate_sample(&cfg, &Domains::default(), 3);
    let bright = s.image.iter().filter(|&&v| v > 0.7).count();
    assert!((3..=60).contains(&bright), "{bright} bright pixels");
    assert_eq!(s.to_row(3, Task::Calcification).label_calcification, 1);
    assert_eq!(s.to_row(3, Task::Calcification).label_malignancy, 0);
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(SynthConfig { p_pos: 1.5, ..small(10) }.validate().is_err());
    assert!(SynthConfig { density_pos: [0.5, 0.5, 0.5, 0.0], ..small(10) }.validate().is_err());
    assert!(SynthConfig { dots_min: 9, dots_max: 3, ..small(10) }.validate().is_err());
}

#[test]
fn dataset_files_round_trip_and_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(40);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    generate_dataset(&cfg, &Domains::default(), &a).unwrap();
    generate_dataset(&cfg, &Domains::default(), &b).unwrap();
    for f in DATASET_FILES {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ds = Dataset::load(&a).unwrap();
    assert_eq!(ds.len(), 50);
    assert_eq!(ds.indices(Split::Test).len(), 10);
    assert_eq!(ds.indices(Split::Val).len(), 4);
    assert_eq!(ds.image(5), generate_sample(&cfg, &Domains::default(), 5).image.as_slice());
    assert!(ds.oracle.is_some());
    assert!(Dataset::load(&dir.path().join("missing")).is_err());
}

#[test]
fn oracle_default_gap_exceeds_five_points() {
    let r = bayes_auc_oracle(&SynthConfig::default(), 100_000, 1).unwrap();
    assert!(r.gap > 0.05, "{r:?}");
    let r2 = bayes_auc_oracle(&SynthConfig::default(), 100_000, 2).unwrap();
    assert!((r.auc_joint - r2.auc_joint).abs() < 0.01);
    assert!((r.auc_image_only - r2.auc_image_only).abs() < 0.01);
}

#[test]
fn oracle_without_metadata_shift_has_no_gap() {
    let cfg = SynthConfig {
        density_pos: SynthConfig::default().density_neg,
        age_pos: SynthConfig::default().age_neg,
        ..SynthConfig::default()
    };
    let r = bayes_auc_oracle(&cfg, 50_000, 3).unwrap();
    assert!(r.gap.abs() < 0.01, "{r:?}");
}

#[test]
fn oracle_separable_limit_is_one() {
    let cfg = SynthConfig {
        p_pos: 0.5,
        distractor_prob: 1.0,
        strong_amp: Gauss::new(0.9, 0.01),
        faint_amp: Gauss::new(0.9, 0.01),
        distractor_amp: Gauss::new(0.1, 0.01),
        ..SynthConfig::default()
    };
    let r = bayes_auc_oracle(&cfg, 20_000, 4).unwrap();
    assert!(r.auc_image_only > 0.999 && r.auc_joint > 0.999, "{r:?}");
    assert!(bayes_auc_oracle(&cfg, 100, 4).is_err());
}

// ── Preprocessing ───────────────────────────────────────────────────────────

#[test]
fn dark_image_thresholds_to_zero() {
    let img = vec![30.0 / 255.0; 64];
    assert!(preprocess(&img, 8, 8, 8, 8, DEFAULT_THRESHOLD).iter().all(|&v| v == 0.0));
}

#[test]
fn single_bright_pixel_fills_output() {
    let mut img = vec![0.0f32; 100];
    img[37] = 0.9;
    let out = preprocess(&img, 10, 10, 6, 6, DEFAULT_THRESHOLD);
    assert!(out.iter().all(|&v| v == 0.9));
}

#[test]
fn resize_to_same_size_is_identity() {
    let img: Vec<f32> = (0..30).map(|i| i as f32 / 30.0).collect();
    assert_eq!(resize_bilinear(&img, 5, 6, 5, 6), img);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn preprocess_is_idempotent(seed in 0u64..1_000, h in 4usize..20, w in 4usize..20, out in 4usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Random bright region on a dark background.
        let (y0, x0) = (rng.gen_range(0..h / 2), rng.gen_range(0..w / 2));
        let img: Vec<f32> = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                if y >= y0 && x >= x0 && rng.gen::<f64>() < 0.8 { rng.gen_range(0.0..1.0) } else { 0.05 }
            })
            .collect();
        let once = preprocess(&img, h, w, out, out, DEFAULT_THRESHOLD);
        let twice = preprocess(&once, out, out, out, out, DEFAULT_THRESHOLD);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn generated_images_survive_preprocessing() {
    let cfg = small(4);
    let s = generate_sample(&cfg, &Domains::default(), 0);
    let once = preprocess(&s.image, 64, 64, 64, 64, DEFAULT_THRESHOLD);
    let twice = preprocess(&once, 64, 64, 64, 64, DEFAULT_THRESHOLD);
    assert_eq!(once, twice);
}

// ── Augmentation ────────────────────────────────────────────────────────────

fn blob(h: usize, w: usize, cy: f64, cx: f64, sigma: f64) -> Vec<f32> {
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * sigma * sigma)).exp() as f32
        })
        .collect()
}

fn centroid(img: &[f32], w: usize) -> (f64, f64) {
    let (mut m, mut sy, mut sx) = (0.0, 0.0, 0.0);
    for (i, &v) in img.iter().enumerate() {
        m += v as f64;
        sy += v as f64 * (i / w) as f64;
        sx += v as f64 * (i % w) as f64;
    }
    (sy / m, sx / m)
}

#[test]
fn identity_draw_leaves_image_unchanged() {
    let img: Vec<f32> = (0..48 * 40).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
    let out = augment_with(&img, 48, 40, &AugmentParams::identity());
    for (a, b) in img.iter().zip(&out) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn rotation_keeps_centred_blob_in_place() {
    let img = blob(64, 64, 31.5, 31.5, 4.0);
    for deg in [-20.0, -7.5, 5.0, 13.0, 20.0, 90.0] {
        let p = AugmentParams { rotation_deg: deg, ..AugmentParams::identity() };
        let (cy, cx) = centroid(&augment_with(&img, 64, 64, &p), 64);
        assert!((cy - 31.5).abs() < 1.0 && (cx - 31.5).abs() < 1.0, "{deg}: ({cy}, {cx})");
    }
}

#[test]
fn augmentation_output_is_bounded_and_parameters_in_range() {
    let cfg = AugmentConfig::default();
    let img = blob(32, 32, 10.0, 20.0, 3.0);
    for seed in 0..20 {
        let (out, p) = augment(&img, 32, 32, &cfg, seed);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(p.rotation_deg.abs() <= 20.0 && p.shear_deg.abs() <= 20.0);
        assert!((0.8..=1.2).contains(&p.scale));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let p = AugmentParams::draw(&cfg, &mut rng);
        assert!(p.rotation_deg.abs() <= 20.0 && p.shear_deg.abs() <= 20.0);
        assert!((0.8..=1.2).contains(&p.scale));
        assert!(p.translate_x.abs() <= 0.1 && p.translate_y.abs() <= 0.1);
        assert_eq!((p.elastic_alpha, p.elastic_sigma), (10.0, 5.0));
    }
}
