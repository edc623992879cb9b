use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn full_record() -> MetadataRecord {
    MetadataRecord {
        age: Some(54),
        nationality: Some("swiss".into()),
        device_manufacturer: Some("hologic".into()),
        device_model: Some("selenia".into()),
        institution: Some("riverside".into()),
        exam_year: Some(2019),
        breast_density: Some(Density::C),
        birads: Some(2),
    }
}

fn random_record(rng: &mut ChaCha8Rng, domains: &Domains) -> MetadataRecord {
    let pick = |xs: &[String], rng: &mut ChaCha8Rng| {
        (rng.gen::<f64>() > 0.2).then(|| xs[rng.gen_range(0..xs.len())].clone())
    };
    MetadataRecord {
        nationality: pick(&domains.nationality, rng),
        device_manufacturer: pick(&domains.device_manufacturer, rng),
        device_model: pick(&domains.device_model, rng),
        institution: pick(&domains.institution, rng),
        age: (rng.gen::<f64>() > 0.2).then(|| rng.gen_range(18..=120)),
        exam_year: (rng.gen::<f64>() > 0.2).then(|| rng.gen_range(1990..=2100)),
        breast_density: (rng.gen::<f64>() > 0.2).then(|| Density::ALL[rng.gen_range(0..4)]),
        birads: (rng.gen::<f64>() > 0.2).then(|| rng.gen_range(0..=6)),
    }
}

#[test]
fn golden_report() {
    let text = render_report(&full_record(), &Template::default(), &Domains::default()).unwrap();
    assert_eq!(
        text,
        "a 54 year old patient of swiss . exam from 2019 at riverside on a hologic selenia device . \
         breast density category c . birads 2 ."
    );
}

#[test]
fn missing_age_reads_unknown_age() {
    let mut r = full_record();
    r.age = None;
    let text = render_report(&r, &Template::default(), &Domains::default()).unwrap();
    assert!(text.contains("patient of unknown age"), "{text}");
}

#[test]
fn all_missing_renders_unknown_everywhere_without_unk() {
    let template = Template::default();
    let record = MetadataRecord::default();
    for seg in template.segments(&record).iter().filter(|s| s.slot.is_some()) {
        assert!(seg.text.split_whitespace().any(|w| w == MISSING), "{seg:?}");
    }
    let vocab = build_vocab(&template, &Domains::default());
    let enc = encode_text(&template.render(&record), &vocab, 64);
    assert!(enc.len > 0 && !enc.ids.contains(&UNK_ID));
}

#[test]
fn validation_names_the_field() {
    let domains = Domains::default();
    let cases: Vec<(fn(&mut MetadataRecord), &str)> = vec![
        (|r| r.age = Some(12), "age"),
        (|r| r.exam_year = Some(1980), "exam_year"),
        (|r| r.birads = Some(7), "birads"),
        (|r| r.nationality = Some("martian".into()), "nationality"),
        (|r| r.institution = Some(String::new()), "institution"),
    ];
    for (mutate, field) in cases {
        let mut r = full_record();
        mutate(&mut r);
        match render_report(&r, &Template::default(), &domains) {
            Err(Error::Validation { field: f, .. }) => assert_eq!(f, field),
            other => panic!("expected validation error for {field}, got {other:?}"),
        }
    }
    assert!("E".parse::<Density>().is_err());
}

#[test]
fn vocab_is_deterministic_and_reserves_ids() {
    let a = build_vocab(&Template::default(), &Domains::default());
    let b = build_vocab(&Template::default(), &Domains::default());
    assert_eq!(a, b);
    assert_eq!(a.token(PAD_ID), Some("<pad>"));
    assert_eq!(a.token(UNK_ID), Some("<unk>"));
    let rest = &a.tokens()[2..];
    assert!(rest.windows(2).all(|w| w[0] < w[1]), "sorted, unique");
}

#[test]
fn empty_domains_give_reserved_plus_template_words() {
    let template = Template::default();
    let vocab = build_vocab(&template, &Domains::empty());
    let mut lexicon: Vec<String> = template.lexicon();
    lexicon.sort();
    lexicon.dedup();
    assert_eq!(vocab.len(), 2 + lexicon.len());
    assert_eq!(&vocab.tokens()[2..], lexicon.as_slice());
}

#[test]
fn fuzzed_reports_encode_without_unk() {
    let domains = Domains::default();
    let template = Template::default();
    let vocab = build_vocab(&template, &domains);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let r = random_record(&mut rng, &domains);
        let text = render_report(&r, &template, &domains).unwrap();
        assert!(text.split_whitespace().count() <= 64);
        let enc = encode_text(&text, &vocab, 64);
        assert!(!enc.ids.contains(&UNK_ID), "{text}");
    }
}

#[test]
fn encode_examples() {
    let vocab = build_vocab(&Template::default(), &Domains::default());
    let enc = encode_text("unknown age", &vocab, 4);
    assert_eq!(enc.ids, vec![vocab.id("unknown"), vocab.id("age"), PAD_ID, PAD_ID]);
    assert_eq!(enc.len, 2);
    assert_eq!(enc.mask(), vec![true, true, false, false]);

    let enc = encode_text("a 54 year old patient", &vocab, 3);
    assert_eq!(enc.ids, vec![vocab.id("a"), vocab.id("5"), vocab.id("4")]);
    assert_eq!(enc.len, 3);

    assert_eq!(encode_text("zebra", &vocab, 1).ids, vec![UNK_ID]);
}

#[test]
fn tokenizer_splits_digits_and_punctuation() {
    assert_eq!(tokenize("Exam 2019, C."), vec!["exam", "2", "0", "1", "9", ",", "c", "."]);
}

#[test]
fn template_without_birads_drops_the_sentence() {
    let text = Template::default().without_birads().render(&full_record());
    assert!(!text.contains("birads"));
    assert!(text.ends_with("category c ."));
}

#[test]
fn template_rejects_unknown_slots() {
    assert!(Template::parse("a {weight} patient").is_err());
    assert!(Template::parse("a {age patient").is_err());
    assert!(Template::parse("\n\n").is_err());
}

#[test]
fn metadata_csv_round_trips() {
    let mut partial = full_record();
    partial.age = None;
    partial.breast_density = None;
    let rows = vec![
        MetadataRow {
            exam_id: "e0".into(),
            image_id: "i0".into(),
            record: full_record(),
            label_malignancy: 1,
            label_calcification: 0,
        },
        MetadataRow {
            exam_id: "e1".into(),
            image_id: "i1".into(),
            record: partial,
            label_malignancy: 0,
            label_calcification: 1,
        },
    ];
    let mut buf = Vec::new();
    write_metadata_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with(&METADATA_HEADER.join(",")));
    assert!(text.contains("e1,i1,,swiss"));
    assert_eq!(read_metadata_csv(buf.as_slice()).unwrap(), rows);
}

proptest! {
    #[test]
    fn clearing_a_field_changes_only_its_slot(seed in 0u64..10_000, which in 0usize..8) {
        let domains = Domains::default();
        let template = Template::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let record = random_record(&mut rng, &domains);
        let field = Field::ALL[which];
        let mut cleared = record.clone();
        cleared.clear(field);
        let before = template.segments(&record);
        let after = template.segments(&cleared);
        prop_assert_eq!(before.len(), after.len());
        for (b, a) in before.iter().zip(&after) {
            if b.slot != Some(field) {
                prop_assert_eq!(b, a);
            }
        }
    }

    #[test]
    fn render_is_pure(seed in 0u64..10_000) {
        let domains = Domains::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let record = random_record(&mut rng, &domains);
        let t = Template::default();
        prop_assert_eq!(t.render(&record), t.render(&record.clone()));
    }
}
