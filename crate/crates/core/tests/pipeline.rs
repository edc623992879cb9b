//! End-to-end use of the public API: synthesize, train, reload, re-score.

use cofuse_core::data::{generate_dataset, Split};
use cofuse_core::fusion::AggregatorKind;
use cofuse_core::report::Domains;
use cofuse_core::training::{self, Checkpoint};
use cofuse_core::RunConfig;

fn tiny(root: &std::path::Path) -> RunConfig {
    let text = format!(
        "data.dir = {}\n\
         data.n_train = 96\n\
         data.n_test = 32\n\
         data.oracle_mc = 10000\n\
         model.channels = 4,8,8\n\
         model.d_text = 8\n\
         model.l_max = 32\n\
         tokenizer.n_tokens = 8\n\
         aggregator.depth = 1\n\
         aggregator.heads = 2\n\
         head.hidden = 16\n\
         head.out = 8\n\
         train.batch_size = 16\n\
         train.epochs = 2\n",
        root.join("data").display()
    );
    RunConfig::parse(&text).unwrap()
}

#[test]
fn config_text_round_trips_through_its_canonical_form() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    let again = RunConfig::parse(&cfg.canonical()).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.hash(), cfg.hash());
}

#[test]
fn checkpoint_reproduces_the_reported_test_auc() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.model.aggregator = AggregatorKind::Co;
    let report = generate_dataset(&cfg.synth(), &Domains::default(), &cfg.task_dir()).unwrap();
    assert!(report.auc_joint >= report.auc_image_only);

    let (_, outcome) = training::train(&cfg, &tmp.path().join("run")).unwrap();
    assert!(outcome.step_losses.iter().all(|l| l.is_finite()));
    assert!((1..=2).contains(&outcome.best_epoch));

    let ck = Checkpoint::load(&outcome.checkpoint).unwrap();
    assert_eq!(ck.config.hash(), cfg.hash());
    let eval = training::evaluate(&ck, &cfg.task_dir(), Split::Test).unwrap();
    assert_eq!(eval.n, 32);
    let (a, b) = (eval.auc.unwrap(), outcome.test_auc.unwrap());
    assert!((a - b).abs() < 1e-12, "reloaded {a} vs reported {b}");
}
