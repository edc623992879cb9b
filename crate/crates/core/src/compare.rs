//! Aggregator comparison and token/pooling ablation harness.
//!
//! Every (task, setting, seed) cell trains one model from scratch on the
//! same dataset; the table reports mean ± sample standard deviation of the
//! best validation AUC (and the matching test AUC) per task and setting.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::fusion::{AggregatorKind, Pooling};
use crate::training::Session;

/// Token counts swept by the ablation.
pub const ABLATION_TOKENS: [usize; 3] = [64, 256, 512];

#[derive(Clone, Debug, PartialEq)]
pub struct CompareSpec {
    pub aggregators: Vec<AggregatorKind>,
    pub seeds: Vec<u64>,
    pub tasks: Vec<Task>,
    pub ablate: bool,
}

/// One model setting of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Setting {
    pub label: String,
    pub kind: AggregatorKind,
    pub n_tokens: usize,
    pub pooling: Pooling,
}

/// Row label: the aggregator, "Large" for 512 tokens, "+" for max pooling.
pub fn ablation_label(kind: AggregatorKind, n_tokens: usize, pooling: Pooling) -> String {
    let size = if n_tokens == 512 { " Large".to_string() } else { format!(" N{n_tokens}") };
    let plus = if pooling == Pooling::Max { "+" } else { "" };
    format!("{kind}{size}{plus}")
}

impl CompareSpec {
    pub fn settings(&self, base: &RunConfig) -> Vec<Setting> {
        let mut out = Vec::new();
        for &kind in &self.aggregators {
            if self.ablate {
                for n in ABLATION_TOKENS {
                    for pooling in [Pooling::Max, Pooling::Mean] {
                        out.push(Setting { label: ablation_label(kind, n, pooling), kind, n_tokens: n, pooling });
                    }
                }
            } else {
                let (n_tokens, pooling) = (base.model.n_tokens, base.model.pooling);
                out.push(Setting { label: kind.name().to_string(), kind, n_tokens, pooling });
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub task: Task,
    pub label: String,
    pub seed: u64,
    pub val_auc: Option<f64>,
    pub test_auc: Option<f64>,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub task: Task,
    pub setting: Setting,
    pub val: Vec<f64>,
    pub test: Vec<f64>,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareTable {
    pub rows: Vec<TableRow>,
    pub cells: Vec<CellResult>,
    pub base_hash: String,
}

impl CompareTable {
    pub const HEADER: &'static str =
        "task,setting,aggregator,n_tokens,pooling,seeds,val_auc_mean,val_auc_sd,test_auc_mean,test_auc_sd,config_hash";

    pub fn row(&self, task: Task, label: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.task == task && r.setting.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let (vm, vs) = mean_sd(&r.val);
            let (tm, ts) = mean_sd(&r.test);
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{vm:.6},{vs:.6},{tm:.6},{ts:.6},{}",
                r.task,
                r.setting.label,
                r.setting.kind,
                r.setting.n_tokens,
                r.setting.pooling.name(),
                r.val.len(),
                self.base_hash
            );
        }
        s
    }
}

/// Runs every cell serially. `on_cell` sees each result as it completes.
pub fn run(base: &RunConfig, spec: &CompareSpec, out_dir: &Path, mut on_cell: impl FnMut(&CellResult)) -> Result<CompareTable> {
    if spec.seeds.is_empty() || spec.tasks.is_empty() || spec.aggregators.is_empty() {
        return Err(Error::Config("compare needs at least one task, aggregator and seed".into()));
    }
    let settings = spec.settings(base);
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for &task in &spec.tasks {
        let mut task_cfg = base.clone();
        task_cfg.task = task;
        let ds = Dataset::load(&task_cfg.task_dir())?;
        for setting in &settings {
            let mut row = TableRow { task, setting: setting.clone(), val: Vec::new(), test: Vec::new() };
            for &seed in &spec.seeds {
                let mut cfg = task_cfg.clone();
                cfg.seed = seed;
                cfg.model.aggregator = setting.kind;
                cfg.model.n_tokens = setting.n_tokens;
                cfg.model.pooling = setting.pooling;
                let mut session = Session::new(cfg)?;
                let data = session.prepare(&ds)?;
                let dir = out_dir.join(task.name()).join(setting.label.replace(' ', "_")).join(format!("seed{seed}"));
                let outcome = session.fit(&data, &dir)?;
                let cell = CellResult {
                    task,
                    label: setting.label.clone(),
                    seed,
                    val_auc: outcome.best_val_auc,
                    test_auc: outcome.test_auc,
                    config_hash: session.hash.clone(),
                };
                on_cell(&cell);
                row.val.extend(cell.val_auc);
                row.test.extend(cell.test_auc);
                cells.push(cell);
            }
            rows.push(row);
        }
    }
    let table = CompareTable { rows, cells, base_hash: base.hash() };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("compare.csv");
    std::fs::write(&path, table.to_csv()).map_err(|e| Error::io(&path, e))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_the_ablation_convention() {
        assert_eq!(ablation_label(AggregatorKind::Co, 512, Pooling::Max), "co Large+");
        assert_eq!(ablation_label(AggregatorKind::Co, 64, Pooling::Mean), "co N64");
        assert_eq!(ablation_label(AggregatorKind::VisionSelf, 256, Pooling::Max), "vision_self N256+");
    }

    #[test]
    fn ablation_grid_is_tokens_by_pooling() {
        let spec = CompareSpec { aggregators: vec![AggregatorKind::Co], seeds: vec![0], tasks: vec![Task::Malignancy], ablate: true };
        let s = spec.settings(&RunConfig::default());
        assert_eq!(s.len(), 6);
        assert!(s.iter().any(|x| x.n_tokens == 512 && x.pooling == Pooling::Mean));
    }

    #[test]
    fn mean_sd_matches_hand_values() {
        let (m, s) = mean_sd(&[0.7, 0.8, 0.9]);
        assert!((m - 0.8).abs() < 1e-12);
        assert!((s - 0.1).abs() < 1e-12);
        assert_eq!(mean_sd(&[0.5]), (0.5, 0.0));
    }
}
