use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adamw_step, lr_at, AdamState, Checkpoint};
use crate::autodiff::{Graph, Var};
use crate::config::RunConfig;
use crate::data::{augment, preprocess, AugmentConfig, Dataset, Split, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::metrics::auc;
use crate::model::Model;
use crate::nn::{Ctx, ParamSet};
use crate::report::{build_vocab, encode_text, render_report, Domains, Field, MetadataRecord, Template, Vocabulary};
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 64;
/// Samples × visual tokens held on one tape; larger batches are split into
/// micro-batches whose gradients are accumulated.
const TOKEN_BUDGET: usize = 4096;
/// Separates the text-dropout stream from the augmentation stream.
const TEXT_DROPOUT_SALT: u64 = 0x7465_7874;

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub step: u64,
    pub split: String,
    pub loss: Option<f64>,
    pub auc: Option<f64>,
    pub lr: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// Result of scoring one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub split: String,
    pub auc: Option<f64>,
    pub loss: f64,
    pub n: usize,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub best_val_auc: Option<f64>,
    pub best_epoch: usize,
    pub test_auc: Option<f64>,
    /// Training loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub history: Vec<MetricRecord>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Model inputs ready for batching: (optionally preprocessed) images and token ids.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub height: usize,
    pub width: usize,
    pub images: Vec<f32>,
    pub ids: Vec<Vec<u32>>,
    /// Source records, kept so training can re-render reports with fields dropped.
    pub records: Vec<MetadataRecord>,
    pub labels: Vec<u8>,
    pub splits: Vec<Split>,
}

impl Prepared {
    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.height * self.width;
        &self.images[i * p..(i + 1) * p]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.splits[i] == split).collect()
    }
}

/// A model, its parameters and the text pipeline, bound to one run config.
#[derive(Clone, Debug)]
pub struct Session {
    pub run: RunConfig,
    pub hash: String,
    pub model: Model,
    pub ps: ParamSet<f32>,
    pub vocab: Vocabulary,
    pub template: Template,
    pub domains: Domains,
}

/// Counter-based seed for per-sample randomness (splitmix64 finalizer).
fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ c.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean binary cross-entropy of logits, computed stably.
fn bce(scores: &[f64], labels: &[u8]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&z, &y)| z.max(0.0) - z * y as f64 + (-z.abs()).exp().ln_1p())
        .sum();
    total / scores.len().max(1) as f64
}

fn optional_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    auc(scores, labels).ok()
}

impl Session {
    /// Validates the config and builds the seeded initial model.
    pub fn new(run: RunConfig) -> Result<Self> {
        run.validate()?;
        let domains = Domains::default();
        let template = if run.data.include_birads { Template::default() } else { Template::default().without_birads() };
        let vocab = build_vocab(&Template::default(), &domains);
        let (model, ps) = Model::new::<f32>(run.model_config(vocab.len()), run.seed)?;
        let hash = run.hash();
        Ok(Self { run, hash, model, ps, vocab, template, domains })
    }

    /// Rebuilds the session a checkpoint was written from and loads its parameters.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut s = Self::new(ck.config.clone())?;
        let fresh = s.ps.entries();
        let stored = ck.params.entries();
        let layout_ok = fresh.len() == stored.len()
            && fresh.iter().zip(stored).all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
        if !layout_ok {
            return Err(Error::Config("checkpoint parameters do not match the model its config describes".into()));
        }
        s.ps = ck.params.clone();
        Ok(s)
    }

    /// Checks the dataset against the config and renders/encodes every report.
    pub fn prepare(&self, ds: &Dataset) -> Result<Prepared> {
        let (h, w) = (self.run.data.height, self.run.data.width);
        if (ds.desc.height, ds.desc.width, ds.desc.channels) != (h, w, 1) {
            return Err(Error::Config(format!(
                "dataset images are {}×{}×{}, config expects {h}×{w}×1",
                ds.desc.height, ds.desc.width, ds.desc.channels
            )));
        }
        if let Some(o) = &ds.oracle {
            if o.task != self.run.task.name() {
                return Err(Error::Config(format!(
                    "dataset was generated for task `{}`, config trains `{}`",
                    o.task,
                    self.run.task.name()
                )));
            }
        }
        let mut images = Vec::with_capacity(ds.images.len());
        let mut ids = Vec::with_capacity(ds.len());
        let mut labels = Vec::with_capacity(ds.len());
        for i in 0..ds.len() {
            if self.run.train.preprocess {
                images.extend(preprocess(ds.image(i), h, w, h, w, DEFAULT_THRESHOLD));
            } else {
                images.extend_from_slice(ds.image(i));
            }
            let text = render_report(&ds.rows[i].record, &self.template, &self.domains)?;
            ids.push(encode_text(&text, &self.vocab, self.run.model.l_max).ids);
            labels.push(ds.label(i, self.run.task));
        }
        let records = ds.rows.iter().map(|r| r.record.clone()).collect();
        Ok(Prepared { height: h, width: w, images, ids, records, labels, splits: ds.splits.clone() })
    }

    /// Records the forward pass of samples `idx`; returns logits `[B]`.
    /// `epoch` is set while training: it switches on augmentation and text
    /// dropout (when configured), keyed by (seed, epoch, sample).
    fn batch_logits(&self, ctx: &mut Ctx<'_, f32>, data: &Prepared, idx: &[usize], epoch: Option<u64>) -> Result<Var> {
        let (h, w) = (data.height, data.width);
        let tc = &self.run.train;
        let aug_cfg = AugmentConfig::default();
        let mut images = Vec::with_capacity(idx.len());
        let mut texts = Vec::with_capacity(idx.len());
        for &i in idx {
            let pixels = match epoch {
                Some(key) if tc.augment => augment(data.image(i), h, w, &aug_cfg, mix(self.run.seed, key, i as u64)).0,
                _ => data.image(i).to_vec(),
            };
            images.push(ctx.graph.constant(Tensor::new(&[1, h, w], pixels)?));
            if !self.model.uses_text() {
                continue;
            }
            let dropped = match epoch {
                Some(key) if tc.text_dropout > 0.0 => Some(self.dropped_ids(data, i, key)?),
                _ => None,
            };
            if let Some(t) = self.model.encode_text(&self.ps, dropped.as_deref().unwrap_or(&data.ids[i]))? {
                texts.push(ctx.graph.constant(t));
            }
        }
        self.model.forward(ctx, &images, &texts)
    }

    /// Token ids of sample `i`'s report with each field blanked independently
    /// with probability `train.text_dropout`.
    fn dropped_ids(&self, data: &Prepared, i: usize, epoch: u64) -> Result<Vec<u32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.run.seed ^ TEXT_DROPOUT_SALT, epoch, i as u64));
        let mut record = data.records[i].clone();
        for field in Field::ALL {
            if rng.gen_bool(self.run.train.text_dropout) {
                record.clear(field);
            }
        }
        let text = render_report(&record, &self.template, &self.domains)?;
        Ok(encode_text(&text, &self.vocab, self.run.model.l_max).ids)
    }

    /// Inference logits for `idx`, in order.
    pub fn scores(&self, data: &Prepared, idx: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(EVAL_CHUNK.min(self.micro_batch())) {
            let mut g = Graph::new();
            let mut ctx = Ctx::new(&mut g, &self.ps, false);
            let z = self.batch_logits(&mut ctx, data, chunk, None)?;
            out.extend(ctx.graph.value(z).to_f64_vec());
        }
        Ok(out)
    }

    pub fn evaluate(&self, data: &Prepared, split: Split) -> Result<EvalReport> {
        let idx = data.indices(split);
        if idx.is_empty() {
            return Err(Error::Config(format!("dataset has no `{}` samples", split.name())));
        }
        let scores = self.scores(data, &idx)?;
        let labels: Vec<u8> = idx.iter().map(|&i| data.labels[i]).collect();
        Ok(EvalReport {
            task: self.run.task.name().to_string(),
            split: split.name().to_string(),
            auc: optional_auc(&scores, &labels),
            loss: bce(&scores, &labels),
            n: idx.len(),
            seed: self.run.seed,
            config_hash: self.hash.clone(),
        })
    }

    /// One optimizer step's forward/backward: batch loss, logits and parameter gradients.
    #[allow(clippy::type_complexity)]
    fn micro_batch(&self) -> usize {
        (TOKEN_BUDGET / self.run.model.n_tokens.max(1)).max(1)
    }

    /// Mean BCE over `idx`, its logits and parameter gradients.
    fn gradients(
        &self,
        data: &Prepared,
        idx: &[usize],
        epoch: u64,
    ) -> Result<(f64, Vec<f64>, Vec<Option<Tensor<f32>>>)> {
        self.accumulated_gradients(data, idx, epoch, self.micro_batch())
    }

    pub(crate) fn accumulated_gradients(
        &self,
        data: &Prepared,
        idx: &[usize],
        epoch: u64,
        micro: usize,
    ) -> Result<(f64, Vec<f64>, Vec<Option<Tensor<f32>>>)> {
        let chunks: Vec<&[usize]> = idx.chunks(micro.max(1)).collect();
        if chunks.len() == 1 {
            return self.chunk_gradients(data, idx, epoch);
        }
        let (mut loss, mut logits, mut acc) = (0.0, Vec::with_capacity(idx.len()), Vec::<Option<Tensor<f32>>>::new());
        for chunk in chunks {
            let w = chunk.len() as f64 / idx.len() as f64;
            let (l, z, grads) = self.chunk_gradients(data, chunk, epoch)?;
            loss += w * l;
            logits.extend(z);
            if acc.is_empty() {
                acc = vec![None; grads.len()];
            }
            for (a, g) in acc.iter_mut().zip(grads) {
                let Some(mut g) = g else { continue };
                g.data_mut().iter_mut().for_each(|v| *v *= w as f32);
                match a {
                    Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += *y),
                    None => *a = Some(g),
                }
            }
        }
        Ok((loss, logits, acc))
    }

    pub(crate) fn chunk_gradients(
        &self,
        data: &Prepared,
        idx: &[usize],
        epoch: u64,
    ) -> Result<(f64, Vec<f64>, Vec<Option<Tensor<f32>>>)> {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &self.ps, true);
        let z = self.batch_logits(&mut ctx, data, idx, Some(epoch))?;
        let labels: Vec<f64> = idx.iter().map(|&i| data.labels[i] as f64).collect();
        let loss = ctx.graph.bce_with_logits(z, &labels)?;
        let value = ctx.graph.value(loss).data()[0] as f64;
        if !value.is_finite() {
            let bad = ctx.graph.value(z).data().iter().filter(|v| !v.is_finite()).count();
            return Err(Error::NonFinite(format!("training loss is {value}; {bad} of {} logits are non-finite", idx.len())));
        }
        ctx.graph.backward(loss)?;
        Ok((value, ctx.graph.value(z).to_f64_vec(), ctx.param_grads()))
    }

    /// Trains on the train split, selecting the checkpoint with the best validation AUC.
    /// On return `self.ps` holds the selected parameters.
    pub fn fit(&mut self, data: &Prepared, out_dir: &Path) -> Result<TrainOutcome> {
        let tc = self.run.train.clone();
        let train_idx = data.indices(Split::Train);
        let val_idx = data.indices(Split::Val);
        if train_idx.is_empty() || val_idx.is_empty() {
            return Err(Error::Config(format!(
                "need train and validation samples, got {} and {}",
                train_idx.len(),
                val_idx.len()
            )));
        }
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let metrics_path = out_dir.join("metrics.jsonl");
        let ckpt_path = out_dir.join("checkpoint.bin");
        fs::write(out_dir.join("config.txt"), self.run.canonical()).map_err(|e| Error::io(out_dir, e))?;
        let mut log = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;

        let per_epoch = train_idx.len().div_ceil(tc.batch_size);
        let total = per_epoch * tc.epochs;
        let warmup = per_epoch * tc.warmup_epochs;
        let mut state = AdamState::new(&self.ps);
        let mut history = Vec::new();
        let mut step_losses = Vec::with_capacity(total);
        let mut record = |history: &mut Vec<MetricRecord>, rec: MetricRecord| -> Result<()> {
            let mut line = serde_json::to_string(&rec)?;
            line.push('\n');
            log.write_all(line.as_bytes()).map_err(|e| Error::io(&metrics_path, e))?;
            history.push(rec);
            Ok(())
        };
        let rec = |epoch, step, split: Split, loss, auc, lr| MetricRecord {
            epoch,
            step,
            split: split.name().to_string(),
            loss,
            auc,
            lr,
            seed: self.run.seed,
            config_hash: self.hash.clone(),
        };

        let initial = self.evaluate(data, Split::Val)?;
        record(&mut history, rec(0, 0, Split::Val, Some(initial.loss), initial.auc, 0.0))?;

        let mut best: Option<(Option<f64>, usize, ParamSet<f32>)> = None;
        let mut order = train_idx.clone();
        let mut step = 0usize;
        for epoch in 1..=tc.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(self.run.seed);
            rng.set_stream(epoch as u64);
            order.copy_from_slice(&train_idx);
            order.shuffle(&mut rng);

            let (mut loss_sum, mut scores, mut labels) = (0.0, Vec::new(), Vec::new());
            let mut lr = 0.0;
            for batch in order.chunks(tc.batch_size) {
                let (loss, logits, grads) = self.gradients(data, batch, epoch as u64)?;
                lr = lr_at(step + 1, total, warmup, tc.lr_peak);
                adamw_step(&mut self.ps, &grads, &mut state, &tc, lr)?;
                step += 1;
                step_losses.push(loss);
                loss_sum += loss * batch.len() as f64;
                labels.extend(batch.iter().map(|&i| data.labels[i]));
                scores.extend(logits);
            }
            // Train AUC uses the logits seen while training, so it trails the final weights.
            let train_loss = loss_sum / order.len() as f64;
            record(&mut history, rec(epoch, step as u64, Split::Train, Some(train_loss), optional_auc(&scores, &labels), lr))?;

            let val = self.evaluate(data, Split::Val)?;
            record(&mut history, rec(epoch, step as u64, Split::Val, Some(val.loss), val.auc, lr))?;
            let improved = match (&best, val.auc) {
                (None, _) => true,
                (Some((Some(b), _, _)), Some(a)) => a > *b,
                (Some((None, _, _)), Some(_)) => true,
                (Some(_), None) => false,
            };
            if improved {
                best = Some((val.auc, epoch, self.ps.clone()));
                let ck = Checkpoint {
                    config: self.run.clone(),
                    config_hash: self.hash.clone(),
                    params: self.ps.clone(),
                    optimizer: state.clone(),
                    epoch,
                    history: history.clone(),
                };
                ck.save(&ckpt_path)?;
            }
        }

        let (best_val_auc, best_epoch, best_ps) = best.expect("at least one epoch ran");
        self.ps = best_ps;
        let test_auc = if data.indices(Split::Test).is_empty() {
            None
        } else {
            let t = self.evaluate(data, Split::Test)?;
            record(&mut history, rec(best_epoch, step as u64, Split::Test, Some(t.loss), t.auc, 0.0))?;
            t.auc
        };
        Ok(TrainOutcome {
            best_val_auc,
            best_epoch,
            test_auc,
            step_losses,
            history,
            checkpoint: ckpt_path,
            metrics: metrics_path,
        })
    }
}

/// Loads the configured dataset and trains; artifacts go to `out_dir`.
pub fn train(run: &RunConfig, out_dir: &Path) -> Result<(Session, TrainOutcome)> {
    let mut session = Session::new(run.clone())?;
    let ds = Dataset::load(&run.task_dir())?;
    let data = session.prepare(&ds)?;
    let outcome = session.fit(&data, out_dir)?;
    Ok((session, outcome))
}

/// Scores `split` of the dataset in `data_dir` with a checkpoint.
pub fn evaluate(ck: &Checkpoint, data_dir: &Path, split: Split) -> Result<EvalReport> {
    let session = Session::from_checkpoint(ck)?;
    let ds = Dataset::load(data_dir)?;
    let data = session.prepare(&ds)?;
    session.evaluate(&data, split)
}
