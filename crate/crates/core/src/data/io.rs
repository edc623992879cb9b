//! Dataset files: raw f32 images with a text descriptor, metadata CSV, split
//! manifest and the oracle report.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Deserialize;

use super::{bayes_auc_oracle, generate_sample, image_id, sample_rng, OracleReport, SynthConfig, Task};
use crate::error::{Error, Result};
use crate::report::{read_metadata_csv, write_metadata_csv, Domains, MetadataRow};

pub const DATASET_FILES: [&str; 5] = ["images.f32", "images.desc", "metadata.csv", "splits.csv", "oracle.json"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}` (train, val, test)"))),
        }
    }
}

/// Sidecar describing the raw image file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageDesc {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageDesc {
    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn to_text(&self) -> String {
        format!(
            "count={}\nheight={}\nwidth={}\nchannels={}\ndtype=f32le\n",
            self.count, self.height, self.width, self.channels
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("descriptor line `{line}`")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        if fields.get("dtype").map(String::as_str) != Some("f32le") {
            return Err(Error::Format("descriptor dtype must be f32le".into()));
        }
        let num = |k: &str| -> Result<usize> {
            fields
                .get(k)
                .ok_or_else(|| Error::Format(format!("descriptor is missing `{k}`")))?
                .parse()
                .map_err(|_| Error::Format(format!("descriptor field `{k}` is not an integer")))
        };
        Ok(Self { count: num("count")?, height: num("height")?, width: num("width")?, channels: num("channels")? })
    }
}

pub fn write_images(path: &Path, images: &[f32]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in images {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_images(path: &Path, desc: &ImageDesc) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expect = desc.count * desc.pixels() * 4;
    if bytes.len() != expect {
        return Err(Error::Format(format!("{} has {} bytes, descriptor implies {expect}", path.display(), bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

/// Split of every sample: the last `n_test` are test; a seeded `val_fraction`
/// of the rest is validation.
pub fn assign_splits(cfg: &SynthConfig) -> Vec<Split> {
    let mut splits = vec![Split::Train; cfg.n_train];
    splits.extend(std::iter::repeat(Split::Test).take(cfg.n_test));
    let mut pool: Vec<usize> = (0..cfg.n_train).collect();
    pool.shuffle(&mut sample_rng(cfg.seed, u64::MAX));
    let n_val = (cfg.val_fraction * cfg.n_train as f64).round() as usize;
    for &i in &pool[..n_val.min(cfg.n_train)] {
        splits[i] = Split::Val;
    }
    splits
}

/// Writes the five dataset files into `dir` and returns the oracle report.
pub fn generate_dataset(cfg: &SynthConfig, domains: &Domains, dir: &Path) -> Result<OracleReport> {
    cfg.validate()?;
    let oracle = bayes_auc_oracle(cfg, cfg.oracle_mc, cfg.seed.wrapping_add(1))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = cfg.n_samples();
    let mut images = Vec::with_capacity(n * cfg.height * cfg.width);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let s = generate_sample(cfg, domains, i);
        s.record.validate(domains)?;
        images.extend_from_slice(&s.image);
        rows.push(s.to_row(i, cfg.task));
    }
    let desc = ImageDesc { count: n, height: cfg.height, width: cfg.width, channels: 1 };
    write_images(&dir.join("images.f32"), &images)?;
    write_file(&dir.join("images.desc"), desc.to_text().as_bytes())?;

    let mut csv = Vec::new();
    write_metadata_csv(&mut csv, &rows)?;
    write_file(&dir.join("metadata.csv"), &csv)?;

    let mut splits = String::from("image_id,split\n");
    for (i, s) in assign_splits(cfg).iter().enumerate() {
        splits.push_str(&format!("{},{}\n", image_id(i), s.name()));
    }
    write_file(&dir.join("splits.csv"), splits.as_bytes())?;

    let mut json = serde_json::to_string_pretty(&oracle)?;
    json.push('\n');
    write_file(&dir.join("oracle.json"), json.as_bytes())?;
    Ok(oracle)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// A loaded dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub desc: ImageDesc,
    pub images: Vec<f32>,
    pub rows: Vec<MetadataRow>,
    pub splits: Vec<Split>,
    pub oracle: Option<OracleReport>,
}

#[derive(Deserialize)]
struct SplitRow {
    image_id: String,
    split: String,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Config(format!("dataset directory {} does not exist", dir.display())));
        }
        let desc = ImageDesc::parse(&read_text(&dir.join("images.desc"))?)?;
        let images = read_images(&dir.join("images.f32"), &desc)?;
        let meta_path = dir.join("metadata.csv");
        let rows = read_metadata_csv(fs::File::open(&meta_path).map_err(|e| Error::io(&meta_path, e))?)?;
        if rows.len() != desc.count {
            return Err(Error::Format(format!("{} metadata rows for {} images", rows.len(), desc.count)));
        }
        let split_path = dir.join("splits.csv");
        let mut reader = csv::Reader::from_path(&split_path)
            .map_err(|e| Error::Format(format!("{}: {e}", split_path.display())))?;
        let mut splits = Vec::with_capacity(rows.len());
        for (i, rec) in reader.deserialize::<SplitRow>().enumerate() {
            let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", split_path.display())))?;
            if rows.get(i).map(|r| &r.image_id) != Some(&rec.image_id) {
                return Err(Error::Format(format!("split row {i} names `{}` out of order", rec.image_id)));
            }
            splits.push(rec.split.parse()?);
        }
        if splits.len() != rows.len() {
            return Err(Error::Format(format!("{} split rows for {} samples", splits.len(), rows.len())));
        }
        let oracle_path = dir.join("oracle.json");
        let oracle = oracle_path.exists().then(|| -> Result<OracleReport> {
            Ok(serde_json::from_str(&read_text(&oracle_path)?)?)
        });
        Ok(Self { desc, images, rows, splits, oracle: oracle.transpose()? })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.desc.pixels();
        &self.images[i * p..(i + 1) * p]
    }

    pub fn label(&self, i: usize, task: Task) -> u8 {
        match task {
            Task::Malignancy => self.rows[i].label_malignancy,
            Task::Calcification => self.rows[i].label_calcification,
        }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }
}
