//! Epoch datasets: file formats, segmentation and synthetic generation.
//!
//! Two on-disk formats are supported.
//!
//! * CSV: header `label,x0,...,x{n-1}`, one epoch per row.
//! * Binary: magic `PNET`, `u16` version, `u32` epoch length, `u32` count,
//!   then `count` records of `u8` label followed by the samples as
//!   little-endian `f64`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 5;
pub const DEFAULT_EPOCH_LEN: usize = 3000;
pub const DEFAULT_SAMPLE_RATE: f64 = 100.0;
pub const STAGE_NAMES: [&str; NUM_CLASSES] = ["W", "N1", "N2", "N3", "REM"];

const BIN_MAGIC: &[u8; 4] = b"PNET";
const BIN_VERSION: u16 = 1;

/// One labelled recording window.
#[derive(Clone, Debug, PartialEq)]
pub struct Epoch {
    pub samples: Vec<f64>,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    epoch_len: usize,
    epochs: Vec<Epoch>,
    class_counts: [usize; NUM_CLASSES],
}

impl Dataset {
    pub fn new(epoch_len: usize, epochs: Vec<Epoch>) -> Result<Self> {
        if epoch_len == 0 {
            return Err(Error::invalid("epoch_len must be positive"));
        }
        let mut class_counts = [0; NUM_CLASSES];
        for (i, e) in epochs.iter().enumerate() {
            if e.samples.len() != epoch_len {
                return Err(Error::invalid(format!("epoch {i} has {} samples, expected {epoch_len}", e.samples.len())));
            }
            if usize::from(e.label) >= NUM_CLASSES {
                return Err(Error::invalid(format!("epoch {i} has label {} outside [0,4]", e.label)));
            }
            if e.samples.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("epoch {i} contains a non-finite sample")));
            }
            class_counts[usize::from(e.label)] += 1;
        }
        Ok(Self { epoch_len, epochs, class_counts })
    }

    pub fn epoch_len(&self) -> usize {
        self.epoch_len
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        self.class_counts
    }

    pub fn labels(&self) -> Vec<u8> {
        self.epochs.iter().map(|e| e.label).collect()
    }

    /// Per-epoch z-scoring with the standard deviation floored at `floor`.
    pub fn z_normalized(&self, floor: f64) -> Self {
        let epochs = self
            .epochs
            .iter()
            .map(|e| {
                let n = e.samples.len() as f64;
                let mean = e.samples.iter().sum::<f64>() / n;
                let std = (e.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(floor);
                Epoch { samples: e.samples.iter().map(|v| (v - mean) / std).collect(), label: e.label }
            })
            .collect();
        Self { epoch_len: self.epoch_len, epochs, class_counts: self.class_counts }
    }
}

/// On-disk dataset encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Csv,
    Bin,
}

impl DatasetFormat {
    /// `.csv` → CSV, anything else → binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Bin,
        }
    }
}

pub fn save_dataset(dataset: &Dataset, path: &Path, format: DatasetFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        DatasetFormat::Csv => write_csv(dataset, &mut w).map_err(|e| Error::io(path, e))?,
        DatasetFormat::Bin => write_bin(dataset, &mut w).map_err(|e| Error::io(path, e))?,
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let r = BufReader::new(file);
    match format {
        DatasetFormat::Csv => read_csv(r),
        DatasetFormat::Bin => read_bin(r, path),
    }
}

fn write_csv<W: Write>(dataset: &Dataset, w: W) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = Vec::with_capacity(dataset.epoch_len + 1);
    header.push("label".to_string());
    header.extend((0..dataset.epoch_len).map(|i| format!("x{i}")));
    out.write_record(&header)?;
    let mut row = Vec::with_capacity(dataset.epoch_len + 1);
    for e in &dataset.epochs {
        row.clear();
        row.push(e.label.to_string());
        // `{}` on f64 prints the shortest string that parses back bit-exactly
        row.extend(e.samples.iter().map(|v| format!("{v}")));
        out.write_record(&row)?;
    }
    out.flush()
}

fn read_csv<R: Read>(r: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(r);
    let header = reader.headers().map_err(|e| Error::Parse { row: 0, message: e.to_string() })?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::invalid("empty dataset file"));
    }
    if &header[0] != "label" || header.iter().skip(1).enumerate().any(|(i, h)| h != format!("x{i}")) {
        return Err(Error::Parse { row: 0, message: "header must be `label,x0,...`".into() });
    }
    let epoch_len = header.len() - 1;
    let mut epochs = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        if rec.len() != epoch_len + 1 {
            return Err(Error::Parse {
                row,
                message: format!("expected {} sample values, found {}", epoch_len, rec.len().saturating_sub(1)),
            });
        }
        let label: u8 =
            rec[0].trim().parse().map_err(|_| Error::Parse { row, message: format!("bad label `{}`", &rec[0]) })?;
        if usize::from(label) >= NUM_CLASSES {
            return Err(Error::Parse { row, message: format!("label {label} outside [0,4]") });
        }
        let samples = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { row, message: e.to_string() })?;
        epochs.push(Epoch { samples, label });
    }
    if epochs.is_empty() {
        return Err(Error::invalid("dataset file has no epochs"));
    }
    Dataset::new(epoch_len, epochs)
}

fn write_bin<W: Write>(dataset: &Dataset, w: &mut W) -> std::io::Result<()> {
    w.write_all(BIN_MAGIC)?;
    w.write_u16::<LittleEndian>(BIN_VERSION)?;
    w.write_u32::<LittleEndian>(dataset.epoch_len as u32)?;
    w.write_u32::<LittleEndian>(dataset.epochs.len() as u32)?;
    for e in &dataset.epochs {
        w.write_u8(e.label)?;
        for &v in &e.samples {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

fn read_bin<R: Read>(mut r: R, path: &Path) -> Result<Dataset> {
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 4];
    match r.read_exact(&mut magic) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            return Err(Error::invalid("empty or truncated dataset file"))
        }
        Err(e) => return Err(io(e)),
    }
    if &magic != BIN_MAGIC {
        return Err(Error::Parse { row: 0, message: "bad magic, expected PNET".into() });
    }
    let version = r.read_u16::<LittleEndian>().map_err(io)?;
    if version != BIN_VERSION {
        return Err(Error::Parse { row: 0, message: format!("unsupported version {version}") });
    }
    let epoch_len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    if count == 0 {
        return Err(Error::invalid("dataset file has no epochs"));
    }
    let mut epochs = Vec::with_capacity(count);
    for row in 0..count {
        let trunc = |_| Error::Parse { row, message: "truncated record".into() };
        let label = r.read_u8().map_err(trunc)?;
        if usize::from(label) >= NUM_CLASSES {
            return Err(Error::Parse { row, message: format!("label {label} outside [0,4]") });
        }
        let mut samples = vec![0.0; epoch_len];
        r.read_f64_into::<LittleEndian>(&mut samples).map_err(trunc)?;
        epochs.push(Epoch { samples, label });
    }
    Dataset::new(epoch_len, epochs)
}

/// An epoch cut into equal contiguous base segments, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentBatch {
    pub segments: Tensor,
    pub s_count: usize,
    pub m_seg: usize,
}

pub fn segment(samples: &[f64], s_count: usize) -> Result<SegmentBatch> {
    if s_count == 0 || samples.is_empty() || !samples.len().is_multiple_of(s_count) {
        return Err(Error::invalid(format!("{s_count} segments do not divide an epoch of {} samples", samples.len())));
    }
    let m_seg = samples.len() / s_count;
    Ok(SegmentBatch { segments: Tensor::new(vec![s_count, m_seg], samples.to_vec())?, s_count, m_seg })
}

// ----- synthetic data ----------------------------------------------------

/// One additive waveform ingredient of a class recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Component {
    /// Sum of `tones` sinusoids with frequencies drawn from the band.
    Rhythm { low_hz: f64, high_hz: f64, amplitude: f64, tones: usize },
    /// Gaussian-windowed tone bursts (spindle-like) at random positions.
    Bursts { low_hz: f64, high_hz: f64, amplitude: f64, count: usize, duration_s: f64 },
    /// Sawtooth wave at a frequency drawn from the band.
    Sawtooth { low_hz: f64, high_hz: f64, amplitude: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRecipe {
    pub components: Vec<Component>,
}

pub fn default_recipes() -> [ClassRecipe; NUM_CLASSES] {
    use Component::*;
    [
        ClassRecipe { components: vec![Rhythm { low_hz: 8.0, high_hz: 12.0, amplitude: 2.0, tones: 3 }] },
        ClassRecipe { components: vec![Rhythm { low_hz: 4.0, high_hz: 7.0, amplitude: 1.0, tones: 3 }] },
        ClassRecipe {
            components: vec![
                Rhythm { low_hz: 4.0, high_hz: 7.0, amplitude: 0.7, tones: 2 },
                Bursts { low_hz: 11.0, high_hz: 16.0, amplitude: 2.0, count: 3, duration_s: 1.0 },
            ],
        },
        ClassRecipe { components: vec![Rhythm { low_hz: 0.5, high_hz: 2.0, amplitude: 3.0, tones: 3 }] },
        ClassRecipe {
            components: vec![
                Rhythm { low_hz: 4.0, high_hz: 7.0, amplitude: 0.5, tones: 2 },
                Sawtooth { low_hz: 2.0, high_hz: 4.0, amplitude: 1.0 },
            ],
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub epoch_len: usize,
    pub sample_rate: f64,
    pub n_per_class: usize,
    pub noise_sigma: f64,
    pub recipes: [ClassRecipe; NUM_CLASSES],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            epoch_len: DEFAULT_EPOCH_LEN,
            sample_rate: DEFAULT_SAMPLE_RATE,
            n_per_class: 50,
            noise_sigma: 0.5,
            recipes: default_recipes(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |p: &str, m: &str| Err(Error::config(p, m));
        if self.epoch_len == 0 {
            return bad("epoch_len", "must be >= 1");
        }
        if self.sample_rate.is_nan() || self.sample_rate <= 0.0 {
            return bad("sample_rate", "must be > 0");
        }
        if self.n_per_class == 0 {
            return bad("n_per_class", "must be >= 1");
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return bad("noise_sigma", "must be a finite value >= 0");
        }
        for (k, r) in self.recipes.iter().enumerate() {
            for (j, c) in r.components.iter().enumerate() {
                let path = format!("recipes[{k}].components[{j}]");
                let (lo, hi, amp) = match c {
                    Component::Rhythm { low_hz, high_hz, amplitude, tones } => {
                        if *tones == 0 {
                            return bad(&path, "tones must be >= 1");
                        }
                        (*low_hz, *high_hz, *amplitude)
                    }
                    Component::Bursts { low_hz, high_hz, amplitude, duration_s, .. } => {
                        if duration_s.is_nan() || *duration_s <= 0.0 {
                            return bad(&path, "duration_s must be > 0");
                        }
                        (*low_hz, *high_hz, *amplitude)
                    }
                    Component::Sawtooth { low_hz, high_hz, amplitude } => (*low_hz, *high_hz, *amplitude),
                };
                if !(lo > 0.0 && hi >= lo) || !amp.is_finite() {
                    return bad(&path, "needs 0 < low_hz <= high_hz and a finite amplitude");
                }
            }
        }
        Ok(())
    }
}

/// Deterministic balanced 5-class dataset; epochs are ordered class-major.
pub fn synthesize(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let mut epochs = Vec::with_capacity(NUM_CLASSES * cfg.n_per_class);
    for (label, recipe) in cfg.recipes.iter().enumerate() {
        for _ in 0..cfg.n_per_class {
            let mut samples = vec![0.0; cfg.epoch_len];
            for c in &recipe.components {
                add_component(&mut samples, c, cfg.sample_rate, &mut rng);
            }
            if cfg.noise_sigma > 0.0 {
                for s in &mut samples {
                    *s += noise.sample(&mut rng);
                }
            }
            epochs.push(Epoch { samples, label: label as u8 });
        }
    }
    Dataset::new(cfg.epoch_len, epochs)
}

fn add_component(out: &mut [f64], c: &Component, fs: f64, rng: &mut ChaCha8Rng) {
    let n = out.len();
    let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { lo };
    match *c {
        Component::Rhythm { low_hz, high_hz, amplitude, tones } => {
            let a = amplitude / (tones as f64).sqrt();
            for _ in 0..tones {
                let f = draw(rng, low_hz, high_hz);
                let phase = rng.random_range(0.0..2.0 * PI);
                for (t, v) in out.iter_mut().enumerate() {
                    *v += a * (2.0 * PI * f * t as f64 / fs + phase).sin();
                }
            }
        }
        Component::Bursts { low_hz, high_hz, amplitude, count, duration_s } => {
            let width = duration_s * fs / 4.0;
            for _ in 0..count {
                let f = draw(rng, low_hz, high_hz);
                let center = rng.random_range(0.0..n as f64);
                for (t, v) in out.iter_mut().enumerate() {
                    let z = (t as f64 - center) / width;
                    if z.abs() < 6.0 {
                        *v += amplitude * (-0.5 * z * z).exp() * (2.0 * PI * f * (t as f64 - center) / fs).sin();
                    }
                }
            }
        }
        Component::Sawtooth { low_hz, high_hz, amplitude } => {
            let f = draw(rng, low_hz, high_hz);
            let phase = rng.random_range(0.0..1.0);
            for (t, v) in out.iter_mut().enumerate() {
                let x = f * t as f64 / fs + phase;
                *v += amplitude * 2.0 * (x - (x + 0.5).floor());
            }
        }
    }
}
