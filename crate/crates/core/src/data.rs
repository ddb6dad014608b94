//! Dataset ingestion, subject-aware splitting, scaling, windowing, and a
//! seeded synthetic generator for desk-scale experiments.
//!
//! ## Canonical dataset file
//!
//! Little-endian binary: header `{magic "MTSD", version u32, n_records u64,
//! T u32, C u32, K u32, sampling_rate_hz f32}` followed by per-record
//! `{subject_id u32, label u16, series f32[T*C] row-major (time-major)}`.
//! A sidecar UTF-8 manifest (`<path>.manifest`, key=value lines) carries the
//! dataset name and provenance.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub const DATASET_MAGIC: &[u8; 4] = b"MTSD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
    #[error("unsupported dataset version {0}")]
    Version(u32),
    #[error("record {index}: series has {got} values, dataset shape wants {expected}")]
    RecordShape { index: usize, got: usize, expected: usize },
    #[error("record {index}: label {label} out of range for {classes} classes")]
    LabelRange { index: usize, label: u16, classes: u32 },
    #[error("split: {0}")]
    Split(String),
    #[error("split references unknown subject id {0}")]
    UnknownSubject(u32),
    #[error("split produced an empty {0} set")]
    EmptySplit(&'static str),
}

/// One sample: a `[T, C]` series stored time-major, its class label, and the
/// id of the subject it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub series: Vec<f32>,
    pub label: u16,
    pub subject_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub series_len: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub sampling_rate_hz: f32,
    pub name: String,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn new(meta: DatasetMeta, records: Vec<SampleRecord>) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::Format("dataset has no records".into()));
        }
        let expected = meta.series_len * meta.channels;
        for (i, r) in records.iter().enumerate() {
            if r.series.len() != expected {
                return Err(DataError::RecordShape { index: i, got: r.series.len(), expected });
            }
            if (r.label as usize) >= meta.num_classes {
                return Err(DataError::LabelRange {
                    index: i,
                    label: r.label,
                    classes: meta.num_classes as u32,
                });
            }
        }
        Ok(Dataset { meta, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subject_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.records.iter().map(|r| r.subject_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn with_records(&self, records: Vec<SampleRecord>) -> Dataset {
        Dataset { meta: self.meta.clone(), records }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Samples shuffled and partitioned; the same subject may appear in all
    /// three sets (leaky upper-bound evaluation).
    SubjectDependent,
    /// Subjects partitioned; samples follow their subject, so the three
    /// subject-id sets are pairwise disjoint.
    SubjectIndependent,
}

impl std::str::FromStr for SplitMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "subject_dependent" => Ok(SplitMode::SubjectDependent),
            "subject_independent" => Ok(SplitMode::SubjectIndependent),
            other => Err(format!(
                "unknown split mode '{}' (expected subject_dependent|subject_independent)",
                other
            )),
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitMode::SubjectDependent => "subject_dependent",
            SplitMode::SubjectIndependent => "subject_independent",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    Ratios { train: f64, val: f64, test: f64 },
    /// Explicit validation/test subject lists; the remainder trains.
    /// Subject-independent mode only.
    ExplicitSubjects { val: Vec<u32>, test: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub spec: SplitSpec,
    pub seed: u64,
}

impl SplitPlan {
    pub fn ratios(mode: SplitMode, train: f64, val: f64, test: f64, seed: u64) -> Result<Self, DataError> {
        let plan = SplitPlan { mode, spec: SplitSpec::Ratios { train, val, test }, seed };
        plan.validate()?;
        Ok(plan)
    }

    pub fn explicit(val: Vec<u32>, test: Vec<u32>, seed: u64) -> Result<Self, DataError> {
        let plan = SplitPlan {
            mode: SplitMode::SubjectIndependent,
            spec: SplitSpec::ExplicitSubjects { val, test },
            seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        match &self.spec {
            SplitSpec::Ratios { train, val, test } => {
                if *train <= 0.0 || *val <= 0.0 || *test <= 0.0 {
                    return Err(DataError::Split("all ratios must be positive".into()));
                }
                if (train + val + test - 1.0).abs() > 1e-9 {
                    return Err(DataError::Split(format!(
                        "ratios {}+{}+{} must sum to 1",
                        train, val, test
                    )));
                }
            }
            SplitSpec::ExplicitSubjects { val, test } => {
                if self.mode != SplitMode::SubjectIndependent {
                    return Err(DataError::Split(
                        "explicit subject lists require subject_independent mode".into(),
                    ));
                }
                if val.iter().any(|v| test.contains(v)) {
                    return Err(DataError::Split("val and test subject lists overlap".into()));
                }
            }
        }
        Ok(())
    }
}

/// Cut index boundaries for a sample-count partition by ratio: train and val
/// counts round to nearest, test takes the remainder.
fn ratio_counts(n: usize, train: f64, val: f64) -> (usize, usize) {
    let n_train = (n as f64 * train).round() as usize;
    let n_val = (n as f64 * val).round() as usize;
    let n_train = n_train.min(n);
    let n_val = n_val.min(n - n_train);
    (n_train, n_val)
}

/// Partition a dataset into (train, val, test) under the plan. In
/// subject-independent mode the subject-id sets of the three parts are
/// pairwise disjoint; in ratio form subjects are shuffled by seed and cut at
/// the cumulative sample counts closest to the requested ratios.
pub fn split(dataset: &Dataset, plan: &SplitPlan) -> Result<(Dataset, Dataset, Dataset), DataError> {
    plan.validate()?;
    match (plan.mode, &plan.spec) {
        (SplitMode::SubjectDependent, SplitSpec::Ratios { train, val, .. }) => {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed));
            let (n_train, n_val) = ratio_counts(dataset.len(), *train, *val);
            let take = |range: &[usize]| -> Vec<SampleRecord> {
                range.iter().map(|&i| dataset.records[i].clone()).collect()
            };
            let train_set = take(&order[..n_train]);
            let val_set = take(&order[n_train..n_train + n_val]);
            let test_set = take(&order[n_train + n_val..]);
            finish_split(dataset, train_set, val_set, test_set)
        }
        (SplitMode::SubjectDependent, SplitSpec::ExplicitSubjects { .. }) => Err(DataError::Split(
            "explicit subject lists require subject_independent mode".into(),
        )),
        (SplitMode::SubjectIndependent, SplitSpec::Ratios { train, val, .. }) => {
            let mut subjects = dataset.subject_ids();
            if subjects.len() < 3 {
                return Err(DataError::Split(format!(
                    "subject-independent ratio split needs >= 3 subjects, found {}",
                    subjects.len()
                )));
            }
            subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed));
            let count_of = |s: u32| dataset.records.iter().filter(|r| r.subject_id == s).count();
            let prefix: Vec<usize> = subjects
                .iter()
                .scan(0usize, |acc, &s| {
                    *acc += count_of(s);
                    Some(*acc)
                })
                .collect();
            let total = *prefix.last().unwrap() as f64;

            // Boundary b keeps the first b subjects; choose the b whose
            // cumulative sample count lands closest to the ratio target,
            // with at least one subject per part.
            let pick_boundary = |target: f64, lo: usize, hi: usize| -> usize {
                let mut best = lo;
                let mut best_err = f64::INFINITY;
                for b in lo..=hi {
                    let err = (prefix[b - 1] as f64 - target).abs();
                    if err < best_err {
                        best_err = err;
                        best = b;
                    }
                }
                best
            };
            let n = subjects.len();
            let b1 = pick_boundary(train * total, 1, n - 2);
            let b2 = pick_boundary((train + val) * total, b1 + 1, n - 1);
            split_by_subjects(dataset, &subjects[..b1], &subjects[b1..b2], &subjects[b2..])
        }
        (SplitMode::SubjectIndependent, SplitSpec::ExplicitSubjects { val, test }) => {
            let known = dataset.subject_ids();
            for id in val.iter().chain(test) {
                if !known.contains(id) {
                    return Err(DataError::UnknownSubject(*id));
                }
            }
            let train: Vec<u32> = known
                .iter()
                .copied()
                .filter(|id| !val.contains(id) && !test.contains(id))
                .collect();
            split_by_subjects(dataset, &train, val, test)
        }
    }
}

fn split_by_subjects(
    dataset: &Dataset,
    train: &[u32],
    val: &[u32],
    test: &[u32],
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let pick = |ids: &[u32]| -> Vec<SampleRecord> {
        dataset
            .records
            .iter()
            .filter(|r| ids.contains(&r.subject_id))
            .cloned()
            .collect()
    };
    let parts = finish_split(dataset, pick(train), pick(val), pick(test))?;
    // the leakage invariant is checked on every subject-level split
    assert_no_subject_overlap(&parts.0, &parts.1, &parts.2)?;
    Ok(parts)
}

fn finish_split(
    dataset: &Dataset,
    train: Vec<SampleRecord>,
    val: Vec<SampleRecord>,
    test: Vec<SampleRecord>,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    if train.is_empty() {
        return Err(DataError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(DataError::EmptySplit("val"));
    }
    if test.is_empty() {
        return Err(DataError::EmptySplit("test"));
    }
    debug_assert_eq!(train.len() + val.len() + test.len(), dataset.len());
    Ok((
        dataset.with_records(train),
        dataset.with_records(val),
        dataset.with_records(test),
    ))
}

/// Per-record, per-channel standardization to mean 0 / std 1 using the
/// population standard deviation. Zero-variance channels become all zeros;
/// each such case is reported as a warning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleWarning {
    pub record_index: usize,
    pub channel: usize,
}

pub fn standard_scale_record(series: &mut [f32], series_len: usize, channels: usize) -> Vec<usize> {
    let mut degenerate = Vec::new();
    for c in 0..channels {
        let mut mean = 0.0f64;
        for t in 0..series_len {
            mean += series[t * channels + c] as f64;
        }
        mean /= series_len as f64;
        let mut var = 0.0f64;
        for t in 0..series_len {
            let d = series[t * channels + c] as f64 - mean;
            var += d * d;
        }
        var /= series_len as f64;
        if var == 0.0 {
            for t in 0..series_len {
                series[t * channels + c] = 0.0;
            }
            degenerate.push(c);
        } else {
            let inv = 1.0 / var.sqrt();
            for t in 0..series_len {
                series[t * channels + c] = ((series[t * channels + c] as f64 - mean) * inv) as f32;
            }
        }
    }
    degenerate
}

pub fn standard_scale(dataset: &Dataset) -> (Dataset, Vec<ScaleWarning>) {
    let mut warnings = Vec::new();
    let mut records = dataset.records.clone();
    for (i, r) in records.iter_mut().enumerate() {
        for c in standard_scale_record(&mut r.series, dataset.meta.series_len, dataset.meta.channels)
        {
            warnings.push(ScaleWarning { record_index: i, channel: c });
        }
    }
    (dataset.with_records(records), warnings)
}

/// Cut a trial into fixed-length windows with stride
/// `window_len * (1 - overlap)`, discarding the trailing partial window.
/// A trial shorter than one window yields an empty list.
pub fn window(
    trial: &[f32],
    trial_len: usize,
    channels: usize,
    window_len: usize,
    overlap_fraction: f64,
) -> Vec<Vec<f32>> {
    assert!(
        (0.0..1.0).contains(&overlap_fraction),
        "overlap fraction {} outside [0, 1)",
        overlap_fraction
    );
    assert_eq!(trial.len(), trial_len * channels);
    if window_len > trial_len || window_len == 0 {
        return Vec::new();
    }
    let stride = ((window_len as f64) * (1.0 - overlap_fraction)).round().max(1.0) as usize;
    let mut out = Vec::new();
    let mut start = 0;
    while start + window_len <= trial_len {
        out.push(trial[start * channels..(start + window_len) * channels].to_vec());
        start += stride;
    }
    out
}

/// Synthetic dataset: each class carries a sinusoid at a class-specific
/// frequency mixed over a class-dependent channel subset; each subject adds a
/// fixed per-channel offset and AR(1) colored noise; white noise is scaled by
/// `difficulty`. Labels cycle globally so the histogram balances within one
/// sample. Fully determined by the seed.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub samples_per_subject: usize,
    pub series_len: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub difficulty: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_classes < 2 {
            return Err(DataError::Format("synthetic generator needs K >= 2".into()));
        }
        if self.n_subjects == 0 || self.samples_per_subject == 0 || self.series_len == 0 || self.channels == 0 {
            return Err(DataError::Format("synthetic generator dims must be positive".into()));
        }
        if self.difficulty < 0.0 {
            return Err(DataError::Format("difficulty must be >= 0".into()));
        }
        Ok(())
    }
}

/// Cycles per window for class k: distinct frequencies 2, 4, 6, ...
pub fn synth_class_cycles(class: usize) -> f64 {
    (2 * (class + 1)) as f64
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let offset_dist = Normal::new(0.0, 0.3).unwrap();
    let ar_dist = Normal::new(0.0, 0.1).unwrap();
    let (t_len, c, k) = (cfg.series_len, cfg.channels, cfg.num_classes);

    let mut records = Vec::with_capacity(cfg.n_subjects * cfg.samples_per_subject);
    for subject in 0..cfg.n_subjects {
        let offsets: Vec<f64> = (0..c).map(|_| offset_dist.sample(&mut rng)).collect();
        for j in 0..cfg.samples_per_subject {
            let label = (subject * cfg.samples_per_subject + j) % k;
            let cycles = synth_class_cycles(label);
            let phase = rng.gen::<f64>() * std::f64::consts::TAU;
            let mut series = vec![0.0f32; t_len * c];
            for ch in 0..c {
                // class-dependent channel mix: strong on its subset
                let amp = if ch % k == label { 1.0 } else { 0.25 };
                let mut ar = 0.0f64;
                for t in 0..t_len {
                    ar = 0.7 * ar + ar_dist.sample(&mut rng);
                    let white = if cfg.difficulty > 0.0 {
                        cfg.difficulty * ar_dist.sample(&mut rng) * 10.0
                    } else {
                        0.0
                    };
                    let signal = amp
                        * (std::f64::consts::TAU * cycles * t as f64 / t_len as f64 + phase).sin();
                    series[t * c + ch] = (signal + offsets[ch] + ar + white) as f32;
                }
            }
            records.push(SampleRecord { series, label: label as u16, subject_id: subject as u32 });
        }
    }

    Dataset::new(
        DatasetMeta {
            series_len: t_len,
            channels: c,
            num_classes: k,
            sampling_rate_hz: t_len as f32,
            name: "synthetic".into(),
            provenance: format!(
                "synth_generate seed={} subjects={} samples_per_subject={} difficulty={}",
                cfg.seed, cfg.n_subjects, cfg.samples_per_subject, cfg.difficulty
            ),
        },
        records,
    )
}

fn read_exact_or_format(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), DataError> {
    r.read_exact(buf)
        .map_err(|_| DataError::Format(format!("unexpected end of file reading {}", what)))
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(dataset.records.len() as u64).to_le_bytes());
    out.extend_from_slice(&(dataset.meta.series_len as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.meta.channels as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.meta.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&dataset.meta.sampling_rate_hz.to_le_bytes());
    for r in &dataset.records {
        out.extend_from_slice(&r.subject_id.to_le_bytes());
        out.extend_from_slice(&r.label.to_le_bytes());
        for v in &r.series {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;

    let manifest = format!(
        "name={}\nprovenance={}\n",
        dataset.meta.name, dataset.meta.provenance
    );
    fs::write(manifest_path(path), manifest)?;
    Ok(())
}

fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    std::path::PathBuf::from(p)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 4];
    read_exact_or_format(&mut file, &mut magic, "magic")?;
    if &magic != DATASET_MAGIC {
        return Err(DataError::Format(format!(
            "bad magic {:?}, not a dataset file",
            magic
        )));
    }
    let mut u32b = [0u8; 4];
    let mut u64b = [0u8; 8];
    read_exact_or_format(&mut file, &mut u32b, "version")?;
    let version = u32::from_le_bytes(u32b);
    if version != DATASET_VERSION {
        return Err(DataError::Version(version));
    }
    read_exact_or_format(&mut file, &mut u64b, "record count")?;
    let n_records = u64::from_le_bytes(u64b) as usize;
    read_exact_or_format(&mut file, &mut u32b, "series length")?;
    let series_len = u32::from_le_bytes(u32b) as usize;
    read_exact_or_format(&mut file, &mut u32b, "channel count")?;
    let channels = u32::from_le_bytes(u32b) as usize;
    read_exact_or_format(&mut file, &mut u32b, "class count")?;
    let num_classes = u32::from_le_bytes(u32b) as usize;
    read_exact_or_format(&mut file, &mut u32b, "sampling rate")?;
    let sampling_rate_hz = f32::from_le_bytes(u32b);

    let values = series_len * channels;
    let mut records = Vec::with_capacity(n_records);
    let mut body = Vec::new();
    file.read_to_end(&mut body)?;
    let record_bytes = 4 + 2 + 4 * values;
    if body.len() != n_records * record_bytes {
        return Err(DataError::Format(format!(
            "body has {} bytes, {} records of {} bytes expected",
            body.len(),
            n_records,
            record_bytes
        )));
    }
    for i in 0..n_records {
        let base = i * record_bytes;
        let subject_id = u32::from_le_bytes(body[base..base + 4].try_into().unwrap());
        let label = u16::from_le_bytes(body[base + 4..base + 6].try_into().unwrap());
        let mut series = Vec::with_capacity(values);
        for v in 0..values {
            let off = base + 6 + v * 4;
            series.push(f32::from_le_bytes(body[off..off + 4].try_into().unwrap()));
        }
        records.push(SampleRecord { series, label, subject_id });
    }

    let (mut name, mut provenance) = ("unknown".to_string(), String::new());
    if let Ok(text) = fs::read_to_string(manifest_path(path)) {
        for line in text.lines() {
            if let Some((key, value)) = line.split_once('=') {
                match key.trim() {
                    "name" => name = value.trim().to_string(),
                    "provenance" => provenance = value.trim().to_string(),
                    _ => {}
                }
            }
        }
    }

    Dataset::new(
        DatasetMeta { series_len, channels, num_classes, sampling_rate_hz, name, provenance },
        records,
    )
}

/// Assert the subject-independent leakage invariant: the three parts'
/// subject-id sets are pairwise disjoint.
pub fn assert_no_subject_overlap(train: &Dataset, val: &Dataset, test: &Dataset) -> Result<(), DataError> {
    let a = train.subject_ids();
    let b = val.subject_ids();
    let c = test.subject_ids();
    let overlap = |x: &[u32], y: &[u32]| x.iter().any(|v| y.contains(v));
    if overlap(&a, &b) || overlap(&a, &c) || overlap(&b, &c) {
        return Err(DataError::Split("subject ids overlap across splits".into()));
    }
    Ok(())
}
