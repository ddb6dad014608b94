//! Run configuration: defaults overridden by a UTF-8 key=value file,
//! overridden in turn by CLI flags. Lists use `a,b,c` syntax. The fully
//! resolved configuration is written beside every run's outputs so any run
//! can be reproduced from its snapshot.

use std::path::PathBuf;

use medformer_core::data::{SplitMode, SplitPlan};
use medformer_core::embed::Augmentation;
use medformer_core::model::{ModelConfig, Precision, Variant};
use medformer_core::nn::Activation;
use medformer_core::train::TrainConfig;

#[derive(Debug)]
pub enum AppError {
    /// Usage or configuration problem; exit code 2, nothing written.
    Config(String),
    /// Failure during computation or IO mid-run; exit code 1.
    Runtime(String),
}

impl AppError {
    pub fn config(msg: impl Into<String>) -> Self {
        AppError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        AppError::Runtime(msg.into())
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "config: {}", m),
            AppError::Runtime(m) => write!(f, "runtime: {}", m),
        }
    }
}

/// Flag set shared by train, ablate, and eval.
#[derive(Debug, Default, clap::Args)]
pub struct RunArgs {
    /// Key=value config file; flags override file keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Canonical dataset file (.mtsd).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output directory; artifacts land under <outdir>/<run-id>/.
    #[arg(long)]
    pub outdir: Option<PathBuf>,
    /// Run seeds, e.g. 41,42,43,44,45.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Patch lengths, e.g. 8,8,8,16,16,16.
    #[arg(long = "patch-len", value_delimiter = ',')]
    pub patch_len: Option<Vec<usize>>,
    /// Augmentation bank, e.g. none,mask0.25.
    #[arg(long = "aug", value_delimiter = ',')]
    pub aug: Option<Vec<String>>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long = "max-epochs")]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long = "model-dim")]
    pub model_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long = "ffn-dim")]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// gelu | relu
    #[arg(long)]
    pub activation: Option<String>,
    /// full | no_inter_attention | no_augmentation | single_channel_patching
    #[arg(long)]
    pub variant: Option<String>,
    /// f32 | f64
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long = "mean-pool")]
    pub mean_pool: Option<bool>,
    /// subject_dependent | subject_independent
    #[arg(long = "split-mode")]
    pub split_mode: Option<String>,
    /// Train,val,test ratios, e.g. 0.6,0.2,0.2.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    /// Explicit validation subject ids (subject_independent only).
    #[arg(long = "val-subjects", value_delimiter = ',')]
    pub val_subjects: Option<Vec<u32>>,
    /// Explicit test subject ids (subject_independent only).
    #[arg(long = "test-subjects", value_delimiter = ',')]
    pub test_subjects: Option<Vec<u32>>,
    /// Seed for the split itself; fixed across run seeds.
    #[arg(long = "split-seed")]
    pub split_seed: Option<u64>,
    /// Per-record standard scaling before splitting.
    #[arg(long)]
    pub scale: Option<bool>,
    /// Run the seeds on parallel threads (runs are independent; artifacts
    /// and results are identical to a sequential run).
    #[arg(long, default_value_t = false)]
    pub parallel: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub outdir: PathBuf,
    pub seeds: Vec<u64>,
    pub patch_len: Vec<usize>,
    pub augmentations: Vec<Augmentation>,
    pub model_dim: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    pub dropout: f64,
    pub activation: Activation,
    pub variant: Variant,
    pub precision: Precision,
    pub mean_pool: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub split_mode: SplitMode,
    pub ratios: [f64; 3],
    pub val_subjects: Option<Vec<u32>>,
    pub test_subjects: Option<Vec<u32>>,
    pub split_seed: u64,
    pub scale: bool,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            outdir: PathBuf::from("runs"),
            seeds: vec![41],
            patch_len: vec![8],
            augmentations: vec![Augmentation::None],
            model_dim: 128,
            layers: 6,
            ffn_dim: 256,
            heads: 8,
            dropout: 0.1,
            activation: Activation::Gelu,
            variant: Variant::Full,
            precision: Precision::F32,
            mean_pool: false,
            lr: 1e-4,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            split_mode: SplitMode::SubjectIndependent,
            ratios: [0.6, 0.2, 0.2],
            val_subjects: None,
            test_subjects: None,
            split_seed: 0,
            scale: true,
            parallel: false,
        }
    }
}

/// Accept both `a,b,c` and the bracketed `[a, b, c]` / `["a","b"]` notations.
fn list_items(value: &str) -> impl Iterator<Item = &str> {
    value
        .trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(|v| v.trim().trim_matches('"').trim_matches('\''))
        .filter(|v| !v.is_empty())
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str) -> Result<Vec<T>, AppError> {
    list_items(value)
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| AppError::config(format!("bad value '{}' in list for {}", v, key)))
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(value: &str, key: &str) -> Result<T, AppError> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| AppError::config(format!("bad value '{}' for {}", value, key)))
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self, AppError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &args.config {
            let text = std::fs::read_to_string(path).map_err(|e| {
                AppError::config(format!("cannot read config file {}: {}", path.display(), e))
            })?;
            cfg.apply_file(&text)?;
        }
        cfg.apply_args(args)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, text: &str) -> Result<(), AppError> {
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| AppError::config(format!("bad config line '{}'", line)))?;
            self.apply_key(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn apply_key(&mut self, key: &str, value: &str) -> Result<(), AppError> {
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "outdir" => self.outdir = PathBuf::from(value),
            "seeds" => self.seeds = parse_list(value, key)?,
            "patch_len" => self.patch_len = parse_list(value, key)?,
            "augmentations" => {
                self.augmentations = list_items(value)
                    .map(|v| v.parse::<Augmentation>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| AppError::config(e.to_string()))?
            }
            "model_dim" => self.model_dim = parse_one(value, key)?,
            "layers" => self.layers = parse_one(value, key)?,
            "ffn_dim" => self.ffn_dim = parse_one(value, key)?,
            "heads" => self.heads = parse_one(value, key)?,
            "dropout" => self.dropout = parse_one(value, key)?,
            "activation" => {
                self.activation = value.parse().map_err(AppError::Config)?;
            }
            "variant" => {
                self.variant = value.parse().map_err(|e: medformer_core::embed::ConfigError| {
                    AppError::Config(e.to_string())
                })?
            }
            "precision" => {
                self.precision = value.parse().map_err(|e: medformer_core::embed::ConfigError| {
                    AppError::Config(e.to_string())
                })?
            }
            "mean_pool" => self.mean_pool = parse_one(value, key)?,
            "lr" => self.lr = parse_one(value, key)?,
            "batch_size" => self.batch_size = parse_one(value, key)?,
            "max_epochs" => self.max_epochs = parse_one(value, key)?,
            "patience" => self.patience = parse_one(value, key)?,
            "split_mode" => self.split_mode = value.parse().map_err(AppError::Config)?,
            "ratios" => {
                let r: Vec<f64> = parse_list(value, key)?;
                if r.len() != 3 {
                    return Err(AppError::config("ratios needs exactly three values"));
                }
                self.ratios = [r[0], r[1], r[2]];
            }
            "val_subjects" => self.val_subjects = Some(parse_list(value, key)?),
            "test_subjects" => self.test_subjects = Some(parse_list(value, key)?),
            "split_seed" => self.split_seed = parse_one(value, key)?,
            "scale" => self.scale = parse_one(value, key)?,
            "parallel" => self.parallel = parse_one(value, key)?,
            other => return Err(AppError::config(format!("unknown config key '{}'", other))),
        }
        Ok(())
    }

    fn apply_args(&mut self, args: &RunArgs) -> Result<(), AppError> {
        if let Some(v) = &args.dataset {
            self.dataset = Some(v.clone());
        }
        if let Some(v) = &args.outdir {
            self.outdir = v.clone();
        }
        if let Some(v) = &args.seeds {
            self.seeds = v.clone();
        }
        if let Some(v) = &args.patch_len {
            self.patch_len = v.clone();
        }
        if let Some(v) = &args.aug {
            self.augmentations = v
                .iter()
                .map(|s| s.parse::<Augmentation>())
                .collect::<Result<_, _>>()
                .map_err(|e| AppError::config(e.to_string()))?;
        }
        if let Some(v) = args.lr {
            self.lr = v;
        }
        if let Some(v) = args.batch_size {
            self.batch_size = v;
        }
        if let Some(v) = args.max_epochs {
            self.max_epochs = v;
        }
        if let Some(v) = args.patience {
            self.patience = v;
        }
        if let Some(v) = args.model_dim {
            self.model_dim = v;
        }
        if let Some(v) = args.layers {
            self.layers = v;
        }
        if let Some(v) = args.ffn_dim {
            self.ffn_dim = v;
        }
        if let Some(v) = args.heads {
            self.heads = v;
        }
        if let Some(v) = args.dropout {
            self.dropout = v;
        }
        if let Some(v) = &args.activation {
            self.activation = v.parse().map_err(AppError::Config)?;
        }
        if let Some(v) = &args.variant {
            self.variant = v
                .parse()
                .map_err(|e: medformer_core::embed::ConfigError| AppError::Config(e.to_string()))?;
        }
        if let Some(v) = &args.precision {
            self.precision = v
                .parse()
                .map_err(|e: medformer_core::embed::ConfigError| AppError::Config(e.to_string()))?;
        }
        if let Some(v) = args.mean_pool {
            self.mean_pool = v;
        }
        if let Some(v) = &args.split_mode {
            self.split_mode = v.parse().map_err(AppError::Config)?;
        }
        if let Some(r) = &args.ratios {
            if r.len() != 3 {
                return Err(AppError::config("--ratios needs exactly three values"));
            }
            self.ratios = [r[0], r[1], r[2]];
        }
        if let Some(v) = &args.val_subjects {
            self.val_subjects = Some(v.clone());
        }
        if let Some(v) = &args.test_subjects {
            self.test_subjects = Some(v.clone());
        }
        if let Some(v) = args.split_seed {
            self.split_seed = v;
        }
        if let Some(v) = args.scale {
            self.scale = v;
        }
        if args.parallel {
            self.parallel = true;
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), AppError> {
        if self.seeds.is_empty() {
            return Err(AppError::config("at least one seed required"));
        }
        if self.val_subjects.is_some() != self.test_subjects.is_some() {
            return Err(AppError::config(
                "val_subjects and test_subjects must be given together",
            ));
        }
        Ok(())
    }

    /// Deterministic snapshot written beside run outputs.
    pub fn resolved_text(&self) -> String {
        let list = |v: &[String]| v.join(",");
        let mut lines = vec![
            format!(
                "dataset={}",
                self.dataset.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
            ),
            format!("outdir={}", self.outdir.display()),
            format!("seeds={}", list(&self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>())),
            format!(
                "patch_len={}",
                list(&self.patch_len.iter().map(|s| s.to_string()).collect::<Vec<_>>())
            ),
            format!(
                "augmentations={}",
                list(&self.augmentations.iter().map(|a| a.to_string()).collect::<Vec<_>>())
            ),
            format!("model_dim={}", self.model_dim),
            format!("layers={}", self.layers),
            format!("ffn_dim={}", self.ffn_dim),
            format!("heads={}", self.heads),
            format!("dropout={}", self.dropout),
            format!("activation={}", self.activation),
            format!("variant={}", self.variant),
            format!("precision={}", self.precision),
            format!("mean_pool={}", self.mean_pool),
            format!("lr={}", self.lr),
            format!("batch_size={}", self.batch_size),
            format!("max_epochs={}", self.max_epochs),
            format!("patience={}", self.patience),
            format!("split_mode={}", self.split_mode),
            format!("ratios={},{},{}", self.ratios[0], self.ratios[1], self.ratios[2]),
            format!("split_seed={}", self.split_seed),
            format!("scale={}", self.scale),
            format!("parallel={}", self.parallel),
        ];
        if let Some(v) = &self.val_subjects {
            lines.push(format!(
                "val_subjects={}",
                list(&v.iter().map(|s| s.to_string()).collect::<Vec<_>>())
            ));
        }
        if let Some(v) = &self.test_subjects {
            lines.push(format!(
                "test_subjects={}",
                list(&v.iter().map(|s| s.to_string()).collect::<Vec<_>>())
            ));
        }
        lines.join("\n") + "\n"
    }

    pub fn model_config(&self, series_len: usize, channels: usize, num_classes: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(series_len, channels, num_classes, self.patch_len.clone());
        cfg.model_dim = self.model_dim;
        cfg.layers = self.layers;
        cfg.ffn_dim = self.ffn_dim;
        cfg.heads = self.heads;
        cfg.dropout = self.dropout;
        cfg.augmentations = self.augmentations.clone();
        cfg.precision = self.precision;
        cfg.variant = self.variant;
        cfg.activation = self.activation;
        cfg.mean_pool = self.mean_pool;
        cfg
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn split_plan(&self) -> Result<SplitPlan, AppError> {
        let plan = match (&self.val_subjects, &self.test_subjects) {
            (Some(val), Some(test)) => SplitPlan::explicit(val.clone(), test.clone(), self.split_seed),
            _ => SplitPlan::ratios(
                self.split_mode,
                self.ratios[0],
                self.ratios[1],
                self.ratios[2],
                self.split_seed,
            ),
        };
        plan.map_err(|e| AppError::config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags_override_order() {
        let mut cfg = RunConfig::default();
        cfg.apply_file("patch_len=2,4\nlr=0.01\nmodel_dim=64\n").unwrap();
        assert_eq!(cfg.patch_len, vec![2, 4]);
        assert_eq!(cfg.lr, 0.01);

        let args = RunArgs { lr: Some(0.5), ..Default::default() };
        cfg.apply_args(&args).unwrap();
        assert_eq!(cfg.lr, 0.5);
        assert_eq!(cfg.model_dim, 64);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.apply_file("bogus=1\n"), Err(AppError::Config(_))));
    }

    #[test]
    fn resolved_text_reparses_to_same_config() {
        let mut cfg = RunConfig::default();
        cfg.apply_file("patch_len=8,8,16\naugmentations=none,mask0.25\nseeds=41,42\n")
            .unwrap();
        let text = cfg.resolved_text();
        let mut back = RunConfig::default();
        back.apply_file(&text).unwrap();
        assert_eq!(back.resolved_text(), text);
    }

    #[test]
    fn augmentation_strings_parse() {
        let mut cfg = RunConfig::default();
        cfg.apply_file("augmentations=jitter0.2,scale0.2,mask0.5\n").unwrap();
        assert_eq!(cfg.augmentations.len(), 3);
        assert!(matches!(cfg.augmentations[0], Augmentation::Jitter(_)));
    }

    #[test]
    fn flag_shape_for_repeated_granularities() {
        // --patch-len 8,8,8,16,16,16 --aug none,mask0.25
        let args = RunArgs {
            patch_len: Some(vec![8, 8, 8, 16, 16, 16]),
            aug: Some(vec!["none".into(), "mask0.25".into()]),
            ..Default::default()
        };
        let mut cfg = RunConfig::default();
        cfg.apply_args(&args).unwrap();
        assert_eq!(cfg.patch_len, vec![8, 8, 8, 16, 16, 16]);
        assert_eq!(cfg.augmentations, vec![Augmentation::None, Augmentation::Mask(0.25)]);
    }

    #[test]
    fn bracketed_list_notation_accepted() {
        let mut cfg = RunConfig::default();
        cfg.apply_file("patch_len = [8, 8, 8, 16, 16, 16]\naugmentations = [\"none\", \"mask0.25\"]\n")
            .unwrap();
        assert_eq!(cfg.patch_len, vec![8, 8, 8, 16, 16, 16]);
        assert_eq!(
            cfg.augmentations,
            vec![Augmentation::None, Augmentation::Mask(0.25)]
        );
    }
}
