//! Subcommand implementations. Every run writes its artifacts under
//! `<outdir>/<run-id>/` where the run id is a digest of the fully resolved
//! configuration, so identical invocations hit identical paths.

use std::fs;
use std::path::{Path, PathBuf};

use medformer_core::complexity::{bench_csv, run_complexity_sweep, AttnMode, SweepConfig};
use medformer_core::data::{
    load_dataset, save_dataset, split, standard_scale, synth_generate, Dataset, SynthConfig,
};
use medformer_core::metrics::MetricsReport;
use medformer_core::model::{checkpoint_dtype, fnv1a, Medformer, ModelConfig, Precision};
use medformer_core::tensor::Scalar;
use medformer_core::train::{
    ablation_csv, evaluate, run_ablation, summarize_runs, train, RunLog,
};

use crate::config::{AppError, RunArgs, RunConfig};

fn run_dir(outdir: &Path, command: &str, resolved: &str) -> PathBuf {
    let digest = fnv1a(resolved.as_bytes());
    outdir.join(format!("{}-{:08x}", command, (digest & 0xffff_ffff) as u32))
}

fn write_file(path: &Path, contents: &str) -> Result<(), AppError> {
    fs::write(path, contents)
        .map_err(|e| AppError::runtime(format!("cannot write {}: {}", path.display(), e)))
}

fn load_prepared_dataset(cfg: &RunConfig) -> Result<Dataset, AppError> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| AppError::config("no dataset path given (--dataset or dataset= key)"))?;
    if !path.exists() {
        return Err(AppError::config(format!("dataset {} does not exist", path.display())));
    }
    let ds = load_dataset(path).map_err(|e| AppError::config(e.to_string()))?;
    if cfg.scale {
        let (scaled, warnings) = standard_scale(&ds);
        for w in &warnings {
            eprintln!(
                "warning: record {} channel {} has zero variance; scaled to zeros",
                w.record_index, w.channel
            );
        }
        Ok(scaled)
    } else {
        Ok(ds)
    }
}

fn split_dataset(cfg: &RunConfig, ds: &Dataset) -> Result<(Dataset, Dataset, Dataset), AppError> {
    let plan = cfg.split_plan()?;
    split(ds, &plan).map_err(|e| AppError::config(e.to_string()))
}

pub fn cmd_train(args: &RunArgs) -> Result<(), AppError> {
    let cfg = RunConfig::resolve(args)?;
    let ds = load_prepared_dataset(&cfg)?;
    let (train_set, val_set, test_set) = split_dataset(&cfg, &ds)?;
    let model_cfg = cfg.model_config(ds.meta.series_len, ds.meta.channels, ds.meta.num_classes);
    model_cfg.validate().map_err(|e| AppError::config(e.to_string()))?;

    match cfg.precision {
        Precision::F32 => train_runs::<f32>(&cfg, &model_cfg, &train_set, &val_set, &test_set),
        Precision::F64 => train_runs::<f64>(&cfg, &model_cfg, &train_set, &val_set, &test_set),
    }
}

fn train_runs<T: Scalar>(
    cfg: &RunConfig,
    model_cfg: &ModelConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: &Dataset,
) -> Result<(), AppError> {
    let resolved = cfg.resolved_text();
    let dir = run_dir(&cfg.outdir, "train", &resolved);
    fs::create_dir_all(&dir)
        .map_err(|e| AppError::runtime(format!("cannot create {}: {}", dir.display(), e)))?;
    write_file(&dir.join("resolved.config"), &resolved)?;

    println!(
        "train: {} samples / val {} / test {} ({} classes), {} seeds -> {}",
        train_set.len(),
        val_set.len(),
        test_set.len(),
        model_cfg.num_classes,
        cfg.seeds.len(),
        dir.display()
    );

    let run_one = |seed: u64| -> Result<(String, String, [f64; 6]), AppError> {
        let model = Medformer::<T>::seeded(model_cfg.clone(), seed)
            .map_err(|e| AppError::runtime(e.to_string()))?;
        let log: RunLog = train(&model, &train_set.records, &val_set.records, &cfg.train_config(seed))
            .map_err(|e| AppError::runtime(e.to_string()))?;
        let report = evaluate(&model, &test_set.records).map_err(|e| AppError::runtime(e.to_string()))?;

        model
            .save_checkpoint(&dir.join(format!("checkpoint_s{}.bin", seed)))
            .map_err(|e| AppError::runtime(e.to_string()))?;
        write_file(&dir.join(format!("runlog_s{}.csv", seed)), &log.to_csv())?;

        let summary = format!(
            "seed {}: {} epochs (best {}, val F1 {:.4}, {:.1}s) test F1 {:.4}",
            seed,
            log.epochs.len(),
            log.best_epoch,
            log.best_val_f1(),
            log.wall_clock_secs,
            report.f1
        );
        Ok((summary, format!("{}\t{}\n", seed, report.tsv_line()), report.values()))
    };

    let per_seed: Vec<(String, String, [f64; 6])> = if cfg.parallel && cfg.seeds.len() > 1 {
        // seeds are independent runs; each thread builds its own model
        std::thread::scope(|scope| {
            let handles: Vec<_> = cfg
                .seeds
                .iter()
                .map(|&seed| scope.spawn(move || run_one(seed)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("seed thread panicked"))
                .collect::<Result<Vec<_>, _>>()
        })?
    } else {
        cfg.seeds.iter().map(|&s| run_one(s)).collect::<Result<Vec<_>, _>>()?
    };

    let mut results: Vec<[f64; 6]> = Vec::new();
    let mut tsv = format!("seed\t{}\n", MetricsReport::HEADER);
    for (summary, row, values) in per_seed {
        println!("{}", summary);
        tsv.push_str(&row);
        results.push(values);
    }

    let (mean, std) = summarize_runs(&results);
    let fmt_row = |vals: &[f64; 6]| {
        vals.iter().map(|v| format!("{:.6}", v)).collect::<Vec<_>>().join("\t")
    };
    tsv.push_str(&format!("mean\t{}\n", fmt_row(&mean)));
    tsv.push_str(&format!("std\t{}\n", fmt_row(&std)));
    write_file(&dir.join("metrics.tsv"), &tsv)?;

    println!("test metrics over {} seed(s), mean±std:", cfg.seeds.len());
    for (name, i) in [("accuracy", 0), ("precision", 1), ("recall", 2), ("f1", 3), ("auroc", 4), ("auprc", 5)] {
        println!("  {:<9} {:.4} ± {:.4}", name, mean[i], std[i]);
    }
    println!("{}", MetricsReport::HEADER);
    println!("{}", fmt_row(&mean));
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint written by `medformer train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Apply the resolved split plan and evaluate the test part instead of
    /// the whole dataset file.
    #[arg(long = "use-split", default_value_t = false)]
    pub use_split: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), AppError> {
    let cfg = RunConfig::resolve(&args.run)?;
    if !args.checkpoint.exists() {
        return Err(AppError::config(format!(
            "checkpoint {} does not exist",
            args.checkpoint.display()
        )));
    }
    let ds = load_prepared_dataset(&cfg)?;
    let eval_set = if args.use_split {
        split_dataset(&cfg, &ds)?.2
    } else {
        ds
    };

    let dtype = checkpoint_dtype(&args.checkpoint).map_err(|e| AppError::config(e.to_string()))?;
    let report = match dtype {
        1 => eval_checkpoint::<f32>(&args.checkpoint, &eval_set)?,
        2 => eval_checkpoint::<f64>(&args.checkpoint, &eval_set)?,
        other => return Err(AppError::config(format!("unknown checkpoint dtype tag {}", other))),
    };
    println!("{}", MetricsReport::HEADER);
    println!("{}", report.tsv_line());
    Ok(())
}

fn eval_checkpoint<T: Scalar>(path: &Path, eval_set: &Dataset) -> Result<MetricsReport, AppError> {
    let model = Medformer::<T>::load_checkpoint(path).map_err(|e| AppError::config(e.to_string()))?;
    if model.config().series_len != eval_set.meta.series_len
        || model.config().channels != eval_set.meta.channels
        || model.config().num_classes != eval_set.meta.num_classes
    {
        return Err(AppError::config(format!(
            "checkpoint shape (T={}, C={}, K={}) does not match dataset (T={}, C={}, K={})",
            model.config().series_len,
            model.config().channels,
            model.config().num_classes,
            eval_set.meta.series_len,
            eval_set.meta.channels,
            eval_set.meta.num_classes
        )));
    }
    evaluate(&model, &eval_set.records).map_err(|e| AppError::runtime(e.to_string()))
}

pub fn cmd_ablate(args: &RunArgs) -> Result<(), AppError> {
    let cfg = RunConfig::resolve(args)?;
    let ds = load_prepared_dataset(&cfg)?;
    let (train_set, val_set, test_set) = split_dataset(&cfg, &ds)?;
    let model_cfg = cfg.model_config(ds.meta.series_len, ds.meta.channels, ds.meta.num_classes);
    model_cfg.validate().map_err(|e| AppError::config(e.to_string()))?;

    let resolved = cfg.resolved_text();
    let dir = run_dir(&cfg.outdir, "ablate", &resolved);
    fs::create_dir_all(&dir)
        .map_err(|e| AppError::runtime(format!("cannot create {}: {}", dir.display(), e)))?;
    write_file(&dir.join("resolved.config"), &resolved)?;

    let rows = match cfg.precision {
        Precision::F32 => run_ablation::<f32>(
            &model_cfg, &train_set, &val_set, &test_set, &cfg.train_config(cfg.seeds[0]), &cfg.seeds,
        ),
        Precision::F64 => run_ablation::<f64>(
            &model_cfg, &train_set, &val_set, &test_set, &cfg.train_config(cfg.seeds[0]), &cfg.seeds,
        ),
    }
    .map_err(|e| AppError::runtime(e.to_string()))?;

    let csv = ablation_csv(&rows);
    write_file(&dir.join("ablation.csv"), &csv)?;
    println!("{}", csv.trim_end());
    println!("ablation table -> {}", dir.join("ablation.csv").display());
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct SynthArgs {
    /// Destination .mtsd file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub subjects: usize,
    #[arg(long = "samples-per-subject", default_value_t = 100)]
    pub samples_per_subject: usize,
    #[arg(long, default_value_t = 128)]
    pub timesteps: usize,
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// White-noise level; 0 is noiseless.
    #[arg(long, default_value_t = 0.2)]
    pub difficulty: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), AppError> {
    let cfg = SynthConfig {
        n_subjects: args.subjects,
        samples_per_subject: args.samples_per_subject,
        series_len: args.timesteps,
        channels: args.channels,
        num_classes: args.classes,
        difficulty: args.difficulty,
        seed: args.seed,
    };
    let ds = synth_generate(&cfg).map_err(|e| AppError::config(e.to_string()))?;
    save_dataset(&ds, &args.out).map_err(|e| AppError::runtime(e.to_string()))?;
    println!(
        "wrote {} samples ({} subjects, T={}, C={}, K={}) -> {}",
        ds.len(),
        args.subjects,
        args.timesteps,
        args.channels,
        args.classes,
        args.out.display()
    );
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct BenchArgs {
    /// Series lengths to sweep, ascending.
    #[arg(long = "t-values", value_delimiter = ',', default_values_t = vec![64usize, 128, 256, 512, 1024])]
    pub t_values: Vec<usize>,
    /// naive and/or two_stage.
    #[arg(long, value_delimiter = ',', default_values_t = vec![AttnMode::Naive, AttnMode::TwoStage], value_parser = parse_mode)]
    pub modes: Vec<AttnMode>,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 9)]
    pub repeats: usize,
    #[arg(long, default_value_t = 2)]
    pub warmups: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "runs")]
    pub outdir: PathBuf,
}

fn parse_mode(s: &str) -> Result<AttnMode, String> {
    s.parse()
}

pub fn cmd_bench(args: &BenchArgs) -> Result<(), AppError> {
    let sweep = SweepConfig {
        model_dim: args.dim,
        heads: args.heads,
        repeats: args.repeats,
        warmups: args.warmups,
        seed: args.seed,
        ..SweepConfig::default()
    };
    let resolved = format!(
        "t_values={}\nmodes={}\ndim={}\nheads={}\nrepeats={}\nwarmups={}\nseed={}\n",
        args.t_values.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","),
        args.modes.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
        args.dim,
        args.heads,
        args.repeats,
        args.warmups,
        args.seed
    );
    let points = run_complexity_sweep(
        &args.t_values,
        &medformer_core::complexity::power_series_patch_lengths,
        &args.modes,
        &sweep,
    )
    .map_err(|e| AppError::runtime(e.to_string()))?;

    for p in &points {
        if p.pair_count_measured != p.pair_count_formula {
            return Err(AppError::runtime(format!(
                "instrumented pair count {} disagrees with formula {} at T={} {}",
                p.pair_count_measured, p.pair_count_formula, p.series_len, p.mode
            )));
        }
    }

    let dir = run_dir(&args.outdir, "bench", &resolved);
    fs::create_dir_all(&dir)
        .map_err(|e| AppError::runtime(format!("cannot create {}: {}", dir.display(), e)))?;
    write_file(&dir.join("resolved.config"), &resolved)?;
    let csv = bench_csv(&points);
    write_file(&dir.join("bench.csv"), &csv)?;
    print!("{}", csv);
    println!("bench table -> {}", dir.join("bench.csv").display());
    Ok(())
}
