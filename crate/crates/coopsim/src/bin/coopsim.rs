//! Command-line driver: scenario generation, teacher/student training,
//! evaluation sweeps, ablations, and link-trace inspection. Every command
//! takes a JSON config (all fields optional), writes its artifacts plus a
//! run manifest into --out, and is fully reproducible from its seeds.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use coopsim::baseline::TrackerConfig;
use coopsim::comms::LinkTrace;
use coopsim::config::AppConfig;
use coopsim::eval::{
    git_describe, run_components_ablation, run_history_k_ablation, run_num_nodes_ablation,
    run_pdr_sweep, run_pose_noise_sweep, write_manifest, write_noise_csv, write_records_csv,
    EvalRecord, Method, RunManifest, SweepContext,
};
use coopsim::numerics::AdamConfig;
use coopsim::pipeline::{ModelConfig, ModelWeights};
use coopsim::system::{prepare_scenarios, PreparedScenario};
use coopsim::training::{
    train_student, train_teacher, write_training_log, PSchedule, TrainSettings, TrainVariant,
};
use coopsim::world::{generate_scenario, load_scenario, save_scenario, Scenario};

#[derive(Parser)]
#[command(name = "coopsim", version, about = "Cooperative-perception testbed under lossy V2X links")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a deterministic scenario set into --out.
    GenScenarios {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Number of scenarios; defaults to train.train_scenarios.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the ideal-communication teacher on a scenario directory.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a student variant against a frozen teacher checkpoint.
    TrainStudent {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        /// Teacher checkpoint stem (expects <stem>.json and <stem>.bin).
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// One of: full, msstp-kd, msstp, temporal-summation, no-history.
        #[arg(long, default_value = "full")]
        variant: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// AP over the packet-drop-rate grid for one method.
    EvalSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// incop | no_history | temporal_summation | ego_only | kalman_late_fusion
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: PathBuf,
        /// Replaces eval.eval_seeds with seed, seed+1, ...
        #[arg(long)]
        seed: Option<u64>,
        /// Override the model's history window (for k-ablation checkpoints).
        #[arg(long)]
        history_k: Option<usize>,
    },
    /// AP across pose-noise levels at the configured fixed drop rate.
    NoiseSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Component / history-length / node-count ablations.
    Ablate {
        /// components | history-k | num-nodes
        #[arg(long)]
        kind: String,
        #[arg(long)]
        config: PathBuf,
        /// Scenario directory (components and history-k kinds).
        #[arg(long)]
        scenarios: Option<PathBuf>,
        /// Directory of checkpoints (components: student_<variant>;
        /// history-k: student_k<k>).
        #[arg(long)]
        models: Option<PathBuf>,
        /// Single checkpoint stem (num-nodes kind).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Export one link trace as CSV for auditing.
    InspectTrace {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors that are the caller's fault exit with code 2; everything else
/// exits 1.
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    };
    std::process::exit(code);
}

fn load_config(path: &Path) -> Result<AppConfig, CliError> {
    if !path.exists() {
        return Err(CliError::usage(format!("config file not found: {}", path.display())));
    }
    AppConfig::load(path).map_err(|e| CliError::usage(e.to_string()))
}

fn load_scenario_dir(dir: &Path) -> Result<Vec<Scenario>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::usage(format!("scenario directory not found: {}", dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("scenario_")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::usage(format!("no scenario_*.json files in {}", dir.display())));
    }
    paths.iter().map(|p| load_scenario(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))).collect()
}

fn load_checkpoint_stem(stem: &Path, cfg: &ModelConfig) -> Result<ModelWeights, CliError> {
    let manifest = stem.with_extension("json");
    if !manifest.exists() {
        return Err(CliError::usage(format!("checkpoint not found: {}", manifest.display())));
    }
    ModelWeights::load(stem, cfg).map_err(|e| CliError::Runtime(e.to_string()))
}

fn parse_method(name: &str) -> Result<Method, CliError> {
    Method::from_name(name).ok_or_else(|| {
        CliError::usage(format!(
            "unknown method '{name}' (expected incop, no_history, temporal_summation, ego_only, or kalman_late_fusion)"
        ))
    })
}

fn eval_seeds(cfg: &AppConfig, seed: Option<u64>) -> Vec<u64> {
    match seed {
        Some(s) => (0..cfg.eval.eval_seeds.len().max(1) as u64).map(|i| s + i).collect(),
        None => cfg.eval.eval_seeds.clone(),
    }
}

fn settings_from(cfg: &AppConfig, epochs: usize, seed: Option<u64>, schedule: PSchedule) -> TrainSettings {
    TrainSettings {
        epochs,
        adam: AdamConfig { lr: cfg.train.learning_rate as f32, ..AdamConfig::default() },
        loss: cfg.train.loss,
        seed: seed.unwrap_or(cfg.train.seed),
        schedule,
    }
}

fn prepared_from_dir(cfg: &AppConfig, dir: &Path) -> Result<Vec<PreparedScenario>, CliError> {
    let scenarios = load_scenario_dir(dir)?;
    prepare_scenarios(&scenarios, &cfg.sensor).map_err(|e| CliError::Runtime(e.to_string()))
}

fn finish(
    out_dir: &Path,
    command: &str,
    cfg: &AppConfig,
    seed: u64,
    started: Instant,
) -> Result<(), CliError> {
    let manifest = RunManifest {
        command: command.to_string(),
        seed,
        config: cfg.to_json_value(),
        git_describe: git_describe(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Cmd::GenScenarios { config, seed, out, count } => {
            let started = Instant::now();
            let cfg = load_config(&config)?;
            let count = count.unwrap_or(cfg.train.train_scenarios);
            if count == 0 {
                return Err(CliError::usage("scenario count must be positive"));
            }
            fs::create_dir_all(&out)?;
            for i in 0..count {
                let scenario = generate_scenario(&cfg.world, seed + i as u64)
                    .map_err(|e| CliError::usage(e.to_string()))?;
                save_scenario(&out.join(format!("scenario_{i:03}.json")), &scenario)?;
            }
            println!("wrote {count} scenarios to {}", out.display());
            finish(&out, "gen-scenarios", &cfg, seed, started)
        }

        Cmd::TrainTeacher { config, scenarios, out, seed } => {
            let started = Instant::now();
            let cfg = load_config(&config)?;
            let prepared = prepared_from_dir(&cfg, &scenarios)?;
            let settings =
                settings_from(&cfg, cfg.train.teacher_epochs, seed, PSchedule::Fixed(0.0));
            let result = train_teacher(&prepared, &cfg.sensor, &cfg.model, &settings)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            fs::create_dir_all(&out)?;
            result.weights.save(&out.join("teacher"))?;
            let mut log = Vec::new();
            write_training_log(&mut log, &result.log)?;
            fs::write(out.join("train_log.csv"), log)?;
            println!(
                "teacher trained: final det loss {:.4}",
                result.log.last().map_or(f64::NAN, |e| e.mean_det_loss)
            );
            finish(&out, "train-teacher", &cfg, settings.seed, started)
        }

        Cmd::TrainStudent { config, scenarios, teacher, out, variant, seed } => {
            let started = Instant::now();
            let cfg = load_config(&config)?;
            let prepared = prepared_from_dir(&cfg, &scenarios)?;
            let teacher_weights = load_checkpoint_stem(&teacher, &cfg.model)?;
            let uniform = PSchedule::Uniform { lo: 0.0, hi: 1.0 };
            let (train_variant, schedule, stem) = match variant.as_str() {
                "full" => (
                    TrainVariant::predictor_kd(),
                    PSchedule::Curriculum(cfg.train.curriculum),
                    "student_full",
                ),
                "msstp-kd" => (TrainVariant::predictor_kd(), uniform, "student_msstp_kd"),
                "msstp" => (TrainVariant::predictor(), uniform, "student_msstp"),
                "temporal-summation" => {
                    (TrainVariant::temporal_summation(), uniform, "student_temporal_summation")
                }
                "no-history" => (TrainVariant::no_history(), uniform, "student_no_history"),
                other => {
                    return Err(CliError::usage(format!(
                        "unknown variant '{other}' (expected full, msstp-kd, msstp, temporal-summation, or no-history)"
                    )))
                }
            };
            let settings = settings_from(&cfg, cfg.train.student_epochs, seed, schedule);
            let result = train_student(
                &prepared,
                &cfg.sensor,
                &cfg.model,
                &settings,
                train_variant,
                Some(&teacher_weights),
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?;
            fs::create_dir_all(&out)?;
            result.weights.save(&out.join(stem))?;
            let mut log = Vec::new();
            write_training_log(&mut log, &result.log)?;
            fs::write(out.join(format!("{stem}_train_log.csv")), log)?;
            println!("student '{variant}' trained -> {}", out.join(stem).display());
            finish(&out, "train-student", &cfg, settings.seed, started)
        }

        Cmd::EvalSweep { config, scenarios, checkpoint, method, out, seed, history_k } => {
            let started = Instant::now();
            let cfg = load_config(&config)?;
            let method = parse_method(&method)?;
            let mut model_cfg = cfg.model;
            if let Some(k) = history_k {
                model_cfg.history_k = k;
            }
            let weights = load_checkpoint_stem(&checkpoint, &model_cfg)?;
            let prepared = prepared_from_dir(&cfg, &scenarios)?;
            let tracker = TrackerConfig::default();
            let ctx = SweepContext {
                prepared: &prepared,
                sensor: &cfg.sensor,
                model_cfg: &model_cfg,
                tracker_cfg: &tracker,
            };
            let seeds = eval_seeds(&cfg, seed);
            let records = run_pdr_sweep(&ctx, method, &weights, &cfg.eval.p_list, &seeds)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            fs::create_dir_all(&out)?;
            let mut csv = Vec::new();
            write_records_csv(&mut csv, &records)?;
            fs::write(out.join("results.csv"), csv)?;
            print_summary(&records);
            finish(&out, "eval-sweep", &cfg, seeds.first().copied().unwrap_or(0), started)
        }

        Cmd::NoiseSweep { config, scenarios, checkpoint, method, out, seed } => {
            let started = Instant::now();
            let cfg = load_config(&config)?;
            let method = parse_method(&method)?;
            let weights = load_checkpoint_stem(&checkpoint, &cfg.model)?;
            let prepared = prepared_from_dir(&cfg, &scenarios)?;
            let tracker = TrackerConfig::default();
            let ctx = SweepContext {
                prepared: &prepared,
                sensor: &cfg.sensor,
                model_cfg: &cfg.model,
                tracker_cfg: &tracker,
            };
            let seeds = eval_seeds(&cfg, seed);
            let records = run_pose_noise_sweep(
                &ctx,
                method,
                &weights,
                &cfg.eval.noise_levels,
                cfg.eval.noise_p,
                &seeds,
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?;
            fs::create_dir_all(&out)?;
            let mut csv = Vec::new();
            write_noise_csv(&mut csv, &records)?;
            fs::write(out.join("noise_results.csv"), csv)?;
            finish(&out, "noise-sweep", &cfg, seeds.first().copied().unwrap_or(0), started)
        }

        Cmd::Ablate { kind, config, scenarios, models, checkpoint, out, seed } => {
            let started = Instant::now();
            let cfg = load_config(&config)?;
            let tracker = TrackerConfig::default();
            let seeds = eval_seeds(&cfg, seed);
            let records = match kind.as_str() {
                "components" => {
                    let models_dir = models
                        .ok_or_else(|| CliError::usage("--models is required for --kind components"))?;
                    let scenarios_dir = scenarios
                        .ok_or_else(|| CliError::usage("--scenarios is required for --kind components"))?;
                    let prepared = prepared_from_dir(&cfg, &scenarios_dir)?;
                    let ctx = SweepContext {
                        prepared: &prepared,
                        sensor: &cfg.sensor,
                        model_cfg: &cfg.model,
                        tracker_cfg: &tracker,
                    };
                    let known: [(&str, Method); 5] = [
                        ("student_no_history", Method::NoHistory),
                        ("student_temporal_summation", Method::TemporalSummation),
                        ("student_msstp", Method::Incop),
                        ("student_msstp_kd", Method::Incop),
                        ("student_full", Method::Incop),
                    ];
                    let mut loaded = Vec::new();
                    for (stem, method) in known {
                        let path = models_dir.join(stem);
                        if path.with_extension("json").exists() {
                            let w = load_checkpoint_stem(&path, &cfg.model)?;
                            loaded.push((stem.trim_start_matches("student_").to_string(), method, w));
                        }
                    }
                    if loaded.is_empty() {
                        return Err(CliError::usage(format!(
                            "no student_* checkpoints found in {}",
                            models_dir.display()
                        )));
                    }
                    let refs: Vec<(String, Method, &ModelWeights)> =
                        loaded.iter().map(|(n, m, w)| (n.clone(), *m, w)).collect();
                    run_components_ablation(&ctx, &refs, &cfg.eval.p_list, &seeds)
                        .map_err(|e| CliError::Runtime(e.to_string()))?
                }
                "history-k" => {
                    let models_dir = models
                        .ok_or_else(|| CliError::usage("--models is required for --kind history-k"))?;
                    let scenarios_dir = scenarios
                        .ok_or_else(|| CliError::usage("--scenarios is required for --kind history-k"))?;
                    let prepared = prepared_from_dir(&cfg, &scenarios_dir)?;
                    let ctx = SweepContext {
                        prepared: &prepared,
                        sensor: &cfg.sensor,
                        model_cfg: &cfg.model,
                        tracker_cfg: &tracker,
                    };
                    let mut loaded = Vec::new();
                    for k in 1..=5usize {
                        let path = models_dir.join(format!("student_k{k}"));
                        if path.with_extension("json").exists() {
                            let model_cfg = ModelConfig { history_k: k, ..cfg.model };
                            let w = load_checkpoint_stem(&path, &model_cfg)?;
                            loaded.push((k, w));
                        }
                    }
                    if loaded.is_empty() {
                        return Err(CliError::usage(format!(
                            "no student_k<k> checkpoints found in {}",
                            models_dir.display()
                        )));
                    }
                    let refs: Vec<(usize, &ModelWeights)> =
                        loaded.iter().map(|(k, w)| (*k, w)).collect();
                    run_history_k_ablation(&ctx, &refs, &cfg.eval.p_list, &seeds)
                        .map_err(|e| CliError::Runtime(e.to_string()))?
                }
                "num-nodes" => {
                    let stem = checkpoint
                        .ok_or_else(|| CliError::usage("--checkpoint is required for --kind num-nodes"))?;
                    let weights = load_checkpoint_stem(&stem, &cfg.model)?;
                    let scenario_seeds: Vec<u64> =
                        (0..cfg.train.test_scenarios as u64).map(|i| 9000 + i).collect();
                    run_num_nodes_ablation(
                        &cfg.world,
                        &cfg.sensor,
                        &cfg.model,
                        &tracker,
                        &weights,
                        &[2, 3, 4, 5],
                        &scenario_seeds,
                        &cfg.eval.p_list,
                        &seeds,
                    )
                    .map_err(|e| CliError::Runtime(e.to_string()))?
                }
                other => {
                    return Err(CliError::usage(format!(
                        "unknown ablation kind '{other}' (expected components, history-k, or num-nodes)"
                    )))
                }
            };
            fs::create_dir_all(&out)?;
            let mut csv = Vec::new();
            write_records_csv(&mut csv, &records)?;
            fs::write(out.join("results.csv"), csv)?;
            print_summary(&records);
            finish(&out, "ablate", &cfg, seeds.first().copied().unwrap_or(0), started)
        }

        Cmd::InspectTrace { nodes, frames, p, seed, out } => {
            let trace = LinkTrace::generate(nodes, frames, p, seed)
                .map_err(|e| CliError::usage(e.to_string()))?;
            fs::create_dir_all(&out)?;
            let mut csv = Vec::new();
            trace.write_csv(&mut csv)?;
            fs::write(out.join("trace.csv"), csv)?;
            println!(
                "trace: {nodes} nodes, {frames} frames, p={p}, empirical delivery {:.4}",
                trace.delivery_rate()
            );
            Ok(())
        }
    }
}

/// Per-method mean AP over the sweep grid (the summary tables' Avg column).
fn print_summary(records: &[EvalRecord]) {
    let mut methods: Vec<String> = records.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();
    for m in methods {
        for iou in [0.5, 0.7] {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.method == m && (r.iou - iou).abs() < 1e-9)
                .map(|r| r.ap)
                .collect();
            if !vals.is_empty() {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                println!("{m} AP@{iou}: mean over grid = {mean:.4}");
            }
        }
    }
}
