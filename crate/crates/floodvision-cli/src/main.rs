//! `floodvision`: flood depth estimation from street-level photos, with
//! knowledge-graph curation, batch runs, evaluation, and the grounding
//! study behind one entry point.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 validation/usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use floodvision::config::{AppConfig, ConfigError};
use floodvision::engine::SceneStatus;
use floodvision::eval::EvalError;
use floodvision::gateway::{BackendKind, GatewayError, API_KEY_ENV};
use floodvision::kg::{load_kg, EntityId, KgError};
use floodvision::pipeline::{
    load_kg_file, load_manifest_file, run_batch, run_baseline_batch, run_evaluate, run_single,
};
use floodvision::sim::{run_study, NoiseModel, SimConfig, SimError};

#[derive(Parser)]
#[command(name = "floodvision", version, about = "Urban flood depth estimation from RGB images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate flood depth for a single image (result JSON on stdout).
    Estimate {
        /// Path to the input image (JPEG or PNG).
        #[arg(long)]
        image: PathBuf,
        /// Knowledge graph file (overrides config kg_path).
        #[arg(long)]
        kg: Option<PathBuf>,
        /// Config file (backend, filter policy).
        #[arg(long)]
        config: PathBuf,
    },

    /// Run the pipeline over a manifest, one result file per image.
    Batch(BatchArgs),

    /// Knowledge graph curation commands.
    #[command(subcommand)]
    Kg(KgCommand),

    /// Score batch results against a ground-truth manifest.
    Evaluate {
        /// Manifest CSV (id,image_path,ground_truth_cm[,lat,lon]).
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of per-scene result files from `batch`.
        #[arg(long)]
        results: PathBuf,
        /// Directory of baseline result files from `batch --baseline`.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Output directory for metrics.json and residuals.csv.
        #[arg(long)]
        out: PathBuf,
    },

    /// Run the synthetic grounding study.
    Simulate {
        /// Knowledge graph file supplying canonical entities.
        #[arg(long)]
        kg: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Number of synthetic scenes.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Lognormal sigma of the height hallucination noise.
        #[arg(long, default_value_t = 0.3)]
        sigma_h: f64,
        /// Gaussian sigma of the submergence ratio noise.
        #[arg(long, default_value_t = 0.05)]
        sigma_r: f64,
        /// Probability that an emitted label fails matching.
        #[arg(long, default_value_t = 0.1)]
        mislabel: f64,
        /// Smallest true depth in cm.
        #[arg(long, default_value_t = 5.0)]
        depth_min: f64,
        /// Largest true depth in cm.
        #[arg(long, default_value_t = 80.0)]
        depth_max: f64,
        /// Where to write the study report JSON.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct BatchArgs {
    /// Manifest CSV (id,image_path,ground_truth_cm[,lat,lon]); image paths
    /// resolve relative to the manifest's directory.
    #[arg(long)]
    manifest: PathBuf,
    /// Config file (backend, filter policy, defaults for paths).
    #[arg(long)]
    config: PathBuf,
    /// Knowledge graph file (overrides config kg_path).
    #[arg(long)]
    kg: Option<PathBuf>,
    /// Results directory (overrides config output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bounded worker count (overrides config backend.parallelism).
    #[arg(long)]
    parallelism: Option<usize>,
    /// Fold pending knowledge-graph entries back into the KG file
    /// (atomic rewrite) after the batch completes.
    #[arg(long)]
    apply_pending: bool,
    /// Run the knowledge-graph-free baseline prompt instead and write
    /// baseline result files.
    #[arg(long)]
    baseline: bool,
}

#[derive(Subcommand)]
enum KgCommand {
    /// Validate a knowledge graph file; lists every violation.
    Validate { path: PathBuf },
    /// Show one entity and the relations it participates in.
    Show {
        id: String,
        #[arg(long)]
        kg: PathBuf,
    },
}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}

/// Die quietly when a pipe reader (e.g. `head`) closes stdout early,
/// instead of panicking on the failed write.
fn reset_sigpipe() {
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

/// Usage and validation problems exit 2; everything else is a runtime
/// failure (1).
fn classify(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>()
            || cause.is::<EvalError>()
            || cause.is::<SimError>()
            || matches!(
                cause.downcast_ref::<KgError>(),
                Some(KgError::Parse(_) | KgError::Invalid(_) | KgError::InvalidEntityId(_))
            )
            || matches!(
                cause.downcast_ref::<GatewayError>(),
                Some(GatewayError::BadConfig(_) | GatewayError::MissingApiKey)
            )
            || cause.is::<UsageError>()
        {
            return 2;
        }
    }
    1
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(anyhow!(UsageError(format!(
            "{what} {} does not exist",
            path.display()
        ))))
    }
}

/// Paths referenced by the config must resolve before any work starts.
fn preflight(config: &AppConfig, config_dir: &Path) -> Result<()> {
    if config.backend.kind == BackendKind::Http && std::env::var(API_KEY_ENV).is_err() {
        return Err(anyhow!(GatewayError::MissingApiKey));
    }
    if config.backend.kind == BackendKind::Mock {
        let dir = resolve(config_dir, config.backend.fixture_dir.as_deref().unwrap_or(""));
        require_exists(&dir, "backend.fixture_dir")?;
    }
    Ok(())
}

/// Relative paths in the config file resolve against the config's directory.
fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn effective_kg_path(flag: Option<PathBuf>, config: &AppConfig, config_dir: &Path) -> Result<PathBuf> {
    let path = match flag {
        Some(p) => p,
        None => match &config.kg_path {
            Some(p) => resolve(config_dir, p),
            None => {
                return Err(anyhow!(UsageError(
                    "no knowledge graph given: pass --kg or set kg_path in the config".into()
                )))
            }
        },
    };
    require_exists(&path, "knowledge graph")?;
    Ok(path)
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Estimate { image, kg, config } => {
            let app = AppConfig::load(&config)?;
            let config_dir = config.parent().unwrap_or(Path::new(".")).to_path_buf();
            preflight(&app, &config_dir)?;
            let app = rebase_backend(app, &config_dir);
            let kg_path = effective_kg_path(kg, &app, &config_dir)?;
            require_exists(&image, "image")?;
            let result = run_single(&app, &kg_path, &image)?;
            print!("{}", result.to_json_pretty());
            Ok(if result.status == SceneStatus::Failure { 1 } else { 0 })
        }

        Command::Batch(args) => {
            let app = AppConfig::load(&args.config)?;
            let config_dir = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
            preflight(&app, &config_dir)?;
            let app = rebase_backend(app, &config_dir);
            require_exists(&args.manifest, "manifest")?;
            let manifest = load_manifest_file(&args.manifest)?;
            let manifest_dir = args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
            let out_dir = match (args.out, &app.output_dir) {
                (Some(o), _) => o,
                (None, Some(o)) => resolve(&config_dir, o),
                (None, None) => {
                    return Err(anyhow!(UsageError(
                        "no output directory: pass --out or set output_dir in the config".into()
                    )))
                }
            };
            let parallelism = args.parallelism.unwrap_or(app.backend.parallelism).max(1);

            if args.baseline {
                let n_ok = run_baseline_batch(&app, &manifest, &manifest_dir, &out_dir, parallelism)?;
                eprintln!(
                    "baseline batch: {n_ok}/{} predictions -> {}",
                    manifest.len(),
                    out_dir.display()
                );
                return Ok(0);
            }

            let kg_path = effective_kg_path(args.kg, &app, &config_dir)?;
            let summary = run_batch(
                &app,
                &manifest,
                &manifest_dir,
                &kg_path,
                &out_dir,
                parallelism,
                args.apply_pending,
            )?;
            eprintln!(
                "batch: {} estimate, {} no-estimate, {} failure over {} images -> {}",
                summary.n_estimate,
                summary.n_no_estimate,
                summary.n_failure,
                summary.n_images,
                out_dir.display()
            );
            if args.apply_pending {
                eprintln!(
                    "applied {} pending entries to {}",
                    summary.n_pending_applied,
                    kg_path.display()
                );
            }
            Ok(0)
        }

        Command::Kg(KgCommand::Validate { path }) => {
            require_exists(&path, "knowledge graph")?;
            let bytes =
                std::fs::read(&path).with_context(|| format!("failed to read {}", path.display()))?;
            match load_kg(&bytes) {
                Ok(kg) => {
                    println!(
                        "{}: valid ({} entities, {} relations)",
                        path.display(),
                        kg.len(),
                        kg.relations().count()
                    );
                    Ok(0)
                }
                Err(KgError::Invalid(report)) => {
                    println!("{}: {} violation(s)", path.display(), report.len());
                    print!("{report}");
                    Ok(2)
                }
                Err(other) => Err(anyhow!(other)),
            }
        }

        Command::Kg(KgCommand::Show { id, kg }) => {
            require_exists(&kg, "knowledge graph")?;
            let graph = load_kg_file(&kg)?;
            let entity_id =
                EntityId::new(id.clone()).map_err(|e| anyhow!(UsageError(e.to_string())))?;
            let Some(entity) = graph.entity(&entity_id) else {
                return Err(anyhow!(UsageError(format!(
                    "entity {id:?} not found in {}",
                    kg.display()
                ))));
            };
            let relations: Vec<String> = graph
                .relations()
                .filter(|r| r.subject == entity_id || r.object == entity_id)
                .map(|r| format!("{} {} {}", r.subject, r.predicate, r.object))
                .collect();
            let mut doc = serde_json::to_value(entity)?;
            doc["relations"] = serde_json::to_value(relations)?;
            println!("{}", serde_json::to_string_pretty(&doc)?);
            Ok(0)
        }

        Command::Evaluate { manifest, results, baseline, out } => {
            require_exists(&manifest, "manifest")?;
            require_exists(&results, "results directory")?;
            if let Some(b) = &baseline {
                require_exists(b, "baseline directory")?;
            }
            let records = load_manifest_file(&manifest)?;
            let report = run_evaluate(&records, &results, baseline.as_deref(), &out)?;
            for (variant, m) in &report.variants {
                let mae = m.mae_cm.map_or("n/a".to_string(), |v| format!("{v:.2}"));
                let r = m.pearson_r.map_or("undefined".to_string(), |v| format!("{v:.3}"));
                println!(
                    "{:<8} mae_cm={:<8} pearson_r={:<10} n_scored={} n_failed={}",
                    variant.as_str(),
                    mae,
                    r,
                    m.n_scored,
                    m.n_failed
                );
            }
            eprintln!("reports written to {}", out.display());
            Ok(0)
        }

        Command::Simulate {
            kg,
            seed,
            n,
            sigma_h,
            sigma_r,
            mislabel,
            depth_min,
            depth_max,
            out,
        } => {
            require_exists(&kg, "knowledge graph")?;
            let graph = load_kg_file(&kg)?;
            let config = SimConfig { seed, n_scenes: n, depth_range_cm: (depth_min, depth_max) };
            let noise = NoiseModel { sigma_h, sigma_r, mislabel_prob: mislabel };
            let report = run_study(&graph, &config, &noise)?;
            let mut json = serde_json::to_vec_pretty(&report)?;
            json.push(b'\n');
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(&out, &json)
                .with_context(|| format!("failed to write {}", out.display()))?;
            println!(
                "grounded mae {:.3} cm vs baseline {:.3} cm ({:+.1}% reduction) over {} scenes",
                report.mae_grounded_cm, report.mae_baseline_cm, report.reduction_pct, report.n_scenes
            );
            Ok(0)
        }
    }
}

/// Mock fixture dirs in the config are relative to the config file, not
/// the process working directory.
fn rebase_backend(mut app: AppConfig, config_dir: &Path) -> AppConfig {
    if let Some(dir) = &app.backend.fixture_dir {
        app.backend.fixture_dir = Some(resolve(config_dir, dir).display().to_string());
    }
    app
}
