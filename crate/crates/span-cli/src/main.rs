//! `span` — the full pipeline as subcommands:
//! gen-data | train | eval | analyze.
//!
//! Exit codes: 0 success, 2 usage/config, 3 data error, 4 numeric failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use span_core::analysis::{
    attention_tracking_metric, pca, render_attention_overlay, success_table, SuccessSummary,
};
use span_core::config::Config;
use span_core::dataset;
use span_core::error::{Result, SpanError};
use span_core::model::ModelKind;
use span_core::sim::{generate_demos, BlockPos, Situation};
use span_core::train::{
    evaluate_closed_loop, model_from_records, train, EvalOptions, EvalPolicy, EvalReport, RunFile,
};

#[derive(Parser)]
#[command(
    name = "span",
    about = "Spatial attention point network: 2D picking simulator, training, evaluation, analysis",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. --set sigma=0.2.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Master seed; falls back to $SPAN_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let mut cfg = Config::new();
        if let Ok(env_seed) = std::env::var("SPAN_SEED") {
            cfg.set("seed", env_seed.trim())?;
        }
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        for kv in &self.sets {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                SpanError::Config(format!("--set expects KEY=VALUE, got {kv:?}"))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate teacher demonstrations for the taught positions.
    GenData {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated positions; only taught positions (A, C, E) are
        /// legal for training data.
        #[arg(long)]
        positions: Option<String>,
        /// Demonstrations per position.
        #[arg(long)]
        demos: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a model on a dataset directory.
    Train {
        /// Dataset directory produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoint, loss log and run metadata.
        #[arg(long)]
        out: PathBuf,
        /// span | span_alpha0 | cnnrnn.
        #[arg(long)]
        model: Option<String>,
        /// Weight of the point-consistency loss.
        #[arg(long, allow_negative_numbers = true)]
        alpha: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Closed-loop success-rate evaluation of a checkpoint.
    Eval {
        /// SPANCKPT checkpoint file.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run metadata JSON written by train (defaults to train_run.json
        /// beside the checkpoint).
        #[arg(long)]
        run: Option<PathBuf>,
        /// Output directory for report, summary and traces.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated positions to evaluate (default all A–E).
        #[arg(long)]
        positions: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        /// i | ii | iii | iv.
        #[arg(long)]
        situation: Option<String>,
        /// Parallel workers over (position, trial) pairs.
        #[arg(long)]
        workers: Option<usize>,
        /// Also write attention overlays (one PPM per logged frame of each
        /// position's first trial) into this directory.
        #[arg(long)]
        overlays: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// PCA projections and success tables from evaluation outputs.
    Analyze {
        /// Directory containing hidden_*.csv traces from eval.
        #[arg(long)]
        traces: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of principal components to keep.
        #[arg(long, default_value_t = 2)]
        pca_dims: usize,
        /// summary.json files to combine into a success table (repeatable).
        #[arg(long = "report")]
        reports: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            positions,
            demos,
            cfg,
        } => cmd_gen_data(out, positions, demos, cfg),
        Command::Train {
            data,
            out,
            model,
            alpha,
            epochs,
            cfg,
        } => cmd_train(data, out, model, alpha, epochs, cfg),
        Command::Eval {
            checkpoint,
            run,
            out,
            positions,
            trials,
            situation,
            workers,
            overlays,
            cfg,
        } => cmd_eval(
            checkpoint, run, out, positions, trials, situation, workers, overlays, cfg,
        ),
        Command::Analyze {
            traces,
            out,
            pca_dims,
            reports,
        } => cmd_analyze(traces, out, pca_dims, reports),
    }
}

fn parse_positions(text: &str) -> Result<Vec<BlockPos>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        if part.trim().is_empty() {
            continue;
        }
        out.push(BlockPos::parse(part)?);
    }
    if out.is_empty() {
        return Err(SpanError::Config("empty position list".into()));
    }
    Ok(out)
}

fn cmd_gen_data(
    out: PathBuf,
    positions: Option<String>,
    demos: Option<usize>,
    cfg_args: ConfigArgs,
) -> Result<()> {
    let mut cfg = cfg_args.resolve()?;
    if let Some(p) = &positions {
        cfg.set("positions", p)?;
    }
    if let Some(d) = demos {
        cfg.set("demos_per_position", &d.to_string())?;
    }
    let positions = parse_positions(cfg.get("positions"))?;
    for pos in &positions {
        if !pos.is_taught() {
            return Err(SpanError::Config(format!(
                "position {pos} is untaught and cannot appear in training data (taught: A, C, E)"
            )));
        }
    }
    let demos = cfg.get_usize("demos_per_position")?;
    let seed = cfg.get_u64("seed")?;
    let sim_cfg = cfg.sim_config()?;

    let episodes = generate_demos(&sim_cfg, &positions, demos, seed)?;
    let manifest = dataset::write_dataset(&out, &episodes, cfg.echo()?, seed)?;

    let frames: usize = episodes.iter().map(|e| e.len()).sum();
    let bytes: u64 = manifest
        .episodes
        .iter()
        .map(|e| fs::metadata(out.join(&e.file)).map(|m| m.len()).unwrap_or(0))
        .sum();
    println!(
        "wrote {} episodes ({} frames, {} bytes) to {}",
        episodes.len(),
        frames,
        bytes,
        out.display()
    );
    Ok(())
}

fn cmd_train(
    data: PathBuf,
    out: PathBuf,
    model: Option<String>,
    alpha: Option<f64>,
    epochs: Option<usize>,
    cfg_args: ConfigArgs,
) -> Result<()> {
    let mut cfg = cfg_args.resolve()?;
    if let Some(m) = &model {
        cfg.set("model", m)?;
    }
    if let Some(a) = alpha {
        if a < 0.0 {
            return Err(SpanError::Parameter(format!(
                "alpha must be non-negative, got {a}"
            )));
        }
        cfg.set("alpha", &a.to_string())?;
    }
    if let Some(e) = epochs {
        cfg.set("epochs", &e.to_string())?;
    }
    let kind = ModelKind::parse(cfg.get("model"))?;
    let span_cfg = cfg.span_config()?;
    let epochs = cfg.get_usize("epochs")?;
    let seed = cfg.get_u64("seed")?;

    let (episodes, _manifest) = dataset::load_dataset(&data)?;
    let (model, mut run) = train(&episodes, &span_cfg, kind, epochs, seed)?;
    run.config = cfg.echo()?;

    fs::create_dir_all(&out).map_err(|e| SpanError::io(out.display().to_string(), e))?;
    let ckpt_path = out.join("model.ckpt");
    let params = model.params();
    span_core::checkpoint::save(&ckpt_path, &params)?;

    let mut log = String::from("epoch,total,image,joints,points\n");
    for (i, l) in run.losses.iter().enumerate() {
        log.push_str(&format!(
            "{},{},{},{},{}\n",
            i + 1,
            l.total,
            l.image,
            l.joints,
            l.points
        ));
    }
    write_text(&out.join("loss_log.csv"), &log)?;

    let run_file = RunFile {
        run,
        checkpoint: "model.ckpt".into(),
    };
    write_json(&out.join("train_run.json"), &run_file)?;

    let first = run_file.run.losses.first().map(|l| l.total).unwrap_or(0.0);
    let last = run_file.run.losses.last().map(|l| l.total).unwrap_or(0.0);
    println!(
        "trained {} for {} epochs ({} parameters): loss {first:.6} → {last:.6}; checkpoint {}",
        run_file.run.model,
        run_file.run.epochs,
        run_file.run.param_count,
        ckpt_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    model: String,
    situation: String,
    trials: usize,
    successes: BTreeMap<char, usize>,
    total_successes: usize,
    /// Mean nearest-attention-to-block distance in pixels, per position
    /// (attention models only).
    attention_px: Option<BTreeMap<char, f64>>,
    config: BTreeMap<String, String>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: PathBuf,
    run: Option<PathBuf>,
    out: PathBuf,
    positions: Option<String>,
    trials: Option<usize>,
    situation: Option<String>,
    workers: Option<usize>,
    overlays: Option<PathBuf>,
    cfg_args: ConfigArgs,
) -> Result<()> {
    let run_path = run.unwrap_or_else(|| {
        checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join("train_run.json")
    });
    let run_text = fs::read_to_string(&run_path)
        .map_err(|e| SpanError::io(run_path.display().to_string(), e))?;
    let run_file: RunFile = serde_json::from_str(&run_text)
        .map_err(|e| SpanError::data(run_path.display().to_string(), e.to_string()))?;

    // configuration: run metadata first, then file/flag overrides
    let mut cfg = Config::new();
    for (k, v) in &run_file.run.config {
        cfg.set(k, v)?;
    }
    if let Some(path) = &cfg_args.config {
        cfg.load_file(path)?;
    }
    for kv in &cfg_args.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| SpanError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cfg_args.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(t) = trials {
        cfg.set("trials", &t.to_string())?;
    }
    if let Some(s) = &situation {
        cfg.set("situation", s)?;
    }
    if let Some(w) = workers {
        cfg.set("workers", &w.to_string())?;
    }

    let kind = ModelKind::parse(&run_file.run.model)?;
    let span_cfg = cfg.span_config()?;
    let sim_cfg = cfg.sim_config()?;
    let records = span_core::checkpoint::load(&checkpoint)?;
    let model = model_from_records(kind, &span_cfg, &records)?;

    let eval_positions = match &positions {
        Some(p) => parse_positions(p)?,
        None => BlockPos::ALL.to_vec(),
    };
    let opts = EvalOptions {
        positions: eval_positions,
        trials: cfg.get_usize("trials")?,
        situation: Situation::parse(cfg.get("situation"))?,
        master_seed: cfg.get_u64("seed")?,
        workers: cfg.get_usize("workers")?.max(1),
        keep_frames: overlays.is_some(),
    };
    let report = evaluate_closed_loop(&EvalPolicy::Model(&model), &sim_cfg, &opts)?;

    fs::create_dir_all(&out).map_err(|e| SpanError::io(out.display().to_string(), e))?;
    write_report_csv(&out.join("report.csv"), &report)?;
    write_traces(&out.join("traces"), &report)?;

    let attention_px = if model.is_span() {
        let mut by_pos: BTreeMap<char, Vec<f64>> = BTreeMap::new();
        for trace in &report.traces {
            if trace.enc_points.is_empty() {
                continue;
            }
            let d = attention_tracking_metric(&trace.block_px, &trace.enc_points, sim_cfg.image_hw)?;
            by_pos.entry(trace.position.label()).or_default().push(d);
        }
        Some(
            by_pos
                .into_iter()
                .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
                .collect(),
        )
    } else {
        None
    };

    if let Some(dir) = &overlays {
        write_overlays(dir, &report, sim_cfg.image_hw)?;
    }

    let summary = EvalSummary {
        model: report.model.clone(),
        situation: report.situation.tag().to_string(),
        trials: report.trials,
        successes: report.success_counts(),
        total_successes: report.total_successes(),
        attention_px,
        config: cfg.echo()?,
    };
    write_json(&out.join("summary.json"), &summary)?;

    println!(
        "evaluated {} under situation {}: {}/{} successes; report in {}",
        summary.model,
        summary.situation,
        summary.total_successes,
        report.rows.len(),
        out.display()
    );
    Ok(())
}

fn cmd_analyze(
    traces: PathBuf,
    out: PathBuf,
    pca_dims: usize,
    reports: Vec<PathBuf>,
) -> Result<()> {
    // gather hidden traces: hidden_<pos>_<trial>.csv
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<(String, usize)> = Vec::new(); // (episode id, step)
    let mut files: Vec<PathBuf> = fs::read_dir(&traces)
        .map_err(|e| SpanError::io(traces.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("hidden_") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(SpanError::data(
            traces.display().to_string(),
            "no hidden_*.csv traces found",
        ));
    }
    for path in &files {
        let name = path.file_stem().unwrap().to_string_lossy().to_string();
        let episode = name.trim_start_matches("hidden_").to_string();
        let text =
            fs::read_to_string(path).map_err(|e| SpanError::io(path.display().to_string(), e))?;
        for (step, line) in text.lines().skip(1).enumerate() {
            let vals: std::result::Result<Vec<f64>, _> = line
                .split(',')
                .skip(1)
                .map(|v| v.parse::<f64>())
                .collect();
            let vals = vals
                .map_err(|_| SpanError::data(path.display().to_string(), "bad number"))?;
            rows.push(vals);
            labels.push((episode.clone(), step));
        }
    }

    let result = pca(&rows, pca_dims)?;
    fs::create_dir_all(&out).map_err(|e| SpanError::io(out.display().to_string(), e))?;
    let mut csv = String::from("episode,step");
    for i in 0..pca_dims {
        csv.push_str(&format!(",pc{}", i + 1));
    }
    csv.push('\n');
    for ((episode, step), proj) in labels.iter().zip(&result.projected) {
        csv.push_str(episode);
        csv.push_str(&format!(",{step}"));
        for v in proj {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    write_text(&out.join("pca_projection.csv"), &csv)?;
    write_text(
        &out.join("pca_eigenvalues.csv"),
        &{
            let mut s = String::from("rank,eigenvalue\n");
            for (i, l) in result.eigenvalues.iter().enumerate() {
                s.push_str(&format!("{},{l}\n", i + 1));
            }
            s
        },
    )?;

    if !reports.is_empty() {
        let mut summaries = Vec::new();
        for path in &reports {
            let text = fs::read_to_string(path)
                .map_err(|e| SpanError::io(path.display().to_string(), e))?;
            let v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| SpanError::data(path.display().to_string(), e.to_string()))?;
            let counts: BTreeMap<char, usize> = v["successes"]
                .as_object()
                .map(|m| {
                    m.iter()
                        .map(|(k, v)| (k.chars().next().unwrap(), v.as_u64().unwrap_or(0) as usize))
                        .collect()
                })
                .unwrap_or_default();
            summaries.push(SuccessSummary {
                model: v["model"].as_str().unwrap_or("?").to_string(),
                situation: v["situation"].as_str().unwrap_or("?").to_string(),
                counts,
                trials: v["trials"].as_u64().unwrap_or(0) as usize,
            });
        }
        let table = success_table(&summaries)?;
        write_text(&out.join("success_table.csv"), &table)?;
    }

    println!(
        "analyzed {} trace files ({} rows) → {}; explained variance {:.3}",
        files.len(),
        rows.len(),
        out.display(),
        result.explained_ratio
    );
    Ok(())
}

// ── output helpers ──────────────────────────────────────────────────────

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text.as_bytes()).map_err(|e| SpanError::io(path.display().to_string(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| SpanError::data(path.display().to_string(), e.to_string()))?;
    write_text(path, &text)
}

fn write_report_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut csv = String::from("position,situation,trial,success,steps,final_distance\n");
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.position,
            row.situation,
            row.trial,
            row.success as u8,
            row.steps,
            row.final_distance
        ));
    }
    write_text(path, &csv)
}

fn write_traces(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SpanError::io(dir.display().to_string(), e))?;
    for trace in &report.traces {
        if trace.hidden.is_empty() {
            continue;
        }
        let width = trace.hidden[0].len();
        let mut csv = String::from("step");
        for i in 0..width {
            csv.push_str(&format!(",h{i}"));
        }
        csv.push('\n');
        for (step, h) in trace.hidden.iter().enumerate() {
            csv.push_str(&step.to_string());
            for v in h {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
        }
        let name = format!("hidden_{}{}.csv", trace.position.label(), trace.trial);
        write_text(&dir.join(name), &csv)?;

        if !trace.enc_points.is_empty() {
            let k = trace.enc_points[0].len();
            let mut csv = String::from("step,block_row,block_col");
            for i in 0..k {
                csv.push_str(&format!(",x{i},y{i}"));
            }
            csv.push('\n');
            for (step, (points, block)) in
                trace.enc_points.iter().zip(&trace.block_px).enumerate()
            {
                csv.push_str(&format!("{step},{},{}", block.0, block.1));
                for (x, y) in points {
                    csv.push_str(&format!(",{x},{y}"));
                }
                csv.push('\n');
            }
            let name = format!("attention_{}{}.csv", trace.position.label(), trace.trial);
            write_text(&dir.join(name), &csv)?;
        }
    }
    Ok(())
}

fn write_overlays(dir: &Path, report: &EvalReport, hw: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SpanError::io(dir.display().to_string(), e))?;
    for trace in &report.traces {
        if trace.trial != 0 {
            continue;
        }
        let Some(frames) = &trace.frames else { continue };
        for (step, frame) in frames.iter().enumerate() {
            let data: Vec<f64> = frame.iter().map(|&v| v as f64).collect();
            let tensor = span_core::tensor::Tensor::from_vec(data, &[3, hw, hw])?;
            let enc = trace.enc_points.get(step).cloned().unwrap_or_default();
            let dec = trace.dec_points.get(step).cloned().unwrap_or_default();
            let rgb = render_attention_overlay(&tensor, &enc, &dec)?;
            let name = format!("overlay_{}_t{step:03}.ppm", trace.position.label());
            dataset::write_ppm(&dir.join(name), &rgb, hw, hw)?;
        }
    }
    Ok(())
}
