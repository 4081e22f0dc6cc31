//! Command-line frontend: train, evaluate, predict, gradcheck, stats,
//! convert.

mod config;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use answerseq_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use answerseq_core::corpus::{
    class_proportions, dataset_stats, from_canonical, parse_semeval_xml_with, to_canonical,
    to_semeval_xml, ParsedCorpus, ParseWarnings,
};
use answerseq_core::embedding::tokenize;
use answerseq_core::gradcheck::{grad_check, jitter_zero_biases};
use answerseq_core::lstm::Label;
use answerseq_core::metrics::{emit_report, pct2, reference_scores, ReportFormat};
use answerseq_core::model::{
    encode_thread, thread_loss, thread_loss_and_grads, Mode, ModelConfig, ModelParams,
};
use answerseq_core::rng::Rng;
use answerseq_core::train::{
    evaluate_threads, history_tsv, predict_corpus, train, train_cnn_only, TrainOutcome,
    STREAM_INIT,
};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "answerseq",
    about = "Label community-QA answers Good/Bad/Potential with a convolutional-recurrent sequence model",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, history, and resolved config.
    Train(Overrides),
    /// Score a labeled corpus with a trained checkpoint.
    Evaluate(EvaluateArgs),
    /// Emit per-answer predictions (gold labels not required).
    Predict(Overrides),
    /// Verify analytic gradients against finite differences on a reduced model.
    Gradcheck(Overrides),
    /// Print corpus statistics (questions, answers, mean answers/question).
    Stats(Overrides),
    /// Convert between the task XML and the canonical line format.
    Convert(ConvertArgs),
}

#[derive(clap::Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Overrides,
    /// Also print the published benchmark rows for comparison.
    #[arg(long)]
    reference: bool,
}

#[derive(clap::Args)]
struct ConvertArgs {
    #[command(flatten)]
    common: Overrides,
    /// Target format: "canonical" or "xml" (default: the other one).
    #[arg(long)]
    to: Option<String>,
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum LogLevel {
    Quiet = 0,
    Info = 1,
    Debug = 2,
}

fn log_level() -> LogLevel {
    match std::env::var("ANSWERSEQ_LOG").as_deref() {
        Ok("quiet") => LogLevel::Quiet,
        Ok("debug") => LogLevel::Debug,
        _ => LogLevel::Info,
    }
}

fn info(msg: &str) {
    if log_level() >= LogLevel::Info {
        eprintln!("{msg}");
    }
}

fn debug(msg: &str) {
    if log_level() >= LogLevel::Debug {
        eprintln!("[debug] {msg}");
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(flags) => cmd_train(&flags),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Predict(flags) => cmd_predict(&flags),
        Command::Gradcheck(flags) => cmd_gradcheck(&flags),
        Command::Stats(flags) => cmd_stats(&flags),
        Command::Convert(args) => cmd_convert(&args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_threads(path: &str, require_gold: bool) -> Result<ParsedCorpus> {
    if !Path::new(path).exists() {
        bail!("data path does not exist: {path}");
    }
    if path.ends_with(".xml") {
        Ok(parse_semeval_xml_with(Path::new(path), require_gold)
            .with_context(|| format!("parsing {path}"))?)
    } else {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
        let threads =
            from_canonical(text.as_bytes()).with_context(|| format!("parsing {path}"))?;
        Ok(ParsedCorpus {
            threads,
            warnings: ParseWarnings::default(),
        })
    }
}

fn report_warnings(path: &str, w: &ParseWarnings) {
    if w.skipped_missing_gold > 0 {
        info(&format!(
            "{path}: skipped {} comments without gold annotation",
            w.skipped_missing_gold
        ));
    }
    if w.unknown_labels > 0 {
        info(&format!(
            "{path}: {} unknown labels mapped to Bad",
            w.unknown_labels
        ));
    }
    if w.truncated_threads > 0 {
        info(&format!(
            "{path}: truncated {} threads to the answer cap",
            w.truncated_threads
        ));
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(flags: &Overrides) -> Result<()> {
    let cfg = RunConfig::resolve(flags)?;
    let data_path = cfg.require_data()?;
    let out_dir = cfg.out_dir().to_path_buf();
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    // The resolved config goes out first so every run is reproducible even if
    // it later aborts.
    let echo = cfg.echo();
    write_file(&out_dir.join("config.resolved"), &echo)?;

    let corpus = load_threads(data_path, true)?;
    report_warnings(data_path, &corpus.warnings);
    let dev = match &cfg.dev {
        Some(p) => {
            let parsed = load_threads(p, true)?;
            report_warnings(p, &parsed.warnings);
            parsed.threads
        }
        None => Vec::new(),
    };

    let embedder = cfg
        .embedding
        .build(cfg.model.embed_dim)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut init_rng = Rng::seed(cfg.train.seed, STREAM_INIT);
    let init = ModelParams::init(&cfg.model, &mut init_rng).map_err(|e| anyhow::anyhow!("{e}"))?;
    info(&format!(
        "training on {} threads ({} dev), mode {}, {} parameters",
        corpus.threads.len(),
        dev.len(),
        cfg.model.mode.as_str(),
        init.param_count()
    ));

    let started = Instant::now();
    let outcome: TrainOutcome = match cfg.model.mode {
        Mode::Rcnn => train(&corpus.threads, &dev, &embedder, &cfg.model, &cfg.train, init),
        Mode::CnnOnly => {
            train_cnn_only(&corpus.threads, &dev, &embedder, &cfg.model, &cfg.train, init)
        }
    }
    .map_err(|e| anyhow::anyhow!("{e}"))?;

    // Deterministic history file; wall times are confined to train.log.
    write_file(&out_dir.join("history.tsv"), &history_tsv(&outcome.history))?;
    let mut log = String::new();
    for e in &outcome.history.epochs {
        log.push_str(&format!(
            "epoch {} done in {:.2}s (loss {}, dev {:?})\n",
            e.epoch, e.wall_secs, e.train_loss, e.dev_macro_f1
        ));
    }
    log.push_str(&format!(
        "total wall time {:.2}s\n",
        started.elapsed().as_secs_f64()
    ));
    write_file(&out_dir.join("train.log"), &log)?;

    let best = outcome.history.best_epoch;
    let best_metric = outcome
        .history
        .epochs
        .get(best.saturating_sub(1))
        .map(|e| e.dev_macro_f1.unwrap_or(-e.train_loss))
        .unwrap_or(f64::NAN);
    // run.out names the artifact's own location and must not vary checkpoint
    // bytes between otherwise identical runs.
    let extra: Vec<(String, String)> = echo
        .lines()
        .filter(|l| l.starts_with("run.") && !l.starts_with("run.out="))
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.into(), v.into())))
        .collect();
    let ckpt = Checkpoint {
        model_cfg: cfg.model.clone(),
        train_cfg: cfg.train.clone(),
        embedding: cfg.embedding.clone(),
        params: outcome.best_params,
        eg2: outcome.optimizer.eg2,
        edx2: outcome.optimizer.edx2,
        rng_state: outcome.rng_state,
        epochs_run: outcome.history.epochs.len() as u32,
        best_epoch: best as u32,
        best_metric,
        clamp_events: outcome.history.clamp_events,
        optimizer_faults: outcome.history.optimizer_faults,
        extra_config: extra,
    };
    let ckpt_path = out_dir.join("checkpoint.bin");
    save_checkpoint(&ckpt_path, &ckpt).map_err(|e| anyhow::anyhow!("{e}"))?;

    println!(
        "trained {} epochs, best epoch {} (metric {}), checkpoint at {}",
        outcome.history.epochs.len(),
        best,
        best_metric,
        ckpt_path.display()
    );
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<(Checkpoint, answerseq_core::Embedder)> {
    let path = cfg.require_checkpoint()?;
    let ckpt = load_checkpoint(Path::new(path)).map_err(|e| anyhow::anyhow!("{e}"))?;
    let embedder = ckpt
        .embedding
        .build(ckpt.model_cfg.embed_dim)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    debug(&format!(
        "loaded checkpoint: mode {}, {} epochs, best {}",
        ckpt.model_cfg.mode.as_str(),
        ckpt.epochs_run,
        ckpt.best_epoch
    ));
    Ok((ckpt, embedder))
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&args.common)?;
    let (ckpt, embedder) = load_model(&cfg)?;
    let data_path = cfg.require_data()?;
    let corpus = load_threads(data_path, true)?;
    report_warnings(data_path, &corpus.warnings);

    let report = evaluate_threads(&ckpt.params, &ckpt.model_cfg, &embedder, &corpus.threads)
        .map_err(|e| anyhow::anyhow!("{e}"))?;

    let text = emit_report(&report, ReportFormat::Text);
    let kv = emit_report(&report, ReportFormat::Structured);
    let out_dir = cfg.out_dir().to_path_buf();
    std::fs::create_dir_all(&out_dir)?;
    write_file(&out_dir.join("report.txt"), &text)?;
    write_file(&out_dir.join("report.kv"), &kv)?;
    print!("{text}");
    if args.reference {
        println!("\npublished benchmark results (%)");
        println!(
            "    {:<8} {:>6} {:>6} {:>6} | {:>6} {:>6} {:>9}",
            "system", "P", "R", "F1", "Good", "Bad", "Potential"
        );
        for s in reference_scores() {
            println!(
                "    {:<8} {:>6.2} {:>6.2} {:>6.2} | {:>6.2} {:>6.2} {:>9.2}",
                s.name, s.macro_p, s.macro_r, s.macro_f1, s.f1_good, s.f1_bad, s.f1_potential
            );
        }
        println!(
            "    {:<8} {:>6.2} {:>6.2} {:>6.2}",
            "(this)",
            pct2(report.macro_p),
            pct2(report.macro_r),
            pct2(report.macro_f1)
        );
    }
    Ok(())
}

fn cmd_predict(flags: &Overrides) -> Result<()> {
    let cfg = RunConfig::resolve(flags)?;
    let (ckpt, embedder) = load_model(&cfg)?;
    let data_path = cfg.require_data()?;
    let corpus = load_threads(data_path, false)?;

    let preds = predict_corpus(&ckpt.params, &ckpt.model_cfg, &embedder, &corpus.threads)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut out = String::from("thread_id\tanswer_id\tpredicted\tp_good\tp_bad\tp_potential\n");
    for (qid, aid, label, dist) in &preds {
        out.push_str(&format!(
            "{qid}\t{aid}\t{}\t{}\t{}\t{}\n",
            label.name(),
            dist[0],
            dist[1],
            dist[2]
        ));
    }
    let out_dir = cfg.out_dir().to_path_buf();
    std::fs::create_dir_all(&out_dir)?;
    write_file(&out_dir.join("predictions.tsv"), &out)?;
    print!("{out}");
    Ok(())
}

/// Deterministic small fixture driven through the full model for the
/// finite-difference check.
fn gradcheck_fixture(
    cfg: &ModelConfig,
    seed: u64,
) -> Vec<(answerseq_core::model::EncodedThread, Vec<Label>)> {
    let embedder = answerseq_core::Embedder::Hashed {
        dim: cfg.embed_dim,
        seed,
    };
    let raw = [
        (
            "where can i find a good plumber",
            vec![
                ("call the one on main street they are reliable", Label::Good),
                ("no idea sorry", Label::Bad),
                ("maybe the hardware shop knows someone", Label::Potential),
            ],
        ),
        (
            "best time to visit the park",
            vec![
                ("early morning before the heat", Label::Good),
                ("parks are boring", Label::Bad),
            ],
        ),
        (
            "how do i renew my membership",
            vec![("the front desk handles renewals quickly", Label::Good)],
        ),
    ];
    raw.iter()
        .map(|(q, answers)| {
            let q_tokens = tokenize(q);
            let a_tokens: Vec<Vec<String>> = answers.iter().map(|(t, _)| tokenize(t)).collect();
            let gold: Vec<Label> = answers.iter().map(|(_, l)| *l).collect();
            (encode_thread(&embedder, cfg, &q_tokens, &a_tokens), gold)
        })
        .collect()
}

fn cmd_gradcheck(flags: &Overrides) -> Result<()> {
    let run_cfg = RunConfig::resolve(flags)?;
    // Reduced dims: embed 6, window 2, max_len 8, 2 feature maps per layer,
    // sentence 8, joint 10, hidden 6 -- small enough to check every scalar.
    let cfg = ModelConfig::reduced().with_mode(run_cfg.model.mode);
    let seed = run_cfg.train.seed;
    let data = gradcheck_fixture(&cfg, seed);

    let mut rng = Rng::seed(seed, STREAM_INIT);
    let mut params = ModelParams::init(&cfg, &mut rng).map_err(|e| anyhow::anyhow!("{e}"))?;
    jitter_zero_biases(&mut params, &mut rng);
    let weights = [1.0; 3];

    let mut analytic = params.zeros_like();
    for (enc, gold) in &data {
        thread_loss_and_grads(&params, &cfg, enc, gold, &weights, None, &mut analytic)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    let loss_fn = |p: &ModelParams| -> answerseq_core::Result<f64> {
        let mut total = 0.0;
        for (enc, gold) in &data {
            total += thread_loss(p, &cfg, enc, gold, &weights)?;
        }
        Ok(total)
    };
    let started = Instant::now();
    let report = grad_check(&mut params, &analytic, loss_fn, 1e-5, None)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    for g in &report.groups {
        println!(
            "group {:<22} max rel err {:>12.3e}  (checked {} of {})",
            g.name, g.max_rel_err, g.checked, g.checked
        );
    }
    let pass = report.passes(1e-4);
    println!(
        "overall max rel err {:.3e} at {} in {:.2}s: {}",
        report.max_rel_err,
        report.worst_path,
        started.elapsed().as_secs_f64(),
        if pass { "PASS (< 1e-4)" } else { "FAIL (>= 1e-4)" }
    );
    if !pass {
        bail!("gradient check failed");
    }
    Ok(())
}

fn cmd_stats(flags: &Overrides) -> Result<()> {
    let cfg = RunConfig::resolve(flags)?;
    let splits = [
        ("train", cfg.data.as_deref()),
        ("dev", cfg.dev.as_deref()),
        ("test", cfg.test.as_deref()),
    ];
    let mut any = false;
    for (name, path) in splits {
        let Some(path) = path else { continue };
        any = true;
        let corpus = load_threads(path, true)?;
        report_warnings(path, &corpus.warnings);
        let stats = dataset_stats(&corpus.threads);
        println!(
            "{name}: {} {} {}",
            stats.questions,
            stats.answers,
            stats.mean_display()
        );
        let props = class_proportions(&corpus.threads);
        println!(
            "{name} labels: Good {:.1}% Bad {:.1}% Potential {:.1}%",
            props[0], props[1], props[2]
        );
    }
    if !any {
        bail!("no data paths given (use --data/--dev/--test)");
    }
    Ok(())
}

fn cmd_convert(args: &ConvertArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&args.common)?;
    let input = cfg.require_data()?;
    let output = &cfg.out;
    let corpus = load_threads(input, false)?;
    let target = match args.to.as_deref() {
        Some("canonical") => "canonical",
        Some("xml") => "xml",
        Some(other) => bail!("unknown conversion target '{other}' (use canonical or xml)"),
        None => {
            if input.ends_with(".xml") {
                "canonical"
            } else {
                "xml"
            }
        }
    };
    if let Some(parent) = Path::new(output).parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    match target {
        "canonical" => {
            let mut buf = Vec::new();
            to_canonical(&corpus.threads, &mut buf).map_err(|e| anyhow::anyhow!("{e}"))?;
            let mut f = std::fs::File::create(output)
                .with_context(|| format!("creating {output}"))?;
            f.write_all(&buf)?;
        }
        _ => {
            write_file(Path::new(output), &to_semeval_xml(&corpus.threads))?;
        }
    }
    println!(
        "converted {} threads from {input} to {output} ({target})",
        corpus.threads.len()
    );
    Ok(())
}
