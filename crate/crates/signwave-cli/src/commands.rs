use crate::config::{read_config, RunConfig, SynthRunConfig};
use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;
use signwave::checkpoint::{self, LoadedCheckpoint};
use signwave::corpus::{self, Vocab};
use signwave::encoder::{encode, EncoderMode, PivotTrace};
use signwave::features::FeatureSequence;
use signwave::gradcheck::full_model_gradcheck;
use signwave::scalar::Scalar;
use signwave::segment::{plan_layout, Neighborhood};
use signwave::train::{self, DecodeOptions, EpochRecord, Precision};
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

/// Evaluation worker count: TSP_THREADS wins, otherwise the machine's
/// parallelism capped at 8.
fn eval_threads() -> usize {
    if let Ok(raw) = std::env::var("TSP_THREADS") {
        if let Ok(n) = raw.parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8)
}

fn decode_options(beam: Option<usize>, max_len: usize, length_penalty: f64) -> DecodeOptions {
    DecodeOptions { beam_width: beam.unwrap_or(1), max_len, length_penalty }
}

// ── synth ───────────────────────────────────────────────────────────────

pub fn synth(config_path: &Path, out: &Path, json: bool) -> Result<ExitCode> {
    let (cfg, raw) = read_config::<SynthRunConfig>(config_path, "synth")?;
    if cfg.n_sentences == 0 {
        bail!("n_sentences must be >= 1");
    }
    let corpus = corpus::generate_synthetic_corpus(&cfg.corpus, cfg.n_sentences)?;
    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create output dir {}", out.display()))?;
    std::fs::write(out.join("config.json"), &raw)?;
    let manifest = corpus::write_corpus_files(out, &corpus)?;
    let frames: usize = corpus.iter().map(|e| e.features.frames()).sum();
    if json {
        println!(
            "{}",
            json!({
                "manifest": manifest,
                "sentences": corpus.len(),
                "total_frames": frames,
                "feature_dim": cfg.corpus.feature_dim,
            })
        );
    } else {
        println!(
            "wrote {} sentences ({} frames, dim {}) under {}",
            corpus.len(),
            frames,
            cfg.corpus.feature_dim,
            out.display()
        );
        println!("manifest: {}", manifest.display());
    }
    Ok(ExitCode::SUCCESS)
}

// ── train ───────────────────────────────────────────────────────────────

pub fn train(config_path: &Path, json: bool) -> Result<ExitCode> {
    let (run, raw) = read_config::<RunConfig>(config_path, "run")?;
    run.train.validate()?;
    std::fs::create_dir_all(&run.out_dir)
        .with_context(|| format!("cannot create output dir {}", run.out_dir.display()))?;
    // Echo the config byte-for-byte for provenance.
    std::fs::write(run.out_dir.join("config.json"), &raw)?;

    let vocab = corpus::vocab_from_manifest(&run.manifest)?;
    let train_corpus = corpus::load_corpus(&run.manifest, &vocab)?;
    let val_corpus = match &run.val_manifest {
        Some(path) => Some(corpus::load_corpus(path, &vocab)?),
        None => None,
    };

    match run.train.precision {
        Precision::F64 => train_typed::<f64>(&run, &vocab, &train_corpus, val_corpus.as_deref(), json),
        Precision::F32 => train_typed::<f32>(&run, &vocab, &train_corpus, val_corpus.as_deref(), json),
    }
}

fn train_typed<T: Scalar>(
    run: &RunConfig,
    vocab: &Vocab,
    train_corpus: &[corpus::CorpusEntry],
    val_corpus: Option<&[corpus::CorpusEntry]>,
    json: bool,
) -> Result<ExitCode> {
    let cfg = &run.train;
    let log_path = run.out_dir.join("train-log.jsonl");
    let mut log_file = std::fs::File::create(&log_path)?;
    let threads = eval_threads();
    let mut checkpoint_failure: Option<anyhow::Error> = None;

    let (state, log) = train::train::<T>(train_corpus, vocab, cfg, |record, state| {
        if checkpoint_failure.is_some() {
            return;
        }
        if let Some(val) = val_corpus {
            if run.val_interval > 0
                && (record.epoch % run.val_interval == 0 || record.epoch == cfg.epochs)
            {
                match train::evaluate(
                    val,
                    vocab,
                    &state.model,
                    cfg,
                    &DecodeOptions { beam_width: 1, max_len: cfg.max_target_len, length_penalty: 1.0 },
                    threads,
                ) {
                    Ok(report) => record.val_bleu4 = Some(report.scores.bleu[3]),
                    Err(e) => checkpoint_failure = Some(e.into()),
                }
            }
        }
        if let Err(e) = append_log_line(&mut log_file, record) {
            checkpoint_failure = Some(e);
            return;
        }
        if cfg.checkpoint_interval > 0 && record.epoch % cfg.checkpoint_interval == 0 {
            let path = run.out_dir.join(format!("checkpoint-epoch-{:04}.ckpt", record.epoch));
            if let Err(e) = checkpoint::save(&path, state, cfg, vocab) {
                checkpoint_failure = Some(e.into());
            }
        }
        if !json {
            match record.val_bleu4 {
                Some(v) => {
                    println!("epoch {:4}  loss {:.6}  val-bleu4 {v:.2}", record.epoch, record.loss)
                }
                None => println!("epoch {:4}  loss {:.6}", record.epoch, record.loss),
            }
        }
    })?;
    if let Some(e) = checkpoint_failure {
        return Err(e);
    }

    let final_path = run.out_dir.join("checkpoint-final.ckpt");
    checkpoint::save(&final_path, &state, cfg, vocab)?;
    if json {
        println!(
            "{}",
            json!({
                "checkpoint": final_path,
                "log": log_path,
                "epochs": log.len(),
                "final_loss": log.last().map(|r| r.loss),
            })
        );
    } else {
        println!("final checkpoint: {}", final_path.display());
        println!("training log: {}", log_path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn append_log_line(file: &mut std::fs::File, record: &EpochRecord) -> Result<()> {
    let line = serde_json::to_string(record)?;
    writeln!(file, "{line}")?;
    Ok(())
}

// ── translate / evaluate ────────────────────────────────────────────────

fn with_checkpoint<R>(
    path: &Path,
    mut f: impl FnMut(LoadedCheckpoint<f64>) -> Result<R>,
    mut g: impl FnMut(LoadedCheckpoint<f32>) -> Result<R>,
) -> Result<R> {
    match checkpoint::peek_dtype(path)?.as_str() {
        "f64" => f(checkpoint::load::<f64>(path)?),
        "f32" => g(checkpoint::load::<f32>(path)?),
        other => bail!("unsupported checkpoint dtype {other}"),
    }
}

fn translate_with<T: Scalar>(
    ckpt: LoadedCheckpoint<T>,
    features: &Path,
    opts: &DecodeOptions,
) -> Result<(String, Vec<u32>, String)> {
    let seq = FeatureSequence::read_file(features)?;
    let layout = plan_layout(seq.frames(), &ckpt.config.widths, ckpt.config.stride)?;
    let entry = corpus::CorpusEntry::new(seq, String::new(), &ckpt.vocab);
    let (tokens, text) =
        train::translate_one(&ckpt.state.model, &ckpt.vocab, &entry, &layout, opts)?;
    Ok((entry.features.video_id.clone(), tokens.ids, text))
}

pub fn translate(
    ckpt: &Path,
    features: &Path,
    beam: Option<usize>,
    max_len: usize,
    length_penalty: f64,
    json: bool,
) -> Result<ExitCode> {
    let opts = decode_options(beam, max_len, length_penalty);
    let (id, ids, text) = with_checkpoint(
        ckpt,
        |c| translate_with(c, features, &opts),
        |c| translate_with(c, features, &opts),
    )?;
    if json {
        println!("{}", json!({ "id": id, "token_ids": ids, "text": text }));
    } else {
        println!("{text}");
    }
    Ok(ExitCode::SUCCESS)
}

fn evaluate_with<T: Scalar>(
    ckpt: LoadedCheckpoint<T>,
    manifest: &Path,
    opts: &DecodeOptions,
) -> Result<train::EvalReport> {
    let corpus = corpus::load_corpus(manifest, &ckpt.vocab)?;
    let report = train::evaluate(
        &corpus,
        &ckpt.vocab,
        &ckpt.state.model,
        &ckpt.config,
        opts,
        eval_threads(),
    )?;
    Ok(report)
}

pub fn evaluate(
    ckpt: &Path,
    manifest: &Path,
    out: &Path,
    beam: Option<usize>,
    max_len: usize,
    length_penalty: f64,
    json: bool,
) -> Result<ExitCode> {
    let opts = decode_options(beam, max_len, length_penalty);
    let report = with_checkpoint(
        ckpt,
        |c| evaluate_with(c, manifest, &opts),
        |c| evaluate_with(c, manifest, &opts),
    )?;
    let rendered = serde_json::to_string_pretty(&report)?;
    std::fs::write(out, rendered.as_bytes())
        .with_context(|| format!("cannot write report {}", out.display()))?;
    if json {
        println!("{}", serde_json::to_string(&report.scores)?);
    } else {
        let s = &report.scores;
        println!(
            "BLEU-1 {:.2}  BLEU-2 {:.2}  BLEU-3 {:.2}  BLEU-4 {:.2}  ROUGE-L {:.2}  (BP {:.4})",
            s.bleu[0], s.bleu[1], s.bleu[2], s.bleu[3], s.rouge_l, s.brevity_penalty
        );
        println!("report: {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

// ── inspect ─────────────────────────────────────────────────────────────

fn neighborhood_rows(n: &Neighborhood) -> Vec<serde_json::Value> {
    n.members
        .iter()
        .map(|m| {
            json!({
                "scale": m.scale,
                "index": m.index,
                "frames": [m.start, m.end()],
                "width": m.width,
                "pivot": *m == n.pivot,
            })
        })
        .collect()
}

fn trace_for_pivot<T: Scalar>(
    ckpt: &LoadedCheckpoint<T>,
    seq: &FeatureSequence,
    layout: &signwave::segment::MultiScaleLayout,
    pivot: usize,
) -> Result<Option<PivotTrace>> {
    if seq.dim() != ckpt.state.input_dim {
        bail!(
            "feature dim {} does not match checkpoint input dim {}",
            seq.dim(),
            ckpt.state.input_dim
        );
    }
    let encoded = encode(&ckpt.state.model.encoder, seq, layout, true)?;
    Ok(encoded.attention_trace.and_then(|t| t.into_iter().find(|p| p.pivot == pivot)))
}

pub fn inspect(
    features: &Path,
    widths: &[usize],
    stride: usize,
    pivot: usize,
    extended: bool,
    ckpt: Option<&Path>,
    json: bool,
) -> Result<ExitCode> {
    let seq = FeatureSequence::read_file(features)?;
    let layout = plan_layout(seq.frames(), widths, stride)?;
    let neighborhood = if extended {
        layout.extended_surrounding_neighborhood(pivot)?
    } else {
        layout.surrounding_neighborhood(pivot)?
    };

    let mut trace: Option<PivotTrace> = None;
    if let Some(ckpt_path) = ckpt {
        trace = with_checkpoint(
            ckpt_path,
            |c| {
                if c.config.widths != widths || c.config.stride != stride {
                    bail!(
                        "checkpoint was trained with widths {:?} stride {}; pass those to --widths/--stride",
                        c.config.widths,
                        c.config.stride
                    );
                }
                trace_for_pivot(&c, &seq, &layout, pivot)
            },
            |c| {
                if c.config.widths != widths || c.config.stride != stride {
                    bail!(
                        "checkpoint was trained with widths {:?} stride {}; pass those to --widths/--stride",
                        c.config.widths,
                        c.config.stride
                    );
                }
                trace_for_pivot(&c, &seq, &layout, pivot)
            },
        )?;
    }
    let ranked = trace.map(|t| {
        let mut rows = t.members;
        rows.sort_by(|a, b| b.1.total_cmp(&a.1));
        rows
    });

    if json {
        println!(
            "{}",
            json!({
                "video": seq.video_id,
                "frames": seq.frames(),
                "layout": layout,
                "pivot": pivot,
                "extended": extended,
                "members": neighborhood_rows(&neighborhood),
                "attention": ranked.as_ref().map(|rows| rows
                    .iter()
                    .map(|(m, w)| json!({
                        "scale": m.scale, "index": m.index,
                        "frames": [m.start, m.end()], "weight": w,
                    }))
                    .collect::<Vec<_>>()),
            })
        );
        return Ok(ExitCode::SUCCESS);
    }

    println!(
        "video {} ({} frames) -> {} pivots, padded to {} frames, widths {:?}, stride {}",
        seq.video_id,
        seq.frames(),
        layout.pivot_count,
        layout.padded_len,
        layout.widths,
        layout.stride
    );
    println!(
        "{} neighborhood of pivot {pivot}: {} members",
        if extended { "extended" } else { "surrounding" },
        neighborhood.members.len()
    );
    for m in &neighborhood.members {
        let tag = if *m == neighborhood.pivot { "  <- pivot" } else { "" };
        println!(
            "  scale {} index {:3}  frames [{:3}, {:3}){tag}",
            m.scale,
            m.index,
            m.start,
            m.end()
        );
    }
    match ranked {
        Some(rows) => {
            println!("attention weights (descending):");
            for (m, w) in rows {
                println!(
                    "  {w:.4}  scale {} index {:3}  frames [{:3}, {:3})",
                    m.scale,
                    m.index,
                    m.start,
                    m.end()
                );
            }
        }
        None if ckpt.is_some() => {
            println!("(this checkpoint's mode keeps no neighborhood attention trace)");
        }
        None => {}
    }
    Ok(ExitCode::SUCCESS)
}

// ── gradcheck ───────────────────────────────────────────────────────────

pub fn gradcheck(mode: &str, seed: u64, json: bool) -> Result<ExitCode> {
    let mode: EncoderMode = mode.parse().map_err(|e: String| anyhow!(e))?;
    let report = full_model_gradcheck(mode, seed)?;
    if json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        for p in &report.params {
            println!("{:48} {:6} components  max rel err {:.3e}", p.name, p.components, p.max_rel_err);
        }
        println!(
            "mode {} seed {}: max rel err {:.3e} (tolerance {:.0e}) -> {}",
            report.mode.name(),
            report.seed,
            report.max_rel_err,
            report.tolerance,
            if report.passed() { "PASS" } else { "FAIL" }
        );
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
