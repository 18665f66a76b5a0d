//! One function per subcommand. Each validates its inputs, writes its
//! outputs plus `manifest.json` into `cfg.out`, and prints a short summary.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use pacer_core::lm::ByteTokenizer;
use pacer_core::metrics::{all_records, oracle_dynamic_run, run_prompts, simulate_cost, sweep_fixed_gamma};
use pacer_core::pacer::{ablation_sweeps, PreVerifier};
use pacer_core::{BenchReport, DecodeMode, Transformer};
use serde::Serialize;

use crate::checkpoint::{file_sha256, load_lm, load_pv, Checkpoint};
use crate::config::{PolicyKind, RunConfig};
use crate::corpus::load_corpus;
use crate::dataset::Dataset;
use crate::error::{CliError, CliResult};
use crate::pipeline::{bench_prompts, build_dataset, fit_preverifier, run_policy, train_pair, training_prompts};
use crate::report::{summary_lines, trace_jsonl, write_long, write_timing, BenchRow, OutDir};

/// Target and draft checkpoints plus the optional pre-verifier.
struct Loaded {
    tok: ByteTokenizer,
    target: Transformer,
    draft: Transformer,
    pv: Option<PreVerifier>,
}

fn load_models(cfg: &RunConfig, out: &mut OutDir, need_pv: bool) -> CliResult<Loaded> {
    let tp = cfg.require(&cfg.target, "target")?;
    let dp = cfg.require(&cfg.draft, "draft")?;
    let (target, tok) = load_lm(tp)?;
    let (draft, dtok) = load_lm(dp)?;
    if tok.alphabet() != dtok.alphabet() {
        return Err(CliError::config("target and draft checkpoints use different tokenizers"));
    }
    out.checksum("target", file_sha256(tp)?);
    out.checksum("draft", file_sha256(dp)?);
    let pv = if need_pv || cfg.preverifier.is_some() {
        let pp = cfg.require(&cfg.preverifier, "preverifier")?;
        out.checksum("preverifier", file_sha256(pp)?);
        Some(load_pv(pp)?)
    } else {
        None
    };
    Ok(Loaded { tok, target, draft, pv })
}

#[derive(Serialize)]
struct LmRow {
    model: &'static str,
    layers: usize,
    d_model: usize,
    params: usize,
    initial_loss: f32,
    final_loss: f32,
    initial_heldout_loss: f32,
    heldout_loss: f32,
    heldout_perplexity: f64,
}

#[derive(Serialize)]
struct LossRow {
    model: &'static str,
    step: usize,
    loss: f32,
}

pub fn cmd_train_lm(cfg: &RunConfig) -> CliResult<()> {
    let t0 = Instant::now();
    let corpus = load_corpus(cfg.corpus.as_deref())?;
    let mut out = OutDir::create(cfg)?;
    let pair = train_pair(&corpus, cfg)?;
    let mut rows = Vec::new();
    let mut losses = Vec::new();
    for (name, model, rep) in [("target", &pair.target, &pair.target_report), ("draft", &pair.draft, &pair.draft_report)] {
        let file = format!("{name}.ckpt");
        let path = out.path(&file);
        out.path(&format!("{name}.json"));
        let sha = Checkpoint::from_lm(model, &pair.tokenizer).save(&path)?;
        out.checksum(&file, sha);
        rows.push(LmRow {
            model: name,
            layers: model.spec().layers,
            d_model: model.spec().d_model,
            params: model.params().num_params(),
            initial_loss: rep.initial_loss,
            final_loss: rep.final_loss,
            initial_heldout_loss: rep.initial_heldout_loss,
            heldout_loss: rep.heldout_loss,
            heldout_perplexity: rep.heldout_perplexity(),
        });
        losses.extend(rep.step_losses.iter().enumerate().map(|(step, &loss)| LossRow { model: name, step, loss }));
    }
    out.csv("train_lm.csv", &rows)?;
    out.csv("losses.csv", &losses)?;
    let summary: String = rows
        .iter()
        .map(|r| format!("[{}]\nparams: {}\nheldout_loss: {:.4}\nheldout_perplexity: {:.3}\n", r.model, r.params, r.heldout_loss, r.heldout_perplexity))
        .collect();
    out.write("summary.txt", &summary)?;
    print!("{summary}");
    write_timing(&out.dir, &[("wall_s", t0.elapsed().as_secs_f64())])?;
    out.finish()
}

pub fn cmd_gen_data(cfg: &RunConfig) -> CliResult<()> {
    let t0 = Instant::now();
    let corpus = load_corpus(cfg.corpus.as_deref())?;
    let mut out = OutDir::create(cfg)?;
    let m = load_models(cfg, &mut out, false)?;
    let prompts = training_prompts(&corpus, &m.tok, cfg)?;
    let data = build_dataset(&m.target, &m.draft, &prompts, cfg)?;
    let path = out.path("dataset.bin");
    out.path("dataset.json");
    let t_sha = out.manifest.checksums["target"].clone();
    let d_sha = out.manifest.checksums["draft"].clone();
    let man = data.save(&path, cfg.seed, &t_sha, &d_sha)?;
    out.checksum("dataset.bin", man.sha256.clone());
    let summary = format!(
        "traces: {}\nsteps: {}\npositions: {}\naccepted_positions: {}\ngamma_train: {}\n",
        man.traces, man.steps, man.positions, man.accepted_positions, man.gamma_train
    );
    out.write("summary.txt", &summary)?;
    print!("{summary}");
    write_timing(&out.dir, &[("wall_s", t0.elapsed().as_secs_f64())])?;
    out.finish()
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    loss: f32,
}

#[derive(Serialize)]
struct BinRow {
    lo: f64,
    hi: f64,
    count: usize,
    mean_score: f64,
    positive_rate: f64,
}

pub fn cmd_train_pv(cfg: &RunConfig) -> CliResult<()> {
    let t0 = Instant::now();
    let dsp = cfg.require(&cfg.dataset, "dataset")?;
    let dp = cfg.require(&cfg.draft, "draft")?;
    let mut out = OutDir::create(cfg)?;
    let data = Dataset::load(dsp)?;
    let (draft, _) = load_lm(dp)?;
    out.checksum("dataset", file_sha256(dsp)?);
    out.checksum("draft", file_sha256(dp)?);
    let (pv, rep) = fit_preverifier(&draft, &data, cfg)?;
    let path = out.path("preverifier.ckpt");
    out.path("preverifier.json");
    let sha = Checkpoint::from_pv(&pv).save(&path)?;
    out.checksum("preverifier.ckpt", sha);
    let epochs: Vec<EpochRow> = rep.epoch_losses.iter().enumerate().map(|(i, &loss)| EpochRow { epoch: i + 1, loss }).collect();
    out.csv("train_pv.csv", &epochs)?;
    let mut summary = format!("positions: {}\nfinal_loss: {:.5}\n", data.positions(), rep.final_loss);
    if let Some(h) = &rep.heldout {
        let bins: Vec<BinRow> = h
            .bins
            .iter()
            .map(|b| BinRow { lo: b.lo, hi: b.hi, count: b.count, mean_score: b.mean_score, positive_rate: b.positive_rate })
            .collect();
        out.csv("calibration.csv", &bins)?;
        let auc = h.auc.map_or_else(|| "undefined (one class)".to_string(), |a| format!("{a:.4}"));
        summary.push_str(&format!("heldout_count: {}\nheldout_auc: {auc}\nheldout_accuracy: {:.4}\n", h.count, h.accuracy));
    }
    out.write("summary.txt", &summary)?;
    print!("{summary}");
    write_timing(&out.dir, &[("wall_s", t0.elapsed().as_secs_f64())])?;
    out.finish()
}

#[derive(Serialize)]
struct OutputRecord {
    prompt_index: usize,
    prompt: String,
    output: String,
}

fn bench(cfg: &RunConfig, m: &Loaded, prompts: &[Vec<pacer_core::TokenId>]) -> CliResult<(Vec<pacer_core::Generation>, BenchReport)> {
    let gens = run_policy(cfg, &m.target, &m.draft, m.pv.as_ref(), prompts)?;
    let report = simulate_cost(&all_records(&gens), &cfg.cost_model())?;
    Ok((gens, report))
}

fn policy_gamma(cfg: &RunConfig) -> Option<usize> {
    (cfg.policy == PolicyKind::Fixed).then_some(cfg.gamma)
}

pub fn cmd_decode(cfg: &RunConfig) -> CliResult<()> {
    let t0 = Instant::now();
    let corpus = load_corpus(cfg.corpus.as_deref())?;
    let mut out = OutDir::create(cfg)?;
    let m = load_models(cfg, &mut out, cfg.policy == PolicyKind::Pacer)?;
    let prompts = bench_prompts(&corpus, &m.tok, cfg)?;
    let (gens, report) = bench(cfg, &m, &prompts)?;
    out.write("trace.jsonl", &trace_jsonl(&gens, &m.tok)?)?;
    let mut lines = String::new();
    for (i, (p, g)) in prompts.iter().zip(&gens).enumerate() {
        let rec = OutputRecord { prompt_index: i, prompt: m.tok.decode(p), output: m.tok.decode(&g.tokens) };
        lines.push_str(&serde_json::to_string(&rec).map_err(|e| CliError::runtime(e.to_string()))?);
        lines.push('\n');
    }
    out.write("outputs.jsonl", &lines)?;
    let summary = summary_lines(cfg.policy.as_str(), &report);
    out.write("summary.txt", &summary)?;
    print!("{summary}");
    write_timing(&out.dir, &[("wall_s", t0.elapsed().as_secs_f64())])?;
    out.finish()
}

pub fn cmd_bench(cfg: &RunConfig) -> CliResult<()> {
    let t0 = Instant::now();
    let corpus = load_corpus(cfg.corpus.as_deref())?;
    let mut out = OutDir::create(cfg)?;
    let m = load_models(cfg, &mut out, cfg.policy == PolicyKind::Pacer)?;
    let prompts = bench_prompts(&corpus, &m.tok, cfg)?;
    let t_dec = Instant::now();
    let (_, report) = bench(cfg, &m, &prompts)?;
    let decode_s = t_dec.elapsed().as_secs_f64();
    let label = match cfg.policy {
        PolicyKind::Pacer => format!("pacer-{}", cfg.halt().criterion.as_str()),
        PolicyKind::Fixed => format!("fixed-{}", cfg.gamma),
        p => p.as_str().to_string(),
    };
    let row = BenchRow::new(label.clone(), cfg, cfg.policy.as_str(), policy_gamma(cfg), &report);
    let p = out.csv("bench.csv", &[row])?;
    let lp = out.path("long.csv");
    write_long(&lp, &[("bench".into(), p)])?;
    let summary = summary_lines(&label, &report);
    out.write("summary.txt", &summary)?;
    print!("{summary}");
    write_timing(
        &out.dir,
        &[
            ("wall_s", t0.elapsed().as_secs_f64()),
            ("decode_s", decode_s),
            ("wall_tokens_per_s", report.tokens as f64 / decode_s.max(1e-9)),
        ],
    )?;
    out.finish()
}

pub fn cmd_sweep(cfg: &RunConfig) -> CliResult<()> {
    let t0 = Instant::now();
    let corpus = load_corpus(cfg.corpus.as_deref())?;
    let mut out = OutDir::create(cfg)?;
    let m = load_models(cfg, &mut out, false)?;
    let prompts = bench_prompts(&corpus, &m.tok, cfg)?;
    let cm = cfg.cost_model();
    let table = sweep_fixed_gamma(&m.target, &m.draft, &prompts, &cfg.gammas(), &cfg.decode(), &cm)?;
    let rows: Vec<BenchRow> =
        table.rows.iter().map(|(g, r)| BenchRow::new(format!("gamma={g}"), cfg, "fixed", Some(*g), r)).collect();
    let mut tables = vec![("sweep_gamma".to_string(), out.csv("sweep_gamma.csv", &rows)?)];
    let (best_g, best) = table.best_row();
    let mut summary = format!("best_gamma: {best_g}\n{}", summary_lines("fixed-optimum", &best));
    if let Some(pv) = &m.pv {
        let base = cfg.halt();
        let ab = ablation_sweeps(&m.target, &m.draft, pv, &prompts, &base, &cfg.decode(), &cm)?;
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = cfg.clone();
            f(&mut c);
            c
        };
        let block: Vec<BenchRow> = ab
            .block
            .iter()
            .map(|(b, r)| BenchRow::new(format!("b={b}"), &with(&|c| c.block_size = *b), "pacer", None, r))
            .collect();
        let threshold: Vec<BenchRow> = ab
            .threshold
            .iter()
            .map(|(t, r)| BenchRow::new(format!("t={t:.2}"), &with(&|c| c.threshold = *t), "pacer", None, r))
            .collect();
        let growth: Vec<BenchRow> = ab
            .growth
            .iter()
            .map(|(g, r)| BenchRow::new(format!("rho={g:.2}"), &with(&|c| c.growth = *g), "pacer", None, r))
            .collect();
        tables.push(("sweep_block".into(), out.csv("sweep_block.csv", &block)?));
        tables.push(("sweep_threshold".into(), out.csv("sweep_threshold.csv", &threshold)?));
        tables.push(("sweep_growth".into(), out.csv("sweep_growth.csv", &growth)?));
        for (name, rows) in [("block", &block), ("threshold", &threshold), ("growth", &growth)] {
            let best = rows.iter().fold(&rows[0], |a, r| if r.tokens_per_s > a.tokens_per_s { r } else { a });
            summary.push_str(&format!("best_{name}: {} ({:.4} tokens/s)\n", best.config, best.tokens_per_s));
        }
    }
    let lp = out.path("long.csv");
    write_long(&lp, &tables)?;
    out.write("summary.txt", &summary)?;
    print!("{summary}");
    write_timing(&out.dir, &[("wall_s", t0.elapsed().as_secs_f64())])?;
    out.finish()
}

#[derive(Serialize)]
struct OracleStepRow {
    prompt: usize,
    step: usize,
    la_star: usize,
    emitted: usize,
}

pub fn cmd_oracle(cfg: &RunConfig) -> CliResult<()> {
    let t0 = Instant::now();
    if cfg.decode().mode != DecodeMode::Greedy {
        return Err(CliError::config("the oracle command requires --mode greedy"));
    }
    let corpus = load_corpus(cfg.corpus.as_deref())?;
    let mut out = OutDir::create(cfg)?;
    let m = load_models(cfg, &mut out, false)?;
    let prompts = bench_prompts(&corpus, &m.tok, cfg)?;
    let cm = cfg.cost_model();
    let table = sweep_fixed_gamma(&m.target, &m.draft, &prompts, &cfg.gammas(), &cfg.decode(), &cm)?;
    let (best_g, best) = table.best_row();
    let gens = run_prompts(&prompts, &cfg.decode(), |p, c| oracle_dynamic_run(&m.target, &m.draft, p, c, cfg.oracle_horizon))?;
    let records = all_records(&gens);
    let oracle = simulate_cost(&records, &cm)?;
    let rows = [
        BenchRow::new("fixed-optimum", cfg, "fixed", Some(best_g), &best),
        BenchRow::new("oracle", cfg, "oracle", None, &oracle),
    ];
    let p = out.csv("oracle.csv", &rows)?;
    let steps: Vec<OracleStepRow> = gens
        .iter()
        .enumerate()
        .flat_map(|(i, g)| g.records.iter().map(move |r| OracleStepRow { prompt: i, step: r.step, la_star: r.gamma, emitted: r.emitted }))
        .collect();
    out.csv("oracle_steps.csv", &steps)?;
    let lp = out.path("long.csv");
    write_long(&lp, &[("oracle".into(), p)])?;
    let n = records.len() as f64;
    let mean = records.iter().map(|r| r.gamma as f64).sum::<f64>() / n;
    let var = records.iter().map(|r| (r.gamma as f64 - mean).powi(2)).sum::<f64>() / n;
    let summary = format!(
        "best_fixed_gamma: {best_g}\nla_star_mean: {mean:.4}\nla_star_variance: {var:.4}\n{}{}",
        summary_lines("fixed-optimum", &best),
        summary_lines("oracle", &oracle)
    );
    out.write("summary.txt", &summary)?;
    print!("{summary}");
    write_timing(&out.dir, &[("wall_s", t0.elapsed().as_secs_f64())])?;
    out.finish()
}

/// Collects every CSV table in `cfg.out` into `long.csv` and `report.txt`.
pub fn cmd_report(cfg: &RunConfig) -> CliResult<()> {
    if !cfg.out.is_dir() {
        return Err(CliError::missing("report directory", &cfg.out));
    }
    let mut tables: Vec<(String, PathBuf)> = fs::read_dir(&cfg.out)
        .map_err(|e| CliError::io(&cfg.out, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && p.file_name().is_some_and(|n| n != "long.csv"))
        .map(|p| (p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), p))
        .collect();
    tables.sort();
    if tables.is_empty() {
        return Err(CliError::config(format!("no CSV tables in {}", cfg.out.display())));
    }
    write_long(&cfg.out.join("long.csv"), &tables)?;
    let mut text = String::new();
    for (name, path) in &tables {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        let headers = r.headers().map_err(|e| CliError::runtime(e.to_string()))?.clone();
        let recs: Vec<csv::StringRecord> = r.records().collect::<Result<_, _>>().map_err(|e| CliError::runtime(e.to_string()))?;
        text.push_str(&format!("[{name}]\nrows: {}\n", recs.len()));
        let col = |h: &str| headers.iter().position(|x| x == h);
        if let (Some(c), Some(t)) = (col("config"), col("tokens_per_s")) {
            let best = recs.iter().filter_map(|r| Some((r.get(c)?, r.get(t)?.parse::<f64>().ok()?))).fold(None, |a: Option<(&str, f64)>, x| match a {
                Some(b) if b.1 >= x.1 => Some(b),
                _ => Some(x),
            });
            if let Some((label, tps)) = best {
                text.push_str(&format!("best: {label}\nbest_tokens_per_s: {tps:.4}\n"));
            }
        }
    }
    fs::write(cfg.out.join("report.txt"), &text).map_err(|e| CliError::io(&cfg.out, e))?;
    print!("{text}");
    Ok(())
}
