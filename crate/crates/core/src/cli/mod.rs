//! Command line front end. Every run writes one JSON manifest recording the
//! subcommand, flags, seeds, paths, version and wall-clock duration.

mod args;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

pub use args::*;

use crate::error::{Error, Result};
use crate::eval::{
    base_to_new_eval, run_ablation, transfer_eval, visual_proto_eval, zero_shot_eval, AblationReport, AblationSuite,
    EvalReport,
};
use crate::feature_store::{read_pack_file, synth_generate, write_pack_file, FeaturePack, SynthConfig, SynthWorld};
use crate::model::{read_checkpoint_file, write_checkpoint_file};
use crate::sampling::{exp_decay_counts, few_shot_sample, split_base_new, subsample, ClassSplit, SplitPolicy};
use crate::training::{fit, grad_check, select_tau_v, GradCheckConfig, Trainable, TAU_V_GRID};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "CANDLE_THREADS";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub flags: Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub duration_secs: f64,
    /// Subcommand-specific facts (histograms, selected τ_v, ...).
    pub details: Value,
}

/// What a subcommand produced, before the manifest is assembled.
struct RunRecord {
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    details: Value,
    /// Default manifest location.
    manifest_path: PathBuf,
    exit_code: i32,
}

pub fn main() -> i32 {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli, argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli, argv: Vec<String>) -> Result<i32> {
    configure_threads()?;
    let start = Instant::now();
    let record = match &cli.command {
        Command::Synth(a) => cmd_synth(a)?,
        Command::Prepare(a) => cmd_prepare(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Ablate(a) => cmd_ablate(a)?,
        Command::Gradcheck(a) => cmd_gradcheck(a)?,
    };
    let manifest = RunManifest {
        subcommand: cli.command.name().to_string(),
        argv,
        flags: serde_json::to_value(&cli.command)?,
        seeds: record.seeds,
        inputs: record.inputs,
        outputs: record.outputs,
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_secs: start.elapsed().as_secs_f64(),
        details: record.details,
    };
    let path = cli.manifest.unwrap_or(record.manifest_path);
    write_json(&path, &manifest)?;
    Ok(record.exit_code)
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Parameter(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    if n == 0 {
        return Err(Error::Parameter(format!("{THREADS_ENV} must be at least 1")));
    }
    // A second call in the same process (tests) keeps the existing pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn parse_split_policy(raw: &str) -> Result<SplitPolicy> {
    if raw == "first-half" {
        return Ok(SplitPolicy::FirstHalf);
    }
    raw.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parameter(format!("bad --split-policy {raw:?}: expected first-half or ids like 0,1,2")))
        })
        .collect::<Result<Vec<_>>>()
        .map(SplitPolicy::Explicit)
}

fn split_for(pack: &FeaturePack, args: &SplitArgs) -> Result<ClassSplit> {
    split_base_new(&pack.class_names, &parse_split_policy(&args.split_policy)?)
}

fn read_validated(path: &Path) -> Result<FeaturePack> {
    let pack = read_pack_file(path)?;
    pack.validate()?;
    Ok(pack)
}

fn cmd_synth(a: &SynthArgs) -> Result<RunRecord> {
    let cfg = SynthConfig {
        num_classes: a.classes as usize,
        dim: a.dim as usize,
        samples_per_class: a.per_class as usize,
        text_noise: a.text_noise,
        intra_class_spread: a.spread,
        latent_rank: a.latent_rank,
        seed: a.seed,
    };
    let (train, text) = synth_generate(&cfg)?;
    let world = SynthWorld::new(cfg)?;
    let test = world.image_pack("test", a.test_per_class.unwrap_or(a.per_class) as usize);
    fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    let mut write = |name: &str, pack: &FeaturePack| -> Result<()> {
        let path = a.out.join(name);
        write_pack_file(pack, &path)?;
        outputs.push(path);
        Ok(())
    };
    write("train.cndp", &train)?;
    write("test.cndp", &test)?;
    write("text.cndp", &text)?;
    if let Some(n) = a.val_per_class {
        write("val.cndp", &world.image_pack("val", n as usize))?;
    }
    let summary = json!({
        "classes": a.classes,
        "dim": a.dim,
        "files": outputs,
    });
    if a.json {
        print_json(&summary)?;
    } else {
        for p in &outputs {
            println!("wrote {}", p.display());
        }
    }
    Ok(RunRecord {
        seeds: vec![a.seed],
        inputs: Vec::new(),
        manifest_path: a.out.join("manifest.json"),
        outputs,
        details: summary,
        exit_code: 0,
    })
}

fn cmd_prepare(a: &PrepareArgs) -> Result<RunRecord> {
    let pool = read_validated(&a.input)?;
    let split = split_for(&pool, &a.split)?;
    let (pack, sampling) = match a.shots {
        Some(shots) => {
            let base_idx: Vec<usize> = (0..pool.count())
                .filter(|&i| split.is_base(pool.labels[i] as usize))
                .collect();
            few_shot_sample(&pool.subset(&base_idx), shots, a.seed)?
        }
        None => {
            let profile = exp_decay_counts(split.base_ids.len(), a.max_per_class, a.imbalance)?;
            subsample(&pool, &profile, &split, a.head_order.into(), a.seed)?
        }
    };
    ensure_parent(&a.out)?;
    write_pack_file(&pack, &a.out)?;
    let sampling_path = with_suffix(&a.out, ".sampling.json");
    write_json(&sampling_path, &sampling)?;
    let histogram = pack.histogram();
    let details = json!({
        "split": split,
        "histogram": histogram,
        "shortfalls": sampling.shortfalls().collect::<Vec<_>>(),
    });
    if a.json {
        print_json(&details)?;
    } else {
        let base_hist: Vec<usize> = split.base_ids.iter().map(|&c| histogram[c]).collect();
        println!("wrote {} ({} samples, base histogram {:?})", a.out.display(), pack.count(), base_hist);
    }
    Ok(RunRecord {
        seeds: vec![a.seed],
        inputs: vec![a.input.clone()],
        outputs: vec![a.out.clone(), sampling_path],
        manifest_path: with_suffix(&a.out, ".manifest.json"),
        details,
        exit_code: 0,
    })
}

fn cmd_train(a: &TrainArgs) -> Result<RunRecord> {
    let train = read_validated(&a.train)?;
    let text = read_validated(&a.text)?;
    let split = split_for(&train, &a.split)?;
    let cfg = a.hyper.config();
    let mut inputs = vec![a.train.clone(), a.text.clone()];
    let (outcome, selection) = if a.hyper.tau_v_grid {
        let val = match &a.val {
            Some(p) => {
                inputs.push(p.clone());
                read_validated(p)?
            }
            None => train.clone(),
        };
        let sel = select_tau_v(&train, &text, &split, &cfg, &val, &TAU_V_GRID)?;
        let summary = json!({ "chosen": sel.chosen, "scores": sel.scores });
        (sel.outcome, Some(summary))
    } else {
        (fit(&train, &text, &split, &cfg)?, None)
    };
    ensure_parent(&a.out)?;
    write_checkpoint_file(&outcome.model, &a.out)?;
    let history_path = a.history.clone().unwrap_or_else(|| with_suffix(&a.out, ".history.jsonl"));
    let mut lines = String::new();
    for rec in &outcome.history {
        lines.push_str(&serde_json::to_string(rec)?);
        lines.push('\n');
    }
    ensure_parent(&history_path)?;
    fs::write(&history_path, lines)?;
    let tau_v = outcome.model.params.tau_v;
    let details = json!({
        "config": TrainConfigEcho { cfg: &cfg, tau_v },
        "tau_v_selection": selection,
        "final": outcome.history.last(),
    });
    if a.json {
        print_json(&details)?;
    } else {
        if let Some(last) = outcome.history.last() {
            println!(
                "epoch {}: loss_zP {:.4} loss_zV {:.4} loss_zT {:.4} total {:.4}",
                last.epoch, last.loss.z_p, last.loss.z_v, last.loss.z_t, last.loss.total
            );
        }
        println!("tau_v {tau_v}; wrote {} and {}", a.out.display(), history_path.display());
    }
    Ok(RunRecord {
        seeds: vec![cfg.seed],
        inputs,
        outputs: vec![a.out.clone(), history_path],
        manifest_path: with_suffix(&a.out, ".manifest.json"),
        details,
        exit_code: 0,
    })
}

#[derive(Serialize)]
struct TrainConfigEcho<'a> {
    #[serde(flatten)]
    cfg: &'a crate::training::TrainConfig,
    /// τ_v actually used (differs from `cfg.tau_v` after grid selection).
    #[serde(rename = "tau_v_used")]
    tau_v: f64,
}

fn csv_row(dataset: &str, seed: u64, r: &EvalReport) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let protocol = match r.protocol {
        crate::eval::Protocol::BaseToNew => "b2n",
        crate::eval::Protocol::Transfer => "transfer",
        crate::eval::Protocol::Single => "single",
    };
    format!(
        "{dataset},{seed},{protocol},{},{},{},{},{:.6}",
        r.method,
        f(r.base_acc),
        f(r.new_acc),
        f(r.harmonic),
        r.accuracy
    )
}

fn cmd_eval(a: &EvalArgs) -> Result<RunRecord> {
    let model = read_checkpoint_file(&a.checkpoint)?;
    let test = read_validated(&a.test)?;
    let mode = a.mode.into();
    let mut inputs = vec![a.checkpoint.clone(), a.test.clone()];
    let mut reports = Vec::new();
    match a.protocol {
        ProtocolArg::B2n => reports.push(base_to_new_eval(&model, &test, mode)?),
        ProtocolArg::Transfer => {
            let path = a
                .target_text
                .as_ref()
                .ok_or_else(|| Error::Parameter("--protocol transfer needs --target-text".into()))?;
            inputs.push(path.clone());
            reports.push(transfer_eval(&model, &read_validated(path)?, &test)?);
        }
    }
    if a.baselines {
        let (Some(text_path), Some(train_path)) = (&a.text, &a.train) else {
            return Err(Error::Parameter("--baselines needs --text and --train".into()));
        };
        if a.protocol != ProtocolArg::B2n {
            return Err(Error::Parameter("--baselines applies to the b2n protocol".into()));
        }
        let text = read_validated(text_path)?;
        let train = read_validated(train_path)?;
        inputs.extend([text_path.clone(), train_path.clone()]);
        let split = &model.prototypes.split;
        reports.push(zero_shot_eval(&test, &text, split, mode)?);
        reports.push(visual_proto_eval(&test, &train, &text, split, mode)?);
    }
    for r in &mut reports {
        r.seed = Some(a.seed);
    }
    let mut outputs = Vec::new();
    if let Some(out) = &a.out {
        write_json(out, &reports)?;
        outputs.push(out.clone());
    }
    if a.json {
        print_json(&reports)?;
    } else if a.csv {
        println!("dataset,seed,protocol,method,base_acc,new_acc,harmonic,accuracy");
        for r in &reports {
            println!("{}", csv_row(&test.dataset, a.seed, r));
        }
    } else {
        for r in &reports {
            match (r.base_acc, r.new_acc, r.harmonic) {
                (Some(b), Some(n), Some(h)) => {
                    println!("{:<18} base {b:.4}  new {n:.4}  harmonic {h:.4}", r.method)
                }
                _ => println!("{:<18} accuracy {:.4}", r.method, r.accuracy),
            }
        }
    }
    let manifest_path = match &a.out {
        Some(out) => with_suffix(out, ".manifest.json"),
        None => with_suffix(&a.checkpoint, ".eval.manifest.json"),
    };
    Ok(RunRecord {
        seeds: vec![a.seed],
        inputs,
        outputs,
        manifest_path,
        details: json!({ "reports": reports.len() }),
        exit_code: 0,
    })
}

fn cmd_ablate(a: &AblateArgs) -> Result<RunRecord> {
    let train = read_validated(&a.train)?;
    let text = read_validated(&a.text)?;
    let test = read_validated(&a.test)?;
    let split = split_for(&train, &a.split)?;
    let cfg = a.hyper.config();
    let mode = a.mode.into();
    let suites: Vec<AblationSuite> = if a.suite.is_empty() {
        AblationSuite::ALL.to_vec()
    } else {
        a.suite.iter().map(|&s| s.into()).collect()
    };
    let reports = suites
        .par_iter()
        .map(|&s| run_ablation(s, &train, &text, &test, &split, &cfg, mode))
        .collect::<Result<Vec<AblationReport>>>()?;
    let mut outputs = Vec::new();
    if let Some(out) = &a.out {
        write_json(out, &reports)?;
        outputs.push(out.clone());
    }
    if a.json {
        print_json(&reports)?;
    } else {
        for r in &reports {
            println!(
                "{:<20} Δbase {:+.4}  Δnew {:+.4}  Δharmonic {:+.4}",
                r.suite.name(),
                r.delta_base,
                r.delta_new,
                r.delta_harmonic
            );
        }
    }
    let manifest_path = match &a.out {
        Some(out) => with_suffix(out, ".manifest.json"),
        None => PathBuf::from("ablate.manifest.json"),
    };
    Ok(RunRecord {
        seeds: vec![cfg.seed],
        inputs: vec![a.train.clone(), a.text.clone(), a.test.clone()],
        outputs,
        manifest_path,
        details: json!({ "suites": suites.iter().map(|s| s.name()).collect::<Vec<_>>() }),
        exit_code: 0,
    })
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<RunRecord> {
    let corrupt = match &a.corrupt {
        Some(name) => Some(Trainable::parse(name).ok_or_else(|| Error::Parameter(format!("unknown tensor {name:?}")))?),
        None => None,
    };
    let cfg = GradCheckConfig {
        dim: a.dim,
        heads: a.heads,
        batch: a.batch,
        num_base: a.num_base,
        num_new: a.num_new,
        epsilon: a.epsilon,
        loss: a.loss.into(),
        use_attention: !a.no_attention,
        use_virtual: !a.no_virtual,
        mask: a.mask.into(),
        corrupt,
        ..GradCheckConfig::default()
    };
    let report = grad_check(&cfg, a.seed)?;
    let mut outputs = Vec::new();
    if let Some(out) = &a.out {
        write_json(out, &report)?;
        outputs.push(out.clone());
    }
    if a.json {
        print_json(&report)?;
    } else {
        for t in &report.tensors {
            println!("{:<12} {:.3e}", t.tensor, t.max_relative_error);
        }
        println!(
            "max relative error {:.3e} ({}) {}",
            report.max_relative_error,
            report.worst_tensor,
            if report.passed { "PASS" } else { "FAIL" }
        );
    }
    let manifest_path = match &a.out {
        Some(out) => with_suffix(out, ".manifest.json"),
        None => PathBuf::from("gradcheck.manifest.json"),
    };
    Ok(RunRecord {
        seeds: vec![a.seed],
        inputs: Vec::new(),
        outputs,
        manifest_path,
        details: json!({ "max_relative_error": report.max_relative_error, "passed": report.passed }),
        exit_code: if report.passed { 0 } else { 4 },
    })
}
