//! `advspeech` command-line driver.
//!
//! Exit codes: 0 success, 2 bad configuration or arguments, 3 `classify`
//! flagged the clip as adversarial, 4 a stage failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advspeech::attacks::{attack_black_box, attack_white_box, Target, Victim};
use advspeech::audio::{read_wav, write_wav};
use advspeech::dataset::{validate_manifest, DatasetManifest, ExampleLabel, ValidateOptions};
use advspeech::detector::{classify, DetectorModel};
use advspeech::eval::{run_scenario, scenario_table, DatasetId};
use advspeech::pipeline::{Pipeline, Preset, RunConfig, Stage, DETECTOR_CHECKPOINT};
use advspeech::seeds::{self, derive};
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "advspeech", version, about = "Adversarial speech generation and detection")]
struct Cli {
    #[command(flatten)]
    run: RunArgs,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON). Defaults to the chosen preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true, env = "ADVSPEECH_SEED")]
    seed: Option<u64>,
    /// Base directory for corpus, work and report directories.
    #[arg(long, global = true, default_value = ".")]
    dir: PathBuf,
    #[arg(long, global = true)]
    corpus_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Config override, e.g. `--set dataset_b.n_per_command=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum VictimKind {
    Keyword,
    Sequence,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every stage, reusing cached ones.
    Pipeline,
    /// Print the effective configuration.
    ShowConfig,
    /// Synthesize the corpus.
    GenCorpus,
    /// Train both victim recognizers.
    TrainVictim,
    /// Build dataset A (white-box, sentence targets).
    BuildA,
    /// Build dataset B (black-box, command targets).
    BuildB,
    /// Train the detector on both datasets' training halves.
    TrainDetector,
    /// White-box attack on one clip.
    AttackWb {
        input: PathBuf,
        /// Keyword class or target sentence.
        #[arg(long)]
        target: String,
        #[arg(long, value_enum, default_value = "sequence")]
        victim: VictimKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Genetic attack on one clip against the keyword victim.
    AttackBb {
        input: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a dataset manifest against the protocol invariants.
    ValidateManifest {
        manifest: PathBuf,
        /// Directory WAV paths are relative to; defaults to the manifest's.
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        no_speech_filter: bool,
    },
    /// Label a clip as normal or adversarial.
    Classify {
        wav: PathBuf,
        /// Detector checkpoint; defaults to the pipeline's.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Detection experiments.
    Eval {
        /// Only this scenario (1-6).
        #[arg(long)]
        scenario: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        /// Write the JSON report here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Error wrapper carrying the exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let err = e.into();
        let config = matches!(err.downcast_ref::<advspeech::Error>(), Some(advspeech::Error::Config(_)));
        Failure { code: if config { 2 } else { 4 }, err }
    }
}

fn config_error(err: anyhow::Error) -> Failure {
    Failure { code: 2, err }
}

fn load_config(a: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())).map_err(config_error)?,
        None => RunConfig::preset(a.preset.parse::<Preset>().map_err(|e| config_error(e.into()))?),
    };
    for o in &a.overrides {
        cfg.apply_override(o).map_err(|e| config_error(e.into()))?;
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(p) = &a.corpus_dir {
        cfg.paths.corpus = p.clone();
    }
    if let Some(p) = &a.work_dir {
        cfg.paths.work = p.clone();
    }
    if let Some(p) = &a.output_dir {
        cfg.paths.output = p.clone();
    }
    cfg.validate().map_err(|e| config_error(e.into()))?;
    Ok(cfg)
}

fn pipeline(a: &RunArgs) -> Result<Pipeline, Failure> {
    let cfg = load_config(a)?;
    Pipeline::new(cfg, &a.dir, a.jobs).map_err(|e| config_error(e.into()))
}

fn run_stage(a: &RunArgs, stage: Stage) -> Result<(), Failure> {
    let mut p = pipeline(a)?;
    let o = p.ensure(stage)?;
    println!(
        "{}: {} -> {}",
        stage.name(),
        if o.cached { "cached" } else { "done" },
        p.dir(stage).display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let a = &cli.run;
    match cli.cmd {
        Cmd::Pipeline => {
            let mut p = pipeline(a)?;
            for o in p.run_all()? {
                println!(
                    "{:<10} {:>8}  {:>8.1}s",
                    o.stage.name(),
                    if o.cached { "cached" } else { "ran" },
                    o.seconds
                );
            }
            let eff = p.efficacy_report()?;
            println!(
                "white-box success {}/{}, black-box success {}/{}",
                eff.white_box.successes, eff.white_box.attempts, eff.black_box.successes, eff.black_box.attempts
            );
            for s in p.eval_report()?.scenarios {
                println!("scenario {}: mean accuracy {:.4}", s.id, s.mean_accuracy);
            }
        }
        Cmd::ShowConfig => print!("{}", load_config(a)?.to_json()?),
        Cmd::GenCorpus => run_stage(a, Stage::Corpus)?,
        Cmd::TrainVictim => run_stage(a, Stage::Victims)?,
        Cmd::BuildA => run_stage(a, Stage::DatasetA)?,
        Cmd::BuildB => run_stage(a, Stage::DatasetB)?,
        Cmd::TrainDetector => run_stage(a, Stage::Detector)?,
        Cmd::AttackWb {
            input,
            target,
            victim,
            out,
        } => {
            let mut p = pipeline(a)?;
            p.ensure(Stage::Victims)?;
            let x = read_wav(&input)?;
            let cfg = p.config().efficacy.attack.clone();
            let outcome = match victim {
                VictimKind::Keyword => {
                    let kw = p.keyword_victim()?;
                    let t = kw
                        .class_index(&target)
                        .ok_or_else(|| config_error(anyhow!("unknown keyword class {target:?}")))?;
                    attack_white_box(Victim::Keyword(&kw), &x, &Target::Class(t), &cfg)?
                }
                VictimKind::Sequence => {
                    let seq = p.sequence_victim()?;
                    attack_white_box(Victim::Sequence(&seq), &x, &Target::Text(target), &cfg)?
                }
            };
            write_wav(&outcome.adversarial, &out)?;
            println!(
                "success={} iterations={} db={:.2} output={:?}",
                outcome.success, outcome.iterations_used, outcome.final_db_relative, outcome.victim_output
            );
        }
        Cmd::AttackBb { input, target, out } => {
            let mut p = pipeline(a)?;
            p.ensure(Stage::Victims)?;
            let x = read_wav(&input)?;
            let kw = p.keyword_victim()?;
            let t = kw
                .class_index(&target)
                .ok_or_else(|| config_error(anyhow!("unknown keyword class {target:?}")))?;
            let seed = derive(p.config().master_seed, &[seeds::ATTACK, "cli", &target]);
            let outcome = attack_black_box(&kw, &x, t, &p.config().dataset_b.attack, seed)?;
            write_wav(&outcome.adversarial, &out)?;
            println!(
                "success={} generations={} max_abs_delta={:.5} output={:?}",
                outcome.success,
                outcome.iterations_used,
                outcome.perturbation.max_abs(),
                outcome.victim_output
            );
        }
        Cmd::ValidateManifest {
            manifest,
            root,
            no_speech_filter,
        } => {
            let m = DatasetManifest::read(&manifest)?;
            let root = root.or_else(|| manifest.parent().map(Path::to_path_buf));
            let report = validate_manifest(
                &m,
                &ValidateOptions {
                    speech_filter: !no_speech_filter,
                    root,
                },
            );
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.ok() {
                eprintln!("manifest violates protocol invariants");
                return Ok(4);
            }
        }
        Cmd::Classify { wav, checkpoint } => {
            let path = match checkpoint {
                Some(p) => p,
                None => {
                    let mut p = pipeline(a)?;
                    p.ensure(Stage::Detector)?;
                    p.dir(Stage::Detector).join(DETECTOR_CHECKPOINT)
                }
            };
            let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let model = DetectorModel::from_checkpoint(&bytes)?;
            let v = classify(&model, &read_wav(&wav)?)?;
            println!("{}", serde_json::to_string(&v)?);
            if v.label == ExampleLabel::Adversarial {
                return Ok(3);
            }
        }
        Cmd::Eval { scenario, runs, out } => {
            let mut cfg = load_config(a)?;
            if let Some(r) = runs {
                cfg.detector.runs = r;
                cfg.validate().map_err(|e| config_error(e.into()))?;
            }
            let mut p = Pipeline::new(cfg, &a.dir, a.jobs).map_err(|e| config_error(e.into()))?;
            let json = match scenario {
                None => {
                    p.ensure(Stage::Eval)?;
                    let report = p.eval_report()?;
                    for s in &report.scenarios {
                        println!("scenario {}: mean accuracy {:.4}", s.id, s.mean_accuracy);
                    }
                    report.to_json()?
                }
                Some(n) => {
                    let spec = scenario_table()
                        .into_iter()
                        .find(|s| s.id == n)
                        .ok_or_else(|| config_error(anyhow!("scenario must be 1-6, got {n}")))?;
                    p.ensure(Stage::DatasetA)?;
                    p.ensure(Stage::DatasetB)?;
                    let da = p.prepared(DatasetId::A)?;
                    let db = p.prepared(DatasetId::B)?;
                    let seed = derive(p.config().master_seed, &[seeds::EVAL]);
                    let r = run_scenario(&spec, &da, &db, &p.config().detector, seed, a.jobs)?;
                    println!("scenario {}: mean accuracy {:.4}", r.id, r.mean_accuracy);
                    serde_json::to_string_pretty(&r)? + "\n"
                }
            };
            if let Some(out) = out {
                std::fs::write(&out, json).with_context(|| format!("writing {}", out.display()))?;
            }
        }
    }
    Ok(0)
}

/// The error chain, skipping causes the outer message already quotes.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let c = cause.to_string();
        if !msg.ends_with(&c) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&c);
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let msg = describe(&f.err);
            if f.code == 2 {
                eprintln!("configuration error: {msg}");
            } else {
                log::error!("{msg}");
            }
            ExitCode::from(f.code)
        }
    }
}
