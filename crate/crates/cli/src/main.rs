use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shortcut_fm::oracle::SuiteOptions;
use shortcut_fm::priors::PriorKind;
use shortcut_fm_cli::commands::{self, checkpoint_for, CliError};
use shortcut_fm_cli::RunConfig;

/// Shortcut flow matching for spectrogram denoising.
///
/// Settings come from built-in defaults, then --config, then SFM_* environment
/// variables (SFM_TRAIN__LR=0.001 sets train.lr), then flags.
#[derive(Parser)]
#[command(name = "sfm", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Endpoint prior: G, S, D or F.
    #[arg(long, global = true)]
    prior: Option<PriorKind>,
    /// Euler steps K at inference.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize train/valid/test splits.
    GenData {
        /// Train on white and pink noise, test on harmonic babble.
        #[arg(long)]
        unseen_noise: bool,
    },
    /// Train a model and write a checkpoint plus loss CSV.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Enhance one WAV file.
    Enhance {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Evaluate the test split over priors and step counts.
    Sweep {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// May contain `{prior}` for one checkpoint per prior.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated step counts.
        #[arg(long, value_delimiter = ',')]
        k_list: Option<Vec<usize>>,
        /// Comma-separated priors.
        #[arg(long, value_delimiter = ',')]
        priors: Option<Vec<PriorKind>>,
    },
    /// Measure the real-time factor per step count.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        k_list: Option<Vec<usize>>,
    },
    /// Compare main code paths against independent reference implementations.
    Oracle {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
}

fn require(p: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    p.ok_or_else(|| CliError::Usage(format!("no {what} given (flag or config paths section)")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), std::env::vars())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(k) = cli.steps {
        cfg.infer.steps = k;
        cfg.infer.k_list = vec![k];
    }
    if let Some(o) = cli.out {
        cfg.paths.out = Some(o);
    }
    let prior = cli.prior;
    match cli.cmd {
        Cmd::GenData { unseen_noise } => {
            cfg.data.unseen_noise |= unseen_noise;
            cfg.validate()?;
            let out = require(cfg.paths.out.clone().or(cfg.paths.dataset.clone()), "output directory")?;
            for (split, n) in commands::gen_data(&cfg, &out)? {
                println!("{split}: {n} utterances");
            }
        }
        Cmd::Train { dataset, checkpoint, epochs } => {
            if let Some(p) = prior {
                cfg.prior.kind = p.to_string();
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            let dataset = require(dataset.or(cfg.paths.dataset.clone()), "dataset")?;
            let out = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let kind = cfg.prior_spec()?.kind;
            let ck = checkpoint
                .or(cfg.paths.checkpoint.clone())
                .map(|c| checkpoint_for(&c, kind))
                .unwrap_or_else(|| out.join(format!("model_{kind}.ckpt")));
            let res = commands::train(&cfg, &dataset, &ck, &out.join("loss.csv"), |e, h| {
                let n = h.len().max(1) as f64;
                let fm = h.iter().map(|r| r.loss.fm_loss).sum::<f64>() / n;
                let sc = h.iter().map(|r| r.loss.sc_loss).sum::<f64>() / n;
                eprintln!("epoch {e}: fm {fm:.5} sc {sc:.5}");
            })?;
            println!("checkpoint: {}", res.checkpoint.display());
            println!("loss history: {}", res.loss_csv.display());
        }
        Cmd::Enhance { checkpoint, input, output } => {
            cfg.validate()?;
            let ck = require(checkpoint.or(cfg.paths.checkpoint.clone()), "checkpoint")?;
            let nfe = commands::enhance(&cfg, &ck, &input, &output, cfg.infer.steps, prior)?;
            println!("wrote {} ({nfe} network evaluations)", output.display());
        }
        Cmd::Sweep { dataset, checkpoint, k_list, priors } => {
            if let Some(k) = k_list {
                cfg.infer.k_list = k;
            }
            if let Some(p) = priors.or(prior.map(|p| vec![p])) {
                cfg.infer.priors = p.iter().map(ToString::to_string).collect();
            }
            cfg.validate()?;
            let dataset = require(dataset.or(cfg.paths.dataset.clone()), "dataset")?;
            let ck = require(checkpoint.or(cfg.paths.checkpoint.clone()), "checkpoint")?;
            let out = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let res = commands::sweep(&cfg, &dataset, &ck, &out)?;
            for a in res.report.aggregates()? {
                let s = a.stats[0];
                let ci = s.ci95.map(|c| format!(" +/- {c:.2}")).unwrap_or_default();
                println!("prior {} K={:>2}: SI-SDR {:.2}{ci} dB (n={})", a.prior, a.steps, s.mean, a.n);
            }
            println!("report: {}", out.join("report.csv").display());
        }
        Cmd::Bench { checkpoint, k_list } => {
            if let Some(k) = k_list {
                cfg.infer.k_list = k;
            }
            cfg.validate()?;
            let ck = require(checkpoint.or(cfg.paths.checkpoint.clone()), "checkpoint")?;
            let rows = commands::bench(&cfg, &ck, cfg.paths.out.as_deref())?;
            println!("steps,nfe,rtf");
            for r in rows {
                println!("{},{},{:.5}", r.steps, r.nfe, r.rtf.rtf);
            }
        }
        Cmd::Oracle { instances, inject_sign_flip } => {
            let opts = SuiteOptions {
                instances,
                seed: cfg.seed,
                inject_sign_flip,
            };
            let report = match commands::oracle(&opts) {
                Ok(r) => r,
                Err(e) => {
                    if let Ok(r) = shortcut_fm::oracle::run_suite(&opts) {
                        print_oracle(&r);
                    }
                    return Err(e);
                }
            };
            print_oracle(&report);
        }
    }
    Ok(())
}

fn print_oracle(report: &[shortcut_fm::oracle::Discrepancy]) {
    for d in report {
        let verdict = if d.passed() { "ok" } else { "FAIL" };
        println!("{verdict:4} {:<48} max {:.3e} (tol {:.0e})", d.name, d.max, d.tolerance);
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
