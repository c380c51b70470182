use std::io::{self, BufRead};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use uda_calib::entropy::renyi_entropy;
use uda_calib::harness::{
    eval_seed, evaluate, format_g6, load_domains, restore_classifier, run_adapt, run_pretrain, save_weights, sweep,
    sweep_threads, write_metrics, ExperimentConfig, Overrides,
};
use uda_calib::{Error, ProbVector, RenyiOrder};

#[derive(Parser, Debug)]
#[command(name = "uda-calib", version, about = "Domain adaptation by target-uncertainty calibration")]
struct Cli {
    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: ObjectiveFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ObjectiveFlags {
    /// Entropy order: shannon, inf, or a positive number other than 1.
    #[arg(long, global = true)]
    alpha: Option<RenyiOrder>,
    /// Weight of the target term.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Gradient-variance regularization; default is on for min-entropy only.
    #[arg(long, global = true)]
    gvr: Option<Toggle>,
    /// Weight of the gradient-variance penalty.
    #[arg(long, global = true)]
    lambda: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on the labeled source domain; writes pretrain.csv and pretrained.bin.
    Pretrain,
    /// Adapt to the target domain; writes adapt.csv and adapted.bin.
    Adapt {
        /// Start from these weights instead of pretraining first.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Score saved weights on both domains; writes eval.csv.
    Eval {
        /// Weights written by pretrain or adapt.
        #[arg(long)]
        weights: PathBuf,
    },
    /// Rényi entropy of each distribution given as arguments or, with none,
    /// one whitespace-separated distribution per stdin line.
    Entropy { probs: Vec<f64> },
    /// Full run per seed; writes seed_<s>.csv files and summary.csv.
    Sweep {
        /// Comma-separated seed list.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Domain(_) => 2,
        Error::Io { .. } | Error::Format { .. } | Error::Validation(_) | Error::Dimension { .. } => 3,
        Error::Numerical(_) => 4,
        Error::State(_) => 1,
    }
}

fn load_config(cli: &Cli) -> uda_calib::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let o = &cli.overrides;
    cfg.apply(&Overrides {
        seed: cli.seed,
        output: cli.out.clone(),
        order: o.alpha,
        beta: o.beta,
        gvr: o.gvr.map(|t| matches!(t, Toggle::On)),
        lambda: o.lambda,
    })?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> uda_calib::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn entropy_lines(order: RenyiOrder, probs: Vec<f64>) -> uda_calib::Result<()> {
    if !probs.is_empty() {
        println!("{}", renyi_entropy(&ProbVector::new(probs)?, order)?);
        return Ok(());
    }
    for line in io::stdin().lock().lines() {
        let line = line.map_err(|e| Error::Io {
            path: PathBuf::from("<stdin>"),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let p = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| Error::Validation(format!("bad probability {s:?}: {e}"))))
            .collect::<uda_calib::Result<Vec<_>>>()?;
        println!("{}", renyi_entropy(&ProbVector::new(p)?, order)?);
    }
    Ok(())
}

fn run(cli: Cli) -> uda_calib::Result<()> {
    if let Command::Entropy { probs } = cli.command {
        let order = cli.overrides.alpha.unwrap_or(RenyiOrder::Shannon);
        order.validate()?;
        return entropy_lines(order, probs);
    }
    let cfg = load_config(&cli)?;
    let out = cfg.output.clone();
    ensure_dir(&out)?;
    match cli.command {
        Command::Pretrain => {
            let domains = load_domains(&cfg)?;
            let (model, records) = run_pretrain(&cfg, &domains)?;
            write_metrics(&records, out.join("pretrain.csv"))?;
            save_weights(&model, out.join("pretrained.bin"))?;
            if let Some(last) = records.last() {
                log::info!("source acc {:.4}, target acc {:.4}", last.source_acc, last.target_acc);
            }
        }
        Command::Adapt { weights } => {
            let domains = load_domains(&cfg)?;
            let (model, mut records) = match weights {
                Some(w) => (restore_classifier(&cfg, &domains, w)?, Vec::new()),
                None => run_pretrain(&cfg, &domains)?,
            };
            let (model, adapt) = run_adapt(model, &cfg, &domains)?;
            if let (Some(first), Some(last)) = (adapt.first(), adapt.last()) {
                log::info!("target acc {:.4} -> {:.4}", first.target_acc, last.target_acc);
            }
            records.extend(adapt);
            write_metrics(&records, out.join("adapt.csv"))?;
            save_weights(&model, out.join("adapted.bin"))?;
        }
        Command::Eval { weights } => {
            let domains = load_domains(&cfg)?;
            let model = restore_classifier(&cfg, &domains, weights)?;
            let (m, seed) = (cfg.model.m_eval, eval_seed(&cfg));
            let src = evaluate(&model, &domains.source, None, m, seed)?;
            let tgt = evaluate(&model, domains.target.data(), domains.target.sealed(), m, seed)?;
            let mut csv = String::from("domain,accuracy,mean_shannon_entropy,mean_min_entropy\n");
            for (name, e) in [("source", &src), ("target", &tgt)] {
                csv.push_str(&format!(
                    "{name},{},{},{}\n",
                    format_g6(e.accuracy),
                    format_g6(e.mean_shannon_entropy),
                    format_g6(e.mean_min_entropy)
                ));
            }
            print!("{csv}");
            let path = out.join("eval.csv");
            std::fs::write(&path, csv).map_err(|e| Error::Io { path, source: e })?;
        }
        Command::Sweep { seeds } => {
            let outcomes = sweep(&cfg, &seeds, &out, sweep_threads())?;
            for o in &outcomes {
                println!(
                    "seed {}: target acc {:.4} -> {:.4}",
                    o.seed, o.pretrained_target_acc, o.final_target_acc
                );
            }
            print!("{}", std::fs::read_to_string(out.join("summary.csv")).unwrap_or_default());
        }
        Command::Entropy { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
