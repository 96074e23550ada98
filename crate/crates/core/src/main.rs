use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use emoblind::data::write_dataset;
use emoblind::pipeline::{
    emit_report, evaluate_accuracy, generate, run_ablation, run_all, run_fairness, suppressor_file, train_suppressor,
    ExperimentConfig, Section, Splits, Workspace, CONFIG_FILE, DATASET_FILE, METRICS_FILE, OUT_ENV, TIMINGS_FILE,
};
use emoblind::suppression::SuppressorKind;
use emoblind::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "emoblind", version, about = "Blind face embeddings to expression and measure what is left")]
struct Cli {
    /// Flat `section.key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set gen.num_identities=120`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (falls back to $EMOBLIND_OUT, then the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic embedding dataset.
    Generate,
    /// Train a suppressor on the training split.
    Train {
        #[arg(long, value_enum)]
        method: Method,
    },
    /// Probe raw and blinded embeddings; writes the accuracy table.
    Probe,
    /// Random feature ablation curve for the emotion probe.
    Ablate,
    /// Equality-of-opportunity study on a smiling-biased split.
    Fairness,
    /// Re-render tables and charts from the saved metrics.
    Report {
        /// Sections to emit (accuracy, ablation, fairness); default: all present.
        #[arg(long = "section")]
        sections: Vec<String>,
    },
    /// Every stage in order from one master seed.
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Sn,
    Lnl,
}

impl From<Method> for SuppressorKind {
    fn from(m: Method) -> Self {
        match m {
            Method::Sn => SuppressorKind::Sn,
            Method::Lnl => SuppressorKind::Lnl,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
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

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    } else if let Some(env) = std::env::var_os(OUT_ENV) {
        cfg.out_dir = PathBuf::from(env);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(ws: &Workspace, name: &str, text: &str) -> Result<()> {
    let p = ws.path(name);
    std::fs::write(&p, text).map_err(|e| Error::Io { path: p, source: e })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let ws = Workspace::create(&cfg.out_dir)?;
    write_text(&ws, CONFIG_FILE, &cfg.to_text())?;
    let mut timings = ws.timings();
    let started = Instant::now();
    match &cli.command {
        Command::Generate => {
            let ds = generate(&cfg)?;
            write_dataset(&ds, &ws.path(DATASET_FILE))?;
            println!("wrote {} samples to {}", ds.len(), ws.path(DATASET_FILE).display());
            timings.record("generate", started.elapsed().as_secs_f64());
        }
        Command::Train { method } => {
            let kind = SuppressorKind::from(*method);
            let ds = ws.dataset()?;
            let splits = Splits::new(&cfg, &ds)?;
            let s = train_suppressor(&cfg, &splits, kind)?;
            let path = ws.path(&suppressor_file(kind));
            s.save(&path)?;
            println!("wrote {}", path.display());
            timings.record(&format!("train_{}", kind.code()), started.elapsed().as_secs_f64());
        }
        Command::Probe => {
            let ds = ws.dataset()?;
            let splits = Splits::new(&cfg, &ds)?;
            let (accuracy, variance) = evaluate_accuracy(&cfg, &splits, &ws.suppressors()?)?;
            let mut m = ws.metrics(&cfg)?;
            m.accuracy = accuracy;
            m.variance = variance;
            finish(&ws, &m, &[Section::Accuracy])?;
            timings.record("probe", started.elapsed().as_secs_f64());
        }
        Command::Ablate => {
            let ds = ws.dataset()?;
            let splits = Splits::new(&cfg, &ds)?;
            let mut m = ws.metrics(&cfg)?;
            m.ablation = Some(run_ablation(&cfg, &splits)?);
            finish(&ws, &m, &[Section::Ablation])?;
            timings.record("ablate", started.elapsed().as_secs_f64());
        }
        Command::Fairness => {
            let ds = ws.dataset()?;
            let mut m = ws.metrics(&cfg)?;
            m.fairness = run_fairness(&cfg, &ds, &ws.suppressors()?)?;
            finish(&ws, &m, &[Section::Fairness])?;
            timings.record("fairness", started.elapsed().as_secs_f64());
        }
        Command::Report { sections } => {
            let path = ws.path(METRICS_FILE);
            if !path.exists() {
                return Err(Error::Data(format!("{} not found; run a pipeline stage first", path.display())));
            }
            let m = emoblind::pipeline::MetricsReport::load(&path)?;
            let wanted = sections
                .iter()
                .map(|s| Section::from_name(s).ok_or_else(|| Error::Config(format!("unknown report section '{s}'"))))
                .collect::<Result<Vec<_>>>()?;
            let written = emit_report(&m, &ws.root, if wanted.is_empty() { None } else { Some(&wanted) })?;
            for p in written {
                println!("wrote {}", p.display());
            }
            return Ok(());
        }
        Command::All => {
            let out = run_all(&cfg)?;
            write_dataset(&out.dataset, &ws.path(DATASET_FILE))?;
            for s in &out.suppressors {
                s.save(&ws.path(&suppressor_file(s.kind)))?;
            }
            finish(&ws, &out.metrics, &Section::ALL)?;
            timings = out.timings;
        }
    }
    timings.save(&ws.path(TIMINGS_FILE))
}

fn finish(ws: &Workspace, m: &emoblind::pipeline::MetricsReport, sections: &[Section]) -> Result<()> {
    m.save(&ws.path(METRICS_FILE))?;
    for p in emit_report(m, &ws.root, Some(sections))? {
        println!("wrote {}", p.display());
        if p.extension().is_some_and(|e| e == "csv") {
            if let Ok(t) = std::fs::read_to_string(&p) {
                print!("{t}");
            }
        }
    }
    Ok(())
}
