use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};

use negmarket::experiment::{parse_spec, run, EvalStrategy, ExperimentSpec, RunMode};
use negmarket::market::{DeadlineClass, Density, IllegalActionMode, RatioClass, Zoa};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Illegal {
    Abort,
    Mask,
}

/// Runs negotiation market experiments. Flags override values from `--config`.
#[derive(Debug, Parser)]
#[command(name = "negmarket", version)]
struct Args {
    /// gen-data, train-sl, train-rl, evaluate, hypothesis-a, hypothesis-b or hypothesis-c.
    #[arg(long, value_parser = parse_with::<RunMode>)]
    mode: Option<RunMode>,
    /// JSON experiment spec.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    test_episodes: Option<usize>,
    #[arg(long)]
    adaptation_episodes: Option<usize>,
    /// Divide every episode count by this factor.
    #[arg(long)]
    scale: Option<usize>,
    /// Seller strategy id; repeat for several.
    #[arg(long = "seller")]
    sellers: Vec<String>,
    #[arg(long, value_parser = parse_with::<Zoa>)]
    zoa: Option<Zoa>,
    #[arg(long, value_parser = parse_with::<Density>)]
    md: Option<Density>,
    #[arg(long, value_parser = parse_with::<RatioClass>)]
    mr: Option<RatioClass>,
    #[arg(long, value_parser = parse_with::<DeadlineClass>)]
    deadline: Option<DeadlineClass>,
    /// Use all 81 market settings.
    #[arg(long)]
    sweep: bool,
    /// Buyer for the evaluate mode: teacher, sl or rl.
    #[arg(long, value_parser = parse_with::<EvalStrategy>)]
    strategy: Option<EvalStrategy>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    sl_checkpoint: Option<PathBuf>,
    #[arg(long)]
    rl_checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    illegal: Option<Illegal>,
}

fn parse_with<T>(s: &str) -> Result<T, String>
where
    T: std::str::FromStr<Err = negmarket::protocol::ParseError>,
{
    s.parse().map_err(|e: negmarket::protocol::ParseError| e.0)
}

fn build_spec(args: Args) -> Result<ExperimentSpec> {
    let mut spec = match &args.config {
        Some(path) => {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            parse_spec(&bytes).map_err(|e| anyhow::anyhow!("{}: {}", path.display(), e.0))?
        }
        None => ExperimentSpec::default(),
    };
    if let Some(m) = args.mode {
        spec.mode = m;
    } else if args.config.is_none() {
        anyhow::bail!("either --mode or --config is required");
    }
    macro_rules! set {
        ($($field:ident),+) => {$(
            if let Some(v) = args.$field {
                spec.$field = v.into();
            }
        )+};
    }
    set!(seed, scale, strategy, out);
    if args.episodes.is_some() {
        spec.episodes = args.episodes;
    }
    if args.test_episodes.is_some() {
        spec.test_episodes = args.test_episodes;
    }
    if args.adaptation_episodes.is_some() {
        spec.adaptation_episodes = args.adaptation_episodes;
    }
    if !args.sellers.is_empty() {
        spec.sellers = args.sellers;
    }
    spec.zoa = args.zoa.or(spec.zoa);
    spec.md = args.md.or(spec.md);
    spec.mr = args.mr.or(spec.mr);
    spec.deadline = args.deadline.or(spec.deadline);
    spec.sweep |= args.sweep;
    spec.dataset = args.dataset.or(spec.dataset);
    spec.sl_checkpoint = args.sl_checkpoint.or(spec.sl_checkpoint);
    spec.rl_checkpoint = args.rl_checkpoint.or(spec.rl_checkpoint);
    if let Some(i) = args.illegal {
        spec.illegal = Some(match i {
            Illegal::Abort => IllegalActionMode::Abort,
            Illegal::Mask => IllegalActionMode::Mask,
        });
    }
    Ok(spec)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let outcome = build_spec(args).and_then(|spec| {
        let report = run(&spec)?;
        for path in &report.artifacts {
            println!("{}", path.display());
        }
        Ok(())
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
