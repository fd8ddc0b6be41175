use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lbf_core::data::{
    default_templates, gen_synthetic, load_math23k, size_prior_coverage, write_records, Corpus,
};
use lbf_core::eval::{check_integrity, evaluate, EvalReport};
use lbf_core::experiment::{run_experiment, split_corpus, to_json, ExperimentConfig};
use lbf_core::expr::{evaluate_prefix, format_prefix, parse_tokens};
use lbf_core::fixer::{m_fix, UniformScorer, DEFAULT_FIX_STEPS};
use lbf_core::policy::Policy;
use lbf_core::tree_reg::{for_each_tree, SizePrior};
use lbf_core::{answers_match, Vocab};

#[derive(Parser)]
#[command(name = "lbf", version, about = "Solve math word problems by learning from fixed expressions")]
struct Cli {
    /// Seed for every random choice of the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every run of an experiment config.
    Train(TrainArgs),
    /// Beam-evaluate a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Repair a prefix expression so it evaluates to a target.
    Fix(FixArgs),
    /// List every expression of the given sizes.
    Enumerate(EnumerateArgs),
    /// Write a synthetic corpus in the Math23K JSON layout.
    GenSynthetic(GenArgs),
    /// Summarize and verify evaluation reports.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Run only this strategy, ignoring the config's strategy grid.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Evaluate only the test part of a seeded split.
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// a_min,b_min,a_max,b_max
    #[arg(long, value_parser = parse_prior)]
    size_prior: Option<SizePrior>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FixArgs {
    /// Prefix expression, e.g. "* / n0 n1 - n2 n1".
    #[arg(long)]
    tree: String,
    /// Comma-separated quantity values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    quantities: Vec<f64>,
    #[arg(long, allow_hyphen_values = true)]
    answer: f64,
    #[arg(long, default_value_t = DEFAULT_FIX_STEPS)]
    steps: usize,
}

#[derive(Args)]
struct EnumerateArgs {
    /// Comma-separated quantity values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    quantities: Vec<f64>,
    /// Tree sizes to list (odd).
    #[arg(long = "size", required = true)]
    sizes: Vec<usize>,
    /// Restrict the vocabulary, e.g. "+ * n0 n1".
    #[arg(long)]
    vocab: Option<String>,
    /// Mark expressions that evaluate to this value.
    #[arg(long, allow_hyphen_values = true)]
    answer: Option<f64>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation report JSON files.
    reports: Vec<PathBuf>,
    /// Corpus used to recompute every report number.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Corpus whose gold sizes are checked against the size prior.
    #[arg(long)]
    coverage: Option<PathBuf>,
    #[arg(long, value_parser = parse_prior)]
    size_prior: Option<SizePrior>,
}

fn parse_prior(s: &str) -> Result<SizePrior, String> {
    let v: Vec<i64> = s
        .split(',')
        .map(|x| x.trim().parse().map_err(|_| format!("bad integer `{x}`")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c, d] => Ok(SizePrior::new(a, b, c, d)),
        _ => Err("expected a_min,b_min,a_max,b_max".into()),
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn print_accuracies(label: &str, report: &EvalReport) {
    let row = |m: &BTreeMap<String, f64>| {
        m.iter().map(|(k, v)| format!("{k}={v:.4}")).collect::<Vec<_>>().join(" ")
    };
    println!("{label}: {} problems", report.problems);
    println!("  all-top-k   {}", row(&report.acc_all));
    println!("  mean-rank   {}", row(&report.acc_mean_rank));
    println!("  exec errors {}  padded {:?}", report.execution_errors, report.padded);
}

fn train(args: TrainArgs, seed: u64) -> Result<ExitCode> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.strategy {
        config.grid.strategies = vec![s];
    }
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    let summary = run_experiment(&config, seed, &args.out)?;
    for run in &summary.runs {
        println!(
            "{:<24} train {:.4}  test acc@1 {:.4} acc@3 {:.4} acc@5 {:.4}",
            run.name,
            run.final_train_accuracy,
            run.test_acc_all["acc@1"],
            run.test_acc_all["acc@3"],
            run.test_acc_all["acc@5"]
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn eval(args: EvalArgs, seed: u64) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.checkpoint)
        .with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let policy = Policy::from_checkpoint(&text)?;
    let corpus = load_math23k(&args.data)?;
    let problems = match args.test_fraction {
        Some(f) => split_corpus(&corpus, f, seed).1,
        None => corpus.problems,
    };
    let report = evaluate(&policy, &problems, &args.size_prior.unwrap_or_default(), args.beam);
    print_accuracies("eval", &report);
    if let Some(out) = &args.out {
        write_or_print(Some(out), &to_json(&report))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn fix(args: FixArgs, seed: u64) -> Result<ExitCode> {
    let tokens = parse_tokens(&args.tree)?;
    lbf_core::parse_prefix(&tokens)?;
    let scorer = UniformScorer::new(Vocab::full(args.quantities.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match m_fix(&tokens, &args.quantities, args.answer, args.steps, &scorer, &mut rng) {
        Some(found) => {
            println!("{}", format_prefix(&found.tokens));
            log::info!("edit distance {}, random-walk steps {}", found.edit_distance, found.steps);
            Ok(ExitCode::SUCCESS)
        }
        None => {
            println!("NONE");
            Ok(ExitCode::FAILURE)
        }
    }
}

fn enumerate(args: EnumerateArgs) -> Result<ExitCode> {
    let vocab = match &args.vocab {
        Some(v) => Vocab::new(parse_tokens(v)?),
        None => Vocab::full(args.quantities.len()),
    };
    let mut total = 0usize;
    let mut hits = 0usize;
    let mut out = String::new();
    for_each_tree(&vocab, &args.sizes, |tokens| {
        total += 1;
        let mark = match args.answer {
            Some(y) => {
                let ok = evaluate_prefix(tokens, &args.quantities).is_ok_and(|v| answers_match(v, y));
                hits += ok as usize;
                if ok {
                    "\t*"
                } else {
                    ""
                }
            }
            None => "",
        };
        out.push_str(&format_prefix(tokens));
        out.push_str(mark);
        out.push('\n');
    })?;
    print!("{out}");
    match args.answer {
        Some(_) => eprintln!("{total} trees, {hits} reach the answer"),
        None => eprintln!("{total} trees"),
    }
    Ok(ExitCode::SUCCESS)
}

fn gen(args: GenArgs, seed: u64) -> Result<ExitCode> {
    let records = gen_synthetic(args.n, &default_templates(), seed);
    fs::write(&args.out, write_records(&records)).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!("wrote {} problems to {}", records.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn report(args: ReportArgs) -> Result<ExitCode> {
    let prior = args.size_prior.unwrap_or_default();
    let mut ok = true;
    if let Some(path) = &args.coverage {
        let corpus = load_math23k(path)?;
        let cov = size_prior_coverage(&corpus.problems, &prior);
        println!(
            "size prior coverage: {}/{} gold expressions ({:.4})",
            cov.covered,
            cov.total,
            cov.fraction()
        );
    }
    let corpus: Option<Corpus> = args.data.as_deref().map(load_math23k).transpose()?;
    for path in &args.reports {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let report: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        print_accuracies(&path.display().to_string(), &report);
        if let Some(c) = &corpus {
            let quantities = c.problems.iter().map(|p| (p.id.clone(), p.values())).collect();
            match check_integrity(&report, &quantities) {
                Ok(()) => println!("  integrity   ok"),
                Err(e) => {
                    println!("  integrity   FAILED: {e}");
                    ok = false;
                }
            }
        }
    }
    if args.reports.is_empty() && args.coverage.is_none() {
        bail!("nothing to report: pass report files or --coverage");
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let seed = cli.seed;
    let result = match cli.command {
        Command::Train(a) => train(a, seed),
        Command::Eval(a) => eval(a, seed),
        Command::Fix(a) => fix(a, seed),
        Command::Enumerate(a) => enumerate(a),
        Command::GenSynthetic(a) => gen(a, seed),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
