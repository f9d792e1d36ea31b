use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use nhcz_core::balls::{default_beta0, Analysis};
use nhcz_core::czdecomp::{cz_decompose, verify_cz};
use nhcz_core::czop::{self, KernelSpec};
use nhcz_core::fspaces;
use nhcz_core::harness::{generate, run_suite, Scenario, ScenarioFile, ScenarioKind, SuiteConfig};
use nhcz_core::maximal;
use nhcz_core::mspace::{validate_geometric_doubling, validate_upper_doubling, DiscreteSpace, DominatingFunction, LambdaSpec, SpaceFile};
use nhcz_core::pairs::PairBudget;
use nhcz_core::report::{write_csv, write_jsonl};

#[derive(Parser)]
#[command(name = "nhcz", version, about = "Calderón–Zygmund checks on finite upper-doubling spaces")]
struct Cli {
    /// Pairs enumerated per point before sampling kicks in.
    #[arg(long, global = true)]
    sample_cap: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "NHCZ_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a scenario file.
    Gen {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the upper-doubling properties of (space, λ).
    Validate {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        lambda: Option<PathBuf>,
    },
    /// Evaluate a maximal operator.
    Maximal {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        lambda: Option<PathBuf>,
        #[arg(long)]
        f: PathBuf,
        #[arg(long, value_enum)]
        op: MaximalOp,
        #[arg(long, default_value_t = 5.0)]
        rho: f64,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
    },
    /// Decompose f at height `--lambda` and verify the result.
    Czdecomp {
        #[arg(long)]
        space: PathBuf,
        /// Dominating function file (defaults to the scenario's).
        #[arg(long)]
        dominating: Option<PathBuf>,
        #[arg(long)]
        f: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long)]
        beta0: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an operator check with a kernel.
    Operator {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        lambda: Option<PathBuf>,
        /// bergman | hilbert | inverse-lambda | zero (defaults to the scenario's).
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        f: PathBuf,
        /// Multiplier for `commutator`.
        #[arg(long)]
        b: Option<PathBuf>,
        #[arg(long, value_enum)]
        check: OperatorCheck,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value_t = 0.5)]
        eta: f64,
    },
    /// Run a check suite described by a TOML file.
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MaximalOp {
    M,
    N,
    Sharp,
    Mp,
}

#[derive(Clone, Copy, ValueEnum)]
enum OperatorCheck {
    Weak11,
    Cotlar,
    Commutator,
    RbmoImage,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

/// A space plus whatever else its file carried.
struct Loaded {
    space: DiscreteSpace,
    lambda: Option<DominatingFunction>,
    kernel: Option<KernelSpec>,
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Accepts a scenario file (from `gen`) or a bare space file.
fn load_space(path: &Path) -> Result<Loaded> {
    let v = read_json(path)?;
    if v.get("space").is_some() {
        let file: ScenarioFile = serde_json::from_value(v).context("scenario file")?;
        let s = Scenario::from_file(file)?;
        return Ok(Loaded {
            space: s.space,
            lambda: Some(s.lambda),
            kernel: Some(s.kernel),
        });
    }
    let file: SpaceFile = serde_json::from_value(v).context("space file")?;
    Ok(Loaded {
        space: DiscreteSpace::from_file(file)?,
        lambda: None,
        kernel: None,
    })
}

fn resolve_lambda(loaded: &Loaded, path: Option<&Path>) -> Result<DominatingFunction> {
    match path {
        Some(p) => {
            let spec: LambdaSpec = serde_json::from_value(read_json(p)?).context("dominating function file")?;
            Ok(spec.build(&loaded.space)?)
        }
        None => loaded
            .lambda
            .clone()
            .context("no dominating function: pass one or use a scenario file"),
    }
}

fn load_function(path: &Path, n: usize) -> Result<Vec<f64>> {
    let f: Vec<f64> = serde_json::from_value(read_json(path)?).context("function file must be a JSON array of numbers")?;
    if f.len() != n {
        bail!("function has {} values but the space has {n} points", f.len());
    }
    Ok(f)
}

fn emit(out: Option<&Path>, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn budget(cli: &Cli) -> PairBudget {
    cli.sample_cap.map(PairBudget::new).unwrap_or_default()
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.cmd {
        Cmd::Gen { kind, size, seed, out } => {
            let kind: ScenarioKind = kind.parse()?;
            let s = generate(kind, *size, *seed)?;
            emit(out.as_deref(), &serde_json::to_value(s.to_file())?)?;
            Ok(true)
        }
        Cmd::Validate { space, lambda } => {
            let l = load_space(space)?;
            let lam = resolve_lambda(&l, lambda.as_deref())?;
            let v = validate_upper_doubling(&l.space, &lam);
            let g = validate_geometric_doubling(&l.space);
            emit(None, &json!({ "passed": v.passed(), "upper_doubling": v, "geometric_doubling": g }))?;
            Ok(v.passed())
        }
        Cmd::Maximal { space, lambda, f, op, rho, p } => {
            let l = load_space(space)?;
            let lam = resolve_lambda(&l, lambda.as_deref())?;
            let f = load_function(f, l.space.len())?;
            let an = Analysis::with_default_beta0(&l.space, &lam);
            let r = match op {
                MaximalOp::M => maximal::maximal_noncentered(&an, &f, *rho)?,
                MaximalOp::N => maximal::maximal_doubling(&an, &f)?,
                MaximalOp::Sharp => maximal::sharp_maximal(&an, &f, budget(cli))?,
                MaximalOp::Mp => maximal::maximal_p(&an, &f, *p, *rho)?,
            };
            emit(None, &serde_json::to_value(r)?)?;
            Ok(true)
        }
        Cmd::Czdecomp { space, dominating, f, lambda, p, beta0, out } => {
            let l = load_space(space)?;
            let lam = resolve_lambda(&l, dominating.as_deref())?;
            let f = load_function(f, l.space.len())?;
            let an = Analysis::new(&l.space, &lam, beta0.unwrap_or_else(|| default_beta0(&lam)));
            let dec = cz_decompose(&an, &f, *lambda, *p)?;
            let v = verify_cz(&l.space, &lam, &f, &dec)?;
            let failures: Vec<_> = v.failures().into_iter().cloned().collect();
            emit(
                out.as_deref(),
                &json!({ "passed": v.passed(), "decomposition": dec, "failures": failures, "constants": v.constants }),
            )?;
            if !v.passed() {
                for c in &failures {
                    eprintln!("{}: {}", c.name, c.witness.as_deref().unwrap_or("failed"));
                }
            }
            Ok(v.passed())
        }
        Cmd::Operator { space, lambda, kernel, f, b, check, p, eta } => {
            let l = load_space(space)?;
            let lam = resolve_lambda(&l, lambda.as_deref())?;
            let f = load_function(f, l.space.len())?;
            let spec = match kernel {
                Some(k) => KernelSpec::parse(k)?,
                None => l.kernel.clone().context("no kernel: pass --kernel or use a scenario file")?,
            };
            let k = spec.build(&l.space, &lam)?;
            let an = Analysis::with_default_beta0(&l.space, &lam);
            let value = match check {
                OperatorCheck::Weak11 => {
                    let tf: Vec<f64> = czop::apply(&l.space, k.as_ref(), &f)?.iter().map(|z| z.norm()).collect();
                    serde_json::to_value(czop::weak11_check(&l.space, k.as_ref(), &f, &czop::height_grid(&tf, 16))?)?
                }
                OperatorCheck::Cotlar => serde_json::to_value(czop::cotlar_check(&an, k.as_ref(), &f, *eta)?)?,
                OperatorCheck::Commutator => {
                    let b = load_function(b.as_deref().context("commutator needs --b")?, l.space.len())?;
                    serde_json::to_value(fspaces::commutator_pointwise_check(&an, k.as_ref(), &b, &f, *p, budget(cli))?)?
                }
                OperatorCheck::RbmoImage => {
                    json!({ "linf_to_rbmo": fspaces::rbmo_image_ratio(&an, k.as_ref(), &f, budget(cli))? })
                }
            };
            emit(None, &value)?;
            Ok(true)
        }
        Cmd::Suite { config, out, format } => {
            let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
            let mut cfg: SuiteConfig = toml::from_str(&text).context("suite config")?;
            if cli.sample_cap.is_some() {
                cfg.pair_cap = cli.sample_cap;
            }
            let outcome = run_suite(&cfg)?;
            let sink: Box<dyn Write> = match out {
                Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
                None => Box::new(io::stdout().lock()),
            };
            let mut sink = BufWriter::new(sink);
            match format {
                Format::Jsonl => write_jsonl(&mut sink, &outcome.reports)?,
                Format::Csv => write_csv(&mut sink, &outcome.reports)?,
            }
            sink.flush()?;
            for r in outcome.reports.iter().filter(|r| !r.passed()) {
                let failed: Vec<_> = r.passes.iter().filter(|(_, v)| !**v).map(|(k, _)| k.as_str()).collect();
                eprintln!("FAIL {} on {}: {}", r.check, r.scenario, failed.join(", "));
            }
            if outcome.drift() {
                eprintln!("note: some constants drifted beyond the size-doubling factor");
            }
            Ok(outcome.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
