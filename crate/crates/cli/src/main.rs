use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde_json::json;
use symop::bundle::{load_bundle, save_bundle, ModelBundle, Provenance};
use symop::corpus::{generate_demos, read_corpus, write_corpus, CorpusGenConfig, Observation, Prototypes, Symbol};
use symop::experiment::{run_experiment, ExperimentConfig, MetricsReport, Regime};
use symop::latent::LossConfig;
use symop::pipeline::{learn_operators, LearnConfig, Operators};
use symop::planner::{plan, PlanError, PlanTrace, PlannerConfig};
use symop::StateDistribution;

#[derive(Parser)]
#[command(
    name = "symop",
    version,
    about = "Learn probabilistic symbolic operators from demonstrations and plan with them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic demonstration corpus.
    GenData {
        /// Generator config as JSON; defaults to the standard sequence-type mix.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corpus file to write (line-delimited JSON).
        #[arg(long)]
        out: PathBuf,
        /// Number of demonstrations when no config is given.
        #[arg(long, default_value_t = 2000)]
        sequences: usize,
        /// Observation dimension when no config is given.
        #[arg(long, default_value_t = 16)]
        dim: usize,
        /// Observation noise when no config is given.
        #[arg(long, default_value_t = 0.25)]
        sigma_obs: f64,
    },
    /// Train the encoder, choose the state count, and build the grounding and transition models.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Relation-loss weight.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// KL weight.
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Latent distance margin.
        #[arg(long, default_value_t = 1.0)]
        d_m: f64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        latent_dim: usize,
        /// Use exactly this many image states instead of selecting one.
        #[arg(long)]
        k: Option<usize>,
        /// Generator config the corpus came from; read from `<corpus>.gen.json` when omitted.
        #[arg(long)]
        gen_config: Option<PathBuf>,
        /// Record the creation time in the bundle (makes output time-dependent).
        #[arg(long)]
        timestamp: bool,
        /// Bundle file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Ground one observation into a state distribution.
    Ground {
        #[arg(long)]
        bundle: PathBuf,
        /// `s0`, `s1`, `s2`, or comma-separated features.
        #[arg(long, allow_hyphen_values = true)]
        obs: String,
        #[arg(long)]
        json: bool,
    },
    /// Plan from an initial belief to a goal state.
    Plan {
        #[arg(long)]
        bundle: PathBuf,
        /// `dist:p0,p1,...`, a state name, or comma-separated features.
        #[arg(long, allow_hyphen_values = true)]
        init: String,
        /// Goal state name.
        #[arg(long, default_value = "s2")]
        goal: String,
        /// Defaults to the bundle's planner setting.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Run simulated disassembly episodes and report success rates.
    Run {
        #[arg(long)]
        bundle: PathBuf,
        /// static, pos-noise or obstacle.
        #[arg(long)]
        regime: Regime,
        /// Position or obstacle spread; several values give a sweep.
        #[arg(long, value_delimiter = ',', default_value = "1.0")]
        sigma: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV file for per-class metrics.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        p_obstacle: f64,
        /// Observation noise; defaults to the training generator's.
        #[arg(long)]
        sigma_obs: Option<f64>,
        /// Execute the first plan blindly.
        #[arg(long)]
        no_replan: bool,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        max_replans: Option<usize>,
        /// Exit with status 4 if any episode runs out of steps or replans.
        #[arg(long)]
        strict: bool,
    },
}

/// A failure with the process exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const RUNTIME: u8 = 1;
const CONFIG: u8 = 2;
const NO_PLAN: u8 = 3;
const BUDGET: u8 = 4;

trait OrExit<T> {
    fn or_exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn fail(code: u8, error: anyhow::Error) -> Failure {
    Failure { code, error }
}

fn sidecar(corpus: &Path) -> PathBuf {
    let mut name = corpus.as_os_str().to_owned();
    name.push(".gen.json");
    PathBuf::from(name)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn gen_data(
    config: Option<PathBuf>,
    seed: u64,
    out: &Path,
    sequences: usize,
    dim: usize,
    sigma_obs: f64,
) -> Result<(), Failure> {
    let cfg = match config {
        Some(path) => read_json::<CorpusGenConfig>(&path).or_exit(CONFIG)?,
        None => CorpusGenConfig::table1_mix(sequences, dim, sigma_obs),
    };
    let corpus = generate_demos(&cfg, seed).or_exit(CONFIG)?;
    let file = File::create(out).with_context(|| format!("cannot create {}", out.display())).or_exit(RUNTIME)?;
    write_corpus(&corpus, BufWriter::new(file)).or_exit(RUNTIME)?;
    let record = serde_json::to_string_pretty(&json!({ "seed": seed, "config": cfg })).or_exit(RUNTIME)?;
    fs::write(sidecar(out), record + "\n").or_exit(RUNTIME)?;
    println!(
        "wrote {} demonstrations ({} raw observations, dimension {}) to {}",
        corpus.len(),
        corpus.raw_count(),
        cfg.dim,
        out.display()
    );
    Ok(())
}

/// Generator config and seed recorded next to a generated corpus.
fn read_sidecar(path: &Path) -> anyhow::Result<(CorpusGenConfig, Option<u64>)> {
    let value: serde_json::Value = read_json(path)?;
    let cfg =
        serde_json::from_value(value["config"].clone()).with_context(|| format!("bad config in {}", path.display()))?;
    Ok((cfg, value["seed"].as_u64()))
}

#[allow(clippy::too_many_arguments)]
fn train(
    corpus_path: &Path,
    loss: LossConfig,
    epochs: usize,
    seed: u64,
    latent_dim: usize,
    k: Option<usize>,
    gen_config: Option<PathBuf>,
    timestamp: bool,
    out: &Path,
) -> Result<(), Failure> {
    let file =
        File::open(corpus_path).with_context(|| format!("cannot open {}", corpus_path.display())).or_exit(CONFIG)?;
    let corpus = read_corpus(BufReader::new(file)).or_exit(CONFIG)?;
    let dim = corpus.feature_dim().ok_or_else(|| anyhow!("corpus has no raw observations")).or_exit(CONFIG)?;
    let (generator, corpus_seed) = match gen_config {
        Some(path) => (Some(read_json::<CorpusGenConfig>(&path).or_exit(CONFIG)?), None),
        None if sidecar(corpus_path).exists() => {
            let (cfg, seed) = read_sidecar(&sidecar(corpus_path)).or_exit(CONFIG)?;
            (Some(cfg), seed)
        }
        None => (None, None),
    };
    if let Some(g) = &generator {
        if g.dim != dim {
            return Err(fail(CONFIG, anyhow!("generator dimension {} does not match corpus dimension {dim}", g.dim)));
        }
    }
    let mut cfg = LearnConfig { latent_dim, loss, forced_k: k, ..LearnConfig::default() }.with_seed(seed);
    cfg.train.epochs = epochs;
    let (ops, report) = learn_operators(&corpus, &cfg).or_exit(CONFIG)?;

    println!("training loss {:.4} -> {:.4} over {epochs} epochs", report.train.initial_loss, report.train.final_loss);
    println!("{:>3}  {:>9}  {:>7}", "k", "incorrect", "rate");
    for p in &report.curve {
        let mark = if p.k == report.k { "  <- selected" } else { "" };
        println!("{:>3}  {:>9}  {:>7.4}{mark}", p.k, p.incorrect, p.rate);
    }
    println!("states: {}", ops.states.state_names.join(" "));

    let mut bundle = ModelBundle::from_operators(&ops, generator, loss);
    let created_unix = timestamp.then(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()));
    bundle.provenance = Provenance { corpus_seed, learn: Some(cfg), created_unix };
    save_bundle(&bundle, out).or_exit(RUNTIME)?;
    println!("wrote bundle to {}", out.display());
    Ok(())
}

fn load(path: &Path) -> Result<(ModelBundle, Operators), Failure> {
    let bundle = load_bundle(path).or_exit(CONFIG)?;
    let ops = bundle.to_operators().or_exit(CONFIG)?;
    Ok((bundle, ops))
}

fn parse_floats(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',').map(|t| t.trim().parse::<f64>().with_context(|| format!("`{t}` is not a number"))).collect()
}

fn parse_observation(s: &str) -> anyhow::Result<Observation> {
    match Symbol::from_name(s) {
        Some(sym) => Ok(Observation::symbolic("cli", sym)),
        None => Ok(Observation::raw("cli", parse_floats(s)?)),
    }
}

fn print_distribution(names: &[String], s: &StateDistribution) {
    for (name, p) in names.iter().zip(s.probs()) {
        println!("{name:>4}  {p:.6}");
    }
    println!("most likely: {}", names[s.argmax()]);
}

fn ground(bundle: &Path, obs: &str, as_json: bool) -> Result<(), Failure> {
    let (_, ops) = load(bundle)?;
    let obs = parse_observation(obs).or_exit(CONFIG)?;
    let s = ops.ground(&obs).or_exit(CONFIG)?;
    if as_json {
        println!("{}", json!({ "states": ops.states.state_names, "probs": s.probs() }));
    } else {
        print_distribution(&ops.states.state_names, &s);
    }
    Ok(())
}

fn initial_belief(ops: &Operators, spec: &str) -> anyhow::Result<StateDistribution> {
    if let Some(rest) = spec.strip_prefix("dist:") {
        let probs = parse_floats(rest)?;
        if probs.len() != ops.states.m() {
            return Err(anyhow!("distribution has {} entries, the model has {} states", probs.len(), ops.states.m()));
        }
        return Ok(StateDistribution::new(probs)?);
    }
    if let Some(goal) = ops.goal(spec) {
        return Ok(goal);
    }
    Ok(ops.ground(&parse_observation(spec)?)?)
}

fn print_trace(names: &[String], trace: &PlanTrace) {
    println!(
        "plan ({} actions): {}",
        trace.actions.len(),
        trace.actions.iter().map(|a| a.name()).collect::<Vec<_>>().join(" ")
    );
    for (i, (a, s)) in trace.actions.iter().zip(&trace.predicted_states).enumerate() {
        let top = s.argmax();
        println!("{:>3}  {:<12} -> {} ({:.4})  {s}", i + 1, a.name(), names[top], s.probs()[top]);
    }
}

fn plan_cmd(
    bundle: &Path,
    init: &str,
    goal: &str,
    epsilon: Option<f64>,
    max_depth: Option<usize>,
    as_json: bool,
) -> Result<(), Failure> {
    let (bundle, ops) = load(bundle)?;
    let init = initial_belief(&ops, init).or_exit(CONFIG)?;
    let goal_dist = ops.goal(goal).ok_or_else(|| anyhow!("unknown goal state `{goal}`")).or_exit(CONFIG)?;
    let cfg = PlannerConfig {
        epsilon: epsilon.unwrap_or(bundle.planner.epsilon),
        max_depth: max_depth.unwrap_or(bundle.planner.max_depth),
        ..bundle.planner
    };
    match plan(&ops.transitions, &init, &goal_dist, &cfg) {
        Ok(trace) if as_json => println!("{}", serde_json::to_string_pretty(&trace).or_exit(RUNTIME)?),
        Ok(trace) => print_trace(&ops.states.state_names, &trace),
        Err(e @ PlanError::NoPlan { .. }) => return Err(fail(NO_PLAN, e.into())),
        Err(e) => return Err(fail(CONFIG, e.into())),
    }
    Ok(())
}

struct RunArgs {
    regime: Regime,
    sigmas: Vec<f64>,
    episodes: usize,
    seed: u64,
    report: Option<PathBuf>,
    p_obstacle: f64,
    sigma_obs: Option<f64>,
    no_replan: bool,
    max_steps: Option<usize>,
    max_replans: Option<usize>,
    strict: bool,
}

fn run(bundle_path: &Path, args: RunArgs) -> Result<(), Failure> {
    let (bundle, ops) = load(bundle_path)?;
    let prototypes = match &bundle.generator {
        Some(g) => g.prototypes.clone(),
        None => {
            eprintln!("bundle records no generator; using the default prototypes");
            Prototypes::default_for_dim(ops.encoder.input_dim())
        }
    };
    let mut cfg = ExperimentConfig::new(args.regime, prototypes);
    cfg.episodes = args.episodes;
    cfg.seed = args.seed;
    cfg.p_obstacle = args.p_obstacle;
    cfg.sigma_obs = args.sigma_obs.or(bundle.generator.as_ref().map(|g| g.sigma_obs)).unwrap_or(cfg.sigma_obs);
    cfg.exec.planner = bundle.planner;
    cfg.exec.deviation_epsilon = bundle.planner.epsilon;
    cfg.exec.replan = !args.no_replan;
    cfg.exec.max_steps = args.max_steps.unwrap_or(cfg.exec.max_steps);
    cfg.exec.max_replans = args.max_replans.unwrap_or(cfg.exec.max_replans);

    let mut reports = Vec::new();
    let mut budget_failures = 0;
    println!(
        "{:>6}  {:<7}  {:>8}  {:>9}  {:>8}  {:>6}  {:>6}  {:>5}",
        "sigma", "class", "first", "rectified", "overall", "ssr", "rsr", "num"
    );
    for &sigma in &args.sigmas {
        cfg.sigma = sigma;
        let (report, outcomes) = run_experiment(&ops, &cfg).or_exit(CONFIG)?;
        budget_failures += outcomes.iter().filter(|o| o.result.is_budget_failure()).count();
        let rows = report.per_class.iter().map(|(c, m)| (c.as_str(), m)).chain([("overall", &report.overall)]);
        for (class, m) in rows {
            println!(
                "{sigma:>6.2}  {class:<7}  {:>8.3}  {:>9.3}  {:>8.3}  {:>6.3}  {:>6.3}  {:>5}",
                m.first_sr(),
                m.rectified_sr(),
                m.overall_sr(),
                m.ssr(),
                m.rsr(),
                m.num
            );
        }
        reports.push(report);
    }
    if let Some(path) = &args.report {
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display())).or_exit(RUNTIME)?;
        MetricsReport::write_csv(&reports, BufWriter::new(file)).or_exit(RUNTIME)?;
        println!("wrote report to {}", path.display());
    }
    if budget_failures > 0 {
        println!("{budget_failures} episodes exhausted their step or replan budget");
        if args.strict {
            return Err(fail(BUDGET, anyhow!("{budget_failures} episodes hit a budget limit")));
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { config, seed, out, sequences, dim, sigma_obs } => {
            gen_data(config, seed, &out, sequences, dim, sigma_obs)
        }
        Command::Train { corpus, alpha, beta, d_m, epochs, seed, latent_dim, k, gen_config, timestamp, out } => {
            let loss = LossConfig { beta, alpha, d_m };
            train(&corpus, loss, epochs, seed, latent_dim, k, gen_config, timestamp, &out)
        }
        Command::Ground { bundle, obs, json } => ground(&bundle, &obs, json),
        Command::Plan { bundle, init, goal, epsilon, max_depth, json } => {
            plan_cmd(&bundle, &init, &goal, epsilon, max_depth, json)
        }
        Command::Run {
            bundle,
            regime,
            sigma,
            episodes,
            seed,
            report,
            p_obstacle,
            sigma_obs,
            no_replan,
            max_steps,
            max_replans,
            strict,
        } => run(
            &bundle,
            RunArgs {
                regime,
                sigmas: sigma,
                episodes,
                seed,
                report,
                p_obstacle,
                sigma_obs,
                no_replan,
                max_steps,
                max_replans,
                strict,
            },
        ),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
