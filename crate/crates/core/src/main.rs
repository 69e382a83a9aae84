use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pjoin::graph::{self, GraphGenParams};
use pjoin::harness::{self, ExperimentConfig, ExperimentKind, ExperimentOutput};
use pjoin::item::crosscheck::{self, Pair};
use pjoin::item::neural::PjoinMode;
use pjoin::learn::{self, Delay, LearnConfig, Pattern};
use pjoin::{rng, Error};

/// Neuroidal JOIN/LINK/PJOIN simulator and pattern memorization experiments.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Present patterns to a learner and report per-presentation metrics.
    Learn(LearnArgs),
    /// Run an experiment suite: downward-traffic, new-pjoins,
    /// perturbation-overlap, graph-model or oracle-suite.
    Experiment {
        kind: String,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a random graph and write it as an edge list.
    Graphgen(GraphArgs),
    /// Run the oracle suite (closed forms against Monte Carlo).
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Compare the neuroid-level constructions with the item state machine.
    Crosscheck(CrossArgs),
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    /// Eligibility delay offset: D(level) = 2 * level + D.
    #[arg(long = "D")]
    d: Option<u64>,
    /// Sampling boost of predicted sensors.
    #[arg(long = "M")]
    boost: Option<f64>,
    #[arg(long = "Tmax")]
    t_max: Option<usize>,
    #[arg(long)]
    prediction_mode: Option<String>,
    #[arg(long)]
    pairing_mode: Option<String>,
    #[arg(long)]
    max_level_gap: Option<u32>,
    #[arg(long)]
    perturb: Option<f64>,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[command(flatten)]
    ov: Overrides,
}

#[derive(Args)]
struct LearnArgs {
    /// File of `<bits> [count]` lines; without it, m random patterns are
    /// presented for --rounds rounds.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    ov: Overrides,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    q: f64,
    /// Second-round probability; positive selects the two-round model.
    #[arg(long, default_value_t = 0.0)]
    r: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print reciprocity statistics to stderr.
    #[arg(long)]
    stats: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    FourStep,
    ThreeStep,
}

#[derive(Args)]
struct CrossArgs {
    #[arg(long, value_enum, default_value = "four-step")]
    mode: ModeArg,
    /// Sequence length on a single PJOIN.
    #[arg(long, default_value_t = 6)]
    depth: usize,
    /// Sequence length on the two-level tree.
    #[arg(long, default_value_t = 4)]
    tree_depth: usize,
    /// Also check the constructions on this many seeds.
    #[arg(long, default_value_t = 0)]
    construction_seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Input(String),
    Assertion,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::Input(e.to_string())),
    }
}

fn learn_config(ov: &Overrides) -> Result<LearnConfig, Failure> {
    let mut cfg = LearnConfig::default();
    if let Some(p) = ov.p {
        cfg.p = p;
    }
    if let Some(q) = ov.q {
        cfg.q = q;
    }
    if let Some(d) = ov.d {
        cfg.delay = Delay { slope: 2, offset: d };
    }
    if let Some(m) = ov.boost {
        cfg.boost = m;
    }
    cfg.t_max = ov.t_max.or(cfg.t_max);
    if let Some(s) = &ov.prediction_mode {
        cfg.prediction_mode = s.parse()?;
    }
    if let Some(s) = &ov.pairing_mode {
        cfg.pairing_mode = s.parse()?;
    }
    cfg.max_level_gap = ov.max_level_gap;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_learn(a: LearnArgs) -> Result<(), Failure> {
    let cfg = learn_config(&a.ov)?;
    let (patterns, schedule) = match &a.schedule {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            harness::parse_schedule(&text)?
        }
        None => {
            let n = a.ov.n.unwrap_or(40);
            let m = a.ov.m.unwrap_or(1);
            if n == 0 || m == 0 {
                return Err(Failure::Input("n and m must be positive".into()));
            }
            let mut r = rng::seeded(rng::derive(a.seed, 0));
            let patterns: Vec<Pattern> = (0..m).map(|_| Pattern::random(n, &mut r)).collect();
            let schedule = learn::round_schedule(m, a.rounds, &mut r);
            (patterns, schedule)
        }
    };
    let (rep, rows) = harness::run_learn(&patterns, &schedule, cfg, a.seed)?;
    let out = ExperimentOutput { rows, checks: Vec::new() };
    write_output(a.out.as_deref(), &out.to_csv()?)?;
    eprintln!(
        "{} presentations, {} PJOINs, max level {}, distinct tops {}, all re-presentations recognized {}, stabilized after round {}",
        rep.presentations.len(),
        rep.pjoins,
        rep.max_level,
        rep.distinct_tops(),
        rep.all_recognized(),
        rep.stabilization_round.map_or("none".into(), |r| r.to_string()),
    );
    Ok(())
}

fn experiment_config(kind: ExperimentKind, c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &c.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            if cfg.kind != kind {
                return Err(Failure::Input(format!("config kind {} does not match {kind}", cfg.kind)));
            }
            cfg
        }
        None => ExperimentConfig::new(kind),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.trials {
        cfg.trials = t;
    }
    if c.out.is_some() {
        cfg.out.clone_from(&c.out);
    }
    let ov = &c.ov;
    let g = &mut cfg.grid;
    if let Some(v) = ov.n {
        g.n = Some(vec![v]);
    }
    if let Some(v) = ov.m {
        g.m = Some(vec![v]);
    }
    if let Some(v) = ov.p {
        g.p = Some(vec![v]);
    }
    if let Some(v) = ov.q {
        g.q = Some(vec![v]);
    }
    if let Some(v) = ov.d {
        g.d = Some(vec![v]);
    }
    if let Some(v) = ov.boost {
        g.boost = Some(vec![v]);
    }
    if let Some(v) = ov.t_max {
        g.t_max = Some(vec![v]);
    }
    if let Some(v) = &ov.prediction_mode {
        g.prediction_mode = Some(vec![v.clone()]);
    }
    if let Some(v) = &ov.pairing_mode {
        g.pairing_mode = Some(vec![v.clone()]);
    }
    if let Some(v) = ov.max_level_gap {
        g.max_level_gap = Some(vec![v]);
    }
    if let Some(v) = ov.perturb {
        g.perturb = Some(vec![v]);
    }
    Ok(cfg)
}

fn cmd_experiment(kind: ExperimentKind, c: &Common) -> Result<(), Failure> {
    let cfg = experiment_config(kind, c)?;
    let out = harness::run(&cfg)?;
    write_output(cfg.out.as_deref(), &out.to_csv()?)?;
    for check in &out.checks {
        eprintln!("{} {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail);
    }
    if out.passed() {
        Ok(())
    } else {
        Err(Failure::Assertion)
    }
}

fn cmd_graphgen(a: GraphArgs) -> Result<(), Failure> {
    let params = GraphGenParams { n: a.n, p: a.p, q: a.q, r: a.r, seed: a.seed };
    params.validate()?;
    let g = if a.r > 0.0 { graph::gen_two_round(&params)? } else { graph::gen_reciprocal(&params)? };
    let header = format!("p={} q={} r={} seed={}", a.p, a.q, a.r, a.seed);
    write_output(a.out.as_deref(), &g.to_edge_list(&header))?;
    if a.stats {
        let s = graph::measure_reciprocity(&g);
        eprintln!(
            "unidirectional {:.4} bidirectional {:.4} null {:.4} transitivity {:.4}",
            s.fraction_unidirectional, s.fraction_bidirectional, s.fraction_null, s.transitivity_ratio
        );
    }
    Ok(())
}

fn cmd_crosscheck(a: CrossArgs) -> Result<(), Failure> {
    let mode = match a.mode {
        ModeArg::FourStep => PjoinMode::FourStep,
        ModeArg::ThreeStep => PjoinMode::ThreeStep,
    };
    let single = crosscheck::exhaustive(&Pair::single(mode, a.seed)?, &crosscheck::single_alphabet(), a.depth)?;
    let tree = crosscheck::exhaustive(&Pair::tree(mode, a.seed)?, &crosscheck::tree_alphabet(), a.tree_depth)?;
    let mut ok = true;
    for (name, rep) in [("single", &single), ("tree", &tree)] {
        println!(
            "{name}: {} sequences, {} stimuli, {} mismatches, {} (state, event) pairs covered",
            rep.sequences,
            rep.stimuli,
            rep.mismatches.len(),
            rep.covered.len()
        );
        for m in rep.mismatches.iter().take(5) {
            println!("  {m}");
        }
        ok &= rep.passed();
    }
    let mut built = 0;
    for s in 0..a.construction_seeds {
        let check = crosscheck::check_constructions(rng::derive(a.seed, s))?;
        if check.passed() {
            built += 1;
        } else {
            println!("construction seed {s}: {check:?}");
        }
    }
    if a.construction_seeds > 0 {
        println!("constructions: {built}/{} passed", a.construction_seeds);
        ok &= built == a.construction_seeds;
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Assertion)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Learn(a) => cmd_learn(a),
        Command::Experiment { kind, common } => cmd_experiment(kind.parse()?, &common),
        Command::Graphgen(a) => cmd_graphgen(a),
        Command::Oracle { common } => cmd_experiment(ExperimentKind::OracleSuite, &common),
        Command::Crosscheck(a) => cmd_crosscheck(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Assertion) => {
            eprintln!("assertion failed");
            ExitCode::from(2)
        }
    }
}
