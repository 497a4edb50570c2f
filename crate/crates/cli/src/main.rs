use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};

use equistop::engine::{self, EngineConfig, EngineError, Principle};
use equistop::examples::{self, Outcome};
use equistop::fuzz::{self, FuzzConfig};
use equistop::hyperbolic::{HyperbolicError, HyperbolicModel, McSettings};
use equistop::line::{self, AccumulatingFlow, LineProblem};
use equistop::model::{parse_model, Model};
use equistop::pref::PreferenceFlow;
use equistop::stopping::{self, StoppingTime, DEFAULT_ENUM_CAP};
use equistop::tree::NodeId;

/// Equilibrium stopping times for time-inconsistent stopping problems.
#[derive(Parser)]
#[command(name = "equistop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Engine {
    /// Tie-breaking when stopping now ties the best continuation.
    #[arg(long, default_value = "later")]
    principle: Principle,
    /// Largest number of stopping times enumerated at once.
    #[arg(long, default_value_t = DEFAULT_ENUM_CAP)]
    cap: u128,
    /// Iteration limit for the naive chain.
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
}

impl Engine {
    fn config(&self) -> EngineConfig {
        EngineConfig { principle: self.principle, enum_cap: self.cap, max_iter: self.max_iter, ..EngineConfig::default() }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve a model file; writes bis.csv, naive_chain.csv, sophisticated.csv and report.txt.
    Solve {
        model: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        engine: Engine,
        /// Skip the exhaustive cross-check of the equilibrium.
        #[arg(long)]
        no_bruteforce: bool,
    },
    /// Run the built-in regression suite.
    Examples {
        /// Run a single block: early-bis, horizon, counterexample or hyperbolic.
        #[arg(long)]
        only: Option<String>,
        #[arg(long, default_value = "later")]
        principle: Principle,
    },
    /// Check structural properties on random trees.
    Fuzz {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// Directory for the report and for failing models.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Invert one property so that every instance fails.
        #[arg(long, hide = true)]
        invert: bool,
    },
    /// Naive chain and approachability for the continuous-time counterexample.
    Counterexample {
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        base: f64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0.5)]
        peak: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Threshold equilibrium for |B| under hyperbolic discounting.
    Hyperbolic {
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        /// Monte Carlo paths per grid point; 0 skips the simulation.
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        workers: usize,
        /// Thresholds for the grid and for x*(a); defaults to a* and 2a*.
        #[arg(long = "a", value_delimiter = ',')]
        thresholds: Vec<f64>,
        /// Grid points in x per threshold.
        #[arg(long, default_value_t = 5)]
        grid: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Approachability of a user-supplied stop set.
    Check {
        model: PathBuf,
        /// Comma-separated node labels.
        #[arg(long, value_delimiter = ',', required = true)]
        stop_set: Vec<String>,
        #[command(flatten)]
        engine: Engine,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn model(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure { code: 1, message: format!("{e:#}") }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let code = if e.is_overflow() {
            3
        } else if matches!(e, EngineError::NotLeveled) {
            2
        } else {
            1
        };
        let message = if code == 3 { format!("overflow: {e}") } else { e.to_string() };
        Failure { code, message }
    }
}

impl From<HyperbolicError> for Failure {
    fn from(e: HyperbolicError) -> Self {
        Failure { code: 1, message: e.to_string() }
    }
}

type Run = Result<u8, Failure>;

fn load(path: &Path) -> Result<Model, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::model(format!("{}: {e}", path.display())))?;
    parse_model(&text).map_err(|e| Failure::model(format!("{}:{e}", path.display())))
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn solve(path: &Path, out: &Path, engine: &Engine, bruteforce: bool) -> Run {
    let m = load(path)?;
    let cfg = EngineConfig { principle: m.spec.principle.unwrap_or(engine.principle), ..engine.config() };
    let (t, flow) = (&m.tree, &m.flow);
    let b = engine::bis(t, flow, &cfg)?;
    let chain = engine::naive_chain(t, flow, &cfg)?;
    let mut report = String::new();
    writeln!(report, "principle = {}", cfg.principle).unwrap();
    writeln!(report, "nodes = {}", t.len()).unwrap();
    writeln!(report, "horizon = {}", t.horizon()).unwrap();

    let mut bis_csv = String::from("node_id,label,time,stops\n");
    for v in t.ids() {
        let stops: Vec<String> = b.local(v).iter().map(|s| s.to_string()).collect();
        writeln!(bis_csv, "{},{},{},{}", v, t.label(v), t.time(v), stops.join(" ")).unwrap();
    }
    let mut chain_csv = String::from("step,node_id,time,stopped\n");
    for (k, rho) in chain.elements.iter().enumerate() {
        for n in t.nodes() {
            writeln!(chain_csv, "{k},{},{},{}", n.id, n.time, u8::from(rho.contains(n.id))).unwrap();
        }
    }
    let root = t.root();
    let tau_b = b.root(t);
    writeln!(report, "tau_b_root = {}", tau_b.describe(t)).unwrap();
    writeln!(report, "J_tau_b_root = {}", flow.evaluate(t, &tau_b, root).map_err(EngineError::from)?).unwrap();
    writeln!(report, "chain_status = {}", chain.status).unwrap();
    writeln!(report, "chain_steps = {}", chain.steps()).unwrap();

    let mut code = 0;
    if chain.status == engine::ChainStatus::FixedPoint {
        let soph = engine::sophisticated(t, flow, &cfg)?;
        let delim = engine::delimiting_chain(t, flow, &cfg)?;
        writeln!(report, "tau_star = {}", soph.describe(t)).unwrap();
        writeln!(report, "J_tau_star = {}", flow.evaluate(t, &soph, root).map_err(EngineError::from)?).unwrap();
        let d: Vec<String> = delim.iter().map(|x| x.describe(t)).collect();
        writeln!(report, "delimiting = {}", d.join(" > ")).unwrap();
        if bruteforce {
            let brute = engine::sophisticated_bruteforce(t, flow, &cfg)?;
            let agree = brute == soph && delim.last() == Some(&soph);
            writeln!(report, "bruteforce_agrees = {agree}").unwrap();
            // Under `earlier` the iteration need not reach the maximal approachable time.
            if !agree && cfg.principle == Principle::Later {
                code = 1;
            }
        }
        write(out, "sophisticated.csv", &soph.to_csv(t))?;
    } else {
        writeln!(report, "tau_star = none").unwrap();
        code = 1;
    }
    write(out, "bis.csv", &bis_csv)?;
    write(out, "naive_chain.csv", &chain_csv)?;
    write(out, "report.txt", &report)?;
    print!("{report}");
    Ok(code)
}

fn run_examples(only: Option<&str>, principle: Principle) -> Run {
    let items = examples::run(only, principle).map_err(|e| Failure { code: 1, message: e })?;
    for i in &items {
        println!("{i}");
    }
    let failed = items.iter().filter(|i| i.outcome == Outcome::Fail).count();
    println!("{} items, {failed} failed", items.len());
    Ok(u8::from(failed > 0))
}

fn run_fuzz(seed: u64, n: usize, out: Option<&Path>, invert: bool) -> Run {
    let fc = FuzzConfig { seed, instances: n, invert, ..FuzzConfig::default() };
    let report = fuzz::run(&fc);
    let text = report.render();
    print!("{text}");
    if let Some(dir) = out {
        write(dir, "fuzz_report.txt", &text)?;
        for f in report.failures() {
            write(dir, &format!("fail_{:04}.model", f.index), &f.text)?;
        }
    }
    let failed = report.failures().count();
    Ok(u8::from(failed > 0))
}

fn counterexample(n: usize, flow: AccumulatingFlow, out: &Path) -> Run {
    let err = |e: line::LineError| Failure { code: 1, message: e.to_string() };
    let p = LineProblem::new(&flow);
    let chain = line::naive_chain_scalar(&p, n).map_err(err)?;
    let mut csv = String::from("n,rho_n,closed_form,abs_err\n");
    for (k, rho) in chain.values.iter().enumerate().skip(1) {
        let exact = flow.base + flow.scale / k as f64;
        writeln!(csv, "{k},{rho:.12},{exact:.12},{:.3e}", (rho - exact).abs()).unwrap();
    }
    let mut witness = String::from("tau,approachable,witness_t\n");
    let mut candidates: Vec<f64> = chain.values.iter().skip(1).take(5).copied().collect();
    candidates.extend([flow.base, flow.peak]);
    for tau in candidates {
        let a = line::is_approachable_scalar(&p, tau).map_err(err)?;
        let w = a.witness.map_or(String::new(), |w| format!("{w:.9}"));
        writeln!(witness, "{tau:.9},{},{w}", a.approachable).unwrap();
    }
    let soph = line::sophisticated_scalar(&p).map_err(err)?;
    write(out, "counterexample.csv", &csv)?;
    write(out, "witness.csv", &witness)?;
    print!("{csv}\n{witness}\nlimit = {:.9}\nsophisticated = {soph:.9}\n", chain.limit);
    Ok(0)
}

fn hyperbolic(beta: f64, tol: f64, mc: McSettings, thresholds: &[f64], grid: usize, out: &Path) -> Run {
    let m = HyperbolicModel::new(beta)?;
    let a_star = m.a_star(tol)?;
    let mut report = String::new();
    writeln!(report, "beta = {beta}").unwrap();
    writeln!(report, "a_star = {a_star:.10}").unwrap();
    writeln!(report, "a_star_sqrt_beta = {:.10}", a_star * beta.sqrt()).unwrap();
    let list = if thresholds.is_empty() { vec![a_star, 2.0 * a_star] } else { thresholds.to_vec() };
    let mut csv = String::from("x,a,eta,mc_mean,mc_se\n");
    for &a in &list {
        match m.x_star(a, a_star) {
            Ok(x) => writeln!(report, "x_star({a:.6}) = {x:.10}").unwrap(),
            Err(HyperbolicError::Domain { .. }) => writeln!(report, "x_star({a:.6}) = none").unwrap(),
            Err(e) => return Err(e.into()),
        }
        for i in 0..grid.max(1) {
            let x = a * i as f64 / grid.max(1) as f64;
            let eta = m.eta(x, a)?;
            let (mean, se) = if mc.paths == 0 {
                (String::new(), String::new())
            } else {
                let s = m.mc_eta(x, a, &mc)?;
                (format!("{:.8}", s.mean), format!("{:.3e}", s.se))
            };
            writeln!(csv, "{x:.8},{a:.8},{eta:.10},{mean},{se}").unwrap();
        }
    }
    if mc.paths != 0 {
        let policy = m.equilibrium_threshold(tol)?;
        let d = m.class_d_bound_check(policy, &mc)?;
        writeln!(report, "class_d_estimate = {:.8}", d.estimate).unwrap();
        writeln!(report, "class_d_se = {:.3e}", d.se).unwrap();
        writeln!(report, "class_d_bound = {:.8}", d.bound).unwrap();
        writeln!(report, "class_d_holds = {}", d.holds).unwrap();
    }
    write(out, "eta_grid.csv", &csv)?;
    write(out, "report.txt", &report)?;
    print!("{report}");
    Ok(0)
}

fn check(path: &Path, labels: &[String], engine: &Engine) -> Run {
    let m = load(path)?;
    let cfg = EngineConfig { principle: m.spec.principle.unwrap_or(engine.principle), ..engine.config() };
    let t = &m.tree;
    let mut nodes: Vec<NodeId> = Vec::new();
    for l in labels {
        let id = t.ids().find(|&v| t.label(v) == l).ok_or_else(|| Failure::model(format!("unknown node label {l:?}")))?;
        nodes.push(id);
    }
    let tau = StoppingTime::new(t, nodes).map_err(|e| Failure::model(format!("stop set: {e}")))?;
    let a = engine::is_approachable(t, &m.flow, &tau, &cfg)?;
    let image = engine::f_map(t, &m.flow, &tau, &cfg)?;
    println!("tau = {}", tau.describe(t));
    println!("approachable = {}", a.approachable);
    println!("f_tau = {}", image.describe(t));
    println!("below_equilibrium = {}", {
        let soph = engine::sophisticated(t, &m.flow, &cfg)?;
        stopping::le(t, &tau, &soph).map_err(EngineError::from)?
    });
    if let Some(w) = a.witness {
        println!("witness_node = {}", t.label(w.node));
        println!("witness_time = {}", t.time(w.node));
        println!("witness_immediate = {}", w.band.immediate);
        println!("witness_band_sup = {}", w.band.value);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve { model, out, engine, no_bruteforce } => solve(model, out, engine, !no_bruteforce),
        Command::Examples { only, principle } => run_examples(only.as_deref(), *principle),
        Command::Fuzz { seed, n, out, invert } => run_fuzz(*seed, *n, out.as_deref(), *invert),
        Command::Counterexample { n, base, scale, peak, out } => match AccumulatingFlow::new(*base, *scale, *peak) {
            Ok(flow) => counterexample(*n, flow, out),
            Err(e) => Err(Failure { code: 1, message: e.to_string() }),
        },
        Command::Hyperbolic { beta, tol, paths, dt, seed, workers, thresholds, grid, out } => {
            let mc = McSettings { paths: *paths, dt: *dt, seed: *seed, workers: *workers, ..McSettings::default() };
            hyperbolic(*beta, *tol, mc, thresholds, *grid, out)
        }
        Command::Check { model, stop_set, engine } => check(model, stop_set, engine),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
