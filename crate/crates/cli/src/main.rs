use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use siggm_core::bench::{self, BenchmarkConfig, ImportedMethod, RunOptions};
use siggm_core::io::{self, FitRecord, FORMAT_VERSION};
use siggm_core::model::{flatten_upper, partial_correlation, sample_covariance, upper_pairs, PrecisionEstimate, StructuralPrior};
use siggm_core::netmetrics::{self, BlockChiSquare, ConfusionCounts, GraphSummaries};
use siggm_core::siggm::{self, FitConfig, FitMode};
use siggm_core::simgen::{self, GraphKind, Scenario, SimulationSpec};
use siggm_core::{Error, Result};

#[derive(Parser)]
#[command(name = "siggm", version, about = "Structurally informed Gaussian graphical models")]
struct Cli {
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a BIC-selected network to a time-series CSV.
    Estimate(EstimateArgs),
    /// Generate a synthetic subject (omega_true.csv, sc.csv, timeseries.csv, meta.json).
    Simulate(SimulateArgs),
    /// Run the simulation benchmark described by a JSON config.
    Bench(BenchArgs),
    /// Score an estimate against a known precision matrix.
    Metrics(MetricsArgs),
    /// Test-retest reliability of graph summaries between two sessions.
    Icc(IccArgs),
    /// Differentially weighted edges between two groups, with a per-module breakdown.
    Dwe(DweArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Time series CSV, one row per time point.
    #[arg(long)]
    ts: PathBuf,
    /// Structural connectivity CSV; without it the SC-free model is fitted.
    #[arg(long)]
    sc: Option<PathBuf>,
    /// JSON fit configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Graph structure: er, sw or sf.
    #[arg(long)]
    structure: GraphKind,
    #[arg(long)]
    p: usize,
    #[arg(long, short = 't', default_value_t = 200)]
    t: usize,
    /// MI or MII.
    #[arg(long, default_value = "MI")]
    scenario: Scenario,
    /// Fraction of non-edges given nonzero SC.
    #[arg(long, default_value_t = 0.1)]
    misspec: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Re-read the written bundle and check its invariants.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON benchmark configuration; defaults are used for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the scenarios by a misspecification grid `start:stop:step`.
    #[arg(long)]
    sweep_misspec: Option<String>,
    /// Score external estimates: `name=dir` (repeatable).
    #[arg(long = "import")]
    imports: Vec<ImportedMethod>,
    /// Save every replicate's ground truth under this directory.
    #[arg(long)]
    save_data: Option<PathBuf>,
    /// Report path; `.txt` and `.csv` companions are written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// Estimate: a fit JSON or a precision-matrix CSV.
    #[arg(long)]
    estimate: PathBuf,
    /// Truth: a simulation directory or a precision-matrix CSV.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IccArgs {
    /// Directory of per-subject fit JSON files from the first session.
    #[arg(long)]
    session_a: PathBuf,
    /// Same subjects (matching file names) from the second session.
    #[arg(long)]
    session_b: PathBuf,
    /// Pair subjects at random between sessions (a null reference).
    #[arg(long)]
    shuffle: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DweArgs {
    /// Directory of fit JSON files for group A.
    #[arg(long)]
    group_a: PathBuf,
    #[arg(long)]
    group_b: PathBuf,
    /// One module label per node (`label` or `node,label` rows).
    #[arg(long)]
    modules: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n_perm: usize,
    /// FDR level.
    #[arg(long, default_value_t = 0.05)]
    q: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    if !matches!(cli.command, Command::Bench(_)) {
        // only the benchmark runs in parallel
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let result = match cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Simulate(a) => simulate(a),
        Command::Bench(a) => run_bench(a),
        Command::Metrics(a) => metrics(a),
        Command::Icc(a) => icc(a),
        Command::Dwe(a) => dwe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for problems with the caller's inputs, 1 for everything else.
fn exit_code(e: &Error) -> u8 {
    if e.is_input() || matches!(e, Error::Domain(_)) {
        2
    } else {
        1
    }
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let mut cfg: FitConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => FitConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let ts = io::read_timeseries(&a.ts)?;
    let p = ts.n_regions();
    let prior = match &a.sc {
        Some(path) => {
            let prior = io::read_structural_prior(path)?;
            if prior.dim() != p {
                return Err(Error::input(format!(
                    "{}: SC is {}x{} but {} has {p} regions",
                    path.display(),
                    prior.dim(),
                    prior.dim(),
                    a.ts.display()
                )));
            }
            prior
        }
        None => {
            cfg.mode = FitMode::EtaZero;
            StructuralPrior::zeros(p)
        }
    };
    let s = sample_covariance(&ts, true);
    let start = Instant::now();
    let path = siggm::fit_path(&s, &prior, &cfg)?;
    let wall = start.elapsed().as_secs_f64();
    let best = path.best();
    info!(
        "selected nu {:.4e} ({} edges, {} outer iterations) in {wall:.1}s",
        best.nu(),
        best.omega.n_edges(),
        best.n_iter
    );
    if !best.converged {
        warn!("selected fit stopped at max_outer without meeting epsilon");
    }
    let record = FitRecord::new(best, &cfg, ts.region_labels().map(<[String]>::to_vec), wall)?;
    io::write_fit(&a.out, &record)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let spec = SimulationSpec {
        structure: a.structure,
        p: a.p,
        t: a.t,
        scenario: a.scenario,
        misspec_frac: a.misspec,
        seed: a.seed,
    };
    let truth = simgen::generate(&spec)?;
    io::write_bundle(&a.out, &spec, &truth)?;
    info!("wrote {} ({} edges)", a.out.display(), truth.graph.len());
    if a.verify {
        let (_, back) = io::read_bundle(&a.out)?;
        let problems = simgen::verify(&back, Some(spec.misspec_frac));
        if !problems.is_empty() {
            return Err(Error::Internal(format!("bundle failed verification: {}", problems.join("; "))));
        }
        println!("verified {}", a.out.display());
    }
    Ok(())
}

fn run_bench(a: BenchArgs) -> Result<()> {
    let mut cfg: BenchmarkConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => BenchmarkConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.master_seed = seed;
    }
    let opts = RunOptions {
        imports: a.imports,
        save_data: a.save_data,
        threads: None,
    };
    let report = match &a.sweep_misspec {
        Some(spec) => bench::sweep_misspec(&cfg, &bench::parse_sweep(spec)?, &opts)?,
        None => bench::run_benchmark(&cfg, &opts)?,
    };
    bench::write_report(&a.out, &report)?;
    let mut csv_path = a.out.as_os_str().to_owned();
    csv_path.push(".csv");
    io::write_atomic(Path::new(&csv_path), &bench::report_csv(&report)?)?;
    stdout(&bench::render_table(&report))
}

/// Fit JSON or precision CSV.
fn read_precision(path: &Path) -> Result<PrecisionEstimate> {
    let is_json = path.extension().is_some_and(|e| e == "json");
    let m = if is_json {
        io::read_fit(path)?.omega_matrix()?
    } else {
        io::read_matrix_csv(path)?.0
    };
    PrecisionEstimate::new(m).map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct MetricsReport {
    format_version: String,
    p: usize,
    n_edges_estimate: usize,
    n_edges_truth: usize,
    confusion: ConfusionCounts,
    sensitivity: f64,
    specificity: f64,
    mcc: f64,
    rel_l1: f64,
    eglob_estimate: f64,
    eglob_truth: f64,
    eglob_bias: f64,
    summaries_estimate: GraphSummaries,
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let est = read_precision(&a.estimate)?;
    let truth = if a.truth.is_dir() {
        io::read_bundle(&a.truth)?.1.omega_true
    } else {
        read_precision(&a.truth)?
    };
    let p = est.dim();
    if truth.dim() != p {
        return Err(Error::input(format!("estimate has {p} nodes but truth has {}", truth.dim())));
    }
    let c = netmetrics::confusion(est.edge_set(), truth.edge_set(), p);
    let eglob_estimate = netmetrics::global_efficiency(est.edge_set(), p)?;
    let eglob_truth = netmetrics::global_efficiency(truth.edge_set(), p)?;
    let report = MetricsReport {
        format_version: FORMAT_VERSION.to_string(),
        p,
        n_edges_estimate: est.n_edges(),
        n_edges_truth: truth.n_edges(),
        sensitivity: c.sensitivity(),
        specificity: c.specificity(),
        mcc: netmetrics::mcc(&c),
        confusion: c,
        rel_l1: netmetrics::rel_l1_error(est.matrix(), truth.matrix())?,
        eglob_estimate,
        eglob_truth,
        eglob_bias: eglob_estimate - eglob_truth,
        summaries_estimate: netmetrics::graph_summaries(est.edge_set(), p)?,
    };
    emit(&report, a.out.as_deref())
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => io::write_json(path, value),
        None => {
            let mut text = serde_json::to_string_pretty(value)?;
            text.push('\n');
            stdout(&text)
        }
    }
}

/// Writes to stdout, treating a closed pipe as success.
fn stdout(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Fit files keyed by file name.
fn read_fit_dir(dir: &Path) -> Result<BTreeMap<String, FitRecord>> {
    let mut fits = BTreeMap::new();
    for path in io::list_json(dir)? {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        fits.insert(name, io::read_fit(&path)?);
    }
    if fits.is_empty() {
        return Err(Error::input(format!("{}: no fit JSON files", dir.display())));
    }
    Ok(fits)
}

#[derive(Serialize)]
struct IccRow {
    metric: &'static str,
    /// `None` when the ICC is undefined (no between-subject variance).
    icc: Option<f64>,
    label: String,
    n_subjects: usize,
}

#[derive(Serialize)]
struct IccReport {
    format_version: String,
    shuffled: bool,
    subjects: Vec<String>,
    rows: Vec<IccRow>,
}

fn icc(a: IccArgs) -> Result<()> {
    let sa = read_fit_dir(&a.session_a)?;
    let sb = read_fit_dir(&a.session_b)?;
    let unmatched: Vec<&String> = sa.keys().filter(|k| !sb.contains_key(*k)).chain(sb.keys().filter(|k| !sa.contains_key(*k))).collect();
    if !unmatched.is_empty() {
        let names: Vec<&str> = unmatched.iter().map(|s| s.as_str()).collect();
        return Err(Error::input(format!("subjects present in only one session: {}", names.join(", "))));
    }
    let subjects: Vec<String> = sa.keys().cloned().collect();
    let summaries = |r: &FitRecord| -> Result<[f64; 5]> {
        let est = r.precision()?;
        Ok(netmetrics::graph_summaries(est.edge_set(), est.dim())?.values())
    };
    let va: Vec<[f64; 5]> = subjects.iter().map(|s| summaries(&sa[s])).collect::<Result<_>>()?;
    let mut vb: Vec<[f64; 5]> = subjects.iter().map(|s| summaries(&sb[s])).collect::<Result<_>>()?;
    if a.shuffle {
        vb.shuffle(&mut ChaCha8Rng::seed_from_u64(a.seed));
    }
    let n = subjects.len();
    let mut rows = Vec::new();
    for (m, metric) in GraphSummaries::NAMES.into_iter().enumerate() {
        let table = DMatrix::from_fn(n, 2, |i, j| if j == 0 { va[i][m] } else { vb[i][m] });
        let (icc, label) = match netmetrics::icc31(&table) {
            Ok(r) => (Some(r.icc), r.label.label().to_string()),
            Err(Error::Domain(msg)) => {
                warn!("{metric}: {msg}");
                (None, "undefined".to_string())
            }
            Err(e) => return Err(e),
        };
        rows.push(IccRow {
            metric,
            icc,
            label,
            n_subjects: n,
        });
    }
    let report = IccReport {
        format_version: FORMAT_VERSION.to_string(),
        shuffled: a.shuffle,
        subjects,
        rows,
    };
    for r in &report.rows {
        eprintln!(
            "{:<18} {:>8} {}",
            r.metric,
            r.icc.map_or("-".to_string(), |v| format!("{v:.3}")),
            r.label
        );
    }
    emit(&report, a.out.as_deref())
}

#[derive(Serialize)]
struct DweEdge {
    j: usize,
    k: usize,
    statistic: f64,
    p_value: f64,
}

#[derive(Serialize)]
struct DweReport {
    format_version: String,
    n_a: usize,
    n_b: usize,
    p: usize,
    n_perm: usize,
    q: f64,
    n_significant: usize,
    n_modules: usize,
    significant_edges: Vec<DweEdge>,
    blocks: Vec<BlockChiSquare>,
}

/// Upper-triangular partial correlations of every fit in `dir`.
fn fc_vectors(dir: &Path) -> Result<(usize, Vec<Vec<f64>>)> {
    let mut p = None;
    let mut rows = Vec::new();
    for (name, rec) in read_fit_dir(dir)? {
        let est = rec.precision()?;
        match p {
            None => p = Some(est.dim()),
            Some(q) if q != est.dim() => {
                return Err(Error::input(format!(
                    "{}/{name}: {} nodes, expected {q}",
                    dir.display(),
                    est.dim()
                )))
            }
            _ => {}
        }
        rows.push(flatten_upper(&partial_correlation(&est)?));
    }
    Ok((p.expect("read_fit_dir returns at least one fit"), rows))
}

fn dwe(a: DweArgs) -> Result<()> {
    let (pa, ga) = fc_vectors(&a.group_a)?;
    let (pb, gb) = fc_vectors(&a.group_b)?;
    if pa != pb {
        return Err(Error::input(format!("group A has {pa} nodes, group B has {pb}")));
    }
    let modules = io::read_modules(&a.modules)?;
    if modules.n_nodes() != pa {
        return Err(Error::input(format!(
            "{}: {} module labels for {pa} nodes",
            a.modules.display(),
            modules.n_nodes()
        )));
    }
    let res = netmetrics::dwe_test(&ga, &gb, a.n_perm, a.q, a.seed)?;
    let blocks = netmetrics::module_chi_square(&res.significant, &modules, a.n_perm, simgen::stream_seed(a.seed, 1))?;
    let significant_edges = upper_pairs(pa)
        .enumerate()
        .filter(|(i, _)| res.significant[*i])
        .map(|(i, (j, k))| DweEdge {
            j,
            k,
            statistic: res.statistic[i],
            p_value: res.p_values[i],
        })
        .collect();
    let report = DweReport {
        format_version: FORMAT_VERSION.to_string(),
        n_a: ga.len(),
        n_b: gb.len(),
        p: pa,
        n_perm: a.n_perm,
        q: a.q,
        n_significant: res.n_significant(),
        n_modules: modules.n_modules(),
        significant_edges,
        blocks,
    };
    io::write_json(&a.out, &report)?;
    let table = render_blocks(&report);
    let mut txt = a.out.as_os_str().to_owned();
    txt.push(".txt");
    io::write_atomic(Path::new(&txt), table.as_bytes())?;
    stdout(&table)
}

/// Lower-triangular module table: DWE count and X² (p-value) per block.
fn render_blocks(r: &DweReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} DWEs over {} modules", r.n_significant, r.n_modules);
    let _ = write!(out, "{:>4}", "");
    for g in 1..=r.n_modules {
        let _ = write!(out, " {:>22}", format!("M{g}"));
    }
    out.push('\n');
    for g1 in 1..=r.n_modules {
        let _ = write!(out, "{:>4}", format!("M{g1}"));
        for b in r.blocks.iter().filter(|b| b.g1 == g1) {
            let _ = write!(out, " {:>22}", format!("{} {:.2} ({:.3})", b.q, b.x2, b.p_value));
        }
        out.push('\n');
    }
    out
}
