use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use ttmep::delta::{build_delta0, build_delta_i, DELTA_ROUND_TOL};
use ttmep::dense::RitzRule;
use ttmep::problem::{generate_random_mep, oracle_eigenvalues, shift_positive, GeneratedProblem, MEProblem};
use ttmep::solver::{solve, write_vector_sidecar, RunReport, SolverConfig};
use ttmep::tt::write_operator;
use ttmep::Error;

#[derive(Parser)]
#[command(name = "ttmep", version, about = "Tensor-train subspace solver for multiparameter eigenvalue problems")]
struct Cli {
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random problem with known spectrum.
    Generate {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Shift λ_m so that the whole spectrum lies at or above 1.
        #[arg(long)]
        positive: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the Δ-operators and write them as TT operator files.
    Delta {
        #[arg(long)]
        problem: PathBuf,
        #[command(flatten)]
        rounding: Rounding,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the sweep solver.
    Solve {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        target: f64,
        #[command(flatten)]
        solver: SolverArgs,
        /// Output prefix for `.report.json`, `.tuples.csv` and `.vectors.tt`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Enumerate the exact spectrum of a generated problem.
    Oracle {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        target: f64,
        #[arg(long, default_value_t = 20)]
        how_many: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match a solve report against an oracle table.
    Compare {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        oracle: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Leading oracle rows counted as wanted.
        #[arg(long, default_value_t = 20)]
        wanted: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the solver phases over a range of m or n, with and without Δ rounding.
    Bench {
        /// `lo:hi[:step]`, with `--n` fixed.
        #[arg(long, conflicts_with = "n_range", required_unless_present = "n_range")]
        m_range: Option<String>,
        /// `lo:hi[:step]`, with `--m` fixed.
        #[arg(long)]
        n_range: Option<String>,
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        sweeps: usize,
        #[arg(long, default_value_t = 5)]
        b: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Copy)]
struct Rounding {
    /// Rounding tolerance for the Δ-operators.
    #[arg(long, default_value_t = DELTA_ROUND_TOL)]
    round_tol: f64,
    /// Keep the Δ-operators at full rank.
    #[arg(long)]
    no_round: bool,
}

impl Rounding {
    fn tol(self) -> Option<f64> {
        (!self.no_round).then_some(self.round_tol)
    }
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    kick: Option<usize>,
    /// Defaults to b + 1.
    #[arg(long)]
    max_rank: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    cos_threshold: Option<f64>,
    #[arg(long)]
    keep: Option<usize>,
    #[arg(long)]
    ritz_rule: Option<RitzRule>,
    #[command(flatten)]
    rounding: Rounding,
}

fn set<T>(dst: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *dst = v;
    }
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        let mut c = SolverConfig::with_block_size(self.b.unwrap_or(SolverConfig::default().b));
        set(&mut c.seed, self.seed);
        set(&mut c.sweeps, self.sweeps);
        set(&mut c.kick, self.kick);
        set(&mut c.max_rank, self.max_rank);
        set(&mut c.eps, self.eps);
        set(&mut c.eps1, self.eps1);
        set(&mut c.xi, self.xi);
        set(&mut c.cos_threshold, self.cos_threshold);
        set(&mut c.ritz_rule, self.ritz_rule);
        c.keep = self.keep;
        c.delta_round_tol = self.rounding.tol();
        c
    }
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::CapExceeded { .. } => 4,
            Error::NonFinite(_)
            | Error::SingularPencil(_)
            | Error::Singular { .. }
            | Error::Lapack(_)
            | Error::Boundary { .. } => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 2, message: e.to_string() }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure { code: 2, message: e.to_string() }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure { code: 2, message: e.to_string() }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

type Outcome = std::result::Result<(), Failure>;

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn print_json<T: Serialize>(value: &T) -> Outcome {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn load_generated(path: &Path) -> std::result::Result<GeneratedProblem, Failure> {
    let (problem, meta) = MEProblem::read_json(path)?;
    let meta = meta.ok_or_else(|| invalid(format!("{} carries no generator metadata", path.display())))?;
    Ok(GeneratedProblem::from_meta(problem, &meta)?)
}

fn cmd_generate(m: usize, n: usize, seed: u64, positive: bool, out: &Path) -> Outcome {
    let mut g = generate_random_mep(m, n, seed)?;
    let mut eta = 0.0;
    if positive {
        (g, eta) = shift_positive(&g)?;
    }
    g.problem.to_file(Some(g.meta())).write_json(out)?;
    print_json(&serde_json::json!({ "m": m, "n": n, "seed": seed, "shift": eta, "path": out }))
}

fn cmd_delta(problem: &Path, rounding: Rounding, out: &Path) -> Outcome {
    let (prob, _) = MEProblem::read_json(problem)?;
    std::fs::create_dir_all(out)?;
    let mut ranks = serde_json::Map::new();
    for i in 0..=prob.m() {
        let op = if i == 0 { build_delta0(&prob, rounding.tol())? } else { build_delta_i(&prob, i, rounding.tol())? };
        let mut w = BufWriter::new(File::create(out.join(format!("delta{i}.tt")))?);
        write_operator(&mut w, &op)?;
        w.flush()?;
        ranks.insert(format!("delta{i}"), serde_json::json!(op.ranks()));
    }
    print_json(&ranks)
}

fn cmd_solve(problem: &Path, target: f64, args: &SolverArgs, out: &Path) -> Outcome {
    let (prob, _) = MEProblem::read_json(problem)?;
    let config = args.config();
    let result = solve(&prob, target, &config)?;
    let report = &result.report;
    std::fs::write(with_suffix(out, ".report.json"), serde_json::to_vec_pretty(report)?)?;
    let mut csv = csv::Writer::from_path(with_suffix(out, ".tuples.csv"))?;
    csv.write_record(["rank_index", "lambda_m_real", "lambda_m_imag", "residual", "found_flag"])?;
    for (i, t) in result.tuples.iter().enumerate() {
        let l = t.lambda_m();
        csv.write_record([i.to_string(), l.re.to_string(), l.im.to_string(), t.residual.to_string(), "1".into()])?;
    }
    csv.flush()?;
    let mut w = BufWriter::new(File::create(with_suffix(out, ".vectors.tt"))?);
    write_vector_sidecar(&mut w, &result.tuples)?;
    w.flush()?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    print_json(&serde_json::json!({
        "found": result.tuples.len(),
        "sweeps": report.sweeps.len(),
        "stop_reason": report.stop_reason,
        "total_ms": report.total_ms,
    }))
}

fn cmd_oracle(problem: &Path, target: f64, how_many: usize, out: &Path) -> Outcome {
    let g = load_generated(problem)?;
    let result = oracle_eigenvalues(&g, how_many, target)?;
    let mut csv = csv::Writer::from_path(out)?;
    let mut header = vec!["rank_index".to_string(), "multi_index".to_string()];
    header.extend((1..=g.m()).map(|j| format!("lambda_{j}")));
    csv.write_record(&header)?;
    for (r, t) in result.tuples.iter().enumerate() {
        let index: Vec<String> = t.index.iter().map(|i| i.to_string()).collect();
        let mut row = vec![r.to_string(), index.join(";")];
        row.extend(t.lambda.iter().map(|l| l.to_string()));
        csv.write_record(&row)?;
    }
    csv.flush()?;
    print_json(&serde_json::json!({
        "enumerated": result.enumerated.to_string(),
        "skipped_singular": result.skipped,
        "written": result.tuples.len(),
    }))
}

#[derive(Debug, Serialize, PartialEq)]
struct CompareSummary {
    wanted_considered: usize,
    found_among_wanted: usize,
    spurious: usize,
}

fn cmd_compare(report: &Path, oracle: &Path, tol: f64, wanted: usize, out: &Path) -> Outcome {
    let report: RunReport = serde_json::from_slice(&std::fs::read(report)?)?;
    let mut rd = csv::Reader::from_path(oracle)?;
    let col = rd
        .headers()?
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("lambda_"))
        .map(|(i, _)| i)
        .last()
        .ok_or_else(|| invalid("oracle table has no lambda columns"))?;
    let mut exact = Vec::new();
    for row in rd.records() {
        let row = row?;
        let v: f64 = row[col].parse().map_err(|_| invalid(format!("bad oracle value '{}'", &row[col])))?;
        exact.push(v);
    }
    let found: Vec<(f64, f64)> = report.tuples.iter().map(|t| (t.lambda[t.lambda.len() - 1][0], t.lambda[t.lambda.len() - 1][1])).collect();
    let close = |f: &(f64, f64), o: f64| ((f.0 - o).powi(2) + f.1.powi(2)).sqrt() <= tol;
    let considered = wanted.min(exact.len());
    let mut csv = csv::Writer::from_path(out)?;
    csv.write_record(["rank_index", "oracle_lambda_m", "found_flag"])?;
    let mut hits = 0;
    for (r, &o) in exact.iter().take(considered).enumerate() {
        let flag = found.iter().any(|f| close(f, o));
        hits += flag as usize;
        csv.write_record([r.to_string(), o.to_string(), (flag as u8).to_string()])?;
    }
    csv.flush()?;
    let spurious = found.iter().filter(|f| !exact.iter().any(|&o| close(f, o))).count();
    print_json(&CompareSummary { wanted_considered: considered, found_among_wanted: hits, spurious })
}

fn parse_range(s: &str) -> std::result::Result<Vec<usize>, Failure> {
    let parts: Vec<usize> = s
        .split(':')
        .map(|p| p.trim().parse::<usize>().map_err(|_| invalid(format!("bad range '{s}'"))))
        .collect::<std::result::Result<_, _>>()?;
    let (lo, hi, step) = match parts[..] {
        [lo, hi] => (lo, hi, 1),
        [lo, hi, step] if step > 0 => (lo, hi, step),
        _ => return Err(invalid(format!("range '{s}' is not lo:hi[:step]"))),
    };
    if lo > hi {
        return Err(invalid(format!("empty range '{s}'")));
    }
    Ok((lo..=hi).step_by(step).collect())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    m_range: Option<&str>,
    n_range: Option<&str>,
    m: usize,
    n: usize,
    seed: u64,
    sweeps: usize,
    b: usize,
    out: &Path,
) -> Outcome {
    let (param, values) = match (m_range, n_range) {
        (Some(r), None) => ("m", parse_range(r)?),
        (None, Some(r)) => ("n", parse_range(r)?),
        _ => return Err(invalid("give exactly one of --m-range and --n-range")),
    };
    let mut csv = csv::Writer::from_path(out)?;
    csv.write_record(["param", "value", "phase", "rounded", "seconds"])?;
    for &v in &values {
        let (mm, nn) = if param == "m" { (v, n) } else { (m, v) };
        let g = generate_random_mep(mm, nn, seed)?;
        let mut projection = [0.0; 2];
        for (slot, rounded) in [(0, true), (1, false)] {
            let config = SolverConfig {
                sweeps,
                seed,
                delta_round_tol: rounded.then_some(DELTA_ROUND_TOL),
                ..SolverConfig::with_block_size(b)
            };
            let t = Instant::now();
            let r = solve(&g.problem, 0.0, &config)?.report;
            let total = t.elapsed().as_secs_f64();
            projection[slot] = r.totals.project_ms;
            let phases = [
                ("projection", r.totals.project_ms / 1e3),
                ("eigensolve", r.totals.eig_ms / 1e3),
                ("selection", r.totals.select_ms / 1e3),
                ("update", r.totals.update_ms / 1e3),
                ("total", total),
            ];
            for (phase, secs) in phases {
                csv.write_record([param, &v.to_string(), phase, &rounded.to_string(), &format!("{secs:.6}")])?;
            }
        }
        if mm >= 8 && projection[0] > projection[1] {
            eprintln!("warning: rounded Δ projection slower than unrounded at m = {mm}");
        }
    }
    csv.flush()?;
    print_json(&serde_json::json!({ "param": param, "values": values, "path": out }))
}

fn run(cli: Cli) -> Outcome {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .map_err(|e| invalid(e.to_string()))?;
    }
    match cli.command {
        Command::Generate { m, n, seed, positive, out } => cmd_generate(m, n, seed, positive, &out),
        Command::Delta { problem, rounding, out } => cmd_delta(&problem, rounding, &out),
        Command::Solve { problem, target, solver, out } => cmd_solve(&problem, target, &solver, &out),
        Command::Oracle { problem, target, how_many, out } => cmd_oracle(&problem, target, how_many, &out),
        Command::Compare { report, oracle, tol, wanted, out } => cmd_compare(&report, &oracle, tol, wanted, &out),
        Command::Bench { m_range, n_range, m, n, seed, sweeps, b, out } => {
            cmd_bench(m_range.as_deref(), n_range.as_deref(), m, n, seed, sweeps, b, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
