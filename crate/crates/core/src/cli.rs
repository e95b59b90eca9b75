//! Command-line front end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{crack_scenario, wheelrail_scenario, CrackParams, Mode, Scenario, WheelRailParams};
use crate::sim::{march, offline, RunSummary};

#[derive(Debug, Parser)]
#[command(name = "contactrom", version, about = "Dynamic contact with Craig-Bampton model reduction")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a reference scenario (TOML + mesh).
    #[command(subcommand)]
    Gen(GenCommand),
    /// Run a scenario and write the trajectory CSV and a JSON summary.
    Run(RunArgs),
    /// Build the reduced model only and write it as a sidecar file.
    Reduce(ReduceArgs),
    /// Compare two trajectory CSVs.
    Compare(CompareArgs),
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Torn unit square.
    Crack(GenCrackArgs),
    /// Half wheel on a rail block.
    Wheelrail(GenWheelRailArgs),
}

#[derive(Debug, Args)]
pub struct GenCrackArgs {
    /// Cells per side.
    #[arg(long, default_value_t = 40)]
    pub n: usize,
    /// Crack length in cells (default 30 % of the side).
    #[arg(long)]
    pub crack_cells: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub h: f64,
    #[arg(long, default_value_t = 20.0)]
    pub t_end: f64,
    #[arg(long, value_enum, default_value_t = Mode::Full)]
    pub mode: Mode,
    #[arg(long, default_value_t = 3)]
    pub krylov: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenWheelRailArgs {
    #[arg(long, default_value_t = 24)]
    pub rail_nx: usize,
    #[arg(long, default_value_t = 6)]
    pub rail_ny: usize,
    #[arg(long, default_value_t = 40)]
    pub wheel_nt: usize,
    #[arg(long, default_value_t = 6)]
    pub wheel_nr: usize,
    #[arg(long, default_value_t = 2.5e-3)]
    pub h: f64,
    #[arg(long, default_value_t = 0.5)]
    pub t_end: f64,
    #[arg(long, value_enum, default_value_t = Mode::Full)]
    pub mode: Mode,
    #[arg(long, default_value_t = 3)]
    pub krylov: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario's reduction mode.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::ReducedCb)]
    pub mode: Mode,
    /// Sidecar path (default `<name>_<mode>.rom` in the current directory,
    /// e.g. `crack_rom_cb.rom`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Reference trajectory.
    pub a: PathBuf,
    pub b: PathBuf,
    /// Per-column error table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Exit status for an error: 1 for solver failures, 2 for input problems.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Step { .. }
        | Error::NcpNotConverged { .. }
        | Error::Lcp(_)
        | Error::Indefinite { .. }
        | Error::IndefiniteAtMultiplier { .. }
        | Error::EmptyKrylovSeed => 1,
        _ => 2,
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

fn init_threads() {
    if let Some(n) = std::env::var("CONTACTROM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parses `args` (program name first), runs the command, returns the exit
/// status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    init_threads();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Gen(GenCommand::Crack(a)) => {
            let mut p = CrackParams::square(a.n);
            if let Some(c) = a.crack_cells {
                p.crack_cells = c;
            }
            p.h = a.h;
            p.t_end = a.t_end;
            p.mode = a.mode;
            p.krylov = a.krylov;
            let path = crack_scenario(&p)?.save(&a.out, "crack")?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::Gen(GenCommand::Wheelrail(a)) => {
            let p = WheelRailParams {
                rail_nx: a.rail_nx,
                rail_ny: a.rail_ny,
                wheel_nt: a.wheel_nt,
                wheel_nr: a.wheel_nr,
                h: a.h,
                t_end: a.t_end,
                mode: a.mode,
                krylov: a.krylov,
                ..WheelRailParams::default()
            };
            let path = wheelrail_scenario(&p)?.save(&a.out, "wheelrail")?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::Run(a) => cmd_run(&a),
        Command::Reduce(a) => {
            let s = Scenario::load(&a.scenario)?;
            if a.mode == Mode::Full {
                return Err(Error::Scenario("reduce needs a reduced mode".into()));
            }
            let off = offline(&s, a.mode)?;
            let rm = off.reduced.expect("reduced mode builds a model");
            let path = a
                .out
                .unwrap_or_else(|| artifact_paths(Path::new("."), s.name(), a.mode).sidecar.unwrap());
            rm.save(&path)?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::Compare(a) => {
            let report = compare_files(&a.a, &a.b)?;
            if let Some(p) = &a.csv {
                std::fs::write(p, report.to_csv()).map_err(|e| Error::io(p, e))?;
            }
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Ok(0)
        }
    }
}

/// Paths of the artifacts of one run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub sidecar: Option<PathBuf>,
}

pub fn artifact_paths(out: &Path, name: &str, mode: Mode) -> RunArtifacts {
    let stem = format!("{name}_{}", mode.as_str().replace('-', "_"));
    RunArtifacts {
        csv: out.join(format!("{stem}.csv")),
        summary: out.join(format!("{stem}.summary.json")),
        sidecar: (mode != Mode::Full).then(|| out.join(format!("{stem}.rom"))),
    }
}

fn cmd_run(a: &RunArgs) -> Result<i32> {
    let mut s = Scenario::load(&a.scenario)?;
    let mode = a.mode.unwrap_or(s.config.reduction.mode);
    s.config.reduction.mode = mode;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let paths = artifact_paths(&a.out, s.name(), mode);
    let off = offline(&s, mode)?;
    if let (Some(p), Some(rm)) = (&paths.sidecar, &off.reduced) {
        // model for the scenario's initial pairing
        rm.save(p)?;
    }
    let (traj, failure) = march(&s, off)?;
    traj.write_csv(&paths.csv)?;
    let summary: RunSummary = traj.summary(&s, failure.as_ref());
    let text = serde_json::to_string_pretty(&summary).unwrap();
    std::fs::write(&paths.summary, text + "\n").map_err(|e| Error::io(&paths.summary, e))?;
    println!("{}", paths.csv.display());
    match failure {
        None => Ok(0),
        Some(e) => Err(e),
    }
}

/// A trajectory CSV read back.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty trajectory file"))?
            .split(',')
            .map(str::to_string)
            .collect();
        if header.first().map(String::as_str) != Some("t") {
            return Err(Error::parse(1, "first column must be t"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(i + 2, e.to_string()))?;
            if row.len() != header.len() {
                return Err(Error::parse(i + 2, format!("{} fields, header has {}", row.len(), header.len())));
            }
            rows.push(row);
        }
        Ok(TrajectoryTable { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Sensor node ids from the `ux_<n>` columns.
    pub fn sensors(&self) -> Vec<String> {
        self.header
            .iter()
            .filter_map(|h| h.strip_prefix("ux_").map(str::to_string))
            .collect()
    }

    /// Complementarity of the contact-sensor trace.
    pub fn complementarity_holds(&self) -> bool {
        let (Some(g), Some(p)) = (self.column("g_CN"), self.column("p_CN")) else {
            return true;
        };
        g.iter().zip(&p).all(|(&g, &p)| {
            if g.is_nan() && p.is_nan() {
                return true;
            }
            let eps = 1e-8 * (1.0 + p.abs()) * (1.0 + g.abs());
            p >= 0.0 && g >= -eps && (p * g).abs() <= eps
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorError {
    pub node: String,
    /// `max_i |u_B - u_A| / max_i |u_A|`
    pub max_rel: f64,
    /// `|u_B - u_A|_2 / |u_A|_2` over all steps
    pub l2_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarError {
    pub max_abs: f64,
    pub l2_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnError {
    pub column: String,
    pub max_abs: f64,
    pub l2_abs: f64,
    pub l2_rel: f64,
}

/// Errors of trajectory B against reference A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a: String,
    pub b: String,
    pub steps: usize,
    pub sensors: Vec<SensorError>,
    pub gap: Option<ScalarError>,
    pub pressure: Option<ScalarError>,
    pub iterations_a: BTreeMap<usize, usize>,
    pub iterations_b: BTreeMap<usize, usize>,
    /// Online wall-clock of A over that of B, from the run summaries.
    pub speedup: Option<f64>,
    pub complementarity_a: bool,
    pub complementarity_b: bool,
    pub columns: Vec<ColumnError>,
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("column,max_abs,l2_abs,l2_rel\n");
        for c in &self.columns {
            out.push_str(&format!("{},{},{},{}\n", c.column, c.max_abs, c.l2_abs, c.l2_rel));
        }
        out
    }
}

fn rel(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

fn finite_pairs<'a>(a: &'a [f64], b: &'a [f64]) -> impl Iterator<Item = (f64, f64)> + 'a {
    a.iter().zip(b).filter(|(x, y)| !x.is_nan() || !y.is_nan()).map(|(&x, &y)| (x, y))
}

fn scalar_error(a: &[f64], b: &[f64]) -> ScalarError {
    let max_abs = finite_pairs(a, b).map(|(x, y)| (y - x).abs()).fold(0.0, f64::max);
    let num = finite_pairs(a, b).map(|(x, y)| (y - x).powi(2)).sum::<f64>().sqrt();
    let den = finite_pairs(a, b).map(|(x, _)| x * x).sum::<f64>().sqrt();
    ScalarError {
        max_abs,
        l2_rel: rel(num, den),
    }
}

fn histogram(t: &TrajectoryTable) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    // bootstrap points carry 0 iterations
    for v in t.column("ncp_iterations").unwrap_or_default().into_iter().skip(2) {
        *h.entry(v as usize).or_insert(0) += 1;
    }
    h
}

fn summary_path(csv: &Path) -> PathBuf {
    csv.with_extension("summary.json")
}

fn online_seconds(csv: &Path) -> Option<f64> {
    let text = std::fs::read_to_string(summary_path(csv)).ok()?;
    serde_json::from_str::<RunSummary>(&text).ok().map(|s| s.online_seconds)
}

pub fn compare(a: &TrajectoryTable, b: &TrajectoryTable) -> Result<ComparisonReport> {
    if a.sensors() != b.sensors() {
        return Err(Error::Trajectory(format!(
            "sensor sets differ: {:?} vs {:?}",
            a.sensors(),
            b.sensors()
        )));
    }
    let n = a.rows.len().min(b.rows.len());
    for i in 0..n {
        let (ta, tb) = (a.rows[i][0], b.rows[i][0]);
        if (ta - tb).abs() > 1e-12 * (1.0 + ta.abs()) {
            return Err(Error::Trajectory(format!("time grids diverge at t = {ta} (other: {tb})")));
        }
    }
    if a.rows.len() != b.rows.len() {
        let t = if a.rows.len() > n { a.rows[n][0] } else { b.rows[n][0] };
        return Err(Error::Trajectory(format!(
            "time grids diverge at t = {t}: {} vs {} steps",
            a.rows.len(),
            b.rows.len()
        )));
    }
    let sensors = a
        .sensors()
        .into_iter()
        .map(|node| {
            let (ax, ay) = (a.column(&format!("ux_{node}")).unwrap(), a.column(&format!("uy_{node}")).unwrap());
            let (bx, by) = (b.column(&format!("ux_{node}")).unwrap(), b.column(&format!("uy_{node}")).unwrap());
            let diff: Vec<f64> = (0..n).map(|i| (bx[i] - ax[i]).hypot(by[i] - ay[i])).collect();
            let norm: Vec<f64> = (0..n).map(|i| ax[i].hypot(ay[i])).collect();
            let max_rel = rel(diff.iter().copied().fold(0.0, f64::max), norm.iter().copied().fold(0.0, f64::max));
            let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            SensorError {
                node,
                max_rel,
                l2_rel: rel(l2(&diff), l2(&norm)),
            }
        })
        .collect();
    let pair = |name: &str| Some(scalar_error(&a.column(name)?, &b.column(name)?));
    let columns = a
        .header
        .iter()
        .filter(|h| b.header.contains(h))
        .map(|h| {
            let (x, y) = (a.column(h).unwrap(), b.column(h).unwrap());
            let s = scalar_error(&x, &y);
            let l2_abs = finite_pairs(&x, &y).map(|(p, q)| (q - p).powi(2)).sum::<f64>().sqrt();
            ColumnError {
                column: h.clone(),
                max_abs: s.max_abs,
                l2_abs,
                l2_rel: s.l2_rel,
            }
        })
        .collect();
    Ok(ComparisonReport {
        a: String::new(),
        b: String::new(),
        steps: n,
        sensors,
        gap: pair("g_CN"),
        pressure: pair("p_CN"),
        iterations_a: histogram(a),
        iterations_b: histogram(b),
        speedup: None,
        complementarity_a: a.complementarity_holds(),
        complementarity_b: b.complementarity_holds(),
        columns,
    })
}

pub fn compare_files(a: &Path, b: &Path) -> Result<ComparisonReport> {
    let mut report = compare(&TrajectoryTable::load(a)?, &TrajectoryTable::load(b)?)?;
    report.a = a.display().to_string();
    report.b = b.display().to_string();
    report.speedup = match (online_seconds(a), online_seconds(b)) {
        (Some(x), Some(y)) if y > 0.0 => Some(x / y),
        _ => None,
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "t,ux_3,uy_3,g_CN,p_CN,ncp_iterations,pairing_version,von_mises_CN\n\
        0,0,0,0,0,0,0,0\n0.5,0,0,0,0,0,0,0\n1,0.1,-0.2,0,2.5,3,0,1.5\n1.5,0.2,-0.1,0.01,0,1,0,1\n";

    #[test]
    fn self_comparison_is_exact() {
        let t = TrajectoryTable::parse(CSV).unwrap();
        let r = compare(&t, &t).unwrap();
        assert_eq!(r.sensors[0].max_rel, 0.0);
        assert_eq!(r.pressure.as_ref().unwrap().l2_rel, 0.0);
        assert!(r.columns.iter().all(|c| c.max_abs == 0.0));
        assert!(r.complementarity_a);
        assert_eq!(r.iterations_a, BTreeMap::from([(1, 1), (3, 1)]));
    }

    #[test]
    fn grid_mismatch_names_the_time() {
        let a = TrajectoryTable::parse(CSV).unwrap();
        let mut b = a.clone();
        b.rows[2][0] = 1.25;
        let e = compare(&a, &b).unwrap_err().to_string();
        assert!(e.contains("t = 1"), "{e}");
        b = a.clone();
        b.rows.pop();
        assert!(compare(&a, &b).unwrap_err().to_string().contains("t = 1.5"));
    }

    #[test]
    fn violated_complementarity_is_reported() {
        let mut t = TrajectoryTable::parse(CSV).unwrap();
        t.rows[3][4] = 1.0;
        assert!(!t.complementarity_holds());
    }

    #[test]
    fn malformed_csv_is_a_parse_error() {
        assert!(matches!(TrajectoryTable::parse("t,a\n1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(TrajectoryTable::parse("").is_err());
    }
}
