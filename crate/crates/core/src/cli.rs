//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failed check or estimation, 2 usage error.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{
    choi_from_action, choi_from_entangled, clone_apply, clone_apply_linear, clone_choi, kraus_from_choi, ChoiJson,
    ChoiMatrix, KRAUS_TOL,
};
use crate::error::{Error, Result};
use crate::estimator::{
    chol_a, q_column, q_column_closed_form, record_operator, scaling_study_with, EstimatorConfig, QColumn, ScalingStudy,
};
use crate::experiment::{
    generate_dataset, povm_element, prob_closed, prob_trace, random_direction, read_dataset, state_density,
    write_dataset_csv, write_dataset_to, MeasurementRecord, MeasurementSetting, Outcome, PureState,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Default grid for the scaling study.
pub const DEFAULT_GRID: [usize; 5] = [100, 316, 1000, 3162, 10_000];

/// Threshold every oracle check in `verify` must meet.
pub const VERIFY_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(
    name = "choimle",
    version,
    about = "Maximum-likelihood reconstruction of the 1-to-2 qubit cloner"
)]
pub struct Cli {
    /// Optional key=value file supplying defaults for the flags below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the exact Choi matrix of the cloner.
    Truth(TruthArgs),
    /// Simulate a measurement dataset.
    GenData(GenDataArgs),
    /// Reconstruct a Choi matrix from a dataset.
    Estimate(EstimateArgs),
    /// Run the oracle cross-checks.
    Verify(VerifyArgs),
    /// Error versus number of records.
    Scaling(ScalingArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct TruthArgs {
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(short = 'k', long)]
    pub samples: Option<usize>,
    #[arg(long, env = "CHOIMLE_SEED")]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// `json` writes JSON lines, `csv` a flat table.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Start the JSON-lines file with a `{"k", "seed"}` line.
    #[arg(long)]
    pub header: bool,
}

#[derive(Debug, Args, Default)]
pub struct EstimatorFlags {
    #[arg(long)]
    pub max_evals: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Dataset in JSON-lines form.
    pub dataset: PathBuf,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Reference Choi matrix (JSON) to report the error against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Seed for restart perturbations; defaults to the dataset's seed.
    #[arg(long, env = "CHOIMLE_SEED")]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub estimator: EstimatorFlags,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(short = 'k', long)]
    pub samples: Option<usize>,
    #[arg(long, env = "CHOIMLE_SEED")]
    pub seed: Option<u64>,
    /// Flip the sign of one closed-form q entry (self-test of the checks).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    /// Comma-separated list of record counts.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, env = "CHOIMLE_SEED")]
    pub seed: Option<u64>,
    /// Directory for `trials.csv` and `summary.csv`.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub estimator: EstimatorFlags,
}

/// Values read from `--config`.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            let key = k.trim().replace('_', "-");
            const KNOWN: [&str; 9] = [
                "samples",
                "seed",
                "format",
                "max-evals",
                "restarts",
                "step",
                "tol",
                "trials",
                "grid",
            ];
            if !KNOWN.contains(&key.as_str()) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("unknown key {key:?}"),
                });
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}"))),
        }
    }

    fn format(&self) -> Result<Option<Format>> {
        match self.values.get("format").map(String::as_str) {
            None => Ok(None),
            Some("json") => Ok(Some(Format::Json)),
            Some("csv") => Ok(Some(Format::Csv)),
            Some(other) => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }

    fn grid(&self) -> Result<Option<Vec<usize>>> {
        match self.values.get("grid") {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<Vec<usize>, _>>()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad grid {v:?}"))),
        }
    }
}

/// A failure tagged with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::from(e).into()
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.msg);
            f.code
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let conf = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Truth(a) => cmd_truth(a, &conf, out),
        Command::GenData(a) => cmd_gen_data(a, &conf, out),
        Command::Estimate(a) => cmd_estimate(a, &conf, out, err),
        Command::Verify(a) => cmd_verify(a, &conf, out),
        Command::Scaling(a) => cmd_scaling(a, &conf, out, err),
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, or to
/// `out` when no path is given.
fn emit(path: Option<&Path>, bytes: &[u8], out: &mut dyn Write) -> io::Result<()> {
    match path {
        None => out.write_all(bytes),
        Some(p) => write_atomic(p, bytes),
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "output path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

fn real_grid_csv(m: &ChoiMatrix) -> String {
    let a = m.mat();
    let mut s = String::new();
    for i in 0..a.rows() {
        let row: Vec<String> = a.row(i).iter().map(|z| format!("{:?}", z.re)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn cmd_truth(a: TruthArgs, conf: &ConfigFile, out: &mut dyn Write) -> CmdResult {
    let format = a.format.or(conf.format()?).unwrap_or(Format::Json);
    let truth = clone_choi();
    let bytes = match format {
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(&truth.to_json()).map_err(Error::from)?;
            v.push(b'\n');
            v
        }
        Format::Csv => real_grid_csv(&truth).into_bytes(),
    };
    emit(a.output.as_deref(), &bytes, out)?;
    Ok(EXIT_OK)
}

fn cmd_gen_data(a: GenDataArgs, conf: &ConfigFile, out: &mut dyn Write) -> CmdResult {
    let k = a.samples.or(conf.get("samples")?).unwrap_or(10_000);
    if k == 0 {
        return Err(Failure::usage("--samples must be at least 1"));
    }
    let seed = a.seed.or(conf.get("seed")?).unwrap_or(1);
    let format = a.format.or(conf.format()?).unwrap_or(Format::Json);
    let d = generate_dataset(k, seed)?;
    let mut buf = Vec::new();
    match format {
        Format::Json => write_dataset_to(&d, &mut buf, a.header)?,
        Format::Csv => write_dataset_csv(&d, &mut buf)?,
    }
    emit(a.output.as_deref(), &buf, out)?;
    Ok(EXIT_OK)
}

fn estimator_config(flags: &EstimatorFlags, conf: &ConfigFile) -> Result<EstimatorConfig> {
    let mut cfg = EstimatorConfig::default();
    if let Some(v) = flags.max_evals.or(conf.get("max-evals")?) {
        cfg.max_evals = v;
    }
    if let Some(v) = flags.restarts.or(conf.get("restarts")?) {
        cfg.restarts = v;
    }
    if let Some(v) = flags.step.or(conf.get("step")?) {
        cfg.initial_step = v;
    }
    if let Some(v) = flags.tol.or(conf.get("tol")?) {
        cfg.value_tolerance = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_choi(path: &Path) -> Result<ChoiMatrix> {
    let json: ChoiJson = serde_json::from_str(&fs::read_to_string(path)?)?;
    ChoiMatrix::from_json(&json)
}

fn cmd_estimate(a: EstimateArgs, conf: &ConfigFile, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let mut cfg = estimator_config(&a.estimator, conf)?;
    let d = read_dataset(&a.dataset).map_err(|e| Failure {
        code: EXIT_FAILURE,
        msg: format!("{}: {e}", a.dataset.display()),
    })?;
    if d.is_empty() {
        return Err(Failure {
            code: EXIT_FAILURE,
            msg: format!("{}: dataset is empty", a.dataset.display()),
        });
    }
    cfg.seed = a.seed.or(conf.get("seed")?).unwrap_or(d.seed);
    let truth = a.truth.as_deref().map(read_choi).transpose()?;
    let res = crate::estimator::estimate_against(&d, &cfg, truth.as_ref())?;
    if !res.converged {
        writeln!(
            err,
            "warning: simplex did not converge within {} evaluations",
            cfg.max_evals
        )?;
    }
    let mut bytes = serde_json::to_vec_pretty(&res.to_json(d.len())).map_err(Error::from)?;
    bytes.push(b'\n');
    if a.output.is_some() {
        emit(a.output.as_deref(), &bytes, out)?;
    }
    let mut line = format!(
        "K={} objective={:.6} log_likelihood={:.6} evaluations={} tp_residual={:.3e} trace={:.6}",
        d.len(),
        res.penalized_value,
        res.log_likelihood,
        res.evaluations,
        res.tp_residual,
        res.trace_of_s
    );
    if let Some(e) = res.error_vs_truth {
        line.push_str(&format!(" error_vs_truth={e:.3e}"));
    }
    writeln!(out, "{line}")?;
    if a.output.is_none() {
        out.write_all(&bytes)?;
    }
    Ok(EXIT_OK)
}

/// One oracle comparison: the largest deviation seen.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub max_deviation: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_deviation <= VERIFY_THRESHOLD
    }
}

fn random_record(rng: &mut ChaCha8Rng) -> (PureState, MeasurementSetting) {
    let (theta, phi) = random_direction(rng);
    let (alpha, beta) = random_direction(rng);
    let (gamma, delta) = random_direction(rng);
    (
        PureState { theta, phi },
        MeasurementSetting {
            alpha,
            beta,
            gamma,
            delta,
        },
    )
}

/// Cross-checks the closed forms against the matrix constructions on
/// `samples` random configurations. `inject_fault` corrupts one closed-form
/// q entry so the suite can be seen to fail.
pub fn run_checks(samples: usize, seed: u64, inject_fault: bool) -> Result<Vec<CheckReport>> {
    let truth = clone_choi();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut d_prob, mut d_norm, mut d_a, mut d_qform, mut d_qq) = (0f64, 0f64, 0f64, 0f64, 0f64);
    for _ in 0..samples {
        let (s, m) = random_record(&mut rng);
        let mut total = 0.0;
        for o in Outcome::ALL {
            let p = prob_closed(&s, &m, o);
            total += p;
            d_prob = d_prob.max((p - prob_trace(&s, &m, o, &truth)?).abs());

            let a = chol_a(&m, o);
            d_a = d_a.max((&a.adjoint() * &a).max_deviation(&povm_element(&m, o)));

            let rec = MeasurementRecord {
                state: s,
                setting: m,
                outcome: o,
            };
            let q = q_column(&rec);
            let mut closed = q_column_closed_form(&rec);
            if inject_fault {
                closed = QColumn({
                    let mut c = closed.0;
                    c[5] = -c[5];
                    c
                });
            }
            let dq =
                q.0.iter()
                    .zip(&closed.0)
                    .map(|(x, y)| (x - y).norm())
                    .fold(0.0, f64::max);
            d_qform = d_qform.max(dq);
            let col = q.to_column();
            d_qq = d_qq.max((&col * &col.adjoint()).max_deviation(&record_operator(&rec)));
        }
        d_norm = d_norm.max((total - 1.0).abs());
    }

    let built = choi_from_action(clone_apply_linear, 2, 4)?;
    let via_psi = choi_from_entangled(clone_apply_linear, 2, 4)?;
    let d_choi = built
        .mat()
        .max_deviation(truth.mat())
        .max(via_psi.mat().max_deviation(truth.mat()));

    let kraus = kraus_from_choi(&truth, KRAUS_TOL)?;
    let mut d_kraus = kraus.completeness().max_deviation(&crate::matlin::CMat::identity(2));
    for _ in 0..samples.min(1000) {
        let (s, _) = random_record(&mut rng);
        let rho = state_density(&s);
        d_kraus = d_kraus.max(kraus.apply(&rho)?.max_deviation(&clone_apply(&rho)?));
    }

    Ok(vec![
        CheckReport {
            name: "closed-form vs trace probability",
            max_deviation: d_prob,
        },
        CheckReport {
            name: "outcome probabilities sum to one",
            max_deviation: d_norm,
        },
        CheckReport {
            name: "A^dag A = F",
            max_deviation: d_a,
        },
        CheckReport {
            name: "q entries vs closed form",
            max_deviation: d_qform,
        },
        CheckReport {
            name: "q q^dag = rho^T (x) F",
            max_deviation: d_qq,
        },
        CheckReport {
            name: "Choi constructions vs literal",
            max_deviation: d_choi,
        },
        CheckReport {
            name: "Kraus reassembly vs cloner",
            max_deviation: d_kraus,
        },
    ])
}

fn cmd_verify(a: VerifyArgs, conf: &ConfigFile, out: &mut dyn Write) -> CmdResult {
    let samples = a.samples.or(conf.get("samples")?).unwrap_or(10_000);
    if samples == 0 {
        return Err(Failure::usage("--samples must be at least 1"));
    }
    let seed = a.seed.or(conf.get("seed")?).unwrap_or(1);
    let reports = run_checks(samples, seed, a.inject_fault)?;
    let mut failed = Vec::new();
    for r in &reports {
        let tag = if r.passed() { "ok" } else { "FAIL" };
        writeln!(out, "{tag:>4}  {:<36} max deviation {:.3e}", r.name, r.max_deviation)?;
        if !r.passed() {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        writeln!(
            out,
            "all {} checks passed (threshold {VERIFY_THRESHOLD:e})",
            reports.len()
        )?;
        Ok(EXIT_OK)
    } else {
        writeln!(out, "failed: {}", failed.join("; "))?;
        Ok(EXIT_FAILURE)
    }
}

pub fn trials_csv(study: &ScalingStudy) -> String {
    let mut s = String::from("K,trial,seed,error,error_real\n");
    for r in &study.trials {
        s.push_str(&format!(
            "{},{},{},{:?},{:?}\n",
            r.k, r.trial, r.seed, r.error, r.error_real
        ));
    }
    s
}

pub fn summary_csv(study: &ScalingStudy) -> String {
    let mut s = String::from("K,mean_error,std_error\n");
    for r in &study.summary {
        s.push_str(&format!("{},{:?},{:?}\n", r.k, r.mean_error, r.std_error));
    }
    s
}

fn cmd_scaling(a: ScalingArgs, conf: &ConfigFile, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let grid = a.grid.clone().or(conf.grid()?).unwrap_or_else(|| DEFAULT_GRID.to_vec());
    if grid.is_empty() || grid.contains(&0) {
        return Err(Failure::usage("--grid needs one or more positive counts"));
    }
    let trials = a.trials.or(conf.get("trials")?).unwrap_or(10);
    if trials == 0 {
        return Err(Failure::usage("--trials must be at least 1"));
    }
    if trials == 1 {
        writeln!(err, "warning: a single trial per K gives no variance estimate")?;
    }
    let seed = a.seed.or(conf.get("seed")?).unwrap_or(1);
    let cfg = estimator_config(&a.estimator, conf)?;
    let study = scaling_study_with(&grid, trials, seed, &cfg, |r| {
        let _ = writeln!(err, "K={} trial={} error={:.4e}", r.k, r.trial, r.error);
    })?;
    let summary = summary_csv(&study);
    if let Some(dir) = &a.output {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("trials.csv"), trials_csv(&study).as_bytes())?;
        write_atomic(&dir.join("summary.csv"), summary.as_bytes())?;
    }
    out.write_all(summary.as_bytes())?;
    match study.slope {
        Some(s) => writeln!(out, "slope {s:.4}")?,
        None => writeln!(out, "slope n/a (needs two or more distinct K)")?,
    }
    Ok(EXIT_OK)
}
