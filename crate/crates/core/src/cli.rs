//! Command-line front end. Every command writes plot-ready CSV or JSON.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical error,
//! 4 partial report (some cells failed).

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{data_driven_weight, fit_additive, loess, ComponentMethod, Direction, MainEffectFit};
use crate::gsa::{
    build_report, input_weight, report_from_samples, sobol_total_reference, GsaConfig, GsaReport, Model, SampleSet,
    WeightKind, STREAM_FIT,
};
use crate::measures::{MeasureSpec, ProbabilityMeasure};
use crate::models::BuiltinModel;
use crate::spectral::solve_eigenbasis;
use crate::weights::{weight_from_g, weight_lin_closed_form, ClosedWeight, SaturatingFunction, WeightCurve};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "GSA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "wpgsa", version, about = "Weighted Poincare inequalities and Sobol index bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimal weights for a measure (closed form and RK4).
    Weight {
        #[command(flatten)]
        common: Common,
        /// Allow RK4-only w_lin when no closed form exists.
        #[arg(long)]
        numeric: bool,
    },
    /// Eigenvalues and eigenfunctions of the weighted operator.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Number of non-trivial eigenpairs.
        #[arg(long, default_value_t = 5)]
        num_eig: usize,
        /// Tabulated weight CSV `x,w` (overrides --weights).
        #[arg(long, conflicts_with = "weight_form")]
        weight_file: Option<PathBuf>,
        /// Closed-form weight as JSON, e.g. `{"form":"one_minus_square","power":1}` (overrides --weights).
        #[arg(long)]
        weight_form: Option<String>,
    },
    /// Weighted DGSM upper bounds on total Sobol indices.
    Bound {
        #[command(flatten)]
        common: Common,
        /// Skip the reference Jansen run.
        #[arg(long)]
        no_reference: bool,
    },
    /// Poincare chaos expansion approximations of total Sobol indices.
    Poince {
        #[command(flatten)]
        common: Common,
        /// Skip the reference Jansen run.
        #[arg(long)]
        no_reference: bool,
    },
    /// Reference total Sobol indices (Jansen pick-freeze).
    Sobol {
        #[command(flatten)]
        common: Common,
    },
    /// Monotone main-effect fits and their data-driven weights.
    MainEffect {
        #[command(flatten)]
        common: Common,
        /// Also emit a local quadratic regression curve with this span.
        #[arg(long)]
        loess_span: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct Common {
    /// Measure spec: a JSON file path or inline JSON.
    #[arg(long)]
    measure: Option<String>,
    /// Built-in model: toy1, toy2, flood_s, flood_c.
    #[arg(long)]
    model: Option<String>,
    /// Tabulated sample CSV `X1..Xd,Y[,G1..Gd]` (use with --measures).
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON list of measure specs for a tabulated sample.
    #[arg(long)]
    measures: Option<String>,
    /// Nodes for weights and eigenbases.
    #[arg(long, default_value_t = 500)]
    nodes: usize,
    /// Sample size (bounds, PoinCE; the reference run for `sobol`).
    #[arg(long)]
    n: Option<usize>,
    /// Sample size of the main-effect fits.
    #[arg(long, default_value_t = 150)]
    fit_n: usize,
    /// Reference Jansen sample size.
    #[arg(long, default_value_t = 10_000)]
    ref_n: usize,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 100)]
    boot: usize,
    /// Master seed of every random stream.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comma-separated weight kinds: unit, lin, gauss_ref, uniform_ref, data_driven.
    #[arg(long)]
    weights: Option<String>,
    /// Output directory; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Format of the table written to stdout (all formats are written with --out).
    #[arg(long, value_enum)]
    format: Option<Format>,
}

const DEFAULT_N: usize = 150;

impl Common {
    fn weight_kinds(&self, default: &[WeightKind]) -> Result<Vec<WeightKind>> {
        match &self.weights {
            Some(s) => WeightKind::parse_list(s),
            None => Ok(default.to_vec()),
        }
    }

    fn measure(&self) -> Result<ProbabilityMeasure> {
        let spec = self.measure.as_deref().ok_or_else(|| Error::Config("--measure is required".into()))?;
        ProbabilityMeasure::from_json(&read_inline_or_file(spec)?)
    }

    fn model(&self) -> Result<BuiltinModel> {
        let name = self.model.as_deref().ok_or_else(|| Error::Config("--model is required".into()))?;
        BuiltinModel::by_name(name)
    }

    /// Measures and sample of a tabulated model.
    fn tabulated(&self) -> Result<Option<(Vec<ProbabilityMeasure>, SampleSet)>> {
        let Some(path) = &self.data else { return Ok(None) };
        if self.model.is_some() {
            return Err(Error::Config("--data and --model are exclusive".into()));
        }
        let text = self.measures.as_deref().ok_or_else(|| Error::Config("--data needs --measures".into()))?;
        let specs: Vec<MeasureSpec> =
            serde_json::from_str(&read_inline_or_file(text)?).map_err(|e| Error::Config(format!("--measures: {e}")))?;
        let inputs = specs.iter().map(ProbabilityMeasure::from_spec).collect::<Result<Vec<_>>>()?;
        let samples = SampleSet::read_csv(BufReader::new(fs::File::open(path)?))?;
        Ok(Some((inputs, samples)))
    }

    fn config(&self, weights: Vec<WeightKind>, poince: Vec<WeightKind>, reference: bool) -> GsaConfig {
        GsaConfig {
            n: self.n.unwrap_or(DEFAULT_N),
            fit_n: self.fit_n,
            ref_n: self.ref_n,
            boot: self.boot,
            nodes: self.nodes,
            seed: self.seed,
            weights,
            poince,
            reference,
        }
    }
}

fn read_inline_or_file(arg: &str) -> Result<String> {
    let t = arg.trim_start();
    if t.starts_with('{') || t.starts_with('[') {
        Ok(arg.to_string())
    } else {
        Ok(fs::read_to_string(arg)?)
    }
}

/// Collects named outputs, then writes them to a directory or stdout.
struct Output {
    dir: Option<PathBuf>,
    files: Vec<(String, Vec<u8>)>,
}

impl Output {
    fn new(dir: Option<PathBuf>) -> Self {
        Output { dir, files: Vec::new() }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.add(name, text);
        Ok(())
    }

    /// Writes every file into the directory, or `primary` to stdout.
    fn finish(self, primary: &str) -> Result<()> {
        match &self.dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                for (name, bytes) in &self.files {
                    fs::write(dir.join(name), bytes)?;
                }
            }
            None => {
                let (_, bytes) = self
                    .files
                    .iter()
                    .find(|(n, _)| n == primary)
                    .ok_or_else(|| Error::Config(format!("no output named {primary}")))?;
                io::stdout().write_all(bytes)?;
            }
        }
        Ok(())
    }
}

/// Prints a line on stdout when files go to a directory, else on stderr.
fn note(to_dir: bool, line: &str) {
    if to_dir {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn csv_bytes<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

#[derive(Serialize)]
struct WeightTable {
    measure: MeasureSpec,
    nodes: usize,
    x: Vec<f64>,
    curves: Vec<(String, Vec<f64>)>,
    max_abs_error: Option<f64>,
}

fn cmd_weight(common: &Common, numeric: bool) -> Result<()> {
    let m = common.measure()?;
    let kinds = common.weight_kinds(&[WeightKind::Lin, WeightKind::UniformRef, WeightKind::GaussRef])?;
    let nodes = common.nodes;
    let x = m.support().grid(nodes + 1);
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    let mut max_abs_error = None;
    for kind in kinds {
        match kind {
            WeightKind::Lin => {
                let g = SaturatingFunction::linear(&m)?;
                match weight_lin_closed_form(&m) {
                    Ok(exact) => {
                        let w = weight_from_g(&m, &g, nodes)?;
                        let err = x.iter().map(|&t| (w.eval(t) - exact.eval(t)).abs()).fold(0.0, f64::max);
                        max_abs_error = Some(err);
                        curves.push(("lin".into(), x.iter().map(|&t| w.eval(t)).collect()));
                        curves.push(("lin_exact".into(), x.iter().map(|&t| exact.eval(t)).collect()));
                    }
                    Err(Error::Unsupported(msg)) if !numeric => {
                        return Err(Error::Unsupported(format!("{msg}; pass --numeric for the RK4 weight")));
                    }
                    Err(Error::Unsupported(_)) => {
                        let w = weight_from_g(&m, &g, nodes)?;
                        curves.push(("lin".into(), x.iter().map(|&t| w.eval(t)).collect()));
                    }
                    Err(e) => return Err(e),
                }
            }
            WeightKind::DataDriven => {
                return Err(Error::Config("data_driven weights need a model; use `main-effect`".into()));
            }
            kind => {
                let w = input_weight(&m, kind, nodes, None)?;
                curves.push((kind.name().into(), x.iter().map(|&t| w.curve.eval(t)).collect()));
            }
        }
    }
    let table = WeightTable { measure: m.spec(), nodes, x, curves, max_abs_error };
    let csv = csv_bytes(|buf| {
        let names: Vec<&str> = table.curves.iter().map(|c| c.0.as_str()).collect();
        writeln!(buf, "x,{}", names.join(","))?;
        for (k, t) in table.x.iter().enumerate() {
            let vals: Vec<String> = table.curves.iter().map(|c| format!("{:.15e}", c.1[k])).collect();
            writeln!(buf, "{t:.15e},{}", vals.join(","))?;
        }
        Ok(())
    })?;
    let to_dir = common.out.is_some();
    let mut out = Output::new(common.out.clone());
    out.add("weights.csv", csv);
    out.add_json("weights.json", &table)?;
    if let Some(err) = max_abs_error {
        note(to_dir, &format!("max abs error lin vs closed form: {err:.3e}"));
    }
    out.finish(if common.format == Some(Format::Json) { "weights.json" } else { "weights.csv" })
}

fn cmd_spectrum(
    common: &Common,
    num_eig: usize,
    weight_file: &Option<PathBuf>,
    weight_form: &Option<String>,
) -> Result<()> {
    let m = common.measure()?;
    let w = match (weight_file, weight_form) {
        (Some(path), _) => WeightCurve::load_csv(path)?,
        (None, Some(form)) => {
            let c: ClosedWeight =
                serde_json::from_str(form).map_err(|e| Error::Config(format!("--weight-form: {e}")))?;
            WeightCurve::closed(m.support(), c)
        }
        (None, None) => {
            let kinds = common.weight_kinds(&[WeightKind::Unit])?;
            let [kind] = kinds[..] else {
                return Err(Error::Config("spectrum takes exactly one weight kind".into()));
            };
            input_weight(&m, kind, common.nodes, None)?.curve
        }
    };
    let basis = solve_eigenbasis(&m, &w, num_eig, common.nodes)?;
    let mut out = Output::new(common.out.clone());
    out.add("spectrum.csv", csv_bytes(|buf| basis.write_csv(buf))?);
    out.add_json("spectrum.json", &basis.metadata())?;
    out.finish(if common.format == Some(Format::Csv) { "spectrum.csv" } else { "spectrum.json" })
}

/// Writes a report and maps its cell failures to an exit code.
fn emit_report(common: &Common, report: &GsaReport) -> Result<i32> {
    let mut out = Output::new(common.out.clone());
    out.add("report.json", {
        let mut v = report.to_json()?.into_bytes();
        v.push(b'\n');
        v
    });
    out.add("report.csv", csv_bytes(|buf| report.write_csv(buf))?);
    out.finish(if common.format == Some(Format::Csv) { "report.csv" } else { "report.json" })?;
    let failures = report.failures();
    Ok(if failures == 0 {
        EXIT_OK
    } else if report.successes() == 0 {
        EXIT_NUMERICAL
    } else {
        EXIT_PARTIAL
    })
}

fn cmd_report(common: &Common, weights: Vec<WeightKind>, poince: Vec<WeightKind>, reference: bool) -> Result<i32> {
    let report = match common.tabulated()? {
        Some((inputs, samples)) => {
            let config = common.config(weights, poince, false);
            let name = common.data.as_deref().and_then(Path::file_stem).map_or("data".into(), |s| s.to_string_lossy());
            report_from_samples(&name, &inputs, samples, &config)
        }
        None => {
            let model = common.model()?;
            let config = common.config(weights, poince, reference);
            build_report(&model, &config, model.sobol_oracle())
        }
    };
    emit_report(common, &report)
}

fn cmd_sobol(common: &Common) -> Result<()> {
    let model = common.model()?;
    let n = common.n.unwrap_or(common.ref_n);
    let est = sobol_total_reference(&model, n, common.seed)?;
    let mut out = Output::new(common.out.clone());
    out.add_json("sobol.json", &est)?;
    out.add(
        "sobol.csv",
        csv_bytes(|buf| {
            writeln!(buf, "i,name,s_tot,s_tot_raw,std_error")?;
            for s in &est.indices {
                writeln!(buf, "{},{},{:.10e},{:.10e},{:.10e}", s.input, s.name, s.value, s.raw, s.std_error)?;
            }
            Ok(())
        })?,
    );
    out.finish(if common.format == Some(Format::Csv) { "sobol.csv" } else { "sobol.json" })
}

#[derive(Serialize)]
struct MainEffectSidecar<'a> {
    model: String,
    n: usize,
    seed: u64,
    fits: &'a [MainEffectFit],
    names: Vec<String>,
    weight_errors: Vec<Option<String>>,
}

fn cmd_main_effect(common: &Common, loess_span: Option<f64>) -> Result<i32> {
    let (name, inputs, names, x, y, specs) = match common.tabulated()? {
        Some((inputs, s)) => {
            let d = inputs.len();
            if s.dim() != d {
                return Err(Error::Config(format!("sample has {} inputs but {d} measures were given", s.dim())));
            }
            let names = (1..=d).map(|i| format!("X{i}")).collect();
            ("data".to_string(), inputs, names, s.x, s.y, vec![(ComponentMethod::Monotone, Direction::Auto); d])
        }
        None => {
            let model = common.model()?;
            let n = common.n.unwrap_or(common.fit_n);
            let s = SampleSet::draw(&model, n, common.seed, STREAM_FIT, false)?;
            let specs = (0..model.dim()).map(|i| model.main_effect_spec(i)).collect();
            (model.name().to_string(), model.inputs().to_vec(), model.input_names(), s.x, s.y, specs)
        }
    };
    let fits = fit_additive(&x, &y, &inputs, &specs)?;
    let mut out = Output::new(common.out.clone());
    let mut weight_errors = Vec::new();
    for (i, fit) in fits.iter().enumerate() {
        out.add(&format!("main_effect_{}.csv", names[i]), csv_bytes(|buf| fit.write_csv(buf, common.nodes + 1))?);
        match data_driven_weight(fit, &inputs[i], common.nodes) {
            Ok(w) => {
                out.add(&format!("weight_{}.csv", names[i]), csv_bytes(|buf| w.write_csv(buf, common.nodes + 1))?);
                weight_errors.push(None);
            }
            Err(e) => weight_errors.push(Some(e.to_string())),
        }
        if let Some(span) = loess_span {
            let xi: Vec<f64> = x.iter().map(|r| r[i]).collect();
            let grid = inputs[i].support().grid(101);
            let curve = loess(&xi, &y, span, &grid)?;
            out.add(
                &format!("loess_{}.csv", names[i]),
                csv_bytes(|buf| {
                    writeln!(buf, "x,y_loess")?;
                    for (t, v) in grid.iter().zip(&curve) {
                        writeln!(buf, "{t:.15e},{v:.15e}")?;
                    }
                    Ok(())
                })?,
            );
        }
    }
    let failed = weight_errors.iter().filter(|e| e.is_some()).count();
    let sidecar = MainEffectSidecar { model: name, n: y.len(), seed: common.seed, fits: &fits, names, weight_errors };
    out.add_json("main_effect.json", &sidecar)?;
    out.finish("main_effect.json")?;
    Ok(if failed == 0 {
        EXIT_OK
    } else if failed == fits.len() {
        EXIT_NUMERICAL
    } else {
        EXIT_PARTIAL
    })
}

fn execute(cli: Cli) -> Result<i32> {
    let bound_kinds =
        [WeightKind::Unit, WeightKind::Lin, WeightKind::GaussRef, WeightKind::UniformRef, WeightKind::DataDriven];
    match &cli.command {
        Command::Weight { common, numeric } => cmd_weight(common, *numeric).map(|_| EXIT_OK),
        Command::Spectrum { common, num_eig, weight_file, weight_form } => {
            cmd_spectrum(common, *num_eig, weight_file, weight_form).map(|_| EXIT_OK)
        }
        Command::Bound { common, no_reference } => {
            cmd_report(common, common.weight_kinds(&bound_kinds)?, Vec::new(), !no_reference)
        }
        Command::Poince { common, no_reference } => cmd_report(
            common,
            Vec::new(),
            common.weight_kinds(&[WeightKind::GaussRef, WeightKind::UniformRef])?,
            !no_reference,
        ),
        Command::Sobol { common } => cmd_sobol(common).map(|_| EXIT_OK),
        Command::MainEffect { common, loess_span } => cmd_main_effect(common, *loess_span),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    // A second call in the same process finds the pool already built; that is fine.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (including the program name) and runs one command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = configure_threads().and_then(|_| execute(cli));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}
