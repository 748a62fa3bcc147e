//! `solspec` command line.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use solspec::assembler::{
    count_spectrum_with, lowest_eigenvalues_with, orbit_bounds, orbit_form, volume, AssemblyError,
    Counter, RunOptions, SolConfig,
};
use solspec::experiments::{
    fit_powerlaw, geometric, ratio_experiment, sweep_epsilon, weyl_sweep, ExperimentError,
    SweepOptions, SweepTable,
};
use solspec::lattice::{enumerate_orbits, validate_monodromy, LatticeError};
use solspec::oracle3d::{lowest_eigenvalues_3d, Grid3, OracleError};
use solspec::report::{cell, to_json};

mod svg;

pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "solspec", version, about = "Laplace spectra of Sol-manifolds in the adiabatic limit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Eigenvalues, eigenbasis and dual lattice of the monodromy.
    Eigendata(Flags),
    /// Monodromy orbits whose well bottom lies below t.
    Orbits(Flags),
    /// N_eps(t) split into the zero sector and orbits.
    Count(Flags),
    /// The k smallest eigenvalues.
    Eigs(Flags),
    /// N_eps(t) along a geometric eps range.
    Sweep(Flags),
    /// Power-law fit of N_eps(t) against eps.
    Fit(Flags),
    /// N_eps(t) along a t range with the classical Weyl ratio.
    Weyl(Flags),
    /// N at alpha over N at alpha = 0 along an eps range.
    Ratio(Flags),
    /// Assembled eigenvalues against the 3D finite-difference oracle.
    OracleCompare(Flags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CounterArg {
    Sturm,
    Shooting,
}

#[derive(Args, Debug, Default)]
#[command(allow_negative_numbers = true)]
struct Flags {
    /// Monodromy entries a11,a12,a21,a22 [default: 2,1,1,1]
    #[arg(long)]
    matrix: Option<String>,
    /// Slope of the foliating field X(1, alpha, 0) [default: 0]
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, conflicts_with = "eps_range")]
    eps: Option<f64>,
    /// hi:lo:points, geometric
    #[arg(long)]
    eps_range: Option<String>,
    #[arg(long, conflicts_with = "t_range")]
    t: Option<f64>,
    /// lo:hi:points, linear
    #[arg(long)]
    t_range: Option<String>,
    /// Number of eigenvalues
    #[arg(long)]
    k: Option<usize>,
    /// Oracle grid side, repeatable
    #[arg(long)]
    grid: Vec<usize>,
    /// Worker threads for orbit solves [default: 1]
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a plot
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Covolume of the lattice [default: 1]
    #[arg(long)]
    covol: Option<f64>,
    /// 1D counter for orbit operators [default: sturm]
    #[arg(long, value_enum)]
    counter: Option<CounterArg>,
    /// JSON file with the same keys as the flags; flags win
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fill wall_time_s (output is then no longer reproducible)
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MatrixSpec {
    Text(String),
    Entries(Vec<i64>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct ConfigFile {
    matrix: Option<MatrixSpec>,
    alpha: Option<f64>,
    eps: Option<f64>,
    eps_range: Option<String>,
    t: Option<f64>,
    t_range: Option<String>,
    k: Option<usize>,
    grid: Option<Vec<usize>>,
    jobs: Option<usize>,
    format: Option<Format>,
    out: Option<PathBuf>,
    svg: Option<PathBuf>,
    covol: Option<f64>,
    counter: Option<CounterArg>,
    timing: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn invalid(flag: &str, msg: impl std::fmt::Display) -> Self {
        Self { code: EXIT_INVALID, message: format!("{flag}: {msg}") }
    }

    fn numerical(msg: impl std::fmt::Display) -> Self {
        Self { code: EXIT_NUMERICAL, message: format!("numerical failure: {msg}") }
    }
}

fn lattice_error(e: LatticeError) -> CliError {
    match e {
        LatticeError::BoundTooLarge { .. } | LatticeError::Overflow | LatticeError::ZeroPoint => {
            CliError::numerical(e)
        }
        LatticeError::BadCovolume(_) => CliError::invalid("--covol", e),
        _ => CliError::invalid("--matrix", e),
    }
}

fn assembly_error(e: AssemblyError) -> CliError {
    match e {
        AssemblyError::Lattice(l) => lattice_error(l),
        AssemblyError::InvalidEps(_) => CliError::invalid("--eps", e),
        AssemblyError::InvalidThreshold(_) => CliError::invalid("--t", e),
        AssemblyError::InvalidAlpha(_) => CliError::invalid("--alpha", e),
        _ => CliError::numerical(e),
    }
}

fn experiment_error(e: ExperimentError) -> CliError {
    match e {
        ExperimentError::Assembly(a) => assembly_error(a),
        ExperimentError::BadTList(_) => CliError::invalid("--t-range", e),
        ExperimentError::Empty(what) if what == "t" => CliError::invalid("--t-range", e),
        _ => CliError::invalid("--eps-range", e),
    }
}

fn oracle_error(e: OracleError) -> CliError {
    match e {
        OracleError::GridTooSmall { .. } => CliError::invalid("--grid", e),
        OracleError::InvalidEps(_) => CliError::invalid("--eps", e),
        OracleError::TooManyEigenvalues(_) => CliError::invalid("--k", e),
        _ => CliError::numerical(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Sweep {
    Single(f64),
    Range(Vec<f64>),
}

/// Flags merged over the config file.
#[derive(Debug)]
struct Settings {
    cfg: SolConfig,
    eps: Option<Sweep>,
    t: Option<Sweep>,
    k: Option<usize>,
    grids: Vec<usize>,
    run: RunOptions,
    format: Option<Format>,
    out: Option<PathBuf>,
    svg: Option<PathBuf>,
    timing: bool,
}

fn parse_matrix(text: &str) -> Result<[i64; 4], CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(CliError::invalid("--matrix", format!("expected 4 comma-separated integers, got {text:?}")));
    }
    let mut out = [0i64; 4];
    for (slot, p) in out.iter_mut().zip(&parts) {
        *slot = p
            .parse()
            .map_err(|_| CliError::invalid("--matrix", format!("{p:?} is not an integer")))?;
    }
    Ok(out)
}

fn parse_range(flag: &str, text: &str) -> Result<(f64, f64, usize), CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || CliError::invalid(flag, format!("expected a:b:points, got {text:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    Ok((a, b, n))
}

fn eps_sweep(single: Option<f64>, range: Option<&str>) -> Result<Option<Sweep>, CliError> {
    if let Some(e) = single {
        if !(e > 0.0 && e <= 1.0) {
            return Err(CliError::invalid("--eps", format!("must lie in (0, 1], got {e}")));
        }
        return Ok(Some(Sweep::Single(e)));
    }
    match range {
        Some(r) => {
            let (hi, lo, n) = parse_range("--eps-range", r)?;
            if !(lo > 0.0 && hi <= 1.0 && lo <= hi) {
                return Err(CliError::invalid("--eps-range", format!("need 0 < lo <= hi <= 1, got {r:?}")));
            }
            Ok(Some(Sweep::Range(geometric(hi, lo, n))))
        }
        None => Ok(None),
    }
}

fn t_sweep(single: Option<f64>, range: Option<&str>) -> Result<Option<Sweep>, CliError> {
    if let Some(t) = single {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(CliError::invalid("--t", format!("must be finite and non-negative, got {t}")));
        }
        return Ok(Some(Sweep::Single(t)));
    }
    match range {
        Some(r) => {
            let (lo, hi, n) = parse_range("--t-range", r)?;
            if !(lo > 0.0 && lo <= hi) {
                return Err(CliError::invalid("--t-range", format!("need 0 < lo <= hi, got {r:?}")));
            }
            let ts = if n == 1 {
                vec![lo]
            } else {
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            };
            Ok(Some(Sweep::Range(ts)))
        }
        None => Ok(None),
    }
}

fn settings(flags: Flags) -> Result<Settings, CliError> {
    let file = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::invalid("--config", format!("{}: {e}", path.display())))?;
            serde_json::from_str::<ConfigFile>(&text)
                .map_err(|e| CliError::invalid("--config", format!("{}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };

    let entries = match (&flags.matrix, &file.matrix) {
        (Some(text), _) | (None, Some(MatrixSpec::Text(text))) => parse_matrix(text)?,
        (None, Some(MatrixSpec::Entries(v))) => v
            .as_slice()
            .try_into()
            .map_err(|_| CliError::invalid("--matrix", format!("expected 4 entries, got {}", v.len())))?,
        (None, None) => [2, 1, 1, 1],
    };
    let matrix = validate_monodromy(entries).map_err(|e| CliError::invalid("--matrix", e))?;
    let alpha = flags.alpha.or(file.alpha).unwrap_or(0.0);
    if !alpha.is_finite() {
        return Err(CliError::invalid("--alpha", "must be finite"));
    }
    let covol = flags.covol.or(file.covol);
    if let Some(c) = covol {
        if !(c > 0.0 && c.is_finite()) {
            return Err(CliError::invalid("--covol", format!("must be positive, got {c}")));
        }
    }
    let cfg = SolConfig::new(matrix, alpha, covol).map_err(assembly_error)?;

    let eps = if flags.eps.is_some() || flags.eps_range.is_some() {
        eps_sweep(flags.eps, flags.eps_range.as_deref())?
    } else {
        if file.eps.is_some() && file.eps_range.is_some() {
            return Err(CliError::invalid("--eps", "config sets both eps and eps-range"));
        }
        eps_sweep(file.eps, file.eps_range.as_deref())?
    };
    let t = if flags.t.is_some() || flags.t_range.is_some() {
        t_sweep(flags.t, flags.t_range.as_deref())?
    } else {
        if file.t.is_some() && file.t_range.is_some() {
            return Err(CliError::invalid("--t", "config sets both t and t-range"));
        }
        t_sweep(file.t, file.t_range.as_deref())?
    };

    let jobs = flags.jobs.or(file.jobs).unwrap_or(1);
    if jobs == 0 {
        return Err(CliError::invalid("--jobs", "must be at least 1"));
    }
    let counter = match flags.counter.or(file.counter).unwrap_or(CounterArg::Sturm) {
        CounterArg::Sturm => Counter::Sturm,
        CounterArg::Shooting => Counter::Shooting,
    };
    let grids = if flags.grid.is_empty() { file.grid.unwrap_or_default() } else { flags.grid };
    Ok(Settings {
        cfg,
        eps,
        t,
        k: flags.k.or(file.k),
        grids,
        run: RunOptions { jobs, counter },
        format: flags.format.or(file.format),
        out: flags.out.or(file.out),
        svg: flags.svg.or(file.svg),
        timing: flags.timing || file.timing.unwrap_or(false),
    })
}

impl Settings {
    fn single_eps(&self) -> Result<f64, CliError> {
        match &self.eps {
            Some(Sweep::Single(e)) => Ok(*e),
            Some(Sweep::Range(_)) => Err(CliError::invalid("--eps", "this command takes a single --eps")),
            None => Err(CliError::invalid("--eps", "required")),
        }
    }

    fn single_t(&self) -> Result<f64, CliError> {
        match &self.t {
            Some(Sweep::Single(t)) => Ok(*t),
            Some(Sweep::Range(_)) => Err(CliError::invalid("--t", "this command takes a single --t")),
            None => Err(CliError::invalid("--t", "required")),
        }
    }

    fn eps_list(&self) -> Result<Vec<f64>, CliError> {
        match &self.eps {
            Some(Sweep::Range(v)) => Ok(v.clone()),
            Some(Sweep::Single(e)) => Ok(vec![*e]),
            None => Err(CliError::invalid("--eps-range", "required")),
        }
    }

    fn t_list(&self) -> Result<Vec<f64>, CliError> {
        match &self.t {
            Some(Sweep::Range(v)) => Ok(v.clone()),
            Some(Sweep::Single(t)) => Ok(vec![*t]),
            None => Err(CliError::invalid("--t-range", "required")),
        }
    }

    fn k(&self, default: usize) -> usize {
        self.k.unwrap_or(default)
    }

    fn sweep_options(&self) -> SweepOptions {
        SweepOptions { run: self.run, timing: self.timing }
    }

    fn format(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }
}

fn json<T: Serialize>(v: &T) -> Result<String, CliError> {
    to_json(v).map_err(|e| CliError::numerical(format!("serialisation: {e}")))
}

struct Output {
    body: String,
    plot: Option<svg::Plot>,
}

fn eigendata(s: &Settings) -> Result<Output, CliError> {
    let e = &s.cfg.eigen;
    let body = match s.format(Format::Json) {
        Format::Json => json(&json!({
            "matrix": e.matrix.entries(),
            "lambda": e.lambda,
            "lambda_inv": e.lambda_inv,
            "ln_lambda": e.ln_lambda,
            "c": e.c,
            "c_inv": e.c_inv,
            "gamma1": e.gamma1,
            "gamma2": e.gamma2,
            "d1": e.d1,
            "d2": e.d2,
            "covolume": e.covolume,
            "volume": volume(&s.cfg),
            "residual": e.residual(),
        }))?,
        Format::Csv => {
            let mut out = String::from("key,value\n");
            for (k, v) in [
                ("lambda", e.lambda),
                ("lambda_inv", e.lambda_inv),
                ("ln_lambda", e.ln_lambda),
                ("c11", e.c[0][0]),
                ("c12", e.c[0][1]),
                ("c21", e.c[1][0]),
                ("c22", e.c[1][1]),
                ("covolume", e.covolume),
                ("volume", volume(&s.cfg)),
                ("residual", e.residual()),
            ] {
                let _ = writeln!(out, "{k},{}", cell(v));
            }
            out
        }
    };
    Ok(Output { body, plot: None })
}

fn orbits(s: &Settings) -> Result<Output, CliError> {
    let eps = s.single_eps()?;
    let t = s.single_t()?;
    let (y_plus, y_minus) = orbit_bounds(s.cfg.alpha, eps, t);
    let (y_pos, y_neg) = if s.cfg.alpha >= 0.0 { (y_plus, y_minus) } else { (y_minus, y_plus) };
    let reps = enumerate_orbits(&s.cfg.eigen, y_pos, y_neg).map_err(lattice_error)?;
    let mut rows = Vec::new();
    for rep in &reps {
        let form = orbit_form(&s.cfg, eps, rep).map_err(assembly_error)?;
        if form.vmin() <= t {
            rows.push((rep, form.vmin()));
        }
    }
    let body = match s.format(Format::Json) {
        Format::Json => json(&json!({
            "eps": eps,
            "t": t,
            "y_plus": y_plus,
            "y_minus": y_minus,
            "orbits": rows.iter().map(|(r, v)| json!({
                "m": r.point.m, "n": r.point.n, "nu": r.point.nu, "sign": r.sign, "vmin": v,
            })).collect::<Vec<_>>(),
        }))?,
        Format::Csv => {
            let mut out = String::from("m,n,nu,sign,vmin\n");
            for (r, v) in &rows {
                let _ = writeln!(out, "{},{},{},{},{}", r.point.m, r.point.n, cell(r.point.nu), r.sign, cell(*v));
            }
            out
        }
    };
    Ok(Output { body, plot: None })
}

fn count(s: &Settings) -> Result<Output, CliError> {
    let eps = s.single_eps()?;
    let t = s.single_t()?;
    let sc = count_spectrum_with(&s.cfg, eps, t, &s.run).map_err(assembly_error)?;
    let body = match s.format(Format::Json) {
        Format::Json => json(&json!({
            "eps": eps,
            "t": t,
            "alpha": s.cfg.alpha,
            "total": sc.total,
            "zero_sector": sc.zero_sector,
            "orbit_count": sc.total - sc.zero_sector,
            "near_ties": sc.near_ties,
            "orbit_contribs": sc.orbit_contribs.iter().map(|(r, c)| json!({
                "m": r.point.m, "n": r.point.n, "nu": r.point.nu, "sign": r.sign, "count": c,
            })).collect::<Vec<_>>(),
        }))?,
        Format::Csv => format!(
            "eps,t,total,zero_sector,orbit_count,wall_time_s\n{},{},{},{},{},0\n",
            cell(eps),
            cell(t),
            sc.total,
            sc.zero_sector,
            sc.total - sc.zero_sector
        ),
    };
    Ok(Output { body, plot: None })
}

fn eigs(s: &Settings) -> Result<Output, CliError> {
    let eps = s.single_eps()?;
    let k = s.k(10);
    let ev = lowest_eigenvalues_with(&s.cfg, eps, k, &s.run).map_err(assembly_error)?;
    let body = match s.format(Format::Json) {
        Format::Json => json(&json!({ "eps": eps, "alpha": s.cfg.alpha, "k": k, "eigenvalues": ev }))?,
        Format::Csv => {
            let mut out = String::from("index,eigenvalue\n");
            for (i, v) in ev.iter().enumerate() {
                let _ = writeln!(out, "{i},{}", cell(*v));
            }
            out
        }
    };
    Ok(Output { body, plot: None })
}

fn table_output(table: &SweepTable, format: Format) -> Result<String, CliError> {
    match format {
        Format::Csv => Ok(table.to_csv()),
        Format::Json => json(table),
    }
}

fn count_plot(title: &str, table: &SweepTable) -> svg::Plot {
    svg::Plot {
        title: title.to_string(),
        x_label: "eps".into(),
        y_label: "N".into(),
        log_x: true,
        log_y: true,
        series: vec![
            svg::Series {
                label: "total".into(),
                points: table.rows.iter().map(|r| (r.eps, r.total as f64)).collect(),
            },
            svg::Series {
                label: "zero sector".into(),
                points: table.rows.iter().map(|r| (r.eps, r.zero_sector as f64)).collect(),
            },
        ],
    }
}

fn sweep(s: &Settings) -> Result<Output, CliError> {
    let t = s.single_t()?;
    let table = sweep_epsilon(&s.cfg, t, &s.eps_list()?, &s.sweep_options()).map_err(experiment_error)?;
    Ok(Output {
        body: table_output(&table, s.format(Format::Csv))?,
        plot: Some(count_plot(&format!("N(t = {t}) against eps"), &table)),
    })
}

fn fit(s: &Settings) -> Result<Output, CliError> {
    let t = s.single_t()?;
    let table = sweep_epsilon(&s.cfg, t, &s.eps_list()?, &s.sweep_options()).map_err(experiment_error)?;
    let result = fit_powerlaw(&table, volume(&s.cfg)).map_err(experiment_error)?;
    let body = match s.format(Format::Json) {
        Format::Json => json(&json!({
            "alpha": s.cfg.alpha,
            "volume": volume(&s.cfg),
            "fit": result,
            "table": table,
        }))?,
        Format::Csv => {
            let mut out = String::from("slope,log_constant,constant_hat,intercept_constant,r_squared\n");
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                cell(result.slope),
                cell(result.log_constant),
                cell(result.constant_hat),
                cell(result.intercept_constant),
                cell(result.r_squared)
            );
            out
        }
    };
    let mut plot = count_plot(&format!("N(t = {t}) against eps, slope {:.3}", result.slope), &table);
    plot.series.push(svg::Series {
        label: "fit".into(),
        points: table
            .rows
            .iter()
            .map(|r| (r.eps, (result.log_constant + result.slope * r.eps.ln()).exp()))
            .collect(),
    });
    Ok(Output { body, plot: Some(plot) })
}

fn weyl(s: &Settings) -> Result<Output, CliError> {
    let eps = s.single_eps()?;
    let table = weyl_sweep(&s.cfg, eps, &s.t_list()?, &s.sweep_options()).map_err(experiment_error)?;
    let plot = svg::Plot {
        title: format!("Weyl ratio at eps = {eps}"),
        x_label: "t".into(),
        y_label: "N / Weyl".into(),
        log_x: false,
        log_y: false,
        series: vec![svg::Series {
            label: "ratio".into(),
            points: table.rows.iter().filter_map(|r| r.weyl_ratio.map(|w| (r.t, w))).collect(),
        }],
    };
    Ok(Output { body: table_output(&table, s.format(Format::Csv))?, plot: Some(plot) })
}

fn ratio(s: &Settings) -> Result<Output, CliError> {
    let t = s.single_t()?;
    let base = s.cfg.with_alpha(0.0).map_err(assembly_error)?;
    let series = ratio_experiment(&base, t, &s.eps_list()?, s.cfg.alpha, &s.sweep_options())
        .map_err(experiment_error)?;
    let body = match s.format(Format::Json) {
        Format::Json => json(&series)?,
        Format::Csv => {
            let mut out = String::from("eps,total_alpha,total_zero,ratio\n");
            for p in &series.points {
                let _ = writeln!(out, "{},{},{},{}", cell(p.eps), p.total_alpha, p.total_zero, cell(p.ratio));
            }
            out
        }
    };
    let plot = svg::Plot {
        title: format!("N(alpha = {}) / N(alpha = 0), t = {t}", s.cfg.alpha),
        x_label: "eps".into(),
        y_label: "ratio".into(),
        log_x: true,
        log_y: false,
        series: vec![svg::Series {
            label: "ratio".into(),
            points: series.points.iter().map(|p| (p.eps, p.ratio)).collect(),
        }],
    };
    Ok(Output { body, plot: Some(plot) })
}

fn oracle_compare(s: &Settings) -> Result<Output, CliError> {
    let eps = s.single_eps()?;
    let k = s.k(10);
    let grids = if s.grids.is_empty() { vec![16] } else { s.grids.clone() };
    let reference = lowest_eigenvalues_with(&s.cfg, eps, k, &s.run).map_err(assembly_error)?;
    let mut results = Vec::new();
    for &n in &grids {
        let grid = Grid3::cube(n).map_err(|e| match e {
            OracleError::BudgetExceeded { .. } => CliError::numerical(e),
            _ => CliError::invalid("--grid", e),
        })?;
        let ev = lowest_eigenvalues_3d(&s.cfg, eps, &grid, k).map_err(oracle_error)?;
        let max_rel = relative_discrepancy(&reference, &ev);
        results.push((n, ev, max_rel));
    }
    let body = match s.format(Format::Json) {
        Format::Json => json(&json!({
            "eps": eps,
            "alpha": s.cfg.alpha,
            "k": k,
            "assembler": reference,
            "grids": results.iter().map(|(n, ev, err)| json!({
                "n": n, "eigenvalues": ev, "max_rel_discrepancy": err,
            })).collect::<Vec<_>>(),
        }))?,
        Format::Csv => {
            let mut out = String::from("index,assembler");
            for (n, _, _) in &results {
                let _ = write!(out, ",grid{n}");
            }
            out.push('\n');
            for (i, v) in reference.iter().enumerate() {
                let _ = write!(out, "{i},{}", cell(*v));
                for (_, ev, _) in &results {
                    let _ = write!(out, ",{}", ev.get(i).map(|x| cell(*x)).unwrap_or_default());
                }
                out.push('\n');
            }
            out
        }
    };
    Ok(Output { body, plot: None })
}

/// Largest relative gap over nonzero reference values.
pub fn relative_discrepancy(reference: &[f64], other: &[f64]) -> f64 {
    reference
        .iter()
        .zip(other)
        .filter(|(r, _)| r.abs() > 1e-9)
        .map(|(r, o)| ((o - r) / r).abs())
        .fold(0.0, f64::max)
}

fn execute(command: Command) -> Result<(), CliError> {
    let (handler, flags): (fn(&Settings) -> Result<Output, CliError>, Flags) = match command {
        Command::Eigendata(f) => (eigendata, f),
        Command::Orbits(f) => (orbits, f),
        Command::Count(f) => (count, f),
        Command::Eigs(f) => (eigs, f),
        Command::Sweep(f) => (sweep, f),
        Command::Fit(f) => (fit, f),
        Command::Weyl(f) => (weyl, f),
        Command::Ratio(f) => (ratio, f),
        Command::OracleCompare(f) => (oracle_compare, f),
    };
    let s = settings(flags)?;
    let output = handler(&s)?;
    match &s.out {
        Some(path) => fs::write(path, &output.body)
            .map_err(|e| CliError::invalid("--out", format!("{}: {e}", path.display())))?,
        None => print!("{}", output.body),
    }
    if let Some(path) = &s.svg {
        let plot = output
            .plot
            .ok_or_else(|| CliError::invalid("--svg", "this command has no plot"))?;
        fs::write(path, plot.render())
            .map_err(|e| CliError::invalid("--svg", format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

/// Runs the command line and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
