//! Sweeps in `ε` and `t`, power-law fits of `N_ε(t)`, and the α ≠ 0 : α = 0
//! ratio series.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::assembler::{count_spectrum_with, volume, AssemblyError, RunOptions, SolConfig};
use crate::report::cell;

/// Relative shift of `t` applied when a level sits within the tie band.
pub const TIE_PERTURBATION: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("empty {0} list")]
    Empty(&'static str),
    #[error("eps list must be geometric and within (0, 1]: {0}")]
    BadEpsList(String),
    #[error("t list must be positive and finite: {0}")]
    BadTList(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepOptions {
    pub run: RunOptions,
    /// Fill `wall_time_s`; off by default so tables are reproducible.
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub t: f64,
    pub total: u64,
    pub zero_sector: u64,
    pub orbit_count: u64,
    pub wall_time_s: f64,
    pub near_ties: u64,
    pub perturbed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weyl_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Totals fail to grow as `ε` decreases (or as `t` grows).
    pub non_monotone: bool,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let weyl = self.rows.iter().any(|r| r.weyl_ratio.is_some());
        let mut out = String::from("eps,t,total,zero_sector,orbit_count,wall_time_s");
        if weyl {
            out.push_str(",weyl_ratio");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                cell(r.eps),
                cell(r.t),
                r.total,
                r.zero_sector,
                r.orbit_count,
                cell(r.wall_time_s)
            );
            if weyl {
                let _ = write!(out, ",{}", r.weyl_ratio.map(cell).unwrap_or_default());
            }
            out.push('\n');
        }
        out
    }
}

fn run_row(cfg: &SolConfig, eps: f64, t: f64, opts: &SweepOptions) -> Result<SweepRow, ExperimentError> {
    let start = Instant::now();
    let mut sc = count_spectrum_with(cfg, eps, t, &opts.run)?;
    let near_ties = sc.near_ties;
    let perturbed = near_ties > 0;
    if perturbed {
        sc = count_spectrum_with(cfg, eps, t + TIE_PERTURBATION * t.max(1.0), &opts.run)?;
    }
    let wall = if opts.timing { start.elapsed().as_secs_f64() } else { 0.0 };
    Ok(SweepRow {
        eps,
        t,
        total: sc.total,
        zero_sector: sc.zero_sector,
        orbit_count: sc.total - sc.zero_sector,
        wall_time_s: wall,
        near_ties,
        perturbed,
        weyl_ratio: None,
    })
}

fn check_eps_list(eps_list: &[f64]) -> Result<Vec<f64>, ExperimentError> {
    if eps_list.is_empty() {
        return Err(ExperimentError::Empty("eps"));
    }
    if let Some(bad) = eps_list.iter().find(|&&e| !(e > 0.0 && e <= 1.0)) {
        return Err(ExperimentError::BadEpsList(format!("{bad} is outside (0, 1]")));
    }
    let mut sorted = eps_list.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let logs: Vec<f64> = sorted.windows(2).map(|w| (w[0] / w[1]).ln()).collect();
    if let Some(first) = logs.first() {
        if logs.iter().any(|l| (l - first).abs() > 1e-6 * first.abs().max(1e-12)) {
            return Err(ExperimentError::BadEpsList("ratios between neighbours differ".into()));
        }
    }
    Ok(sorted)
}

/// `ε` values `hi, hi·q, …, lo` with a constant ratio.
pub fn geometric(hi: f64, lo: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![hi];
    }
    let ratio = (lo / hi).ln() / (points - 1) as f64;
    (0..points)
        .map(|i| if i + 1 == points { lo } else { hi * (ratio * i as f64).exp() })
        .collect()
}

/// One count per `ε`, rows in decreasing `ε`.
pub fn sweep_epsilon(
    cfg: &SolConfig,
    t: f64,
    eps_list: &[f64],
    opts: &SweepOptions,
) -> Result<SweepTable, ExperimentError> {
    let eps_sorted = check_eps_list(eps_list)?;
    let rows = eps_sorted
        .iter()
        .map(|&eps| run_row(cfg, eps, t, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let non_monotone = rows.windows(2).any(|w| w[1].total < w[0].total);
    Ok(SweepTable { rows, non_monotone })
}

/// Classical Weyl normalisation `N·6π²/(vol·ε⁻²·t^{3/2})`.
pub fn weyl_ratio(total: u64, vol: f64, eps: f64, t: f64) -> f64 {
    total as f64 * 6.0 * PI * PI * eps * eps / (vol * t.powf(1.5))
}

/// One count per `t` at fixed `ε`, rows in increasing `t`, with the Weyl ratio.
pub fn weyl_sweep(
    cfg: &SolConfig,
    eps: f64,
    t_list: &[f64],
    opts: &SweepOptions,
) -> Result<SweepTable, ExperimentError> {
    if t_list.is_empty() {
        return Err(ExperimentError::Empty("t"));
    }
    if let Some(bad) = t_list.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(ExperimentError::BadTList(bad.to_string()));
    }
    let mut ts = t_list.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let vol = volume(cfg);
    let rows = ts
        .iter()
        .map(|&t| {
            run_row(cfg, eps, t, opts).map(|mut r| {
                r.weyl_ratio = Some(weyl_ratio(r.total, vol, eps, t));
                r
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let non_monotone = rows.windows(2).any(|w| w[1].total < w[0].total);
    Ok(SweepTable { rows, non_monotone })
}

/// Mean `|ratio − 1|` of the last three rows is below that of the first three.
pub fn trends_toward_one(table: &SweepTable) -> bool {
    let ratios: Vec<f64> = table.rows.iter().filter_map(|r| r.weyl_ratio).collect();
    if ratios.len() < 4 {
        return false;
    }
    let dev = |s: &[f64]| s.iter().map(|r| (r - 1.0).abs()).sum::<f64>() / s.len() as f64;
    let k = 3.min(ratios.len() / 2);
    dev(&ratios[ratios.len() - k..]) < dev(&ratios[..k])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub name: String,
    pub value: f64,
    /// `constant_hat / value`.
    pub ratio: f64,
    pub intercept_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub t: f64,
    pub rows: usize,
    pub eps_min: f64,
    pub slope: f64,
    pub log_constant: f64,
    /// `N·ε²/t^{3/2}` at the smallest `ε`.
    pub constant_hat: f64,
    /// `exp(log_constant)/t^{3/2}`.
    pub intercept_constant: f64,
    pub r_squared: f64,
    pub comparisons: Vec<Comparison>,
}

/// Least-squares `log N = log_constant + slope·log ε`.
pub fn fit_powerlaw(table: &SweepTable, vol: f64) -> Result<FitResult, ExperimentError> {
    let rows = &table.rows;
    if rows.len() < 4 {
        return Err(ExperimentError::InsufficientData(format!("{} rows, need 4", rows.len())));
    }
    let large = rows.iter().filter(|r| r.total >= 10).count();
    if 2 * large < rows.len() {
        return Err(ExperimentError::InsufficientData(format!(
            "only {large} of {} rows have total >= 10",
            rows.len()
        )));
    }
    if rows.iter().any(|r| r.total == 0) {
        return Err(ExperimentError::InsufficientData("a row has total 0".into()));
    }
    let smallest = rows.iter().min_by(|a, b| a.eps.total_cmp(&b.eps)).unwrap();
    if rows.iter().any(|r| r.t != smallest.t) {
        return Err(ExperimentError::InsufficientData("rows mix several t".into()));
    }
    let t = smallest.t;
    let xs: Vec<f64> = rows.iter().map(|r| r.eps.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| (r.total as f64).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(ExperimentError::InsufficientData("all rows share one eps".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let log_constant = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - log_constant - slope * x).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };

    let norm = t.powf(1.5);
    let constant_hat = smallest.total as f64 * smallest.eps * smallest.eps / norm;
    let intercept_constant = log_constant.exp() / norm;
    let comparisons = [
        ("1/(4pi^2)", 1.0 / (4.0 * PI * PI)),
        ("1/(6pi^2)", 1.0 / (6.0 * PI * PI)),
        ("vol/(6pi^2)", vol / (6.0 * PI * PI)),
    ]
    .into_iter()
    .map(|(name, value)| Comparison {
        name: name.to_string(),
        value,
        ratio: constant_hat / value,
        intercept_ratio: intercept_constant / value,
    })
    .collect();
    Ok(FitResult {
        t,
        rows: rows.len(),
        eps_min: smallest.eps,
        slope,
        log_constant,
        constant_hat,
        intercept_constant,
        r_squared,
        comparisons,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioPoint {
    pub eps: f64,
    pub total_alpha: u64,
    pub total_zero: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioSeries {
    pub t: f64,
    pub alpha: f64,
    pub points: Vec<RatioPoint>,
    pub last: f64,
    /// Last three ratios within 15% of each other.
    pub stable: bool,
    /// `(1/4π²)/(1/6π²)`, reported only.
    pub reference: f64,
}

/// `R(ε) = N^{α}_ε(t) / N^{0}_ε(t)` along a geometric `ε` list.
pub fn ratio_experiment(
    cfg: &SolConfig,
    t: f64,
    eps_list: &[f64],
    alpha: f64,
    opts: &SweepOptions,
) -> Result<RatioSeries, ExperimentError> {
    let with_alpha = cfg.with_alpha(alpha)?;
    let at_zero = cfg.with_alpha(0.0)?;
    let a = sweep_epsilon(&with_alpha, t, eps_list, opts)?;
    let z = sweep_epsilon(&at_zero, t, eps_list, opts)?;
    let points: Vec<RatioPoint> = a
        .rows
        .iter()
        .zip(&z.rows)
        .map(|(ra, rz)| RatioPoint {
            eps: ra.eps,
            total_alpha: ra.total,
            total_zero: rz.total,
            ratio: ra.total as f64 / rz.total as f64,
        })
        .collect();
    let last = points.last().map(|p| p.ratio).unwrap_or(f64::NAN);
    let stable = points.len() >= 3 && {
        let tail: Vec<f64> = points[points.len() - 3..].iter().map(|p| p.ratio).collect();
        let hi = tail.iter().cloned().fold(f64::MIN, f64::max);
        let lo = tail.iter().cloned().fold(f64::MAX, f64::min);
        hi <= 1.15 * lo
    };
    Ok(RatioSeries { t, alpha, points, last, stable, reference: 1.5 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::MonodromyMatrix;

    fn golden(alpha: f64) -> SolConfig {
        SolConfig::new(MonodromyMatrix::new(2, 1, 1, 1).unwrap(), alpha, None).unwrap()
    }

    fn synthetic(f: impl Fn(f64) -> f64, eps: &[f64]) -> SweepTable {
        let rows = eps
            .iter()
            .map(|&e| SweepRow {
                eps: e,
                t: 1.0,
                total: f(e).round() as u64,
                zero_sector: 0,
                orbit_count: 0,
                wall_time_s: 0.0,
                near_ties: 0,
                perturbed: false,
                weyl_ratio: None,
            })
            .collect();
        SweepTable { rows, non_monotone: false }
    }

    #[test]
    fn geometric_list() {
        let g = geometric(0.2, 0.02, 9);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], 0.2);
        assert_eq!(g[8], 0.02);
        assert!(check_eps_list(&g).is_ok());
        assert!(check_eps_list(&[0.5, 0.4, 0.1]).is_err());
        assert!(check_eps_list(&[0.0]).is_err());
    }

    #[test]
    fn exact_power_law() {
        // 7ε⁻² is an integer on powers of 1/2.
        let eps: Vec<f64> = (1..=6).map(|k| 0.5f64.powi(k)).collect();
        let fit = fit_powerlaw(&synthetic(|e| 7.0 / (e * e), &eps), 1.0).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!((fit.constant_hat - 7.0).abs() < 1e-12);
        assert!((fit.intercept_constant - 7.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn corrected_power_law() {
        let eps = geometric(0.2, 0.02, 9);
        let fit = fit_powerlaw(&synthetic(|e| 7.0 / (e * e) + 3.0 / e, &eps), 1.0).unwrap();
        assert!(fit.slope > -2.0 && fit.slope < -1.9, "{}", fit.slope);
    }

    #[test]
    fn insufficient_data() {
        let eps = geometric(0.2, 0.1, 3);
        assert!(matches!(
            fit_powerlaw(&synthetic(|e| 7.0 / (e * e), &eps), 1.0),
            Err(ExperimentError::InsufficientData(_))
        ));
        let eps = geometric(0.9, 0.5, 6);
        assert!(matches!(
            fit_powerlaw(&synthetic(|_| 3.0, &eps), 1.0),
            Err(ExperimentError::InsufficientData(_))
        ));
    }

    #[test]
    fn sweep_examples() {
        let cfg = golden(0.0);
        let one = sweep_epsilon(&cfg, 1.0, &[0.1], &SweepOptions::default()).unwrap();
        assert_eq!(one.rows.len(), 1);
        assert_eq!(one.rows[0].total, 3);
        let table = sweep_epsilon(&cfg, 4.0, &geometric(0.2, 0.05, 5), &SweepOptions::default()).unwrap();
        assert!(!table.non_monotone);
        assert!(table.rows.windows(2).all(|w| w[0].eps > w[1].eps));
        let csv = table.to_csv();
        assert!(csv.starts_with("eps,t,total,zero_sector,orbit_count,wall_time_s\n"));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn weyl_rows_are_stable_under_refinement() {
        let cfg = golden(0.0);
        let opts = SweepOptions::default();
        let coarse = weyl_sweep(&cfg, 0.4, &[50.0, 100.0, 150.0], &opts).unwrap();
        let fine = weyl_sweep(&cfg, 0.4, &[50.0, 75.0, 100.0, 125.0, 150.0], &opts).unwrap();
        for row in &coarse.rows {
            assert!(row.weyl_ratio.unwrap() > 0.0);
            assert!(fine.rows.contains(row));
        }
        assert!(fine.to_csv().lines().next().unwrap().ends_with(",weyl_ratio"));
    }

    #[test]
    fn ratio_with_itself_is_one() {
        let cfg = golden(0.0);
        let series = ratio_experiment(&cfg, 4.0, &geometric(0.2, 0.05, 4), 0.0, &SweepOptions::default()).unwrap();
        assert!(series.points.iter().all(|p| p.ratio == 1.0));
        assert!(series.stable);
    }
}
