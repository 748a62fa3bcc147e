//! Acceptance runner. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Artifacts land in
//! `$CARGO_TARGET_TMPDIR/acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use solspec::assembler::{
    count_spectrum_with, lowest_eigenvalues, volume, zero_sector_count, Counter, RunOptions, SolConfig,
};
use solspec::experiments::{
    fit_powerlaw, geometric, ratio_experiment, sweep_epsilon, trends_toward_one, weyl_sweep, FitResult,
    SweepOptions, SweepTable,
};
use solspec::lattice::MonodromyMatrix;
use solspec::oracle3d::{lowest_eigenvalues_3d, Grid3};
use solspec::report::to_json;
use solspec::schrodinger::{count_below, count_below_shooting, eigenvalues_below, MathieuForm};

struct Outcome {
    id: &'static str,
    pass: Option<bool>,
    detail: String,
}

fn config(alpha: f64) -> SolConfig {
    SolConfig::new(MonodromyMatrix::new(2, 1, 1, 1).unwrap(), alpha, None).unwrap()
}

/// The 200-case modified-Mathieu battery.
fn battery() -> Vec<(MathieuForm, f64)> {
    (0..200)
        .map(|i| {
            let a = 10f64.powf(-1.0 + 3.0 * i as f64 / 199.0);
            let c = [-0.5 * a, 0.0, a][i % 3];
            let eps = [0.01, 0.1, 0.5][(i / 3) % 3];
            let factor = [1.5, 4.0, 20.0][(i / 9) % 3];
            let mf = MathieuForm::new(eps, a, c, 0.0);
            let t = factor * mf.vmin();
            (mf, t)
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    for (i, (mf, t)) in battery().iter().enumerate() {
        let sturm = count_below(mf, *t).map(|r| r.count);
        let shooting = count_below_shooting(mf, *t).map(|r| r.count);
        if sturm.is_err() || sturm != shooting {
            mismatches.push(format!("case {i}: {sturm:?} vs {shooting:?}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: "1 dual-solver exactness",
        pass: Some(mismatches.is_empty() && secs < 60.0),
        detail: format!("{} mismatches of 200, {secs:.1} s {}", mismatches.len(), mismatches.join("; ")),
    }
}

fn criterion_1b() -> Outcome {
    let mut bad = Vec::new();
    for alpha in [0.0, 1.0] {
        let cfg = config(alpha);
        for (eps, t) in [(0.2, 4.0), (0.05, 4.0), (0.02, 2.0), (0.4, 200.0)] {
            let sturm = count_spectrum_with(&cfg, eps, t, &RunOptions::with_jobs(4)).unwrap().total;
            let run = RunOptions { jobs: 4, counter: Counter::Shooting };
            let shooting = count_spectrum_with(&cfg, eps, t, &run).map(|c| c.total);
            if shooting.as_ref().ok() != Some(&sturm) {
                bad.push(format!("alpha {alpha} eps {eps} t {t}: {sturm} vs {shooting:?}"));
            }
        }
    }
    Outcome {
        id: "1b shooting totals on sweep configurations",
        pass: Some(bad.is_empty()),
        detail: if bad.is_empty() { "8 configurations agree".into() } else { bad.join("; ") },
    }
}

fn max_rel(reference: &[f64], other: &[f64]) -> f64 {
    reference
        .iter()
        .zip(other)
        .skip(1)
        .map(|(r, o)| ((o - r) / r).abs())
        .fold(0.0, f64::max)
}

fn criterion_2(artifacts: &mut BTreeMap<String, String>) -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut lines = Vec::new();
    let mut records = Vec::new();
    for alpha in [0.0, 1.0] {
        for eps in [1.0, 0.5] {
            let cfg = config(alpha);
            let asm = lowest_eigenvalues(&cfg, eps, 10).unwrap();
            let o16 = lowest_eigenvalues_3d(&cfg, eps, &Grid3::cube(16).unwrap(), 10).unwrap();
            let o24 = lowest_eigenvalues_3d(&cfg, eps, &Grid3::cube(24).unwrap(), 10).unwrap();
            let (e16, e24) = (max_rel(&asm, &o16), max_rel(&asm, &o24));
            let ground = asm[0].abs().max(o16[0].abs()).max(o24[0].abs());
            let ok = e16 <= 0.05 && e24 < e16 && ground < 1e-6;
            pass &= ok;
            lines.push(format!("a={alpha} e={eps}: {e16:.4} -> {e24:.4}"));
            records.push(json!({
                "alpha": alpha, "eps": eps, "assembler": asm, "grid16": o16, "grid24": o24,
                "max_rel_16": e16, "max_rel_24": e24,
            }));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 600.0;
    artifacts.insert("oracle_compare.json".into(), to_json(&records).unwrap());
    Outcome { id: "2 decomposition oracle", pass: Some(pass), detail: format!("{} ({secs:.0} s)", lines.join(", ")) }
}

fn criterion_3() -> Outcome {
    let cfg = config(0.0);
    let e = &cfg.eigen;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = Vec::new();
    for _ in 0..100 {
        let eps: f64 = 10f64.powf(rng.gen_range(-2.0..0.0));
        let t: f64 = 10f64.powf(rng.gen_range(-1.0..3.0));
        let step = eps * 2.0 * std::f64::consts::PI / e.ln_lambda;
        let mut m = 0i64;
        while (step * (m + 1) as f64).powi(2) <= t {
            m += 1;
        }
        let enumerated = (2 * m + 1) as u64;
        let formula = zero_sector_count(e, eps, t);
        if enumerated != formula {
            bad.push(format!("eps {eps} t {t}: {enumerated} vs {formula}"));
        }
    }
    let regression = zero_sector_count(e, 0.1, 1.0);
    let lnl_ok = (e.ln_lambda - 0.96242).abs() < 5e-6;
    Outcome {
        id: "3 zero-sector closed form",
        pass: Some(bad.is_empty() && regression == 3 && lnl_ok),
        detail: format!("{} of 100 disagree, ln lambda {:.5} eps 0.1 t 1 -> {regression}", bad.len(), e.ln_lambda),
    }
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut cases = 0;
    for (mf, t) in battery() {
        if mf.eps * (2.0 * mf.a).sqrt() / mf.a > 0.01 {
            continue;
        }
        cases += 1;
        let ground = eigenvalues_below(&mf, t, 1).unwrap()[0];
        let harmonic = mf.harmonic_ground();
        worst = worst.max(((ground - harmonic) / harmonic).abs());
        worst_gap = worst_gap.max(((ground - harmonic) / (harmonic - mf.vmin())).abs());
    }
    Outcome {
        id: "4 harmonic limit",
        pass: Some(cases > 0 && worst <= 0.01),
        detail: format!("{cases} cases, max rel {worst:.2e} (relative to zero-point energy {worst_gap:.2e})"),
    }
}

/// Everything the sweep criteria need, computed with one worker count.
struct Sweeps {
    weyl: SweepTable,
    fits: BTreeMap<(i64, i64), FitResult>,
    /// `N·ε²/t^{3/2}` at the smallest `ε`.
    constants: BTreeMap<(i64, i64), f64>,
    artifacts: BTreeMap<String, String>,
}

fn key(alpha: f64, t: f64) -> (i64, i64) {
    ((alpha * 100.0).round() as i64, t.round() as i64)
}

fn sweeps(jobs: usize) -> Sweeps {
    let opts = SweepOptions { run: RunOptions::with_jobs(jobs), timing: false };
    let eps_list = geometric(0.2, 0.02, 9);
    let mut artifacts = BTreeMap::new();

    let cfg0 = config(0.0);
    let ts: Vec<f64> = (2..=8).map(|i| 100.0 * i as f64).collect();
    let weyl = weyl_sweep(&cfg0, 0.4, &ts, &opts).unwrap();
    artifacts.insert("weyl.csv".into(), weyl.to_csv());

    let mut fits = BTreeMap::new();
    let mut constants = BTreeMap::new();
    let runs = [(0.0, 4.0), (1.0, 4.0), (0.5, 4.0), (2.0, 4.0), (0.0, 2.0), (0.0, 8.0), (1.0, 2.0), (1.0, 8.0)];
    for (alpha, t) in runs {
        let cfg = config(alpha);
        let table = sweep_epsilon(&cfg, t, &eps_list, &opts).unwrap();
        let last = table.rows.last().unwrap();
        constants.insert(key(alpha, t), last.total as f64 * last.eps * last.eps / t.powf(1.5));
        let fit = fit_powerlaw(&table, volume(&cfg));
        let name = format!("fit_alpha{alpha}_t{t}");
        artifacts.insert(format!("{name}.csv"), table.to_csv());
        let body = match &fit {
            Ok(fit) => json!({ "alpha": alpha, "volume": volume(&cfg), "fit": fit, "table": table }),
            Err(e) => json!({ "alpha": alpha, "volume": volume(&cfg), "fit_error": e.to_string(), "table": table }),
        };
        artifacts.insert(format!("{name}.json"), to_json(&body).unwrap());
        if let Ok(fit) = fit {
            fits.insert(key(alpha, t), fit);
        }
    }
    for alpha in [0.5, 1.0, 2.0] {
        let series = ratio_experiment(&cfg0, 4.0, &eps_list, alpha, &opts).unwrap();
        artifacts.insert(format!("ratio_alpha{alpha}_t4.json"), to_json(&series).unwrap());
    }
    Sweeps { weyl, fits, constants, artifacts }
}

fn criterion_5(s: &Sweeps) -> Outcome {
    let last = s.weyl.rows.last().and_then(|r| r.weyl_ratio).unwrap_or(f64::NAN);
    let trend = trends_toward_one(&s.weyl);
    let ratios: Vec<String> = s.weyl.rows.iter().filter_map(|r| r.weyl_ratio).map(|r| format!("{r:.4}")).collect();
    Outcome {
        id: "5 classical Weyl law",
        pass: Some((0.9..=1.1).contains(&last) && trend),
        detail: format!("ratios t=200..800 [{}], trends toward one: {trend}", ratios.join(", ")),
    }
}

fn criterion_6(s: &Sweeps) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for alpha in [0.0, 1.0] {
        let slope = s.fits[&key(alpha, 4.0)].slope;
        let ok = (-2.15..=-1.85).contains(&slope);
        pass &= ok;
        parts.push(format!("alpha {alpha}: {slope:.4}{}", if ok { "" } else { " (out of [-2.15, -1.85])" }));
    }
    Outcome { id: "6 adiabatic scaling exponent", pass: Some(pass), detail: parts.join(", ") }
}

fn pairwise_spread(values: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            worst = worst.max((a - b).abs() / a.min(*b));
        }
    }
    worst
}

fn criterion_7(s: &Sweeps) -> Outcome {
    let c: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|&a| s.constants[&key(a, 4.0)]).collect();
    let spread = pairwise_spread(&c);
    Outcome {
        id: "7 alpha-independence of the constant",
        pass: Some(spread <= 0.10),
        detail: format!("constant_hat {:.5}/{:.5}/{:.5} for alpha 0.5/1/2, spread {spread:.4}", c[0], c[1], c[2]),
    }
}

fn criterion_8(s: &Sweeps) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for alpha in [0.0, 1.0] {
        let c: Vec<f64> = [2.0, 4.0, 8.0].iter().map(|&t| s.constants[&key(alpha, t)]).collect();
        let spread = pairwise_spread(&c);
        pass &= spread <= 0.10;
        parts.push(format!("alpha {alpha}: {:.5}/{:.5}/{:.5} spread {spread:.4}", c[0], c[1], c[2]));
    }
    Outcome { id: "8 t^{3/2} dependence", pass: Some(pass), detail: parts.join(", ") }
}

fn criterion_9(s: &Sweeps) -> Outcome {
    let mut parts = Vec::new();
    for alpha in [0.0, 1.0] {
        let fit = &s.fits[&key(alpha, 4.0)];
        let ratios: Vec<String> = fit.comparisons.iter().map(|c| format!("{} x{:.3}", c.name, c.ratio)).collect();
        parts.push(format!("alpha {alpha}: {}", ratios.join(" ")));
    }
    let series: serde_json::Value = serde_json::from_str(&s.artifacts["ratio_alpha1_t4.json"]).unwrap();
    parts.push(format!("N(alpha=1)/N(alpha=0) at eps 0.02: {:.4} (reference 1.5)", series["last"]));
    Outcome { id: "9 report-only constants and ratio", pass: None, detail: parts.join("; ") }
}

fn criterion_10(runs: &[(String, BTreeMap<String, String>)]) -> Outcome {
    let (_, first) = &runs[0];
    let mut diffs = Vec::new();
    for (label, other) in &runs[1..] {
        if other.keys().ne(first.keys()) {
            diffs.push(format!("{label}: different artifact set"));
        }
        for (name, bytes) in first {
            if other.get(name) != Some(bytes) {
                diffs.push(format!("{label}: {name}"));
            }
        }
    }
    Outcome {
        id: "10 determinism",
        pass: Some(diffs.is_empty()),
        detail: if diffs.is_empty() {
            format!("{} artifacts identical across {}", first.len(), runs.iter().map(|r| r.0.as_str()).collect::<Vec<_>>().join(", "))
        } else {
            diffs.join("; ")
        },
    }
}

fn main() {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).unwrap();
    let mut outcomes = Vec::new();
    let report = |o: Outcome, outcomes: &mut Vec<Outcome>| {
        let tag = match o.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "INFO",
        };
        println!("[{tag}] {}: {}", o.id, o.detail);
        outcomes.push(o);
    };

    report(criterion_1(), &mut outcomes);
    report(criterion_1b(), &mut outcomes);
    let mut oracle_artifacts = BTreeMap::new();
    report(criterion_2(&mut oracle_artifacts), &mut outcomes);
    report(criterion_3(), &mut outcomes);
    report(criterion_4(), &mut outcomes);

    let first = sweeps(1);
    report(criterion_5(&first), &mut outcomes);
    report(criterion_6(&first), &mut outcomes);
    report(criterion_7(&first), &mut outcomes);
    report(criterion_8(&first), &mut outcomes);
    report(criterion_9(&first), &mut outcomes);

    let mut oracle_again = BTreeMap::new();
    let _ = criterion_2(&mut oracle_again);
    let mut run_a = first.artifacts.clone();
    run_a.extend(oracle_artifacts);
    let mut run_b = sweeps(8).artifacts;
    run_b.extend(oracle_again.clone());
    let mut run_c = sweeps(8).artifacts;
    run_c.extend(oracle_again);
    for (name, bytes) in &run_a {
        fs::write(dir.join(name), bytes).unwrap();
    }
    report(
        criterion_10(&[("jobs 1".into(), run_a), ("jobs 8".into(), run_b), ("jobs 8 rerun".into(), run_c)]),
        &mut outcomes,
    );

    let failed: Vec<&str> = outcomes.iter().filter(|o| o.pass == Some(false)).map(|o| o.id).collect();
    println!("artifacts in {}", dir.display());
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: {} failing: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}
