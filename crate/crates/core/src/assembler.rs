//! Reduction of `Δ_ε` on `M³_A` to one circle operator and one modified
//! Mathieu operator per monodromy orbit, and assembly of `N_ε(t)`.
//!
//! With the left-invariant frame `X₁ = e^w∂_u`, `X₂ = e^{−w}∂_v`, `X₃ = ∂_w`,
//!
//! ```text
//! Δ_ε = −[(X₁ + αX₂)² + ε²(−αX₁ + X₂)²]/(1 + α²) − ε²X₃².
//! ```
//!
//! A Fourier mode `f(w)·e^{2πi b·(u,v)}`, `b ∈ Γ*`, sees
//! `−ε²f'' + (P₁e^{2w} + P₂e^{−2w} + P₃)f`. The gluing `w ↦ w + ln λ` sends
//! `b` to `D·b`, so every orbit of `D` on `Γ*∖{0}` unrolls to one operator on
//! the whole line, and `b = 0` gives `−ε²d²/dw²` on a circle of length `ln λ`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::lattice::{
    eigendata_with_covolume, enumerate_orbits, DualPoint, EigenData, LatticeError,
    MonodromyMatrix, OrbitRep,
};
use crate::schrodinger::{
    count_below, count_below_shooting, eigenvalues_extrapolated, mathieu_form, CountResult,
    ExpPotential, MathieuForm, SolverError,
};

const TWO_PI_SQ: f64 = 4.0 * PI * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("orbit ({m}, {n}) with nu = {nu:.6}: {source}")]
    Orbit {
        m: i64,
        n: i64,
        nu: f64,
        #[source]
        source: SolverError,
    },
    #[error("zero frequency has no orbit operator")]
    ZeroFrequency,
    #[error("eps must lie in (0, 1], got {0}")]
    InvalidEps(f64),
    #[error("t must be finite and non-negative, got {0}")]
    InvalidThreshold(f64),
    #[error("alpha must be finite, got {0}")]
    InvalidAlpha(f64),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Manifold, metric and foliation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolConfig {
    pub matrix: MonodromyMatrix,
    pub eigen: EigenData,
    /// Slope of the foliating field `X(1, α, 0)`.
    pub alpha: f64,
    pub covolume_override: Option<f64>,
}

impl SolConfig {
    pub fn new(
        matrix: MonodromyMatrix,
        alpha: f64,
        covolume_override: Option<f64>,
    ) -> Result<Self, AssemblyError> {
        if !alpha.is_finite() {
            return Err(AssemblyError::InvalidAlpha(alpha));
        }
        let eigen = eigendata_with_covolume(&matrix, covolume_override.unwrap_or(1.0))?;
        Ok(Self { matrix, eigen, alpha, covolume_override })
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self, AssemblyError> {
        Self::new(self.matrix, alpha, self.covolume_override)
    }
}

/// Which 1D counter evaluates the orbit operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Counter {
    #[default]
    Sturm,
    Shooting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub jobs: usize,
    pub counter: Counter,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { jobs: 1, counter: Counter::Sturm }
    }
}

impl RunOptions {
    pub fn with_jobs(jobs: usize) -> Self {
        Self { jobs: jobs.max(1), ..Self::default() }
    }

    fn pool(&self) -> Result<rayon::ThreadPool, AssemblyError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .map_err(|e| AssemblyError::Pool(e.to_string()))
    }
}

/// `N_ε(t)` split into the zero-frequency sector and per-orbit counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralCount {
    pub t: f64,
    pub eps: f64,
    pub zero_sector: u64,
    pub orbit_contribs: Vec<(OrbitRep, u64)>,
    pub total: u64,
    pub near_ties: u64,
}

impl SpectralCount {
    pub fn orbit_total(&self) -> u64 {
        self.orbit_contribs.iter().map(|(_, c)| c).sum()
    }
}

fn check_eps(eps: f64) -> Result<(), AssemblyError> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(AssemblyError::InvalidEps(eps))
    }
}

/// Eigenvalues `ε²(2πm/ln λ)² ≤ t` of the circle operator, with multiplicity.
pub fn zero_sector_count(e: &EigenData, eps: f64, t: f64) -> u64 {
    if t < 0.0 {
        return 0;
    }
    let m_max = (e.ln_lambda * t.sqrt() / (2.0 * PI * eps)).floor() as u64;
    2 * m_max + 1
}

/// The `k` smallest circle eigenvalues in ascending order.
pub fn zero_sector_eigenvalues(e: &EigenData, eps: f64, k: usize) -> Vec<f64> {
    let step = 2.0 * PI * eps / e.ln_lambda;
    let mut out = Vec::with_capacity(k);
    let mut m = 0u64;
    while out.len() < k {
        let v = (step * m as f64).powi(2);
        out.push(v);
        if m > 0 && out.len() < k {
            out.push(v);
        }
        m += 1;
    }
    out
}

/// Coefficients of the reduced operator for the dual frequency `b`.
pub fn orbit_potential(
    cfg: &SolConfig,
    eps: f64,
    b: &DualPoint,
) -> Result<ExpPotential, AssemblyError> {
    check_eps(eps)?;
    if b.is_zero() {
        return Err(AssemblyError::ZeroFrequency);
    }
    let alpha = cfg.alpha;
    let norm = TWO_PI_SQ / (1.0 + alpha * alpha);
    let eps2 = eps * eps;
    let p1 = norm * (1.0 + eps2 * alpha * alpha) * b.b1 * b.b1;
    let p2 = norm * (alpha * alpha + eps2) * b.b2 * b.b2;
    let p3 = norm * 2.0 * alpha * (1.0 - eps2) * b.b1 * b.b2;
    ExpPotential::new(eps, p1, p2, p3).map_err(|source| AssemblyError::Orbit {
        m: b.m,
        n: b.n,
        nu: b.nu,
        source,
    })
}

/// Largest `|ν|` whose well bottom is `≤ t`: `(y_plus, y_minus)` for
/// `sign(ν)·sign(α) > 0` and `< 0` respectively.
pub fn orbit_bounds(alpha: f64, eps: f64, t: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    let a2 = alpha * alpha;
    let eps2 = eps * eps;
    let root = ((1.0 + eps2 * a2) * (a2 + eps2)).sqrt();
    let shear = alpha.abs() * (1.0 - eps2);
    let y_plus = t * (1.0 + a2) / (2.0 * TWO_PI_SQ * (root + shear));
    // root − shear = ε²(1 + α²)²/(root + shear), without the cancellation.
    let y_minus = t * (root + shear) / (2.0 * TWO_PI_SQ * eps2 * (1.0 + a2));
    (y_plus, y_minus)
}

/// Orbits whose well bottom can be `≤ t`, as `(ν > 0 bound, ν < 0 bound)` for the scan.
fn signed_bounds(alpha: f64, eps: f64, t: f64) -> (f64, f64) {
    let (y_plus, y_minus) = orbit_bounds(alpha, eps, t);
    let slack = 1.0 + 1e-9;
    if alpha >= 0.0 {
        (y_plus * slack, y_minus * slack)
    } else {
        (y_minus * slack, y_plus * slack)
    }
}

/// The Mathieu form of an orbit representative.
pub fn orbit_form(cfg: &SolConfig, eps: f64, rep: &OrbitRep) -> Result<MathieuForm, AssemblyError> {
    Ok(mathieu_form(&orbit_potential(cfg, eps, &rep.point)?))
}

/// `N_ε(t) = #{λ ≤ t}` with multiplicity.
pub fn count_spectrum(cfg: &SolConfig, eps: f64, t: f64) -> Result<SpectralCount, AssemblyError> {
    count_spectrum_with(cfg, eps, t, &RunOptions::default())
}

pub fn count_spectrum_with(
    cfg: &SolConfig,
    eps: f64,
    t: f64,
    opts: &RunOptions,
) -> Result<SpectralCount, AssemblyError> {
    check_eps(eps)?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(AssemblyError::InvalidThreshold(t));
    }
    let e = &cfg.eigen;
    let zero_sector = zero_sector_count(e, eps, t);
    let band = 1e-9 * t.max(1.0);
    let step = 2.0 * PI * eps / e.ln_lambda;
    let zero_ties = {
        let m = (t.sqrt() / step).round();
        if m > 0.0 && ((step * m).powi(2) - t).abs() <= band {
            2
        } else {
            0
        }
    };

    let (y_pos, y_neg) = signed_bounds(cfg.alpha, eps, t);
    let reps = enumerate_orbits(e, y_pos, y_neg)?;
    let forms = reps
        .iter()
        .map(|r| orbit_form(cfg, eps, r).map(|f| (*r, f)))
        .collect::<Result<Vec<_>, _>>()?;
    let live: Vec<(OrbitRep, MathieuForm)> =
        forms.into_iter().filter(|(_, f)| f.vmin() <= t).collect();

    let count_one = |(rep, form): &(OrbitRep, MathieuForm)| -> Result<(OrbitRep, CountResult), AssemblyError> {
        let result = match opts.counter {
            Counter::Sturm => count_below(form, t),
            Counter::Shooting => count_below_shooting(form, t),
        };
        result.map(|r| (*rep, r)).map_err(|source| AssemblyError::Orbit {
            m: rep.point.m,
            n: rep.point.n,
            nu: rep.point.nu,
            source,
        })
    };
    let results: Vec<(OrbitRep, CountResult)> = if opts.jobs > 1 {
        opts.pool()?
            .install(|| live.par_iter().map(count_one).collect::<Result<Vec<_>, _>>())?
    } else {
        live.iter().map(count_one).collect::<Result<Vec<_>, _>>()?
    };

    let near_ties = zero_ties + results.iter().map(|(_, r)| r.near_ties).sum::<u64>();
    let orbit_contribs: Vec<(OrbitRep, u64)> =
        results.into_iter().map(|(rep, r)| (rep, r.count)).collect();
    let total = zero_sector + orbit_contribs.iter().map(|(_, c)| c).sum::<u64>();
    Ok(SpectralCount { t, eps, zero_sector, orbit_contribs, total, near_ties })
}

/// The `k` smallest eigenvalues of `Δ_ε`, ascending.
pub fn lowest_eigenvalues(cfg: &SolConfig, eps: f64, k: usize) -> Result<Vec<f64>, AssemblyError> {
    lowest_eigenvalues_with(cfg, eps, k, &RunOptions::default())
}

pub fn lowest_eigenvalues_with(
    cfg: &SolConfig,
    eps: f64,
    k: usize,
    opts: &RunOptions,
) -> Result<Vec<f64>, AssemblyError> {
    check_eps(eps)?;
    if k == 0 {
        return Ok(Vec::new());
    }
    let e = &cfg.eigen;
    let circle = zero_sector_eigenvalues(e, eps, k);
    // The k-th circle eigenvalue is itself an eigenvalue, hence an upper bound.
    let bound = circle[k - 1];
    if k == 1 {
        return Ok(circle);
    }
    let mut ceiling = zero_sector_eigenvalues(e, eps, 2)[1].min(bound);
    loop {
        let found = eigenvalues_up_to(cfg, eps, ceiling, k, opts)?;
        if found.len() >= k || ceiling >= bound {
            let mut found = found;
            found.truncate(k);
            return Ok(found);
        }
        ceiling = (2.0 * ceiling).min(bound);
    }
}

fn eigenvalues_up_to(
    cfg: &SolConfig,
    eps: f64,
    ceiling: f64,
    k: usize,
    opts: &RunOptions,
) -> Result<Vec<f64>, AssemblyError> {
    let e = &cfg.eigen;
    let mut values: Vec<f64> = zero_sector_eigenvalues(e, eps, k)
        .into_iter()
        .filter(|&v| v <= ceiling)
        .collect();
    let (y_pos, y_neg) = signed_bounds(cfg.alpha, eps, ceiling);
    let reps = enumerate_orbits(e, y_pos, y_neg)?;
    let one = |rep: &OrbitRep| -> Result<Vec<f64>, AssemblyError> {
        let form = orbit_form(cfg, eps, rep)?;
        if form.vmin() > ceiling {
            return Ok(Vec::new());
        }
        eigenvalues_extrapolated(&form, ceiling, k).map_err(|source| AssemblyError::Orbit {
            m: rep.point.m,
            n: rep.point.n,
            nu: rep.point.nu,
            source,
        })
    };
    let per_orbit: Vec<Vec<f64>> = if opts.jobs > 1 {
        opts.pool()?
            .install(|| reps.par_iter().map(one).collect::<Result<Vec<_>, _>>())?
    } else {
        reps.iter().map(one).collect::<Result<Vec<_>, _>>()?
    };
    values.extend(per_orbit.into_iter().flatten());
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// `vol(M, g) = covol(Γ)·ln λ`.
pub fn volume(cfg: &SolConfig) -> f64 {
    cfg.eigen.covolume * cfg.eigen.ln_lambda
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden(alpha: f64) -> SolConfig {
        SolConfig::new(MonodromyMatrix::new(2, 1, 1, 1).unwrap(), alpha, None).unwrap()
    }

    #[test]
    fn zero_sector_examples() {
        let cfg = golden(0.0);
        let e = &cfg.eigen;
        assert_eq!(zero_sector_count(e, 0.1, 1.0), 3);
        assert_eq!(zero_sector_count(e, 0.1, 0.0), 1);
        for t in [0.5, 2.0, 7.0, 30.0] {
            let a = zero_sector_count(e, 0.1, t) as i64;
            let b = zero_sector_count(e, 0.05, t) as i64;
            assert!((b - 2 * a).abs() <= 2, "t = {t}: {a} -> {b}");
        }
    }

    #[test]
    fn zero_sector_eigenvalues_pair_up() {
        let cfg = golden(0.0);
        let ev = zero_sector_eigenvalues(&cfg.eigen, 0.5, 5);
        assert_eq!(ev[0], 0.0);
        assert!((ev[1] - 10.656).abs() < 1e-3 && ev[1] == ev[2]);
        assert_eq!(ev[3], ev[4]);
    }

    #[test]
    fn orbit_potential_alpha_zero() {
        let cfg = golden(0.0);
        let d1 = cfg.eigen.dual_point(1, 0);
        let p = orbit_potential(&cfg, 0.1, &d1).unwrap();
        assert!((p.p1 / 46.221 - 1.0).abs() < 5e-5, "{}", p.p1);
        assert!((p.p2 / 0.067438 - 1.0).abs() < 5e-5, "{}", p.p2);
        assert_eq!(p.p3, 0.0);
        let mf = mathieu_form(&p);
        // second route: a = 8π²ε|ν|
        let a_direct = 8.0 * PI * PI * 0.1 * d1.nu.abs();
        assert!((mf.a - a_direct).abs() < 1e-12);
        assert!((mf.a - 3.5310).abs() < 1e-3);
    }

    #[test]
    fn orbit_potential_alpha_one() {
        let cfg = golden(1.0);
        let b = cfg.eigen.dual_point(0, 1);
        assert!(b.nu < 0.0);
        let mf = mathieu_form(&orbit_potential(&cfg, 0.1, &b).unwrap());
        assert!((mf.a - 17.831).abs() < 1e-3, "{}", mf.a);
        assert!((mf.c + 17.478).abs() < 1e-3, "{}", mf.c);
        assert!((mf.vmin() - 0.3531).abs() < 1e-4, "{}", mf.vmin());
        assert_eq!(
            orbit_potential(&cfg, 0.1, &cfg.eigen.dual_point(0, 0)),
            Err(AssemblyError::ZeroFrequency)
        );
    }

    #[test]
    fn well_bottom_is_positive() {
        for alpha in [-3.0, -0.2, 0.0, 0.7, 5.0] {
            let cfg = golden(alpha);
            for eps in [0.01, 0.3, 1.0] {
                for (m, n) in [(1, 0), (0, 1), (2, -3), (-4, 1)] {
                    let b = cfg.eigen.dual_point(m, n);
                    let mf = mathieu_form(&orbit_potential(&cfg, eps, &b).unwrap());
                    assert!(mf.vmin() > 0.0, "alpha {alpha} eps {eps} ({m},{n})");
                }
            }
        }
    }

    #[test]
    fn orbit_bound_examples() {
        let (yp, ym) = orbit_bounds(0.0, 0.1, 1.0);
        let expected = 1.0 / (8.0 * PI * PI * 0.1);
        assert!((yp - 0.12665).abs() < 1e-5 && (yp - expected).abs() < 1e-14);
        assert!((ym - expected).abs() < 1e-14);

        let (yp, ym) = orbit_bounds(1.0, 0.1, 1.0);
        assert!((yp - 0.012665).abs() < 1e-6, "{yp}");
        // 2 / (2(2π)²·2ε²) in closed form; the numeric quote of this bound is off by 2.
        assert!((ym - 2.0 / (2.0 * TWO_PI_SQ * 0.02)).abs() < 1e-12, "{ym}");
        assert!((ym - 1.26651).abs() < 1e-5);

        let (yp, ym) = orbit_bounds(1.0, 0.1, 1e-12);
        assert!(yp < 1e-12 && ym < 1e-10);
    }

    #[test]
    fn orbit_bound_matches_well_bottom() {
        // An orbit sits exactly at the bound when its well bottom equals t.
        for alpha in [0.0, 0.5, -1.5] {
            let cfg = golden(alpha);
            let eps = 0.2;
            for (m, n) in [(1, 0), (0, 1), (3, 1)] {
                let b = cfg.eigen.dual_point(m, n);
                let mf = mathieu_form(&orbit_potential(&cfg, eps, &b).unwrap());
                let (yp, ym) = orbit_bounds(alpha, eps, mf.vmin());
                let agree = b.nu * alpha >= 0.0;
                let y = if agree { yp } else { ym };
                assert!((y / b.nu.abs() - 1.0).abs() < 1e-9, "alpha {alpha} ({m},{n})");
            }
        }
    }

    #[test]
    fn count_examples() {
        let cfg = golden(0.0);
        let sc = count_spectrum(&cfg, 0.1, 1.0).unwrap();
        assert_eq!(sc.total, 3);
        assert!(sc.orbit_contribs.is_empty());
        assert_eq!(count_spectrum(&cfg, 0.1, 0.0).unwrap().total, 1);

        let cfg = golden(1.0);
        let sc = count_spectrum(&cfg, 0.1, 1.0).unwrap();
        assert_eq!(sc.zero_sector, 3);
        assert_eq!(sc.orbit_contribs.len(), 2);
        assert_eq!(sc.total, 5);
        assert_eq!(sc.total, sc.zero_sector + sc.orbit_total());
    }

    #[test]
    fn count_is_monotone_and_schedule_free() {
        let cfg = golden(0.7);
        let mut last = 0;
        for i in 0..50 {
            let t = 0.5 + 0.8 * i as f64;
            let serial = count_spectrum(&cfg, 0.2, t).unwrap();
            assert!(serial.total >= last);
            last = serial.total;
            if i % 10 == 0 {
                let par = count_spectrum_with(&cfg, 0.2, t, &RunOptions::with_jobs(4)).unwrap();
                assert_eq!(serial, par);
            }
        }
    }

    #[test]
    fn conjugate_orbits_contribute_equally() {
        let cfg = golden(1.3);
        let sc = count_spectrum(&cfg, 0.15, 12.0).unwrap();
        for (rep, c) in &sc.orbit_contribs {
            let mirror = sc
                .orbit_contribs
                .iter()
                .find(|(r, _)| r.point.m == -rep.point.m && r.point.n == -rep.point.n)
                .expect("−b is enumerated alongside b");
            assert_eq!(*c, mirror.1);
        }
    }

    #[test]
    fn lowest_eigenvalue_examples() {
        let cfg = golden(0.0);
        assert_eq!(lowest_eigenvalues(&cfg, 0.5, 1).unwrap(), vec![0.0]);
        let ev = lowest_eigenvalues(&cfg, 0.5, 3).unwrap();
        assert!(ev[0].abs() < 1e-12);
        assert!((ev[1] - 10.656).abs() < 1e-3 && (ev[2] - 10.656).abs() < 1e-3);
    }

    #[test]
    fn eps_one_is_independent_of_alpha() {
        let base = lowest_eigenvalues(&golden(0.0), 1.0, 12).unwrap();
        for alpha in [0.4, 1.0, -2.5] {
            let ev = lowest_eigenvalues(&golden(alpha), 1.0, 12).unwrap();
            for (a, b) in base.iter().zip(&ev) {
                assert!((a - b).abs() <= 1e-9 * a.max(1.0), "alpha {alpha}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn volume_examples() {
        assert!((volume(&golden(0.0)) - 0.96242).abs() < 1e-5);
        let cfg = SolConfig::new(MonodromyMatrix::new(2, 1, 1, 1).unwrap(), 0.0, Some(2.0)).unwrap();
        assert!((volume(&cfg) - 1.92485).abs() < 1e-5);
        let cfg = SolConfig::new(MonodromyMatrix::new(5, 2, 2, 1).unwrap(), 0.0, None).unwrap();
        assert!(volume(&cfg) > 0.0);
    }

    #[test]
    fn invalid_inputs() {
        let cfg = golden(0.0);
        assert!(matches!(count_spectrum(&cfg, 0.0, 1.0), Err(AssemblyError::InvalidEps(_))));
        assert!(matches!(count_spectrum(&cfg, 1.5, 1.0), Err(AssemblyError::InvalidEps(_))));
        assert!(matches!(
            count_spectrum(&cfg, 0.5, -1.0),
            Err(AssemblyError::InvalidThreshold(_))
        ));
    }
}
