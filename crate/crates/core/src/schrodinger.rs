//! Spectra of `−ε²d²/dw² + P₁e^{2w} + P₂e^{−2w} + P₃` on the real line.
//!
//! The exponential pair is rewritten as a modified Mathieu well
//! `a·ch(2(w − w₀)) + c`, truncated with Dirichlet ends far enough into the
//! forbidden region, and discretised with second-order central differences.
//! Eigenvalue counts come from one LDLᵀ sign pass over the tridiagonal matrix.
//! A Prüfer-angle shooting count over the same interval serves as an
//! independent cross-check, and a phase-space integral gives the
//! semiclassical count.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::quadrature::adaptive_simpson;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("threshold t = {t} is at or below the well bottom {vmin}")]
    BelowWell { t: f64, vmin: f64 },
    #[error("count did not settle after {refinements} grid refinements (last counts {last:?}); t is probably tied with an eigenvalue")]
    NoConvergence { refinements: u32, last: (u64, u64) },
    #[error("shooting count changes under step halving (counts {counts:?})")]
    StepTooCoarse { counts: Vec<u64> },
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
}

/// `−ε²d²/dw² + p1·e^{2w} + p2·e^{−2w} + p3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpPotential {
    pub eps: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl ExpPotential {
    pub fn new(eps: f64, p1: f64, p2: f64, p3: f64) -> Result<Self, SolverError> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(SolverError::InvalidPotential(format!("eps = {eps}")));
        }
        if !(p1 > 0.0 && p2 > 0.0 && p1.is_finite() && p2.is_finite() && p3.is_finite()) {
            return Err(SolverError::InvalidPotential(format!(
                "need P1 > 0 and P2 > 0, got P1 = {p1}, P2 = {p2}, P3 = {p3}"
            )));
        }
        Ok(Self { eps, p1, p2, p3 })
    }
}

/// `−ε²d²/dw² + a·ch(2(w − w0)) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MathieuForm {
    pub eps: f64,
    pub a: f64,
    pub c: f64,
    pub w0: f64,
}

impl MathieuForm {
    pub fn new(eps: f64, a: f64, c: f64, w0: f64) -> Self {
        Self { eps, a, c, w0 }
    }

    /// The operator `−ε²d²/dx² + a·ch(2μx) + c`, rewritten in `y = μx`.
    /// The spectrum is unchanged; only ε and the centre rescale.
    pub fn with_frequency(eps: f64, a: f64, c: f64, x0: f64, mu: f64) -> Self {
        Self { eps: mu * eps, a, c, w0: mu * x0 }
    }

    /// Bottom of the well.
    pub fn vmin(&self) -> f64 {
        self.a + self.c
    }

    pub fn potential(&self, w: f64) -> f64 {
        self.a * (2.0 * (w - self.w0)).cosh() + self.c
    }

    /// Harmonic approximation of the ground level.
    pub fn harmonic_ground(&self) -> f64 {
        self.vmin() + self.eps * (2.0 * self.a).sqrt()
    }
}

/// Completes `P₁e^{2w} + P₂e^{−2w}` to `a·ch(2(w − w₀))`.
pub fn mathieu_form(p: &ExpPotential) -> MathieuForm {
    MathieuForm {
        eps: p.eps,
        a: 2.0 * (p.p1 * p.p2).sqrt(),
        c: p.p3,
        w0: 0.25 * (p.p2 / p.p1).ln(),
    }
}

/// Knobs of the discretisation. Defaults reproduce the documented behaviour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Lower bound on grid points per shortest local wavelength.
    pub min_points_per_wavelength: f64,
    /// Lower bound on interior grid points.
    pub min_points: usize,
    /// Required tunnelling integral `(1/ε)∫√(V − t)` across each Dirichlet margin.
    pub agmon_margin: f64,
    /// Maximum number of `h → h/2` refinements before giving up.
    pub max_refinements: u32,
    /// Relative half-width of the tie band around the threshold.
    pub tie_band: f64,
    /// Target for the estimated phase error of the discrete count.
    pub count_error_target: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            min_points_per_wavelength: 16.0,
            min_points: 200,
            agmon_margin: 40.0,
            max_refinements: 8,
            tie_band: 1e-9,
            count_error_target: 0.02,
        }
    }
}

/// Dirichlet truncation `[lo, hi]` of the real line with grid step `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationDomain {
    pub lo: f64,
    pub hi: f64,
    pub h: f64,
    /// Half-width of the classically allowed region.
    pub turning: f64,
    /// Forbidden-region margin added beyond each turning point.
    pub margin: f64,
    /// Number of interior grid points.
    pub points: usize,
}

impl TruncationDomain {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

pub fn truncation_domain(mf: &MathieuForm, t: f64) -> Result<TruncationDomain, SolverError> {
    truncation_domain_with(mf, t, &SolverOptions::default())
}

pub fn truncation_domain_with(
    mf: &MathieuForm,
    t: f64,
    opts: &SolverOptions,
) -> Result<TruncationDomain, SolverError> {
    let vmin = mf.vmin();
    if !(t > vmin) {
        return Err(SolverError::BelowWell { t, vmin });
    }
    let turning = 0.5 * ((t - mf.c) / mf.a).acosh();
    let margin = agmon_margin(mf, t, turning, opts.agmon_margin);

    // Phase error of the central-difference count scales like N·(kh)²; size the
    // grid from the semiclassical count so the error stays well below one level.
    let n_sc = semiclassical_count(mf, t);
    let ppw = opts
        .min_points_per_wavelength
        .max(PI * (n_sc / (6.0 * opts.count_error_target)).sqrt());
    let k_max = (t - vmin).sqrt() / mf.eps;
    let h_wave = 2.0 * PI / (k_max * ppw);

    let lo = mf.w0 - (turning + margin);
    let hi = mf.w0 + (turning + margin);
    let width = hi - lo;
    let h_min_points = width / (opts.min_points as f64 + 1.0);
    let h = h_wave.min(h_min_points);
    let points = ((width / h).ceil() as usize).max(opts.min_points + 1) - 1;
    let h = width / (points as f64 + 1.0);
    Ok(TruncationDomain { lo, hi, h, turning, margin, points })
}

// Margin Λ beyond the turning point with (1/ε)∫√(V − t) ≥ target, found by
// doubling and then bisection.
fn agmon_margin(mf: &MathieuForm, t: f64, turning: f64, target: f64) -> f64 {
    let needed = target * mf.eps;
    // x = turning + s², dx = 2s ds removes the square-root edge.
    let tunnel = |lam: f64| -> f64 {
        let f = |s: f64| {
            let v = mf.a * (2.0 * (turning + s * s)).cosh() + mf.c - t;
            2.0 * s * v.max(0.0).sqrt()
        };
        adaptive_simpson(&f, 0.0, lam.sqrt(), 1e-9 * needed.max(1e-300))
    };
    let mut hi = 1.0 / 64.0;
    while tunnel(hi) < needed {
        hi *= 2.0;
        if hi > 1e3 {
            break;
        }
    }
    let mut lo = 0.5 * hi;
    if tunnel(lo) >= needed {
        return lo;
    }
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        if tunnel(mid) >= needed {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Outcome of an eigenvalue count below a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CountResult {
    pub count: u64,
    /// Eigenvalues within the tie band around the threshold.
    pub near_ties: u64,
    pub grid_size: usize,
    pub refinements: u32,
}

impl CountResult {
    fn zero() -> Self {
        Self { count: 0, near_ties: 0, grid_size: 0, refinements: 0 }
    }
}

/// The tridiagonal finite-difference matrix of a truncated Mathieu operator.
/// Entries are generated on the fly.
#[derive(Debug, Clone, Copy)]
pub struct FdGrid<'a> {
    mf: &'a MathieuForm,
    lo: f64,
    h: f64,
    points: usize,
}

impl<'a> FdGrid<'a> {
    pub fn new(mf: &'a MathieuForm, domain: &TruncationDomain) -> Self {
        Self { mf, lo: domain.lo, h: domain.h, points: domain.points }
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// Same interval, half the step.
    pub fn refined(&self) -> Self {
        Self { h: 0.5 * self.h, points: 2 * self.points + 1, ..*self }
    }

    /// Diagonal and (constant) off-diagonal entries.
    pub fn entries(&self) -> (Vec<f64>, f64) {
        let k = self.mf.eps * self.mf.eps / (self.h * self.h);
        let diag = (1..=self.points)
            .map(|i| 2.0 * k + self.mf.potential(self.lo + i as f64 * self.h))
            .collect();
        (diag, -k)
    }

    /// Number of eigenvalues `≤ x`, from the signs of the LDLᵀ pivots of `T − x·I`.
    pub fn sturm_count(&self, x: f64) -> u64 {
        let k = self.mf.eps * self.mf.eps / (self.h * self.h);
        let off_sq = k * k;
        let mut count = 0;
        let mut q = 1.0;
        for i in 1..=self.points {
            let d = 2.0 * k + self.mf.potential(self.lo + i as f64 * self.h) - x;
            q = if i == 1 { d } else { d - off_sq / q };
            if q <= 0.0 {
                count += 1;
                if q == 0.0 {
                    q = -f64::MIN_POSITIVE;
                }
            }
        }
        count
    }

    /// The `index`-th eigenvalue (0-based) by bisection on the Sturm count.
    pub fn eigenvalue(&self, index: u64, upper: f64, rel_tol: f64) -> f64 {
        // The discrete kinetic term is positive semidefinite, so min V bounds below.
        let mut lo = self.mf.vmin() - 1e-12 * self.mf.vmin().abs().max(1.0);
        let mut hi = upper;
        while self.sturm_count(hi) <= index {
            hi = hi + (hi - lo).max(1.0);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.sturm_count(mid) > index {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= rel_tol * hi.abs().max(1e-300) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

struct SettledGrid<'a> {
    grid: FdGrid<'a>,
    result: CountResult,
}

fn settle<'a>(
    mf: &'a MathieuForm,
    t: f64,
    opts: &SolverOptions,
) -> Result<Option<SettledGrid<'a>>, SolverError> {
    if t <= mf.vmin() {
        return Ok(None);
    }
    let domain = truncation_domain_with(mf, t, opts)?;
    let mut grid = FdGrid::new(mf, &domain);
    let mut previous = grid.sturm_count(t);
    let kinetic = t - mf.vmin();
    for refinement in 1..=opts.max_refinements {
        let finer = grid.refined();
        let count = finer.sturm_count(t);
        grid = finer;
        // Central differences shift a level by at most ~E_kin·(k·h)²/12; a
        // level inside that band may still cross t under refinement.
        let kh = kinetic.sqrt() / mf.eps * grid.step();
        let drift = kinetic * kh * kh / 6.0;
        let clear = grid.sturm_count(t + drift) == grid.sturm_count(t - drift);
        if count == previous && clear {
            let band = opts.tie_band * t.abs().max(1.0);
            let near_ties = grid.sturm_count(t + band) - grid.sturm_count(t - band);
            let result = CountResult {
                count,
                near_ties,
                grid_size: grid.points(),
                refinements: refinement,
            };
            return Ok(Some(SettledGrid { grid, result }));
        }
        if refinement == opts.max_refinements {
            return Err(SolverError::NoConvergence {
                refinements: refinement,
                last: (previous, count),
            });
        }
        previous = count;
    }
    unreachable!("max_refinements is at least one")
}

/// Number of eigenvalues `≤ t` of the truncated finite-difference operator.
pub fn count_below(mf: &MathieuForm, t: f64) -> Result<CountResult, SolverError> {
    count_below_with(mf, t, &SolverOptions::default())
}

pub fn count_below_with(
    mf: &MathieuForm,
    t: f64,
    opts: &SolverOptions,
) -> Result<CountResult, SolverError> {
    Ok(settle(mf, t, opts)?.map_or(CountResult::zero(), |s| s.result))
}

/// The `min(count, kmax)` smallest eigenvalues `≤ t`, on the grid that settled the count.
pub fn eigenvalues_below(mf: &MathieuForm, t: f64, kmax: usize) -> Result<Vec<f64>, SolverError> {
    eigenvalues_below_with(mf, t, kmax, &SolverOptions::default())
}

pub fn eigenvalues_below_with(
    mf: &MathieuForm,
    t: f64,
    kmax: usize,
    opts: &SolverOptions,
) -> Result<Vec<f64>, SolverError> {
    let Some(settled) = settle(mf, t, opts)? else {
        return Ok(Vec::new());
    };
    let n = settled.result.count.min(kmax as u64);
    Ok((0..n).map(|i| settled.grid.eigenvalue(i, t, 1e-10)).collect())
}

/// Eigenvalues `≤ t` with the `O(h²)` discretisation error removed by
/// Richardson extrapolation between the settled grid and its refinement.
pub fn eigenvalues_extrapolated(
    mf: &MathieuForm,
    t: f64,
    kmax: usize,
) -> Result<Vec<f64>, SolverError> {
    let opts = SolverOptions::default();
    let Some(settled) = settle(mf, t, &opts)? else {
        return Ok(Vec::new());
    };
    let coarse = settled.grid;
    let fine = coarse.refined();
    // Coarse-grid eigenvalues sit below the fine ones; look a little past t.
    let n = fine.sturm_count(t).max(settled.result.count).min(kmax as u64);
    let mut out = Vec::with_capacity(n as usize);
    for i in 0..n {
        let ec = coarse.eigenvalue(i, t, 1e-13);
        let ef = fine.eigenvalue(i, t, 1e-13);
        let e = (4.0 * ef - ec) / 3.0;
        if e <= t {
            out.push(e);
        }
    }
    Ok(out)
}

/// Prüfer-angle shooting count over the same truncated interval.
///
/// With `u = ρ·sinθ`, `u' = Sρ·cosθ` the angle obeys
/// `θ' = S·cos²θ + (Q/S)·sin²θ`, `Q = (t − V)/ε²`. `S` is refreshed every step
/// to the local `√|Q|`, keeping both allowed and forbidden regions non-stiff;
/// zeros of `u` sit at `θ ∈ πℤ` for every `S`, so the count is `⌊θ(hi)/π⌋`.
pub fn count_below_shooting(mf: &MathieuForm, t: f64) -> Result<CountResult, SolverError> {
    if t <= mf.vmin() {
        return Ok(CountResult::zero());
    }
    let domain = truncation_domain(mf, t)?;
    let n_sc = semiclassical_count(mf, t);
    let mut steps_per_radian = (8.0 + 0.5 * n_sc.sqrt()).ceil();
    let mut counts = vec![prufer_count(mf, t, &domain, steps_per_radian).0];
    for refinement in 1..=5 {
        steps_per_radian *= 2.0;
        let (count, steps) = prufer_count(mf, t, &domain, steps_per_radian);
        counts.push(count);
        if counts[counts.len() - 2] == count {
            return Ok(CountResult { count, near_ties: 0, grid_size: steps, refinements: refinement });
        }
    }
    Err(SolverError::StepTooCoarse { counts })
}

fn prufer_count(mf: &MathieuForm, t: f64, domain: &TruncationDomain, steps_per_radian: f64) -> (u64, usize) {
    let inv_eps2 = 1.0 / (mf.eps * mf.eps);
    let q_of = |w: f64| (t - mf.potential(w)) * inv_eps2;
    let k_max2 = (t - mf.vmin()) * inv_eps2;
    let floor = 1e-2 * k_max2;
    let scale_at = |w: f64| q_of(w).abs().max(floor).sqrt();
    let h_cap = domain.width() / 400.0;

    let mut w = domain.lo;
    let mut theta = 0.0f64;
    let mut steps = 0usize;
    let mut s_prev: Option<f64> = None;
    while w < domain.hi {
        // Step length from the scale at the left end, scale from the midpoint.
        let s_left = scale_at(w);
        let h = (1.0 / (steps_per_radian * s_left)).min(h_cap).min(domain.hi - w);
        let s = scale_at(w + 0.5 * h);
        if let Some(sp) = s_prev {
            theta = rescale_angle(theta, sp, s);
        }
        let rhs = |x: f64, th: f64| {
            let (sn, cs) = th.sin_cos();
            s * cs * cs + q_of(x) / s * sn * sn
        };
        let k1 = rhs(w, theta);
        let k2 = rhs(w + 0.5 * h, theta + 0.5 * h * k1);
        let k3 = rhs(w + 0.5 * h, theta + 0.5 * h * k2);
        let k4 = rhs(w + h, theta + h * k3);
        theta += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        w += h;
        s_prev = Some(s);
        steps += 1;
    }
    ((theta / PI).floor().max(0.0) as u64, steps)
}

// tanθ = S·u/u', so changing S keeps θ in the same half-period.
fn rescale_angle(theta: f64, s_old: f64, s_new: f64) -> f64 {
    let k = (theta / PI).floor();
    let phi = theta - k * PI;
    let (sn, cs) = phi.sin_cos();
    k * PI + (s_new * sn).atan2(s_old * cs)
}

/// Phase-space estimate `(1/πε)∫√(t − c − a·ch(2(w − w0)))₊ dw`.
pub fn semiclassical_count(mf: &MathieuForm, t: f64) -> f64 {
    if t <= mf.vmin() {
        return 0.0;
    }
    let x_turn = 0.5 * ((t - mf.c) / mf.a).acosh();
    // Symmetric about w0; x = X(1 − u²) makes the integrand smooth at the turning point.
    let f = |u: f64| {
        let x = x_turn * (1.0 - u * u);
        let v = t - mf.c - mf.a * (2.0 * x).cosh();
        2.0 * x_turn * u * v.max(0.0).sqrt()
    };
    let scale = 2.0 / (PI * mf.eps);
    let integral = adaptive_simpson(&f, 0.0, 1.0, 1e-11 / scale);
    scale * integral
}
