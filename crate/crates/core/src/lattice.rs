//! Monodromy matrix, its eigenbasis, the lattice Γ, the dual lattice Γ*, and
//! the orbits of Γ*∖{0} under the monodromy action.
//!
//! The monodromy `A ∈ SL(2,ℤ)` is diagonalised as `C·A = D·C` with
//! `D = diag(λ, λ⁻¹)`. The columns of `C` generate Γ, the rows of `C⁻¹`
//! generate Γ*. On dual points `b = m·d1 + n·d2` the action `b ↦ D·b` is the
//! integer map `(m, n) ↦ Aᵀ(m, n)`, and `ν = b1·b2` is invariant.

use std::cmp::Ordering;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Default cap on the number of integer candidates scanned by [`enumerate_orbits`].
pub const DEFAULT_CANDIDATE_BUDGET: u64 = 100_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("det A = {det}, expected 1 (A must lie in SL(2,Z))")]
    DetNotOne { det: i64 },
    #[error(
        "tr A = {trace}: need |tr A| > 2 with a positive eigenvalue λ > 1, \
         so only tr A > 2 is supported{hint}"
    )]
    TraceNotHyperbolic { trace: i64, hint: &'static str },
    #[error("the zero dual point has no monodromy orbit")]
    ZeroPoint,
    #[error("orbit scan needs {candidates} candidates, budget is {budget}")]
    BoundTooLarge { candidates: u64, budget: u64 },
    #[error("covolume override must be positive and finite, got {0}")]
    BadCovolume(f64),
    #[error("integer overflow while moving along a monodromy orbit")]
    Overflow,
}

/// A hyperbolic element of SL(2,ℤ) with positive trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MonodromyMatrix {
    pub a11: i64,
    pub a12: i64,
    pub a21: i64,
    pub a22: i64,
}

impl MonodromyMatrix {
    pub fn new(a11: i64, a12: i64, a21: i64, a22: i64) -> Result<Self, LatticeError> {
        validate_monodromy([a11, a12, a21, a22])
    }

    pub fn trace(&self) -> i64 {
        self.a11 + self.a22
    }

    pub fn det(&self) -> i64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn entries(&self) -> [i64; 4] {
        [self.a11, self.a12, self.a21, self.a22]
    }

    /// `Aᵀ (m, n)`, the monodromy acting on dual coordinates.
    pub fn transpose_apply(&self, m: i64, n: i64) -> Result<(i64, i64), LatticeError> {
        let x = checked_dot(self.a11, m, self.a21, n)?;
        let y = checked_dot(self.a12, m, self.a22, n)?;
        Ok((x, y))
    }

    /// `(Aᵀ)⁻¹ (m, n)`; exact because det A = 1.
    pub fn transpose_inverse_apply(&self, m: i64, n: i64) -> Result<(i64, i64), LatticeError> {
        let x = checked_dot(self.a22, m, -self.a21, n)?;
        let y = checked_dot(-self.a12, m, self.a11, n)?;
        Ok((x, y))
    }

    /// `A (i, j) mod modulus`, the gluing map on a uniform torus grid.
    pub fn apply_mod(&self, i: usize, j: usize, modulus: usize) -> (usize, usize) {
        let n = modulus as i64;
        let (i, j) = (i as i64, j as i64);
        let x = (self.a11 * i + self.a12 * j).rem_euclid(n);
        let y = (self.a21 * i + self.a22 * j).rem_euclid(n);
        (x as usize, y as usize)
    }
}

impl fmt::Display for MonodromyMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}, {}], [{}, {}]]", self.a11, self.a12, self.a21, self.a22)
    }
}

fn checked_dot(a: i64, x: i64, b: i64, y: i64) -> Result<i64, LatticeError> {
    a.checked_mul(x)
        .and_then(|p| b.checked_mul(y).and_then(|q| p.checked_add(q)))
        .ok_or(LatticeError::Overflow)
}

/// Checks `det A = 1` and `tr A > 2`. Entries are row-major `(a11, a12, a21, a22)`.
pub fn validate_monodromy(entries: [i64; 4]) -> Result<MonodromyMatrix, LatticeError> {
    let [a11, a12, a21, a22] = entries;
    let det = a11
        .checked_mul(a22)
        .zip(a12.checked_mul(a21))
        .and_then(|(p, q)| p.checked_sub(q))
        .ok_or(LatticeError::Overflow)?;
    if det != 1 {
        return Err(LatticeError::DetNotOne { det });
    }
    let trace = a11.checked_add(a22).ok_or(LatticeError::Overflow)?;
    if trace <= 2 {
        let hint = if trace < -2 {
            " (tr A < -2 gives negative eigenvalues; use -A instead)"
        } else {
            " (|tr A| <= 2 is elliptic or parabolic)"
        };
        return Err(LatticeError::TraceNotHyperbolic { trace, hint });
    }
    Ok(MonodromyMatrix { a11, a12, a21, a22 })
}

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

/// Eigen-decomposition `C·A = diag(λ, λ⁻¹)·C` together with both lattices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenData {
    pub matrix: MonodromyMatrix,
    pub lambda: f64,
    pub lambda_inv: f64,
    pub ln_lambda: f64,
    /// Rows are left eigenvectors of A (for λ and λ⁻¹), scaled so `|det C|` is the covolume.
    pub c: Mat2,
    pub c_inv: Mat2,
    /// Columns of `C`, generators of Γ.
    pub gamma1: Vec2,
    pub gamma2: Vec2,
    /// Rows of `C⁻¹`, generators of Γ*.
    pub d1: Vec2,
    pub d2: Vec2,
    pub covolume: f64,
}

/// Eigendata with unit covolume `|det C| = 1`.
pub fn eigendata(matrix: &MonodromyMatrix) -> EigenData {
    eigendata_with_covolume(matrix, 1.0).expect("unit covolume is valid")
}

/// Eigendata with both rows of `C` scaled by a common factor so that `|det C| = covolume`.
pub fn eigendata_with_covolume(
    matrix: &MonodromyMatrix,
    covolume: f64,
) -> Result<EigenData, LatticeError> {
    if !(covolume.is_finite() && covolume > 0.0) {
        return Err(LatticeError::BadCovolume(covolume));
    }
    let tr = matrix.trace() as f64;
    let lambda = 0.5 * (tr + (tr * tr - 4.0).sqrt());
    let lambda_inv = 1.0 / lambda;

    let row_for = |mu: f64| -> Vec2 {
        if matrix.a21.abs() >= matrix.a12.abs() {
            [matrix.a21 as f64, mu - matrix.a11 as f64]
        } else {
            [mu - matrix.a22 as f64, matrix.a12 as f64]
        }
    };
    let r1 = row_for(lambda);
    let r2 = row_for(lambda_inv);
    let raw_det = r1[0] * r2[1] - r1[1] * r2[0];
    let s = (covolume / raw_det.abs()).sqrt();
    let c = [[s * r1[0], s * r1[1]], [s * r2[0], s * r2[1]]];
    let c_inv = invert2(&c);

    Ok(EigenData {
        matrix: *matrix,
        lambda,
        lambda_inv,
        ln_lambda: lambda.ln(),
        c,
        c_inv,
        gamma1: [c[0][0], c[1][0]],
        gamma2: [c[0][1], c[1][1]],
        d1: c_inv[0],
        d2: c_inv[1],
        covolume,
    })
}

pub(crate) fn invert2(m: &Mat2) -> Mat2 {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ]
}

impl EigenData {
    /// Max-norm of `C·A − diag(λ, λ⁻¹)·C`.
    pub fn residual(&self) -> f64 {
        let a = [
            [self.matrix.a11 as f64, self.matrix.a12 as f64],
            [self.matrix.a21 as f64, self.matrix.a22 as f64],
        ];
        let diag = [self.lambda, self.lambda_inv];
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let ca = self.c[i][0] * a[0][j] + self.c[i][1] * a[1][j];
                worst = worst.max((ca - diag[i] * self.c[i][j]).abs());
            }
        }
        worst
    }

    pub fn det_c(&self) -> f64 {
        self.c[0][0] * self.c[1][1] - self.c[0][1] * self.c[1][0]
    }

    /// Plane coordinates of `m·d1 + n·d2`.
    pub fn dual_coords(&self, m: i64, n: i64) -> Vec2 {
        let (m, n) = (m as f64, n as f64);
        [
            m * self.d1[0] + n * self.d2[0],
            m * self.d1[1] + n * self.d2[1],
        ]
    }

    pub fn dual_point(&self, m: i64, n: i64) -> DualPoint {
        let [b1, b2] = self.dual_coords(m, n);
        DualPoint { m, n, b1, b2, nu: b1 * b2 }
    }
}

/// `ν = b1·b2` of the dual point with integer coordinates `(m, n)`.
pub fn nu_of(e: &EigenData, m: i64, n: i64) -> f64 {
    let [b1, b2] = e.dual_coords(m, n);
    b1 * b2
}

/// A point of Γ* with its integer coordinates in the basis `d1, d2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualPoint {
    pub m: i64,
    pub n: i64,
    pub b1: f64,
    pub b2: f64,
    pub nu: f64,
}

impl DualPoint {
    pub fn is_zero(&self) -> bool {
        self.m == 0 && self.n == 0
    }
}

/// Canonical representative of a monodromy orbit: the unique point with `|b1| ∈ [1, λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrbitRep {
    pub point: DualPoint,
    /// Sign of ν, `+1` or `-1`.
    pub sign: i8,
}

impl OrbitRep {
    pub fn nu(&self) -> f64 {
        self.point.nu
    }
}

// The window test is evaluated from integer coordinates only, so two
// computations that land on the same (m, n) take the same decision.
fn in_window(e: &EigenData, m: i64, n: i64) -> Result<bool, LatticeError> {
    let here = e.dual_coords(m, n)[0].abs();
    if here < 1.0 {
        return Ok(false);
    }
    let (pm, pn) = e.matrix.transpose_inverse_apply(m, n)?;
    Ok(e.dual_coords(pm, pn)[0].abs() < 1.0)
}

/// Applies `D^k` to a dual point, i.e. `(Aᵀ)^k` to its integer coordinates.
pub fn apply_monodromy(e: &EigenData, p: &DualPoint, k: i64) -> Result<DualPoint, LatticeError> {
    let (mut m, mut n) = (p.m, p.n);
    for _ in 0..k.unsigned_abs() {
        (m, n) = if k > 0 {
            e.matrix.transpose_apply(m, n)?
        } else {
            e.matrix.transpose_inverse_apply(m, n)?
        };
    }
    Ok(e.dual_point(m, n))
}

/// Moves `p` along its orbit into the window `|b1| ∈ [1, λ)`. Returns the
/// representative and the power `k` with `rep = D^k·p`.
pub fn canonical_rep(e: &EigenData, p: &DualPoint) -> Result<(OrbitRep, i64), LatticeError> {
    if p.is_zero() {
        return Err(LatticeError::ZeroPoint);
    }
    let b1 = e.dual_coords(p.m, p.n)[0].abs();
    let mut k = -(b1.ln() / e.ln_lambda).floor() as i64;
    let mut q = apply_monodromy(e, p, k)?;
    // Floor of a floating logarithm can be off by one at the window edges.
    for _ in 0..8 {
        if in_window(e, q.m, q.n)? {
            let sign = if q.nu > 0.0 { 1 } else { -1 };
            return Ok((OrbitRep { point: q, sign }, k));
        }
        let step = if q.b1.abs() < 1.0 { 1 } else { -1 };
        q = apply_monodromy(e, &q, step)?;
        k += step;
    }
    unreachable!("orbit window search failed to settle for {:?}", p)
}

/// One representative per monodromy orbit of Γ*∖{0} with `0 < ν ≤ y_plus`
/// or `0 < −ν ≤ y_minus`, ordered by `(|ν|, sign, m, n)`.
pub fn enumerate_orbits(
    e: &EigenData,
    y_plus: f64,
    y_minus: f64,
) -> Result<Vec<OrbitRep>, LatticeError> {
    enumerate_orbits_with_budget(e, y_plus, y_minus, DEFAULT_CANDIDATE_BUDGET)
}

pub fn enumerate_orbits_with_budget(
    e: &EigenData,
    y_plus: f64,
    y_minus: f64,
    budget: u64,
) -> Result<Vec<OrbitRep>, LatticeError> {
    let y_plus = y_plus.max(0.0);
    let y_minus = y_minus.max(0.0);
    let y = y_plus.max(y_minus);
    if y <= 0.0 {
        return Ok(Vec::new());
    }
    // Representatives have |b1| < λ and |b2| = |ν|/|b1| ≤ y; (m, n) = Cᵀ b.
    let b1_max = e.lambda;
    let m_max = (e.c[0][0].abs() * b1_max + e.c[1][0].abs() * y).ceil() as i64 + 1;
    let n_max = (e.c[0][1].abs() * b1_max + e.c[1][1].abs() * y).ceil() as i64 + 1;
    let candidates = (2 * m_max as u64 + 1).saturating_mul(2 * n_max as u64 + 1);
    if candidates > budget {
        return Err(LatticeError::BoundTooLarge { candidates, budget });
    }

    let mut reps = Vec::new();
    for m in -m_max..=m_max {
        for n in -n_max..=n_max {
            if m == 0 && n == 0 {
                continue;
            }
            let p = e.dual_point(m, n);
            if p.b2.abs() > y || p.b1.abs() >= b1_max * (1.0 + 1e-12) {
                continue;
            }
            let keep = if p.nu > 0.0 { p.nu <= y_plus } else { -p.nu <= y_minus };
            if !keep || !in_window(e, m, n)? {
                continue;
            }
            let sign = if p.nu > 0.0 { 1 } else { -1 };
            reps.push(OrbitRep { point: p, sign });
        }
    }
    reps.sort_by(orbit_order);
    Ok(reps)
}

fn orbit_order(a: &OrbitRep, b: &OrbitRep) -> Ordering {
    a.nu()
        .abs()
        .total_cmp(&b.nu().abs())
        .then(a.sign.cmp(&b.sign))
        .then(a.point.m.cmp(&b.point.m))
        .then(a.point.n.cmp(&b.point.n))
}
