//! Direct finite-difference discretisation of `Δ_ε` on a fundamental domain.
//!
//! Coordinates are lattice coordinates `(x, y) ∈ [0,1)²` with `(u, v) = C(x, y)`
//! and `w ∈ [0, ln λ)`. The gluing `(x, y, w + ln λ) ~ (A⁻¹(x, y), w)` is an
//! integer permutation of a uniform grid, so the twist is exact. The density
//! `√det g_ε` is constant, hence `Δ_ε f = −Σ G^{ab}(w)∂_a∂_b f − ε²∂_w² f`.

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::assembler::SolConfig;
use crate::lattice::{Mat2, MonodromyMatrix};

pub const DEFAULT_BUDGET: usize = 20_000;
pub const MAX_EIGENVALUES: usize = 30;
const DENSE_LIMIT: usize = 1728;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("grid {nxy}x{nxy}x{nw}: each side needs at least 8 points")]
    GridTooSmall { nxy: usize, nw: usize },
    #[error("grid {nxy}x{nxy}x{nw} has {unknowns} unknowns, budget is {budget}")]
    BudgetExceeded { nxy: usize, nw: usize, unknowns: usize, budget: usize },
    #[error("eps must lie in (0, 1], got {0}")]
    InvalidEps(f64),
    #[error("at most {MAX_EIGENVALUES} eigenvalues, asked for {0}")]
    TooManyEigenvalues(usize),
    #[error("operator check failed on grid {nxy}x{nxy}x{nw}: {what}")]
    BrokenOperator { nxy: usize, nw: usize, what: String },
    #[error("eigensolver on {unknowns} unknowns stalled after {dimension} basis vectors (residual {residual:.3e})")]
    NoConvergence { unknowns: usize, dimension: usize, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid3 {
    pub nxy: usize,
    pub nw: usize,
    pub budget: usize,
}

impl Grid3 {
    pub fn new(nxy: usize, nw: usize) -> Result<Self, OracleError> {
        Self::with_budget(nxy, nw, DEFAULT_BUDGET)
    }

    pub fn cube(n: usize) -> Result<Self, OracleError> {
        Self::new(n, n)
    }

    pub fn with_budget(nxy: usize, nw: usize, budget: usize) -> Result<Self, OracleError> {
        if nxy < 8 || nw < 8 {
            return Err(OracleError::GridTooSmall { nxy, nw });
        }
        let unknowns = nxy * nxy * nw;
        if unknowns > budget {
            return Err(OracleError::BudgetExceeded { nxy, nw, unknowns, budget });
        }
        Ok(Self { nxy, nw, budget })
    }

    pub fn unknowns(&self) -> usize {
        self.nxy * self.nxy * self.nw
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.nxy + j) * self.nxy + i
    }
}

fn mat2(m: &Mat2) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

fn check_eps(eps: f64) -> Result<(), OracleError> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(OracleError::InvalidEps(eps))
    }
}

/// `g_ε` in `(x, y, w)` at height `w`.
pub fn coordinate_metric(cfg: &SolConfig, eps: f64, w: f64) -> Matrix3<f64> {
    let c = mat2(&cfg.eigen.c);
    let c_inv = mat2(&cfg.eigen.c_inv);
    let m = c.transpose() * Matrix2::new((-2.0 * w).exp(), 0.0, 0.0, (2.0 * w).exp()) * c;
    let v = c_inv * Vector2::new(w.exp(), cfg.alpha * (-w).exp());
    let mv = m * v;
    let inv_eps2 = 1.0 / (eps * eps);
    let me = m * inv_eps2 + (mv * mv.transpose()) * ((1.0 - inv_eps2) / v.dot(&mv));
    let mut g = Matrix3::zeros();
    g.fixed_view_mut::<2, 2>(0, 0).copy_from(&me);
    g[(2, 2)] = inv_eps2;
    g
}

/// `g_ε⁻¹` in `(x, y, w)`; at `ε = 1` it does not depend on `α` bit for bit.
pub fn inverse_metric(cfg: &SolConfig, eps: f64, w: f64) -> Matrix3<f64> {
    let c_inv = mat2(&cfg.eigen.c_inv);
    let alpha = cfg.alpha;
    let h = Vector2::new(-alpha * w.exp(), (-w).exp()) / (1.0 + alpha * alpha).sqrt();
    let base = Matrix2::new((2.0 * w).exp(), 0.0, 0.0, (-2.0 * w).exp());
    let guv = base - (h * h.transpose()) * (1.0 - eps * eps);
    let gxy = c_inv * guv * c_inv.transpose();
    let mut g = Matrix3::zeros();
    g.fixed_view_mut::<2, 2>(0, 0).copy_from(&gxy);
    g[(2, 2)] = eps * eps;
    g
}

/// `p ↦ A·p mod N` on `ℤ_N²`, flattened as `j·N + i`.
pub fn gluing_permutation(a: &MonodromyMatrix, n: usize) -> Vec<usize> {
    let mut perm = vec![0; n * n];
    for j in 0..n {
        for i in 0..n {
            let (x, y) = a.apply_mod(i, j, n);
            perm[j * n + i] = y * n + x;
        }
    }
    perm
}

fn inverse_mod(a: &MonodromyMatrix, i: usize, j: usize, n: usize) -> (usize, usize) {
    let n_i = n as i64;
    let (i, j) = (i as i64, j as i64);
    let x = (a.a22 * i - a.a12 * j).rem_euclid(n_i);
    let y = (-a.a21 * i + a.a11 * j).rem_euclid(n_i);
    (x as usize, y as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorChecks {
    pub asymmetry: f64,
    pub kernel_residual: f64,
    pub norm: f64,
    pub gluing_bijective: bool,
}

#[derive(Debug, Clone)]
pub struct Operator {
    pub grid: Grid3,
    pub matrix: CsrMatrix,
    pub checks: OperatorChecks,
}

impl Operator {
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        spmv(&self.matrix, x, y);
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.grid.unknowns();
        let mut d = DMatrix::zeros(n, n);
        for (i, j, v) in self.matrix.triplets() {
            d[(i, j)] = v;
        }
        d
    }
}

/// Compressed sparse rows with sorted, unique column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut offsets = vec![0; n + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut prev = None;
        for (r, c, v) in triplets {
            if prev == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            prev = Some((r, c));
            offsets[r + 1] += 1;
            cols.push(c);
            vals.push(v);
        }
        for r in 0..n {
            offsets[r + 1] += offsets[r];
        }
        Self { n, offsets, cols, vals }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let range = self.offsets[r]..self.offsets[r + 1];
        (&self.cols[range.clone()], &self.vals[range])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }
}

fn spmv(a: &CsrMatrix, x: &[f64], y: &mut [f64]) {
    for (r, out) in y.iter_mut().enumerate() {
        let (cols, vals) = a.row(r);
        *out = cols.iter().zip(vals).map(|(&c, v)| v * x[c]).sum();
    }
}

fn entry(a: &CsrMatrix, r: usize, c: usize) -> f64 {
    a.get(r, c)
}

/// In-plane second-difference stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `G = Σ ρᵢ oᵢoᵢᵀ` over an obtuse superbase, all `ρᵢ ≥ 0`.
    #[default]
    Selling,
    /// Axis second differences plus the four-corner mixed difference.
    NinePoint,
}

/// Offsets `oᵢ ∈ ℤ²` and weights `ρᵢ ≥ 0` with `G = Σ ρᵢ oᵢoᵢᵀ`.
pub fn selling_decomposition(g: &Matrix2<f64>) -> [((i64, i64), f64); 3] {
    let ip = |a: (i64, i64), b: (i64, i64)| {
        let (a0, a1, b0, b1) = (a.0 as f64, a.1 as f64, b.0 as f64, b.1 as f64);
        a0 * (g[(0, 0)] * b0 + g[(0, 1)] * b1) + a1 * (g[(1, 0)] * b0 + g[(1, 1)] * b1)
    };
    let mut e = [(1i64, 0i64), (0, 1), (-1, -1)];
    for _ in 0..10_000 {
        let flip = [(0, 1), (0, 2), (1, 2)].into_iter().find(|&(i, j)| ip(e[i], e[j]) > 0.0);
        let Some((i, j)) = flip else { break };
        let k = 3 - i - j;
        let (ei, ej) = (e[i], e[j]);
        e[i] = (-ei.0, -ei.1);
        e[k] = (ei.0 - ej.0, ei.1 - ej.1);
    }
    let mut out = [((0, 0), 0.0); 3];
    for (k, slot) in out.iter_mut().enumerate() {
        let (i, j) = ((k + 1) % 3, (k + 2) % 3);
        *slot = ((-e[k].1, e[k].0), (-ip(e[i], e[j])).max(0.0));
    }
    out
}

fn plane_stencil(g: &Matrix3<f64>, stencil: Stencil, h2: f64) -> Vec<((i64, i64), f64)> {
    match stencil {
        Stencil::NinePoint => {
            let cx = -g[(0, 0)] / h2;
            let cy = -g[(1, 1)] / h2;
            let cd = -g[(0, 1)] / (2.0 * h2);
            vec![
                ((1, 0), cx),
                ((-1, 0), cx),
                ((0, 1), cy),
                ((0, -1), cy),
                ((1, 1), cd),
                ((-1, -1), cd),
                ((1, -1), -cd),
                ((-1, 1), -cd),
            ]
        }
        Stencil::Selling => {
            let g2 = g.fixed_view::<2, 2>(0, 0).into_owned();
            selling_decomposition(&g2)
                .into_iter()
                .filter(|&(_, rho)| rho > 0.0)
                .flat_map(|((ox, oy), rho)| [((ox, oy), -rho / h2), ((-ox, -oy), -rho / h2)])
                .collect()
        }
    }
}

/// Second-order divergence-form discretisation of `Δ_ε`.
pub fn build_operator(cfg: &SolConfig, eps: f64, grid: &Grid3) -> Result<Operator, OracleError> {
    build_operator_with(cfg, eps, grid, Stencil::default())
}

pub fn build_operator_with(
    cfg: &SolConfig,
    eps: f64,
    grid: &Grid3,
    stencil: Stencil,
) -> Result<Operator, OracleError> {
    check_eps(eps)?;
    let unknowns = grid.unknowns();
    if unknowns > grid.budget {
        return Err(OracleError::BudgetExceeded {
            nxy: grid.nxy,
            nw: grid.nw,
            unknowns,
            budget: grid.budget,
        });
    }
    let (n, nw) = (grid.nxy, grid.nw);
    let n_i = n as i64;
    let a = &cfg.matrix;
    let h2 = 1.0 / (n * n) as f64;
    let hw = cfg.eigen.ln_lambda / nw as f64;
    let coupling_w = -eps * eps / (hw * hw);

    let mut coo = Vec::with_capacity(11 * unknowns);
    for k in 0..nw {
        let g = inverse_metric(cfg, eps, k as f64 * hw);
        let plane = plane_stencil(&g, stencil, h2);
        for j in 0..n {
            for i in 0..n {
                let row = grid.index(i, j, k);
                let mut off = 0.0;
                for &((di, dj), v) in &plane {
                    let x = (i as i64 + di).rem_euclid(n_i) as usize;
                    let y = (j as i64 + dj).rem_euclid(n_i) as usize;
                    coo.push((row, grid.index(x, y, k), v));
                    off += v;
                }
                let up = if k + 1 < nw {
                    grid.index(i, j, k + 1)
                } else {
                    let (x, y) = inverse_mod(a, i, j, n);
                    grid.index(x, y, 0)
                };
                let down = if k > 0 {
                    grid.index(i, j, k - 1)
                } else {
                    let (x, y) = a.apply_mod(i, j, n);
                    grid.index(x, y, nw - 1)
                };
                coo.push((row, up, coupling_w));
                coo.push((row, down, coupling_w));
                off += 2.0 * coupling_w;
                coo.push((row, row, -off));
            }
        }
    }
    let matrix = CsrMatrix::from_triplets(unknowns, coo);
    let checks = operator_checks(a, grid, &matrix);
    let broken = |what: String| OracleError::BrokenOperator { nxy: n, nw, what };
    if !checks.gluing_bijective {
        return Err(broken("gluing map is not a bijection".into()));
    }
    if checks.asymmetry > 1e-12 * checks.norm {
        return Err(broken(format!("asymmetry {:.3e}", checks.asymmetry)));
    }
    if checks.kernel_residual > 1e-12 * checks.norm {
        return Err(broken(format!("constants not in kernel ({:.3e})", checks.kernel_residual)));
    }
    Ok(Operator { grid: *grid, matrix, checks })
}

fn operator_checks(a: &MonodromyMatrix, grid: &Grid3, m: &CsrMatrix) -> OperatorChecks {
    let n = grid.nxy;
    let perm = gluing_permutation(a, n);
    let mut seen = vec![false; n * n];
    let mut gluing_bijective = true;
    for (p, &q) in perm.iter().enumerate() {
        let (x, y) = inverse_mod(a, q % n, q / n, n);
        gluing_bijective &= !seen[q] && y * n + x == p;
        seen[q] = true;
    }

    let mut asymmetry: f64 = 0.0;
    for (r, c, v) in m.triplets() {
        asymmetry = asymmetry.max((v - entry(m, c, r)).abs());
    }
    let mut norm: f64 = 0.0;
    let mut kernel_residual: f64 = 0.0;
    for r in 0..m.nrows() {
        let (_, vals) = m.row(r);
        norm = norm.max(vals.iter().map(|v| v.abs()).sum());
        kernel_residual = kernel_residual.max(vals.iter().sum::<f64>().abs());
    }
    OperatorChecks { asymmetry, kernel_residual, norm, gluing_bijective }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenMethod {
    /// Dense below 1728 unknowns, iterative above.
    Auto,
    Dense,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub method: EigenMethod,
    /// Ritz residual target relative to `max(θ_k, shift)`.
    pub tol: f64,
    pub max_dimension: usize,
    /// Extra block columns beyond `k`.
    pub block_extra: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { method: EigenMethod::Auto, tol: 1e-8, max_dimension: 600, block_extra: 6, seed: 7 }
    }
}

pub fn lowest_eigenvalues_3d(
    cfg: &SolConfig,
    eps: f64,
    grid: &Grid3,
    k: usize,
) -> Result<Vec<f64>, OracleError> {
    lowest_eigenvalues_3d_with(cfg, eps, grid, k, &EigenOptions::default())
}

pub fn lowest_eigenvalues_3d_with(
    cfg: &SolConfig,
    eps: f64,
    grid: &Grid3,
    k: usize,
    opts: &EigenOptions,
) -> Result<Vec<f64>, OracleError> {
    if k > MAX_EIGENVALUES {
        return Err(OracleError::TooManyEigenvalues(k));
    }
    let op = build_operator(cfg, eps, grid)?;
    operator_lowest(&op, k, opts)
}

/// The `k` smallest eigenvalues of an assembled operator.
pub fn operator_lowest(op: &Operator, k: usize, opts: &EigenOptions) -> Result<Vec<f64>, OracleError> {
    let n = op.grid.unknowns();
    let k = k.min(n);
    if k == 0 {
        return Ok(Vec::new());
    }
    let dense = match opts.method {
        EigenMethod::Dense => true,
        EigenMethod::Iterative => false,
        EigenMethod::Auto => n <= DENSE_LIMIT,
    };
    if dense {
        let mut ev: Vec<f64> = op.to_dense().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev.truncate(k);
        return Ok(ev);
    }
    shift_invert_block(&op.matrix, k, opts)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Jacobi-preconditioned CG for `(A + σI)x = b`.
fn pcg(a: &CsrMatrix, sigma: f64, precond: &[f64], b: &[f64], rel_tol: f64, max_iter: usize) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(precond).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let target = rel_tol * dot(b, b).sqrt();
    for _ in 0..max_iter {
        if dot(&r, &r).sqrt() <= target {
            break;
        }
        spmv(a, &p, &mut ap);
        axpy(sigma, &p, &mut ap);
        let step = rz / dot(&p, &ap);
        axpy(step, &p, &mut x);
        axpy(-step, &ap, &mut r);
        for ((zi, ri), d) in z.iter_mut().zip(&r).zip(precond) {
            *zi = ri / d;
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    x
}

/// Orthogonalises `v` against `basis` twice; returns the unit vector or `None`
/// if nothing is left.
fn orthonormalise(basis: &[Vec<f64>], mut v: Vec<f64>) -> Option<Vec<f64>> {
    let start = dot(&v, &v).sqrt();
    if start == 0.0 {
        return None;
    }
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, &v);
            axpy(-c, q, &mut v);
        }
    }
    let norm = dot(&v, &v).sqrt();
    if norm <= 1e-10 * start {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

/// Block Krylov space of `(A + σI)⁻¹` with Rayleigh–Ritz on `A` itself.
fn shift_invert_block(a: &CsrMatrix, k: usize, opts: &EigenOptions) -> Result<Vec<f64>, OracleError> {
    let n = a.nrows();
    let diag: Vec<f64> = (0..n).map(|i| entry(a, i, i)).collect();
    let sigma = (1e-3 * diag.iter().sum::<f64>() / n as f64).max(1e-8);
    let precond: Vec<f64> = diag.iter().map(|d| d + sigma).collect();
    let width = (k + opts.block_extra).min(n);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start = vec![vec![1.0; n]];
    for _ in 1..width {
        start.push((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut images: Vec<Vec<f64>> = Vec::new();
    let mut projected: Vec<Vec<f64>> = Vec::new();
    let mut block = start;
    let mut residual = f64::INFINITY;
    loop {
        let first_new = basis.len();
        for v in block {
            if let Some(q) = orthonormalise(&basis, v) {
                let mut kq = vec![0.0; n];
                spmv(a, &q, &mut kq);
                basis.push(q);
                images.push(kq);
            }
        }
        for j in first_new..basis.len() {
            let row: Vec<f64> = (0..=j).map(|i| dot(&basis[i], &images[j])).collect();
            projected.push(row);
        }
        let dim = basis.len();
        let stalled = dim == first_new;
        if dim >= k {
            let h = DMatrix::from_fn(dim, dim, |i, j| {
                let (r, c) = if i >= j { (i, j) } else { (j, i) };
                projected[r][c]
            });
            let h = (&h + h.transpose()) * 0.5;
            let eig = h.symmetric_eigen();
            let mut order: Vec<usize> = (0..dim).collect();
            order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
            let wanted = &order[..k];
            let theta: Vec<f64> = wanted.iter().map(|&c| eig.eigenvalues[c]).collect();
            let scale = theta[k - 1].abs().max(sigma);
            residual = wanted
                .par_iter()
                .map(|&c| {
                    let y = eig.eigenvectors.column(c);
                    let mut r = vec![0.0; n];
                    for i in 0..dim {
                        axpy(y[i], &images[i], &mut r);
                        axpy(-eig.eigenvalues[c] * y[i], &basis[i], &mut r);
                    }
                    dot(&r, &r).sqrt()
                })
                .reduce(|| 0.0, f64::max);
            if residual <= opts.tol * scale || dim == n {
                return Ok(theta);
            }
        }
        if stalled || dim >= opts.max_dimension.min(n) {
            return Err(OracleError::NoConvergence { unknowns: n, dimension: dim, residual });
        }
        let sources: Vec<&Vec<f64>> = basis[first_new..].iter().collect();
        block = sources
            .par_iter()
            .map(|v| pcg(a, sigma, &precond, v, 1e-10, 20 * n))
            .collect();
    }
}
