//! Direct solution of the reduced saddle-point system and the discrete
//! inf-sup estimate.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LdltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat, Par, Side};

use crate::assembly::{BlockRanges, CoupledSystem, Discretization};
use crate::error::{Error, Result};
use crate::sparse::{Csr, Triplets};

/// Relative residual the refined solution must reach.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Largest pressure dimension accepted by the dense inf-sup estimator.
pub const INFSUP_CAP: usize = 5000;

/// Sparse LDLᵀ factorization of a symmetric matrix.
pub struct Ldlt {
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
    n: usize,
}

fn lower_csc(a: &Csr, shift: Option<&[f64]>) -> Result<SparseColMat<usize, f64>> {
    let mut t: Vec<Triplet<usize, usize, f64>> = a
        .triplets()
        .filter(|&(i, j, _)| i >= j)
        .map(|(i, j, v)| Triplet::new(i, j, v))
        .collect();
    if let Some(s) = shift {
        t.extend(s.iter().enumerate().map(|(i, &v)| Triplet::new(i, i, v)));
    }
    SparseColMat::try_new_from_triplets(a.nrows, a.ncols, &t).map_err(|e| Error::SingularSystem {
        block: "matrix".into(),
        reason: format!("cannot build sparse matrix: {e:?}"),
    })
}

impl Ldlt {
    /// Factors `a + diag(shift)` (lower triangle read). `signs` gives the
    /// expected pivot signs for quasi-definite matrices.
    pub fn factor(a: &Csr, shift: Option<&[f64]>, signs: Option<&[i8]>) -> Result<Ldlt> {
        let n = a.nrows;
        let mat = lower_csc(a, shift)?;
        let symbolic = factorize_symbolic_cholesky(
            mat.symbolic(),
            Side::Lower,
            SymmetricOrdering::Amd,
            CholeskySymbolicParams::default(),
        )
        .map_err(|e| Error::SingularSystem {
            block: "matrix".into(),
            reason: format!("symbolic factorization failed: {e:?}"),
        })?;
        let mut values = vec![0.0; symbolic.len_val()];
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let reg = LdltRegularization {
            dynamic_regularization_signs: signs,
            dynamic_regularization_delta: 1e-8 * scale,
            dynamic_regularization_epsilon: 1e-13 * scale,
        };
        let par = Par::Seq;
        let mut mem = MemBuffer::new(symbolic.factorize_numeric_ldlt_scratch::<f64>(par, Default::default()));
        let stack = MemStack::new(&mut mem);
        symbolic
            .factorize_numeric_ldlt(
                &mut values,
                mat.as_ref(),
                Side::Lower,
                reg,
                par,
                stack,
                Default::default(),
            )
            .map_err(|e| Error::SingularSystem {
                block: "matrix".into(),
                reason: format!("numeric factorization failed: {e:?}"),
            })?;
        Ok(Ldlt { symbolic, values, n })
    }

    /// Solves in place for the columns of `rhs` (column-major, n rows).
    pub fn solve_many(&self, rhs: &mut Mat<f64>) {
        let par = Par::Seq;
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(rhs.ncols(), par));
        let stack = MemStack::new(&mut mem);
        LdltRef::new(&self.symbolic, &self.values).solve_in_place_with_conj(Conj::No, rhs.as_mut(), par, stack);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut m = Mat::from_fn(self.n, 1, |i, _| b[i]);
        self.solve_many(&mut m);
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn residual(a: &Csr, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.matvec(x);
    b.iter().zip(&ax).map(|(b, a)| b - a).collect()
}

const PROBE_TOL: f64 = 1e-8;

struct Refined {
    x: Vec<f64>,
    rel: f64,
    steps: usize,
    last_update: Vec<f64>,
    r: Vec<f64>,
}

fn argmax_abs(v: &[f64]) -> usize {
    let (mut best, mut at) = (-1.0f64, 0);
    for (i, x) in v.iter().enumerate() {
        if !(x.abs() <= best) {
            best = x.abs();
            at = i;
        }
    }
    at
}

/// Iterative refinement against the unshifted matrix, stopping at 1e-13
/// relative residual, 30 steps or the first non-decreasing step.
fn refine(a: &Csr, fact: &Ldlt, b: &[f64]) -> Refined {
    let n = a.nrows;
    let bnorm = norm(b);
    let denom = if bnorm > 0.0 { bnorm } else { 1.0 };
    let mut x = fact.solve(b);
    let mut r = residual(a, &x, b);
    let mut rel = norm(&r) / denom;
    let mut steps = 0;
    let mut last_update = vec![0.0; n];
    while rel > 1e-13 && steps < 30 {
        let dx = fact.solve(&r);
        let mut trial = x.clone();
        for (t, d) in trial.iter_mut().zip(&dx) {
            *t += d;
        }
        let rt = residual(a, &trial, b);
        let rel_t = norm(&rt) / denom;
        steps += 1;
        last_update = dx;
        if !(rel_t < rel) {
            break;
        }
        x = trial;
        r = rt;
        rel = rel_t;
    }
    Refined {
        x,
        rel,
        steps,
        last_update,
        r,
    }
}

/// Outcome of a regularized factorization followed by iterative refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub n: usize,
    pub nnz: usize,
    /// ‖b − A x‖ / ‖b‖ (absolute when b = 0).
    pub relative_residual: f64,
    pub refinement_steps: usize,
    pub static_shift: f64,
}

/// Solves the symmetric quasi-definite system A x = b. Primal unknowns get a
/// tiny positive shift and dual unknowns a negative one so the LDLᵀ exists
/// for any ordering; refinement against the unshifted matrix removes the
/// perturbation.
pub fn solve_quasidefinite(
    a: &Csr,
    b: &[f64],
    primal: &dyn Fn(usize) -> bool,
    name: &dyn Fn(usize) -> &'static str,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.nrows;
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "rhs of length {} for {n} unknowns",
            b.len()
        )));
    }
    let diag_scale = a
        .diagonal()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(a.max_abs() * 1e-3);
    let eps = 1e-10 * diag_scale;
    let signs: Vec<i8> = (0..n).map(|i| if primal(i) { 1 } else { -1 }).collect();
    let shift: Vec<f64> = signs.iter().map(|&s| s as f64 * eps).collect();
    let fact = Ldlt::factor(a, Some(&shift), Some(&signs))?;
    // a generic rhs has a component outside the range of a singular A, so
    // refinement on it stalls; the amplified null mode locates the block
    let probe: Vec<f64> = (0..n).map(|i| (1.3 * i as f64 + 0.7).sin()).collect();
    let p = refine(a, &fact, &probe);
    if !p.rel.is_finite() || p.rel > PROBE_TOL {
        return Err(Error::SingularSystem {
            block: name(argmax_abs(&p.x)).into(),
            reason: format!(
                "near-null mode detected (probe residual {:.3e} after {} refinement steps)",
                p.rel, p.steps
            ),
        });
    }
    let Refined {
        x,
        rel,
        steps,
        last_update,
        r,
    } = refine(a, &fact, b);
    if !rel.is_finite() || rel > RESIDUAL_TOL {
        // the block carrying the largest correction hosts the near-null mode
        let at = if last_update.iter().any(|v| *v != 0.0) {
            argmax_abs(&last_update)
        } else {
            argmax_abs(&r)
        };
        return Err(Error::SingularSystem {
            block: name(at).into(),
            reason: format!(
                "relative residual {rel:.3e} after {steps} refinement steps (system is singular or nearly so)"
            ),
        });
    }
    Ok((
        x,
        SolveReport {
            n,
            nnz: a.nnz(),
            relative_residual: rel,
            refinement_steps: steps,
            static_shift: eps,
        },
    ))
}

/// Discrete fields after back-substitution of constraints and boundary
/// values.
#[derive(Clone, Debug)]
pub struct SolutionFields {
    pub us: Vec<f64>,
    pub ud: Vec<f64>,
    pub ps: Vec<f64>,
    pub pd: Vec<f64>,
    pub delta: f64,
    pub multipliers: [f64; 2],
    /// Full unreduced vector (u_S, u_D, p_S, p_D, δ, λ_S, λ_D).
    pub full: Vec<f64>,
    pub report: SolveReport,
}

pub fn solve(system: &CoupledSystem) -> Result<SolutionFields> {
    let ranges: &BlockRanges = system.ranges();
    let (y, report) = solve_quasidefinite(&system.matrix, &system.rhs, &|i| ranges.is_primal(i), &|i| {
        ranges.block_of(i)
    })?;
    let full = system.reduction.expand(&y);
    let l = system.reduction.layout;
    Ok(SolutionFields {
        us: full[l.us..l.ud].to_vec(),
        ud: full[l.ud..l.ps].to_vec(),
        ps: full[l.ps..l.pd].to_vec(),
        pd: full[l.pd..l.delta].to_vec(),
        delta: full[l.delta],
        multipliers: [full[l.lambda_s], full[l.lambda_d]],
        full,
        report,
    })
}

/// ‖Pᵀ(b − K x)‖ / ‖Pᵀ b‖ for the reconstructed full vector: the residual
/// of the constrained equations written in unreduced form.
pub fn kkt_residual(system: &CoupledSystem, sol: &SolutionFields) -> f64 {
    let r = residual(&system.full_matrix, &sol.full, &system.full_rhs);
    let rr = system.reduction.restrict(&r);
    let b = system.reduction.restrict(&system.full_rhs);
    norm(&rr) / norm(&b).max(f64::MIN_POSITIVE)
}

/// Smallest generalized singular value of the pressure-velocity coupling.
#[derive(Clone, Debug, PartialEq)]
pub struct InfSupReport {
    pub beta: f64,
    pub h_s: f64,
    pub h_d: f64,
    pub pair: String,
    pub n_pressure: usize,
    /// Pressure modes with b(v, q) = 0 for every v (β = 0 when nonzero).
    pub kernel_dim: usize,
    /// Smallest nonzero generalized singular value.
    pub beta_nonzero: f64,
}

/// Eigenvalues λ of the inf-sup problem, ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct InfSupSpectrum {
    pub eigenvalues: Vec<f64>,
}

impl InfSupSpectrum {
    fn new(mut ev: Vec<f64>) -> Self {
        ev.sort_by(f64::total_cmp);
        InfSupSpectrum { eigenvalues: ev }
    }

    /// sqrt of the smallest eigenvalue (negative round-off clamped to 0).
    pub fn beta(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0).max(0.0).sqrt()
    }

    fn zero_tol(&self) -> f64 {
        1e-10 * self.eigenvalues.last().copied().unwrap_or(0.0).abs()
    }

    /// Number of eigenvalues that vanish relative to the largest one.
    pub fn kernel_dim(&self) -> usize {
        let tol = self.zero_tol();
        self.eigenvalues.iter().filter(|&&l| l <= tol).count()
    }

    /// sqrt of the smallest eigenvalue above the kernel threshold.
    pub fn beta_nonzero(&self) -> f64 {
        let tol = self.zero_tol();
        self.eigenvalues
            .iter()
            .find(|&&l| l > tol)
            .copied()
            .unwrap_or(0.0)
            .sqrt()
    }
}

/// β = sqrt(λ_min) of B X⁻¹ Bᵀ q = λ M q on the subspace where every
/// functional in `constraints` vanishes. `b` is (n_q × n_v), `x` the SPD
/// velocity Gram, `m` the SPD pressure Gram (dense, n_q × n_q).
pub fn infsup_from_blocks(b: &Csr, x: &Csr, m: &Mat<f64>, constraints: &[Vec<f64>]) -> Result<InfSupSpectrum> {
    let nq = b.nrows;
    if nq > INFSUP_CAP {
        return Err(Error::SizeCapExceeded {
            size: nq,
            cap: INFSUP_CAP,
        });
    }
    if x.nrows != b.ncols || m.nrows() != nq {
        return Err(Error::DimensionMismatch("inf-sup blocks disagree".into()));
    }
    let fx = Ldlt::factor(x, None, None)?;
    // Y = X⁻¹ Bᵀ
    let bt = b.transpose();
    let mut y = Mat::<f64>::zeros(x.nrows, nq);
    for (i, j, v) in bt.triplets() {
        y[(i, j)] = v;
    }
    fx.solve_many(&mut y);
    let mut s = Mat::<f64>::zeros(nq, nq);
    for i in 0..nq {
        let (cols, vals) = b.row(i);
        for j in 0..nq {
            s[(i, j)] = cols.iter().zip(vals).map(|(&k, v)| v * y[(k, j)]).sum();
        }
    }
    // null-space basis: one pivot coordinate per constraint is solved for
    let mut dropped: Vec<usize> = Vec::new();
    for c in constraints {
        let k = (0..nq)
            .filter(|k| !dropped.contains(k))
            .max_by(|&a, &b| c[a].abs().total_cmp(&c[b].abs()))
            .ok_or_else(|| Error::InvalidArgument("too many constraints".into()))?;
        if c[k] == 0.0 {
            return Err(Error::InvalidArgument("zero constraint functional".into()));
        }
        dropped.push(k);
    }
    let basis_cols: Vec<usize> = (0..nq).filter(|k| !dropped.contains(k)).collect();
    let nz = basis_cols.len();
    // explicit basis: free coordinates are basis_cols, dropped ones solved
    // from the constraints (one pivot per constraint, disjoint pivots)
    let mut zm = Mat::<f64>::zeros(nq, nz);
    for (col, &f) in basis_cols.iter().enumerate() {
        zm[(f, col)] = 1.0;
    }
    solve_pivots(&mut zm, constraints, &dropped)?;
    let st = zm.transpose() * &s * &zm;
    let mt = zm.transpose() * m * &zm;
    let llt = mt.llt(Side::Lower).map_err(|e| Error::SingularSystem {
        block: "pressure Gram".into(),
        reason: format!("{e:?}"),
    })?;
    let l = llt.L().to_owned();
    let mut w = st.clone();
    l.solve_lower_triangular_in_place(&mut w);
    let mut c = w.transpose().to_owned();
    l.solve_lower_triangular_in_place(&mut c);
    let sym = Mat::from_fn(nz, nz, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let ev = sym
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::SingularSystem {
            block: "inf-sup eigenproblem".into(),
            reason: format!("{e:?}"),
        })?;
    Ok(InfSupSpectrum::new(ev))
}

/// Fills the pivot rows of `z` so every column satisfies the constraints.
fn solve_pivots(z: &mut Mat<f64>, constraints: &[Vec<f64>], pivots: &[usize]) -> Result<()> {
    let k = pivots.len();
    if k == 0 {
        return Ok(());
    }
    // small dense system: A[c][p] q_p = −Σ_free c_i z_i
    let mut a = vec![0.0; k * k];
    for (r, c) in constraints.iter().enumerate() {
        for (p, &piv) in pivots.iter().enumerate() {
            a[r * k + p] = c[piv];
        }
    }
    let ncols = z.ncols();
    let mut rhs = vec![0.0; k * ncols];
    for col in 0..ncols {
        for (r, c) in constraints.iter().enumerate() {
            rhs[col * k + r] = -(0..z.nrows()).map(|i| c[i] * z[(i, col)]).sum::<f64>();
        }
    }
    crate::geom::dense_solve(k, &mut a, &mut rhs, ncols)
        .ok_or_else(|| Error::InvalidArgument("dependent mean constraints".into()))?;
    for col in 0..ncols {
        for (p, &piv) in pivots.iter().enumerate() {
            z[(piv, col)] = rhs[col * k + p];
        }
    }
    Ok(())
}

/// Discrete inf-sup constant of the constrained pair: pressures (p_S, p_D,
/// δ) with zero means on both subdomains, velocities in X^h with the full
/// H¹ × H(div) norm.
pub fn estimate_infsup(disc: &Discretization, system: &CoupledSystem) -> Result<InfSupReport> {
    let ranges = system.ranges();
    let nq = ranges.delta + 1 - ranges.ps.start;
    if nq > INFSUP_CAP {
        return Err(Error::SizeCapExceeded {
            size: nq,
            cap: INFSUP_CAP,
        });
    }
    let nv = ranges.n_velocity();
    let rows: Vec<usize> = (ranges.ps.start..=ranges.delta).collect();
    let cols: Vec<usize> = (0..nv).collect();
    let mut b = system.matrix.select(&rows, &cols);
    for v in b.values.iter_mut() {
        *v = -*v;
    }
    let (xg, mg) = crate::assembly::stability_grams(disc);
    // velocity Gram through the same reduction as the system
    let l = system.reduction.layout;
    let mut t = Triplets::new(l.n, l.n);
    for (i, j, v) in xg.triplets() {
        t.push(i, j, v);
    }
    let xr = system.reduction.congruence(&t.to_csr()).select(&cols, &cols);
    let nps = disc.ps.n_dofs;
    let mut m = Mat::<f64>::zeros(nq, nq);
    for (i, j, v) in mg.triplets() {
        m[(i, j)] = v;
    }
    m[(nq - 1, nq - 1)] = 1.0;
    let mut cs = vec![0.0; nq];
    cs[..nps].copy_from_slice(&disc.ps.zero_mean_functional(&disc.pair.stokes));
    let mut cd = vec![0.0; nq];
    cd[nps..nq - 1].copy_from_slice(&disc.pd.zero_mean_functional(&disc.pair.darcy));
    let spec = infsup_from_blocks(&b, &xr, &m, &[cs, cd])?;
    Ok(InfSupReport {
        beta: spec.beta(),
        kernel_dim: spec.kernel_dim(),
        beta_nonzero: spec.beta_nonzero(),
        h_s: disc.pair.stokes.h,
        h_d: disc.pair.darcy.h,
        pair: disc.element.name().to_string(),
        n_pressure: nq,
    })
}
