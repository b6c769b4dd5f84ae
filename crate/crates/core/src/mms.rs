//! Manufactured solutions, the data they induce, and discrete error norms.
//!
//! `paper_3d` lives on the unit cube split at z = 1/2 (Stokes above):
//!
//! ```text
//! a(t) = t(1-t),  c(t) = 1-2t,  s2(t) = a², ac(t) = a c
//! u_S = (-2 s2(x) ac(y) ac(z),  ac(x) s2(y) ac(z),  ac(x) ac(y) s2(z))
//! p_S = exp(x + y + z)
//! p_D = g(x) g(y) h(z) - p_D0,  g(t) = t(1-t) sin 2πt,  h(t) = t sin 2πt
//! ```
//!
//! `desk_2d` lives on the unit square split at y = 1/2:
//!
//! ```text
//! ψ = a A(x) B(y),  a = 1/100,  A = x²(1-x)²,  B = (1-y)² sin πy,  u_S = (∂_y ψ, -∂_x ψ)
//! p_S = exp(x + y),  p_D = cos πx cos(πy/2) - p_D0
//! ```
//!
//! In both cases u_D = -K∇p_D, f_S = -νΔu_S + ∇p_S, f_D = div u_D,
//! g_ν = (u_S - u_D)·ν and g_t = 2ν ε(u_S)ν - p_S ν + νκ⁻¹π_t u_S + p_D ν.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{load_degree, Coefficients, Discretization, Loads, Permeability};
use crate::error::{Error, Result};
use crate::geom::{self, Mat3, Point};
use crate::refelem::{self, AffineMap};
use crate::solver::SolutionFields;
use crate::spaces::{BasisValues, Entity, FeSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionId {
    #[serde(rename = "paper_3d")]
    Paper3d,
    #[serde(rename = "desk_2d")]
    Desk2d,
}

impl SolutionId {
    pub fn dim(self) -> usize {
        match self {
            SolutionId::Paper3d => 3,
            SolutionId::Desk2d => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SolutionId::Paper3d => "paper_3d",
            SolutionId::Desk2d => "desk_2d",
        }
    }
}

/// Closed-form fields with hand-coded derivatives.
#[derive(Clone, Copy)]
struct Fields {
    u_s: fn(&Point) -> Point,
    grad_u_s: fn(&Point) -> Mat3,
    lap_u_s: fn(&Point) -> Point,
    p_s: fn(&Point) -> f64,
    grad_p_s: fn(&Point) -> Point,
    /// p_D before normalization.
    p_d: fn(&Point) -> f64,
    grad_p_d: fn(&Point) -> Point,
    hess_p_d: fn(&Point) -> Mat3,
}

/// Exact solution with the coefficients used to derive its data.
#[derive(Clone)]
pub struct ExactSolution {
    pub id: SolutionId,
    pub dim: usize,
    pub viscosity: f64,
    pub kappa: f64,
    /// Constant permeability tensor.
    pub permeability: Mat3,
    /// Mean of the raw p_D over Ω_D, subtracted from p_D.
    pub p_d0: f64,
    fields: Fields,
}

// paper_3d building blocks
fn a(t: f64) -> f64 {
    t * (1.0 - t)
}
fn c(t: f64) -> f64 {
    1.0 - 2.0 * t
}
fn s2(t: f64) -> (f64, f64, f64) {
    let (a, c) = (a(t), c(t));
    (a * a, 2.0 * a * c, 2.0 * c * c - 4.0 * a)
}
fn ac(t: f64) -> (f64, f64, f64) {
    let (a, c) = (a(t), c(t));
    (a * c, c * c - 2.0 * a, -6.0 * c)
}
fn g3(t: f64) -> (f64, f64, f64) {
    let (s, co) = ((2.0 * PI * t).sin(), (2.0 * PI * t).cos());
    let (a, c) = (a(t), c(t));
    (
        a * s,
        c * s + 2.0 * PI * a * co,
        -2.0 * s + 4.0 * PI * c * co - 4.0 * PI * PI * a * s,
    )
}
fn h3(t: f64) -> (f64, f64, f64) {
    let (s, co) = ((2.0 * PI * t).sin(), (2.0 * PI * t).cos());
    (t * s, s + 2.0 * PI * t * co, 4.0 * PI * co - 4.0 * PI * PI * t * s)
}

/// Component factors of u_S in 3D: u_i = coef_i f_i(x) g_i(y) h_i(z).
fn u3_factors(x: &Point) -> [(f64, [(f64, f64, f64); 3]); 3] {
    let (sx, sy, sz) = (s2(x[0]), s2(x[1]), s2(x[2]));
    let (ax, ay, az) = (ac(x[0]), ac(x[1]), ac(x[2]));
    [(-2.0, [sx, ay, az]), (1.0, [ax, sy, az]), (1.0, [ax, ay, sz])]
}

fn u3(x: &Point) -> Point {
    let f = u3_factors(x);
    let mut u = [0.0; 3];
    for i in 0..3 {
        u[i] = f[i].0 * f[i].1[0].0 * f[i].1[1].0 * f[i].1[2].0;
    }
    u
}

fn grad_u3(x: &Point) -> Mat3 {
    let f = u3_factors(x);
    let mut g = [[0.0; 3]; 3];
    for i in 0..3 {
        let [p, q, r] = f[i].1;
        g[i] = [
            f[i].0 * p.1 * q.0 * r.0,
            f[i].0 * p.0 * q.1 * r.0,
            f[i].0 * p.0 * q.0 * r.1,
        ];
    }
    g
}

fn lap_u3(x: &Point) -> Point {
    let f = u3_factors(x);
    let mut l = [0.0; 3];
    for i in 0..3 {
        let [p, q, r] = f[i].1;
        l[i] = f[i].0 * (p.2 * q.0 * r.0 + p.0 * q.2 * r.0 + p.0 * q.0 * r.2);
    }
    l
}

fn exp_sum(x: &Point) -> f64 {
    (x[0] + x[1] + x[2]).exp()
}

fn grad_exp3(x: &Point) -> Point {
    let e = exp_sum(x);
    [e, e, e]
}

fn pd3(x: &Point) -> f64 {
    g3(x[0]).0 * g3(x[1]).0 * h3(x[2]).0
}

fn grad_pd3(x: &Point) -> Point {
    let (gx, gy, hz) = (g3(x[0]), g3(x[1]), h3(x[2]));
    [gx.1 * gy.0 * hz.0, gx.0 * gy.1 * hz.0, gx.0 * gy.0 * hz.1]
}

fn hess_pd3(x: &Point) -> Mat3 {
    let (gx, gy, hz) = (g3(x[0]), g3(x[1]), h3(x[2]));
    let f = [[gx.0, gx.1, gx.2], [gy.0, gy.1, gy.2], [hz.0, hz.1, hz.2]];
    let mut hm = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut v = 1.0;
            for k in 0..3 {
                let order = (i == k) as usize + (j == k) as usize;
                v *= f[k][order];
            }
            hm[i][j] = v;
        }
    }
    hm
}

/// Stream-function amplitude of `desk_2d`. Small like the 3D velocity, so
/// the Stokes pressure error is not swamped by the velocity error.
pub const DESK_AMPLITUDE: f64 = 1e-2;

// desk_2d building blocks: A and its first three derivatives, B likewise
fn a2(x: f64) -> [f64; 4] {
    let s = DESK_AMPLITUDE;
    [
        s * x * x * (1.0 - x) * (1.0 - x),
        s * (2.0 * x - 6.0 * x * x + 4.0 * x * x * x),
        s * (2.0 - 12.0 * x + 12.0 * x * x),
        s * (-12.0 + 24.0 * x),
    ]
}

fn b2(y: f64) -> [f64; 4] {
    let (s, co) = ((PI * y).sin(), (PI * y).cos());
    let (w, w1, w2) = ((1.0 - y) * (1.0 - y), -2.0 * (1.0 - y), 2.0);
    [
        w * s,
        w1 * s + w * PI * co,
        w2 * s + 2.0 * w1 * PI * co - w * PI * PI * s,
        3.0 * w2 * PI * co - 3.0 * w1 * PI * PI * s - w * PI * PI * PI * co,
    ]
}

fn u2(x: &Point) -> Point {
    let (a, b) = (a2(x[0]), b2(x[1]));
    [a[0] * b[1], -a[1] * b[0], 0.0]
}

fn grad_u2(x: &Point) -> Mat3 {
    let (a, b) = (a2(x[0]), b2(x[1]));
    [
        [a[1] * b[1], a[0] * b[2], 0.0],
        [-a[2] * b[0], -a[1] * b[1], 0.0],
        [0.0; 3],
    ]
}

fn lap_u2(x: &Point) -> Point {
    let (a, b) = (a2(x[0]), b2(x[1]));
    [a[2] * b[1] + a[0] * b[3], -a[3] * b[0] - a[1] * b[2], 0.0]
}

fn exp2(x: &Point) -> f64 {
    (x[0] + x[1]).exp()
}

fn grad_exp2(x: &Point) -> Point {
    let e = exp2(x);
    [e, e, 0.0]
}

fn pd2(x: &Point) -> f64 {
    (PI * x[0]).cos() * (0.5 * PI * x[1]).cos()
}

fn grad_pd2(x: &Point) -> Point {
    let (cx, sx) = ((PI * x[0]).cos(), (PI * x[0]).sin());
    let (cy, sy) = ((0.5 * PI * x[1]).cos(), (0.5 * PI * x[1]).sin());
    [-PI * sx * cy, -0.5 * PI * cx * sy, 0.0]
}

fn hess_pd2(x: &Point) -> Mat3 {
    let (cx, sx) = ((PI * x[0]).cos(), (PI * x[0]).sin());
    let (cy, sy) = ((0.5 * PI * x[1]).cos(), (0.5 * PI * x[1]).sin());
    [
        [-PI * PI * cx * cy, 0.5 * PI * PI * sx * sy, 0.0],
        [0.5 * PI * PI * sx * sy, -0.25 * PI * PI * cx * cy, 0.0],
        [0.0; 3],
    ]
}

/// Integral of f over the box [lo, hi] by composite Gauss–Legendre (8
/// panels of the most accurate 1D rule per axis).
fn box_integral(dim: usize, lo: [f64; 3], hi: [f64; 3], f: &dyn Fn(&Point) -> f64) -> f64 {
    let rule = refelem::quadrature_capped(1, 15);
    let panels = 8;
    let axes: Vec<Vec<(f64, f64)>> = (0..dim)
        .map(|k| {
            let len = (hi[k] - lo[k]) / panels as f64;
            (0..panels)
                .flat_map(|p| {
                    rule.points
                        .iter()
                        .zip(&rule.weights)
                        .map(move |(q, w)| (lo[k] + (p as f64 + q[0]) * len, w * len))
                })
                .collect()
        })
        .collect();
    let mut total = 0.0;
    let mut idx = vec![0usize; dim];
    loop {
        let mut x = [0.0; 3];
        let mut w = 1.0;
        for k in 0..dim {
            x[k] = axes[k][idx[k]].0;
            w *= axes[k][idx[k]].1;
        }
        total += w * f(&x);
        let mut k = 0;
        while k < dim {
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == dim {
            return total;
        }
    }
}

impl ExactSolution {
    fn build(id: SolutionId, fields: Fields, coef: &Coefficients) -> Result<ExactSolution> {
        let dim = id.dim();
        let permeability = match &coef.permeability {
            Permeability::Constant(k) => *k,
            Permeability::PerCell(_) => {
                return Err(Error::InvalidArgument(
                    "manufactured solutions need a constant permeability".into(),
                ))
            }
        };
        if coef.kappa_facets.is_some() {
            return Err(Error::InvalidArgument(
                "manufactured solutions need a constant BJS coefficient".into(),
            ));
        }
        let mut hi = [1.0; 3];
        hi[dim - 1] = 0.5;
        let p_d0 = box_integral(dim, [0.0; 3], hi, &|x| (fields.p_d)(x)) / 0.5;
        Ok(ExactSolution {
            id,
            dim,
            viscosity: coef.viscosity,
            kappa: coef.kappa,
            permeability,
            p_d0,
            fields,
        })
    }

    /// The three-dimensional solution (ν = κ = 1, K = I unless overridden).
    pub fn paper_3d(coef: &Coefficients) -> Result<ExactSolution> {
        Self::build(
            SolutionId::Paper3d,
            Fields {
                u_s: u3,
                grad_u_s: grad_u3,
                lap_u_s: lap_u3,
                p_s: exp_sum,
                grad_p_s: grad_exp3,
                p_d: pd3,
                grad_p_d: grad_pd3,
                hess_p_d: hess_pd3,
            },
            coef,
        )
    }

    /// Two-dimensional analogue on the unit square split at y = 1/2.
    pub fn desk_2d(coef: &Coefficients) -> Result<ExactSolution> {
        Self::build(
            SolutionId::Desk2d,
            Fields {
                u_s: u2,
                grad_u_s: grad_u2,
                lap_u_s: lap_u2,
                p_s: exp2,
                grad_p_s: grad_exp2,
                p_d: pd2,
                grad_p_d: grad_pd2,
                hess_p_d: hess_pd2,
            },
            coef,
        )
    }

    pub fn new(id: SolutionId, coef: &Coefficients) -> Result<ExactSolution> {
        match id {
            SolutionId::Paper3d => Self::paper_3d(coef),
            SolutionId::Desk2d => Self::desk_2d(coef),
        }
    }

    /// Unit normal on Σ pointing from the Stokes into the Darcy region.
    pub fn normal(&self) -> Point {
        let mut n = [0.0; 3];
        n[self.dim - 1] = -1.0;
        n
    }

    pub fn u_s(&self, x: &Point) -> Point {
        (self.fields.u_s)(x)
    }

    pub fn grad_u_s(&self, x: &Point) -> Mat3 {
        (self.fields.grad_u_s)(x)
    }

    pub fn p_s(&self, x: &Point) -> f64 {
        (self.fields.p_s)(x)
    }

    pub fn p_d(&self, x: &Point) -> f64 {
        (self.fields.p_d)(x) - self.p_d0
    }

    pub fn grad_p_d(&self, x: &Point) -> Point {
        (self.fields.grad_p_d)(x)
    }

    pub fn u_d(&self, x: &Point) -> Point {
        geom::scale(&geom::mat_vec(&self.permeability, &self.grad_p_d(x)), -1.0)
    }

    pub fn div_u_d(&self, x: &Point) -> f64 {
        let h = (self.fields.hess_p_d)(x);
        let k = &self.permeability;
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += k[i][j] * h[j][i];
            }
        }
        -s
    }

    pub fn f_s(&self, x: &Point) -> Point {
        let lap = (self.fields.lap_u_s)(x);
        let gp = (self.fields.grad_p_s)(x);
        geom::sub(&gp, &geom::scale(&lap, self.viscosity))
    }

    pub fn f_d(&self, x: &Point) -> f64 {
        self.div_u_d(x)
    }

    pub fn g_nu(&self, x: &Point) -> f64 {
        geom::dot(&geom::sub(&self.u_s(x), &self.u_d(x)), &self.normal())
    }

    pub fn g_t(&self, x: &Point) -> Point {
        let n = self.normal();
        let g = self.grad_u_s(x);
        let mut en = [0.0; 3];
        for r in 0..3 {
            for c in 0..3 {
                en[r] += 0.5 * (g[r][c] + g[c][r]) * n[c];
            }
        }
        let u = self.u_s(x);
        let ut = geom::sub(&u, &geom::scale(&n, geom::dot(&u, &n)));
        let mut out = geom::scale(&en, 2.0 * self.viscosity);
        out = geom::add(&out, &geom::scale(&n, self.p_d(x) - self.p_s(x)));
        geom::add(&out, &geom::scale(&ut, self.viscosity / self.kappa))
    }

    /// Loads for the assembly with all interface inhomogeneities.
    pub fn loads(&self) -> Loads {
        let (a, b, c, d) = (self.clone(), self.clone(), self.clone(), self.clone());
        Loads {
            f_s: Some(Arc::new(move |x| a.f_s(x))),
            f_d: Some(Arc::new(move |x| b.f_d(x))),
            g_t: Some(Arc::new(move |x| c.g_t(x))),
            g_nu: Some(Arc::new(move |x| d.g_nu(x))),
        }
    }
}

/// Errors of one discrete solution against the exact one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Full H¹(Ω_S) norm.
    pub e_us: f64,
    /// Full H¹(Ω_S) norm of the velocity with its bubble part dropped.
    pub e_us_no_bubbles: f64,
    /// H(div, Ω_D) norm.
    pub e_ud: f64,
    /// ‖p_S − (p_h|_S + δ_h)‖.
    pub e_ps: f64,
    pub e_pd: f64,
    /// ‖(p_S − mean p_S) − p_h|_S‖, the mean-free variant.
    pub e_ps_mean_free: f64,
    pub h_s: f64,
    pub h_d: f64,
    pub n: usize,
}

/// Per-cell squared integrals reduced in cell order.
fn integrate_cells(
    space: &FeSpace,
    mesh: &crate::mesh::Mesh,
    degree: usize,
    f: &(dyn Fn(&BasisValues, usize, &Point) -> f64 + Sync),
) -> f64 {
    let dim = mesh.dim;
    let rule = refelem::quadrature_capped(dim, degree);
    let tab = space.tabulate(rule);
    let parts: Vec<f64> = space
        .cells
        .par_iter()
        .map(|&c| {
            let map = AffineMap::new(&mesh.cell_points(c), dim);
            let mut bv = BasisValues::default();
            let mut s = 0.0;
            for (q, w) in rule.weights.iter().enumerate() {
                space.push(mesh, c, &map, &tab[q], &mut bv);
                let x = map.to_physical(&rule.points[q]);
                s += w * map.det.abs() * f(&bv, c, &x);
            }
            s
        })
        .collect();
    parts.iter().sum()
}

fn frob2(a: &Mat3) -> f64 {
    a.iter().map(|r| geom::dot(r, r)).sum()
}

/// Error norms of a discrete solution by elementwise quadrature.
pub fn compute_errors(
    disc: &Discretization,
    sol: &SolutionFields,
    exact: &ExactSolution,
    n_unknowns: usize,
) -> ErrorReport {
    let dim = disc.dim();
    let deg = load_degree(dim);
    let (ms, md) = (&disc.pair.stokes, &disc.pair.darcy);
    let us2 = integrate_cells(&disc.us, ms, deg, &|bv, c, x| {
        let (v, g, _) = disc.us.combine(c, &sol.us, bv);
        let ev = geom::sub(&exact.u_s(x), &v);
        let ge = exact.grad_u_s(x);
        let mut eg = [[0.0; 3]; 3];
        for r in 0..3 {
            eg[r] = geom::sub(&ge[r], &g[r]);
        }
        geom::dot(&ev, &ev) + frob2(&eg)
    });
    // the same norm with the cell and face bubble coefficients removed
    let mut stripped = sol.us.clone();
    for (i, e) in disc.us.dof_entity.iter().enumerate() {
        if matches!(e, Entity::Cell(_) | Entity::Facet(_)) {
            stripped[i] = 0.0;
        }
    }
    let us2_nb = integrate_cells(&disc.us, ms, deg, &|bv, c, x| {
        let (v, g, _) = disc.us.combine(c, &stripped, bv);
        let ev = geom::sub(&exact.u_s(x), &v);
        let ge = exact.grad_u_s(x);
        let mut eg = [[0.0; 3]; 3];
        for r in 0..3 {
            eg[r] = geom::sub(&ge[r], &g[r]);
        }
        geom::dot(&ev, &ev) + frob2(&eg)
    });
    let ud2 = integrate_cells(&disc.ud, md, deg, &|bv, c, x| {
        let (v, _, d) = disc.ud.combine(c, &sol.ud, bv);
        let ev = geom::sub(&exact.u_d(x), &v);
        let ed = exact.div_u_d(x) - d;
        geom::dot(&ev, &ev) + ed * ed
    });
    let ps2 = integrate_cells(&disc.ps, ms, deg, &|bv, c, x| {
        let (v, _, _) = disc.ps.combine(c, &sol.ps, bv);
        let e = exact.p_s(x) - (v[0] + sol.delta);
        e * e
    });
    let pd2 = integrate_cells(&disc.pd, md, deg, &|bv, c, x| {
        let (v, _, _) = disc.pd.combine(c, &sol.pd, bv);
        let e = exact.p_d(x) - v[0];
        e * e
    });
    // mean-free variant: subtract both means
    let vol = ms.region_volume(crate::mesh::Region::Stokes);
    let mean_exact = integrate_cells(&disc.ps, ms, deg, &|_, _, x| exact.p_s(x)) / vol;
    let mean_h = integrate_cells(&disc.ps, ms, deg, &|bv, c, _| disc.ps.combine(c, &sol.ps, bv).0[0]) / vol;
    let ps2_free = integrate_cells(&disc.ps, ms, deg, &|bv, c, x| {
        let (v, _, _) = disc.ps.combine(c, &sol.ps, bv);
        let e = (exact.p_s(x) - mean_exact) - (v[0] - mean_h);
        e * e
    });
    ErrorReport {
        e_us: us2.sqrt(),
        e_us_no_bubbles: us2_nb.sqrt(),
        e_ud: ud2.sqrt(),
        e_ps: ps2.sqrt(),
        e_pd: pd2.sqrt(),
        e_ps_mean_free: ps2_free.sqrt(),
        h_s: ms.h,
        h_d: md.h,
        n: n_unknowns,
    }
}

/// Interpolates the exact fields into the discrete spaces (δ = mean of p_S
/// minus the discrete mean so p_h + δ reproduces the level of p_S).
pub fn interpolate_exact(disc: &Discretization, exact: &ExactSolution) -> SolutionFields {
    let (ms, md) = (&disc.pair.stokes, &disc.pair.darcy);
    let us = disc.us.interpolate(ms, &|x| exact.u_s(x));
    let ud = disc.ud.interpolate(md, &|x| exact.u_d(x));
    let ps = disc.ps.interpolate(ms, &|x| [exact.p_s(x), 0.0, 0.0]);
    let pd = disc.pd.interpolate(md, &|x| [exact.p_d(x), 0.0, 0.0]);
    SolutionFields {
        us,
        ud,
        ps,
        pd,
        delta: 0.0,
        multipliers: [0.0; 2],
        full: Vec::new(),
        report: crate::solver::SolveReport {
            n: 0,
            nnz: 0,
            relative_residual: 0.0,
            refinement_steps: 0,
            static_shift: 0.0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solutions() -> Vec<ExactSolution> {
        let coef = Coefficients::isotropic(1.3, 0.7, 2.0);
        vec![
            ExactSolution::paper_3d(&Coefficients::default()).unwrap(),
            ExactSolution::desk_2d(&Coefficients::default()).unwrap(),
            ExactSolution::paper_3d(&coef).unwrap(),
            ExactSolution::desk_2d(&coef).unwrap(),
        ]
    }

    fn random_point(rng: &mut ChaCha8Rng, dim: usize, stokes: bool) -> Point {
        let mut x = [0.0; 3];
        for k in 0..dim {
            x[k] = rng.random::<f64>();
        }
        x[dim - 1] = if stokes {
            0.5 + 0.5 * x[dim - 1]
        } else {
            0.5 * x[dim - 1]
        };
        x
    }

    fn fd_grad(f: &dyn Fn(&Point) -> f64, x: &Point, dim: usize, h: f64) -> Point {
        let mut g = [0.0; 3];
        for k in 0..dim {
            let (mut xp, mut xm) = (*x, *x);
            xp[k] += h;
            xm[k] -= h;
            g[k] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn fd_lap(f: &dyn Fn(&Point) -> f64, x: &Point, dim: usize, h: f64) -> f64 {
        let mut l = 0.0;
        for k in 0..dim {
            let (mut xp, mut xm) = (*x, *x);
            xp[k] += h;
            xm[k] -= h;
            l += (f(&xp) - 2.0 * f(x) + f(&xm)) / (h * h);
        }
        l
    }

    #[test]
    fn stokes_velocity_is_solenoidal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for e in solutions() {
            for _ in 0..5 {
                let x = random_point(&mut rng, e.dim, true);
                let g = e.grad_u_s(&x);
                let div: f64 = (0..e.dim).map(|k| g[k][k]).sum();
                assert!(div.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for e in solutions() {
            let dim = e.dim;
            for _ in 0..5 {
                let x = random_point(&mut rng, dim, true);
                // gradient of u_S
                let g = e.grad_u_s(&x);
                for r in 0..dim {
                    let fd = fd_grad(&|y| e.u_s(y)[r], &x, dim, 1e-6);
                    for c in 0..dim {
                        assert!((fd[c] - g[r][c]).abs() < 1e-7);
                    }
                }
                // strong form of the momentum equation
                let fs = e.f_s(&x);
                let gp = fd_grad(&|y| e.p_s(y), &x, dim, 1e-6);
                for r in 0..dim {
                    let lap = fd_lap(&|y| e.u_s(y)[r], &x, dim, 1e-4);
                    let strong = -e.viscosity * lap + gp[r];
                    assert!((strong - fs[r]).abs() < 1e-6 * (1.0 + fs[r].abs()), "{:?}", e.id);
                }
                // Darcy data
                let y = random_point(&mut rng, dim, false);
                let gd = fd_grad(&|z| e.p_d(z), &y, dim, 1e-6);
                let ud = e.u_d(&y);
                let kg = geom::mat_vec(&e.permeability, &gd);
                for r in 0..dim {
                    assert!((ud[r] + kg[r]).abs() < 1e-7);
                }
                let div = (0..dim)
                    .map(|k| fd_grad(&|z| e.u_d(z)[k], &y, dim, 1e-5)[k])
                    .sum::<f64>();
                assert!((div - e.f_d(&y)).abs() < 1e-6 * (1.0 + div.abs()));
            }
        }
    }

    #[test]
    fn boundary_conditions_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for e in solutions() {
            let dim = e.dim;
            for _ in 0..20 {
                // Stokes outer boundary: every face of Ω_S except Σ
                let mut x = random_point(&mut rng, dim, true);
                let axis = rng.random_range(0..dim);
                x[axis] = if axis == dim - 1 {
                    1.0
                } else {
                    rng.random_range(0..2) as f64
                };
                assert!(geom::norm(&e.u_s(&x)) < 1e-12);
                // Darcy outer boundary: zero normal velocity
                let mut y = random_point(&mut rng, dim, false);
                let axis = rng.random_range(0..dim);
                y[axis] = if axis == dim - 1 {
                    0.0
                } else {
                    rng.random_range(0..2) as f64
                };
                assert!(e.u_d(&y)[axis].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn paper_pressure_normalization_vanishes() {
        let e = ExactSolution::paper_3d(&Coefficients::default()).unwrap();
        assert!(e.p_d0.abs() < 1e-14);
        let d = ExactSolution::desk_2d(&Coefficients::default()).unwrap();
        assert!(d.p_d0.abs() < 1e-14);
    }

    #[test]
    fn total_flux_identity() {
        // ∫_{Ω_D} f_D = −⟨u_D·ν, 1⟩_Σ with ν pointing into Ω_D
        for e in solutions() {
            let dim = e.dim;
            let mut hi = [1.0; 3];
            hi[dim - 1] = 0.5;
            let int_fd = box_integral(dim, [0.0; 3], hi, &|x| e.f_d(x));
            let nu = e.normal();
            let flux = if dim == 2 {
                box_integral(1, [0.0; 3], [1.0, 0.0, 0.0], &|x| {
                    geom::dot(&e.u_d(&[x[0], 0.5, 0.0]), &nu)
                })
            } else {
                box_integral(2, [0.0; 3], [1.0, 1.0, 0.0], &|x| {
                    geom::dot(&e.u_d(&[x[0], x[1], 0.5]), &nu)
                })
            };
            assert!((int_fd + flux).abs() < 1e-10, "{} vs {}", int_fd, flux);
        }
    }

    #[test]
    fn interface_data_close_the_transmission_conditions() {
        // with g_t the traction defect, σn + νκ⁻¹π_t u + p_D ν − g_t = 0
        let e = ExactSolution::paper_3d(&Coefficients::isotropic(2.0, 0.5, 1.0)).unwrap();
        let x = [0.3, 0.6, 0.5];
        let n = e.normal();
        let g = e.grad_u_s(&x);
        let mut sn = [0.0; 3];
        for r in 0..3 {
            for c in 0..3 {
                sn[r] += e.viscosity * (g[r][c] + g[c][r]) * n[c];
            }
            sn[r] -= e.p_s(&x) * n[r];
        }
        let u = e.u_s(&x);
        let gt = e.g_t(&x);
        for r in 0..2 {
            assert!((sn[r] + e.viscosity / e.kappa * u[r] - gt[r]).abs() < 1e-13);
        }
        assert!((sn[2] + e.p_d(&x) * n[2] - gt[2]).abs() < 1e-13);
        let jump = geom::dot(&geom::sub(&u, &e.u_d(&x)), &n);
        assert!((e.g_nu(&x) - jump).abs() < 1e-15);
    }

    fn desk_disc(n: usize, pair: crate::spaces::ElementPair) -> Discretization {
        let mp = crate::mesh::build_pair(2, crate::mesh::BoxDomain::unit(), n, n, 0.5).unwrap();
        Discretization::new(mp, pair, false).unwrap()
    }

    #[test]
    fn error_of_zero_fields_is_the_exact_norm() {
        let e = ExactSolution::desk_2d(&Coefficients::default()).unwrap();
        let disc = desk_disc(4, crate::spaces::ElementPair::MiniRt0);
        let mut zero = interpolate_exact(&disc, &e);
        for v in [&mut zero.us, &mut zero.ud, &mut zero.ps, &mut zero.pd] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        let r = compute_errors(&disc, &zero, &e, 0);
        let lo_s = [0.0, 0.5, 0.0];
        let hi_d = [1.0, 0.5, 0.0];
        let pd = box_integral(2, [0.0; 3], hi_d, &|x| e.p_d(x).powi(2)).sqrt();
        let ps = box_integral(2, lo_s, [1.0; 3], &|x| e.p_s(x).powi(2)).sqrt();
        let ud = box_integral(2, [0.0; 3], hi_d, &|x| {
            let u = e.u_d(x);
            geom::dot(&u, &u) + e.div_u_d(x).powi(2)
        })
        .sqrt();
        let us = box_integral(2, lo_s, [1.0; 3], &|x| {
            let u = e.u_s(x);
            geom::dot(&u, &u) + frob2(&e.grad_u_s(x))
        })
        .sqrt();
        for (got, want) in [(r.e_pd, pd), (r.e_ps, ps), (r.e_ud, ud), (r.e_us, us)] {
            assert!((got - want).abs() < 1e-6 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn interpolation_errors_follow_approximation_order() {
        use crate::spaces::ElementPair;
        let e = ExactSolution::desk_2d(&Coefficients::default()).unwrap();
        for (pair, order) in [(ElementPair::MiniRt0, 1.0), (ElementPair::TaylorHoodRt1, 2.0)] {
            let errs: Vec<ErrorReport> = [8, 16]
                .iter()
                .map(|&n| {
                    let d = desk_disc(n, pair);
                    compute_errors(&d, &interpolate_exact(&d, &e), &e, 0)
                })
                .collect();
            let ratio = 2f64.powf(order);
            for (a, b) in [
                (errs[0].e_us, errs[1].e_us),
                (errs[0].e_ud, errs[1].e_ud),
                (errs[0].e_pd, errs[1].e_pd),
            ] {
                assert!(((a / b) / ratio - 1.0).abs() < 0.15, "{:?}: {} / {}", pair, a, b);
            }
        }
    }

    #[test]
    fn galerkin_darcy_velocity_error_halves() {
        use crate::spaces::ElementPair;
        let coef = Coefficients::default();
        let e = ExactSolution::desk_2d(&coef).unwrap();
        let errs: Vec<ErrorReport> = [8, 16]
            .iter()
            .map(|&n| {
                let d = desk_disc(n, ElementPair::MiniRt0);
                let sys = crate::assembly::assemble(&d, &coef, &e.loads()).unwrap();
                let sol = crate::solver::solve(&sys).unwrap();
                compute_errors(&d, &sol, &e, sys.n_unknowns())
            })
            .collect();
        let ratio = errs[0].e_ud / errs[1].e_ud;
        assert!((ratio / 2.0 - 1.0).abs() < 0.15, "ratio {ratio}");
        assert!(errs[1].e_us_no_bubbles > 0.0 && errs[1].n > errs[0].n);
    }
}
