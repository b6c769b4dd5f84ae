//! H(div)-conforming reference bases (Raviart–Thomas and BDM).
//!
//! Shape functions are dual to facet moments against Lagrange polynomials on
//! each facet (nodes at the facet vertices, plus the midpoint for quadratic
//! moments) and, where required, interior moments. They are obtained by
//! inverting the moment matrix of a monomial spanning set.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use super::{facet_local_vertices, facet_quadrature, quadrature, reference_facet_normal, reference_vertex};
use crate::error::{Error, Result};
use crate::geom::{self, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HdivFamily {
    Rt0,
    Rt1,
    Bdm1,
    Bdm2,
}

impl HdivFamily {
    /// Degree of the normal trace on a facet.
    pub fn facet_degree(self) -> usize {
        match self {
            HdivFamily::Rt0 => 0,
            HdivFamily::Rt1 | HdivFamily::Bdm1 => 1,
            HdivFamily::Bdm2 => 2,
        }
    }

    /// Degree of the discontinuous pressure space paired with the family.
    pub fn pressure_degree(self) -> usize {
        match self {
            HdivFamily::Rt0 | HdivFamily::Bdm1 => 0,
            HdivFamily::Rt1 | HdivFamily::Bdm2 => 1,
        }
    }

    /// Total polynomial degree of the shape functions.
    pub fn degree(self) -> usize {
        match self {
            HdivFamily::Rt0 | HdivFamily::Bdm1 => 1,
            HdivFamily::Rt1 | HdivFamily::Bdm2 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HdivFamily::Rt0 => "RT0",
            HdivFamily::Rt1 => "RT1",
            HdivFamily::Bdm1 => "BDM1",
            HdivFamily::Bdm2 => "BDM2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HdivLayout {
    pub n_local: usize,
    pub facet_dofs: usize,
    pub interior_dofs: usize,
}

pub fn hdiv_layout(family: HdivFamily, dim: usize) -> Result<HdivLayout> {
    let supported = match family {
        HdivFamily::Rt0 | HdivFamily::Bdm1 => dim == 2 || dim == 3,
        HdivFamily::Rt1 | HdivFamily::Bdm2 => dim == 2,
    };
    if !supported {
        return Err(Error::UnsupportedElement(format!("{} in {dim}D", family.name())));
    }
    let facet_dofs = match family.facet_degree() {
        0 => 1,
        1 => dim,
        _ => 3,
    };
    let interior_dofs = match family {
        HdivFamily::Rt1 => 2,
        HdivFamily::Bdm2 => 3,
        _ => 0,
    };
    Ok(HdivLayout {
        n_local: (dim + 1) * facet_dofs + interior_dofs,
        facet_dofs,
        interior_dofs,
    })
}

#[derive(Clone, Copy, Debug)]
enum Span {
    /// Monomial times a unit vector.
    Comp(usize, [i32; 3]),
    /// Monomial times the position vector.
    Radial([i32; 3]),
}

fn monomial(e: &[i32; 3], x: &Point) -> f64 {
    x[0].powi(e[0]) * x[1].powi(e[1]) * x[2].powi(e[2])
}

fn monomial_grad(e: &[i32; 3], x: &Point) -> Point {
    let mut g = [0.0; 3];
    for k in 0..3 {
        if e[k] > 0 {
            let mut d = *e;
            d[k] -= 1;
            g[k] = e[k] as f64 * monomial(&d, x);
        }
    }
    g
}

impl Span {
    fn eval(&self, dim: usize, x: &Point) -> (Point, f64) {
        match *self {
            Span::Comp(c, e) => {
                let mut v = [0.0; 3];
                v[c] = monomial(&e, x);
                (v, monomial_grad(&e, x)[c])
            }
            Span::Radial(e) => {
                let m = monomial(&e, x);
                let mut v = [0.0; 3];
                for k in 0..dim {
                    v[k] = m * x[k];
                }
                let deg: i32 = e.iter().sum();
                (v, (deg as f64 + dim as f64) * m)
            }
        }
    }
}

fn exponents(dim: usize, max_deg: i32, exact: bool) -> Vec<[i32; 3]> {
    let mut out = Vec::new();
    let zmax = if dim == 3 { max_deg } else { 0 };
    for s in 0..=max_deg {
        if exact && s != max_deg {
            continue;
        }
        for a in (0..=s).rev() {
            for c in 0..=zmax.min(s - a) {
                let b = s - a - c;
                out.push([a, b, c]);
            }
        }
    }
    out
}

fn spanning_set(family: HdivFamily, dim: usize) -> Vec<Span> {
    let k = family.degree() as i32;
    let mut out = Vec::new();
    let base_deg = match family {
        HdivFamily::Rt0 => 0,
        HdivFamily::Rt1 => 1,
        _ => k,
    };
    for c in 0..dim {
        for e in exponents(dim, base_deg, false) {
            out.push(Span::Comp(c, e));
        }
    }
    if matches!(family, HdivFamily::Rt0 | HdivFamily::Rt1) {
        for e in exponents(dim, base_deg, true) {
            out.push(Span::Radial(e));
        }
    }
    out
}

/// Lagrange functions on a facet in terms of the facet barycentrics `mu`
/// (ordered like the facet's local vertices).
pub fn facet_moment_functions(degree: usize, mu: &[f64]) -> Vec<f64> {
    match degree {
        0 => vec![1.0],
        1 => mu.to_vec(),
        2 => {
            debug_assert_eq!(mu.len(), 2);
            vec![
                mu[0] * (2.0 * mu[0] - 1.0),
                mu[1] * (2.0 * mu[1] - 1.0),
                4.0 * mu[0] * mu[1],
            ]
        }
        _ => unreachable!("facet moments of degree {degree}"),
    }
}

fn interior_moment_functions(family: HdivFamily, x: &Point) -> Vec<Point> {
    match family {
        HdivFamily::Rt1 => vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        HdivFamily::Bdm2 => vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-x[1], x[0], 0.0]],
        _ => Vec::new(),
    }
}

/// Coefficients (spanning set -> dual basis), column per shape function.
struct Tables {
    span: Vec<Span>,
    coeffs: Vec<f64>,
}

fn build_tables(family: HdivFamily, dim: usize) -> Tables {
    let layout = hdiv_layout(family, dim).expect("supported family");
    let span = spanning_set(family, dim);
    let n = span.len();
    assert_eq!(n, layout.n_local, "spanning set size");
    // moment matrix, row-major: rows are DOFs, columns spanning functions
    let mut l = vec![0.0; n * n];
    let kf = family.facet_degree();
    let mut row = 0;
    for j in 0..=dim {
        let fv = facet_local_vertices(dim, j);
        let pts: Vec<Point> = fv.iter().map(|&v| reference_vertex(dim, v)).collect();
        let normal = reference_facet_normal(dim, j);
        let (qp, qw) = facet_quadrature(&pts, 6);
        for (x, w) in qp.iter().zip(&qw) {
            let (lam, _) = super::barycentric(dim, x);
            let mu: Vec<f64> = fv.iter().map(|&v| lam[v]).collect();
            let q = facet_moment_functions(kf, &mu);
            for (m, s) in span.iter().enumerate() {
                let (v, _) = s.eval(dim, x);
                let vn = geom::dot(&v, &normal);
                for (a, qa) in q.iter().enumerate() {
                    l[(row + a) * n + m] += w * vn * qa;
                }
            }
        }
        row += layout.facet_dofs;
    }
    if layout.interior_dofs > 0 {
        let rule = quadrature(dim, 6).expect("cell rule");
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let tests = interior_moment_functions(family, x);
            for (m, s) in span.iter().enumerate() {
                let (v, _) = s.eval(dim, x);
                for (a, t) in tests.iter().enumerate() {
                    l[(row + a) * n + m] += w * geom::dot(&v, t);
                }
            }
        }
    }
    let inv = geom::dense_inverse(n, &l).expect("H(div) moment matrix is invertible");
    Tables { span, coeffs: inv }
}

fn tables(family: HdivFamily, dim: usize) -> &'static Tables {
    static CACHE: OnceLock<Mutex<HashMap<(HdivFamily, usize), &'static Tables>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("tables lock");
    guard
        .entry((family, dim))
        .or_insert_with(|| Box::leak(Box::new(build_tables(family, dim))))
}

/// Reference shape function values and divergences at `x`, ordered facet by
/// facet (facet `j` opposite local vertex `j`, moments in facet-vertex order
/// with the midpoint last) followed by interior functions.
pub fn eval_hdiv(family: HdivFamily, dim: usize, x: &Point) -> (Vec<Point>, Vec<f64>) {
    let t = tables(family, dim);
    let n = t.span.len();
    let evals: Vec<(Point, f64)> = t.span.iter().map(|s| s.eval(dim, x)).collect();
    let mut vals = vec![[0.0; 3]; n];
    let mut divs = vec![0.0; n];
    for (m, (v, d)) in evals.iter().enumerate() {
        for k in 0..n {
            let c = t.coeffs[m * n + k];
            if c != 0.0 {
                vals[k] = geom::add(&vals[k], &geom::scale(v, c));
                divs[k] += c * d;
            }
        }
    }
    (vals, divs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refelem::barycentric;

    const CASES: [(HdivFamily, usize); 6] = [
        (HdivFamily::Rt0, 2),
        (HdivFamily::Rt0, 3),
        (HdivFamily::Bdm1, 2),
        (HdivFamily::Bdm1, 3),
        (HdivFamily::Rt1, 2),
        (HdivFamily::Bdm2, 2),
    ];

    /// Applies every reference DOF functional to every shape function.
    fn dof_matrix(family: HdivFamily, dim: usize) -> Vec<Vec<f64>> {
        let layout = hdiv_layout(family, dim).unwrap();
        let n = layout.n_local;
        let mut out = vec![vec![0.0; n]; n];
        let mut row = 0;
        for j in 0..=dim {
            let fv = facet_local_vertices(dim, j);
            let pts: Vec<Point> = fv.iter().map(|&v| reference_vertex(dim, v)).collect();
            let normal = reference_facet_normal(dim, j);
            let (qp, qw) = facet_quadrature(&pts, 6);
            for (x, w) in qp.iter().zip(&qw) {
                let (lam, _) = barycentric(dim, x);
                let mu: Vec<f64> = fv.iter().map(|&v| lam[v]).collect();
                let q = facet_moment_functions(family.facet_degree(), &mu);
                let (vals, _) = eval_hdiv(family, dim, x);
                for k in 0..n {
                    for (a, qa) in q.iter().enumerate() {
                        out[row + a][k] += w * geom::dot(&vals[k], &normal) * qa;
                    }
                }
            }
            row += layout.facet_dofs;
        }
        let rule = quadrature(dim, 6).unwrap();
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let (vals, _) = eval_hdiv(family, dim, x);
            for (a, t) in interior_moment_functions(family, x).iter().enumerate() {
                for k in 0..n {
                    out[row + a][k] += w * geom::dot(&vals[k], t);
                }
            }
        }
        out
    }

    #[test]
    fn shape_functions_are_dual_to_dofs() {
        for (family, dim) in CASES {
            let m = dof_matrix(family, dim);
            for (i, r) in m.iter().enumerate() {
                for (k, v) in r.iter().enumerate() {
                    let e = if i == k { 1.0 } else { 0.0 };
                    assert!((v - e).abs() < 1e-12, "{family:?} {dim}D ({i},{k}) = {v}");
                }
            }
        }
    }

    #[test]
    fn local_counts() {
        assert_eq!(hdiv_layout(HdivFamily::Bdm1, 2).unwrap().n_local, 6);
        assert_eq!(hdiv_layout(HdivFamily::Rt0, 3).unwrap().n_local, 4);
        assert_eq!(hdiv_layout(HdivFamily::Bdm1, 3).unwrap().n_local, 12);
        assert_eq!(hdiv_layout(HdivFamily::Rt1, 2).unwrap().n_local, 8);
        assert_eq!(hdiv_layout(HdivFamily::Bdm2, 2).unwrap().n_local, 12);
        assert!(hdiv_layout(HdivFamily::Bdm2, 3).is_err());
        assert!(hdiv_layout(HdivFamily::Rt1, 3).is_err());
    }

    #[test]
    fn rt0_divergence_is_constant() {
        for dim in [2, 3] {
            let (_, d0) = eval_hdiv(HdivFamily::Rt0, dim, &[0.1, 0.2, 0.3]);
            let (_, d1) = eval_hdiv(HdivFamily::Rt0, dim, &[0.4, 0.05, 0.1]);
            for (a, b) in d0.iter().zip(&d1) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    /// The divergence of every shape function lies in the paired pressure
    /// space: constants for RT0/BDM1, affine for RT1/BDM2.
    #[test]
    fn divergence_lies_in_pressure_space() {
        let pts: [Point; 4] = [[0.1, 0.2, 0.3], [0.6, 0.1, 0.1], [0.2, 0.5, 0.05], [0.3, 0.3, 0.2]];
        for (family, dim) in CASES {
            let deg = family.pressure_degree();
            let samples: Vec<Vec<f64>> = pts.iter().map(|x| eval_hdiv(family, dim, x).1).collect();
            let n = samples[0].len();
            for k in 0..n {
                if deg == 0 {
                    for s in &samples {
                        assert!((s[k] - samples[0][k]).abs() < 1e-12);
                    }
                } else {
                    // fit an affine function through the first dim+1 samples
                    // (2D only), check the rest
                    let grad = [
                        (
                            samples[1][k] - samples[0][k],
                            pts[1][0] - pts[0][0],
                            pts[1][1] - pts[0][1],
                        ),
                        (
                            samples[2][k] - samples[0][k],
                            pts[2][0] - pts[0][0],
                            pts[2][1] - pts[0][1],
                        ),
                    ];
                    let det = grad[0].1 * grad[1].2 - grad[0].2 * grad[1].1;
                    let gx = (grad[0].0 * grad[1].2 - grad[0].2 * grad[1].0) / det;
                    let gy = (grad[0].1 * grad[1].0 - grad[0].0 * grad[1].1) / det;
                    let pred = samples[0][k] + gx * (pts[3][0] - pts[0][0]) + gy * (pts[3][1] - pts[0][1]);
                    assert!((pred - samples[3][k]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn bdm1_2d_has_two_moments_per_edge() {
        // the moment against each edge P1 basis function is nonzero only
        // for its own shape function
        let m = dof_matrix(HdivFamily::Bdm1, 2);
        assert_eq!(m.len(), 6);
    }
}
