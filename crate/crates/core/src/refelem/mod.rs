//! Reference simplices, quadrature, local bases and the affine/Piola maps.

mod hdiv;
mod quadrature;
mod scalar;

pub use hdiv::{eval_hdiv, facet_moment_functions, hdiv_layout, HdivFamily, HdivLayout};
pub use quadrature::{quadrature, quadrature_capped, QuadRule, MAX_DEGREE};
pub use scalar::{barycentric, eval_scalar, face_bubble, local_edges, ScalarBasis};

use crate::geom::{self, Mat3, Point};

/// Vertices of the reference simplex.
pub fn reference_vertex(dim: usize, i: usize) -> Point {
    let mut p = [0.0; 3];
    if i > 0 {
        debug_assert!(i <= dim);
        p[i - 1] = 1.0;
    }
    p
}

/// Local vertices of the facet opposite local vertex `j`, ascending.
pub fn facet_local_vertices(dim: usize, j: usize) -> Vec<usize> {
    (0..=dim).filter(|&v| v != j).collect()
}

/// Unit outward normal of the reference facet opposite vertex `j`.
pub fn reference_facet_normal(dim: usize, j: usize) -> Point {
    let mut n = [0.0; 3];
    if j == 0 {
        let s = 1.0 / (dim as f64).sqrt();
        for x in n.iter_mut().take(dim) {
            *x = s;
        }
    } else {
        n[j - 1] = -1.0;
    }
    n
}

/// Quadrature on a simplex facet given by its vertices: returns points in the
/// ambient space and weights that sum to the facet measure.
pub fn facet_quadrature(pts: &[Point], degree: usize) -> (Vec<Point>, Vec<f64>) {
    let fdim = pts.len() - 1;
    let rule = quadrature_capped(fdim, degree);
    let measure = geom::simplex_measure(pts);
    let ref_measure = if fdim == 1 { 1.0 } else { 0.5 };
    let mut out_p = Vec::with_capacity(rule.len());
    let mut out_w = Vec::with_capacity(rule.len());
    for (q, w) in rule.points.iter().zip(&rule.weights) {
        let mut x = geom::scale(&pts[0], 1.0 - q[..fdim].iter().sum::<f64>());
        for k in 0..fdim {
            x = geom::add(&x, &geom::scale(&pts[k + 1], q[k]));
        }
        out_p.push(x);
        out_w.push(w * measure / ref_measure);
    }
    (out_p, out_w)
}

/// Affine map x = x0 + J x̂ from the reference simplex onto a cell.
#[derive(Clone, Copy, Debug)]
pub struct AffineMap {
    pub dim: usize,
    pub x0: Point,
    pub jac: Mat3,
    pub det: f64,
    pub inv: Mat3,
    pub inv_t: Mat3,
}

impl AffineMap {
    pub fn new(pts: &[Point], dim: usize) -> AffineMap {
        let x0 = pts[0];
        let mut jac = [[0.0; 3]; 3];
        for k in 0..dim {
            let e = geom::sub(&pts[k + 1], &x0);
            for i in 0..dim {
                jac[i][k] = e[i];
            }
        }
        let det = geom::det(&jac, dim);
        let inv = geom::inverse(&jac, dim);
        AffineMap {
            dim,
            x0,
            jac,
            det,
            inv,
            inv_t: geom::transpose(&inv),
        }
    }

    pub fn to_physical(&self, xhat: &Point) -> Point {
        geom::add(&self.x0, &geom::mat_vec(&self.jac, xhat))
    }

    pub fn to_reference(&self, x: &Point) -> Point {
        geom::mat_vec(&self.inv, &geom::sub(x, &self.x0))
    }

    /// Physical gradient from a reference gradient.
    pub fn grad(&self, ghat: &Point) -> Point {
        geom::mat_vec(&self.inv_t, ghat)
    }

    pub fn volume(&self) -> f64 {
        let fact = if self.dim == 2 { 2.0 } else { 6.0 };
        self.det.abs() / fact
    }
}

/// Contravariant Piola transform of reference H(div) values and divergences.
pub fn piola_push(map: &AffineMap, values: &mut [Point], divs: &mut [f64]) {
    for v in values.iter_mut() {
        *v = geom::scale(&geom::mat_vec(&map.jac, v), 1.0 / map.det);
    }
    for d in divs.iter_mut() {
        *d /= map.det;
    }
}
