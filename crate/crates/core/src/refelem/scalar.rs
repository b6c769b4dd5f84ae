//! Scalar Lagrange-type shape functions on the reference simplex.

use crate::geom::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScalarBasis {
    P0,
    /// Vertex hat functions (also used for discontinuous P1).
    P1,
    /// Vertex functions λ(2λ-1) followed by edge functions 4λ_aλ_b.
    P2,
    /// Unscaled cell bubble, the product of all barycentric coordinates.
    Bubble,
}

impl ScalarBasis {
    pub fn n_local(self, dim: usize) -> usize {
        match self {
            ScalarBasis::P0 | ScalarBasis::Bubble => 1,
            ScalarBasis::P1 => dim + 1,
            ScalarBasis::P2 => (dim + 1) * (dim + 2) / 2,
        }
    }

    pub fn degree(self, dim: usize) -> usize {
        match self {
            ScalarBasis::P0 => 0,
            ScalarBasis::P1 => 1,
            ScalarBasis::P2 => 2,
            ScalarBasis::Bubble => dim + 1,
        }
    }
}

const EDGES_2D: [[usize; 2]; 3] = [[0, 1], [0, 2], [1, 2]];
const EDGES_3D: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];

/// Local edges as pairs of local vertices, in the order used by P2.
pub fn local_edges(dim: usize) -> &'static [[usize; 2]] {
    if dim == 2 {
        &EDGES_2D
    } else {
        &EDGES_3D
    }
}

/// Barycentric coordinates and their (constant) reference gradients.
pub fn barycentric(dim: usize, x: &Point) -> ([f64; 4], [Point; 4]) {
    let mut l = [0.0; 4];
    let mut g = [[0.0; 3]; 4];
    l[0] = 1.0 - x[..dim].iter().sum::<f64>();
    for k in 0..dim {
        l[k + 1] = x[k];
        g[0][k] = -1.0;
        g[k + 1][k] = 1.0;
    }
    (l, g)
}

/// Values and reference gradients of all local functions of `basis`.
pub fn eval_scalar(basis: ScalarBasis, dim: usize, x: &Point) -> (Vec<f64>, Vec<Point>) {
    let (l, g) = barycentric(dim, x);
    let n = dim + 1;
    match basis {
        ScalarBasis::P0 => (vec![1.0], vec![[0.0; 3]]),
        ScalarBasis::P1 => (l[..n].to_vec(), g[..n].to_vec()),
        ScalarBasis::P2 => {
            let mut vals = Vec::with_capacity(basis.n_local(dim));
            let mut grads = Vec::with_capacity(basis.n_local(dim));
            for i in 0..n {
                vals.push(l[i] * (2.0 * l[i] - 1.0));
                let s = 4.0 * l[i] - 1.0;
                grads.push([g[i][0] * s, g[i][1] * s, g[i][2] * s]);
            }
            for &[a, b] in local_edges(dim) {
                vals.push(4.0 * l[a] * l[b]);
                let mut gr = [0.0; 3];
                for k in 0..3 {
                    gr[k] = 4.0 * (g[a][k] * l[b] + l[a] * g[b][k]);
                }
                grads.push(gr);
            }
            (vals, grads)
        }
        ScalarBasis::Bubble => {
            let (v, gr) = product(&l[..n], &g[..n]);
            (vec![v], vec![gr])
        }
    }
}

/// Face bubble of the facet opposite local vertex `j`: the product of the
/// barycentric coordinates of the facet's vertices.
pub fn face_bubble(dim: usize, j: usize, x: &Point) -> (f64, Point) {
    let (l, g) = barycentric(dim, x);
    let idx: Vec<usize> = (0..=dim).filter(|&v| v != j).collect();
    let ls: Vec<f64> = idx.iter().map(|&i| l[i]).collect();
    let gs: Vec<Point> = idx.iter().map(|&i| g[i]).collect();
    product(&ls, &gs)
}

fn product(l: &[f64], g: &[Point]) -> (f64, Point) {
    let v: f64 = l.iter().product();
    let mut gr = [0.0; 3];
    for i in 0..l.len() {
        let others: f64 = l.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, x)| x).product();
        for k in 0..3 {
            gr[k] += g[i][k] * others;
        }
    }
    (v, gr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refelem::reference_vertex;

    #[test]
    fn p1_is_nodal_and_sums_to_one() {
        for dim in [2, 3] {
            for i in 0..=dim {
                let (v, _) = eval_scalar(ScalarBasis::P1, dim, &reference_vertex(dim, i));
                for (k, x) in v.iter().enumerate() {
                    assert_eq!(*x, if k == i { 1.0 } else { 0.0 });
                }
            }
            let (v, g) = eval_scalar(ScalarBasis::P1, dim, &[0.1, 0.2, 0.3]);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            for k in 0..dim {
                assert_eq!(g.iter().map(|gr| gr[k]).sum::<f64>(), 0.0);
            }
        }
    }

    #[test]
    fn p2_is_nodal() {
        for dim in [2, 3] {
            let mut nodes: Vec<Point> = (0..=dim).map(|i| reference_vertex(dim, i)).collect();
            for &[a, b] in local_edges(dim) {
                let (pa, pb) = (reference_vertex(dim, a), reference_vertex(dim, b));
                nodes.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]), 0.5 * (pa[2] + pb[2])]);
            }
            for (i, x) in nodes.iter().enumerate() {
                let (v, _) = eval_scalar(ScalarBasis::P2, dim, x);
                for (k, y) in v.iter().enumerate() {
                    let e = if k == i { 1.0 } else { 0.0 };
                    assert!((y - e).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn bubble_at_barycenter() {
        let c = [1.0 / 3.0, 1.0 / 3.0, 0.0];
        let (v, g) = eval_scalar(ScalarBasis::Bubble, 2, &c);
        assert!((v[0] - 1.0 / 27.0).abs() < 1e-16);
        assert!(g[0][0].abs() < 1e-16 && g[0][1].abs() < 1e-16);
        let (v3, _) = eval_scalar(ScalarBasis::Bubble, 3, &[0.25; 3]);
        assert!((v3[0] - 1.0 / 256.0).abs() < 1e-17);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = [0.21, 0.17, 0.33];
        let h = 1e-6;
        for dim in [2, 3] {
            for basis in [ScalarBasis::P1, ScalarBasis::P2, ScalarBasis::Bubble] {
                let (_, g) = eval_scalar(basis, dim, &x);
                for k in 0..dim {
                    let mut xp = x;
                    let mut xm = x;
                    xp[k] += h;
                    xm[k] -= h;
                    let (vp, _) = eval_scalar(basis, dim, &xp);
                    let (vm, _) = eval_scalar(basis, dim, &xm);
                    for i in 0..vp.len() {
                        let fd = (vp[i] - vm[i]) / (2.0 * h);
                        assert!((fd - g[i][k]).abs() < 1e-8);
                    }
                }
            }
            for j in 0..=dim {
                let (_, g) = face_bubble(dim, j, &x);
                for k in 0..dim {
                    let mut xp = x;
                    let mut xm = x;
                    xp[k] += h;
                    xm[k] -= h;
                    let fd = (face_bubble(dim, j, &xp).0 - face_bubble(dim, j, &xm).0) / (2.0 * h);
                    assert!((fd - g[k]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn face_bubble_vanishes_on_other_facets() {
        // facet opposite vertex 1 in 2D is x = 0
        let (v, _) = face_bubble(2, 0, &[0.0, 0.4, 0.0]);
        assert_eq!(v, 0.0);
        let (v, _) = face_bubble(2, 1, &[0.0, 0.4, 0.0]);
        assert!((v - 0.6 * 0.4).abs() < 1e-16);
    }
}
