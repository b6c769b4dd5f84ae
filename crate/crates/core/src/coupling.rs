//! Interface trace spaces, the L²(Σ) projection onto the Darcy normal-trace
//! space and the affine constraint that eliminates Darcy interface DOFs.
//!
//! The Darcy trace space is piecewise P_k on the Darcy interface facets, with
//! Lagrange bases (nodes in ascending global vertex order, midpoint last).
//! Integrals coupling the two sides run over the common refinement of both
//! interface partitions, so nonmatching grids need no mesh-size condition.

use crate::error::{Error, Result};
use crate::geom::{self, Point};
use crate::mesh::{planar_interface_facets, Mesh, MeshPair, PlanarFacet, Region};
use crate::refelem::{self, MAX_DEGREE};
use crate::spaces::{facet_barycentric, facet_lagrange, facet_lagrange_count, facet_nodes, FeSpace, NO_DOF};
use crate::sparse::{Csr, Triplets};

/// Quadrature on the intersection of one Stokes and one Darcy interface facet.
#[derive(Clone, Debug)]
pub struct InterfacePiece {
    pub stokes_facet: usize,
    pub darcy_facet: usize,
    /// Index into [`DarcyTrace::facets`].
    pub darcy_slot: usize,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

/// Normal-trace space of the Darcy velocity on Σ.
#[derive(Clone, Debug)]
pub struct DarcyTrace {
    pub degree: usize,
    /// Darcy mesh facets on Σ, in facet order.
    pub facets: Vec<usize>,
    pub per_facet: usize,
    slot_of: Vec<usize>,
}

impl DarcyTrace {
    pub fn new(darcy: &Mesh, degree: usize) -> DarcyTrace {
        let facets = darcy.interface_facets(Region::Darcy);
        let mut slot_of = vec![usize::MAX; darcy.n_facets()];
        for (k, &f) in facets.iter().enumerate() {
            slot_of[f] = k;
        }
        DarcyTrace {
            degree,
            per_facet: facet_lagrange_count(darcy.dim, degree),
            facets,
            slot_of,
        }
    }

    pub fn n_coeffs(&self) -> usize {
        self.facets.len() * self.per_facet
    }

    pub fn slot(&self, facet: usize) -> Option<usize> {
        self.slot_of.get(facet).copied().filter(|&s| s != usize::MAX)
    }

    /// Basis values of the trace space on Darcy facet slot `s` at `p`.
    pub fn basis(&self, darcy: &Mesh, s: usize, p: &Point) -> Vec<f64> {
        let pts = darcy.facet_points(self.facets[s]);
        facet_lagrange(self.degree, &facet_barycentric(&pts, p))
    }

    pub fn value(&self, darcy: &Mesh, coeffs: &[f64], s: usize, p: &Point) -> f64 {
        let b = self.basis(darcy, s, p);
        b.iter()
            .enumerate()
            .map(|(a, v)| v * coeffs[s * self.per_facet + a])
            .sum()
    }
}

/// Clips the convex polygon `poly` against the convex polygon `clip`
/// (both counter-clockwise).
fn clip_polygon(poly: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = poly.to_vec();
    let n = clip.len();
    for e in 0..n {
        let (a, b) = (clip[e], clip[(e + 1) % n]);
        let side = |p: &[f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut out);
        if input.is_empty() {
            break;
        }
        for i in 0..input.len() {
            let (p, q) = (input[i], input[(i + 1) % input.len()]);
            let (sp, sq) = (side(&p), side(&q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

fn ccw(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let [a, b, c] = [pts[0], pts[1], pts[2]];
    let area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    if area < 0.0 {
        vec![a, c, b]
    } else {
        vec![a, b, c]
    }
}

fn bbox_overlap(a: &PlanarFacet, b: &PlanarFacet, dim: usize, tol: f64) -> bool {
    (0..dim - 1).all(|k| a.bbox.0[k] < b.bbox.1[k] - tol && b.bbox.0[k] < a.bbox.1[k] - tol)
}

/// Common refinement of the two interface partitions with quadrature of the
/// given degree on each piece.
pub fn interface_pieces(pair: &MeshPair, trace: &DarcyTrace, degree: usize) -> Result<Vec<InterfacePiece>> {
    let dim = pair.darcy.dim;
    let plane = pair.darcy.interface;
    let s_facets = planar_interface_facets(&pair.stokes, Region::Stokes);
    let d_facets = planar_interface_facets(&pair.darcy, Region::Darcy);
    let h = pair.stokes.h.min(pair.darcy.h);
    let tol = 1e-12 * h;
    let mut pieces = Vec::new();
    let mut covered = 0.0;
    for fd in &d_facets {
        let slot = trace.slot(fd.facet).expect("interface facet has a trace slot");
        for fs in &s_facets {
            if !bbox_overlap(fd, fs, dim, tol) {
                continue;
            }
            let mut points = Vec::new();
            let mut weights = Vec::new();
            if dim == 2 {
                let lo = fd.bbox.0[0].max(fs.bbox.0[0]);
                let hi = fd.bbox.1[0].min(fs.bbox.1[0]);
                if hi - lo <= tol {
                    continue;
                }
                let rule = refelem::quadrature_capped(1, degree);
                for (q, w) in rule.points.iter().zip(&rule.weights) {
                    points.push(plane.lift(&[lo + q[0] * (hi - lo), 0.0], dim));
                    weights.push(w * (hi - lo));
                }
            } else {
                let poly = clip_polygon(&ccw(&fd.pts), &ccw(&fs.pts));
                if poly.len() < 3 {
                    continue;
                }
                let rule = refelem::quadrature_capped(2, degree);
                for t in 1..poly.len() - 1 {
                    let [a, b, c] = [poly[0], poly[t], poly[t + 1]];
                    let area2 = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
                    if area2 <= tol * h {
                        continue;
                    }
                    for (q, w) in rule.points.iter().zip(&rule.weights) {
                        let x = [
                            a[0] + q[0] * (b[0] - a[0]) + q[1] * (c[0] - a[0]),
                            a[1] + q[0] * (b[1] - a[1]) + q[1] * (c[1] - a[1]),
                        ];
                        points.push(plane.lift(&x, dim));
                        weights.push(w * area2);
                    }
                }
                if points.is_empty() {
                    continue;
                }
            }
            covered += weights.iter().sum::<f64>();
            pieces.push(InterfacePiece {
                stokes_facet: fs.facet,
                darcy_facet: fd.facet,
                darcy_slot: slot,
                points,
                weights,
            });
        }
    }
    let area = pair.darcy.interface_area(Region::Darcy);
    if (covered - area).abs() > 1e-10 * area {
        return Err(Error::InterfaceMismatch(format!(
            "facet intersections cover {covered} of the interface area {area}"
        )));
    }
    Ok(pieces)
}

/// Gram matrix of the Darcy trace basis in L²(Σ), one dense block per facet
/// (row-major `per_facet x per_facet`).
pub fn assemble_interface_mass(darcy: &Mesh, trace: &DarcyTrace) -> Vec<Vec<f64>> {
    let n = trace.per_facet;
    trace
        .facets
        .iter()
        .enumerate()
        .map(|(s, &f)| {
            let (qp, qw) = refelem::facet_quadrature(&darcy.facet_points(f), 2 * trace.degree);
            let mut m = vec![0.0; n * n];
            for (p, w) in qp.iter().zip(&qw) {
                let b = trace.basis(darcy, s, p);
                for i in 0..n {
                    for j in 0..n {
                        m[i * n + j] += w * b[i] * b[j];
                    }
                }
            }
            m
        })
        .collect()
}

/// Block-diagonal interface mass as a sparse matrix.
pub fn mass_to_csr(trace: &DarcyTrace, blocks: &[Vec<f64>]) -> Csr {
    let n = trace.per_facet;
    let mut t = Triplets::new(trace.n_coeffs(), trace.n_coeffs());
    for (s, b) in blocks.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                t.push(s * n + i, s * n + j, b[i * n + j]);
            }
        }
    }
    t.to_csr()
}

/// M_DS with entries ∫_Σ φ_i (v_j·ν) for Darcy trace functions φ_i and
/// Stokes velocity basis functions v_j.
pub fn assemble_mixed_mass(
    pair: &MeshPair,
    trace: &DarcyTrace,
    stokes_velocity: &FeSpace,
    pieces: &[InterfacePiece],
) -> Csr {
    let nu = pair.stokes.interface.normal;
    let mut t = Triplets::new(trace.n_coeffs(), stokes_velocity.n_dofs);
    for piece in pieces {
        let cs = pair.stokes.facet_cells[piece.stokes_facet][0];
        let dofs = stokes_velocity.cell_dofs(cs);
        let s = piece.darcy_slot;
        for (p, w) in piece.points.iter().zip(&piece.weights) {
            let phi = trace.basis(&pair.darcy, s, p);
            let bv = stokes_velocity.eval_at(&pair.stokes, cs, p);
            for (j, &dof) in dofs.iter().enumerate() {
                if dof == NO_DOF {
                    continue;
                }
                let vn = geom::dot(&bv.val[j], &nu);
                if vn == 0.0 {
                    continue;
                }
                for (a, ph) in phi.iter().enumerate() {
                    t.push(s * trace.per_facet + a, dof, w * ph * vn);
                }
            }
        }
    }
    t.to_csr()
}

/// Affine relation x_slave = C u_S + g for the Darcy interface DOFs.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    /// Darcy velocity DOFs on Σ, facet by facet.
    pub slaves: Vec<usize>,
    /// `slaves.len() x n_stokes_velocity_dofs`.
    pub c: Csr,
    pub g: Vec<f64>,
}

/// Facet-local map from Darcy DOFs to trace coefficients: entry (b, a) is the
/// normal trace of DOF a's basis function at Lagrange node b.
pub fn darcy_trace_map(darcy: &Mesh, trace: &DarcyTrace, ud: &FeSpace, s: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let f = trace.facets[s];
    let c = darcy.facet_cells[f][0];
    let j = darcy
        .local_facet_index(c, f)
        .ok_or_else(|| Error::InvalidMesh(format!("facet {f} not on its cell")))?;
    let n = trace.per_facet;
    let dofs = ud.cell_dofs(c);
    let local: Vec<usize> = (0..ud.n_local)
        .filter(|&i| i / n == j && i < (darcy.dim + 1) * n)
        .collect();
    if local.len() != n {
        return Err(Error::SingularFacetBlock {
            facet: f,
            reason: format!("expected {n} facet DOFs, found {}", local.len()),
        });
    }
    // order the facet's DOFs by global index (= global node order)
    let mut order: Vec<usize> = local.clone();
    order.sort_by_key(|&i| dofs[i]);
    let nodes = facet_nodes(&darcy.facet_points(f), trace.degree);
    let nu = darcy.interface.normal;
    let mut t = vec![0.0; n * n];
    for (b, x) in nodes.iter().enumerate() {
        let bv = ud.eval_at(darcy, c, x);
        for (a, &i) in order.iter().enumerate() {
            t[b * n + a] = geom::dot(&bv.val[i], &nu);
        }
    }
    Ok((order.iter().map(|&i| dofs[i]).collect(), t))
}

/// Builds C = T⁻¹ M_DD⁻¹ M_DS and g = T⁻¹ M_DD⁻¹ (moments of the flux jump)
/// with facet-block solves. The constraint reads u_D·ν = R(u_S·ν + jump).
pub fn build_constraints(
    darcy: &Mesh,
    trace: &DarcyTrace,
    ud: &FeSpace,
    mass: &[Vec<f64>],
    mixed: &Csr,
    flux_jump: Option<&dyn Fn(&Point) -> f64>,
) -> Result<ConstraintSet> {
    let n = trace.per_facet;
    let mut slaves = Vec::with_capacity(trace.n_coeffs());
    let mut entries = Vec::new();
    let mut g = vec![0.0; trace.n_coeffs()];
    for (s, &f) in trace.facets.iter().enumerate() {
        let (dofs, t) = darcy_trace_map(darcy, trace, ud, s)?;
        // X = T⁻¹ M⁻¹ = (M T)⁻¹
        let mut mt = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                mt[i * n + j] = (0..n).map(|k| mass[s][i * n + k] * t[k * n + j]).sum();
            }
        }
        let x = geom::dense_inverse(n, &mt).ok_or_else(|| Error::SingularFacetBlock {
            facet: f,
            reason: "trace map times interface mass is singular".into(),
        })?;
        // rows of M_DS for this facet, merged by column
        let mut cols: Vec<(usize, Vec<f64>)> = Vec::new();
        for a in 0..n {
            let (cs, vs) = mixed.row(s * n + a);
            for (&col, &v) in cs.iter().zip(vs) {
                let pos = match cols.iter().position(|(c, _)| *c == col) {
                    Some(p) => p,
                    None => {
                        cols.push((col, vec![0.0; n]));
                        cols.len() - 1
                    }
                };
                cols[pos].1[a] = v;
            }
        }
        cols.sort_by_key(|(c, _)| *c);
        let moments = match flux_jump {
            Some(fj) => crate::spaces::facet_moments(darcy, f, trace.degree, 2 * trace.degree + 8, fj),
            None => vec![0.0; n],
        };
        for r in 0..n {
            slaves.push(dofs[r]);
            let row = s * n + r;
            for (col, m) in &cols {
                let v: f64 = (0..n).map(|k| x[r * n + k] * m[k]).sum();
                if v != 0.0 {
                    entries.push((row, *col, v));
                }
            }
            g[row] = (0..n).map(|k| x[r * n + k] * moments[k]).sum();
        }
    }
    Ok(ConstraintSet {
        slaves,
        c: Csr::from_triplets(trace.n_coeffs(), mixed.ncols, &entries),
        g,
    })
}

/// Everything the assembly needs from the interface.
#[derive(Clone, Debug)]
pub struct Coupling {
    pub trace: DarcyTrace,
    pub pieces: Vec<InterfacePiece>,
    pub mass: Vec<Vec<f64>>,
    pub mixed: Csr,
}

impl Coupling {
    pub fn new(pair: &MeshPair, us: &FeSpace, ud: &FeSpace) -> Result<Coupling> {
        let family = ud
            .hdiv_family()
            .ok_or_else(|| Error::UnsupportedElement("Darcy velocity must be H(div)".into()))?;
        let trace = DarcyTrace::new(&pair.darcy, family.facet_degree());
        let fdim = pair.darcy.dim - 1;
        let degree = (us.shape_degree() + trace.degree).min(MAX_DEGREE[fdim]);
        let pieces = interface_pieces(pair, &trace, degree)?;
        let mass = assemble_interface_mass(&pair.darcy, &trace);
        let mixed = assemble_mixed_mass(pair, &trace, us, &pieces);
        Ok(Coupling {
            trace,
            pieces,
            mass,
            mixed,
        })
    }

    /// Coefficients of R(ξ) for ξ = u_S·ν with u_S given by Stokes DOFs.
    pub fn project_stokes_trace(&self, us: &[f64]) -> Vec<f64> {
        let rhs = self.mixed.matvec(us);
        self.solve_mass(&rhs)
    }

    /// Coefficients of R(ξ) for a function ξ on Σ.
    pub fn project_function(&self, darcy: &Mesh, xi: &dyn Fn(&Point) -> f64, degree: usize) -> Vec<f64> {
        let n = self.trace.per_facet;
        let mut rhs = vec![0.0; self.trace.n_coeffs()];
        for (s, &f) in self.trace.facets.iter().enumerate() {
            let m = crate::spaces::facet_moments(darcy, f, self.trace.degree, degree, xi);
            rhs[s * n..(s + 1) * n].copy_from_slice(&m);
        }
        self.solve_mass(&rhs)
    }

    pub fn solve_mass(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.trace.per_facet;
        let mut out = rhs.to_vec();
        for (s, m) in self.mass.iter().enumerate() {
            let mut a = m.clone();
            geom::dense_solve(n, &mut a, &mut out[s * n..(s + 1) * n], 1).expect("interface mass blocks are SPD");
        }
        out
    }

    /// L²(Σ) norm of a trace given by coefficients.
    pub fn trace_norm(&self, coeffs: &[f64]) -> f64 {
        let n = self.trace.per_facet;
        let mut s2 = 0.0;
        for (s, m) in self.mass.iter().enumerate() {
            let c = &coeffs[s * n..(s + 1) * n];
            for i in 0..n {
                for j in 0..n {
                    s2 += c[i] * m[i * n + j] * c[j];
                }
            }
        }
        s2.max(0.0).sqrt()
    }
}

/// ‖p − R p‖ over Σ with quadrature of the given degree on the Darcy facets.
pub fn projection_residual(darcy: &Mesh, coupling: &Coupling, p: &dyn Fn(&Point) -> f64, degree: usize) -> f64 {
    let coeffs = coupling.project_function(darcy, p, degree);
    let mut s2 = 0.0;
    for (s, &f) in coupling.trace.facets.iter().enumerate() {
        let (qp, qw) = refelem::facet_quadrature(&darcy.facet_points(f), degree);
        for (x, w) in qp.iter().zip(&qw) {
            let r = p(x) - coupling.trace.value(darcy, &coeffs, s, x);
            s2 += w * r * r;
        }
    }
    s2.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_pair, BoxDomain, InterfaceRelation};
    use crate::spaces::{build_space, Family, FeSpaceSpec, Role};

    fn setup(dim: usize, ns: usize, nd: usize, s: Family, d: Family) -> (MeshPair, FeSpace, FeSpace, Coupling) {
        let pair = build_pair(dim, BoxDomain::unit(), ns, nd, 0.5).unwrap();
        let us = build_space(&pair.stokes, FeSpaceSpec::new(Role::StokesVelocity, s)).unwrap();
        let ud = build_space(&pair.darcy, FeSpaceSpec::new(Role::DarcyVelocity, d)).unwrap();
        let c = Coupling::new(&pair, &us, &ud).unwrap();
        (pair, us, ud, c)
    }

    #[test]
    fn p1_trace_mass_block() {
        let (pair, _, _, c) = setup(2, 4, 4, Family::Mini, Family::Bdm(1));
        for (s, m) in c.mass.iter().enumerate() {
            let a = pair.darcy.facet_area(c.trace.facets[s]);
            let oracle = [a / 3.0, a / 6.0, a / 6.0, a / 3.0];
            for k in 0..4 {
                assert!((m[k] - oracle[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn p0_mass_is_facet_area() {
        let (pair, _, _, c) = setup(3, 2, 4, Family::Mini, Family::Rt(0));
        for (s, m) in c.mass.iter().enumerate() {
            assert!((m[0] - pair.darcy.facet_area(c.trace.facets[s])).abs() < 1e-15);
        }
    }

    #[test]
    fn constraint_matrix_equals_mixed_mass_for_moment_dofs() {
        // T⁻¹ is the facet Lagrange mass, so C collapses to M_DS
        for (dim, d) in [
            (2, Family::Bdm(1)),
            (2, Family::Rt(1)),
            (2, Family::Bdm(2)),
            (3, Family::Bdm(1)),
        ] {
            let (pair, _, ud, c) = setup(dim, 2, 4, Family::TaylorHood2, d);
            let cs = build_constraints(&pair.darcy, &c.trace, &ud, &c.mass, &c.mixed, None).unwrap();
            for (i, j, v) in c.mixed.triplets() {
                assert!((cs.c.get(i, j) - v).abs() < 1e-12 * (1.0 + v.abs()), "{d:?} {dim}D");
            }
            assert_eq!(cs.c.nnz(), c.mixed.nnz());
        }
    }

    #[test]
    fn rt0_slave_equals_facet_flux_matching() {
        let (pair, us, ud, c) = setup(2, 4, 4, Family::P1Vector, Family::Rt(0));
        assert_eq!(pair.relation, InterfaceRelation::Matching);
        let cs = build_constraints(&pair.darcy, &c.trace, &ud, &c.mass, &c.mixed, None).unwrap();
        let field = |p: &Point| [p[0], -p[0] * p[0] + 0.3, 0.0];
        let u = us.interpolate(&pair.stokes, &field);
        let slave = cs.c.matvec(&u);
        let nu = pair.stokes.interface.normal;
        for (s, &f) in c.trace.facets.iter().enumerate() {
            let pts = pair.darcy.facet_points(f);
            // P1 interpolant of u·ν on the edge is linear: trapezoid rule
            let len = geom::norm(&geom::sub(&pts[1], &pts[0]));
            let flux = 0.5 * len * (geom::dot(&field(&pts[0]), &nu) + geom::dot(&field(&pts[1]), &nu));
            assert!((slave[s] - flux).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_jump_gives_constant_trace() {
        for (dim, d) in [
            (2, Family::Rt(0)),
            (2, Family::Bdm(1)),
            (3, Family::Bdm(1)),
            (3, Family::Rt(0)),
        ] {
            let (pair, _, ud, c) = setup(dim, 2, 6, Family::Mini, d);
            let jump = |_: &Point| 0.7;
            let cs = build_constraints(&pair.darcy, &c.trace, &ud, &c.mass, &c.mixed, Some(&jump)).unwrap();
            let mut x = vec![0.0; ud.n_dofs];
            for (k, &dof) in cs.slaves.iter().enumerate() {
                x[dof] = cs.g[k];
            }
            let nu = pair.darcy.interface.normal;
            for &f in &c.trace.facets {
                let cell = pair.darcy.facet_cells[f][0];
                let (qp, _) = refelem::facet_quadrature(&pair.darcy.facet_points(f), 3);
                for p in qp {
                    let (v, _, _) = ud.field_at(&pair.darcy, &x, cell, &p);
                    assert!((geom::dot(&v, &nu) - 0.7).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn nested_mixed_mass_matches_subdivision_oracle() {
        let (pair, us, _, c) = setup(3, 2, 4, Family::Mini, Family::Bdm(1));
        assert_eq!(pair.relation, InterfaceRelation::Nested);
        // oracle: split every Darcy facet into 4 congruent triangles and
        // integrate against the Stokes cell containing each sub-centroid
        let nu = pair.stokes.interface.normal;
        let s_facets = planar_interface_facets(&pair.stokes, Region::Stokes);
        let mut oracle = vec![vec![0.0; us.n_dofs]; c.trace.n_coeffs()];
        for (s, &f) in c.trace.facets.iter().enumerate() {
            let p = pair.darcy.facet_points(f);
            let m = |a: usize, b: usize| geom::scale(&geom::add(&p[a], &p[b]), 0.5);
            let subs = [
                [p[0], m(0, 1), m(0, 2)],
                [m(0, 1), p[1], m(1, 2)],
                [m(0, 2), m(1, 2), p[2]],
                [m(0, 1), m(1, 2), m(0, 2)],
            ];
            for sub in subs {
                let cen = geom::centroid(&sub);
                let q = pair.stokes.interface.project(&cen, 3);
                let fs = s_facets
                    .iter()
                    .find(|fs| crate::mesh::planar_contains(fs, &q, 3, 1e-12))
                    .unwrap();
                let cs = pair.stokes.facet_cells[fs.facet][0];
                let (qp, qw) = refelem::facet_quadrature(&sub, 4);
                for (x, w) in qp.iter().zip(&qw) {
                    let phi = c.trace.basis(&pair.darcy, s, x);
                    let bv = us.eval_at(&pair.stokes, cs, x);
                    for (j, &dof) in us.cell_dofs(cs).iter().enumerate() {
                        for a in 0..3 {
                            oracle[s * 3 + a][dof] += w * phi[a] * geom::dot(&bv.val[j], &nu);
                        }
                    }
                }
            }
        }
        for (i, row) in oracle.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((c.mixed.get(i, j) - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn independent_partition_covers_interface() {
        let (pair, _, _, c) = setup(3, 4, 2, Family::Mini, Family::Rt(0));
        assert_eq!(pair.relation, InterfaceRelation::Independent);
        let total: f64 = c.pieces.iter().flat_map(|p| p.weights.iter()).sum();
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn projection_residual_vanishes_for_members() {
        let (pair, _, _, c) = setup(2, 4, 8, Family::Mini, Family::Bdm(1));
        let r = projection_residual(&pair.darcy, &c, &|_| 2.5, 6);
        assert!(r < 1e-14);
        let r = projection_residual(&pair.darcy, &c, &|p| 1.0 - 3.0 * p[0], 6);
        assert!(r < 1e-14);
    }

    #[test]
    fn projection_residual_decays_linearly_for_p0() {
        let p = |x: &Point| (3.0 * x[0]).sin() + x[0] * x[0];
        let mut errs = Vec::new();
        for n in [4, 8, 16, 32] {
            let (pair, _, _, c) = setup(2, n, n, Family::Mini, Family::Rt(0));
            errs.push(projection_residual(&pair.darcy, &c, &p, 8));
        }
        for k in 1..errs.len() {
            let r = (errs[k - 1] / errs[k]).log2();
            assert!((r - 1.0).abs() < 0.05, "rate {r}");
        }
    }
}
