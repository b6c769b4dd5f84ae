//! Global finite element spaces on one subdomain: DOF maps, orientation
//! signs, boundary masks, evaluation and interpolation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Mat3, Point};
use crate::mesh::{FacetLabel, Mesh, Region};
use crate::refelem::{
    self, eval_hdiv, eval_scalar, face_bubble, hdiv_layout, local_edges, AffineMap, HdivFamily, HdivLayout, QuadRule,
    ScalarBasis,
};

/// Marker for a local function without a global DOF (excluded face bubble).
pub const NO_DOF: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    StokesVelocity,
    StokesPressure,
    DarcyVelocity,
    DarcyPressure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    /// P1 plus a cell bubble per component.
    Mini,
    /// P2 per component.
    TaylorHood2,
    /// P2 plus a cell bubble per component (2D).
    ConfCrouzeixRaviart,
    /// P1 plus normal face bubbles.
    BernardiRaugel,
    /// Plain P1 per component; unstable with continuous P1 pressures.
    P1Vector,
    Rt(usize),
    Bdm(usize),
    /// Continuous Lagrange of the given degree.
    Cg(usize),
    /// Discontinuous Lagrange of the given degree.
    Dg(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeSpaceSpec {
    pub role: Role,
    pub family: Family,
    pub region: Region,
    /// Place Bernardi–Raugel face bubbles on interface facets as well.
    pub sigma_bubbles: bool,
}

impl FeSpaceSpec {
    pub fn new(role: Role, family: Family) -> FeSpaceSpec {
        let region = match role {
            Role::StokesVelocity | Role::StokesPressure => Region::Stokes,
            Role::DarcyVelocity | Role::DarcyPressure => Region::Darcy,
        };
        FeSpaceSpec {
            role,
            family,
            region,
            sigma_bubbles: false,
        }
    }
}

/// Stable Stokes/Darcy element combinations plus one unstable control.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementPair {
    MiniBdm1,
    MiniRt0,
    TaylorHoodBdm2,
    TaylorHoodRt1,
    ConfCrBdm2,
    BrBdm1,
    BrRt0,
    /// Equal-order P1/P1 Stokes coupled with RT0; violates inf-sup.
    P1p1Rt0,
}

impl ElementPair {
    pub const ALL: [ElementPair; 8] = [
        ElementPair::MiniBdm1,
        ElementPair::MiniRt0,
        ElementPair::TaylorHoodBdm2,
        ElementPair::TaylorHoodRt1,
        ElementPair::ConfCrBdm2,
        ElementPair::BrBdm1,
        ElementPair::BrRt0,
        ElementPair::P1p1Rt0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ElementPair::MiniBdm1 => "mini-bdm1",
            ElementPair::MiniRt0 => "mini-rt0",
            ElementPair::TaylorHoodBdm2 => "taylor-hood-bdm2",
            ElementPair::TaylorHoodRt1 => "taylor-hood-rt1",
            ElementPair::ConfCrBdm2 => "conf-cr-bdm2",
            ElementPair::BrBdm1 => "br-bdm1",
            ElementPair::BrRt0 => "br-rt0",
            ElementPair::P1p1Rt0 => "p1p1-rt0",
        }
    }

    pub fn from_name(name: &str) -> Option<ElementPair> {
        ElementPair::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Families for (Stokes velocity, Stokes pressure, Darcy velocity, Darcy
    /// pressure).
    pub fn families(self) -> [Family; 4] {
        use Family::*;
        match self {
            ElementPair::MiniBdm1 => [Mini, Cg(1), Bdm(1), Dg(0)],
            ElementPair::MiniRt0 => [Mini, Cg(1), Rt(0), Dg(0)],
            ElementPair::TaylorHoodBdm2 => [TaylorHood2, Cg(1), Bdm(2), Dg(1)],
            ElementPair::TaylorHoodRt1 => [TaylorHood2, Cg(1), Rt(1), Dg(1)],
            ElementPair::ConfCrBdm2 => [ConfCrouzeixRaviart, Dg(1), Bdm(2), Dg(1)],
            ElementPair::BrBdm1 => [BernardiRaugel, Dg(0), Bdm(1), Dg(0)],
            ElementPair::BrRt0 => [BernardiRaugel, Dg(0), Rt(0), Dg(0)],
            ElementPair::P1p1Rt0 => [P1Vector, Cg(1), Rt(0), Dg(0)],
        }
    }

    /// Expected convergence order in h of all four errors.
    pub fn order(self) -> usize {
        match self {
            ElementPair::TaylorHoodBdm2 | ElementPair::TaylorHoodRt1 | ElementPair::ConfCrBdm2 => 2,
            _ => 1,
        }
    }

    pub fn specs(self, sigma_bubbles: bool) -> [FeSpaceSpec; 4] {
        let f = self.families();
        let mut us = FeSpaceSpec::new(Role::StokesVelocity, f[0]);
        us.sigma_bubbles = sigma_bubbles;
        [
            us,
            FeSpaceSpec::new(Role::StokesPressure, f[1]),
            FeSpaceSpec::new(Role::DarcyVelocity, f[2]),
            FeSpaceSpec::new(Role::DarcyPressure, f[3]),
        ]
    }
}

/// Mesh entity a DOF is attached to (indices into the mesh).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Entity {
    Vertex(usize),
    /// Index into [`FeSpace::edges`].
    Edge(usize),
    Facet(usize),
    Cell(usize),
}

#[derive(Clone, Debug)]
enum Shape {
    /// Vector-valued H¹ element: the same scalar bases in each component,
    /// optionally with normal face bubbles.
    Vector {
        comps: Vec<ScalarBasis>,
        face_bubbles: bool,
    },
    Hdiv(HdivFamily, HdivLayout),
    Scalar {
        basis: ScalarBasis,
        continuous: bool,
    },
}

/// Shape function values pushed to a physical cell. For scalar spaces the
/// value sits in component 0 and the gradient in row 0.
#[derive(Clone, Debug, Default)]
pub struct BasisValues {
    pub val: Vec<Point>,
    /// `grad[i][r][c]` = ∂_c of component r.
    pub grad: Vec<Mat3>,
    pub div: Vec<f64>,
}

impl BasisValues {
    fn reset(&mut self, n: usize) {
        self.val.clear();
        self.val.resize(n, [0.0; 3]);
        self.grad.clear();
        self.grad.resize(n, [[0.0; 3]; 3]);
        self.div.clear();
        self.div.resize(n, 0.0);
    }
}

/// Reference-element values at one point, reusable across cells.
#[derive(Clone, Debug)]
pub struct RefValues {
    scalar_vals: Vec<f64>,
    scalar_grads: Vec<Point>,
    face: Vec<(f64, Point)>,
    hdiv_vals: Vec<Point>,
    hdiv_divs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FeSpace {
    pub spec: FeSpaceSpec,
    pub dim: usize,
    pub n_dofs: usize,
    pub n_local: usize,
    cell_dofs: Vec<usize>,
    cell_signs: Vec<f64>,
    /// Mesh cells covered by the space, in mesh order.
    pub cells: Vec<usize>,
    /// Position of each mesh cell in `cells`, or `usize::MAX`.
    cell_slot: Vec<usize>,
    pub dof_entity: Vec<Entity>,
    pub dof_component: Vec<u8>,
    /// Essential boundary DOFs (u_S = 0 on Γ_S, u_D·ν = 0 on Γ_D).
    pub essential: Vec<bool>,
    /// DOFs whose basis function has a nonzero trace on the interface.
    pub on_sigma: Vec<bool>,
    /// Sorted vertex pairs of the edges used by P2 DOFs.
    pub edges: Vec<[usize; 2]>,
    shape: Shape,
}

fn unsupported(spec: &FeSpaceSpec, dim: usize) -> Error {
    Error::UnsupportedElement(format!("{:?} as {:?} in {dim}D", spec.family, spec.role))
}

fn shape_for(spec: &FeSpaceSpec, dim: usize) -> Result<Shape> {
    use Family::*;
    let shape = match (spec.role, spec.family) {
        (Role::StokesVelocity, Mini) => Shape::Vector {
            comps: vec![ScalarBasis::P1, ScalarBasis::Bubble],
            face_bubbles: false,
        },
        (Role::StokesVelocity, TaylorHood2) => Shape::Vector {
            comps: vec![ScalarBasis::P2],
            face_bubbles: false,
        },
        (Role::StokesVelocity, ConfCrouzeixRaviart) if dim == 2 => Shape::Vector {
            comps: vec![ScalarBasis::P2, ScalarBasis::Bubble],
            face_bubbles: false,
        },
        (Role::StokesVelocity, BernardiRaugel) => Shape::Vector {
            comps: vec![ScalarBasis::P1],
            face_bubbles: true,
        },
        (Role::StokesVelocity, P1Vector) => Shape::Vector {
            comps: vec![ScalarBasis::P1],
            face_bubbles: false,
        },
        (Role::StokesPressure, Cg(1)) => Shape::Scalar {
            basis: ScalarBasis::P1,
            continuous: true,
        },
        (Role::StokesPressure | Role::DarcyPressure, Dg(k)) if k <= 1 => Shape::Scalar {
            basis: if k == 0 { ScalarBasis::P0 } else { ScalarBasis::P1 },
            continuous: false,
        },
        (Role::DarcyVelocity, Rt(k)) => {
            let fam = match k {
                0 => HdivFamily::Rt0,
                1 => HdivFamily::Rt1,
                _ => return Err(unsupported(spec, dim)),
            };
            Shape::Hdiv(fam, hdiv_layout(fam, dim)?)
        }
        (Role::DarcyVelocity, Bdm(k)) => {
            let fam = match k {
                1 => HdivFamily::Bdm1,
                2 => HdivFamily::Bdm2,
                _ => return Err(unsupported(spec, dim)),
            };
            Shape::Hdiv(fam, hdiv_layout(fam, dim)?)
        }
        _ => return Err(unsupported(spec, dim)),
    };
    Ok(shape)
}

/// Builds the space on the cells of `mesh` belonging to `spec.region`.
pub fn build_space(mesh: &Mesh, spec: FeSpaceSpec) -> Result<FeSpace> {
    let dim = mesh.dim;
    let shape = shape_for(&spec, dim)?;
    let cells: Vec<usize> = (0..mesh.n_cells())
        .filter(|&c| mesh.cell_region[c] == spec.region)
        .collect();
    if cells.is_empty() {
        return Err(Error::InvalidMesh(format!(
            "no {:?} cells for the {:?} space",
            spec.region, spec.role
        )));
    }
    let mut cell_slot = vec![usize::MAX; mesh.n_cells()];
    for (k, &c) in cells.iter().enumerate() {
        cell_slot[c] = k;
    }

    // compact numbering of the entities touched by the region
    let mut vmap = vec![usize::MAX; mesh.n_vertices()];
    let mut verts = Vec::new();
    let mut fmap = vec![usize::MAX; mesh.n_facets()];
    let mut facets = Vec::new();
    let mut edge_lookup: HashMap<[usize; 2], usize> = HashMap::new();
    let mut edges: Vec<[usize; 2]> = Vec::new();
    for &c in &cells {
        for &v in mesh.cell_vertices(c) {
            if vmap[v] == usize::MAX {
                vmap[v] = verts.len();
                verts.push(v);
            }
        }
        for &f in &mesh.cell_facets[c][..=dim] {
            if fmap[f] == usize::MAX {
                fmap[f] = facets.len();
                facets.push(f);
            }
        }
        let cv = mesh.cell_vertices(c);
        for &[a, b] in local_edges(dim) {
            let key = [cv[a].min(cv[b]), cv[a].max(cv[b])];
            edge_lookup.entry(key).or_insert_with(|| {
                edges.push(key);
                edges.len() - 1
            });
        }
    }
    let (nv, ne, nt, nf) = (verts.len(), edges.len(), cells.len(), facets.len());

    let mut dof_entity = Vec::new();
    let mut dof_component = Vec::new();
    let n_local;
    let mut cell_dofs;
    let mut cell_signs;

    match &shape {
        Shape::Vector { comps, face_bubbles } => {
            // scalar numbering shared by all components
            let mut scalar_entities = Vec::new();
            let mut offsets = Vec::new();
            for b in comps {
                offsets.push(scalar_entities.len());
                match b {
                    ScalarBasis::P1 => scalar_entities.extend(verts.iter().map(|&v| Entity::Vertex(v))),
                    ScalarBasis::P2 => {
                        scalar_entities.extend(verts.iter().map(|&v| Entity::Vertex(v)));
                        scalar_entities.extend((0..ne).map(Entity::Edge));
                    }
                    ScalarBasis::Bubble => scalar_entities.extend(cells.iter().map(|&c| Entity::Cell(c))),
                    ScalarBasis::P0 => unreachable!(),
                }
            }
            let ns = scalar_entities.len();
            for comp in 0..dim {
                dof_entity.extend_from_slice(&scalar_entities);
                dof_component.extend(std::iter::repeat_n(comp as u8, ns));
            }
            let nls: usize = comps.iter().map(|b| b.n_local(dim)).sum();
            let mut bubble_facets = vec![usize::MAX; nf];
            if *face_bubbles {
                for (k, &f) in facets.iter().enumerate() {
                    let skip = mesh.facet_label[f].is_interface() && !spec.sigma_bubbles;
                    if !skip {
                        bubble_facets[k] = dof_entity.len();
                        dof_entity.push(Entity::Facet(f));
                        dof_component.push(u8::MAX);
                    }
                }
            }
            n_local = dim * nls + if *face_bubbles { dim + 1 } else { 0 };
            cell_dofs = vec![NO_DOF; nt * n_local];
            cell_signs = vec![1.0; nt * n_local];
            for (slot, &c) in cells.iter().enumerate() {
                let cv = mesh.cell_vertices(c);
                let mut local_scalar = Vec::with_capacity(nls);
                for (b, off) in comps.iter().zip(&offsets) {
                    match b {
                        ScalarBasis::P1 => local_scalar.extend(cv.iter().map(|&v| off + vmap[v])),
                        ScalarBasis::P2 => {
                            local_scalar.extend(cv.iter().map(|&v| off + vmap[v]));
                            for &[a, bb] in local_edges(dim) {
                                let key = [cv[a].min(cv[bb]), cv[a].max(cv[bb])];
                                local_scalar.push(off + nv + edge_lookup[&key]);
                            }
                        }
                        ScalarBasis::Bubble => local_scalar.push(off + slot),
                        ScalarBasis::P0 => unreachable!(),
                    }
                }
                let base = slot * n_local;
                for comp in 0..dim {
                    for (i, &s) in local_scalar.iter().enumerate() {
                        cell_dofs[base + comp * nls + i] = comp * ns + s;
                    }
                }
                if *face_bubbles {
                    for j in 0..=dim {
                        let f = mesh.cell_facets[c][j];
                        cell_dofs[base + dim * nls + j] = bubble_facets[fmap[f]];
                    }
                }
            }
        }
        Shape::Hdiv(family, layout) => {
            let nfd = layout.facet_dofs;
            for &f in &facets {
                for _ in 0..nfd {
                    dof_entity.push(Entity::Facet(f));
                    dof_component.push(u8::MAX);
                }
            }
            for &c in &cells {
                for _ in 0..layout.interior_dofs {
                    dof_entity.push(Entity::Cell(c));
                    dof_component.push(u8::MAX);
                }
            }
            n_local = layout.n_local;
            cell_dofs = vec![NO_DOF; nt * n_local];
            cell_signs = vec![1.0; nt * n_local];
            let kf = family.facet_degree();
            for (slot, &c) in cells.iter().enumerate() {
                let cv = mesh.cell_vertices(c);
                let base = slot * n_local;
                for j in 0..=dim {
                    let f = mesh.cell_facets[c][j];
                    let sign = outward_sign(mesh, c, j, f);
                    let lv = refelem::facet_local_vertices(dim, j);
                    let g: Vec<usize> = lv.iter().map(|&v| cv[v]).collect();
                    for a in 0..nfd {
                        let pos = if kf == 0 || a >= g.len() {
                            a
                        } else {
                            g.iter().filter(|&&x| x < g[a]).count()
                        };
                        cell_dofs[base + j * nfd + a] = fmap[f] * nfd + pos;
                        cell_signs[base + j * nfd + a] = sign;
                    }
                }
                for a in 0..layout.interior_dofs {
                    cell_dofs[base + (dim + 1) * nfd + a] = nf * nfd + slot * layout.interior_dofs + a;
                }
            }
        }
        Shape::Scalar { basis, continuous } => {
            n_local = basis.n_local(dim);
            cell_dofs = vec![NO_DOF; nt * n_local];
            cell_signs = vec![1.0; nt * n_local];
            if *continuous {
                debug_assert_eq!(*basis, ScalarBasis::P1);
                dof_entity.extend(verts.iter().map(|&v| Entity::Vertex(v)));
                for (slot, &c) in cells.iter().enumerate() {
                    for (i, &v) in mesh.cell_vertices(c).iter().enumerate() {
                        cell_dofs[slot * n_local + i] = vmap[v];
                    }
                }
            } else {
                for (slot, &c) in cells.iter().enumerate() {
                    for i in 0..n_local {
                        cell_dofs[slot * n_local + i] = dof_entity.len();
                        dof_entity.push(Entity::Cell(c));
                    }
                }
            }
            dof_component = vec![0; dof_entity.len()];
        }
    }

    let n_dofs = dof_entity.len();
    let (essential, on_sigma) = masks(mesh, &spec, &shape, &dof_entity, &edges);
    Ok(FeSpace {
        spec,
        dim,
        n_dofs,
        n_local,
        cell_dofs,
        cell_signs,
        cells,
        cell_slot,
        dof_entity,
        dof_component,
        essential,
        on_sigma,
        edges,
        shape,
    })
}

/// +1 when the global normal of facet `f` points out of cell `c` at its local
/// facet `j`, else -1.
fn outward_sign(mesh: &Mesh, c: usize, j: usize, f: usize) -> f64 {
    let opp = mesh.vertices[mesh.cell_vertices(c)[j]];
    let fc = geom::centroid(&mesh.facet_points(f));
    if geom::dot(&mesh.facet_normal[f], &geom::sub(&fc, &opp)) > 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn masks(
    mesh: &Mesh,
    spec: &FeSpaceSpec,
    shape: &Shape,
    entities: &[Entity],
    edges: &[[usize; 2]],
) -> (Vec<bool>, Vec<bool>) {
    let n = entities.len();
    let mut essential = vec![false; n];
    let mut on_sigma = vec![false; n];
    let (bc_label, sigma_label) = match spec.region {
        Region::Stokes => (FacetLabel::StokesBoundary, FacetLabel::InterfaceStokes),
        Region::Darcy => (FacetLabel::DarcyBoundary, FacetLabel::InterfaceDarcy),
    };
    let mut vert_bc = vec![false; mesh.n_vertices()];
    let mut vert_sigma = vec![false; mesh.n_vertices()];
    let mut edge_bc: HashMap<[usize; 2], ()> = HashMap::new();
    let mut edge_sigma: HashMap<[usize; 2], ()> = HashMap::new();
    for f in 0..mesh.n_facets() {
        let label = mesh.facet_label[f];
        if label != bc_label && label != sigma_label {
            continue;
        }
        let fv = mesh.facet_vertices(f);
        let (vs, es) = if label == bc_label {
            (&mut vert_bc, &mut edge_bc)
        } else {
            (&mut vert_sigma, &mut edge_sigma)
        };
        for &v in fv {
            vs[v] = true;
        }
        for a in 0..fv.len() {
            for b in a + 1..fv.len() {
                es.insert([fv[a].min(fv[b]), fv[a].max(fv[b])], ());
            }
        }
    }
    let is_velocity = matches!(shape, Shape::Vector { .. } | Shape::Hdiv(..));
    if !is_velocity {
        return (essential, on_sigma);
    }
    for (i, e) in entities.iter().enumerate() {
        match *e {
            Entity::Vertex(v) => {
                essential[i] = vert_bc[v];
                on_sigma[i] = vert_sigma[v];
            }
            Entity::Edge(k) => {
                essential[i] = edge_bc.contains_key(&edges[k]);
                on_sigma[i] = edge_sigma.contains_key(&edges[k]);
            }
            Entity::Facet(f) => {
                essential[i] = mesh.facet_label[f] == bc_label;
                on_sigma[i] = mesh.facet_label[f] == sigma_label;
            }
            Entity::Cell(_) => {}
        }
    }
    (essential, on_sigma)
}

impl FeSpace {
    pub fn shape_degree(&self) -> usize {
        match &self.shape {
            Shape::Vector { comps, face_bubbles } => {
                let d = comps.iter().map(|b| b.degree(self.dim)).max().unwrap_or(0);
                if *face_bubbles {
                    d.max(self.dim)
                } else {
                    d
                }
            }
            Shape::Hdiv(f, _) => f.degree(),
            Shape::Scalar { basis, .. } => basis.degree(self.dim),
        }
    }

    pub fn is_hdiv(&self) -> bool {
        matches!(self.shape, Shape::Hdiv(..))
    }

    pub fn is_vector(&self) -> bool {
        matches!(self.shape, Shape::Vector { .. } | Shape::Hdiv(..))
    }

    pub fn hdiv_family(&self) -> Option<HdivFamily> {
        match self.shape {
            Shape::Hdiv(f, _) => Some(f),
            _ => None,
        }
    }

    /// Global DOFs of a mesh cell (may contain [`NO_DOF`]).
    pub fn cell_dofs(&self, c: usize) -> &[usize] {
        let s = self.cell_slot[c];
        &self.cell_dofs[s * self.n_local..(s + 1) * self.n_local]
    }

    pub fn contains_cell(&self, c: usize) -> bool {
        self.cell_slot.get(c).is_some_and(|&s| s != usize::MAX)
    }

    pub fn cell_signs(&self, c: usize) -> &[f64] {
        let s = self.cell_slot[c];
        &self.cell_signs[s * self.n_local..(s + 1) * self.n_local]
    }

    /// Reference values of all local functions at `xhat`.
    pub fn reference_values(&self, xhat: &Point) -> RefValues {
        let dim = self.dim;
        let mut rv = RefValues {
            scalar_vals: Vec::new(),
            scalar_grads: Vec::new(),
            face: Vec::new(),
            hdiv_vals: Vec::new(),
            hdiv_divs: Vec::new(),
        };
        match &self.shape {
            Shape::Vector { comps, face_bubbles } => {
                for &b in comps {
                    let (v, g) = eval_scalar(b, dim, xhat);
                    rv.scalar_vals.extend(v);
                    rv.scalar_grads.extend(g);
                }
                if *face_bubbles {
                    rv.face = (0..=dim).map(|j| face_bubble(dim, j, xhat)).collect();
                }
            }
            Shape::Hdiv(f, _) => {
                let (v, d) = eval_hdiv(*f, dim, xhat);
                rv.hdiv_vals = v;
                rv.hdiv_divs = d;
            }
            Shape::Scalar { basis, .. } => {
                let (v, g) = eval_scalar(*basis, dim, xhat);
                rv.scalar_vals = v;
                rv.scalar_grads = g;
            }
        }
        rv
    }

    pub fn tabulate(&self, rule: &QuadRule) -> Vec<RefValues> {
        rule.points.iter().map(|x| self.reference_values(x)).collect()
    }

    /// Pushes reference values to cell `c` (signs included).
    pub fn push(&self, mesh: &Mesh, c: usize, map: &AffineMap, rv: &RefValues, out: &mut BasisValues) {
        let dim = self.dim;
        out.reset(self.n_local);
        match &self.shape {
            Shape::Vector { face_bubbles, .. } => {
                let nls = rv.scalar_vals.len();
                for i in 0..nls {
                    let g = map.grad(&rv.scalar_grads[i]);
                    for comp in 0..dim {
                        let k = comp * nls + i;
                        out.val[k][comp] = rv.scalar_vals[i];
                        out.grad[k][comp] = g;
                        out.div[k] = g[comp];
                    }
                }
                if *face_bubbles {
                    for j in 0..=dim {
                        let f = mesh.cell_facets[c][j];
                        let n = mesh.facet_normal[f];
                        let (b, gb) = rv.face[j];
                        let g = map.grad(&gb);
                        let k = dim * nls + j;
                        out.val[k] = geom::scale(&n, b);
                        for r in 0..dim {
                            out.grad[k][r] = geom::scale(&g, n[r]);
                        }
                        out.div[k] = geom::dot(&n, &g);
                    }
                }
            }
            Shape::Hdiv(..) => {
                let signs = self.cell_signs(c);
                for i in 0..self.n_local {
                    let v = geom::mat_vec(&map.jac, &rv.hdiv_vals[i]);
                    out.val[i] = geom::scale(&v, signs[i] / map.det);
                    out.div[i] = signs[i] * rv.hdiv_divs[i] / map.det;
                }
            }
            Shape::Scalar { .. } => {
                for i in 0..self.n_local {
                    out.val[i][0] = rv.scalar_vals[i];
                    out.grad[i][0] = map.grad(&rv.scalar_grads[i]);
                }
            }
        }
    }

    /// Basis values of cell `c` at the physical point `x`.
    pub fn eval_at(&self, mesh: &Mesh, c: usize, x: &Point) -> BasisValues {
        let map = AffineMap::new(&mesh.cell_points(c), self.dim);
        let rv = self.reference_values(&map.to_reference(x));
        let mut out = BasisValues::default();
        self.push(mesh, c, &map, &rv, &mut out);
        out
    }

    /// Value, gradient and divergence of a finite element function in cell
    /// `c` at physical point `x`.
    pub fn field_at(&self, mesh: &Mesh, coeffs: &[f64], c: usize, x: &Point) -> (Point, Mat3, f64) {
        let bv = self.eval_at(mesh, c, x);
        self.combine(c, coeffs, &bv)
    }

    pub fn combine(&self, c: usize, coeffs: &[f64], bv: &BasisValues) -> (Point, Mat3, f64) {
        let mut v = [0.0; 3];
        let mut g = [[0.0; 3]; 3];
        let mut d = 0.0;
        for (i, &dof) in self.cell_dofs(c).iter().enumerate() {
            if dof == NO_DOF {
                continue;
            }
            let a = coeffs[dof];
            if a == 0.0 {
                continue;
            }
            v = geom::add(&v, &geom::scale(&bv.val[i], a));
            for r in 0..3 {
                g[r] = geom::add(&g[r], &geom::scale(&bv.grad[i][r], a));
            }
            d += a * bv.div[i];
        }
        (v, g, d)
    }

    /// Row vector m with m·x = ∫ p_h over the region (scalar spaces).
    pub fn zero_mean_functional(&self, mesh: &Mesh) -> Vec<f64> {
        let rule = refelem::quadrature_capped(self.dim, self.shape_degree());
        let tab = self.tabulate(rule);
        let mut m = vec![0.0; self.n_dofs];
        let mut bv = BasisValues::default();
        for &c in &self.cells {
            let map = AffineMap::new(&mesh.cell_points(c), self.dim);
            for (q, w) in rule.weights.iter().enumerate() {
                self.push(mesh, c, &map, &tab[q], &mut bv);
                for (i, &dof) in self.cell_dofs(c).iter().enumerate() {
                    m[dof] += w * map.det.abs() * bv.val[i][0];
                }
            }
        }
        m
    }

    /// Applies the DOF functionals to a field: nodal values for Lagrange
    /// DOFs (bubble coefficients set to zero), cell averages for P0, facet
    /// and interior moments for H(div).
    pub fn interpolate(&self, mesh: &Mesh, field: &dyn Fn(&Point) -> Point) -> Vec<f64> {
        let dim = self.dim;
        let mut x = vec![0.0; self.n_dofs];
        match &self.shape {
            Shape::Vector { comps, .. } => {
                let nls: usize = comps.iter().map(|b| b.n_local(dim)).sum();
                for &c in &self.cells {
                    let pts = mesh.cell_points(c);
                    let dofs = self.cell_dofs(c);
                    let mut i0 = 0;
                    for &b in comps {
                        let nodes: Vec<Point> = match b {
                            ScalarBasis::P1 => pts.clone(),
                            ScalarBasis::P2 => {
                                let mut n = pts.clone();
                                for &[a, bb] in local_edges(dim) {
                                    n.push(geom::scale(&geom::add(&pts[a], &pts[bb]), 0.5));
                                }
                                n
                            }
                            _ => Vec::new(),
                        };
                        for (k, p) in nodes.iter().enumerate() {
                            let v = field(p);
                            for comp in 0..dim {
                                x[dofs[comp * nls + i0 + k]] = v[comp];
                            }
                        }
                        i0 += b.n_local(dim);
                    }
                }
            }
            Shape::Scalar { basis, .. } => {
                for &c in &self.cells {
                    let pts = mesh.cell_points(c);
                    let dofs = self.cell_dofs(c);
                    match basis {
                        ScalarBasis::P0 => {
                            let map = AffineMap::new(&pts, dim);
                            let rule = refelem::quadrature_capped(dim, 6);
                            let avg =
                                rule.integrate(|p| field(&map.to_physical(p))[0]) / rule.weights.iter().sum::<f64>();
                            x[dofs[0]] = avg;
                        }
                        _ => {
                            for (k, p) in pts.iter().enumerate() {
                                x[dofs[k]] = field(p)[0];
                            }
                        }
                    }
                }
            }
            Shape::Hdiv(family, layout) => {
                let kf = family.facet_degree();
                let nfd = layout.facet_dofs;
                let mut done = vec![false; self.n_dofs];
                for &c in &self.cells {
                    let dofs = self.cell_dofs(c).to_vec();
                    for j in 0..=dim {
                        let f = mesh.cell_facets[c][j];
                        let d0 = dofs[j * nfd..(j + 1) * nfd].iter().min().copied().unwrap();
                        if done[d0] {
                            continue;
                        }
                        let m = facet_moments(mesh, f, kf, 2 * kf + 6, &|p| {
                            geom::dot(&field(p), &mesh.facet_normal[f])
                        });
                        for (a, v) in m.iter().enumerate() {
                            x[d0 + a] = *v;
                            done[d0 + a] = true;
                        }
                    }
                    if layout.interior_dofs > 0 {
                        let map = AffineMap::new(&mesh.cell_points(c), dim);
                        let rule = refelem::quadrature_capped(dim, 6);
                        let inv = map.inv;
                        for (p, w) in rule.points.iter().zip(&rule.weights) {
                            let v = field(&map.to_physical(p));
                            let vhat = geom::scale(&geom::mat_vec(&inv, &v), map.det);
                            let tests = match family {
                                HdivFamily::Rt1 => vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
                                _ => vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-p[1], p[0], 0.0]],
                            };
                            for (a, t) in tests.iter().enumerate() {
                                x[dofs[(dim + 1) * nfd + a]] += w * geom::dot(&vhat, t);
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// Moments ∫_f g q_a over facet `f` against its Lagrange functions of degree
/// `k` (nodes in ascending global vertex order, midpoint last).
pub fn facet_moments(mesh: &Mesh, f: usize, k: usize, degree: usize, g: &dyn Fn(&Point) -> f64) -> Vec<f64> {
    let pts = mesh.facet_points(f);
    let (qp, qw) = refelem::facet_quadrature(&pts, degree);
    let n = facet_lagrange_count(mesh.dim, k);
    let mut out = vec![0.0; n];
    for (p, w) in qp.iter().zip(&qw) {
        let mu = facet_barycentric(&pts, p);
        let q = facet_lagrange(k, &mu);
        let gv = g(p);
        for a in 0..n {
            out[a] += w * gv * q[a];
        }
    }
    out
}

pub fn facet_lagrange_count(dim: usize, k: usize) -> usize {
    match k {
        0 => 1,
        1 => dim,
        _ => 3,
    }
}

/// Lagrange functions on a facet in terms of its barycentric coordinates.
pub fn facet_lagrange(k: usize, mu: &[f64]) -> Vec<f64> {
    crate::refelem::facet_moment_functions(k, mu)
}

/// Barycentric coordinates of `p` with respect to the facet vertices.
pub fn facet_barycentric(pts: &[Point], p: &Point) -> Vec<f64> {
    match pts.len() {
        2 => {
            let t = geom::sub(&pts[1], &pts[0]);
            let s = geom::dot(&geom::sub(p, &pts[0]), &t) / geom::dot(&t, &t);
            vec![1.0 - s, s]
        }
        3 => {
            let e1 = geom::sub(&pts[1], &pts[0]);
            let e2 = geom::sub(&pts[2], &pts[0]);
            let r = geom::sub(p, &pts[0]);
            let (a, b, c) = (geom::dot(&e1, &e1), geom::dot(&e1, &e2), geom::dot(&e2, &e2));
            let (d, e) = (geom::dot(&r, &e1), geom::dot(&r, &e2));
            let det = a * c - b * b;
            let s = (c * d - b * e) / det;
            let t = (a * e - b * d) / det;
            vec![1.0 - s - t, s, t]
        }
        n => panic!("facet with {n} vertices"),
    }
}

/// Lagrange nodes of a facet for degree `k` in DOF order.
pub fn facet_nodes(pts: &[Point], k: usize) -> Vec<Point> {
    match k {
        0 => vec![geom::centroid(pts)],
        1 => pts.to_vec(),
        _ => vec![pts[0], pts[1], geom::scale(&geom::add(&pts[0], &pts[1]), 0.5)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured, BoxDomain};

    fn region_mesh(dim: usize, n: usize, region: Region) -> Mesh {
        build_structured(dim, BoxDomain::unit(), n, 0.5)
            .unwrap()
            .submesh(region)
            .unwrap()
    }

    #[test]
    fn dof_counts() {
        let md = region_mesh(2, 4, Region::Darcy);
        let rt0 = build_space(&md, FeSpaceSpec::new(Role::DarcyVelocity, Family::Rt(0))).unwrap();
        assert_eq!(rt0.n_dofs, md.n_facets());
        let bdm1 = build_space(&md, FeSpaceSpec::new(Role::DarcyVelocity, Family::Bdm(1))).unwrap();
        assert_eq!(bdm1.n_dofs, 2 * md.n_facets());
        let ms = region_mesh(2, 4, Region::Stokes);
        let mini = build_space(&ms, FeSpaceSpec::new(Role::StokesVelocity, Family::Mini)).unwrap();
        assert_eq!(mini.n_dofs, 2 * (ms.n_vertices() + ms.n_cells()));
        let br = build_space(&ms, FeSpaceSpec::new(Role::StokesVelocity, Family::BernardiRaugel)).unwrap();
        let n_sigma = ms.interface_facets(Region::Stokes).len();
        assert_eq!(br.n_dofs, 2 * ms.n_vertices() + ms.n_facets() - n_sigma);
        let mut spec = FeSpaceSpec::new(Role::StokesVelocity, Family::BernardiRaugel);
        spec.sigma_bubbles = true;
        let br_all = build_space(&ms, spec).unwrap();
        assert_eq!(br_all.n_dofs, 2 * ms.n_vertices() + ms.n_facets());
    }

    #[test]
    fn unsupported_combinations_are_rejected() {
        let m3 = region_mesh(3, 2, Region::Darcy);
        assert!(build_space(&m3, FeSpaceSpec::new(Role::DarcyVelocity, Family::Bdm(2))).is_err());
        let s3 = region_mesh(3, 2, Region::Stokes);
        assert!(build_space(&s3, FeSpaceSpec::new(Role::StokesVelocity, Family::ConfCrouzeixRaviart)).is_err());
        assert!(build_space(&s3, FeSpaceSpec::new(Role::StokesPressure, Family::Mini)).is_err());
    }

    #[test]
    fn p0_mean_weights_are_cell_volumes() {
        let md = region_mesh(2, 4, Region::Darcy);
        let p0 = build_space(&md, FeSpaceSpec::new(Role::DarcyPressure, Family::Dg(0))).unwrap();
        let m = p0.zero_mean_functional(&md);
        for &c in &p0.cells {
            assert!((m[p0.cell_dofs(c)[0]] - md.cell_volume(c)).abs() < 1e-15);
        }
        let total: f64 = m.iter().sum();
        assert!((total - 0.5).abs() < 1e-14);
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        for dim in [2, 3] {
            let md = region_mesh(dim, 2, Region::Darcy);
            let cases: Vec<(Family, Box<dyn Fn(&Point) -> Point>)> = vec![
                (Family::Rt(0), Box::new(|_p: &Point| [0.3, -1.2, 0.7])),
                (
                    Family::Bdm(1),
                    Box::new(|p: &Point| [1.0 + p[0] - 2.0 * p[1], 0.5 * p[0] + p[2], -p[1] + 0.2]),
                ),
            ];
            for (fam, field) in cases {
                let sp = build_space(&md, FeSpaceSpec::new(Role::DarcyVelocity, fam)).unwrap();
                let x = sp.interpolate(&md, &*field);
                for &c in &sp.cells {
                    let pts = md.cell_points(c);
                    let p = geom::centroid(&pts);
                    let q = geom::scale(&geom::add(&p, &pts[0]), 0.5);
                    for pt in [p, q] {
                        let (v, _, _) = sp.field_at(&md, &x, c, &pt);
                        let e = field(&pt);
                        for k in 0..dim {
                            assert!((v[k] - e[k]).abs() < 1e-12, "{fam:?} {dim}D");
                        }
                    }
                }
            }
        }
        let md = region_mesh(2, 2, Region::Darcy);
        // x·(x) + P1² lies in RT1; BDM2 holds all of P2²
        let quad = |p: &Point| [p[0] * p[0] - p[1], p[0] * p[1] + 1.0, 0.0];
        for fam in [Family::Rt(1), Family::Bdm(2)] {
            let sp = build_space(&md, FeSpaceSpec::new(Role::DarcyVelocity, fam)).unwrap();
            let x = sp.interpolate(&md, &quad);
            for &c in &sp.cells {
                let p = geom::centroid(&md.cell_points(c));
                let (v, _, _) = sp.field_at(&md, &x, c, &p);
                let e = quad(&p);
                assert!((v[0] - e[0]).abs() < 1e-12 && (v[1] - e[1]).abs() < 1e-12, "{fam:?}");
            }
        }
    }

    #[test]
    fn rt0_interpolant_matches_facet_fluxes() {
        let md = region_mesh(2, 4, Region::Darcy);
        let sp = build_space(&md, FeSpaceSpec::new(Role::DarcyVelocity, Family::Rt(0))).unwrap();
        let field = |p: &Point| [p[0] * p[0] + p[1], p[0] * p[1] - p[1] * p[1], 0.0];
        let x = sp.interpolate(&md, &field);
        for f in 0..md.n_facets() {
            let n = md.facet_normal[f];
            let pts = md.facet_points(f);
            // brute-force oracle: composite midpoint rule on 400 pieces
            let mut oracle = 0.0;
            let len = geom::norm(&geom::sub(&pts[1], &pts[0]));
            for k in 0..400 {
                let s = (k as f64 + 0.5) / 400.0;
                let p = geom::add(&pts[0], &geom::scale(&geom::sub(&pts[1], &pts[0]), s));
                oracle += geom::dot(&field(&p), &n) * len / 400.0;
            }
            let dof = sp.dof_entity.iter().position(|e| *e == Entity::Facet(f)).unwrap();
            assert!((x[dof] - oracle).abs() < 1e-5 * len);
        }
    }
}
