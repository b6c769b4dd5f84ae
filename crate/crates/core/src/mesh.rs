//! Structured simplicial meshes of a box split by an axis-aligned interface.
//!
//! A [`Mesh`] may hold cells of both subdomains (as produced by
//! [`build_structured`]) or of one only (after [`Mesh::submesh`]). Facets are
//! deduplicated per subdomain, so an interface facet shared by a Stokes and a
//! Darcy cell appears twice: once labelled [`FacetLabel::InterfaceStokes`] and
//! once [`FacetLabel::InterfaceDarcy`].

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::geom::{self, Point};

/// Marker for a missing neighbour in [`Mesh::facet_cells`].
pub const NO_CELL: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Stokes,
    Darcy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FacetLabel {
    Interior,
    /// Outer boundary of the Stokes subdomain (Γ_S).
    StokesBoundary,
    /// Outer boundary of the Darcy subdomain (Γ_D).
    DarcyBoundary,
    /// Interface facet seen from the Stokes side.
    InterfaceStokes,
    /// Interface facet seen from the Darcy side.
    InterfaceDarcy,
}

impl FacetLabel {
    pub fn is_interface(self) -> bool {
        matches!(self, FacetLabel::InterfaceStokes | FacetLabel::InterfaceDarcy)
    }

    fn code(self) -> &'static str {
        match self {
            FacetLabel::Interior => "interior",
            FacetLabel::StokesBoundary => "gamma_s",
            FacetLabel::DarcyBoundary => "gamma_d",
            FacetLabel::InterfaceStokes => "sigma_s",
            FacetLabel::InterfaceDarcy => "sigma_d",
        }
    }
}

/// Axis-aligned planar interface. The Darcy subdomain lies below `offset`
/// along `axis`; `normal` points from the Stokes side into the Darcy side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterfacePlane {
    pub axis: usize,
    pub offset: f64,
    pub normal: Point,
}

impl InterfacePlane {
    pub fn new(dim: usize, offset: f64) -> Self {
        let axis = dim - 1;
        let mut normal = [0.0; 3];
        normal[axis] = -1.0;
        InterfacePlane { axis, offset, normal }
    }

    /// In-plane coordinates of a point (the coordinates other than `axis`).
    pub fn project(&self, p: &Point, dim: usize) -> [f64; 2] {
        let mut out = [0.0; 2];
        let mut k = 0;
        for (i, &x) in p.iter().enumerate().take(dim) {
            if i != self.axis {
                out[k] = x;
                k += 1;
            }
        }
        out
    }

    /// Inverse of [`InterfacePlane::project`].
    pub fn lift(&self, q: &[f64; 2], dim: usize) -> Point {
        let mut p = [0.0; 3];
        let mut k = 0;
        for (i, x) in p.iter_mut().enumerate().take(dim) {
            if i == self.axis {
                *x = self.offset;
            } else {
                *x = q[k];
                k += 1;
            }
        }
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxDomain {
    pub lo: Point,
    pub hi: Point,
}

impl BoxDomain {
    pub fn unit() -> Self {
        BoxDomain {
            lo: [0.0; 3],
            hi: [1.0; 3],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub dim: usize,
    pub vertices: Vec<Point>,
    /// Vertex indices per cell, positively oriented; only the first `dim + 1`
    /// entries are meaningful.
    pub cells: Vec<[usize; 4]>,
    pub cell_region: Vec<Region>,
    /// Sorted vertex indices per facet; the first `dim` entries are meaningful.
    pub facets: Vec<[usize; 3]>,
    pub facet_cells: Vec<[usize; 2]>,
    pub facet_label: Vec<FacetLabel>,
    pub facet_normal: Vec<Point>,
    /// `cell_facets[c][j]` is the facet opposite local vertex `j` of cell `c`.
    pub cell_facets: Vec<[usize; 4]>,
    pub interface: InterfacePlane,
    pub domain: BoxDomain,
    /// Nominal mesh size (grid spacing of the structured construction).
    pub h: f64,
}

impl Mesh {
    /// Assembles facet connectivity, labels and normals for a cell soup.
    pub fn from_cells(
        dim: usize,
        vertices: Vec<Point>,
        mut cells: Vec<[usize; 4]>,
        cell_region: Vec<Region>,
        interface: InterfacePlane,
        domain: BoxDomain,
        h: f64,
    ) -> Result<Mesh> {
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidMesh(format!("dimension {dim} not supported")));
        }
        if cells.len() != cell_region.len() {
            return Err(Error::InvalidMesh("one region label per cell required".into()));
        }
        for (c, cell) in cells.iter_mut().enumerate() {
            let v = signed_volume(&vertices, cell, dim);
            if v.abs() < 1e-300 {
                return Err(Error::InvalidMesh(format!("cell {c} is degenerate")));
            }
            if v < 0.0 {
                cell.swap(dim - 1, dim);
            }
        }

        let mut lookup: HashMap<([usize; 3], Region), usize> = HashMap::new();
        let mut facets = Vec::new();
        let mut facet_cells: Vec<[usize; 2]> = Vec::new();
        let mut cell_facets = vec![[NO_CELL; 4]; cells.len()];
        for (c, cell) in cells.iter().enumerate() {
            for j in 0..=dim {
                let key = facet_key(cell, j, dim);
                let id = *lookup.entry((key, cell_region[c])).or_insert_with(|| {
                    facets.push(key);
                    facet_cells.push([NO_CELL; 2]);
                    facets.len() - 1
                });
                let slot = &mut facet_cells[id];
                if slot[0] == NO_CELL {
                    slot[0] = c;
                } else if slot[1] == NO_CELL {
                    slot[1] = c;
                } else {
                    return Err(Error::InvalidMesh(format!(
                        "facet {key:?} shared by more than two cells"
                    )));
                }
                cell_facets[c][j] = id;
            }
        }

        let tol = 1e-10 * h.max(1e-300);
        let mut facet_label = Vec::with_capacity(facets.len());
        let mut facet_normal = Vec::with_capacity(facets.len());
        for (f, key) in facets.iter().enumerate() {
            let pts: Vec<Point> = key[..dim].iter().map(|&v| vertices[v]).collect();
            let sorted_normal = oriented_normal(&pts, dim);
            let [c0, c1] = facet_cells[f];
            if c1 != NO_CELL {
                facet_label.push(FacetLabel::Interior);
                facet_normal.push(sorted_normal);
                continue;
            }
            let on_plane = pts.iter().all(|p| (p[interface.axis] - interface.offset).abs() <= tol);
            let region = cell_region[c0];
            if on_plane {
                facet_label.push(match region {
                    Region::Stokes => FacetLabel::InterfaceStokes,
                    Region::Darcy => FacetLabel::InterfaceDarcy,
                });
                facet_normal.push(interface.normal);
            } else {
                facet_label.push(match region {
                    Region::Stokes => FacetLabel::StokesBoundary,
                    Region::Darcy => FacetLabel::DarcyBoundary,
                });
                let cell_pts: Vec<Point> = cells[c0][..=dim].iter().map(|&v| vertices[v]).collect();
                let outward = geom::sub(&geom::centroid(&pts), &geom::centroid(&cell_pts));
                if geom::dot(&outward, &sorted_normal) < 0.0 {
                    facet_normal.push(geom::scale(&sorted_normal, -1.0));
                } else {
                    facet_normal.push(sorted_normal);
                }
            }
        }

        Ok(Mesh {
            dim,
            vertices,
            cells,
            cell_region,
            facets,
            facet_cells,
            facet_label,
            facet_normal,
            cell_facets,
            interface,
            domain,
            h,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn cell_vertices(&self, c: usize) -> &[usize] {
        &self.cells[c][..=self.dim]
    }

    pub fn cell_points(&self, c: usize) -> Vec<Point> {
        self.cell_vertices(c).iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn facet_vertices(&self, f: usize) -> &[usize] {
        &self.facets[f][..self.dim]
    }

    pub fn facet_points(&self, f: usize) -> Vec<Point> {
        self.facet_vertices(f).iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn cell_volume(&self, c: usize) -> f64 {
        signed_volume(&self.vertices, &self.cells[c], self.dim)
    }

    pub fn facet_area(&self, f: usize) -> f64 {
        geom::simplex_measure(&self.facet_points(f))
    }

    pub fn region_volume(&self, region: Region) -> f64 {
        (0..self.n_cells())
            .filter(|&c| self.cell_region[c] == region)
            .map(|c| self.cell_volume(c))
            .sum()
    }

    /// Facets carrying the given label, in facet order.
    pub fn facets_with_label(&self, label: FacetLabel) -> Vec<usize> {
        (0..self.n_facets()).filter(|&f| self.facet_label[f] == label).collect()
    }

    /// Interface facets of whichever side this mesh holds (both when the
    /// mesh covers the whole box).
    pub fn interface_facets(&self, side: Region) -> Vec<usize> {
        self.facets_with_label(match side {
            Region::Stokes => FacetLabel::InterfaceStokes,
            Region::Darcy => FacetLabel::InterfaceDarcy,
        })
    }

    pub fn interface_area(&self, side: Region) -> f64 {
        self.interface_facets(side)
            .into_iter()
            .map(|f| self.facet_area(f))
            .sum()
    }

    /// Local index (0..=dim) of facet `f` within cell `c`.
    pub fn local_facet_index(&self, c: usize, f: usize) -> Option<usize> {
        self.cell_facets[c][..=self.dim].iter().position(|&g| g == f)
    }

    /// Extracts the cells of one subdomain as a standalone mesh.
    pub fn submesh(&self, region: Region) -> Result<Mesh> {
        let keep: Vec<usize> = (0..self.n_cells()).filter(|&c| self.cell_region[c] == region).collect();
        if keep.is_empty() {
            return Err(Error::InvalidMesh(format!("no cells in region {region:?}")));
        }
        let mut used = vec![false; self.n_vertices()];
        for &c in &keep {
            for &v in self.cell_vertices(c) {
                used[v] = true;
            }
        }
        let mut map = vec![usize::MAX; self.n_vertices()];
        let mut vertices = Vec::new();
        for v in 0..self.n_vertices() {
            if used[v] {
                map[v] = vertices.len();
                vertices.push(self.vertices[v]);
            }
        }
        let cells = keep
            .iter()
            .map(|&c| {
                let mut cell = [0; 4];
                for (k, &v) in self.cell_vertices(c).iter().enumerate() {
                    cell[k] = map[v];
                }
                cell
            })
            .collect();
        Mesh::from_cells(
            self.dim,
            vertices,
            cells,
            vec![region; keep.len()],
            self.interface,
            self.domain,
            self.h,
        )
    }

    /// Checks the structural invariants: positive volumes, facet adjacency,
    /// unit normals and matching interface area on both sides.
    pub fn validate(&self) -> Result<()> {
        for c in 0..self.n_cells() {
            if self.cell_volume(c) <= 0.0 {
                return Err(Error::InvalidMesh(format!("cell {c} not positively oriented")));
            }
        }
        for f in 0..self.n_facets() {
            let [c0, c1] = self.facet_cells[f];
            let two = c1 != NO_CELL;
            if c0 == NO_CELL || two != (self.facet_label[f] == FacetLabel::Interior) {
                return Err(Error::InvalidMesh(format!("facet {f} has inconsistent adjacency")));
            }
            if (geom::norm(&self.facet_normal[f]) - 1.0).abs() > 1e-14 {
                return Err(Error::InvalidMesh(format!("facet {f} normal is not unit length")));
            }
            if self.facet_label[f].is_interface() && self.facet_normal[f] != self.interface.normal {
                return Err(Error::InvalidMesh(format!("interface facet {f} misoriented")));
            }
        }
        Ok(())
    }

    /// Writes the mesh as whitespace-separated text.
    ///
    /// ```text
    /// # darcy-stokes mesh v1 ...
    /// dim <d>
    /// vertices <n>      then n lines: x y [z]
    /// cells <n>         then n lines: v0 .. vd region(S|D)
    /// facets <n>        then n lines: v0 .. v(d-1) label
    /// ```
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.dim;
        writeln!(
            out,
            "# darcy-stokes mesh v1: sections vertices (coords), cells (vertex ids, region S|D), facets (sorted vertex ids, label interior|gamma_s|gamma_d|sigma_s|sigma_d)"
        )?;
        writeln!(out, "dim {d}")?;
        writeln!(out, "vertices {}", self.n_vertices())?;
        for p in &self.vertices {
            let coords: Vec<String> = p[..d].iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(out, "{}", coords.join(" "))?;
        }
        writeln!(out, "cells {}", self.n_cells())?;
        for c in 0..self.n_cells() {
            let ids: Vec<String> = self.cell_vertices(c).iter().map(|v| v.to_string()).collect();
            let r = match self.cell_region[c] {
                Region::Stokes => "S",
                Region::Darcy => "D",
            };
            writeln!(out, "{} {r}", ids.join(" "))?;
        }
        writeln!(out, "facets {}", self.n_facets())?;
        for f in 0..self.n_facets() {
            let ids: Vec<String> = self.facet_vertices(f).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{} {}", ids.join(" "), self.facet_label[f].code())?;
        }
        Ok(())
    }
}

fn signed_volume(vertices: &[Point], cell: &[usize; 4], dim: usize) -> f64 {
    let x0 = vertices[cell[0]];
    let mut j = [[0.0; 3]; 3];
    for k in 0..dim {
        let e = geom::sub(&vertices[cell[k + 1]], &x0);
        for i in 0..dim {
            j[i][k] = e[i];
        }
    }
    let fact = if dim == 2 { 2.0 } else { 6.0 };
    geom::det(&j, dim) / fact
}

fn facet_key(cell: &[usize; 4], opposite: usize, dim: usize) -> [usize; 3] {
    let mut key = [usize::MAX; 3];
    let mut k = 0;
    for (j, &v) in cell.iter().enumerate().take(dim + 1) {
        if j != opposite {
            key[k] = v;
            k += 1;
        }
    }
    key[..dim].sort_unstable();
    key
}

/// Unit normal fixed by the order of the (sorted) facet vertices.
fn oriented_normal(pts: &[Point], dim: usize) -> Point {
    if dim == 2 {
        let t = geom::sub(&pts[1], &pts[0]);
        geom::normalized(&[t[1], -t[0], 0.0])
    } else {
        geom::normalized(&geom::cross(&geom::sub(&pts[1], &pts[0]), &geom::sub(&pts[2], &pts[0])))
    }
}

/// Uniform simplicial mesh of `domain` with `n` cells per axis. Squares are
/// split along their main diagonal and cubes into the six Kuhn tetrahedra
/// sharing the main diagonal, so neighbouring cubes triangulate shared faces
/// identically. Cells below `split` along the last axis are Darcy cells.
pub fn build_structured(dim: usize, domain: BoxDomain, n: usize, split: f64) -> Result<Mesh> {
    if !(2..=3).contains(&dim) {
        return Err(Error::InvalidMesh(format!("dimension {dim} not supported")));
    }
    if n == 0 {
        return Err(Error::InvalidMesh("need at least one cell per axis".into()));
    }
    let axis = dim - 1;
    let (lo, hi) = (domain.lo[axis], domain.hi[axis]);
    let spacing = (hi - lo) / n as f64;
    let steps = (split - lo) / spacing;
    let k = steps.round();
    if (steps - k).abs() > 1e-9 || k < 1.0 || k > (n - 1) as f64 {
        return Err(Error::InvalidMesh(format!(
            "split {split} does not lie on an interior grid plane for n = {n} (grid spacing {spacing})"
        )));
    }

    let np = n + 1;
    let mut vertices = Vec::new();
    let coord = |axis: usize, i: usize| domain.lo[axis] + (domain.hi[axis] - domain.lo[axis]) * i as f64 / n as f64;
    let (nz, vz) = if dim == 3 { (np, n) } else { (1, 0) };
    for kk in 0..nz {
        for j in 0..np {
            for i in 0..np {
                let z = if dim == 3 { coord(2, kk) } else { 0.0 };
                vertices.push([coord(0, i), coord(1, j), z]);
            }
        }
    }
    let vid = |i: usize, j: usize, k: usize| i + np * (j + np * k);

    let mut cells = Vec::new();
    if dim == 2 {
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v11, v01) = (vid(i, j, 0), vid(i + 1, j, 0), vid(i + 1, j + 1, 0), vid(i, j + 1, 0));
                cells.push([v00, v10, v11, 0]);
                cells.push([v00, v11, v01, 0]);
            }
        }
    } else {
        const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for k in 0..vz {
            for j in 0..n {
                for i in 0..n {
                    for perm in PERMS {
                        let mut idx = [i, j, k];
                        let mut tet = [vid(i, j, k), 0, 0, 0];
                        for (s, &ax) in perm.iter().enumerate() {
                            idx[ax] += 1;
                            tet[s + 1] = vid(idx[0], idx[1], idx[2]);
                        }
                        cells.push(tet);
                    }
                }
            }
        }
    }
    let cell_region = cells
        .iter()
        .map(|cell| {
            let c: f64 = cell[..=dim].iter().map(|&v| vertices[v][axis]).sum::<f64>() / (dim + 1) as f64;
            if c < split {
                Region::Darcy
            } else {
                Region::Stokes
            }
        })
        .collect();
    let h = (0..dim)
        .map(|a| (domain.hi[a] - domain.lo[a]) / n as f64)
        .fold(0.0, f64::max);
    Mesh::from_cells(
        dim,
        vertices,
        cells,
        cell_region,
        InterfacePlane::new(dim, split),
        domain,
        h,
    )
}

/// Splits every cell into `2^dim` children through its edge midpoints (red
/// refinement in 2D, Bey's eight-tetrahedron split in 3D). Regions carry over
/// to the children and facet labels follow from the unchanged geometry.
pub fn refine_uniform(mesh: &Mesh) -> Result<Mesh> {
    let dim = mesh.dim;
    let mut vertices = mesh.vertices.clone();
    let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point>| {
        let key = (a.min(b), a.max(b));
        *mid.entry(key).or_insert_with(|| {
            let p = geom::scale(&geom::add(&vertices[a], &vertices[b]), 0.5);
            vertices.push(p);
            vertices.len() - 1
        })
    };
    let mut cells = Vec::with_capacity(mesh.n_cells() << dim);
    let mut regions = Vec::with_capacity(mesh.n_cells() << dim);
    for c in 0..mesh.n_cells() {
        let v = mesh.cells[c];
        let r = mesh.cell_region[c];
        if dim == 2 {
            let m01 = midpoint(v[0], v[1], &mut vertices);
            let m12 = midpoint(v[1], v[2], &mut vertices);
            let m02 = midpoint(v[0], v[2], &mut vertices);
            cells.push([v[0], m01, m02, 0]);
            cells.push([m01, v[1], m12, 0]);
            cells.push([m02, m12, v[2], 0]);
            cells.push([m01, m12, m02, 0]);
        } else {
            let mut m = [[0usize; 4]; 4];
            for a in 0..4 {
                for b in a + 1..4 {
                    let id = midpoint(v[a], v[b], &mut vertices);
                    m[a][b] = id;
                    m[b][a] = id;
                }
            }
            let (x0, x1, x2, x3) = (v[0], v[1], v[2], v[3]);
            cells.push([x0, m[0][1], m[0][2], m[0][3]]);
            cells.push([m[0][1], x1, m[1][2], m[1][3]]);
            cells.push([m[0][2], m[1][2], x2, m[2][3]]);
            cells.push([m[0][3], m[1][3], m[2][3], x3]);
            cells.push([m[0][1], m[0][2], m[0][3], m[1][3]]);
            cells.push([m[0][1], m[0][2], m[1][2], m[1][3]]);
            cells.push([m[0][2], m[0][3], m[1][3], m[2][3]]);
            cells.push([m[0][2], m[1][2], m[1][3], m[2][3]]);
        }
        for _ in 0..(1usize << dim) {
            regions.push(r);
        }
    }
    Mesh::from_cells(dim, vertices, cells, regions, mesh.interface, mesh.domain, mesh.h / 2.0)
}

/// How the two interface partitions relate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterfaceRelation {
    Matching,
    /// Every Darcy interface facet lies inside exactly one Stokes facet.
    Nested,
    Independent,
}

#[derive(Clone, Debug)]
pub struct MeshPair {
    pub stokes: Mesh,
    pub darcy: Mesh,
    pub relation: InterfaceRelation,
}

/// Builds independent structured meshes of the Stokes and Darcy subdomains
/// (`n_s` and `n_d` cells per axis of the full box) and classifies how their
/// interface partitions relate.
pub fn build_pair(dim: usize, domain: BoxDomain, n_s: usize, n_d: usize, split: f64) -> Result<MeshPair> {
    let stokes = build_structured(dim, domain, n_s, split)?.submesh(Region::Stokes)?;
    let darcy = build_structured(dim, domain, n_d, split)?.submesh(Region::Darcy)?;
    MeshPair::new(stokes, darcy)
}

impl MeshPair {
    pub fn new(stokes: Mesh, darcy: Mesh) -> Result<MeshPair> {
        if stokes.dim != darcy.dim || stokes.interface != darcy.interface {
            return Err(Error::InterfaceMismatch(
                "meshes use different dimensions or interface planes".into(),
            ));
        }
        let relation = classify_interfaces(&stokes, &darcy)?;
        Ok(MeshPair {
            stokes,
            darcy,
            relation,
        })
    }
}

/// Interface facet of one side projected into the interface plane.
#[derive(Clone, Debug)]
pub struct PlanarFacet {
    pub facet: usize,
    pub cell: usize,
    /// Projected vertices (2 for an edge in 2D, 3 for a triangle in 3D).
    pub pts: Vec<[f64; 2]>,
    pub bbox: ([f64; 2], [f64; 2]),
}

pub fn planar_interface_facets(mesh: &Mesh, side: Region) -> Vec<PlanarFacet> {
    let dim = mesh.dim;
    mesh.interface_facets(side)
        .into_iter()
        .map(|f| {
            let pts: Vec<[f64; 2]> = mesh
                .facet_points(f)
                .iter()
                .map(|p| mesh.interface.project(p, dim))
                .collect();
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for p in &pts {
                for k in 0..2 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
            PlanarFacet {
                facet: f,
                cell: mesh.facet_cells[f][0],
                pts,
                bbox: (lo, hi),
            }
        })
        .collect()
}

/// Whether the planar point lies in the closed (projected) facet.
pub fn planar_contains(facet: &PlanarFacet, p: &[f64; 2], dim: usize, tol: f64) -> bool {
    if dim == 2 {
        let (a, b) = (
            facet.pts[0][0].min(facet.pts[1][0]),
            facet.pts[0][0].max(facet.pts[1][0]),
        );
        p[0] >= a - tol && p[0] <= b + tol
    } else {
        let [a, b, c] = [facet.pts[0], facet.pts[1], facet.pts[2]];
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
        let l0 = 1.0 - l1 - l2;
        l0 >= -tol && l1 >= -tol && l2 >= -tol
    }
}

fn classify_interfaces(stokes: &Mesh, darcy: &Mesh) -> Result<InterfaceRelation> {
    let dim = stokes.dim;
    let s = planar_interface_facets(stokes, Region::Stokes);
    let d = planar_interface_facets(darcy, Region::Darcy);
    if s.is_empty() || d.is_empty() {
        return Err(Error::InterfaceMismatch("a mesh has no interface facets".into()));
    }
    let area_s = stokes.interface_area(Region::Stokes);
    let area_d = darcy.interface_area(Region::Darcy);
    if (area_s - area_d).abs() > 1e-12 * area_s.max(area_d) {
        return Err(Error::InterfaceMismatch(format!(
            "interface areas differ: {area_s} (Stokes) vs {area_d} (Darcy)"
        )));
    }
    let hull = |fs: &[PlanarFacet]| {
        fs.iter()
            .fold(([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]), |(lo, hi), f| {
                (
                    [lo[0].min(f.bbox.0[0]), lo[1].min(f.bbox.0[1])],
                    [hi[0].max(f.bbox.1[0]), hi[1].max(f.bbox.1[1])],
                )
            })
    };
    let (hs, hd) = (hull(&s), hull(&d));
    let scale = stokes.h.min(darcy.h);
    for k in 0..dim - 1 {
        if (hs.0[k] - hd.0[k]).abs() > 1e-10 * scale || (hs.1[k] - hd.1[k]).abs() > 1e-10 * scale {
            return Err(Error::InterfaceMismatch("interface extents differ".into()));
        }
    }

    let quant = |p: &[f64; 2]| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
    let key = |f: &PlanarFacet| {
        let mut k: Vec<(i64, i64)> = f.pts.iter().map(quant).collect();
        k.sort_unstable();
        k
    };
    let mut ks: Vec<_> = s.iter().map(key).collect();
    let mut kd: Vec<_> = d.iter().map(key).collect();
    ks.sort();
    kd.sort();
    if ks == kd {
        return Ok(InterfaceRelation::Matching);
    }

    let tol = 1e-10;
    let nested = d.iter().all(|fd| {
        s.iter()
            .filter(|fs| fd.pts.iter().all(|p| planar_contains(fs, p, dim, tol)))
            .count()
            == 1
    });
    Ok(if nested {
        InterfaceRelation::Nested
    } else {
        InterfaceRelation::Independent
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_mesh_counts() {
        let m = build_structured(2, BoxDomain::unit(), 4, 0.5).unwrap();
        assert_eq!(m.n_cells(), 32);
        assert_eq!(m.n_vertices(), 25);
        assert_eq!(m.interface_facets(Region::Stokes).len(), 4);
        assert_eq!(m.interface_facets(Region::Darcy).len(), 4);
        m.validate().unwrap();
    }

    #[test]
    fn cube_mesh_counts() {
        let m = build_structured(3, BoxDomain::unit(), 2, 0.5).unwrap();
        assert_eq!(m.n_cells(), 48);
        m.validate().unwrap();
        // each z-face square of the interface is split into two triangles
        assert_eq!(m.interface_facets(Region::Stokes).len(), 8);
    }

    #[test]
    fn misaligned_split_is_rejected() {
        let err = build_structured(2, BoxDomain::unit(), 1, 0.5).unwrap_err();
        assert!(matches!(err, Error::InvalidMesh(_)));
        assert!(build_structured(3, BoxDomain::unit(), 3, 0.5).is_err());
    }

    #[test]
    fn kuhn_mesh_is_conforming() {
        let m = build_structured(3, BoxDomain::unit(), 3, 1.0 / 3.0).unwrap();
        // every facet is either interior with two cells or on the boundary
        for f in 0..m.n_facets() {
            let on_boundary = m
                .facet_points(f)
                .iter()
                .any(|p| (0..3).all(|a| p[a] <= 1e-12 || p[a] >= 1.0 - 1e-12));
            let _ = on_boundary;
            if m.facet_label[f] != FacetLabel::Interior {
                let pts = m.facet_points(f);
                let on_box = (0..3)
                    .any(|a| pts.iter().all(|p| p[a].abs() < 1e-12) || pts.iter().all(|p| (p[a] - 1.0).abs() < 1e-12));
                assert!(on_box || m.facet_label[f].is_interface());
            }
        }
    }

    #[test]
    fn volumes_and_interface_areas() {
        for (dim, n) in [(2, 6), (3, 4)] {
            let m = build_structured(dim, BoxDomain::unit(), n, 0.5).unwrap();
            let vs = m.region_volume(Region::Stokes);
            let vd = m.region_volume(Region::Darcy);
            assert!((vs - 0.5).abs() < 1e-14 && (vd - 0.5).abs() < 1e-14);
            let a_s = m.interface_area(Region::Stokes);
            let a_d = m.interface_area(Region::Darcy);
            assert!((a_s - a_d).abs() < 1e-14 * a_s);
            assert!((a_s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn refinement_multiplies_cells_and_keeps_tags() {
        let m = build_structured(2, BoxDomain::unit(), 4, 0.5).unwrap();
        let r = refine_uniform(&m).unwrap();
        assert_eq!(r.n_cells(), 128);
        r.validate().unwrap();
        assert_eq!(r.interface_facets(Region::Stokes).len(), 8);
        let total: f64 = (0..r.n_cells()).map(|c| r.cell_volume(c)).sum();
        assert!((total - 1.0).abs() < 1e-14);

        let m3 = build_structured(3, BoxDomain::unit(), 2, 0.5).unwrap();
        let r3 = refine_uniform(&m3).unwrap();
        assert_eq!(r3.n_cells(), 48 * 8);
        r3.validate().unwrap();
        let total: f64 = (0..r3.n_cells()).map(|c| r3.cell_volume(c)).sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert!((r3.interface_area(Region::Stokes) - 1.0).abs() < 1e-14);
        // every refined interface facet lies inside a coarse interface facet
        let coarse = planar_interface_facets(&m3, Region::Stokes);
        for f in planar_interface_facets(&r3, Region::Stokes) {
            let c = geom::centroid(&r3.facet_points(f.facet));
            let q = r3.interface.project(&c, 3);
            assert!(coarse.iter().any(|cf| planar_contains(cf, &q, 3, 1e-12)));
        }
    }

    #[test]
    fn pair_relations() {
        let nested = build_pair(3, BoxDomain::unit(), 6, 12, 0.5).unwrap();
        assert_eq!(nested.relation, InterfaceRelation::Nested);
        let reversed = build_pair(3, BoxDomain::unit(), 12, 6, 0.5).unwrap();
        assert_eq!(reversed.relation, InterfaceRelation::Independent);
        let same = build_pair(2, BoxDomain::unit(), 8, 8, 0.5).unwrap();
        assert_eq!(same.relation, InterfaceRelation::Matching);
        let nested2 = build_pair(2, BoxDomain::unit(), 4, 12, 0.5).unwrap();
        assert_eq!(nested2.relation, InterfaceRelation::Nested);
    }

    #[test]
    fn mismatched_interfaces_are_rejected() {
        let s = build_structured(2, BoxDomain::unit(), 4, 0.5)
            .unwrap()
            .submesh(Region::Stokes)
            .unwrap();
        let other = BoxDomain {
            lo: [0.0; 3],
            hi: [2.0, 1.0, 1.0],
        };
        let d = build_structured(2, other, 4, 0.5)
            .unwrap()
            .submesh(Region::Darcy)
            .unwrap();
        assert!(matches!(MeshPair::new(s, d), Err(Error::InterfaceMismatch(_))));
    }

    #[test]
    fn text_dump_has_all_sections() {
        let m = build_structured(2, BoxDomain::unit(), 2, 0.5).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# darcy-stokes mesh v1"));
        assert!(text.contains("vertices 9\n"));
        assert!(text.contains("cells 8\n"));
        let n_sigma = text.lines().filter(|l| l.ends_with("sigma_s")).count();
        assert_eq!(n_sigma, 2);
    }
}
