//! Global saddle-point system for the coupled problem and its reduction to
//! the constrained space (essential conditions and Darcy interface DOFs
//! eliminated by a congruence transform).

use std::sync::Arc;

use rayon::prelude::*;

use crate::coupling::{build_constraints, ConstraintSet, Coupling};
use crate::error::{Error, Result};
use crate::geom::{self, Mat3, Point};
use crate::mesh::{MeshPair, Region};
use crate::refelem::{self, AffineMap, MAX_DEGREE};
use crate::spaces::{build_space, BasisValues, ElementPair, FeSpace, NO_DOF};
use crate::sparse::{Csr, Triplets};

/// Environment variable limiting the number of assembly threads.
pub const THREADS_ENV: &str = "DARCY_STOKES_THREADS";

pub type VectorFn = Arc<dyn Fn(&Point) -> Point + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

#[derive(Clone, Debug, PartialEq)]
pub enum Permeability {
    Constant(Mat3),
    PerCell(Vec<Mat3>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients {
    pub viscosity: f64,
    /// BJS coefficient κ.
    pub kappa: f64,
    /// Per Stokes-mesh facet overrides of κ (indexed by facet id).
    pub kappa_facets: Option<Vec<f64>>,
    pub permeability: Permeability,
}

impl Default for Coefficients {
    fn default() -> Self {
        Coefficients {
            viscosity: 1.0,
            kappa: 1.0,
            kappa_facets: None,
            permeability: Permeability::Constant(identity()),
        }
    }
}

fn identity() -> Mat3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

impl Coefficients {
    pub fn isotropic(viscosity: f64, kappa: f64, k: f64) -> Coefficients {
        let mut m = identity();
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = k;
        }
        Coefficients {
            viscosity,
            kappa,
            kappa_facets: None,
            permeability: Permeability::Constant(m),
        }
    }

    pub fn kappa_at(&self, facet: usize) -> f64 {
        self.kappa_facets.as_ref().map_or(self.kappa, |k| k[facet])
    }

    pub fn permeability_at(&self, cell: usize) -> &Mat3 {
        match &self.permeability {
            Permeability::Constant(k) => k,
            Permeability::PerCell(ks) => &ks[cell],
        }
    }

    pub fn validate(&self, dim: usize, n_darcy_cells: usize, n_stokes_facets: usize) -> Result<()> {
        if !(self.viscosity > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "viscosity must be positive, got {}",
                self.viscosity
            )));
        }
        let kappas: Vec<f64> = match &self.kappa_facets {
            Some(k) if k.len() != n_stokes_facets => {
                return Err(Error::DimensionMismatch(format!(
                    "{} facet κ values for {n_stokes_facets} facets",
                    k.len()
                )))
            }
            Some(k) => k.clone(),
            None => vec![self.kappa],
        };
        if kappas.iter().any(|&k| !(k > 0.0)) {
            return Err(Error::InvalidArgument("BJS coefficient κ must be positive".into()));
        }
        let ks: Vec<&Mat3> = match &self.permeability {
            Permeability::Constant(k) => vec![k],
            Permeability::PerCell(v) if v.len() < n_darcy_cells => {
                return Err(Error::DimensionMismatch(format!(
                    "{} permeability tensors for {n_darcy_cells} cells",
                    v.len()
                )))
            }
            Permeability::PerCell(v) => v.iter().collect(),
        };
        for k in ks {
            let a: Vec<f64> = (0..dim).flat_map(|i| (0..dim).map(move |j| k[i][j])).collect();
            if !cholesky_ok(dim, &a) {
                return Err(Error::InvalidArgument(
                    "permeability is not symmetric positive definite".into(),
                ));
            }
        }
        Ok(())
    }
}

fn cholesky_ok(n: usize, a: &[f64]) -> bool {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            if (a[i * n + j] - a[j * n + i]).abs() > 1e-12 * a[i * n + i].abs().max(1.0) {
                return false;
            }
            let s: f64 = a[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return false;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    true
}

/// Sources and interface inhomogeneities; `None` means zero.
#[derive(Clone, Default)]
pub struct Loads {
    pub f_s: Option<VectorFn>,
    pub f_d: Option<ScalarFn>,
    /// Traction defect entering as ⟨g_t, v_S⟩ on Σ.
    pub g_t: Option<VectorFn>,
    /// Flux jump g_ν = (u_S − u_D)·ν on Σ.
    pub g_nu: Option<ScalarFn>,
}

/// Meshes, the four spaces and the interface coupling of one level.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub pair: MeshPair,
    pub element: ElementPair,
    pub us: FeSpace,
    pub ps: FeSpace,
    pub ud: FeSpace,
    pub pd: FeSpace,
    pub coupling: Coupling,
}

impl Discretization {
    pub fn new(pair: MeshPair, element: ElementPair, sigma_bubbles: bool) -> Result<Discretization> {
        let [s_us, s_ps, s_ud, s_pd] = element.specs(sigma_bubbles);
        let us = build_space(&pair.stokes, s_us)?;
        let ps = build_space(&pair.stokes, s_ps)?;
        let ud = build_space(&pair.darcy, s_ud)?;
        let pd = build_space(&pair.darcy, s_pd)?;
        let coupling = Coupling::new(&pair, &us, &ud)?;
        Ok(Discretization {
            pair,
            element,
            us,
            ps,
            ud,
            pd,
            coupling,
        })
    }

    pub fn dim(&self) -> usize {
        self.pair.stokes.dim
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.us.n_dofs, self.ud.n_dofs, self.ps.n_dofs, self.pd.n_dofs)
    }
}

/// Offsets of the unknown blocks in the full (unreduced) vector ordered as
/// u_S, u_D, p_S, p_D, δ, λ_S, λ_D.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub us: usize,
    pub ud: usize,
    pub ps: usize,
    pub pd: usize,
    pub delta: usize,
    pub lambda_s: usize,
    pub lambda_d: usize,
    pub n: usize,
}

impl Layout {
    pub fn new(nus: usize, nud: usize, nps: usize, npd: usize) -> Layout {
        let ud = nus;
        let ps = ud + nud;
        let pd = ps + nps;
        let delta = pd + npd;
        Layout {
            us: 0,
            ud,
            ps,
            pd,
            delta,
            lambda_s: delta + 1,
            lambda_d: delta + 2,
            n: delta + 3,
        }
    }

    /// Block name of a full index.
    pub fn block_of(&self, i: usize) -> &'static str {
        if i < self.ud {
            "Stokes velocity"
        } else if i < self.ps {
            "Darcy velocity"
        } else if i < self.pd {
            "Stokes pressure"
        } else if i < self.delta {
            "Darcy pressure"
        } else if i == self.delta {
            "interface pressure offset"
        } else {
            "mean-value multiplier"
        }
    }
}

/// Block ranges of the reduced system.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockRanges {
    pub us: std::ops::Range<usize>,
    pub ud: std::ops::Range<usize>,
    pub ps: std::ops::Range<usize>,
    pub pd: std::ops::Range<usize>,
    pub delta: usize,
    pub lambda_s: usize,
    pub lambda_d: usize,
}

impl BlockRanges {
    pub fn n(&self) -> usize {
        self.lambda_d + 1
    }

    pub fn n_velocity(&self) -> usize {
        self.ud.end
    }

    /// Whether reduced index `i` is a primal unknown (velocity or
    /// multiplier) in the quasi-definite splitting.
    pub fn is_primal(&self, i: usize) -> bool {
        i < self.ud.end || i >= self.lambda_s
    }

    pub fn block_of(&self, i: usize) -> &'static str {
        if self.us.contains(&i) {
            "Stokes velocity"
        } else if self.ud.contains(&i) {
            "Darcy velocity"
        } else if self.ps.contains(&i) {
            "Stokes pressure"
        } else if self.pd.contains(&i) {
            "Darcy pressure"
        } else if i == self.delta {
            "interface pressure offset"
        } else {
            "mean-value multiplier"
        }
    }
}

/// Map from reduced unknowns y to full vectors x = P y + x_g.
#[derive(Clone, Debug)]
pub struct Reduction {
    pub layout: Layout,
    /// Reduced index of every full index, or `usize::MAX` for eliminated ones.
    pub reduced_of: Vec<usize>,
    /// Full index of every reduced unknown.
    pub full_of: Vec<usize>,
    /// Slave rows: full index, then (reduced master, coefficient) pairs.
    pub slave_rows: Vec<(usize, Vec<(usize, f64)>)>,
    pub x_g: Vec<f64>,
    pub ranges: BlockRanges,
}

impl Reduction {
    fn new(disc: &Discretization, constraints: &ConstraintSet) -> Reduction {
        let layout = disc.layout();
        let n = layout.n;
        let mut reduced_of = vec![usize::MAX; n];
        let mut is_slave = vec![false; disc.ud.n_dofs];
        for &s in &constraints.slaves {
            is_slave[s] = true;
        }
        let mut full_of = Vec::new();
        let mut take = |i: usize, full_of: &mut Vec<usize>| {
            reduced_of[i] = full_of.len();
            full_of.push(i);
        };
        for i in 0..disc.us.n_dofs {
            if !disc.us.essential[i] {
                take(layout.us + i, &mut full_of);
            }
        }
        let us_end = full_of.len();
        for i in 0..disc.ud.n_dofs {
            if !disc.ud.essential[i] && !is_slave[i] {
                take(layout.ud + i, &mut full_of);
            }
        }
        let ud_end = full_of.len();
        for i in layout.ps..n {
            take(i, &mut full_of);
        }
        let ps_end = ud_end + disc.ps.n_dofs;
        let pd_end = ps_end + disc.pd.n_dofs;
        let ranges = BlockRanges {
            us: 0..us_end,
            ud: us_end..ud_end,
            ps: ud_end..ps_end,
            pd: ps_end..pd_end,
            delta: pd_end,
            lambda_s: pd_end + 1,
            lambda_d: pd_end + 2,
        };
        let mut x_g = vec![0.0; n];
        let mut slave_rows = Vec::with_capacity(constraints.slaves.len());
        for (k, &s) in constraints.slaves.iter().enumerate() {
            let full = layout.ud + s;
            x_g[full] = constraints.g[k];
            let (cols, vals) = constraints.c.row(k);
            let row: Vec<(usize, f64)> = cols
                .iter()
                .zip(vals)
                .filter_map(|(&j, &v)| {
                    let r = reduced_of[layout.us + j];
                    (r != usize::MAX && v != 0.0).then_some((r, v))
                })
                .collect();
            slave_rows.push((full, row));
        }
        Reduction {
            layout,
            reduced_of,
            full_of,
            slave_rows,
            x_g,
            ranges,
        }
    }

    pub fn n_reduced(&self) -> usize {
        self.full_of.len()
    }

    /// Expansion of one full index as (reduced index, coefficient) pairs.
    fn expansion(&self, slave_of: &[usize], i: usize) -> Vec<(usize, f64)> {
        let r = self.reduced_of[i];
        if r != usize::MAX {
            return vec![(r, 1.0)];
        }
        match slave_of[i] {
            usize::MAX => Vec::new(),
            k => self.slave_rows[k].1.clone(),
        }
    }

    fn slave_index(&self) -> Vec<usize> {
        let mut slave_of = vec![usize::MAX; self.layout.n];
        for (k, (full, _)) in self.slave_rows.iter().enumerate() {
            slave_of[*full] = k;
        }
        slave_of
    }

    /// x = P y + x_g.
    pub fn expand(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.x_g.clone();
        for (r, &i) in self.full_of.iter().enumerate() {
            x[i] = y[r];
        }
        for (full, row) in &self.slave_rows {
            x[*full] += row.iter().map(|&(r, c)| c * y[r]).sum::<f64>();
        }
        x
    }

    /// Pᵀ r for a full-length vector r.
    pub fn restrict(&self, r: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.full_of.iter().map(|&i| r[i]).collect();
        for (full, row) in &self.slave_rows {
            for &(k, c) in row {
                out[k] += c * r[*full];
            }
        }
        out
    }

    /// PᵀKP for a full matrix given by triplets.
    pub fn congruence(&self, k: &Csr) -> Csr {
        let slave_of = self.slave_index();
        let mut t = Vec::with_capacity(k.nnz());
        let mut cache: Vec<Option<Vec<(usize, f64)>>> = vec![None; self.layout.n];
        for i in 0..k.nrows {
            let ei = self.expansion(&slave_of, i);
            if ei.is_empty() {
                continue;
            }
            let (cols, vals) = k.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let ej = cache[j].get_or_insert_with(|| self.expansion(&slave_of, j));
                for &(a, ca) in &ei {
                    for &(b, cb) in ej.iter() {
                        t.push((a, b, ca * cb * v));
                    }
                }
            }
        }
        let n = self.n_reduced();
        Csr::from_triplets(n, n, &t)
    }
}

/// Assembled and reduced saddle-point system of one level.
#[derive(Clone, Debug)]
pub struct CoupledSystem {
    /// Reduced symmetric matrix PᵀKP.
    pub matrix: Csr,
    pub rhs: Vec<f64>,
    /// Unreduced matrix and load.
    pub full_matrix: Csr,
    pub full_rhs: Vec<f64>,
    pub reduction: Reduction,
    pub constraints: ConstraintSet,
    pub warnings: Vec<String>,
}

impl CoupledSystem {
    pub fn ranges(&self) -> &BlockRanges {
        &self.reduction.ranges
    }

    /// dim X^h + dim Q^h: reduced unknowns minus the two multipliers and the
    /// two mean constraints.
    pub fn n_unknowns(&self) -> usize {
        self.reduction.n_reduced() - 4
    }

    /// Writes the reduced matrix in the sparse triplet text format.
    pub fn write_triplets<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        self.matrix.write_triplets(out)
    }
}

fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok());
    match threads {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

/// Local contribution of one cell: row DOFs, column DOFs, dense block.
struct Local {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Local {
    fn scatter(&self, t: &mut Triplets, r0: usize, c0: usize, scale: f64) {
        let nc = self.cols.len();
        for (a, &i) in self.rows.iter().enumerate() {
            if i == NO_DOF {
                continue;
            }
            for (b, &j) in self.cols.iter().enumerate() {
                if j != NO_DOF {
                    t.push(r0 + i, c0 + j, scale * self.vals[a * nc + b]);
                }
            }
        }
    }
}

fn strain(g: &Mat3) -> Mat3 {
    let mut e = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            e[r][c] = 0.5 * (g[r][c] + g[c][r]);
        }
    }
    e
}

fn frob(a: &Mat3, b: &Mat3) -> f64 {
    (0..3).map(|r| geom::dot(&a[r], &b[r])).sum()
}

fn cell_degree(dim: usize, d: usize) -> usize {
    d.min(MAX_DEGREE[dim])
}

/// Load quadrature degree (the highest tabulated in 3D).
pub fn load_degree(dim: usize) -> usize {
    if dim == 2 {
        8
    } else {
        6
    }
}

/// Unreduced blocks of the coupled problem in space-local numbering.
#[derive(Clone, Debug)]
pub struct Blocks {
    /// 2ν(ε u, ε v) on Ω_S.
    pub viscous: Csr,
    /// ν⟨κ⁻¹π_t u, π_t v⟩ on Σ.
    pub bjs: Csr,
    /// (K⁻¹u, v) on Ω_D.
    pub darcy: Csr,
    /// (div v, q) with rows p_S and columns u_S.
    pub div_s: Csr,
    /// (div v, q) with rows p_D and columns u_D.
    pub div_d: Csr,
    /// ⟨v·ν, 1⟩_Σ per Stokes velocity DOF.
    pub flux_s: Vec<f64>,
    /// ∫ q per pressure DOF.
    pub mean_s: Vec<f64>,
    pub mean_d: Vec<f64>,
    /// (f_S, v) + ⟨g_t, v⟩_Σ.
    pub load_s: Vec<f64>,
    /// (f_D, q).
    pub load_d: Vec<f64>,
}

fn assemble_stokes_cells(
    disc: &Discretization,
    coef: &Coefficients,
    loads: &Loads,
) -> (Vec<Local>, Vec<Local>, Vec<(Vec<usize>, Vec<f64>)>) {
    let dim = disc.dim();
    let mesh = &disc.pair.stokes;
    let (us, ps) = (&disc.us, &disc.ps);
    let p = us.shape_degree();
    let mut degree = (2 * p - 2).max(p - 1 + ps.shape_degree());
    if loads.f_s.is_some() {
        degree = degree.max(load_degree(dim));
    }
    let rule = refelem::quadrature_capped(dim, cell_degree(dim, degree));
    let tu = us.tabulate(rule);
    let tp = ps.tabulate(rule);
    let nu = coef.viscosity;
    let out: Vec<(Local, Local, (Vec<usize>, Vec<f64>))> = us
        .cells
        .par_iter()
        .map(|&c| {
            let map = AffineMap::new(&mesh.cell_points(c), dim);
            let (nu_loc, np_loc) = (us.n_local, ps.n_local);
            let mut a = vec![0.0; nu_loc * nu_loc];
            let mut b = vec![0.0; np_loc * nu_loc];
            let mut f = vec![0.0; nu_loc];
            let mut bu = BasisValues::default();
            let mut bp = BasisValues::default();
            let mut eps = vec![[[0.0; 3]; 3]; nu_loc];
            for (q, w) in rule.weights.iter().enumerate() {
                let w = w * map.det.abs();
                us.push(mesh, c, &map, &tu[q], &mut bu);
                ps.push(mesh, c, &map, &tp[q], &mut bp);
                for i in 0..nu_loc {
                    eps[i] = strain(&bu.grad[i]);
                }
                for i in 0..nu_loc {
                    for j in i..nu_loc {
                        let v = 2.0 * nu * w * frob(&eps[i], &eps[j]);
                        a[i * nu_loc + j] += v;
                        if j != i {
                            a[j * nu_loc + i] += v;
                        }
                    }
                }
                for k in 0..np_loc {
                    for i in 0..nu_loc {
                        b[k * nu_loc + i] += w * bp.val[k][0] * bu.div[i];
                    }
                }
                if let Some(fs) = &loads.f_s {
                    let x = map.to_physical(&rule.points[q]);
                    let fv = fs(&x);
                    for i in 0..nu_loc {
                        f[i] += w * geom::dot(&fv, &bu.val[i]);
                    }
                }
            }
            let ud = us.cell_dofs(c).to_vec();
            (
                Local {
                    rows: ud.clone(),
                    cols: ud.clone(),
                    vals: a,
                },
                Local {
                    rows: ps.cell_dofs(c).to_vec(),
                    cols: ud.clone(),
                    vals: b,
                },
                (ud, f),
            )
        })
        .collect();
    let mut a = Vec::with_capacity(out.len());
    let mut b = Vec::with_capacity(out.len());
    let mut f = Vec::with_capacity(out.len());
    for (x, y, z) in out {
        a.push(x);
        b.push(y);
        f.push(z);
    }
    (a, b, f)
}

fn assemble_darcy_cells(
    disc: &Discretization,
    coef: &Coefficients,
    loads: &Loads,
) -> (Vec<Local>, Vec<Local>, Vec<(Vec<usize>, Vec<f64>)>) {
    let dim = disc.dim();
    let mesh = &disc.pair.darcy;
    let (ud, pd) = (&disc.ud, &disc.pd);
    let p = ud.shape_degree();
    let mut degree = (2 * p).max(p + pd.shape_degree());
    if loads.f_d.is_some() {
        degree = degree.max(load_degree(dim));
    }
    let rule = refelem::quadrature_capped(dim, cell_degree(dim, degree));
    let tu = ud.tabulate(rule);
    let tp = pd.tabulate(rule);
    let out: Vec<(Local, Local, (Vec<usize>, Vec<f64>))> = ud
        .cells
        .par_iter()
        .map(|&c| {
            let map = AffineMap::new(&mesh.cell_points(c), dim);
            let kinv = geom::inverse(coef.permeability_at(c), dim);
            let (nu_loc, np_loc) = (ud.n_local, pd.n_local);
            let mut a = vec![0.0; nu_loc * nu_loc];
            let mut b = vec![0.0; np_loc * nu_loc];
            let mut f = vec![0.0; np_loc];
            let mut bu = BasisValues::default();
            let mut bp = BasisValues::default();
            for (q, w) in rule.weights.iter().enumerate() {
                let w = w * map.det.abs();
                ud.push(mesh, c, &map, &tu[q], &mut bu);
                pd.push(mesh, c, &map, &tp[q], &mut bp);
                for i in 0..nu_loc {
                    let ki = geom::mat_vec(&kinv, &bu.val[i]);
                    for j in 0..nu_loc {
                        a[i * nu_loc + j] += w * geom::dot(&ki, &bu.val[j]);
                    }
                }
                for k in 0..np_loc {
                    for i in 0..nu_loc {
                        b[k * nu_loc + i] += w * bp.val[k][0] * bu.div[i];
                    }
                }
                if let Some(fd) = &loads.f_d {
                    let x = map.to_physical(&rule.points[q]);
                    let v = fd(&x);
                    for k in 0..np_loc {
                        f[k] += w * v * bp.val[k][0];
                    }
                }
            }
            let udofs = ud.cell_dofs(c).to_vec();
            let pdofs = pd.cell_dofs(c).to_vec();
            (
                Local {
                    rows: udofs.clone(),
                    cols: udofs.clone(),
                    vals: a,
                },
                Local {
                    rows: pdofs.clone(),
                    cols: udofs,
                    vals: b,
                },
                (pdofs, f),
            )
        })
        .collect();
    let mut a = Vec::with_capacity(out.len());
    let mut b = Vec::with_capacity(out.len());
    let mut f = Vec::with_capacity(out.len());
    for (x, y, z) in out {
        a.push(x);
        b.push(y);
        f.push(z);
    }
    (a, b, f)
}

/// Assembles all unreduced blocks.
pub fn assemble_blocks(disc: &Discretization, coef: &Coefficients, loads: &Loads) -> Result<Blocks> {
    let dim = disc.dim();
    coef.validate(dim, disc.pair.darcy.n_cells(), disc.pair.stokes.n_facets())?;
    let (us, ps, ud, pd) = (&disc.us, &disc.ps, &disc.ud, &disc.pd);
    let ((sa, sb, sf), (da, db, df)) = with_pool(|| {
        (
            assemble_stokes_cells(disc, coef, loads),
            assemble_darcy_cells(disc, coef, loads),
        )
    });

    let mut viscous = Triplets::new(us.n_dofs, us.n_dofs);
    let mut div_s = Triplets::new(ps.n_dofs, us.n_dofs);
    let mut load_s = vec![0.0; us.n_dofs];
    for ((a, b), (dofs, f)) in sa.iter().zip(&sb).zip(&sf) {
        a.scatter(&mut viscous, 0, 0, 1.0);
        b.scatter(&mut div_s, 0, 0, 1.0);
        for (&i, v) in dofs.iter().zip(f) {
            if i != NO_DOF {
                load_s[i] += v;
            }
        }
    }
    let mut darcy = Triplets::new(ud.n_dofs, ud.n_dofs);
    let mut div_d = Triplets::new(pd.n_dofs, ud.n_dofs);
    let mut load_d = vec![0.0; pd.n_dofs];
    for ((a, b), (dofs, f)) in da.iter().zip(&db).zip(&df) {
        a.scatter(&mut darcy, 0, 0, 1.0);
        b.scatter(&mut div_d, 0, 0, 1.0);
        for (&i, v) in dofs.iter().zip(f) {
            load_d[i] += v;
        }
    }

    // interface terms on the Stokes side of Σ
    let mesh = &disc.pair.stokes;
    let nu_vec = mesh.interface.normal;
    let mut bjs = Triplets::new(us.n_dofs, us.n_dofs);
    let mut flux_s = vec![0.0; us.n_dofs];
    let p = us.shape_degree();
    let degree = if loads.g_t.is_some() { load_degree(dim) } else { 2 * p };
    for f in mesh.interface_facets(Region::Stokes) {
        let c = mesh.facet_cells[f][0];
        let dofs = us.cell_dofs(c);
        let scale = coef.viscosity / coef.kappa_at(f);
        let (qp, qw) = refelem::facet_quadrature(&mesh.facet_points(f), degree);
        for (x, w) in qp.iter().zip(&qw) {
            let bv = us.eval_at(mesh, c, x);
            let tang: Vec<Point> = bv
                .val
                .iter()
                .map(|v| geom::sub(v, &geom::scale(&nu_vec, geom::dot(v, &nu_vec))))
                .collect();
            let gt = loads.g_t.as_ref().map(|g| g(x));
            for (i, &di) in dofs.iter().enumerate() {
                if di == NO_DOF {
                    continue;
                }
                flux_s[di] += w * geom::dot(&bv.val[i], &nu_vec);
                if let Some(g) = &gt {
                    load_s[di] += w * geom::dot(g, &bv.val[i]);
                }
                for (j, &dj) in dofs.iter().enumerate() {
                    if dj != NO_DOF {
                        bjs.push(di, dj, scale * w * geom::dot(&tang[i], &tang[j]));
                    }
                }
            }
        }
    }

    Ok(Blocks {
        viscous: viscous.to_csr(),
        bjs: bjs.to_csr(),
        darcy: darcy.to_csr(),
        div_s: div_s.to_csr(),
        div_d: div_d.to_csr(),
        flux_s,
        mean_s: ps.zero_mean_functional(&disc.pair.stokes),
        mean_d: pd.zero_mean_functional(&disc.pair.darcy),
        load_s,
        load_d,
    })
}

/// ∫_{Ω_D} f_D − ⟨g_ν, 1⟩_Σ; zero for compatible data.
pub fn compatibility_defect(disc: &Discretization, loads: &Loads) -> f64 {
    let mesh = &disc.pair.darcy;
    let dim = mesh.dim;
    let mut total = 0.0;
    if let Some(fd) = &loads.f_d {
        let rule = refelem::quadrature_capped(dim, load_degree(dim));
        for &c in &disc.pd.cells {
            let map = AffineMap::new(&mesh.cell_points(c), dim);
            total += map.det.abs() * rule.integrate(|p| fd(&map.to_physical(p)));
        }
    }
    if let Some(g) = &loads.g_nu {
        for f in mesh.interface_facets(Region::Darcy) {
            let (qp, qw) = refelem::facet_quadrature(&mesh.facet_points(f), 2 * load_degree(dim));
            total -= qp.iter().zip(&qw).map(|(x, w)| w * g(x)).sum::<f64>();
        }
    }
    total
}

/// Assembles the full symmetric system and reduces it to the constrained
/// space.
pub fn assemble(disc: &Discretization, coef: &Coefficients, loads: &Loads) -> Result<CoupledSystem> {
    let blocks = assemble_blocks(disc, coef, loads)?;
    let mut warnings = Vec::new();
    let defect = compatibility_defect(disc, loads);
    if defect.abs() > 1e-10 {
        let msg = format!(
            "data violate the compatibility condition: ∫f_D − ⟨g_ν,1⟩ = {defect:.3e}; solving the mean-constrained system"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let flux_jump = loads.g_nu.clone().map(|g| move |x: &Point| -g(x));
    let constraints = build_constraints(
        &disc.pair.darcy,
        &disc.coupling.trace,
        &disc.ud,
        &disc.coupling.mass,
        &disc.coupling.mixed,
        flux_jump.as_ref().map(|f| f as &dyn Fn(&Point) -> f64),
    )?;
    finalize(disc, &blocks, constraints, warnings)
}

/// Composes the full matrix from blocks and applies the reduction.
pub fn finalize(
    disc: &Discretization,
    blocks: &Blocks,
    constraints: ConstraintSet,
    warnings: Vec<String>,
) -> Result<CoupledSystem> {
    let l = disc.layout();
    let (nus, nud) = (disc.us.n_dofs, disc.ud.n_dofs);
    let dims_ok = blocks.viscous.nrows == nus
        && blocks.darcy.nrows == nud
        && blocks.div_s.nrows == disc.ps.n_dofs
        && blocks.div_d.nrows == disc.pd.n_dofs
        && constraints.c.ncols == nus
        && constraints.slaves.len() == constraints.c.nrows;
    if !dims_ok {
        return Err(Error::DimensionMismatch(
            "blocks do not match the discretization".into(),
        ));
    }
    let mut t = Triplets::new(l.n, l.n);
    for m in [&blocks.viscous, &blocks.bjs] {
        for (i, j, v) in m.triplets() {
            t.push(l.us + i, l.us + j, v);
        }
    }
    for (i, j, v) in blocks.darcy.triplets() {
        t.push(l.ud + i, l.ud + j, v);
    }
    for (i, j, v) in blocks.div_s.triplets() {
        t.push_sym(l.ps + i, l.us + j, -v);
    }
    for (i, j, v) in blocks.div_d.triplets() {
        t.push_sym(l.pd + i, l.ud + j, -v);
    }
    for (j, &v) in blocks.flux_s.iter().enumerate() {
        t.push_sym(l.delta, l.us + j, -v);
    }
    for (i, &v) in blocks.mean_s.iter().enumerate() {
        t.push_sym(l.ps + i, l.lambda_s, -v);
    }
    for (i, &v) in blocks.mean_d.iter().enumerate() {
        t.push_sym(l.pd + i, l.lambda_d, -v);
    }
    let full_matrix = t.to_csr();
    let mut full_rhs = vec![0.0; l.n];
    full_rhs[l.us..l.us + nus].copy_from_slice(&blocks.load_s);
    for (i, v) in blocks.load_d.iter().enumerate() {
        full_rhs[l.pd + i] = -v;
    }

    let reduction = Reduction::new(disc, &constraints);
    let matrix = reduction.congruence(&full_matrix);
    let kxg = full_matrix.matvec(&reduction.x_g);
    let shifted: Vec<f64> = full_rhs.iter().zip(&kxg).map(|(r, k)| r - k).collect();
    let rhs = reduction.restrict(&shifted);
    Ok(CoupledSystem {
        matrix,
        rhs,
        full_matrix,
        full_rhs,
        reduction,
        constraints,
        warnings,
    })
}

/// Gram matrices of the stability norms: full H¹ on the Stokes velocity,
/// H(div) on the Darcy velocity (velocity numbering u_S then u_D), and L² on
/// both pressures (p_S then p_D).
pub fn stability_grams(disc: &Discretization) -> (Csr, Csr) {
    let nus = disc.us.n_dofs;
    let nps = disc.ps.n_dofs;
    let mut x = Triplets::new(nus + disc.ud.n_dofs, nus + disc.ud.n_dofs);
    let mut m = Triplets::new(nps + disc.pd.n_dofs, nps + disc.pd.n_dofs);
    let jobs: [(&FeSpace, &crate::mesh::Mesh, usize, bool); 4] = [
        (&disc.us, &disc.pair.stokes, 0, true),
        (&disc.ud, &disc.pair.darcy, nus, true),
        (&disc.ps, &disc.pair.stokes, 0, false),
        (&disc.pd, &disc.pair.darcy, nps, false),
    ];
    for (space, mesh, off, velocity) in jobs {
        let dim = mesh.dim;
        let rule = refelem::quadrature_capped(dim, 2 * space.shape_degree());
        let tab = space.tabulate(rule);
        let n = space.n_local;
        let mut bv = BasisValues::default();
        for &c in &space.cells {
            let map = AffineMap::new(&mesh.cell_points(c), dim);
            let dofs = space.cell_dofs(c);
            let mut local = vec![0.0; n * n];
            for (q, w) in rule.weights.iter().enumerate() {
                let w = w * map.det.abs();
                space.push(mesh, c, &map, &tab[q], &mut bv);
                for i in 0..n {
                    for j in 0..n {
                        let mut v = geom::dot(&bv.val[i], &bv.val[j]);
                        if velocity {
                            v += if space.is_hdiv() {
                                bv.div[i] * bv.div[j]
                            } else {
                                frob(&bv.grad[i], &bv.grad[j])
                            };
                        }
                        local[i * n + j] += w * v;
                    }
                }
            }
            let target = if velocity { &mut x } else { &mut m };
            for i in 0..n {
                for j in 0..n {
                    if dofs[i] != NO_DOF && dofs[j] != NO_DOF {
                        target.push(off + dofs[i], off + dofs[j], local[i * n + j]);
                    }
                }
            }
        }
    }
    (x.to_csr(), m.to_csr())
}
