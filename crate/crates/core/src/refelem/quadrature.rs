//! Symmetric quadrature rules on the reference interval, triangle and
//! tetrahedron.
//!
//! Reference simplices: [0,1]; the triangle with vertices (0,0), (1,0), (0,1);
//! the tetrahedron with vertices at the origin and the unit vectors. Rules are
//! stored as barycentric orbits with weights normalized to sum to one and are
//! scaled by the reference measure on expansion.

#![allow(clippy::excessive_precision)]

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geom::Point;

#[derive(Clone, Debug)]
pub struct QuadRule {
    pub dim: usize,
    /// Reference coordinates (unused trailing entries are zero).
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    /// Highest total polynomial degree integrated exactly.
    pub degree: usize,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }
}

/// Highest degree available per dimension.
pub const MAX_DEGREE: [usize; 4] = [0, 15, 8, 6];

#[derive(Clone, Copy)]
enum Orbit {
    /// Centroid.
    S1(f64),
    /// Two (2D) or three (3D) equal barycentric coordinates `a`.
    Sym1(f64, f64),
    /// 3D orbit (a, a, 1/2 - a, 1/2 - a).
    S22(f64, f64),
    /// 2D orbit of (a, b, 1 - a - b) or 3D orbit of (a, a, b, 1 - 2a - b).
    Sym2(f64, f64, f64),
}

const TRI_RULES: &[(usize, &[Orbit])] = &[
    (1, &[Orbit::S1(1.0)]),
    (2, &[Orbit::Sym1(1.0 / 6.0, 1.0 / 3.0)]),
    (
        4,
        &[
            Orbit::Sym1(0.445_948_490_915_964_886_318_3, 0.223_381_589_678_011_465_695),
            Orbit::Sym1(0.091_576_213_509_770_743_459_57, 0.109_951_743_655_321_867_638_3),
        ],
    ),
    (
        5,
        &[
            Orbit::S1(0.225),
            Orbit::Sym1(0.470_142_064_105_115_089_770_4, 0.132_394_152_788_506_180_737_6),
            Orbit::Sym1(0.101_286_507_323_456_338_801, 0.125_939_180_544_827_152_595_7),
        ],
    ),
    (
        6,
        &[
            Orbit::Sym1(0.249_286_745_170_910_421_291_6, 0.116_786_275_726_379_366_025_3),
            Orbit::Sym1(0.063_089_014_491_502_228_340_33, 0.050_844_906_370_206_816_920_94),
            Orbit::Sym2(
                0.053_145_049_844_816_947_353_25,
                0.310_352_451_033_784_405_416_6,
                0.082_851_075_618_373_575_193_55,
            ),
        ],
    ),
    (
        8,
        &[
            Orbit::S1(0.144_315_607_677_787_168_251_1),
            Orbit::Sym1(0.459_292_588_292_723_156_028_8, 0.095_091_634_267_284_624_793_9),
            Orbit::Sym1(0.170_569_307_751_760_206_622_3, 0.103_217_370_534_718_250_281_8),
            Orbit::Sym1(0.050_547_228_317_030_975_458_42, 0.032_458_497_623_198_080_310_93),
            Orbit::Sym2(
                0.008_394_777_409_957_605_337_214,
                0.263_112_829_634_638_113_421_8,
                0.027_230_314_174_434_994_264_84,
            ),
        ],
    ),
];

const TET_RULES: &[(usize, &[Orbit])] = &[
    (1, &[Orbit::S1(1.0)]),
    (2, &[Orbit::Sym1(0.138_196_601_125_010_515_179_5, 0.25)]),
    (
        5,
        &[
            Orbit::Sym1(0.092_735_250_310_891_226_402_32, 0.073_493_043_116_361_949_543_71),
            Orbit::Sym1(0.310_885_919_263_300_609_797_3, 0.112_687_925_718_015_850_799_2),
            Orbit::S22(0.045_503_704_125_649_649_491_88, 0.042_546_020_777_081_466_438_07),
        ],
    ),
    (
        6,
        &[
            Orbit::Sym1(0.214_602_871_259_152_029_288_8, 0.039_922_750_258_167_492_099_69),
            Orbit::Sym1(0.040_673_958_534_611_353_115_58, 0.010_077_211_055_320_642_948_01),
            Orbit::Sym1(0.322_337_890_142_275_510_344, 0.055_357_181_543_654_722_095_15),
            Orbit::Sym2(
                0.063_661_001_875_017_525_299_24,
                0.269_672_331_458_315_808_034_1,
                0.048_214_285_714_285_714_285_71,
            ),
        ],
    ),
];

/// Gauss–Legendre nodes on [0, 1] for the lower half of the interval
/// (including the midpoint for odd counts); the rest follow by symmetry.
const GAUSS_LEGENDRE: [&[(f64, f64)]; 8] = [
    &[(0.5, 1.0)],
    &[(0.211_324_865_405_187_117_745, 0.5)],
    &[
        (0.112_701_665_379_258_311_482, 0.277_777_777_777_777_777_778),
        (0.5, 0.444_444_444_444_444_444_444),
    ],
    &[
        (0.069_431_844_202_973_712_388, 0.173_927_422_568_726_928_687),
        (0.330_009_478_207_571_867_599, 0.326_072_577_431_273_071_313),
    ],
    &[
        (0.046_910_077_030_668_003_601_2, 0.118_463_442_528_094_543_757),
        (0.230_765_344_947_158_454_482, 0.239_314_335_249_683_234_021),
        (0.5, 0.284_444_444_444_444_444_444),
    ],
    &[
        (0.033_765_242_898_423_986_093_8, 0.085_662_246_189_585_172_520_1),
        (0.169_395_306_766_867_743_169, 0.180_380_786_524_069_303_785),
        (0.380_690_406_958_401_545_685, 0.233_956_967_286_345_523_695),
    ],
    &[
        (0.025_446_043_828_620_737_736_9, 0.064_742_483_084_434_846_635_3),
        (0.129_234_407_200_302_780_068, 0.139_852_695_744_638_333_951),
        (0.297_077_424_311_301_416_547, 0.190_915_025_252_559_472_475),
        (0.5, 0.208_979_591_836_734_693_878),
    ],
    &[
        (0.019_855_071_751_231_884_158_2, 0.050_614_268_145_188_129_576_3),
        (0.101_666_761_293_186_630_204, 0.111_190_517_226_687_235_272),
        (0.237_233_795_041_835_507_091, 0.156_853_322_938_943_643_669),
        (0.408_282_678_752_175_097_53, 0.181_341_891_689_180_991_483),
    ],
];

fn gauss_legendre(n: usize) -> QuadRule {
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &(x, w) in GAUSS_LEGENDRE[n - 1] {
        pts.push((x, w));
        if x != 0.5 {
            pts.push((1.0 - x, w));
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    QuadRule {
        dim: 1,
        points: pts.iter().map(|&(x, _)| [x, 0.0, 0.0]).collect(),
        weights: pts.iter().map(|&(_, w)| w).collect(),
        degree: 2 * n - 1,
    }
}

/// All distinct permutations of a barycentric tuple, in lexicographic order
/// of the permutation indices.
fn orbit_points(bary: &[f64]) -> Vec<Vec<f64>> {
    fn permute(rest: &mut Vec<f64>, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if rest.is_empty() {
            if !out.iter().any(|p| p == cur) {
                out.push(cur.clone());
            }
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            cur.push(v);
            permute(rest, cur, out);
            cur.pop();
            rest.insert(i, v);
        }
    }
    let mut out = Vec::new();
    permute(&mut bary.to_vec(), &mut Vec::new(), &mut out);
    out
}

fn expand(dim: usize, degree: usize, orbits: &[Orbit]) -> QuadRule {
    let measure = if dim == 2 { 0.5 } else { 1.0 / 6.0 };
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for orbit in orbits {
        let (bary, w): (Vec<f64>, f64) = match (*orbit, dim) {
            (Orbit::S1(w), _) => (vec![1.0 / (dim + 1) as f64; dim + 1], w),
            (Orbit::Sym1(a, w), 2) => (vec![a, a, 1.0 - 2.0 * a], w),
            (Orbit::Sym1(a, w), _) => (vec![a, a, a, 1.0 - 3.0 * a], w),
            (Orbit::S22(a, w), _) => (vec![a, a, 0.5 - a, 0.5 - a], w),
            (Orbit::Sym2(a, b, w), 2) => (vec![a, b, 1.0 - a - b], w),
            (Orbit::Sym2(a, b, w), _) => (vec![a, a, b, 1.0 - 2.0 * a - b], w),
        };
        for p in orbit_points(&bary) {
            let mut x = [0.0; 3];
            x[..dim].copy_from_slice(&p[1..]);
            points.push(x);
            weights.push(w);
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w *= measure / total;
    }
    QuadRule {
        dim,
        points,
        weights,
        degree,
    }
}

fn table(dim: usize) -> &'static [QuadRule] {
    static TABLES: OnceLock<[Vec<QuadRule>; 3]> = OnceLock::new();
    let t = TABLES.get_or_init(|| {
        [
            (1..=8).map(gauss_legendre).collect(),
            TRI_RULES.iter().map(|(d, o)| expand(2, *d, o)).collect(),
            TET_RULES.iter().map(|(d, o)| expand(3, *d, o)).collect(),
        ]
    });
    &t[dim - 1]
}

/// Cheapest tabulated rule on the reference simplex of dimension `dim` that
/// is exact for polynomials of total degree `degree`.
pub fn quadrature(dim: usize, degree: usize) -> Result<&'static QuadRule> {
    if !(1..=3).contains(&dim) {
        return Err(Error::UnsupportedQuadrature { dim, degree });
    }
    table(dim)
        .iter()
        .find(|r| r.degree >= degree.max(1))
        .ok_or(Error::UnsupportedQuadrature { dim, degree })
}

/// Like [`quadrature`] but falls back to the most accurate rule when the
/// requested degree exceeds the table.
pub fn quadrature_capped(dim: usize, degree: usize) -> &'static QuadRule {
    quadrature(dim, degree.min(MAX_DEGREE[dim])).expect("tabulated degree")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    /// Exact integral of x^a y^b z^c over the reference simplex.
    fn monomial_integral(dim: usize, e: [usize; 3]) -> f64 {
        let s: usize = e[..dim].iter().sum();
        e[..dim].iter().map(|&k| factorial(k)).product::<f64>() / factorial(s + dim)
    }

    #[test]
    fn all_rules_are_exact_up_to_their_degree() {
        for dim in 1..=3 {
            for rule in table(dim) {
                assert!(rule.weights.iter().all(|&w| w > 0.0));
                for a in 0..=rule.degree {
                    for b in 0..=rule.degree - a {
                        for c in 0..=rule.degree - a - b {
                            if (dim < 2 && b > 0) || (dim < 3 && c > 0) {
                                continue;
                            }
                            let e = [a, b, c];
                            let q = rule.integrate(|p| p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32));
                            let exact = monomial_integral(dim, e);
                            assert!(
                                (q - exact).abs() < 1e-15 * exact.max(1.0) * 10.0,
                                "dim {dim} degree {} monomial {e:?}: {q} vs {exact}",
                                rule.degree
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reference_measures() {
        for deg in 1..=6 {
            let s2: f64 = quadrature(2, deg).unwrap().weights.iter().sum();
            let s3: f64 = quadrature(3, deg).unwrap().weights.iter().sum();
            assert!((s2 - 0.5).abs() < 1e-15);
            assert!((s3 - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn x2y_on_triangle() {
        let q = quadrature(2, 3).unwrap().integrate(|p| p[0] * p[0] * p[1]);
        assert!((q - 1.0 / 60.0).abs() < 1e-16);
    }

    #[test]
    fn point_counts() {
        let counts: Vec<usize> = table(2).iter().map(|r| r.len()).collect();
        assert_eq!(counts, vec![1, 3, 6, 7, 12, 16]);
        let counts: Vec<usize> = table(3).iter().map(|r| r.len()).collect();
        assert_eq!(counts, vec![1, 4, 14, 24]);
    }

    #[test]
    fn unsupported_degrees_are_rejected() {
        assert!(quadrature(3, 7).is_err());
        assert!(quadrature(2, 9).is_err());
        assert!(quadrature(4, 1).is_err());
        assert_eq!(quadrature_capped(3, 12).degree, 6);
    }
}
