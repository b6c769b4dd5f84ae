use darcy_stokes::assembly::{assemble, Discretization, Loads};
use darcy_stokes::geom::{dot, Point};
use darcy_stokes::mesh::{build_pair, BoxDomain, FacetLabel, Region, NO_CELL};
use darcy_stokes::refelem::{facet_quadrature, quadrature, AffineMap, MAX_DEGREE};
use darcy_stokes::solver::solve;
use darcy_stokes::spaces::ElementPair;
use proptest::prelude::*;

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn level(dim: usize) -> impl Strategy<Value = (usize, usize)> {
    let n = if dim == 2 {
        prop_oneof![Just(2usize), Just(4), Just(6), Just(8), Just(12)].boxed()
    } else {
        prop_oneof![Just(2usize), Just(4)].boxed()
    };
    (n.clone(), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn quadrature_integrates_monomials(dim in 1usize..=3, a in 0u32..16, b in 0u32..16, c in 0u32..16) {
        let (b, c) = (if dim > 1 { b } else { 0 }, if dim > 2 { c } else { 0 });
        let deg = (a + b + c) as usize;
        prop_assume!(deg <= MAX_DEGREE[dim]);
        let rule = quadrature(dim, deg).unwrap();
        let q: f64 = rule.points.iter().zip(&rule.weights)
            .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32))
            .sum();
        let exact = factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + dim as u32);
        prop_assert!((q - exact).abs() <= 1e-12 * exact, "{q} vs {exact}");
    }

    #[test]
    fn mesh_pair_invariants_2d((n_s, n_d) in level(2)) {
        check_mesh_pair(2, n_s, n_d)?;
    }

    #[test]
    fn mesh_pair_invariants_3d((n_s, n_d) in level(3)) {
        check_mesh_pair(3, n_s, n_d)?;
    }

    #[test]
    fn projection_reproduces_trace_polynomials(
        (n_s, n_d) in level(2),
        rt in any::<bool>(),
        c0 in -2.0f64..2.0,
        c1 in -2.0f64..2.0,
    ) {
        let pair = if rt { ElementPair::MiniRt0 } else { ElementPair::MiniBdm1 };
        let d = Discretization::new(build_pair(2, BoxDomain::unit(), n_s, n_d, 0.5).unwrap(), pair, false).unwrap();
        let darcy = &d.pair.darcy;
        // constants for the P0 trace, affine functions for the P1 trace
        let slope = if rt { 0.0 } else { c1 };
        let xi = |x: &Point| c0 + slope * x[0];
        let coeffs = d.coupling.project_function(darcy, &xi, 4);
        for (s, &f) in d.coupling.trace.facets.iter().enumerate() {
            let (qp, _) = facet_quadrature(&darcy.facet_points(f), 3);
            for x in &qp {
                let v = d.coupling.trace.value(darcy, &coeffs, s, x);
                prop_assert!((v - xi(x)).abs() <= 1e-12, "{v} vs {}", xi(x));
            }
        }
    }

    #[test]
    fn solution_is_linear_in_the_load(scale in 0.1f64..10.0, (n_s, n_d) in level(2)) {
        let d = Discretization::new(build_pair(2, BoxDomain::unit(), n_s, n_d, 0.5).unwrap(), ElementPair::MiniRt0, false).unwrap();
        let f = |s: f64| Loads {
            f_s: Some(std::sync::Arc::new(move |x: &Point| [s * x[1].sin(), s * x[0] * x[0], 0.0])),
            ..Default::default()
        };
        let coef = Default::default();
        let one = solve(&assemble(&d, &coef, &f(1.0)).unwrap()).unwrap();
        let scaled = solve(&assemble(&d, &coef, &f(scale)).unwrap()).unwrap();
        let size = one.full.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in one.full.iter().zip(&scaled.full) {
            prop_assert!((scale * a - b).abs() <= 1e-9 * scale * size);
        }
    }
}

fn check_mesh_pair(dim: usize, n_s: usize, n_d: usize) -> Result<(), TestCaseError> {
    let pair = build_pair(dim, BoxDomain::unit(), n_s, n_d, 0.5).unwrap();
    let mut areas = [0.0; 2];
    for (k, (mesh, side)) in [(&pair.stokes, Region::Stokes), (&pair.darcy, Region::Darcy)]
        .into_iter()
        .enumerate()
    {
        for c in 0..mesh.n_cells() {
            prop_assert!(AffineMap::new(&mesh.cell_points(c), dim).det > 0.0);
        }
        for f in 0..mesh.n_facets() {
            let adjacent = mesh.facet_cells[f].iter().filter(|&&c| c != NO_CELL).count();
            let want = if mesh.facet_label[f] == FacetLabel::Interior {
                2
            } else {
                1
            };
            prop_assert_eq!(adjacent, want);
        }
        let mut down: Point = [0.0; 3];
        down[dim - 1] = -1.0;
        for f in mesh.interface_facets(side) {
            prop_assert!((dot(&mesh.facet_normal[f], &down) - 1.0).abs() <= 1e-14);
            let (_, w) = facet_quadrature(&mesh.facet_points(f), 0);
            areas[k] += w.iter().sum::<f64>();
        }
    }
    prop_assert!(
        (areas[0] - 1.0).abs() <= 1e-13 && (areas[1] - 1.0).abs() <= 1e-13,
        "{areas:?}"
    );
    Ok(())
}
