use proptest::prelude::*;

use pmodulus::domain::DomainSpec;
use pmodulus::grid::{connected_components, CellMask, Grid};
use pmodulus::path::{shortest_rho_path, FamilySpec, Stencil};
use pmodulus::solver::{compute_modulus, verify_subadditivity, SolverOptions};

fn mask_from(bits: Vec<bool>, nx: usize, ny: usize) -> CellMask {
    let g = Grid::new(vec![0.0, 0.0], 1.0 / nx as f64, vec![nx, ny]).unwrap();
    CellMask::from_bits(g, bits).unwrap()
}

fn left_right(nx: usize, ny: usize) -> (DomainSpec, DomainSpec, DomainSpec) {
    let w = 1.0;
    let hgt = ny as f64 / nx as f64;
    let x0 = 0.5 / nx as f64;
    let x1 = w - x0;
    (
        DomainSpec::polyline(vec![[x0, 0.0].into(), [x0, hgt].into()], 0.0),
        DomainSpec::polyline(vec![[x1, 0.0].into(), [x1, hgt].into()], 0.0),
        DomainSpec::cube([0.0, 0.0], [w, hgt]),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn components_cover_mask_exactly(bits in proptest::collection::vec(any::<bool>(), 9 * 7)) {
        let mask = mask_from(bits, 9, 7);
        let comps = connected_components(&mask);
        let total: usize = (0..comps.count()).map(|l| comps.size(l).unwrap()).sum();
        prop_assert_eq!(total, mask.count());
        for c in 0..mask.grid().len() {
            prop_assert_eq!(comps.label(c).is_some(), mask.get(c));
        }
    }

    #[test]
    fn converged_density_is_admissible(bits in proptest::collection::vec(prop::bool::weighted(0.8), 8 * 6), p in 1.3f64..4.0) {
        let mask = mask_from(bits, 8, 6);
        let (from, to, domain) = left_right(8, 6);
        let fam = FamilySpec::join(from, to, domain);
        let opts = SolverOptions::with_p(p);
        let r = compute_modulus(&fam, &mask, &opts).unwrap();
        prop_assert!(r.converged);
        prop_assert!(r.lower_bound <= r.value * (1.0 + 1e-9));
        prop_assert!((r.density.energy(p) - r.value).abs() <= 1e-9 * r.value.max(1.0));
        if r.value > 0.0 {
            let sp = shortest_rho_path(&r.density, &fam, &mask, Stencil::Face).unwrap();
            prop_assert!(sp.length >= 1.0 - opts.admissibility_tol);
        }
    }

    #[test]
    fn removing_cells_never_raises_modulus(bits in proptest::collection::vec(prop::bool::weighted(0.85), 8 * 6), cut in 0usize..48) {
        let mask = mask_from(bits, 8, 6);
        let mut smaller = mask.clone();
        smaller.set(cut, false);
        let (from, to, domain) = left_right(8, 6);
        let fam = FamilySpec::join(from, to, domain);
        let opts = SolverOptions::with_p(2.0);
        let big = compute_modulus(&fam, &mask, &opts).unwrap();
        let small = compute_modulus(&fam, &smaller, &opts).unwrap();
        // both values are within gap_tol of the true grid moduli
        prop_assert!(small.value <= big.value * (1.0 + 2.0 * opts.gap_tol) + 1e-12);
    }

    #[test]
    fn split_sources_are_subadditive(split in 1usize..5, p in 1.5f64..3.0) {
        let mask = CellMask::full(Grid::new(vec![0.0, 0.0], 1.0 / 8.0, vec![8, 6]).unwrap());
        let (_, to, domain) = left_right(8, 6);
        let y = split as f64 / 8.0;
        let x0 = 1.0 / 16.0;
        let a = DomainSpec::polyline(vec![[x0, 0.0].into(), [x0, y - 0.01].into()], 0.0);
        let b = DomainSpec::polyline(vec![[x0, y + 0.01].into(), [x0, 0.75].into()], 0.0);
        let parts = [FamilySpec::join(a.clone(), to.clone(), domain.clone()), FamilySpec::join(b.clone(), to.clone(), domain.clone())];
        let union = FamilySpec::join(DomainSpec::union(vec![a, b]), to, domain);
        let rep = verify_subadditivity(&parts, &union, &mask, &SolverOptions::with_p(p)).unwrap();
        prop_assert!(rep.holds && rep.converged);
        for v in &rep.parts {
            prop_assert!(*v <= rep.union_value * (1.0 + 2e-4));
        }
    }
}
