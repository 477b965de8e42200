use std::f64::consts::PI;

use specpart_core::diagnostics::*;
use specpart_core::eigensolve::{lowest_eigenpairs, EigenOptions};
use specpart_core::energy::PartitionState;
use specpart_core::frame::FieldFrame;
use specpart_core::grid::{Domain, Mask, Shape};
use specpart_core::partition::{extract_cells, CellExtraction};
use specpart_core::specfun::SpectralCost;
use specpart_core::Error;

const H: f64 = 1.0 / 64.0;
const CENTER: (f64, f64) = (0.5, 0.5);

fn square() -> Domain<f64> {
    Domain::build(Shape::Rectangle { width: 1.0, height: 1.0 }, H).unwrap()
}

fn group(f: Vec<f64>, a: f64) -> WeightedGroup<f64> {
    WeightedGroup {
        fields: vec![f],
        a: vec![a],
        mu: vec![0.0],
    }
}

fn set<'a>(d: &'a Domain<f64>, groups: Vec<WeightedGroup<f64>>) -> FieldSet<'a, f64> {
    FieldSet::new(d, groups, DiagOptions::default()).unwrap()
}

/// `(x·ν)^±` across the line through the center with normal angle `theta`.
fn slab(d: &Domain<f64>, theta: f64, slopes: (f64, f64), weights: (f64, f64)) -> Vec<WeightedGroup<f64>> {
    let (c, s) = (theta.cos(), theta.sin());
    let t = |x: f64, y: f64| (x - CENTER.0) * c + (y - CENTER.1) * s;
    vec![
        group(d.grid.sample(|x, y| slopes.0 * t(x, y).max(0.0)), weights.0),
        group(d.grid.sample(|x, y| slopes.1 * (-t(x, y)).max(0.0)), weights.1),
    ]
}

/// Positive and negative parts of `Re z²` about the center.
fn quadrants(d: &Domain<f64>) -> Vec<WeightedGroup<f64>> {
    let q = |x: f64, y: f64| (x - CENTER.0).powi(2) - (y - CENTER.1).powi(2);
    vec![
        group(d.grid.sample(|x, y| q(x, y).max(0.0)), 1.0),
        group(d.grid.sample(|x, y| (-q(x, y)).max(0.0)), 1.0),
    ]
}

/// `r^{3/2}|sin(3t/2)|` restricted to sector `k` of three 120° sectors.
fn sector(d: &Domain<f64>, c: (f64, f64), k: usize, theta0: f64) -> Vec<f64> {
    d.grid.sample(|x, y| {
        let (dx, dy) = (x - c.0, y - c.1);
        let t = (dy.atan2(dx) - theta0).rem_euclid(2.0 * PI);
        if (t / (2.0 * PI / 3.0)).floor() as usize == k {
            (dx * dx + dy * dy).powf(0.75) * (1.5 * t).sin().abs()
        } else {
            0.0
        }
    })
}

fn assert_frequency(fs: &FieldSet<f64>, degree: f64) {
    let s = fs.almgren_scan(CENTER, &radii_in_steps(H, 6, 20)).unwrap();
    for (r, n) in s.radii.iter().zip(&s.n_vals) {
        assert!((n - degree).abs() <= 0.03 * degree, "r={r}: N={n}, degree {degree}");
    }
    assert!(s.h_vals.iter().all(|&h| h > 0.0));
}

#[test]
fn homogeneous_fields_have_their_degree_as_frequency() {
    let d = square();
    for theta in [0.0, 0.4] {
        assert_frequency(&set(&d, slab(&d, theta, (1.0, 1.0), (1.0, 1.0))), 1.0);
    }
    for theta0 in [0.0, 0.3] {
        let groups = (0..3).map(|k| group(sector(&d, CENTER, k, theta0), 1.0)).collect();
        assert_frequency(&set(&d, groups), 1.5);
    }
    assert_frequency(&set(&d, quadrants(&d)), 2.0);
}

#[test]
fn singular_candidates_follow_the_frequency() {
    let d = square();
    let radii = radii_in_steps(H, 6, 12);
    let quad = set(&d, quadrants(&d)).almgren_scan(CENTER, &radii).unwrap();
    assert_eq!(quad.singular_candidates().len(), radii.len());
    let lin = set(&d, slab(&d, 0.0, (1.0, 1.0), (1.0, 1.0))).almgren_scan(CENTER, &radii).unwrap();
    assert!(lin.singular_candidates().is_empty());
}

#[test]
fn linear_profile_satisfies_the_energy_derivative_identity() {
    let d = square();
    let fs = set(&d, slab(&d, 0.0, (2.0, 1.0), (1.0, 4.0)));
    let pts = fs.dedr_identity_residual(CENTER, &radii_in_steps(H, 6, 20)).unwrap();
    assert!(!pts.is_empty());
    for p in &pts {
        assert!(p.residual <= 0.05, "r={}: {}", p.r, p.residual);
    }
}

#[test]
fn pohozaev_terms_cancel_for_linear_profile() {
    let d = square();
    let fs = set(&d, slab(&d, 0.0, (1.0, 1.0), (1.0, 1.0)));
    for r in [6.0 * H, 0.2, 0.4] {
        let t = fs.pohozaev_residual(CENTER, r).unwrap();
        assert_eq!(t.boundary_mass, 0.0);
        assert_eq!(t.volume_mass, 0.0);
        assert!(t.residual <= 1e-3, "r={r}: {t:?}");
    }
}

fn disk_eigenfunction(d: &Domain<f64>) -> FieldSet<'_, f64> {
    let e = lowest_eigenpairs(d, None, 1, &EigenOptions::default()).unwrap();
    FieldSet::new(
        d,
        vec![WeightedGroup {
            fields: vec![e.vectors[0].clone()],
            a: vec![1.0],
            mu: vec![e.values[0]],
        }],
        DiagOptions::default(),
    )
    .unwrap()
}

#[test]
fn disk_eigenfunction_balances_pohozaev_and_energy_derivative() {
    let d = Domain::build(Shape::Disk { radius: 1.0 }, H).unwrap();
    let fs = disk_eigenfunction(&d);
    let t = fs.pohozaev_residual((1.0, 1.0), 0.3).unwrap();
    assert!(t.residual <= 0.05, "{t:?}");
    for c in [(1.0, 1.0), (1.3, 1.0)] {
        for p in fs.dedr_identity_residual(c, &radii_in_steps(H, 6, 16)).unwrap() {
            assert!(p.residual <= 0.10, "{c:?} r={}: {}", p.r, p.residual);
        }
    }
    // e^{Cr²}(N+1) never drops by more than 5% between radii
    let s = fs.almgren_scan((1.0, 1.0), &radii_in_steps(H, 2, 20)).unwrap();
    let mono = monotonicity(&s, fs.monotonicity_constant());
    assert!(mono.max_drop <= 0.05, "{mono:?}");
    assert!(s.h_vals.iter().all(|&h| h > 0.0));
}

fn half_rectangle_cells(h: f64) -> (Domain<f64>, Vec<specpart_core::eigensolve::EigenResult<f64>>) {
    let d = Domain::build(Shape::Rectangle { width: 2.0, height: 1.0 }, h).unwrap();
    let m = d.grid.mask();
    let halves: Vec<Mask> = [true, false]
        .iter()
        .map(|&left| {
            Mask::from_fn(m.nx(), m.ny(), |i, j| {
                let x = d.grid.position(i, j).0;
                if left { x < 1.0 - 1e-12 } else { x > 1.0 + 1e-12 }
            })
        })
        .collect();
    let costs = vec![SpectralCost::plain_sum(1); 2];
    let audit = specpart_core::partition::audit_cells(&d, &halves, &costs, &EigenOptions::default()).unwrap();
    (d, audit.cell_eigs)
}

#[test]
fn segregated_half_rectangles_are_monotone_at_the_interface() {
    let h: f64 = 1.0 / 32.0;
    let (d, eigs) = half_rectangle_cells(h);
    let fs = FieldSet::from_cells(&d, &eigs, &[SpectralCost::plain_sum(1), SpectralCost::plain_sum(1)], DiagOptions::default()).unwrap();
    let s = fs.almgren_scan((1.0, 0.5), &radii_in_steps(h, 2, 14)).unwrap();
    // N(r) → 1 as r → 0 at a regular interface point
    assert!((s.n_vals[0] - 1.0).abs() <= 0.05, "{:?}", s.n_vals);
    assert!((fs.monotonicity_constant() - eigs[0].values[0]).abs() <= 1e-9 * eigs[0].values[0]);
    assert!(monotonicity(&s, fs.monotonicity_constant()).max_drop <= 0.05);
}

fn half_cells(d: &Domain<f64>) -> CellExtraction {
    let m = d.grid.mask();
    let x = |i, j| d.grid.position(i, j).0;
    CellExtraction {
        cell_masks: vec![
            Mask::from_fn(m.nx(), m.ny(), |i, j| x(i, j) > 0.5 + 1e-12),
            Mask::from_fn(m.nx(), m.ny(), |i, j| x(i, j) < 0.5 - 1e-12),
        ],
        interface_mask: Mask::from_fn(m.nx(), m.ny(), |i, j| (x(i, j) - 0.5).abs() <= 1e-12),
    }
}

#[test]
fn matched_slopes_give_matching_sides() {
    let d = square();
    // α√a = β√b with α = 2, a = 1, β = 1, b = 4
    let fs = set(&d, slab(&d, 0.0, (2.0, 1.0), (1.0, 4.0)));
    let cells = half_cells(&d);
    match fs.probe_at(&cells, (31, 32), 2.0 * H) {
        ProbeOutcome::Regular(p) => {
            assert!(p.mismatch <= 0.02, "{p:?}");
            assert!((p.sides.0 - 4.0).abs() <= 0.02 * 4.0 && (p.sides.1 - 4.0).abs() <= 0.02 * 4.0);
            assert!(p.normal.0.abs() > 0.999);
        }
        other => panic!("{other:?}"),
    }
    let summary = fs.interface_gradient_match(&cells, 10, 2.0 * H);
    assert_eq!(summary.probes.len(), 10);
    assert_eq!(summary.singular, 0);
    assert!(summary.all_positive && summary.median_mismatch <= 0.02);
    // a mismatched pair is detected
    let off = set(&d, slab(&d, 0.0, (1.0, 1.0), (1.0, 4.0)));
    assert!(off.interface_gradient_match(&cells, 10, 2.0 * H).median_mismatch >= 0.7);
}

#[test]
fn triple_junction_probe_is_singular() {
    let h: f64 = 1.0 / 32.0;
    let d = Domain::build(Shape::Disk { radius: 1.0 }, h).unwrap();
    let groups = (0..3)
        .map(|k| {
            let f = sector(&d, (1.0, 1.0), k, 0.1);
            let n = d.grid.norm_l2(&f);
            FieldFrame::new(vec![f.into_iter().map(|v| v / n).collect()])
        })
        .collect();
    let s = PartitionState::new(groups, vec![SpectralCost::plain_sum(1); 3], 1.0, 2.0).unwrap();
    let cells = extract_cells(&d, &s, 1e-3).unwrap();
    let mu = specpart_core::energy::multipliers(&d, &s).unwrap();
    let fs = FieldSet::from_state(&d, &s, &mu, DiagOptions::default()).unwrap();
    assert_eq!(d.grid.position(31, 31), (1.0, 1.0));
    assert_eq!(fs.probe_at(&cells, (31, 31), 2.0 * h), ProbeOutcome::Singular);
}

#[test]
fn degenerate_and_out_of_domain_samples_are_errors() {
    let d = square();
    let bump = d.grid.sample(|x: f64, y: f64| (0.04 - (x - 0.2).powi(2) - (y - 0.2).powi(2)).max(0.0));
    let fs = set(&d, vec![group(bump, 1.0)]);
    assert!(matches!(
        fs.almgren_scan((0.7, 0.7), &[0.1]),
        Err(Error::DegenerateSample { .. })
    ));
    assert!(matches!(fs.almgren_scan((0.7, 0.7), &[0.5]), Err(Error::InvalidProbe(_))));
    assert!(matches!(fs.pohozaev_residual((0.05, 0.5), 0.1), Err(Error::InvalidProbe(_))));
}

#[test]
fn energy_derivative_reaches_the_domain_edge() {
    let h: f64 = 1.0 / 32.0;
    let (d, fs_cells) = half_rectangle_cells(h);
    let fs = FieldSet::from_cells(&d, &fs_cells, &[SpectralCost::plain_sum(1), SpectralCost::plain_sum(1)], DiagOptions::default()).unwrap();
    // B_{16h}(1, 1/2) touches the boundary, so the last radius differences backward
    let pts = fs.dedr_identity_residual((1.0, 0.5), &[14.0 * h, 15.0 * h, 16.0 * h]).unwrap();
    for p in &pts {
        assert!(p.residual <= 0.05, "r={}: {}", p.r, p.residual);
    }
    assert!(fs.dedr_identity_residual((1.0, 0.5), &[17.0 * h]).is_err());
}
