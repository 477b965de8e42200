use specpart_core::eigensolve::{lowest_eigenpairs, EigenOptions};
use specpart_core::energy::{energy_beta, PartitionState};
use specpart_core::frame::FieldFrame;
use specpart_core::grid::{Domain, Mask, Shape};
use specpart_core::optimizer::*;
use specpart_core::partition::cell_state;
use specpart_core::specfun::SpectralCost;
use specpart_core::Error;

fn rect(w: f64, hgt: f64, h: f64) -> Domain<f64> {
    Domain::build(Shape::Rectangle { width: w, height: hgt }, h).unwrap()
}

fn short_schedule(top: f64) -> ContinuationSchedule<f64> {
    ContinuationSchedule {
        beta_ladder: geometric_ladder(1.0, top),
        ..ContinuationSchedule::default_for(1.0 / 16.0)
    }
}

#[test]
fn single_group_reaches_eigenvalue_oracles() {
    let d = rect(1.0, 1.0, 1.0 / 24.0);
    let eig = lowest_eigenpairs(&d, None, 2, &EigenOptions::default()).unwrap();
    for (k, want) in [(1, eig.values[0]), (2, eig.values[0] + eig.values[1])] {
        for beta in [1.0, 1e3] {
            let s = initial_state(&d, &[SpectralCost::plain_sum(k)], 2.0, beta, 3).unwrap();
            let (out, rec) = minimize_stage(&d, &s, &InnerParams::default()).unwrap();
            assert!(rec.converged);
            assert!((rec.energy_end - want).abs() <= 1e-6 * want, "k={k}: {} vs {want}", rec.energy_end);
            assert_eq!(rec.penalty_integral, 0.0);
            // final diagonalization leaves the H¹ Gram matrix diagonal and ascending
            let g = out.groups[0].h1_gram(&d);
            assert!(g.max_abs_offdiag() <= 1e-10 * g.norm());
            assert!(g.diag().windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

#[test]
fn uncoupled_groups_each_find_the_ground_state() {
    let d = rect(1.0, 1.0, 1.0 / 24.0);
    let lam = lowest_eigenpairs(&d, None, 1, &EigenOptions::default()).unwrap().values[0];
    let s = initial_state(&d, &[SpectralCost::plain_sum(1); 2], 2.0, 0.0, 5).unwrap();
    let (out, rec) = minimize_stage(&d, &s, &InnerParams::default()).unwrap();
    assert!(rec.converged);
    for g in &out.groups {
        let e = g.h1_gram(&d).get(0, 0);
        assert!((e - lam).abs() <= 1e-6 * lam, "{e} vs {lam}");
    }
}

#[test]
fn stages_chain_and_never_increase_energy() {
    let d = rect(1.0, 1.0, 1.0 / 16.0);
    let sched = short_schedule(64.0);
    let costs = vec![SpectralCost::plain_sum(1); 2];
    let mut state = initial_state(&d, &costs, 2.0, sched.beta_ladder[0], 1).unwrap();
    let mut prev_end: Option<PartitionState<f64>> = None;
    for &beta in &sched.beta_ladder {
        let start = state.with_beta(beta);
        let (next, rec) = minimize_stage(&d, &start, &sched.inner).unwrap();
        if let Some(p) = &prev_end {
            let reweighted = energy_beta(&d, &p.with_beta(beta)).unwrap();
            assert!((rec.energy_start - reweighted).abs() <= 1e-12 * reweighted);
        }
        assert!(rec.energy_end <= rec.energy_start * (1.0 + 1e-12));
        prev_end = Some(next.clone());
        state = next;
    }
}

#[test]
fn solve_is_deterministic_per_seed() {
    let d = rect(2.0, 1.0, 1.0 / 12.0);
    let costs = vec![SpectralCost::plain_sum(1); 2];
    let sched = short_schedule(256.0);
    let (sa, ra) = solve(&d, &costs, 2.0, &sched, 42).unwrap();
    let (sb, rb) = solve(&d, &costs, 2.0, &sched, 42).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(sa.groups, sb.groups);
    let (_, rc) = solve(&d, &costs, 2.0, &sched, 43).unwrap();
    assert_ne!(ra.stages[0].energy_start, rc.stages[0].energy_start);

    let (_, best) = solve_best_of(&d, &costs, 2.0, &sched, &restart_seeds(42, 3)).unwrap();
    let lowest = [42, 43, 44]
        .iter()
        .map(|&s| solve(&d, &costs, 2.0, &sched, s).unwrap().1.final_energy())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(best.final_energy(), lowest);
}

#[test]
fn unit_square_two_groups_near_half_square_value() {
    let h = 1.0 / 24.0;
    let d = rect(1.0, 1.0, h);
    let costs = vec![SpectralCost::plain_sum(1); 2];
    let sched = ContinuationSchedule::default_for(h);
    let (_, rep) = solve_best_of(&d, &costs, 2.0, &sched, &restart_seeds(1, 2)).unwrap();
    let target = 10.0 * std::f64::consts::PI.powi(2);
    assert!(rep.final_energy() <= 1.03 * target, "{}", rep.final_energy());
}

#[test]
fn every_stage_stays_below_a_segregated_state() {
    // c_β ≤ c_∞: any penalty-free state bounds every stage from above
    let h = 1.0 / 16.0;
    let d = rect(2.0, 1.0, h);
    let costs = vec![SpectralCost::plain_sum(1); 2];
    let (nx, ny) = (d.grid.nx(), d.grid.ny());
    let halves = [
        Mask::from_fn(nx, ny, |i, _| i < nx / 2),
        Mask::from_fn(nx, ny, |i, _| i > nx / 2),
    ];
    let hand = cell_state(&d, &halves, &costs, 1.0, 2.0, &EigenOptions::default()).unwrap();
    let sched = ContinuationSchedule::default_for(h);
    let (_, rep) = solve(&d, &costs, 2.0, &sched, 7).unwrap();
    for st in &rep.stages {
        let bound = energy_beta(&d, &hand.with_beta(st.beta)).unwrap();
        assert!(st.energy_end <= bound + 1e-9, "β={}: {} > {bound}", st.beta, st.energy_end);
    }
    assert_eq!(rep.stages.len(), sched.beta_ladder.len());
    assert!(rep.stages.iter().all(|s| s.p.is_none()));
}

#[test]
fn power_sum_runs_the_p_ladder_with_ordered_weights() {
    let d = rect(1.0, 1.0, 1.0 / 12.0);
    let costs = vec![SpectralCost::power_sum(1.0, 3).unwrap()];
    let sched = short_schedule(2.0);
    let (state, rep) = solve(&d, &costs, 2.0, &sched, 2).unwrap();
    let ps: Vec<_> = rep.stages.iter().map(|s| s.p.unwrap()).collect();
    assert_eq!(ps, vec![1.0, 1.0, 2.0, 2.0, 4.0, 4.0, 8.0, 8.0]);
    let w = &rep.multipliers.weights[0];
    assert!(w.windows(2).all(|p| p[0] <= p[1] * (1.0 + 1e-12)), "{w:?}");
    assert!(rep.energies[0].windows(2).all(|p| p[0] <= p[1]));
    assert!(rep.selection[0] >= 1 && rep.selection[0] <= 3);
    assert_eq!(state.costs[0], SpectralCost::power_sum(8.0, 3).unwrap());
}

#[test]
fn overflowing_penalty_is_reported() {
    let d = rect(1.0, 1.0, 1.0 / 8.0);
    let f = d.grid.sample(|x, y| x * (1.0 - x) * y * (1.0 - y));
    let n = d.grid.norm_l2(&f);
    let u: Vec<f64> = f.iter().map(|v| v / n).collect();
    let s = PartitionState::new(
        vec![FieldFrame::new(vec![u.clone()]), FieldFrame::new(vec![u])],
        vec![SpectralCost::plain_sum(1); 2],
        f64::MAX,
        2.0,
    )
    .unwrap();
    assert!(matches!(
        minimize_stage(&d, &s, &InnerParams::default()),
        Err(Error::NonFiniteEnergy { .. })
    ));
}

#[test]
fn invalid_schedules_and_sizes_are_rejected() {
    let inner = InnerParams::default();
    assert!(ContinuationSchedule::new(vec![2.0, 1.0], vec![1.0], inner, true).is_err());
    assert!(ContinuationSchedule::new(vec![1.0], vec![], inner, true).is_err());
    assert!(ContinuationSchedule::new(vec![1.0], vec![0.5], inner, true).is_err());
    let bad_tol = InnerParams { tol: 0.0, ..inner };
    assert!(ContinuationSchedule::new(vec![1.0], vec![1.0], bad_tol, true).is_err());
    let d = rect(0.5, 0.5, 0.125);
    assert!(matches!(
        initial_state(&d, &[SpectralCost::plain_sum(10)], 2.0, 1.0, 0),
        Err(Error::TooManyEigenpairs { .. })
    ));
    assert!(solve_best_of(&d, &[SpectralCost::plain_sum(1)], 2.0, &short_schedule(2.0), &[]).is_err());
}
