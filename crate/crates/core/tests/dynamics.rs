use faer::c64;
use qds_core::dynamics::{
    choi_matrix, drift_residual, expectations, max_trace_distance, propagate_expm, propagate_expm_batch,
    propagate_expm_with, propagate_rk, propagate_rk_sampled, propagator, uniform_grid,
};
use qds_core::fock::{self, coherent_vector, number, quadratures, QuadratureConvention};
use qds_core::gksl::{self, DensityOperator, SystemModel};
use qds_core::opalg::{self, real};
use qds_core::random;

fn shipped_models() -> Vec<SystemModel> {
    vec![
        SystemModel::displaced_oscillator(12, real(1.0), 1.0).unwrap(),
        SystemModel::displaced_oscillator(12, real(0.0), 1.0).unwrap(),
        SystemModel::two_photon_loss(12, real(1.0)).unwrap(),
    ]
}

#[test]
fn zero_time_returns_initial_state() {
    let model = SystemModel::two_photon_loss(8, real(1.0)).unwrap();
    let rho = DensityOperator::new(random::density(&mut random::rng(3), 8, 3)).unwrap();
    let traj = propagate_expm(&model, &rho, &[0.0]).unwrap();
    assert_eq!(traj.states()[0].matrix(), rho.matrix());
}

#[test]
fn excited_population_decays_exponentially() {
    let model = SystemModel::displaced_oscillator(40, real(0.0), 1.0).unwrap();
    let rho = DensityOperator::number(40, 1).unwrap();
    let traj = propagate_expm(&model, &rho, &uniform_grid(0.0, 5.0, 100).unwrap()).unwrap();
    let n = expectations(&traj, &[("N".into(), number(40))]).unwrap();
    for (t, v) in n.times.iter().zip(n.real_series("N").unwrap()) {
        assert!((v - (-t).exp()).abs() < 1e-8, "t={t}: {v}");
    }
    assert!(traj.max_trace_drift() < 1e-9);
}

#[test]
fn semigroup_composition() {
    for model in shipped_models() {
        let sup = gksl::superoperator(&model).unwrap();
        let rho = DensityOperator::new(random::density_any_rank(&mut random::rng(11), 12)).unwrap();
        let two = propagate_expm_with(&model, &sup, &rho, &[0.3, 1.0]).unwrap();
        let direct = propagate_expm_with(&model, &sup, &rho, &[1.0]).unwrap();
        let diff = two.final_state().matrix() - direct.final_state().matrix();
        assert!(opalg::trace_norm_hermitian(diff.as_ref()).unwrap() < 1e-9);
    }
}

#[test]
fn rk_matches_expm() {
    let model = SystemModel::displaced_oscillator(20, real(1.0), 1.0).unwrap();
    let rho = DensityOperator::number(20, 2).unwrap();
    let rk = propagate_rk(&model, &rho, 5.0, 1e-9).unwrap();
    let exact = propagate_expm(&model, &rho, rk.times()).unwrap();
    let gap = max_trace_distance(&rk, &exact).unwrap();
    assert!(gap < 1e-6, "gap {gap}");
}

#[test]
fn sampled_rk_lands_on_grid() {
    let model = SystemModel::two_photon_loss(16, real(1.0)).unwrap();
    let rho = DensityOperator::number(16, 4).unwrap();
    let grid = uniform_grid(0.0, 2.0, 20).unwrap();
    let rk = propagate_rk_sampled(&model, &rho, &grid, 1e-9).unwrap();
    assert_eq!(rk.times(), grid.as_slice());
    let exact = propagate_expm(&model, &rho, &grid).unwrap();
    assert!(max_trace_distance(&rk, &exact).unwrap() < 1e-6);

    // A grid not starting at zero records only the requested times.
    let late = [0.5, 1.0];
    let rk = propagate_rk_sampled(&model, &rho, &late, 1e-9).unwrap();
    assert_eq!(rk.times(), &late);
    let exact = propagate_expm(&model, &rho, &late).unwrap();
    assert!(max_trace_distance(&rk, &exact).unwrap() < 1e-6);
}

#[test]
fn rk_tracks_expm_within_ten_tolerances() {
    let model = SystemModel::displaced_oscillator(10, c64::new(0.5, 0.3), 1.0).unwrap();
    let rho = DensityOperator::number(10, 1).unwrap();
    for tol in [1e-6, 1e-8] {
        let rk = propagate_rk(&model, &rho, 3.0, tol).unwrap();
        let exact = propagate_expm(&model, &rho, rk.times()).unwrap();
        let gap = max_trace_distance(&rk, &exact).unwrap();
        assert!(gap < 10.0 * tol, "tol {tol}: gap {gap}");
    }
}

#[test]
fn rk_stationary_state_stays_put() {
    let alpha = c64::new(0.8, -0.2);
    let model = SystemModel::displaced_oscillator(20, alpha, 1.0).unwrap();
    // The invariant state of the truncated model, not the truncated coherent vector.
    let sup = gksl::superoperator(&model).unwrap();
    let set = gksl::stationary_states(&model, &sup, None).unwrap();
    let rho = set.representative.unwrap();
    let rk = propagate_rk(&model, &rho, 2.0, 1e-9).unwrap();
    for s in rk.states() {
        let diff = s.matrix() - rho.matrix();
        let drift = opalg::trace_norm_hermitian(diff.as_ref()).unwrap();
        assert!(drift < 1e-9, "drift {drift} {:?}", rk.step_info());
    }
}

#[test]
fn rk_preserves_trace() {
    let model = SystemModel::two_photon_loss(10, real(1.0)).unwrap();
    let rho = DensityOperator::number(10, 3).unwrap();
    let rk = propagate_rk(&model, &rho, 2.0, 1e-8).unwrap();
    assert!(rk.max_trace_drift() < 2.0 * 1e-10);
}

#[test]
fn positivity_and_contraction() {
    let mut rng = random::rng(random::DEFAULT_SEED);
    for model in shipped_models() {
        let sup = gksl::superoperator(&model).unwrap();
        let e = propagator(&sup, 0.7).unwrap();
        for _ in 0..50 {
            let a = random::density_any_rank(&mut rng, 12);
            let b = random::density_any_rank(&mut rng, 12);
            let before = opalg::trace_norm_hermitian((&a - &b).as_ref()).unwrap();
            let ea = sup_apply(&e, &a);
            let eb = sup_apply(&e, &b);
            let after = opalg::trace_norm_hermitian((&ea - &eb).as_ref()).unwrap();
            assert!(after <= before + 1e-7);
            assert!(opalg::min_eigenvalue(opalg::hermitian_part(ea.as_ref()).as_ref()).unwrap() >= -1e-7);
        }
    }
}

fn sup_apply(e: &opalg::CMat, m: &opalg::CMat) -> opalg::CMat {
    let d = m.nrows();
    opalg::unvectorize((e * opalg::vectorize(m.as_ref())).as_ref(), d)
}

#[test]
fn propagators_are_completely_positive() {
    for model in shipped_models() {
        let sup = gksl::superoperator(&model).unwrap();
        let e = propagator(&sup, 0.1).unwrap();
        let choi = choi_matrix(e.as_ref(), 12).unwrap();
        let min = opalg::min_eigenvalue(opalg::hermitian_part(choi.as_ref()).as_ref()).unwrap();
        assert!(min >= -1e-8, "{}: {min}", model.label());
    }
}

#[test]
fn drift_residuals() {
    let dt_grid = uniform_grid(0.0, 0.2, 200).unwrap();

    let model = SystemModel::displaced_oscillator(40, real(1.0), 1.0).unwrap();
    let rho = DensityOperator::number(40, 1).unwrap();
    let traj = propagate_expm(&model, &rho, &dt_grid).unwrap();
    let worst = drift_residual(&model, &traj, number(40).as_ref())
        .unwrap()
        .into_iter()
        .map(|(_, r)| r)
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "N drift {worst}");

    let model = SystemModel::two_photon_loss(40, real(2.0)).unwrap();
    let psi = coherent_vector(40, real(1.5), fock::DEFAULT_TAIL_TOL).unwrap();
    let rho = DensityOperator::pure(psi.as_ref()).unwrap();
    let traj = propagate_expm(&model, &rho, &dt_grid).unwrap();
    assert!(!traj.any_boundary_flag());
    let q = quadratures(40, QuadratureConvention::Unscaled).unwrap().q;
    let worst = drift_residual(&model, &traj, q.as_ref())
        .unwrap()
        .into_iter()
        .map(|(_, r)| r)
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "q drift {worst}");

    let stationary =
        DensityOperator::pure(coherent_vector(40, real(1.0), fock::DEFAULT_TAIL_TOL).unwrap().as_ref()).unwrap();
    let model = SystemModel::displaced_oscillator(40, real(1.0), 1.0).unwrap();
    let traj = propagate_expm(&model, &stationary, &uniform_grid(0.0, 0.05, 50).unwrap()).unwrap();
    let worst = drift_residual(&model, &traj, number(40).as_ref())
        .unwrap()
        .into_iter()
        .map(|(_, r)| r)
        .fold(0.0, f64::max);
    assert!(worst < 1e-9, "stationary drift {worst}");
}

#[test]
fn identity_observable_is_constant() {
    let model = SystemModel::two_photon_loss(8, real(1.0)).unwrap();
    let rho = DensityOperator::number(8, 5).unwrap();
    let traj = propagate_expm(&model, &rho, &uniform_grid(0.0, 1.0, 10).unwrap()).unwrap();
    let t = expectations(&traj, &[("1".into(), opalg::identity(8))]).unwrap();
    for v in t.real_series("1").unwrap() {
        assert!((v - 1.0).abs() < 1e-9);
    }
}

#[test]
fn batch_matches_single() {
    let model = SystemModel::two_photon_loss(10, real(1.0)).unwrap();
    let sup = gksl::superoperator(&model).unwrap();
    let mut rng = random::rng(5);
    let states: Vec<_> = (0..3)
        .map(|_| DensityOperator::new(random::density_any_rank(&mut rng, 10)).unwrap())
        .collect();
    let grid = uniform_grid(0.0, 1.0, 20).unwrap();
    let batch = propagate_expm_batch(&model, &sup, &states, &grid).unwrap();
    for (rho, traj) in states.iter().zip(&batch) {
        let single = propagate_expm_with(&model, &sup, rho, &grid).unwrap();
        assert!(max_trace_distance(traj, &single).unwrap() < 1e-12);
    }
}
