mod common;

use common::sup;
use proptest::prelude::*;
use tdpmd::algorithms::{q_td_pmd, td_pmd, EvalScheme, StepSchedule};
use tdpmd::diagnostics::{
    check_contraction, check_error_decomposition, check_monotone, check_npg_policy_convergence,
    check_shift, check_sublinear, check_three_point, compute_metrics,
};
use tdpmd::harness::random_mdp;
use tdpmd::mirror::{pmd_prox, project_simplex, three_point_residual};
use tdpmd::sampling::{sample_td_pmd, GenerativeModel, SampleConfig};
use tdpmd::{ActionValue, MirrorMap, Policy, StateValue, TabularMdp};

fn mdp_strategy(max_s: usize, max_a: usize) -> impl Strategy<Value = TabularMdp> {
    (any::<u64>(), 1..=max_s, 1..=max_a, 0.0..0.97f64)
        .prop_map(|(seed, s, a, g)| random_mdp(seed, s, a, g).unwrap())
}

fn simplex_row(a: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..1.0f64, a).prop_map(|w| {
        let z: f64 = w.iter().sum();
        w.iter().map(|x| x / z).collect()
    })
}

fn policy_for(s: usize, a: usize) -> impl Strategy<Value = Policy> {
    prop::collection::vec(simplex_row(a), s).prop_map(|rows| Policy::from_rows(&rows).unwrap())
}

/// MDP with a random policy and two values.
fn instance() -> impl Strategy<Value = (TabularMdp, Policy, StateValue, StateValue)> {
    mdp_strategy(6, 4).prop_flat_map(|m| {
        let (s, a) = (m.num_states(), m.num_actions());
        (
            Just(m),
            policy_for(s, a),
            prop::collection::vec(-10.0..10.0f64, s),
            prop::collection::vec(-10.0..10.0f64, s),
        )
            .prop_map(|(m, p, v, w)| {
                (
                    m,
                    p,
                    StateValue::new(v).unwrap(),
                    StateValue::new(w).unwrap(),
                )
            })
    })
}

fn kind_map() -> impl Strategy<Value = MirrorMap> {
    prop_oneof![Just(MirrorMap::Euclidean), Just(MirrorMap::NegEntropy)]
}

proptest! {
    #[test]
    fn backups_are_monotone((m, pi, v, w) in instance()) {
        let hi = StateValue::new(v.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a.max(*b)).collect()).unwrap();
        let (lo_pi, hi_pi) = (m.bellman_pi(&pi, &v).unwrap(), m.bellman_pi(&pi, &hi).unwrap());
        let (lo_opt, hi_opt) = (m.bellman_opt(&v).unwrap(), m.bellman_opt(&hi).unwrap());
        for s in 0..v.len() {
            prop_assert!(lo_pi[s] <= hi_pi[s] + 1e-12);
            prop_assert!(lo_opt[s] <= hi_opt[s] + 1e-12);
        }
    }

    #[test]
    fn backups_contract((m, pi, v, w) in instance()) {
        let d = v.sup_dist(&w);
        let g = m.gamma();
        prop_assert!(m.bellman_pi(&pi, &v).unwrap().sup_dist(&m.bellman_pi(&pi, &w).unwrap()) <= g * d + 1e-12);
        prop_assert!(m.bellman_opt(&v).unwrap().sup_dist(&m.bellman_opt(&w).unwrap()) <= g * d + 1e-12);
    }

    #[test]
    fn constant_shift_passes_through((m, pi, v, _w) in instance(), c in -5.0..5.0f64) {
        let shifted = m.bellman_pi(&pi, &v.shifted(c)).unwrap();
        let expected = m.bellman_pi(&pi, &v).unwrap().shifted(m.gamma() * c);
        prop_assert!(shifted.sup_dist(&expected) <= 1e-12);
    }

    #[test]
    fn optimal_backup_dominates((m, pi, v, _w) in instance()) {
        let opt = m.bellman_opt(&v).unwrap();
        let pol = m.bellman_pi(&pi, &v).unwrap();
        for s in 0..v.len() {
            prop_assert!(opt[s] >= pol[s] - 1e-12);
        }
    }

    #[test]
    fn exact_value_is_a_fixed_point((m, pi, _v, _w) in instance()) {
        let v = m.policy_value_exact(&pi).unwrap();
        prop_assert!(m.bellman_pi(&pi, &v).unwrap().sup_dist(&v) <= 1e-10);
    }

    #[test]
    fn performance_difference_identity((m, pi, v, _w) in instance(), mu_w in prop::collection::vec(0.01..1.0f64, 6)) {
        let n = m.num_states();
        let z: f64 = mu_w[..n].iter().sum();
        let mu: Vec<f64> = mu_w[..n].iter().map(|x| x / z).collect();
        let v_pi = m.policy_value_exact(&pi).unwrap();
        let d = m.visitation_measure(&pi, &mu).unwrap();
        let adv: Vec<f64> = m.bellman_pi(&pi, &v).unwrap().as_slice().iter().zip(v.as_slice()).map(|(t, x)| t - x).collect();
        let lhs = v_pi.dot(&mu) - v.dot(&mu);
        let rhs = adv.iter().zip(&d).map(|(a, w)| a * w).sum::<f64>() / (1.0 - m.gamma());
        prop_assert!((lhs - rhs).abs() <= 1e-8, "{lhs} vs {rhs}");
    }

    #[test]
    fn action_value_difference_identity((m, pi, v, _w) in instance(), rho_w in prop::collection::vec(0.01..1.0f64, 24)) {
        let n = m.num_states() * m.num_actions();
        let z: f64 = rho_w[..n].iter().sum();
        let rho: Vec<f64> = rho_w[..n].iter().map(|x| x / z).collect();
        let q = m.induce_q(&v).unwrap();
        let q_pi = m.policy_q_exact(&pi).unwrap();
        let nu = m.visitation_measure_sa(&pi, &rho).unwrap();
        let fq = m.bellman_q(&pi, &q).unwrap();
        let lhs: f64 = q_pi.as_slice().iter().zip(q.as_slice()).zip(&rho).map(|((a, b), r)| (a - b) * r).sum();
        let rhs: f64 = fq.as_slice().iter().zip(q.as_slice()).zip(&nu).map(|((f, x), w)| (f - x) * w).sum::<f64>() / (1.0 - m.gamma());
        prop_assert!((lhs - rhs).abs() <= 1e-8, "{lhs} vs {rhs}");
    }

    #[test]
    fn projection_is_idempotent(x in prop::collection::vec(-50.0..50.0f64, 1..8)) {
        let p = project_simplex(&x).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        let again = project_simplex(&p).unwrap();
        prop_assert!(sup(&p, &again) <= 1e-12);
    }

    #[test]
    fn vanishing_step_barely_moves(p in simplex_row(5), q in prop::collection::vec(-20.0..20.0f64, 5), map in kind_map()) {
        let out = pmd_prox(map, &q, &p, 1e-8).unwrap();
        prop_assert!(sup(&out, &p) <= 1e-6);
    }

    #[test]
    fn softmax_keeps_full_support(p in simplex_row(4), q in prop::collection::vec(-20.0..20.0f64, 4), eta in 1e-3..1e6f64) {
        let out = pmd_prox(MirrorMap::NegEntropy, &q, &p, eta).unwrap();
        prop_assert!(out.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn three_point_residual_nonnegative(
        p in simplex_row(4),
        r in simplex_row(4),
        q in prop::collection::vec(-10.0..10.0f64, 4),
        eta in 1e-3..100.0f64,
        map in kind_map(),
    ) {
        let new = pmd_prox(map, &q, &p, eta).unwrap();
        let res = three_point_residual(map, &q, &p, &new, &r, eta).unwrap();
        prop_assert!(res >= -1e-9 * (eta * 10.0).max(1.0), "{res}");
    }
}

fn run_cfg() -> ProptestConfig {
    ProptestConfig::with_cases(24)
}

proptest! {
    #![proptest_config(run_cfg())]

    #[test]
    fn good_init_runs_pass_trajectory_checks(m in mdp_strategy(6, 4), eta in 0.05..5.0f64, map in kind_map()) {
        let (s, a) = (m.num_states(), m.num_actions());
        let opt = m.optimal_values(1e-10, 1e-6).unwrap();
        let traj = td_pmd(&m, map, StepSchedule::Constant { eta }, EvalScheme::OneStep, &StateValue::zeros(s), &Policy::uniform(s, a), 40).unwrap();
        let met = compute_metrics(&m, &opt, &traj).unwrap();
        let reports = [
            check_monotone(&m, &opt, &traj).unwrap(),
            check_sublinear(&m, &opt, &traj, &met).unwrap(),
            check_three_point(&opt, &traj).unwrap(),
            check_error_decomposition(&m, &opt, &traj, &met),
            check_npg_policy_convergence(&opt, &traj, &met, None),
        ];
        for r in reports {
            prop_assert!(!r.failed(), "{r:?}");
        }
    }

    #[test]
    fn shifted_runs_agree(m in mdp_strategy(6, 4), v in prop::collection::vec(0.0..30.0f64, 6), map in kind_map()) {
        let (s, a) = (m.num_states(), m.num_actions());
        let v0 = StateValue::new(v[..s].to_vec()).unwrap();
        let r = check_shift(&m, map, StepSchedule::Constant { eta: 0.5 }, EvalScheme::OneStep, &v0, &Policy::uniform(s, a), 30).unwrap();
        prop_assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn adaptive_runs_contract(m in mdp_strategy(6, 4), map in kind_map()) {
        prop_assume!(m.gamma() > 0.05);
        let (s, a) = (m.num_states(), m.num_actions());
        let opt = m.optimal_values(1e-10, 1e-6).unwrap();
        let traj = td_pmd(&m, map, StepSchedule::adaptive(1.0), EvalScheme::OneStep, &StateValue::zeros(s), &Policy::uniform(s, a), 30).unwrap();
        let met = compute_metrics(&m, &opt, &traj).unwrap();
        let r = check_contraction(&m, &opt, &traj, &met).unwrap();
        prop_assert!(r.passed(), "{r:?}");
        let r = check_three_point(&opt, &traj).unwrap();
        prop_assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn q_and_v_runs_coincide(m in mdp_strategy(5, 4), v in prop::collection::vec(-5.0..5.0f64, 5), map in kind_map()) {
        let (s, a) = (m.num_states(), m.num_actions());
        let v0 = StateValue::new(v[..s].to_vec()).unwrap();
        let pi0 = Policy::uniform(s, a);
        let sched = StepSchedule::Constant { eta: 0.7 };
        let tv = td_pmd(&m, map, sched, EvalScheme::OneStep, &v0, &pi0, 20).unwrap();
        let tq = q_td_pmd(&m, map, sched, &m.induce_q(&v0).unwrap(), &pi0, 20).unwrap();
        for (x, y) in tv.records.iter().zip(&tq.records) {
            prop_assert!(x.policy.max_abs_diff(&y.policy) <= 1e-10);
            let induced = m.induce_q(x.value.as_state().unwrap()).unwrap();
            prop_assert!(induced.sup_dist(y.value.as_action().unwrap()) <= 1e-10);
        }
    }

    #[test]
    fn sampled_values_stay_bounded(m in mdp_strategy(4, 3), seed in any::<u64>(), map in kind_map()) {
        let (s, a) = (m.num_states(), m.num_actions());
        let cfg = SampleConfig { iterations: 8, delta: 0.1, alpha: 0.1, m_q: 20, m_v: 20 };
        let mut gm = GenerativeModel::new(m.clone(), seed);
        let traj = sample_td_pmd(&mut gm, map, StepSchedule::Constant { eta: 1.0 }, &cfg, &StateValue::zeros(s), &Policy::uniform(s, a)).unwrap();
        let bound = 1.0 / (1.0 - m.gamma()) + 1e-12;
        for rec in &traj.records {
            prop_assert!(rec.value.as_state().unwrap().sup_norm() <= bound);
        }
        let mut again = GenerativeModel::new(m.clone(), seed);
        let replay = sample_td_pmd(&mut again, map, StepSchedule::Constant { eta: 1.0 }, &cfg, &StateValue::zeros(s), &Policy::uniform(s, a)).unwrap();
        for (x, y) in traj.records.iter().zip(&replay.records) {
            prop_assert_eq!(&x.policy, &y.policy);
            prop_assert_eq!(&x.value, &y.value);
        }
    }

    #[test]
    fn checks_are_reproducible(m in mdp_strategy(5, 3)) {
        let (s, a) = (m.num_states(), m.num_actions());
        let opt = m.optimal_values(1e-10, 1e-6).unwrap();
        let traj = td_pmd(&m, MirrorMap::Euclidean, StepSchedule::Constant { eta: 1.0 }, EvalScheme::OneStep, &StateValue::zeros(s), &Policy::uniform(s, a), 20).unwrap();
        let met = compute_metrics(&m, &opt, &traj).unwrap();
        let first = check_sublinear(&m, &opt, &traj, &met).unwrap();
        let second = check_sublinear(&m, &opt, &traj, &compute_metrics(&m, &opt, &traj).unwrap()).unwrap();
        prop_assert_eq!(first, second);
    }
}

#[test]
fn q_runs_satisfy_monotone_chain() {
    for seed in 0..10 {
        let m = random_mdp(seed, 5, 3, 0.9).unwrap();
        let opt = m.optimal_values(1e-10, 1e-6).unwrap();
        let traj = q_td_pmd(
            &m,
            MirrorMap::NegEntropy,
            StepSchedule::Constant { eta: 0.5 },
            &ActionValue::zeros(5, 3),
            &Policy::uniform(5, 3),
            40,
        )
        .unwrap();
        let r = check_monotone(&m, &opt, &traj).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
