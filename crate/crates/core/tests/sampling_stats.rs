use tdpmd::algorithms::StepSchedule;
use tdpmd::diagnostics::{check_linear, compute_metrics};
use tdpmd::harness::random_mdp;
use tdpmd::sampling::{
    sample_error_bound, sample_q_td_pmd, sample_td_pmd, GenerativeModel, SampleConfig,
};
use tdpmd::{MirrorMap, Policy, StateValue, TabularMdp};

fn stochastic() -> TabularMdp {
    TabularMdp::from_nested(
        0.9,
        &[vec![0.2, 0.9, 0.5], vec![1.0, 0.0, 0.3]],
        &[
            vec![vec![0.3, 0.7], vec![0.9, 0.1], vec![0.5, 0.5]],
            vec![vec![0.6, 0.4], vec![0.05, 0.95], vec![0.2, 0.8]],
        ],
    )
    .unwrap()
}

#[test]
fn sampled_q_is_unbiased() {
    let m = stochastic();
    let v = StateValue::new(vec![3.0, 7.5]).unwrap();
    let exact = m.induce_q(&v).unwrap();
    let reps = 10_000;
    let n = exact.as_slice().len();
    let (mut sum, mut sq) = (vec![0.0; n], vec![0.0; n]);
    for seed in 0..reps {
        let mut gm = GenerativeModel::new(m.clone(), seed);
        let q = gm.sample_q_hat(&v, 1).unwrap();
        for (i, x) in q.as_slice().iter().enumerate() {
            sum[i] += x;
            sq[i] += x * x;
        }
    }
    for i in 0..n {
        let mean = sum[i] / reps as f64;
        let var = (sq[i] / reps as f64 - mean * mean).max(0.0);
        let se = (var / reps as f64).sqrt();
        assert!(
            (mean - exact.as_slice()[i]).abs() <= 5.0 * se + 1e-12,
            "entry {i}: {mean} vs {}",
            exact.as_slice()[i]
        );
    }
}

#[test]
fn hoeffding_sizes_bound_error_events() {
    let (iterations, delta, alpha) = (5, 0.1, 0.1);
    let m = random_mdp(31, 3, 2, 0.6).unwrap();
    let cfg = SampleConfig::derived(iterations, 3, 2, m.gamma(), delta, alpha, false).unwrap();
    let (mut bad, mut total) = (0usize, 0usize);
    for seed in 0..20 {
        let mut gm = GenerativeModel::new(m.clone(), seed);
        let traj = sample_td_pmd(
            &mut gm,
            MirrorMap::NegEntropy,
            StepSchedule::adaptive(1.0),
            &cfg,
            &StateValue::zeros(3),
            &Policy::uniform(3, 2),
        )
        .unwrap();
        for rec in &traj.records[..iterations] {
            let q_hat = rec.improvement_q.as_ref().unwrap();
            let q = m.induce_q(rec.value.as_state().unwrap()).unwrap();
            for (a, b) in q_hat.as_slice().iter().zip(q.as_slice()) {
                total += 1;
                bad += usize::from((a - b).abs() > delta);
            }
        }
    }
    let frac = bad as f64 / total as f64;
    assert!(frac <= alpha + 0.05, "{frac}");
}

#[test]
fn sampled_runs_meet_linear_bound_across_seeds() {
    let m = random_mdp(32, 3, 2, 0.6).unwrap();
    let opt = m.optimal_values(1e-10, 1e-6).unwrap();
    let (iterations, delta, alpha) = (8, 0.1, 0.1);
    let v_cfg = SampleConfig::derived(iterations, 3, 2, m.gamma(), delta, alpha, false).unwrap();
    let q_cfg = SampleConfig::derived(iterations, 3, 2, m.gamma(), delta, alpha, true).unwrap();
    let seeds = 20;
    let (mut v_ok, mut q_ok) = (0, 0);
    for seed in 0..seeds {
        let mut gm = GenerativeModel::new(m.clone(), seed);
        let tv = sample_td_pmd(
            &mut gm,
            MirrorMap::Euclidean,
            StepSchedule::adaptive(1.0),
            &v_cfg,
            &StateValue::zeros(3),
            &Policy::uniform(3, 2),
        )
        .unwrap();
        let met = compute_metrics(&m, &opt, &tv).unwrap();
        v_ok += usize::from(
            check_linear(&m, &opt, &tv, &met, Some(delta))
                .unwrap()
                .passed(),
        );

        let mut gm = GenerativeModel::new(m.clone(), seed + 1000);
        let tq = sample_q_td_pmd(
            &mut gm,
            MirrorMap::NegEntropy,
            StepSchedule::adaptive(1.0),
            &q_cfg,
            &m.induce_q(&StateValue::zeros(3)).unwrap(),
            &Policy::uniform(3, 2),
        )
        .unwrap();
        let met = compute_metrics(&m, &opt, &tq).unwrap();
        let bound = sample_error_bound(m.gamma(), 1.0, delta, iterations, true);
        let last = *met.pol_err.last().unwrap();
        q_ok += usize::from(
            last <= bound
                && check_linear(&m, &opt, &tq, &met, Some(delta))
                    .unwrap()
                    .passed(),
        );
    }
    assert!(v_ok * 100 >= 95 * seeds as usize, "{v_ok}/{seeds}");
    assert!(q_ok * 100 >= 95 * seeds as usize, "{q_ok}/{seeds}");
}
