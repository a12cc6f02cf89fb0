use proptest::prelude::*;
use sensq_core::inference::average_of_limits;
use sensq_core::oracle::exact_moments_under_model;
use sensq_core::set_asymptotic::per_set_worst_moments;
use sensq_core::{
    confidence_curve, sensitivity_pvalue, BiasTransform, Engine, EngineConfig, Gamma, MonteCarlo, ScoreMatrix,
    SearchOptions, SearchStatus, SensitivityConstraint, SensitivityModelSpec, SetScores, TailMethod,
};

fn set_scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-40i32..40).prop_map(|v| f64::from(v) / 8.0), 2..=5)
}

fn study(max_sets: usize, max_size: usize) -> impl Strategy<Value = ScoreMatrix> {
    prop::collection::vec(
        prop::collection::vec(-3.0..3.0f64, 2..=max_size).prop_flat_map(|q| {
            let n = q.len();
            (Just(q), 0..n)
        }),
        2..=max_sets,
    )
    .prop_map(|sets| {
        let treated: Vec<usize> = sets.iter().map(|s| s.1).collect();
        ScoreMatrix::from_scores(sets.into_iter().map(|s| s.0).collect(), &treated).unwrap()
    })
}

fn gamma() -> impl Strategy<Value = f64> {
    1.0..30.0f64
}

fn quantile(k: usize, g: f64) -> SensitivityConstraint {
    SensitivityConstraint::Quantile {
        k,
        gamma0: Gamma::new(g).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn worst_moments_are_attained_by_a_binary_confounder(q in set_scores(), g in gamma()) {
        let m = per_set_worst_moments(&SetScores::new(q.clone(), 0), Gamma::new(g).unwrap());
        let mut order: Vec<usize> = (0..q.len()).collect();
        order.sort_by(|&a, &b| q[a].total_cmp(&q[b]));
        let mut u = vec![0.0; q.len()];
        for &i in &order[m.argmax_a.unwrap()..] {
            u[i] = 1.0;
        }
        let scores = ScoreMatrix::from_scores(vec![q], &[0]).unwrap();
        let spec = SensitivityModelSpec { gamma: vec![Gamma::new(g).unwrap()], u: vec![u] };
        let (mean, var) = exact_moments_under_model(&scores, &spec).unwrap();
        prop_assert!((mean - m.mu).abs() <= 1e-9, "{mean} vs {}", m.mu);
        prop_assert!((var - m.var).abs() <= 1e-9, "{var} vs {}", m.var);
    }

    #[test]
    fn no_confounder_beats_the_worst_mean(
        q in set_scores(),
        g in gamma(),
        u in prop::collection::vec(0.0..=1.0f64, 5),
    ) {
        let m = per_set_worst_moments(&SetScores::new(q.clone(), 0), Gamma::new(g).unwrap());
        let u = u[..q.len()].to_vec();
        let scores = ScoreMatrix::from_scores(vec![q], &[0]).unwrap();
        let spec = SensitivityModelSpec { gamma: vec![Gamma::new(g).unwrap()], u: vec![u] };
        let (mean, _) = exact_moments_under_model(&scores, &spec).unwrap();
        prop_assert!(mean <= m.mu + 1e-10);
    }

    #[test]
    fn worst_mean_grows_with_bias(q in set_scores(), a in gamma(), b in gamma()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let set = SetScores::new(q, 0);
        let m_lo = per_set_worst_moments(&set, Gamma::new(lo).unwrap());
        let m_hi = per_set_worst_moments(&set, Gamma::new(hi).unwrap());
        let m_inf = per_set_worst_moments(&set, Gamma::UNBOUNDED);
        prop_assert!(m_lo.mu <= m_hi.mu + 1e-12);
        prop_assert!(m_hi.mu <= m_inf.mu + 1e-12);
        prop_assert!(m_inf.mu <= set.max() + 1e-12);
    }

    #[test]
    fn gaussian_pvalues_are_monotone(m in study(8, 4), a in gamma(), b in gamma()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let cfg = EngineConfig::new(Engine::SetAsymptotic);
        let n = m.n_sets();
        for k in 1..=n {
            let p_lo = sensitivity_pvalue(&m, &quantile(k, lo), &cfg).unwrap();
            let p_hi = sensitivity_pvalue(&m, &quantile(k, hi), &cfg).unwrap();
            prop_assert!(p_lo <= p_hi + 1e-12);
            if k < n {
                let p_next = sensitivity_pvalue(&m, &quantile(k + 1, lo), &cfg).unwrap();
                prop_assert!(p_next <= p_lo + 1e-12);
            }
        }
    }

    #[test]
    fn curves_are_nested_and_valid(m in study(10, 4)) {
        let alpha = 0.1;
        let cfg = EngineConfig::new(Engine::SetAsymptotic);
        let curve = confidence_curve(&m, alpha, &cfg, &SearchOptions::default(), None).unwrap();
        prop_assert_eq!(curve.entries.len(), m.n_sets());
        for w in curve.entries.windows(2) {
            prop_assert!(w[0].k < w[1].k);
            prop_assert!(w[0].lower_limit <= w[1].lower_limit);
        }
        for e in &curve.entries {
            prop_assert!(e.lower_limit >= 1.0);
            if e.status == SearchStatus::Noninformative {
                prop_assert_eq!(e.lower_limit, 1.0);
            } else {
                prop_assert!(e.achieved_p <= alpha);
            }
        }
    }

    #[test]
    fn pair_tails_are_reproducible(m in study(8, 2), g in gamma(), seed in any::<u64>()) {
        let cfg = EngineConfig::new(Engine::PairExact(TailMethod::MonteCarlo(MonteCarlo::new(3000, seed))));
        let k = m.n_sets();
        let a = sensitivity_pvalue(&m, &quantile(k, g), &cfg).unwrap();
        let b = sensitivity_pvalue(&m, &quantile(k, g), &cfg).unwrap();
        prop_assert_eq!(a, b);
        let exact = sensitivity_pvalue(&m, &quantile(k, g), &EngineConfig::new(Engine::PairExact(TailMethod::ExactDp))).unwrap();
        prop_assert!((a - exact).abs() <= 5.0 * (exact * (1.0 - exact) / 3000.0).sqrt() + 1e-3);
    }

    #[test]
    fn averaged_limits_stay_within_the_range(limits in prop::collection::vec(1.0..50.0f64, 1..40)) {
        let lo = limits.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = limits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let id = average_of_limits(limits.iter().copied(), BiasTransform::Identity);
        let log = average_of_limits(limits.iter().copied(), BiasTransform::Log);
        let odds = average_of_limits(limits.iter().copied(), BiasTransform::Odds);
        prop_assert!(lo - 1e-9 <= odds && odds <= log + 1e-9 && log <= id + 1e-9 && id <= hi + 1e-9);
    }
}

#[test]
fn averaged_limit_examples() {
    let id = average_of_limits([1.0, 1.0, 2.0, 3.0, 5.0], BiasTransform::Identity);
    assert!((id - 2.4).abs() < 1e-12);
    let odds = average_of_limits([1.0, 4.0], BiasTransform::Odds);
    assert!((odds - 0.65 / 0.35).abs() < 1e-12);
    for g in BiasTransform::ALL {
        assert!((average_of_limits([3.5; 4], g) - 3.5).abs() < 1e-12);
    }
}

#[test]
fn gamma_serializes_unbounded_as_text() {
    let text = serde_json::to_string(&[Gamma::new(2.5).unwrap(), Gamma::UNBOUNDED]).unwrap();
    assert_eq!(text, r#"[2.5,"inf"]"#);
    let back: Vec<Gamma> = serde_json::from_str(&text).unwrap();
    assert_eq!(back, vec![Gamma::new(2.5).unwrap(), Gamma::UNBOUNDED]);
    assert!(serde_json::from_str::<Gamma>("0.5").is_err());
}
