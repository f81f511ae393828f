use proptest::collection::vec;
use proptest::prelude::*;

use privaudit::extraction::{
    effective_step_prob, effective_step_prob_bounded, matches, n_for_target, np_probability, pz, ExtendedCount, MatchPredicate,
    SamplingScheme,
};
use privaudit::guess::{epsilon_lower_bound, sweep, GuessAuditConfig};
use privaudit::lira::{lira_offline_score, lira_online_score, LiraConfig, LiraMode, VarianceMode};
use privaudit::observation::{
    read_score_records, write_score_records, CompletionRecord, GuessStrategy, LogitPanel, Metadata, ScoreFormat, ScoreRecord,
    ScoreRecordSet, TokenStep, TokenTrace,
};
use privaudit::rmia::{pairwise_ratio, rmia_score_with_alpha, RmiaConfig};
use privaudit::roc::{self, epsilon_at_threshold, RatePoint};
use privaudit::GuessSummary;

fn score_set() -> impl Strategy<Value = ScoreRecordSet> {
    vec((-50i32..50, any::<bool>()), 2..120).prop_map(|rows| {
        let mut records: Vec<ScoreRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, &(s, m))| ScoreRecord::new(format!("id{i}"), f64::from(s) / 8.0, m))
            .collect();
        records[0].membership = true;
        records[1].membership = false;
        ScoreRecordSet::new(records, Metadata::new()).unwrap()
    })
}

fn relabel(set: &ScoreRecordSet, f: impl Fn(&ScoreRecord) -> ScoreRecord) -> ScoreRecordSet {
    ScoreRecordSet::new(set.records().iter().map(f).collect(), Metadata::new()).unwrap()
}

fn brute_auc(set: &ScoreRecordSet) -> f64 {
    let (mut w, mut n) = (0.0, 0.0);
    for a in set.records().iter().filter(|r| r.membership) {
        for b in set.records().iter().filter(|r| !r.membership) {
            n += 1.0;
            w += if a.score > b.score { 1.0 } else if a.score == b.score { 0.5 } else { 0.0 };
        }
    }
    w / n
}

/// Panel with `k` models whose target column is 0; every sample has at
/// least two in- and two out-shadows.
fn panel_strategy(n: usize, k: usize) -> impl Strategy<Value = LogitPanel> {
    (vec(-6.0f64..6.0, n * k), vec(any::<bool>(), n)).prop_map(move |(logits, truth)| {
        let mut mask = vec![false; n * k];
        for i in 0..n {
            mask[i * k] = truth[i];
            for j in 1..k {
                mask[i * k + j] = (i + j) % 2 == 0;
            }
        }
        LogitPanel::new(n, k, logits, mask, 0, truth, Metadata::new()).unwrap()
    })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_files_round_trip(set in score_set(), csv in any::<bool>()) {
        let fmt = if csv { ScoreFormat::Csv } else { ScoreFormat::Jsonl };
        let mut buf = Vec::new();
        write_score_records(&mut buf, &set, fmt).unwrap();
        let back = read_score_records(buf.as_slice(), fmt).unwrap();
        prop_assert_eq!(back.records(), set.records());
    }

    #[test]
    fn auc_matches_pair_counting(set in score_set()) {
        prop_assert!((roc::auc(&set).unwrap() - brute_auc(&set)).abs() <= 1e-12);
    }

    #[test]
    fn auc_and_rates_survive_monotone_transforms(set in score_set(), tau in -7.0f64..7.0) {
        let g = |x: f64| x.powi(3) + 2.0 * x + 1.0;
        let t = relabel(&set, |r| ScoreRecord::new(r.sample_id.clone(), g(r.score), r.membership));
        prop_assert_eq!(roc::auc(&set).unwrap(), roc::auc(&t).unwrap());
        let a = roc::rates_at_threshold(&set, tau).unwrap();
        let b = roc::rates_at_threshold(&t, g(tau)).unwrap();
        prop_assert_eq!((a.tpr, a.fpr, a.tnr, a.fnr), (b.tpr, b.fpr, b.tnr, b.fnr));
        let ca: Vec<_> = roc::roc_curve(&set).unwrap().iter().map(|p| (p.tpr, p.fpr)).collect();
        let cb: Vec<_> = roc::roc_curve(&t).unwrap().iter().map(|p| (p.tpr, p.fpr)).collect();
        prop_assert_eq!(ca, cb);
    }

    #[test]
    fn label_swap_mirrors_auc(set in score_set()) {
        let swapped = relabel(&set, |r| ScoreRecord::new(r.sample_id.clone(), r.score, !r.membership));
        prop_assert!((roc::auc(&swapped).unwrap() - (1.0 - roc::auc(&set).unwrap())).abs() <= 1e-12);
    }

    #[test]
    fn equal_rates_give_zero_first_branch(tpr in 0.0f64..=1.0, tnr in 0.0f64..=1.0) {
        let e = epsilon_at_threshold(&RatePoint { threshold: 0.0, tpr, fpr: tpr, tnr, fnr: 1.0 - tnr }, 0.0).unwrap();
        if tpr > 0.0 {
            prop_assert!(e.epsilon >= 0.0);
        }
        let both = epsilon_at_threshold(&RatePoint { threshold: 0.0, tpr, fpr: tpr, tnr, fnr: tnr }, 0.0).unwrap();
        if tpr > 0.0 && tnr > 0.0 {
            prop_assert_eq!(both.epsilon, 0.0);
        }
    }

    #[test]
    fn lira_online_ignores_shadow_order(panel in panel_strategy(6, 7), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = panel.n_samples();
        let k = panel.n_models();
        let mut shadows: Vec<usize> = (1..k).collect();
        shadows.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let cols: Vec<usize> = std::iter::once(0).chain(shadows).collect();
        let logits = (0..n).flat_map(|i| cols.iter().map(move |&j| (i, j))).map(|(i, j)| panel.logit(i, j)).collect();
        let mask = (0..n).flat_map(|i| cols.iter().map(move |&j| (i, j))).map(|(i, j)| panel.is_member(i, j)).collect();
        let p2 = LogitPanel::new(n, k, logits, mask, 0, panel.true_membership().to_vec(), Metadata::new()).unwrap();
        for vm in [VarianceMode::PerSample, VarianceMode::Global] {
            let cfg = LiraConfig { variance_mode: vm, ..LiraConfig::default() };
            for i in 0..n {
                let a = lira_online_score(&panel, i, &cfg).unwrap();
                let b = lira_online_score(&p2, i, &cfg).unwrap();
                prop_assert!(close(a, b, 1e-9), "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn lira_is_location_invariant(panel in panel_strategy(5, 7), shift in -20.0f64..20.0, row in 0usize..5) {
        let n = panel.n_samples();
        let k = panel.n_models();
        let logits = (0..n * k).map(|c| panel.logit(c / k, c % k) + if c / k == row { shift } else { 0.0 }).collect();
        let mask = (0..n * k).map(|c| panel.is_member(c / k, c % k)).collect();
        let p2 = LogitPanel::new(n, k, logits, mask, 0, panel.true_membership().to_vec(), Metadata::new()).unwrap();
        for vm in [VarianceMode::PerSample, VarianceMode::Global] {
            for mode in [LiraMode::Online, LiraMode::Offline] {
                let cfg = LiraConfig { mode, variance_mode: vm, ..LiraConfig::default() };
                let f = if mode == LiraMode::Online { lira_online_score } else { lira_offline_score };
                let a = f(&panel, row, &cfg).unwrap();
                let b = f(&p2, row, &cfg).unwrap();
                prop_assert!(close(a, b, 1e-7), "{:?} {:?}: {} vs {}", mode, vm, a, b);
            }
        }
    }

    #[test]
    fn lira_offline_increases_with_target_logit(panel in panel_strategy(3, 7), bump in 0.01f64..5.0) {
        let n = panel.n_samples();
        let k = panel.n_models();
        let logits = (0..n * k).map(|c| panel.logit(c / k, c % k) + if c == 0 { bump } else { 0.0 }).collect();
        let mask = (0..n * k).map(|c| panel.is_member(c / k, c % k)).collect();
        let p2 = LogitPanel::new(n, k, logits, mask, 0, panel.true_membership().to_vec(), Metadata::new()).unwrap();
        let cfg = LiraConfig { mode: LiraMode::Offline, variance_mode: VarianceMode::PerSample, ..LiraConfig::default() };
        prop_assert!(lira_offline_score(&p2, 0, &cfg).unwrap() > lira_offline_score(&panel, 0, &cfg).unwrap());
    }

    #[test]
    fn rmia_ratio_is_antisymmetric(panel in panel_strategy(8, 5), alpha in 0.0f64..=1.0) {
        for x in 0..8 {
            for z in 0..8 {
                let l = pairwise_ratio(&panel, x, z, alpha, 1e-12).unwrap() * pairwise_ratio(&panel, z, x, alpha, 1e-12).unwrap();
                prop_assert!((l - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn rmia_scores_bounded_monotone_and_order_free(panel in panel_strategy(12, 5), g1 in 0.1f64..4.0, g2 in 0.1f64..4.0) {
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let pop: Vec<usize> = (4..12).collect();
        let mut rev = pop.clone();
        rev.reverse();
        for x in 0..4 {
            let mut cfg = RmiaConfig::new(pop.clone());
            cfg.gamma = lo;
            let s_lo = rmia_score_with_alpha(&panel, x, 0.3, &cfg).unwrap();
            cfg.gamma = hi;
            let s_hi = rmia_score_with_alpha(&panel, x, 0.3, &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&s_lo) && (0.0..=1.0).contains(&s_hi));
            prop_assert!(s_hi <= s_lo);
            let mut rcfg = RmiaConfig::new(rev.clone());
            rcfg.gamma = hi;
            prop_assert_eq!(rmia_score_with_alpha(&panel, x, 0.3, &rcfg).unwrap(), s_hi);
        }
    }

    #[test]
    fn guess_bound_monotonicity(c_hat in 1usize..400, frac in 0.0f64..=1.0, sig in 0.01f64..0.5, delta in 0.0f64..1e-4) {
        let m = 1000;
        let c = ((c_hat as f64) * frac).round() as usize;
        let cfg = GuessAuditConfig { delta, significance: sig, ..Default::default() };
        let at = |c: usize, cfg: &GuessAuditConfig| {
            epsilon_lower_bound(&GuessSummary::new(m, c_hat, c, GuessStrategy::OneSided).unwrap(), cfg)
        };
        let base = at(c, &cfg);
        if c < c_hat {
            prop_assert!(at(c + 1, &cfg) >= base);
        }
        let looser = GuessAuditConfig { significance: (sig * 1.5).min(0.5), ..cfg.clone() };
        prop_assert!(at(c, &looser) >= base);
        let more_delta = GuessAuditConfig { delta: delta * 2.0 + 1e-6, ..cfg.clone() };
        prop_assert!(at(c, &more_delta) <= base);
    }

    #[test]
    fn np_forward_and_inverse_agree(pz_v in 1e-12f64..=1.0, p in 1e-6f64..0.999_999) {
        prop_assert_eq!(np_probability(pz_v, 1), pz_v);
        match n_for_target(pz_v, p).unwrap() {
            ExtendedCount::Finite(n) => {
                prop_assert!(np_probability(pz_v, n) >= p);
                if n >= 2 {
                    prop_assert!(np_probability(pz_v, n - 1) < p);
                }
            }
            ExtendedCount::Infinite => prop_assert!(false, "finite p_z must give a finite count"),
        }
    }

    #[test]
    fn predicates_nest(z in vec(0u64..4, 1..8), pre in vec(0u64..4, 0..4), post in vec(0u64..4, 0..4), noise in vec(0u64..4, 1..10), tau in 0.01f64..=1.0) {
        let y: Vec<u64> = pre.iter().chain(&z).chain(&post).copied().collect();
        for gen in [z.clone(), y, noise] {
            let rec = CompletionRecord::new(gen, z.clone()).unwrap();
            let exact = matches(&rec, &MatchPredicate::Exact);
            let incl = matches(&rec, &MatchPredicate::Inclusion);
            let lcs = matches(&rec, &MatchPredicate::Lcs { tau });
            prop_assert!(!exact || incl);
            prop_assert!(!incl || lcs);
        }
    }

    #[test]
    fn pz_ignores_step_order(raw in vec(vec(0.01f64..1.0, 2..6), 1..12), ranks in vec(0usize..6, 12)) {
        let steps: Vec<TokenStep> = raw
            .iter()
            .zip(&ranks)
            .map(|(w, &r)| {
                let s: f64 = w.iter().sum();
                let mut probs: Vec<f64> = w.iter().map(|x| x / s).collect();
                probs.sort_by(|a, b| b.total_cmp(a));
                let rank = r % probs.len() + 1;
                TokenStep { target_token: rank as u64, target_prob: probs[rank - 1], target_rank: rank, sorted_probs: probs }
            })
            .collect();
        let mut rev = steps.clone();
        rev.reverse();
        let fwd = TokenTrace::new(None, steps, 0.9999).unwrap();
        let back = TokenTrace::new(None, rev, 0.9999).unwrap();
        for scheme in [SamplingScheme::Temperature { t: 0.7 }, SamplingScheme::TopK { k: 3 }, SamplingScheme::TopP { p: 0.8 }] {
            let a = pz(&fwd, &scheme).unwrap();
            let b = pz(&back, &scheme).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(b), "{} vs {}", a, b);
        }
    }

    #[test]
    fn wide_top_k_matches_temperature_one(w in vec(0.01f64..1.0, 3..8), cut in 0usize..3, rank in 0usize..8) {
        // Drop a sliver of the tail so the list is truncated but above the floor.
        let s: f64 = w.iter().sum();
        let mut probs: Vec<f64> = w.iter().map(|x| x / s).collect();
        probs.sort_by(|a, b| b.total_cmp(a));
        let floor = 0.99;
        let mut listed = probs.clone();
        for _ in 0..cut {
            if listed.len() > 1 && listed.iter().sum::<f64>() - listed[listed.len() - 1] >= floor {
                listed.pop();
            }
        }
        let r = rank % listed.len() + 1;
        let step = TokenStep { target_token: 0, target_prob: listed[r - 1], target_rank: r, sorted_probs: listed.clone() };
        let trace = TokenTrace::new(None, vec![step.clone()], floor).unwrap();
        let t1 = effective_step_prob_bounded(&step, &SamplingScheme::Temperature { t: 1.0 }, None).unwrap();
        let complete = listed.len() == probs.len();
        let topk = effective_step_prob(&step, &SamplingScheme::TopK { k: listed.len() }).unwrap();
        prop_assert!((topk - t1.prob).abs() <= 1.0 - trace.coverage_floor + 1e-12);
        if complete {
            prop_assert!((topk - probs[r - 1]).abs() <= 1e-12);
        }
    }

    #[test]
    fn sweep_is_deterministic(set in score_set()) {
        let cfg = GuessAuditConfig { grid_min: 2, ..Default::default() };
        if let Ok(a) = sweep(&set, &cfg) {
            prop_assert_eq!(a, sweep(&set, &cfg).unwrap());
        }
    }
}

#[test]
fn bootstrap_is_reproducible_and_brackets_the_estimate() {
    use privaudit::bootstrap::{bootstrap_audit, BootstrapConfig};
    use privaudit::synthetic::{gen_shifted_gaussian_scores, GaussianPairSpec};
    let mut inside = 0;
    let trials = 100;
    for t in 0..trials {
        let set = gen_shifted_gaussian_scores(&GaussianPairSpec { m_per_class: 60, shift: 1.0, sigma: 1.0, seed: t }).unwrap();
        let cfg = BootstrapConfig { k: 200, seed: t, ..Default::default() };
        let a = bootstrap_audit(&set, &cfg).unwrap();
        if t < 3 {
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&bootstrap_audit(&set, &cfg).unwrap()).unwrap());
        }
        if a.auc.lower <= a.auc.point && a.auc.point <= a.auc.upper {
            inside += 1;
        }
    }
    assert!(inside >= 99, "{inside}/{trials}");
}

#[test]
fn generators_are_pure_and_valid() {
    use privaudit::synthetic::*;
    let spec = GaussianPairSpec { m_per_class: 50, shift: 1.0, sigma: 2.0, seed: 7 };
    assert_eq!(gen_shifted_gaussian_scores(&spec).unwrap(), gen_shifted_gaussian_scores(&spec).unwrap());
    assert_eq!(gen_randomized_response_guesses(100, 1.0, 3).unwrap(), gen_randomized_response_guesses(100, 1.0, 3).unwrap());
    assert_ne!(gen_randomized_response_guesses(100, 1.0, 3).unwrap(), gen_randomized_response_guesses(100, 1.0, 4).unwrap());
    let gm = gen_gaussian_mechanism_scores(101, 1.0, 1e-5, 2).unwrap();
    assert_eq!(gm.member_count(), 51);
    let panel = gen_logit_panel(&LogitPanelSpec::new(30, 7, 1.0, 0.0, 1.0, 5)).unwrap();
    assert_eq!(panel.to_json_string(), gen_logit_panel(&LogitPanelSpec::new(30, 7, 1.0, 0.0, 1.0, 5)).unwrap().to_json_string());
    assert!(LogitPanel::from_json_str(&panel.to_json_string()).is_ok());
    // Written fixtures pass ingestion validation.
    let mut buf = Vec::new();
    write_score_records(&mut buf, &gm, ScoreFormat::Jsonl).unwrap();
    assert_eq!(read_score_records(buf.as_slice(), ScoreFormat::Jsonl).unwrap().records(), gm.records());
    let (a, _) = gen_toy_lm_traces(8, 5, 10, 1).unwrap();
    let (b, _) = gen_toy_lm_traces(8, 5, 10, 1).unwrap();
    assert_eq!(a, b);
    let mut buf = Vec::new();
    privaudit::observation::write_token_traces(&mut buf, &a).unwrap();
    assert_eq!(privaudit::observation::read_token_traces(buf.as_slice()).unwrap(), a);
}
