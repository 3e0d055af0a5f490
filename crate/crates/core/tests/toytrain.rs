use elastica::rng;
use elastica::token_tree::{LeafSymbol, PrunedTree, WeightedDataset};
use elastica::toytrain::*;
use proptest::prelude::*;
use rand::Rng;

fn random_model(param: Parameterization, d: usize, seed: u64) -> ToyModel {
    let mut m = ToyModel::new(complete_alphabet(d), d, param).unwrap();
    let mut r = rng::seeded(seed);
    let theta: Vec<f64> = (0..m.params().len()).map(|_| r.random_range(-2.0..2.0)).collect();
    m.set_params(&theta).unwrap();
    m
}

fn random_target(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed ^ 0xabc);
    let w: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

#[test]
fn gradient_matches_central_differences() {
    for param in [Parameterization::Flat, Parameterization::Tree] {
        for seed in 0..50 {
            let m = random_model(param, 3, seed);
            let q = random_target(m.alphabet().len(), seed);
            let g = m.gradient(&q);
            let theta = m.params();
            let h = 1e-5;
            for i in 0..theta.len() {
                let at = |delta: f64| {
                    let mut t = theta.clone();
                    t[i] += delta;
                    let mut mm = m.clone();
                    mm.set_params(&t).unwrap();
                    mm.cross_entropy(&q)
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                let scale = g[i].abs().max(1e-3);
                assert!((fd - g[i]).abs() / scale < 1e-5, "{param:?} seed {seed} param {i}: {fd} vs {}", g[i]);
            }
        }
    }
}

#[test]
fn one_leaf_dataset_converges() {
    for param in [Parameterization::Flat, Parameterization::Tree] {
        let m = ToyModel::new(cont_alphabet(3), 3, param).unwrap();
        let ds = WeightedDataset::from_strs(&[("101", 7)]).unwrap();
        let (trained, trace) = train(&m, &ds, &TrainConfig::full_batch(0.5, 2000)).unwrap();
        let i = trained.alphabet().binary_search(&LeafSymbol::cont("101")).unwrap();
        assert!(trained.probs()[i] >= 0.99, "{param:?}: {}", trained.probs()[i]);
        assert_eq!(trace.len(), 2001);
    }
}

#[test]
fn flat_one_leaf_matches_closed_form() {
    // By symmetry every non-target logit stays equal, so descent reduces to
    // a two-logit recursion.
    let v = 8usize;
    let m = ToyModel::new(cont_alphabet(3), 3, Parameterization::Flat).unwrap();
    let mut q = vec![0.0; v];
    q[5] = 1.0;
    let mut trained = m.clone();
    trained.train_on(&q, 0.5, 300).unwrap();
    let mut a = 0.0f64; // target logit
    let mut b = 0.0f64; // every other logit
    for _ in 0..300 {
        let p = a.exp() / (a.exp() + (v as f64 - 1.0) * b.exp());
        let po = b.exp() / (a.exp() + (v as f64 - 1.0) * b.exp());
        a -= 0.5 * (p - 1.0) / std::f64::consts::LN_2;
        b -= 0.5 * po / std::f64::consts::LN_2;
    }
    let p = a.exp() / (a.exp() + (v as f64 - 1.0) * b.exp());
    assert!((trained.probs()[5] - p).abs() < 1e-12);
}

#[test]
fn model_distribution_is_a_fixed_point() {
    for param in [Parameterization::Flat, Parameterization::Tree] {
        let mut m = random_model(param, 3, 9);
        let q = m.probs();
        assert!(m.gradient(&q).iter().all(|g| g.abs() < 1e-12));
        let h: f64 = -q.iter().filter(|p| **p > 0.0).map(|p| p * p.log2()).sum::<f64>();
        let trace = m.train_on(&q, 0.5, 10).unwrap();
        assert!(trace.iter().all(|l| (l - h).abs() < 1e-10));
    }
}

#[test]
fn loss_trace_is_non_increasing_and_normalized() {
    for param in [Parameterization::Flat, Parameterization::Tree] {
        for seed in 0..10 {
            let mut m = random_model(param, 3, seed);
            let q = random_target(m.alphabet().len(), seed + 100);
            let mut prev = f64::INFINITY;
            for _ in 0..200 {
                let l = m.train_on(&q, 0.5, 1).unwrap()[1];
                assert!(l <= prev + 1e-12);
                assert!((m.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prev = l;
            }
        }
    }
}

#[test]
fn divergence_is_reported() {
    let m = ToyModel::new(cont_alphabet(2), 2, Parameterization::Flat).unwrap();
    let ds = WeightedDataset::from_strs(&[("01", 1), ("10", 3)]).unwrap();
    let err = train(&m, &ds, &TrainConfig::full_batch(1e308, 5)).unwrap_err();
    assert!(matches!(err, elastica::Error::TrainingDiverged(_)));
}

#[test]
fn train_config_validation_and_minibatch_determinism() {
    let m = ToyModel::new(cont_alphabet(2), 2, Parameterization::Tree).unwrap();
    let ds = WeightedDataset::from_strs(&[("01", 1), ("10", 3), ("11", 2)]).unwrap();
    assert!(train(&m, &ds, &TrainConfig::full_batch(0.0, 5)).is_err());
    assert!(train(&m, &ds, &TrainConfig::full_batch(0.5, 0)).is_err());
    let cfg = TrainConfig { learning_rate: 0.5, steps: 50, batch: Batch::Size(4), seed: 3 };
    let (a, ta) = train(&m, &ds, &cfg).unwrap();
    let (b, tb) = train(&m, &ds, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert!(ta.last().unwrap() < &ta[0]);
}

#[test]
fn longer_responses_are_truncated_to_capacity() {
    let m = ToyModel::new(complete_alphabet(2), 2, Parameterization::Flat).unwrap();
    let ds = WeightedDataset::from_strs(&[("0110", 1), ("1", 1)]).unwrap();
    let q = m.target_from_dataset(&ds).unwrap();
    let i = m.alphabet().binary_search(&LeafSymbol::cont("01")).unwrap();
    let j = m.alphabet().binary_search(&LeafSymbol::eos("1")).unwrap();
    assert_eq!(q[i], 0.5);
    assert_eq!(q[j], 0.5);
    let cont_only = ToyModel::new(cont_alphabet(2), 2, Parameterization::Flat).unwrap();
    assert!(cont_only.target_from_dataset(&ds).is_err());
}

#[test]
fn kl_matches_direct_summation() {
    let d = 3;
    for seed in 0..20 {
        let m = random_model(Parameterization::Tree, d, seed);
        let q = random_target(m.alphabet().len(), seed + 7);
        let t = PrunedTree::from_weights(d, m.alphabet().iter().cloned().zip(q.iter().copied()).collect()).unwrap();
        let p = m.probs();
        let direct: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).log2()).sum();
        let got = kl_to_tree(&m, &t).unwrap();
        assert!((got.bits - direct).abs() < 1e-9);
        assert_eq!(got.floored, 0);
        assert!(got.bits >= 0.0);
    }
}

#[test]
fn kl_floor_counts_gaps() {
    let m = ToyModel::new(cont_alphabet(2), 2, Parameterization::Flat).unwrap();
    let t = PrunedTree::from_weights(2, vec![(LeafSymbol::cont("00"), 1.0), (LeafSymbol::cont("11"), 1.0)]).unwrap();
    let kl = kl_to_tree(&m, &t).unwrap();
    assert_eq!(kl.floored, 2);
    assert!(kl.bits.is_finite() && kl.bits > 10.0);
}

#[test]
fn generated_frequencies_follow_the_model() {
    let m = random_model(Parameterization::Tree, 3, 4);
    let n = 100_000u64;
    let ds = generate_dataset(&m, n as usize, &mut rng::seeded(12)).unwrap();
    assert_eq!(ds.size(), n);
    let p = m.probs();
    let freq = m.target_from_dataset(&ds).unwrap();
    for (f, p) in freq.iter().zip(&p) {
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((f - p).abs() <= 4.0 * sd + 1e-12, "{f} vs {p}");
    }
    let again = generate_dataset(&m, n as usize, &mut rng::seeded(12)).unwrap();
    assert_eq!(ds, again);
}

#[test]
fn positive_score_cases() {
    let m = ToyModel::new(cont_alphabet(2), 2, Parameterization::Flat).unwrap();
    let mut point = m.clone();
    point.set_params(&[-1e4, 0.0, -1e4, -1e4]).unwrap();
    assert_eq!(positive_score(&point, &[LeafSymbol::cont("01")]).unwrap(), 1.0);
    assert!(positive_score(&m, &[LeafSymbol::cont("0101")]).is_err());

    let m = random_model(Parameterization::Flat, 3, 21);
    let positive: Vec<LeafSymbol> = m.alphabet().iter().filter(|s| s.prefix.starts_with('1')).cloned().collect();
    let score = positive_score(&m, &positive).unwrap();
    let n = 50_000;
    let ds = generate_dataset(&m, n, &mut rng::seeded(5)).unwrap();
    let hits: u64 = ds.entries().iter().filter(|(r, _)| r.bits().starts_with('1')).map(|(_, c)| c).sum();
    let f = hits as f64 / n as f64;
    assert!((f - score).abs() <= 4.0 * (score * (1.0 - score) / n as f64).sqrt());
}

#[test]
fn resistance_trend_and_symmetry() {
    let spec = ResistanceSpec::default();
    let r = resistance_experiment(&spec).unwrap();
    assert_eq!(r.rows.len(), 15);
    assert!(r.rows.iter().all(|x| x.forward_loss >= 0.0 && x.inverse_loss >= 0.0));
    assert!(r.inverse_wins() >= 14);
    assert_eq!(r, resistance_experiment(&spec).unwrap());

    let sym = resistance_experiment(&ResistanceSpec { sft_matches_pretrain: true, ..spec }).unwrap();
    for (k, l) in RESISTANCE_PAIRS {
        let rows: Vec<_> = sym.rows.iter().filter(|x| x.from == k && x.to == l).collect();
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&ResistanceRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        let sd = |f: &dyn Fn(&ResistanceRow) -> f64| {
            let m = mean(f);
            (rows.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let (mf, mi) = (mean(&|r| r.forward_loss), mean(&|r| r.inverse_loss));
        let sigma = sd(&|r| r.forward_loss).max(sd(&|r| r.inverse_loss));
        assert!((mf - mi).abs() <= 2.0 * sigma, "pair {k}-{l}: {mf} vs {mi}, sigma {sigma}");
    }
}

#[test]
fn swapping_pair_labels_swaps_paths() {
    let spec = ResistanceSpec { pretrain_steps: 500, ..ResistanceSpec::default() };
    let cps = resistance_checkpoints(&spec, 2).unwrap();
    let (f, i) = resistance_pair(&cps, 1, 3, &spec, 2).unwrap();
    let (f2, i2) = resistance_pair(&cps, 3, 1, &spec, 2).unwrap();
    assert_eq!((f, i), (i2, f2));
}

#[test]
fn rebound_trends_at_default_spec() {
    let spec = ReboundSpec::default();
    let r = rebound_experiment(&spec).unwrap();
    assert!(r.scores.iter().flatten().all(|s| (0.0..=1.0).contains(s)));
    assert!(r.initial_scores_ordered());
    assert!(r.slope_correlation() >= 0.8);
    assert!(r.final_spread() <= spec.band);
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("n_pos,n_neg,score\n0,0,"));
    assert_eq!(text.lines().count(), 1 + r.n_pos.len() * r.n_neg.len());
}

#[test]
fn factor_sweep_single_point_is_identity() {
    let spec = ReboundSpec { replicates: 1, ..ReboundSpec::default() };
    let pts = factor_sweep(&spec, Knob::CapacityD, &[spec.capacity_d as u64]).unwrap();
    assert_eq!(pts.len(), 1);
    assert_eq!(pts[0].report, rebound_experiment(&spec).unwrap());
    assert!(factor_sweep(&spec, Knob::CapacityD, &[4, 3]).is_err());
    assert!(factor_sweep(&spec, Knob::CapacityD, &[]).is_err());
}

#[test]
fn spec_json_is_strict_and_defaults_fill_gaps() {
    let s: ReboundSpec = serde_json::from_str(r#"{"capacity_d": 4, "positive": {"patterns": ["****11"]}}"#).unwrap();
    assert_eq!(s.capacity_d, 4);
    assert_eq!(s.negative, ReboundSpec::default().negative);
    assert!(serde_json::from_str::<ReboundSpec>(r#"{"capacity": 4}"#).is_err());
    assert_eq!(serde_json::from_str::<ReboundSpec>("{}").unwrap(), ReboundSpec::default());
    assert_eq!(serde_json::from_str::<ResistanceSpec>("{}").unwrap(), ResistanceSpec::default());
    let back: ResistanceSpec = serde_json::from_str(&serde_json::to_string(&ResistanceSpec::default()).unwrap()).unwrap();
    assert_eq!(back, ResistanceSpec::default());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_outputs_stay_normalized(seed in any::<u64>(), d in 1usize..5, tree in any::<bool>(), steps in 1usize..20) {
        let param = if tree { Parameterization::Tree } else { Parameterization::Flat };
        let mut m = random_model(param, d, seed);
        let q = random_target(m.alphabet().len(), seed);
        m.train_on(&q, 0.5, steps).unwrap();
        let p = m.probs();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn kl_is_non_negative(seed in any::<u64>(), d in 1usize..4) {
        let m = random_model(Parameterization::Flat, d, seed);
        let q = random_target(m.alphabet().len(), seed.wrapping_add(1));
        let t = PrunedTree::from_weights(d, m.alphabet().iter().cloned().zip(q).collect()).unwrap();
        prop_assert!(kl_to_tree(&m, &t).unwrap().bits >= 0.0);
    }
}
