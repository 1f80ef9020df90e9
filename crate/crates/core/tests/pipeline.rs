use entpair_core::model::ModelConfig;
use entpair_core::pairing::{generate_pairs, split_pairs, subject_ids, SplitConfig};
use entpair_core::synth::{synth_generate, SynthSpec, MIN_ORACLE_DRAWS};
use entpair_core::train::{evaluate, EvalMode, Experiment, TrainConfig};

fn experiment(seed: u64, pair_level: bool) -> Experiment {
    let spec = SynthSpec {
        n_subjects: 240,
        oracle_draws: MIN_ORACLE_DRAWS,
        ..SynthSpec::default().with_shape([8, 8, 3])
    };
    let data = synth_generate(&spec, seed).unwrap();
    let pairs = generate_pairs(data.dataset.subjects(), None, None, seed).unwrap();
    let split = split_pairs(&pairs, &SplitConfig { seed, subject_disjoint: !pair_level, ..SplitConfig::default() }).unwrap();
    if !pair_level {
        let test = subject_ids(&split.test);
        assert!(subject_ids(&split.train).is_disjoint(&test));
        assert!(subject_ids(&split.validation).is_disjoint(&test));
    }
    let model = ModelConfig::fullface(spec.shape).with_widths(2, 8);
    Experiment::new(&data.dataset, &split, model, TrainConfig { epochs: 12, ..TrainConfig::default() }).unwrap()
}

#[test]
fn trials_repeat_exactly_for_a_seed() {
    let exp = experiment(4, false);
    let (a, ra) = exp.trial(9).unwrap();
    let (b, rb) = exp.trial(9).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.model.params(), b.model.params());
}

#[test]
fn planted_signal_is_learned_quickly() {
    for pair_level in [false, true] {
        let exp = experiment(5, pair_level);
        let (_, r) = exp.trial(1).unwrap();
        assert!(r.test_accuracy > 80.0, "{pair_level}: {}", r.test_accuracy);
        assert_eq!(r.curves.len(), 12);
    }
}

#[test]
fn swapped_test_set_scores_the_same() {
    let exp = experiment(6, false);
    let (bundle, _) = exp.trial(2).unwrap();
    let swapped: Vec<_> = exp.test.iter().map(|p| p.swapped()).collect();
    let a = evaluate(&bundle.model, &exp.inputs, &exp.test, EvalMode::Symmetric).unwrap();
    let b = evaluate(&bundle.model, &exp.inputs, &swapped, EvalMode::Symmetric).unwrap();
    assert_eq!(a.correct(), b.correct());
    assert_eq!((a.tp, a.tn, a.fp, a.fn_), (b.tn, b.tp, b.fn_, b.fp));
}
