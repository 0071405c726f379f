mod common;

use common::{cosine, identity_corpus, identity_holds};
use taxomap::trainer::{
    gradient_check, train_cbow, train_pvdbow, Corpus, ProbeState, SoftmaxMode, TrainerConfig,
};

#[test]
fn shared_contexts_give_closer_vectors() {
    for mode in [SoftmaxMode::NegativeSampling, SoftmaxMode::Full] {
        let held = (0..20).filter(|&s| identity_holds(mode, s)).count();
        assert!(held >= 19, "{mode:?}: {held}/20");
    }
}

#[test]
fn full_softmax_loss_does_not_increase() {
    let cfg = TrainerConfig {
        dim: 10,
        window: 2,
        epochs: 8,
        mode: SoftmaxMode::Full,
        lr_start: 0.05,
        lr_end: 0.001,
        ..Default::default()
    };
    let (_, report) = train_cbow(&identity_corpus(3), &cfg).unwrap();
    assert_eq!(report.loss_history.len(), 9);
    for w in report.loss_history.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{:?}", report.loss_history);
    }
}

#[test]
fn identical_documents_get_close_vectors() {
    let words = |p: &str| (0..8).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let corpus = Corpus::new(vec![
        ("one".into(), words("x")),
        ("two".into(), words("x")),
        ("three".into(), words("y")),
        ("four".into(), words("z")),
    ])
    .unwrap();
    let cfg = TrainerConfig {
        dim: 10,
        epochs: 200,
        lr_start: 0.05,
        ..Default::default()
    };
    let (docs, _) = train_pvdbow(&corpus, &cfg).unwrap();
    let c = cosine(&docs.row("one").unwrap(), &docs.row("two").unwrap());
    assert!(c >= 0.9, "{c}");
    let far = cosine(&docs.row("one").unwrap(), &docs.row("three").unwrap());
    assert!(far < c);
}

#[test]
fn gradient_check_on_random_probes() {
    let cfg = TrainerConfig {
        mode: SoftmaxMode::Full,
        ..Default::default()
    };
    for seed in 0..10 {
        let probe = ProbeState::random(30, 6, vec![1, 4, 4, 17], (seed % 30) as usize, 1.0, seed);
        let err = gradient_check(&cfg, &probe).unwrap();
        assert!(err <= 1e-4, "seed {seed}: {err}");
    }
}
