//! Training and decoder invariants on a tiny model.

use ndarray::Array2;

use unigraph::harness::{generate, train, BeamConfig, ToyTask, TrainConfig};
use unigraph::model::{load_checkpoint, save_checkpoint, Fwd, GraphInputs, Model, ModelConfig};

fn tiny(vocab: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        ffn_width: 32,
        enc_layers: 1,
        graph_enc_layers: 1,
        dec_layers: 2,
        vocab_size: vocab,
        max_len: 40,
        ..ModelConfig::default()
    }
}

fn setup(n: usize) -> (ToyTask, ModelConfig) {
    let task = ToyTask::planted(n, 4).unwrap();
    let cfg = tiny(task.vocab.len());
    (task, cfg)
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let (task, cfg) = setup(4);
    let data = task.prepare(&cfg).unwrap();
    let mut m = Model::new(
        ModelConfig {
            dropout_rate: 0.0,
            ..cfg
        },
        1,
    )
    .unwrap();
    let before = m.params.clone();
    let tc = TrainConfig {
        steps: 5,
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let report = train(&mut m, &data, &tc).unwrap();
    let first = report.first_loss().unwrap();
    assert!(report.steps.iter().all(|s| s.loss == first));
    for id in before.ids() {
        assert_eq!(before.get(id), m.params.get(id));
    }
}

#[test]
fn training_is_deterministic() {
    let (task, cfg) = setup(4);
    let data = task.prepare(&cfg).unwrap();
    let tc = TrainConfig {
        steps: 6,
        batch_size: 2,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = Model::new(cfg.clone(), 3).unwrap();
        let r = train(&mut m, &data, &tc).unwrap();
        (r, m.params)
    };
    let (r1, p1) = run();
    let (r2, p2) = run();
    assert_eq!(r1, r2);
    for id in p1.ids() {
        assert_eq!(p1.get(id), p2.get(id));
    }
}

#[test]
fn clipping_bounds_every_step() {
    let (task, cfg) = setup(6);
    let data = task.prepare(&cfg).unwrap();
    let mut m = Model::new(cfg, 2).unwrap();
    let tc = TrainConfig {
        steps: 10,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let report = train(&mut m, &data, &tc).unwrap();
    for s in &report.steps {
        assert!(s.clipped_norm <= 0.2 + 1e-9, "{s:?}");
        assert!(s.clipped_norm <= s.grad_norm + 1e-12);
    }
}

#[test]
fn zero_step_checkpoint_equals_initialization() {
    let (task, cfg) = setup(2);
    let data = task.prepare(&cfg).unwrap();
    let init = Model::new(cfg.clone(), 5).unwrap();
    let mut m = init.clone();
    let tc = TrainConfig {
        steps: 0,
        ..TrainConfig::default()
    };
    assert!(train(&mut m, &data, &tc).unwrap().steps.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &m, &task.vocab).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.model.config, init.config);
    for id in init.params.ids() {
        assert_eq!(init.params.get(id), ck.model.params.get(id));
    }
    let beam = BeamConfig {
        max_len: 8,
        ..BeamConfig::default()
    };
    assert_eq!(
        generate(&init, &task.vocab, &data, &beam, false).unwrap(),
        generate(&ck.model, &task.vocab, &data, &beam, false).unwrap()
    );
}

#[test]
fn beam_one_equals_greedy_on_a_model() {
    let (task, cfg) = setup(3);
    let data = task.prepare(&cfg).unwrap();
    let m = Model::new(cfg, 8).unwrap();
    let cfg = BeamConfig {
        beam_size: 1,
        max_len: 10,
        ..BeamConfig::default()
    };
    let beam = generate(&m, &task.vocab, &data, &cfg, false).unwrap();
    let greedy = generate(&m, &task.vocab, &data, &cfg, true).unwrap();
    for (b, g) in beam.iter().zip(&greedy) {
        assert_eq!(b.tokens, g.tokens);
    }
}

/// Decoder logits of a fixed-seed 2-layer decoder on a 6-token prefix.
fn golden_logits() -> Array2<f64> {
    let (task, _) = setup(1);
    let cfg = ModelConfig {
        dropout_rate: 0.0,
        ..tiny(task.vocab.len())
    };
    let ex = &task.examples[0];
    let m = Model::new(cfg.clone(), 2024).unwrap();
    let gi = GraphInputs::new(&ex.graph, ex.input.len(), &cfg).unwrap();
    let mut f = Fwd::new(&m.params);
    let enc = m.encode(&mut f, &ex.input, &gi).unwrap();
    let out = m.decode(&mut f, enc, &gi, &ex.target[..6]).unwrap();
    f.tape.value(out).clone()
}

#[test]
fn decoder_matches_recorded_logits() {
    let path = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/decoder_golden.json");
    let got = golden_logits();
    if std::env::var_os("UNIGRAPH_BLESS").is_some() {
        let rows: Vec<Vec<f64>> = got.rows().into_iter().map(|r| r.to_vec()).collect();
        std::fs::write(&path, serde_json::to_string(&rows).unwrap() + "\n").unwrap();
    }
    let want: Vec<Vec<f64>> =
        serde_json::from_slice(&std::fs::read(&path).expect("run with UNIGRAPH_BLESS=1 once"))
            .unwrap();
    assert_eq!(got.nrows(), 7, "BOS plus a 6-token prefix");
    assert_eq!(want.len(), got.nrows());
    for (w, g) in want.iter().zip(got.rows()) {
        assert_eq!(w.len(), g.len());
        for (a, b) in w.iter().zip(g.iter()) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }
}
