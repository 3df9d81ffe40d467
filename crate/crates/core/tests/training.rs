use mrparse::graph::Framework;
use mrparse::model::ModelConfig;
use mrparse::train::{train, Dataset, Metric, TrainConfig, TrainError};

fn quick(fw: Framework, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(ModelConfig::tiny(fw));
    cfg.seed = seed;
    cfg.data.synthetic = Some(10);
    cfg.max_steps = 12;
    cfg.eval_every = 4;
    cfg.batch_tokens = 20;
    cfg
}

fn params(cfg: &TrainConfig) -> Vec<u8> {
    let data = Dataset::from_config(cfg).unwrap();
    let (model, _) = train(cfg, &data).unwrap();
    let mut buf = Vec::new();
    model.store.save(&mut buf).unwrap();
    buf
}

#[test]
fn fixed_seed_training_is_byte_identical() {
    for fw in [Framework::Dm, Framework::Amr] {
        let cfg = quick(fw, 5);
        assert_eq!(params(&cfg), params(&cfg), "{fw}");
        assert_ne!(params(&cfg), params(&quick(fw, 6)), "{fw}");
    }
}

#[test]
fn training_lowers_the_loss() {
    let mut cfg = quick(Framework::Eds, 1);
    cfg.max_steps = 60;
    cfg.eval_every = 20;
    cfg.data.dev_fraction = 0.0;
    let data = Dataset::from_config(&cfg).unwrap();
    let (_, report) = train(&cfg, &data).unwrap();
    let losses: Vec<f64> = report.history.iter().map(|e| e.loss).collect();
    assert!(losses.last().unwrap() < &losses[0], "{losses:?}");
    // without dev data the score is the negated training loss
    assert!(report.history.iter().all(|e| e.score == -e.loss));
}

#[test]
fn target_and_patience_stop_early() {
    let mut cfg = quick(Framework::Dm, 2);
    cfg.max_steps = 40;
    cfg.target = Some(-1.0);
    let data = Dataset::from_config(&cfg).unwrap();
    let (_, report) = train(&cfg, &data).unwrap();
    assert!(report.reached_target);
    assert_eq!(report.steps, cfg.eval_every);

    let mut cfg = quick(Framework::Dm, 2);
    cfg.max_steps = 400;
    cfg.lr = 1e-12;
    cfg.patience = 8;
    cfg.metric = Metric::Edges;
    let (_, report) = train(&cfg, &data).unwrap();
    assert!(report.steps < cfg.max_steps);
    assert!(report.steps - report.best_step >= cfg.patience);
}

#[test]
fn empty_training_set_is_an_error() {
    let cfg = quick(Framework::Psd, 1);
    let mut data = Dataset::from_config(&cfg).unwrap();
    data.train.clear();
    assert!(matches!(train(&cfg, &data), Err(TrainError::Empty)));
}

#[test]
fn config_file_reaches_nested_keys() {
    let doc = "framework = ucca\n# comment\nmodel.encoder.hidden = 8 # trailing\nmodel.weights.prop = 0.5\nmetric = edges\ntarget = 0.9\nout = /tmp/x\n";
    let cfg = TrainConfig::parse(doc).unwrap();
    assert_eq!(cfg.model.framework, Framework::Ucca);
    assert_eq!(cfg.model.encoder.hidden, 8);
    assert_eq!(cfg.model.weights.prop, 0.5);
    assert_eq!(cfg.metric, Metric::Edges);
    assert_eq!(cfg.target, Some(0.9));
    assert!(matches!(
        TrainConfig::parse("framework = dm\nmodel.nope = 1\n"),
        Err(TrainError::Config { line: 2, .. })
    ));
    assert!(matches!(TrainConfig::parse("seed = 3\n"), Err(TrainError::Invalid(_))));
    assert!(matches!(
        TrainConfig::parse("framework = dm\nlr = -1\n"),
        Err(TrainError::Invalid(_))
    ));
}
