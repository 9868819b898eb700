use std::fs;
use std::path::Path;
use std::process::Command;

use mkmed::checkpoint::{Checkpoint, Kind};
use mkmed::commands::{self, Experiment, Loaded};
use mkmed::config::{self, parse_run_config, parse_spec};
use mkmed::formats;
use mkmed::CliError;
use mkmed_core::align::{coverage_stats, Modality, PretrainMode};
use mkmed_core::config::RunConfig;
use mkmed_core::encoders::EncoderSet;
use mkmed_core::eval::{self, Variant};
use mkmed_core::synthgen::{self, SynthSpec};
use mkmed_core::Error as CoreError;

const SPEC: &str = "n_molecules = 140\nn_patients = 60\nn_diseases = 10\nn_procedures = 5\n";

const RUN: &str = "gamma = 0.95
pretrain_epochs = 2
pretrain_lr = 1e-4
pretrain_batch = 8
train_epochs = 3
dim = 16
heads = 2
ff = 16
gru_hidden = 8
head_hidden = 16
gvp_node_s = 8
gvp_node_v = 4
gvp_edge_s = 4
gvp_layers = 1
transformer_layers = 1
transe_epochs = 2
bootstrap = 4
";

fn spec() -> SynthSpec {
    parse_spec(SPEC, "test").unwrap()
}

fn run_cfg() -> RunConfig {
    parse_run_config(RUN, "test").unwrap()
}

fn dataset(dir: &Path) -> Loaded {
    commands::cmd_generate(&spec(), dir).unwrap();
    Loaded::open(dir).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mkmed"))
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn dataset_files_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec();
    let data = synthgen::generate(&s).unwrap();
    formats::write_dataset(dir.path(), &data).unwrap();
    let back = formats::read_dataset(dir.path()).unwrap();
    assert_eq!(back.records, data.records);
    assert_eq!(back.patients, data.patients);
    assert_eq!(back.ddi, data.ddi);
    assert_eq!(back.vocab, s.vocab());
    assert_eq!(formats::read_rules(&dir.path().join(formats::RULES)).unwrap(), data.rules);
}

#[test]
fn absent_modalities_are_omitted() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthgen::generate(&spec()).unwrap();
    formats::write_dataset(dir.path(), &data).unwrap();
    let text = fs::read_to_string(dir.path().join(formats::MODALITIES)).unwrap();
    for (line, r) in text.lines().zip(&data.records) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let obj = v.as_object().unwrap();
        for (key, m) in [("image", Modality::Image), ("text", Modality::Text), ("conformer", Modality::Structure), ("props", Modality::Props), ("kg", Modality::Kg)] {
            assert_eq!(obj.contains_key(key), r.has(m));
        }
    }
}

#[test]
fn generate_is_deterministic_and_summary_matches_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let stats = commands::cmd_generate(&spec(), a.path()).unwrap();
    commands::cmd_generate(&spec(), b.path()).unwrap();
    assert_eq!(files(a.path()), files(b.path()));
    let reread = formats::read_records(a.path()).unwrap();
    assert_eq!(coverage_stats(&reread, &Modality::ALL), stats);
    let c = tempfile::tempdir().unwrap();
    commands::cmd_generate(&SynthSpec { seed: 1, ..spec() }, c.path()).unwrap();
    assert_ne!(files(a.path()), files(c.path()));
}

#[test]
fn bundled_spec_is_valid() {
    let s = config::load_spec(None).unwrap();
    assert_eq!(s.n_medications, 131);
    assert_eq!(s.n_molecules, 1000);
    assert_eq!(s.coverage.p, [0.4; 5]);
    assert_eq!(s, SynthSpec::default());
}

#[test]
fn config_rejects_unknown_keys_and_bad_ranges() {
    let e = parse_run_config("gamma = 0.9\nlearning_rate = 0.1\n", "cfg.toml").unwrap_err();
    assert!(e.to_string().contains("learning_rate"), "{e}");
    assert!(e.to_string().contains("line 2"), "{e}");
    assert_eq!(e.exit_code(), 2);
    assert!(parse_run_config("dim = 64\n", "cfg.toml").unwrap_err().to_string().contains("gamma"));
    assert!(parse_run_config("gamma = 1.5\n", "cfg.toml").is_err());
    assert!(parse_run_config("gamma = 0.9\nheads = 5\n", "cfg.toml").is_err());
    let e = parse_spec("n_molecule = 3\n", "spec.toml").unwrap_err();
    assert!(e.to_string().contains("n_molecule"), "{e}");
    assert_eq!(parse_spec("rule_noise = 2.0\n", "spec.toml").unwrap_err().exit_code(), 2);
    assert_eq!(parse_spec("coverage = [0.1, 0.2, 0.3, 0.4, 0.5]\n", "s").unwrap().coverage.p, [0.1, 0.2, 0.3, 0.4, 0.5]);
}

#[test]
fn checkpoint_round_trip_is_byte_stable() {
    let cfg = run_cfg();
    let set = EncoderSet::new(cfg.encoder_config(), 5);
    let mut ck = Checkpoint::new(Kind::Encoders, &cfg, None).meta("mode", "rotating");
    ck.push_store(&set.store);
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload: usize = ck.header.blocks.iter().map(|b| b.shape[0] * b.shape[1] * 4).sum();
    assert_eq!(bytes.len(), 16 + header_len + payload);
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
    assert!(Checkpoint::from_bytes(b"not a checkpoint at all").is_err());
}

#[test]
fn checkpoint_load_checks_names_and_shapes() {
    let cfg = run_cfg();
    let set = EncoderSet::new(cfg.encoder_config(), 5);
    let mut ck = Checkpoint::new(Kind::Encoders, &cfg, None);
    ck.push_store(&set.store);
    let mut other = EncoderSet::new(cfg.encoder_config(), 6);
    ck.load_into(&mut other.store).unwrap();
    for ((_, _, a), (_, _, b)) in other.store.iter().zip(set.store.iter()) {
        assert!(a.max_abs_diff(b) < 1e-6 * (1.0 + b.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))));
    }
    let wide = RunConfig { dim: 32, ..cfg.clone() };
    let mut wrong = EncoderSet::new(wide.encoder_config(), 5);
    assert!(ck.load_into(&mut wrong.store).is_err());
    ck.header.blocks.remove(0);
    ck.data.remove(0);
    assert!(ck.load_into(&mut other.store).is_err());
}

#[test]
fn zero_epoch_pretraining_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("data"));
    let cfg = RunConfig { pretrain_epochs: 0, ..run_cfg() };
    let out = commands::cmd_pretrain(&cfg, &data, PretrainMode::Rotating, &dir.path().join("pt")).unwrap();
    let mut set = EncoderSet::new(cfg.encoder_config(), cfg.seed);
    set.prop.fit(&mut set.store, &data.data.records.iter().filter_map(|r| r.props).collect::<Vec<_>>());
    let mut init = Checkpoint::new(Kind::Encoders, &cfg, None);
    init.push_store(&set.store);
    for (i, b) in init.header.blocks.iter().enumerate() {
        assert_eq!(out.checkpoint.block(&b.name).unwrap().data, init.block(&b.name).unwrap().data, "{}", b.name);
        assert_eq!(out.checkpoint.data[i], init.data[i]);
    }
    let csv = fs::read_to_string(dir.path().join("pt").join(commands::PRETRAIN_LOSS)).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn pretraining_is_reproducible_and_logs_every_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("data"));
    let cfg = run_cfg();
    commands::cmd_pretrain(&cfg, &data, PretrainMode::Rotating, &dir.path().join("a")).unwrap();
    commands::cmd_pretrain(&cfg, &data, PretrainMode::Rotating, &dir.path().join("b")).unwrap();
    assert_eq!(files(&dir.path().join("a")), files(&dir.path().join("b")));
    let csv = fs::read_to_string(dir.path().join("a").join(commands::PRETRAIN_LOSS)).unwrap();
    assert_eq!(csv.lines().count(), 1 + cfg.pretrain_epochs);
}

#[test]
fn empty_intersection_maps_to_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    let s = SynthSpec { coverage: mkmed_core::align::CoverageProfile { p: [0.0, 1.0, 1.0, 1.0, 1.0], seed: 0 }, ..spec() };
    commands::cmd_generate(&s, dir.path()).unwrap();
    let data = Loaded::open(dir.path()).unwrap();
    let e = commands::cmd_pretrain(&run_cfg(), &data, PretrainMode::Intersection, &dir.path().join("pt")).err().unwrap();
    assert!(matches!(e, CliError::Core(CoreError::EmptyIntersection)));
    assert_eq!(e.exit_code(), 4);
}

#[test]
fn training_without_checkpoint_is_the_pt_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("data"));
    let cfg = run_cfg();
    let out = commands::cmd_train(&cfg, &data, None, None, &dir.path().join("tr")).unwrap();
    let direct = eval::run_variant(&data.refs(), &cfg, Variant::Pt).unwrap();
    assert_eq!(out.variant, "pt");
    assert_eq!(out.trained.log, direct.log);
    assert_eq!(out.trained.best_epoch, direct.best_epoch);
    let log = fs::read_to_string(dir.path().join("tr").join(commands::TRAIN_LOG)).unwrap();
    assert_eq!(log.lines().count(), 1 + cfg.train_epochs);
    // Evaluation from the f32 checkpoint stays close to the in-memory run.
    let r = commands::cmd_evaluate(&out.checkpoint, &data, None, None, &dir.path().join("ev")).unwrap();
    for (name, v) in &r.metrics {
        let i = mkmed_core::eval::MetricValues::NAMES.iter().position(|n| n == name).unwrap();
        let scale = if name == "avg_med" { 1.0 } else { 0.02 };
        assert!((v.mean - direct.report.mean.as_array()[i]).abs() <= scale, "{name}");
    }
}

#[test]
fn train_and_evaluate_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("data"));
    let cfg = run_cfg();
    let pre = commands::cmd_pretrain(&cfg, &data, PretrainMode::Rotating, &dir.path().join("pt")).unwrap();
    for run in ["a", "b"] {
        let root = dir.path().join(run);
        let t = commands::cmd_train(&cfg, &data, Some(&pre.checkpoint), Some(Variant::Full), &root).unwrap();
        let reloaded = Checkpoint::load(&root.join(commands::MODEL_CKPT)).unwrap();
        assert_eq!(reloaded.to_bytes(), t.checkpoint.to_bytes());
        commands::cmd_evaluate(&reloaded, &data, Some(3), None, &root).unwrap();
    }
    assert_eq!(files(&dir.path().join("a")), files(&dir.path().join("b")));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/report.json")).unwrap()).unwrap();
    assert_eq!(report["report_version"], 1);
    let j = report["metrics"]["jaccard"]["mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&j));
    assert_eq!(report["bootstrap"], 3);
}

#[test]
fn learned_table_variant_round_trips_through_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("data"));
    let cfg = run_cfg();
    let t = commands::cmd_train(&cfg, &data, None, Some(Variant::Mol), dir.path()).unwrap();
    assert!(t.checkpoint.block("rec.med_table").is_some());
    assert!(t.checkpoint.block("meds.fixed").is_none());
    commands::cmd_evaluate(&t.checkpoint, &data, Some(2), None, dir.path()).unwrap();
}

#[test]
fn vocabulary_mismatch_maps_to_exit_five() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("a"));
    let t = commands::cmd_train(&run_cfg(), &data, None, None, &dir.path().join("tr")).unwrap();
    commands::cmd_generate(&SynthSpec { n_diseases: 12, ..spec() }, &dir.path().join("b")).unwrap();
    let other = Loaded::open(&dir.path().join("b")).unwrap();
    let e = commands::cmd_evaluate(&t.checkpoint, &other, None, None, dir.path()).err().unwrap();
    assert_eq!(e.exit_code(), 5);
}

#[test]
fn experiment_names_and_long_format() {
    assert_eq!(Experiment::from_name("param-sweep").unwrap(), Experiment::ParamSweep);
    assert_eq!(Experiment::from_name("sweep").unwrap_err().exit_code(), 2);
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("data"));
    let cfg = RunConfig { train_epochs: 1, pretrain_epochs: 1, ..run_cfg() };
    let t = commands::cmd_experiment(Experiment::Ablation, &cfg, &data, &[0, 1], 2, dir.path()).unwrap();
    // 4 variants × (5 metrics, 5 deviations, dispersion) × 2 seeds.
    assert_eq!(t.rows().len(), 4 * 11 * 2);
    assert!(t.rows()[..44].iter().all(|r| r.seed == 0) && t.rows()[44..].iter().all(|r| r.seed == 1));
    let csv = fs::read_to_string(dir.path().join("experiment_ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 88);
    let hash0 = mkmed::checkpoint::hash_hex(&RunConfig { seed: 0, ..cfg.clone() });
    assert!(t.rows()[..44].iter().all(|r| r.config_hash == hash0));
    let serial = commands::cmd_experiment(Experiment::Ablation, &cfg, &data, &[0, 1], 1, &dir.path().join("s")).unwrap();
    assert_eq!(serial, t);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.toml");
    fs::write(&spec_path, SPEC).unwrap();
    let data = dir.path().join("data");
    let st = bin().args(["generate", "--config"]).arg(&spec_path).arg("--out").arg(&data).output().unwrap();
    assert!(st.status.success());
    assert!(String::from_utf8_lossy(&st.stdout).contains("all modalities"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "n_molecules = 10\nbogus = 1\n").unwrap();
    let st = bin().args(["generate", "--config"]).arg(&bad).arg("--out").arg(dir.path().join("x")).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("bogus"));

    let st = bin().args(["experiment", "nonsense", "--data"]).arg(&data).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    let st = bin().args(["train", "--variant", "huge", "--data"]).arg(&data).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    let st = bin().args(["evaluate", "--data"]).arg(&data).arg("--checkpoint").arg(dir.path().join("missing.ckpt")).output().unwrap();
    assert_eq!(st.status.code(), Some(1));
}

#[test]
fn thread_cap_parses() {
    // Only this test touches the variable.
    std::env::set_var("MKMED_THREADS", "3");
    assert_eq!(config::thread_cap().unwrap(), 3);
    std::env::set_var("MKMED_THREADS", "0");
    assert!(config::thread_cap().is_err());
    std::env::remove_var("MKMED_THREADS");
    assert_eq!(config::thread_cap().unwrap(), 1);
}
