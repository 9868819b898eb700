//! The five subcommands as library functions; `main` only parses
//! arguments and maps errors to exit codes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mkmed_core::align::{self, coverage_stats, CoverageStats, Modality, PreparedCorpus, PretrainMode, PretrainReport};
use mkmed_core::clinical::{MedTable, PatientHistory, PatientModel};
use mkmed_core::config::RunConfig;
use mkmed_core::encoders::EncoderSet;
use mkmed_core::eval::{self, bootstrap_evaluate, MetricValues, RunOutcome, Variant};
use mkmed_core::pipeline::{self, corpus_embeddings, DataRefs, Pretrained, Trained};
use mkmed_core::synthgen::{self, SynthSpec};
use mkmed_core::Error as CoreError;

use crate::checkpoint::{hash_hex, Checkpoint, Kind};
use crate::error::{CliError, CliResult};
use crate::formats::{self, Dataset};
use crate::report::{self, ExperimentRow, ExperimentTable, MetricReport};

pub const PRETRAIN_CKPT: &str = "pretrain.ckpt";
pub const PRETRAIN_LOSS: &str = "pretrain_loss.csv";
pub const MODEL_CKPT: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

pub fn parse_mode(s: &str) -> CliResult<PretrainMode> {
    match s {
        "rotating" => Ok(PretrainMode::Rotating),
        "intersection" => Ok(PretrainMode::Intersection),
        _ => Err(CliError::Config(format!("unknown mode {s:?} (expected rotating or intersection)"))),
    }
}

/// Dataset plus the encoder inputs derived from it.
pub struct Loaded {
    pub data: Dataset,
    pub prepared: PreparedCorpus,
}

impl Loaded {
    pub fn new(data: Dataset) -> CliResult<Self> {
        let prepared = PreparedCorpus::new(&data.records)?;
        Ok(Loaded { data, prepared })
    }

    pub fn open(dir: &Path) -> CliResult<Self> {
        Loaded::new(formats::read_dataset(dir)?)
    }

    pub fn refs(&self) -> DataRefs<'_> {
        DataRefs {
            records: &self.data.records,
            prepared: &self.prepared,
            patients: &self.data.patients,
            ddi: &self.data.ddi,
            vocab: self.data.vocab,
        }
    }
}

pub fn coverage_summary(s: &CoverageStats) -> String {
    let mut out = format!("records: {}\n", s.total);
    for (m, n) in &s.per_modality {
        writeln!(out, "{}: {n}", m.name()).expect("string write");
    }
    for (a, b, n) in &s.pairwise {
        writeln!(out, "{}+{}: {n}", a.name(), b.name()).expect("string write");
    }
    writeln!(out, "all modalities: {} ({:.4})", s.full_intersection, s.full_ratio).expect("string write");
    out
}

pub fn cmd_generate(spec: &SynthSpec, out: &Path) -> CliResult<CoverageStats> {
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let data = synthgen::generate(spec)?;
    formats::write_dataset(out, &data)?;
    Ok(coverage_stats(&data.records, &Modality::ALL))
}

pub fn encoders_checkpoint(cfg: &RunConfig, pre: &Pretrained, mode: PretrainMode) -> Checkpoint {
    let mut ck = Checkpoint::new(Kind::Encoders, cfg, None)
        .meta("mode", mode.name())
        .meta("modalities", cfg.pretrain_modalities.join(" "))
        .meta("dispersion", pre.dispersion);
    ck.push_store(&pre.set.store);
    if let Some(kg) = &pre.kg {
        ck.push("kg.entities", &kg.entities);
        ck.push("kg.relations", &kg.relations);
    }
    ck
}

pub fn load_encoders(ck: &Checkpoint) -> CliResult<EncoderSet> {
    if ck.header.kind != Kind::Encoders {
        return Err(CliError::Config("expected an encoder checkpoint from `pretrain`".into()));
    }
    let cfg = &ck.header.config;
    let mut set = EncoderSet::new(cfg.encoder_config(), cfg.seed);
    ck.load_into(&mut set.store)?;
    Ok(set)
}

pub struct PretrainOutput {
    pub checkpoint: Checkpoint,
    pub report: Option<PretrainReport>,
}

pub fn cmd_pretrain(cfg: &RunConfig, data: &Loaded, mode: PretrainMode, out: &Path) -> CliResult<PretrainOutput> {
    let mods = cfg.modalities()?;
    let pre = pipeline::pretrain_encoders(&data.refs(), cfg, &mods, mode)?;
    let checkpoint = encoders_checkpoint(cfg, &pre, mode);
    ensure_dir(out)?;
    checkpoint.save(&out.join(PRETRAIN_CKPT))?;
    report::write_text(&out.join(PRETRAIN_LOSS), &report::pretrain_loss_csv(pre.report.as_ref()))?;
    Ok(PretrainOutput { checkpoint, report: pre.report })
}

pub fn recommender_checkpoint(cfg: &RunConfig, trained: &Trained, variant: &str) -> Checkpoint {
    let mut ck = Checkpoint::new(Kind::Recommender, cfg, Some(trained.model.vocab))
        .meta("variant", variant)
        .meta("best_epoch", trained.best_epoch)
        .meta("model_selection", report::SELECTION);
    ck.push_store(&trained.model.store);
    if let MedTable::Fixed(t) = &trained.meds {
        ck.push("meds.fixed", t);
    }
    ck
}

pub fn load_recommender(ck: &Checkpoint) -> CliResult<(PatientModel, MedTable)> {
    if ck.header.kind != Kind::Recommender {
        return Err(CliError::Config("expected a recommender checkpoint from `train`".into()));
    }
    let cfg = &ck.header.config;
    let vocab = ck.header.vocab.ok_or_else(|| CliError::Config("recommender checkpoint lacks vocabulary sizes".into()))?.into();
    let mut model = PatientModel::new(vocab, cfg.dim, cfg.gru_hidden, cfg.head_hidden, cfg.seed);
    let meds = match ck.block("meds.fixed") {
        Some(t) => MedTable::Fixed(t),
        None => model.add_med_table(cfg.seed),
    };
    ck.load_into(&mut model.store)?;
    Ok((model, meds))
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub trained: Trained,
    pub variant: String,
}

/// Encoders for the downstream stage. A checkpoint supplies pre-trained
/// encoders; otherwise `variant` decides (none given: no pre-training).
pub fn downstream_encoders(
    data: &Loaded,
    cfg: &RunConfig,
    checkpoint: Option<&Checkpoint>,
    variant: Option<Variant>,
) -> CliResult<(Pretrained, bool, String)> {
    match (checkpoint, variant) {
        (Some(_), Some(v @ (Variant::Pt | Variant::Mol))) => {
            Err(CliError::Config(format!("variant {} does not use a pre-trained checkpoint", v.name())))
        }
        (Some(ck), v) => {
            let set = load_encoders(ck)?;
            if set.config.dim != cfg.dim {
                return Err(CliError::Config(format!("checkpoint dim {} differs from config dim {}", set.config.dim, cfg.dim)));
            }
            let dispersion = align::dispersion(&corpus_embeddings(&set, &data.prepared, data.data.records.len())?)?;
            let name = v.map_or("checkpoint", |v| v.name()).to_string();
            Ok((Pretrained { set, kg: None, report: None, dispersion }, false, name))
        }
        (None, v) => {
            let v = v.unwrap_or(Variant::Pt);
            let pre = pipeline::pretrain_encoders(&data.refs(), cfg, &v.modalities(cfg)?, PretrainMode::Rotating)?;
            Ok((pre, v == Variant::Mol, v.name().to_string()))
        }
    }
}

pub fn cmd_train(
    cfg: &RunConfig,
    data: &Loaded,
    checkpoint: Option<&Checkpoint>,
    variant: Option<Variant>,
    out: &Path,
) -> CliResult<TrainOutput> {
    let refs = data.refs();
    refs.validate()?;
    let (pre, learned, variant) = downstream_encoders(data, cfg, checkpoint, variant)?;
    let split = pipeline::split_patients(&data.data.patients, cfg.seed);
    let trained = pipeline::train_from_pretrained(&refs, cfg, &pre, learned, &split)?;
    let checkpoint = recommender_checkpoint(cfg, &trained, &variant);
    ensure_dir(out)?;
    checkpoint.save(&out.join(MODEL_CKPT))?;
    report::write_text(&out.join(TRAIN_LOG), &report::training_log_csv(&trained.log, trained.best_epoch))?;
    Ok(TrainOutput { checkpoint, trained, variant })
}

/// Bootstrap evaluation on the test split implied by the checkpoint's
/// seed. `seed` overrides only the resampling seed.
pub fn cmd_evaluate(ck: &Checkpoint, data: &Loaded, bootstrap: Option<usize>, seed: Option<u64>, out: &Path) -> CliResult<MetricReport> {
    let cfg = &ck.header.config;
    let vocab: mkmed_core::clinical::Vocab =
        ck.header.vocab.ok_or_else(|| CliError::Config("recommender checkpoint lacks vocabulary sizes".into()))?.into();
    if vocab != data.data.vocab {
        return Err(CoreError::VocabMismatch(format!("checkpoint vocabulary {vocab:?} differs from dataset {:?}", data.data.vocab)).into());
    }
    data.refs().validate()?;
    let (model, meds) = load_recommender(ck)?;
    let split = pipeline::split_patients(&data.data.patients, cfg.seed);
    let test: Vec<&PatientHistory> = split.test.iter().map(|&i| &data.data.patients[i]).collect();
    let preds = pipeline::predict_patients(&model, &meds, &test, cfg.train_batch)?;
    let b = bootstrap.unwrap_or(cfg.bootstrap);
    let s = seed.unwrap_or(cfg.seed);
    let mode = cfg.ddi_mode()?;
    let r = bootstrap_evaluate(&preds, &data.data.ddi, cfg.delta, mode, b, s)?;
    let report = MetricReport::new(&r, ck.header.config_hash.clone(), s, mode.name(), cfg.delta, test.len());
    ensure_dir(out)?;
    report.write(out)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Ablation,
    ModalitySweep,
    AlignmentComparison,
    ParamSweep,
}

impl Experiment {
    pub const ALL: [Experiment; 4] =
        [Experiment::Ablation, Experiment::ModalitySweep, Experiment::AlignmentComparison, Experiment::ParamSweep];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Ablation => "ablation",
            Experiment::ModalitySweep => "modality-sweep",
            Experiment::AlignmentComparison => "alignment-comparison",
            Experiment::ParamSweep => "param-sweep",
        }
    }

    pub fn from_name(s: &str) -> CliResult<Self> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| CliError::UnknownExperiment(s.to_string()))
    }
}

struct Rows<'a> {
    table: ExperimentTable,
    experiment: &'a str,
    seed: u64,
    hash: String,
}

impl Rows<'_> {
    fn push(&mut self, configuration: &str, metric: &str, value: Option<f64>) {
        self.table.push(ExperimentRow {
            experiment: self.experiment.to_string(),
            configuration: configuration.to_string(),
            seed: self.seed,
            config_hash: self.hash.clone(),
            metric: metric.to_string(),
            value,
        });
    }

    /// Bootstrap means and standard deviations, plus dispersion.
    fn outcome(&mut self, configuration: &str, o: Option<&RunOutcome>) {
        let mean = o.map(|o| o.report.mean.as_array());
        let std = o.map(|o| o.report.std.as_array());
        for (i, name) in MetricValues::NAMES.iter().enumerate() {
            self.push(configuration, name, mean.map(|m| m[i]));
            self.push(configuration, &format!("{name}_std"), std.map(|s| s[i]));
        }
        self.push(configuration, "dispersion", o.map(|o| o.dispersion));
    }
}

pub fn run_experiment(exp: Experiment, data: &Loaded, cfg: &RunConfig) -> CliResult<ExperimentTable> {
    let refs = data.refs();
    refs.validate()?;
    let mut rows = Rows { table: ExperimentTable::default(), experiment: exp.name(), seed: cfg.seed, hash: hash_hex(cfg) };
    match exp {
        Experiment::Ablation => {
            for v in Variant::ALL {
                let o = eval::run_variant(&refs, cfg, v)?;
                rows.outcome(v.name(), Some(&o));
            }
        }
        Experiment::ModalitySweep => {
            for p in eval::run_modality_sweep(&refs, cfg, &[0, 1, 2, 3, 4, 5])? {
                rows.outcome(&format!("k={}", p.k), Some(&p.outcome));
            }
        }
        Experiment::AlignmentComparison => {
            for r in eval::run_alignment_comparison(&refs, cfg, &[1, 2, 3, 4, 5])? {
                let name = format!("k={}/{}", r.k, r.mode.name());
                for (m, n) in &r.pools {
                    rows.push(&name, &format!("pool_{}", m.name()), Some(*n as f64));
                }
                rows.outcome(&name, r.outcome.as_ref());
            }
        }
        Experiment::ParamSweep => {
            for p in eval::run_param_sweep(&refs, cfg, &eval::SWEEP_DIMS, &eval::SWEEP_LAYERS)? {
                rows.outcome(&format!("dim={}/layers={}", p.dim, p.gin_layers), Some(&p.outcome));
            }
        }
    }
    Ok(rows.table)
}

/// Runs every seed, at most `threads` at a time; rows are ordered by seed
/// regardless of scheduling.
pub fn cmd_experiment(exp: Experiment, cfg: &RunConfig, data: &Loaded, seeds: &[u64], threads: usize, out: &Path) -> CliResult<ExperimentTable> {
    let mut results: Vec<Option<CliResult<ExperimentTable>>> = (0..seeds.len()).map(|_| None).collect();
    for (chunk_seeds, chunk_out) in seeds.chunks(threads.max(1)).zip(results.chunks_mut(threads.max(1))) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk_seeds
                .iter()
                .map(|&seed| {
                    let c = RunConfig { seed, ..cfg.clone() };
                    s.spawn(move || run_experiment(exp, data, &c))
                })
                .collect();
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("experiment thread panicked"));
            }
        });
    }
    let mut table = ExperimentTable::default();
    for r in results {
        table.extend(r.expect("every seed ran")?);
    }
    ensure_dir(out)?;
    report::write_text(&out.join(format!("experiment_{}.csv", exp.name())), &table.to_csv())?;
    Ok(table)
}
