//! Stage wiring: knowledge-graph embedding, contrastive pre-training,
//! recommender training with validation-based selection, and prediction.

use alloc::vec::Vec;

use crate::align::{self, Modality, MultimodalRecord, PreparedCorpus, PretrainMode, PretrainReport};
use crate::autograd::Tape;
use crate::clinical::{DdiMatrix, MedTable, PatientHistory, PatientModel, Vocab};
use crate::config::RunConfig;
use crate::encoders::{transe_train, CrossModalInput, EncoderSet, KgEmbedding, TransEConfig};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, PatientPredictions};
use crate::molkit::KgTriple;
use crate::nn::{Adam, AdamConfig};
use crate::objective::{beta_controller, combined_grad};
use crate::rng;
use crate::tensor::Tensor;

/// Borrowed view of one dataset.
#[derive(Clone, Copy)]
pub struct DataRefs<'a> {
    pub records: &'a [MultimodalRecord],
    pub prepared: &'a PreparedCorpus,
    pub patients: &'a [PatientHistory],
    pub ddi: &'a DdiMatrix,
    pub vocab: Vocab,
}

impl DataRefs<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.ddi.size() != self.vocab.medications {
            return Err(Error::VocabMismatch(alloc::format!(
                "interaction matrix covers {} medications, vocabulary has {}",
                self.ddi.size(),
                self.vocab.medications
            )));
        }
        if self.records.len() < self.vocab.medications {
            return Err(Error::VocabMismatch(alloc::format!(
                "{} medications but only {} molecules",
                self.vocab.medications,
                self.records.len()
            )));
        }
        self.patients.iter().try_for_each(|p| p.validate(&self.vocab))
    }
}

/// Patient indices per partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded 2/3, 1/6, 1/6 split by patient.
pub fn split_patients(patients: &[PatientHistory], seed: u64) -> Split {
    let n = patients.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| patients[a].patient_id.cmp(&patients[b].patient_id));
    let mut r = rng::stream(seed, rng::streams::SPLIT);
    rng::shuffle(&mut r, &mut order);
    let n_train = (2 * n).div_ceil(3);
    let n_valid = (n - n_train) / 2;
    let test = order.split_off(n_train + n_valid);
    let valid = order.split_off(n_train);
    Split { train: order, valid, test }
}

/// All published triples and the entity count they need.
pub fn kg_triples(records: &[MultimodalRecord]) -> (Vec<KgTriple>, usize, usize) {
    let triples: Vec<KgTriple> = records.iter().filter_map(|r| r.kg.as_ref()).flat_map(|k| k.triples.iter().copied()).collect();
    let n_entities = triples.iter().map(|t| t.head.max(t.tail) + 1).max().unwrap_or(0);
    let n_relations = triples.iter().map(|t| t.relation + 1).max().unwrap_or(0);
    (triples, n_entities, n_relations)
}

pub fn train_kg(records: &[MultimodalRecord], cfg: &RunConfig) -> Result<KgEmbedding> {
    let (triples, n_entities, n_relations) = kg_triples(records);
    let tc = TransEConfig { dim: cfg.dim, epochs: cfg.transe_epochs, lr: cfg.transe_lr, seed: cfg.seed };
    transe_train(&triples, n_entities, n_relations, &tc)
}

/// Encoders after (optional) pre-training.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub set: EncoderSet,
    pub kg: Option<KgEmbedding>,
    /// `None` when no modality was configured.
    pub report: Option<PretrainReport>,
    /// Dispersion of the corpus' cross-modal embeddings.
    pub dispersion: f64,
}

pub fn corpus_embeddings(set: &EncoderSet, prepared: &PreparedCorpus, rows: usize) -> Result<Tensor> {
    let inputs: Vec<&CrossModalInput> = prepared.cross.iter().take(rows).collect();
    set.cross.embed_all(&set.store, &inputs, 64)
}

/// Fresh encoders, pre-trained against `mods` (nothing when empty).
pub fn pretrain_encoders(data: &DataRefs<'_>, cfg: &RunConfig, mods: &[Modality], mode: PretrainMode) -> Result<Pretrained> {
    let mut set = EncoderSet::new(cfg.encoder_config(), cfg.seed);
    set.prop.fit(&mut set.store, &data.records.iter().filter_map(|r| r.props).collect::<Vec<_>>());
    let kg = if mods.contains(&Modality::Kg) { Some(train_kg(data.records, cfg)?) } else { None };
    let report = if mods.is_empty() {
        None
    } else {
        let pc = cfg.pretrain_config(mods.to_vec(), mode);
        Some(align::pretrain(data.records, data.prepared, &mut set, kg.as_ref(), &pc)?)
    };
    let dispersion = align::dispersion(&corpus_embeddings(&set, data.prepared, data.records.len())?)?;
    Ok(Pretrained { set, kg, report, dispersion })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean combined loss per training visit.
    pub train_loss: f64,
    pub val_jaccard: f64,
    pub val_ddi: f64,
    /// β used during this epoch.
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: PatientModel,
    pub meds: MedTable,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (`None`-like 0 with no epochs).
    pub best_epoch: usize,
}

pub fn predict_patients(
    model: &PatientModel,
    meds: &MedTable,
    patients: &[&PatientHistory],
    batch: usize,
) -> Result<Vec<PatientPredictions>> {
    let scores = model.score_all(meds, patients, batch)?;
    let mut it = scores.into_iter();
    Ok(patients
        .iter()
        .map(|p| PatientPredictions {
            patient_id: p.patient_id.clone(),
            scores: (0..p.visits.len()).map(|_| it.next().expect("one score row per visit")).collect(),
            truths: p.visits.iter().map(|v| v.medication_mask(model.vocab.medications)).collect(),
        })
        .collect())
}

/// Train the patient encoder and head with the combined loss; keeps the
/// parameters of the epoch with the best validation Jaccard.
pub fn train_recommender(
    train: &[&PatientHistory],
    valid: &[&PatientHistory],
    vocab: Vocab,
    fixed_meds: Option<Tensor>,
    ddi: &DdiMatrix,
    cfg: &RunConfig,
) -> Result<Trained> {
    let mut model = PatientModel::new(vocab, cfg.dim, cfg.gru_hidden, cfg.head_hidden, cfg.seed);
    let meds = match fixed_meds {
        Some(t) => MedTable::Fixed(t),
        None => model.add_med_table(cfg.seed),
    };
    let mode = cfg.ddi_mode()?;
    let mut opt = Adam::new(AdamConfig { weight_decay: cfg.weight_decay, ..AdamConfig::new(cfg.train_lr) });
    let mut weights = cfg.loss_weights();
    weights.validate()?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut r = rng::stream(cfg.seed, rng::streams::TRAIN);
    let mut best: Option<(f64, usize, crate::nn::ParamStore)> = None;
    let mut log = Vec::with_capacity(cfg.train_epochs);
    let n_meds = vocab.medications;
    for epoch in 0..cfg.train_epochs {
        rng::shuffle(&mut r, &mut order);
        let (mut total, mut visits) = (0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.train_batch).enumerate() {
            let batch: Vec<&PatientHistory> = chunk.iter().map(|&i| train[i]).collect();
            let mut tape = Tape::new();
            let out = model.forward_batch(&mut tape, &meds, &batch)?;
            let scores = tape.value(out.scores).clone();
            let rows = out.rows.len();
            let mut seed = Tensor::zeros(rows, n_meds);
            for (row, &(pi, t)) in out.rows.iter().enumerate() {
                let truth = batch[pi].visits[t].medication_mask(n_meds);
                let (l, g) = combined_grad(scores.row(row), &truth, ddi, &weights)?;
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
                total += l;
                seed.row_mut(row).iter_mut().zip(g).for_each(|(o, x)| *o = x / rows as f64);
            }
            visits += rows;
            let grads = tape.backward_from(&[(out.scores, seed)]);
            opt.step(&mut model.store, &grads.params());
        }
        let val = if valid.is_empty() {
            None
        } else {
            let preds = predict_patients(&model, &meds, valid, cfg.train_batch)?;
            let refs: Vec<&PatientPredictions> = preds.iter().collect();
            Some(compute_metrics(&refs, ddi, cfg.delta, mode)?)
        };
        let (vj, vd) = val.map_or((0.0, 0.0), |m| (m.jaccard, m.ddi_rate));
        log.push(EpochLog {
            epoch,
            train_loss: if visits == 0 { 0.0 } else { total / visits as f64 },
            val_jaccard: vj,
            val_ddi: vd,
            beta: weights.beta,
        });
        if best.as_ref().is_none_or(|(bj, _, _)| vj > *bj) {
            best = Some((vj, epoch, model.store.clone()));
        }
        weights.beta = beta_controller(vd, &weights);
        if !weights.controller {
            weights.beta = cfg.beta;
        }
    }
    let best_epoch = match best {
        Some((_, e, store)) => {
            model.store = store;
            e
        }
        None => 0,
    };
    Ok(Trained { model, meds, log, best_epoch })
}

/// Train the recommender on the split's training patients, using the
/// cross-modal medication embeddings of `pre` (or a learned table).
pub fn train_from_pretrained(
    data: &DataRefs<'_>,
    cfg: &RunConfig,
    pre: &Pretrained,
    learned_meds: bool,
    split: &Split,
) -> Result<Trained> {
    data.validate()?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &data.patients[i]).collect::<Vec<_>>();
    let fixed = if learned_meds { None } else { Some(corpus_embeddings(&pre.set, data.prepared, data.vocab.medications)?) };
    train_recommender(&pick(&split.train), &pick(&split.valid), data.vocab, fixed, data.ddi, cfg)
}
