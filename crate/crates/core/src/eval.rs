//! Recommendation metrics, bootstrap evaluation, reference predictors and
//! the experiment drivers.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::align::{Modality, PretrainMode, PretrainReport};
use crate::clinical::{indices_of, threshold_select, DdiMatrix, PatientHistory, Visit, Vocab};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::math;
use crate::pipeline::{self, DataRefs, EpochLog, Pretrained};
use crate::rng;
use crate::synthgen::RuleTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdiMode {
    /// Interacting predicted pairs over all predicted pairs.
    Standard,
    /// Interacting predicted pairs over ground-truth pairs.
    PaperLiteral,
}

impl DdiMode {
    pub fn name(self) -> &'static str {
        match self {
            DdiMode::Standard => "standard",
            DdiMode::PaperLiteral => "paper-literal",
        }
    }

    pub fn from_name(s: &str) -> Option<DdiMode> {
        [DdiMode::Standard, DdiMode::PaperLiteral].into_iter().find(|m| m.name() == s)
    }
}

fn same_shape<A, B>(a: &[Vec<A>], b: &[Vec<B>]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(alloc::format!("{} predictions for {} visits", a.len(), b.len())));
    }
    if let Some((i, _)) = a.iter().zip(b).enumerate().find(|(_, (x, y))| x.len() != y.len()) {
        return Err(Error::ShapeMismatch(alloc::format!("visit {i}: vector widths differ")));
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { 0.0 } else { s / n as f64 }
}

fn counts(p: &[bool], t: &[bool]) -> (usize, usize, usize) {
    let inter = p.iter().zip(t).filter(|(a, b)| **a && **b).count();
    (inter, p.iter().filter(|&&x| x).count(), t.iter().filter(|&&x| x).count())
}

/// Mean per-visit Jaccard; two empty sets score 1.
pub fn jaccard(preds: &[Vec<bool>], truths: &[Vec<bool>]) -> Result<f64> {
    same_shape(preds, truths)?;
    Ok(mean(preds.iter().zip(truths).map(|(p, t)| {
        let (i, np, nt) = counts(p, t);
        let union = np + nt - i;
        if union == 0 { 1.0 } else { i as f64 / union as f64 }
    })))
}

/// Mean per-visit F1 from set precision and recall.
pub fn f1(preds: &[Vec<bool>], truths: &[Vec<bool>]) -> Result<f64> {
    same_shape(preds, truths)?;
    Ok(mean(preds.iter().zip(truths).map(|(p, t)| {
        let (i, np, nt) = counts(p, t);
        let prec = if np == 0 { 0.0 } else { i as f64 / np as f64 };
        let rec = if nt == 0 { 0.0 } else { i as f64 / nt as f64 };
        if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) }
    })))
}

/// Step-sum area under the precision-recall curve per visit, ranking by
/// descending score with ties broken by ascending index.
pub fn prauc(scores: &[Vec<f64>], truths: &[Vec<bool>]) -> Result<f64> {
    same_shape(scores, truths)?;
    Ok(mean(scores.iter().zip(truths).map(|(s, t)| {
        let positives = t.iter().filter(|&&x| x).count();
        if positives == 0 {
            return 0.0;
        }
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        let (mut hits, mut area) = (0usize, 0.0);
        for (k, &i) in order.iter().enumerate() {
            if t[i] {
                hits += 1;
                area += (hits as f64 / (k + 1) as f64) / positives as f64;
            }
        }
        area
    })))
}

pub fn avg_med(preds: &[Vec<bool>]) -> f64 {
    mean(preds.iter().map(|p| p.iter().filter(|&&x| x).count() as f64))
}

fn unordered_pairs(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

/// Share of interacting medication pairs, summed over visits before
/// dividing.
pub fn ddi_rate(preds: &[Vec<bool>], truths: &[Vec<bool>], ddi: &DdiMatrix, mode: DdiMode) -> Result<f64> {
    same_shape(preds, truths)?;
    let (mut hits, mut denom) = (0usize, 0usize);
    for (p, t) in preds.iter().zip(truths) {
        if p.len() != ddi.size() {
            return Err(Error::ShapeMismatch(alloc::format!("{} medications for a {}-wide matrix", p.len(), ddi.size())));
        }
        let idx = indices_of(p);
        for (a, &i) in idx.iter().enumerate() {
            hits += idx[a + 1..].iter().filter(|&&j| ddi.get(i, j)).count();
        }
        denom += match mode {
            DdiMode::Standard => unordered_pairs(idx.len()),
            DdiMode::PaperLiteral => unordered_pairs(t.iter().filter(|&&x| x).count()),
        };
    }
    Ok(if denom == 0 { 0.0 } else { hits as f64 / denom as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricValues {
    pub jaccard: f64,
    pub ddi_rate: f64,
    pub f1: f64,
    pub prauc: f64,
    pub avg_med: f64,
}

impl MetricValues {
    pub const NAMES: [&'static str; 5] = ["jaccard", "ddi_rate", "f1", "prauc", "avg_med"];

    pub fn as_array(&self) -> [f64; 5] {
        [self.jaccard, self.ddi_rate, self.f1, self.prauc, self.avg_med]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        MetricValues { jaccard: a[0], ddi_rate: a[1], f1: a[2], prauc: a[3], avg_med: a[4] }
    }
}

/// Scores and labels for every visit of one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientPredictions {
    pub patient_id: String,
    pub scores: Vec<Vec<f64>>,
    pub truths: Vec<Vec<bool>>,
}

pub fn compute_metrics(
    patients: &[&PatientPredictions],
    ddi: &DdiMatrix,
    delta: f64,
    mode: DdiMode,
) -> Result<MetricValues> {
    let scores: Vec<Vec<f64>> = patients.iter().flat_map(|p| p.scores.iter().cloned()).collect();
    let truths: Vec<Vec<bool>> = patients.iter().flat_map(|p| p.truths.iter().cloned()).collect();
    let preds: Vec<Vec<bool>> = scores.iter().map(|s| threshold_select(s, delta)).collect();
    Ok(MetricValues {
        jaccard: jaccard(&preds, &truths)?,
        ddi_rate: ddi_rate(&preds, &truths, ddi, mode)?,
        f1: f1(&preds, &truths)?,
        prauc: prauc(&scores, &truths)?,
        avg_med: avg_med(&preds),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mean: MetricValues,
    /// Sample standard deviation over resamples (0 for a single resample).
    pub std: MetricValues,
    pub samples: Vec<MetricValues>,
}

/// Evaluate `B` seeded resamples (with replacement, original size) of the
/// test patients. Patients are ordered by id first, so input order does
/// not matter.
pub fn bootstrap_evaluate(
    patients: &[PatientPredictions],
    ddi: &DdiMatrix,
    delta: f64,
    mode: DdiMode,
    b: usize,
    seed: u64,
) -> Result<MetricsReport> {
    if patients.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if b == 0 {
        return Err(Error::InvalidConfig(String::from("bootstrap needs at least one resample")));
    }
    let mut sorted: Vec<&PatientPredictions> = patients.iter().collect();
    sorted.sort_by(|a, c| a.patient_id.cmp(&c.patient_id));
    let n = sorted.len();
    let mut samples = Vec::with_capacity(b);
    for s in 0..b {
        let mut r = rng::stream(rng::mix(seed, s as u64), rng::streams::BOOTSTRAP);
        let pick: Vec<&PatientPredictions> = (0..n).map(|_| sorted[r.random_range(0..n)]).collect();
        samples.push(compute_metrics(&pick, ddi, delta, mode)?);
    }
    Ok(summarize(samples))
}

pub fn summarize(samples: Vec<MetricValues>) -> MetricsReport {
    let n = samples.len();
    let mut m = [0.0; 5];
    let mut sd = [0.0; 5];
    for k in 0..5 {
        let xs: Vec<f64> = samples.iter().map(|s| s.as_array()[k]).collect();
        m[k] = xs.iter().sum::<f64>() / n.max(1) as f64;
        sd[k] = if n < 2 {
            0.0
        } else {
            math::sqrt(xs.iter().map(|x| (x - m[k]) * (x - m[k])).sum::<f64>() / (n - 1) as f64)
        };
    }
    MetricsReport { mean: MetricValues::from_array(m), std: MetricValues::from_array(sd), samples }
}

/// Per disease, every medication co-prescribed in at least half of the
/// training visits with that disease; a visit gets the union over its
/// diseases.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyBaseline {
    pub per_disease: Vec<Vec<usize>>,
    pub n_medications: usize,
}

impl FrequencyBaseline {
    pub fn fit(train: &[&PatientHistory], vocab: Vocab) -> Self {
        let mut seen = vec![0usize; vocab.diseases];
        let mut co = vec![vec![0usize; vocab.medications]; vocab.diseases];
        for v in train.iter().flat_map(|p| &p.visits) {
            for &d in &v.diseases {
                seen[d] += 1;
                v.medications.iter().for_each(|&m| co[d][m] += 1);
            }
        }
        let per_disease = (0..vocab.diseases)
            .map(|d| (0..vocab.medications).filter(|&m| seen[d] > 0 && 2 * co[d][m] >= seen[d]).collect())
            .collect();
        FrequencyBaseline { per_disease, n_medications: vocab.medications }
    }

    pub fn predict(&self, visit: &Visit) -> Vec<bool> {
        let mut out = vec![false; self.n_medications];
        for &d in &visit.diseases {
            self.per_disease[d].iter().for_each(|&m| out[m] = true);
        }
        out
    }

    pub fn predictions(&self, patients: &[&PatientHistory]) -> Vec<PatientPredictions> {
        hard_predictions(patients, self.n_medications, |_, v| self.predict(v))
    }
}

fn hard_predictions(
    patients: &[&PatientHistory],
    n: usize,
    mut f: impl FnMut(&PatientHistory, &Visit) -> Vec<bool>,
) -> Vec<PatientPredictions> {
    patients
        .iter()
        .map(|p| PatientPredictions {
            patient_id: p.patient_id.clone(),
            scores: p.visits.iter().map(|v| f(p, v).iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).collect(),
            truths: p.visits.iter().map(|v| v.medication_mask(n)).collect(),
        })
        .collect()
}

/// Noise-free predictions from the generating rules.
pub fn oracle_predictions(rules: &RuleTable, patients: &[&PatientHistory], n: usize) -> Vec<PatientPredictions> {
    hard_predictions(patients, n, |p, v| {
        let mut out = vec![false; n];
        rules.prescribe(v, rules.chronic_of(&p.patient_id)).into_iter().for_each(|m| out[m] = true);
        out
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Learnable medication table instead of molecular embeddings.
    Mol,
    /// No pre-training.
    Pt,
    /// Pre-training against the structure modality only.
    Pm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Mol, Variant::Pt, Variant::Pm];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Mol => "mol",
            Variant::Pt => "pt",
            Variant::Pm => "pm",
        }
    }

    pub fn from_name(s: &str) -> Result<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| Error::UnknownVariant(String::from(s)))
    }

    /// Modalities used for pre-training (empty: none). The learnable-table
    /// variant never reads the cross-modal encoder, so it skips pre-training.
    pub fn modalities(self, cfg: &RunConfig) -> Result<Vec<Modality>> {
        Ok(match self {
            Variant::Full => cfg.modalities()?,
            Variant::Pt | Variant::Mol => Vec::new(),
            Variant::Pm => vec![Modality::Structure],
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    /// Unresampled test metrics.
    pub test: MetricValues,
    pub pretrain: Option<PretrainReport>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Dispersion of the cross-modal corpus embeddings after pre-training.
    pub dispersion: f64,
}

/// Train and evaluate the recommender on top of already pre-trained
/// encoders.
pub fn run_downstream(data: &DataRefs<'_>, cfg: &RunConfig, pre: &Pretrained, learned_meds: bool) -> Result<RunOutcome> {
    let split = pipeline::split_patients(data.patients, cfg.seed);
    let trained = pipeline::train_from_pretrained(data, cfg, pre, learned_meds, &split)?;
    let test: Vec<&PatientHistory> = split.test.iter().map(|&i| &data.patients[i]).collect();
    let preds = pipeline::predict_patients(&trained.model, &trained.meds, &test, cfg.train_batch)?;
    let mode = cfg.ddi_mode()?;
    let report = bootstrap_evaluate(&preds, data.ddi, cfg.delta, mode, cfg.bootstrap, cfg.seed)?;
    let plain: Vec<&PatientPredictions> = preds.iter().collect();
    let test = compute_metrics(&plain, data.ddi, cfg.delta, mode)?;
    Ok(RunOutcome {
        report,
        test,
        pretrain: pre.report.clone(),
        log: trained.log,
        best_epoch: trained.best_epoch,
        dispersion: pre.dispersion,
    })
}

pub fn run_variant(data: &DataRefs<'_>, cfg: &RunConfig, variant: Variant) -> Result<RunOutcome> {
    let pre = pipeline::pretrain_encoders(data, cfg, &variant.modalities(cfg)?, PretrainMode::Rotating)?;
    run_downstream(data, cfg, &pre, variant == Variant::Mol)
}

pub fn run_ablation(data: &DataRefs<'_>, cfg: &RunConfig, variant: &str) -> Result<RunOutcome> {
    run_variant(data, cfg, Variant::from_name(variant)?)
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub k: usize,
    pub modalities: Vec<Modality>,
    pub outcome: RunOutcome,
}

/// Rotating pre-training over the first `k` modalities of
/// [`Modality::SWEEP`] for each requested `k` (0 = none).
pub fn run_modality_sweep(data: &DataRefs<'_>, cfg: &RunConfig, ks: &[usize]) -> Result<Vec<SweepPoint>> {
    ks.iter()
        .map(|&k| {
            let mods: Vec<Modality> = Modality::SWEEP[..k.min(5)].to_vec();
            let pre = pipeline::pretrain_encoders(data, cfg, &mods, PretrainMode::Rotating)?;
            Ok(SweepPoint { k, modalities: mods, outcome: run_downstream(data, cfg, &pre, false)? })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AlignmentRow {
    pub k: usize,
    pub mode: PretrainMode,
    pub pools: Vec<(Modality, usize)>,
    /// `None` when the intersection is empty.
    pub outcome: Option<RunOutcome>,
}

pub fn run_alignment_comparison(data: &DataRefs<'_>, cfg: &RunConfig, ks: &[usize]) -> Result<Vec<AlignmentRow>> {
    let mut rows = Vec::new();
    for &k in ks {
        let mods: Vec<Modality> = Modality::SWEEP[..k.min(5)].to_vec();
        for mode in [PretrainMode::Rotating, PretrainMode::Intersection] {
            let pc = cfg.pretrain_config(mods.clone(), mode);
            let pools = mods.iter().map(|&m| (m, crate::align::candidate_pool(data.records, &pc, m).len())).collect();
            let outcome = match pipeline::pretrain_encoders(data, cfg, &mods, mode) {
                Ok(pre) => Some(run_downstream(data, cfg, &pre, false)?),
                Err(Error::EmptyIntersection) | Err(Error::ModalityUnderfilled { .. }) => None,
                Err(e) => return Err(e),
            };
            rows.push(AlignmentRow { k, mode, pools, outcome });
        }
    }
    Ok(rows)
}

pub const SWEEP_DIMS: [usize; 4] = [32, 64, 128, 256];
pub const SWEEP_LAYERS: [usize; 4] = [2, 3, 4, 5];

#[derive(Debug, Clone)]
pub struct ParamPoint {
    pub dim: usize,
    pub gin_layers: usize,
    pub outcome: RunOutcome,
}

/// Full pipeline over embedding widths (at the base depth) and graph
/// depths (at the base width).
pub fn run_param_sweep(data: &DataRefs<'_>, cfg: &RunConfig, dims: &[usize], layers: &[usize]) -> Result<Vec<ParamPoint>> {
    let mut grid: Vec<(usize, usize)> = dims.iter().map(|&d| (d, cfg.gin_layers)).collect();
    grid.extend(layers.iter().map(|&l| (cfg.dim, l)));
    grid.dedup();
    grid.into_iter()
        .map(|(dim, gin_layers)| {
            let mut c = cfg.clone();
            c.dim = dim;
            c.gin_layers = gin_layers;
            if dim % c.heads != 0 {
                c.heads = 1;
            }
            c.validate()?;
            Ok(ParamPoint { dim, gin_layers, outcome: run_variant(data, &c, Variant::Full)? })
        })
        .collect()
}
