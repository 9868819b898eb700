//! Rotating pairwise contrastive pre-training of the cross-modal encoder
//! against each modality encoder, plus the intersection-only baseline and
//! coverage diagnostics.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::encoders::{CrossModalInput, EncoderSet, GeometricInput, KgEmbedding, MAX_TAU};
use crate::error::{Error, Result};
use crate::math;
use crate::molkit::{Conformer, KgTriple, MoleculeGraph, MoleculeImage, PropertyVector, TextDescription};
use crate::nn::{Adam, AdamConfig, ParamStore};
use crate::rng;
use crate::tensor::{dot, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Image,
    Text,
    Structure,
    Props,
    Kg,
}

impl Modality {
    /// Rotation order used by the schedule.
    pub const ALL: [Modality; 5] = [Modality::Image, Modality::Text, Modality::Structure, Modality::Props, Modality::Kg];
    /// Order in which modalities are added in the modality-count sweep.
    pub const SWEEP: [Modality; 5] = [Modality::Structure, Modality::Text, Modality::Image, Modality::Props, Modality::Kg];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
            Modality::Structure => "structure",
            Modality::Props => "props",
            Modality::Kg => "kg",
        }
    }

    pub fn from_name(s: &str) -> Option<Modality> {
        Modality::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Knowledge-graph facts about one molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct KgFacts {
    pub entity: usize,
    pub triples: Vec<KgTriple>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalRecord {
    pub mol_id: String,
    pub smiles: String,
    pub graph: MoleculeGraph,
    pub image: Option<MoleculeImage>,
    pub text: Option<TextDescription>,
    pub conformer: Option<Conformer>,
    pub props: Option<PropertyVector>,
    pub kg: Option<KgFacts>,
}

impl MultimodalRecord {
    pub fn has(&self, m: Modality) -> bool {
        match m {
            Modality::Image => self.image.is_some(),
            Modality::Text => self.text.is_some(),
            Modality::Structure => self.conformer.is_some(),
            Modality::Props => self.props.is_some(),
            Modality::Kg => self.kg.is_some(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageProfile {
    /// Presence probability per modality, indexed by [`Modality::index`].
    pub p: [f64; 5],
    pub seed: u64,
}

impl CoverageProfile {
    pub fn uniform(p: f64, seed: u64) -> Self {
        CoverageProfile { p: [p; 5], seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.iter().all(|p| (0.0..=1.0).contains(p)) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(String::from("coverage probabilities must lie in [0, 1]")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainMode {
    Rotating,
    Intersection,
}

impl PretrainMode {
    pub fn name(self) -> &'static str {
        match self {
            PretrainMode::Rotating => "rotating",
            PretrainMode::Intersection => "intersection",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub modalities: Vec<Modality>,
    pub mode: PretrainMode,
    pub seed: u64,
    /// Also update the modality encoders (otherwise only the cross-modal
    /// encoder and the temperature learn).
    pub train_modality_encoders: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 20,
            lr: 1e-6,
            batch: 32,
            modalities: Modality::ALL.to_vec(),
            mode: PretrainMode::Rotating,
            seed: 0,
            train_modality_encoders: true,
        }
    }
}

/// Derived encoder inputs cached per record.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub cross: Vec<CrossModalInput>,
    pub geometry: Vec<Option<GeometricInput>>,
}

impl PreparedCorpus {
    pub fn new(records: &[MultimodalRecord]) -> Result<Self> {
        let cross = records.iter().map(|r| CrossModalInput::from_graph(&r.graph)).collect();
        let geometry = records
            .iter()
            .map(|r| r.conformer.as_ref().map(|c| GeometricInput::new(&r.graph, c)).transpose())
            .collect::<Result<_>>()?;
        Ok(PreparedCorpus { cross, geometry })
    }
}

fn check_rows(t: &Tensor) -> Result<()> {
    for i in 0..t.rows {
        if math::sqrt(dot(t.row(i), t.row(i))) < 1e-12 {
            return Err(Error::ZeroNormRow(i));
        }
    }
    Ok(())
}

/// `exp(log_tau)` clamped to [`MAX_TAU`].
pub fn temperature(tape: &mut Tape, log_tau: Var) -> Var {
    let clamped = tape.clamp_max(log_tau, math::ln(MAX_TAU));
    tape.exp(clamped)
}

/// Symmetric InfoNCE over paired rows, averaged over both directions.
pub fn contrastive_loss(tape: &mut Tape, ec: Var, eo: Var, tau: Var) -> Result<Var> {
    if tape.value(ec).shape() != tape.value(eo).shape() || tape.value(ec).rows == 0 {
        return Err(Error::ShapeMismatch(String::from("contrastive inputs must be equal, non-empty shapes")));
    }
    check_rows(tape.value(ec))?;
    check_rows(tape.value(eo))?;
    let a = tape.row_normalize(ec);
    let b = tape.row_normalize(eo);
    let s = tape.matmul_nt(a, b);
    let s = tape.scale_by(s, tau);
    let fwd = tape.log_softmax_rows(s);
    let st = tape.transpose(s);
    let bwd = tape.log_softmax_rows(st);
    let d1 = tape.diag(fwd);
    let d2 = tape.diag(bwd);
    let both = tape.add(d1, d2);
    let m = tape.mean_all(both);
    Ok(tape.affine(m, -0.5, 0.0))
}

/// Value-only convenience wrapper around [`contrastive_loss`].
pub fn contrastive_loss_value(ec: &Tensor, eo: &Tensor, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.leaf(ec.clone());
    let b = tape.leaf(eo.clone());
    let t = tape.leaf(Tensor::scalar(tau));
    let l = contrastive_loss(&mut tape, a, b, t)?;
    Ok(tape.value(l).item())
}

/// Records eligible for `m` under `config.mode`.
pub fn candidate_pool(records: &[MultimodalRecord], config: &PretrainConfig, m: Modality) -> Vec<usize> {
    (0..records.len())
        .filter(|&i| match config.mode {
            PretrainMode::Rotating => records[i].has(m),
            PretrainMode::Intersection => config.modalities.iter().all(|&k| records[i].has(k)),
        })
        .collect()
}

fn ordered_subset(mods: &[Modality]) -> Vec<Modality> {
    Modality::ALL.into_iter().filter(|m| mods.contains(m)).collect()
}

/// One epoch of `(modality, record indices)` steps: each modality's pool is
/// shuffled and cut into batches, then modalities take turns in the fixed
/// rotation order until every pool is spent.
pub fn rotating_schedule(
    records: &[MultimodalRecord],
    config: &PretrainConfig,
    epoch: usize,
) -> Result<Vec<(Modality, Vec<usize>)>> {
    let mods = ordered_subset(&config.modalities);
    let mut queues = Vec::with_capacity(mods.len());
    for &m in &mods {
        let mut pool = candidate_pool(records, config, m);
        let batch = match config.mode {
            PretrainMode::Rotating => {
                if pool.len() < config.batch {
                    return Err(Error::ModalityUnderfilled {
                        modality: m.name(),
                        available: pool.len(),
                        batch: config.batch,
                    });
                }
                config.batch
            }
            PretrainMode::Intersection => {
                if pool.is_empty() {
                    return Err(Error::EmptyIntersection);
                }
                config.batch.min(pool.len())
            }
        };
        let mut r = rng::stream(rng::mix(config.seed, epoch as u64), rng::streams::SCHEDULE + 100 * m.index() as u64);
        rng::shuffle(&mut r, &mut pool);
        let mut batches: Vec<Vec<usize>> = pool.chunks(batch).map(<[usize]>::to_vec).collect();
        // A trailing batch of one row carries no contrastive signal.
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
            batches.pop();
        }
        batches.reverse();
        queues.push((m, batches));
    }
    let mut out = Vec::new();
    loop {
        let mut any = false;
        for (m, q) in queues.iter_mut() {
            if let Some(b) = q.pop() {
                out.push((*m, b));
                any = true;
            }
        }
        if !any {
            break;
        }
    }
    Ok(out)
}

/// Modality embeddings (`batch x dim`) of records `idx`.
pub fn modality_forward(
    tape: &mut Tape,
    set: &EncoderSet,
    kg: Option<&KgEmbedding>,
    records: &[MultimodalRecord],
    prepared: &PreparedCorpus,
    m: Modality,
    idx: &[usize],
) -> Result<Var> {
    let store = &set.store;
    match m {
        Modality::Image => {
            let imgs: Vec<&MoleculeImage> = idx.iter().map(|&i| records[i].image.as_ref().expect("image")).collect();
            set.vit.forward(tape, store, &imgs)
        }
        Modality::Text => {
            let texts: Vec<&TextDescription> = idx.iter().map(|&i| records[i].text.as_ref().expect("text")).collect();
            set.text.forward(tape, store, &texts)
        }
        Modality::Structure => {
            let geo: Vec<&GeometricInput> =
                idx.iter().map(|&i| prepared.geometry[i].as_ref().expect("conformer")).collect();
            Ok(set.gvp.forward(tape, store, &geo))
        }
        Modality::Props => {
            let props: Vec<&PropertyVector> = idx.iter().map(|&i| records[i].props.as_ref().expect("props")).collect();
            Ok(set.prop.forward(tape, store, &props))
        }
        Modality::Kg => {
            let kg = kg.ok_or(Error::EmptyKg)?;
            let mut data = Vec::with_capacity(idx.len() * set.config.dim);
            for &i in idx {
                let facts = records[i].kg.as_ref().ok_or_else(|| Error::UnknownEntity(records[i].mol_id.clone()))?;
                let row = kg.lookup(facts.entity)?;
                if row.len() != set.config.dim {
                    return Err(Error::DimensionMismatch(String::from("knowledge-graph width differs from encoder width")));
                }
                data.extend_from_slice(row);
            }
            Ok(tape.leaf(Tensor::from_vec(idx.len(), set.config.dim, data)))
        }
    }
}

pub fn cross_forward(tape: &mut Tape, set: &EncoderSet, prepared: &PreparedCorpus, idx: &[usize]) -> Result<Var> {
    let inputs: Vec<&CrossModalInput> = idx.iter().map(|&i| &prepared.cross[i]).collect();
    set.cross.forward(tape, &set.store, &inputs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub mode: PretrainMode,
    /// Mean step loss per epoch.
    pub losses: Vec<f64>,
    /// Candidate pool size per configured modality.
    pub pools: Vec<(Modality, usize)>,
    pub steps: usize,
}

fn is_cross(name: &str) -> bool {
    name.starts_with("cross.") || name.starts_with("align.")
}

/// Rotating (or, with `config.mode == Intersection`, intersection-only)
/// contrastive pre-training. Only the cross-modal encoder, the active
/// modality encoder and the temperature receive updates.
pub fn pretrain(
    records: &[MultimodalRecord],
    prepared: &PreparedCorpus,
    set: &mut EncoderSet,
    kg: Option<&KgEmbedding>,
    config: &PretrainConfig,
) -> Result<PretrainReport> {
    if config.batch < 2 && config.mode == PretrainMode::Rotating {
        return Err(Error::InvalidConfig(String::from("contrastive batches need at least two rows")));
    }
    let mods = ordered_subset(&config.modalities);
    let pools = mods.iter().map(|&m| (m, candidate_pool(records, config, m).len())).collect();
    // Surface structural errors before spending any compute.
    if config.epochs > 0 {
        rotating_schedule(records, config, 0)?;
    } else if config.mode == PretrainMode::Intersection && mods.iter().any(|&m| candidate_pool(records, config, m).is_empty()) {
        return Err(Error::EmptyIntersection);
    }
    let mut opt = Adam::new(AdamConfig::new(config.lr));
    let mut losses = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    for epoch in 0..config.epochs {
        let schedule = rotating_schedule(records, config, epoch)?;
        let mut total = 0.0;
        for (step, (m, idx)) in schedule.iter().enumerate() {
            let mut tape = Tape::new();
            let ec = cross_forward(&mut tape, set, prepared, idx)?;
            let eo = modality_forward(&mut tape, set, kg, records, prepared, *m, idx)?;
            let lt = tape.param(&set.store, set.log_tau);
            let tau = temperature(&mut tape, lt);
            let loss = contrastive_loss(&mut tape, ec, eo, tau)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            total += lv;
            let grads = tape.backward(loss);
            let mut updates = grads.params();
            if !config.train_modality_encoders {
                updates.retain(|(id, _)| is_cross(set.store.name(*id)));
            }
            opt.step(&mut set.store, &updates);
            steps += 1;
        }
        losses.push(if schedule.is_empty() { 0.0 } else { total / schedule.len() as f64 });
    }
    Ok(PretrainReport { mode: config.mode, losses, pools, steps })
}

/// Pre-training restricted to records that carry every configured modality.
pub fn intersection_pretrain(
    records: &[MultimodalRecord],
    prepared: &PreparedCorpus,
    set: &mut EncoderSet,
    kg: Option<&KgEmbedding>,
    config: &PretrainConfig,
) -> Result<PretrainReport> {
    let mut c = config.clone();
    c.mode = PretrainMode::Intersection;
    pretrain(records, prepared, set, kg, &c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageStats {
    pub total: usize,
    pub per_modality: Vec<(Modality, usize)>,
    pub pairwise: Vec<(Modality, Modality, usize)>,
    pub full_intersection: usize,
    pub full_ratio: f64,
}

pub fn coverage_stats(records: &[MultimodalRecord], modalities: &[Modality]) -> CoverageStats {
    let mods = ordered_subset(modalities);
    let count = |f: &dyn Fn(&MultimodalRecord) -> bool| records.iter().filter(|r| f(r)).count();
    let per_modality = mods.iter().map(|&m| (m, count(&|r| r.has(m)))).collect();
    let mut pairwise = Vec::new();
    for (i, &a) in mods.iter().enumerate() {
        for &b in &mods[i + 1..] {
            pairwise.push((a, b, count(&|r| r.has(a) && r.has(b))));
        }
    }
    let full = count(&|r| mods.iter().all(|&m| r.has(m)));
    CoverageStats {
        total: records.len(),
        per_modality,
        pairwise,
        full_intersection: full,
        full_ratio: if records.is_empty() { 0.0 } else { full as f64 / records.len() as f64 },
    }
}

fn cosine_rows(t: &Tensor) -> Result<Tensor> {
    check_rows(t)?;
    let mut n = t.clone();
    for i in 0..n.rows {
        let norm = math::sqrt(dot(n.row(i), n.row(i)));
        n.row_mut(i).iter_mut().for_each(|x| *x /= norm);
    }
    Ok(n)
}

/// Mean pairwise cosine distance over unordered row pairs.
pub fn dispersion(embeddings: &Tensor) -> Result<f64> {
    if embeddings.rows < 2 {
        return Err(Error::ShapeMismatch(String::from("dispersion needs at least two rows")));
    }
    let n = cosine_rows(embeddings)?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n.rows {
        for j in i + 1..n.rows {
            total += 1.0 - dot(n.row(i), n.row(j));
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Fraction of query rows whose paired target row is among the `k` most
/// cosine-similar targets. Ties count against the query.
pub fn retrieval_accuracy(queries: &Tensor, targets: &Tensor, k: usize) -> Result<f64> {
    if queries.shape() != targets.shape() || queries.rows == 0 {
        return Err(Error::ShapeMismatch(String::from("retrieval needs equal, non-empty shapes")));
    }
    let q = cosine_rows(queries)?;
    let t = cosine_rows(targets)?;
    let sims = q.matmul_nt(&t);
    let mut hits = 0;
    for i in 0..q.rows {
        let own = sims.get(i, i);
        let better = (0..t.rows).filter(|&j| j != i && sims.get(i, j) >= own).count();
        if better < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / q.rows as f64)
}

/// Mean cosine similarity of matched and of mismatched row pairs.
pub fn matched_mismatched(a: &Tensor, b: &Tensor) -> Result<(f64, f64)> {
    let x = cosine_rows(a)?;
    let y = cosine_rows(b)?;
    let sims = x.matmul_nt(&y);
    let n = sims.rows;
    let matched = (0..n).map(|i| sims.get(i, i)).sum::<f64>() / n as f64;
    let off = if n > 1 { (sims.sum() - matched * n as f64) / (n * (n - 1)) as f64 } else { 0.0 };
    Ok((matched, off))
}

/// Cross-modal and modality embeddings for every record having `m`.
pub fn paired_embeddings(
    records: &[MultimodalRecord],
    prepared: &PreparedCorpus,
    set: &EncoderSet,
    kg: Option<&KgEmbedding>,
    m: Modality,
    batch: usize,
) -> Result<(Vec<usize>, Tensor, Tensor)> {
    let idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].has(m)).collect();
    let dim = set.config.dim;
    let (mut ec, mut eo) = (Vec::with_capacity(idx.len() * dim), Vec::with_capacity(idx.len() * dim));
    for chunk in idx.chunks(batch.max(1)) {
        let mut tape = Tape::new();
        let c = cross_forward(&mut tape, set, prepared, chunk)?;
        let o = modality_forward(&mut tape, set, kg, records, prepared, m, chunk)?;
        ec.extend_from_slice(&tape.value(c).data);
        eo.extend_from_slice(&tape.value(o).data);
    }
    Ok((idx.clone(), Tensor::from_vec(idx.len(), dim, ec), Tensor::from_vec(idx.len(), dim, eo)))
}

/// Top-`k` retrieval of each record's cross-modal embedding from its
/// modality embedding, over all records carrying the modality.
pub fn retrieval_eval(
    records: &[MultimodalRecord],
    prepared: &PreparedCorpus,
    set: &EncoderSet,
    kg: Option<&KgEmbedding>,
    m: Modality,
    k: usize,
) -> Result<f64> {
    let (idx, ec, eo) = paired_embeddings(records, prepared, set, kg, m, 64)?;
    if idx.len() < 2 {
        return Err(Error::ShapeMismatch(String::from("retrieval needs two records with the modality")));
    }
    retrieval_accuracy(&eo, &ec, k)
}

/// Copy of the parameter values under `prefix`, for freeze checks.
pub fn snapshot(store: &ParamStore, prefix: &str) -> Vec<Tensor> {
    store.ids_with_prefix(prefix).into_iter().map(|id| store.get(id).clone()).collect()
}

/// Expected full-intersection size under independent per-modality coverage.
pub fn expected_intersection(p: &[f64], n: usize) -> f64 {
    p.iter().product::<f64>() * n as f64
}
