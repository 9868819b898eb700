//! Visits, patient histories, the interaction matrix and the longitudinal
//! patient encoder with its prediction head.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{normal_tensor, GruCell, Mlp, ParamId, ParamStore};
use crate::rng::{self, SeededRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    pub diseases: usize,
    pub procedures: usize,
    pub medications: usize,
}

/// One visit as sorted, de-duplicated index sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Visit {
    pub diseases: Vec<usize>,
    pub procedures: Vec<usize>,
    pub medications: Vec<usize>,
}

fn norm_set(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

pub fn multi_hot(indices: &[usize], width: usize) -> Vec<bool> {
    let mut out = vec![false; width];
    for &i in indices {
        out[i] = true;
    }
    out
}

pub fn indices_of(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

impl Visit {
    pub fn new(diseases: Vec<usize>, procedures: Vec<usize>, medications: Vec<usize>) -> Self {
        Visit { diseases: norm_set(diseases), procedures: norm_set(procedures), medications: norm_set(medications) }
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        let check = |xs: &[usize], n: usize, what: &str| {
            if let Some(&bad) = xs.iter().find(|&&x| x >= n) {
                Err(Error::VocabMismatch(alloc::format!("{what} index {bad} outside vocabulary of {n}")))
            } else {
                Ok(())
            }
        };
        check(&self.diseases, vocab.diseases, "disease")?;
        check(&self.procedures, vocab.procedures, "procedure")?;
        check(&self.medications, vocab.medications, "medication")?;
        if self.diseases.is_empty() && self.procedures.is_empty() {
            return Err(Error::VocabMismatch(String::from("visit without diseases or procedures")));
        }
        Ok(())
    }

    pub fn medication_mask(&self, n: usize) -> Vec<bool> {
        multi_hot(&self.medications, n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientHistory {
    pub patient_id: String,
    pub visits: Vec<Visit>,
}

impl PatientHistory {
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        if self.visits.is_empty() {
            return Err(Error::VocabMismatch(alloc::format!("patient {} has no visits", self.patient_id)));
        }
        self.visits.iter().try_for_each(|v| v.validate(vocab))
    }
}

/// Symmetric, zero-diagonal binary interaction matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdiMatrix {
    n: usize,
    data: Vec<bool>,
}

impl DdiMatrix {
    pub fn zeros(n: usize) -> Self {
        DdiMatrix { n, data: vec![false; n * n] }
    }

    /// Expand unordered pairs symmetrically.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::zeros(n);
        for &(a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::IndexOutOfRange { index: a.max(b), len: n });
            }
            if a == b {
                return Err(Error::ShapeMismatch(alloc::format!("self-interaction on medication {a}")));
            }
            m.data[a * n + b] = true;
            m.data[b * n + a] = true;
        }
        Ok(m)
    }

    /// Validate a dense matrix: it must be symmetric with a zero diagonal.
    pub fn from_dense(n: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::ShapeMismatch(alloc::format!("expected {} entries, got {}", n * n, data.len())));
        }
        for i in 0..n {
            if data[i * n + i] {
                return Err(Error::ShapeMismatch(alloc::format!("nonzero diagonal at {i}")));
            }
            for j in i + 1..n {
                if data[i * n + j] != data[j * n + i] {
                    return Err(Error::ShapeMismatch(alloc::format!("asymmetric entry ({i}, {j})")));
                }
            }
        }
        Ok(DdiMatrix { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j]
    }

    /// Unordered interacting pairs `(i, j)` with `i < j`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn density(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.pairs().len() as f64 / (self.n * (self.n - 1) / 2) as f64
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.get(i, j))
    }
}

/// Source of per-medication embeddings.
#[derive(Debug, Clone)]
pub enum MedTable {
    /// Precomputed cross-modal embeddings, not trained downstream.
    Fixed(Tensor),
    /// A table learned with the recommender.
    Learned(ParamId),
}

#[derive(Debug, Clone)]
pub struct PatientModel {
    pub vocab: Vocab,
    pub dim: usize,
    pub hidden: usize,
    pub e_d: ParamId,
    pub e_p: ParamId,
    pub gru_d: GruCell,
    pub gru_p: GruCell,
    pub gru_m: GruCell,
    pub head: Mlp,
    pub store: ParamStore,
}

/// Scores for every (patient, visit) pair of a batch, rows in patient-major
/// visit order.
pub struct BatchScores {
    pub scores: Var,
    pub rows: Vec<(usize, usize)>,
}

impl PatientModel {
    pub fn new(vocab: Vocab, dim: usize, hidden: usize, head_hidden: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut r: SeededRng = rng::stream(seed, rng::streams::INIT + 1000);
        let std = 1.0 / crate::math::sqrt(dim as f64);
        let e_d = store.add("rec.e_d", normal_tensor(&mut r, vocab.diseases, dim, std));
        let e_p = store.add("rec.e_p", normal_tensor(&mut r, vocab.procedures, dim, std));
        let gru_d = GruCell::new(&mut store, &mut r, "rec.gru_d", dim, hidden);
        let gru_p = GruCell::new(&mut store, &mut r, "rec.gru_p", dim, hidden);
        let gru_m = GruCell::new(&mut store, &mut r, "rec.gru_m", dim, hidden);
        let head = Mlp::new(&mut store, &mut r, "rec.head", &[3 * hidden, head_hidden, vocab.medications]);
        PatientModel { vocab, dim, hidden, e_d, e_p, gru_d, gru_p, gru_m, head, store }
    }

    /// Add a learnable medication table (`|M| x dim`) to the store.
    pub fn add_med_table(&mut self, seed: u64) -> MedTable {
        let mut r = rng::stream(seed, rng::streams::INIT + 2000);
        let std = 1.0 / crate::math::sqrt(self.dim as f64);
        let t = normal_tensor(&mut r, self.vocab.medications, self.dim, std);
        MedTable::Learned(self.store.add("rec.med_table", t))
    }

    fn med_var(&self, tape: &mut Tape, meds: &MedTable) -> Result<Var> {
        let (rows, cols) = match meds {
            MedTable::Fixed(t) => t.shape(),
            MedTable::Learned(id) => self.store.get(*id).shape(),
        };
        if rows != self.vocab.medications || cols != self.dim {
            return Err(Error::VocabMismatch(alloc::format!(
                "medication table is {rows}x{cols}, expected {}x{}",
                self.vocab.medications, self.dim
            )));
        }
        Ok(match meds {
            MedTable::Fixed(t) => tape.leaf(t.clone()),
            MedTable::Learned(id) => tape.param(&self.store, *id),
        })
    }

    /// Run all three streams over `patients` (padded to the longest history)
    /// and score every visit. Visit `t`'s medication input is the medication
    /// set of visit `t - 1` (zero at the first visit).
    pub fn forward_batch(&self, tape: &mut Tape, meds: &MedTable, patients: &[&PatientHistory]) -> Result<BatchScores> {
        let b = patients.len();
        let t_max = patients.iter().map(|p| p.visits.len()).max().unwrap_or(0);
        for p in patients {
            p.validate(&self.vocab)?;
        }
        let v = self.vocab;
        let table = self.med_var(tape, meds)?;
        let e_d = tape.param(&self.store, self.e_d);
        let e_p = tape.param(&self.store, self.e_p);
        let zero = tape.leaf(Tensor::zeros(b, self.hidden));
        let (mut hd, mut hp, mut hm) = (zero, zero, zero);
        let (mut all_d, mut all_p, mut all_m) = (Vec::new(), Vec::new(), Vec::new());
        for t in 0..t_max {
            let mut dm = Tensor::zeros(b, v.diseases);
            let mut pm = Tensor::zeros(b, v.procedures);
            let mut mm = Tensor::zeros(b, v.medications);
            for (i, p) in patients.iter().enumerate() {
                if let Some(visit) = p.visits.get(t) {
                    visit.diseases.iter().for_each(|&d| dm.set(i, d, 1.0));
                    visit.procedures.iter().for_each(|&q| pm.set(i, q, 1.0));
                }
                if t > 0 {
                    if let Some(prev) = p.visits.get(t - 1) {
                        let w = 1.0 / prev.medications.len().max(1) as f64;
                        prev.medications.iter().for_each(|&m| mm.set(i, m, w));
                    }
                }
            }
            let dm = tape.leaf(dm);
            let xd = tape.matmul(dm, e_d);
            hd = self.gru_d.forward(tape, &self.store, xd, hd);
            let pm = tape.leaf(pm);
            let xp = tape.matmul(pm, e_p);
            hp = self.gru_p.forward(tape, &self.store, xp, hp);
            let mm = tape.leaf(mm);
            let xm = tape.matmul(mm, table);
            hm = self.gru_m.forward(tape, &self.store, xm, hm);
            all_d.push(hd);
            all_p.push(hp);
            all_m.push(hm);
        }
        let mut rows = Vec::new();
        let mut gather = Vec::new();
        for (i, p) in patients.iter().enumerate() {
            for t in 0..p.visits.len() {
                rows.push((i, t));
                gather.push(t * b + i);
            }
        }
        if rows.is_empty() {
            return Err(Error::EmptyTestSet);
        }
        let stack = |tape: &mut Tape, hs: &[Var]| {
            let s = tape.concat_rows(hs);
            tape.gather_rows(s, &gather)
        };
        let d = stack(tape, &all_d);
        let p = stack(tape, &all_p);
        let m = stack(tape, &all_m);
        let e_i = tape.concat_cols(&[d, p, m]);
        let logits = self.head.forward(tape, &self.store, e_i);
        Ok(BatchScores { scores: tape.sigmoid(logits), rows })
    }

    /// `(e_d, e_p, e_m)` of a single visit.
    pub fn embed_visit(&self, visit: &Visit, meds: &MedTable) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        visit.validate(&self.vocab)?;
        let table = match meds {
            MedTable::Fixed(t) => t,
            MedTable::Learned(id) => self.store.get(*id),
        };
        let sum_rows = |t: &Tensor, idx: &[usize], scale: f64| {
            let mut out = vec![0.0; t.cols];
            for &i in idx {
                for (o, &x) in out.iter_mut().zip(t.row(i)) {
                    *o += x;
                }
            }
            out.iter_mut().for_each(|x| *x *= scale);
            out
        };
        let e_d = sum_rows(self.store.get(self.e_d), &visit.diseases, 1.0);
        let e_p = sum_rows(self.store.get(self.e_p), &visit.procedures, 1.0);
        let e_m = if visit.medications.is_empty() {
            vec![0.0; self.dim]
        } else {
            let mut e = vec![0.0; table.cols];
            for &i in &visit.medications {
                for (o, &x) in e.iter_mut().zip(table.row(i)) {
                    *o += x / visit.medications.len() as f64;
                }
            }
            e
        };
        Ok((e_d, e_p, e_m))
    }

    /// Patient representation `e_i` (width `3 * hidden`) at visit `t`
    /// (1-based), using visits `1..=t` only.
    pub fn encode_history(&self, history: &PatientHistory, t: usize, meds: &MedTable) -> Result<Vec<f64>> {
        if t == 0 || t > history.visits.len() {
            return Err(Error::IndexOutOfRange { index: t, len: history.visits.len() });
        }
        let truncated = PatientHistory { patient_id: history.patient_id.clone(), visits: history.visits[..t].to_vec() };
        let e = self.representation(&truncated, meds)?;
        Ok(e.row(t - 1).to_vec())
    }

    /// `e_i` rows for every visit of `history`.
    fn representation(&self, history: &PatientHistory, meds: &MedTable) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zero = tape.leaf(Tensor::zeros(1, self.hidden));
        let (mut hd, mut hp, mut hm) = (zero, zero, zero);
        let mut out = Vec::new();
        for (t, visit) in history.visits.iter().enumerate() {
            let (ed, ep, _) = self.embed_visit(visit, meds)?;
            let em = if t == 0 {
                vec![0.0; self.dim]
            } else {
                self.embed_visit(&history.visits[t - 1], meds)?.2
            };
            let xd = tape.leaf(Tensor::row_vector(ed));
            let xp = tape.leaf(Tensor::row_vector(ep));
            let xm = tape.leaf(Tensor::row_vector(em));
            hd = self.gru_d.forward(&mut tape, &self.store, xd, hd);
            hp = self.gru_p.forward(&mut tape, &self.store, xp, hp);
            hm = self.gru_m.forward(&mut tape, &self.store, xm, hm);
            for h in [hd, hp, hm] {
                out.extend_from_slice(&tape.value(h).data);
            }
        }
        Ok(Tensor::from_vec(history.visits.len(), 3 * self.hidden, out))
    }

    /// Probabilities over medications for representation `e_i`.
    pub fn predict_scores(&self, e_i: &[f64]) -> Result<Vec<f64>> {
        if e_i.len() != 3 * self.hidden {
            return Err(Error::ShapeMismatch(alloc::format!("representation width {} != {}", e_i.len(), 3 * self.hidden)));
        }
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(e_i.to_vec()));
        let l = self.head.forward(&mut tape, &self.store, x);
        let s = tape.sigmoid(l);
        Ok(tape.value(s).data.clone())
    }

    /// Scores for every visit of every patient, without gradients.
    pub fn score_all(&self, meds: &MedTable, patients: &[&PatientHistory], batch: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for chunk in patients.chunks(batch.max(1)) {
            let mut tape = Tape::new();
            let b = self.forward_batch(&mut tape, meds, chunk)?;
            let s = tape.value(b.scores);
            for r in 0..s.rows {
                out.push(s.row(r).to_vec());
            }
        }
        Ok(out)
    }
}

/// `m̂_i = 1` iff `score_i ≥ δ`.
pub fn threshold_select(scores: &[f64], delta: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= delta).collect()
}
