#![allow(dead_code)]

pub mod oracle;

use mkmed_core::autograd::{Tape, Var};
use mkmed_core::clinical::{DdiMatrix, PatientHistory, PatientModel, Visit, Vocab};
use mkmed_core::nn::ParamStore;
use mkmed_core::rng;
use mkmed_core::Tensor;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// `|a - n| / max(1, |a|, |n|)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

pub fn probe(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, 77);
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng::normal(&mut r)).collect())
}

/// Scalar probe `Σ out ⊙ w` with a fixed random `w`.
pub fn probe_loss(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let (r, c) = tape.value(out).shape();
    let w = tape.leaf(probe(r, c, seed));
    let m = tape.mul(out, w);
    tape.sum_all(m)
}

/// Worst finite-difference error over `per_param` random entries of every
/// parameter whose name starts with `prefix`.
pub fn param_fd_error(
    store: &ParamStore,
    prefix: &str,
    per_param: usize,
    seed: u64,
    loss: impl Fn(&ParamStore, &mut Tape) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let l = loss(store, &mut tape);
    let grads = tape.backward(l);
    let mut r = rng::stream(seed, 78);
    let mut worst: f64 = 0.0;
    let mut scratch = store.clone();
    for id in store.ids_with_prefix(prefix) {
        let n = store.get(id).len();
        for _ in 0..per_param.min(n) {
            let i = r.random_range(0..n);
            let analytic = grads.param(id).map_or(0.0, |g| g.data[i]);
            let orig = store.get(id).data[i];
            let mut eval = |x: f64| {
                scratch.get_mut(id).data[i] = x;
                let mut t = Tape::new();
                let v = loss(&scratch, &mut t);
                t.value(v).item()
            };
            let up = eval(orig + FD_STEP);
            let down = eval(orig - FD_STEP);
            scratch.get_mut(id).data[i] = orig;
            worst = worst.max(rel_err(analytic, (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

pub const SMALL_SMILES: [&str; 10] =
    ["CCO", "c1ccccc1C", "CC(=O)N", "C1CC1CN", "OCC=CC", "c1ccncc1O", "CC#CCl", "C1CCOC1C(C)C", "NC(=O)c1ccccc1", "CSCC(N)O"];

pub fn random_rotation(seed: u64) -> [[f64; 3]; 3] {
    let mut r = rng::stream(seed, 91);
    let q: [f64; 4] = core::array::from_fn(|_| rng::normal(&mut r));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn rotate(m: &[[f64; 3]; 3], p: [f64; 3]) -> [f64; 3] {
    core::array::from_fn(|i| (0..3).map(|j| m[i][j] * p[j]).sum())
}

pub fn random_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed, 92);
    rng::shuffle(&mut r, &mut order);
    order
}

// Losses composed with the recommender: gradients with respect to every
// parameter of the patient encoder and head.

const HEAD_VOCAB: Vocab = Vocab { diseases: 5, procedures: 3, medications: 6 };

fn head_patients(seed: u64) -> Vec<PatientHistory> {
    let mut r = rng::stream(seed, 61);
    (0..3)
        .map(|p| PatientHistory {
            patient_id: format!("p{p}"),
            visits: (0..1 + p % 3)
                .map(|_| {
                    Visit::new(
                        vec![r.random_range(0..5), r.random_range(0..5)],
                        vec![r.random_range(0..3)],
                        vec![r.random_range(0..6), r.random_range(0..6)],
                    )
                })
                .collect(),
        })
        .collect()
}

pub type HeadLoss = fn(&[f64], &[bool], &DdiMatrix) -> (f64, Vec<f64>);

pub fn head_fd_error(seed: u64, loss: HeadLoss) -> f64 {
    let mut model = PatientModel::new(HEAD_VOCAB, 6, 5, 7, seed);
    let meds = model.add_med_table(seed);
    let hs = head_patients(seed);
    let refs: Vec<&PatientHistory> = hs.iter().collect();
    let ddi = DdiMatrix::from_pairs(6, &[(0, 1), (2, 5), (1, 4)]).unwrap();
    let eval = |m: &PatientModel| -> f64 {
        let mut t = Tape::new();
        let b = m.forward_batch(&mut t, &meds, &refs).unwrap();
        let s = t.value(b.scores);
        b.rows.iter().enumerate().map(|(row, &(p, v))| loss(s.row(row), &hs[p].visits[v].medication_mask(6), &ddi).0).sum()
    };
    let mut t = Tape::new();
    let b = model.forward_batch(&mut t, &meds, &refs).unwrap();
    let s = t.value(b.scores).clone();
    let mut seed_grad = s.clone();
    for (row, &(p, v)) in b.rows.iter().enumerate() {
        let g = loss(s.row(row), &hs[p].visits[v].medication_mask(6), &ddi).1;
        seed_grad.row_mut(row).copy_from_slice(&g);
    }
    let grads = t.backward_from(&[(b.scores, seed_grad)]);
    let mut r = rng::stream(seed, 62);
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for id in model.store.ids_with_prefix("rec.") {
        let n = model.store.get(id).len();
        for _ in 0..3 {
            let i = r.random_range(0..n);
            let a = grads.param(id).map_or(0.0, |g| g.data[i]);
            let orig = model.store.get(id).data[i];
            probe.store.get_mut(id).data[i] = orig + FD_STEP;
            let up = eval(&probe);
            probe.store.get_mut(id).data[i] = orig - FD_STEP;
            let down = eval(&probe);
            probe.store.get_mut(id).data[i] = orig;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}
