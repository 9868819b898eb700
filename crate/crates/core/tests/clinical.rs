use mkmed_core::autograd::Tape;
use mkmed_core::clinical::*;
use mkmed_core::{rng, Error, Tensor};
use rand::Rng;

const VOCAB: Vocab = Vocab { diseases: 6, procedures: 4, medications: 5 };

fn model() -> PatientModel {
    PatientModel::new(VOCAB, 8, 6, 10, 1)
}

fn table() -> MedTable {
    let mut r = rng::stream(2, 50);
    MedTable::Fixed(Tensor::from_vec(5, 8, (0..40).map(|_| rng::normal(&mut r)).collect()))
}

fn history(seed: u64, visits: usize) -> PatientHistory {
    let mut r = rng::stream(seed, 51);
    let mut pick = |n: usize, k: usize| -> Vec<usize> { (0..k).map(|_| r.random_range(0..n)).collect() };
    PatientHistory {
        patient_id: format!("p{seed}"),
        visits: (0..visits).map(|_| Visit::new(pick(6, 2), pick(4, 1), pick(5, 2))).collect(),
    }
}

#[test]
fn visit_embedding_sums_rows_and_means_medications() {
    let m = model();
    let t = table();
    let ed = m.store.get(m.e_d).clone();
    let (one, _, em) = m.embed_visit(&Visit::new(vec![2], vec![], vec![]), &t).unwrap();
    assert_eq!(one, ed.row(2));
    assert!(em.iter().all(|&x| x == 0.0));
    let (two, ep, _) = m.embed_visit(&Visit::new(vec![1, 4], vec![3], vec![0, 3]), &t).unwrap();
    for c in 0..8 {
        assert!((two[c] - ed.get(1, c) - ed.get(4, c)).abs() < 1e-15);
        assert_eq!(ep[c], m.store.get(m.e_p).get(3, c));
    }
    let MedTable::Fixed(tt) = &t else { unreachable!() };
    let (_, _, em) = m.embed_visit(&Visit::new(vec![1], vec![], vec![0, 3]), &t).unwrap();
    for c in 0..8 {
        assert!((em[c] - 0.5 * (tt.get(0, c) + tt.get(3, c))).abs() < 1e-15);
    }
}

#[test]
fn visit_embedding_is_linear_in_the_codes() {
    let m = model();
    let t = table();
    let a = m.embed_visit(&Visit::new(vec![0, 1], vec![2], vec![]), &t).unwrap();
    let b = m.embed_visit(&Visit::new(vec![3], vec![0], vec![]), &t).unwrap();
    let ab = m.embed_visit(&Visit::new(vec![0, 1, 3], vec![0, 2], vec![]), &t).unwrap();
    for c in 0..8 {
        assert!((ab.0[c] - a.0[c] - b.0[c]).abs() < 1e-14);
        assert!((ab.1[c] - a.1[c] - b.1[c]).abs() < 1e-14);
    }
}

#[test]
fn out_of_range_codes_are_rejected() {
    let m = model();
    assert!(matches!(m.embed_visit(&Visit::new(vec![6], vec![], vec![]), &table()), Err(Error::VocabMismatch(_))));
    assert!(matches!(m.embed_visit(&Visit::new(vec![], vec![], vec![1]), &table()), Err(Error::VocabMismatch(_))));
    let bad = PatientHistory { patient_id: "x".into(), visits: vec![] };
    assert!(bad.validate(&VOCAB).is_err());
}

#[test]
fn first_visit_feeds_zero_medications() {
    let m = model();
    let t = table();
    let h = history(3, 1);
    let e = m.encode_history(&h, 1, &t).unwrap();
    // Medication stream at t = 1 is the GRU applied to a zero input.
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(1, 8));
    let h0 = tape.leaf(Tensor::zeros(1, 6));
    let hm = m.gru_m.forward(&mut tape, &m.store, x, h0);
    assert_eq!(&e[12..18], tape.value(hm).data.as_slice());
    // Changing the visit's own medications never changes its representation.
    let mut h2 = h.clone();
    h2.visits[0].medications = vec![0, 1, 2, 3, 4];
    assert_eq!(m.encode_history(&h2, 1, &t).unwrap(), e);
}

#[test]
fn representation_is_causal() {
    let m = model();
    let t = table();
    for s in 0..10 {
        let h = history(s, 4);
        let mut longer = h.clone();
        longer.visits.extend(history(s + 100, 2).visits);
        let mut relabeled = h.clone();
        relabeled.visits[2].medications = vec![4];
        for step in 1..=4 {
            let e = m.encode_history(&h, step, &t).unwrap();
            assert_eq!(e, m.encode_history(&longer, step, &t).unwrap());
            if step <= 3 {
                assert_eq!(e, m.encode_history(&relabeled, step, &t).unwrap());
            }
        }
        assert!(matches!(m.encode_history(&h, 5, &t), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(m.encode_history(&h, 0, &t), Err(Error::IndexOutOfRange { .. })));
    }
}

#[test]
fn batched_scores_match_per_visit_path() {
    let m = model();
    let t = table();
    let hs: Vec<PatientHistory> = (0..5).map(|s| history(s, 1 + s as usize % 3)).collect();
    let refs: Vec<&PatientHistory> = hs.iter().collect();
    let batched = m.score_all(&t, &refs, 8).unwrap();
    let mut row = 0;
    for h in &hs {
        for step in 1..=h.visits.len() {
            let s = m.predict_scores(&m.encode_history(h, step, &t).unwrap()).unwrap();
            for (a, b) in s.iter().zip(&batched[row]) {
                assert!((a - b).abs() < 1e-12);
            }
            row += 1;
        }
    }
    assert_eq!(row, batched.len());
    assert_eq!(m.score_all(&t, &refs, 1).unwrap(), batched);
}

#[test]
fn scores_are_probabilities_and_deterministic() {
    let m = model();
    let mut r = rng::stream(9, 52);
    for _ in 0..20 {
        let e: Vec<f64> = (0..18).map(|_| 10.0 * rng::normal(&mut r)).collect();
        let s = m.predict_scores(&e).unwrap();
        assert!(s.iter().all(|&x| x > 0.0 && x < 1.0));
        assert_eq!(s, m.predict_scores(&e).unwrap());
    }
    assert!(matches!(m.predict_scores(&[0.0; 3]), Err(Error::ShapeMismatch(_))));
}

#[test]
fn threshold_is_inclusive() {
    assert_eq!(threshold_select(&[0.0, 0.0], 0.5), vec![false, false]);
    assert_eq!(threshold_select(&[0.5, 0.49], 0.5), vec![true, false]);
    assert_eq!(threshold_select(&[0.0, 0.3], 0.0), vec![true, true]);
}

#[test]
fn interaction_matrix_invariants() {
    let m = DdiMatrix::from_pairs(4, &[(0, 2), (3, 1)]).unwrap();
    assert!(m.get(2, 0) && m.get(1, 3) && !m.get(0, 1));
    assert_eq!(m.pairs(), vec![(0, 2), (1, 3)]);
    assert!((m.density() - 2.0 / 6.0).abs() < 1e-15);
    assert!(DdiMatrix::from_pairs(4, &[(1, 1)]).is_err());
    assert!(DdiMatrix::from_pairs(4, &[(0, 4)]).is_err());
    let mut asym = vec![false; 9];
    asym[1] = true;
    assert!(DdiMatrix::from_dense(3, asym).is_err());
    let mut diag = vec![false; 9];
    diag[4] = true;
    assert!(DdiMatrix::from_dense(3, diag).is_err());
}

#[test]
fn multi_hot_round_trip() {
    let v = Visit::new(vec![3, 1, 3], vec![0], vec![4, 2]);
    assert_eq!(v.diseases, vec![1, 3]);
    assert_eq!(indices_of(&v.medication_mask(5)), v.medications);
    assert_eq!(multi_hot(&[0, 2], 3), vec![true, false, true]);
}
