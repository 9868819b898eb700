use proptest::prelude::*;

use mkmed::checkpoint::{Checkpoint, Kind};
use mkmed::formats::{decode_f64, encode_f64, read_patients, write_patients};
use mkmed_core::clinical::{PatientHistory, Visit, Vocab};
use mkmed_core::config::RunConfig;
use mkmed_core::Tensor;

fn tensor() -> impl Strategy<Value = Tensor> {
    (1usize..5, 1usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(-1e6f64..1e6, r * c).prop_map(move |d| Tensor::from_vec(r, c, d))
    })
}

fn visit() -> impl Strategy<Value = Visit> {
    (prop::collection::vec(0usize..8, 0..5), prop::collection::vec(0usize..4, 0..3), prop::collection::vec(0usize..9, 0..6))
        .prop_map(|(d, p, m)| Visit::new(d, p, m))
}

proptest! {
    #[test]
    fn f64_blobs_are_lossless(xs in prop::collection::vec(any::<f64>(), 0..40)) {
        let back = decode_f64(&encode_f64(xs.iter().copied())).unwrap();
        prop_assert_eq!(back.len(), xs.len());
        for (a, b) in back.iter().zip(&xs) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn checkpoints_round_trip(blocks in prop::collection::vec(tensor(), 0..6), seed in any::<u64>(), epoch in 0usize..50) {
        let cfg = RunConfig { seed, ..RunConfig::default() };
        let vocab = Vocab { diseases: 3, procedures: 2, medications: 4 };
        let mut ck = Checkpoint::new(Kind::Recommender, &cfg, Some(vocab)).meta("best_epoch", epoch);
        for (i, t) in blocks.iter().enumerate() {
            ck.push(&format!("b{i}"), t);
        }
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back.header, &ck.header);
        prop_assert_eq!(back.to_bytes(), bytes);
        for (i, t) in blocks.iter().enumerate() {
            let b = back.block(&format!("b{i}")).unwrap();
            prop_assert_eq!(b.shape(), t.shape());
            for (x, y) in b.data.iter().zip(&t.data) {
                prop_assert_eq!(*x, *y as f32 as f64);
            }
        }
    }

    #[test]
    fn patient_files_round_trip(visits in prop::collection::vec(prop::collection::vec(visit(), 1..4), 1..5)) {
        let patients: Vec<PatientHistory> = visits
            .into_iter()
            .enumerate()
            .map(|(i, v)| PatientHistory { patient_id: format!("p{i}"), visits: v })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ehr.jsonl");
        write_patients(&path, &patients).unwrap();
        prop_assert_eq!(read_patients(&path).unwrap(), patients);
    }
}
