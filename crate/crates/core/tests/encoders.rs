mod common;

use common::*;
use mkmed_core::autograd::Tape;
use mkmed_core::encoders::*;
use mkmed_core::molkit::*;
use mkmed_core::rng;
use mkmed_core::Tensor;
use mkmed_core::Error;
use rand::Rng;

fn set() -> EncoderSet {
    EncoderSet::new(EncoderConfig::default(), 3)
}

fn graph(s: &str) -> MoleculeGraph {
    parse_smiles(s).unwrap()
}

fn cross_in(s: &str) -> CrossModalInput {
    CrossModalInput::from_graph(&graph(s))
}

fn geo(g: &MoleculeGraph, coords: Vec<[f64; 3]>) -> GeometricInput {
    GeometricInput::new(g, &Conformer { coords, seed: 0 }).unwrap()
}

fn embed_cross(set: &EncoderSet, inp: &CrossModalInput) -> Tensor {
    let mut t = Tape::new();
    let v = set.cross.forward(&mut t, &set.store, &[inp]).unwrap();
    t.value(v).clone()
}

fn embed_gin(set: &EncoderSet, g: &MoleculeGraph) -> Tensor {
    let inp = GraphInput::from_graph(g);
    let mut t = Tape::new();
    let v = set.cross.mol_gin.forward(&mut t, &set.store, &GraphBatch::new(&[&inp])).unwrap();
    t.value(v).clone()
}

fn embed_gvp(set: &EncoderSet, inp: &GeometricInput) -> (Tensor, Tensor) {
    let mut t = Tape::new();
    let out = set.gvp.forward_full(&mut t, &set.store, &[inp]);
    (t.value(out.embedding).clone(), t.value(out.vectors).clone())
}

fn embed_text(set: &EncoderSet, d: &TextDescription) -> Tensor {
    let mut t = Tape::new();
    let v = set.text.forward(&mut t, &set.store, &[d]).unwrap();
    t.value(v).clone()
}

fn embed_prop(set: &EncoderSet, p: &PropertyVector) -> Tensor {
    let mut t = Tape::new();
    let v = set.prop.forward(&mut t, &set.store, &[p]);
    t.value(v).clone()
}

// ---- gradients ----

#[test]
fn cross_modal_gradients_match_finite_differences() {
    let set = set();
    for (i, s) in SMALL_SMILES.iter().enumerate() {
        let inp = cross_in(s);
        let err = param_fd_error(&set.store, "cross.", 1, i as u64, |st, t| {
            let v = set.cross.forward(t, st, &[&inp]).unwrap();
            probe_loss(t, v, i as u64)
        });
        assert!(err <= FD_TOL, "{s}: {err}");
    }
}

#[test]
fn fuse_gradients_match_finite_differences() {
    let set = set();
    let dim = set.config.dim;
    for i in 0..10u64 {
        let rows = 1 + i as usize % 4;
        let mol = probe(1, dim, 100 + i);
        let subs = probe(rows, dim, 200 + i);
        let err = param_fd_error(&set.store, "cross.fuse", 3, i, |st, t| {
            let m = t.leaf(mol.clone());
            let s = t.leaf(subs.clone());
            let (out, _) = set.cross.fuse.forward(t, st, m, s, &[0..rows], None).unwrap();
            probe_loss(t, out, i)
        });
        assert!(err <= FD_TOL, "rows {rows}: {err}");
    }
}

#[test]
fn vit_gradients_match_finite_differences() {
    let set = set();
    for (i, s) in SMALL_SMILES.iter().enumerate() {
        let img = rasterize(&graph(s), 32, i as u64);
        let err = param_fd_error(&set.store, "vit.", 1, i as u64, |st, t| {
            let v = set.vit.forward(t, st, &[&img]).unwrap();
            probe_loss(t, v, i as u64)
        });
        assert!(err <= FD_TOL, "{s}: {err}");
    }
}

#[test]
fn text_gradients_match_finite_differences() {
    let set = set();
    for (i, s) in SMALL_SMILES.iter().enumerate() {
        let d = describe(&graph(s), i as u64);
        let err = param_fd_error(&set.store, "text.", 1, i as u64, |st, t| {
            let v = set.text.forward(t, st, &[&d]).unwrap();
            probe_loss(t, v, i as u64)
        });
        assert!(err <= FD_TOL, "{s}: {err}");
    }
}

#[test]
fn prop_gradients_match_finite_differences() {
    let mut set = set();
    let corpus: Vec<PropertyVector> = SMALL_SMILES.iter().map(|s| descriptors(&graph(s))).collect();
    set.prop.fit(&mut set.store, &corpus);
    for (i, p) in corpus.iter().enumerate() {
        let err = param_fd_error(&set.store, "prop.linear", 4, i as u64, |st, t| {
            let v = set.prop.forward(t, st, &[p]);
            probe_loss(t, v, i as u64)
        });
        assert!(err <= FD_TOL, "{i}: {err}");
    }
}

#[test]
fn gvp_gradients_match_finite_differences() {
    let set = set();
    for (i, s) in SMALL_SMILES.iter().enumerate() {
        let g = graph(s);
        let conf = generate_conformer(&g, i as u64).unwrap();
        let inp = GeometricInput::new(&g, &conf).unwrap();
        let err = param_fd_error(&set.store, "gvp.", 1, i as u64, |st, t| {
            let v = set.gvp.forward(t, st, &[&inp]);
            probe_loss(t, v, i as u64)
        });
        assert!(err <= FD_TOL, "{s}: {err}");
    }
}

#[test]
fn temperature_gradient_matches_finite_differences() {
    let set = set();
    let ec = probe(5, set.config.dim, 1);
    let eo = probe(5, set.config.dim, 2);
    let err = param_fd_error(&set.store, "align.log_tau", 1, 0, |st, t| {
        let a = t.leaf_grad(ec.clone());
        let b = t.leaf_grad(eo.clone());
        let lt = t.param(st, set.log_tau);
        let tau = mkmed_core::align::temperature(t, lt);
        mkmed_core::align::contrastive_loss(t, a, b, tau).unwrap()
    });
    assert!(err <= FD_TOL, "{err}");
}

// ---- GIN / cross-modal ----

#[test]
fn outputs_have_configured_width_and_are_finite() {
    let mut set = set();
    let corpus: Vec<PropertyVector> = SMALL_SMILES.iter().map(|s| descriptors(&graph(s))).collect();
    set.prop.fit(&mut set.store, &corpus);
    for (i, s) in SMALL_SMILES.iter().enumerate() {
        let g = graph(s);
        let conf = generate_conformer(&g, 0).unwrap();
        let img = rasterize(&g, 32, 0);
        let mut t = Tape::new();
        let outs = [
            embed_cross(&set, &cross_in(s)),
            embed_gin(&set, &g),
            embed_gvp(&set, &GeometricInput::new(&g, &conf).unwrap()).0,
            embed_text(&set, &describe(&g, 0)),
            embed_prop(&set, &corpus[i]),
            {
                let v = set.vit.forward(&mut t, &set.store, &[&img]).unwrap();
                t.value(v).clone()
            },
        ];
        for o in outs {
            assert_eq!(o.shape(), (1, 64));
            assert!(o.is_finite());
        }
    }
}

#[test]
fn gin_single_atom_has_no_aggregation_term() {
    let set = set();
    let gin = &set.cross.mol_gin;
    let g = graph("C");
    let inp = GraphInput::from_graph(&g);
    let out = embed_gin(&set, &g);
    // Manual pass: lift, then (1 + eps) h through each combine MLP, readout.
    let mut t = Tape::new();
    let x = t.leaf(Tensor::from_vec(1, NODE_FEATURES, inp.nodes[0].to_vec()));
    let mut h = gin.lift.forward(&mut t, &set.store, x);
    for layer in &gin.layers {
        let eps = set.store.get(layer.eps).item();
        h = t.affine(h, 1.0 + eps, 0.0);
        h = layer.combine.forward(&mut t, &set.store, h);
    }
    let r = gin.readout.forward(&mut t, &set.store, h);
    assert!(t.value(r).max_abs_diff(&out) < 1e-12);
}

#[test]
fn gin_and_cross_are_permutation_invariant() {
    let set = set();
    for (i, s) in SMALL_SMILES.iter().enumerate() {
        let g = graph(s);
        let p = g.permuted(&random_order(g.atom_count(), i as u64));
        assert!(embed_gin(&set, &g).max_abs_diff(&embed_gin(&set, &p)) < 1e-9, "{s}");
        let a = embed_cross(&set, &CrossModalInput::from_graph(&g));
        let b = embed_cross(&set, &CrossModalInput::from_graph(&p));
        assert!(a.max_abs_diff(&b) < 1e-9, "{s}");
    }
}

#[test]
fn isomorphic_smiles_embed_identically() {
    let set = set();
    for (a, b) in [("OCC", "CCO"), ("c1ccccc1O", "Oc1ccccc1"), ("CC(C)N", "NC(C)C")] {
        assert!(embed_cross(&set, &cross_in(a)).max_abs_diff(&embed_cross(&set, &cross_in(b))) < 1e-9);
    }
}

#[test]
fn single_and_double_bond_embed_differently() {
    for seed in 0..3 {
        let set = EncoderSet::new(EncoderConfig::default(), seed);
        assert!(embed_cross(&set, &cross_in("CC")).max_abs_diff(&embed_cross(&set, &cross_in("C=C"))) > 1e-6);
    }
}

#[test]
fn methane_fuses_over_its_only_substructure() {
    let inp = cross_in("C");
    assert_eq!(inp.substructures.len(), 1);
    let set = set();
    assert!(embed_cross(&set, &inp).is_finite());
}

#[test]
fn gin_rejects_mismatched_features() {
    let set = set();
    let batch = GraphBatch {
        x: Tensor::zeros(2, 3),
        src: vec![0],
        dst: vec![1],
        edge_x: Tensor::zeros(1, EDGE_FEATURES),
        node_graph: vec![0, 0],
        n_graphs: 1,
    };
    let mut t = Tape::new();
    assert!(matches!(set.cross.mol_gin.forward(&mut t, &set.store, &batch), Err(Error::DimensionMismatch(_))));
}

// ---- substructure attention ----

#[test]
fn single_substructure_gets_full_weight() {
    let set = set();
    let (_, w) = substructure_fuse(&set.cross.fuse, &set.store, &probe(1, 64, 1), &probe(1, 64, 2), &[false]).unwrap();
    assert_eq!(w, vec![1.0]);
}

#[test]
fn identical_substructures_share_weight_uniformly() {
    let set = set();
    let row = probe(1, 64, 2);
    for k in 2..6 {
        let subs = Tensor::from_vec(k, 64, row.data.repeat(k));
        let (_, w) = substructure_fuse(&set.cross.fuse, &set.store, &probe(1, 64, 1), &subs, &vec![false; k]).unwrap();
        assert!(w.iter().all(|x| (x - 1.0 / k as f64).abs() < 1e-12), "{w:?}");
    }
}

#[test]
fn padded_rows_get_negligible_weight() {
    let set = set();
    let (fused, w) =
        substructure_fuse(&set.cross.fuse, &set.store, &probe(1, 64, 1), &probe(2, 64, 2), &[false, true]).unwrap();
    assert!(w[1] < 1e-30);
    let (solo, _) =
        substructure_fuse(&set.cross.fuse, &set.store, &probe(1, 64, 1), &Tensor::row_vector(probe(2, 64, 2).row(0).to_vec()), &[false])
            .unwrap();
    assert!(fused.max_abs_diff(&solo) < 1e-12);
}

#[test]
fn all_padding_is_rejected() {
    let set = set();
    let r = substructure_fuse(&set.cross.fuse, &set.store, &probe(1, 64, 1), &probe(2, 64, 2), &[true, true]);
    assert!(matches!(r, Err(Error::AllMasked)));
}

// ---- image ----

#[test]
fn zero_image_is_finite_and_deterministic() {
    let set = set();
    let img = MoleculeImage::zeros(32, 32, 3);
    let run = || {
        let mut t = Tape::new();
        let v = set.vit.forward(&mut t, &set.store, &[&img, &img]).unwrap();
        t.value(v).clone()
    };
    let a = run();
    assert!(a.is_finite());
    assert_eq!(a, run());
    assert_eq!(a.row(0), a.row(1));
}

#[test]
fn bad_patch_grid_is_rejected() {
    let set = set();
    let img = MoleculeImage::zeros(30, 30, 3);
    let mut t = Tape::new();
    assert!(matches!(set.vit.forward(&mut t, &set.store, &[&img]), Err(Error::BadPatchGrid { .. })));
}

// ---- text ----

#[test]
fn single_token_pools_to_its_contextual_vector() {
    let set = set();
    let d = TextDescription::from_segments(&[vec![5]]);
    let out = embed_text(&set, &d);
    // One token: attention is the identity mixing, so a manual pass suffices.
    let mut t = Tape::new();
    let tok = t.param(&set.store, set.text.tokens);
    let e = t.gather_rows(tok, &[5]);
    let pos = t.param(&set.store, set.text.positions);
    let p = t.gather_rows(pos, &[0]);
    let mut h = t.add(e, p);
    for b in &set.text.blocks {
        h = b.forward(&mut t, &set.store, h, &[0..1]);
    }
    let h = set.text.norm.forward(&mut t, &set.store, h);
    assert!(t.value(h).max_abs_diff(&out) < 1e-12);
}

#[test]
fn repeated_segment_doubles_output() {
    let set = set();
    let seg = vec![3, 9, 4, 11];
    let one = embed_text(&set, &TextDescription::from_segments(&[seg.clone()]));
    let two = embed_text(&set, &TextDescription::from_segments(&[seg.clone(), seg]));
    assert!(two.max_abs_diff(&one.scale(2.0)) < 1e-12);
}

#[test]
fn tokens_beyond_limit_are_ignored() {
    let set = set();
    let base: Vec<usize> = (0..MAX_TOKENS).map(|i| 1 + i % 20).collect();
    let a = TextDescription::from_segments(&[base.clone(), vec![7, 7, 7]]);
    let mut longer = base;
    longer.extend([2, 3, 4, 5]);
    let b = TextDescription::from_segments(&[longer]);
    assert_eq!(a.tokens.len(), MAX_TOKENS);
    assert!(embed_text(&set, &a).max_abs_diff(&embed_text(&set, &b)) < 1e-12);
}

#[test]
fn out_of_vocabulary_token_is_rejected() {
    let set = set();
    let d = TextDescription::from_segments(&[vec![vocab_size()]]);
    let mut t = Tape::new();
    assert!(matches!(set.text.forward(&mut t, &set.store, &[&d]), Err(Error::TokenOutOfVocab { .. })));
}

// ---- properties ----

fn fitted_prop() -> (EncoderSet, Vec<PropertyVector>, PropertyVector) {
    let mut set = set();
    let corpus: Vec<PropertyVector> = SMALL_SMILES.iter().map(|s| descriptors(&graph(s))).collect();
    set.prop.fit(&mut set.store, &corpus);
    let n = corpus.len() as f64;
    let mut mean = [0.0; 5];
    for v in &corpus {
        for (m, x) in mean.iter_mut().zip(v.to_array()) {
            *m += x / n;
        }
    }
    (set, corpus, PropertyVector::from_array(mean))
}

#[test]
fn corpus_mean_maps_to_bias() {
    // Integer channels agree across the corpus, so its mean is exact.
    let mut set = set();
    let corpus: Vec<PropertyVector> = ["CCO", "CCCO", "CCCCO"].iter().map(|s| descriptors(&graph(s))).collect();
    set.prop.fit(&mut set.store, &corpus);
    let mut mean = corpus[0].clone();
    mean.molecular_weight = corpus.iter().map(|p| p.molecular_weight).sum::<f64>() / 3.0;
    let out = embed_prop(&set, &mean);
    let bias = set.store.get(set.prop.linear.b.unwrap());
    assert!(out.max_abs_diff(bias) < 1e-12);
}

#[test]
fn property_encoding_is_affine() {
    let (set, corpus, mean) = fitted_prop();
    for w in corpus.windows(2) {
        let (a, b) = (w[0].to_array(), w[1].to_array());
        let m = mean.to_array();
        let sum = PropertyVector::from_array(core::array::from_fn(|c| a[c] + b[c] - m[c]));
        let lhs = embed_prop(&set, &w[0]).zip(&embed_prop(&set, &w[1]), |x, y| x + y).zip(&embed_prop(&set, &mean), |x, y| x - y);
        assert!(lhs.max_abs_diff(&embed_prop(&set, &sum)) < 1e-6);
        assert_eq!(embed_prop(&set, &w[0]), embed_prop(&set, &w[0]));
    }
}

#[test]
fn constant_channel_is_dropped() {
    let set = set();
    let mut st = set.store.clone();
    let corpus: Vec<PropertyVector> =
        (0..4).map(|i| PropertyVector::from_array([1.0 + i as f64, 2.0, i as f64 * 0.5, 3.0 - i as f64, 7.0])).collect();
    let dropped = set.prop.fit(&mut st, &corpus);
    assert_eq!(dropped, vec![1, 4]);
    assert!(st.get(set.prop.inv_std).data.iter().all(|x| x.is_finite()));
}

// ---- geometry ----

fn conformers() -> Vec<(MoleculeGraph, Vec<[f64; 3]>)> {
    SMALL_SMILES
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let g = graph(s);
            let c = generate_conformer(&g, i as u64).unwrap().coords;
            (g, c)
        })
        .collect()
}

#[test]
fn gvp_output_is_rotation_and_translation_invariant() {
    let set = set();
    for (i, (g, coords)) in conformers().into_iter().enumerate() {
        let (base, v) = embed_gvp(&set, &geo(&g, coords.clone()));
        let rot = random_rotation(i as u64);
        let rotated: Vec<[f64; 3]> = coords.iter().map(|&p| rotate(&rot, p)).collect();
        let (er, vr) = embed_gvp(&set, &geo(&g, rotated));
        assert!(base.max_abs_diff(&er) < 1e-5);
        // Vector features co-rotate: V'(Rx) = R V'(x), per node and channel.
        let c = v.cols;
        for node in 0..g.atom_count() {
            for ch in 0..c {
                let orig = [v.get(3 * node, ch), v.get(3 * node + 1, ch), v.get(3 * node + 2, ch)];
                let expect = rotate(&rot, orig);
                for k in 0..3 {
                    assert!((vr.get(3 * node + k, ch) - expect[k]).abs() < 1e-5);
                }
            }
        }
        let shift = [3.0, -1.5, 0.25];
        let moved: Vec<[f64; 3]> = coords.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect();
        assert!(base.max_abs_diff(&embed_gvp(&set, &geo(&g, moved)).0) < 1e-5);
    }
}

#[test]
fn zero_vector_mixing_keeps_vectors_zero() {
    let mut set = EncoderSet::new(
        EncoderConfig { gvp: GvpWidths { layers: 1, ..GvpWidths::default() }, ..EncoderConfig::default() },
        1,
    );
    let wmu = set.gvp.layers[0].w_mu.w;
    let (rows, cols) = set.store.get(wmu).shape();
    *set.store.get_mut(wmu) = Tensor::zeros(rows, cols);
    let (g, coords) = conformers().remove(1);
    let (_, v) = embed_gvp(&set, &geo(&g, coords));
    assert!(v.data.iter().all(|&x| x == 0.0));
}

#[test]
fn coincident_bonded_atoms_are_degenerate() {
    let g = graph("CC");
    let r = GeometricInput::new(&g, &Conformer { coords: vec![[0.0; 3], [0.0, 0.0, 1e-8]], seed: 0 });
    assert!(matches!(r, Err(Error::DegenerateEdge(..))));
}

// ---- knowledge graph ----

#[test]
fn single_triple_ranks_above_corruptions() {
    let triple = KgTriple { head: 0, relation: 0, tail: 1 };
    let kg = transe_train(&[triple], 40, 1, &TransEConfig { epochs: 100, ..TransEConfig::default() }).unwrap();
    let pos = kg.score(0, 0, 1);
    let wins = (0..40).filter(|&t| t != 1).filter(|&t| pos < kg.score(0, 0, t)).count();
    assert!(wins as f64 >= 0.95 * 39.0, "{wins}");
}

#[test]
fn entity_norms_stay_clamped() {
    let mut r = rng::stream(5, 93);
    let triples: Vec<KgTriple> = (0..60)
        .map(|_| KgTriple { head: r.random_range(0..30), relation: r.random_range(0..3), tail: r.random_range(30..45) })
        .collect();
    for epochs in 0..8 {
        let kg = transe_train(&triples, 45, 3, &TransEConfig { epochs, ..TransEConfig::default() }).unwrap();
        assert!(kg.max_entity_norm() <= 1.0 + 1e-6);
    }
}

#[test]
fn zero_epochs_returns_seeded_initialization() {
    let triples = [KgTriple { head: 0, relation: 0, tail: 1 }];
    let a = transe_train(&triples, 5, 1, &TransEConfig { epochs: 0, ..TransEConfig::default() }).unwrap();
    let b = transe_train(&triples, 5, 1, &TransEConfig { epochs: 0, ..TransEConfig::default() }).unwrap();
    assert_eq!(a, b);
    let c = transe_train(&triples, 5, 1, &TransEConfig { epochs: 0, seed: 1, ..TransEConfig::default() }).unwrap();
    assert_ne!(a.entities, c.entities);
}

#[test]
fn lookup_knows_only_registered_entities() {
    let triples = [KgTriple { head: 0, relation: 0, tail: 2 }];
    let kg = transe_train(&triples, 4, 1, &TransEConfig::default()).unwrap();
    assert_eq!(kg.lookup(2).unwrap(), kg.entities.row(2));
    assert_eq!(kg.lookup(2).unwrap(), kg.lookup(2).unwrap());
    assert!(matches!(kg.lookup(1), Err(Error::UnknownEntity(_))));
    assert!(matches!(transe_train(&[], 4, 1, &TransEConfig::default()), Err(Error::EmptyKg)));
}
