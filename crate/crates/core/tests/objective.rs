mod common;

use common::{head_fd_error, rel_err, HeadLoss, FD_STEP, FD_TOL};
use mkmed_core::clinical::*;
use mkmed_core::objective::*;
use mkmed_core::{rng, Error};
use rand::Rng;

fn random_case(seed: u64, n: usize) -> (Vec<f64>, Vec<bool>, DdiMatrix) {
    let mut r = rng::stream(seed, 60);
    let scores = (0..n).map(|_| rng::uniform(&mut r, 0.05, 0.95)).collect();
    let truth = (0..n).map(|_| r.random_bool(0.4)).collect();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(0.3) {
                pairs.push((i, j));
            }
        }
    }
    (scores, truth, DdiMatrix::from_pairs(n, &pairs).unwrap())
}

#[test]
fn bce_examples() {
    let l = bce_loss(&[1.0 - 1e-7, 1e-7], &[true, false]).unwrap();
    assert!((l - 2e-7).abs() < 1e-12);
    let l = bce_loss(&[0.5; 4], &[true, false, true, true]).unwrap();
    assert!((l - 4.0 * 2f64.ln()).abs() < 1e-12);
    assert!((l - 2.77259).abs() < 1e-5);
    assert!(bce_loss(&[0.0, 1.0], &[true, false]).unwrap().is_finite());
    assert!(matches!(bce_loss(&[0.5], &[true, false]), Err(Error::ShapeMismatch(_))));
}

#[test]
fn bce_is_permutation_equivariant() {
    let (s, t, _) = random_case(1, 7);
    let order = [3, 0, 6, 2, 5, 1, 4];
    let ps: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let pt: Vec<bool> = order.iter().map(|&i| t[i]).collect();
    assert!((bce_loss(&s, &t).unwrap() - bce_loss(&ps, &pt).unwrap()).abs() < 1e-12);
}

#[test]
fn hinge_examples() {
    assert_eq!(hinge_loss(&[0.0, 0.0], &[true, false]).unwrap(), 0.5);
    assert_eq!(hinge_loss(&[2.0, 2.5, 0.5, 1.0], &[true, true, false, false]).unwrap(), 0.0);
    assert_eq!(hinge_loss(&[0.3, 0.9], &[false, false]).unwrap(), 0.0);
}

#[test]
fn ddi_examples() {
    assert_eq!(ddi_loss(&[0.9, 0.9, 0.9], &DdiMatrix::zeros(3)).unwrap(), 0.0);
    let m = DdiMatrix::from_pairs(3, &[(0, 2)]).unwrap();
    assert_eq!(ddi_loss(&[0.5, 0.9, 0.5], &m).unwrap(), 0.5);
    for seed in 0..20 {
        let (s, _, m) = random_case(seed, 6);
        let base = ddi_loss(&s, &m).unwrap();
        for i in 0..6 {
            let mut up = s.clone();
            up[i] += 0.03;
            assert!(ddi_loss(&up, &m).unwrap() >= base);
        }
        let positive = m.pairs().iter().any(|&(i, j)| s[i] > 0.0 && s[j] > 0.0);
        assert_eq!(base > 0.0, positive);
    }
}

#[test]
fn combination_examples() {
    let parts = LossParts { bce: 2.0, multi: 0.4, ddi: 0.5 };
    assert!((combine(parts, &LossWeights::default()) - 1.849).abs() < 1e-12);
    let (s, t, m) = random_case(4, 6);
    let w1 = LossWeights { beta: 1.0, gamma: 1.0, ..LossWeights::default() };
    assert_eq!(combined_loss(&s, &t, &m, &w1).unwrap(), bce_loss(&s, &t).unwrap());
    let w0 = LossWeights { beta: 0.0, ..LossWeights::default() };
    assert_eq!(combined_loss(&s, &t, &m, &w0).unwrap(), ddi_loss(&s, &m).unwrap());
}

#[test]
fn combined_loss_is_bounded_by_scaled_components() {
    for seed in 0..50 {
        let (s, t, m) = random_case(seed, 8);
        let p = loss_parts(&s, &t, &m).unwrap();
        for (beta, gamma) in [(0.95, 0.95), (0.3, 0.7), (0.5, 0.0)] {
            let w = LossWeights { beta, gamma, ..LossWeights::default() };
            let v = combine(p, &w);
            let lo = p.bce.min(p.multi).min(p.ddi);
            let hi = p.bce.max(p.multi).max(p.ddi);
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}

#[test]
fn controller_examples() {
    let on = LossWeights { controller: true, ..LossWeights::default() };
    assert_eq!(beta_controller(0.06, &on), 1.0);
    assert!(beta_controller(0.06 + CONTROLLER_KAPPA, &on).abs() < 1e-12);
    assert_eq!(beta_controller(0.5, &on), 0.0);
    assert!((beta_controller(0.085, &on) - 0.5).abs() < 1e-12);
    for rate in [0.0, 0.06, 0.3, 1.0] {
        assert_eq!(beta_controller(rate, &LossWeights::default()), 0.95);
    }
    assert!(LossWeights { gamma: 1.2, ..LossWeights::default() }.validate().is_err());
}

#[test]
fn score_gradients_match_finite_differences() {
    for seed in 0..10 {
        let (s, t, m) = random_case(seed, 7);
        let w = LossWeights::default();
        let (_, g) = combined_grad(&s, &t, &m, &w).unwrap();
        let checks: [(Vec<f64>, &dyn Fn(&[f64]) -> f64); 4] = [
            (g, &|x| combined_loss(x, &t, &m, &w).unwrap()),
            (bce_grad(&s, &t).unwrap(), &|x| bce_loss(x, &t).unwrap()),
            (hinge_grad(&s, &t).unwrap(), &|x| hinge_loss(x, &t).unwrap()),
            (ddi_grad(&s, &m).unwrap(), &|x| ddi_loss(x, &m).unwrap()),
        ];
        for (analytic, f) in checks {
            for i in 0..s.len() {
                let (mut up, mut down) = (s.clone(), s.clone());
                up[i] += FD_STEP;
                down[i] -= FD_STEP;
                let num = (f(&up) - f(&down)) / (2.0 * FD_STEP);
                assert!(rel_err(analytic[i], num) <= FD_TOL, "seed {seed} entry {i}");
            }
        }
    }
}

#[test]
fn losses_composed_with_the_head_match_finite_differences() {
    let losses: [(&str, HeadLoss); 4] = [
        ("bce", |s, t, _| (bce_loss(s, t).unwrap(), bce_grad(s, t).unwrap())),
        ("hinge", |s, t, _| (hinge_loss(s, t).unwrap(), hinge_grad(s, t).unwrap())),
        ("ddi", |s, _, m| (ddi_loss(s, m).unwrap(), ddi_grad(s, m).unwrap())),
        ("combined", |s, t, m| combined_grad(s, t, m, &LossWeights::default()).unwrap()),
    ];
    for (name, loss) in losses {
        for seed in 0..10 {
            let err = head_fd_error(seed, loss);
            assert!(err <= FD_TOL, "{name} seed {seed}: {err}");
        }
    }
}
