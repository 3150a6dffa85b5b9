//! Analytic gradients of every loss against central finite differences.

use rand::Rng;
use ungrounded_core::corpus::{BigramTable, UnigramTable};
use ungrounded_core::encoder::{init_params, EncoderParams, InitScheme};
use ungrounded_core::fonts::PairBatch;
use ungrounded_core::linalg::Matrix;
use ungrounded_core::losses::{cross_entropy_and_grad, loss_and_grad, LossKind, Prior};
use ungrounded_core::{rng_from_seed, Rng as CoreRng};

const DIM: usize = 10;
const PAIRS: usize = 6;
const H: f64 = 1e-4;

fn random_matrix(rows: usize, cols: usize, rng: &mut CoreRng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn random_bigram(rng: &mut CoreRng) -> BigramTable {
    let mut counts = [[0u64; 26]; 26];
    for row in counts.iter_mut() {
        for c in row.iter_mut() {
            *c = rng.random_range(1..50);
        }
    }
    BigramTable::from_counts(counts)
}

fn random_unigram(rng: &mut CoreRng) -> UnigramTable {
    let mut probs = [0.0; 26];
    for p in probs.iter_mut() {
        *p = rng.random_range(0.1..1.0);
    }
    let s: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= s);
    UnigramTable { probs }
}

/// Random parameters with enough scale that the softmax is far from uniform.
fn random_params(seed: u64) -> EncoderParams {
    let mut p = init_params(DIM, InitScheme::Kaiming, seed).unwrap();
    let mut rng = rng_from_seed(seed ^ 0xb1a5);
    for v in p.as_mut_slice() {
        *v += rng.random_range(-0.3..0.3);
    }
    p
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / (na + nn).max(1e-12)
}

fn numeric_gradient(p: &EncoderParams, f: impl Fn(&EncoderParams) -> f64) -> Vec<f64> {
    let mut q = p.clone();
    (0..p.len())
        .map(|k| {
            let orig = q.as_slice()[k];
            q.as_mut_slice()[k] = orig + H;
            let up = f(&q);
            q.as_mut_slice()[k] = orig - H;
            let down = f(&q);
            q.as_mut_slice()[k] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn check_kind(kind: LossKind, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let first = random_matrix(PAIRS, DIM, &mut rng);
    let second = random_matrix(PAIRS, DIM, &mut rng);
    let batch = PairBatch::from_matrices(&first, &second).unwrap();
    let bi = random_bigram(&mut rng);
    let uni = random_unigram(&mut rng);
    let prior = if kind.uses_bigram() { Prior::Bigram(&bi) } else { Prior::Unigram(&uni) };
    let p = random_params(seed);
    let analytic = loss_and_grad(&p, &batch, prior, kind).unwrap().grads;
    let numeric = numeric_gradient(&p, |q| loss_and_grad(q, &batch, prior, kind).unwrap().value);
    relative_error(analytic.as_slice(), &numeric)
}

#[test]
fn every_loss_matches_finite_differences() {
    for kind in LossKind::ALL {
        for seed in 0..3 {
            let err = check_kind(kind, seed);
            assert!(err < 1e-4, "{kind} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn shared_glyphs_accumulate_gradients() {
    // The same glyph appears in several pairs and on both sides.
    let mut rng = rng_from_seed(11);
    let glyphs = random_matrix(3, DIM, &mut rng);
    let batch = PairBatch::from_indices(glyphs, vec![0, 1, 2, 0, 1, 1], vec![1, 2, 0, 0, 2, 1]).unwrap();
    let bi = random_bigram(&mut rng);
    let p = random_params(5);
    for kind in [LossKind::BigramContrastive, LossKind::BigramKl] {
        let analytic = loss_and_grad(&p, &batch, Prior::Bigram(&bi), kind).unwrap().grads;
        let numeric = numeric_gradient(&p, |q| loss_and_grad(q, &batch, Prior::Bigram(&bi), kind).unwrap().value);
        let err = relative_error(analytic.as_slice(), &numeric);
        assert!(err < 1e-4, "{kind}: relative error {err:e}");
    }
}

#[test]
fn cross_entropy_matches_finite_differences() {
    let mut rng = rng_from_seed(3);
    let images = random_matrix(8, DIM, &mut rng);
    let labels: Vec<u8> = (0..8).map(|_| rng.random_range(0..26)).collect();
    let p = random_params(9);
    let analytic = cross_entropy_and_grad(&p, &images, &labels).unwrap().grads;
    let numeric = numeric_gradient(&p, |q| cross_entropy_and_grad(q, &images, &labels).unwrap().value);
    assert!(relative_error(analytic.as_slice(), &numeric) < 1e-4);
}
