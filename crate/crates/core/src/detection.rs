//! Trigger detection: windowed log-probability scores, a threshold set from
//! unlabeled scores and the known trigger frequency, and the evaluation
//! harnesses built on top.
//!
//! `score_window`, `calibrate_threshold` and `detect` never see labels.

use alloc::vec::Vec;

use rand::RngCore;

use crate::alphabet::{Letter, ALPHABET_SIZE};
use crate::corpus::{sample_nontrigger, NormalizedText, TriggerSpec};
use crate::encoder::{argmax, forward, predict_batch, EncoderParams};
use crate::fonts::{render_letters, GlyphPool, GlyphSet, Split};
use crate::linalg::Matrix;
use crate::stats::pearson;
use crate::{rng_from_seed, Error, Result, Rng, EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorThreshold {
    /// Log-probability threshold in nats.
    pub theta: f64,
    /// Expected fraction of trigger windows used for calibration.
    pub prior: f64,
}

impl DetectorThreshold {
    /// Threshold expressed as a per-character probability, `exp(theta / n)`.
    pub fn per_char_prob(&self, len: usize) -> f64 {
        libm::exp(self.theta / len as f64)
    }
}

/// The detector's output for one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    /// The window is judged to be the trigger.
    Fire,
    Silent,
}

/// `sum_i ln(max(eps, P(x_i = t_i)))` over a window of `trigger.len()` images.
pub fn score_window(p: &EncoderParams, window: &Matrix, trigger: &TriggerSpec) -> Result<f64> {
    if window.rows() != trigger.len() {
        return Err(Error::param(alloc::format!(
            "window has {} images, trigger has {} letters",
            window.rows(),
            trigger.len()
        )));
    }
    let probs = forward(p, window)?.probs;
    Ok(window_score(&probs, (0..window.rows() as u32).collect::<Vec<_>>().as_slice(), &trigger.letters))
}

fn window_score(probs: &Matrix, rows: &[u32], letters: &[Letter]) -> f64 {
    rows.iter()
        .zip(letters)
        .map(|(&r, &t)| libm::log(probs.get(r as usize, t as usize).max(EPS)))
        .sum()
}

/// Pick `theta` so that the fraction of scores strictly above it is as close
/// to `prior` as the order statistics allow. The cut sits halfway between two
/// neighbouring distinct scores; ties in that distance go to the smaller
/// fired count. If nothing should fire, `theta = max + 1`; if everything
/// should, `theta = min - 1`.
pub fn calibrate_threshold(scores: &[f64], prior: f64) -> Result<DetectorThreshold> {
    if scores.is_empty() {
        return Err(Error::param("cannot calibrate on an empty score set"));
    }
    if !(prior > 0.0 && prior < 1.0) {
        return Err(Error::param("prior must lie in (0, 1)"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::numeric("calibration scores"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    // Cut positions m where exactly m scores lie strictly above the cut.
    let valid = |m: usize| m == 0 || m == n || sorted[m - 1] > sorted[m];
    let mut best_m = 0;
    let mut best_gap = f64::INFINITY;
    for m in (0..=n).filter(|&m| valid(m)) {
        let gap = (m as f64 / n as f64 - prior).abs();
        if gap < best_gap {
            best_gap = gap;
            best_m = m;
        }
    }
    let theta = if best_m == 0 {
        sorted[0] + 1.0
    } else if best_m == n {
        sorted[n - 1] - 1.0
    } else {
        0.5 * (sorted[best_m - 1] + sorted[best_m])
    };
    Ok(DetectorThreshold { theta, prior })
}

/// Fires iff `score > theta`.
pub fn detect(score: f64, th: &DetectorThreshold) -> Response {
    if score > th.theta {
        Response::Fire
    } else {
        Response::Silent
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub trigger: TriggerSpec,
    pub accuracy: f64,
    pub true_positive_rate: f64,
    pub true_negative_rate: f64,
    pub theta: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Renders `n_per_side` trigger windows and `n_per_side` held-out corpus
/// windows (never equal to the trigger) from test glyphs, scores them,
/// calibrates on the pooled scores with prior 0.5, then grades against the
/// window identities.
pub fn eval_trigger_balanced(
    p: &EncoderParams,
    trigger: &TriggerSpec,
    text_test: &NormalizedText,
    gs: &GlyphSet,
    n_per_side: usize,
    rng: &mut Rng,
) -> Result<DetectionReport> {
    if n_per_side == 0 {
        return Err(Error::param("need at least one window per side"));
    }
    let len = trigger.len();
    let negatives = sample_nontrigger(text_test, n_per_side, len, Some(&trigger.letters), rng)
        .map_err(|e| Error::data(alloc::format!("held-out text cannot supply non-trigger windows: {e}")))?;
    let mut letters = Vec::with_capacity(2 * n_per_side * len);
    for _ in 0..n_per_side {
        letters.extend_from_slice(&trigger.letters);
    }
    for w in &negatives {
        letters.extend_from_slice(w);
    }
    let pool = gs.pool(Split::Test);
    let scores = score_rendered(p, &letters, pool, len, rng)?;

    let th = calibrate_threshold(&scores, 0.5)?;
    let fired: Vec<bool> = scores.iter().map(|&s| detect(s, &th) == Response::Fire).collect();
    let tp = fired[..n_per_side].iter().filter(|&&f| f).count();
    let tn = fired[n_per_side..].iter().filter(|&&f| !f).count();
    Ok(DetectionReport {
        trigger: trigger.clone(),
        accuracy: (tp + tn) as f64 / (2 * n_per_side) as f64,
        true_positive_rate: tp as f64 / n_per_side as f64,
        true_negative_rate: tn as f64 / n_per_side as f64,
        theta: th.theta,
        n_pos: n_per_side,
        n_neg: n_per_side,
    })
}

/// Renders back-to-back windows of `len` letters and scores every window
/// against the trigger, which occupies the first window.
fn score_rendered(
    p: &EncoderParams,
    letters: &[Letter],
    pool: &GlyphPool,
    len: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let trigger = &letters[..len];
    let seq = render_letters(letters, pool, rng)?;
    let probs = forward(p, &seq.glyphs)?.probs;
    Ok(seq.index.chunks_exact(len).map(|w| window_score(&probs, w, trigger)).collect())
}

/// Mean accuracy of the triggers of one length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthSummary {
    pub length: usize,
    pub mean_accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub reports: Vec<DetectionReport>,
    pub per_length: Vec<LengthSummary>,
    /// Correlation of accuracy with trigger length over all reports; absent
    /// when undefined.
    pub pearson_r: Option<f64>,
}

/// One seed per trigger, drawn in suite order, so triggers can be evaluated
/// independently and in any order.
pub fn sweep_seeds(n: usize, rng: &mut Rng) -> Vec<u64> {
    (0..n).map(|_| rng.next_u64()).collect()
}

pub fn summarize_sweep(reports: Vec<DetectionReport>) -> SweepReport {
    let mut per_length: Vec<LengthSummary> = Vec::new();
    for r in &reports {
        let len = r.trigger.len();
        match per_length.iter_mut().find(|s| s.length == len) {
            Some(s) => {
                s.mean_accuracy += r.accuracy;
                s.count += 1;
            }
            None => per_length.push(LengthSummary { length: len, mean_accuracy: r.accuracy, count: 1 }),
        }
    }
    for s in &mut per_length {
        s.mean_accuracy /= s.count as f64;
    }
    per_length.sort_by_key(|s| s.length);
    let xs: Vec<f64> = reports.iter().map(|r| r.trigger.len() as f64).collect();
    let ys: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    SweepReport { pearson_r: pearson(&xs, &ys), per_length, reports }
}

/// Balanced evaluation of every trigger in `suite`.
pub fn trigger_sweep(
    p: &EncoderParams,
    suite: &[TriggerSpec],
    text_test: &NormalizedText,
    gs: &GlyphSet,
    n_per_side: usize,
    rng: &mut Rng,
) -> Result<SweepReport> {
    if suite.is_empty() {
        return Err(Error::param("trigger suite is empty"));
    }
    let seeds = sweep_seeds(suite.len(), rng);
    let reports = suite
        .iter()
        .zip(seeds)
        .map(|(t, s)| eval_trigger_balanced(p, t, text_test, gs, n_per_side, &mut rng_from_seed(s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_sweep(reports))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[u64; ALPHABET_SIZE]; ALPHABET_SIZE],
    pub per_class: usize,
}

/// Accuracy of the highest-probability letter on a class-balanced sample of
/// `per_class` test glyphs per letter.
pub fn eval_characters(p: &EncoderParams, pool: &GlyphPool, per_class: usize, rng: &mut Rng) -> Result<CharacterReport> {
    if per_class == 0 {
        return Err(Error::param("per_class must be positive"));
    }
    let set = pool.balanced_sample(per_class, rng)?;
    let pred = predict_batch(p, &set.images)?;
    let mut confusion = [[0u64; ALPHABET_SIZE]; ALPHABET_SIZE];
    let mut correct = 0usize;
    for (&t, &q) in set.labels.iter().zip(&pred) {
        confusion[t as usize][q as usize] += 1;
        correct += usize::from(t == q);
    }
    Ok(CharacterReport { accuracy: correct as f64 / set.labels.len() as f64, confusion, per_class })
}

/// Accuracy of the highest-probability letter on explicitly labeled images.
pub fn labeled_accuracy(probs: &Matrix, labels: &[Letter]) -> f64 {
    let hits = (0..probs.rows()).filter(|&i| argmax(probs.row(i)) == labels[i] as usize).count();
    hits as f64 / probs.rows().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::HIDDEN;
    use crate::fonts::{make_synthetic_font, SyntheticFont};

    /// An encoder that maps one-hot glyph `c` to letter `c` with probability
    /// close to 1: identity through the hidden layer, large output gain.
    fn perfect_encoder() -> EncoderParams {
        let d = ALPHABET_SIZE;
        let mut p = EncoderParams::zeros(d);
        let (w1, _, w2, _) = p.parts_mut();
        for c in 0..d {
            w1[c * d + c] = 1.0;
            w2[c * HIDDEN + c] = 60.0;
        }
        p
    }

    fn onehot_font() -> GlyphSet {
        let mut m = Matrix::zeros(52, 26);
        let mut labels = Vec::new();
        for i in 0..52 {
            m.set(i, i % 26, 1.0);
            labels.push((i % 26) as Letter);
        }
        let pool = GlyphPool::from_labeled(&m, &labels).unwrap();
        GlyphSet::new("onehot", pool.clone(), pool).unwrap()
    }

    #[test]
    fn score_closed_forms() {
        let p = EncoderParams::zeros(4);
        let t = TriggerSpec::parse("fnord", 0.5).unwrap();
        let w = Matrix::zeros(5, 4);
        let s = score_window(&p, &w, &t).unwrap();
        assert!((s - 5.0 * libm::log(1.0 / 26.0)).abs() < 1e-12);
        assert!(score_window(&p, &Matrix::zeros(4, 4), &t).is_err());
    }

    #[test]
    fn calibration_examples() {
        let th = calibrate_threshold(&[-1.0, -2.0, -3.0, -4.0], 0.5).unwrap();
        assert_eq!(th.theta, -2.5);
        let all = calibrate_threshold(&[-1.0, -2.0, -3.0, -4.0], 0.99).unwrap();
        assert!(all.theta < -4.0);
        let none = calibrate_threshold(&[-1.0, -2.0], 0.01).unwrap();
        assert!(none.theta > -1.0);
        assert!(calibrate_threshold(&[], 0.5).is_err());
        assert!(calibrate_threshold(&[1.0], 1.0).is_err());
    }

    #[test]
    fn calibration_respects_ties() {
        // Three equal top scores cannot be split; firing 3 of 4 is closer
        // to 0.5 than firing none.
        let th = calibrate_threshold(&[0.0, 0.0, 0.0, -1.0], 0.5).unwrap();
        assert_eq!(th.theta, -0.5);
    }

    #[test]
    fn detect_is_strict() {
        let th = DetectorThreshold { theta: -2.5, prior: 0.5 };
        assert_eq!(detect(-1.0, &th), Response::Fire);
        assert_eq!(detect(-2.5, &th), Response::Silent);
    }

    #[test]
    fn perfect_encoder_detects_everything() {
        let gs = onehot_font();
        let p = perfect_encoder();
        let text = NormalizedText::from_letters(crate::alphabet::parse("the quick brown fox jumps over the lazy dog"), "t")
            .unwrap();
        let t = TriggerSpec::parse("fnord", 0.5).unwrap();
        let r = eval_trigger_balanced(&p, &t, &text, &gs, 50, &mut rng_from_seed(1)).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!((r.true_positive_rate, r.true_negative_rate), (1.0, 1.0));
        let c = eval_characters(&p, gs.pool(Split::Test), 2, &mut rng_from_seed(0)).unwrap();
        assert_eq!(c.accuracy, 1.0);
        for (i, row) in c.confusion.iter().enumerate() {
            assert_eq!(row[i], 2);
        }
    }

    #[test]
    fn constant_encoder_is_at_chance() {
        let gs = onehot_font();
        let p = EncoderParams::zeros(26);
        let text = NormalizedText::from_letters(crate::alphabet::parse("the quick brown fox jumps over the lazy dog"), "t")
            .unwrap();
        let t = TriggerSpec::parse("fnord", 0.5).unwrap();
        let r = eval_trigger_balanced(&p, &t, &text, &gs, 40, &mut rng_from_seed(1)).unwrap();
        assert_eq!(r.accuracy, 0.5);
        let c = eval_characters(&p, gs.pool(Split::Test), 2, &mut rng_from_seed(0)).unwrap();
        assert!((c.accuracy - 1.0 / 26.0).abs() < 1e-12);
    }

    #[test]
    fn evaluation_is_seed_deterministic() {
        let gs = make_synthetic_font(&SyntheticFont { dim: 26, sigma: 0.3, seed: 0, train_per_class: 2, test_per_class: 5 })
            .unwrap();
        let p = crate::encoder::init_params(26, crate::encoder::InitScheme::Xavier, 3).unwrap();
        let text = NormalizedText::from_letters(crate::alphabet::parse("the quick brown fox jumps over the lazy dog"), "t")
            .unwrap();
        let t = TriggerSpec::parse("fox", 0.5).unwrap();
        let a = eval_trigger_balanced(&p, &t, &text, &gs, 30, &mut rng_from_seed(7)).unwrap();
        let b = eval_trigger_balanced(&p, &t, &text, &gs, 30, &mut rng_from_seed(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn insufficient_text_is_a_data_error() {
        let gs = onehot_font();
        let text = NormalizedText::from_letters(crate::alphabet::parse("ab"), "t").unwrap();
        let t = TriggerSpec::parse("abc", 0.5).unwrap();
        let err = eval_trigger_balanced(&EncoderParams::zeros(26), &t, &text, &gs, 3, &mut rng_from_seed(0));
        assert!(matches!(err, Err(Error::Data(_))));
        let short = eval_characters(&EncoderParams::zeros(26), gs.pool(Split::Test), 3, &mut rng_from_seed(0));
        assert!(matches!(short, Err(Error::Data(_))));
    }

    #[test]
    fn single_trigger_sweep_has_no_correlation() {
        let gs = onehot_font();
        let text = NormalizedText::from_letters(crate::alphabet::parse("the quick brown fox jumps over the lazy dog"), "t")
            .unwrap();
        let suite = [TriggerSpec::parse("ox", 0.5).unwrap()];
        let s = trigger_sweep(&perfect_encoder(), &suite, &text, &gs, 10, &mut rng_from_seed(0)).unwrap();
        assert_eq!(s.pearson_r, None);
        assert_eq!(s.per_length, [LengthSummary { length: 2, mean_accuracy: 1.0, count: 1 }]);
    }
}
