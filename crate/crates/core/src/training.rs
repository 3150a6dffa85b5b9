//! Full-batch training with random restarts, plus the probes used to study
//! the loss surface: linear interpolation between parameter sets, the order
//! in which letters become recognizable, and a label-trained reference model.
//!
//! Restart selection uses the unsupervised training loss only.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::alphabet::{Letter, ALPHABET_SIZE};
use crate::encoder::{init_params, predict_batch, EncoderParams, InitScheme};
use crate::fonts::{LabeledSet, PairBatch};
use crate::linalg::Matrix;
use crate::losses::{cross_entropy_and_grad, loss_and_grad, LossGrad, LossKind, Prior};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::{rng_from_seed, Error, Result};

/// Stop when the loss improved by less than `min_improvement` over the last
/// `window` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub window: usize,
    pub min_improvement: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self { window: 500, min_improvement: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub optimizer: OptimizerConfig,
    pub restarts: usize,
    pub loss: LossKind,
    pub init_scheme: InitScheme,
    pub seed: u64,
    pub trace_every: usize,
    pub early_stop: Option<EarlyStop>,
    /// Pairs per update. `None` is full-batch; anything else is a deviation
    /// from full-batch training and is reported as such.
    pub minibatch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            optimizer: OptimizerConfig::default(),
            restarts: 64,
            loss: LossKind::BigramContrastive,
            init_scheme: InitScheme::Xavier,
            seed: 0,
            trace_every: 100,
            early_stop: Some(EarlyStop::default()),
            minibatch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::param("restarts must be at least 1"));
        }
        if self.trace_every == 0 {
            return Err(Error::param("trace_every must be at least 1"));
        }
        if !(self.optimizer.rate > 0.0 && self.optimizer.rate.is_finite()) {
            return Err(Error::param("learning rate must be positive"));
        }
        if self.minibatch == Some(0) {
            return Err(Error::param("minibatch size must be positive"));
        }
        Ok(())
    }

    /// Seed of restart `k`.
    pub fn restart_seed(&self, k: usize) -> u64 {
        self.seed.wrapping_add(k as u64)
    }
}

/// Letters the encoder currently gets right on a majority of probe glyphs.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryEvent {
    pub step: usize,
    pub loss: f64,
    pub letters: [bool; ALPHABET_SIZE],
}

impl DiscoveryEvent {
    /// `A...E....` style rendering: discovered letters uppercase, others `.`.
    pub fn render(&self) -> String {
        self.letters
            .iter()
            .enumerate()
            .map(|(i, &d)| if d { (b'A' + i as u8) as char } else { '.' })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiscoveryTrace {
    pub events: Vec<DiscoveryEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartResult {
    pub params: EncoderParams,
    pub final_train_loss: f64,
    pub seed: u64,
    pub loss_history: Vec<(usize, f64)>,
    pub steps_run: usize,
    /// Training stopped on a non-finite value; `params` is the last finite state.
    pub diverged: bool,
    pub discovery: Option<DiscoveryTrace>,
}

/// Probe glyphs per letter for discovery tracking.
pub const DISCOVERY_PER_LETTER: usize = 100;

/// Letters classified correctly on more than half of their 100 probe glyphs.
pub fn discovery_trace(params: &EncoderParams, eval_set: &LabeledSet) -> Result<[bool; ALPHABET_SIZE]> {
    let mut counts = [0usize; ALPHABET_SIZE];
    for &l in &eval_set.labels {
        *counts.get_mut(l as usize).ok_or_else(|| Error::param("probe label outside the alphabet"))? += 1;
    }
    if counts.iter().any(|&c| c != DISCOVERY_PER_LETTER) {
        return Err(Error::param("discovery probe needs exactly 100 glyphs per letter"));
    }
    let pred = predict_batch(params, &eval_set.images)?;
    let mut correct = [0usize; ALPHABET_SIZE];
    for (&p, &l) in pred.iter().zip(&eval_set.labels) {
        if p == l {
            correct[l as usize] += 1;
        }
    }
    let mut out = [false; ALPHABET_SIZE];
    for (o, &c) in out.iter_mut().zip(&correct) {
        *o = c * 2 > DISCOVERY_PER_LETTER;
    }
    Ok(out)
}

/// Runs the optimizer loop shared by unsupervised and supervised training.
fn optimize<F>(
    cfg: &TrainConfig,
    seed: u64,
    mut params: EncoderParams,
    mut step_grad: F,
    full_loss: Option<&dyn Fn(&EncoderParams) -> Result<f64>>,
    probe: Option<&LabeledSet>,
) -> Result<RestartResult>
where
    F: FnMut(&EncoderParams, usize) -> Result<LossGrad>,
{
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    let mut history = Vec::new();
    let mut losses: Vec<f64> = Vec::with_capacity(cfg.steps + 1);
    let mut discovery = probe.map(|_| DiscoveryTrace::default());
    let mut last_letters: Option<[bool; ALPHABET_SIZE]> = None;
    let mut diverged = false;
    let mut last_good: Option<(EncoderParams, f64)> = None;
    let mut steps_run = 0;

    for step in 0..=cfg.steps {
        let lg = match step_grad(&params, step) {
            Ok(lg) => lg,
            Err(Error::Numeric { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let is_last = step == cfg.steps;
        let stop_early = cfg.early_stop.is_some_and(|es| {
            step >= es.window && losses[step - es.window] - lg.value < es.min_improvement
        });
        let record = step % cfg.trace_every == 0 || is_last || stop_early;
        losses.push(lg.value);
        if record {
            let loss = match full_loss {
                Some(f) => match f(&params) {
                    Ok(v) => v,
                    Err(Error::Numeric { .. }) => {
                        diverged = true;
                        break;
                    }
                    Err(e) => return Err(e),
                },
                None => lg.value,
            };
            history.push((step, loss));
            last_good = Some((params.clone(), loss));
            if let (Some(set), Some(trace)) = (probe, discovery.as_mut()) {
                let letters = discovery_trace(&params, set)?;
                if last_letters != Some(letters) {
                    trace.events.push(DiscoveryEvent { step, loss, letters });
                    last_letters = Some(letters);
                }
            }
        }
        steps_run = step;
        if is_last || stop_early {
            break;
        }
        opt.step(params.as_mut_slice(), lg.grads.as_slice());
        if !params.all_finite() {
            diverged = true;
            break;
        }
    }

    let (params, final_train_loss) = match (diverged, last_good) {
        (false, Some((_, loss))) => (params, loss),
        (true, Some(state)) => state,
        (_, None) => return Err(Error::numeric("training diverged before the first recorded step")),
    };
    if diverged && history.last().is_none() {
        return Err(Error::numeric("training"));
    }
    Ok(RestartResult {
        params,
        final_train_loss,
        seed,
        loss_history: history,
        steps_run,
        diverged,
        discovery,
    })
}

fn check_prior(kind: LossKind, prior: Prior<'_>) -> Result<()> {
    match (kind.uses_bigram(), prior) {
        (true, Prior::Bigram(_)) | (false, Prior::Unigram(_)) => Ok(()),
        _ => Err(Error::param(alloc::format!("loss {kind} was given the wrong kind of prior"))),
    }
}

/// Pair indices for a minibatch update, reshuffled every epoch.
struct ShardSchedule {
    order: Vec<usize>,
    size: usize,
    rng: crate::Rng,
}

impl ShardSchedule {
    fn new(n: usize, size: usize, seed: u64) -> Self {
        Self { order: (0..n).collect(), size: size.min(n), rng: rng_from_seed(seed ^ 0x5348_4152_4453) }
    }

    fn shard(&mut self, batch: &PairBatch, step: usize) -> PairBatch {
        let per_epoch = self.order.len() / self.size;
        let k = step % per_epoch;
        if k == 0 {
            self.order.shuffle(&mut self.rng);
        }
        let idx = &self.order[k * self.size..(k + 1) * self.size];
        batch.select(idx)
    }
}

/// One restart from `init_params(seed)`. The prior is only read.
pub fn train_one(
    cfg: &TrainConfig,
    seed: u64,
    data: &PairBatch,
    prior: Prior<'_>,
    probe: Option<&LabeledSet>,
) -> Result<RestartResult> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::empty("no training pairs"));
    }
    check_prior(cfg.loss, prior)?;
    let init = init_params(data.dim(), cfg.init_scheme, seed)?;
    match cfg.minibatch {
        None => optimize(cfg, seed, init, |p, _| loss_and_grad(p, data, prior, cfg.loss), None, probe),
        Some(size) => {
            let mut sched = ShardSchedule::new(data.len(), size, seed);
            let full = |p: &EncoderParams| loss_and_grad(p, data, prior, cfg.loss).map(|lg| lg.value);
            optimize(
                cfg,
                seed,
                init,
                |p, step| loss_and_grad(p, &sched.shard(data, step), prior, cfg.loss),
                Some(&full),
                probe,
            )
        }
    }
}

/// Index of the lowest final training loss among non-diverged runs, ties to
/// the earliest run.
pub fn select_best(runs: &[RestartResult]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in runs.iter().enumerate() {
        if r.diverged || !r.final_train_loss.is_finite() {
            continue;
        }
        if best.is_none_or(|b| r.final_train_loss < runs[b].final_train_loss) {
            best = Some(i);
        }
    }
    best.ok_or_else(|| {
        Error::numeric(alloc::format!("all {} restarts diverged", runs.len()))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiResult {
    pub best: usize,
    pub runs: Vec<RestartResult>,
}

impl MultiResult {
    pub fn best_run(&self) -> &RestartResult {
        &self.runs[self.best]
    }
}

/// `cfg.restarts` independent runs with seeds `cfg.seed + k`; keeps the one
/// with the lowest training loss.
pub fn train_multi(cfg: &TrainConfig, data: &PairBatch, prior: Prior<'_>) -> Result<MultiResult> {
    cfg.validate()?;
    let runs = (0..cfg.restarts)
        .map(|k| train_one(cfg, cfg.restart_seed(k), data, prior, None))
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&runs)?;
    Ok(MultiResult { best, runs })
}

/// Training loss along the straight line from `pa` to `pb`.
pub fn interpolate_loss(
    pa: &EncoderParams,
    pb: &EncoderParams,
    n_points: usize,
    data: &PairBatch,
    prior: Prior<'_>,
    kind: LossKind,
) -> Result<Vec<(f64, f64)>> {
    if n_points < 2 {
        return Err(Error::param("interpolation needs at least two points"));
    }
    if pa.dim() != pb.dim() {
        return Err(Error::param("cannot interpolate encoders of different input dimension"));
    }
    (0..n_points)
        .map(|i| {
            let alpha = i as f64 / (n_points - 1) as f64;
            let p = pa.lerp(pb, alpha)?;
            Ok((alpha, loss_and_grad(&p, data, prior, kind)?.value))
        })
        .collect()
}

/// Same encoder and optimizer, trained on true labels with cross-entropy.
pub fn oracle_train(cfg: &TrainConfig, set: &LabeledSet) -> Result<MultiResult> {
    cfg.validate()?;
    let runs = (0..cfg.restarts)
        .map(|k| oracle_train_one(cfg, cfg.restart_seed(k), &set.images, &set.labels))
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&runs)?;
    Ok(MultiResult { best, runs })
}

pub fn oracle_train_one(cfg: &TrainConfig, seed: u64, images: &Matrix, labels: &[Letter]) -> Result<RestartResult> {
    let init = init_params(images.cols(), cfg.init_scheme, seed)?;
    optimize(cfg, seed, init, |p, _| cross_entropy_and_grad(p, images, labels), None, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_bigram, NormalizedText};
    use crate::fonts::{make_pairs, make_synthetic_font, render_stream, PairMode, Split, SyntheticFont};
    use crate::optim::OptimizerKind;

    fn setup() -> (PairBatch, crate::corpus::BigramTable) {
        let text: String = "the quick brown fox jumps over the lazy dog and then some more text".repeat(4);
        let text = NormalizedText { chars: crate::alphabet::parse(&text), source_id: String::new() };
        let text = text.window(0, text.len() / 2 * 2).unwrap();
        let font = make_synthetic_font(&SyntheticFont { dim: 30, sigma: 0.05, seed: 1, train_per_class: 3, test_per_class: 2 })
            .unwrap();
        let seq = render_stream(&text, &font, Split::Train, &mut rng_from_seed(0)).unwrap();
        (make_pairs(seq.unlabeled(), PairMode::Disjoint).unwrap(), build_bigram(&text).unwrap())
    }

    fn cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            restarts: 3,
            trace_every: 5,
            early_stop: None,
            optimizer: OptimizerConfig { kind: OptimizerKind::adam(), rate: 1e-2 },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let (pairs, bi) = setup();
        let r = train_one(&cfg(0), 4, &pairs, Prior::Bigram(&bi), None).unwrap();
        assert_eq!(r.params, init_params(30, InitScheme::Xavier, 4).unwrap());
        assert_eq!(r.loss_history.len(), 1);
        assert_eq!(r.final_train_loss, r.loss_history[0].1);
    }

    #[test]
    fn history_ends_with_final_loss_and_training_is_deterministic() {
        let (pairs, bi) = setup();
        let a = train_one(&cfg(12), 1, &pairs, Prior::Bigram(&bi), None).unwrap();
        let b = train_one(&cfg(12), 1, &pairs, Prior::Bigram(&bi), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.loss_history.iter().map(|h| h.0).collect::<Vec<_>>(), [0, 5, 10, 12]);
        assert_eq!(a.final_train_loss, a.loss_history.last().unwrap().1);
        assert!(a.final_train_loss < a.loss_history[0].1);
    }

    #[test]
    fn multi_selects_lowest_loss_and_prior_is_untouched() {
        let (pairs, bi) = setup();
        let before = bi.clone();
        let m = train_multi(&cfg(8), &pairs, Prior::Bigram(&bi)).unwrap();
        assert_eq!(bi, before);
        assert_eq!(m.runs.len(), 3);
        for r in &m.runs {
            assert!(m.best_run().final_train_loss <= r.final_train_loss);
        }
        let seeds: Vec<u64> = m.runs.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, [0, 1, 2]);
        let single = train_multi(&TrainConfig { restarts: 1, ..cfg(8) }, &pairs, Prior::Bigram(&bi)).unwrap();
        assert_eq!(single.best, 0);
    }

    #[test]
    fn wrong_prior_is_rejected() {
        let (pairs, _) = setup();
        let u = crate::corpus::UnigramTable::uniform();
        assert!(train_one(&cfg(1), 0, &pairs, Prior::Unigram(&u), None).is_err());
    }

    #[test]
    fn select_best_skips_diverged_runs() {
        let p = EncoderParams::zeros(1);
        let run = |loss: f64, diverged: bool| RestartResult {
            params: p.clone(),
            final_train_loss: loss,
            seed: 0,
            loss_history: alloc::vec![(0, loss)],
            steps_run: 0,
            diverged,
            discovery: None,
        };
        assert_eq!(select_best(&[run(1.0, false), run(0.5, true), run(0.7, false)]).unwrap(), 2);
        assert!(select_best(&[run(1.0, true)]).is_err());
    }

    #[test]
    fn interpolation_endpoints_and_flat_curve() {
        let (pairs, bi) = setup();
        let pa = init_params(30, InitScheme::Xavier, 0).unwrap();
        let pb = init_params(30, InitScheme::Kaiming, 1).unwrap();
        let prior = Prior::Bigram(&bi);
        let kind = LossKind::BigramContrastive;
        let curve = interpolate_loss(&pa, &pb, 5, &pairs, prior, kind).unwrap();
        assert_eq!(curve.len(), 5);
        assert_eq!(curve[0], (0.0, loss_and_grad(&pa, &pairs, prior, kind).unwrap().value));
        assert_eq!(curve[4], (1.0, loss_and_grad(&pb, &pairs, prior, kind).unwrap().value));
        let flat = interpolate_loss(&pa, &pa, 4, &pairs, prior, kind).unwrap();
        assert!(flat.iter().all(|&(_, l)| l == flat[0].1));
        assert!(interpolate_loss(&pa, &pb, 1, &pairs, prior, kind).is_err());
    }

    #[test]
    fn minibatch_mode_runs_and_records_full_loss() {
        let (pairs, bi) = setup();
        let c = TrainConfig { minibatch: Some(16), ..cfg(10) };
        let r = train_one(&c, 0, &pairs, Prior::Bigram(&bi), None).unwrap();
        let full = loss_and_grad(&r.params, &pairs, Prior::Bigram(&bi), c.loss).unwrap().value;
        assert_eq!(r.final_train_loss, full);
    }

    #[test]
    fn discovery_rendering_and_probe_validation() {
        let mut letters = [false; 26];
        letters[0] = true;
        letters[4] = true;
        let ev = DiscoveryEvent { step: 1200, loss: 0.67, letters };
        assert_eq!(ev.render(), "A...E.....................");

        let font = make_synthetic_font(&SyntheticFont { dim: 26, sigma: 0.0, seed: 0, train_per_class: 1, test_per_class: 100 })
            .unwrap();
        let set = font.test.balanced_sample(100, &mut rng_from_seed(0)).unwrap();
        // Uniform output: every glyph is predicted as `a`.
        let found = discovery_trace(&EncoderParams::zeros(26), &set).unwrap();
        assert!(found[0] && found.iter().skip(1).all(|&f| !f));
        let short = font.test.balanced_sample(50, &mut rng_from_seed(0)).unwrap();
        assert!(discovery_trace(&EncoderParams::zeros(26), &short).is_err());
    }

    #[test]
    fn oracle_fits_a_separable_font() {
        let font = make_synthetic_font(&SyntheticFont { dim: 26, sigma: 0.0, seed: 3, train_per_class: 2, test_per_class: 2 })
            .unwrap();
        let labels = font.train.labels();
        let set = LabeledSet { images: font.train.data().clone(), labels };
        let c = TrainConfig { restarts: 1, steps: 300, ..cfg(300) };
        let m = oracle_train(&c, &set).unwrap();
        let pred = predict_batch(&m.best_run().params, &set.images).unwrap();
        assert_eq!(pred, set.labels);
    }
}
