//! End-to-end acceptance checks. Each test prints exactly one line of the form
//! `criterion N: PASS|FAIL|SKIP <detail>` and fails when the criterion fails.
//!
//! Data locations:
//! - `UNGROUNDED_CORPUS`: English text of at least 10 MB (default
//!   `/root/data/english.txt`). Criteria that need it skip when it is absent.
//! - `UNGROUNDED_EMNIST_DIR`: EMNIST letters IDX files. The long EMNIST runs
//!   only execute when it is set.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use ungrounded::config::{ExperimentConfig, Preset};
use ungrounded::pipeline::{self, train_restarts, Context};
use ungrounded_core::baselines::max_assignment;
use ungrounded_core::corpus::{
    build_bigram, build_unigram, normalize_text, sample_trigger_suite_sized, BigramTable, NormalizedText, UnigramTable,
};
use ungrounded_core::detection::{calibrate_threshold, detect, eval_characters, trigger_sweep, Response};
use ungrounded_core::encoder::{EncoderParams, InitScheme};
use ungrounded_core::fonts::{make_pairs, make_synthetic_font, render_stream, GlyphSet, PairMode, Split, SyntheticFont};
use ungrounded_core::linalg::Matrix;
use ungrounded_core::losses::{contrastive_loss, loss_and_grad, LossKind, Prior};
use ungrounded_core::optim::{OptimizerConfig, OptimizerKind};
use ungrounded_core::stats::pearson;
use ungrounded_core::training::{select_best, TrainConfig};
use ungrounded_core::{rng_from_seed, Rng as CoreRng};

const CORPUS_ENV: &str = "UNGROUNDED_CORPUS";
const EMNIST_ENV: &str = "UNGROUNDED_EMNIST_DIR";
const DEFAULT_CORPUS: &str = "/root/data/english.txt";

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

/// Writes through the raw stdout handle, which the test harness does not
/// capture, so every verdict line shows up in a plain `cargo test` run.
fn say(line: String) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

fn verdict(n: u32, outcome: Outcome) {
    match outcome {
        Outcome::Pass(d) => say(format!("criterion {n}: PASS {d}")),
        Outcome::Skip(d) => say(format!("criterion {n}: SKIP {d}")),
        Outcome::Fail(d) => {
            say(format!("criterion {n}: FAIL {d}"));
            panic!("criterion {n} failed: {d}");
        }
    }
}

fn judge(pass: bool, detail: String) -> Outcome {
    if pass {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

/// Serializes the long-running criteria so their runtime checks are not
/// measured while another one competes for the same cores.
fn heavy_lock() -> std::sync::MutexGuard<'static, ()> {
    static HEAVY: std::sync::Mutex<()> = std::sync::Mutex::new(());
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn corpus_path() -> PathBuf {
    std::env::var_os(CORPUS_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_CORPUS))
}

fn corpus() -> Option<&'static NormalizedText> {
    static TEXT: OnceLock<Option<NormalizedText>> = OnceLock::new();
    TEXT.get_or_init(|| {
        let raw = std::fs::read(corpus_path()).ok()?;
        Some(normalize_text(&raw).expect("corpus contains letters"))
    })
    .as_ref()
}

fn emnist_dir() -> Option<PathBuf> {
    std::env::var_os(EMNIST_ENV).map(PathBuf::from)
}

fn random_distribution(k: usize, rng: &mut CoreRng) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn random_rows(n: usize, k: usize, rng: &mut CoreRng) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| random_distribution(k, rng)).collect();
    Matrix::from_rows(&rows).unwrap()
}

/// The probability that an index drawn through `d` and mapped back through
/// `e` by Bayes' rule returns to itself, by enumerating every (class, index)
/// outcome with a uniform prior over indices.
fn recovery_probability(e: &Matrix, d: &Matrix, i: usize) -> f64 {
    let (n, k) = (e.rows(), e.cols());
    let mut total = 0.0;
    for j in 0..k {
        let evidence: f64 = (0..n).map(|m| e.get(m, j) / n as f64).sum();
        for m in 0..n {
            let posterior = e.get(m, j) / n as f64 / evidence;
            if m == i {
                total += d.get(i, j) * posterior;
            }
        }
    }
    total
}

#[test]
fn criterion_01_loss_matches_brute_force_recovery_probability() {
    let started = Instant::now();
    let mut rng = rng_from_seed(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=8);
        let k = rng.random_range(2..=5);
        let e = random_rows(n, k, &mut rng);
        let d = random_rows(n, k, &mut rng);
        let oracle = -(0..n).map(|i| recovery_probability(&e, &d, i).ln()).sum::<f64>() / n as f64;
        worst = worst.max((contrastive_loss(&e, &d).unwrap() - oracle).abs());
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(1, judge(worst <= 1e-10 && secs < 5.0, format!("max |diff| {worst:.2e} over 1000 instances in {secs:.2}s")));
}

fn random_params(dim: usize, rng: &mut CoreRng) -> EncoderParams {
    let n = EncoderParams::zeros(dim).len();
    EncoderParams::from_flat(dim, (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap()
}

fn random_bigram(rng: &mut CoreRng) -> BigramTable {
    let mut counts = [[0u64; 26]; 26];
    for row in &mut counts {
        for c in row.iter_mut() {
            *c = rng.random_range(1..50);
        }
    }
    BigramTable::from_counts(counts)
}

fn random_unigram(rng: &mut CoreRng) -> UnigramTable {
    let probs = random_distribution(26, rng);
    UnigramTable { probs: probs.try_into().unwrap() }
}

#[test]
fn criterion_02_analytic_gradients_match_finite_differences() {
    let started = Instant::now();
    let (dim, pairs, h) = (10, 6, 1e-5);
    let mut worst = 0.0f64;
    for seed in 0..3u64 {
        let mut rng = rng_from_seed(200 + seed);
        let first = random_rows(pairs, dim, &mut rng);
        let second = random_rows(pairs, dim, &mut rng);
        let batch = ungrounded_core::fonts::PairBatch::from_matrices(&first, &second).unwrap();
        let p = random_params(dim, &mut rng);
        let (bi, uni) = (random_bigram(&mut rng), random_unigram(&mut rng));
        for kind in [LossKind::BigramContrastive, LossKind::BigramKl, LossKind::UnigramKl, LossKind::UnigramContrastive] {
            let prior = if kind.uses_bigram() { Prior::Bigram(&bi) } else { Prior::Unigram(&uni) };
            let analytic = loss_and_grad(&p, &batch, prior, kind).unwrap().grads;
            let mut numeric = vec![0.0; p.len()];
            for (t, slot) in numeric.iter_mut().enumerate() {
                let (mut plus, mut minus) = (p.clone(), p.clone());
                plus.as_mut_slice()[t] += h;
                minus.as_mut_slice()[t] -= h;
                let f = |q: &EncoderParams| loss_and_grad(q, &batch, prior, kind).unwrap().value;
                *slot = (f(&plus) - f(&minus)) / (2.0 * h);
            }
            let a = analytic.as_slice();
            let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(numeric.iter().map(|x| x * x).sum::<f64>().sqrt());
            worst = worst.max(diff / scale.max(1e-300));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(2, judge(worst < 1e-4 && secs < 30.0, format!("worst relative error {worst:.2e} over 4 losses x 3 instances in {secs:.2}s")));
}

#[test]
fn criterion_03_single_item_contrastive_loss_is_zero() {
    let mut rng = rng_from_seed(303);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let e = random_rows(1, 26, &mut rng);
        let d = random_rows(1, 26, &mut rng);
        worst = worst.max(contrastive_loss(&e, &d).unwrap().abs());
    }
    verdict(3, judge(worst <= 1e-12, format!("max |loss| {worst:.2e} over 100 pairs")));
}

/// The synthetic-font experiment shared by criteria 4 and 9.
struct SyntheticRun {
    font: GlyphSet,
    eval_text: NormalizedText,
    bigram_params: EncoderParams,
    bigram_accuracy: f64,
    unigram_accuracy: f64,
    seconds: f64,
}

const SYN_PAIRS: usize = 1 << 15;

/// Budget for the synthetic end-to-end run: shuffled shards of 1024 pairs,
/// Adam at 1e-2, 1500 steps, 8 Xavier restarts.
fn synthetic_config(loss: LossKind) -> TrainConfig {
    TrainConfig {
        steps: 1500,
        optimizer: OptimizerConfig { kind: OptimizerKind::adam(), rate: 1e-2 },
        restarts: 8,
        loss,
        init_scheme: InitScheme::Xavier,
        seed: 0,
        trace_every: 100,
        early_stop: None,
        minibatch: Some(1024),
    }
}

fn synthetic_run() -> Option<&'static SyntheticRun> {
    static RUN: OnceLock<Option<SyntheticRun>> = OnceLock::new();
    RUN.get_or_init(|| {
        let text = corpus()?;
        let _guard = heavy_lock();
        let started = Instant::now();
        let (table_text, held) = text.split_holdout(0.1).unwrap();
        let (bi, uni) = (build_bigram(&table_text).unwrap(), build_unigram(&table_text).unwrap());
        let stream_text = held.window(0, 2 * SYN_PAIRS).unwrap();
        let eval_text = held.window(2 * SYN_PAIRS, held.len() - 2 * SYN_PAIRS).unwrap();
        let font = make_synthetic_font(&SyntheticFont::new(64, 0.1, 1)).unwrap();
        let seq = render_stream(&stream_text, &font, Split::Train, &mut rng_from_seed(1)).unwrap();
        let pairs = make_pairs(seq.unlabeled(), PairMode::Disjoint).unwrap();
        let accuracy = |p: &EncoderParams| {
            eval_characters(p, font.pool(Split::Test), 100, &mut rng_from_seed(2)).unwrap().accuracy
        };

        let runs = train_restarts(&synthetic_config(LossKind::BigramContrastive), &pairs, Prior::Bigram(&bi)).unwrap();
        let bigram_params = runs[select_best(&runs).unwrap()].params.clone();
        let runs = train_restarts(&synthetic_config(LossKind::UnigramKl), &pairs, Prior::Unigram(&uni)).unwrap();
        let unigram_params = &runs[select_best(&runs).unwrap()].params;
        Some(SyntheticRun {
            bigram_accuracy: accuracy(&bigram_params),
            unigram_accuracy: accuracy(unigram_params),
            seconds: started.elapsed().as_secs_f64(),
            font,
            eval_text,
            bigram_params,
        })
    })
    .as_ref()
}

#[test]
fn criterion_04_synthetic_font_end_to_end() {
    let Some(run) = synthetic_run() else {
        return verdict(4, Outcome::Skip(format!("no corpus at {}", corpus_path().display())));
    };
    let pass = run.bigram_accuracy >= 0.95 && run.unigram_accuracy <= 0.20 && run.seconds < 600.0;
    verdict(
        4,
        judge(
            pass,
            format!(
                "bigram contrastive {:.4} (need >= 0.95), unigram KL {:.4} (need <= 0.20), {:.0}s (minibatch 1024)",
                run.bigram_accuracy, run.unigram_accuracy, run.seconds
            ),
        ),
    );
}

fn quiet_context(overrides: &[(&str, String)], preset: Preset) -> Context {
    let mut map = BTreeMap::new();
    for (k, v) in overrides {
        map.insert(k.to_string(), v.clone());
    }
    Context::new(ExperimentConfig::resolve(Some(preset), None, &map).unwrap())
}

fn emnist_overrides(dir: &Path, out: &Path) -> Vec<(&'static str, String)> {
    vec![
        ("font.kind", "emnist".into()),
        ("font.emnist_dir", dir.display().to_string()),
        ("corpus.path", corpus_path().display().to_string()),
        ("output.dir", out.display().to_string()),
    ]
}

#[test]
fn criterion_05_emnist_desk_reproduction() {
    let Some(dir) = emnist_dir() else {
        return verdict(5, Outcome::Skip(format!("{EMNIST_ENV} not set")));
    };
    let _guard = heavy_lock();
    let out = tempfile::tempdir().unwrap();
    let mut o = emnist_overrides(&dir, out.path());
    o.push(("train.pairs", (1usize << 18).to_string()));
    o.push(("train.restarts", "16".into()));
    let mut ctx = quiet_context(&o, Preset::Desk);
    let started = Instant::now();
    pipeline::cmd_build_tables(&mut ctx).unwrap();
    pipeline::cmd_train(&mut ctx).unwrap();
    let e = pipeline::cmd_eval(&mut ctx).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let pass = e.trigger_accuracy_mean >= 0.95 && e.character_accuracy_mean >= 0.65 && secs <= 3.0 * 3600.0;
    verdict(
        5,
        judge(pass, format!("fnord {:.4}, characters {:.4}, {secs:.0}s", e.trigger_accuracy_mean, e.character_accuracy_mean)),
    );
}

#[test]
fn criterion_06_emnist_baseline_ordering() {
    let Some(dir) = emnist_dir() else {
        return verdict(6, Outcome::Skip(format!("{EMNIST_ENV} not set")));
    };
    let _guard = heavy_lock();
    let mut acc = BTreeMap::new();
    for kind in ["bigram_contrastive", "bigram_kl", "unigram_kl", "unigram_contrastive"] {
        let out = tempfile::tempdir().unwrap();
        let mut o = emnist_overrides(&dir, out.path());
        o.push(("train.loss", kind.into()));
        let mut ctx = quiet_context(&o, Preset::Desk);
        pipeline::cmd_train(&mut ctx).unwrap();
        acc.insert(kind, pipeline::cmd_eval(&mut ctx).unwrap().character_accuracy_mean);
    }
    let (bc, bk) = (acc["bigram_contrastive"], acc["bigram_kl"]);
    let best_uni = acc["unigram_kl"].max(acc["unigram_contrastive"]);
    let pass = bc > bk && bk > best_uni && bc.min(bk) - best_uni >= 0.05;
    verdict(6, judge(pass, format!("{acc:?}")));
}

fn brute_force_best(w: &[Vec<i64>]) -> i64 {
    fn go(w: &[Vec<i64>], row: usize, used: &mut Vec<bool>) -> i64 {
        if row == w.len() {
            return 0;
        }
        let mut best = i64::MIN;
        for c in 0..w.len() {
            if !used[c] {
                used[c] = true;
                best = best.max(w[row][c] + go(w, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    go(w, 0, &mut vec![false; w.len()])
}

#[test]
fn criterion_07_hungarian_and_clustering_baseline() {
    let mut rng = rng_from_seed(707);
    let mut mismatches = 0;
    for _ in 0..200 {
        let k = rng.random_range(1..=7);
        let w: Vec<Vec<i64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(-50..100)).collect()).collect();
        let cols = max_assignment(&w).unwrap();
        let got: i64 = cols.iter().enumerate().map(|(r, &c)| w[r][c]).sum();
        if got != brute_force_best(&w) {
            mismatches += 1;
        }
    }
    let mut detail = format!("hungarian mismatches {mismatches}/200");
    let mut pass = mismatches == 0;
    match corpus() {
        Some(text) => {
            let max_class = ungrounded_core::baselines::max_class_accuracy(&build_unigram(text).unwrap());
            pass &= (max_class - 0.1176).abs() <= 0.005;
            detail.push_str(&format!(", max-class reference {:.4} (need 0.1176 +- 0.005)", max_class));
        }
        None => detail.push_str(", max-class reference skipped (no corpus)"),
    }
    match emnist_dir() {
        Some(dir) => {
            let _guard = heavy_lock();
            let out = tempfile::tempdir().unwrap();
            let mut ctx = quiet_context(&emnist_overrides(&dir, out.path()), Preset::Desk);
            let r = pipeline::cmd_cluster_baseline(&mut ctx).unwrap();
            pass &= (0.25..=0.35).contains(&r.accuracy);
            detail.push_str(&format!(", EMNIST k-means accuracy {:.4}", r.accuracy));
        }
        None => detail.push_str(&format!(", EMNIST clustering skipped ({EMNIST_ENV} not set)")),
    }
    verdict(7, judge(pass, detail));
}

fn fired_fraction(scores: &[f64], prior: f64) -> (f64, f64) {
    let th = calibrate_threshold(scores, prior).unwrap();
    let fired = scores.iter().filter(|&&s| detect(s, &th) == Response::Fire).count();
    (fired as f64 / scores.len() as f64, th.theta)
}

#[test]
fn criterion_08_threshold_calibration() {
    let mut rng = rng_from_seed(808);
    let mut worst_gap = 0.0f64;
    let mut equivariant = true;
    for n in [100usize, 10_000] {
        for _ in 0..20 {
            let prior: f64 = rng.random_range(0.0..1.0);
            // Multiples of 2^-10 below 2^30 in magnitude keep every sum and
            // midpoint exact, and ties are vanishingly rare.
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-(1i64 << 40)..0) as f64 / 1024.0).collect();
            let (frac, theta) = fired_fraction(&scores, prior);
            let gap = (frac - prior).abs() * 2.0 * n as f64;
            worst_gap = worst_gap.max(gap);
            let shift = rng.random_range(-64i64..64) as f64;
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let (frac2, theta2) = fired_fraction(&shifted, prior);
            equivariant &= theta2 == theta + shift && frac2 == frac;
        }
    }
    verdict(
        8,
        judge(worst_gap <= 1.0 && equivariant, format!("worst |fired - prior| {worst_gap:.3} x 1/(2n), translation exact: {equivariant}")),
    );
}

#[test]
fn criterion_09_trigger_length_trend() {
    let Some(run) = synthetic_run() else {
        return verdict(9, Outcome::Skip(format!("no corpus at {}", corpus_path().display())));
    };
    let mut rng = rng_from_seed(909);
    let suite = sample_trigger_suite_sized(&run.eval_text, 10, &mut rng).unwrap();
    let sweep = trigger_sweep(&run.bigram_params, &suite, &run.eval_text, &run.font, 100, &mut rng).unwrap();
    let xs: Vec<f64> = sweep.per_length.iter().map(|l| l.length as f64).collect();
    let ys: Vec<f64> = sweep.per_length.iter().map(|l| l.mean_accuracy).collect();
    let r = pearson(&xs, &ys);
    let means: Vec<String> = ys.iter().map(|y| format!("{y:.3}")).collect();
    verdict(
        9,
        judge(
            r.is_some_and(|r| r > 0.3),
            format!("{} triggers, r = {r:?} over per-length means [{}]", suite.len(), means.join(" ")),
        ),
    );
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name != "manifest.json" {
            files.insert(name, std::fs::read(&path).unwrap());
        }
    }
    files
}

fn desk_run(out: &Path) -> BTreeMap<String, Vec<u8>> {
    let _guard = heavy_lock();
    let o = [
        ("corpus.path", corpus_path().display().to_string()),
        ("output.dir", out.display().to_string()),
        ("train.steps", "25".to_string()),
    ];
    let mut ctx = quiet_context(&o, Preset::Desk);
    pipeline::cmd_build_tables(&mut ctx).unwrap();
    pipeline::cmd_train(&mut ctx).unwrap();
    pipeline::cmd_eval(&mut ctx).unwrap();
    pipeline::cmd_sweep(&mut ctx).unwrap();
    pipeline::cmd_probe(&mut ctx, &[]).unwrap();
    pipeline::cmd_cluster_baseline(&mut ctx).unwrap();
    snapshot(&ctx.run_dir)
}

#[test]
fn criterion_10_desk_runs_are_byte_identical() {
    if corpus().is_none() {
        return verdict(10, Outcome::Skip(format!("no corpus at {}", corpus_path().display())));
    }
    // Both runs share one config, hence one run directory; the first run's
    // files are read into memory and deleted before the second starts.
    let root = tempfile::tempdir().unwrap();
    let a = desk_run(root.path());
    std::fs::remove_dir_all(root.path()).unwrap();
    let b = desk_run(root.path());
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let pass = a.len() == b.len() && differing.is_empty() && a.contains_key("model_split0.bin");
    verdict(
        10,
        judge(pass, format!("{} artifacts compared (desk preset, 25 steps), differing: {differing:?}", a.len())),
    );
}

#[test]
fn criterion_11_bigram_sanity_on_english() {
    let path = corpus_path();
    let Some(text) = corpus() else {
        return verdict(11, Outcome::Skip(format!("no corpus at {}", path.display())));
    };
    let bytes = std::fs::metadata(&path).unwrap().len();
    let bi = build_bigram(text).unwrap();
    let uni = build_unigram(text).unwrap();
    let (t, h, l) = (b't' - b'a', b'h' - b'a', b'l' - b'a');
    let h_given_t = bi.prob(t, h);
    let gap = (uni.probs[l as usize] - uni.probs[h as usize]).abs();
    let pass = bytes >= 10_000_000 && (0.10..=0.18).contains(&h_given_t) && gap <= 0.005;
    verdict(
        11,
        judge(
            pass,
            format!(
                "{:.1} MB, Bi(h|t) = {h_given_t:.4} (need 0.10..0.18), P(l) = {:.4}, P(h) = {:.4}, gap {gap:.4} (need <= 0.005)",
                bytes as f64 / 1e6,
                uni.probs[l as usize],
                uni.probs[h as usize]
            ),
        ),
    );
}
