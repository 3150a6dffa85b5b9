//! The experiment commands. Each reads the resolved config, works inside the
//! run directory named by the config digest, and updates the manifest last.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use ungrounded_core::baselines::{cluster_report, kmeans, max_class_accuracy};
use ungrounded_core::corpus::{normalize_text, sample_trigger_suite_sized, NormalizedText, TriggerSpec};
use ungrounded_core::detection::{eval_characters, eval_trigger_balanced, summarize_sweep, sweep_seeds};
use ungrounded_core::encoder::{init_params, EncoderParams, InitScheme};
use ungrounded_core::fonts::{
    apply_permutation, make_pairs, make_synthetic_font, render_stream, GlyphSet, PairBatch, PairMode, PixelPermutation,
    Split,
};
use ungrounded_core::losses::Prior;
use ungrounded_core::stats::mean_stderr;
use ungrounded_core::training::{interpolate_loss, select_best, train_one, RestartResult};
use ungrounded_core::{rng_from_seed, Error};

use crate::config::{ExperimentConfig, FontSource};
use crate::error::{AppError, AppResult};
use crate::formats::cifar::load_cifar26;
use crate::formats::idx::load_emnist_letters;
use crate::formats::model::{decode_params, encode_params};
use crate::formats::tables::TablesFile;
use crate::formats::write_atomic;
use crate::manifest::{sha256_hex, RunManifest};
use crate::report::{
    confusion_csv, detection_csv, discovery_csv, entropy_csv, interpolation_csv, restart_csv, CharacterRecord,
    ClusterRecord, DetectionRecord, RestartRecord, RestartTable, SweepSummary,
};

/// Environment variable capping the number of worker threads.
pub const WORKERS_ENV: &str = "UNGROUNDED_WORKERS";

/// Pairs of windows scored per trigger in the length sweep.
pub const SWEEP_N_PER_SIDE: usize = 100;

/// A seed derived from a base seed, a purpose tag and an index.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Runs `f` on a pool sized by [`WORKERS_ENV`] (all cores when unset).
pub fn with_workers<T: Send>(f: impl FnOnce() -> T + Send) -> AppResult<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.parse().map_err(|_| AppError::config(format!("{WORKERS_ENV} must be a positive integer")))?;
        if n == 0 {
            return Err(AppError::config(format!("{WORKERS_ENV} must be a positive integer")));
        }
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| AppError::Internal(e.to_string()))?;
    Ok(pool.install(f))
}

fn write_json(path: &Path, value: &impl Serialize) -> AppResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| AppError::Internal(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// The three disjoint texts of one split.
#[derive(Debug, Clone)]
pub struct SplitTexts {
    /// Counted into the frozen tables.
    pub table: NormalizedText,
    /// Rendered with training glyphs into the unlabeled pair batch.
    pub stream: NormalizedText,
    /// Held out for trigger windows and evaluation.
    pub eval: NormalizedText,
}

/// Rotates the corpus by `split / splits` of its length, then takes the
/// evaluation text from the end, the stream text just before it, and counts
/// the tables over everything else.
pub fn split_texts(text: &NormalizedText, split: usize, splits: usize, eval_fraction: f64, pairs: usize) -> AppResult<SplitTexts> {
    let n = text.len();
    let shift = n / splits.max(1) * split;
    let mut chars = Vec::with_capacity(n);
    chars.extend_from_slice(&text.chars[shift..]);
    chars.extend_from_slice(&text.chars[..shift]);
    let n_eval = ((n as f64) * eval_fraction).ceil() as usize;
    let n_stream = 2 * pairs;
    if n_eval + n_stream >= n {
        return Err(Error::Data(format!(
            "corpus of {n} letters cannot hold {n_stream} stream letters plus {n_eval} evaluation letters"
        ))
        .into());
    }
    let table_end = n - n_eval - n_stream;
    let id = format!("{}#split{split}", text.source_id);
    Ok(SplitTexts {
        table: NormalizedText::from_letters(chars[..table_end].to_vec(), format!("{id}:table"))?,
        stream: NormalizedText::from_letters(chars[table_end..n - n_eval].to_vec(), format!("{id}:stream"))?,
        eval: NormalizedText::from_letters(chars[n - n_eval..].to_vec(), format!("{id}:eval"))?,
    })
}

fn text_digest(text: &NormalizedText) -> String {
    sha256_hex(&text.chars)
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub run_dir: PathBuf,
    corpus: Option<NormalizedText>,
    font: Option<GlyphSet>,
}

impl Context {
    pub fn new(cfg: ExperimentConfig) -> Self {
        let run_dir = cfg.run_dir();
        Self { cfg, run_dir, corpus: None, font: None }
    }

    pub fn corpus(&mut self) -> AppResult<&NormalizedText> {
        if self.corpus.is_none() {
            let path = &self.cfg.corpus_path;
            let raw = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
            let mut text = normalize_text(&raw).map_err(|e| AppError::file(path, e))?;
            text.source_id = path.display().to_string();
            self.corpus = Some(text);
        }
        Ok(self.corpus.as_ref().expect("just loaded"))
    }

    pub fn split(&mut self, split: usize) -> AppResult<SplitTexts> {
        let (splits, frac, pairs) = (self.cfg.splits, self.cfg.eval_fraction, self.cfg.pairs);
        split_texts(self.corpus()?, split, splits, frac, pairs)
    }

    /// The configured font with the hidden pixel permutation applied.
    pub fn font(&mut self) -> AppResult<&GlyphSet> {
        if self.font.is_none() {
            let raw = match &self.cfg.font {
                FontSource::Emnist(dir) => load_emnist_letters(dir)?,
                FontSource::Cifar26(dir) => load_cifar26(dir)?,
                FontSource::Synthetic(spec) => make_synthetic_font(spec)?,
            };
            raw.check_complete()?;
            let perm = PixelPermutation::random(raw.dim(), self.cfg.permutation_seed);
            self.font = Some(apply_permutation(&raw, &perm)?);
        }
        Ok(self.font.as_ref().expect("just loaded"))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }

    fn finish(&self, stage: &str, started: Instant, files: &[PathBuf]) -> AppResult<()> {
        let mut m = RunManifest::load_or_new(&self.run_dir, &self.cfg.digest())?;
        m.record(&self.run_dir, stage, started.elapsed().as_secs_f64(), files)?;
        write_atomic(&self.path("config.txt"), self.cfg.render().as_bytes())?;
        m.write(&self.run_dir)
    }

    /// Loads the tables of `split`, building and caching them when absent or
    /// stale. Returns the tables and whether the cache was used.
    pub fn tables(&mut self, split: usize) -> AppResult<(TablesFile, bool)> {
        let texts = self.split(split)?;
        let digest = text_digest(&texts.table);
        let path = self.path(&format!("tables_split{split}.json"));
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok(t) = serde_json::from_slice::<TablesFile>(&bytes) {
                if t.text_digest == digest {
                    t.bigram().map_err(|e| AppError::file(&path, e))?;
                    return Ok((t, true));
                }
            }
        }
        let t = TablesFile::build(&texts.table, digest)?;
        t.bigram().map_err(|e| AppError::Internal(format!("freshly built bigram failed validation: {e}")))?;
        t.unigram().map_err(|e| AppError::Internal(format!("freshly built unigram failed validation: {e}")))?;
        write_json(&path, &t)?;
        Ok((t, false))
    }

    /// The unlabeled pair batch of `split`.
    pub fn pairs(&mut self, split: usize) -> AppResult<PairBatch> {
        let texts = self.split(split)?;
        let seed = derive_seed(self.cfg.train.seed, "stream", split as u64);
        let font = self.font()?;
        let seq = render_stream(&texts.stream, font, Split::Train, &mut rng_from_seed(seed))?;
        Ok(make_pairs(seq.unlabeled(), PairMode::Disjoint)?)
    }

    fn model_path(&self, split: usize) -> PathBuf {
        self.path(&format!("model_split{split}.bin"))
    }

    pub fn load_model(&self, split: usize) -> AppResult<EncoderParams> {
        let path = self.model_path(split);
        let bytes = std::fs::read(&path).map_err(|e| AppError::io(&path, e))?;
        Ok(decode_params(&bytes).map_err(|e| AppError::file(&path, e))?.1)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TablesOutcome {
    pub split: usize,
    pub digest: String,
    pub cache_hit: bool,
}

pub fn cmd_build_tables(ctx: &mut Context) -> AppResult<Vec<TablesOutcome>> {
    let started = Instant::now();
    let mut out = Vec::new();
    let mut files = Vec::new();
    for s in 0..ctx.cfg.splits {
        let (t, hit) = ctx.tables(s)?;
        out.push(TablesOutcome { split: s, digest: t.text_digest.clone(), cache_hit: hit });
        files.push(ctx.path(&format!("tables_split{s}.json")));
    }
    ctx.finish("build-tables", started, &files)?;
    Ok(out)
}

/// Restarts of one split, run in parallel; the result order follows the seeds.
pub fn train_restarts(
    cfg: &ungrounded_core::training::TrainConfig,
    pairs: &PairBatch,
    prior: Prior<'_>,
) -> AppResult<Vec<RestartResult>> {
    with_workers(|| {
        (0..cfg.restarts)
            .into_par_iter()
            .map(|k| train_one(cfg, cfg.restart_seed(k), pairs, prior, None))
            .collect::<Result<Vec<_>, _>>()
    })?
    .map_err(AppError::from)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub split: usize,
    pub best_seed: u64,
    pub best_loss: f64,
    pub model_sha256: String,
}

pub fn cmd_train(ctx: &mut Context) -> AppResult<Vec<TrainOutcome>> {
    let started = Instant::now();
    let mut out = Vec::new();
    let mut files = Vec::new();
    for s in 0..ctx.cfg.splits {
        let (tables, _) = ctx.tables(s)?;
        let pairs = ctx.pairs(s)?;
        let (bi, uni) = (tables.bigram()?, tables.unigram()?);
        let train = ctx.cfg.train.clone();
        let prior = if train.loss.uses_bigram() { Prior::Bigram(&bi) } else { Prior::Unigram(&uni) };
        let runs = train_restarts(&train, &pairs, prior)?;
        let best = select_best(&runs)?;
        let table = RestartTable {
            best_index: best,
            best_seed: runs[best].seed,
            restarts: runs.iter().map(RestartRecord::from).collect(),
        };
        let model = encode_params(&runs[best].params, runs[best].seed, train.init_scheme);
        let model_path = ctx.model_path(s);
        write_atomic(&model_path, &model)?;
        let json_path = ctx.path(&format!("restarts_split{s}.json"));
        let csv_path = ctx.path(&format!("restarts_split{s}.csv"));
        write_json(&json_path, &table)?;
        write_atomic(&csv_path, restart_csv(&table).as_bytes())?;
        files.extend([ctx.path(&format!("tables_split{s}.json")), model_path, json_path, csv_path]);
        out.push(TrainOutcome {
            split: s,
            best_seed: runs[best].seed,
            best_loss: runs[best].final_train_loss,
            model_sha256: sha256_hex(&model),
        });
    }
    ctx.finish("train", started, &files)?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitEval {
    pub split: usize,
    pub fnord: DetectionRecord,
    pub characters: CharacterRecord,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub trigger: String,
    pub n_per_side: usize,
    pub per_class: usize,
    pub trigger_accuracy_mean: f64,
    pub trigger_accuracy_stderr: f64,
    pub character_accuracy_mean: f64,
    pub character_accuracy_stderr: f64,
    pub splits: Vec<SplitEval>,
}

pub fn cmd_eval(ctx: &mut Context) -> AppResult<EvalSummary> {
    let started = Instant::now();
    let trigger = TriggerSpec::parse(&ctx.cfg.trigger, 0.5)?;
    let mut splits = Vec::new();
    let mut files = Vec::new();
    for s in 0..ctx.cfg.splits {
        let p = ctx.load_model(s)?;
        let texts = ctx.split(s)?;
        let (n, per_class, seed) = (ctx.cfg.n_per_side, ctx.cfg.per_class, ctx.cfg.eval_seed);
        let font = ctx.font()?;
        let det = eval_trigger_balanced(&p, &trigger, &texts.eval, font, n, &mut rng_from_seed(derive_seed(seed, "trigger", s as u64)))?;
        let chars = eval_characters(&p, font.pool(Split::Test), per_class, &mut rng_from_seed(derive_seed(seed, "chars", s as u64)))?;
        let cpath = ctx.path(&format!("confusion_split{s}.csv"));
        write_atomic(&cpath, confusion_csv(&chars.confusion).as_bytes())?;
        files.push(cpath);
        splits.push(SplitEval { split: s, fnord: DetectionRecord::from(&det), characters: CharacterRecord::from(&chars) });
    }
    let (tm, ts) = mean_stderr(&splits.iter().map(|s| s.fnord.accuracy).collect::<Vec<_>>());
    let (cm, cs) = mean_stderr(&splits.iter().map(|s| s.characters.accuracy).collect::<Vec<_>>());
    let summary = EvalSummary {
        trigger: trigger.render(),
        n_per_side: ctx.cfg.n_per_side,
        per_class: ctx.cfg.per_class,
        trigger_accuracy_mean: tm,
        trigger_accuracy_stderr: ts,
        character_accuracy_mean: cm,
        character_accuracy_stderr: cs,
        splits,
    };
    let json = ctx.path("eval.json");
    let csv = ctx.path("trigger.csv");
    write_json(&json, &summary)?;
    write_atomic(&csv, detection_csv(summary.splits.iter().map(|s| &s.fnord)).as_bytes())?;
    files.extend([json, csv]);
    ctx.finish("eval", started, &files)?;
    Ok(summary)
}

pub fn cmd_sweep(ctx: &mut Context) -> AppResult<SweepSummary> {
    let started = Instant::now();
    let p = ctx.load_model(0)?;
    let texts = ctx.split(0)?;
    let seed = ctx.cfg.eval_seed;
    let per_source = ctx.cfg.suite_per_source;
    let mut rng = rng_from_seed(derive_seed(seed, "suite", 0));
    let suite = sample_trigger_suite_sized(&texts.eval, per_source, &mut rng)?;
    let seeds = sweep_seeds(suite.len(), &mut rng);
    let font = ctx.font()?;
    let reports = with_workers(|| {
        suite
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(t, &s)| eval_trigger_balanced(&p, t, &texts.eval, font, SWEEP_N_PER_SIDE, &mut rng_from_seed(s)))
            .collect::<Result<Vec<_>, _>>()
    })??;
    let sweep = summarize_sweep(reports);
    let summary = SweepSummary::from(&sweep);
    let records: Vec<DetectionRecord> = sweep.reports.iter().map(DetectionRecord::from).collect();
    let csv = ctx.path("sweep.csv");
    let json = ctx.path("sweep_summary.json");
    write_atomic(&csv, detection_csv(&records).as_bytes())?;
    write_json(&json, &summary)?;
    ctx.finish("sweep", started, &[csv, json])?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeOutcome {
    pub curves: usize,
    pub non_monotonic: usize,
    pub discovery_events: usize,
}

/// Whether a loss curve ever rises on its way from start to end.
pub fn is_monotone_decreasing(curve: &[(f64, f64)]) -> bool {
    curve.windows(2).all(|w| w[1].1 <= w[0].1)
}

/// Interpolates from each restart's initialization to the best model of
/// split 0 (or between the given model files), then retrains the best seed
/// with a 100-per-letter probe to record the discovery order.
pub fn cmd_probe(ctx: &mut Context, models: &[PathBuf]) -> AppResult<ProbeOutcome> {
    let started = Instant::now();
    let (tables, _) = ctx.tables(0)?;
    let pairs = ctx.pairs(0)?;
    let (bi, uni) = (tables.bigram()?, tables.unigram()?);
    let train = ctx.cfg.train.clone();
    let prior = if train.loss.uses_bigram() { Prior::Bigram(&bi) } else { Prior::Unigram(&uni) };
    let points = ctx.cfg.probe_points;

    let mut curves = Vec::new();
    let best_seed;
    if models.len() >= 2 {
        let loaded = models
            .iter()
            .map(|m| {
                let bytes = std::fs::read(m).map_err(|e| AppError::io(m, e))?;
                decode_params(&bytes).map_err(|e| AppError::file(m, e))
            })
            .collect::<AppResult<Vec<_>>>()?;
        for (h, p) in &loaded[1..] {
            curves.push((h.seed, interpolate_loss(&loaded[0].1, p, points, &pairs, prior, train.loss)?));
        }
        best_seed = loaded[0].0.seed;
    } else {
        let best = ctx.load_model(0)?;
        let table_path = ctx.path("restarts_split0.json");
        let bytes = std::fs::read(&table_path).map_err(|e| AppError::io(&table_path, e))?;
        let table: RestartTable = serde_json::from_slice(&bytes)
            .map_err(|e| AppError::file(&table_path, Error::Data(format!("bad restart table: {e}"))))?;
        for r in &table.restarts {
            let init = init_params(best.dim(), train.init_scheme, r.seed)?;
            curves.push((r.seed, interpolate_loss(&init, &best, points, &pairs, prior, train.loss)?));
        }
        best_seed = table.best_seed;
    }

    let probe_seed = derive_seed(ctx.cfg.eval_seed, "probe", 0);
    let font = ctx.font()?;
    let probe_set = font.pool(Split::Test).balanced_sample(100, &mut rng_from_seed(probe_seed))?;
    let run = train_one(&train, best_seed, &pairs, prior, Some(&probe_set))?;
    let trace = run.discovery.unwrap_or_default();

    let icsv = ctx.path("interpolation.csv");
    let dcsv = ctx.path("discovery.csv");
    write_atomic(&icsv, interpolation_csv(&curves).as_bytes())?;
    write_atomic(&dcsv, discovery_csv(&trace).as_bytes())?;
    ctx.finish("probe", started, &[icsv, dcsv])?;
    Ok(ProbeOutcome {
        curves: curves.len(),
        non_monotonic: curves.iter().filter(|(_, c)| !is_monotone_decreasing(c)).count(),
        discovery_events: trace.events.len(),
    })
}

/// K-means on the images of a rendered stream (so clusters see letters at
/// their text frequency), scored against the stream's hidden letters.
pub fn cmd_cluster_baseline(ctx: &mut Context) -> AppResult<ClusterRecord> {
    let started = Instant::now();
    let (tables, _) = ctx.tables(0)?;
    let texts = ctx.split(0)?;
    let letters = ctx.cfg.cluster_stream_letters.min(texts.stream.len());
    let text = texts.stream.window(0, letters)?;
    let (k, iters, seed) = (ctx.cfg.cluster_k, ctx.cfg.cluster_max_iters, ctx.cfg.cluster_seed);
    let font = ctx.font()?;
    let seq = render_stream(&text, font, Split::Train, &mut rng_from_seed(derive_seed(seed, "cluster-stream", 0)))?;
    let images = seq.to_matrix();
    let model = kmeans(&images, k, seed, iters)?;
    let report = cluster_report(&model, &images, seq.labels())?;
    let record = ClusterRecord::new(&report, k, model.iterations, model.converged, max_class_accuracy(&tables.unigram()?));
    let json = ctx.path("cluster.json");
    let conf = ctx.path("cluster_confusion.csv");
    let ent = ctx.path("cluster_entropy.csv");
    write_json(&json, &record)?;
    write_atomic(&conf, confusion_csv(&report.confusion).as_bytes())?;
    write_atomic(&ent, entropy_csv(&report).as_bytes())?;
    ctx.finish("cluster-baseline", started, &[json, conf, ent])?;
    Ok(record)
}

/// Serializes params for callers that want the same bytes the CLI writes.
pub fn model_bytes(p: &EncoderParams, seed: u64, scheme: InitScheme) -> Vec<u8> {
    encode_params(p, seed, scheme)
}
