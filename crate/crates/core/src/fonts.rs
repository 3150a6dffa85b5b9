//! Glyph pools ("fonts"), the hidden pixel permutation, and rendering of
//! letter streams into observation sequences and pair batches.
//!
//! Streams are stored as an index into a compact table of distinct glyph
//! vectors. A rendered stream of millions of characters only ever contains as
//! many distinct vectors as the pool has glyphs, so the encoder runs once per
//! distinct glyph instead of once per stream position.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::alphabet::{Letter, ALPHABET_SIZE};
use crate::corpus::NormalizedText;
use crate::linalg::Matrix;
use crate::{rng_from_seed, Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Glyph vectors grouped by class; rows of `data` are sorted by letter.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphPool {
    data: Matrix,
    offsets: [usize; ALPHABET_SIZE + 1],
}

impl GlyphPool {
    /// Group labeled vectors by class, keeping the original order within a class.
    pub fn from_labeled(vectors: &Matrix, labels: &[Letter]) -> Result<Self> {
        if vectors.rows() != labels.len() {
            return Err(Error::param("vector and label counts differ"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= ALPHABET_SIZE) {
            return Err(Error::param(alloc::format!("label {l} outside the alphabet")));
        }
        let mut order: Vec<u32> = (0..labels.len() as u32).collect();
        order.sort_by_key(|&i| labels[i as usize]);
        let mut offsets = [0usize; ALPHABET_SIZE + 1];
        for &l in labels {
            offsets[l as usize + 1] += 1;
        }
        for c in 0..ALPHABET_SIZE {
            offsets[c + 1] += offsets[c];
        }
        Ok(Self { data: vectors.gather_rows(&order), offsets })
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn class_rows(&self, class: Letter) -> Range<usize> {
        self.offsets[class as usize]..self.offsets[class as usize + 1]
    }

    pub fn count(&self, class: Letter) -> usize {
        self.class_rows(class).len()
    }

    pub fn glyph(&self, class: Letter, k: usize) -> &[f64] {
        self.data.row(self.class_rows(class).start + k)
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    /// Letter of every row of [`Self::data`].
    pub fn labels(&self) -> Vec<Letter> {
        let mut out = Vec::with_capacity(self.len());
        for c in 0..ALPHABET_SIZE as Letter {
            out.extend(core::iter::repeat_n(c, self.count(c)));
        }
        out
    }

    /// `per_class` distinct glyphs of every letter, sampled without
    /// replacement. Evaluation only.
    pub fn balanced_sample(&self, per_class: usize, rng: &mut Rng) -> Result<LabeledSet> {
        let mut rows = Vec::with_capacity(per_class * ALPHABET_SIZE);
        let mut labels = Vec::with_capacity(per_class * ALPHABET_SIZE);
        for c in 0..ALPHABET_SIZE as Letter {
            let range = self.class_rows(c);
            if range.len() < per_class {
                return Err(Error::data(alloc::format!(
                    "letter {} has {} glyphs, {per_class} requested",
                    crate::alphabet::char_of(c),
                    range.len()
                )));
            }
            let mut idx: Vec<u32> = range.map(|r| r as u32).collect();
            let (chosen, _) = idx.partial_shuffle(rng, per_class);
            rows.extend_from_slice(chosen);
            labels.extend(core::iter::repeat_n(c, per_class));
        }
        Ok(LabeledSet { images: self.data.gather_rows(&rows), labels })
    }

    fn permuted(&self, perm: &PixelPermutation) -> GlyphPool {
        let mut data = Matrix::zeros(self.data.rows(), self.data.cols());
        for i in 0..self.data.rows() {
            perm.apply_into(self.data.row(i), data.row_mut(i));
        }
        GlyphPool { data, offsets: self.offsets }
    }
}

/// Images with their true letters. Only evaluation code builds these.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub images: Matrix,
    pub labels: Vec<Letter>,
}

/// A "font": per-letter pools of flattened image vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphSet {
    pub name: String,
    pub train: GlyphPool,
    pub test: GlyphPool,
}

impl GlyphSet {
    pub fn new(name: impl Into<String>, train: GlyphPool, test: GlyphPool) -> Result<Self> {
        if train.dim() != test.dim() {
            return Err(Error::param("train and test glyphs differ in dimension"));
        }
        Ok(Self { name: name.into(), train, test })
    }

    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    pub fn pool(&self, split: Split) -> &GlyphPool {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Every class has at least one glyph in both splits.
    pub fn check_complete(&self) -> Result<()> {
        for split in [Split::Train, Split::Test] {
            for c in 0..ALPHABET_SIZE as Letter {
                if self.pool(split).count(c) == 0 {
                    return Err(Error::data(alloc::format!(
                        "{split:?} pool of letter {} is empty",
                        crate::alphabet::char_of(c)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A fixed bijection on pixel positions: output pixel `i` is input pixel `perm[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelPermutation {
    pub perm: Vec<u32>,
    pub seed: u64,
}

impl PixelPermutation {
    pub fn identity(dim: usize) -> Self {
        Self { perm: (0..dim as u32).collect(), seed: 0 }
    }

    pub fn random(dim: usize, seed: u64) -> Self {
        let mut perm: Vec<u32> = (0..dim as u32).collect();
        perm.shuffle(&mut rng_from_seed(seed));
        Self { perm, seed }
    }

    pub fn from_vec(perm: Vec<u32>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            match seen.get_mut(p as usize) {
                Some(s) if !*s => *s = true,
                _ => return Err(Error::param("permutation is not a bijection")),
            }
        }
        Ok(Self { perm, seed: 0 })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0u32; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p as usize] = i as u32;
        }
        Self { perm: inv, seed: self.seed }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, &p) in out.iter_mut().zip(&self.perm) {
            *o = x[p as usize];
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }
}

/// Reorder the pixels of every glyph in both splits.
pub fn apply_permutation(gs: &GlyphSet, perm: &PixelPermutation) -> Result<GlyphSet> {
    if perm.len() != gs.dim() {
        return Err(Error::param(alloc::format!(
            "permutation over {} pixels applied to {}-dimensional glyphs",
            perm.len(),
            gs.dim()
        )));
    }
    Ok(GlyphSet { name: gs.name.clone(), train: gs.train.permuted(perm), test: gs.test.permuted(perm) })
}

/// Parameters of a synthetic prototype-plus-noise font.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticFont {
    pub dim: usize,
    pub sigma: f64,
    pub seed: u64,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl SyntheticFont {
    pub fn new(dim: usize, sigma: f64, seed: u64) -> Self {
        Self { dim, sigma, seed, train_per_class: 200, test_per_class: 100 }
    }
}

/// 26 random unit-norm prototypes; each glyph is its prototype plus isotropic
/// Gaussian noise of scale `sigma`. Train and test glyphs are separate draws.
pub fn make_synthetic_font(spec: &SyntheticFont) -> Result<GlyphSet> {
    if spec.dim < ALPHABET_SIZE {
        return Err(Error::param("synthetic fonts need dim >= 26"));
    }
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::param("noise sigma must be finite and non-negative"));
    }
    if spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(Error::param("synthetic fonts need at least one glyph per class and split"));
    }
    let mut rng = rng_from_seed(spec.seed);
    let mut protos = Matrix::zeros(ALPHABET_SIZE, spec.dim);
    for c in 0..ALPHABET_SIZE {
        let row = protos.row_mut(c);
        for v in row.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
        row.iter_mut().for_each(|v| *v /= norm);
    }
    let mut draw = |per_class: usize| -> Result<GlyphPool> {
        let mut data = Matrix::zeros(per_class * ALPHABET_SIZE, spec.dim);
        let mut labels = Vec::with_capacity(per_class * ALPHABET_SIZE);
        for c in 0..ALPHABET_SIZE {
            for k in 0..per_class {
                let row = data.row_mut(c * per_class + k);
                for (v, p) in row.iter_mut().zip(protos.row(c)) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = p + spec.sigma * z;
                }
                labels.push(c as Letter);
            }
        }
        GlyphPool::from_labeled(&data, &labels)
    };
    let train = draw(spec.train_per_class)?;
    let test = draw(spec.test_per_class)?;
    GlyphSet::new(alloc::format!("synthetic-d{}-s{}", spec.dim, spec.sigma), train, test)
}

/// Maps pool rows to rows of a compact table holding only the glyphs used.
struct Compactor<'a> {
    pool: &'a Matrix,
    slot: Vec<u32>,
    used: Vec<u32>,
}

impl<'a> Compactor<'a> {
    fn new(pool: &'a Matrix) -> Self {
        Self { pool, slot: vec![u32::MAX; pool.rows()], used: Vec::new() }
    }

    fn index(&mut self, pool_row: usize) -> u32 {
        let s = &mut self.slot[pool_row];
        if *s == u32::MAX {
            *s = self.used.len() as u32;
            self.used.push(pool_row as u32);
        }
        *s
    }

    fn finish(self) -> Matrix {
        self.pool.gather_rows(&self.used)
    }
}

/// A rendered stream. `labels` are the hidden letters and are only reachable
/// through [`ObservationSequence::labels`]; training code takes a
/// [`StreamView`], which carries no labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSequence {
    pub(crate) glyphs: Matrix,
    pub(crate) index: Vec<u32>,
    labels: Vec<Letter>,
}

impl ObservationSequence {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.glyphs.cols()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.glyphs.row(self.index[i] as usize)
    }

    /// Hidden ground truth, for evaluation only.
    pub fn labels(&self) -> &[Letter] {
        &self.labels
    }

    /// The stream without its labels.
    pub fn unlabeled(&self) -> StreamView<'_> {
        StreamView { glyphs: &self.glyphs, index: &self.index }
    }

    /// Dense copy of the images in stream order.
    pub fn to_matrix(&self) -> Matrix {
        self.glyphs.gather_rows(&self.index)
    }
}

/// Label-free view of an observation stream.
#[derive(Debug, Clone, Copy)]
pub struct StreamView<'a> {
    glyphs: &'a Matrix,
    index: &'a [u32],
}

impl StreamView<'_> {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.glyphs.row(self.index[i] as usize)
    }
}

/// Replace each letter by a glyph drawn uniformly (with replacement) from
/// that letter's pool.
pub fn render_stream(
    text: &NormalizedText,
    gs: &GlyphSet,
    split: Split,
    rng: &mut Rng,
) -> Result<ObservationSequence> {
    render_letters(&text.chars, gs.pool(split), rng)
}

pub(crate) fn render_letters(
    letters: &[Letter],
    pool: &GlyphPool,
    rng: &mut Rng,
) -> Result<ObservationSequence> {
    let mut compact = Compactor::new(&pool.data);
    let mut index = Vec::with_capacity(letters.len());
    for &c in letters {
        let range = pool.class_rows(c);
        if range.is_empty() {
            return Err(Error::data(alloc::format!(
                "no glyphs for letter {}",
                crate::alphabet::char_of(c)
            )));
        }
        let row = rng.random_range(range);
        index.push(compact.index(row));
    }
    Ok(ObservationSequence { glyphs: compact.finish(), index, labels: letters.to_vec() })
}

/// How consecutive observations are grouped into pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairMode {
    /// `(x0, x1), (x2, x3), ...`; a stream of 2N characters gives N pairs.
    #[default]
    Disjoint,
    /// `(x0, x1), (x1, x2), ...`
    Overlapping,
}

/// Consecutive observation pairs, stored as indices into a glyph table.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    glyphs: Matrix,
    first: Vec<u32>,
    second: Vec<u32>,
}

impl PairBatch {
    /// Pairs given explicitly as two equal-height matrices.
    pub fn from_matrices(first: &Matrix, second: &Matrix) -> Result<Self> {
        if first.rows() != second.rows() || first.cols() != second.cols() {
            return Err(Error::param("pair halves differ in shape"));
        }
        let n = first.rows();
        let mut data = Vec::with_capacity(2 * n * first.cols());
        data.extend_from_slice(first.as_slice());
        data.extend_from_slice(second.as_slice());
        let glyphs = Matrix::from_vec(2 * n, first.cols(), data)?;
        Ok(Self { glyphs, first: (0..n as u32).collect(), second: (n as u32..2 * n as u32).collect() })
    }

    /// Build from a glyph table and row indices. Indices must be in range.
    pub fn from_indices(glyphs: Matrix, first: Vec<u32>, second: Vec<u32>) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::param("pair halves differ in length"));
        }
        if first.iter().chain(&second).any(|&i| i as usize >= glyphs.rows()) {
            return Err(Error::param("pair index outside the glyph table"));
        }
        Ok(Self { glyphs, first, second })
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.glyphs.cols()
    }

    pub fn glyphs(&self) -> &Matrix {
        &self.glyphs
    }

    pub fn first_index(&self) -> &[u32] {
        &self.first
    }

    pub fn second_index(&self) -> &[u32] {
        &self.second
    }

    pub fn first_image(&self, i: usize) -> &[f64] {
        self.glyphs.row(self.first[i] as usize)
    }

    pub fn second_image(&self, i: usize) -> &[f64] {
        self.glyphs.row(self.second[i] as usize)
    }

    /// Glyph indices in stream order: `first[0], second[0], first[1], ...`.
    pub fn interleaved_index(&self) -> Vec<u32> {
        self.first.iter().zip(&self.second).flat_map(|(&a, &b)| [a, b]).collect()
    }

    /// The pairs at positions `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> PairBatch {
        PairBatch {
            glyphs: self.glyphs.clone(),
            first: idx.iter().map(|&i| self.first[i]).collect(),
            second: idx.iter().map(|&i| self.second[i]).collect(),
        }
    }

    /// Restrict to the pairs in `range`.
    pub fn slice(&self, range: Range<usize>) -> PairBatch {
        PairBatch {
            glyphs: self.glyphs.clone(),
            first: self.first[range.clone()].to_vec(),
            second: self.second[range].to_vec(),
        }
    }
}

/// Group a label-free stream into pairs.
pub fn make_pairs(stream: StreamView<'_>, mode: PairMode) -> Result<PairBatch> {
    let n = stream.len();
    if n < 2 {
        return Err(Error::param("need at least two observations to form a pair"));
    }
    let (first, second) = match mode {
        PairMode::Disjoint => {
            if n % 2 != 0 {
                return Err(Error::param("disjoint pairing needs an even-length stream"));
            }
            stream.index.chunks_exact(2).map(|p| (p[0], p[1])).unzip()
        }
        PairMode::Overlapping => stream.index.windows(2).map(|p| (p[0], p[1])).unzip(),
    };
    Ok(PairBatch { glyphs: stream.glyphs.clone(), first, second })
}
