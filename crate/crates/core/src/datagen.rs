//! Corpus generation: enumerate primitive functions as products of
//! elementary factors, differentiate them into integrands, dedupe, split,
//! and read/write the dataset files in all four encoding schemes.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::calculus::{differentiate, verify_pair};
use crate::expr::{self, normalize, EquivalencePolicy, Expr};
use crate::notation::{self, encode, DataScheme, Scheme, Token, TokenSeq, Vocab};

/// Configuration for primitive-function enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub base_set: Vec<Expr>,
    pub max_factors: usize,
    pub seed: u64,
    pub drop_zero_derivative: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            base_set: default_base_set(),
            max_factors: 5,
            seed: 17,
            drop_zero_derivative: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) {
        assert!((1..=8).contains(&self.max_factors));
        assert!(!self.base_set.is_empty());
    }
}

/// The nine elementary factors primitives are products of.
pub fn default_base_set() -> Vec<Expr> {
    vec![
        expr::x(),
        expr::constant_n(),
        expr::sin(expr::x()),
        expr::cos(expr::x()),
        expr::tan(expr::x()),
        expr::ln(expr::x()),
        expr::pow(expr::euler(), expr::x()),
        expr::sqrt(expr::x()),
        expr::root(expr::int(3), expr::x()),
    ]
}

/// One (integrand, primitive) pair. The id is a stable hash of the
/// canonical primitive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPair {
    pub id: String,
    pub integrand: Expr,
    pub primitive: Expr,
}

/// FNV-1a over the canonical string-polish encoding of the primitive.
pub fn pair_id(primitive: &Expr) -> String {
    let text = encode(primitive, Scheme::STRING_POLISH).to_text();
    format!("{:016x}", fnv1a(text.as_bytes()))
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// All products over multisets of 1..=max_factors factors from the base
/// set, in enumeration order and before normalization or deduplication.
pub fn multiset_products(cfg: &GeneratorConfig) -> Vec<Expr> {
    cfg.validate();
    let mut out = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for k in 1..=cfg.max_factors {
        enumerate_multisets(cfg.base_set.len(), k, 0, &mut current, &mut |idxs| {
            let mut product = cfg.base_set[idxs[0]].clone();
            for &i in &idxs[1..] {
                product = expr::mul(product, cfg.base_set[i].clone());
            }
            out.push(product);
        });
    }
    out
}

fn enumerate_multisets(
    n: usize,
    k: usize,
    start: usize,
    current: &mut Vec<usize>,
    emit: &mut impl FnMut(&[usize]),
) {
    if k == 0 {
        emit(current);
        return;
    }
    for i in start..n {
        current.push(i);
        enumerate_multisets(n, k - 1, i, current, emit);
        current.pop();
    }
}

/// Normalized, deduplicated primitive functions in deterministic order.
pub fn enumerate_primitives(cfg: &GeneratorConfig) -> Vec<Expr> {
    let mut seen = BTreeSet::new();
    for product in multiset_products(cfg) {
        seen.insert(normalize(&product));
    }
    seen.into_iter().collect()
}

/// Differentiate every primitive, drop zero-derivative pairs, dedupe by the
/// normalized (integrand, primitive) pair, and keep only pairs the
/// verification oracle accepts.
pub fn build_corpus(cfg: &GeneratorConfig) -> Vec<DatasetPair> {
    let policy = EquivalencePolicy::default();
    let mut seen: BTreeSet<(Expr, Expr)> = BTreeSet::new();
    let mut pairs = Vec::new();
    for primitive in enumerate_primitives(cfg) {
        let integrand = differentiate(&primitive);
        if cfg.drop_zero_derivative && integrand.is_int(0) {
            continue;
        }
        if !seen.insert((integrand.clone(), primitive.clone())) {
            continue;
        }
        if !verify_pair(&integrand, &primitive, &policy) {
            continue;
        }
        pairs.push(DatasetPair {
            id: pair_id(&primitive),
            integrand,
            primitive,
        });
    }
    pairs.sort_by(|a, b| a.id.cmp(&b.id));
    for w in pairs.windows(2) {
        assert_ne!(w[0].id, w[1].id, "hash collision between distinct primitives");
    }
    pairs
}

pub const FOLD_COUNT: usize = 10;

/// Deterministic 4:1 train/test split with a 10-fold partition of the train
/// half; each fold is the validation set of its own 9:1 training run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub folds: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("too few pairs to split (need at least 50)")]
pub struct TooFewPairs;

pub fn split_corpus(pairs: &[DatasetPair], seed: u64) -> Result<SplitPlan, TooFewPairs> {
    if pairs.len() < 50 {
        return Err(TooFewPairs);
    }
    let mut ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let test_count = ids.len().div_ceil(5);
    let test: Vec<String> = ids[..test_count].to_vec();
    let train: Vec<String> = ids[test_count..].to_vec();
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); FOLD_COUNT];
    for (i, id) in train.iter().enumerate() {
        folds[i % FOLD_COUNT].push(id.clone());
    }
    Ok(SplitPlan { seed, train, test, folds })
}

impl SplitPlan {
    /// Everything in train, no folds; used when a corpus is too small to
    /// split but still needs to be written to disk.
    pub fn trivial(pairs: &[DatasetPair]) -> SplitPlan {
        SplitPlan {
            seed: 0,
            train: pairs.iter().map(|p| p.id.clone()).collect(),
            test: Vec::new(),
            folds: Vec::new(),
        }
    }

    /// Fold index of a train id, if any.
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.folds.iter().position(|f| f.iter().any(|i| i == id))
    }

    /// The (training, validation) id lists of one fold.
    pub fn fold_partition(&self, fold: usize) -> (Vec<String>, Vec<String>) {
        let validation = self.folds[fold].clone();
        let training = self
            .train
            .iter()
            .filter(|id| !validation.contains(id))
            .cloned()
            .collect();
        (training, validation)
    }
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(String),
    #[error("malformed corpus file: {0}")]
    Malformed(String),
    #[error("token error: {0}")]
    Decode(#[from] notation::DecodeError),
}

/// Everything the manifest records about a written corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub seed: u64,
    pub generator_seed: u64,
    pub max_factors: usize,
    pub base_set: Vec<Expr>,
    pub pair_count: usize,
    pub vocab_string: Vocab,
    pub vocab_subtree: Vocab,
}

/// Build the per-format vocabularies over every pair's encodings.
pub fn build_vocabs(pairs: &[DatasetPair]) -> (Vocab, Vocab) {
    let mut string_tokens: Vec<Token> = Vec::new();
    let mut subtree_tokens: Vec<Token> = Vec::new();
    for p in pairs {
        for e in [&p.integrand, &p.primitive] {
            string_tokens.extend(encode(e, Scheme::STRING_POLISH).tokens);
            subtree_tokens.extend(encode(e, Scheme::SUBTREE_POLISH).tokens);
        }
    }
    (
        Vocab::from_tokens(string_tokens.iter()),
        Vocab::from_tokens(subtree_tokens.iter()),
    )
}

fn scheme_file_name(scheme: DataScheme, split: &str) -> String {
    format!("{}.{}.txt", scheme.name(), split)
}

fn pairs_by_ids<'a>(pairs: &'a [DatasetPair], ids: &[String]) -> Vec<&'a DatasetPair> {
    ids.iter()
        .map(|id| {
            pairs
                .iter()
                .find(|p| &p.id == id)
                .expect("split plan references an unknown pair id")
        })
        .collect()
}

fn render_split(pairs: &[&DatasetPair], scheme: DataScheme) -> String {
    let mut out = String::new();
    for p in pairs {
        let input = encode(&p.integrand, scheme.input_scheme()).to_text();
        let output = encode(&p.primitive, scheme.output_scheme()).to_text();
        out.push_str(&input);
        out.push('\t');
        out.push_str(&output);
        out.push('\n');
    }
    out
}

/// Write one scheme's train/test files into `dir`, returning the
/// (file name, checksum) entries for the manifest.
pub fn write_scheme_files(
    pairs: &[DatasetPair],
    plan: &SplitPlan,
    scheme: DataScheme,
    dir: &Path,
) -> Result<Vec<(String, u64)>, CorpusError> {
    let mut entries = Vec::new();
    for (split, ids) in [("train", &plan.train), ("test", &plan.test)] {
        let name = scheme_file_name(scheme, split);
        let body = render_split(&pairs_by_ids(pairs, ids), scheme);
        fs::write(dir.join(&name), &body)?;
        entries.push((name, fnv1a(body.as_bytes())));
    }
    Ok(entries)
}

/// Write the full corpus: the eight scheme files plus `manifest.txt`.
pub fn write_corpus(
    pairs: &[DatasetPair],
    plan: &SplitPlan,
    cfg: &GeneratorConfig,
    dir: &Path,
) -> Result<(), CorpusError> {
    fs::create_dir_all(dir)?;
    let mut checksums = Vec::new();
    for scheme in DataScheme::ALL {
        checksums.extend(write_scheme_files(pairs, plan, scheme, dir)?);
    }
    let (vocab_string, vocab_subtree) = build_vocabs(pairs);

    let mut m = String::new();
    m.push_str("format = symint-corpus-v1\n");
    m.push_str(&format!("generator_seed = {}\n", cfg.seed));
    m.push_str(&format!("split_seed = {}\n", plan.seed));
    m.push_str(&format!("max_factors = {}\n", cfg.max_factors));
    m.push_str(&format!("drop_zero_derivative = {}\n", cfg.drop_zero_derivative));
    let base: Vec<String> = cfg
        .base_set
        .iter()
        .map(|e| encode(e, Scheme::STRING_POLISH).to_text())
        .collect();
    m.push_str(&format!("base_set = {}\n", base.join(", ")));
    m.push_str(&format!("pair_count = {}\n", pairs.len()));
    m.push_str(&format!("train_count = {}\n", plan.train.len()));
    m.push_str(&format!("test_count = {}\n", plan.test.len()));
    m.push_str(&format!("fold_count = {}\n", plan.folds.len()));
    let vs: Vec<String> = vocab_string.tokens().iter().map(|t| t.to_string()).collect();
    m.push_str(&format!("vocab.string = {}\n", vs.join(" ")));
    let vt: Vec<String> = vocab_subtree.tokens().iter().map(|t| t.to_string()).collect();
    m.push_str(&format!("vocab.subtree = {}\n", vt.join(" ")));
    for (name, sum) in &checksums {
        m.push_str(&format!("checksum.{name} = {sum:016x}\n"));
    }
    for (i, id) in plan.train.iter().enumerate() {
        let fold = plan.fold_of(id).map(|f| f.to_string()).unwrap_or_else(|| "-".into());
        m.push_str(&format!("train.{i} = {id} {fold}\n"));
    }
    for (i, id) in plan.test.iter().enumerate() {
        m.push_str(&format!("test.{i} = {id}\n"));
    }
    let mut f = fs::File::create(dir.join("manifest.txt"))?;
    f.write_all(m.as_bytes())?;
    Ok(())
}

fn manifest_value<'a>(lines: &'a [(String, String)], key: &str) -> Result<&'a str, CorpusError> {
    lines
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| CorpusError::Malformed(format!("missing manifest key {key}")))
}

fn parse_vocab_line(text: &str) -> Result<Vocab, CorpusError> {
    let tokens = text
        .split_whitespace()
        .map(notation::parse_token)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Vocab::from_ordered(tokens))
}

/// Read back a corpus directory written by [`write_corpus`].
pub fn read_corpus(dir: &Path) -> Result<(Vec<DatasetPair>, SplitPlan, CorpusManifest), CorpusError> {
    let manifest_text = fs::read_to_string(dir.join("manifest.txt"))?;
    let mut lines: Vec<(String, String)> = Vec::new();
    for line in manifest_text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| CorpusError::Malformed(format!("bad manifest line: {line}")))?;
        lines.push((k.to_string(), v.to_string()));
    }
    let parse_u64 = |key: &str| -> Result<u64, CorpusError> {
        manifest_value(&lines, key)?
            .parse()
            .map_err(|_| CorpusError::Malformed(format!("bad integer for {key}")))
    };
    let generator_seed = parse_u64("generator_seed")?;
    let split_seed = parse_u64("split_seed")?;
    let max_factors = parse_u64("max_factors")? as usize;
    let pair_count = parse_u64("pair_count")? as usize;
    let fold_count = parse_u64("fold_count")? as usize;
    let base_set = manifest_value(&lines, "base_set")?
        .split(", ")
        .filter(|s| !s.is_empty())
        .map(|s| {
            let seq = TokenSeq::from_text(s, Scheme::STRING_POLISH)?;
            Ok(notation::decode(&seq)?)
        })
        .collect::<Result<Vec<Expr>, CorpusError>>()?;
    let vocab_string = parse_vocab_line(manifest_value(&lines, "vocab.string")?)?;
    let vocab_subtree = parse_vocab_line(manifest_value(&lines, "vocab.subtree")?)?;

    // Verify every recorded checksum against the file on disk.
    for (k, v) in &lines {
        if let Some(name) = k.strip_prefix("checksum.") {
            let body = fs::read(dir.join(name))?;
            let want = u64::from_str_radix(v, 16)
                .map_err(|_| CorpusError::Malformed(format!("bad checksum for {name}")))?;
            if fnv1a(&body) != want {
                return Err(CorpusError::ChecksumMismatch(name.to_string()));
            }
        }
    }

    let mut train: Vec<String> = Vec::new();
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); fold_count];
    let mut test: Vec<String> = Vec::new();
    for (k, v) in &lines {
        if k.starts_with("train.") {
            let mut parts = v.split_whitespace();
            let id = parts
                .next()
                .ok_or_else(|| CorpusError::Malformed("empty train line".into()))?;
            let fold = parts.next().unwrap_or("-");
            if fold != "-" {
                let f: usize = fold
                    .parse()
                    .map_err(|_| CorpusError::Malformed("bad fold index".into()))?;
                folds[f].push(id.to_string());
            }
            train.push(id.to_string());
        } else if k.starts_with("test.") {
            test.push(v.clone());
        }
    }

    // Pairs are reconstructed from the canonical string-polish files.
    let mut pairs = Vec::new();
    for (split, ids) in [("train", &train), ("test", &test)] {
        let name = scheme_file_name(
            DataScheme { format: notation::Format::String, order: notation::OrderScheme::Polish },
            split,
        );
        let body = fs::read_to_string(dir.join(&name))?;
        let records: Vec<&str> = body.lines().collect();
        if records.len() != ids.len() {
            return Err(CorpusError::Malformed(format!(
                "{name}: {} records but {} ids in manifest",
                records.len(),
                ids.len()
            )));
        }
        for (id, line) in ids.iter().zip(records) {
            let (input, output) = line
                .split_once('\t')
                .ok_or_else(|| CorpusError::Malformed(format!("{name}: missing tab")))?;
            let integrand = notation::decode(&TokenSeq::from_text(input, Scheme::STRING_POLISH)?)?;
            let primitive = notation::decode(&TokenSeq::from_text(output, Scheme::STRING_POLISH)?)?;
            let recomputed = pair_id(&primitive);
            if &recomputed != id {
                return Err(CorpusError::ChecksumMismatch(format!("pair id {id}")));
            }
            pairs.push(DatasetPair { id: id.clone(), integrand, primitive });
        }
    }
    if pairs.len() != pair_count {
        return Err(CorpusError::Malformed("pair_count disagrees with records".into()));
    }
    pairs.sort_by(|a, b| a.id.cmp(&b.id));

    let plan = SplitPlan { seed: split_seed, train, test, folds };
    let manifest = CorpusManifest {
        seed: split_seed,
        generator_seed,
        max_factors,
        base_set,
        pair_count,
        vocab_string,
        vocab_subtree,
    };
    Ok((pairs, plan, manifest))
}
