//! Synthetic families of related transduction tasks.
//!
//! All tasks translate into one shared target "language" generated by a
//! small Markov chain. Each source side is a substitution cipher of the
//! target followed by block-wise reversal, and the source sentence is
//! prefixed with the task's tag token. An HRL/LRL pair shares its reversal
//! block and a configurable fraction of its substitution rules.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::competence::TaskId;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream};
use crate::scheduler::draw_shuffled_task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "HRL")]
    Hrl,
    #[serde(rename = "LRL")]
    Lrl,
}

/// Token id layout: `PAD BOS EOS | tags | source alphabet | target alphabet`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub n_tags: u32,
    pub alphabet: u32,
}

impl Vocab {
    pub const PAD: u32 = 0;
    pub const BOS: u32 = 1;
    pub const EOS: u32 = 2;
    const SPECIALS: u32 = 3;

    pub fn size(&self) -> usize {
        (Self::SPECIALS + self.n_tags + 2 * self.alphabet) as usize
    }

    pub fn tag(&self, i: u32) -> u32 {
        Self::SPECIALS + i
    }

    pub fn src_token(&self, i: u32) -> u32 {
        Self::SPECIALS + self.n_tags + i
    }

    pub fn tgt_token(&self, i: u32) -> u32 {
        Self::SPECIALS + self.n_tags + self.alphabet + i
    }

    pub fn is_tag(&self, tok: u32) -> bool {
        (Self::SPECIALS..Self::SPECIALS + self.n_tags).contains(&tok)
    }

    /// Token accuracy of guessing uniformly among target symbols and EOS.
    pub fn chance_accuracy(&self) -> f64 {
        1.0 / f64::from(self.alphabet + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub name: String,
    pub tag_token: u32,
    pub role: Role,
    pub transform_seed: u64,
    pub corpus_size: usize,
    pub relatedness: f64,
    pub pair: usize,
}

/// Source-side construction for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transform {
    /// `substitution[i]` is the source symbol for target symbol `i`.
    pub substitution: Vec<u32>,
    /// Block length for local reversal; 1 keeps the order.
    pub block: usize,
}

impl Transform {
    /// Maps target symbol indices to source symbol indices, then reverses
    /// consecutive blocks.
    pub fn apply(&self, target_symbols: &[u32]) -> Vec<u32> {
        let mapped: Vec<u32> = target_symbols
            .iter()
            .map(|&s| self.substitution[s as usize])
            .collect();
        let mut out = Vec::with_capacity(mapped.len());
        for chunk in mapped.chunks(self.block.max(1)) {
            out.extend(chunk.iter().rev());
        }
        out
    }

    /// Fraction of target symbols mapped identically by both transforms.
    pub fn rule_overlap(&self, other: &Transform) -> f64 {
        let same = self
            .substitution
            .iter()
            .zip(&other.substitution)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.substitution.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExamplePair {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    pub spec: TaskSpec,
    pub transform: Transform,
    pub train: Vec<ExamplePair>,
    pub dev: Vec<ExamplePair>,
    pub test: Vec<ExamplePair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub hrl_size: usize,
    pub lrl_size: usize,
    pub relatedness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyOptions {
    pub alphabet: u32,
    pub min_len: usize,
    pub max_len: usize,
    pub dev_size: usize,
    pub test_size: usize,
    /// Successors per symbol in the target-language Markov chain.
    pub fanout: usize,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        FamilyOptions {
            alphabet: 20,
            min_len: 4,
            max_len: 10,
            dev_size: 200,
            test_size: 200,
            fanout: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFamily {
    pub vocab: Vocab,
    pub tasks: Vec<TaskData>,
}

/// Shared target language: first-order Markov chain over the target alphabet.
struct TargetLanguage {
    successors: Vec<Vec<u32>>,
    min_len: usize,
    max_len: usize,
}

impl TargetLanguage {
    fn new(rng: &mut ChaCha8Rng, opts: &FamilyOptions) -> Self {
        let k = opts.alphabet;
        let fanout = opts.fanout.clamp(1, k as usize);
        let successors = (0..k)
            .map(|_| {
                let mut all: Vec<u32> = (0..k).collect();
                all.shuffle(rng);
                all.truncate(fanout);
                all
            })
            .collect();
        TargetLanguage {
            successors,
            min_len: opts.min_len,
            max_len: opts.max_len,
        }
    }

    fn sentence(&self, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let len = rng.random_range(self.min_len..=self.max_len);
        let mut s = Vec::with_capacity(len);
        let mut cur = rng.random_range(0..self.successors.len() as u32);
        s.push(cur);
        while s.len() < len {
            let next = &self.successors[cur as usize];
            cur = next[rng.random_range(0..next.len())];
            s.push(cur);
        }
        s
    }
}

fn validate_pairs(pairs: &[PairSpec], opts: &FamilyOptions) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::config("task family needs at least one pair"));
    }
    if opts.alphabet < 2 {
        return Err(Error::config("alphabet must have at least 2 symbols"));
    }
    if opts.min_len == 0 || opts.min_len > opts.max_len {
        return Err(Error::config(format!(
            "invalid length bounds [{}, {}]",
            opts.min_len, opts.max_len
        )));
    }
    for (i, p) in pairs.iter().enumerate() {
        if p.hrl_size == 0 || p.lrl_size == 0 {
            return Err(Error::config(format!("pair {i}: corpus sizes must be >= 1")));
        }
        if p.lrl_size > p.hrl_size {
            return Err(Error::config(format!(
                "pair {i}: LRL size {} exceeds HRL size {}",
                p.lrl_size, p.hrl_size
            )));
        }
        if !(0.0..=1.0).contains(&p.relatedness) {
            return Err(Error::config(format!(
                "pair {i}: relatedness {} outside [0, 1]",
                p.relatedness
            )));
        }
    }
    Ok(())
}

/// LRL substitution that keeps `round(relatedness * k)` of the HRL rules and
/// moves every other image.
fn related_substitution(hrl: &[u32], relatedness: f64, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let k = hrl.len();
    let mut shared = ((relatedness * k as f64).round() as usize).min(k);
    if k - shared == 1 {
        // A single rule cannot move on its own: keep it, or move two.
        let keep = (1.0 - relatedness).abs();
        let drop = ((k - 2) as f64 / k as f64 - relatedness).abs();
        shared = if drop < keep { k - 2 } else { k };
    }
    let mut symbols: Vec<usize> = (0..k).collect();
    symbols.shuffle(rng);
    let changed = &symbols[shared..];
    let mut out = hrl.to_vec();
    if changed.len() >= 2 {
        // Rotating the images among the changed symbols leaves no fixed point.
        for (i, &sym) in changed.iter().enumerate() {
            out[sym] = hrl[changed[(i + 1) % changed.len()]];
        }
    }
    out
}

fn unique_sentences(
    lang: &TargetLanguage,
    rng: &mut ChaCha8Rng,
    n: usize,
    taken: &mut HashSet<Vec<u32>>,
) -> Result<Vec<Vec<u32>>> {
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 100 * n + 1000 {
            return Err(Error::config(
                "could not draw enough distinct held-out sentences; widen the length bounds or alphabet",
            ));
        }
        let s = lang.sentence(rng);
        if taken.insert(s.clone()) {
            out.push(s);
        }
    }
    Ok(out)
}

/// Builds HRL/LRL task pairs. Task order is `[HRL_0, LRL_0, HRL_1, LRL_1, ...]`.
pub fn generate_task_family(
    seed: u64,
    pairs: &[PairSpec],
    opts: &FamilyOptions,
) -> Result<TaskFamily> {
    validate_pairs(pairs, opts)?;
    let n_tasks = 2 * pairs.len() as u32;
    let vocab = Vocab {
        n_tags: n_tasks,
        alphabet: opts.alphabet,
    };
    let mut lang_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX, Stream::Data));
    let lang = TargetLanguage::new(&mut lang_rng, opts);

    let mut tasks = Vec::with_capacity(n_tasks as usize);
    for (p, pair) in pairs.iter().enumerate() {
        let mut trng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2 * p as u64, Stream::Data));
        let mut hrl_sub: Vec<u32> = (0..opts.alphabet).collect();
        hrl_sub.shuffle(&mut trng);
        let block = trng.random_range(1..=3usize);
        let lrl_sub = related_substitution(&hrl_sub, pair.relatedness, &mut trng);

        for (role, size, sub) in [
            (Role::Hrl, pair.hrl_size, hrl_sub.clone()),
            (Role::Lrl, pair.lrl_size, lrl_sub),
        ] {
            let idx = tasks.len() as u32;
            let transform_seed = derive_seed(seed, 1000 + u64::from(idx), Stream::Data);
            let spec = TaskSpec {
                id: TaskId(idx),
                name: format!(
                    "{}{}",
                    if role == Role::Hrl { "hrl" } else { "lrl" },
                    p
                ),
                tag_token: vocab.tag(idx),
                role,
                transform_seed,
                corpus_size: size,
                relatedness: pair.relatedness,
                pair: p,
            };
            let transform = Transform {
                substitution: sub,
                block,
            };
            tasks.push(build_task(&vocab, &lang, spec, transform, opts)?);
        }
    }
    check_tags(&tasks)?;
    Ok(TaskFamily { vocab, tasks })
}

fn build_task(
    vocab: &Vocab,
    lang: &TargetLanguage,
    spec: TaskSpec,
    transform: Transform,
    opts: &FamilyOptions,
) -> Result<TaskData> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.transform_seed);
    let encode = |symbols: &[u32]| ExamplePair {
        source: std::iter::once(spec.tag_token)
            .chain(transform.apply(symbols).into_iter().map(|s| vocab.src_token(s)))
            .collect(),
        target: symbols.iter().map(|&s| vocab.tgt_token(s)).collect(),
    };
    let train_sym: Vec<Vec<u32>> = (0..spec.corpus_size).map(|_| lang.sentence(&mut rng)).collect();
    let mut taken: HashSet<Vec<u32>> = train_sym.iter().cloned().collect();
    let dev_sym = unique_sentences(lang, &mut rng, opts.dev_size, &mut taken)?;
    let test_sym = unique_sentences(lang, &mut rng, opts.test_size, &mut taken)?;
    let train = train_sym.iter().map(|s| encode(s)).collect();
    let dev = dev_sym.iter().map(|s| encode(s)).collect();
    let test = test_sym.iter().map(|s| encode(s)).collect();
    Ok(TaskData {
        spec,
        transform,
        train,
        dev,
        test,
    })
}

/// Tag tokens must be unique and every source must start with its task's tag.
pub fn check_tags(tasks: &[TaskData]) -> Result<()> {
    let mut seen = HashSet::new();
    for t in tasks {
        if !seen.insert(t.spec.tag_token) {
            return Err(Error::config(format!(
                "duplicate tag token {} (task `{}`)",
                t.spec.tag_token, t.spec.name
            )));
        }
        let all = t.train.iter().chain(&t.dev).chain(&t.test);
        if let Some(bad) = all.into_iter().find(|e| e.source.first() != Some(&t.spec.tag_token)) {
            return Err(Error::config(format!(
                "task `{}`: source {:?} does not start with tag {}",
                t.spec.name, bad.source, t.spec.tag_token
            )));
        }
    }
    Ok(())
}

impl TaskFamily {
    pub fn task(&self, id: TaskId) -> Option<&TaskData> {
        self.tasks.iter().find(|t| t.spec.id == id)
    }

    pub fn ids(&self) -> Vec<TaskId> {
        self.tasks.iter().map(|t| t.spec.id).collect()
    }

    pub fn roles(&self) -> Vec<(TaskId, Role)> {
        self.tasks.iter().map(|t| (t.spec.id, t.spec.role)).collect()
    }
}

/// A minibatch; `tasks[i]` is the origin of `pairs[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub tasks: Vec<TaskId>,
    pub pairs: Vec<ExamplePair>,
}

impl Batch {
    pub fn source_tokens(&self) -> usize {
        self.pairs.iter().map(|p| p.source.len()).sum()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn shortest(task: &TaskData) -> Result<usize> {
    task.train
        .iter()
        .map(|e| e.source.len())
        .min()
        .ok_or_else(|| Error::invalid(format!("task `{}` has an empty corpus", task.spec.name)))
}

/// Fills a batch up to `batch_tokens` source tokens using `draw`, stopping at
/// the first example that would overflow the budget.
fn fill_batch<R: Rng + ?Sized>(
    batch_tokens: usize,
    rng: &mut R,
    mut draw: impl FnMut(&mut R) -> Result<(TaskId, ExamplePair)>,
) -> Result<Batch> {
    let mut batch = Batch {
        tasks: Vec::new(),
        pairs: Vec::new(),
    };
    let mut used = 0usize;
    loop {
        let (task, pair) = draw(rng)?;
        let len = pair.source.len();
        if used + len > batch_tokens {
            if batch.is_empty() {
                // The first draw was longer than the budget; some example fits.
                continue;
            }
            return Ok(batch);
        }
        used += len;
        batch.tasks.push(task);
        batch.pairs.push(pair);
    }
}

/// Monolingual batch sampled with replacement from `task`'s training corpus.
pub fn make_batch<R: Rng + ?Sized>(task: &TaskData, batch_tokens: usize, rng: &mut R) -> Result<Batch> {
    let min = shortest(task)?;
    if batch_tokens < min {
        return Err(Error::config(format!(
            "batch_tokens {batch_tokens} is smaller than the shortest example ({min})"
        )));
    }
    fill_batch(batch_tokens, rng, |rng| {
        let i = rng.random_range(0..task.train.len());
        Ok((task.spec.id, task.train[i].clone()))
    })
}

/// Multilingual batch: each example's task is drawn uniformly.
pub fn make_shuffled_batch<R: Rng + ?Sized>(
    tasks: &[&TaskData],
    batch_tokens: usize,
    rng: &mut R,
) -> Result<Batch> {
    if tasks.is_empty() {
        return Err(Error::invalid("shuffled batch needs at least one task"));
    }
    let mut min = usize::MAX;
    for t in tasks {
        min = min.min(shortest(t)?);
    }
    if batch_tokens < min {
        return Err(Error::config(format!(
            "batch_tokens {batch_tokens} is smaller than the shortest example ({min})"
        )));
    }
    let ids: Vec<TaskId> = tasks.iter().map(|t| t.spec.id).collect();
    fill_batch(batch_tokens, rng, |rng| {
        let id = draw_shuffled_task(&ids, rng)?;
        let task = tasks.iter().find(|t| t.spec.id == id).expect("drawn from ids");
        let i = rng.random_range(0..task.train.len());
        Ok((id, task.train[i].clone()))
    })
}

// ---- corpus files ---------------------------------------------------------

pub const CORPUS_HEADER: &str = "# selfpace-corpus v1";

/// One pair per line: space-separated source ids, a tab, target ids.
pub fn format_corpus(pairs: &[ExamplePair]) -> String {
    let mut out = String::with_capacity(pairs.len() * 48);
    out.push_str(CORPUS_HEADER);
    out.push('\n');
    for p in pairs {
        join_ids(&mut out, &p.source);
        out.push('\t');
        join_ids(&mut out, &p.target);
        out.push('\n');
    }
    out
}

fn join_ids(out: &mut String, ids: &[u32]) {
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{id}").expect("writing to a String");
    }
}

/// Parses a corpus file. Blank lines and lines starting with `#` are skipped;
/// every token must be below `vocab_size`.
pub fn parse_corpus(text: &str, vocab_size: usize) -> Result<Vec<ExamplePair>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| err("expected a tab between source and target".into()))?;
        if tgt.contains('\t') {
            return Err(err("more than one tab".into()));
        }
        let parse_side = |side: &str, what: &str| -> Result<Vec<u32>> {
            let ids = side
                .split(' ')
                .map(|tok| {
                    let id: u32 = tok
                        .parse()
                        .map_err(|_| err(format!("bad {what} token `{tok}`")))?;
                    if id as usize >= vocab_size {
                        return Err(err(format!("{what} token {id} outside vocabulary of {vocab_size}")));
                    }
                    Ok(id)
                })
                .collect::<Result<Vec<u32>>>()?;
            Ok(ids)
        };
        let source = parse_side(src, "source")?;
        let target = parse_side(tgt, "target")?;
        pairs.push(ExamplePair { source, target });
    }
    Ok(pairs)
}

#[derive(Debug, Serialize, Deserialize)]
struct FamilyManifest {
    version: u32,
    vocab: Vocab,
    tasks: Vec<(TaskSpec, Transform)>,
}

const MANIFEST: &str = "family.json";

/// Writes `family.json` plus `<task>.{train,dev,test}.tsv` into `dir`.
pub fn export_family(family: &TaskFamily, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = FamilyManifest {
        version: 1,
        vocab: family.vocab,
        tasks: family
            .tasks
            .iter()
            .map(|t| (t.spec.clone(), t.transform.clone()))
            .collect(),
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    for t in &family.tasks {
        for (split, pairs) in [("train", &t.train), ("dev", &t.dev), ("test", &t.test)] {
            let path = dir.join(format!("{}.{split}.tsv", t.spec.name));
            fs::write(&path, format_corpus(pairs)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

pub fn import_family(dir: &Path) -> Result<TaskFamily> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: FamilyManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })?;
    if manifest.version != 1 {
        return Err(Error::config(format!(
            "unsupported family manifest version {}",
            manifest.version
        )));
    }
    let vocab_size = manifest.vocab.size();
    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    for (spec, transform) in manifest.tasks {
        let read = |split: &str| -> Result<Vec<ExamplePair>> {
            let path = dir.join(format!("{}.{split}.tsv", spec.name));
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            parse_corpus(&text, vocab_size)
        };
        let train = read("train")?;
        let dev = read("dev")?;
        let test = read("test")?;
        tasks.push(TaskData {
            spec,
            transform,
            train,
            dev,
            test,
        });
    }
    check_tags(&tasks)?;
    Ok(TaskFamily {
        vocab: manifest.vocab,
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::step_rng;
    use proptest::prelude::*;

    fn pair(h: usize, l: usize, r: f64) -> PairSpec {
        PairSpec {
            hrl_size: h,
            lrl_size: l,
            relatedness: r,
        }
    }

    fn small_opts() -> FamilyOptions {
        FamilyOptions {
            dev_size: 20,
            test_size: 20,
            ..FamilyOptions::default()
        }
    }

    #[test]
    fn relatedness_extremes() {
        let fam = generate_task_family(1, &[pair(50, 10, 1.0)], &small_opts()).unwrap();
        assert_eq!(fam.tasks[0].transform, fam.tasks[1].transform);
        let fam = generate_task_family(1, &[pair(50, 10, 0.0)], &small_opts()).unwrap();
        let (h, l) = (&fam.tasks[0].transform, &fam.tasks[1].transform);
        assert!(h.substitution.iter().zip(&l.substitution).all(|(a, b)| a != b));
        assert_eq!(h.rule_overlap(l), 0.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_task_family(42, &[pair(5000, 500, 0.8)], &FamilyOptions::default()).unwrap();
        let b = generate_task_family(42, &[pair(5000, 500, 0.8)], &FamilyOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tasks[0].train.len(), 5000);
        assert_eq!(a.tasks[1].train.len(), 500);
        let c = generate_task_family(43, &[pair(5000, 500, 0.8)], &FamilyOptions::default()).unwrap();
        assert_ne!(a.tasks[0].train, c.tasks[0].train);
    }

    #[test]
    fn splits_are_disjoint_and_tagged() {
        let fam = generate_task_family(7, &[pair(300, 100, 0.5), pair(200, 50, 0.9)], &small_opts()).unwrap();
        assert_eq!(fam.vocab.size(), 3 + 4 + 40);
        for t in &fam.tasks {
            let train: HashSet<_> = t.train.iter().collect();
            let dev: HashSet<_> = t.dev.iter().collect();
            assert!(t.dev.iter().all(|e| !train.contains(e)));
            assert!(t.test.iter().all(|e| !train.contains(e) && !dev.contains(e)));
            for e in t.train.iter().chain(&t.dev) {
                assert_eq!(e.source[0], t.spec.tag_token);
                assert_eq!(e.source.len(), e.target.len() + 1);
                assert!((4..=10).contains(&e.target.len()));
            }
        }
    }

    #[test]
    fn rejects_bad_pairs() {
        assert!(generate_task_family(1, &[], &small_opts()).is_err());
        assert!(generate_task_family(1, &[pair(10, 20, 0.5)], &small_opts()).is_err());
        assert!(generate_task_family(1, &[pair(10, 0, 0.5)], &small_opts()).is_err());
        assert!(generate_task_family(1, &[pair(10, 5, 1.5)], &small_opts()).is_err());
    }

    #[test]
    fn duplicate_tags_rejected() {
        let mut fam = generate_task_family(1, &[pair(20, 10, 0.5)], &small_opts()).unwrap();
        let tag = fam.tasks[0].spec.tag_token;
        fam.tasks[1].spec.tag_token = tag;
        assert!(matches!(check_tags(&fam.tasks), Err(Error::Config(_))));
    }

    fn one_example_task(len: usize) -> TaskData {
        let mut fam = generate_task_family(1, &[pair(20, 10, 0.5)], &small_opts()).unwrap();
        let mut t = fam.tasks.remove(0);
        let mut src = vec![t.spec.tag_token];
        src.extend(std::iter::repeat_n(fam.vocab.src_token(0), len - 1));
        t.train = vec![ExamplePair {
            source: src,
            target: vec![fam.vocab.tgt_token(0); len - 1],
        }];
        t
    }

    #[test]
    fn batch_token_budget() {
        let t = one_example_task(10);
        let mut rng = step_rng(0, 0, Stream::Batch);
        let b = make_batch(&t, 25, &mut rng).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.source_tokens(), 20);
        assert!(matches!(make_batch(&t, 9, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn batch_properties() {
        let fam = generate_task_family(3, &[pair(500, 100, 0.8)], &small_opts()).unwrap();
        let t = &fam.tasks[1];
        let b1 = make_batch(t, 256, &mut step_rng(5, 1, Stream::Batch)).unwrap();
        let b2 = make_batch(t, 256, &mut step_rng(5, 1, Stream::Batch)).unwrap();
        assert_eq!(b1, b2);
        assert!(b1.source_tokens() <= 256);
        assert!(b1.pairs.iter().all(|p| p.source[0] == t.spec.tag_token));
        assert!(b1.tasks.iter().all(|id| *id == t.spec.id));
    }

    #[test]
    fn shuffled_batches_balance_tasks() {
        let fam = generate_task_family(3, &[pair(2000, 50, 0.8)], &small_opts()).unwrap();
        let refs: Vec<&TaskData> = fam.tasks.iter().collect();
        let tags: HashSet<u32> = fam.tasks.iter().map(|t| t.spec.tag_token).collect();
        let mut counts = [0usize; 2];
        let mut step = 0;
        while counts.iter().sum::<usize>() < 100_000 {
            let b = make_shuffled_batch(&refs, 1024, &mut step_rng(11, step, Stream::Batch)).unwrap();
            for (task, p) in b.tasks.iter().zip(&b.pairs) {
                counts[task.0 as usize] += 1;
                assert!(tags.contains(&p.source[0]));
            }
            step += 1;
        }
        let total = counts.iter().sum::<usize>() as f64;
        assert!((counts[0] as f64 / total - 0.5).abs() < 0.01, "{counts:?}");

        let single = make_shuffled_batch(&refs[..1], 300, &mut step_rng(1, 1, Stream::Batch)).unwrap();
        assert!(single.tasks.iter().all(|t| *t == fam.tasks[0].spec.id));
    }

    #[test]
    fn corpus_round_trip_and_errors() {
        let fam = generate_task_family(9, &[pair(30, 10, 0.5)], &small_opts()).unwrap();
        let text = format_corpus(&fam.tasks[0].train);
        let parsed = parse_corpus(&text, fam.vocab.size()).unwrap();
        assert_eq!(parsed, fam.tasks[0].train);
        assert_eq!(format_corpus(&parsed), text);

        let e = parse_corpus("3 4\t5\n3 x\t5\n", 64).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        assert!(matches!(parse_corpus("3 4 5\n", 64), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_corpus("3 99\t5\n", 64), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn family_export_import() {
        let fam = generate_task_family(9, &[pair(30, 10, 0.5)], &small_opts()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_family(&fam, dir.path()).unwrap();
        assert_eq!(import_family(dir.path()).unwrap(), fam);
    }

    proptest! {
        #[test]
        fn overlap_tracks_relatedness(r in 0.0f64..=1.0, seed in 0u64..1000) {
            let fam = generate_task_family(seed, &[pair(5, 5, r)], &FamilyOptions {
                dev_size: 1, test_size: 1, ..FamilyOptions::default()
            }).unwrap();
            let overlap = fam.tasks[0].transform.rule_overlap(&fam.tasks[1].transform);
            let k = fam.vocab.alphabet as f64;
            prop_assert!((overlap - r).abs() <= 1.0 / k + 1e-12, "r={} overlap={}", r, overlap);
        }
    }
}
