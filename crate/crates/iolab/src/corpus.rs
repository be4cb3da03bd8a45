//! Vocabulary construction, parallel-corpus ingestion, and synthetic task
//! generation.
//!
//! Token ids are dense `usize`s: five reserved specials occupy ids `0..5` in a
//! fixed order and content tokens follow. Every sequence that crosses a module
//! boundary in this crate is a `Vec<TokenId>` produced against one
//! [`Vocabulary`].

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type TokenId = usize;

/// Padding id; never occurs in data, masked out of model softmaxes.
pub const PAD: TokenId = 0;
/// Unknown-token id; out-of-vocabulary tokens encode to this.
pub const UNK: TokenId = 1;
/// Decoder start-of-sequence marker.
pub const START: TokenId = 2;
/// Decoder end-of-sequence marker.
pub const END: TokenId = 3;
/// End-of-slot action content; empty slots target it and decoding stops on it.
pub const EOS: TokenId = 4;
/// Number of reserved special ids.
pub const NUM_SPECIALS: usize = 5;

const SPECIAL_STRS: [&str; NUM_SPECIALS] = ["<pad>", "<unk>", "<s>", "</s>", "<eos>"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("line count mismatch: {src_lines} source lines vs {tgt_lines} target lines")]
    LineCountMismatch { src_lines: usize, tgt_lines: usize },
    #[error("{path}:{line}: empty line")]
    EmptyLine { path: String, line: usize },
    #[error("{path}:{line}: malformed vocabulary entry (want `token<TAB>frequency`)")]
    BadVocabLine { path: String, line: usize },
    #[error("invalid synthetic task spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token table with frequencies. Content ids are assigned after the specials;
/// [`build_vocabulary`] orders them by descending corpus frequency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Assembles a vocabulary from content tokens and their frequencies,
    /// in content-id order (specials are added implicitly).
    pub fn from_parts(content: Vec<(String, u64)>) -> Self {
        let mut tokens: Vec<String> = SPECIAL_STRS.iter().map(|s| s.to_string()).collect();
        let mut freqs = vec![0u64; NUM_SPECIALS];
        for (tok, freq) in content {
            tokens.push(tok);
            freqs.push(freq);
        }
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, freqs, ids }
    }

    /// Total size including the five specials.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn content_len(&self) -> usize {
        self.tokens.len() - NUM_SPECIALS
    }

    /// Panics if `id` is out of range.
    pub fn token_str(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    /// Corpus frequency of a token id; specials report 0.
    pub fn frequency(&self, id: TokenId) -> u64 {
        self.freqs[id]
    }

    /// Maps tokens to ids, sending out-of-vocabulary tokens to [`UNK`].
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens
            .iter()
            .map(|t| self.id_of(t.as_ref()).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<&str> {
        ids.iter().map(|&id| self.token_str(id)).collect()
    }

    /// Space-joined token strings, the on-disk sentence form.
    pub fn render(&self, ids: &[TokenId]) -> String {
        self.decode(ids).join(" ")
    }

    /// Writes content entries as `token<TAB>frequency`, one per line, in id
    /// order. Specials are omitted and re-added on load.
    pub fn write_tsv(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for id in NUM_SPECIALS..self.tokens.len() {
            out.push_str(&self.tokens[id]);
            out.push('\t');
            out.push_str(&self.freqs[id].to_string());
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)?;
        let mut content = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = || CorpusError::BadVocabLine {
                path: path.display().to_string(),
                line: i + 1,
            };
            let (tok, freq) = line.split_once('\t').ok_or_else(bad)?;
            if tok.is_empty() {
                return Err(bad());
            }
            let freq: u64 = freq.trim().parse().map_err(|_| bad())?;
            content.push((tok.to_string(), freq));
        }
        Ok(Vocabulary::from_parts(content))
    }
}

/// Counts a token stream and keeps the `max_size` most frequent content
/// tokens, ties broken by first occurrence. Specials never compete for slots.
pub fn build_vocabulary<I, S>(tokens: I, max_size: usize) -> Result<Vocabulary, CorpusError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if max_size == 0 {
        return Err(CorpusError::InvalidSpec("max vocabulary size must be >= 1".into()));
    }
    let mut counts: HashMap<String, (u64, usize)> = HashMap::new();
    let mut n_seen = 0usize;
    for tok in tokens {
        let tok = tok.as_ref();
        let next_rank = counts.len();
        let entry = counts.entry(tok.to_string()).or_insert((0, next_rank));
        entry.0 += 1;
        n_seen += 1;
    }
    if n_seen == 0 {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut entries: Vec<(String, u64, usize)> =
        counts.into_iter().map(|(t, (f, first))| (t, f, first)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    entries.truncate(max_size);
    Ok(Vocabulary::from_parts(
        entries.into_iter().map(|(t, f, _)| (t, f)).collect(),
    ))
}

/// One aligned sentence pair, already encoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelExample {
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Copy,
    Reverse,
    Sort,
    LexiconTranslate,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Reverse => "reverse",
            TaskKind::Sort => "sort",
            TaskKind::LexiconTranslate => "lexicon-translate",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "reverse" => Ok(TaskKind::Reverse),
            "sort" => Ok(TaskKind::Sort),
            "lexicon-translate" => Ok(TaskKind::LexiconTranslate),
            other => Err(format!(
                "unknown task `{other}`; valid tasks: copy, reverse, sort, lexicon-translate"
            )),
        }
    }
}

/// Parameters of a synthetic sequence task over `vocab_size` content tokens
/// named `w00`, `w01`, ... (zero-padded, so lexical order equals id order).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticTaskSpec {
    pub kind: TaskKind,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    fn validate(&self) -> Result<(), CorpusError> {
        if self.vocab_size == 0 {
            return Err(CorpusError::InvalidSpec("vocab_size must be >= 1".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(CorpusError::InvalidSpec(format!(
                "need 1 <= min_len <= max_len, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }

    fn token_name(&self, idx: usize) -> String {
        let width = (self.vocab_size.max(2) - 1).to_string().len().max(2);
        format!("w{idx:0width$}")
    }

    /// The source-to-target token substitution used by
    /// [`TaskKind::LexiconTranslate`]: a Fisher-Yates shuffle of `0..vocab_size`
    /// driven by stream 1 of `ChaCha8Rng::seed_from_u64(seed)`, swapping
    /// position `i` with `gen_range(0..=i)` for `i` from the top down.
    pub fn lexicon(&self) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let mut perm: Vec<usize> = (0..self.vocab_size).collect();
        for i in (1..perm.len()).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        perm
    }
}

/// Draws `n` examples. Sources are uniform random token sequences with
/// lengths uniform in `min_len..=max_len`; targets follow the task kind.
/// Fully determined by `spec` (examples use stream 0 of the seeded rng).
pub fn generate_synthetic(
    spec: &SyntheticTaskSpec,
    n: usize,
) -> Result<Vec<ParallelExample>, CorpusError> {
    spec.validate()?;
    if n == 0 {
        return Err(CorpusError::InvalidSpec("need n >= 1 examples".into()));
    }
    let lexicon = match spec.kind {
        TaskKind::LexiconTranslate => Some(spec.lexicon()),
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let source: Vec<TokenId> = (0..len)
            .map(|_| NUM_SPECIALS + rng.gen_range(0..spec.vocab_size))
            .collect();
        let target = match spec.kind {
            TaskKind::Copy => source.clone(),
            TaskKind::Reverse => source.iter().rev().copied().collect(),
            TaskKind::Sort => {
                let mut t = source.clone();
                t.sort_unstable();
                t
            }
            TaskKind::LexiconTranslate => {
                let lex = lexicon.as_ref().unwrap();
                source.iter().map(|&id| NUM_SPECIALS + lex[id - NUM_SPECIALS]).collect()
            }
        };
        out.push(ParallelExample { source, target });
    }
    Ok(out)
}

/// Vocabulary for a synthetic task: all `vocab_size` tokens in name order
/// (id order equals lexical order), frequencies counted on the target side of
/// `examples`.
pub fn synthetic_vocabulary(spec: &SyntheticTaskSpec, examples: &[ParallelExample]) -> Vocabulary {
    let mut freqs = vec![0u64; spec.vocab_size];
    for ex in examples {
        for &id in &ex.target {
            freqs[id - NUM_SPECIALS] += 1;
        }
    }
    Vocabulary::from_parts(
        (0..spec.vocab_size)
            .map(|i| (spec.token_name(i), freqs[i]))
            .collect(),
    )
}

/// Reads a line-aligned parallel corpus of whitespace-tokenized UTF-8 text
/// and encodes it; unknown tokens map to [`UNK`].
pub fn load_parallel(
    src_path: &Path,
    tgt_path: &Path,
    vocab: &Vocabulary,
) -> Result<Vec<ParallelExample>, CorpusError> {
    let src_lines = read_nonempty_lines(src_path)?;
    let tgt_lines = read_nonempty_lines(tgt_path)?;
    if src_lines.len() != tgt_lines.len() {
        return Err(CorpusError::LineCountMismatch {
            src_lines: src_lines.len(),
            tgt_lines: tgt_lines.len(),
        });
    }
    if src_lines.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(src_lines
        .iter()
        .zip(&tgt_lines)
        .map(|(s, t)| ParallelExample {
            source: vocab.encode(&s.split_whitespace().collect::<Vec<_>>()),
            target: vocab.encode(&t.split_whitespace().collect::<Vec<_>>()),
        })
        .collect())
}

/// Reads one side of a corpus: whitespace-tokenized lines encoded under
/// `vocab` (unknown tokens map to `<unk>`).
pub fn load_sentences(path: &Path, vocab: &Vocabulary) -> Result<Vec<Vec<TokenId>>, CorpusError> {
    let lines = read_nonempty_lines(path)?;
    if lines.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(lines
        .iter()
        .map(|l| vocab.encode(&l.split_whitespace().collect::<Vec<_>>()))
        .collect())
}

fn read_nonempty_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path)?;
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.split_whitespace().next().is_none() {
            return Err(CorpusError::EmptyLine {
                path: path.display().to_string(),
                line: i + 1,
            });
        }
        lines.push(line.to_string());
    }
    Ok(lines)
}

/// Writes both sides of a corpus as whitespace-joined token text.
pub fn write_parallel(
    examples: &[ParallelExample],
    vocab: &Vocabulary,
    src_path: &Path,
    tgt_path: &Path,
) -> Result<(), CorpusError> {
    let mut src = String::new();
    let mut tgt = String::new();
    for ex in examples {
        src.push_str(&vocab.render(&ex.source));
        src.push('\n');
        tgt.push_str(&vocab.render(&ex.target));
        tgt.push('\n');
    }
    fs::write(src_path, src)?;
    fs::write(tgt_path, tgt)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    #[test]
    fn specials_have_fixed_ids_and_strings() {
        let v = Vocabulary::from_parts(vec![("a".into(), 1)]);
        assert_eq!((PAD, UNK, START, END, EOS), (0, 1, 2, 3, 4));
        assert_eq!(v.token_str(PAD), "<pad>");
        assert_eq!(v.token_str(UNK), "<unk>");
        assert_eq!(v.token_str(START), "<s>");
        assert_eq!(v.token_str(END), "</s>");
        assert_eq!(v.token_str(EOS), "<eos>");
        assert_eq!(v.id_of("a"), Some(5));
        assert_eq!(v.size(), 6);
    }

    #[test]
    fn build_sorts_by_descending_frequency() {
        let stream = "b a c a b a".split_whitespace();
        let v = build_vocabulary(stream, 100).unwrap();
        assert_eq!(v.id_of("a"), Some(5));
        assert_eq!(v.id_of("b"), Some(6));
        assert_eq!(v.id_of("c"), Some(7));
        assert_eq!(v.frequency(5), 3);
        assert_eq!(v.frequency(6), 2);
        assert_eq!(v.frequency(7), 1);
    }

    #[test]
    fn build_breaks_frequency_ties_by_first_occurrence() {
        let stream = "y x x y z m m m m m".split_whitespace();
        let v = build_vocabulary(stream, 100).unwrap();
        assert_eq!(v.id_of("m"), Some(5));
        assert_eq!(v.id_of("y"), Some(6), "y appears before x in the stream");
        assert_eq!(v.id_of("x"), Some(7));
        assert_eq!(v.id_of("z"), Some(8));
    }

    #[test]
    fn build_caps_at_max_size_keeping_most_frequent() {
        let stream = "m m m m m n n n o o o".split_whitespace();
        let v = build_vocabulary(stream, 2).unwrap();
        assert_eq!(v.content_len(), 2);
        assert_eq!(v.id_of("m"), Some(5));
        assert_eq!(v.id_of("n"), Some(6), "n ties o at 3 but occurs first");
        assert_eq!(v.id_of("o"), None);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let toks: Vec<&str> = vec![];
        assert!(matches!(
            build_vocabulary(toks, 10),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    #[test]
    fn encode_maps_oov_to_unk() {
        let v = build_vocabulary("a b".split_whitespace(), 10).unwrap();
        assert_eq!(v.encode(&["a", "zzz", "b"]), vec![5, UNK, 6]);
    }

    #[test]
    fn tsv_round_trip_rebuilds_identical_vocabulary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        let v = build_vocabulary("a b a c a b".split_whitespace(), 100).unwrap();
        v.write_tsv(&path).unwrap();
        let back = Vocabulary::read_tsv(&path).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn tsv_rejects_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        std::fs::write(&path, "a\t3\nnotab\n").unwrap();
        match Vocabulary::read_tsv(&path) {
            Err(CorpusError::BadVocabLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected BadVocabLine, got {other:?}"),
        }
    }

    fn sort_spec() -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            kind: TaskKind::Sort,
            vocab_size: 50,
            min_len: 3,
            max_len: 10,
            seed: 7,
        }
    }

    #[test]
    fn sort_targets_are_sorted_permutations_of_sources() {
        let examples = generate_synthetic(&sort_spec(), 1000).unwrap();
        for ex in &examples {
            assert!(ex.source.len() >= 3 && ex.source.len() <= 10);
            assert!(ex.source.iter().all(|&t| (5..55).contains(&t)));
            let mut sorted = ex.source.clone();
            sorted.sort_unstable();
            assert_eq!(ex.target, sorted);
        }
    }

    #[test]
    fn copy_and_reverse_targets_match_sources() {
        let mut spec = sort_spec();
        spec.kind = TaskKind::Copy;
        for ex in generate_synthetic(&spec, 100).unwrap() {
            assert_eq!(ex.target, ex.source);
        }
        spec.kind = TaskKind::Reverse;
        for ex in generate_synthetic(&spec, 100).unwrap() {
            let rev: Vec<_> = ex.source.iter().rev().copied().collect();
            assert_eq!(ex.target, rev);
        }
    }

    #[test]
    fn lexicon_translate_applies_one_fixed_bijection() {
        let mut spec = sort_spec();
        spec.kind = TaskKind::LexiconTranslate;
        let lex = spec.lexicon();
        let mut seen = lex.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..50).collect::<Vec<_>>(), "lexicon is a permutation");
        for ex in generate_synthetic(&spec, 200).unwrap() {
            for (&s, &t) in ex.source.iter().zip(&ex.target) {
                assert_eq!(t, NUM_SPECIALS + lex[s - NUM_SPECIALS]);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let a = generate_synthetic(&sort_spec(), 500).unwrap();
        let b = generate_synthetic(&sort_spec(), 500).unwrap();
        assert_eq!(a, b);
        let mut other = sort_spec();
        other.seed = 8;
        assert_ne!(generate_synthetic(&other, 500).unwrap(), a);
    }

    #[test]
    fn synthetic_vocabulary_counts_match_a_recount() {
        let spec = sort_spec();
        let examples = generate_synthetic(&spec, 1000).unwrap();
        let v = synthetic_vocabulary(&spec, &examples);
        assert_eq!(v.size(), 55);
        assert_eq!(v.id_of("w00"), Some(5));
        assert_eq!(v.id_of("w49"), Some(54));
        let mut recount: HashMap<TokenId, u64> = HashMap::new();
        for ex in &examples {
            for &t in &ex.target {
                *recount.entry(t).or_default() += 1;
            }
        }
        for id in 5..55 {
            assert_eq!(v.frequency(id), recount.get(&id).copied().unwrap_or(0));
        }
    }

    #[test]
    fn load_parallel_round_trips_written_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let spec = sort_spec();
        let examples = generate_synthetic(&spec, 50).unwrap();
        let v = synthetic_vocabulary(&spec, &examples);
        let (src, tgt) = (dir.path().join("x.src"), dir.path().join("x.tgt"));
        write_parallel(&examples, &v, &src, &tgt).unwrap();
        let back = load_parallel(&src, &tgt, &v).unwrap();
        assert_eq!(back, examples);
        let srcs = load_sentences(&src, &v).unwrap();
        assert_eq!(srcs, examples.iter().map(|e| e.source.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn load_parallel_rejects_line_count_mismatch_and_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let v = build_vocabulary("a b".split_whitespace(), 10).unwrap();
        let (src, tgt) = (dir.path().join("m.src"), dir.path().join("m.tgt"));
        std::fs::write(&src, "a b\nb\n").unwrap();
        std::fs::write(&tgt, "a\n").unwrap();
        assert!(matches!(
            load_parallel(&src, &tgt, &v),
            Err(CorpusError::LineCountMismatch { src_lines: 2, tgt_lines: 1 })
        ));
        std::fs::write(&tgt, "a\n\n").unwrap();
        match load_parallel(&src, &tgt, &v) {
            Err(CorpusError::EmptyLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected EmptyLine, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn decode_then_encode_round_trips(ids in proptest::collection::vec(5usize..55, 0..20)) {
            let spec = sort_spec();
            let v = synthetic_vocabulary(&spec, &[]);
            let strs = v.decode(&ids);
            prop_assert_eq!(v.encode(&strs), ids);
        }

        #[test]
        fn lengths_cover_the_configured_range(seed in 0u64..500) {
            let spec = SyntheticTaskSpec { seed, ..sort_spec() };
            let examples = generate_synthetic(&spec, 64).unwrap();
            prop_assert!(examples.iter().all(|e| (3..=10).contains(&e.source.len())));
        }
    }
}
