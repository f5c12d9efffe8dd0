//! Tokenization, vocabularies, χ²-selected location indicative words (LIWs)
//! and word-embedding tables.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::UserRecord;

pub const URL_TOKEN: &str = "<url>";
pub const MENTION_TOKEN: &str = "<mention>";
pub const NUM_TOKEN: &str = "<num>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

pub const DEFAULT_TOP_K: usize = 1000;
pub const DEFAULT_MIN_FREQ: usize = 5;

/// Lowercased word tokens with URL, mention and number placeholders.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let lower = raw.to_lowercase();
        if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.") {
            out.push(URL_TOKEN.to_string());
            continue;
        }
        if lower.len() > 1 && lower.starts_with('@') {
            out.push(MENTION_TOKEN.to_string());
            continue;
        }
        for piece in lower.split(|c: char| !c.is_alphanumeric()) {
            if piece.is_empty() {
                continue;
            }
            if piece.chars().all(|c| c.is_ascii_digit()) {
                out.push(NUM_TOKEN.to_string());
            } else {
                out.push(piece.to_string());
            }
        }
    }
    out
}

/// All of a user's tweets tokenized in timestamp order.
pub fn user_tokens(u: &UserRecord) -> Vec<String> {
    u.tweets.iter().flat_map(|t| tokenize(&t.text)).collect()
}

fn is_placeholder(tok: &str) -> bool {
    tok.starts_with('<') && tok.ends_with('>')
}

/// Token ↔ id map; id 0 is padding, id 1 is unknown, the rest are ordered
/// by document frequency (descending) then token.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    doc_freq: Vec<usize>,
    min_freq: usize,
}

impl Vocabulary {
    /// Keeps tokens appearing in at least `min_freq` documents.
    pub fn build<'a, I>(docs: I, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            let distinct: BTreeSet<&str> = doc.iter().map(String::as_str).collect();
            for t in distinct {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = df.into_iter().filter(|&(_, f)| f >= min_freq.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        let mut doc_freq = vec![0, 0];
        for (t, f) in kept {
            tokens.push(t.to_string());
            doc_freq.push(f);
        }
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            tokens,
            ids,
            doc_freq,
            min_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn doc_freq(&self, id: usize) -> usize {
        self.doc_freq[id]
    }

    /// `token<TAB>doc_freq` per id, padding and unknown included.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# min_freq={}", self.min_freq)?;
        for (t, f) in self.tokens.iter().zip(&self.doc_freq) {
            writeln!(w, "{t}\t{f}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut doc_freq = Vec::new();
        let mut min_freq = DEFAULT_MIN_FREQ;
        for line in r.lines() {
            let line = line.map_err(|e| Error::io("<vocabulary>", e))?;
            if let Some(v) = line.strip_prefix("# min_freq=") {
                min_freq = v.trim().parse().map_err(|_| Error::Parse(format!("vocabulary header `{line}`")))?;
                continue;
            }
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let (t, f) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("vocabulary line `{line}`")))?;
            tokens.push(t.to_string());
            doc_freq.push(f.parse().map_err(|_| Error::Parse(format!("vocabulary line `{line}`")))?);
        }
        if tokens.len() < 2 || tokens[PAD_ID] != "<pad>" || tokens[UNK_ID] != "<unk>" {
            return Err(Error::Parse("vocabulary must start with <pad> and <unk>".into()));
        }
        let ids: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if ids.len() != tokens.len() {
            return Err(Error::Parse("duplicate vocabulary token".into()));
        }
        Ok(Vocabulary {
            tokens,
            ids,
            doc_freq,
            min_freq,
        })
    }

    /// Ids of the first `max_len` tokens.
    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        tokens.iter().take(max_len).map(|t| self.id(t)).collect()
    }
}

/// χ² of a binary presence feature against the labels: the 2 × L table
/// has the per-label presence counts in one row and absence counts in the
/// other. Zero when the token is in every user or in none.
pub fn chi2_statistic(present: &[usize], class_sizes: &[usize]) -> f64 {
    let n: usize = class_sizes.iter().sum();
    let r1: usize = present.iter().sum();
    if n == 0 || r1 == 0 || r1 == n {
        return 0.0;
    }
    let r0 = n - r1;
    let mut chi2 = 0.0;
    for (&a, &nl) in present.iter().zip(class_sizes) {
        if nl == 0 {
            continue;
        }
        let e1 = r1 as f64 * nl as f64 / n as f64;
        let e0 = r0 as f64 * nl as f64 / n as f64;
        chi2 += (a as f64 - e1).powi(2) / e1;
        chi2 += ((nl - a) as f64 - e0).powi(2) / e0;
    }
    chi2
}

/// Selected LIWs with their χ² and per-label log-scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LiwTable {
    n_labels: usize,
    tokens: Vec<String>,
    chi2: Vec<f64>,
    /// `scores[t][l] = ln((count(t, l) + 1) / (count(t) + L))`.
    scores: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
    prior: Vec<f64>,
}

impl LiwTable {
    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn chi2(&self) -> &[f64] {
        &self.chi2
    }

    pub fn scores(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.scores[i].as_slice())
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    /// CSV `token,chi2,score_0,…,score_{L-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "token,chi2")?;
        for l in 0..self.n_labels {
            write!(w, ",score_{l}")?;
        }
        writeln!(w)?;
        for (i, t) in self.tokens.iter().enumerate() {
            write!(w, "{t},{}", self.chi2[i])?;
            for s in &self.scores[i] {
                write!(w, ",{s}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Ranks candidate tokens (placeholders excluded, user document frequency
/// ≥ `min_freq`) by χ² over user-level presence and keeps the top `top_k`.
pub fn chi2_liw(docs: &[Vec<String>], labels: &[usize], n_labels: usize, top_k: usize, min_freq: usize) -> Result<LiwTable> {
    if n_labels < 2 {
        return Err(Error::Labels(format!("LIW selection needs at least 2 labels, got {n_labels}")));
    }
    if docs.len() != labels.len() {
        return Err(Error::shape("chi2_liw", format!("{} docs for {} labels", docs.len(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_labels) {
        return Err(Error::Labels(format!("label {bad} out of range for {n_labels} labels")));
    }
    let mut class_sizes = vec![0usize; n_labels];
    for &l in labels {
        class_sizes[l] += 1;
    }
    // integer counts merge the same way in any order
    let counts: HashMap<&str, Vec<usize>> = docs
        .par_iter()
        .zip(labels.par_iter())
        .fold(HashMap::new, |mut acc: HashMap<&str, Vec<usize>>, (doc, &l)| {
            let distinct: BTreeSet<&str> = doc.iter().map(String::as_str).filter(|t| !is_placeholder(t)).collect();
            for t in distinct {
                acc.entry(t).or_insert_with(|| vec![0; n_labels])[l] += 1;
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (t, c) in b {
                let slot = a.entry(t).or_insert_with(|| vec![0; n_labels]);
                for (x, y) in slot.iter_mut().zip(c) {
                    *x += y;
                }
            }
            a
        });
    let mut ranked: Vec<(&str, f64, Vec<usize>)> = counts
        .into_iter()
        .filter(|(_, c)| c.iter().sum::<usize>() >= min_freq.max(1))
        .map(|(t, c)| (t, chi2_statistic(&c, &class_sizes), c))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(top_k);

    let n = labels.len() as f64;
    let mut table = LiwTable {
        n_labels,
        tokens: Vec::with_capacity(ranked.len()),
        chi2: Vec::with_capacity(ranked.len()),
        scores: Vec::with_capacity(ranked.len()),
        index: HashMap::new(),
        prior: class_sizes.iter().map(|&c| c as f64 / n).collect(),
    };
    for (t, chi2, c) in ranked {
        let total: usize = c.iter().sum();
        let denom = (total + n_labels) as f64;
        table.index.insert(t.to_string(), table.tokens.len());
        table.tokens.push(t.to_string());
        table.chi2.push(chi2);
        table.scores.push(c.iter().map(|&a| ((a + 1) as f64 / denom).ln()).collect());
    }
    Ok(table)
}

/// Softmax of summed per-label log-scores over the distinct LIWs in
/// `tokens`; the training label prior when none occur.
pub fn liw_predict(tokens: &[String], table: &LiwTable) -> Vec<f64> {
    let distinct: BTreeSet<&str> = tokens.iter().map(String::as_str).collect();
    let mut logits = vec![0.0; table.n_labels];
    let mut hits = 0;
    for t in distinct {
        if let Some(s) = table.scores(t) {
            hits += 1;
            for (z, v) in logits.iter_mut().zip(s) {
                *z += v;
            }
        }
    }
    if hits == 0 {
        return table.prior.clone();
    }
    softmax(&logits)
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `[vocab × d]` embedding matrix; the padding row is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Array2<f64>,
    /// Vocabulary rows found in the pretrained file.
    pub found: usize,
}

impl EmbeddingTable {
    /// Uniform in `[−1, 1]`, on the scale of the positional encoding, with
    /// a zero padding row.
    pub fn random(vocab_len: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut matrix = Array2::from_shape_fn((vocab_len, d), |_| rng.random_range(-1.0..=1.0));
        matrix.row_mut(PAD_ID).fill(0.0);
        EmbeddingTable { matrix, found: 0 }
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Reads whitespace-separated `word v1 … v_d` lines (GloVe text format);
/// `d` comes from the first line. Out-of-vocabulary rows get the random
/// initialization of [`EmbeddingTable::random`].
pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(std::io::BufReader::new(file), vocab, seed)
}

pub fn read_embeddings<R: BufRead>(r: R, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingTable> {
    let mut d = None;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<embeddings>", e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("embedding line {}: {e}", lineno + 1)))?;
        let dim = *d.get_or_insert(values.len());
        if values.len() != dim || dim == 0 {
            return Err(Error::Parse(format!(
                "embedding line {} has dimension {}, expected {dim}",
                lineno + 1,
                values.len()
            )));
        }
        let id = vocab.id(word);
        if id != UNK_ID && id != PAD_ID {
            rows.push((id, values));
        }
    }
    let d = d.ok_or_else(|| Error::Parse("empty embedding file".into()))?;
    let mut table = EmbeddingTable::random(vocab.len(), d, seed);
    let mut seen = BTreeSet::new();
    for (id, v) in rows {
        if seen.insert(id) {
            table.matrix.row_mut(id).assign(&ndarray::Array1::from(v));
        }
    }
    table.found = seen.len();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn tokenizer_rules() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Hola @juan http://x.co"), ["hola", "<mention>", "<url>"]);
        assert_eq!(tokenize("Viva #BuenosAires!"), ["viva", "buenosaires"]);
        assert_eq!(tokenize("Año 2023, ¡café!"), ["año", "<num>", "café"]);
        assert_eq!(tokenize("WWW.EXAMPLE.COM rocks"), ["<url>", "rocks"]);
    }

    #[test]
    fn vocabulary_reserves_pad_and_unk() {
        let docs = vec![toks(&["a", "b", "a"]), toks(&["a", "c"]), toks(&["b"])];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 2);
        assert_eq!(v.len(), 4);
        assert_eq!(v.token(PAD_ID), "<pad>");
        assert_eq!(v.token(UNK_ID), "<unk>");
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.doc_freq(2), 2);
        assert_eq!(v.id("c"), UNK_ID);
        assert_eq!(v.encode(&toks(&["b", "zzz", "a"]), 2), [3, UNK_ID]);
    }

    #[test]
    fn vocabulary_tsv_round_trip() {
        let docs = vec![toks(&["a", "b", "a"]), toks(&["a", "c"]), toks(&["b"])];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 1);
        let mut buf = Vec::new();
        v.write_tsv(&mut buf).unwrap();
        assert_eq!(Vocabulary::read_tsv(buf.as_slice()).unwrap(), v);
    }

    #[test]
    fn uniform_presence_has_zero_chi2() {
        assert_eq!(chi2_statistic(&[2, 2, 2], &[4, 4, 4]), 0.0);
        assert_eq!(chi2_statistic(&[0, 0], &[3, 5]), 0.0);
        assert_eq!(chi2_statistic(&[3, 5], &[3, 5]), 0.0);
    }

    #[test]
    fn perfect_separator_scores_n() {
        assert!((chi2_statistic(&[10, 0], &[10, 10]) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn top_one_picks_the_separating_token() {
        let mut docs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..6 {
            docs.push(toks(&["the", "beach", "sun"]));
            labels.push(0);
            docs.push(toks(if i % 2 == 0 { &["the", "snow"] } else { &["the", "sun"] }));
            labels.push(1);
        }
        let t = chi2_liw(&docs, &labels, 2, 1, 1).unwrap();
        assert_eq!(t.tokens(), ["beach"]);
    }

    #[test]
    fn placeholders_are_not_candidates() {
        let docs = vec![toks(&["<url>", "x"]), toks(&["y"])];
        let t = chi2_liw(&docs, &[0, 1], 2, 10, 1).unwrap();
        assert!(t.scores("<url>").is_none());
        assert!(t.scores("x").is_some());
    }

    #[test]
    fn single_label_is_rejected() {
        assert!(chi2_liw(&[toks(&["a"])], &[0], 1, 5, 1).is_err());
    }

    #[test]
    fn prediction_fallback_and_argmax() {
        let docs = vec![toks(&["beach"]), toks(&["beach"]), toks(&["snow"]), toks(&["x"])];
        let t = chi2_liw(&docs, &[0, 0, 1, 1], 2, 10, 1).unwrap();
        assert_eq!(liw_predict(&toks(&["nothing"]), &t), vec![0.5, 0.5]);
        let p = liw_predict(&toks(&["beach"]), &t);
        assert!(p[0] > p[1]);
    }

    #[test]
    fn prediction_matches_hand_computation() {
        // 3 users: "a b" → 0, "a" → 1, "c" → 1
        let docs = vec![toks(&["a", "b"]), toks(&["a"]), toks(&["c"])];
        let t = chi2_liw(&docs, &[0, 1, 1], 2, 10, 1).unwrap();
        // counts: a=[1,1], b=[1,0], c=[0,1]; scores ln((c+1)/(total+2))
        let sa = [(2.0f64 / 4.0).ln(), (2.0f64 / 4.0).ln()];
        let sb = [(2.0f64 / 3.0).ln(), (1.0f64 / 3.0).ln()];
        let z = [sa[0] + sb[0], sa[1] + sb[1]];
        let e = [z[0].exp(), z[1].exp()];
        let expected = [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])];
        let got = liw_predict(&toks(&["a", "b", "b"]), &t);
        for k in 0..2 {
            assert!((got[k] - expected[k]).abs() < 1e-15);
        }
        assert!((expected[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn embeddings_copy_rows_and_zero_padding() {
        let docs = vec![toks(&["hola", "mundo"])];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 1);
        let file = "hola 0.5 -1.0 2.0\nother 1 1 1\n";
        let t = read_embeddings(file.as_bytes(), &v, 0).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.found, 1);
        assert_eq!(t.matrix.row(v.id("hola")).to_vec(), vec![0.5, -1.0, 2.0]);
        assert!(t.matrix.row(PAD_ID).iter().all(|&x| x == 0.0));
        let oov = t.matrix.row(v.id("mundo"));
        assert!(oov.iter().all(|&x| x.abs() <= 1.0) && oov.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn mixed_embedding_dimensions_fail() {
        let v = Vocabulary::build(std::iter::empty::<&[String]>(), 1);
        let mut file = String::from("a");
        file.push_str(&" 0.1".repeat(50));
        file.push_str("\nb");
        file.push_str(&" 0.1".repeat(300));
        assert!(read_embeddings(file.as_bytes(), &v, 0).is_err());
    }

    proptest! {
        #[test]
        fn chi2_nonnegative_and_label_permutation_invariant(
            table in prop::collection::vec((0usize..6, 0usize..6), 2..5),
            rot in 0usize..4,
        ) {
            let sizes: Vec<usize> = table.iter().map(|&(a, b)| a.max(b)).collect();
            let present: Vec<usize> = table.iter().map(|&(a, b)| a.min(b)).collect();
            let x = chi2_statistic(&present, &sizes);
            prop_assert!(x >= 0.0);
            let mut s2 = sizes.clone();
            let mut p2 = present.clone();
            s2.rotate_left(rot % sizes.len());
            p2.rotate_left(rot % sizes.len());
            prop_assert!((chi2_statistic(&p2, &s2) - x).abs() < 1e-9);
        }

        #[test]
        fn prediction_is_a_distribution(
            docs in prop::collection::vec(prop::collection::vec(0u8..8, 0..6), 2..15),
            query in prop::collection::vec(0u8..10, 0..8),
        ) {
            let docs: Vec<Vec<String>> = docs.iter().map(|d| d.iter().map(|t| format!("w{t}")).collect()).collect();
            let labels: Vec<usize> = (0..docs.len()).map(|i| i % 3).collect();
            let t = chi2_liw(&docs, &labels, 3, 5, 1).unwrap();
            let q: Vec<String> = query.iter().map(|t| format!("w{t}")).collect();
            let p = liw_predict(&q, &t);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
