//! Grounded-language records and graph vocabulary selection.
//!
//! A record pairs a word with its encyclopedia summary and dictionary
//! definition. The token set of the concatenated text is what the graph
//! builder compares between nodes.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

pub const DEFAULT_SKIP_TOP: usize = 2000;
pub const DEFAULT_V_PRIME_SIZE: usize = 9000;

/// Tokenizer options. The default lowercases and drops digit-only tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    pub lowercase: bool,
    pub keep_digits: bool,
    pub stopwords: HashSet<String>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer {
            lowercase: true,
            keep_digits: false,
            stopwords: HashSet::new(),
        }
    }
}

impl Tokenizer {
    /// Splits on maximal runs of non-alphanumeric characters and returns the
    /// distinct surviving tokens in sorted order.
    pub fn tokenize(&self, text: &str) -> BTreeSet<String> {
        let folded;
        let text = if self.lowercase {
            folded = text.to_lowercase();
            folded.as_str()
        } else {
            text
        };
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|tok| !tok.is_empty())
            .filter(|tok| self.keep_digits || !tok.chars().all(|c| c.is_numeric()))
            .filter(|tok| !self.stopwords.contains(*tok))
            .map(str::to_owned)
            .collect()
    }

    /// Reads one stopword per line. Entries are run through the same case
    /// folding as the text they filter.
    pub fn load_stopwords(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for line in text.lines() {
            let w = line.trim();
            if w.is_empty() {
                continue;
            }
            let w = if self.lowercase { w.to_lowercase() } else { w.to_owned() };
            self.stopwords.insert(w);
        }
        Ok(())
    }
}

/// Tokenizes with the default options.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    Tokenizer::default().tokenize(text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundingRecord {
    pub word: String,
    pub summary: String,
    pub definition: String,
    /// Token set of `summary ++ " " ++ definition`.
    pub tokens: BTreeSet<String>,
}

impl GroundingRecord {
    pub fn new(
        word: impl Into<String>,
        summary: impl Into<String>,
        definition: impl Into<String>,
        tokenizer: &Tokenizer,
    ) -> Self {
        let summary = summary.into();
        let definition = definition.into();
        let tokens = tokenizer.tokenize(&format!("{summary} {definition}"));
        GroundingRecord {
            word: word.into(),
            summary,
            definition,
            tokens,
        }
    }
}

/// Records keyed by word.
#[derive(Debug, Clone, Default)]
pub struct GroundingCorpus {
    pub records: HashMap<String, GroundingRecord>,
    /// Number of records that replaced an earlier one for the same word.
    pub overwritten: usize,
}

impl GroundingCorpus {
    pub fn get(&self, word: &str) -> Option<&GroundingRecord> {
        self.records.get(word)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Adds a record, replacing any previous one for the same word.
    pub fn insert(&mut self, record: GroundingRecord) {
        if self.records.insert(record.word.clone(), record).is_some() {
            self.overwritten += 1;
        }
    }
}

/// Loads a `word<TAB>summary<TAB>definition` file.
pub fn load_grounding_corpus(path: impl AsRef<Path>, tokenizer: &Tokenizer) -> Result<GroundingCorpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_grounding_corpus(BufReader::new(file), path, tokenizer)
}

pub fn read_grounding_corpus<R: BufRead>(reader: R, origin: &Path, tokenizer: &Tokenizer) -> Result<GroundingCorpus> {
    let mut corpus = GroundingCorpus::default();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let word = fields[0].trim();
        if word.is_empty() {
            return Err(Error::parse(origin, lineno, "record has an empty word field"));
        }
        corpus.insert(GroundingRecord::new(word, fields[1], fields[2], tokenizer));
    }
    if corpus.overwritten > 0 {
        log::warn!(
            "{}: {} duplicate record(s), later entries kept",
            origin.display(),
            corpus.overwritten
        );
    }
    Ok(corpus)
}

/// Corpus word counts, most frequent first; equal counts in lexicographic
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrequencyList {
    ranked: Vec<(String, u64)>,
}

impl FrequencyList {
    /// Ranks `counts`. A repeated word keeps its first count.
    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut seen = HashSet::new();
        let mut ranked: Vec<(String, u64)> = counts.into_iter().filter(|(w, _)| seen.insert(w.clone())).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        FrequencyList { ranked }
    }

    pub fn ranked(&self) -> &[(String, u64)] {
        &self.ranked
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    /// Loads `word count` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut counts = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let count = fields
                .next()
                .and_then(|c| c.parse::<u64>().ok())
                .ok_or_else(|| Error::parse(path, idx + 1, "expected `word count`"))?;
            if fields.next().is_some() {
                return Err(Error::parse(path, idx + 1, "expected `word count`"));
            }
            counts.push((word.to_owned(), count));
        }
        Ok(Self::from_counts(counts))
    }
}

/// The skipped head of the frequency list and the selected anchor words V′.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabSelection {
    pub skipped: Vec<String>,
    pub selected: Vec<String>,
    pub skip_top: usize,
    pub v_prime_size: usize,
}

/// Skips the `skip_top` most frequent words, then takes up to
/// `v_prime_size` of the following words that have a pre-trained vector.
pub fn select_vocabulary(
    freq: &FrequencyList,
    skip_top: usize,
    v_prime_size: usize,
    table: &EmbeddingTable,
) -> Result<VocabSelection> {
    if v_prime_size == 0 {
        return Err(Error::InvalidArgument("v_prime_size must be at least 1".into()));
    }
    let skipped: Vec<String> = freq.ranked.iter().take(skip_top).map(|(w, _)| w.clone()).collect();
    let selected: Vec<String> = freq
        .ranked
        .iter()
        .skip(skip_top)
        .filter(|(w, _)| table.contains(w))
        .take(v_prime_size)
        .map(|(w, _)| w.clone())
        .collect();
    if selected.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no words with pre-trained vectors remain after skipping the top {skip_top}"
        )));
    }
    Ok(VocabSelection {
        skipped,
        selected,
        skip_top,
        v_prime_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("The withdrawal of the United Kingdom"),
            set(&["the", "withdrawal", "of", "united", "kingdom"])
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("23 June 2016"), set(&["june"]));
        assert_eq!(tokenize("operation_unthinkable"), set(&["operation", "unthinkable"]));
    }

    #[test]
    fn tokenizer_options() {
        let t = Tokenizer {
            lowercase: false,
            keep_digits: true,
            stopwords: HashSet::new(),
        };
        assert_eq!(t.tokenize("EU in 2016"), set(&["EU", "in", "2016"]));
        let mut t = Tokenizer::default();
        t.stopwords.insert("the".into());
        assert_eq!(t.tokenize("The cat"), set(&["cat"]));
    }

    #[test]
    fn brexit_record() {
        let corpus = read_grounding_corpus(
            "brexit\tBrexit, a portmanteau of \"British\" and \"exit\", is the impending withdrawal of the United Kingdom (UK) from the European Union (EU).\tThe withdrawal of the United Kingdom from the European Union.\n".as_bytes(),
            Path::new("<mem>"),
            &Tokenizer::default(),
        )
        .unwrap();
        let rec = corpus.get("brexit").unwrap();
        for tok in [
            "brexit",
            "portmanteau",
            "withdrawal",
            "united",
            "kingdom",
            "european",
            "union",
        ] {
            assert!(rec.tokens.contains(tok), "missing {tok}");
        }
    }

    #[test]
    fn empty_texts_give_empty_tokens() {
        let corpus = read_grounding_corpus("x\t\t\n".as_bytes(), Path::new("<mem>"), &Tokenizer::default()).unwrap();
        assert!(corpus.get("x").unwrap().tokens.is_empty());
    }

    #[test]
    fn later_duplicate_overwrites() {
        let corpus = read_grounding_corpus(
            "x\tfirst\t\nx\tsecond\t\n".as_bytes(),
            Path::new("<mem>"),
            &Tokenizer::default(),
        )
        .unwrap();
        assert_eq!(corpus.overwritten, 1);
        assert_eq!(corpus.get("x").unwrap().tokens, set(&["second"]));
    }

    #[test]
    fn malformed_lines() {
        let err = read_grounding_corpus(
            "a\tb\tc\nbad line\n".as_bytes(),
            Path::new("<mem>"),
            &Tokenizer::default(),
        );
        assert!(matches!(err, Err(Error::Parse { line: 2, .. })));
        let err = read_grounding_corpus("\tsummary\tdef\n".as_bytes(), Path::new("<mem>"), &Tokenizer::default());
        assert!(matches!(err, Err(Error::Parse { line: 1, .. })));
    }

    fn table(words: &[&str]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(1).unwrap();
        for w in words {
            t.insert(*w, &[1.0]).unwrap();
        }
        t
    }

    fn freq() -> FrequencyList {
        FrequencyList::from_counts(vec![
            ("the".to_string(), 100),
            ("of".to_string(), 90),
            ("cat".to_string(), 10),
            ("dog".to_string(), 9),
        ])
    }

    #[test]
    fn select_examples() {
        let sel = select_vocabulary(&freq(), 2, 2, &table(&["cat", "dog"])).unwrap();
        assert_eq!(sel.selected, vec!["cat", "dog"]);
        assert_eq!(sel.skipped, vec!["the", "of"]);

        let sel = select_vocabulary(&freq(), 2, 2, &table(&["dog"])).unwrap();
        assert_eq!(sel.selected, vec!["dog"]);

        let sel = select_vocabulary(&freq(), 0, 10, &table(&["the", "of", "cat", "dog"])).unwrap();
        assert_eq!(sel.selected.len(), 4);
    }

    #[test]
    fn select_requires_an_eligible_word() {
        assert!(select_vocabulary(&freq(), 2, 2, &table(&["the"])).is_err());
        assert!(select_vocabulary(&freq(), 0, 0, &table(&["the"])).is_err());
    }

    #[test]
    fn frequency_ties_are_lexicographic() {
        let f = FrequencyList::from_counts(vec![("b".to_string(), 5), ("a".to_string(), 5), ("c".to_string(), 7)]);
        let words: Vec<&str> = f.ranked().iter().map(|(w, _)| w.as_str()).collect();
        assert_eq!(words, vec!["c", "a", "b"]);
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(text in "[a-zA-Z0-9 ,.;'_\\-éÉßİ]{0,80}") {
            let once = tokenize(&text);
            let joined = once.iter().cloned().collect::<Vec<_>>().join(" ");
            prop_assert_eq!(tokenize(&joined), once);
        }

        #[test]
        fn tokens_ignore_summary_definition_split(text in "[a-z ]{0,60}", cut in 0usize..60) {
            let cut = cut.min(text.len());
            let (a, b) = text.split_at(cut);
            let t = Tokenizer::default();
            let joined = GroundingRecord::new("w", text.clone(), "", &t).tokens;
            let split = GroundingRecord::new("w", a, b, &t).tokens;
            // a split inside a word creates two tokens, so only compare when the
            // cut lands on whitespace
            if a.ends_with(' ') || b.starts_with(' ') || a.is_empty() || b.is_empty() {
                prop_assert_eq!(joined, split);
            }
        }
    }
}
