//! Pre-trained word vectors in the GloVe / word2vec text format.
//!
//! Each line holds a word followed by its components, separated by
//! whitespace. An optional word2vec header line `<count> <dim>` is detected
//! and skipped.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Word to dense vector map with a fixed dimensionality.
///
/// Vectors are stored contiguously in insertion order. The table is never
/// mutated after loading in the pipeline, so shared references can be read
/// from any number of threads.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    duplicates: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            duplicates: 0,
        })
    }

    /// Inserts `word` unless it is already present. Returns `false` for a
    /// duplicate, which is counted and otherwise ignored (first one wins).
    pub fn insert(&mut self, word: impl Into<String>, vector: &[f64]) -> Result<bool> {
        let word = word.into();
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for {word:?} has length {}, table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if let Some(bad) = vector.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite component {bad} in vector for {word:?}"
            )));
        }
        if self.index.contains_key(&word) {
            self.duplicates += 1;
            return Ok(false);
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.data.extend_from_slice(vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Number of duplicate words dropped while loading.
    pub fn duplicates_skipped(&self) -> usize {
        self.duplicates
    }

    /// Exact-match lookup. No case folding happens here.
    pub fn lookup(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.row(i))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> + '_ {
        self.words
            .iter()
            .enumerate()
            .map(move |(i, w)| (w.as_str(), self.row(i)))
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn load(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file), path, expected_dim)
    }

    /// Parses the text format from `reader`; `origin` is only used in error
    /// messages.
    pub fn read<R: BufRead>(reader: R, origin: &Path, expected_dim: Option<usize>) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = None;
        let mut components = Vec::new();

        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::io(origin, e))?;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else {
                continue;
            };

            components.clear();
            for field in fields {
                let x: f64 = field
                    .parse()
                    .map_err(|_| Error::parse(origin, lineno, format!("non-numeric component {field:?}")))?;
                if !x.is_finite() {
                    return Err(Error::parse(origin, lineno, format!("non-finite component {field:?}")));
                }
                components.push(x);
            }

            if table.is_none() && idx == 0 && is_word2vec_header(&line) {
                continue;
            }

            let table = match &mut table {
                Some(t) => t,
                None => {
                    let dim = components.len();
                    if dim == 0 {
                        return Err(Error::parse(origin, lineno, "line has no vector components"));
                    }
                    if let Some(expected) = expected_dim {
                        if expected != dim {
                            return Err(Error::parse(
                                origin,
                                lineno,
                                format!("expected dimension {expected}, found {dim}"),
                            ));
                        }
                    }
                    table.insert(EmbeddingTable::new(dim)?)
                }
            };
            if components.len() != table.dim {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("dimension mismatch: expected {}, found {}", table.dim, components.len()),
                ));
            }
            table.insert(word, &components)?;
        }

        let table = table.ok_or_else(|| Error::Format(format!("{}: no embeddings found", origin.display())))?;
        if table.duplicates > 0 {
            log::warn!(
                "{}: skipped {} duplicate word(s), first occurrence kept",
                origin.display(),
                table.duplicates
            );
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_embeddings_file(path, self.dim, self.iter())
    }
}

fn is_word2vec_header(line: &str) -> bool {
    let fields: Vec<&str> = line.split_whitespace().collect();
    fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok())
}

/// Rounds to 9 significant digits and prints the shortest decimal that
/// parses back to the rounded value, so `0.418` stays `0.418`. Very small
/// or large magnitudes use exponent notation.
pub fn format_component(x: f64) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("scientific notation parses");
    if (1e-5..1e16).contains(&rounded.abs()) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

/// Writes vectors in the text format; see [`format_component`].
pub fn write_embeddings<'a, W, I>(mut out: W, dim: usize, entries: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    for (word, vector) in entries {
        debug_assert_eq!(vector.len(), dim);
        out.write_all(word.as_bytes())?;
        for &x in vector {
            write!(out, " {}", format_component(x))?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_embeddings_file<'a, I>(path: impl AsRef<Path>, dim: usize, entries: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_embeddings(BufWriter::new(file), dim, entries).map_err(|e| Error::io(path, e))
}
