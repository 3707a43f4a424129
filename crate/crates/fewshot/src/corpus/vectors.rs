use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{CorpusError, Result};

/// Pretrained word vectors with a zero-vector out-of-vocabulary policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
    zero: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize) -> Self {
        EmbeddingTable {
            dimension,
            vectors: HashMap::new(),
            zero: vec![0.0; dimension],
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let word = word.into();
        if vector.len() != self.dimension {
            return Err(CorpusError::WordVectorLength {
                file: "<insert>".into(),
                line: 0,
                expected: self.dimension,
                got: vector.len(),
            });
        }
        self.vectors.entry(word).or_insert(vector);
        Ok(())
    }

    /// Vector for `word`; absent words map to the zero vector.
    pub fn lookup(&self, word: &str) -> &[f64] {
        self.vectors.get(word).map_or(&self.zero, Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }
}

/// Loads a plain-text table, one `word v1 … vD` line each, inferring the
/// dimension from the first line and rejecting any line that disagrees.
/// Duplicate words keep their first occurrence.
pub fn load_word_vectors(path: &Path) -> Result<EmbeddingTable> {
    let content = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut table: Option<EmbeddingTable> = None;
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().ok_or_else(|| CorpusError::Malformed {
            file: path.display().to_string(),
            line: i + 1,
            message: "empty line".into(),
        })?;
        let values: std::result::Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| CorpusError::Malformed {
            file: path.display().to_string(),
            line: i + 1,
            message: format!("bad number: {e}"),
        })?;
        let table = table.get_or_insert_with(|| EmbeddingTable::new(values.len()));
        if values.len() != table.dimension {
            return Err(CorpusError::WordVectorLength {
                file: path.display().to_string(),
                line: i + 1,
                expected: table.dimension,
                got: values.len(),
            });
        }
        table.vectors.entry(word.to_string()).or_insert(values);
    }
    table.ok_or_else(|| CorpusError::Malformed {
        file: path.display().to_string(),
        line: 0,
        message: "empty word-vector file".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn single_line_load_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        let values: Vec<String> = (0..100).map(|i| format!("{}", 0.1 * i as f64)).collect();
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "the {}", values.join(" ")).unwrap();
        let table = load_word_vectors(&path).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table.dimension(), 100);
        assert_eq!(table.lookup("the")[1], 0.1);
    }

    #[test]
    fn oov_lookup_returns_zero_vector() {
        let table = EmbeddingTable::new(100);
        let v = table.lookup("absent");
        assert_eq!(v.len(), 100);
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn duplicates_keep_first_and_count_unique() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        fs::write(&path, "a 1.0 2.0\na 3.0 4.0\nb 5.0 6.0\n").unwrap();
        let table = load_word_vectors(&path).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table.lookup("a"), &[1.0, 2.0]);
    }

    #[test]
    fn wrong_length_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        fs::write(&path, "a 1.0 2.0\nb 3.0\n").unwrap();
        let err = load_word_vectors(&path).unwrap_err().to_string();
        assert!(err.contains(":2"), "{err}");
    }
}
