use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::corpus::Vocabulary;
use crate::error::{GlenError, Result};

/// Bound of the uniform init used for tokens without a pretrained vector.
pub const RANDOM_INIT_BOUND: f64 = 0.25;

/// Token vectors read from a whitespace-separated text file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainedVectors {
    dim: usize,
    order: Vec<String>,
    vectors: HashMap<String, Vec<f64>>,
}

impl PretrainedVectors {
    pub fn new(dim: usize) -> Self {
        PretrainedVectors {
            dim,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, token: String, vector: Vec<f64>) {
        assert_eq!(vector.len(), self.dim, "vector dimension");
        if self.vectors.insert(token.clone(), vector).is_none() {
            self.order.push(token);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn parse(text: &str, origin: &Path, dim: usize) -> Result<Self> {
        let mut out = PretrainedVectors::new(dim);
        for (i, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| GlenError::Parse {
                        path: origin.to_path_buf(),
                        line: i + 1,
                        message: format!("`{f}` is not a finite number"),
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(GlenError::EmbeddingDim {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    found: values.len(),
                    expected: dim,
                });
            }
            out.insert(token.to_string(), values);
        }
        Ok(out)
    }

    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GlenError::io(path, e))?;
        PretrainedVectors::parse(&text, path, dim)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for tok in &self.order {
            out.push_str(tok);
            for v in &self.vectors[tok] {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| GlenError::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| GlenError::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Pretrained,
    Random,
}

/// Initial token features, one row per vocabulary id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    matrix: Tensor,
    provenance: Vec<Provenance>,
}

impl EmbeddingTable {
    /// Copies pretrained rows; every other row (OOV included) is drawn
    /// uniformly from `[-0.25, 0.25]` in vocabulary-id order.
    pub fn build(vectors: &PretrainedVectors, vocab: &Vocabulary, seed: u64) -> Self {
        let dim = vectors.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(vocab.len() * dim);
        let mut provenance = Vec::with_capacity(vocab.len());
        for (id, tok) in vocab.tokens().iter().enumerate() {
            match vectors.get(tok).filter(|_| id != crate::corpus::OOV_ID) {
                Some(v) => {
                    values.extend_from_slice(v);
                    provenance.push(Provenance::Pretrained);
                }
                None => {
                    values.extend((0..dim).map(|_| rng.gen_range(-RANDOM_INIT_BOUND..=RANDOM_INIT_BOUND)));
                    provenance.push(Provenance::Random);
                }
            }
        }
        EmbeddingTable {
            matrix: Tensor::matrix(vocab.len(), dim, values).expect("rows x dim"),
            provenance,
        }
    }

    /// Every row random.
    pub fn random(vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        EmbeddingTable::build(&PretrainedVectors::new(dim), vocab, seed)
    }

    pub fn from_matrix(matrix: Tensor) -> Self {
        let rows = matrix.rows();
        EmbeddingTable {
            matrix,
            provenance: vec![Provenance::Pretrained; rows],
        }
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn provenance(&self, id: usize) -> Provenance {
        self.provenance[id]
    }

    /// Fraction of non-OOV rows copied from pretrained vectors.
    pub fn coverage(&self) -> f64 {
        let n = self.provenance.len().saturating_sub(1);
        if n == 0 {
            return 0.0;
        }
        let hits = self.provenance[1..].iter().filter(|p| **p == Provenance::Pretrained).count();
        hits as f64 / n as f64
    }
}

pub fn load_embeddings(path: &Path, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let vectors = PretrainedVectors::load(path, dim)?;
    let table = EmbeddingTable::build(&vectors, vocab, seed);
    log::info!("{}: embedding coverage {:.1}%", path.display(), 100.0 * table.coverage());
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Document, Domain, Split};

    fn vocab(text: &str) -> Vocabulary {
        Vocabulary::build(&[Document {
            id: "d".into(),
            tokens: tokenize(text),
            labels: None,
            domain: Domain::Source,
            split: Split::Unlabeled,
        }])
    }

    #[test]
    fn full_coverage_copies_rows() {
        let v = vocab("a b");
        let text = "a 1 2 3\nb -1 0.5 7\n";
        let vecs = PretrainedVectors::parse(text, Path::new("e.txt"), 3).unwrap();
        let t = EmbeddingTable::build(&vecs, &v, 9);
        assert_eq!(t.provenance(v.id("a").unwrap()), Provenance::Pretrained);
        assert_eq!(t.provenance(v.id("b").unwrap()), Provenance::Pretrained);
        assert_eq!(t.matrix().row(v.id("b").unwrap()), &[-1.0, 0.5, 7.0]);
        assert_eq!(t.coverage(), 1.0);
        assert_eq!(t.provenance(0), Provenance::Random);
    }

    #[test]
    fn missing_token_random_within_bounds() {
        let v = vocab("a zzz");
        let vecs = PretrainedVectors::parse("a 1 2 3\n", Path::new("e.txt"), 3).unwrap();
        let t = EmbeddingTable::build(&vecs, &v, 1);
        let z = v.id("zzz").unwrap();
        assert_eq!(t.provenance(z), Provenance::Random);
        assert!(t.matrix().row(z).iter().all(|x| x.abs() <= RANDOM_INIT_BOUND));
        assert_eq!(t.coverage(), 0.5);
    }

    #[test]
    fn same_seed_same_table() {
        let v = vocab("p q r");
        assert_eq!(EmbeddingTable::random(&v, 8, 5), EmbeddingTable::random(&v, 8, 5));
        assert_ne!(EmbeddingTable::random(&v, 8, 5), EmbeddingTable::random(&v, 8, 6));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = PretrainedVectors::parse("a 1 2 3\nb 1 x 3\n", Path::new("e.txt"), 3).unwrap_err();
        assert!(matches!(err, GlenError::Parse { line: 2, .. }), "{err}");
        let err = PretrainedVectors::parse("a 1 2\n", Path::new("e.txt"), 300).unwrap_err();
        assert!(matches!(err, GlenError::EmbeddingDim { found: 2, expected: 300, .. }));
    }
}
