use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::corpus::{Document, Domain, Instance};

/// Reserved token for anything outside the vocabulary; always id 0.
pub const OOV_TOKEN: &str = "<oov>";
pub const OOV_ID: usize = 0;

/// Bijective token/id map with per-domain occurrence counts.
///
/// Ids are assigned in first-occurrence order over the documents passed to
/// [`Vocabulary::build`], after the OOV id.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    source_counts: Vec<u64>,
    target_counts: Vec<u64>,
}

impl Vocabulary {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut vocab = Vocabulary {
            tokens: vec![OOV_TOKEN.to_string()],
            index: HashMap::from([(OOV_TOKEN.to_string(), OOV_ID)]),
            source_counts: vec![0],
            target_counts: vec![0],
        };
        for doc in docs {
            for tok in &doc.tokens {
                let id = match vocab.index.get(tok) {
                    Some(&id) => id,
                    None => {
                        let id = vocab.tokens.len();
                        vocab.tokens.push(tok.clone());
                        vocab.index.insert(tok.clone(), id);
                        vocab.source_counts.push(0);
                        vocab.target_counts.push(0);
                        id
                    }
                };
                match doc.domain {
                    Domain::Source => vocab.source_counts[id] += 1,
                    Domain::Target => vocab.target_counts[id] += 1,
                }
            }
        }
        vocab
    }

    /// Number of ids, OOV included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: usize, domain: Domain) -> u64 {
        match domain {
            Domain::Source => self.source_counts[id],
            Domain::Target => self.target_counts[id],
        }
    }

    pub fn encode_tokens(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t).unwrap_or(OOV_ID)).collect()
    }

    pub fn encode(&self, doc: &Document) -> Instance {
        Instance {
            id: doc.id.clone(),
            tokens: self.encode_tokens(&doc.tokens),
            labels: doc.labels.clone(),
            domain: doc.domain,
            split: doc.split,
        }
    }

    pub fn encode_all<'a>(&self, docs: impl IntoIterator<Item = &'a Document>) -> Vec<Instance> {
        docs.into_iter().map(|d| self.encode(d)).collect()
    }

    /// SHA-256 over the id-ordered token list; identifies the id assignment.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Split};

    fn doc(text: &str, domain: Domain) -> Document {
        Document {
            id: text.into(),
            tokens: tokenize(text),
            labels: None,
            domain,
            split: Split::Unlabeled,
        }
    }

    #[test]
    fn counts_small_corpus() {
        let docs = [doc("a b", Domain::Source), doc("a c", Domain::Source)];
        let v = Vocabulary::build(&docs);
        assert_eq!(v.len(), 4);
        let a = v.id("a").unwrap();
        assert_eq!(v.count(a, Domain::Source), 2);
        assert_eq!(v.count(a, Domain::Target), 0);
        assert_eq!(v.token(OOV_ID), OOV_TOKEN);
    }

    #[test]
    fn empty_corpus_holds_only_oov() {
        let v = Vocabulary::build(&[]);
        assert_eq!(v.len(), 1);
        assert!(v.is_empty());
    }

    #[test]
    fn shared_token_single_id_both_counts() {
        let docs = [doc("need water", Domain::Source), doc("need wifi", Domain::Target)];
        let v = Vocabulary::build(&docs);
        let need = v.id("need").unwrap();
        assert!(v.count(need, Domain::Source) > 0 && v.count(need, Domain::Target) > 0);
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn unknown_tokens_encode_to_oov() {
        let v = Vocabulary::build(&[doc("a b", Domain::Source)]);
        let ids = v.encode_tokens(&["b".into(), "zzz".into()]);
        assert_eq!(ids, vec![v.id("b").unwrap(), OOV_ID]);
    }

    #[test]
    fn encode_decode_identity() {
        let docs = [doc("x y z x w", Domain::Source), doc("q r", Domain::Target)];
        let v = Vocabulary::build(&docs);
        for id in 0..v.len() {
            assert_eq!(v.id(v.token(id)), Some(id));
        }
    }
}
