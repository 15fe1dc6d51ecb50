//! Desk-scale stand-in for a source/target dataset pair.
//!
//! Each class has its own indicator tokens in the source domain and a
//! disjoint set of indicator tokens in the target domain. Labeled posts carry
//! one indicator surrounded by class-neutral context tokens. Unlabeled posts
//! place an indicator between two class-specific bridge tokens, and bridge
//! tokens are shared by both domains, so same-class source and target
//! indicators become 2-hop neighbours in the global token graph.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, Domain, PretrainedVectors, Record, Split};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Labeled source training posts per class.
    pub train_per_class: usize,
    /// Labeled source validation posts per class.
    pub val_per_class: usize,
    /// Unlabeled posts per class, in each domain.
    pub unlabeled_per_class: usize,
    /// Held-out labeled target posts per class.
    pub test_per_class: usize,
    pub indicators_per_class: usize,
    pub bridges_per_class: usize,
    pub context_tokens: usize,
    /// Tokens per post.
    pub length: usize,
    pub dim: usize,
    /// Multiplier on indicator vectors; small values model domain-specific
    /// tokens whose pretrained vectors carry little signal.
    pub indicator_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 2,
            train_per_class: 50,
            val_per_class: 10,
            unlabeled_per_class: 50,
            test_per_class: 50,
            indicators_per_class: 12,
            bridges_per_class: 3,
            context_tokens: 24,
            length: 6,
            dim: 300,
            indicator_scale: 1.0,
        }
    }
}

impl SyntheticSpec {
    /// Pair where only the token graph links the two domains' indicators:
    /// few indicators, one bridge per class, many unlabeled posts, short
    /// posts and near-silent indicator vectors.
    pub fn cross_domain() -> Self {
        SyntheticSpec {
            indicators_per_class: 2,
            bridges_per_class: 1,
            unlabeled_per_class: 300,
            length: 4,
            indicator_scale: 0.05,
            ..SyntheticSpec::default()
        }
    }
}

/// Generated corpora plus the token families used to build them.
#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub source: Vec<Document>,
    pub target: Vec<Document>,
    pub vectors: PretrainedVectors,
    /// `[class][k]` indicator tokens per domain.
    pub source_indicators: Vec<Vec<String>>,
    pub target_indicators: Vec<Vec<String>>,
    pub bridges: Vec<Vec<String>>,
}

impl SyntheticPair {
    /// Same-class (source, target) indicator pairs.
    pub fn indicator_pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (src, tgt) in self.source_indicators.iter().zip(&self.target_indicators) {
            for s in src {
                for t in tgt {
                    out.push((s.clone(), t.clone()));
                }
            }
        }
        out
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.source.iter().chain(&self.target)
    }

    /// Documents rendered as dataset-file records (class ids are unified indices).
    pub fn records(docs: &[Document]) -> Vec<Record> {
        docs.iter()
            .map(|d| Record {
                id: d.id.clone(),
                text: d.tokens.join(" "),
                labels: d.labels.as_ref().map(|l| {
                    l.iter().enumerate().filter(|(_, &v)| v == 1).map(|(c, _)| c as u32).collect()
                }),
                domain: d.domain.to_string(),
                split: d.split.to_string(),
            })
            .collect()
    }
}

struct Builder<'a> {
    spec: &'a SyntheticSpec,
    rng: ChaCha8Rng,
    context: Vec<String>,
}

impl Builder<'_> {
    fn context(&mut self, n: usize) -> Vec<String> {
        self.context.choose_multiple(&mut self.rng, n).cloned().collect()
    }

    fn labeled(&mut self, indicator: &str) -> Vec<String> {
        let len = self.spec.length.max(1);
        let mut tokens = self.context(len - 1);
        let at = self.rng.gen_range(0..len);
        tokens.insert(at, indicator.to_string());
        tokens
    }

    fn unlabeled(&mut self, indicator: &str, bridges: &[String]) -> Vec<String> {
        let len = self.spec.length.max(3);
        let pair: Vec<&String> = bridges.choose_multiple(&mut self.rng, 2.min(bridges.len())).collect();
        let mut core = vec![pair[0].clone(), indicator.to_string()];
        if let Some(b) = pair.get(1) {
            core.push((*b).clone());
        }
        let mut tokens = self.context(len.saturating_sub(core.len()));
        let at = self.rng.gen_range(0..=tokens.len());
        tokens.splice(at..at, core);
        tokens
    }
}

fn one_hot(classes: usize, c: usize) -> Vec<u8> {
    let mut v = vec![0; classes];
    v[c] = 1;
    v
}

/// Builds the pair deterministically from `seed`.
pub fn generate_synthetic_pair(spec: &SyntheticSpec, seed: u64) -> SyntheticPair {
    assert!(spec.classes >= 2, "need at least two classes");
    assert!(spec.context_tokens + 1 >= spec.length, "too few context tokens for the post length");
    let family = |prefix: &str, per: usize| -> Vec<Vec<String>> {
        (0..spec.classes)
            .map(|c| (0..per).map(|k| format!("{prefix}{c}x{k}")).collect())
            .collect()
    };
    let source_indicators = family("src", spec.indicators_per_class);
    let target_indicators = family("tgt", spec.indicators_per_class);
    let bridges = family("bridge", spec.bridges_per_class.max(1));
    let context: Vec<String> = (0..spec.context_tokens).map(|k| format!("ctx{k}")).collect();

    let mut b = Builder {
        spec,
        rng: ChaCha8Rng::seed_from_u64(seed),
        context: context.clone(),
    };

    let mut source = Vec::new();
    let mut target = Vec::new();
    let splits = [
        (Domain::Source, Split::Train, spec.train_per_class),
        (Domain::Source, Split::Val, spec.val_per_class),
        (Domain::Source, Split::Unlabeled, spec.unlabeled_per_class),
        (Domain::Target, Split::Unlabeled, spec.unlabeled_per_class),
        (Domain::Target, Split::Test, spec.test_per_class),
    ];
    for (domain, split, per_class) in splits {
        let indicators = match domain {
            Domain::Source => &source_indicators,
            Domain::Target => &target_indicators,
        };
        for c in 0..spec.classes {
            for k in 0..per_class {
                // Cycle through indicators so every one appears.
                let ind = &indicators[c][(k + c) % indicators[c].len()];
                let (tokens, labels) = if split.is_labeled() {
                    (b.labeled(ind), Some(one_hot(spec.classes, c)))
                } else {
                    (b.unlabeled(ind, &bridges[c]), None)
                };
                let doc = Document {
                    id: format!("{domain}-{split}-{c}-{k}"),
                    tokens,
                    labels,
                    domain,
                    split,
                };
                match domain {
                    Domain::Source => source.push(doc),
                    Domain::Target => target.push(doc),
                }
            }
        }
    }
    source.shuffle(&mut b.rng);
    target.shuffle(&mut b.rng);

    let mut vectors = PretrainedVectors::new(spec.dim);
    let indicators = source_indicators.iter().chain(&target_indicators).flatten();
    let all = context
        .iter()
        .map(|t| (t, 1.0))
        .chain(indicators.map(|t| (t, spec.indicator_scale)))
        .chain(bridges.iter().flatten().map(|t| (t, 1.0)));
    for (tok, scale) in all {
        let v = (0..spec.dim).map(|_| scale * b.rng.gen_range(-0.25..=0.25)).collect();
        vectors.insert(tok.clone(), v);
    }

    SyntheticPair {
        source,
        target,
        vectors,
        source_indicators,
        target_indicators,
        bridges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(docs: &[Document], split: Split) -> usize {
        docs.iter().filter(|d| d.split == split).count()
    }

    #[test]
    fn split_sizes_follow_spec() {
        let spec = SyntheticSpec {
            val_per_class: 0,
            ..SyntheticSpec::default()
        };
        let pair = generate_synthetic_pair(&spec, 1);
        assert_eq!(count(&pair.source, Split::Train), 100);
        assert_eq!(count(&pair.source, Split::Unlabeled), 100);
        assert_eq!(count(&pair.target, Split::Unlabeled), 100);
        assert_eq!(count(&pair.target, Split::Test), 100);
        assert!(pair.target.iter().all(|d| d.domain == Domain::Target));
    }

    #[test]
    fn labels_follow_indicators() {
        let pair = generate_synthetic_pair(&SyntheticSpec::default(), 2);
        for d in pair.source.iter().chain(&pair.target).filter(|d| d.split.is_labeled()) {
            let labels = d.labels.as_ref().unwrap();
            let class = labels.iter().position(|&v| v == 1).unwrap();
            let family = match d.domain {
                Domain::Source => &pair.source_indicators[class],
                Domain::Target => &pair.target_indicators[class],
            };
            assert_eq!(d.tokens.iter().filter(|t| family.contains(t)).count(), 1, "{d:?}");
            assert!(!d.tokens.iter().any(|t| t.starts_with("bridge")));
        }
    }

    #[test]
    fn posts_have_distinct_tokens_and_fixed_length() {
        let spec = SyntheticSpec::default();
        let pair = generate_synthetic_pair(&spec, 3);
        for d in pair.documents() {
            let mut t = d.tokens.clone();
            t.sort();
            t.dedup();
            assert_eq!(t.len(), d.tokens.len());
            assert_eq!(d.tokens.len(), spec.length);
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic_pair(&SyntheticSpec::default(), 7);
        let b = generate_synthetic_pair(&SyntheticSpec::default(), 7);
        assert_eq!(a.source, b.source);
        assert_eq!(a.target, b.target);
        assert_eq!(a.vectors, b.vectors);
    }
}
