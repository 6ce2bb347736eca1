//! The three token inventories (natural language W, SPARQL vocabulary S,
//! KB elements K), id mapping, OOV statistics and KB masking.
//!
//! Ids live in one space laid out as `reserved | W | S | K`. A surface string
//! may occur in more than one inventory (a question word "where" and the
//! keyword `where`); the ids stay distinct and [`Side`] picks the inventory
//! used for lookup.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{unwrap_kb, AnnotatedQuestion, Scheme};
use crate::error::{Error, Result};
use crate::sparqltok::{Classifier, GrammarProfile, TokenType};

pub const MASK: &str = "<mask>";
pub const UNK: &str = "<unk>";
pub const SEP: &str = "<sep>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const PAD: &str = "<pad>";

pub const RESERVED: [&str; 6] = [MASK, UNK, SEP, BOS, EOS, PAD];

pub fn is_reserved(token: &str) -> bool {
    RESERVED.contains(&token)
}

/// An annotated question paired with its tokenized gold query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub question: AnnotatedQuestion,
    pub query: Vec<String>,
}

/// Which inventories a lookup consults besides the reserved tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// W, then K for `<<kb>>`-wrapped tokens.
    Question,
    /// S, then K.
    Query,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inventory {
    Reserved,
    W,
    S,
    K,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReservedTokens {
    pub mask: String,
    pub unk: String,
    pub sep: String,
    pub bos: String,
    pub eos: String,
    pub pad: String,
}

impl Default for ReservedTokens {
    fn default() -> Self {
        Self {
            mask: MASK.into(),
            unk: UNK.into(),
            sep: SEP.into(),
            bos: BOS.into(),
            eos: EOS.into(),
            pad: PAD.into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    w: Vec<String>,
    s: Vec<String>,
    k: Vec<String>,
    reserved: ReservedTokens,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriVocabulary {
    w: Vec<String>,
    s: Vec<String>,
    k: Vec<String>,
    w_index: HashMap<String, usize>,
    s_index: HashMap<String, usize>,
    k_index: HashMap<String, usize>,
}

fn index_of(tokens: &[String]) -> HashMap<String, usize> {
    tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect()
}

impl TriVocabulary {
    /// Builds from explicit inventories; each is sorted and deduplicated.
    pub fn from_sets(
        w: impl IntoIterator<Item = String>,
        s: impl IntoIterator<Item = String>,
        k: impl IntoIterator<Item = String>,
    ) -> Self {
        let clean = |it: &mut dyn Iterator<Item = String>| -> Vec<String> {
            it.filter(|t| !is_reserved(t)).collect::<BTreeSet<_>>().into_iter().collect()
        };
        let w = clean(&mut w.into_iter());
        let s = clean(&mut s.into_iter());
        let k = clean(&mut k.into_iter());
        Self {
            w_index: index_of(&w),
            s_index: index_of(&s),
            k_index: index_of(&k),
            w,
            s,
            k,
        }
    }

    pub fn w_tokens(&self) -> &[String] {
        &self.w
    }

    pub fn s_tokens(&self) -> &[String] {
        &self.s
    }

    pub fn k_tokens(&self) -> &[String] {
        &self.k
    }

    pub fn len(&self) -> usize {
        RESERVED.len() + self.w.len() + self.s.len() + self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn w_offset(&self) -> usize {
        RESERVED.len()
    }

    fn s_offset(&self) -> usize {
        self.w_offset() + self.w.len()
    }

    fn k_offset(&self) -> usize {
        self.s_offset() + self.s.len()
    }

    pub fn reserved_id(token: &str) -> Option<usize> {
        RESERVED.iter().position(|r| *r == token)
    }

    pub fn unk_id(&self) -> usize {
        Self::reserved_id(UNK).unwrap()
    }

    pub fn w_id(&self, token: &str) -> Option<usize> {
        self.w_index.get(token).map(|i| i + self.w_offset())
    }

    pub fn s_id(&self, token: &str) -> Option<usize> {
        self.s_index.get(token).map(|i| i + self.s_offset())
    }

    pub fn k_id(&self, token: &str) -> Option<usize> {
        self.k_index.get(token).map(|i| i + self.k_offset())
    }

    pub fn contains_k(&self, token: &str) -> bool {
        self.k_index.contains_key(token)
    }

    pub fn inventory(&self, id: usize) -> Option<Inventory> {
        if id < self.w_offset() {
            Some(Inventory::Reserved)
        } else if id < self.s_offset() {
            Some(Inventory::W)
        } else if id < self.k_offset() {
            Some(Inventory::S)
        } else if id < self.len() {
            Some(Inventory::K)
        } else {
            None
        }
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        let out_of_range = || Error::IdOutOfRange {
            id,
            size: self.len(),
        };
        Ok(match self.inventory(id).ok_or_else(out_of_range)? {
            Inventory::Reserved => RESERVED[id],
            Inventory::W => &self.w[id - self.w_offset()],
            Inventory::S => &self.s[id - self.s_offset()],
            Inventory::K => &self.k[id - self.k_offset()],
        })
    }

    pub fn id(&self, token: &str, side: Side) -> usize {
        if let Some(id) = Self::reserved_id(token) {
            return id;
        }
        let found = match side {
            Side::Question => self
                .w_id(token)
                .or_else(|| unwrap_kb(token).and_then(|k| self.k_id(k))),
            Side::Query => self.s_id(token).or_else(|| self.k_id(token)),
        };
        found.unwrap_or_else(|| self.unk_id())
    }

    /// Unknown tokens map to the `<unk>` id.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], side: Side) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref(), side)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter().map(|&id| self.token(id).map(str::to_string)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = VocabFile {
            w: self.w.clone(),
            s: self.s.clone(),
            k: self.k.clone(),
            reserved: ReservedTokens::default(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.reserved != ReservedTokens::default() {
            return Err(Error::Config("vocabulary uses different reserved tokens".into()));
        }
        Ok(Self::from_sets(file.w, file.s, file.k))
    }
}

/// Token sets of one collection of examples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSets {
    pub w: BTreeSet<String>,
    pub s: BTreeSet<String>,
    pub k: BTreeSet<String>,
}

impl TokenSets {
    pub fn collect(examples: &[Example], classifier: &Classifier) -> Result<Self> {
        let mut sets = Self::default();
        for ex in examples {
            let kb_positions: BTreeSet<usize> = ex.question.kb_spans.iter().map(|(p, _)| *p).collect();
            for (i, tok) in ex.question.tokens.iter().enumerate() {
                if !kb_positions.contains(&i) && !is_reserved(tok) {
                    sets.w.insert(tok.clone());
                }
            }
            for (_, kb) in &ex.question.kb_spans {
                sets.k.insert(kb.clone());
            }
            for tok in &ex.query {
                match classifier.structural(tok) {
                    TokenType::Uri | TokenType::FakeUri | TokenType::Lit => {
                        sets.k.insert(tok.clone());
                    }
                    TokenType::SVocab | TokenType::Fct | TokenType::Var => {
                        sets.s.insert(tok.clone());
                    }
                    TokenType::Unk => return Err(Error::UnclassifiableToken(tok.clone())),
                }
            }
        }
        Ok(sets)
    }
}

/// Builds W, S and K from training examples annotated under `scheme`.
pub fn build_vocabularies(train: &[Example], scheme: Scheme) -> Result<TriVocabulary> {
    build_vocabularies_with(train, scheme, &GrammarProfile::default())
}

pub fn build_vocabularies_with(train: &[Example], scheme: Scheme, profile: &GrammarProfile) -> Result<TriVocabulary> {
    if let Some(ex) = train.iter().find(|e| e.question.scheme != scheme) {
        return Err(Error::Config(format!(
            "example `{}` is annotated as {} but the vocabulary is built for {scheme}",
            ex.id, ex.question.scheme
        )));
    }
    let sets = TokenSets::collect(train, &Classifier::new(profile))?;
    Ok(TriVocabulary::from_sets(sets.w, sets.s, sets.k))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryStats {
    pub total: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Test tokens absent from train.
    pub oov: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabStats {
    pub w: InventoryStats,
    pub s: InventoryStats,
    pub k: InventoryStats,
}

/// Vocabulary sizes per split and test OOV counts.
pub fn compute_oov(vocab: &TriVocabulary, validation: &[Example], test: &[Example]) -> Result<VocabStats> {
    let classifier = Classifier::new(&GrammarProfile::default());
    let val = TokenSets::collect(validation, &classifier)?;
    let tst = TokenSets::collect(test, &classifier)?;
    let stats = |train: &[String], val: &BTreeSet<String>, test: &BTreeSet<String>| {
        let train_set: BTreeSet<&String> = train.iter().collect();
        let mut all = train_set.clone();
        all.extend(val.iter());
        all.extend(test.iter());
        InventoryStats {
            total: all.len(),
            train: train.len(),
            validation: val.len(),
            test: test.len(),
            oov: test.iter().filter(|t| !train_set.contains(t)).count(),
        }
    };
    Ok(VocabStats {
        w: stats(vocab.w_tokens(), &val.w, &tst.w),
        s: stats(vocab.s_tokens(), &val.s, &tst.s),
        k: stats(vocab.k_tokens(), &val.k, &tst.k),
    })
}

/// Encoder input with every KB element replaced by [`MASK`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedInput {
    pub tokens: Vec<String>,
    /// `(input position, KB token)` for every mask, in input order.
    pub candidates: Vec<(usize, String)>,
}

impl MaskedInput {
    /// Distinct candidate tokens in first-occurrence order.
    pub fn candidate_tokens(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.candidates
            .iter()
            .filter(|(_, k)| seen.insert(k.as_str()))
            .map(|(_, k)| k.as_str())
            .collect()
    }

    /// Candidates not in the global K inventory; these are served from the
    /// per-example candidate table.
    pub fn dynamic_candidates<'a>(&'a self, vocab: &TriVocabulary) -> Vec<&'a str> {
        self.candidate_tokens()
            .into_iter()
            .filter(|k| !vocab.contains_k(k))
            .collect()
    }
}

/// Replaces each KB span by the shared mask symbol.
pub fn mask_kb_tokens(q: &AnnotatedQuestion, vocab: &TriVocabulary) -> Result<MaskedInput> {
    let classifier = Classifier::new(&GrammarProfile::default());
    let mut tokens = q.tokens.clone();
    let mut candidates = Vec::with_capacity(q.kb_spans.len());
    for (pos, kb) in &q.kb_spans {
        let registrable = vocab.contains_k(kb)
            || matches!(
                classifier.structural(kb),
                TokenType::Uri | TokenType::FakeUri | TokenType::Lit
            );
        if !registrable {
            return Err(Error::NotKbToken(kb.clone()));
        }
        tokens[*pos] = MASK.to_string();
        candidates.push((*pos, kb.clone()));
    }
    candidates.sort_by_key(|(p, _)| *p);
    Ok(MaskedInput { tokens, candidates })
}
