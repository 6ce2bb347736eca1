//! A small template grammar over a made-up DBpedia-style vocabulary, with a
//! fixture graph in which every generated gold query has a non-empty answer.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{instantiate_template, Binding, Bindings, DatasetSplit, Entry, GlobalTemplate, LabelSource};
use crate::endpoint::Graph;
use crate::error::Result;
use crate::sparqltok::PrefixTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Entity,
    Class,
    Prop,
    TextProp,
    NumProp,
    Word,
    Number,
}

use Slot::*;

struct Spec {
    question: &'static str,
    query: &'static str,
    slots: &'static [Slot],
}

const SPECS: [Spec; 10] = [
    Spec {
        question: "what is the <1> of <2> ?",
        query: "select distinct ?uri where { <2> <1> ?uri }",
        slots: &[Prop, Entity],
    },
    Spec {
        question: "who is the <1> whose <2> is <3> ?",
        query: "select distinct ?uri where { ?uri <2> <3> . ?uri a <1> }",
        slots: &[Class, Prop, Entity],
    },
    Spec {
        question: "is <1> the <2> of <3> ?",
        query: "ask where { <3> <2> <1> }",
        slots: &[Entity, Prop, Entity],
    },
    Spec {
        question: "how many <1> have <2> <3> ?",
        query: "select ( count ( distinct ?uri ) as ?c ) where { ?uri <2> <3> . ?uri a <1> }",
        slots: &[Class, Prop, Entity],
    },
    Spec {
        question: "give me the <1> that contains the word <2> in their <3>",
        query: "select distinct ?uri where { ?uri a <1> . ?uri <3> ?name . filter ( contains ( lcase ( ?name ) , <2> ) ) }",
        slots: &[Class, Word, TextProp],
    },
    Spec {
        question: "what is the <1> of the <2> of <3> ?",
        query: "select distinct ?uri where { <3> <2> ?x . ?x <1> ?uri }",
        slots: &[Prop, Prop, Entity],
    },
    Spec {
        question: "does <1> have a <2> greater than <3> ?",
        query: "ask where { <1> <2> ?obj . filter ( ?obj > <3> ) }",
        slots: &[Entity, NumProp, Number],
    },
    Spec {
        question: "list all <1> whose <2> is <3> and whose <4> is <5> .",
        query: "select distinct ?uri where { ?uri <2> <3> . ?uri <4> <5> . ?uri a <1> }",
        slots: &[Class, Prop, Entity, Prop, Entity],
    },
    Spec {
        question: "which <1> are <2> of <3> ?",
        query: "select distinct ?uri where { <3> <2> ?uri . ?uri a <1> }",
        slots: &[Class, Prop, Entity],
    },
    Spec {
        question: "tell me the <1> of <2> along with its <3> .",
        query: "select distinct ?a ?b where { <2> <1> ?a ; <3> ?b }",
        slots: &[Prop, Entity, NumProp],
    },
];

const FIRST: &[&str] = &[
    "alice", "bruno", "carla", "dmitri", "elena", "farid", "greta", "hiro", "ines", "jonas", "kira", "luca",
    "maya", "nils", "olga", "pavel", "quinn", "rosa", "sven", "tara", "umar", "vera", "wim", "xenia", "yuri",
    "zara", "anton", "beatrix", "cyril", "dora", "emil", "flora", "gustav", "hanna", "igor", "janek", "klara",
    "leon", "mira", "otto",
];

const LAST: &[&str] = &[
    "abbot", "berg", "castillo", "dorsey", "eklund", "fischer", "garcia", "holm", "ivanova", "jansen",
    "kowalski", "lund", "moreau", "novak", "ortiz", "petrov", "quist", "rossi", "schmidt", "tanaka", "ueda",
    "varga", "weber", "xu", "young", "zeller", "almeida", "brandt", "costa", "dumas", "engel", "falk",
    "gruber", "haas", "iversen", "jung", "krause", "lindqvist", "meyer", "nagy",
];

const CLASSES: &[(&str, &str)] = &[
    ("dbo:Person", "person"),
    ("dbo:Film", "film"),
    ("dbo:City", "city"),
    ("dbo:Band", "band"),
    ("dbo:Book", "book"),
    ("dbo:Company", "company"),
    ("dbo:River", "river"),
    ("dbo:Album", "album"),
    ("dbo:Athlete", "athlete"),
    ("dbo:Politician", "politician"),
    ("dbo:Museum", "museum"),
    ("dbo:Ship", "ship"),
];

const PROPS: &[(&str, &str)] = &[
    ("dbo:spouse", "spouse"),
    ("dbo:birthPlace", "birth place"),
    ("dbo:director", "director"),
    ("dbo:author", "author"),
    ("dbo:opponent", "opponent"),
    ("dbo:successor", "successor"),
    ("dbo:founder", "founder"),
    ("dbo:owner", "owner"),
    ("dbo:producer", "producer"),
    ("dbo:team", "team"),
    ("dbo:capital", "capital"),
    ("dbo:architect", "architect"),
    ("dbp:office", "office"),
    ("dbo:leader", "leader"),
];

const TEXT_PROPS: &[(&str, &str)] = &[
    ("dbp:name", "name"),
    ("dbo:motto", "motto"),
    ("dbo:slogan", "slogan"),
    ("dbp:title", "title"),
];

const NUM_PROPS: &[(&str, &str)] = &[
    ("dbo:height", "height"),
    ("dbo:population", "population"),
    ("dbo:elevation", "elevation"),
    ("dbo:budget", "budget"),
    ("dbo:length", "length"),
];

const WORDS: &[&str] = &[
    "zollkriminalamt", "harbor", "lantern", "granite", "meadow", "falcon", "ember", "quartz", "willow", "summit",
    "cobalt", "tundra", "saffron", "orchid", "basalt", "marble", "thunder", "glacier", "prairie", "canyon",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub train_per_template: usize,
    pub validation_per_template: usize,
    pub test_per_template: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            train_per_template: 50,
            validation_per_template: 5,
            test_per_template: 10,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub templates: Vec<GlobalTemplate>,
    pub split: DatasetSplit,
    /// Bindings of every generated entry, by entry id.
    pub bindings: HashMap<String, Bindings>,
    pub labels: LabelSource,
    /// Fixture graph in Turtle.
    pub turtle: String,
}

impl SyntheticCorpus {
    pub fn graph(&self) -> Result<Graph> {
        let mut g = Graph::new(PrefixTable::default());
        g.load_turtle(&self.turtle)?;
        Ok(g)
    }
}

/// The ten templates of the grammar.
pub fn templates() -> Vec<GlobalTemplate> {
    SPECS
        .iter()
        .enumerate()
        .map(|(i, s)| GlobalTemplate::new(format!("syn{}", i + 1), s.question, s.query))
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

struct Generator {
    rng: ChaCha8Rng,
    /// Entity names still available for each split.
    people: [Vec<(String, String)>; 3],
    turtle: String,
    fresh: usize,
}

impl Generator {
    fn entity(&mut self, part: usize) -> Binding {
        let (kb, label) = self.people[part].pop().expect("entity pool exhausted");
        Binding::new(kb, label)
    }

    fn node(&mut self) -> String {
        self.fresh += 1;
        format!("dbr:Node_{}", self.fresh)
    }

    fn pick(&mut self, pool: &[(&str, &str)]) -> Binding {
        let (kb, label) = pool[self.rng.gen_range(0..pool.len())];
        Binding::new(kb, label)
    }

    fn triple(&mut self, s: &str, p: &str, o: &str) {
        writeln!(self.turtle, "{s} {p} {o} .").unwrap();
    }

    fn bindings(&mut self, spec: &Spec, part: usize) -> Bindings {
        let mut b = Bindings::new();
        for (i, slot) in spec.slots.iter().enumerate() {
            let binding = match slot {
                Entity => self.entity(part),
                Class => self.pick(CLASSES),
                Prop => self.pick(PROPS),
                TextProp => self.pick(TEXT_PROPS),
                NumProp => self.pick(NUM_PROPS),
                Word => {
                    let w = WORDS[self.rng.gen_range(0..WORDS.len())];
                    Binding::new(format!("\"{w}\""), w)
                }
                Number => {
                    let n: u32 = self.rng.gen_range(10..1000);
                    Binding::new(n.to_string(), n.to_string())
                }
            };
            b.insert(i + 1, binding);
        }
        b
    }

    /// Adds triples making the instantiated query of template `t` non-empty.
    fn support(&mut self, t: usize, b: &Bindings) {
        let k = |i: usize| b[&i].kb_token.clone();
        match t {
            0 => {
                let o = self.node();
                self.triple(&k(2), &k(1), &o);
            }
            1 | 3 => {
                let x = self.node();
                self.triple(&x, &k(2), &k(3));
                self.triple(&x, "a", &k(1));
            }
            2 => {
                if self.rng.gen_bool(0.5) {
                    self.triple(&k(3), &k(2), &k(1));
                }
            }
            4 => {
                let x = self.node();
                let word = capitalize(b[&2].label.as_str());
                self.triple(&x, "a", &k(1));
                self.triple(&x, &k(3), &format!("\"Old {word} Society\""));
            }
            5 => {
                let (x, y) = (self.node(), self.node());
                self.triple(&k(3), &k(2), &x);
                self.triple(&x, &k(1), &y);
            }
            6 => {
                let n: u32 = b[&3].kb_token.parse().unwrap();
                let v = n + self.rng.gen_range(1..500);
                self.triple(&k(1), &k(2), &v.to_string());
            }
            7 => {
                let x = self.node();
                self.triple(&x, &k(2), &k(3));
                self.triple(&x, &k(4), &k(5));
                self.triple(&x, "a", &k(1));
            }
            8 => {
                let x = self.node();
                self.triple(&k(3), &k(2), &x);
                self.triple(&x, "a", &k(1));
            }
            9 => {
                let x = self.node();
                let v: u32 = self.rng.gen_range(1..10_000);
                self.triple(&k(2), &k(1), &x);
                self.triple(&k(2), &k(3), &v.to_string());
            }
            _ => unreachable!(),
        }
    }
}

/// Generates train/validation/test entries. Entities are drawn without
/// replacement from disjoint pools per split, so every test entry binds
/// entities never seen in training.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut names: Vec<(String, String)> = FIRST
        .iter()
        .flat_map(|f| {
            LAST.iter().map(move |l| {
                (
                    format!("dbr:{}_{}", capitalize(f), capitalize(l)),
                    format!("{f} {l}"),
                )
            })
        })
        .collect();
    names.shuffle(&mut rng);
    let per = [
        config.train_per_template,
        config.validation_per_template,
        config.test_per_template,
    ];
    let max_entities = SPECS.iter().map(|s| s.slots.iter().filter(|s| **s == Entity).count()).sum::<usize>();
    let need: Vec<usize> = per.iter().map(|n| n * max_entities).collect();
    assert!(need.iter().sum::<usize>() <= names.len(), "synthetic grammar too large for the name pool");
    let test_pool = names.split_off(names.len() - need[2]);
    let val_pool = names.split_off(names.len() - need[1]);
    let mut gen = Generator {
        rng,
        people: [names, val_pool, test_pool],
        turtle: String::new(),
        fresh: 0,
    };

    let templates = templates();
    let mut labels = LabelSource::default();
    let mut bindings_by_id = HashMap::new();
    let mut parts: [Vec<Entry>; 3] = Default::default();
    let mut seen = std::collections::HashSet::new();
    for (part, &count) in per.iter().enumerate() {
        for (t, (spec, template)) in SPECS.iter().zip(&templates).enumerate() {
            for _ in 0..count {
                // entity-free templates can repeat a binding draw
                let (b, mut entry) = loop {
                    let b = gen.bindings(spec, part);
                    let entry = instantiate_template(template, &b)?;
                    if seen.insert(entry.query.clone()) {
                        break (b, entry);
                    }
                };
                gen.support(t, &b);
                entry.id = format!("{}-{}-{}", ["train", "val", "test"][part], template.id, parts[part].len());
                for binding in b.values() {
                    if !binding.kb_token.starts_with('"') && binding.kb_token.parse::<f64>().is_err() {
                        labels.insert(binding.kb_token.clone(), binding.label.clone());
                    }
                }
                bindings_by_id.insert(entry.id.clone(), b);
                parts[part].push(entry);
            }
        }
    }
    for (kb, label) in &labels.0 {
        writeln!(gen.turtle, "{kb} rdfs:label \"{}\"@en .", capitalize(label)).unwrap();
    }
    let [train, validation, test] = parts;
    Ok(SyntheticCorpus {
        templates,
        split: DatasetSplit::new(train, validation, test)?,
        bindings: bindings_by_id,
        labels,
        turtle: gen.turtle,
    })
}
