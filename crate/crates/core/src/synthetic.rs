//! Seeded two-domain fixture generator.
//!
//! Both domains share function words and sentence shapes but draw entities
//! and content words from disjoint pools, so a model trained on one domain
//! knows little about the other's vocabulary. Probe tasks ask for the entity
//! of a sentence, which a student can only learn from NER-style annotations.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::RawDocument;
use crate::eval::TaskInstance;
use crate::seed;

#[derive(Debug, Clone, Copy)]
pub struct Domain {
    pub name: &'static str,
    pub entities: &'static [&'static str],
    /// Two-word lowercase compounds.
    pub nouns: &'static [&'static str],
    pub adjectives: &'static [&'static str],
    pub verbs: &'static [&'static str],
}

pub const HARBOR: Domain = Domain {
    name: "harbor",
    entities: &[
        "Port Mirelle",
        "Calder Bay",
        "Ostrava Quay",
        "Lantern Point",
        "Vessa Harbor",
        "Brindle Isle",
        "Marrow Cove",
        "Teller Reach",
        "Solen Strait",
        "Kestrel Shoal",
        "Amber Wharf",
        "Dunmore Light",
    ],
    nouns: &[
        "fishing net",
        "cargo hold",
        "sea wall",
        "tide chart",
        "rope ladder",
        "signal lamp",
        "ferry deck",
        "anchor chain",
        "gull nest",
        "reef marker",
        "dock winch",
        "sail cloth",
    ],
    adjectives: &[
        "quiet", "salty", "narrow", "bright", "old", "windy", "calm", "busy", "grey", "wooden",
    ],
    verbs: &[
        "reached",
        "left",
        "passed",
        "crossed",
        "guarded",
        "watched",
        "sheltered",
        "circled",
    ],
};

pub const LEDGER: Domain = Domain {
    name: "ledger",
    entities: &[
        "Norvex Labs",
        "Halden Capital",
        "Quorin Systems",
        "Alder Fund",
        "Pellin Institute",
        "Verity Bank",
        "Castor Analytics",
        "Orrin Group",
        "Meridian Trust",
        "Zephyr Holdings",
        "Talbot Works",
        "Crane Partners",
    ],
    nouns: &[
        "market share",
        "sample size",
        "budget report",
        "loan term",
        "patent claim",
        "sensor array",
        "trial phase",
        "audit trail",
        "survey panel",
        "merger plan",
        "price floor",
        "credit line",
    ],
    adjectives: &[
        "volatile", "strong", "weak", "final", "early", "precise", "annual", "stable", "modest",
        "formal",
    ],
    verbs: &[
        "acquired", "funded", "tested", "measured", "reported", "audited", "priced", "reviewed",
    ],
};

/// A generated sentence with the entities and compound nouns it mentions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSentence {
    pub text: String,
    pub entities: Vec<String>,
    pub compounds: Vec<String>,
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).expect("non-empty pool")
}

fn two_entities<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> (&'a str, &'a str) {
    let mut chosen = pool.choose_multiple(rng, 2);
    (
        chosen.next().expect("pool >= 2"),
        chosen.next().expect("pool >= 2"),
    )
}

/// One sentence from `domain`. With `require_entity` the entity-free shape is
/// never used.
pub fn sentence(domain: &Domain, rng: &mut ChaCha8Rng, require_entity: bool) -> SyntheticSentence {
    let shapes = if require_entity { 6 } else { 7 };
    let (e1, e2) = two_entities(rng, domain.entities);
    let n1 = pick(rng, domain.nouns);
    let n2 = pick(rng, domain.nouns);
    let a1 = pick(rng, domain.adjectives);
    let a2 = pick(rng, domain.adjectives);
    let v = pick(rng, domain.verbs);
    let (text, entities, compounds) = match rng.gen_range(0..shapes) {
        0 => (
            format!("{e1} {v} the {a1} {n1} near {e2}."),
            vec![e1, e2],
            vec![n1],
        ),
        1 => (
            format!("The {n1} of {e1} was {a1} and {a2}."),
            vec![e1],
            vec![n1],
        ),
        2 => (
            format!("After the {n1}, {e1} {v} a {a1} {n2}."),
            vec![e1],
            vec![n1, n2],
        ),
        3 => (
            format!("A {a1} {n1} {v} {e1} before the {n2}."),
            vec![e1],
            vec![n1, n2],
        ),
        4 => (
            format!("{e1} and {e2} {v} the {n1} with a {a1} {n2}."),
            vec![e1, e2],
            vec![n1, n2],
        ),
        5 => (
            format!("The {a1} {n1} was {v} by {e1}."),
            vec![e1],
            vec![n1],
        ),
        _ => (
            format!("The {a1} {n1} {v} the {a2} {n2}."),
            vec![],
            vec![n1, n2],
        ),
    };
    let owned = |v: Vec<&str>| v.into_iter().map(String::from).collect();
    SyntheticSentence {
        text,
        entities: owned(entities),
        compounds: owned(compounds),
    }
}

/// `n_docs` documents of 3 to 6 sentences, ids `<prefix>-<i>`.
pub fn corpus(domain: &Domain, n_docs: usize, seed: u64, id_prefix: &str) -> Vec<RawDocument> {
    let mut rng = seed::substream(seed, &format!("synthetic/{}/corpus", domain.name));
    (0..n_docs)
        .map(|i| {
            let n = rng.gen_range(3..=6);
            let text = (0..n)
                .map(|_| sentence(domain, &mut rng, false).text)
                .collect::<Vec<_>>()
                .join(" ");
            RawDocument {
                id: format!("{id_prefix}-{i}"),
                text,
            }
        })
        .collect()
}

fn probe_candidates(rng: &mut ChaCha8Rng, s: &SyntheticSentence) -> (Vec<String>, String) {
    let gold = s.entities.choose(rng).expect("entity present").clone();
    let distractor = s.compounds.choose(rng).expect("compound present").clone();
    let candidates = if rng.gen_bool(0.5) {
        vec![gold.clone(), distractor]
    } else {
        vec![distractor, gold.clone()]
    };
    (candidates, gold)
}

/// Multiple-choice probes asking which phrase the sentence names as an
/// entity. Instances use the `entity_probe` template's `sentence` field.
pub fn entity_probes(domain: &Domain, n: usize, seed: u64) -> Vec<TaskInstance> {
    let mut rng = seed::substream(seed, &format!("synthetic/{}/entity_probe", domain.name));
    (0..n)
        .map(|i| {
            let s = sentence(domain, &mut rng, true);
            let (candidates, gold) = probe_candidates(&mut rng, &s);
            let mut fields = IndexMap::new();
            fields.insert("sentence".to_string(), s.text);
            TaskInstance {
                id: format!("ep-{i}"),
                prompt: None,
                fields: Some(fields),
                candidates,
                gold: Some(gold),
            }
        })
        .collect()
}

/// Probes in question form: which phrase the question is about.
pub fn question_probes(domain: &Domain, n: usize, seed: u64) -> Vec<TaskInstance> {
    let mut rng = seed::substream(seed, &format!("synthetic/{}/question_probe", domain.name));
    (0..n)
        .map(|i| {
            let s = sentence(domain, &mut rng, true);
            let (candidates, gold) = probe_candidates(&mut rng, &s);
            TaskInstance {
                id: format!("qp-{i}"),
                prompt: Some(format!(
                    "{} <sep> Question:\nWhat is stated about \"",
                    s.text
                )),
                fields: None,
                candidates,
                gold: Some(gold),
            }
        })
        .collect()
}
