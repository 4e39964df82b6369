//! Triple files, vocabularies, splits and the filter index used for ranking.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use indexmap::IndexSet;

use crate::error::{Error, Result};

/// An integer-encoded `(head, relation, tail)` fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    /// The entity sitting on `side`.
    pub fn entity(&self, side: Side) -> usize {
        match side {
            Side::Head => self.head,
            Side::Tail => self.tail,
        }
    }

    /// Copy of this triple with the entity on `side` replaced.
    pub fn with_entity(&self, side: Side, entity: usize) -> Self {
        match side {
            Side::Head => Self { head: entity, ..*self },
            Side::Tail => Self { tail: entity, ..*self },
        }
    }
}

/// Which slot of a triple a query asks for (or a corruption replaces).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Head,
    Tail,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Head, Side::Tail];
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Head => "head",
            Side::Tail => "tail",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?}; expected train, valid or test"
            ))),
        }
    }
}

/// A multi-relational directed graph with train/valid/test splits.
///
/// Immutable once built. Entity and relation ids are assigned in
/// first-appearance order over train, then valid, then test.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: IndexSet<String>,
    relations: IndexSet<String>,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    // (head, relation) -> sorted known tails; (tail, relation) -> sorted known heads
    known_tails: HashMap<(usize, usize), Vec<usize>>,
    known_heads: HashMap<(usize, usize), Vec<usize>>,
}

type Labeled<'a> = (&'a str, &'a str, &'a str);

impl KnowledgeGraph {
    /// Load the three benchmark TSV files (`head<TAB>relation<TAB>tail`).
    pub fn load_dataset(
        train_path: impl AsRef<Path>,
        valid_path: impl AsRef<Path>,
        test_path: impl AsRef<Path>,
    ) -> Result<Self> {
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))
        };
        let (train_path, valid_path, test_path) =
            (train_path.as_ref(), valid_path.as_ref(), test_path.as_ref());
        let train_text = read(train_path)?;
        let valid_text = read(valid_path)?;
        let test_text = read(test_path)?;
        let train = parse_lines(&train_text, train_path)?;
        let valid = parse_lines(&valid_text, valid_path)?;
        let test = parse_lines(&test_text, test_path)?;
        Self::from_labeled(&train, &valid, &test)
    }

    /// Build from in-memory TSV text, one string per split.
    pub fn from_tsv_strs(train: &str, valid: &str, test: &str) -> Result<Self> {
        let train = parse_lines(train, Path::new("<train>"))?;
        let valid = parse_lines(valid, Path::new("<valid>"))?;
        let test = parse_lines(test, Path::new("<test>"))?;
        Self::from_labeled(&train, &valid, &test)
    }

    /// Build from already-encoded triples, naming entities `e{i}` and
    /// relations `r{i}`. Every id below the given counts gets a label even if
    /// no triple mentions it.
    pub fn from_ids(
        num_entities: usize,
        num_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let entities: IndexSet<String> = (0..num_entities).map(|i| format!("e{i}")).collect();
        let relations: IndexSet<String> = (0..num_relations).map(|i| format!("r{i}")).collect();
        for t in train.iter().chain(&valid).chain(&test) {
            if t.head >= num_entities || t.tail >= num_entities || t.relation >= num_relations {
                return Err(Error::Data(format!(
                    "triple {t:?} out of range for {num_entities} entities, {num_relations} relations"
                )));
            }
        }
        Self::assemble(entities, relations, train, valid, test)
    }

    fn from_labeled(train: &[Labeled], valid: &[Labeled], test: &[Labeled]) -> Result<Self> {
        let mut entities = IndexSet::new();
        let mut relations = IndexSet::new();
        let mut encode = |rows: &[Labeled]| -> Vec<Triple> {
            rows.iter()
                .map(|&(h, r, t)| {
                    let head = entities.insert_full(h.to_owned()).0;
                    let relation = relations.insert_full(r.to_owned()).0;
                    let tail = entities.insert_full(t.to_owned()).0;
                    Triple::new(head, relation, tail)
                })
                .collect()
        };
        let train = encode(train);
        let valid = encode(valid);
        let test = encode(test);
        Self::assemble(entities, relations, train, valid, test)
    }

    fn assemble(
        entities: IndexSet<String>,
        relations: IndexSet<String>,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let train_set: HashSet<Triple> = train.iter().copied().collect();
        let valid_set: HashSet<Triple> = valid.iter().copied().collect();
        for (name, split) in [("valid", &valid), ("test", &test)] {
            if let Some(t) = split.iter().find(|t| train_set.contains(t)) {
                return Err(Error::Data(format!("{name} triple {t:?} also appears in train")));
            }
        }
        if let Some(t) = test.iter().find(|t| valid_set.contains(t)) {
            return Err(Error::Data(format!("test triple {t:?} also appears in valid")));
        }

        let mut known_tails: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        let mut known_heads: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for t in train.iter().chain(&valid).chain(&test) {
            known_tails.entry((t.head, t.relation)).or_default().push(t.tail);
            known_heads.entry((t.tail, t.relation)).or_default().push(t.head);
        }
        for list in known_tails.values_mut().chain(known_heads.values_mut()) {
            list.sort_unstable();
            list.dedup();
        }

        Ok(Self {
            entities,
            relations,
            train,
            valid,
            test,
            known_tails,
            known_heads,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn entity_label(&self, id: usize) -> Option<&str> {
        self.entities.get_index(id).map(String::as_str)
    }

    pub fn relation_label(&self, id: usize) -> Option<&str> {
        self.relations.get_index(id).map(String::as_str)
    }

    pub fn entity_id(&self, label: &str) -> Option<usize> {
        self.entities.get_index_of(label)
    }

    pub fn relation_id(&self, label: &str) -> Option<usize> {
        self.relations.get_index_of(label)
    }

    /// Every entity that, placed on `side` of a query anchored at
    /// `query_entity` through `relation`, forms a triple present in any split.
    ///
    /// For `Side::Tail` the query is `(query_entity, relation, ?)`; for
    /// `Side::Head` it is `(?, relation, query_entity)`. The result is sorted
    /// and duplicate-free.
    pub fn filtered_candidates(&self, query_entity: usize, relation: usize, side: Side) -> &[usize] {
        let index = match side {
            Side::Tail => &self.known_tails,
            Side::Head => &self.known_heads,
        };
        index
            .get(&(query_entity, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Whether the triple is present in any split.
    pub fn contains(&self, triple: &Triple) -> bool {
        self.filtered_candidates(triple.head, triple.relation, Side::Tail)
            .binary_search(&triple.tail)
            .is_ok()
    }
}

fn parse_lines<'a>(text: &'a str, path: &Path) -> Result<Vec<Labeled<'a>>> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(h), Some(r), Some(t), None) => rows.push((h, r, t)),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: format!(
                        "expected 3 tab-separated fields, found {}",
                        line.split('\t').count()
                    ),
                })
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_line_graph() {
        let kg = KnowledgeGraph::from_tsv_strs("a\tr\tb\n", "", "").unwrap();
        assert_eq!(kg.num_entities(), 2);
        assert_eq!(kg.num_relations(), 1);
        assert_eq!(kg.train(), &[Triple::new(0, 0, 1)]);
    }

    #[test]
    fn ids_follow_first_appearance_across_splits() {
        let kg = KnowledgeGraph::from_tsv_strs("b\tr\ta\n", "c\ts\tb\n", "d\tr\te\n").unwrap();
        let labels: Vec<_> = (0..kg.num_entities()).map(|i| kg.entity_label(i).unwrap()).collect();
        assert_eq!(labels, ["b", "a", "c", "d", "e"]);
        assert_eq!(kg.relation_id("s"), Some(1));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = KnowledgeGraph::from_tsv_strs("a\tr\tb\na\tr\n", "", "").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
        let err = KnowledgeGraph::from_tsv_strs("a\tr\tb\tc\n", "", "").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn spaces_are_not_separators() {
        let err = KnowledgeGraph::from_tsv_strs("a r b\n", "", "").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let kg = KnowledgeGraph::from_tsv_strs(" a \tr\tb c\n", "", "").unwrap();
        assert_eq!(kg.entity_label(0), Some(" a "));
        assert_eq!(kg.entity_label(1), Some("b c"));
    }

    #[test]
    fn empty_train_is_config_error() {
        let err = KnowledgeGraph::from_tsv_strs("", "a\tr\tb\n", "").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn overlapping_splits_rejected() {
        let err = KnowledgeGraph::from_tsv_strs("a\tr\tb\n", "a\tr\tb\n", "").unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn filtered_candidates_examples() {
        let kg = KnowledgeGraph::from_tsv_strs("a\tr\tb\na\tr\tc\n", "", "").unwrap();
        let (a, b, c, r) = (0, 1, 2, 0);
        assert_eq!(kg.filtered_candidates(a, r, Side::Tail), &[b, c]);
        assert_eq!(kg.filtered_candidates(b, r, Side::Head), &[a]);
        assert!(kg.filtered_candidates(c, r, Side::Tail).is_empty());

        let kg = KnowledgeGraph::from_tsv_strs("a\tr\tb\n", "", "a\tr\td\n").unwrap();
        let d = kg.entity_id("d").unwrap();
        assert_eq!(kg.filtered_candidates(0, 0, Side::Tail), &[1, d]);
    }

    #[test]
    fn duplicates_kept_in_split_but_not_in_index() {
        let kg = KnowledgeGraph::from_tsv_strs("a\tr\tb\na\tr\tb\n", "", "").unwrap();
        assert_eq!(kg.train().len(), 2);
        assert_eq!(kg.filtered_candidates(0, 0, Side::Tail), &[1]);
    }

    #[test]
    fn filter_index_matches_scan_on_random_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gen = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Triple> {
            (0..n)
                .map(|_| Triple::new(rng.gen_range(0..40), rng.gen_range(0..4), rng.gen_range(0..40)))
                .collect()
        };
        let mut all: Vec<Triple> = gen(&mut rng, 600);
        all.sort();
        all.dedup();
        let (train, rest) = all.split_at(all.len() * 8 / 10);
        let (valid, test) = rest.split_at(rest.len() / 2);
        let kg = KnowledgeGraph::from_ids(40, 4, train.to_vec(), valid.to_vec(), test.to_vec())
            .unwrap();
        for _ in 0..1000 {
            let (h, r) = (rng.gen_range(0..40), rng.gen_range(0..4));
            let mut expected: Vec<usize> = all
                .iter()
                .filter(|t| t.head == h && t.relation == r)
                .map(|t| t.tail)
                .collect();
            expected.sort();
            expected.dedup();
            assert_eq!(kg.filtered_candidates(h, r, Side::Tail), expected.as_slice());
        }
    }

    proptest! {
        #[test]
        fn labels_round_trip(rows in prop::collection::vec(("[a-z]{1,3}", "[A-C]", "[a-z]{1,3}"), 1..30)) {
            let text: String = rows.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect();
            let kg = KnowledgeGraph::from_tsv_strs(&text, "", "").unwrap();
            for (triple, (h, r, t)) in kg.train().iter().zip(&rows) {
                prop_assert_eq!(kg.entity_label(triple.head).unwrap(), h.as_str());
                prop_assert_eq!(kg.relation_label(triple.relation).unwrap(), r.as_str());
                prop_assert_eq!(kg.entity_label(triple.tail).unwrap(), t.as_str());
            }
        }
    }
}
