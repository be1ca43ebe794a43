//! Knowledge-graph snapshots, the append-only vocabulary, and per-step deltas.
//!
//! A dataset is a directory of numbered snapshots `<root>/<i>/{train,valid,test}.txt`.
//! Each snapshot's train file holds only the triples added at that step; the
//! cumulative graph is the running union.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Name <-> id bijections for entities and relations. Ids are dense and assigned
/// in first-seen order; nothing is ever removed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entity_names: Vec<String>,
    entity_ids: HashMap<String, EntityId>,
    relation_names: Vec<String>,
    relation_ids: HashMap<String, RelationId>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity_id(&mut self, name: &str) -> EntityId {
        intern(&mut self.entity_names, &mut self.entity_ids, name)
    }

    pub fn relation_id(&mut self, name: &str) -> RelationId {
        intern(&mut self.relation_names, &mut self.relation_ids, name)
    }

    pub fn lookup_entity(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).copied()
    }

    pub fn lookup_relation(&self, name: &str) -> Option<RelationId> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entity_names.get(id as usize).map(String::as_str)
    }

    pub fn relation_name(&self, id: RelationId) -> Option<&str> {
        self.relation_names.get(id as usize).map(String::as_str)
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    /// Rebuild a vocabulary from ordered name lists (ids = positions).
    pub fn from_names(entities: Vec<String>, relations: Vec<String>) -> Result<Self> {
        let mut vocab = Self::new();
        for name in &entities {
            if vocab.entity_ids.contains_key(name) {
                return Err(Error::InvalidArgument(format!("duplicate entity name {name:?}")));
            }
            vocab.entity_id(name);
        }
        for name in &relations {
            if vocab.relation_ids.contains_key(name) {
                return Err(Error::InvalidArgument(format!("duplicate relation name {name:?}")));
            }
            vocab.relation_id(name);
        }
        Ok(vocab)
    }

    /// Resolve a name triple, registering unseen names.
    pub fn intern_triple(&mut self, head: &str, relation: &str, tail: &str) -> Triple {
        let h = self.entity_id(head);
        let r = self.relation_id(relation);
        let t = self.entity_id(tail);
        Triple::new(h, r, t)
    }
}

fn intern(names: &mut Vec<String>, ids: &mut HashMap<String, u32>, name: &str) -> u32 {
    if let Some(&id) = ids.get(name) {
        return id;
    }
    let id = u32::try_from(names.len()).expect("vocabulary exceeds u32 ids");
    names.push(name.to_owned());
    ids.insert(name.to_owned(), id);
    id
}

/// One time step of an evolving graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Snapshot {
    pub index: usize,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    /// Entity ids referenced by any split of this snapshot.
    pub entities: BTreeSet<EntityId>,
    /// Relation ids referenced by any split of this snapshot.
    pub relations: BTreeSet<RelationId>,
}

impl Snapshot {
    pub fn new(index: usize, train: Vec<Triple>, valid: Vec<Triple>, test: Vec<Triple>) -> Self {
        let mut entities = BTreeSet::new();
        let mut relations = BTreeSet::new();
        for t in train.iter().chain(&valid).chain(&test) {
            entities.insert(t.head);
            entities.insert(t.tail);
            relations.insert(t.relation);
        }
        Self {
            index,
            train,
            valid,
            test,
            entities,
            relations,
        }
    }

    pub fn all_triples(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

/// What a snapshot adds on top of everything trained before it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Delta {
    pub new_triples: Vec<Triple>,
    pub new_entities: BTreeSet<EntityId>,
    pub new_relations: BTreeSet<RelationId>,
}

/// Split a `head<TAB>relation<TAB>tail` line.
pub fn parse_triple_line(line: &str) -> Result<(&str, &str, &str)> {
    let line = line.trim_end_matches(['\n', '\r']);
    let mut fields = line.split('\t');
    match (fields.next(), fields.next(), fields.next(), fields.next()) {
        (Some(h), Some(r), Some(t), None) => Ok((h, r, t)),
        _ => Err(Error::MalformedLine {
            path: None,
            line: None,
            fields: line.split('\t').count(),
        }),
    }
}

fn read_split(path: &Path, vocab: &mut Vocabulary) -> Result<Vec<Triple>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut triples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (h, r, t) = parse_triple_line(line).map_err(|e| match e {
            Error::MalformedLine { fields, .. } => Error::MalformedLine {
                path: Some(path.to_path_buf()),
                line: Some(lineno + 1),
                fields,
            },
            other => other,
        })?;
        triples.push(vocab.intern_triple(h, r, t));
    }
    Ok(triples)
}

/// Load `train.txt`, `valid.txt` and `test.txt` from `dir`, registering names in
/// that order. Duplicate lines are kept.
pub fn load_snapshot_dir(dir: &Path, vocab: &mut Vocabulary, index: usize) -> Result<Snapshot> {
    let train = read_split(&dir.join("train.txt"), vocab)?;
    let valid = read_split(&dir.join("valid.txt"), vocab)?;
    let test = read_split(&dir.join("test.txt"), vocab)?;
    let snapshot = Snapshot::new(index, train, valid, test);
    let overlaps = split_overlaps(&snapshot);
    if overlaps > 0 {
        log::warn!(
            "snapshot {index} ({}): {overlaps} triples shared between train/valid/test",
            dir.display()
        );
    }
    Ok(snapshot)
}

fn split_overlaps(s: &Snapshot) -> usize {
    let train: std::collections::HashSet<_> = s.train.iter().collect();
    let valid: std::collections::HashSet<_> = s.valid.iter().collect();
    s.valid.iter().filter(|t| train.contains(t)).count()
        + s.test
            .iter()
            .filter(|t| train.contains(t) || valid.contains(t))
            .count()
}

/// Write a snapshot back out in the on-disk TSV layout.
pub fn write_snapshot_dir(dir: &Path, snapshot: &Snapshot, vocab: &Vocabulary) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, triples) in [
        ("train.txt", &snapshot.train),
        ("valid.txt", &snapshot.valid),
        ("test.txt", &snapshot.test),
    ] {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        for t in triples {
            let h = vocab.entity_name(t.head).ok_or(Error::UnknownEntity(t.head))?;
            let r = vocab
                .relation_name(t.relation)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown relation {}", t.relation)))?;
            let tl = vocab.entity_name(t.tail).ok_or(Error::UnknownEntity(t.tail))?;
            writeln!(out, "{h}\t{r}\t{tl}").map_err(|e| Error::io(&path, e))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// New triples, entities and relations of `snapshot` relative to the ids seen in
/// earlier training data. New elements are taken from the train split so every
/// one of them occurs in at least one new triple.
pub fn compute_delta(
    prev_entities: &BTreeSet<EntityId>,
    prev_relations: &BTreeSet<RelationId>,
    snapshot: &Snapshot,
) -> Delta {
    let mut delta = Delta {
        new_triples: snapshot.train.clone(),
        ..Delta::default()
    };
    for t in &snapshot.train {
        for e in [t.head, t.tail] {
            if !prev_entities.contains(&e) {
                delta.new_entities.insert(e);
            }
        }
        if !prev_relations.contains(&t.relation) {
            delta.new_relations.insert(t.relation);
        }
    }
    delta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ElementCounts {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
}

/// Running union over ingested snapshots.
#[derive(Debug, Clone, Default)]
pub struct CumulativeGraph {
    entities: BTreeSet<EntityId>,
    relations: BTreeSet<RelationId>,
    trained_entities: BTreeSet<EntityId>,
    trained_relations: BTreeSet<RelationId>,
    train_triples: Vec<Triple>,
    snapshots: usize,
}

impl CumulativeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fold a snapshot in and return its delta against the previous state.
    pub fn ingest(&mut self, snapshot: &Snapshot) -> Delta {
        let delta = compute_delta(&self.trained_entities, &self.trained_relations, snapshot);
        self.entities.extend(snapshot.entities.iter().copied());
        self.relations.extend(snapshot.relations.iter().copied());
        self.trained_entities.extend(delta.new_entities.iter().copied());
        self.trained_relations.extend(delta.new_relations.iter().copied());
        self.train_triples.extend_from_slice(&snapshot.train);
        self.snapshots += 1;
        delta
    }

    /// Cumulative (|E|, |R|, |T|), with |T| counting train triples.
    pub fn element_counts(&self) -> ElementCounts {
        ElementCounts {
            entities: self.entities.len(),
            relations: self.relations.len(),
            triples: self.train_triples.len(),
        }
    }

    pub fn train_triples(&self) -> &[Triple] {
        &self.train_triples
    }

    pub fn trained_entities(&self) -> &BTreeSet<EntityId> {
        &self.trained_entities
    }

    pub fn trained_relations(&self) -> &BTreeSet<RelationId> {
        &self.trained_relations
    }

    pub fn snapshots(&self) -> usize {
        self.snapshots
    }
}

/// A fully loaded snapshot sequence sharing one vocabulary.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub snapshots: Vec<Snapshot>,
    /// Vocabulary sizes (entities, relations) right after each snapshot was loaded.
    pub vocab_sizes: Vec<(usize, usize)>,
}

impl Dataset {
    /// Load `<root>/0`, `<root>/1`, ... until the first missing index.
    pub fn load(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::MissingFile(root.to_path_buf()));
        }
        let mut ds = Dataset::default();
        for index in 0.. {
            let dir: PathBuf = root.join(index.to_string());
            if !dir.is_dir() {
                break;
            }
            let snap = load_snapshot_dir(&dir, &mut ds.vocab, index)?;
            ds.push_loaded(snap);
        }
        if ds.snapshots.is_empty() {
            return Err(Error::MissingFile(root.join("0")));
        }
        Ok(ds)
    }

    /// Build from snapshots whose ids are already registered in `vocab` in
    /// snapshot order.
    pub fn from_parts(vocab: Vocabulary, snapshots: Vec<Snapshot>) -> Result<Self> {
        let mut sizes = Vec::with_capacity(snapshots.len());
        let (mut ents, mut rels) = (0usize, 0usize);
        for s in &snapshots {
            if let Some(&e) = s.entities.last() {
                ents = ents.max(e as usize + 1);
            }
            if let Some(&r) = s.relations.last() {
                rels = rels.max(r as usize + 1);
            }
            if ents > vocab.num_entities() || rels > vocab.num_relations() {
                return Err(Error::InvalidArgument(format!(
                    "snapshot {} references ids outside the vocabulary",
                    s.index
                )));
            }
            sizes.push((ents, rels));
        }
        Ok(Self {
            vocab,
            snapshots,
            vocab_sizes: sizes,
        })
    }

    fn push_loaded(&mut self, snap: Snapshot) {
        self.vocab_sizes
            .push((self.vocab.num_entities(), self.vocab.num_relations()));
        self.snapshots.push(snap);
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        for s in &self.snapshots {
            write_snapshot_dir(&root.join(s.index.to_string()), s, &self.vocab)?;
        }
        Ok(())
    }
}
