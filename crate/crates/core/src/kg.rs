//! In-memory knowledge graph: vocabularies, deduplicated triplets and sorted
//! adjacency lists.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::text::{normalize_entity, normalize_relation};

/// Dense entity index into [`KnowledgeGraph::entities`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

/// Dense relation index into [`KnowledgeGraph::relations`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triplet {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triplet { head, relation, tail }
    }
}

/// Number of merged relation types in the bundled ConceptNet map.
pub const DEFAULT_MERGED_RELATIONS: usize = 17;

const DEFAULT_MERGE_JSON: &str = include_str!("../data/relation_merge.json");

/// Maps raw relation names onto a smaller merged set.
///
/// Keys and values are stored in normalized form (see
/// [`normalize_relation`]); merged names always resolve to themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationMergeMap {
    map: BTreeMap<String, String>,
    merged: BTreeSet<String>,
    strict: bool,
}

impl RelationMergeMap {
    /// Parses a JSON object `{raw: merged}` and checks that it produces
    /// exactly `expected_merged` distinct merged relations.
    pub fn from_json(text: &str, expected_merged: usize, strict: bool) -> Result<Self> {
        let raw: BTreeMap<String, String> = serde_json::from_str(text)?;
        let mut map = BTreeMap::new();
        for (k, v) in raw {
            let key = normalize_relation(&k)
                .ok_or_else(|| Error::Config(format!("empty relation key `{k}` in merge map")))?;
            let val = normalize_relation(&v)
                .ok_or_else(|| Error::Config(format!("empty merged relation for `{k}`")))?;
            if let Some(prev) = map.insert(key.clone(), val.clone()) {
                if prev != val {
                    return Err(Error::Config(format!(
                        "relation `{key}` maps to both `{prev}` and `{val}`"
                    )));
                }
            }
        }
        let merged: BTreeSet<String> = map.values().cloned().collect();
        for name in &merged {
            if let Some(other) = map.get(name).filter(|&o| o != name) {
                return Err(Error::Config(format!(
                    "merged relation `{name}` is itself remapped to `{other}`"
                )));
            }
        }
        if merged.len() != expected_merged {
            return Err(Error::Config(format!(
                "merge map produces {} merged relations, expected {expected_merged}",
                merged.len()
            )));
        }
        Ok(RelationMergeMap { map, merged, strict })
    }

    pub fn load(path: &Path, expected_merged: usize, strict: bool) -> Result<Self> {
        Self::from_json(&read_to_string(path)?, expected_merged, strict)
    }

    /// The bundled 17-relation ConceptNet map, strict.
    pub fn conceptnet() -> Self {
        Self::from_json(DEFAULT_MERGE_JSON, DEFAULT_MERGED_RELATIONS, true)
            .expect("bundled merge map is valid")
    }

    /// Pass-through map: every relation keeps its normalized name.
    pub fn identity() -> Self {
        RelationMergeMap {
            map: BTreeMap::new(),
            merged: BTreeSet::new(),
            strict: false,
        }
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    pub fn merged_names(&self) -> impl Iterator<Item = &str> {
        self.merged.iter().map(String::as_str)
    }

    /// Resolves a raw relation name to its merged name.
    pub fn resolve(&self, raw: &str) -> Result<String> {
        let key = normalize_relation(raw).ok_or_else(|| Error::UnmappedRelation(raw.to_string()))?;
        if let Some(m) = self.map.get(&key) {
            return Ok(m.clone());
        }
        if self.merged.contains(&key) || !self.strict {
            return Ok(key);
        }
        Err(Error::UnmappedRelation(raw.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub entities: usize,
    pub relations: usize,
    pub triplets: usize,
    pub max_out_degree: usize,
}

/// Directed multi-relational graph over normalized entity strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_index: HashMap<String, RelationId>,
    triplets: Vec<Triplet>,
    adjacency: Vec<Vec<(RelationId, EntityId)>>,
}

const GRAPH_DUMP_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GraphDump {
    version: u32,
    entities: Vec<String>,
    relations: Vec<String>,
    triplets: Vec<[u32; 3]>,
}

impl KnowledgeGraph {
    pub fn empty() -> Self {
        KnowledgeGraph {
            entities: Vec::new(),
            relations: Vec::new(),
            entity_index: HashMap::new(),
            relation_index: HashMap::new(),
            triplets: Vec::new(),
            adjacency: Vec::new(),
        }
    }

    /// Builds a graph from explicit vocabularies and triplets. Duplicate
    /// triplets are dropped; out-of-range ids are rejected.
    pub fn from_parts(
        entities: Vec<String>,
        relations: Vec<String>,
        triplets: impl IntoIterator<Item = Triplet>,
    ) -> Result<Self> {
        let entity_index = index_names(&entities, "entity")?
            .into_iter()
            .map(|(k, v)| (k, EntityId(v)))
            .collect();
        let relation_index = index_names(&relations, "relation")?
            .into_iter()
            .map(|(k, v)| (k, RelationId(v)))
            .collect();
        let mut triplets: Vec<Triplet> = triplets.into_iter().collect();
        for t in &triplets {
            for e in [t.head, t.tail] {
                if e.index() >= entities.len() {
                    return Err(Error::Lookup {
                        kind: "entity",
                        id: e.index(),
                        len: entities.len(),
                    });
                }
            }
            if t.relation.index() >= relations.len() {
                return Err(Error::Lookup {
                    kind: "relation",
                    id: t.relation.index(),
                    len: relations.len(),
                });
            }
        }
        triplets.sort_unstable();
        triplets.dedup();

        let mut adjacency = vec![Vec::new(); entities.len()];
        for t in &triplets {
            adjacency[t.head.index()].push((t.relation, t.tail));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(KnowledgeGraph {
            entities,
            relations,
            entity_index,
            relation_index,
            triplets,
            adjacency,
        })
    }

    /// Parses a `head<TAB>relation<TAB>tail` listing.
    ///
    /// Entities are normalized, relations merged, duplicates removed. Ids are
    /// handed out in order of first appearance after sorting the normalized
    /// triplets lexicographically, so the same triplet set always produces
    /// the same ids.
    pub fn parse_tsv(text: &str, source_name: &str, merge: &RelationMergeMap) -> Result<Self> {
        let mut rows: Vec<(String, String, String)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("expected 3 tab-separated columns, found {}", fields.len()),
                ));
            }
            let head = normalize_entity(fields[0])
                .ok_or_else(|| Error::parse(source_name, lineno, "empty head entity"))?;
            let tail = normalize_entity(fields[2])
                .ok_or_else(|| Error::parse(source_name, lineno, "empty tail entity"))?;
            if fields[1].trim().is_empty() {
                return Err(Error::parse(source_name, lineno, "empty relation"));
            }
            let rel = merge.resolve(fields[1])?;
            rows.push((head, rel, tail));
        }
        rows.sort_unstable();
        rows.dedup();

        let mut entities = Vec::new();
        let mut relations = Vec::new();
        let mut ent_ids: HashMap<String, EntityId> = HashMap::new();
        let mut rel_ids: HashMap<String, RelationId> = HashMap::new();
        let mut triplets = Vec::with_capacity(rows.len());
        for (h, r, t) in rows {
            let h = intern(&mut ent_ids, &mut entities, h, EntityId);
            let r = intern(&mut rel_ids, &mut relations, r, RelationId);
            let t = intern(&mut ent_ids, &mut entities, t, EntityId);
            triplets.push(Triplet::new(h, r, t));
        }
        Self::from_parts(entities, relations, triplets)
    }

    pub fn load_tsv(path: &Path, merge: &RelationMergeMap) -> Result<Self> {
        Self::parse_tsv(&read_to_string(path)?, &path.display().to_string(), merge)
    }

    /// Writes the triplets back in TSV form with merged relation names.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triplets {
            out.push_str(&self.entities[t.head.index()]);
            out.push('\t');
            out.push_str(&self.relations[t.relation.index()]);
            out.push('\t');
            out.push_str(&self.entities[t.tail.index()]);
            out.push('\n');
        }
        out
    }

    /// Versioned JSON dump; [`KnowledgeGraph::from_json`] restores it exactly.
    pub fn to_json(&self) -> String {
        let dump = GraphDump {
            version: GRAPH_DUMP_VERSION,
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            triplets: self
                .triplets
                .iter()
                .map(|t| [t.head.0, t.relation.0, t.tail.0])
                .collect(),
        };
        serde_json::to_string(&dump).expect("graph dump serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dump: GraphDump = serde_json::from_str(text)?;
        if dump.version != GRAPH_DUMP_VERSION {
            return Err(Error::Input(format!("unsupported graph dump version {}", dump.version)));
        }
        Self::from_parts(
            dump.entities,
            dump.relations,
            dump.triplets
                .into_iter()
                .map(|[h, r, t]| Triplet::new(EntityId(h), RelationId(r), EntityId(t))),
        )
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> Result<&str> {
        self.entities.get(id.index()).map(String::as_str).ok_or(Error::Lookup {
            kind: "entity",
            id: id.index(),
            len: self.entities.len(),
        })
    }

    pub fn relation_name(&self, id: RelationId) -> Result<&str> {
        self.relations.get(id.index()).map(String::as_str).ok_or(Error::Lookup {
            kind: "relation",
            id: id.index(),
            len: self.relations.len(),
        })
    }

    /// Outgoing edges of `e`, sorted by `(relation, tail)`.
    pub fn neighbors(&self, e: EntityId) -> Result<&[(RelationId, EntityId)]> {
        self.adjacency
            .get(e.index())
            .map(Vec::as_slice)
            .ok_or(Error::Lookup {
                kind: "entity",
                id: e.index(),
                len: self.entities.len(),
            })
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.triplets.binary_search(t).is_ok()
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            entities: self.entities.len(),
            relations: self.relations.len(),
            triplets: self.triplets.len(),
            max_out_degree: self.adjacency.iter().map(Vec::len).max().unwrap_or(0),
        }
    }

    /// Same vocabularies, different edge set.
    pub(crate) fn with_triplets(&self, triplets: Vec<Triplet>) -> Self {
        let mut adjacency = vec![Vec::new(); self.entities.len()];
        let mut triplets = triplets;
        triplets.sort_unstable();
        triplets.dedup();
        for t in &triplets {
            adjacency[t.head.index()].push((t.relation, t.tail));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        KnowledgeGraph {
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            entity_index: self.entity_index.clone(),
            relation_index: self.relation_index.clone(),
            triplets,
            adjacency,
        }
    }
}

fn index_names(names: &[String], kind: &str) -> Result<HashMap<String, u32>> {
    let mut index = HashMap::with_capacity(names.len());
    for (i, n) in names.iter().enumerate() {
        if index.insert(n.clone(), i as u32).is_some() {
            return Err(Error::Input(format!("duplicate {kind} name `{n}`")));
        }
    }
    Ok(index)
}

fn intern<I: Copy>(
    ids: &mut HashMap<String, I>,
    names: &mut Vec<String>,
    name: String,
    make: impl Fn(u32) -> I,
) -> I {
    if let Some(&id) = ids.get(&name) {
        return id;
    }
    let id = make(names.len() as u32);
    names.push(name.clone());
    ids.insert(name, id);
    id
}
