//! Deterministic simulated cloud: a resource-graph state machine over
//! annotated events.
//!
//! Serves three roles: brute-force oracle for consolidation, live-state
//! provider for tests, and drift-injection engine for the evaluation harness.
//! All operations are total; out-of-order effects (update before create,
//! detach with no edge) accumulate warnings instead of aborting, matching the
//! tolerance required of unreliable audit-log ordering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annotate::{AnnotatedEvent, Annotation, Category};

pub type AttrMap = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    #[serde(rename = "type")]
    pub resource_type: String,
    #[serde(default)]
    pub attributes: AttrMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EdgeDoc {
    id1: String,
    id2: String,
    count: u32,
    #[serde(default)]
    relation: String,
}

/// The whole simulated remote state as one inspectable value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CloudState {
    pub nodes: BTreeMap<String, Node>,
    /// Edge occurrence counts keyed by the ordered (id1, id2) pair.
    pub edges: BTreeMap<(String, String), u32>,
    /// Informational relation label per edge (last observed types).
    pub relations: BTreeMap<(String, String), String>,
    pub warnings: Vec<String>,
}

impl CloudState {
    pub fn new() -> CloudState {
        CloudState::default()
    }

    pub fn with_node(mut self, id: &str, resource_type: &str, attributes: AttrMap) -> CloudState {
        self.nodes.insert(id.to_string(), Node { resource_type: resource_type.to_string(), attributes });
        self
    }

    pub fn with_edge(mut self, id1: &str, id2: &str, count: u32) -> CloudState {
        if count > 0 {
            self.edges.insert((id1.to_string(), id2.to_string()), count);
        }
        self
    }

    /// (id -> type) view used for oracle comparisons.
    pub fn node_set(&self) -> BTreeMap<&str, &str> {
        self.nodes
            .iter()
            .map(|(id, node)| (id.as_str(), node.resource_type.as_str()))
            .collect()
    }

    /// Edge multiset view used for oracle comparisons.
    pub fn edge_multiset(&self) -> &BTreeMap<(String, String), u32> {
        &self.edges
    }

    /// Edges whose endpoints reference no existing node. Never silently
    /// dropped; queryable here.
    pub fn dangling_edges(&self) -> Vec<&(String, String)> {
        self.edges
            .keys()
            .filter(|(a, b)| !self.nodes.contains_key(a) || !self.nodes.contains_key(b))
            .collect()
    }

    /// Applies one annotation. `payload` is merged into the node's attributes
    /// for create/update.
    pub fn apply(mut self, a: &Annotation, payload: Option<&AttrMap>) -> CloudState {
        match a.category {
            Category::Create => {
                let id = a.id.clone().expect("create carries id");
                let ty = a.resource_type.clone().unwrap_or_else(|| "Resource".to_string());
                if self.nodes.contains_key(&id) {
                    self.warnings.push(format!("create overwrote existing node {id}"));
                }
                let mut attributes = AttrMap::new();
                if let Some(payload) = payload {
                    attributes.extend(payload.clone());
                }
                self.nodes.insert(id, Node { resource_type: ty, attributes });
            }
            Category::Delete => {
                let id = a.id.as_deref().expect("delete carries id");
                if self.nodes.remove(id).is_none() {
                    self.warnings.push(format!("delete of absent node {id}"));
                }
                self.edges.retain(|(a_, b_), _| a_ != id && b_ != id);
                self.relations.retain(|(a_, b_), _| a_ != id && b_ != id);
            }
            Category::Update => {
                let id = a.id.clone().expect("update carries id");
                let ty = a.resource_type.clone().unwrap_or_else(|| "Resource".to_string());
                if !self.nodes.contains_key(&id) {
                    // Updates may arrive before the create they follow.
                    self.warnings.push(format!("update inserted absent node {id}"));
                }
                let node = self.nodes.entry(id).or_insert_with(|| {
                    Node { resource_type: ty.clone(), attributes: AttrMap::new() }
                });
                node.resource_type = ty;
                if let Some(payload) = payload {
                    node.attributes.extend(payload.clone());
                }
            }
            Category::Attach => {
                let key = (
                    a.id1.clone().expect("attach carries id1"),
                    a.id2.clone().expect("attach carries id2"),
                );
                *self.edges.entry(key.clone()).or_insert(0) += 1;
                if let (Some(t1), Some(t2)) = (&a.type1, &a.type2) {
                    self.relations.insert(key, format!("{t1}->{t2}"));
                }
            }
            Category::Detach => {
                let key = (
                    a.id1.clone().expect("detach carries id1"),
                    a.id2.clone().expect("detach carries id2"),
                );
                match self.edges.get_mut(&key) {
                    Some(count) if *count > 1 => *count -= 1,
                    Some(_) => {
                        self.edges.remove(&key);
                        self.relations.remove(&key);
                    }
                    None => self
                        .warnings
                        .push(format!("detach of absent edge ({}, {})", key.0, key.1)),
                }
            }
            Category::Unknown => {
                self.warnings.push("apply called with unknown annotation".to_string());
            }
        }
        self
    }

    /// Left fold of [`CloudState::apply`] over a trace. Unknown annotations
    /// are skipped with a warning. When `payloads` is given it supplies the
    /// attribute map per event, keyed by trace position.
    pub fn replay<'a, I>(self, trace: I, payloads: Option<&BTreeMap<usize, AttrMap>>) -> CloudState
    where
        I: IntoIterator<Item = &'a Annotation>,
    {
        trace.into_iter().enumerate().fold(self, |state, (i, a)| {
            if a.category == Category::Unknown {
                let mut state = state;
                state.warnings.push(format!("replay skipped unknown annotation at {i}"));
                state
            } else {
                state.apply(a, payloads.and_then(|p| p.get(&i)))
            }
        })
    }

    /// Convenience replay over annotated events.
    pub fn replay_events(self, trace: &[AnnotatedEvent]) -> CloudState {
        self.replay(trace.iter().map(|e| &e.annotation), None)
    }
}

// --- document form -------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CloudStateDoc {
    nodes: BTreeMap<String, Node>,
    #[serde(default)]
    edges: Vec<EdgeDoc>,
    #[serde(default)]
    warnings: Vec<String>,
}

impl Serialize for CloudState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let doc = CloudStateDoc {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|((id1, id2), count)| EdgeDoc {
                    id1: id1.clone(),
                    id2: id2.clone(),
                    count: *count,
                    relation: self
                        .relations
                        .get(&(id1.clone(), id2.clone()))
                        .cloned()
                        .unwrap_or_default(),
                })
                .collect(),
            warnings: self.warnings.clone(),
        };
        doc.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CloudState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = CloudStateDoc::deserialize(deserializer)?;
        let mut state = CloudState { nodes: doc.nodes, warnings: doc.warnings, ..CloudState::default() };
        for edge in doc.edges {
            let key = (edge.id1, edge.id2);
            if !edge.relation.is_empty() {
                state.relations.insert(key.clone(), edge.relation);
            }
            state.edges.insert(key, edge.count);
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_inserts_node() {
        let state = CloudState::new().apply(&Annotation::node(Category::Create, "Vpc", "vpc-123"), None);
        assert!(state.nodes.contains_key("vpc-123"));
        assert_eq!(state.nodes["vpc-123"].resource_type, "Vpc");
    }

    #[test]
    fn create_then_delete_is_identity_on_sets() {
        let state = CloudState::new()
            .apply(&Annotation::node(Category::Create, "Vpc", "vpc-1"), None)
            .apply(&Annotation::node(Category::Delete, "Vpc", "vpc-1"), None);
        assert!(state.nodes.is_empty());
        assert!(state.edges.is_empty());
    }

    #[test]
    fn attach_then_detach_cancels() {
        let attach = Annotation::relation(Category::Attach, "Volume", "vol-1", "Instance", "i-2");
        let detach = Annotation::relation(Category::Detach, "Volume", "vol-1", "Instance", "i-2");
        let state = CloudState::new().apply(&attach, None).apply(&detach, None);
        assert!(state.edges.is_empty());
    }

    #[test]
    fn delete_is_idempotent_with_warning() {
        let delete = Annotation::node(Category::Delete, "Vpc", "vpc-1");
        let state = CloudState::new()
            .apply(&Annotation::node(Category::Create, "Vpc", "vpc-1"), None)
            .apply(&delete, None)
            .apply(&delete, None);
        assert!(state.nodes.is_empty());
        assert_eq!(state.warnings.len(), 1);
    }

    #[test]
    fn delete_removes_incident_edges() {
        let state = CloudState::new()
            .apply(&Annotation::node(Category::Create, "Volume", "vol-1"), None)
            .apply(&Annotation::relation(Category::Attach, "Volume", "vol-1", "Instance", "i-2"), None)
            .apply(&Annotation::node(Category::Delete, "Volume", "vol-1"), None);
        assert!(state.edges.is_empty());
    }

    #[test]
    fn update_on_absent_node_inserts_with_warning_free_tolerance() {
        let state = CloudState::new().apply(&Annotation::node(Category::Update, "Vpc", "vpc-1"), None);
        assert!(state.nodes.contains_key("vpc-1"));
    }

    #[test]
    fn update_merges_payload_last_write_wins() {
        let mut p1 = AttrMap::new();
        p1.insert("cidr".to_string(), serde_json::json!("10.0.0.0/16"));
        let mut p2 = AttrMap::new();
        p2.insert("cidr".to_string(), serde_json::json!("10.1.0.0/16"));
        let a = Annotation::node(Category::Update, "Vpc", "vpc-1");
        let state = CloudState::new().apply(&a, Some(&p1)).apply(&a, Some(&p2));
        assert_eq!(state.nodes["vpc-1"].attributes["cidr"], "10.1.0.0/16");
    }

    #[test]
    fn replay_empty_is_identity() {
        let base = CloudState::new().with_node("vpc-1", "Vpc", AttrMap::new());
        let replayed = base.clone().replay([], None);
        assert_eq!(base, replayed);
    }

    #[test]
    fn replay_transient_lifecycle_returns_to_initial() {
        let initial = CloudState::new().with_node("vpc-0", "Vpc", AttrMap::new());
        let trace = [
            Annotation::node(Category::Create, "Instance", "i-9"),
            Annotation::node(Category::Update, "Instance", "i-9"),
            Annotation::node(Category::Delete, "Instance", "i-9"),
        ];
        let replayed = initial.clone().replay(trace.iter(), None);
        assert_eq!(initial.node_set(), replayed.node_set());
        assert_eq!(initial.edge_multiset(), replayed.edge_multiset());
    }

    #[test]
    fn dangling_edges_are_queryable_not_dropped() {
        let state = CloudState::new()
            .apply(&Annotation::relation(Category::Attach, "Volume", "vol-1", "Instance", "i-2"), None);
        assert_eq!(state.dangling_edges().len(), 1);
    }

    #[test]
    fn determinism_identical_inputs_identical_states() {
        let trace = [
            Annotation::node(Category::Create, "Vpc", "vpc-1"),
            Annotation::relation(Category::Attach, "Volume", "vol-1", "Instance", "i-2"),
            Annotation::node(Category::Update, "Vpc", "vpc-1"),
        ];
        let a = CloudState::new().replay(trace.iter(), None);
        let b = CloudState::new().replay(trace.iter(), None);
        assert_eq!(a, b);
    }

    #[test]
    fn state_document_round_trip() {
        let state = CloudState::new()
            .with_node("vpc-1", "Vpc", AttrMap::new())
            .with_edge("vol-1", "i-2", 2);
        let json = serde_json::to_string_pretty(&state).unwrap();
        let back: CloudState = serde_json::from_str(&json).unwrap();
        assert_eq!(state, back);
    }
}
