//! Trace consolidation: reduces an annotated trace to persistent drifts.
//!
//! Events are grouped per node identifier and per (id1, id2) edge pair, then
//! reduced independently: a surviving create shadows its updates, a delete
//! shadows everything before it, a create/delete pair marks a transient
//! resource and drops the node entirely, and balanced attach/detach pairs
//! cancel out. The rules operate on multisets, so the result is invariant
//! under event reordering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotate::{AnnotatedEvent, Annotation, Category};
use crate::trace::MutatingEvent;

/// Node-event categories, the subset of the schema that lands in a node history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeCategory {
    Create,
    Delete,
    Update,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeCategory {
    Attach,
    Detach,
}

/// All node events observed for one resource identifier, in trace order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeHistory {
    pub id: String,
    /// Last non-null type observed for this id.
    pub resource_type: Option<String>,
    pub events: Vec<NodeCategory>,
}

/// All attach/detach events observed for one ordered (id1, id2) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeHistory {
    pub id1: String,
    pub id2: String,
    pub type1: Option<String>,
    pub type2: Option<String>,
    pub events: Vec<EdgeCategory>,
}

/// Ordered edge key, exactly as annotated; no symmetrization.
pub type EdgeKey = (String, String);

/// Output of [`group`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grouped {
    pub nodes: BTreeMap<String, NodeHistory>,
    pub edges: BTreeMap<EdgeKey, EdgeHistory>,
    pub unknowns: Vec<AnnotatedEvent>,
}

/// Net persistent drift for one node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeDrift {
    PersistentCreate { resource_type: Option<String> },
    PersistentDelete { resource_type: Option<String> },
    PersistentUpdate { resource_type: Option<String>, updates: usize },
}

impl NodeDrift {
    pub fn resource_type(&self) -> Option<&str> {
        match self {
            NodeDrift::PersistentCreate { resource_type }
            | NodeDrift::PersistentDelete { resource_type }
            | NodeDrift::PersistentUpdate { resource_type, .. } => resource_type.as_deref(),
        }
    }
}

/// Net persistent drift for one edge; `n >= 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeDrift {
    NetAttach { n: usize, type1: Option<String>, type2: Option<String> },
    NetDetach { n: usize, type1: Option<String>, type2: Option<String> },
}

/// Consolidated persistent drifts, keyed by resource id and edge pair.
/// Unknown-category events bypass reduction and ride along verbatim.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DriftSet {
    pub node_drifts: BTreeMap<String, NodeDrift>,
    pub edge_drifts: BTreeMap<EdgeKey, EdgeDrift>,
    pub unknowns: Vec<AnnotatedEvent>,
}

impl DriftSet {
    pub fn is_empty(&self) -> bool {
        self.node_drifts.is_empty() && self.edge_drifts.is_empty()
    }

    /// Synthesizes an annotation sequence whose consolidation is `self`;
    /// also the replay form used by the simulated-cloud oracle
    /// (a `PersistentUpdate` replays as a single update).
    pub fn to_annotations(&self) -> Vec<Annotation> {
        let mut out = Vec::new();
        for (id, drift) in &self.node_drifts {
            let ty = drift.resource_type().unwrap_or("Resource");
            match drift {
                NodeDrift::PersistentCreate { .. } => {
                    out.push(Annotation::node(Category::Create, ty, id));
                }
                NodeDrift::PersistentDelete { .. } => {
                    out.push(Annotation::node(Category::Delete, ty, id));
                }
                NodeDrift::PersistentUpdate { .. } => {
                    out.push(Annotation::node(Category::Update, ty, id));
                }
            }
        }
        for ((id1, id2), drift) in &self.edge_drifts {
            let (category, n, type1, type2) = match drift {
                EdgeDrift::NetAttach { n, type1, type2 } => (Category::Attach, *n, type1, type2),
                EdgeDrift::NetDetach { n, type1, type2 } => (Category::Detach, *n, type1, type2),
            };
            let t1 = type1.as_deref().unwrap_or("Resource");
            let t2 = type2.as_deref().unwrap_or("Resource");
            for _ in 0..n {
                out.push(Annotation::relation(category, t1, id1, t2, id2));
            }
        }
        out
    }

    /// Wraps [`DriftSet::to_annotations`] into synthetic annotated events.
    pub fn to_annotated_events(&self) -> Vec<AnnotatedEvent> {
        self.to_annotations()
            .into_iter()
            .enumerate()
            .map(|(ordinal, annotation)| AnnotatedEvent {
                event: MutatingEvent {
                    event_name: "synthetic".to_string(),
                    event_source: String::new(),
                    request_parameters: serde_json::Value::Null,
                    response_elements: serde_json::Value::Null,
                    ordinal,
                },
                annotation,
            })
            .collect()
    }
}

/// Organizes annotated events by resource identifier and edge pair.
/// Annotations must satisfy the null-field discipline.
pub fn group(annotated: &[AnnotatedEvent]) -> Grouped {
    let mut grouped = Grouped::default();
    for item in annotated {
        let a = &item.annotation;
        match a.category {
            Category::Create | Category::Delete | Category::Update => {
                let id = a.id.clone().expect("node annotation carries id");
                let history = grouped.nodes.entry(id.clone()).or_insert_with(|| NodeHistory {
                    id,
                    resource_type: None,
                    events: Vec::new(),
                });
                if a.resource_type.is_some() {
                    history.resource_type = a.resource_type.clone();
                }
                history.events.push(match a.category {
                    Category::Create => NodeCategory::Create,
                    Category::Delete => NodeCategory::Delete,
                    _ => NodeCategory::Update,
                });
            }
            Category::Attach | Category::Detach => {
                let id1 = a.id1.clone().expect("relation annotation carries id1");
                let id2 = a.id2.clone().expect("relation annotation carries id2");
                let history = grouped
                    .edges
                    .entry((id1.clone(), id2.clone()))
                    .or_insert_with(|| EdgeHistory {
                        id1,
                        id2,
                        type1: None,
                        type2: None,
                        events: Vec::new(),
                    });
                if a.type1.is_some() {
                    history.type1 = a.type1.clone();
                }
                if a.type2.is_some() {
                    history.type2 = a.type2.clone();
                }
                history.events.push(match a.category {
                    Category::Attach => EdgeCategory::Attach,
                    _ => EdgeCategory::Detach,
                });
            }
            Category::Unknown => grouped.unknowns.push(item.clone()),
        }
    }
    grouped
}

/// Applies the per-node and per-edge reduction rules.
///
/// Node rules (on multisets; log order is unreliable):
/// - create present, no delete: persistent create;
/// - delete present, no create: persistent delete;
/// - both create and delete: transient resource, dropped entirely;
/// - only updates: persistent update retaining the count.
///
/// Edge rule: net = #attach - #detach; zero net is dropped.
pub fn reduce(grouped: &Grouped) -> DriftSet {
    let mut drifts = DriftSet { unknowns: grouped.unknowns.clone(), ..DriftSet::default() };
    for (id, history) in &grouped.nodes {
        let creates = history.events.iter().filter(|e| **e == NodeCategory::Create).count();
        let deletes = history.events.iter().filter(|e| **e == NodeCategory::Delete).count();
        let updates = history.events.iter().filter(|e| **e == NodeCategory::Update).count();
        let resource_type = history.resource_type.clone();
        let drift = match (creates > 0, deletes > 0) {
            (true, true) => None,
            (true, false) => Some(NodeDrift::PersistentCreate { resource_type }),
            (false, true) => Some(NodeDrift::PersistentDelete { resource_type }),
            (false, false) if updates > 0 => {
                Some(NodeDrift::PersistentUpdate { resource_type, updates })
            }
            (false, false) => None,
        };
        if let Some(drift) = drift {
            drifts.node_drifts.insert(id.clone(), drift);
        }
    }
    for (key, history) in &grouped.edges {
        let attaches = history.events.iter().filter(|e| **e == EdgeCategory::Attach).count() as i64;
        let detaches = history.events.iter().filter(|e| **e == EdgeCategory::Detach).count() as i64;
        let net = attaches - detaches;
        let drift = if net > 0 {
            Some(EdgeDrift::NetAttach {
                n: net as usize,
                type1: history.type1.clone(),
                type2: history.type2.clone(),
            })
        } else if net < 0 {
            Some(EdgeDrift::NetDetach {
                n: (-net) as usize,
                type1: history.type1.clone(),
                type2: history.type2.clone(),
            })
        } else {
            None
        };
        if let Some(drift) = drift {
            drifts.edge_drifts.insert(key.clone(), drift);
        }
    }
    drifts
}

/// The full reduction: `reduce(group(annotated))`.
pub fn consolidate(annotated: &[AnnotatedEvent]) -> DriftSet {
    reduce(&group(annotated))
}

// --- serialization -------------------------------------------------------
//
// Edge keys are pairs, which JSON objects cannot key directly; the document
// form lists edges as an array sorted by (id1, id2).

#[derive(Debug, Serialize, Deserialize)]
struct EdgeDriftDoc {
    id1: String,
    id2: String,
    #[serde(flatten)]
    drift: EdgeDrift,
}

#[derive(Debug, Serialize, Deserialize)]
struct DriftSetDoc {
    node_drifts: BTreeMap<String, NodeDrift>,
    edge_drifts: Vec<EdgeDriftDoc>,
    unknowns: Vec<AnnotatedEvent>,
}

impl Serialize for DriftSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let doc = DriftSetDoc {
            node_drifts: self.node_drifts.clone(),
            edge_drifts: self
                .edge_drifts
                .iter()
                .map(|((id1, id2), drift)| EdgeDriftDoc {
                    id1: id1.clone(),
                    id2: id2.clone(),
                    drift: drift.clone(),
                })
                .collect(),
            unknowns: self.unknowns.clone(),
        };
        doc.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DriftSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = DriftSetDoc::deserialize(deserializer)?;
        Ok(DriftSet {
            node_drifts: doc.node_drifts,
            edge_drifts: doc
                .edge_drifts
                .into_iter()
                .map(|e| ((e.id1, e.id2), e.drift))
                .collect(),
            unknowns: doc.unknowns,
        })
    }
}
