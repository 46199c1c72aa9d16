//! Event annotation: normalizes mutating events into the fixed schema.
//!
//! Events are processed in consecutive batches through a pluggable backend.
//! The driver enforces the cardinality contract (a batch answer must have one
//! annotation per event), retries on violation, and falls back to all-unknown
//! annotations when a batch keeps failing. A type memory of every resource
//! type accepted so far is threaded through the batches so labeling stays
//! coherent across a trace.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::trace::MutatingEvent;

/// Operation category of an annotated event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Create,
    Delete,
    Attach,
    Detach,
    Update,
    Unknown,
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Category::Create => "create",
            Category::Delete => "delete",
            Category::Attach => "attach",
            Category::Detach => "detach",
            Category::Update => "update",
            Category::Unknown => "unknown",
        };
        f.write_str(s)
    }
}

/// Schema-normalized label of a mutating event. Fields not applicable to the
/// category are `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub category: Category,
    #[serde(rename = "type")]
    pub resource_type: Option<String>,
    pub id: Option<String>,
    pub type1: Option<String>,
    pub id1: Option<String>,
    pub type2: Option<String>,
    pub id2: Option<String>,
}

impl Annotation {
    pub fn node(category: Category, resource_type: &str, id: &str) -> Annotation {
        debug_assert!(matches!(
            category,
            Category::Create | Category::Delete | Category::Update
        ));
        Annotation {
            category,
            resource_type: Some(resource_type.to_string()),
            id: Some(id.to_string()),
            type1: None,
            id1: None,
            type2: None,
            id2: None,
        }
    }

    pub fn relation(category: Category, type1: &str, id1: &str, type2: &str, id2: &str) -> Annotation {
        debug_assert!(matches!(category, Category::Attach | Category::Detach));
        Annotation {
            category,
            resource_type: None,
            id: None,
            type1: Some(type1.to_string()),
            id1: Some(id1.to_string()),
            type2: Some(type2.to_string()),
            id2: Some(id2.to_string()),
        }
    }

    pub fn unknown() -> Annotation {
        Annotation {
            category: Category::Unknown,
            resource_type: None,
            id: None,
            type1: None,
            id1: None,
            type2: None,
            id2: None,
        }
    }

    /// Checks the null-field discipline: node categories carry exactly
    /// (type, id), relation categories exactly (type1, id1, type2, id2),
    /// unknown carries nothing.
    pub fn validate(&self) -> Result<(), SchemaViolation> {
        let node = self.resource_type.is_some() && self.id.is_some();
        let no_node = self.resource_type.is_none() && self.id.is_none();
        let relation = self.type1.is_some()
            && self.id1.is_some()
            && self.type2.is_some()
            && self.id2.is_some();
        let no_relation = self.type1.is_none()
            && self.id1.is_none()
            && self.type2.is_none()
            && self.id2.is_none();
        let ok = match self.category {
            Category::Create | Category::Delete | Category::Update => node && no_relation,
            Category::Attach | Category::Detach => relation && no_node,
            Category::Unknown => no_node && no_relation,
        };
        if ok {
            Ok(())
        } else {
            Err(SchemaViolation { category: self.category })
        }
    }
}

#[derive(Debug, Error)]
#[error("annotation violates null-field discipline for category {category}")]
pub struct SchemaViolation {
    pub category: Category,
}

/// Resource types observed so far in an annotation run. Grows monotonically.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeMemory {
    types: BTreeSet<String>,
}

impl TypeMemory {
    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.types.iter().map(String::as_str)
    }

    pub fn contains(&self, ty: &str) -> bool {
        self.types.contains(ty)
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    fn extend_from(&mut self, annotations: &[Annotation]) {
        for a in annotations {
            for ty in [&a.resource_type, &a.type1, &a.type2].into_iter().flatten() {
                self.types.insert(ty.clone());
            }
        }
    }
}

/// A mutating event paired with its annotation; positional correspondence
/// with the input trace is preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedEvent {
    pub event: MutatingEvent,
    pub annotation: Annotation,
}

/// Static description of the annotation schema, sent to backends verbatim.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaDescriptor {
    pub categories: Vec<String>,
    pub fields: Vec<String>,
}

impl Default for SchemaDescriptor {
    fn default() -> Self {
        SchemaDescriptor {
            categories: ["create", "delete", "attach", "detach", "update", "unknown"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            fields: ["category", "type", "id", "type1", "id1", "type2", "id2"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend transport failure: {0}")]
    Transport(String),
    #[error("backend returned malformed reply: {0}")]
    Format(String),
}

/// An annotation backend maps a batch of events to one annotation per event.
/// The driver treats any violation of that contract as a failed attempt.
pub trait AnnotationBackend {
    fn annotate(
        &self,
        batch: &[MutatingEvent],
        schema: &SchemaDescriptor,
        memory: &TypeMemory,
    ) -> Result<Vec<Annotation>, BackendError>;
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("batch size must be >= 1")]
    InvalidBatchSize,
    #[error("backend unavailable after {attempts} attempts: {last}")]
    BackendUnavailable { attempts: usize, last: String },
    #[error("cardinality mismatch: {events} events vs {annotations} annotations")]
    CardinalityMismatch { events: usize, annotations: usize },
}

/// Driver options beyond batch size and retry count.
#[derive(Debug, Clone)]
pub struct AnnotateOptions {
    /// When false, a batch that exhausts its attempts surfaces
    /// [`AnnotateError::BackendUnavailable`] instead of falling back to
    /// all-unknown annotations.
    pub fallback_to_unknown: bool,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        AnnotateOptions { fallback_to_unknown: true }
    }
}

/// Annotates a trace batch by batch. Per batch, the backend gets up to
/// `retries + 1` attempts; a reply with the wrong cardinality or a
/// schema-violating annotation counts as a failed attempt. Batches that
/// exhaust their attempts fall back to all-unknown annotations, so the output
/// always has one entry per input event.
pub fn annotate_trace(
    events: &[MutatingEvent],
    backend: &dyn AnnotationBackend,
    batch_size: usize,
    retries: usize,
    options: &AnnotateOptions,
) -> Result<Vec<AnnotatedEvent>, AnnotateError> {
    if batch_size == 0 {
        return Err(AnnotateError::InvalidBatchSize);
    }
    let schema = SchemaDescriptor::default();
    let mut memory = TypeMemory::default();
    let mut annotated = Vec::with_capacity(events.len());

    for batch in events.chunks(batch_size) {
        let mut accepted: Option<Vec<Annotation>> = None;
        let mut last_failure = String::new();
        for _attempt in 0..=retries {
            match backend.annotate(batch, &schema, &memory) {
                Ok(reply) => {
                    if reply.len() != batch.len() {
                        last_failure = format!(
                            "cardinality mismatch: {} events vs {} annotations",
                            batch.len(),
                            reply.len()
                        );
                        continue;
                    }
                    if let Some(violation) = reply.iter().find_map(|a| a.validate().err()) {
                        last_failure = violation.to_string();
                        continue;
                    }
                    accepted = Some(reply);
                    break;
                }
                Err(e) => {
                    last_failure = e.to_string();
                }
            }
        }
        match accepted {
            Some(reply) => {
                memory.extend_from(&reply);
                annotated.extend(merge(batch, &reply)?);
            }
            None if options.fallback_to_unknown => {
                let fallback = vec![Annotation::unknown(); batch.len()];
                annotated.extend(merge(batch, &fallback)?);
            }
            None => {
                return Err(AnnotateError::BackendUnavailable {
                    attempts: retries + 1,
                    last: last_failure,
                });
            }
        }
    }
    Ok(annotated)
}

/// Positional pairing of a batch with its annotations.
pub fn merge(
    batch: &[MutatingEvent],
    annotations: &[Annotation],
) -> Result<Vec<AnnotatedEvent>, AnnotateError> {
    if batch.len() != annotations.len() {
        return Err(AnnotateError::CardinalityMismatch {
            events: batch.len(),
            annotations: annotations.len(),
        });
    }
    Ok(batch
        .iter()
        .zip(annotations)
        .map(|(event, annotation)| AnnotatedEvent {
            event: event.clone(),
            annotation: annotation.clone(),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Rule-table backend
// ---------------------------------------------------------------------------

/// Where an identifier is extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamSource {
    Response,
    Request,
}

/// A dotted path into a parameter document; numeric segments index arrays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamPath {
    pub source: ParamSource,
    pub path: String,
}

impl ParamPath {
    pub fn response(path: &str) -> ParamPath {
        ParamPath { source: ParamSource::Response, path: path.to_string() }
    }
    pub fn request(path: &str) -> ParamPath {
        ParamPath { source: ParamSource::Request, path: path.to_string() }
    }

    fn extract(&self, event: &MutatingEvent) -> Option<String> {
        let root = match self.source {
            ParamSource::Response => &event.response_elements,
            ParamSource::Request => &event.request_parameters,
        };
        let mut cursor = root;
        for segment in self.path.split('.') {
            cursor = match cursor {
                Value::Object(map) => map.get(segment)?,
                Value::Array(items) => items.get(segment.parse::<usize>().ok()?)?,
                _ => return None,
            };
        }
        match cursor {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            _ => None,
        }
    }
}

/// How the resource type of a node annotation is determined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeSpec {
    /// Fixed type name.
    Fixed(String),
    /// Inferred from the extracted identifier's prefix (`vpc-` -> `Vpc`).
    FromIdPrefix,
}

/// One rule-table entry: how a single action name maps onto the schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    Node {
        category: Category,
        #[serde(rename = "type")]
        type_spec: TypeSpec,
        id_paths: Vec<ParamPath>,
    },
    Relation {
        category: Category,
        type1: String,
        id1_paths: Vec<ParamPath>,
        type2: String,
        id2_paths: Vec<ParamPath>,
    },
}

/// Deterministic action-name -> annotation-template backend. Identifier
/// extraction tries the listed paths in order (responses before requests for
/// create actions, since that is where fresh ids live).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RuleTable {
    pub rules: std::collections::BTreeMap<String, Rule>,
}

impl RuleTable {
    pub fn from_json_file(path: &std::path::Path) -> Result<RuleTable, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Format(e.to_string()))
    }

    /// The built-in table covering common EC2-family actions.
    pub fn builtin() -> RuleTable {
        use Category::*;
        let mut rules = std::collections::BTreeMap::new();
        let mut node = |name: &str, category: Category, ty: &str, paths: Vec<ParamPath>| {
            rules.insert(
                name.to_string(),
                Rule::Node {
                    category,
                    type_spec: TypeSpec::Fixed(ty.to_string()),
                    id_paths: paths,
                },
            );
        };
        node(
            "RunInstances",
            Create,
            "Instance",
            vec![
                ParamPath::response("instancesSet.items.0.instanceId"),
                ParamPath::response("instanceId"),
            ],
        );
        node(
            "TerminateInstances",
            Delete,
            "Instance",
            vec![
                ParamPath::request("instancesSet.items.0.instanceId"),
                ParamPath::request("instanceId"),
            ],
        );
        node(
            "ModifyInstanceAttribute",
            Update,
            "Instance",
            vec![ParamPath::request("instanceId")],
        );
        node(
            "CreateVpc",
            Create,
            "Vpc",
            vec![ParamPath::response("vpc.vpcId"), ParamPath::response("vpcId")],
        );
        node("DeleteVpc", Delete, "Vpc", vec![ParamPath::request("vpcId")]);
        node("ModifyVpcAttribute", Update, "Vpc", vec![ParamPath::request("vpcId")]);
        node(
            "CreateSubnet",
            Create,
            "Subnet",
            vec![ParamPath::response("subnet.subnetId"), ParamPath::response("subnetId")],
        );
        node("DeleteSubnet", Delete, "Subnet", vec![ParamPath::request("subnetId")]);
        node("ModifySubnetAttribute", Update, "Subnet", vec![ParamPath::request("subnetId")]);
        node(
            "CreateSecurityGroup",
            Create,
            "SecurityGroup",
            vec![ParamPath::response("groupId")],
        );
        node("DeleteSecurityGroup", Delete, "SecurityGroup", vec![ParamPath::request("groupId")]);
        node(
            "AuthorizeSecurityGroupIngress",
            Update,
            "SecurityGroup",
            vec![ParamPath::request("groupId")],
        );
        node(
            "RevokeSecurityGroupIngress",
            Update,
            "SecurityGroup",
            vec![ParamPath::request("groupId")],
        );
        node(
            "CreateVolume",
            Create,
            "Volume",
            vec![ParamPath::response("volumeId")],
        );
        node("DeleteVolume", Delete, "Volume", vec![ParamPath::request("volumeId")]);
        rules.insert(
            "CreateTags".to_string(),
            Rule::Node {
                category: Update,
                type_spec: TypeSpec::FromIdPrefix,
                id_paths: vec![
                    ParamPath::request("resourcesSet.items.0.resourceId"),
                    ParamPath::request("resources.0"),
                ],
            },
        );
        rules.insert(
            "DeleteTags".to_string(),
            Rule::Node {
                category: Update,
                type_spec: TypeSpec::FromIdPrefix,
                id_paths: vec![
                    ParamPath::request("resourcesSet.items.0.resourceId"),
                    ParamPath::request("resources.0"),
                ],
            },
        );
        rules.insert(
            "AttachVolume".to_string(),
            Rule::Relation {
                category: Attach,
                type1: "Volume".to_string(),
                id1_paths: vec![ParamPath::request("volumeId")],
                type2: "Instance".to_string(),
                id2_paths: vec![ParamPath::request("instanceId")],
            },
        );
        rules.insert(
            "DetachVolume".to_string(),
            Rule::Relation {
                category: Detach,
                type1: "Volume".to_string(),
                id1_paths: vec![ParamPath::request("volumeId")],
                type2: "Instance".to_string(),
                id2_paths: vec![ParamPath::request("instanceId")],
            },
        );
        rules.insert(
            "AttachInternetGateway".to_string(),
            Rule::Relation {
                category: Attach,
                type1: "InternetGateway".to_string(),
                id1_paths: vec![ParamPath::request("internetGatewayId")],
                type2: "Vpc".to_string(),
                id2_paths: vec![ParamPath::request("vpcId")],
            },
        );
        rules.insert(
            "DetachInternetGateway".to_string(),
            Rule::Relation {
                category: Detach,
                type1: "InternetGateway".to_string(),
                id1_paths: vec![ParamPath::request("internetGatewayId")],
                type2: "Vpc".to_string(),
                id2_paths: vec![ParamPath::request("vpcId")],
            },
        );
        RuleTable { rules }
    }
}

fn type_from_id_prefix(id: &str) -> Option<&'static str> {
    let table: &[(&str, &str)] = &[
        ("vpc-", "Vpc"),
        ("subnet-", "Subnet"),
        ("i-", "Instance"),
        ("sg-", "SecurityGroup"),
        ("vol-", "Volume"),
        ("igw-", "InternetGateway"),
        ("eni-", "NetworkInterface"),
        ("rtb-", "RouteTable"),
        ("acl-", "NetworkAcl"),
    ];
    table.iter().find(|(p, _)| id.starts_with(p)).map(|(_, t)| *t)
}

impl AnnotationBackend for RuleTable {
    fn annotate(
        &self,
        batch: &[MutatingEvent],
        _schema: &SchemaDescriptor,
        _memory: &TypeMemory,
    ) -> Result<Vec<Annotation>, BackendError> {
        Ok(batch.iter().map(|event| self.annotate_one(event)).collect())
    }
}

impl RuleTable {
    fn annotate_one(&self, event: &MutatingEvent) -> Annotation {
        let Some(rule) = self.rules.get(&event.event_name) else {
            return Annotation::unknown();
        };
        match rule {
            Rule::Node { category, type_spec, id_paths } => {
                let Some(id) = id_paths.iter().find_map(|p| p.extract(event)) else {
                    return Annotation::unknown();
                };
                let ty = match type_spec {
                    TypeSpec::Fixed(t) => t.clone(),
                    TypeSpec::FromIdPrefix => match type_from_id_prefix(&id) {
                        Some(t) => t.to_string(),
                        None => return Annotation::unknown(),
                    },
                };
                Annotation::node(*category, &ty, &id)
            }
            Rule::Relation { category, type1, id1_paths, type2, id2_paths } => {
                let id1 = id1_paths.iter().find_map(|p| p.extract(event));
                let id2 = id2_paths.iter().find_map(|p| p.extract(event));
                match (id1, id2) {
                    (Some(id1), Some(id2)) => {
                        Annotation::relation(*category, type1, &id1, type2, &id2)
                    }
                    _ => Annotation::unknown(),
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// llm-http backend
// ---------------------------------------------------------------------------

/// Wire request for the llm-http annotation backend.
#[derive(Debug, Serialize)]
struct HttpAnnotateRequest<'a> {
    events: &'a [MutatingEvent],
    schema: &'a SchemaDescriptor,
    known_types: Vec<&'a str>,
}

#[derive(Debug, Deserialize)]
struct HttpAnnotateResponse {
    annotations: Vec<Annotation>,
}

/// Backend that serializes (batch, schema, memory) to an HTTP endpoint and
/// parses a structured-array reply.
#[derive(Debug, Clone)]
pub struct LlmHttpBackend {
    pub endpoint: String,
    pub timeout: std::time::Duration,
}

impl LlmHttpBackend {
    pub fn new(endpoint: &str) -> LlmHttpBackend {
        LlmHttpBackend {
            endpoint: endpoint.to_string(),
            timeout: std::time::Duration::from_secs(60),
        }
    }
}

impl AnnotationBackend for LlmHttpBackend {
    fn annotate(
        &self,
        batch: &[MutatingEvent],
        schema: &SchemaDescriptor,
        memory: &TypeMemory,
    ) -> Result<Vec<Annotation>, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let request = HttpAnnotateRequest {
            events: batch,
            schema,
            known_types: memory.types().collect(),
        };
        let reply: HttpAnnotateResponse = client
            .post(&self.endpoint)
            .json(&request)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?
            .error_for_status()
            .map_err(|e| BackendError::Transport(e.to_string()))?
            .json()
            .map_err(|e| BackendError::Format(e.to_string()))?;
        Ok(reply.annotations)
    }
}
