//! Form Entity Relation Graph.
//!
//! Built in four steps: candidate adjacency between non-container nodes,
//! cosine-weighted local edges, pruning (auxiliary text nodes keep a single
//! text–input edge; text–text edges must clear `μ + λ·σ`), and relevant-input
//! edges between fields filtered by the same statistic.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use alloc::sync::Arc;

use crate::dom::{DomTree, ElementKind, FormModel, NodeId};
use crate::embed::{
    build_embedding_space_with, structural_embed, EmbedError, EmbeddingSpace, EmbeddingVector, Node2VecParams,
    TextEmbedProvider,
};

/// Slack when comparing a weight against the retention threshold, so that
/// equal weights survive despite rounding in the mean.
const THRESHOLD_EPS: f64 = 1e-12;

/// Pixel gap under which two bounding boxes count as sharing a boundary.
pub const GEOMETRY_TOLERANCE_PX: f64 = 16.0;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum FergError {
    #[error("no embedding for node {0}")]
    MissingEmbedding(NodeId),
    #[error("node {0} is not in the graph")]
    UnknownNode(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    LocalTextual,
    RelevantInput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FergEdge {
    pub a: NodeId,
    pub b: NodeId,
    pub weight: f64,
    pub kind: EdgeKind,
}

impl FergEdge {
    /// Endpoints are stored in ascending order.
    pub fn new(x: NodeId, y: NodeId, weight: f64, kind: EdgeKind) -> Self {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        FergEdge { a, b, weight, kind }
    }

    pub fn touches(&self, n: NodeId) -> bool {
        self.a == n || self.b == n
    }

    pub fn other(&self, n: NodeId) -> NodeId {
        if self.a == n {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FergNode {
    pub id: NodeId,
    pub kind: ElementKind,
    pub doc_order: usize,
    /// Text for text elements, field key for inputs.
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ferg {
    nodes: Vec<FergNode>,
    edges: Vec<FergEdge>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdMode {
    Population,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruningParams {
    pub lambda: f64,
    pub std_mode: StdMode,
}

impl Default for PruningParams {
    fn default() -> Self {
        PruningParams { lambda: 0.5, std_mode: StdMode::Population }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    /// Euclidean gap between two rectangles; zero when they touch or overlap.
    pub fn gap(&self, other: &BoundingBox) -> f64 {
        let dx = (self.x.max(other.x) - (self.x + self.w).min(other.x + other.w)).max(0.0);
        let dy = (self.y.max(other.y) - (self.y + self.h).min(other.y + other.h)).max(0.0);
        libm::sqrt(dx * dx + dy * dy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdjacencyHints {
    /// Rendered boxes per non-container node. When present, geometry decides
    /// adjacency; nodes without a box are never adjacent.
    pub boxes: Option<BTreeMap<NodeId, BoundingBox>>,
    /// Document-order window used when no boxes are supplied.
    pub window: usize,
}

impl Default for AdjacencyHints {
    fn default() -> Self {
        AdjacencyHints { boxes: None, window: 3 }
    }
}

/// Unordered pairs (lower id first) of non-container nodes considered
/// visually adjacent.
pub fn candidate_adjacency(model: &FormModel, hints: &AdjacencyHints) -> BTreeSet<(NodeId, NodeId)> {
    let seq = model.non_container_nodes();
    let mut pairs = BTreeSet::new();
    for (i, &a) in seq.iter().enumerate() {
        for (j, &b) in seq.iter().enumerate().skip(i + 1) {
            let adjacent = match &hints.boxes {
                Some(boxes) => match (boxes.get(&a), boxes.get(&b)) {
                    (Some(x), Some(y)) => x.gap(y) <= GEOMETRY_TOLERANCE_PX,
                    _ => false,
                },
                None => j - i <= hints.window,
            };
            if adjacent {
                pairs.insert((a, b));
            }
        }
    }
    pairs
}

pub fn build_local_graph(
    model: &FormModel,
    space: &EmbeddingSpace,
    pairs: &BTreeSet<(NodeId, NodeId)>,
) -> Result<Ferg, FergError> {
    let nodes = model
        .non_container_nodes()
        .into_iter()
        .map(|id| {
            let (kind, label) = match model.field_by_node(id) {
                Some(f) => (ElementKind::InputField, f.key.clone()),
                None => (
                    ElementKind::TextElement,
                    model.text_by_node(id).map(|t| t.text.clone()).unwrap_or_default(),
                ),
            };
            FergNode { id, kind, doc_order: id.0, label }
        })
        .collect();
    let mut edges = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let va = space.vector(a).ok_or(FergError::MissingEmbedding(a))?;
        let vb = space.vector(b).ok_or(FergError::MissingEmbedding(b))?;
        let w = crate::embed::cosine_sim(&va, &vb).map_err(|_| FergError::MissingEmbedding(a))?;
        edges.push(FergEdge::new(a, b, w, EdgeKind::LocalTextual));
    }
    Ok(Ferg { nodes, edges })
}

/// `μ + λ·σ` over `weights`, or `None` when fewer than two weights exist.
pub fn retention_threshold(weights: &[f64], params: &PruningParams) -> Option<f64> {
    if weights.len() < 2 {
        return None;
    }
    let n = weights.len() as f64;
    let mean = weights.iter().sum::<f64>() / n;
    let ss: f64 = weights.iter().map(|w| (w - mean) * (w - mean)).sum();
    let var = match params.std_mode {
        StdMode::Population => ss / n,
        StdMode::Sample => ss / (n - 1.0),
    };
    Some(mean + params.lambda * libm::sqrt(var))
}

fn keeps(weight: f64, threshold: Option<f64>) -> bool {
    threshold.is_none_or(|t| weight >= t - THRESHOLD_EPS)
}

impl Ferg {
    pub fn new(nodes: Vec<FergNode>, edges: Vec<FergEdge>) -> Self {
        Ferg { nodes, edges }
    }

    pub fn nodes(&self) -> &[FergNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[FergEdge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Option<&FergNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    fn kind(&self, id: NodeId) -> Option<ElementKind> {
        self.node(id).map(|n| n.kind)
    }

    fn is_text_input(&self, e: &FergEdge) -> bool {
        let (ka, kb) = (self.kind(e.a), self.kind(e.b));
        e.kind == EdgeKind::LocalTextual
            && matches!(
                (ka, kb),
                (Some(ElementKind::TextElement), Some(ElementKind::InputField))
                    | (Some(ElementKind::InputField), Some(ElementKind::TextElement))
            )
    }

    fn is_text_text(&self, e: &FergEdge) -> bool {
        e.kind == EdgeKind::LocalTextual
            && self.kind(e.a) == Some(ElementKind::TextElement)
            && self.kind(e.b) == Some(ElementKind::TextElement)
    }

    /// Highest-weight text element attached to `field` by a local edge.
    pub fn label_of(&self, field: NodeId) -> Option<NodeId> {
        self.edges
            .iter()
            .filter(|e| e.touches(field) && self.is_text_input(e))
            .map(|e| (e.other(field), e.weight))
            .fold(None, |best: Option<(NodeId, f64)>, (n, w)| match best {
                Some((bn, bw)) if bw > w || (bw == w && bn < n) => Some((bn, bw)),
                _ => Some((n, w)),
            })
            .map(|(n, _)| n)
    }

    /// Input field a text element is attached to, if any.
    pub fn attached_field(&self, text: NodeId) -> Option<NodeId> {
        self.edges
            .iter()
            .filter(|e| e.touches(text) && self.is_text_input(e))
            .max_by(|x, y| {
                x.weight
                    .total_cmp(&y.weight)
                    .then_with(|| y.other(text).cmp(&x.other(text)))
            })
            .map(|e| e.other(text))
    }

    /// Graphviz rendering; dashed edges are relevant-input relations.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph ferg {\n");
        for n in &self.nodes {
            let shape = match n.kind {
                ElementKind::InputField => "box",
                _ => "ellipse",
            };
            let label = n.label.replace('\\', "\\\\").replace('"', "\\\"");
            let _ = writeln!(out, "  {} [shape={shape}, label=\"{label}\"];", n.id);
        }
        for e in &self.edges {
            let style = match e.kind {
                EdgeKind::LocalTextual => "solid",
                EdgeKind::RelevantInput => "dashed",
            };
            let _ = writeln!(out, "  {} -- {} [label=\"{:.3}\", style={style}];", e.a, e.b, e.weight);
        }
        out.push_str("}\n");
        out
    }
}

/// Keeps, for every text element linked to two or more inputs, only its
/// strongest text–input edge. Ties go to the input earlier in the document.
pub fn prune_auxiliary_edges(g: &Ferg) -> Ferg {
    let mut drop = BTreeSet::new();
    for node in g.nodes.iter().filter(|n| n.kind == ElementKind::TextElement) {
        let incident: Vec<usize> = g
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.touches(node.id) && g.is_text_input(e))
            .map(|(i, _)| i)
            .collect();
        if incident.len() < 2 {
            continue;
        }
        let keep = *incident
            .iter()
            .max_by(|&&x, &&y| {
                let (ex, ey) = (&g.edges[x], &g.edges[y]);
                ex.weight
                    .total_cmp(&ey.weight)
                    .then_with(|| ey.other(node.id).cmp(&ex.other(node.id)))
            })
            .expect("at least two incident edges");
        drop.extend(incident.into_iter().filter(|i| *i != keep));
    }
    Ferg {
        nodes: g.nodes.clone(),
        edges: g
            .edges
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, e)| e.clone())
            .collect(),
    }
}

/// Drops text–text edges whose weight is below `μ + λ·σ` of all text–text
/// weights in the form.
pub fn prune_text_text_edges(g: &Ferg, params: &PruningParams) -> Ferg {
    let weights: Vec<f64> = g.edges.iter().filter(|e| g.is_text_text(e)).map(|e| e.weight).collect();
    let threshold = retention_threshold(&weights, params);
    Ferg {
        nodes: g.nodes.clone(),
        edges: g
            .edges
            .iter()
            .filter(|e| !g.is_text_text(e) || keeps(e.weight, threshold))
            .cloned()
            .collect(),
    }
}

/// `max(label–label, input–input)` cosine, or input–input alone when either
/// field has no label.
pub fn input_field_sim(
    space: &EmbeddingSpace,
    (input_a, label_a): (NodeId, Option<NodeId>),
    (input_b, label_b): (NodeId, Option<NodeId>),
) -> Result<f64, FergError> {
    let input = space.similarity(input_a, input_b).ok_or(FergError::MissingEmbedding(input_a))?;
    match (label_a, label_b) {
        (Some(la), Some(lb)) => {
            let label = space.similarity(la, lb).ok_or(FergError::MissingEmbedding(la))?;
            Ok(label.max(input))
        }
        _ => Ok(input),
    }
}

/// Adds filtered relevant-input edges between every pair of input fields.
pub fn relate_input_fields(space: &EmbeddingSpace, g: &Ferg, params: &PruningParams) -> Result<Ferg, FergError> {
    let inputs: Vec<NodeId> = g
        .nodes
        .iter()
        .filter(|n| n.kind == ElementKind::InputField)
        .map(|n| n.id)
        .collect();
    let labels: BTreeMap<NodeId, Option<NodeId>> = inputs.iter().map(|&i| (i, g.label_of(i))).collect();
    let mut candidates = Vec::new();
    for (i, &a) in inputs.iter().enumerate() {
        for &b in &inputs[i + 1..] {
            let w = input_field_sim(space, (a, labels[&a]), (b, labels[&b]))?;
            candidates.push(FergEdge::new(a, b, w, EdgeKind::RelevantInput));
        }
    }
    let weights: Vec<f64> = candidates.iter().map(|e| e.weight).collect();
    let threshold = retention_threshold(&weights, params);
    let mut edges: Vec<FergEdge> = g.edges.iter().filter(|e| e.kind != EdgeKind::RelevantInput).cloned().collect();
    edges.extend(candidates.into_iter().filter(|e| keeps(e.weight, threshold)));
    Ok(Ferg { nodes: g.nodes.clone(), edges })
}

/// Runs the whole construction: adjacency, local graph, both prunings, and
/// relevant-input relations.
pub fn build_ferg(
    model: &FormModel,
    space: &EmbeddingSpace,
    hints: &AdjacencyHints,
    params: &PruningParams,
) -> Result<Ferg, FergError> {
    let pairs = candidate_adjacency(model, hints);
    let g = build_local_graph(model, space, &pairs)?;
    let g = prune_auxiliary_edges(&g);
    let g = prune_text_text_edges(&g, params);
    relate_input_fields(space, &g, params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub node: NodeId,
    /// Text of a text element, or key of an input field.
    pub text: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldContext {
    pub field: NodeId,
    pub local_texts: Vec<ContextEntry>,
    pub relevant_fields: Vec<ContextEntry>,
}

pub fn query_context(g: &Ferg, field: NodeId) -> Result<FieldContext, FergError> {
    match g.node(field) {
        Some(n) if n.kind == ElementKind::InputField => {}
        _ => return Err(FergError::UnknownNode(field)),
    }
    let collect = |pred: &dyn Fn(&FergEdge, &FergNode) -> bool| {
        let mut out: Vec<ContextEntry> = g
            .edges
            .iter()
            .filter(|e| e.touches(field))
            .filter_map(|e| {
                let other = g.node(e.other(field))?;
                pred(e, other).then(|| ContextEntry {
                    node: other.id,
                    text: other.label.clone(),
                    weight: e.weight,
                })
            })
            .collect();
        out.sort_by(|x, y| y.weight.total_cmp(&x.weight).then_with(|| x.node.cmp(&y.node)));
        out
    };
    let local_texts =
        collect(&|e, n| e.kind == EdgeKind::LocalTextual && n.kind == ElementKind::TextElement);
    let relevant_fields =
        collect(&|e, n| e.kind == EdgeKind::RelevantInput && n.kind == ElementKind::InputField);
    Ok(FieldContext { field, local_texts, relevant_fields })
}

impl core::fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            EdgeKind::LocalTextual => "local-textual",
            EdgeKind::RelevantInput => "relevant-input",
        })
    }
}

/// Human-readable edge list, used in debug output.
pub fn describe_edges(g: &Ferg) -> Vec<String> {
    g.edges
        .iter()
        .map(|e| {
            let la = g.node(e.a).map(|n| n.label.as_str()).unwrap_or("?");
            let lb = g.node(e.b).map(|n| n.label.as_str()).unwrap_or("?");
            format!("{} {la:?} -- {lb:?} {:.4}", e.kind, e.weight)
        })
        .collect()
}

/// Failure while embedding a page or building its graph.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Ferg(#[from] FergError),
}

/// Embedding space and graph of one form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub space: EmbeddingSpace,
    pub ferg: Ferg,
}

/// Builds graphs for successive pages of the same form. Structural
/// embeddings depend only on the tree's shape, so they are trained once per
/// distinct shape and reused.
pub struct FergBuilder {
    provider: Arc<dyn TextEmbedProvider>,
    pub node2vec: Node2VecParams,
    pub pruning: PruningParams,
    pub hints: AdjacencyHints,
    structural: BTreeMap<Vec<Option<usize>>, BTreeMap<NodeId, EmbeddingVector>>,
}

impl FergBuilder {
    pub fn new(provider: Arc<dyn TextEmbedProvider>, node2vec: Node2VecParams, pruning: PruningParams) -> Self {
        FergBuilder { provider, node2vec, pruning, hints: AdjacencyHints::default(), structural: BTreeMap::new() }
    }

    pub fn provider(&self) -> &dyn TextEmbedProvider {
        &*self.provider
    }

    /// Seeds the structural cache, e.g. from an on-disk artifact.
    pub fn preload(&mut self, tree: &DomTree, vectors: BTreeMap<NodeId, EmbeddingVector>) {
        self.structural.insert(tree.shape_key(), vectors);
    }

    pub fn structural(&mut self, tree: &DomTree) -> Result<&BTreeMap<NodeId, EmbeddingVector>, EmbedError> {
        let key = tree.shape_key();
        if !self.structural.contains_key(&key) {
            let vectors = structural_embed(tree, &self.node2vec)?;
            self.structural.insert(key.clone(), vectors);
        }
        Ok(&self.structural[&key])
    }

    pub fn build(&mut self, tree: &DomTree, model: &FormModel) -> Result<Analysis, AnalysisError> {
        let dims = self.node2vec.dims;
        let provider = Arc::clone(&self.provider);
        let structural = self.structural(tree)?;
        let space = build_embedding_space_with(model, &*provider, structural, dims)?;
        let ferg = build_ferg(model, &space, &self.hints, &self.pruning)?;
        Ok(Analysis { space, ferg })
    }
}
