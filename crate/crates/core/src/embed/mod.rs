//! Combined textual and structural embedding space over non-container nodes.
//!
//! Each node gets a text part (from a [`TextEmbedProvider`]) and a structural
//! part (node2vec over the DOM tree). Both parts are unit-normalized before
//! concatenation, so for nonzero parts the combined cosine is the mean of the
//! two part cosines.

mod ngram;
mod node2vec;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dom::{DomTree, FormModel, NodeId};

pub use ngram::NgramProvider;
pub use node2vec::Node2VecParams;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("text provider {provider} unavailable after {attempts} attempt(s): {message}")]
    ProviderUnavailable { provider: String, attempts: u32, message: String },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("graph too small for structural embedding: {nodes} node(s)")]
    GraphTooSmall { nodes: usize },
    #[error("invalid node2vec parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector(values)
    }

    pub fn zeros(dims: usize) -> Self {
        EmbeddingVector(alloc::vec![0.0; dims])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| v * v).sum())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    /// Unit-length copy; the zero vector stays zero.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        EmbeddingVector(self.0.iter().map(|v| v / n).collect())
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut v = Vec::with_capacity(self.dims() + other.dims());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0);
        EmbeddingVector(v)
    }
}

/// Cosine similarity in [-1, 1]; zero when either vector is zero.
pub fn cosine_sim(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dims() != b.dims() {
        return Err(EmbedError::DimensionMismatch { left: a.dims(), right: b.dims() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Source of sentence embeddings. Implementations must be deterministic for a
/// given text and safe to call from several pipelines at once.
pub trait TextEmbedProvider: Send + Sync {
    /// Identifier recorded in embedding spaces and cache keys.
    fn id(&self) -> String;
    fn dims(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

/// Embeds `text`, returning the zero vector for blank text and a
/// unit-normalized vector otherwise.
pub fn text_embed(provider: &dyn TextEmbedProvider, text: &str) -> Result<EmbeddingVector, EmbedError> {
    if text.trim().is_empty() {
        return Ok(EmbeddingVector::zeros(provider.dims()));
    }
    Ok(provider.embed(text)?.normalized())
}

/// node2vec embedding of every DOM node, unit-normalized.
pub fn structural_embed(
    tree: &DomTree,
    params: &Node2VecParams,
) -> Result<BTreeMap<NodeId, EmbeddingVector>, EmbedError> {
    params.validate()?;
    if tree.len() < 2 {
        return Err(EmbedError::GraphTooSmall { nodes: tree.len() });
    }
    let mut adjacency: Vec<Vec<usize>> = alloc::vec![Vec::new(); tree.len()];
    for node in tree.nodes() {
        if let Some(p) = node.parent {
            adjacency[node.id.0].push(p.0);
            adjacency[p.0].push(node.id.0);
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    let vectors = node2vec::train(&adjacency, params);
    Ok(vectors
        .into_iter()
        .enumerate()
        .map(|(i, v)| (NodeId(i), EmbeddingVector::new(v).normalized()))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceEntry {
    pub text: EmbeddingVector,
    pub structural: EmbeddingVector,
}

impl SpaceEntry {
    pub fn combined(&self) -> EmbeddingVector {
        self.text.concat(&self.structural)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpace {
    pub text_dims: usize,
    pub struct_dims: usize,
    pub provider_id: String,
    entries: BTreeMap<NodeId, SpaceEntry>,
}

impl EmbeddingSpace {
    pub fn entry(&self, node: NodeId) -> Option<&SpaceEntry> {
        self.entries.get(&node)
    }

    /// Combined (text ∥ structural) vector of a node.
    pub fn vector(&self, node: NodeId) -> Option<EmbeddingVector> {
        self.entries.get(&node).map(SpaceEntry::combined)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.keys().copied()
    }

    /// Cosine of two nodes' combined vectors.
    pub fn similarity(&self, a: NodeId, b: NodeId) -> Option<f64> {
        let (x, y) = (self.vector(a)?, self.vector(b)?);
        cosine_sim(&x, &y).ok()
    }
}

/// Text fed to the provider for a non-container node.
pub fn node_text(model: &FormModel, node: NodeId) -> String {
    if let Some(field) = model.field_by_node(node) {
        return field.naming_text();
    }
    model.text_by_node(node).map(|t| t.text.clone()).unwrap_or_default()
}

pub fn build_embedding_space(
    model: &FormModel,
    tree: &DomTree,
    provider: &dyn TextEmbedProvider,
    params: &Node2VecParams,
) -> Result<EmbeddingSpace, EmbedError> {
    let structural = structural_embed(tree, params)?;
    build_embedding_space_with(model, provider, &structural, params.dims)
}

/// Same as [`build_embedding_space`] with precomputed structural vectors.
pub fn build_embedding_space_with(
    model: &FormModel,
    provider: &dyn TextEmbedProvider,
    structural: &BTreeMap<NodeId, EmbeddingVector>,
    struct_dims: usize,
) -> Result<EmbeddingSpace, EmbedError> {
    let mut entries = BTreeMap::new();
    for node in model.non_container_nodes() {
        let text = text_embed(provider, &node_text(model, node))?;
        let structural = structural
            .get(&node)
            .map(EmbeddingVector::normalized)
            .unwrap_or_else(|| EmbeddingVector::zeros(struct_dims));
        entries.insert(node, SpaceEntry { text, structural });
    }
    Ok(EmbeddingSpace {
        text_dims: provider.dims(),
        struct_dims,
        provider_id: provider.id(),
        entries,
    })
}
