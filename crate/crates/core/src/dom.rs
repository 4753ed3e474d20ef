//! DOM model: a lenient HTML parser, node classification, and form extraction.
//!
//! Node ids are assigned in document pre-order, so `NodeId(i)` is also the
//! node's `doc_order`. The parser recovers from malformed markup the way
//! browsers do for the common cases (unclosed inline elements, implied end
//! tags for `p`/`li`/`option`/table cells, stray end tags) without inserting
//! `html`/`head`/`body` wrappers.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::text::normalize_whitespace;

/// Identifier of a node inside one [`DomTree`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomNode {
    pub id: NodeId,
    pub tag: String,
    pub attributes: BTreeMap<String, String>,
    /// Direct text children, concatenated and whitespace-normalized.
    pub text: String,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
    pub doc_order: usize,
}

impl DomNode {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attributes.get(name).map(String::as_str)
    }
}

/// Tag used for the synthetic root created when a document has several
/// top-level elements.
pub const DOCUMENT_TAG: &str = "#document";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomTree {
    root: NodeId,
    nodes: Vec<DomNode>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum DomError {
    #[error("document contains no elements")]
    EmptyDocument,
    #[error("no form matches selector {0:?}")]
    NoFormFound(String),
    #[error("form has no free-form input fields")]
    NoInputFields,
}

const VOID_ELEMENTS: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source",
    "track", "wbr",
];

const CLOSES_P: &[&str] = &[
    "address", "article", "aside", "blockquote", "details", "div", "dl", "fieldset", "figure",
    "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header", "hr", "main", "nav", "ol", "p",
    "pre", "section", "table", "ul",
];

fn is_void(tag: &str) -> bool {
    VOID_ELEMENTS.contains(&tag)
}

impl DomTree {
    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &DomNode {
        &self.nodes[id.0]
    }

    pub fn get(&self, id: NodeId) -> Option<&DomNode> {
        self.nodes.get(id.0)
    }

    /// Nodes in document order.
    pub fn nodes(&self) -> &[DomNode] {
        &self.nodes
    }

    pub fn is_descendant_or_self(&self, node: NodeId, ancestor: NodeId) -> bool {
        let mut cur = Some(node);
        while let Some(id) = cur {
            if id == ancestor {
                return true;
            }
            cur = self.nodes[id.0].parent;
        }
        false
    }

    /// Ids of `id` and all its descendants, in document order.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = alloc::vec![id];
        while let Some(cur) = stack.pop() {
            out.push(cur);
            for child in self.nodes[cur.0].children.iter().rev() {
                stack.push(*child);
            }
        }
        out
    }

    /// All text under `id`, joined with single spaces.
    pub fn text_content(&self, id: NodeId) -> String {
        let parts: Vec<&str> = self
            .subtree(id)
            .into_iter()
            .map(|n| self.nodes[n.0].text.as_str())
            .filter(|t| !t.is_empty())
            .collect();
        parts.join(" ")
    }

    /// Structural path: `tag[i]` steps from the root, where `i` counts
    /// preceding siblings with the same tag.
    pub fn path(&self, id: NodeId) -> String {
        let mut steps = Vec::new();
        let mut cur = id;
        loop {
            let node = &self.nodes[cur.0];
            match node.parent {
                Some(p) => {
                    let idx = self.nodes[p.0]
                        .children
                        .iter()
                        .take_while(|c| **c != cur)
                        .filter(|c| self.nodes[c.0].tag == node.tag)
                        .count();
                    steps.push(format!("{}[{}]", node.tag, idx));
                    cur = p;
                }
                None => {
                    steps.push(node.tag.clone());
                    break;
                }
            }
        }
        steps.reverse();
        steps.join("/")
    }

    /// Parent index per node. Two trees with equal shape keys have identical
    /// adjacency, which is all the structural embedding depends on.
    pub fn shape_key(&self) -> Vec<Option<usize>> {
        self.nodes.iter().map(|n| n.parent.map(|p| p.0)).collect()
    }

    pub fn find_by_tag<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a DomNode> + 'a {
        self.nodes.iter().filter(move |n| n.tag == tag)
    }
}

// ---------------------------------------------------------------------------
// Parsing

struct Building {
    tag: String,
    attributes: BTreeMap<String, String>,
    text: String,
    children: Vec<usize>,
}

struct TreeBuilder {
    arena: Vec<Building>,
    stack: Vec<usize>,
}

impl TreeBuilder {
    fn new() -> Self {
        TreeBuilder {
            arena: alloc::vec![Building {
                tag: DOCUMENT_TAG.to_string(),
                attributes: BTreeMap::new(),
                text: String::new(),
                children: Vec::new(),
            }],
            stack: alloc::vec![0],
        }
    }

    fn current(&self) -> usize {
        *self.stack.last().expect("document root is never popped")
    }

    fn text(&mut self, text: &str) {
        if text.trim().is_empty() {
            return;
        }
        let cur = self.current();
        let node = &mut self.arena[cur];
        node.text.push(' ');
        node.text.push_str(text);
    }

    /// Pops up to and including the innermost open `tag`, unless one of
    /// `boundaries` is met first.
    fn close_if_open(&mut self, tags: &[&str], boundaries: &[&str]) {
        for pos in (1..self.stack.len()).rev() {
            let tag = self.arena[self.stack[pos]].tag.as_str();
            if tags.contains(&tag) {
                self.stack.truncate(pos);
                return;
            }
            if boundaries.contains(&tag) {
                return;
            }
        }
    }

    fn start(&mut self, tag: String, attributes: BTreeMap<String, String>) {
        match tag.as_str() {
            t if CLOSES_P.contains(&t) => self.close_if_open(&["p"], &["button", "table", "td", "th"]),
            "li" => self.close_if_open(&["li"], &["ul", "ol"]),
            "dt" | "dd" => self.close_if_open(&["dt", "dd"], &["dl"]),
            "option" => self.close_if_open(&["option"], &["select", "datalist"]),
            "optgroup" => self.close_if_open(&["option", "optgroup"], &["select"]),
            "tr" => self.close_if_open(&["tr"], &["table", "tbody", "thead", "tfoot"]),
            "td" | "th" => self.close_if_open(&["td", "th"], &["tr", "table"]),
            _ => {}
        }
        let parent = self.current();
        let id = self.arena.len();
        let void = is_void(&tag);
        self.arena.push(Building {
            tag,
            attributes,
            text: String::new(),
            children: Vec::new(),
        });
        self.arena[parent].children.push(id);
        if !void {
            self.stack.push(id);
        }
    }

    fn end(&mut self, tag: &str) {
        for pos in (1..self.stack.len()).rev() {
            if self.arena[self.stack[pos]].tag == tag {
                self.stack.truncate(pos);
                return;
            }
        }
    }

    fn finish(self) -> Result<DomTree, DomError> {
        let arena = self.arena;
        let top = &arena[0].children;
        let root = match top.len() {
            0 => return Err(DomError::EmptyDocument),
            1 => top[0],
            _ => 0,
        };
        // Renumber in pre-order from the chosen root.
        let mut nodes: Vec<DomNode> = Vec::with_capacity(arena.len());
        let mut stack: Vec<(usize, Option<NodeId>)> = alloc::vec![(root, None)];
        while let Some((old, parent)) = stack.pop() {
            let id = NodeId(nodes.len());
            let b = &arena[old];
            nodes.push(DomNode {
                id,
                tag: b.tag.clone(),
                attributes: b.attributes.clone(),
                text: normalize_whitespace(&b.text),
                children: Vec::new(),
                parent,
                doc_order: id.0,
            });
            if let Some(p) = parent {
                nodes[p.0].children.push(id);
            }
            for child in b.children.iter().rev() {
                stack.push((*child, Some(id)));
            }
        }
        Ok(DomTree { root: NodeId(0), nodes })
    }
}

/// Parses HTML leniently into a [`DomTree`].
pub fn parse_document(html: &str) -> Result<DomTree, DomError> {
    let mut builder = TreeBuilder::new();
    let bytes = html.as_bytes();
    let mut i = 0;
    let mut text_start = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let rest = &html[i..];
        let next = bytes.get(i + 1).copied();
        let markup_end = if rest.starts_with("<!--") {
            Some(rest.find("-->").map_or(html.len(), |e| i + e + 3))
        } else if matches!(next, Some(b'!') | Some(b'?')) {
            Some(rest.find('>').map_or(html.len(), |e| i + e + 1))
        } else if next == Some(b'/') && bytes.get(i + 2).is_some_and(u8::is_ascii_alphabetic) {
            let end = rest.find('>').map_or(html.len(), |e| i + e + 1);
            flush_text(&mut builder, &html[text_start..i]);
            let name = read_name(&html[i + 2..end]);
            builder.end(&name);
            i = end;
            text_start = end;
            continue;
        } else if next.is_some_and(|c| c.is_ascii_alphabetic()) {
            flush_text(&mut builder, &html[text_start..i]);
            let (tag, attributes, end) = read_start_tag(html, i + 1);
            let raw = matches!(tag.as_str(), "script" | "style" | "title" | "textarea");
            let keep_raw_text = matches!(tag.as_str(), "title" | "textarea");
            let raw_tag = tag.clone();
            builder.start(tag, attributes);
            i = end;
            text_start = end;
            if raw {
                let close = format!("</{raw_tag}");
                let lower = html[end..].to_ascii_lowercase();
                let content_end = lower.find(&close).map_or(html.len(), |e| end + e);
                if keep_raw_text {
                    builder.text(&decode_entities(&html[end..content_end]));
                }
                builder.end(&raw_tag);
                let after = html[content_end..].find('>').map_or(html.len(), |e| content_end + e + 1);
                i = after;
                text_start = after;
            }
            continue;
        } else {
            None
        };
        match markup_end {
            Some(end) => {
                flush_text(&mut builder, &html[text_start..i]);
                i = end;
                text_start = end;
            }
            None => i += 1,
        }
    }
    flush_text(&mut builder, &html[text_start..]);
    builder.finish()
}

fn flush_text(builder: &mut TreeBuilder, raw: &str) {
    if !raw.is_empty() {
        builder.text(&decode_entities(raw));
    }
}

fn read_name(s: &str) -> String {
    s.chars()
        .take_while(|c| !c.is_whitespace() && *c != '>' && *c != '/')
        .collect::<String>()
        .to_ascii_lowercase()
}

/// Reads a start tag beginning just after `<`. Returns the tag name,
/// attributes, and the byte offset after the closing `>`.
fn read_start_tag(html: &str, from: usize) -> (String, BTreeMap<String, String>, usize) {
    let bytes = html.as_bytes();
    let mut i = from;
    while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'>' && bytes[i] != b'/' {
        i += 1;
    }
    let tag = html[from..i].to_ascii_lowercase();
    let mut attributes = BTreeMap::new();
    loop {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'/') {
            i += 1;
        }
        if i >= bytes.len() {
            return (tag, attributes, bytes.len());
        }
        if bytes[i] == b'>' {
            return (tag, attributes, i + 1);
        }
        let name_start = i;
        while i < bytes.len()
            && !bytes[i].is_ascii_whitespace()
            && !matches!(bytes[i], b'>' | b'=' | b'/')
        {
            i += 1;
        }
        let name = html[name_start..i].to_ascii_lowercase();
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let mut value = String::new();
        if i < bytes.len() && bytes[i] == b'=' {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'"' || bytes[i] == b'\'') {
                let quote = bytes[i];
                let start = i + 1;
                let end = html[start..]
                    .bytes()
                    .position(|b| b == quote)
                    .map_or(bytes.len(), |p| start + p);
                value = decode_entities(&html[start..end]);
                i = (end + 1).min(bytes.len());
            } else {
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'>' {
                    i += 1;
                }
                value = decode_entities(&html[start..i]);
            }
        }
        if !name.is_empty() {
            attributes.entry(name).or_insert(value);
        }
    }
}

fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let semi = rest[..rest.len().min(12)].find(';');
        let decoded = semi.and_then(|semi| {
            let entity = &rest[1..semi];
            let c = match entity {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some('\u{a0}'),
                _ if entity.starts_with("#x") || entity.starts_with("#X") => {
                    u32::from_str_radix(&entity[2..], 16).ok().and_then(char::from_u32)
                }
                _ if entity.starts_with('#') => entity[1..].parse().ok().and_then(char::from_u32),
                _ => None,
            };
            c.map(|c| (c, semi))
        });
        match decoded {
            Some((c, semi)) => {
                out.push(c);
                rest = &rest[semi + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

// ---------------------------------------------------------------------------
// Serialization

fn escape_text(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
}

fn escape_attr(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
}

/// Serializes the whole tree. Each element's text is emitted before its
/// children, which re-parses to an isomorphic tree.
pub fn serialize(tree: &DomTree) -> String {
    serialize_node(tree, tree.root())
}

pub fn serialize_node(tree: &DomTree, id: NodeId) -> String {
    let mut out = String::new();
    write_node(tree, id, &mut out);
    out
}

fn write_node(tree: &DomTree, id: NodeId, out: &mut String) {
    let node = tree.node(id);
    if node.tag == DOCUMENT_TAG {
        for child in &node.children {
            write_node(tree, *child, out);
        }
        return;
    }
    out.push('<');
    out.push_str(&node.tag);
    for (k, v) in &node.attributes {
        out.push(' ');
        out.push_str(k);
        out.push_str("=\"");
        escape_attr(v, out);
        out.push('"');
    }
    out.push('>');
    if is_void(&node.tag) {
        return;
    }
    escape_text(&node.text, out);
    for child in &node.children {
        write_node(tree, *child, out);
    }
    out.push_str("</");
    out.push_str(&node.tag);
    out.push('>');
}

// ---------------------------------------------------------------------------
// Classification

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementKind {
    InputField,
    TextElement,
    Container,
}

/// Free-form input types. Selection inputs (checkbox, radio, select) and
/// buttons are not in this set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputType {
    Text,
    Number,
    Date,
    Email,
    Tel,
    Textarea,
    Password,
    Search,
}

impl InputType {
    pub fn from_type_attr(ty: &str) -> Option<Self> {
        match ty.trim().to_ascii_lowercase().as_str() {
            "" | "text" => Some(Self::Text),
            "number" => Some(Self::Number),
            "date" => Some(Self::Date),
            "email" => Some(Self::Email),
            "tel" => Some(Self::Tel),
            "textarea" => Some(Self::Textarea),
            "password" => Some(Self::Password),
            "search" => Some(Self::Search),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Text => "text",
            Self::Number => "number",
            Self::Date => "date",
            Self::Email => "email",
            Self::Tel => "tel",
            Self::Textarea => "textarea",
            Self::Password => "password",
            Self::Search => "search",
        }
    }
}

/// Free-form input type of a node, if it is an input field.
pub fn input_type_of(node: &DomNode) -> Option<InputType> {
    match node.tag.as_str() {
        "input" => InputType::from_type_attr(node.attr("type").unwrap_or("text")),
        "textarea" => Some(InputType::Textarea),
        _ => None,
    }
}

/// Element kind per node, indexed by `NodeId`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Classification(Vec<ElementKind>);

impl Classification {
    pub fn kind(&self, id: NodeId) -> ElementKind {
        self.0[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, ElementKind)> + '_ {
        self.0.iter().enumerate().map(|(i, k)| (NodeId(i), *k))
    }

    pub fn is_non_container(&self, id: NodeId) -> bool {
        self.0[id.0] != ElementKind::Container
    }
}

pub fn classify_nodes(tree: &DomTree) -> Classification {
    Classification(
        tree.nodes
            .iter()
            .map(|n| {
                if input_type_of(n).is_some() {
                    ElementKind::InputField
                } else if !n.text.is_empty() && !matches!(n.tag.as_str(), "script" | "style") {
                    ElementKind::TextElement
                } else {
                    ElementKind::Container
                }
            })
            .collect(),
    )
}

/// One row of the classified-tree debug dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedNode {
    pub id: NodeId,
    pub tag: String,
    pub kind: ElementKind,
    pub doc_order: usize,
    pub text: String,
}

pub fn dump_classified(tree: &DomTree, classes: &Classification) -> Vec<ClassifiedNode> {
    tree.nodes
        .iter()
        .map(|n| ClassifiedNode {
            id: n.id,
            tag: n.tag.clone(),
            kind: classes.kind(n.id),
            doc_order: n.doc_order,
            text: n.text.clone(),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Form extraction

/// Naming attributes, in the order their values are concatenated to form an
/// input field's text.
pub const NAME_ATTRS: [&str; 5] = ["aria-label", "placeholder", "name", "id", "value"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputFieldRef {
    pub node: NodeId,
    pub input_type: InputType,
    /// Present naming attributes in [`NAME_ATTRS`] order.
    pub name_attrs: Vec<(String, String)>,
    /// Stable handle used in bindings, prompts and constraints.
    pub key: String,
}

impl InputFieldRef {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.name_attrs.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    /// Text used for the field's textual embedding.
    pub fn naming_text(&self) -> String {
        let parts: Vec<&str> = self.name_attrs.iter().map(|(_, v)| v.as_str()).collect();
        parts.join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextElementRef {
    pub node: NodeId,
    pub text: String,
    /// The node is a `label` or sits inside one.
    pub is_label: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FormContext {
    pub app_title: String,
    pub app_description: String,
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormModel {
    pub form_node: NodeId,
    pub fields: Vec<InputFieldRef>,
    pub texts: Vec<TextElementRef>,
    pub context: FormContext,
}

impl FormModel {
    pub fn field(&self, key: &str) -> Option<&InputFieldRef> {
        self.fields.iter().find(|f| f.key == key)
    }

    pub fn field_by_node(&self, node: NodeId) -> Option<&InputFieldRef> {
        self.fields.iter().find(|f| f.node == node)
    }

    pub fn text_by_node(&self, node: NodeId) -> Option<&TextElementRef> {
        self.texts.iter().find(|t| t.node == node)
    }

    pub fn keys(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.key.clone()).collect()
    }

    /// Non-container nodes of the form in document order.
    pub fn non_container_nodes(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self
            .fields
            .iter()
            .map(|f| f.node)
            .chain(self.texts.iter().map(|t| t.node))
            .collect();
        ids.sort();
        ids
    }

    pub fn kind_of(&self, node: NodeId) -> Option<ElementKind> {
        if self.field_by_node(node).is_some() {
            Some(ElementKind::InputField)
        } else if self.text_by_node(node).is_some() {
            Some(ElementKind::TextElement)
        } else {
            None
        }
    }
}

/// Chooses one form on a page.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormSelector {
    /// Zero-based index among `<form>` elements.
    Index(usize),
    /// Matches a form's `id` or `name` attribute.
    Id(String),
}

impl FormSelector {
    /// `#login` selects by id/name, `1` by zero-based index.
    pub fn parse(s: &str) -> Self {
        let s = s.trim();
        if let Some(id) = s.strip_prefix('#') {
            return Self::Id(id.to_string());
        }
        match s.parse() {
            Ok(i) => Self::Index(i),
            Err(_) => Self::Id(s.to_string()),
        }
    }
}

impl fmt::Display for FormSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Index(i) => write!(f, "{i}"),
            Self::Id(id) => write!(f, "#{id}"),
        }
    }
}

fn field_key(node: &DomNode, index: usize) -> String {
    for attr in ["name", "id", "aria-label", "placeholder"] {
        if let Some(v) = node.attr(attr) {
            let v = v.trim();
            if !v.is_empty() {
                return v.to_string();
            }
        }
    }
    format!("field-{}", index + 1)
}

pub fn extract_form_model(
    tree: &DomTree,
    selector: Option<&FormSelector>,
) -> Result<FormModel, DomError> {
    let classes = classify_nodes(tree);
    let forms: Vec<NodeId> = tree.find_by_tag("form").map(|n| n.id).collect();
    let has_fields = |form: NodeId| {
        tree.subtree(form)
            .iter()
            .any(|id| classes.kind(*id) == ElementKind::InputField)
    };
    let form_node = match selector {
        Some(sel @ FormSelector::Index(i)) => {
            *forms.get(*i).ok_or_else(|| DomError::NoFormFound(sel.to_string()))?
        }
        Some(sel @ FormSelector::Id(id)) => forms
            .iter()
            .copied()
            .find(|f| {
                let n = tree.node(*f);
                n.attr("id") == Some(id.as_str()) || n.attr("name") == Some(id.as_str())
            })
            .ok_or_else(|| DomError::NoFormFound(sel.to_string()))?,
        None => forms
            .iter()
            .copied()
            .find(|f| has_fields(*f))
            .or_else(|| forms.first().copied())
            .unwrap_or(tree.root()),
    };

    let mut fields = Vec::new();
    let mut texts = Vec::new();
    let mut used_keys: Vec<String> = Vec::new();
    for id in tree.subtree(form_node) {
        let node = tree.node(id);
        match classes.kind(id) {
            ElementKind::InputField => {
                let input_type = input_type_of(node).expect("classified as input");
                let name_attrs = NAME_ATTRS
                    .iter()
                    .filter_map(|a| {
                        node.attr(a)
                            .map(str::trim)
                            .filter(|v| !v.is_empty())
                            .map(|v| (a.to_string(), v.to_string()))
                    })
                    .collect();
                let mut key = field_key(node, fields.len());
                if used_keys.contains(&key) {
                    let mut n = 2;
                    while used_keys.contains(&format!("{key}#{n}")) {
                        n += 1;
                    }
                    key = format!("{key}#{n}");
                }
                used_keys.push(key.clone());
                fields.push(InputFieldRef { node: id, input_type, name_attrs, key });
            }
            ElementKind::TextElement => {
                let is_label = {
                    let mut cur = Some(id);
                    let mut found = false;
                    while let Some(c) = cur {
                        if c != form_node && tree.node(c).tag == "label" {
                            found = true;
                            break;
                        }
                        if c == form_node {
                            break;
                        }
                        cur = tree.node(c).parent;
                    }
                    found
                };
                texts.push(TextElementRef { node: id, text: node.text.clone(), is_label });
            }
            ElementKind::Container => {}
        }
    }
    if fields.is_empty() {
        return Err(DomError::NoInputFields);
    }
    let app_title = tree
        .find_by_tag("title")
        .next()
        .map(|n| n.text.clone())
        .unwrap_or_default();
    let app_description = tree
        .find_by_tag("meta")
        .find(|n| n.attr("name").is_some_and(|v| v.eq_ignore_ascii_case("description")))
        .and_then(|n| n.attr("content"))
        .map(normalize_whitespace)
        .unwrap_or_default();
    let labels = texts.iter().filter(|t| t.is_label).map(|t| t.text.clone()).collect();
    Ok(FormModel {
        form_node,
        fields,
        texts,
        context: FormContext { app_title, app_description, labels },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(tree: &DomTree) -> Vec<&str> {
        tree.nodes().iter().map(|n| n.tag.as_str()).collect()
    }

    #[test]
    fn parses_label_and_input() {
        let tree =
            parse_document(r#"<form><label for="a">From 1</label><input id="a" type="text"></form>"#)
                .unwrap();
        assert_eq!(tags(&tree), ["form", "label", "input"]);
        assert_eq!(tree.node(NodeId(1)).text, "From 1");
        assert_eq!(tree.node(NodeId(2)).attr("id"), Some("a"));
        assert_eq!(tree.node(NodeId(0)).children, [NodeId(1), NodeId(2)]);
    }

    #[test]
    fn empty_document() {
        assert_eq!(parse_document(""), Err(DomError::EmptyDocument));
        assert_eq!(parse_document("just text"), Err(DomError::EmptyDocument));
        assert_eq!(parse_document("<!-- c -->"), Err(DomError::EmptyDocument));
    }

    #[test]
    fn recovers_unclosed_span() {
        // Browsers close the span at </div>; the input is a void element.
        let tree = parse_document(r#"<div><input type="text"><span>hint</div>"#).unwrap();
        assert_eq!(tags(&tree), ["div", "input", "span"]);
        assert_eq!(tree.node(NodeId(2)).text, "hint");
        assert_eq!(tree.node(NodeId(2)).parent, Some(NodeId(0)));
        assert!(tree.node(NodeId(1)).children.is_empty());
    }

    #[test]
    fn implied_end_tags() {
        let tree = parse_document("<ul><li>a<li>b</ul><p>one<p>two<div>x</div>").unwrap();
        assert_eq!(tree.node(tree.root()).tag, DOCUMENT_TAG);
        let ul = tree.node(NodeId(1));
        assert_eq!(ul.children.len(), 2);
        let ps: Vec<_> = tree.find_by_tag("p").collect();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[1].text, "two");
        // div closes the open p and becomes its sibling.
        let div = tree.find_by_tag("div").next().unwrap();
        assert_eq!(div.parent, Some(tree.root()));
    }

    #[test]
    fn stray_end_tags_and_entities() {
        let tree = parse_document("<div></span>A &amp; B &#39;x&#x27; &bogus;</div>").unwrap();
        assert_eq!(tree.node(NodeId(0)).text, "A & B 'x' &bogus;");
    }

    #[test]
    fn script_content_is_not_text() {
        let tree =
            parse_document("<div><script>if (a < b) { x = '</div>' }</script><b>t</b></div>")
                .unwrap();
        let classes = classify_nodes(&tree);
        let script = tree.find_by_tag("script").next().unwrap();
        assert_eq!(classes.kind(script.id), ElementKind::Container);
        assert!(tree.find_by_tag("b").next().is_some());
    }

    #[test]
    fn attributes_unquoted_and_duplicate() {
        let tree = parse_document("<input type=text name=q name=other disabled>").unwrap();
        let n = tree.node(NodeId(0));
        assert_eq!(n.attr("name"), Some("q"));
        assert_eq!(n.attr("disabled"), Some(""));
    }

    #[test]
    fn classification_examples() {
        let tree = parse_document(r#"<div><span>From 1</span><input type="text"><input type="checkbox"><textarea>x</textarea></div>"#).unwrap();
        let c = classify_nodes(&tree);
        assert_eq!(c.kind(NodeId(0)), ElementKind::Container);
        assert_eq!(c.kind(NodeId(1)), ElementKind::TextElement);
        assert_eq!(c.kind(NodeId(2)), ElementKind::InputField);
        assert_eq!(c.kind(NodeId(3)), ElementKind::Container);
        assert_eq!(c.kind(NodeId(4)), ElementKind::InputField);
    }

    #[test]
    fn mixed_content_uses_direct_text() {
        let tree = parse_document("<label>Name <span>(required)</span></label>").unwrap();
        let c = classify_nodes(&tree);
        assert_eq!(c.kind(NodeId(0)), ElementKind::TextElement);
        assert_eq!(tree.node(NodeId(0)).text, "Name");
        assert_eq!(c.kind(NodeId(1)), ElementKind::TextElement);
    }

    #[test]
    fn serialize_reparses_isomorphic() {
        let html = r#"<html><head><title>T</title></head><body><form id="f"><label for="a">A &amp; B</label><input id="a" type="text"><p>hint<b>bold</b></p></form></body></html>"#;
        let tree = parse_document(html).unwrap();
        let again = parse_document(&serialize(&tree)).unwrap();
        assert_eq!(tree, again);
    }

    #[test]
    fn form_model_collects_fields_in_order() {
        let html = r#"<html><head><title>Book</title><meta name="description" content="Flights  now"></head>
        <body><form><label>From 1</label><input name="From 1" aria-label="From">
        <label><span>To 1</span></label><input type="text" id="to1" placeholder="To">
        <input type="submit" value="Go"></form></body></html>"#;
        let tree = parse_document(html).unwrap();
        let model = extract_form_model(&tree, None).unwrap();
        assert_eq!(model.keys(), ["From 1", "to1"]);
        assert!(model.fields[0].node < model.fields[1].node);
        assert_eq!(model.fields[0].naming_text(), "From From 1");
        assert_eq!(model.fields[1].naming_text(), "To to1");
        assert_eq!(model.context.app_title, "Book");
        assert_eq!(model.context.app_description, "Flights now");
        assert_eq!(model.context.labels, ["From 1", "To 1"]);
    }

    #[test]
    fn submit_only_form_has_no_inputs() {
        let tree = parse_document(r#"<form><button>Go</button><input type="submit"></form>"#).unwrap();
        assert_eq!(extract_form_model(&tree, None), Err(DomError::NoInputFields));
    }

    #[test]
    fn selector_picks_second_form() {
        let html = r#"<div><form id="a"><input name="x"></form><form id="b"><input name="y"><input name="z"></form></div>"#;
        let tree = parse_document(html).unwrap();
        let m = extract_form_model(&tree, Some(&FormSelector::Index(1))).unwrap();
        assert_eq!(m.keys(), ["y", "z"]);
        let m = extract_form_model(&tree, Some(&FormSelector::parse("#b"))).unwrap();
        assert_eq!(m.keys(), ["y", "z"]);
        assert_eq!(
            extract_form_model(&tree, Some(&FormSelector::Index(5))),
            Err(DomError::NoFormFound("5".into()))
        );
    }

    #[test]
    fn formless_page_uses_root() {
        let tree = parse_document(r#"<div><span>Query</span><input type="search" name="q"></div>"#).unwrap();
        let m = extract_form_model(&tree, None).unwrap();
        assert_eq!(m.form_node, tree.root());
        assert_eq!(m.fields[0].input_type, InputType::Search);
    }

    #[test]
    fn duplicate_keys_are_disambiguated() {
        let tree = parse_document(r#"<form><input name="a"><input name="a"></form>"#).unwrap();
        let m = extract_form_model(&tree, None).unwrap();
        assert_eq!(m.keys(), ["a", "a#2"]);
    }

    #[test]
    fn paths_count_same_tag_siblings() {
        let tree = parse_document("<body><h1>x</h1><div>a</div><div>b</div></body>").unwrap();
        assert_eq!(tree.path(NodeId(3)), "body/div[1]");
        assert_eq!(tree.path(NodeId(1)), "body/h1[0]");
    }
}
