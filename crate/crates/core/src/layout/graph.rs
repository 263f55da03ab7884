use std::fmt;

use crate::error::{Error, Result};
use crate::vocab::{TokenSequence, Vocab};

/// Node kinds of the layout hierarchy: Document, Page, Section, page Number,
/// Annotation (margin note) and Body.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    D,
    P,
    S,
    N,
    A,
    B,
}

impl NodeKind {
    pub const ALL: [NodeKind; 6] = [
        NodeKind::D,
        NodeKind::P,
        NodeKind::S,
        NodeKind::N,
        NodeKind::A,
        NodeKind::B,
    ];

    pub fn letter(self) -> &'static str {
        match self {
            NodeKind::D => "D",
            NodeKind::P => "P",
            NodeKind::S => "S",
            NodeKind::N => "N",
            NodeKind::A => "A",
            NodeKind::B => "B",
        }
    }

    pub fn from_letter(s: &str) -> Option<Self> {
        NodeKind::ALL.into_iter().find(|k| k.letter() == s)
    }

    pub fn open_tag(self) -> String {
        format!("<{}>", self.letter())
    }

    pub fn close_tag(self) -> String {
        format!("</{}>", self.letter())
    }

    /// Kinds that carry text and have no children.
    pub fn is_leaf(self) -> bool {
        matches!(self, NodeKind::N | NodeKind::A | NodeKind::B)
    }

    /// The only kind allowed as this kind's parent.
    pub fn parent_kind(self) -> Option<NodeKind> {
        match self {
            NodeKind::D => None,
            NodeKind::P => Some(NodeKind::D),
            NodeKind::S | NodeKind::N => Some(NodeKind::P),
            NodeKind::A | NodeKind::B => Some(NodeKind::S),
        }
    }

    fn depth(self) -> usize {
        match self {
            NodeKind::D => 0,
            NodeKind::P => 1,
            NodeKind::S | NodeKind::N => 2,
            NodeKind::A | NodeKind::B => 3,
        }
    }

    /// Child inserted when lenient parsing must bridge a missing level.
    fn implied_child(self) -> Option<NodeKind> {
        match self {
            NodeKind::D => Some(NodeKind::P),
            NodeKind::P => Some(NodeKind::S),
            NodeKind::S => Some(NodeKind::B),
            _ => None,
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.letter())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub kind: NodeKind,
    /// Text payload; always empty for non-leaf kinds.
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Hierarchy,
    ReadingOrder,
}

/// Layout tree rooted at node 0 (kind `D`), with children kept in reading
/// order. Reading-order edges link consecutive siblings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocumentGraph {
    nodes: Vec<Node>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
}

impl Default for DocumentGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl DocumentGraph {
    /// A lone document root.
    pub fn new() -> Self {
        DocumentGraph {
            nodes: vec![Node {
                kind: NodeKind::D,
                text: String::new(),
            }],
            parent: vec![None],
            children: vec![Vec::new()],
        }
    }

    pub const ROOT: usize = 0;

    /// Appends a child after the parent's existing children.
    pub fn add_child(
        &mut self,
        parent: usize,
        kind: NodeKind,
        text: impl Into<String>,
    ) -> Result<usize> {
        let pk = self
            .nodes
            .get(parent)
            .ok_or_else(|| Error::Contract(format!("no node {parent}")))?
            .kind;
        if kind.parent_kind() != Some(pk) {
            return Err(Error::Contract(format!("{kind} cannot be a child of {pk}")));
        }
        let text = text.into();
        if !kind.is_leaf() && !text.is_empty() {
            return Err(Error::Contract(format!("{kind} nodes carry no text")));
        }
        let id = self.nodes.len();
        self.nodes.push(Node { kind, text });
        self.parent.push(Some(parent));
        self.children.push(Vec::new());
        self.children[parent].push(id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parent[id]
    }

    pub fn text_mut(&mut self, id: usize) -> &mut String {
        &mut self.nodes[id].text
    }

    /// Hierarchy edges followed by reading-order edges.
    pub fn edges(&self) -> Vec<(usize, usize, EdgeKind)> {
        let mut out = Vec::new();
        for (p, kids) in self.children.iter().enumerate() {
            for &c in kids {
                out.push((p, c, EdgeKind::Hierarchy));
            }
        }
        for kids in &self.children {
            for w in kids.windows(2) {
                out.push((w[0], w[1], EdgeKind::ReadingOrder));
            }
        }
        out
    }

    pub fn hierarchy_edge_count(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Leaf regions `(kind, text)` in document order.
    pub fn regions(&self) -> Vec<(NodeKind, String)> {
        let mut out = Vec::new();
        self.walk(Self::ROOT, &mut |g, id| {
            let n = g.node(id);
            if n.kind.is_leaf() {
                out.push((n.kind, n.text.clone()));
            }
        });
        out
    }

    /// Concatenated text of all leaves in document order.
    pub fn text(&self) -> String {
        self.regions().into_iter().map(|(_, t)| t).collect()
    }

    fn walk(&self, id: usize, f: &mut impl FnMut(&Self, usize)) {
        f(self, id);
        for &c in &self.children[id] {
            self.walk(c, f);
        }
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.first().map(|n| n.kind) != Some(NodeKind::D) {
            return Err(Error::Contract("root must be a D node".into()));
        }
        for (id, n) in self.nodes.iter().enumerate() {
            match (self.parent[id], n.kind.parent_kind()) {
                (None, None) if id == Self::ROOT => {}
                (Some(p), Some(k)) if self.nodes[p].kind == k => {}
                _ => return Err(Error::Contract(format!("node {id} ({}) misplaced", n.kind))),
            }
            if !n.kind.is_leaf() && !n.text.is_empty() {
                return Err(Error::Contract(format!(
                    "node {id} ({}) holds text",
                    n.kind
                )));
            }
        }
        Ok(())
    }

    // -- layout token serialization ----------------------------------------

    pub fn to_layout_tokens(&self) -> Vec<LayoutToken> {
        let mut out = Vec::new();
        self.emit(Self::ROOT, &mut out);
        out
    }

    fn emit(&self, id: usize, out: &mut Vec<LayoutToken>) {
        let n = &self.nodes[id];
        out.push(LayoutToken::Open(n.kind));
        if !n.text.is_empty() {
            out.push(LayoutToken::Text(n.text.clone()));
        }
        for &c in &self.children[id] {
            self.emit(c, out);
        }
        out.push(LayoutToken::Close(n.kind));
    }

    /// Tag string, e.g. `<D><P><N>1</N></P></D>`.
    pub fn to_tag_string(&self) -> String {
        render_layout_tokens(&self.to_layout_tokens())
    }

    pub fn to_token_sequence(&self, vocab: &Vocab) -> TokenSequence {
        vocab.encode(&self.to_tag_string())
    }
}

/// Tags and text runs of a serialized layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayoutToken {
    Open(NodeKind),
    Close(NodeKind),
    Text(String),
}

pub fn render_layout_tokens(tokens: &[LayoutToken]) -> String {
    tokens
        .iter()
        .map(|t| match t {
            LayoutToken::Open(k) => k.open_tag(),
            LayoutToken::Close(k) => k.close_tag(),
            LayoutToken::Text(s) => s.clone(),
        })
        .collect()
}

/// Groups a token id sequence into tags and merged text runs. `<eot>` ends
/// the sequence; `<pad>` and `<sot>` are skipped.
pub fn layout_tokens(seq: &TokenSequence, vocab: &Vocab) -> Vec<LayoutToken> {
    let mut out: Vec<LayoutToken> = Vec::new();
    for &id in seq.ids() {
        if id == crate::vocab::EOT {
            break;
        }
        if vocab.is_special(id) && id != crate::vocab::UNK {
            continue;
        }
        match vocab.tag(id) {
            Some((k, true)) => out.push(LayoutToken::Open(k)),
            Some((k, false)) => out.push(LayoutToken::Close(k)),
            None => {
                let s = vocab.token(id).unwrap_or("<unk>");
                match out.last_mut() {
                    Some(LayoutToken::Text(t)) => t.push_str(s),
                    _ => out.push(LayoutToken::Text(s.to_string())),
                }
            }
        }
    }
    out
}

/// Splits a tag string into layout tokens.
pub fn layout_tokens_from_str(s: &str) -> Vec<LayoutToken> {
    let mut out: Vec<LayoutToken> = Vec::new();
    let mut rest = s;
    while !rest.is_empty() {
        if rest.starts_with('<') {
            if let Some(end) = rest.find('>') {
                if let Some((k, open)) = crate::vocab::parse_tag(&rest[..=end]) {
                    out.push(if open {
                        LayoutToken::Open(k)
                    } else {
                        LayoutToken::Close(k)
                    });
                    rest = &rest[end + 1..];
                    continue;
                }
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        match out.last_mut() {
            Some(LayoutToken::Text(t)) => t.push(ch),
            _ => out.push(LayoutToken::Text(ch.to_string())),
        }
        rest = &rest[ch.len_utf8()..];
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseMode {
    Strict,
    /// Auto-closes, inserts missing levels and drops stray tags, recording
    /// each repair.
    Lenient,
}

/// One change made by lenient parsing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Repair {
    pub position: usize,
    pub action: String,
}

#[derive(Clone, Debug)]
pub struct ParsedLayout {
    pub graph: DocumentGraph,
    pub repairs: Vec<Repair>,
}

/// Parses a token id sequence into a layout graph.
pub fn tokens_to_graph(
    seq: &TokenSequence,
    vocab: &Vocab,
    mode: ParseMode,
) -> Result<ParsedLayout> {
    parse_layout(&layout_tokens(seq, vocab), mode)
}

pub fn parse_layout(tokens: &[LayoutToken], mode: ParseMode) -> Result<ParsedLayout> {
    Parser {
        graph: DocumentGraph::new(),
        stack: Vec::new(),
        root_seen: false,
        repairs: Vec::new(),
        mode,
    }
    .run(tokens)
}

struct Parser {
    graph: DocumentGraph,
    /// Open node ids, root first.
    stack: Vec<usize>,
    root_seen: bool,
    repairs: Vec<Repair>,
    mode: ParseMode,
}

impl Parser {
    fn fail(&self, position: usize, message: String) -> Error {
        Error::Parse { position, message }
    }

    fn repair(&mut self, position: usize, action: String) {
        self.repairs.push(Repair { position, action });
    }

    fn top_kind(&self) -> Option<NodeKind> {
        self.stack.last().map(|&id| self.graph.node(id).kind)
    }

    fn run(mut self, tokens: &[LayoutToken]) -> Result<ParsedLayout> {
        for (pos, tok) in tokens.iter().enumerate() {
            match tok {
                LayoutToken::Open(k) => self.open(pos, *k)?,
                LayoutToken::Close(k) => self.close(pos, *k)?,
                LayoutToken::Text(t) => self.text(pos, t)?,
            }
        }
        let end = tokens.len();
        if !self.root_seen {
            match self.mode {
                ParseMode::Strict => return Err(self.fail(0, "missing <D> root".into())),
                ParseMode::Lenient => self.repair(0, "inserted empty <D> root".into()),
            }
        }
        if let Some(k) = self.top_kind() {
            match self.mode {
                ParseMode::Strict => {
                    return Err(self.fail(end, format!("unclosed <{k}> at end of input")))
                }
                ParseMode::Lenient => {
                    while let Some(id) = self.stack.pop() {
                        let k = self.graph.node(id).kind;
                        self.repair(end, format!("auto-closed <{k}> at end of input"));
                    }
                }
            }
        }
        Ok(ParsedLayout {
            graph: self.graph,
            repairs: self.repairs,
        })
    }

    fn open(&mut self, pos: usize, kind: NodeKind) -> Result<()> {
        if kind == NodeKind::D {
            if self.stack.is_empty() && !self.root_seen {
                self.root_seen = true;
                self.stack.push(DocumentGraph::ROOT);
                return Ok(());
            }
            return match self.mode {
                ParseMode::Strict => Err(self.fail(pos, "second <D> root".into())),
                ParseMode::Lenient => {
                    self.repair(pos, "dropped nested or repeated <D>".into());
                    if self.stack.is_empty() {
                        self.stack.push(DocumentGraph::ROOT);
                    }
                    Ok(())
                }
            };
        }
        let want = kind.parent_kind();
        if self.top_kind() == want && self.top_kind().is_some() {
            let parent = *self.stack.last().expect("non-empty");
            let id = self.graph.add_child(parent, kind, "")?;
            self.stack.push(id);
            return Ok(());
        }
        if self.mode == ParseMode::Strict {
            let msg = match self.top_kind() {
                Some(top) => format!("<{kind}> cannot open inside <{top}>"),
                None => format!("<{kind}> outside the document root"),
            };
            return Err(self.fail(pos, msg));
        }
        self.bridge_to(pos, kind.depth() - 1)?;
        let parent = *self.stack.last().expect("bridged");
        let id = self.graph.add_child(parent, kind, "")?;
        self.stack.push(id);
        Ok(())
    }

    /// Lenient: closes or inserts nodes until the top of the stack sits at
    /// `depth` and is a non-leaf.
    fn bridge_to(&mut self, pos: usize, depth: usize) -> Result<()> {
        if self.stack.is_empty() {
            if self.root_seen {
                self.repair(pos, "reopened document root for trailing content".into());
            } else {
                self.repair(pos, "inserted missing <D> root".into());
                self.root_seen = true;
            }
            self.stack.push(DocumentGraph::ROOT);
        }
        while let Some(top) = self.top_kind() {
            if top.depth() > depth || top.is_leaf() {
                self.stack.pop();
                self.repair(pos, format!("auto-closed <{top}>"));
            } else {
                break;
            }
        }
        while let Some(top) = self.top_kind() {
            if top.depth() >= depth {
                break;
            }
            let child = top.implied_child().expect("non-leaf below target depth");
            let parent = *self.stack.last().expect("non-empty");
            let id = self.graph.add_child(parent, child, "")?;
            self.stack.push(id);
            self.repair(pos, format!("inserted missing <{child}>"));
        }
        Ok(())
    }

    fn close(&mut self, pos: usize, kind: NodeKind) -> Result<()> {
        match self.top_kind() {
            Some(top) if top == kind => {
                self.stack.pop();
                Ok(())
            }
            top => match self.mode {
                ParseMode::Strict => Err(self.fail(
                    pos,
                    match top {
                        Some(t) => format!("</{kind}> while <{t}> is unclosed"),
                        None => format!("</{kind}> with nothing open"),
                    },
                )),
                ParseMode::Lenient => {
                    let open_at = self
                        .stack
                        .iter()
                        .rposition(|&id| self.graph.node(id).kind == kind);
                    match open_at {
                        Some(i) => {
                            while self.stack.len() > i + 1 {
                                let id = self.stack.pop().expect("non-empty");
                                let k = self.graph.node(id).kind;
                                self.repair(pos, format!("auto-closed <{k}>"));
                            }
                            self.stack.pop();
                        }
                        None => self.repair(pos, format!("dropped stray </{kind}>")),
                    }
                    Ok(())
                }
            },
        }
    }

    fn text(&mut self, pos: usize, text: &str) -> Result<()> {
        if let Some(top) = self.top_kind().filter(|k| k.is_leaf()) {
            let _ = top;
            let id = *self.stack.last().expect("non-empty");
            self.graph.text_mut(id).push_str(text);
            return Ok(());
        }
        match self.mode {
            ParseMode::Strict => Err(self.fail(
                pos,
                match self.top_kind() {
                    Some(k) => format!("text directly inside <{k}>"),
                    None => "text outside the document root".into(),
                },
            )),
            ParseMode::Lenient => {
                // open an implied body leaf below the current container
                self.bridge_to(pos, NodeKind::S.depth())?;
                let parent = *self.stack.last().expect("bridged");
                let id = self.graph.add_child(parent, NodeKind::B, text)?;
                self.stack.push(id);
                self.repair(pos, "wrapped stray text in <B>".into());
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str, mode: ParseMode) -> Result<ParsedLayout> {
        parse_layout(&layout_tokens_from_str(s), mode)
    }

    #[test]
    fn worked_example_has_five_nodes() {
        let p = parse("<D><P><N>1</N><S><B>abc</B></S></P></D>", ParseMode::Strict).unwrap();
        let g = p.graph;
        assert_eq!(g.len(), 5);
        assert_eq!(g.node(0).kind, NodeKind::D);
        assert_eq!(
            g.nodes().iter().map(|n| n.kind).collect::<Vec<_>>(),
            vec![
                NodeKind::D,
                NodeKind::P,
                NodeKind::N,
                NodeKind::S,
                NodeKind::B
            ]
        );
        assert_eq!(g.node(4).text, "abc");
        assert!(p.repairs.is_empty());
        g.validate().unwrap();
    }

    #[test]
    fn unclosed_page_is_strict_error_at_its_close() {
        let err = parse("<D><P></D>", ParseMode::Strict).unwrap_err();
        match err {
            Error::Parse { position, message } => {
                assert_eq!(position, 2);
                assert!(message.contains("<P>"), "{message}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn lenient_mode_auto_closes_and_records() {
        let p = parse("<D><P></D>", ParseMode::Lenient).unwrap();
        assert_eq!(p.graph.len(), 2);
        assert_eq!(p.repairs.len(), 1);
    }

    #[test]
    fn lenient_mode_wraps_bare_text() {
        let p = parse("hello", ParseMode::Lenient).unwrap();
        p.graph.validate().unwrap();
        assert_eq!(p.graph.text(), "hello");
        assert!(!p.repairs.is_empty());
    }

    #[test]
    fn misplaced_tag_is_strict_error() {
        assert!(parse("<D><B>x</B></D>", ParseMode::Strict).is_err());
        let p = parse("<D><B>x</B></D>", ParseMode::Lenient).unwrap();
        p.graph.validate().unwrap();
    }

    #[test]
    fn reading_order_edges_link_siblings() {
        let p = parse(
            "<D><P><N>1</N><S><A>a</A><B>b</B></S></P></D>",
            ParseMode::Strict,
        )
        .unwrap();
        let edges = p.graph.edges();
        let ro: Vec<_> = edges
            .iter()
            .filter(|e| e.2 == EdgeKind::ReadingOrder)
            .collect();
        assert_eq!(ro.len(), 2);
        assert_eq!(edges.len(), 5 + 2);
    }
}
