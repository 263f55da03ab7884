use super::graph::{DocumentGraph, NodeKind};
use crate::error::{Error, Result};

/// Canonical XML: two-space indentation, `N` before `S` inside a page and
/// `A` before `B` inside a section, siblings of one kind in reading order.
/// Childless non-leaf nodes and empty leaves self-close. No trailing newline.
pub fn graph_to_xml(g: &DocumentGraph) -> String {
    let mut lines = Vec::new();
    write_node(g, DocumentGraph::ROOT, 0, &mut lines);
    lines.join("\n")
}

fn canonical_children(g: &DocumentGraph, id: usize) -> Vec<usize> {
    let mut kids = g.children(id).to_vec();
    // stable: reading order kept among equal kinds
    kids.sort_by_key(|&c| match g.node(c).kind {
        NodeKind::N | NodeKind::A => 0,
        _ => 1,
    });
    kids
}

fn write_node(g: &DocumentGraph, id: usize, depth: usize, out: &mut Vec<String>) {
    let node = g.node(id);
    let pad = "  ".repeat(depth);
    let name = node.kind.letter();
    if node.kind.is_leaf() {
        if node.text.is_empty() {
            out.push(format!("{pad}<{name}/>"));
        } else {
            out.push(format!("{pad}<{name}>{}</{name}>", escape(&node.text)));
        }
        return;
    }
    let kids = canonical_children(g, id);
    if kids.is_empty() {
        out.push(format!("{pad}<{name}/>"));
        return;
    }
    out.push(format!("{pad}<{name}>"));
    for c in kids {
        write_node(g, c, depth + 1, out);
    }
    out.push(format!("{pad}</{name}>"));
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\r' => out.push_str("&#13;"),
            _ => out.push(ch),
        }
    }
    out
}

/// Parses layout XML. Whitespace between elements of non-leaf nodes is
/// ignored; leaf text is kept verbatim after entity decoding. Children keep
/// document order.
pub fn xml_to_graph(text: &str) -> Result<DocumentGraph> {
    let mut r = Reader { s: text, pos: 0 };
    r.skip_prolog()?;
    let (kind, self_closing) = r.open_tag()?;
    if kind != NodeKind::D {
        return Err(Error::Schema(format!(
            "root element must be D, found {kind}"
        )));
    }
    let mut g = DocumentGraph::new();
    if !self_closing {
        r.children(&mut g, DocumentGraph::ROOT, kind)?;
    }
    r.skip_ws();
    if r.pos != r.s.len() {
        return Err(r.err("content after the root element"));
    }
    Ok(g)
}

struct Reader<'a> {
    s: &'a str,
    pos: usize,
}

impl Reader<'_> {
    fn rest(&self) -> &str {
        &self.s[self.pos..]
    }

    fn err(&self, msg: &str) -> Error {
        Error::Parse {
            position: self.pos,
            message: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn skip_prolog(&mut self) -> Result<()> {
        self.skip_ws();
        if self.rest().starts_with("\u{feff}") {
            self.pos += 3;
        }
        if self.rest().starts_with("<?") {
            let end = self
                .rest()
                .find("?>")
                .ok_or_else(|| self.err("unterminated declaration"))?;
            self.pos += end + 2;
        }
        self.skip_ws();
        Ok(())
    }

    /// Reads `<X>` or `<X/>`.
    fn open_tag(&mut self) -> Result<(NodeKind, bool)> {
        if !self.rest().starts_with('<') || self.rest().starts_with("</") {
            return Err(self.err("expected an opening tag"));
        }
        let end = self
            .rest()
            .find('>')
            .ok_or_else(|| self.err("unterminated tag"))?;
        let inner = self.rest()[1..end].trim();
        let (name, self_closing) = match inner.strip_suffix('/') {
            Some(n) => (n.trim(), true),
            None => (inner, false),
        };
        let kind = NodeKind::from_letter(name)
            .ok_or_else(|| Error::Schema(format!("unknown element <{name}>")))?;
        self.pos += end + 1;
        Ok((kind, self_closing))
    }

    fn close_tag(&mut self, kind: NodeKind) -> Result<()> {
        let tag = kind.close_tag();
        if !self.rest().starts_with(&tag) {
            return Err(self.err(&format!("expected {tag}")));
        }
        self.pos += tag.len();
        Ok(())
    }

    fn children(&mut self, g: &mut DocumentGraph, id: usize, kind: NodeKind) -> Result<()> {
        if kind.is_leaf() {
            let end = self
                .rest()
                .find('<')
                .ok_or_else(|| self.err("unterminated text"))?;
            let text = unescape(&self.rest()[..end]).map_err(|m| self.err(&m))?;
            *g.text_mut(id) = text;
            self.pos += end;
            return self.close_tag(kind);
        }
        loop {
            self.skip_ws();
            if self.rest().starts_with("</") {
                return self.close_tag(kind);
            }
            if self.rest().is_empty() {
                return Err(self.err(&format!("unclosed <{kind}>")));
            }
            if !self.rest().starts_with('<') {
                return Err(self.err(&format!("text directly inside <{kind}>")));
            }
            let at = self.pos;
            let (child, self_closing) = self.open_tag()?;
            let cid = g.add_child(id, child, "").map_err(|_| {
                Error::Schema(format!("<{child}> not allowed inside <{kind}> (byte {at})"))
            })?;
            if !self_closing {
                self.children(g, cid, child)?;
            }
        }
    }
}

fn unescape(s: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        rest = &rest[i..];
        let end = rest.find(';').ok_or("unterminated entity")?;
        let ent = &rest[1..end];
        let ch = match ent {
            "amp" => '&',
            "lt" => '<',
            "gt" => '>',
            "quot" => '"',
            "apos" => '\'',
            _ => {
                let code = if let Some(h) = ent.strip_prefix("#x") {
                    u32::from_str_radix(h, 16).ok()
                } else if let Some(d) = ent.strip_prefix('#') {
                    d.parse().ok()
                } else {
                    None
                };
                code.and_then(char::from_u32)
                    .ok_or_else(|| format!("unknown entity &{ent};"))?
            }
        };
        out.push(ch);
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
