//! Character and layout-tag vocabulary.
//!
//! Indices 0..3 are reserved for `<pad>`, `<sot>`, `<eot>` and `<unk>`.
//! Layout tags (`<D>`, `</D>`, …) are ordinary entries so a single decoder
//! emits both text and structure.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::NodeKind;

pub const PAD: usize = 0;
pub const SOT: usize = 1;
pub const EOT: usize = 2;
pub const UNK: usize = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<sot>", "<eot>", "<unk>"];

/// Token ids for one sequence (no implicit start or end markers).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<usize>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Specials, then every layout tag, then the characters of `alphabet`
    /// in first-seen order.
    pub fn from_alphabet(alphabet: &str) -> Result<Self> {
        if alphabet.is_empty() {
            return Err(Error::Parameter("empty alphabet".into()));
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for kind in NodeKind::ALL {
            tokens.push(kind.open_tag());
            tokens.push(kind.close_tag());
        }
        for ch in alphabet.chars() {
            let s = ch.to_string();
            if !tokens.contains(&s) {
                tokens.push(s);
            }
        }
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS {
            return Err(Error::Token(
                "vocabulary must start with <pad>, <sot>, <eot>, <unk>".into(),
            ));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Token(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// One token per line. Newline and tab characters are written escaped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens = text.lines().map(unescape).collect();
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(&escape(t));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// Layout tag kind and whether it opens, for tag tokens.
    pub fn tag(&self, id: usize) -> Option<(NodeKind, bool)> {
        self.token(id).and_then(parse_tag)
    }

    pub fn is_layout(&self, id: usize) -> bool {
        self.tag(id).is_some()
    }

    /// Ids eligible for teacher-forcing corruption: plain text tokens.
    pub fn is_text(&self, id: usize) -> bool {
        id < self.len() && !self.is_special(id) && !self.is_layout(id)
    }

    /// Splits `text` into tags (`<P>`, `</S>`, …) and single characters.
    /// Unknown characters map to `<unk>`.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            if let Some((tag, len)) = leading_tag(rest) {
                if let Some(id) = self.id(tag) {
                    ids.push(id);
                    rest = &rest[len..];
                    continue;
                }
            }
            let ch = rest.chars().next().expect("non-empty");
            let mut buf = [0u8; 4];
            ids.push(self.id(ch.encode_utf8(&mut buf)).unwrap_or(UNK));
            rest = &rest[ch.len_utf8()..];
        }
        TokenSequence(ids)
    }

    /// Concatenates token strings, dropping `<pad>`, `<sot>` and `<eot>`.
    pub fn decode(&self, seq: &TokenSequence) -> String {
        seq.0
            .iter()
            .filter(|&&id| !matches!(id, PAD | SOT | EOT))
            .filter_map(|&id| self.token(id))
            .collect()
    }

    pub fn check(&self, seq: &TokenSequence) -> Result<()> {
        match seq.0.iter().find(|&&id| id >= self.len()) {
            Some(id) => Err(Error::Token(format!(
                "token id {id} outside vocabulary of {}",
                self.len()
            ))),
            None => Ok(()),
        }
    }
}

fn leading_tag(s: &str) -> Option<(&str, usize)> {
    if !s.starts_with('<') {
        return None;
    }
    let end = s.find('>')?;
    let tag = &s[..=end];
    parse_tag(tag).map(|_| (tag, end + 1))
}

pub(crate) fn parse_tag(token: &str) -> Option<(NodeKind, bool)> {
    let inner = token.strip_prefix('<')?.strip_suffix('>')?;
    let (open, name) = match inner.strip_prefix('/') {
        Some(n) => (false, n),
        None => (true, inner),
    };
    NodeKind::from_letter(name).map(|k| (k, open))
}

fn escape(t: &str) -> String {
    match t {
        "\n" => "\\n".into(),
        "\t" => "\\t".into(),
        "\\" => "\\\\".into(),
        _ => t.to_string(),
    }
}

fn unescape(t: &str) -> String {
    match t {
        "\\n" => "\n".into(),
        "\\t" => "\t".into(),
        "\\\\" => "\\".into(),
        _ => t.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_indices_and_tags() {
        let v = Vocab::from_alphabet("abc").unwrap();
        assert_eq!(v.token(PAD), Some("<pad>"));
        assert_eq!(v.token(UNK), Some("<unk>"));
        assert!(v.is_layout(v.id("<P>").unwrap()));
        assert!(v.is_text(v.id("a").unwrap()));
        assert!(!v.is_text(EOT));
    }

    #[test]
    fn encode_decode_mixed_text() {
        let v = Vocab::from_alphabet("abc1 \n").unwrap();
        let s = "<D><P><N>1</N><S><B>ab c\nz</B></S></P></D>";
        let seq = v.encode(s);
        assert!(seq.0.contains(&UNK));
        assert_eq!(v.decode(&seq).replace("<unk>", "z"), s);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocab::from_alphabet("ab \n\\").unwrap();
        v.save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), v);
    }

    #[test]
    fn rejects_missing_specials() {
        assert!(Vocab::from_tokens(vec!["a".into()]).is_err());
    }
}
