use crate::vocab::{parse_tag, TokenSequence, Vocab};

/// Result of [`postprocess_pipeline`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Postprocessed {
    pub tokens: TokenSequence,
    pub warnings: Vec<String>,
}

/// Splits a raw decoder sequence into text segments (maximal runs of text
/// tokens between structural tokens, further split at line breaks), passes
/// each segment through `corrector`, and reassembles the sequence with every
/// tag, special token and line break kept verbatim. A segment returned
/// unchanged keeps its original ids. Tags produced by the corrector are
/// stripped with a warning.
pub fn postprocess_pipeline<F>(raw: &TokenSequence, vocab: &Vocab, corrector: F) -> Postprocessed
where
    F: Fn(&str) -> String,
{
    let newline = vocab.id("\n");
    let mut out = Vec::with_capacity(raw.len());
    let mut warnings = Vec::new();
    let mut segment: Vec<usize> = Vec::new();

    let flush = |segment: &mut Vec<usize>, out: &mut Vec<usize>, warnings: &mut Vec<String>| {
        if segment.is_empty() {
            return;
        }
        let text: String = segment.iter().filter_map(|&id| vocab.token(id)).collect();
        let fixed = corrector(&text);
        if fixed == text {
            out.append(segment);
            return;
        }
        let (clean, stripped) = strip_tags(&fixed);
        if stripped > 0 {
            warnings.push(format!(
                "corrector emitted {stripped} layout tag(s) in segment {text:?}; removed"
            ));
        }
        let clean: String = match newline.and_then(|n| vocab.token(n)) {
            Some(nl) if clean.contains(nl) => {
                warnings.push(format!(
                    "corrector emitted a line break in segment {text:?}; removed"
                ));
                clean.replace(nl, "")
            }
            _ => clean,
        };
        out.extend(vocab.encode(&clean).0);
        segment.clear();
    };

    for &id in raw.ids() {
        let structural = !vocab.is_text(id) || Some(id) == newline;
        if structural {
            flush(&mut segment, &mut out, &mut warnings);
            out.push(id);
        } else {
            segment.push(id);
        }
    }
    flush(&mut segment, &mut out, &mut warnings);
    Postprocessed {
        tokens: TokenSequence(out),
        warnings,
    }
}

/// Removes substrings that parse as layout tags; returns the count removed.
fn strip_tags(s: &str) -> (String, usize) {
    let mut out = String::with_capacity(s.len());
    let mut removed = 0;
    let mut rest = s;
    while let Some(i) = rest.find('<') {
        out.push_str(&rest[..i]);
        rest = &rest[i..];
        match rest.find('>') {
            Some(end) if parse_tag(&rest[..=end]).is_some() => {
                removed += 1;
                rest = &rest[end + 1..];
            }
            _ => {
                out.push('<');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    (out, removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{EOT, SOT, UNK};

    fn setup() -> (Vocab, TokenSequence) {
        let v = Vocab::from_alphabet(
            "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 \n",
        )
        .unwrap();
        let mut seq = v.encode("<D><P><N>12</N><S><A>note</A><B>two\nlines</B></S></P></D>");
        seq.0.insert(3, UNK);
        seq.0.insert(0, SOT);
        seq.0.push(EOT);
        (v, seq)
    }

    fn tags(v: &Vocab, s: &TokenSequence) -> Vec<usize> {
        s.ids().iter().copied().filter(|&i| !v.is_text(i)).collect()
    }

    #[test]
    fn identity_corrector_is_identity() {
        let (v, seq) = setup();
        let p = postprocess_pipeline(&seq, &v, |s| s.to_string());
        assert_eq!(p.tokens, seq);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn uppercase_changes_only_text() {
        let (v, seq) = setup();
        let p = postprocess_pipeline(&seq, &v, |s| s.to_uppercase());
        assert_eq!(tags(&v, &p.tokens), tags(&v, &seq));
        let text = v.decode(&p.tokens);
        assert!(text.contains("<B>TWO\nLINES</B>"), "{text}");
    }

    #[test]
    fn injected_tags_are_stripped() {
        let (v, seq) = setup();
        let p = postprocess_pipeline(&seq, &v, |s| format!("{s}</S>"));
        assert_eq!(tags(&v, &p.tokens), tags(&v, &seq));
        assert!(!p.warnings.is_empty());
    }
}
