//! Layout graphs: tag grammar, canonical XML, edit distance and the
//! correction pipeline.

mod ged;
mod graph;
mod postprocess;
mod xml;

pub use ged::{graph_edit_distance, GedMode, GedResult, EXACT_LIMIT};
pub use graph::{
    layout_tokens, layout_tokens_from_str, parse_layout, render_layout_tokens, tokens_to_graph,
    DocumentGraph, EdgeKind, LayoutToken, Node, NodeKind, ParseMode, ParsedLayout, Repair,
};
pub use postprocess::{postprocess_pipeline, Postprocessed};
pub use xml::{graph_to_xml, xml_to_graph};

/// Serializes a graph to its tag token sequence.
pub fn graph_to_tokens(
    g: &DocumentGraph,
    vocab: &crate::vocab::Vocab,
) -> crate::vocab::TokenSequence {
    g.to_token_sequence(vocab)
}
