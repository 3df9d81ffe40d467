//! Framework-specific pre-processing and its inverse post-processing.

pub mod amr;
mod anchors;
pub mod eds;
mod multiword;
pub mod ucca;

pub use amr::{
    amr_postprocess, amr_preprocess, anonymize_sentence, strip_sense, AmrPrep, AnonymizationEntry, AnonymizationTable, EntityChild,
    EntityRecord, SenseTable,
};
pub use anchors::{anchor_of_span, anchors_to_spans, span_of_anchor, spans_to_anchors, SpanError, SpanGraph, TokenSpan};
pub use eds::{eds_reduce, eds_restore, is_surface_node, RestoreError};
pub use multiword::{build_multiword_table, merge_decision, merge_multiwords, MultiwordStats, MultiwordTable};
pub use ucca::{ucca_mark_implicit, ucca_strip_implicit};

/// Join fields with `|`, escaping `\` and `|` with a backslash.
pub(crate) fn join_fields<S: AsRef<str>>(fields: &[S]) -> String {
    let mut out = String::new();
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            out.push('|');
        }
        for c in f.as_ref().chars() {
            if c == '\\' || c == '|' {
                out.push('\\');
            }
            out.push(c);
        }
    }
    out
}

/// Inverse of [`join_fields`]; `None` on a dangling escape.
pub(crate) fn split_fields(s: &str) -> Option<Vec<String>> {
    let mut out = vec![String::new()];
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => out.last_mut()?.push(chars.next()?),
            '|' => out.push(String::new()),
            c => out.last_mut()?.push(c),
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn field_escaping_round_trips(fields in proptest::collection::vec("[a-z|\\\\_]{0,6}", 1..5)) {
            prop_assert_eq!(split_fields(&join_fields(&fields)).unwrap(), fields);
        }
    }
}
