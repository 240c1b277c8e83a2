use super::entry::KgEntry;
use super::graph::KnowledgeGraph;

/// Count case-insensitive whole-word occurrences of `needle` in `haystack`.
/// Both arguments must already be lowercased.
fn count_word(haystack: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 0;
    }
    let mut count = 0;
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before_ok = haystack[..start].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            count += 1;
            from = end;
        } else {
            // Step one char so overlapping candidates are still considered.
            from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
        }
    }
    count
}

/// Deterministic relevance selection used when no generator-backed query is available.
///
/// Each entry scores the number of whole-word mentions of its subject and object in
/// `prev_scene` followed by `context`. Entries scoring above zero come back ordered by
/// score, ties in graph order, at most `cap` of them. With no mentions at all the first
/// `cap` entries are returned.
pub fn lexical_subgraph(graph: &KnowledgeGraph, context: &str, prev_scene: &str, cap: usize) -> Vec<KgEntry> {
    let cap = cap.max(1);
    let text = format!("{prev_scene}\n{context}").to_lowercase();
    let mut scored: Vec<(usize, usize, &KgEntry)> = graph
        .entries()
        .enumerate()
        .map(|(order, e)| {
            let score = count_word(&text, &e.subject.to_lowercase()) + count_word(&text, &e.object.to_lowercase());
            (score, order, e)
        })
        .filter(|(score, _, _)| *score > 0)
        .collect();
    if scored.is_empty() {
        return graph.entries().take(cap).cloned().collect();
    }
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(cap).map(|(_, _, e)| e.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whole_word_counting() {
        assert_eq!(count_word("mara met marah and mara.", "mara"), 2);
        assert_eq!(count_word("the vault door, the vault doors", "vault door"), 1);
        assert_eq!(count_word("aaa", "aa"), 0);
        assert_eq!(count_word("éclair mara", "mara"), 1);
        assert_eq!(count_word("", "mara"), 0);
    }
}
