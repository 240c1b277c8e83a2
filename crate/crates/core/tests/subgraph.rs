use proptest::prelude::*;
use regex::Regex;
use storygraph_core::kg::{lexical_subgraph, EntryId, KgEntry, KnowledgeGraph, NodeType, Provenance};

const NAMES: [&str; 6] = ["Mara", "Ivo", "Harbor", "Old Ledger", "Storm", "Mar"];

fn graph(pairs: &[(usize, usize)]) -> KnowledgeGraph {
    let ty = NodeType::new("characters").unwrap();
    let mut g = KnowledgeGraph::new(std::slice::from_ref(&ty));
    for (n, (s, o)) in pairs.iter().enumerate() {
        g.push(KgEntry {
            id: EntryId(n as u64 + 1),
            subject: NAMES[*s].into(),
            object: NAMES[*o].into(),
            relation: format!("r{n}"),
            description: String::new(),
            node_type: ty.clone(),
            provenance: Provenance::Initial,
        })
        .unwrap();
    }
    g
}

/// Brute force: count regex whole-word hits for every entry, then a stable sort.
fn oracle(g: &KnowledgeGraph, context: &str, prev: &str, cap: usize) -> Vec<EntryId> {
    let text = format!("{prev}\n{context}");
    let hits = |name: &str| {
        Regex::new(&format!(r"(?i)\b{}\b", regex::escape(name)))
            .unwrap()
            .find_iter(&text)
            .count()
    };
    let mut scored: Vec<(usize, usize, EntryId)> = g
        .entries()
        .enumerate()
        .map(|(pos, e)| (hits(&e.subject) + hits(&e.object), pos, e.id))
        .filter(|(score, _, _)| *score > 0)
        .collect();
    if scored.is_empty() {
        return g.entries().take(cap).map(|e| e.id).collect();
    }
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(cap).map(|(_, _, id)| id).collect()
}

#[test]
fn mentions_of_one_name_pick_its_entries() {
    let g = graph(&[(0, 1), (1, 2), (2, 0), (3, 4), (5, 2)]);
    let got: Vec<_> = lexical_subgraph(&g, "", "Only MARA came, not Marathon.", 40)
        .iter()
        .map(|e| e.id)
        .collect();
    assert_eq!(got, vec![EntryId(1), EntryId(3)]);
    assert_eq!(lexical_subgraph(&g, "", "", 2).len(), 2);
    assert_eq!(lexical_subgraph(&g, "", "", 100).len(), 5);
}

proptest! {
    #[test]
    fn agrees_with_regex_oracle(
        pairs in prop::collection::vec((0..6usize, 0..6usize), 0..25),
        words in prop::collection::vec(prop_oneof![
            Just("Mara"), Just("mara"), Just("Ivo,"), Just("harbor."), Just("old ledger"),
            Just("Storm's"), Just("Mar"), Just("Marathon"), Just("the"), Just("IVO")
        ], 0..12),
        split in 0..12usize,
        cap in 1..30usize,
    ) {
        let g = graph(&pairs);
        let cut = split.min(words.len());
        let prev = words[..cut].join(" ");
        let context = words[cut..].join(" ");
        let got: Vec<_> = lexical_subgraph(&g, &context, &prev, cap).iter().map(|e| e.id).collect();
        prop_assert_eq!(&got, &oracle(&g, &context, &prev, cap));
        prop_assert!(got.len() <= cap);
        prop_assert!(got.iter().all(|id| g.contains_id(*id)));
    }
}
