use serde::{Deserialize, Serialize};

use super::index::{KnnResult, VectorIndex};

pub const DEFAULT_NEIGHBORS: usize = 3;
pub const DEFAULT_BUDGET_BYTES: usize = 6144;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentOutcome {
    pub prompt: String,
    /// Pair ids of the neighbors included, best first.
    pub used: Vec<String>,
    pub dropped_for_budget: usize,
    pub diagnostics: Vec<String>,
}

fn block(rank: usize, value: &str) -> String {
    let mut s = format!("/* retrieved example {rank} */\n{value}");
    if !value.ends_with('\n') {
        s.push('\n');
    }
    s
}

/// Prepends the labels of the best `n_used` neighbors to `query`.
///
/// The best neighbor sits closest to the query. When the prompt exceeds
/// `budget_bytes`, whole blocks are dropped from the front, so the
/// lowest-ranked neighbors go first. The query is never shortened.
pub fn augment_query(
    query: &str,
    neighbors: &KnnResult,
    index: &VectorIndex,
    n_used: usize,
    budget_bytes: usize,
) -> AugmentOutcome {
    let mut diagnostics = Vec::new();
    let n = if n_used > neighbors.len() {
        diagnostics.push(format!(
            "requested {n_used} neighbors but only {} available",
            neighbors.len()
        ));
        neighbors.len()
    } else {
        n_used
    };

    let mut blocks: Vec<(String, String)> = Vec::with_capacity(n);
    for (i, nb) in neighbors.neighbors.iter().take(n).enumerate() {
        match index.value(&nb.pair_id) {
            Some(v) => blocks.push((nb.pair_id.clone(), block(i + 1, v))),
            None => diagnostics.push(format!("neighbor {} not found in index", nb.pair_id)),
        }
    }

    // Keep the longest best-first run that fits.
    let mut total = query.len();
    let mut kept = 0;
    for (_, b) in &blocks {
        if total + b.len() > budget_bytes {
            break;
        }
        total += b.len();
        kept += 1;
    }
    let dropped = blocks.len() - kept;
    if dropped > 0 {
        diagnostics.push(format!(
            "dropped {dropped} of {} retrieved examples to fit {budget_bytes} bytes",
            blocks.len()
        ));
    }
    if query.len() > budget_bytes {
        diagnostics.push(format!(
            "query alone is {} bytes, over the {budget_bytes} byte budget",
            query.len()
        ));
    }

    let mut prompt = String::with_capacity(total);
    for (_, b) in blocks[..kept].iter().rev() {
        prompt.push_str(b);
    }
    prompt.push_str(query);
    for d in &diagnostics {
        tracing::debug!("{d}");
    }
    AugmentOutcome {
        prompt,
        used: blocks[..kept].iter().map(|(id, _)| id.clone()).collect(),
        dropped_for_budget: dropped,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rag::{EmbeddingVector, Neighbor};

    fn fixture() -> (VectorIndex, KnnResult) {
        let mut ix = VectorIndex::new(1, "t");
        let mut nbs = Vec::new();
        for (i, v) in ["a();", "b();", "c();"].iter().enumerate() {
            let id = format!("p{i}");
            ix.insert(
                id.clone(),
                EmbeddingVector {
                    values: vec![1.0],
                    normalized: true,
                },
                v.to_string(),
            )
            .unwrap();
            nbs.push(Neighbor {
                pair_id: id,
                similarity: 1.0,
            });
        }
        (ix, KnnResult { neighbors: nbs })
    }

    #[test]
    fn zero_neighbors_is_identity() {
        let (ix, nb) = fixture();
        let out = augment_query("int main() {", &nb, &ix, 0, DEFAULT_BUDGET_BYTES);
        assert_eq!(out.prompt, "int main() {");
        assert!(out.diagnostics.is_empty());
    }

    #[test]
    fn three_blocks_precede_query() {
        let (ix, nb) = fixture();
        let q = "void f() {";
        let out = augment_query(q, &nb, &ix, 3, DEFAULT_BUDGET_BYTES);
        assert!(out.prompt.ends_with(q));
        assert_eq!(out.prompt.matches("/* retrieved example").count(), 3);
        assert_eq!(
            out.prompt,
            "/* retrieved example 3 */\nc();\n/* retrieved example 2 */\nb();\n/* retrieved example 1 */\na();\nvoid f() {"
        );
        assert_eq!(out.used, ["p0", "p1", "p2"]);
    }

    #[test]
    fn tight_budget_drops_lowest_ranked_first() {
        let (ix, nb) = fixture();
        let q = "x";
        let one = block(1, "a();").len();
        let out = augment_query(q, &nb, &ix, 3, q.len() + one * 2);
        assert_eq!(out.used, ["p0", "p1"]);
        assert_eq!(out.dropped_for_budget, 1);
        let out = augment_query(q, &nb, &ix, 3, q.len() + one - 1);
        assert_eq!(out.prompt, q);
        assert!(!out.diagnostics.is_empty());
    }

    #[test]
    fn oversized_query_is_kept_whole() {
        let (ix, nb) = fixture();
        let q = "y".repeat(100);
        let out = augment_query(&q, &nb, &ix, 2, 10);
        assert_eq!(out.prompt, q);
    }
}
