use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub marking_id: String,
    pub matches: usize,
}

/// Case-insensitive search over description and transcribed text. Every
/// query token must occur; hits rank by total occurrences of the tokens,
/// then by marking id.
pub fn search_descriptions(catalog: &Catalog, query: &str) -> Vec<SearchHit> {
    let tokens: Vec<String> = query.split_whitespace().map(str::to_lowercase).collect();
    if tokens.is_empty() {
        return Vec::new();
    }
    let mut hits: Vec<SearchHit> = catalog
        .markings()
        .filter_map(|m| {
            let hay = [m.description.as_deref(), m.text.as_deref(), m.symbol_name.as_deref()]
                .into_iter()
                .flatten()
                .collect::<Vec<_>>()
                .join("\n")
                .to_lowercase();
            let mut total = 0;
            for t in &tokens {
                let n = hay.matches(t.as_str()).count();
                if n == 0 {
                    return None;
                }
                total += n;
            }
            Some(SearchHit {
                marking_id: m.marking_id.clone(),
                matches: total,
            })
        })
        .collect();
    hits.sort_by(|a, b| b.matches.cmp(&a.matches).then_with(|| a.marking_id.cmp(&b.marking_id)));
    hits
}
