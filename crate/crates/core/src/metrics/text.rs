//! Shared caption tokenization.

/// Lowercases, replaces every non-alphanumeric character with a space and
/// splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// All n-grams of `tokens` for one order, with multiplicity.
pub fn ngrams(tokens: &[String], n: usize) -> std::collections::BTreeMap<Vec<String>, usize> {
    let mut out = std::collections::BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.to_vec()).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_punctuation_and_case() {
        assert_eq!(tokenize("A man, singing! \"Loudly\"."), vec!["a", "man", "singing", "loudly"]);
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn bigram_counts() {
        let t = tokenize("a b a b");
        let g = ngrams(&t, 2);
        assert_eq!(g[&vec!["a".to_string(), "b".to_string()]], 2);
        assert_eq!(g.len(), 2);
        assert!(ngrams(&t, 5).is_empty());
    }
}
