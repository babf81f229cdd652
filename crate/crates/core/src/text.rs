//! Token and entity-name normalization shared by every text-facing stage.

/// Lowercases, then splits on anything that is not alphanumeric.
///
/// Lowercasing first matters: some capitals lowercase to a letter plus a
/// combining mark (`İ` -> `i̇`), and splitting afterwards keeps the output
/// stable under a second pass.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Canonical entity form: lowercase tokens joined by `_`, punctuation dropped.
///
/// Returns `None` when nothing alphanumeric is left.
pub fn normalize_entity(raw: &str) -> Option<String> {
    let tokens = tokenize(raw);
    if tokens.is_empty() {
        None
    } else {
        Some(tokens.join("_"))
    }
}

/// Canonical relation key: strips a ConceptNet-style `/r/` prefix, then
/// lowercases and removes separators (`UsedFor`, `used_for` -> `usedfor`).
pub fn normalize_relation(raw: &str) -> Option<String> {
    let raw = raw.trim();
    let raw = raw.strip_prefix("/r/").unwrap_or(raw);
    let key: String = tokenize(raw).concat();
    if key.is_empty() {
        None
    } else {
        Some(key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_punctuation_and_lowercases() {
        assert_eq!(tokenize("What causes LOW liver-enzymes?"), ["what", "causes", "low", "liver", "enzymes"]);
        assert!(tokenize(" ... ").is_empty());
    }

    #[test]
    fn normalization_is_idempotent() {
        let once = normalize_entity("İstanbul Ǆungla").unwrap();
        assert_eq!(normalize_entity(&once).as_deref(), Some(once.as_str()));
    }

    #[test]
    fn entity_normalization() {
        assert_eq!(normalize_entity("Liver Enzyme").as_deref(), Some("liver_enzyme"));
        assert_eq!(normalize_entity("liver_enzyme").as_deref(), Some("liver_enzyme"));
        assert_eq!(normalize_entity("  it's! "), Some("it_s".to_string()));
        assert_eq!(normalize_entity("!!"), None);
    }

    #[test]
    fn relation_normalization() {
        assert_eq!(normalize_relation("/r/UsedFor").as_deref(), Some("usedfor"));
        assert_eq!(normalize_relation("used_for").as_deref(), Some("usedfor"));
        assert_eq!(normalize_relation("--"), None);
    }
}
