use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Lowercase words split at whitespace and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Fixed token list; index 0 is the unknown token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Sorted vocabulary of every token in `texts`, after the unknown token.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(tokenize).collect();
        let mut tokens = vec![UNKNOWN_TOKEN.to_string()];
        tokens.extend(words.into_iter().filter(|w| w != UNKNOWN_TOKEN));
        tokens.into()
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

    /// Token ids of `text`; unknown words map to 0, an empty text to `[0]`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let ids: Vec<usize> = tokenize(text)
            .iter()
            .map(|t| self.index.get(t).copied().unwrap_or(0))
            .collect();
        if ids.is_empty() {
            vec![0]
        } else {
            ids
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_and_maps_unknown_words() {
        assert_eq!(tokenize("I want to find the Red circle."), ["i", "want", "to", "find", "the", "red", "circle"]);
        let v = Vocabulary::build(["I want a circle.", "I want a star!"]);
        assert_eq!(v.tokens()[0], UNKNOWN_TOKEN);
        assert_eq!(v.len(), 6);
        let ids = v.encode("a dragon");
        assert_ne!(ids[0], 0);
        assert_eq!(ids[1], 0);
        assert_eq!(v.encode("..."), [0]);
    }
}
