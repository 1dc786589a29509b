//! Text-embedding sidecar: a JSON object mapping phrases to embedding vectors.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Embedding, FieldError, TextQuery};

/// Canonical negative phrases used when none are configured.
pub const DEFAULT_NEGATIVES: [&str; 4] = ["object", "things", "stuff", "texture"];

/// Precomputed phrase embeddings, so the core never runs a text encoder.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextEmbeddings {
    dim: usize,
    phrases: BTreeMap<String, Embedding>,
}

impl TextEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self { dim, phrases: BTreeMap::new() }
    }

    /// Inserts (or replaces) a phrase; the vector is renormalized.
    pub fn insert(&mut self, phrase: impl Into<String>, values: Vec<f32>) -> Result<(), FieldError> {
        let phrase = phrase.into();
        if self.phrases.is_empty() && self.dim == 0 {
            self.dim = values.len();
        }
        if values.len() != self.dim {
            return Err(FieldError::DimensionMismatch { expected: self.dim, got: values.len() });
        }
        let e = Embedding::normalized(values)
            .ok_or_else(|| FieldError::Sidecar(format!("zero vector for phrase {phrase:?}")))?;
        self.phrases.insert(phrase, e);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn get(&self, phrase: &str) -> Option<&Embedding> {
        self.phrases.get(phrase)
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.phrases.keys().map(String::as_str)
    }

    /// Builds a query for `phrase` against the given negative phrases.
    pub fn query<S: AsRef<str>>(&self, phrase: &str, negatives: &[S]) -> Result<TextQuery, FieldError> {
        let lookup = |p: &str| self.get(p).cloned().ok_or_else(|| FieldError::UnknownPhrase(p.to_string()));
        let negs = negatives
            .iter()
            .map(|n| Ok((n.as_ref().to_string(), lookup(n.as_ref())?)))
            .collect::<Result<Vec<_>, FieldError>>()?;
        TextQuery::new(phrase, lookup(phrase)?, negs)
    }

    /// Query against [`DEFAULT_NEGATIVES`].
    pub fn default_query(&self, phrase: &str) -> Result<TextQuery, FieldError> {
        self.query(phrase, &DEFAULT_NEGATIVES)
    }

    pub fn from_json(text: &str) -> Result<Self, FieldError> {
        let raw: BTreeMap<String, Vec<f32>> =
            serde_json::from_str(text).map_err(|e| FieldError::Sidecar(e.to_string()))?;
        let mut out = Self::new(raw.values().next().map_or(0, Vec::len));
        for (phrase, values) in raw {
            out.insert(phrase, values)?;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let raw: BTreeMap<&str, &[f32]> = self.phrases.iter().map(|(k, v)| (k.as_str(), v.as_slice())).collect();
        serde_json::to_string_pretty(&raw).expect("string keys serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FieldError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| FieldError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FieldError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sidecar_and_builds_queries() {
        let json = r#"{"mug": [1, 0, 0], "object": [0, 2, 0], "things": [0, 0, 1]}"#;
        let t = TextEmbeddings::from_json(json).unwrap();
        assert_eq!(t.dim(), 3);
        let q = t.query("mug", &["object", "things"]).unwrap();
        assert_eq!(q.negatives.len(), 2);
        assert_eq!(q.negatives[0].1.as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(t.query("cup", &["object"]), Err(FieldError::UnknownPhrase("cup".into())));
        assert!(matches!(t.default_query("mug"), Err(FieldError::UnknownPhrase(p)) if p == "stuff"));
    }

    #[test]
    fn rejects_ragged_vectors() {
        let json = r#"{"a": [1, 0], "b": [1, 0, 0]}"#;
        assert!(matches!(TextEmbeddings::from_json(json), Err(FieldError::DimensionMismatch { .. })));
        assert_eq!(TextEmbeddings::from_json("{}").unwrap().len(), 0);
    }

    #[test]
    fn json_round_trip() {
        let mut t = TextEmbeddings::new(2);
        t.insert("a", vec![0.6, 0.8]).unwrap();
        t.insert("b", vec![1.0, 0.0]).unwrap();
        assert_eq!(TextEmbeddings::from_json(&t.to_json()).unwrap(), t);
    }
}
