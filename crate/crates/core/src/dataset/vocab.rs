use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{category_name, color_name, predicate_words, COLOR_COUNT, PREDICATE_RULE_COUNT};

pub const START_TOKEN: usize = 0;
pub const END_TOKEN: usize = 1;
pub const UNKNOWN_TOKEN: usize = 2;

/// Bijective token <-> id mapping with the three reserved tokens first.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3
            || tokens[START_TOKEN] != "<start>"
            || tokens[END_TOKEN] != "<end>"
            || tokens[UNKNOWN_TOKEN] != "<unknown>"
        {
            return Err(Error::Parse(
                "vocabulary must begin with <start>, <end>, <unknown>".into(),
            ));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Parse(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Deterministic vocabulary for a generation config: reserved tokens,
    /// articles, category words, color words, predicate words.
    pub fn for_scene_config(c_obj: usize) -> Self {
        let mut tokens = vec![
            "<start>".to_string(),
            "<end>".to_string(),
            "<unknown>".to_string(),
            "a".to_string(),
        ];
        for c in 0..c_obj {
            tokens.push(category_name(c));
        }
        for c in 0..COLOR_COUNT {
            tokens.push(color_name(c).to_string());
        }
        for p in 0..PREDICATE_RULE_COUNT {
            for w in predicate_words(p) {
                if !tokens.iter().any(|t| t == w) {
                    tokens.push(w.to_string());
                }
            }
        }
        Vocabulary::from_tokens(tokens).expect("built-in vocabulary is well-formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id for a token; unknown words map to the reserved unknown id.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNKNOWN_TOKEN)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    /// Space-joined surface form, reserved tokens included verbatim.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unknown>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Token-per-line file, line number = id.
    pub fn to_file(&self, path: &Path) -> Result<()> {
        fs::write(path, self.tokens.join("\n") + "\n")?;
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        Vocabulary::from_tokens(tokens)
    }
}
