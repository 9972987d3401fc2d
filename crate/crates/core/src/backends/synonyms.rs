use std::collections::BTreeMap;

use super::SynonymProvider;
use crate::error::Result;

/// Fixed word → synonyms table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StaticSynonyms {
    table: BTreeMap<String, Vec<String>>,
}

const BUILTIN: &[(&str, &[&str])] = &[
    ("nuclei", &["nucleus", "cyteblast", "karyon"]),
    ("nucleus", &["nuclei", "cyteblast", "karyon"]),
    ("round", &["oval", "elliptical", "circular", "rounded", "spherical", "curved"]),
    ("circle", &["ring", "disc", "loop", "cycle", "circular", "cyclical"]),
    ("oblong", &["rectangular", "rectilinear", "oblate", "elliptical"]),
    ("oval", &["elliptical", "oblate", "rounded", "ovoid"]),
    ("blue", &["azure", "aqua", "cyan", "turquoise"]),
    ("black", &["ebony", "coal", "jet", "pitch", "onyx"]),
    ("purple", &["magenta", "violet", "lilac"]),
];

impl StaticSynonyms {
    /// Table covering the default nouns and the most common shape and colour words.
    pub fn builtin() -> Self {
        Self::from_table(
            BUILTIN
                .iter()
                .map(|(w, syns)| (w.to_string(), syns.iter().map(|s| s.to_string()).collect())),
        )
    }

    pub fn from_table(entries: impl IntoIterator<Item = (String, Vec<String>)>) -> Self {
        let table = entries
            .into_iter()
            .map(|(w, syns)| (w.to_lowercase(), syns.into_iter().map(|s| s.to_lowercase()).collect()))
            .collect();
        Self { table }
    }

    pub fn insert(&mut self, word: &str, synonyms: Vec<String>) {
        self.table.insert(word.to_lowercase(), synonyms);
    }
}

impl SynonymProvider for StaticSynonyms {
    fn synonyms(&self, word: &str, k: usize) -> Result<Vec<String>> {
        let word = word.trim().to_lowercase();
        let mut out: Vec<String> = Vec::new();
        for s in self.table.get(&word).into_iter().flatten() {
            if out.len() == k {
                break;
            }
            if *s != word && !out.contains(s) {
                out.push(s.clone());
            }
        }
        Ok(out)
    }
}
