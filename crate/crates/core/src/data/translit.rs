use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Per-character latinization (e.g. Wubi codes for Chinese characters).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TransliterationTable {
    map: HashMap<char, String>,
    separator: String,
}

impl TransliterationTable {
    pub const DEFAULT_SEPARATOR: &'static str = "|";

    pub fn new(entries: impl IntoIterator<Item = (char, String)>) -> Result<Self> {
        let mut map = HashMap::new();
        for (c, latin) in entries {
            if latin.is_empty() || !latin.is_ascii() {
                return Err(Error::Invalid(format!("mapping for {c:?} must be non-empty ASCII, got {latin:?}")));
            }
            if map.insert(c, latin).is_some() {
                return Err(Error::Invalid(format!("duplicate transliteration entry for {c:?}")));
            }
        }
        Ok(TransliterationTable { map, separator: Self::DEFAULT_SEPARATOR.to_string() })
    }

    pub fn with_separator(mut self, sep: &str) -> Self {
        self.separator = sep.to_string();
        self
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Replaces each mapped character by its code followed by the separator;
    /// everything else is copied verbatim.
    pub fn transliterate(&self, s: &str) -> String {
        let mut out = String::with_capacity(s.len() * 2);
        for c in s.chars() {
            match self.map.get(&c) {
                Some(latin) => {
                    out.push_str(latin);
                    out.push_str(&self.separator);
                }
                None => out.push(c),
            }
        }
        out
    }

    /// UTF-8 TSV, one `char<TAB>latin` row per line.
    pub fn parse_tsv(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fail = |msg: String| Error::Format { path: path.into(), line: i + 1, msg };
            let (key, latin) =
                line.split_once('\t').ok_or_else(|| fail(format!("expected char<TAB>latin, got {line:?}")))?;
            let mut it = key.chars();
            let c = match (it.next(), it.next()) {
                (Some(c), None) => c,
                _ => return Err(fail(format!("key {key:?} is not a single character"))),
            };
            if let Some(prev) = seen.insert(c, i + 1) {
                return Err(fail(format!("duplicate entry for {c:?} (first on line {prev})")));
            }
            if latin.is_empty() || !latin.is_ascii() {
                return Err(fail(format!("code {latin:?} must be non-empty ASCII")));
            }
            entries.push((c, latin.to_string()));
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, path)
    }
}
