use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Case-insensitive synonym table. Each line of the file format is
/// `token<TAB>syn1,syn2,...`; blank lines and `#` comments are skipped.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert an entry. The token itself is dropped from its synonym list;
    /// an entry left with no synonyms is rejected.
    pub fn insert<I, S>(&mut self, token: &str, synonyms: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let key = token.trim().to_lowercase();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::validation(format!("lexicon token {token:?} is not a single token")));
        }
        let mut syns: Vec<String> = Vec::new();
        for s in synonyms {
            let s = s.as_ref().trim().to_lowercase();
            if s.is_empty() || s == key {
                continue;
            }
            if s.contains(char::is_whitespace) {
                return Err(Error::validation(format!(
                    "synonym {s:?} of {key:?} is not a single token"
                )));
            }
            if !syns.contains(&s) {
                syns.push(s);
            }
        }
        if syns.is_empty() {
            return Err(Error::validation(format!("lexicon entry {key:?} has no synonyms besides itself")));
        }
        self.entries.entry(key).or_default().extend(syns);
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = SynonymLexicon::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (token, syns) = line.split_once('\t').ok_or_else(|| {
                Error::format(format!("lexicon line {}", n + 1), "expected token<TAB>synonyms")
            })?;
            lex.insert(token, syns.split(','))
                .map_err(|e| Error::format(format!("lexicon line {}", n + 1), e))?;
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn synonyms(&self, token: &str) -> Option<&[String]> {
        self.entries.get(&token.to_lowercase()).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}
