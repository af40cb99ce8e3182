//! Rule-based caption parser.
//!
//! Grammar: `caption := NP (REL NP)*`, where each NP is the run of tokens
//! between two relation phrases. Inside an NP determiners are dropped,
//! lexicon attributes become attribute nodes on the NP's object, and every
//! other token joins the compound noun (last token is the head). Relation
//! phrases are matched greedily, longest first, once the current NP holds a
//! noun.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::graph::{GraphBuilder, GraphError, RawGraph, SceneGraph};

const STRIPPED: &[char] = &['.', ',', '!', '?', ';', ':', '"', '\''];
const DEFAULT_DETERMINERS: &[&str] = &["a", "an", "the"];

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("no object token in caption {0:?}")]
    NoObject(String),
    #[error("relation {relation:?} has no following noun phrase in {caption:?}")]
    UnknownStructure { caption: String, relation: String },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl ParseError {
    /// For schema errors, the JSON path of the offending field.
    pub fn schema_path(&self) -> Option<&str> {
        match self {
            ParseError::Schema { path, .. } => Some(path),
            _ => None,
        }
    }
}

/// Lowercases, strips `.,!?;:"'`, splits hyphens, and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .replace(STRIPPED, "")
        .replace('-', " ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Word lists driving the grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    determiners: BTreeSet<String>,
    attributes: BTreeSet<String>,
    /// Tokenized relation phrases, longest first.
    relation_phrases: Vec<Vec<String>>,
}

impl Lexicon {
    pub fn new<D, A, R>(determiners: D, attributes: A, relation_phrases: R) -> Result<Self, ParseError>
    where
        D: IntoIterator,
        D::Item: AsRef<str>,
        A: IntoIterator,
        A::Item: AsRef<str>,
        R: IntoIterator,
        R::Item: AsRef<str>,
    {
        let lower = |s: &str| s.trim().to_lowercase();
        let determiners = determiners
            .into_iter()
            .map(|s| lower(s.as_ref()))
            .filter(|s| !s.is_empty())
            .collect();
        let attributes = attributes
            .into_iter()
            .map(|s| lower(s.as_ref()))
            .filter(|s| !s.is_empty())
            .collect();
        let mut phrases: BTreeSet<Vec<String>> = BTreeSet::new();
        for p in relation_phrases {
            let tokens = tokenize(p.as_ref());
            if tokens.is_empty() {
                continue;
            }
            if tokens.len() > 3 {
                return Err(ParseError::Lexicon(format!(
                    "relation phrase {:?} longer than 3 tokens",
                    p.as_ref()
                )));
            }
            phrases.insert(tokens);
        }
        if phrases.is_empty() {
            return Err(ParseError::Lexicon("no relation phrases".into()));
        }
        let mut relation_phrases: Vec<Vec<String>> = phrases.into_iter().collect();
        relation_phrases.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        Ok(Lexicon {
            determiners,
            attributes,
            relation_phrases,
        })
    }

    /// Loads `attributes.txt`, `relations.txt` and (optionally)
    /// `determiners.txt` from `dir`. Without a determiner file, "a", "an"
    /// and "the" are used.
    pub fn load_dir(dir: &Path) -> Result<Self, ParseError> {
        let attributes = read_word_list(&dir.join("attributes.txt"))?;
        let relations = read_word_list(&dir.join("relations.txt"))?;
        let det_path = dir.join("determiners.txt");
        let determiners = if det_path.exists() {
            read_word_list(&det_path)?
        } else {
            DEFAULT_DETERMINERS.iter().map(|s| s.to_string()).collect()
        };
        Lexicon::new(determiners, attributes, relations)
    }

    pub fn is_attribute(&self, token: &str) -> bool {
        self.attributes.contains(token)
    }

    pub fn is_determiner(&self, token: &str) -> bool {
        self.determiners.contains(token)
    }

    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(String::as_str)
    }

    pub fn relation_phrases(&self) -> impl Iterator<Item = String> + '_ {
        self.relation_phrases.iter().map(|p| p.join(" "))
    }

    /// Length of the longest relation phrase starting at `tokens[at]`.
    fn match_relation(&self, tokens: &[String], at: usize) -> Option<usize> {
        self.relation_phrases
            .iter()
            .find(|p| tokens.len() >= at + p.len() && tokens[at..at + p.len()] == p[..])
            .map(Vec::len)
    }
}

/// Reads a one-entry-per-line word list; blank lines and `#` comments are skipped.
pub fn read_word_list(path: &Path) -> Result<Vec<String>, ParseError> {
    let text = fs::read_to_string(path).map_err(|source| ParseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

#[derive(Default)]
struct NounPhrase {
    attributes: Vec<String>,
    nouns: Vec<String>,
}

/// Parses a caption into a scene graph.
pub fn parse_caption(text: &str, lex: &Lexicon) -> Result<SceneGraph, ParseError> {
    let tokens = tokenize(text);
    let mut phrases: Vec<NounPhrase> = vec![NounPhrase::default()];
    let mut relations: Vec<String> = Vec::new();

    let mut i = 0;
    while i < tokens.len() {
        let current = phrases.last_mut().expect("at least one phrase");
        if !current.nouns.is_empty() {
            if let Some(len) = lex.match_relation(&tokens, i) {
                relations.push(tokens[i..i + len].join(" "));
                phrases.push(NounPhrase::default());
                i += len;
                continue;
            }
        }
        let tok = &tokens[i];
        if lex.is_determiner(tok) {
            // dropped
        } else if lex.is_attribute(tok) {
            current.attributes.push(tok.clone());
        } else {
            current.nouns.push(tok.clone());
        }
        i += 1;
    }

    if phrases[0].nouns.is_empty() {
        return Err(ParseError::NoObject(text.to_string()));
    }
    if let Some(last) = phrases.last() {
        if last.nouns.is_empty() {
            return Err(ParseError::UnknownStructure {
                caption: text.to_string(),
                relation: relations.last().cloned().unwrap_or_default(),
            });
        }
    }

    let mut b = GraphBuilder::new();
    let mut ids = Vec::with_capacity(phrases.len());
    for mut np in phrases {
        let head = np.nouns.pop().expect("checked non-empty");
        let id = b.object_parts(head, np.nouns);
        for a in &np.attributes {
            b.attribute(id, a);
        }
        ids.push(id);
    }
    for (k, pred) in relations.iter().enumerate() {
        b.relation(ids[k], pred, ids[k + 1]);
    }
    Ok(b.build()?)
}

/// Parses one JSONL graph record.
pub fn load_graph_json(record: &str) -> Result<SceneGraph, ParseError> {
    let de = &mut serde_json::Deserializer::from_str(record);
    let raw: RawGraph = serde_path_to_error::deserialize(de).map_err(|e| ParseError::Schema {
        path: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    SceneGraph::try_from(raw).map_err(|e| ParseError::Schema {
        path: e.path().to_string(),
        message: e.to_string(),
    })
}
