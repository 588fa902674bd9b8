//! Vocabularies, canonical token forms and the edit-distance kernels.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::vocabmap::{Direction, MappingTable, Provenance};

/// Space marker used by byte-level BPE vocabularies.
pub const BYTE_LEVEL_SPACE: char = '\u{0120}';
/// Space marker used by sentencepiece vocabularies.
pub const SENTENCEPIECE_SPACE: char = '\u{2581}';

/// A token with its tokenizer-specific decoration removed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalToken {
    pub text: String,
    pub leading_space: bool,
}

impl CanonicalToken {
    pub fn new(text: impl Into<String>, leading_space: bool) -> Self {
        Self { text: text.into(), leading_space }
    }

    /// Surface string with the leading space written out as `' '`.
    pub fn surface(&self) -> String {
        let mut s = String::with_capacity(self.text.len() + 1);
        if self.leading_space {
            s.push(' ');
        }
        s.push_str(&self.text);
        s
    }

    /// Raw form in sentencepiece convention; `normalize_token` maps it back to `self`.
    pub fn to_raw(&self) -> String {
        let mut s = String::with_capacity(self.text.len() + 3);
        if self.leading_space {
            s.push(SENTENCEPIECE_SPACE);
        }
        s.push_str(&self.text);
        s
    }

    /// Length in characters, counting the leading space as one.
    pub fn char_len(&self) -> usize {
        self.text.chars().count() + usize::from(self.leading_space)
    }
}

impl fmt::Display for CanonicalToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface())
    }
}

fn is_space_marker(c: char) -> bool {
    c == BYTE_LEVEL_SPACE || c == SENTENCEPIECE_SPACE || c == ' '
}

/// Decodes tokens made only of `<0xNN>` escapes. Returns `None` when the token
/// has any other shape or the bytes are not valid UTF-8.
fn decode_byte_escapes(raw: &str) -> Option<String> {
    let bytes = raw.as_bytes();
    if bytes.is_empty() || !bytes.len().is_multiple_of(6) {
        return None;
    }
    let mut out = Vec::with_capacity(bytes.len() / 6);
    for chunk in bytes.chunks_exact(6) {
        if &chunk[..3] != b"<0x" || chunk[5] != b'>' {
            return None;
        }
        let hex = std::str::from_utf8(&chunk[3..5]).ok()?;
        out.push(u8::from_str_radix(hex, 16).ok()?);
    }
    String::from_utf8(out).ok()
}

/// Canonicalizes a raw vocabulary entry.
///
/// One leading space marker (`Ġ`, `▁` or a literal space) becomes the
/// `leading_space` flag; markers further inside become plain spaces. Tokens
/// consisting only of `<0xNN>` byte escapes are decoded when the bytes are
/// valid UTF-8. Case is preserved.
pub fn normalize_token(raw: &str) -> CanonicalToken {
    let decoded = decode_byte_escapes(raw);
    let s = decoded.as_deref().unwrap_or(raw);
    let mut chars = s.chars();
    let leading_space = match chars.clone().next() {
        Some(c) if is_space_marker(c) => {
            chars.next();
            true
        }
        _ => false,
    };
    let text = chars.map(|c| if c == BYTE_LEVEL_SPACE || c == SENTENCEPIECE_SPACE { ' ' } else { c }).collect();
    CanonicalToken { text, leading_space }
}

/// Character-level Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub(crate) fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Length-normalized edit distance in `[0, 1]`.
///
/// The texts are compared character by character; a differing `leading_space`
/// flag costs one more edit, and the leading space counts toward each token's
/// length in the denominator `max(|a|, |b|)`.
pub fn normalized_edit_distance(a: &CanonicalToken, b: &CanonicalToken) -> Result<f64> {
    if a.text.is_empty() {
        return Err(Error::EmptyToken(a.to_raw()));
    }
    if b.text.is_empty() {
        return Err(Error::EmptyToken(b.to_raw()));
    }
    let edits = levenshtein(&a.text, &b.text) + usize::from(a.leading_space != b.leading_space);
    let denom = a.char_len().max(b.char_len());
    Ok((edits as f64 / denom as f64).min(1.0))
}

/// An immutable token-string to id table.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    canonical: Vec<CanonicalToken>,
}

impl Vocabulary {
    /// Builds a vocabulary where each token's id is its index.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::Vocabulary("vocabulary is empty".into()));
        }
        if tokens.len() > u32::MAX as usize {
            return Err(Error::Vocabulary("vocabulary too large".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if ids.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token {tok:?}")));
            }
        }
        let canonical = tokens.iter().map(|t| normalize_token(t)).collect();
        Ok(Self { tokens, ids, canonical })
    }

    /// Parses a `{ "<token>": <id>, ... }` object. Ids must cover `[0, size)`
    /// exactly once each.
    pub fn from_json_str(json: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(json).map_err(|e| Error::Vocabulary(format!("not valid json: {e}")))?;
        let Value::Object(map) = value else {
            return Err(Error::Vocabulary("expected a json object".into()));
        };
        let size = map.len();
        let mut slots: Vec<Option<String>> = vec![None; size];
        for (tok, id) in map {
            let id =
                id.as_u64().ok_or_else(|| Error::Vocabulary(format!("id of {tok:?} is not a non-negative integer")))?;
            let slot = usize::try_from(id)
                .ok()
                .and_then(|i| slots.get_mut(i))
                .ok_or_else(|| Error::Vocabulary(format!("id {id} of {tok:?} outside [0, {size})")))?;
            if let Some(prev) = slot {
                return Err(Error::Vocabulary(format!("duplicate id {id} for {prev:?} and {tok:?}")));
            }
            *slot = Some(tok);
        }
        // `size` distinct in-range ids fill every slot.
        Self::from_tokens(slots.into_iter().map(|s| s.expect("every id slot filled")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
        Self::from_json_str(&json).map_err(|e| match e {
            Error::Vocabulary(msg) => Error::Vocabulary(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Serializes to the vocabulary file format, keys in id order.
    pub fn to_json_string(&self) -> String {
        let mut out = String::from("{");
        for (id, tok) in self.tokens.iter().enumerate() {
            if id > 0 {
                out.push_str(", ");
            }
            out.push_str(&serde_json::to_string(tok).expect("strings serialize"));
            out.push_str(&format!(": {id}"));
        }
        out.push('}');
        out
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn canonical(&self, id: u32) -> Option<&CanonicalToken> {
        self.canonical.get(id as usize)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn canonical_tokens(&self) -> &[CanonicalToken] {
        &self.canonical
    }
}

/// Exact-match table from `source` ids to `target` ids over canonical forms.
/// When several target tokens share a canonical form the smallest id wins.
pub(crate) fn exact_match(source: &Vocabulary, target: &Vocabulary, direction: Direction) -> MappingTable {
    let mut by_form: HashMap<&CanonicalToken, u32> = HashMap::with_capacity(target.size());
    for (id, form) in target.canonical.iter().enumerate() {
        by_form.entry(form).or_insert(id as u32);
    }
    let mut table = MappingTable::new(direction);
    for (id, form) in source.canonical.iter().enumerate() {
        if let Some(&tgt) = by_form.get(form) {
            table.insert(id as u32, tgt, Provenance::Exact);
        }
    }
    table
}

/// Teacher-to-student table of all token pairs with equal canonical forms.
pub fn build_exact_match_table(v_stu: &Vocabulary, v_tea: &Vocabulary) -> MappingTable {
    exact_match(v_tea, v_stu, Direction::TeacherToStudent)
}

/// Student-to-teacher counterpart of [`build_exact_match_table`].
pub fn build_reverse_exact_match_table(v_stu: &Vocabulary, v_tea: &Vocabulary) -> MappingTable {
    exact_match(v_stu, v_tea, Direction::StudentToTeacher)
}
