//! Triple ingestion from N-Triples-subset and tab-separated files.
//!
//! Terms are kept as opaque tokens: no prefix expansion and no IRI
//! validation beyond delimiter matching, so datasets such as FB15K (which
//! use `/m/...` identifiers) load unchanged.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed triple: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("input is not valid UTF-8 (byte offset {offset})")]
    InvalidUtf8 { offset: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    fn malformed(line: usize, reason: impl Into<String>) -> Self {
        IngestError::MalformedLine {
            line,
            reason: reason.into(),
        }
    }
}

/// A parsed statement before vocabulary interning.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawTriple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    /// Object came from a quoted literal rather than an IRI.
    pub literal: bool,
}

impl RawTriple {
    pub fn new(subject: &str, predicate: &str, object: &str) -> Self {
        RawTriple {
            subject: subject.to_string(),
            predicate: predicate.to_string(),
            object: object.to_string(),
            literal: false,
        }
    }

    pub fn with_literal(subject: &str, predicate: &str, value: &str) -> Self {
        RawTriple {
            literal: true,
            ..RawTriple::new(subject, predicate, value)
        }
    }

    /// The term under which the object is interned. Literals keep their
    /// quotes so that `"Spain"` never collides with the IRI `Spain`.
    pub fn object_term(&self) -> String {
        if self.literal {
            format!("\"{}\"", self.object)
        } else {
            self.object.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripleFormat {
    Tsv,
    Nt,
}

impl TripleFormat {
    /// Guess from the file extension: `.nt` is N-Triples, anything else TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("nt") => TripleFormat::Nt,
            _ => TripleFormat::Tsv,
        }
    }
}

impl FromStr for TripleFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" | "txt" => Ok(TripleFormat::Tsv),
            "nt" | "ntriples" => Ok(TripleFormat::Nt),
            other => Err(format!("unknown triple format `{other}` (expected tsv or nt)")),
        }
    }
}

impl fmt::Display for TripleFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TripleFormat::Tsv => f.write_str("tsv"),
            TripleFormat::Nt => f.write_str("nt"),
        }
    }
}

/// Lines with the trailing `\r` of CRLF files removed, numbered from 1.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

/// Parses the N-Triples subset `<s> <p> <o> .` / `<s> <p> "literal" .`.
pub fn parse_ntriples(text: &str) -> Result<Vec<RawTriple>, IngestError> {
    let mut out = Vec::new();
    for (n, line) in numbered_lines(text) {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(parse_nt_statement(trimmed).map_err(|reason| IngestError::malformed(n, reason))?);
    }
    Ok(out)
}

fn parse_nt_statement(line: &str) -> Result<RawTriple, String> {
    let mut rest = line;
    let subject = take_iri(&mut rest, "subject")?;
    let predicate = take_iri(&mut rest, "predicate")?;
    rest = rest.trim_start();
    let (object, literal) = if rest.starts_with('"') {
        (take_literal(&mut rest)?, true)
    } else {
        (take_iri(&mut rest, "object")?, false)
    };
    if rest.trim() != "." {
        return Err(format!("expected ` .` after object, found `{}`", rest.trim()));
    }
    Ok(RawTriple {
        subject,
        predicate,
        object,
        literal,
    })
}

fn take_iri(rest: &mut &str, position: &str) -> Result<String, String> {
    let s = rest.trim_start();
    let body = s
        .strip_prefix('<')
        .ok_or_else(|| format!("{position} must be an <IRI>"))?;
    let end = body
        .find('>')
        .ok_or_else(|| format!("unterminated IRI in {position}"))?;
    let iri = &body[..end];
    if iri.is_empty() {
        return Err(format!("empty IRI in {position}"));
    }
    if iri.chars().any(|c| c.is_whitespace() || c == '<') {
        return Err(format!("whitespace or `<` inside IRI in {position}"));
    }
    let after = &body[end + 1..];
    if !after.starts_with(|c: char| c.is_whitespace()) {
        return Err(format!("missing whitespace after {position}"));
    }
    *rest = after;
    Ok(iri.to_string())
}

/// Returns the literal body with quotes stripped and escapes left verbatim.
fn take_literal(rest: &mut &str) -> Result<String, String> {
    let body = &rest[1..];
    let mut escaped = false;
    for (i, c) in body.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' => escaped = true,
            '"' => {
                let value = &body[..i];
                if value.is_empty() {
                    return Err("empty literal".to_string());
                }
                // tabs cannot be carried by the TSV format
                if value.contains('\t') {
                    return Err("tab inside literal".to_string());
                }
                *rest = &body[i + 1..];
                return Ok(value.to_string());
            }
            _ => {}
        }
    }
    Err("unterminated literal".to_string())
}

/// Parses `subject<TAB>predicate<TAB>object` lines. Fields are trimmed; an
/// object wrapped in double quotes is read back as a literal, which is how
/// [`to_tsv`] writes literals.
pub fn parse_tsv(text: &str) -> Result<Vec<RawTriple>, IngestError> {
    let mut out = Vec::new();
    for (n, line) in numbered_lines(text) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(IngestError::malformed(
                n,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let (object, literal) = match fields[2].strip_prefix('"').and_then(|o| o.strip_suffix('"')) {
            Some(inner) if !inner.is_empty() => (inner, true),
            _ => (fields[2], false),
        };
        for (field, name) in [(fields[0], "subject"), (fields[1], "predicate"), (object, "object")] {
            if field.is_empty() {
                return Err(IngestError::malformed(n, format!("empty {name}")));
            }
            if !(literal && name == "object") && field.chars().any(char::is_whitespace) {
                return Err(IngestError::malformed(n, format!("whitespace inside {name}")));
            }
        }
        out.push(RawTriple {
            subject: fields[0].to_string(),
            predicate: fields[1].to_string(),
            object: object.to_string(),
            literal,
        });
    }
    Ok(out)
}

pub fn to_tsv(triples: &[RawTriple]) -> String {
    let mut out = String::new();
    for t in triples {
        out.push_str(&t.subject);
        out.push('\t');
        out.push_str(&t.predicate);
        out.push('\t');
        out.push_str(&t.object_term());
        out.push('\n');
    }
    out
}

pub fn to_ntriples(triples: &[RawTriple]) -> String {
    let mut out = String::new();
    for t in triples {
        let object = if t.literal {
            format!("\"{}\"", t.object)
        } else {
            format!("<{}>", t.object)
        };
        out.push_str(&format!("<{}> <{}> {} .\n", t.subject, t.predicate, object));
    }
    out
}

/// Decodes bytes as UTF-8 and parses them in the given format.
pub fn parse_bytes(bytes: &[u8], format: TripleFormat) -> Result<Vec<RawTriple>, IngestError> {
    let text = std::str::from_utf8(bytes).map_err(|e| IngestError::InvalidUtf8 {
        offset: e.valid_up_to(),
    })?;
    match format {
        TripleFormat::Tsv => parse_tsv(text),
        TripleFormat::Nt => parse_ntriples(text),
    }
}

pub fn read_triples<R: Read>(mut reader: R, format: TripleFormat) -> Result<Vec<RawTriple>, IngestError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|source| IngestError::Io {
        path: "<stream>".to_string(),
        source,
    })?;
    parse_bytes(&bytes, format)
}

pub fn read_triples_file(path: &Path, format: TripleFormat) -> Result<Vec<RawTriple>, IngestError> {
    let bytes = fs::read(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_bytes(&bytes, format)
}

/// Splits off literal-object triples. Returns the remaining triples and the
/// number dropped.
pub fn drop_literals(triples: Vec<RawTriple>) -> (Vec<RawTriple>, usize) {
    let before = triples.len();
    let kept: Vec<RawTriple> = triples.into_iter().filter(|t| !t.literal).collect();
    let dropped = before - kept.len();
    if dropped > 0 {
        log::info!("dropped {dropped} literal-object triples");
    }
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ntriples_birthplace_statement() {
        let t = parse_ntriples("<ex:A> <ex:birthplace> <ex:Spain> .").unwrap();
        assert_eq!(t, vec![RawTriple::new("ex:A", "ex:birthplace", "ex:Spain")]);
    }

    #[test]
    fn ntriples_property_typed() {
        let t = parse_ntriples("<exp:p1> <rdf:type> <exp:T1> .\n").unwrap();
        assert_eq!(t, vec![RawTriple::new("exp:p1", "rdf:type", "exp:T1")]);
    }

    #[test]
    fn empty_inputs() {
        assert!(parse_ntriples("").unwrap().is_empty());
        assert!(parse_tsv("").unwrap().is_empty());
        assert!(parse_ntriples("# only a comment\n\n   \n").unwrap().is_empty());
    }

    #[test]
    fn ntriples_literal_is_flagged() {
        let t = parse_ntriples(r#"<ex:A> <ex:name> "Alice \"A\" Smith" ."#).unwrap();
        assert!(t[0].literal);
        assert_eq!(t[0].object, r#"Alice \"A\" Smith"#);
        assert_eq!(t[0].object_term(), r#""Alice \"A\" Smith""#);
    }

    #[test]
    fn ntriples_malformed_lines_report_line_number() {
        let cases = [
            "<a> <b> <c>",
            "<a> <b> .",
            "ex:a <b> <c> .",
            "<a> <b> <c> . extra",
            "<a><b> <c> .",
            "<a> <b> \"open .",
            "<a> <> <c> .",
        ];
        for case in cases {
            let text = format!("# header\n<x> <y> <z> .\n{case}\n");
            match parse_ntriples(&text) {
                Err(IngestError::MalformedLine { line, .. }) => assert_eq!(line, 3, "{case}"),
                other => panic!("{case}: expected MalformedLine, got {other:?}"),
            }
        }
    }

    #[test]
    fn tsv_fields_are_trimmed() {
        let t = parse_tsv("/m/01 \t /film/genre \t /m/02\n").unwrap();
        assert_eq!(t, vec![RawTriple::new("/m/01", "/film/genre", "/m/02")]);
    }

    #[test]
    fn tsv_arity_violation() {
        let err = parse_tsv("a\tb\tc\na\tb\n").unwrap_err();
        assert!(matches!(err, IngestError::MalformedLine { line: 2, .. }));
        let err = parse_tsv("a\tb\tc\td\n").unwrap_err();
        assert!(matches!(err, IngestError::MalformedLine { line: 1, .. }));
    }

    #[test]
    fn tsv_handles_crlf() {
        let t = parse_tsv("a\tb\tc\r\nd\te\tf\r\n").unwrap();
        assert_eq!(t[1], RawTriple::new("d", "e", "f"));
    }

    #[test]
    fn invalid_utf8() {
        let err = parse_bytes(b"a\tb\t\xff\n", TripleFormat::Tsv).unwrap_err();
        assert!(matches!(err, IngestError::InvalidUtf8 { offset: 4 }));
    }

    #[test]
    fn utf8_terms_survive() {
        let t = parse_tsv("birthplace\t翻訳\t出身\n").unwrap();
        assert_eq!(t[0].predicate, "翻訳");
        let nt = parse_ntriples(&to_ntriples(&t)).unwrap();
        assert_eq!(nt, t);
    }

    #[test]
    fn literals_dropped_with_count() {
        let t = vec![
            RawTriple::new("a", "p", "b"),
            RawTriple::with_literal("a", "name", "Alice"),
        ];
        let (kept, dropped) = drop_literals(t);
        assert_eq!(kept.len(), 1);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn large_tsv_count_preserved() {
        let mut text = String::new();
        for i in 0..592_213 {
            text.push_str(&format!("/m/{}\t/r/{}\t/m/{}\n", i % 14_951, i % 1_345, (i * 7) % 14_951));
        }
        assert_eq!(parse_tsv(&text).unwrap().len(), 592_213);
    }

    fn term() -> impl Strategy<Value = String> {
        "[A-Za-z0-9:/_.#\u{3040}-\u{30ff}-]{1,12}"
    }

    fn raw_triple() -> impl Strategy<Value = RawTriple> {
        (term(), term(), term(), any::<bool>(), "[A-Za-z0-9 ,]{1,10}").prop_map(|(s, p, o, lit, value)| {
            if lit && !value.trim().is_empty() && value.trim() == value {
                RawTriple::with_literal(&s, &p, &value)
            } else {
                RawTriple::new(&s, &p, &o)
            }
        })
    }

    proptest! {
        #[test]
        fn tsv_round_trip(triples in prop::collection::vec(raw_triple(), 0..40)) {
            let back = parse_tsv(&to_tsv(&triples)).unwrap();
            prop_assert_eq!(back, triples);
        }

        #[test]
        fn nt_and_tsv_agree(triples in prop::collection::vec(raw_triple(), 0..40)) {
            let nt = parse_ntriples(&to_ntriples(&triples)).unwrap();
            let tsv = parse_tsv(&to_tsv(&triples)).unwrap();
            prop_assert_eq!(nt.len(), triples.len());
            prop_assert_eq!(nt, tsv);
        }
    }
}
