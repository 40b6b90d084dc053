use log::warn;

use super::{repair_bio, validate_bio, Dataset, Sentence, Tag};
use crate::error::{GainError, Result};

/// How BIO violations are handled while parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BioMode {
    /// Reject the file.
    #[default]
    Strict,
    /// Repair orphan `I-X` to `B-X` and log a warning.
    Lenient,
}

/// Parses `token<TAB>tag` lines with blank lines between sentences.
pub fn parse_conll(name: &str, text: &str, mode: BioMode) -> Result<Dataset> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<Tag> = Vec::new();
    let mut lines: Vec<usize> = Vec::new();

    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<Tag>, lines: &mut Vec<usize>| {
        if tokens.is_empty() {
            return Ok(());
        }
        let violations = validate_bio(tags);
        if let Some(v) = violations.first() {
            match mode {
                BioMode::Strict => {
                    return Err(GainError::Data(format!(
                        "{} at line {} without head",
                        tags[v.position].name(),
                        lines[v.position]
                    )));
                }
                BioMode::Lenient => {
                    for v in &violations {
                        warn!("line {}: {}; repaired", lines[v.position], v);
                    }
                    repair_bio(tags);
                }
            }
        }
        sentences.push(Sentence {
            tokens: std::mem::take(tokens),
            tags: std::mem::take(tags),
        });
        lines.clear();
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, &mut lines)?;
            continue;
        }
        let (token, tag) = line.split_once('\t').ok_or_else(|| {
            GainError::Data(format!("line {lineno}: expected token<TAB>tag, got {line:?}"))
        })?;
        if token.is_empty() || token.contains(char::is_whitespace) {
            return Err(GainError::Data(format!("line {lineno}: bad token {token:?}")));
        }
        let tag = Tag::parse(tag.trim())
            .ok_or_else(|| GainError::Data(format!("line {lineno}: unknown tag {tag:?}")))?;
        tokens.push(token.to_string());
        tags.push(tag);
        lines.push(lineno);
    }
    flush(&mut tokens, &mut tags, &mut lines)?;
    Ok(Dataset::new(name, sentences))
}

/// Writes the canonical form: one `token<TAB>tag` per line, one blank line
/// between sentences, LF endings, no trailing blank line.
pub fn serialize_conll(data: &Dataset) -> String {
    let mut out = String::new();
    for (i, s) in data.sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (tok, tag) in s.tokens.iter().zip(&s.tags) {
            out.push_str(tok);
            out.push('\t');
            out.push_str(tag.name());
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityType, NUM_TAGS};
    use proptest::prelude::*;

    #[test]
    fn single_line() {
        let d = parse_conll("t", "apple\tB-PROD\n", BioMode::Strict).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.sentences[0].tags, vec![Tag::begin(EntityType::Prod)]);
    }

    #[test]
    fn strict_rejects_orphan() {
        let err = parse_conll("t", "x\tI-LOC\n", BioMode::Strict).unwrap_err();
        assert_eq!(err.to_string(), "data error: I-LOC at line 1 without head");
    }

    #[test]
    fn lenient_repairs_orphan() {
        let d = parse_conll("t", "x\tI-LOC\n", BioMode::Lenient).unwrap();
        assert_eq!(d.sentences[0].tags, vec![Tag::begin(EntityType::Loc)]);
    }

    #[test]
    fn unknown_tag_reports_line() {
        let err = parse_conll("t", "a\tO\n\nb\tB-FOO\n", BioMode::Strict).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn blank_runs_and_crlf_are_tolerated() {
        let d = parse_conll("t", "a\tO\r\n\n\n\nb\tB-CW\n\n", BioMode::Strict).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.sentences[0].tokens, vec!["a"]);
    }

    fn valid_sentence() -> impl Strategy<Value = Sentence> {
        prop::collection::vec(("[a-z0-9]{1,6}", 0..NUM_TAGS), 1..12).prop_map(|pairs| {
            let tokens = pairs.iter().map(|(w, _)| w.clone()).collect();
            let mut tags: Vec<Tag> = pairs.iter().map(|(_, t)| Tag::new(*t).unwrap()).collect();
            repair_bio(&mut tags);
            Sentence { tokens, tags }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn round_trip_is_exact(sentences in prop::collection::vec(valid_sentence(), 0..8)) {
            let d = Dataset::new("p", sentences);
            let text = serialize_conll(&d);
            let back = parse_conll("p", &text, BioMode::Strict).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(serialize_conll(&back), text);
        }
    }
}
