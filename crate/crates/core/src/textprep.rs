//! Sentence segmentation, tokenization and (source, next-sentence) pair
//! extraction.
//!
//! The tokenizer works chunk by chunk: input is NFC-normalized, split on
//! whitespace, and each chunk has its leading and trailing punctuation peeled
//! off one character at a time. Known abbreviations and dotted initialisms
//! ("U.S.", "e.g.") are kept whole. Word-internal punctuation (apostrophes,
//! hyphens, decimal points) stays inside its token.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Abbreviations that keep their trailing period and never end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "Sr.", "Jr.", "St.", "Mt.", "Gen.", "Gov.", "Sen.",
    "Rep.", "Lt.", "Col.", "Sgt.", "Capt.", "Cmdr.", "Adm.", "Rev.", "Inc.", "Ltd.", "Co.",
    "Corp.", "Bros.", "vs.", "etc.", "No.", "Jan.", "Feb.", "Mar.", "Apr.", "Jun.", "Jul.", "Aug.",
    "Sep.", "Sept.", "Oct.", "Nov.", "Dec.", "approx.", "dept.", "est.", "fig.", "Ave.", "Blvd.",
    "Ft.", "Mass.", "Calif.", "Fla.", "Wash.",
];

const OPENING: &[&str] = &["(", "[", "{", "$", "#", "¿", "¡", "«", "“", "‘"];
const CLOSING: &[&str] = &[
    ".", ",", ";", ":", "!", "?", ")", "]", "}", "%", "…", "»", "”", "’",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub body: String,
}

/// A sentence as an ordered token list together with its surface text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSentence {
    pub tokens: Vec<String>,
    pub raw: String,
    pub char_len: usize,
}

impl TokenizedSentence {
    /// Builds a sentence from tokens, rendering `raw` with [`detokenize`].
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let raw = detokenize(&tokens);
        let char_len = raw.chars().count();
        Self {
            tokens,
            raw,
            char_len,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Surface text of the tokens at `kept`.
    pub fn render(&self, kept: &[usize]) -> String {
        let toks: Vec<&str> = kept.iter().map(|&i| self.tokens[i].as_str()).collect();
        detokenize(&toks)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: TokenizedSentence,
    pub next: TokenizedSentence,
    pub doc_id: String,
    pub position: usize,
}

/// JSON Lines record for one extracted pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub doc_id: String,
    pub position: usize,
    pub source: String,
    pub next: String,
}

impl From<&SentencePair> for PairRecord {
    fn from(p: &SentencePair) -> Self {
        PairRecord {
            doc_id: p.doc_id.clone(),
            position: p.position,
            source: p.source.raw.clone(),
            next: p.next.raw.clone(),
        }
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '“' | '”' | '‘' | '’' | '«' | '»' | '…' | '—' | '–' | '¿' | '¡' | '·'
        )
}

fn is_initialism(s: &str) -> bool {
    // two or more "X." groups, e.g. "U.S." or "e.g."
    let chars: Vec<char> = s.chars().collect();
    chars.len() >= 4
        && chars.len().is_multiple_of(2)
        && chars.chunks(2).all(|p| p[0].is_alphabetic() && p[1] == '.')
}

/// Whether a chunk is kept whole as an abbreviation.
pub fn is_abbreviation(s: &str) -> bool {
    ABBREVIATIONS.contains(&s) || is_initialism(s)
}

fn tokenize_chunk(chunk: &str, out: &mut Vec<String>) {
    if is_abbreviation(chunk) {
        out.push(chunk.to_string());
        return;
    }
    let mut core = chunk;
    while let Some(c) = core.chars().next() {
        if !is_punct(c) {
            break;
        }
        out.push(c.to_string());
        core = &core[c.len_utf8()..];
    }
    let mut trailing = Vec::new();
    while let Some(c) = core.chars().next_back() {
        if !is_punct(c) || is_abbreviation(core) {
            break;
        }
        trailing.push(c.to_string());
        core = &core[..core.len() - c.len_utf8()];
    }
    if !core.is_empty() {
        out.push(core.to_string());
    }
    out.extend(trailing.into_iter().rev());
}

fn tokenize_str(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        tokenize_chunk(chunk, &mut out);
    }
    out
}

/// Splits a sentence into word and punctuation tokens.
pub fn tokenize(sentence: &str) -> TokenizedSentence {
    let normalized: String = sentence.nfc().collect();
    TokenizedSentence {
        tokens: tokenize_str(&normalized),
        char_len: sentence.chars().count(),
        raw: sentence.to_string(),
    }
}

/// Tokens only, without building a [`TokenizedSentence`].
pub fn tokens_of(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect();
    tokenize_str(&normalized)
}

/// Joins tokens with single spaces, attaching closing punctuation to the
/// previous token and opening punctuation to the next one.
///
/// A token is only attached when the merged chunk still tokenizes back to the
/// same tokens, so `tokenize(detokenize(t)) == t` for every tokenizer output.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut chunk = String::new();
    let mut chunk_tokens: Vec<&str> = Vec::new();
    for tok in tokens.iter().map(AsRef::as_ref) {
        let attach = match chunk_tokens.last() {
            None => false,
            Some(prev) => {
                (CLOSING.contains(&tok) || OPENING.contains(prev)) && {
                    let mut merged = chunk.clone();
                    merged.push_str(tok);
                    let got = tokenize_str(&merged);
                    got.len() == chunk_tokens.len() + 1
                        && got
                            .iter()
                            .zip(chunk_tokens.iter().chain([&tok]))
                            .all(|(a, b)| a == b)
                }
            }
        };
        if !attach && !chunk.is_empty() {
            out.push_str(&chunk);
            out.push(' ');
            chunk.clear();
            chunk_tokens.clear();
        }
        chunk.push_str(tok);
        chunk_tokens.push(tok);
    }
    out.push_str(&chunk);
    out
}

fn ends_sentence(chunk: &str) -> bool {
    let trimmed = chunk.trim_end_matches(['"', '\'', ')', ']', '”', '’', '»']);
    match trimmed.chars().last() {
        Some('.') => !is_abbreviation(trimmed),
        Some('!') | Some('?') | Some('…') => true,
        _ => false,
    }
}

/// Splits a body of text into sentences, with internal whitespace runs
/// collapsed to single spaces.
///
/// A boundary follows a whitespace-delimited chunk ending in `.`, `!` or `?`
/// (optionally followed by closing quotes or brackets), unless the chunk is an
/// abbreviation or the next chunk starts with a lowercase letter. Decimal
/// numbers never end in a period and so never split.
pub fn segment_sentences(body: &str) -> Vec<String> {
    let normalized: String = body.nfc().collect();
    let chunks: Vec<&str> = normalized.split_whitespace().collect();

    let mut sentences = Vec::new();
    let mut current = String::new();
    for (idx, &chunk) in chunks.iter().enumerate() {
        if !current.is_empty() {
            current.push(' ');
        }
        current.push_str(chunk);
        let boundary = match chunks.get(idx + 1) {
            None => true,
            Some(next) => {
                ends_sentence(chunk) && !next.chars().next().is_some_and(char::is_lowercase)
            }
        };
        if boundary {
            sentences.push(std::mem::take(&mut current));
        }
    }
    sentences
}

/// Adjacent (sentence, following sentence) pairs of a document. A document of
/// `n` sentences yields `n - 1` pairs.
pub fn extract_pairs(doc: &RawDocument) -> Vec<SentencePair> {
    let sentences: Vec<TokenizedSentence> = segment_sentences(&doc.body)
        .iter()
        .map(|s| tokenize(s))
        .collect();
    sentences
        .windows(2)
        .enumerate()
        .map(|(position, w)| SentencePair {
            source: w[0].clone(),
            next: w[1].clone(),
            doc_id: doc.id.clone(),
            position,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s).tokens
    }

    #[test]
    fn segment_examples() {
        assert!(segment_sentences("").is_empty());
        assert!(segment_sentences("   \n\t ").is_empty());
        assert_eq!(segment_sentences("A. B. C."), vec!["A.", "B.", "C."]);
        assert_eq!(
            segment_sentences("Mr. Smith left. He returned."),
            vec!["Mr. Smith left.", "He returned."]
        );
    }

    #[test]
    fn segment_collapses_whitespace() {
        assert_eq!(
            segment_sentences("One\n  two.\n\nThree."),
            vec!["One two.", "Three."]
        );
    }

    #[test]
    fn segment_guards() {
        assert_eq!(
            segment_sentences("Prices rose 3.5 percent. Then fell!  Why? Nobody knows"),
            vec![
                "Prices rose 3.5 percent.",
                "Then fell!",
                "Why?",
                "Nobody knows"
            ]
        );
        assert_eq!(
            segment_sentences("He said \"stop.\" She left."),
            vec!["He said \"stop.\"", "She left."]
        );
        assert_eq!(
            segment_sentences("Talks with the U.S. resumed."),
            vec!["Talks with the U.S. resumed."]
        );
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            toks("Hong Kong, a bustling metropolis"),
            vec!["Hong", "Kong", ",", "a", "bustling", "metropolis"]
        );
        assert!(toks("").is_empty());
        assert_eq!(toks("U.S. talks resumed"), vec!["U.S.", "talks", "resumed"]);
        assert_eq!(
            toks("(it's 3.5%)..."),
            vec!["(", "it's", "3.5", "%", ")", ".", ".", "."]
        );
        assert_eq!(toks("the U.S., then"), vec!["the", "U.S.", ",", "then"]);
    }

    #[test]
    fn tokenized_sentence_fields() {
        let t = tokenize("Hong Kong, a bustling metropolis");
        assert_eq!(t.char_len, 32);
        assert_eq!(t.raw, "Hong Kong, a bustling metropolis");
    }

    #[test]
    fn detokenize_examples() {
        assert_eq!(detokenize::<&str>(&[]), "");
        assert_eq!(detokenize(&["the", "cat", "sat", "."]), "the cat sat.");
        assert_eq!(detokenize(&["Hong", "Kong", ","]), "Hong Kong,");
        assert_eq!(detokenize(&["(", "a", ")"]), "(a)");
    }

    #[test]
    fn detokenize_refuses_merges_that_change_tokens() {
        // "Mr." would be read back as an abbreviation
        let t = vec!["Mr", "."];
        let s = detokenize(&t);
        assert_eq!(s, "Mr .");
        assert_eq!(toks(&s), t);
    }

    #[test]
    fn pairs_by_adjacency() {
        let doc = |body: &str| RawDocument {
            id: "d".into(),
            body: body.into(),
        };
        assert!(extract_pairs(&doc("")).is_empty());
        assert!(extract_pairs(&doc("Only one.")).is_empty());
        let pairs = extract_pairs(&doc("First one. Second one. Third one."));
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].source.raw, "First one.");
        assert_eq!(pairs[0].next.raw, "Second one.");
        assert_eq!(pairs[1].source.raw, "Second one.");
        assert_eq!(pairs[1].next.raw, "Third one.");
        assert_eq!(pairs[1].position, 1);
    }

    fn text_strategy() -> impl Strategy<Value = String> {
        let atoms = prop::sample::select(vec![
            "a", "cat", "U.S.", "Mr.", "Mr", "(", ")", ",", ".", "...", "it's", "3.5", "%", "\"",
            "'", "-", "x.y", "e.g.", "Hong", "$", "?", "!", "“", "”", "é", "e\u{301}", ";", ":",
        ]);
        prop::collection::vec((atoms, prop::bool::ANY), 0..16).prop_map(|parts| {
            let mut s = String::new();
            for (a, space) in parts {
                s.push_str(a);
                if space {
                    s.push(' ');
                }
            }
            s
        })
    }

    proptest! {
        #[test]
        fn round_trip(text in text_strategy()) {
            let t = toks(&text);
            prop_assert_eq!(toks(&detokenize(&t)), t);
        }

        #[test]
        fn tokens_have_no_whitespace(text in text_strategy()) {
            for t in toks(&text) {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.chars().any(char::is_whitespace));
            }
        }

        #[test]
        fn segmentation_covers_content(text in text_strategy()) {
            let sents = segment_sentences(&text);
            let strip = |s: &str| -> String {
                s.nfc().filter(|c| !c.is_whitespace()).collect()
            };
            let joined: String = sents.iter().map(|s| strip(s)).collect();
            prop_assert_eq!(joined, strip(&text));
            prop_assert!(sents.iter().all(|s| !s.trim().is_empty()));
        }

        #[test]
        fn pair_count(text in text_strategy()) {
            let doc = RawDocument { id: "d".into(), body: text.clone() };
            let n = segment_sentences(&text).len();
            prop_assert_eq!(extract_pairs(&doc).len(), n.saturating_sub(1));
        }
    }
}
