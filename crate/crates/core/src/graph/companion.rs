//! Companion tokenisation (form, lemma, XPOS, character offsets), NER tag
//! sources, and alignment of companion tokens onto an MRP `input` string.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use super::MrpGraph;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompanionToken {
    pub form: String,
    pub lemma: String,
    pub xpos: String,
    /// Character offsets, half-open.
    pub start: usize,
    pub end: usize,
}

impl CompanionToken {
    pub fn new(form: &str, lemma: &str, xpos: &str, start: usize) -> Self {
        CompanionToken {
            form: form.to_string(),
            lemma: lemma.to_string(),
            xpos: xpos.to_string(),
            start,
            end: start + form.chars().count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CompanionSentence {
    pub id: Option<String>,
    pub tokens: Vec<CompanionToken>,
    /// One tag per token; `O` for none.
    pub ner_tags: Vec<String>,
}

impl CompanionSentence {
    pub fn new(id: Option<String>, tokens: Vec<CompanionToken>) -> Self {
        let ner_tags = vec!["O".to_string(); tokens.len()];
        CompanionSentence { id, tokens, ner_tags }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The sentence text implied by token forms and offsets, gaps filled with spaces.
    pub fn text(&self) -> String {
        let mut out = String::new();
        let mut cursor = 0;
        for t in &self.tokens {
            while cursor < t.start {
                out.push(' ');
                cursor += 1;
            }
            out.push_str(&t.form);
            cursor = t.end.max(cursor);
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum CompanionError {
    #[error("line {line}: expected 5 or 10 tab-separated columns, found {found}")]
    Columns { line: usize, found: usize },
    #[error("line {line}: bad TokenRange `{value}`")]
    TokenRange { line: usize, value: String },
    #[error("NER sidecar line {line}: {found} tags for a sentence of {expected} tokens")]
    NerLength { line: usize, expected: usize, found: usize },
    #[error("NER sidecar has {found} lines for {expected} sentences")]
    NerSentences { expected: usize, found: usize },
}

fn parse_range(misc: &str) -> Option<Result<(usize, usize), ()>> {
    let value = misc.split('|').find_map(|kv| kv.strip_prefix("TokenRange="))?;
    let parsed = value.split_once(':').and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
    Some(parsed.ok_or(()))
}

/// Read a token-per-line companion document.
///
/// Columns are `index form lemma xpos misc` (or the ten CoNLL-U columns);
/// blank lines separate sentences and `# sent_id = ...` names them. Offsets
/// come from `TokenRange=from:to` in misc when present, otherwise they are
/// rebuilt from the forms, one space between tokens unless `SpaceAfter=No`.
pub fn read_companion(doc: &str) -> Result<Vec<CompanionSentence>, CompanionError> {
    let mut out = Vec::new();
    let mut id: Option<String> = None;
    let mut tokens: Vec<CompanionToken> = Vec::new();
    let mut cursor = 0usize;
    let mut flush = |id: &mut Option<String>, tokens: &mut Vec<CompanionToken>, cursor: &mut usize| {
        if !tokens.is_empty() {
            out.push(CompanionSentence::new(id.take(), std::mem::take(tokens)));
        }
        *id = None;
        *cursor = 0;
    };
    for (i, raw) in doc.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut id, &mut tokens, &mut cursor);
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                let key = key.trim();
                if key == "sent_id" || key == "id" {
                    id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let (form, lemma, xpos, misc) = match cols.len() {
            5 => (cols[1], cols[2], cols[3], cols[4]),
            10 => (cols[1], cols[2], cols[4], cols[9]),
            found => return Err(CompanionError::Columns { line: line_no, found }),
        };
        // CoNLL-U multiword ranges and empty nodes carry no surface token.
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let (start, end) = match parse_range(misc) {
            Some(Ok(range)) => range,
            Some(Err(())) => {
                return Err(CompanionError::TokenRange {
                    line: line_no,
                    value: misc.to_string(),
                })
            }
            None => (cursor, cursor + form.chars().count()),
        };
        let space_after = !misc.split('|').any(|kv| kv == "SpaceAfter=No");
        cursor = end + usize::from(space_after);
        tokens.push(CompanionToken {
            form: form.to_string(),
            lemma: lemma.to_string(),
            xpos: xpos.to_string(),
            start,
            end,
        });
    }
    flush(&mut id, &mut tokens, &mut cursor);
    Ok(out)
}

/// Inverse of [`read_companion`] in the five-column layout.
pub fn write_companion(sentences: &[CompanionSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        if let Some(id) = &s.id {
            out.push_str(&format!("# sent_id = {id}\n"));
        }
        for (i, t) in s.tokens.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\tTokenRange={}:{}\n",
                i + 1,
                t.form,
                t.lemma,
                t.xpos,
                t.start,
                t.end
            ));
        }
        out.push('\n');
    }
    out
}

/// One whitespace-separated tag line per sentence.
pub fn read_ner_sidecar(doc: &str) -> Vec<Vec<String>> {
    doc.lines().map(|l| l.split_whitespace().map(str::to_string).collect()).collect()
}

pub fn attach_ner(sentences: &mut [CompanionSentence], tags: &[Vec<String>]) -> Result<(), CompanionError> {
    if tags.len() != sentences.len() {
        return Err(CompanionError::NerSentences {
            expected: sentences.len(),
            found: tags.len(),
        });
    }
    for (i, (s, t)) in sentences.iter_mut().zip(tags).enumerate() {
        if t.len() != s.len() {
            return Err(CompanionError::NerLength {
                line: i + 1,
                expected: s.len(),
                found: t.len(),
            });
        }
        s.ner_tags = t.clone();
    }
    Ok(())
}

/// Exact-match lexicon standing in for an external NER tagger.
#[derive(Clone, Debug, Default)]
pub struct Gazetteer {
    entries: BTreeMap<Vec<String>, String>,
    longest: usize,
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, phrase: &str, tag: &str) {
        let words: Vec<String> = phrase.split_whitespace().map(str::to_string).collect();
        self.longest = self.longest.max(words.len());
        self.entries.insert(words, tag.to_string());
    }

    /// Longest-match tagging, left to right.
    pub fn tag(&self, sentence: &CompanionSentence) -> Vec<String> {
        let forms: Vec<String> = sentence.tokens.iter().map(|t| t.form.clone()).collect();
        let mut tags = vec!["O".to_string(); forms.len()];
        let mut i = 0;
        while i < forms.len() {
            let max = self.longest.min(forms.len() - i);
            let hit = (1..=max)
                .rev()
                .find_map(|len| self.entries.get(&forms[i..i + len]).map(|tag| (len, tag)));
            match hit {
                Some((len, tag)) => {
                    for t in &mut tags[i..i + len] {
                        *t = tag.clone();
                    }
                    i += len;
                }
                None => i += 1,
            }
        }
        tags
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("companion tokens for `{id}` differ from the input in {changed} of {total} characters")]
    Irreconcilable { id: String, changed: usize, total: usize },
}

/// Fraction of characters a repair may change before the pairing is
/// considered wrong rather than a tokenisation drift.
const MAX_REPAIR_FRACTION: f64 = 0.5;

/// Make companion tokens consistent with `g.input`.
///
/// Tokens whose forms occur in order in the input only get their offsets
/// remapped. Otherwise the non-whitespace characters of both sides are
/// aligned by edit distance; each input character inherits the token of the
/// companion character it aligns with (insertions inherit from the left), and
/// tokens are rebuilt from runs of equal ownership, splitting at whitespace.
/// Lemma, XPOS and NER tag come from the owning original token.
pub fn align_companion(g: &MrpGraph, c: &CompanionSentence) -> Result<CompanionSentence, AlignError> {
    let input: Vec<char> = g.input.chars().collect();
    if let Some(tokens) = direct_alignment(&input, c) {
        let mut out = c.clone();
        out.tokens = tokens;
        return Ok(out);
    }

    let comp: Vec<(char, usize)> = c
        .tokens
        .iter()
        .enumerate()
        .flat_map(|(ti, t)| t.form.chars().filter(|ch| !ch.is_whitespace()).map(move |ch| (ch, ti)))
        .collect();
    let target: Vec<(char, usize)> = input
        .iter()
        .enumerate()
        .filter(|(_, ch)| !ch.is_whitespace())
        .map(|(i, &ch)| (ch, i))
        .collect();
    let total = comp.len().max(target.len());
    let (distance, owners) = edit_alignment(&comp, &target);
    if total == 0 {
        return Ok(CompanionSentence {
            id: c.id.clone(),
            tokens: Vec::new(),
            ner_tags: Vec::new(),
        });
    }
    if distance as f64 > MAX_REPAIR_FRACTION * total as f64 || owners.iter().all(Option::is_none) {
        return Err(AlignError::Irreconcilable {
            id: g.id.clone(),
            changed: distance,
            total,
        });
    }

    // Unaligned input characters join an owned neighbour in the same
    // whitespace-delimited chunk (left first), else the nearest owner.
    // A neighbour of the same character class (alphanumeric or not) is
    // preferred over one of a different class.
    let class = |k: usize| target[k].0.is_alphanumeric();
    let mut filled = owners.clone();
    for same_class in [true, false] {
        for k in 1..filled.len() {
            let joined = target[k - 1].1 + 1 == target[k].1;
            if filled[k].is_none() && joined && (!same_class || class(k) == class(k - 1)) {
                filled[k] = filled[k - 1];
            }
        }
        for k in (0..filled.len().saturating_sub(1)).rev() {
            let joined = target[k].1 + 1 == target[k + 1].1;
            if filled[k].is_none() && joined && (!same_class || class(k) == class(k + 1)) {
                filled[k] = filled[k + 1];
            }
        }
    }
    let first = filled.iter().flatten().next().copied().unwrap_or(0);
    let mut last = first;
    let owner: Vec<usize> = filled
        .iter()
        .map(|o| {
            if let Some(o) = o {
                last = *o;
            }
            last
        })
        .collect();

    let mut tokens = Vec::new();
    let mut ner = Vec::new();
    let mut k = 0;
    while k < target.len() {
        let start = target[k].1;
        let who = owner[k];
        let mut end = start + 1;
        k += 1;
        while k < target.len() && owner[k] == who && target[k].1 == end {
            end += 1;
            k += 1;
        }
        let src = &c.tokens[who];
        tokens.push(CompanionToken {
            form: input[start..end].iter().collect(),
            lemma: src.lemma.clone(),
            xpos: src.xpos.clone(),
            start,
            end,
        });
        ner.push(c.ner_tags.get(who).cloned().unwrap_or_else(|| "O".into()));
    }
    Ok(CompanionSentence {
        id: c.id.clone(),
        tokens,
        ner_tags: ner,
    })
}

/// Offsets for tokens whose forms appear in order, separated only by
/// whitespace and covering every non-whitespace input character.
fn direct_alignment(input: &[char], c: &CompanionSentence) -> Option<Vec<CompanionToken>> {
    let mut cursor = 0;
    let mut tokens = Vec::with_capacity(c.tokens.len());
    for t in &c.tokens {
        while cursor < input.len() && input[cursor].is_whitespace() {
            cursor += 1;
        }
        let form: Vec<char> = t.form.chars().collect();
        if form.is_empty() || cursor + form.len() > input.len() || input[cursor..cursor + form.len()] != form[..] {
            return None;
        }
        let mut tok = t.clone();
        tok.start = cursor;
        tok.end = cursor + form.len();
        cursor = tok.end;
        tokens.push(tok);
    }
    if input[cursor..].iter().all(|c| c.is_whitespace()) {
        Some(tokens)
    } else {
        None
    }
}

/// Levenshtein alignment; returns the distance and, for each target
/// character, the companion token owning the character it is matched or
/// substituted with.
fn edit_alignment(comp: &[(char, usize)], target: &[(char, usize)]) -> (usize, Vec<Option<usize>>) {
    let (n, m) = (comp.len(), target.len());
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for (j, cell) in dp.iter_mut().take(w).enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        dp[i * w] = i;
        for j in 1..=m {
            let sub = dp[(i - 1) * w + j - 1] + usize::from(comp[i - 1].0 != target[j - 1].0);
            let del = dp[(i - 1) * w + j] + 1;
            let ins = dp[i * w + j - 1] + 1;
            dp[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut owners = vec![None; m];
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 && here == dp[(i - 1) * w + j - 1] + usize::from(comp[i - 1].0 != target[j - 1].0) {
            owners[j - 1] = Some(comp[i - 1].1);
            i -= 1;
            j -= 1;
        } else if j > 0 && here == dp[i * w + j - 1] + 1 {
            j -= 1;
        } else {
            i -= 1;
        }
    }
    (dp[n * w + m], owners)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Framework;

    fn sentence(forms: &[(&str, usize)]) -> CompanionSentence {
        CompanionSentence::new(
            None,
            forms
                .iter()
                .map(|(f, s)| CompanionToken::new(f, &f.to_lowercase(), "X", *s))
                .collect(),
        )
    }

    /// Independent check: every token form equals the input slice at its
    /// offsets and only whitespace lies between tokens.
    fn covers_exactly(input: &str, c: &CompanionSentence) -> bool {
        let chars: Vec<char> = input.chars().collect();
        let mut cursor = 0;
        for t in &c.tokens {
            if t.start < cursor || t.end > chars.len() {
                return false;
            }
            if !chars[cursor..t.start].iter().all(|c| c.is_whitespace()) {
                return false;
            }
            if chars[t.start..t.end].iter().collect::<String>() != t.form {
                return false;
            }
            cursor = t.end;
        }
        chars[cursor..].iter().all(|c| c.is_whitespace())
    }

    #[test]
    fn single_token_document() {
        let doc = "1\tPierre\tPierre\tNNP\tTokenRange=0:6\n";
        let s = read_companion(doc).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].tokens, vec![CompanionToken::new("Pierre", "Pierre", "NNP", 0)]);
        assert_eq!(s[0].ner_tags, vec!["O"]);
    }

    #[test]
    fn empty_document() {
        assert!(read_companion("").unwrap().is_empty());
        assert!(read_companion("\n\n").unwrap().is_empty());
    }

    #[test]
    fn two_sentences_have_independent_offsets() {
        let doc = "# sent_id = a\n1\tHi\thi\tUH\t_\n2\tthere\tthere\tRB\t_\n\n1\tYo\tyo\tUH\t_\n";
        let s = read_companion(doc).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].id.as_deref(), Some("a"));
        assert_eq!((s[0].tokens[1].start, s[0].tokens[1].end), (3, 8));
        assert_eq!((s[1].tokens[0].start, s[1].tokens[0].end), (0, 2));
    }

    #[test]
    fn space_after_no_and_conllu_columns() {
        let doc = "1\tdo\tdo\tVERB\tVBP\t_\t_\t_\t_\tSpaceAfter=No\n2\tn't\tnot\tPART\tRB\t_\t_\t_\t_\t_\n";
        let s = read_companion(doc).unwrap();
        assert_eq!(s[0].tokens[0].xpos, "VBP");
        assert_eq!((s[0].tokens[1].start, s[0].tokens[1].end), (2, 5));
        assert_eq!(s[0].text(), "don't");
    }

    #[test]
    fn column_mismatch_names_line() {
        let doc = "1\tok\tok\tX\t_\n2\tbroken\tline\n";
        match read_companion(doc).unwrap_err() {
            CompanionError::Columns { line, found } => assert_eq!((line, found), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_then_read_is_identity() {
        let doc = "# sent_id = s1\n1\tThe\tthe\tDT\tTokenRange=0:3\n2\tdog\tdog\tNN\tTokenRange=4:7\n\n";
        let s = read_companion(doc).unwrap();
        assert_eq!(write_companion(&s), doc);
    }

    #[test]
    fn ner_sidecar_lengths_checked() {
        let mut s = read_companion("1\tPierre\tPierre\tNNP\t_\n").unwrap();
        attach_ner(&mut s, &read_ner_sidecar("PER\n")).unwrap();
        assert_eq!(s[0].ner_tags, vec!["PER"]);
        assert!(attach_ner(&mut s, &read_ner_sidecar("PER O\n")).is_err());
    }

    #[test]
    fn gazetteer_prefers_longest_match() {
        let mut gz = Gazetteer::new();
        gz.insert("Pierre", "PER");
        gz.insert("Pierre Vinken", "PER");
        gz.insert("Vinken Corp", "ORG");
        let s = sentence(&[("Pierre", 0), ("Vinken", 7), ("Corp", 14), ("rose", 19)]);
        assert_eq!(gz.tag(&s), vec!["PER", "PER", "O", "O"]);
    }

    #[test]
    fn consistent_companion_unchanged() {
        let g = MrpGraph::new("x", Framework::Dm, "the dog barks");
        let c = sentence(&[("the", 0), ("dog", 4), ("barks", 8)]);
        assert_eq!(align_companion(&g, &c).unwrap(), c);
    }

    #[test]
    fn offsets_remapped_into_input() {
        // Companion offsets describe "do n't"; the MRP input reads "don't".
        let g = MrpGraph::new("x", Framework::Eds, "don't");
        let c = sentence(&[("do", 0), ("n't", 3)]);
        let out = align_companion(&g, &c).unwrap();
        assert_eq!(out.tokens.iter().map(|t| t.form.as_str()).collect::<Vec<_>>(), ["do", "n't"]);
        assert_eq!((out.tokens[1].start, out.tokens[1].end), (2, 5));
        assert!(covers_exactly(&g.input, &out));
    }

    /// Input text, companion `(form, offset)` tokens, expected forms.
    type RepairCase<'a> = (&'a str, &'a [(&'a str, usize)], &'a [&'a str]);

    #[test]
    fn mismatch_corpus_repairs_to_exact_cover() {
        let cases: &[RepairCase] = &[
            // quote normalisation
            (
                "He said ``hi''",
                &[("He", 0), ("said", 3), ("\"", 8), ("hi", 9), ("\"", 11)],
                &["He", "said", "``", "hi", "''"],
            ),
            // companion merged two words the input separates
            ("New York rose", &[("NewYork", 0), ("rose", 8)], &["New", "York", "rose"]),
            // dropped hyphen
            ("well-known", &[("wellknown", 0)], &["well-known"]),
        ];
        for (input, forms, expected) in cases {
            let g = MrpGraph::new("x", Framework::Eds, *input);
            let c = sentence(forms);
            let out = align_companion(&g, &c).unwrap();
            assert!(covers_exactly(input, &out), "{input}: {out:?}");
            let got: Vec<&str> = out.tokens.iter().map(|t| t.form.as_str()).collect();
            assert_eq!(&got, expected, "{input}");
            assert_eq!(out.ner_tags.len(), out.tokens.len());
        }
    }

    #[test]
    fn lemma_copied_from_owner() {
        let g = MrpGraph::new("x", Framework::Eds, "New York");
        let mut c = sentence(&[("NewYork", 0)]);
        c.tokens[0].lemma = "newyork".into();
        let out = align_companion(&g, &c).unwrap();
        assert!(out.tokens.iter().all(|t| t.lemma == "newyork"));
    }

    #[test]
    fn disjoint_strings_fail() {
        let g = MrpGraph::new("x", Framework::Eds, "completely different");
        let c = sentence(&[("zzz", 0), ("qqq", 4)]);
        assert!(matches!(align_companion(&g, &c), Err(AlignError::Irreconcilable { .. })));
    }
}
