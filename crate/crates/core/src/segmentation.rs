//! Transcript cleaning and hierarchical splitting:
//! session → utterances → sentences → phrases → tokens.

use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTranscript {
    pub session_id: String,
    pub body: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Therapist,
    Client,
    Unknown,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Therapist => "therapist",
            Speaker::Client => "client",
            Speaker::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub ordinal: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Word,
    Phrase,
    Sentence,
    Session,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Word => "word",
            Level::Phrase => "phrase",
            Level::Sentence => "sentence",
            Level::Session => "session",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word" => Ok(Level::Word),
            "phrase" => Ok(Level::Phrase),
            "sentence" => Ok(Level::Sentence),
            "session" => Ok(Level::Session),
            _ => Err(format!("unknown level {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub level: Level,
    pub text: String,
    pub parent_id: Option<String>,
    pub speaker: Speaker,
}

/// Tunable rules. Defaults match the synthetic corpus conventions.
#[derive(Debug, Clone)]
pub struct SegmenterConfig {
    /// Non-verbal cues removed when wrapped in `()` or `[]`.
    pub cues: Vec<String>,
    /// Line-leading labels (matched case-insensitively, followed by `:`).
    pub speaker_labels: Vec<(String, Speaker)>,
    pub abbreviations: Vec<String>,
    pub clause_markers: Vec<String>,
    /// Sentences with at least this many tokens are split before clause markers.
    pub clause_split_min_tokens: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        SegmenterConfig {
            cues: owned(&[
                "laughs",
                "laughs nervously",
                "laughing",
                "laughter",
                "sighs",
                "sigh",
                "pause",
                "long pause",
                "crying",
                "cries",
                "inaudible",
                "crosstalk",
                "coughs",
                "silence",
            ]),
            speaker_labels: vec![
                ("THERAPIST".to_string(), Speaker::Therapist),
                ("CLIENT".to_string(), Speaker::Client),
            ],
            abbreviations: owned(&["dr.", "mr.", "mrs.", "ms.", "e.g.", "i.e.", "etc."]),
            clause_markers: owned(&[
                "about", "because", "but", "and", "so", "when", "while", "although",
            ]),
            clause_split_min_tokens: 6,
        }
    }
}

/// Compiled segmenter. Construction compiles the cleaning regexes once.
#[derive(Debug, Clone)]
pub struct Segmenter {
    config: SegmenterConfig,
    timestamps: Regex,
    cues: Option<Regex>,
    headers: Regex,
    spaces: Regex,
}

impl Default for Segmenter {
    fn default() -> Self {
        Segmenter::new(SegmenterConfig::default())
    }
}

impl Segmenter {
    pub fn new(config: SegmenterConfig) -> Self {
        let cues = if config.cues.is_empty() {
            None
        } else {
            let alternation = config
                .cues
                .iter()
                .map(|c| regex::escape(c.trim()).replace("\\ ", " ").replace(' ', r"\s+"))
                .collect::<Vec<_>>()
                .join("|");
            Some(
                Regex::new(&format!(r"(?i)[\(\[]\s*(?:{alternation})\s*[\)\]]"))
                    .expect("cue regex"),
            )
        };
        Segmenter {
            config,
            timestamps: Regex::new(r"\[\d{1,2}:\d{2}:\d{2}\]|\(\d{1,2}:\d{2}\)").unwrap(),
            cues,
            headers: Regex::new(r"(?m)^[ \t]*(?:Session|Date|Client ID):.*$").unwrap(),
            spaces: Regex::new(r"[^\S\n]+").unwrap(),
        }
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    fn clean_pass(&self, text: &str) -> String {
        let text = self.timestamps.replace_all(text, "");
        let text = match &self.cues {
            Some(re) => re.replace_all(&text, "").into_owned(),
            None => text.into_owned(),
        };
        let text = self.headers.replace_all(&text, "");
        let text = self.spaces.replace_all(&text, " ");
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Removes timestamps, bracketed cues and header lines, then collapses
    /// horizontal whitespace. Line breaks survive (one per non-empty line) so
    /// speaker labels stay line-anchored. Applied to a fixpoint, so the result
    /// is idempotent.
    pub fn strip_metadata(&self, body: &str) -> String {
        let mut current = self.clean_pass(body);
        loop {
            let next = self.clean_pass(&current);
            if next == current {
                return current;
            }
            current = next;
        }
    }

    fn match_label<'a>(&self, line: &'a str) -> Option<(Speaker, &'a str)> {
        for (label, speaker) in &self.config.speaker_labels {
            let Some(head) = line.get(..label.len()) else {
                continue;
            };
            if head.eq_ignore_ascii_case(label) && line[label.len()..].starts_with(':') {
                return Some((*speaker, line[label.len() + 1..].trim()));
            }
        }
        None
    }

    pub fn split_utterances(&self, cleaned: &str) -> Vec<Utterance> {
        let mut turns: Vec<(Speaker, String)> = Vec::new();
        for line in cleaned.lines().map(str::trim).filter(|l| !l.is_empty()) {
            match self.match_label(line) {
                Some((speaker, rest)) => turns.push((speaker, rest.to_string())),
                None => match turns.last_mut() {
                    Some((_, text)) => {
                        if !text.is_empty() {
                            text.push(' ');
                        }
                        text.push_str(line);
                    }
                    None => turns.push((Speaker::Unknown, line.to_string())),
                },
            }
        }
        turns
            .into_iter()
            .filter(|(_, text)| !text.is_empty())
            .enumerate()
            .map(|(ordinal, (speaker, text))| Utterance {
                speaker,
                text,
                ordinal,
            })
            .collect()
    }

    fn is_abbreviation(&self, word: &str) -> bool {
        let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
        self.config
            .abbreviations
            .iter()
            .any(|a| a.eq_ignore_ascii_case(word))
    }

    /// Sentence substrings of `text`, trimmed, in order.
    pub fn sentence_spans<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        let mut start = 0;
        let mut chars = text.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            if !matches!(c, '.' | '!' | '?') {
                continue;
            }
            let end = i + c.len_utf8();
            let boundary = match chars.peek() {
                None => true,
                Some((_, next)) => next.is_whitespace(),
            };
            if !boundary {
                continue;
            }
            let word_start = text[..end]
                .rfind(char::is_whitespace)
                .map_or(0, |p| p + 1)
                .max(start);
            if c == '.' && self.is_abbreviation(&text[word_start..end]) {
                continue;
            }
            let sentence = text[start..end].trim();
            if !sentence.is_empty() {
                out.push(sentence);
            }
            start = end;
        }
        let tail = text[start..].trim();
        if !tail.is_empty() {
            out.push(tail);
        }
        out
    }

    /// Phrase substrings of a sentence. Commas and semicolons always split;
    /// long sentences additionally split before clause markers.
    pub fn phrase_spans<'a>(&self, sentence: &'a str) -> Vec<&'a str> {
        let long = tokenize(sentence).len() >= self.config.clause_split_min_tokens;
        let mut out = Vec::new();
        for piece in sentence.split([',', ';']) {
            let piece = piece.trim();
            if piece.is_empty() {
                continue;
            }
            if !long {
                out.push(piece);
                continue;
            }
            let mut start = 0;
            for (offset, word) in word_offsets(piece) {
                if offset > start && self.is_clause_marker(word) {
                    let phrase = piece[start..offset].trim();
                    if !phrase.is_empty() {
                        out.push(phrase);
                    }
                    start = offset;
                }
            }
            let phrase = piece[start..].trim();
            if !phrase.is_empty() {
                out.push(phrase);
            }
        }
        out
    }

    fn is_clause_marker(&self, word: &str) -> bool {
        let word = word.trim_matches(|c: char| !c.is_alphanumeric());
        self.config
            .clause_markers
            .iter()
            .any(|m| m.eq_ignore_ascii_case(word))
    }

    pub fn split_sentences(&self, session_id: &str, utterance: &Utterance) -> Vec<Segment> {
        self.sentence_spans(&utterance.text)
            .into_iter()
            .enumerate()
            .map(|(i, text)| Segment {
                id: sentence_id(session_id, utterance.ordinal, i),
                level: Level::Sentence,
                text: text.to_string(),
                parent_id: Some(session_segment_id(session_id)),
                speaker: utterance.speaker,
            })
            .collect()
    }

    pub fn split_phrases(&self, sentence: &Segment) -> Vec<Segment> {
        self.phrase_spans(&sentence.text)
            .into_iter()
            .enumerate()
            .map(|(j, text)| Segment {
                id: format!("{}.p{j}", sentence.id.replacen("/sentence/", "/phrase/", 1)),
                level: Level::Phrase,
                text: text.to_string(),
                parent_id: Some(sentence.id.clone()),
                speaker: sentence.speaker,
            })
            .collect()
    }

    /// Full hierarchy for one transcript.
    pub fn segment(&self, raw: &RawTranscript) -> SessionTree {
        let cleaned = self.strip_metadata(&raw.body);
        let utterances = self.split_utterances(&cleaned);
        let session_text = utterances
            .iter()
            .map(|u| u.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let mut sentences = Vec::new();
        for utterance in &utterances {
            for segment in self.split_sentences(&raw.session_id, utterance) {
                let phrases = self.split_phrases(&segment);
                let tokens = tokenize(&segment.text);
                sentences.push(SentenceNode {
                    segment,
                    phrases,
                    tokens,
                });
            }
        }
        SessionTree {
            session: Segment {
                id: session_segment_id(&raw.session_id),
                level: Level::Session,
                text: session_text,
                parent_id: None,
                speaker: Speaker::Unknown,
            },
            utterances,
            sentences,
        }
    }
}

pub fn session_segment_id(session_id: &str) -> String {
    format!("{session_id}/session")
}

fn sentence_id(session_id: &str, utterance: usize, sentence: usize) -> String {
    format!("{session_id}/sentence/u{utterance}.s{sentence}")
}

fn word_offsets(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split_whitespace()
        .map(move |w| (w.as_ptr() as usize - text.as_ptr() as usize, w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceNode {
    pub segment: Segment,
    pub phrases: Vec<Segment>,
    pub tokens: Vec<String>,
}

impl SentenceNode {
    /// Word-level segments, parented to their phrase.
    pub fn word_segments(&self) -> Vec<Segment> {
        self.phrases
            .iter()
            .flat_map(|phrase| {
                tokenize(&phrase.text)
                    .into_iter()
                    .enumerate()
                    .map(move |(k, word)| Segment {
                        id: format!("{}.w{k}", phrase.id.replacen("/phrase/", "/word/", 1)),
                        level: Level::Word,
                        text: word,
                        parent_id: Some(phrase.id.clone()),
                        speaker: phrase.speaker,
                    })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionTree {
    pub session: Segment,
    pub utterances: Vec<Utterance>,
    pub sentences: Vec<SentenceNode>,
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Lowercased alphanumeric runs. Apostrophes between two alphanumerics stay
/// inside the token.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if is_apostrophe(c)
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            current.push('\'');
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}
