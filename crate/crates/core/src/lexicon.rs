//! Emotion and sentiment lexicons.
//!
//! Three on-disk formats are understood: the NRC word-level emotion list,
//! the VADER valence list and SentiWordNet synset scores. SentiWordNet term
//! lists double as a synonym table used when a token misses every lexicon.
//!
//! Per-token signals are flattened into a 12-slot [`AffectVector`]:
//! eight NRC emotion flags, the VADER valence scaled to `[-1, 1]`, and the
//! SentiWordNet positive/negative/objective triple.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::{Add, AddAssign};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Dimension of an [`AffectVector`].
pub const AFFECT_DIM: usize = 12;

/// Divisor mapping VADER mean ratings from `[-4, 4]` onto `[-1, 1]`.
pub const VADER_SCALE: f64 = 4.0;

const SCORE_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

impl LexiconError {
    fn parse(path: &Path, line: usize, reason: impl Into<String>) -> Self {
        LexiconError::Parse {
            path: path.to_path_buf(),
            line,
            reason: reason.into(),
        }
    }
}

/// NRC annotation categories. The first eight are emotions, the last two
/// polarity rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NrcCategory {
    Anger,
    Fear,
    Anticipation,
    Trust,
    Surprise,
    Sadness,
    Joy,
    Disgust,
    Positive,
    Negative,
}

impl NrcCategory {
    pub const ALL: [NrcCategory; 10] = [
        NrcCategory::Anger,
        NrcCategory::Fear,
        NrcCategory::Anticipation,
        NrcCategory::Trust,
        NrcCategory::Surprise,
        NrcCategory::Sadness,
        NrcCategory::Joy,
        NrcCategory::Disgust,
        NrcCategory::Positive,
        NrcCategory::Negative,
    ];

    pub const EMOTIONS: [NrcCategory; 8] = [
        NrcCategory::Anger,
        NrcCategory::Fear,
        NrcCategory::Anticipation,
        NrcCategory::Trust,
        NrcCategory::Surprise,
        NrcCategory::Sadness,
        NrcCategory::Joy,
        NrcCategory::Disgust,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NrcCategory::Anger => "anger",
            NrcCategory::Fear => "fear",
            NrcCategory::Anticipation => "anticipation",
            NrcCategory::Trust => "trust",
            NrcCategory::Surprise => "surprise",
            NrcCategory::Sadness => "sadness",
            NrcCategory::Joy => "joy",
            NrcCategory::Disgust => "disgust",
            NrcCategory::Positive => "positive",
            NrcCategory::Negative => "negative",
        }
    }

    fn bit(self) -> u16 {
        1 << (self as u16)
    }

    pub fn is_emotion(self) -> bool {
        !matches!(self, NrcCategory::Positive | NrcCategory::Negative)
    }
}

impl std::str::FromStr for NrcCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NrcCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown NRC category {s:?}"))
    }
}

/// Ten-bit set of NRC categories, indexed by [`NrcCategory`] discriminant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct NrcMask(u16);

impl NrcMask {
    pub fn contains(self, category: NrcCategory) -> bool {
        self.0 & category.bit() != 0
    }

    pub fn insert(&mut self, category: NrcCategory) {
        self.0 |= category.bit();
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    /// Number of the eight emotion categories set (polarity bits excluded).
    pub fn emotion_count(self) -> usize {
        NrcCategory::EMOTIONS
            .iter()
            .filter(|c| self.contains(**c))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NrcEntry {
    pub word: String,
    pub category: NrcCategory,
    pub flag: bool,
}

#[derive(Debug, Clone, Default)]
pub struct NrcLexicon {
    masks: HashMap<String, NrcMask>,
}

impl NrcLexicon {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        Self::parse(&read(path)?, path)
    }

    /// Parses `word<TAB>category<TAB>flag` lines. `origin` only labels errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, LexiconError> {
        let mut lexicon = NrcLexicon::default();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let entry = parse_nrc_line(line).map_err(|r| LexiconError::parse(origin, lineno, r))?;
            lexicon.insert(entry);
        }
        Ok(lexicon)
    }

    pub fn insert(&mut self, entry: NrcEntry) {
        if entry.flag {
            self.masks
                .entry(entry.word)
                .or_default()
                .insert(entry.category);
        }
    }

    pub fn lookup(&self, word: &str) -> Option<NrcMask> {
        self.masks.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

fn parse_nrc_line(line: &str) -> Result<NrcEntry, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 3 {
        return Err(format!("expected 3 tab-separated columns, found {}", cols.len()));
    }
    let word = cols[0].trim().to_lowercase();
    if word.is_empty() {
        return Err("empty word".into());
    }
    let category = cols[1].trim().parse::<NrcCategory>()?;
    let flag = match cols[2].trim() {
        "0" => false,
        "1" => true,
        other => return Err(format!("flag must be 0 or 1, found {other:?}")),
    };
    Ok(NrcEntry {
        word,
        category,
        flag,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaderEntry {
    pub token: String,
    pub mean_valence: f64,
    pub stddev: f64,
}

impl VaderEntry {
    pub fn normalized_valence(&self) -> f64 {
        self.mean_valence / VADER_SCALE
    }
}

#[derive(Debug, Clone, Default)]
pub struct VaderLexicon {
    entries: HashMap<String, VaderEntry>,
}

impl VaderLexicon {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        Self::parse(&read(path)?, path)
    }

    /// Parses `token<TAB>mean<TAB>stddev<TAB>ratings` lines. The ratings
    /// column is optional and not interpreted.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, LexiconError> {
        let mut lexicon = VaderLexicon::default();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let entry =
                parse_vader_line(line).map_err(|r| LexiconError::parse(origin, lineno, r))?;
            lexicon.entries.insert(entry.token.clone(), entry);
        }
        Ok(lexicon)
    }

    pub fn get(&self, token: &str) -> Option<&VaderEntry> {
        self.entries.get(token)
    }

    /// Mean valence divided by [`VADER_SCALE`].
    pub fn valence(&self, token: &str) -> Option<f64> {
        self.get(token).map(VaderEntry::normalized_valence)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn parse_vader_line(line: &str) -> Result<VaderEntry, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() < 3 {
        return Err(format!(
            "expected token, mean and stddev columns, found {} column(s)",
            cols.len()
        ));
    }
    let token = cols[0].trim().to_lowercase();
    if token.is_empty() {
        return Err("empty token".into());
    }
    let mean_valence: f64 = cols[1]
        .trim()
        .parse()
        .map_err(|_| format!("non-numeric mean valence {:?}", cols[1]))?;
    if !mean_valence.is_finite() || !(-VADER_SCALE..=VADER_SCALE).contains(&mean_valence) {
        return Err(format!("mean valence {mean_valence} outside [-4, 4]"));
    }
    let stddev: f64 = cols[2]
        .trim()
        .parse()
        .map_err(|_| format!("non-numeric stddev {:?}", cols[2]))?;
    if !stddev.is_finite() || stddev < 0.0 {
        return Err(format!("stddev {stddev} must be finite and non-negative"));
    }
    Ok(VaderEntry {
        token,
        mean_valence,
        stddev,
    })
}

/// WordNet part-of-speech tag as used in SentiWordNet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PosTag {
    Adjective,
    Noun,
    Verb,
    Adverb,
}

impl PosTag {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "a" => Some(PosTag::Adjective),
            "n" => Some(PosTag::Noun),
            "v" => Some(PosTag::Verb),
            "r" => Some(PosTag::Adverb),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentiWordNetEntry {
    pub pos_tag: PosTag,
    pub synset_id: String,
    pub pos_score: f64,
    pub neg_score: f64,
    /// Raw `lemma#rank` strings.
    pub terms: Vec<String>,
}

impl SentiWordNetEntry {
    pub fn objectivity(&self) -> f64 {
        1.0 - self.pos_score - self.neg_score
    }

    /// Lemmas with the `#rank` suffix removed, lowercased.
    pub fn lemmas(&self) -> impl Iterator<Item = String> + '_ {
        self.terms.iter().map(|t| {
            t.rsplit_once('#')
                .map_or(t.as_str(), |(lemma, _)| lemma)
                .to_lowercase()
        })
    }
}

/// Aggregated per-lemma SentiWordNet scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwnScores {
    pub pos: f64,
    pub neg: f64,
    pub obj: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SentiWordNet {
    scores: HashMap<String, SwnScores>,
}

impl SentiWordNet {
    pub fn get(&self, lemma: &str) -> Option<SwnScores> {
        self.scores.get(lemma).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Lemma to co-synset lemmas. Symmetric and irreflexive by construction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynonymTable {
    synonyms: HashMap<String, BTreeSet<String>>,
}

impl SynonymTable {
    /// Synonyms in alphabetical order.
    pub fn synonyms(&self, lemma: &str) -> impl Iterator<Item = &str> {
        self.synonyms
            .get(lemma)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        self.synonyms.get(a).is_some_and(|s| s.contains(b))
    }

    pub fn lemmas(&self) -> impl Iterator<Item = &str> {
        self.synonyms.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.synonyms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.synonyms.is_empty()
    }

    fn link_group(&mut self, lemmas: &[String]) {
        for a in lemmas {
            for b in lemmas {
                if a != b {
                    self.synonyms.entry(a.clone()).or_default().insert(b.clone());
                }
            }
        }
    }
}

pub fn load_sentiwordnet(
    path: impl AsRef<Path>,
) -> Result<(SentiWordNet, SynonymTable), LexiconError> {
    let path = path.as_ref();
    parse_sentiwordnet(&read(path)?, path)
}

/// Parses the six-column SentiWordNet format. Per-lemma scores are the
/// unweighted mean over every synset listing the lemma.
pub fn parse_sentiwordnet(
    text: &str,
    origin: &Path,
) -> Result<(SentiWordNet, SynonymTable), LexiconError> {
    // BTreeMap keeps summation order independent of hash seeds.
    let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    let mut synonyms = SynonymTable::default();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let entry = parse_swn_line(line).map_err(|r| LexiconError::parse(origin, lineno, r))?;
        let mut lemmas: Vec<String> = entry.lemmas().filter(|l| !l.is_empty()).collect();
        lemmas.sort();
        lemmas.dedup();
        for lemma in &lemmas {
            let slot = sums.entry(lemma.clone()).or_insert((0.0, 0.0, 0));
            slot.0 += entry.pos_score;
            slot.1 += entry.neg_score;
            slot.2 += 1;
        }
        synonyms.link_group(&lemmas);
    }
    let scores = sums
        .into_iter()
        .map(|(lemma, (pos, neg, n))| {
            let n = n as f64;
            let (pos, neg) = (pos / n, neg / n);
            let obj = (1.0 - pos - neg).clamp(0.0, 1.0);
            (lemma, SwnScores { pos, neg, obj })
        })
        .collect();
    Ok((SentiWordNet { scores }, synonyms))
}

fn parse_swn_line(line: &str) -> Result<SentiWordNetEntry, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 6 {
        return Err(format!("expected 6 tab-separated columns, found {}", cols.len()));
    }
    let pos_tag = PosTag::parse(cols[0].trim())
        .ok_or_else(|| format!("unknown part of speech {:?}", cols[0]))?;
    let synset_id = cols[1].trim().to_string();
    if synset_id.len() != 8 || !synset_id.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("synset id {synset_id:?} is not 8 digits"));
    }
    let score = |raw: &str, name: &str| -> Result<f64, String> {
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| format!("non-numeric {name} {raw:?}"))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("{name} {v} outside [0, 1]"));
        }
        Ok(v)
    };
    let pos_score = score(cols[2], "PosScore")?;
    let neg_score = score(cols[3], "NegScore")?;
    if pos_score + neg_score > 1.0 + SCORE_EPS {
        return Err(format!(
            "PosScore + NegScore = {} exceeds 1",
            pos_score + neg_score
        ));
    }
    let terms = cols[4].split_whitespace().map(str::to_string).collect();
    Ok(SentiWordNetEntry {
        pos_tag,
        synset_id,
        pos_score,
        neg_score,
        terms,
    })
}

fn read(path: &Path) -> Result<String, LexiconError> {
    std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-token emotion/sentiment signature.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AffectVector {
    pub anger: f64,
    pub fear: f64,
    pub anticipation: f64,
    pub trust: f64,
    pub surprise: f64,
    pub sadness: f64,
    pub joy: f64,
    pub disgust: f64,
    pub valence: f64,
    pub swn_pos: f64,
    pub swn_neg: f64,
    pub swn_obj: f64,
}

impl AffectVector {
    pub const ZERO: AffectVector = AffectVector {
        anger: 0.0,
        fear: 0.0,
        anticipation: 0.0,
        trust: 0.0,
        surprise: 0.0,
        sadness: 0.0,
        joy: 0.0,
        disgust: 0.0,
        valence: 0.0,
        swn_pos: 0.0,
        swn_neg: 0.0,
        swn_obj: 0.0,
    };

    pub const NAMES: [&'static str; AFFECT_DIM] = [
        "anger",
        "fear",
        "anticipation",
        "trust",
        "surprise",
        "sadness",
        "joy",
        "disgust",
        "valence",
        "swn_pos",
        "swn_neg",
        "swn_obj",
    ];

    pub fn to_array(&self) -> [f64; AFFECT_DIM] {
        [
            self.anger,
            self.fear,
            self.anticipation,
            self.trust,
            self.surprise,
            self.sadness,
            self.joy,
            self.disgust,
            self.valence,
            self.swn_pos,
            self.swn_neg,
            self.swn_obj,
        ]
    }

    pub fn from_array(a: [f64; AFFECT_DIM]) -> Self {
        AffectVector {
            anger: a[0],
            fear: a[1],
            anticipation: a[2],
            trust: a[3],
            surprise: a[4],
            sadness: a[5],
            joy: a[6],
            disgust: a[7],
            valence: a[8],
            swn_pos: a[9],
            swn_neg: a[10],
            swn_obj: a[11],
        }
    }

    pub fn nrc(&self) -> [f64; 8] {
        let a = self.to_array();
        [a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]]
    }

    pub fn is_zero(&self) -> bool {
        self.to_array().iter().all(|v| *v == 0.0)
    }

    fn set_nrc(&mut self, mask: NrcMask) {
        let mut a = self.to_array();
        for (slot, category) in a.iter_mut().zip(NrcCategory::EMOTIONS) {
            *slot = if mask.contains(category) { 1.0 } else { 0.0 };
        }
        *self = AffectVector::from_array(a);
    }
}

impl Add for AffectVector {
    type Output = AffectVector;

    fn add(mut self, rhs: AffectVector) -> AffectVector {
        self += rhs;
        self
    }
}

impl AddAssign for AffectVector {
    fn add_assign(&mut self, rhs: AffectVector) {
        let mut a = self.to_array();
        for (x, y) in a.iter_mut().zip(rhs.to_array()) {
            *x += y;
        }
        *self = AffectVector::from_array(a);
    }
}

impl std::iter::Sum for AffectVector {
    fn sum<I: Iterator<Item = AffectVector>>(iter: I) -> Self {
        iter.fold(AffectVector::ZERO, Add::add)
    }
}

impl fmt::Display for AffectVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = Self::NAMES
            .iter()
            .zip(self.to_array())
            .filter(|(_, v)| *v != 0.0)
            .map(|(n, v)| format!("{n}={v:.3}"))
            .collect();
        if parts.is_empty() {
            f.write_str("(none)")
        } else {
            f.write_str(&parts.join(" "))
        }
    }
}

/// Which lexicon sources contribute to affect lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LexiconToggles {
    pub nrc: bool,
    pub vader: bool,
    pub wordnet_syn: bool,
    pub sentiwordnet: bool,
}

impl Default for LexiconToggles {
    fn default() -> Self {
        LexiconToggles::all()
    }
}

impl LexiconToggles {
    pub const fn all() -> Self {
        LexiconToggles {
            nrc: true,
            vader: true,
            wordnet_syn: true,
            sentiwordnet: true,
        }
    }

    pub const fn none() -> Self {
        LexiconToggles {
            nrc: false,
            vader: false,
            wordnet_syn: false,
            sentiwordnet: false,
        }
    }

    pub fn any(&self) -> bool {
        self.nrc || self.vader || self.wordnet_syn || self.sentiwordnet
    }
}

/// Where a token's affect came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenAffect {
    pub vector: AffectVector,
    pub nrc: Option<NrcMask>,
    pub vader: Option<f64>,
    pub swn: Option<SwnScores>,
    /// Set when the hit was found through a synonym.
    pub via_synonym: Option<String>,
}

impl TokenAffect {
    fn miss() -> Self {
        TokenAffect {
            vector: AffectVector::ZERO,
            nrc: None,
            vader: None,
            swn: None,
            via_synonym: None,
        }
    }

    pub fn is_hit(&self) -> bool {
        self.nrc.is_some() || self.vader.is_some() || self.swn.is_some()
    }
}

/// The loaded lexicon set. Tables are shared; toggling a source off yields a
/// cheap view without it.
#[derive(Debug, Clone, Default)]
pub struct Lexicons {
    nrc: Option<Arc<NrcLexicon>>,
    vader: Option<Arc<VaderLexicon>>,
    swn: Option<Arc<SentiWordNet>>,
    synonyms: Option<Arc<SynonymTable>>,
}

pub const NRC_FILE: &str = "nrc.txt";
pub const VADER_FILE: &str = "vader.txt";
pub const SWN_FILE: &str = "sentiwordnet.txt";

impl Lexicons {
    pub fn new(
        nrc: NrcLexicon,
        vader: VaderLexicon,
        swn: SentiWordNet,
        synonyms: SynonymTable,
    ) -> Self {
        Lexicons {
            nrc: Some(Arc::new(nrc)),
            vader: Some(Arc::new(vader)),
            swn: Some(Arc::new(swn)),
            synonyms: Some(Arc::new(synonyms)),
        }
    }

    /// An empty set; every lookup misses.
    pub fn empty() -> Self {
        Lexicons::default()
    }

    /// Loads `nrc.txt`, `vader.txt` and `sentiwordnet.txt` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let dir = dir.as_ref();
        let nrc = NrcLexicon::load(dir.join(NRC_FILE))?;
        let vader = VaderLexicon::load(dir.join(VADER_FILE))?;
        let (swn, synonyms) = load_sentiwordnet(dir.join(SWN_FILE))?;
        Ok(Lexicons::new(nrc, vader, swn, synonyms))
    }

    pub fn with_toggles(&self, toggles: &LexiconToggles) -> Lexicons {
        Lexicons {
            nrc: self.nrc.clone().filter(|_| toggles.nrc),
            vader: self.vader.clone().filter(|_| toggles.vader),
            swn: self.swn.clone().filter(|_| toggles.sentiwordnet),
            synonyms: self.synonyms.clone().filter(|_| toggles.wordnet_syn),
        }
    }

    pub fn toggles(&self) -> LexiconToggles {
        LexiconToggles {
            nrc: self.nrc.is_some(),
            vader: self.vader.is_some(),
            wordnet_syn: self.synonyms.is_some(),
            sentiwordnet: self.swn.is_some(),
        }
    }

    pub fn nrc(&self) -> Option<&NrcLexicon> {
        self.nrc.as_deref()
    }

    pub fn vader(&self) -> Option<&VaderLexicon> {
        self.vader.as_deref()
    }

    pub fn sentiwordnet(&self) -> Option<&SentiWordNet> {
        self.swn.as_deref()
    }

    pub fn synonyms(&self) -> Option<&SynonymTable> {
        self.synonyms.as_deref()
    }

    fn direct(&self, token: &str) -> TokenAffect {
        let mut hit = TokenAffect::miss();
        if let Some(mask) = self.nrc.as_ref().and_then(|l| l.lookup(token)) {
            hit.vector.set_nrc(mask);
            hit.nrc = Some(mask);
        }
        if let Some(valence) = self.vader.as_ref().and_then(|l| l.valence(token)) {
            hit.vector.valence = valence;
            hit.vader = Some(valence);
        }
        if let Some(s) = self.swn.as_ref().and_then(|l| l.get(token)) {
            hit.vector.swn_pos = s.pos;
            hit.vector.swn_neg = s.neg;
            hit.vector.swn_obj = s.obj;
            hit.swn = Some(s);
        }
        hit
    }

    /// Full lookup with provenance. Falls back to the alphabetically first
    /// synonym that has a direct hit when the token itself misses.
    pub fn lookup(&self, token: &str) -> TokenAffect {
        let direct = self.direct(token);
        if direct.is_hit() {
            return direct;
        }
        let Some(synonyms) = self.synonyms.as_ref() else {
            return direct;
        };
        for synonym in synonyms.synonyms(token) {
            let mut hit = self.direct(synonym);
            if hit.is_hit() {
                hit.via_synonym = Some(synonym.to_string());
                return hit;
            }
        }
        direct
    }

    pub fn affect_vector(&self, token: &str) -> AffectVector {
        self.lookup(token).vector
    }

    /// Component-wise sum of per-token affect vectors.
    pub fn segment_affect<S: AsRef<str>>(&self, tokens: &[S]) -> AffectVector {
        tokens
            .iter()
            .map(|t| self.affect_vector(t.as_ref()))
            .sum()
    }
}
