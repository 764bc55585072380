//! Caption corpora, entity keywords and the keyword prompt template.
//!
//! A caption such as "a white bike near the wall" becomes a fine-tuning
//! record whose prompt lists the nouns of the caption:
//!
//! ```text
//! Write an image description with keywords including bike and wall:
//! ```
//!
//! The record target is the caption itself, byte for byte.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Split;

/// Fixed prefix of every keyword prompt.
pub const PROMPT_PREFIX: &str = "Write an image description with keywords including";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: malformed input at byte {offset}: {message}", path.display())]
    Syntax {
        path: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("{}: record {index}: {message}", path.display())]
    Record {
        path: PathBuf,
        index: usize,
        message: String,
    },
    #[error("no entities")]
    NoEntities,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionFormat {
    /// COCO caption annotations: a top-level `annotations` array whose
    /// records carry `image_id` and `caption`.
    CocoJson,
    /// One `image_id<TAB>caption` pair per line.
    Tsv,
}

impl std::str::FromStr for CaptionFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coco_json" => Ok(CaptionFormat::CocoJson),
            "tsv" => Ok(CaptionFormat::Tsv),
            other => Err(format!("unknown caption format `{other}` (expected coco_json or tsv)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub image_id: String,
    pub text: String,
    pub split: Split,
}

impl Caption {
    /// Returns `None` when either field is blank.
    pub fn new(image_id: impl Into<String>, text: impl Into<String>, split: Split) -> Option<Self> {
        let image_id = image_id.into();
        let text = text.into();
        if image_id.trim().is_empty() || text.trim().is_empty() {
            return None;
        }
        Some(Self { image_id, text, split })
    }
}

/// Result of [`load_captions`]: the kept captions plus the number of records
/// dropped for having blank text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedCaptions {
    pub captions: Vec<Caption>,
    pub skipped: usize,
}

/// Guesses the split from a file name (`captions_train2014.json` is train).
/// Falls back to train.
pub fn split_from_file_name(path: &Path) -> Split {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    if name.contains("test") {
        Split::Test
    } else if name.contains("val") {
        Split::Val
    } else {
        Split::Train
    }
}

/// Loads captions in file order. `split` overrides the file-name convention.
pub fn load_captions(
    path: &Path,
    format: CaptionFormat,
    split: Option<Split>,
) -> Result<LoadedCaptions, CorpusError> {
    let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    let split = split.unwrap_or_else(|| split_from_file_name(path));
    if raw.trim().is_empty() {
        return Ok(LoadedCaptions::default());
    }
    let pairs = match format {
        CaptionFormat::CocoJson => parse_coco(path, &raw)?,
        CaptionFormat::Tsv => parse_tsv(path, &raw)?,
    };
    let mut out = LoadedCaptions::default();
    for (image_id, text) in pairs {
        match Caption::new(image_id, text, split) {
            Some(c) => out.captions.push(c),
            None => out.skipped += 1,
        }
    }
    if out.skipped > 0 {
        log::warn!("{}: skipped {} blank caption(s)", path.display(), out.skipped);
    }
    Ok(out)
}

fn parse_coco(path: &Path, raw: &str) -> Result<Vec<(String, String)>, CorpusError> {
    let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| CorpusError::Syntax {
        path: path.to_owned(),
        offset: byte_offset(raw, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let record_err = |index: usize, message: &str| CorpusError::Record {
        path: path.to_owned(),
        index,
        message: message.to_owned(),
    };
    let annotations = value
        .get("annotations")
        .and_then(|a| a.as_array())
        .ok_or_else(|| CorpusError::Syntax {
            path: path.to_owned(),
            offset: 0,
            message: "missing top-level `annotations` array".into(),
        })?;
    annotations
        .iter()
        .enumerate()
        .map(|(i, ann)| {
            let image_id = match ann.get("image_id") {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(serde_json::Value::Number(n)) => n.to_string(),
                _ => return Err(record_err(i, "missing or invalid `image_id`")),
            };
            let caption = ann
                .get("caption")
                .and_then(|c| c.as_str())
                .ok_or_else(|| record_err(i, "missing or invalid `caption`"))?;
            Ok((image_id, caption.to_owned()))
        })
        .collect()
}

fn parse_tsv(path: &Path, raw: &str) -> Result<Vec<(String, String)>, CorpusError> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (index, line) in raw.split_inclusive('\n').enumerate() {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.trim().is_empty() {
            let (id, text) = body.split_once('\t').ok_or_else(|| CorpusError::Syntax {
                path: path.to_owned(),
                offset,
                message: format!("line {} has no tab separator", index + 1),
            })?;
            out.push((id.trim().to_owned(), text.to_owned()));
        }
        offset += line.len();
    }
    Ok(out)
}

fn byte_offset(raw: &str, line: usize, column: usize) -> usize {
    let line_start: usize = raw
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    line_start + column.saturating_sub(1)
}

/// Lowercased whitespace tokens with leading and trailing punctuation removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PosTag {
    Noun,
    Verb,
    Adjective,
    Adverb,
    Determiner,
    Preposition,
    Pronoun,
    Conjunction,
    Number,
    Other,
}

/// Part-of-speech tagger over lowercased tokens; one tag per token.
pub trait EntityTagger: Send + Sync {
    fn tag(&self, tokens: &[String]) -> Vec<PosTag>;
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "no",
    "another", "either", "neither", "both", "all", "several", "many", "few", "much", "his",
    "her", "its", "their", "our", "my", "your",
];

const PRONOUNS: &[&str] = &[
    "i", "me", "mine", "you", "yours", "he", "him", "she", "hers", "it", "we", "us", "ours",
    "they", "them", "theirs", "who", "whom", "whose", "which", "what", "someone", "something",
    "anyone", "anything", "everyone", "everything", "nobody", "nothing", "itself", "himself",
    "herself", "themselves", "one",
];

const PREPOSITIONS: &[&str] = &[
    "about", "above", "across", "after", "against", "along", "alongside", "among", "around",
    "at", "atop", "before", "behind", "below", "beneath", "beside", "besides", "between",
    "beyond", "by", "down", "during", "for", "from", "in", "inside", "into", "like", "near",
    "next", "of", "off", "on", "onto", "out", "outside", "over", "past", "through", "to",
    "toward", "towards", "under", "underneath", "until", "up", "upon", "with", "within",
    "without", "via", "amid",
];

const CONJUNCTIONS: &[&str] = &[
    "and", "or", "but", "nor", "so", "yet", "while", "as", "because", "although", "if", "than",
    "then", "whilst",
];

const VERBS: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "am", "has", "have", "had", "do", "does", "did",
    "can", "could", "will", "would", "shall", "should", "may", "might", "must", "get", "gets",
    "got", "sit", "sits", "sat", "stand", "stands", "stood", "hold", "holds", "held", "ride",
    "rides", "rode", "eat", "eats", "ate", "look", "looks", "walk", "walks", "play", "plays",
    "fly", "flies", "flew", "lay", "lays", "lie", "lies", "jump", "jumps", "run", "runs", "ran",
    "carry", "carries", "wear", "wears", "wait", "waits", "chase", "chases", "take", "takes",
    "took", "make", "makes", "made", "go", "goes", "went", "come", "comes", "came", "show",
    "shows", "watch", "watches", "hang", "hangs", "hung", "rest", "rests", "swim", "swims",
    "throw", "throws", "threw", "catch", "catches", "caught", "hit", "hits", "grab", "grabs",
    "pose", "poses", "cross", "crosses", "drive", "drives", "drove", "pull", "pulls", "push",
    "pushes", "cut", "cuts", "contain", "contains", "feature", "features", "surround",
    "surrounds", "seem", "seems", "appear", "appears", "graze", "grazes", "lean", "leans",
    "kick", "kicks", "serve", "serves", "prepare", "prepares", "stare", "stares", "talk",
    "talks", "smile", "smiles",
];

const ADVERBS: &[&str] = &[
    "very", "there", "here", "away", "also", "just", "only", "too", "not", "almost", "together",
    "really", "still", "even", "well", "again", "nearby", "outdoors", "indoors", "quite",
];

const ADJECTIVES: &[&str] = &[
    "white", "black", "red", "blue", "green", "yellow", "orange", "purple", "pink", "brown",
    "gray", "grey", "silver", "gold", "golden", "big", "small", "large", "little", "tiny",
    "huge", "tall", "short", "long", "old", "young", "new", "empty", "full", "open", "closed",
    "wooden", "metal", "plastic", "busy", "clean", "dirty", "dark", "bright", "colorful",
    "different", "various", "other", "sunny", "cloudy", "snowy", "grassy", "sandy", "rocky",
    "cute", "pretty", "beautiful", "fresh", "hot", "cold", "warm", "wet", "dry", "high", "low",
    "giant", "several", "double", "single", "modern", "vintage", "antique", "fancy",
    "delicious", "healthy", "baked", "fried", "striped", "blurry", "lush", "calm", "same",
    "adult", "tan", "multiple", "half", "whole", "electric", "stuffed",
    "professional", "urban", "rural", "wild", "domestic", "unusual", "realistic",
];

const NUMBERS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "dozen", "hundred", "first", "second", "third",
];

/// Nouns that end in suffixes the heuristics would otherwise reject.
const SUFFIX_EXCEPTIONS: &[&str] = &[
    "building", "ceiling", "clothing", "ring", "king", "wing", "thing", "string", "spring",
    "swing", "evening", "morning", "pudding", "railing", "awning", "icing", "sibling",
    "topping", "stuffing", "painting", "frosting", "wedding", "ping", "sling", "bed", "shed",
    "sled", "seed", "weed", "steed", "speed", "family", "belly", "jelly", "lily", "rally",
    "ally", "trolley", "alley", "valley", "jersey", "pony", "bus", "glass", "grass", "dress",
    "class", "canvas", "lens", "cactus", "gas", "compass", "walrus", "octopus",
];

/// Dictionary-free fallback tagger: closed word classes plus suffix rules.
///
/// Anything not in a closed class, not an adjective, and not ruled out by a
/// suffix is tagged as a noun.
#[derive(Debug, Default, Clone, Copy)]
pub struct RuleTagger;

impl RuleTagger {
    fn lexical(token: &str) -> PosTag {
        let is = |list: &[&str]| list.contains(&token);
        if token.chars().all(|c| c.is_ascii_digit()) || is(NUMBERS) {
            PosTag::Number
        } else if is(DETERMINERS) {
            PosTag::Determiner
        } else if is(PRONOUNS) {
            PosTag::Pronoun
        } else if is(PREPOSITIONS) {
            PosTag::Preposition
        } else if is(CONJUNCTIONS) {
            PosTag::Conjunction
        } else if is(VERBS) {
            PosTag::Verb
        } else if is(ADVERBS) {
            PosTag::Adverb
        } else if is(ADJECTIVES) {
            PosTag::Adjective
        } else if is(SUFFIX_EXCEPTIONS) {
            PosTag::Noun
        } else if token.len() > 4 && token.ends_with("ing") {
            PosTag::Verb
        } else if token.len() > 4 && token.ends_with("ly") {
            PosTag::Adverb
        } else if token.len() > 3 && token.ends_with("ed") {
            PosTag::Verb
        } else if ["ous", "ful", "able", "ible", "less", "ish", "ive"]
            .iter()
            .any(|s| token.len() > s.len() + 2 && token.ends_with(s))
        {
            PosTag::Adjective
        } else if token.chars().any(|c| !c.is_alphabetic() && c != '-' && c != '\'') {
            PosTag::Other
        } else {
            PosTag::Noun
        }
    }
}

impl EntityTagger for RuleTagger {
    fn tag(&self, tokens: &[String]) -> Vec<PosTag> {
        let mut tags: Vec<PosTag> = tokens.iter().map(|t| Self::lexical(t)).collect();
        // "a dog chases a ball": an -s word between a noun and a determiner is a verb.
        for i in 1..tokens.len().saturating_sub(1) {
            let t = &tokens[i];
            if tags[i] == PosTag::Noun
                && t.ends_with('s')
                && !t.ends_with("ss")
                && tags[i - 1] == PosTag::Noun
                && tags[i + 1] == PosTag::Determiner
            {
                tags[i] = PosTag::Verb;
            }
        }
        tags
    }
}

/// Ordered, deduplicated lowercase keywords.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntitySet(Vec<String>);

impl EntitySet {
    /// Lowercases, trims and drops blanks and repeats, keeping first occurrences.
    pub fn new<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for item in items {
            let e = item.as_ref().trim().to_lowercase();
            if !e.is_empty() && seen.insert(e.clone()) {
                out.push(e);
            }
        }
        Self(out)
    }

    pub fn entities(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn extract_entities(caption: &Caption, tagger: &dyn EntityTagger) -> EntitySet {
    let tokens = tokenize(&caption.text);
    let tags = tagger.tag(&tokens);
    EntitySet::new(
        tokens
            .iter()
            .zip(tags)
            .filter(|(_, tag)| *tag == PosTag::Noun)
            .map(|(t, _)| t),
    )
}

/// Renders the keyword prompt: `e1`, `e1 and e2`, or `e1, e2, ..., and en`.
pub fn render_prompt(entities: &EntitySet) -> Result<String, CorpusError> {
    let list = match entities.entities() {
        [] => return Err(CorpusError::NoEntities),
        [one] => one.clone(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    };
    Ok(format!("{PROMPT_PREFIX} {list}:"))
}

/// Recovers the keyword list text from a rendered prompt, e.g. `dog and frisbee`.
pub fn prompt_keywords(prompt: &str) -> Option<&str> {
    prompt
        .strip_prefix(PROMPT_PREFIX)?
        .strip_prefix(' ')?
        .strip_suffix(':')
}

/// One fine-tuning example: the keyword prompt followed by the caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptedCaption {
    pub prompt: String,
    pub target: String,
}

/// Builds fine-tuning records from train captions, in input order. Captions
/// without any noun are left out.
pub fn build_finetune_records(captions: &[Caption], tagger: &dyn EntityTagger) -> Vec<PromptedCaption> {
    captions
        .iter()
        .filter(|c| c.split == Split::Train)
        .filter_map(|c| {
            let entities = extract_entities(c, tagger);
            render_prompt(&entities).ok().map(|prompt| PromptedCaption {
                prompt,
                target: c.text.clone(),
            })
        })
        .collect()
}

/// Writes records as newline-delimited JSON `{prompt, target}` objects.
pub fn write_records_jsonl<W: Write>(mut out: W, records: &[PromptedCaption]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cap(text: &str) -> Caption {
        Caption::new("1", text, Split::Train).unwrap()
    }

    fn ents(text: &str) -> Vec<String> {
        extract_entities(&cap(text), &RuleTagger).entities().to_vec()
    }

    #[test]
    fn fig1_caption_nouns() {
        assert_eq!(ents("a white bike near the wall"), ["bike", "wall"]);
    }

    #[test]
    fn no_nouns_gives_empty_set() {
        assert!(ents("running quickly").is_empty());
    }

    #[test]
    fn dedup_keeps_first_occurrence() {
        assert_eq!(ents("a dog chases a dog with a frisbee"), ["dog", "frisbee"]);
    }

    #[test]
    fn render_three_uses_oxford_comma() {
        let e = EntitySet::new(["dog", "frisbee", "park"]);
        assert_eq!(
            render_prompt(&e).unwrap(),
            "Write an image description with keywords including dog, frisbee, and park:"
        );
    }

    #[test]
    fn render_one_and_two() {
        assert_eq!(
            render_prompt(&EntitySet::new(["bike"])).unwrap(),
            "Write an image description with keywords including bike:"
        );
        assert_eq!(
            render_prompt(&EntitySet::new(["dog", "frisbee"])).unwrap(),
            "Write an image description with keywords including dog and frisbee:"
        );
    }

    #[test]
    fn render_empty_is_error() {
        let err = render_prompt(&EntitySet::default()).unwrap_err();
        assert_eq!(err.to_string(), "no entities");
    }

    #[test]
    fn records_skip_nounless_captions() {
        let mut caps: Vec<Caption> = (0..9).map(|i| cap(&format!("a cat on mat number {i}"))).collect();
        caps.insert(4, cap("running quickly"));
        let recs = build_finetune_records(&caps, &RuleTagger);
        assert_eq!(recs.len(), 9);
        assert!(build_finetune_records(&[], &RuleTagger).is_empty());
    }

    #[test]
    fn record_for_fig1_caption() {
        let recs = build_finetune_records(&[cap("a white bike near the wall")], &RuleTagger);
        assert_eq!(
            recs,
            [PromptedCaption {
                prompt: "Write an image description with keywords including bike and wall:".into(),
                target: "a white bike near the wall".into(),
            }]
        );
    }

    #[test]
    fn only_train_split_feeds_records() {
        let val = Caption::new("2", "a dog on a couch", Split::Val).unwrap();
        assert!(build_finetune_records(&[val], &RuleTagger).is_empty());
    }

    #[test]
    fn keywords_round_trip() {
        let p = render_prompt(&EntitySet::new(["pickup truck"])).unwrap();
        assert_eq!(prompt_keywords(&p), Some("pickup truck"));
        assert_eq!(prompt_keywords("something else"), None);
    }

    #[test]
    fn blank_caption_rejected() {
        assert!(Caption::new("1", "   ", Split::Train).is_none());
        assert!(Caption::new("", "a cat", Split::Train).is_none());
    }

    #[test]
    fn split_from_names() {
        assert_eq!(split_from_file_name(Path::new("captions_train2014.json")), Split::Train);
        assert_eq!(split_from_file_name(Path::new("captions_val2014.json")), Split::Val);
        assert_eq!(split_from_file_name(Path::new("x_test.tsv")), Split::Test);
        assert_eq!(split_from_file_name(Path::new("caps.tsv")), Split::Train);
    }

    #[test]
    fn byte_offset_of_line_column() {
        let raw = "ab\ncde\nf";
        assert_eq!(byte_offset(raw, 1, 1), 0);
        assert_eq!(byte_offset(raw, 2, 2), 4);
        assert_eq!(byte_offset(raw, 3, 1), 7);
    }

    proptest! {
        #[test]
        fn entities_are_caption_tokens(words in prop::collection::vec("[a-zA-Z]{1,8}", 0..12)) {
            let text = format!("x {}", words.join(" "));
            let c = cap(&text);
            let tokens = tokenize(&c.text);
            let set = extract_entities(&c, &RuleTagger);
            let mut seen = HashSet::new();
            for e in set.entities() {
                prop_assert!(tokens.contains(e));
                prop_assert!(seen.insert(e.clone()));
            }
        }

        #[test]
        fn render_is_deterministic_and_injective(
            a in prop::collection::vec("[a-z]{1,6}", 1..6),
            b in prop::collection::vec("[a-z]{1,6}", 1..6),
        ) {
            let ea = EntitySet::new(&a);
            let eb = EntitySet::new(&b);
            let pa = render_prompt(&ea).unwrap();
            prop_assert_eq!(&pa, &render_prompt(&ea).unwrap());
            prop_assert!(pa.starts_with(PROMPT_PREFIX) && pa.ends_with(':'));
            if ea != eb {
                prop_assert_ne!(pa, render_prompt(&eb).unwrap());
            }
        }

        #[test]
        fn records_preserve_targets(texts in prop::collection::vec("[a-z ]{1,30}", 0..10)) {
            let caps: Vec<Caption> = texts.iter().filter_map(|t| Caption::new("i", t.clone(), Split::Train)).collect();
            let recs = build_finetune_records(&caps, &RuleTagger);
            let mut it = caps.iter();
            for r in &recs {
                prop_assert!(it.any(|c| c.text == r.target));
            }
        }
    }
}
