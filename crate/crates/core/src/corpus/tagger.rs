use super::TaggedToken;

/// Tokenizer plus part-of-speech tagger.
pub trait Tagger: Send + Sync {
    fn tag(&self, text: &str) -> Vec<TaggedToken>;
}

/// Lowercases and splits on whitespace, detaching punctuation into tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for ch in chunk.chars() {
            if ch.is_alphanumeric() || ch == '\'' || ch == '-' {
                word.extend(ch.to_lowercase());
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

const DETERMINERS: &[&str] = &["the", "this", "a", "an", "my", "its", "that", "these", "every", "your"];
const PRONOUNS: &[&str] = &["i", "it", "you", "we", "they", "he", "she", "me"];
const PREPOSITIONS: &[&str] = &["of", "for", "about", "with", "in", "on", "at", "from", "by"];
const WH: &[&str] = &["how", "what", "which", "why", "when", "where", "who"];
const CONJUNCTIONS: &[&str] = &["and", "but", "or", "so"];
const ADVERBS: &[&str] = &["really", "very", "honestly", "quite", "too", "not", "also", "yes", "no"];
const VERBS: &[&str] = &[
    "is", "was", "are", "be", "do", "does", "did", "think", "found", "seems", "bought", "answered", "arrived",
    "came", "recommended", "looks", "ordered", "follow", "works", "last", "lasts", "has", "have", "buy",
];
const ADJECTIVES: &[&str] = &[
    "good", "bad", "quick", "damaged", "free", "nice", "easy", "simple", "little", "long", "short", "bright",
    "dim", "sharp", "blurry", "cheap", "expensive", "loud", "quiet", "light", "heavy", "strong", "weak",
    "fast", "slow", "great", "fine",
];

/// Lexicon and suffix rules, adequate for the synthetic corpus and for
/// lowercase English text at large.
#[derive(Clone, Debug, Default)]
pub struct RuleTagger;

impl RuleTagger {
    fn lexical(word: &str) -> &'static str {
        let is = |set: &[&str]| set.contains(&word);
        if word.chars().all(|c| !c.is_alphanumeric()) {
            "PU"
        } else if word.chars().all(|c| c.is_ascii_digit()) {
            "CD"
        } else if is(DETERMINERS) {
            "DT"
        } else if is(PRONOUNS) {
            "PRP"
        } else if is(PREPOSITIONS) {
            "IN"
        } else if is(WH) {
            "WH"
        } else if is(CONJUNCTIONS) {
            "CC"
        } else if is(ADVERBS) {
            "RB"
        } else if is(VERBS) {
            "VB"
        } else if is(ADJECTIVES) {
            "JJ"
        } else if word == "to" {
            "TO"
        } else if word.ends_with("ly") {
            "RB"
        } else if word.ends_with("ing") {
            "VBG"
        } else if word.ends_with("ed") {
            "VBD"
        } else {
            "NN"
        }
    }
}

impl Tagger for RuleTagger {
    fn tag(&self, text: &str) -> Vec<TaggedToken> {
        let words = tokenize(text);
        let mut out: Vec<TaggedToken> = Vec::with_capacity(words.len());
        for w in words {
            let mut pos = Self::lexical(&w);
            // A verb right after a determiner is read as a noun ("the last").
            if pos == "VB" && out.last().is_some_and(|p| p.pos == "DT") {
                pos = "NN";
            }
            out.push(TaggedToken::new(w, pos));
        }
        out
    }
}
