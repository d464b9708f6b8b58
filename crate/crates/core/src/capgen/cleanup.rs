//! Audio-caption cleanup: drops repeated sentences and quoted speech, keeps
//! the general description, and appends the ASR transcript.

use std::sync::LazyLock;

use regex::Regex;

static SUFFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"\s*Speech content: "[^"]*"\.?\s*$"#).expect("valid regex"));
static SPEECH_VERB_QUOTE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"(?i)\b(says|said|saying|speaks|speaking|talks|talking|asks|asking|exclaims|announces|explains|shouts|shouting|yells|yelling|whispers|whispering|sings|singing)\b\s*[:,]?\s*(?:the words\s*)?["“][^"”]*["”]"#,
    )
    .expect("valid regex")
});
static QUOTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"["“][^"”]*["”]"#).expect("valid regex"));
// A terminator ends a sentence only before whitespace or end of text, so
// decimals like `4.000` stay intact.
static SENTENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s).+?(?:[.!?]+(?:\s+|$)|$)").expect("valid regex"));
static SPACE_BEFORE_PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+([,;:.!?])").expect("valid regex"));

pub const SPEECH_MARKER: &str = "Speech content:";

fn gerund(verb: &str) -> &'static str {
    match verb.to_ascii_lowercase().as_str() {
        "sings" | "singing" => "singing",
        "shouts" | "shouting" | "yells" | "yelling" => "shouting",
        "whispers" | "whispering" => "whispering",
        _ => "speaking",
    }
}

fn sentence_key(s: &str) -> String {
    s.trim_end_matches(['.', '!', '?'])
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Cleans a raw audio caption against the ASR transcript.
///
/// Speech attributed in quotes (`a man says "..."`) becomes a general
/// description (`a man speaking`); any other quoted text is dropped;
/// consecutive duplicate sentences collapse to one; when `asr_text` is
/// non-empty it is appended as `Speech content: "..."`. The function is
/// idempotent for a fixed `asr_text`.
pub fn cleanup_audio_caption(raw_caption: &str, asr_text: &str) -> String {
    let body = SUFFIX.replace(raw_caption, "");
    let body = SPEECH_VERB_QUOTE.replace_all(&body, |c: &regex::Captures<'_>| gerund(&c[1]).to_string());
    let body = QUOTED.replace_all(&body, "");
    let body: String = body.chars().filter(|&c| !matches!(c, '"' | '“' | '”')).collect();

    let mut sentences: Vec<String> = Vec::new();
    for m in SENTENCE.find_iter(&body) {
        let s = m.as_str().split_whitespace().collect::<Vec<_>>().join(" ");
        let s = SPACE_BEFORE_PUNCT.replace_all(&s, "$1").trim().to_string();
        if !s.chars().any(char::is_alphanumeric) {
            continue;
        }
        let s = if s.ends_with(['.', '!', '?']) { s } else { format!("{s}.") };
        if sentences.last().is_some_and(|prev| sentence_key(prev) == sentence_key(&s)) {
            continue;
        }
        sentences.push(s);
    }
    let mut out = sentences.join(" ");

    let asr: String = asr_text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .replace('"', "'");
    if !asr.is_empty() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&format!("{SPEECH_MARKER} \"{asr}\"."));
    }
    out
}
