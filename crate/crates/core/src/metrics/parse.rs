//! Timestamp rendering and extraction of predictions from free-form model output.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::manifest::TimeInterval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeFormat {
    /// Decimal seconds with up to three decimals.
    #[default]
    Seconds,
    /// Two-digit index `00..=99`; index `k` maps to `k / 99 * duration`.
    FrameIndex,
}

pub const FRAME_INDEX_MAX: f64 = 99.0;

/// Renders seconds with at most three decimals and at least one.
pub fn render_seconds(t: f64) -> String {
    let s = format!("{:.3}", crate::manifest::quantize_ms(t));
    let s = s.trim_end_matches('0');
    if s.ends_with('.') { format!("{s}0") } else { s.to_string() }
}

impl TimeFormat {
    pub fn render(&self, t: f64, duration_s: f64) -> String {
        match self {
            TimeFormat::Seconds => render_seconds(t),
            TimeFormat::FrameIndex => {
                let k = if duration_s > 0.0 { (t / duration_s * FRAME_INDEX_MAX).round() } else { 0.0 };
                format!("{:02}", k.clamp(0.0, FRAME_INDEX_MAX) as u32)
            }
        }
    }

    pub fn to_seconds(&self, value: f64, duration_s: Option<f64>) -> Option<f64> {
        match self {
            TimeFormat::Seconds => Some(value),
            TimeFormat::FrameIndex => {
                let d = duration_s?;
                (0.0..=FRAME_INDEX_MAX).contains(&value).then(|| value / FRAME_INDEX_MAX * d)
            }
        }
    }
}

const NUM: &str = r"(\d+(?:\.\d+)?)";
const UNIT: &str = r"(?:\s*(?:s|secs?|seconds?)\b)?";

/// Ordered by preference: the first pattern with any hit is used.
static SPAN_PATTERNS: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    let sec = r"(?:seconds?\s+|second\s+)?";
    [
        format!(r"(?i)\bfrom\s+{sec}{NUM}{UNIT}\s*(?:to|-|until|till)\s*{sec}{NUM}{UNIT}"),
        format!(r"(?i)\bbetween\s+{NUM}{UNIT}\s+and\s+{NUM}{UNIT}"),
        format!(r"(?i)[\[(]?\b{NUM}{UNIT}\s*(?:-|–|to)\s*{NUM}{UNIT}[\])]?"),
    ]
    .iter()
    .map(|p| Regex::new(p).expect("valid span pattern"))
    .collect()
});

static LEADING_JUNK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[\s,:;.\-–]+").expect("valid regex"));

/// One extracted span with the text following it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedSpan {
    pub interval: TimeInterval,
    pub text: String,
}

/// Extracts `From x to y` style spans. Text between one span and the next is
/// attached to the preceding span. Spans with start > end or out-of-range
/// frame indices are dropped.
pub fn parse_spans(raw: &str, format: TimeFormat, duration_s: Option<f64>) -> Vec<ParsedSpan> {
    for re in SPAN_PATTERNS.iter() {
        let hits: Vec<(usize, usize, f64, f64)> = re
            .captures_iter(raw)
            .filter_map(|c| {
                let m = c.get(0)?;
                let a: f64 = c[1].parse().ok()?;
                let b: f64 = c[2].parse().ok()?;
                Some((m.start(), m.end(), a, b))
            })
            .collect();
        if hits.is_empty() {
            continue;
        }
        return hits
            .iter()
            .enumerate()
            .filter_map(|(i, &(_, end, a, b))| {
                let next = hits.get(i + 1).map_or(raw.len(), |h| h.0);
                let text = LEADING_JUNK.replace(&raw[end..next], "").trim().to_string();
                let a = format.to_seconds(a, duration_s)?;
                let b = format.to_seconds(b, duration_s)?;
                let interval = TimeInterval::new(a, b).ok()?;
                Some(ParsedSpan { interval, text })
            })
            .collect();
    }
    Vec::new()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Tvg,
    Dvc,
    Sc,
}

/// One raw model output as stored in a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPrediction {
    pub key: String,
    pub video_id: String,
    pub output: String,
    #[serde(default)]
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Prediction {
    /// Spans per key for `tvg` and `dvc`.
    pub items: BTreeMap<String, Vec<ParsedSpan>>,
    /// Trimmed answer text per key for `sc`.
    pub answers: BTreeMap<String, String>,
    pub video_of: BTreeMap<String, String>,
    /// Keys excluded from scoring because nothing could be parsed.
    pub excluded: Vec<String>,
}

pub fn parse_predictions(raw: &[RawPrediction], task: Task, format: TimeFormat) -> Prediction {
    let mut out = Prediction::default();
    for p in raw {
        let parsed = match task {
            Task::Tvg | Task::Dvc => {
                let mut s = parse_spans(&p.output, format, p.duration_s);
                if task == Task::Tvg {
                    s.truncate(1);
                }
                (!s.is_empty()).then(|| {
                    out.items.insert(p.key.clone(), s);
                })
            }
            Task::Sc => {
                let text = p.output.trim();
                (!text.is_empty()).then(|| {
                    out.answers.insert(p.key.clone(), text.to_string());
                })
            }
        };
        if parsed.is_some() {
            out.video_of.insert(p.key.clone(), p.video_id.clone());
        } else {
            log::info!("prediction {} excluded: no parseable content", p.key);
            out.excluded.push(p.key.clone());
        }
    }
    out
}
