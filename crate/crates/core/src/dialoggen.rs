//! Training dialogues from annotations: template boundary-perception
//! dialogues and model-written instruction dialogues.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::capgen::client::{call_with_retry, ClientRequest, ModelClient, RetryPolicy, Role};
use crate::capgen::prompts::{vars, Prompt};
use crate::manifest::{DatasetManifest, OmniEvent, VideoRecord};
pub use crate::metrics::parse::{render_seconds, TimeFormat};

#[derive(Debug, thiserror::Error)]
pub enum DialogueError {
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid dialogue for {video_id}: {reason}")]
    Invalid { video_id: String, reason: String },
    #[error("single-turn fraction must lie in [0, 1], got {0}")]
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogueKind {
    SingleTurnDvc,
    MultiTurn,
    Instruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub video_id: String,
    pub kind: DialogueKind,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// At least two turns, alternating, starting with the user.
    pub fn validate(&self) -> Result<(), DialogueError> {
        let bad = |reason: &str| DialogueError::Invalid {
            video_id: self.video_id.clone(),
            reason: reason.to_string(),
        };
        if self.turns.len() < 2 {
            return Err(bad("fewer than 2 turns"));
        }
        for (i, t) in self.turns.iter().enumerate() {
            let want = if i % 2 == 0 { Speaker::User } else { Speaker::Assistant };
            if t.role != want {
                return Err(bad(&format!("turn {i} should be {want:?}")));
            }
            if t.text.trim().is_empty() {
                return Err(bad(&format!("turn {i} is empty")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConversationTurn {
    from: String,
    value: String,
}

/// Line shape shared with common instruction-tuning corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConversationRecord {
    id: String,
    video: String,
    kind: DialogueKind,
    conversations: Vec<ConversationTurn>,
}

fn to_record(index: usize, d: &Dialogue) -> ConversationRecord {
    ConversationRecord {
        id: format!("{}_{index}", d.video_id),
        video: d.video_id.clone(),
        kind: d.kind,
        conversations: d
            .turns
            .iter()
            .map(|t| ConversationTurn {
                from: match t.role {
                    Speaker::User => "human".into(),
                    Speaker::Assistant => "gpt".into(),
                },
                value: t.text.clone(),
            })
            .collect(),
    }
}

pub fn write_dialogues<W: Write>(mut w: W, dialogues: &[Dialogue]) -> Result<(), DialogueError> {
    for (i, d) in dialogues.iter().enumerate() {
        let line = serde_json::to_string(&to_record(i, d)).map_err(|e| DialogueError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_dialogues<R: BufRead>(r: R) -> Result<Vec<Dialogue>, DialogueError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |message: String| DialogueError::Parse { line: i + 1, message };
        let rec: ConversationRecord = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
        let turns = rec
            .conversations
            .into_iter()
            .map(|t| {
                let role = match t.from.as_str() {
                    "human" => Speaker::User,
                    "gpt" => Speaker::Assistant,
                    other => return Err(perr(format!("unknown speaker {other:?}"))),
                };
                Ok(Turn { role, text: t.value })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let d = Dialogue {
            video_id: rec.video,
            kind: rec.kind,
            turns,
        };
        d.validate()?;
        out.push(d);
    }
    Ok(out)
}

pub const DVC_QUERY: &str = "Could you please detail the events that took place during different time segments in the video?";
pub const TVG_TEMPLATES: [&str; 2] = [
    "During which frames does <event> occur in the video?",
    "At what time in the video does <event> take place?",
];
pub const SC_TEMPLATES: [&str; 3] = [
    "Could you tell me what happened from <start> to <end> in the video?",
    "Can you describe what occurred from <start> to <end> in the video?",
    "Provide details about the events from <start> to <end> in the video.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DialogueConfig {
    pub single_turn_fraction: f64,
    pub time_format: TimeFormat,
    /// Probability that an event in a multi-turn dialogue becomes a grounding turn.
    pub tvg_probability: f64,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        Self {
            single_turn_fraction: 0.2,
            time_format: TimeFormat::Seconds,
            tvg_probability: 0.5,
        }
    }
}

fn video_rng(seed: u64, video_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(video_id.as_bytes());
    let d = h.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(d[..8].try_into().expect("32-byte digest")))
}

/// Caption turned into a noun phrase for the grounding templates.
fn event_phrase(caption: &str) -> String {
    let s = caption.trim().trim_end_matches(['.', '!', '?']).trim();
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

fn span_text(e: &OmniEvent, duration: f64, fmt: TimeFormat) -> (String, String) {
    (fmt.render(e.interval.start(), duration), fmt.render(e.interval.end(), duration))
}

fn captioned(r: &VideoRecord) -> Vec<(&OmniEvent, &str)> {
    r.omni_events
        .iter()
        .filter_map(|e| e.omni_caption.as_deref().map(str::trim).filter(|c| !c.is_empty()).map(|c| (e, c)))
        .collect()
}

fn dvc_dialogue(r: &VideoRecord, cfg: &DialogueConfig) -> Dialogue {
    let answer = captioned(r)
        .iter()
        .map(|(e, c)| {
            let (a, b) = span_text(e, r.duration_s, cfg.time_format);
            format!("From {a} to {b}, {c}")
        })
        .collect::<Vec<_>>()
        .join(" ");
    Dialogue {
        video_id: r.video_id.clone(),
        kind: DialogueKind::SingleTurnDvc,
        turns: vec![
            Turn { role: Speaker::User, text: DVC_QUERY.into() },
            Turn { role: Speaker::Assistant, text: answer },
        ],
    }
}

fn multi_turn_dialogue(r: &VideoRecord, cfg: &DialogueConfig, rng: &mut ChaCha8Rng) -> Dialogue {
    let mut turns = Vec::new();
    for (e, caption) in captioned(r) {
        let (a, b) = span_text(e, r.duration_s, cfg.time_format);
        if rng.gen_bool(cfg.tvg_probability) {
            let t = TVG_TEMPLATES[rng.gen_range(0..TVG_TEMPLATES.len())];
            turns.push(Turn { role: Speaker::User, text: t.replace("<event>", &event_phrase(caption)) });
            turns.push(Turn { role: Speaker::Assistant, text: format!("From {a} to {b}.") });
        } else {
            let t = SC_TEMPLATES[rng.gen_range(0..SC_TEMPLATES.len())];
            turns.push(Turn { role: Speaker::User, text: t.replace("<start>", &a).replace("<end>", &b) });
            turns.push(Turn { role: Speaker::Assistant, text: caption.to_string() });
        }
    }
    Dialogue {
        video_id: r.video_id.clone(),
        kind: DialogueKind::MultiTurn,
        turns,
    }
}

/// One dialogue per eligible video; exactly `round(fraction * n)` of them are
/// single-turn dense captioning, chosen by a seeded shuffle.
pub fn gen_boundary_dialogues(manifest: &DatasetManifest, seed: u64, cfg: &DialogueConfig) -> Result<Vec<Dialogue>, DialogueError> {
    if !(0.0..=1.0).contains(&cfg.single_turn_fraction) {
        return Err(DialogueError::Fraction(cfg.single_turn_fraction));
    }
    let eligible: Vec<&VideoRecord> = manifest
        .records
        .iter()
        .filter(|r| {
            let ok = r.is_retained() && !captioned(r).is_empty();
            if !ok {
                log::info!("{}: no captioned events, skipped", r.video_id);
            }
            ok
        })
        .collect();
    let n_single = (cfg.single_turn_fraction * eligible.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..eligible.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut single = vec![false; eligible.len()];
    for &i in &order[..n_single] {
        single[i] = true;
    }
    eligible
        .iter()
        .zip(single)
        .map(|(r, s)| {
            let d = if s {
                dvc_dialogue(r, cfg)
            } else {
                multi_turn_dialogue(r, cfg, &mut video_rng(seed, &r.video_id))
            };
            d.validate().map(|_| d)
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct RawTurn {
    #[serde(alias = "from")]
    role: String,
    #[serde(alias = "value", alias = "content")]
    text: String,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawDialogue {
    Turns {
        #[serde(alias = "conversations")]
        turns: Vec<RawTurn>,
    },
    Bare(Vec<RawTurn>),
    Pair {
        question: String,
        answer: String,
    },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawReply {
    Wrapped { dialogues: Vec<RawDialogue> },
    List(Vec<RawDialogue>),
}

/// Parses an instruction-generation reply into validated dialogues.
pub fn parse_instruction_reply(video_id: &str, text: &str) -> Result<Vec<Dialogue>, String> {
    let body = {
        let t = text.trim();
        let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```")).unwrap_or(t);
        t.strip_suffix("```").unwrap_or(t).trim()
    };
    let reply: RawReply = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let raw = match reply {
        RawReply::Wrapped { dialogues } | RawReply::List(dialogues) => dialogues,
    };
    if raw.is_empty() {
        return Err("no dialogues".into());
    }
    raw.into_iter()
        .map(|d| {
            let turns = match d {
                RawDialogue::Turns { turns } | RawDialogue::Bare(turns) => turns
                    .into_iter()
                    .map(|t| {
                        let role = match t.role.to_ascii_lowercase().as_str() {
                            "user" | "human" => Speaker::User,
                            "assistant" | "gpt" => Speaker::Assistant,
                            other => return Err(format!("unknown role {other:?}")),
                        };
                        Ok(Turn { role, text: t.text.trim().to_string() })
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                RawDialogue::Pair { question, answer } => vec![
                    Turn { role: Speaker::User, text: question },
                    Turn { role: Speaker::Assistant, text: answer },
                ],
            };
            let d = Dialogue {
                video_id: video_id.to_string(),
                kind: DialogueKind::Instruction,
                turns,
            };
            d.validate().map_err(|e| e.to_string())?;
            Ok(d)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InstructionReport {
    pub videos: usize,
    pub dialogues: usize,
    pub skipped: Vec<String>,
}

impl InstructionReport {
    pub fn mean_per_video(&self) -> f64 {
        let done = self.videos - self.skipped.len();
        if done == 0 { 0.0 } else { self.dialogues as f64 / done as f64 }
    }
}

fn instruction_request(r: &VideoRecord) -> ClientRequest {
    let events = captioned(r);
    let lines: Vec<String> = events
        .iter()
        .map(|(e, c)| format!("From {} to {}, {c}", render_seconds(e.interval.start()), render_seconds(e.interval.end())))
        .collect();
    let structured: Vec<serde_json::Value> = events
        .iter()
        .map(|(e, c)| {
            serde_json::json!({
                "span": format!("From {} to {}", render_seconds(e.interval.start()), render_seconds(e.interval.end())),
                "caption": c,
            })
        })
        .collect();
    ClientRequest::new(Role::IntegratorLlm, &r.video_id)
        .prompt(Prompt::InstructionDialogue.render(&vars([
            ("duration", render_seconds(r.duration_s)),
            ("events", lines.join("\n")),
        ])))
        .field("task", "instruction_dialogue")
        .field("events", structured)
}

/// Asks the model for free-form dialogues per video. An unparseable reply is
/// retried once with a repair prompt; a second failure skips the video.
pub fn gen_instruction_dialogues(
    manifest: &DatasetManifest,
    client: &dyn ModelClient,
    retry: &RetryPolicy,
) -> (Vec<Dialogue>, InstructionReport) {
    let mut out = Vec::new();
    let mut report = InstructionReport::default();
    for r in manifest.records.iter().filter(|r| r.is_retained() && !captioned(r).is_empty()) {
        report.videos += 1;
        let req = instruction_request(r);
        let first = call_with_retry(client, &req, retry).map_err(|e| e.to_string());
        let parsed = first.and_then(|resp| {
            parse_instruction_reply(&r.video_id, &resp.text).or_else(|err| {
                log::warn!("{}: instruction reply unparseable ({err}), retrying", r.video_id);
                let mut repair = req.clone();
                repair.prompt = Some(Prompt::InstructionRepair.render(&vars([
                    ("error", err),
                    ("previous", resp.text.clone()),
                ])));
                repair.fields.insert("repair".into(), serde_json::Value::Bool(true));
                let second = call_with_retry(client, &repair, retry).map_err(|e| e.to_string())?;
                parse_instruction_reply(&r.video_id, &second.text)
            })
        });
        match parsed {
            Ok(ds) => {
                report.dialogues += ds.len();
                out.extend(ds);
            }
            Err(e) => {
                log::warn!("{}: skipped, {e}", r.video_id);
                report.skipped.push(r.video_id.clone());
            }
        }
    }
    (out, report)
}
