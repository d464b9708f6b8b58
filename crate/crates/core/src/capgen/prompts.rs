//! Versioned prompt catalog. Templates use `{{name}}` placeholders.

use std::collections::BTreeMap;

pub const CATALOG_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Prompt {
    VideoCaption,
    KeyframeCaption,
    AudioCaption,
    Integrate,
    IntegrateRepair,
    AvcClassify,
    InstructionDialogue,
    InstructionRepair,
    QaJudge,
}

impl Prompt {
    pub const ALL: [Prompt; 9] = [
        Prompt::VideoCaption,
        Prompt::KeyframeCaption,
        Prompt::AudioCaption,
        Prompt::Integrate,
        Prompt::IntegrateRepair,
        Prompt::AvcClassify,
        Prompt::InstructionDialogue,
        Prompt::InstructionRepair,
        Prompt::QaJudge,
    ];

    pub fn template(&self) -> &'static str {
        match self {
            Prompt::VideoCaption => include_str!("../../prompts/v1/video_caption.txt"),
            Prompt::KeyframeCaption => include_str!("../../prompts/v1/keyframe_caption.txt"),
            Prompt::AudioCaption => include_str!("../../prompts/v1/audio_caption.txt"),
            Prompt::Integrate => include_str!("../../prompts/v1/integrate.txt"),
            Prompt::IntegrateRepair => include_str!("../../prompts/v1/integrate_repair.txt"),
            Prompt::AvcClassify => include_str!("../../prompts/v1/avc_classify.txt"),
            Prompt::InstructionDialogue => include_str!("../../prompts/v1/instruction_dialogue.txt"),
            Prompt::InstructionRepair => include_str!("../../prompts/v1/instruction_repair.txt"),
            Prompt::QaJudge => include_str!("../../prompts/v1/qa_judge.txt"),
        }
    }

    /// Fills placeholders; unknown placeholders are left in place.
    pub fn render(&self, vars: &BTreeMap<&str, String>) -> String {
        let mut out = self.template().to_string();
        for (k, v) in vars {
            out = out.replace(&format!("{{{{{k}}}}}"), v);
        }
        out
    }
}

/// Builds a variable map from `(name, value)` pairs.
pub fn vars<const N: usize>(pairs: [(&'static str, String); N]) -> BTreeMap<&'static str, String> {
    pairs.into_iter().collect()
}
