//! Evaluation metrics for grounding, captioning, dense captioning, QA and
//! boundary coherence.

pub mod caption;
pub mod dvc;
pub mod mrsd;
pub mod parse;
pub mod qa;
pub mod text;
pub mod tvg;

use serde::{Deserialize, Serialize};

pub use caption::{bleu4, caption_scores, eval_sc, meteor, rouge_l, CaptionScores, CiderD, ScItem};
pub use dvc::{eval_dvc, soda_c, DvcEvent, DvcScores, SodaScorer};
pub use mrsd::{mrsd, mrsd_report, BoundaryStage, MrsdReport, SecondEmbeddings};
pub use parse::{parse_predictions, parse_spans, render_seconds, Prediction, RawPrediction, Task, TimeFormat};
pub use qa::{eval_qa_accuracy, QaItem, QaReport};
pub use tvg::{eval_tvg, iou, TvgScores};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("duplicate prediction key {0:?}")]
    DuplicateKey(String),
    #[error("no {0} to evaluate")]
    Empty(&'static str),
    #[error("item {0:?} has no references")]
    NoReferences(String),
    #[error("video {0:?} present in only one of predictions and references")]
    VideoMismatch(String),
    #[error("need at least 2 embeddings, got {0}")]
    TooFewVectors(usize),
    #[error("every item was excluded by the judge")]
    AllExcluded,
    #[error("embedding source failed: {0}")]
    Embedding(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tvg: Option<TvgScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dvc: Option<DvcScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sc: Option<CaptionScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qa_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<String>,
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let Some(t) = &self.tvg {
            writeln!(f, "TVG   R@0.3 {:.4}  R@0.5 {:.4}  R@0.7 {:.4}  mIoU {:.4}  (n={})", t.r_at_0_3, t.r_at_0_5, t.r_at_0_7, t.miou, t.count)?;
        }
        if let Some(d) = &self.dvc {
            writeln!(f, "DVC   SODA_c {:.4}  CIDEr {:.4}  METEOR {:.4}", d.soda_c, d.cider, d.meteor)?;
        }
        if let Some(s) = &self.sc {
            writeln!(f, "SC    BLEU-4 {:.4}  ROUGE-L {:.4}  METEOR {:.4}  CIDEr {:.4}", s.bleu4, s.rouge_l, s.meteor, s.cider)?;
        }
        if let Some(q) = self.qa_accuracy {
            writeln!(f, "QA    accuracy {q:.4}")?;
        }
        if !self.excluded.is_empty() {
            writeln!(f, "excluded {} item(s)", self.excluded.len())?;
        }
        Ok(())
    }
}
