//! Judge-assisted question answering accuracy.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::capgen::client::{call_with_retry, ClientRequest, ModelClient, RetryPolicy, Role};
use crate::capgen::prompts::{vars, Prompt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub key: String,
    #[serde(default)]
    pub video_id: String,
    pub question: String,
    pub answer: String,
    pub prediction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub accuracy: f64,
    pub judged: usize,
    pub correct: usize,
    pub mean_score: f64,
    pub excluded: Vec<String>,
}

/// Parses `{"pred": "yes"|"no", "score": n}`, or a reply starting with yes/no.
pub fn parse_judgement(text: &str) -> Option<(bool, f64)> {
    let start = text.find('{');
    let end = text.rfind('}');
    if let (Some(a), Some(b)) = (start, end) {
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text[a..=b]) {
            let pred = v.get("pred").and_then(|p| p.as_str())?.trim().to_ascii_lowercase();
            let yes = match pred.as_str() {
                "yes" => true,
                "no" => false,
                _ => return None,
            };
            let score = v.get("score").and_then(|s| s.as_f64().or_else(|| s.as_str()?.parse().ok())).unwrap_or(0.0);
            return Some((yes, score));
        }
    }
    let lower = text.trim_start().to_ascii_lowercase();
    if lower.starts_with("yes") {
        Some((true, 0.0))
    } else if lower.starts_with("no") {
        Some((false, 0.0))
    } else {
        None
    }
}

/// Fraction of items the judge marks correct. Items whose judgement cannot
/// be parsed (or whose call fails) are excluded and logged.
pub fn eval_qa_accuracy(items: &[QaItem], judge: &dyn ModelClient, retry: &RetryPolicy) -> Result<QaReport, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::Empty("predictions"));
    }
    let mut correct = 0usize;
    let mut score_sum = 0.0;
    let mut excluded = Vec::new();
    for item in items {
        let prompt = Prompt::QaJudge.render(&vars([
            ("question", item.question.clone()),
            ("answer", item.answer.clone()),
            ("prediction", item.prediction.clone()),
        ]));
        let req = ClientRequest::new(Role::JudgeLlm, &item.video_id)
            .prompt(prompt)
            .field("question", &item.question)
            .field("answer", &item.answer)
            .field("prediction", &item.prediction);
        let judged = call_with_retry(judge, &req, retry)
            .map_err(|e| e.to_string())
            .and_then(|r| parse_judgement(&r.text).ok_or_else(|| format!("unparseable judgement {:?}", r.text)));
        match judged {
            Ok((yes, score)) => {
                correct += usize::from(yes);
                score_sum += score;
            }
            Err(e) => {
                log::warn!("qa item {} excluded: {e}", item.key);
                excluded.push(item.key.clone());
            }
        }
    }
    let judged = items.len() - excluded.len();
    if judged == 0 {
        return Err(MetricsError::AllExcluded);
    }
    Ok(QaReport {
        accuracy: correct as f64 / judged as f64,
        judged,
        correct,
        mean_score: score_sum / judged as f64,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capgen::client::{FixedClient, StubClient};

    fn item(k: &str, a: &str, p: &str) -> QaItem {
        QaItem {
            key: k.into(),
            video_id: "v".into(),
            question: "what?".into(),
            answer: a.into(),
            prediction: p.into(),
        }
    }

    #[test]
    fn always_yes_is_one() {
        let judge = FixedClient::text(Role::JudgeLlm, r#"{"pred": "yes", "score": 5}"#);
        let r = eval_qa_accuracy(&[item("a", "x", "y"), item("b", "x", "z")], &judge, &RetryPolicy::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn equality_stub_gives_half() {
        let judge = StubClient::new(Role::JudgeLlm, 0);
        let r = eval_qa_accuracy(&[item("a", "A dog.", "a dog"), item("b", "cat", "dog")], &judge, &RetryPolicy::default())
            .unwrap();
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn empty_is_error_and_garbage_excluded() {
        let judge = FixedClient::text(Role::JudgeLlm, "maybe");
        assert!(matches!(eval_qa_accuracy(&[], &judge, &RetryPolicy::default()), Err(MetricsError::Empty(_))));
        assert!(matches!(
            eval_qa_accuracy(&[item("a", "x", "y")], &judge, &RetryPolicy::default()),
            Err(MetricsError::AllExcluded)
        ));
        assert_eq!(parse_judgement("No, it is wrong."), Some((false, 0.0)));
    }
}
