//! Omni-modal fusion. Events are anchored on visual starts and extended so
//! that no overlapping audio event is truncated; a visual event that starts
//! inside an extended span is absorbed into it.
//!
//! Audio that overlaps no visual event attaches to the omni event whose end
//! it touches, or else seeds an audio-only event. Audio that starts in a gap
//! and runs into a visual event opens the omni event itself, since starting
//! at the visual start would truncate it; these are the only starts that
//! are not visual starts.

use serde::{Deserialize, Serialize};

use crate::manifest::{Modality, ModalEvent, OmniEvent, TimeInterval, VideoRecord};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FuseError {
    #[error("{modality} event {id} starts before its predecessor")]
    Unsorted { modality: Modality, id: String },
    #[error("{modality} events {a} and {b} overlap")]
    Overlap { modality: Modality, a: String, b: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub omni_events: Vec<OmniEvent>,
    pub coverage_fraction: f64,
    /// Visual events merged into an omni event opened by an earlier event.
    pub absorbed_visual_count: usize,
}

fn check_timeline(events: &[ModalEvent], modality: Modality) -> Result<(), FuseError> {
    for w in events.windows(2) {
        if w[1].interval.start() < w[0].interval.start() {
            return Err(FuseError::Unsorted { modality, id: w[1].id.clone() });
        }
        if w[0].interval.overlaps(&w[1].interval) {
            return Err(FuseError::Overlap { modality, a: w[0].id.clone(), b: w[1].id.clone() });
        }
    }
    Ok(())
}

pub fn fusion_coverage(omni_events: &[OmniEvent], duration_s: f64) -> f64 {
    if !(duration_s > 0.0) {
        return 0.0;
    }
    let covered: f64 = omni_events.iter().map(|e| e.interval.duration()).sum();
    (covered / duration_s).clamp(0.0, 1.0)
}

struct Open {
    interval: TimeInterval,
    visual: Vec<String>,
    audio: Vec<String>,
}

pub fn fuse_events(visual: &[ModalEvent], audio: &[ModalEvent], duration_s: f64) -> Result<FusionReport, FuseError> {
    check_timeline(visual, Modality::Visual)?;
    check_timeline(audio, Modality::Audio)?;

    let isolated: Vec<bool> = audio
        .iter()
        .map(|a| !visual.iter().any(|v| v.interval.overlaps(&a.interval)))
        .collect();

    // Visual first on equal starts.
    let mut order: Vec<(f64, u8, usize)> = visual
        .iter()
        .enumerate()
        .map(|(i, v)| (v.interval.start(), 0, i))
        .chain(audio.iter().enumerate().map(|(i, a)| (a.interval.start(), 1, i)))
        .collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut done: Vec<Open> = Vec::new();
    let mut cur: Option<Open> = None;
    let mut absorbed = 0usize;
    for (start, kind, i) in order {
        let (event, is_visual) = if kind == 0 { (&visual[i], true) } else { (&audio[i], false) };
        let joins = cur.as_ref().is_some_and(|c| {
            start < c.interval.end() || (!is_visual && isolated[i] && start == c.interval.end())
        });
        if joins {
            let c = cur.as_mut().expect("joins implies open");
            c.interval = c.interval.hull(&event.interval);
            if is_visual {
                if !c.visual.is_empty() {
                    absorbed += 1;
                }
                c.visual.push(event.id.clone());
            } else {
                c.audio.push(event.id.clone());
            }
            continue;
        }
        done.extend(cur.take());
        cur = Some(Open {
            interval: event.interval,
            visual: if is_visual { vec![event.id.clone()] } else { Vec::new() },
            audio: if is_visual { Vec::new() } else { vec![event.id.clone()] },
        });
    }
    done.extend(cur);

    let omni_events: Vec<OmniEvent> = done
        .into_iter()
        .enumerate()
        .map(|(k, o)| {
            let mut e = OmniEvent::new(format!("o{k}"), o.interval);
            e.visual_event_ids = o.visual;
            e.audio_event_ids = o.audio;
            e
        })
        .collect();
    Ok(FusionReport {
        coverage_fraction: fusion_coverage(&omni_events, duration_s),
        omni_events,
        absorbed_visual_count: absorbed,
    })
}

/// Replaces the record's omni events with the fusion of its modal events.
pub fn fuse_record(record: &mut VideoRecord) -> Result<FusionReport, FuseError> {
    let report = fuse_events(&record.visual_events, &record.audio_events, record.duration_s)?;
    record.omni_events = report.omni_events.clone();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(a: f64, b: f64) -> TimeInterval {
        TimeInterval::new(a, b).unwrap()
    }

    fn events(m: Modality, spans: &[(f64, f64)]) -> Vec<ModalEvent> {
        let p = if m == Modality::Visual { "v" } else { "a" };
        spans
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| ModalEvent::new(format!("{p}{i}"), m, iv(a, b)))
            .collect()
    }

    fn spans(r: &FusionReport) -> Vec<(f64, f64)> {
        r.omni_events.iter().map(|e| (e.interval.start(), e.interval.end())).collect()
    }

    #[test]
    fn passthrough_without_audio() {
        let v = events(Modality::Visual, &[(0.0, 10.0)]);
        let r = fuse_events(&v, &[], 10.0).unwrap();
        assert_eq!(spans(&r), vec![(0.0, 10.0)]);
        assert_eq!(r.omni_events[0].visual_event_ids, vec!["v0"]);
        assert!(r.omni_events[0].audio_event_ids.is_empty());
        assert_eq!(r.coverage_fraction, 1.0);
    }

    #[test]
    fn contained_audio() {
        let r = fuse_events(&events(Modality::Visual, &[(0.0, 10.0)]), &events(Modality::Audio, &[(2.0, 6.0)]), 10.0).unwrap();
        assert_eq!(spans(&r), vec![(0.0, 10.0)]);
        assert_eq!(r.omni_events[0].audio_event_ids, vec!["a0"]);
    }

    #[test]
    fn straddling_audio_absorbs_next_visual() {
        let v = events(Modality::Visual, &[(0.0, 10.0), (10.0, 20.0)]);
        let a = events(Modality::Audio, &[(8.0, 12.0)]);
        let r = fuse_events(&v, &a, 20.0).unwrap();
        assert_eq!(spans(&r), vec![(0.0, 20.0)]);
        assert_eq!(r.omni_events[0].visual_event_ids, vec!["v0", "v1"]);
        assert_eq!(r.absorbed_visual_count, 1);
    }

    #[test]
    fn chained_extension_reaches_fixpoint() {
        let v = events(Modality::Visual, &[(0.0, 5.0), (5.0, 9.0), (9.0, 20.0), (20.0, 30.0)]);
        let a = events(Modality::Audio, &[(4.0, 6.0), (8.5, 10.0), (19.0, 21.0)]);
        let r = fuse_events(&v, &a, 30.0).unwrap();
        assert_eq!(spans(&r), vec![(0.0, 30.0)]);
        assert_eq!(r.absorbed_visual_count, 3);
    }

    #[test]
    fn audio_in_gap_attaches_or_seeds() {
        let v = events(Modality::Visual, &[(0.0, 4.0), (10.0, 14.0)]);
        let a = events(Modality::Audio, &[(4.0, 6.0), (7.0, 9.0)]);
        let r = fuse_events(&v, &a, 20.0).unwrap();
        assert_eq!(spans(&r), vec![(0.0, 6.0), (7.0, 9.0), (10.0, 14.0)]);
        assert!(r.omni_events[1].visual_event_ids.is_empty());
        assert_eq!(r.omni_events[1].audio_event_ids, vec!["a1"]);
        assert!((r.coverage_fraction - 12.0 / 20.0).abs() < 1e-12);
    }

    #[test]
    fn audio_leading_into_visual_opens_event() {
        let v = events(Modality::Visual, &[(0.0, 5.0), (10.0, 20.0)]);
        let a = events(Modality::Audio, &[(8.0, 12.0)]);
        let r = fuse_events(&v, &a, 20.0).unwrap();
        assert_eq!(spans(&r), vec![(0.0, 5.0), (8.0, 20.0)]);
    }

    #[test]
    fn coverage_arithmetic() {
        let e = OmniEvent::new("o0", iv(0.0, 89.0));
        assert!((fusion_coverage(&[e], 100.0) - 0.89).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let v = events(Modality::Visual, &[(0.0, 10.0), (5.0, 12.0)]);
        assert!(matches!(fuse_events(&v, &[], 12.0), Err(FuseError::Overlap { .. })));
        let mut a = events(Modality::Audio, &[(0.0, 2.0), (3.0, 4.0)]);
        a.swap(0, 1);
        assert!(matches!(fuse_events(&[], &a, 12.0), Err(FuseError::Unsorted { .. })));
    }

    fn timeline(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0u32..4, 1u32..8), 0..max).prop_map(|steps| {
            let mut t = 0.0;
            steps
                .into_iter()
                .map(|(gap, len)| {
                    let s = t + gap as f64 * 0.5;
                    t = s + len as f64 * 0.5;
                    (s, t)
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn fusion_invariants(vs in timeline(12), as_ in timeline(12)) {
            let v = events(Modality::Visual, &vs);
            let a = events(Modality::Audio, &as_);
            let end = vs.iter().chain(&as_).map(|s| s.1).fold(1.0, f64::max);
            let r = fuse_events(&v, &a, end).unwrap();
            let mut rec = VideoRecord::new("p", end, 2.0, (640, 360));
            rec.visual_events = v.clone();
            rec.audio_events = a.clone();
            rec.omni_events = r.omni_events.clone();
            prop_assert!(rec.validate().is_ok(), "{:?}", rec.validate());

            for w in r.omni_events.windows(2) {
                prop_assert!(w[0].interval.end() <= w[1].interval.start());
            }
            let mut seen = std::collections::HashMap::new();
            for e in &r.omni_events {
                for id in &e.audio_event_ids {
                    *seen.entry(id.clone()).or_insert(0) += 1;
                }
                let vstarts: Vec<f64> = v.iter().map(|x| x.interval.start()).collect();
                let audio_led = e.audio_event_ids.iter().any(|id| {
                    a.iter().find(|x| &x.id == id).unwrap().interval.start() == e.interval.start()
                });
                prop_assert!(vstarts.contains(&e.interval.start()) || audio_led);
            }
            for x in &a {
                prop_assert_eq!(seen.get(&x.id).copied().unwrap_or(0), 1);
            }
            let vcount: usize = r.omni_events.iter().map(|e| e.visual_event_ids.len()).sum();
            prop_assert_eq!(vcount, v.len());
            prop_assert!((0.0..=1.0).contains(&r.coverage_fraction));
            if a.is_empty() {
                prop_assert_eq!(spans(&r), vs.clone());
            }
        }
    }
}
