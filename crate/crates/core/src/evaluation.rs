//! Onset-only transcription scoring.
//!
//! Reference and estimated onsets are matched per class with a maximum
//! bipartite matching in which two onsets may pair when they lie within the
//! tolerance of each other. Estimated notes with velocity 0 are discarded
//! before matching.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::events::{self, DrumClass5, DrumClass7, EventsError, NoteEvent};

pub const DEFAULT_TOLERANCE_SECONDS: f64 = 0.050;

/// General MIDI cowbell; part of the 8-class vocabulary but never predicted.
pub const COWBELL_NOTE: u8 = 56;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{side} contains label {label} outside the {classes}-class vocabulary")]
    UnknownClassLabel {
        side: &'static str,
        label: String,
        classes: u8,
    },
    #[error(transparent)]
    Events(#[from] EventsError),
}

/// Class of an annotated or estimated event, at whatever granularity the
/// source provides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalLabel {
    Class7(DrumClass7),
    /// Coarse label from a 5-class source (only HiHat/Cymbals are coarser
    /// than their 7-class counterparts).
    Class5(DrumClass5),
    Cowbell,
}

impl EvalLabel {
    pub fn name(self) -> &'static str {
        match self {
            EvalLabel::Class7(c) => c.label(),
            EvalLabel::Class5(c) => c.label(),
            EvalLabel::Cowbell => "CB",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        if label == "CB" {
            return Some(EvalLabel::Cowbell);
        }
        DrumClass7::from_label(label)
            .map(EvalLabel::Class7)
            .or_else(|| DrumClass5::from_label(label).map(EvalLabel::Class5))
    }

    pub fn from_midi_note(note: u8) -> Option<Self> {
        if note == COWBELL_NOTE {
            return Some(EvalLabel::Cowbell);
        }
        DrumClass7::from_midi_note(note).map(EvalLabel::Class7)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalEvent {
    pub time: f64,
    pub label: EvalLabel,
    pub velocity: u8,
}

impl From<NoteEvent> for EvalEvent {
    fn from(n: NoteEvent) -> Self {
        EvalEvent {
            time: n.time,
            label: EvalLabel::Class7(n.class7),
            velocity: n.velocity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vocabulary {
    Five,
    Seven,
    Eight,
}

impl Vocabulary {
    pub fn from_size(n: u8) -> Option<Self> {
        match n {
            5 => Some(Vocabulary::Five),
            7 => Some(Vocabulary::Seven),
            8 => Some(Vocabulary::Eight),
            _ => None,
        }
    }

    pub fn size(self) -> u8 {
        match self {
            Vocabulary::Five => 5,
            Vocabulary::Seven => 7,
            Vocabulary::Eight => 8,
        }
    }

    pub fn labels(self) -> Vec<&'static str> {
        match self {
            Vocabulary::Five => DrumClass5::ALL.iter().map(|c| c.label()).collect(),
            Vocabulary::Seven => DrumClass7::ALL.iter().map(|c| c.label()).collect(),
            Vocabulary::Eight => DrumClass7::ALL
                .iter()
                .map(|c| c.label())
                .chain(std::iter::once("CB"))
                .collect(),
        }
    }

    /// Class name of `label` in this vocabulary, if it has one.
    pub fn project(self, label: EvalLabel) -> Option<&'static str> {
        match (self, label) {
            (Vocabulary::Five, EvalLabel::Class7(c)) => Some(c.project().label()),
            (Vocabulary::Five, EvalLabel::Class5(c)) => Some(c.label()),
            (_, EvalLabel::Class7(c)) => Some(c.label()),
            (_, EvalLabel::Class5(c @ (DrumClass5::Kick | DrumClass5::Snare | DrumClass5::Toms))) => Some(c.label()),
            (Vocabulary::Eight, EvalLabel::Cowbell) => Some("CB"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Maximum matching between two sorted time lists where `r` and `e` may pair
/// when `|r - e| <= tolerance`. Returns (reference index, estimate index)
/// pairs sorted by reference index.
pub fn match_pairs(reference: &[f64], estimate: &[f64], tolerance: f64) -> Vec<(usize, usize)> {
    // candidates of each reference form a contiguous run of estimates
    let mut spans = Vec::with_capacity(reference.len());
    let mut lo = 0;
    for &r in reference {
        // estimates too early for r are too early for every later reference
        while lo < estimate.len() && estimate[lo] - r < -tolerance {
            lo += 1;
        }
        let mut hi = lo;
        while hi < estimate.len() && estimate[hi] - r <= tolerance {
            hi += 1;
        }
        spans.push(lo..hi);
    }

    let mut est_owner: Vec<Option<usize>> = vec![None; estimate.len()];
    let mut visited = vec![usize::MAX; estimate.len()];
    for root in 0..reference.len() {
        augment(root, &spans, &mut est_owner, &mut visited);
    }

    let mut pairs: Vec<(usize, usize)> = est_owner
        .iter()
        .enumerate()
        .filter_map(|(e, owner)| owner.map(|r| (r, e)))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Iterative augmenting-path search from one unmatched reference.
fn augment(
    root: usize,
    spans: &[std::ops::Range<usize>],
    est_owner: &mut [Option<usize>],
    visited: &mut [usize],
) -> bool {
    // stack of (reference, next candidate estimate) plus the estimate that
    // led to each reference
    let mut stack: Vec<(usize, usize)> = vec![(root, spans[root].start)];
    let mut via: Vec<usize> = Vec::new();
    while let Some(&mut (r, ref mut next)) = stack.last_mut() {
        if *next >= spans[r].end {
            stack.pop();
            via.pop();
            continue;
        }
        let e = *next;
        *next += 1;
        if visited[e] == root {
            continue;
        }
        visited[e] = root;
        match est_owner[e] {
            None => {
                // flip the path: stack[k].0 takes via[k]... ending with e
                via.push(e);
                for (k, &(r_k, _)) in stack.iter().enumerate() {
                    est_owner[via[k]] = Some(r_k);
                }
                return true;
            }
            Some(owner) => {
                via.push(e);
                stack.push((owner, spans[owner].start));
            }
        }
    }
    false
}

pub fn match_onsets(reference: &[f64], estimate: &[f64], tolerance: f64) -> MatchCounts {
    let tp = match_pairs(reference, estimate, tolerance).len();
    MatchCounts {
        tp,
        fp: estimate.len() - tp,
        fn_: reference.len() - tp,
    }
}

/// Precision, recall and F-measure; every ratio with a zero denominator is 0.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScore {
    pub class: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl ClassScore {
    fn from_counts(class: &str, c: MatchCounts) -> Self {
        let (precision, recall, f_measure) = prf(c.tp, c.fp, c.fn_);
        ClassScore {
            class: class.to_string(),
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision,
            recall,
            f_measure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroScore {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub vocabulary: Vec<String>,
    pub tolerance: f64,
    pub per_class: Vec<ClassScore>,
    pub micro: ClassScore,
    #[serde(rename = "macro")]
    pub macro_avg: MacroScore,
}

impl EvalReport {
    pub fn class(&self, label: &str) -> Option<&ClassScore> {
        self.per_class.iter().find(|c| c.class == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
            "class", "tp", "fp", "fn", "precision", "recall", "f_measure"
        );
        for c in self.per_class.iter().chain(std::iter::once(&self.micro)) {
            let _ = writeln!(
                out,
                "{:<6} {:>6} {:>6} {:>6} {:>9.3} {:>9.3} {:>9.3}",
                c.class, c.tp, c.fp, c.fn_, c.precision, c.recall, c.f_measure
            );
        }
        let m = &self.macro_avg;
        let _ = writeln!(
            out,
            "{:<6} {:>6} {:>6} {:>6} {:>9.3} {:>9.3} {:>9.3}",
            m.class, "", "", "", m.precision, m.recall, m.f_measure
        );
        out
    }
}

/// Times per vocabulary class, zero-velocity estimates removed.
fn bucket(
    events: &[EvalEvent],
    vocabulary: Vocabulary,
    side: &'static str,
    drop_silent: bool,
) -> Result<BTreeMap<&'static str, Vec<f64>>, EvalError> {
    let mut buckets: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for e in events {
        if drop_silent && e.velocity == 0 {
            continue;
        }
        let class = vocabulary.project(e.label).ok_or_else(|| EvalError::UnknownClassLabel {
            side,
            label: e.label.name().to_string(),
            classes: vocabulary.size(),
        })?;
        buckets.entry(class).or_default().push(e.time);
    }
    for times in buckets.values_mut() {
        times.sort_by(f64::total_cmp);
    }
    Ok(buckets)
}

pub fn evaluate(
    reference: &[EvalEvent],
    estimate: &[EvalEvent],
    vocabulary: Vocabulary,
    tolerance: f64,
) -> Result<EvalReport, EvalError> {
    let refs = bucket(reference, vocabulary, "reference", false)?;
    let ests = bucket(estimate, vocabulary, "estimate", true)?;
    let labels = vocabulary.labels();
    let empty = Vec::new();

    let per_class: Vec<ClassScore> = labels
        .iter()
        .map(|&label| {
            let counts = match_onsets(
                refs.get(label).unwrap_or(&empty),
                ests.get(label).unwrap_or(&empty),
                tolerance,
            );
            ClassScore::from_counts(label, counts)
        })
        .collect();

    let total = per_class.iter().fold(MatchCounts::default(), |acc, c| MatchCounts {
        tp: acc.tp + c.tp,
        fp: acc.fp + c.fp,
        fn_: acc.fn_ + c.fn_,
    });
    let n = per_class.len() as f64;
    let macro_avg = MacroScore {
        class: "macro".to_string(),
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / n,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / n,
        f_measure: per_class.iter().map(|c| c.f_measure).sum::<f64>() / n,
    };

    Ok(EvalReport {
        vocabulary: labels.iter().map(|s| s.to_string()).collect(),
        tolerance,
        per_class,
        micro: ClassScore::from_counts("micro", total),
        macro_avg,
    })
}

/// Read evaluation events from TSV: "time<TAB>label[<TAB>velocity]". Labels
/// may be 7-class codes, 5-class codes, CB, or General MIDI note numbers.
/// A missing velocity counts as 127.
pub fn parse_eval_tsv(text: &str) -> Result<Vec<EvalEvent>, EvalError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let parse_err = |message: String| EventsError::Parse { line: line_no, message };
        if !(2..=3).contains(&fields.len()) {
            return Err(parse_err(format!("expected 2 or 3 columns, found {}", fields.len())).into());
        }
        let time: f64 = fields[0]
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite() && *t >= 0.0)
            .ok_or_else(|| parse_err(format!("invalid time {:?}", fields[0])))?;
        let label = EvalLabel::from_label(fields[1])
            .or_else(|| fields[1].parse::<u8>().ok().and_then(EvalLabel::from_midi_note))
            .ok_or_else(|| parse_err(format!("unknown drum label {:?}", fields[1])))?;
        let velocity = match fields.get(2) {
            Some(v) => v
                .parse::<u8>()
                .ok()
                .filter(|v| *v <= 127)
                .ok_or_else(|| parse_err(format!("invalid velocity {v:?}")))?,
            None => 127,
        };
        out.push(EvalEvent { time, label, velocity });
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(out)
}

/// Read evaluation events from SMF bytes with the 7-class note grouping plus
/// cowbell. Returns the events and the number of unmapped notes.
pub fn eval_events_from_midi(bytes: &[u8]) -> Result<(Vec<EvalEvent>, usize), EvalError> {
    let notes = events::read_midi_notes(bytes)?;
    let mut skipped = 0;
    let events = notes
        .into_iter()
        .filter_map(|n| match EvalLabel::from_midi_note(n.key) {
            Some(label) => Some(EvalEvent {
                time: n.time,
                label,
                velocity: n.velocity,
            }),
            None => {
                skipped += 1;
                None
            }
        })
        .collect();
    Ok((events, skipped))
}
