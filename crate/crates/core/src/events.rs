//! Drum event vocabulary and transcription codecs.
//!
//! Input transcriptions are 5-class onset lists (kick, snare, hi-hat, toms,
//! cymbals) read from Standard MIDI Files or TSV. Refined output is a 7-class
//! note list with velocities, written back as a single-track SMF on the
//! General MIDI percussion channel or as a three-column TSV.

use std::fmt;
use std::path::Path;

use midly::num::{u15, u24, u28, u4, u7};
use midly::{Format, Header, MetaMessage, MidiMessage, Smf, Timing, TrackEvent, TrackEventKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil;

/// Ticks per quarter note of written files.
pub const OUTPUT_PPQ: u16 = 480;
/// Tempo of written files in microseconds per quarter note (120 BPM).
pub const OUTPUT_TEMPO_US: u32 = 500_000;
/// Gate length of written notes.
pub const NOTE_DURATION_SECONDS: f64 = 0.100;
/// Zero-based channel index of General MIDI percussion (channel 10).
pub const DRUM_CHANNEL: u8 = 9;

const DEFAULT_TEMPO_US: u32 = 500_000;

#[derive(Debug, Error)]
pub enum EventsError {
    #[error("malformed MIDI file: {0}")]
    MalformedSmf(String),
    #[error("MIDI file contains no usable notes")]
    NoNotes,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EventsError {
    fn parse(line: usize, message: impl Into<String>) -> Self {
        EventsError::Parse {
            line,
            message: message.into(),
        }
    }
}

/// Classes produced by the upstream 5-class transcriber.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DrumClass5 {
    Kick,
    Snare,
    HiHat,
    Toms,
    Cymbals,
}

impl DrumClass5 {
    pub const ALL: [DrumClass5; 5] = [
        DrumClass5::Kick,
        DrumClass5::Snare,
        DrumClass5::HiHat,
        DrumClass5::Toms,
        DrumClass5::Cymbals,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DrumClass5::Kick => "KD",
            DrumClass5::Snare => "SD",
            DrumClass5::HiHat => "HH",
            DrumClass5::Toms => "TT",
            DrumClass5::Cymbals => "CY",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        DrumClass5::ALL.into_iter().find(|c| c.label() == label)
    }

    /// Permissive General MIDI grouping used for incoming transcriptions.
    pub fn from_midi_note(note: u8) -> Option<Self> {
        match note {
            35 | 36 => Some(DrumClass5::Kick),
            38 | 40 => Some(DrumClass5::Snare),
            42 | 44 | 46 => Some(DrumClass5::HiHat),
            41 | 43 | 45 | 47 | 48 | 50 => Some(DrumClass5::Toms),
            49 | 51 | 52 | 53 | 55 | 57 | 59 => Some(DrumClass5::Cymbals),
            _ => None,
        }
    }
}

impl fmt::Display for DrumClass5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Refined output classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DrumClass7 {
    Kick,
    Snare,
    HiHatClosed,
    HiHatOpen,
    Toms,
    Crash,
    Ride,
}

impl DrumClass7 {
    pub const ALL: [DrumClass7; 7] = [
        DrumClass7::Kick,
        DrumClass7::Snare,
        DrumClass7::HiHatClosed,
        DrumClass7::HiHatOpen,
        DrumClass7::Toms,
        DrumClass7::Crash,
        DrumClass7::Ride,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DrumClass7::Kick => "KD",
            DrumClass7::Snare => "SD",
            DrumClass7::HiHatClosed => "HHC",
            DrumClass7::HiHatOpen => "HHO",
            DrumClass7::Toms => "TT",
            DrumClass7::Crash => "CR",
            DrumClass7::Ride => "RD",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        DrumClass7::ALL.into_iter().find(|c| c.label() == label)
    }

    pub fn project(self) -> DrumClass5 {
        match self {
            DrumClass7::Kick => DrumClass5::Kick,
            DrumClass7::Snare => DrumClass5::Snare,
            DrumClass7::HiHatClosed | DrumClass7::HiHatOpen => DrumClass5::HiHat,
            DrumClass7::Toms => DrumClass5::Toms,
            DrumClass7::Crash | DrumClass7::Ride => DrumClass5::Cymbals,
        }
    }

    /// Note number written for this class.
    pub fn midi_note(self) -> u8 {
        match self {
            DrumClass7::Kick => 36,
            DrumClass7::Snare => 38,
            DrumClass7::HiHatClosed => 42,
            DrumClass7::HiHatOpen => 46,
            DrumClass7::Toms => 47,
            DrumClass7::Crash => 49,
            DrumClass7::Ride => 51,
        }
    }

    /// General MIDI grouping at 7-class granularity. Used when reading
    /// reference annotations and refined files back.
    pub fn from_midi_note(note: u8) -> Option<Self> {
        match note {
            35 | 36 => Some(DrumClass7::Kick),
            38 | 40 => Some(DrumClass7::Snare),
            42 | 44 => Some(DrumClass7::HiHatClosed),
            46 => Some(DrumClass7::HiHatOpen),
            41 | 43 | 45 | 47 | 48 | 50 => Some(DrumClass7::Toms),
            49 | 52 | 55 | 57 => Some(DrumClass7::Crash),
            51 | 53 | 59 => Some(DrumClass7::Ride),
            _ => None,
        }
    }

    /// The separated stem whose loudness curve carries this class.
    pub fn stem(self) -> StemClass {
        match self {
            DrumClass7::Kick => StemClass::Kick,
            DrumClass7::Snare => StemClass::Snare,
            DrumClass7::HiHatClosed | DrumClass7::HiHatOpen => StemClass::HiHat,
            DrumClass7::Toms => StemClass::Toms,
            DrumClass7::Crash => StemClass::Crash,
            DrumClass7::Ride => StemClass::Ride,
        }
    }
}

impl fmt::Display for DrumClass7 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Stems emitted by the drum-kit separation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StemClass {
    Kick,
    Snare,
    Toms,
    HiHat,
    Crash,
    Ride,
}

impl StemClass {
    pub const ALL: [StemClass; 6] = [
        StemClass::Kick,
        StemClass::Snare,
        StemClass::Toms,
        StemClass::HiHat,
        StemClass::Crash,
        StemClass::Ride,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StemClass::Kick => "kick",
            StemClass::Snare => "snare",
            StemClass::Toms => "toms",
            StemClass::HiHat => "hihat",
            StemClass::Crash => "crash",
            StemClass::Ride => "ride",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        StemClass::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Default file name inside a stem directory.
    pub fn file_name(self) -> String {
        format!("{}.wav", self.name())
    }
}

impl fmt::Display for StemClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnsetEvent {
    pub time: f64,
    pub class5: DrumClass5,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub time: f64,
    pub class7: DrumClass7,
    pub velocity: u8,
}

impl NoteEvent {
    pub fn onset(&self) -> OnsetEvent {
        OnsetEvent {
            time: self.time,
            class5: self.class7.project(),
        }
    }
}

/// A note-on read from a MIDI file, before any class mapping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidiNote {
    pub time: f64,
    pub key: u8,
    pub velocity: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOnsets {
    pub onsets: Vec<OnsetEvent>,
    /// Note-ons whose key has no 5-class mapping (cowbell, percussion, ...).
    pub skipped: usize,
}

fn sort_by_time<T>(items: &mut [T], time: impl Fn(&T) -> f64) {
    items.sort_by(|a, b| time(a).total_cmp(&time(b)));
}

fn parse_time(field: &str, line: usize) -> Result<f64, EventsError> {
    let t: f64 = field
        .trim()
        .parse()
        .map_err(|_| EventsError::parse(line, format!("invalid time {field:?}")))?;
    if !t.is_finite() || t < 0.0 {
        return Err(EventsError::parse(line, format!("time must be finite and >= 0, got {t}")));
    }
    Ok(t)
}

/// Iterate non-blank, non-comment lines with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.trim_end_matches('\r');
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            None
        } else {
            Some((i + 1, line))
        }
    })
}

/// Tempo changes as (absolute tick, microseconds per quarter).
struct TempoMap {
    ticks_per_quarter: f64,
    changes: Vec<(u64, u32)>,
}

impl TempoMap {
    fn seconds_at(&self, tick: u64) -> f64 {
        let mut seconds = 0.0;
        let mut last_tick = 0u64;
        let mut tempo = DEFAULT_TEMPO_US;
        for &(change_tick, us) in &self.changes {
            if change_tick >= tick {
                break;
            }
            seconds += (change_tick - last_tick) as f64 * tempo as f64 / (1e6 * self.ticks_per_quarter);
            last_tick = change_tick;
            tempo = us;
        }
        seconds + (tick - last_tick) as f64 * tempo as f64 / (1e6 * self.ticks_per_quarter)
    }
}

/// Read every note-on with non-zero velocity from a type 0 or type 1 SMF,
/// honoring the tempo map. Output is sorted by time.
pub fn read_midi_notes(bytes: &[u8]) -> Result<Vec<MidiNote>, EventsError> {
    let smf = Smf::parse(bytes).map_err(|e| EventsError::MalformedSmf(e.to_string()))?;
    if smf.header.format == Format::Sequential {
        return Err(EventsError::MalformedSmf("SMF type 2 is not supported".into()));
    }

    let mut raw_notes: Vec<(u64, u8, u8)> = Vec::new();
    let mut tempo_changes: Vec<(u64, u32)> = Vec::new();
    for track in &smf.tracks {
        let mut tick = 0u64;
        for event in track {
            tick += u64::from(event.delta.as_int());
            match event.kind {
                TrackEventKind::Midi {
                    message: MidiMessage::NoteOn { key, vel },
                    ..
                } if vel.as_int() > 0 => raw_notes.push((tick, key.as_int(), vel.as_int())),
                TrackEventKind::Meta(MetaMessage::Tempo(us)) => tempo_changes.push((tick, us.as_int())),
                _ => {}
            }
        }
    }
    // stable: same-tick tempo changes keep file order, last one wins
    tempo_changes.sort_by_key(|&(t, _)| t);

    let to_seconds: Box<dyn Fn(u64) -> f64> = match smf.header.timing {
        Timing::Metrical(tpq) => {
            let tpq = tpq.as_int();
            if tpq == 0 {
                return Err(EventsError::MalformedSmf("zero ticks per quarter note".into()));
            }
            let map = TempoMap {
                ticks_per_quarter: f64::from(tpq),
                changes: tempo_changes,
            };
            Box::new(move |tick| map.seconds_at(tick))
        }
        Timing::Timecode(fps, subframes) => {
            let rate = f64::from(fps.as_f32()) * f64::from(subframes);
            if rate <= 0.0 {
                return Err(EventsError::MalformedSmf("zero timecode resolution".into()));
            }
            Box::new(move |tick| tick as f64 / rate)
        }
    };

    let mut notes: Vec<MidiNote> = raw_notes
        .into_iter()
        .map(|(tick, key, velocity)| MidiNote {
            time: to_seconds(tick),
            key,
            velocity,
        })
        .collect();
    sort_by_time(&mut notes, |n| n.time);
    Ok(notes)
}

/// Parse a 5-class transcription from SMF bytes. Notes outside the input
/// map are skipped and counted.
pub fn parse_onsets_midi(bytes: &[u8]) -> Result<ParsedOnsets, EventsError> {
    let notes = read_midi_notes(bytes)?;
    let mut skipped = 0;
    let onsets: Vec<OnsetEvent> = notes
        .iter()
        .filter_map(|n| match DrumClass5::from_midi_note(n.key) {
            Some(class5) => Some(OnsetEvent { time: n.time, class5 }),
            None => {
                skipped += 1;
                None
            }
        })
        .collect();
    if onsets.is_empty() {
        return Err(EventsError::NoNotes);
    }
    Ok(ParsedOnsets { onsets, skipped })
}

/// Parse "time<TAB>label" lines where label is a 5-class code or a MIDI
/// note number from the input map.
pub fn parse_onsets_tsv(text: &str) -> Result<Vec<OnsetEvent>, EventsError> {
    let mut onsets = Vec::new();
    for (line_no, line) in data_lines(text) {
        let mut fields = line.split('\t');
        let time = parse_time(fields.next().unwrap_or(""), line_no)?;
        let label = fields
            .next()
            .map(str::trim)
            .ok_or_else(|| EventsError::parse(line_no, "missing label column"))?;
        let class5 = match DrumClass5::from_label(label) {
            Some(c) => c,
            None => label
                .parse::<u8>()
                .ok()
                .and_then(DrumClass5::from_midi_note)
                .ok_or_else(|| EventsError::parse(line_no, format!("unknown drum label {label:?}")))?,
        };
        onsets.push(OnsetEvent { time, class5 });
    }
    sort_by_time(&mut onsets, |o| o.time);
    Ok(onsets)
}

fn seconds_to_output_ticks(seconds: f64) -> u64 {
    let ticks_per_second = f64::from(OUTPUT_PPQ) * 1e6 / f64::from(OUTPUT_TEMPO_US);
    (seconds * ticks_per_second).round() as u64
}

/// Encode refined notes as a type 0 SMF. Zero-velocity notes are left out.
pub fn encode_midi(notes: &[NoteEvent]) -> Vec<u8> {
    // (tick, is_on, key, velocity); offs sort before ons at the same tick
    let mut timeline: Vec<(u64, bool, u8, u8)> = Vec::new();
    let audible: Vec<&NoteEvent> = notes.iter().filter(|n| n.velocity > 0).collect();
    let gate = seconds_to_output_ticks(NOTE_DURATION_SECONDS);
    for (i, note) in audible.iter().enumerate() {
        let key = note.class7.midi_note();
        let on = seconds_to_output_ticks(note.time);
        // a retrigger of the same key closes the previous note early
        let next_same = audible[i + 1..]
            .iter()
            .map(|n| (seconds_to_output_ticks(n.time), n.class7.midi_note()))
            .find(|&(_, k)| k == key)
            .map(|(t, _)| t);
        let off = match next_same {
            Some(t) => (on + gate).min(t),
            None => on + gate,
        };
        timeline.push((on, true, key, note.velocity.min(127)));
        timeline.push((off, false, key, 0));
    }
    timeline.sort_by_key(|&(tick, is_on, key, _)| (tick, is_on, key));

    let channel = u4::new(DRUM_CHANNEL);
    let mut track: Vec<TrackEvent> = vec![TrackEvent {
        delta: u28::new(0),
        kind: TrackEventKind::Meta(MetaMessage::Tempo(u24::new(OUTPUT_TEMPO_US))),
    }];
    let mut last = 0u64;
    for (tick, is_on, key, vel) in timeline {
        let delta = u28::new((tick - last) as u32);
        last = tick;
        let message = if is_on {
            MidiMessage::NoteOn {
                key: u7::new(key),
                vel: u7::new(vel),
            }
        } else {
            MidiMessage::NoteOff {
                key: u7::new(key),
                vel: u7::new(0),
            }
        };
        track.push(TrackEvent {
            delta,
            kind: TrackEventKind::Midi { channel, message },
        });
    }
    track.push(TrackEvent {
        delta: u28::new(0),
        kind: TrackEventKind::Meta(MetaMessage::EndOfTrack),
    });

    let mut smf = Smf::new(Header::new(
        Format::SingleTrack,
        Timing::Metrical(u15::new(OUTPUT_PPQ)),
    ));
    smf.tracks.push(track);
    let mut out = Vec::new();
    smf.write_std(&mut out).expect("writing to a Vec cannot fail");
    out
}

pub fn write_midi(notes: &[NoteEvent], path: &Path) -> Result<(), EventsError> {
    fsutil::write_atomic(path, &encode_midi(notes))?;
    Ok(())
}

/// Serialize notes as "time<TAB>label<TAB>velocity" lines, times in
/// milliseconds precision.
pub fn write_tsv(notes: &[NoteEvent]) -> String {
    let mut out = String::with_capacity(notes.len() * 16);
    for note in notes {
        out.push_str(&format!("{:.3}\t{}\t{}\n", note.time, note.class7.label(), note.velocity));
    }
    out
}

pub fn read_tsv(text: &str) -> Result<Vec<NoteEvent>, EventsError> {
    let mut notes = Vec::new();
    for (line_no, line) in data_lines(text) {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(EventsError::parse(
                line_no,
                format!("expected 3 tab-separated columns, found {}", fields.len()),
            ));
        }
        let time = parse_time(fields[0], line_no)?;
        let class7 = DrumClass7::from_label(fields[1])
            .ok_or_else(|| EventsError::parse(line_no, format!("unknown drum label {:?}", fields[1])))?;
        let velocity: u8 = fields[2]
            .parse()
            .ok()
            .filter(|v| *v <= 127)
            .ok_or_else(|| EventsError::parse(line_no, format!("invalid velocity {:?}", fields[2])))?;
        notes.push(NoteEvent { time, class7, velocity });
    }
    sort_by_time(&mut notes, |n| n.time);
    Ok(notes)
}
