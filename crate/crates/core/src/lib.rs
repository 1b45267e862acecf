//! Drum transcription refinement from separated stems.
//!
//! Takes a 5-class onset transcription (kick, snare, hi-hat, toms, cymbals)
//! and the six stems of a drum-kit separation (kick, snare, toms, hi-hat,
//! crash, ride) and produces a 7-class transcription with MIDI velocities.
//! Also contains an onset evaluation harness and a synthetic stem renderer
//! that serves as ground truth for end-to-end checks.

pub mod audio_io;
pub mod cli;
pub mod evaluation;
pub mod events;
mod fsutil;
pub mod loudness;
pub mod refine;
pub mod synth;

pub use audio_io::{AudioClip, StemSet};
pub use events::{DrumClass5, DrumClass7, NoteEvent, OnsetEvent, StemClass};
pub use loudness::{CurveGroup, LoudnessCurve};
pub use refine::{refine_transcription, RefinementConfig};
