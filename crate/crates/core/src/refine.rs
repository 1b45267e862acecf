//! Velocity estimation and 5→7 class expansion.
//!
//! Every onset is looked up on the group-normalized loudness curve of the
//! stem that carries its class. The loudest frame in a short window around
//! the onset gives the velocity. Hi-hat onsets are split into open and
//! closed by how much the hi-hat curve sags before the next hi-hat onset.
//! Cymbal onsets are split into crash and ride by comparing the two cymbal
//! stems. A refraction period follows each prominent crash peak. Inside it a
//! cymbal onset is a ride, since the ringing crash would otherwise win the
//! comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::{AudioError, StemSet};
use crate::events::{DrumClass5, DrumClass7, NoteEvent, OnsetEvent, StemClass};
use crate::loudness::{self, CurveGroup, CurveParams, LoudnessCurve, LoudnessError};

/// Stems whose lengths differ by more than this trigger a warning.
pub const DURATION_MISMATCH_TOLERANCE_SECONDS: f64 = 0.1;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error(transparent)]
    Loudness(#[from] LoudnessError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {message}")]
    InvalidValue { key: String, message: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid configuration: {0}")]
    Invariant(String),
}

/// Lower end of the dB range mapped onto velocities 0..=127.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VelocityFloorMode {
    /// `velocity_floor_db`.
    Fixed,
    /// The quietest frame in the whole normalized group.
    GlobalMin,
}

/// Scale on which the hi-hat sustain ratio is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SustainScale {
    /// min/max of linear amplitudes.
    Linear,
    /// min/max of dB heights above the curve floor.
    DbAboveFloor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    pub velocity_window_seconds: f64,
    pub velocity_floor_db: f64,
    pub velocity_floor_mode: VelocityFloorMode,
    pub hihat_window_cap_seconds: f64,
    pub hihat_sustain_ratio: f64,
    pub hihat_sustain_scale: SustainScale,
    pub refraction_lead_seconds: f64,
    pub crash_peak_min_db: f64,
    pub crash_peak_prominence_db: f64,
    pub peak_onset_grace_seconds: f64,
    /// RMS window at 44.1 kHz, scaled for 48 kHz.
    pub rms_window_samples: usize,
    pub rms_hop_seconds: f64,
    pub db_floor: f64,
    /// Known reference level replacing the group peak.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_db: Option<f64>,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            velocity_window_seconds: 0.050,
            velocity_floor_db: -48.0,
            velocity_floor_mode: VelocityFloorMode::Fixed,
            hihat_window_cap_seconds: 0.150,
            hihat_sustain_ratio: 0.75,
            hihat_sustain_scale: SustainScale::Linear,
            refraction_lead_seconds: 1.0,
            crash_peak_min_db: -24.0,
            crash_peak_prominence_db: 6.0,
            peak_onset_grace_seconds: 0.050,
            rms_window_samples: loudness::DEFAULT_WINDOW_SAMPLES_44K,
            rms_hop_seconds: loudness::DEFAULT_HOP_SECONDS,
            db_floor: loudness::DEFAULT_FLOOR_DB,
            reference_db: None,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("velocity_window_seconds", self.velocity_window_seconds),
            ("hihat_window_cap_seconds", self.hihat_window_cap_seconds),
            ("refraction_lead_seconds", self.refraction_lead_seconds),
            ("peak_onset_grace_seconds", self.peak_onset_grace_seconds),
            ("rms_hop_seconds", self.rms_hop_seconds),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::Invariant(format!("{name} must be > 0, got {value}")));
            }
        }
        if self.rms_window_samples == 0 {
            return Err(ConfigError::Invariant("rms_window_samples must be > 0".into()));
        }
        if !(self.hihat_sustain_ratio > 0.0 && self.hihat_sustain_ratio < 1.0) {
            return Err(ConfigError::Invariant(format!(
                "hihat_sustain_ratio must lie in (0, 1), got {}",
                self.hihat_sustain_ratio
            )));
        }
        if !(self.velocity_floor_db > self.db_floor && self.velocity_floor_db < 0.0) {
            return Err(ConfigError::Invariant(format!(
                "velocity_floor_db must lie in (db_floor, 0), got {}",
                self.velocity_floor_db
            )));
        }
        if !(self.crash_peak_prominence_db >= 0.0) {
            return Err(ConfigError::Invariant("crash_peak_prominence_db must be >= 0".into()));
        }
        if let Some(r) = self.reference_db {
            if !r.is_finite() {
                return Err(ConfigError::Invariant("reference_db must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn curve_params(&self) -> CurveParams {
        CurveParams {
            window_samples_44k: self.rms_window_samples,
            hop_seconds: self.rms_hop_seconds,
            floor_db: self.db_floor,
        }
    }

    /// Set one field from its textual value. Strings may be bare or quoted.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut table = toml::Table::try_from(&*self).expect("config serializes to a table");
        if !Self::KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        let parsed = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(value.trim().to_string()),
        };
        // integers are accepted where floats are expected
        let parsed = match (table.get(key), parsed) {
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (None, toml::Value::Integer(i)) if key == "reference_db" => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(key.to_string(), parsed);
        *self = table.try_into().map_err(|e: toml::de::Error| ConfigError::InvalidValue {
            key: key.to_string(),
            message: e.message().to_string(),
        })?;
        Ok(())
    }

    /// Parse `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn from_config_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RefinementConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub const KEYS: [&'static str; 14] = [
        "velocity_window_seconds",
        "velocity_floor_db",
        "velocity_floor_mode",
        "hihat_window_cap_seconds",
        "hihat_sustain_ratio",
        "hihat_sustain_scale",
        "refraction_lead_seconds",
        "crash_peak_min_db",
        "crash_peak_prominence_db",
        "peak_onset_grace_seconds",
        "rms_window_samples",
        "rms_hop_seconds",
        "db_floor",
        "reference_db",
    ];
}

/// Sorted, non-overlapping half-open `[start, end)` ranges.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefractionIntervals {
    intervals: Vec<(f64, f64)>,
}

impl RefractionIntervals {
    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn contains(&self, t: f64) -> bool {
        let idx = self.intervals.partition_point(|&(start, _)| start <= t);
        idx > 0 && t < self.intervals[idx - 1].1
    }
}

/// Map a normalized dB level onto 0..=127, linear over `[lower_db, 0]`.
pub fn velocity_from_db(level_db: f64, lower_db: f64) -> u8 {
    if lower_db >= 0.0 {
        return if level_db >= lower_db { 127 } else { 0 };
    }
    let v = 127.0 * (level_db - lower_db) / -lower_db;
    v.round().clamp(0.0, 127.0) as u8
}

/// Loudest frame in the centered velocity window.
fn velocity_window_max(curve: &LoudnessCurve, onset: f64, cfg: &RefinementConfig) -> f64 {
    let half = cfg.velocity_window_seconds / 2.0;
    curve
        .window(onset - half, onset + half)
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn estimate_velocity(curve: &LoudnessCurve, onset: f64, cfg: &RefinementConfig) -> u8 {
    velocity_from_db(velocity_window_max(curve, onset, cfg), cfg.velocity_floor_db)
}

/// Times of local maxima of the crash curve that reach `crash_peak_min_db`
/// and stand at least `crash_peak_prominence_db` above their surroundings.
///
/// Prominence is the peak height over the higher of the two minima found
/// walking outwards until a higher frame (or the curve edge) is reached. The
/// curve is treated as sitting at its floor beyond both edges.
pub fn detect_crash_peaks(curve: &LoudnessCurve, cfg: &RefinementConfig) -> Vec<f64> {
    let v = &curve.values;
    let n = v.len();
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        // plateau [i, j]
        let mut j = i;
        while j + 1 < n && v[j + 1] == v[i] {
            j += 1;
        }
        let left = if i == 0 { curve.floor_db } else { v[i - 1] };
        let right = if j + 1 == n { curve.floor_db } else { v[j + 1] };
        let height = v[i];
        if height > left && height > right && height >= cfg.crash_peak_min_db {
            let left_min = flank_min(v[..i].iter().rev().copied(), height, curve.floor_db);
            let right_min = flank_min(v[j + 1..].iter().copied(), height, curve.floor_db);
            let prominence = height - left_min.max(right_min);
            if prominence >= cfg.crash_peak_prominence_db {
                peaks.push(curve.frame_time((i + j) / 2));
            }
        }
        i = j + 1;
    }
    peaks
}

/// Minimum met walking away from a peak until a higher frame; running off
/// the curve edge counts as reaching the floor.
fn flank_min(walk: impl Iterator<Item = f64>, height: f64, floor_db: f64) -> f64 {
    let mut min = f64::INFINITY;
    for x in walk {
        if x > height {
            return min;
        }
        min = min.min(x);
    }
    min.min(floor_db)
}

pub fn build_refraction_intervals(peaks: &[f64], performance_end: f64, cfg: &RefinementConfig) -> RefractionIntervals {
    let grace = cfg.peak_onset_grace_seconds;
    let mut intervals = Vec::with_capacity(peaks.len());
    for (k, &peak) in peaks.iter().enumerate() {
        let start = peak + grace;
        let end = match peaks.get(k + 1) {
            Some(&next) => start.max(next - cfg.refraction_lead_seconds),
            None => performance_end,
        };
        if end > start {
            intervals.push((start, end));
        }
    }
    RefractionIntervals { intervals }
}

pub fn classify_cymbal(
    onset: f64,
    crash: &LoudnessCurve,
    ride: &LoudnessCurve,
    refraction: &RefractionIntervals,
    peaks: &[f64],
    cfg: &RefinementConfig,
) -> DrumClass7 {
    if peaks.iter().any(|&p| (onset - p).abs() <= cfg.peak_onset_grace_seconds) {
        return DrumClass7::Crash;
    }
    if refraction.contains(onset) {
        return DrumClass7::Ride;
    }
    if velocity_window_max(crash, onset, cfg) > velocity_window_max(ride, onset, cfg) {
        DrumClass7::Crash
    } else {
        DrumClass7::Ride
    }
}

/// Open when the hi-hat curve holds up over the window after the onset.
///
/// The window runs from the onset to the next hi-hat onset or the cap,
/// whichever comes first. When a next onset exists, frames whose analysis
/// window reaches into it are left out so the next hit's attack does not
/// count as sustain. Fewer than two frames cannot show a decay and read as
/// closed.
pub fn classify_hihat(
    onset: f64,
    next_hihat_onset: Option<f64>,
    curve: &LoudnessCurve,
    cfg: &RefinementConfig,
) -> DrumClass7 {
    let gap = next_hihat_onset.map(|t| t - onset).filter(|g| *g > 0.0);
    let span = gap.map_or(cfg.hihat_window_cap_seconds, |g| g.min(cfg.hihat_window_cap_seconds));
    let mut range = curve.frame_range(onset, onset + span);
    if let Some(next) = next_hihat_onset {
        while range.end > range.start && curve.frame_time(range.end - 1) + curve.window_seconds > next + 1e-9 {
            range.end -= 1;
        }
    }
    if range.len() < 2 {
        return DrumClass7::HiHatClosed;
    }
    let values = &curve.values[range];
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= curve.floor_db {
        return DrumClass7::HiHatClosed;
    }
    let sustained = match cfg.hihat_sustain_scale {
        SustainScale::Linear => 10f64.powf((min - max) / 20.0) > cfg.hihat_sustain_ratio,
        SustainScale::DbAboveFloor => (min - curve.floor_db) > cfg.hihat_sustain_ratio * (max - curve.floor_db),
    };
    if sustained {
        DrumClass7::HiHatOpen
    } else {
        DrumClass7::HiHatClosed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefineWarning {
    MismatchedDurations { shortest_seconds: f64, longest_seconds: f64 },
}

impl std::fmt::Display for RefineWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RefineWarning::MismatchedDurations {
                shortest_seconds,
                longest_seconds,
            } => write!(
                f,
                "stem durations differ: shortest {shortest_seconds:.3} s, longest {longest_seconds:.3} s"
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub notes: Vec<NoteEvent>,
    /// Notes dropped because their velocity came out as 0.
    pub dropped: usize,
    pub warnings: Vec<RefineWarning>,
    pub group: CurveGroup,
    pub crash_peaks: Vec<f64>,
    pub refraction: RefractionIntervals,
}

/// Loudness curves for all six stems, computed in parallel and
/// group-normalized.
pub fn stem_curves(stems: &StemSet, cfg: &RefinementConfig) -> Result<CurveGroup, RefineError> {
    let params = cfg.curve_params();
    let results: Vec<(StemClass, Result<LoudnessCurve, AudioError>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = stems
            .iter()
            .map(|(stem, clip)| (stem, scope.spawn(move || loudness::stem_curve(clip, &params))))
            .collect();
        handles
            .into_iter()
            .map(|(stem, h)| (stem, h.join().expect("curve worker panicked")))
            .collect()
    });
    let mut curves = BTreeMap::new();
    for (stem, curve) in results {
        curves.insert(stem, curve?);
    }
    Ok(loudness::normalize_group(curves, cfg.reference_db)?)
}

pub fn refine_transcription(
    onsets: &[OnsetEvent],
    stems: &StemSet,
    cfg: &RefinementConfig,
) -> Result<Refinement, RefineError> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let durations: Vec<f64> = stems.iter().map(|(_, c)| c.duration_seconds()).collect();
    let shortest = durations.iter().copied().fold(f64::INFINITY, f64::min);
    let longest = durations.iter().copied().fold(0.0, f64::max);
    if longest - shortest > DURATION_MISMATCH_TOLERANCE_SECONDS {
        warnings.push(RefineWarning::MismatchedDurations {
            shortest_seconds: shortest,
            longest_seconds: longest,
        });
    }

    let group = stem_curves(stems, cfg)?;
    let curve = |stem: StemClass| group.get(stem).expect("stem set holds every stem");
    let lower_db = match cfg.velocity_floor_mode {
        VelocityFloorMode::Fixed => cfg.velocity_floor_db,
        VelocityFloorMode::GlobalMin => group.min_db(),
    };

    let crash_peaks = detect_crash_peaks(curve(StemClass::Crash), cfg);
    let refraction = build_refraction_intervals(&crash_peaks, longest, cfg);

    let mut sorted: Vec<OnsetEvent> = onsets.to_vec();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let hihat_times: Vec<f64> = sorted
        .iter()
        .filter(|o| o.class5 == DrumClass5::HiHat)
        .map(|o| o.time)
        .collect();

    let mut notes = Vec::with_capacity(sorted.len());
    let mut dropped = 0;
    for onset in &sorted {
        let t = onset.time;
        let class7 = match onset.class5 {
            DrumClass5::Kick => DrumClass7::Kick,
            DrumClass5::Snare => DrumClass7::Snare,
            DrumClass5::Toms => DrumClass7::Toms,
            DrumClass5::HiHat => {
                let next = hihat_times.get(hihat_times.partition_point(|&h| h <= t)).copied();
                classify_hihat(t, next, curve(StemClass::HiHat), cfg)
            }
            DrumClass5::Cymbals => classify_cymbal(
                t,
                curve(StemClass::Crash),
                curve(StemClass::Ride),
                &refraction,
                &crash_peaks,
                cfg,
            ),
        };
        let level = velocity_window_max(curve(class7.stem()), t, cfg);
        let velocity = velocity_from_db(level, lower_db);
        if velocity == 0 {
            dropped += 1;
            continue;
        }
        notes.push(NoteEvent { time: t, class7, velocity });
    }

    Ok(Refinement {
        notes,
        dropped,
        warnings,
        group,
        crash_peaks,
        refraction,
    })
}
