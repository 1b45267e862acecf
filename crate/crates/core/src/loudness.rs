//! Per-stem loudness curves.
//!
//! A curve is the equal-loudness-filtered signal's windowed RMS in dB,
//! clamped at a floor. The six curves of a performance are then shifted by a
//! single common reference (the loudest frame in the group by default), so
//! the loudest moment of the kit sits at 0 dB and every other value is
//! relative to it.

use std::collections::BTreeMap;
use std::ops::Range;

use thiserror::Error;

use crate::audio_io::{AudioClip, AudioError};
use crate::events::StemClass;

pub const DEFAULT_FLOOR_DB: f64 = -96.0;
pub const DEFAULT_WINDOW_SAMPLES_44K: usize = 1024;
pub const DEFAULT_HOP_SECONDS: f64 = 0.010;

const TIME_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LoudnessError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("every loudness curve is at the floor; stems are silent")]
    AllCurvesAtFloor,
    #[error("no loudness curves to normalize")]
    NoCurves,
    #[error("curves disagree on hop or window length")]
    InconsistentCurves,
}

// ReplayGain equal-loudness tables: 10th-order Yule-Walker stage followed by
// a 2nd-order Butterworth high-pass at 150 Hz. a[0] = 1.
const YULE_B_44100: [f64; 11] = [
    0.05418656406430, -0.02911007808948, -0.00848709379851, -0.00851165645469, -0.00834990904936,
    0.02245293253339, -0.02596338512915, 0.01624864962975, -0.00240879051584, 0.00674613682247,
    -0.00187763777362,
];
const YULE_A_44100: [f64; 11] = [
    1.0, -3.47845948550071, 6.36317777566148, -8.54751527471874, 9.47693607801280, -8.81498681370155,
    6.85401540936998, -4.39470996079559, 2.19611684890774, -0.75104302451432, 0.13149317958808,
];
const BUTTER_B_44100: [f64; 3] = [0.98500175787242, -1.97000351574484, 0.98500175787242];
const BUTTER_A_44100: [f64; 3] = [1.0, -1.96977855582618, 0.97022847566350];

const YULE_B_48000: [f64; 11] = [
    0.03857599435200, -0.02160367184185, -0.00123395316851, -0.00009291677959, -0.01655260341619,
    0.02161526843274, -0.02074045215285, 0.00594298065125, 0.00306428023191, 0.00012025322027,
    0.00288463683916,
];
const YULE_A_48000: [f64; 11] = [
    1.0, -3.84664617118067, 7.81501653005538, -11.34170355132042, 13.05504219327545, -12.28759895145294,
    9.48293806319790, -5.87257861775999, 2.75465861874613, -0.86984376593551, 0.13919314567432,
];
const BUTTER_B_48000: [f64; 3] = [0.98621192462708, -1.97242384925416, 0.98621192462708];
const BUTTER_A_48000: [f64; 3] = [1.0, -1.97223372919527, 0.97261396931306];

/// Numerator/denominator pairs of the two stages for a sample rate.
pub struct EqualLoudnessCoefficients {
    pub yule_b: &'static [f64],
    pub yule_a: &'static [f64],
    pub butter_b: &'static [f64],
    pub butter_a: &'static [f64],
}

pub fn equal_loudness_coefficients(sample_rate: u32) -> Result<EqualLoudnessCoefficients, AudioError> {
    match sample_rate {
        44_100 => Ok(EqualLoudnessCoefficients {
            yule_b: &YULE_B_44100,
            yule_a: &YULE_A_44100,
            butter_b: &BUTTER_B_44100,
            butter_a: &BUTTER_A_44100,
        }),
        48_000 => Ok(EqualLoudnessCoefficients {
            yule_b: &YULE_B_48000,
            yule_a: &YULE_A_48000,
            butter_b: &BUTTER_B_48000,
            butter_a: &BUTTER_A_48000,
        }),
        other => Err(AudioError::UnsupportedSampleRate(other)),
    }
}

/// Direct form I, zero initial state. Outputs below 1e-30 (-600 dB) are
/// flushed to zero; decaying tails otherwise stall the loop on subnormal
/// arithmetic.
fn iir(b: &[f64], a: &[f64], input: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for n in 0..input.len() {
        let mut acc = 0.0;
        for (k, bk) in b.iter().enumerate().take(n + 1) {
            acc += bk * input[n - k];
        }
        for (k, ak) in a.iter().enumerate().skip(1).take(n) {
            acc -= ak * out[n - k];
        }
        out[n] = if acc.abs() < 1e-30 { 0.0 } else { acc };
    }
    out
}

pub fn equal_loudness_filter(clip: &AudioClip) -> Result<AudioClip, AudioError> {
    let c = equal_loudness_coefficients(clip.sample_rate())?;
    let stage1 = iir(c.yule_b, c.yule_a, clip.samples());
    Ok(clip.with_samples(iir(c.butter_b, c.butter_a, &stage1)))
}

/// RMS window length for a sample rate, keeping the temporal extent of
/// `window_44k` samples at 44.1 kHz.
pub fn window_samples_for_rate(window_44k: usize, sample_rate: u32) -> usize {
    ((window_44k as f64 * f64::from(sample_rate) / 44_100.0).round() as usize).max(1)
}

pub fn hop_samples_for_rate(hop_seconds: f64, sample_rate: u32) -> usize {
    ((hop_seconds * f64::from(sample_rate)).round() as usize).max(1)
}

/// Number of frames for a signal of `len` samples: every full window, plus
/// one zero-padded frame when samples remain past the last full window.
pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len == 0 {
        return 0;
    }
    if len <= window {
        return 1;
    }
    let full = (len - window) / hop + 1;
    let covered = (full - 1) * hop + window;
    full + usize::from(covered < len)
}

/// Linear RMS per frame; frame `i` covers samples `[i*hop, i*hop + window)`.
pub fn rms_curve(clip: &AudioClip, window_samples: usize, hop_seconds: f64) -> Result<Vec<f64>, AudioError> {
    if clip.is_empty() {
        return Err(AudioError::EmptyClip);
    }
    if window_samples == 0 || !(hop_seconds > 0.0) {
        return Err(AudioError::InvalidClip("window and hop must be positive".into()));
    }
    let hop = hop_samples_for_rate(hop_seconds, clip.sample_rate());
    let samples = clip.samples();
    let frames = frame_count(samples.len(), window_samples, hop);
    Ok((0..frames)
        .map(|i| {
            let start = i * hop;
            let end = (start + window_samples).min(samples.len());
            let energy: f64 = samples[start..end].iter().map(|s| s * s).sum();
            (energy / window_samples as f64).sqrt()
        })
        .collect())
}

pub fn to_decibels(rms: &[f64], floor_db: f64) -> Vec<f64> {
    rms.iter()
        .map(|&v| {
            if v > 0.0 {
                (20.0 * v.log10()).max(floor_db)
            } else {
                floor_db
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoudnessCurve {
    pub values: Vec<f64>,
    pub hop_seconds: f64,
    pub window_seconds: f64,
    pub floor_db: f64,
}

impl LoudnessCurve {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn frame_time(&self, index: usize) -> f64 {
        index as f64 * self.hop_seconds
    }

    /// Time just past the end of the last frame's analysis window.
    pub fn duration_seconds(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.frame_time(self.values.len() - 1) + self.window_seconds
        }
    }

    fn first_frame_at_or_after(&self, t: f64) -> usize {
        let idx = (t / self.hop_seconds - TIME_EPSILON).ceil();
        if idx <= 0.0 {
            0
        } else {
            (idx as usize).min(self.values.len())
        }
    }

    /// Indices of frames whose start time lies in `[t_start, t_end)`. Empty
    /// when no frame start falls inside.
    pub fn frame_range(&self, t_start: f64, t_end: f64) -> Range<usize> {
        let start = self.first_frame_at_or_after(t_start);
        let end = self.first_frame_at_or_after(t_end).max(start);
        start..end
    }

    /// Frame values for `[t_start, t_end)`. A range holding no frame start
    /// yields the single frame nearest to it.
    pub fn window(&self, t_start: f64, t_end: f64) -> &[f64] {
        if self.values.is_empty() {
            return &self.values;
        }
        let range = self.frame_range(t_start, t_end);
        if !range.is_empty() {
            return &self.values[range];
        }
        let last = self.values.len() - 1;
        let nearest = if range.start > last {
            last
        } else {
            let mid = 0.5 * (t_start + t_end);
            ((mid / self.hop_seconds).round().max(0.0) as usize).min(last)
        };
        &self.values[nearest..=nearest]
    }

    pub fn max_db(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Frames as "frame_time_seconds<TAB>db_value" lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("frame_time_seconds\tdb_value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{:.3}\t{:.4}\n", self.frame_time(i), v));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveParams {
    /// Window length at 44.1 kHz; scaled for other rates.
    pub window_samples_44k: usize,
    pub hop_seconds: f64,
    pub floor_db: f64,
}

impl Default for CurveParams {
    fn default() -> Self {
        CurveParams {
            window_samples_44k: DEFAULT_WINDOW_SAMPLES_44K,
            hop_seconds: DEFAULT_HOP_SECONDS,
            floor_db: DEFAULT_FLOOR_DB,
        }
    }
}

/// Equal-loudness filter, RMS and dB conversion for one stem. Values are
/// dBFS, not yet group-normalized.
pub fn stem_curve(clip: &AudioClip, params: &CurveParams) -> Result<LoudnessCurve, AudioError> {
    let filtered = equal_loudness_filter(clip)?;
    let rate = clip.sample_rate();
    let window = window_samples_for_rate(params.window_samples_44k, rate);
    let rms = rms_curve(&filtered, window, params.hop_seconds)?;
    Ok(LoudnessCurve {
        values: to_decibels(&rms, params.floor_db),
        hop_seconds: hop_samples_for_rate(params.hop_seconds, rate) as f64 / f64::from(rate),
        window_seconds: window as f64 / f64::from(rate),
        floor_db: params.floor_db,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveGroup {
    pub curves: BTreeMap<StemClass, LoudnessCurve>,
    pub normalization_reference_db: f64,
}

impl CurveGroup {
    pub fn get(&self, stem: StemClass) -> Option<&LoudnessCurve> {
        self.curves.get(&stem)
    }

    /// Lowest value over every frame of every curve.
    pub fn min_db(&self) -> f64 {
        self.curves
            .values()
            .flat_map(|c| c.values.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_db(&self) -> f64 {
        self.curves.values().map(LoudnessCurve::max_db).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Longest curve extent in seconds.
    pub fn duration_seconds(&self) -> f64 {
        self.curves.values().map(LoudnessCurve::duration_seconds).fold(0.0, f64::max)
    }
}

/// Subtract one reference from every curve: `reference_db` when given, else
/// the group's loudest frame. Frames at the floor stay at the floor.
pub fn normalize_group(
    curves: BTreeMap<StemClass, LoudnessCurve>,
    reference_db: Option<f64>,
) -> Result<CurveGroup, LoudnessError> {
    let first = curves.values().next().ok_or(LoudnessError::NoCurves)?;
    let (hop, window) = (first.hop_seconds, first.window_seconds);
    if curves
        .values()
        .any(|c| (c.hop_seconds - hop).abs() > TIME_EPSILON || (c.window_seconds - window).abs() > TIME_EPSILON)
    {
        return Err(LoudnessError::InconsistentCurves);
    }

    let reference = match reference_db {
        Some(r) => r,
        None => {
            let peak = curves
                .values()
                .flat_map(|c| c.values.iter().filter(|&&v| v > c.floor_db).copied())
                .fold(f64::NEG_INFINITY, f64::max);
            if peak == f64::NEG_INFINITY {
                return Err(LoudnessError::AllCurvesAtFloor);
            }
            peak
        }
    };

    let curves = curves
        .into_iter()
        .map(|(stem, mut curve)| {
            let floor = curve.floor_db;
            for v in &mut curve.values {
                if *v > floor {
                    *v = (*v - reference).max(floor);
                }
            }
            (stem, curve)
        })
        .collect();
    Ok(CurveGroup {
        curves,
        normalization_reference_db: reference,
    })
}
