//! Synthetic drum stems rendered from a known score.
//!
//! Each hit is a decaying burst of filtered noise with an optional sine
//! component, peak-normalized and scaled by `velocity / 127`. The rendered
//! stems stand in for a separation model's output, so the whole refinement
//! pipeline can be checked against the score that produced them.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio_io::{AudioClip, StemSet};
use crate::events::{self, DrumClass7, EventsError, NoteEvent, StemClass};

/// Silence appended after the last event when a score has no explicit length.
pub const DEFAULT_TAIL_SECONDS: f64 = 3.0;

/// Fade applied when a choked burst is cut off.
const CHOKE_FADE_SECONDS: f64 = 0.001;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no instrument model for {0}")]
    MissingModel(DrumClass7),
    #[error("invalid score: {0}")]
    InvalidScore(String),
    #[error(transparent)]
    Events(#[from] EventsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentModel {
    pub class7: DrumClass7,
    /// Amplitude envelope time constant, `exp(-t / decay_tau)`.
    pub decay_tau: f64,
    /// Band-pass center of the noise; 0 leaves it broadband.
    pub center_hz: f64,
    pub bandwidth_q: f64,
    /// Sine component frequency; 0 disables it.
    pub tone_hz: f64,
    /// Share of the sine in the excitation, 0..=1.
    pub tone_mix: f64,
    pub burst_seconds: f64,
    /// A later hit on the same stem cuts this burst off (hi-hat pedal).
    pub choke: bool,
}

pub type ModelSet = BTreeMap<DrumClass7, InstrumentModel>;

/// Default kit. Hi-hat decay constants sit on either side of the open/closed
/// boundary: `exp(-0.15 / 0.6) ~ 0.78` and `exp(-0.15 / 0.05) ~ 0.05`
/// against the 0.75 sustain ratio.
///
/// Every class is tone-dominated with its tone between 250 Hz and 1.2 kHz,
/// where the equal-loudness weighting is flat to within about 0.6 dB, so
/// loudness tracks velocity the same way across stems.
pub fn default_models() -> ModelSet {
    let model = |class7, decay_tau, center_hz, bandwidth_q, tone_hz, tone_mix, burst_seconds, choke| InstrumentModel {
        class7,
        decay_tau,
        center_hz,
        bandwidth_q,
        tone_hz,
        tone_mix,
        burst_seconds,
        choke,
    };
    [
        model(DrumClass7::Kick, 0.12, 0.0, 0.7, 250.0, 0.85, 1.0, false),
        model(DrumClass7::Snare, 0.10, 0.0, 0.7, 450.0, 0.85, 1.0, false),
        model(DrumClass7::Toms, 0.20, 0.0, 0.7, 300.0, 0.85, 1.5, false),
        model(DrumClass7::HiHatClosed, 0.05, 7000.0, 0.8, 1000.0, 0.85, 0.5, true),
        model(DrumClass7::HiHatOpen, 0.60, 7000.0, 0.8, 1000.0, 0.85, 1.5, true),
        model(DrumClass7::Crash, 1.20, 6000.0, 0.6, 800.0, 0.85, 3.0, false),
        model(DrumClass7::Ride, 0.50, 6500.0, 0.9, 1200.0, 0.85, 1.5, false),
    ]
    .into_iter()
    .map(|m| (m.class7, m))
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    events: Vec<NoteEvent>,
    duration: f64,
    sample_rate: u32,
}

impl Score {
    pub fn new(mut events: Vec<NoteEvent>, duration: f64, sample_rate: u32) -> Result<Self, SynthError> {
        if sample_rate == 0 || !(duration > 0.0 && duration.is_finite()) {
            return Err(SynthError::InvalidScore("duration and sample rate must be positive".into()));
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        if let Some(late) = events.iter().find(|e| e.time >= duration) {
            return Err(SynthError::InvalidScore(format!(
                "event at {:.3} s is past the {duration:.3} s duration",
                late.time
            )));
        }
        Ok(Score {
            events,
            duration,
            sample_rate,
        })
    }

    /// Score from the 7-class note TSV. Without an explicit duration the
    /// score ends `DEFAULT_TAIL_SECONDS` after its last event.
    pub fn from_tsv(text: &str, sample_rate: u32, duration: Option<f64>) -> Result<Self, SynthError> {
        let events = events::read_tsv(text)?;
        let duration = duration.unwrap_or_else(|| events.last().map_or(0.0, |e| e.time) + DEFAULT_TAIL_SECONDS);
        Score::new(events, duration, sample_rate)
    }

    pub fn events(&self) -> &[NoteEvent] {
        &self.events
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    fn len_samples(&self) -> usize {
        (self.duration * f64::from(self.sample_rate)).round() as usize
    }
}

/// RBJ band-pass biquad with 0 dB peak gain.
fn bandpass(x: &mut [f64], center_hz: f64, q: f64, sample_rate: f64) {
    let w0 = 2.0 * PI * center_hz / sample_rate;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for s in x.iter_mut() {
        let y = b0 * *s + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = *s;
        y2 = y1;
        y1 = y;
        *s = y;
    }
}

/// One hit, peak-normalized to `velocity / 127`.
fn render_burst(model: &InstrumentModel, velocity: u8, len: usize, sample_rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = f64::from(sample_rate);
    let mut noise: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    if model.center_hz > 0.0 {
        bandpass(&mut noise, model.center_hz, model.bandwidth_q, fs);
    }
    let noise_peak = noise.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let noise_gain = if noise_peak > 0.0 { 1.0 / noise_peak } else { 0.0 };
    let mix = if model.tone_hz > 0.0 { model.tone_mix.clamp(0.0, 1.0) } else { 0.0 };

    let mut burst: Vec<f64> = noise
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let t = i as f64 / fs;
            let tone = if mix > 0.0 { (2.0 * PI * model.tone_hz * t).sin() } else { 0.0 };
            let excitation = (1.0 - mix) * n * noise_gain + mix * tone;
            excitation * (-t / model.decay_tau).exp()
        })
        .collect();
    let peak = burst.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let scale = f64::from(velocity) / 127.0 / peak;
        burst.iter_mut().for_each(|s| *s *= scale);
    }
    burst
}

/// Render one stem. Events whose class belongs to another stem are ignored.
pub fn render_stem(score: &Score, stem: StemClass, models: &ModelSet, seed: u64) -> Result<AudioClip, SynthError> {
    let rate = score.sample_rate;
    let fs = f64::from(rate);
    let total = score.len_samples();
    let mut out = vec![0.0; total];
    let hits: Vec<(usize, &NoteEvent)> = score
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.class7.stem() == stem)
        .collect();

    for (k, &(index, event)) in hits.iter().enumerate() {
        let model = models.get(&event.class7).ok_or(SynthError::MissingModel(event.class7))?;
        let start = (event.time * fs).round() as usize;
        if start >= total {
            continue;
        }
        let mut len = ((model.burst_seconds * fs).round() as usize).min(total - start);
        let mut fade = 0;
        if model.choke {
            if let Some((_, next)) = hits.get(k + 1) {
                let next_start = (next.time * fs).round() as usize;
                if next_start < start + len {
                    len = next_start.saturating_sub(start);
                    fade = ((CHOKE_FADE_SECONDS * fs) as usize).min(len);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let mut burst = render_burst(model, event.velocity, len, rate, &mut rng);
        for i in 0..fade {
            burst[len - 1 - i] *= i as f64 / fade as f64;
        }
        for (o, b) in out[start..start + len].iter_mut().zip(&burst) {
            *o += b;
        }
    }
    Ok(AudioClip::new(out, rate).expect("rendered samples are finite"))
}

/// All six stems plus the score's notes as reference.
pub fn render_session(score: &Score, models: &ModelSet, seed: u64) -> Result<(StemSet, Vec<NoteEvent>), SynthError> {
    let mut clips = BTreeMap::new();
    for stem in StemClass::ALL {
        clips.insert(stem, render_stem(score, stem, models, seed)?);
    }
    let stems = StemSet::new(clips).expect("all six stems rendered");
    Ok((stems, score.events.clone()))
}

/// Random score for oracle runs: events cycle through every class with
/// velocities uniform in `velocity_range`, onsets at least `min_gap` apart
/// and crash hits at least `min_crash_gap` apart. The default crash gap
/// matches the crash burst length: a quiet crash inside a loud one's tail
/// rises by less than the peak prominence threshold.
#[derive(Debug, Clone)]
pub struct ScoreRecipe {
    pub duration: f64,
    pub event_count: usize,
    pub min_gap: f64,
    pub min_crash_gap: f64,
    pub velocity_range: (u8, u8),
    pub sample_rate: u32,
}

impl Default for ScoreRecipe {
    fn default() -> Self {
        ScoreRecipe {
            duration: 60.0,
            event_count: 240,
            min_gap: 0.120,
            min_crash_gap: 3.0,
            velocity_range: (20, 127),
            sample_rate: 44_100,
        }
    }
}

/// Draw a random score. Onset times are on a millisecond grid so the score
/// survives a TSV round trip unchanged. The last `DEFAULT_TAIL_SECONDS` of
/// the duration are left empty.
pub fn random_score(recipe: &ScoreRecipe, seed: u64) -> Result<Score, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let usable = recipe.duration - DEFAULT_TAIL_SECONDS;
    let slot = usable / recipe.event_count as f64;
    if slot < recipe.min_gap {
        return Err(SynthError::InvalidScore("too many events for the duration".into()));
    }
    // leave 1 ms for rounding onto the millisecond grid
    let jitter = (slot - recipe.min_gap - 0.001).max(0.0);
    let mut events = Vec::with_capacity(recipe.event_count);
    let mut last_crash = f64::NEG_INFINITY;
    let non_crash: Vec<DrumClass7> = DrumClass7::ALL.into_iter().filter(|c| *c != DrumClass7::Crash).collect();
    for i in 0..recipe.event_count {
        // offsets within a slot stay in [0, jitter], so neighbors are >= min_gap apart
        let t = i as f64 * slot + rng.gen_range(0.0..=jitter);
        let time = (t * 1000.0).ceil() / 1000.0;
        let class7 = if time - last_crash >= recipe.min_crash_gap && rng.gen_bool(0.5) {
            last_crash = time;
            DrumClass7::Crash
        } else {
            non_crash[rng.gen_range(0..non_crash.len())]
        };
        let velocity = rng.gen_range(recipe.velocity_range.0..=recipe.velocity_range.1);
        events.push(NoteEvent { time, class7, velocity });
    }
    Score::new(events, recipe.duration, recipe.sample_rate)
}
