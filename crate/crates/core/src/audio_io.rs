//! WAV ingestion, stem sets and ReplayGain level normalization.

use std::collections::BTreeMap;
use std::io::{self, Cursor, Read, Seek};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::events::StemClass;
use crate::fsutil;
use crate::loudness;

/// Sample rates with embedded equal-loudness coefficient tables.
pub const SUPPORTED_SAMPLE_RATES: [u32; 2] = [44_100, 48_000];

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),
    #[error("unsupported sample rate {0} Hz (supported: 44100, 48000)")]
    UnsupportedSampleRate(u32),
    #[error("audio clip is empty")]
    EmptyClip,
    #[error("invalid audio clip: {0}")]
    InvalidClip(String),
    #[error("missing stem {stem}: {source}")]
    MissingStem {
        stem: StemClass,
        #[source]
        source: Box<AudioError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Mono sample buffer, nominal full scale ±1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidClip("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidClip(format!("non-finite sample at index {i}")));
        }
        Ok(AudioClip { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        AudioClip {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Multiply every sample by a linear gain.
    pub fn scaled(&self, gain: f64) -> AudioClip {
        AudioClip {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> AudioClip {
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(e) if matches!(e.kind(), io::ErrorKind::UnexpectedEof | io::ErrorKind::Other) => {
            AudioError::CorruptHeader("unexpected end of file".into())
        }
        hound::Error::IoError(e) => AudioError::Io(e),
        hound::Error::FormatError(msg) => AudioError::CorruptHeader(msg.to_string()),
        hound::Error::TooWide => AudioError::UnsupportedFormat("sample width too large".into()),
        hound::Error::UnfinishedSample => AudioError::CorruptHeader("data chunk ends mid-sample".into()),
        hound::Error::Unsupported => AudioError::UnsupportedFormat("unsupported WAV encoding".into()),
        hound::Error::InvalidSampleFormat => AudioError::UnsupportedFormat("invalid sample format".into()),
    }
}

/// Decode RIFF/WAVE data: PCM 16/24/32-bit integer or 32-bit float, mono or
/// stereo. Stereo is averaged per frame.
pub fn decode_wav<R: Read>(reader: R) -> Result<AudioClip, AudioError> {
    let reader = hound::WavReader::new(reader).map_err(map_hound)?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if !(1..=2).contains(&channels) {
        return Err(AudioError::UnsupportedFormat(format!("{channels} channels")));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<Result<_, _>>()
                .map_err(map_hound)?
        }
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (format, bits) => {
            return Err(AudioError::UnsupportedFormat(format!("{bits}-bit {format:?}")));
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|frame| (frame[0] + frame[1]) / 2.0)
            .collect()
    };
    AudioClip::new(samples, spec.sample_rate)
}

pub fn load_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => AudioError::FileNotFound(path.to_path_buf()),
        _ => AudioError::Io(e),
    })?;
    decode_wav(io::BufReader::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Encode a mono clip. 16-bit output is clamped to full scale.
pub fn encode_wav(clip: &AudioClip, encoding: WavEncoding) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut cursor = Cursor::new(Vec::new());
    write_samples(&mut cursor, spec, clip, encoding).expect("in-memory WAV encoding cannot fail");
    cursor.into_inner()
}

fn write_samples<W: io::Write + Seek>(
    out: W,
    spec: hound::WavSpec,
    clip: &AudioClip,
    encoding: WavEncoding,
) -> Result<(), hound::Error> {
    let mut writer = hound::WavWriter::new(out, spec)?;
    for &s in &clip.samples {
        match encoding {
            WavEncoding::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v)?;
            }
            WavEncoding::Float32 => writer.write_sample(s as f32)?,
        }
    }
    writer.finalize()
}

pub fn write_wav(path: &Path, clip: &AudioClip, encoding: WavEncoding) -> Result<(), AudioError> {
    fsutil::write_atomic(path, &encode_wav(clip, encoding))?;
    Ok(())
}

/// The six separated stems of one performance.
#[derive(Debug, Clone, PartialEq)]
pub struct StemSet {
    clips: BTreeMap<StemClass, AudioClip>,
}

impl StemSet {
    /// Requires exactly one clip per stem class.
    pub fn new(clips: BTreeMap<StemClass, AudioClip>) -> Result<Self, AudioError> {
        for stem in StemClass::ALL {
            if !clips.contains_key(&stem) {
                return Err(AudioError::MissingStem {
                    stem,
                    source: Box::new(AudioError::EmptyClip),
                });
            }
        }
        Ok(StemSet { clips })
    }

    /// Load `<dir>/<name>.wav` for every stem; `file_names` overrides
    /// individual file names.
    pub fn load_dir(dir: &Path, file_names: &BTreeMap<StemClass, String>) -> Result<Self, AudioError> {
        let mut clips = BTreeMap::new();
        for stem in StemClass::ALL {
            let name = file_names.get(&stem).cloned().unwrap_or_else(|| stem.file_name());
            let clip = load_wav(&dir.join(name)).map_err(|e| AudioError::MissingStem {
                stem,
                source: Box::new(e),
            })?;
            clips.insert(stem, clip);
        }
        Ok(StemSet { clips })
    }

    pub fn get(&self, stem: StemClass) -> &AudioClip {
        &self.clips[&stem]
    }

    pub fn iter(&self) -> impl Iterator<Item = (StemClass, &AudioClip)> {
        self.clips.iter().map(|(k, v)| (*k, v))
    }

    /// Apply one linear gain to all stems.
    pub fn scaled(&self, gain: f64) -> StemSet {
        StemSet {
            clips: self.clips.iter().map(|(k, c)| (*k, c.scaled(gain))).collect(),
        }
    }

    pub fn write_dir(&self, dir: &Path, encoding: WavEncoding) -> Result<(), AudioError> {
        for (stem, clip) in &self.clips {
            write_wav(&dir.join(stem.file_name()), clip, encoding)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayGainConfig {
    /// Level of the pink-noise reference in dB relative to a 16-bit integer
    /// full-scale unit squared. A signal measuring this loud gets 0 dB gain.
    pub reference_db: f64,
    pub block_seconds: f64,
    pub percentile: f64,
    /// Representative loudness (dBFS) at or below which a clip is treated as silent.
    pub silence_floor_db: f64,
}

impl Default for ReplayGainConfig {
    fn default() -> Self {
        ReplayGainConfig {
            reference_db: 64.82,
            block_seconds: 0.050,
            percentile: 0.95,
            silence_floor_db: loudness::DEFAULT_FLOOR_DB,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayGain {
    pub clip: AudioClip,
    pub gain_db: f64,
    /// Set when the clip is silent; the gain is then 0 dB.
    pub silent: bool,
}

/// Offset from dB relative to ±1.0 full scale to dB relative to one
/// 16-bit integer step, the unit of the ReplayGain reference level.
fn int16_offset_db() -> f64 {
    20.0 * 32768f64.log10()
}

/// Representative (percentile) block loudness of a clip in dBFS.
pub fn replaygain_loudness(clip: &AudioClip, cfg: &ReplayGainConfig) -> Result<f64, AudioError> {
    if clip.is_empty() {
        return Err(AudioError::EmptyClip);
    }
    let filtered = loudness::equal_loudness_filter(clip)?;
    let block = ((cfg.block_seconds * f64::from(clip.sample_rate())).round() as usize).max(1);
    let samples = filtered.samples();
    let mut levels: Vec<f64> = if samples.len() < block {
        vec![mean_square(samples)]
    } else {
        samples.chunks_exact(block).map(mean_square).collect()
    }
    .into_iter()
    .map(|ms| if ms > 0.0 { 10.0 * ms.log10() } else { f64::NEG_INFINITY })
    .collect();
    levels.sort_by(f64::total_cmp);
    // nearest rank counted down from the loudest block
    let n = levels.len();
    let from_top = ((n as f64) * (1.0 - cfg.percentile)).ceil().max(1.0) as usize;
    Ok(levels[n - from_top.min(n)])
}

fn mean_square(block: &[f64]) -> f64 {
    block.iter().map(|s| s * s).sum::<f64>() / block.len() as f64
}

/// ReplayGain track gain, applied to the clip.
pub fn replaygain_normalize(clip: &AudioClip, cfg: &ReplayGainConfig) -> Result<ReplayGain, AudioError> {
    let representative = replaygain_loudness(clip, cfg)?;
    if representative <= cfg.silence_floor_db {
        return Ok(ReplayGain {
            clip: clip.clone(),
            gain_db: 0.0,
            silent: true,
        });
    }
    let gain_db = cfg.reference_db - (representative + int16_offset_db());
    Ok(ReplayGain {
        clip: clip.scaled(10f64.powf(gain_db / 20.0)),
        gain_db,
        silent: false,
    })
}
