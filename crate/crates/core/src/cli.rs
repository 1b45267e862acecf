//! Command-line front end.
//!
//! Exit codes: 0 success, 1 data error (unreadable or invalid input), 2
//! usage or configuration error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::audio_io::{self, ReplayGainConfig, StemSet, WavEncoding};
use crate::evaluation::{self, EvalEvent, Vocabulary};
use crate::events::{self, DrumClass7, NoteEvent, OnsetEvent, StemClass};
use crate::fsutil;
use crate::refine::{self, RefinementConfig};
use crate::synth::{self, Score};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "drumvel", version, about = "Refine drum transcriptions with separated stems")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Expand a 5-class transcription to 7 classes with velocities.
    Refine(RefineArgs),
    /// Score an estimated transcription against a reference.
    Eval(EvalArgs),
    /// Render synthetic stems and reference files from a score.
    Synth(SynthArgs),
    /// Print the ReplayGain track gain of a WAV file.
    Gain(GainArgs),
    /// Per-class velocity histograms as CSV.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct RefineArgs {
    /// Directory holding kick.wav, snare.wav, toms.wav, hihat.wav, crash.wav, ride.wav.
    #[arg(long, value_name = "DIR")]
    stems: PathBuf,
    /// 5-class onsets, .mid/.midi or TSV.
    #[arg(long, value_name = "FILE")]
    onsets: PathBuf,
    /// Output MIDI file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Config file with `key = value` lines.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Normalize against this level instead of the group peak.
    #[arg(long, value_name = "DB", allow_negative_numbers = true)]
    reference_db: Option<f64>,
    /// Also write the notes as TSV next to the MIDI file.
    #[arg(long)]
    tsv: bool,
    /// Override a stem file name, e.g. `ride=ride_mix.wav`; repeatable.
    #[arg(long = "stem-map", value_name = "STEM=FILE")]
    stem_map: Vec<String>,
    /// Write each stem's normalized loudness curve as TSV into this directory.
    #[arg(long, value_name = "DIR")]
    dump_curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long = "ref", value_name = "FILE")]
    reference: PathBuf,
    #[arg(long = "est", value_name = "FILE")]
    estimate: PathBuf,
    /// Class vocabulary: 5, 7 or 8.
    #[arg(long, value_parser = parse_vocabulary, default_value = "5")]
    classes: Vocabulary,
    /// Matching tolerance in seconds.
    #[arg(long, default_value_t = evaluation::DEFAULT_TOLERANCE_SECONDS)]
    tolerance: f64,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Score TSV: time, 7-class label, velocity.
    #[arg(long, value_name = "FILE")]
    score: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Length in seconds; defaults to 3 s past the last event.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, default_value_t = 44_100)]
    sample_rate: u32,
}

#[derive(Debug, Args)]
struct GainArgs {
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Write the gain-adjusted audio (32-bit float WAV).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Refined notes, TSV or MIDI.
    #[arg(long, value_name = "FILE")]
    notes: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

fn parse_vocabulary(s: &str) -> Result<Vocabulary, String> {
    s.parse::<u8>()
        .ok()
        .and_then(Vocabulary::from_size)
        .ok_or_else(|| format!("expected 5, 7 or 8, got {s:?}"))
}

#[derive(Debug)]
enum Failure {
    Data(String),
    Usage(String),
}

impl Failure {
    fn data(e: impl std::fmt::Display) -> Self {
        Failure::Data(e.to_string())
    }
    fn usage(e: impl std::fmt::Display) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// Parse `args` (including the program name) and run the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
            } else {
                let _ = write!(out, "{rendered}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Refine(a) => cmd_refine(&a, out, err),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Gain(a) => cmd_gain(&a, out, err),
        Command::Stats(a) => cmd_stats(&a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Data(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_DATA
        }
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn is_midi(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("mid" | "midi")
    )
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    fsutil::write_atomic(path, bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn build_config(args: &RefineArgs) -> Result<RefinementConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            RefinementConfig::from_config_text(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => RefinementConfig::default(),
    };
    for entry in &args.overrides {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {entry:?}")))?;
        cfg.set(key.trim(), value.trim()).map_err(Failure::usage)?;
    }
    if let Some(r) = args.reference_db {
        cfg.reference_db = Some(r);
    }
    cfg.validate().map_err(Failure::usage)?;
    Ok(cfg)
}

fn parse_stem_map(entries: &[String]) -> Result<BTreeMap<StemClass, String>, Failure> {
    entries
        .iter()
        .map(|entry| {
            let (stem, file) = entry
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--stem-map expects STEM=FILE, got {entry:?}")))?;
            let stem = StemClass::from_name(stem.trim())
                .ok_or_else(|| Failure::Usage(format!("unknown stem {stem:?}")))?;
            Ok((stem, file.trim().to_string()))
        })
        .collect()
}

fn read_onsets(path: &Path, err: &mut dyn Write) -> Result<Vec<OnsetEvent>, Failure> {
    if is_midi(path) {
        let parsed = events::parse_onsets_midi(&read_bytes(path)?)
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        if parsed.skipped > 0 {
            let _ = writeln!(err, "warning: skipped {} notes outside the 5-class map", parsed.skipped);
        }
        Ok(parsed.onsets)
    } else {
        events::parse_onsets_tsv(&read_text(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
    }
}

fn cmd_refine(args: &RefineArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let cfg = build_config(args)?;
    let names = parse_stem_map(&args.stem_map)?;
    let stems = StemSet::load_dir(&args.stems, &names).map_err(Failure::data)?;
    let onsets = read_onsets(&args.onsets, err)?;

    let refinement = refine::refine_transcription(&onsets, &stems, &cfg).map_err(Failure::data)?;
    for w in &refinement.warnings {
        let _ = writeln!(err, "warning: {w}");
    }

    if let Some(dir) = &args.dump_curves {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
        for (stem, curve) in &refinement.group.curves {
            write_file(&dir.join(format!("{}.tsv", stem.name())), curve.to_tsv().as_bytes())?;
        }
    }

    events::write_midi(&refinement.notes, &args.out)
        .map_err(|e| Failure::Data(format!("{}: {e}", args.out.display())))?;
    if args.tsv {
        write_file(&args.out.with_extension("tsv"), events::write_tsv(&refinement.notes).as_bytes())?;
    }

    let _ = writeln!(
        out,
        "{} onsets in, {} notes out ({} dropped at velocity 0)",
        onsets.len(),
        refinement.notes.len(),
        refinement.dropped
    );
    for class in DrumClass7::ALL {
        let count = refinement.notes.iter().filter(|n| n.class7 == class).count();
        let _ = writeln!(out, "{:<4} {count}", class.label());
    }
    Ok(())
}

fn read_eval_events(path: &Path, err: &mut dyn Write) -> Result<Vec<EvalEvent>, Failure> {
    let result = if is_midi(path) {
        evaluation::eval_events_from_midi(&read_bytes(path)?).map(|(events, skipped)| {
            if skipped > 0 {
                let _ = writeln!(err, "warning: {}: skipped {skipped} unmapped notes", path.display());
            }
            events
        })
    } else {
        evaluation::parse_eval_tsv(&read_text(path)?)
    };
    result.map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CmdResult {
    if !(args.tolerance > 0.0) {
        return Err(Failure::Usage("--tolerance must be positive".into()));
    }
    let mut warnings = Vec::new();
    let reference = read_eval_events(&args.reference, &mut warnings)?;
    let estimate = read_eval_events(&args.estimate, &mut warnings)?;
    let report = evaluation::evaluate(&reference, &estimate, args.classes, args.tolerance).map_err(Failure::data)?;
    let _ = out.write_all(&warnings);
    if args.json {
        let _ = writeln!(out, "{}", report.to_json());
    } else {
        let _ = write!(out, "{}", report.to_table());
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> CmdResult {
    let text = read_text(&args.score)?;
    let score = Score::from_tsv(&text, args.sample_rate, args.duration)
        .map_err(|e| Failure::Data(format!("{}: {e}", args.score.display())))?;
    let (stems, reference) = synth::render_session(&score, &synth::default_models(), args.seed).map_err(Failure::data)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Failure::Data(format!("{}: {e}", args.out.display())))?;
    stems.write_dir(&args.out, WavEncoding::Pcm16).map_err(Failure::data)?;
    events::write_midi(&reference, &args.out.join("reference.mid")).map_err(Failure::data)?;
    write_file(&args.out.join("reference.tsv"), events::write_tsv(&reference).as_bytes())?;
    let _ = writeln!(
        out,
        "rendered {} events, {:.3} s at {} Hz into {}",
        reference.len(),
        score.duration(),
        score.sample_rate(),
        args.out.display()
    );
    Ok(())
}

fn cmd_gain(args: &GainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let clip = audio_io::load_wav(&args.input).map_err(Failure::data)?;
    let rg = audio_io::replaygain_normalize(&clip, &ReplayGainConfig::default()).map_err(Failure::data)?;
    if rg.silent {
        let _ = writeln!(err, "warning: {} is silent; gain left at 0 dB", args.input.display());
    }
    let _ = writeln!(out, "{:.2} dB", rg.gain_db);
    if let Some(path) = &args.out {
        audio_io::write_wav(path, &rg.clip, WavEncoding::Float32).map_err(Failure::data)?;
    }
    Ok(())
}

/// CSV with a `class` column and one column per velocity 0..=127; one row per
/// class present in `notes`.
pub fn velocity_histogram_csv(notes: &[NoteEvent]) -> String {
    let mut csv = String::from("class");
    for v in 0..128 {
        csv.push_str(&format!(",{v}"));
    }
    csv.push('\n');
    for class in DrumClass7::ALL {
        let mut bins = [0usize; 128];
        let mut any = false;
        for n in notes.iter().filter(|n| n.class7 == class) {
            bins[usize::from(n.velocity.min(127))] += 1;
            any = true;
        }
        if !any {
            continue;
        }
        csv.push_str(class.label());
        for b in bins {
            csv.push_str(&format!(",{b}"));
        }
        csv.push('\n');
    }
    csv
}

fn cmd_stats(args: &StatsArgs, out: &mut dyn Write) -> CmdResult {
    let notes: Vec<NoteEvent> = if is_midi(&args.notes) {
        events::read_midi_notes(&read_bytes(&args.notes)?)
            .map_err(|e| Failure::Data(format!("{}: {e}", args.notes.display())))?
            .into_iter()
            .filter_map(|n| {
                DrumClass7::from_midi_note(n.key).map(|class7| NoteEvent {
                    time: n.time,
                    class7,
                    velocity: n.velocity,
                })
            })
            .collect()
    } else {
        events::read_tsv(&read_text(&args.notes)?).map_err(|e| Failure::Data(format!("{}: {e}", args.notes.display())))?
    };
    write_file(&args.out, velocity_histogram_csv(&notes).as_bytes())?;
    let _ = writeln!(out, "{} notes binned into {}", notes.len(), args.out.display());
    Ok(())
}
