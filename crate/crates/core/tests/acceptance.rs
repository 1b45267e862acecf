//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drumvel::audio_io::{self, AudioClip, ReplayGainConfig, StemSet, WavEncoding};
use drumvel::evaluation::{self, match_onsets, prf, EvalEvent, Vocabulary};
use drumvel::events::{self, DrumClass5, DrumClass7, NoteEvent, OnsetEvent, StemClass};
use drumvel::loudness;
use drumvel::refine::{self, RefinementConfig};
use drumvel::synth::{self, ModelSet, Score, ScoreRecipe};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = drumvel::cli::run(std::iter::once("drumvel").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&err).into_owned())
}

fn cli_ok(args: &[&str]) -> Result<String, String> {
    match cli(args) {
        (0, out, _) => Ok(out),
        (code, _, err) => Err(format!("`{}` exited {code}: {}", args.join(" "), err.trim())),
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("temp paths are UTF-8")
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Velocity pairs of notes matched within each class at `tolerance`.
fn matched_velocities(reference: &[NoteEvent], estimate: &[NoteEvent], tolerance: f64) -> (Vec<f64>, Vec<f64>) {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for class in DrumClass7::ALL {
        let r: Vec<&NoteEvent> = reference.iter().filter(|n| n.class7 == class).collect();
        let e: Vec<&NoteEvent> = estimate.iter().filter(|n| n.class7 == class).collect();
        let rt: Vec<f64> = r.iter().map(|n| n.time).collect();
        let et: Vec<f64> = e.iter().map(|n| n.time).collect();
        for (i, j) in evaluation::match_pairs(&rt, &et, tolerance) {
            xs.push(f64::from(r[i].velocity));
            ys.push(f64::from(e[j].velocity));
        }
    }
    (xs, ys)
}

fn collapse_to_onsets_tsv(notes: &[NoteEvent]) -> String {
    notes
        .iter()
        .map(|n| format!("{:.3}\t{}\n", n.time, n.class7.project().label()))
        .collect()
}

fn score_constraint_violations(score: &Score) -> Vec<String> {
    let ev = score.events();
    let mut problems = Vec::new();
    if ev.len() < 200 {
        problems.push(format!("only {} events", ev.len()));
    }
    for class in DrumClass7::ALL {
        if !ev.iter().any(|n| n.class7 == class) {
            problems.push(format!("no {} events", class.label()));
        }
    }
    if ev.windows(2).any(|w| w[1].time - w[0].time < 0.120 - 1e-9) {
        problems.push("inter-onset gap below 120 ms".into());
    }
    let crashes: Vec<f64> = ev.iter().filter(|n| n.class7 == DrumClass7::Crash).map(|n| n.time).collect();
    if crashes.windows(2).any(|w| w[1] - w[0] < 2.0) {
        problems.push("crash events closer than 2 s".into());
    }
    if ev.iter().any(|n| !(20..=127).contains(&n.velocity)) {
        problems.push("velocity outside 20..=127".into());
    }
    problems
}

fn c1_oracle_end_to_end() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let score = synth::random_score(&ScoreRecipe::default(), 7).map_err(|e| e.to_string())?;
    let problems = score_constraint_violations(&score);
    if !problems.is_empty() {
        return Err(format!("score violates the recipe: {problems:?}"));
    }
    let score_path = dir.path().join("score.tsv");
    std::fs::write(&score_path, events::write_tsv(score.events())).map_err(|e| e.to_string())?;

    let stems_dir = dir.path().join("stems");
    cli_ok(&["synth", "--score", path_str(&score_path), "--out", path_str(&stems_dir), "--seed", "42", "--duration", "60"])?;

    let reference_tsv = stems_dir.join("reference.tsv");
    let reference = events::read_tsv(&std::fs::read_to_string(&reference_tsv).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let onsets_path = dir.path().join("onsets.tsv");
    std::fs::write(&onsets_path, collapse_to_onsets_tsv(&reference)).map_err(|e| e.to_string())?;

    let refined_mid = dir.path().join("refined.mid");
    cli_ok(&[
        "refine",
        "--stems",
        path_str(&stems_dir),
        "--onsets",
        path_str(&onsets_path),
        "--out",
        path_str(&refined_mid),
        "--tsv",
    ])?;
    let refined_tsv = refined_mid.with_extension("tsv");
    let json = cli_ok(&[
        "eval",
        "--ref",
        path_str(&reference_tsv),
        "--est",
        path_str(&refined_tsv),
        "--classes",
        "7",
        "--json",
    ])?;
    let elapsed = started.elapsed();

    let report: serde_json::Value = serde_json::from_str(&json).map_err(|e| e.to_string())?;
    let per_class = report["per_class"].as_array().ok_or("missing per_class")?;
    let mut worst_f = f64::INFINITY;
    let mut scores = Vec::new();
    for c in per_class {
        let f = c["f_measure"].as_f64().ok_or("missing f_measure")?;
        worst_f = worst_f.min(f);
        scores.push(format!("{}={f:.3}", c["class"].as_str().unwrap_or("?")));
    }
    let estimate = events::read_tsv(&std::fs::read_to_string(&refined_tsv).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let (xs, ys) = matched_velocities(&reference, &estimate, evaluation::DEFAULT_TOLERANCE_SECONDS);
    let r = pearson(&xs, &ys);
    check(
        per_class.len() == 7 && worst_f >= 0.95 && r >= 0.90 && elapsed < Duration::from_secs(30),
        format!(
            "{} events, F [{}], min F {worst_f:.3} (>= 0.95), Pearson r {r:.3} over {} matched (>= 0.90), {:.1} s (< 30 s)",
            reference.len(),
            scores.join(" "),
            xs.len(),
            elapsed.as_secs_f64()
        ),
    )
}

/// Not a gate: the same pipeline with crashes packed at the 2 s minimum.
fn info_tight_crashes() -> String {
    let recipe = ScoreRecipe {
        min_crash_gap: 2.0,
        ..ScoreRecipe::default()
    };
    let run = || -> Result<String, String> {
        let score = synth::random_score(&recipe, 7).map_err(|e| e.to_string())?;
        let (stems, reference) = synth::render_session(&score, &synth::default_models(), 42).map_err(|e| e.to_string())?;
        let onsets: Vec<OnsetEvent> = reference.iter().map(NoteEvent::onset).collect();
        let refined = refine::refine_transcription(&onsets, &stems, &RefinementConfig::default()).map_err(|e| e.to_string())?;
        let re: Vec<EvalEvent> = reference.iter().copied().map(Into::into).collect();
        let es: Vec<EvalEvent> = refined.notes.iter().copied().map(Into::into).collect();
        let report = evaluation::evaluate(&re, &es, Vocabulary::Seven, 0.05).map_err(|e| e.to_string())?;
        let (xs, ys) = matched_velocities(&reference, &refined.notes, 0.05);
        Ok(format!(
            "crash gaps >= 2 s: CR F {:.3}, RD F {:.3}, Pearson r {:.3}",
            report.class("CR").map_or(0.0, |c| c.f_measure),
            report.class("RD").map_or(0.0, |c| c.f_measure),
            pearson(&xs, &ys)
        ))
    };
    run().unwrap_or_else(|e| format!("crash gaps >= 2 s: error {e}"))
}

fn c2_gain_invariance() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let score = synth::random_score(&ScoreRecipe::default(), 11).map_err(|e| e.to_string())?;
    let (stems, reference) = synth::render_session(&score, &synth::default_models(), 42).map_err(|e| e.to_string())?;
    let onsets_path = dir.path().join("onsets.tsv");
    std::fs::write(&onsets_path, collapse_to_onsets_tsv(&reference)).map_err(|e| e.to_string())?;

    let refine_at = |gain_db: f64| -> Result<Vec<u8>, String> {
        let tag = format!("{gain_db:+}");
        let stem_dir = dir.path().join(format!("stems{tag}"));
        std::fs::create_dir_all(&stem_dir).map_err(|e| e.to_string())?;
        stems
            .scaled(10f64.powf(gain_db / 20.0))
            .write_dir(&stem_dir, WavEncoding::Float32)
            .map_err(|e| e.to_string())?;
        let out = dir.path().join(format!("refined{tag}.mid"));
        cli_ok(&["refine", "--stems", path_str(&stem_dir), "--onsets", path_str(&onsets_path), "--out", path_str(&out), "--tsv"])?;
        std::fs::read(out.with_extension("tsv")).map_err(|e| e.to_string())
    };
    let base = refine_at(0.0)?;
    let mut mismatched = Vec::new();
    for gain in [-12.0, -6.0, 6.0] {
        if refine_at(gain)? != base {
            mismatched.push(gain);
        }
    }
    let elapsed = started.elapsed();
    check(
        mismatched.is_empty() && elapsed < Duration::from_secs(30),
        format!(
            "{} notes; TSV differs at {mismatched:?} dB of [-12, -6, +6]; {:.1} s (< 30 s)",
            String::from_utf8_lossy(&base).lines().count(),
            elapsed.as_secs_f64()
        ),
    )
}

fn c3_hihat_threshold() -> Outcome {
    let boundary = 0.15 / (1.0f64 / 0.75).ln();
    let taus = [0.05, 0.40, 0.60, 1.00];
    let expected = [
        DrumClass7::HiHatClosed,
        DrumClass7::HiHatClosed,
        DrumClass7::HiHatOpen,
        DrumClass7::HiHatOpen,
    ];
    let mut got = Vec::new();
    for tau in taus {
        let mut models: ModelSet = synth::default_models();
        for class in [DrumClass7::HiHatClosed, DrumClass7::HiHatOpen] {
            models.get_mut(&class).expect("default hi-hat model").decay_tau = tau;
        }
        let score = Score::new(
            vec![NoteEvent {
                time: 1.0,
                class7: DrumClass7::HiHatOpen,
                velocity: 100,
            }],
            4.0,
            44_100,
        )
        .map_err(|e| e.to_string())?;
        let (stems, _) = synth::render_session(&score, &models, 3).map_err(|e| e.to_string())?;
        let onsets = [OnsetEvent {
            time: 1.0,
            class5: DrumClass5::HiHat,
        }];
        let refined = refine::refine_transcription(&onsets, &stems, &RefinementConfig::default()).map_err(|e| e.to_string())?;
        got.push(refined.notes.first().map(|n| n.class7));
    }
    let labels: Vec<&str> = got.iter().map(|c| c.map_or("none", DrumClass7::label)).collect();
    check(
        got.iter().zip(expected).all(|(g, e)| *g == Some(e)),
        format!("tau {taus:?} -> {labels:?} (expected HHC HHC HHO HHO, boundary tau* = {boundary:.3} s)"),
    )
}

fn c4_refraction() -> Outcome {
    let cfg = RefinementConfig::default();
    let crash = |time: f64, velocity: u8| NoteEvent {
        time,
        class7: DrumClass7::Crash,
        velocity,
    };
    let ride = |time: f64, velocity: u8| NoteEvent {
        time,
        class7: DrumClass7::Ride,
        velocity,
    };
    let onsets: Vec<OnsetEvent> = [2.0, 4.0, 9.5, 10.0]
        .iter()
        .map(|&time| OnsetEvent {
            time,
            class5: DrumClass5::Cymbals,
        })
        .collect();
    // The ride hit at 4.0 s (about -18.5 dB) is quieter than the crash tail
    // there (about -14.5 dB), so only refraction makes it Ride. 9.5 s is
    // outside refraction and the louder stem decides: variant A puts a ride
    // hit there, variant B a faint crash hit (-30 dB, below the peak
    // threshold) and no ride.
    let variants = [
        (
            "ride louder at 9.5",
            vec![crash(2.0, 127), ride(4.0, 15), ride(9.5, 90), crash(10.0, 127)],
            DrumClass7::Ride,
        ),
        (
            "crash louder at 9.5",
            vec![crash(2.0, 127), ride(4.0, 15), crash(9.5, 4), crash(10.0, 127)],
            DrumClass7::Crash,
        ),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    for (name, notes, at_9_5) in variants {
        let score = Score::new(notes, 16.0, 44_100).map_err(|e| e.to_string())?;
        let (stems, _) = synth::render_session(&score, &synth::default_models(), 5).map_err(|e| e.to_string())?;
        let refined = refine::refine_transcription(&onsets, &stems, &cfg).map_err(|e| e.to_string())?;
        let classes: Vec<DrumClass7> = refined.notes.iter().map(|n| n.class7).collect();
        let expected = [DrumClass7::Crash, DrumClass7::Ride, at_9_5, DrumClass7::Crash];
        let peaks_ok = refined.crash_peaks.len() == 2
            && (refined.crash_peaks[0] - 2.0).abs() <= cfg.peak_onset_grace_seconds
            && (refined.crash_peaks[1] - 10.0).abs() <= cfg.peak_onset_grace_seconds;
        let intervals = refined.refraction.intervals();
        let refraction_ok = intervals.len() == 2 && (intervals[0].1 - (refined.crash_peaks[1] - 1.0)).abs() < 1e-9;
        let window_max = |stem: StemClass| {
            let half = cfg.velocity_window_seconds / 2.0;
            let curve = refined.group.get(stem).expect("all stems present");
            curve.window(4.0 - half, 4.0 + half).iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let crash_louder_at_4 = window_max(StemClass::Crash) > window_max(StemClass::Ride);
        ok &= classes == expected && peaks_ok && refraction_ok && crash_louder_at_4;
        let labels: Vec<&str> = classes.iter().map(|c| c.label()).collect();
        details.push(format!(
            "{name}: peaks {:?} -> {labels:?}, crash louder at 4.0: {crash_louder_at_4}",
            refined.crash_peaks
        ));
    }
    check(ok, details.join("; "))
}

/// Maximum matching by trying every assignment.
fn exhaustive_matching(reference: &[f64], estimate: &[f64], tolerance: f64) -> usize {
    fn go(i: usize, reference: &[f64], estimate: &[f64], used: &mut [bool], tolerance: f64) -> usize {
        if i == reference.len() {
            return 0;
        }
        let mut best = go(i + 1, reference, estimate, used, tolerance);
        for j in 0..estimate.len() {
            if !used[j] && (estimate[j] - reference[i]).abs() <= tolerance {
                used[j] = true;
                best = best.max(1 + go(i + 1, reference, estimate, used, tolerance));
                used[j] = false;
            }
        }
        best
    }
    go(0, reference, estimate, &mut vec![false; estimate.len()], tolerance)
}

fn c5_matching_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut disagreements = 0;
    for _ in 0..1000 {
        // a 10 ms grid over 0.4 s makes collisions and exact-tolerance gaps common
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let n = rng.gen_range(0..=8);
            let mut v: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..40u32)) * 0.01).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let reference = draw(&mut rng);
        let estimate = draw(&mut rng);
        let counts = match_onsets(&reference, &estimate, 0.05);
        let best = exhaustive_matching(&reference, &estimate, 0.05);
        if counts.tp != best || counts.fp != estimate.len() - best || counts.fn_ != reference.len() - best {
            disagreements += 1;
        }
    }
    let elapsed = started.elapsed();
    check(
        disagreements == 0 && elapsed < Duration::from_secs(5),
        format!("{disagreements} disagreements in 1000 instances, {:.2} s (< 5 s)", elapsed.as_secs_f64()),
    )
}

fn c6_prf() -> Outcome {
    let (_, _, f_half) = prf(1, 0, 1);
    let perfect = prf(4, 0, 0);
    let empty = prf(0, 0, 0);
    let report = evaluation::evaluate(&[], &[], Vocabulary::Seven, 0.05).map_err(|e| e.to_string())?;
    check(
        (f_half - 0.6667).abs() <= 1e-4
            && perfect == (1.0, 1.0, 1.0)
            && empty == (0.0, 0.0, 0.0)
            && report.micro.f_measure == 0.0,
        format!("(1,0,1) F {f_half:.4}; perfect {perfect:?}; empty {empty:?}"),
    )
}

fn c7_dsp_closed_forms() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;

    let constant = AudioClip::new(vec![0.5; 44_100], 44_100).map_err(|e| e.to_string())?;
    let rms = loudness::rms_curve(&constant, 1024, 0.01).map_err(|e| e.to_string())?;
    let full = (44_100 - 1024) / 441 + 1;
    let constant_ok = rms[..full].iter().all(|&v| v == 0.5);
    ok &= constant_ok;
    details.push(format!("constant 0.5 exact on {full} full frames: {constant_ok}"));

    // 43 cycles per 1024-sample window
    let f = 43.0 * 44_100.0 / 1024.0;
    let sine: Vec<f64> = (0..44_100)
        .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 44_100.0).sin())
        .collect();
    let sine_rms = loudness::rms_curve(&AudioClip::new(sine, 44_100).map_err(|e| e.to_string())?, 1024, 0.01)
        .map_err(|e| e.to_string())?;
    let worst = sine_rms[..full]
        .iter()
        .map(|v| (v - std::f64::consts::FRAC_1_SQRT_2).abs())
        .fold(0.0, f64::max);
    ok &= worst <= 1e-3;
    details.push(format!("sine RMS max error {worst:.2e}"));

    let db = loudness::to_decibels(&[0.5], -96.0)[0];
    ok &= (db - (-6.0206)).abs() <= 1e-3;
    details.push(format!("dB(0.5) {db:.4}"));

    for rate in [44_100u32, 48_000] {
        let dc = AudioClip::new(vec![1.0; 2 * rate as usize], rate).map_err(|e| e.to_string())?;
        let filtered = loudness::equal_loudness_filter(&dc).map_err(|e| e.to_string())?;
        let residual = filtered.samples()[rate as usize..].iter().fold(0.0f64, |m, s| m.max(s.abs()));
        ok &= residual < 1e-3;
        details.push(format!("DC residual after 1 s @{rate} {residual:.1e}"));
    }
    check(ok, details.join("; "))
}

fn c8_replaygain_translation() -> Outcome {
    let cfg = ReplayGainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sine: Vec<f64> = (0..5 * 44_100)
        .map(|i| 0.3 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 44_100.0).sin())
        .collect();
    let noise: Vec<f64> = (0..5 * 48_000).map(|_| rng.gen_range(-0.2..0.2)).collect();
    let mut details = Vec::new();
    let mut ok = true;
    for (name, clip) in [
        ("sine", AudioClip::new(sine, 44_100)),
        ("noise", AudioClip::new(noise, 48_000)),
    ] {
        let clip = clip.map_err(|e| e.to_string())?;
        let g1 = audio_io::replaygain_normalize(&clip, &cfg).map_err(|e| e.to_string())?.gain_db;
        let g2 = audio_io::replaygain_normalize(&clip.scaled(2.0), &cfg).map_err(|e| e.to_string())?.gain_db;
        let shift = g2 - g1;
        ok &= (shift - (-6.02)).abs() <= 0.01;
        details.push(format!("{name}: {g1:.3} -> {g2:.3} dB, shift {shift:.4}"));
    }
    check(ok, details.join("; "))
}

fn c9_midi_round_trip() -> Outcome {
    let tick = 0.5 / 480.0;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = 0;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=64);
        let notes: Vec<NoteEvent> = (0..n)
            .map(|_| NoteEvent {
                time: rng.gen_range(0.0..30.0),
                class7: DrumClass7::ALL[rng.gen_range(0..7)],
                velocity: rng.gen_range(1..=127),
            })
            .collect();
        let parsed = match events::parse_onsets_midi(&events::encode_midi(&notes)) {
            Ok(p) => p,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let mut set_ok = parsed.skipped == 0 && parsed.onsets.len() == notes.len();
        for class in DrumClass5::ALL {
            let mut want: Vec<f64> = notes.iter().filter(|n| n.class7.project() == class).map(|n| n.time).collect();
            want.sort_by(f64::total_cmp);
            let got: Vec<f64> = parsed.onsets.iter().filter(|o| o.class5 == class).map(|o| o.time).collect();
            set_ok &= want.len() == got.len();
            for (w, g) in want.iter().zip(&got) {
                worst = worst.max((w - g).abs());
                set_ok &= (w - g).abs() <= tick + 1e-12;
            }
        }
        failures += usize::from(!set_ok);
    }
    check(
        failures == 0,
        format!("{failures} of 1000 note sets failed; max time error {:.3} ms (tick {:.3} ms)", worst * 1e3, tick * 1e3),
    )
}

fn c10_zero_velocity_omission() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rate = 44_100;
    let len = 4 * rate as usize;
    let burst = |at: f64, amplitude: f64, out: &mut Vec<f64>| {
        let start = (at * f64::from(rate)) as usize;
        for i in 0..rate as usize / 5 {
            let t = i as f64 / f64::from(rate);
            out[start + i] += amplitude * (2.0 * std::f64::consts::PI * 500.0 * t).sin() * (-t / 0.05).exp();
        }
    };
    let mut kick = vec![0.0; len];
    burst(1.0, 0.9, &mut kick);
    let mut snare = vec![0.0; len];
    // about -60 dB below the kick: under the -48 dB velocity floor
    burst(2.0, 0.0009, &mut snare);
    let clips: BTreeMap<StemClass, AudioClip> = StemClass::ALL
        .into_iter()
        .map(|stem| {
            let samples = match stem {
                StemClass::Kick => kick.clone(),
                StemClass::Snare => snare.clone(),
                _ => vec![0.0; len],
            };
            (stem, AudioClip::new(samples, rate).expect("finite samples"))
        })
        .collect();
    let stems = StemSet::new(clips).map_err(|e| e.to_string())?;
    let stem_dir = dir.path().join("stems");
    std::fs::create_dir_all(&stem_dir).map_err(|e| e.to_string())?;
    stems.write_dir(&stem_dir, WavEncoding::Float32).map_err(|e| e.to_string())?;
    // snare at 2.0 is below the floor, snare at 3.0 has nothing under it
    let onsets_path = dir.path().join("onsets.tsv");
    std::fs::write(&onsets_path, "1.0\tKD\n2.0\tSD\n3.0\tSD\n").map_err(|e| e.to_string())?;
    let out = dir.path().join("refined.mid");
    cli_ok(&["refine", "--stems", path_str(&stem_dir), "--onsets", path_str(&onsets_path), "--out", path_str(&out), "--tsv"])?;

    let midi = events::read_midi_notes(&std::fs::read(&out).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let tsv = std::fs::read_to_string(out.with_extension("tsv")).map_err(|e| e.to_string())?;
    let midi_ok = midi.len() == 1 && midi[0].key == 36 && midi.iter().all(|n| n.velocity > 0);
    let tsv_ok = tsv.lines().count() == 1 && tsv.starts_with("1.000\tKD\t");

    // a zero-velocity estimate is not a false positive
    let reference = [EvalEvent::from(NoteEvent {
        time: 1.0,
        class7: DrumClass7::Kick,
        velocity: 100,
    })];
    let estimate = [
        reference[0],
        EvalEvent::from(NoteEvent {
            time: 2.0,
            class7: DrumClass7::Snare,
            velocity: 0,
        }),
    ];
    let report = evaluation::evaluate(&reference, &estimate, Vocabulary::Seven, 0.05).map_err(|e| e.to_string())?;
    let eval_ok = report.micro.fp == 0 && report.micro.tp == 1;
    check(
        midi_ok && tsv_ok && eval_ok,
        format!(
            "MIDI notes {} (want 1 kick), TSV lines {}, eval micro tp {} fp {}",
            midi.len(),
            tsv.lines().count(),
            report.micro.tp,
            report.micro.fp
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle end-to-end", c1_oracle_end_to_end),
        ("gain invariance", c2_gain_invariance),
        ("hi-hat threshold", c3_hihat_threshold),
        ("refraction", c4_refraction),
        ("matching oracle", c5_matching_oracle),
        ("P/R/F arithmetic", c6_prf),
        ("DSP closed forms", c7_dsp_closed_forms),
        ("ReplayGain translation", c8_replaygain_translation),
        ("MIDI round trip", c9_midi_round_trip),
        ("zero-velocity omission", c10_zero_velocity_omission),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("info: {}", info_tight_crashes());
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
