//! Synthetic trimodal recordings driven by a two-state sleep/wake Markov chain.
//!
//! Every modality carries its own wake cue, emitted as bursts from an
//! independent Poisson process whose rate depends on the latent state:
//! vocalizations in audio, motion artifacts in ECG and movement in the IMU.
//! The background of each modality (noise level, heart rate, sensor
//! orientation) varies per family, which makes family-disjoint splits a real
//! generalization test.
//!
//! Documented effect sizes at the defaults, per 2 s window and modality: a
//! window overlaps at least one burst with probability 1 − e^(−3.2λ)
//! (window length plus mean burst length), i.e. 0.76 when awake and 0.10
//! asleep. Mean heart rate is 128 bpm awake and 120 bpm asleep; family
//! baselines shift it by up to ±8 bpm.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use trisleep_numcore::SeedStream;
use trisleep_sync::{sample_offset, Chunk, ChunkedStream, LabelInterval, LabelTrack, Modality, Trimodal, SLEEP, WAKE};

use crate::error::{HarnessError, Result};

/// Device sampling rates of the recordings.
pub const NATIVE_RATES: Trimodal<u32> = Trimodal {
    audio: 24000,
    ecg: 2381,
    imu: 150,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bursts {
    /// Burst onsets per second while asleep.
    pub rate_sleep: f64,
    /// Burst onsets per second while awake.
    pub rate_wake: f64,
    pub min_secs: f64,
    pub max_secs: f64,
}

impl Bursts {
    fn rate(&self, state: u8) -> f64 {
        if state == SLEEP {
            self.rate_sleep
        } else {
            self.rate_wake
        }
    }
}

impl Default for Bursts {
    fn default() -> Self {
        Self {
            rate_sleep: 0.033,
            rate_wake: 0.45,
            min_secs: 0.8,
            max_secs: 1.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    /// Family (recording subject) index; selects the nuisance parameters.
    pub family: u32,
    pub duration_secs: f64,
    /// Mean dwell time of each state; dwell times are `min_dwell_secs` plus an exponential.
    pub mean_dwell_sleep_secs: f64,
    pub mean_dwell_wake_secs: f64,
    pub min_dwell_secs: f64,
    /// Background noise standard deviation of the audio while asleep and awake.
    pub audio_noise_sleep: f64,
    pub audio_noise_wake: f64,
    pub vocalizations: Bursts,
    /// Mean inter-beat interval in seconds while asleep and awake.
    pub ibi_sleep: f64,
    pub ibi_wake: f64,
    pub ibi_std: f64,
    pub ecg_artifacts: Bursts,
    pub movements: Bursts,
    pub motion_amplitude: f64,
    /// Nominal chunk length written by each device.
    pub chunk_secs: f64,
    /// Each chunk loses up to this fraction of its samples at the tail.
    pub max_missing_frac: f64,
    /// Per-modality start and end offsets are drawn from `[0, max_offset_secs]`.
    pub max_offset_secs: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            family: 0,
            duration_secs: 3600.0,
            mean_dwell_sleep_secs: 30.0,
            mean_dwell_wake_secs: 20.0,
            min_dwell_secs: 5.0,
            audio_noise_sleep: 0.05,
            audio_noise_wake: 0.07,
            vocalizations: Bursts::default(),
            ibi_sleep: 0.5,
            ibi_wake: 0.47,
            ibi_std: 0.02,
            ecg_artifacts: Bursts::default(),
            movements: Bursts::default(),
            motion_amplitude: 0.5,
            chunk_secs: 10.0,
            max_missing_frac: 0.01,
            max_offset_secs: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(HarnessError::Invalid(format!("synth: {msg}")));
        if !(self.duration_secs >= 60.0) {
            return bad("duration must be at least 60 s");
        }
        if !(self.mean_dwell_sleep_secs > self.min_dwell_secs && self.mean_dwell_wake_secs > self.min_dwell_secs) {
            return bad("mean dwell times must exceed the minimum dwell");
        }
        if !(self.min_dwell_secs >= 0.0) || !(self.chunk_secs > 0.0) || !(self.ibi_sleep > 0.0 && self.ibi_wake > 0.0) {
            return bad("dwell, chunk and heartbeat intervals must be positive");
        }
        if !(0.0..1.0).contains(&self.max_missing_frac) || !(self.max_offset_secs >= 0.0) {
            return bad("missing fraction must be in [0, 1) and offsets non-negative");
        }
        for b in [&self.vocalizations, &self.ecg_artifacts, &self.movements] {
            if !(b.rate_sleep >= 0.0 && b.rate_wake >= 0.0 && b.min_secs > 0.0 && b.max_secs >= b.min_secs) {
                return bad("burst rates must be non-negative and durations ordered");
            }
        }
        Ok(())
    }

    /// Long-run fraction of time spent asleep.
    pub fn stationary_sleep_fraction(&self) -> f64 {
        self.mean_dwell_sleep_secs / (self.mean_dwell_sleep_secs + self.mean_dwell_wake_secs)
    }
}

/// Per-family background parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Nuisance {
    audio_gain: f64,
    heart_offset: f64,
    qrs_amplitude: f64,
    gravity: [f64; 3],
}

impl Nuisance {
    fn draw(seed: SeedStream) -> Self {
        let mut rng = seed.rng();
        let tilt: f64 = rng.gen_range(0.0..0.6);
        let azimuth: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        Self {
            audio_gain: rng.gen_range(0.7..1.4),
            heart_offset: rng.gen_range(-0.03..0.03),
            qrs_amplitude: rng.gen_range(0.7..1.3),
            gravity: [tilt.sin() * azimuth.cos(), tilt.sin() * azimuth.sin(), tilt.cos()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub family: u32,
    pub streams: Trimodal<ChunkedStream>,
    pub labels: LabelTrack,
}

/// Latent state sequence over `[0, duration]`, starting from the stationary distribution.
fn latent_states(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<LabelInterval> {
    let mut state = if rng.gen_bool(spec.stationary_sleep_fraction()) { SLEEP } else { WAKE };
    let mut t = 0.0;
    let mut out = Vec::new();
    while t < spec.duration_secs {
        let mean = if state == SLEEP { spec.mean_dwell_sleep_secs } else { spec.mean_dwell_wake_secs };
        let extra = Exp::new(1.0 / (mean - spec.min_dwell_secs)).expect("positive rate").sample(rng);
        let end = (t + spec.min_dwell_secs + extra).min(spec.duration_secs);
        out.push(LabelInterval {
            t_start: t,
            t_end: end,
            label: state,
        });
        t = end;
        state = if state == SLEEP { WAKE } else { SLEEP };
    }
    out
}

fn state_at(states: &[LabelInterval], t: f64) -> u8 {
    let i = states.partition_point(|s| s.t_end <= t);
    states.get(i).or(states.last()).map_or(WAKE, |s| s.label)
}

/// Burst windows `(start, length)` from a state-modulated Poisson process.
fn bursts(states: &[LabelInterval], b: &Bursts, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for s in states {
        let rate = b.rate(s.label);
        if rate <= 0.0 {
            continue;
        }
        let gap = Exp::new(rate).expect("positive rate");
        let mut t = s.t_start + gap.sample(rng);
        while t < s.t_end {
            out.push((t, rng.gen_range(b.min_secs..=b.max_secs)));
            t += gap.sample(rng);
        }
    }
    out
}

/// Raised-cosine envelope of a burst at time `t`, zero outside it.
fn envelope(t: f64, (start, len): (f64, f64)) -> f64 {
    let u = (t - start) / len;
    if (0.0..1.0).contains(&u) {
        0.5 - 0.5 * (std::f64::consts::TAU * u).cos()
    } else {
        0.0
    }
}

/// Frame-interleaved samples of `m` on `[t0, t1)` at its native rate.
fn render(m: Modality, spec: &SynthSpec, nz: &Nuisance, states: &[LabelInterval], t0: f64, n: usize, seed: SeedStream) -> Vec<f32> {
    use std::f64::consts::TAU;
    let rate = *NATIVE_RATES.get(m) as f64;
    let mut rng = seed.rng();
    let white = Normal::new(0.0, 1.0).expect("unit normal");
    let time = |i: usize| t0 + i as f64 / rate;
    match m {
        Modality::Audio => {
            let events: Vec<(f64, f64, f64)> = bursts(states, &spec.vocalizations, &mut rng)
                .into_iter()
                .map(|(s, l)| (s, l, rng.gen_range(300.0..500.0)))
                .collect();
            let mut next = 0;
            (0..n)
                .map(|i| {
                    let t = time(i);
                    let sigma = if state_at(states, t) == SLEEP { spec.audio_noise_sleep } else { spec.audio_noise_wake };
                    let breath = 1.0 + 0.3 * (TAU * 0.4 * t).sin();
                    let mut v = nz.audio_gain * sigma * breath * white.sample(&mut rng);
                    while next < events.len() && events[next].0 + events[next].1 <= t {
                        next += 1;
                    }
                    for &(s, l, f0) in events[next..].iter().take_while(|e| e.0 <= t) {
                        let e = envelope(t, (s, l));
                        let phase = TAU * f0 * (t - s);
                        let tone = phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin();
                        v += 4.0 * spec.audio_noise_wake * nz.audio_gain * e * tone;
                    }
                    v as f32
                })
                .collect()
        }
        Modality::Ecg => {
            let t1 = t0 + n as f64 / rate;
            let mut beats = Vec::new();
            let mut t = t0 - rng.gen_range(0.0..spec.ibi_sleep);
            while t < t1 + 0.5 {
                beats.push(t);
                let mean = if state_at(states, t.max(0.0)) == SLEEP { spec.ibi_sleep } else { spec.ibi_wake };
                let ibi = mean + nz.heart_offset + spec.ibi_std * white.sample(&mut rng);
                t += ibi.max(0.2);
            }
            let events = bursts(states, &spec.ecg_artifacts, &mut rng);
            let mut next_beat = 0;
            let mut next_event = 0;
            (0..n)
                .map(|i| {
                    let t = time(i);
                    let mut v = 0.03 * white.sample(&mut rng);
                    while next_beat < beats.len() && beats[next_beat] + 0.6 < t {
                        next_beat += 1;
                    }
                    for &b in beats[next_beat..].iter().take_while(|&&b| b - 0.1 <= t) {
                        let d = t - b;
                        let qrs = (-0.5 * (d / 0.008).powi(2)).exp();
                        let twave = 0.3 * (-0.5 * ((d - 0.25) / 0.04).powi(2)).exp();
                        v += nz.qrs_amplitude * (qrs + twave);
                    }
                    while next_event < events.len() && events[next_event].0 + events[next_event].1 <= t {
                        next_event += 1;
                    }
                    for &ev in events[next_event..].iter().take_while(|e| e.0 <= t) {
                        let e = envelope(t, ev);
                        v += e * ((TAU * 4.0 * (t - ev.0)).sin() + 0.3 * white.sample(&mut rng));
                    }
                    v as f32
                })
                .collect()
        }
        Modality::Imu => {
            let events: Vec<((f64, f64), [f64; 6], f64)> = bursts(states, &spec.movements, &mut rng)
                .into_iter()
                .map(|ev| {
                    let mut phases = [0.0; 6];
                    phases.iter_mut().for_each(|p| *p = rng.gen_range(0.0..TAU));
                    (ev, phases, rng.gen_range(1.0..3.0))
                })
                .collect();
            let mut out = Vec::with_capacity(n * 6);
            let mut next = 0;
            for i in 0..n {
                let t = time(i);
                let mut frame = [0.0f64; 6];
                for (c, v) in frame.iter_mut().enumerate() {
                    *v = if c < 3 { nz.gravity[c] } else { 0.0 } + 0.01 * white.sample(&mut rng);
                }
                while next < events.len() && events[next].0 .0 + events[next].0 .1 <= t {
                    next += 1;
                }
                for (ev, phases, f) in events[next..].iter().take_while(|e| e.0 .0 <= t) {
                    let e = envelope(t, *ev) * spec.motion_amplitude;
                    for (c, v) in frame.iter_mut().enumerate() {
                        let gain = if c < 3 { 1.0 } else { 2.0 };
                        *v += gain * e * (TAU * f * (t - ev.0) + phases[c]).sin();
                    }
                }
                out.extend(frame.iter().map(|&v| v as f32));
            }
            out
        }
    }
}

/// Splits a dense recording into device chunks with truncated tails.
fn chunk(m: Modality, spec: &SynthSpec, t0: f64, samples: Vec<f32>, rng: &mut ChaCha8Rng) -> ChunkedStream {
    let rate = *NATIVE_RATES.get(m);
    let ch = m.channels();
    let frames = samples.len() / ch;
    let per_chunk = ((spec.chunk_secs * rate as f64).round() as usize).max(1);
    let mut chunks = Vec::new();
    let mut a = 0;
    let mut counter = 0u64;
    while a < frames {
        let b = (a + per_chunk).min(frames);
        let slot = b - a;
        let missing = if spec.max_missing_frac > 0.0 {
            rng.gen_range(0..=((slot as f64 * spec.max_missing_frac) as usize))
        } else {
            0
        };
        let recorded = slot - missing;
        let t_start = t0 + a as f64 / rate as f64;
        let t_end = t0 + b as f64 / rate as f64;
        debug_assert_eq!(sample_offset(rate, t_start, t_end), slot as i64);
        chunks.push(Chunk {
            t_start,
            t_end,
            s_start: counter,
            s_end: counter + recorded as u64,
            samples: samples[a * ch..(a + recorded) * ch].to_vec(),
        });
        counter += recorded as u64;
        a = b;
    }
    ChunkedStream {
        modality: m,
        sample_rate: rate,
        channels: ch,
        chunks,
    }
}

/// Generates one recording. Identical specs give bit-identical output.
pub fn synth_generate(spec: &SynthSpec) -> Result<Recording> {
    spec.validate()?;
    let root = SeedStream::new(spec.seed).split(spec.family as u64);
    let mut rng = root.split_str("states").rng();
    let states = latent_states(spec, &mut rng);
    let nz = Nuisance::draw(root.split_str("family"));
    let streams = Trimodal::from_fn(|m| {
        let seed = root.split_str(m.name());
        let mut rng = seed.split_str("layout").rng();
        let rate = *NATIVE_RATES.get(m) as f64;
        let start = rng.gen_range(0.0..=spec.max_offset_secs);
        let end = spec.duration_secs - rng.gen_range(0.0..=spec.max_offset_secs);
        let n = ((end - start) * rate).round() as usize;
        let samples = render(m, spec, &nz, &states, start, n, seed.split_str("signal"));
        chunk(m, spec, start, samples, &mut rng)
    });
    Ok(Recording {
        family: spec.family,
        streams,
        labels: LabelTrack::new(states)?,
    })
}
