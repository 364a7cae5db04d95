//! PMU-style sampling of the bus and windowed feature extraction.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{NmgError, Result};
use crate::plant::{Injections, PlantParams, PlantState};

/// Sentinel for "no precursor seen yet".
pub const NO_PRECURSOR: f64 = 1e9;

/// Highest harmonic order included in THD.
pub const THD_MAX_ORDER: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    /// Feature window length (s).
    pub window: f64,
    /// Decision hop (s).
    pub hop: f64,
    /// Point-on-wave sample rate (Hz).
    pub sample_rate: f64,
    /// Fundamental used for waveform synthesis and harmonic bins (Hz).
    pub f_fundamental: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window: 0.1,
            hop: 0.01,
            sample_rate: 10_000.0,
            f_fundamental: 50.0,
        }
    }
}

impl WindowConfig {
    /// Whole windows per hop stride, used to count disjoint windows.
    pub fn hops_per_window(&self) -> usize {
        (self.window / self.hop).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub sag_precursor: f64,
    pub sag_fault: f64,
    pub thd_precursor: f64,
    pub thd_fault: f64,
    pub rocof_precursor: f64,
    pub rocof_fault: f64,
    pub df_precursor: f64,
    pub df_fault: f64,
    /// Depth below v0 that counts toward sag duration.
    pub sag_onset: f64,
    /// RoCoF limit counted by the KPI report.
    pub rocof_limit: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            sag_precursor: 0.05,
            sag_fault: 0.3,
            thd_precursor: 0.05,
            thd_fault: 0.25,
            rocof_precursor: 0.5,
            rocof_fault: 3.0,
            df_precursor: 0.01,
            df_fault: 0.03,
            sag_onset: 0.01,
            rocof_limit: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub t: f64,
    pub f: f64,
    pub v_rms: f64,
    /// Point-on-wave samples covering the plant step that ends at `t`.
    pub pow_samples: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub sag_depth: f64,
    pub sag_duration: f64,
    pub rocof: f64,
    pub thd: f64,
    pub df_mag: f64,
    /// Frequency deviation at the end of the window (sign for reflex actions).
    pub delta_f: f64,
    pub persistence: u32,
    pub t_since_precursor: f64,
}

impl Default for FeatureVector {
    fn default() -> Self {
        FeatureVector {
            sag_depth: 0.0,
            sag_duration: 0.0,
            rocof: 0.0,
            thd: 0.0,
            df_mag: 0.0,
            delta_f: 0.0,
            persistence: 0,
            t_since_precursor: NO_PRECURSOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrecursorKind {
    Sag,
    HarmonicBurst,
    LoadFluctuation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecursorEvent {
    pub t_detect: f64,
    pub kind: PrecursorKind,
    pub features: FeatureVector,
}

/// Synthesize the telemetry frame for the plant step that ended at `state.t`.
pub fn sample(
    state: &PlantState,
    inj: &Injections,
    params: &PlantParams,
    cfg: &WindowConfig,
) -> TelemetryFrame {
    let n = (params.dt_sim * cfg.sample_rate).round() as i64;
    let k_end = (state.t * cfg.sample_rate).round() as i64;
    let amp = std::f64::consts::SQRT_2 * state.v;
    let w1 = 2.0 * PI * cfg.f_fundamental;
    let pow_samples = (k_end - n..k_end)
        .map(|k| {
            let ts = k as f64 / cfg.sample_rate;
            let mut x = (w1 * ts).sin();
            for &(order, a) in &inj.harmonics {
                x += a * (order as f64 * w1 * ts).sin();
            }
            amp * x
        })
        .collect();
    TelemetryFrame {
        t: state.t,
        f: params.f0 * (1.0 + state.delta_f),
        v_rms: state.v,
        pow_samples,
    }
}

/// Least-squares slope of frequency over the frames (Hz/s).
pub fn rocof(frames: &[TelemetryFrame]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(NmgError::TooFewFrames {
            need: 2,
            got: frames.len(),
        });
    }
    let n = frames.len() as f64;
    // Center both axes first; keeps the slope exact on affine inputs.
    let t_mean = frames.iter().map(|fr| fr.t).sum::<f64>() / n;
    let f_mean = frames.iter().map(|fr| fr.f).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for fr in frames {
        let dt = fr.t - t_mean;
        sxy += dt * (fr.f - f_mean);
        sxx += dt * dt;
    }
    if sxx == 0.0 {
        return Err(NmgError::TooFewFrames { need: 2, got: 1 });
    }
    Ok(sxy / sxx)
}

/// DFT magnitudes at the fundamental and its harmonics for a fixed window
/// length. Twiddle factors are tabulated once.
#[derive(Debug, Clone)]
pub struct HarmonicAnalyzer {
    n: usize,
    cycles: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl HarmonicAnalyzer {
    pub fn new(n: usize, cfg: &WindowConfig) -> Self {
        let cycles = (n as f64 * cfg.f_fundamental / cfg.sample_rate).round() as usize;
        let (cos, sin) = (0..n)
            .map(|i| {
                let ph = 2.0 * PI * i as f64 / n as f64;
                (ph.cos(), ph.sin())
            })
            .unzip();
        HarmonicAnalyzer {
            n,
            cycles,
            cos,
            sin,
        }
    }

    /// |c_k| for the k-th harmonic, normalised so a sinusoid of amplitude A
    /// reads A.
    pub fn magnitude(&self, samples: &[f64], order: usize) -> f64 {
        let bin = order * self.cycles;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, x) in samples.iter().enumerate() {
            let j = (bin * i) % self.n;
            re += x * self.cos[j];
            im -= x * self.sin[j];
        }
        2.0 * (re * re + im * im).sqrt() / self.n as f64
    }

    pub fn thd(&self, samples: &[f64]) -> Result<f64> {
        let c1 = self.magnitude(samples, 1);
        if c1 < 1e-9 {
            return Err(NmgError::NoFundamental(c1));
        }
        let top = THD_MAX_ORDER.min(self.n / (2 * self.cycles.max(1)));
        let harm: f64 = (2..=top).map(|k| self.magnitude(samples, k).powi(2)).sum();
        Ok(harm.sqrt() / c1)
    }
}

/// THD of an integer-cycle window of point-on-wave samples.
pub fn thd(pow_samples: &[f64], cfg: &WindowConfig) -> Result<f64> {
    HarmonicAnalyzer::new(pow_samples.len(), cfg).thd(pow_samples)
}

/// Rolling window of telemetry frames with the state that spans windows:
/// sag run length, persistence and time since the last precursor.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    thresholds: Thresholds,
    v0: f64,
    f0: f64,
    frame_dt: f64,
    capacity: usize,
    frames: VecDeque<TelemetryFrame>,
    /// Depth of each frame below the reference in force when it arrived.
    depths: VecDeque<f64>,
    analyzer: HarmonicAnalyzer,
    sag_run: usize,
    last_sag: Option<(f64, usize)>,
    event_hops: usize,
    stride: usize,
    last_precursor: Option<f64>,
}

impl FeatureExtractor {
    /// `stride` is how many consecutive event extractions make up one
    /// persistence count (1 when each call sees a fresh window).
    pub fn new(
        cfg: &WindowConfig,
        thresholds: &Thresholds,
        params: &PlantParams,
        stride: usize,
    ) -> Self {
        let capacity = (cfg.window / params.dt_sim).round() as usize;
        let n = (cfg.window * cfg.sample_rate).round() as usize;
        FeatureExtractor {
            thresholds: thresholds.clone(),
            v0: params.v0,
            f0: params.f0,
            frame_dt: params.dt_sim,
            capacity,
            frames: VecDeque::with_capacity(capacity + 1),
            depths: VecDeque::with_capacity(capacity + 1),
            analyzer: HarmonicAnalyzer::new(n, cfg),
            sag_run: 0,
            last_sag: None,
            event_hops: 0,
            stride: stride.max(1),
            last_precursor: None,
        }
    }

    pub fn push(&mut self, frame: TelemetryFrame) {
        let depth = self.v0 - frame.v_rms;
        if depth > self.thresholds.sag_onset {
            self.sag_run += 1;
        } else if self.sag_run > 0 {
            let end = self.frames.back().map(|f| f.t).unwrap_or(frame.t);
            self.last_sag = Some((end, self.sag_run));
            self.sag_run = 0;
        }
        self.frames.push_back(frame);
        self.depths.push_back(depth);
        while self.frames.len() > self.capacity {
            self.frames.pop_front();
            self.depths.pop_front();
        }
    }

    pub fn is_full(&self) -> bool {
        self.frames.len() == self.capacity
    }

    pub fn frames(&self) -> &VecDeque<TelemetryFrame> {
        &self.frames
    }

    /// Move the voltage reference sags are measured against, e.g. when the
    /// secondary layer shifts the setpoint.
    pub fn set_v_ref(&mut self, v_ref: f64) {
        self.v0 = v_ref;
    }

    /// Record that a precursor was detected at `t`.
    pub fn mark_precursor(&mut self, t: f64) {
        self.last_precursor = Some(t);
    }

    /// Features of the current window; advances the persistence counter.
    pub fn extract(&mut self) -> Result<FeatureVector> {
        if !self.is_full() {
            return Err(NmgError::TooFewFrames {
                need: self.capacity,
                got: self.frames.len(),
            });
        }
        let frames = self.frames.make_contiguous();
        let t_first = frames[0].t;
        let t_last = frames[frames.len() - 1].t;

        let sag_depth = self.depths.iter().fold(0.0_f64, |m, d| m.max(*d));
        let sag_frames = if self.sag_run > 0 {
            self.sag_run
        } else {
            match self.last_sag {
                Some((end, len)) if end >= t_first => len,
                _ => 0,
            }
        };
        let sag_duration = sag_frames as f64 * self.frame_dt;

        let rocof = rocof(frames)?;
        let samples: Vec<f64> = frames
            .iter()
            .flat_map(|f| f.pow_samples.iter().copied())
            .collect();
        let thd = self.analyzer.thd(&samples)?;
        let df: Vec<f64> = frames.iter().map(|f| f.f / self.f0 - 1.0).collect();
        let df_mag = df.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let delta_f = df[df.len() - 1];

        let th = &self.thresholds;
        let any_event = sag_depth > th.sag_precursor
            || thd > th.thd_precursor
            || rocof.abs() > th.rocof_precursor
            || df_mag > th.df_precursor;
        if any_event {
            self.event_hops += 1;
        } else {
            self.event_hops = 0;
        }

        Ok(FeatureVector {
            sag_depth,
            sag_duration,
            rocof,
            thd,
            df_mag,
            delta_f,
            persistence: (self.event_hops / self.stride) as u32,
            t_since_precursor: self
                .last_precursor
                .map(|tp| t_last - tp)
                .unwrap_or(NO_PRECURSOR),
        })
    }
}

/// One-shot feature extraction over a complete window of frames.
pub fn extract_features(
    frames: &[TelemetryFrame],
    thresholds: &Thresholds,
    params: &PlantParams,
    cfg: &WindowConfig,
) -> Result<FeatureVector> {
    let mut ex = FeatureExtractor::new(cfg, thresholds, params, 1);
    for f in frames {
        ex.push(f.clone());
    }
    ex.extract()
}

/// True when any feature is at or beyond its fault-level threshold. Such
/// windows belong to the reflex alone; they are never treated as precursors.
pub fn is_fault_level(fv: &FeatureVector, th: &Thresholds) -> bool {
    fv.sag_depth >= th.sag_fault
        || fv.thd >= th.thd_fault
        || fv.rocof.abs() >= th.rocof_fault
        || fv.df_mag >= th.df_fault
}

pub fn detect_event(fv: &FeatureVector, th: &Thresholds, t: f64) -> Option<PrecursorEvent> {
    if is_fault_level(fv, th) {
        return None;
    }
    let kind = if fv.sag_depth > th.sag_precursor {
        PrecursorKind::Sag
    } else if fv.thd > th.thd_precursor {
        PrecursorKind::HarmonicBurst
    } else if fv.rocof.abs() > th.rocof_precursor || fv.df_mag > th.df_precursor {
        PrecursorKind::LoadFluctuation
    } else {
        return None;
    };
    Some(PrecursorEvent {
        t_detect: t,
        kind,
        features: *fv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: f64, f: f64, v: f64) -> TelemetryFrame {
        TelemetryFrame {
            t,
            f,
            v_rms: v,
            pow_samples: vec![],
        }
    }

    fn synth_window(t0: f64, v_of: impl Fn(usize) -> f64) -> Vec<TelemetryFrame> {
        let params = PlantParams::default();
        let cfg = WindowConfig::default();
        (1..=100)
            .map(|i| {
                let mut st = PlantState::initial(&params);
                st.t = t0 + i as f64 * 0.001;
                st.v = v_of(i - 1);
                sample(&st, &Injections::none(), &params, &cfg)
            })
            .collect()
    }

    #[test]
    fn sample_frequency() {
        let params = PlantParams::default();
        let cfg = WindowConfig::default();
        let mut st = PlantState::initial(&params);
        st.t = 0.001;
        assert_eq!(sample(&st, &Injections::none(), &params, &cfg).f, 50.0);
        st.delta_f = 0.01;
        assert!((sample(&st, &Injections::none(), &params, &cfg).f - 50.5).abs() < 1e-12);
    }

    #[test]
    fn sample_harmonic_amplitude() {
        let params = PlantParams::default();
        let cfg = WindowConfig::default();
        let inj = Injections {
            harmonics: vec![(3, 0.1)],
            ..Injections::none()
        };
        let mut samples = Vec::new();
        let mut st = PlantState::initial(&params);
        st.v = 0.95;
        for i in 1..=100 {
            st.t = i as f64 * 0.001;
            samples.extend(sample(&st, &inj, &params, &cfg).pow_samples);
        }
        assert_eq!(samples.len(), 1000);
        // Single-bin DFT at 150 Hz, computed directly.
        let (mut re, mut im) = (0.0, 0.0);
        for (k, x) in samples.iter().enumerate() {
            let ph = 2.0 * PI * 150.0 * (k as f64 / 10_000.0);
            re += x * ph.cos();
            im += x * ph.sin();
        }
        let amp = 2.0 * (re * re + im * im).sqrt() / 1000.0;
        assert!((amp - 0.1 * 2f64.sqrt() * 0.95).abs() < 1e-9, "{amp}");
    }

    #[test]
    fn rocof_examples() {
        let flat: Vec<_> = (0..100)
            .map(|i| frame(i as f64 * 0.001, 50.0, 1.0))
            .collect();
        assert_eq!(rocof(&flat).unwrap(), 0.0);
        let ramp: Vec<_> = (0..100)
            .map(|i| {
                let t = i as f64 * 0.001;
                frame(t, 50.0 + 0.5 * t, 1.0)
            })
            .collect();
        assert!((rocof(&ramp).unwrap() - 0.5).abs() < 1e-12);
        let noisy: Vec<_> = (0..100)
            .map(|i| {
                let t = i as f64 * 0.001;
                let n = if i % 2 == 0 { 0.001 } else { -0.001 };
                frame(t, 50.0 + 0.5 * t + n, 1.0)
            })
            .collect();
        assert!((rocof(&noisy).unwrap() - 0.5).abs() < 0.05);
        assert!(matches!(
            rocof(&flat[..1]),
            Err(NmgError::TooFewFrames { .. })
        ));
    }

    fn tone_mix(mix: &[(usize, f64)]) -> Vec<f64> {
        (0..1000)
            .map(|k| {
                let t = k as f64 / 10_000.0;
                mix.iter()
                    .map(|&(h, a)| a * (2.0 * PI * 50.0 * h as f64 * t + 0.3 * h as f64).sin())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn thd_examples() {
        let cfg = WindowConfig::default();
        assert!(thd(&tone_mix(&[(1, 1.0)]), &cfg).unwrap() < 1e-12);
        let one = thd(&tone_mix(&[(1, 1.0), (3, 0.1)]), &cfg).unwrap();
        assert!((one - 0.1).abs() < 1e-9);
        let two = thd(&tone_mix(&[(1, 1.0), (3, 0.1), (5, 0.1)]), &cfg).unwrap();
        assert!((two - 0.02f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn thd_without_fundamental_is_error() {
        let cfg = WindowConfig::default();
        assert!(matches!(
            thd(&vec![0.0; 1000], &cfg),
            Err(NmgError::NoFundamental(_))
        ));
    }

    #[test]
    fn quiescent_window_has_zero_features() {
        let params = PlantParams::default();
        let frames = synth_window(0.0, |_| 1.0);
        let fv = extract_features(
            &frames,
            &Thresholds::default(),
            &params,
            &WindowConfig::default(),
        )
        .unwrap();
        assert_eq!(fv.sag_depth, 0.0);
        assert_eq!(fv.sag_duration, 0.0);
        assert_eq!(fv.rocof, 0.0);
        assert!(fv.thd < 1e-12);
        assert_eq!(fv.df_mag, 0.0);
        assert_eq!(fv.persistence, 0);
        assert_eq!(fv.t_since_precursor, NO_PRECURSOR);
    }

    #[test]
    fn sixty_ms_sag() {
        let params = PlantParams::default();
        let frames = synth_window(0.0, |i| if (20..80).contains(&i) { 0.9 } else { 1.0 });
        let fv = extract_features(
            &frames,
            &Thresholds::default(),
            &params,
            &WindowConfig::default(),
        )
        .unwrap();
        assert!((fv.sag_depth - 0.1).abs() < 1e-12);
        assert!((fv.sag_duration - 0.06).abs() < 1e-12);
    }

    #[test]
    fn persistence_counts_consecutive_windows() {
        let params = PlantParams::default();
        let cfg = WindowConfig::default();
        let mut ex = FeatureExtractor::new(&cfg, &Thresholds::default(), &params, 1);
        for f in synth_window(0.0, |_| 0.9) {
            ex.push(f);
        }
        assert_eq!(ex.extract().unwrap().persistence, 1);
        for f in synth_window(0.1, |_| 0.9) {
            ex.push(f);
        }
        assert_eq!(ex.extract().unwrap().persistence, 2);
        for f in synth_window(0.2, |_| 1.0) {
            ex.push(f);
        }
        assert_eq!(ex.extract().unwrap().persistence, 0);
    }

    #[test]
    fn sag_duration_spans_windows() {
        let params = PlantParams::default();
        let cfg = WindowConfig::default();
        let mut ex = FeatureExtractor::new(&cfg, &Thresholds::default(), &params, 1);
        for f in synth_window(0.0, |i| if i >= 50 { 0.9 } else { 1.0 }) {
            ex.push(f);
        }
        for f in synth_window(0.1, |i| if i < 100 { 0.9 } else { 1.0 }) {
            ex.push(f);
        }
        assert!((ex.extract().unwrap().sag_duration - 0.15).abs() < 1e-12);
    }

    #[test]
    fn detection_table() {
        let th = Thresholds::default();
        let sag = FeatureVector {
            sag_depth: 0.1,
            ..Default::default()
        };
        assert_eq!(
            detect_event(&sag, &th, 1.0).unwrap().kind,
            PrecursorKind::Sag
        );
        assert!(detect_event(&FeatureVector::default(), &th, 1.0).is_none());
        let harm = FeatureVector {
            thd: 0.08,
            ..Default::default()
        };
        assert_eq!(
            detect_event(&harm, &th, 1.0).unwrap().kind,
            PrecursorKind::HarmonicBurst
        );
        let both = FeatureVector {
            sag_depth: 0.1,
            thd: 0.08,
            rocof: 1.0,
            ..Default::default()
        };
        assert_eq!(
            detect_event(&both, &th, 1.0).unwrap().kind,
            PrecursorKind::Sag
        );
        let fault = FeatureVector {
            sag_depth: 0.35,
            ..Default::default()
        };
        assert!(detect_event(&fault, &th, 1.0).is_none());
        assert!(is_fault_level(&fault, &th));
    }
}
