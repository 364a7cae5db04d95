//! Traces, episode KPIs, controller comparison and file emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NmgError, Result};
use crate::plant::ProtectionAction;
use crate::reflex::Criterion;
use crate::supervisor::DecisionKind;
use crate::telemetry::{FeatureVector, PrecursorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroundTruth {
    Benign,
    Harmful,
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub delta_f: f64,
    pub v: f64,
    pub p_dg: Vec<f64>,
    pub p_ess: f64,
    pub soc: f64,
    pub p_load: f64,
    pub p_served: f64,
    pub shed_fraction: f64,
    pub breaker_closed: Vec<bool>,
    pub prearm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopRecord {
    /// Index into `Trace::steps`.
    pub step: usize,
    pub features: FeatureVector,
    pub a: f64,
    pub criteria: BTreeSet<Criterion>,
    /// None when no supervisory decision was taken this hop.
    pub decision: Option<DecisionKind>,
    pub c: f64,
    pub i_mag: f64,
    pub g: f64,
    pub s_out: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InjectionTag {
    LoadStep,
    Sag,
    HarmonicBurst,
    Fault,
    Islanding,
}

impl InjectionTag {
    fn name(self) -> &'static str {
        match self {
            InjectionTag::LoadStep => "loadstep",
            InjectionTag::Sag => "sag",
            InjectionTag::HarmonicBurst => "harmonic",
            InjectionTag::Fault => "fault",
            InjectionTag::Islanding => "islanding",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        [
            InjectionTag::LoadStep,
            InjectionTag::Sag,
            InjectionTag::HarmonicBurst,
            InjectionTag::Fault,
            InjectionTag::Islanding,
        ]
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or_else(|| NmgError::Parse(format!("bad injection tag {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    Injection(InjectionTag),
    Detection(PrecursorKind),
    Action(ProtectionAction),
    HardOverride(ProtectionAction),
}

impl EventKind {
    fn encode(&self) -> String {
        match self {
            EventKind::Injection(tag) => format!("inj:{}", tag.name()),
            EventKind::Detection(k) => format!(
                "det:{}",
                match k {
                    PrecursorKind::Sag => "sag",
                    PrecursorKind::HarmonicBurst => "harmonic",
                    PrecursorKind::LoadFluctuation => "load",
                }
            ),
            EventKind::Action(a) => format!("act:{a}"),
            EventKind::HardOverride(a) => format!("ovr:{a}"),
        }
    }

    fn decode(s: &str) -> Result<Self> {
        let bad = || NmgError::Parse(format!("bad event {s:?}"));
        let (head, rest) = s.split_once(':').ok_or_else(bad)?;
        Ok(match head {
            "inj" => EventKind::Injection(InjectionTag::parse(rest)?),
            "det" => EventKind::Detection(match rest {
                "sag" => PrecursorKind::Sag,
                "harmonic" => PrecursorKind::HarmonicBurst,
                "load" => PrecursorKind::LoadFluctuation,
                _ => return Err(bad()),
            }),
            "act" => EventKind::Action(rest.parse()?),
            "ovr" => EventKind::HardOverride(rest.parse()?),
            _ => return Err(bad()),
        })
    }

    /// Protection operation that interrupts supply.
    pub fn is_interruption(&self) -> bool {
        match self {
            EventKind::Action(a) | EventKind::HardOverride(a) => a.interrupts_load(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    /// Breaker names, in `breaker_closed` order.
    pub elements: Vec<String>,
    pub steps: Vec<StepRecord>,
    pub hops: Vec<HopRecord>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiConfig {
    pub dt: f64,
    pub rocof_limit: f64,
    /// Deadline for a protective reaction after a fault pulse (s).
    pub t_react: f64,
}

impl Default for KpiConfig {
    fn default() -> Self {
        KpiConfig {
            dt: 0.001,
            rocof_limit: 0.5,
            t_react: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    pub freq_dev_area: f64,
    pub nadir: f64,
    pub overshoot: f64,
    pub rocof_violations: u32,
    pub false_trips: u32,
    pub missed_faults: u32,
    pub ess_stress: f64,
    pub served_fraction: f64,
}

impl KpiReport {
    pub fn quiescent() -> Self {
        KpiReport {
            freq_dev_area: 0.0,
            nadir: 0.0,
            overshoot: 0.0,
            rocof_violations: 0,
            false_trips: 0,
            missed_faults: 0,
            ess_stress: 0.0,
            served_fraction: 1.0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| NmgError::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| NmgError::Parse(e.to_string()))
    }
}

/// The value a trace field takes once written with 9 significant digits.
/// KPIs integrate these so a reloaded CSV reproduces them exactly.
pub fn quantize(x: f64) -> f64 {
    fmt_num(x).parse().unwrap_or(x)
}

fn fmt_num(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn compute_kpis(trace: &Trace, truth: GroundTruth, cfg: &KpiConfig) -> Result<KpiReport> {
    if trace.steps.is_empty() {
        return Err(NmgError::EmptyTrace);
    }
    let dt = cfg.dt;
    let mut k = KpiReport::quiescent();
    let (mut demand, mut served) = (0.0, 0.0);
    let first_disturbance = trace
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Injection(_)))
        .map(|e| e.step)
        .min();

    for (i, s) in trace.steps.iter().enumerate() {
        let df = quantize(s.delta_f);
        k.freq_dev_area += df.abs() * dt;
        k.nadir = k.nadir.min(df);
        if first_disturbance.is_some_and(|f| i >= f) {
            k.overshoot = k.overshoot.max(df);
        }
        k.ess_stress += quantize(s.p_ess).abs() * dt;
        demand += quantize(s.p_load);
        served += quantize(s.p_served);
    }
    if demand > 0.0 {
        k.served_fraction = (served / demand).clamp(0.0, 1.0);
    }

    k.rocof_violations = trace
        .hops
        .iter()
        .filter(|h| quantize(h.features.rocof).abs() > cfg.rocof_limit)
        .count() as u32;

    if truth == GroundTruth::Benign {
        k.false_trips = trace
            .events
            .iter()
            .filter(|e| e.kind.is_interruption())
            .count() as u32;
    }

    let window = (cfg.t_react / dt).round() as usize;
    k.missed_faults = trace
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Injection(InjectionTag::Fault))
        .filter(|fault| {
            !trace.events.iter().any(|e| {
                e.kind.is_interruption() && e.step >= fault.step && e.step <= fault.step + window
            })
        })
        .count() as u32;
    Ok(k)
}

/// Per-KPI means over a suite.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KpiMeans {
    pub freq_dev_area: f64,
    pub nadir: f64,
    pub overshoot: f64,
    pub rocof_violations: f64,
    pub false_trips: f64,
    pub missed_faults: f64,
    pub ess_stress: f64,
    pub served_fraction: f64,
}

impl KpiMeans {
    pub fn of(reports: &[KpiReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let mut m = KpiMeans::default();
        for r in reports {
            m.freq_dev_area += r.freq_dev_area;
            m.nadir += r.nadir;
            m.overshoot += r.overshoot;
            m.rocof_violations += r.rocof_violations as f64;
            m.false_trips += r.false_trips as f64;
            m.missed_faults += r.missed_faults as f64;
            m.ess_stress += r.ess_stress;
            m.served_fraction += r.served_fraction;
        }
        m.zip(&KpiMeans::default(), |a, _| a / n)
    }

    fn zip(&self, o: &KpiMeans, f: impl Fn(f64, f64) -> f64) -> KpiMeans {
        KpiMeans {
            freq_dev_area: f(self.freq_dev_area, o.freq_dev_area),
            nadir: f(self.nadir, o.nadir),
            overshoot: f(self.overshoot, o.overshoot),
            rocof_violations: f(self.rocof_violations, o.rocof_violations),
            false_trips: f(self.false_trips, o.false_trips),
            missed_faults: f(self.missed_faults, o.missed_faults),
            ess_stress: f(self.ess_stress, o.ess_stress),
            served_fraction: f(self.served_fraction, o.served_fraction),
        }
    }
}

/// KPI reports of one controller over a suite, keyed by scenario name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerReports {
    pub controller: String,
    pub reports: Vec<(String, KpiReport)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDelta {
    pub base: String,
    pub other: String,
    /// other − base
    pub delta: KpiMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub scenarios: usize,
    pub means: BTreeMap<String, KpiMeans>,
    pub deltas: Vec<PairDelta>,
}

pub fn compare(inputs: &[ControllerReports]) -> Result<ComparisonTable> {
    if inputs.len() < 2 {
        return Err(NmgError::TooFewControllers(inputs.len()));
    }
    let names =
        |c: &ControllerReports| c.reports.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    let reference = names(&inputs[0]);
    for c in &inputs[1..] {
        if names(c) != reference {
            return Err(NmgError::MismatchedSuites(format!(
                "{} and {} ran different scenarios",
                inputs[0].controller, c.controller
            )));
        }
    }
    let means: Vec<(String, KpiMeans)> = inputs
        .iter()
        .map(|c| {
            let rs: Vec<KpiReport> = c.reports.iter().map(|(_, r)| r.clone()).collect();
            (c.controller.clone(), KpiMeans::of(&rs))
        })
        .collect();
    let mut deltas = Vec::new();
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            deltas.push(PairDelta {
                base: means[i].0.clone(),
                other: means[j].0.clone(),
                delta: means[j].1.zip(&means[i].1, |b, a| b - a),
            });
        }
    }
    Ok(ComparisonTable {
        scenarios: reference.len(),
        means: means.into_iter().collect(),
        deltas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = NmgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            _ => Err(NmgError::Parse(format!("unknown format {s:?}"))),
        }
    }
}

const HOP_COLUMNS: [&str; 15] = [
    "sag_depth",
    "sag_duration",
    "rocof",
    "thd",
    "df_mag",
    "feature_delta_f",
    "persistence",
    "t_since_precursor",
    "a",
    "criteria",
    "decision",
    "c",
    "i_mag",
    "g",
    "s_out",
];

fn header(trace: &Trace, n_dg: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "delta_f", "v"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..n_dg).map(|i| format!("p_dg{i}")));
    for s in ["p_ess", "soc", "p_load", "p_served", "shed_fraction"] {
        h.push(s.into());
    }
    h.extend(trace.elements.iter().map(|e| format!("breaker_{e}")));
    h.push("prearm".into());
    h.push("hop".into());
    h.extend(HOP_COLUMNS.iter().map(|s| s.to_string()));
    h.push("events".into());
    h
}

pub fn trace_to_csv(trace: &Trace) -> String {
    let n_dg = trace.steps.first().map(|s| s.p_dg.len()).unwrap_or(0);
    let mut out = header(trace, n_dg).join(",");
    out.push('\n');
    let mut hops = trace.hops.iter().peekable();
    let mut events = trace.events.iter().peekable();
    let b = |x: bool| if x { "1" } else { "0" };
    for (i, s) in trace.steps.iter().enumerate() {
        let mut row: Vec<String> = vec![fmt_num(s.t), fmt_num(s.delta_f), fmt_num(s.v)];
        row.extend(s.p_dg.iter().map(|p| fmt_num(*p)));
        for x in [s.p_ess, s.soc, s.p_load, s.p_served, s.shed_fraction] {
            row.push(fmt_num(x));
        }
        row.extend(s.breaker_closed.iter().map(|c| b(*c).to_string()));
        row.push(b(s.prearm).into());
        match hops.next_if(|h| h.step == i) {
            Some(h) => {
                row.push("1".into());
                let f = &h.features;
                for x in [
                    f.sag_depth,
                    f.sag_duration,
                    f.rocof,
                    f.thd,
                    f.df_mag,
                    f.delta_f,
                ] {
                    row.push(fmt_num(x));
                }
                row.push(f.persistence.to_string());
                row.push(fmt_num(f.t_since_precursor));
                row.push(fmt_num(h.a));
                row.push(
                    h.criteria
                        .iter()
                        .map(|c| c.to_string())
                        .collect::<Vec<_>>()
                        .join(";"),
                );
                row.push(h.decision.map(|d| d.to_string()).unwrap_or_default());
                for x in [h.c, h.i_mag, h.g, h.s_out] {
                    row.push(fmt_num(x));
                }
            }
            None => {
                row.push("0".into());
                row.extend(std::iter::repeat_n(String::new(), HOP_COLUMNS.len()));
            }
        }
        let mut evs = Vec::new();
        while let Some(e) = events.next_if(|e| e.step == i) {
            evs.push(e.kind.encode());
        }
        row.push(evs.join(";"));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn trace_from_csv(text: &str) -> Result<Trace> {
    let mut lines = text.lines();
    let head: Vec<&str> = lines
        .next()
        .ok_or_else(|| NmgError::Parse("missing CSV header".into()))?
        .split(',')
        .collect();
    let col = |name: &str| {
        head.iter()
            .position(|h| *h == name)
            .ok_or_else(|| NmgError::Parse(format!("missing column {name}")))
    };
    let dg_cols: Vec<usize> = head
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("p_dg"))
        .map(|(i, _)| i)
        .collect();
    let brk_cols: Vec<usize> = head
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("breaker_"))
        .map(|(i, _)| i)
        .collect();
    let elements = brk_cols
        .iter()
        .map(|&i| head[i].trim_start_matches("breaker_").to_string())
        .collect();
    let [c_t, c_df, c_v, c_ess, c_soc, c_load, c_served, c_shed, c_prearm, c_hop, c_events] = [
        "t",
        "delta_f",
        "v",
        "p_ess",
        "soc",
        "p_load",
        "p_served",
        "shed_fraction",
        "prearm",
        "hop",
        "events",
    ]
    .map(col);
    let (c_t, c_df, c_v, c_ess, c_soc) = (c_t?, c_df?, c_v?, c_ess?, c_soc?);
    let (c_load, c_served, c_shed, c_prearm, c_hop, c_events) =
        (c_load?, c_served?, c_shed?, c_prearm?, c_hop?, c_events?);
    let hop_cols: Vec<usize> = HOP_COLUMNS.iter().map(|h| col(h)).collect::<Result<_>>()?;

    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| NmgError::Parse(format!("bad number {s:?}")))
    };
    let mut trace = Trace {
        elements,
        ..Trace::default()
    };
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != head.len() {
            return Err(NmgError::Parse(format!("row {i}: {} fields", f.len())));
        }
        trace.steps.push(StepRecord {
            t: num(f[c_t])?,
            delta_f: num(f[c_df])?,
            v: num(f[c_v])?,
            p_dg: dg_cols.iter().map(|&c| num(f[c])).collect::<Result<_>>()?,
            p_ess: num(f[c_ess])?,
            soc: num(f[c_soc])?,
            p_load: num(f[c_load])?,
            p_served: num(f[c_served])?,
            shed_fraction: num(f[c_shed])?,
            breaker_closed: brk_cols.iter().map(|&c| f[c] == "1").collect(),
            prearm: f[c_prearm] == "1",
        });
        if f[c_hop] == "1" {
            let h: Vec<&str> = hop_cols.iter().map(|&c| f[c]).collect();
            let criteria = if h[9].is_empty() {
                BTreeSet::new()
            } else {
                h[9].split(';').map(str::parse).collect::<Result<_>>()?
            };
            let decision = if h[10].is_empty() {
                None
            } else {
                Some(h[10].parse()?)
            };
            trace.hops.push(HopRecord {
                step: i,
                features: FeatureVector {
                    sag_depth: num(h[0])?,
                    sag_duration: num(h[1])?,
                    rocof: num(h[2])?,
                    thd: num(h[3])?,
                    df_mag: num(h[4])?,
                    delta_f: num(h[5])?,
                    persistence: h[6]
                        .parse()
                        .map_err(|_| NmgError::Parse(format!("bad persistence {:?}", h[6])))?,
                    t_since_precursor: num(h[7])?,
                },
                a: num(h[8])?,
                criteria,
                decision,
                c: num(h[11])?,
                i_mag: num(h[12])?,
                g: num(h[13])?,
                s_out: num(h[14])?,
            });
        }
        if !f[c_events].is_empty() {
            for e in f[c_events].split(';') {
                trace.events.push(Event {
                    step: i,
                    kind: EventKind::decode(e)?,
                });
            }
        }
    }
    Ok(trace)
}

/// Line plots of Δf, v, g and s_out with vertical markers at events.
pub fn trace_to_svg(trace: &Trace) -> String {
    const W: f64 = 800.0;
    const PANEL: f64 = 150.0;
    let t_end = trace.steps.last().map(|s| s.t).unwrap_or(1.0).max(1e-9);
    let channels: Vec<(&str, Vec<(f64, f64)>)> = vec![
        (
            "delta_f",
            trace.steps.iter().map(|s| (s.t, s.delta_f)).collect(),
        ),
        ("v", trace.steps.iter().map(|s| (s.t, s.v)).collect()),
        (
            "g",
            trace
                .hops
                .iter()
                .map(|h| (trace.steps[h.step].t, h.g))
                .collect(),
        ),
        (
            "s_out",
            trace
                .hops
                .iter()
                .map(|h| (trace.steps[h.step].t, h.s_out))
                .collect(),
        ),
    ];
    let height = PANEL * channels.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" viewBox="0 0 {W} {height}">"#
    );
    for (k, (name, pts)) in channels.iter().enumerate() {
        let top = k as f64 * PANEL;
        let (lo, hi) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| {
                (l.min(p.1), h.max(p.1))
            });
        let (lo, hi) = if lo.is_finite() && hi > lo {
            (lo, hi)
        } else {
            (lo.min(0.0) - 1.0, hi.max(0.0) + 1.0)
        };
        let coords: Vec<String> = pts
            .iter()
            .map(|(t, y)| {
                let x = t / t_end * W;
                let yy = top + PANEL - 10.0 - (y - lo) / (hi - lo) * (PANEL - 20.0);
                format!("{x:.2},{yy:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<text x="4" y="{}" font-size="12">{name}</text>"#,
            top + 14.0
        );
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="black" stroke-width="1" data-channel="{name}" points="{}"/>"#,
            coords.join(" ")
        );
    }
    for e in &trace.events {
        let color = match e.kind {
            EventKind::Injection(_) => "blue",
            EventKind::Detection(_) => "green",
            EventKind::Action(_) => "red",
            EventKind::HardOverride(_) => "purple",
        };
        let x = trace.steps[e.step].t / t_end * W;
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="0" x2="{x:.2}" y2="{height}" stroke="{color}" stroke-dasharray="4 2"/>"#
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| NmgError::io(dir, e))?;
        }
    }
    fs::write(path, body).map_err(|e| NmgError::io(path, e))
}

pub fn emit_trace(trace: &Trace, format: Format, path: &Path) -> Result<()> {
    let body = match format {
        Format::Csv => trace_to_csv(trace),
        Format::Svg => trace_to_svg(trace),
        Format::Json => serde_json::to_string(trace).map_err(|e| NmgError::Parse(e.to_string()))?,
    };
    write_file(path, &body)
}

pub fn emit_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(value).map_err(|e| NmgError::Parse(e.to_string()))?;
    write_file(path, &body)
}

pub fn read_trace_csv(path: &Path) -> Result<Trace> {
    let text = fs::read_to_string(path).map_err(|e| NmgError::io(path, e))?;
    trace_from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::ElementId;

    fn flat_trace(n: usize, df: impl Fn(usize) -> f64) -> Trace {
        Trace {
            elements: vec!["feeder0".into(), "ess".into()],
            steps: (0..n)
                .map(|i| StepRecord {
                    t: (i + 1) as f64 * 0.001,
                    delta_f: df(i),
                    v: 1.0,
                    p_dg: vec![0.4, 0.4],
                    p_ess: 0.0,
                    soc: 0.8,
                    p_load: 0.8,
                    p_served: 0.8,
                    shed_fraction: 0.0,
                    breaker_closed: vec![true, true],
                    prearm: false,
                })
                .collect(),
            hops: vec![],
            events: vec![],
        }
    }

    #[test]
    fn quiescent_kpis() {
        let k = compute_kpis(
            &flat_trace(1000, |_| 0.0),
            GroundTruth::Benign,
            &KpiConfig::default(),
        )
        .unwrap();
        assert_eq!(k, KpiReport::quiescent());
    }

    #[test]
    fn false_trip_counted_only_for_benign() {
        let mut tr = flat_trace(100, |_| 0.0);
        tr.events.push(Event {
            step: 40,
            kind: EventKind::Action(ProtectionAction::Trip(ElementId::Feeder(0))),
        });
        let cfg = KpiConfig::default();
        assert_eq!(
            compute_kpis(&tr, GroundTruth::Benign, &cfg)
                .unwrap()
                .false_trips,
            1
        );
        assert_eq!(
            compute_kpis(&tr, GroundTruth::Harmful, &cfg)
                .unwrap()
                .false_trips,
            0
        );
    }

    #[test]
    fn rectangle_deviation_area() {
        // -0.01 pu for 2 s inside a 3 s trace.
        let tr = flat_trace(3000, |i| if (500..2500).contains(&i) { -0.01 } else { 0.0 });
        let k = compute_kpis(&tr, GroundTruth::Unlabeled, &KpiConfig::default()).unwrap();
        assert!((k.freq_dev_area - 0.02).abs() < 1e-12);
        assert_eq!(k.nadir, -0.01);
    }

    #[test]
    fn missed_fault_deadline() {
        let mut tr = flat_trace(1000, |_| 0.0);
        tr.events.push(Event {
            step: 100,
            kind: EventKind::Injection(InjectionTag::Fault),
        });
        let cfg = KpiConfig::default();
        assert_eq!(
            compute_kpis(&tr, GroundTruth::Harmful, &cfg)
                .unwrap()
                .missed_faults,
            1
        );
        tr.events.push(Event {
            step: 300,
            kind: EventKind::Action(ProtectionAction::Trip(ElementId::Dg(1))),
        });
        assert_eq!(
            compute_kpis(&tr, GroundTruth::Harmful, &cfg)
                .unwrap()
                .missed_faults,
            0
        );
        tr.events.pop();
        tr.events.push(Event {
            step: 301,
            kind: EventKind::Action(ProtectionAction::Trip(ElementId::Dg(1))),
        });
        assert_eq!(
            compute_kpis(&tr, GroundTruth::Harmful, &cfg)
                .unwrap()
                .missed_faults,
            1
        );
    }

    #[test]
    fn empty_trace_rejected() {
        assert!(matches!(
            compute_kpis(
                &Trace::default(),
                GroundTruth::Benign,
                &KpiConfig::default()
            ),
            Err(NmgError::EmptyTrace)
        ));
    }

    #[test]
    fn compare_examples() {
        let r = |x: f64| KpiReport {
            freq_dev_area: x,
            ..KpiReport::quiescent()
        };
        let a = ControllerReports {
            controller: "a".into(),
            reports: vec![("s0".into(), r(0.1)), ("s1".into(), r(0.3))],
        };
        let same = ControllerReports {
            controller: "b".into(),
            ..a.clone()
        };
        let t = compare(&[a.clone(), same]).unwrap();
        assert_eq!(t.deltas[0].delta, KpiMeans::default());
        assert!(matches!(
            compare(std::slice::from_ref(&a)),
            Err(NmgError::TooFewControllers(1))
        ));
        let other = ControllerReports {
            controller: "c".into(),
            reports: vec![("s0".into(), r(0.1))],
        };
        assert!(matches!(
            compare(&[a, other]),
            Err(NmgError::MismatchedSuites(_))
        ));
    }

    #[test]
    fn empty_trace_csv_is_header_only() {
        let csv = trace_to_csv(&Trace::default());
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("t,delta_f,v,"));
    }

    #[test]
    fn csv_roundtrip_preserves_kpis() {
        let mut tr = flat_trace(500, |i| -1e-4 * (i as f64).sqrt() / 3.0);
        tr.hops.push(HopRecord {
            step: 99,
            features: FeatureVector {
                rocof: -0.7123456789,
                ..Default::default()
            },
            a: 0.3,
            criteria: [Criterion::RoCoFDefiniteTime].into_iter().collect(),
            decision: Some(DecisionKind::Facilitate),
            c: 0.6,
            i_mag: 0.0,
            g: 1.6,
            s_out: 0.48,
        });
        tr.events.push(Event {
            step: 99,
            kind: EventKind::Detection(PrecursorKind::LoadFluctuation),
        });
        tr.events.push(Event {
            step: 99,
            kind: EventKind::Action(ProtectionAction::Shed(0.1)),
        });
        let back = trace_from_csv(&trace_to_csv(&tr)).unwrap();
        assert_eq!(back.events, tr.events);
        assert_eq!(back.hops[0].decision, Some(DecisionKind::Facilitate));
        let cfg = KpiConfig::default();
        for truth in [GroundTruth::Benign, GroundTruth::Harmful] {
            assert_eq!(
                compute_kpis(&back, truth, &cfg).unwrap(),
                compute_kpis(&tr, truth, &cfg).unwrap()
            );
        }
    }

    #[test]
    fn kpi_json_roundtrip() {
        let k = KpiReport {
            freq_dev_area: 0.1 + 0.2,
            nadir: -1.0 / 3.0,
            overshoot: 2e-17,
            rocof_violations: 3,
            false_trips: 1,
            missed_faults: 0,
            ess_stress: std::f64::consts::PI,
            served_fraction: 0.987654321012345,
        };
        assert_eq!(KpiReport::from_json(&k.to_json().unwrap()).unwrap(), k);
    }

    #[test]
    fn svg_has_one_polyline_per_channel() {
        let mut tr = flat_trace(10_000, |i| (i as f64 * 1e-3).sin() * 1e-3);
        tr.events.push(Event {
            step: 5000,
            kind: EventKind::Injection(InjectionTag::Sag),
        });
        let svg = trace_to_svg(&tr);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert_eq!(svg.matches("<line ").count(), 1);
        assert_eq!(svg.matches('<').count(), svg.matches('>').count());
    }
}
