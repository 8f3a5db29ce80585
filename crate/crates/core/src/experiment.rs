//! Listening-test protocol: session schedules for the plausibility,
//! overall-difference and externalization paradigms, response validation,
//! the append-only response log and summary statistics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{AlodPreset, Presentation};

/// Speech and pulse signals per plausibility session.
pub const PLAUSIBILITY_SIGNALS_PER_KIND: usize = 8;
/// Presentations of every signal in a plausibility session.
pub const PLAUSIBILITY_REPEATS: usize = 3;
/// Test-retest correlation needed to pass.
pub const MIN_RETEST_CORRELATION: f64 = 0.7;
/// Fewer condition cells than this leave the correlation undefined.
pub const MIN_CORRELATION_POINTS: usize = 3;

pub const PLAUSIBILITY_QUESTION: &str = "Was the stimulus real or simulated?";
pub const DIFFERENCE_ANCHORS: [(f64, &str); 2] = [
    (0.0, "no difference to the reference"),
    (100.0, "very different to the reference"),
];
pub const EXTERNALIZATION_ANCHORS: [(f64, &str); 4] = [
    (100.0, "Clearly outside the head"),
    (66.0, "Close to the head"),
    (33.0, "Between the ears"),
    (0.0, "Central in the head"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    Plausibility,
    OverallDifference,
    Externalization,
}

/// Impulse-response source of a stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Measured,
    RazrFull,
    Razr1stOrder,
    RazrSimple,
    PlainIsm,
    Diotic,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::Measured,
        Condition::RazrFull,
        Condition::Razr1stOrder,
        Condition::RazrSimple,
        Condition::PlainIsm,
        Condition::Diotic,
    ];

    pub fn preset(self) -> Option<AlodPreset> {
        match self {
            Condition::Measured => None,
            Condition::RazrFull => Some(AlodPreset::RazrFull),
            Condition::Razr1stOrder => Some(AlodPreset::Razr1stOrder),
            Condition::RazrSimple => Some(AlodPreset::RazrSimple),
            Condition::PlainIsm => Some(AlodPreset::PlainIsm),
            Condition::Diotic => Some(AlodPreset::Diotic),
        }
    }

    /// Name used in configs, logs and reports.
    pub fn name(self) -> &'static str {
        match self {
            Condition::Measured => "measured",
            Condition::RazrFull => "razr",
            Condition::Razr1stOrder => "razr1",
            Condition::RazrSimple => "simple",
            Condition::PlainIsm => "ism",
            Condition::Diotic => "diotic",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Every string by which a condition could be recognised in a payload.
    pub fn identifying_strings() -> Vec<String> {
        let mut out = Vec::new();
        for c in Self::ALL {
            out.push(c.name().to_string());
            let debug = format!("{c:?}");
            out.push(debug.to_lowercase());
            out.push(to_snake(&debug));
        }
        out.sort();
        out.dedup();
        out
    }
}

fn to_snake(s: &str) -> String {
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if ch.is_ascii_uppercase() && i > 0 {
            out.push('_');
        }
        out.push(ch.to_ascii_lowercase());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Speech,
    Pulse,
}

/// Dry target signal: sentence `index` or pulse variant `index`. Index 0 of
/// the pulse is the unmodified pulse in the rating paradigms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Signal {
    pub kind: SignalKind,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Test,
    Retest,
}

/// A rendered stimulus available to sessions. `key` locates the audio
/// (for the service: a file name below the stimulus directory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub key: String,
    pub scene: String,
    pub presentation: Presentation,
    pub condition: Condition,
    pub signal: Signal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub session_id: String,
    pub participant: String,
    pub paradigm: Paradigm,
    pub scene: String,
    pub presentation: Presentation,
    /// Conditions to present; for plausibility exactly one.
    pub conditions: Vec<Condition>,
    pub seed: u64,
    pub phase: Phase,
    #[serde(default)]
    pub training: bool,
    /// Playbacks allowed per plausibility trial; `None` means unlimited.
    #[serde(default = "default_plausibility_playbacks")]
    pub plausibility_playbacks: Option<u32>,
}

fn default_plausibility_playbacks() -> Option<u32> {
    Some(1)
}

/// One presented stimulus of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialItem {
    /// Opaque per-session id.
    pub stimulus_id: String,
    pub condition: Condition,
    pub signal: Signal,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub items: Vec<TrialItem>,
    /// Explicit reference of an overall-difference page.
    pub reference: Option<TrialItem>,
    pub repeat: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSchedule {
    pub spec: SessionSpec,
    pub trials: Vec<Trial>,
}

impl TrialSchedule {
    /// Stimulus ids used by this session with their audio keys.
    pub fn audio(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        for t in &self.trials {
            for it in t.items.iter().chain(t.reference.iter()) {
                m.insert(it.stimulus_id.clone(), it.key.clone());
            }
        }
        m
    }
}

/// Conditions a paradigm accepts for a presentation mode.
pub fn allowed_conditions(paradigm: Paradigm, presentation: Presentation) -> Vec<Condition> {
    use Condition::*;
    let mut c = match paradigm {
        Paradigm::Plausibility => vec![Measured, RazrFull, PlainIsm],
        Paradigm::OverallDifference => vec![Measured, RazrFull, PlainIsm, RazrSimple, Razr1stOrder],
        Paradigm::Externalization => vec![Measured, RazrFull, PlainIsm, RazrSimple, Razr1stOrder, Diotic],
    };
    if presentation == Presentation::Loudspeakers {
        c.retain(|&x| x != Measured);
    }
    if paradigm == Paradigm::Plausibility && presentation == Presentation::Loudspeakers {
        c.clear();
    }
    c
}

/// Condition set used when a config does not name one.
pub fn default_conditions(paradigm: Paradigm, presentation: Presentation) -> Vec<Condition> {
    use Condition::*;
    let mut c = match paradigm {
        Paradigm::Plausibility => vec![RazrFull],
        Paradigm::OverallDifference => vec![Measured, RazrFull, PlainIsm, RazrSimple, Razr1stOrder],
        Paradigm::Externalization => vec![Measured, RazrFull, PlainIsm, Diotic],
    };
    if presentation == Presentation::Loudspeakers {
        c.retain(|&x| x != Measured);
    }
    c
}

/// Signals a session of this paradigm presents.
pub fn session_signals(paradigm: Paradigm) -> Vec<Signal> {
    match paradigm {
        Paradigm::Plausibility => [SignalKind::Speech, SignalKind::Pulse]
            .into_iter()
            .flat_map(|kind| (0..PLAUSIBILITY_SIGNALS_PER_KIND).map(move |index| Signal { kind, index }))
            .collect(),
        _ => vec![
            Signal {
                kind: SignalKind::Speech,
                index: 0,
            },
            Signal {
                kind: SignalKind::Pulse,
                index: 0,
            },
        ],
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Opaque ids: 16 lowercase hex digits, unique within the session.
struct IdMint {
    state: u64,
    issued: BTreeMap<String, String>,
}

impl IdMint {
    fn new(spec: &SessionSpec) -> Self {
        Self {
            state: splitmix(spec.seed ^ fnv(&spec.session_id)),
            issued: BTreeMap::new(),
        }
    }

    /// Same key, same id within a session.
    fn id_for(&mut self, key: &str) -> String {
        if let Some(id) = self.issued.get(key) {
            return id.clone();
        }
        loop {
            self.state = splitmix(self.state);
            let id = format!("{:016x}", self.state);
            if !self.issued.values().any(|v| *v == id) {
                self.issued.insert(key.to_string(), id.clone());
                return id;
            }
        }
    }
}

/// Build the trial schedule of one session. Deterministic in `spec` and
/// catalog.
pub fn build_session(spec: &SessionSpec, catalog: &[CatalogEntry]) -> Result<TrialSchedule> {
    if spec.conditions.is_empty() {
        return Err(Error::Build("no conditions given".into()));
    }
    let allowed = allowed_conditions(spec.paradigm, spec.presentation);
    if let Some(c) = spec.conditions.iter().find(|c| !allowed.contains(c)) {
        return Err(Error::Build(format!(
            "condition {} is not available for {:?} over {:?}",
            c.name(),
            spec.paradigm,
            spec.presentation
        )));
    }
    let mut seen = spec.conditions.clone();
    seen.sort();
    seen.dedup();
    if seen.len() != spec.conditions.len() {
        return Err(Error::Build("conditions repeat".into()));
    }
    match spec.paradigm {
        Paradigm::Plausibility if spec.conditions.len() != 1 => {
            return Err(Error::Build("a plausibility session presents exactly one condition".into()))
        }
        Paradigm::OverallDifference if !spec.conditions.contains(&Condition::RazrFull) => {
            return Err(Error::Build("overall difference needs the razr condition as reference".into()))
        }
        _ => {}
    }
    let signals = session_signals(spec.paradigm);
    let lookup = |c: Condition, s: Signal| {
        catalog.iter().find(|e| {
            e.scene == spec.scene && e.presentation == spec.presentation && e.condition == c && e.signal == s
        })
    };
    let missing: Vec<String> = spec
        .conditions
        .iter()
        .flat_map(|&c| signals.iter().map(move |&s| (c, s)))
        .filter(|&(c, s)| lookup(c, s).is_none())
        .map(|(c, s)| format!("{}/{:?}{}", c.name(), s.kind, s.index))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Build(format!(
            "missing stimuli for scene {}: {}",
            spec.scene,
            missing.join(", ")
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mint = IdMint::new(spec);
    let mut item = |c: Condition, s: Signal| {
        let e = lookup(c, s).expect("checked above");
        TrialItem {
            stimulus_id: mint.id_for(&e.key),
            condition: c,
            signal: s,
            key: e.key.clone(),
        }
    };
    let mut trials = Vec::new();
    match spec.paradigm {
        Paradigm::Plausibility => {
            let c = spec.conditions[0];
            let mut order: Vec<(Signal, usize)> = signals
                .iter()
                .flat_map(|&s| (0..PLAUSIBILITY_REPEATS).map(move |r| (s, r)))
                .collect();
            order.shuffle(&mut rng);
            for (s, r) in order {
                trials.push(Trial {
                    index: trials.len(),
                    items: vec![item(c, s)],
                    reference: None,
                    repeat: r,
                });
            }
        }
        Paradigm::OverallDifference | Paradigm::Externalization => {
            let mut pages = signals.clone();
            pages.shuffle(&mut rng);
            for s in pages {
                let mut conds = spec.conditions.clone();
                conds.shuffle(&mut rng);
                let items = conds.iter().map(|&c| item(c, s)).collect();
                let reference = (spec.paradigm == Paradigm::OverallDifference).then(|| item(Condition::RazrFull, s));
                trials.push(Trial {
                    index: trials.len(),
                    items,
                    reference,
                    repeat: 0,
                });
            }
        }
    }
    Ok(TrialSchedule {
        spec: spec.clone(),
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Real,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponsePayload {
    Choice(Choice),
    /// One slider value per presented stimulus, in presentation order.
    Ratings(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub session_id: String,
    pub trial: usize,
    pub payload: ResponsePayload,
    /// Milliseconds since the Unix epoch, supplied by the caller.
    pub timestamp_ms: u64,
    #[serde(default)]
    pub playback_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    InProgress,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub min: f64,
    pub max: f64,
    pub anchors: Vec<(f64, String)>,
}

/// What a listener client sees of a trial. Contains no condition names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub session_id: String,
    pub paradigm: Paradigm,
    pub trial: usize,
    pub total: usize,
    pub training: bool,
    pub stimuli: Vec<String>,
    pub reference: Option<String>,
    pub question: Option<String>,
    pub choices: Option<Vec<Choice>>,
    pub scale: Option<Scale>,
    /// `None` means unlimited replay.
    pub max_playbacks: Option<u32>,
}

/// Session state: the schedule plus the append-only response log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub schedule: TrialSchedule,
    pub log: Vec<ResponseRecord>,
}

impl SessionState {
    pub fn new(schedule: TrialSchedule) -> Self {
        Self {
            schedule,
            log: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.schedule.spec.session_id
    }

    /// Index of the pending trial.
    pub fn cursor(&self) -> usize {
        self.log.len()
    }

    pub fn status(&self) -> SessionStatus {
        if self.cursor() >= self.schedule.trials.len() {
            SessionStatus::Complete
        } else {
            SessionStatus::InProgress
        }
    }

    fn max_playbacks(&self) -> Option<u32> {
        match self.schedule.spec.paradigm {
            Paradigm::Plausibility => self.schedule.spec.plausibility_playbacks,
            _ => None,
        }
    }

    pub fn next_view(&self) -> Option<TrialView> {
        let t = self.schedule.trials.get(self.cursor())?;
        let spec = &self.schedule.spec;
        let anchors = |a: &[(f64, &str)]| Scale {
            min: 0.0,
            max: 100.0,
            anchors: a.iter().map(|&(v, l)| (v, l.to_string())).collect(),
        };
        let (question, choices, scale) = match spec.paradigm {
            Paradigm::Plausibility => (
                Some(PLAUSIBILITY_QUESTION.to_string()),
                Some(vec![Choice::Real, Choice::Simulated]),
                None,
            ),
            Paradigm::OverallDifference => (None, None, Some(anchors(&DIFFERENCE_ANCHORS))),
            Paradigm::Externalization => (None, None, Some(anchors(&EXTERNALIZATION_ANCHORS))),
        };
        Some(TrialView {
            session_id: spec.session_id.clone(),
            paradigm: spec.paradigm,
            trial: t.index,
            total: self.schedule.trials.len(),
            training: spec.training,
            stimuli: t.items.iter().map(|i| i.stimulus_id.clone()).collect(),
            reference: t.reference.as_ref().map(|r| r.stimulus_id.clone()),
            question,
            choices,
            scale,
            max_playbacks: self.max_playbacks(),
        })
    }

    /// Check a response against the pending trial without changing state.
    pub fn check(&self, rec: &ResponseRecord) -> Result<()> {
        if rec.session_id != self.schedule.spec.session_id {
            return Err(Error::Sequencing(format!(
                "response for session {} submitted to {}",
                rec.session_id,
                self.id()
            )));
        }
        let cur = self.cursor();
        if rec.trial < cur {
            return Err(Error::Sequencing(format!("trial {} already answered", rec.trial)));
        }
        if rec.trial > cur || cur >= self.schedule.trials.len() {
            return Err(Error::Sequencing(format!(
                "trial {} submitted while trial {cur} of {} is pending",
                rec.trial,
                self.schedule.trials.len()
            )));
        }
        let trial = &self.schedule.trials[cur];
        match (&rec.payload, self.schedule.spec.paradigm) {
            (ResponsePayload::Choice(_), Paradigm::Plausibility) => {}
            (ResponsePayload::Ratings(v), Paradigm::OverallDifference | Paradigm::Externalization) => {
                if v.len() != trial.items.len() {
                    return crate::error::invalid(format!(
                        "one rating per stimulus: expected {}, got {}",
                        trial.items.len(),
                        v.len()
                    ));
                }
                if let Some(x) = v.iter().find(|x| !(0.0..=100.0).contains(*x)) {
                    return crate::error::invalid(format!("slider value {x} outside [0, 100]"));
                }
            }
            (p, paradigm) => {
                return crate::error::invalid(format!("payload {p:?} does not fit paradigm {paradigm:?}"));
            }
        }
        if let Some(max) = self.max_playbacks() {
            if rec.playback_count > max {
                return crate::error::invalid(format!(
                    "{} playbacks exceed the allowed {max}",
                    rec.playback_count
                ));
            }
        }
        Ok(())
    }

    /// Append a response for the pending trial. On error the log is
    /// unchanged.
    pub fn record_response(&mut self, rec: ResponseRecord) -> Result<&ResponseRecord> {
        self.check(&rec)?;
        self.log.push(rec);
        Ok(self.log.last().expect("just pushed"))
    }

    /// Rebuild a session from its schedule and a persisted log.
    pub fn replay(schedule: TrialSchedule, log: impl IntoIterator<Item = ResponseRecord>) -> Result<Self> {
        let mut s = Self::new(schedule);
        for r in log {
            s.record_response(r)?;
        }
        Ok(s)
    }
}

/// Linear-interpolation quantile of sorted data, `q` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Pearson correlation. `None` when fewer than two points or either
/// vector is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Distribution of one condition cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub paradigm: Paradigm,
    pub scene: String,
    pub presentation: Presentation,
    pub condition: Condition,
    pub signal: SignalKind,
    /// Per-session percent judged real (plausibility) or raw slider values.
    pub values: Vec<f64>,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reliability {
    pub participant: String,
    pub paradigm: Paradigm,
    pub points: usize,
    /// `None` when undefined (too few cells or a constant vector).
    pub r: Option<f64>,
    /// `r >= 0.7`; `None` when `r` is undefined.
    pub pass: Option<bool>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub cells: Vec<CellSummary>,
    pub reliability: Vec<Reliability>,
    /// Some session is unfinished; its answered trials are included.
    pub partial: bool,
    pub training_sessions_excluded: usize,
    pub difference_polarity: String,
}

type CellKey = (Paradigm, String, Presentation, Condition, SignalKind);

/// Per-cell scores of one session: percent "real" for plausibility, mean
/// rating otherwise. Also returns the raw values that enter the summary.
fn session_cells(s: &SessionState) -> BTreeMap<CellKey, (f64, Vec<f64>)> {
    let spec = &s.schedule.spec;
    let mut acc: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for rec in &s.log {
        let trial = &s.schedule.trials[rec.trial];
        match &rec.payload {
            ResponsePayload::Choice(c) => {
                let it = &trial.items[0];
                let key = (spec.paradigm, spec.scene.clone(), spec.presentation, it.condition, it.signal.kind);
                acc.entry(key)
                    .or_default()
                    .push(if *c == Choice::Real { 100.0 } else { 0.0 });
            }
            ResponsePayload::Ratings(v) => {
                for (it, x) in trial.items.iter().zip(v) {
                    let key = (spec.paradigm, spec.scene.clone(), spec.presentation, it.condition, it.signal.kind);
                    acc.entry(key).or_default().push(*x);
                }
            }
        }
    }
    acc.into_iter()
        .map(|(k, v)| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let raw = if k.0 == Paradigm::Plausibility { vec![mean] } else { v };
            (k, (mean, raw))
        })
        .collect()
}

/// Summaries over all non-training sessions, plus test-retest reliability
/// per participant and paradigm.
pub fn compute_stats(sessions: &[SessionState]) -> SessionStats {
    let mut values: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    let mut phases: BTreeMap<(String, Paradigm), [BTreeMap<CellKey, Vec<f64>>; 2]> = BTreeMap::new();
    let mut partial = false;
    let mut excluded = 0;
    for s in sessions {
        let spec = &s.schedule.spec;
        if spec.training {
            excluded += 1;
            continue;
        }
        partial |= s.status() != SessionStatus::Complete;
        let p = phases.entry((spec.participant.clone(), spec.paradigm)).or_default();
        let slot = if spec.phase == Phase::Test { 0 } else { 1 };
        for (k, (score, raw)) in session_cells(s) {
            values.entry(k.clone()).or_default().extend(raw);
            p[slot].entry(k).or_default().push(score);
        }
    }
    let cells = values
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            CellSummary {
                paradigm: k.0,
                scene: k.1,
                presentation: k.2,
                condition: k.3,
                signal: k.4,
                median: quantile_sorted(&v, 0.5),
                q25: quantile_sorted(&v, 0.25),
                q75: quantile_sorted(&v, 0.75),
                values: v,
            }
        })
        .collect();
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let reliability = phases
        .into_iter()
        .map(|((participant, paradigm), [test, retest])| {
            let (x, y): (Vec<f64>, Vec<f64>) = test
                .iter()
                .filter_map(|(k, v)| retest.get(k).map(|w| (mean(v), mean(w))))
                .unzip();
            let points = x.len();
            let (r, note) = if points < MIN_CORRELATION_POINTS {
                (
                    None,
                    Some(format!(
                        "correlation undefined: {points} condition cells with both test and retest, need {MIN_CORRELATION_POINTS}"
                    )),
                )
            } else {
                match pearson(&x, &y) {
                    Some(r) => (Some(r), None),
                    None => (None, Some("correlation undefined: constant ratings".to_string())),
                }
            };
            let pass = r.map(|r| r >= MIN_RETEST_CORRELATION);
            let note = match pass {
                Some(false) => Some(format!("below {MIN_RETEST_CORRELATION}: measure again")),
                _ => note,
            };
            Reliability {
                participant,
                paradigm,
                points,
                r,
                pass,
                note,
            }
        })
        .collect();
    SessionStats {
        cells,
        reliability,
        partial,
        training_sessions_excluded: excluded,
        difference_polarity: "0 = no difference to the reference, 100 = very different to the reference".into(),
    }
}
