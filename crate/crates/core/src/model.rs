use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::audit::AuditReport;
use crate::calendar::Calendar;
use crate::error::Error;

/// Which mathematical space an indicator's daily update runs in. Values on
/// disk and in bounds/slope checks are always in natural units; the transform
/// only shapes the latent dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// Natural log, for positive skewed quantities (steps, HRV).
    Log,
    /// Logit of the position inside [lower, upper], for saturating quantities
    /// (SpO2, sleep-stage ratios).
    Logit,
}

/// Device noise factor groups. One shared factor per group plus one global
/// factor gives the low-rank part of the daily noise covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorGroup {
    Sleep,
    Cardiovascular,
    Metabolic,
    Activity,
    Weight,
    BloodOxygen,
}

pub const ALL_GROUPS: [IndicatorGroup; 6] = [
    IndicatorGroup::Sleep,
    IndicatorGroup::Cardiovascular,
    IndicatorGroup::Metabolic,
    IndicatorGroup::Activity,
    IndicatorGroup::Weight,
    IndicatorGroup::BloodOxygen,
];

/// Number of shared noise factors: one global plus one per group.
pub const NOISE_FACTORS: usize = 1 + ALL_GROUPS.len();

/// How quickly an indicator responds; selects the trailing window used when
/// anchoring exams to device data (7 days for fast, 28 for slow).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedClass {
    Fast,
    Slow,
}

impl SpeedClass {
    pub fn window_days(self) -> i64 {
        match self {
            SpeedClass::Fast => 7,
            SpeedClass::Slow => 28,
        }
    }
}

/// Where an indicator shows up: continuous device stream, sparse exam panel,
/// or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorSources {
    Device,
    Exam,
    Both,
}

impl IndicatorSources {
    pub fn on_device(self) -> bool {
        matches!(self, IndicatorSources::Device | IndicatorSources::Both)
    }
    pub fn on_exam(self) -> bool {
        matches!(self, IndicatorSources::Exam | IndicatorSources::Both)
    }
}

/// Static physiology of one indicator: units, baseline, seasonality, inertia,
/// hard bounds, slope limit, soft cap on event effects, noise loadings.
/// Baselines are personalized per user; everything else is shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorSpec {
    pub key: String,
    /// UCUM unit code.
    pub unit: String,
    pub group: IndicatorGroup,
    pub sources: IndicatorSources,
    pub transform: Transform,
    /// Baseline level in natural units.
    pub baseline: f64,
    /// Additive weekday offsets in natural units, Monday first.
    pub weekday_offsets: [f64; 7],
    /// Annual sinusoid amplitude in natural units.
    pub annual_amplitude: f64,
    /// Day of year (1..=366) where the annual sinusoid peaks.
    pub annual_phase_day: f64,
    /// AR(1) inertia, 0 <= phi < 1.
    pub inertia: f64,
    /// Hard physiologic bounds [lower, upper] in natural units.
    pub bounds: [f64; 2],
    /// Max credible day-to-day change in natural units.
    pub slope_limit: f64,
    /// Soft cap on the combined event effect, in transform-domain units.
    pub soft_cap: f64,
    /// Loadings onto [global, sleep, cardio, metabolic, activity, weight,
    /// blood_oxygen] shared noise factors, transform-domain units.
    pub noise_loadings: [f64; 7],
    /// Idiosyncratic noise variance, transform-domain units squared.
    pub idio_variance: f64,
    pub speed_class: SpeedClass,
    /// Clinical reference range [low, high] for exam panels; `None` for
    /// device-only indicators. Values at the bounds count as normal.
    pub reference_range: Option<[f64; 2]>,
}

impl IndicatorSpec {
    /// Largest deterministic seasonal excursion away from the baseline.
    pub fn seasonal_spread(&self) -> f64 {
        let wk = self
            .weekday_offsets
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        wk + self.annual_amplitude.abs()
    }

    /// Checks the structural invariants; returns a description of the first
    /// problem found.
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("indicator {}: {msg}", self.key)));
        if self.key.is_empty() {
            return bad("empty key".into());
        }
        if self.unit.is_empty() {
            return bad("empty unit".into());
        }
        let [lo, hi] = self.bounds;
        if !(lo < hi) {
            return bad(format!("bounds [{lo}, {hi}] not ordered"));
        }
        if !(self.baseline > lo && self.baseline < hi) {
            return bad(format!("baseline {} outside open bounds", self.baseline));
        }
        if !(0.0..1.0).contains(&self.inertia) {
            return bad(format!("inertia {} outside [0, 1)", self.inertia));
        }
        if !(self.slope_limit > 0.0) {
            return bad(format!("slope_limit {} not positive", self.slope_limit));
        }
        if !(self.soft_cap > 0.0) {
            return bad(format!("soft_cap {} not positive", self.soft_cap));
        }
        if !(self.idio_variance > 0.0) {
            return bad(format!("idio_variance {} not positive", self.idio_variance));
        }
        if !(1.0..=366.0).contains(&self.annual_phase_day) {
            return bad(format!("annual_phase_day {} outside 1..=366", self.annual_phase_day));
        }
        // The whole seasonal baseline band must stay inside the transform
        // domain, otherwise the latent update is undefined on some weekday.
        let spread = self.seasonal_spread();
        let band = [self.baseline - spread, self.baseline + spread];
        if !(band[0] > lo && band[1] < hi) {
            return bad(format!(
                "seasonal band [{:.4}, {:.4}] leaves open bounds ({lo}, {hi})",
                band[0], band[1]
            ));
        }
        if self.transform == Transform::Log && band[0] <= 0.0 {
            return bad(format!("log transform needs positive band, got {:.4}", band[0]));
        }
        if let Some([rl, rh]) = self.reference_range {
            if !(rl < rh) {
                return bad(format!("reference_range [{rl}, {rh}] not ordered"));
            }
        }
        if self.sources.on_exam() && self.reference_range.is_none() {
            return bad("exam indicator needs a reference_range".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeStratum {
    #[serde(rename = "18-44")]
    Young,
    #[serde(rename = "45-64")]
    Middle,
    #[serde(rename = "65+")]
    Older,
}

impl AgeStratum {
    pub fn age_range(self) -> (u32, u32) {
        match self {
            AgeStratum::Young => (18, 44),
            AgeStratum::Middle => (45, 64),
            AgeStratum::Older => (65, 88),
        }
    }

    pub fn contains(self, age: u32) -> bool {
        let (lo, hi) = self.age_range();
        age >= lo && age <= hi
    }
}

/// Demographics and health context for one synthetic user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub user_id: String,
    pub age: u32,
    pub sex: Sex,
    pub age_stratum: AgeStratum,
    /// Chronic condition keys, sorted; empty means healthy.
    pub conditions: Vec<String>,
    pub lifestyle_tags: Vec<String>,
    pub medications: Vec<String>,
}

/// One narrative phase of a trajectory. `start_day` is inclusive, `end_day`
/// exclusive; a boundary day belongs to the later phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub index: usize,
    pub name: String,
    pub start_day: i64,
    pub end_day: i64,
    pub start_date: String,
    pub end_date: String,
    pub theme_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryPlan {
    pub overall_theme: String,
    pub phases: Vec<Phase>,
}

impl TrajectoryPlan {
    pub fn horizon(&self) -> i64 {
        self.phases.last().map(|p| p.end_day).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventCategory {
    HealthEvent,
    DietChange,
    ExerciseChange,
    LongTermHabit,
}

/// Effect of one event on one indicator: magnitude in transform-domain units
/// plus onset and fade time constants in days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventImpact {
    pub indicator_key: String,
    pub beta: f64,
    pub tau_rise: f64,
    pub tau_fade: f64,
}

/// A discrete life event. Active over (start_day, end_day], then fades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub event_id: String,
    pub category: EventCategory,
    pub name: String,
    pub start_day: i64,
    pub duration_days: i64,
    /// Always `start_day + duration_days`; may run past the horizon, in which
    /// case the tail is simply unobserved.
    pub end_day: i64,
    pub phase_index: usize,
    pub impacts: Vec<EventImpact>,
}

impl Event {
    pub fn max_fade(&self) -> f64 {
        self.impacts.iter().fold(0.0f64, |m, i| m.max(i.tau_fade))
    }

    /// Last day (inclusive) on which any impact kernel can be nonzero.
    pub fn last_effect_day(&self) -> i64 {
        self.end_day + self.max_fade().ceil() as i64
    }

    pub fn affects(&self, indicator_key: &str) -> bool {
        self.impacts.iter().any(|i| i.indicator_key == indicator_key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsenceCode {
    DeviceNotWorn,
    SensorError,
    ScheduledGap,
}

/// Per-day additive pieces of the latent update, all in transform-domain
/// units except `post_value`. They satisfy
/// `baseline_seasonal + ar_residual + delta_evt + noise == proposal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decomposition {
    pub baseline_seasonal: f64,
    pub ar_residual: f64,
    pub delta_evt: f64,
    pub noise: f64,
    /// Raw event sum before the soft cap, for attribution.
    pub event_sum_raw: f64,
    /// Pre-projection proposal, transform domain.
    pub proposal: f64,
    /// Post-projection value, natural units.
    pub post_value: f64,
}

/// Projection bookkeeping. The first two are measured on the natural-unit
/// image of the proposal, before any clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DayFlags {
    pub range_violated: bool,
    pub slope_violated: bool,
    pub clipped: bool,
}

/// One observed day of one indicator. `value` is `None` exactly when an
/// absence code is present; the latent decomposition is recorded either way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DayPoint {
    pub value: Option<f64>,
    pub absence: Option<AbsenceCode>,
    pub decomposition: Decomposition,
    pub flags: DayFlags,
}

/// Daily series for one indicator over the full horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSeries {
    pub indicator_key: String,
    pub unit: String,
    pub values: Vec<DayPoint>,
}

impl DeviceSeries {
    pub fn numeric(&self, day: i64) -> Option<f64> {
        self.values.get(day as usize).and_then(|p| p.value)
    }

    /// Iterator over (day, value) for numeric days in [from, to] inclusive,
    /// clamped to the series.
    pub fn numeric_range(&self, from: i64, to: i64) -> impl Iterator<Item = (i64, f64)> + '_ {
        let n = self.values.len() as i64;
        let lo = from.max(0).min(n);
        let hi = (to + 1).clamp(lo, n);
        self.values[lo as usize..hi as usize]
            .iter()
            .enumerate()
            .filter_map(move |(i, p)| p.value.map(|v| (lo + i as i64, v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultStatus {
    Normal,
    Abnormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExamResult {
    pub indicator_key: String,
    pub value: f64,
    pub unit: String,
    pub reference_range: [f64; 2],
    pub status: ResultStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExamVisit {
    pub visit_day: i64,
    pub date: String,
    pub results: Vec<ExamResult>,
    /// Mechanical recap: lists abnormal keys, or "all results normal".
    pub summary: String,
}

/// Reproduction record: everything needed to regenerate this user bit for bit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsRecord {
    pub root_seed: u64,
    pub user_index: u32,
    pub user_seed: String,
    pub scheme: String,
    pub epoch: String,
    pub horizon_days: i64,
    /// Kernel fade anchoring the cohort was generated with; downstream
    /// consumers (queries, plots) need it to reproduce event effects.
    #[serde(default)]
    pub fade_mode: crate::dynamics::FadeMode,
}

/// Everything generated for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserBundle {
    pub profile: Profile,
    pub plan: TrajectoryPlan,
    pub device: BTreeMap<String, DeviceSeries>,
    pub exams: Vec<ExamVisit>,
    pub events: Vec<Event>,
    pub audit: AuditReport,
    pub seeds: SeedsRecord,
}

impl UserBundle {
    pub fn horizon(&self) -> i64 {
        self.seeds.horizon_days
    }

    pub fn calendar(&self) -> Result<Calendar, Error> {
        Calendar::parse(&self.seeds.epoch)
    }

    pub fn event(&self, event_id: &str) -> Option<&Event> {
        self.events.iter().find(|e| e.event_id == event_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Lookup,
    Trend,
    Comparison,
    Anomaly,
    Explanation,
}

pub const ALL_DIMENSIONS: [Dimension; 5] = [
    Dimension::Lookup,
    Dimension::Trend,
    Dimension::Comparison,
    Dimension::Anomaly,
    Dimension::Explanation,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Easy,
    Medium,
    Hard,
}

pub const ALL_TIERS: [Tier; 3] = [Tier::Easy, Tier::Medium, Tier::Hard];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Number,
    Date,
    String,
    Set,
    RankedList,
}

/// A scalar answer component: numeric or text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerValue {
    Number(f64),
    Text(String),
}

impl AnswerValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            AnswerValue::Number(n) => Some(*n),
            AnswerValue::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            AnswerValue::Number(_) => None,
            AnswerValue::Text(t) => Some(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    Device,
    Exam,
    Event,
    Derived,
}

/// Pointer from an answer back into the bundle: an entity id (indicator key,
/// event id, visit day) plus the day window it covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Evidence {
    pub entity: String,
    pub window: [i64; 2],
}

/// The canonical machine-checkable answer format. Agents under evaluation
/// submit exactly this shape; ground truth uses it too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalAnswer {
    pub answer_type: AnswerKind,
    #[serde(default)]
    pub values: Vec<AnswerValue>,
    #[serde(default)]
    pub dates: Vec<String>,
    #[serde(default)]
    pub unit: Option<String>,
    #[serde(default)]
    pub source: Option<AnswerSource>,
    #[serde(default)]
    pub evidence: Vec<Evidence>,
}

impl CanonicalAnswer {
    pub fn empty(answer_type: AnswerKind) -> Self {
        CanonicalAnswer {
            answer_type,
            values: Vec::new(),
            dates: Vec::new(),
            unit: None,
            source: None,
            evidence: Vec::new(),
        }
    }
}

/// Ground truth wraps the canonical answer with matching semantics: ordering
/// keys for ranked lists, and `any_of` when a singular question has a tying
/// set (any member is accepted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub answer: CanonicalAnswer,
    #[serde(default)]
    pub ranking_keys: Vec<f64>,
    #[serde(default)]
    pub any_of: bool,
    /// Caveats worth surfacing, e.g. a whole-series baseline fallback.
    #[serde(default)]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub query_id: String,
    pub dimension: Dimension,
    pub tier: Tier,
    pub subtype: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub text: String,
    pub ground_truth: GroundTruth,
}

/// A structural problem found in a bundle. Validation reports all findings
/// instead of stopping at the first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Subsystem area, e.g. "device", "plan", "exam".
    pub area: String,
    /// Where it happened: indicator key, day, event id.
    pub locus: String,
    pub message: String,
}

impl Violation {
    fn new(area: &str, locus: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            area: area.into(),
            locus: locus.into(),
            message: message.into(),
        }
    }
}

/// Tolerance for the additive decomposition identity, transform-domain units.
pub const DECOMPOSITION_TOL: f64 = 1e-9;

/// Slack applied to bound and slope checks to absorb round-trip float noise.
const CHECK_EPS: f64 = 1e-9;

/// Structural invariant sweep over a full bundle. Returns every violation
/// found; an empty vector means the bundle is internally consistent.
pub fn validate_bundle(
    bundle: &UserBundle,
    specs: &BTreeMap<String, IndicatorSpec>,
    known_conditions: &BTreeSet<String>,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let horizon = bundle.horizon();

    // Profile.
    let p = &bundle.profile;
    if p.user_id.is_empty() {
        out.push(Violation::new("profile", "user_id", "empty user_id"));
    }
    if !p.age_stratum.contains(p.age) {
        out.push(Violation::new(
            "profile",
            &p.user_id,
            format!("age {} outside stratum {:?}", p.age, p.age_stratum),
        ));
    }
    for c in &p.conditions {
        if !known_conditions.contains(c) {
            out.push(Violation::new("profile", c, "condition not in catalog"));
        }
    }

    // Plan: exact tiling of [0, horizon), phases at least 30 days, boundary
    // days belong to the later phase by construction of half-open spans.
    if bundle.plan.phases.is_empty() {
        out.push(Violation::new("plan", "phases", "no phases"));
    } else {
        let mut cursor = 0i64;
        for ph in &bundle.plan.phases {
            if ph.start_day != cursor {
                out.push(Violation::new(
                    "plan",
                    format!("phase {}", ph.index),
                    format!("starts at {} expected {}", ph.start_day, cursor),
                ));
            }
            if ph.end_day - ph.start_day < 30 {
                out.push(Violation::new(
                    "plan",
                    format!("phase {}", ph.index),
                    format!("duration {} below 30 days", ph.end_day - ph.start_day),
                ));
            }
            cursor = ph.end_day;
        }
        if cursor != horizon {
            out.push(Violation::new(
                "plan",
                "phases",
                format!("tiling ends at {cursor}, horizon is {horizon}"),
            ));
        }
        let n = bundle.plan.phases.len() as i64;
        let expected = ((horizon as f64) / 106.0).round() as i64;
        let expected = expected.clamp(4, 20);
        if (n - expected).abs() > 2 {
            out.push(Violation::new(
                "plan",
                "phases",
                format!("{n} phases, expected about {expected}"),
            ));
        }
    }

    // Device series.
    for (key, series) in &bundle.device {
        let Some(spec) = specs.get(key) else {
            out.push(Violation::new("device", key, "indicator not in catalog"));
            continue;
        };
        if series.indicator_key != *key {
            out.push(Violation::new("device", key, "map key and series key differ"));
        }
        if series.unit != spec.unit {
            out.push(Violation::new(
                "device",
                key,
                format!("unit {} does not match catalog {}", series.unit, spec.unit),
            ));
        }
        if series.values.len() as i64 != horizon {
            out.push(Violation::new(
                "device",
                key,
                format!("{} day points, horizon is {horizon}", series.values.len()),
            ));
        }
        let [lo, hi] = spec.bounds;
        let mut last_numeric: Option<(i64, f64)> = None;
        for (day, point) in series.values.iter().enumerate() {
            let day = day as i64;
            match (point.value, point.absence) {
                (Some(_), Some(_)) => out.push(Violation::new(
                    "device",
                    format!("{key} day {day}"),
                    "both value and absence code present",
                )),
                (None, None) => out.push(Violation::new(
                    "device",
                    format!("{key} day {day}"),
                    "neither value nor absence code present",
                )),
                _ => {}
            }
            if let Some(v) = point.value {
                if !(lo - CHECK_EPS..=hi + CHECK_EPS).contains(&v) {
                    out.push(Violation::new(
                        "device",
                        format!("{key} day {day}"),
                        format!("value {v} outside bounds [{lo}, {hi}]"),
                    ));
                }
                if let Some((prev_day, prev)) = last_numeric {
                    let gap = (day - prev_day) as f64;
                    if (v - prev).abs() > spec.slope_limit * gap + CHECK_EPS {
                        out.push(Violation::new(
                            "device",
                            format!("{key} day {day}"),
                            format!(
                                "step {:.4} over {gap} day(s) exceeds slope limit {}",
                                v - prev,
                                spec.slope_limit
                            ),
                        ));
                    }
                }
                last_numeric = Some((day, v));
            }
            let d = &point.decomposition;
            let resum = d.baseline_seasonal + d.ar_residual + d.delta_evt + d.noise;
            if (resum - d.proposal).abs() > DECOMPOSITION_TOL {
                out.push(Violation::new(
                    "device",
                    format!("{key} day {day}"),
                    format!("decomposition off by {:e}", resum - d.proposal),
                ));
            }
            if d.delta_evt.abs() >= spec.soft_cap {
                out.push(Violation::new(
                    "device",
                    format!("{key} day {day}"),
                    format!("event effect {} at or past soft cap {}", d.delta_evt, spec.soft_cap),
                ));
            }
        }
    }

    // Events.
    let mut seen_ids = BTreeSet::new();
    for ev in &bundle.events {
        if !seen_ids.insert(ev.event_id.as_str()) {
            out.push(Violation::new("event", &ev.event_id, "duplicate event_id"));
        }
        if ev.impacts.is_empty() {
            out.push(Violation::new("event", &ev.event_id, "no impacts"));
        }
        if ev.duration_days < 1 {
            out.push(Violation::new(
                "event",
                &ev.event_id,
                format!("duration {} below 1 day", ev.duration_days),
            ));
        }
        if ev.end_day != ev.start_day + ev.duration_days {
            out.push(Violation::new(
                "event",
                &ev.event_id,
                "end_day is not start_day + duration_days",
            ));
        }
        if ev.start_day < 0 || ev.start_day >= horizon {
            out.push(Violation::new(
                "event",
                &ev.event_id,
                format!("start_day {} outside horizon", ev.start_day),
            ));
        }
        if ev.phase_index >= bundle.plan.phases.len() {
            out.push(Violation::new(
                "event",
                &ev.event_id,
                format!("phase_index {} out of range", ev.phase_index),
            ));
        }
        for imp in &ev.impacts {
            let Some(spec) = specs.get(&imp.indicator_key) else {
                out.push(Violation::new(
                    "event",
                    &ev.event_id,
                    format!("impact on unknown indicator {}", imp.indicator_key),
                ));
                continue;
            };
            if imp.beta.abs() > 2.0 * spec.soft_cap + CHECK_EPS {
                out.push(Violation::new(
                    "event",
                    &ev.event_id,
                    format!(
                        "impact beta {} exceeds twice the soft cap of {}",
                        imp.beta, imp.indicator_key
                    ),
                ));
            }
            if imp.tau_rise <= 0.0 || imp.tau_fade <= 0.0 {
                out.push(Violation::new(
                    "event",
                    &ev.event_id,
                    format!("non-positive time constants on {}", imp.indicator_key),
                ));
            }
        }
    }

    // Exams.
    let mut prev_day = i64::MIN;
    for visit in &bundle.exams {
        let locus = format!("visit day {}", visit.visit_day);
        if visit.visit_day <= prev_day {
            out.push(Violation::new("exam", &locus, "visit days not strictly increasing"));
        }
        prev_day = visit.visit_day;
        if visit.visit_day < 0 || visit.visit_day >= horizon {
            out.push(Violation::new("exam", &locus, "visit day outside horizon"));
        }
        for r in &visit.results {
            let Some(spec) = specs.get(&r.indicator_key) else {
                out.push(Violation::new(
                    "exam",
                    &locus,
                    format!("result for unknown indicator {}", r.indicator_key),
                ));
                continue;
            };
            let [lo, hi] = spec.bounds;
            if !(lo - CHECK_EPS..=hi + CHECK_EPS).contains(&r.value) {
                out.push(Violation::new(
                    "exam",
                    &locus,
                    format!("{} value {} outside bounds", r.indicator_key, r.value),
                ));
            }
            let [rl, rh] = r.reference_range;
            let expect = if r.value < rl || r.value > rh {
                ResultStatus::Abnormal
            } else {
                ResultStatus::Normal
            };
            if r.status != expect {
                out.push(Violation::new(
                    "exam",
                    &locus,
                    format!("{} status disagrees with reference range", r.indicator_key),
                ));
            }
        }
    }

    // Seeds.
    if bundle.seeds.horizon_days != horizon || horizon <= 0 {
        out.push(Violation::new("seeds", "horizon_days", "bad horizon"));
    }
    if Calendar::parse(&bundle.seeds.epoch).is_err() {
        out.push(Violation::new("seeds", "epoch", "unparseable epoch date"));
    }

    out
}
