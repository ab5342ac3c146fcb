use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calendar::Calendar;
use crate::dynamics::FadeMode;
use crate::error::Error;
use crate::model::{
    AgeStratum, EventCategory, IndicatorGroup, IndicatorSources, IndicatorSpec, SpeedClass,
    Transform,
};

/// Gate thresholds for event spawning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparsityConfig {
    /// Max event starts inside any trailing 7-day window.
    pub weekly_cap: u32,
    /// Max concurrently active events (duration or fade).
    pub max_active: u32,
    /// No events before this day.
    pub warmup_days: i64,
    /// Ceiling on the per-day spawn probability.
    pub p_max: f64,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        SparsityConfig {
            weekly_cap: 3,
            max_active: 15,
            warmup_days: 14,
            p_max: 0.35,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonRange {
    pub min_days: i64,
    pub max_days: i64,
}

impl Default for HorizonRange {
    fn default() -> Self {
        HorizonRange {
            min_days: 388,
            max_days: 1813,
        }
    }
}

/// One demographic cell: an age stratum with a pool of condition combos.
/// Quota sampling fixes the per-stratum user counts exactly; the combo is
/// picked uniformly from the pool ([] means healthy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureCell {
    pub age_stratum: AgeStratum,
    pub weight: f64,
    pub condition_pool: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifestyleTag {
    pub tag: String,
    pub probability: f64,
}

/// Catalog row: the shared indicator spec plus how far per-user baselines may
/// wander from the catalog baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorDef {
    pub spec: IndicatorSpec,
    /// Half-width of the uniform per-user baseline jitter, natural units.
    pub baseline_jitter: f64,
}

/// Template for one impact of an event template. Ranges are inclusive;
/// the beta range must not straddle zero (the sign is part of the template).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactTemplate {
    pub indicator_key: String,
    pub beta_range: [f64; 2],
    pub tau_rise_range: [f64; 2],
    pub tau_fade_range: [f64; 2],
}

/// A spawnable life event with its daily rate, narrative tags and impacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventTemplate {
    pub id: String,
    pub category: EventCategory,
    pub name: String,
    /// Baseline probability-per-day contribution before affinity weighting.
    pub base_daily_rate: f64,
    /// Phase themes this event advances (weight x4, x8 when gap-filling).
    pub affinity_tags: Vec<String>,
    /// Phase themes this event contradicts (weight 0).
    pub conflict_tags: Vec<String>,
    /// Only eligible when the profile carries this condition.
    pub requires_condition: Option<String>,
    /// Only eligible when the profile carries this lifestyle tag.
    pub requires_lifestyle: Option<String>,
    /// Log-normal duration: ln-space mean (= ln median) and sigma.
    pub duration_ln_mean: f64,
    pub duration_ln_sigma: f64,
    pub impacts: Vec<ImpactTemplate>,
}

impl Default for EventTemplate {
    fn default() -> Self {
        EventTemplate {
            id: String::new(),
            category: EventCategory::HealthEvent,
            name: String::new(),
            base_daily_rate: 0.0,
            affinity_tags: Vec::new(),
            conflict_tags: Vec::new(),
            requires_condition: None,
            requires_lifestyle: None,
            duration_ln_mean: 0.0,
            duration_ln_sigma: 0.0,
            impacts: Vec::new(),
        }
    }
}

/// Full generation config. Every field has a default, so `{}` is a valid
/// config file; overrides are merged field-wise by serde.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub cohort_size: u32,
    pub root_seed: u64,
    /// ISO date for day 0.
    pub epoch: String,
    pub horizon_days: HorizonRange,
    /// Exam visits per year.
    pub exam_density_per_year: f64,
    /// Per indicator-day probability of a masked (absent) observation.
    pub absence_rate: f64,
    pub fade_mode: FadeMode,
    pub sparsity: SparsityConfig,
    /// Generate users in parallel (outputs are identical either way).
    /// Execution policy rather than content: not persisted, not part of the
    /// config digest.
    #[serde(skip)]
    pub parallel: bool,
    /// Optional HTTP endpoint for an external event policy; the built-in
    /// scripted policy is used when unset or on any endpoint failure.
    pub policy_endpoint: Option<String>,
    pub mixture: Vec<MixtureCell>,
    pub lifestyle_pool: Vec<LifestyleTag>,
    pub indicators: Vec<IndicatorDef>,
    /// condition -> indicator -> additive baseline shift, natural units.
    pub condition_offsets: BTreeMap<String, BTreeMap<String, f64>>,
    pub events: Vec<EventTemplate>,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            cohort_size: 100,
            root_seed: 7,
            epoch: "2023-01-02".into(),
            horizon_days: HorizonRange::default(),
            exam_density_per_year: 2.0,
            absence_rate: 0.0,
            fade_mode: FadeMode::Continuity,
            sparsity: SparsityConfig::default(),
            parallel: true,
            policy_endpoint: None,
            mixture: default_mixture(),
            lifestyle_pool: default_lifestyle_pool(),
            indicators: default_indicators(),
            condition_offsets: default_condition_offsets(),
            events: default_event_templates(),
        }
    }
}

impl CohortConfig {
    pub fn from_json(json: &str) -> Result<Self, Error> {
        let cfg: CohortConfig = serde_json::from_str(json)
            .map_err(|e| Error::InvalidConfig(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn calendar(&self) -> Result<Calendar, Error> {
        Calendar::parse(&self.epoch)
    }

    /// Catalog specs keyed by indicator.
    pub fn specs(&self) -> BTreeMap<String, IndicatorSpec> {
        self.indicators
            .iter()
            .map(|d| (d.spec.key.clone(), d.spec.clone()))
            .collect()
    }

    pub fn indicator(&self, key: &str) -> Option<&IndicatorDef> {
        self.indicators.iter().find(|d| d.spec.key == key)
    }

    pub fn device_keys(&self) -> Vec<String> {
        self.indicators
            .iter()
            .filter(|d| d.spec.sources.on_device())
            .map(|d| d.spec.key.clone())
            .collect()
    }

    pub fn exam_keys(&self) -> Vec<String> {
        self.indicators
            .iter()
            .filter(|d| d.spec.sources.on_exam())
            .map(|d| d.spec.key.clone())
            .collect()
    }

    /// Every condition the config knows about.
    pub fn known_conditions(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.condition_offsets.keys().cloned().collect();
        for cell in &self.mixture {
            for combo in &cell.condition_pool {
                out.extend(combo.iter().cloned());
            }
        }
        out
    }

    /// SHA-256 of the canonical JSON form, recorded in cohort manifests.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), Error> {
        let err = |msg: String| Err(Error::InvalidConfig(msg));
        if self.cohort_size == 0 {
            return err("cohort_size must be positive".into());
        }
        Calendar::parse(&self.epoch)?;
        if self.horizon_days.min_days < 180 {
            return err(format!(
                "horizon min {} below the 180-day planner floor",
                self.horizon_days.min_days
            ));
        }
        if self.horizon_days.max_days < self.horizon_days.min_days {
            return err("horizon max below min".into());
        }
        if !(self.exam_density_per_year > 0.0) {
            return err("exam_density_per_year must be positive".into());
        }
        if !(0.0..1.0).contains(&self.absence_rate) {
            return err(format!("absence_rate {} outside [0, 1)", self.absence_rate));
        }
        if !(self.sparsity.p_max > 0.0 && self.sparsity.p_max <= 1.0) {
            return err(format!("p_max {} outside (0, 1]", self.sparsity.p_max));
        }
        if self.sparsity.weekly_cap == 0 || self.sparsity.max_active == 0 {
            return err("weekly_cap and max_active must be positive".into());
        }
        if self.sparsity.warmup_days < 0 {
            return err("warmup_days must be non-negative".into());
        }

        if self.mixture.is_empty() {
            return err("mixture must have at least one cell".into());
        }
        let weight_sum: f64 = self.mixture.iter().map(|c| c.weight).sum();
        if (weight_sum - 1.0).abs() > 1e-9 {
            return err(format!("mixture weights sum to {weight_sum}, expected 1"));
        }
        for cell in &self.mixture {
            if cell.weight < 0.0 {
                return err("negative mixture weight".into());
            }
            if cell.condition_pool.is_empty() {
                return err(format!("{:?} cell has an empty condition pool", cell.age_stratum));
            }
        }
        for tag in &self.lifestyle_pool {
            if !(0.0..=1.0).contains(&tag.probability) {
                return err(format!("lifestyle tag {} probability outside [0, 1]", tag.tag));
            }
        }

        if self.indicators.is_empty() {
            return err("indicator catalog is empty".into());
        }
        let mut keys = BTreeSet::new();
        for def in &self.indicators {
            def.spec.validate()?;
            if !keys.insert(def.spec.key.clone()) {
                return err(format!("duplicate indicator key {}", def.spec.key));
            }
            if def.baseline_jitter < 0.0 {
                return err(format!("indicator {}: negative baseline_jitter", def.spec.key));
            }
        }

        let specs = self.specs();
        let conditions = self.known_conditions();
        for (cond, offsets) in &self.condition_offsets {
            for key in offsets.keys() {
                if !specs.contains_key(key) {
                    return err(format!("condition {cond} offsets unknown indicator {key}"));
                }
            }
        }

        let mut template_ids = BTreeSet::new();
        for tmpl in &self.events {
            if tmpl.id.is_empty() || tmpl.name.is_empty() {
                return err("event template needs id and name".into());
            }
            if !template_ids.insert(tmpl.id.clone()) {
                return err(format!("duplicate event template id {}", tmpl.id));
            }
            if !(0.0..=1.0).contains(&tmpl.base_daily_rate) {
                return err(format!("template {}: rate outside [0, 1]", tmpl.id));
            }
            if tmpl.duration_ln_sigma < 0.0 {
                return err(format!("template {}: negative duration sigma", tmpl.id));
            }
            if tmpl.impacts.is_empty() {
                return err(format!("template {}: no impacts", tmpl.id));
            }
            if let Some(cond) = &tmpl.requires_condition {
                if !conditions.contains(cond) {
                    return err(format!("template {}: unknown condition {cond}", tmpl.id));
                }
            }
            if let Some(tag) = &tmpl.requires_lifestyle {
                if !self.lifestyle_pool.iter().any(|t| &t.tag == tag) {
                    return err(format!("template {}: unknown lifestyle tag {tag}", tmpl.id));
                }
            }
            for imp in &tmpl.impacts {
                let Some(spec) = specs.get(&imp.indicator_key) else {
                    return err(format!(
                        "template {}: impact on unknown indicator {}",
                        tmpl.id, imp.indicator_key
                    ));
                };
                let [lo, hi] = imp.beta_range;
                if lo > hi {
                    return err(format!("template {}: beta range not ordered", tmpl.id));
                }
                if lo * hi < 0.0 {
                    return err(format!(
                        "template {}: beta range [{lo}, {hi}] straddles zero, sign must be fixed",
                        tmpl.id
                    ));
                }
                if lo.abs().max(hi.abs()) > 2.0 * spec.soft_cap {
                    return err(format!(
                        "template {}: |beta| up to {} exceeds twice the soft cap {} of {}",
                        tmpl.id,
                        lo.abs().max(hi.abs()),
                        spec.soft_cap,
                        imp.indicator_key
                    ));
                }
                for (range, label) in [(imp.tau_rise_range, "tau_rise"), (imp.tau_fade_range, "tau_fade")] {
                    if !(range[0] > 0.0) || range[0] > range[1] {
                        return err(format!("template {}: bad {label} range", tmpl.id));
                    }
                }
            }
        }
        Ok(())
    }
}

fn default_mixture() -> Vec<MixtureCell> {
    let combos = |list: &[&[&str]]| -> Vec<Vec<String>> {
        list.iter()
            .map(|c| c.iter().map(|s| s.to_string()).collect())
            .collect()
    };
    vec![
        MixtureCell {
            age_stratum: AgeStratum::Young,
            weight: 0.33,
            condition_pool: combos(&[
                &["obesity"],
                &["prediabetes"],
                &["depression", "insomnia"],
                &[],
            ]),
        },
        MixtureCell {
            age_stratum: AgeStratum::Middle,
            weight: 0.44,
            condition_pool: combos(&[
                &["t2dm"],
                &["hypertension"],
                &["metabolic_syndrome"],
                &["depression"],
                &["t2dm", "hypertension"],
            ]),
        },
        MixtureCell {
            age_stratum: AgeStratum::Older,
            weight: 0.23,
            condition_pool: combos(&[
                &["hypertension", "cad"],
                &["t2dm", "ckd"],
                &["osteoarthritis"],
            ]),
        },
    ]
}

fn default_lifestyle_pool() -> Vec<LifestyleTag> {
    [
        ("smoker", 0.15),
        ("sedentary", 0.30),
        ("active", 0.35),
        ("shift_worker", 0.12),
        ("high_stress_job", 0.25),
        ("vegetarian", 0.18),
    ]
    .into_iter()
    .map(|(tag, probability)| LifestyleTag {
        tag: tag.into(),
        probability,
    })
    .collect()
}

#[allow(clippy::too_many_arguments)]
fn ind(
    key: &str,
    unit: &str,
    group: IndicatorGroup,
    sources: IndicatorSources,
    transform: Transform,
    baseline: f64,
    jitter: f64,
    weekday_offsets: [f64; 7],
    annual: (f64, f64),
    inertia: f64,
    bounds: [f64; 2],
    slope_limit: f64,
    soft_cap: f64,
    loadings: [f64; 7],
    idio_variance: f64,
    speed_class: SpeedClass,
    reference_range: Option<[f64; 2]>,
) -> IndicatorDef {
    IndicatorDef {
        spec: IndicatorSpec {
            key: key.into(),
            unit: unit.into(),
            group,
            sources,
            transform,
            baseline,
            weekday_offsets,
            annual_amplitude: annual.0,
            annual_phase_day: annual.1,
            inertia,
            bounds,
            slope_limit,
            soft_cap,
            noise_loadings: loadings,
            idio_variance,
            speed_class,
            reference_range,
        },
        baseline_jitter: jitter,
    }
}

/// Loading columns: [global, sleep, cardiovascular, metabolic, activity,
/// weight, blood_oxygen].
fn default_indicators() -> Vec<IndicatorDef> {
    use IndicatorGroup::*;
    use IndicatorSources::*;
    use SpeedClass::*;
    use Transform::*;

    vec![
        ind(
            "resting_hr", "/min", Cardiovascular, Device, Identity,
            62.0, 5.0,
            [-0.3, -0.4, -0.3, -0.2, 0.2, 0.8, 0.5],
            (1.2, 15.0),
            0.40, [33.0, 110.0], 13.0, 8.0,
            [0.35, 0.0, 0.45, 0.0, 0.0, 0.0, 0.0], 0.45,
            Fast, None,
        ),
        ind(
            "hrv_rmssd", "ms", Cardiovascular, Device, Log,
            42.0, 8.0,
            [0.5, 0.8, 0.6, 0.3, -0.4, -1.5, -0.9],
            (2.0, 196.0),
            0.50, [6.0, 220.0], 80.0, 0.25,
            [0.04, 0.0, 0.05, 0.0, 0.0, 0.0, 0.0], 0.010,
            Fast, None,
        ),
        ind(
            "systolic_bp", "mm[Hg]", Cardiovascular, Both, Identity,
            122.0, 7.0,
            [0.5, 0.8, 0.6, 0.4, 0.0, -1.2, -0.9],
            (2.0, 15.0),
            0.55, [65.0, 210.0], 30.0, 14.0,
            [1.2, 0.0, 1.6, 0.0, 0.0, 0.0, 0.0], 2.2,
            Fast, Some([90.0, 130.0]),
        ),
        ind(
            "steps", "{steps}", Activity, Device, Log,
            8200.0, 1800.0,
            [600.0, 400.0, 300.0, 200.0, 500.0, -900.0, -1100.0],
            (400.0, 196.0),
            0.35, [0.0, 45000.0], 20000.0, 0.30,
            [0.05, 0.0, 0.0, 0.0, 0.09, 0.0, 0.0], 0.016,
            Fast, None,
        ),
        ind(
            "active_energy", "kcal", Activity, Device, Log,
            520.0, 130.0,
            [30.0, 20.0, 15.0, 10.0, 40.0, -60.0, -70.0],
            (40.0, 196.0),
            0.35, [0.0, 4000.0], 1500.0, 0.30,
            [0.05, 0.0, 0.0, 0.0, 0.09, 0.0, 0.0], 0.020,
            Fast, None,
        ),
        ind(
            "total_sleep_min", "min", Sleep, Device, Identity,
            424.0, 35.0,
            [-10.0, -12.0, -8.0, -5.0, 15.0, 35.0, 25.0],
            (12.0, 15.0),
            0.30, [45.0, 780.0], 330.0, 70.0,
            [9.0, 13.0, 0.0, 0.0, 0.0, 0.0, 0.0], 440.0,
            Fast, None,
        ),
        ind(
            "deep_sleep_ratio", "1", Sleep, Device, Logit,
            0.17, 0.03,
            [0.0, -0.002, -0.002, 0.0, 0.004, 0.008, 0.006],
            (0.004, 15.0),
            0.45, [0.02, 0.45], 0.18, 0.60,
            [0.05, 0.07, 0.0, 0.0, 0.0, 0.0, 0.0], 0.013,
            Fast, None,
        ),
        ind(
            "spo2", "%", BloodOxygen, Both, Logit,
            96.8, 0.6,
            [0.0; 7],
            (0.1, 196.0),
            0.50, [85.0, 100.0], 5.0, 0.90,
            [0.03, 0.0, 0.0, 0.0, 0.0, 0.0, 0.05], 0.0064,
            Fast, Some([94.0, 100.0]),
        ),
        ind(
            "weight_kg", "kg", Weight, Both, Identity,
            78.0, 11.0,
            [-0.1, -0.15, -0.1, -0.05, 0.05, 0.2, 0.15],
            (0.4, 15.0),
            0.97, [40.0, 180.0], 2.2, 0.15,
            [0.03, 0.0, 0.0, 0.0, 0.0, 0.04, 0.0], 0.055,
            Slow, Some([45.0, 110.0]),
        ),
        ind(
            "fasting_glucose", "mg/dL", Metabolic, Both, Identity,
            96.0, 8.0,
            [1.5, 1.0, 0.5, 0.5, 1.0, -2.0, -1.5],
            (2.0, 15.0),
            0.60, [30.0, 350.0], 25.0, 15.0,
            [1.0, 0.0, 0.0, 1.4, 0.0, 0.0, 0.0], 1.2,
            Slow, Some([70.0, 100.0]),
        ),
        ind(
            "hba1c", "%", Metabolic, Exam, Identity,
            5.6, 0.4,
            [0.0; 7],
            (0.0, 15.0),
            0.90, [3.5, 15.0], 12.0, 1.0,
            [0.0; 7], 1.0,
            Slow, Some([4.0, 5.7]),
        ),
        ind(
            "ldl", "mg/dL", Metabolic, Exam, Identity,
            112.0, 20.0,
            [0.0; 7],
            (3.0, 15.0),
            0.90, [30.0, 300.0], 270.0, 30.0,
            [0.0; 7], 1.0,
            Slow, Some([50.0, 130.0]),
        ),
        ind(
            "hdl", "mg/dL", Metabolic, Exam, Identity,
            52.0, 8.0,
            [0.0; 7],
            (1.0, 196.0),
            0.90, [15.0, 120.0], 105.0, 12.0,
            [0.0; 7], 1.0,
            Slow, Some([40.0, 90.0]),
        ),
        ind(
            "crp", "mg/L", Metabolic, Exam, Log,
            1.2, 0.4,
            [0.0; 7],
            (0.1, 15.0),
            0.90, [0.05, 80.0], 80.0, 0.80,
            [0.0; 7], 1.0,
            Slow, Some([0.0, 3.0]),
        ),
        ind(
            "alt", "U/L", Metabolic, Exam, Log,
            26.0, 6.0,
            [0.0; 7],
            (1.0, 15.0),
            0.90, [5.0, 500.0], 495.0, 0.50,
            [0.0; 7], 1.0,
            Slow, Some([7.0, 56.0]),
        ),
        ind(
            "creatinine", "mg/dL", Metabolic, Exam, Identity,
            0.95, 0.12,
            [0.0; 7],
            (0.02, 15.0),
            0.90, [0.3, 8.0], 7.7, 0.30,
            [0.0; 7], 1.0,
            Slow, Some([0.6, 1.3]),
        ),
    ]
}

fn default_condition_offsets() -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut set = |cond: &str, pairs: &[(&str, f64)]| {
        out.insert(
            cond.into(),
            pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        );
    };
    set("obesity", &[
        ("weight_kg", 24.0),
        ("steps", -2200.0),
        ("deep_sleep_ratio", -0.02),
        ("hdl", -6.0),
    ]);
    set("prediabetes", &[("fasting_glucose", 12.0), ("hba1c", 0.5)]);
    set("t2dm", &[
        ("fasting_glucose", 38.0),
        ("hba1c", 1.6),
        ("weight_kg", 8.0),
    ]);
    set("hypertension", &[("systolic_bp", 15.0), ("resting_hr", 3.0)]);
    set("metabolic_syndrome", &[
        ("fasting_glucose", 15.0),
        ("weight_kg", 12.0),
        ("systolic_bp", 8.0),
        ("hdl", -8.0),
        ("ldl", 20.0),
    ]);
    set("depression", &[
        ("total_sleep_min", -25.0),
        ("deep_sleep_ratio", -0.02),
        ("hrv_rmssd", -6.0),
        ("steps", -1200.0),
    ]);
    set("insomnia", &[
        ("total_sleep_min", -45.0),
        ("deep_sleep_ratio", -0.03),
    ]);
    set("cad", &[
        ("resting_hr", 4.0),
        ("hrv_rmssd", -8.0),
        ("spo2", -0.4),
    ]);
    set("ckd", &[("creatinine", 0.9), ("crp", 1.0)]);
    set("osteoarthritis", &[
        ("steps", -2500.0),
        ("crp", 0.8),
        ("total_sleep_min", -15.0),
    ]);
    out
}

fn imp(key: &str, beta: [f64; 2], rise: [f64; 2], fade: [f64; 2]) -> ImpactTemplate {
    ImpactTemplate {
        indicator_key: key.into(),
        beta_range: beta,
        tau_rise_range: rise,
        tau_fade_range: fade,
    }
}

fn default_event_templates() -> Vec<EventTemplate> {
    use EventCategory::*;
    let tags = |list: &[&str]| list.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let tmpl = |id: &str,
                category: EventCategory,
                name: &str,
                rate: f64,
                affinity: &[&str],
                conflicts: &[&str],
                median_days: f64,
                sigma: f64,
                impacts: Vec<ImpactTemplate>| EventTemplate {
        id: id.into(),
        category,
        name: name.into(),
        base_daily_rate: rate,
        affinity_tags: tags(affinity),
        conflict_tags: tags(conflicts),
        requires_condition: None,
        requires_lifestyle: None,
        duration_ln_mean: median_days.ln(),
        duration_ln_sigma: sigma,
        impacts,
    };

    let mut out = vec![
        tmpl(
            "jogging_routine", ExerciseChange, "Started a jogging routine",
            0.005, &["fitness_push"], &[], 60.0, 0.5,
            vec![
                imp("resting_hr", [-6.0, -3.0], [5.0, 10.0], [7.0, 21.0]),
                imp("steps", [0.18, 0.32], [3.0, 6.0], [5.0, 14.0]),
                imp("active_energy", [0.20, 0.35], [3.0, 6.0], [5.0, 14.0]),
                imp("hrv_rmssd", [0.06, 0.12], [5.0, 10.0], [7.0, 21.0]),
                imp("deep_sleep_ratio", [0.10, 0.25], [5.0, 10.0], [7.0, 14.0]),
                imp("weight_kg", [-0.06, -0.02], [10.0, 20.0], [14.0, 28.0]),
            ],
        ),
        tmpl(
            "evening_yoga", ExerciseChange, "Joined evening yoga classes",
            0.003, &["stress_cycle", "sleep_focus"], &[], 45.0, 0.5,
            vec![
                imp("hrv_rmssd", [0.04, 0.10], [4.0, 8.0], [7.0, 14.0]),
                imp("total_sleep_min", [10.0, 25.0], [4.0, 8.0], [7.0, 14.0]),
                imp("resting_hr", [-4.0, -2.0], [4.0, 8.0], [7.0, 14.0]),
                imp("deep_sleep_ratio", [0.08, 0.20], [4.0, 8.0], [7.0, 14.0]),
            ],
        ),
        tmpl(
            "stopped_exercise", ExerciseChange, "Stopped regular exercise",
            0.002, &[], &["fitness_push"], 90.0, 0.6,
            vec![
                imp("steps", [-0.30, -0.15], [7.0, 14.0], [14.0, 30.0]),
                imp("active_energy", [-0.30, -0.15], [7.0, 14.0], [14.0, 30.0]),
                imp("resting_hr", [2.0, 4.0], [7.0, 14.0], [14.0, 30.0]),
                imp("weight_kg", [0.02, 0.05], [10.0, 20.0], [14.0, 30.0]),
            ],
        ),
        tmpl(
            "high_sodium_diet", DietChange, "High-sodium takeout stretch",
            0.006, &[], &["weight_management"], 14.0, 0.6,
            vec![
                imp("systolic_bp", [4.0, 9.0], [3.0, 6.0], [5.0, 10.0]),
                imp("weight_kg", [0.03, 0.08], [3.0, 6.0], [5.0, 10.0]),
            ],
        ),
        tmpl(
            "mediterranean_diet", DietChange, "Switched to a Mediterranean diet",
            0.003, &["weight_management", "treatment_adjustment"], &[], 75.0, 0.6,
            vec![
                imp("ldl", [-25.0, -12.0], [7.0, 14.0], [14.0, 28.0]),
                imp("hdl", [3.0, 8.0], [7.0, 14.0], [14.0, 28.0]),
                imp("weight_kg", [-0.07, -0.03], [7.0, 14.0], [14.0, 28.0]),
                imp("fasting_glucose", [-8.0, -4.0], [7.0, 14.0], [14.0, 28.0]),
                imp("crp", [-0.40, -0.15], [7.0, 14.0], [14.0, 28.0]),
            ],
        ),
        tmpl(
            "late_night_snacking", DietChange, "Late-night snacking streak",
            0.007, &[], &["weight_management"], 10.0, 0.7,
            vec![
                imp("fasting_glucose", [3.0, 7.0], [2.0, 5.0], [3.0, 8.0]),
                imp("weight_kg", [0.02, 0.06], [2.0, 5.0], [3.0, 8.0]),
                imp("deep_sleep_ratio", [-0.25, -0.10], [2.0, 5.0], [3.0, 8.0]),
                imp("total_sleep_min", [-25.0, -10.0], [2.0, 5.0], [3.0, 8.0]),
            ],
        ),
        tmpl(
            "caffeine_cut", DietChange, "Cut back on afternoon caffeine",
            0.004, &["sleep_focus", "stress_cycle"], &[], 21.0, 0.6,
            vec![
                imp("total_sleep_min", [12.0, 30.0], [2.0, 4.0], [4.0, 8.0]),
                imp("hrv_rmssd", [0.04, 0.09], [2.0, 4.0], [4.0, 8.0]),
                imp("resting_hr", [-3.0, -1.0], [2.0, 4.0], [4.0, 8.0]),
                imp("deep_sleep_ratio", [0.06, 0.15], [2.0, 4.0], [4.0, 8.0]),
            ],
        ),
        tmpl(
            "seasonal_cold", HealthEvent, "Caught a seasonal cold",
            0.016, &[], &[], 5.0, 0.4,
            vec![
                imp("resting_hr", [3.0, 6.0], [2.0, 4.0], [4.0, 10.0]),
                imp("hrv_rmssd", [-0.20, -0.10], [2.0, 4.0], [4.0, 10.0]),
                imp("spo2", [-0.60, -0.30], [2.0, 4.0], [4.0, 10.0]),
                imp("steps", [-0.40, -0.20], [2.0, 4.0], [4.0, 10.0]),
                imp("total_sleep_min", [-45.0, -20.0], [2.0, 4.0], [4.0, 10.0]),
                imp("crp", [0.30, 0.70], [2.0, 4.0], [4.0, 10.0]),
            ],
        ),
        tmpl(
            "gastroenteritis", HealthEvent, "Mild gastroenteritis bout",
            0.008, &[], &[], 2.5, 0.4,
            vec![
                imp("weight_kg", [-0.10, -0.05], [2.0, 3.0], [3.0, 6.0]),
                imp("steps", [-0.50, -0.30], [2.0, 3.0], [3.0, 6.0]),
                imp("fasting_glucose", [-6.0, -3.0], [2.0, 3.0], [3.0, 6.0]),
                imp("resting_hr", [2.0, 5.0], [2.0, 3.0], [3.0, 6.0]),
            ],
        ),
        tmpl(
            "tension_headaches", HealthEvent, "Spell of tension headaches",
            0.012, &[], &[], 2.0, 0.4,
            vec![
                imp("total_sleep_min", [-35.0, -15.0], [2.0, 3.0], [3.0, 5.0]),
                imp("hrv_rmssd", [-0.12, -0.06], [2.0, 3.0], [3.0, 5.0]),
                imp("steps", [-0.20, -0.10], [2.0, 3.0], [3.0, 5.0]),
            ],
        ),
        tmpl(
            "work_crunch", HealthEvent, "Work deadline crunch",
            0.009, &["stress_cycle"], &[], 9.0, 0.6,
            vec![
                imp("hrv_rmssd", [-0.16, -0.08], [2.0, 4.0], [4.0, 10.0]),
                imp("resting_hr", [2.0, 4.0], [2.0, 4.0], [4.0, 10.0]),
                imp("total_sleep_min", [-50.0, -25.0], [2.0, 4.0], [4.0, 10.0]),
                imp("deep_sleep_ratio", [-0.20, -0.10], [2.0, 4.0], [4.0, 10.0]),
                imp("systolic_bp", [3.0, 7.0], [2.0, 4.0], [4.0, 10.0]),
            ],
        ),
        tmpl(
            "anxiety_episode", HealthEvent, "Situational anxiety episode",
            0.009, &["stress_cycle"], &[], 3.0, 0.5,
            vec![
                imp("hrv_rmssd", [-0.18, -0.10], [2.0, 4.0], [3.0, 7.0]),
                imp("resting_hr", [3.0, 6.0], [2.0, 4.0], [3.0, 7.0]),
                imp("total_sleep_min", [-40.0, -20.0], [2.0, 4.0], [3.0, 7.0]),
            ],
        ),
        tmpl(
            "meditation_habit", LongTermHabit, "Started a daily meditation habit",
            0.0015, &["stress_cycle", "stabilization"], &[], 200.0, 0.5,
            vec![
                imp("hrv_rmssd", [0.05, 0.10], [10.0, 21.0], [21.0, 45.0]),
                imp("resting_hr", [-4.0, -2.0], [10.0, 21.0], [21.0, 45.0]),
                imp("deep_sleep_ratio", [0.08, 0.18], [10.0, 21.0], [21.0, 45.0]),
                imp("systolic_bp", [-5.0, -2.0], [10.0, 21.0], [21.0, 45.0]),
            ],
        ),
        tmpl(
            "sleep_schedule", LongTermHabit, "Adopted a consistent sleep schedule",
            0.0015, &["sleep_focus", "stabilization"], &[], 180.0, 0.5,
            vec![
                imp("total_sleep_min", [15.0, 35.0], [7.0, 14.0], [14.0, 30.0]),
                imp("deep_sleep_ratio", [0.10, 0.20], [7.0, 14.0], [14.0, 30.0]),
                imp("hrv_rmssd", [0.04, 0.08], [7.0, 14.0], [14.0, 30.0]),
            ],
        ),
    ];

    let mut bp_med = tmpl(
        "bp_med_adjustment", HealthEvent, "Blood pressure medication adjusted",
        0.004, &["treatment_adjustment"], &[], 120.0, 0.5,
        vec![
            imp("systolic_bp", [-9.0, -4.0], [3.0, 7.0], [10.0, 21.0]),
            imp("resting_hr", [-3.0, -1.0], [3.0, 7.0], [10.0, 21.0]),
        ],
    );
    bp_med.requires_condition = Some("hypertension".into());
    out.push(bp_med);

    let mut metformin = tmpl(
        "metformin_increase", HealthEvent, "Metformin dose increased",
        0.004, &["treatment_adjustment"], &[], 150.0, 0.5,
        vec![
            imp("fasting_glucose", [-14.0, -6.0], [5.0, 10.0], [14.0, 28.0]),
            imp("hba1c", [-0.9, -0.3], [5.0, 10.0], [14.0, 28.0]),
            imp("weight_kg", [-0.05, -0.02], [5.0, 10.0], [14.0, 28.0]),
        ],
    );
    metformin.requires_condition = Some("t2dm".into());
    out.push(metformin);

    let mut flare = tmpl(
        "htn_flare", HealthEvent, "Hypertension flare-up",
        0.003, &["exacerbation"], &[], 12.0, 0.5,
        vec![
            imp("systolic_bp", [5.0, 11.0], [2.0, 4.0], [5.0, 12.0]),
            imp("resting_hr", [2.0, 4.0], [2.0, 4.0], [5.0, 12.0]),
        ],
    );
    flare.requires_condition = Some("hypertension".into());
    out.push(flare);

    let mut quit = tmpl(
        "quit_smoking", LongTermHabit, "Quit smoking",
        0.0008, &["stabilization"], &[], 300.0, 0.4,
        vec![
            imp("spo2", [0.20, 0.50], [7.0, 14.0], [30.0, 60.0]),
            imp("hrv_rmssd", [0.05, 0.12], [7.0, 14.0], [30.0, 60.0]),
            imp("resting_hr", [-4.0, -2.0], [7.0, 14.0], [30.0, 60.0]),
            imp("crp", [-0.50, -0.20], [7.0, 14.0], [30.0, 60.0]),
        ],
    );
    quit.requires_lifestyle = Some("smoker".into());
    out.push(quit);

    out
}
