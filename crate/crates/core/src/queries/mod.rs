//! Benchmark query compiler. Binds query parameters against a generated
//! bundle, computes machine-checkable ground truth, and renders the
//! agent-facing text. Five dimensions, three tiers each; every tier has a
//! fallback chain so degenerate bundles (no events, one exam) still yield a
//! full query set, with substitutions logged.

pub mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::calendar::Calendar;
use crate::dynamics::{FadeMode, Kernel};
use crate::engine::Engine;
use crate::error::Error;
use crate::model::{
    AnswerKind, AnswerSource, AnswerValue, CanonicalAnswer, Dimension, DeviceSeries, Event,
    Evidence, GroundTruth, Query, ResultStatus, Tier, UserBundle, ALL_DIMENSIONS, ALL_TIERS,
};
use crate::streams::StreamFactory;

pub const DEFAULT_PER_DIMENSION: usize = 20;
pub const DEFAULT_SPLIT: [f64; 3] = [0.2, 0.3, 0.5];

/// Numeric days a calendar month needs before monthly statistics count.
pub const MONTH_MIN_DAYS: i64 = 15;
const RELAXED_MONTH_MIN_DAYS: i64 = 8;
/// Window length for regime-change detection and change attribution.
pub const REGIME_WINDOW_DAYS: i64 = 28;
const REGIME_MIN_SAMPLES: usize = 14;
/// Window length for pre/post event comparisons.
pub const COMPARISON_WINDOW_DAYS: i64 = 14;
const COMPARISON_MIN_SAMPLES: usize = 7;
/// Event-free days needed before the baseline falls back to the whole series.
const BASELINE_MIN_DAYS: usize = 10;
const QUARTER_DAYS: i64 = 91;
const BIND_ATTEMPTS: usize = 16;

pub mod subtypes {
    pub const DEVICE_VALUE_ON_DATE: &str = "device_value_on_date";
    pub const EXAM_VALUE_ON_VISIT: &str = "exam_value_on_visit";
    pub const EVENT_INDICATOR_MAPPING: &str = "event_indicator_mapping";
    pub const MOST_INDICATOR_RICH_EVENT: &str = "most_indicator_rich_event";
    pub const EXTREME_VALUE_DATE: &str = "extreme_value_date";
    pub const EXTREME_MONTH_MEAN: &str = "extreme_month_mean";
    pub const LARGEST_MONTH_CHANGE: &str = "largest_month_change";
    pub const REGIME_CHANGE_DAY: &str = "regime_change_day";
    pub const MAX_VOLATILITY_MONTH: &str = "max_volatility_month";
    pub const PRE_POST_EVENT_DELTA: &str = "pre_post_event_delta";
    pub const ADJACENT_WINDOW_DELTA: &str = "adjacent_window_delta";
    pub const EVENT_VS_BASELINE_RATIO: &str = "event_vs_baseline_ratio";
    pub const WEEKEND_WEEKDAY_RATIO: &str = "weekend_weekday_ratio";
    pub const EVENTS_SHARING_INDICATOR: &str = "events_sharing_indicator";
    pub const TWO_MONTH_MEAN_DELTA: &str = "two_month_mean_delta";
    pub const EVER_ABNORMAL: &str = "ever_abnormal";
    pub const ABNORMAL_RATE_DETERIORATION: &str = "abnormal_rate_deterioration";
    pub const ABNORMAL_COUNT_AT_VISIT: &str = "abnormal_count_at_visit";
    pub const PERSISTENT_ABNORMAL_CLUSTER: &str = "persistent_abnormal_cluster";
    pub const EVER_ABNORMAL_SET: &str = "ever_abnormal_set";
    pub const EVENTS_AT_FIRST_EXCEEDANCE: &str = "events_at_first_exceedance";
    pub const LARGEST_COMPONENT_ON_DATE: &str = "largest_component_on_date";
    pub const EVENT_IMPACT_RANKING: &str = "event_impact_ranking";
    pub const CHANGE_ATTRIBUTION_RANKING: &str = "change_attribution_ranking";
    /// Needs the generating engine for resimulation; only rotated in when an
    /// engine is supplied to the generator.
    pub const COUNTERFACTUAL_CHANGE_RANKING: &str = "counterfactual_change_ranking";
}

pub type Params = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Substitution {
    pub dimension: Dimension,
    pub tier: Tier,
    pub wanted: String,
    pub used: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuerySet {
    pub queries: Vec<Query>,
    pub substitutions: Vec<Substitution>,
}

/// Integer tier counts from fractional weights, largest remainder first.
/// Remainder ties go to the harder tier.
pub fn tier_counts(per_dimension: usize, split: [f64; 3]) -> Result<[usize; 3], Error> {
    if split.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::Query(format!("invalid split {split:?}")));
    }
    let total: f64 = split.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Query("split weights sum to zero".into()));
    }
    let ideal: Vec<f64> = split
        .iter()
        .map(|s| per_dimension as f64 * s / total)
        .collect();
    let mut counts = [0usize; 3];
    for (c, i) in counts.iter_mut().zip(&ideal) {
        *c = i.floor() as usize;
    }
    let mut left = per_dimension - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.partial_cmp(&fa).unwrap().then(b.cmp(&a))
    });
    for idx in order {
        if left == 0 {
            break;
        }
        counts[idx] += 1;
        left -= 1;
    }
    Ok(counts)
}

pub fn generate_queries(
    bundle: &UserBundle,
    per_dimension: usize,
    split: [f64; 3],
    seed: u64,
) -> Result<QuerySet, Error> {
    generate(bundle, None, per_dimension, split, seed)
}

/// Like [`generate_queries`], but with the generating engine available the
/// hard Explanation slots alternate in a counterfactual resimulation subtype.
pub fn generate_queries_with_engine(
    bundle: &UserBundle,
    engine: &Engine,
    per_dimension: usize,
    split: [f64; 3],
    seed: u64,
) -> Result<QuerySet, Error> {
    generate(bundle, Some(engine), per_dimension, split, seed)
}

fn generate(
    bundle: &UserBundle,
    engine: Option<&Engine>,
    per_dimension: usize,
    split: [f64; 3],
    seed: u64,
) -> Result<QuerySet, Error> {
    let counts = tier_counts(per_dimension, split)?;
    let ctx = Ctx::new(bundle)?;
    let streams = StreamFactory::for_user(seed, bundle.seeds.user_index);
    let mut queries = Vec::with_capacity(per_dimension * ALL_DIMENSIONS.len());
    let mut substitutions = Vec::new();
    let mut serial = 0usize;
    for dim in ALL_DIMENSIONS {
        for (tier, n) in ALL_TIERS.into_iter().zip(counts) {
            for slot in 0..n {
                serial += 1;
                let mut rng = streams.stream("query", serial as i64, "bind");
                let (bound, truth) =
                    bind_slot(&ctx, engine, dim, tier, slot, &mut rng, &mut substitutions)?;
                queries.push(Query {
                    query_id: format!("q{serial:03}-{}-{}", slug_dim(dim), slug_tier(tier)),
                    dimension: dim,
                    tier,
                    subtype: bound.subtype.to_string(),
                    params: bound.params,
                    text: bound.text,
                    ground_truth: truth,
                });
            }
        }
    }
    Ok(QuerySet {
        queries,
        substitutions,
    })
}

fn slug_dim(d: Dimension) -> &'static str {
    match d {
        Dimension::Lookup => "lookup",
        Dimension::Trend => "trend",
        Dimension::Comparison => "comparison",
        Dimension::Anomaly => "anomaly",
        Dimension::Explanation => "explanation",
    }
}

fn slug_tier(t: Tier) -> &'static str {
    match t {
        Tier::Easy => "easy",
        Tier::Medium => "medium",
        Tier::Hard => "hard",
    }
}

struct Ctx<'a> {
    bundle: &'a UserBundle,
    calendar: Calendar,
    horizon: i64,
    device_keys: Vec<&'a str>,
    exam_keys: Vec<&'a str>,
}

impl<'a> Ctx<'a> {
    fn new(bundle: &'a UserBundle) -> Result<Self, Error> {
        let calendar = bundle.calendar()?;
        let device_keys: Vec<&str> = bundle.device.keys().map(String::as_str).collect();
        let exam_keys: Vec<&str> = bundle
            .exams
            .iter()
            .flat_map(|v| v.results.iter().map(|r| r.indicator_key.as_str()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Ctx {
            bundle,
            calendar,
            horizon: bundle.horizon(),
            device_keys,
            exam_keys,
        })
    }

    fn events(&self) -> &'a [Event] {
        &self.bundle.events
    }
}

struct Bound {
    subtype: &'static str,
    params: Params,
    text: String,
}

type Binder = fn(&Ctx, &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String>;

fn binder_chain(dim: Dimension, tier: Tier) -> &'static [(&'static str, Binder)] {
    use subtypes::*;
    match (dim, tier) {
        (Dimension::Lookup, Tier::Easy) => &[(DEVICE_VALUE_ON_DATE, bind_device_value)],
        (Dimension::Lookup, Tier::Medium) => &[
            (EVENT_INDICATOR_MAPPING, bind_event_mapping),
            (EXAM_VALUE_ON_VISIT, bind_exam_value),
            (DEVICE_VALUE_ON_DATE, bind_device_value),
        ],
        (Dimension::Lookup, Tier::Hard) => &[
            (MOST_INDICATOR_RICH_EVENT, bind_richest_event),
            (EXTREME_VALUE_DATE, bind_extreme_date),
        ],
        (Dimension::Trend, Tier::Easy) => &[(EXTREME_MONTH_MEAN, bind_extreme_month)],
        (Dimension::Trend, Tier::Medium) => &[
            (LARGEST_MONTH_CHANGE, bind_month_change),
            (EXTREME_MONTH_MEAN, bind_extreme_month),
        ],
        (Dimension::Trend, Tier::Hard) => &[
            (REGIME_CHANGE_DAY, bind_regime_change),
            (MAX_VOLATILITY_MONTH, bind_volatility_month),
            (EXTREME_MONTH_MEAN, bind_extreme_month),
        ],
        (Dimension::Comparison, Tier::Easy) => &[
            (PRE_POST_EVENT_DELTA, bind_pre_post),
            (ADJACENT_WINDOW_DELTA, bind_adjacent_delta),
        ],
        (Dimension::Comparison, Tier::Medium) => &[
            (EVENT_VS_BASELINE_RATIO, bind_event_ratio),
            (WEEKEND_WEEKDAY_RATIO, bind_weekend_ratio),
        ],
        (Dimension::Comparison, Tier::Hard) => &[
            (EVENTS_SHARING_INDICATOR, bind_shared_indicator),
            (TWO_MONTH_MEAN_DELTA, bind_two_month_delta),
            (ADJACENT_WINDOW_DELTA, bind_adjacent_delta),
        ],
        (Dimension::Anomaly, Tier::Easy) => &[(EVER_ABNORMAL, bind_ever_abnormal)],
        (Dimension::Anomaly, Tier::Medium) => &[
            (ABNORMAL_RATE_DETERIORATION, bind_deterioration),
            (ABNORMAL_COUNT_AT_VISIT, bind_abnormal_count),
        ],
        (Dimension::Anomaly, Tier::Hard) => &[
            (PERSISTENT_ABNORMAL_CLUSTER, bind_cluster),
            (EVER_ABNORMAL_SET, bind_abnormal_set),
        ],
        (Dimension::Explanation, Tier::Easy) => &[
            (EVENTS_AT_FIRST_EXCEEDANCE, bind_exceedance),
            (LARGEST_COMPONENT_ON_DATE, bind_component),
        ],
        (Dimension::Explanation, Tier::Medium) => &[
            (EVENT_IMPACT_RANKING, bind_impact_ranking),
            (LARGEST_COMPONENT_ON_DATE, bind_component),
        ],
        (Dimension::Explanation, Tier::Hard) => &[
            (CHANGE_ATTRIBUTION_RANKING, bind_attribution),
            (LARGEST_COMPONENT_ON_DATE, bind_component),
        ],
    }
}

fn bind_slot(
    ctx: &Ctx,
    engine: Option<&Engine>,
    dim: Dimension,
    tier: Tier,
    slot: usize,
    rng: &mut ChaCha8Rng,
    substitutions: &mut Vec<Substitution>,
) -> Result<(Bound, GroundTruth), Error> {
    // Odd hard Explanation slots run the counterfactual variant when the
    // engine is on hand; a failed binding falls through to the normal chain.
    let mut first_failure: Option<(&'static str, String)> = None;
    if dim == Dimension::Explanation && tier == Tier::Hard && slot % 2 == 1 {
        if let Some(engine) = engine {
            match bind_counterfactual(ctx, engine, rng) {
                Ok(pair) => return Ok(pair),
                Err(reason) => {
                    first_failure = Some((subtypes::COUNTERFACTUAL_CHANGE_RANKING, reason));
                }
            }
        }
    }
    let chain = binder_chain(dim, tier);
    for (name, binder) in chain {
        match binder(ctx, rng) {
            Ok((bound, truth)) => {
                if let Some((wanted, reason)) = first_failure {
                    substitutions.push(Substitution {
                        dimension: dim,
                        tier,
                        wanted: wanted.to_string(),
                        used: bound.subtype.to_string(),
                        reason,
                    });
                }
                return Ok((bound, truth));
            }
            Err(reason) => {
                if first_failure.is_none() {
                    first_failure = Some((name, reason));
                }
            }
        }
    }
    let (wanted, reason) = first_failure.unwrap_or((chain[0].0, "no binder ran".into()));
    Err(Error::Query(format!(
        "no feasible subtype for {}/{} (wanted {wanted}: {reason})",
        slug_dim(dim),
        slug_tier(tier)
    )))
}

/// Computes truth for a freshly bound query; the error side is the
/// infeasibility reason used for fallback decisions.
fn finish(ctx: &Ctx, bound: Bound) -> Result<(Bound, GroundTruth), String> {
    match compute_ground_truth(ctx.bundle, bound.subtype, &bound.params) {
        Ok(truth) => Ok((bound, truth)),
        Err(e) => Err(e.to_string()),
    }
}

fn pretty(key: &str) -> String {
    key.replace('_', " ")
}

fn params_of(pairs: &[(&str, Value)]) -> Params {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

// ---------------------------------------------------------------------------
// Binders: sample parameters, render text, verify feasibility via the truth
// computation itself.
// ---------------------------------------------------------------------------

fn bind_device_value(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let mut last = String::from("no device indicator has an observed day");
    for _ in 0..BIND_ATTEMPTS {
        let Some(&key) = ctx.device_keys.choose(rng) else {
            return Err("bundle has no device series".into());
        };
        let series = &ctx.bundle.device[key];
        let days: Vec<i64> = (0..ctx.horizon).filter(|&d| series.numeric(d).is_some()).collect();
        let Some(&day) = days.choose(rng) else {
            continue;
        };
        let date = ctx.calendar.date_str(day);
        let bound = Bound {
            subtype: subtypes::DEVICE_VALUE_ON_DATE,
            params: params_of(&[
                ("indicator", json!(key)),
                ("day", json!(day)),
                ("date", json!(date)),
            ]),
            text: format!(
                "What was the recorded {} on {date}? Answer with a number in {}.",
                pretty(key),
                series.unit
            ),
        };
        match finish(ctx, bound) {
            Ok(pair) => return Ok(pair),
            Err(reason) => last = reason,
        }
    }
    Err(last)
}

fn bind_exam_value(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let Some(visit) = ctx.bundle.exams.choose(rng) else {
        return Err("bundle has no exam visits".into());
    };
    let Some(result) = visit.results.choose(rng) else {
        return Err("exam visit has no results".into());
    };
    let bound = Bound {
        subtype: subtypes::EXAM_VALUE_ON_VISIT,
        params: params_of(&[
            ("indicator", json!(result.indicator_key)),
            ("visit_day", json!(visit.visit_day)),
            ("date", json!(visit.date)),
        ]),
        text: format!(
            "What was the {} result at the exam on {}? Answer with a number in {}.",
            pretty(&result.indicator_key),
            visit.date,
            result.unit
        ),
    };
    finish(ctx, bound)
}

fn bind_event_mapping(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let Some(ev) = ctx.events().choose(rng) else {
        return Err("bundle has no events".into());
    };
    let bound = Bound {
        subtype: subtypes::EVENT_INDICATOR_MAPPING,
        params: params_of(&[("event_id", json!(ev.event_id))]),
        text: format!(
            "Which indicators does the event '{}' ({}) directly affect? Answer with the set of indicator keys.",
            ev.name, ev.event_id
        ),
    };
    finish(ctx, bound)
}

fn bind_richest_event(ctx: &Ctx, _rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    if ctx.events().is_empty() {
        return Err("bundle has no events".into());
    }
    let bound = Bound {
        subtype: subtypes::MOST_INDICATOR_RICH_EVENT,
        params: Params::new(),
        text: "Which single event affected the largest number of distinct indicators? Answer with one event id.".into(),
    };
    finish(ctx, bound)
}

fn bind_extreme_date(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let mut last = String::from("no device series to scan");
    for _ in 0..BIND_ATTEMPTS {
        let Some(&key) = ctx.device_keys.choose(rng) else {
            return Err("bundle has no device series".into());
        };
        let max = rng.gen_bool(0.5);
        let bound = Bound {
            subtype: subtypes::EXTREME_VALUE_DATE,
            params: params_of(&[
                ("indicator", json!(key)),
                ("direction", json!(if max { "max" } else { "min" })),
            ]),
            text: format!(
                "On which date did {} reach its {} recorded value? Answer with one date (YYYY-MM-DD).",
                pretty(key),
                if max { "highest" } else { "lowest" }
            ),
        };
        match finish(ctx, bound) {
            Ok(pair) => return Ok(pair),
            Err(reason) => last = reason,
        }
    }
    Err(last)
}

fn bind_extreme_month(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let mut last = String::from("no qualifying month anywhere");
    for attempt in 0..BIND_ATTEMPTS {
        let Some(&key) = ctx.device_keys.choose(rng) else {
            return Err("bundle has no device series".into());
        };
        let highest = rng.gen_bool(0.5);
        let min_days = if attempt < BIND_ATTEMPTS / 2 {
            MONTH_MIN_DAYS
        } else {
            RELAXED_MONTH_MIN_DAYS
        };
        let bound = Bound {
            subtype: subtypes::EXTREME_MONTH_MEAN,
            params: params_of(&[
                ("indicator", json!(key)),
                ("direction", json!(if highest { "highest" } else { "lowest" })),
                ("min_days", json!(min_days)),
            ]),
            text: format!(
                "Across calendar months with at least {min_days} recorded days, in which month was mean {} the {}? Answer with the month as YYYY-MM.",
                pretty(key),
                if highest { "highest" } else { "lowest" }
            ),
        };
        match finish(ctx, bound) {
            Ok(pair) => return Ok(pair),
            Err(reason) => last = reason,
        }
    }
    Err(last)
}

fn bind_month_change(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let mut last = String::from("no consecutive qualifying months");
    for _ in 0..BIND_ATTEMPTS {
        let Some(&key) = ctx.device_keys.choose(rng) else {
            return Err("bundle has no device series".into());
        };
        let bound = Bound {
            subtype: subtypes::LARGEST_MONTH_CHANGE,
            params: params_of(&[("indicator", json!(key)), ("min_days", json!(MONTH_MIN_DAYS))]),
            text: format!(
                "Between consecutive calendar months (each with at least {MONTH_MIN_DAYS} recorded days), where did mean {} change the most in absolute terms? Answer with the later month as YYYY-MM.",
                pretty(key)
            ),
        };
        match finish(ctx, bound) {
            Ok(pair) => return Ok(pair),
            Err(reason) => last = reason,
        }
    }
    Err(last)
}

fn bind_regime_change(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let mut keys = ctx.device_keys.clone();
    keys.shuffle(rng);
    let mut last = String::from("no device series to scan");
    for key in keys {
        let bound = Bound {
            subtype: subtypes::REGIME_CHANGE_DAY,
            params: params_of(&[
                ("indicator", json!(key)),
                ("window", json!(REGIME_WINDOW_DAYS)),
            ]),
            text: format!(
                "Find the day where mean {} over the following {REGIME_WINDOW_DAYS} days shifted the most versus the preceding {REGIME_WINDOW_DAYS} days, given the shift exceeds twice the pooled standard deviation. Answer with that date (YYYY-MM-DD).",
                pretty(key)
            ),
        };
        match finish(ctx, bound) {
            Ok(pair) => return Ok(pair),
            Err(reason) => last = reason,
        }
    }
    Err(last)
}

fn bind_volatility_month(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let mut last = String::from("no qualifying month anywhere");
    for _ in 0..BIND_ATTEMPTS {
        let Some(&key) = ctx.device_keys.choose(rng) else {
            return Err("bundle has no device series".into());
        };
        let bound = Bound {
            subtype: subtypes::MAX_VOLATILITY_MONTH,
            params: params_of(&[("indicator", json!(key)), ("min_days", json!(MONTH_MIN_DAYS))]),
            text: format!(
                "Across calendar months with at least {MONTH_MIN_DAYS} recorded days, in which month was daily {} most volatile (largest sample standard deviation)? Answer with the month as YYYY-MM.",
                pretty(key)
            ),
        };
        match finish(ctx, bound) {
            Ok(pair) => return Ok(pair),
            Err(reason) => last = reason,
        }
    }
    Err(last)
}

/// (event, device indicator) pairs where the event impacts the indicator.
fn impact_pairs<'a>(ctx: &Ctx<'a>) -> Vec<(&'a Event, &'a str)> {
    let mut out = Vec::new();
    for ev in ctx.events() {
        for imp in &ev.impacts {
            if ctx.bundle.device.contains_key(&imp.indicator_key) {
                out.push((ev, imp.indicator_key.as_str()));
            }
        }
    }
    out
}

fn bind_pre_post(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let w = COMPARISON_WINDOW_DAYS;
    let pairs: Vec<_> = impact_pairs(ctx)
        .into_iter()
        .filter(|(ev, _)| ev.start_day >= w && ev.start_day + w <= ctx.horizon)
        .collect();
    if pairs.is_empty() {
        return Err("no event leaves room for a pre/post window".into());
    }
    let mut last = String::new();
    for _ in 0..BIND_ATTEMPTS {
        let &(ev, key) = pairs.choose(rng).unwrap();
        let date = ctx.calendar.date_str(ev.start_day);
        let bound = Bound {
            subtype: subtypes::PRE_POST_EVENT_DELTA,
            params: params_of(&[
                ("event_id", json!(ev.event_id)),
                ("indicator", json!(key)),
                ("window", json!(w)),
            ]),
            text: format!(
                "Compare mean {} over the first {w} days from the start of '{}' ({date}) against the {w} days before: what is post minus pre? Answer with a number in {}.",
                pretty(key),
                ev.name,
                ctx.bundle.device[key].unit
            ),
        };
        match finish(ctx, bound) {
            Ok(pair) => return Ok(pair),
            Err(reason) => last = reason,
        }
    }
    Err(last)
}

fn bind_adjacent_delta(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let w = COMPARISON_WINDOW_DAYS;
    if ctx.horizon < 2 * w {
        return Err("horizon too short for adjacent windows".into());
    }
    let mut last = String::new();
    for _ in 0..BIND_ATTEMPTS {
        let Some(&key) = ctx.device_keys.choose(rng) else {
            return Err("bundle has no device series".into());
        };
        let mid = rng.gen_range(w..=ctx.horizon - w);
        let bound = Bound {
            subtype: subtypes::ADJACENT_WINDOW_DELTA,
            params: params_of(&[
                ("indicator", json!(key)),
                ("mid_day", json!(mid)),
                ("window", json!(w)),
            ]),
            text: format!(
                "Compare mean {} over {} to {} against the preceding {w} days: what is later minus earlier? Answer with a number in {}.",
                pretty(key),
                ctx.calendar.date_str(mid),
                ctx.calendar.date_str(mid + w - 1),
                ctx.bundle.device[key].unit
            ),
        };
        match finish(ctx, bound) {
            Ok(pair) => return Ok(pair),
            Err(reason) => last = reason,
        }
    }
    Err(last)
}

fn bind_event_ratio(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let pairs = impact_pairs(ctx);
    if pairs.is_empty() {
        return Err("no event impacts a device indicator".into());
    }
    let mut last = String::new();
    for _ in 0..BIND_ATTEMPTS {
        let &(ev, key) = pairs.choose(rng).unwrap();
        let bound = Bound {
            subtype: subtypes::EVENT_VS_BASELINE_RATIO,
            params: params_of(&[("event_id", json!(ev.event_id)), ("indicator", json!(key))]),
            text: format!(
                "While '{}' was in effect ({} to {}), what was mean {} as a ratio of its event-free baseline mean? Answer with a number.",
                ev.name,
                ctx.calendar.date_str(ev.start_day),
                ctx.calendar.date_str(ev.end_day.min(ctx.horizon - 1)),
                pretty(key)
            ),
        };
        match finish(ctx, bound) {
            Ok(pair) => return Ok(pair),
            Err(reason) => last = reason,
        }
    }
    Err(last)
}

fn bind_weekend_ratio(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let mut last = String::new();
    for _ in 0..BIND_ATTEMPTS {
        let Some(&key) = ctx.device_keys.choose(rng) else {
            return Err("bundle has no device series".into());
        };
        let bound = Bound {
            subtype: subtypes::WEEKEND_WEEKDAY_RATIO,
            params: params_of(&[("indicator", json!(key))]),
            text: format!(
                "What is the ratio of mean weekend {} (Saturday and Sunday) to mean weekday {}? Answer with a number.",
                pretty(key),
                pretty(key)
            ),
        };
        match finish(ctx, bound) {
            Ok(pair) => return Ok(pair),
            Err(reason) => last = reason,
        }
    }
    Err(last)
}

fn bind_shared_indicator(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let Some(ev) = ctx.events().choose(rng) else {
        return Err("bundle has no events".into());
    };
    let bound = Bound {
        subtype: subtypes::EVENTS_SHARING_INDICATOR,
        params: params_of(&[("event_id", json!(ev.event_id))]),
        text: format!(
            "Which other events affect at least one of the same indicators as '{}' ({})? Answer with the set of event ids; use an empty set if there are none.",
            ev.name, ev.event_id
        ),
    };
    finish(ctx, bound)
}

fn bind_two_month_delta(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let mut last = String::from("no indicator has two qualifying months");
    for _ in 0..BIND_ATTEMPTS {
        let Some(&key) = ctx.device_keys.choose(rng) else {
            return Err("bundle has no device series".into());
        };
        let series = &ctx.bundle.device[key];
        let spans = month_spans(ctx.calendar, ctx.horizon);
        let qualifying: Vec<&MonthSpan> = spans
            .iter()
            .filter(|s| month_values(series, s).len() as i64 >= MONTH_MIN_DAYS)
            .collect();
        if qualifying.len() < 2 {
            continue;
        }
        let a = rng.gen_range(0..qualifying.len() - 1);
        let b = rng.gen_range(a + 1..qualifying.len());
        let (ma, mb) = (&qualifying[a].label, &qualifying[b].label);
        let bound = Bound {
            subtype: subtypes::TWO_MONTH_MEAN_DELTA,
            params: params_of(&[
                ("indicator", json!(key)),
                ("month_a", json!(ma)),
                ("month_b", json!(mb)),
            ]),
            text: format!(
                "By how much did mean {} in {mb} differ from {ma}? Answer {mb} minus {ma} as a number in {}.",
                pretty(key),
                series.unit
            ),
        };
        match finish(ctx, bound) {
            Ok(pair) => return Ok(pair),
            Err(reason) => last = reason,
        }
    }
    Err(last)
}

fn bind_ever_abnormal(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let Some(&key) = ctx.exam_keys.choose(rng) else {
        return Err("bundle has no exam results".into());
    };
    let bound = Bound {
        subtype: subtypes::EVER_ABNORMAL,
        params: params_of(&[("indicator", json!(key))]),
        text: format!(
            "Has {} ever been flagged abnormal at an exam? Answer yes or no.",
            pretty(key)
        ),
    };
    finish(ctx, bound)
}

fn bind_deterioration(ctx: &Ctx, _rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let bound = Bound {
        subtype: subtypes::ABNORMAL_RATE_DETERIORATION,
        params: Params::new(),
        text: "Splitting the exam visits into halves (the first half rounding down, versus the rest), which indicator's abnormal rate increased the most? Answer with one indicator key.".into(),
    };
    finish(ctx, bound)
}

fn bind_abnormal_count(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let Some(visit) = ctx.bundle.exams.choose(rng) else {
        return Err("bundle has no exam visits".into());
    };
    let bound = Bound {
        subtype: subtypes::ABNORMAL_COUNT_AT_VISIT,
        params: params_of(&[("visit_day", json!(visit.visit_day)), ("date", json!(visit.date))]),
        text: format!(
            "How many results were abnormal at the exam on {}? Answer with a number.",
            visit.date
        ),
    };
    finish(ctx, bound)
}

fn bind_cluster(ctx: &Ctx, _rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let visits = &ctx.bundle.exams;
    if visits.len() < 2 {
        return Err("fewer than two exam visits".into());
    }
    // Earliest consecutive pair with the largest co-abnormal set.
    let mut best: Option<(usize, usize)> = None;
    for j in 0..visits.len() - 1 {
        let a: BTreeSet<&str> = abnormal_keys(&visits[j]);
        let b: BTreeSet<&str> = abnormal_keys(&visits[j + 1]);
        let common = a.intersection(&b).count();
        if best.map_or(true, |(_, n)| common > n) {
            best = Some((j, common));
        }
    }
    let (j, n) = best.unwrap();
    if n < 2 {
        return Err("no consecutive exams share two abnormal indicators".into());
    }
    let (va, vb) = (&visits[j], &visits[j + 1]);
    let bound = Bound {
        subtype: subtypes::PERSISTENT_ABNORMAL_CLUSTER,
        params: params_of(&[
            ("visit_day_a", json!(va.visit_day)),
            ("visit_day_b", json!(vb.visit_day)),
        ]),
        text: format!(
            "At the consecutive exams on {} and {}, which indicators were abnormal at both? Answer with the set of indicator keys.",
            va.date, vb.date
        ),
    };
    finish(ctx, bound)
}

fn bind_abnormal_set(ctx: &Ctx, _rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let bound = Bound {
        subtype: subtypes::EVER_ABNORMAL_SET,
        params: Params::new(),
        text: "Which indicators have ever been flagged abnormal at an exam? Answer with the set of indicator keys; use an empty set if none were.".into(),
    };
    finish(ctx, bound)
}

fn bind_exceedance(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let mut keys = ctx.device_keys.clone();
    keys.shuffle(rng);
    let mut last = String::from("no device series to scan");
    for key in keys {
        for direction in ["above", "below"] {
            let wording = if direction == "above" {
                "rose more than two standard deviations above"
            } else {
                "fell more than two standard deviations below"
            };
            let bound = Bound {
                subtype: subtypes::EVENTS_AT_FIRST_EXCEEDANCE,
                params: params_of(&[("indicator", json!(key)), ("direction", json!(direction))]),
                text: format!(
                    "Find the first day recorded {} {wording} its event-free mean. Which events were actively affecting it that day? Answer with the set of event ids; use an empty set if none were.",
                    pretty(key)
                ),
            };
            match finish(ctx, bound) {
                Ok(pair) => return Ok(pair),
                Err(reason) => last = reason,
            }
        }
    }
    Err(last)
}

fn bind_component(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    if ctx.horizon < 2 {
        return Err("horizon too short".into());
    }
    let mut last = String::new();
    for _ in 0..BIND_ATTEMPTS {
        let Some(&key) = ctx.device_keys.choose(rng) else {
            return Err("bundle has no device series".into());
        };
        let day = rng.gen_range(1..ctx.horizon);
        let bound = Bound {
            subtype: subtypes::LARGEST_COMPONENT_ON_DATE,
            params: params_of(&[("indicator", json!(key)), ("day", json!(day))]),
            text: format!(
                "On {}, which logged component had the largest absolute contribution to {}'s daily update: ar_residual, delta_evt, or noise? Answer with the component name.",
                ctx.calendar.date_str(day),
                pretty(key)
            ),
        };
        match finish(ctx, bound) {
            Ok(pair) => return Ok(pair),
            Err(reason) => last = reason,
        }
    }
    Err(last)
}

fn bind_impact_ranking(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let mut keys = ctx.device_keys.clone();
    keys.shuffle(rng);
    let mut last = String::from("no window with two contributing events");
    for key in keys {
        // Quarter blocks ordered by how many events could touch them.
        let mut blocks: Vec<(i64, usize)> = Vec::new();
        let mut start = 0;
        while start < ctx.horizon {
            let last_day = (start + QUARTER_DAYS - 1).min(ctx.horizon - 1);
            let n = ctx
                .events()
                .iter()
                .filter(|ev| {
                    ev.affects(key) && ev.start_day + 1 <= last_day && ev.last_effect_day() >= start
                })
                .count();
            blocks.push((start, n));
            start += QUARTER_DAYS;
        }
        blocks.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        for (start, n) in blocks {
            if n < 2 {
                break;
            }
            let end = (start + QUARTER_DAYS - 1).min(ctx.horizon - 1);
            let bound = Bound {
                subtype: subtypes::EVENT_IMPACT_RANKING,
                params: params_of(&[
                    ("indicator", json!(key)),
                    ("start_day", json!(start)),
                    ("window", json!(QUARTER_DAYS)),
                ]),
                text: format!(
                    "Rank the events by the absolute size of their modeled contribution to {} between {} and {}, largest first. Answer with the ordered list of event ids.",
                    pretty(key),
                    ctx.calendar.date_str(start),
                    ctx.calendar.date_str(end)
                ),
            };
            match finish(ctx, bound) {
                Ok(pair) => return Ok(pair),
                Err(reason) => last = reason,
            }
        }
    }
    Err(last)
}

/// Candidate (event, indicator, anchor day) triples for attribution, by
/// descending impact magnitude.
fn attribution_anchors<'a>(ctx: &Ctx<'a>) -> Vec<(&'a Event, &'a str, i64)> {
    let w = REGIME_WINDOW_DAYS;
    let mut anchors: Vec<(&Event, &str, i64, f64)> = Vec::new();
    for ev in ctx.events() {
        for imp in &ev.impacts {
            if !ctx.bundle.device.contains_key(&imp.indicator_key) {
                continue;
            }
            if ctx.horizon < 2 * w {
                continue;
            }
            let t = ev.start_day.clamp(w, ctx.horizon - w);
            anchors.push((ev, imp.indicator_key.as_str(), t, imp.beta.abs()));
        }
    }
    anchors.sort_by(|a, b| b.3.partial_cmp(&a.3).unwrap());
    anchors.into_iter().map(|(e, k, t, _)| (e, k, t)).collect()
}

fn bind_attribution(ctx: &Ctx, _rng: &mut ChaCha8Rng) -> Result<(Bound, GroundTruth), String> {
    let mut last = String::from("no event anchors an attribution window");
    for (_, key, t) in attribution_anchors(ctx) {
        let bound = Bound {
            subtype: subtypes::CHANGE_ATTRIBUTION_RANKING,
            params: params_of(&[
                ("indicator", json!(key)),
                ("change_day", json!(t)),
                ("window", json!(REGIME_WINDOW_DAYS)),
            ]),
            text: format!(
                "Mean {} shifted around {}. Rank the events that pushed it in the observed direction by their modeled contribution to the shift, largest first. Answer with the ordered list of event ids.",
                pretty(key),
                ctx.calendar.date_str(t)
            ),
        };
        match finish(ctx, bound) {
            Ok(pair) => return Ok(pair),
            Err(reason) => last = reason,
        }
    }
    Err(last)
}

fn bind_counterfactual(
    ctx: &Ctx,
    engine: &Engine,
    _rng: &mut ChaCha8Rng,
) -> Result<(Bound, GroundTruth), String> {
    let mut last = String::from("no event anchors a counterfactual window");
    for (_, key, t) in attribution_anchors(ctx) {
        let params = params_of(&[
            ("indicator", json!(key)),
            ("change_day", json!(t)),
            ("window", json!(REGIME_WINDOW_DAYS)),
        ]);
        match counterfactual_ground_truth(ctx.bundle, engine, &params) {
            Ok(truth) => {
                let bound = Bound {
                    subtype: subtypes::COUNTERFACTUAL_CHANGE_RANKING,
                    params,
                    text: format!(
                        "Mean {} shifted around {}. Ranking each event by how much of that shift disappears when it alone is removed from the simulation, order the responsible events largest first. Answer with the ordered list of event ids.",
                        pretty(key),
                        ctx.calendar.date_str(t)
                    ),
                };
                return Ok((bound, truth));
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(last)
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

pub fn compute_ground_truth(
    bundle: &UserBundle,
    subtype: &str,
    params: &Params,
) -> Result<GroundTruth, Error> {
    use subtypes::*;
    match subtype {
        DEVICE_VALUE_ON_DATE => truth_device_value(bundle, params),
        EXAM_VALUE_ON_VISIT => truth_exam_value(bundle, params),
        EVENT_INDICATOR_MAPPING => truth_event_mapping(bundle, params),
        MOST_INDICATOR_RICH_EVENT => truth_richest_event(bundle),
        EXTREME_VALUE_DATE => truth_extreme_date(bundle, params),
        EXTREME_MONTH_MEAN => truth_extreme_month(bundle, params),
        LARGEST_MONTH_CHANGE => truth_month_change(bundle, params),
        REGIME_CHANGE_DAY => truth_regime_change(bundle, params),
        MAX_VOLATILITY_MONTH => truth_volatility_month(bundle, params),
        PRE_POST_EVENT_DELTA => truth_pre_post(bundle, params),
        ADJACENT_WINDOW_DELTA => truth_adjacent_delta(bundle, params),
        EVENT_VS_BASELINE_RATIO => truth_event_ratio(bundle, params),
        WEEKEND_WEEKDAY_RATIO => truth_weekend_ratio(bundle, params),
        EVENTS_SHARING_INDICATOR => truth_shared_indicator(bundle, params),
        TWO_MONTH_MEAN_DELTA => truth_two_month_delta(bundle, params),
        EVER_ABNORMAL => truth_ever_abnormal(bundle, params),
        ABNORMAL_RATE_DETERIORATION => truth_deterioration(bundle),
        ABNORMAL_COUNT_AT_VISIT => truth_abnormal_count(bundle, params),
        PERSISTENT_ABNORMAL_CLUSTER => truth_cluster(bundle, params),
        EVER_ABNORMAL_SET => truth_abnormal_set(bundle),
        EVENTS_AT_FIRST_EXCEEDANCE => truth_exceedance(bundle, params),
        LARGEST_COMPONENT_ON_DATE => truth_component(bundle, params),
        EVENT_IMPACT_RANKING => truth_impact_ranking(bundle, params),
        CHANGE_ATTRIBUTION_RANKING => truth_attribution(bundle, params),
        COUNTERFACTUAL_CHANGE_RANKING => Err(Error::Query(
            "counterfactual_change_ranking needs the generating engine".into(),
        )),
        other => Err(Error::Query(format!("unknown subtype {other}"))),
    }
}

fn p_str<'a>(params: &'a Params, key: &str) -> Result<&'a str, Error> {
    params
        .get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Query(format!("param {key} missing or not a string")))
}

fn p_day(params: &Params, key: &str) -> Result<i64, Error> {
    params
        .get(key)
        .and_then(Value::as_i64)
        .ok_or_else(|| Error::Query(format!("param {key} missing or not an integer")))
}

fn series<'a>(bundle: &'a UserBundle, key: &str) -> Result<&'a DeviceSeries, Error> {
    bundle
        .device
        .get(key)
        .ok_or_else(|| Error::UnknownIndicator(key.to_string()))
}

fn get_event<'a>(bundle: &'a UserBundle, id: &str) -> Result<&'a Event, Error> {
    bundle
        .event(id)
        .ok_or_else(|| Error::UnknownEvent(id.to_string()))
}

fn mean_count(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        (f64::NAN, 0)
    } else {
        (sum / n as f64, n)
    }
}

fn sample_std(values: &[f64]) -> f64 {
    let m = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct MonthSpan {
    label: String,
    first_day: i64,
    last_day: i64,
}

fn month_spans(calendar: Calendar, horizon: i64) -> Vec<MonthSpan> {
    let mut spans: Vec<MonthSpan> = Vec::new();
    for day in 0..horizon {
        let label = calendar.month_label(day);
        match spans.last_mut() {
            Some(span) if span.label == label => span.last_day = day,
            _ => spans.push(MonthSpan {
                label,
                first_day: day,
                last_day: day,
            }),
        }
    }
    spans
}

fn month_values(series: &DeviceSeries, span: &MonthSpan) -> Vec<f64> {
    series
        .numeric_range(span.first_day, span.last_day)
        .map(|(_, v)| v)
        .collect()
}

fn number_answer(
    v: f64,
    unit: Option<&str>,
    source: AnswerSource,
    evidence: Vec<Evidence>,
) -> CanonicalAnswer {
    CanonicalAnswer {
        answer_type: AnswerKind::Number,
        values: vec![AnswerValue::Number(v)],
        dates: Vec::new(),
        unit: unit.map(str::to_string),
        source: Some(source),
        evidence,
    }
}

fn text_answer(
    kind: AnswerKind,
    texts: Vec<String>,
    source: AnswerSource,
    evidence: Vec<Evidence>,
) -> CanonicalAnswer {
    CanonicalAnswer {
        answer_type: kind,
        values: texts.into_iter().map(AnswerValue::Text).collect(),
        dates: Vec::new(),
        unit: None,
        source: Some(source),
        evidence,
    }
}

fn date_answer(dates: Vec<String>, source: AnswerSource, evidence: Vec<Evidence>) -> CanonicalAnswer {
    CanonicalAnswer {
        answer_type: AnswerKind::Date,
        values: Vec::new(),
        dates,
        unit: None,
        source: Some(source),
        evidence,
    }
}

fn plain(answer: CanonicalAnswer) -> GroundTruth {
    GroundTruth {
        answer,
        ranking_keys: Vec::new(),
        any_of: false,
        flags: Vec::new(),
    }
}

fn evd(entity: &str, from: i64, to: i64) -> Evidence {
    Evidence {
        entity: entity.to_string(),
        window: [from, to],
    }
}

fn truth_device_value(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let day = p_day(params, "day")?;
    let series = series(bundle, key)?;
    let v = series
        .numeric(day)
        .ok_or_else(|| Error::Query(format!("{key} has no numeric value on day {day}")))?;
    Ok(plain(number_answer(
        v,
        Some(&series.unit),
        AnswerSource::Device,
        vec![evd(key, day, day)],
    )))
}

fn truth_exam_value(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let day = p_day(params, "visit_day")?;
    let visit = bundle
        .exams
        .iter()
        .find(|v| v.visit_day == day)
        .ok_or_else(|| Error::Query(format!("no exam visit on day {day}")))?;
    let result = visit
        .results
        .iter()
        .find(|r| r.indicator_key == key)
        .ok_or_else(|| Error::Query(format!("{key} not measured on day {day}")))?;
    Ok(plain(number_answer(
        result.value,
        Some(&result.unit),
        AnswerSource::Exam,
        vec![evd(key, day, day)],
    )))
}

fn truth_event_mapping(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let ev = get_event(bundle, p_str(params, "event_id")?)?;
    let keys: BTreeSet<&str> = ev.impacts.iter().map(|i| i.indicator_key.as_str()).collect();
    Ok(plain(text_answer(
        AnswerKind::Set,
        keys.into_iter().map(str::to_string).collect(),
        AnswerSource::Event,
        vec![evd(&ev.event_id, ev.start_day, ev.end_day)],
    )))
}

fn truth_richest_event(bundle: &UserBundle) -> Result<GroundTruth, Error> {
    if bundle.events.is_empty() {
        return Err(Error::Query("bundle has no events".into()));
    }
    let count = |ev: &Event| {
        ev.impacts
            .iter()
            .map(|i| i.indicator_key.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    };
    let best = bundle.events.iter().map(count).max().unwrap();
    let tying: Vec<&Event> = bundle.events.iter().filter(|e| count(e) == best).collect();
    let evidence = tying
        .iter()
        .map(|e| evd(&e.event_id, e.start_day, e.end_day))
        .collect();
    let ids: Vec<String> = tying.iter().map(|e| e.event_id.clone()).collect();
    Ok(GroundTruth {
        any_of: ids.len() > 1,
        answer: text_answer(AnswerKind::String, ids, AnswerSource::Event, evidence),
        ranking_keys: Vec::new(),
        flags: Vec::new(),
    })
}

fn truth_extreme_date(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let max = match p_str(params, "direction")? {
        "max" => true,
        "min" => false,
        other => return Err(Error::Query(format!("bad direction {other}"))),
    };
    let series = series(bundle, key)?;
    let calendar = bundle.calendar()?;
    let horizon = bundle.horizon();
    let mut best: Option<f64> = None;
    for (_, v) in series.numeric_range(0, horizon - 1) {
        best = Some(match best {
            None => v,
            Some(b) if max && v > b => v,
            Some(b) if !max && v < b => v,
            Some(b) => b,
        });
    }
    let best = best.ok_or_else(|| Error::Query(format!("{key} has no numeric days")))?;
    let days: Vec<i64> = series
        .numeric_range(0, horizon - 1)
        .filter(|&(_, v)| v == best)
        .map(|(d, _)| d)
        .collect();
    let dates: Vec<String> = days.iter().map(|&d| calendar.date_str(d)).collect();
    Ok(GroundTruth {
        any_of: dates.len() > 1,
        answer: date_answer(
            dates,
            AnswerSource::Device,
            vec![evd(key, days[0], *days.last().unwrap())],
        ),
        ranking_keys: Vec::new(),
        flags: Vec::new(),
    })
}

/// Qualifying months with their numeric values, in calendar order, tagged by
/// span index so true adjacency survives dropped months.
fn qualifying_months(
    series: &DeviceSeries,
    calendar: Calendar,
    horizon: i64,
    min_days: i64,
) -> Vec<(usize, MonthSpan, Vec<f64>)> {
    month_spans(calendar, horizon)
        .into_iter()
        .enumerate()
        .filter_map(|(i, span)| {
            let values = month_values(series, &span);
            (values.len() as i64 >= min_days).then_some((i, span, values))
        })
        .collect()
}

fn truth_extreme_month(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let highest = match p_str(params, "direction")? {
        "highest" => true,
        "lowest" => false,
        other => return Err(Error::Query(format!("bad direction {other}"))),
    };
    let min_days = p_day(params, "min_days")?;
    let series = series(bundle, key)?;
    let months = qualifying_months(series, bundle.calendar()?, bundle.horizon(), min_days);
    if months.is_empty() {
        return Err(Error::Query(format!(
            "{key} has no month with {min_days} recorded days"
        )));
    }
    let means: Vec<(usize, f64)> = months
        .iter()
        .enumerate()
        .map(|(i, (_, _, vals))| (i, mean_count(vals.iter().copied()).0))
        .collect();
    let best = means
        .iter()
        .map(|&(_, m)| m)
        .fold(if highest { f64::NEG_INFINITY } else { f64::INFINITY }, |b, m| {
            if highest {
                b.max(m)
            } else {
                b.min(m)
            }
        });
    let tying: Vec<usize> = means.iter().filter(|&&(_, m)| m == best).map(|&(i, _)| i).collect();
    let labels: Vec<String> = tying.iter().map(|&i| months[i].1.label.clone()).collect();
    let evidence = tying
        .iter()
        .map(|&i| evd(key, months[i].1.first_day, months[i].1.last_day))
        .collect();
    let mut flags = Vec::new();
    if min_days < MONTH_MIN_DAYS {
        flags.push("relaxed_month_threshold".to_string());
    }
    Ok(GroundTruth {
        any_of: labels.len() > 1,
        answer: text_answer(AnswerKind::String, labels, AnswerSource::Device, evidence),
        ranking_keys: Vec::new(),
        flags,
    })
}

fn truth_month_change(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let min_days = p_day(params, "min_days")?;
    let series = series(bundle, key)?;
    let months = qualifying_months(series, bundle.calendar()?, bundle.horizon(), min_days);
    let mut diffs: Vec<(usize, f64)> = Vec::new();
    for w in months.windows(2) {
        let (ia, _, va) = &w[0];
        let (ib, _, vb) = &w[1];
        if ib - ia != 1 {
            continue;
        }
        let d = mean_count(vb.iter().copied()).0 - mean_count(va.iter().copied()).0;
        diffs.push((*ib, d));
    }
    if diffs.is_empty() {
        return Err(Error::Query(format!(
            "{key} has no consecutive qualifying months"
        )));
    }
    let best = diffs.iter().map(|&(_, d)| d.abs()).fold(f64::NEG_INFINITY, f64::max);
    let tying: Vec<usize> = diffs
        .iter()
        .filter(|&&(_, d)| d.abs() == best)
        .map(|&(i, _)| i)
        .collect();
    let span_of = |span_idx: usize| {
        months
            .iter()
            .find(|(i, _, _)| *i == span_idx)
            .map(|(_, s, _)| s)
            .unwrap()
    };
    let labels: Vec<String> = tying.iter().map(|&i| span_of(i).label.clone()).collect();
    let evidence = tying
        .iter()
        .map(|&i| evd(key, span_of(i - 1).first_day, span_of(i).last_day))
        .collect();
    Ok(GroundTruth {
        any_of: labels.len() > 1,
        answer: text_answer(AnswerKind::String, labels, AnswerSource::Device, evidence),
        ranking_keys: Vec::new(),
        flags: Vec::new(),
    })
}

fn window_values(series: &DeviceSeries, from: i64, to: i64) -> Vec<f64> {
    series.numeric_range(from, to).map(|(_, v)| v).collect()
}

fn truth_regime_change(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let w = p_day(params, "window")?;
    if w < 2 {
        return Err(Error::Query(format!("window {w} too small")));
    }
    let series = series(bundle, key)?;
    let horizon = bundle.horizon();
    let mut best: Option<f64> = None;
    let mut best_days: Vec<i64> = Vec::new();
    for t in w..=horizon - w {
        let before = window_values(series, t - w, t - 1);
        let after = window_values(series, t, t + w - 1);
        if before.len() < REGIME_MIN_SAMPLES || after.len() < REGIME_MIN_SAMPLES {
            continue;
        }
        let gap = (mean_count(after.iter().copied()).0 - mean_count(before.iter().copied()).0).abs();
        match best {
            Some(b) if gap < b => {}
            Some(b) if gap == b => best_days.push(t),
            _ => {
                best = Some(gap);
                best_days = vec![t];
            }
        }
    }
    let gap = best.ok_or_else(|| Error::Query(format!("{key} has no valid window position")))?;
    let t = best_days[0];
    let before = window_values(series, t - w, t - 1);
    let after = window_values(series, t, t + w - 1);
    let (vb, va) = (sample_std(&before).powi(2), sample_std(&after).powi(2));
    let pooled = (((before.len() - 1) as f64 * vb + (after.len() - 1) as f64 * va)
        / (before.len() + after.len() - 2) as f64)
        .sqrt();
    if !(gap > 2.0 * pooled) {
        return Err(Error::Query(format!(
            "{key}: largest shift {gap:.4} is within twice the pooled std {pooled:.4}"
        )));
    }
    let calendar = bundle.calendar()?;
    let dates: Vec<String> = best_days.iter().map(|&d| calendar.date_str(d)).collect();
    Ok(GroundTruth {
        any_of: dates.len() > 1,
        answer: date_answer(dates, AnswerSource::Device, vec![evd(key, t - w, t + w - 1)]),
        ranking_keys: Vec::new(),
        flags: Vec::new(),
    })
}

fn truth_volatility_month(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let min_days = p_day(params, "min_days")?.max(2);
    let series = series(bundle, key)?;
    let months = qualifying_months(series, bundle.calendar()?, bundle.horizon(), min_days);
    if months.is_empty() {
        return Err(Error::Query(format!(
            "{key} has no month with {min_days} recorded days"
        )));
    }
    let stds: Vec<f64> = months.iter().map(|(_, _, v)| sample_std(v)).collect();
    let best = stds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tying: Vec<usize> = (0..months.len()).filter(|&i| stds[i] == best).collect();
    let labels: Vec<String> = tying.iter().map(|&i| months[i].1.label.clone()).collect();
    let evidence = tying
        .iter()
        .map(|&i| evd(key, months[i].1.first_day, months[i].1.last_day))
        .collect();
    Ok(GroundTruth {
        any_of: labels.len() > 1,
        answer: text_answer(AnswerKind::String, labels, AnswerSource::Device, evidence),
        ranking_keys: Vec::new(),
        flags: Vec::new(),
    })
}

fn truth_pre_post(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let ev = get_event(bundle, p_str(params, "event_id")?)?;
    let key = p_str(params, "indicator")?;
    let w = p_day(params, "window")?;
    let series = series(bundle, key)?;
    let ts = ev.start_day;
    if ts - w < 0 || ts + w > bundle.horizon() {
        return Err(Error::Query(format!(
            "event {} leaves no room for {w}-day windows",
            ev.event_id
        )));
    }
    let pre = window_values(series, ts - w, ts - 1);
    let post = window_values(series, ts, ts + w - 1);
    if pre.len() < COMPARISON_MIN_SAMPLES || post.len() < COMPARISON_MIN_SAMPLES {
        return Err(Error::Query(format!(
            "windows around day {ts} have too few recorded days"
        )));
    }
    let delta = mean_count(post.iter().copied()).0 - mean_count(pre.iter().copied()).0;
    Ok(plain(number_answer(
        delta,
        Some(&series.unit),
        AnswerSource::Device,
        vec![evd(&ev.event_id, ts - w, ts + w - 1), evd(key, ts - w, ts + w - 1)],
    )))
}

fn truth_adjacent_delta(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let mid = p_day(params, "mid_day")?;
    let w = p_day(params, "window")?;
    let series = series(bundle, key)?;
    if mid - w < 0 || mid + w > bundle.horizon() {
        return Err(Error::Query(format!("windows around day {mid} out of range")));
    }
    let earlier = window_values(series, mid - w, mid - 1);
    let later = window_values(series, mid, mid + w - 1);
    if earlier.len() < COMPARISON_MIN_SAMPLES || later.len() < COMPARISON_MIN_SAMPLES {
        return Err(Error::Query(format!(
            "windows around day {mid} have too few recorded days"
        )));
    }
    let delta = mean_count(later.iter().copied()).0 - mean_count(earlier.iter().copied()).0;
    Ok(plain(number_answer(
        delta,
        Some(&series.unit),
        AnswerSource::Device,
        vec![evd(key, mid - w, mid + w - 1)],
    )))
}

/// Numeric days on which the logged raw event sum for this indicator is zero.
fn event_free_values(series: &DeviceSeries) -> Vec<f64> {
    series
        .values
        .iter()
        .filter(|p| p.decomposition.event_sum_raw == 0.0)
        .filter_map(|p| p.value)
        .collect()
}

fn truth_event_ratio(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let ev = get_event(bundle, p_str(params, "event_id")?)?;
    let key = p_str(params, "indicator")?;
    let series = series(bundle, key)?;
    let horizon = bundle.horizon();
    // The first affected day is the one after onset.
    let during = window_values(series, ev.start_day + 1, ev.end_day.min(horizon - 1));
    if during.len() < 3 {
        return Err(Error::Query(format!(
            "fewer than 3 recorded days while {} was active",
            ev.event_id
        )));
    }
    let mut flags = Vec::new();
    let baseline = {
        let free = event_free_values(series);
        if free.len() >= BASELINE_MIN_DAYS {
            free
        } else {
            flags.push("whole_series_baseline".to_string());
            window_values(series, 0, horizon - 1)
        }
    };
    if baseline.is_empty() {
        return Err(Error::Query(format!("{key} has no baseline days")));
    }
    let base_mean = mean_count(baseline.iter().copied()).0;
    if base_mean.abs() <= 1e-9 {
        return Err(Error::Query(format!("{key} baseline mean is degenerate")));
    }
    let ratio = mean_count(during.iter().copied()).0 / base_mean;
    Ok(GroundTruth {
        answer: number_answer(
            ratio,
            None,
            AnswerSource::Derived,
            vec![evd(&ev.event_id, ev.start_day, ev.end_day), evd(key, 0, horizon - 1)],
        ),
        ranking_keys: Vec::new(),
        any_of: false,
        flags,
    })
}

fn truth_weekend_ratio(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let series = series(bundle, key)?;
    let calendar = bundle.calendar()?;
    let horizon = bundle.horizon();
    let (mut we, mut wd) = (Vec::new(), Vec::new());
    for (d, v) in series.numeric_range(0, horizon - 1) {
        if calendar.weekday(d) >= 5 {
            we.push(v);
        } else {
            wd.push(v);
        }
    }
    if we.len() < 5 || wd.len() < 5 {
        return Err(Error::Query(format!("{key} has too few recorded days per day class")));
    }
    let denom = mean_count(wd.iter().copied()).0;
    if denom.abs() <= 1e-9 {
        return Err(Error::Query(format!("{key} weekday mean is degenerate")));
    }
    let ratio = mean_count(we.iter().copied()).0 / denom;
    Ok(plain(number_answer(
        ratio,
        None,
        AnswerSource::Derived,
        vec![evd(key, 0, horizon - 1)],
    )))
}

fn truth_shared_indicator(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let target = get_event(bundle, p_str(params, "event_id")?)?;
    let target_keys: BTreeSet<&str> = target
        .impacts
        .iter()
        .map(|i| i.indicator_key.as_str())
        .collect();
    let mut ids: Vec<String> = bundle
        .events
        .iter()
        .filter(|e| e.event_id != target.event_id)
        .filter(|e| e.impacts.iter().any(|i| target_keys.contains(i.indicator_key.as_str())))
        .map(|e| e.event_id.clone())
        .collect();
    ids.sort();
    let mut evidence = vec![evd(&target.event_id, target.start_day, target.end_day)];
    for id in &ids {
        let e = bundle.event(id).unwrap();
        evidence.push(evd(id, e.start_day, e.end_day));
    }
    Ok(plain(text_answer(
        AnswerKind::Set,
        ids,
        AnswerSource::Event,
        evidence,
    )))
}

fn truth_two_month_delta(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let (la, lb) = (p_str(params, "month_a")?, p_str(params, "month_b")?);
    let series = series(bundle, key)?;
    let spans = month_spans(bundle.calendar()?, bundle.horizon());
    let span = |label: &str| {
        spans
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| Error::Query(format!("month {label} outside the horizon")))
    };
    let (sa, sb) = (span(la)?, span(lb)?);
    let (va, vb) = (month_values(series, sa), month_values(series, sb));
    if va.is_empty() || vb.is_empty() {
        return Err(Error::Query(format!("{key} has an empty month among {la}, {lb}")));
    }
    let delta = mean_count(vb.iter().copied()).0 - mean_count(va.iter().copied()).0;
    Ok(plain(number_answer(
        delta,
        Some(&series.unit),
        AnswerSource::Device,
        vec![evd(key, sa.first_day, sa.last_day), evd(key, sb.first_day, sb.last_day)],
    )))
}

fn abnormal_keys(visit: &crate::model::ExamVisit) -> BTreeSet<&str> {
    visit
        .results
        .iter()
        .filter(|r| r.status == ResultStatus::Abnormal)
        .map(|r| r.indicator_key.as_str())
        .collect()
}

fn truth_ever_abnormal(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let mut seen = false;
    let mut first_abnormal: Option<i64> = None;
    for visit in &bundle.exams {
        for r in visit.results.iter().filter(|r| r.indicator_key == key) {
            seen = true;
            if r.status == ResultStatus::Abnormal && first_abnormal.is_none() {
                first_abnormal = Some(visit.visit_day);
            }
        }
    }
    if !seen {
        return Err(Error::Query(format!("{key} was never measured at an exam")));
    }
    let (text, evidence) = match first_abnormal {
        Some(d) => ("yes", vec![evd(key, d, d)]),
        None => ("no", vec![evd(key, 0, bundle.horizon() - 1)]),
    };
    Ok(plain(text_answer(
        AnswerKind::String,
        vec![text.to_string()],
        AnswerSource::Exam,
        evidence,
    )))
}

fn truth_deterioration(bundle: &UserBundle) -> Result<GroundTruth, Error> {
    let visits = &bundle.exams;
    if visits.len() < 2 {
        return Err(Error::Query("fewer than two exam visits".into()));
    }
    let half = visits.len() / 2;
    let (first, second) = visits.split_at(half);
    let keys: BTreeSet<&str> = visits
        .iter()
        .flat_map(|v| v.results.iter().map(|r| r.indicator_key.as_str()))
        .collect();
    let rate = |half: &[crate::model::ExamVisit], key: &str| {
        let mut hits = 0usize;
        let mut n = 0usize;
        for v in half {
            for r in v.results.iter().filter(|r| r.indicator_key == key) {
                n += 1;
                if r.status == ResultStatus::Abnormal {
                    hits += 1;
                }
            }
        }
        (n > 0).then(|| hits as f64 / n as f64)
    };
    let mut deltas: Vec<(&str, f64)> = Vec::new();
    for key in keys {
        if let (Some(r1), Some(r2)) = (rate(first, key), rate(second, key)) {
            let d = r2 - r1;
            if d > 0.0 {
                deltas.push((key, d));
            }
        }
    }
    if deltas.is_empty() {
        return Err(Error::Query("no indicator's abnormal rate deteriorated".into()));
    }
    let best = deltas.iter().map(|&(_, d)| d).fold(f64::NEG_INFINITY, f64::max);
    let tying: Vec<&str> = deltas.iter().filter(|&&(_, d)| d == best).map(|&(k, _)| k).collect();
    let evidence = tying
        .iter()
        .map(|k| evd(k, visits[0].visit_day, visits.last().unwrap().visit_day))
        .collect();
    Ok(GroundTruth {
        any_of: tying.len() > 1,
        answer: text_answer(
            AnswerKind::String,
            tying.iter().map(|k| k.to_string()).collect(),
            AnswerSource::Exam,
            evidence,
        ),
        ranking_keys: Vec::new(),
        flags: Vec::new(),
    })
}

fn truth_abnormal_count(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let day = p_day(params, "visit_day")?;
    let visit = bundle
        .exams
        .iter()
        .find(|v| v.visit_day == day)
        .ok_or_else(|| Error::Query(format!("no exam visit on day {day}")))?;
    let n = visit
        .results
        .iter()
        .filter(|r| r.status == ResultStatus::Abnormal)
        .count();
    Ok(plain(number_answer(
        n as f64,
        None,
        AnswerSource::Exam,
        vec![evd(&format!("visit-{day}"), day, day)],
    )))
}

fn truth_cluster(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let da = p_day(params, "visit_day_a")?;
    let db = p_day(params, "visit_day_b")?;
    let visit = |d: i64| {
        bundle
            .exams
            .iter()
            .find(|v| v.visit_day == d)
            .ok_or_else(|| Error::Query(format!("no exam visit on day {d}")))
    };
    let (va, vb) = (visit(da)?, visit(db)?);
    let common: Vec<String> = abnormal_keys(va)
        .intersection(&abnormal_keys(vb))
        .map(|k| k.to_string())
        .collect();
    if common.len() < 2 {
        return Err(Error::Query(format!(
            "exams on days {da} and {db} share fewer than two abnormal indicators"
        )));
    }
    let evidence = common.iter().map(|k| evd(k, da, db)).collect();
    Ok(plain(text_answer(
        AnswerKind::Set,
        common,
        AnswerSource::Exam,
        evidence,
    )))
}

fn truth_abnormal_set(bundle: &UserBundle) -> Result<GroundTruth, Error> {
    let mut first_abnormal: BTreeMap<&str, i64> = BTreeMap::new();
    for visit in &bundle.exams {
        for r in visit.results.iter().filter(|r| r.status == ResultStatus::Abnormal) {
            first_abnormal
                .entry(r.indicator_key.as_str())
                .or_insert(visit.visit_day);
        }
    }
    let evidence = first_abnormal.iter().map(|(k, &d)| evd(k, d, d)).collect();
    Ok(plain(text_answer(
        AnswerKind::Set,
        first_abnormal.keys().map(|k| k.to_string()).collect(),
        AnswerSource::Exam,
        evidence,
    )))
}

/// Per-event raw contributions `beta * g` on one indicator-day, in the order
/// the daily update superposes them (event order, then impact order).
fn day_contribs(
    events: &[Event],
    key: &str,
    day: i64,
    mode: FadeMode,
) -> Result<Vec<(usize, f64)>, Error> {
    let mut out = Vec::new();
    for (i, ev) in events.iter().enumerate() {
        for imp in ev.impacts.iter().filter(|imp| imp.indicator_key == key) {
            let kernel = Kernel::new(
                ev.start_day as f64,
                ev.duration_days as f64,
                imp.tau_rise,
                imp.tau_fade,
            )?;
            let g = kernel.eval(day as f64, mode);
            if g != 0.0 {
                out.push((i, imp.beta * g));
            }
        }
    }
    Ok(out)
}

/// Splits a day's capped event delta across the raw contributions,
/// proportionally to `contrib / raw_sum`. The last share is the remainder,
/// adjusted so the left-to-right sum of the shares reproduces `delta`
/// bit-exactly whenever any f64 can land it there; a zero raw sum attributes
/// nothing.
pub fn attribution_shares(contribs: &[f64], raw_sum: f64, delta: f64) -> Vec<f64> {
    if contribs.is_empty() || raw_sum == 0.0 {
        return vec![0.0; contribs.len()];
    }
    let mut shares = Vec::with_capacity(contribs.len());
    let mut acc = 0.0;
    for &c in &contribs[..contribs.len() - 1] {
        let share = delta * (c / raw_sum);
        acc += share;
        shares.push(share);
    }
    shares.push(close_the_sum(acc, delta));
    shares
}

/// Final remainder share: `delta - acc` refined until `acc + share` rounds
/// to `delta` itself. Plain `delta - acc` double-rounds, so the naive
/// remainder can sit one ulp off; refinement and a small neighbor scan find
/// an exact closer whenever one is representable. Heavy sign cancellation
/// among the earlier shares can leave no such f64 at all (the residual needs
/// more precision than one float carries); the nearest candidate wins then.
fn close_the_sum(acc: f64, delta: f64) -> f64 {
    let mut share = delta - acc;
    for _ in 0..3 {
        let total = acc + share;
        if total == delta {
            return share;
        }
        let refined = share + (delta - total);
        if refined == share {
            break;
        }
        share = refined;
    }
    let mut best = share;
    let mut best_err = (acc + share - delta).abs();
    let (mut up, mut down) = (share, share);
    for _ in 0..3 {
        up = up.next_up();
        down = down.next_down();
        for cand in [up, down] {
            let err = (acc + cand - delta).abs();
            if err == 0.0 {
                return cand;
            }
            if err < best_err {
                best = cand;
                best_err = err;
            }
        }
    }
    best
}

/// Signed per-event attribution totals over `[from, to]`, keyed by event
/// index. Days outside the series are ignored.
fn attribution_totals(
    bundle: &UserBundle,
    key: &str,
    from: i64,
    to: i64,
    weight: f64,
    totals: &mut BTreeMap<usize, f64>,
) -> Result<(), Error> {
    let series = series(bundle, key)?;
    let mode = bundle.seeds.fade_mode;
    for day in from.max(0)..=to.min(bundle.horizon() - 1) {
        let point = &series.values[day as usize];
        let contribs = day_contribs(&bundle.events, key, day, mode)?;
        if contribs.is_empty() {
            continue;
        }
        let raw: Vec<f64> = contribs.iter().map(|&(_, c)| c).collect();
        let shares = attribution_shares(
            &raw,
            point.decomposition.event_sum_raw,
            point.decomposition.delta_evt,
        );
        for (&(idx, _), share) in contribs.iter().zip(&shares) {
            *totals.entry(idx).or_insert(0.0) += weight * share;
        }
    }
    Ok(())
}

fn ranked_truth(
    bundle: &UserBundle,
    key: &str,
    totals: BTreeMap<usize, f64>,
    min_entries: usize,
    keep_sign: Option<bool>,
    evidence_window: [i64; 2],
) -> Result<GroundTruth, Error> {
    let mut entries: Vec<(&str, f64)> = totals
        .into_iter()
        .filter(|&(_, total)| total != 0.0)
        .filter(|&(_, total)| keep_sign.map_or(true, |positive| (total > 0.0) == positive))
        .map(|(idx, total)| (bundle.events[idx].event_id.as_str(), total))
        .collect();
    if entries.len() < min_entries {
        return Err(Error::Query(format!(
            "only {} events contribute, need {min_entries}",
            entries.len()
        )));
    }
    entries.sort_by(|a, b| {
        b.1.abs()
            .partial_cmp(&a.1.abs())
            .unwrap()
            .then_with(|| a.0.cmp(b.0))
    });
    let mut evidence = vec![evd(key, evidence_window[0], evidence_window[1])];
    for (id, _) in &entries {
        let e = bundle.event(id).unwrap();
        evidence.push(evd(id, e.start_day, e.end_day));
    }
    Ok(GroundTruth {
        answer: text_answer(
            AnswerKind::RankedList,
            entries.iter().map(|(id, _)| id.to_string()).collect(),
            AnswerSource::Derived,
            evidence,
        ),
        ranking_keys: entries.iter().map(|(_, t)| t.abs()).collect(),
        any_of: false,
        flags: Vec::new(),
    })
}

fn truth_impact_ranking(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let start = p_day(params, "start_day")?;
    let window = p_day(params, "window")?;
    let end = (start + window - 1).min(bundle.horizon() - 1);
    let mut totals = BTreeMap::new();
    attribution_totals(bundle, key, start, end, 1.0, &mut totals)?;
    ranked_truth(bundle, key, totals, 2, None, [start, end])
}

fn observed_change(
    bundle: &UserBundle,
    key: &str,
    t: i64,
    w: i64,
) -> Result<f64, Error> {
    let series = series(bundle, key)?;
    if t - w < 0 || t + w > bundle.horizon() {
        return Err(Error::Query(format!("windows around day {t} out of range")));
    }
    let before = window_values(series, t - w, t - 1);
    let after = window_values(series, t, t + w - 1);
    if before.len() < REGIME_MIN_SAMPLES || after.len() < REGIME_MIN_SAMPLES {
        return Err(Error::Query(format!(
            "windows around day {t} have too few recorded days"
        )));
    }
    let change = mean_count(after.iter().copied()).0 - mean_count(before.iter().copied()).0;
    if change == 0.0 {
        return Err(Error::Query(format!("no observed change around day {t}")));
    }
    Ok(change)
}

fn truth_attribution(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let t = p_day(params, "change_day")?;
    let w = p_day(params, "window")?;
    let change = observed_change(bundle, key, t, w)?;
    // Contribution to the change: share-sum over the after window minus the
    // before window; only events pushing in the observed direction rank.
    let mut totals = BTreeMap::new();
    attribution_totals(bundle, key, t, t + w - 1, 1.0, &mut totals)?;
    attribution_totals(bundle, key, t - w, t - 1, -1.0, &mut totals)?;
    ranked_truth(bundle, key, totals, 1, Some(change > 0.0), [t - w, t + w - 1])
}

/// Counterfactual attribution: how much of the observed change disappears
/// when each candidate event alone is removed and the history replayed.
pub fn counterfactual_ground_truth(
    bundle: &UserBundle,
    engine: &Engine,
    params: &Params,
) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let t = p_day(params, "change_day")?;
    let w = p_day(params, "window")?;
    let change = observed_change(bundle, key, t, w)?;
    let window_change = |device: &BTreeMap<String, DeviceSeries>| -> Result<f64, Error> {
        let series = device
            .get(key)
            .ok_or_else(|| Error::UnknownIndicator(key.to_string()))?;
        let before = window_values(series, t - w, t - 1);
        let after = window_values(series, t, t + w - 1);
        Ok(mean_count(after.iter().copied()).0 - mean_count(before.iter().copied()).0)
    };
    let mut entries: Vec<(&str, f64)> = Vec::new();
    for ev in &bundle.events {
        let touches_window =
            ev.affects(key) && ev.start_day + 1 <= t + w - 1 && ev.last_effect_day() >= t - w;
        if !touches_window {
            continue;
        }
        let device = engine.resimulate_without(bundle, &ev.event_id)?;
        let contribution = change - window_change(&device)?;
        if contribution != 0.0 && (contribution > 0.0) == (change > 0.0) {
            entries.push((ev.event_id.as_str(), contribution));
        }
    }
    if entries.is_empty() {
        return Err(Error::Query(format!(
            "no event contributes to the change around day {t} in its own direction"
        )));
    }
    entries.sort_by(|a, b| {
        b.1.abs()
            .partial_cmp(&a.1.abs())
            .unwrap()
            .then_with(|| a.0.cmp(b.0))
    });
    let mut evidence = vec![evd(key, t - w, t + w - 1)];
    for (id, _) in &entries {
        let e = bundle.event(id).unwrap();
        evidence.push(evd(id, e.start_day, e.end_day));
    }
    Ok(GroundTruth {
        answer: text_answer(
            AnswerKind::RankedList,
            entries.iter().map(|(id, _)| id.to_string()).collect(),
            AnswerSource::Derived,
            evidence,
        ),
        ranking_keys: entries.iter().map(|(_, c)| c.abs()).collect(),
        any_of: false,
        flags: vec!["counterfactual".to_string()],
    })
}

fn truth_exceedance(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let above = match p_str(params, "direction")? {
        "above" => true,
        "below" => false,
        other => return Err(Error::Query(format!("bad direction {other}"))),
    };
    let series = series(bundle, key)?;
    let horizon = bundle.horizon();
    let mut flags = Vec::new();
    let baseline = {
        let free = event_free_values(series);
        if free.len() >= BASELINE_MIN_DAYS {
            free
        } else {
            flags.push("whole_series_baseline".to_string());
            window_values(series, 0, horizon - 1)
        }
    };
    if baseline.len() < 2 {
        return Err(Error::Query(format!("{key} has too few baseline days")));
    }
    let mu = mean_count(baseline.iter().copied()).0;
    let sigma = sample_std(&baseline);
    let exceeds = |v: f64| {
        if above {
            v > mu + 2.0 * sigma
        } else {
            v < mu - 2.0 * sigma
        }
    };
    let day = series
        .numeric_range(0, horizon - 1)
        .find(|&(_, v)| exceeds(v))
        .map(|(d, _)| d)
        .ok_or_else(|| {
            Error::Query(format!(
                "{key} never moves two standard deviations {} its baseline",
                if above { "above" } else { "below" }
            ))
        })?;
    if !above {
        flags.push("exceedance_below_baseline".to_string());
    }
    let mode = bundle.seeds.fade_mode;
    let mut ids: Vec<String> = Vec::new();
    let mut evidence = vec![evd(key, day, day)];
    for ev in &bundle.events {
        if !ev.affects(key) {
            continue;
        }
        let active = day_contribs(std::slice::from_ref(ev), key, day, mode)?;
        if !active.is_empty() {
            ids.push(ev.event_id.clone());
            evidence.push(evd(&ev.event_id, ev.start_day, ev.end_day));
        }
    }
    ids.sort();
    Ok(GroundTruth {
        answer: text_answer(AnswerKind::Set, ids, AnswerSource::Event, evidence),
        ranking_keys: Vec::new(),
        any_of: false,
        flags,
    })
}

fn truth_component(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = p_str(params, "indicator")?;
    let day = p_day(params, "day")?;
    if day < 1 {
        return Err(Error::Query("day 0 has no update components".into()));
    }
    let series = series(bundle, key)?;
    let point = series
        .values
        .get(day as usize)
        .ok_or_else(|| Error::Query(format!("day {day} outside the horizon")))?;
    let comps = [
        ("ar_residual", point.decomposition.ar_residual.abs()),
        ("delta_evt", point.decomposition.delta_evt.abs()),
        ("noise", point.decomposition.noise.abs()),
    ];
    let best = comps.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    let tying: Vec<String> = comps
        .iter()
        .filter(|&&(_, v)| v == best)
        .map(|&(name, _)| name.to_string())
        .collect();
    Ok(GroundTruth {
        any_of: tying.len() > 1,
        answer: text_answer(
            AnswerKind::String,
            tying,
            AnswerSource::Derived,
            vec![evd(key, day, day)],
        ),
        ranking_keys: Vec::new(),
        flags: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Disk format
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct AgentQuery<'a> {
    query_id: &'a str,
    dimension: Dimension,
    tier: Tier,
    text: &'a str,
}

/// Writes the full query file and the agent-facing variant (no ground truth,
/// no parameter bindings). Returns both paths.
pub fn write_query_files(dir: &Path, set: &QuerySet) -> Result<(PathBuf, PathBuf), Error> {
    let full_path = dir.join("queries.json");
    let agent_path = dir.join("queries_agent.json");
    let full = serde_json::to_string_pretty(&set.queries)
        .map_err(|e| Error::json(full_path.display().to_string(), e))?;
    fs::write(&full_path, full + "\n").map_err(|e| Error::io(full_path.display().to_string(), e))?;
    let agent: Vec<AgentQuery> = set
        .queries
        .iter()
        .map(|q| AgentQuery {
            query_id: &q.query_id,
            dimension: q.dimension,
            tier: q.tier,
            text: &q.text,
        })
        .collect();
    let agent = serde_json::to_string_pretty(&agent)
        .map_err(|e| Error::json(agent_path.display().to_string(), e))?;
    fs::write(&agent_path, agent + "\n")
        .map_err(|e| Error::io(agent_path.display().to_string(), e))?;
    Ok((full_path, agent_path))
}
