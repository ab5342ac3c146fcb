//! Brute-force recomputation of every query subtype by straight scans over
//! the bundle. This path deliberately shares no answer logic with the main
//! implementation: date arithmetic goes through chrono directly, window and
//! month statistics are rebuilt from raw loops, and the impulse kernel is
//! re-derived inline. Agreement between the two routes is therefore a real
//! check, not a tautology.

use std::collections::BTreeMap;

use chrono::{Datelike, Duration, NaiveDate};
use serde_json::Value;

use crate::dynamics::FadeMode;
use crate::error::Error;
use crate::model::{
    AnswerKind, AnswerSource, AnswerValue, CanonicalAnswer, DeviceSeries, Event, EventImpact,
    Evidence, GroundTruth, ResultStatus, UserBundle,
};
use crate::queries::{subtypes, Params};

pub fn oracle_ground_truth(
    bundle: &UserBundle,
    subtype: &str,
    params: &Params,
) -> Result<GroundTruth, Error> {
    use subtypes::*;
    match subtype {
        DEVICE_VALUE_ON_DATE => o_device_value(bundle, params),
        EXAM_VALUE_ON_VISIT => o_exam_value(bundle, params),
        EVENT_INDICATOR_MAPPING => o_event_mapping(bundle, params),
        MOST_INDICATOR_RICH_EVENT => o_richest_event(bundle),
        EXTREME_VALUE_DATE => o_extreme_date(bundle, params),
        EXTREME_MONTH_MEAN => o_extreme_month(bundle, params),
        LARGEST_MONTH_CHANGE => o_month_change(bundle, params),
        REGIME_CHANGE_DAY => o_regime_change(bundle, params),
        MAX_VOLATILITY_MONTH => o_volatility_month(bundle, params),
        PRE_POST_EVENT_DELTA => o_pre_post(bundle, params),
        ADJACENT_WINDOW_DELTA => o_adjacent_delta(bundle, params),
        EVENT_VS_BASELINE_RATIO => o_event_ratio(bundle, params),
        WEEKEND_WEEKDAY_RATIO => o_weekend_ratio(bundle, params),
        EVENTS_SHARING_INDICATOR => o_shared_indicator(bundle, params),
        TWO_MONTH_MEAN_DELTA => o_two_month_delta(bundle, params),
        EVER_ABNORMAL => o_ever_abnormal(bundle, params),
        ABNORMAL_RATE_DETERIORATION => o_deterioration(bundle),
        ABNORMAL_COUNT_AT_VISIT => o_abnormal_count(bundle, params),
        PERSISTENT_ABNORMAL_CLUSTER => o_cluster(bundle, params),
        EVER_ABNORMAL_SET => o_abnormal_set(bundle),
        EVENTS_AT_FIRST_EXCEEDANCE => o_exceedance(bundle, params),
        LARGEST_COMPONENT_ON_DATE => o_component(bundle, params),
        EVENT_IMPACT_RANKING => o_impact_ranking(bundle, params),
        CHANGE_ATTRIBUTION_RANKING => o_attribution(bundle, params),
        other => Err(Error::Query(format!("oracle has no route for {other}"))),
    }
}

/// Compares two ground truths: numbers and ranking keys to relative 1e-9,
/// everything else exactly. Evidence is provenance, not answer content, and
/// is not compared.
pub fn truths_agree(a: &GroundTruth, b: &GroundTruth) -> bool {
    fn num_eq(x: f64, y: f64) -> bool {
        (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0)
    }
    let (aa, ab) = (&a.answer, &b.answer);
    if aa.answer_type != ab.answer_type
        || a.any_of != b.any_of
        || a.flags != b.flags
        || aa.unit != ab.unit
        || aa.source != ab.source
        || aa.dates != ab.dates
        || aa.values.len() != ab.values.len()
        || a.ranking_keys.len() != b.ranking_keys.len()
    {
        return false;
    }
    for (x, y) in aa.values.iter().zip(&ab.values) {
        let same = match (x, y) {
            (AnswerValue::Number(x), AnswerValue::Number(y)) => num_eq(*x, *y),
            (AnswerValue::Text(x), AnswerValue::Text(y)) => x == y,
            _ => false,
        };
        if !same {
            return false;
        }
    }
    a.ranking_keys
        .iter()
        .zip(&b.ranking_keys)
        .all(|(x, y)| num_eq(*x, *y))
}

// ---------------------------------------------------------------------------
// Local plumbing, kept separate from the main implementation on purpose.
// ---------------------------------------------------------------------------

fn want_str<'a>(params: &'a Params, key: &str) -> Result<&'a str, Error> {
    match params.get(key) {
        Some(Value::String(s)) => Ok(s),
        _ => Err(Error::Query(format!("oracle: param {key} missing"))),
    }
}

fn want_int(params: &Params, key: &str) -> Result<i64, Error> {
    match params.get(key).and_then(Value::as_i64) {
        Some(v) => Ok(v),
        None => Err(Error::Query(format!("oracle: param {key} missing"))),
    }
}

fn epoch_date(bundle: &UserBundle) -> Result<NaiveDate, Error> {
    NaiveDate::parse_from_str(&bundle.seeds.epoch, "%Y-%m-%d")
        .map_err(|e| Error::Query(format!("oracle: bad epoch: {e}")))
}

fn date_of(epoch: NaiveDate, day: i64) -> String {
    (epoch + Duration::days(day)).format("%Y-%m-%d").to_string()
}

fn month_of(epoch: NaiveDate, day: i64) -> String {
    (epoch + Duration::days(day)).format("%Y-%m").to_string()
}

fn grab<'a>(bundle: &'a UserBundle, key: &str) -> Result<&'a DeviceSeries, Error> {
    for (k, s) in &bundle.device {
        if k == key {
            return Ok(s);
        }
    }
    Err(Error::UnknownIndicator(key.to_string()))
}

fn find_event<'a>(bundle: &'a UserBundle, id: &str) -> Result<&'a Event, Error> {
    for ev in &bundle.events {
        if ev.event_id == id {
            return Ok(ev);
        }
    }
    Err(Error::UnknownEvent(id.to_string()))
}

/// Numeric observations in `[from, to]`, clamped to the series, by raw index
/// walk.
fn observed(series: &DeviceSeries, from: i64, to: i64) -> Vec<(i64, f64)> {
    let mut out = Vec::new();
    let hi = to.min(series.values.len() as i64 - 1);
    let mut d = from.max(0);
    while d <= hi {
        if let Some(v) = series.values[d as usize].value {
            out.push((d, v));
        }
        d += 1;
    }
    out
}

fn avg(values: &[f64]) -> f64 {
    let mut total = 0.0;
    for v in values {
        total += v;
    }
    total / values.len() as f64
}

fn variance(values: &[f64]) -> f64 {
    let m = avg(values);
    let mut total = 0.0;
    for v in values {
        total += (v - m) * (v - m);
    }
    total / (values.len() - 1) as f64
}

fn only_values(pairs: &[(i64, f64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(pairs.len());
    for &(_, v) in pairs {
        out.push(v);
    }
    out
}

/// Kernel value of one impact at an integer day, derived inline: sigmoid
/// onset over `(start, end]`, exponential tail over `(end, end + tau_fade]`.
fn impact_g(ev: &Event, imp: &EventImpact, day: i64, mode: FadeMode) -> f64 {
    let t = day as f64;
    let start = ev.start_day as f64;
    let end = start + ev.duration_days as f64;
    if t <= start || t > end + imp.tau_fade {
        return 0.0;
    }
    let rise = |at: f64| {
        let z = (6.0 / imp.tau_rise) * ((at - start) - imp.tau_rise / 2.0);
        1.0 / (1.0 + (-z).exp())
    };
    if t <= end {
        return rise(t);
    }
    let tail = (-(3.0 / imp.tau_fade) * (t - end)).exp();
    match mode {
        FadeMode::Continuity => rise(end) * tail,
        FadeMode::Literal => tail,
    }
}

fn number(v: f64, unit: Option<&str>, source: AnswerSource, evidence: Vec<Evidence>) -> GroundTruth {
    GroundTruth {
        answer: CanonicalAnswer {
            answer_type: AnswerKind::Number,
            values: vec![AnswerValue::Number(v)],
            dates: Vec::new(),
            unit: unit.map(str::to_string),
            source: Some(source),
            evidence,
        },
        ranking_keys: Vec::new(),
        any_of: false,
        flags: Vec::new(),
    }
}

fn texts(
    kind: AnswerKind,
    items: Vec<String>,
    source: AnswerSource,
    evidence: Vec<Evidence>,
    any_of: bool,
) -> GroundTruth {
    GroundTruth {
        answer: CanonicalAnswer {
            answer_type: kind,
            values: items.into_iter().map(AnswerValue::Text).collect(),
            dates: Vec::new(),
            unit: None,
            source: Some(source),
            evidence,
        },
        ranking_keys: Vec::new(),
        any_of,
        flags: Vec::new(),
    }
}

fn dates(days: Vec<String>, source: AnswerSource, evidence: Vec<Evidence>, any_of: bool) -> GroundTruth {
    GroundTruth {
        answer: CanonicalAnswer {
            answer_type: AnswerKind::Date,
            values: Vec::new(),
            dates: days,
            unit: None,
            source: Some(source),
            evidence,
        },
        ranking_keys: Vec::new(),
        any_of,
        flags: Vec::new(),
    }
}

fn mark(entity: &str, from: i64, to: i64) -> Evidence {
    Evidence {
        entity: entity.to_string(),
        window: [from, to],
    }
}

// ---------------------------------------------------------------------------
// Subtype recomputations
// ---------------------------------------------------------------------------

fn o_device_value(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = want_str(params, "indicator")?;
    let day = want_int(params, "day")?;
    let series = grab(bundle, key)?;
    for (d, v) in observed(series, day, day) {
        if d == day {
            return Ok(number(
                v,
                Some(&series.unit),
                AnswerSource::Device,
                vec![mark(key, day, day)],
            ));
        }
    }
    Err(Error::Query(format!("oracle: {key} unobserved on day {day}")))
}

fn o_exam_value(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = want_str(params, "indicator")?;
    let day = want_int(params, "visit_day")?;
    for visit in &bundle.exams {
        if visit.visit_day != day {
            continue;
        }
        for r in &visit.results {
            if r.indicator_key == key {
                return Ok(number(
                    r.value,
                    Some(&r.unit),
                    AnswerSource::Exam,
                    vec![mark(key, day, day)],
                ));
            }
        }
    }
    Err(Error::Query(format!("oracle: no {key} result on day {day}")))
}

fn o_event_mapping(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let ev = find_event(bundle, want_str(params, "event_id")?)?;
    let mut keys: Vec<String> = Vec::new();
    for imp in &ev.impacts {
        if !keys.contains(&imp.indicator_key) {
            keys.push(imp.indicator_key.clone());
        }
    }
    keys.sort();
    Ok(texts(
        AnswerKind::Set,
        keys,
        AnswerSource::Event,
        vec![mark(&ev.event_id, ev.start_day, ev.end_day)],
        false,
    ))
}

fn o_richest_event(bundle: &UserBundle) -> Result<GroundTruth, Error> {
    if bundle.events.is_empty() {
        return Err(Error::Query("oracle: no events".into()));
    }
    let distinct = |ev: &Event| {
        let mut keys: Vec<&str> = Vec::new();
        for imp in &ev.impacts {
            if !keys.contains(&imp.indicator_key.as_str()) {
                keys.push(&imp.indicator_key);
            }
        }
        keys.len()
    };
    let mut best = 0usize;
    for ev in &bundle.events {
        let n = distinct(ev);
        if n > best {
            best = n;
        }
    }
    let mut ids = Vec::new();
    let mut evidence = Vec::new();
    for ev in &bundle.events {
        if distinct(ev) == best {
            ids.push(ev.event_id.clone());
            evidence.push(mark(&ev.event_id, ev.start_day, ev.end_day));
        }
    }
    let any_of = ids.len() > 1;
    Ok(texts(AnswerKind::String, ids, AnswerSource::Event, evidence, any_of))
}

fn o_extreme_date(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = want_str(params, "indicator")?;
    let max = want_str(params, "direction")? == "max";
    let series = grab(bundle, key)?;
    let all = observed(series, 0, bundle.horizon() - 1);
    if all.is_empty() {
        return Err(Error::Query(format!("oracle: {key} has no numeric days")));
    }
    let mut best = all[0].1;
    for &(_, v) in &all {
        if (max && v > best) || (!max && v < best) {
            best = v;
        }
    }
    let epoch = epoch_date(bundle)?;
    let mut days = Vec::new();
    let mut stamps = Vec::new();
    for &(d, v) in &all {
        if v == best {
            days.push(d);
            stamps.push(date_of(epoch, d));
        }
    }
    let any_of = stamps.len() > 1;
    Ok(dates(
        stamps,
        AnswerSource::Device,
        vec![mark(key, days[0], *days.last().unwrap())],
        any_of,
    ))
}

/// Months in calendar order as (label, first_day, last_day, numeric values),
/// grouped straight off chrono's formatting.
fn months_of(
    bundle: &UserBundle,
    series: &DeviceSeries,
) -> Result<Vec<(String, i64, i64, Vec<f64>)>, Error> {
    let epoch = epoch_date(bundle)?;
    let mut out: Vec<(String, i64, i64, Vec<f64>)> = Vec::new();
    for day in 0..bundle.horizon() {
        let label = month_of(epoch, day);
        if out.last().map(|m| m.0.as_str()) != Some(label.as_str()) {
            out.push((label, day, day, Vec::new()));
        }
        let entry = out.last_mut().unwrap();
        entry.2 = day;
        if let Some(v) = series.values[day as usize].value {
            entry.3.push(v);
        }
    }
    Ok(out)
}

fn o_extreme_month(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = want_str(params, "indicator")?;
    let highest = want_str(params, "direction")? == "highest";
    let min_days = want_int(params, "min_days")?;
    let series = grab(bundle, key)?;
    let mut qualified: Vec<(String, i64, i64, f64)> = Vec::new();
    for (label, first, last, values) in months_of(bundle, series)? {
        if values.len() as i64 >= min_days {
            qualified.push((label, first, last, avg(&values)));
        }
    }
    if qualified.is_empty() {
        return Err(Error::Query(format!("oracle: {key} has no qualifying month")));
    }
    let mut best = qualified[0].3;
    for q in &qualified {
        if (highest && q.3 > best) || (!highest && q.3 < best) {
            best = q.3;
        }
    }
    let mut labels = Vec::new();
    let mut evidence = Vec::new();
    for (label, first, last, mean) in &qualified {
        if *mean == best {
            labels.push(label.clone());
            evidence.push(mark(key, *first, *last));
        }
    }
    let any_of = labels.len() > 1;
    let mut truth = texts(AnswerKind::String, labels, AnswerSource::Device, evidence, any_of);
    if min_days < super::MONTH_MIN_DAYS {
        truth.flags.push("relaxed_month_threshold".to_string());
    }
    Ok(truth)
}

fn o_month_change(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = want_str(params, "indicator")?;
    let min_days = want_int(params, "min_days")?;
    let series = grab(bundle, key)?;
    let months = months_of(bundle, series)?;
    // Adjacency is positional in the full calendar list; a skipped month
    // breaks the chain.
    let mut changes: Vec<(usize, f64)> = Vec::new();
    for i in 1..months.len() {
        let a = &months[i - 1];
        let b = &months[i];
        if a.3.len() as i64 >= min_days && b.3.len() as i64 >= min_days {
            changes.push((i, avg(&b.3) - avg(&a.3)));
        }
    }
    if changes.is_empty() {
        return Err(Error::Query(format!("oracle: {key} has no adjacent months")));
    }
    let mut best = -1.0;
    for &(_, d) in &changes {
        if d.abs() > best {
            best = d.abs();
        }
    }
    let mut labels = Vec::new();
    let mut evidence = Vec::new();
    for &(i, d) in &changes {
        if d.abs() == best {
            labels.push(months[i].0.clone());
            evidence.push(mark(key, months[i - 1].1, months[i].2));
        }
    }
    let any_of = labels.len() > 1;
    Ok(texts(AnswerKind::String, labels, AnswerSource::Device, evidence, any_of))
}

fn o_regime_change(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = want_str(params, "indicator")?;
    let w = want_int(params, "window")?;
    let series = grab(bundle, key)?;
    let horizon = bundle.horizon();
    let mut best: f64 = -1.0;
    let mut hits: Vec<i64> = Vec::new();
    let mut t = w;
    while t <= horizon - w {
        let before = only_values(&observed(series, t - w, t - 1));
        let after = only_values(&observed(series, t, t + w - 1));
        if before.len() >= 14 && after.len() >= 14 {
            let gap = (avg(&after) - avg(&before)).abs();
            if gap > best {
                best = gap;
                hits = vec![t];
            } else if gap == best {
                hits.push(t);
            }
        }
        t += 1;
    }
    if hits.is_empty() {
        return Err(Error::Query(format!("oracle: {key} has no valid window")));
    }
    let t = hits[0];
    let before = only_values(&observed(series, t - w, t - 1));
    let after = only_values(&observed(series, t, t + w - 1));
    let pooled = (((before.len() - 1) as f64 * variance(&before)
        + (after.len() - 1) as f64 * variance(&after))
        / (before.len() + after.len() - 2) as f64)
        .sqrt();
    if !(best > 2.0 * pooled) {
        return Err(Error::Query(format!("oracle: {key} shift not significant")));
    }
    let epoch = epoch_date(bundle)?;
    let stamps: Vec<String> = {
        let mut out = Vec::new();
        for &d in &hits {
            out.push(date_of(epoch, d));
        }
        out
    };
    let any_of = stamps.len() > 1;
    Ok(dates(
        stamps,
        AnswerSource::Device,
        vec![mark(key, t - w, t + w - 1)],
        any_of,
    ))
}

fn o_volatility_month(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = want_str(params, "indicator")?;
    let min_days = {
        let m = want_int(params, "min_days")?;
        if m < 2 {
            2
        } else {
            m
        }
    };
    let series = grab(bundle, key)?;
    let mut qualified: Vec<(String, i64, i64, f64)> = Vec::new();
    for (label, first, last, values) in months_of(bundle, series)? {
        if values.len() as i64 >= min_days {
            qualified.push((label, first, last, variance(&values).sqrt()));
        }
    }
    if qualified.is_empty() {
        return Err(Error::Query(format!("oracle: {key} has no qualifying month")));
    }
    let mut best = -1.0;
    for q in &qualified {
        if q.3 > best {
            best = q.3;
        }
    }
    let mut labels = Vec::new();
    let mut evidence = Vec::new();
    for (label, first, last, sd) in &qualified {
        if *sd == best {
            labels.push(label.clone());
            evidence.push(mark(key, *first, *last));
        }
    }
    let any_of = labels.len() > 1;
    Ok(texts(AnswerKind::String, labels, AnswerSource::Device, evidence, any_of))
}

fn o_pre_post(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let ev = find_event(bundle, want_str(params, "event_id")?)?;
    let key = want_str(params, "indicator")?;
    let w = want_int(params, "window")?;
    let series = grab(bundle, key)?;
    let ts = ev.start_day;
    if ts - w < 0 || ts + w > bundle.horizon() {
        return Err(Error::Query("oracle: window out of range".into()));
    }
    let pre = only_values(&observed(series, ts - w, ts - 1));
    let post = only_values(&observed(series, ts, ts + w - 1));
    if pre.len() < 7 || post.len() < 7 {
        return Err(Error::Query("oracle: too few recorded days".into()));
    }
    Ok(number(
        avg(&post) - avg(&pre),
        Some(&series.unit),
        AnswerSource::Device,
        vec![mark(&ev.event_id, ts - w, ts + w - 1), mark(key, ts - w, ts + w - 1)],
    ))
}

fn o_adjacent_delta(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = want_str(params, "indicator")?;
    let mid = want_int(params, "mid_day")?;
    let w = want_int(params, "window")?;
    let series = grab(bundle, key)?;
    if mid - w < 0 || mid + w > bundle.horizon() {
        return Err(Error::Query("oracle: window out of range".into()));
    }
    let earlier = only_values(&observed(series, mid - w, mid - 1));
    let later = only_values(&observed(series, mid, mid + w - 1));
    if earlier.len() < 7 || later.len() < 7 {
        return Err(Error::Query("oracle: too few recorded days".into()));
    }
    Ok(number(
        avg(&later) - avg(&earlier),
        Some(&series.unit),
        AnswerSource::Device,
        vec![mark(key, mid - w, mid + w - 1)],
    ))
}

fn quiet_values(series: &DeviceSeries) -> Vec<f64> {
    let mut out = Vec::new();
    for p in &series.values {
        if p.decomposition.event_sum_raw == 0.0 {
            if let Some(v) = p.value {
                out.push(v);
            }
        }
    }
    out
}

fn o_event_ratio(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let ev = find_event(bundle, want_str(params, "event_id")?)?;
    let key = want_str(params, "indicator")?;
    let series = grab(bundle, key)?;
    let horizon = bundle.horizon();
    let during = only_values(&observed(
        series,
        ev.start_day + 1,
        if ev.end_day < horizon - 1 { ev.end_day } else { horizon - 1 },
    ));
    if during.len() < 3 {
        return Err(Error::Query("oracle: too few active days".into()));
    }
    let quiet = quiet_values(series);
    let mut flags = Vec::new();
    let baseline = if quiet.len() >= 10 {
        quiet
    } else {
        flags.push("whole_series_baseline".to_string());
        only_values(&observed(series, 0, horizon - 1))
    };
    if baseline.is_empty() {
        return Err(Error::Query("oracle: no baseline days".into()));
    }
    let base = avg(&baseline);
    if base.abs() <= 1e-9 {
        return Err(Error::Query("oracle: degenerate baseline".into()));
    }
    let mut truth = number(
        avg(&during) / base,
        None,
        AnswerSource::Derived,
        vec![mark(&ev.event_id, ev.start_day, ev.end_day), mark(key, 0, horizon - 1)],
    );
    truth.flags = flags;
    Ok(truth)
}

fn o_weekend_ratio(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = want_str(params, "indicator")?;
    let series = grab(bundle, key)?;
    let epoch = epoch_date(bundle)?;
    let mut weekend = Vec::new();
    let mut weekday = Vec::new();
    for (d, v) in observed(series, 0, bundle.horizon() - 1) {
        let date = epoch + Duration::days(d);
        if date.weekday().num_days_from_monday() >= 5 {
            weekend.push(v);
        } else {
            weekday.push(v);
        }
    }
    if weekend.len() < 5 || weekday.len() < 5 {
        return Err(Error::Query("oracle: too few days per class".into()));
    }
    let denom = avg(&weekday);
    if denom.abs() <= 1e-9 {
        return Err(Error::Query("oracle: degenerate weekday mean".into()));
    }
    Ok(number(
        avg(&weekend) / denom,
        None,
        AnswerSource::Derived,
        vec![mark(key, 0, bundle.horizon() - 1)],
    ))
}

fn o_shared_indicator(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let target = find_event(bundle, want_str(params, "event_id")?)?;
    let mut ids = Vec::new();
    let mut evidence = vec![mark(&target.event_id, target.start_day, target.end_day)];
    for ev in &bundle.events {
        if ev.event_id == target.event_id {
            continue;
        }
        let mut shares = false;
        for imp in &ev.impacts {
            for timp in &target.impacts {
                if imp.indicator_key == timp.indicator_key {
                    shares = true;
                }
            }
        }
        if shares {
            ids.push(ev.event_id.clone());
        }
    }
    ids.sort();
    for id in &ids {
        let ev = find_event(bundle, id)?;
        evidence.push(mark(id, ev.start_day, ev.end_day));
    }
    Ok(texts(AnswerKind::Set, ids, AnswerSource::Event, evidence, false))
}

fn o_two_month_delta(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = want_str(params, "indicator")?;
    let (la, lb) = (want_str(params, "month_a")?, want_str(params, "month_b")?);
    let series = grab(bundle, key)?;
    let months = months_of(bundle, series)?;
    let lookup = |label: &str| -> Result<&(String, i64, i64, Vec<f64>), Error> {
        for m in &months {
            if m.0 == label {
                return Ok(m);
            }
        }
        Err(Error::Query(format!("oracle: month {label} out of range")))
    };
    let (ma, mb) = (lookup(la)?, lookup(lb)?);
    if ma.3.is_empty() || mb.3.is_empty() {
        return Err(Error::Query("oracle: empty month".into()));
    }
    Ok(number(
        avg(&mb.3) - avg(&ma.3),
        Some(&series.unit),
        AnswerSource::Device,
        vec![mark(key, ma.1, ma.2), mark(key, mb.1, mb.2)],
    ))
}

fn o_ever_abnormal(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = want_str(params, "indicator")?;
    let mut measured = false;
    let mut first: Option<i64> = None;
    for visit in &bundle.exams {
        for r in &visit.results {
            if r.indicator_key != key {
                continue;
            }
            measured = true;
            if r.status == ResultStatus::Abnormal && first.is_none() {
                first = Some(visit.visit_day);
            }
        }
    }
    if !measured {
        return Err(Error::Query(format!("oracle: {key} never measured")));
    }
    let truth = match first {
        Some(d) => texts(
            AnswerKind::String,
            vec!["yes".to_string()],
            AnswerSource::Exam,
            vec![mark(key, d, d)],
            false,
        ),
        None => texts(
            AnswerKind::String,
            vec!["no".to_string()],
            AnswerSource::Exam,
            vec![mark(key, 0, bundle.horizon() - 1)],
            false,
        ),
    };
    Ok(truth)
}

fn o_deterioration(bundle: &UserBundle) -> Result<GroundTruth, Error> {
    let visits = &bundle.exams;
    if visits.len() < 2 {
        return Err(Error::Query("oracle: fewer than two visits".into()));
    }
    let cut = visits.len() / 2;
    let mut keys: Vec<&str> = Vec::new();
    for v in visits.iter() {
        for r in &v.results {
            if !keys.contains(&r.indicator_key.as_str()) {
                keys.push(&r.indicator_key);
            }
        }
    }
    keys.sort();
    let mut winners: Vec<(&str, f64)> = Vec::new();
    for key in keys {
        let mut count = [0usize; 2];
        let mut bad = [0usize; 2];
        for (i, v) in visits.iter().enumerate() {
            let half = usize::from(i >= cut);
            for r in &v.results {
                if r.indicator_key == key {
                    count[half] += 1;
                    if r.status == ResultStatus::Abnormal {
                        bad[half] += 1;
                    }
                }
            }
        }
        if count[0] == 0 || count[1] == 0 {
            continue;
        }
        let delta = bad[1] as f64 / count[1] as f64 - bad[0] as f64 / count[0] as f64;
        if delta > 0.0 {
            winners.push((key, delta));
        }
    }
    if winners.is_empty() {
        return Err(Error::Query("oracle: nothing deteriorated".into()));
    }
    let mut best = 0.0;
    for &(_, d) in &winners {
        if d > best {
            best = d;
        }
    }
    let mut names = Vec::new();
    let mut evidence = Vec::new();
    for &(k, d) in &winners {
        if d == best {
            names.push(k.to_string());
            evidence.push(mark(k, visits[0].visit_day, visits[visits.len() - 1].visit_day));
        }
    }
    let any_of = names.len() > 1;
    Ok(texts(AnswerKind::String, names, AnswerSource::Exam, evidence, any_of))
}

fn o_abnormal_count(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let day = want_int(params, "visit_day")?;
    for visit in &bundle.exams {
        if visit.visit_day != day {
            continue;
        }
        let mut n = 0usize;
        for r in &visit.results {
            if r.status == ResultStatus::Abnormal {
                n += 1;
            }
        }
        return Ok(number(
            n as f64,
            None,
            AnswerSource::Exam,
            vec![mark(&format!("visit-{day}"), day, day)],
        ));
    }
    Err(Error::Query(format!("oracle: no visit on day {day}")))
}

fn o_cluster(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let da = want_int(params, "visit_day_a")?;
    let db = want_int(params, "visit_day_b")?;
    let bad_at = |day: i64| -> Result<Vec<&str>, Error> {
        for v in &bundle.exams {
            if v.visit_day == day {
                let mut keys = Vec::new();
                for r in &v.results {
                    if r.status == ResultStatus::Abnormal {
                        keys.push(r.indicator_key.as_str());
                    }
                }
                return Ok(keys);
            }
        }
        Err(Error::Query(format!("oracle: no visit on day {day}")))
    };
    let (a, b) = (bad_at(da)?, bad_at(db)?);
    let mut common: Vec<String> = Vec::new();
    for k in &a {
        if b.contains(k) {
            common.push(k.to_string());
        }
    }
    common.sort();
    if common.len() < 2 {
        return Err(Error::Query("oracle: cluster smaller than two".into()));
    }
    let mut evidence = Vec::new();
    for k in &common {
        evidence.push(mark(k, da, db));
    }
    Ok(texts(AnswerKind::Set, common, AnswerSource::Exam, evidence, false))
}

fn o_abnormal_set(bundle: &UserBundle) -> Result<GroundTruth, Error> {
    let mut firsts: Vec<(String, i64)> = Vec::new();
    for visit in &bundle.exams {
        for r in &visit.results {
            if r.status != ResultStatus::Abnormal {
                continue;
            }
            if !firsts.iter().any(|(k, _)| k == &r.indicator_key) {
                firsts.push((r.indicator_key.clone(), visit.visit_day));
            }
        }
    }
    firsts.sort();
    let mut names = Vec::new();
    let mut evidence = Vec::new();
    for (k, d) in &firsts {
        names.push(k.clone());
        evidence.push(mark(k, *d, *d));
    }
    Ok(texts(AnswerKind::Set, names, AnswerSource::Exam, evidence, false))
}

fn o_exceedance(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = want_str(params, "indicator")?;
    let above = want_str(params, "direction")? == "above";
    let series = grab(bundle, key)?;
    let horizon = bundle.horizon();
    let quiet = quiet_values(series);
    let mut flags = Vec::new();
    let baseline = if quiet.len() >= 10 {
        quiet
    } else {
        flags.push("whole_series_baseline".to_string());
        only_values(&observed(series, 0, horizon - 1))
    };
    if baseline.len() < 2 {
        return Err(Error::Query("oracle: too few baseline days".into()));
    }
    let mu = avg(&baseline);
    let sigma = variance(&baseline).sqrt();
    let mut hit: Option<i64> = None;
    for (d, v) in observed(series, 0, horizon - 1) {
        let beyond = if above { v > mu + 2.0 * sigma } else { v < mu - 2.0 * sigma };
        if beyond {
            hit = Some(d);
            break;
        }
    }
    let day = hit.ok_or_else(|| Error::Query(format!("oracle: {key} never exceeds")))?;
    if !above {
        flags.push("exceedance_below_baseline".to_string());
    }
    let mode = bundle.seeds.fade_mode;
    let mut ids = Vec::new();
    let mut evidence = vec![mark(key, day, day)];
    for ev in &bundle.events {
        let mut active = false;
        for imp in &ev.impacts {
            if imp.indicator_key == key && impact_g(ev, imp, day, mode) != 0.0 {
                active = true;
            }
        }
        if active {
            ids.push(ev.event_id.clone());
            evidence.push(mark(&ev.event_id, ev.start_day, ev.end_day));
        }
    }
    ids.sort();
    let mut truth = texts(AnswerKind::Set, ids, AnswerSource::Event, evidence, false);
    truth.flags = flags;
    Ok(truth)
}

fn o_component(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = want_str(params, "indicator")?;
    let day = want_int(params, "day")?;
    if day < 1 {
        return Err(Error::Query("oracle: day 0 has no components".into()));
    }
    let series = grab(bundle, key)?;
    if day >= series.values.len() as i64 {
        return Err(Error::Query("oracle: day outside horizon".into()));
    }
    let d = &series.values[day as usize].decomposition;
    let named = [
        ("ar_residual", d.ar_residual.abs()),
        ("delta_evt", d.delta_evt.abs()),
        ("noise", d.noise.abs()),
    ];
    let mut best = -1.0;
    for &(_, v) in &named {
        if v > best {
            best = v;
        }
    }
    let mut winners = Vec::new();
    for &(name, v) in &named {
        if v == best {
            winners.push(name.to_string());
        }
    }
    let any_of = winners.len() > 1;
    Ok(texts(
        AnswerKind::String,
        winners,
        AnswerSource::Derived,
        vec![mark(key, day, day)],
        any_of,
    ))
}

/// Signed attribution totals over `[from, to]` with naive proportional
/// shares (no remainder correction), keyed by event id.
fn share_totals(
    bundle: &UserBundle,
    key: &str,
    from: i64,
    to: i64,
    sign: f64,
    totals: &mut BTreeMap<String, f64>,
) -> Result<(), Error> {
    let series = grab(bundle, key)?;
    let mode = bundle.seeds.fade_mode;
    let hi = to.min(bundle.horizon() - 1);
    let mut day = if from < 0 { 0 } else { from };
    while day <= hi {
        let dec = &series.values[day as usize].decomposition;
        if dec.event_sum_raw != 0.0 {
            for ev in &bundle.events {
                for imp in &ev.impacts {
                    if imp.indicator_key != key {
                        continue;
                    }
                    let g = impact_g(ev, imp, day, mode);
                    if g != 0.0 {
                        let share = dec.delta_evt * (imp.beta * g / dec.event_sum_raw);
                        *totals.entry(ev.event_id.clone()).or_insert(0.0) += sign * share;
                    }
                }
            }
        }
        day += 1;
    }
    Ok(())
}

fn ranked(
    bundle: &UserBundle,
    key: &str,
    totals: BTreeMap<String, f64>,
    need: usize,
    sign: Option<bool>,
    window: [i64; 2],
) -> Result<GroundTruth, Error> {
    let mut entries: Vec<(String, f64)> = Vec::new();
    for (id, total) in totals {
        if total == 0.0 {
            continue;
        }
        if let Some(positive) = sign {
            if (total > 0.0) != positive {
                continue;
            }
        }
        entries.push((id, total));
    }
    if entries.len() < need {
        return Err(Error::Query(format!(
            "oracle: {} contributors, need {need}",
            entries.len()
        )));
    }
    entries.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).unwrap().then_with(|| a.0.cmp(&b.0)));
    let mut evidence = vec![mark(key, window[0], window[1])];
    let mut names = Vec::new();
    let mut keys = Vec::new();
    for (id, total) in &entries {
        let ev = find_event(bundle, id)?;
        evidence.push(mark(id, ev.start_day, ev.end_day));
        names.push(id.clone());
        keys.push(total.abs());
    }
    let mut truth = texts(AnswerKind::RankedList, names, AnswerSource::Derived, evidence, false);
    truth.ranking_keys = keys;
    Ok(truth)
}

fn o_impact_ranking(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = want_str(params, "indicator")?;
    let start = want_int(params, "start_day")?;
    let window = want_int(params, "window")?;
    let end = (start + window - 1).min(bundle.horizon() - 1);
    let mut totals = BTreeMap::new();
    share_totals(bundle, key, start, end, 1.0, &mut totals)?;
    ranked(bundle, key, totals, 2, None, [start, end])
}

fn o_attribution(bundle: &UserBundle, params: &Params) -> Result<GroundTruth, Error> {
    let key = want_str(params, "indicator")?;
    let t = want_int(params, "change_day")?;
    let w = want_int(params, "window")?;
    let series = grab(bundle, key)?;
    if t - w < 0 || t + w > bundle.horizon() {
        return Err(Error::Query("oracle: window out of range".into()));
    }
    let before = only_values(&observed(series, t - w, t - 1));
    let after = only_values(&observed(series, t, t + w - 1));
    if before.len() < 14 || after.len() < 14 {
        return Err(Error::Query("oracle: too few recorded days".into()));
    }
    let change = avg(&after) - avg(&before);
    if change == 0.0 {
        return Err(Error::Query("oracle: no observed change".into()));
    }
    let mut totals = BTreeMap::new();
    share_totals(bundle, key, t, t + w - 1, 1.0, &mut totals)?;
    share_totals(bundle, key, t - w, t - 1, -1.0, &mut totals)?;
    ranked(bundle, key, totals, 1, Some(change > 0.0), [t - w, t + w - 1])
}
