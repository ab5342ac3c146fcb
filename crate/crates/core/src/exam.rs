use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::calendar::Calendar;
use crate::dynamics::{event_delta, from_transform, FadeMode, SeasonalBaseline};
use crate::error::Error;
use crate::model::{
    DeviceSeries, Event, ExamResult, ExamVisit, IndicatorSpec, ResultStatus,
};
use crate::streams::StreamFactory;

/// First visit lands on or after this day.
pub const FIRST_VISIT_DAY: i64 = 30;
/// Half-width of the integer jitter around the regular visit grid.
pub const VISIT_JITTER_DAYS: i64 = 20;
/// Anchor noise scale as a fraction of the reference-range width.
const ANCHOR_SIGMA_FRACTION: f64 = 0.02;
/// Trailing windows need at least this many numeric days.
const MIN_WINDOW_SAMPLES: usize = 3;

/// Lays out visit days on a regular grid (365/density apart, starting at day
/// 30) with +/-20 days of jitter. Days are strictly increasing, at least 30,
/// and inside the horizon; a visit jittered past the horizon is dropped.
pub fn schedule_visits(horizon_days: i64, density_per_year: f64, streams: &StreamFactory) -> Vec<i64> {
    let spacing = 365.0 / density_per_year;
    let mut rng = streams.stream("exam_sched", 0, "jitter");
    let mut visits = Vec::new();
    let mut j = 0i64;
    loop {
        let ideal = FIRST_VISIT_DAY as f64 + j as f64 * spacing;
        if ideal >= (horizon_days + VISIT_JITTER_DAYS) as f64 {
            break;
        }
        let jitter = rng.gen_range(-VISIT_JITTER_DAYS..=VISIT_JITTER_DAYS);
        let mut day = ideal.round() as i64 + jitter;
        day = day.max(FIRST_VISIT_DAY);
        if let Some(prev) = visits.last() {
            day = day.max(prev + 1);
        }
        if day < horizon_days {
            visits.push(day);
        }
        j += 1;
    }
    visits
}

/// Trailing mean of the observed values in `[day - window + 1, day]`, or
/// nothing if fewer than three of those days are numeric.
pub fn window_stat(series: &DeviceSeries, day: i64, window: i64) -> Option<f64> {
    let from = day - window + 1;
    let values: Vec<f64> = series.numeric_range(from, day).map(|(_, v)| v).collect();
    if values.len() < MIN_WINDOW_SAMPLES {
        return None;
    }
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Event-adjusted seasonal baseline in natural units, ignoring noise and AR
/// carry-over. This is the measurement basis for indicators with no device
/// stream.
pub fn latent_truth(
    spec: &IndicatorSpec,
    calendar: &Calendar,
    events: &[Event],
    day: i64,
    fade_mode: FadeMode,
) -> Result<f64, Error> {
    let base = SeasonalBaseline::new(spec, *calendar).transformed(day);
    let (delta, _) = event_delta(events, &spec.key, day, spec.soft_cap, fade_mode)?;
    Ok(from_transform(spec, base + delta))
}

/// Zero-mean gaussian anchor noise, rejection-sampled into +/-3 sigma.
pub fn sample_anchor(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    loop {
        let draw = normal.sample(rng);
        if draw.abs() <= 3.0 * sigma {
            return draw;
        }
    }
}

pub struct ExamInputs<'a> {
    pub specs: &'a BTreeMap<String, IndicatorSpec>,
    /// Keys measured at visits, in panel order.
    pub exam_keys: &'a [String],
    pub device: &'a BTreeMap<String, DeviceSeries>,
    pub events: &'a [Event],
    pub calendar: &'a Calendar,
    pub fade_mode: FadeMode,
}

/// Runs one visit: each panel indicator gets a measurement basis (trailing
/// device window when available, latent truth otherwise), anchor noise, and
/// an inclusive normal/abnormal call against its reference range.
pub fn run_visit(inputs: &ExamInputs, day: i64, streams: &StreamFactory) -> Result<ExamVisit, Error> {
    let mut results = Vec::with_capacity(inputs.exam_keys.len());
    for key in inputs.exam_keys {
        let spec = inputs
            .specs
            .get(key)
            .ok_or_else(|| Error::UnknownIndicator(key.clone()))?;
        let range = spec
            .reference_range
            .ok_or_else(|| Error::schema("exams", format!("{key} has no reference range")))?;

        let basis = inputs
            .device
            .get(key)
            .and_then(|series| window_stat(series, day, spec.speed_class.window_days()))
            .map_or_else(
                || latent_truth(spec, inputs.calendar, inputs.events, day, inputs.fade_mode),
                Ok,
            )?;

        let sigma = ANCHOR_SIGMA_FRACTION * (range[1] - range[0]);
        let mut rng = streams.stream("exam_xi", day, key);
        let anchor = sample_anchor(&mut rng, sigma);
        let value = (basis + anchor).clamp(spec.bounds[0], spec.bounds[1]);

        let status = if value < range[0] || value > range[1] {
            ResultStatus::Abnormal
        } else {
            ResultStatus::Normal
        };
        results.push(ExamResult {
            indicator_key: key.clone(),
            value,
            unit: spec.unit.clone(),
            reference_range: range,
            status,
        });
    }

    let abnormal = results
        .iter()
        .filter(|r| r.status == ResultStatus::Abnormal)
        .count();
    let summary = format!("{abnormal} of {} results abnormal", results.len());
    Ok(ExamVisit {
        visit_day: day,
        date: inputs.calendar.date_str(day),
        results,
        summary,
    })
}
