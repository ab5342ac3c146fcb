use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::calendar::Calendar;
use crate::error::Error;
use crate::model::{DayFlags, Event, IndicatorSpec, Transform, NOISE_FACTORS};

/// How the post-event fade is anchored. `Continuity` scales the exponential
/// so the curve is continuous at the duration boundary; `Literal` keeps the
/// unscaled exponential, which jumps for events that end mid-rise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadeMode {
    #[default]
    Continuity,
    Literal,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Impulse-response shape of one event impact: sigmoid onset while the event
/// is running, exponential fade afterwards, zero outside
/// `(t_start, t_end + tau_fade]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    t_start: f64,
    t_end: f64,
    tau_rise: f64,
    tau_fade: f64,
    /// Onset steepness, 6 / tau_rise: the sigmoid covers ~95% of its swing
    /// over tau_rise days.
    steepness: f64,
    /// Fade rate, 3 / tau_fade: the tail drops to e^-3 by tau_fade days out.
    fade_rate: f64,
}

impl Kernel {
    pub fn new(t_start: f64, duration: f64, tau_rise: f64, tau_fade: f64) -> Result<Self, Error> {
        if !(duration > 0.0) {
            return Err(Error::InvalidTiming(format!("duration {duration}")));
        }
        if !(tau_rise > 0.0) {
            return Err(Error::InvalidTiming(format!("tau_rise {tau_rise}")));
        }
        if !(tau_fade > 0.0) {
            return Err(Error::InvalidTiming(format!("tau_fade {tau_fade}")));
        }
        Ok(Kernel {
            t_start,
            t_end: t_start + duration,
            tau_rise,
            tau_fade,
            steepness: 6.0 / tau_rise,
            fade_rate: 3.0 / tau_fade,
        })
    }

    fn onset(&self, t: f64) -> f64 {
        sigmoid(self.steepness * ((t - self.t_start) - self.tau_rise / 2.0))
    }

    pub fn eval(&self, t: f64, mode: FadeMode) -> f64 {
        if t <= self.t_start || t > self.t_end + self.tau_fade {
            return 0.0;
        }
        if t <= self.t_end {
            return self.onset(t);
        }
        let tail = (-self.fade_rate * (t - self.t_end)).exp();
        match mode {
            FadeMode::Continuity => self.onset(self.t_end) * tail,
            FadeMode::Literal => tail,
        }
    }

    pub fn support_end(&self) -> f64 {
        self.t_end + self.tau_fade
    }
}

/// One-shot kernel evaluation with timing validation.
pub fn eval_kernel(
    t_start: f64,
    duration: f64,
    tau_rise: f64,
    tau_fade: f64,
    mode: FadeMode,
    t: f64,
) -> Result<f64, Error> {
    Ok(Kernel::new(t_start, duration, tau_rise, tau_fade)?.eval(t, mode))
}

/// Combines per-event contributions `beta * g` into one bounded effect.
/// Returns `(delta, raw_sum)`: the tanh soft cap keeps `|delta|` strictly
/// below `cap` while staying near-linear for small sums, and the raw sum is
/// kept for attribution.
pub fn superpose(contribs: &[(f64, f64)], cap: f64) -> (f64, f64) {
    debug_assert!(cap > 0.0);
    let raw: f64 = contribs.iter().map(|(beta, g)| beta * g).sum();
    if raw == 0.0 {
        return (0.0, raw);
    }
    let delta = cap * (raw / cap).tanh();
    // tanh can round to exactly 1.0 deep in saturation; pin the result just
    // inside the open interval so the strict bound holds for any input.
    let limit = cap.next_down();
    (delta.clamp(-limit, limit), raw)
}

/// Capped event effect on one indicator for one day, built straight from the
/// event list. `(delta, raw_sum)` as in [`superpose`]. Convenient for sparse
/// lookups (exams, counterfactuals, plots); the day loop keeps its own kernel
/// cache instead of rebuilding kernels per day.
pub fn event_delta<'a>(
    events: impl IntoIterator<Item = &'a Event>,
    indicator_key: &str,
    day: i64,
    soft_cap: f64,
    mode: FadeMode,
) -> Result<(f64, f64), Error> {
    let mut contribs = Vec::new();
    for ev in events {
        for imp in ev.impacts.iter().filter(|i| i.indicator_key == indicator_key) {
            let kernel = Kernel::new(
                ev.start_day as f64,
                ev.duration_days as f64,
                imp.tau_rise,
                imp.tau_fade,
            )?;
            let g = kernel.eval(day as f64, mode);
            if g != 0.0 {
                contribs.push((imp.beta, g));
            }
        }
    }
    Ok(superpose(&contribs, soft_cap))
}

/// Low-rank-plus-diagonal daily noise over the device indicators:
/// `eps = L z + eta` with `z` the shared factors (one global + one per
/// indicator group) and `eta` idiosyncratic. Draw order is fixed: the factor
/// vector first, then one idiosyncratic draw per indicator in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    keys: Vec<String>,
    loadings: Vec<[f64; NOISE_FACTORS]>,
    idio_sd: Vec<f64>,
}

impl NoiseModel {
    /// Builds the model from indicator specs, preserving their order.
    pub fn from_specs<'a>(specs: impl IntoIterator<Item = &'a IndicatorSpec>) -> Result<Self, Error> {
        let mut keys = Vec::new();
        let mut loadings = Vec::new();
        let mut idio_sd = Vec::new();
        for spec in specs {
            if !(spec.idio_variance > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "indicator {}: idio_variance must be positive",
                    spec.key
                )));
            }
            keys.push(spec.key.clone());
            loadings.push(spec.noise_loadings);
            idio_sd.push(spec.idio_variance.sqrt());
        }
        Ok(NoiseModel {
            keys,
            loadings,
            idio_sd,
        })
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// One correlated noise vector, indexed like `keys()`.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut factors = [0.0f64; NOISE_FACTORS];
        for f in factors.iter_mut() {
            *f = rng.sample(StandardNormal);
        }
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let shared: f64 = self.loadings[i]
                .iter()
                .zip(factors.iter())
                .map(|(l, z)| l * z)
                .sum();
            let eta: f64 = rng.sample(StandardNormal);
            out.push(shared + self.idio_sd[i] * eta);
        }
        out
    }

    /// Theoretical covariance `L L^T + D`, for verification.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut cov = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut v: f64 = self.loadings[i]
                    .iter()
                    .zip(self.loadings[j].iter())
                    .map(|(a, b)| a * b)
                    .sum();
                if i == j {
                    v += self.idio_sd[i] * self.idio_sd[i];
                }
                cov[i][j] = v;
            }
        }
        cov
    }
}

/// Additive pieces of one day's proposal, all transform-domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub value: f64,
    pub baseline_seasonal: f64,
    pub ar_residual: f64,
    pub delta_evt: f64,
    pub noise: f64,
}

/// The daily latent update: seasonal baseline plus AR(1) pull toward it plus
/// event effect plus noise. `base_today`/`base_prev` are the transform-domain
/// seasonal baselines for day t and t-1; `prev` is yesterday's realized value
/// in transform domain.
pub fn propose_value(
    base_today: f64,
    base_prev: f64,
    prev: f64,
    inertia: f64,
    delta_evt: f64,
    noise: f64,
) -> Proposal {
    let ar_residual = inertia * (prev - base_prev);
    // Summed left to right; re-adding the logged parts in field order
    // reproduces `value` bit for bit.
    let value = base_today + ar_residual + delta_evt + noise;
    Proposal {
        value,
        baseline_seasonal: base_today,
        ar_residual,
        delta_evt,
        noise,
    }
}

/// Maps a natural-units value into the transform domain.
pub fn to_transform(spec: &IndicatorSpec, v: f64) -> Result<f64, Error> {
    let domain_err = || Error::TransformDomain {
        key: spec.key.clone(),
        transform: format!("{:?}", spec.transform).to_lowercase(),
        value: v,
    };
    match spec.transform {
        Transform::Identity => Ok(v),
        Transform::Log => {
            if v <= 0.0 {
                return Err(domain_err());
            }
            Ok(v.ln())
        }
        Transform::Logit => {
            let [lo, hi] = spec.bounds;
            if v <= lo || v >= hi {
                return Err(domain_err());
            }
            let p = (v - lo) / (hi - lo);
            Ok((p / (1.0 - p)).ln())
        }
    }
}

/// Inverse of `to_transform`. Total: log maps back to positives, logit back
/// into the bounds interval (the boundary itself is only reachable when the
/// sigmoid saturates in float).
pub fn from_transform(spec: &IndicatorSpec, y: f64) -> f64 {
    match spec.transform {
        Transform::Identity => y,
        Transform::Log => y.exp(),
        Transform::Logit => {
            let [lo, hi] = spec.bounds;
            lo + (hi - lo) * sigmoid(y)
        }
    }
}

/// Like `to_transform` but total: values sitting exactly on a log/logit
/// domain boundary (possible only after float saturation of the inverse) are
/// nudged a hair inside first. Used when feeding realized values back into
/// the AR recursion, never for exported data.
pub fn to_transform_clamped(spec: &IndicatorSpec, v: f64) -> f64 {
    let [lo, hi] = spec.bounds;
    let margin = (hi - lo) * 1e-12;
    let nudged = match spec.transform {
        Transform::Identity => v,
        Transform::Log => v.max(margin.max(f64::MIN_POSITIVE)),
        Transform::Logit => v.clamp(lo + margin, hi - margin),
    };
    to_transform(spec, nudged).expect("nudged value is inside the transform domain")
}

/// Projects a transform-domain proposal into feasible natural units:
/// inverse-transform, then clamp into the intersection of the hard bounds
/// and the slope corridor around yesterday's value. Flags record what the
/// raw proposal looked like before clamping.
pub fn project(spec: &IndicatorSpec, proposal: f64, prev_natural: f64) -> (f64, DayFlags) {
    let nat = from_transform(spec, proposal);
    let [lo, hi] = spec.bounds;
    let corridor_lo = lo.max(prev_natural - spec.slope_limit);
    let corridor_hi = hi.min(prev_natural + spec.slope_limit);
    let value = nat.clamp(corridor_lo, corridor_hi);
    let flags = DayFlags {
        range_violated: nat < lo || nat > hi,
        slope_violated: (nat - prev_natural).abs() > spec.slope_limit,
        clipped: value != nat,
    };
    (value, flags)
}

/// Seasonal baseline machinery for one indicator: natural-units weekday and
/// annual effects mapped into the transform domain for the daily update.
#[derive(Debug, Clone, Copy)]
pub struct SeasonalBaseline<'a> {
    spec: &'a IndicatorSpec,
    calendar: Calendar,
}

impl<'a> SeasonalBaseline<'a> {
    pub fn new(spec: &'a IndicatorSpec, calendar: Calendar) -> Self {
        SeasonalBaseline { spec, calendar }
    }

    /// Baseline plus weekday offset plus annual sinusoid, natural units. The
    /// sinusoid peaks at `annual_phase_day`.
    pub fn natural(&self, day: i64) -> f64 {
        let wk = self.spec.weekday_offsets[self.calendar.weekday(day)];
        let doy = self.calendar.day_of_year(day) as f64;
        let annual = self.spec.annual_amplitude
            * (std::f64::consts::TAU * (doy - self.spec.annual_phase_day) / 365.25).cos();
        self.spec.baseline + wk + annual
    }

    /// Transform-domain image of the seasonal baseline. Construction-time
    /// validation guarantees the natural value stays in the transform domain.
    pub fn transformed(&self, day: i64) -> f64 {
        to_transform(self.spec, self.natural(day))
            .expect("validated spec keeps seasonal band inside transform domain")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IndicatorGroup, IndicatorSources, SpeedClass};
    use proptest::prelude::*;
    use rand_chacha::rand_core::SeedableRng;

    fn spec(transform: Transform, bounds: [f64; 2], baseline: f64) -> IndicatorSpec {
        IndicatorSpec {
            key: "t".into(),
            unit: "1".into(),
            group: IndicatorGroup::Cardiovascular,
            sources: IndicatorSources::Device,
            transform,
            baseline,
            weekday_offsets: [0.0; 7],
            annual_amplitude: 0.0,
            annual_phase_day: 1.0,
            inertia: 0.5,
            bounds,
            slope_limit: 5.0,
            soft_cap: 8.0,
            noise_loadings: [0.0; 7],
            idio_variance: 1.0,
            speed_class: SpeedClass::Fast,
            reference_range: None,
        }
    }

    #[test]
    fn kernel_is_zero_outside_support() {
        let k = Kernel::new(10.0, 20.0, 4.0, 8.0).unwrap();
        for t in [-5.0, 0.0, 9.999, 10.0, 38.0 + 1e-9, 100.0] {
            assert_eq!(k.eval(t, FadeMode::Continuity), 0.0, "t = {t}");
        }
        // The fade endpoint itself is still inside the support.
        assert!(k.eval(38.0, FadeMode::Continuity) > 0.0);
    }

    #[test]
    fn kernel_hits_half_at_rise_midpoint() {
        let k = Kernel::new(0.0, 30.0, 10.0, 5.0).unwrap();
        assert_eq!(k.eval(5.0, FadeMode::Continuity), 0.5);
    }

    #[test]
    fn kernel_fade_endpoint_matches_e_minus_3() {
        // Long event, onset fully saturated by the end.
        let k = Kernel::new(0.0, 100.0, 3.0, 7.0).unwrap();
        let at_end = k.eval(100.0, FadeMode::Continuity);
        let fade_end = k.eval(107.0, FadeMode::Continuity);
        let e3 = (-3.0f64).exp();
        assert!(
            (fade_end - e3 * at_end).abs() <= 1e-12,
            "fade end {fade_end} vs {}",
            e3 * at_end
        );
    }

    #[test]
    fn kernel_is_continuous_at_duration_boundary() {
        // Short event that ends mid-rise, the case where the literal
        // exponential would jump.
        let k = Kernel::new(0.0, 2.0, 6.0, 5.0).unwrap();
        let active_end = k.eval(2.0, FadeMode::Continuity);
        let just_after = k.eval(2.0 + 1e-12, FadeMode::Continuity);
        assert!(active_end < 0.9, "event ends mid-rise: {active_end}");
        assert!((active_end - just_after).abs() <= 1e-12);
    }

    #[test]
    fn kernel_literal_mode_keeps_unscaled_tail() {
        let k = Kernel::new(0.0, 2.0, 6.0, 5.0).unwrap();
        let just_after = k.eval(2.0 + 1e-12, FadeMode::Literal);
        assert!((just_after - 1.0).abs() < 1e-9);
        let mid_fade = k.eval(4.5, FadeMode::Literal);
        assert!((mid_fade - (-3.0f64 / 5.0 * 2.5).exp()).abs() < 1e-12);
    }

    #[test]
    fn kernel_monotone_rise_and_fall() {
        let k = Kernel::new(0.0, 40.0, 12.0, 9.0).unwrap();
        let mut prev = 0.0;
        for i in 1..=400 {
            let t = i as f64 * 0.1;
            let g = k.eval(t, FadeMode::Continuity);
            assert!(g > prev, "rise not strictly increasing at t = {t}");
            prev = g;
        }
        for i in 1..=89 {
            let t = 40.0 + i as f64 * 0.1;
            let g = k.eval(t, FadeMode::Continuity);
            assert!(g < prev, "fade not strictly decreasing at t = {t}");
            prev = g;
        }
    }

    #[test]
    fn kernel_rejects_bad_timing() {
        assert!(Kernel::new(0.0, 0.0, 3.0, 5.0).is_err());
        assert!(Kernel::new(0.0, 10.0, 0.0, 5.0).is_err());
        assert!(Kernel::new(0.0, 10.0, 3.0, -1.0).is_err());
        assert!(eval_kernel(0.0, 10.0, 3.0, f64::NAN, FadeMode::Continuity, 5.0).is_err());
    }

    #[test]
    fn superpose_empty_and_small() {
        assert_eq!(superpose(&[], 10.0), (0.0, 0.0));
        let (delta, raw) = superpose(&[(1.0, 0.1)], 10.0);
        assert_eq!(raw, 0.1);
        // 10 * tanh(0.01), near-linear regime.
        assert!((delta - 0.0999966668).abs() < 1e-9);
        assert!((delta - raw).abs() <= 0.0004 * 10.0);
    }

    #[test]
    fn superpose_stays_strictly_below_cap() {
        for raw in [0.5, 5.0, 50.0, 5e3, 5e7, f64::MAX / 4.0] {
            for sign in [1.0, -1.0] {
                let (delta, _) = superpose(&[(sign * raw, 1.0)], 5.0);
                assert!(delta.abs() < 5.0, "raw {raw} sign {sign} gave {delta}");
            }
        }
    }

    #[test]
    fn noise_identity_covariance_recovers() {
        let mut a = spec(Transform::Identity, [0.0, 100.0], 50.0);
        a.key = "a".into();
        let mut b = a.clone();
        b.key = "b".into();
        let model = NoiseModel::from_specs([&a, &b]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 20_000;
        let mut sum = [[0.0f64; 2]; 2];
        for _ in 0..n {
            let eps = model.draw(&mut rng);
            for i in 0..2 {
                for j in 0..2 {
                    sum[i][j] += eps[i] * eps[j];
                }
            }
        }
        let target = model.covariance();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let s = sum[i][j] / n as f64;
                num += (s - target[i][j]).powi(2);
                den += target[i][j].powi(2);
            }
        }
        assert!((num / den).sqrt() < 0.10);
    }

    #[test]
    fn noise_shared_factor_correlates() {
        let mut a = spec(Transform::Identity, [0.0, 100.0], 50.0);
        a.key = "a".into();
        a.noise_loadings = [1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        a.idio_variance = 0.05;
        let mut b = a.clone();
        b.key = "b".into();
        let model = NoiseModel::from_specs([&a, &b]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut dot = 0.0;
        for _ in 0..5_000 {
            let eps = model.draw(&mut rng);
            dot += eps[0] * eps[1];
        }
        // Shared variance is 2.0 of ~2.05 total, so the cross moment is
        // clearly positive.
        assert!(dot / 5_000.0 > 1.5);
    }

    #[test]
    fn noise_draws_are_reproducible() {
        let s = spec(Transform::Identity, [0.0, 100.0], 50.0);
        let model = NoiseModel::from_specs([&s]).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            assert_eq!(model.draw(&mut r1), model.draw(&mut r2));
        }
    }

    #[test]
    fn propose_without_inertia_is_baseline_plus_terms() {
        let p = propose_value(62.0, 61.5, 70.0, 0.0, 1.25, -0.5);
        assert_eq!(p.value, 62.0 + 1.25 - 0.5);
        assert_eq!(p.ar_residual, 0.0);
    }

    #[test]
    fn propose_ar_residual_contracts_geometrically() {
        let base = 10.0;
        let mut prev = 14.0;
        for step in 1..=20 {
            let p = propose_value(base, base, prev, 0.5, 0.0, 0.0);
            let expect = base + 4.0 * 0.5f64.powi(step);
            assert!((p.value - expect).abs() < 1e-12, "step {step}");
            prev = p.value;
        }
    }

    #[test]
    fn propose_parts_resum_exactly() {
        let p = propose_value(62.3, 61.9, 63.7, 0.55, -0.8, 0.31);
        let resum = p.baseline_seasonal + p.ar_residual + p.delta_evt + p.noise;
        assert_eq!(resum, p.value);
    }

    #[test]
    fn project_passes_feasible_values_through() {
        let s = spec(Transform::Identity, [40.0, 100.0], 62.0);
        let (v, flags) = project(&s, 63.0, 62.0);
        assert_eq!(v, 63.0);
        assert_eq!(flags, DayFlags::default());
    }

    #[test]
    fn project_clamps_range_and_slope() {
        let s = spec(Transform::Identity, [40.0, 100.0], 62.0);

        let (v, flags) = project(&s, 103.0, 99.0);
        assert_eq!(v, 100.0);
        assert!(flags.range_violated && flags.clipped && !flags.slope_violated);

        let (v, flags) = project(&s, 80.0, 70.0);
        assert_eq!(v, 75.0);
        assert!(flags.slope_violated && flags.clipped && !flags.range_violated);

        // Clipping implies at least one pre-projection flag and vice versa.
        for (proposal, prev) in [(95.0, 93.0), (39.0, 41.0), (60.0, 70.0)] {
            let (_, flags) = project(&s, proposal, prev);
            assert_eq!(flags.clipped, flags.range_violated || flags.slope_violated);
        }
    }

    #[test]
    fn transforms_match_hand_values() {
        let id = spec(Transform::Identity, [0.0, 200.0], 70.0);
        assert_eq!(to_transform(&id, 70.0).unwrap(), 70.0);

        let lg = spec(Transform::Log, [1.0, 1000.0], 100.0);
        assert!((to_transform(&lg, std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        assert!(to_transform(&lg, 0.0).is_err());

        let lt = spec(Transform::Logit, [0.0, 100.0], 50.0);
        assert_eq!(to_transform(&lt, 50.0).unwrap(), 0.0);
        assert!(to_transform(&lt, 0.0).is_err());
        assert!(to_transform(&lt, 100.0).is_err());
        // Inverse stays inside the closed bounds even when the sigmoid
        // saturates, and the clamped forward map stays finite there.
        assert!(from_transform(&lt, 1e6) <= 100.0);
        assert!(from_transform(&lt, -1e6) >= 0.0);
        assert!(to_transform_clamped(&lt, 100.0).is_finite());
        assert!(to_transform_clamped(&lt, 0.0).is_finite());

        let lg0 = spec(Transform::Log, [0.0, 100.0], 50.0);
        assert!(to_transform_clamped(&lg0, 0.0).is_finite());
    }

    #[test]
    fn seasonal_baseline_peaks_at_phase_day() {
        let mut s = spec(Transform::Identity, [0.0, 200.0], 100.0);
        s.annual_amplitude = 10.0;
        s.annual_phase_day = 15.0;
        let cal = Calendar::parse("2023-01-02").unwrap();
        let sb = SeasonalBaseline::new(&s, cal);
        // 2023-01-15 is day 13 and doy 15.
        assert!((sb.natural(13) - 110.0).abs() < 1e-9);
        // Half a year later the sinusoid is near its trough.
        assert!(sb.natural(13 + 183) < 91.0);
    }

    proptest! {
        #[test]
        fn transform_round_trip(raw in 0.001f64..0.999) {
            let lt = spec(Transform::Logit, [10.0, 250.0], 100.0);
            let v = 10.0 + raw * 240.0;
            let back = from_transform(&lt, to_transform(&lt, v).unwrap());
            prop_assert!((back - v).abs() <= 1e-9 * v.abs().max(1.0));

            let lg = spec(Transform::Log, [0.5, 1e6], 100.0);
            let v = 0.5 + raw * 999.0;
            let back = from_transform(&lg, to_transform(&lg, v).unwrap());
            prop_assert!((back - v).abs() <= 1e-9 * v.abs().max(1.0));
        }

        #[test]
        fn superpose_near_linear_and_bounded(u in -500.0f64..500.0, cap in 0.1f64..100.0) {
            let (delta, raw) = superpose(&[(u, 1.0)], cap);
            prop_assert_eq!(raw, u);
            prop_assert!(delta.abs() < cap);
            if u.abs() <= 0.1 * cap {
                prop_assert!((delta - u).abs() <= 0.0004 * cap);
            }
            prop_assert_eq!(delta.signum(), u.signum());
        }
    }
}
