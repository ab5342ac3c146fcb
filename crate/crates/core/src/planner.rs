use rand::Rng;

use crate::calendar::Calendar;
use crate::error::Error;
use crate::model::{Phase, TrajectoryPlan};
use crate::streams::StreamFactory;

/// Shortest horizon the planner accepts.
pub const MIN_HORIZON_DAYS: i64 = 180;
/// Target mean phase length; the phase count is horizon / this, rounded.
const TARGET_PHASE_DAYS: f64 = 106.0;
const MIN_PHASE_DAYS: i64 = 30;
const BOUNDARY_JITTER: i64 = 15;

const CHRONIC_THEMES: [&str; 5] = [
    "stabilization",
    "exacerbation",
    "treatment_adjustment",
    "stress_cycle",
    "weight_management",
];

const HEALTHY_THEMES: [&str; 5] = [
    "fitness_push",
    "stress_cycle",
    "weight_management",
    "sleep_focus",
    "stabilization",
];

pub fn theme_label(tag: &str) -> &'static str {
    match tag {
        "stabilization" => "Stabilization stretch",
        "exacerbation" => "Symptom exacerbation",
        "treatment_adjustment" => "Treatment adjustment",
        "stress_cycle" => "Stress cycle",
        "weight_management" => "Weight management push",
        "fitness_push" => "Fitness push",
        "sleep_focus" => "Sleep focus",
        _ => "Life phase",
    }
}

pub fn phase_count(horizon_days: i64) -> usize {
    ((horizon_days as f64 / TARGET_PHASE_DAYS).round() as i64).clamp(4, 20) as usize
}

/// Index of the phase containing `day`. Days past the last phase stick to it.
pub fn phase_at(plan: &TrajectoryPlan, day: i64) -> usize {
    plan.phases
        .iter()
        .position(|p| day < p.end_day)
        .unwrap_or(plan.phases.len().saturating_sub(1))
}

/// Splits the horizon into half-open themed phases. Boundaries start on an
/// even grid, get an integer jitter of up to +/-15 days, then are pushed
/// apart so every phase keeps at least 30 days. Themes come from the chronic
/// pool when the profile carries any condition, the healthy pool otherwise,
/// and never repeat back to back.
pub fn plan_trajectory(
    conditions: &[String],
    horizon_days: i64,
    calendar: &Calendar,
    streams: &StreamFactory,
) -> Result<TrajectoryPlan, Error> {
    if horizon_days < MIN_HORIZON_DAYS {
        return Err(Error::HorizonTooShort(horizon_days, MIN_HORIZON_DAYS));
    }
    let count = phase_count(horizon_days);

    let mut boundary_rng = streams.stream("plan", 0, "boundaries");
    let mut boundaries = Vec::with_capacity(count + 1);
    boundaries.push(0i64);
    for i in 1..count {
        let ideal = (horizon_days as f64 * i as f64 / count as f64).round() as i64;
        let jittered = ideal + boundary_rng.gen_range(-BOUNDARY_JITTER..=BOUNDARY_JITTER);
        let lo = boundaries[i - 1] + MIN_PHASE_DAYS;
        let hi = horizon_days - MIN_PHASE_DAYS * (count - i) as i64;
        boundaries.push(jittered.clamp(lo, hi));
    }
    boundaries.push(horizon_days);

    let pool: &[&str] = if conditions.is_empty() {
        &HEALTHY_THEMES
    } else {
        &CHRONIC_THEMES
    };
    let mut theme_rng = streams.stream("plan", 0, "themes");
    let mut themes: Vec<&str> = Vec::with_capacity(count);
    for i in 0..count {
        let tag = if i == 0 {
            pool[theme_rng.gen_range(0..pool.len())]
        } else {
            let prev = themes[i - 1];
            let remaining: Vec<&str> = pool.iter().copied().filter(|t| *t != prev).collect();
            remaining[theme_rng.gen_range(0..remaining.len())]
        };
        themes.push(tag);
    }

    let phases = (0..count)
        .map(|i| Phase {
            index: i,
            name: theme_label(themes[i]).to_string(),
            start_day: boundaries[i],
            end_day: boundaries[i + 1],
            start_date: calendar.date_str(boundaries[i]),
            end_date: calendar.date_str(boundaries[i + 1]),
            theme_tag: themes[i].to_string(),
        })
        .collect();

    let overall_theme = if conditions.is_empty() {
        "general wellness".to_string()
    } else {
        format!("managing {}", conditions.join(" + "))
    };

    Ok(TrajectoryPlan {
        overall_theme,
        phases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calendar() -> Calendar {
        Calendar::parse("2023-01-02").unwrap()
    }

    fn factory(seed: u64) -> StreamFactory {
        StreamFactory::for_user(seed, 0)
    }

    #[test]
    fn short_horizons_are_rejected() {
        let err = plan_trajectory(&[], 179, &calendar(), &factory(1)).unwrap_err();
        assert!(matches!(err, Error::HorizonTooShort(179, 180)));
        assert!(plan_trajectory(&[], 180, &calendar(), &factory(1)).is_ok());
    }

    #[test]
    fn phase_count_tracks_horizon() {
        assert_eq!(phase_count(180), 4);
        assert_eq!(phase_count(730), 7);
        assert_eq!(phase_count(1196), 11);
        assert_eq!(phase_count(1813), 17);
        assert_eq!(phase_count(100_000), 20);
    }

    #[test]
    fn phases_tile_the_horizon() {
        for seed in 0..20 {
            let plan = plan_trajectory(&[], 730, &calendar(), &factory(seed)).unwrap();
            let mut cursor = 0;
            for (i, ph) in plan.phases.iter().enumerate() {
                assert_eq!(ph.index, i);
                assert_eq!(ph.start_day, cursor);
                assert!(ph.end_day - ph.start_day >= MIN_PHASE_DAYS);
                cursor = ph.end_day;
            }
            assert_eq!(cursor, 730);
        }
    }

    #[test]
    fn boundaries_stay_near_the_even_grid() {
        let plan = plan_trajectory(&[], 1060, &calendar(), &factory(3)).unwrap();
        let count = plan.phases.len() as i64;
        for ph in &plan.phases[1..] {
            let ideal = 1060 * ph.index as i64 / count;
            assert!((ph.start_day - ideal).abs() <= BOUNDARY_JITTER + 1);
        }
    }

    #[test]
    fn themes_come_from_the_matching_pool_without_repeats() {
        let chronic = vec!["t2dm".to_string()];
        for seed in 0..30 {
            let plan = plan_trajectory(&chronic, 1400, &calendar(), &factory(seed)).unwrap();
            for pair in plan.phases.windows(2) {
                assert_ne!(pair[0].theme_tag, pair[1].theme_tag);
            }
            for ph in &plan.phases {
                assert!(CHRONIC_THEMES.contains(&ph.theme_tag.as_str()));
            }
            let healthy = plan_trajectory(&[], 1400, &calendar(), &factory(seed)).unwrap();
            for ph in &healthy.phases {
                assert!(HEALTHY_THEMES.contains(&ph.theme_tag.as_str()));
                assert_ne!(ph.theme_tag, "exacerbation");
            }
        }
    }

    #[test]
    fn plans_are_deterministic() {
        let a = plan_trajectory(&[], 900, &calendar(), &factory(11)).unwrap();
        let b = plan_trajectory(&[], 900, &calendar(), &factory(11)).unwrap();
        assert_eq!(a, b);
        let c = plan_trajectory(&[], 900, &calendar(), &factory(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn phase_lookup_matches_spans() {
        let plan = plan_trajectory(&[], 800, &calendar(), &factory(5)).unwrap();
        for ph in &plan.phases {
            assert_eq!(phase_at(&plan, ph.start_day), ph.index);
            assert_eq!(phase_at(&plan, ph.end_day - 1), ph.index);
        }
        assert_eq!(phase_at(&plan, 799), plan.phases.len() - 1);
    }

    #[test]
    fn minimum_phase_length_survives_extreme_jitter() {
        for seed in 0..200 {
            let plan = plan_trajectory(&[], 180, &calendar(), &factory(seed)).unwrap();
            assert_eq!(plan.phases.len(), 4);
            for ph in &plan.phases {
                assert!(ph.end_day - ph.start_day >= MIN_PHASE_DAYS);
            }
        }
    }
}
