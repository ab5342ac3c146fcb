use std::time::Duration;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::config::{EventTemplate, SparsityConfig};
use crate::error::Error;
use crate::model::{Event, EventImpact};
use crate::streams::StreamFactory;

const AFFINITY_BOOST: f64 = 4.0;
const GAP_FILL_BOOST: f64 = 8.0;
const ENDPOINT_TIMEOUT: Duration = Duration::from_secs(5);

/// Everything a policy may condition on for one day's decision. Serialized
/// as-is to external policy endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyContext {
    pub day: i64,
    pub date: String,
    pub conditions: Vec<String>,
    pub lifestyle_tags: Vec<String>,
    pub phase_index: usize,
    pub phase_theme: String,
    pub phase_start_day: i64,
    pub phase_end_day: i64,
    /// Events started in the current phase whose template matches its theme.
    pub storyline_events_in_phase: u32,
    pub active_events: u32,
    /// Event starts inside the trailing 7-day window.
    pub recent_starts: u32,
    /// Spawn probability for the day, already capped.
    pub spawn_probability: f64,
    pub menu: Vec<MenuEntry>,
}

/// One eligible event template with its affinity-weighted rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MenuEntry {
    pub template_id: String,
    pub name: String,
    pub weighted_rate: f64,
}

/// What a policy returns when it spawns an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventDraft {
    pub template_id: String,
    pub duration_days: i64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyResponse {
    event: Option<EventDraft>,
}

/// A day-level event decision maker. The engine enforces the sparsity gate
/// before calling and validates the draft after, so implementations only
/// choose whether and what to spawn.
pub trait EventPolicy {
    fn decide(&mut self, ctx: &PolicyContext) -> Result<Option<EventDraft>, Error>;
}

/// Hard sparsity gate; no policy is consulted on days where this fails.
pub fn gate_allows(sparsity: &SparsityConfig, day: i64, recent_starts: u32, active: u32) -> bool {
    day >= sparsity.warmup_days
        && recent_starts < sparsity.weekly_cap
        && active < sparsity.max_active
}

/// Affinity weight of one template against the current phase. Storyline
/// templates get x4, raised to x8 past the phase midpoint while the phase
/// still has no storyline event; conflicting templates are shut off.
pub fn affinity_weight(
    template: &EventTemplate,
    phase_theme: &str,
    day: i64,
    phase_start: i64,
    phase_end: i64,
    storyline_events_in_phase: u32,
) -> f64 {
    if template.conflict_tags.iter().any(|t| t == phase_theme) {
        return 0.0;
    }
    if template.affinity_tags.iter().any(|t| t == phase_theme) {
        let midpoint = phase_start + (phase_end - phase_start) / 2;
        if day > midpoint && storyline_events_in_phase == 0 {
            return GAP_FILL_BOOST;
        }
        return AFFINITY_BOOST;
    }
    1.0
}

fn is_eligible(template: &EventTemplate, conditions: &[String], lifestyle: &[String]) -> bool {
    if let Some(cond) = &template.requires_condition {
        if !conditions.iter().any(|c| c == cond) {
            return false;
        }
    }
    if let Some(tag) = &template.requires_lifestyle {
        if !lifestyle.iter().any(|t| t == tag) {
            return false;
        }
    }
    true
}

/// The weighted menu for one day, in template order. Ineligible templates
/// are dropped; conflicting ones stay with weight zero so the context shows
/// they were considered.
pub fn build_menu(
    templates: &[EventTemplate],
    conditions: &[String],
    lifestyle: &[String],
    phase_theme: &str,
    day: i64,
    phase_start: i64,
    phase_end: i64,
    storyline_events_in_phase: u32,
) -> Vec<MenuEntry> {
    templates
        .iter()
        .filter(|t| is_eligible(t, conditions, lifestyle))
        .map(|t| MenuEntry {
            template_id: t.id.clone(),
            name: t.name.clone(),
            weighted_rate: t.base_daily_rate
                * affinity_weight(t, phase_theme, day, phase_start, phase_end, storyline_events_in_phase),
        })
        .collect()
}

pub fn spawn_probability(menu: &[MenuEntry], p_max: f64) -> f64 {
    let total: f64 = menu.iter().map(|e| e.weighted_rate).sum();
    total.clamp(0.0, p_max)
}

/// Built-in policy: one uniform draw against the day's spawn probability,
/// then a categorical pick proportional to weighted rates, then a log-normal
/// duration rounded up to at least one day. All three consume the same
/// per-day stream in that order.
pub struct ScriptedPolicy {
    streams: StreamFactory,
    templates: Vec<EventTemplate>,
}

impl ScriptedPolicy {
    pub fn new(streams: StreamFactory, templates: Vec<EventTemplate>) -> Self {
        ScriptedPolicy { streams, templates }
    }
}

impl EventPolicy for ScriptedPolicy {
    fn decide(&mut self, ctx: &PolicyContext) -> Result<Option<EventDraft>, Error> {
        if ctx.spawn_probability <= 0.0 {
            return Ok(None);
        }
        let mut rng = self.streams.stream("policy", ctx.day, "draw");
        let gate: f64 = rng.gen();
        if gate >= ctx.spawn_probability {
            return Ok(None);
        }

        let total: f64 = ctx.menu.iter().map(|e| e.weighted_rate).sum();
        if total <= 0.0 {
            return Ok(None);
        }
        let mut ticket = rng.gen::<f64>() * total;
        let mut chosen = None;
        for entry in &ctx.menu {
            ticket -= entry.weighted_rate;
            if ticket < 0.0 && entry.weighted_rate > 0.0 {
                chosen = Some(entry);
                break;
            }
        }
        let Some(entry) = chosen.or_else(|| ctx.menu.iter().rev().find(|e| e.weighted_rate > 0.0))
        else {
            return Ok(None);
        };

        let template = self
            .templates
            .iter()
            .find(|t| t.id == entry.template_id)
            .ok_or(Error::Policy(format!(
                "menu offered unknown template {}",
                entry.template_id
            )))?;
        let duration = if template.duration_ln_sigma == 0.0 {
            template.duration_ln_mean.exp()
        } else {
            LogNormal::new(template.duration_ln_mean, template.duration_ln_sigma)
                .map_err(|e| Error::Policy(format!("duration distribution: {e}")))?
                .sample(&mut rng)
        };
        Ok(Some(EventDraft {
            template_id: template.id.clone(),
            duration_days: (duration.round() as i64).max(1),
        }))
    }
}

/// External policy speaking JSON over HTTP: the context goes out, an
/// `{"event": draft-or-null}` envelope comes back. Any transport or schema
/// problem surfaces as an error, which the engine converts into "no event".
pub struct JsonPolicy {
    endpoint: String,
}

impl JsonPolicy {
    pub fn new(endpoint: impl Into<String>) -> Self {
        JsonPolicy {
            endpoint: endpoint.into(),
        }
    }
}

impl EventPolicy for JsonPolicy {
    fn decide(&mut self, ctx: &PolicyContext) -> Result<Option<EventDraft>, Error> {
        let body = serde_json::to_string(ctx)
            .map_err(|e| Error::Policy(format!("context serialize: {e}")))?;
        let reply = crate::net::post_json(&self.endpoint, &body, ENDPOINT_TIMEOUT)
            .map_err(Error::Policy)?;
        let parsed: PolicyResponse =
            serde_json::from_str(&reply).map_err(|e| Error::Policy(format!("reply parse: {e}")))?;
        Ok(parsed.event)
    }
}

/// Checks a draft against the day's menu before instantiation.
pub fn validate_draft(draft: &EventDraft, menu: &[MenuEntry]) -> Result<(), Error> {
    if draft.duration_days < 1 {
        return Err(Error::Policy(format!(
            "draft duration {} below one day",
            draft.duration_days
        )));
    }
    let offered = menu
        .iter()
        .any(|e| e.template_id == draft.template_id && e.weighted_rate > 0.0);
    if !offered {
        return Err(Error::Policy(format!(
            "draft template {} was not on the day's menu",
            draft.template_id
        )));
    }
    Ok(())
}

/// Fills in concrete impact magnitudes and time constants from the template
/// ranges, one uniform draw per field in template order.
pub fn instantiate_event(
    template: &EventTemplate,
    sequence: u32,
    start_day: i64,
    duration_days: i64,
    phase_index: usize,
    rng: &mut ChaCha8Rng,
) -> Event {
    let sample = |rng: &mut ChaCha8Rng, range: [f64; 2]| {
        if range[0] == range[1] {
            range[0]
        } else {
            rng.gen_range(range[0]..=range[1])
        }
    };
    let impacts = template
        .impacts
        .iter()
        .map(|imp| EventImpact {
            indicator_key: imp.indicator_key.clone(),
            beta: sample(rng, imp.beta_range),
            tau_rise: sample(rng, imp.tau_rise_range),
            tau_fade: sample(rng, imp.tau_fade_range),
        })
        .collect();
    Event {
        event_id: format!("evt{sequence:04}-{}", template.id),
        category: template.category,
        name: template.name.clone(),
        start_day,
        duration_days,
        end_day: start_day + duration_days,
        phase_index,
        impacts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CohortConfig, ImpactTemplate};
    use crate::model::EventCategory;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::thread;

    fn template(id: &str, rate: f64, affinity: &[&str], conflicts: &[&str]) -> EventTemplate {
        EventTemplate {
            id: id.into(),
            category: EventCategory::HealthEvent,
            name: format!("Template {id}"),
            base_daily_rate: rate,
            affinity_tags: affinity.iter().map(|s| s.to_string()).collect(),
            conflict_tags: conflicts.iter().map(|s| s.to_string()).collect(),
            duration_ln_mean: (5.0f64).ln(),
            duration_ln_sigma: 0.4,
            impacts: vec![ImpactTemplate {
                indicator_key: "resting_hr".into(),
                beta_range: [1.0, 2.0],
                tau_rise_range: [2.0, 4.0],
                tau_fade_range: [3.0, 6.0],
            }],
            ..EventTemplate::default()
        }
    }

    fn ctx_for(menu: Vec<MenuEntry>, day: i64, p_max: f64) -> PolicyContext {
        let p = spawn_probability(&menu, p_max);
        PolicyContext {
            day,
            date: "2023-01-02".into(),
            conditions: vec![],
            lifestyle_tags: vec![],
            phase_index: 0,
            phase_theme: "stress_cycle".into(),
            phase_start_day: 0,
            phase_end_day: 200,
            storyline_events_in_phase: 0,
            active_events: 0,
            recent_starts: 0,
            spawn_probability: p,
            menu,
        }
    }

    #[test]
    fn gate_enforces_all_three_limits() {
        let s = SparsityConfig::default();
        assert!(!gate_allows(&s, 13, 0, 0));
        assert!(gate_allows(&s, 14, 0, 0));
        assert!(!gate_allows(&s, 100, 3, 0));
        assert!(gate_allows(&s, 100, 2, 14));
        assert!(!gate_allows(&s, 100, 2, 15));
    }

    #[test]
    fn affinity_weights_follow_the_phase() {
        let t = template("a", 0.01, &["stress_cycle"], &[]);
        assert_eq!(affinity_weight(&t, "stress_cycle", 10, 0, 100, 1), 4.0);
        assert_eq!(affinity_weight(&t, "stress_cycle", 10, 0, 100, 0), 4.0);
        assert_eq!(affinity_weight(&t, "stress_cycle", 51, 0, 100, 0), 8.0);
        assert_eq!(affinity_weight(&t, "stress_cycle", 51, 0, 100, 2), 4.0);
        assert_eq!(affinity_weight(&t, "sleep_focus", 51, 0, 100, 0), 1.0);
        let c = template("b", 0.01, &[], &["stress_cycle"]);
        assert_eq!(affinity_weight(&c, "stress_cycle", 10, 0, 100, 0), 0.0);
    }

    #[test]
    fn menu_filters_requirements() {
        let mut gated = template("needs_cond", 0.01, &[], &[]);
        gated.requires_condition = Some("t2dm".into());
        let mut styled = template("needs_tag", 0.01, &[], &[]);
        styled.requires_lifestyle = Some("smoker".into());
        let open = template("open", 0.02, &[], &[]);
        let templates = vec![gated, styled, open];

        let menu = build_menu(&templates, &[], &[], "stabilization", 10, 0, 100, 0);
        assert_eq!(menu.len(), 1);
        assert_eq!(menu[0].template_id, "open");

        let menu = build_menu(
            &templates,
            &["t2dm".into()],
            &["smoker".into()],
            "stabilization",
            10,
            0,
            100,
            0,
        );
        assert_eq!(menu.len(), 3);
    }

    #[test]
    fn spawn_probability_is_capped() {
        let menu = vec![
            MenuEntry {
                template_id: "a".into(),
                name: "A".into(),
                weighted_rate: 0.3,
            },
            MenuEntry {
                template_id: "b".into(),
                name: "B".into(),
                weighted_rate: 0.2,
            },
        ];
        assert!((spawn_probability(&menu, 0.35) - 0.35).abs() < 1e-12);
        assert!((spawn_probability(&menu, 0.9) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scripted_policy_hits_the_expected_rate() {
        let templates = vec![template("a", 0.06, &[], &[]), template("b", 0.02, &[], &[])];
        let streams = StreamFactory::for_user(42, 0);
        let mut policy = ScriptedPolicy::new(streams, templates.clone());
        let mut spawns = 0;
        let mut picks_a = 0;
        let n = 20_000;
        for day in 0..n {
            let menu = build_menu(&templates, &[], &[], "x", day, 0, n, 0);
            let ctx = ctx_for(menu, day, 0.35);
            if let Some(draft) = policy.decide(&ctx).unwrap() {
                spawns += 1;
                assert!(draft.duration_days >= 1);
                if draft.template_id == "a" {
                    picks_a += 1;
                }
            }
        }
        let rate = spawns as f64 / n as f64;
        assert!((rate - 0.08).abs() < 0.008, "spawn rate {rate}");
        let share_a = picks_a as f64 / spawns as f64;
        assert!((share_a - 0.75).abs() < 0.05, "template share {share_a}");
    }

    #[test]
    fn scripted_policy_is_deterministic() {
        let templates = vec![template("a", 0.3, &[], &[])];
        let menu = build_menu(&templates, &[], &[], "x", 5, 0, 100, 0);
        let ctx = ctx_for(menu, 5, 0.35);
        let mut p1 = ScriptedPolicy::new(StreamFactory::for_user(7, 3), templates.clone());
        let mut p2 = ScriptedPolicy::new(StreamFactory::for_user(7, 3), templates.clone());
        for _ in 0..5 {
            assert_eq!(p1.decide(&ctx).unwrap(), p2.decide(&ctx).unwrap());
        }
    }

    #[test]
    fn draft_validation_rejects_off_menu_picks() {
        let menu = vec![MenuEntry {
            template_id: "a".into(),
            name: "A".into(),
            weighted_rate: 0.1,
        }];
        let ok = EventDraft {
            template_id: "a".into(),
            duration_days: 3,
        };
        assert!(validate_draft(&ok, &menu).is_ok());
        let unknown = EventDraft {
            template_id: "zzz".into(),
            duration_days: 3,
        };
        assert!(validate_draft(&unknown, &menu).is_err());
        let short = EventDraft {
            template_id: "a".into(),
            duration_days: 0,
        };
        assert!(validate_draft(&short, &menu).is_err());
    }

    #[test]
    fn instantiation_samples_within_ranges() {
        let cfg = CohortConfig::default();
        let template = cfg
            .events
            .iter()
            .find(|t| t.id == "jogging_routine")
            .unwrap();
        let streams = StreamFactory::for_user(9, 0);
        let mut rng = streams.stream("impact", 100, &template.id);
        let event = instantiate_event(template, 7, 100, 60, 2, &mut rng);
        assert_eq!(event.event_id, "evt0007-jogging_routine");
        assert_eq!(event.end_day, 160);
        assert_eq!(event.phase_index, 2);
        assert_eq!(event.impacts.len(), template.impacts.len());
        for (got, tmpl) in event.impacts.iter().zip(&template.impacts) {
            assert_eq!(got.indicator_key, tmpl.indicator_key);
            assert!(got.beta >= tmpl.beta_range[0] && got.beta <= tmpl.beta_range[1]);
            assert!(got.tau_rise >= tmpl.tau_rise_range[0] && got.tau_rise <= tmpl.tau_rise_range[1]);
            assert!(got.tau_fade >= tmpl.tau_fade_range[0] && got.tau_fade <= tmpl.tau_fade_range[1]);
        }

        let mut rng2 = streams.stream("impact", 100, &template.id);
        let again = instantiate_event(template, 7, 100, 60, 2, &mut rng2);
        assert_eq!(event, again);
    }

    #[test]
    fn json_policy_round_trips_through_a_socket() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        thread::spawn(move || {
            if let Ok((mut sock, _)) = listener.accept() {
                let mut buf = vec![0u8; 65536];
                let _ = sock.read(&mut buf);
                let payload = r#"{"event": {"template_id": "a", "duration_days": 4}}"#;
                let reply = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = sock.write_all(reply.as_bytes());
            }
        });

        let templates = vec![template("a", 0.3, &[], &[])];
        let menu = build_menu(&templates, &[], &[], "x", 5, 0, 100, 0);
        let ctx = ctx_for(menu, 5, 0.35);
        let mut policy = JsonPolicy::new(format!("http://{addr}/policy"));
        let draft = policy.decide(&ctx).unwrap().unwrap();
        assert_eq!(draft.template_id, "a");
        assert_eq!(draft.duration_days, 4);
    }

    #[test]
    fn json_policy_surfaces_transport_errors() {
        let templates = vec![template("a", 0.3, &[], &[])];
        let menu = build_menu(&templates, &[], &[], "x", 5, 0, 100, 0);
        let ctx = ctx_for(menu, 5, 0.35);
        let mut policy = JsonPolicy::new("http://127.0.0.1:1/policy");
        assert!(policy.decide(&ctx).is_err());
    }
}
