//! Two-stage response scoring: a binary programmatic gate at fixed numeric
//! tolerances, then a 0-2 rubric judge whose normalized score the gate
//! multiplies into the final per-query value.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Error;
use crate::model::{
    AnswerKind, AnswerValue, CanonicalAnswer, Dimension, GroundTruth, Query, Tier, ALL_DIMENSIONS,
    ALL_TIERS,
};
use crate::net;

/// Absolute numeric slack at the gate.
pub const EPS_ABS: f64 = 0.01;
/// Relative numeric slack at the gate, scaled by the truth magnitude.
pub const EPS_REL: f64 = 0.01;

const JUDGE_TIMEOUT: Duration = Duration::from_secs(20);

/// A response that survived strict parsing, plus anything the parser had to
/// clean up along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub answer: CanonicalAnswer,
    pub flags: Vec<String>,
}

/// Parses one submitted answer. The schema is strict: unknown fields are
/// rejected, the channel the answer type relies on must be present and well
/// formed, and numbers must be finite. Duplicate set members are dropped
/// (first occurrence wins) and flagged rather than rejected.
pub fn parse_response(raw: &str) -> Result<ParsedResponse, Error> {
    let mut answer: CanonicalAnswer =
        serde_json::from_str(raw).map_err(|e| Error::ResponseParse(e.to_string()))?;
    let mut flags = Vec::new();

    let all_text = |values: &[AnswerValue]| values.iter().all(|v| v.as_text().is_some());
    match answer.answer_type {
        AnswerKind::Number => {
            if answer.values.is_empty() {
                return Err(Error::ResponseParse("number answer without values".into()));
            }
            for v in &answer.values {
                match v.as_number() {
                    Some(n) if n.is_finite() => {}
                    Some(n) => {
                        return Err(Error::ResponseParse(format!("non-finite number {n}")));
                    }
                    None => {
                        return Err(Error::ResponseParse(
                            "number answer with text value".into(),
                        ));
                    }
                }
            }
            if !answer.dates.is_empty() {
                return Err(Error::ResponseParse("number answer carries dates".into()));
            }
        }
        AnswerKind::Date => {
            if answer.dates.is_empty() {
                return Err(Error::ResponseParse("date answer without dates".into()));
            }
            for d in &answer.dates {
                if NaiveDate::parse_from_str(d, "%Y-%m-%d").is_err() {
                    return Err(Error::ResponseParse(format!("bad date {d:?}")));
                }
            }
            if !answer.values.is_empty() {
                return Err(Error::ResponseParse("date answer carries values".into()));
            }
        }
        AnswerKind::String => {
            if answer.values.is_empty() {
                return Err(Error::ResponseParse("string answer without values".into()));
            }
            if !all_text(&answer.values) {
                return Err(Error::ResponseParse(
                    "string answer with numeric value".into(),
                ));
            }
            if !answer.dates.is_empty() {
                return Err(Error::ResponseParse("string answer carries dates".into()));
            }
        }
        AnswerKind::Set => {
            if !all_text(&answer.values) {
                return Err(Error::ResponseParse("set answer with numeric value".into()));
            }
            if !answer.dates.is_empty() {
                return Err(Error::ResponseParse("set answer carries dates".into()));
            }
            let mut seen = BTreeSet::new();
            let before = answer.values.len();
            answer
                .values
                .retain(|v| seen.insert(v.as_text().unwrap().to_string()));
            if answer.values.len() < before {
                flags.push("duplicates_removed".into());
            }
        }
        AnswerKind::RankedList => {
            if answer.values.is_empty() {
                return Err(Error::ResponseParse("ranked answer without values".into()));
            }
            if !all_text(&answer.values) {
                return Err(Error::ResponseParse(
                    "ranked answer with numeric value".into(),
                ));
            }
            if !answer.dates.is_empty() {
                return Err(Error::ResponseParse("ranked answer carries dates".into()));
            }
        }
    }
    Ok(ParsedResponse { answer, flags })
}

fn number_close(submitted: f64, truth: f64, eps_abs: f64, eps_rel: f64) -> bool {
    (submitted - truth).abs() <= eps_abs.max(eps_rel * truth.abs())
}

fn texts(values: &[AnswerValue]) -> Vec<&str> {
    values.iter().filter_map(|v| v.as_text()).collect()
}

/// The binary programmatic gate. Numbers pass within
/// `max(eps_abs, eps_rel * |truth|)` per element, dates and strings must be
/// exact, sets must match exactly as sets, and ranked lists must reproduce
/// the truth ordering (items tied on the ranking key may appear in any order
/// within their tie group). When the truth marks a tying collection
/// (`any_of`), a submission passes by naming exactly one member of it. A
/// mismatched answer type fails, it is not an error.
pub fn stage1_gate(answer: &CanonicalAnswer, truth: &GroundTruth, eps_abs: f64, eps_rel: f64) -> bool {
    let want = &truth.answer;
    if answer.answer_type != want.answer_type {
        return false;
    }
    if truth.any_of {
        return match want.answer_type {
            AnswerKind::Date => {
                answer.dates.len() == 1 && want.dates.contains(&answer.dates[0])
            }
            AnswerKind::Number => {
                answer.values.len() == 1
                    && answer.values[0].as_number().is_some_and(|sub| {
                        want.values
                            .iter()
                            .filter_map(|v| v.as_number())
                            .any(|t| number_close(sub, t, eps_abs, eps_rel))
                    })
            }
            _ => {
                answer.values.len() == 1
                    && answer.values[0]
                        .as_text()
                        .is_some_and(|sub| texts(&want.values).contains(&sub))
            }
        };
    }
    match want.answer_type {
        AnswerKind::Number => {
            answer.values.len() == want.values.len()
                && answer.values.iter().zip(&want.values).all(|(a, t)| {
                    match (a.as_number(), t.as_number()) {
                        (Some(sub), Some(truth)) => number_close(sub, truth, eps_abs, eps_rel),
                        _ => false,
                    }
                })
        }
        AnswerKind::Date => answer.dates == want.dates,
        AnswerKind::String => {
            answer.values.len() == want.values.len() && texts(&answer.values) == texts(&want.values)
        }
        AnswerKind::Set => {
            let got: BTreeSet<&str> = texts(&answer.values).into_iter().collect();
            let expect: BTreeSet<&str> = texts(&want.values).into_iter().collect();
            got == expect
        }
        AnswerKind::RankedList => ranked_match(answer, want, &truth.ranking_keys),
    }
}

fn ranked_match(answer: &CanonicalAnswer, want: &CanonicalAnswer, keys: &[f64]) -> bool {
    let got = texts(&answer.values);
    let expect = texts(&want.values);
    if got.len() != expect.len() || got.len() != answer.values.len() {
        return false;
    }
    if keys.len() != expect.len() {
        return got == expect;
    }
    // Walk maximal runs of equal ranking keys; inside a run order is free.
    let mut i = 0;
    while i < expect.len() {
        let mut j = i + 1;
        while j < expect.len() && keys[j] == keys[i] {
            j += 1;
        }
        let tie: BTreeSet<&str> = expect[i..j].iter().copied().collect();
        if !got[i..j].iter().all(|g| tie.contains(g)) {
            return false;
        }
        let got_tie: BTreeSet<&str> = got[i..j].iter().copied().collect();
        if got_tie.len() != j - i {
            return false;
        }
        i = j;
    }
    true
}

/// Stage 2 plug point. Judges see the full query (text, dimension, tier) and
/// the gated response, and hand back a quality score in `[0, 2]`.
pub trait RubricJudge {
    fn score(&mut self, query: &Query, response: &CanonicalAnswer) -> Result<f64, Error>;

    /// Per-query notes the judge wants surfaced in the report (e.g. fallback
    /// activations). Drained after each batch.
    fn take_notes(&mut self) -> Vec<String> {
        Vec::new()
    }
}

/// Fallback judge: full canonical fidelity scores 2, matching values with a
/// wrong or missing unit or source score 1, anything else 0.
#[derive(Debug, Default, Clone, Copy)]
pub struct DeterministicJudge;

impl RubricJudge for DeterministicJudge {
    fn score(&mut self, query: &Query, response: &CanonicalAnswer) -> Result<f64, Error> {
        let truth = &query.ground_truth;
        if !stage1_gate(response, truth, EPS_ABS, EPS_REL) {
            return Ok(0.0);
        }
        let unit_ok = match &truth.answer.unit {
            None => true,
            Some(u) => response.unit.as_deref() == Some(u.as_str()),
        };
        let source_ok = match truth.answer.source {
            None => true,
            Some(s) => response.source == Some(s),
        };
        Ok(if unit_ok && source_ok { 2.0 } else { 1.0 })
    }
}

/// Remote judge speaking JSON over HTTP. The request carries the query text
/// and the response; the endpoint answers `{"score": <0..=2>}` (extra fields
/// ignored). Transport or schema failures fall back to the deterministic
/// judge and are noted for the report.
pub struct HttpJudge {
    url: String,
    timeout: Duration,
    fallback: DeterministicJudge,
    notes: Vec<String>,
}

#[derive(Deserialize)]
struct JudgeReply {
    score: f64,
    #[serde(default)]
    #[allow(dead_code)]
    justification: Option<String>,
}

impl HttpJudge {
    pub fn new(url: impl Into<String>) -> Self {
        HttpJudge {
            url: url.into(),
            timeout: JUDGE_TIMEOUT,
            fallback: DeterministicJudge,
            notes: Vec::new(),
        }
    }

    fn ask(&self, query: &Query, response: &CanonicalAnswer) -> Result<f64, String> {
        let body = serde_json::json!({
            "query_id": query.query_id,
            "dimension": query.dimension,
            "tier": query.tier,
            "text": query.text,
            "response": response,
        });
        let raw = net::post_json(&self.url, &body.to_string(), self.timeout)?;
        let reply: JudgeReply = serde_json::from_str(&raw).map_err(|e| e.to_string())?;
        if !reply.score.is_finite() {
            return Err(format!("non-finite judge score {}", reply.score));
        }
        Ok(reply.score.clamp(0.0, 2.0))
    }
}

impl RubricJudge for HttpJudge {
    fn score(&mut self, query: &Query, response: &CanonicalAnswer) -> Result<f64, Error> {
        match self.ask(query, response) {
            Ok(score) => Ok(score),
            Err(why) => {
                self.notes
                    .push(format!("{}: judge fallback ({why})", query.query_id));
                self.fallback.score(query, response)
            }
        }
    }

    fn take_notes(&mut self) -> Vec<String> {
        std::mem::take(&mut self.notes)
    }
}

/// Combines the gate with the normalized rubric: `gate * rubric / 2`.
pub fn final_score(gate: bool, rubric: f64) -> f64 {
    if gate {
        rubric / 2.0
    } else {
        0.0
    }
}

/// One scored query.
#[derive(Debug, Clone, Serialize)]
pub struct QueryScore {
    pub query_id: String,
    pub dimension: Dimension,
    pub tier: Tier,
    pub gate: bool,
    pub rubric: f64,
    pub score: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// Mean and bookkeeping for one report cell.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct CellStat {
    pub sum: f64,
    pub count: usize,
    pub mean_pct: f64,
}

impl CellStat {
    fn from_sum(sum: f64, count: usize) -> Self {
        let mean_pct = if count == 0 {
            0.0
        } else {
            100.0 * sum / count as f64
        };
        CellStat {
            sum,
            count,
            mean_pct,
        }
    }
}

/// The scoring report: per-query rows plus dimension, tier, and
/// dimension-by-tier aggregates. `total_pct` is the per-query average over
/// everything scored, including misses.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub total_pct: f64,
    pub by_dimension: BTreeMap<String, CellStat>,
    pub by_tier: BTreeMap<String, CellStat>,
    pub by_cell: BTreeMap<String, CellStat>,
    pub scores: Vec<QueryScore>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub judge_notes: Vec<String>,
}

pub fn dimension_name(d: Dimension) -> &'static str {
    match d {
        Dimension::Lookup => "lookup",
        Dimension::Trend => "trend",
        Dimension::Comparison => "comparison",
        Dimension::Anomaly => "anomaly",
        Dimension::Explanation => "explanation",
    }
}

pub fn tier_name(t: Tier) -> &'static str {
    match t {
        Tier::Easy => "easy",
        Tier::Medium => "medium",
        Tier::Hard => "hard",
    }
}

/// Scores a full query set against a `query_id -> answer` response map.
/// Queries without a response score zero and are listed, as do responses
/// that fail parsing or the gate.
pub fn score_queries(
    queries: &[Query],
    responses: &BTreeMap<String, Value>,
    judge: &mut dyn RubricJudge,
) -> Report {
    let mut scores = Vec::with_capacity(queries.len());
    let mut missing = Vec::new();
    for query in queries {
        let mut flags = Vec::new();
        let (gate, rubric) = match responses.get(&query.query_id) {
            None => {
                missing.push(query.query_id.clone());
                flags.push("missing_response".into());
                (false, 0.0)
            }
            Some(raw) => match parse_response(&raw.to_string()) {
                Err(e) => {
                    flags.push(format!("parse_error: {e}"));
                    (false, 0.0)
                }
                Ok(parsed) => {
                    flags.extend(parsed.flags);
                    let gate = stage1_gate(&parsed.answer, &query.ground_truth, EPS_ABS, EPS_REL);
                    if gate {
                        let rubric = match judge.score(query, &parsed.answer) {
                            Ok(r) => r,
                            Err(e) => {
                                flags.push(format!("judge_error: {e}"));
                                0.0
                            }
                        };
                        (true, rubric)
                    } else {
                        (false, 0.0)
                    }
                }
            },
        };
        scores.push(QueryScore {
            query_id: query.query_id.clone(),
            dimension: query.dimension,
            tier: query.tier,
            gate,
            rubric,
            score: final_score(gate, rubric),
            flags,
        });
    }
    let judge_notes = judge.take_notes();
    aggregate(scores, missing, judge_notes)
}

fn aggregate(scores: Vec<QueryScore>, missing: Vec<String>, judge_notes: Vec<String>) -> Report {
    let mut by_dimension = BTreeMap::new();
    let mut by_tier = BTreeMap::new();
    let mut by_cell = BTreeMap::new();
    let mut dim_sums = Vec::new();
    for dim in ALL_DIMENSIONS {
        let rows: Vec<&QueryScore> = scores.iter().filter(|s| s.dimension == dim).collect();
        let sum: f64 = rows.iter().map(|s| s.score).sum();
        by_dimension.insert(
            dimension_name(dim).to_string(),
            CellStat::from_sum(sum, rows.len()),
        );
        dim_sums.push(sum);
        for tier in ALL_TIERS {
            let cell: Vec<&&QueryScore> = rows.iter().filter(|s| s.tier == tier).collect();
            let cell_sum: f64 = cell.iter().map(|s| s.score).sum();
            by_cell.insert(
                format!("{}/{}", dimension_name(dim), tier_name(tier)),
                CellStat::from_sum(cell_sum, cell.len()),
            );
        }
    }
    for tier in ALL_TIERS {
        let rows: Vec<&QueryScore> = scores.iter().filter(|s| s.tier == tier).collect();
        let sum: f64 = rows.iter().map(|s| s.score).sum();
        by_tier.insert(
            tier_name(tier).to_string(),
            CellStat::from_sum(sum, rows.len()),
        );
    }
    let total_sum: f64 = dim_sums.iter().sum();
    let total_pct = if scores.is_empty() {
        0.0
    } else {
        100.0 * total_sum / scores.len() as f64
    };
    Report {
        total_pct,
        by_dimension,
        by_tier,
        by_cell,
        scores,
        missing,
        judge_notes,
    }
}

/// Renders the dimension-by-tier accuracy matrix as a fixed-width text table.
pub fn render_text_table(report: &Report) -> String {
    let mut out = String::new();
    let header = format!(
        "{:<13} {:>8} {:>8} {:>8} {:>8}\n",
        "dimension", "easy", "medium", "hard", "all"
    );
    out.push_str(&header);
    out.push_str(&"-".repeat(header.len() - 1));
    out.push('\n');
    let cell_txt = |stat: Option<&CellStat>| match stat {
        Some(s) if s.count > 0 => format!("{:.1}", s.mean_pct),
        _ => "-".to_string(),
    };
    for dim in ALL_DIMENSIONS {
        let name = dimension_name(dim);
        let mut row = format!("{name:<13}");
        for tier in ALL_TIERS {
            let stat = report.by_cell.get(&format!("{}/{}", name, tier_name(tier)));
            row.push_str(&format!(" {:>8}", cell_txt(stat)));
        }
        row.push_str(&format!(" {:>8}", cell_txt(report.by_dimension.get(name))));
        out.push_str(&row);
        out.push('\n');
    }
    let mut totals = format!("{:<13}", "total");
    for tier in ALL_TIERS {
        totals.push_str(&format!(
            " {:>8}",
            cell_txt(report.by_tier.get(tier_name(tier)))
        ));
    }
    totals.push_str(&format!(" {:>8.1}", report.total_pct));
    out.push_str(&totals);
    out.push('\n');
    if !report.missing.is_empty() {
        out.push_str(&format!("missing responses: {}\n", report.missing.len()));
    }
    for note in &report.judge_notes {
        out.push_str(&format!("note: {note}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnswerSource, Evidence};
    use std::io::{Read as _, Write as _};
    use std::net::TcpListener;

    fn number_truth(v: f64, unit: Option<&str>) -> GroundTruth {
        GroundTruth {
            answer: CanonicalAnswer {
                answer_type: AnswerKind::Number,
                values: vec![AnswerValue::Number(v)],
                dates: Vec::new(),
                unit: unit.map(str::to_string),
                source: Some(AnswerSource::Device),
                evidence: vec![Evidence {
                    entity: "resting_heart_rate".into(),
                    window: [3, 3],
                }],
            },
            ranking_keys: Vec::new(),
            any_of: false,
            flags: Vec::new(),
        }
    }

    fn number_answer(v: f64, unit: Option<&str>, source: Option<AnswerSource>) -> CanonicalAnswer {
        CanonicalAnswer {
            answer_type: AnswerKind::Number,
            values: vec![AnswerValue::Number(v)],
            dates: Vec::new(),
            unit: unit.map(str::to_string),
            source,
            evidence: Vec::new(),
        }
    }

    fn set_truth(members: &[&str]) -> GroundTruth {
        GroundTruth {
            answer: CanonicalAnswer {
                answer_type: AnswerKind::Set,
                values: members
                    .iter()
                    .map(|m| AnswerValue::Text(m.to_string()))
                    .collect(),
                dates: Vec::new(),
                unit: None,
                source: Some(AnswerSource::Event),
                evidence: Vec::new(),
            },
            ranking_keys: Vec::new(),
            any_of: false,
            flags: Vec::new(),
        }
    }

    fn set_answer(members: &[&str]) -> CanonicalAnswer {
        CanonicalAnswer {
            answer_type: AnswerKind::Set,
            values: members
                .iter()
                .map(|m| AnswerValue::Text(m.to_string()))
                .collect(),
            dates: Vec::new(),
            unit: None,
            source: None,
            evidence: Vec::new(),
        }
    }

    fn query_with(truth: GroundTruth, id: &str, dimension: Dimension, tier: Tier) -> Query {
        Query {
            query_id: id.into(),
            dimension,
            tier,
            subtype: "device_value_on_date".into(),
            params: BTreeMap::new(),
            text: "What was the value?".into(),
            ground_truth: truth,
        }
    }

    #[test]
    fn gate_number_tolerance_examples() {
        // |100.9 - 100| = 0.9 <= max(0.01, 0.01*100) = 1.0
        let truth = number_truth(100.0, None);
        assert!(stage1_gate(
            &number_answer(100.9, None, None),
            &truth,
            EPS_ABS,
            EPS_REL
        ));
        // |0.52 - 0.5| = 0.02 > max(0.01, 0.005)
        let truth = number_truth(0.5, None);
        assert!(!stage1_gate(
            &number_answer(0.52, None, None),
            &truth,
            EPS_ABS,
            EPS_REL
        ));
        // Symmetric in error sign.
        let truth = number_truth(100.0, None);
        assert!(stage1_gate(
            &number_answer(99.1, None, None),
            &truth,
            EPS_ABS,
            EPS_REL
        ));
        assert!(!stage1_gate(
            &number_answer(98.9, None, None),
            &truth,
            EPS_ABS,
            EPS_REL
        ));
    }

    #[test]
    fn gate_set_requires_exact_match() {
        let truth = set_truth(&["evt-a", "evt-b"]);
        assert!(!stage1_gate(&set_answer(&["evt-a"]), &truth, EPS_ABS, EPS_REL));
        assert!(stage1_gate(
            &set_answer(&["evt-b", "evt-a"]),
            &truth,
            EPS_ABS,
            EPS_REL
        ));
        assert!(!stage1_gate(
            &set_answer(&["evt-a", "evt-b", "evt-c"]),
            &truth,
            EPS_ABS,
            EPS_REL
        ));
        // Empty truth sets demand empty submissions.
        let empty = set_truth(&[]);
        assert!(stage1_gate(&set_answer(&[]), &empty, EPS_ABS, EPS_REL));
        assert!(!stage1_gate(&set_answer(&["x"]), &empty, EPS_ABS, EPS_REL));
    }

    #[test]
    fn gate_any_of_takes_exactly_one_member() {
        let mut truth = GroundTruth {
            answer: CanonicalAnswer {
                answer_type: AnswerKind::String,
                values: vec![
                    AnswerValue::Text("evt-a".into()),
                    AnswerValue::Text("evt-b".into()),
                ],
                dates: Vec::new(),
                unit: None,
                source: Some(AnswerSource::Event),
                evidence: Vec::new(),
            },
            ranking_keys: Vec::new(),
            any_of: true,
            flags: Vec::new(),
        };
        let one = |name: &str| CanonicalAnswer {
            answer_type: AnswerKind::String,
            values: vec![AnswerValue::Text(name.into())],
            dates: Vec::new(),
            unit: None,
            source: None,
            evidence: Vec::new(),
        };
        assert!(stage1_gate(&one("evt-a"), &truth, EPS_ABS, EPS_REL));
        assert!(stage1_gate(&one("evt-b"), &truth, EPS_ABS, EPS_REL));
        assert!(!stage1_gate(&one("evt-c"), &truth, EPS_ABS, EPS_REL));
        // Submitting the whole tying set is not a singular answer.
        let both = CanonicalAnswer {
            answer_type: AnswerKind::String,
            values: vec![
                AnswerValue::Text("evt-a".into()),
                AnswerValue::Text("evt-b".into()),
            ],
            dates: Vec::new(),
            unit: None,
            source: None,
            evidence: Vec::new(),
        };
        assert!(!stage1_gate(&both, &truth, EPS_ABS, EPS_REL));

        // Without the tying marker the full vector must match.
        truth.any_of = false;
        assert!(stage1_gate(&both, &truth, EPS_ABS, EPS_REL));
        assert!(!stage1_gate(&one("evt-a"), &truth, EPS_ABS, EPS_REL));
    }

    #[test]
    fn gate_dates_and_ranked_lists() {
        let date_truth = GroundTruth {
            answer: CanonicalAnswer {
                answer_type: AnswerKind::Date,
                values: Vec::new(),
                dates: vec!["2024-03-01".into()],
                unit: None,
                source: Some(AnswerSource::Device),
                evidence: Vec::new(),
            },
            ranking_keys: Vec::new(),
            any_of: false,
            flags: Vec::new(),
        };
        let date_answer = |d: &str| CanonicalAnswer {
            answer_type: AnswerKind::Date,
            values: Vec::new(),
            dates: vec![d.into()],
            unit: None,
            source: None,
            evidence: Vec::new(),
        };
        assert!(stage1_gate(&date_answer("2024-03-01"), &date_truth, EPS_ABS, EPS_REL));
        assert!(!stage1_gate(&date_answer("2024-03-02"), &date_truth, EPS_ABS, EPS_REL));

        let ranked = |items: &[&str]| CanonicalAnswer {
            answer_type: AnswerKind::RankedList,
            values: items.iter().map(|i| AnswerValue::Text(i.to_string())).collect(),
            dates: Vec::new(),
            unit: None,
            source: None,
            evidence: Vec::new(),
        };
        let truth = GroundTruth {
            answer: CanonicalAnswer {
                answer_type: AnswerKind::RankedList,
                values: vec![
                    AnswerValue::Text("evt-big".into()),
                    AnswerValue::Text("evt-small".into()),
                ],
                dates: Vec::new(),
                unit: None,
                source: Some(AnswerSource::Derived),
                evidence: Vec::new(),
            },
            ranking_keys: vec![30.0, 10.0],
            any_of: false,
            flags: Vec::new(),
        };
        assert!(stage1_gate(&ranked(&["evt-big", "evt-small"]), &truth, EPS_ABS, EPS_REL));
        assert!(!stage1_gate(&ranked(&["evt-small", "evt-big"]), &truth, EPS_ABS, EPS_REL));
        assert!(!stage1_gate(&ranked(&["evt-big"]), &truth, EPS_ABS, EPS_REL));

        // Items tied on the key can swap places.
        let tied = GroundTruth {
            ranking_keys: vec![10.0, 10.0, 4.0],
            answer: CanonicalAnswer {
                answer_type: AnswerKind::RankedList,
                values: vec![
                    AnswerValue::Text("a".into()),
                    AnswerValue::Text("b".into()),
                    AnswerValue::Text("c".into()),
                ],
                dates: Vec::new(),
                unit: None,
                source: Some(AnswerSource::Derived),
                evidence: Vec::new(),
            },
            any_of: false,
            flags: Vec::new(),
        };
        assert!(stage1_gate(&ranked(&["b", "a", "c"]), &tied, EPS_ABS, EPS_REL));
        assert!(!stage1_gate(&ranked(&["a", "c", "b"]), &tied, EPS_ABS, EPS_REL));
        assert!(!stage1_gate(&ranked(&["a", "a", "c"]), &tied, EPS_ABS, EPS_REL));
    }

    #[test]
    fn gate_rejects_type_mismatch_without_error() {
        let truth = number_truth(5.0, None);
        let wrong = set_answer(&["5"]);
        assert!(!stage1_gate(&wrong, &truth, EPS_ABS, EPS_REL));
    }

    #[test]
    fn parser_accepts_canonical_number() {
        let parsed = parse_response(
            r#"{"answer_type":"number","values":[62.0],"unit":"/min","source":"device"}"#,
        )
        .unwrap();
        assert_eq!(parsed.answer.values[0].as_number(), Some(62.0));
        assert_eq!(parsed.answer.unit.as_deref(), Some("/min"));
        assert!(parsed.flags.is_empty());
    }

    #[test]
    fn parser_rejects_malformed_answers() {
        assert!(parse_response(r#"{"answer_type":"number"}"#).is_err());
        assert!(parse_response(r#"{"answer_type":"number","values":["high"]}"#).is_err());
        assert!(parse_response(r#"{"answer_type":"date","dates":["March 1"]}"#).is_err());
        assert!(parse_response(r#"{"answer_type":"number","values":[1.0],"bogus":true}"#).is_err());
        assert!(parse_response("not json").is_err());
    }

    #[test]
    fn parser_dedups_sets_and_flags_it() {
        let parsed =
            parse_response(r#"{"answer_type":"set","values":["a","b","a"]}"#).unwrap();
        assert_eq!(texts(&parsed.answer.values), vec!["a", "b"]);
        assert_eq!(parsed.flags, vec!["duplicates_removed".to_string()]);
    }

    #[test]
    fn deterministic_judge_scores_fidelity() {
        let truth = number_truth(62.0, Some("/min"));
        let query = query_with(truth, "q1", Dimension::Lookup, Tier::Easy);
        let mut judge = DeterministicJudge;

        let full = number_answer(62.0, Some("/min"), Some(AnswerSource::Device));
        assert_eq!(judge.score(&query, &full).unwrap(), 2.0);

        let wrong_unit = number_answer(62.0, Some("bpm"), Some(AnswerSource::Device));
        assert_eq!(judge.score(&query, &wrong_unit).unwrap(), 1.0);

        let no_source = number_answer(62.0, Some("/min"), None);
        assert_eq!(judge.score(&query, &no_source).unwrap(), 1.0);

        let off_value = number_answer(80.0, Some("/min"), Some(AnswerSource::Device));
        assert_eq!(judge.score(&query, &off_value).unwrap(), 0.0);
    }

    #[test]
    fn final_score_is_gated_and_monotone() {
        assert_eq!(final_score(false, 2.0), 0.0);
        assert_eq!(final_score(true, 2.0), 1.0);
        assert_eq!(final_score(true, 0.0), 0.0);
        let mut last = -1.0;
        for step in 0..=20 {
            let rubric = step as f64 / 10.0;
            let s = final_score(true, rubric);
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn report_recombines_exactly_and_counts_missing() {
        let mut queries = Vec::new();
        let mut responses = BTreeMap::new();
        // Ten queries spread over dimensions; five answered perfectly, five
        // left unanswered.
        for (i, dim) in ALL_DIMENSIONS.iter().cycle().take(10).enumerate() {
            let truth = number_truth(10.0 + i as f64, Some("u"));
            let tier = ALL_TIERS[i % 3];
            let id = format!("q{i:03}");
            if i % 2 == 0 {
                responses.insert(
                    id.clone(),
                    serde_json::json!({
                        "answer_type": "number",
                        "values": [10.0 + i as f64],
                        "unit": "u",
                        "source": "device",
                    }),
                );
            }
            queries.push(query_with(truth, &id, *dim, tier));
        }
        let mut judge = DeterministicJudge;
        let report = score_queries(&queries, &responses, &mut judge);
        assert_eq!(report.total_pct, 50.0);
        assert_eq!(report.missing.len(), 5);

        let dim_sum: f64 = report.by_dimension.values().map(|c| c.sum).sum();
        let tier_sum: f64 = report.by_tier.values().map(|c| c.sum).sum();
        let n = report.scores.len() as f64;
        assert_eq!(100.0 * dim_sum / n, report.total_pct);
        assert_eq!(100.0 * tier_sum / n, report.total_pct);
        let counts: usize = report.by_dimension.values().map(|c| c.count).sum();
        assert_eq!(counts, queries.len());

        let table = render_text_table(&report);
        assert!(table.contains("total"));
        assert!(table.contains("50.0"));
        assert!(table.contains("missing responses: 5"));
    }

    #[test]
    fn empty_responses_score_zero_and_perfect_score_hundred() {
        let queries: Vec<Query> = (0..4)
            .map(|i| {
                query_with(
                    number_truth(i as f64, None),
                    &format!("q{i}"),
                    Dimension::Trend,
                    Tier::Medium,
                )
            })
            .collect();
        let mut judge = DeterministicJudge;
        let empty = score_queries(&queries, &BTreeMap::new(), &mut judge);
        assert_eq!(empty.total_pct, 0.0);

        let responses: BTreeMap<String, Value> = queries
            .iter()
            .map(|q| {
                let v = q.ground_truth.answer.values[0].as_number().unwrap();
                (
                    q.query_id.clone(),
                    serde_json::json!({
                        "answer_type": "number",
                        "values": [v],
                        "source": "device",
                    }),
                )
            })
            .collect();
        let mut judge = DeterministicJudge;
        let perfect = score_queries(&queries, &responses, &mut judge);
        assert_eq!(perfect.total_pct, 100.0);
    }

    #[test]
    fn gated_out_responses_never_reach_the_judge() {
        struct PanickyJudge;
        impl RubricJudge for PanickyJudge {
            fn score(&mut self, _: &Query, _: &CanonicalAnswer) -> Result<f64, Error> {
                panic!("judge called on a gated-out response");
            }
        }
        let queries = vec![query_with(
            number_truth(5.0, None),
            "q0",
            Dimension::Anomaly,
            Tier::Hard,
        )];
        let mut responses = BTreeMap::new();
        responses.insert(
            "q0".to_string(),
            serde_json::json!({"answer_type": "number", "values": [50.0]}),
        );
        let mut judge = PanickyJudge;
        let report = score_queries(&queries, &responses, &mut judge);
        assert_eq!(report.total_pct, 0.0);
        assert!(!report.scores[0].gate);
    }

    fn one_shot_judge_server(status_line: &'static str, body: &'static str) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            if let Ok((mut stream, _)) = listener.accept() {
                let mut buf = [0u8; 4096];
                let _ = stream.read(&mut buf);
                let reply = format!(
                    "{status_line}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        format!("http://{addr}/judge")
    }

    #[test]
    fn http_judge_uses_endpoint_score() {
        let url = one_shot_judge_server("HTTP/1.1 200 OK", r#"{"score": 1.5}"#);
        let truth = number_truth(62.0, Some("/min"));
        let query = query_with(truth, "q1", Dimension::Lookup, Tier::Easy);
        let response = number_answer(62.0, Some("/min"), Some(AnswerSource::Device));
        let mut judge = HttpJudge::new(url);
        assert_eq!(judge.score(&query, &response).unwrap(), 1.5);
        assert!(judge.take_notes().is_empty());
    }

    #[test]
    fn http_judge_falls_back_when_endpoint_is_unreachable() {
        // Bind then drop a listener so the port is closed.
        let addr = {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            listener.local_addr().unwrap()
        };
        let truth = number_truth(62.0, Some("/min"));
        let query = query_with(truth, "q1", Dimension::Lookup, Tier::Easy);
        let response = number_answer(62.0, Some("/min"), Some(AnswerSource::Device));
        let mut judge = HttpJudge::new(format!("http://{addr}/judge"));
        // Deterministic fallback sees full fidelity.
        assert_eq!(judge.score(&query, &response).unwrap(), 2.0);
        let notes = judge.take_notes();
        assert_eq!(notes.len(), 1);
        assert!(notes[0].contains("q1"));
    }

    #[test]
    fn http_judge_clamps_out_of_range_scores() {
        let url = one_shot_judge_server("HTTP/1.1 200 OK", r#"{"score": 7.0}"#);
        let truth = number_truth(62.0, None);
        let query = query_with(truth, "q1", Dimension::Lookup, Tier::Easy);
        let response = number_answer(62.0, None, None);
        let mut judge = HttpJudge::new(url);
        assert_eq!(judge.score(&query, &response).unwrap(), 2.0);
    }
}
