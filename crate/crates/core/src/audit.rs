use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{AbsenceCode, DayPoint, DeviceSeries};

/// Length of the rolling audit windows, in days.
pub const AUDIT_WINDOW_DAYS: i64 = 90;

/// Tallies over indicator-days. Violation and clip counts refer to the
/// pre-projection proposal, so a fully healthy run has zeros there even
/// though projection would have caught anything that slipped through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditCounts {
    pub indicator_days: u64,
    pub observed: u64,
    pub absent: u64,
    pub range_violations: u64,
    pub slope_violations: u64,
    pub clipped: u64,
}

impl AuditCounts {
    pub fn note(&mut self, point: &DayPoint) {
        self.indicator_days += 1;
        if point.value.is_some() {
            self.observed += 1;
        } else {
            self.absent += 1;
        }
        if point.flags.range_violated {
            self.range_violations += 1;
        }
        if point.flags.slope_violated {
            self.slope_violations += 1;
        }
        if point.flags.clipped {
            self.clipped += 1;
        }
    }

    pub fn add(&mut self, other: &AuditCounts) {
        self.indicator_days += other.indicator_days;
        self.observed += other.observed;
        self.absent += other.absent;
        self.range_violations += other.range_violations;
        self.slope_violations += other.slope_violations;
        self.clipped += other.clipped;
    }

    pub fn coverage(&self) -> f64 {
        if self.indicator_days == 0 {
            return 1.0;
        }
        self.observed as f64 / self.indicator_days as f64
    }

    fn rate(&self, count: u64) -> f64 {
        if self.indicator_days == 0 {
            return 0.0;
        }
        count as f64 / self.indicator_days as f64
    }

    pub fn range_violation_rate(&self) -> f64 {
        self.rate(self.range_violations)
    }

    pub fn slope_violation_rate(&self) -> f64 {
        self.rate(self.slope_violations)
    }

    pub fn clip_rate(&self) -> f64 {
        self.rate(self.clipped)
    }
}

/// One fixed 90-day slice of the horizon (the last slice may be shorter).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSlice {
    pub start_day: i64,
    /// Exclusive.
    pub end_day: i64,
    pub counts: AuditCounts,
}

/// Quality report for one user bundle. The three count views (totals,
/// per-indicator, windows) tally the same indicator-days, so each view sums
/// exactly to the totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditReport {
    pub totals: AuditCounts,
    pub coverage: f64,
    pub range_violation_rate: f64,
    pub slope_violation_rate: f64,
    pub clip_rate: f64,
    pub per_indicator: BTreeMap<String, AuditCounts>,
    pub windows: Vec<WindowSlice>,
    pub absence_by_code: BTreeMap<String, u64>,
}

fn code_key(code: AbsenceCode) -> &'static str {
    match code {
        AbsenceCode::DeviceNotWorn => "device_not_worn",
        AbsenceCode::SensorError => "sensor_error",
        AbsenceCode::ScheduledGap => "scheduled_gap",
    }
}

impl AuditReport {
    pub fn from_device(device: &BTreeMap<String, DeviceSeries>, horizon_days: i64) -> AuditReport {
        let mut totals = AuditCounts::default();
        let mut per_indicator = BTreeMap::new();
        let mut absence_by_code = BTreeMap::new();
        let mut windows: Vec<WindowSlice> = (0..horizon_days.max(0))
            .step_by(AUDIT_WINDOW_DAYS as usize)
            .map(|start| WindowSlice {
                start_day: start,
                end_day: (start + AUDIT_WINDOW_DAYS).min(horizon_days),
                counts: AuditCounts::default(),
            })
            .collect();

        for (key, series) in device {
            let slot = per_indicator
                .entry(key.clone())
                .or_insert_with(AuditCounts::default);
            for (day, point) in series.values.iter().enumerate() {
                totals.note(point);
                slot.note(point);
                if let Some(w) = windows.get_mut(day / AUDIT_WINDOW_DAYS as usize) {
                    w.counts.note(point);
                }
                if let Some(code) = point.absence {
                    *absence_by_code.entry(code_key(code).to_string()).or_insert(0) += 1;
                }
            }
        }

        AuditReport {
            coverage: totals.coverage(),
            range_violation_rate: totals.range_violation_rate(),
            slope_violation_rate: totals.slope_violation_rate(),
            clip_rate: totals.clip_rate(),
            totals,
            per_indicator,
            windows,
            absence_by_code,
        }
    }

    /// Exact count equality; derived rates are recomputed, not compared.
    pub fn counts_match(&self, other: &AuditReport) -> bool {
        self.totals == other.totals
            && self.per_indicator == other.per_indicator
            && self.windows == other.windows
            && self.absence_by_code == other.absence_by_code
    }

    /// Checks that per-indicator and window slices each sum back to totals.
    pub fn slices_consistent(&self) -> bool {
        let mut by_ind = AuditCounts::default();
        for counts in self.per_indicator.values() {
            by_ind.add(counts);
        }
        let mut by_win = AuditCounts::default();
        for w in &self.windows {
            by_win.add(&w.counts);
        }
        let absent_sum: u64 = self.absence_by_code.values().sum();
        by_ind == self.totals && by_win == self.totals && absent_sum == self.totals.absent
    }
}

/// Cohort-level rollup of per-user reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortAudit {
    pub users: u32,
    pub totals: AuditCounts,
    pub coverage: f64,
    pub range_violation_rate: f64,
    pub slope_violation_rate: f64,
    pub clip_rate: f64,
    pub per_indicator: BTreeMap<String, AuditCounts>,
}

impl CohortAudit {
    pub fn merge<'a>(reports: impl IntoIterator<Item = &'a AuditReport>) -> CohortAudit {
        let mut users = 0;
        let mut totals = AuditCounts::default();
        let mut per_indicator: BTreeMap<String, AuditCounts> = BTreeMap::new();
        for report in reports {
            users += 1;
            totals.add(&report.totals);
            for (key, counts) in &report.per_indicator {
                per_indicator.entry(key.clone()).or_default().add(counts);
            }
        }
        CohortAudit {
            users,
            coverage: totals.coverage(),
            range_violation_rate: totals.range_violation_rate(),
            slope_violation_rate: totals.slope_violation_rate(),
            clip_rate: totals.clip_rate(),
            totals,
            per_indicator,
        }
    }
}
