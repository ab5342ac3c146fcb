use chrono::{Datelike, Duration, NaiveDate};

use crate::error::Error;

/// Maps integer day indices (0..horizon) onto calendar dates. The simulation
/// core works purely in day indices; dates only appear at the edges (weekday
/// and season effects, rendered query text, exported plans).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Calendar {
    epoch: NaiveDate,
}

impl Calendar {
    pub fn new(epoch: NaiveDate) -> Self {
        Calendar { epoch }
    }

    pub fn parse(epoch: &str) -> Result<Self, Error> {
        let date = NaiveDate::parse_from_str(epoch, "%Y-%m-%d")
            .map_err(|e| Error::InvalidConfig(format!("bad epoch date {epoch:?}: {e}")))?;
        Ok(Calendar { epoch: date })
    }

    pub fn epoch(&self) -> NaiveDate {
        self.epoch
    }

    pub fn date(&self, day: i64) -> NaiveDate {
        self.epoch + Duration::days(day)
    }

    /// ISO-8601 date string for a day index.
    pub fn date_str(&self, day: i64) -> String {
        self.date(day).format("%Y-%m-%d").to_string()
    }

    /// Day index for a date, negative if before the epoch.
    pub fn day_of(&self, date: NaiveDate) -> i64 {
        (date - self.epoch).num_days()
    }

    /// Weekday as 0 = Monday .. 6 = Sunday.
    pub fn weekday(&self, day: i64) -> usize {
        self.date(day).weekday().num_days_from_monday() as usize
    }

    /// Day of year, 1-based (1..=366).
    pub fn day_of_year(&self, day: i64) -> u32 {
        self.date(day).ordinal()
    }

    /// Calendar month label, e.g. "2024-03".
    pub fn month_label(&self, day: i64) -> String {
        self.date(day).format("%Y-%m").to_string()
    }

    /// (year, month) pair used to group days into calendar months.
    pub fn year_month(&self, day: i64) -> (i32, u32) {
        let d = self.date(day);
        (d.year(), d.month())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dates_and_weekdays_line_up() {
        // 2023-01-02 was a Monday.
        let cal = Calendar::parse("2023-01-02").unwrap();
        assert_eq!(cal.weekday(0), 0);
        assert_eq!(cal.weekday(6), 6);
        assert_eq!(cal.weekday(7), 0);
        assert_eq!(cal.date_str(0), "2023-01-02");
        assert_eq!(cal.date_str(364), "2024-01-01");
        assert_eq!(cal.month_label(30), "2023-02");
    }

    #[test]
    fn day_of_round_trips() {
        let cal = Calendar::parse("2023-01-02").unwrap();
        for day in [0, 1, 59, 365, 1812] {
            assert_eq!(cal.day_of(cal.date(day)), day);
        }
    }

    #[test]
    fn bad_epoch_is_a_config_error() {
        assert!(Calendar::parse("not-a-date").is_err());
        assert!(Calendar::parse("2023-13-40").is_err());
    }
}
