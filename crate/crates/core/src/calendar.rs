//! Mapping between wall-clock instants and study nights.
//!
//! All timestamps are study-local wall-clock times. Night `d` (1-based) opens
//! at `day_start` on `start_date + (d - 1)` and closes at `day_cutoff` the
//! following morning.

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};

use crate::config::StudyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudyCalendar {
    pub start_date: NaiveDate,
    pub day_start: NaiveTime,
    pub day_cutoff: NaiveTime,
    pub total_days: u32,
    pub validity_window_days: u32,
}

impl StudyCalendar {
    pub fn from_config(cfg: &StudyConfig) -> Self {
        StudyCalendar {
            start_date: cfg.start_date,
            day_start: cfg.day_start,
            day_cutoff: cfg.day_cutoff,
            total_days: cfg.total_days,
            validity_window_days: cfg.validity_window_days,
        }
    }

    pub fn night_date(&self, day: u32) -> NaiveDate {
        self.start_date + Duration::days(i64::from(day) - 1)
    }

    /// Half-open `[open, close)` window of night `day`.
    pub fn night_window(&self, day: u32) -> (NaiveDateTime, NaiveDateTime) {
        let date = self.night_date(day);
        let open = date.and_time(self.day_start);
        let close = (date + Duration::days(1)).and_time(self.day_cutoff);
        (open, close)
    }

    /// Last instant (exclusive) at which an entry for `day` is still valid.
    pub fn late_deadline(&self, day: u32) -> NaiveDateTime {
        self.night_window(day).1 + Duration::days(i64::from(self.validity_window_days))
    }

    /// The most recent night that had opened by `ts`, if it is a study night.
    ///
    /// Times before `day_start` belong to the previous night, which covers
    /// both post-midnight entries and next-morning make-ups.
    pub fn intended_day(&self, ts: NaiveDateTime) -> Option<u32> {
        let mut date = ts.date();
        if ts.time() < self.day_start {
            date -= Duration::days(1);
        }
        let offset = (date - self.start_date).num_days();
        if offset < 0 || offset >= i64::from(self.total_days) {
            return None;
        }
        Some(offset as u32 + 1)
    }

    /// The night whose window contains `ts`, if any.
    pub fn night_containing(&self, ts: NaiveDateTime) -> Option<u32> {
        let day = self.intended_day(ts)?;
        let (open, close) = self.night_window(day);
        (ts >= open && ts < close).then_some(day)
    }

    /// Instant on night `day` at which the experimenter checks for an entry.
    pub fn check_instant(&self, day: u32, check_time: NaiveTime) -> NaiveDateTime {
        let date = self.night_date(day);
        if check_time >= self.day_start {
            date.and_time(check_time)
        } else {
            (date + Duration::days(1)).and_time(check_time)
        }
    }

    pub fn days(&self) -> impl Iterator<Item = u32> {
        1..=self.total_days
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cal() -> StudyCalendar {
        StudyCalendar::from_config(&StudyConfig::default())
    }

    fn at(y: i32, m: u32, d: u32, h: u32, min: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d)
            .unwrap()
            .and_hms_opt(h, min, 0)
            .unwrap()
    }

    #[test]
    fn evening_and_post_midnight_map_to_same_night() {
        let c = cal();
        // start_date 2024-06-03
        assert_eq!(c.intended_day(at(2024, 6, 3, 21, 30)), Some(1));
        assert_eq!(c.intended_day(at(2024, 6, 4, 1, 15)), Some(1));
        assert_eq!(c.night_containing(at(2024, 6, 4, 1, 15)), Some(1));
    }

    #[test]
    fn next_morning_is_outside_window_but_intends_previous_night() {
        let c = cal();
        let ts = at(2024, 6, 4, 10, 0);
        assert_eq!(c.intended_day(ts), Some(1));
        assert_eq!(c.night_containing(ts), None);
        assert!(ts < c.late_deadline(1));
    }

    #[test]
    fn outside_study_span() {
        let c = cal();
        assert_eq!(c.intended_day(at(2024, 6, 3, 9, 0)), None);
        assert_eq!(c.intended_day(at(2024, 6, 10, 20, 0)), None);
        assert_eq!(c.intended_day(at(2024, 6, 10, 9, 0)), Some(7));
    }

    #[test]
    fn check_instant_after_midnight_rolls_date() {
        let c = cal();
        let t = NaiveTime::from_hms_opt(0, 30, 0).unwrap();
        assert_eq!(c.check_instant(2, t), at(2024, 6, 5, 0, 30));
        let t = NaiveTime::from_hms_opt(21, 0, 0).unwrap();
        assert_eq!(c.check_instant(2, t), at(2024, 6, 4, 21, 0));
    }
}
