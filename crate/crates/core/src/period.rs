//! Calendar periods. A period is a half-open date range `[start, end)`.

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Period {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Period {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end <= start {
            return Err(Error::invalid(format!("empty period {start}..{end}")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date < self.end
    }

    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days()
    }

    pub fn overlaps(&self, other: &Period) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// The `days`-long window ending with `last` (inclusive).
    pub fn trailing(last: NaiveDate, days: u32) -> Self {
        let end = last.succ_opt().expect("date in range");
        Self {
            start: end - chrono::Duration::days(i64::from(days)),
            end,
        }
    }
}

impl std::fmt::Display for Period {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// Consecutive `months`-long periods anchored at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodScheme {
    pub start: NaiveDate,
    pub months: u32,
}

impl PeriodScheme {
    pub fn new(start: NaiveDate, months: u32) -> Result<Self> {
        if months == 0 {
            return Err(Error::Config("period length must be at least one month".into()));
        }
        Ok(Self { start, months })
    }

    /// Anchors the scheme at the first day of the month of `earliest`.
    pub fn aligned_to(earliest: NaiveDate, months: u32) -> Result<Self> {
        let start = earliest.with_day(1).expect("day 1 exists");
        Self::new(start, months)
    }

    fn boundary(&self, index: i64) -> NaiveDate {
        let span = Months::new(self.months * index.unsigned_abs() as u32);
        if index >= 0 {
            self.start.checked_add_months(span)
        } else {
            self.start.checked_sub_months(span)
        }
        .expect("period boundary in range")
    }

    pub fn period(&self, index: i64) -> Period {
        Period {
            start: self.boundary(index),
            end: self.boundary(index + 1),
        }
    }

    pub fn index_of(&self, date: NaiveDate) -> i64 {
        let months = i64::from(date.year() - self.start.year()) * 12
            + i64::from(date.month()) - i64::from(self.start.month());
        let mut idx = months.div_euclid(i64::from(self.months));
        while self.boundary(idx) > date {
            idx -= 1;
        }
        while self.boundary(idx + 1) <= date {
            idx += 1;
        }
        idx
    }

    pub fn period_of(&self, date: NaiveDate) -> Period {
        self.period(self.index_of(date))
    }

    /// All periods touching `[first, last]`, in order.
    pub fn covering(&self, first: NaiveDate, last: NaiveDate) -> Vec<Period> {
        (self.index_of(first)..=self.index_of(last))
            .map(|i| self.period(i))
            .collect()
    }

    pub fn is_aligned(&self, period: &Period) -> bool {
        self.period_of(period.start) == *period
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn fifteen_months_make_five_quarters() {
        let scheme = PeriodScheme::new(d(2022, 8, 1), 3).unwrap();
        let periods = scheme.covering(d(2022, 8, 1), d(2023, 10, 31));
        assert_eq!(periods.len(), 5);
        assert_eq!(periods[1], Period::new(d(2022, 11, 1), d(2023, 2, 1)).unwrap());
    }

    #[test]
    fn boundary_date_belongs_to_the_later_period() {
        let scheme = PeriodScheme::new(d(2023, 8, 1), 3).unwrap();
        assert_eq!(scheme.period_of(d(2023, 11, 1)).start, d(2023, 11, 1));
        assert_eq!(scheme.period_of(d(2023, 10, 31)).start, d(2023, 8, 1));
        assert_eq!(scheme.period_of(d(2023, 7, 31)).start, d(2023, 5, 1));
    }

    #[test]
    fn unaligned_anchor() {
        let scheme = PeriodScheme::new(d(2023, 1, 31), 1).unwrap();
        let p = scheme.period_of(d(2023, 3, 1));
        assert!(p.contains(d(2023, 3, 1)));
        assert!(scheme.is_aligned(&p));
    }

    #[test]
    fn trailing_window() {
        let w = Period::trailing(d(2024, 1, 30), 7);
        assert_eq!(w.days(), 7);
        assert_eq!(w.start, d(2024, 1, 24));
        assert!(w.contains(d(2024, 1, 30)));
    }
}
