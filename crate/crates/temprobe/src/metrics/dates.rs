//! Fuzzy date extraction from model answers.
//!
//! Models asked for "DD-MM-YYYY" reply with anything from "14-11-1972." to
//! "The event you're referring to is the establishment of Reykjavík, which
//! occurred on 18 August 1786". This parser scans the whole answer for date
//! mentions and keeps the leftmost one that survives calendar validation, so
//! prose prefixes and parenthetical restatements don't matter. Ambiguous
//! all-numeric dates ("11-10-2020") are resolved by the format hint, falling
//! back to the other order when the hinted one is impossible.
//!
//! Recognized shapes, roughly in the order models produce them: ISO
//! "2011-11-04", month-name dates in either order with optional ordinals
//! ("2nd December 1959", "Jan 9, 2021", "12-December-1957"), bare month-year
//! and year mentions, numeric triples with "-", "/", "." or space, and
//! undelimited 6 or 8 digit runs. 8 digit runs are read as YYYYMMDD when that
//! yields a calendar-valid date with a plausible year, otherwise by the hint;
//! 6 digit runs complete their 2-digit year to 20xx. Two-digit years are never
//! accepted outside those compact forms.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::{YEAR_MAX, YEAR_MIN};

/// How much of the date a comparison cares about.
///
/// Ordered coarse to fine, so `g >= Month` reads as "month matters".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Year,
    Month,
    Day,
}

impl Granularity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Granularity::Year => "year",
            Granularity::Month => "month",
            Granularity::Day => "day",
        }
    }

    /// The answer format the dating prompt requests at this granularity.
    pub fn prompt_format(&self) -> &'static str {
        match self {
            Granularity::Year => "YYYY",
            Granularity::Month => "MM-YYYY",
            Granularity::Day => "DD-MM-YYYY",
        }
    }
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reading order for ambiguous numeric dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatHint {
    DayFirst,
    MonthFirst,
}

/// A date extracted from free text. Month and day stay `None` when the text
/// did not mention them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedDate {
    pub year: i32,
    pub month: Option<u32>,
    pub day: Option<u32>,
    /// True when a missing day was filled in as the 1st of the month.
    pub completion_applied: bool,
}

/// Days in a calendar month, Gregorian leap rules.
pub fn days_in_month(year: i32, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 => {
            let leap = year % 4 == 0 && (year % 100 != 0 || year % 400 == 0);
            if leap {
                29
            } else {
                28
            }
        }
        _ => 0,
    }
}

fn valid_year(y: i32) -> bool {
    (YEAR_MIN..=YEAR_MAX).contains(&y)
}

fn valid_ymd(y: i32, m: u32, d: u32) -> bool {
    valid_year(y) && (1..=12).contains(&m) && d >= 1 && d <= days_in_month(y, m)
}

/// Orders two ambiguous numbers into (month, day), trying the hint first.
fn resolve_pair(a: u32, b: u32, year: i32, hint: FormatHint) -> Option<(u32, u32)> {
    let (first, second) = match hint {
        FormatHint::DayFirst => ((b, a), (a, b)),
        FormatHint::MonthFirst => ((a, b), (b, a)),
    };
    for (m, d) in [first, second] {
        if valid_ymd(year, m, d) {
            return Some((m, d));
        }
    }
    None
}

const MONTHS: &str = "january|february|march|april|may|june|july|august|september|october|\
november|december|jan|feb|mar|apr|jun|jul|aug|sept|sep|oct|nov|dec";

fn month_num(name: &str) -> u32 {
    let lower = name.to_lowercase();
    match &lower[..3] {
        "jan" => 1,
        "feb" => 2,
        "mar" => 3,
        "apr" => 4,
        "may" => 5,
        "jun" => 6,
        "jul" => 7,
        "aug" => 8,
        "sep" => 9,
        "oct" => 10,
        "nov" => 11,
        _ => 12,
    }
}

macro_rules! date_re {
    ($name:ident, $re:expr) => {
        static $name: LazyLock<Regex> = LazyLock::new(|| Regex::new($re).unwrap());
    };
}

date_re!(ISO_RE, r"\b([0-9]{4})-([0-9]{1,2})-([0-9]{1,2})\b");
date_re!(
    NAME_DMY_RE,
    &format!(r"(?i)\b([0-9]{{1,2}})(?:st|nd|rd|th)?(?: +of)? +({MONTHS})\b\.?,? *([0-9]{{4}})\b")
);
date_re!(
    NAME_MDY_RE,
    &format!(r"(?i)\b({MONTHS})\b\.?,? +([0-9]{{1,2}})(?:st|nd|rd|th)?,? +([0-9]{{4}})\b")
);
date_re!(NAME_HYPHEN_RE, &format!(r"(?i)\b([0-9]{{1,2}})-({MONTHS})-([0-9]{{4}})\b"));
date_re!(
    NUMERIC_RE,
    r"\b([0-9]{1,2})([-/. ])([0-9]{1,2})([-/. ])([0-9]{4})\b"
);
date_re!(NAME_MY_RE, &format!(r"(?i)\b({MONTHS})\b\.?,? +([0-9]{{4}})\b"));
date_re!(COMPACT_RE, r"\b([0-9]{6}|[0-9]{8})\b");
date_re!(YEAR_ONLY_RE, r"\b([0-9]{4})\b");

type Raw = (i32, Option<u32>, Option<u32>);

/// Extracts the first parseable date mention from `text`.
///
/// Candidates are ranked by start offset, then by pattern specificity at the
/// same offset, and the first one that validates wins. `granularity` only
/// controls day completion: a month-year mention at day granularity becomes
/// the 1st of that month, flagged via `completion_applied`. Returns `None`
/// when nothing in the text parses as a date.
pub fn parse_date(text: &str, hint: FormatHint, granularity: Granularity) -> Option<ParsedDate> {
    let mut best: Option<(usize, u8, Raw)> = None;
    let mut consider = |start: usize, prio: u8, raw: Option<Raw>| {
        if let Some(raw) = raw {
            if best.map_or(true, |(s, p, _)| (start, prio) < (s, p)) {
                best = Some((start, prio, raw));
            }
        }
    };

    for c in ISO_RE.captures_iter(text) {
        let (y, m, d): (i32, u32, u32) =
            (c[1].parse().unwrap(), c[2].parse().unwrap(), c[3].parse().unwrap());
        let raw = valid_ymd(y, m, d).then_some((y, Some(m), Some(d)));
        consider(c.get(0).unwrap().start(), 0, raw);
    }
    for c in NAME_MDY_RE.captures_iter(text) {
        let (y, m, d): (i32, u32, u32) =
            (c[3].parse().unwrap(), month_num(&c[1]), c[2].parse().unwrap());
        let raw = valid_ymd(y, m, d).then_some((y, Some(m), Some(d)));
        consider(c.get(0).unwrap().start(), 1, raw);
    }
    for c in NAME_DMY_RE.captures_iter(text) {
        let (y, m, d): (i32, u32, u32) =
            (c[3].parse().unwrap(), month_num(&c[2]), c[1].parse().unwrap());
        let raw = valid_ymd(y, m, d).then_some((y, Some(m), Some(d)));
        consider(c.get(0).unwrap().start(), 1, raw);
    }
    for c in NAME_HYPHEN_RE.captures_iter(text) {
        let (y, m, d): (i32, u32, u32) =
            (c[3].parse().unwrap(), month_num(&c[2]), c[1].parse().unwrap());
        let raw = valid_ymd(y, m, d).then_some((y, Some(m), Some(d)));
        consider(c.get(0).unwrap().start(), 1, raw);
    }
    for c in NUMERIC_RE.captures_iter(text) {
        let raw = if c[2] == c[4] {
            let (a, b, y): (u32, u32, i32) =
                (c[1].parse().unwrap(), c[3].parse().unwrap(), c[5].parse().unwrap());
            resolve_pair(a, b, y, hint).map(|(m, d)| (y, Some(m), Some(d)))
        } else {
            None
        };
        consider(c.get(0).unwrap().start(), 2, raw);
    }
    for c in NAME_MY_RE.captures_iter(text) {
        let (y, m): (i32, u32) = (c[2].parse().unwrap(), month_num(&c[1]));
        let raw = (valid_year(y) && (1..=12).contains(&m)).then_some((y, Some(m), None));
        consider(c.get(0).unwrap().start(), 3, raw);
    }
    for c in COMPACT_RE.captures_iter(text) {
        consider(c.get(0).unwrap().start(), 4, parse_compact(&c[1], hint));
    }
    for c in YEAR_ONLY_RE.captures_iter(text) {
        let y: i32 = c[1].parse().unwrap();
        consider(c.get(0).unwrap().start(), 5, valid_year(y).then_some((y, None, None)));
    }

    best.map(|(_, _, (year, month, day))| {
        let complete = granularity == Granularity::Day && month.is_some() && day.is_none();
        ParsedDate {
            year,
            month,
            day: if complete { Some(1) } else { day },
            completion_applied: complete,
        }
    })
}

fn parse_compact(digits: &str, hint: FormatHint) -> Option<Raw> {
    if digits.len() == 8 {
        let y: i32 = digits[..4].parse().unwrap();
        let m: u32 = digits[4..6].parse().unwrap();
        let d: u32 = digits[6..].parse().unwrap();
        if valid_ymd(y, m, d) {
            return Some((y, Some(m), Some(d)));
        }
        let a: u32 = digits[..2].parse().unwrap();
        let b: u32 = digits[2..4].parse().unwrap();
        let y: i32 = digits[4..].parse().unwrap();
        resolve_pair(a, b, y, hint).map(|(m, d)| (y, Some(m), Some(d)))
    } else {
        let a: u32 = digits[..2].parse().unwrap();
        let b: u32 = digits[2..4].parse().unwrap();
        let y: i32 = 2000 + digits[4..].parse::<i32>().unwrap();
        resolve_pair(a, b, y, hint).map(|(m, d)| (y, Some(m), Some(d)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use FormatHint::DayFirst;
    use Granularity::Day;

    // Answer shapes observed from real models, with the date each one should
    // yield under a day-first hint at day granularity. A None month/day means
    // the text does not carry that part; `true` marks day completion.
    const OBSERVED: &[(&str, (i32, Option<u32>, Option<u32>, bool))] = &[
        ("this is a full sentence July 18, 1956.", (1956, Some(7), Some(18), false)),
        ("October 19, 1763.", (1763, Some(10), Some(19), false)),
        ("March 24, 1935", (1935, Some(3), Some(24), false)),
        ("December 2019", (2019, Some(12), Some(1), true)),
        ("2019", (2019, None, None, false)),
        ("Dec, 2019", (2019, Some(12), Some(1), true)),
        ("September 27, 1941", (1941, Some(9), Some(27), false)),
        ("October 17, 1961 (10-10-1961)", (1961, Some(10), Some(17), false)),
        ("27 February 1977", (1977, Some(2), Some(27), false)),
        ("24 May 1899.", (1899, Some(5), Some(24), false)),
        ("2nd December 1959.", (1959, Some(12), Some(2), false)),
        ("10th of July, 1806.", (1806, Some(7), Some(10), false)),
        ("16th of October, 1756", (1756, Some(10), Some(16), false)),
        ("12-December-1957.", (1957, Some(12), Some(12), false)),
        ("01-01-1930.", (1930, Some(1), Some(1), false)),
        ("01-09-1950.", (1950, Some(9), Some(1), false)),
        ("14-11-1972.", (1972, Some(11), Some(14), false)),
        ("100712", (2012, Some(7), Some(10), false)),
        ("01012022", (2022, Some(1), Some(1), false)),
        ("28/3/1941", (1941, Some(3), Some(28), false)),
        ("04 03 1809", (1809, Some(3), Some(4), false)),
        ("20111104", (2011, Some(11), Some(4), false)),
        ("2011-11-04", (2011, Some(11), Some(4), false)),
        ("1502-02-11", (1502, Some(2), Some(11), false)),
        ("Jan 9, 2021", (2021, Some(1), Some(9), false)),
        ("Jun 11, 2023", (2023, Some(6), Some(11), false)),
        ("9 Jan 2021", (2021, Some(1), Some(9), false)),
        ("21 NOV 1859", (1859, Some(11), Some(21), false)),
        ("9-Jan-2021", (2021, Some(1), Some(9), false)),
        ("11-Jun-2023", (2023, Some(6), Some(11), false)),
        ("The event occurred on 23-25-2020 (DD-MM-YYYY).", (2020, None, None, false)),
        (
            "The Peking Opera was born on 1759-01-01, which is January 1, 1759",
            (1759, Some(1), Some(1), false),
        ),
        (
            "The Bhadla Solar Park was commissioned on March 25, 2012. Therefore, the event happened on 25",
            (2012, Some(3), Some(25), false),
        ),
    ];

    #[test]
    fn parses_every_observed_answer_shape() {
        for (text, (y, m, d, completed)) in OBSERVED {
            let got = parse_date(text, DayFirst, Day)
                .unwrap_or_else(|| panic!("no date found in {text:?}"));
            assert_eq!(
                (got.year, got.month, got.day, got.completion_applied),
                (*y, *m, *d, *completed),
                "wrong parse for {text:?}"
            );
        }
    }

    #[test]
    fn prose_with_day_month_year() {
        let p = parse_date(
            "The event you're referring to is the establishment of Reykjavík, \
             which occurred on 18 August 1786",
            DayFirst,
            Day,
        )
        .unwrap();
        assert_eq!((p.year, p.month, p.day), (1786, Some(8), Some(18)));
    }

    #[test]
    fn hint_decides_ambiguous_numeric_order() {
        let day_first = parse_date("11-10-2020", DayFirst, Day).unwrap();
        assert_eq!((day_first.month, day_first.day), (Some(10), Some(11)));
        let month_first = parse_date("11-10-2020", FormatHint::MonthFirst, Day).unwrap();
        assert_eq!((month_first.month, month_first.day), (Some(11), Some(10)));
    }

    #[test]
    fn impossible_hint_order_falls_back_to_the_other() {
        let p = parse_date("25-03-2012", FormatHint::MonthFirst, Day).unwrap();
        assert_eq!((p.month, p.day), (Some(3), Some(25)));
    }

    #[test]
    fn no_completion_below_day_granularity() {
        let p = parse_date("April 2020", FormatHint::MonthFirst, Granularity::Month).unwrap();
        assert_eq!((p.year, p.month, p.day), (2020, Some(4), None));
        assert!(!p.completion_applied);
        let p = parse_date("April 2020", FormatHint::MonthFirst, Day).unwrap();
        assert_eq!(p.day, Some(1));
        assert!(p.completion_applied);
    }

    #[test]
    fn year_only_never_invents_a_month() {
        let p = parse_date("It happened in 1999, I believe.", DayFirst, Day).unwrap();
        assert_eq!((p.year, p.month, p.day), (1999, None, None));
        assert!(!p.completion_applied);
    }

    #[test]
    fn nothing_date_like_yields_none() {
        assert!(parse_date("I do not know.", DayFirst, Day).is_none());
        assert!(parse_date("", DayFirst, Day).is_none());
        assert!(parse_date("around 450 BC", DayFirst, Day).is_none());
        assert!(parse_date("year 99999", DayFirst, Day).is_none());
    }

    #[test]
    fn two_digit_years_only_in_compact_form() {
        assert!(parse_date("12-11-20", DayFirst, Day).is_none());
        let p = parse_date("121120", DayFirst, Day).unwrap();
        assert_eq!((p.year, p.month, p.day), (2020, Some(11), Some(12)));
    }

    #[test]
    fn invalid_calendar_dates_are_rejected() {
        assert!(parse_date("30-02-1999", DayFirst, Granularity::Year).is_some()); // year salvaged
        let p = parse_date("30-02-1999", DayFirst, Day).unwrap();
        assert_eq!((p.year, p.month, p.day), (1999, None, None));
        assert!(parse_date("29-02-1999", DayFirst, Day).unwrap().month.is_none());
        let leap = parse_date("29-02-2000", DayFirst, Day).unwrap();
        assert_eq!((leap.month, leap.day), (Some(2), Some(29)));
    }

    #[test]
    fn mixed_separators_are_not_a_date() {
        let p = parse_date("04-03 1809", DayFirst, Day).unwrap();
        assert_eq!((p.year, p.month, p.day), (1809, None, None));
    }

    #[test]
    fn leftmost_mention_wins() {
        let p = parse_date("Some say 1918, others say 11-11-1920.", DayFirst, Day).unwrap();
        assert_eq!((p.year, p.month, p.day), (1918, None, None));
    }

    #[test]
    fn eight_digits_prefer_year_first_when_valid() {
        let p = parse_date("20111104", DayFirst, Day).unwrap();
        assert_eq!((p.year, p.month, p.day), (2011, Some(11), Some(4)));
        // 0101 is not a plausible year, so this reads day-first.
        let p = parse_date("01012022", DayFirst, Day).unwrap();
        assert_eq!((p.year, p.month, p.day), (2022, Some(1), Some(1)));
    }

    #[test]
    fn days_in_month_handles_leap_rules() {
        assert_eq!(days_in_month(1900, 2), 28); // century, not leap
        assert_eq!(days_in_month(2000, 2), 29); // 400 rule
        assert_eq!(days_in_month(2004, 2), 29);
        assert_eq!(days_in_month(2023, 2), 28);
        assert_eq!(days_in_month(2023, 4), 30);
        assert_eq!(days_in_month(2023, 12), 31);
    }
}
