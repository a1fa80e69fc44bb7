//! Randomized invariants over the parsing, transformation, and scoring
//! primitives. These complement the example-based unit tests by searching
//! for inputs nobody thought to write down.

use proptest::prelude::*;

use temprobe::corpus::{EventDate, Meta, QaItem, Source};
use temprobe::gateway::mock::question_core;
use temprobe::metrics::dates::{days_in_month, parse_date, FormatHint, Granularity};
use temprobe::metrics::{date_match, relative_diff};
use temprobe::transform;
use temprobe::trust::{consistency, year_agreement, TrainingMeta, TrustModel};

fn item(question: String) -> QaItem {
    QaItem {
        id: "prop".to_owned(),
        question,
        gold_answers: vec!["x".to_owned()],
        source: Source::Synthetic,
        meta: Meta::new(),
        year_ref: None,
    }
    .redetect()
}

const MONTH_NAMES: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
];

fn any_text() -> impl Strategy<Value = String> {
    prop_oneof![
        any::<String>(),
        "[A-Za-z ]{0,12}[0-9]{1,4}[-/. ][0-9]{1,2}[-/. ][0-9]{1,4}[A-Za-z .]{0,8}",
        "[0-9]{4}-[0-9]{2}-[0-9]{2}",
        "[0-9]{6,8}",
        "(Jan|Apr|Dec)[a-z]{0,6},? [0-9]{1,2},? [0-9]{4}",
    ]
}

fn hints() -> impl Strategy<Value = FormatHint> {
    prop_oneof![Just(FormatHint::DayFirst), Just(FormatHint::MonthFirst)]
}

proptest! {
    #[test]
    fn parsed_dates_are_calendar_valid(text in any_text(), hint in hints()) {
        for granularity in [Granularity::Year, Granularity::Month, Granularity::Day] {
            let Some(p) = parse_date(&text, hint, granularity) else { continue };
            prop_assert!((1000..=2100).contains(&p.year), "year {} from {text:?}", p.year);
            if let Some(m) = p.month {
                prop_assert!((1..=12).contains(&m));
            }
            if let Some(d) = p.day {
                let m = p.month.expect("a day implies a month");
                prop_assert!(d >= 1 && d <= days_in_month(p.year, m));
            }
            if p.completion_applied {
                prop_assert_eq!(granularity, Granularity::Day);
                prop_assert_eq!(p.day, Some(1));
            }
        }
    }

    #[test]
    fn granularity_only_controls_day_completion(text in any_text(), hint in hints()) {
        let year = parse_date(&text, hint, Granularity::Year);
        let month = parse_date(&text, hint, Granularity::Month);
        let day = parse_date(&text, hint, Granularity::Day);
        prop_assert_eq!(year.is_some(), month.is_some());
        prop_assert_eq!(year.is_some(), day.is_some());
        let (Some(y), Some(m), Some(d)) = (year, month, day) else { return Ok(()) };
        prop_assert_eq!((y.year, y.month, y.day), (m.year, m.month, m.day));
        prop_assert_eq!((d.year, d.month), (m.year, m.month));
        if d.completion_applied {
            prop_assert_eq!((m.day, d.day), (None, Some(1)));
        } else {
            prop_assert_eq!(d.day, m.day);
        }
    }

    #[test]
    fn rendered_dates_parse_back(
        year in 1000i32..=2100,
        month in 1u32..=12,
        day in 1u32..=28,
        form in 0usize..4,
    ) {
        let name = MONTH_NAMES[(month - 1) as usize];
        let (text, hint) = match form {
            0 => (format!("{day:02}-{month:02}-{year}"), FormatHint::DayFirst),
            1 => (format!("{year}-{month:02}-{day:02}"), FormatHint::MonthFirst),
            2 => (format!("{name} {day}, {year}"), FormatHint::MonthFirst),
            _ => (format!("{day} {name} {year}"), FormatHint::DayFirst),
        };
        let p = parse_date(&text, hint, Granularity::Day).expect("rendered date must parse");
        prop_assert_eq!((p.year, p.month, p.day), (year, Some(month), Some(day)), "{}", text);
    }

    #[test]
    fn date_scores_never_rise_with_finer_granularity(
        gold_year in 1000i32..=2100,
        gold_month in 1u32..=12,
        gold_day in 1u32..=28,
        prediction in any_text(),
    ) {
        let gold = EventDate { year: gold_year, month: Some(gold_month), day: Some(gold_day) };
        let year = date_match(&prediction, &gold, Granularity::Year).unwrap().value;
        let month = date_match(&prediction, &gold, Granularity::Month).unwrap().value;
        let day = date_match(&prediction, &gold, Granularity::Day).unwrap().value;
        prop_assert!(day <= month && month <= year, "{day} / {month} / {year} for {prediction:?}");
    }

    #[test]
    fn consistency_is_symmetric_and_bounded(a in any::<String>(), b in any::<String>()) {
        let ab = consistency(&a, &b);
        prop_assert!(ab == 0.0 || ab == 1.0);
        prop_assert_eq!(ab, consistency(&b, &a));
        // Self-agreement is total unless the text normalizes away entirely,
        // in which case nothing can agree with it.
        let aa = consistency(&a, &a);
        prop_assert!(aa == 1.0 || (aa == 0.0 && ab == 0.0));
    }

    #[test]
    fn year_agreement_is_binary(text in any_text(), year in 1000i32..=2100) {
        let v = year_agreement(&text, year);
        prop_assert!(v == 0.0 || v == 1.0);
        prop_assert_eq!(year_agreement(&year.to_string(), year), 1.0);
    }

    #[test]
    fn relative_diff_is_defined_exactly_off_zero(
        base in -1000.0f64..1000.0,
        comparison in -1000.0f64..1000.0,
    ) {
        match relative_diff(base, comparison) {
            None => prop_assert_eq!(base, 0.0),
            Some(d) => {
                prop_assert_ne!(base, 0.0);
                prop_assert!(d.is_finite());
                if comparison == base {
                    prop_assert_eq!(d, 0.0);
                }
            }
        }
    }

    #[test]
    fn canonical_questions_survive_a_transformation_cycle(
        head in "[A-Z][a-z]+( [a-z]+){0,6}",
        year in 1000i32..=2022,
        trailing_space in any::<bool>(),
    ) {
        let tail = if trailing_space { " ?" } else { "?" };
        let q = item(format!("{head} in {year}{tail}"));

        let relative = transform::relativize(&q, 2023).unwrap();
        prop_assert!(transform::detect_year_reference(&relative.question).is_none());
        let back = transform::absolutize(&relative, 2023).unwrap();
        prop_assert_eq!(&back.question, &q.question);

        let removed = transform::remove_time(&q).unwrap();
        prop_assert!(transform::year_tokens(&removed.question).is_empty());

        let fronted = transform::move_time_to_front(&q).unwrap();
        let prefix = format!("In {year}, ");
        prop_assert!(fronted.question.starts_with(&prefix));
        prop_assert!(fronted.question.contains(&head));
    }

    // The answer-key oracle matches phrasings through their shared core, so
    // every rewrite of a question must keep that core intact.
    #[test]
    fn all_rewrites_share_one_question_core(
        head in "[A-Z][a-z]+( [a-z]+){0,6}",
        year in 1100i32..=2022,
    ) {
        let q = item(format!("{head} in {year}?"));
        let core = question_core(&q.question);
        prop_assert_eq!(question_core(&transform::relativize(&q, 2023).unwrap().question), core.clone());
        prop_assert_eq!(question_core(&transform::remove_time(&q).unwrap().question), core.clone());
        prop_assert_eq!(question_core(&transform::move_time_to_front(&q).unwrap().question), core.clone());
        let relative = transform::relativize(&q, 2023).unwrap();
        prop_assert_eq!(question_core(&transform::absolutize(&relative, 2023).unwrap().question), core);
    }

    #[test]
    fn shifted_years_move_by_exactly_k(
        head in "[A-Z][a-z]+( [a-z]+){0,4}",
        year in 1200i32..=1900,
        k in 1u32..=100,
        seed in any::<u64>(),
    ) {
        let q = item(format!("{head} in {year}?"));
        let shifted = transform::shift_year(&q, k, seed).unwrap();
        let new_year = shifted.year_ref.expect("shifted question keeps its year").year;
        prop_assert_eq!((new_year - year).unsigned_abs(), k);

        let unshifted = transform::shift_year(&q, 0, seed).unwrap();
        prop_assert_eq!(&unshifted.question, &q.question);
    }

    #[test]
    fn trust_models_round_trip_through_json(
        a in 0u32..=10,
        b in 0u32..=10,
        t in 0u32..=20,
        train in 0.0f64..=1.0,
        holdout in 0.0f64..=1.0,
    ) {
        let b = b.min(10 - a);
        let c = 10 - a - b;
        let model = TrustModel {
            weights: [f64::from(a) / 10.0, f64::from(b) / 10.0, f64::from(c) / 10.0, 0.0],
            threshold: f64::from(t) / 20.0,
            training: TrainingMeta {
                train_size: 80,
                holdout_size: 20,
                train_balanced_accuracy: train,
                holdout_balanced_accuracy: holdout,
                grid_points: 6006,
            },
        };
        let restored = TrustModel::from_json(&model.to_json()).unwrap();
        prop_assert_eq!(restored.weights, model.weights);
        prop_assert_eq!(restored.threshold, model.threshold);
        prop_assert_eq!(
            restored.training.holdout_balanced_accuracy,
            model.training.holdout_balanced_accuracy
        );
    }
}
