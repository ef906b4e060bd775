use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::eval::{EvalReport, CHANCE};
use crate::corpus::{Condition, Quantifier, Split};
use crate::error::{Error, Result};

/// Column order of the accuracy table.
pub const COLUMNS: [(Condition, Split); 4] = [
    (Condition::OneSent, Split::Val),
    (Condition::OneSent, Split::Test),
    (Condition::ThreeSent, Split::Val),
    (Condition::ThreeSent, Split::Test),
];

fn column(condition: Condition, split: Split) -> Result<usize> {
    COLUMNS
        .iter()
        .position(|&c| c == (condition, split))
        .ok_or_else(|| Error::invalid("compare_report", format!("no column for {condition}/{}", split.name())))
}

/// Truncates to three decimals, toward zero.
pub fn truncate3(x: f64) -> String {
    let t = ((x.abs() * 1000.0) + 1e-9).floor() / 1000.0;
    if x < 0.0 && t > 0.0 {
        format!("-{t:.3}")
    } else {
        format!("{t:.3}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub system: String,
    pub human: bool,
    /// Accuracy per entry of [`COLUMNS`].
    pub cells: [Option<f64>; 4],
}

/// One quantifier's accuracy for humans and a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarPoint {
    pub quantifier: Quantifier,
    pub human: Option<f64>,
    pub model: Option<f64>,
    /// `model - human`, when both exist.
    pub difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarSeries {
    pub condition: Condition,
    pub split: Split,
    pub human: String,
    pub model: String,
    pub points: Vec<BarPoint>,
}

/// The side-by-side accuracy table plus per-quantifier bar data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub chance: f64,
    /// Human majority-class chance per column, when human reports exist.
    pub human_chance: [Option<f64>; 4],
    pub rows: Vec<TableRow>,
    pub bars: Vec<BarSeries>,
}

/// Per-quantifier accuracies in magnitude order.
pub fn quantifier_bars(human: &EvalReport, model: &EvalReport) -> Result<BarSeries> {
    if human.condition != model.condition || human.split != model.split {
        return Err(Error::invalid(
            "quantifier_bars",
            format!(
                "{} is {}/{} but {} is {}/{}",
                human.system,
                human.condition,
                human.split.name(),
                model.system,
                model.condition,
                model.split.name()
            ),
        ));
    }
    let points = Quantifier::BY_MAGNITUDE
        .iter()
        .map(|&q| {
            let (h, m) = (human.class_accuracy(q), model.class_accuracy(q));
            BarPoint {
                quantifier: q,
                human: h,
                model: m,
                difference: h.zip(m).map(|(h, m)| m - h),
            }
        })
        .collect();
    Ok(BarSeries {
        condition: human.condition,
        split: human.split,
        human: human.system.clone(),
        model: model.system.clone(),
        points,
    })
}

fn add_rows(rows: &mut Vec<TableRow>, reports: &[EvalReport], human: bool) -> Result<()> {
    for r in reports {
        let col = column(r.condition, r.split)?;
        let row = match rows.iter().position(|row| row.system == r.system) {
            Some(i) => &mut rows[i],
            None => {
                rows.push(TableRow {
                    system: r.system.clone(),
                    human,
                    cells: [None; 4],
                });
                rows.last_mut().unwrap()
            }
        };
        if row.human != human {
            return Err(Error::invalid(
                "compare_report",
                format!("{} appears as both model and human", r.system),
            ));
        }
        if row.cells[col].is_some() {
            return Err(Error::invalid(
                "compare_report",
                format!("two reports for {} on {}/{}", r.system, r.condition, r.split.name()),
            ));
        }
        row.cells[col] = Some(r.accuracy);
    }
    Ok(())
}

/// Assembles the accuracy table; rows keep first-seen order, humans last.
///
/// With `bars_model`, every human report is paired with that model's report
/// on the same condition and split for the per-quantifier bars.
pub fn compare_report(models: &[EvalReport], humans: &[EvalReport], bars_model: Option<&str>) -> Result<Comparison> {
    for r in models.iter().chain(humans) {
        r.check()?;
    }
    let mut rows = Vec::new();
    add_rows(&mut rows, models, false)?;
    add_rows(&mut rows, humans, true)?;
    let mut human_chance = [None; 4];
    for h in humans {
        human_chance[column(h.condition, h.split)?] = Some(h.majority_chance());
    }
    let mut bars = Vec::new();
    if let Some(name) = bars_model {
        for h in humans {
            let m = models
                .iter()
                .find(|m| m.system == name && m.condition == h.condition && m.split == h.split)
                .ok_or_else(|| {
                    Error::invalid(
                        "compare_report",
                        format!(
                            "no {name} report on {}/{} to pair with {}",
                            h.condition,
                            h.split.name(),
                            h.system
                        ),
                    )
                })?;
            bars.push(quantifier_bars(h, m)?);
        }
    }
    Ok(Comparison {
        chance: CHANCE,
        human_chance,
        rows,
        bars,
    })
}

const MISSING: &str = "------";

impl Comparison {
    /// Plain-text rendering with values truncated to three decimals.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.system.len()).max().unwrap_or(0).max(8);
        let mut out = String::new();
        let _ = write!(out, "{:width$}", "");
        for (c, s) in COLUMNS {
            let head = match c {
                Condition::OneSent => "1-Sent",
                Condition::ThreeSent => "3-Sent",
            };
            let _ = write!(out, "  {:>12}", format!("{head} {}", s.name()));
        }
        out.push('\n');
        let _ = write!(out, "{:width$}", "chance");
        for _ in COLUMNS {
            let _ = write!(out, "  {:>12}", truncate3(self.chance));
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:width$}", row.system);
            for cell in row.cells {
                let _ = write!(out, "  {:>12}", cell.map_or(MISSING.to_string(), truncate3));
            }
            out.push('\n');
        }
        if self.human_chance.iter().any(Option::is_some) {
            let cells: Vec<String> = self
                .human_chance
                .iter()
                .map(|c| c.map_or(MISSING.to_string(), truncate3))
                .collect();
            let _ = writeln!(out, "human majority-class chance: {}", cells.join(" / "));
        }
        for series in &self.bars {
            let _ = writeln!(
                out,
                "\n{} vs {} ({} {})",
                series.human,
                series.model,
                series.condition,
                series.split.name()
            );
            let _ = writeln!(out, "{:16}{:>8}{:>8}{:>8}", "quantifier", "human", "model", "diff");
            for p in &series.points {
                let f = |v: Option<f64>| v.map_or(MISSING.to_string(), truncate3);
                let _ = writeln!(
                    out,
                    "{:16}{:>8}{:>8}{:>8}",
                    p.quantifier.display(),
                    f(p.human),
                    f(p.model),
                    f(p.difference)
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// `correct` of `n` items right, spread so every class is present.
    fn counted(system: &str, condition: Condition, split: Split, correct: usize, n: usize) -> EvalReport {
        let gold: Vec<usize> = (0..n).map(|i| i % 9).collect();
        let pred: Vec<Option<usize>> = gold
            .iter()
            .enumerate()
            .map(|(i, &g)| if i < correct { Some(g) } else { Some((g + 1) % 9) })
            .collect();
        EvalReport::from_predictions(system, condition, split, &gold, &pred).unwrap()
    }

    #[test]
    fn humans_only_table() {
        let humans = [
            counted("Humans", Condition::OneSent, Split::Val, 112, 506),
            counted("Humans", Condition::ThreeSent, Split::Val, 131, 506),
        ];
        let c = compare_report(&[], &humans, None).unwrap();
        assert_eq!(c.rows.len(), 1);
        let text = c.render();
        let line = text.lines().find(|l| l.starts_with("Humans")).unwrap();
        let cells: Vec<&str> = line.split_whitespace().skip(1).collect();
        assert_eq!(cells, ["0.221", "------", "0.258", "------"]);
        assert!(text.lines().nth(1).unwrap().contains("0.111"));
    }

    #[test]
    fn truncation_not_rounding() {
        assert_eq!(truncate3(131.0 / 506.0), "0.258");
        assert_eq!(truncate3(112.0 / 506.0), "0.221");
        assert_eq!(truncate3(1.0 / 9.0), "0.111");
        assert_eq!(truncate3(0.29), "0.290");
        assert_eq!(truncate3(1.0), "1.000");
        assert_eq!(truncate3(-0.0125), "-0.012");
        assert_eq!(truncate3(0.0), "0.000");
    }

    #[test]
    fn identical_reports_give_zero_differences() {
        let h = counted("Humans", Condition::OneSent, Split::Val, 40, 90);
        let mut m = h.clone();
        m.system = "attcon_lstm".into();
        let c = compare_report(std::slice::from_ref(&m), &[h], Some("attcon_lstm")).unwrap();
        assert_eq!(c.bars.len(), 1);
        assert!(c.bars[0].points.iter().all(|p| p.difference == Some(0.0)));
        assert!(c.render().lines().filter(|l| l.ends_with("0.000")).count() >= 9);
    }

    #[test]
    fn magnitude_order() {
        let h = counted("Humans", Condition::OneSent, Split::Val, 40, 90);
        let s = quantifier_bars(&h, &h).unwrap();
        let names: Vec<&str> = s.points.iter().map(|p| p.quantifier.display()).collect();
        assert_eq!(
            names,
            [
                "none",
                "few",
                "a few",
                "some",
                "many",
                "more than half",
                "most",
                "almost all",
                "all"
            ]
        );
    }

    #[test]
    fn mismatched_conditions_are_rejected() {
        let h = counted("Humans", Condition::OneSent, Split::Val, 40, 90);
        let m = counted("lstm", Condition::ThreeSent, Split::Val, 40, 90);
        assert!(quantifier_bars(&h, &m).is_err());
        assert!(compare_report(&[m], &[h], Some("lstm")).is_err());
    }

    #[test]
    fn duplicate_cells_are_rejected() {
        let m = counted("lstm", Condition::OneSent, Split::Val, 40, 90);
        assert!(compare_report(&[m.clone(), m], &[], None).is_err());
    }

    #[test]
    fn rows_keep_first_seen_order() {
        let reports = [
            counted("cnn", Condition::OneSent, Split::Val, 30, 90),
            counted("lstm", Condition::OneSent, Split::Test, 31, 90),
            counted("cnn", Condition::ThreeSent, Split::Test, 32, 90),
        ];
        let c = compare_report(&reports, &[], None).unwrap();
        let names: Vec<&str> = c.rows.iter().map(|r| r.system.as_str()).collect();
        assert_eq!(names, ["cnn", "lstm"]);
        assert_eq!(c.rows[0].cells[0], Some(30.0 / 90.0));
        assert_eq!(c.rows[0].cells[1], None);
        assert_eq!(c.rows[0].cells[3], Some(32.0 / 90.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn table_cells_match_stored_reports(
            counts in prop::collection::vec((1usize..120, 0usize..4, 0usize..3), 1..8),
            human_n in 1usize..200,
        ) {
            let systems = ["cnn", "lstm", "bilstm"];
            let mut seen = std::collections::HashSet::new();
            let mut reports = Vec::new();
            for (n, col, sys) in counts {
                if !seen.insert((sys, col)) {
                    continue;
                }
                let (c, s) = COLUMNS[col];
                reports.push(counted(systems[sys], c, s, n / 3, n));
            }
            let human = counted("Humans", Condition::OneSent, Split::Val, human_n / 4, human_n);
            let lines: Vec<String> = {
                let round: Vec<EvalReport> = reports
                    .iter()
                    .map(|r| serde_json::from_str(&serde_json::to_string(r).unwrap()).unwrap())
                    .collect();
                let c = compare_report(&round, std::slice::from_ref(&human), None).unwrap();
                for r in &reports {
                    let row = c.rows.iter().find(|row| row.system == r.system).unwrap();
                    prop_assert_eq!(row.cells[column(r.condition, r.split).unwrap()], Some(r.accuracy));
                }
                c.render().lines().map(str::to_string).collect()
            };
            let human_line = lines.iter().find(|l| l.starts_with("Humans")).unwrap();
            prop_assert!(human_line.contains(&truncate3(human.accuracy)));
            prop_assert_eq!(human_line.matches(MISSING).count(), 3);
        }
    }
}
