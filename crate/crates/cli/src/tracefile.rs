//! `trace.csv`: one row per epoch, one column per task, every cell `A` or
//! `F`. No header, so the cell alphabet of the file is exactly {A, F}.

use std::path::Path;

use fairmtl_core::losses::Action;
use fairmtl_core::trainer::SelectionTrace;
use fairmtl_core::{Error, Result};

pub fn trace_to_csv(trace: &SelectionTrace) -> String {
    let mut out = String::new();
    for row in trace.rows() {
        let cells: Vec<String> = row.iter().map(|a| a.as_char().to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_trace(trace: &SelectionTrace, path: &Path) -> Result<()> {
    std::fs::write(path, trace_to_csv(trace)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_trace(path: &Path) -> Result<SelectionTrace> {
    let content =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows: Vec<Vec<Action>> = Vec::new();
    for (lineno, line) in content.split('\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for cell in line.split(',') {
            let mut chars = cell.chars();
            let (Some(c), None) = (chars.next(), chars.next()) else {
                return Err(Error::Format(format!(
                    "{}: line {} cell `{cell}` is not a single action",
                    path.display(),
                    lineno + 1
                )));
            };
            let action = Action::from_char(c).ok_or_else(|| {
                Error::Format(format!(
                    "{}: line {} cell `{cell}` is not A or F",
                    path.display(),
                    lineno + 1
                ))
            })?;
            row.push(action);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "{}: line {} has {} cells, earlier rows have {}",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let n_tasks = rows.first().map_or(0, Vec::len);
    let mut trace = SelectionTrace::new(n_tasks);
    for row in rows {
        trace.push_row(row);
    }
    Ok(trace)
}

/// Per-task selection frequencies, formatted for the `trace` subcommand.
pub fn frequency_summary(trace: &SelectionTrace) -> String {
    let epochs = trace.n_epochs();
    let mut out = format!("epochs: {epochs}, tasks: {}\n", trace.n_tasks());
    for t in 0..trace.n_tasks() {
        let acc = trace.action_fraction(t, Action::Accuracy);
        let fair = trace.action_fraction(t, Action::Fairness);
        let acc_count = (acc * epochs as f64).round() as usize;
        let fair_count = (fair * epochs as f64).round() as usize;
        out.push_str(&format!(
            "task_{t}: A {:.1}% ({acc_count}), F {:.1}% ({fair_count})\n",
            100.0 * acc,
            100.0 * fair
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trace() -> SelectionTrace {
        let mut trace = SelectionTrace::new(2);
        trace.push_row(vec![Action::Accuracy, Action::Fairness]);
        trace.push_row(vec![Action::Fairness, Action::Fairness]);
        trace.push_row(vec![Action::Accuracy, Action::Accuracy]);
        trace
    }

    #[test]
    fn csv_cells_are_exactly_the_action_alphabet() {
        let text = trace_to_csv(&sample_trace());
        assert_eq!(text, "A,F\nF,F\nA,A\n");
        for cell in text.lines().flat_map(|l| l.split(',')) {
            assert!(cell == "A" || cell == "F");
        }
    }

    #[test]
    fn trace_round_trips() {
        let trace = sample_trace();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace(&trace, &path).unwrap();
        let back = read_trace(&path).unwrap();
        assert_eq!(trace, back);
    }

    #[test]
    fn malformed_cells_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "A,F\nA,X\n").unwrap();
        assert!(matches!(read_trace(&path), Err(Error::Format(_))));
        std::fs::write(&path, "A,F\nA\n").unwrap();
        assert!(matches!(read_trace(&path), Err(Error::Format(_))));
    }

    #[test]
    fn frequencies_are_reported_per_task() {
        let summary = frequency_summary(&sample_trace());
        assert!(summary.contains("epochs: 3, tasks: 2"));
        assert!(summary.contains("task_0: A 66.7% (2), F 33.3% (1)"));
    }
}
