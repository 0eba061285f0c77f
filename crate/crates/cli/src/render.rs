//! Plain-text rendering of turn events for the terminal.

use dbchat_core::datachat::{ChartSpec, ResultTable};
use dbchat_core::session::StreamEvent;
use dbchat_core::Value;

/// Widest bar, in `#` characters.
pub const BAR_WIDTH: usize = 30;

fn number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.2}")
    }
}

/// One aligned row per data point: label, a `#` bar scaled to the largest
/// absolute value, then the value.
pub fn chart(c: &ChartSpec) -> String {
    let mut out = format!("[{}] {} ({} by {})\n", c.chart_type.as_str(), c.title, c.measure, c.dimension);
    let label_w = c.data.iter().map(|p| p.label.chars().count()).max().unwrap_or(0);
    let max = c.data.iter().map(|p| p.value.abs()).fold(0.0, f64::max);
    for p in &c.data {
        let len = if max > 0.0 { (p.value.abs() / max * BAR_WIDTH as f64).round() as usize } else { 0 };
        out.push_str(&format!("  {:<label_w$}  {:<BAR_WIDTH$}  {}\n", p.label, "#".repeat(len), number(p.value)));
    }
    out
}

pub fn table(t: &ResultTable) -> String {
    let header: Vec<String> = t.columns.iter().map(|c| c.name.clone()).collect();
    let rows: Vec<Vec<String>> = t.rows.iter().map(|r| r.iter().map(|c| c.to_label()).collect()).collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).chain([header[i].chars().count()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("  {}\n", padded.join("  ").trim_end())
    };
    let mut out = line(&header);
    out.push_str(&line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>()));
    for r in &rows {
        out.push_str(&line(r));
    }
    if t.truncated {
        out.push_str("  (truncated)\n");
    }
    out
}

pub fn value(v: &Value) -> String {
    match v {
        Value::Text(t) => format!("{t}\n"),
        Value::Table(t) => table(t),
        Value::Chart(c) => chart(c),
        Value::Plan(p) => p.steps.iter().map(|s| format!("  {}. {}\n", s.index, s.description)).collect(),
        Value::List(items) | Value::Stream(items) => items.iter().map(value).collect(),
        Value::Error(e) => format!("error: {e}\n"),
    }
}

/// Turns events into text. Tracks streamed deltas so the final answer is
/// not printed twice.
#[derive(Debug, Default)]
pub struct Renderer {
    streamed: bool,
}

impl Renderer {
    pub fn event(&mut self, e: &StreamEvent) -> String {
        match e {
            StreamEvent::Plan(p) => {
                let mut out = format!("plan: {} step(s)\n", p.steps.len());
                for s in &p.steps {
                    out.push_str(&format!("  {}. [{}] {}\n", s.index, s.agent_role, s.description));
                }
                out
            }
            StreamEvent::StepStart(s) => format!("> step {}: {}\n", s.index, s.description),
            StreamEvent::StepResult { value: v, .. } => value(v),
            StreamEvent::Chart(c) => chart(c),
            StreamEvent::Delta { text } => {
                self.streamed = true;
                text.clone()
            }
            StreamEvent::Final { text } => {
                if std::mem::take(&mut self.streamed) {
                    "\n".into()
                } else {
                    format!("\n{text}\n")
                }
            }
            StreamEvent::Error { message, step: Some(n) } => format!("error in step {n}: {message}\n"),
            StreamEvent::Error { message, step: None } => format!("error: {message}\n"),
            StreamEvent::Done {} => String::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use dbchat_core::datachat::{ChartType, DataPoint};

    use super::*;

    #[test]
    fn bars_scale_to_the_largest_value() {
        let c = ChartSpec {
            chart_type: ChartType::Bar,
            title: "Sales".into(),
            dimension: "seg".into(),
            measure: "total".into(),
            data: vec![
                DataPoint { label: "a".into(), value: 15.0 },
                DataPoint { label: "bbb".into(), value: 30.0 },
                DataPoint { label: "c".into(), value: 0.5 },
            ],
        };
        let out = chart(&c);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "[bar] Sales (total by seg)");
        assert_eq!(lines[1], format!("  a    {:<30}  15", "#".repeat(15)));
        assert_eq!(lines[2], format!("  bbb  {}  30", "#".repeat(30)));
        assert_eq!(lines[3], format!("  c    {:<30}  0.50", "#"));
    }

    #[test]
    fn deltas_suppress_the_final_text() {
        let mut r = Renderer::default();
        assert_eq!(r.event(&StreamEvent::Delta { text: "hi".into() }), "hi");
        assert_eq!(r.event(&StreamEvent::Final { text: "hi".into() }), "\n");
        assert_eq!(r.event(&StreamEvent::Final { text: "yo".into() }), "\nyo\n");
    }
}
