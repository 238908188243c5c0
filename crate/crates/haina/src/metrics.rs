//! Metrics rows and their CSV form.
//!
//! Columns, in order: `event` (storage event or run number), `kind`,
//! `value`, `clock` (`virtual` for simulated time, `wall` for measured
//! time, `none` for counts), `context` (`key=value` pairs joined by `;`).

use std::io::Write;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    DecisionMs,
    BlockNode,
    StageMs,
    ProcessingRateKbps,
    SpeedupPct,
    StoredBytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    Virtual,
    Wall,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub event: u64,
    pub kind: MetricKind,
    pub value: f64,
    pub clock: Clock,
    pub context: String,
}

impl MetricsRow {
    pub fn new(event: u64, kind: MetricKind, value: f64, clock: Clock, context: impl Into<String>) -> MetricsRow {
        MetricsRow { event, kind, value, clock, context: context.into() }
    }

    /// Value of `key` in the context field.
    pub fn context_value(&self, key: &str) -> Option<&str> {
        self.context.split(';').find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[MetricsRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["event", "kind", "value", "clock", "context"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(rows: &[MetricsRow]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_row_layout() {
        let rows = [MetricsRow::new(3, MetricKind::DecisionMs, 75.5, Clock::Virtual, "block=2;node=a:1")];
        assert_eq!(
            to_csv_string(&rows),
            "event,kind,value,clock,context\n3,decision_ms,75.5,virtual,block=2;node=a:1\n"
        );
        assert_eq!(rows[0].context_value("node"), Some("a:1"));
        assert_eq!(rows[0].context_value("nod"), None);
        assert_eq!(to_csv_string(&[]), "event,kind,value,clock,context\n");
    }
}
