use std::io::Write;

use serde_json::{json, Value};

/// JSON-lines event log. Events are numbered in emission order.
#[derive(Debug, Default)]
pub struct Trace {
    enabled: bool,
    events: Vec<Value>,
}

impl Trace {
    pub fn new(enabled: bool) -> Self {
        Trace { enabled, events: Vec::new() }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn emit(&mut self, depth: usize, event: &str, data: Value) {
        if !self.enabled {
            return;
        }
        let seq = self.events.len();
        let mut rec = json!({ "seq": seq, "depth": depth, "event": event });
        if let (Value::Object(dst), Value::Object(src)) = (&mut rec, data) {
            dst.extend(src);
        }
        self.events.push(rec);
    }

    pub fn events(&self) -> &[Value] {
        &self.events
    }

    pub fn count(&self, event: &str) -> usize {
        self.events.iter().filter(|e| e["event"] == event).count()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disabled_trace_records_nothing() {
        let mut t = Trace::new(false);
        t.emit(0, "x", json!({}));
        assert!(t.events().is_empty());
    }

    #[test]
    fn events_are_numbered_and_flattened() {
        let mut t = Trace::new(true);
        t.emit(1, "restart", json!({ "count": 3 }));
        t.emit(1, "restart", json!({ "count": 4 }));
        assert_eq!(t.events()[1]["seq"], 1);
        assert_eq!(t.events()[0]["count"], 3);
        assert_eq!(t.count("restart"), 2);
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }
}
