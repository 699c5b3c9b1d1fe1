//! JSON-lines logger. Lines carry a sequence number instead of a wall-clock
//! time so identical runs produce identical logs.

use std::fs::File;
use std::io::{LineWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use log::{Level, LevelFilter, Log, Metadata, Record};

struct JsonLines {
    level: LevelFilter,
    seq: AtomicU64,
    sink: Mutex<Box<dyn Write + Send>>,
}

impl Log for JsonLines {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = serde_json::json!({
            "seq": self.seq.fetch_add(1, Ordering::Relaxed),
            "level": level_name(record.level()),
            "target": record.target(),
            "msg": record.args().to_string(),
        });
        if let Ok(mut sink) = self.sink.lock() {
            let _ = writeln!(sink, "{line}");
        }
    }

    fn flush(&self) {
        if let Ok(mut sink) = self.sink.lock() {
            let _ = sink.flush();
        }
    }
}

fn level_name(level: Level) -> &'static str {
    match level {
        Level::Error => "error",
        Level::Warn => "warn",
        Level::Info => "info",
        Level::Debug => "debug",
        Level::Trace => "trace",
    }
}

/// Logs to `path` if given, else to stderr.
pub fn init(level: LevelFilter, path: Option<&Path>) -> anyhow::Result<()> {
    let sink: Box<dyn Write + Send> = match path {
        Some(p) => Box::new(LineWriter::new(File::create(p)?)),
        None => Box::new(std::io::stderr()),
    };
    log::set_boxed_logger(Box::new(JsonLines {
        level,
        seq: AtomicU64::new(0),
        sink: Mutex::new(sink),
    }))?;
    log::set_max_level(level);
    Ok(())
}
