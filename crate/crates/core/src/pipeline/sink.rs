use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::formats::event_line;
use crate::model::VisitEvent;

/// Destination for exported visit events. Each event is one NDJSON line,
/// flushed before `write_event` returns.
pub trait EventSink: Send {
    fn write_event(&mut self, event: &VisitEvent) -> Result<()>;

    fn finish(&mut self) -> Result<()> {
        Ok(())
    }

    fn describe(&self) -> String;
}

fn line(event: &VisitEvent) -> Vec<u8> {
    let mut s = event_line(event);
    s.push('\n');
    s.into_bytes()
}

pub struct StdoutSink;

impl EventSink for StdoutSink {
    fn write_event(&mut self, event: &VisitEvent) -> Result<()> {
        let mut out = std::io::stdout().lock();
        out.write_all(&line(event)).and_then(|_| out.flush()).map_err(|e| Error::Sink(format!("stdout: {e}")))
    }

    fn describe(&self) -> String {
        "stdout".into()
    }
}

pub struct FileSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl FileSink {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let f = File::create(&path).map_err(|e| Error::Sink(format!("{}: {e}", path.display())))?;
        Ok(Self { path, out: BufWriter::new(f) })
    }
}

impl EventSink for FileSink {
    fn write_event(&mut self, event: &VisitEvent) -> Result<()> {
        self.out
            .write_all(&line(event))
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::Sink(format!("{}: {e}", self.path.display())))
    }

    fn finish(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::Sink(format!("{}: {e}", self.path.display())))
    }

    fn describe(&self) -> String {
        format!("file:{}", self.path.display())
    }
}

/// TCP sink. A failed write triggers one reconnect and retry; a second
/// failure is an error.
pub struct TcpSink {
    addr: String,
    stream: TcpStream,
    reconnected: bool,
}

impl TcpSink {
    pub fn connect(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Sink(format!("tcp:{addr}: {e}")))?;
        stream.set_nodelay(true).ok();
        Ok(Self { addr: addr.to_string(), stream, reconnected: false })
    }

    fn send(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.stream.write_all(bytes)?;
        self.stream.flush()
    }
}

impl EventSink for TcpSink {
    fn write_event(&mut self, event: &VisitEvent) -> Result<()> {
        let bytes = line(event);
        match self.send(&bytes) {
            Ok(()) => Ok(()),
            Err(first) if !self.reconnected => {
                log::warn!("tcp:{}: {first}; reconnecting", self.addr);
                self.reconnected = true;
                self.stream = TcpStream::connect(&self.addr).map_err(|e| Error::Sink(format!("tcp:{}: reconnect failed: {e}", self.addr)))?;
                self.send(&bytes).map_err(|e| Error::Sink(format!("tcp:{}: {e}", self.addr)))
            }
            Err(e) => Err(Error::Sink(format!("tcp:{}: {e}", self.addr))),
        }
    }

    fn finish(&mut self) -> Result<()> {
        self.stream.shutdown(std::net::Shutdown::Write).ok();
        Ok(())
    }

    fn describe(&self) -> String {
        format!("tcp:{}", self.addr)
    }
}

/// Collects the exported bytes in memory; clones share one buffer.
#[derive(Clone, Default)]
pub struct MemorySink {
    buf: Arc<Mutex<Vec<u8>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&self) -> Vec<u8> {
        self.buf.lock().expect("sink buffer poisoned").clone()
    }

    pub fn text(&self) -> String {
        String::from_utf8(self.bytes()).expect("event lines are UTF-8")
    }
}

impl EventSink for MemorySink {
    fn write_event(&mut self, event: &VisitEvent) -> Result<()> {
        self.buf.lock().expect("sink buffer poisoned").extend_from_slice(&line(event));
        Ok(())
    }

    fn describe(&self) -> String {
        "memory".into()
    }
}

/// Parses `stdout`, `file:PATH` or `tcp:HOST:PORT` and opens the sink.
pub fn open_sink(spec: &str) -> Result<Box<dyn EventSink>> {
    if spec == "stdout" {
        return Ok(Box::new(StdoutSink));
    }
    if let Some(path) = spec.strip_prefix("file:") {
        if path.is_empty() {
            return Err(Error::Config("file sink needs a path".into()));
        }
        return Ok(Box::new(FileSink::create(path)?));
    }
    if let Some(addr) = spec.strip_prefix("tcp:") {
        if !addr.contains(':') {
            return Err(Error::Config(format!("tcp sink needs HOST:PORT, got '{addr}'")));
        }
        return Ok(Box::new(TcpSink::connect(addr)?));
    }
    Err(Error::Config(format!("unknown sink '{spec}' (use stdout, file:PATH or tcp:HOST:PORT)")))
}
