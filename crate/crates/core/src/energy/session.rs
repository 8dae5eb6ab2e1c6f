use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::powercap::{PowercapReader, DEFAULT_POWERCAP_ROOT};
use super::PowerSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PowerSource {
    /// Platform energy counters (Linux powercap).
    OsCounters {
        #[serde(default = "default_powercap_root")]
        powercap_root: PathBuf,
    },
    ConstantModel {
        cpu_w: f64,
        gpu_w: f64,
        ram_w: f64,
    },
    /// Replays a `timestamp_s,cpu_w,gpu_w,ram_w` CSV.
    TraceReplay { path: PathBuf },
}

fn default_powercap_root() -> PathBuf {
    PathBuf::from(DEFAULT_POWERCAP_ROOT)
}

impl PowerSource {
    pub fn os_counters() -> Self {
        PowerSource::OsCounters {
            powercap_root: default_powercap_root(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let PowerSource::ConstantModel { cpu_w, gpu_w, ram_w } = self {
            if [cpu_w, gpu_w, ram_w].iter().any(|w| !w.is_finite() || **w < 0.0) {
                return Err(Error::InvalidArgument(
                    "constant model wattages must be non-negative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Samples plus the wall-clock (or replayed) length of the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub samples: Vec<PowerSample>,
    pub duration_s: f64,
}

pub fn load_trace(path: &Path) -> Result<Vec<PowerSample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::malformed(path, e.to_string()))?;
    let expected = ["timestamp_s", "cpu_w", "gpu_w", "ram_w"];
    if header.iter().ne(expected) {
        return Err(Error::malformed(path, "header must be `timestamp_s,cpu_w,gpu_w,ram_w`"));
    }
    let mut samples: Vec<PowerSample> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::malformed(path, e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::malformed(path, format!("row {}: bad field {i}", line + 1)))
        };
        let s = PowerSample {
            timestamp: num(0)?,
            cpu_w: num(1)?,
            gpu_w: num(2)?,
            ram_w: num(3)?,
        };
        s.validate()
            .map_err(|e| Error::malformed(path, format!("row {}: {e}", line + 1)))?;
        if samples.last().is_some_and(|p| p.timestamp >= s.timestamp) {
            return Err(Error::malformed(path, format!("row {}: timestamps must increase", line + 1)));
        }
        samples.push(s);
    }
    Ok(samples)
}

enum Reader {
    Constant { cpu_w: f64, gpu_w: f64, ram_w: f64 },
    Counters(PowercapReader),
}

impl Reader {
    fn read(&mut self, t: f64) -> Result<PowerSample> {
        match self {
            Reader::Constant { cpu_w, gpu_w, ram_w } => Ok(PowerSample {
                timestamp: t,
                cpu_w: *cpu_w,
                gpu_w: *gpu_w,
                ram_w: *ram_w,
            }),
            Reader::Counters(r) => r.read(t),
        }
    }
}

fn open_reader(source: &PowerSource) -> Result<Option<Reader>> {
    source.validate()?;
    Ok(match source {
        PowerSource::ConstantModel { cpu_w, gpu_w, ram_w } => Some(Reader::Constant {
            cpu_w: *cpu_w,
            gpu_w: *gpu_w,
            ram_w: *ram_w,
        }),
        PowerSource::OsCounters { powercap_root } => Some(Reader::Counters(PowercapReader::open(powercap_root)?)),
        PowerSource::TraceReplay { .. } => None,
    })
}

/// Counter readers report average power over the interval ending at each
/// sample; the opening sample has no interval, so it inherits the next one's power.
fn backfill_first(samples: &mut [PowerSample]) {
    if samples.len() >= 2 {
        let t0 = samples[0].timestamp;
        samples[0] = PowerSample {
            timestamp: t0,
            ..samples[1]
        };
    }
}

fn replay(path: &Path) -> Result<SessionRecord> {
    let samples = load_trace(path)?;
    if samples.len() < 2 {
        return Err(Error::TraceExhausted(samples.len()));
    }
    let duration_s = samples[samples.len() - 1].timestamp;
    Ok(SessionRecord { samples, duration_s })
}

/// A running power-sampling session; call [`EnergySession::stop`] to collect it.
pub struct EnergySession {
    inner: SessionInner,
}

enum SessionInner {
    Live {
        stop_tx: Sender<()>,
        handle: JoinHandle<Result<SessionRecord>>,
    },
    Replay(Result<SessionRecord>),
}

/// Starts sampling `source` every `sampling_period_s` seconds on a background thread.
/// Trace sources replay their file verbatim and need no thread.
pub fn record_session(source: &PowerSource, sampling_period_s: f64) -> Result<EnergySession> {
    if !sampling_period_s.is_finite() || sampling_period_s <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sampling period must be positive, got {sampling_period_s}"
        )));
    }
    if let PowerSource::TraceReplay { path } = source {
        let record = replay(path)?;
        return Ok(EnergySession {
            inner: SessionInner::Replay(Ok(record)),
        });
    }
    let mut reader = open_reader(source)?.expect("live source");
    let is_counter = matches!(reader, Reader::Counters(_));
    let period = Duration::from_secs_f64(sampling_period_s);
    let (stop_tx, stop_rx) = mpsc::channel::<()>();
    let started = Instant::now();
    let first = reader.read(0.0)?;

    let handle = std::thread::spawn(move || -> Result<SessionRecord> {
        let mut samples = vec![first];
        let mut ticks: u32 = 1;
        loop {
            let deadline = started + period * ticks;
            let wait = deadline.saturating_duration_since(Instant::now());
            let stopping = match stop_rx.recv_timeout(wait) {
                Err(RecvTimeoutError::Timeout) => false,
                Ok(()) | Err(RecvTimeoutError::Disconnected) => true,
            };
            let t = started.elapsed().as_secs_f64();
            if t > samples[samples.len() - 1].timestamp {
                samples.push(reader.read(t)?);
            }
            if stopping {
                if is_counter {
                    backfill_first(&mut samples);
                }
                return Ok(SessionRecord { samples, duration_s: t });
            }
            ticks += 1;
        }
    });
    Ok(EnergySession {
        inner: SessionInner::Live { stop_tx, handle },
    })
}

impl EnergySession {
    pub fn stop(self) -> Result<SessionRecord> {
        match self.inner {
            SessionInner::Replay(r) => r,
            SessionInner::Live { stop_tx, handle } => {
                let _ = stop_tx.send(());
                handle
                    .join()
                    .map_err(|_| Error::InvalidArgument("sampler thread panicked".into()))?
            }
        }
    }
}

/// Deterministic session on a virtual clock: samples at `0, p, 2p, ...` below
/// `duration_s`, plus a closing sample at `duration_s`.
pub fn simulate_session(source: &PowerSource, sampling_period_s: f64, duration_s: f64) -> Result<SessionRecord> {
    if sampling_period_s.is_nan() || sampling_period_s <= 0.0 || duration_s.is_nan() || duration_s <= 0.0 {
        return Err(Error::InvalidArgument(
            "sampling period and duration must be positive".into(),
        ));
    }
    if let PowerSource::TraceReplay { path } = source {
        let trace = replay(path)?;
        if duration_s > trace.duration_s {
            return Err(Error::TraceExhausted(trace.samples.len()));
        }
        let samples = trace
            .samples
            .into_iter()
            .filter(|s| s.timestamp <= duration_s)
            .collect();
        return Ok(SessionRecord { samples, duration_s });
    }
    let mut reader = open_reader(source)?.expect("live source");
    let mut samples = Vec::new();
    let mut i: u64 = 0;
    loop {
        let t = i as f64 * sampling_period_s;
        if t >= duration_s - sampling_period_s * 1e-9 {
            break;
        }
        samples.push(reader.read(t)?);
        i += 1;
    }
    samples.push(reader.read(duration_s)?);
    Ok(SessionRecord { samples, duration_s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::integrate_energy;

    fn constant(cpu: f64) -> PowerSource {
        PowerSource::ConstantModel {
            cpu_w: cpu,
            gpu_w: 0.0,
            ram_w: 0.0,
        }
    }

    #[test]
    fn ten_second_constant_session() {
        let rec = simulate_session(&constant(100.0), 1.0, 10.0).unwrap();
        assert_eq!(rec.samples.len(), 11);
        assert!(rec.samples.iter().all(|s| s.cpu_w == 100.0));
        assert_eq!(rec.samples[10].timestamp, 10.0);
    }

    #[test]
    fn trace_replays_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        fs::write(&p, "timestamp_s,cpu_w,gpu_w,ram_w\n0,10,1,2\n0.5,12,1,2\n1.5,8,0,2\n").unwrap();
        let source = PowerSource::TraceReplay { path: p.clone() };
        let rec = record_session(&source, 1.0).unwrap().stop().unwrap();
        assert_eq!(rec.samples.len(), 3);
        assert_eq!(rec.samples[1].cpu_w, 12.0);
        assert_eq!(rec.samples[2].timestamp, 1.5);
        assert_eq!(rec.duration_s, 1.5);
        assert!(matches!(simulate_session(&source, 0.1, 2.0), Err(Error::TraceExhausted(3))));
    }

    #[test]
    fn bad_traces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, "timestamp_s,cpu_w,gpu_w,ram_w\n1,10,1,2\n0.5,12,1,2\n").unwrap();
        assert!(matches!(load_trace(&p), Err(Error::MalformedFile { .. })));
        fs::write(&p, "t,cpu,gpu,ram\n").unwrap();
        assert!(matches!(load_trace(&p), Err(Error::MalformedFile { .. })));
        fs::write(&p, "timestamp_s,cpu_w,gpu_w,ram_w\n0,10,1,2\n").unwrap();
        assert!(matches!(
            record_session(&PowerSource::TraceReplay { path: p }, 1.0),
            Err(Error::TraceExhausted(1))
        ));
    }

    #[test]
    fn counters_unavailable_without_powercap() {
        let dir = tempfile::tempdir().unwrap();
        let source = PowerSource::OsCounters {
            powercap_root: dir.path().join("missing"),
        };
        assert!(matches!(record_session(&source, 0.1), Err(Error::CountersUnavailable(_))));
    }

    #[test]
    fn live_constant_session() {
        let session = record_session(&constant(50.0), 0.01).unwrap();
        std::thread::sleep(Duration::from_millis(60));
        let rec = session.stop().unwrap();
        assert!(rec.samples.len() >= 2);
        assert!(rec.samples.windows(2).all(|w| w[1].timestamp > w[0].timestamp));
        let e = integrate_energy(&rec.samples, rec.duration_s).unwrap();
        let expected = 50.0 * rec.duration_s / 3.6e6;
        assert!((e.cpu_kwh - expected).abs() <= 1e-12 * expected.max(1e-30) + 1e-18);
    }

    #[test]
    fn refinement_does_not_change_constant_energy() {
        let coarse = simulate_session(&constant(100.0), 2.0, 600.0).unwrap();
        let fine = simulate_session(&constant(100.0), 1.0, 600.0).unwrap();
        let a = integrate_energy(&coarse.samples, 600.0).unwrap().cpu_kwh;
        let b = integrate_energy(&fine.samples, 600.0).unwrap().cpu_kwh;
        assert!((a - b).abs() / a < 1e-12);
    }

    #[test]
    fn invalid_period() {
        assert!(record_session(&constant(1.0), 0.0).is_err());
        assert!(record_session(&constant(-1.0), 1.0).is_err());
    }
}
