//! Per-device monitoring loop: ingest measurements, forecast the next value, run
//! anomaly detection on the window ending at the forecast, estimate RUL on
//! detection, persist everything as an append-only event log and notify.

pub mod evaluation;

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{stat_features, AGING_SCHEDULE_H};
use crate::error::{Error, Result};
use crate::models::{AnomalyVerdict, Autoencoder, Forecaster, RulModel};

pub use evaluation::{export_histograms, run_batch_evaluation, EvaluationConfig, EvaluationReport, Histogram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub forecast_window: usize,
    pub detect_window: usize,
    pub rul_window: usize,
    pub threshold: f64,
    /// Monitoring times; the forecast is stamped with the next one after the last
    /// measurement, and no forecast is made once the schedule is exhausted.
    pub schedule_h: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            forecast_window: 9,
            detect_window: 10,
            rul_window: 10,
            threshold: f64::INFINITY,
            schedule_h: AGING_SCHEDULE_H.to_vec(),
        }
    }
}

/// Trained models shared read-only by every device.
#[derive(Debug, Clone)]
pub struct Models {
    pub forecaster: Forecaster,
    pub detector: Autoencoder,
    pub rul: RulModel,
}

impl Models {
    /// Checks that the configured windows match what the models were built for.
    pub fn check(&self, config: &PipelineConfig) -> Result<()> {
        let f = self.forecaster.config;
        if f.window != config.forecast_window || f.horizon != 1 {
            return Err(Error::Config(format!(
                "pipeline needs a one-step forecaster over {} values, bundle has window {} horizon {}",
                config.forecast_window, f.window, f.horizon
            )));
        }
        if self.detector.config.window != config.detect_window {
            return Err(Error::Config(format!(
                "detect window {} does not match the detector's {}",
                config.detect_window, self.detector.config.window
            )));
        }
        if self.rul.config.window != config.rul_window || config.rul_window != config.detect_window {
            return Err(Error::Config(
                "the RUL window must equal the detect window and the RUL model's window".into(),
            ));
        }
        if config.detect_window > config.forecast_window + 1 {
            return Err(Error::Config(
                "detect window may extend at most one forecast past the forecast window".into(),
            ));
        }
        if config.threshold.is_nan() || config.threshold < 0.0 {
            return Err(Error::Config("threshold must be non-negative".into()));
        }
        if [&self.forecaster.is_trained(), &self.detector.is_trained(), &self.rul.is_trained()]
            .iter()
            .any(|t| !**t)
        {
            return Err(Error::Config("pipeline models must be trained".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Measured,
    Forecast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub time_h: f64,
    pub current_ma: f64,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupersededForecast {
    pub time_h: f64,
    pub forecast_ma: f64,
    /// Measurement taken at exactly the forecast time, if any.
    pub measured_ma: Option<f64>,
    /// `(forecast - measured) / I₀`, when a matching measurement exists.
    pub residual_ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub time_h: f64,
    pub verdict: AnomalyVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RulRecord {
    pub time_h: f64,
    pub rul_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub device: String,
    pub time_h: f64,
    pub score: f64,
    pub threshold: f64,
    pub rul_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    Measurement { current_ma: f64 },
    Forecast { current_ma: f64 },
    Verdict { score: f64, threshold: f64, is_anomalous: bool },
    Rul { rul_h: f64 },
    Notification { score: f64, threshold: f64, rul_hours: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub device: String,
    pub time_h: f64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceLedger {
    pub device_id: String,
    pub entries: Vec<LogEntry>,
    pub superseded: Vec<SupersededForecast>,
    pub verdicts: Vec<VerdictRecord>,
    pub latest_rul: Option<RulRecord>,
    pub notifications: Vec<Notification>,
}

impl DeviceLedger {
    pub fn new(device_id: impl Into<String>) -> Self {
        Self {
            device_id: device_id.into(),
            ..Self::default()
        }
    }

    pub fn measured(&self) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(|e| e.origin == Origin::Measured)
    }

    pub fn measured_count(&self) -> usize {
        self.measured().count()
    }

    pub fn pending_forecast(&self) -> Option<&LogEntry> {
        self.entries.last().filter(|e| e.origin == Origin::Forecast)
    }

    pub fn initial_current_ma(&self) -> Option<f64> {
        self.measured().next().map(|e| e.current_ma)
    }

    fn last_measured_time(&self) -> Option<f64> {
        self.measured().last().map(|e| e.time_h)
    }

    pub fn latest_verdict(&self) -> Option<&VerdictRecord> {
        self.verdicts.last()
    }

    /// Applies one event. Replaying a device's log through this rebuilds the ledger.
    pub fn apply(&mut self, event: &Event) -> Result<()> {
        if event.device != self.device_id {
            return Err(Error::Data(format!(
                "event for {} applied to ledger {}",
                event.device, self.device_id
            )));
        }
        let t = event.time_h;
        match event.payload {
            EventPayload::Measurement { current_ma } => {
                if !(current_ma > 0.0 && current_ma.is_finite() && t.is_finite()) {
                    return Err(Error::Data(format!("invalid measurement {current_ma} mA at {t} h")));
                }
                if let Some(last) = self.last_measured_time() {
                    if t <= last {
                        return Err(Error::Data(format!(
                            "{}: measurement at {t} h is not after the last one at {last} h",
                            self.device_id
                        )));
                    }
                }
                if let Some(f) = self.pending_forecast().copied() {
                    self.entries.pop();
                    let measured_ma = (f.time_h == t).then_some(current_ma);
                    let i0 = self.initial_current_ma().unwrap_or(current_ma);
                    self.superseded.push(SupersededForecast {
                        time_h: f.time_h,
                        forecast_ma: f.current_ma,
                        measured_ma,
                        residual_ratio: measured_ma.map(|m| (f.current_ma - m) / i0),
                    });
                }
                self.entries.push(LogEntry {
                    time_h: t,
                    current_ma,
                    origin: Origin::Measured,
                });
            }
            EventPayload::Forecast { current_ma } => {
                if self.pending_forecast().is_some() {
                    return Err(Error::State("a forecast is already pending".into()));
                }
                if self.last_measured_time().is_none_or(|last| t <= last) {
                    return Err(Error::Data("forecast must lie after the last measurement".into()));
                }
                self.entries.push(LogEntry {
                    time_h: t,
                    current_ma,
                    origin: Origin::Forecast,
                });
            }
            EventPayload::Verdict {
                score,
                threshold,
                is_anomalous,
            } => self.verdicts.push(VerdictRecord {
                time_h: t,
                verdict: AnomalyVerdict {
                    score,
                    threshold,
                    is_anomalous,
                },
            }),
            EventPayload::Rul { rul_h } => self.latest_rul = Some(RulRecord { time_h: t, rul_h }),
            EventPayload::Notification {
                score,
                threshold,
                rul_hours,
            } => self.notifications.push(Notification {
                device: self.device_id.clone(),
                time_h: t,
                score,
                threshold,
                rul_hours,
            }),
        }
        Ok(())
    }

    pub fn replay<'a>(device_id: &str, events: impl IntoIterator<Item = &'a Event>) -> Result<Self> {
        let mut ledger = Self::new(device_id);
        for e in events {
            ledger.apply(e)?;
        }
        Ok(ledger)
    }
}

/// Records a measurement. Any pending forecast is superseded and archived; a forecast
/// stamped at exactly this time also yields a residual.
///
/// On rejection the ledger is unchanged.
pub fn ingest(ledger: &mut DeviceLedger, time_h: f64, current_ma: f64) -> Result<Event> {
    let event = Event {
        device: ledger.device_id.clone(),
        time_h,
        payload: EventPayload::Measurement { current_ma },
    };
    ledger.apply(&event)?;
    Ok(event)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ran,
    InsufficientHistory,
    ForecastPending,
    /// No scheduled measurement remains to forecast.
    ScheduleEnd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub status: StepStatus,
    pub verdict: Option<AnomalyVerdict>,
    pub rul_h: Option<f64>,
    pub notifications: Vec<Notification>,
    pub events: Vec<Event>,
}

impl StepOutput {
    fn skipped(status: StepStatus) -> Self {
        Self {
            status,
            verdict: None,
            rul_h: None,
            notifications: Vec::new(),
            events: Vec::new(),
        }
    }
}

fn next_time(schedule: &[f64], last: f64) -> Option<f64> {
    schedule.iter().copied().find(|t| *t > last)
}

/// Forecasts, detects and (on detection) estimates RUL for one device.
///
/// The first anomalous verdict of a device raises its single maintenance
/// notification; later anomalous verdicts refresh the RUL estimate only.
pub fn step(ledger: &mut DeviceLedger, models: &Models, config: &PipelineConfig) -> Result<StepOutput> {
    if ledger.pending_forecast().is_some() {
        return Ok(StepOutput::skipped(StepStatus::ForecastPending));
    }
    let measured: Vec<LogEntry> = ledger.measured().copied().collect();
    let need = config.forecast_window.max(config.detect_window - 1);
    if measured.len() < need {
        return Ok(StepOutput::skipped(StepStatus::InsufficientHistory));
    }
    let i0 = measured[0].current_ma;
    let ratios: Vec<f64> = measured.iter().map(|e| e.current_ma / i0).collect();
    let Some(forecast_time) = next_time(&config.schedule_h, measured[measured.len() - 1].time_h) else {
        return Ok(StepOutput::skipped(StepStatus::ScheduleEnd));
    };

    let history = &ratios[ratios.len() - config.forecast_window..];
    let forecast_ratio = models.forecaster.predict(history)?[0];

    let mut window = ratios[ratios.len() + 1 - config.detect_window..].to_vec();
    window.push(forecast_ratio);
    let score = models.detector.anomaly_score(&window)?;
    let verdict = AnomalyVerdict::new(score, config.threshold);

    let device = ledger.device_id.clone();
    let event = |payload| Event {
        device: device.clone(),
        time_h: forecast_time,
        payload,
    };
    let mut events = vec![
        event(EventPayload::Forecast {
            current_ma: forecast_ratio * i0,
        }),
        event(EventPayload::Verdict {
            score,
            threshold: verdict.threshold,
            is_anomalous: verdict.is_anomalous,
        }),
    ];
    let mut rul_h = None;
    if verdict.is_anomalous {
        let rul = models.rul.predict(&window, &stat_features(&window)?)?;
        rul_h = Some(rul);
        events.push(event(EventPayload::Rul { rul_h: rul }));
        if ledger.notifications.is_empty() {
            events.push(event(EventPayload::Notification {
                score,
                threshold: verdict.threshold,
                rul_hours: rul,
            }));
        }
    }
    for e in &events {
        ledger.apply(e)?;
    }
    let notifications = events
        .iter()
        .filter_map(|e| match e.payload {
            EventPayload::Notification {
                score,
                threshold,
                rul_hours,
            } => Some(Notification {
                device: e.device.clone(),
                time_h: e.time_h,
                score,
                threshold,
                rul_hours,
            }),
            _ => None,
        })
        .collect();
    Ok(StepOutput {
        status: StepStatus::Ran,
        verdict: Some(verdict),
        rul_h,
        notifications,
        events,
    })
}

/// Destination of maintenance notifications.
pub trait NotificationSink {
    fn send(&mut self, notification: &Notification) -> Result<()>;
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub sent: Vec<Notification>,
}

impl NotificationSink for MemorySink {
    fn send(&mut self, notification: &Notification) -> Result<()> {
        self.sent.push(notification.clone());
        Ok(())
    }
}

/// Appends one JSON object per notification.
pub struct JsonlSink {
    path: PathBuf,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self> {
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
        })
    }
}

impl NotificationSink for JsonlSink {
    fn send(&mut self, notification: &Notification) -> Result<()> {
        append_json_lines(&self.path, std::slice::from_ref(notification))
    }
}

fn append_json_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Append-only per-device event logs plus final snapshots in one directory.
#[derive(Debug, Clone)]
pub struct EventStore {
    dir: PathBuf,
}

fn file_stem(device: &str) -> String {
    device
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

impl EventStore {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn log_path(&self, device: &str) -> PathBuf {
        self.dir.join(format!("{}.events.jsonl", file_stem(device)))
    }

    pub fn snapshot_path(&self, device: &str) -> PathBuf {
        self.dir.join(format!("{}.ledger.json", file_stem(device)))
    }

    pub fn append(&self, events: &[Event]) -> Result<()> {
        let Some(first) = events.first() else {
            return Ok(());
        };
        append_json_lines(&self.log_path(&first.device), events)
    }

    pub fn read_events(&self, device: &str) -> Result<Vec<Event>> {
        let path = self.log_path(device);
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }

    pub fn replay(&self, device: &str) -> Result<DeviceLedger> {
        DeviceLedger::replay(device, &self.read_events(device)?)
    }

    pub fn write_snapshot(&self, ledger: &DeviceLedger) -> Result<()> {
        let path = self.snapshot_path(&ledger.device_id);
        std::fs::write(&path, serde_json::to_string_pretty(ledger)?).map_err(|e| Error::io(&path, e))
    }

    pub fn read_snapshot(&self, device: &str) -> Result<String> {
        let path = self.snapshot_path(device);
        std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    }
}

/// Runs the loop for many devices, persisting each ingest and step before moving on.
pub struct Pipeline<'a> {
    pub models: &'a Models,
    pub config: PipelineConfig,
    store: Option<EventStore>,
    sink: Box<dyn NotificationSink + 'a>,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        models: &'a Models,
        config: PipelineConfig,
        store: Option<EventStore>,
        sink: Box<dyn NotificationSink + 'a>,
    ) -> Result<Self> {
        models.check(&config)?;
        Ok(Self {
            models,
            config,
            store,
            sink,
        })
    }

    pub fn ingest(&mut self, ledger: &mut DeviceLedger, time_h: f64, current_ma: f64) -> Result<()> {
        let event = ingest(ledger, time_h, current_ma)?;
        if let Some(store) = &self.store {
            store.append(std::slice::from_ref(&event))?;
        }
        Ok(())
    }

    pub fn step(&mut self, ledger: &mut DeviceLedger) -> Result<StepOutput> {
        let out = step(ledger, self.models, &self.config)?;
        if let Some(store) = &self.store {
            store.append(&out.events)?;
        }
        for n in &out.notifications {
            self.sink.send(n)?;
        }
        Ok(out)
    }

    /// Feeds a whole trace through ingest and step, then writes the ledger snapshot.
    pub fn run_trace(&mut self, trace: &crate::datagen::CurrentTrace) -> Result<DeviceLedger> {
        let mut ledger = DeviceLedger::new(trace.device_id.clone());
        if let Some(store) = &self.store {
            let path = store.log_path(&trace.device_id);
            if path.exists() {
                std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        for (t, c) in trace.times_h.iter().zip(&trace.currents_ma) {
            self.ingest(&mut ledger, *t, *c)?;
            self.step(&mut ledger)?;
        }
        if let Some(store) = &self.store {
            store.write_snapshot(&ledger)?;
        }
        Ok(ledger)
    }
}
