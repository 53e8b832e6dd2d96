//! The per-turn monitoring pipeline: normalize events, score influence,
//! refresh the spectral signals, step the detector, attribute on
//! confirmation. Strictly online; each turn sees only the past.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::attribution::{attribute, AttributionReport};
use crate::config::RunConfig;
use crate::detector::{watch, weak_link, CachedTurn, DetectorEvent, DetectorState};
use crate::encoder::Encoder;
use crate::error::{ParseError, PipelineError};
use crate::estimator::InfluenceEstimator;
use crate::metrics::TurnEvidence;
use crate::spectral::{leading_spectrum, SpectralSignals};
use crate::topology::SystemTopology;
use crate::trace::{normalize_turn, parse_event_line, parse_header_line, ChannelEvent, TraceHeader};

/// One diagnostics line per turn.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: u64,
    #[serde(flatten)]
    pub signals: SpectralSignals,
    pub watch: bool,
    pub bottleneck: f64,
    pub energy_scale: f64,
    pub weak_link_feasible: bool,
    pub event: DetectorEvent,
    pub buckets: usize,
}

/// Alert record emitted on a declaration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlertRecord {
    pub turn: u64,
    pub kind: crate::detector::CascadeKind,
    pub t_w: u64,
    pub t0: u64,
    pub w: u64,
    pub signals_snapshot: SpectralSignals,
}

/// Outcome of a single monitored turn.
#[derive(Debug, Clone)]
pub struct TurnOutcome {
    pub record: TurnRecord,
    pub alert: Option<(AlertRecord, AttributionReport)>,
}

/// Online monitor for one trace session.
pub struct Monitor {
    topo: SystemTopology,
    encoder: Encoder,
    estimator: InfluenceEstimator,
    detector: DetectorState,
    cfg: RunConfig,
    prev_signals: Option<SpectralSignals>,
    first_turn_seen: bool,
}

impl Monitor {
    pub fn new(topo: SystemTopology, cfg: RunConfig) -> Self {
        let encoder = Encoder::new(cfg.encoder.clone());
        let estimator = InfluenceEstimator::new(
            cfg.estimator.clone(),
            cfg.encoder.dim,
            topo.agent_count(),
            cfg.seed,
        );
        let detector = DetectorState::new(cfg.detector.clone());
        Monitor {
            topo,
            encoder,
            estimator,
            detector,
            cfg,
            prev_signals: None,
            first_turn_seen: false,
        }
    }

    pub fn from_header(header: &TraceHeader, cfg: RunConfig) -> Result<Self, PipelineError> {
        let topo = SystemTopology::new(header.roster.len(), header.edges.iter().copied())?;
        Ok(Monitor::new(topo, cfg))
    }

    pub fn topology(&self) -> &SystemTopology {
        &self.topo
    }

    pub fn detector(&self) -> &DetectorState {
        &self.detector
    }

    /// Process one turn's events (already grouped by turn index).
    pub fn step_turn(
        &mut self,
        turn: u64,
        events: &[ChannelEvent],
    ) -> Result<TurnOutcome, PipelineError> {
        let batch = normalize_turn(turn, events, &self.topo, &self.encoder);
        let bucket_count = batch.buckets.len();
        self.estimator.process_batch(&batch, &self.topo)?;
        let norm = self.estimator.tensor().normalize();
        let (l1, l2) = leading_spectrum(&norm.unified)?;
        let eps = self.cfg.estimator.epsilon;
        let signals = match (&self.prev_signals, self.first_turn_seen) {
            (Some(prev), true) => SpectralSignals::next(l1, l2, prev, eps),
            _ => SpectralSignals::first_turn(l1, l2, eps),
        }
        .with_channel_spread(&norm.channels)?;
        let watch_now = match &self.prev_signals {
            Some(prev) => watch(&signals, prev.lambda1),
            None => false,
        };
        let wl = weak_link(&norm.unified, &self.topo, self.cfg.detector.epsilon);
        self.detector.cache_turn(
            turn,
            CachedTurn {
                unified: norm.unified.clone(),
                raw: norm.raw.clone(),
                channels: norm.channels.clone(),
            },
        );
        let event = self.detector.step(turn, &signals, watch_now, &wl);
        let alert = match event {
            DetectorEvent::InstantCascade | DetectorEvent::MultiTurnCascade => {
                let decl = self
                    .detector
                    .declarations()
                    .last()
                    .expect("declaration just recorded")
                    .clone();
                let report = attribute(
                    self.detector.cache(),
                    decl.t_w,
                    decl.t0,
                    &self.topo,
                    self.cfg.k,
                    eps,
                )?;
                Some((
                    AlertRecord {
                        turn,
                        kind: decl.kind,
                        t_w: decl.t_w,
                        t0: decl.t0,
                        w: decl.window,
                        signals_snapshot: signals.clone(),
                    },
                    report,
                ))
            }
            _ => None,
        };
        let record = TurnRecord {
            turn,
            signals: signals.clone(),
            watch: watch_now,
            bottleneck: wl.bottleneck,
            energy_scale: wl.energy_scale,
            weak_link_feasible: wl.feasible,
            event,
            buckets: bucket_count,
        };
        self.prev_signals = Some(signals);
        self.first_turn_seen = true;
        Ok(TurnOutcome { record, alert })
    }
}

impl TurnRecord {
    pub fn evidence(&self) -> TurnEvidence {
        TurnEvidence {
            watch: self.watch,
            amp: self.signals.amp,
            gap_contraction: self.signals.gap_contraction,
            phase_shift: self.signals.phase_shift,
            cross_channel: self.signals.cross_channel,
        }
    }
}

/// Full result of running a trace through the monitor.
#[derive(Debug, Clone)]
pub struct TraceRun {
    pub records: Vec<TurnRecord>,
    pub alerts: Vec<(AlertRecord, AttributionReport)>,
    /// Median wall time per monitored turn, in microseconds.
    pub median_turn_us: f64,
}

/// Stream a whole trace (header line first) through a fresh monitor.
/// Turns must arrive in non-decreasing order; regressions are rejected.
pub fn run_trace<R: BufRead>(reader: R, cfg: RunConfig) -> Result<TraceRun, PipelineError> {
    let mut lines = reader.lines();
    let header_line = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => {
                return Err(PipelineError::Parse {
                    line: 1,
                    source: ParseError::MissingHeader,
                })
            }
        }
    };
    let header = parse_header_line(&header_line)
        .map_err(|source| PipelineError::Parse { line: 1, source })?;
    let mut monitor = Monitor::from_header(&header, cfg)?;

    let mut records = Vec::new();
    let mut alerts = Vec::new();
    let mut timings = Vec::new();
    let mut pending: Vec<ChannelEvent> = Vec::new();
    let mut current_turn: Option<u64> = None;
    let mut line_no = 1usize;

    let flush = |monitor: &mut Monitor,
                     turn: u64,
                     events: &mut Vec<ChannelEvent>,
                     records: &mut Vec<TurnRecord>,
                     alerts: &mut Vec<(AlertRecord, AttributionReport)>,
                     timings: &mut Vec<f64>|
     -> Result<(), PipelineError> {
        let started = std::time::Instant::now();
        let outcome = monitor.step_turn(turn, events)?;
        timings.push(started.elapsed().as_secs_f64() * 1e6);
        events.clear();
        records.push(outcome.record);
        if let Some(a) = outcome.alert {
            alerts.push(a);
        }
        Ok(())
    };

    for line in lines {
        line_no += 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = parse_event_line(&line, &header)
            .map_err(|source| PipelineError::Parse { line: line_no, source })?;
        match current_turn {
            Some(t) if event.turn == t => pending.push(event),
            Some(t) if event.turn > t => {
                flush(&mut monitor, t, &mut pending, &mut records, &mut alerts, &mut timings)?;
                current_turn = Some(event.turn);
                pending.push(event);
            }
            Some(t) => {
                return Err(PipelineError::TurnRegression {
                    line: line_no,
                    turn: event.turn,
                    current: t,
                });
            }
            None => {
                current_turn = Some(event.turn);
                pending.push(event);
            }
        }
    }
    if let Some(t) = current_turn {
        flush(&mut monitor, t, &mut pending, &mut records, &mut alerts, &mut timings)?;
    }

    timings.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_turn_us = if timings.is_empty() {
        0.0
    } else {
        timings[timings.len() / 2]
    };
    Ok(TraceRun {
        records,
        alerts,
        median_turn_us,
    })
}
