//! One simulation per session, owned by a dedicated thread that drains a
//! command queue between ticks and publishes a frame after every change.

use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use otcnet_core::analytics::arbitrage;
use otcnet_core::engine::InterventionKind;
use otcnet_core::snapshot::{AgentView, NetworkView, Snapshot};
use otcnet_core::{SimState, Trade};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, oneshot};

pub const MAX_RATE: f64 = 1000.0;
pub const MAX_STEP: u64 = 1_000_000;
const FRAME_BUFFER: usize = 4096;

/// State pushed to stream subscribers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub tick: u64,
    pub mids: Vec<f64>,
    pub bids: Vec<f64>,
    pub offers: Vec<f64>,
    pub inventories: Vec<f64>,
    pub mean_mid: f64,
    pub arbitrage: f64,
    /// Trades executed since the previous frame.
    pub trades: Vec<Trade>,
    pub agents: Vec<AgentView>,
}

impl Frame {
    pub fn of(state: &SimState, trades: &[Trade]) -> Self {
        let mids = state.mids();
        Frame {
            tick: state.tick,
            arbitrage: arbitrage(&mids, state.config.bid_offer),
            mids,
            bids: state.mms.iter().map(|m| m.bid()).collect(),
            offers: state.mms.iter().map(|m| m.offer()).collect(),
            inventories: state.mms.iter().map(|m| m.inventory).collect(),
            mean_mid: state.mean_mid(),
            trades: trades.to_vec(),
            agents: NetworkView::of(state).agents,
        }
    }
}

/// A published frame. Frames emitted by a command rather than a tick bypass
/// subscriber decimation.
#[derive(Debug, Clone)]
pub struct Published {
    pub frame: Arc<Frame>,
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    Step { n: u64 },
    Run { rate: f64 },
    Pause,
    Crash,
    ForceShort,
    RemoveValueInvestors,
    Reset { seed: u64 },
}

impl Command {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Command::Step { n } if n == 0 || n > MAX_STEP => Err(format!("step n must lie in 1..={MAX_STEP}")),
            Command::Run { rate } if !(rate > 0.0 && rate <= MAX_RATE) => {
                Err(format!("run rate must lie in (0, {MAX_RATE}] ticks per second"))
            }
            _ => Ok(()),
        }
    }

    fn intervention(&self) -> Option<InterventionKind> {
        match self {
            Command::Crash => Some(InterventionKind::Crash),
            Command::ForceShort => Some(InterventionKind::ForceShort),
            Command::RemoveValueInvestors => Some(InterventionKind::RemoveValueInvestors),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Mode {
    Paused,
    Running { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub verb: String,
    /// Tick at which the command took effect.
    pub tick: u64,
    /// Tick once the command has completed (differs from `tick` for steps).
    pub state_tick: u64,
    #[serde(flatten)]
    pub mode: Mode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Status {
    pub id: String,
    pub tick: u64,
    #[serde(flatten)]
    pub mode: Mode,
    pub subscribers: usize,
    pub snapshot: Snapshot,
}

pub enum Request {
    Command(Command, oneshot::Sender<Result<Ack, String>>),
    Status(oneshot::Sender<Status>),
    Network(oneshot::Sender<(NetworkView, String)>),
}

/// Client side of a session thread.
#[derive(Clone)]
pub struct SessionHandle {
    requests: mpsc::Sender<Request>,
    frames: broadcast::Sender<Published>,
}

impl SessionHandle {
    /// Starts the engine thread. The thread exits once every handle is gone.
    pub fn spawn(id: String, state: SimState) -> Self {
        let (requests, rx) = mpsc::channel();
        let (frames, _) = broadcast::channel(FRAME_BUFFER);
        let worker = Worker {
            id,
            state,
            mode: Mode::Paused,
            published_trades: 0,
            frames: frames.clone(),
        };
        thread::spawn(move || worker.serve(rx));
        SessionHandle { requests, frames }
    }

    pub fn send(&self, request: Request) -> bool {
        self.requests.send(request).is_ok()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Published> {
        self.frames.subscribe()
    }
}

struct Worker {
    id: String,
    state: SimState,
    mode: Mode,
    /// Length of the trade log when the last frame went out.
    published_trades: usize,
    frames: broadcast::Sender<Published>,
}

impl Worker {
    fn serve(mut self, rx: mpsc::Receiver<Request>) {
        let mut next_due = Instant::now();
        loop {
            let received = match self.mode {
                Mode::Paused => rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
                Mode::Running { .. } => rx.recv_timeout(next_due.saturating_duration_since(Instant::now())),
            };
            match received {
                Ok(request) => {
                    let was_paused = self.mode == Mode::Paused;
                    self.handle(request);
                    if was_paused {
                        next_due = Instant::now();
                    }
                }
                Err(RecvTimeoutError::Timeout) => {
                    let Mode::Running { rate } = self.mode else { continue };
                    if self.tick().is_err() {
                        self.mode = Mode::Paused;
                        continue;
                    }
                    let period = Duration::from_secs_f64(1.0 / rate);
                    next_due += period;
                    // Never try to catch up on time lost to a slow tick.
                    let now = Instant::now();
                    if next_due < now {
                        next_due = now;
                    }
                }
                Err(RecvTimeoutError::Disconnected) => return,
            }
        }
    }

    fn handle(&mut self, request: Request) {
        match request {
            Request::Command(cmd, reply) => {
                let _ = reply.send(self.apply(cmd));
            }
            Request::Status(reply) => {
                let _ = reply.send(Status {
                    id: self.id.clone(),
                    tick: self.state.tick,
                    mode: self.mode,
                    subscribers: self.frames.receiver_count(),
                    snapshot: Snapshot::of(&self.state),
                });
            }
            Request::Network(reply) => {
                let _ = reply.send((NetworkView::of(&self.state), self.state.network.to_edge_list()));
            }
        }
    }

    fn apply(&mut self, cmd: Command) -> Result<Ack, String> {
        cmd.validate()?;
        let verb = serde_json::to_value(&cmd)
            .ok()
            .and_then(|v| v["verb"].as_str().map(str::to_owned))
            .unwrap_or_default();
        let tick = self.state.tick;
        if let Some(kind) = cmd.intervention() {
            self.state.intervene(kind);
            self.publish(true);
        }
        match cmd {
            Command::Step { n } => {
                for _ in 0..n {
                    self.tick().map_err(|e| e.to_string())?;
                }
            }
            Command::Run { rate } => self.mode = Mode::Running { rate },
            Command::Pause => self.mode = Mode::Paused,
            Command::Reset { seed } => {
                self.state = SimState::with_seed(self.state.config.clone(), seed).map_err(|e| e.to_string())?;
                self.published_trades = 0;
                self.publish(true);
            }
            _ => {}
        }
        Ok(Ack {
            verb,
            tick,
            state_tick: self.state.tick,
            mode: self.mode,
        })
    }

    fn tick(&mut self) -> otcnet_core::Result<()> {
        self.state.step()?;
        self.publish(false);
        Ok(())
    }

    fn publish(&mut self, forced: bool) {
        let start = self.published_trades;
        self.published_trades = self.state.trades.len();
        if self.frames.receiver_count() == 0 {
            return;
        }
        let frame = Frame::of(&self.state, &self.state.trades[start..]);
        let _ = self.frames.send(Published {
            frame: Arc::new(frame),
            forced,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commands_parse_from_verbs() {
        let parse = |s: &str| serde_json::from_str::<Command>(s);
        assert_eq!(parse(r#"{"verb":"step","n":50}"#).unwrap(), Command::Step { n: 50 });
        assert_eq!(parse(r#"{"verb":"force_short"}"#).unwrap(), Command::ForceShort);
        assert_eq!(
            parse(r#"{"verb":"reset","seed":3}"#).unwrap(),
            Command::Reset { seed: 3 }
        );
        assert!(parse(r#"{"verb":"explode"}"#).is_err());
        assert!(parse(r#"{"verb":"step"}"#).is_err());
    }

    #[test]
    fn rate_and_step_bounds() {
        assert!(Command::Run { rate: 1000.0 }.validate().is_ok());
        assert!(Command::Run { rate: 1000.5 }.validate().is_err());
        assert!(Command::Run { rate: 0.0 }.validate().is_err());
        assert!(Command::Run { rate: f64::NAN }.validate().is_err());
        assert!(Command::Step { n: 0 }.validate().is_err());
    }
}
