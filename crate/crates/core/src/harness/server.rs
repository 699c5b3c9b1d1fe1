//! Newline-delimited JSON server driving live learning sessions.
//!
//! Every line a client sends is one [`ClientMessage`]; every line back is one
//! [`ServerMessage`]. See `docs/protocol.md` for the wire format.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{TaskSetup, TrialRecord};
use crate::error::{Error, Result};
use crate::learner::Strategy;
use crate::rationality::RationalityModel;
use crate::scenario::Scenario;
use crate::session::{AuditRecord, Session};
use crate::trajectory::Correction;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    /// Opens a session, or reattaches to `session` if given.
    Hello {
        #[serde(default)]
        session: Option<String>,
        #[serde(default)]
        task: Option<String>,
        #[serde(default)]
        strategy: Option<Strategy>,
        /// Labels copied into the trial record.
        #[serde(default)]
        episode: Option<usize>,
        #[serde(default)]
        seed: Option<u64>,
    },
    ApplyCorrection {
        torque: Vec<f64>,
        waypoint_index: usize,
    },
    Reset {},
    SetMode {
        strategy: Strategy,
    },
    SetSpeed {
        speed: f64,
    },
    Play {},
    Pause {},
    GetRecord {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseView {
    pub points: Vec<[f64; 2]>,
    pub ee_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// Fractional waypoint the robot is executing.
    pub index: f64,
    pub playing: bool,
    pub speed: f64,
    pub strategy: Strategy,
    pub waypoints: Vec<Vec<f64>>,
    pub pose: PoseView,
    /// Rows: end-effector x, y, angle; columns: joints.
    pub jacobian: Vec<Vec<f64>>,
    pub features: Vec<String>,
    pub theta: Vec<f64>,
    /// From the latest correction; empty before the first.
    pub beta_hat: Vec<f64>,
    pub p_relevant: Vec<f64>,
    pub gates: Vec<f64>,
    pub corrections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        protocol: u32,
        session: String,
        resumed: bool,
        task: String,
        features: Vec<String>,
        n_joints: usize,
        steps: usize,
        max_torque: f64,
    },
    Frame(Box<Frame>),
    Audit {
        record: Box<AuditRecord>,
    },
    Record {
        record: Box<TrialRecord>,
    },
    Ack {
        of: String,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    fn error(e: impl std::fmt::Display) -> Self {
        ServerMessage::Error { message: e.to_string() }
    }
}

/// One live session, shared between the connection driving it and the
/// registry that lets a reconnecting client resume it.
#[derive(Debug)]
pub struct Live {
    session: Session,
    setup: Arc<TaskSetup>,
    playhead: f64,
    speed: f64,
    playing: bool,
    episode: usize,
    seed: u64,
}

impl Live {
    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn playhead(&self) -> f64 {
        self.playhead
    }

    pub fn playing(&self) -> bool {
        self.playing
    }

    fn frame(&self) -> Result<Frame> {
        let sc = self.session.scenario();
        let traj = self.session.trajectory();
        let lo = self.playhead.floor() as usize;
        let hi = (lo + 1).min(traj.horizon());
        let w = self.playhead - lo as f64;
        let q: Vec<f64> = traj
            .waypoint(lo)
            .iter()
            .zip(traj.waypoint(hi))
            .map(|(a, b)| a + w * (b - a))
            .collect();
        let pose = sc.model.forward_kinematics(&q)?;
        let jac = sc.model.ee_jacobian(&q)?;
        let last = self.session.audits().last();
        let pick = |f: fn(&AuditRecord) -> &Vec<f64>| last.map(|a| f(a).clone()).unwrap_or_default();
        Ok(Frame {
            index: self.playhead,
            playing: self.playing,
            speed: self.speed,
            strategy: self.session.strategy(),
            waypoints: traj.to_waypoints(),
            pose: PoseView {
                points: pose.points.iter().map(|p| [p.x, p.y]).collect(),
                ee_angle: pose.ee_angle,
            },
            jacobian: (0..jac.nrows()).map(|r| jac.row(r).iter().copied().collect()).collect(),
            features: known_names(sc),
            theta: self.session.theta().to_vec(),
            beta_hat: pick(|a| &a.beta_hat),
            p_relevant: pick(|a| &a.p_relevant),
            gates: pick(|a| &a.gates),
            corrections: self.session.audits().len(),
        })
    }

    fn advance(&mut self) {
        if !self.playing {
            return;
        }
        let end = self.session.trajectory().horizon() as f64;
        self.playhead = (self.playhead + self.speed).min(end);
        if self.playhead >= end {
            self.playing = false;
        }
    }
}

fn known_names(sc: &Scenario) -> Vec<String> {
    sc.fs.known_indices().iter().map(|&i| sc.fs.kinds()[i].name().to_string()).collect()
}

/// Sessions, scenario and calibrated model shared by all connections.
#[derive(Debug)]
pub struct Hub {
    cfg: ExperimentConfig,
    scenario: Arc<Scenario>,
    model: Option<Arc<RationalityModel>>,
    setups: HashMap<String, Arc<TaskSetup>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Live>>>>,
    next_id: AtomicU64,
}

impl Hub {
    /// Without a model only the fixed strategy is available.
    pub fn new(cfg: ExperimentConfig, model: Option<RationalityModel>) -> Result<Self> {
        cfg.validate()?;
        let scenario = Arc::new(cfg.scenario()?);
        let setups = cfg
            .experiment
            .tasks
            .iter()
            .map(|t| Ok((t.name.clone(), Arc::new(TaskSetup::new(&cfg, &scenario, &t.name)?))))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg,
            scenario,
            model: model.map(Arc::new),
            setups,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn live(&self, id: &str) -> Option<Arc<Mutex<Live>>> {
        self.sessions.lock().expect("session registry poisoned").get(id).cloned()
    }

    fn open(
        &self,
        task: Option<String>,
        strategy: Option<Strategy>,
        episode: Option<usize>,
        seed: Option<u64>,
    ) -> Result<(String, Arc<Mutex<Live>>)> {
        let name = task.unwrap_or_else(|| self.cfg.server.task.clone());
        let setup = self
            .setups
            .get(&name)
            .ok_or_else(|| Error::Protocol(format!("unknown task `{name}`")))?
            .clone();
        let strategy = strategy.unwrap_or(if self.model.is_some() {
            Strategy::Adaptive
        } else {
            Strategy::Fixed
        });
        let session = Session::new(
            self.scenario.clone(),
            self.model.clone(),
            self.cfg.learner,
            strategy,
            setup.theta0.clone(),
        )?;
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let live = Arc::new(Mutex::new(Live {
            session,
            setup,
            playhead: 0.0,
            speed: self.cfg.server.speed,
            playing: false,
            episode: episode.unwrap_or(0),
            seed: seed.unwrap_or(0),
        }));
        self.sessions
            .lock()
            .expect("session registry poisoned")
            .insert(id.clone(), live.clone());
        Ok((id, live))
    }
}

/// Protocol state of one client connection, independent of the transport.
#[derive(Debug)]
pub struct Connection {
    hub: Arc<Hub>,
    live: Option<Arc<Mutex<Live>>>,
}

impl Connection {
    pub fn new(hub: Arc<Hub>) -> Self {
        Self { hub, live: None }
    }

    /// Parses and handles one line. Malformed input yields an error reply.
    pub fn handle_line(&mut self, line: &str) -> Vec<ServerMessage> {
        match serde_json::from_str::<ClientMessage>(line) {
            Ok(msg) => self.handle(msg),
            Err(e) => vec![ServerMessage::error(format!("malformed message: {e}"))],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        match self.try_handle(msg) {
            Ok(out) => out,
            Err(e) => vec![ServerMessage::error(e)],
        }
    }

    fn try_handle(&mut self, msg: ClientMessage) -> Result<Vec<ServerMessage>> {
        if let ClientMessage::Hello {
            session,
            task,
            strategy,
            episode,
            seed,
        } = msg
        {
            self.pause();
            let (id, live, resumed) = match session {
                Some(id) => {
                    let live = self
                        .hub
                        .live(&id)
                        .ok_or_else(|| Error::Protocol(format!("no session `{id}` to resume")))?;
                    (id, live, true)
                }
                None => {
                    let (id, live) = self.hub.open(task, strategy, episode, seed)?;
                    (id, live, false)
                }
            };
            let welcome = {
                let l = live.lock().expect("session poisoned");
                let sc = l.session.scenario();
                ServerMessage::Welcome {
                    protocol: PROTOCOL_VERSION,
                    session: id,
                    resumed,
                    task: l.setup.task.name.clone(),
                    features: known_names(sc),
                    n_joints: sc.model.n_links(),
                    steps: sc.steps(),
                    max_torque: self.hub.cfg.server.max_torque,
                }
            };
            self.live = Some(live);
            let frame = self.frame()?;
            return Ok(vec![welcome, frame]);
        }
        let live = self
            .live
            .clone()
            .ok_or_else(|| Error::Protocol("send `hello` first".into()))?;
        let mut l = live.lock().expect("session poisoned");
        let ack = |of: &str| ServerMessage::Ack { of: of.into() };
        let out = match msg {
            ClientMessage::Hello { .. } => unreachable!("handled above"),
            ClientMessage::ApplyCorrection { torque, waypoint_index } => {
                let limit = self.hub.cfg.server.max_torque;
                if torque.iter().any(|t| !t.is_finite() || t.abs() > limit) {
                    return Err(Error::Protocol(format!("torque components must be finite and within {limit}")));
                }
                let u = Correction::new(torque, waypoint_index)?;
                let record = l.session.process_correction(&u)?;
                vec![ServerMessage::Audit {
                    record: Box::new(record),
                }]
            }
            ClientMessage::Reset {} => {
                l.session.reset();
                l.playhead = 0.0;
                l.playing = false;
                vec![ack("reset")]
            }
            ClientMessage::SetMode { strategy } => {
                l.session.set_strategy(strategy)?;
                vec![ack("set_mode")]
            }
            ClientMessage::SetSpeed { speed } => {
                if !(speed.is_finite() && speed > 0.0) {
                    return Err(Error::Protocol(format!("speed {speed} must be positive")));
                }
                l.speed = speed;
                vec![ack("set_speed")]
            }
            ClientMessage::Play {} => {
                if l.playhead >= l.session.trajectory().horizon() as f64 {
                    l.playhead = 0.0;
                }
                l.playing = true;
                vec![ack("play")]
            }
            ClientMessage::Pause {} => {
                l.playing = false;
                vec![ack("pause")]
            }
            ClientMessage::GetRecord {} => {
                let record = l.setup.record(&l.session, l.episode, l.seed)?;
                vec![ServerMessage::Record {
                    record: Box::new(record),
                }]
            }
        };
        let mut out = out;
        out.push(ServerMessage::Frame(Box::new(l.frame()?)));
        Ok(out)
    }

    /// Advances a playing session by one tick and returns its frame.
    pub fn tick(&mut self) -> Option<ServerMessage> {
        let live = self.live.as_ref()?;
        let mut l = live.lock().expect("session poisoned");
        if !l.playing {
            return None;
        }
        l.advance();
        Some(match l.frame() {
            Ok(f) => ServerMessage::Frame(Box::new(f)),
            Err(e) => ServerMessage::error(e),
        })
    }

    /// Stops playback; called when the client goes away.
    pub fn pause(&mut self) {
        if let Some(live) = &self.live {
            live.lock().expect("session poisoned").playing = false;
        }
    }

    fn frame(&self) -> Result<ServerMessage> {
        let live = self.live.as_ref().ok_or_else(|| Error::Protocol("no session".into()))?;
        let l = live.lock().expect("session poisoned");
        Ok(ServerMessage::Frame(Box::new(l.frame()?)))
    }
}

enum Inbound {
    Line(String),
    Closed,
}

fn send(stream: &mut TcpStream, msg: &ServerMessage) -> Result<()> {
    let mut line = serde_json::to_vec(msg)?;
    line.push(b'\n');
    stream.write_all(&line)?;
    Ok(())
}

/// Runs one client until it disconnects. A reader thread forwards lines so
/// the loop can tick between messages.
pub fn serve_connection(hub: Arc<Hub>, stream: TcpStream) -> Result<()> {
    let peer = stream.peer_addr().ok();
    let tick = Duration::from_millis(hub.cfg.server.tick_ms);
    let reader = stream.try_clone()?;
    let mut writer = stream;
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut lines = BufReader::new(reader);
        loop {
            let mut buf = String::new();
            match lines.read_line(&mut buf) {
                Ok(0) | Err(_) => {
                    let _ = tx.send(Inbound::Closed);
                    return;
                }
                Ok(_) => {
                    if tx.send(Inbound::Line(buf)).is_err() {
                        return;
                    }
                }
            }
        }
    });
    let mut conn = Connection::new(hub);
    log::info!("client connected: {peer:?}");
    let result = loop {
        match rx.recv_timeout(tick) {
            Ok(Inbound::Line(line)) => {
                if line.trim().is_empty() {
                    continue;
                }
                let replies = conn.handle_line(line.trim_end());
                if let Err(e) = replies.iter().try_for_each(|m| send(&mut writer, m)) {
                    break Err(e);
                }
            }
            Ok(Inbound::Closed) | Err(RecvTimeoutError::Disconnected) => break Ok(()),
            Err(RecvTimeoutError::Timeout) => {
                if let Some(frame) = conn.tick() {
                    if let Err(e) = send(&mut writer, &frame) {
                        break Err(e);
                    }
                }
            }
        }
    };
    conn.pause();
    log::info!("client disconnected: {peer:?}");
    result
}

/// Accepts clients until `stop` is set, one thread per connection.
pub fn serve(hub: Arc<Hub>, listener: TcpListener, stop: Arc<AtomicBool>) -> Result<()> {
    listener.set_nonblocking(true)?;
    log::info!("listening on {}", listener.local_addr()?);
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                let hub = hub.clone();
                std::thread::spawn(move || {
                    if let Err(e) = serve_connection(hub, stream) {
                        log::warn!("connection ended with error: {e}");
                    }
                });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
