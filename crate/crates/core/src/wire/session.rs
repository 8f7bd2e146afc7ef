use std::io::{self, BufReader, BufWriter};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::codec::{read_message, write_message, EpisodePhase, Message};
use crate::env::{generate_scenario, Curriculum, ScenarioConfig, Terminal};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::rl::{Algorithm, Experience, Exploration, Learner, Policy};
use crate::sensing::OBS_LAYOUT_VERSION;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Stop accepting after this many sessions; `None` serves forever.
    pub max_sessions: Option<usize>,
    /// A session silent for this long is dropped.
    pub read_timeout: Duration,
    /// Seeds the per-session exploration streams.
    pub seed: u64,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            max_sessions: None,
            read_timeout: Duration::from_secs(30),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionOutcome {
    Clean,
    Refused(String),
    Dropped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub id: usize,
    pub robot_count: u32,
    pub experiences: u64,
    pub episodes: u64,
    pub outcome: SessionOutcome,
}

/// An episode finished by some worker, as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub session: usize,
    pub episode: u64,
    pub outcome: Terminal,
    pub ticks: u64,
    pub mean_return: f64,
    /// Mean learn-step loss since the previous summary, if any step ran.
    pub mean_loss: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ServeReport {
    pub sessions: Vec<SessionReport>,
    pub experiences: u64,
    pub learn_steps: u64,
}

struct Snapshot {
    policy: Policy,
    algorithm: Algorithm,
    exploration: Exploration,
}

enum Event {
    Experiences(Vec<Experience>),
    Snapshot(mpsc::Sender<Snapshot>),
    Episode(EpisodeSummary),
    Closed(SessionReport),
}

/// Serves rollout workers until the session limit is reached and every
/// session has closed.
pub fn serve_learner(listener: TcpListener, learner: &mut Learner, options: &ServeOptions) -> Result<ServeReport> {
    serve_learner_with(listener, learner, options, |_, _| Ok(()))
}

/// [`serve_learner`] with a callback after every finished episode. An error
/// from the callback stops accepting new sessions and is returned once the
/// open ones close.
pub fn serve_learner_with<F>(
    listener: TcpListener,
    learner: &mut Learner,
    options: &ServeOptions,
    mut on_episode: F,
) -> Result<ServeReport>
where
    F: FnMut(&Learner, &EpisodeSummary) -> Result<()>,
{
    let (tx, rx) = mpsc::channel::<Event>();
    let accept_opts = options.clone();
    let acceptor = thread::spawn(move || accept_loop(listener, tx, accept_opts));

    let mut report = ServeReport::default();
    let mut loss_sum = 0.0;
    let mut loss_count = 0u64;
    let mut failure = None;
    while let Ok(event) = rx.recv() {
        match event {
            Event::Experiences(batch) => {
                report.experiences += batch.len() as u64;
                learner.insert(batch);
                if let Some(loss) = learner.learn_step()? {
                    report.learn_steps += 1;
                    loss_sum += loss;
                    loss_count += 1;
                }
            }
            Event::Snapshot(reply) => {
                let _ = reply.send(Snapshot {
                    policy: learner.agent.policy(),
                    algorithm: learner.agent.algorithm(),
                    exploration: learner.exploration(),
                });
            }
            Event::Episode(mut summary) => {
                summary.mean_loss = (loss_count > 0).then(|| loss_sum / loss_count as f64);
                loss_sum = 0.0;
                loss_count = 0;
                if failure.is_none() {
                    if let Err(e) = on_episode(learner, &summary) {
                        failure = Some(e);
                    }
                }
            }
            Event::Closed(session) => report.sessions.push(session),
        }
    }
    let _ = acceptor.join();
    report.sessions.sort_by_key(|s| s.id);
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

fn accept_loop(listener: TcpListener, tx: mpsc::Sender<Event>, options: ServeOptions) {
    let limit = options.max_sessions.unwrap_or(usize::MAX);
    let mut sessions = Vec::new();
    for (id, stream) in listener.incoming().take(limit).enumerate() {
        let Ok(stream) = stream else { continue };
        let tx = tx.clone();
        let opts = options.clone();
        sessions.push(thread::spawn(move || {
            let report = run_session(id, stream, &tx, &opts);
            let _ = tx.send(Event::Closed(report));
        }));
    }
    for s in sessions {
        let _ = s.join();
    }
}

fn run_session(id: usize, stream: TcpStream, tx: &mpsc::Sender<Event>, options: &ServeOptions) -> SessionReport {
    let mut report = SessionReport {
        id,
        robot_count: 0,
        experiences: 0,
        episodes: 0,
        outcome: SessionOutcome::Clean,
    };
    report.outcome = match session_loop(&mut report, stream, tx, options) {
        Ok(outcome) => outcome,
        Err(e) => SessionOutcome::Dropped(e.to_string()),
    };
    report
}

fn request_snapshot(tx: &mpsc::Sender<Event>) -> Result<Snapshot> {
    let (reply_tx, reply_rx) = mpsc::channel();
    tx.send(Event::Snapshot(reply_tx))
        .map_err(|_| Error::Usage("learner has shut down".into()))?;
    reply_rx.recv().map_err(|_| Error::Usage("learner has shut down".into()))
}

fn send_snapshot<W: io::Write>(out: &mut W, snapshot: &Snapshot) -> Result<()> {
    write_message(
        out,
        &Message::ModelSnapshot {
            algorithm: snapshot.algorithm,
            network: snapshot.policy.network().clone(),
        },
    )
}

fn session_loop(
    report: &mut SessionReport,
    stream: TcpStream,
    tx: &mpsc::Sender<Event>,
    options: &ServeOptions,
) -> Result<SessionOutcome> {
    stream.set_read_timeout(Some(options.read_timeout))?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);

    match read_message(&mut reader)? {
        Message::Hello {
            robot_count,
            obs_layout_version,
        } => {
            report.robot_count = robot_count;
            if obs_layout_version != OBS_LAYOUT_VERSION {
                let reason = format!(
                    "observation layout version {obs_layout_version} does not match learner version {OBS_LAYOUT_VERSION}"
                );
                write_message(&mut writer, &Message::Bye { reason: reason.clone() })?;
                return Ok(SessionOutcome::Refused(reason));
            }
        }
        other => {
            return Ok(SessionOutcome::Dropped(format!(
                "expected HELLO, got {:?}",
                other.message_type()
            )))
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    rng.set_stream(report.id as u64);
    let mut snapshot = request_snapshot(tx)?;
    send_snapshot(&mut writer, &snapshot)?;

    loop {
        match read_message(&mut reader)? {
            Message::ObsBatch { observations, .. } => {
                let actions = snapshot.policy.act_batch(&observations, snapshot.exploration, &mut rng)?;
                write_message(&mut writer, &Message::ActionBatch { actions })?;
            }
            Message::ExperienceBatch { experiences } => {
                report.experiences += experiences.len() as u64;
                tx.send(Event::Experiences(experiences))
                    .map_err(|_| Error::Usage("learner has shut down".into()))?;
            }
            Message::EpisodeEvent {
                phase: EpisodePhase::Started,
                ..
            } => {}
            Message::EpisodeEvent {
                episode,
                phase: EpisodePhase::Finished,
                outcome,
                ticks,
                mean_return,
            } => {
                report.episodes += 1;
                let _ = tx.send(Event::Episode(EpisodeSummary {
                    session: report.id,
                    episode,
                    outcome,
                    ticks,
                    mean_return,
                    mean_loss: None,
                }));
                snapshot = request_snapshot(tx)?;
                send_snapshot(&mut writer, &snapshot)?;
            }
            Message::Bye { .. } => return Ok(SessionOutcome::Clean),
            other => {
                return Ok(SessionOutcome::Dropped(format!(
                    "unexpected {:?} from worker",
                    other.message_type()
                )))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkerOptions {
    pub scenario: ScenarioConfig,
    pub episodes: u64,
    /// Episode `k` is generated from stream `k` of this seed.
    pub seed: u64,
    /// Shrinks the gate opening by local episode index when set.
    pub curriculum: Option<Curriculum>,
    /// Total connection attempts, including the first.
    pub connect_attempts: u32,
    /// Delay before the first retry; doubled on each further retry.
    pub backoff: Duration,
    pub read_timeout: Duration,
    /// Sent in HELLO. Only changed to exercise refusal.
    pub obs_layout_version: u16,
}

impl WorkerOptions {
    pub fn new(scenario: ScenarioConfig, episodes: u64, seed: u64) -> Self {
        Self {
            scenario,
            episodes,
            seed,
            curriculum: None,
            connect_attempts: 5,
            backoff: Duration::from_millis(100),
            read_timeout: Duration::from_secs(30),
            obs_layout_version: OBS_LAYOUT_VERSION,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct WorkerReport {
    pub episodes: u64,
    pub successes: u64,
    pub experiences_sent: u64,
    pub snapshots_received: u64,
    pub reconnects: u32,
    pub last_snapshot: Option<(Algorithm, Network)>,
}

/// Runs `options.episodes` episodes against the learner at `endpoint`.
///
/// Connection failures and timeouts are retried with exponential backoff;
/// an interrupted episode is replayed from its start on the new session.
pub fn run_worker(endpoint: &str, options: &WorkerOptions) -> Result<WorkerReport> {
    options.scenario.validate()?;
    let mut report = WorkerReport::default();
    let mut attempts = 0u32;
    let mut delay = options.backoff;
    loop {
        attempts += 1;
        let err = match connect(endpoint, options) {
            Ok(stream) => match worker_session(stream, options, &mut report) {
                Ok(()) => return Ok(report),
                Err(Error::Io(e)) => Error::Io(e),
                Err(e) => return Err(e),
            },
            Err(e) => e,
        };
        if attempts >= options.connect_attempts.max(1) {
            return Err(err);
        }
        report.reconnects += 1;
        thread::sleep(delay);
        delay = delay.saturating_mul(2);
    }
}

fn connect(endpoint: &str, options: &WorkerOptions) -> Result<TcpStream> {
    let mut last = None;
    for addr in endpoint.to_socket_addrs()? {
        match TcpStream::connect_timeout(&addr, options.read_timeout) {
            Ok(s) => {
                s.set_read_timeout(Some(options.read_timeout))?;
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last
        .unwrap_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("{endpoint} resolves to nothing")))
        .into())
}

fn expect_snapshot(msg: Message, report: &mut WorkerReport) -> Result<()> {
    match msg {
        Message::ModelSnapshot { algorithm, network } => {
            report.snapshots_received += 1;
            report.last_snapshot = Some((algorithm, network));
            Ok(())
        }
        Message::Bye { reason } => Err(Error::Refused(reason)),
        other => Err(Error::Usage(format!(
            "expected MODEL_SNAPSHOT, got {:?}",
            other.message_type()
        ))),
    }
}

fn worker_session(stream: TcpStream, options: &WorkerOptions, report: &mut WorkerReport) -> Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    write_message(
        &mut writer,
        &Message::Hello {
            robot_count: options.scenario.robot_count as u32,
            obs_layout_version: options.obs_layout_version,
        },
    )?;
    expect_snapshot(read_message(&mut reader)?, report)?;

    while report.episodes < options.episodes {
        let k = report.episodes;
        let mut scenario = options.scenario.clone();
        if let Some(c) = &options.curriculum {
            scenario.gate_opening = c.opening(k);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(k);
        let mut episode = generate_scenario(&scenario, &mut rng)?;
        write_message(
            &mut writer,
            &Message::EpisodeEvent {
                episode: k,
                phase: EpisodePhase::Started,
                outcome: Terminal::Running,
                ticks: 0,
                mean_return: 0.0,
            },
        )?;
        let mut sent = 0;
        while episode.is_running() {
            let obs = episode.observations();
            write_message(
                &mut writer,
                &Message::ObsBatch {
                    tick: episode.tick(),
                    robots: obs.iter().map(|(i, _)| *i as u32).collect(),
                    observations: episode.observation_arrays(),
                },
            )?;
            let actions = match read_message(&mut reader)? {
                Message::ActionBatch { actions } => actions,
                Message::Bye { reason } => return Err(Error::Refused(reason)),
                other => {
                    return Err(Error::Usage(format!(
                        "expected ACTION_BATCH, got {:?}",
                        other.message_type()
                    )))
                }
            };
            let experiences = episode.step(&actions)?;
            sent += experiences.len() as u64;
            write_message(&mut writer, &Message::ExperienceBatch { experiences })?;
        }
        write_message(
            &mut writer,
            &Message::EpisodeEvent {
                episode: k,
                phase: EpisodePhase::Finished,
                outcome: episode.terminal,
                ticks: episode.tick(),
                mean_return: episode.mean_return(),
            },
        )?;
        expect_snapshot(read_message(&mut reader)?, report)?;
        report.experiences_sent += sent;
        report.episodes += 1;
        report.successes += (episode.terminal == Terminal::Success) as u64;
    }
    write_message(&mut writer, &Message::Bye { reason: "done".into() })?;
    Ok(())
}
