use std::io::{BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use agrl::env::ScenarioConfig;
use agrl::rl::{Algorithm, Hyperparameters, Learner};
use agrl::sensing::{OBS_DIM, OBS_LAYOUT_VERSION};
use agrl::wire::{
    decode, encode, read_message, run_worker, serve_learner, write_message, Message, ProtocolErrorKind, ServeOptions,
    ServeReport, SessionOutcome, WorkerOptions, HEADER_LEN,
};
use agrl::Error;

fn hyper() -> Hyperparameters {
    Hyperparameters {
        batch_size: 8,
        ..Hyperparameters::default()
    }
}

/// Short episodes that cannot reach the goal, so every episode lasts
/// exactly `ticks` ticks.
fn scenario(robots: usize, ticks: u64) -> ScenarioConfig {
    ScenarioConfig {
        robot_count: robots,
        time_limit: ticks,
        ..ScenarioConfig::default()
    }
}

fn start(sessions: usize, algorithm: Algorithm) -> (String, thread::JoinHandle<(ServeReport, Learner)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let handle = thread::spawn(move || {
        let mut learner = Learner::new(algorithm, hyper(), 3);
        let options = ServeOptions {
            max_sessions: Some(sessions),
            read_timeout: Duration::from_secs(10),
            seed: 3,
        };
        let report = serve_learner(listener, &mut learner, &options).unwrap();
        (report, learner)
    });
    (addr, handle)
}

#[test]
fn one_worker_conserves_experiences() {
    let (addr, server) = start(1, Algorithm::Dqn);
    let worker = run_worker(&addr, &WorkerOptions::new(scenario(5, 30), 1, 7)).unwrap();
    let (report, learner) = server.join().unwrap();
    assert_eq!(worker.episodes, 1);
    assert_eq!(worker.experiences_sent, 5 * 30);
    assert_eq!(report.experiences, 5 * 30);
    assert_eq!(learner.buffer.len(), 5 * 30);
    assert_eq!(report.sessions.len(), 1);
    assert_eq!(report.sessions[0].outcome, SessionOutcome::Clean);
    assert_eq!(report.sessions[0].robot_count, 5);
    // one snapshot after HELLO, one after the episode
    assert_eq!(worker.snapshots_received, 2);
    let (algorithm, net) = worker.last_snapshot.unwrap();
    assert_eq!(algorithm, Algorithm::Dqn);
    assert_eq!(&net, learner.agent.policy().network());
}

#[test]
fn two_workers_sum_their_streams() {
    let (addr, server) = start(2, Algorithm::Ddpg);
    let a = {
        let addr = addr.clone();
        thread::spawn(move || run_worker(&addr, &WorkerOptions::new(scenario(3, 20), 2, 1)).unwrap())
    };
    let b = run_worker(&addr, &WorkerOptions::new(scenario(6, 15), 1, 2)).unwrap();
    let a = a.join().unwrap();
    let (report, learner) = server.join().unwrap();
    assert_eq!(a.experiences_sent, 2 * 3 * 20);
    assert_eq!(b.experiences_sent, 6 * 15);
    assert_eq!(report.experiences, a.experiences_sent + b.experiences_sent);
    assert_eq!(learner.buffer.len() as u64, report.experiences);
    assert!(report.sessions.iter().all(|s| s.outcome == SessionOutcome::Clean));
    let mut per_session: Vec<u64> = report.sessions.iter().map(|s| s.experiences).collect();
    per_session.sort_unstable();
    assert_eq!(per_session, vec![90, 120]);
}

#[test]
fn layout_mismatch_is_refused() {
    let (addr, server) = start(1, Algorithm::Dqn);
    let mut options = WorkerOptions::new(scenario(4, 10), 1, 0);
    options.obs_layout_version = OBS_LAYOUT_VERSION + 1;
    let err = run_worker(&addr, &options).unwrap_err();
    assert!(matches!(err, Error::Refused(ref reason) if reason.contains("layout")), "{err}");
    let (report, learner) = server.join().unwrap();
    assert!(matches!(report.sessions[0].outcome, SessionOutcome::Refused(_)));
    assert!(learner.buffer.is_empty());
}

#[test]
fn malformed_frame_drops_only_its_session() {
    let (addr, server) = start(2, Algorithm::Dqn);
    let mut raw = TcpStream::connect(&addr).unwrap();
    write_message(
        &mut raw,
        &Message::Hello {
            robot_count: 4,
            obs_layout_version: OBS_LAYOUT_VERSION,
        },
    )
    .unwrap();
    let mut reader = BufReader::new(raw.try_clone().unwrap());
    assert!(matches!(read_message(&mut reader).unwrap(), Message::ModelSnapshot { .. }));
    let mut frame = encode(&Message::ObsBatch {
        tick: 0,
        robots: vec![0],
        observations: vec![[0.25; OBS_DIM]],
    });
    let last = frame.len() - 1;
    frame[last] ^= 0xFF;
    raw.write_all(&frame).unwrap();

    let good = run_worker(&addr, &WorkerOptions::new(scenario(4, 25), 1, 5)).unwrap();
    drop(raw);
    let (report, learner) = server.join().unwrap();
    let outcomes: Vec<&SessionOutcome> = report.sessions.iter().map(|s| &s.outcome).collect();
    assert_eq!(outcomes.iter().filter(|o| matches!(o, SessionOutcome::Dropped(_))).count(), 1, "{outcomes:?}");
    assert_eq!(outcomes.iter().filter(|o| **o == &SessionOutcome::Clean).count(), 1);
    assert_eq!(learner.buffer.len() as u64, good.experiences_sent);
}

#[test]
fn worker_retries_until_the_learner_appears() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let worker = {
        let addr = addr.clone();
        thread::spawn(move || {
            let mut options = WorkerOptions::new(scenario(2, 10), 1, 0);
            options.backoff = Duration::from_millis(50);
            options.connect_attempts = 8;
            run_worker(&addr, &options)
        })
    };
    thread::sleep(Duration::from_millis(120));
    let listener = TcpListener::bind(&addr).unwrap();
    let mut learner = Learner::new(Algorithm::Dqn, hyper(), 0);
    let options = ServeOptions {
        max_sessions: Some(1),
        ..ServeOptions::default()
    };
    let report = serve_learner(listener, &mut learner, &options).unwrap();
    let worker = worker.join().unwrap().unwrap();
    assert!(worker.reconnects >= 1);
    assert_eq!(report.experiences, 20);
}

#[test]
fn worker_gives_up_after_its_attempts() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut options = WorkerOptions::new(scenario(2, 10), 1, 0);
    options.backoff = Duration::from_millis(1);
    options.connect_attempts = 3;
    assert!(matches!(run_worker(&format!("127.0.0.1:{port}"), &options), Err(Error::Io(_))));
}

#[test]
fn frame_errors_carry_offsets() {
    let frame = encode(&Message::Bye { reason: "done".into() });
    let mut corrupt = frame.clone();
    corrupt[HEADER_LEN] ^= 1;
    let err = decode(&corrupt).unwrap_err();
    assert!(matches!(err.kind, ProtocolErrorKind::Checksum { .. }), "{err}");
    assert_eq!(err.offset, frame.len() - 4);

    let err = decode(&frame[..5]).unwrap_err();
    assert!(matches!(err.kind, ProtocolErrorKind::Truncated), "{err}");

    let mut bad_type = frame.clone();
    bad_type[6] = 42;
    assert_eq!(decode(&bad_type).unwrap_err().kind, ProtocolErrorKind::UnknownMessageType(42));
    assert_eq!(decode(&bad_type).unwrap_err().offset, 6);

    let mut version = frame;
    version[4] = 2;
    assert_eq!(decode(&version).unwrap_err().kind, ProtocolErrorKind::VersionMismatch(2));
}

#[test]
fn observation_batch_round_trip_is_bit_exact() {
    let observations: Vec<[f64; OBS_DIM]> = (0..4)
        .map(|r| std::array::from_fn(|i| (r * OBS_DIM + i) as f64 * 0.1 - 1.0 / 3.0))
        .collect();
    let m = Message::ObsBatch {
        tick: 12,
        robots: vec![0, 1, 2, 3],
        observations: observations.clone(),
    };
    let (back, _) = decode(&encode(&m)).unwrap();
    let Message::ObsBatch { observations: got, .. } = back else {
        panic!("wrong type")
    };
    for (a, b) in got.iter().flatten().zip(observations.iter().flatten()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
