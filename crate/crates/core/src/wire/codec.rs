use std::fmt;
use std::io::{self, Read, Write};

use crate::env::Terminal;
use crate::nn::Network;
use crate::rl::{Action, Algorithm, Experience};
use crate::sensing::OBS_DIM;

pub const MAGIC: [u8; 4] = *b"AGRL";
pub const PROTOCOL_VERSION: u16 = 1;
/// magic + version + msg_type + payload_length
pub const HEADER_LEN: usize = 4 + 2 + 1 + 4;
pub const CHECKSUM_LEN: usize = 4;
/// Upper bound on a single payload. A TD3 actor snapshot is about 3 MiB.
pub const MAX_PAYLOAD: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    ObsBatch = 1,
    ActionBatch = 2,
    ExperienceBatch = 3,
    ModelSnapshot = 4,
    EpisodeEvent = 5,
    Hello = 6,
    Bye = 7,
}

impl MessageType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::ObsBatch,
            2 => Self::ActionBatch,
            3 => Self::ExperienceBatch,
            4 => Self::ModelSnapshot,
            5 => Self::EpisodeEvent,
            6 => Self::Hello,
            7 => Self::Bye,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolErrorKind {
    BadMagic([u8; 4]),
    VersionMismatch(u16),
    UnknownMessageType(u8),
    PayloadTooLarge(u32),
    Truncated,
    Checksum { expected: u32, actual: u32 },
    Malformed(String),
}

impl fmt::Display for ProtocolErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadMagic(m) => write!(f, "bad magic {m:02x?}"),
            Self::VersionMismatch(v) => write!(f, "protocol version {v}, expected {PROTOCOL_VERSION}"),
            Self::UnknownMessageType(t) => write!(f, "unknown message type {t}"),
            Self::PayloadTooLarge(n) => write!(f, "payload of {n} bytes exceeds {MAX_PAYLOAD}"),
            Self::Truncated => f.write_str("truncated frame"),
            Self::Checksum { expected, actual } => {
                write!(f, "checksum mismatch: frame says {expected:08x}, payload hashes to {actual:08x}")
            }
            Self::Malformed(why) => write!(f, "malformed payload: {why}"),
        }
    }
}

/// A frame that cannot be decoded. `offset` is the byte position, from the
/// start of the frame, where decoding gave up.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("protocol error at byte {offset}: {kind}")]
pub struct ProtocolError {
    pub offset: usize,
    pub kind: ProtocolErrorKind,
}

impl ProtocolError {
    fn new(offset: usize, kind: ProtocolErrorKind) -> Self {
        Self { offset, kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodePhase {
    Started = 0,
    Finished = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Observations of the active robots at `tick`, in robot index order.
    ObsBatch {
        tick: u64,
        robots: Vec<u32>,
        observations: Vec<[f64; OBS_DIM]>,
    },
    ActionBatch { actions: Vec<Action> },
    ExperienceBatch { experiences: Vec<Experience> },
    ModelSnapshot { algorithm: Algorithm, network: Network },
    EpisodeEvent {
        episode: u64,
        phase: EpisodePhase,
        outcome: Terminal,
        ticks: u64,
        mean_return: f64,
    },
    Hello { robot_count: u32, obs_layout_version: u16 },
    Bye { reason: String },
}

impl Message {
    pub fn message_type(&self) -> MessageType {
        match self {
            Message::ObsBatch { .. } => MessageType::ObsBatch,
            Message::ActionBatch { .. } => MessageType::ActionBatch,
            Message::ExperienceBatch { .. } => MessageType::ExperienceBatch,
            Message::ModelSnapshot { .. } => MessageType::ModelSnapshot,
            Message::EpisodeEvent { .. } => MessageType::EpisodeEvent,
            Message::Hello { .. } => MessageType::Hello,
            Message::Bye { .. } => MessageType::Bye,
        }
    }
}

/// Serializes `message` as one complete frame.
pub fn encode(message: &Message) -> Vec<u8> {
    let mut p = Vec::new();
    match message {
        Message::ObsBatch {
            tick,
            robots,
            observations,
        } => {
            p.extend_from_slice(&tick.to_le_bytes());
            p.extend_from_slice(&(robots.len() as u32).to_le_bytes());
            for r in robots {
                p.extend_from_slice(&r.to_le_bytes());
            }
            p.extend_from_slice(&(observations.len() as u32).to_le_bytes());
            for o in observations {
                put_reals(&mut p, o);
            }
        }
        Message::ActionBatch { actions } => {
            p.extend_from_slice(&(actions.len() as u32).to_le_bytes());
            for a in actions {
                put_action(&mut p, a);
            }
        }
        Message::ExperienceBatch { experiences } => {
            p.extend_from_slice(&(experiences.len() as u32).to_le_bytes());
            for e in experiences {
                put_reals(&mut p, &e.observation);
                put_action(&mut p, &e.action);
                p.extend_from_slice(&e.reward.to_le_bytes());
                put_reals(&mut p, &e.next_observation);
                p.push(e.terminal as u8);
            }
        }
        Message::ModelSnapshot { algorithm, network } => {
            p.push(algorithm.code());
            network.write_to(&mut p).expect("writing to a Vec cannot fail");
        }
        Message::EpisodeEvent {
            episode,
            phase,
            outcome,
            ticks,
            mean_return,
        } => {
            p.extend_from_slice(&episode.to_le_bytes());
            p.push(*phase as u8);
            p.push(terminal_code(*outcome));
            p.extend_from_slice(&ticks.to_le_bytes());
            p.extend_from_slice(&mean_return.to_le_bytes());
        }
        Message::Hello {
            robot_count,
            obs_layout_version,
        } => {
            p.extend_from_slice(&robot_count.to_le_bytes());
            p.extend_from_slice(&obs_layout_version.to_le_bytes());
        }
        Message::Bye { reason } => {
            p.extend_from_slice(&(reason.len() as u32).to_le_bytes());
            p.extend_from_slice(reason.as_bytes());
        }
    }
    frame(message.message_type(), &p)
}

fn frame(msg_type: MessageType, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CHECKSUM_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
    out.push(msg_type as u8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out
}

/// Checks the fixed header and returns the message type and payload length.
fn parse_header(bytes: &[u8]) -> Result<(MessageType, usize), ProtocolError> {
    let need = |n: usize| {
        if bytes.len() < n {
            Err(ProtocolError::new(bytes.len(), ProtocolErrorKind::Truncated))
        } else {
            Ok(())
        }
    };
    need(4)?;
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(ProtocolError::new(0, ProtocolErrorKind::BadMagic(magic)));
    }
    need(6)?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != PROTOCOL_VERSION {
        return Err(ProtocolError::new(4, ProtocolErrorKind::VersionMismatch(version)));
    }
    need(7)?;
    let msg_type = MessageType::from_u8(bytes[6])
        .ok_or_else(|| ProtocolError::new(6, ProtocolErrorKind::UnknownMessageType(bytes[6])))?;
    need(HEADER_LEN)?;
    let len = u32::from_le_bytes(bytes[7..11].try_into().unwrap());
    if len as usize > MAX_PAYLOAD {
        return Err(ProtocolError::new(7, ProtocolErrorKind::PayloadTooLarge(len)));
    }
    Ok((msg_type, len as usize))
}

/// Decodes the first frame in `bytes`. Returns the message and the number of
/// bytes it occupied.
pub fn decode(bytes: &[u8]) -> Result<(Message, usize), ProtocolError> {
    let (msg_type, len) = parse_header(bytes)?;
    let total = HEADER_LEN + len + CHECKSUM_LEN;
    if bytes.len() < total {
        return Err(ProtocolError::new(bytes.len(), ProtocolErrorKind::Truncated));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + len];
    let expected = u32::from_le_bytes(bytes[HEADER_LEN + len..total].try_into().unwrap());
    let actual = crc32fast::hash(payload);
    if expected != actual {
        return Err(ProtocolError::new(
            HEADER_LEN + len,
            ProtocolErrorKind::Checksum { expected, actual },
        ));
    }
    let message = decode_payload(msg_type, payload)?;
    Ok((message, total))
}

/// Reads exactly one frame. A clean end of stream before the first header
/// byte is reported as `UnexpectedEof`.
pub fn read_message<R: Read>(input: &mut R) -> crate::Result<Message> {
    let mut buf = vec![0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match input.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(0) => return Err(ProtocolError::new(filled, ProtocolErrorKind::Truncated).into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (_, len) = parse_header(&buf)?;
    buf.resize(HEADER_LEN + len + CHECKSUM_LEN, 0);
    let mut got = HEADER_LEN;
    while got < buf.len() {
        match input.read(&mut buf[got..]) {
            Ok(0) => return Err(ProtocolError::new(got, ProtocolErrorKind::Truncated).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(decode(&buf)?.0)
}

pub fn write_message<W: Write>(out: &mut W, message: &Message) -> crate::Result<()> {
    out.write_all(&encode(message))?;
    out.flush()?;
    Ok(())
}

fn put_reals(p: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        p.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_action(p: &mut Vec<u8>, action: &Action) {
    match *action {
        Action::Discrete(i) => {
            p.push(0);
            p.push(i);
        }
        Action::Continuous([l, r]) => {
            p.push(1);
            p.extend_from_slice(&l.to_le_bytes());
            p.extend_from_slice(&r.to_le_bytes());
        }
    }
}

fn terminal_code(t: Terminal) -> u8 {
    match t {
        Terminal::Running => 0,
        Terminal::Success => 1,
        Terminal::Timeout => 2,
    }
}

/// Cursor over a payload that reports errors at absolute frame offsets.
struct Payload<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Payload<'a> {
    fn offset(&self) -> usize {
        HEADER_LEN + self.pos
    }

    fn malformed(&self, why: impl Into<String>) -> ProtocolError {
        ProtocolError::new(self.offset(), ProtocolErrorKind::Malformed(why.into()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.malformed(format!(
                "needs {n} more bytes, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ProtocolError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.array::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, ProtocolError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// Element count, refused if the remaining bytes cannot hold it.
    fn count(&mut self, min_item: usize) -> Result<usize, ProtocolError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item) > self.bytes.len() - self.pos {
            return Err(self.malformed(format!("count {n} exceeds the payload")));
        }
        Ok(n)
    }

    fn reals(&mut self) -> Result<[f64; OBS_DIM], ProtocolError> {
        let mut out = [0.0; OBS_DIM];
        for v in &mut out {
            *v = self.f64()?;
        }
        Ok(out)
    }

    fn action(&mut self) -> Result<Action, ProtocolError> {
        match self.u8()? {
            0 => {
                let i = self.u8()?;
                if i >= 9 {
                    return Err(self.malformed(format!("discrete action {i} out of range")));
                }
                Ok(Action::Discrete(i))
            }
            1 => Ok(Action::Continuous([self.f64()?, self.f64()?])),
            k => Err(self.malformed(format!("unknown action kind {k}"))),
        }
    }

    fn finish(&self) -> Result<(), ProtocolError> {
        if self.pos != self.bytes.len() {
            return Err(self.malformed(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn decode_payload(msg_type: MessageType, bytes: &[u8]) -> Result<Message, ProtocolError> {
    let mut p = Payload { bytes, pos: 0 };
    let message = match msg_type {
        MessageType::ObsBatch => {
            let tick = p.u64()?;
            let n = p.count(4)?;
            let robots = (0..n).map(|_| p.u32()).collect::<Result<Vec<_>, _>>()?;
            let m = p.count(8 * OBS_DIM)?;
            let observations = (0..m).map(|_| p.reals()).collect::<Result<Vec<_>, _>>()?;
            Message::ObsBatch {
                tick,
                robots,
                observations,
            }
        }
        MessageType::ActionBatch => {
            let n = p.count(2)?;
            let actions = (0..n).map(|_| p.action()).collect::<Result<Vec<_>, _>>()?;
            Message::ActionBatch { actions }
        }
        MessageType::ExperienceBatch => {
            let n = p.count(8 * (2 * OBS_DIM + 1) + 3)?;
            let mut experiences = Vec::with_capacity(n);
            for _ in 0..n {
                let observation = p.reals()?;
                let action = p.action()?;
                let reward = p.f64()?;
                let next_observation = p.reals()?;
                let terminal = match p.u8()? {
                    0 => false,
                    1 => true,
                    b => return Err(p.malformed(format!("terminal flag {b}"))),
                };
                experiences.push(Experience {
                    observation,
                    action,
                    reward,
                    next_observation,
                    terminal,
                });
            }
            Message::ExperienceBatch { experiences }
        }
        MessageType::ModelSnapshot => {
            let code = p.u8()?;
            let algorithm = Algorithm::from_code(code)
                .ok_or_else(|| p.malformed(format!("unknown algorithm code {code}")))?;
            let rest = p.take(bytes.len() - p.pos)?;
            let network = Network::from_bytes(rest)
                .map_err(|e| ProtocolError::new(HEADER_LEN + 1, ProtocolErrorKind::Malformed(e.to_string())))?;
            Message::ModelSnapshot { algorithm, network }
        }
        MessageType::EpisodeEvent => {
            let episode = p.u64()?;
            let phase = match p.u8()? {
                0 => EpisodePhase::Started,
                1 => EpisodePhase::Finished,
                b => return Err(p.malformed(format!("unknown episode phase {b}"))),
            };
            let outcome = match p.u8()? {
                0 => Terminal::Running,
                1 => Terminal::Success,
                2 => Terminal::Timeout,
                b => return Err(p.malformed(format!("unknown episode outcome {b}"))),
            };
            Message::EpisodeEvent {
                episode,
                phase,
                outcome,
                ticks: p.u64()?,
                mean_return: p.f64()?,
            }
        }
        MessageType::Hello => Message::Hello {
            robot_count: p.u32()?,
            obs_layout_version: u16::from_le_bytes(p.array()?),
        },
        MessageType::Bye => {
            let n = p.count(1)?;
            let start = p.offset();
            let reason = std::str::from_utf8(p.take(n)?)
                .map_err(|_| ProtocolError::new(start, ProtocolErrorKind::Malformed("reason is not UTF-8".into())))?
                .to_owned();
            Message::Bye { reason }
        }
    };
    p.finish()?;
    Ok(message)
}
