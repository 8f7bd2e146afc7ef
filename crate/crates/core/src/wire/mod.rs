//! Framed binary protocol between rollout workers and a learner.
//!
//! Every frame is
//!
//! ```text
//! magic "AGRL" | u16 version | u8 msg_type | u32 payload_length | payload | u32 crc32(payload)
//! ```
//!
//! with all integers and reals little-endian. Observations travel as 31
//! `f64` values in the layout of [`crate::sensing`].

mod codec;
mod session;

pub use codec::{
    decode, encode, read_message, write_message, EpisodePhase, Message, MessageType, ProtocolError,
    ProtocolErrorKind, CHECKSUM_LEN, HEADER_LEN, MAGIC, MAX_PAYLOAD, PROTOCOL_VERSION,
};
pub use session::{
    run_worker, serve_learner, serve_learner_with, EpisodeSummary, ServeOptions, ServeReport, SessionOutcome,
    SessionReport, WorkerOptions, WorkerReport,
};
