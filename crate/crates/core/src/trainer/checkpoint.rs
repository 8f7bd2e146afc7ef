use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::rl::{Agent, Algorithm, Policy};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AGRC";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Training progress stored next to the networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub algorithm: Algorithm,
    /// Episodes completed when the checkpoint was taken.
    pub episode: u64,
    pub learn_steps: u64,
    pub actor_updates: u64,
    pub epsilon: f64,
    pub successes: u64,
    pub last_mean_return: f64,
}

/// A saved agent: every network (with its ADAM moments) plus metadata.
///
/// ```text
/// "AGRC" | u16 version | u32 meta_len | meta (JSON) | u32 network_count | network records
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub networks: Vec<Network>,
}

impl Checkpoint {
    pub fn from_agent(agent: &Agent, meta: CheckpointMeta) -> Self {
        Self {
            networks: agent.networks().into_iter().cloned().collect(),
            meta,
        }
    }

    pub fn to_agent(&self) -> Result<Agent> {
        Agent::from_networks(
            self.meta.algorithm,
            self.networks.clone(),
            self.meta.learn_steps,
            self.meta.actor_updates,
        )
    }

    /// The acting network, ready to evaluate.
    pub fn policy(&self) -> Result<Policy> {
        let net = self
            .networks
            .first()
            .ok_or_else(|| Error::Checkpoint("checkpoint holds no networks".into()))?
            .clone();
        let policy = if self.meta.algorithm.is_value_based() {
            Policy::Greedy(net)
        } else {
            Policy::Actor(net)
        };
        policy.check_topology()?;
        Ok(policy)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata always serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.networks.len() as u32).to_le_bytes());
        for n in &self.networks {
            n.write_to(&mut out).expect("writing to a Vec cannot fail");
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |why: String| Error::Checkpoint(why);
        let take = |at: usize, n: usize| {
            bytes
                .get(at..at + n)
                .ok_or_else(|| bad(format!("truncated at byte {at}")))
        };
        if take(0, 4)? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let version = u16::from_le_bytes(take(4, 2)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = u32::from_le_bytes(take(6, 4)?.try_into().unwrap()) as usize;
        let meta: CheckpointMeta = serde_json::from_slice(take(10, meta_len)?)
            .map_err(|e| bad(format!("metadata: {e}")))?;
        let at = 10 + meta_len;
        let count = u32::from_le_bytes(take(at, 4)?.try_into().unwrap()) as usize;
        if count > 16 {
            return Err(bad(format!("implausible network count {count}")));
        }
        let mut cursor = &bytes[at + 4..];
        let mut networks = Vec::with_capacity(count);
        for _ in 0..count {
            networks.push(Network::read_from(&mut cursor)?);
        }
        if !cursor.is_empty() {
            return Err(bad(format!("{} trailing bytes", cursor.len())));
        }
        Ok(Self { meta, networks })
    }

    /// Writes atomically: a temporary file renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

/// `checkpoints/ep{N}.ckpt` files of a run, ordered by episode.
pub fn list_checkpoints(run_dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let dir = run_dir.join("checkpoints");
    let entries = match fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(n) = name
            .strip_prefix("ep")
            .and_then(|rest| rest.strip_suffix(".ckpt"))
            .and_then(|n| n.parse::<u64>().ok())
        {
            out.push((n, path));
        }
    }
    out.sort();
    Ok(out)
}
