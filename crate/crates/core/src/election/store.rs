//! On-disk service state.
//!
//! `election.json` holds the small, rarely changing part (state, salt, tally)
//! and is replaced atomically. Voter mutations go to `voters.jsonl`, an
//! append-only journal replayed on startup. Neither file ever contains a
//! password or plaintext questionnaire answers.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::auth::PasswordHash;
use super::{ElectionState, TallyResult};
use crate::schema::EncryptedBatch;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ElectionFile {
    pub election_id: String,
    pub state: ElectionState,
    #[serde(with = "hex::serde")]
    pub election_salt: [u8; 16],
    pub tally: Option<TallyResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub(crate) enum VoterEvent {
    Registered {
        voter_id: String,
        password: PasswordHash,
    },
    Staged {
        voter_id: String,
        batch: EncryptedBatch,
    },
    Eligibility {
        voter_id: String,
        eligible: bool,
    },
}

pub(crate) struct Store {
    dir: PathBuf,
    journal: File,
    sync: bool,
    // held for the life of the store; one service per data directory
    _lock: File,
}

impl Store {
    pub fn open(dir: &Path, sync: bool) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join("lock"))?;
        lock.try_lock().map_err(|e| match e {
            std::fs::TryLockError::WouldBlock => std::io::Error::new(
                std::io::ErrorKind::WouldBlock,
                "data directory is in use by another process",
            ),
            std::fs::TryLockError::Error(e) => e,
        })?;
        let journal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("voters.jsonl"))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            journal,
            sync,
            _lock: lock,
        })
    }

    pub fn ledger_dir(&self) -> PathBuf {
        self.dir.join("ledger")
    }

    pub fn read_election(&self) -> std::io::Result<Option<ElectionFile>> {
        read_json(&self.dir.join("election.json"))
    }

    pub fn write_election(&self, file: &ElectionFile) -> std::io::Result<()> {
        write_json_atomic(&self.dir.join("election.json"), file, self.sync)
    }

    pub fn read_analysis<T: DeserializeOwned>(&self) -> std::io::Result<Option<T>> {
        read_json(&self.dir.join("analysis.json"))
    }

    pub fn write_analysis<T: Serialize>(&self, report: &T) -> std::io::Result<()> {
        write_json_atomic(&self.dir.join("analysis.json"), report, self.sync)
    }

    pub fn append_event(&mut self, event: &VoterEvent) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        self.journal.write_all(&line)?;
        if self.sync {
            self.journal.sync_data()?;
        }
        Ok(())
    }

    /// Replays the journal. A torn final line (crash mid-write) is ignored.
    pub fn read_events(&self) -> std::io::Result<Vec<VoterEvent>> {
        let file = File::open(self.dir.join("voters.jsonl"))?;
        let mut events = Vec::new();
        let mut lines = BufReader::new(file).lines().peekable();
        while let Some(line) = lines.next() {
            let line = line?;
            match serde_json::from_str(&line) {
                Ok(e) => events.push(e),
                Err(_) if lines.peek().is_none() => break,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(events)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> std::io::Result<Option<T>> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T, sync: bool) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&serde_json::to_vec_pretty(value)?)?;
        if sync {
            f.sync_all()?;
        }
    }
    std::fs::rename(tmp, path)
}
