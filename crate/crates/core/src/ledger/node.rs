use std::collections::HashSet;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{codec, Block, Digest, LedgerError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct FrameMeta {
    pub offset: u64,
    pub len: u32,
    pub hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainFailure {
    /// The file ends inside a frame.
    BrokenTail,
    /// The frame does not decode canonically.
    Malformed,
    IndexMismatch,
    PrevHashMismatch,
    PayloadHash,
    BlockHash,
    GenesisNotEmpty,
    DuplicatePseudonym,
    /// No genesis block at all.
    Empty,
}

impl fmt::Display for ChainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ChainFailure::BrokenTail => "broken chain tail",
            ChainFailure::Malformed => "malformed block",
            ChainFailure::IndexMismatch => "block index mismatch",
            ChainFailure::PrevHashMismatch => "prev_hash does not match previous block",
            ChainFailure::PayloadHash => "payload hash mismatch",
            ChainFailure::BlockHash => "block hash mismatch",
            ChainFailure::GenesisNotEmpty => "genesis block carries records",
            ChainFailure::DuplicatePseudonym => "duplicate voter pseudonym",
            ChainFailure::Empty => "missing genesis block",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VerificationReport {
    Valid {
        blocks: u64,
        records: u64,
    },
    Invalid {
        block_index: u64,
        failure: ChainFailure,
    },
}

impl VerificationReport {
    pub fn is_valid(&self) -> bool {
        matches!(self, VerificationReport::Valid { .. })
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerificationReport::Valid { blocks, records } => {
                write!(f, "valid ({blocks} blocks, {records} records)")
            }
            VerificationReport::Invalid {
                block_index,
                failure,
            } => {
                write!(f, "invalid at block {block_index}: {failure}")
            }
        }
    }
}

/// Walks a chain file. `block_index` in a failure is the position of the
/// offending frame in the file.
pub fn verify_chain_bytes(bytes: &[u8]) -> VerificationReport {
    match scan(bytes) {
        Ok((blocks, _)) => VerificationReport::Valid {
            blocks: blocks.len() as u64,
            records: blocks.iter().map(|b| b.records.len() as u64).sum(),
        },
        Err(report) => report,
    }
}

/// Parses and verifies every frame.
fn scan(bytes: &[u8]) -> std::result::Result<(Vec<Block>, Vec<FrameMeta>), VerificationReport> {
    let mut blocks = Vec::new();
    let mut frames = Vec::new();
    let mut pseudonyms = HashSet::new();
    let mut prev = Digest::ZERO;
    let mut pos = 0usize;
    while pos < bytes.len() {
        let k = blocks.len() as u64;
        let fail = |failure| VerificationReport::Invalid {
            block_index: k,
            failure,
        };
        if bytes.len() - pos < 4 {
            return Err(fail(ChainFailure::BrokenTail));
        }
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap());
        let start = pos + 4;
        let end = start + len as usize;
        if end > bytes.len() {
            return Err(fail(ChainFailure::BrokenTail));
        }
        let (block, payload) =
            codec::decode_block(&bytes[start..end]).map_err(|_| fail(ChainFailure::Malformed))?;
        if block.index != k {
            return Err(fail(ChainFailure::IndexMismatch));
        }
        if block.prev_hash != prev {
            return Err(fail(ChainFailure::PrevHashMismatch));
        }
        if Digest::of(payload) != block.payload_hash {
            return Err(fail(ChainFailure::PayloadHash));
        }
        block.check_hashes().map_err(fail)?;
        if k == 0 && !block.records.is_empty() {
            return Err(fail(ChainFailure::GenesisNotEmpty));
        }
        for r in &block.records {
            if !pseudonyms.insert(r.voter_pseudonym) {
                return Err(fail(ChainFailure::DuplicatePseudonym));
            }
        }
        prev = block.block_hash;
        frames.push(FrameMeta {
            offset: pos as u64,
            len,
            hash: block.block_hash,
        });
        blocks.push(block);
        pos = end;
    }
    if blocks.is_empty() && !bytes.is_empty() {
        return Err(VerificationReport::Invalid {
            block_index: 0,
            failure: ChainFailure::Empty,
        });
    }
    Ok((blocks, frames))
}

/// One node's append-only chain file.
pub(crate) struct ChainStore {
    path: PathBuf,
    file: File,
    sync: bool,
    frames: Vec<FrameMeta>,
    end: u64,
}

impl ChainStore {
    /// Opens (or creates) the file and verifies its contents.
    pub fn open(path: &Path, sync: bool) -> Result<(Self, Vec<Block>)> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let (blocks, frames) = scan(&bytes).map_err(|report| LedgerError::Corrupt {
            path: path.to_path_buf(),
            report,
        })?;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                sync,
                frames,
                end: bytes.len() as u64,
            },
            blocks,
        ))
    }

    /// Discards the file contents and starts over empty.
    pub fn reset(path: &Path, sync: bool) -> Result<Self> {
        File::create(path)?;
        Ok(Self::open(path, sync)?.0)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn frames(&self) -> &[FrameMeta] {
        &self.frames
    }

    pub fn height(&self) -> u64 {
        self.frames.len() as u64
    }

    pub fn append(&mut self, block: &Block) -> Result<FrameMeta> {
        let body = block.canonical_bytes();
        let len = u32::try_from(body.len())
            .map_err(|_| LedgerError::Malformed("block larger than 4 GiB".into()))?;
        let mut frame = Vec::with_capacity(4 + body.len());
        frame.extend_from_slice(&len.to_be_bytes());
        frame.extend_from_slice(&body);
        self.file.write_all(&frame)?;
        if self.sync {
            self.file.sync_data()?;
        }
        let meta = FrameMeta {
            offset: self.end,
            len,
            hash: block.block_hash,
        };
        self.end += frame.len() as u64;
        self.frames.push(meta);
        Ok(meta)
    }

    pub fn read_block(&self, height: u64) -> Result<Block> {
        let frame = *self
            .frames
            .get(height as usize)
            .ok_or_else(|| LedgerError::Malformed(format!("no block {height}")))?;
        let bytes = super::read_frame(&self.path, frame)?;
        Ok(codec::decode_block(&bytes)?.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum PrepareError {
    Offline,
    Hash(ChainFailure),
    Gap { expected: u64, got: u64 },
    DuplicatePseudonym,
}

impl fmt::Display for PrepareError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrepareError::Offline => f.write_str("node unreachable"),
            PrepareError::Hash(failure) => write!(f, "{failure}"),
            PrepareError::Gap { expected, got } => {
                write!(f, "expected block {expected}, got {got}")
            }
            PrepareError::DuplicatePseudonym => f.write_str("duplicate voter pseudonym"),
        }
    }
}

/// A candidate's verifier node: keeps its own copy of the chain and checks
/// every offered block against it.
pub(crate) struct VerifierNode {
    id: String,
    store: ChainStore,
    head: Digest,
    pseudonyms: HashSet<Digest>,
    online: bool,
}

impl VerifierNode {
    pub fn open(id: String, path: &Path, sync: bool) -> Result<Self> {
        let (store, blocks) = match ChainStore::open(path, sync) {
            Ok(opened) => opened,
            // a replica is a copy; rebuild it from the administration chain
            Err(LedgerError::Corrupt { .. }) => (ChainStore::reset(path, sync)?, Vec::new()),
            Err(e) => return Err(e),
        };
        let head = blocks.last().map(|b| b.block_hash).unwrap_or(Digest::ZERO);
        let pseudonyms = blocks
            .iter()
            .flat_map(|b| b.records.iter().map(|r| r.voter_pseudonym))
            .collect();
        Ok(Self {
            id,
            store,
            head,
            pseudonyms,
            online: true,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn path(&self) -> &Path {
        self.store.path()
    }

    pub fn is_online(&self) -> bool {
        self.online
    }

    pub fn set_online(&mut self, online: bool) {
        self.online = online;
    }

    /// Independent validation of an offered block against this node's chain.
    pub fn prepare(&self, block: &Block) -> std::result::Result<(), PrepareError> {
        if !self.online {
            return Err(PrepareError::Offline);
        }
        if block.index != self.store.height() {
            return Err(PrepareError::Gap {
                expected: self.store.height(),
                got: block.index,
            });
        }
        if block.prev_hash != self.head {
            return Err(PrepareError::Hash(ChainFailure::PrevHashMismatch));
        }
        block.check_hashes().map_err(PrepareError::Hash)?;
        if block.index == 0 && !block.records.is_empty() {
            return Err(PrepareError::Hash(ChainFailure::GenesisNotEmpty));
        }
        let mut seen = HashSet::new();
        for r in &block.records {
            if self.pseudonyms.contains(&r.voter_pseudonym) || !seen.insert(r.voter_pseudonym) {
                return Err(PrepareError::DuplicatePseudonym);
            }
        }
        Ok(())
    }

    pub fn commit(&mut self, block: &Block) -> Result<()> {
        self.store.append(block)?;
        self.head = block.block_hash;
        self.pseudonyms
            .extend(block.records.iter().map(|r| r.voter_pseudonym));
        Ok(())
    }

    /// Copies any committed blocks this node is missing from `admin`. A node
    /// whose chain diverges from the administration chain is rebuilt.
    pub fn catch_up(&mut self, admin: &ChainStore) -> Result<()> {
        if !self.online {
            return Ok(());
        }
        let in_step = self.head_matches(admin);
        if in_step && self.store.height() == admin.height() {
            return Ok(());
        }
        if !in_step {
            self.store = ChainStore::reset(&self.store.path, self.store.sync)?;
            self.head = Digest::ZERO;
            self.pseudonyms.clear();
        }
        for h in self.store.height()..admin.height() {
            let block = admin.read_block(h)?;
            if let Err(e) = self.prepare(&block) {
                return Err(LedgerError::Malformed(format!(
                    "node {} refused committed block {h}: {e}",
                    self.id
                )));
            }
            self.commit(&block)?;
        }
        Ok(())
    }

    fn head_matches(&self, admin: &ChainStore) -> bool {
        match self.store.height() {
            0 => true,
            h => admin
                .frames()
                .get(h as usize - 1)
                .is_some_and(|f| f.hash == self.head),
        }
    }
}
