//! Hash-chained, file-backed ballot ledger with quorum replication.
//!
//! One administration node orders ballots into blocks and offers each block
//! to a set of candidate verifier nodes. Every verifier independently checks
//! the hashes, the chain link, and the one-pseudonym-once rule before
//! acknowledging. A block is committed (written by the administration node
//! and by every acknowledging verifier) only once `ack_quorum` verifiers
//! have acknowledged it; otherwise nothing is written anywhere.
//!
//! Each node persists its chain as an append-only file of frames:
//! `[u32 big-endian length][canonical block bytes]`.

mod codec;
mod node;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::schema::EncryptedBatch;

pub use node::{verify_chain_bytes, ChainFailure, VerificationReport};
use node::{ChainStore, FrameMeta, VerifierNode};

/// Raw SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        hex::decode(s).ok()?.try_into().ok().map(Digest)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex characters"))
    }
}

pub type CandidateId = String;

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BallotRecord {
    pub receipt_id: String,
    pub voter_pseudonym: Digest,
    pub batch: EncryptedBatch,
    pub vote: CandidateId,
    /// UTC milliseconds since the epoch.
    pub cast_at: u64,
}

impl BallotRecord {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        codec::encode_record(self)
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub index: u64,
    pub prev_hash: Digest,
    pub records: Vec<BallotRecord>,
    pub payload_hash: Digest,
    pub block_hash: Digest,
    pub sealed_at: u64,
}

impl Block {
    /// Computes both hashes and returns a sealed block.
    pub fn seal(index: u64, prev_hash: Digest, records: Vec<BallotRecord>, sealed_at: u64) -> Self {
        let payload_hash = Digest::of(&codec::encode_payload(&records));
        let block_hash = Self::header_hash(index, &prev_hash, &payload_hash, sealed_at);
        Self {
            index,
            prev_hash,
            records,
            payload_hash,
            block_hash,
            sealed_at,
        }
    }

    pub fn genesis(sealed_at: u64) -> Self {
        Self::seal(0, Digest::ZERO, Vec::new(), sealed_at)
    }

    fn header_hash(index: u64, prev: &Digest, payload: &Digest, sealed_at: u64) -> Digest {
        Digest::of(&codec::encode_header(index, prev, payload, sealed_at))
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        codec::encode_block(self)
    }

    /// Re-derives both hashes from the block's contents.
    pub fn check_hashes(&self) -> std::result::Result<(), ChainFailure> {
        if Digest::of(&codec::encode_payload(&self.records)) != self.payload_hash {
            return Err(ChainFailure::PayloadHash);
        }
        let expected = Self::header_hash(
            self.index,
            &self.prev_hash,
            &self.payload_hash,
            self.sealed_at,
        );
        if expected != self.block_hash {
            return Err(ChainFailure::BlockHash);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub receipt_id: String,
    pub block_index: u64,
    pub record_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSet {
    pub admin_node: String,
    pub candidate_nodes: Vec<String>,
    pub ack_quorum: usize,
}

impl NodeSet {
    /// One verifier node per candidate, majority quorum.
    pub fn for_candidates(count: usize) -> Self {
        let candidate_nodes = (0..count).map(|i| format!("node-{i}")).collect::<Vec<_>>();
        Self {
            admin_node: "admin".into(),
            ack_quorum: Self::majority(candidate_nodes.len()),
            candidate_nodes,
        }
    }

    pub fn majority(nodes: usize) -> usize {
        nodes / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for id in std::iter::once(&self.admin_node).chain(&self.candidate_nodes) {
            let ok = !id.is_empty()
                && id
                    .bytes()
                    .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
            if !ok {
                return Err(LedgerError::Config(format!("invalid node id {id:?}")));
            }
            if !ids.insert(id) {
                return Err(LedgerError::Config(format!("duplicate node id {id:?}")));
            }
        }
        if self.candidate_nodes.is_empty() {
            return Err(LedgerError::Config(
                "at least one candidate node is required".into(),
            ));
        }
        if self.ack_quorum == 0 || self.ack_quorum > self.candidate_nodes.len() {
            return Err(LedgerError::Config(format!(
                "ack_quorum must be between 1 and {}",
                self.candidate_nodes.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LedgerConfig {
    pub dir: PathBuf,
    pub candidates: Vec<CandidateId>,
    pub nodes: NodeSet,
    /// Upper bound on records sealed into one block by [`Ledger::append_ballots`].
    pub records_per_block: usize,
    /// `fsync` every frame on every node.
    pub sync_writes: bool,
}

impl LedgerConfig {
    pub fn new(dir: impl Into<PathBuf>, candidates: Vec<CandidateId>) -> Self {
        let nodes = NodeSet::for_candidates(candidates.len());
        Self {
            dir: dir.into(),
            candidates,
            nodes,
            records_per_block: 1,
            sync_writes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub node: String,
    pub reason: String,
}

/// Outcome of offering one block to the verifier nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AckSet {
    pub block_index: u64,
    pub block_hash: Digest,
    pub acks: Vec<String>,
    pub rejections: Vec<Rejection>,
    pub unreachable: Vec<String>,
}

impl AckSet {
    pub fn reached(&self, quorum: usize) -> bool {
        self.acks.len() >= quorum
    }
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("already voted")]
    AlreadyVoted,
    #[error("invalid vote: unknown candidate {0:?}")]
    InvalidVote(String),
    #[error("duplicate receipt id {0:?}")]
    DuplicateReceipt(String),
    #[error("replication failed: {acks} of {needed} required acknowledgments")]
    ReplicationFailed {
        acks: usize,
        needed: usize,
        ack_set: Box<AckSet>,
    },
    #[error("unknown receipt")]
    UnknownReceipt,
    #[error("digest mismatch")]
    DigestMismatch,
    #[error("ledger at {path} failed verification: {report}")]
    Corrupt {
        path: PathBuf,
        report: VerificationReport,
    },
    #[error("malformed ledger data: {0}")]
    Malformed(String),
    #[error("ledger configuration: {0}")]
    Config(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LedgerError>;

#[derive(Debug, Default)]
struct ChainIndex {
    frames: Vec<FrameMeta>,
    receipts: HashMap<String, u64>,
    pseudonyms: HashSet<Digest>,
    head: Digest,
    record_count: u64,
}

impl ChainIndex {
    fn add_block(&mut self, block: &Block, frame: FrameMeta) {
        for r in &block.records {
            self.receipts.insert(r.receipt_id.clone(), block.index);
            self.pseudonyms.insert(r.voter_pseudonym);
        }
        self.record_count += block.records.len() as u64;
        self.head = block.block_hash;
        self.frames.push(frame);
    }
}

/// The administration node's view of the ledger plus its verifier replicas.
pub struct Ledger {
    candidates: HashSet<CandidateId>,
    nodes: NodeSet,
    records_per_block: usize,
    admin_path: PathBuf,
    index: RwLock<ChainIndex>,
    writer: Mutex<WriterState>,
}

struct WriterState {
    admin: ChainStore,
    replicas: Vec<VerifierNode>,
}

impl fmt::Debug for Ledger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ledger")
            .field("admin_path", &self.admin_path)
            .field("height", &self.height())
            .finish_non_exhaustive()
    }
}

impl Ledger {
    /// Opens the ledger in `config.dir`, creating a genesis block on first
    /// use. The administration chain must verify; replicas that are missing,
    /// damaged, or diverged are rebuilt from it.
    pub fn open(config: LedgerConfig) -> Result<Self> {
        config.nodes.validate()?;
        if config.candidates.is_empty() {
            return Err(LedgerError::Config("no candidates registered".into()));
        }
        if config.records_per_block == 0 {
            return Err(LedgerError::Config(
                "records_per_block must be positive".into(),
            ));
        }
        std::fs::create_dir_all(&config.dir)?;
        let admin_path = chain_path(&config.dir, &config.nodes.admin_node);

        let (mut admin, blocks) = ChainStore::open(&admin_path, config.sync_writes)?;
        let mut index = ChainIndex::default();
        if blocks.is_empty() {
            let genesis = Block::genesis(now_millis());
            let frame = admin.append(&genesis)?;
            index.add_block(&genesis, frame);
        } else {
            for (block, frame) in blocks.iter().zip(admin.frames()) {
                index.add_block(block, *frame);
            }
        }

        let mut replicas = Vec::with_capacity(config.nodes.candidate_nodes.len());
        for id in &config.nodes.candidate_nodes {
            let path = chain_path(&config.dir, id);
            replicas.push(VerifierNode::open(id.clone(), &path, config.sync_writes)?);
        }

        let ledger = Self {
            candidates: config.candidates.into_iter().collect(),
            nodes: config.nodes,
            records_per_block: config.records_per_block,
            admin_path,
            index: RwLock::new(index),
            writer: Mutex::new(WriterState { admin, replicas }),
        };
        {
            let mut w = ledger.writer.lock().unwrap();
            let WriterState { admin, replicas } = &mut *w;
            for node in replicas.iter_mut() {
                node.catch_up(admin)?;
            }
        }
        Ok(ledger)
    }

    pub fn node_set(&self) -> &NodeSet {
        &self.nodes
    }

    pub fn admin_path(&self) -> &Path {
        &self.admin_path
    }

    /// Path of a node's chain file.
    pub fn node_path(&self, node_id: &str) -> Result<PathBuf> {
        if node_id == self.nodes.admin_node {
            return Ok(self.admin_path.clone());
        }
        let w = self.writer.lock().unwrap();
        w.replicas
            .iter()
            .find(|n| n.id() == node_id)
            .map(|n| n.path().to_path_buf())
            .ok_or_else(|| LedgerError::UnknownNode(node_id.to_string()))
    }

    /// Number of committed blocks, genesis included.
    pub fn height(&self) -> u64 {
        self.index.read().unwrap().frames.len() as u64
    }

    pub fn record_count(&self) -> u64 {
        self.index.read().unwrap().record_count
    }

    pub fn head_hash(&self) -> Digest {
        self.index.read().unwrap().head
    }

    pub fn has_voted(&self, pseudonym: &Digest) -> bool {
        self.index.read().unwrap().pseudonyms.contains(pseudonym)
    }

    /// Simulates a node becoming unreachable (`false`) or reachable again.
    /// A node coming back is caught up on its next contact.
    pub fn set_node_online(&self, node_id: &str, online: bool) -> Result<()> {
        let mut w = self.writer.lock().unwrap();
        let node = w
            .replicas
            .iter_mut()
            .find(|n| n.id() == node_id)
            .ok_or_else(|| LedgerError::UnknownNode(node_id.to_string()))?;
        node.set_online(online);
        Ok(())
    }

    /// Brings every reachable verifier up to the administration head.
    pub fn sync_replicas(&self) -> Result<()> {
        let mut w = self.writer.lock().unwrap();
        let WriterState { admin, replicas } = &mut *w;
        for node in replicas.iter_mut().filter(|n| n.is_online()) {
            node.catch_up(admin)?;
        }
        Ok(())
    }

    /// Seals one record into its own block and commits it.
    pub fn append_ballot(&self, record: BallotRecord) -> Result<Receipt> {
        let mut receipts = self.append_block(vec![record])?;
        Ok(receipts.pop().expect("one record, one receipt"))
    }

    /// Commits records in blocks of at most `records_per_block`. Stops at the
    /// first failure; receipts for blocks committed before it are discarded
    /// from the return value but remain on the chain.
    pub fn append_ballots(&self, records: Vec<BallotRecord>) -> Result<Vec<Receipt>> {
        let mut out = Vec::with_capacity(records.len());
        let mut records = records.into_iter().peekable();
        while records.peek().is_some() {
            let chunk: Vec<_> = records.by_ref().take(self.records_per_block).collect();
            out.extend(self.append_block(chunk)?);
        }
        Ok(out)
    }

    fn append_block(&self, records: Vec<BallotRecord>) -> Result<Vec<Receipt>> {
        let mut w = self.writer.lock().unwrap();

        let (index, prev) = {
            let idx = self.index.read().unwrap();
            let mut seen = HashSet::new();
            let mut ids = HashSet::new();
            for r in &records {
                if !self.candidates.contains(&r.vote) {
                    return Err(LedgerError::InvalidVote(r.vote.clone()));
                }
                if idx.pseudonyms.contains(&r.voter_pseudonym) || !seen.insert(r.voter_pseudonym) {
                    return Err(LedgerError::AlreadyVoted);
                }
                if idx.receipts.contains_key(&r.receipt_id) || !ids.insert(r.receipt_id.as_str()) {
                    return Err(LedgerError::DuplicateReceipt(r.receipt_id.clone()));
                }
            }
            (idx.frames.len() as u64, idx.head)
        };

        let block = Block::seal(index, prev, records, now_millis());
        let ack_set = Self::offer(&mut w, &block)?;
        if !ack_set.reached(self.nodes.ack_quorum) {
            return Err(LedgerError::ReplicationFailed {
                acks: ack_set.acks.len(),
                needed: self.nodes.ack_quorum,
                ack_set: Box::new(ack_set),
            });
        }

        let frame = w.admin.append(&block)?;
        for node in w.replicas.iter_mut() {
            if ack_set.acks.iter().any(|a| a == node.id()) {
                node.commit(&block)?;
            }
        }
        self.index.write().unwrap().add_block(&block, frame);

        Ok(block
            .records
            .iter()
            .map(|r| Receipt {
                receipt_id: r.receipt_id.clone(),
                block_index: block.index,
                record_digest: r.digest(),
            })
            .collect())
    }

    /// Offers `block` to every verifier without committing it. Lagging
    /// reachable verifiers are caught up first.
    pub fn replicate_block(&self, block: &Block) -> Result<AckSet> {
        let mut w = self.writer.lock().unwrap();
        Self::offer(&mut w, block)
    }

    fn offer(w: &mut WriterState, block: &Block) -> Result<AckSet> {
        let WriterState { admin, replicas } = w;
        let mut ack_set = AckSet {
            block_index: block.index,
            block_hash: block.block_hash,
            acks: Vec::new(),
            rejections: Vec::new(),
            unreachable: Vec::new(),
        };
        for node in replicas.iter_mut() {
            if !node.is_online() {
                ack_set.unreachable.push(node.id().to_string());
                continue;
            }
            node.catch_up(admin)?;
            match node.prepare(block) {
                Ok(()) => ack_set.acks.push(node.id().to_string()),
                Err(reason) => ack_set.rejections.push(Rejection {
                    node: node.id().to_string(),
                    reason: reason.to_string(),
                }),
            }
        }
        Ok(ack_set)
    }

    /// Fetches the committed record a receipt points at, re-reading it from
    /// the administration chain file and checking its digest.
    pub fn get_record(&self, receipt: &Receipt) -> Result<BallotRecord> {
        let frame = {
            let idx = self.index.read().unwrap();
            match idx.receipts.get(&receipt.receipt_id) {
                Some(&b) if b == receipt.block_index => idx.frames[b as usize],
                _ => return Err(LedgerError::UnknownReceipt),
            }
        };
        let bytes = read_frame(&self.admin_path, frame)?;
        let (block, _) = codec::decode_block(&bytes).map_err(|_| LedgerError::DigestMismatch)?;
        let record = block
            .records
            .into_iter()
            .find(|r| r.receipt_id == receipt.receipt_id)
            .ok_or(LedgerError::DigestMismatch)?;
        if record.digest() != receipt.record_digest {
            return Err(LedgerError::DigestMismatch);
        }
        Ok(record)
    }

    /// Rebuilds the receipt for a committed record.
    pub fn receipt_for(&self, record: &BallotRecord) -> Option<Receipt> {
        let idx = self.index.read().unwrap();
        idx.receipts.get(&record.receipt_id).map(|&b| Receipt {
            receipt_id: record.receipt_id.clone(),
            block_index: b,
            record_digest: record.digest(),
        })
    }

    /// Streams committed records in chain order, optionally only those cast
    /// for `filter`. Only blocks committed when the call starts are visited.
    pub fn iterate_records(&self, filter: Option<&str>) -> Result<RecordIter> {
        let frames = self.index.read().unwrap().frames.clone();
        let file = File::open(&self.admin_path)?;
        Ok(RecordIter {
            reader: BufReader::with_capacity(1 << 16, file),
            frames: frames.into_iter(),
            pending: Vec::new().into_iter(),
            filter: filter.map(str::to_string),
            position: 0,
        })
    }

    /// Re-reads and fully re-verifies the administration chain file.
    pub fn verify_chain(&self) -> Result<VerificationReport> {
        let _guard = self.writer.lock().unwrap();
        Ok(verify_chain_bytes(&std::fs::read(&self.admin_path)?))
    }

    pub fn verify_node(&self, node_id: &str) -> Result<VerificationReport> {
        let path = self.node_path(node_id)?;
        let _guard = self.writer.lock().unwrap();
        Ok(verify_chain_bytes(&std::fs::read(path)?))
    }
}

pub fn chain_path(dir: &Path, node_id: &str) -> PathBuf {
    dir.join(format!("{node_id}.chain"))
}

fn read_frame(path: &Path, frame: FrameMeta) -> Result<Vec<u8>> {
    let mut f = File::open(path)?;
    f.seek(SeekFrom::Start(frame.offset + 4))?;
    let mut buf = vec![0u8; frame.len as usize];
    f.read_exact(&mut buf)
        .map_err(|_| LedgerError::DigestMismatch)?;
    Ok(buf)
}

pub struct RecordIter {
    reader: BufReader<File>,
    frames: std::vec::IntoIter<FrameMeta>,
    pending: std::vec::IntoIter<BallotRecord>,
    filter: Option<String>,
    position: u64,
}

impl RecordIter {
    fn next_block(&mut self) -> Option<Result<Block>> {
        let frame = self.frames.next()?;
        let res = (|| {
            if self.position != frame.offset {
                self.reader.seek(SeekFrom::Start(frame.offset))?;
            }
            let mut len = [0u8; 4];
            self.reader.read_exact(&mut len)?;
            let mut buf = vec![0u8; u32::from_be_bytes(len) as usize];
            self.reader.read_exact(&mut buf)?;
            self.position = frame.offset + 4 + buf.len() as u64;
            Ok(codec::decode_block(&buf)?.0)
        })();
        Some(res)
    }
}

impl Iterator for RecordIter {
    type Item = Result<BallotRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            for r in self.pending.by_ref() {
                if self.filter.as_deref().is_none_or(|f| f == r.vote) {
                    return Some(Ok(r));
                }
            }
            match self.next_block()? {
                Ok(block) => self.pending = block.records.into_iter(),
                Err(e) => return Some(Err(e)),
            }
        }
    }
}
