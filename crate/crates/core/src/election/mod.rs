//! The administration server: registration, authentication, questionnaire
//! collection, vote casting, vote check-back, tallying, and analysis
//! orchestration.
//!
//! Lock order: election state, then the voter table, then one voter record,
//! then the ledger. Every mutation of a voter happens under that voter's
//! mutex, so concurrent requests for the same voter are serialized.

pub mod auth;
mod store;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, AnalysisReport, VerifiedLedger};
use crate::he::{Keypair, PublicKey, PublicKeyFile};
use crate::ledger::{
    now_millis, BallotRecord, CandidateId, Digest, Ledger, LedgerConfig, LedgerError, NodeSet,
    Receipt,
};
use crate::schema::{AnswerSet, EncryptedBatch, FactorSchema, SchemaError, Violation};
use auth::{credentials_match, PasswordHash, SessionToken};
use store::{ElectionFile, Store, VoterEvent};

/// Smallest modulus the service accepts.
pub const MIN_SERVICE_KEY_BITS: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectionState {
    Setup,
    Open,
    Closed,
    Tallied,
}

impl ElectionState {
    pub fn next(self) -> Option<Self> {
        match self {
            ElectionState::Setup => Some(ElectionState::Open),
            ElectionState::Open => Some(ElectionState::Closed),
            ElectionState::Closed => Some(ElectionState::Tallied),
            ElectionState::Tallied => None,
        }
    }
}

impl std::fmt::Display for ElectionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ElectionState::Setup => "setup",
            ElectionState::Open => "open",
            ElectionState::Closed => "closed",
            ElectionState::Tallied => "tallied",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("duplicate voter")]
    DuplicateVoter,
    #[error(
        "weak password: at least {} characters required",
        auth::MIN_PASSWORD_LEN
    )]
    WeakPassword,
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("invalid session")]
    InvalidSession,
    #[error("session expired")]
    SessionExpired,
    #[error("election not open")]
    ElectionNotOpen,
    #[error("election closed")]
    ElectionClosed,
    #[error("registration closed")]
    RegistrationClosed,
    #[error("election not closed")]
    ElectionNotClosed,
    #[error("election not tallied")]
    NotTallied,
    #[error("illegal transition from {from} to {to}")]
    IllegalTransition {
        from: ElectionState,
        to: ElectionState,
    },
    #[error("bad credential")]
    BadCredential,
    #[error("questionnaire required first")]
    QuestionnaireRequired,
    #[error("already voted")]
    AlreadyVoted,
    #[error("unknown candidate {0:?}")]
    UnknownCandidate(String),
    #[error("unknown voter")]
    UnknownVoter,
    #[error("no vote on record")]
    NoVoteOnRecord,
    #[error("digest mismatch: the ledger record for this receipt has been altered")]
    DigestMismatch,
    #[error("replication failed: vote not recorded")]
    ReplicationFailed,
    #[error("schema mismatch")]
    SchemaMismatch,
    #[error("invalid answers: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidAnswers(Vec<Violation>),
    #[error("invalid batch: {0}")]
    InvalidBatch(SchemaError),
    #[error("secret key does not match the election public key")]
    KeyMismatch,
    #[error("configuration: {0}")]
    Config(String),
    #[error("data directory is in use by another process")]
    DataDirInUse,
    #[error("ledger corrupted: {0}")]
    Corrupted(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub election_id: String,
    pub candidates: Vec<CandidateId>,
    pub schema: FactorSchema,
    pub public_key: PublicKey,
    pub data_dir: PathBuf,
    /// Defaults to one verifier per candidate with majority quorum.
    pub nodes: Option<NodeSet>,
    pub admin_token: String,
    pub session_ttl: Duration,
    pub password_iterations: u32,
    pub records_per_block: usize,
    pub sync_writes: bool,
}

impl ServiceConfig {
    pub fn new(
        election_id: impl Into<String>,
        candidates: Vec<CandidateId>,
        schema: FactorSchema,
        public_key: PublicKey,
        data_dir: impl Into<PathBuf>,
        admin_token: impl Into<String>,
    ) -> Self {
        Self {
            election_id: election_id.into(),
            candidates,
            schema,
            public_key,
            data_dir: data_dir.into(),
            nodes: None,
            admin_token: admin_token.into(),
            session_ttl: auth::DEFAULT_SESSION_TTL,
            password_iterations: auth::DEFAULT_PASSWORD_ITERATIONS,
            records_per_block: 1,
            sync_writes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VoterRecord {
    pub voter_id: String,
    pub password: PasswordHash,
    pub eligible: bool,
    pub staged_batch: Option<EncryptedBatch>,
    pub has_voted: bool,
    pub receipt: Option<Receipt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyResult {
    pub election_id: String,
    pub counts: BTreeMap<CandidateId, u64>,
    pub total: u64,
    pub tallied_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CastVoteView {
    pub vote: CandidateId,
    pub receipt: Receipt,
    pub cast_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKeyView {
    pub n: String,
    pub security_bits: u64,
    pub fingerprint: String,
}

/// What `GET /api/election` returns. Schema and key are published once the
/// election opens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectionView {
    pub election_id: String,
    pub state: ElectionState,
    pub candidates: Vec<CandidateId>,
    pub schema: Option<FactorSchema>,
    pub public_key: Option<PublicKeyView>,
}

pub struct ElectionService {
    election_id: String,
    candidates: Vec<CandidateId>,
    schema: FactorSchema,
    public_key: PublicKey,
    admin_token: String,
    session_ttl: Duration,
    password_iterations: u32,
    election_salt: [u8; 16],
    state: RwLock<ElectionState>,
    voters: RwLock<HashMap<String, Arc<Mutex<VoterRecord>>>>,
    sessions: Mutex<HashMap<String, SessionToken>>,
    store: Mutex<Store>,
    ledger: Ledger,
    tally: Mutex<Option<TallyResult>>,
    analysis: Mutex<Option<AnalysisReport>>,
    running: Mutex<BTreeMap<CandidateId, u64>>,
}

impl std::fmt::Debug for ElectionService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ElectionService")
            .field("election_id", &self.election_id)
            .field("state", &self.state())
            .finish_non_exhaustive()
    }
}

impl ElectionService {
    /// Opens (or initializes) the election stored under `config.data_dir`.
    pub fn open(config: ServiceConfig) -> Result<Self> {
        validate_config(&config)?;
        let store = Store::open(&config.data_dir, config.sync_writes).map_err(|e| {
            if e.kind() == std::io::ErrorKind::WouldBlock {
                ServiceError::DataDirInUse
            } else {
                e.into()
            }
        })?;

        let mut ledger_config = LedgerConfig::new(store.ledger_dir(), config.candidates.clone());
        if let Some(nodes) = &config.nodes {
            ledger_config.nodes = nodes.clone();
        }
        ledger_config.records_per_block = config.records_per_block;
        ledger_config.sync_writes = config.sync_writes;
        let ledger = Ledger::open(ledger_config)?;

        let election = match store.read_election()? {
            Some(file) if file.election_id != config.election_id => {
                return Err(ServiceError::Config(format!(
                    "data directory belongs to election {:?}",
                    file.election_id
                )))
            }
            Some(file) => file,
            None => {
                let mut salt = [0u8; 16];
                rand::RngCore::fill_bytes(&mut rand::rngs::OsRng, &mut salt);
                let file = ElectionFile {
                    election_id: config.election_id.clone(),
                    state: ElectionState::Setup,
                    election_salt: salt,
                    tally: None,
                };
                store.write_election(&file)?;
                file
            }
        };
        let analysis = store.read_analysis::<AnalysisReport>()?;

        let service = Self {
            election_id: config.election_id,
            candidates: config.candidates,
            schema: config.schema,
            public_key: config.public_key,
            admin_token: config.admin_token,
            session_ttl: config.session_ttl,
            password_iterations: config.password_iterations,
            election_salt: election.election_salt,
            state: RwLock::new(election.state),
            voters: RwLock::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
            store: Mutex::new(store),
            ledger,
            tally: Mutex::new(election.tally),
            analysis: Mutex::new(analysis),
            running: Mutex::new(BTreeMap::new()),
        };
        service.replay()?;
        Ok(service)
    }

    /// Rebuilds voter records from the journal, then takes `has_voted` and
    /// receipts from the ledger, which is authoritative for both.
    fn replay(&self) -> Result<()> {
        let events = self.store.lock().unwrap().read_events()?;
        let mut voters: HashMap<String, VoterRecord> = HashMap::new();
        for event in events {
            match event {
                VoterEvent::Registered { voter_id, password } => {
                    voters.insert(
                        voter_id.clone(),
                        VoterRecord {
                            voter_id,
                            password,
                            eligible: true,
                            staged_batch: None,
                            has_voted: false,
                            receipt: None,
                        },
                    );
                }
                VoterEvent::Staged { voter_id, batch } => {
                    if let Some(v) = voters.get_mut(&voter_id) {
                        v.staged_batch = Some(batch);
                    }
                }
                VoterEvent::Eligibility { voter_id, eligible } => {
                    if let Some(v) = voters.get_mut(&voter_id) {
                        v.eligible = eligible;
                    }
                }
            }
        }

        let mut receipts = HashMap::new();
        let mut running: BTreeMap<CandidateId, u64> =
            self.candidates.iter().map(|c| (c.clone(), 0)).collect();
        for record in self.ledger.iterate_records(None)? {
            let record = record?;
            *running.entry(record.vote.clone()).or_default() += 1;
            let receipt = self.ledger.receipt_for(&record).ok_or_else(|| {
                ServiceError::Corrupted(format!("record {} not indexed", record.receipt_id))
            })?;
            receipts.insert(record.voter_pseudonym, receipt);
        }
        for v in voters.values_mut() {
            if let Some(receipt) = receipts.get(&self.pseudonym(&v.voter_id)) {
                v.has_voted = true;
                v.receipt = Some(receipt.clone());
                v.staged_batch = None;
            }
        }

        *self.voters.write().unwrap() = voters
            .into_iter()
            .map(|(k, v)| (k, Arc::new(Mutex::new(v))))
            .collect();
        *self.running.lock().unwrap() = running;
        Ok(())
    }

    pub fn election_id(&self) -> &str {
        &self.election_id
    }

    pub fn candidates(&self) -> &[CandidateId] {
        &self.candidates
    }

    pub fn schema(&self) -> &FactorSchema {
        &self.schema
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public_key
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn state(&self) -> ElectionState {
        *self.state.read().unwrap()
    }

    /// `SHA-256(election_salt ∥ voter_id)`.
    pub fn pseudonym(&self, voter_id: &str) -> Digest {
        let mut buf = Vec::with_capacity(16 + voter_id.len());
        buf.extend_from_slice(&self.election_salt);
        buf.extend_from_slice(voter_id.as_bytes());
        Digest::of(&buf)
    }

    pub fn election_view(&self) -> ElectionView {
        let state = self.state();
        let published = state != ElectionState::Setup;
        ElectionView {
            election_id: self.election_id.clone(),
            state,
            candidates: self.candidates.clone(),
            schema: published.then(|| self.schema.clone()),
            public_key: published.then(|| {
                let file = PublicKeyFile::from_key(&self.public_key);
                PublicKeyView {
                    n: file.n,
                    security_bits: file.security_bits,
                    fingerprint: self.public_key.fingerprint().to_hex(),
                }
            }),
        }
    }

    /// Live per-candidate counts maintained while the election is open.
    /// Operational only; the published result comes from [`Self::tally_vote`].
    pub fn running_counts(&self) -> BTreeMap<CandidateId, u64> {
        self.running.lock().unwrap().clone()
    }

    pub fn voter(&self, voter_id: &str) -> Option<VoterRecord> {
        let voters = self.voters.read().unwrap();
        voters.get(voter_id).map(|v| v.lock().unwrap().clone())
    }

    fn voter_handle(&self, voter_id: &str) -> Result<Arc<Mutex<VoterRecord>>> {
        self.voters
            .read()
            .unwrap()
            .get(voter_id)
            .cloned()
            .ok_or(ServiceError::UnknownVoter)
    }

    fn check_admin(&self, credential: &str) -> Result<()> {
        if credentials_match(&self.admin_token, credential) {
            Ok(())
        } else {
            Err(ServiceError::BadCredential)
        }
    }

    // -- voter operations ---------------------------------------------------

    pub fn register_voter(&self, voter_id: &str, password: &str) -> Result<VoterRecord> {
        let state = self.state.read().unwrap();
        if !matches!(*state, ElectionState::Setup | ElectionState::Open) {
            return Err(ServiceError::RegistrationClosed);
        }
        if voter_id.is_empty() || voter_id.len() > 256 {
            return Err(ServiceError::Config(
                "voter id must be 1 to 256 bytes".into(),
            ));
        }
        if password.chars().count() < auth::MIN_PASSWORD_LEN {
            return Err(ServiceError::WeakPassword);
        }
        if self.voters.read().unwrap().contains_key(voter_id) {
            return Err(ServiceError::DuplicateVoter);
        }
        let hash = PasswordHash::new(password, self.password_iterations);
        let mut voters = self.voters.write().unwrap();
        if voters.contains_key(voter_id) {
            return Err(ServiceError::DuplicateVoter);
        }
        let record = VoterRecord {
            voter_id: voter_id.to_string(),
            password: hash.clone(),
            eligible: true,
            staged_batch: None,
            has_voted: false,
            receipt: None,
        };
        self.store
            .lock()
            .unwrap()
            .append_event(&VoterEvent::Registered {
                voter_id: voter_id.to_string(),
                password: hash,
            })?;
        voters.insert(voter_id.to_string(), Arc::new(Mutex::new(record.clone())));
        Ok(record)
    }

    /// Unknown voter, wrong password, and ineligible voter all fail the same way.
    pub fn verify_voter(&self, voter_id: &str, password: &str) -> Result<SessionToken> {
        let Ok(handle) = self.voter_handle(voter_id) else {
            PasswordHash::dummy_verify(password, self.password_iterations);
            return Err(ServiceError::AuthenticationFailed);
        };
        let (hash, eligible) = {
            let v = handle.lock().unwrap();
            (v.password.clone(), v.eligible)
        };
        if !hash.verify(password) || !eligible {
            return Err(ServiceError::AuthenticationFailed);
        }
        let token = SessionToken::issue(voter_id, self.session_ttl);
        self.sessions
            .lock()
            .unwrap()
            .insert(token.token.clone(), token.clone());
        Ok(token)
    }

    /// Resolves a bearer token to its voter id.
    pub fn authenticate(&self, token: &str) -> Result<String> {
        let mut sessions = self.sessions.lock().unwrap();
        let session = sessions.get(token).ok_or(ServiceError::InvalidSession)?;
        if session.is_expired(now_millis()) {
            sessions.remove(token);
            return Err(ServiceError::SessionExpired);
        }
        Ok(session.voter_id.clone())
    }

    pub fn set_eligibility(&self, admin: &str, voter_id: &str, eligible: bool) -> Result<()> {
        self.check_admin(admin)?;
        let handle = self.voter_handle(voter_id)?;
        let mut v = handle.lock().unwrap();
        self.store
            .lock()
            .unwrap()
            .append_event(&VoterEvent::Eligibility {
                voter_id: voter_id.to_string(),
                eligible,
            })?;
        v.eligible = eligible;
        Ok(())
    }

    fn require_open(state: ElectionState) -> Result<()> {
        match state {
            ElectionState::Open => Ok(()),
            ElectionState::Setup => Err(ServiceError::ElectionNotOpen),
            ElectionState::Closed | ElectionState::Tallied => Err(ServiceError::ElectionClosed),
        }
    }

    /// Stages an encrypted questionnaire batch, replacing any earlier one.
    pub fn collect_voter(&self, token: &str, batch: EncryptedBatch) -> Result<()> {
        let voter_id = self.authenticate(token)?;
        let state = self.state.read().unwrap();
        Self::require_open(*state)?;
        self.schema
            .check_batch(&self.public_key, &batch)
            .map_err(|e| match e {
                SchemaError::InvalidAnswers(_) => ServiceError::SchemaMismatch,
                other => ServiceError::InvalidBatch(other),
            })?;
        let handle = self.voter_handle(&voter_id)?;
        let mut v = handle.lock().unwrap();
        if v.has_voted {
            return Err(ServiceError::AlreadyVoted);
        }
        self.store
            .lock()
            .unwrap()
            .append_event(&VoterEvent::Staged {
                voter_id: voter_id.clone(),
                batch: batch.clone(),
            })?;
        v.staged_batch = Some(batch);
        Ok(())
    }

    /// Server-side encryption for clients that cannot encrypt. The answers
    /// are dropped as soon as the batch exists.
    pub fn collect_voter_plain(&self, token: &str, answers: AnswerSet) -> Result<()> {
        self.authenticate(token)?;
        let violations = self.schema.validate_answers(&answers);
        if violations
            .iter()
            .any(|v| matches!(v, Violation::SchemaMismatch { .. }))
        {
            return Err(ServiceError::SchemaMismatch);
        }
        if !violations.is_empty() {
            return Err(ServiceError::InvalidAnswers(violations));
        }
        let batch = self
            .schema
            .encrypt_batch(&self.public_key, &answers)
            .map_err(ServiceError::InvalidBatch)?;
        drop(answers);
        self.collect_voter(token, batch)
    }

    pub fn cast_vote(&self, token: &str, vote: &str) -> Result<Receipt> {
        let voter_id = self.authenticate(token)?;
        let state = self.state.read().unwrap();
        Self::require_open(*state)?;
        if !self.candidates.iter().any(|c| c == vote) {
            return Err(ServiceError::UnknownCandidate(vote.to_string()));
        }
        let handle = self.voter_handle(&voter_id)?;
        let mut v = handle.lock().unwrap();
        if v.has_voted {
            return Err(ServiceError::AlreadyVoted);
        }
        let batch = v
            .staged_batch
            .clone()
            .ok_or(ServiceError::QuestionnaireRequired)?;
        let record = BallotRecord {
            receipt_id: auth::random_token()[..32].to_string(),
            voter_pseudonym: self.pseudonym(&voter_id),
            batch,
            vote: vote.to_string(),
            cast_at: now_millis(),
        };
        let receipt = match self.ledger.append_ballot(record) {
            Ok(r) => r,
            Err(LedgerError::AlreadyVoted) => return Err(ServiceError::AlreadyVoted),
            Err(LedgerError::ReplicationFailed { .. }) => {
                return Err(ServiceError::ReplicationFailed)
            }
            Err(e) => return Err(e.into()),
        };
        v.has_voted = true;
        v.receipt = Some(receipt.clone());
        v.staged_batch = None;
        *self
            .running
            .lock()
            .unwrap()
            .entry(vote.to_string())
            .or_default() += 1;
        Ok(receipt)
    }

    pub fn check_vote(&self, token: &str) -> Result<CastVoteView> {
        let voter_id = self.authenticate(token)?;
        let handle = self.voter_handle(&voter_id)?;
        let receipt = handle
            .lock()
            .unwrap()
            .receipt
            .clone()
            .ok_or(ServiceError::NoVoteOnRecord)?;
        let record = match self.ledger.get_record(&receipt) {
            Ok(r) => r,
            Err(LedgerError::DigestMismatch | LedgerError::UnknownReceipt) => {
                return Err(ServiceError::DigestMismatch)
            }
            Err(e) => return Err(e.into()),
        };
        if record.voter_pseudonym != self.pseudonym(&voter_id) {
            return Err(ServiceError::DigestMismatch);
        }
        Ok(CastVoteView {
            vote: record.vote,
            receipt,
            cast_at: record.cast_at,
        })
    }

    // -- administration -----------------------------------------------------

    pub fn transition_election(&self, admin: &str, target: ElectionState) -> Result<ElectionView> {
        self.check_admin(admin)?;
        if target == ElectionState::Tallied {
            self.tally_vote(admin)?;
            return Ok(self.election_view());
        }
        {
            let mut state = self.state.write().unwrap();
            if state.next() != Some(target) {
                return Err(ServiceError::IllegalTransition {
                    from: *state,
                    to: target,
                });
            }
            self.persist_election(target, None)?;
            *state = target;
        }
        Ok(self.election_view())
    }

    fn persist_election(&self, state: ElectionState, tally: Option<TallyResult>) -> Result<()> {
        self.store.lock().unwrap().write_election(&ElectionFile {
            election_id: self.election_id.clone(),
            state,
            election_salt: self.election_salt,
            tally,
        })?;
        Ok(())
    }

    /// One plaintext pass over the committed ballots. Idempotent once tallied.
    pub fn tally_vote(&self, admin: &str) -> Result<TallyResult> {
        self.check_admin(admin)?;
        let mut state = self.state.write().unwrap();
        match *state {
            ElectionState::Tallied => {
                return self
                    .tally
                    .lock()
                    .unwrap()
                    .clone()
                    .ok_or_else(|| ServiceError::Corrupted("tallied without a result".into()))
            }
            ElectionState::Closed => {}
            _ => return Err(ServiceError::ElectionNotClosed),
        }
        let result = self.count_votes()?;
        self.persist_election(ElectionState::Tallied, Some(result.clone()))?;
        *self.tally.lock().unwrap() = Some(result.clone());
        *state = ElectionState::Tallied;
        Ok(result)
    }

    fn count_votes(&self) -> Result<TallyResult> {
        let mut counts: BTreeMap<CandidateId, u64> =
            self.candidates.iter().map(|c| (c.clone(), 0)).collect();
        let mut total = 0u64;
        for record in self.ledger.iterate_records(None)? {
            let record = record?;
            let slot = counts.get_mut(&record.vote).ok_or_else(|| {
                ServiceError::Corrupted(format!("ballot for unknown candidate {:?}", record.vote))
            })?;
            *slot += 1;
            total += 1;
        }
        if total != self.ledger.record_count() {
            return Err(ServiceError::Corrupted(format!(
                "counted {total} ballots, ledger holds {}",
                self.ledger.record_count()
            )));
        }
        Ok(TallyResult {
            election_id: self.election_id.clone(),
            counts,
            total,
            tallied_at: now_millis(),
        })
    }

    pub fn tally(&self) -> Option<TallyResult> {
        self.tally.lock().unwrap().clone()
    }

    /// Runs the encrypted demographic analysis with an operator-supplied
    /// secret key. Only allowed once the election is tallied.
    pub fn analyze(&self, secret_key: &Keypair) -> Result<AnalysisReport> {
        let tally = {
            let state = self.state.read().unwrap();
            if *state != ElectionState::Tallied {
                return Err(ServiceError::NotTallied);
            }
            self.tally()
                .ok_or_else(|| ServiceError::Corrupted("tallied without a result".into()))?
        };
        if secret_key.public_key() != &self.public_key {
            return Err(ServiceError::KeyMismatch);
        }
        let verified = VerifiedLedger::new(&self.ledger)?;
        let report = analysis::analyze_voters(
            &verified,
            &self.schema,
            &self.candidates,
            &tally,
            secret_key,
        )?;
        self.store.lock().unwrap().write_analysis(&report)?;
        *self.analysis.lock().unwrap() = Some(report.clone());
        Ok(report)
    }

    pub fn analysis_report(&self) -> Option<AnalysisReport> {
        let mut cached = self.analysis.lock().unwrap();
        if cached.is_none() {
            // written by an offline `analyze` run
            if let Ok(Some(report)) = self.store.lock().unwrap().read_analysis() {
                *cached = Some(report);
            }
        }
        cached.clone()
    }
}

fn validate_config(config: &ServiceConfig) -> Result<()> {
    if config.candidates.is_empty() {
        return Err(ServiceError::Config(
            "at least one candidate is required".into(),
        ));
    }
    let unique: HashSet<_> = config.candidates.iter().collect();
    if unique.len() != config.candidates.len() {
        return Err(ServiceError::Config("candidate ids must be unique".into()));
    }
    if config.candidates.iter().any(|c| c.is_empty()) {
        return Err(ServiceError::Config(
            "candidate ids must be non-empty".into(),
        ));
    }
    if config.public_key.bits() < MIN_SERVICE_KEY_BITS {
        return Err(ServiceError::Config(format!(
            "public key has {} bits; at least {MIN_SERVICE_KEY_BITS} required",
            config.public_key.bits()
        )));
    }
    config
        .schema
        .validate()
        .and_then(|_| config.schema.check_capacity(&config.public_key))
        .map_err(|e| ServiceError::Config(e.to_string()))?;
    if config.admin_token.len() < 16 {
        return Err(ServiceError::Config(
            "admin token must be at least 16 characters".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
