//! Desk-scale benchmarks: per-ballot recording time against payload size,
//! homomorphic addition cost, and plaintext against encrypted vote counting.
//!
//! Every timed homomorphic fold is decrypted and checked against its
//! plaintext sum before the timing is returned.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use num_bigint::BigUint;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::he::{Ciphertext, HeError, KeyFingerprint, Keypair, PublicKey};
use crate::ledger::{
    BallotRecord, CandidateId, Digest, Ledger, LedgerConfig, LedgerError, NodeSet,
};
use crate::schema::{AnswerSet, EncryptedBatch, FactorSchema, SchemaError};

/// Reference figures from the original experiments, reported next to ours.
pub const REFERENCE_RECORDING_SECONDS_1024: f64 = 1.7;
/// Units were not stated in the source; seconds assumed.
pub const REFERENCE_ADDITION_SECONDS_1024: f64 = 5.463;

pub const STAND_IN_CIPHERTEXT_BYTES: usize = 80;
pub const MIN_REPETITIONS: usize = 3;

const BENCH_CANDIDATES: [&str; 3] = ["A", "B", "C"];
/// Candidate id used by the 80-byte profile, whose ballots carry no
/// plaintext vote.
const NO_VOTE: &str = "";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error("ledger not empty")]
    LedgerNotEmpty,
    #[error("decryption mismatch: expected {expected}, got {got} (benchmark invalid)")]
    DecryptionMismatch { expected: String, got: String },
    #[error("no timings collected")]
    NoTimings,
    #[error("another benchmark is already running")]
    Busy,
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadProfile {
    /// Five 80-byte ciphertext stand-ins plus a 1-byte plaintext vote.
    EncryptedAttrs401B,
    /// One 80-byte stand-in for an encrypted vote, nothing else.
    EncryptedVote80B,
    /// Real ciphertexts of the default schema under the configured key.
    Native,
}

impl PayloadProfile {
    pub const ALL: [PayloadProfile; 3] = [
        PayloadProfile::EncryptedAttrs401B,
        PayloadProfile::EncryptedVote80B,
        PayloadProfile::Native,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PayloadProfile::EncryptedAttrs401B => "encrypted_attrs_401B",
            PayloadProfile::EncryptedVote80B => "encrypted_vote_80B",
            PayloadProfile::Native => "native",
        }
    }
}

impl std::fmt::Display for PayloadProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PayloadProfile {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encrypted_attrs_401B" | "401B" | "401" => Ok(PayloadProfile::EncryptedAttrs401B),
            "encrypted_vote_80B" | "80B" | "80" => Ok(PayloadProfile::EncryptedVote80B),
            "native" => Ok(PayloadProfile::Native),
            other => Err(BenchError::Config(format!(
                "unknown payload profile {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub n_voters: usize,
    pub payload_profile: PayloadProfile,
    pub repetitions: usize,
    pub seed: u64,
    /// Throwaway ledgers are created under this directory.
    pub work_dir: Option<PathBuf>,
    /// fsync every chain append. Without it the measurement is dominated by
    /// the page cache.
    pub sync_writes: bool,
    /// Required for the `native` profile.
    pub public_key: Option<PublicKey>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_voters: 1024,
            payload_profile: PayloadProfile::EncryptedAttrs401B,
            repetitions: 5,
            seed: 0,
            work_dir: None,
            sync_writes: true,
            public_key: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_voters < 1 {
            return Err(BenchError::Config("n_voters must be at least 1".into()));
        }
        if self.repetitions < MIN_REPETITIONS {
            return Err(BenchError::Config(format!(
                "repetitions must be at least {MIN_REPETITIONS}"
            )));
        }
        if self.payload_profile == PayloadProfile::Native && self.public_key.is_none() {
            return Err(BenchError::Config(
                "the native profile needs a public key".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTiming {
    pub profile: PayloadProfile,
    pub n_voters: usize,
    pub total_seconds: f64,
    pub per_ballot_ms: f64,
    pub std_dev_ms: f64,
}

impl RoundTiming {
    fn single(profile: PayloadProfile, n_voters: usize, total_seconds: f64) -> Self {
        Self {
            profile,
            n_voters,
            total_seconds,
            per_ballot_ms: total_seconds * 1000.0 / n_voters as f64,
            std_dev_ms: 0.0,
        }
    }
}

/// All repetitions of one profile plus their summary. The summary reports
/// the median total; `std_dev_ms` is the sample standard deviation of the
/// per-ballot time across repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingRun {
    pub summary: RoundTiming,
    pub mean_per_ballot_ms: f64,
    pub repetitions: Vec<RoundTiming>,
    /// Serialized size of one ballot's ciphertexts and vote.
    pub payload_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditionTiming {
    pub n_additions: usize,
    pub total_seconds: f64,
    pub per_add_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingComparison {
    pub n_voters: usize,
    pub plaintext_seconds: f64,
    pub encrypted_seconds: f64,
    /// encrypted / plaintext
    pub ratio: f64,
    pub counts: BTreeMap<CandidateId, u64>,
}

static BENCH_LOCK: Mutex<()> = Mutex::new(());

fn exclusive() -> Result<std::sync::MutexGuard<'static, ()>> {
    BENCH_LOCK.try_lock().map_err(|_| BenchError::Busy)
}

struct Workspace {
    _tmp: Option<tempfile::TempDir>,
    root: PathBuf,
}

impl Workspace {
    fn new(base: Option<&Path>) -> Result<Self> {
        let tmp = match base {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                tempfile::tempdir_in(dir)?
            }
            None => tempfile::tempdir()?,
        };
        Ok(Self {
            root: tmp.path().to_path_buf(),
            _tmp: Some(tmp),
        })
    }

    fn ledger(&self, name: &str, candidates: Vec<CandidateId>, sync: bool) -> Result<Ledger> {
        let mut config = LedgerConfig::new(self.root.join(name), candidates);
        // three verifier nodes with majority quorum, whatever the candidate list
        config.nodes = NodeSet::for_candidates(3);
        config.sync_writes = sync;
        let ledger = Ledger::open(config)?;
        if ledger.record_count() != 0 {
            return Err(BenchError::LedgerNotEmpty);
        }
        Ok(ledger)
    }
}

fn bench_candidates() -> Vec<CandidateId> {
    let mut c: Vec<CandidateId> = BENCH_CANDIDATES.iter().map(|s| s.to_string()).collect();
    c.push(NO_VOTE.to_string());
    c
}

/// An opaque `len`-byte value standing in for a ciphertext. The top byte is
/// non-zero so the canonical encoding is exactly `len` bytes.
fn stand_in(rng: &mut ChaCha20Rng, len: usize) -> Ciphertext {
    let mut bytes = vec![0u8; len];
    rng.fill_bytes(&mut bytes);
    bytes[0] |= 0x80;
    Ciphertext::from_parts(BigUint::from_bytes_be(&bytes), KeyFingerprint([0; 32]))
}

/// Builds the synthetic ballots for one repetition before any timing starts.
fn synthetic_ballots(
    profile: PayloadProfile,
    n: usize,
    rng: &mut ChaCha20Rng,
    key: Option<&PublicKey>,
    schema: &FactorSchema,
) -> Result<Vec<BallotRecord>> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (ciphertexts, vote) = match profile {
            PayloadProfile::EncryptedAttrs401B => (
                (0..5)
                    .map(|_| stand_in(rng, STAND_IN_CIPHERTEXT_BYTES))
                    .collect(),
                BENCH_CANDIDATES[rng.gen_range(0..BENCH_CANDIDATES.len())],
            ),
            PayloadProfile::EncryptedVote80B => {
                (vec![stand_in(rng, STAND_IN_CIPHERTEXT_BYTES)], NO_VOTE)
            }
            PayloadProfile::Native => {
                let key = key.ok_or_else(|| BenchError::Config("missing key".into()))?;
                let answers = random_answers(schema, rng);
                let batch = schema.encrypt_batch_with_rng(key, &answers, rng)?;
                (
                    batch.ciphertexts,
                    BENCH_CANDIDATES[rng.gen_range(0..BENCH_CANDIDATES.len())],
                )
            }
        };
        out.push(BallotRecord {
            receipt_id: format!("bench-{i}"),
            voter_pseudonym: Digest::of(&(i as u64).to_be_bytes()),
            batch: EncryptedBatch {
                schema_id: schema.schema_id.clone(),
                ciphertexts,
            },
            vote: vote.to_string(),
            cast_at: i as u64,
        });
    }
    Ok(out)
}

fn payload_bytes(record: &BallotRecord) -> usize {
    record
        .batch
        .ciphertexts
        .iter()
        .map(|c| (c.value().bits() as usize).div_ceil(8))
        .sum::<usize>()
        + record.vote.len()
}

pub fn random_answers<R: Rng>(schema: &FactorSchema, rng: &mut R) -> AnswerSet {
    AnswerSet {
        schema_id: schema.schema_id.clone(),
        answers: schema
            .factors
            .iter()
            .map(|f| rng.gen_range(0..f.category_count()))
            .collect(),
    }
}

fn time_appends(ledger: &Ledger, ballots: Vec<BallotRecord>) -> Result<f64> {
    let start = Instant::now();
    for b in ballots {
        ledger.append_ballot(b)?;
    }
    Ok(start.elapsed().as_secs_f64())
}

fn summarize(
    profile: PayloadProfile,
    n: usize,
    reps: Vec<RoundTiming>,
    payload: usize,
) -> RecordingRun {
    let mut totals: Vec<f64> = reps.iter().map(|r| r.total_seconds).collect();
    totals.sort_by(f64::total_cmp);
    let median = if totals.len() % 2 == 1 {
        totals[totals.len() / 2]
    } else {
        (totals[totals.len() / 2 - 1] + totals[totals.len() / 2]) / 2.0
    };
    let per: Vec<f64> = reps.iter().map(|r| r.per_ballot_ms).collect();
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    let var = if per.len() > 1 {
        per.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (per.len() - 1) as f64
    } else {
        0.0
    };
    let mut summary = RoundTiming::single(profile, n, median);
    summary.std_dev_ms = var.sqrt();
    RecordingRun {
        summary,
        mean_per_ballot_ms: mean,
        repetitions: reps,
        payload_bytes: payload,
    }
}

/// Appends `n_voters` synthetic ballots to a fresh ledger, `repetitions`
/// times after one discarded warm-up run.
pub fn run_recording_round(config: &BenchConfig) -> Result<RecordingRun> {
    let mut runs = run_recording_comparison(config, &[config.payload_profile])?;
    Ok(runs.remove(0))
}

/// Like [`run_recording_round`] for several profiles, interleaving their
/// repetitions so slow drift in machine load affects all of them alike.
pub fn run_recording_comparison(
    config: &BenchConfig,
    profiles: &[PayloadProfile],
) -> Result<Vec<RecordingRun>> {
    config.validate()?;
    for &p in profiles {
        BenchConfig {
            payload_profile: p,
            ..config.clone()
        }
        .validate()?;
    }
    let _guard = exclusive()?;
    let schema = FactorSchema::default_profile();
    let ws = Workspace::new(config.work_dir.as_deref())?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let n = config.n_voters;

    let mut samples: Vec<Vec<RoundTiming>> = vec![Vec::new(); profiles.len()];
    let mut sizes = vec![0usize; profiles.len()];
    for rep in 0..=config.repetitions {
        for (pi, &profile) in profiles.iter().enumerate() {
            let ballots =
                synthetic_ballots(profile, n, &mut rng, config.public_key.as_ref(), &schema)?;
            sizes[pi] = payload_bytes(&ballots[0]);
            let ledger = ws.ledger(
                &format!("{profile}-{rep}"),
                bench_candidates(),
                config.sync_writes,
            )?;
            let secs = time_appends(&ledger, ballots)?;
            drop(ledger);
            let _ = std::fs::remove_dir_all(ws.root.join(format!("{profile}-{rep}")));
            // repetition 0 is the warm-up
            if rep > 0 {
                samples[pi].push(RoundTiming::single(profile, n, secs));
            }
        }
    }
    Ok(profiles
        .iter()
        .zip(samples)
        .zip(sizes)
        .map(|((&p, reps), size)| summarize(p, n, reps, size))
        .collect())
}

/// Times a fold of `n_additions` fresh encryptions of 1 (encryption is not
/// timed), then checks the fold decrypts to `n_additions`.
pub fn run_addition_bench(n_additions: usize, key: &Keypair) -> Result<AdditionTiming> {
    if n_additions < 1 {
        return Err(BenchError::Config("n_additions must be at least 1".into()));
    }
    let pk = key.public_key();
    let one = BigUint::from(1u8);
    let inputs: Vec<Ciphertext> = (0..n_additions)
        .map(|_| pk.encrypt(&one))
        .collect::<std::result::Result<_, _>>()?;
    let start = Instant::now();
    let mut acc = pk.zero_ciphertext();
    for ct in &inputs {
        acc = pk.add(&acc, ct)?;
    }
    let total_seconds = start.elapsed().as_secs_f64();
    verify_fold(key, &acc, n_additions as u64)?;
    Ok(AdditionTiming {
        n_additions,
        total_seconds,
        per_add_us: total_seconds * 1e6 / n_additions as f64,
    })
}

fn verify_fold(key: &Keypair, acc: &Ciphertext, expected: u64) -> Result<()> {
    let got = key.decrypt(acc)?;
    if got != BigUint::from(expected) {
        return Err(BenchError::DecryptionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        });
    }
    Ok(())
}

/// Populates a throwaway ledger with `n_voters` real ballots, then times
/// (a) a plaintext tally pass over the ledger and (b) the encrypted-vote
/// alternative: a homomorphic fold of one ciphertext per voter per
/// candidate. Both counts are checked against the generator's votes.
pub fn run_counting_comparison(
    n_voters: usize,
    key: &Keypair,
    seed: u64,
    work_dir: Option<&Path>,
) -> Result<CountingComparison> {
    let _guard = exclusive()?;
    let pk = key.public_key();
    let schema = FactorSchema::default_profile();
    let candidates: Vec<CandidateId> = BENCH_CANDIDATES.iter().map(|s| s.to_string()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let ws = Workspace::new(work_dir)?;
    let ledger = ws.ledger("counting", candidates.clone(), false)?;
    let mut oracle: BTreeMap<CandidateId, u64> =
        candidates.iter().map(|c| (c.clone(), 0)).collect();
    let mut encrypted_votes: Vec<Vec<Ciphertext>> =
        vec![Vec::with_capacity(n_voters); candidates.len()];
    for record in synthetic_ballots(
        PayloadProfile::Native,
        n_voters,
        &mut rng,
        Some(pk),
        &schema,
    )? {
        *oracle.get_mut(&record.vote).unwrap() += 1;
        for (ci, c) in candidates.iter().enumerate() {
            let bit = u64::from(*c == record.vote);
            encrypted_votes[ci].push(pk.encrypt_with_rng(&BigUint::from(bit), &mut rng)?);
        }
        ledger.append_ballot(record)?;
    }

    let start = Instant::now();
    let mut counts: BTreeMap<CandidateId, u64> =
        candidates.iter().map(|c| (c.clone(), 0)).collect();
    for record in ledger.iterate_records(None)? {
        *counts.entry(record?.vote).or_default() += 1;
    }
    let plaintext_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let sums: Vec<Ciphertext> = encrypted_votes
        .iter()
        .map(|column| pk.sum(column.iter()))
        .collect::<std::result::Result<_, _>>()?;
    let encrypted_seconds = start.elapsed().as_secs_f64();

    if counts != oracle {
        return Err(BenchError::DecryptionMismatch {
            expected: format!("{oracle:?}"),
            got: format!("{counts:?}"),
        });
    }
    for (c, sum) in candidates.iter().zip(&sums) {
        verify_fold(key, sum, oracle[c])?;
    }
    Ok(CountingComparison {
        n_voters,
        plaintext_seconds,
        encrypted_seconds,
        ratio: if plaintext_seconds > 0.0 {
            encrypted_seconds / plaintext_seconds
        } else {
            f64::INFINITY
        },
        counts,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub recording: Vec<RecordingRun>,
    pub addition: Vec<AdditionTiming>,
    pub comparison: Vec<CountingComparison>,
}

impl BenchReport {
    pub fn is_empty(&self) -> bool {
        self.recording.is_empty() && self.addition.is_empty() && self.comparison.is_empty()
    }
}

#[derive(Serialize)]
struct ReportHeader<'a> {
    reference_recording_seconds_1024_voters: f64,
    reference_addition_seconds_1024_additions: f64,
    reference_units_note: &'static str,
    report: &'a BenchReport,
}

/// Writes `recording.csv`, `addition.csv`, `comparison.csv`, the plot data
/// files `recording_plot.dat` (voters vs seconds) and `addition_plot.dat`
/// (additions vs seconds), and `report.json` carrying the reference figures.
pub fn emit_report(report: &BenchReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.is_empty() {
        return Err(BenchError::NoTimings);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let path = out_dir.join("recording.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "profile",
        "n_voters",
        "repetition",
        "total_seconds",
        "per_ballot_ms",
        "std_dev_ms",
    ])?;
    for run in &report.recording {
        for (i, r) in run.repetitions.iter().enumerate() {
            w.serialize((
                r.profile.as_str(),
                r.n_voters,
                i + 1,
                r.total_seconds,
                r.per_ballot_ms,
                run.summary.std_dev_ms,
            ))?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = out_dir.join("addition.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["n_additions", "total_seconds", "per_add_us"])?;
    for a in &report.addition {
        w.serialize((a.n_additions, a.total_seconds, a.per_add_us))?;
    }
    w.flush()?;
    written.push(path);

    let path = out_dir.join("comparison.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "n_voters",
        "plaintext_seconds",
        "encrypted_seconds",
        "ratio",
    ])?;
    for c in &report.comparison {
        w.serialize((
            c.n_voters,
            c.plaintext_seconds,
            c.encrypted_seconds,
            c.ratio,
        ))?;
    }
    w.flush()?;
    written.push(path);

    let path = out_dir.join("recording_plot.dat");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "# profile voters median_total_seconds std_dev_seconds")?;
    for run in &report.recording {
        let s = &run.summary;
        writeln!(
            f,
            "{} {} {} {}",
            s.profile,
            s.n_voters,
            s.total_seconds,
            s.std_dev_ms * s.n_voters as f64 / 1000.0
        )?;
    }
    writeln!(f, "reference 1024 {REFERENCE_RECORDING_SECONDS_1024} 0")?;
    written.push(path);

    let path = out_dir.join("addition_plot.dat");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "# additions total_seconds")?;
    for a in &report.addition {
        writeln!(f, "{} {}", a.n_additions, a.total_seconds)?;
    }
    writeln!(f, "# reference 1024 {REFERENCE_ADDITION_SECONDS_1024}")?;
    written.push(path);

    let path = out_dir.join("report.json");
    let header = ReportHeader {
        reference_recording_seconds_1024_voters: REFERENCE_RECORDING_SECONDS_1024,
        reference_addition_seconds_1024_additions: REFERENCE_ADDITION_SECONDS_1024,
        reference_units_note: "reference addition time published without units; seconds assumed",
        report,
    };
    std::fs::write(
        &path,
        serde_json::to_vec_pretty(&header).map_err(std::io::Error::from)?,
    )?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::generate_keypair_seeded;
    use std::sync::OnceLock;

    fn keypair() -> &'static Keypair {
        static KP: OnceLock<Keypair> = OnceLock::new();
        KP.get_or_init(|| generate_keypair_seeded(1024, 3).unwrap())
    }

    fn quick(profile: PayloadProfile, n: usize) -> BenchConfig {
        BenchConfig {
            n_voters: n,
            payload_profile: profile,
            repetitions: 3,
            seed: 1,
            work_dir: None,
            sync_writes: false,
            public_key: Some(keypair().public_key().clone()),
        }
    }

    // benchmarks hold a process-wide lock; run these one at a time
    static SERIAL: Mutex<()> = Mutex::new(());

    #[test]
    fn config_validation() {
        let mut c = quick(PayloadProfile::Native, 4);
        c.repetitions = 2;
        assert!(c.validate().is_err());
        c.repetitions = 3;
        c.n_voters = 0;
        assert!(c.validate().is_err());
        c.n_voters = 1;
        c.public_key = None;
        assert!(c.validate().is_err());
        c.payload_profile = PayloadProfile::EncryptedVote80B;
        assert!(c.validate().is_ok());
        assert_eq!(BenchConfig::default().n_voters, 1024);
        assert_eq!(BenchConfig::default().repetitions, 5);
    }

    #[test]
    fn profiles_have_the_stated_sizes() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let schema = FactorSchema::default_profile();
        let big = synthetic_ballots(
            PayloadProfile::EncryptedAttrs401B,
            3,
            &mut rng,
            None,
            &schema,
        )
        .unwrap();
        let small = synthetic_ballots(PayloadProfile::EncryptedVote80B, 3, &mut rng, None, &schema)
            .unwrap();
        assert!(big.iter().all(|b| payload_bytes(b) == 401));
        assert!(small.iter().all(|b| payload_bytes(b) == 80));
        for p in PayloadProfile::ALL {
            assert_eq!(p.as_str().parse::<PayloadProfile>().unwrap(), p);
        }
    }

    #[test]
    fn recording_round_shape() {
        let _s = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
        let run = run_recording_round(&quick(PayloadProfile::EncryptedAttrs401B, 8)).unwrap();
        assert_eq!(run.repetitions.len(), 3);
        assert_eq!(run.payload_bytes, 401);
        for r in &run.repetitions {
            assert!((r.per_ballot_ms - r.total_seconds * 1000.0 / 8.0).abs() < 1e-9);
        }
        let one = run_recording_round(&quick(PayloadProfile::Native, 1)).unwrap();
        let s = &one.summary;
        assert!((s.per_ballot_ms - s.total_seconds * 1000.0).abs() < 1e-9);
    }

    #[test]
    fn addition_bench_verifies() {
        let t = run_addition_bench(64, keypair()).unwrap();
        assert_eq!(t.n_additions, 64);
        assert!((t.per_add_us - t.total_seconds * 1e6 / 64.0).abs() < 1e-9);
        let t = run_addition_bench(1, keypair()).unwrap();
        assert!((t.per_add_us - t.total_seconds * 1e6).abs() < 1e-9);
        assert!(run_addition_bench(0, keypair()).is_err());
    }

    #[test]
    fn counting_comparison_agrees_with_oracle() {
        let _s = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
        let c = run_counting_comparison(24, keypair(), 9, None).unwrap();
        assert_eq!(c.counts.values().sum::<u64>(), 24);
        let empty = run_counting_comparison(0, keypair(), 9, None).unwrap();
        assert!(empty.counts.values().all(|&v| v == 0));
    }

    #[test]
    fn report_roundtrip() {
        let _s = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_report(&BenchReport::default(), dir.path()),
            Err(BenchError::NoTimings)
        ));
        let runs = run_recording_comparison(
            &quick(PayloadProfile::EncryptedAttrs401B, 4),
            &[
                PayloadProfile::EncryptedAttrs401B,
                PayloadProfile::EncryptedVote80B,
            ],
        )
        .unwrap();
        let report = BenchReport {
            recording: runs,
            addition: vec![run_addition_bench(8, keypair()).unwrap()],
            comparison: vec![],
        };
        emit_report(&report, dir.path()).unwrap();

        let mut rdr = csv::Reader::from_path(dir.path().join("recording.csv")).unwrap();
        let rows: Vec<(String, usize, usize, f64, f64, f64)> =
            rdr.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2 * 3);
        let in_memory: Vec<f64> = report
            .recording
            .iter()
            .flat_map(|r| r.repetitions.iter().map(|t| t.total_seconds))
            .collect();
        let parsed: Vec<f64> = rows.iter().map(|r| r.3).collect();
        assert_eq!(parsed, in_memory);
        let json: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(json["reference_addition_seconds_1024_additions"], 5.463);
    }
}
