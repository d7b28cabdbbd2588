//! Demographic statistics computed over ciphertexts.
//!
//! Votes are plaintext, so filtering by candidate is a plain comparison; the
//! factor columns stay encrypted and are summed homomorphically. Only the
//! final per-cell aggregates are ever decrypted.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::election::TallyResult;
use crate::he::{Ciphertext, HeError, Keypair, PublicKey};
use crate::ledger::{
    now_millis, BallotRecord, CandidateId, Ledger, LedgerError, VerificationReport,
};
use crate::schema::{CategoryCounts, FactorSchema, SchemaError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("unverified chain: {0}")]
    Unverified(VerificationReport),
    #[error("invalid factor index {0}")]
    FactorIndex(usize),
    #[error("ballot {receipt_id}: {source}")]
    BadBallot {
        receipt_id: String,
        source: SchemaError,
    },
    #[error("{ballots} ballots exceed the per-category capacity of {capacity}")]
    Capacity { ballots: u64, capacity: u64 },
    #[error("secret key does not match the election public key")]
    KeyMismatch,
    #[error("report is inconsistent with the tally; report withheld")]
    Inconsistent,
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub election_id: String,
    /// candidate → factor name → counts
    pub per_candidate: BTreeMap<CandidateId, BTreeMap<String, CategoryCounts>>,
    /// factor name → counts over all ballots
    pub turnout_by_factor: BTreeMap<String, CategoryCounts>,
    pub produced_at: u64,
}

impl AnalysisReport {
    /// One row per candidate × factor × category.
    pub fn write_csv<W: Write>(&self, schema: &FactorSchema, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["candidate", "factor", "category", "count"])?;
        for (candidate, factors) in &self.per_candidate {
            for factor in &schema.factors {
                let Some(counts) = factors.get(&factor.name) else {
                    continue;
                };
                for (label, count) in factor.categories.iter().zip(counts) {
                    w.write_record([
                        candidate.as_str(),
                        factor.name.as_str(),
                        label.as_str(),
                        &count.to_string(),
                    ])?;
                }
            }
        }
        w.flush()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationQuery {
    pub candidate_filter: Option<CandidateId>,
    pub factor_index: usize,
}

/// A ledger whose administration chain re-verified at construction time.
#[derive(Debug, Clone, Copy)]
pub struct VerifiedLedger<'a> {
    ledger: &'a Ledger,
    height: u64,
}

impl<'a> VerifiedLedger<'a> {
    pub fn new(ledger: &'a Ledger) -> Result<Self> {
        match ledger.verify_chain()? {
            VerificationReport::Valid { blocks, .. } => Ok(Self {
                ledger,
                height: blocks,
            }),
            report => Err(AnalysisError::Unverified(report)),
        }
    }

    pub fn ledger(&self) -> &'a Ledger {
        self.ledger
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    fn records(&self, filter: Option<&str>) -> Result<impl Iterator<Item = Result<BallotRecord>>> {
        Ok(self
            .ledger
            .iterate_records(filter)?
            .map(|r| r.map_err(AnalysisError::from)))
    }
}

fn checked_batch<'r>(
    schema: &FactorSchema,
    key: &PublicKey,
    record: &'r BallotRecord,
) -> Result<&'r [Ciphertext]> {
    schema
        .check_batch(key, &record.batch)
        .map_err(|source| AnalysisError::BadBallot {
            receipt_id: record.receipt_id.clone(),
            source,
        })?;
    Ok(&record.batch.ciphertexts)
}

/// Homomorphic sum of one factor column over the matching records. No
/// decryption happens here.
pub fn aggregate_factor(
    ledger: &VerifiedLedger<'_>,
    schema: &FactorSchema,
    key: &PublicKey,
    query: &AggregationQuery,
) -> Result<Ciphertext> {
    if query.factor_index >= schema.factor_count() {
        return Err(AnalysisError::FactorIndex(query.factor_index));
    }
    let mut acc = key.zero_ciphertext();
    for record in ledger.records(query.candidate_filter.as_deref())? {
        let record = record?;
        let cts = checked_batch(schema, key, &record)?;
        acc = key.add(&acc, &cts[query.factor_index])?;
    }
    Ok(acc)
}

/// Encrypted cells for every candidate × factor plus the unfiltered
/// per-factor totals, built in one pass over `records`.
#[derive(Debug, Clone)]
pub struct Aggregates {
    pub per_candidate: BTreeMap<CandidateId, Vec<Ciphertext>>,
    pub totals: Vec<Ciphertext>,
    pub ballots: u64,
}

pub fn aggregate_all<I>(
    records: I,
    schema: &FactorSchema,
    candidates: &[CandidateId],
    key: &PublicKey,
) -> Result<Aggregates>
where
    I: IntoIterator<Item = Result<BallotRecord>>,
{
    let fresh = || vec![key.zero_ciphertext(); schema.factor_count()];
    let mut per_candidate: BTreeMap<CandidateId, Vec<Ciphertext>> =
        candidates.iter().map(|c| (c.clone(), fresh())).collect();
    let mut totals = fresh();
    let mut ballots = 0u64;
    for record in records {
        let record = record?;
        let cts = checked_batch(schema, key, &record)?;
        let cell = per_candidate
            .entry(record.vote.clone())
            .or_insert_with(fresh);
        for (f, ct) in cts.iter().enumerate() {
            cell[f] = key.add(&cell[f], ct)?;
            totals[f] = key.add(&totals[f], ct)?;
        }
        ballots += 1;
    }
    Ok(Aggregates {
        per_candidate,
        totals,
        ballots,
    })
}

/// Decrypts the aggregates (exactly |candidates|·|factors| + |factors|
/// decryptions), decodes them and checks the result against the tally.
pub fn analyze_voters(
    ledger: &VerifiedLedger<'_>,
    schema: &FactorSchema,
    candidates: &[CandidateId],
    tally: &TallyResult,
    secret_key: &Keypair,
) -> Result<AnalysisReport> {
    let key = secret_key.public_key();
    schema.check_capacity(key)?;
    let capacity = schema.max_count_per_category();
    if ledger.ledger().record_count() > capacity {
        return Err(AnalysisError::Capacity {
            ballots: ledger.ledger().record_count(),
            capacity,
        });
    }
    let aggregates = aggregate_all(ledger.records(None)?, schema, candidates, key)?;
    let report = decrypt_report(&aggregates, schema, &tally.election_id, secret_key)?;
    if !consistency_check(&report, tally) {
        return Err(AnalysisError::Inconsistent);
    }
    Ok(report)
}

pub fn decrypt_report(
    aggregates: &Aggregates,
    schema: &FactorSchema,
    election_id: &str,
    secret_key: &Keypair,
) -> Result<AnalysisReport> {
    let key = secret_key.public_key();
    let decode = |cts: &[Ciphertext]| -> Result<BTreeMap<String, CategoryCounts>> {
        let mut out = BTreeMap::new();
        for (f, ct) in cts.iter().enumerate() {
            let packed = secret_key
                .decrypt(ct)
                .map_err(|_| AnalysisError::KeyMismatch)?;
            let counts = schema.decode_counts_under(key, f, &packed)?;
            out.insert(schema.factors[f].name.clone(), counts);
        }
        Ok(out)
    };
    let mut per_candidate = BTreeMap::new();
    for (candidate, cts) in &aggregates.per_candidate {
        per_candidate.insert(candidate.clone(), decode(cts)?);
    }
    Ok(AnalysisReport {
        election_id: election_id.to_string(),
        per_candidate,
        turnout_by_factor: decode(&aggregates.totals)?,
        produced_at: now_millis(),
    })
}

/// True iff every candidate's counts sum to its tally for every factor, and
/// the candidate rows add up category-wise to the turnout row whose sum is
/// the tally total.
pub fn consistency_check(report: &AnalysisReport, tally: &TallyResult) -> bool {
    if report.election_id != tally.election_id {
        return false;
    }
    let candidates_match = report.per_candidate.len() == tally.counts.len()
        && report
            .per_candidate
            .keys()
            .all(|c| tally.counts.contains_key(c));
    if !candidates_match {
        return false;
    }
    for (factor, turnout) in &report.turnout_by_factor {
        let mut column = vec![0u64; turnout.len()];
        for (candidate, factors) in &report.per_candidate {
            let Some(counts) = factors.get(factor) else {
                return false;
            };
            if counts.len() != turnout.len() {
                return false;
            }
            if counts.iter().sum::<u64>() != tally.counts[candidate] {
                return false;
            }
            for (acc, c) in column.iter_mut().zip(counts) {
                *acc += c;
            }
        }
        if &column != turnout || turnout.iter().sum::<u64>() != tally.total {
            return false;
        }
    }
    report
        .per_candidate
        .values()
        .all(|f| f.len() == report.turnout_by_factor.len())
}
