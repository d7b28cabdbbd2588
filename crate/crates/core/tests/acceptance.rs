//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.
//!
//!     cargo test -p evote-core --test acceptance

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use evote_core::analysis::consistency_check;
use evote_core::bench::{
    emit_report, run_addition_bench, run_counting_comparison, run_recording_comparison,
    BenchConfig, BenchReport, PayloadProfile,
};
use evote_core::election::{ElectionService, ElectionState, ServiceConfig, ServiceError};
use evote_core::he::{
    generate_keypair_seeded, op_counts, reset_op_counts, Ciphertext, Keypair, OpCounts,
};
use evote_core::ledger::{BallotRecord, Digest, Ledger, LedgerConfig, VerificationReport};
use evote_core::schema::{AnswerSet, FactorSchema};
use evote_core::simulate::{simulate, SimulationConfig, SimulationOutcome};
use num_bigint::{BigUint, RandBigInt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

const ADMIN: &str = "acceptance-admin-token";

struct Keys {
    k2048: Keypair,
    k1024: Keypair,
}

fn he_correctness(keys: &Keys) -> Outcome {
    let start = Instant::now();
    let kp = &keys.k2048;
    let pk = kp.public_key();
    let n = pk.modulus().clone();
    ensure!(pk.bits() == 2048, "key has {} bits", pk.bits());
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let one = BigUint::from(1u8);
    let zero = BigUint::from(0u8);
    let n1 = &n - 1u8;
    let mut pairs: Vec<(BigUint, BigUint)> = vec![
        (zero.clone(), zero.clone()),
        (zero.clone(), n1.clone()),
        (n1.clone(), one.clone()),
        (n1.clone(), n1.clone()),
        (one.clone(), one.clone()),
        (BigUint::from(u64::MAX), BigUint::from(u64::MAX)),
    ];
    for _ in 0..1000 {
        pairs.push((rng.gen_biguint_below(&n), rng.gen_biguint_below(&n)));
    }
    for (i, (a, b)) in pairs.iter().enumerate() {
        let sum = pk
            .add(&pk.encrypt(a).unwrap(), &pk.encrypt(b).unwrap())
            .unwrap();
        let got = kp.decrypt(&sum).unwrap();
        ensure!(got == (a + b) % &n, "pair {i} decrypted wrong");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "{} pairs incl. 6 boundary cases, {:.1?}",
        pairs.len(),
        elapsed
    ))
}

fn packing_equivalence(keys: &Keys) -> Outcome {
    let start = Instant::now();
    let kp = &keys.k2048;
    let pk = kp.public_key();
    let schema = FactorSchema::default_profile();
    ensure!(
        schema.factor_count() == 5,
        "default schema has {} factors",
        schema.factor_count()
    );
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut sums: Vec<Ciphertext> = vec![pk.zero_ciphertext(); 5];
    let mut oracle: Vec<Vec<u64>> = schema
        .factors
        .iter()
        .map(|f| vec![0; f.category_count()])
        .collect();
    for _ in 0..1024 {
        let answers: Vec<usize> = schema
            .factors
            .iter()
            .map(|f| rng.gen_range(0..f.category_count()))
            .collect();
        for (f, &a) in answers.iter().enumerate() {
            oracle[f][a] += 1;
        }
        let batch = schema
            .encrypt_batch_with_rng(
                pk,
                &AnswerSet {
                    schema_id: schema.schema_id.clone(),
                    answers,
                },
                &mut rng,
            )
            .unwrap();
        for (f, ct) in batch.ciphertexts.iter().enumerate() {
            sums[f] = pk.add(&sums[f], ct).unwrap();
        }
    }
    for (f, ct) in sums.iter().enumerate() {
        let counts = schema
            .decode_counts_under(pk, f, &kp.decrypt(ct).unwrap())
            .unwrap();
        ensure!(
            counts == oracle[f],
            "factor {f}: {counts:?} != {:?}",
            oracle[f]
        );
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(180), "took {elapsed:?}");
    Ok(format!(
        "1024 voters x 5 factors, 2048-bit key, {elapsed:.1?}"
    ))
}

struct Simulated {
    outcome: SimulationOutcome,
    tally_ops: OpCounts,
}

fn run_simulation(keys: &Keys) -> Simulated {
    let config = SimulationConfig {
        voters: 1024,
        seed: 3,
        keypair: Some(keys.k1024.clone()),
        ..Default::default()
    };
    let outcome = simulate(config).expect("simulation");
    Simulated {
        tally_ops: outcome.tally_op_counts,
        outcome,
    }
}

fn tally_equivalence(sim: &Simulated) -> Outcome {
    let out = &sim.outcome;
    ensure!(
        sim.tally_ops.additions == 0 && sim.tally_ops.decryptions == 0,
        "tally ran HE operations: {:?}",
        sim.tally_ops
    );
    // recount 1: generator ground truth
    let mut truth: BTreeMap<String, u64> = BTreeMap::new();
    for v in &out.voters {
        *truth.entry(v.vote.clone()).or_default() += 1;
    }
    // recount 2: per-candidate filtered scans of the ledger
    let ledger = out.service.ledger();
    for (candidate, &count) in &out.tally.counts {
        let scanned = ledger.iterate_records(Some(candidate)).unwrap().count() as u64;
        ensure!(
            scanned == count,
            "{candidate}: ledger scan {scanned} vs tally {count}"
        );
        let expected = truth.get(candidate).copied().unwrap_or(0);
        ensure!(
            expected == count,
            "{candidate}: ground truth {expected} vs tally {count}"
        );
    }
    ensure!(out.tally.total == 1024, "total {}", out.tally.total);
    Ok(format!(
        "counts {:?}, HE ops in tally: {:?}",
        out.tally.counts, sim.tally_ops
    ))
}

fn analysis_equivalence(sim: &Simulated, keys: &Keys) -> Outcome {
    let out = &sim.outcome;
    let schema = FactorSchema::default_profile();
    reset_op_counts();
    let report = out
        .service
        .analyze(&keys.k1024)
        .map_err(|e| e.to_string())?;
    let decrypts = op_counts().decryptions;
    let candidates = out.service.candidates().len() as u64;
    ensure!(
        decrypts == candidates * 5 + 5,
        "{decrypts} decryptions, expected {}",
        candidates * 5 + 5
    );
    for c in out.service.candidates() {
        for (f, factor) in schema.factors.iter().enumerate() {
            let mut oracle = vec![0u64; factor.category_count()];
            for v in out.voters.iter().filter(|v| &v.vote == c) {
                oracle[v.answers[f]] += 1;
            }
            let got = &report.per_candidate[c][&factor.name];
            ensure!(got == &oracle, "{c}/{}: {got:?} != {oracle:?}", factor.name);
        }
    }
    for (f, factor) in schema.factors.iter().enumerate() {
        let mut oracle = vec![0u64; factor.category_count()];
        for v in &out.voters {
            oracle[v.answers[f]] += 1;
        }
        ensure!(
            report.turnout_by_factor[&factor.name] == oracle,
            "turnout {}",
            factor.name
        );
    }
    ensure!(
        consistency_check(&report, &out.tally),
        "consistency check failed"
    );
    Ok(format!(
        "{candidates} candidates x 5 factors exact, {decrypts} decryptions"
    ))
}

fn frame_of(bytes: &[u8], pos: usize) -> u64 {
    let mut start = 0usize;
    let mut k = 0u64;
    loop {
        let len = u32::from_be_bytes(bytes[start..start + 4].try_into().unwrap()) as usize;
        if pos < start + 4 + len {
            return k;
        }
        start += 4 + len;
        k += 1;
    }
}

fn tamper_evidence(keys: &Keys) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let candidates = vec!["A".to_string(), "B".to_string(), "C".to_string()];
    let ledger = Ledger::open(LedgerConfig::new(dir.path(), candidates.clone())).unwrap();
    let schema = FactorSchema::default_profile();
    let pk = keys.k1024.public_key();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for i in 0..128u64 {
        let answers = AnswerSet {
            schema_id: schema.schema_id.clone(),
            answers: schema
                .factors
                .iter()
                .map(|f| rng.gen_range(0..f.category_count()))
                .collect(),
        };
        ledger
            .append_ballot(BallotRecord {
                receipt_id: format!("r{i}"),
                voter_pseudonym: Digest::of(&i.to_be_bytes()),
                batch: schema
                    .encrypt_batch_with_rng(pk, &answers, &mut rng)
                    .unwrap(),
                vote: candidates[rng.gen_range(0..3)].clone(),
                cast_at: i,
            })
            .unwrap();
    }
    match ledger.verify_chain().unwrap() {
        VerificationReport::Valid {
            blocks: 129,
            records: 128,
        } => {}
        other => return Err(format!("untampered chain: {other:?}")),
    }
    let path = ledger.admin_path().to_path_buf();
    let clean = std::fs::read(&path).unwrap();
    for trial in 0..1000 {
        let pos = rng.gen_range(0..clean.len());
        let mut bytes = clean.clone();
        bytes[pos] ^= rng.gen_range(1..=255u8);
        std::fs::write(&path, &bytes).unwrap();
        match ledger.verify_chain().unwrap() {
            VerificationReport::Invalid { block_index, .. } => ensure!(
                block_index == frame_of(&clean, pos),
                "trial {trial}: byte {pos} reported at block {block_index}, expected {}",
                frame_of(&clean, pos)
            ),
            VerificationReport::Valid { .. } => {
                return Err(format!("trial {trial}: flip at byte {pos} not detected"))
            }
        }
    }
    std::fs::write(&path, &clean).unwrap();
    ensure!(
        ledger.verify_chain().unwrap().is_valid(),
        "restored chain invalid"
    );
    Ok(format!(
        "128 ballots, {} bytes, 1000 random flips localized",
        clean.len()
    ))
}

fn service(dir: &std::path::Path, keys: &Keys) -> ElectionService {
    let mut config = ServiceConfig::new(
        "acceptance",
        vec!["A".into(), "B".into(), "C".into()],
        FactorSchema::default_profile(),
        keys.k1024.public_key().clone(),
        dir,
        ADMIN,
    );
    config.password_iterations = 1000;
    let svc = ElectionService::open(config).unwrap();
    svc.transition_election(ADMIN, ElectionState::Open).unwrap();
    svc
}

fn staged(svc: &ElectionService, id: &str, rng: &mut ChaCha20Rng) -> String {
    svc.register_voter(id, "password-123").unwrap();
    let token = svc.verify_voter(id, "password-123").unwrap().token;
    let schema = svc.schema();
    let answers = AnswerSet {
        schema_id: schema.schema_id.clone(),
        answers: schema
            .factors
            .iter()
            .map(|f| rng.gen_range(0..f.category_count()))
            .collect(),
    };
    let batch = schema
        .encrypt_batch_with_rng(svc.public_key(), &answers, rng)
        .unwrap();
    svc.collect_voter(&token, batch).unwrap();
    token
}

fn replication(keys: &Keys) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), keys);
    let nodes = svc.ledger().node_set().clone();
    ensure!(
        nodes.candidate_nodes.len() == 3 && nodes.ack_quorum == 2,
        "node set {nodes:?}"
    );
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let identical = |svc: &ElectionService| -> bool {
        let admin = std::fs::read(svc.ledger().admin_path()).unwrap();
        nodes
            .candidate_nodes
            .iter()
            .all(|n| std::fs::read(svc.ledger().node_path(n).unwrap()).unwrap() == admin)
    };
    for i in 0..8 {
        let t = staged(&svc, &format!("v{i}"), &mut rng);
        svc.cast_vote(&t, "A").unwrap();
    }
    ensure!(identical(&svc), "chains differ with all nodes online");

    let down = &nodes.candidate_nodes[2];
    svc.ledger().set_node_online(down, false).unwrap();
    for i in 8..12 {
        let t = staged(&svc, &format!("v{i}"), &mut rng);
        svc.cast_vote(&t, "B")
            .map_err(|e| format!("one node down: {e}"))?;
    }
    svc.ledger().set_node_online(down, true).unwrap();
    svc.ledger().sync_replicas().unwrap();
    ensure!(identical(&svc), "chains differ after catch-up");

    svc.ledger()
        .set_node_online(&nodes.candidate_nodes[0], false)
        .unwrap();
    svc.ledger()
        .set_node_online(&nodes.candidate_nodes[1], false)
        .unwrap();
    let height = svc.ledger().height();
    let t = staged(&svc, "unlucky", &mut rng);
    match svc.cast_vote(&t, "C") {
        Err(ServiceError::ReplicationFailed) => {}
        other => return Err(format!("two nodes down: {other:?}")),
    }
    ensure!(
        !svc.voter("unlucky").unwrap().has_voted,
        "voter marked as voted"
    );
    ensure!(
        svc.ledger().height() == height,
        "block committed without quorum"
    );
    Ok("3 nodes, quorum 2: identical chains; 1 down commits; 2 down rejects".into())
}

fn recording_independence() -> Outcome {
    let config = BenchConfig {
        n_voters: 1024,
        repetitions: 5,
        seed: 7,
        ..Default::default()
    };
    let runs = run_recording_comparison(
        &config,
        &[
            PayloadProfile::EncryptedAttrs401B,
            PayloadProfile::EncryptedVote80B,
        ],
    )
    .map_err(|e| e.to_string())?;
    let (big, small) = (&runs[0], &runs[1]);
    ensure!(
        big.payload_bytes == 401 && small.payload_bytes == 80,
        "payload sizes {} / {}",
        big.payload_bytes,
        small.payload_bytes
    );
    ensure!(
        big.repetitions.len() == 5 && small.repetitions.len() == 5,
        "repetitions"
    );
    let diff = (big.mean_per_ballot_ms - small.mean_per_ballot_ms).abs()
        / big.mean_per_ballot_ms.min(small.mean_per_ballot_ms);
    let line = format!(
        "401B {:.4} ms vs 80B {:.4} ms per ballot, difference {:.1}%",
        big.mean_per_ballot_ms,
        small.mean_per_ballot_ms,
        diff * 100.0
    );
    ensure!(diff < 0.20, "{line}");
    Ok(line)
}

fn counting_separation(keys: &Keys) -> Outcome {
    let cmp = run_counting_comparison(1024, &keys.k1024, 8, None).map_err(|e| e.to_string())?;
    ensure!(
        cmp.plaintext_seconds < cmp.encrypted_seconds,
        "plaintext {:.4}s not faster than encrypted {:.4}s",
        cmp.plaintext_seconds,
        cmp.encrypted_seconds
    );
    ensure!(
        cmp.counts.values().sum::<u64>() == 1024,
        "counts {:?}",
        cmp.counts
    );
    let addition = run_addition_bench(1024, &keys.k2048).map_err(|e| e.to_string())?;
    let out = tempfile::tempdir().unwrap();
    let report = BenchReport {
        recording: vec![],
        addition: vec![addition.clone()],
        comparison: vec![cmp.clone()],
    };
    emit_report(&report, out.path()).map_err(|e| e.to_string())?;
    for f in ["recording.csv", "addition.csv", "comparison.csv"] {
        ensure!(out.path().join(f).is_file(), "{f} missing");
    }
    Ok(format!(
        "plaintext {:.2} ms vs encrypted fold {:.2} ms ({:.0}x); 1024 additions at 2048 bits {:.3} s",
        cmp.plaintext_seconds * 1e3,
        cmp.encrypted_seconds * 1e3,
        cmp.ratio,
        addition.total_seconds
    ))
}

fn protocol_guards(keys: &Keys) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), keys);
    let mut rng = ChaCha20Rng::seed_from_u64(9);

    let token = staged(&svc, "dup", &mut rng);
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..16)
            .map(|_| s.spawn(|| svc.cast_vote(&token, "A")))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let ok = results.iter().filter(|r| r.is_ok()).count();
    ensure!(ok == 1, "{ok} of 16 concurrent casts succeeded");
    ensure!(
        results
            .iter()
            .filter_map(|r| r.as_ref().err())
            .all(|e| matches!(e, ServiceError::AlreadyVoted)),
        "unexpected rejection"
    );

    svc.register_voter("early", "password-123").unwrap();
    let early = svc.verify_voter("early", "password-123").unwrap().token;
    ensure!(
        matches!(
            svc.cast_vote(&early, "A"),
            Err(ServiceError::QuestionnaireRequired)
        ),
        "cast before questionnaire accepted"
    );

    let candidates = svc.candidates().to_vec();
    let mut cast = Vec::new();
    for i in 0..100 {
        let t = staged(&svc, &format!("voter{i}"), &mut rng);
        let c = candidates[rng.gen_range(0..candidates.len())].clone();
        svc.cast_vote(&t, &c).unwrap();
        cast.push((t, c));
    }
    for (t, c) in &cast {
        let view = svc.check_vote(t).map_err(|e| e.to_string())?;
        ensure!(&view.vote == c, "check_vote returned {} for {c}", view.vote);
    }

    let late = staged(&svc, "late", &mut rng);
    svc.transition_election(ADMIN, ElectionState::Closed)
        .unwrap();
    ensure!(
        matches!(svc.cast_vote(&late, "A"), Err(ServiceError::ElectionClosed)),
        "vote after close accepted"
    );
    ensure!(
        svc.ledger().record_count() == 101,
        "ledger holds {}",
        svc.ledger().record_count()
    );
    Ok(
        "16 concurrent duplicates -> 1 success; early and late casts rejected; 100 check-backs"
            .into(),
    )
}

fn main() {
    let started = Instant::now();
    let keys = Keys {
        k2048: generate_keypair_seeded(2048, 2048).unwrap(),
        k1024: generate_keypair_seeded(1024, 1024).unwrap(),
    };
    let mut sim: Option<Simulated> = None;

    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match &outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => println!("FAIL  {name}: {why}"),
        }
        results.push((name, outcome));
    };

    run("he_correctness", &mut || he_correctness(&keys));
    run("packing_oracle_equivalence", &mut || {
        packing_equivalence(&keys)
    });
    run("tally_oracle_equivalence", &mut || {
        let s = sim.insert(run_simulation(&keys));
        tally_equivalence(s)
    });
    run("analysis_oracle_equivalence", &mut || match &sim {
        Some(s) => analysis_equivalence(s, &keys),
        None => Err("simulation did not run".into()),
    });
    run("ledger_tamper_evidence", &mut || tamper_evidence(&keys));
    run("replication_quorum", &mut || replication(&keys));
    run(
        "recording_time_payload_independence",
        &mut recording_independence,
    );
    run("plaintext_tally_faster_than_he_fold", &mut || {
        counting_separation(&keys)
    });
    run("protocol_guards", &mut || protocol_guards(&keys));

    let failed = results.iter().filter(|(_, o)| o.is_err()).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.1?}",
        results.len() - failed,
        started.elapsed()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
