//! Paillier additively homomorphic encryption.
//!
//! Uses the `g = n + 1` simplification, so `g^m mod n^2 = 1 + m*n` and
//! `mu = lambda^{-1} mod n`. Decryption runs through the CRT split over
//! `p^2` and `q^2`; the result is identical to `L(c^lambda mod n^2) * mu mod n`.
//!
//! Every public operation bumps a thread-local counter (see [`op_counts`]) so
//! callers can assert which code paths touch ciphertexts at all.

use std::cell::Cell;
use std::fmt;
use std::sync::OnceLock;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Modulus sizes accepted by key generation. 512 is only reachable through
/// [`generate_keypair_seeded`].
pub const SUPPORTED_BITS: [u64; 4] = [512, 1024, 2048, 3072];
pub const DEFAULT_BITS: u64 = 2048;

/// Miller-Rabin rounds; 4^-40 = 2^-80 error bound.
const MR_ROUNDS: usize = 40;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HeError {
    #[error("unsupported bit size {0}")]
    UnsupportedBitSize(u64),
    #[error("plaintext out of range")]
    PlaintextOutOfRange,
    #[error("randomness not coprime to n")]
    BadRandomness,
    #[error("key fingerprint mismatch")]
    FingerprintMismatch,
    #[error("ciphertext out of range")]
    CiphertextOutOfRange,
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("malformed hex: {0}")]
    MalformedHex(String),
}

pub type Result<T> = std::result::Result<T, HeError>;

/// SHA-256 digest identifying a public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyFingerprint(pub [u8; 32]);

impl KeyFingerprint {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| HeError::MalformedHex(e.to_string()))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| HeError::MalformedHex("fingerprint must be 32 bytes".into()))?;
        Ok(Self(arr))
    }
}

impl fmt::Debug for KeyFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyFingerprint({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for KeyFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Lowercase, big-endian, no leading zeros. Zero renders as `"0"`.
pub fn to_hex(v: &BigUint) -> String {
    v.to_str_radix(16)
}

pub fn from_hex(s: &str) -> Result<BigUint> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(HeError::MalformedHex(format!("{s:.32}")));
    }
    BigUint::parse_bytes(s.as_bytes(), 16).ok_or_else(|| HeError::MalformedHex(format!("{s:.32}")))
}

// ---------------------------------------------------------------------------
// Operation counters
// ---------------------------------------------------------------------------

/// Number of homomorphic operations executed on the current thread.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub encryptions: u64,
    pub additions: u64,
    pub decryptions: u64,
}

thread_local! {
    static COUNTS: Cell<OpCounts> = const { Cell::new(OpCounts { encryptions: 0, additions: 0, decryptions: 0 }) };
}

fn bump(f: impl FnOnce(&mut OpCounts)) {
    COUNTS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

pub fn op_counts() -> OpCounts {
    COUNTS.with(|c| c.get())
}

pub fn reset_op_counts() {
    COUNTS.with(|c| c.set(OpCounts::default()));
}

// ---------------------------------------------------------------------------
// Keys
// ---------------------------------------------------------------------------

#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    g: BigUint,
    n_squared: BigUint,
    fingerprint: KeyFingerprint,
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PublicKey")
            .field("bits", &self.bits())
            .field("fingerprint", &self.fingerprint)
            .finish()
    }
}

impl PublicKey {
    pub fn from_modulus(n: BigUint) -> Result<Self> {
        if n < BigUint::from(6u8) || n.is_even() {
            return Err(HeError::InvalidKey(
                "modulus must be an odd composite".into(),
            ));
        }
        let g = &n + 1u8;
        let n_squared = &n * &n;
        let fingerprint = KeyFingerprint(Sha256::digest(n.to_bytes_be()).into());
        Ok(Self {
            n,
            g,
            n_squared,
            fingerprint,
        })
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn generator(&self) -> &BigUint {
        &self.g
    }

    pub fn modulus_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    pub fn fingerprint(&self) -> KeyFingerprint {
        self.fingerprint
    }

    /// Size in bytes of a ciphertext value rendered at full width.
    pub fn ciphertext_bytes(&self) -> usize {
        self.n_squared.bits().div_ceil(8) as usize
    }

    pub fn encrypt(&self, plaintext: &BigUint) -> Result<Ciphertext> {
        self.encrypt_with_rng(plaintext, &mut OsRng)
    }

    pub fn encrypt_with_rng<R: RngCore + CryptoRng>(
        &self,
        plaintext: &BigUint,
        rng: &mut R,
    ) -> Result<Ciphertext> {
        let r = loop {
            let r = rng.gen_biguint_range(&BigUint::one(), &self.n);
            if r.gcd(&self.n).is_one() {
                break r;
            }
        };
        self.encrypt_with_randomness(plaintext, &r)
    }

    /// `c = (1 + m*n) * r^n mod n^2`.
    pub fn encrypt_with_randomness(&self, plaintext: &BigUint, r: &BigUint) -> Result<Ciphertext> {
        if plaintext >= &self.n {
            return Err(HeError::PlaintextOutOfRange);
        }
        if r.is_zero() || r >= &self.n || !r.gcd(&self.n).is_one() {
            return Err(HeError::BadRandomness);
        }
        let gm = (BigUint::one() + plaintext * &self.n) % &self.n_squared;
        let rn = r.modpow(&self.n, &self.n_squared);
        bump(|c| c.encryptions += 1);
        Ok(Ciphertext {
            value: (gm * rn) % &self.n_squared,
            key_fingerprint: self.fingerprint,
        })
    }

    pub fn encrypt_u64(&self, plaintext: u64) -> Result<Ciphertext> {
        self.encrypt(&BigUint::from(plaintext))
    }

    /// Encryption of zero with `r = 1`; the neutral element for [`PublicKey::add`].
    pub fn zero_ciphertext(&self) -> Ciphertext {
        Ciphertext {
            value: BigUint::one(),
            key_fingerprint: self.fingerprint,
        }
    }

    /// Homomorphic addition: `a * b mod n^2` decrypts to `Dec(a) + Dec(b) mod n`.
    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.check_operand(a)?;
        self.check_operand(b)?;
        bump(|c| c.additions += 1);
        Ok(Ciphertext {
            value: (&a.value * &b.value) % &self.n_squared,
            key_fingerprint: self.fingerprint,
        })
    }

    /// Left fold of [`PublicKey::add`], starting from [`PublicKey::zero_ciphertext`].
    pub fn sum<'a>(&self, cts: impl IntoIterator<Item = &'a Ciphertext>) -> Result<Ciphertext> {
        cts.into_iter()
            .try_fold(self.zero_ciphertext(), |acc, ct| self.add(&acc, ct))
    }

    fn check_operand(&self, ct: &Ciphertext) -> Result<()> {
        if ct.key_fingerprint != self.fingerprint {
            return Err(HeError::FingerprintMismatch);
        }
        if ct.value >= self.n_squared {
            return Err(HeError::CiphertextOutOfRange);
        }
        Ok(())
    }

    /// Full validation for ciphertexts arriving from outside: fingerprint,
    /// range, and `gcd(value, n) = 1`.
    pub fn check(&self, ct: &Ciphertext) -> Result<()> {
        if ct.key_fingerprint != self.fingerprint {
            return Err(HeError::FingerprintMismatch);
        }
        if ct.value.is_zero() || ct.value >= self.n_squared || !ct.value.gcd(&self.n).is_one() {
            return Err(HeError::CiphertextOutOfRange);
        }
        Ok(())
    }
}

/// Paillier key pair. Holds the factorization; the public half is reachable
/// through [`Keypair::public_key`].
#[derive(Clone)]
pub struct Keypair {
    public: PublicKey,
    p: BigUint,
    q: BigUint,
    lambda: BigUint,
    mu: BigUint,
    security_bits: u64,
    crt: CrtParams,
}

#[derive(Clone)]
struct CrtParams {
    p_squared: BigUint,
    q_squared: BigUint,
    p_minus_1: BigUint,
    q_minus_1: BigUint,
    hp: BigUint,
    hq: BigUint,
    p_inv_q: BigUint,
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keypair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl PartialEq for Keypair {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p && self.q == other.q
    }
}

impl Eq for Keypair {}

impl Keypair {
    /// Builds a key pair from two distinct primes. No size policy is applied,
    /// so toy moduli such as `5 * 7` are accepted.
    pub fn from_primes(p: BigUint, q: BigUint) -> Result<Self> {
        if p == q {
            return Err(HeError::InvalidKey("p and q must differ".into()));
        }
        let mut rng = OsRng;
        if !is_probable_prime(&p, &mut rng) || !is_probable_prime(&q, &mut rng) {
            return Err(HeError::InvalidKey("p and q must be prime".into()));
        }
        let (p, q) = if p < q { (p, q) } else { (q, p) };
        let n = &p * &q;
        let p_minus_1 = &p - 1u8;
        let q_minus_1 = &q - 1u8;
        if !n.gcd(&(&p_minus_1 * &q_minus_1)).is_one() {
            return Err(HeError::InvalidKey("gcd(n, phi(n)) != 1".into()));
        }
        let public = PublicKey::from_modulus(n.clone())?;
        let lambda = p_minus_1.lcm(&q_minus_1);
        let mu = lambda
            .modinv(&n)
            .ok_or_else(|| HeError::InvalidKey("lambda not invertible mod n".into()))?;

        let p_squared = &p * &p;
        let q_squared = &q * &q;
        let hp = crt_h(public.generator(), &p, &p_squared, &p_minus_1)?;
        let hq = crt_h(public.generator(), &q, &q_squared, &q_minus_1)?;
        let p_inv_q = p
            .modinv(&q)
            .ok_or_else(|| HeError::InvalidKey("p not invertible mod q".into()))?;

        Ok(Self {
            security_bits: n.bits(),
            public,
            p,
            q,
            lambda,
            mu,
            crt: CrtParams {
                p_squared,
                q_squared,
                p_minus_1,
                q_minus_1,
                hp,
                hq,
                p_inv_q,
            },
        })
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    pub fn security_bits(&self) -> u64 {
        self.security_bits
    }

    pub fn primes(&self) -> (&BigUint, &BigUint) {
        (&self.p, &self.q)
    }

    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.mu
    }

    pub fn decrypt(&self, ct: &Ciphertext) -> Result<BigUint> {
        if ct.key_fingerprint != self.public.fingerprint {
            return Err(HeError::FingerprintMismatch);
        }
        if ct.value >= self.public.n_squared {
            return Err(HeError::CiphertextOutOfRange);
        }
        bump(|c| c.decryptions += 1);
        let crt = &self.crt;
        let mp = (l_function(&ct.value.modpow(&crt.p_minus_1, &crt.p_squared), &self.p) * &crt.hp)
            % &self.p;
        let mq = (l_function(&ct.value.modpow(&crt.q_minus_1, &crt.q_squared), &self.q) * &crt.hq)
            % &self.q;
        // Garner: m = mp + p * ((mq - mp) * p^-1 mod q)
        let diff = (&mq + &self.q - (&mp % &self.q)) % &self.q;
        Ok(&mp + &self.p * ((diff * &crt.p_inv_q) % &self.q))
    }

    /// Decrypts and narrows to `u64`; fails if the plaintext does not fit.
    pub fn decrypt_u64(&self, ct: &Ciphertext) -> Result<u64> {
        let m = self.decrypt(ct)?;
        u64::try_from(&m).map_err(|_| HeError::PlaintextOutOfRange)
    }
}

fn l_function(x: &BigUint, n: &BigUint) -> BigUint {
    (x - 1u8) / n
}

/// `h_p = L_p(g^(p-1) mod p^2)^-1 mod p`.
fn crt_h(g: &BigUint, p: &BigUint, p_squared: &BigUint, p_minus_1: &BigUint) -> Result<BigUint> {
    l_function(&g.modpow(p_minus_1, p_squared), p)
        .modinv(p)
        .ok_or_else(|| HeError::InvalidKey("CRT precomputation failed".into()))
}

/// Additively homomorphic public key operations.
pub trait HomomorphicEncrypt {
    type Plaintext;
    type Ciphertext;
    type Error;

    fn encrypt_value(
        &self,
        m: &Self::Plaintext,
    ) -> std::result::Result<Self::Ciphertext, Self::Error>;
    fn add_ciphertexts(
        &self,
        a: &Self::Ciphertext,
        b: &Self::Ciphertext,
    ) -> std::result::Result<Self::Ciphertext, Self::Error>;
}

pub trait HomomorphicDecrypt {
    type Plaintext;
    type Ciphertext;
    type Error;

    fn decrypt_value(
        &self,
        ct: &Self::Ciphertext,
    ) -> std::result::Result<Self::Plaintext, Self::Error>;
}

impl HomomorphicEncrypt for PublicKey {
    type Plaintext = BigUint;
    type Ciphertext = Ciphertext;
    type Error = HeError;

    fn encrypt_value(&self, m: &BigUint) -> Result<Ciphertext> {
        self.encrypt(m)
    }

    fn add_ciphertexts(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.add(a, b)
    }
}

impl HomomorphicDecrypt for Keypair {
    type Plaintext = BigUint;
    type Ciphertext = Ciphertext;
    type Error = HeError;

    fn decrypt_value(&self, ct: &Ciphertext) -> Result<BigUint> {
        self.decrypt(ct)
    }
}

// ---------------------------------------------------------------------------
// Ciphertext
// ---------------------------------------------------------------------------

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    value: BigUint,
    key_fingerprint: KeyFingerprint,
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex = to_hex(&self.value);
        write!(
            f,
            "Ciphertext({:.16}.., key={:?})",
            hex, self.key_fingerprint
        )
    }
}

impl Ciphertext {
    /// Reassembles a ciphertext from its parts. Range is checked against the
    /// key later, by [`PublicKey::check`] or [`Keypair::decrypt`].
    pub fn from_parts(value: BigUint, key_fingerprint: KeyFingerprint) -> Self {
        Self {
            value,
            key_fingerprint,
        }
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn key_fingerprint(&self) -> KeyFingerprint {
        self.key_fingerprint
    }

    pub fn to_wire(&self) -> CiphertextWire {
        CiphertextWire {
            value: to_hex(&self.value),
            fingerprint: self.key_fingerprint.to_hex(),
        }
    }

    pub fn from_wire(wire: &CiphertextWire) -> Result<Self> {
        Ok(Self {
            value: from_hex(&wire.value)?,
            key_fingerprint: KeyFingerprint::from_hex(&wire.fingerprint)?,
        })
    }
}

/// JSON wire form shared with browser clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CiphertextWire {
    pub value: String,
    pub fingerprint: String,
}

impl Serialize for Ciphertext {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_wire().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Ciphertext {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = CiphertextWire::deserialize(deserializer)?;
        Ciphertext::from_wire(&wire).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Key generation
// ---------------------------------------------------------------------------

/// Generates a key pair from the OS CSPRNG. 512-bit moduli are refused here.
pub fn generate_keypair(security_bits: u64) -> Result<Keypair> {
    if security_bits == 512 || !SUPPORTED_BITS.contains(&security_bits) {
        return Err(HeError::UnsupportedBitSize(security_bits));
    }
    generate_with_rng(security_bits, &mut OsRng)
}

/// Deterministic key generation for tests and reproducible simulations.
/// Accepts the 512-bit toy size.
pub fn generate_keypair_seeded(security_bits: u64, seed: u64) -> Result<Keypair> {
    if !SUPPORTED_BITS.contains(&security_bits) {
        return Err(HeError::UnsupportedBitSize(security_bits));
    }
    generate_with_rng(security_bits, &mut ChaCha20Rng::seed_from_u64(seed))
}

fn generate_with_rng<R: RngCore + CryptoRng>(security_bits: u64, rng: &mut R) -> Result<Keypair> {
    let half = security_bits / 2;
    loop {
        let p = random_prime(half, rng);
        let q = random_prime(half, rng);
        if p == q {
            continue;
        }
        let kp = Keypair::from_primes(p, q)?;
        debug_assert_eq!(kp.public.bits(), security_bits);
        return Ok(kp);
    }
}

/// Random prime with exactly `bits` bits and the top two bits set, so the
/// product of two such primes has exactly `2 * bits` bits.
fn random_prime<R: RngCore + CryptoRng>(bits: u64, rng: &mut R) -> BigUint {
    loop {
        let mut candidate = rng.gen_biguint(bits);
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(bits - 2, true);
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate, rng) {
            return candidate;
        }
    }
}

fn small_primes() -> &'static [u32] {
    static PRIMES: OnceLock<Vec<u32>> = OnceLock::new();
    PRIMES.get_or_init(|| {
        const LIMIT: usize = 2000;
        let mut sieve = vec![true; LIMIT];
        sieve[0] = false;
        sieve[1] = false;
        for i in 2..LIMIT {
            if sieve[i] {
                for j in (i * i..LIMIT).step_by(i) {
                    sieve[j] = false;
                }
            }
        }
        (0..LIMIT as u32).filter(|&i| sieve[i as usize]).collect()
    })
}

/// Trial division followed by Miller-Rabin with random bases.
pub fn is_probable_prime<R: RngCore + CryptoRng>(n: &BigUint, rng: &mut R) -> bool {
    let two = BigUint::from(2u8);
    if n < &two {
        return false;
    }
    for &sp in small_primes() {
        let sp_big = BigUint::from(sp);
        if n == &sp_big {
            return true;
        }
        if (n % sp).is_zero() {
            return false;
        }
    }
    let n_minus_1 = n - 1u8;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'witness: for _ in 0..MR_ROUNDS {
        let a = rng.gen_biguint_range(&two, &n_minus_1);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
            if x.is_one() {
                return false;
            }
        }
        return false;
    }
    true
}

// ---------------------------------------------------------------------------
// Key files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKeyFile {
    pub security_bits: u64,
    pub n: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretKeyFile {
    pub security_bits: u64,
    pub p: String,
    pub q: String,
}

impl PublicKeyFile {
    pub fn from_key(key: &PublicKey) -> Self {
        Self {
            security_bits: key.bits(),
            n: to_hex(key.modulus()),
        }
    }

    pub fn to_key(&self) -> Result<PublicKey> {
        let key = PublicKey::from_modulus(from_hex(&self.n)?)?;
        if key.bits() != self.security_bits {
            return Err(HeError::InvalidKey(format!(
                "modulus has {} bits, file claims {}",
                key.bits(),
                self.security_bits
            )));
        }
        Ok(key)
    }
}

impl SecretKeyFile {
    pub fn from_keypair(kp: &Keypair) -> Self {
        Self {
            security_bits: kp.security_bits(),
            p: to_hex(&kp.p),
            q: to_hex(&kp.q),
        }
    }

    pub fn to_keypair(&self) -> Result<Keypair> {
        let kp = Keypair::from_primes(from_hex(&self.p)?, from_hex(&self.q)?)?;
        if kp.security_bits() != self.security_bits {
            return Err(HeError::InvalidKey(format!(
                "modulus has {} bits, file claims {}",
                kp.security_bits(),
                self.security_bits
            )));
        }
        Ok(kp)
    }
}

/// Writes `public.json` and `secret.json` into `dir`; the secret file is
/// created with mode 0600 on unix.
pub fn write_key_files(dir: &std::path::Path, kp: &Keypair) -> std::io::Result<()> {
    use std::io::Write;

    std::fs::create_dir_all(dir)?;
    let public = serde_json::to_vec_pretty(&PublicKeyFile::from_key(kp.public_key()))?;
    std::fs::write(dir.join("public.json"), public)?;

    let secret = serde_json::to_vec_pretty(&SecretKeyFile::from_keypair(kp))?;
    let mut opts = std::fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(dir.join("secret.json"))?;
    f.write_all(&secret)?;
    f.sync_all()
}

pub fn read_public_key(path: &std::path::Path) -> std::io::Result<PublicKey> {
    let file: PublicKeyFile = serde_json::from_slice(&std::fs::read(path)?)?;
    file.to_key()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

pub fn read_secret_key(path: &std::path::Path) -> std::io::Result<Keypair> {
    let file: SecretKeyFile = serde_json::from_slice(&std::fs::read(path)?)?;
    file.to_keypair()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
