//! Code similarity search: token shingles, MinHash signatures and a banded
//! LSH index used to pick in-context reference functions.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

mod persist;
mod tokenize;

pub use persist::{read_index, write_index, PersistError};
pub use tokenize::tokenize;

/// Smallest accepted signature length.
pub const MIN_SIGNATURE_LEN: usize = 16;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SimIndexError {
    #[error("signature length {0} is below the minimum of {MIN_SIGNATURE_LEN}")]
    SignatureTooShort(usize),
    #[error("signatures are not comparable: lengths {left}/{right}, seeds {left_seed}/{right_seed}")]
    Incompatible {
        left: usize,
        right: usize,
        left_seed: u64,
        right_seed: u64,
    },
    #[error("inconsistent LSH parameters: {0}")]
    BadParams(String),
    #[error("duplicate entry id \"{0}\"")]
    DuplicateId(String),
    #[error("candidate count must be at least 1")]
    ZeroCandidates,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Set of hashed `k`-token windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenShingleSet {
    shingles: HashSet<u64>,
    k: usize,
}

impl TokenShingleSet {
    /// Windows of `k` consecutive tokens. Empty when there are fewer than `k` tokens.
    pub fn from_tokens(tokens: &[&str], k: usize) -> Self {
        let k = k.max(1);
        let shingles = tokens
            .windows(k)
            .map(|window| {
                let h = window.iter().fold(FNV_OFFSET, |h, tok| {
                    fnv1a(fnv1a(h, tok.as_bytes()), &[0xff])
                });
                mix64(h)
            })
            .collect();
        Self { shingles, k }
    }

    pub fn from_source(source: &str, k: usize) -> Self {
        Self::from_tokens(&tokenize(source), k)
    }

    pub fn len(&self) -> usize {
        self.shingles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shingles.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.shingles.iter().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    slots: Vec<u64>,
    seed: u64,
    /// Set for the signature of an empty shingle set; it matches nothing.
    empty: bool,
}

impl MinHashSignature {
    pub fn slots(&self) -> &[u64] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_sentinel(&self) -> bool {
        self.empty
    }

    pub(crate) fn from_parts(slots: Vec<u64>, seed: u64, empty: bool) -> Self {
        Self { slots, seed, empty }
    }
}

fn slot_keys(n: usize, seed: u64) -> Vec<u64> {
    (0..n as u64)
        .map(|i| mix64(seed.wrapping_add(i.wrapping_mul(0x9e37_79b9_7f4a_7c15))))
        .collect()
}

pub fn minhash(shingles: &TokenShingleSet, n: usize, seed: u64) -> Result<MinHashSignature, SimIndexError> {
    if n < MIN_SIGNATURE_LEN {
        return Err(SimIndexError::SignatureTooShort(n));
    }
    let mut slots = vec![u64::MAX; n];
    if shingles.is_empty() {
        return Ok(MinHashSignature::from_parts(slots, seed, true));
    }
    let keys = slot_keys(n, seed);
    for shingle in shingles.iter() {
        for (slot, key) in slots.iter_mut().zip(&keys) {
            let h = mix64(shingle ^ key);
            if h < *slot {
                *slot = h;
            }
        }
    }
    Ok(MinHashSignature::from_parts(slots, seed, false))
}

/// Fraction of equal slots. The empty-set sentinel scores 0 against anything.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, SimIndexError> {
    if a.len() != b.len() || a.seed != b.seed {
        return Err(SimIndexError::Incompatible {
            left: a.len(),
            right: b.len(),
            left_seed: a.seed,
            right_seed: b.seed,
        });
    }
    if a.empty || b.empty || a.is_empty() {
        return Ok(0.0);
    }
    let equal = a
        .slots
        .iter()
        .zip(&b.slots)
        .filter(|(x, y)| x == y)
        .count();
    Ok(equal as f64 / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LshParams {
    /// Tokens per shingle.
    pub shingle: usize,
    /// Signature length; must equal `bands * rows`.
    pub signature_len: usize,
    pub bands: usize,
    pub rows: usize,
    pub seed: u64,
}

impl Default for LshParams {
    fn default() -> Self {
        Self {
            shingle: 5,
            signature_len: 256,
            bands: 32,
            rows: 8,
            seed: 0x5eed,
        }
    }
}

impl LshParams {
    pub fn validate(&self) -> Result<(), SimIndexError> {
        if self.shingle == 0 {
            return Err(SimIndexError::BadParams("shingle length must be >= 1".into()));
        }
        if self.signature_len < MIN_SIGNATURE_LEN {
            return Err(SimIndexError::SignatureTooShort(self.signature_len));
        }
        if self.bands == 0 || self.rows == 0 || self.bands * self.rows != self.signature_len {
            return Err(SimIndexError::BadParams(format!(
                "bands ({}) * rows ({}) must equal signature length ({})",
                self.bands, self.rows, self.signature_len
            )));
        }
        Ok(())
    }

    pub fn signature(&self, source: &str) -> Result<MinHashSignature, SimIndexError> {
        minhash(
            &TokenShingleSet::from_source(source, self.shingle),
            self.signature_len,
            self.seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub similarity: f64,
}

/// Immutable banded LSH index over MinHash signatures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LshIndex {
    params: LshParams,
    ids: Vec<String>,
    signatures: Vec<MinHashSignature>,
    /// One map per band: band hash -> entry positions (ascending).
    buckets: Vec<BTreeMap<u64, Vec<u32>>>,
}

fn band_hash(rows: &[u64]) -> u64 {
    rows.iter()
        .fold(FNV_OFFSET, |h, slot| fnv1a(h, &slot.to_le_bytes()))
}

impl LshIndex {
    pub fn build<'a, I>(entries: I, params: LshParams) -> Result<Self, SimIndexError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        params.validate()?;
        let mut ids = Vec::new();
        let mut signatures = Vec::new();
        let mut seen = HashSet::new();
        for (id, source) in entries {
            if !seen.insert(id.to_owned()) {
                return Err(SimIndexError::DuplicateId(id.to_owned()));
            }
            ids.push(id.to_owned());
            signatures.push(params.signature(source)?);
        }
        Self::from_signatures(params, ids, signatures)
    }

    pub(crate) fn from_signatures(
        params: LshParams,
        ids: Vec<String>,
        signatures: Vec<MinHashSignature>,
    ) -> Result<Self, SimIndexError> {
        params.validate()?;
        let mut buckets = vec![BTreeMap::<u64, Vec<u32>>::new(); params.bands];
        for (pos, sig) in signatures.iter().enumerate() {
            if sig.len() != params.signature_len || sig.seed != params.seed {
                return Err(SimIndexError::BadParams(format!(
                    "signature for \"{}\" does not match index parameters",
                    ids[pos]
                )));
            }
            for (band, chunk) in sig.slots.chunks(params.rows).enumerate() {
                buckets[band]
                    .entry(band_hash(chunk))
                    .or_default()
                    .push(pos as u32);
            }
        }
        Ok(Self {
            params,
            ids,
            signatures,
            buckets,
        })
    }

    pub fn params(&self) -> &LshParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn signature(&self, id: &str) -> Option<&MinHashSignature> {
        self.ids
            .iter()
            .position(|x| x == id)
            .map(|pos| &self.signatures[pos])
    }

    pub(crate) fn signatures(&self) -> &[MinHashSignature] {
        &self.signatures
    }

    pub(crate) fn buckets(&self) -> &[BTreeMap<u64, Vec<u32>>] {
        &self.buckets
    }

    /// Number of bucket lists that contain `id`.
    pub fn bucket_memberships(&self, id: &str) -> usize {
        let Some(pos) = self.ids.iter().position(|x| x == id) else {
            return 0;
        };
        let pos = pos as u32;
        self.buckets
            .iter()
            .flat_map(|band| band.values())
            .filter(|members| members.contains(&pos))
            .count()
    }

    /// Band-bucket key of `id` in each band.
    pub fn band_keys(&self, id: &str) -> Option<Vec<u64>> {
        let sig = self.signature(id)?;
        Some(sig.slots.chunks(self.params.rows).map(band_hash).collect())
    }

    pub fn query(&self, source: &str, m: usize) -> Result<Vec<Candidate>, SimIndexError> {
        let sig = self.params.signature(source)?;
        self.query_signature(&sig, m)
    }

    /// Collisions in any band, re-scored on the full signature, ranked by
    /// similarity descending then id ascending. Zero-similarity hits are dropped.
    pub fn query_signature(
        &self,
        sig: &MinHashSignature,
        m: usize,
    ) -> Result<Vec<Candidate>, SimIndexError> {
        self.check_query(sig, m)?;
        if sig.empty {
            return Ok(Vec::new());
        }
        let mut hits = BTreeSet::new();
        for (band, chunk) in sig.slots.chunks(self.params.rows).enumerate() {
            if let Some(members) = self.buckets[band].get(&band_hash(chunk)) {
                hits.extend(members.iter().copied());
            }
        }
        self.rank(sig, hits.into_iter().map(|p| p as usize), m)
    }

    /// Exhaustive ranking over every entry, same order and filtering as
    /// [`Self::query_signature`].
    pub fn scan_signature(
        &self,
        sig: &MinHashSignature,
        m: usize,
    ) -> Result<Vec<Candidate>, SimIndexError> {
        self.check_query(sig, m)?;
        if sig.empty {
            return Ok(Vec::new());
        }
        self.rank(sig, 0..self.ids.len(), m)
    }

    /// Banded lookup, falling back to an exhaustive scan when fewer than `m`
    /// entries collide.
    pub fn query_backfilled(&self, source: &str, m: usize) -> Result<Vec<Candidate>, SimIndexError> {
        let sig = self.params.signature(source)?;
        let hits = self.query_signature(&sig, m)?;
        if hits.len() >= m {
            return Ok(hits);
        }
        self.scan_signature(&sig, m)
    }

    fn check_query(&self, sig: &MinHashSignature, m: usize) -> Result<(), SimIndexError> {
        if m == 0 {
            return Err(SimIndexError::ZeroCandidates);
        }
        if sig.len() != self.params.signature_len || sig.seed != self.params.seed {
            return Err(SimIndexError::Incompatible {
                left: sig.len(),
                right: self.params.signature_len,
                left_seed: sig.seed,
                right_seed: self.params.seed,
            });
        }
        Ok(())
    }

    fn rank(
        &self,
        sig: &MinHashSignature,
        positions: impl Iterator<Item = usize>,
        m: usize,
    ) -> Result<Vec<Candidate>, SimIndexError> {
        let mut ranked = Vec::new();
        for pos in positions {
            let similarity = estimate_jaccard(sig, &self.signatures[pos])?;
            if similarity > 0.0 {
                ranked.push(Candidate {
                    id: self.ids[pos].clone(),
                    similarity,
                });
            }
        }
        ranked.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then_with(|| a.id.cmp(&b.id))
        });
        ranked.truncate(m);
        Ok(ranked)
    }
}
