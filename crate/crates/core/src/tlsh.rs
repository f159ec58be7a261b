//! Locality-sensitive hashing of byte streams.
//!
//! Near-identical inputs produce digests at small distance from each other,
//! which is what lets repeated memory snapshots of the same protocol state
//! collapse onto one state id even when a few bytes (descriptors, counters)
//! differ between executions.
//!
//! The parameterization is fixed: 128 buckets, 1-byte checksum, 32-byte body,
//! 50-byte minimum input. No byte compatibility with external TLSH
//! implementations is intended; see `tests/tlsh_oracle.rs` for the reference
//! oracle this implementation is checked against.

/// Number of histogram buckets. The body encodes each as a 2-bit code.
pub const BUCKET_COUNT: usize = 128;

/// Bytes in the digest body (128 buckets x 2 bits).
pub const BODY_BYTES: usize = 32;

/// Inputs shorter than this finalize to an invalid digest. Callers that must
/// hash tiny-but-real snapshots zero-pad up to this length first.
pub const MIN_INPUT_LEN: u64 = 50;

/// Distance reported when either digest is invalid: never similar.
pub const MAX_DISTANCE: u32 = u32::MAX;

const WINDOW: usize = 5;
const RANGE_LVALUE: u32 = 256;
const RANGE_QRATIO: u32 = 16;

/// Fixed 256-entry permutation used by the Pearson-style bucket hash.
/// Any permutation works as long as implementation and oracle share it.
pub const PERMUTATION: [u8; 256] = [
    15, 140, 57, 68, 116, 107, 172, 92, 123, 83, 79, 35, 74, 148, 22, 2,
    28, 181, 52, 88, 124, 1, 160, 185, 82, 34, 55, 108, 133, 191, 255, 136,
    16, 94, 169, 150, 254, 184, 232, 233, 154, 220, 180, 76, 43, 151, 156, 246,
    59, 117, 247, 30, 50, 179, 190, 225, 37, 214, 78, 118, 188, 84, 10, 175,
    227, 230, 210, 103, 40, 18, 143, 114, 125, 93, 110, 215, 146, 71, 49, 245,
    63, 6, 120, 38, 26, 42, 216, 9, 54, 101, 206, 231, 65, 48, 112, 96,
    20, 177, 5, 122, 171, 243, 33, 208, 135, 27, 192, 147, 187, 21, 196, 3,
    213, 251, 212, 249, 95, 242, 60, 53, 130, 62, 90, 189, 170, 137, 80, 217,
    89, 14, 36, 56, 105, 166, 24, 229, 144, 46, 13, 138, 129, 12, 91, 113,
    158, 198, 119, 202, 211, 97, 167, 163, 11, 128, 207, 205, 104, 115, 69, 248,
    41, 204, 209, 222, 47, 240, 195, 73, 45, 241, 67, 159, 173, 7, 201, 23,
    126, 219, 99, 193, 32, 165, 199, 61, 176, 155, 237, 139, 85, 102, 134, 142,
    238, 203, 31, 64, 109, 252, 29, 244, 235, 17, 44, 149, 157, 200, 152, 132,
    106, 111, 81, 224, 131, 121, 66, 127, 0, 194, 19, 164, 236, 234, 145, 161,
    226, 221, 58, 162, 223, 174, 183, 4, 218, 39, 77, 72, 186, 197, 100, 178,
    153, 182, 253, 239, 75, 98, 25, 228, 168, 87, 70, 250, 51, 86, 8, 141,
];

#[inline]
fn perm(b: u8) -> u8 {
    PERMUTATION[b as usize]
}

/// Pearson chain over three bytes with a salt, folded into a bucket index.
#[inline]
fn trigram_bucket(salt: u8, a: u8, b: u8, c: u8) -> usize {
    let mut h = perm(salt);
    h = perm(h ^ a);
    h = perm(h ^ b);
    h = perm(h ^ c);
    (h & (BUCKET_COUNT as u8 - 1)) as usize
}

/// Incremental accumulator over a byte stream. Chunk boundaries are
/// invisible: the 5-byte sliding window spans `update` calls.
#[derive(Debug, Clone)]
pub struct TlshStream {
    bucket_counts: [u32; BUCKET_COUNT],
    checksum: u8,
    total_len: u64,
    // Last four bytes ingested, most recent first.
    window: [u8; WINDOW - 1],
}

impl Default for TlshStream {
    fn default() -> Self {
        Self::new()
    }
}

impl TlshStream {
    pub fn new() -> Self {
        TlshStream {
            bucket_counts: [0; BUCKET_COUNT],
            checksum: 0,
            total_len: 0,
            window: [0; WINDOW - 1],
        }
    }

    pub fn total_len(&self) -> u64 {
        self.total_len
    }

    pub fn update(&mut self, data: &[u8]) {
        for &b in data {
            self.checksum = perm(self.checksum ^ b);
            if self.total_len >= (WINDOW - 1) as u64 {
                let [a1, a2, a3, a4] = self.window;
                self.bucket_counts[trigram_bucket(2, b, a1, a2)] += 1;
                self.bucket_counts[trigram_bucket(3, b, a1, a3)] += 1;
                self.bucket_counts[trigram_bucket(5, b, a2, a3)] += 1;
                self.bucket_counts[trigram_bucket(7, b, a2, a4)] += 1;
                self.bucket_counts[trigram_bucket(11, b, a1, a4)] += 1;
                self.bucket_counts[trigram_bucket(13, b, a3, a4)] += 1;
            }
            self.window = [b, self.window[0], self.window[1], self.window[2]];
            self.total_len += 1;
        }
    }

    /// Produces the digest for everything ingested so far. Does not consume
    /// the stream; finalizing twice yields identical digests.
    pub fn finalize(&self) -> TlshDigest {
        if self.total_len < MIN_INPUT_LEN {
            return TlshDigest::invalid();
        }
        let (q1, q2, q3) = quartiles(&self.bucket_counts);
        let mut body = [0u8; BODY_BYTES];
        for (i, &count) in self.bucket_counts.iter().enumerate() {
            let code: u8 = if count > q3 {
                3
            } else if count > q2 {
                2
            } else if count > q1 {
                1
            } else {
                0
            };
            body[i / 4] |= code << ((i % 4) * 2);
        }
        let q_ratios = if q3 == 0 {
            0
        } else {
            let q1r = ((q1 as u64 * 100 / q3 as u64) % 16) as u8;
            let q2r = ((q2 as u64 * 100 / q3 as u64) % 16) as u8;
            (q1r << 4) | q2r
        };
        TlshDigest {
            checksum: self.checksum,
            l_value: l_value(self.total_len),
            q_ratios,
            body,
            valid: true,
        }
    }
}

/// Logarithmic length bucket, integer-only so it is identical everywhere.
fn l_value(len: u64) -> u8 {
    let mut l: u32 = 0;
    let mut top: u64 = 1;
    while len > top && l < 255 {
        l += 1;
        top = top + top / 2 + 1;
    }
    l as u8
}

fn quartiles(buckets: &[u32; BUCKET_COUNT]) -> (u32, u32, u32) {
    let mut sorted = *buckets;
    sorted.sort_unstable();
    (sorted[31], sorted[63], sorted[95])
}

/// Fixed-size fuzzy-hash digest with a similarity distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TlshDigest {
    pub checksum: u8,
    pub l_value: u8,
    pub q_ratios: u8,
    pub body: [u8; BODY_BYTES],
    pub valid: bool,
}

impl TlshDigest {
    pub fn invalid() -> Self {
        TlshDigest {
            checksum: 0,
            l_value: 0,
            q_ratios: 0,
            body: [0; BODY_BYTES],
            valid: false,
        }
    }

    /// One-shot convenience over [`TlshStream`].
    pub fn hash(data: &[u8]) -> Self {
        let mut s = TlshStream::new();
        s.update(data);
        s.finalize()
    }

    /// Hashes `data` zero-padded up to [`MIN_INPUT_LEN`], so short-but-real
    /// inputs still yield a valid digest.
    pub fn hash_padded(data: &[u8]) -> Self {
        let mut s = TlshStream::new();
        s.update(data);
        pad_stream(&mut s);
        s.finalize()
    }

    pub fn to_hex(&self) -> String {
        if !self.valid {
            return String::new();
        }
        let mut out = String::with_capacity((3 + BODY_BYTES) * 2);
        for b in [self.checksum, self.l_value, self.q_ratios]
            .iter()
            .chain(self.body.iter())
        {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    pub fn from_hex(hex: &str) -> Option<Self> {
        let bytes: Vec<u8> = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(hex.get(i..i + 2)?, 16).ok())
            .collect::<Option<Vec<u8>>>()?;
        if bytes.len() != 3 + BODY_BYTES {
            return None;
        }
        let mut body = [0u8; BODY_BYTES];
        body.copy_from_slice(&bytes[3..]);
        Some(TlshDigest {
            checksum: bytes[0],
            l_value: bytes[1],
            q_ratios: bytes[2],
            body,
            valid: true,
        })
    }
}

/// Zero-pads a stream up to [`MIN_INPUT_LEN`] ingested bytes.
pub fn pad_stream(s: &mut TlshStream) {
    if s.total_len() < MIN_INPUT_LEN {
        let pad = vec![0u8; (MIN_INPUT_LEN - s.total_len()) as usize];
        s.update(&pad);
    }
}

#[inline]
fn mod_diff(a: u8, b: u8, range: u32) -> u32 {
    let d = (a as i32 - b as i32).unsigned_abs();
    d.min(range - d)
}

/// Distance between two digests: header differences plus per-bucket body
/// code differences (a code gap of 3 scores 6). Symmetric, zero on equal
/// digests; [`MAX_DISTANCE`] if either digest is invalid.
pub fn distance(a: &TlshDigest, b: &TlshDigest) -> u32 {
    if !a.valid || !b.valid {
        return MAX_DISTANCE;
    }
    let mut dist = 0u32;

    let ld = mod_diff(a.l_value, b.l_value, RANGE_LVALUE);
    dist += if ld <= 1 { ld } else { ld * 12 };

    let (aq1, aq2) = (a.q_ratios >> 4, a.q_ratios & 0x0F);
    let (bq1, bq2) = (b.q_ratios >> 4, b.q_ratios & 0x0F);
    for (x, y) in [(aq1, bq1), (aq2, bq2)] {
        let qd = mod_diff(x, y, RANGE_QRATIO);
        dist += if qd <= 1 { qd } else { (qd - 1) * 12 };
    }

    if a.checksum != b.checksum {
        dist += 1;
    }

    for (&ba, &bb) in a.body.iter().zip(b.body.iter()) {
        for shift in [0u8, 2, 4, 6] {
            let ca = (ba >> shift) & 3;
            let cb = (bb >> shift) & 3;
            let d = ca.abs_diff(cb) as u32;
            dist += if d == 3 { 6 } else { d };
        }
    }
    dist
}
