//! Edge-coverage bookkeeping: a fixed 64 KiB hit-count map per execution,
//! bucketed into bit flags, compared against a persistent virgin map.

pub const MAP_SIZE: usize = 1 << 16;

/// Raw per-execution edge hit counts.
#[derive(Clone)]
pub struct CoverageMap {
    hits: Box<[u32]>,
}

impl Default for CoverageMap {
    fn default() -> Self {
        Self::new()
    }
}

impl CoverageMap {
    pub fn new() -> Self {
        CoverageMap {
            hits: vec![0u32; MAP_SIZE].into_boxed_slice(),
        }
    }

    #[inline]
    pub fn hit(&mut self, edge: u16) {
        self.hits[edge as usize] = self.hits[edge as usize].saturating_add(1);
    }

    pub fn count_edges(&self) -> usize {
        self.hits.iter().filter(|&&h| h > 0).count()
    }

    /// Buckets each hit count into one flag bit: 1, 2, 3, 4-7, 8-15, 16-31,
    /// 32-127, 128+.
    pub fn classify(&self) -> Classified {
        let mut bytes = vec![0u8; MAP_SIZE].into_boxed_slice();
        for (b, &h) in bytes.iter_mut().zip(self.hits.iter()) {
            *b = bucket(h);
        }
        Classified { bytes }
    }
}

pub fn bucket(count: u32) -> u8 {
    match count {
        0 => 0,
        1 => 1,
        2 => 2,
        3 => 4,
        4..=7 => 8,
        8..=15 => 16,
        16..=31 => 32,
        32..=127 => 64,
        _ => 128,
    }
}

/// Bucketed coverage bits for one execution.
pub struct Classified {
    bytes: Box<[u8]>,
}

impl Classified {
    /// Order-independent hash of the coverage bits, used to detect
    /// divergence between the throughput run and the analysis re-run.
    pub fn signature(&self) -> u64 {
        fnv1a(&self.bytes)
    }
}

/// Bits never seen by any execution; starts all-ones and only loses bits.
pub struct VirginMap {
    virgin: Box<[u8]>,
}

impl Default for VirginMap {
    fn default() -> Self {
        Self::new()
    }
}

impl VirginMap {
    pub fn new() -> Self {
        VirginMap {
            virgin: vec![0xFFu8; MAP_SIZE].into_boxed_slice(),
        }
    }

    /// True iff `cov` sets some bit still virgin; those bits are consumed.
    pub fn has_new_bits(&mut self, cov: &Classified) -> bool {
        let mut new = false;
        for (v, &c) in self.virgin.iter_mut().zip(cov.bytes.iter()) {
            if c & *v != 0 {
                *v &= !c;
                new = true;
            }
        }
        new
    }
}

pub fn fnv1a(data: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Stable edge id for a named instrumentation site.
pub fn site_hash(name: &str) -> u16 {
    let h = fnv1a(name.as_bytes());
    (h ^ (h >> 16) ^ (h >> 32) ^ (h >> 48)) as u16
}
