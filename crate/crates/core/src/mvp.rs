//! Insert-only registry mapping fuzzy-hash digests to unique state ids.
//!
//! Lookups are radius-bounded nearest-neighbor searches over a
//! multi-vantage-point tree (2 vantage points per internal node, 2x2 fanout
//! on distance medians, leaf capacity 16). Registries stay small (hundreds
//! of states), so there is no rebalancing.

use crate::tlsh::{distance, TlshDigest};
use serde::{Deserialize, Serialize};

/// Reserved id for the dummy initial state and for invalid digests.
pub const DUMMY_STATE: u32 = 0;

const LEAF_CAP: usize = 16;

// The digest distance is not a true metric, but every component satisfies
// d(a,c) <= RELAX * (d(a,b) + d(b,c)). Pruning with this factor keeps the
// tree search exactly equivalent to a linear scan.
const RELAX: u32 = 12;

enum Node {
    Leaf(Vec<usize>),
    Internal {
        vp1: usize,
        vp2: usize,
        m1: u32,
        m2: u32,
        children: Box<[Node; 4]>,
    },
}

pub struct StateRegistry {
    entries: Vec<(TlshDigest, u32)>,
    root: Node,
}

impl Default for StateRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl StateRegistry {
    pub fn new() -> Self {
        StateRegistry {
            entries: Vec::new(),
            root: Node::Leaf(Vec::new()),
        }
    }

    /// Number of stored digests; state ids are exactly `1..=count`.
    pub fn count(&self) -> u32 {
        self.entries.len() as u32
    }

    /// Nearest stored digest within `radius`, ties broken by lowest id.
    /// Invalid probe digests match nothing.
    pub fn lookup(&self, h: &TlshDigest, radius: u32) -> Option<u32> {
        if !h.valid {
            return None;
        }
        let mut best: Option<(u32, u32)> = None; // (dist, id)
        self.search(&self.root, h, radius, &mut best);
        best.map(|(_, id)| id)
    }

    fn consider(&self, idx: usize, h: &TlshDigest, radius: u32, best: &mut Option<(u32, u32)>) {
        let (ref dig, id) = self.entries[idx];
        let d = distance(h, dig);
        if d <= radius {
            let better = match *best {
                None => true,
                Some((bd, bid)) => d < bd || (d == bd && id < bid),
            };
            if better {
                *best = Some((d, id));
            }
        }
    }

    fn search(&self, node: &Node, h: &TlshDigest, radius: u32, best: &mut Option<(u32, u32)>) {
        match node {
            Node::Leaf(items) => {
                for &idx in items {
                    self.consider(idx, h, radius, best);
                }
            }
            Node::Internal {
                vp1,
                vp2,
                m1,
                m2,
                children,
            } => {
                let d1 = distance(h, &self.entries[*vp1].0);
                let d2 = distance(h, &self.entries[*vp2].0);
                // A candidate e with d(h,e) <= radius has
                //   d(e,vp) <= RELAX * (radius + d(h,vp))   and
                //   d(e,vp) >= d(h,vp) / RELAX - radius.
                let visit_near = |d: u32, m: u32| d <= RELAX.saturating_mul(m.saturating_add(radius));
                let visit_far =
                    |d: u32, m: u32| RELAX.saturating_mul(d.saturating_add(radius)) > m;
                // Child (i, j): i selects d(.,vp1) <= m1 vs > m1, j likewise for vp2.
                for (ci, child) in children.iter().enumerate() {
                    let near1 = ci & 2 == 0;
                    let near2 = ci & 1 == 0;
                    let ok1 = if near1 { visit_near(d1, *m1) } else { visit_far(d1, *m1) };
                    let ok2 = if near2 { visit_near(d2, *m2) } else { visit_far(d2, *m2) };
                    if ok1 && ok2 {
                        self.search(child, h, radius, best);
                    }
                }
            }
        }
    }

    /// Stores `h` under the next dense state id. The caller is responsible
    /// for having ruled out a within-radius neighbor first.
    pub fn insert(&mut self, h: TlshDigest) -> u32 {
        let id = self.count() + 1;
        let idx = self.entries.len();
        self.entries.push((h, id));
        Self::insert_into(&self.entries, &mut self.root, idx);
        id
    }

    fn insert_into(entries: &[(TlshDigest, u32)], node: &mut Node, idx: usize) {
        match node {
            Node::Leaf(items) => {
                items.push(idx);
                if items.len() > LEAF_CAP {
                    *node = Self::split(entries, std::mem::take(items));
                }
            }
            Node::Internal {
                vp1,
                vp2,
                m1,
                m2,
                children,
            } => {
                let d1 = distance(&entries[idx].0, &entries[*vp1].0);
                let d2 = distance(&entries[idx].0, &entries[*vp2].0);
                let ci = ((d1 > *m1) as usize) << 1 | (d2 > *m2) as usize;
                Self::insert_into(entries, &mut children[ci], idx);
            }
        }
    }

    fn split(entries: &[(TlshDigest, u32)], items: Vec<usize>) -> Node {
        let vp1 = items[0];
        // Second vantage point: farthest entry from the first.
        let vp2 = *items
            .iter()
            .max_by_key(|&&i| distance(&entries[i].0, &entries[vp1].0))
            .unwrap();
        let mut d1s: Vec<u32> = items
            .iter()
            .map(|&i| distance(&entries[i].0, &entries[vp1].0))
            .collect();
        let mut d2s: Vec<u32> = items
            .iter()
            .map(|&i| distance(&entries[i].0, &entries[vp2].0))
            .collect();
        d1s.sort_unstable();
        d2s.sort_unstable();
        let m1 = d1s[d1s.len() / 2];
        let m2 = d2s[d2s.len() / 2];
        let mut children = Box::new([
            Node::Leaf(Vec::new()),
            Node::Leaf(Vec::new()),
            Node::Leaf(Vec::new()),
            Node::Leaf(Vec::new()),
        ]);
        for &i in &items {
            let d1 = distance(&entries[i].0, &entries[vp1].0);
            let d2 = distance(&entries[i].0, &entries[vp2].0);
            let ci = ((d1 > m1) as usize) << 1 | (d2 > m2) as usize;
            if let Node::Leaf(v) = &mut children[ci] {
                v.push(i);
            }
        }
        Node::Internal {
            vp1,
            vp2,
            m1,
            m2,
            children,
        }
    }

    /// The two-branch lookup-or-insert procedure: an existing state within
    /// `epsilon` wins, otherwise a fresh id is minted. Invalid digests map
    /// to the reserved state 0 and are never stored.
    pub fn get_state_id(&mut self, h: &TlshDigest, epsilon: u32) -> u32 {
        if !h.valid {
            return DUMMY_STATE;
        }
        match self.lookup(h, epsilon) {
            Some(id) => id,
            None => self.insert(*h),
        }
    }

    /// Reference lookup used by tests: exhaustive scan with the same tie rule.
    pub fn lookup_linear(&self, h: &TlshDigest, radius: u32) -> Option<u32> {
        if !h.valid {
            return None;
        }
        let mut best: Option<(u32, u32)> = None;
        for (dig, id) in &self.entries {
            let d = distance(h, dig);
            if d <= radius {
                let better = match best {
                    None => true,
                    Some((bd, bid)) => d < bd || (d == bd && *id < bid),
                };
                if better {
                    best = Some((d, *id));
                }
            }
        }
        best.map(|(_, id)| id)
    }

    pub fn export(&self) -> Vec<RegistryEntry> {
        self.entries
            .iter()
            .map(|(d, id)| RegistryEntry {
                state_id: *id,
                digest_hex: d.to_hex(),
            })
            .collect()
    }
}

/// One row of the JSON registry snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub state_id: u32,
    pub digest_hex: String,
}
