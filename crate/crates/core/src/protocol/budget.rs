//! Per-node RAM accounting. Every protocol table has a fixed entry size and
//! an occupancy cap; the footprint is the sum of `entries × size` plus a
//! fixed overhead.

/// One accounted table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableBudget {
    pub name: &'static str,
    pub capacity: usize,
    pub entry_bytes: usize,
}

impl TableBudget {
    pub const fn max_bytes(&self) -> usize {
        self.capacity * self.entry_bytes
    }
}

pub const NEIGHBOR_TABLE: TableBudget = TableBudget { name: "neighbor table", capacity: 16, entry_bytes: 8 };
pub const TWO_HOP_CACHE: TableBudget = TableBudget { name: "two-hop cache", capacity: 64, entry_bytes: 5 };
pub const ROUTE_TABLE: TableBudget = TableBudget { name: "route table", capacity: 24, entry_bytes: 12 };
pub const PENDING_RREQ: TableBudget = TableBudget { name: "pending RREQ", capacity: 4, entry_bytes: 16 };
pub const DUPLICATE_CACHE: TableBudget = TableBudget { name: "duplicate cache", capacity: 64, entry_bytes: 6 };
pub const REASSEMBLY: TableBudget = TableBudget { name: "reassembly buffers", capacity: 2, entry_bytes: 140 };
pub const BACKBONE_QUEUE: TableBudget = TableBudget { name: "backbone queue", capacity: 1, entry_bytes: 140 };
/// Fragments parked while a route discovery is outstanding.
pub const DISCOVERY_QUEUE: TableBudget = TableBudget { name: "discovery send queue", capacity: 4, entry_bytes: 140 };
/// Node-to-cluster-head map held by cluster heads.
pub const MEMBERSHIP_DIRECTORY: TableBudget =
    TableBudget { name: "membership directory", capacity: 64, entry_bytes: 6 };

pub const FIXED_OVERHEAD: usize = 256;
pub const RAM_BUDGET: usize = 3072;

/// Duplicate-cache capacity split between its three users.
pub const DATA_DUP_ENTRIES: usize = 32;
pub const RREQ_DUP_ENTRIES: usize = 16;
pub const BACKBONE_DUP_ENTRIES: usize = 16;

pub const TABLES: [TableBudget; 9] = [
    NEIGHBOR_TABLE,
    TWO_HOP_CACHE,
    ROUTE_TABLE,
    PENDING_RREQ,
    DUPLICATE_CACHE,
    REASSEMBLY,
    BACKBONE_QUEUE,
    DISCOVERY_QUEUE,
    MEMBERSHIP_DIRECTORY,
];

/// Live entry counts, one per entry of [`TABLES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Occupancy {
    pub neighbors: usize,
    pub two_hop: usize,
    pub routes: usize,
    pub pending_rreq: usize,
    pub duplicates: usize,
    pub reassembly: usize,
    pub backbone_queues: usize,
    pub discovery_queues: usize,
    pub directory: usize,
}

impl Occupancy {
    pub fn counts(&self) -> [usize; 9] {
        [
            self.neighbors,
            self.two_hop,
            self.routes,
            self.pending_rreq,
            self.duplicates,
            self.reassembly,
            self.backbone_queues,
            self.discovery_queues,
            self.directory,
        ]
    }

    /// Every table filled to its cap.
    pub fn full() -> Self {
        Self {
            neighbors: NEIGHBOR_TABLE.capacity,
            two_hop: TWO_HOP_CACHE.capacity,
            routes: ROUTE_TABLE.capacity,
            pending_rreq: PENDING_RREQ.capacity,
            duplicates: DUPLICATE_CACHE.capacity,
            reassembly: REASSEMBLY.capacity,
            backbone_queues: BACKBONE_QUEUE.capacity,
            discovery_queues: DISCOVERY_QUEUE.capacity,
            directory: MEMBERSHIP_DIRECTORY.capacity,
        }
    }

    /// True when no table exceeds its cap.
    pub fn within_caps(&self) -> bool {
        self.counts().iter().zip(TABLES.iter()).all(|(n, t)| *n <= t.capacity)
    }
}

/// Accounted bytes for the given occupancy.
pub fn footprint(occ: &Occupancy) -> usize {
    FIXED_OVERHEAD + occ.counts().iter().zip(TABLES.iter()).map(|(n, t)| n * t.entry_bytes).sum::<usize>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_overhead_only() {
        assert_eq!(footprint(&Occupancy::default()), FIXED_OVERHEAD);
    }

    #[test]
    fn full_occupancy_fits_budget() {
        let total = footprint(&Occupancy::full());
        let by_table: usize = TABLES.iter().map(TableBudget::max_bytes).sum::<usize>() + FIXED_OVERHEAD;
        assert_eq!(total, by_table);
        assert_eq!(total, 2804);
        assert!(total <= RAM_BUDGET);
    }

    #[test]
    fn dup_cache_split_matches_cap() {
        assert_eq!(DATA_DUP_ENTRIES + RREQ_DUP_ENTRIES + BACKBONE_DUP_ENTRIES, DUPLICATE_CACHE.capacity);
    }

    #[test]
    fn linear_in_each_table() {
        let base = Occupancy::default();
        let one = Occupancy { neighbors: 1, ..base };
        assert_eq!(footprint(&one) - footprint(&base), NEIGHBOR_TABLE.entry_bytes);
    }
}
