//! Asynchronous queue scheduler with synchronization elision.
//!
//! Kernels with one producing queue land on that queue; with several,
//! the least recently used queue takes them and waits on the
//! producers.  Each wait is a host-level join of the two queues, so it
//! is recorded symmetrically, and dependencies whose producer predates
//! the recorded join are elided.  Logical time is an event counter.

use super::region::RegionId;
use std::collections::{BTreeMap, BTreeSet, HashMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wait {
    pub queue: usize,
    /// Producer event the wait resolves.
    pub dep_time: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleDecision {
    pub queue: usize,
    pub time: u64,
    pub waits: Vec<Wait>,
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    n_queues: usize,
    time: u64,
    last_use: Vec<u64>,
    sync: Vec<Vec<u64>>,
    writer: HashMap<RegionId, (usize, u64)>,
    readers: HashMap<RegionId, BTreeMap<usize, u64>>,
}

impl Scheduler {
    pub fn new(n_queues: usize) -> Scheduler {
        let n = n_queues.max(1);
        Scheduler {
            n_queues: n,
            time: 0,
            last_use: vec![0; n],
            sync: vec![vec![0; n]; n],
            writer: HashMap::new(),
            readers: HashMap::new(),
        }
    }

    pub fn n_queues(&self) -> usize {
        self.n_queues
    }

    pub fn now(&self) -> u64 {
        self.time
    }

    pub fn sync_entry(&self, a: usize, b: usize) -> u64 {
        self.sync[a][b]
    }

    /// Schedules one kernel event given the regions it reads and
    /// writes; returns the chosen queue and the non-elided waits.
    pub fn schedule(
        &mut self,
        reads: &[RegionId],
        writes: &[RegionId],
        requested: Option<i64>,
    ) -> ScheduleDecision {
        // dependencies: latest producer per queue
        let mut deps: BTreeMap<usize, u64> = BTreeMap::new();
        let note = |q: usize, t: u64, deps: &mut BTreeMap<usize, u64>| {
            let e = deps.entry(q).or_insert(0);
            *e = (*e).max(t);
        };
        for r in reads {
            if let Some((q, t)) = self.writer.get(r) {
                note(*q, *t, &mut deps);
            }
        }
        for w in writes {
            if let Some((q, t)) = self.writer.get(w) {
                note(*q, *t, &mut deps);
            }
            if let Some(rs) = self.readers.get(w) {
                for (q, t) in rs {
                    note(*q, *t, &mut deps);
                }
            }
        }

        let queue = match requested {
            Some(id) => (id.rem_euclid(self.n_queues as i64)) as usize,
            None => {
                let dep_queues: BTreeSet<usize> = deps.keys().copied().collect();
                if dep_queues.len() == 1 {
                    *dep_queues.iter().next().expect("one dependency queue")
                } else {
                    // least recently used, lowest index on ties
                    (0..self.n_queues)
                        .min_by_key(|q| (self.last_use[*q], *q))
                        .expect("at least one queue")
                }
            }
        };

        self.time += 1;
        let now = self.time;
        let mut waits = Vec::new();
        for (q, dep_t) in &deps {
            if *q == queue {
                continue; // same-queue order is free
            }
            if self.sync[queue][*q] >= *dep_t {
                continue; // already solved by an earlier synchronization
            }
            waits.push(Wait {
                queue: *q,
                dep_time: *dep_t,
            });
            self.sync[queue][*q] = now;
            self.sync[*q][queue] = now;
        }

        self.last_use[queue] = now;
        for r in reads {
            self.readers.entry(*r).or_default().insert(queue, now);
        }
        for w in writes {
            self.writer.insert(*w, (queue, now));
            self.readers.remove(w);
        }
        ScheduleDecision {
            queue,
            time: now,
            waits,
        }
    }

    /// Host-level synchronization with every queue; all pending
    /// dependencies are resolved after this point.
    pub fn host_sync(&mut self) -> u64 {
        self.time += 1;
        let now = self.time;
        for a in 0..self.n_queues {
            for b in 0..self.n_queues {
                self.sync[a][b] = now;
            }
        }
        now
    }

    /// Forget all recorded accesses of a region (after deletion).
    pub fn forget_region(&mut self, id: RegionId) {
        self.writer.remove(&id);
        self.readers.remove(&id);
    }
}
