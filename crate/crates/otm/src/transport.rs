//! Message-passing transport between workers.
//!
//! The solver is written against the [`Transport`] trait: ranked peers,
//! ordered exactly-once point-to-point byte messages, and collective
//! gather/exchange operations entered by every rank. The in-process
//! backend ([`InProcNetwork`]) runs one worker per thread with
//! deterministic mailboxes and is the reference implementation; a backend
//! over an external cluster messaging system can implement the same trait
//! without touching solver code.
//!
//! Error handling: a worker that fails mid-collective calls [`Transport::abort`],
//! which poisons the shared synchronization state so peers blocked in a
//! collective return a protocol error instead of hanging. Blocking
//! receives time out (default 60 s) for the same reason.

use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::sync::{mpsc, Arc, Condvar, Mutex};
use std::time::Duration;

use crate::error::{Error, Result};

/// Abstract ranked transport. All byte payloads are opaque.
pub trait Transport: Send {
    /// This worker's rank in 0..world_size.
    fn rank(&self) -> usize;
    /// Number of workers.
    fn world_size(&self) -> usize;
    /// Collective: every rank contributes one payload, every rank receives
    /// the full list indexed by source rank.
    fn all_gather(&mut self, payload: Vec<u8>) -> Result<Vec<Vec<u8>>>;
    /// Collective: `payloads[r]` is sent to rank r; returns the payloads
    /// received, indexed by source rank.
    fn all_to_all(&mut self, payloads: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>>;
    /// Ordered point-to-point send (non-blocking, buffered).
    fn send(&mut self, to: usize, payload: Vec<u8>) -> Result<()>;
    /// Blocking point-to-point receive of the next message from `from`.
    fn recv(&mut self, from: usize) -> Result<Vec<u8>>;
    /// Poisons the shared state so peers stuck in collectives fail fast.
    /// Called by workers on their error path; idempotent.
    fn abort(&mut self);
}

/// All-reduce of a scalar maximum, built from `all_gather`. Every rank
/// folds the identical gathered list, so the result is bit-identical
/// everywhere.
pub fn all_reduce_max(transport: &mut dyn Transport, value: f64) -> Result<f64> {
    let gathered = transport.all_gather(value.to_le_bytes().to_vec())?;
    let mut out = f64::NEG_INFINITY;
    for (rank, bytes) in gathered.iter().enumerate() {
        let arr: [u8; 8] = bytes
            .as_slice()
            .try_into()
            .map_err(|_| Error::Protocol(format!("rank {rank} sent a malformed f64 payload")))?;
        out = out.max(f64::from_le_bytes(arr));
    }
    Ok(out)
}

/// All-reduce of a u64 sum, built from `all_gather`.
pub fn all_reduce_sum_u64(transport: &mut dyn Transport, value: u64) -> Result<u64> {
    let gathered = transport.all_gather(value.to_le_bytes().to_vec())?;
    let mut out = 0u64;
    for (rank, bytes) in gathered.iter().enumerate() {
        let arr: [u8; 8] = bytes
            .as_slice()
            .try_into()
            .map_err(|_| Error::Protocol(format!("rank {rank} sent a malformed u64 payload")))?;
        out = out.wrapping_add(u64::from_le_bytes(arr));
    }
    Ok(out)
}

/// Broadcast from `root`, built from `all_gather` (non-roots contribute an
/// empty payload).
pub fn broadcast(transport: &mut dyn Transport, root: usize, payload: Vec<u8>) -> Result<Vec<u8>> {
    let mine = if transport.rank() == root {
        payload
    } else {
        Vec::new()
    };
    let mut gathered = transport.all_gather(mine)?;
    if root >= gathered.len() {
        return Err(Error::Protocol(format!(
            "broadcast root {root} out of range for world size {}",
            gathered.len()
        )));
    }
    Ok(std::mem::take(&mut gathered[root]))
}

/// Reusable barrier that can be poisoned, with a timeout to surface
/// deadlocks as errors rather than hangs.
struct PoisonBarrier {
    state: Mutex<BarrierState>,
    condvar: Condvar,
    parties: usize,
    timeout: Duration,
}

struct BarrierState {
    round: u64,
    waiting: usize,
    poisoned: bool,
}

impl PoisonBarrier {
    fn new(parties: usize, timeout: Duration) -> Self {
        PoisonBarrier {
            state: Mutex::new(BarrierState {
                round: 0,
                waiting: 0,
                poisoned: false,
            }),
            condvar: Condvar::new(),
            parties,
            timeout,
        }
    }

    fn wait(&self) -> Result<()> {
        let mut state = self
            .state
            .lock()
            .map_err(|_| Error::Protocol("barrier state poisoned by a panicked worker".into()))?;
        if state.poisoned {
            return Err(Error::Protocol("collective aborted by a failed worker".into()));
        }
        state.waiting += 1;
        if state.waiting == self.parties {
            state.waiting = 0;
            state.round = state.round.wrapping_add(1);
            self.condvar.notify_all();
            return Ok(());
        }
        let entry_round = state.round;
        loop {
            let (next, timeout) = self
                .condvar
                .wait_timeout(state, self.timeout)
                .map_err(|_| Error::Protocol("barrier state poisoned by a panicked worker".into()))?;
            state = next;
            if state.poisoned {
                return Err(Error::Protocol("collective aborted by a failed worker".into()));
            }
            if state.round != entry_round {
                return Ok(());
            }
            if timeout.timed_out() {
                state.poisoned = true;
                self.condvar.notify_all();
                return Err(Error::Protocol(format!(
                    "collective timed out after {:?}: a worker never arrived",
                    self.timeout
                )));
            }
        }
    }

    fn poison(&self) {
        if let Ok(mut state) = self.state.lock() {
            state.poisoned = true;
        }
        self.condvar.notify_all();
    }
}

struct InProcShared {
    world_size: usize,
    barrier: PoisonBarrier,
    gather_slots: Mutex<Vec<Vec<u8>>>,
    /// all-to-all staging, indexed [from][to].
    exchange_slots: Mutex<Vec<Vec<Vec<u8>>>>,
}

/// Factory for a set of connected in-process transports, one per worker
/// thread.
pub struct InProcNetwork;

impl InProcNetwork {
    /// Builds `world_size` connected endpoints with the default 60 s
    /// blocking timeout.
    pub fn connect(world_size: usize) -> Vec<InProcTransport> {
        Self::connect_with_timeout(world_size, Duration::from_secs(60))
    }

    pub fn connect_with_timeout(world_size: usize, timeout: Duration) -> Vec<InProcTransport> {
        assert!(world_size >= 1, "world size must be at least 1");
        let shared = Arc::new(InProcShared {
            world_size,
            barrier: PoisonBarrier::new(world_size, timeout),
            gather_slots: Mutex::new(vec![Vec::new(); world_size]),
            exchange_slots: Mutex::new(vec![vec![Vec::new(); world_size]; world_size]),
        });
        // One unbounded channel per ordered (from, to) pair.
        let mut senders: Vec<Vec<Option<Sender<Vec<u8>>>>> = (0..world_size)
            .map(|_| (0..world_size).map(|_| None).collect())
            .collect();
        let mut receivers: Vec<Vec<Option<Receiver<Vec<u8>>>>> = (0..world_size)
            .map(|_| (0..world_size).map(|_| None).collect())
            .collect();
        for from in 0..world_size {
            for to in 0..world_size {
                let (tx, rx) = mpsc::channel();
                senders[from][to] = Some(tx);
                receivers[to][from] = Some(rx);
            }
        }
        senders
            .into_iter()
            .zip(receivers)
            .enumerate()
            .map(|(rank, (tx_row, rx_row))| InProcTransport {
                rank,
                shared: shared.clone(),
                timeout,
                senders: tx_row.into_iter().map(Option::unwrap).collect(),
                receivers: rx_row.into_iter().map(Option::unwrap).collect(),
            })
            .collect()
    }
}

/// One worker's endpoint of an in-process network.
pub struct InProcTransport {
    rank: usize,
    shared: Arc<InProcShared>,
    timeout: Duration,
    senders: Vec<Sender<Vec<u8>>>,
    receivers: Vec<Receiver<Vec<u8>>>,
}

impl InProcTransport {
    fn check_peer(&self, peer: usize) -> Result<()> {
        if peer >= self.shared.world_size {
            return Err(Error::Protocol(format!(
                "peer rank {peer} out of range for world size {}",
                self.shared.world_size
            )));
        }
        Ok(())
    }
}

impl Transport for InProcTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.shared.world_size
    }

    fn all_gather(&mut self, payload: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        {
            let mut slots = self
                .shared
                .gather_slots
                .lock()
                .map_err(|_| Error::Protocol("gather slots poisoned".into()))?;
            slots[self.rank] = payload;
        }
        self.shared.barrier.wait()?; // all writes visible
        let out = {
            let slots = self
                .shared
                .gather_slots
                .lock()
                .map_err(|_| Error::Protocol("gather slots poisoned".into()))?;
            slots.clone()
        };
        self.shared.barrier.wait()?; // all reads done before reuse
        Ok(out)
    }

    fn all_to_all(&mut self, payloads: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>> {
        if payloads.len() != self.shared.world_size {
            return Err(Error::Protocol(format!(
                "all_to_all needs {} payloads, got {}",
                self.shared.world_size,
                payloads.len()
            )));
        }
        {
            let mut slots = self
                .shared
                .exchange_slots
                .lock()
                .map_err(|_| Error::Protocol("exchange slots poisoned".into()))?;
            slots[self.rank] = payloads;
        }
        self.shared.barrier.wait()?;
        let out = {
            let slots = self
                .shared
                .exchange_slots
                .lock()
                .map_err(|_| Error::Protocol("exchange slots poisoned".into()))?;
            (0..self.shared.world_size)
                .map(|from| slots[from][self.rank].clone())
                .collect()
        };
        self.shared.barrier.wait()?;
        Ok(out)
    }

    fn send(&mut self, to: usize, payload: Vec<u8>) -> Result<()> {
        self.check_peer(to)?;
        self.senders[to]
            .send(payload)
            .map_err(|_| Error::Protocol(format!("peer rank {to} has shut down")))
    }

    fn recv(&mut self, from: usize) -> Result<Vec<u8>> {
        self.check_peer(from)?;
        match self.receivers[from].recv_timeout(self.timeout) {
            Ok(payload) => Ok(payload),
            Err(RecvTimeoutError::Timeout) => Err(Error::Protocol(format!(
                "receive from rank {from} timed out after {:?}",
                self.timeout
            ))),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Protocol(format!(
                "peer rank {from} has shut down"
            ))),
        }
    }

    fn abort(&mut self) {
        self.shared.barrier.poison();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    fn run_world<F, T>(world_size: usize, f: F) -> Vec<T>
    where
        F: Fn(InProcTransport) -> T + Sync,
        T: Send,
    {
        let endpoints = InProcNetwork::connect_with_timeout(world_size, Duration::from_secs(5));
        thread::scope(|scope| {
            let handles: Vec<_> = endpoints
                .into_iter()
                .map(|t| scope.spawn(|| f(t)))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    }

    #[test]
    fn single_rank_collectives_are_trivial() {
        let mut t = InProcNetwork::connect(1).into_iter().next().unwrap();
        assert_eq!(t.rank(), 0);
        assert_eq!(t.world_size(), 1);
        assert_eq!(t.all_gather(vec![1, 2, 3]).unwrap(), vec![vec![1, 2, 3]]);
        assert_eq!(t.all_to_all(vec![vec![9]]).unwrap(), vec![vec![9]]);
        t.send(0, vec![7]).unwrap();
        assert_eq!(t.recv(0).unwrap(), vec![7]);
    }

    #[test]
    fn all_gather_is_identically_indexed_on_every_rank() {
        let results = run_world(4, |mut t| {
            let payload = vec![t.rank() as u8; t.rank() + 1];
            t.all_gather(payload).unwrap()
        });
        let expected: Vec<Vec<u8>> = (0..4).map(|r| vec![r as u8; r + 1]).collect();
        for gathered in results {
            assert_eq!(gathered, expected);
        }
    }

    #[test]
    fn all_to_all_routes_by_destination() {
        let results = run_world(3, |mut t| {
            let payloads: Vec<Vec<u8>> = (0..3)
                .map(|to| vec![t.rank() as u8, to as u8])
                .collect();
            t.all_to_all(payloads).unwrap()
        });
        for (me, received) in results.into_iter().enumerate() {
            for (from, payload) in received.into_iter().enumerate() {
                assert_eq!(payload, vec![from as u8, me as u8]);
            }
        }
    }

    #[test]
    fn asymmetric_volumes_are_preserved() {
        let results = run_world(2, |mut t| {
            let to_peer = if t.rank() == 0 {
                vec![vec![], vec![1, 2, 3]]
            } else {
                vec![vec![], vec![]]
            };
            t.all_to_all(to_peer).unwrap()
        });
        assert_eq!(results[0], vec![Vec::<u8>::new(), Vec::new()]);
        assert_eq!(results[1], vec![vec![1, 2, 3], Vec::new()]);
    }

    #[test]
    fn point_to_point_preserves_order() {
        let results = run_world(2, |mut t| {
            if t.rank() == 0 {
                for i in 0..10u8 {
                    t.send(1, vec![i]).unwrap();
                }
                Vec::new()
            } else {
                (0..10).map(|_| t.recv(0).unwrap()[0]).collect::<Vec<u8>>()
            }
        });
        assert_eq!(results[1], (0..10).collect::<Vec<u8>>());
    }

    #[test]
    fn repeated_collectives_do_not_interfere() {
        let results = run_world(4, |mut t| {
            let mut digest = Vec::new();
            for round in 0..50u8 {
                let gathered = t.all_gather(vec![round, t.rank() as u8]).unwrap();
                digest.push(gathered);
                let exchanged = t
                    .all_to_all((0..4).map(|to| vec![round, to as u8]).collect())
                    .unwrap();
                digest.push(exchanged);
            }
            digest
        });
        for r in 1..4 {
            // Gather rounds identical everywhere; exchange rounds differ by
            // destination slot, so compare only the gathers (even indices).
            for i in (0..results[0].len()).step_by(2) {
                assert_eq!(results[0][i], results[r][i]);
            }
        }
    }

    #[test]
    fn recv_without_sender_times_out() {
        let endpoints = InProcNetwork::connect_with_timeout(2, Duration::from_millis(50));
        let mut it = endpoints.into_iter();
        let mut t0 = it.next().unwrap();
        let _t1 = it.next().unwrap();
        let err = t0.recv(1).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn abort_unblocks_peers_with_an_error() {
        let endpoints = InProcNetwork::connect_with_timeout(2, Duration::from_secs(30));
        let mut it = endpoints.into_iter();
        let mut t0 = it.next().unwrap();
        let mut t1 = it.next().unwrap();
        thread::scope(|scope| {
            let waiter = scope.spawn(move || t0.all_gather(vec![1]).unwrap_err());
            thread::sleep(Duration::from_millis(50));
            t1.abort();
            let err = waiter.join().unwrap();
            assert!(matches!(err, Error::Protocol(_)));
        });
    }

    #[test]
    fn reductions_and_broadcast() {
        let results = run_world(3, |mut t| {
            let rank = t.rank();
            let max = all_reduce_max(&mut t, rank as f64 * 1.5).unwrap();
            let sum = all_reduce_sum_u64(&mut t, (rank + 1) as u64).unwrap();
            let bcast = broadcast(&mut t, 1, vec![rank as u8 + 10]).unwrap();
            (max, sum, bcast)
        });
        for (max, sum, bcast) in results {
            assert_eq!(max, 3.0);
            assert_eq!(sum, 6);
            assert_eq!(bcast, vec![11]);
        }
    }

    #[test]
    fn out_of_range_peer_is_rejected() {
        let mut t = InProcNetwork::connect(1).into_iter().next().unwrap();
        assert!(t.send(3, vec![]).is_err());
        assert!(t.recv(9).is_err());
    }
}
