//! FastForward single-producer/single-consumer ring.
//!
//! Each slot carries its own full flag; the producer and the consumer keep
//! private cursors and never read each other's. The element write is
//! published by a release store of the flag, and the consumer's acquire load
//! of the flag orders the read after it. Clearing the flag (release) happens
//! after the element has been moved out.

use std::cell::UnsafeCell;
use std::mem::MaybeUninit;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_utils::{Backoff, CachePadded};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CAPACITY: usize = 1024;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum QueueError {
    #[error("capacity must be at least 2, got {0}")]
    Capacity(usize),
}

/// Why a blocking operation gave up.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BlockError {
    #[error("aborted")]
    Aborted,
    #[error("no progress for {0:?}")]
    Timeout(Duration),
}

#[derive(Debug, PartialEq, Eq)]
pub enum TryDequeue<T> {
    Item(T),
    Empty,
    Closed,
}

#[derive(Debug, PartialEq, Eq)]
pub enum Dequeued<T> {
    Item(T),
    Closed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducerStats {
    pub enqueues: u64,
    /// Blocking enqueues that found the ring full at least once.
    pub full_stalls: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsumerStats {
    pub dequeues: u64,
    /// Blocking dequeues that found the ring empty at least once.
    pub empty_stalls: u64,
}

struct Slot<T> {
    full: AtomicBool,
    val: UnsafeCell<MaybeUninit<T>>,
}

struct Shared<T> {
    slots: Box<[CachePadded<Slot<T>>]>,
    mask: usize,
    closed: CachePadded<AtomicBool>,
}

// Slots are handed between exactly one producer and one consumer through the
// full flag, so sharing the ring is sound whenever T can be sent.
unsafe impl<T: Send> Send for Shared<T> {}
unsafe impl<T: Send> Sync for Shared<T> {}

impl<T> Drop for Shared<T> {
    fn drop(&mut self) {
        for s in self.slots.iter_mut() {
            if *s.full.get_mut() {
                unsafe { s.val.get_mut().assume_init_drop() };
            }
        }
    }
}

/// The sending end. Dropping it closes the channel.
pub struct Producer<T> {
    shared: Arc<Shared<T>>,
    tail: usize,
    pub stats: ProducerStats,
}

/// The receiving end.
pub struct Consumer<T> {
    shared: Arc<Shared<T>>,
    head: usize,
    pub stats: ConsumerStats,
}

/// Cancellation and watchdog settings for blocking operations.
#[derive(Clone, Copy)]
pub struct Control<'a> {
    pub abort: &'a AtomicBool,
    pub timeout: Duration,
}

/// Creates a channel holding at least `capacity` elements; the capacity is
/// rounded up to a power of two.
pub fn channel<T: Send>(capacity: usize) -> Result<(Producer<T>, Consumer<T>), QueueError> {
    if capacity < 2 {
        return Err(QueueError::Capacity(capacity));
    }
    let cap = capacity.next_power_of_two();
    let slots = (0..cap)
        .map(|_| CachePadded::new(Slot { full: AtomicBool::new(false), val: UnsafeCell::new(MaybeUninit::uninit()) }))
        .collect();
    let shared = Arc::new(Shared { slots, mask: cap - 1, closed: CachePadded::new(AtomicBool::new(false)) });
    Ok((
        Producer { shared: shared.clone(), tail: 0, stats: ProducerStats::default() },
        Consumer { shared, head: 0, stats: ConsumerStats::default() },
    ))
}

impl<T> Producer<T> {
    pub fn capacity(&self) -> usize {
        self.shared.mask + 1
    }

    pub fn try_enqueue(&mut self, x: T) -> Result<(), T> {
        let slot = &self.shared.slots[self.tail & self.shared.mask];
        if slot.full.load(Ordering::Acquire) {
            return Err(x);
        }
        unsafe { (*slot.val.get()).write(x) };
        slot.full.store(true, Ordering::Release);
        self.tail = self.tail.wrapping_add(1);
        self.stats.enqueues += 1;
        Ok(())
    }

    /// Spins, then yields, until there is room.
    pub fn enqueue(&mut self, mut x: T, ctl: Control) -> Result<(), BlockError> {
        let backoff = Backoff::new();
        let mut stalled = false;
        let mut start: Option<Instant> = None;
        let mut spins = 0u32;
        loop {
            match self.try_enqueue(x) {
                Ok(()) => return Ok(()),
                Err(back) => x = back,
            }
            if !stalled {
                stalled = true;
                self.stats.full_stalls += 1;
            }
            wait(&backoff, &mut spins, &mut start, ctl)?;
        }
    }

    /// Marks the end of the stream. Idempotent.
    pub fn close(&self) {
        self.shared.closed.store(true, Ordering::Release);
    }
}

impl<T> Drop for Producer<T> {
    fn drop(&mut self) {
        self.close();
    }
}

impl<T> Consumer<T> {
    pub fn capacity(&self) -> usize {
        self.shared.mask + 1
    }

    fn take(&mut self) -> Option<T> {
        let slot = &self.shared.slots[self.head & self.shared.mask];
        if !slot.full.load(Ordering::Acquire) {
            return None;
        }
        let x = unsafe { (*slot.val.get()).assume_init_read() };
        slot.full.store(false, Ordering::Release);
        self.head = self.head.wrapping_add(1);
        self.stats.dequeues += 1;
        Some(x)
    }

    pub fn try_dequeue(&mut self) -> TryDequeue<T> {
        if let Some(x) = self.take() {
            return TryDequeue::Item(x);
        }
        if self.shared.closed.load(Ordering::Acquire) {
            // the close may have raced with a final enqueue
            return match self.take() {
                Some(x) => TryDequeue::Item(x),
                None => TryDequeue::Closed,
            };
        }
        TryDequeue::Empty
    }

    pub fn dequeue(&mut self, ctl: Control) -> Result<Dequeued<T>, BlockError> {
        let backoff = Backoff::new();
        let mut stalled = false;
        let mut start: Option<Instant> = None;
        let mut spins = 0u32;
        loop {
            match self.try_dequeue() {
                TryDequeue::Item(x) => return Ok(Dequeued::Item(x)),
                TryDequeue::Closed => return Ok(Dequeued::Closed),
                TryDequeue::Empty => {}
            }
            if !stalled {
                stalled = true;
                self.stats.empty_stalls += 1;
            }
            wait(&backoff, &mut spins, &mut start, ctl)?;
        }
    }
}

fn wait(backoff: &Backoff, spins: &mut u32, start: &mut Option<Instant>, ctl: Control) -> Result<(), BlockError> {
    if ctl.abort.load(Ordering::Relaxed) {
        return Err(BlockError::Aborted);
    }
    if backoff.is_completed() {
        // a yield may hand the core straight back when the peer shares it
        if *spins > 64 {
            std::thread::sleep(Duration::from_micros(20));
        } else {
            std::thread::yield_now();
        }
    } else {
        backoff.snooze();
    }
    *spins += 1;
    if spins.is_multiple_of(256) {
        let t0 = *start.get_or_insert_with(Instant::now);
        if t0.elapsed() > ctl.timeout {
            return Err(BlockError::Timeout(ctl.timeout));
        }
    }
    Ok(())
}
