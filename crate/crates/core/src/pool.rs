//! Bounded fan-out with in-order delivery.
//!
//! A reader thread feeds a bounded queue, `concurrency` workers apply the
//! function, and the calling thread restores input order before handing each
//! result to the sink.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::sync_channel;
use std::sync::Mutex;
use std::thread;

/// Applies `f` to every item with at most `concurrency` calls running at once
/// and passes results to `sink` in input order. Stops early if `sink` fails.
pub fn ordered_map<I, T, R, E, F, S>(items: I, concurrency: usize, f: F, mut sink: S) -> Result<(), E>
where
    I: Iterator<Item = T> + Send,
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync,
    S: FnMut(usize, R) -> Result<(), E>,
{
    let concurrency = concurrency.max(1);
    let stop = AtomicBool::new(false);
    let (work_tx, work_rx) = sync_channel::<(usize, T)>(concurrency * 2);
    let work_rx = Mutex::new(work_rx);
    let (res_tx, res_rx) = sync_channel::<(usize, R)>(concurrency * 2);

    thread::scope(|s| {
        let stop = &stop;
        let work_rx = &work_rx;
        let f = &f;
        s.spawn(move || {
            for (i, item) in items.enumerate() {
                if stop.load(Ordering::SeqCst) || work_tx.send((i, item)).is_err() {
                    break;
                }
            }
        });
        for _ in 0..concurrency {
            let res_tx = res_tx.clone();
            s.spawn(move || loop {
                let next = work_rx.lock().expect("work queue poisoned").recv();
                let Ok((i, item)) = next else { break };
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                if res_tx.send((i, f(i, item))).is_err() {
                    break;
                }
            });
        }
        drop(res_tx);

        let mut pending = BTreeMap::new();
        let mut next = 0;
        let mut outcome = Ok(());
        'recv: for (i, r) in res_rx.iter() {
            pending.insert(i, r);
            while let Some(r) = pending.remove(&next) {
                if let Err(e) = sink(next, r) {
                    outcome = Err(e);
                    break 'recv;
                }
                next += 1;
            }
        }
        if outcome.is_err() {
            stop.store(true, Ordering::SeqCst);
            drop(res_rx);
            // Unblock the reader so the scope can join.
            while work_rx.lock().expect("work queue poisoned").recv().is_ok() {}
        }
        outcome
    })
}

/// Collects `ordered_map` results into a vector.
pub fn ordered_collect<I, T, R, F>(items: I, concurrency: usize, f: F) -> Vec<R>
where
    I: Iterator<Item = T> + Send,
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync,
{
    let mut out = Vec::new();
    let _ = ordered_map(items, concurrency, f, |_, r| {
        out.push(r);
        Ok::<(), ()>(())
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;
    use std::time::Duration;

    #[test]
    fn preserves_order_under_jitter() {
        let out = ordered_collect(0..200u64, 8, |i, x| {
            thread::sleep(Duration::from_micros((x * 7919) % 500));
            (i, x * 2)
        });
        assert_eq!(out.len(), 200);
        for (k, (i, v)) in out.into_iter().enumerate() {
            assert_eq!((i, v), (k, k as u64 * 2));
        }
    }

    #[test]
    fn bounded_concurrency() {
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        ordered_collect(0..100, 3, |_, _| {
            let n = live.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(n, Ordering::SeqCst);
            thread::sleep(Duration::from_millis(1));
            live.fetch_sub(1, Ordering::SeqCst);
        });
        assert!(peak.load(Ordering::SeqCst) <= 3);
        assert!(peak.load(Ordering::SeqCst) >= 2);
    }

    #[test]
    fn sink_error_stops_early() {
        let seen = AtomicUsize::new(0);
        let r = ordered_map(
            0..10_000,
            4,
            |_, x| {
                seen.fetch_add(1, Ordering::SeqCst);
                x
            },
            |i, _| if i == 5 { Err("stop") } else { Ok(()) },
        );
        assert_eq!(r, Err("stop"));
        assert!(seen.load(Ordering::SeqCst) < 10_000);
    }
}
