use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

/// Runs `work` over `items` on at most `max_in_flight` threads and hands
/// each result to `sink` on the calling thread, in input order.
///
/// The sink is the single writer. If it returns an error no new items are
/// started and that error is returned once in-flight work drains.
pub fn run_ordered<T, R, E, W, S>(items: &[T], max_in_flight: usize, work: W, mut sink: S) -> Result<(), E>
where
    T: Sync,
    R: Send,
    W: Fn(&T) -> R + Sync,
    S: FnMut(usize, R) -> Result<(), E>,
{
    if items.is_empty() {
        return Ok(());
    }
    let workers = max_in_flight.clamp(1, items.len());
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel::<(usize, R)>(workers * 2);
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort, work) = (&next, &abort, &work);
            scope.spawn(move || loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let result = work(&items[i]);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending = BTreeMap::new();
        let mut want = 0;
        let mut outcome = Ok(());
        for (i, result) in rx {
            pending.insert(i, result);
            while let Some(result) = pending.remove(&want) {
                if outcome.is_ok() {
                    if let Err(e) = sink(want, result) {
                        outcome = Err(e);
                        abort.store(true, Ordering::Relaxed);
                    }
                }
                want += 1;
            }
        }
        outcome
    })
}
