//! Deterministic fan-out over indexed tasks.
//!
//! Results come back in task order whatever the thread count, so callers
//! that reduce them sequentially get bit-identical sums.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Worker count: `PINN_THREADS` if set and nonzero, else the machine's
/// available parallelism.
pub fn thread_count() -> usize {
    match std::env::var("PINN_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n > 0 => n,
        _ => std::thread::available_parallelism().map_or(1, |n| n.get()),
    }
}

/// Run `f(state, i)` for `i in 0..n`, one `state` per worker from `init`.
/// The first error (lowest index) wins.
pub fn map_indexed<T, E, S, I, F>(n: usize, init: I, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    I: Fn() -> S + Sync,
    F: Fn(&mut S, usize) -> Result<T, E> + Sync,
{
    let threads = thread_count().min(n);
    if threads <= 1 {
        let mut s = init();
        return (0..n).map(|i| f(&mut s, i)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<T, E>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| {
                let mut s = init();
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let r = f(&mut s, i);
                    *slots[i].lock().expect("poisoned result slot") = Some(r);
                }
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("poisoned result slot").expect("task not run")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let v: Result<Vec<usize>, ()> = map_indexed(100, || (), |_, i| Ok(i * i));
        assert_eq!(v.unwrap(), (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn first_error_is_reported() {
        let v: Result<Vec<usize>, usize> = map_indexed(10, || (), |_, i| if i % 4 == 3 { Err(i) } else { Ok(i) });
        assert_eq!(v.unwrap_err(), 3);
    }
}
