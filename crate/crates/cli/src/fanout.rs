//! Per-image work fans out across a bounded thread pool. TSVIZ_THREADS caps
//! the width; results come back in input order, so parallel and sequential
//! runs write identical artifacts.

pub fn thread_budget() -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var("TSVIZ_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
    {
        Some(n) if n >= 1 => n.min(64),
        _ => available,
    }
}

/// Apply `f` to every index in 0..n, `threads` wide, preserving index order.
pub fn fan_out<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(threads);
    std::thread::scope(|scope| {
        let f = &f;
        for (w, window) in slots.chunks_mut(chunk).enumerate() {
            scope.spawn(move || {
                for (off, slot) in window.iter_mut().enumerate() {
                    *slot = Some(f(w * chunk + off));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("worker filled slot")).collect()
}
