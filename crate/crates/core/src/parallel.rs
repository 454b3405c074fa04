//! Scoped worker pool with balanced contiguous partitions and a fixed
//! pairwise reduction tree. Results never depend on the worker count.

use std::ops::Range;

/// Splits `0..len` into `parts` contiguous ranges whose sizes differ by at
/// most one, larger ranges first (`10` over `4` gives `3,3,2,2`).
pub fn balanced_ranges(len: usize, parts: usize) -> Vec<Range<usize>> {
    let parts = parts.max(1);
    let base = len / parts;
    let extra = len % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let size = base + usize::from(p < extra);
        out.push(start..start + size);
        start += size;
    }
    out
}

/// Evaluates `f(i)` for `i in 0..len` across `workers` threads, each owning a
/// contiguous block, and gathers results in index order.
pub fn map_indexed<T, F>(len: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1).min(len.max(1));
    if workers == 1 {
        return (0..len).map(&f).collect();
    }
    let ranges = balanced_ranges(len, workers);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .into_iter()
            .map(|r| scope.spawn(move || r.map(f).collect::<Vec<T>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Sums equal-length vectors with a fixed balanced binary tree over their
/// index order.
pub fn pairwise_sum(mut parts: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    if parts.is_empty() {
        return None;
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop()
}
