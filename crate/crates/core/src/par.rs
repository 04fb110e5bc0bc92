//! Minimal deterministic fork-join: split a slice into contiguous chunks,
//! map them on scoped worker threads, and reassemble in order. Output is
//! identical for any worker count.

/// Applies `f` to every item, using up to `workers` OS threads. `workers <= 1`
/// runs inline.
pub fn map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if workers <= 1 || items.len() < 2 {
        return items.iter().map(&f).collect();
    }
    let workers = workers.min(items.len());
    let chunk = items.len().div_ceil(workers);
    let mut out: Vec<Option<R>> = Vec::with_capacity(items.len());
    out.resize_with(items.len(), || None);
    let mut rest: &mut [Option<R>] = &mut out;
    std::thread::scope(|scope| {
        for piece in items.chunks(chunk) {
            let (slot, tail) = rest.split_at_mut(piece.len());
            rest = tail;
            let f = &f;
            scope.spawn(move || {
                for (s, item) in slot.iter_mut().zip(piece) {
                    *s = Some(f(item));
                }
            });
        }
    });
    out.into_iter().map(|r| r.expect("worker filled slot")).collect()
}
