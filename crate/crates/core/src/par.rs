//! Order-preserving map helpers that fan out over rayon when the `parallel`
//! feature is enabled and the caller asks for it. Results are identical either
//! way; only the scheduling differs.

/// Whether this build was compiled with rayon support.
pub const PARALLEL_AVAILABLE: bool = cfg!(feature = "parallel");

#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, parallel: bool, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, _parallel: bool, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

pub fn map_slice<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_range(items.len(), parallel, |k| f(&items[k]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_serial_agree() {
        let a = map_range(1000, true, |k| (k as f64).sqrt().sin());
        let b = map_range(1000, false, |k| (k as f64).sqrt().sin());
        assert_eq!(a, b);
    }
}
