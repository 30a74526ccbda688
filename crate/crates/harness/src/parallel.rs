//! Thread-level parallel drivers over the core's pure kernels.
//!
//! Work is split into contiguous index chunks, one per thread, each thread
//! writing its own output slice. Because the core kernels compute every
//! output element with a fixed sequential sum, the results are bit
//! identical to a single-threaded run regardless of the thread count.

use lle_core::bilateral::{bilateral_plane_rows, build_taps};
use lle_core::image::CHANNELS;
use lle_core::Image;

/// Parallel map over `0..n`: `out[i] = f(i)`, deterministic in `f` only.
pub fn map_indexed<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.max(1).min(n.max(1));
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = Vec::with_capacity(n);
    out.resize_with(n, || None);
    let chunk = n.div_ceil(threads);
    std::thread::scope(|scope| {
        let mut rest = out.as_mut_slice();
        let mut start = 0usize;
        while !rest.is_empty() {
            let take = chunk.min(rest.len());
            let (head, tail) = rest.split_at_mut(take);
            let base = start;
            let f = &f;
            scope.spawn(move || {
                for (i, slot) in head.iter_mut().enumerate() {
                    *slot = Some(f(base + i));
                }
            });
            rest = tail;
            start += take;
        }
    });
    out.into_iter().map(|v| v.expect("thread filled slot")).collect()
}

/// Multithreaded bilateral filter; output bits match
/// [`lle_core::bilateral::bilateral`] exactly.
pub fn bilateral_mt(
    img: &Image,
    sigma1: &[f64; 3],
    sigma2: &[f64; 3],
    half: usize,
    threads: usize,
) -> anyhow::Result<Image> {
    if threads <= 1 {
        return Ok(lle_core::bilateral::bilateral(img, sigma1, sigma2, half)?);
    }
    let (h, w) = (img.height(), img.width());
    let mut out = Image::zeros(h, w);
    for c in 0..CHANNELS {
        let plane = img.channel_plane(c);
        let taps = build_taps(half, sigma1[c]);
        let mut filtered = vec![0.0; h * w];
        let rows_per = h.div_ceil(threads.min(h));
        std::thread::scope(|scope| {
            let mut rest = filtered.as_mut_slice();
            let mut row = 0usize;
            while !rest.is_empty() {
                let rows = rows_per.min(rest.len() / w);
                let (head, tail) = rest.split_at_mut(rows * w);
                let plane_ref = &plane;
                let taps_ref = &taps;
                let s2 = sigma2[c];
                let row_start = row;
                scope.spawn(move || {
                    bilateral_plane_rows(plane_ref, h, w, taps_ref, s2, row_start, head);
                });
                rest = tail;
                row += rows;
            }
        });
        out.set_channel_plane(c, &filtered);
    }
    Ok(out)
}
