//! Four-direction traversal of a 2-D feature map.
//!
//! Path 1 is row-major from the top-left corner, path 2 is row-major over
//! the horizontally flipped map (starting top-right), and paths 3 and 4 are
//! the reverses of 1 and 2 (starting bottom-right and bottom-left). In
//! local mode each `N × N` window is traversed on its own and windows are
//! taken in row-major order, one group per window.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanLayout {
    Global,
    /// Non-overlapping square windows of the given side.
    Local(usize),
}

impl ScanLayout {
    /// `(groups, len)` for a `height × width` map.
    pub fn groups_and_len(self, height: usize, width: usize) -> Result<(usize, usize)> {
        match self {
            ScanLayout::Global => Ok((1, height * width)),
            ScanLayout::Local(n) => {
                if n == 0 || !height.is_multiple_of(n) || !width.is_multiple_of(n) {
                    return Err(Error::invalid("cross_scan", format!("window {n} does not divide {height}×{width}")));
                }
                Ok((height * width / (n * n), n * n))
            }
        }
    }
}

/// Pixel index (`r * width + c`) visited at each flattened position
/// `g * L + k`, for each of the four paths.
pub fn scan_paths(height: usize, width: usize, layout: ScanLayout) -> Result<[Vec<usize>; 4]> {
    layout.groups_and_len(height, width)?;
    let (wh, ww) = match layout {
        ScanLayout::Global => (height, width),
        ScanLayout::Local(n) => (n, n),
    };
    let windows_across = width / ww;
    let per = wh * ww;
    let total = height * width;
    let mut paths: [Vec<usize>; 4] = Default::default();
    for (u, path) in paths.iter_mut().enumerate() {
        path.reserve(total);
        for g in 0..total / per {
            let (r0, c0) = ((g / windows_across) * wh, (g % windows_across) * ww);
            for k in 0..per {
                let k = if u >= 2 { per - 1 - k } else { k };
                let (r, mut c) = (k / ww, k % ww);
                if u % 2 == 1 {
                    c = ww - 1 - c;
                }
                path.push((r0 + r) * width + c0 + c);
            }
        }
    }
    Ok(paths)
}

fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Unfolds `feature: H × W × D` into four `G × L × D` sequences.
pub fn cross_scan<S: Scalar>(feature: &Tensor<S>, layout: ScanLayout) -> Result<[Tensor<S>; 4]> {
    if feature.rank() != 3 {
        return Err(Error::invalid("cross_scan", format!("expected H×W×D, got {:?}", feature.shape())));
    }
    let (h, w, d) = (feature.dim(0), feature.dim(1), feature.dim(2));
    let (groups, len) = layout.groups_and_len(h, w)?;
    let flat = feature.reshape(&[h * w, d])?;
    let paths = scan_paths(h, w, layout)?;
    let mut out = Vec::with_capacity(4);
    for p in &paths {
        out.push(flat.index_select(p)?.reshape(&[groups, len, d])?);
    }
    Ok(out.try_into().expect("four paths"))
}

/// Scatters each sequence back through its path and sums the four maps.
pub fn cross_merge<S: Scalar>(
    seqs: &[Tensor<S>; 4],
    height: usize,
    width: usize,
    layout: ScanLayout,
) -> Result<Tensor<S>> {
    let (groups, len) = layout.groups_and_len(height, width)?;
    let d = seqs[0].shape().last().copied().unwrap_or(0);
    for s in seqs {
        if s.shape() != [groups, len, d] {
            return Err(Error::shape("cross_merge", &[groups, len, d], s.shape()));
        }
    }
    let paths = scan_paths(height, width, layout)?;
    let mut acc: Option<Tensor<S>> = None;
    for (s, p) in seqs.iter().zip(&paths) {
        let back = s.reshape(&[groups * len, d])?.index_select(&inverse(p))?;
        acc = Some(match acc {
            None => back,
            Some(a) => a.add(&back)?,
        });
    }
    acc.expect("four paths").reshape(&[height, width, d])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_orders() {
        let p = scan_paths(2, 2, ScanLayout::Global).unwrap();
        assert_eq!(p[0], vec![0, 1, 2, 3]);
        assert_eq!(p[1], vec![1, 0, 3, 2]);
        assert_eq!(p[2], vec![3, 2, 1, 0]);
        assert_eq!(p[3], vec![2, 3, 0, 1]);
    }

    #[test]
    fn local_requires_divisibility() {
        assert!(scan_paths(4, 6, ScanLayout::Local(4)).is_err());
        assert_eq!(ScanLayout::Local(2).groups_and_len(4, 6).unwrap(), (6, 4));
    }

    #[test]
    fn first_window_of_local_scan() {
        let p = scan_paths(4, 4, ScanLayout::Local(2)).unwrap();
        assert_eq!(&p[0][..8], &[0, 1, 4, 5, 2, 3, 6, 7]);
    }
}
