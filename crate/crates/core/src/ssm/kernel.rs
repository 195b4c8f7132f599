//! Raw slice kernels for the selective scan.
//!
//! Shapes (row-major):
//!
//! * `u`: `G × L × D` input sequence
//! * `a_bar`, `b_bar`, hidden state `h`: `G × L × D × Ds`
//! * `c`: `G × L × Ds`
//! * `nu`: `D`
//!
//! Per group and per `(d, s)` lane the state obeys
//! `h_k = a_bar_k ⊙ h_{k-1} + b_bar_k ⊙ u_k` with `h_{-1} = 0`, and the
//! readout is `y_k[d] = Σ_s c_k[s] h_k[d, s] + nu[d] u_k[d]`.

use rayon::prelude::*;

use crate::scalar::Scalar;

/// How the recurrence over the sequence axis is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScanMode {
    /// One left-to-right pass.
    #[default]
    Sequential,
    /// Chunked two-pass scan whose chunk carries are combined with a
    /// work-efficient up-sweep/down-sweep tree.
    Parallel,
}

impl std::fmt::Display for ScanMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScanMode::Sequential => "seq",
            ScanMode::Parallel => "par",
        })
    }
}

impl std::str::FromStr for ScanMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "seq" | "sequential" => Ok(ScanMode::Sequential),
            "par" | "parallel" => Ok(ScanMode::Parallel),
            _ => Err(crate::Error::Config(format!("unknown scan mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub groups: usize,
    pub len: usize,
    pub channels: usize,
    pub state: usize,
}

impl ScanDims {
    pub fn lanes(&self) -> usize {
        self.channels * self.state
    }

    /// Number of `(g, k, d, s)` state updates.
    pub fn elements(&self) -> usize {
        self.groups * self.len * self.lanes()
    }
}

/// Exclusive scan with an associative `combine(earlier, later)` using the
/// up-sweep/down-sweep formulation. Levels run in parallel when the item
/// count makes it worthwhile. `items[0]` ends up holding `identity`.
pub fn blelloch_exclusive_scan<T, F>(items: &mut [T], identity: T, combine: F)
where
    T: Clone + Send + Sync,
    F: Fn(&T, &T) -> T + Sync,
{
    let n = items.len();
    if n == 0 {
        return;
    }
    let size = n.next_power_of_two();
    let mut tree: Vec<T> = items.to_vec();
    tree.resize(size, identity.clone());

    // up-sweep: tree[i + 2d - 1] = tree[i + d - 1] ∘ tree[i + 2d - 1]
    let mut d = 1;
    while d < size {
        let step = 2 * d;
        let updates: Vec<(usize, T)> = (0..size / step)
            .into_par_iter()
            .with_min_len(64)
            .map(|j| {
                let i = j * step;
                (i + step - 1, combine(&tree[i + d - 1], &tree[i + step - 1]))
            })
            .collect();
        for (idx, v) in updates {
            tree[idx] = v;
        }
        d = step;
    }

    // down-sweep
    tree[size - 1] = identity;
    let mut d = size / 2;
    while d >= 1 {
        let step = 2 * d;
        let updates: Vec<(usize, T, T)> = (0..size / step)
            .into_par_iter()
            .with_min_len(64)
            .map(|j| {
                let i = j * step;
                let left = tree[i + d - 1].clone();
                let right = tree[i + step - 1].clone();
                (i, right.clone(), combine(&right, &left))
            })
            .collect();
        for (i, left_new, right_new) in updates {
            tree[i + d - 1] = left_new;
            tree[i + step - 1] = right_new;
        }
        d /= 2;
    }
    items.clone_from_slice(&tree[..n]);
}

/// Products of many decay factors underflow; subnormal arithmetic is very
/// slow and their contribution is far below rounding of any carried state.
#[inline]
fn flush<S: Scalar>(v: S) -> S {
    if v.abs() < S::min_positive_value() {
        S::zero()
    } else {
        v
    }
}

/// `h_k = a_k ⊙ h_{k-1} + x_k` over `len` steps of `width` lanes, starting
/// from `h0`. Writes every state into `out` (`len × width`).
fn recurrence_chunk<S: Scalar>(a: &[S], x: &[S], h0: &[S], out: &mut [S], width: usize) {
    let len = out.len() / width.max(1);
    for k in 0..len {
        let (done, rest) = out.split_at_mut(k * width);
        let prev = if k == 0 { h0 } else { &done[(k - 1) * width..] };
        let row = &mut rest[..width];
        let ak = &a[k * width..(k + 1) * width];
        let xk = &x[k * width..(k + 1) * width];
        for w in 0..width {
            row[w] = ak[w] * prev[w] + xk[w];
        }
    }
}

/// Solves the first-order linear recurrence `h_k = a_k ⊙ h_{k-1} + x_k`,
/// `h_{-1} = 0`, for one group of `len × width` values.
pub fn linear_recurrence<S: Scalar>(a: &[S], x: &[S], width: usize, mode: ScanMode) -> Vec<S> {
    let len = a.len().checked_div(width).unwrap_or(0);
    let mut out = vec![S::zero(); len * width];
    if len == 0 {
        return out;
    }
    let zero = vec![S::zero(); width];
    match mode {
        ScanMode::Sequential => recurrence_chunk(a, x, &zero, &mut out, width),
        ScanMode::Parallel => {
            let chunks = (rayon::current_num_threads() * 4).clamp(1, len);
            let chunk_len = len.div_ceil(chunks);
            let bounds: Vec<(usize, usize)> =
                (0..len).step_by(chunk_len).map(|s| (s, (s + chunk_len).min(len))).collect();

            // Per-chunk aggregate (Π a, local end state from zero).
            let mut aggregates: Vec<(Vec<S>, Vec<S>)> = bounds
                .par_iter()
                .map(|&(s, e)| {
                    let mut prod = vec![S::one(); width];
                    let mut h = vec![S::zero(); width];
                    for k in s..e {
                        let ak = &a[k * width..(k + 1) * width];
                        let xk = &x[k * width..(k + 1) * width];
                        for w in 0..width {
                            h[w] = ak[w] * h[w] + xk[w];
                            prod[w] = flush(prod[w] * ak[w]);
                        }
                    }
                    (prod, h)
                })
                .collect();

            // (a1, b1) then (a2, b2)  =  (a2 a1, a2 b1 + b2)
            blelloch_exclusive_scan(
                &mut aggregates,
                (vec![S::one(); width], vec![S::zero(); width]),
                |(a1, b1), (a2, b2)| {
                    let a = a1.iter().zip(a2).map(|(&p, &q)| flush(q * p)).collect();
                    let b = b1.iter().zip(a2.iter().zip(b2)).map(|(&p, (&q, &r))| q * p + r).collect();
                    (a, b)
                },
            );

            let mut slices: Vec<&mut [S]> = Vec::with_capacity(bounds.len());
            let mut rest = out.as_mut_slice();
            for &(s, e) in &bounds {
                let (head, tail) = rest.split_at_mut((e - s) * width);
                slices.push(head);
                rest = tail;
            }
            slices.into_par_iter().zip(bounds.par_iter()).zip(aggregates.par_iter()).for_each(
                |((dst, &(s, e)), (_, carry))| {
                    recurrence_chunk(&a[s * width..e * width], &x[s * width..e * width], carry, dst, width);
                },
            );
        }
    }
    out
}

/// Splits `0..len` into contiguous chunks, a few per worker.
fn chunk_bounds(len: usize) -> Vec<(usize, usize)> {
    let chunks = (rayon::current_num_threads() * 4).clamp(1, len.max(1));
    let chunk_len = len.div_ceil(chunks).max(1);
    (0..len).step_by(chunk_len).map(|s| (s, (s + chunk_len).min(len))).collect()
}

/// Per-group views of the scan inputs.
struct GroupInputs<'a, S> {
    u: &'a [S],
    a: &'a [S],
    b: &'a [S],
    c: &'a [S],
    nu: &'a [S],
    dd: usize,
    ds: usize,
}

impl<S: Scalar> GroupInputs<'_, S> {
    /// Runs steps `start..start + y.len() / dd` from state `h`, writing the
    /// readout into `y` and, if given, every state into `states`.
    fn run(&self, start: usize, h: &mut [S], y: &mut [S], mut states: Option<&mut [S]>) {
        let (dd, ds) = (self.dd, self.ds);
        let lanes = dd * ds;
        for (i, yk) in y.chunks_mut(dd).enumerate() {
            let k = start + i;
            let uk = &self.u[k * dd..(k + 1) * dd];
            let ck = &self.c[k * ds..(k + 1) * ds];
            let ak = &self.a[k * lanes..(k + 1) * lanes];
            let bk = &self.b[k * lanes..(k + 1) * lanes];
            for d in 0..dd {
                let ud = uk[d];
                let mut acc = self.nu[d] * ud;
                for s in 0..ds {
                    let w = d * ds + s;
                    h[w] = ak[w] * h[w] + bk[w] * ud;
                    acc += ck[s] * h[w];
                }
                yk[d] = acc;
            }
            if let Some(st) = states.as_deref_mut() {
                st[i * lanes..(i + 1) * lanes].copy_from_slice(h);
            }
        }
    }

    /// `(Π a, local end state from zero)` over steps `s..e`.
    fn aggregate(&self, s: usize, e: usize) -> (Vec<S>, Vec<S>) {
        let (dd, ds) = (self.dd, self.ds);
        let lanes = dd * ds;
        let mut prod = vec![S::one(); lanes];
        let mut h = vec![S::zero(); lanes];
        for k in s..e {
            let uk = &self.u[k * dd..(k + 1) * dd];
            let ak = &self.a[k * lanes..(k + 1) * lanes];
            let bk = &self.b[k * lanes..(k + 1) * lanes];
            for d in 0..dd {
                let ud = uk[d];
                for s in 0..ds {
                    let w = d * ds + s;
                    h[w] = ak[w] * h[w] + bk[w] * ud;
                    prod[w] = flush(prod[w] * ak[w]);
                }
            }
        }
        (prod, h)
    }
}

/// Exclusive prefix of chunk aggregates under
/// `(a1, b1) then (a2, b2) = (a2 a1, a2 b1 + b2)`; entry `i` becomes the
/// state entering chunk `i` (its `b` half).
fn chunk_carries<S: Scalar>(mut aggregates: Vec<(Vec<S>, Vec<S>)>, width: usize) -> Vec<Vec<S>> {
    blelloch_exclusive_scan(&mut aggregates, (vec![S::one(); width], vec![S::zero(); width]), |(a1, b1), (a2, b2)| {
        let a = a1.iter().zip(a2).map(|(&p, &q)| flush(q * p)).collect();
        let b = b1.iter().zip(a2.iter().zip(b2)).map(|(&p, (&q, &r))| q * p + r).collect();
        (a, b)
    });
    aggregates.into_iter().map(|(_, b)| b).collect()
}

/// Forward scan. Returns `y` (`G × L × D`) and, if `keep_state`, every
/// hidden state (`G × L × D × Ds`).
///
/// The parallel mode splits each group's sequence into chunks, computes
/// every chunk's aggregate concurrently, scans the aggregates and then
/// reruns each chunk from its carry, producing the readout on the way.
pub fn scan_forward<S: Scalar>(
    dims: ScanDims,
    u: &[S],
    a_bar: &[S],
    b_bar: &[S],
    c: &[S],
    nu: &[S],
    mode: ScanMode,
    keep_state: bool,
) -> (Vec<S>, Option<Vec<S>>) {
    let ScanDims { groups, len, channels: dd, state: ds } = dims;
    let lanes = dims.lanes();
    let per_group = len * lanes;

    let run_group = |g: usize, y: &mut [S], states: Option<&mut [S]>| {
        let inp = GroupInputs {
            u: &u[g * len * dd..(g + 1) * len * dd],
            a: &a_bar[g * per_group..(g + 1) * per_group],
            b: &b_bar[g * per_group..(g + 1) * per_group],
            c: &c[g * len * ds..(g + 1) * len * ds],
            nu,
            dd,
            ds,
        };
        match mode {
            ScanMode::Sequential => inp.run(0, &mut vec![S::zero(); lanes], y, states),
            ScanMode::Parallel => {
                let bounds = chunk_bounds(len);
                let aggregates: Vec<_> = bounds.par_iter().map(|&(s, e)| inp.aggregate(s, e)).collect();
                let carries = chunk_carries(aggregates, lanes);
                let mut y_parts = Vec::with_capacity(bounds.len());
                let mut rest = y;
                for &(s, e) in &bounds {
                    let (head, tail) = rest.split_at_mut((e - s) * dd);
                    y_parts.push(head);
                    rest = tail;
                }
                let mut st_parts: Vec<Option<&mut [S]>> = Vec::with_capacity(bounds.len());
                match states {
                    Some(mut rest) => {
                        for &(s, e) in &bounds {
                            let (head, tail) = rest.split_at_mut((e - s) * lanes);
                            st_parts.push(Some(head));
                            rest = tail;
                        }
                    }
                    None => st_parts.extend(bounds.iter().map(|_| None)),
                }
                y_parts
                    .into_par_iter()
                    .zip(st_parts)
                    .zip(bounds.par_iter().zip(carries))
                    .for_each(|((yp, sp), (&(s, _), mut carry))| inp.run(s, &mut carry, yp, sp));
            }
        }
    };

    let mut y = vec![S::zero(); groups * len * dd];
    let mut h = keep_state.then(|| vec![S::zero(); groups * per_group]);
    let y_chunks = y.chunks_mut((len * dd).max(1));
    match h.as_mut() {
        Some(h) => {
            let pairs = y_chunks.zip(h.chunks_mut(per_group.max(1))).enumerate();
            match mode {
                ScanMode::Sequential => pairs.for_each(|(g, (yg, hg))| run_group(g, yg, Some(hg))),
                ScanMode::Parallel => pairs.par_bridge().for_each(|(g, (yg, hg))| run_group(g, yg, Some(hg))),
            }
        }
        None => match mode {
            ScanMode::Sequential => y_chunks.enumerate().for_each(|(g, yg)| run_group(g, yg, None)),
            ScanMode::Parallel => y_chunks.enumerate().par_bridge().for_each(|(g, yg)| run_group(g, yg, None)),
        },
    }
    (y, h)
}

/// Adjoints of [`scan_forward`] given the output adjoint `gy` and the stored
/// hidden states. The state adjoint runs the same recurrence backwards:
/// `gh_k = c_k gy_k + a_bar_{k+1} ⊙ gh_{k+1}`.
pub struct ScanGrads<S> {
    pub u: Vec<S>,
    pub a_bar: Vec<S>,
    pub b_bar: Vec<S>,
    pub c: Vec<S>,
    pub nu: Vec<S>,
}

#[allow(clippy::too_many_arguments)]
pub fn scan_backward<S: Scalar>(
    dims: ScanDims,
    u: &[S],
    a_bar: &[S],
    b_bar: &[S],
    c: &[S],
    nu: &[S],
    h: &[S],
    gy: &[S],
    mode: ScanMode,
) -> ScanGrads<S> {
    let ScanDims { groups, len, channels: dd, state: ds } = dims;
    let lanes = dims.lanes();
    let per_group = len * lanes;
    let mut grads = ScanGrads {
        u: vec![S::zero(); u.len()],
        a_bar: vec![S::zero(); a_bar.len()],
        b_bar: vec![S::zero(); b_bar.len()],
        c: vec![S::zero(); c.len()],
        nu: vec![S::zero(); nu.len()],
    };
    for g in 0..groups {
        let ug = &u[g * len * dd..(g + 1) * len * dd];
        let gyg = &gy[g * len * dd..(g + 1) * len * dd];
        let ag = &a_bar[g * per_group..(g + 1) * per_group];
        let bg = &b_bar[g * per_group..(g + 1) * per_group];
        let cg = &c[g * len * ds..(g + 1) * len * ds];
        let hg = &h[g * per_group..(g + 1) * per_group];

        // reversed time: position j holds step k = len - 1 - j
        let mut ra = vec![S::zero(); per_group];
        let mut rx = vec![S::zero(); per_group];
        for j in 0..len {
            let k = len - 1 - j;
            let dst_a = &mut ra[j * lanes..(j + 1) * lanes];
            if k + 1 < len {
                dst_a.copy_from_slice(&ag[(k + 1) * lanes..(k + 2) * lanes]);
            }
            let dst_x = &mut rx[j * lanes..(j + 1) * lanes];
            for d in 0..dd {
                let gyd = gyg[k * dd + d];
                for s in 0..ds {
                    dst_x[d * ds + s] = cg[k * ds + s] * gyd;
                }
            }
        }
        let rgh = linear_recurrence(&ra, &rx, lanes, mode);

        let gu = &mut grads.u[g * len * dd..(g + 1) * len * dd];
        let ga = &mut grads.a_bar[g * per_group..(g + 1) * per_group];
        let gb = &mut grads.b_bar[g * per_group..(g + 1) * per_group];
        let gc = &mut grads.c[g * len * ds..(g + 1) * len * ds];
        for k in 0..len {
            let ghk = &rgh[(len - 1 - k) * lanes..(len - k) * lanes];
            for d in 0..dd {
                let ud = ug[k * dd + d];
                let gyd = gyg[k * dd + d];
                let mut acc_u = nu[d] * gyd;
                grads.nu[d] += gyd * ud;
                for s in 0..ds {
                    let w = d * ds + s;
                    let gh = ghk[w];
                    let idx = k * lanes + w;
                    if k > 0 {
                        ga[idx] = gh * hg[idx - lanes];
                    }
                    gb[idx] = gh * ud;
                    acc_u += gh * bg[idx];
                    gc[k * ds + s] += gyd * hg[idx];
                }
                gu[k * dd + d] = acc_u;
            }
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blelloch_matches_fold() {
        for n in [1usize, 2, 3, 7, 8, 100, 1000] {
            let mut v: Vec<u64> = (0..n as u64).map(|i| i * i + 1).collect();
            let expect: Vec<u64> = v
                .iter()
                .scan(0u64, |acc, &x| {
                    let prev = *acc;
                    *acc += x;
                    Some(prev)
                })
                .collect();
            blelloch_exclusive_scan(&mut v, 0, |a, b| a + b);
            assert_eq!(v, expect, "n = {n}");
        }
    }

    #[test]
    fn blelloch_respects_operand_order() {
        // string concatenation is associative but not commutative
        let mut v: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        blelloch_exclusive_scan(&mut v, String::new(), |x, y| format!("{x}{y}"));
        assert_eq!(v, vec!["", "a", "ab", "abc", "abcd"]);
    }

    #[test]
    fn recurrence_modes_agree() {
        let len = 257;
        let width = 3;
        let a: Vec<f64> = (0..len * width).map(|i| 0.5 + 0.4 * ((i as f64) * 0.7).sin()).collect();
        let x: Vec<f64> = (0..len * width).map(|i| ((i as f64) * 1.3).cos()).collect();
        let s = linear_recurrence(&a, &x, width, ScanMode::Sequential);
        let p = linear_recurrence(&a, &x, width, ScanMode::Parallel);
        for (u, v) in s.iter().zip(&p) {
            assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
        }
    }

    #[test]
    fn memoryless_when_a_is_zero() {
        let dims = ScanDims { groups: 1, len: 3, channels: 1, state: 2 };
        let u = [1.0, 2.0, 3.0];
        let a = [0.0; 6];
        let b = [0.5, 1.0, 0.5, 1.0, 0.5, 1.0];
        let c = [1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        let nu = [0.25];
        let (y, _) = scan_forward(dims, &u, &a, &b, &c, &nu, ScanMode::Sequential, false);
        // y = (c·b + nu) u = (0.5 + 2 + 0.25) u
        assert_eq!(y, vec![2.75, 5.5, 8.25]);
    }
}
