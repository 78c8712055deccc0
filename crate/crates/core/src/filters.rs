//! Spatial kernels shared by the estimators. Every kernel pads borders by
//! replicating the edge pixel.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::imgcore::ScalarMap;

/// Square window of side `2 * radius + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub radius: usize,
}

impl WindowSpec {
    pub const fn new(radius: usize) -> Self {
        Self { radius }
    }

    pub const fn side(self) -> usize {
        2 * self.radius + 1
    }
}

/// The 9x9 local patch used by the dark-channel style estimators.
pub const PATCH: WindowSpec = WindowSpec::new(4);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremum {
    Min,
    Max,
}

impl Extremum {
    fn op(self) -> fn(f64, f64) -> f64 {
        match self {
            Extremum::Min => f64::min,
            Extremum::Max => f64::max,
        }
    }
}

/// Guided-filter configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidedParams {
    pub radius: usize,
    pub epsilon: f64,
}

impl Default for GuidedParams {
    fn default() -> Self {
        Self {
            radius: 16,
            epsilon: 1e-3,
        }
    }
}

/// Van Herk / Gil-Werman running extremum over one line, window clipped
/// to the line (equivalent to replicate padding for min and max).
fn line_extremum(src: &[f64], dst: &mut [f64], r: usize, op: fn(f64, f64) -> f64, scratch: &mut [Vec<f64>; 3]) {
    let n = src.len();
    let k = 2 * r + 1;
    let m = n + 2 * r;
    let [pad, g, h] = scratch;
    pad.clear();
    pad.extend(std::iter::repeat_n(src[0], r));
    pad.extend_from_slice(src);
    pad.extend(std::iter::repeat_n(src[n - 1], r));
    g.resize(m, 0.0);
    h.resize(m, 0.0);
    let mut s = 0;
    while s < m {
        let e = (s + k).min(m);
        g[s] = pad[s];
        for p in s + 1..e {
            g[p] = op(g[p - 1], pad[p]);
        }
        h[e - 1] = pad[e - 1];
        for p in (s..e - 1).rev() {
            h[p] = op(h[p + 1], pad[p]);
        }
        s = e;
    }
    for (i, out) in dst.iter_mut().enumerate() {
        *out = op(h[i], g[i + k - 1]);
    }
}

fn combine_rows(out: &mut [f64], a: &[f64], b: &[f64], op: fn(f64, f64) -> f64) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = op(x, y);
    }
}

/// Per-pixel minimum or maximum over the `(2r+1)^2` window.
pub fn window_extremum(map: &ScalarMap, w: WindowSpec, mode: Extremum) -> ScalarMap {
    let (width, height) = map.dims();
    let r = w.radius;
    if r == 0 || map.is_empty() {
        return map.clone();
    }
    let op = mode.op();
    let src = map.values();
    let mut scratch = [Vec::new(), Vec::new(), Vec::new()];

    let mut horiz = vec![0.0; src.len()];
    for (row_in, row_out) in src.chunks_exact(width).zip(horiz.chunks_exact_mut(width)) {
        line_extremum(row_in, row_out, r, op, &mut scratch);
    }

    // Vertical pass: the same recurrence with whole rows as elements.
    let k = 2 * r + 1;
    let m = height + 2 * r;
    let row = |p: usize| {
        let y = p.saturating_sub(r).min(height - 1);
        &horiz[y * width..(y + 1) * width]
    };
    let mut gv = vec![0.0; m * width];
    let mut hv = vec![0.0; m * width];
    let mut s = 0;
    while s < m {
        let e = (s + k).min(m);
        gv[s * width..(s + 1) * width].copy_from_slice(row(s));
        for p in s + 1..e {
            let (prev, cur) = gv.split_at_mut(p * width);
            combine_rows(&mut cur[..width], &prev[(p - 1) * width..], row(p), op);
        }
        hv[(e - 1) * width..e * width].copy_from_slice(row(e - 1));
        for p in (s..e - 1).rev() {
            let (cur, next) = hv.split_at_mut((p + 1) * width);
            combine_rows(&mut cur[p * width..], &next[..width], row(p), op);
        }
        s = e;
    }
    let mut out = vec![0.0; src.len()];
    for (y, out_row) in out.chunks_exact_mut(width).enumerate() {
        combine_rows(
            out_row,
            &hv[y * width..(y + 1) * width],
            &gv[(y + k - 1) * width..(y + k) * width],
            op,
        );
    }
    ScalarMap::from_vec(width, height, out)
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur with a normalized `kernel_size` tap kernel.
pub fn gaussian_blur(map: &ScalarMap, kernel_size: usize, sigma: f64) -> Result<ScalarMap> {
    if kernel_size == 0 || kernel_size.is_multiple_of(2) {
        return Err(Error::param(
            "kernel_size",
            format!("{kernel_size} must be odd and positive"),
        ));
    }
    if !(sigma > 0.0) {
        return Err(Error::param("sigma", format!("{sigma} must be positive")));
    }
    let kernel = gaussian_kernel(kernel_size, sigma);
    let r = (kernel_size / 2) as isize;
    let (w, h) = map.dims();
    let src = map.values();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(t, &k)| k * row[clamp(x as isize + t as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; src.len()];
    for (t, &k) in kernel.iter().enumerate() {
        for y in 0..h {
            let sy = clamp(y as isize + t as isize - r, h);
            let (src_row, dst_row) = (&tmp[sy * w..(sy + 1) * w], &mut out[y * w..(y + 1) * w]);
            for (o, &v) in dst_row.iter_mut().zip(src_row) {
                *o += k * v;
            }
        }
    }
    Ok(ScalarMap::from_vec(w, h, out))
}

/// Mean over the `(2r+1)^2` window using a summed-area table of the
/// replicate-padded plane.
pub fn box_mean(map: &ScalarMap, radius: usize) -> ScalarMap {
    let (w, h) = map.dims();
    if map.is_empty() {
        return map.clone();
    }
    let src = map.values();
    let (pw, ph) = (w + 2 * radius, h + 2 * radius);
    let stride = pw + 1;
    let mut sat = vec![0.0f64; (ph + 1) * stride];
    for py in 0..ph {
        let sy = py.saturating_sub(radius).min(h - 1);
        let row = &src[sy * w..(sy + 1) * w];
        let mut run = 0.0;
        for px in 0..pw {
            run += row[px.saturating_sub(radius).min(w - 1)];
            sat[(py + 1) * stride + px + 1] = sat[py * stride + px + 1] + run;
        }
    }
    let side = 2 * radius + 1;
    let area = (side * side) as f64;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (top, bottom) = (y * stride, (y + side) * stride);
        for x in 0..w {
            let s = sat[bottom + x + side] - sat[bottom + x] - sat[top + x + side] + sat[top + x];
            out.push(s / area);
        }
    }
    ScalarMap::from_vec(w, h, out)
}

fn mul(a: &ScalarMap, b: &ScalarMap) -> ScalarMap {
    ScalarMap::from_vec(
        a.width(),
        a.height(),
        a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect(),
    )
}

/// Edge-preserving guided filter: `q = mean(a) * guide + mean(b)` with the
/// per-window linear coefficients `a`, `b` of `input` on `guide`.
pub fn guided_filter(guide: &ScalarMap, input: &ScalarMap, w: WindowSpec, epsilon: f64) -> Result<ScalarMap> {
    check_dims(guide.dims(), input.dims())?;
    if !(epsilon > 0.0) {
        return Err(Error::param("epsilon", format!("{epsilon} must be positive")));
    }
    let r = w.radius;
    let mean_i = box_mean(guide, r);
    let mean_p = box_mean(input, r);
    let corr_ii = box_mean(&mul(guide, guide), r);
    let corr_ip = box_mean(&mul(guide, input), r);

    let n = guide.len();
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for i in 0..n {
        let (mi, mp) = (mean_i.values()[i], mean_p.values()[i]);
        let var = corr_ii.values()[i] - mi * mi;
        let cov = corr_ip.values()[i] - mi * mp;
        let ai = cov / (var + epsilon);
        a.push(ai);
        b.push(mp - ai * mi);
    }
    let (gw, gh) = guide.dims();
    let mean_a = box_mean(&ScalarMap::from_vec(gw, gh, a), r);
    let mean_b = box_mean(&ScalarMap::from_vec(gw, gh, b), r);
    let out = (0..n)
        .map(|i| mean_a.values()[i] * guide.values()[i] + mean_b.values()[i])
        .collect();
    Ok(ScalarMap::from_vec(gw, gh, out))
}

#[derive(PartialEq)]
struct Level(f64, usize);

impl Eq for Level {}

impl PartialOrd for Level {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Level {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Grayscale hole filling: reconstruction by erosion seeded from the
/// border, 4-connected. Regional minima not connected to the border are
/// raised to their spill level.
pub fn fill_holes(map: &ScalarMap) -> ScalarMap {
    let (w, h) = map.dims();
    if w <= 2 || h <= 2 {
        return map.clone();
    }
    let src = map.values();
    let mut out = vec![f64::NAN; src.len()];
    let mut queue = BinaryHeap::new();
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                let i = y * w + x;
                out[i] = src[i];
                queue.push(Reverse(Level(src[i], i)));
            }
        }
    }
    while let Some(Reverse(Level(level, i))) = queue.pop() {
        let (x, y) = (i % w, i / w);
        let mut visit = |j: usize| {
            if out[j].is_nan() {
                let v = src[j].max(level);
                out[j] = v;
                queue.push(Reverse(Level(v, j)));
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
    ScalarMap::from_vec(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(w: usize, h: usize, seed: u64) -> ScalarMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarMap::from_fn(w, h, |_, _| rng.gen::<f64>()).unwrap()
    }

    fn clamp_at(m: &ScalarMap, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, m.width() as isize - 1) as usize;
        let cy = y.clamp(0, m.height() as isize - 1) as usize;
        m.get(cx, cy)
    }

    fn naive_extremum(m: &ScalarMap, r: usize, mode: Extremum) -> ScalarMap {
        let r = r as isize;
        ScalarMap::from_fn(m.width(), m.height(), |x, y| {
            let mut acc = match mode {
                Extremum::Min => f64::INFINITY,
                Extremum::Max => f64::NEG_INFINITY,
            };
            for dy in -r..=r {
                for dx in -r..=r {
                    let v = clamp_at(m, x as isize + dx, y as isize + dy);
                    acc = mode.op()(acc, v);
                }
            }
            acc
        })
        .unwrap()
    }

    fn naive_box(m: &ScalarMap, r: usize) -> ScalarMap {
        let ri = r as isize;
        ScalarMap::from_fn(m.width(), m.height(), |x, y| {
            let mut s = 0.0;
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    s += clamp_at(m, x as isize + dx, y as isize + dy);
                }
            }
            s / ((2 * r + 1) * (2 * r + 1)) as f64
        })
        .unwrap()
    }

    /// Guided filter written as an explicit ridge regression per window.
    fn naive_guided(guide: &ScalarMap, input: &ScalarMap, r: usize, eps: f64) -> ScalarMap {
        let (w, h) = guide.dims();
        let ri = r as isize;
        let count = ((2 * r + 1) * (2 * r + 1)) as f64;
        let mut coef = vec![(0.0, 0.0); w * h];
        for y in 0..h {
            for x in 0..w {
                let (mut si, mut sp, mut sii, mut sip) = (0.0, 0.0, 0.0, 0.0);
                for dy in -ri..=ri {
                    for dx in -ri..=ri {
                        let i = clamp_at(guide, x as isize + dx, y as isize + dy);
                        let p = clamp_at(input, x as isize + dx, y as isize + dy);
                        si += i;
                        sp += p;
                        sii += i * i;
                        sip += i * p;
                    }
                }
                // minimise sum (a I + b - p)^2 + count * eps * a^2
                let m11 = sii + count * eps;
                let (m12, m22) = (si, count);
                let det = m11 * m22 - m12 * m12;
                let a = (sip * m22 - m12 * sp) / det;
                let b = (m11 * sp - m12 * sip) / det;
                coef[y * w + x] = (a, b);
            }
        }
        ScalarMap::from_fn(w, h, |x, y| {
            let g = guide.get(x, y);
            let mut acc = 0.0;
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    let cx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let cy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let (a, b) = coef[cy * w + cx];
                    acc += a * g + b;
                }
            }
            acc / count
        })
        .unwrap()
    }

    fn max_diff(a: &ScalarMap, b: &ScalarMap) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn extremum_constant_and_impulse() {
        let c = ScalarMap::filled(6, 5, 0.37);
        assert_eq!(window_extremum(&c, WindowSpec::new(3), Extremum::Min), c);

        let mut v = vec![0.0; 25];
        v[12] = 1.0;
        let imp = ScalarMap::new(5, 5, v).unwrap();
        let d = window_extremum(&imp, WindowSpec::new(1), Extremum::Max);
        for y in 0..5 {
            for x in 0..5 {
                let inside = (1..=3).contains(&x) && (1..=3).contains(&y);
                assert_eq!(d.get(x, y), if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn extremum_matches_brute_force() {
        for (seed, (w, h)) in [(16, 16), (1, 9), (9, 1), (23, 7), (5, 31)].into_iter().enumerate() {
            let m = random_map(w, h, seed as u64);
            for r in [1, 2, 4, 6, 12] {
                for mode in [Extremum::Min, Extremum::Max] {
                    assert_eq!(
                        window_extremum(&m, WindowSpec::new(r), mode),
                        naive_extremum(&m, r, mode)
                    );
                }
            }
        }
    }

    #[test]
    fn gaussian_constant_and_impulse() {
        let c = ScalarMap::filled(12, 9, 0.4);
        let out = gaussian_blur(&c, 9, 1.5).unwrap();
        assert!(out.values().iter().all(|v| (v - 0.4).abs() < 1e-15));

        let mut v = vec![0.0; 41 * 41];
        v[20 * 41 + 20] = 1.0;
        let imp = ScalarMap::new(41, 41, v).unwrap();
        let out = gaussian_blur(&imp, 17, 17.0 / 6.0).unwrap();
        assert!((out.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for d in 1..8 {
            assert!((out.get(20 + d, 20) - out.get(20 - d, 20)).abs() < 1e-15);
            assert!((out.get(20, 20 + d) - out.get(20 + d, 20)).abs() < 1e-15);
            assert!(out.get(20 + d, 20) < out.get(20 + d - 1, 20));
        }
        assert!(gaussian_blur(&imp, 4, 1.0).is_err());
        assert!(gaussian_blur(&imp, 5, 0.0).is_err());
    }

    #[test]
    fn gaussian_matches_direct_2d_convolution() {
        let m = random_map(19, 13, 7);
        let (size, sigma) = (9usize, 1.5);
        let k = gaussian_kernel(size, sigma);
        let r = (size / 2) as isize;
        let direct = ScalarMap::from_fn(19, 13, |x, y| {
            let mut s = 0.0;
            for (ty, ky) in k.iter().enumerate() {
                for (tx, kx) in k.iter().enumerate() {
                    s += ky * kx * clamp_at(&m, x as isize + tx as isize - r, y as isize + ty as isize - r);
                }
            }
            s
        })
        .unwrap();
        assert!(max_diff(&gaussian_blur(&m, size, sigma).unwrap(), &direct) < 1e-9);
    }

    #[test]
    fn box_mean_matches_naive() {
        for seed in 0..4 {
            let m = random_map(32, 32, seed);
            for r in [0, 1, 3, 8, 20] {
                assert!(max_diff(&box_mean(&m, r), &naive_box(&m, r)) < 1e-9);
            }
        }
    }

    #[test]
    fn guided_constant_input() {
        let guide = random_map(20, 14, 3);
        let input = ScalarMap::filled(20, 14, 0.42);
        let out = guided_filter(&guide, &input, WindowSpec::new(4), 1e-3).unwrap();
        assert!(out.values().iter().all(|v| (v - 0.42).abs() < 1e-12));
        assert!(guided_filter(&guide, &ScalarMap::filled(3, 3, 0.0), WindowSpec::new(1), 1e-3).is_err());
        assert!(guided_filter(&guide, &input, WindowSpec::new(1), 0.0).is_err());
    }

    #[test]
    fn guided_matches_regression_oracle() {
        for seed in 0..5 {
            let g = random_map(16, 16, 100 + seed);
            let p = random_map(16, 16, 200 + seed);
            let fast = guided_filter(&g, &p, WindowSpec::new(2), 1e-2).unwrap();
            assert!(max_diff(&fast, &naive_guided(&g, &p, 2, 1e-2)) < 1e-6);
        }
    }

    #[test]
    fn self_guided_step_edge_does_not_overshoot() {
        let step = ScalarMap::from_fn(24, 12, |x, _| if x < 12 { 0.2 } else { 0.8 }).unwrap();
        let out = guided_filter(&step, &step, WindowSpec::new(3), 1e-3).unwrap();
        let oracle = naive_guided(&step, &step, 3, 1e-3);
        assert!(max_diff(&out, &oracle) < 1e-9);
        assert!(out.min() >= 0.2 - 1e-9 && out.max() <= 0.8 + 1e-9);
        // far from the edge the step is preserved
        assert!((out.get(0, 5) - 0.2).abs() < 1e-6 && (out.get(23, 5) - 0.8).abs() < 1e-6);
    }

    #[test]
    fn fill_holes_raises_enclosed_basin() {
        let mut v = vec![0.5; 49];
        for y in 1..6 {
            for x in 1..6 {
                v[y * 7 + x] = 0.9;
            }
        }
        v[3 * 7 + 3] = 0.1;
        v[0] = 0.05;
        let m = ScalarMap::new(7, 7, v).unwrap();
        let f = fill_holes(&m);
        assert_eq!(f.get(3, 3), 0.9);
        assert_eq!(f.get(0, 0), 0.05);
        assert_eq!(f.get(2, 2), 0.9);
        assert!(f.values().iter().zip(m.values()).all(|(a, b)| a >= b));
    }

    proptest! {
        #[test]
        fn extremum_brackets_and_nests(seed in 0u64..1000, r1 in 0usize..4, extra in 0usize..4) {
            let m = random_map(11, 9, seed);
            let lo = window_extremum(&m, WindowSpec::new(r1), Extremum::Min);
            let hi = window_extremum(&m, WindowSpec::new(r1), Extremum::Max);
            let lo2 = window_extremum(&m, WindowSpec::new(r1 + extra), Extremum::Min);
            for i in 0..m.len() {
                prop_assert!(lo.values()[i] <= m.values()[i] && m.values()[i] <= hi.values()[i]);
                prop_assert!(lo2.values()[i] <= lo.values()[i]);
            }
        }

        #[test]
        fn guided_shift_equivariance(seed in 0u64..1000, k in -2.0f64..2.0) {
            let g = random_map(12, 10, seed);
            let p = random_map(12, 10, seed + 1);
            let shifted = p.map(|v| v + k);
            let a = guided_filter(&g, &p, WindowSpec::new(2), 1e-3).unwrap();
            let b = guided_filter(&g, &shifted, WindowSpec::new(2), 1e-3).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((y - x - k).abs() < 1e-9);
            }
        }
    }
}
