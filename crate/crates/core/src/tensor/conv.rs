//! Spatial operations on `[C, H, W]` feature maps.

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{Tape, Var};
use crate::error::{dim_err, Result};

/// Stride, padding and grouping of a 2D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: (1, 1),
            pad: (0, 0),
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    pub fn new(stride: usize, pad: usize) -> Self {
        Conv2dSpec {
            stride: (stride, stride),
            pad: (pad, pad),
            groups: 1,
        }
    }

    pub fn strided(stride: (usize, usize), pad: usize) -> Self {
        Conv2dSpec {
            stride,
            pad: (pad, pad),
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

/// Output size of a strided window sweep.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: Conv2dSpec,
}

impl Geometry {
    /// Unfolds the channels `[c0, c0+cn)` into a `[cn·kh·kw, ho·wo]` matrix.
    fn im2col(&self, x: &[f64], c0: usize, cn: usize) -> Vec<f64> {
        let (sh, sw) = self.spec.stride;
        let (ph, pw) = self.spec.pad;
        let n = self.ho * self.wo;
        let mut col = vec![0.0; cn * self.kh * self.kw * n];
        for ci in 0..cn {
            let plane = &x[(c0 + ci) * self.h * self.w..(c0 + ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((ci * self.kh + ky) * self.kw + kx) * n;
                    for oy in 0..self.ho {
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let dst = &mut col[row + oy * self.wo..row + (oy + 1) * self.wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            if ix >= 0 && ix < self.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    /// Adjoint of [`Geometry::im2col`], accumulating into `dx`.
    fn col2im(&self, col: &[f64], dx: &mut [f64], c0: usize, cn: usize) {
        let (sh, sw) = self.spec.stride;
        let (ph, pw) = self.spec.pad;
        let n = self.ho * self.wo;
        for ci in 0..cn {
            let base = (c0 + ci) * self.h * self.w;
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((ci * self.kh + ky) * self.kw + kx) * n;
                    for oy in 0..self.ho {
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dx[base + iy as usize * self.w + ix as usize] +=
                                    col[row + oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn chw(shape: &[usize], op: &str) -> Result<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => Err(dim_err!("{op} expects a [C, H, W] map, got {shape:?}")),
    }
}

impl Tape {
    /// Cross-correlation of `x: [C_in, H, W]` with `k: [C_out, C_in/groups, kh, kw]`.
    pub fn conv2d(&self, x: Var, k: Var, spec: Conv2dSpec) -> Result<Var> {
        let (c, h, w) = chw(&self.shape(x), "conv2d")?;
        let ks = self.shape(k);
        let [co, cig, kh, kw] = ks[..] else {
            return Err(dim_err!("conv2d kernel must be 4D, got {ks:?}"));
        };
        let g = spec.groups.max(1);
        if c % g != 0 || co % g != 0 || cig * g != c {
            return Err(dim_err!(
                "conv2d: {c} input channels incompatible with kernel {ks:?} in {g} groups"
            ));
        }
        let (ph, pw) = spec.pad;
        if kh > h + 2 * ph || kw > w + 2 * pw {
            return Err(dim_err!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * ph,
                w + 2 * pw
            ));
        }
        if spec.stride.0 == 0 || spec.stride.1 == 0 {
            return Err(dim_err!("conv2d: zero stride"));
        }
        let geo = Geometry {
            c,
            h,
            w,
            kh,
            kw,
            ho: conv_out_len(h, kh, spec.stride.0, ph),
            wo: conv_out_len(w, kw, spec.stride.1, pw),
            spec,
        };
        let n = geo.ho * geo.wo;
        let kdim = cig * kh * kw;
        let cog = co / g;
        let mut out = vec![0.0; co * n];
        let mut cols = Vec::with_capacity(g);
        {
            let xv = self.value(x);
            let kv = self.value(k);
            for gi in 0..g {
                let col = geo.im2col(&xv, gi * cig, cig);
                gemm_nn(
                    &kv[gi * cog * kdim..(gi + 1) * cog * kdim],
                    &col,
                    &mut out[gi * cog * n..(gi + 1) * cog * n],
                    cog,
                    kdim,
                    n,
                );
                cols.push(col);
            }
        }
        let shape = vec![co, geo.ho, geo.wo];
        Ok(self.custom(shape, out, &[x, k], move |ctx| {
            let kv = ctx.input(1);
            let gx = ctx.needs(0).then(|| {
                let mut dx = vec![0.0; geo.c * geo.h * geo.w];
                for (gi, _) in cols.iter().enumerate() {
                    let mut dcol = vec![0.0; kdim * n];
                    gemm_tn(
                        &kv[gi * cog * kdim..(gi + 1) * cog * kdim],
                        &ctx.grad[gi * cog * n..(gi + 1) * cog * n],
                        &mut dcol,
                        cog,
                        kdim,
                        n,
                    );
                    geo.col2im(&dcol, &mut dx, gi * cig, cig);
                }
                dx
            });
            let gk = ctx.needs(1).then(|| {
                let mut dk = vec![0.0; co * kdim];
                for (gi, col) in cols.iter().enumerate() {
                    gemm_nt(
                        &ctx.grad[gi * cog * n..(gi + 1) * cog * n],
                        col,
                        &mut dk[gi * cog * kdim..(gi + 1) * cog * kdim],
                        cog,
                        n,
                        kdim,
                    );
                }
                dk
            });
            vec![gx, gk]
        }))
    }

    /// Per-channel spatial filtering followed by 1×1 channel mixing.
    pub fn depthwise_separable_conv2d(
        &self,
        x: Var,
        depth_k: Var,
        point_k: Var,
        stride: (usize, usize),
        pad: usize,
    ) -> Result<Var> {
        let (c, _, _) = chw(&self.shape(x), "depthwise_separable_conv2d")?;
        let ds = self.shape(depth_k);
        let ps = self.shape(point_k);
        if ds.len() != 4 || ds[0] != c || ds[1] != 1 {
            return Err(dim_err!(
                "depth kernel {ds:?} must hold one filter per each of {c} channels"
            ));
        }
        if ps.len() != 4 || ps[1] != c || ps[2] != 1 || ps[3] != 1 {
            return Err(dim_err!(
                "point kernel {ps:?} must be 1x1 over {c} channels"
            ));
        }
        let spec = Conv2dSpec::strided(stride, pad).with_groups(c);
        let d = self.conv2d(x, depth_k, spec)?;
        self.conv2d(d, point_k, Conv2dSpec::default())
    }

    /// Non-overlapping `k×k` mean pooling.
    pub fn avg_pool2d(&self, x: Var, k: usize) -> Result<Var> {
        let (c, h, w) = chw(&self.shape(x), "avg_pool2d")?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(dim_err!("avg_pool2d: {h}x{w} not divisible by {k}"));
        }
        self.adaptive_avg_pool2d(x, h / k, w / k).inspect(|&v| {
            debug_assert_eq!(self.shape(v), vec![c, h / k, w / k]);
        })
    }

    /// Mean over near-equal partitions `floor(i·H/out)..floor((i+1)·H/out)`.
    pub fn adaptive_avg_pool2d(&self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (c, h, w) = chw(&self.shape(x), "adaptive_avg_pool2d")?;
        if out_h == 0 || out_w == 0 {
            return Err(dim_err!("adaptive_avg_pool2d: zero output size"));
        }
        if out_h > h || out_w > w {
            return Err(dim_err!(
                "adaptive_avg_pool2d: output {out_h}x{out_w} exceeds input {h}x{w}"
            ));
        }
        let rows: Vec<(usize, usize)> = (0..out_h)
            .map(|i| (i * h / out_h, (i + 1) * h / out_h))
            .collect();
        let cols: Vec<(usize, usize)> = (0..out_w)
            .map(|j| (j * w / out_w, (j + 1) * w / out_w))
            .collect();
        let mut out = vec![0.0; c * out_h * out_w];
        {
            let xv = self.value(x);
            for ch in 0..c {
                for (i, &(r0, r1)) in rows.iter().enumerate() {
                    for (j, &(c0, c1)) in cols.iter().enumerate() {
                        let mut s = 0.0;
                        for y in r0..r1 {
                            for xx in c0..c1 {
                                s += xv[(ch * h + y) * w + xx];
                            }
                        }
                        out[(ch * out_h + i) * out_w + j] = s / ((r1 - r0) * (c1 - c0)) as f64;
                    }
                }
            }
        }
        Ok(self.custom(vec![c, out_h, out_w], out, &[x], move |ctx| {
            let mut dx = vec![0.0; c * h * w];
            for ch in 0..c {
                for (i, &(r0, r1)) in rows.iter().enumerate() {
                    for (j, &(c0, c1)) in cols.iter().enumerate() {
                        let g =
                            ctx.grad[(ch * out_h + i) * out_w + j] / ((r1 - r0) * (c1 - c0)) as f64;
                        for y in r0..r1 {
                            for xx in c0..c1 {
                                dx[(ch * h + y) * w + xx] += g;
                            }
                        }
                    }
                }
            }
            vec![Some(dx)]
        }))
    }

    /// Channel-wise spatial mean, `[C, H, W] -> [C, 1, 1]`.
    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        self.adaptive_avg_pool2d(x, 1, 1)
    }

    /// Nearest-neighbour upsampling by integer factors.
    pub fn upsample_nearest(&self, x: Var, fy: usize, fx: usize) -> Result<Var> {
        let (c, h, w) = chw(&self.shape(x), "upsample_nearest")?;
        if fy == 0 || fx == 0 {
            return Err(dim_err!("upsample_nearest: zero factor"));
        }
        let (ho, wo) = (h * fy, w * fx);
        let mut out = vec![0.0; c * ho * wo];
        {
            let xv = self.value(x);
            for ch in 0..c {
                for y in 0..ho {
                    for xx in 0..wo {
                        out[(ch * ho + y) * wo + xx] = xv[(ch * h + y / fy) * w + xx / fx];
                    }
                }
            }
        }
        Ok(self.custom(vec![c, ho, wo], out, &[x], move |ctx| {
            let mut dx = vec![0.0; c * h * w];
            for ch in 0..c {
                for y in 0..ho {
                    for xx in 0..wo {
                        dx[(ch * h + y / fy) * w + xx / fx] += ctx.grad[(ch * ho + y) * wo + xx];
                    }
                }
            }
            vec![Some(dx)]
        }))
    }
}
