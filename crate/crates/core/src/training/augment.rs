//! Per-step image augmentation for training batches.
//!
//! Images are `[C, H, W]` with white (1.0) background and dark ink. Every
//! transform keeps the inked region inside the frame so labels stay valid.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::tensor::Tensor;

const INK: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Probability that a training image is augmented at all.
    pub probability: f64,
    /// Isotropic scale drawn from `[1 - scale, 1 + scale]`.
    pub scale: f64,
    /// Horizontal shear drawn from `[-shear, shear]`.
    pub shear: f64,
    /// Rotation in radians drawn from `[-rotation, rotation]`.
    pub rotation: f64,
    /// Translate the ink anywhere it still fits.
    pub translate: bool,
    /// Probability of thickening strokes with a 3×3 minimum filter.
    pub morphology: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            probability: 0.9,
            scale: 0.12,
            shear: 0.25,
            rotation: 0.04,
            translate: true,
            morphology: 0.3,
            noise: 0.05,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            probability: 0.0,
            ..Self::default()
        }
    }
}

/// Ink bounding box `(x0, y0, x1, y1)`, inclusive, of the first channel.
fn ink_box(plane: &[f64], h: usize, w: usize) -> Option<(f64, f64, f64, f64)> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for y in 0..h {
        for x in 0..w {
            if plane[y * w + x] < INK {
                b = Some(match b {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    b.map(|(x0, y0, x1, y1)| (x0 as f64, y0 as f64, x1 as f64, y1 as f64))
}

fn bilinear(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let at = |xi: isize, yi: isize| -> f64 {
        if xi < 0 || yi < 0 || xi >= w as isize || yi >= h as isize {
            1.0
        } else {
            plane[yi as usize * w + xi as usize]
        }
    };
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (xi, yi) = (fx as isize, fy as isize);
    let top = at(xi, yi) * (1.0 - tx) + at(xi + 1, yi) * tx;
    let bot = at(xi, yi + 1) * (1.0 - tx) + at(xi + 1, yi + 1) * tx;
    top * (1.0 - ty) + bot * ty
}

/// Minimum over a 3×3 window. Thinning is left out: it erases the
/// narrowest synthetic strokes.
fn thicken(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = plane.to_vec();
    for y in 0..h {
        for x in 0..w {
            let mut v = plane[y * w + x];
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    v = v.min(plane[yy * w + xx]);
                }
            }
            out[y * w + x] = v;
        }
    }
    out
}

/// Random affine warp, stroke morphology and noise. Returns the input
/// unchanged when it holds no ink or the draw skips augmentation.
pub fn augment(image: &Tensor, cfg: &AugmentConfig, rng: &mut Rng) -> Tensor {
    let shape = image.shape();
    if shape.len() != 3 || cfg.probability <= 0.0 || !rng.gen_bool(cfg.probability.min(1.0)) {
        return image.clone();
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let src = &image.data()[..h * w];
    let Some((x0, y0, x1, y1)) = ink_box(src, h, w) else {
        return image.clone();
    };
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let sym = |r: &mut Rng, m: f64| if m > 0.0 { r.gen_range(-m..=m) } else { 0.0 };

    // Forward map around the ink centre: p' = A (p - c) + c + t.
    let mut s = 1.0 + sym(rng, cfg.scale);
    let sh = sym(rng, cfg.shear);
    let th = sym(rng, cfg.rotation);
    let corners = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)];
    let (lo_x, hi_x, lo_y, hi_y) = (1.0, w as f64 - 2.0, 1.0, h as f64 - 2.0);
    let extent = |s: f64| {
        let (ct, st) = (th.cos(), th.sin());
        let a = [s * ct, s * (sh * ct - st), s * st, s * (sh * st + ct)];
        let mut e = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (px, py) in corners {
            let (dx, dy) = (px - cx, py - cy);
            let (qx, qy) = (a[0] * dx + a[1] * dy, a[2] * dx + a[3] * dy);
            e = (e.0.min(qx), e.1.max(qx), e.2.min(qy), e.3.max(qy));
        }
        (a, e)
    };
    let (mut a, mut e) = extent(s);
    // Shrink until the warped ink fits inside the frame.
    while (e.1 - e.0 > hi_x - lo_x || e.3 - e.2 > hi_y - lo_y) && s > 0.3 {
        s *= 0.95;
        (a, e) = extent(s);
    }
    let fits = |lo: f64, hi: f64, emin: f64, emax: f64| (lo - emin, hi - emax);
    let (tx_lo, tx_hi) = fits(lo_x, hi_x, cx + e.0, cx + e.1);
    let (ty_lo, ty_hi) = fits(lo_y, hi_y, cy + e.2, cy + e.3);
    let pick = |r: &mut Rng, lo: f64, hi: f64| {
        if hi > lo {
            r.gen_range(lo..=hi)
        } else {
            (lo + hi) / 2.0
        }
    };
    let (tx, ty) = if cfg.translate {
        (pick(rng, tx_lo, tx_hi), pick(rng, ty_lo, ty_hi))
    } else {
        (
            0.0f64.clamp(tx_lo.min(tx_hi), tx_hi.max(tx_lo)),
            0.0f64.clamp(ty_lo.min(ty_hi), ty_hi.max(ty_lo)),
        )
    };

    let det = a[0] * a[3] - a[1] * a[2];
    let inv = [a[3] / det, -a[1] / det, -a[2] / det, a[0] / det];
    let mut plane = vec![1.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx - tx, y as f64 - cy - ty);
            let (sx, sy) = (
                inv[0] * dx + inv[1] * dy + cx,
                inv[2] * dx + inv[3] * dy + cy,
            );
            plane[y * w + x] = bilinear(src, h, w, sx, sy);
        }
    }
    if cfg.morphology > 0.0 && rng.gen_bool(cfg.morphology.min(1.0)) {
        plane = thicken(&plane, h, w);
    }
    if cfg.noise > 0.0 {
        for v in plane.iter_mut() {
            // Sum of uniforms: cheap, bounded, roughly normal.
            let n: f64 = (0..3).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>();
            *v = (*v + n * cfg.noise).clamp(0.0, 1.0);
        }
    }
    Tensor::from_fn(&[c, h, w], |i| plane[i % (h * w)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ScaleLevel;
    use crate::imageio::to_model_input;
    use crate::rng::{stream_rng, Stream};
    use crate::training::synth::generate_synthetic;

    fn line() -> Tensor {
        let s = &generate_synthetic(&Default::default(), ScaleLevel::Line, 1, 3).unwrap()[0];
        to_model_input(&s.image).unwrap()
    }

    #[test]
    fn keeps_ink_inside_and_values_in_range() {
        let x = line();
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let before = ink_box(x.data(), h, w).unwrap();
        let cfg = AugmentConfig {
            probability: 1.0,
            noise: 0.0,
            ..Default::default()
        };
        for i in 0..20 {
            let y = augment(&x, &cfg, &mut stream_rng(1, Stream::Augment, i));
            assert_eq!(y.shape(), x.shape());
            assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let b = ink_box(y.data(), h, w).expect("ink survives");
            assert!(b.0 >= 0.0 && b.2 <= (w - 1) as f64);
            let (wb, wa) = (before.2 - before.0, b.2 - b.0);
            assert!(wa > 0.5 * wb && wa < 1.6 * wb, "{wb} → {wa}");
        }
    }

    #[test]
    fn disabled_is_identity_and_draws_are_deterministic() {
        let x = line();
        let mut r = stream_rng(2, Stream::Augment, 0);
        assert_eq!(augment(&x, &AugmentConfig::disabled(), &mut r), x);
        let cfg = AugmentConfig::default();
        let a = augment(&x, &cfg, &mut stream_rng(2, Stream::Augment, 5));
        let b = augment(&x, &cfg, &mut stream_rng(2, Stream::Augment, 5));
        assert_eq!(a, b);
    }

    #[test]
    fn blank_image_is_untouched() {
        let x = Tensor::from_fn(&[3, 8, 8], |_| 1.0);
        let cfg = AugmentConfig {
            probability: 1.0,
            ..Default::default()
        };
        assert_eq!(augment(&x, &cfg, &mut stream_rng(0, Stream::Augment, 0)), x);
    }
}
