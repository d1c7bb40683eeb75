//! Affine warping of RGBA patches into a zero-initialized frame.

use crate::model::Rgb;

/// Forward map `x' = a x + b y + tx`, `y' = c x + d y + ty` in pixel-index
/// coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Affine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Affine {
    /// Uniform resize that keeps pixel centers aligned.
    pub fn resize(scale: f64) -> Self {
        let shift = scale / 2.0 - 0.5;
        Affine {
            a: scale,
            b: 0.0,
            c: 0.0,
            d: scale,
            tx: shift,
            ty: shift,
        }
    }

    /// Scale and rotate about `center`, then translate by `offset`.
    pub fn about_center(center: (f64, f64), scale: f64, rotation_deg: f64, offset: (f64, f64)) -> Self {
        let (sin, cos) = if rotation_deg == 0.0 {
            (0.0, 1.0)
        } else {
            rotation_deg.to_radians().sin_cos()
        };
        let (a, b, c, d) = (scale * cos, -scale * sin, scale * sin, scale * cos);
        let (cx, cy) = center;
        Affine {
            a,
            b,
            c,
            d,
            tx: cx + offset.0 - (a * cx + b * cy),
            ty: cy + offset.1 - (c * cx + d * cy),
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.a * x + self.b * y + self.tx, self.c * x + self.d * y + self.ty)
    }

    pub fn inverse(&self) -> Affine {
        let det = self.a * self.d - self.b * self.c;
        let (a, b, c, d) = if self.b == 0.0 && self.c == 0.0 {
            (1.0 / self.a, 0.0, 0.0, 1.0 / self.d)
        } else {
            (self.d / det, -self.b / det, -self.c / det, self.a / det)
        };
        Affine {
            a,
            b,
            c,
            d,
            tx: -(a * self.tx + b * self.ty),
            ty: -(c * self.tx + d * self.ty),
        }
    }
}

pub(crate) struct Warped {
    pub color: Vec<Rgb>,
    pub alpha: Vec<f32>,
}

/// Bilinear, alpha-weighted sample. Integer positions copy the source pixel
/// exactly.
fn sample(color: &[Rgb], alpha: &[f32], w: usize, h: usize, u: f64, v: f64) -> (Rgb, f32) {
    let (u0, v0) = (u.floor(), v.floor());
    let (fu, fv) = (u - u0, v - v0);
    let (iu, iv) = (u0 as i64, v0 as i64);
    if fu == 0.0 && fv == 0.0 {
        if iu >= 0 && iv >= 0 && (iu as usize) < w && (iv as usize) < h {
            let i = iv as usize * w + iu as usize;
            return (color[i], alpha[i]);
        }
        return ([0.0; 3], 0.0);
    }
    let mut acc_a = 0.0f64;
    let mut acc_c = [0.0f64; 3];
    for (dy, wy) in [(0, 1.0 - fv), (1, fv)] {
        for (dx, wx) in [(0, 1.0 - fu), (1, fu)] {
            let (x, y) = (iu + dx, iv + dy);
            let weight = wx * wy;
            if weight == 0.0 || x < 0 || y < 0 || x as usize >= w || y as usize >= h {
                continue;
            }
            let i = y as usize * w + x as usize;
            let wa = weight * alpha[i] as f64;
            acc_a += wa;
            for ch in 0..3 {
                acc_c[ch] += wa * color[i][ch] as f64;
            }
        }
    }
    if acc_a <= 0.0 {
        return ([0.0; 3], 0.0);
    }
    let rgb = acc_c.map(|c| ((c / acc_a) as f32).clamp(0.0, 1.0));
    (rgb, (acc_a as f32).clamp(0.0, 1.0))
}

/// Warps a `w x h` patch into a `frame_w x frame_h` frame. Pixels whose
/// alpha does not exceed `alpha_floor` stay fully transparent and black.
pub(crate) fn warp_patch(
    color: &[Rgb],
    alpha: &[f32],
    (w, h): (usize, usize),
    (frame_w, frame_h): (usize, usize),
    forward: &Affine,
    alpha_floor: f32,
) -> Warped {
    let mut out = Warped {
        color: vec![[0.0; 3]; frame_w * frame_h],
        alpha: vec![0.0; frame_w * frame_h],
    };
    let corners = [
        forward.apply(-1.0, -1.0),
        forward.apply(w as f64, -1.0),
        forward.apply(-1.0, h as f64),
        forward.apply(w as f64, h as f64),
    ];
    let min_x = corners.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor();
    let max_x = corners.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil();
    let min_y = corners.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor();
    let max_y = corners.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil();
    let x_range = (min_x.max(0.0) as i64)..=(max_x.min(frame_w as f64 - 1.0) as i64);
    let y_range = (min_y.max(0.0) as i64)..=(max_y.min(frame_h as f64 - 1.0) as i64);
    let inverse = forward.inverse();
    for y in y_range {
        for x in x_range.clone() {
            let (u, v) = inverse.apply(x as f64, y as f64);
            let (rgb, a) = sample(color, alpha, w, h, u, v);
            if a > alpha_floor {
                let i = y as usize * frame_w + x as usize;
                out.color[i] = rgb;
                out.alpha[i] = a;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_placement_copies_exactly() {
        let color = vec![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6], [0.7, 0.8, 0.9], [1.0, 0.0, 0.5]];
        let alpha = vec![0.25, 0.5, 0.75, 1.0];
        let fwd = Affine::about_center((0.5, 0.5), 1.0, 0.0, (3.0, 1.0));
        let out = warp_patch(&color, &alpha, (2, 2), (6, 4), &fwd, 0.0);
        for (sy, sx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let i = (sy + 1) * 6 + sx + 3;
            assert_eq!(out.alpha[i], alpha[sy * 2 + sx]);
            assert_eq!(out.color[i], color[sy * 2 + sx]);
        }
        assert_eq!(out.alpha.iter().filter(|&&a| a > 0.0).count(), 4);
    }

    #[test]
    fn inverse_round_trips() {
        let f = Affine::about_center((4.5, 2.0), 1.5, 30.0, (10.0, -3.0));
        let (x, y) = f.apply(1.25, 7.5);
        let (u, v) = f.inverse().apply(x, y);
        assert!((u - 1.25).abs() < 1e-12 && (v - 7.5).abs() < 1e-12);
    }

    #[test]
    fn half_pixel_shift_blends_neighbours() {
        let color = vec![[1.0; 3], [0.0; 3]];
        let alpha = vec![1.0, 1.0];
        let fwd = Affine::about_center((0.5, 0.0), 1.0, 0.0, (0.5, 0.0));
        let out = warp_patch(&color, &alpha, (2, 1), (3, 1), &fwd, 0.0);
        // x=1 samples source u=0.5: halfway between the two pixels.
        assert!((out.color[1][0] - 0.5).abs() < 1e-6);
        assert_eq!(out.alpha[1], 1.0);
        // x=0 samples u=-0.5: half weight on pixel 0 only.
        assert!((out.alpha[0] - 0.5).abs() < 1e-6);
        assert_eq!(out.color[0], [1.0; 3]);
    }

    #[test]
    fn resize_doubles_extent() {
        let out = warp_patch(&[[0.5; 3]], &[1.0], (1, 1), (4, 4), &Affine::resize(2.0), 1e-4);
        let covered: Vec<usize> = (0..16).filter(|&i| out.alpha[i] > 0.0).collect();
        assert!(covered.contains(&0) && covered.contains(&5));
    }
}
