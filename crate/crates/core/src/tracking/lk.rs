use nalgebra::Vector2;

use super::pyramid::{Level, Pyramid};
use crate::grid::GrayImage;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LkParams {
    /// Pyramid levels including full resolution.
    pub levels: usize,
    /// Side of the square integration window (odd).
    pub window: usize,
    pub max_iterations: usize,
    /// Update norm (pixels) below which a level has converged.
    pub epsilon: f64,
    /// Smallest admissible minimum eigenvalue of the per-pixel averaged
    /// gradient matrix; flatter windows are rejected.
    pub min_eigenvalue: f64,
}

impl Default for LkParams {
    fn default() -> Self {
        Self {
            levels: 3,
            window: 21,
            max_iterations: 30,
            epsilon: 0.01,
            min_eigenvalue: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LkResult {
    pub position: Vector2<f64>,
    /// False for flat windows, non-convergence at full resolution and points
    /// that end outside the image.
    pub converged: bool,
}

struct Weights {
    i0: usize,
    w00: f32,
    w01: f32,
    w10: f32,
    w11: f32,
}

/// Bilinear weights for `(x, y)`, or `None` if the 2×2 support leaves the image.
#[inline]
fn weights(img: &GrayImage, x: f32, y: f32) -> Option<Weights> {
    let (fx, fy) = (x.floor(), y.floor());
    if fx < 0.0 || fy < 0.0 || fx + 1.0 >= img.width() as f32 || fy + 1.0 >= img.height() as f32 {
        return None;
    }
    let (ax, ay) = (x - fx, y - fy);
    Some(Weights {
        i0: fy as usize * img.width() + fx as usize,
        w00: (1.0 - ax) * (1.0 - ay),
        w01: ax * (1.0 - ay),
        w10: (1.0 - ax) * ay,
        w11: ax * ay,
    })
}

#[inline]
fn apply(img: &GrayImage, w: &Weights) -> f32 {
    let d = img.data();
    let s = img.width();
    w.w00 * d[w.i0] + w.w01 * d[w.i0 + 1] + w.w10 * d[w.i0 + s] + w.w11 * d[w.i0 + s + 1]
}

#[inline]
fn sample(img: &GrayImage, x: f32, y: f32) -> f32 {
    match weights(img, x, y) {
        Some(w) => apply(img, &w),
        None => img.sample(x, y),
    }
}

/// Template of one window at one level: intensities and gradients.
struct Patch {
    values: Vec<f32>,
    gx: Vec<f32>,
    gy: Vec<f32>,
}

/// Bilinear weights shared by a whole `side`×`side` window whose top-left
/// sample is `(x, y)`; `None` when the window's support leaves the image.
/// Every sample of the window has the same fractional offset.
#[inline]
fn window_weights(img: &GrayImage, x: f32, y: f32, side: usize) -> Option<Weights> {
    let (fx, fy) = (x.floor(), y.floor());
    if fx < 0.0 || fy < 0.0 || fx + side as f32 >= img.width() as f32 || fy + side as f32 >= img.height() as f32 {
        return None;
    }
    weights(img, x, y)
}

/// Calls `f(k, value)` for the `side`×`side` window starting at `w`.
#[inline]
fn for_window(img: &GrayImage, w: &Weights, side: usize, mut f: impl FnMut(usize, f32)) {
    let d = img.data();
    let s = img.width();
    for row in 0..side {
        let a = &d[w.i0 + row * s..w.i0 + row * s + side + 1];
        let b = &d[w.i0 + (row + 1) * s..w.i0 + (row + 1) * s + side + 1];
        for col in 0..side {
            let v = w.w00 * a[col] + w.w01 * a[col + 1] + w.w10 * b[col] + w.w11 * b[col + 1];
            f(row * side + col, v);
        }
    }
}

fn extract_patch(level: &Level, cx: f32, cy: f32, half: i32) -> Patch {
    let side = (2 * half + 1) as usize;
    let n = side * side;
    let (x0, y0) = (cx - half as f32, cy - half as f32);
    if let Some(w) = window_weights(&level.image, x0, y0, side) {
        let mut p = Patch {
            values: vec![0.0; n],
            gx: vec![0.0; n],
            gy: vec![0.0; n],
        };
        for_window(&level.image, &w, side, |k, v| p.values[k] = v);
        for_window(&level.grad_x, &w, side, |k, v| p.gx[k] = v);
        for_window(&level.grad_y, &w, side, |k, v| p.gy[k] = v);
        return p;
    }
    let mut p = Patch {
        values: Vec::with_capacity(n),
        gx: Vec::with_capacity(n),
        gy: Vec::with_capacity(n),
    };
    for dy in -half..=half {
        for dx in -half..=half {
            let (x, y) = (cx + dx as f32, cy + dy as f32);
            match weights(&level.image, x, y) {
                Some(w) => {
                    p.values.push(apply(&level.image, &w));
                    p.gx.push(apply(&level.grad_x, &w));
                    p.gy.push(apply(&level.grad_y, &w));
                }
                None => {
                    p.values.push(level.image.sample(x, y));
                    p.gx.push(level.grad_x.sample(x, y));
                    p.gy.push(level.grad_y.sample(x, y));
                }
            }
        }
    }
    p
}

fn track_one(prev: &Pyramid, cur: &Pyramid, point: &Vector2<f64>, params: &LkParams) -> LkResult {
    let half = (params.window / 2) as i32;
    let n_levels = prev.len().min(cur.len()).min(params.levels.max(1));
    let area = ((2 * half + 1) * (2 * half + 1)) as f64;
    let mut guess = Vector2::<f64>::zeros();
    let mut converged = true;
    for level in (0..n_levels).rev() {
        let scale = (1u32 << level) as f64;
        let p = point / scale;
        let lp = &prev.levels()[level];
        let lc = &cur.levels()[level];
        let patch = extract_patch(lp, p.x as f32, p.y as f32, half);

        let (mut gxx, mut gxy, mut gyy) = (0f64, 0f64, 0f64);
        for i in 0..patch.gx.len() {
            let (a, b) = (patch.gx[i] as f64, patch.gy[i] as f64);
            gxx += a * a;
            gxy += a * b;
            gyy += b * b;
        }
        let det = gxx * gyy - gxy * gxy;
        let min_eig = 0.5 * (gxx + gyy - ((gxx - gyy).powi(2) + 4.0 * gxy * gxy).sqrt()) / area;
        if min_eig < params.min_eigenvalue || det.abs() < f64::EPSILON {
            return LkResult {
                position: point + guess,
                converged: false,
            };
        }

        let mut nu = Vector2::<f64>::zeros();
        let mut level_converged = false;
        for _ in 0..params.max_iterations {
            let q = p + guess + nu;
            let (qx, qy) = (q.x as f32, q.y as f32);
            let (mut bx, mut by) = (0f64, 0f64);
            let side = (2 * half + 1) as usize;
            if let Some(w) = window_weights(&lc.image, qx - half as f32, qy - half as f32, side) {
                // accumulate per row in f32, then widen
                let (mut rx, mut ry) = (0f32, 0f32);
                for_window(&lc.image, &w, side, |k, j| {
                    let diff = patch.values[k] - j;
                    rx += diff * patch.gx[k];
                    ry += diff * patch.gy[k];
                    if (k + 1) % side == 0 {
                        bx += rx as f64;
                        by += ry as f64;
                        rx = 0.0;
                        ry = 0.0;
                    }
                });
            } else {
                let mut k = 0;
                for dy in -half..=half {
                    for dx in -half..=half {
                        let j = sample(&lc.image, qx + dx as f32, qy + dy as f32);
                        let diff = (patch.values[k] - j) as f64;
                        bx += diff * patch.gx[k] as f64;
                        by += diff * patch.gy[k] as f64;
                        k += 1;
                    }
                }
            }
            let eta = Vector2::new((gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det);
            nu += eta;
            if eta.norm() < params.epsilon {
                level_converged = true;
                break;
            }
            // Drifting far beyond the window means the solve has diverged.
            if nu.norm() > 4.0 * params.window as f64 {
                break;
            }
        }
        if level == 0 {
            converged = level_converged;
            guess += nu;
        } else {
            guess = (guess + nu) * 2.0;
        }
    }
    let position = point + guess;
    let (w, h) = cur.base().dims();
    let inside = position.x >= 0.0 && position.y >= 0.0 && position.x <= (w - 1) as f64 && position.y <= (h - 1) as f64;
    LkResult {
        position,
        converged: converged && inside && position.x.is_finite() && position.y.is_finite(),
    }
}

/// Pyramidal Lucas-Kanade. Output order matches `points`.
pub fn track_lk(prev: &Pyramid, cur: &Pyramid, points: &[Vector2<f64>], params: &LkParams) -> Vec<LkResult> {
    par::map(points, |p| track_one(prev, cur, p, params))
}
