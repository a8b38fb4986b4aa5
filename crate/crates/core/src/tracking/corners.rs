use nalgebra::Vector2;

use super::pyramid::sobel;
use crate::grid::{GrayImage, Grid};
use crate::par;

/// Pixels this close to the border are never reported as corners.
const BORDER: usize = 5;

/// Minimum eigenvalue of the 3×3-summed structure tensor at every pixel.
pub fn min_eigen_response(gray: &GrayImage) -> Grid<f32> {
    let (gx, gy) = sobel(gray);
    min_eigen_from_gradients(&gx, &gy)
}

/// As [`min_eigen_response`], from precomputed Sobel gradients.
pub fn min_eigen_from_gradients(gx: &GrayImage, gy: &GrayImage) -> Grid<f32> {
    let (w, h) = gx.dims();
    let (gx, gy) = (gx.data(), gy.data());
    let xx = box3(w, h, |i| gx[i] * gx[i]);
    let xy = box3(w, h, |i| gx[i] * gy[i]);
    let yy = box3(w, h, |i| gy[i] * gy[i]);
    let out = xx
        .iter()
        .zip(&xy)
        .zip(&yy)
        .map(|((&a, &b), &c)| {
            let half_trace = 0.5 * (a + c);
            let d = 0.5 * (a - c);
            (half_trace - (d * d + b * b).sqrt()).max(0.0)
        })
        .collect();
    Grid::from_vec(w, h, out)
}

/// 3×3 box sum of `f` with border replication.
fn box3(w: usize, h: usize, f: impl Fn(usize) -> f32 + Sync + Send) -> Vec<f32> {
    // horizontal pass
    let mut rows = vec![0f32; w * h];
    par::for_each_row(&mut rows, w, |y, row| {
        let base = y * w;
        for (x, v) in row.iter_mut().enumerate() {
            *v = f(base + x.saturating_sub(1)) + f(base + x) + f(base + (x + 1).min(w - 1));
        }
    });
    let mut out = vec![0f32; w * h];
    par::for_each_row(&mut out, w, |y, row| {
        let up = &rows[y.saturating_sub(1) * w..][..w];
        let mid = &rows[y * w..][..w];
        let dn = &rows[(y + 1).min(h - 1) * w..][..w];
        for x in 0..w {
            row[x] = up[x] + mid[x] + dn[x];
        }
    });
    out
}

/// Shi-Tomasi corners, strongest first.
///
/// Candidates are 3×3 local maxima whose response is at least
/// `quality_level` times the strongest response. They are then accepted
/// greedily so that no two are closer than `min_distance`.
pub fn detect_corners(gray: &GrayImage, max_count: usize, quality_level: f64, min_distance: f64) -> Vec<Vector2<f64>> {
    let (gx, gy) = sobel(gray);
    detect_corners_from_gradients(&gx, &gy, max_count, quality_level, min_distance)
}

/// As [`detect_corners`], reusing Sobel gradients (e.g. a pyramid's base level).
pub fn detect_corners_from_gradients(
    gx: &GrayImage,
    gy: &GrayImage,
    max_count: usize,
    quality_level: f64,
    min_distance: f64,
) -> Vec<Vector2<f64>> {
    let (w, h) = gx.dims();
    if w <= 2 * BORDER || h <= 2 * BORDER || max_count == 0 {
        return Vec::new();
    }
    let resp = min_eigen_from_gradients(gx, gy);
    let max_resp = resp.data().iter().copied().fold(0f32, f32::max);
    if max_resp <= 1e-6 {
        return Vec::new();
    }
    let thresh = (quality_level as f32 * max_resp).max(1e-6);

    let rows: Vec<Vec<(f32, usize)>> = par::map_range(h - 2 * BORDER, |r| {
        let y = r + BORDER;
        let mut found = Vec::new();
        for x in BORDER..w - BORDER {
            let v = *resp.get(x, y);
            if v < thresh {
                continue;
            }
            let mut is_max = true;
            'n: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if resp.get_clamped(x as i64 + dx, y as i64 + dy) > v {
                        is_max = false;
                        break 'n;
                    }
                }
            }
            if is_max {
                found.push((v, y * w + x));
            }
        }
        found
    });
    let mut cands: Vec<(f32, usize)> = rows.into_iter().flatten().collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    // Spatial hash of accepted corners for the distance test.
    let cell = min_distance.max(1.0);
    let gw = (w as f64 / cell).ceil() as usize + 1;
    let gh = (h as f64 / cell).ceil() as usize + 1;
    let mut buckets: Vec<Vec<Vector2<f64>>> = vec![Vec::new(); gw * gh];
    let md2 = min_distance * min_distance;
    let mut out = Vec::new();
    for (_, idx) in cands {
        let p = Vector2::new((idx % w) as f64, (idx / w) as f64);
        let (cx, cy) = ((p.x / cell) as usize, (p.y / cell) as usize);
        let mut ok = true;
        'outer: for by in cy.saturating_sub(1)..=(cy + 1).min(gh - 1) {
            for bx in cx.saturating_sub(1)..=(cx + 1).min(gw - 1) {
                if buckets[by * gw + bx].iter().any(|q| (q - p).norm_squared() < md2) {
                    ok = false;
                    break 'outer;
                }
            }
        }
        if ok {
            buckets[cy * gw + cx].push(p);
            out.push(p);
            if out.len() == max_count {
                break;
            }
        }
    }
    out
}
