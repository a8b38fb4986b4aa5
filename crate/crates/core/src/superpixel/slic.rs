use std::collections::VecDeque;

use super::color::{rgb_image_to_lab, LabImage};
use crate::grid::{DepthMap, Grid, LabelMap};
use crate::{par, Error, Result};

/// How the depth term compares two depths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DepthTerm {
    /// `|d_i − d_c|`.
    #[default]
    Difference,
    /// `sqrt(d_i² + d_c²)`, which grows with absolute depth.
    Literal,
}

/// Normalisers for the colour, spatial and depth terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    pub color: f64,
    pub space: f64,
    pub depth: f64,
}

/// Position, Lab colour and optional depth of a pixel or a centre.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Descriptor {
    pub x: f64,
    pub y: f64,
    pub l: f64,
    pub a: f64,
    pub b: f64,
    pub d: Option<f64>,
}

/// `D_C / color + D_E / space + D_Z / depth`; the depth term is dropped
/// when either depth is missing.
pub fn cluster_distance(p: &Descriptor, c: &Descriptor, norms: &Norms, term: DepthTerm) -> f64 {
    let dc = ((p.l - c.l).powi(2) + (p.a - c.a).powi(2) + (p.b - c.b).powi(2)).sqrt();
    let de = ((p.x - c.x).powi(2) + (p.y - c.y).powi(2)).sqrt();
    let dz = match (p.d, c.d) {
        (Some(a), Some(b)) => match term {
            DepthTerm::Difference => (a - b).abs(),
            DepthTerm::Literal => (a * a + b * b).sqrt(),
        },
        _ => 0.0,
    };
    let depth_part = if dz == 0.0 { 0.0 } else { dz / norms.depth };
    dc / norms.color + de / norms.space + depth_part
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlicParams {
    /// Seed spacing `r` in pixels; also the spatial normaliser.
    pub grid_spacing: usize,
    pub iterations: usize,
    pub color_norm: f64,
    /// Depth normaliser in meters; `f64::INFINITY` gives colour-only SLIC.
    pub depth_norm: f64,
    pub depth_term: DepthTerm,
    /// Minimum fraction of valid-depth pixels for a depth-valid superpixel.
    pub min_valid_depth_fraction: f64,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            grid_spacing: 15,
            iterations: 5,
            color_norm: 40.0,
            depth_norm: 0.3,
            depth_term: DepthTerm::Difference,
            min_valid_depth_fraction: 0.2,
        }
    }
}

impl SlicParams {
    pub fn norms(&self) -> Norms {
        Norms {
            color: self.color_norm,
            space: self.grid_spacing as f64,
            depth: self.depth_norm,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuperPixel {
    pub x: f64,
    pub y: f64,
    pub l: f64,
    pub a: f64,
    pub b: f64,
    /// Mean of the valid member depths.
    pub depth: Option<f64>,
    /// Fraction of members with valid depth.
    pub valid_depth_fraction: f64,
    /// Enough valid depth to take part in geometric reasoning.
    pub depth_valid: bool,
    pub pixel_count: usize,
    /// Inclusive bounding box `[x_min, y_min, x_max, y_max]`.
    pub bbox: [usize; 4],
}

#[derive(Clone, Debug)]
pub struct SuperPixelMap {
    pub labels: LabelMap,
    pub superpixels: Vec<SuperPixel>,
    pub grid_spacing: usize,
}

#[derive(Clone, Copy, Debug)]
struct Center {
    x: f32,
    y: f32,
    lab: [f32; 3],
    d: f32,
}

#[inline]
fn valid_depth(d: f32) -> bool {
    d.is_finite() && d > 0.0
}

/// Depth-aware SLIC on an 8-bit RGB image and a metric depth map
/// (0 or non-finite = invalid).
pub fn extract_superpixels(rgb: &image::RgbImage, depth: &DepthMap, params: &SlicParams) -> Result<SuperPixelMap> {
    let lab = rgb_image_to_lab(rgb);
    extract_superpixels_lab(&lab, depth, params)
}

pub fn extract_superpixels_lab(lab: &LabImage, depth: &DepthMap, params: &SlicParams) -> Result<SuperPixelMap> {
    let (w, h) = lab.dims();
    if depth.dims() != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            found: depth.dims(),
        });
    }
    let r = params.grid_spacing;
    if r == 0 || w < 2 * r || h < 2 * r {
        return Err(Error::InvalidArgument(format!(
            "image {w}x{h} is smaller than two grid cells of {r} px"
        )));
    }
    if !(params.depth_norm > 0.0 && params.color_norm > 0.0) {
        return Err(Error::InvalidArgument("SLIC norms must be positive".into()));
    }
    let mut centers = seed_centers(lab, depth, r);
    let mut labels = vec![u32::MAX; w * h];

    let inv_color = (1.0 / params.color_norm) as f32;
    let inv_space = (1.0 / r as f64) as f32;
    let inv_depth = (1.0 / params.depth_norm) as f32;
    let literal = params.depth_term == DepthTerm::Literal;
    let rf = r as f32;
    let planes: [Vec<f32>; 3] = std::array::from_fn(|k| lab.data().iter().map(|p| p[k]).collect());
    let depth_valid: Vec<f32> = depth.data().iter().map(|&d| if valid_depth(d) { 1.0 } else { 0.0 }).collect();
    let clean_depth: Vec<f32> = depth.data().iter().map(|&d| if valid_depth(d) { d } else { 0.0 }).collect();

    for _ in 0..params.iterations.max(1) {
        let bins = CenterBins::new(&centers, w, h, r);
        let row_cands = bins.row_candidates();
        // Row-major sweep: every centre paints its window span on the row
        // into a distance buffer, in ascending index order so ties keep the
        // lowest index.
        par::for_each_row(&mut labels, w, |y, row| {
            let py = y as f32;
            let (l_row, a_row, b_row) = (&planes[0][y * w..(y + 1) * w], &planes[1][y * w..(y + 1) * w], &planes[2][y * w..(y + 1) * w]);
            let d_row = &clean_depth[y * w..(y + 1) * w];
            let valid_row = &depth_valid[y * w..(y + 1) * w];
            let mut dist = vec![f32::INFINITY; w];
            for &ci in &row_cands[(y / r).min(bins.rows - 1)] {
                let c = &centers[ci as usize];
                let dy = py - c.y;
                if dy.abs() > rf {
                    continue;
                }
                let x_lo = (c.x - rf).ceil().max(0.0) as usize;
                let x_hi = ((c.x + rf).floor().max(-1.0) as i64).min(w as i64 - 1);
                if x_hi < x_lo as i64 {
                    continue;
                }
                let x_hi = x_hi as usize;
                let dy2 = dy * dy;
                let span = x_lo..x_hi + 1;
                let (ls, as_, bs) = (&l_row[span.clone()], &a_row[span.clone()], &b_row[span.clone()]);
                let (ds, vs) = (&d_row[span.clone()], &valid_row[span.clone()]);
                let (dist, labels) = (&mut dist[span.clone()], &mut row[span]);
                let n = ls.len();
                let (as_, bs, ds, vs, dist, labels) = (&as_[..n], &bs[..n], &ds[..n], &vs[..n], &mut dist[..n], &mut labels[..n]);
                let x0 = x_lo as f32 - c.x;
                let [cl, ca, cb] = c.lab;
                let (cd, cd2) = (c.d, c.d * c.d);
                // branch-free bodies so the loops vectorize
                let space = |i: usize| {
                    let dx = x0 + (i as i32) as f32;
                    (dx * dx + dy2).sqrt() * inv_space
                };
                let color = |i: usize| {
                    let (dl, da, db) = (ls[i] - cl, as_[i] - ca, bs[i] - cb);
                    (dl * dl + da * da + db * db).sqrt() * inv_color
                };
                let mut update = |i: usize, d: f32| {
                    let better = d < dist[i];
                    dist[i] = if better { d } else { dist[i] };
                    labels[i] = if better { ci } else { labels[i] };
                };
                if !valid_depth(cd) {
                    for i in 0..ls.len() {
                        update(i, color(i) + space(i));
                    }
                } else if literal {
                    for i in 0..ls.len() {
                        let dz = (ds[i] * ds[i] + cd2).sqrt() * inv_depth * vs[i];
                        update(i, color(i) + space(i) + dz);
                    }
                } else {
                    for i in 0..ls.len() {
                        let dz = (ds[i] - cd).abs() * inv_depth * vs[i];
                        update(i, color(i) + space(i) + dz);
                    }
                }
            }
        });
        update_centers(&mut centers, &labels, lab, depth);
    }

    let labels = enforce_connectivity(labels, w, h, centers.len());
    let labels = Grid::from_vec(w, h, labels);
    let superpixels = compute_stats(&labels, lab, depth, params.min_valid_depth_fraction);
    Ok(SuperPixelMap {
        labels,
        superpixels,
        grid_spacing: r,
    })
}

/// Regular `r`-grid of seeds, each moved to the lowest-gradient pixel of
/// its 3×3 neighbourhood.
fn seed_centers(lab: &LabImage, depth: &DepthMap, r: usize) -> Vec<Center> {
    let (w, h) = lab.dims();
    let nx = (w / r).max(1);
    let ny = (h / r).max(1);
    let sx = w as f64 / nx as f64;
    let sy = h as f64 / ny as f64;
    let grad = |x: usize, y: usize| -> f32 {
        let at = |x: i64, y: i64| lab.get_clamped(x, y);
        let (x, y) = (x as i64, y as i64);
        let d2 = |a: [f32; 3], b: [f32; 3]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f32>();
        d2(at(x + 1, y), at(x - 1, y)) + d2(at(x, y + 1), at(x, y - 1))
    };
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x0 = ((i as f64 * sx + sx / 2.0).floor() as usize).min(w - 1);
            let y0 = ((j as f64 * sy + sy / 2.0).floor() as usize).min(h - 1);
            let (mut bx, mut by) = (x0, y0);
            let mut best = grad(x0, y0);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (x, y) = (x0 as i64 + dx, y0 as i64 + dy);
                    if !lab.in_bounds(x, y) {
                        continue;
                    }
                    let g = grad(x as usize, y as usize);
                    if g < best {
                        best = g;
                        bx = x as usize;
                        by = y as usize;
                    }
                }
            }
            out.push(Center {
                x: bx as f32,
                y: by as f32,
                lab: *lab.get(bx, by),
                d: *depth.get(bx, by),
            });
        }
    }
    out
}

/// Centres bucketed by position in cells of side `r`.
struct CenterBins {
    cols: usize,
    rows: usize,
    bins: Vec<Vec<u32>>,
}

impl CenterBins {
    fn new(centers: &[Center], w: usize, h: usize, r: usize) -> Self {
        let cols = w.div_ceil(r);
        let rows = h.div_ceil(r);
        let mut bins = vec![Vec::new(); cols * rows];
        for (i, c) in centers.iter().enumerate() {
            let bx = ((c.x.max(0.0) as usize) / r).min(cols - 1);
            let by = ((c.y.max(0.0) as usize) / r).min(rows - 1);
            bins[by * cols + bx].push(i as u32);
        }
        Self {
            cols,
            rows,
            bins,
        }
    }

    /// For every row of cells, the centres that may lie within `r` of one
    /// of its pixels, in ascending index order.
    fn row_candidates(&self) -> Vec<Vec<u32>> {
        (0..self.rows)
            .map(|by| {
                let mut c: Vec<u32> = (by.saturating_sub(1)..=(by + 1).min(self.rows - 1))
                    .flat_map(|yy| self.bins[yy * self.cols..(yy + 1) * self.cols].iter().flatten().copied())
                    .collect();
                c.sort_unstable();
                c
            })
            .collect()
    }
}

fn update_centers(centers: &mut [Center], labels: &[u32], lab: &LabImage, depth: &DepthMap) {
    let w = lab.width();
    // x, y, L, a, b, count, depth sum, depth count
    let mut acc = vec![[0f64; 8]; centers.len()];
    for (y, (lrow, (crow, drow))) in labels.chunks_exact(w).zip(lab.data().chunks_exact(w).zip(depth.data().chunks_exact(w))).enumerate() {
        let yf = y as f64;
        for (x, ((&l, c), &d)) in lrow.iter().zip(crow).zip(drow).enumerate() {
            if l == u32::MAX {
                continue;
            }
            let a = &mut acc[l as usize];
            a[0] += x as f64;
            a[1] += yf;
            a[2] += c[0] as f64;
            a[3] += c[1] as f64;
            a[4] += c[2] as f64;
            a[5] += 1.0;
            if valid_depth(d) {
                a[6] += d as f64;
                a[7] += 1.0;
            }
        }
    }
    for (c, a) in centers.iter_mut().zip(&acc) {
        if a[5] == 0.0 {
            continue;
        }
        let n = a[5];
        c.x = (a[0] / n) as f32;
        c.y = (a[1] / n) as f32;
        c.lab = [(a[2] / n) as f32, (a[3] / n) as f32, (a[4] / n) as f32];
        c.d = if a[7] > 0.0 { (a[6] / a[7]) as f32 } else { 0.0 };
    }
}

/// Keeps the largest 4-connected component of every label and merges the
/// rest into the neighbouring label they share the most edges with. Labels
/// are then renumbered contiguously, preserving their relative order.
fn enforce_connectivity(mut labels: Vec<u32>, w: usize, h: usize, n_labels: usize) -> Vec<u32> {
    const ORPHAN: u32 = u32::MAX;
    let n = w * h;
    // Component id per pixel and the label/size of each component.
    let mut comp = vec![u32::MAX; n];
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != u32::MAX {
            continue;
        }
        let id = comp_label.len() as u32;
        let label = labels[start];
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0usize;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if comp[q] == u32::MAX && labels[q] == label {
                    comp[q] = id;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        comp_label.push(label);
        comp_size.push(size);
    }
    // Largest component per label; earliest in scan order on ties.
    let mut keep = vec![u32::MAX; n_labels.max(1)];
    let mut keep_size = vec![0usize; n_labels.max(1)];
    for (id, (&l, &s)) in comp_label.iter().zip(&comp_size).enumerate() {
        if l == ORPHAN {
            continue;
        }
        if s > keep_size[l as usize] {
            keep_size[l as usize] = s;
            keep[l as usize] = id as u32;
        }
    }
    for p in 0..n {
        let l = labels[p];
        if l == ORPHAN || keep[l as usize] != comp[p] {
            labels[p] = ORPHAN;
        }
    }

    // Merge orphan components, repeating until every pixel is settled.
    let mut orphans: Vec<u32> = (0..comp_label.len() as u32)
        .filter(|&id| comp_label[id as usize] == ORPHAN || keep[comp_label[id as usize] as usize] != id)
        .collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); comp_label.len()];
    if !orphans.is_empty() {
        for p in 0..n {
            if labels[p] == ORPHAN {
                members[comp[p] as usize].push(p);
            }
        }
    }
    while !orphans.is_empty() {
        let mut pending = Vec::new();
        let mut progress = false;
        for &id in &orphans {
            let mut votes: Vec<(u32, usize)> = Vec::new();
            for &p in &members[id as usize] {
                let (x, y) = (p % w, p / w);
                let mut neighbours = [usize::MAX; 4];
                if x > 0 {
                    neighbours[0] = p - 1;
                }
                if x + 1 < w {
                    neighbours[1] = p + 1;
                }
                if y > 0 {
                    neighbours[2] = p - w;
                }
                if y + 1 < h {
                    neighbours[3] = p + w;
                }
                for q in neighbours {
                    if q == usize::MAX || labels[q] == ORPHAN {
                        continue;
                    }
                    match votes.iter_mut().find(|(l, _)| *l == labels[q]) {
                        Some(v) => v.1 += 1,
                        None => votes.push((labels[q], 1)),
                    }
                }
            }
            let winner = votes
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|v| v.0);
            match winner {
                Some(l) => {
                    for &p in &members[id as usize] {
                        labels[p] = l;
                    }
                    progress = true;
                }
                None => pending.push(id),
            }
        }
        if !progress {
            // Only possible when the whole image is orphaned.
            labels.iter_mut().for_each(|l| *l = 0);
            break;
        }
        orphans = pending;
    }

    let mut remap = vec![u32::MAX; n_labels.max(1)];
    for &l in &labels {
        remap[l as usize] = 0;
    }
    let mut next = 0u32;
    for r in remap.iter_mut() {
        if *r == 0 {
            *r = next;
            next += 1;
        }
    }
    labels.iter_mut().for_each(|l| *l = remap[*l as usize]);
    labels
}

/// Per-superpixel means recomputed from the label map.
pub fn compute_stats(labels: &LabelMap, lab: &LabImage, depth: &DepthMap, min_valid_fraction: f64) -> Vec<SuperPixel> {
    let n = labels.data().iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let w = labels.width();
    let mut acc = vec![[0f64; 7]; n];
    let mut bbox = vec![[usize::MAX, usize::MAX, 0, 0]; n];
    for (i, &l) in labels.data().iter().enumerate() {
        let (x, y) = (i % w, i / w);
        let a = &mut acc[l as usize];
        let c = lab.data()[i];
        a[0] += x as f64;
        a[1] += y as f64;
        a[2] += c[0] as f64;
        a[3] += c[1] as f64;
        a[4] += c[2] as f64;
        a[5] += 1.0;
        let d = depth.data()[i];
        if valid_depth(d) {
            a[6] += d as f64;
        }
        let b = &mut bbox[l as usize];
        b[0] = b[0].min(x);
        b[1] = b[1].min(y);
        b[2] = b[2].max(x);
        b[3] = b[3].max(y);
    }
    let mut valid = vec![0usize; n];
    for (i, &l) in labels.data().iter().enumerate() {
        if valid_depth(depth.data()[i]) {
            valid[l as usize] += 1;
        }
    }
    acc.iter()
        .zip(&bbox)
        .zip(&valid)
        .map(|((a, b), &nv)| {
            let count = a[5];
            let fraction = nv as f64 / count;
            SuperPixel {
                x: a[0] / count,
                y: a[1] / count,
                l: a[2] / count,
                a: a[3] / count,
                b: a[4] / count,
                depth: (nv > 0).then(|| a[6] / nv as f64),
                valid_depth_fraction: fraction,
                depth_valid: nv > 0 && fraction >= min_valid_fraction,
                pixel_count: count as usize,
                bbox: *b,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform(w: usize, h: usize) -> (LabImage, DepthMap) {
        (Grid::new(w, h, [50.0, 10.0, -10.0]), Grid::new(w, h, 2.0))
    }

    #[test]
    fn distance_examples() {
        let n1 = Norms {
            color: 1.0,
            space: 1.0,
            depth: 1.0,
        };
        let p = Descriptor {
            x: 3.0,
            y: 4.0,
            l: 60.0,
            a: 1.0,
            b: 2.0,
            d: Some(1.5),
        };
        assert_eq!(cluster_distance(&p, &p, &n1, DepthTerm::Difference), 0.0);
        let c = Descriptor {
            x: 0.0,
            y: 0.0,
            l: 50.0,
            ..p
        };
        assert_eq!(cluster_distance(&p, &c, &n1, DepthTerm::Difference), 15.0);
        let a = Descriptor {
            d: Some(3.0),
            ..Default::default()
        };
        let b = Descriptor {
            d: Some(4.0),
            ..Default::default()
        };
        assert_eq!(cluster_distance(&a, &b, &n1, DepthTerm::Literal), 5.0);
        let missing = Descriptor { d: None, ..b };
        assert_eq!(cluster_distance(&a, &missing, &n1, DepthTerm::Difference), 0.0);
    }

    proptest! {
        #[test]
        fn distance_non_negative_and_zero_only_at_identity(
            v in proptest::collection::vec(-100.0f64..100.0, 12), depth in 0.1f64..10.0
        ) {
            let p = Descriptor { x: v[0], y: v[1], l: v[2], a: v[3], b: v[4], d: Some(depth) };
            let c = Descriptor { x: v[6], y: v[7], l: v[8], a: v[9], b: v[10], d: Some(depth + v[11].abs()) };
            let norms = Norms { color: 40.0, space: 15.0, depth: 0.3 };
            let d = cluster_distance(&p, &c, &norms, DepthTerm::Difference);
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d == 0.0, p == c);
            prop_assert!(cluster_distance(&p, &c, &norms, DepthTerm::Literal) >= 0.0);
        }
    }

    #[test]
    fn uniform_image_gives_seed_voronoi() {
        let (lab, depth) = uniform(150, 90);
        let map = extract_superpixels_lab(&lab, &depth, &SlicParams::default()).unwrap();
        assert_eq!(map.superpixels.len(), 10 * 6);
        for y in 0..90 {
            for x in 0..150 {
                let own = &map.superpixels[*map.labels.get(x, y) as usize];
                let d_own = ((x as f64 - own.x).powi(2) + (y as f64 - own.y).powi(2)).sqrt();
                for sp in &map.superpixels {
                    let d = ((x as f64 - sp.x).powi(2) + (y as f64 - sp.y).powi(2)).sqrt();
                    assert!(d_own <= d + 1.0, "pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn two_colour_halves_do_not_straddle() {
        let lab = Grid::from_fn(150, 90, |x, _| if x < 68 { [30.0, 20.0, 0.0] } else { [80.0, -20.0, 30.0] });
        let depth = Grid::new(150, 90, 2.0f32);
        let map = extract_superpixels_lab(&lab, &depth, &SlicParams::default()).unwrap();
        for sp in &map.superpixels {
            let [x0, _, x1, _] = sp.bbox;
            // at most one pixel column across the edge between 67 and 68
            assert!(x1 <= 68 || x0 >= 67, "{:?}", sp.bbox);
        }
    }

    fn depth_variance(map: &SuperPixelMap, depth: &DepthMap) -> f64 {
        let mut sum = 0.0;
        for (i, &l) in map.labels.data().iter().enumerate() {
            let mean = map.superpixels[l as usize].depth.unwrap();
            sum += (depth.data()[i] as f64 - mean).powi(2);
        }
        sum / depth.data().len() as f64
    }

    #[test]
    fn depth_term_separates_depth_steps() {
        let (lab, _) = uniform(150, 90);
        let depth = Grid::from_fn(150, 90, |x, _| if x < 68 { 1.0f32 } else { 3.0 });
        let aware = extract_superpixels_lab(&lab, &depth, &SlicParams::default()).unwrap();
        let colour_only = extract_superpixels_lab(
            &lab,
            &depth,
            &SlicParams {
                depth_norm: f64::INFINITY,
                ..SlicParams::default()
            },
        )
        .unwrap();
        let (va, vc) = (depth_variance(&aware, &depth), depth_variance(&colour_only, &depth));
        assert!(va < 1e-9, "{va}");
        assert!(vc > 1e-3, "{vc}");
    }

    #[test]
    fn labels_are_total_contiguous_connected_and_consistent() {
        let lab = Grid::from_fn(120, 96, |x, y| {
            let v = ((x * 7 + y * 13) % 23) as f32;
            [40.0 + v, (x as f32 * 0.3).sin() * 30.0, (y as f32 * 0.2).cos() * 30.0]
        });
        let depth = Grid::from_fn(120, 96, |x, y| if (x + y) % 11 == 0 { 0.0 } else { 1.0 + 0.01 * x as f32 });
        let map = extract_superpixels_lab(&lab, &depth, &SlicParams::default()).unwrap();
        let n = map.superpixels.len();
        let mut seen = vec![false; n];
        for &l in map.labels.data() {
            assert!((l as usize) < n);
            seen[l as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
        // one 4-connected component per label
        let comps = count_components(&map.labels);
        assert_eq!(comps, n);
        let again = compute_stats(&map.labels, &lab, &depth, 0.2);
        for (a, b) in again.iter().zip(&map.superpixels) {
            assert!((a.x - b.x).abs() < 1e-6 && (a.l - b.l).abs() < 1e-6);
            assert!((a.depth.unwrap() - b.depth.unwrap()).abs() < 1e-6);
        }
        let twice = extract_superpixels_lab(&lab, &depth, &SlicParams::default()).unwrap();
        assert_eq!(twice.labels, map.labels);
    }

    fn count_components(labels: &LabelMap) -> usize {
        let (w, h) = labels.dims();
        let mut seen = vec![false; w * h];
        let mut count = 0;
        for s in 0..w * h {
            if seen[s] {
                continue;
            }
            count += 1;
            let l = labels.data()[s];
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(p) = stack.pop() {
                let (x, y) = (p % w, p / w);
                let mut ns = Vec::new();
                if x > 0 {
                    ns.push(p - 1);
                }
                if x + 1 < w {
                    ns.push(p + 1);
                }
                if y > 0 {
                    ns.push(p - w);
                }
                if y + 1 < h {
                    ns.push(p + w);
                }
                for q in ns {
                    if !seen[q] && labels.data()[q] == l {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        count
    }

    #[test]
    fn too_small_image_is_rejected() {
        let (lab, depth) = uniform(20, 20);
        assert!(extract_superpixels_lab(&lab, &depth, &SlicParams::default()).is_err());
    }
}
