use crate::grid::{GrayImage, Grid};
use crate::par;

/// One pyramid level: image plus its horizontal and vertical derivatives.
#[derive(Clone, Debug)]
pub struct Level {
    pub image: GrayImage,
    pub grad_x: GrayImage,
    pub grad_y: GrayImage,
}

/// Gaussian image pyramid, level 0 at full resolution.
#[derive(Clone, Debug)]
pub struct Pyramid {
    levels: Vec<Level>,
}

impl Pyramid {
    /// Builds `levels` levels (at least one). Levels stop early once an
    /// image side would drop below 8 pixels.
    pub fn build(image: &GrayImage, levels: usize) -> Self {
        let mut out = vec![Level::new(image.clone())];
        while out.len() < levels.max(1) {
            let prev = &out.last().unwrap().image;
            if prev.width().div_ceil(2) < 8 || prev.height().div_ceil(2) < 8 {
                break;
            }
            out.push(Level::new(downsample(prev)));
        }
        Self { levels: out }
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn base(&self) -> &GrayImage {
        &self.levels[0].image
    }
}

impl Level {
    fn new(image: GrayImage) -> Self {
        let (grad_x, grad_y) = sobel(&image);
        Self {
            image,
            grad_x,
            grad_y,
        }
    }
}

/// Rows `y − 1`, `y`, `y + 1` with border replication.
#[inline]
fn rows3(img: &GrayImage, y: usize) -> (&[f32], &[f32], &[f32]) {
    let h = img.height();
    (img.row(y.saturating_sub(1)), img.row(y), img.row((y + 1).min(h - 1)))
}

/// Sobel derivatives scaled by 1/8 so they are in intensity per pixel.
pub fn sobel(img: &GrayImage) -> (GrayImage, GrayImage) {
    let (w, h) = img.dims();
    let mut gx = vec![0f32; w * h];
    let mut gy = vec![0f32; w * h];
    par::for_each_row(&mut gx, w, |y, row| {
        let (up, mid, dn) = rows3(img, y);
        for (x, v) in row.iter_mut().enumerate() {
            let (l, r) = (x.saturating_sub(1), (x + 1).min(w - 1));
            *v = ((up[r] - up[l]) + 2.0 * (mid[r] - mid[l]) + (dn[r] - dn[l])) * 0.125;
        }
    });
    par::for_each_row(&mut gy, w, |y, row| {
        let (up, _, dn) = rows3(img, y);
        for (x, v) in row.iter_mut().enumerate() {
            let (l, r) = (x.saturating_sub(1), (x + 1).min(w - 1));
            *v = ((dn[l] - up[l]) + 2.0 * (dn[x] - up[x]) + (dn[r] - up[r])) * 0.125;
        }
    });
    (Grid::from_vec(w, h, gx), Grid::from_vec(w, h, gy))
}

const KERNEL: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Blur with the binomial 5-tap kernel and keep every second pixel.
pub fn downsample(img: &GrayImage) -> GrayImage {
    let (w, h) = img.dims();
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    // horizontal pass at the subsampled columns
    let mut tmp = vec![0f32; nw * h];
    par::for_each_row(&mut tmp, nw, |y, row| {
        let src = img.row(y);
        let at = |x: i64| src[x.clamp(0, w as i64 - 1) as usize];
        for (nx, v) in row.iter_mut().enumerate() {
            let x = 2 * nx as i64;
            *v = KERNEL.iter().enumerate().map(|(i, k)| k * at(x + i as i64 - 2)).sum();
        }
    });
    let mut out = vec![0f32; nw * nh];
    par::for_each_row(&mut out, nw, |ny, row| {
        let y = 2 * ny as i64;
        let src: [&[f32]; 5] =
            std::array::from_fn(|i| &tmp[(y + i as i64 - 2).clamp(0, h as i64 - 1) as usize * nw..][..nw]);
        for (x, v) in row.iter_mut().enumerate() {
            *v = KERNEL.iter().zip(&src).map(|(k, r)| k * r[x]).sum();
        }
    });
    Grid::from_vec(nw, nh, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        let img = Grid::new(40, 30, 7.0f32);
        let p = Pyramid::build(&img, 3);
        assert_eq!(p.len(), 3);
        assert_eq!(p.levels()[1].image.dims(), (20, 15));
        assert_eq!(p.levels()[2].image.dims(), (10, 8));
        for l in p.levels() {
            assert!(l.image.data().iter().all(|&v| (v - 7.0).abs() < 1e-5));
            assert!(l.grad_x.data().iter().all(|&v| v.abs() < 1e-5));
        }
    }

    #[test]
    fn sobel_of_ramp_is_slope() {
        let img = Grid::from_fn(10, 10, |x, y| 3.0 * x as f32 - 2.0 * y as f32);
        let (gx, gy) = sobel(&img);
        assert!((gx.get(5, 5) - 3.0).abs() < 1e-5);
        assert!((gy.get(5, 5) + 2.0).abs() < 1e-5);
    }

    #[test]
    fn pyramid_stops_on_tiny_images() {
        let img = Grid::new(20, 20, 0.0f32);
        assert_eq!(Pyramid::build(&img, 5).len(), 2);
    }
}
