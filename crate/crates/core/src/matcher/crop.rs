use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::inference::BoundingBox;

/// Resampled RGB patch with `f32` channels in `[0, 255]`, row-major and
/// interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f32>,
}

impl Patch {
    pub fn from_image(image: &RgbImage) -> Self {
        Self {
            width: image.width() as usize,
            height: image.height() as usize,
            rgb: image.as_raw().iter().map(|&v| f32::from(v)).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// ITU-R BT.601 luma.
    pub fn luma(&self) -> Vec<f64> {
        self.rgb
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.pixel(x as usize, y as usize);
            Rgb(p.map(|v| v.round().clamp(0.0, 255.0) as u8))
        })
    }
}

/// Square source region used by [`crop_and_resize`]: side
/// `pad_factor * max(w, h)` around the box center.
pub fn crop_region(bbox: &BoundingBox, pad_factor: f64) -> Result<BoundingBox> {
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return Err(Error::Parameter(format!("degenerate box {bbox:?}")));
    }
    if !(pad_factor >= 1.0) {
        return Err(Error::Parameter(format!("pad factor {pad_factor} below 1")));
    }
    let side = pad_factor * bbox.w.max(bbox.h);
    let (cx, cy) = bbox.center();
    BoundingBox::from_center(cx, cy, side, side)
}

/// Crops a square around `bbox` and resizes it to `out_size`² by bilinear
/// interpolation. Pixels outside the image replicate the nearest edge.
pub fn crop_and_resize(
    image: &RgbImage,
    bbox: &BoundingBox,
    pad_factor: f64,
    out_size: usize,
) -> Result<Patch> {
    if out_size == 0 {
        return Err(Error::Parameter("output size must be at least 1".into()));
    }
    let region = crop_region(bbox, pad_factor)?;
    let (iw, ih) = (image.width() as i64, image.height() as i64);
    if iw == 0 || ih == 0 {
        return Err(Error::Parameter("empty image".into()));
    }
    let step = region.w / out_size as f64;
    let raw = image.as_raw();
    let fetch = |x: i64, y: i64, c: usize| -> f32 {
        let x = x.clamp(0, iw - 1) as usize;
        let y = y.clamp(0, ih - 1) as usize;
        f32::from(raw[(y * iw as usize + x) * 3 + c])
    };

    let coords = |origin: f64| -> Vec<(i64, f32)> {
        (0..out_size)
            .map(|u| {
                let s = origin + (u as f64 + 0.5) * step - 0.5;
                let f = s.floor();
                (f as i64, (s - f) as f32)
            })
            .collect()
    };
    let xs = coords(region.x);
    let ys = coords(region.y);

    let mut rgb = Vec::with_capacity(out_size * out_size * 3);
    for &(y0, fy) in &ys {
        for &(x0, fx) in &xs {
            for c in 0..3 {
                let top = fetch(x0, y0, c) * (1.0 - fx) + fetch(x0 + 1, y0, c) * fx;
                let bottom = fetch(x0, y0 + 1, c) * (1.0 - fx) + fetch(x0 + 1, y0 + 1, c) * fx;
                rgb.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(Patch {
        width: out_size,
        height: out_size,
        rgb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 2) as u8, (y * 2) as u8, ((x + y) % 256) as u8]))
    }

    #[test]
    fn identity_crop_is_pixel_exact() {
        let img = gradient(50, 40);
        let b = BoundingBox::new(10.0, 5.0, 16.0, 16.0).unwrap();
        let p = crop_and_resize(&img, &b, 1.0, 16).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let src = img.get_pixel(10 + x as u32, 5 + y as u32).0.map(f32::from);
                assert_eq!(p.pixel(x, y), src);
            }
        }
        assert_eq!(p.to_image(), image::imageops::crop_imm(&img, 10, 5, 16, 16).to_image());
    }

    #[test]
    fn corner_crop_replicates_edges() {
        let img = gradient(30, 30);
        let b = BoundingBox::new(-5.0, -5.0, 10.0, 10.0).unwrap();
        let p = crop_and_resize(&img, &b, 2.0, 20).unwrap();
        assert_eq!(p.rgb.len(), 20 * 20 * 3);
        assert!(p.rgb.iter().all(|v| v.is_finite()));
        assert_eq!(p.pixel(0, 0), img.get_pixel(0, 0).0.map(f32::from));
    }

    #[test]
    fn padded_region_geometry() {
        let b = BoundingBox::new(40.0, 40.0, 20.0, 20.0).unwrap();
        let r = crop_region(&b, 2.0).unwrap();
        assert_eq!((r.x, r.y, r.w, r.h), (30.0, 30.0, 40.0, 40.0));
        let img = gradient(100, 100);
        let p = crop_and_resize(&img, &b, 2.0, 32).unwrap();
        assert_eq!((p.width, p.height), (32, 32));
        // The red channel is 2x; sampling position of the first column is
        // 30 + 0.5 * 40 / 32 - 0.5.
        let expected = 2.0 * (30.0 + 0.5 * 40.0 / 32.0 - 0.5);
        assert!((p.pixel(0, 0)[0] as f64 - expected).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_parameters() {
        let img = gradient(10, 10);
        let b = BoundingBox { x: 0.0, y: 0.0, w: 0.0, h: 5.0 };
        assert!(matches!(crop_and_resize(&img, &b, 1.0, 4), Err(Error::Parameter(_))));
        let ok = BoundingBox::new(0.0, 0.0, 4.0, 4.0).unwrap();
        assert!(crop_and_resize(&img, &ok, 0.5, 4).is_err());
        assert!(crop_and_resize(&img, &ok, 1.0, 0).is_err());
    }
}
