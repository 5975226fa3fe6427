//! Resize → rotate → crop → flip → normalize, on float planes.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded 8-bit RGB pixels, interleaved row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pixels {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Pixels {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim("image must be at least 1x1"));
        }
        if data.len() != width * height * 3 {
            return Err(Error::dim(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Pixels { width, height, data })
    }

    pub fn solid(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Pixels { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y));
            }
        }
        Pixels { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }
}

/// Decodes a PNG or JPEG file to RGB.
pub fn decode_image(path: &Path) -> Result<Pixels> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let rgb = img.to_rgb8();
    Pixels::new(rgb.width() as usize, rgb.height() as usize, rgb.into_raw())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    /// `[height, width]` after the initial resize.
    pub resize_to: [usize; 2],
    /// `[height, width]` of the crop fed to the network.
    pub crop_to: [usize; 2],
    /// Rotation drawn uniformly from `[-rotation_deg, +rotation_deg]`; `0` disables it.
    pub rotation_deg: f64,
    pub hflip_prob: f64,
    /// Random crop offsets during training; `false` always crops the center.
    pub random_crop: bool,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            resize_to: [250, 333],
            crop_to: [234, 311],
            rotation_deg: 10.0,
            hflip_prob: 0.5,
            random_crop: true,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl AugmentPolicy {
    /// Small geometry with the same aspect and crop margins, for fast runs.
    pub fn desk() -> Self {
        AugmentPolicy {
            resize_to: [40, 53],
            crop_to: [36, 47],
            ..Default::default()
        }
    }

    /// Same geometry with every random transform switched off.
    pub fn without_augmentation(&self) -> Self {
        AugmentPolicy {
            rotation_deg: 0.0,
            hflip_prob: 0.0,
            random_crop: false,
            ..self.clone()
        }
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [3, self.crop_to[0], self.crop_to[1]]
    }

    pub fn validate(&self) -> Result<()> {
        let [rh, rw] = self.resize_to;
        let [ch, cw] = self.crop_to;
        if rh == 0 || rw == 0 || ch == 0 || cw == 0 {
            return Err(Error::config("image geometry must be positive"));
        }
        if ch > rh || cw > rw {
            return Err(Error::config(format!(
                "crop {ch}x{cw} does not fit inside resize {rh}x{rw}"
            )));
        }
        if !(self.rotation_deg >= 0.0 && self.rotation_deg.is_finite()) {
            return Err(Error::config("rotation_deg must be a non-negative number"));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::config("hflip_prob must be in [0, 1]"));
        }
        if self.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("normalization std must be positive"));
        }
        Ok(())
    }
}

/// Top-left offset of the center crop: `floor((resize - crop) / 2)`.
pub fn center_offsets(policy: &AugmentPolicy) -> (usize, usize) {
    (
        (policy.resize_to[0] - policy.crop_to[0]) / 2,
        (policy.resize_to[1] - policy.crop_to[1]) / 2,
    )
}

/// Channel-major float planes, values in `[0, 255]`.
#[derive(Clone, Debug)]
struct Planes {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Planes {
    #[inline]
    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    /// Bilinear sample with coordinates clamped to the frame (edge replication).
    #[inline]
    fn sample(&self, c: usize, y: f64, x: f64) -> f64 {
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.h - 1), (x0 + 1).min(self.w - 1));
        let (ty, tx) = (y - y0 as f64, x - x0 as f64);
        let top = lerp(self.at(c, y0, x0), self.at(c, y0, x1), tx);
        let bot = lerp(self.at(c, y1, x0), self.at(c, y1, x1), tx);
        lerp(top, bot, ty)
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

fn to_planes(p: &Pixels) -> Planes {
    let (h, w) = (p.height, p.width);
    let mut data = vec![0.0; 3 * h * w];
    for (i, px) in p.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = f64::from(px[c]);
        }
    }
    Planes { h, w, data }
}

/// Half-pixel-centred bilinear resize.
fn resize(p: &Pixels, h: usize, w: usize) -> Planes {
    let src = to_planes(p);
    if (src.h, src.w) == (h, w) {
        return src;
    }
    let sy = src.h as f64 / h as f64;
    let sx = src.w as f64 / w as f64;
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for y in 0..h {
            let fy = (y as f64 + 0.5) * sy - 0.5;
            for x in 0..w {
                let fx = (x as f64 + 0.5) * sx - 0.5;
                data.push(src.sample(c, fy, fx));
            }
        }
    }
    Planes { h, w, data }
}

/// Rotation about the frame center by `deg` degrees (counter-clockwise).
fn rotate(p: &Planes, deg: f64) -> Planes {
    let (s, c) = deg.to_radians().sin_cos();
    let cy = (p.h as f64 - 1.0) / 2.0;
    let cx = (p.w as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(p.data.len());
    for ch in 0..3 {
        for y in 0..p.h {
            let dy = y as f64 - cy;
            for x in 0..p.w {
                let dx = x as f64 - cx;
                // inverse map: output pixel pulls from the source rotated by -deg
                let sx = c * dx - s * dy + cx;
                let sy = s * dx + c * dy + cy;
                data.push(p.sample(ch, sy, sx));
            }
        }
    }
    Planes { h: p.h, w: p.w, data }
}

fn crop(p: &Planes, top: usize, left: usize, h: usize, w: usize) -> Planes {
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for y in top..top + h {
            let row = (c * p.h + y) * p.w;
            data.extend_from_slice(&p.data[row + left..row + left + w]);
        }
    }
    Planes { h, w, data }
}

fn hflip(p: &mut Planes) {
    for row in p.data.chunks_exact_mut(p.w) {
        row.reverse();
    }
}

fn normalize(p: Planes, policy: &AugmentPolicy) -> Result<Tensor> {
    let n = p.h * p.w;
    let mut data = p.data;
    for (c, plane) in data.chunks_exact_mut(n).enumerate() {
        let (m, s) = (policy.mean[c], policy.std[c]);
        for v in plane {
            *v = (*v / 255.0 - m) / s;
        }
    }
    Tensor::new(vec![3, p.h, p.w], data)
}

/// Training transform: resize, random rotation, random crop, random flip, normalize.
///
/// Random draws happen in a fixed order (angle, crop offsets, flip) so a given
/// generator state always produces the same view.
pub fn preprocess_train(image: &Pixels, policy: &AugmentPolicy, rng: &mut impl Rng) -> Result<Tensor> {
    policy.validate()?;
    let [rh, rw] = policy.resize_to;
    let [ch, cw] = policy.crop_to;
    let mut planes = resize(image, rh, rw);
    if policy.rotation_deg > 0.0 {
        let angle = rng.gen_range(-policy.rotation_deg..=policy.rotation_deg);
        planes = rotate(&planes, angle);
    }
    let (top, left) = if policy.random_crop {
        (rng.gen_range(0..=rh - ch), rng.gen_range(0..=rw - cw))
    } else {
        center_offsets(policy)
    };
    let mut planes = crop(&planes, top, left, ch, cw);
    if policy.hflip_prob > 0.0 && rng.gen_bool(policy.hflip_prob) {
        hflip(&mut planes);
    }
    normalize(planes, policy)
}

/// Evaluation transform: resize, center crop, normalize.
pub fn preprocess_eval(image: &Pixels, policy: &AugmentPolicy) -> Result<Tensor> {
    policy.validate()?;
    let [rh, rw] = policy.resize_to;
    let (top, left) = center_offsets(policy);
    let planes = crop(&resize(image, rh, rw), top, left, policy.crop_to[0], policy.crop_to[1]);
    normalize(planes, policy)
}

/// `n` independent training-transform draws of one image.
pub fn tta_views(image: &Pixels, policy: &AugmentPolicy, n: usize, rng: &mut impl Rng) -> Result<Vec<Tensor>> {
    if n == 0 {
        return Err(Error::contract("test-time augmentation needs at least one view"));
    }
    (0..n).map(|_| preprocess_train(image, policy, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn pattern(w: usize, h: usize) -> Pixels {
        Pixels::from_fn(w, h, |x, y| [(x * 7 % 256) as u8, (y * 11 % 256) as u8, ((x * y) % 256) as u8])
    }

    #[test]
    fn constant_image_is_augmentation_invariant() {
        let img = Pixels::solid(61, 47, [200, 100, 30]);
        let policy = AugmentPolicy::desk();
        for seed in 0..5 {
            let t = preprocess_train(&img, &policy, &mut seeded(seed)).unwrap();
            assert_eq!(t.shape(), &[3, 36, 47]);
            for (c, v) in [200.0, 100.0, 30.0].iter().enumerate() {
                let expect = (v / 255.0 - policy.mean[c]) / policy.std[c];
                let plane = &t.data()[c * 36 * 47..(c + 1) * 36 * 47];
                assert!(plane.iter().all(|&x| x == expect));
            }
        }
        let e = preprocess_eval(&img, &policy).unwrap();
        assert_eq!(e, preprocess_train(&img, &policy, &mut seeded(1)).unwrap());
    }

    #[test]
    fn train_transform_is_seed_deterministic() {
        let img = pattern(70, 52);
        let policy = AugmentPolicy::desk();
        let a = preprocess_train(&img, &policy, &mut seeded(3)).unwrap();
        let b = preprocess_train(&img, &policy, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        let c = preprocess_train(&img, &policy, &mut seeded(4)).unwrap();
        assert_ne!(a, c);
        assert!(a.is_finite());
    }

    #[test]
    fn forced_flip_matches_direct_pixel_oracle() {
        let img = pattern(53, 40);
        let policy = AugmentPolicy {
            rotation_deg: 0.0,
            hflip_prob: 1.0,
            random_crop: false,
            ..AugmentPolicy::desk()
        };
        let t = preprocess_train(&img, &policy, &mut seeded(0)).unwrap();
        let (top, left) = (2, 3);
        for c in 0..3 {
            for y in 0..36 {
                for x in 0..47 {
                    let src = img.get(left + 46 - x, top + y)[c];
                    let expect = (f64::from(src) / 255.0 - policy.mean[c]) / policy.std[c];
                    assert_eq!(t.data()[(c * 36 + y) * 47 + x], expect);
                }
            }
        }
    }

    #[test]
    fn center_crop_offsets() {
        assert_eq!(center_offsets(&AugmentPolicy::default()), (8, 11));
        assert_eq!(center_offsets(&AugmentPolicy::desk()), (2, 3));
    }

    #[test]
    fn eval_shape_and_determinism() {
        let img = pattern(333, 250);
        let policy = AugmentPolicy::default();
        let a = preprocess_eval(&img, &policy).unwrap();
        assert_eq!(a.shape(), &[3, 234, 311]);
        assert_eq!(a, preprocess_eval(&img, &policy).unwrap());
        // resize is the identity at 250x333, so the crop starts at (8, 11)
        let expect = (f64::from(img.get(11, 8)[0]) / 255.0 - policy.mean[0]) / policy.std[0];
        assert_eq!(a.data()[0], expect);
    }

    #[test]
    fn degenerate_tta_equals_eval() {
        let img = pattern(66, 50);
        let policy = AugmentPolicy::desk().without_augmentation();
        let views = tta_views(&img, &policy, 1, &mut seeded(9)).unwrap();
        assert_eq!(views, vec![preprocess_eval(&img, &policy).unwrap()]);
        assert!(tta_views(&img, &policy, 0, &mut seeded(9)).is_err());
    }

    #[test]
    fn tta_default_five_views() {
        let img = pattern(66, 50);
        let policy = AugmentPolicy::desk();
        let a = tta_views(&img, &policy, 5, &mut seeded(2)).unwrap();
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|v| v.shape() == [3, 36, 47]));
        assert_eq!(a, tta_views(&img, &policy, 5, &mut seeded(2)).unwrap());
    }

    #[test]
    fn tiny_source_still_yields_full_crop() {
        let img = pattern(1, 1);
        let t = preprocess_train(&img, &AugmentPolicy::desk(), &mut seeded(0)).unwrap();
        assert_eq!(t.shape(), &[3, 36, 47]);
    }

    #[test]
    fn invalid_policy_rejected() {
        let bad = AugmentPolicy { crop_to: [41, 10], ..AugmentPolicy::desk() };
        assert!(bad.validate().is_err());
        let bad = AugmentPolicy { hflip_prob: 1.5, ..AugmentPolicy::desk() };
        assert!(bad.validate().is_err());
    }
}
