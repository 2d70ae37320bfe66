//! Layered piecewise-planar scenes and the video sequences built from them.
//!
//! The right view is rendered first from the scene. The left view is then
//! resampled from the right one wherever the surface is visible in both
//! views, so warping the right image by the ground truth reproduces the left
//! image on those pixels up to rounding. Pixels seen only by the left camera
//! are rendered straight from the texture and marked invalid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shift::DomainShiftSpec;
use super::texture::{Texture, TextureFamily};
use super::StereoFrame;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// `d(x, y) = d0 + gx (x - cx) + gy (y - cy)` in left-image pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisparityPlane {
    pub d0: f64,
    pub gx: f64,
    pub gy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl DisparityPlane {
    pub fn constant(d: f64) -> Self {
        DisparityPlane {
            d0: d,
            gx: 0.0,
            gy: 0.0,
            cx: 0.0,
            cy: 0.0,
        }
    }

    #[inline]
    pub fn at(&self, x: f64, y: f64) -> f64 {
        self.d0 + self.gx * (x - self.cx) + self.gy * (y - self.cy)
    }

    /// Left-image column whose point lands on right-image column `xr`.
    #[inline]
    fn left_column(&self, xr: f64, y: f64) -> f64 {
        (xr + self.d0 - self.gx * self.cx + self.gy * (y - self.cy)) / (1.0 - self.gx)
    }
}

/// One textured surface. `rect` is `[x0, y0, x1, y1)` in left-image pixels;
/// `None` covers the whole plane (the background).
#[derive(Clone, Debug)]
pub struct Layer {
    pub rect: Option<[f64; 4]>,
    pub plane: DisparityPlane,
    pub texture: Texture,
    /// Texture coordinates are `(x - origin.0, y - origin.1)`.
    pub origin: (f64, f64),
    pub velocity: (f64, f64),
    pub drift: f64,
}

impl Layer {
    pub fn background(plane: DisparityPlane, texture: Texture) -> Self {
        Layer {
            rect: None,
            plane,
            texture,
            origin: (0.0, 0.0),
            velocity: (0.0, 0.0),
            drift: 0.0,
        }
    }

    pub fn rectangle(rect: [f64; 4], plane: DisparityPlane, texture: Texture) -> Self {
        Layer {
            rect: Some(rect),
            plane,
            texture,
            origin: (rect[0], rect[1]),
            velocity: (0.0, 0.0),
            drift: 0.0,
        }
    }

    #[inline]
    fn covers(&self, x: f64, y: f64) -> bool {
        match self.rect {
            None => true,
            Some([x0, y0, x1, y1]) => x >= x0 && x < x1 && y >= y0 && y < y1,
        }
    }

    #[inline]
    fn colour(&self, x: f64, y: f64) -> [f64; 3] {
        self.texture.sample(x - self.origin.0, y - self.origin.1)
    }

    fn advance(&mut self, dmin: f64, dmax: f64) {
        let (vx, vy) = self.velocity;
        if let Some(r) = &mut self.rect {
            r[0] += vx;
            r[2] += vx;
            r[1] += vy;
            r[3] += vy;
        }
        self.origin.0 += vx;
        self.origin.1 += vy;
        self.plane.cx += vx;
        self.plane.cy += vy;
        self.plane.d0 += self.drift;
        if self.plane.d0 < dmin || self.plane.d0 > dmax {
            self.drift = -self.drift;
            self.plane.d0 = self.plane.d0.clamp(dmin, dmax);
        }
    }
}

/// A static arrangement of layers; the frontmost surface (largest disparity)
/// wins at every pixel.
#[derive(Clone, Debug)]
pub struct Scene {
    pub layers: Vec<Layer>,
}

/// Index of the frontmost layer covering left-image point `(x, y)`.
fn front_left(layers: &[Layer], x: f64, y: f64) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (i, l) in layers.iter().enumerate() {
        if l.covers(x, y) {
            let d = l.plane.at(x, y);
            if d >= best.1 {
                best = (i, d);
            }
        }
    }
    best
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !self.layers.iter().any(|l| l.rect.is_none()) {
            return Err(Error::Config("a scene needs a background layer".into()));
        }
        if self.layers.iter().any(|l| !(l.plane.gx.abs() < 0.5)) {
            return Err(Error::Config("plane slant must satisfy |gx| < 0.5".into()));
        }
        Ok(())
    }

    /// Largest disparity of any surface inside an `h x w` image.
    pub fn max_disparity(&self, h: usize, w: usize) -> f64 {
        let corners = [(0.0, 0.0), (w as f64, 0.0), (0.0, h as f64), (w as f64, h as f64)];
        self.layers
            .iter()
            .flat_map(|l| corners.iter().map(move |&(x, y)| l.plane.at(x, y)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn render<T: Scalar>(&self, h: usize, w: usize) -> Result<StereoFrame<T>> {
        self.validate()?;
        let bound = w as f64 / 4.0;
        let dmax = self.max_disparity(h, w);
        if dmax >= bound {
            return Err(Error::Config(format!(
                "scene disparity {dmax:.2} exceeds the bound w/4 = {bound}"
            )));
        }
        let plane = h * w;
        let mut right = vec![0.0f64; 3 * plane];
        let mut owner = vec![usize::MAX; plane];
        for y in 0..h {
            let yf = y as f64;
            for xr in 0..w {
                let mut best = (usize::MAX, f64::NEG_INFINITY, 0.0);
                for (i, l) in self.layers.iter().enumerate() {
                    let x = l.plane.left_column(xr as f64, yf);
                    if l.covers(x, yf) {
                        let d = l.plane.at(x, yf);
                        if d >= best.1 {
                            best = (i, d, x);
                        }
                    }
                }
                let (i, _, x) = best;
                let rgb = self.layers[i].colour(x, yf);
                let p = y * w + xr;
                owner[p] = i;
                for c in 0..3 {
                    right[c * plane + p] = rgb[c];
                }
            }
        }

        let mut left = vec![0.0f64; 3 * plane];
        let mut gt = vec![0.0f64; plane];
        let mut visible = vec![false; plane];
        let max = (w - 1) as f64;
        for y in 0..h {
            let yf = y as f64;
            for x in 0..w {
                let p = y * w + x;
                let (i, d) = front_left(&self.layers, x as f64, yf);
                gt[p] = d;
                let pos = x as f64 - d;
                let mut seen = false;
                if (0.0..=max).contains(&pos) {
                    // same tap selection as the warp operator
                    let (lo, frac) = if pos >= max && w >= 2 {
                        (w - 2, 1.0)
                    } else {
                        let lo = pos.floor();
                        (lo as usize, pos - lo)
                    };
                    let hi = (lo + 1).min(w - 1);
                    let row = y * w;
                    let tap_lo = frac < 1.0 && owner[row + lo] != i;
                    let tap_hi = frac > 0.0 && owner[row + hi] != i;
                    if !tap_lo && !tap_hi {
                        seen = true;
                        for c in 0..3 {
                            let r = &right[c * plane + row..c * plane + row + w];
                            left[c * plane + p] = r[lo] * (1.0 - frac) + r[hi] * frac;
                        }
                    }
                }
                if !seen {
                    let rgb = self.layers[i].colour(x as f64, yf);
                    for c in 0..3 {
                        left[c * plane + p] = rgb[c];
                    }
                }
                visible[p] = seen;
            }
        }

        // Drop pixels whose 3x3 neighbourhood touches an occlusion, so that
        // windowed photometric terms on valid pixels only see matched content.
        let mut mask = vec![0.0f64; plane];
        for y in 0..h {
            for x in 0..w {
                let mut ok = true;
                for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        ok &= visible[yy * w + xx];
                    }
                }
                mask[y * w + x] = if ok { 1.0 } else { 0.0 };
            }
        }

        let img = |v: Vec<f64>| Tensor4::from_vec(Shape4::new(1, 3, h, w), v.into_iter().map(T::lit).collect());
        let one = |v: Vec<f64>| Tensor4::from_vec(Shape4::new(1, 1, h, w), v.into_iter().map(T::lit).collect());
        StereoFrame::new(img(left)?, img(right)?)?.with_ground_truth(one(gt)?, Some(one(mask)?))
    }
}

/// Distribution of scenes and their motion for one visual domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Range of the background plane's disparity at the image centre.
    pub background_disparity: (f64, f64),
    pub object_disparity: (f64, f64),
    /// Inclusive range of foreground rectangles per scene.
    pub objects: (usize, usize),
    /// Largest plane gradient, in disparity pixels per pixel.
    pub max_slant: f64,
    /// Largest object speed in pixels per frame.
    pub max_speed: f64,
    /// Largest per-frame disparity change of an object.
    pub max_drift: f64,
    /// Frames between scene cuts; 0 keeps one scene forever.
    pub scene_length: usize,
    pub shift: DomainShiftSpec,
}

impl SceneSpec {
    /// Training domain: random-dot surfaces, neutral photometry.
    /// Disparity ranges are quoted for a 192-pixel-wide image and scale
    /// with `width`.
    pub fn domain_a(height: usize, width: usize) -> Self {
        let k = width as f64 / 192.0;
        SceneSpec {
            height,
            width,
            background_disparity: (k, 10.0 * k),
            object_disparity: (4.0 * k, 24.0 * k),
            objects: (2, 6),
            max_slant: 0.04,
            max_speed: 1.5,
            max_drift: 0.1,
            scene_length: 1,
            shift: DomainShiftSpec::identity(TextureFamily::Dots),
        }
    }

    /// Deployment domain: nearer, more slanted geometry than the training
    /// domain, with blob surfaces under a colour cast, gamma and noise.
    pub fn domain_b(height: usize, width: usize) -> Self {
        let k = width as f64 / 192.0;
        SceneSpec {
            background_disparity: (18.0 * k, 32.0 * k),
            object_disparity: (26.0 * k, 42.0 * k),
            objects: (1, 3),
            max_slant: 0.15,
            max_speed: 1.0,
            max_drift: 0.05,
            scene_length: 150,
            shift: DomainShiftSpec {
                gamma: 1.8,
                brightness_offset: 0.05,
                channel_mix: [[0.5, 0.4, 0.1], [0.2, 0.6, 0.2], [0.1, 0.3, 0.6]],
                noise_sigma: 0.01,
                texture_family: TextureFamily::Blobs,
            },
            ..Self::domain_a(height, width)
        }
    }

    /// A second shifted domain with smooth noise textures.
    pub fn domain_c(height: usize, width: usize) -> Self {
        SceneSpec {
            shift: DomainShiftSpec {
                gamma: 0.6,
                brightness_offset: -0.05,
                channel_mix: [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]],
                noise_sigma: 0.01,
                texture_family: TextureFamily::Perlin,
            },
            ..Self::domain_b(height, width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height < 2 || self.width < 2 {
            return bad(format!("resolution {}x{} too small", self.height, self.width));
        }
        let bound = self.width as f64 / 4.0;
        for (name, (lo, hi)) in [
            ("background_disparity", self.background_disparity),
            ("object_disparity", self.object_disparity),
        ] {
            if !(lo >= 0.0 && lo <= hi) {
                return bad(format!("{name} must satisfy 0 <= min <= max"));
            }
            if hi >= bound {
                return bad(format!("{name} max {hi} exceeds the bound w/4 = {bound}"));
            }
        }
        if self.objects.0 > self.objects.1 {
            return bad("objects range is empty".into());
        }
        if !(0.0..0.5).contains(&self.max_slant) || self.max_speed < 0.0 || self.max_drift < 0.0 {
            return bad("slant must be in [0, 0.5); speed and drift non-negative".into());
        }
        self.shift.validate()
    }
}

/// Lazily generated, causal frame stream: frame `t` depends only on the seed
/// and frames before it, so shorter runs are prefixes of longer ones.
#[derive(Clone, Debug)]
pub struct SequenceGenerator {
    spec: SceneSpec,
    rng: ChaCha8Rng,
    noise: ChaCha8Rng,
    scene: Option<Scene>,
    index: usize,
}

impl SequenceGenerator {
    pub fn new(spec: SceneSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(SequenceGenerator {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise: ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_6521),
            scene: None,
            index: 0,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    /// Index of the next frame to be produced.
    pub fn position(&self) -> usize {
        self.index
    }

    fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
        if hi > lo {
            rng.gen_range(lo..=hi)
        } else {
            lo
        }
    }

    fn sample_scene(&mut self) -> Scene {
        let s = &self.spec;
        let (h, w) = (s.height as f64, s.width as f64);
        let rng = &mut self.rng;
        let family = s.shift.texture_family;
        let bound = w / 4.0 - 1e-3;
        let slant = |rng: &mut ChaCha8Rng| {
            if s.max_slant > 0.0 {
                rng.gen_range(-s.max_slant..=s.max_slant)
            } else {
                0.0
            }
        };

        let d0 = Self::uniform(rng, s.background_disparity);
        let mut bg_plane = DisparityPlane {
            d0,
            gx: slant(rng),
            gy: slant(rng).abs(),
            cx: w / 2.0,
            cy: h / 2.0,
        };
        fit_plane(&mut bg_plane, h, w, bound);
        let mut bg = Layer::background(bg_plane, Texture::new(family, rng.gen()));
        let pan = if s.max_speed > 0.0 {
            rng.gen_range(-0.5 * s.max_speed..=0.5 * s.max_speed)
        } else {
            0.0
        };
        bg.origin = (rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0));
        bg.velocity = (pan, 0.0);
        bg.drift = 0.0;
        let mut layers = vec![bg];

        let count = rng.gen_range(s.objects.0..=s.objects.1);
        for _ in 0..count {
            let ow = rng.gen_range(w / 10.0..=w / 3.0);
            let oh = rng.gen_range(h / 6.0..=h / 2.0);
            let x0 = rng.gen_range(-ow / 2.0..w - ow / 2.0);
            let y0 = rng.gen_range(-oh / 4.0..h - oh * 0.75);
            let mut plane = DisparityPlane {
                d0: Self::uniform(rng, s.object_disparity),
                gx: 0.5 * slant(rng),
                gy: 0.5 * slant(rng),
                cx: x0 + ow / 2.0,
                cy: y0 + oh / 2.0,
            };
            fit_plane(&mut plane, h, w, bound);
            let mut layer = Layer::rectangle([x0, y0, x0 + ow, y0 + oh], plane, Texture::new(family, rng.gen()));
            if s.max_speed > 0.0 {
                layer.velocity = (
                    rng.gen_range(-s.max_speed..=s.max_speed),
                    rng.gen_range(-0.3 * s.max_speed..=0.3 * s.max_speed),
                );
            }
            if s.max_drift > 0.0 {
                layer.drift = rng.gen_range(-s.max_drift..=s.max_drift);
            }
            layers.push(layer);
        }
        Scene { layers }
    }

    fn advance_scene(&mut self) {
        let s = &self.spec;
        let (h, w) = (s.height as f64, s.width as f64);
        let (dmin, dmax) = s.object_disparity;
        let bound = w / 4.0 - 1e-3;
        let scene = self.scene.as_mut().expect("scene exists");
        for l in scene.layers.iter_mut() {
            if l.rect.is_none() {
                l.origin.0 += l.velocity.0;
                continue;
            }
            l.advance(dmin, dmax);
            fit_plane(&mut l.plane, h, w, bound);
            let r = l.rect.expect("object");
            let (cx, cy) = ((r[0] + r[2]) / 2.0, (r[1] + r[3]) / 2.0);
            if (cx < 0.0 && l.velocity.0 < 0.0) || (cx > w && l.velocity.0 > 0.0) {
                l.velocity.0 = -l.velocity.0;
            }
            if (cy < 0.0 && l.velocity.1 < 0.0) || (cy > h && l.velocity.1 > 0.0) {
                l.velocity.1 = -l.velocity.1;
            }
        }
    }

    /// Produces the next frame.
    pub fn next_frame<T: Scalar>(&mut self) -> Result<StereoFrame<T>> {
        let cut = self.spec.scene_length > 0 && self.index.is_multiple_of(self.spec.scene_length);
        if self.scene.is_none() || cut {
            self.scene = Some(self.sample_scene());
        } else {
            self.advance_scene();
        }
        self.index += 1;
        let scene = self.scene.as_ref().expect("scene exists");
        let mut frame = scene.render::<T>(self.spec.height, self.spec.width)?;
        if !self.spec.shift.is_photometric_identity() {
            self.spec.shift.apply_image(&mut frame.left, &mut self.noise)?;
            self.spec.shift.apply_image(&mut frame.right, &mut self.noise)?;
        }
        Ok(frame)
    }

    /// Current scene (after the last produced frame).
    pub fn scene(&self) -> Option<&Scene> {
        self.scene.as_ref()
    }
}

/// Shrinks a plane's slant until it stays within `[0, bound]` over the image.
fn fit_plane(p: &mut DisparityPlane, h: f64, w: f64, bound: f64) {
    p.d0 = p.d0.clamp(0.0, bound);
    for _ in 0..60 {
        let corners = [p.at(0.0, 0.0), p.at(w, 0.0), p.at(0.0, h), p.at(w, h)];
        let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo >= 0.0 && hi <= bound {
            return;
        }
        p.gx *= 0.7;
        p.gy *= 0.7;
    }
    p.gx = 0.0;
    p.gy = 0.0;
}

/// Generates `length` frames eagerly.
pub fn generate_sequence<T: Scalar>(length: usize, spec: &SceneSpec, seed: u64) -> Result<Vec<StereoFrame<T>>> {
    let mut g = SequenceGenerator::new(spec.clone(), seed)?;
    (0..length).map(|_| g.next_frame()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::reprojection_loss;

    fn single_rectangle() -> Scene {
        Scene {
            layers: vec![
                Layer::background(DisparityPlane::constant(2.0), Texture::new(TextureFamily::Dots, 1)),
                Layer::rectangle(
                    [20.0, 8.0, 44.0, 24.0],
                    DisparityPlane::constant(8.0),
                    Texture::new(TextureFamily::Dots, 2),
                ),
            ],
        }
    }

    #[test]
    fn zero_disparity_scene_has_identical_views() {
        let scene = Scene {
            layers: vec![
                Layer::background(DisparityPlane::constant(0.0), Texture::new(TextureFamily::Perlin, 3)),
                Layer::rectangle([4.0, 4.0, 12.0, 12.0], DisparityPlane::constant(0.0), Texture::new(TextureFamily::Dots, 4)),
            ],
        };
        let f = scene.render::<f64>(16, 32).unwrap();
        assert_eq!(f.left, f.right);
        assert!(f.valid_mask.unwrap().data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn rectangle_over_background_is_consistent() {
        let f = single_rectangle().render::<f64>(32, 64).unwrap();
        let gt = f.gt_disparity.clone().unwrap();
        let mask = f.valid_mask.clone().unwrap();
        assert_eq!(crate::data::epe(&gt, &gt, &mask).unwrap(), Some(0.0));
        assert_eq!(gt.at(0, 0, 16, 30), 8.0);
        assert_eq!(gt.at(0, 0, 2, 2), 2.0);
        let loss = reprojection_loss(&f.left, &f.right, &gt).unwrap();
        let on_valid = loss.masked_mean(&mask).unwrap();
        assert!(on_valid < 1e-3, "{on_valid}");
        // background just left of the rectangle is hidden in the right view,
        // as is the left border band
        assert_eq!(mask.at(0, 0, 16, 16), 0.0);
        assert_eq!(mask.at(0, 0, 16, 1), 0.0);
        assert_eq!(mask.at(0, 0, 16, 45), 1.0);
    }

    #[test]
    fn equal_seeds_give_equal_sequences() {
        let spec = SceneSpec::domain_b(32, 64);
        let a = generate_sequence::<f32>(5, &spec, 7).unwrap();
        let b = generate_sequence::<f32>(5, &spec, 7).unwrap();
        let c = generate_sequence::<f32>(5, &spec, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], c[0]);
    }

    #[test]
    fn shorter_runs_are_prefixes() {
        let spec = SceneSpec::domain_b(32, 64);
        let a = generate_sequence::<f32>(3, &spec, 1).unwrap();
        let b = generate_sequence::<f32>(6, &spec, 1).unwrap();
        assert_eq!(&a[..], &b[..3]);
    }

    #[test]
    fn frames_move_smoothly_within_a_scene() {
        let spec = SceneSpec {
            scene_length: 0,
            ..SceneSpec::domain_a(32, 64)
        };
        let f = generate_sequence::<f64>(2, &spec, 3).unwrap();
        let a = f[0].gt_disparity.as_ref().unwrap();
        let b = f[1].gt_disparity.as_ref().unwrap();
        let changed = a.data().iter().zip(b.data()).filter(|(x, y)| (*x - *y).abs() > 1.0).count();
        assert!(changed < a.len() / 4, "{changed}");
    }

    #[test]
    fn disparity_bound_enforced() {
        let mut spec = SceneSpec::domain_a(32, 64);
        spec.object_disparity = (4.0, 16.0);
        assert!(spec.validate().is_err());
        let scene = Scene {
            layers: vec![Layer::background(DisparityPlane::constant(20.0), Texture::new(TextureFamily::Dots, 1))],
        };
        assert!(scene.render::<f32>(16, 64).is_err());
    }

    #[test]
    fn generated_ground_truth_within_bounds() {
        let spec = SceneSpec::domain_b(64, 192);
        let mut g = SequenceGenerator::new(spec, 5).unwrap();
        for _ in 0..20 {
            let f = g.next_frame::<f32>().unwrap();
            let gt = f.gt_disparity.unwrap();
            assert!(gt.data().iter().all(|&d| (0.0..48.0).contains(&d)));
            assert!(f.left.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
