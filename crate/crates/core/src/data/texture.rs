//! Procedural textures defined on the continuous plane, so a surface can be
//! sampled at any sub-pixel position and still look the same from both views.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureFamily {
    /// Dense random colour dots, roughly two pixels across.
    Dots,
    /// Multi-octave smooth value noise.
    Perlin,
    /// Oriented colour gratings over fine grain.
    Stripes,
    /// Discs of flat colour scattered over fine grain.
    Blobs,
}

impl TextureFamily {
    pub const ALL: [TextureFamily; 4] = [
        TextureFamily::Dots,
        TextureFamily::Perlin,
        TextureFamily::Stripes,
        TextureFamily::Blobs,
    ];
}

#[inline]
fn hash(seed: u64, x: i64, y: i64, k: u64) -> u64 {
    // splitmix64 over the packed lattice coordinates
    let mut z = seed
        ^ (x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
        ^ k.wrapping_mul(0x1656_67b1_9e37_79f9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn unit(seed: u64, x: i64, y: i64, k: u64) -> f64 {
    (hash(seed, x, y, k) >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Lattice value noise in `[0, 1]` with cell size `cell`.
fn value_noise(seed: u64, k: u64, u: f64, v: f64, cell: f64) -> f64 {
    let (fu, fv) = (u / cell, v / cell);
    let (iu, iv) = (fu.floor(), fv.floor());
    let (tu, tv) = (smooth(fu - iu), smooth(fv - iv));
    let (iu, iv) = (iu as i64, iv as i64);
    let a = unit(seed, iu, iv, k);
    let b = unit(seed, iu + 1, iv, k);
    let c = unit(seed, iu, iv + 1, k);
    let d = unit(seed, iu + 1, iv + 1, k);
    let top = a + (b - a) * tu;
    let bot = c + (d - c) * tu;
    top + (bot - top) * tv
}

/// One textured surface.
#[derive(Clone, Debug)]
pub struct Texture {
    family: TextureFamily,
    seed: u64,
    base: [f64; 3],
    accent: [f64; 3],
    angle: (f64, f64),
    period: f64,
    phase: f64,
}

impl Texture {
    pub fn new(family: TextureFamily, seed: u64) -> Self {
        let r = |k| unit(seed, -7, 11, k);
        let colour = |k0| [0.15 + 0.7 * r(k0), 0.15 + 0.7 * r(k0 + 1), 0.15 + 0.7 * r(k0 + 2)];
        let theta = std::f64::consts::PI * r(10);
        Texture {
            family,
            seed,
            base: colour(0),
            accent: colour(3),
            angle: (theta.cos(), theta.sin()),
            period: 3.0 + 5.0 * r(11),
            phase: std::f64::consts::TAU * r(12),
        }
    }

    pub fn family(&self) -> TextureFamily {
        self.family
    }

    /// RGB in `[0, 1]` at plane position `(u, v)`.
    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let s = self.seed;
        match self.family {
            TextureFamily::Dots => {
                let mut out = [0.0; 3];
                for (c, o) in out.iter_mut().enumerate() {
                    let n = value_noise(s, c as u64, u, v, 1.6);
                    *o = 0.05 + 0.9 * n;
                }
                out
            }
            TextureFamily::Perlin => {
                let mut lum = 0.0;
                let mut total = 0.0;
                for (i, cell) in [16.0, 8.0, 4.0, 2.0].into_iter().enumerate() {
                    let wgt = 0.6f64.powi(i as i32);
                    lum += wgt * value_noise(s, 20 + i as u64, u, v, cell);
                    total += wgt;
                }
                let lum = ((lum / total - 0.5) * 2.2 + 0.5).clamp(0.0, 1.0);
                let tint = value_noise(s, 30, u, v, 24.0);
                mix(self.base, self.accent, tint).map(|c| (0.25 * c + 0.75 * lum).clamp(0.0, 1.0))
            }
            TextureFamily::Stripes => {
                let along = u * self.angle.0 + v * self.angle.1;
                let wave = 0.5 + 0.5 * (std::f64::consts::TAU * along / self.period + self.phase).sin();
                let grain = value_noise(s, 40, u, v, 2.0) - 0.5;
                mix(self.base, self.accent, wave).map(|c| (c + 0.25 * grain).clamp(0.0, 1.0))
            }
            TextureFamily::Blobs => {
                let cell = 9.0;
                let (cu, cv) = ((u / cell).floor() as i64, (v / cell).floor() as i64);
                let grain = value_noise(s, 50, u, v, 2.0) - 0.5;
                let mut colour = self.base;
                let mut best = f64::INFINITY;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (gx, gy) = (cu + dx, cv + dy);
                        let px = (gx as f64 + unit(s, gx, gy, 51)) * cell;
                        let py = (gy as f64 + unit(s, gx, gy, 52)) * cell;
                        let radius = cell * (0.3 + 0.45 * unit(s, gx, gy, 53));
                        let d2 = (u - px).powi(2) + (v - py).powi(2);
                        if d2 < radius * radius && d2 < best {
                            best = d2;
                            colour = [
                                unit(s, gx, gy, 54),
                                unit(s, gx, gy, 55),
                                unit(s, gx, gy, 56),
                            ];
                        }
                    }
                }
                colour.map(|c| (0.1 + 0.8 * c + 0.3 * grain).clamp(0.0, 1.0))
            }
        }
    }
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}
