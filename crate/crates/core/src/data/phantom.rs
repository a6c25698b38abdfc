use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const NUM_CLASSES: u8 = 6;
pub const MIN_SIZE: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub size: usize,
    /// Inclusive range for the number of ellipses, body included.
    pub ellipses: (usize, usize),
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self { size: 64, ellipses: (4, 10) }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < MIN_SIZE {
            return Err(Error::Config(format!("phantom size must be >= {MIN_SIZE}, got {}", self.size)));
        }
        let (lo, hi) = self.ellipses;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("invalid ellipse count range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Tissue class per pixel, row-major, values in `0..NUM_CLASSES`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMap {
    pub size: usize,
    pub classes: Vec<u8>,
}

impl ClassMap {
    pub fn histogram(&self) -> [usize; NUM_CLASSES as usize] {
        let mut h = [0; NUM_CLASSES as usize];
        for &c in &self.classes {
            h[c as usize] += 1;
        }
        h
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    class: u8,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Background plus a body ellipse (class 1) and smaller inner ellipses of
/// classes 2–5; later ellipses overwrite earlier ones.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<ClassMap> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.size;
    let count = rng.random_range(spec.ellipses.0..=spec.ellipses.1);

    // Coordinates in units of the image side, centre at 0.5.
    let mut ellipses = vec![Ellipse {
        cx: 0.5 + rng.random_range(-0.03..0.03),
        cy: 0.5 + rng.random_range(-0.03..0.03),
        a: rng.random_range(0.36..0.45),
        b: rng.random_range(0.30..0.42),
        angle: rng.random_range(0.0..std::f64::consts::PI),
        class: 1,
    }];
    for _ in 1..count {
        let r = rng.random_range(0.0..0.22);
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        ellipses.push(Ellipse {
            cx: 0.5 + r * t.cos(),
            cy: 0.5 + r * t.sin(),
            a: rng.random_range(0.04..0.14),
            b: rng.random_range(0.04..0.14),
            angle: rng.random_range(0.0..std::f64::consts::PI),
            class: rng.random_range(2..NUM_CLASSES),
        });
    }

    let mut classes = vec![0u8; n * n];
    for e in &ellipses {
        for (i, c) in classes.iter_mut().enumerate() {
            let x = ((i % n) as f64 + 0.5) / n as f64;
            let y = ((i / n) as f64 + 0.5) / n as f64;
            if e.contains(x, y) {
                *c = e.class;
            }
        }
    }
    Ok(ClassMap { size: n, classes })
}
