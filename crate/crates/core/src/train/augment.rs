//! Random flips and quarter-turn rotations of a cube's spatial plane.

use rand::Rng;

use crate::cassi::HsiCube;
use crate::rng::{self, Rng64};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Flip {
    #[default]
    None,
    Horizontal,
    Vertical,
}

/// A flip followed by `quarter_turns` counter-clockwise rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augmentation {
    pub flip: Flip,
    pub quarter_turns: u8,
}

impl Augmentation {
    pub const IDENTITY: Self = Self { flip: Flip::None, quarter_turns: 0 };

    /// All twelve combinations.
    pub fn all() -> Vec<Self> {
        let mut v = Vec::with_capacity(12);
        for flip in [Flip::None, Flip::Horizontal, Flip::Vertical] {
            for quarter_turns in 0..4 {
                v.push(Self { flip, quarter_turns });
            }
        }
        v
    }

    /// Uniform draw over [`Augmentation::all`].
    pub fn sample(rng: &mut Rng64) -> Self {
        Self::all()[rng.random_range(0..12)]
    }

    pub fn apply<T: Scalar>(self, cube: &HsiCube<T>) -> HsiCube<T> {
        let mut out = cube.clone();
        match self.flip {
            Flip::None => {}
            Flip::Horizontal => out = remap(&out, false, |y, x, _, w| (y, w - 1 - x)),
            Flip::Vertical => out = remap(&out, false, |y, x, h, _| (h - 1 - y, x)),
        }
        for _ in 0..self.quarter_turns % 4 {
            // Counter-clockwise: out(y, x) = in(x, W_in − 1 − y), extents swap.
            out = remap(&out, true, |y, x, _, w_in| (x, w_in - 1 - y));
        }
        out
    }
}

/// Builds a cube whose pixel `(y, x)` is the input pixel `src(y, x, H_in, W_in)`.
fn remap<T: Scalar>(
    cube: &HsiCube<T>,
    swap: bool,
    src: impl Fn(usize, usize, usize, usize) -> (usize, usize),
) -> HsiCube<T> {
    let (h, w, n) = (cube.height(), cube.width(), cube.bands());
    let (oh, ow) = if swap { (w, h) } else { (h, w) };
    let d = cube.data().data();
    let data = Tensor::from_fn(&[oh, ow, n], |i| {
        let c = i % n;
        let x = (i / n) % ow;
        let y = i / (n * ow);
        let (sy, sx) = src(y, x, h, w);
        d[(sy * w + sx) * n + c]
    });
    HsiCube::new(data, cube.wavelengths().to_vec()).expect("extents preserved")
}

/// Applies a uniformly drawn augmentation selected by `seed`.
pub fn augment<T: Scalar>(cube: &HsiCube<T>, seed: u64) -> HsiCube<T> {
    Augmentation::sample(&mut rng::seeded(seed)).apply(cube)
}
