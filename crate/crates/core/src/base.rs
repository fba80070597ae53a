//! Base distributions: mean-zero product measures normalized to be 1-Poincaré.
//!
//! * `gaussian`: standard normal coordinates.
//! * `laplace`: two-sided exponential coordinates with scale 1/2. The
//!   two-sided exponential with rate λ has Poincaré constant 4/λ², so λ = 2.
//! * `uniform_cube`: uniform coordinates on [−π/2, π/2]; the interval of
//!   length L has Poincaré constant (L/π)².
//! * `point_mass`: the origin. Not Poincaré for any positive constant in the
//!   usual sense; it turns every estimator into an exact, noise-free one and is
//!   used as a degenerate oracle.
//!
//! Products of 1-Poincaré coordinates are 1-Poincaré.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseDist {
    Gaussian,
    Laplace,
    UniformCube,
    PointMass,
}

pub const LAPLACE_SCALE: f64 = 0.5;
pub const UNIFORM_HALF_WIDTH: f64 = PI / 2.0;

impl BaseDist {
    pub const ALL: [BaseDist; 4] = [BaseDist::Gaussian, BaseDist::Laplace, BaseDist::UniformCube, BaseDist::PointMass];

    pub fn tag(&self) -> &'static str {
        match self {
            BaseDist::Gaussian => "gaussian",
            BaseDist::Laplace => "laplace",
            BaseDist::UniformCube => "uniform_cube",
            BaseDist::PointMass => "point_mass",
        }
    }

    /// E[u^r] for one coordinate u.
    pub fn coordinate_moment(&self, r: usize) -> f64 {
        if r == 0 {
            return 1.0;
        }
        if r % 2 == 1 {
            return 0.0;
        }
        match self {
            BaseDist::Gaussian => (1..r).step_by(2).map(|i| i as f64).product(),
            BaseDist::Laplace => (1..=r).map(|i| i as f64).product::<f64>() * LAPLACE_SCALE.powi(r as i32),
            BaseDist::UniformCube => UNIFORM_HALF_WIDTH.powi(r as i32) / (r as f64 + 1.0),
            BaseDist::PointMass => 0.0,
        }
    }

    pub fn coordinate_variance(&self) -> f64 {
        self.coordinate_moment(2)
    }

    pub fn draw_coordinate(&self, rng: &mut Rng) -> f64 {
        match self {
            BaseDist::Gaussian => rng.sample(StandardNormal),
            BaseDist::Laplace => {
                let e: f64 = rng.sample(Exp1);
                if rng.gen::<bool>() {
                    LAPLACE_SCALE * e
                } else {
                    -LAPLACE_SCALE * e
                }
            }
            BaseDist::UniformCube => rng.gen_range(-UNIFORM_HALF_WIDTH..UNIFORM_HALF_WIDTH),
            BaseDist::PointMass => 0.0,
        }
    }

    pub fn fill(&self, rng: &mut Rng, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.draw_coordinate(rng);
        }
    }

    pub fn draw(&self, rng: &mut Rng, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        self.fill(rng, &mut v);
        v
    }
}

impl fmt::Display for BaseDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for BaseDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        BaseDist::ALL
            .into_iter()
            .find(|b| b.tag() == s)
            .ok_or_else(|| Error::UnsupportedDistribution(s.to_string()))
    }
}
