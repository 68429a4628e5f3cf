//! Periodic random coefficient fields on a pixel grid.
//!
//! A field lives on the torus `[0, L·ε)²`, discretized by `m` pixels per unit
//! cell of side `ε`. Values are stored row-major with `x` as the fast index:
//! `values[iy * n + ix]`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SampleSeed;

const STREAM_CHECKERBOARD: u64 = 0;
const STREAM_PLAIN: u64 = 1;
const STREAM_MICRO: u64 = 2;
const STREAM_POISSON: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    /// Unit cells per side (`L`).
    pub cells: usize,
    /// Pixels per unit cell side (`m`).
    pub pixels_per_cell: usize,
    /// Physical side length of one unit cell.
    pub epsilon: f64,
}

impl GridGeometry {
    pub fn new(cells: usize, pixels_per_cell: usize) -> Result<Self> {
        let geom = Self {
            cells,
            pixels_per_cell,
            epsilon: 1.0,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells < 2 {
            return Err(Error::InvalidGeometry(format!(
                "need at least 2 cells per side, got {}",
                self.cells
            )));
        }
        if self.pixels_per_cell < 1 {
            return Err(Error::InvalidGeometry("need at least 1 pixel per cell".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Pixels per side.
    pub fn n(&self) -> usize {
        self.cells * self.pixels_per_cell
    }

    pub fn side_length(&self) -> f64 {
        self.cells as f64 * self.epsilon
    }

    pub fn pixel_size(&self) -> f64 {
        self.epsilon / self.pixels_per_cell as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn constant(geometry: GridGeometry, value: f64) -> Self {
        let n = geometry.n();
        Self {
            geometry,
            values: vec![value; n * n],
        }
    }

    pub fn from_fn(geometry: GridGeometry, f: impl Fn(usize, usize) -> f64) -> Self {
        let n = geometry.n();
        let mut values = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                values.push(f(ix, iy));
            }
        }
        Self { geometry, values }
    }

    pub fn n(&self) -> usize {
        self.geometry.n()
    }

    /// Value at pixel `(ix, iy)`, indices taken modulo `n`.
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        let n = self.n();
        self.values[(iy % n) * n + ix % n]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn harmonic_mean(&self) -> f64 {
        self.values.len() as f64 / self.values.iter().map(|v| 1.0 / v).sum::<f64>()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Exchange of the coordinate axes.
    pub fn transpose(&self) -> Self {
        let n = self.n();
        Self::from_fn(self.geometry, |ix, iy| self.values[ix * n + iy])
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            geometry: self.geometry,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Apply one of the 8 axis symmetries of the square (see [`Orientation`]).
    pub fn oriented(&self, orientation: Orientation) -> Self {
        let n = self.n();
        Self::from_fn(self.geometry, |ix, iy| {
            let (sx, sy) = orientation.source(ix, iy, n);
            self.values[sy * n + sx]
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Axis::X
        } else {
            Axis::Y
        }
    }
}

/// Element of the symmetry group of the square: bit 2 swaps the axes,
/// bit 0 reflects `x`, bit 1 reflects `y` (applied after the swap).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Orientation(pub u8);

impl Orientation {
    pub const IDENTITY: Orientation = Orientation(0);

    pub fn all() -> impl Iterator<Item = Orientation> {
        (0..8).map(Orientation)
    }

    /// Source pixel of `(ix, iy)` on an `m`-periodic block.
    pub fn source(self, ix: usize, iy: usize, m: usize) -> (usize, usize) {
        let (mut a, mut b) = if self.0 & 4 != 0 { (iy, ix) } else { (ix, iy) };
        if self.0 & 1 != 0 {
            a = m - 1 - a;
        }
        if self.0 & 2 != 0 {
            b = m - 1 - b;
        }
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Variant {
    /// Each unit cell independently `value_hi` with probability `p_hi`,
    /// otherwise `value_lo`.
    Checkerboard { value_lo: f64, value_hi: f64, p_hi: f64 },
    /// Hard-core Poisson disks: candidates ordered by an independent uniform
    /// mark, a candidate is kept only if it is at least `2·radius` away from
    /// every previously kept center.
    PoissonInclusions {
        intensity: f64,
        radius: f64,
        value_in: f64,
        value_out: f64,
    },
    /// Interpolation `(1-κ)·a_plain + κ·a_micro` between a `{1, 1/2}`
    /// checkerboard and a checkerboard of constant `σ` tiles and second-order
    /// laminate tiles.
    Counterexample {
        lambda: f64,
        sigma: f64,
        tau: f64,
        kappa: f64,
        randomize_orientation: bool,
    },
    /// Deterministic unit-width stripes (`value_lo` on even stripes)
    /// alternating along `axis`.
    LayeredTest { axis: Axis, value_lo: f64, value_hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub variant: Variant,
    /// Exact `E[F_avg]` when it is known in closed form.
    pub analytic_mean_f_avg: Option<f64>,
}

impl GeneratorSpec {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            analytic_mean_f_avg: None,
        }
    }

    /// Checkerboard with its exact mean filled in.
    pub fn checkerboard(value_lo: f64, value_hi: f64, p_hi: f64) -> Self {
        Self {
            variant: Variant::Checkerboard {
                value_lo,
                value_hi,
                p_hi,
            },
            analytic_mean_f_avg: Some(p_hi * value_hi + (1.0 - p_hi) * value_lo),
        }
    }

    /// Counterexample field with its exact mean filled in.
    pub fn counterexample(lambda: f64, sigma: f64, tau: f64, kappa: f64) -> Result<Self> {
        let mu = mu_star(lambda)?;
        let micro_mean = 0.5 * sigma + 0.5 * micro_tile_mean(lambda, mu);
        Ok(Self {
            variant: Variant::Counterexample {
                lambda,
                sigma,
                tau,
                kappa,
                randomize_orientation: true,
            },
            analytic_mean_f_avg: Some((1.0 - kappa) * 0.75 + kappa * micro_mean),
        })
    }

    pub fn layered(axis: Axis, value_lo: f64, value_hi: f64) -> Self {
        Self::new(Variant::LayeredTest {
            axis,
            value_lo,
            value_hi,
        })
    }

    /// Same generator with a different interpolation parameter; the analytic
    /// mean is recomputed. Errors for non-counterexample variants.
    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        match &self.variant {
            Variant::Counterexample {
                lambda,
                sigma,
                tau,
                randomize_orientation,
                ..
            } => {
                let mut spec = Self::counterexample(*lambda, *sigma, *tau, kappa)?;
                if let Variant::Counterexample {
                    randomize_orientation: r,
                    ..
                } = &mut spec.variant
                {
                    *r = *randomize_orientation;
                }
                Ok(spec)
            }
            _ => Err(Error::InvalidGenerator(
                "kappa only applies to the counterexample generator".into(),
            )),
        }
    }

    /// Every value the generator can produce lies in this closed interval.
    pub fn value_bounds(&self) -> Result<(f64, f64)> {
        let values: Vec<f64> = match &self.variant {
            Variant::Checkerboard { value_lo, value_hi, .. } => vec![*value_lo, *value_hi],
            Variant::PoissonInclusions {
                value_in, value_out, ..
            } => vec![*value_in, *value_out],
            Variant::LayeredTest { value_lo, value_hi, .. } => vec![*value_lo, *value_hi],
            Variant::Counterexample {
                lambda, sigma, kappa, ..
            } => {
                let mu = mu_star(*lambda)?;
                let mut v = Vec::new();
                for plain in [1.0, 0.5] {
                    for micro in [*sigma, mu, 1.0, *lambda] {
                        v.push((1.0 - kappa) * plain + kappa * micro);
                    }
                }
                v
            }
        };
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((lo, hi))
    }

    /// Checks everything that can be checked without a grid.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidGenerator(format!("{name} must be positive, got {v}")))
            }
        };
        match &self.variant {
            Variant::Checkerboard {
                value_lo,
                value_hi,
                p_hi,
            } => {
                positive("value_lo", *value_lo)?;
                positive("value_hi", *value_hi)?;
                if !(0.0..=1.0).contains(p_hi) {
                    return Err(Error::InvalidGenerator(format!("p_hi must lie in [0, 1], got {p_hi}")));
                }
            }
            Variant::PoissonInclusions {
                intensity,
                radius,
                value_in,
                value_out,
            } => {
                if !(*intensity >= 0.0 && intensity.is_finite()) {
                    return Err(Error::InvalidGenerator(format!(
                        "intensity must be non-negative, got {intensity}"
                    )));
                }
                positive("radius", *radius)?;
                positive("value_in", *value_in)?;
                positive("value_out", *value_out)?;
            }
            Variant::Counterexample {
                lambda,
                sigma,
                tau,
                kappa,
                ..
            } => {
                if !(*lambda > 0.0 && *lambda <= 1.0) {
                    return Err(Error::InvalidGenerator(format!(
                        "lambda must lie in (0, 1], got {lambda}"
                    )));
                }
                if !(0.0..=1.0).contains(kappa) {
                    return Err(Error::InvalidGenerator(format!(
                        "kappa must lie in [0, 1], got {kappa}"
                    )));
                }
                stripe_count(*tau)?;
                let (lower, upper) = sigma_window(*lambda)?;
                if !(*sigma > lower && *sigma < upper) {
                    return Err(Error::SigmaOutsideWindow {
                        sigma: *sigma,
                        lambda: *lambda,
                        lower,
                        upper,
                    });
                }
            }
            Variant::LayeredTest { value_lo, value_hi, .. } => {
                positive("value_lo", *value_lo)?;
                positive("value_hi", *value_hi)?;
            }
        }
        if let Some(mean) = self.analytic_mean_f_avg {
            positive("analytic_mean_f_avg", mean)?;
        }
        Ok(())
    }

    /// Grid-dependent checks.
    pub fn validate_for(&self, geom: &GridGeometry) -> Result<()> {
        self.validate()?;
        geom.validate()?;
        match &self.variant {
            Variant::PoissonInclusions { radius, .. } if *radius > 0.5 * geom.epsilon => Err(Error::InvalidGenerator(
                format!("inclusion radius {radius} exceeds epsilon/2 = {}", 0.5 * geom.epsilon),
            )),
            Variant::Counterexample { tau, .. } => {
                let layers = stripe_count(*tau)?.pow(2);
                if !geom.pixels_per_cell.is_multiple_of(layers) {
                    Err(Error::InvalidGenerator(format!(
                        "pixels per cell ({}) must be divisible by 1/tau^2 = {layers}",
                        geom.pixels_per_cell
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Draw one realization.
pub fn generate(spec: &GeneratorSpec, geom: &GridGeometry, seed: SampleSeed) -> Result<ScalarField> {
    match spec.variant {
        Variant::Checkerboard { .. } => generate_checkerboard(spec, geom, seed),
        Variant::PoissonInclusions { .. } => generate_poisson_inclusions(spec, geom, seed),
        Variant::Counterexample { .. } => generate_counterexample(spec, geom, seed),
        Variant::LayeredTest { .. } => generate_layered(spec, geom, seed),
    }
}

fn tile_field(geom: &GridGeometry, tiles: &[f64]) -> ScalarField {
    let m = geom.pixels_per_cell;
    let l = geom.cells;
    ScalarField::from_fn(*geom, |ix, iy| tiles[(iy / m) * l + ix / m])
}

pub fn generate_checkerboard(spec: &GeneratorSpec, geom: &GridGeometry, seed: SampleSeed) -> Result<ScalarField> {
    let Variant::Checkerboard {
        value_lo,
        value_hi,
        p_hi,
    } = spec.variant
    else {
        return Err(Error::InvalidGenerator("expected a checkerboard".into()));
    };
    spec.validate_for(geom)?;
    let mut rng = seed.rng(STREAM_CHECKERBOARD);
    let tiles: Vec<f64> = (0..geom.cells * geom.cells)
        .map(|_| if rng.random::<f64>() < p_hi { value_hi } else { value_lo })
        .collect();
    Ok(tile_field(geom, &tiles))
}

/// A candidate inclusion center with its ordering mark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub x: f64,
    pub y: f64,
    pub mark: f64,
}

/// Distance on the torus of side `period`.
pub fn periodic_distance(ax: f64, ay: f64, bx: f64, by: f64, period: f64) -> f64 {
    let wrap = |d: f64| {
        let d = d.rem_euclid(period);
        d.min(period - d)
    };
    wrap(ax - bx).hypot(wrap(ay - by))
}

/// Hard-core thinning: visit candidates by increasing mark and keep a center
/// iff every kept center is at periodic distance at least `2·radius`.
pub fn hard_core_thinning(candidates: &[Candidate], radius: f64, period: f64) -> Vec<Candidate> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[a].mark.total_cmp(&candidates[b].mark));
    let mut kept: Vec<Candidate> = Vec::new();
    for i in order {
        let c = candidates[i];
        if kept
            .iter()
            .all(|k| periodic_distance(k.x, k.y, c.x, c.y, period) >= 2.0 * radius)
        {
            kept.push(c);
        }
    }
    kept
}

/// Accepted inclusion centers of one realization.
pub fn poisson_centers(spec: &GeneratorSpec, geom: &GridGeometry, seed: SampleSeed) -> Result<Vec<Candidate>> {
    let Variant::PoissonInclusions { intensity, radius, .. } = spec.variant else {
        return Err(Error::InvalidGenerator("expected Poisson inclusions".into()));
    };
    spec.validate_for(geom)?;
    let side = geom.side_length();
    let mut rng = seed.rng(STREAM_POISSON);
    let expected = intensity * side * side;
    let count = if expected > 0.0 {
        let poisson = Poisson::new(expected).map_err(|e| Error::InvalidGenerator(format!("Poisson intensity: {e}")))?;
        poisson.sample(&mut rng) as usize
    } else {
        0
    };
    let candidates: Vec<Candidate> = (0..count)
        .map(|_| Candidate {
            x: rng.random::<f64>() * side,
            y: rng.random::<f64>() * side,
            mark: rng.random::<f64>(),
        })
        .collect();
    Ok(hard_core_thinning(&candidates, radius, side))
}

pub fn generate_poisson_inclusions(spec: &GeneratorSpec, geom: &GridGeometry, seed: SampleSeed) -> Result<ScalarField> {
    let centers = poisson_centers(spec, geom, seed)?;
    let Variant::PoissonInclusions {
        radius,
        value_in,
        value_out,
        ..
    } = spec.variant
    else {
        unreachable!()
    };
    let n = geom.n();
    let h = geom.pixel_size();
    let side = geom.side_length();
    let mut field = ScalarField::constant(*geom, value_out);
    let reach = (radius / h).ceil() as isize + 1;
    for c in &centers {
        let cx = (c.x / h).floor() as isize;
        let cy = (c.y / h).floor() as isize;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let ix = (cx + dx).rem_euclid(n as isize) as usize;
                let iy = (cy + dy).rem_euclid(n as isize) as usize;
                let px = (ix as f64 + 0.5) * h;
                let py = (iy as f64 + 0.5) * h;
                if periodic_distance(px, py, c.x, c.y, side) < radius {
                    field.values[iy * n + ix] = value_in;
                }
            }
        }
    }
    Ok(field)
}

/// Conductivity `μ` of the plain stripes that makes the second-order
/// laminate tile isotropic.
pub fn mu_star(lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    let root = (9.0 * lambda * lambda + 14.0 * lambda + 9.0).sqrt();
    Ok((3.0 * lambda * lambda + (1.0 - lambda) * root + 2.0 * lambda + 3.0) / (4.0 * (lambda + 1.0)))
}

/// Pixel average of one laminate tile.
pub fn micro_tile_mean(lambda: f64, mu: f64) -> f64 {
    (2.0 * mu + lambda + 1.0) / 4.0
}

/// Open interval of admissible `σ`: above the tile's effective conductivity
/// and below its pixel average.
pub fn sigma_window(lambda: f64) -> Result<(f64, f64)> {
    let mu = mu_star(lambda)?;
    Ok((lambda / (1.0 + lambda) + mu / 2.0, micro_tile_mean(lambda, mu)))
}

/// `1/τ`, required to be an even integer.
fn stripe_count(tau: f64) -> Result<usize> {
    let err = || Error::InvalidGenerator(format!("tau must be 1/k for an even integer k >= 2, got {tau}"));
    if !(tau > 0.0 && tau <= 0.5) {
        return Err(err());
    }
    let inv = 1.0 / tau;
    let k = inv.round();
    if (inv - k).abs() > 1e-9 * inv || !(k as usize).is_multiple_of(2) {
        return Err(err());
    }
    Ok(k as usize)
}

/// Render the second-order laminate tile on `m×m` pixels: vertical stripes
/// of width `τ` alternating `μ` and a horizontal laminate of layer height
/// `τ²` alternating `1` and `λ`. Row-major, `x` fast.
pub fn render_micro_tile(m: usize, tau: f64, lambda: f64, mu: f64, orientation: Orientation) -> Result<Vec<f64>> {
    let stripes = stripe_count(tau)?;
    let layers = stripes * stripes;
    if !m.is_multiple_of(layers) {
        return Err(Error::InvalidGenerator(format!(
            "tile resolution {m} must be divisible by 1/tau^2 = {layers}"
        )));
    }
    let stripe_width = m / stripes;
    let layer_height = m / layers;
    let mut tile = Vec::with_capacity(m * m);
    for iy in 0..m {
        for ix in 0..m {
            let (sx, sy) = orientation.source(ix, iy, m);
            let v = if (sx / stripe_width).is_multiple_of(2) {
                mu
            } else if (sy / layer_height).is_multiple_of(2) {
                1.0
            } else {
                lambda
            };
            tile.push(v);
        }
    }
    Ok(tile)
}

pub fn generate_counterexample(spec: &GeneratorSpec, geom: &GridGeometry, seed: SampleSeed) -> Result<ScalarField> {
    let Variant::Counterexample {
        lambda,
        sigma,
        tau,
        kappa,
        randomize_orientation,
    } = spec.variant
    else {
        return Err(Error::InvalidGenerator("expected the counterexample".into()));
    };
    spec.validate_for(geom)?;
    let mu = mu_star(lambda)?;
    let m = geom.pixels_per_cell;
    let l = geom.cells;
    let n = geom.n();

    let tiles: Vec<Vec<f64>> = Orientation::all()
        .map(|o| render_micro_tile(m, tau, lambda, mu, o))
        .collect::<Result<_>>()?;

    let mut plain_rng = seed.rng(STREAM_PLAIN);
    let mut micro_rng = seed.rng(STREAM_MICRO);
    let mut values = vec![0.0; n * n];
    for ty in 0..l {
        for tx in 0..l {
            let plain = if plain_rng.random::<f64>() < 0.5 { 1.0 } else { 0.5 };
            let has_micro = micro_rng.random::<f64>() >= 0.5;
            let drawn: usize = micro_rng.random_range(0..8);
            let orientation = if randomize_orientation { drawn } else { 0 };
            let tile = &tiles[orientation];
            for py in 0..m {
                for px in 0..m {
                    let micro = if has_micro { tile[py * m + px] } else { sigma };
                    values[(ty * m + py) * n + tx * m + px] = (1.0 - kappa) * plain + kappa * micro;
                }
            }
        }
    }
    Ok(ScalarField {
        geometry: *geom,
        values,
    })
}

pub fn generate_layered(spec: &GeneratorSpec, geom: &GridGeometry, _seed: SampleSeed) -> Result<ScalarField> {
    let Variant::LayeredTest {
        axis,
        value_lo,
        value_hi,
    } = spec.variant
    else {
        return Err(Error::InvalidGenerator("expected a layered field".into()));
    };
    spec.validate_for(geom)?;
    let m = geom.pixels_per_cell;
    let pick = |i: usize| if (i / m).is_multiple_of(2) { value_lo } else { value_hi };
    Ok(ScalarField::from_fn(*geom, |ix, iy| match axis {
        Axis::X => pick(ix),
        Axis::Y => pick(iy),
    }))
}
