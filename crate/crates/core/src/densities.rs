//! Null and alternative densities for the two-groups model.
//!
//! The null is the standard normal. Two parametric alternatives are used by
//! the synthetic benchmarks; for real data the alternative is estimated by
//! predictive recursion over a grid of latent effect means with a
//! unit-variance Gaussian kernel.

use std::f64::consts::PI;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ZScores;
use crate::error::{Error, Result};

/// Floor applied to density values before they enter a log-likelihood.
pub const DENSITY_FLOOR: f64 = 1e-12;

fn normal_pdf(z: f64, mean: f64, sd: f64) -> f64 {
    let u = (z - mean) / sd;
    (-0.5 * u * u).exp() / (sd * (2.0 * PI).sqrt())
}

fn check_finite(z: f64) -> Result<f64> {
    if z.is_finite() {
        Ok(z)
    } else {
        Err(Error::input(format!("density argument {z} is not finite")))
    }
}

/// Standard normal null density.
pub fn null_density(z: f64) -> Result<f64> {
    check_finite(z).map(|z| normal_pdf(z, 0.0, 1.0))
}

/// Well-separated benchmark alternative: 0.48 N(-2,1) + 0.04 N(0,16) + 0.48 N(2,1).
pub fn alt_density_ws(z: f64) -> Result<f64> {
    check_finite(z).map(ws_pdf)
}

/// Poorly-separated benchmark alternative: N(0, 9).
pub fn alt_density_ps(z: f64) -> Result<f64> {
    check_finite(z).map(ps_pdf)
}

fn ws_pdf(z: f64) -> f64 {
    0.48 * normal_pdf(z, -2.0, 1.0) + 0.04 * normal_pdf(z, 0.0, 4.0) + 0.48 * normal_pdf(z, 2.0, 1.0)
}

fn ps_pdf(z: f64) -> f64 {
    normal_pdf(z, 0.0, 3.0)
}

/// A density tabulated on an increasing grid, evaluated by linear
/// interpolation with endpoint clamping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    points: Vec<f64>,
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(points: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if points.len() < 2 || points.len() != values.len() {
            return Err(Error::config(format!(
                "density grid needs matching point/value vectors of length >= 2 (got {} and {})",
                points.len(),
                values.len()
            )));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("density grid points must be finite and strictly increasing"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("density grid values must be finite and nonnegative"));
        }
        Ok(DensityGrid { points, values })
    }

    /// Rescales values so the trapezoidal integral over the grid is one.
    pub fn normalized(mut self) -> Result<Self> {
        let total = self.integral();
        if !(total > 0.0) {
            return Err(Error::Numerical("density grid has zero mass".into()));
        }
        self.values.iter_mut().for_each(|v| *v /= total);
        Ok(self)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn integral(&self) -> f64 {
        self.points
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(p, v)| 0.5 * (p[1] - p[0]) * (v[0] + v[1]))
            .sum()
    }

    pub fn eval(&self, z: f64) -> f64 {
        let last = self.points.len() - 1;
        if z <= self.points[0] {
            return self.values[0];
        }
        if z >= self.points[last] {
            return self.values[last];
        }
        // first index with point > z; guaranteed in 1..=last
        let hi = self.points.partition_point(|&p| p <= z);
        let lo = hi - 1;
        let t = (z - self.points[lo]) / (self.points[hi] - self.points[lo]);
        (self.values[lo] + t * (self.values[hi] - self.values[lo])).max(0.0)
    }

    /// Writes `point,value` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "point,value")?;
        for (p, v) in self.points.iter().zip(&self.values) {
            writeln!(out, "{p},{v}")?;
        }
        Ok(())
    }
}

/// Alternative density choice for the two-groups model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Alternative {
    WellSeparated,
    PoorlySeparated,
    Estimated(DensityGrid),
}

/// Standard normal null together with an alternative density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoGroupsDensities {
    pub alternative: Alternative,
}

impl TwoGroupsDensities {
    pub fn new(alternative: Alternative) -> Self {
        TwoGroupsDensities { alternative }
    }

    pub fn null(&self, z: f64) -> f64 {
        normal_pdf(z, 0.0, 1.0)
    }

    pub fn alt(&self, z: f64) -> f64 {
        match &self.alternative {
            Alternative::WellSeparated => ws_pdf(z),
            Alternative::PoorlySeparated => ps_pdf(z),
            Alternative::Estimated(grid) => grid.eval(z),
        }
    }

    /// Evaluates both densities at every z, flooring at [`DENSITY_FLOOR`].
    pub fn likelihoods(&self, z: &ZScores) -> LikelihoodTable {
        let mut floored = 0;
        let mut floor = |v: f64| {
            if v < DENSITY_FLOOR {
                floored += 1;
                DENSITY_FLOOR
            } else {
                v
            }
        };
        let (f0, f1) = z
            .as_slice()
            .iter()
            .map(|&zi| (floor(self.null(zi)), floor(self.alt(zi))))
            .unzip();
        if floored > 0 {
            log::warn!("{floored} density values clamped to {DENSITY_FLOOR:e}");
        }
        LikelihoodTable { f0, f1, floored }
    }
}

/// Null and alternative density values at every observed z.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodTable {
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
    /// Number of values raised to the floor.
    pub floored: usize,
}

impl LikelihoodTable {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }
}

/// Settings for [`fit_predictive_recursion`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictiveRecursionConfig {
    /// Support of the latent mean grid; defaults to `[min(z) - 1, max(z) + 1]`.
    pub mean_grid_bounds: Option<(f64, f64)>,
    pub grid_size: usize,
    pub sweeps: usize,
    /// Weight sequence is `(t + 1)^-decay`.
    pub decay: f64,
    pub initial_null: f64,
    pub seed: u64,
}

impl Default for PredictiveRecursionConfig {
    fn default() -> Self {
        PredictiveRecursionConfig {
            mean_grid_bounds: None,
            grid_size: 200,
            sweeps: 10,
            decay: 0.67,
            initial_null: 0.5,
            seed: 0,
        }
    }
}

/// Result of predictive recursion: null proportion, mixing weights and the
/// implied alternative density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveRecursionFit {
    pub null_proportion: f64,
    pub alternative: DensityGrid,
    pub mean_grid: Vec<f64>,
    /// Probability mass on each mean grid point, summing to one.
    pub mixing_weights: Vec<f64>,
    pub sweep_count: usize,
}

const MIN_PR_SAMPLES: usize = 100;
const Z_GRID_POINTS: usize = 1000;
const Z_GRID_PAD: f64 = 6.0;

/// Estimates `f(z) = pi0 N(z; 0, 1) + (1 - pi0) \int N(z; mu, 1) dF(mu)`.
///
/// Each sweep runs the recursion over a fresh random permutation of the
/// data starting from the same initial measure; the sweeps are averaged.
pub fn fit_predictive_recursion(
    z: &ZScores,
    cfg: &PredictiveRecursionConfig,
) -> Result<PredictiveRecursionFit> {
    if z.len() < MIN_PR_SAMPLES {
        return Err(Error::input(format!(
            "predictive recursion needs at least {MIN_PR_SAMPLES} z-scores, got {}",
            z.len()
        )));
    }
    if cfg.sweeps == 0 {
        return Err(Error::config("predictive recursion needs at least one sweep"));
    }
    if cfg.grid_size < 2 {
        return Err(Error::config("predictive recursion mean grid needs at least 2 points"));
    }
    if !(cfg.initial_null > 0.0 && cfg.initial_null < 1.0) {
        return Err(Error::config("initial null proportion must lie in (0, 1)"));
    }
    if !(cfg.decay > 0.5 && cfg.decay <= 1.0) {
        return Err(Error::config("recursion decay exponent must lie in (0.5, 1]"));
    }
    let zs = z.as_slice();
    let zmin = zs.iter().copied().fold(f64::INFINITY, f64::min);
    let zmax = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = match cfg.mean_grid_bounds {
        Some((lo, hi)) => {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::config(format!("degenerate mean grid bounds ({lo}, {hi})")));
            }
            if lo > zmin || hi < zmax {
                return Err(Error::input(format!(
                    "mean grid bounds ({lo}, {hi}) do not cover observed range ({zmin}, {zmax})"
                )));
            }
            (lo, hi)
        }
        None => (zmin - 1.0, zmax + 1.0),
    };
    let g = cfg.grid_size;
    let step = (hi - lo) / (g - 1) as f64;
    let mean_grid: Vec<f64> = (0..g).map(|j| lo + step * j as f64).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..zs.len()).collect();
    let mut null_sum = 0.0;
    let mut mix_sum = vec![0.0; g];
    let mut kernel = vec![0.0; g];
    for _ in 0..cfg.sweeps {
        order.shuffle(&mut rng);
        let mut null_mass = cfg.initial_null;
        let mut mass = vec![(1.0 - cfg.initial_null) / g as f64; g];
        for (t, &i) in order.iter().enumerate() {
            let zi = zs[i];
            let gamma = (t as f64 + 2.0).powf(-cfg.decay);
            let null_lik = normal_pdf(zi, 0.0, 1.0);
            let mut marginal = null_mass * null_lik;
            for ((k, &mu), &w) in kernel.iter_mut().zip(&mean_grid).zip(&mass) {
                *k = normal_pdf(zi, mu, 1.0);
                marginal += w * *k;
            }
            if !(marginal > 0.0) {
                // observation far outside every kernel's reach carries no information
                continue;
            }
            null_mass *= 1.0 - gamma + gamma * null_lik / marginal;
            for (w, &k) in mass.iter_mut().zip(&kernel) {
                *w *= 1.0 - gamma + gamma * k / marginal;
            }
            // renormalize against drift
            let total = null_mass + mass.iter().sum::<f64>();
            null_mass /= total;
            mass.iter_mut().for_each(|w| *w /= total);
        }
        null_sum += null_mass;
        for (s, w) in mix_sum.iter_mut().zip(&mass) {
            *s += w;
        }
    }
    let null_proportion = null_sum / cfg.sweeps as f64;
    let alt_total: f64 = mix_sum.iter().sum();
    if !(alt_total > 0.0) || !(null_proportion < 1.0) {
        return Err(Error::Numerical("predictive recursion placed all mass on the null".into()));
    }
    let mixing_weights: Vec<f64> = mix_sum.iter().map(|s| s / alt_total).collect();

    let zlo = lo - Z_GRID_PAD;
    let zstep = (hi - lo + 2.0 * Z_GRID_PAD) / (Z_GRID_POINTS - 1) as f64;
    let points: Vec<f64> = (0..Z_GRID_POINTS).map(|k| zlo + zstep * k as f64).collect();
    let values: Vec<f64> = points
        .iter()
        .map(|&zp| {
            mean_grid
                .iter()
                .zip(&mixing_weights)
                .map(|(&mu, &w)| w * normal_pdf(zp, mu, 1.0))
                .sum()
        })
        .collect();
    let alternative = DensityGrid::new(points, values)?.normalized()?;
    Ok(PredictiveRecursionFit {
        null_proportion: null_proportion.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON),
        alternative,
        mean_grid,
        mixing_weights,
        sweep_count: cfg.sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn null_density_values() {
        close(null_density(0.0).unwrap(), 0.3989423, 1e-7);
        close(null_density(1.0).unwrap(), 0.2419707, 1e-7);
        close(null_density(-1.0).unwrap(), 0.2419707, 1e-7);
        assert!(null_density(f64::INFINITY).is_err());
    }

    #[test]
    fn ws_density_values() {
        close(alt_density_ws(0.0).unwrap(), 0.0558208, 1e-7);
        close(alt_density_ws(2.0).unwrap(), 0.1950772, 1e-7);
        for z in [0.3, 1.7, 4.2, 9.0] {
            assert_eq!(alt_density_ws(z).unwrap(), alt_density_ws(-z).unwrap());
        }
        assert!(alt_density_ws(f64::NAN).is_err());
    }

    #[test]
    fn ps_density_values() {
        close(alt_density_ps(0.0).unwrap(), 0.1329808, 1e-7);
        close(alt_density_ps(3.0).unwrap(), 0.0806569, 1e-7);
        close(alt_density_ps(-3.0).unwrap(), 0.0806569, 1e-7);
        assert!(alt_density_ps(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn parametric_densities_integrate_to_one() {
        let trapezoid = |f: fn(f64) -> f64, half_width: f64| {
            let n = 480_000;
            let h = 2.0 * half_width / n as f64;
            (0..n)
                .map(|k| {
                    let a = -half_width + h * k as f64;
                    0.5 * h * (f(a) + f(a + h))
                })
                .sum::<f64>()
        };
        for f in [ws_pdf as fn(f64) -> f64, ps_pdf, |z| normal_pdf(z, 0.0, 1.0)] {
            close(trapezoid(f, 30.0), 1.0, 1e-6);
        }
        close(trapezoid(ps_pdf, 12.0), 1.0, 1e-4);
        // the sd-4 component leaves 0.04 * 2 * Phi(-3) outside [-12, 12]
        close(trapezoid(ws_pdf, 12.0), 1.0 - 0.04 * 0.0026997961, 1e-7);
    }

    #[test]
    fn grid_interpolation_and_clamping() {
        let grid = DensityGrid::new(vec![0.0, 1.0, 2.0], vec![0.2, 0.4, 0.1]).unwrap();
        assert_eq!(grid.eval(1.0), 0.4);
        close(grid.eval(0.5), 0.3, 1e-15);
        assert_eq!(grid.eval(-5.0), 0.2);
        assert_eq!(grid.eval(7.0), 0.1);
        assert!(DensityGrid::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(DensityGrid::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn grid_csv_has_header_and_rows() {
        let grid = DensityGrid::new(vec![0.0, 1.0], vec![0.5, 1.5]).unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "point,value\n0,0.5\n1,1.5\n");
    }

    fn pure_null(n: usize, seed: u64) -> ZScores {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ZScores::new((0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn recursion_rejects_bad_config() {
        let z = pure_null(200, 1);
        let cfg = PredictiveRecursionConfig { sweeps: 0, ..Default::default() };
        assert!(matches!(fit_predictive_recursion(&z, &cfg), Err(Error::Config(_))));
        let short = pure_null(50, 1);
        assert!(matches!(
            fit_predictive_recursion(&short, &Default::default()),
            Err(Error::Input(_))
        ));
        let cfg = PredictiveRecursionConfig { mean_grid_bounds: Some((1.0, 1.0)), ..Default::default() };
        assert!(matches!(fit_predictive_recursion(&z, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn recursion_is_reproducible_for_fixed_seed() {
        let z = pure_null(500, 3);
        let cfg = PredictiveRecursionConfig { seed: 11, sweeps: 3, ..Default::default() };
        let a = fit_predictive_recursion(&z, &cfg).unwrap();
        let b = fit_predictive_recursion(&z, &cfg).unwrap();
        assert_eq!(a, b);
        close(a.alternative.integral(), 1.0, 1e-3);
        assert!(a.null_proportion > 0.0 && a.null_proportion < 1.0);
    }
}
