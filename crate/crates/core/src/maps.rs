//! One-dimensional chaotic maps and the closed-form tent/logistic conjugacy.
//!
//! All maps act on the unit interval. The tent map with slope 2 and the
//! logistic map with `r = 4` are topologically conjugate through
//! `phi(x) = (2/pi) asin(sqrt(x))`, whose inverse is `sin^2(pi x / 2)`;
//! [`latent_logistic_step`] evaluates the logistic map by going through the
//! tent map in `phi` coordinates, which is what the conjugacy autoencoder
//! places in its latent space.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Half-width of the tolerance band accepted around `[0, 1]` by [`phi`]
/// and [`phi_inverse`] before clamping.
pub const EPS_CLAMP: f64 = 1e-7;

static RANGE_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Number of times a map image was clamped back into `[0, 1]` because of
/// floating point overshoot, across the whole process.
pub fn range_clamp_events() -> u64 {
    RANGE_CLAMPS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    Tent,
    Logistic,
    Custom,
    KatsuraFukuda,
    Doubling,
    PomeauManneville,
}

impl MapKind {
    pub const ALL: [MapKind; 6] = [
        MapKind::Tent,
        MapKind::Logistic,
        MapKind::Custom,
        MapKind::KatsuraFukuda,
        MapKind::Doubling,
        MapKind::PomeauManneville,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MapKind::Tent => "tent",
            MapKind::Logistic => "logistic",
            MapKind::Custom => "custom",
            MapKind::KatsuraFukuda => "katsura-fukuda",
            MapKind::Doubling => "doubling",
            MapKind::PomeauManneville => "pomeau-manneville",
        }
    }

    /// Piecewise maps (discontinuous or with a kink) are trained with ReLU
    /// networks; the smooth ones with SeLU.
    pub fn is_piecewise(self) -> bool {
        matches!(
            self,
            MapKind::Tent | MapKind::Doubling | MapKind::PomeauManneville
        )
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        match norm.as_str() {
            "tent" => Ok(MapKind::Tent),
            "logistic" => Ok(MapKind::Logistic),
            "custom" => Ok(MapKind::Custom),
            "katsura-fukuda" | "kf" => Ok(MapKind::KatsuraFukuda),
            "doubling" | "bernoulli" => Ok(MapKind::Doubling),
            "pomeau-manneville" | "pm" => Ok(MapKind::PomeauManneville),
            _ => Err(Error::Domain(format!("unknown map `{s}`"))),
        }
    }
}

/// A map family together with its parameters.
///
/// Only the parameters relevant to `kind` are consulted: `mu` for the tent
/// map, `r` for logistic and Katsura-Fukuda, `z` and `a` for
/// Pomeau-Manneville.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapSpec<T> {
    pub kind: MapKind,
    pub mu: T,
    pub r: T,
    pub z: T,
    pub a: T,
}

impl<T: Scalar> MapSpec<T> {
    fn with_kind(kind: MapKind) -> Self {
        MapSpec {
            kind,
            mu: T::lit(2.0),
            r: T::lit(4.0),
            z: T::lit(1.5),
            a: T::one(),
        }
    }

    pub fn tent(mu: T) -> Self {
        MapSpec {
            mu,
            ..Self::with_kind(MapKind::Tent)
        }
    }

    pub fn logistic(r: T) -> Self {
        MapSpec {
            r,
            ..Self::with_kind(MapKind::Logistic)
        }
    }

    pub fn custom() -> Self {
        Self::with_kind(MapKind::Custom)
    }

    pub fn katsura_fukuda(r: T) -> Self {
        MapSpec {
            r,
            ..Self::with_kind(MapKind::KatsuraFukuda)
        }
    }

    pub fn doubling() -> Self {
        Self::with_kind(MapKind::Doubling)
    }

    pub fn pomeau_manneville(z: T, a: T) -> Self {
        MapSpec {
            z,
            a,
            ..Self::with_kind(MapKind::PomeauManneville)
        }
    }

    /// Builds a spec from a kind and its primary parameter (`mu`, `r` or
    /// `z`); `None` selects the family default. The Pomeau-Manneville
    /// coefficient is taken from `a` (default 1).
    pub fn from_param(kind: MapKind, param: Option<T>, a: Option<T>) -> Result<Self> {
        let base = Self::with_kind(kind);
        let spec = match kind {
            MapKind::Tent => MapSpec {
                mu: param.unwrap_or(base.mu),
                ..base
            },
            MapKind::Logistic => MapSpec {
                r: param.unwrap_or(base.r),
                ..base
            },
            MapKind::KatsuraFukuda => MapSpec {
                r: param.unwrap_or(T::lit(0.5)),
                ..base
            },
            MapKind::PomeauManneville => MapSpec {
                z: param.unwrap_or(base.z),
                a: a.unwrap_or(base.a),
                ..base
            },
            MapKind::Custom | MapKind::Doubling => {
                if param.is_some() {
                    return Err(Error::Domain(format!("the {kind} map takes no parameter")));
                }
                base
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The primary parameter, if the family has one.
    pub fn param(&self) -> Option<T> {
        match self.kind {
            MapKind::Tent => Some(self.mu),
            MapKind::Logistic | MapKind::KatsuraFukuda => Some(self.r),
            MapKind::PomeauManneville => Some(self.z),
            MapKind::Custom | MapKind::Doubling => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        let ok = match self.kind {
            MapKind::Tent => self.mu > zero && self.mu <= T::lit(2.0),
            MapKind::Logistic => self.r > zero && self.r <= T::lit(4.0),
            MapKind::KatsuraFukuda => self.r > zero && self.r < T::one(),
            MapKind::PomeauManneville => self.z > T::one() && self.a > zero,
            MapKind::Custom | MapKind::Doubling => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "parameters out of range for {} map: {}",
                self.kind,
                self.describe_params()
            )))
        }
    }

    fn describe_params(&self) -> String {
        match self.kind {
            MapKind::Tent => format!("mu={} (need 0 < mu <= 2)", self.mu),
            MapKind::Logistic => format!("r={} (need 0 < r <= 4)", self.r),
            MapKind::KatsuraFukuda => format!("r={} (need 0 < r < 1)", self.r),
            MapKind::PomeauManneville => {
                format!("z={}, a={} (need z > 1, a > 0)", self.z, self.a)
            }
            MapKind::Custom | MapKind::Doubling => String::new(),
        }
    }

    /// Evaluates the map without validating anything. Callers must have
    /// validated the parameters and the input.
    pub fn apply(&self, x: T) -> T {
        let one = T::one();
        match self.kind {
            MapKind::Tent => tent(self.mu, x),
            MapKind::Logistic => self.r * x * (one - x),
            MapKind::Custom => {
                let y = T::lit(16.0) * x * (one - T::lit(2.0) * x.sqrt() + x);
                clamp_counted(y)
            }
            MapKind::KatsuraFukuda => {
                let den = one - self.r * x * x;
                let y = T::lit(4.0) * x * (one - x) * (one - self.r * x) / (den * den);
                clamp_counted(y)
            }
            MapKind::Doubling => frac(T::lit(2.0) * x),
            MapKind::PomeauManneville => frac(x + self.a * x.powf(self.z)),
        }
    }
}

impl<T: Scalar> fmt::Display for MapSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.param() {
            Some(p) => write!(f, "{}({})", self.kind, p),
            None => write!(f, "{}", self.kind),
        }
    }
}

/// `x - floor(x)`; maps an exact `1.0` to `0.0`.
pub fn frac<T: Scalar>(x: T) -> T {
    x - x.floor()
}

fn clamp_counted<T: Scalar>(y: T) -> T {
    if y > T::one() || y < T::zero() {
        RANGE_CLAMPS.fetch_add(1, Ordering::Relaxed);
        log::warn!("map image {y:e} clamped into [0, 1]");
        y.max(T::zero()).min(T::one())
    } else {
        y
    }
}

/// Tent map with slope `mu`.
pub fn tent<T: Scalar>(mu: T, x: T) -> T {
    if x < T::lit(0.5) {
        mu * x
    } else {
        mu * (T::one() - x)
    }
}

/// Evaluates `spec` at `x`.
///
/// Inputs are accepted on the closed interval `[0, 1]` so that orbits which
/// land exactly on 1 (logistic with `r = 4` from 0.5) can be continued.
pub fn eval_map<T: Scalar>(spec: &MapSpec<T>, x: T) -> Result<T> {
    spec.validate()?;
    check_unit(x, "eval_map input")?;
    Ok(spec.apply(x))
}

fn check_unit<T: Scalar>(x: T, what: &str) -> Result<()> {
    if x.is_nan() || x < T::zero() || x > T::one() {
        Err(Error::Domain(format!("{what} {x} outside [0, 1]")))
    } else {
        Ok(())
    }
}

/// `[x0, f(x0), ..., f^{n-1}(x0)]`.
pub fn orbit<T: Scalar>(spec: &MapSpec<T>, x0: T, n: usize) -> Result<Vec<T>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Domain("orbit length must be at least 1".into()));
    }
    if x0.is_nan() || x0 < T::zero() || x0 >= T::one() {
        return Err(Error::Domain(format!("orbit start {x0} outside [0, 1)")));
    }
    let mut out = Vec::with_capacity(n);
    let mut x = x0;
    out.push(x);
    for _ in 1..n {
        x = eval_map(spec, x)?;
        out.push(x);
    }
    Ok(out)
}

fn clamp_band<T: Scalar>(x: T, what: &str) -> Result<T> {
    let eps = T::lit(EPS_CLAMP);
    if x.is_nan() || x < -eps || x > T::one() + eps {
        return Err(Error::Domain(format!("{what} input {x} outside [-eps, 1+eps]")));
    }
    Ok(x.max(T::zero()).min(T::one()))
}

/// Conjugacy `(2/pi) asin(sqrt(x))` from logistic to tent coordinates.
pub fn phi<T: Scalar>(x: T) -> Result<T> {
    Ok(phi_raw(clamp_band(x, "phi")?))
}

/// Inverse conjugacy `sin^2(pi y / 2)`.
pub fn phi_inverse<T: Scalar>(y: T) -> Result<T> {
    Ok(phi_inverse_raw(clamp_band(y, "phi_inverse")?))
}

#[inline]
pub(crate) fn phi_raw<T: Scalar>(x: T) -> T {
    T::lit(2.0) * T::FRAC_1_PI() * x.sqrt().asin()
}

#[inline]
pub(crate) fn phi_inverse_raw<T: Scalar>(y: T) -> T {
    let s = (T::FRAC_PI_2() * y).sin();
    s * s
}

/// `phi^{-1}(T_2(phi(y)))`, which equals `4 y (1 - y)` analytically.
pub fn latent_logistic_step<T: Scalar>(y: T) -> Result<T> {
    Ok(phi_inverse_raw(tent(T::lit(2.0), phi(y)?)))
}

/// The tent/logistic conjugacy pair with its domain guard.
#[derive(Debug, Clone, Copy)]
pub struct ConjugacyPair<T> {
    pub eps_clamp: T,
}

impl<T: Scalar> Default for ConjugacyPair<T> {
    fn default() -> Self {
        ConjugacyPair {
            eps_clamp: T::lit(EPS_CLAMP),
        }
    }
}

impl<T: Scalar> ConjugacyPair<T> {
    pub fn forward(&self, x: T) -> Result<T> {
        phi(x)
    }

    pub fn inverse(&self, y: T) -> Result<T> {
        phi_inverse(y)
    }

    /// Value and derivative of the latent step on an already clamped
    /// `y` in `[0, 1]`.
    ///
    /// The derivative is assembled from the three chain-rule factors,
    /// evaluated at `y` pulled into `[eps, 1 - eps]` where `phi'` is finite.
    /// The value is evaluated at `y` itself.
    pub fn latent_step_with_grad(&self, y: T) -> (T, T) {
        let two = T::lit(2.0);
        let half_turn = |u: T| (T::FRAC_PI_2() * tent(two, u)).sin_cos();
        let u = phi_raw(y);
        let (s, c) = half_turn(u);
        let value = s * s;

        let g = y.max(self.eps_clamp).min(T::one() - self.eps_clamp);
        // the factors are re-evaluated only when the guard moved the point
        let (u, (s, c)) = if g == y {
            (u, (s, c))
        } else {
            let ug = phi_raw(g);
            (ug, half_turn(ug))
        };
        // d/dx (2/pi) asin(sqrt x) = 1 / (pi sqrt(x (1 - x)))
        let dphi = T::FRAC_1_PI() / (g * (T::one() - g)).sqrt();
        let dtent = if u < T::lit(0.5) { two } else { -two };
        // d/dy sin^2(pi y / 2) = pi sin(pi y / 2) cos(pi y / 2)
        let dinv = T::PI() * s * c;
        (value, dinv * dtent * dphi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn eval_examples() {
        assert_eq!(eval_map(&MapSpec::logistic(4.0), 0.5).unwrap(), 1.0);
        assert_eq!(eval_map(&MapSpec::tent(2.0), 0.25).unwrap(), 0.5);
        assert_abs_diff_eq!(eval_map(&MapSpec::doubling(), 0.7).unwrap(), 0.4, epsilon = 1e-15);
        assert_eq!(eval_map(&MapSpec::<f64>::custom(), 0.25).unwrap(), 1.0);
        let pm = MapSpec::pomeau_manneville(1.5, 1.0);
        assert_eq!(eval_map(&pm, 0.25).unwrap(), 0.375);
    }

    #[test]
    fn domain_errors() {
        assert!(eval_map(&MapSpec::logistic(4.0), 1.5).is_err());
        assert!(eval_map(&MapSpec::logistic(4.0), -0.1).is_err());
        assert!(eval_map(&MapSpec::logistic(4.0), f64::NAN).is_err());
        assert!(eval_map(&MapSpec::logistic(5.0), 0.5).is_err());
        assert!(eval_map(&MapSpec::tent(2.5), 0.5).is_err());
        assert!(eval_map(&MapSpec::katsura_fukuda(1.0), 0.5).is_err());
        assert!(eval_map(&MapSpec::pomeau_manneville(1.0, 1.0), 0.5).is_err());
        assert!(eval_map(&MapSpec::pomeau_manneville(1.5, 0.0), 0.5).is_err());
        assert!(MapSpec::<f64>::from_param(MapKind::Doubling, Some(2.0), None).is_err());
    }

    #[test]
    fn frac_maps_one_to_zero() {
        assert_eq!(frac(1.0f64), 0.0);
        assert_eq!(eval_map(&MapSpec::doubling(), 0.5).unwrap(), 0.0);
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(phi(1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(phi(0.5).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(phi_inverse(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(phi_inverse(0.5).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(phi_inverse(phi(0.3).unwrap()).unwrap(), 0.3, epsilon = 1e-12);
        // clamped band
        assert_eq!(phi(-5e-8).unwrap(), 0.0);
        assert!(phi(-1e-3).is_err());
        assert!(phi(f64::NAN).is_err());
    }

    #[test]
    fn latent_step_examples() {
        assert_abs_diff_eq!(latent_logistic_step(0.5).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(latent_logistic_step(0.2).unwrap(), 4.0 * 0.2 * 0.8, epsilon = 1e-12);
        assert_eq!(latent_logistic_step(0.0).unwrap(), 0.0);
    }

    #[test]
    fn latent_step_derivative_matches_logistic() {
        let pair = ConjugacyPair::<f64>::default();
        for i in 1..100 {
            let y = i as f64 / 100.0;
            let (v, d) = pair.latent_step_with_grad(y);
            assert_abs_diff_eq!(v, 4.0 * y * (1.0 - y), epsilon = 1e-12);
            if (y - 0.5).abs() > 1e-9 {
                assert_abs_diff_eq!(d, 4.0 - 8.0 * y, epsilon = 1e-8);
            }
        }
        let (_, d0) = pair.latent_step_with_grad(0.0);
        assert!((d0 - 4.0).abs() < 1e-5);
    }

    #[test]
    fn orbit_examples() {
        assert_eq!(orbit(&MapSpec::logistic(4.0), 0.5, 3).unwrap(), vec![0.5, 1.0, 0.0]);
        let tent = orbit(&MapSpec::tent(2.0), 0.4, 3).unwrap();
        for (a, b) in tent.iter().zip([0.4, 0.8, 0.4]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let o = orbit(&MapSpec::doubling(), 0.1, 4).unwrap();
        for (a, b) in o.iter().zip([0.1, 0.2, 0.4, 0.8]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(orbit(&MapSpec::doubling(), 1.0, 4).is_err());
        assert!(orbit(&MapSpec::doubling(), 0.1, 0).is_err());
    }

    #[test]
    fn kind_parsing() {
        for k in MapKind::ALL {
            assert_eq!(k.name().parse::<MapKind>().unwrap(), k);
        }
        assert!("henon".parse::<MapKind>().is_err());
    }

    #[test]
    fn generic_f32() {
        let y = latent_logistic_step(0.2f32).unwrap();
        assert!((y - 0.64).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn conjugacy_identity(x in 0.0f64..=1.0) {
            let lhs = phi_inverse(tent(2.0, phi(x).unwrap())).unwrap();
            prop_assert!((lhs - 4.0 * x * (1.0 - x)).abs() < 1e-12);
        }

        #[test]
        fn phi_inverse_identity(y in 0.0f64..=1.0) {
            prop_assert!((phi(phi_inverse(y).unwrap()).unwrap() - y).abs() < 1e-12);
        }

        #[test]
        fn images_stay_in_unit_interval(x in 0.0f64..1.0, r in 0.01f64..0.99, z in 1.01f64..3.0) {
            for spec in [
                MapSpec::tent(2.0), MapSpec::logistic(4.0), MapSpec::custom(),
                MapSpec::katsura_fukuda(r), MapSpec::doubling(), MapSpec::pomeau_manneville(z, 1.0),
            ] {
                let y = eval_map(&spec, x).unwrap();
                prop_assert!((0.0..=1.0).contains(&y), "{spec} at {x} -> {y}");
            }
        }
    }
}
