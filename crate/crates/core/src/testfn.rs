//! Test functions for linear spectral statistics.
//!
//! Every function has a canonical id string that [`TestFunction::parse`]
//! reads back:
//!
//! | id | function |
//! |----|----------|
//! | `resolvent:RE,IM` | `x ↦ 1/(z - x)` |
//! | `pair:RE,IM` | `x ↦ 2 Re 1/(z - x)` |
//! | `bump:C,W,K` | `(1 - t²)^{K+1}` on `|t| < 1`, `t = (x - C)/W`; exactly `C^K` |
//! | `poly:c0,c1,...` | `Σ c_k x^k` |
//! | `capped_poly:LO,HI:c0,c1,...` | polynomial on `[LO, HI]`, constant beyond |
//! | `arctan` | `arctan x` |
//! | `indicator:LO,HI` | indicator of `[LO, HI]` |
//! | `const:C` | constant |
//! | `grid:NAME` | tabulated, linearly interpolated, zero outside the grid |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::theory::{hs_norm, HsNorm};

#[derive(Debug, Clone, PartialEq)]
pub enum TestFnKind {
    Resolvent { z: Complex64 },
    RealResolventPair { z: Complex64 },
    SmoothBump { center: f64, width: f64, order: u32 },
    Polynomial { coefficients: Vec<f64> },
    CappedPolynomial { lo: f64, hi: f64, coefficients: Vec<f64> },
    Arctan,
    Indicator { lo: f64, hi: f64 },
    Constant { value: f64 },
    Grid { name: String, x0: f64, dx: f64, values: Vec<f64> },
}

/// Regularity the construction guarantees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularity {
    /// Real-analytic on ℝ.
    Analytic,
    /// `k` continuous derivatives, not `k + 1`.
    Ck(u32),
    /// Continuous and piecewise linear.
    Lipschitz,
    Discontinuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    id: String,
    kind: TestFnKind,
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn horner(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

impl TestFunction {
    fn build(kind: TestFnKind) -> Result<Self> {
        let id = match &kind {
            TestFnKind::Resolvent { z } | TestFnKind::RealResolventPair { z } => {
                if z.im == 0.0 || !z.is_finite() {
                    return Err(Error::Domain("resolvent test function", *z));
                }
                let tag = if matches!(kind, TestFnKind::Resolvent { .. }) {
                    "resolvent"
                } else {
                    "pair"
                };
                format!("{tag}:{},{}", z.re, z.im)
            }
            TestFnKind::SmoothBump { center, width, order } => {
                if !(*width > 0.0) || !center.is_finite() {
                    return Err(Error::Input(format!("bump needs finite center and positive width, got {center}, {width}")));
                }
                format!("bump:{center},{width},{order}")
            }
            TestFnKind::Polynomial { coefficients } => {
                if coefficients.is_empty() {
                    return Err(Error::Input("polynomial needs at least one coefficient".into()));
                }
                format!("poly:{}", join(coefficients))
            }
            TestFnKind::CappedPolynomial { lo, hi, coefficients } => {
                if !(hi > lo) || coefficients.is_empty() {
                    return Err(Error::Input(format!("capped polynomial needs lo < hi and coefficients, got [{lo}, {hi}]")));
                }
                format!("capped_poly:{lo},{hi}:{}", join(coefficients))
            }
            TestFnKind::Arctan => "arctan".to_string(),
            TestFnKind::Indicator { lo, hi } => {
                if !(hi > lo) {
                    return Err(Error::Input(format!("indicator needs lo < hi, got [{lo}, {hi}]")));
                }
                format!("indicator:{lo},{hi}")
            }
            TestFnKind::Constant { value } => format!("const:{value}"),
            TestFnKind::Grid { name, dx, values, .. } => {
                if !(*dx > 0.0) || values.len() < 2 {
                    return Err(Error::Input("grid function needs dx > 0 and at least two values".into()));
                }
                format!("grid:{name}")
            }
        };
        Ok(Self { id, kind })
    }

    pub fn resolvent(z: Complex64) -> Result<Self> {
        Self::build(TestFnKind::Resolvent { z })
    }

    pub fn real_resolvent_pair(z: Complex64) -> Result<Self> {
        Self::build(TestFnKind::RealResolventPair { z })
    }

    pub fn smooth_bump(center: f64, width: f64, order: u32) -> Result<Self> {
        Self::build(TestFnKind::SmoothBump { center, width, order })
    }

    pub fn polynomial(coefficients: Vec<f64>) -> Result<Self> {
        Self::build(TestFnKind::Polynomial { coefficients })
    }

    pub fn capped_polynomial(lo: f64, hi: f64, coefficients: Vec<f64>) -> Result<Self> {
        Self::build(TestFnKind::CappedPolynomial { lo, hi, coefficients })
    }

    pub fn arctan() -> Self {
        Self {
            id: "arctan".into(),
            kind: TestFnKind::Arctan,
        }
    }

    pub fn indicator(lo: f64, hi: f64) -> Result<Self> {
        Self::build(TestFnKind::Indicator { lo, hi })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            id: format!("const:{value}"),
            kind: TestFnKind::Constant { value },
        }
    }

    pub fn grid(name: &str, x0: f64, dx: f64, values: Vec<f64>) -> Result<Self> {
        Self::build(TestFnKind::Grid {
            name: name.to_string(),
            x0,
            dx,
            values,
        })
    }

    /// Parses a built-in id. Grid functions are resolved through a
    /// [`Registry`].
    pub fn parse(id: &str) -> Result<Self> {
        let bad = || Error::Input(format!("unrecognized test function id {id:?}"));
        let nums = |s: &str| -> Result<Vec<f64>> {
            s.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| bad())).collect()
        };
        let (head, rest) = id.split_once(':').unwrap_or((id, ""));
        match head.trim() {
            "resolvent" | "pair" => {
                let v = nums(rest)?;
                let [re, im] = v[..] else { return Err(bad()) };
                let z = Complex64::new(re, im);
                if head == "resolvent" {
                    Self::resolvent(z)
                } else {
                    Self::real_resolvent_pair(z)
                }
            }
            "bump" => {
                let v = nums(rest)?;
                let [c, w, k] = v[..] else { return Err(bad()) };
                if k < 0.0 || k.fract() != 0.0 {
                    return Err(bad());
                }
                Self::smooth_bump(c, w, k as u32)
            }
            "poly" => Self::polynomial(nums(rest)?),
            "capped_poly" => {
                let (window, coeffs) = rest.split_once(':').ok_or_else(bad)?;
                let w = nums(window)?;
                let [lo, hi] = w[..] else { return Err(bad()) };
                Self::capped_polynomial(lo, hi, nums(coeffs)?)
            }
            "arctan" if rest.is_empty() => Ok(Self::arctan()),
            "indicator" => {
                let v = nums(rest)?;
                let [lo, hi] = v[..] else { return Err(bad()) };
                Self::indicator(lo, hi)
            }
            "const" => {
                let v = nums(rest)?;
                let [c] = v[..] else { return Err(bad()) };
                Ok(Self::constant(c))
            }
            _ => Err(bad()),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> &TestFnKind {
        &self.kind
    }

    /// `φ(x)`; real kinds return a zero imaginary part.
    pub fn evaluate(&self, x: f64) -> Complex64 {
        match &self.kind {
            TestFnKind::Resolvent { z } => (z - x).inv(),
            _ => Complex64::new(self.evaluate_real_part(x), 0.0),
        }
    }

    fn evaluate_real_part(&self, x: f64) -> f64 {
        match &self.kind {
            TestFnKind::Resolvent { z } => (z - x).inv().re,
            TestFnKind::RealResolventPair { z } => 2.0 * (z - x).inv().re,
            TestFnKind::SmoothBump { center, width, order } => {
                let t = (x - center) / width;
                if t.abs() >= 1.0 {
                    0.0
                } else {
                    (1.0 - t * t).powi(*order as i32 + 1)
                }
            }
            TestFnKind::Polynomial { coefficients } => horner(coefficients, x),
            TestFnKind::CappedPolynomial { lo, hi, coefficients } => horner(coefficients, x.clamp(*lo, *hi)),
            TestFnKind::Arctan => x.atan(),
            TestFnKind::Indicator { lo, hi } => {
                if (*lo..=*hi).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            TestFnKind::Constant { value } => *value,
            TestFnKind::Grid { x0, dx, values, .. } => {
                let u = (x - x0) / dx;
                let last = (values.len() - 1) as f64;
                if !(0.0..=last).contains(&u) {
                    return 0.0;
                }
                let i = (u.floor() as usize).min(values.len() - 2);
                let f = u - i as f64;
                values[i] * (1.0 - f) + values[i + 1] * f
            }
        }
    }

    pub fn is_real(&self) -> bool {
        !matches!(self.kind, TestFnKind::Resolvent { .. })
    }

    /// Closed support, when compact.
    pub fn support(&self) -> Option<(f64, f64)> {
        match &self.kind {
            TestFnKind::SmoothBump { center, width, .. } => Some((center - width, center + width)),
            TestFnKind::Indicator { lo, hi } => Some((*lo, *hi)),
            TestFnKind::Grid { x0, dx, values, .. } => Some((*x0, x0 + dx * (values.len() - 1) as f64)),
            _ => None,
        }
    }

    pub fn regularity(&self) -> Regularity {
        match &self.kind {
            TestFnKind::Resolvent { .. }
            | TestFnKind::RealResolventPair { .. }
            | TestFnKind::Polynomial { .. }
            | TestFnKind::Arctan
            | TestFnKind::Constant { .. } => Regularity::Analytic,
            TestFnKind::SmoothBump { order, .. } => Regularity::Ck(*order),
            TestFnKind::CappedPolynomial { .. } | TestFnKind::Grid { .. } => Regularity::Lipschitz,
            TestFnKind::Indicator { .. } => Regularity::Discontinuous,
        }
    }

    /// Upper bound on the Lipschitz constant, `None` when unbounded.
    pub fn lipschitz(&self) -> Option<f64> {
        match &self.kind {
            TestFnKind::Resolvent { z } => Some(z.im.powi(-2)),
            TestFnKind::RealResolventPair { z } => Some(2.0 * z.im.powi(-2)),
            TestFnKind::SmoothBump { width, order, .. } => {
                // max of |d/dt (1-t²)^m| is at t² = 1/(2m-1)
                let m = *order as f64 + 1.0;
                if m == 1.0 {
                    return Some(2.0 / width);
                }
                let t2 = 1.0 / (2.0 * m - 1.0);
                Some(2.0 * m * t2.sqrt() * (1.0 - t2).powf(m - 1.0) / width)
            }
            TestFnKind::Polynomial { coefficients } => {
                if coefficients.len() <= 1 {
                    Some(0.0)
                } else if coefficients.len() == 2 {
                    Some(coefficients[1].abs())
                } else {
                    None
                }
            }
            TestFnKind::CappedPolynomial { lo, hi, coefficients } => {
                let r = lo.abs().max(hi.abs());
                Some(
                    coefficients
                        .iter()
                        .enumerate()
                        .skip(1)
                        .map(|(k, c)| k as f64 * c.abs() * r.powi(k as i32 - 1))
                        .sum(),
                )
            }
            TestFnKind::Arctan => Some(1.0),
            TestFnKind::Indicator { .. } => None,
            TestFnKind::Constant { .. } => Some(0.0),
            TestFnKind::Grid { dx, values, .. } => Some(
                values
                    .windows(2)
                    .map(|w| (w[1] - w[0]).abs() / dx)
                    .fold(0.0, f64::max),
            ),
        }
    }

    /// Sup norm on `[lo, hi]`, estimated on a fine grid.
    pub fn sup_norm_on(&self, lo: f64, hi: f64) -> f64 {
        let n = 4096;
        (0..=n)
            .map(|i| self.evaluate(lo + (hi - lo) * i as f64 / n as f64).norm())
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl Serialize for TestFunction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.id)
    }
}

impl<'de> Deserialize<'de> for TestFunction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let id = String::deserialize(d)?;
        Self::parse(&id).map_err(serde::de::Error::custom)
    }
}

/// Built-in ids plus named grid functions.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    grids: BTreeMap<String, TestFunction>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_grid(&mut self, name: &str, x0: f64, dx: f64, values: Vec<f64>) -> Result<()> {
        let f = TestFunction::grid(name, x0, dx, values)?;
        self.grids.insert(name.to_string(), f);
        Ok(())
    }

    pub fn resolve(&self, id: &str) -> Result<TestFunction> {
        match id.strip_prefix("grid:") {
            Some(name) => self
                .grids
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Input(format!("no grid function named {name:?}"))),
            None => TestFunction::parse(id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HsClass {
    InHs,
    NotInHs,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: HsClass,
    pub s: f64,
    pub norm: Option<HsNorm>,
}

/// Grid points per unit of support width used by [`classify`].
pub const CLASSIFY_POINTS: usize = 1024;

/// Decides membership of a compactly supported real `φ` in `H_s` from the
/// numerical norm. Functions without compact support are `Unknown`.
pub fn classify(phi: &TestFunction, s: f64) -> Result<Classification> {
    let Some((lo, hi)) = phi.support().filter(|_| phi.is_real()) else {
        return Ok(Classification {
            class: HsClass::Unknown,
            s,
            norm: None,
        });
    };
    let dx = (hi - lo) / CLASSIFY_POINTS as f64;
    let pad = 8;
    let values: Vec<f64> = (0..=CLASSIFY_POINTS + 2 * pad)
        .map(|i| phi.evaluate(lo + (i as f64 - pad as f64) * dx).re)
        .collect();
    let norm = hs_norm(&values, dx, s)?;
    let class = if norm.divergent { HsClass::NotInHs } else { HsClass::InHs };
    Ok(Classification {
        class,
        s,
        norm: Some(norm),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_examples() {
        let z = Complex64::new(0.0, 2.0);
        assert_eq!(TestFunction::resolvent(z).unwrap().evaluate(0.0), Complex64::new(0.0, -0.5));
        assert_eq!(TestFunction::real_resolvent_pair(z).unwrap().evaluate(0.0), Complex64::new(0.0, 0.0));
        assert_eq!(TestFunction::smooth_bump(0.0, 1.0, 7).unwrap().evaluate(2.0), Complex64::new(0.0, 0.0));
        assert!(TestFunction::resolvent(Complex64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn ids_round_trip() {
        let fs = [
            TestFunction::resolvent(Complex64::new(-1.0, 0.5)).unwrap(),
            TestFunction::real_resolvent_pair(Complex64::new(0.25, 2.0)).unwrap(),
            TestFunction::smooth_bump(0.1, 1.5, 7).unwrap(),
            TestFunction::polynomial(vec![0.0, 1.0, -0.5]).unwrap(),
            TestFunction::capped_polynomial(-2.0, 2.0, vec![1.0, 0.0, 1.0]).unwrap(),
            TestFunction::arctan(),
            TestFunction::indicator(-1.0, 1.0).unwrap(),
            TestFunction::constant(1.0),
        ];
        for f in fs {
            assert_eq!(TestFunction::parse(f.id()).unwrap(), f);
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(serde_json::from_str::<TestFunction>(&json).unwrap(), f);
        }
        assert!(TestFunction::parse("bump:0,1").is_err());
        assert!(TestFunction::parse("sine").is_err());
    }

    #[test]
    fn pair_is_twice_real_part() {
        let z = Complex64::new(0.3, -0.7);
        let r = TestFunction::resolvent(z).unwrap();
        let p = TestFunction::real_resolvent_pair(z).unwrap();
        for i in -50..=50 {
            let x = i as f64 * 0.1;
            let a = r.evaluate(x);
            assert!((p.evaluate(x).re - (a + a.conj()).re).abs() <= 1e-15 * a.norm().max(1.0));
        }
    }

    #[test]
    fn bump_lipschitz_bound_is_attained() {
        let f = TestFunction::smooth_bump(0.0, 0.5, 3).unwrap();
        let l = f.lipschitz().unwrap();
        let h = 1e-6;
        let fd = (-5000..5000)
            .map(|i| {
                let x = i as f64 * 1e-4;
                ((f.evaluate(x + h) - f.evaluate(x - h)).re / (2.0 * h)).abs()
            })
            .fold(0.0, f64::max);
        assert!(fd <= l * (1.0 + 1e-6) && fd >= 0.999 * l, "{fd} vs {l}");
    }

    #[test]
    fn bump_derivative_orders_match_construction() {
        // the K-th derivative is continuous at the boundary, the (K+1)-th jumps
        let k = 2;
        let f = TestFunction::smooth_bump(0.0, 1.0, k).unwrap();
        let g = |x: f64| f.evaluate(x).re;
        let h = 1e-4;
        let fd2 = |x: f64| (g(x + h) - 2.0 * g(x) + g(x - h)) / (h * h);
        assert!((fd2(1.0 - 2.0 * h) - fd2(1.0 + 2.0 * h)).abs() < 0.05);
        let fd3 = |x: f64| (g(x + 2.0 * h) - 2.0 * g(x + h) + 2.0 * g(x - h) - g(x - 2.0 * h)) / (2.0 * h * h * h);
        assert!((fd3(1.0 - 4.0 * h) - fd3(1.0 + 4.0 * h)).abs() > 40.0);
    }

    #[test]
    fn grid_interpolates_and_vanishes_outside() {
        let mut reg = Registry::new();
        reg.insert_grid("tri", -1.0, 1.0, vec![0.0, 1.0, 0.0]).unwrap();
        let f = reg.resolve("grid:tri").unwrap();
        assert_eq!(f.evaluate(-0.5).re, 0.5);
        assert_eq!(f.evaluate(1.5).re, 0.0);
        assert_eq!(f.lipschitz(), Some(1.0));
        assert!(reg.resolve("grid:missing").is_err());
    }

    #[test]
    fn classification_thresholds() {
        let b7 = TestFunction::smooth_bump(0.0, 1.0, 7).unwrap();
        assert_eq!(classify(&b7, 6.6).unwrap().class, HsClass::InHs);
        let b2 = TestFunction::smooth_bump(0.0, 1.0, 2).unwrap();
        assert_eq!(classify(&b2, 1.6).unwrap().class, HsClass::InHs);
        let ind = TestFunction::indicator(-1.0, 1.0).unwrap();
        assert_eq!(classify(&ind, 1.6).unwrap().class, HsClass::NotInHs);
        assert_eq!(classify(&TestFunction::arctan(), 1.0).unwrap().class, HsClass::Unknown);
    }
}
