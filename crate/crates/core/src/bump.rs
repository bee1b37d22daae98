//! Smooth radial cutoffs: the scalar mollifier `psi` with
//! `psi = 1 on [-1,1]` and `psi = 0 outside (-2,2)`, and the rescaled bump
//! `b_eta(x) = psi(eta^2 |x|^2)` on the coefficient space, with exact
//! derivatives of all supported orders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::{partitions_of_mask, MAX_ORDER};
use crate::space::Coeffs;

/// Arguments below this threshold make `exp(-1/t^2)` underflow along with
/// all its derivatives; the series is exactly zero in f64.
const CHI_UNDERFLOW: f64 = 0.038;

// ---------------------------------------------------------------------------
// Univariate truncated Taylor arithmetic
// ---------------------------------------------------------------------------

const LEN: usize = MAX_ORDER + 1;

/// Taylor coefficients `c[k] = f^(k)(y0) / k!` truncated at `MAX_ORDER`.
#[derive(Clone, Copy, Debug)]
struct Series {
    c: [f64; LEN],
}

impl Series {
    fn constant(v: f64) -> Self {
        let mut c = [0.0; LEN];
        c[0] = v;
        Series { c }
    }

    fn variable(y0: f64) -> Self {
        let mut c = [0.0; LEN];
        c[0] = y0;
        c[1] = 1.0;
        Series { c }
    }

    fn add(&self, o: &Series) -> Series {
        let mut c = [0.0; LEN];
        for k in 0..LEN {
            c[k] = self.c[k] + o.c[k];
        }
        Series { c }
    }

    fn neg(&self) -> Series {
        let mut c = [0.0; LEN];
        for k in 0..LEN {
            c[k] = -self.c[k];
        }
        Series { c }
    }

    fn mul(&self, o: &Series) -> Series {
        let mut c = [0.0; LEN];
        for i in 0..LEN {
            for j in 0..LEN - i {
                c[i + j] += self.c[i] * o.c[j];
            }
        }
        Series { c }
    }

    /// `1/f` by the standard recurrence; requires `c[0] != 0`.
    fn recip(&self) -> Series {
        let mut r = [0.0; LEN];
        r[0] = 1.0 / self.c[0];
        for n in 1..LEN {
            let mut acc = 0.0;
            for j in 1..=n {
                acc += self.c[j] * r[n - j];
            }
            r[n] = -r[0] * acc;
        }
        Series { c: r }
    }

    /// `exp(f)` via `e' = e f'`, i.e. `e_n = (1/n) sum_j j f_j e_{n-j}`.
    fn exp(&self) -> Series {
        let mut e = [0.0; LEN];
        e[0] = self.c[0].exp();
        for n in 1..LEN {
            let mut acc = 0.0;
            for j in 1..=n {
                acc += j as f64 * self.c[j] * e[n - j];
            }
            e[n] = acc / n as f64;
        }
        Series { c: e }
    }

    /// `k`-th derivative value: `k! c[k]`.
    fn derivative(&self, k: usize) -> f64 {
        let mut fact = 1.0;
        for i in 2..=k {
            fact *= i as f64;
        }
        fact * self.c[k]
    }
}

/// Taylor series of `chi(t) = exp(-1/t^2)` (for `t > 0`, zero otherwise)
/// around `t0`, given as a series in the expansion variable of `t`.
fn chi_series(t: &Series) -> Series {
    if t.c[0] <= CHI_UNDERFLOW {
        return Series::constant(0.0);
    }
    let t2 = t.mul(t);
    t2.recip().neg().exp()
}

// ---------------------------------------------------------------------------
// The scalar mollifier
// ---------------------------------------------------------------------------

/// `psi(y) = chi(2-|y|) / (chi(|y|-1) + chi(2-|y|))`: identically 1 on
/// `[-1,1]` and 0 outside `(-2,2)`.
pub fn psi(y: f64) -> f64 {
    let a = y.abs();
    if a <= 1.0 {
        1.0
    } else if a >= 2.0 {
        0.0
    } else {
        let chi = |t: f64| if t > CHI_UNDERFLOW { (-1.0 / (t * t)).exp() } else { 0.0 };
        let num = chi(2.0 - a);
        num / (chi(a - 1.0) + num)
    }
}

/// `psi^(order)(y)` by exact differentiation of the quotient on the
/// transition shell; zero on the plateau and outside the support.
pub fn psi_deriv(y: f64, order: usize) -> Result<f64> {
    if order > MAX_ORDER {
        return Err(Error::OrderUnsupported {
            order,
            max: MAX_ORDER,
        });
    }
    if order == 0 {
        return Ok(psi(y));
    }
    let a = y.abs();
    if a <= 1.0 || a >= 2.0 {
        return Ok(0.0);
    }
    let v = Series::variable(a);
    let num = chi_series(&v.neg().add(&Series::constant(2.0)));
    let den = chi_series(&v.add(&Series::constant(-1.0))).add(&num);
    let quot = num.mul(&den.recip());
    let d = quot.derivative(order);
    // psi is even, so odd-order derivatives flip sign with y.
    if y < 0.0 && order % 2 == 1 {
        Ok(-d)
    } else {
        Ok(d)
    }
}

// ---------------------------------------------------------------------------
// Rescaled bump on the coefficient space
// ---------------------------------------------------------------------------

/// Rescaled radial bump `b_eta(x) = psi(eta^r |x|^r)`. Only the Hilbert
/// exponent `r = 2` is implemented: the squared norm has exact second-order
/// jets and nothing beyond.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub eta: f64,
    pub r: f64,
    pub max_order: usize,
}

impl BumpSpec {
    pub fn new(eta: f64, max_order: usize) -> Result<Self> {
        Self::with_r(eta, 2.0, max_order)
    }

    pub fn with_r(eta: f64, r: f64, max_order: usize) -> Result<Self> {
        if eta <= 0.0 || !eta.is_finite() {
            return Err(Error::InvalidArgument("eta must be positive".into()));
        }
        if r != 2.0 {
            return Err(Error::InvalidArgument(
                "only r = 2 (Hilbert norm) is implemented".into(),
            ));
        }
        if max_order > MAX_ORDER {
            return Err(Error::OrderUnsupported {
                order: max_order,
                max: MAX_ORDER,
            });
        }
        Ok(BumpSpec { eta, r, max_order })
    }

    /// Support radius `2^{1/2} / eta`: the bump vanishes beyond it.
    pub fn support_radius(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.eta
    }

    /// Plateau radius `1 / eta`: the bump is identically 1 inside it.
    pub fn plateau_radius(&self) -> f64 {
        1.0 / self.eta
    }
}

/// `b_eta(x) = psi(eta^2 |x|^2)`.
pub fn bump_eval(spec: &BumpSpec, x: &Coeffs) -> f64 {
    let s = spec.eta * spec.eta * x.norm().powi(2);
    psi(s)
}

/// Mixed derivative `D^i b_eta(x)(h^1,...,h^i)`, composing `psi` with the
/// exact jets of `g(x) = eta^2 |x|^2` (first derivative `2 eta^2 <x,h>`,
/// second `2 eta^2 <h,g>`, all higher orders zero) over subset partitions.
pub fn bump_derivative(spec: &BumpSpec, x: &Coeffs, dirs: &[Coeffs]) -> Result<f64> {
    let order = dirs.len();
    if order > spec.max_order {
        return Err(Error::OrderUnsupported {
            order,
            max: spec.max_order,
        });
    }
    for h in dirs {
        if h.dim() != x.dim() {
            return Err(Error::DimensionMismatch {
                expected: x.dim(),
                got: h.dim(),
                context: "bump direction",
            });
        }
    }
    let eta2 = spec.eta * spec.eta;
    let u0 = eta2 * x.norm().powi(2);
    if order == 0 {
        return Ok(psi(u0));
    }
    let full = (1usize << order) - 1;
    let mut acc = 0.0;
    for pi in partitions_of_mask(full) {
        // Blocks of size >= 3 vanish: the squared norm has zero third
        // derivative.
        if pi.iter().any(|b| b.count_ones() > 2) {
            continue;
        }
        let mut term = psi_deriv(u0, pi.len())?;
        if term == 0.0 {
            continue;
        }
        for &block in &pi {
            term *= match block.count_ones() {
                1 => {
                    let j = block.trailing_zeros() as usize;
                    2.0 * eta2 * x.dot(&dirs[j])
                }
                2 => {
                    let j = block.trailing_zeros() as usize;
                    let l = (block ^ (1 << j)).trailing_zeros() as usize;
                    2.0 * eta2 * dirs[j].dot(&dirs[l])
                }
                _ => unreachable!(),
            };
        }
        acc += term;
    }
    Ok(acc)
}
