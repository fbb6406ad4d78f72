//! Nouner valuation distributions and the order statistics of an auction among `n` nouners
//! facing one arbitrageur who drops out at a cutoff `b`.
//!
//! All quantities take the cutoff clamped to `[0, v_bar]`: a cutoff above the support wins
//! with probability one and behaves exactly like `b = v_bar`.

use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{WGK, XGK};
use crate::scalar::Scalar;

/// Tables kept per thread; the oldest is dropped beyond this.
const TABLE_CACHE: usize = 16;
/// Density floor when forming the hazard ratio `F/f` away from closed forms.
const DENSITY_FLOOR: f64 = 1e-12;

/// Shape of the valuation distribution on `[0, v_bar]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ValuationFamily<T> {
    Uniform,
    /// Normal(mean, sd) renormalized to `[0, v_bar]`.
    TruncatedNormal { mean: T, sd: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuationModel<T> {
    pub family: ValuationFamily<T>,
    /// Upper bound of the support.
    pub v_bar: T,
}

/// How the arbitrageur's cutoff `b` splits the two top nouner valuations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderStatProbs<T> {
    /// Second-highest nouner value above `b`: the nouners set the price among themselves.
    pub p_second_above: T,
    /// `b` lies between the two top values: a nouner wins and pays `b`.
    pub p_between: T,
    /// Every nouner value is below `b`: the arbitrageur wins.
    pub p_all_below: T,
}

thread_local! {
    static TABLES: RefCell<Vec<Rc<CdfTable>>> = const { RefCell::new(Vec::new()) };
}

/// Panel table for `int_0^x F^n` and `int_0^x n F^(n-1) (1 - F)`: cumulative values at equally
/// spaced panel edges, plus one 15-point Kronrod rule on the partial panel at lookup time.
struct CdfTable {
    key: [f64; 3],
    n: usize,
    width: f64,
    cdf: Box<dyn Fn(f64) -> f64>,
    edges: Vec<(f64, f64)>,
}

impl CdfTable {
    fn build(key: [f64; 3], n: usize) -> Self {
        let [v_bar, mean, sd] = key;
        // panels narrow enough that each sees a nearly polynomial cdf
        let panels = ((16.0 * v_bar / sd).ceil() as usize).clamp(64, 1 << 16);
        let width = v_bar / panels as f64;
        let lo = std_normal_cdf(-mean / sd);
        let mass = std_normal_cdf((v_bar - mean) / sd) - lo;
        let cdf = move |x: f64| ((std_normal_cdf((x - mean) / sd) - lo) / mass).clamp(0.0, 1.0);
        let mut table = Self {
            key,
            n,
            width,
            cdf: Box::new(cdf),
            edges: Vec::with_capacity(panels + 1),
        };
        let (mut ia, mut ib) = (0.0, 0.0);
        table.edges.push((0.0, 0.0));
        for k in 0..panels {
            let (da, db) = table.panel(k as f64 * width, (k + 1) as f64 * width);
            ia += da;
            ib += db;
            table.edges.push((ia, ib));
        }
        table
    }

    fn panel(&self, a: f64, b: f64) -> (f64, f64) {
        let (center, half) = (0.5 * (a + b), 0.5 * (b - a));
        let nf = self.n as f64;
        let terms = |x: f64| {
            let f = (self.cdf)(x);
            let g = f.powi(self.n as i32 - 1);
            (g * f, nf * g * (1.0 - f))
        };
        let (mut sa, mut sb) = (0.0, 0.0);
        for (j, (&x, &w)) in XGK.iter().zip(&WGK).enumerate() {
            let nodes: &[f64] = if j == 7 { &[0.0] } else { &[-x, x] };
            for &u in nodes {
                let (ta, tb) = terms(center + half * u);
                sa += w * ta;
                sb += w * tb;
            }
        }
        (sa * half, sb * half)
    }

    fn integrals(&self, x: f64) -> (f64, f64) {
        let panels = self.edges.len() - 1;
        let x = x.clamp(0.0, self.key[0]);
        let k = ((x / self.width) as usize).min(panels - 1);
        let start = k as f64 * self.width;
        let (ia, ib) = self.edges[k];
        let (da, db) = if x > start { self.panel(start, x) } else { (0.0, 0.0) };
        (ia + da, ib + db)
    }

    fn totals(&self) -> (f64, f64) {
        self.edges[self.edges.len() - 1]
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        Err(Error::TooFewBidders(n))
    } else {
        Ok(())
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl<T: Scalar> ValuationModel<T> {
    pub fn uniform(v_bar: T) -> Result<Self> {
        Self::new(ValuationFamily::Uniform, v_bar)
    }

    pub fn truncated_normal(mean: T, sd: T, v_bar: T) -> Result<Self> {
        Self::new(ValuationFamily::TruncatedNormal { mean, sd }, v_bar)
    }

    pub fn new(family: ValuationFamily<T>, v_bar: T) -> Result<Self> {
        let model = Self { family, v_bar };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_bar > T::zero()) || !self.v_bar.is_finite() {
            return Err(invalid("v_bar", format!("must be positive, got {}", self.v_bar)));
        }
        if let ValuationFamily::TruncatedNormal { mean, sd } = self.family {
            if !(sd > T::zero()) || !sd.is_finite() {
                return Err(invalid("sd", format!("must be positive, got {sd}")));
            }
            if !mean.is_finite() {
                return Err(invalid("mean", "must be finite"));
            }
            if !(self.normal_mass() > 0.0) {
                return Err(invalid("mean", "no normal mass on [0, v_bar]"));
            }
        }
        Ok(())
    }

    /// Probability mass the untruncated normal puts on the support.
    fn normal_mass(&self) -> f64 {
        match self.family {
            ValuationFamily::Uniform => 1.0,
            ValuationFamily::TruncatedNormal { mean, sd } => {
                let (m, s) = (mean.as_f64(), sd.as_f64());
                std_normal_cdf((self.v_bar.as_f64() - m) / s) - std_normal_cdf(-m / s)
            }
        }
    }

    fn clamp(&self, v: T) -> T {
        v.max(T::zero()).min(self.v_bar)
    }

    /// Distribution function, clamped to 0 below and 1 above the support.
    pub fn cdf(&self, v: T) -> T {
        if v <= T::zero() {
            return T::zero();
        }
        if v >= self.v_bar {
            return T::one();
        }
        match self.family {
            ValuationFamily::Uniform => v / self.v_bar,
            ValuationFamily::TruncatedNormal { mean, sd } => {
                let (m, s) = (mean.as_f64(), sd.as_f64());
                let lo = std_normal_cdf(-m / s);
                let p = (std_normal_cdf((v.as_f64() - m) / s) - lo) / self.normal_mass();
                T::lit(p.clamp(0.0, 1.0))
            }
        }
    }

    /// Density; zero outside `[0, v_bar]`.
    pub fn pdf(&self, v: T) -> T {
        if v < T::zero() || v > self.v_bar {
            return T::zero();
        }
        match self.family {
            ValuationFamily::Uniform => self.v_bar.recip(),
            ValuationFamily::TruncatedNormal { mean, sd } => {
                let (m, s) = (mean.as_f64(), sd.as_f64());
                T::lit(std_normal_pdf((v.as_f64() - m) / s) / (s * self.normal_mass()))
            }
        }
    }

    /// Inverse of [`cdf`](Self::cdf) on `[0, 1]`.
    pub fn quantile(&self, u: T) -> T {
        let u = u.max(T::zero()).min(T::one());
        match self.family {
            ValuationFamily::Uniform => u * self.v_bar,
            ValuationFamily::TruncatedNormal { .. } => {
                // Newton on the cdf, falling back to bisection when a step leaves the bracket.
                let (mut lo, mut hi) = (T::zero(), self.v_bar);
                let mut x = u * self.v_bar;
                let tol = T::epsilon() * T::lit(8.0) * self.v_bar;
                for _ in 0..100 {
                    let g = self.cdf(x) - u;
                    if g.abs() <= T::epsilon() {
                        break;
                    }
                    if g > T::zero() {
                        hi = x;
                    } else {
                        lo = x;
                    }
                    let d = self.pdf(x);
                    let newton = x - g / d;
                    x = if d > T::zero() && newton > lo && newton < hi {
                        newton
                    } else {
                        T::lit(0.5) * (lo + hi)
                    };
                    if hi - lo <= tol {
                        break;
                    }
                }
                x
            }
        }
    }

    /// Hazard ratio `F(b)/f(b)`; exact `b` for the uniform family.
    pub fn hazard_ratio(&self, b: T) -> T {
        let b = self.clamp(b);
        match self.family {
            ValuationFamily::Uniform => b,
            ValuationFamily::TruncatedNormal { .. } => {
                self.cdf(b) / self.pdf(b).max(T::lit(DENSITY_FLOOR))
            }
        }
    }

    /// Probability `F(b)^n` that the arbitrageur outbids every nouner.
    pub fn win_probability(&self, b: T, n: usize) -> T {
        self.cdf(b).powi(n as i32)
    }

    pub fn order_stat_probs(&self, b: T, n: usize) -> Result<OrderStatProbs<T>> {
        check_n(n)?;
        if b < T::zero() {
            return Err(invalid("b", format!("cutoff must be nonnegative, got {b}")));
        }
        let f = self.cdf(b);
        let all_below = f.powi(n as i32);
        let between = T::from_count(n) * f.powi(n as i32 - 1) * (T::one() - f);
        let second_above = (T::one() - between - all_below).max(T::zero());
        Ok(OrderStatProbs {
            p_second_above: second_above,
            p_between: between,
            p_all_below: all_below,
        })
    }

    /// `E[v_(n-1) ; v_(n-1) > b]`, the unnormalized upper tail of the second-highest value.
    pub fn second_upper_partial(&self, b: T, n: usize) -> T {
        let b = self.clamp(b);
        let nf = T::from_count(n);
        match self.family {
            ValuationFamily::Uniform => {
                let x = b / self.v_bar;
                let n1 = T::from_count(n + 1);
                self.v_bar
                    * nf
                    * (nf - T::one())
                    * ((T::one() - x.powi(n as i32)) / nf - (T::one() - x.powi(n as i32 + 1)) / n1)
            }
            ValuationFamily::TruncatedNormal { .. } => {
                let table = self.table(n);
                let (ia, ib) = table.integrals(b.as_f64());
                let (ia_top, ib_top) = table.totals();
                let f = self.cdf(b);
                let tail = T::one() - f.powi(n as i32) - nf * f.powi(n as i32 - 1) * (T::one() - f);
                let b64 = b.as_f64();
                let rest = (self.v_bar.as_f64() - b64) - (ia_top - ia) - (ib_top - ib);
                (b * tail.max(T::zero()) + T::lit(rest)).max(T::zero())
            }
        }
    }

    /// `E[v_(n) ; v_(n) <= b]`, the unnormalized lower tail of the highest value.
    pub fn max_lower_partial(&self, b: T, n: usize) -> T {
        let b = self.clamp(b);
        let nf = T::from_count(n);
        match self.family {
            ValuationFamily::Uniform => {
                let x = b / self.v_bar;
                self.v_bar * nf * x.powi(n as i32 + 1) / T::from_count(n + 1)
            }
            ValuationFamily::TruncatedNormal { .. } => {
                let (ia, _) = self.table(n).integrals(b.as_f64());
                (b * self.cdf(b).powi(n as i32) - T::lit(ia)).max(T::zero())
            }
        }
    }

    /// `E[v_(n-1) | v_(n-1) >= b]`; `None` when the event has probability zero.
    pub fn second_above_conditional(&self, b: T, n: usize) -> Result<Option<T>> {
        let p = self.order_stat_probs(b, n)?.p_second_above;
        Ok((p > T::zero()).then(|| self.second_upper_partial(b, n) / p))
    }

    /// `E[v_(n) | v_(n) <= b]`: the price the arbitrageur pays when he wins at cutoff `b`.
    pub fn max_below_conditional(&self, b: T, n: usize) -> Result<Option<T>> {
        let p = self.order_stat_probs(b, n)?.p_all_below;
        Ok((p > T::zero()).then(|| self.max_lower_partial(b, n) / p))
    }

    /// Expected auction price when nouners bid their values and the arbitrageur drops out at `b`.
    pub fn expected_price(&self, b: T, n: usize) -> Result<T> {
        let probs = self.order_stat_probs(b.max(T::zero()), n)?;
        let b = self.clamp(b);
        Ok(self.second_upper_partial(b, n) + probs.p_between * b + self.max_lower_partial(b, n))
    }

    /// `dE[p]/db = n F(b)^(n-1) (1 - F(b))`, nonnegative everywhere.
    pub fn expected_price_derivative(&self, b: T, n: usize) -> Result<T> {
        Ok(self.order_stat_probs(b.max(T::zero()), n)?.p_between)
    }

    /// Unconditional means of the highest and second-highest of `n` draws.
    pub fn expected_order_stats(&self, n: usize) -> Result<(T, T)> {
        check_n(n)?;
        Ok((
            self.max_lower_partial(self.v_bar, n),
            self.second_upper_partial(T::zero(), n),
        ))
    }

    /// Cumulative integrals of `F^n` and `n F^(n-1) (1 - F)` for the truncated normal.
    fn table(&self, n: usize) -> Rc<CdfTable> {
        let key = [
            self.v_bar.as_f64(),
            match self.family {
                ValuationFamily::TruncatedNormal { mean, .. } => mean.as_f64(),
                ValuationFamily::Uniform => 0.0,
            },
            match self.family {
                ValuationFamily::TruncatedNormal { sd, .. } => sd.as_f64(),
                ValuationFamily::Uniform => 0.0,
            },
        ];
        TABLES.with(|cell| {
            let mut tables = cell.borrow_mut();
            if let Some(t) = tables.iter().find(|t| t.key == key && t.n == n) {
                return Rc::clone(t);
            }
            let table = Rc::new(CdfTable::build(key, n));
            if tables.len() >= TABLE_CACHE {
                tables.remove(0);
            }
            tables.push(Rc::clone(&table));
            table
        })
    }

    /// One valuation draw by inversion of a uniform variate.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u: f64 = rng.random();
        match self.family {
            ValuationFamily::Uniform => T::lit(u) * self.v_bar,
            ValuationFamily::TruncatedNormal { .. } => self.quantile(T::lit(u)),
        }
    }
}
