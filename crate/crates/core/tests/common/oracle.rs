//! Central finite differences of `cross_entropy(forward(model, x), t)`,
//! evaluated in 128-bit binary floating point so that the difference quotient
//! is not swamped by f64 rounding in the loss. Shares no code with the
//! network implementation.

use astro_float::{BigFloat, Consts, RoundingMode};
use nndwl::corpus::FeatureVector;
use nndwl::network::{Gradients, NetworkModel};

const PRECISION: usize = 128;
const RM: RoundingMode = RoundingMode::ToEven;
const EPSILON: f64 = 1e-12;

struct Hp {
    cc: Consts,
}

impl Hp {
    fn new() -> Self {
        Hp {
            cc: Consts::new().expect("astro-float constants"),
        }
    }

    fn num(&self, v: f64) -> BigFloat {
        BigFloat::from_f64(v, PRECISION)
    }

    fn sigmoid(&mut self, x: &BigFloat) -> BigFloat {
        let one = self.num(1.0);
        let e = x.neg().exp(PRECISION, RM, &mut self.cc);
        one.div(&one.add(&e, PRECISION, RM), PRECISION, RM)
    }

    fn clamp(&self, p: BigFloat) -> BigFloat {
        let lo = self.num(EPSILON);
        let hi = self.num(1.0 - EPSILON);
        if p < lo {
            lo
        } else if p > hi {
            hi
        } else {
            p
        }
    }

    fn loss(
        &mut self,
        weights: &[Vec<Vec<BigFloat>>],
        biases: &[Option<Vec<BigFloat>>],
        x: &FeatureVector,
        t: &FeatureVector,
    ) -> BigFloat {
        let mut prev: Vec<BigFloat> = Vec::new();
        for (k, w) in weights.iter().enumerate() {
            let cols = w[0].len();
            let mut next = Vec::with_capacity(cols);
            for j in 0..cols {
                let mut z = match &biases[k] {
                    Some(b) => b[j].clone(),
                    None => self.num(0.0),
                };
                if k == 0 {
                    for &i in x.active() {
                        z = z.add(&w[i][j], PRECISION, RM);
                    }
                } else {
                    for (i, o) in prev.iter().enumerate() {
                        z = z.add(&w[i][j].mul(o, PRECISION, RM), PRECISION, RM);
                    }
                }
                next.push(self.sigmoid(&z));
            }
            prev = next;
        }
        let one = self.num(1.0);
        let mut sum = self.num(0.0);
        for (i, p) in prev.into_iter().enumerate() {
            let p = self.clamp(p);
            let term = if t.contains(i) {
                p.ln(PRECISION, RM, &mut self.cc)
            } else {
                one.sub(&p, PRECISION, RM).ln(PRECISION, RM, &mut self.cc)
            };
            sum = sum.add(&term, PRECISION, RM);
        }
        let v = self.num(t.dim() as f64);
        sum.neg().div(&v, PRECISION, RM)
    }
}

/// Every weight and bias perturbed by `+-step`; returns
/// `(E(w + step) - E(w - step)) / (2 step)` rounded to f64.
pub fn finite_difference_gradient(
    model: &NetworkModel,
    x: &FeatureVector,
    t: &FeatureVector,
    step: f64,
) -> Gradients {
    let mut hp = Hp::new();
    let mut weights: Vec<Vec<Vec<BigFloat>>> = model
        .weights()
        .iter()
        .map(|w| {
            (0..w.rows())
                .map(|i| w.row(i).iter().map(|&v| hp.num(v)).collect())
                .collect()
        })
        .collect();
    let mut biases: Vec<Option<Vec<BigFloat>>> = model
        .biases()
        .iter()
        .map(|b| b.as_ref().map(|b| b.iter().map(|&v| hp.num(v)).collect()))
        .collect();
    let h = hp.num(step);
    let two_h = hp.num(2.0 * step);

    let mut grad = Gradients {
        weights: model
            .weights()
            .iter()
            .map(|w| nndwl::network::Matrix::zeros(w.rows(), w.cols()))
            .collect(),
        biases: model
            .biases()
            .iter()
            .map(|b| b.as_ref().map(|b| vec![0.0; b.len()]))
            .collect(),
    };

    for k in 0..weights.len() {
        for i in 0..weights[k].len() {
            for j in 0..weights[k][i].len() {
                let w0 = weights[k][i][j].clone();
                weights[k][i][j] = w0.add(&h, PRECISION, RM);
                let up = hp.loss(&weights, &biases, x, t);
                weights[k][i][j] = w0.sub(&h, PRECISION, RM);
                let down = hp.loss(&weights, &biases, x, t);
                weights[k][i][j] = w0;
                grad.weights[k].set(i, j, to_f64(&up.sub(&down, PRECISION, RM).div(&two_h, PRECISION, RM)));
            }
        }
        let n = biases[k].as_ref().map_or(0, Vec::len);
        for j in 0..n {
            let b0 = biases[k].as_ref().unwrap()[j].clone();
            biases[k].as_mut().unwrap()[j] = b0.add(&h, PRECISION, RM);
            let up = hp.loss(&weights, &biases, x, t);
            biases[k].as_mut().unwrap()[j] = b0.sub(&h, PRECISION, RM);
            let down = hp.loss(&weights, &biases, x, t);
            biases[k].as_mut().unwrap()[j] = b0;
            grad.biases[k].as_mut().unwrap()[j] =
                to_f64(&up.sub(&down, PRECISION, RM).div(&two_h, PRECISION, RM));
        }
    }
    grad
}

/// High-precision value of the loss itself, for spot checks.
pub fn loss(model: &NetworkModel, x: &FeatureVector, t: &FeatureVector) -> f64 {
    let mut hp = Hp::new();
    let weights: Vec<Vec<Vec<BigFloat>>> = model
        .weights()
        .iter()
        .map(|w| {
            (0..w.rows())
                .map(|i| w.row(i).iter().map(|&v| hp.num(v)).collect())
                .collect()
        })
        .collect();
    let biases: Vec<Option<Vec<BigFloat>>> = model
        .biases()
        .iter()
        .map(|b| b.as_ref().map(|b| b.iter().map(|&v| hp.num(v)).collect()))
        .collect();
    to_f64(&hp.loss(&weights, &biases, x, t))
}

fn to_f64(v: &BigFloat) -> f64 {
    // Decimal round trip: astro-float has no direct f64 conversion.
    let s = format!("{v}");
    s.parse::<f64>()
        .unwrap_or_else(|_| panic!("cannot parse {s} as f64"))
}

/// Largest `|a - n| / max(|a|, |n|)` over all components (0/0 counts as 0).
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients) -> f64 {
    let mut worst: f64 = 0.0;
    let mut visit = |a: f64, n: f64| {
        let diff = (a - n).abs();
        if diff > 0.0 {
            worst = worst.max(diff / a.abs().max(n.abs()));
        }
    };
    for (a, n) in analytic.weights.iter().zip(&numeric.weights) {
        for (&x, &y) in a.as_slice().iter().zip(n.as_slice()) {
            visit(x, y);
        }
    }
    for (a, n) in analytic.biases.iter().zip(&numeric.biases) {
        if let (Some(a), Some(n)) = (a, n) {
            for (&x, &y) in a.iter().zip(n) {
                visit(x, y);
            }
        }
    }
    worst
}
