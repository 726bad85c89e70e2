//! Finite-difference gradient checking in f64.

#![allow(dead_code)]

use cortex_align::nn::{Module, Param};
use cortex_align::{RngStream, Tensor};

pub const STEP: f64 = 1e-5;
/// Analytic gradients at or below this are treated as exact zeros.
pub const ZERO_GRADIENT: f64 = 1e-12;
/// Bound on `|fd|` for coordinates whose analytic gradient is zero.
pub const INVARIANT_BOUND: f64 = 1e-9;
/// Attempts at drawing a coordinate whose probe does not cross a ReLU kink.
const DRAWS: usize = 20;
pub const TOLERANCE: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug)]
pub struct Check {
    pub coords: usize,
    pub max_rel: f64,
    pub worst: String,
    /// Probes dropped because `x +/- h` changed the ReLU pattern.
    pub kinked: usize,
    /// Coordinates with a zero analytic gradient, checked against
    /// `INVARIANT_BOUND` instead of by relative error.
    pub invariant: usize,
    pub invariant_ok: bool,
}

impl Default for Check {
    fn default() -> Self {
        Check {
            coords: 0,
            max_rel: 0.0,
            worst: String::new(),
            kinked: 0,
            invariant: 0,
            invariant_ok: true,
        }
    }
}

impl Check {
    fn record(&mut self, analytic: f64, numeric: f64, what: impl FnOnce() -> String) {
        self.coords += 1;
        let e = rel_err(analytic, numeric);
        if e >= self.max_rel {
            self.max_rel = e;
            self.worst = format!("{} (analytic {analytic:.6e}, numeric {numeric:.6e})", what());
        }
    }

    pub fn merge(&mut self, other: Check) {
        if other.max_rel >= self.max_rel {
            self.max_rel = other.max_rel;
            self.worst = other.worst;
        }
        self.coords += other.coords;
        self.kinked += other.kinked;
        self.invariant += other.invariant;
        self.invariant_ok &= other.invariant_ok;
    }

    pub fn passed(&self) -> bool {
        self.coords + self.invariant > 0 && self.max_rel < TOLERANCE && self.invariant_ok
    }
}

pub fn random_tensor(dims: &[usize], rng: &mut RngStream) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.normal())
}

/// Sign pattern of every ReLU input for the given module and input.
pub type KinkFn<'a, M> = &'a dyn Fn(&M, &Tensor<f64>) -> Vec<bool>;

/// Optional refinements of a gradient check.
pub struct Options<'a, M> {
    pub kinks: Option<KinkFn<'a, M>>,
}

impl<M> Default for Options<'_, M> {
    fn default() -> Self {
        Options { kinks: None }
    }
}

/// Compares analytic gradients of `loss` against central differences.
///
/// `run(m, x, backward)` must return the scalar loss and, when `backward`
/// is set, leave parameter gradients in `m` and return the input gradient
/// (or `None` to skip probing the input). Up to `per_tensor` coordinates of
/// the input and of each parameter are probed; perturbations are applied in
/// place and undone.
pub fn gradcheck<M: Module<f64>>(
    m: &mut M,
    x: &Tensor<f64>,
    per_tensor: usize,
    rng: &mut RngStream,
    run: impl Fn(&mut M, &Tensor<f64>, bool) -> (f64, Option<Tensor<f64>>),
) -> Check {
    gradcheck_with(m, x, per_tensor, rng, run, &Options::default())
}

struct Probe {
    analytic: f64,
    numeric: f64,
    kinked: bool,
}

pub fn gradcheck_with<M: Module<f64>>(
    m: &mut M,
    x: &Tensor<f64>,
    per_tensor: usize,
    rng: &mut RngStream,
    run: impl Fn(&mut M, &Tensor<f64>, bool) -> (f64, Option<Tensor<f64>>),
    opts: &Options<M>,
) -> Check {
    m.zero_grad();
    let (_, gx) = run(m, x, true);
    let grads: Vec<Vec<f64>> = m.params().iter().map(|p| p.grad.data().to_vec()).collect();
    let base = opts.kinks.map(|k| k(m, x));
    let mut check = Check::default();

    // `target` None is the input, Some(p) the p-th parameter tensor.
    let probe = |m: &mut M, target: Option<usize>, i: usize, analytic: f64| -> Probe {
        let mut xp = x.clone();
        let mut eval = |m: &mut M, delta: f64| -> (f64, bool) {
            match target {
                None => {
                    xp.data_mut()[i] = x.data()[i] + delta;
                }
                Some(p) => *coord(m, p, i) += delta,
            }
            let loss = run(m, &xp, false).0;
            let kinked = match (opts.kinks, &base) {
                (Some(k), Some(b)) => &k(m, &xp) != b,
                _ => false,
            };
            if let Some(p) = target {
                *coord(m, p, i) -= delta;
            }
            (loss, kinked)
        };
        let orig = target.map(|p| *coord(m, p, i));
        let (plus, k1) = eval(m, STEP);
        let (minus, k2) = eval(m, -STEP);
        if let (Some(p), Some(o)) = (target, orig) {
            *coord(m, p, i) = o;
        }
        Probe {
            analytic,
            numeric: (plus - minus) / (2.0 * STEP),
            kinked: k1 || k2,
        }
    };

    let mut targets: Vec<(Option<usize>, usize)> = Vec::new();
    if gx.is_some() {
        targets.push((None, x.len()));
    }
    targets.extend(grads.iter().enumerate().map(|(p, g)| (Some(p), g.len())));
    for (target, len) in targets {
        let analytic = |i: usize| match target {
            None => gx.as_ref().unwrap().data()[i],
            Some(p) => grads[p][i],
        };
        let name = |i: usize| match target {
            None => format!("input[{i}]"),
            Some(p) => format!("param {p}[{i}]"),
        };
        let exhaustive = len <= per_tensor;
        let wanted = if exhaustive { len } else { per_tensor };
        let mut next = 0;
        for _ in 0..wanted {
            for _ in 0..if exhaustive { 1 } else { DRAWS } {
                let i = if exhaustive { next } else { rng.below(len) };
                next += 1;
                let pr = probe(m, target, i, analytic(i));
                if pr.kinked {
                    check.kinked += 1;
                    continue;
                }
                if pr.analytic.abs() <= ZERO_GRADIENT {
                    check.invariant += 1;
                    if pr.numeric.abs() > INVARIANT_BOUND {
                        check.invariant_ok = false;
                        check.worst = format!("{} has zero analytic gradient but numeric {:.3e}", name(i), pr.numeric);
                    }
                } else {
                    check.record(pr.analytic, pr.numeric, || name(i));
                }
                break;
            }
        }
    }
    check
}

fn coord<M: Module<f64>>(m: &mut M, p: usize, i: usize) -> &mut f64 {
    let param: &mut Param<f64> = m.params_mut().into_iter().nth(p).expect("parameter index");
    &mut param.value.data_mut()[i]
}

/// `sum(w * y)`, the projection loss used to drive arbitrary output gradients.
pub fn project(w: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    assert_eq!(w.dims(), y.dims());
    w.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}
