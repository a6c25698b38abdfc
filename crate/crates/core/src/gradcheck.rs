//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{ConvParams, Graph, ShuffleDirection, Var};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Finite-difference formula for the numeric derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`
    Central(f64),
    /// `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`, exact up to quartics.
    FivePoint(f64),
    /// Central, switching to five points for elements whose central
    /// estimate is off by more than [`REFINE_ABOVE`].
    Adaptive(f64),
}

/// Relative error above which [`Stencil::Adaptive`] adds the `±2h` points.
pub const REFINE_ABOVE: f64 = TOLERANCE / 10.0;

impl Stencil {
    fn step(self) -> f64 {
        match self {
            Stencil::Central(h) | Stencil::FivePoint(h) | Stencil::Adaptive(h) => h,
        }
    }

    fn refines(self, rel: f64) -> bool {
        match self {
            Stencil::Central(_) => false,
            Stencil::FivePoint(_) => true,
            Stencil::Adaptive(_) => rel > REFINE_ABOVE,
        }
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index where `max_rel_error` occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Compares the graph's gradient of `f` against central differences for
/// every element of every parameter in `store`, calling `f` afresh for
/// each perturbed evaluation.
///
/// `f` must be deterministic. The relative error of one element is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_gradcheck<F>(store: &mut ParamStore<f64>, eps: f64, mut f: F) -> Result<GradcheckReport>
where
    F: FnMut(&Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    analytic_grads(store, &mut f)?;
    compare(store, Stencil::Central(eps), |store, _| {
        let g = Graph::inference();
        let loss = f(&g, store)?;
        Ok(g.value(loss).item())
    })
}

/// Same comparison as [`finite_diff_gradcheck`], but `f` is traced once and
/// each perturbed evaluation replays only the operations downstream of the
/// perturbed parameter.
pub fn taped_gradcheck<F>(store: &mut ParamStore<f64>, stencil: Stencil, mut f: F) -> Result<GradcheckReport>
where
    F: FnMut(&Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    analytic_grads(store, &mut f)?;
    let tape = Graph::new();
    let loss = f(&tape, store)?;
    let mut current: Option<(ParamId, Vec<usize>)> = None;
    compare(store, stencil, |store, id| {
        if current.as_ref().map(|c| c.0) != Some(id) {
            if let Some((_, order)) = &current {
                tape.replay(order, store)?;
            }
            current = Some((id, tape.dependents(id)));
        }
        let order = &current.as_ref().unwrap().1;
        tape.replay(order, store)?;
        Ok(tape.value(loss).item())
    })
}

fn analytic_grads<F>(store: &mut ParamStore<f64>, f: &mut F) -> Result<()>
where
    F: FnMut(&Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grads();
    let g = Graph::new();
    let loss = f(&g, store)?;
    g.backward(loss, store)
}

fn compare<F>(store: &mut ParamStore<f64>, stencil: Stencil, mut eval: F) -> Result<GradcheckReport>
where
    F: FnMut(&ParamStore<f64>, ParamId) -> Result<f64>,
{
    let mut report = GradcheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    let ids: Vec<ParamId> = store.iter().map(|p| p.id()).collect();
    for id in ids {
        let analytic = store.grad(id).data().to_vec();
        let name = store.get(id).name().to_string();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = store.value(id).data()[i];
            let h = stencil.step();
            let mut diff = |k: f64| -> Result<f64> {
                store.get_mut(id).value.data_mut()[i] = orig + k * h;
                let fp = eval(store, id)?;
                store.get_mut(id).value.data_mut()[i] = orig - k * h;
                let fm = eval(store, id)?;
                Ok((fp - fm) / (2.0 * k * h))
            };
            let central = diff(1.0)?;
            let mut numeric = central;
            if stencil.refines(rel_error(a, central)) {
                numeric = (4.0 * central - diff(2.0)?) / 3.0;
            }
            store.get_mut(id).value.data_mut()[i] = orig;
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::NonFinite { param: name, index: i });
            }
            let rel = rel_error(a, numeric);
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct CheckCase {
    pub name: String,
    pub report: GradcheckReport,
}

pub(crate) fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Checks `op` with every input registered as a parameter, through the
/// scalar loss `sum(op(inputs) ⊙ r)` for a fixed random `r`.
pub fn check_op<F>(name: &str, inputs: Vec<Tensor<f64>>, seed: u64, op: F) -> Result<CheckCase>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("{name}.in{i}"), t))
        .collect::<Result<_>>()?;
    let out_shape = {
        let g = Graph::inference();
        let vars: Vec<_> = ids.iter().map(|&id| g.param(store.get(id))).collect();
        g.shape(op(&g, &vars)?)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let weights = random_tensor(&mut rng, &out_shape, -1.0, 1.0);
    let report = finite_diff_gradcheck(&mut store, DEFAULT_EPS, |g, store| {
        let vars: Vec<_> = ids.iter().map(|&id| g.param(store.get(id))).collect();
        let out = op(g, &vars)?;
        let r = g.constant(weights.clone());
        Ok(g.sum(g.mul(out, r)?))
    })?;
    Ok(CheckCase { name: name.to_string(), report })
}

/// Gradient checks for every differentiable tensor operator.
pub fn operator_suite(seed: u64) -> Result<Vec<CheckCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| random_tensor(&mut rng, shape, -1.0, 1.0);
    let mut cases = Vec::new();

    cases.push(check_op("conv2d", vec![r(&[2, 4, 5, 6]), r(&[6, 2, 3, 3]), r(&[6])], seed, |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), ConvParams::new(2, 1, 2))
    })?);
    cases.push(check_op("conv2d_depthwise", vec![r(&[1, 3, 5, 5]), r(&[3, 1, 3, 3])], seed, |g, v| {
        g.conv2d(v[0], v[1], None, ConvParams::new(1, 1, 3))
    })?);
    cases.push(check_op("conv2d_pointwise", vec![r(&[2, 3, 4, 4]), r(&[5, 3, 1, 1]), r(&[5])], seed, |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), ConvParams::new(1, 0, 1))
    })?);
    cases.push(check_op("add", vec![r(&[2, 3]), r(&[2, 3])], seed, |g, v| g.add(v[0], v[1]))?);
    cases.push(check_op("sub", vec![r(&[2, 3]), r(&[2, 3])], seed, |g, v| g.sub(v[0], v[1]))?);
    cases.push(check_op("mul", vec![r(&[2, 3]), r(&[2, 3])], seed, |g, v| g.mul(v[0], v[1]))?);
    let denom = r(&[2, 3]).map(|x| x.signum() * (x.abs() + 0.5));
    cases.push(check_op("div", vec![r(&[2, 3]), denom], seed, |g, v| g.div(v[0], v[1]))?);
    cases.push(check_op("scalar_mul", vec![r(&[5])], seed, |g, v| Ok(g.scalar_mul(v[0], -1.7)))?);
    cases.push(check_op("scalar_add", vec![r(&[5])], seed, |g, v| Ok(g.scalar_add(v[0], 0.3)))?);
    cases.push(check_op("gelu", vec![r(&[3, 7]).map(|x| 3.0 * x)], seed, |g, v| Ok(g.gelu(v[0])))?);
    cases.push(check_op("softmax", vec![r(&[2, 4, 3]).map(|x| 2.0 * x)], seed, |g, v| g.softmax(v[0], 1))?);
    cases.push(check_op("global_avg_pool", vec![r(&[2, 3, 4, 5])], seed, |g, v| g.global_avg_pool(v[0]))?);
    cases.push(check_op("layer_norm_channels", vec![r(&[2, 5, 3, 3]), r(&[5])], seed, |g, v| {
        g.layer_norm_channels(v[0], v[1])
    })?);
    cases.push(check_op("bilinear_resize_up", vec![r(&[1, 2, 3, 4])], seed, |g, v| g.bilinear_resize(v[0], 7, 9))?);
    cases.push(check_op("bilinear_resize_down", vec![r(&[1, 2, 8, 6])], seed, |g, v| g.bilinear_resize(v[0], 3, 4))?);
    cases.push(check_op("pixel_shuffle_down", vec![r(&[1, 2, 4, 6])], seed, |g, v| {
        g.pixel_shuffle(v[0], 2, ShuffleDirection::Down)
    })?);
    cases.push(check_op("pixel_shuffle_up", vec![r(&[1, 8, 2, 3])], seed, |g, v| {
        g.pixel_shuffle(v[0], 2, ShuffleDirection::Up)
    })?);
    cases.push(check_op("concat_channels", vec![r(&[2, 2, 3, 3]), r(&[2, 1, 3, 3])], seed, |g, v| {
        g.concat_channels(&[v[0], v[1]])
    })?);
    cases.push(check_op("slice_channels", vec![r(&[2, 5, 2, 2])], seed, |g, v| g.slice_channels(v[0], 1, 3))?);
    cases.push(check_op("matmul", vec![r(&[2, 3, 4]), r(&[2, 4, 5])], seed, |g, v| g.matmul(v[0], v[1]))?);
    cases.push(check_op("transpose_last2", vec![r(&[2, 3, 4])], seed, |g, v| g.transpose_last2(v[0]))?);
    cases.push(check_op("reshape", vec![r(&[2, 3, 4])], seed, |g, v| g.reshape(v[0], &[6, 4]))?);
    cases.push(check_op("l2_normalize_last", vec![r(&[3, 6])], seed, |g, v| g.l2_normalize_last(v[0]))?);
    cases.push(check_op("scale_batches", vec![r(&[4, 2, 3]), r(&[2])], seed, |g, v| g.scale_batches(v[0], v[1]))?);
    cases.push(check_op("mean", vec![r(&[3, 4])], seed, |g, v| Ok(g.mean(v[0])))?);
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_closed_form() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap()).unwrap();
        let report = finite_diff_gradcheck(&mut store, DEFAULT_EPS, |g, s| {
            let v = g.param(s.get(p));
            Ok(g.sum(g.mul(v, v)?))
        })
        .unwrap();
        assert_eq!(store.grad(p).data(), &[2.0, 4.0]);
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.checked, 2);
    }

    #[test]
    fn taped_matches_fresh_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(&mut rng, &[2, 4, 4, 4], -1.0, 1.0)).unwrap();
        let w = store.add("w", random_tensor(&mut rng, &[4, 1, 3, 3], -1.0, 1.0)).unwrap();
        let gamma = store.add("gamma", random_tensor(&mut rng, &[4], 0.5, 1.5)).unwrap();
        let s = store.add("s", random_tensor(&mut rng, &[2], 0.5, 1.5)).unwrap();
        let f = |g: &Graph<f64>, st: &ParamStore<f64>| {
            let (x, w) = (g.param(st.get(x)), g.param(st.get(w)));
            let h = g.conv2d(x, w, None, ConvParams::new(1, 1, 4))?;
            let h = g.gelu(g.layer_norm_channels(h, g.param(st.get(gamma)))?);
            let h = g.pixel_shuffle(h, 2, ShuffleDirection::Down)?;
            let h = g.pixel_shuffle(h, 2, ShuffleDirection::Up)?;
            let h = g.bilinear_resize(g.concat_channels(&[h, x])?, 3, 5)?;
            let h = g.slice_channels(g.scalar_add(g.scalar_mul(h, 0.7), 0.1), 2, 4)?;
            let m = g.reshape(h, &[2, 4, 15])?;
            let m = g.l2_normalize_last(m)?;
            let a = g.softmax(g.matmul(m, g.transpose_last2(m)?)?, 2)?;
            let a = g.scale_batches(a, g.param(st.get(s)))?;
            let pooled = g.global_avg_pool(g.reshape(a, &[2, 4, 2, 2])?)?;
            let q = g.div(g.sub(pooled, g.scalar_mul(pooled, 0.5))?, g.scalar_add(g.mul(pooled, pooled)?, 1.0))?;
            g.add(g.mean(q), g.sum(g.mul(a, a)?))
        };
        let fresh = finite_diff_gradcheck(&mut store.clone(), DEFAULT_EPS, f).unwrap();
        let taped = taped_gradcheck(&mut store.clone(), Stencil::Central(DEFAULT_EPS), f).unwrap();
        assert_eq!(fresh, taped);
        let five = taped_gradcheck(&mut store, Stencil::FivePoint(1e-3), f).unwrap();
        assert!(five.passed(), "{five:?}");
        assert!(taped.passed(), "{taped:?}");
    }

    #[test]
    fn five_point_exact_for_quartic() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::from_f64(&[2], &[0.5, -1.5]).unwrap()).unwrap();
        let report = taped_gradcheck(&mut store, Stencil::FivePoint(0.25), |g, s| {
            let v = g.param(s.get(p));
            let v2 = g.mul(v, v)?;
            Ok(g.sum(g.mul(v2, v2)?))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-12, "{report:?}");
        let central = taped_gradcheck(&mut store, Stencil::Central(0.25), |g, s| {
            let v = g.param(s.get(p));
            let v2 = g.mul(v, v)?;
            Ok(g.sum(g.mul(v2, v2)?))
        })
        .unwrap();
        assert!(central.max_rel_error > 1e-3);
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::from_f64(&[3], &[0.1, 0.2, 0.3]).unwrap()).unwrap();
        let report = finite_diff_gradcheck(&mut store, DEFAULT_EPS, |g, s| {
            let v = g.param(s.get(p));
            let zero = g.scalar_mul(v, 0.0);
            Ok(g.scalar_add(g.sum(zero), 4.0))
        })
        .unwrap();
        assert!(store.grad(p).data().iter().all(|&v| v == 0.0));
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn non_finite_reported_with_location() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::from_f64(&[2], &[0.0, 1.0]).unwrap()).unwrap();
        store.add("q", Tensor::from_f64(&[1], &[0.5]).unwrap()).unwrap();
        let err = finite_diff_gradcheck(&mut store, DEFAULT_EPS, |g, s| {
            let v = g.param(s.get(p));
            let one = g.constant(Tensor::ones(&[2]));
            Ok(g.sum(g.div(one, v)?))
        })
        .unwrap_err();
        match err {
            Error::NonFinite { param, index } => assert_eq!((param.as_str(), index), ("p", 0)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap()).unwrap();
        let mut calls = 0;
        let report = finite_diff_gradcheck(&mut store, DEFAULT_EPS, |g, s| {
            calls += 1;
            let v = g.param(s.get(p));
            // the analytic pass sees sum(v), the perturbed evaluations sum(v³)
            if calls == 1 {
                Ok(g.sum(v))
            } else {
                Ok(g.sum(g.mul(g.mul(v, v)?, v)?))
            }
        })
        .unwrap();
        assert!(!report.passed());
    }
}
