//! Central finite-difference check of reverse-mode gradients.

use super::{ParamKind, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index (into the checked coordinates) of the worst entry.
    pub worst: usize,
    pub checked: usize,
    pub passed: bool,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Relative-error floor: components smaller than this fraction of the
/// gradient's largest magnitude are compared absolutely against it.
const FLOOR_FRACTION: f64 = 1e-3;

fn summarize(analytic: Vec<f64>, numeric: Vec<f64>, tol: f64) -> Result<GradCheckReport> {
    if let Some(i) = analytic.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("analytic gradient component {i}")));
    }
    if let Some(i) = numeric.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("finite-difference probe of component {i}")));
    }
    let scale = analytic.iter().chain(&numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = FLOOR_FRACTION * scale;
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: 0,
        checked: analytic.len(),
        passed: true,
        analytic,
        numeric,
    };
    for (i, (&a, &n)) in report.analytic.iter().zip(&report.numeric).enumerate() {
        let abs = (a - n).abs();
        let denom = a.abs().max(n.abs()).max(floor);
        let rel = if denom == 0.0 { 0.0 } else { abs / denom };
        report.max_abs_err = report.max_abs_err.max(abs);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = i;
        }
    }
    report.passed = report.max_rel_err < tol;
    Ok(report)
}

fn eval_scalar(tape: &Tape<f64>, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::shape(format!("grad_check needs a scalar function, got {:?}", v.shape())));
    }
    let s = v.data()[0];
    if !s.is_finite() {
        return Err(Error::NonFinite("function value".into()));
    }
    Ok(s)
}

/// Checks the gradient of a scalar function of one tensor.
pub fn grad_check<F>(f: F, input: &Tensor<f64>, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let y = f(&mut tape, x)?;
    eval_scalar(&tape, y)?;
    let grads = tape.backward(y)?;
    let analytic = grads
        .get(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; input.numel()]);

    let mut numeric = Vec::with_capacity(input.numel());
    let mut probe = input.clone();
    for i in 0..input.numel() {
        let orig = probe.data()[i];
        let mut at = |v: f64| -> Result<f64> {
            probe.data_mut()[i] = v;
            let mut t = Tape::new();
            let x = t.leaf(probe.clone());
            let y = f(&mut t, x)?;
            eval_scalar(&t, y)
        };
        let hi = at(orig + eps)?;
        let lo = at(orig - eps)?;
        probe.data_mut()[i] = orig;
        numeric.push((hi - lo) / (2.0 * eps));
    }
    summarize(analytic, numeric, tol)
}

/// Checks gradients of a scalar function with respect to the trainable
/// parameters of `store`. At most `per_param` evenly spaced coordinates of
/// each parameter tensor are probed (`None` probes all of them).
pub fn grad_check_store<F>(
    f: F,
    store: &ParamStore<f64>,
    eps: f64,
    tol: f64,
    per_param: Option<usize>,
) -> Result<(GradCheckReport, Vec<(String, usize)>)>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let y = f(&mut tape, &work)?;
    eval_scalar(&tape, y)?;
    tape.backward_into(y, &mut work)?;

    let mut coords = Vec::new();
    for id in store.ids() {
        if store.kind(id) != ParamKind::Trainable {
            continue;
        }
        let n = store.tensor(id).numel();
        let take = per_param.map_or(n, |k| k.min(n));
        for j in 0..take {
            coords.push((id, j * n / take.max(1)));
        }
    }

    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    let mut labels = Vec::with_capacity(coords.len());
    let mut probe = store.clone();
    for &(id, j) in &coords {
        analytic.push(work.tensor(id).grad().expect("trainable")[j]);
        let orig = probe.tensor(id).data()[j];
        let mut at = |v: f64| -> Result<f64> {
            probe.tensor_mut(id).data_mut()[j] = v;
            let mut t = Tape::new();
            let y = f(&mut t, &probe)?;
            eval_scalar(&t, y)
        };
        let hi = at(orig + eps)?;
        let lo = at(orig - eps)?;
        probe.tensor_mut(id).data_mut()[j] = orig;
        numeric.push((hi - lo) / (2.0 * eps));
        labels.push((store.name(id).to_string(), j));
    }
    Ok((summarize(analytic, numeric, tol)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ConvSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn sum_of_squares() {
        let x = random(&[3, 4], 1);
        let r = grad_check(
            |t, x| {
                let s = t.square(x);
                Ok(t.sum(s))
            },
            &x,
            1e-5,
            1e-7,
        )
        .unwrap();
        assert!(r.passed, "{}", r.max_rel_err);
        for (a, v) in r.analytic.iter().zip(x.data()) {
            assert!((a - 2.0 * v).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = random(&[5], 2);
        let r = grad_check(
            |t, x| {
                let z = t.scale(x, 0.0);
                let s = t.sum(z);
                Ok(t.add_scalar(s, 3.0))
            },
            &x,
            1e-6,
            1e-7,
        )
        .unwrap();
        assert!(r.analytic.iter().all(|&g| g == 0.0));
        assert!(r.passed);
    }

    #[test]
    fn non_finite_is_reported() {
        let x = Tensor::full(&[2], 1e60);
        let err = grad_check(
            |t, x| {
                let s = t.square(x);
                let s = t.square(s);
                let s = t.square(s);
                Ok(t.sum(s))
            },
            &x,
            1e-6,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    fn check(f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>, shape: &[usize], seed: u64) {
        let x = random(shape, seed);
        let r = grad_check(f, &x, 1e-6, 1e-6).unwrap();
        assert!(r.passed, "rel err {} at {}", r.max_rel_err, r.worst);
    }

    /// Weighted sum with fixed random weights so every output position matters.
    fn wsum(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
        let w = random(t.shape(y), seed);
        let z = t.mul_const(y, &w)?;
        Ok(t.sum(z))
    }

    #[test]
    fn conv_and_deconv_gradients() {
        let w = random(&[3, 2, 3, 3], 10);
        check(
            |t, x| {
                let wv = t.leaf(w.clone());
                let y = t.conv2d(x, wv, ConvSpec::conv(2, 3, 3, 2, 1))?;
                wsum(t, y, 11)
            },
            &[2, 2, 5, 5],
            12,
        );
        let x0 = random(&[1, 2, 6, 6], 13);
        check(
            |t, w| {
                let x = t.constant(x0.clone());
                let y = t.conv2d(x, w, ConvSpec::conv(2, 3, 3, 1, 1))?;
                wsum(t, y, 14)
            },
            &[3, 2, 3, 3],
            15,
        );
        let wd = random(&[2, 3, 4, 4], 16);
        check(
            |t, x| {
                let wv = t.constant(wd.clone());
                let y = t.deconv2d(x, wv, ConvSpec::deconv(2, 3, 4, 2, 1))?;
                wsum(t, y, 17)
            },
            &[1, 2, 3, 3],
            18,
        );
        let xd = random(&[1, 2, 3, 3], 19);
        check(
            |t, w| {
                let x = t.constant(xd.clone());
                let y = t.deconv2d(x, w, ConvSpec::deconv(2, 3, 4, 2, 1))?;
                wsum(t, y, 20)
            },
            &[2, 3, 4, 4],
            21,
        );
    }

    #[test]
    fn batch_norm_gradients() {
        let gamma = random(&[3], 30).map(|v| v + 1.5);
        let beta = random(&[3], 31);
        check(
            |t, x| {
                let g = t.leaf(gamma.clone());
                let b = t.leaf(beta.clone());
                let (y, _, _) = t.batch_norm(x, g, b, None, 1e-5)?;
                wsum(t, y, 32)
            },
            &[2, 3, 3, 3],
            33,
        );
        check(
            |t, g| {
                let x = t.constant(random(&[1, 3, 4, 4], 34));
                let b = t.leaf(beta.clone());
                let (y, _, _) = t.batch_norm(x, g, b, Some((&[0.1, -0.2, 0.3], &[1.0, 0.5, 2.0])), 1e-5)?;
                wsum(t, y, 35)
            },
            &[3],
            36,
        );
    }

    #[test]
    fn elementwise_gradients() {
        check(|t, x| { let y = t.sigmoid(x); wsum(t, y, 40) }, &[2, 3, 2, 2], 41);
        check(|t, x| { let y = t.softplus(x); wsum(t, y, 42) }, &[2, 3, 2, 2], 43);
        check(|t, x| { let y = t.relu(x); wsum(t, y, 44) }, &[2, 3, 2, 2], 45);
        check(|t, x| { let y = t.softmax(x, 1)?; wsum(t, y, 46) }, &[2, 3, 2, 2], 47);
        check(|t, x| { let y = t.reduce_mean(x, 1)?; wsum(t, y, 48) }, &[2, 3, 2, 2], 49);
        check(|t, x| { let y = t.global_max(x)?; wsum(t, y, 50) }, &[2, 3, 3, 3], 51);
        check(|t, x| { let y = t.global_avg(x)?; wsum(t, y, 52) }, &[2, 3, 3, 3], 53);
        check(|t, x| { let y = t.max_pool(x, 2, 2)?; wsum(t, y, 54) }, &[1, 2, 4, 4], 55);
        check(|t, x| { let y = t.avg_pool(x, 2, 1)?; wsum(t, y, 56) }, &[1, 2, 4, 4], 57);
        check(|t, x| { let y = t.pad_replicate(x, 2)?; wsum(t, y, 58) }, &[1, 2, 3, 3], 59);
        check(
            |t, x| {
                let a = t.global_avg(x)?;
                let y = t.mul(a, x)?;
                let z = t.add(y, a)?;
                let z = t.sub(z, x)?;
                let c = t.concat(&[z, x], 1)?;
                wsum(t, c, 60)
            },
            &[2, 3, 2, 2],
            61,
        );
    }
}
