use super::{Graph, NumericsError, Tensor, Var};

/// Compares reverse-mode gradients of a scalar function against central
/// differences.
///
/// Returns `max_i |analytic_i − numeric_i| / max(1, |numeric_i|)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, NumericsError>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(NumericsError::Contract(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let eval = |t: Tensor| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let v = g.constant(t);
        let out = f(&mut g, v)?;
        let val = g.value(out);
        if !val.is_scalar() {
            return Err(NumericsError::NonScalarLoss(val.shape().to_vec()));
        }
        let y = val.item();
        if !y.is_finite() {
            return Err(NumericsError::NonFinite(format!("f(x) = {y}")));
        }
        Ok(y)
    };

    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    let y0 = g.value(out);
    if y0.is_scalar() && !y0.item().is_finite() {
        return Err(NumericsError::NonFinite(format!("f(x) = {}", y0.item())));
    }
    let analytic = g.backward(out)?.wrt(v);

    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sum_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, &[3, 5]);
        let err = grad_check(|g, v| Ok(g.sum(v)), &x, 1e-5).unwrap();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn rejects_bad_eps_and_non_finite() {
        let x = Tensor::row_vector(vec![1.0]);
        assert!(grad_check(|g, v| Ok(g.sum(v)), &x, 1e-2).is_err());
        let x = Tensor::row_vector(vec![-1.0]);
        let r = grad_check(|g, v| { let l = g.log(v); Ok(g.sum(l)) }, &x, 1e-5);
        assert!(matches!(r, Err(NumericsError::NonFinite(_))));
    }

    /// Every differentiable op, 20 random points, 64-bit, eps = 1e-5.
    #[test]
    fn every_op_passes_at_random_points() {
        type Case = (&'static str, Vec<usize>, fn(&mut Graph, Var) -> Result<Var, NumericsError>);
        let cases: Vec<Case> = vec![
            ("matmul", vec![3, 4], |g, v| {
                let w = g.constant(Tensor::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.5], vec![-0.7, 0.2], vec![0.4, 0.4]]));
                let p = g.matmul(v, w)?;
                let q = g.mul(p, p)?;
                Ok(g.sum(q))
            }),
            ("matmul_rhs", vec![4, 2], |g, v| {
                let w = g.constant(Tensor::from_rows(&[vec![0.3, -0.2, 0.1, 0.9], vec![0.1, 0.5, -0.3, 0.2]]));
                let p = g.matmul(w, v)?;
                let q = g.tanh(p);
                Ok(g.sum(q))
            }),
            ("softmax", vec![2, 5], |g, v| {
                let s = g.softmax_rows(v);
                let w = g.constant(Tensor::new(vec![2, 5], (0..10).map(|i| i as f64 * 0.1 - 0.3).collect())?);
                let p = g.mul(s, w)?;
                Ok(g.sum(p))
            }),
            ("log_softmax", vec![3, 4], |g, v| {
                let s = g.log_softmax_rows(v);
                let p = g.pick(s, 5)?;
                let q = g.pick(s, 0)?;
                g.add(p, q)
            }),
            ("sigmoid_exp_recip", vec![1, 6], |g, v| {
                let s = g.sigmoid(v);
                let e = g.exp(s);
                let r = g.recip(e);
                Ok(g.sum(r))
            }),
            ("log_sigmoid_log", vec![2, 3], |g, v| {
                let s = g.log_sigmoid(v);
                let t = g.sigmoid(v);
                let l = g.log(t);
                let a = g.add(s, l)?;
                Ok(g.mean(a))
            }),
            ("bias_transpose_concat", vec![1, 3], |g, v| {
                let m = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]));
                let b = g.add_row_bias(m, v)?;
                let t = g.transpose(b);
                let tt = g.transpose(t);
                let c = g.concat_rows(&[tt, v, v])?;
                let r = g.reshape(c, &[1, 12])?;
                let q = g.mul(r, r)?;
                let mr = g.mean_rows(c);
                let s1 = g.sum(q);
                let mq = g.mul(mr, mr)?;
                let s2 = g.sum(mq);
                g.add(s1, s2)
            }),
            ("scale_by_select_max", vec![3, 2], |g, v| {
                let s = g.pick(v, 1)?;
                let sel = g.select_rows(v, &[2, 0, 2])?;
                let sc = g.scale_by(sel, s)?;
                let sq = g.mul(sc, sc)?;
                let mx = g.max(sq);
                let sm = g.sum(sq);
                let k = g.scale(sm, 0.5);
                let k = g.add_const(k, 3.0);
                let sb = g.sub(k, mx)?;
                Ok(g.neg(sb))
            }),
            ("soft_box", vec![1, 4], |g, v| {
                let r = g.soft_box(v, 6, 5, 0.2)?;
                let w = g.constant(Tensor::column((0..30).map(|i| (i % 7) as f64 - 3.0).collect()));
                let p = g.mul(r, w)?;
                Ok(g.sum(p))
            }),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (name, shape, f) in cases {
            for _ in 0..20 {
                let mut x = random(&mut rng, &shape);
                if name == "soft_box" {
                    let d = x.data_mut();
                    d.iter_mut().for_each(|v| *v = 0.5 + 0.4 * *v);
                }
                let err = grad_check(f, &x, 1e-5).unwrap();
                assert!(err < 1e-4, "{name}: {err}");
            }
        }
    }
}
