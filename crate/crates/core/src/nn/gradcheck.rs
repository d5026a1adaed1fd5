use super::{Graph, NnError, Result, Tensor, Var};

/// Denominator floor of [`relative_error`].
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Largest relative error between the analytic gradient returned by `f` at
/// `x` and central differences with `h = 1e-5 * (1 + |x_i|)`.
pub fn grad_check(f: impl Fn(&[f64]) -> Result<(f64, Vec<f64>)>, x: &[f64]) -> Result<f64> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(NnError::NonFiniteValue(format!("point coordinate {i}")));
    }
    let (value, analytic) = f(x)?;
    if !value.is_finite() || analytic.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFiniteValue("function value or gradient".into()));
    }
    if analytic.len() != x.len() {
        return Err(NnError::ShapeMismatch(format!("{} gradient entries for {} coordinates", analytic.len(), x.len())));
    }
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let h = 1e-5 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let plus = f(&probe)?.0;
        probe[i] = x[i] - h;
        let minus = f(&probe)?.0;
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NnError::NonFiniteValue(format!("value near coordinate {i}")));
        }
        worst = worst.max(relative_error(analytic[i], (plus - minus) / (2.0 * h)));
    }
    Ok(worst)
}

/// [`grad_check`] for a tape computation of a scalar from one input tensor.
pub fn grad_check_graph(build: impl Fn(&mut Graph, Var) -> Result<Var>, x: &Tensor) -> Result<f64> {
    let shape = x.shape().to_vec();
    grad_check(
        |p| {
            let mut g = Graph::new();
            let v = g.leaf(Tensor::new(p.to_vec(), shape.clone())?);
            let out = build(&mut g, v)?;
            let grads = g.backward(out)?;
            let grad = grads.get(v).map_or_else(|| vec![0.0; p.len()], |t| t.data().to_vec());
            Ok((g.value(out).item(), grad))
        },
        x.data(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Reduces any tensor to a scalar through fixed random weights.
    pub(crate) fn project(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
        let t = g.value(v);
        let w = Tensor::new(random(t.len(), seed), t.shape().to_vec())?;
        let c = g.constant(w);
        let prod = g.mul(v, c)?;
        let ones = g.value(prod).map(|_| 1.0);
        let s: f64 = g.value(prod).data().iter().sum();
        Ok(g.scalar_with_grads(&[prod], s, vec![ones]))
    }

    #[test]
    fn linear_map_is_exact() {
        let w = random(10, 1);
        let err = grad_check(|x| Ok((x.iter().zip(&w).map(|(a, b)| a * b).sum(), w.clone())), &random(10, 2)).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn tanh_composition() {
        let x = Tensor::from_rows(2, 5, random(10, 3)).unwrap();
        let err = grad_check_graph(
            |g, v| {
                let a = g.tanh(v);
                let b = g.scale(a, 1.7);
                let c = g.tanh(b);
                let d = g.mul(c, a)?;
                project(g, d, 4)
            },
            &x,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn non_finite_point_is_rejected() {
        assert!(matches!(grad_check(|x| Ok((x[0], vec![1.0])), &[f64::NAN]), Err(NnError::NonFiniteValue(_))));
    }

    fn tensor(shape: &[usize], seed: u64) -> Tensor {
        Tensor::new(random(shape.iter().product(), seed), shape.to_vec()).unwrap()
    }

    fn check(build: impl Fn(&mut Graph, Var) -> Result<Var>, x: &Tensor) {
        let err = grad_check_graph(build, x).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn conv1d_all_inputs() {
        let x = tensor(&[2, 11], 10);
        let w = tensor(&[3, 2, 4], 11);
        let b = tensor(&[3], 12);
        let (wc, bc, xc) = (w.clone(), b.clone(), x.clone());
        check(
            move |g, v| {
                let (w, b) = (g.constant(wc.clone()), g.constant(bc.clone()));
                let y = g.conv1d(v, w, b, 2, 2, 1)?;
                project(g, y, 13)
            },
            &x,
        );
        check(
            move |g, v| {
                let (x, b) = (g.constant(xc.clone()), g.constant(b.clone()));
                let y = g.conv1d(x, v, b, 2, 2, 1)?;
                project(g, y, 13)
            },
            &w,
        );
        check(
            move |g, v| {
                let (x, w) = (g.constant(x.clone()), g.constant(w.clone()));
                let y = g.conv1d(x, w, v, 2, 2, 1)?;
                project(g, y, 13)
            },
            &tensor(&[3], 12),
        );
    }

    #[test]
    fn conv_transpose1d_all_inputs() {
        let x = tensor(&[2, 5], 20);
        let w = tensor(&[2, 3, 6], 21);
        let b = tensor(&[3], 22);
        let (bc, xc) = (b.clone(), x.clone());
        let (wc2, bc2) = (w.clone(), b.clone());
        check(
            move |g, v| {
                let (w, b) = (g.constant(wc2.clone()), g.constant(bc2.clone()));
                let y = g.conv_transpose1d(v, w, b, 3, 2, 15)?;
                project(g, y, 23)
            },
            &x,
        );
        check(
            move |g, v| {
                let (x, b) = (g.constant(xc.clone()), g.constant(bc.clone()));
                let y = g.conv_transpose1d(x, v, b, 3, 2, 15)?;
                project(g, y, 23)
            },
            &w,
        );
        check(
            move |g, v| {
                let (x, w) = (g.constant(x.clone()), g.constant(w.clone()));
                let y = g.conv_transpose1d(x, w, v, 3, 2, 15)?;
                project(g, y, 23)
            },
            &b,
        );
    }

    #[test]
    fn conv_output_lengths() {
        let mut g = Graph::new();
        let x = g.constant(tensor(&[1, 12], 1));
        let w = g.constant(tensor(&[1, 1, 6], 2));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv1d(x, w, b, 3, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), [1, 4]);
        let wt = g.constant(tensor(&[1, 1, 6], 3));
        let z = g.conv_transpose1d(y, wt, b, 3, 2, 12).unwrap();
        assert_eq!(g.value(z).shape(), [1, 12]);
    }

    /// Single-tap convolution against a hand-computed result.
    #[test]
    fn conv1d_by_hand() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.constant(Tensor::new(vec![1.0, -1.0], vec![1, 1, 2]).unwrap());
        let b = g.constant(Tensor::new(vec![0.5], vec![1]).unwrap());
        let y = g.conv1d(x, w, b, 1, 1, 0).unwrap();
        // padded input [0,1,2,3,4]: differences x[t] - x[t+1]
        assert_eq!(g.value(y).data(), [-0.5, -0.5, -0.5, -0.5]);
        let z = g.conv_transpose1d(x, w, b, 2, 0, 8).unwrap();
        assert_eq!(g.value(z).data(), [1.5, -0.5, 2.5, -1.5, 3.5, -2.5, 4.5, -3.5]);
    }

    #[test]
    fn shape_ops() {
        let x = tensor(&[3, 5], 30);
        check(
            |g, v| {
                let t = g.transpose(v)?;
                project(g, t, 31)
            },
            &x,
        );
        check(
            |g, v| {
                let t = g.pad_cols(v, 3)?;
                project(g, t, 32)
            },
            &x,
        );
        check(
            |g, v| {
                let t = g.slice_cols(v, 1, 3)?;
                project(g, t, 33)
            },
            &x,
        );
        check(
            |g, v| {
                let t = g.interp_rows(v, 7)?;
                project(g, t, 34)
            },
            &x,
        );
        check(
            |g, v| {
                let t = g.interp_rows(v, 2)?;
                project(g, t, 35)
            },
            &x,
        );
        check(
            |g, v| {
                let t = g.concat_cols(v, v)?;
                project(g, t, 36)
            },
            &x,
        );
        check(
            |g, v| {
                let t = g.band_mean(v, 2)?;
                project(g, t, 37)
            },
            &x,
        );
        check(
            |g, v| {
                let t = g.log_eps(v, 1e-5);
                project(g, t, 38)
            },
            &x.map(|v| v + 2.0),
        );
        check(
            |g, v| {
                let a = g.scale(v, -2.5);
                let b = g.sub(a, v)?;
                let c = g.add(b, v)?;
                project(g, c, 39)
            },
            &x,
        );
    }

    #[test]
    fn stft_magnitude_op() {
        let x = tensor(&[1, 64], 40).map(|v| v + 0.3);
        let cfg = crate::signal::SpectrogramConfig {
            n_fft: 16,
            hop: 4,
            window: crate::signal::WindowKind::Hann,
            band_count: 1,
        };
        check(
            move |g, v| {
                let m = g.stft_mag(v, cfg, 16000)?;
                project(g, m, 41)
            },
            &x,
        );
    }
}
