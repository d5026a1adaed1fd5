//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards
//! visits every node after all of its consumers.

use std::sync::Arc;

use super::{NnError, Result, Tensor};
use crate::signal::{stft_magnitude, stft_magnitude_vjp, subband_widths, AudioBuffer, InterpPlan, SpectrogramConfig};

/// Maps the upstream gradient, the parent values and the node's own value to
/// one gradient per parent (`None` when the parent needs none).
pub type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients for every node reachable from the loss.
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.0.get_mut(v.0).and_then(Option::take)
    }
}

fn shape2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(NnError::ShapeMismatch(format!("{what}: expected rank 2, got {s:?}"))),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None, false)
    }

    /// A value whose gradient is wanted.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Appends an operation with a hand-written backward rule.
    pub fn custom(&mut self, parents: &[Var], value: Tensor, backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, parents.to_vec(), Some(backward), requires_grad)
    }

    /// Scalar node whose gradients with respect to `parents` are already known.
    pub fn scalar_with_grads(&mut self, parents: &[Var], value: f64, grads: Vec<Tensor>) -> Var {
        let grads = Arc::new(grads);
        self.custom(
            parents,
            Tensor::scalar(value),
            Box::new(move |g, _, _| {
                let s = g.item();
                grads.iter().map(|t| Some(t.map(|v| v * s))).collect()
            }),
        )
    }

    fn push(&mut self, value: Tensor, parents: Vec<Var>, backward: Option<BackwardFn>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, parents, backward, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NnError::ShapeMismatch("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut seed = self.nodes[loss.0].value.clone();
        seed.data_mut()[0] = 1.0;
        grads[loss.0] = Some(seed);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (Some(backward), Some(g)) = (&node.backward, grads[i].as_ref()) else { continue };
            let parents: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let parent_grads = backward(g, &parents, &node.value);
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.nodes[p.0].value.shape());
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients(grads))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb)?;
        let out = va.zip_map(vb, |x, y| x + y);
        Ok(self.custom(&[a, b], out, Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb)?;
        let out = va.zip_map(vb, |x, y| x - y);
        Ok(self.custom(&[a, b], out, Box::new(|g, _, _| vec![Some(g.clone()), Some(g.map(|v| -v))])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb)?;
        let out = va.zip_map(vb, |x, y| x * y);
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(|g, p, _| vec![Some(g.zip_map(p[1], |u, y| u * y)), Some(g.zip_map(p[0], |u, x| u * x))]),
        ))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.custom(&[a], out, Box::new(move |g, _, _| vec![Some(g.map(|v| v * c))]))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.custom(&[a], out, Box::new(|g, _, y| vec![Some(g.zip_map(y, |u, t| u * (1.0 - t * t)))]))
    }

    /// `ln(a + eps)`; inputs must stay above `-eps`.
    pub fn log_eps(&mut self, a: Var, eps: f64) -> Var {
        let out = self.value(a).map(|x| (x + eps).ln());
        self.custom(&[a], out, Box::new(move |g, p, _| vec![Some(g.zip_map(p[0], |u, x| u / (x + eps)))]))
    }

    /// Weighted sum of single-element nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(NnError::ShapeMismatch("weighted_sum takes scalars".into()));
            }
            total += w * t.item();
        }
        let weights: Vec<f64> = terms.iter().map(|t| t.1).collect();
        let parents: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.custom(
            &parents,
            Tensor::scalar(total),
            Box::new(move |g, p, _| weights.iter().zip(p).map(|(w, t)| Some(t.map(|_| g.item() * w))).collect()),
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = shape2(self.value(a), "transpose")?;
        let out = transpose_data(self.value(a).data(), r, c);
        Ok(self.custom(
            &[a],
            Tensor::from_rows(c, r, out)?,
            Box::new(move |g, _, _| {
                vec![Some(Tensor::from_rows(r, c, transpose_data(g.data(), c, r)).expect("shape"))]
            }),
        ))
    }

    /// Appends `right` zero columns to a `[rows, cols]` tensor.
    pub fn pad_cols(&mut self, a: Var, right: usize) -> Result<Var> {
        let (r, c) = shape2(self.value(a), "pad_cols")?;
        let src = self.value(a).data();
        let nc = c + right;
        let mut out = vec![0.0; r * nc];
        for i in 0..r {
            out[i * nc..i * nc + c].copy_from_slice(&src[i * c..(i + 1) * c]);
        }
        Ok(self.custom(
            &[a],
            Tensor::from_rows(r, nc, out)?,
            Box::new(move |g, _, _| {
                let d: Vec<f64> = (0..r).flat_map(|i| g.data()[i * nc..i * nc + c].iter().copied()).collect();
                vec![Some(Tensor::from_rows(r, c, d).expect("shape"))]
            }),
        ))
    }

    /// Columns `start..start + len` of a `[rows, cols]` tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = shape2(self.value(a), "slice_cols")?;
        if start + len > c {
            return Err(NnError::ShapeMismatch(format!("slice {start}+{len} of {c} columns")));
        }
        let src = self.value(a).data();
        let out: Vec<f64> = (0..r).flat_map(|i| src[i * c + start..i * c + start + len].iter().copied()).collect();
        Ok(self.custom(
            &[a],
            Tensor::from_rows(r, len, out)?,
            Box::new(move |g, _, _| {
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + len].copy_from_slice(&g.data()[i * len..(i + 1) * len]);
                }
                vec![Some(Tensor::from_rows(r, c, d).expect("shape"))]
            }),
        ))
    }

    /// `[F, a] ++ [F, b] -> [F, a + b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = shape2(self.value(a), "concat_cols")?;
        let (rb, cb) = shape2(self.value(b), "concat_cols")?;
        if ra != rb {
            return Err(NnError::ShapeMismatch(format!("concat rows {ra} vs {rb}")));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let w = ca + cb;
        let mut out = Vec::with_capacity(ra * w);
        for i in 0..ra {
            out.extend_from_slice(&da[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&db[i * cb..(i + 1) * cb]);
        }
        Ok(self.custom(
            &[a, b],
            Tensor::from_rows(ra, w, out)?,
            Box::new(move |g, _, _| {
                let (mut ga, mut gb) = (Vec::with_capacity(ra * ca), Vec::with_capacity(ra * cb));
                for row in g.data().chunks_exact(w) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                vec![
                    Some(Tensor::from_rows(ra, ca, ga).expect("shape")),
                    Some(Tensor::from_rows(ra, cb, gb).expect("shape")),
                ]
            }),
        ))
    }

    /// Endpoint-aligned linear resampling of the rows of a `[T, d]` tensor to `dst` rows.
    pub fn interp_rows(&mut self, a: Var, dst: usize) -> Result<Var> {
        let (t, d) = shape2(self.value(a), "interp_rows")?;
        if t == dst {
            let v = self.value(a).clone();
            return Ok(self.custom(&[a], v, Box::new(|g, _, _| vec![Some(g.clone())])));
        }
        let plan = InterpPlan::new(t, dst)?;
        let out = plan.apply(self.value(a).data(), d);
        Ok(self.custom(
            &[a],
            Tensor::from_rows(dst, d, out)?,
            Box::new(move |g, _, _| {
                vec![Some(Tensor::from_rows(t, d, plan.apply_transpose(g.data(), d)).expect("shape"))]
            }),
        ))
    }

    /// STFT magnitudes `[frames, bins]` of a `[1, L]` waveform.
    pub fn stft_mag(&mut self, a: Var, cfg: SpectrogramConfig, sample_rate: u32) -> Result<Var> {
        let (r, _) = shape2(self.value(a), "stft_mag")?;
        if r != 1 {
            return Err(NnError::ShapeMismatch(format!("stft_mag takes one channel, got {r}")));
        }
        let audio = AudioBuffer::new(self.value(a).data().to_vec(), sample_rate)?;
        let mag = stft_magnitude(&audio, &cfg)?;
        let (f, b) = (mag.frames(), mag.dim());
        Ok(self.custom(
            &[a],
            Tensor::from_rows(f, b, mag.into_data())?,
            Box::new(move |g, p, _| {
                let grid = crate::signal::FeatureGrid::new(g.data().to_vec(), f, b).expect("shape");
                let dx = stft_magnitude_vjp(p[0].data(), &cfg, &grid).expect("validated config");
                let n = dx.len();
                vec![Some(Tensor::from_rows(1, n, dx).expect("shape"))]
            }),
        ))
    }

    /// Mean over each contiguous sub-band of the columns: `[F, bins] -> [F, bands]`.
    pub fn band_mean(&mut self, a: Var, bands: usize) -> Result<Var> {
        let (f, bins) = shape2(self.value(a), "band_mean")?;
        let widths = subband_widths(bins, bands)?;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(f * bands);
        for row in src.chunks_exact(bins) {
            let mut start = 0;
            for &w in &widths {
                out.push(row[start..start + w].iter().sum::<f64>() / w as f64);
                start += w;
            }
        }
        Ok(self.custom(
            &[a],
            Tensor::from_rows(f, bands, out)?,
            Box::new(move |g, _, _| {
                let mut d = Vec::with_capacity(f * bins);
                for row in g.data().chunks_exact(bands) {
                    for (&w, &gv) in widths.iter().zip(row) {
                        d.extend(std::iter::repeat_n(gv / w as f64, w));
                    }
                }
                vec![Some(Tensor::from_rows(f, bins, d).expect("shape"))]
            }),
        ))
    }

    /// 1-D convolution. `x: [C_in, L]`, `w: [C_out, C_in, K]`, `b: [C_out]`;
    /// the input is zero-padded by `pad_l`/`pad_r` before sliding with `stride`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad_l: usize, pad_r: usize) -> Result<Var> {
        let spec = ConvSpec::new(self.value(x), self.value(w), self.value(b), stride)?;
        let padded = spec.len + pad_l + pad_r;
        if padded < spec.k {
            return Err(NnError::ShapeMismatch(format!("input length {} shorter than kernel {}", spec.len, spec.k)));
        }
        let out_len = (padded - spec.k) / stride + 1;
        let out =
            conv1d_forward(&spec, self.value(x).data(), self.value(w).data(), self.value(b).data(), pad_l, out_len);
        Ok(self.custom(
            &[x, w, b],
            Tensor::from_rows(spec.c_out, out_len, out)?,
            Box::new(move |g, p, _| {
                let (gx, gw, gb) = conv1d_backward(&spec, p[0].data(), p[1].data(), g.data(), pad_l, out_len);
                vec![
                    Some(Tensor::from_rows(spec.c_in, spec.len, gx).expect("shape")),
                    Some(Tensor::new(gw, vec![spec.c_out, spec.c_in, spec.k]).expect("shape")),
                    Some(Tensor::new(gb, vec![spec.c_out]).expect("shape")),
                ]
            }),
        ))
    }

    /// Transposed 1-D convolution. `x: [C_in, L]`, `w: [C_in, C_out, K]`; the
    /// full output of length `(L - 1) * stride + K` is cropped to
    /// `crop_l..crop_l + out_len`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        crop_l: usize,
        out_len: usize,
    ) -> Result<Var> {
        let spec = ConvSpec::new_transposed(self.value(x), self.value(w), self.value(b), stride)?;
        let full = (spec.len - 1) * stride + spec.k;
        if crop_l + out_len > full {
            return Err(NnError::ShapeMismatch(format!("crop {crop_l}+{out_len} exceeds transposed length {full}")));
        }
        let out =
            conv_t_forward(&spec, self.value(x).data(), self.value(w).data(), self.value(b).data(), crop_l, out_len);
        Ok(self.custom(
            &[x, w, b],
            Tensor::from_rows(spec.c_out, out_len, out)?,
            Box::new(move |g, p, _| {
                let (gx, gw, gb) = conv_t_backward(&spec, p[0].data(), p[1].data(), g.data(), crop_l, out_len);
                vec![
                    Some(Tensor::from_rows(spec.c_in, spec.len, gx).expect("shape")),
                    Some(Tensor::new(gw, vec![spec.c_in, spec.c_out, spec.k]).expect("shape")),
                    Some(Tensor::new(gb, vec![spec.c_out]).expect("shape")),
                ]
            }),
        ))
    }
}

fn transpose_data(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}

#[derive(Clone, Copy)]
struct ConvSpec {
    c_in: usize,
    c_out: usize,
    k: usize,
    len: usize,
    stride: usize,
}

impl ConvSpec {
    fn new(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<Self> {
        let (c_in, len) = shape2(x, "conv1d input")?;
        let [c_out, wc, k] = w.shape() else {
            return Err(NnError::ShapeMismatch(format!("conv1d weight must be rank 3, got {:?}", w.shape())));
        };
        Self::check(c_in, *wc, *c_out, b, stride, len)?;
        Ok(Self { c_in, c_out: *c_out, k: *k, len, stride })
    }

    fn new_transposed(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<Self> {
        let (c_in, len) = shape2(x, "conv_transpose1d input")?;
        let [wc, c_out, k] = w.shape() else {
            return Err(NnError::ShapeMismatch(format!("conv_transpose1d weight must be rank 3, got {:?}", w.shape())));
        };
        Self::check(c_in, *wc, *c_out, b, stride, len)?;
        Ok(Self { c_in, c_out: *c_out, k: *k, len, stride })
    }

    fn check(c_in: usize, wc: usize, c_out: usize, b: &Tensor, stride: usize, len: usize) -> Result<()> {
        if wc != c_in {
            return Err(NnError::ShapeMismatch(format!("input has {c_in} channels, weight expects {wc}")));
        }
        if b.shape() != [c_out] {
            return Err(NnError::ShapeMismatch(format!("bias {:?} for {c_out} outputs", b.shape())));
        }
        if stride == 0 || len == 0 {
            return Err(NnError::ShapeMismatch("stride and length must be positive".into()));
        }
        Ok(())
    }
}

/// Input index for output `t`, tap `k`, or `None` inside the zero padding.
#[inline]
fn tap(t: usize, k: usize, stride: usize, pad_l: usize, len: usize) -> Option<usize> {
    (t * stride + k).checked_sub(pad_l).filter(|&i| i < len)
}

fn conv1d_forward(s: &ConvSpec, x: &[f64], w: &[f64], b: &[f64], pad_l: usize, out_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; s.c_out * out_len];
    for o in 0..s.c_out {
        let row = &mut out[o * out_len..(o + 1) * out_len];
        row.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..s.c_in {
            let xr = &x[c * s.len..(c + 1) * s.len];
            for k in 0..s.k {
                let wv = w[(o * s.c_in + c) * s.k + k];
                for (t, r) in row.iter_mut().enumerate() {
                    if let Some(i) = tap(t, k, s.stride, pad_l, s.len) {
                        *r += wv * xr[i];
                    }
                }
            }
        }
    }
    out
}

fn conv1d_backward(
    s: &ConvSpec,
    x: &[f64],
    w: &[f64],
    g: &[f64],
    pad_l: usize,
    out_len: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; s.c_in * s.len];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; s.c_out];
    for o in 0..s.c_out {
        let gr = &g[o * out_len..(o + 1) * out_len];
        gb[o] = gr.iter().sum();
        for c in 0..s.c_in {
            let xr = &x[c * s.len..(c + 1) * s.len];
            let gxr = &mut gx[c * s.len..(c + 1) * s.len];
            for k in 0..s.k {
                let wi = (o * s.c_in + c) * s.k + k;
                let mut acc = 0.0;
                for (t, &gv) in gr.iter().enumerate() {
                    if let Some(i) = tap(t, k, s.stride, pad_l, s.len) {
                        acc += gv * xr[i];
                        gxr[i] += gv * w[wi];
                    }
                }
                gw[wi] = acc;
            }
        }
    }
    (gx, gw, gb)
}

fn conv_t_forward(s: &ConvSpec, x: &[f64], w: &[f64], b: &[f64], crop_l: usize, out_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; s.c_out * out_len];
    for o in 0..s.c_out {
        let row = &mut out[o * out_len..(o + 1) * out_len];
        row.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..s.c_in {
            let xr = &x[c * s.len..(c + 1) * s.len];
            for k in 0..s.k {
                let wv = w[(c * s.c_out + o) * s.k + k];
                for (t, &xv) in xr.iter().enumerate() {
                    if let Some(j) = (t * s.stride + k).checked_sub(crop_l).filter(|&j| j < out_len) {
                        row[j] += wv * xv;
                    }
                }
            }
        }
    }
    out
}

fn conv_t_backward(
    s: &ConvSpec,
    x: &[f64],
    w: &[f64],
    g: &[f64],
    crop_l: usize,
    out_len: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; s.c_in * s.len];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; s.c_out];
    for o in 0..s.c_out {
        let gr = &g[o * out_len..(o + 1) * out_len];
        gb[o] = gr.iter().sum();
        for c in 0..s.c_in {
            let xr = &x[c * s.len..(c + 1) * s.len];
            let gxr = &mut gx[c * s.len..(c + 1) * s.len];
            for k in 0..s.k {
                let wi = (c * s.c_out + o) * s.k + k;
                let mut acc = 0.0;
                for t in 0..s.len {
                    if let Some(j) = (t * s.stride + k).checked_sub(crop_l).filter(|&j| j < out_len) {
                        acc += gr[j] * xr[t];
                        gxr[t] += gr[j] * w[wi];
                    }
                }
                gw[wi] = acc;
            }
        }
    }
    (gx, gw, gb)
}
