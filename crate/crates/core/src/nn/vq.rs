use std::sync::Arc;

use super::{Binding, Graph, NnError, Result, Tensor, Var};
use crate::codebook::Codebook;
use crate::losses::commitment_loss_with_grad;
use crate::quantizer::{encode_trace, CodecConfig, EncodeTrace};
use crate::signal::{FeatureGrid, InterpPlan};

/// Tape handles produced by the quantization bridge.
#[derive(Debug, Clone)]
pub struct VqOutputs {
    /// `sum_i U_i`; its gradient is copied unchanged onto `E`.
    pub e_hat: Var,
    /// `D_i`: each layer's input at its own length (residual of earlier layers held constant).
    pub layer_inputs: Vec<Var>,
    /// `Q_i`: looked-up projected entries; gradients reach the projection (and unfrozen entries).
    pub quantized: Vec<Var>,
    /// Value `Q_i`, gradient copied to both `D_i` and `Q_i`.
    pub straight_through: Vec<Var>,
    pub trace: EncodeTrace,
}

fn grid_tensor(grid: &FeatureGrid) -> Tensor {
    Tensor::from_rows(grid.frames(), grid.dim(), grid.data().to_vec()).expect("grid shape")
}

/// Runs the residual quantizer on the value of `e` (`[T, d]`) and wires its
/// outputs into the tape. `books` must carry the projections held in `b`.
pub fn vq_bridge(g: &mut Graph, e: Var, cfg: &CodecConfig, books: &[Codebook], b: &Binding) -> Result<VqOutputs> {
    let ev = g.value(e);
    let latent = FeatureGrid::new(ev.data().to_vec(), ev.dim(0), ev.dim(1))?;
    let trace = encode_trace(&latent, cfg, books)?;
    let (frames, d) = (latent.frames(), latent.dim());

    let mut sum = FeatureGrid::zeros(frames, d);
    for u in &trace.upsampled {
        sum = sum.add(u)?;
    }
    let e_hat = g.custom(&[e], grid_tensor(&sum), Box::new(|grad, _, _| vec![Some(grad.clone())]));

    let mut out = VqOutputs { e_hat, layer_inputs: vec![], quantized: vec![], straight_through: vec![], trace };
    for (i, book) in books.iter().enumerate() {
        let input = &out.trace.layer_inputs[i];
        let len = input.frames();
        let plan = if len == frames { None } else { Some(InterpPlan::new(frames, len)?) };
        let d_i = g.custom(
            &[e],
            grid_tensor(input),
            Box::new(move |grad, _, _| {
                let back = match &plan {
                    Some(p) => Tensor::from_rows(frames, d, p.apply_transpose(grad.data(), d)).expect("shape"),
                    None => grad.clone(),
                };
                vec![Some(back)]
            }),
        );
        let q_i = lookup(g, b, i, book, &out.trace.indices[i], &out.trace.quantized[i])?;
        let st = g.custom(
            &[d_i, q_i],
            grid_tensor(&out.trace.quantized[i]),
            Box::new(|grad, _, _| vec![Some(grad.clone()), Some(grad.clone())]),
        );
        out.layer_inputs.push(d_i);
        out.quantized.push(q_i);
        out.straight_through.push(st);
    }
    Ok(out)
}

/// `Q[r] = W * entry[idx[r]] + bias` as a tape node.
fn lookup(g: &mut Graph, b: &Binding, layer: usize, book: &Codebook, idx: &[usize], q: &FeatureGrid) -> Result<Var> {
    let w = b.get(&format!("vq.l{layer}.weight"))?;
    let bias = b.get(&format!("vq.l{layer}.bias"))?;
    let entry_id = format!("vq.l{layer}.entries");
    let entries = if b.has(&entry_id) { Some(b.get(&entry_id)?) } else { None };
    let (dd, d) = (book.entry_dim(), book.dim());
    if g.value(w).shape() != [d, dd] {
        return Err(NnError::ShapeMismatch(format!("projection {:?} for {dd} -> {d}", g.value(w).shape())));
    }
    let rows: Arc<Vec<f64>> = Arc::new(idx.iter().flat_map(|&j| book.entry(j).iter().copied()).collect());
    let idx: Arc<Vec<usize>> = Arc::new(idx.to_vec());
    let n = book.len();
    let mut parents = vec![w, bias];
    parents.extend(entries);
    Ok(g.custom(
        &parents,
        grid_tensor(q),
        Box::new(move |grad, p, _| {
            let mut gw = vec![0.0; d * dd];
            let mut gb = vec![0.0; d];
            let mut ge = if p.len() > 2 { Some(vec![0.0; n * dd]) } else { None };
            for (r, gr) in grad.data().chunks_exact(d).enumerate() {
                let x = &rows[r * dd..(r + 1) * dd];
                for (o, &go) in gr.iter().enumerate() {
                    gb[o] += go;
                    let wrow = &p[0].data()[o * dd..(o + 1) * dd];
                    gw[o * dd..(o + 1) * dd].iter_mut().zip(x).for_each(|(a, xv)| *a += go * xv);
                    if let Some(ge) = &mut ge {
                        let j = idx[r];
                        ge[j * dd..(j + 1) * dd].iter_mut().zip(wrow).for_each(|(a, wv)| *a += go * wv);
                    }
                }
            }
            let mut out = vec![
                Some(Tensor::from_rows(d, dd, gw).expect("shape")),
                Some(Tensor::new(gb, vec![d]).expect("shape")),
            ];
            if let Some(ge) = ge {
                out.push(Some(Tensor::from_rows(n, dd, ge).expect("shape")));
            }
            out
        }),
    ))
}

/// Mean over layers of `mean((D_i - Q_i)^2)`, differentiated on both sides:
/// the encoder is pulled toward its entries and the projection toward the encoder.
pub fn quantization_loss(g: &mut Graph, out: &VqOutputs) -> Result<Var> {
    let layers = out.layer_inputs.len() as f64;
    let mut parents = Vec::new();
    let mut grads = Vec::new();
    let mut total = 0.0;
    for (&d_i, &q_i) in out.layer_inputs.iter().zip(&out.quantized) {
        let to_grid = |t: &Tensor| FeatureGrid::new(t.data().to_vec(), t.dim(0), t.dim(1));
        let (v, gd) = commitment_loss_with_grad(&to_grid(g.value(d_i))?, &to_grid(g.value(q_i))?)?;
        total += v / layers;
        let gd = grid_tensor(&gd).map(|x| x / layers);
        grads.push(gd.map(|x| -x));
        grads.push(gd);
        parents.push(q_i);
        parents.push(d_i);
    }
    Ok(g.scalar_with_grads(&parents, total, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::Projection;
    use crate::nn::ParamStore;

    fn setup(unfrozen: bool) -> (Vec<Codebook>, ParamStore, CodecConfig) {
        let cfg = CodecConfig { sample_rate: 16000, encoder_strides: vec![480], latent_dim: 3, vq_strides: vec![2, 1] };
        let labels: Vec<String> = (0..4).map(|i| format!("t{i}")).collect();
        let entries = vec![1.0, 0.0, 0.5, -1.0, 0.3, 0.0, 0.2, 0.9, -0.4, 0.0, 0.0, 1.1];
        let mut book = Codebook::new(labels, entries, 3).unwrap();
        book.set_frozen(!unfrozen);
        let mut books = vec![book.clone(), book];
        let mut p = ParamStore::new();
        for (i, b) in books.iter_mut().enumerate() {
            let proj = Projection::random(3, 3, 40 + i as u64);
            p.insert(format!("vq.l{i}.weight"), Tensor::from_rows(3, 3, proj.weight.clone()).unwrap());
            p.insert(format!("vq.l{i}.bias"), Tensor::new(vec![0.05, -0.02, 0.01], vec![3]).unwrap());
            if unfrozen {
                p.insert(format!("vq.l{i}.entries"), Tensor::from_rows(4, 3, b.entries().to_vec()).unwrap());
            }
            b.set_projection(Projection { bias: vec![0.05, -0.02, 0.01], ..proj }).unwrap();
        }
        (books, p, cfg)
    }

    fn latent() -> Tensor {
        Tensor::from_rows(3, 3, vec![0.9, 0.1, 0.4, -0.8, 0.2, 0.3, 0.1, 0.7, -0.2]).unwrap()
    }

    #[test]
    fn straight_through_copies_gradient() {
        let (books, p, cfg) = setup(false);
        let mut g = Graph::new();
        let b = p.bind(&mut g, &["vq."]);
        let e = g.leaf(latent());
        let out = vq_bridge(&mut g, e, &cfg, &books, &b).unwrap();
        // L = sum(c * e_hat) has gradient c
        let c = Tensor::from_rows(3, 3, (0..9).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let ce = g.constant(c.clone());
        let prod = g.mul(out.e_hat, ce).unwrap();
        let value: f64 = g.value(prod).data().iter().sum();
        let ones = g.value(prod).map(|_| 1.0);
        let loss = g.scalar_with_grads(&[prod], value, vec![ones]);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(e).unwrap(), &c);
        assert!(!b.has("vq.l0.entries"));
    }

    #[test]
    fn e_hat_matches_quantizer_decode() {
        let (books, p, cfg) = setup(false);
        let mut g = Graph::new();
        let b = p.bind(&mut g, &[]);
        let e = g.constant(latent());
        let out = vq_bridge(&mut g, e, &cfg, &books, &b).unwrap();
        let latent = FeatureGrid::new(latent().into_data(), 3, 3).unwrap();
        let (q, _) = crate::quantizer::encode(&latent, &cfg, &books).unwrap();
        let decoded = crate::quantizer::decode(&q, &cfg, &books).unwrap();
        assert_eq!(g.value(out.e_hat).data(), decoded.data());
    }

    /// Quantization loss as a function of the entries of layer 1 with the assignment held fixed.
    #[test]
    fn unfrozen_entry_gradient_matches_differences() {
        let (books, p, cfg) = setup(true);
        let mut g = Graph::new();
        let b = p.bind(&mut g, &["vq."]);
        let e = g.constant(latent());
        let out = vq_bridge(&mut g, e, &cfg, &books, &b).unwrap();
        let loss = quantization_loss(&mut g, &out).unwrap();
        let grads = g.backward(loss).unwrap();
        let analytic = grads.get(b.get("vq.l1.entries").unwrap()).unwrap().clone();
        let idx = out.trace.indices[1].clone();
        let d1 = out.trace.layer_inputs[1].clone();
        let proj = books[1].projection().clone();
        let other = commitment_loss_with_grad(&out.trace.layer_inputs[0], &out.trace.quantized[0]).unwrap().0;
        let f = |entries: &[f64]| {
            let q: Vec<f64> = idx.iter().flat_map(|&j| proj.apply(&entries[j * 3..j * 3 + 3])).collect();
            let q = FeatureGrid::new(q, d1.frames(), 3).unwrap();
            (other + commitment_loss_with_grad(&d1, &q).unwrap().0) / 2.0
        };
        let base = books[1].entries().to_vec();
        for i in 0..base.len() {
            let h = 1e-5 * (1.0 + base[i].abs());
            let (mut a, mut m) = (base.clone(), base.clone());
            a[i] += h;
            m[i] -= h;
            let num = (f(&a) - f(&m)) / (2.0 * h);
            let an = analytic.data()[i];
            assert!(crate::nn::relative_error(an, num) < 1e-4, "entry {i}: {an} vs {num}");
        }
        // unassigned entries get nothing
        for j in 0..4 {
            if !idx.contains(&j) {
                assert!(analytic.data()[j * 3..j * 3 + 3].iter().all(|&v| v == 0.0));
            }
        }
    }
}
