//! Forward and backward passes for the small stride-2 convnet.
//!
//! Layers: a stack of 3x3 stride-2 pad-1 convolutions with ReLU, then
//! global average pooling and a linear head. Convolutions run as
//! im2col + GEMM; the backward pass mirrors it (grad-weight GEMM,
//! grad-input GEMM + col2im scatter). Everything is generic over `f32`
//! (training) and `f64` (the gradient-check path).
//!
//! Determinism: batch members are processed independently (possibly in
//! parallel) and their contributions are reduced strictly in sample order,
//! so results depend only on inputs and parameters, never on scheduling.

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, ArrayView4, Axis, Ix1, Ix2, Ix4};
use num_traits::{Float, FromPrimitive};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::learner::params::ParamStore;
use crate::learner::ConvNetSpec;

/// Element type of the net: f32 for training, f64 for gradient checking.
pub trait Scalar:
    ndarray::LinalgScalar + Float + FromPrimitive + Send + Sync + std::fmt::Debug + 'static
{
}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Output spatial size of one stride-2 pad-1 3x3 stage.
pub fn conv_out_dim(input: usize) -> usize {
    (input - 1) / 2 + 1
}

fn im2col<F: Scalar>(input: &ArrayView3<'_, F>, oh: usize, ow: usize) -> Array2<F> {
    let (ic, ih, iw) = input.dim();
    let mut col = Array2::zeros((ic * 9, oh * ow));
    for c in 0..ic {
        for ky in 0..3 {
            for kx in 0..3 {
                let row_idx = c * 9 + ky * 3 + kx;
                let mut row = col.row_mut(row_idx);
                for oy in 0..oh {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    let base = oy * ow;
                    for ox in 0..ow {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix < 0 || ix >= iw as isize {
                            continue;
                        }
                        row[base + ox] = input[[c, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    col
}

fn col2im<F: Scalar>(
    dcol: &Array2<F>,
    ic: usize,
    ih: usize,
    iw: usize,
    oh: usize,
    ow: usize,
) -> Array3<F> {
    let mut out = Array3::zeros((ic, ih, iw));
    for c in 0..ic {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = dcol.row(c * 9 + ky * 3 + kx);
                for oy in 0..oh {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    let base = oy * ow;
                    for ox in 0..ow {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix < 0 || ix >= iw as isize {
                            continue;
                        }
                        out[[c, iy as usize, ix as usize]] =
                            out[[c, iy as usize, ix as usize]] + row[base + ox];
                    }
                }
            }
        }
    }
    out
}

fn conv_weight_2d<'a, F: Scalar>(params: &'a ParamStore<F>, index: usize) -> ArrayView2<'a, F> {
    let w = params
        .value(index)
        .view()
        .into_dimensionality::<Ix4>()
        .expect("conv weight is 4-dimensional");
    let (oc, ic, _, _) = w.dim();
    w.into_shape_with_order((oc, ic * 9))
        .expect("conv weight is contiguous")
}

fn head_weight<'a, F: Scalar>(params: &'a ParamStore<F>, spec: &ConvNetSpec) -> ArrayView2<'a, F> {
    params
        .value(2 * spec.stages.len())
        .view()
        .into_dimensionality::<Ix2>()
        .expect("head weight is 2-dimensional")
}

/// Everything the backward pass needs from a forward pass: the input of
/// each conv stage (`acts[0]` is the sample itself, `acts[i+1]` the
/// post-ReLU output of stage `i`) and the pooled feature vector.
struct Tape<F> {
    acts: Vec<Array3<F>>,
    feat: Array1<F>,
}

fn forward_sample<F: Scalar>(
    spec: &ConvNetSpec,
    params: &ParamStore<F>,
    x: &ArrayView3<'_, F>,
) -> (Array1<F>, Tape<F>) {
    let mut acts: Vec<Array3<F>> = Vec::with_capacity(spec.stages.len() + 1);
    acts.push(x.to_owned());
    for (i, &oc) in spec.stages.iter().enumerate() {
        let input = acts.last().unwrap();
        let (_, ih, iw) = input.dim();
        let (oh, ow) = (conv_out_dim(ih), conv_out_dim(iw));
        let col = im2col(&input.view(), oh, ow);
        let w2 = conv_weight_2d(params, 2 * i);
        let bias = params.value(2 * i + 1);
        let mut out2 = w2.dot(&col);
        for (mut row, &b) in out2.rows_mut().into_iter().zip(bias.iter()) {
            row.mapv_inplace(|v| {
                let v = v + b;
                if v > F::zero() {
                    v
                } else {
                    F::zero()
                }
            });
        }
        acts.push(
            out2.into_shape_with_order((oc, oh, ow))
                .expect("conv output is contiguous"),
        );
    }

    let last = acts.last().unwrap();
    let (c, oh, ow) = last.dim();
    let inv_area = F::from_usize(oh * ow).unwrap().recip();
    let mut feat = Array1::zeros(c);
    for (slot, plane) in feat.iter_mut().zip(last.axis_iter(Axis(0))) {
        *slot = plane.iter().fold(F::zero(), |acc, &v| acc + v) * inv_area;
    }

    let head_w = head_weight(params, spec);
    let head_b = params
        .value(2 * spec.stages.len() + 1)
        .view()
        .into_dimensionality::<Ix1>()
        .expect("head bias is 1-dimensional");
    let logits = head_w.dot(&feat) + head_b;
    (logits, Tape { acts, feat })
}

fn backward_sample<F: Scalar>(
    spec: &ConvNetSpec,
    params: &ParamStore<F>,
    tape: &Tape<F>,
    dlogits: &Array1<F>,
) -> Vec<ndarray::ArrayD<F>> {
    let n_stages = spec.stages.len();
    let mut grads: Vec<ndarray::ArrayD<F>> =
        vec![ndarray::ArrayD::zeros(ndarray::IxDyn(&[0])); 2 * n_stages + 2];

    // Head: logits = W feat + b.
    let head_w = head_weight(params, spec);
    let g_head_w = dlogits
        .view()
        .insert_axis(Axis(1))
        .dot(&tape.feat.view().insert_axis(Axis(0)));
    grads[2 * n_stages] = g_head_w.into_dyn();
    grads[2 * n_stages + 1] = dlogits.clone().into_dyn();
    let dfeat = head_w.t().dot(dlogits);

    // Global average pool: every spatial position shares the gradient.
    let last = tape.acts.last().unwrap();
    let (c_last, oh, ow) = last.dim();
    let inv_area = F::from_usize(oh * ow).unwrap().recip();
    let mut dout2 = Array2::zeros((c_last, oh * ow));
    for (mut row, &g) in dout2.rows_mut().into_iter().zip(dfeat.iter()) {
        row.fill(g * inv_area);
    }

    for i in (0..n_stages).rev() {
        let input = &tape.acts[i];
        let post = &tape.acts[i + 1];
        let (ic, ih, iw) = input.dim();
        let (oc, soh, sow) = post.dim();

        // ReLU backward off the stored post-activation sign.
        let post2 = post
            .view()
            .into_shape_with_order((oc, soh * sow))
            .expect("activation is contiguous");
        let mut dpre = dout2;
        dpre.zip_mut_with(&post2, |g, &p| {
            if p <= F::zero() {
                *g = F::zero();
            }
        });

        let col = im2col(&input.view(), soh, sow);
        let gw = dpre.dot(&col.t());
        grads[2 * i] = gw
            .into_shape_with_order((oc, ic, 3, 3))
            .expect("conv grad is contiguous")
            .into_dyn();
        grads[2 * i + 1] = dpre.sum_axis(Axis(1)).into_dyn();

        if i == 0 {
            break; // the sample itself needs no gradient
        }
        let w2 = conv_weight_2d(params, 2 * i);
        let dcol = w2.t().dot(&dpre);
        let dinput = col2im(&dcol, ic, ih, iw, soh, sow);
        dout2 = dinput
            .into_shape_with_order((ic, ih * iw))
            .expect("conv grad is contiguous");
    }
    grads
}

fn check_batch<F: Scalar>(spec: &ConvNetSpec, batch: &ArrayView4<'_, F>) -> Result<()> {
    let (_, c, h, w) = batch.dim();
    if (c, h, w) != spec.input {
        return Err(Error::ShapeMismatch(format!(
            "batch is {c}x{h}x{w} per sample, net expects {}x{}x{}",
            spec.input.0, spec.input.1, spec.input.2
        )));
    }
    Ok(())
}

/// Batch forward: `(n, c, h, w)` to `(n, n_classes)` logits.
/// Deterministic given parameters and input; errors on non-finite logits.
pub fn forward<F: Scalar>(
    spec: &ConvNetSpec,
    params: &ParamStore<F>,
    batch: &ArrayView4<'_, F>,
) -> Result<Array2<F>> {
    check_batch(spec, batch)?;
    let n = batch.dim().0;
    let rows: Vec<Array1<F>> = (0..n)
        .into_par_iter()
        .map(|s| forward_sample(spec, params, &batch.index_axis(Axis(0), s)).0)
        .collect();
    let mut logits = Array2::zeros((n, spec.n_classes));
    for (s, row) in rows.into_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logits of sample {s}")));
        }
        logits.row_mut(s).assign(&row);
    }
    Ok(logits)
}

/// Row-wise softmax with the max-subtraction guard.
pub fn softmax_rows<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let mut sum = F::zero();
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum = sum + e;
            e
        });
        let inv = sum.recip();
        row.mapv_inplace(|v| v * inv);
    }
    out
}

fn sample_loss_dlogits<F: Scalar>(logits: &Array1<F>, label: usize) -> (F, Array1<F>) {
    let max = logits.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let mut dlogits = logits.clone();
    let mut sum = F::zero();
    dlogits.mapv_inplace(|v| {
        let e = (v - max).exp();
        sum = sum + e;
        e
    });
    let inv = sum.recip();
    dlogits.mapv_inplace(|v| v * inv);
    let loss = sum.ln() + max - logits[label];
    dlogits[label] = dlogits[label] - F::one();
    (loss, dlogits)
}

/// Mean cross-entropy of a batch without gradients. This is the function
/// the finite-difference oracle probes.
pub fn batch_loss<F: Scalar>(
    spec: &ConvNetSpec,
    params: &ParamStore<F>,
    batch: &ArrayView4<'_, F>,
    labels: &[usize],
) -> Result<F> {
    let logits = forward(spec, params, batch)?;
    check_labels(spec, batch.dim().0, labels)?;
    let mut total = F::zero();
    for (s, &label) in labels.iter().enumerate() {
        let (loss, _) = sample_loss_dlogits(&logits.row(s).to_owned(), label);
        total = total + loss;
    }
    Ok(total / F::from_usize(labels.len()).unwrap())
}

fn check_labels(spec: &ConvNetSpec, n: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= spec.n_classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            n_classes: spec.n_classes,
        });
    }
    Ok(())
}

/// Mean cross-entropy and its gradient for every parameter.
///
/// Per-sample passes may run in parallel; the reduction always walks
/// samples in index order. A parameter that never enters the compute path
/// (for example a conv channel whose ReLU is dead across the whole batch)
/// gets an exactly-zero gradient.
pub fn loss_and_grad<F: Scalar>(
    spec: &ConvNetSpec,
    params: &ParamStore<F>,
    batch: &ArrayView4<'_, F>,
    labels: &[usize],
) -> Result<(F, ParamStore<F>)> {
    check_batch(spec, batch)?;
    let n = batch.dim().0;
    check_labels(spec, n, labels)?;

    let per_sample: Vec<(F, Vec<ndarray::ArrayD<F>>)> = (0..n)
        .into_par_iter()
        .map(|s| {
            let x = batch.index_axis(Axis(0), s);
            let (logits, tape) = forward_sample(spec, params, &x);
            let (loss, dlogits) = sample_loss_dlogits(&logits, labels[s]);
            let grads = backward_sample(spec, params, &tape, &dlogits);
            (loss, grads)
        })
        .collect();

    let inv_n = F::from_usize(n).unwrap().recip();
    let mut total_loss = F::zero();
    let mut acc = params.zeros_like();
    for (loss, grads) in &per_sample {
        total_loss = total_loss + *loss;
        for (i, g) in grads.iter().enumerate() {
            acc.value_mut(i).zip_mut_with(g, |a, &b| *a = *a + b);
        }
    }
    total_loss = total_loss * inv_n;
    if !total_loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    for i in 0..acc.len() {
        acc.value_mut(i).mapv_inplace(|v| v * inv_n);
    }
    Ok((total_loss, acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array4, IxDyn};

    fn micro_spec() -> ConvNetSpec {
        ConvNetSpec {
            input: (1, 8, 8),
            stages: vec![3, 4],
            n_classes: 8,
        }
    }

    fn zero_params(spec: &ConvNetSpec) -> ParamStore<f32> {
        let init: ParamStore<f32> = ParamStore::init(spec, 0).unwrap();
        let mut zeros = init.zeros_like();
        for i in 0..zeros.len() {
            zeros.value_mut(i).fill(0.0);
        }
        zeros
    }

    #[test]
    fn zero_net_zero_input_gives_zero_logits() {
        let spec = micro_spec();
        let params = zero_params(&spec);
        let batch = Array4::<f32>::zeros((2, 1, 8, 8));
        let logits = forward(&spec, &params, &batch.view()).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_samples_share_logits() {
        let spec = micro_spec();
        let params: ParamStore<f32> = ParamStore::init(&spec, 7).unwrap();
        let sample = Array3::from_shape_fn((1, 8, 8), |(_, y, x)| ((y * 8 + x) as f32).sin());
        let mut batch = Array4::zeros((3, 1, 8, 8));
        for s in 0..3 {
            batch.index_axis_mut(Axis(0), s).assign(&sample);
        }
        let logits = forward(&spec, &params, &batch.view()).unwrap();
        assert_eq!(logits.row(0), logits.row(1));
        assert_eq!(logits.row(0), logits.row(2));
    }

    #[test]
    fn identity_kernel_conv_matches_hand_computation() {
        // One stage, one channel, identity kernel (center tap only):
        // stride-2 output (oy, ox) = input(2 oy, 2 ox).
        let spec = ConvNetSpec {
            input: (1, 4, 4),
            stages: vec![1],
            n_classes: 2,
        };
        let mut params: ParamStore<f32> = ParamStore::init(&spec, 0).unwrap();
        params.value_mut(0).fill(0.0);
        params.value_mut(0)[IxDyn(&[0, 0, 1, 1])] = 1.0;
        let x = Array3::from_shape_fn((1, 4, 4), |(_, y, x)| (y * 4 + x) as f32 + 1.0);
        let (_, tape) = forward_sample(&spec, &params, &x.view());
        let map = &tape.acts[1];
        assert_eq!(map.dim(), (1, 2, 2));
        assert_eq!(map[[0, 0, 0]], x[[0, 0, 0]]);
        assert_eq!(map[[0, 0, 1]], x[[0, 0, 2]]);
        assert_eq!(map[[0, 1, 0]], x[[0, 2, 0]]);
        assert_eq!(map[[0, 1, 1]], x[[0, 2, 2]]);
        assert_eq!(
            tape.feat[0],
            (x[[0, 0, 0]] + x[[0, 0, 2]] + x[[0, 2, 0]] + x[[0, 2, 2]]) / 4.0
        );
    }

    #[test]
    fn uniform_logits_loss_is_ln_n() {
        // Zero parameters give uniform logits over the 8 classes.
        let spec = micro_spec();
        let params = zero_params(&spec);
        let batch = Array4::<f32>::zeros((4, 1, 8, 8));
        let loss = batch_loss(&spec, &params, &batch.view(), &[0, 3, 5, 7]).unwrap();
        assert!((loss - 2.079_441_5).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let logits =
            Array2::from_shape_fn((5, 8), |(r, c)| ((r * 31 + c * 17) as f32).sin() * 10.0);
        let probs = softmax_rows(&logits);
        for row in probs.rows() {
            let sum: f32 = row.sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn dead_channel_gets_exactly_zero_gradient() {
        let spec = ConvNetSpec {
            input: (1, 8, 8),
            stages: vec![2, 3],
            n_classes: 4,
        };
        let mut params: ParamStore<f32> = ParamStore::init(&spec, 3).unwrap();
        // All-positive weights on non-negative input keep every unit alive...
        for i in 0..params.len() {
            params.value_mut(i).fill(0.1);
        }
        // ...except channel 0 of stage 0, killed by a huge negative bias.
        params.value_mut(1)[IxDyn(&[0])] = -1e6;
        let batch = Array4::from_shape_fn((2, 1, 8, 8), |(s, _, y, x)| {
            ((s + y * 8 + x) as f32 * 0.11).sin().abs()
        });
        let (_, grads) = loss_and_grad(&spec, &params, &batch.view(), &[1, 2]).unwrap();
        let gw = grads.by_name("conv0.weight").unwrap();
        assert!(gw.index_axis(Axis(0), 0).iter().all(|&g| g == 0.0));
        assert_eq!(grads.by_name("conv0.bias").unwrap()[IxDyn(&[0])], 0.0);
        // The other channel still learns.
        assert!(gw.index_axis(Axis(0), 1).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn batch_reorder_changes_loss_only_within_tolerance() {
        let spec = micro_spec();
        let params: ParamStore<f32> = ParamStore::init(&spec, 5).unwrap();
        let batch = Array4::from_shape_fn((6, 1, 8, 8), |(s, _, y, x)| {
            ((s * 64 + y * 8 + x) as f32 * 0.07).sin()
        });
        let labels = [0usize, 1, 2, 3, 4, 5];
        let (loss, _) = loss_and_grad(&spec, &params, &batch.view(), &labels).unwrap();

        let order = [5usize, 3, 0, 2, 4, 1];
        let mut shuffled = Array4::zeros(batch.raw_dim());
        let mut shuffled_labels = [0usize; 6];
        for (dst, &src) in order.iter().enumerate() {
            shuffled
                .index_axis_mut(Axis(0), dst)
                .assign(&batch.index_axis(Axis(0), src));
            shuffled_labels[dst] = labels[src];
        }
        let (loss2, _) = loss_and_grad(&spec, &params, &shuffled.view(), &shuffled_labels).unwrap();
        assert!(((loss - loss2) / loss).abs() < 1e-6, "{loss} vs {loss2}");
    }

    #[test]
    fn rejects_bad_labels_and_shapes() {
        let spec = micro_spec();
        let params: ParamStore<f32> = ParamStore::init(&spec, 1).unwrap();
        let batch = Array4::<f32>::zeros((2, 1, 8, 8));
        assert!(matches!(
            loss_and_grad(&spec, &params, &batch.view(), &[0, 8]),
            Err(Error::LabelOutOfRange { label: 8, .. })
        ));
        assert!(loss_and_grad(&spec, &params, &batch.view(), &[0]).is_err());
        let wrong = Array4::<f32>::zeros((2, 1, 9, 8));
        assert!(matches!(
            forward(&spec, &params, &wrong.view()),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
