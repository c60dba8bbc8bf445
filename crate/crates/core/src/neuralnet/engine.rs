//! Fixed-architecture compute engine: positional encoding, forward pass
//! with a reusable tape, and exact reverse-mode gradients.
//!
//! All math runs in f64; parameters are stored as f32 at the module
//! boundary and upcast once per call. Every operation is per-sample
//! (layer norm included), so batched evaluation is bit-identical to
//! evaluating samples one at a time.

use super::{Activation, NetworkArch};

pub(crate) const LN_EPSILON: f64 = 1e-5;

/// Flat-parameter offsets for one residual block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockLayout {
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub ln1_g: usize,
    pub ln1_s: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
    pub ln2_g: usize,
    pub ln2_s: usize,
}

/// Offsets of every tensor inside the flattened parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub input_w: usize,
    pub input_b: usize,
    pub blocks: Vec<BlockLayout>,
    pub output_w: usize,
    pub output_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn of(arch: &NetworkArch) -> Layout {
        let enc = arch.encoded_width();
        let (inter, intra) = (arch.inter_width, arch.intra_width);
        let mut pos = 0usize;
        let mut take = |len: usize| {
            let at = pos;
            pos += len;
            at
        };
        let input_w = take(inter * enc);
        let input_b = take(inter);
        let mut blocks = Vec::with_capacity(arch.residual_blocks);
        for _ in 0..arch.residual_blocks {
            let fc1_w = take(intra * inter);
            let fc1_b = take(intra);
            let (ln1_g, ln1_s) = if arch.layer_norm {
                (take(intra), take(intra))
            } else {
                (usize::MAX, usize::MAX)
            };
            let fc2_w = take(inter * intra);
            let fc2_b = take(inter);
            let (ln2_g, ln2_s) = if arch.layer_norm {
                (take(inter), take(inter))
            } else {
                (usize::MAX, usize::MAX)
            };
            blocks.push(BlockLayout {
                fc1_w,
                fc1_b,
                ln1_g,
                ln1_s,
                fc2_w,
                fc2_b,
                ln2_g,
                ln2_s,
            });
        }
        let output_w = take(arch.output_dim * inter);
        let output_b = take(arch.output_dim);
        Layout {
            input_w,
            input_b,
            blocks,
            output_w,
            output_b,
            total: pos,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct BlockTape {
    h1: Vec<f64>,       // fc1 output, pre-normalization
    xhat1: Vec<f64>,    // normalized fc1 output
    rstd1: Vec<f64>,    // per-sample 1/std
    l1: Vec<f64>,       // activation input
    c: Vec<f64>,        // activation output
    h2: Vec<f64>,       // fc2 output, pre-normalization
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    pre_relu: Vec<f64>, // residual sum before the block-output ReLU
    a_out: Vec<f64>,    // block output
}

/// Reusable forward/backward buffers for up to `capacity` samples.
#[derive(Debug, Clone)]
pub struct Tape {
    n: usize,
    enc: Vec<f64>,
    a0: Vec<f64>,
    blocks: Vec<BlockTape>,
    z: Vec<f64>,
    out: Vec<f64>,
    // backward scratch
    s_inter1: Vec<f64>,
    s_inter2: Vec<f64>,
    s_intra1: Vec<f64>,
    s_intra2: Vec<f64>,
    d_z: Vec<f64>,
}

impl Tape {
    pub fn new(arch: &NetworkArch, capacity: usize) -> Tape {
        let enc_w = arch.encoded_width();
        let (inter, intra) = (arch.inter_width, arch.intra_width);
        let block = BlockTape {
            h1: vec![0.0; capacity * intra],
            xhat1: vec![0.0; capacity * intra],
            rstd1: vec![0.0; capacity],
            l1: vec![0.0; capacity * intra],
            c: vec![0.0; capacity * intra],
            h2: vec![0.0; capacity * inter],
            xhat2: vec![0.0; capacity * inter],
            rstd2: vec![0.0; capacity],
            pre_relu: vec![0.0; capacity * inter],
            a_out: vec![0.0; capacity * inter],
        };
        Tape {
            n: 0,
            enc: vec![0.0; capacity * enc_w],
            a0: vec![0.0; capacity * inter],
            blocks: vec![block; arch.residual_blocks],
            z: vec![0.0; capacity * arch.output_dim],
            out: vec![0.0; capacity * arch.output_dim],
            s_inter1: vec![0.0; capacity * inter],
            s_inter2: vec![0.0; capacity * inter],
            s_intra1: vec![0.0; capacity * intra],
            s_intra2: vec![0.0; capacity * intra],
            d_z: vec![0.0; capacity * arch.output_dim],
        }
    }

    pub fn sample_count(&self) -> usize {
        self.n
    }
}

/// out[i][o] = b[o] + sum_k w[o][k] * input[i][k]
fn linear_forward(
    w: &[f64],
    b: &[f64],
    input: &[f64],
    out: &mut [f64],
    n: usize,
    in_w: usize,
    out_w: usize,
) {
    for i in 0..n {
        let irow = &input[i * in_w..(i + 1) * in_w];
        let orow = &mut out[i * out_w..(i + 1) * out_w];
        for (o, slot) in orow.iter_mut().enumerate() {
            let wrow = &w[o * in_w..(o + 1) * in_w];
            let mut acc = b[o];
            for (wk, ik) in wrow.iter().zip(irow) {
                acc += wk * ik;
            }
            *slot = acc;
        }
    }
}

/// dw[o][k] += sum_i dout[i][o] * input[i][k]; db[o] += sum_i dout[i][o]
fn linear_weight_grad(
    dout: &[f64],
    input: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    n: usize,
    in_w: usize,
    out_w: usize,
) {
    for i in 0..n {
        let drow = &dout[i * out_w..(i + 1) * out_w];
        let irow = &input[i * in_w..(i + 1) * in_w];
        for (o, &g) in drow.iter().enumerate() {
            db[o] += g;
            if g != 0.0 {
                let wrow = &mut dw[o * in_w..(o + 1) * in_w];
                for (wk, ik) in wrow.iter_mut().zip(irow) {
                    *wk += g * ik;
                }
            }
        }
    }
}

/// din[i][k] = sum_o w[o][k] * dout[i][o]
fn linear_input_grad(
    w: &[f64],
    dout: &[f64],
    din: &mut [f64],
    n: usize,
    in_w: usize,
    out_w: usize,
) {
    for i in 0..n {
        let drow = &dout[i * out_w..(i + 1) * out_w];
        let dirow = &mut din[i * in_w..(i + 1) * in_w];
        dirow.fill(0.0);
        for (o, &g) in drow.iter().enumerate() {
            if g != 0.0 {
                let wrow = &w[o * in_w..(o + 1) * in_w];
                for (dk, wk) in dirow.iter_mut().zip(wrow) {
                    *dk += g * wk;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_forward(
    gain: &[f64],
    shift: &[f64],
    input: &[f64],
    xhat: &mut [f64],
    rstd: &mut [f64],
    out: &mut [f64],
    n: usize,
    w: usize,
) {
    for i in 0..n {
        let row = &input[i * w..(i + 1) * w];
        let mean = row.iter().sum::<f64>() / w as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w as f64;
        let r = 1.0 / (var + LN_EPSILON).sqrt();
        rstd[i] = r;
        let xr = &mut xhat[i * w..(i + 1) * w];
        let or = &mut out[i * w..(i + 1) * w];
        for j in 0..w {
            let xh = (row[j] - mean) * r;
            xr[j] = xh;
            or[j] = gain[j] * xh + shift[j];
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    gain: &[f64],
    dout: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    din: &mut [f64],
    dgain: &mut [f64],
    dshift: &mut [f64],
    n: usize,
    w: usize,
) {
    for i in 0..n {
        let dor = &dout[i * w..(i + 1) * w];
        let xr = &xhat[i * w..(i + 1) * w];
        let dir = &mut din[i * w..(i + 1) * w];
        let r = rstd[i];
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for j in 0..w {
            let dg = dor[j] * gain[j];
            s1 += dg;
            s2 += dg * xr[j];
            dgain[j] += dor[j] * xr[j];
            dshift[j] += dor[j];
        }
        let inv_w = 1.0 / w as f64;
        for j in 0..w {
            dir[j] = r * (dor[j] * gain[j] - s1 * inv_w - xr[j] * s2 * inv_w);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Engine {
    arch: NetworkArch,
    pub(crate) layout: Layout,
}

impl Engine {
    pub fn new(arch: &NetworkArch) -> Engine {
        Engine {
            arch: arch.clone(),
            layout: Layout::of(arch),
        }
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.arch
    }

    pub fn param_len(&self) -> usize {
        self.layout.total
    }

    /// Positional-encodes normalized coordinates into `out`.
    pub fn encode_into(&self, coords: &[f64], n: usize, out: &mut [f64]) {
        let levels = self.arch.component_levels();
        let in_w = self.arch.input_dim;
        let enc_w = self.arch.encoded_width();
        debug_assert_eq!(coords.len(), n * in_w);
        for i in 0..n {
            let row = &coords[i * in_w..(i + 1) * in_w];
            let orow = &mut out[i * enc_w..(i + 1) * enc_w];
            let mut at = 0usize;
            for (comp, &lv) in row.iter().zip(&levels) {
                debug_assert!(comp.abs() <= 1.0 + 1e-9, "unnormalized coordinate {comp}");
                orow[at] = *comp;
                at += 1;
                let mut freq = std::f64::consts::PI;
                for _ in 0..lv {
                    let arg = freq * comp;
                    orow[at] = arg.sin();
                    orow[at + 1] = arg.cos();
                    at += 2;
                    freq *= 2.0;
                }
            }
            debug_assert_eq!(at, enc_w);
        }
    }

    /// Forward pass from normalized coordinates (encoding fused in).
    pub fn forward(&self, params: &[f64], coords: &[f64], n: usize, tape: &mut Tape) {
        let enc_w = self.arch.encoded_width();
        {
            let enc = &mut tape.enc[..n * enc_w];
            self.encode_into(coords, n, enc);
        }
        self.forward_from_tape_enc(params, n, tape);
    }

    /// Forward pass from already-encoded inputs.
    pub fn forward_encoded(&self, params: &[f64], encoded: &[f64], n: usize, tape: &mut Tape) {
        let enc_w = self.arch.encoded_width();
        debug_assert_eq!(encoded.len(), n * enc_w);
        tape.enc[..n * enc_w].copy_from_slice(encoded);
        self.forward_from_tape_enc(params, n, tape);
    }

    fn forward_from_tape_enc(&self, params: &[f64], n: usize, tape: &mut Tape) {
        debug_assert_eq!(params.len(), self.layout.total);
        let arch = &self.arch;
        let (inter, intra) = (arch.inter_width, arch.intra_width);
        let enc_w = arch.encoded_width();
        let lay = &self.layout;
        tape.n = n;

        linear_forward(
            &params[lay.input_w..lay.input_w + inter * enc_w],
            &params[lay.input_b..lay.input_b + inter],
            &tape.enc[..n * enc_w],
            &mut tape.a0[..n * inter],
            n,
            enc_w,
            inter,
        );

        for (b, bl) in lay.blocks.iter().enumerate() {
            // split_at_mut keeps the borrow checker happy about reading the
            // previous block's output while writing the current block
            let (done, rest) = tape.blocks.split_at_mut(b);
            let bt = &mut rest[0];
            let a_in: &[f64] = if b == 0 {
                &tape.a0[..n * inter]
            } else {
                &done[b - 1].a_out[..n * inter]
            };

            linear_forward(
                &params[bl.fc1_w..bl.fc1_w + intra * inter],
                &params[bl.fc1_b..bl.fc1_b + intra],
                a_in,
                &mut bt.h1[..n * intra],
                n,
                inter,
                intra,
            );
            if arch.layer_norm {
                let h1 = &bt.h1[..n * intra];
                // l1 = LN(h1)
                layer_norm_forward(
                    &params[bl.ln1_g..bl.ln1_g + intra],
                    &params[bl.ln1_s..bl.ln1_s + intra],
                    h1,
                    &mut bt.xhat1[..n * intra],
                    &mut bt.rstd1[..n],
                    &mut bt.l1[..n * intra],
                    n,
                    intra,
                );
            } else {
                bt.l1[..n * intra].copy_from_slice(&bt.h1[..n * intra]);
            }
            match arch.core_activation {
                Activation::Relu => {
                    for (c, l) in bt.c[..n * intra].iter_mut().zip(&bt.l1[..n * intra]) {
                        *c = l.max(0.0);
                    }
                }
                Activation::Sine => {
                    let w0 = arch.sine_frequency;
                    for (c, l) in bt.c[..n * intra].iter_mut().zip(&bt.l1[..n * intra]) {
                        *c = (w0 * l).sin();
                    }
                }
            }
            linear_forward(
                &params[bl.fc2_w..bl.fc2_w + inter * intra],
                &params[bl.fc2_b..bl.fc2_b + inter],
                &bt.c[..n * intra],
                &mut bt.h2[..n * inter],
                n,
                intra,
                inter,
            );
            if arch.layer_norm {
                // reuse pre_relu as the LN output buffer before adding the residual
                let h2 = &bt.h2[..n * inter];
                layer_norm_forward(
                    &params[bl.ln2_g..bl.ln2_g + inter],
                    &params[bl.ln2_s..bl.ln2_s + inter],
                    h2,
                    &mut bt.xhat2[..n * inter],
                    &mut bt.rstd2[..n],
                    &mut bt.pre_relu[..n * inter],
                    n,
                    inter,
                );
            } else {
                bt.pre_relu[..n * inter].copy_from_slice(&bt.h2[..n * inter]);
            }
            for ((pr, ai), ao) in bt.pre_relu[..n * inter]
                .iter_mut()
                .zip(a_in)
                .zip(bt.a_out[..n * inter].iter_mut())
            {
                *pr += ai;
                *ao = pr.max(0.0);
            }
        }

        let a_last: &[f64] = if let Some(last) = tape.blocks.last() {
            &last.a_out[..n * inter]
        } else {
            &tape.a0[..n * inter]
        };
        let out_w = arch.output_dim;
        linear_forward(
            &params[lay.output_w..lay.output_w + out_w * inter],
            &params[lay.output_b..lay.output_b + out_w],
            a_last,
            &mut tape.z[..n * out_w],
            n,
            inter,
            out_w,
        );
        for (y, z) in tape.out[..n * out_w].iter_mut().zip(&tape.z[..n * out_w]) {
            *y = 1.0 / (1.0 + (-z).exp());
        }
    }

    /// Network outputs of the most recent forward pass.
    pub fn outputs<'t>(&self, tape: &'t Tape) -> &'t [f64] {
        &tape.out[..tape.n * self.arch.output_dim]
    }

    /// Accumulates dLoss/dParams into `grads` given dLoss/dOutput for the
    /// batch recorded on the tape.
    pub fn backward(&self, params: &[f64], tape: &mut Tape, d_out: &[f64], grads: &mut [f64]) {
        let arch = &self.arch;
        let n = tape.n;
        let (inter, intra) = (arch.inter_width, arch.intra_width);
        let enc_w = arch.encoded_width();
        let out_w = arch.output_dim;
        let lay = &self.layout;
        debug_assert_eq!(d_out.len(), n * out_w);
        debug_assert_eq!(grads.len(), lay.total);

        // through the sigmoid
        for ((dz, &y), &g) in tape.d_z[..n * out_w]
            .iter_mut()
            .zip(&tape.out[..n * out_w])
            .zip(d_out)
        {
            *dz = g * y * (1.0 - y);
        }

        {
            let a_last: &[f64] = if arch.residual_blocks == 0 {
                &tape.a0[..n * inter]
            } else {
                &tape.blocks[arch.residual_blocks - 1].a_out[..n * inter]
            };
            let (dw, db) = two_slices_lens(grads, lay.output_w, out_w * inter, lay.output_b, out_w);
            linear_weight_grad(&tape.d_z[..n * out_w], a_last, dw, db, n, inter, out_w);
        }
        linear_input_grad(
            &params[lay.output_w..lay.output_w + out_w * inter],
            &tape.d_z[..n * out_w],
            &mut tape.s_inter1[..n * inter],
            n,
            inter,
            out_w,
        );
        // s_inter1 now holds d(a_last)

        for b in (0..arch.residual_blocks).rev() {
            let bl = lay.blocks[b];
            let bt = &tape.blocks[b];
            let a_in: &[f64] = if b == 0 {
                &tape.a0[..n * inter]
            } else {
                &tape.blocks[b - 1].a_out[..n * inter]
            };

            // through the block-output ReLU: d_pre stays in s_inter1
            for (d, pr) in tape.s_inter1[..n * inter]
                .iter_mut()
                .zip(&bt.pre_relu[..n * inter])
            {
                if *pr <= 0.0 {
                    *d = 0.0;
                }
            }

            // LN2 (or pass-through) into s_inter2
            if arch.layer_norm {
                let (dg, ds) = two_slices(grads, bl.ln2_g, bl.ln2_s, inter);
                layer_norm_backward(
                    &params[bl.ln2_g..bl.ln2_g + inter],
                    &tape.s_inter1[..n * inter],
                    &bt.xhat2[..n * inter],
                    &bt.rstd2[..n],
                    &mut tape.s_inter2[..n * inter],
                    dg,
                    ds,
                    n,
                    inter,
                );
            } else {
                tape.s_inter2[..n * inter].copy_from_slice(&tape.s_inter1[..n * inter]);
            }

            {
                let (dw, db) = two_slices_lens(grads, bl.fc2_w, inter * intra, bl.fc2_b, inter);
                linear_weight_grad(
                    &tape.s_inter2[..n * inter],
                    &bt.c[..n * intra],
                    dw,
                    db,
                    n,
                    intra,
                    inter,
                );
            }
            linear_input_grad(
                &params[bl.fc2_w..bl.fc2_w + inter * intra],
                &tape.s_inter2[..n * inter],
                &mut tape.s_intra1[..n * intra],
                n,
                intra,
                inter,
            );

            // activation derivative, in place on s_intra1
            match arch.core_activation {
                Activation::Relu => {
                    for (d, l) in tape.s_intra1[..n * intra]
                        .iter_mut()
                        .zip(&bt.l1[..n * intra])
                    {
                        if *l <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                Activation::Sine => {
                    let w0 = arch.sine_frequency;
                    for (d, l) in tape.s_intra1[..n * intra]
                        .iter_mut()
                        .zip(&bt.l1[..n * intra])
                    {
                        *d *= w0 * (w0 * l).cos();
                    }
                }
            }

            if arch.layer_norm {
                let (dg, ds) = two_slices(grads, bl.ln1_g, bl.ln1_s, intra);
                layer_norm_backward(
                    &params[bl.ln1_g..bl.ln1_g + intra],
                    &tape.s_intra1[..n * intra],
                    &bt.xhat1[..n * intra],
                    &bt.rstd1[..n],
                    &mut tape.s_intra2[..n * intra],
                    dg,
                    ds,
                    n,
                    intra,
                );
            } else {
                tape.s_intra2[..n * intra].copy_from_slice(&tape.s_intra1[..n * intra]);
            }

            {
                let (dw, db) = two_slices_lens(grads, bl.fc1_w, intra * inter, bl.fc1_b, intra);
                linear_weight_grad(&tape.s_intra2[..n * intra], a_in, dw, db, n, inter, intra);
            }
            // residual: d(a_in) = d_pre (s_inter1) + W1^T d_h1
            linear_input_grad(
                &params[bl.fc1_w..bl.fc1_w + intra * inter],
                &tape.s_intra2[..n * intra],
                &mut tape.s_inter2[..n * inter],
                n,
                inter,
                intra,
            );
            for (acc, extra) in tape.s_inter1[..n * inter]
                .iter_mut()
                .zip(&tape.s_inter2[..n * inter])
            {
                *acc += extra;
            }
        }

        let (dw, db) = two_slices_lens(grads, lay.input_w, inter * enc_w, lay.input_b, inter);
        linear_weight_grad(
            &tape.s_inter1[..n * inter],
            &tape.enc[..n * enc_w],
            dw,
            db,
            n,
            enc_w,
            inter,
        );
    }
}

/// Two disjoint mutable slices of equal length out of one buffer.
fn two_slices(buf: &mut [f64], a: usize, b: usize, len: usize) -> (&mut [f64], &mut [f64]) {
    two_slices_lens(buf, a, len, b, len)
}

fn two_slices_lens(
    buf: &mut [f64],
    a: usize,
    a_len: usize,
    b: usize,
    b_len: usize,
) -> (&mut [f64], &mut [f64]) {
    assert!(a + a_len <= b, "tensor ranges must be ordered and disjoint");
    let (head, tail) = buf.split_at_mut(b);
    (&mut head[a..a + a_len], &mut tail[..b_len])
}
