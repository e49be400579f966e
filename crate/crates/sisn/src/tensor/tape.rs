//! Gradient tape: records forward operations, replays them backward.

use crate::error::{Result, SisnError};

use super::Tensor;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf { requires_grad: bool },
    Conv2d { x: Var, w: Var, b: Var, padding: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var, broadcast: bool },
    GlobalAvgPool { x: Var },
    RSoftmax { x: Var, splits: usize },
    PixelShuffle { x: Var, scale: usize },
    Relu { x: Var },
    L1Loss { pred: Var, target: Var },
    SumAll { x: Var },
    NarrowChannels { x: Var, start: usize },
    TileChannels { x: Var, reps: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations in topological order; `backward` accumulates exactly
/// one gradient per recorded tensor.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input tensor. Gradients flow to it iff `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let requires_grad = t.requires_grad;
        self.push(t.clone(), Op::Leaf { requires_grad })
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { requires_grad: false })
    }

    /// 2-D convolution, stride 1, zero padding. `w` is C_out×C_in×k×k,
    /// `b` is 1×C_out×1×1.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape, self.value(w).shape);
        let [n, c_in, h, wd] = xs;
        let [c_out, wc_in, k, k2] = ws;
        if wc_in != c_in {
            return Err(SisnError::ShapeMismatch {
                context: "conv2d".into(),
                expected: format!("input with {wc_in} channels (kernel {ws:?})"),
                got: format!("input shape {xs:?}"),
            });
        }
        if k != k2 || padding != k / 2 {
            return Err(SisnError::InvalidInput(format!(
                "conv2d requires square kernel with padding k/2, got k={k}x{k2} padding={padding}"
            )));
        }
        if self.value(b).shape != [1, c_out, 1, 1] {
            return Err(SisnError::ShapeMismatch {
                context: "conv2d bias".into(),
                expected: format!("[1, {c_out}, 1, 1]"),
                got: format!("{:?}", self.value(b).shape),
            });
        }
        let mut out = Tensor::zeros([n, c_out, h, wd]);
        {
            let xv = &self.value(x).data;
            let wv = &self.value(w).data;
            let bv = &self.value(b).data;
            for ni in 0..n {
                for co in 0..c_out {
                    let bias = bv[co];
                    for y in 0..h {
                        for xo in 0..wd {
                            let mut acc = bias;
                            for ci in 0..c_in {
                                for dy in 0..k {
                                    let iy = y + dy;
                                    if iy < padding || iy - padding >= h {
                                        continue;
                                    }
                                    let iy = iy - padding;
                                    for dx in 0..k {
                                        let ix = xo + dx;
                                        if ix < padding || ix - padding >= wd {
                                            continue;
                                        }
                                        let ix = ix - padding;
                                        acc += wv[((co * c_in + ci) * k + dy) * k + dx]
                                            * xv[((ni * c_in + ci) * h + iy) * wd + ix];
                                    }
                                }
                            }
                            out.data[((ni * c_out + co) * h + y) * wd + xo] = acc;
                        }
                    }
                }
            }
        }
        Ok(self.push(out, Op::Conv2d { x, w, b, padding }))
    }

    /// Element-wise sum; shapes must match exactly.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape, self.value(b).shape);
        if sa != sb {
            return Err(SisnError::ShapeMismatch {
                context: "elementwise sum".into(),
                expected: format!("{sa:?}"),
                got: format!("{sb:?}"),
            });
        }
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor { shape: sa, data, requires_grad: false };
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Element-wise product. `b` may be N×C×1×1, broadcast over H×W.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape, self.value(b).shape);
        let broadcast = sb == [sa[0], sa[1], 1, 1] && sb != sa;
        if sa != sb && !broadcast {
            return Err(SisnError::ShapeMismatch {
                context: "elementwise product".into(),
                expected: format!("{sa:?} or [{}, {}, 1, 1]", sa[0], sa[1]),
                got: format!("{sb:?}"),
            });
        }
        let [n, c, h, w] = sa;
        let mut out = Tensor::zeros(sa);
        {
            let av = &self.value(a).data;
            let bv = &self.value(b).data;
            if broadcast {
                for ni in 0..n {
                    for ci in 0..c {
                        let f = bv[ni * c + ci];
                        let base = (ni * c + ci) * h * w;
                        for i in 0..h * w {
                            out.data[base + i] = av[base + i] * f;
                        }
                    }
                }
            } else {
                for (o, (x, y)) in out.data.iter_mut().zip(av.iter().zip(bv)) {
                    *o = x * y;
                }
            }
        }
        Ok(self.push(out, Op::Mul { a, b, broadcast }))
    }

    /// Global average pooling to N×C×1×1.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.value(x).shape;
        let mut out = Tensor::zeros([n, c, 1, 1]);
        let xv = &self.value(x).data;
        let area = (h * w) as f64;
        for nc in 0..n * c {
            let base = nc * h * w;
            out.data[nc] = xv[base..base + h * w].iter().sum::<f64>() / area;
        }
        self.push(out, Op::GlobalAvgPool { x })
    }

    /// Softmax across `splits` channel groups, independently per channel
    /// position within a split. Input is N×C×1×1 with C divisible by
    /// `splits`; channel `k·(C/splits)+j` is the logit of split `k` at
    /// position `j`. Max-subtracted for stability.
    pub fn r_softmax(&mut self, x: Var, splits: usize) -> Result<Var> {
        if splits == 0 {
            return Err(SisnError::InvalidInput("r_softmax requires r >= 1".into()));
        }
        let [n, c, h, w] = self.value(x).shape;
        if (h, w) != (1, 1) || c % splits != 0 {
            return Err(SisnError::ShapeMismatch {
                context: "r_softmax".into(),
                expected: format!("N×C×1×1 with C divisible by {splits}"),
                got: format!("{:?}", self.value(x).shape),
            });
        }
        let per = c / splits;
        let mut out = Tensor::zeros([n, c, 1, 1]);
        let xv = &self.value(x).data;
        for ni in 0..n {
            for j in 0..per {
                let mut max = f64::NEG_INFINITY;
                for k in 0..splits {
                    max = max.max(xv[ni * c + k * per + j]);
                }
                let mut denom = 0.0;
                for k in 0..splits {
                    denom += (xv[ni * c + k * per + j] - max).exp();
                }
                for k in 0..splits {
                    out.data[ni * c + k * per + j] =
                        (xv[ni * c + k * per + j] - max).exp() / denom;
                }
            }
        }
        Ok(self.push(out, Op::RSoftmax { x, splits }))
    }

    /// Sub-pixel rearrangement: N×C×H×W → N×(C/s²)×(sH)×(sW) with
    /// out(c, sh+i, sw+j) = in(c·s²+i·s+j, h, w).
    pub fn pixel_shuffle(&mut self, x: Var, scale: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).shape;
        let s2 = scale * scale;
        if scale == 0 || c % s2 != 0 {
            return Err(SisnError::InvalidInput(format!(
                "pixel_shuffle: channels {c} not divisible by scale^2 = {s2}"
            )));
        }
        let co = c / s2;
        let mut out = Tensor::zeros([n, co, h * scale, w * scale]);
        let xv = &self.value(x).data;
        for ni in 0..n {
            for cc in 0..co {
                for i in 0..scale {
                    for j in 0..scale {
                        let ci = cc * s2 + i * scale + j;
                        for y in 0..h {
                            for xw in 0..w {
                                out.data[((ni * co + cc) * h * scale + y * scale + i) * w * scale
                                    + xw * scale
                                    + j] = xv[((ni * c + ci) * h + y) * w + xw];
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(out, Op::PixelShuffle { x, scale }))
    }

    /// max(x, 0); subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor {
            shape: t.shape,
            data: t.data.iter().map(|v| v.max(0.0)).collect(),
            requires_grad: false,
        };
        self.push(out, Op::Relu { x })
    }

    /// Mean absolute error over all elements; returns a scalar (1×1×1×1).
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (sp, st) = (self.value(pred).shape, self.value(target).shape);
        if sp != st {
            return Err(SisnError::ShapeMismatch {
                context: "l1_loss".into(),
                expected: format!("{sp:?}"),
                got: format!("{st:?}"),
            });
        }
        let count = self.value(pred).numel() as f64;
        let sum: f64 = self
            .value(pred)
            .data
            .iter()
            .zip(&self.value(target).data)
            .map(|(p, t)| (p - t).abs())
            .sum();
        let out = Tensor::new([1, 1, 1, 1], vec![sum / count]).unwrap();
        Ok(self.push(out, Op::L1Loss { pred, target }))
    }

    /// Sum of all elements; returns a scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let sum: f64 = self.value(x).data.iter().sum();
        let out = Tensor::new([1, 1, 1, 1], vec![sum]).unwrap();
        self.push(out, Op::SumAll { x })
    }

    /// Channel slice [start, start+len).
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).shape;
        if start + len > c || len == 0 {
            return Err(SisnError::InvalidInput(format!(
                "narrow_channels: range {start}..{} out of {c} channels",
                start + len
            )));
        }
        let mut out = Tensor::zeros([n, len, h, w]);
        let xv = &self.value(x).data;
        for ni in 0..n {
            for ci in 0..len {
                let src = ((ni * c + start + ci) * h * w)..((ni * c + start + ci + 1) * h * w);
                let dst = (ni * len + ci) * h * w;
                out.data[dst..dst + h * w].copy_from_slice(&xv[src]);
            }
        }
        Ok(self.push(out, Op::NarrowChannels { x, start }))
    }

    /// Repeats the channel axis `reps` times: N×C×H×W → N×(reps·C)×H×W.
    pub fn tile_channels(&mut self, x: Var, reps: usize) -> Result<Var> {
        if reps == 0 {
            return Err(SisnError::InvalidInput("tile_channels: reps must be >= 1".into()));
        }
        let [n, c, h, w] = self.value(x).shape;
        let mut out = Tensor::zeros([n, reps * c, h, w]);
        let xv = &self.value(x).data;
        for ni in 0..n {
            for rep in 0..reps {
                let dst = (ni * reps * c + rep * c) * h * w;
                let src = ni * c * h * w;
                out.data[dst..dst + c * h * w].copy_from_slice(&xv[src..src + c * h * w]);
            }
        }
        Ok(self.push(out, Op::TileChannels { x, reps }))
    }

    /// Reverse sweep from a scalar `loss`. Returns one gradient slot per
    /// recorded tensor; `None` where no gradient flowed.
    pub fn backward(&self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        if self.value(loss).numel() != 1 {
            return Err(SisnError::InvalidInput(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new([1, 1, 1, 1], vec![1.0]).unwrap());

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match self.nodes[i].op {
                Op::Leaf { requires_grad } => {
                    if requires_grad {
                        grads[i] = Some(g);
                    }
                }
                Op::Conv2d { x, w, b, padding } => {
                    self.conv2d_backward(x, w, b, padding, &g, &mut grads);
                    grads[i] = None;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, a, &g.data, g.shape);
                    accumulate(&mut grads, b, &g.data, g.shape);
                }
                Op::Mul { a, b, broadcast } => {
                    let [n, c, h, w] = self.value(a).shape;
                    let av = &self.value(a).data;
                    let bv = &self.value(b).data;
                    let mut ga = vec![0.0; av.len()];
                    if broadcast {
                        let mut gb = vec![0.0; bv.len()];
                        for nc in 0..n * c {
                            let f = bv[nc];
                            let base = nc * h * w;
                            for k in 0..h * w {
                                ga[base + k] = g.data[base + k] * f;
                                gb[nc] += g.data[base + k] * av[base + k];
                            }
                        }
                        accumulate(&mut grads, a, &ga, [n, c, h, w]);
                        accumulate(&mut grads, b, &gb, [n, c, 1, 1]);
                    } else {
                        let mut gb = vec![0.0; bv.len()];
                        for k in 0..av.len() {
                            ga[k] = g.data[k] * bv[k];
                            gb[k] = g.data[k] * av[k];
                        }
                        accumulate(&mut grads, a, &ga, [n, c, h, w]);
                        accumulate(&mut grads, b, &gb, [n, c, h, w]);
                    }
                }
                Op::GlobalAvgPool { x } => {
                    let [n, c, h, w] = self.value(x).shape;
                    let area = (h * w) as f64;
                    let mut gx = vec![0.0; n * c * h * w];
                    for nc in 0..n * c {
                        let gv = g.data[nc] / area;
                        for k in 0..h * w {
                            gx[nc * h * w + k] = gv;
                        }
                    }
                    accumulate(&mut grads, x, &gx, [n, c, h, w]);
                }
                Op::RSoftmax { x, splits } => {
                    let [n, c, _, _] = self.value(x).shape;
                    let per = c / splits;
                    let yv = &self.nodes[i].value.data;
                    let mut gx = vec![0.0; n * c];
                    for ni in 0..n {
                        for j in 0..per {
                            let mut dot = 0.0;
                            for k in 0..splits {
                                let idx = ni * c + k * per + j;
                                dot += yv[idx] * g.data[idx];
                            }
                            for k in 0..splits {
                                let idx = ni * c + k * per + j;
                                gx[idx] = yv[idx] * (g.data[idx] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, x, &gx, [n, c, 1, 1]);
                }
                Op::PixelShuffle { x, scale } => {
                    let [n, c, h, w] = self.value(x).shape;
                    let s2 = scale * scale;
                    let co = c / s2;
                    let mut gx = vec![0.0; n * c * h * w];
                    for ni in 0..n {
                        for cc in 0..co {
                            for ii in 0..scale {
                                for j in 0..scale {
                                    let ci = cc * s2 + ii * scale + j;
                                    for y in 0..h {
                                        for xw in 0..w {
                                            gx[((ni * c + ci) * h + y) * w + xw] = g.data[((ni
                                                * co
                                                + cc)
                                                * h
                                                * scale
                                                + y * scale
                                                + ii)
                                                * w
                                                * scale
                                                + xw * scale
                                                + j];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, x, &gx, [n, c, h, w]);
                }
                Op::Relu { x } => {
                    let xv = &self.value(x).data;
                    let gx: Vec<f64> = xv
                        .iter()
                        .zip(&g.data)
                        .map(|(v, gv)| if *v > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, x, &gx, self.value(x).shape);
                }
                Op::L1Loss { pred, target } => {
                    let pv = &self.value(pred).data;
                    let tv = &self.value(target).data;
                    let scale = g.data[0] / pv.len() as f64;
                    let mut gp = vec![0.0; pv.len()];
                    let mut gt = vec![0.0; pv.len()];
                    for k in 0..pv.len() {
                        let s = match pv[k].partial_cmp(&tv[k]) {
                            Some(std::cmp::Ordering::Greater) => 1.0,
                            Some(std::cmp::Ordering::Less) => -1.0,
                            _ => 0.0,
                        };
                        gp[k] = s * scale;
                        gt[k] = -s * scale;
                    }
                    accumulate(&mut grads, pred, &gp, self.value(pred).shape);
                    accumulate(&mut grads, target, &gt, self.value(target).shape);
                }
                Op::SumAll { x } => {
                    let gx = vec![g.data[0]; self.value(x).numel()];
                    accumulate(&mut grads, x, &gx, self.value(x).shape);
                }
                Op::TileChannels { x, reps } => {
                    let [n, c, h, w] = self.value(x).shape;
                    let mut gx = vec![0.0; n * c * h * w];
                    for ni in 0..n {
                        for rep in 0..reps {
                            let src = (ni * reps * c + rep * c) * h * w;
                            let dst = ni * c * h * w;
                            for k in 0..c * h * w {
                                gx[dst + k] += g.data[src + k];
                            }
                        }
                    }
                    accumulate(&mut grads, x, &gx, [n, c, h, w]);
                }
                Op::NarrowChannels { x, start } => {
                    let [n, c, h, w] = self.value(x).shape;
                    let len = g.shape[1];
                    let mut gx = vec![0.0; n * c * h * w];
                    for ni in 0..n {
                        for ci in 0..len {
                            let dst = ((ni * c + start + ci) * h * w)
                                ..((ni * c + start + ci + 1) * h * w);
                            let src = (ni * len + ci) * h * w;
                            gx[dst].copy_from_slice(&g.data[src..src + h * w]);
                        }
                    }
                    accumulate(&mut grads, x, &gx, [n, c, h, w]);
                }
            }
            // Interior nodes only relay gradients; keep the slot only for
            // leaves, handled above.
            if !matches!(self.nodes[i].op, Op::Leaf { .. }) {
                grads[i] = None;
            }
        }
        Ok(grads)
    }

    /// Gradient for a specific leaf after [`Tape::backward`], zeros if
    /// unreachable from the loss.
    pub fn grad_of(grads: &[Option<Tensor>], v: Var, shape: [usize; 4]) -> Tensor {
        grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(shape))
    }

    // index arithmetic across four buffers; iterator form would obscure it
    #[allow(clippy::needless_range_loop)]
    fn conv2d_backward(
        &self,
        x: Var,
        w: Var,
        b: Var,
        padding: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let [n, c_in, h, wd] = self.value(x).shape;
        let [c_out, _, k, _] = self.value(w).shape;
        let xv = &self.value(x).data;
        let wv = &self.value(w).data;
        let mut gx = vec![0.0; xv.len()];
        let mut gw = vec![0.0; wv.len()];
        let mut gb = vec![0.0; c_out];
        for ni in 0..n {
            for co in 0..c_out {
                for y in 0..h {
                    for xo in 0..wd {
                        let gv = g.data[((ni * c_out + co) * h + y) * wd + xo];
                        if gv == 0.0 {
                            continue;
                        }
                        gb[co] += gv;
                        for ci in 0..c_in {
                            for dy in 0..k {
                                let iy = y + dy;
                                if iy < padding || iy - padding >= h {
                                    continue;
                                }
                                let iy = iy - padding;
                                for dx in 0..k {
                                    let ix = xo + dx;
                                    if ix < padding || ix - padding >= wd {
                                        continue;
                                    }
                                    let ix = ix - padding;
                                    let widx = ((co * c_in + ci) * k + dy) * k + dx;
                                    let xidx = ((ni * c_in + ci) * h + iy) * wd + ix;
                                    gx[xidx] += wv[widx] * gv;
                                    gw[widx] += xv[xidx] * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        accumulate(grads, x, &gx, [n, c_in, h, wd]);
        accumulate(grads, w, &gw, self.value(w).shape);
        accumulate(grads, b, &gb, [1, c_out, 1, 1]);
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: &[f64], shape: [usize; 4]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => {
            grads[v.0] = Some(Tensor {
                shape,
                data: g.to_vec(),
                requires_grad: false,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff::max_rel_error, finite_diff_grad};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv2d_delta_kernel_is_identity() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, [1, 1, 5, 5]);
        let mut w = Tensor::zeros([1, 1, 3, 3]);
        w.data[4] = 1.0; // center tap
        let (xv, wv) = (tape.leaf(&x), tape.leaf(&w));
        let b = tape.constant(Tensor::zeros([1, 1, 1, 1]));
        let y = tape.conv2d(xv, wv, b, 1).unwrap();
        assert_eq!(tape.value(y).data, x.data);
    }

    #[test]
    fn conv2d_ones_kernel_interior_sums_window() {
        let mut tape = Tape::new();
        let c = 0.7;
        let x = Tensor::filled([1, 1, 5, 5], c);
        let w = Tensor::filled([1, 1, 3, 3], 1.0);
        let (xv, wv) = (tape.leaf(&x), tape.leaf(&w));
        let b = tape.constant(Tensor::zeros([1, 1, 1, 1]));
        let y = tape.conv2d(xv, wv, b, 1).unwrap();
        // interior pixels see the full 3x3 window
        assert!((tape.value(y).at(0, 0, 2, 2) - 9.0 * c).abs() < 1e-12);
        // corner sees a 2x2 window under zero padding
        assert!((tape.value(y).at(0, 0, 0, 0) - 4.0 * c).abs() < 1e-12);
    }

    #[test]
    fn conv2d_shape_rule() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, [2, 8, 16, 16]);
        let w = rand_tensor(&mut rng, [32, 8, 3, 3]);
        let (xv, wv) = (tape.leaf(&x), tape.leaf(&w));
        let b = tape.constant(Tensor::zeros([1, 32, 1, 1]));
        let y = tape.conv2d(xv, wv, b, 1).unwrap();
        assert_eq!(tape.value(y).shape, [2, 32, 16, 16]);
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 4, 8, 8]));
        let w = tape.constant(Tensor::zeros([8, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros([1, 8, 1, 1]));
        let err = tape.conv2d(x, w, b, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3") && msg.contains("4"), "diagnostic: {msg}");
    }

    #[test]
    fn conv2d_is_linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, [1, 2, 6, 6]);
        let y = rand_tensor(&mut rng, [1, 2, 6, 6]);
        let w = rand_tensor(&mut rng, [3, 2, 3, 3]);
        let (alpha, beta) = (0.37, -1.21);
        let run = |inp: &Tensor| {
            let mut tape = Tape::new();
            let xv = tape.leaf(inp);
            let wv = tape.leaf(&w);
            let b = tape.constant(Tensor::zeros([1, 3, 1, 1]));
            let out = tape.conv2d(xv, wv, b, 1).unwrap();
            tape.value(out).data.clone()
        };
        let mut combo = x.clone();
        for i in 0..combo.data.len() {
            combo.data[i] = alpha * x.data[i] + beta * y.data[i];
        }
        let (ox, oy, oc) = (run(&x), run(&y), run(&combo));
        for i in 0..oc.len() {
            assert!((oc[i] - (alpha * ox[i] + beta * oy[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn elementwise_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, [2, 3, 4, 4]);
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let z = tape.constant(Tensor::zeros([2, 3, 4, 4]));
        let s = tape.add(xv, z).unwrap();
        assert_eq!(tape.value(s).data, x.data);
        let ones = tape.constant(Tensor::filled([2, 3, 1, 1], 1.0));
        let p = tape.mul(xv, ones).unwrap();
        assert_eq!(tape.value(p).data, x.data);
    }

    #[test]
    fn elementwise_sum_direct() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new([1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::new([1, 1, 1, 2], vec![3.0, 4.0]).unwrap());
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s).data, vec![4.0, 6.0]);
    }

    #[test]
    fn elementwise_rejects_incompatible_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros([1, 2, 3, 3]));
        let b = tape.constant(Tensor::zeros([1, 2, 3, 4]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.mul(a, b).is_err());
    }

    #[test]
    fn global_pool_constant_and_direct() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::filled([2, 3, 5, 7], 0.42));
        let p = tape.global_avg_pool(c);
        for v in &tape.value(p).data {
            assert!((v - 0.42).abs() < 1e-12);
        }
        let x = tape.constant(Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = tape.global_avg_pool(x);
        assert!((tape.scalar(p) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn r_softmax_basic_cases() {
        let mut tape = Tape::new();
        // r=1: weight exactly 1
        let x = tape.constant(Tensor::new([1, 1, 1, 1], vec![-3.7]).unwrap());
        let y = tape.r_softmax(x, 1).unwrap();
        assert_eq!(tape.value(y).data, vec![1.0]);
        // r=2 equal logits
        let x = tape.constant(Tensor::new([1, 2, 1, 1], vec![0.3, 0.3]).unwrap());
        let y = tape.r_softmax(x, 2).unwrap();
        assert!((tape.value(y).data[0] - 0.5).abs() < 1e-12);
        // r=2, logits [0, ln 3] -> [0.25, 0.75]
        let x = tape.constant(Tensor::new([1, 2, 1, 1], vec![0.0, 3.0_f64.ln()]).unwrap());
        let y = tape.r_softmax(x, 2).unwrap();
        assert!((tape.value(y).data[0] - 0.25).abs() < 1e-12);
        assert!((tape.value(y).data[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn r_softmax_rejects_r_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 2, 1, 1]));
        assert!(tape.r_softmax(x, 0).is_err());
    }

    #[test]
    fn pixel_shuffle_cases() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new([1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.pixel_shuffle(x, 2).unwrap();
        assert_eq!(tape.value(y).shape, [1, 1, 2, 2]);
        assert_eq!(tape.value(y).data, vec![1.0, 2.0, 3.0, 4.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = rand_tensor(&mut rng, [1, 4, 3, 3]);
        let x = tape.leaf(&t);
        let y = tape.pixel_shuffle(x, 2).unwrap();
        assert_eq!(tape.value(y).shape, [1, 1, 6, 6]);
        // s=1 identity
        let x = tape.leaf(&t);
        let y = tape.pixel_shuffle(x, 1).unwrap();
        assert_eq!(tape.value(y).data, t.data);
        // indivisible channels rejected
        let x = tape.constant(Tensor::zeros([1, 3, 2, 2]));
        assert!(tape.pixel_shuffle(x, 2).is_err());
    }

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn l1_loss_cases() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = rand_tensor(&mut rng, [2, 3, 4, 4]);
        let av = tape.leaf(&a);
        let same = tape.leaf(&a);
        let l = tape.l1_loss(av, same).unwrap();
        assert_eq!(tape.scalar(l), 0.0);

        let mut shifted = a.clone();
        for v in &mut shifted.data {
            *v += 0.5;
        }
        let sv = tape.leaf(&shifted);
        let l = tape.l1_loss(sv, av).unwrap();
        assert!((tape.scalar(l) - 0.5).abs() < 1e-12);

        // random pair vs brute-force oracle
        let b = rand_tensor(&mut rng, [2, 3, 4, 4]);
        let bv = tape.leaf(&b);
        let l = tape.l1_loss(av, bv).unwrap();
        let oracle: f64 = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.numel() as f64;
        assert!((tape.scalar(l) - oracle).abs() < 1e-12);
    }

    #[test]
    fn backward_sum_is_ones_and_product_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, [1, 2, 3, 3]).with_grad();
        let y = rand_tensor(&mut rng, [1, 2, 3, 3]).with_grad();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let loss = tape.sum_all(xv);
        let grads = tape.backward(loss).unwrap();
        let gx = Tape::grad_of(&grads, xv, x.shape);
        assert!(gx.data.iter().all(|v| (*v - 1.0).abs() < 1e-12));

        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let yv = tape.leaf(&y);
        let p = tape.mul(xv, yv).unwrap();
        let loss = tape.sum_all(p);
        let grads = tape.backward(loss).unwrap();
        let gx = Tape::grad_of(&grads, xv, x.shape);
        let gy = Tape::grad_of(&grads, yv, y.shape);
        for i in 0..x.numel() {
            assert!((gx.data[i] - y.data[i]).abs() < 1e-12);
            assert!((gy.data[i] - x.data[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_nonscalar_loss() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 1, 2, 2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn pool_gradient_is_inverse_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_tensor(&mut rng, [1, 2, 4, 4]).with_grad();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let p = tape.global_avg_pool(xv);
        let loss = tape.sum_all(p);
        let grads = tape.backward(loss).unwrap();
        let gx = Tape::grad_of(&grads, xv, x.shape);
        for v in &gx.data {
            assert!((v - 1.0 / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv2d_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, [2, 3, 6, 6]).with_grad();
        let w = rand_tensor(&mut rng, [4, 3, 3, 3]).with_grad();
        let bias = rand_tensor(&mut rng, [1, 4, 1, 1]).with_grad();
        let probe = rand_tensor(&mut rng, [2, 4, 6, 6]);

        let run = |x_t: &Tensor, w_t: &Tensor, b_t: &Tensor| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x_t);
            let wv = tape.leaf(w_t);
            let bv = tape.leaf(b_t);
            let y = tape.conv2d(xv, wv, bv, 1).unwrap();
            let pv = tape.constant(probe.clone());
            let weighted = tape.mul(y, pv).unwrap();
            let loss = tape.sum_all(weighted);
            (tape, xv, wv, bv, loss)
        };

        let (tape, xv, wv, bv, loss) = run(&x, &w, &bias);
        let grads = tape.backward(loss).unwrap();
        let gx = Tape::grad_of(&grads, xv, x.shape);
        let gw = Tape::grad_of(&grads, wv, w.shape);
        let gb = Tape::grad_of(&grads, bv, bias.shape);

        let fdx = finite_diff_grad(|t| { let (tp, _, _, _, l) = run(t, &w, &bias); tp.scalar(l) }, &x, 1e-4);
        let fdw = finite_diff_grad(|t| { let (tp, _, _, _, l) = run(&x, t, &bias); tp.scalar(l) }, &w, 1e-4);
        let fdb = finite_diff_grad(|t| { let (tp, _, _, _, l) = run(&x, &w, t); tp.scalar(l) }, &bias, 1e-4);
        assert!(max_rel_error(&gx, &fdx) < 1e-4);
        assert!(max_rel_error(&gw, &fdw) < 1e-4);
        assert!(max_rel_error(&gb, &fdb) < 1e-4);
    }

    #[test]
    fn relu_gradient_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        // keep values away from 0 so finite differences are valid
        let mut x = rand_tensor(&mut rng, [1, 2, 4, 4]);
        for v in &mut x.data {
            if v.abs() < 0.05 {
                *v += 0.1 * v.signum().max(0.5);
            }
        }
        let x = x.with_grad();
        let probe = rand_tensor(&mut rng, [1, 2, 4, 4]);
        let run = |t: &Tensor| {
            let mut tape = Tape::new();
            let xv = tape.leaf(t);
            let y = tape.relu(xv);
            let pv = tape.constant(probe.clone());
            let m = tape.mul(y, pv).unwrap();
            let l = tape.sum_all(m);
            (tape, xv, l)
        };
        let (tape, xv, loss) = run(&x);
        let grads = tape.backward(loss).unwrap();
        let gx = Tape::grad_of(&grads, xv, x.shape);
        let fd = finite_diff_grad(|t| { let (tp, _, l) = run(t); tp.scalar(l) }, &x, 1e-5);
        assert!(max_rel_error(&gx, &fd) < 1e-4);
        for (g, v) in gx.data.iter().zip(&x.data) {
            if *v < 0.0 {
                assert_eq!(*g, 0.0);
            }
        }
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, [1, 1, 2, 2]).with_grad();
        let unused = rand_tensor(&mut rng, [1, 1, 2, 2]).with_grad();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let uv = tape.leaf(&unused);
        let loss = tape.sum_all(xv);
        let grads = tape.backward(loss).unwrap();
        let gu = Tape::grad_of(&grads, uv, unused.shape);
        assert!(gu.data.iter().all(|v| *v == 0.0));
    }
}
