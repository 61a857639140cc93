//! Tape-based reverse-mode differentiation over `[c, h, w]` activations.
//!
//! A [`Graph`] records every operation applied to one input image. Parameters
//! are borrowed from a [`ParamSet`] rather than copied onto the tape, so
//! several graphs over the same parameters can run on different threads.

use crate::error::{invalid, shape_err, Result};
use crate::scalar::Real;

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter tensors of one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.values.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Replaces every tensor, keeping names; shapes must match.
    pub fn load(&mut self, tensors: Vec<(String, Tensor<T>)>) -> Result<()> {
        if tensors.len() != self.values.len() {
            return Err(shape_err("parameter load", self.values.len(), tensors.len()));
        }
        for (i, (name, t)) in tensors.into_iter().enumerate() {
            if name != self.names[i] {
                return Err(invalid(format!("parameter {i} is {:?}, checkpoint has {name:?}", self.names[i])));
            }
            if t.shape() != self.values[i].shape() {
                return Err(shape_err("parameter load", self.values[i].shape(), t.shape()));
            }
            self.values[i] = t;
        }
        Ok(())
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad }
    }

    /// Output extent of a forward convolution over `len` input samples.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.pad;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
        cols: Vec<T>,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Add {
        a: Var,
        b: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
}

/// Recorded computation for one input.
pub struct Graph<'p, T> {
    params: &'p ParamSet<T>,
    values: Vec<Option<Tensor<T>>>,
    ops: Vec<Op<T>>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a node, if any flowed into it.
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].as_ref()
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Tensor<T>> {
        self.params
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, g: ConvGeometry, oh: usize, ow: usize) -> Vec<T> {
    let k = g.kernel;
    let n = oh * ow;
    let mut cols = vec![T::zero(); c * k * k * n];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto a `[c, h, w]` image.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, g: ConvGeometry, oh: usize, ow: usize) -> Vec<T> {
    let k = g.kernel;
    let n = oh * ow;
    let mut x = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], n: usize) {
    for (o, &b) in bias.iter().enumerate() {
        out[o * n..(o + 1) * n].iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Real>(dout: &[T], c: usize, n: usize) -> Vec<T> {
    (0..c).map(|o| dout[o * n..(o + 1) * n].iter().copied().sum()).collect()
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, shape: &[usize], g: Vec<T>) {
    match slot {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(Tensor::new(shape.to_vec(), g).expect("gradient shape")),
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self {
            params,
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    fn push(&mut self, value: Option<Tensor<T>>, op: Op<T>) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.ops.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match (&self.values[v.0], &self.ops[v.0]) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn input(&mut self, t: Tensor<T>) -> Result<Var> {
        t.chw()?;
        Ok(self.push(Some(t), Op::Input))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(None, Op::Param(id))
    }

    /// `y = W * x + b` with weights `[out, in, k, k]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let (c, h, wd) = self.value(x).chw()?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 4 || ws[1] != c || ws[2] != geom.kernel || ws[3] != geom.kernel {
            return Err(shape_err("conv2d weight", &ws, [0, c, geom.kernel, geom.kernel]));
        }
        let cout = ws[0];
        if self.value(b).shape() != [cout] {
            return Err(shape_err("conv2d bias", self.value(b).shape(), [cout]));
        }
        let (oh, ow) = match (geom.out_len(h), geom.out_len(wd)) {
            (Some(a), Some(bb)) => (a, bb),
            _ => return Err(shape_err("conv2d input", [c, h, wd], geom)),
        };
        let cols = im2col(self.value(x).data(), c, h, wd, geom, oh, ow);
        let kk = c * geom.kernel * geom.kernel;
        let n = oh * ow;
        let mut out = vec![T::zero(); cout * n];
        T::gemm(
            cout,
            kk,
            n,
            T::one(),
            self.value(w).data(),
            kk as isize,
            1,
            &cols,
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        add_bias(&mut out, self.value(b).data(), n);
        let t = Tensor::new(vec![cout, oh, ow], out)?;
        Ok(self.push(Some(t), Op::Conv { x, w, b, geom, cols }))
    }

    /// Adjoint of a strided convolution: weights `[in, out, k, k]`, output
    /// extent `stride * input` per axis.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let (cin, hi, wi) = self.value(x).chw()?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 4 || ws[0] != cin || ws[2] != geom.kernel || ws[3] != geom.kernel {
            return Err(shape_err("conv_transpose2d weight", &ws, [cin, 0, geom.kernel, geom.kernel]));
        }
        let cout = ws[1];
        if self.value(b).shape() != [cout] {
            return Err(shape_err("conv_transpose2d bias", self.value(b).shape(), [cout]));
        }
        let (ho, wo) = (hi * geom.stride, wi * geom.stride);
        if geom.out_len(ho) != Some(hi) || geom.out_len(wo) != Some(wi) {
            return Err(shape_err("conv_transpose2d geometry", [cin, hi, wi], geom));
        }
        let kc = cout * geom.kernel * geom.kernel;
        let ni = hi * wi;
        let mut cols = vec![T::zero(); kc * ni];
        T::gemm(
            kc,
            cin,
            ni,
            T::one(),
            self.value(w).data(),
            1,
            kc as isize,
            self.value(x).data(),
            ni as isize,
            1,
            T::zero(),
            &mut cols,
            ni as isize,
            1,
        );
        let mut out = col2im(&cols, cout, ho, wo, geom, hi, wi);
        add_bias(&mut out, self.value(b).data(), ho * wo);
        let t = Tensor::new(vec![cout, ho, wo], out)?;
        Ok(self.push(Some(t), Op::ConvTranspose { x, w, b, geom }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| if a > T::zero() { a } else { a * slope }).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(Some(t), Op::LeakyRelu { x, slope })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(Some(t), Op::Add { a, b }))
    }

    /// Channel-wise concatenation of `[c_i, h, w]` tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| invalid("concat of nothing"))?;
        let (_, h, w) = self.value(first).chw()?;
        let mut data = Vec::new();
        let mut channels = 0;
        for &p in parts {
            let (c, ph, pw) = self.value(p).chw()?;
            if (ph, pw) != (h, w) {
                return Err(shape_err("concat", [h, w], [ph, pw]));
            }
            channels += c;
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(vec![channels, h, w], data)?;
        Ok(self.push(
            Some(t),
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Back-propagates `seed = ∂L/∂root` through the tape.
    pub fn backward(self, root: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.value(root).shape() {
            return Err(shape_err("backward seed", seed.shape(), self.value(root).shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.ops.len()).map(|_| None).collect();
        let mut param_grads = self.params.zeros_like();
        grads[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                // Only input gradients stay reachable through `Gradients::of`.
                Op::Input => grads[i] = Some(g),
                Op::Param(id) => param_grads[id.0].add_assign(&g)?,
                Op::Conv { x, w, b, geom, cols } => {
                    let (c, h, wd) = self.value(*x).chw()?;
                    let ws = self.value(*w).shape().to_vec();
                    let (cout, oh, ow) = g.chw()?;
                    let n = oh * ow;
                    let kk = c * geom.kernel * geom.kernel;
                    let mut dw = vec![T::zero(); cout * kk];
                    T::gemm(cout, n, kk, T::one(), g.data(), n as isize, 1, cols, 1, n as isize, T::zero(), &mut dw, kk as isize, 1);
                    let mut dcols = vec![T::zero(); kk * n];
                    T::gemm(
                        kk,
                        cout,
                        n,
                        T::one(),
                        self.value(*w).data(),
                        1,
                        kk as isize,
                        g.data(),
                        n as isize,
                        1,
                        T::zero(),
                        &mut dcols,
                        n as isize,
                        1,
                    );
                    let dx = col2im(&dcols, c, h, wd, *geom, oh, ow);
                    accumulate(&mut grads[x.0], &[c, h, wd], dx);
                    accumulate(&mut grads[w.0], &ws, dw);
                    accumulate(&mut grads[b.0], &[cout], bias_grad(g.data(), cout, n));
                }
                Op::ConvTranspose { x, w, b, geom } => {
                    let (cin, hi, wi) = self.value(*x).chw()?;
                    let ws = self.value(*w).shape().to_vec();
                    let (cout, ho, wo) = g.chw()?;
                    let ni = hi * wi;
                    let kc = cout * geom.kernel * geom.kernel;
                    let dcols = im2col(g.data(), cout, ho, wo, *geom, hi, wi);
                    let mut dx = vec![T::zero(); cin * ni];
                    T::gemm(
                        cin,
                        kc,
                        ni,
                        T::one(),
                        self.value(*w).data(),
                        kc as isize,
                        1,
                        &dcols,
                        ni as isize,
                        1,
                        T::zero(),
                        &mut dx,
                        ni as isize,
                        1,
                    );
                    let mut dw = vec![T::zero(); cin * kc];
                    T::gemm(
                        cin,
                        ni,
                        kc,
                        T::one(),
                        self.value(*x).data(),
                        ni as isize,
                        1,
                        &dcols,
                        1,
                        ni as isize,
                        T::zero(),
                        &mut dw,
                        kc as isize,
                        1,
                    );
                    accumulate(&mut grads[x.0], &[cin, hi, wi], dx);
                    accumulate(&mut grads[w.0], &ws, dw);
                    accumulate(&mut grads[b.0], &[cout], bias_grad(g.data(), cout, ho * wo));
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(*x);
                    let d = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&a, &gg)| if a > T::zero() { gg } else { gg * *slope })
                        .collect();
                    accumulate(&mut grads[x.0], xv.shape(), d);
                }
                Op::Add { a, b } => {
                    let shape = g.shape().to_vec();
                    accumulate(&mut grads[a.0], &shape, g.data().to_vec());
                    accumulate(&mut grads[b.0], &shape, g.into_data());
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let shape = self.value(*p).shape().to_vec();
                        let len = self.value(*p).len();
                        accumulate(&mut grads[p.0], &shape, g.data()[offset..offset + len].to_vec());
                        offset += len;
                    }
                }
            }
        }
        Ok(Gradients {
            nodes: grads,
            params: param_grads,
        })
    }
}
