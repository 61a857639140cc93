//! Residual U-Net at desk scale.
//!
//! Encoder: one down-residual block (DRB) per width, each halving the
//! extent. Decoder: up-residual blocks (URB) mirror the encoder; after each
//! of the first `depth - 1` URBs the matching encoder output is concatenated.
//! The last URB returns to full resolution, followed by residual blocks and a
//! zero-initialized 3×3 head. With the global residual enabled the network is
//! exactly the identity at initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, shape_err, Result};
use crate::metrics::npcc_gradient_slice;
use crate::scalar::Real;

use super::autodiff::{ConvGeometry, Gradients, Graph, ParamId, ParamSet, Var};
use super::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct MicroUNetConfig {
    pub n: usize,
    pub widths: Vec<usize>,
    pub res_blocks: usize,
    pub kernel: usize,
    pub global_residual: bool,
}

impl MicroUNetConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            widths: vec![16, 32, 64],
            res_blocks: 2,
            kernel: 3,
            global_residual: true,
        }
    }

    /// Same topology with every width doubled.
    pub fn doubled(mut self) -> Self {
        self.widths.iter_mut().for_each(|w| *w *= 2);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(invalid(format!("channel widths must be positive, got {:?}", self.widths)));
        }
        let step = 1usize << self.widths.len();
        if self.n < step || self.n % step != 0 {
            return Err(invalid(format!(
                "n = {} is not divisible by 2^{} = {step}",
                self.n,
                self.widths.len()
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(invalid(format!("kernel size must be odd, got {}", self.kernel)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
    geom: ConvGeometry,
    transposed: bool,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    a: Layer,
    b: Layer,
    skip: Option<Layer>,
}

#[derive(Clone, Debug)]
pub struct MicroUNet<T> {
    config: MicroUNetConfig,
    params: ParamSet<T>,
    down: Vec<Block>,
    up: Vec<Block>,
    res: Vec<Block>,
    head: Layer,
}

struct Builder<'a, T> {
    params: ParamSet<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    /// He-uniform weights for a leaky-relu trunk, zero biases.
    fn layer(&mut self, name: &str, cin: usize, cout: usize, geom: ConvGeometry, transposed: bool, zero: bool) -> Layer {
        let k = geom.kernel;
        let shape = if transposed { [cin, cout, k, k] } else { [cout, cin, k, k] };
        let fan_in = (cin * k * k) as f64;
        let bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
        let len = shape.iter().product();
        let data = (0..len)
            .map(|_| if zero { T::zero() } else { T::of(self.rng.random_range(-bound..bound)) })
            .collect();
        let w = self.params.push(format!("{name}.w"), Tensor::new(shape.to_vec(), data).expect("shape"));
        let b = self.params.push(format!("{name}.b"), Tensor::zeros(&[cout]));
        Layer { w, b, geom, transposed }
    }
}

impl<T: Real> MicroUNet<T> {
    pub fn new(config: MicroUNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bld = Builder {
            params: ParamSet::new(),
            rng: &mut rng,
        };
        let k = config.kernel;
        let same = ConvGeometry::new(k, 1, k / 2);
        let down_g = ConvGeometry::new(k, 2, k / 2);
        let skip_down = ConvGeometry::new(1, 2, 0);
        let skip_up = ConvGeometry::new(2, 2, 0);
        let w = &config.widths;
        let depth = w.len();

        let mut down = Vec::with_capacity(depth);
        let mut cin = 1;
        for (i, &c) in w.iter().enumerate() {
            down.push(Block {
                a: bld.layer(&format!("down{i}.a"), cin, c, down_g, false, false),
                b: bld.layer(&format!("down{i}.b"), c, c, same, false, false),
                skip: Some(bld.layer(&format!("down{i}.skip"), cin, c, skip_down, false, false)),
            });
            cin = c;
        }

        // Up block j consumes the deepest features (concatenated with the
        // encoder skip for j > 0) and emits w[depth - 2 - j], or w[0] last.
        let mut up = Vec::with_capacity(depth);
        for j in 0..depth {
            let cout = if j + 1 < depth { w[depth - 2 - j] } else { w[0] };
            up.push(Block {
                a: bld.layer(&format!("up{j}.a"), cin, cout, down_g, true, false),
                b: bld.layer(&format!("up{j}.b"), cout, cout, same, false, false),
                skip: Some(bld.layer(&format!("up{j}.skip"), cin, cout, skip_up, true, false)),
            });
            cin = if j + 1 < depth { 2 * cout } else { cout };
        }

        let res = (0..config.res_blocks)
            .map(|i| Block {
                a: bld.layer(&format!("res{i}.a"), cin, cin, same, false, false),
                b: bld.layer(&format!("res{i}.b"), cin, cin, same, false, false),
                skip: None,
            })
            .collect();
        let head = bld.layer("head", cin, 1, same, false, true);
        Ok(Self {
            params: bld.params,
            config,
            down,
            up,
            res,
            head,
        })
    }

    pub fn config(&self) -> &MicroUNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn apply(g: &mut Graph<'_, T>, l: Layer, x: Var) -> Result<Var> {
        let (w, b) = (g.param(l.w), g.param(l.b));
        if l.transposed {
            g.conv_transpose2d(x, w, b, l.geom)
        } else {
            g.conv2d(x, w, b, l.geom)
        }
    }

    fn block(g: &mut Graph<'_, T>, blk: &Block, x: Var) -> Result<Var> {
        let slope = T::of(LEAKY_SLOPE);
        let h = Self::apply(g, blk.a, x)?;
        let h = g.leaky_relu(h, slope);
        let h = Self::apply(g, blk.b, h)?;
        let s = match blk.skip {
            Some(l) => Self::apply(g, l, x)?,
            None => x,
        };
        let sum = g.add(h, s)?;
        Ok(g.leaky_relu(sum, slope))
    }

    /// Records the forward pass on `g`, returning the `[1, n, n]` output.
    pub fn forward(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let n = self.config.n;
        if g.value(x).shape() != [1, n, n] {
            return Err(shape_err("network input", g.value(x).shape(), [1, n, n]));
        }
        let mut skips = Vec::with_capacity(self.down.len());
        let mut h = x;
        for blk in &self.down {
            h = Self::block(g, blk, h)?;
            skips.push(h);
        }
        skips.pop();
        for blk in &self.up {
            h = Self::block(g, blk, h)?;
            if let Some(s) = skips.pop() {
                h = g.concat(&[h, s])?;
            }
        }
        for blk in &self.res {
            h = Self::block(g, blk, h)?;
        }
        let out = Self::apply(g, self.head, h)?;
        if self.config.global_residual {
            g.add(out, x)
        } else {
            Ok(out)
        }
    }

    fn input(&self, img: &[T]) -> Result<Tensor<T>> {
        let n = self.config.n;
        Tensor::new(vec![1, n, n], img.to_vec()).map_err(|_| shape_err("network input", img.len(), n * n))
    }

    /// Inference on one flattened `n × n` image.
    pub fn predict(&self, img: &[T]) -> Result<Vec<T>> {
        let mut g = Graph::new(&self.params);
        let x = g.input(self.input(img)?)?;
        let y = self.forward(&mut g, x)?;
        let out = g.value(y).clone();
        out.check_finite("network output")?;
        Ok(out.into_data())
    }

    /// NPCC loss of `output + offset` against `target` and its gradients
    /// with respect to every parameter.
    pub fn npcc_loss_grad(&self, img: &[T], offset: Option<&[T]>, target: &[T]) -> Result<(T, Gradients<T>)> {
        let mut g = Graph::new(&self.params);
        let x = g.input(self.input(img)?)?;
        let y = self.forward(&mut g, x)?;
        let (loss, seed) = match offset {
            Some(off) => {
                if off.len() != img.len() {
                    return Err(shape_err("loss offset", off.len(), img.len()));
                }
                let sum: Vec<T> = g.value(y).data().iter().zip(off).map(|(&a, &b)| a + b).collect();
                npcc_gradient_slice(&sum, target)?
            }
            None => npcc_gradient_slice(g.value(y).data(), target)?,
        };
        let seed = Tensor::new(g.value(y).shape().to_vec(), seed)?;
        Ok((loss, g.backward(y, seed)?))
    }
}
