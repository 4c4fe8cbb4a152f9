//! Feed-forward Q-networks with plain, dueling and branching heads.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

/// Negative-side slope of the hidden activations.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Output head of a [`QNet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Head {
    /// One linear layer with `n` Q-values.
    Plain(usize),
    /// Value stream plus `n` advantages, mean-subtracted.
    Dueling(usize),
    /// Shared value stream plus one dueling advantage branch per action dimension.
    Branching(Vec<usize>),
}

impl Head {
    pub fn branch_sizes(&self) -> Vec<usize> {
        match self {
            Head::Plain(n) | Head::Dueling(n) => vec![*n],
            Head::Branching(v) => v.clone(),
        }
    }

    pub(crate) fn code(&self) -> u8 {
        match self {
            Head::Plain(_) => 0,
            Head::Dueling(_) => 1,
            Head::Branching(_) => 2,
        }
    }

    pub(crate) fn from_code(code: u8, sizes: Vec<usize>) -> Result<Self> {
        match (code, sizes.as_slice()) {
            (0, [n]) => Ok(Head::Plain(*n)),
            (1, [n]) => Ok(Head::Dueling(*n)),
            (2, s) if !s.is_empty() => Ok(Head::Branching(sizes)),
            _ => Err(Error::Checkpoint(format!("bad head code {code} with {} branches", sizes.len()))),
        }
    }

    fn has_value(&self) -> bool {
        !matches!(self, Head::Plain(_))
    }
}

/// Fully connected layer `y = x·W + b`, `W` stored as (in, out).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            w: Array2::zeros((n_in, n_out)),
            b: Array1::zeros(n_out),
        }
    }

    /// He-style uniform fan-in initialization for leaky-ReLU units.
    pub fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        let bound = gain * (3.0 / n_in as f64).sqrt();
        let bias_bound = 1.0 / (n_in as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((n_in, n_out), |_| rng.random_range(-bound..bound)),
            b: Array1::from_shape_fn(n_out, |_| rng.random_range(-bias_bound..bias_bound)),
        }
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Q-network: leaky-ReLU trunk followed by a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    input: usize,
    head: Head,
    trunk: Vec<Dense>,
    value: Option<Dense>,
    outputs: Vec<Dense>,
}

/// Activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Inputs of each trunk layer, then the trunk output.
    acts: Vec<Array2<f64>>,
    /// Pre-activations of each trunk layer.
    pre: Vec<Array2<f64>>,
}

/// Gradients laid out like [`QNet::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Dense>,
}

impl Grads {
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.iter().chain(l.b.iter()).map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w *= s;
            l.b *= s;
        }
    }
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

impl QNet {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], head: Head, rng: &mut R) -> Result<Self> {
        if input == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::domain("network layers must be non-empty"));
        }
        if head.branch_sizes().contains(&0) {
            return Err(Error::domain("head sizes must be >= 1"));
        }
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut fan_in = input;
        for &h in hidden {
            trunk.push(Dense::init(fan_in, h, rng));
            fan_in = h;
        }
        let value = head.has_value().then(|| Dense::init(fan_in, 1, rng));
        let outputs = head.branch_sizes().into_iter().map(|n| Dense::init(fan_in, n, rng)).collect();
        Ok(Self {
            input,
            head,
            trunk,
            value,
            outputs,
        })
    }

    /// Same architecture with every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.w.nrows(), d.w.ncols());
        Self {
            input: self.input,
            head: self.head.clone(),
            trunk: self.trunk.iter().map(z).collect(),
            value: self.value.as_ref().map(z),
            outputs: self.outputs.iter().map(z).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.trunk.iter().map(|d| d.w.ncols()).collect()
    }

    pub fn n_branches(&self) -> usize {
        self.outputs.len()
    }

    /// Layers in canonical order: trunk, value (if any), outputs.
    pub fn layers(&self) -> Vec<&Dense> {
        self.trunk.iter().chain(self.value.iter()).chain(self.outputs.iter()).collect()
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        self.trunk
            .iter_mut()
            .chain(self.value.iter_mut())
            .chain(self.outputs.iter_mut())
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|l| l.n_params()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()))
    }

    /// Parameters flattened in canonical order (weights row-major, then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in self.layers() {
            v.extend(l.w.iter());
            v.extend(l.b.iter());
        }
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.n_params();
        if flat.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: flat.len(),
            });
        }
        let mut it = flat.iter();
        for l in self.layers_mut() {
            for (x, v) in l.w.iter_mut().zip(&mut it) {
                *x = *v;
            }
            for (x, v) in l.b.iter_mut().zip(&mut it) {
                *x = *v;
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input {
            return Err(Error::Dimension {
                expected: self.input,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn trunk_forward(&self, x: &ArrayView2<f64>, keep: bool) -> (Array2<f64>, Option<Tape>) {
        let mut acts = Vec::new();
        let mut pre = Vec::new();
        let mut h = x.to_owned();
        for layer in &self.trunk {
            let z = layer.forward(&h.view());
            let a = z.mapv(leaky);
            if keep {
                acts.push(std::mem::replace(&mut h, a));
                pre.push(z);
            } else {
                h = a;
            }
        }
        if keep {
            acts.push(h.clone());
            return (h, Some(Tape { acts, pre }));
        }
        (h, None)
    }

    fn head_forward(&self, top: &Array2<f64>) -> Vec<Array2<f64>> {
        let top = top.view();
        let value = self.value.as_ref().map(|v| v.forward(&top));
        self.outputs
            .iter()
            .map(|o| {
                let mut q = o.forward(&top);
                if let Some(v) = &value {
                    let mean = q.mean_axis(Axis(1)).expect("non-empty head");
                    Zip::from(q.rows_mut()).and(&mean).and(v.column(0)).for_each(|mut row, &mu, &vv| {
                        row.mapv_inplace(|a| a - mu + vv);
                    });
                }
                q
            })
            .collect()
    }

    /// Q-values per branch for a batch of inputs (one row per sample).
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.check_input(&x)?;
        let (top, _) = self.trunk_forward(&x, false);
        Ok(self.head_forward(&top))
    }

    pub fn forward_tape(&self, x: ArrayView2<f64>) -> Result<(Vec<Array2<f64>>, Tape)> {
        self.check_input(&x)?;
        let (top, tape) = self.trunk_forward(&x, true);
        Ok((self.head_forward(&top), tape.expect("tape requested")))
    }

    /// Gradients of a scalar loss given `dL/dQ` for every branch.
    pub fn backward(&self, tape: &Tape, dq: &[Array2<f64>]) -> Result<Grads> {
        if dq.len() != self.outputs.len() {
            return Err(Error::Dimension {
                expected: self.outputs.len(),
                got: dq.len(),
            });
        }
        let top = tape.acts.last().expect("tape has trunk output");
        let batch = top.nrows();
        let mut d_top = Array2::<f64>::zeros(top.raw_dim());
        let mut out_grads = Vec::with_capacity(self.outputs.len());
        let mut d_value = self.value.as_ref().map(|_| Array2::<f64>::zeros((batch, 1)));

        for (o, g) in self.outputs.iter().zip(dq) {
            // dueling: dQ/dA = I - 1/n, dQ/dV = 1
            let d_adv = match &mut d_value {
                Some(dv) => {
                    let mean = g.mean_axis(Axis(1)).expect("non-empty head");
                    let sum = g.sum_axis(Axis(1));
                    Zip::from(dv.column_mut(0)).and(&sum).for_each(|a, &s| *a += s);
                    let mut d = g.clone();
                    Zip::from(d.rows_mut()).and(&mean).for_each(|mut row, &mu| row -= mu);
                    d
                }
                None => g.clone(),
            };
            out_grads.push(Dense {
                w: top.t().dot(&d_adv),
                b: d_adv.sum_axis(Axis(0)),
            });
            d_top += &d_adv.dot(&o.w.t());
        }
        let value_grad = match (&self.value, &d_value) {
            (Some(v), Some(dv)) => {
                d_top += &dv.dot(&v.w.t());
                Some(Dense {
                    w: top.t().dot(dv),
                    b: dv.sum_axis(Axis(0)),
                })
            }
            _ => None,
        };

        let mut trunk_grads = Vec::with_capacity(self.trunk.len());
        let mut delta = d_top;
        for (i, layer) in self.trunk.iter().enumerate().rev() {
            Zip::from(&mut delta).and(&tape.pre[i]).for_each(|d, &z| {
                if z <= 0.0 {
                    *d *= LEAKY_SLOPE;
                }
            });
            let input = &tape.acts[i];
            trunk_grads.push(Dense {
                w: input.t().dot(&delta),
                b: delta.sum_axis(Axis(0)),
            });
            if i > 0 {
                delta = delta.dot(&layer.w.t());
            }
        }
        trunk_grads.reverse();
        Ok(Grads {
            layers: trunk_grads.into_iter().chain(value_grad).chain(out_grads).collect(),
        })
    }

    /// `self ← τ·src + (1−τ)·self`.
    pub fn soft_update_from(&mut self, src: &QNet, tau: f64) {
        for (t, s) in self.layers_mut().into_iter().zip(src.layers()) {
            Zip::from(&mut t.w).and(&s.w).for_each(|a, &b| *a = tau * b + (1.0 - tau) * *a);
            Zip::from(&mut t.b).and(&s.b).for_each(|a, &b| *a = tau * b + (1.0 - tau) * *a);
        }
    }
}
