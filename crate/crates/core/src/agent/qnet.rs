//! Q-function approximators with hand-written backpropagation.
//!
//! Parameters live in one flat `Vec<f64>`; layers are views into it. That
//! keeps the optimizer, target-network sync, checkpointing and finite
//! difference checks agnostic of the architecture.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use ndarray::linalg::general_mat_mul;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fastmath, AgentError};
use crate::encoder::{HISTORY_DIM, HISTORY_LEN};
use crate::env::Action;

const N_ACTIONS: usize = Action::COUNT;

/// Network topology. The state is `features ++ flattened history`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// Two branches: a ReLU stack over the features and an LSTM reading the
    /// history rows oldest-first; their outputs are concatenated into a
    /// linear head.
    LstmFcn { dense1: usize, dense2: usize, lstm_hidden: usize },
    /// One ReLU hidden layer over the whole state vector.
    Mlp { hidden: usize },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::LstmFcn { dense1: 256, dense2: 64, lstm_hidden: 32 }
    }
}

impl Architecture {
    pub fn id(&self) -> &'static str {
        match self {
            Architecture::LstmFcn { .. } => "lstm_fcn",
            Architecture::Mlp { .. } => "mlp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Block {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

/// Weight matrix (`in x out`) and bias (`1 x out`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    w: Block,
    b: Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Lstm {
    wx: Block,
    wh: Block,
    b: Block,
    hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    LstmFcn { feat: usize, d1: Dense, d2: Dense, lstm: Lstm, head: Dense },
    Mlp { d1: Dense, head: Dense },
}

struct Allocator(usize);

impl Allocator {
    fn block(&mut self, rows: usize, cols: usize) -> Block {
        let b = Block { offset: self.0, rows, cols };
        self.0 += rows * cols;
        b
    }

    fn dense(&mut self, inp: usize, out: usize) -> Dense {
        Dense { w: self.block(inp, out), b: self.block(1, out) }
    }
}

fn layout(arch: &Architecture, input_dim: usize) -> Result<(Layout, usize), AgentError> {
    let mut a = Allocator(0);
    let lay = match *arch {
        Architecture::LstmFcn { dense1, dense2, lstm_hidden } => {
            if input_dim <= HISTORY_DIM {
                return Err(AgentError::Architecture(format!(
                    "input_dim {input_dim} leaves no room for features beside the {HISTORY_DIM} history values"
                )));
            }
            let feat = input_dim - HISTORY_DIM;
            let d1 = a.dense(feat, dense1);
            let d2 = a.dense(dense1, dense2);
            let lstm = Lstm {
                wx: a.block(N_ACTIONS, 4 * lstm_hidden),
                wh: a.block(lstm_hidden, 4 * lstm_hidden),
                b: a.block(1, 4 * lstm_hidden),
                hidden: lstm_hidden,
            };
            let head = a.dense(dense2 + lstm_hidden, N_ACTIONS);
            Layout::LstmFcn { feat, d1, d2, lstm, head }
        }
        Architecture::Mlp { hidden } => {
            let d1 = a.dense(input_dim, hidden);
            let head = a.dense(hidden, N_ACTIONS);
            Layout::Mlp { d1, head }
        }
    };
    Ok((lay, a.0))
}

/// A trainable map from state vectors to nine action values.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    arch: Architecture,
    input_dim: usize,
    layout: Layout,
    params: Vec<f64>,
}

impl QFunction {
    /// All-zero parameters.
    pub fn zeros(arch: Architecture, input_dim: usize) -> Result<Self, AgentError> {
        let (layout, n) = layout(&arch, input_dim)?;
        Ok(Self { arch, input_dim, layout, params: vec![0.0; n] })
    }

    /// Glorot-uniform dense weights, uniform `±1/sqrt(hidden)` LSTM weights
    /// with forget-gate bias 1, zero biases elsewhere.
    pub fn new_seeded(arch: Architecture, input_dim: usize, seed: u64) -> Result<Self, AgentError> {
        let mut q = Self::zeros(arch, input_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |params: &mut [f64], blk: Block| {
            let lim = (6.0 / (blk.rows + blk.cols) as f64).sqrt();
            for p in &mut params[blk.offset..blk.offset + blk.len()] {
                *p = rng.random_range(-lim..lim);
            }
        };
        match q.layout {
            Layout::LstmFcn { d1, d2, lstm, head, .. } => {
                glorot(&mut q.params, d1.w);
                glorot(&mut q.params, d2.w);
                glorot(&mut q.params, head.w);
                let lim = 1.0 / (lstm.hidden as f64).sqrt();
                for blk in [lstm.wx, lstm.wh] {
                    for p in &mut q.params[blk.offset..blk.offset + blk.len()] {
                        *p = rng.random_range(-lim..lim);
                    }
                }
                let h = lstm.hidden;
                for p in &mut q.params[lstm.b.offset + h..lstm.b.offset + 2 * h] {
                    *p = 1.0;
                }
            }
            Layout::Mlp { d1, head } => {
                glorot(&mut q.params, d1.w);
                glorot(&mut q.params, head.w);
            }
        }
        Ok(q)
    }

    /// Rebuilds a network from serialized parts.
    pub fn from_parts(arch: Architecture, input_dim: usize, params: Vec<f64>) -> Result<Self, AgentError> {
        let mut q = Self::zeros(arch, input_dim)?;
        if params.len() != q.params.len() {
            return Err(AgentError::Architecture(format!(
                "{} parameters supplied, {} expected for {} with input_dim {input_dim}",
                params.len(),
                q.params.len(),
                arch.id()
            )));
        }
        q.params = params;
        Ok(q)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn architecture_id(&self) -> &'static str {
        self.arch.id()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Copies `other`'s parameters into `self`; both must share a topology.
    pub fn copy_from(&mut self, other: &QFunction) -> Result<(), AgentError> {
        if self.arch != other.arch || self.input_dim != other.input_dim {
            return Err(AgentError::Architecture(format!(
                "cannot copy {}({}) into {}({})",
                other.arch.id(),
                other.input_dim,
                self.arch.id(),
                self.input_dim
            )));
        }
        self.params.copy_from_slice(&other.params);
        Ok(())
    }

    fn view(&self, blk: Block) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((blk.rows, blk.cols), &self.params[blk.offset..blk.offset + blk.len()])
            .expect("block lies inside the parameter vector")
    }

    fn bias(&self, blk: Block) -> ndarray::ArrayView1<'_, f64> {
        self.view(blk).index_axis_move(Axis(0), 0)
    }

    fn check_dim(&self, got: usize) -> Result<(), AgentError> {
        if got != self.input_dim {
            return Err(AgentError::Dimension { expected: self.input_dim, got });
        }
        Ok(())
    }

    /// Action values for one state.
    pub fn q_values(&self, state: &[f32]) -> Result<[f64; N_ACTIONS], AgentError> {
        self.check_dim(state.len())?;
        let x = Array2::from_shape_fn((1, state.len()), |(_, j)| state[j] as f64);
        let q = self.forward(&x).0;
        Ok(std::array::from_fn(|a| q[[0, a]]))
    }

    /// Action values for a batch, one state per row.
    pub fn q_values_batch(&self, states: &Array2<f64>) -> Result<Array2<f64>, AgentError> {
        self.check_dim(states.ncols())?;
        Ok(self.forward(states).0)
    }

    /// Mean squared error of `Q(s_i, a_i)` against `targets_i` and its
    /// gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        states: &Array2<f64>,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Vec<f64>), AgentError> {
        self.check_dim(states.ncols())?;
        let b = states.nrows();
        if actions.len() != b || targets.len() != b || b == 0 {
            return Err(AgentError::BatchMismatch { states: b, actions: actions.len(), targets: targets.len() });
        }
        let (q, cache) = self.forward(states);
        let mut dq = Array2::<f64>::zeros((b, N_ACTIONS));
        let mut loss = 0.0;
        for i in 0..b {
            let err = q[[i, actions[i]]] - targets[i];
            loss += err * err;
            dq[[i, actions[i]]] = 2.0 * err / b as f64;
        }
        let grad = self.backward(states, &cache, &dq);
        Ok((loss / b as f64, grad))
    }

    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Cache) {
        match self.layout {
            Layout::Mlp { d1, head } => {
                let a1 = x.dot(&self.view(d1.w)) + self.bias(d1.b);
                let h1 = a1.mapv(relu);
                let q = h1.dot(&self.view(head.w)) + self.bias(head.b);
                (q, Cache::Mlp { a1, h1 })
            }
            Layout::LstmFcn { feat, d1, d2, lstm, head } => {
                let f = x.slice(s![.., ..feat]);
                let a1 = f.dot(&self.view(d1.w)) + self.bias(d1.b);
                let h1 = a1.mapv(relu);
                let a2 = h1.dot(&self.view(d2.w)) + self.bias(d2.b);
                let h2 = a2.mapv(relu);

                let b = x.nrows();
                let hd = lstm.hidden;
                let wx = self.view(lstm.wx);
                let wh = self.view(lstm.wh);
                let bias = self.bias(lstm.b);
                let mut h = Array2::<f64>::zeros((b, hd));
                let mut c = Array2::<f64>::zeros((b, hd));
                let mut steps = Vec::with_capacity(HISTORY_LEN);
                for step in 0..HISTORY_LEN {
                    let xs = history_row(x, feat, step);
                    let mut z = Array2::from_shape_fn((b, 4 * hd), |(_, j)| bias[j]);
                    general_mat_mul(1.0, &xs, &wx, 1.0, &mut z);
                    general_mat_mul(1.0, &h, &wh, 1.0, &mut z);
                    let mut h_next = Array2::<f64>::zeros((b, hd));
                    let mut c_next = Array2::<f64>::zeros((b, hd));
                    let mut tanh_c = Array2::<f64>::zeros((b, hd));
                    for r in 0..b {
                        // Gate order: input, forget, candidate, output.
                        let zr = z.row_mut(r).into_slice().expect("standard layout");
                        let (sig, rest) = zr.split_at_mut(2 * hd);
                        let (gg, go) = rest.split_at_mut(hd);
                        sig.iter_mut().for_each(|v| *v = fastmath::sigmoid(*v));
                        gg.iter_mut().for_each(|v| *v = fastmath::tanh(*v));
                        go.iter_mut().for_each(|v| *v = fastmath::sigmoid(*v));
                        let (gi, gf) = sig.split_at(hd);
                        let cp = c.row(r);
                        let mut cn = c_next.row_mut(r);
                        let mut tc = tanh_c.row_mut(r);
                        let mut hn = h_next.row_mut(r);
                        for k in 0..hd {
                            let v = gf[k] * cp[k] + gi[k] * gg[k];
                            let t = fastmath::tanh(v);
                            cn[k] = v;
                            tc[k] = t;
                            hn[k] = go[k] * t;
                        }
                    }
                    steps.push(LstmStep { h_prev: h, c_prev: c, gates: z, tanh_c });
                    h = h_next;
                    c = c_next;
                }
                let mut u = Array2::<f64>::zeros((b, h2.ncols() + hd));
                u.slice_mut(s![.., ..h2.ncols()]).assign(&h2);
                u.slice_mut(s![.., h2.ncols()..]).assign(&h);
                let q = u.dot(&self.view(head.w)) + self.bias(head.b);
                (q, Cache::LstmFcn { a1, h1, a2, u, steps })
            }
        }
    }

    fn backward(&self, x: &Array2<f64>, cache: &Cache, dq: &Array2<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        match (self.layout, cache) {
            (Layout::Mlp { d1, head }, Cache::Mlp { a1, h1 }) => {
                let dh1 = dense_backward(&mut grad, head, h1.view(), dq, &self.view(head.w));
                let da1 = relu_backward(dh1, a1);
                dense_backward(&mut grad, d1, x.view(), &da1, &self.view(d1.w));
            }
            (Layout::LstmFcn { feat, d1, d2, lstm, head }, Cache::LstmFcn { a1, h1, a2, u, steps }) => {
                let du = dense_backward(&mut grad, head, u.view(), dq, &self.view(head.w));
                let n2 = a2.ncols();
                let dh2 = du.slice(s![.., ..n2]).to_owned();
                let mut dh = du.slice(s![.., n2..]).to_owned();

                let da2 = relu_backward(dh2, a2);
                let dh1 = dense_backward(&mut grad, d2, h1.view(), &da2, &self.view(d2.w));
                let da1 = relu_backward(dh1, a1);
                dense_backward(&mut grad, d1, x.slice(s![.., ..feat]), &da1, &self.view(d1.w));

                let hd = lstm.hidden;
                let wh = self.view(lstm.wh);
                let mut dwx = Array2::<f64>::zeros((N_ACTIONS, 4 * hd));
                let mut dwh = Array2::<f64>::zeros((hd, 4 * hd));
                let mut db = Array1::<f64>::zeros(4 * hd);
                let mut dc = Array2::<f64>::zeros(dh.raw_dim());
                let mut dz = Array2::<f64>::zeros((dh.nrows(), 4 * hd));
                for (step, st) in steps.iter().enumerate().rev() {
                    for r in 0..dz.nrows() {
                        let g = st.gates.row(r);
                        for k in 0..hd {
                            let (gi, gf, gg, go) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
                            let tc = st.tanh_c[[r, k]];
                            let d_h = dh[[r, k]];
                            let d_c = dc[[r, k]] + d_h * go * (1.0 - tc * tc);
                            dz[[r, k]] = d_c * gg * gi * (1.0 - gi);
                            dz[[r, hd + k]] = d_c * st.c_prev[[r, k]] * gf * (1.0 - gf);
                            dz[[r, 2 * hd + k]] = d_c * gi * (1.0 - gg * gg);
                            dz[[r, 3 * hd + k]] = d_h * tc * go * (1.0 - go);
                            dc[[r, k]] = d_c * gf;
                        }
                    }
                    let xs = history_row(x, feat, step);
                    general_mat_mul(1.0, &xs.t(), &dz, 1.0, &mut dwx);
                    general_mat_mul(1.0, &st.h_prev.t(), &dz, 1.0, &mut dwh);
                    db += &dz.sum_axis(Axis(0));
                    general_mat_mul(1.0, &dz, &wh.t(), 0.0, &mut dh);
                }
                add_block(&mut grad, lstm.wx, dwx.view());
                add_block(&mut grad, lstm.wh, dwh.view());
                add_block(&mut grad, lstm.b, db.view().insert_axis(Axis(0)));
            }
            _ => unreachable!("cache built by the same layout"),
        }
        grad
    }
}

struct LstmStep {
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// Activated gates `[i, f, g, o]`.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

enum Cache {
    Mlp { a1: Array2<f64>, h1: Array2<f64> },
    LstmFcn { a1: Array2<f64>, h1: Array2<f64>, a2: Array2<f64>, u: Array2<f64>, steps: Vec<LstmStep> },
}

/// History row fed at sequence position `step`; position 0 is the oldest row.
fn history_row(x: &Array2<f64>, feat: usize, step: usize) -> ArrayView2<'_, f64> {
    let row = HISTORY_LEN - 1 - step;
    let start = feat + row * N_ACTIONS;
    x.slice(s![.., start..start + N_ACTIONS])
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn relu_backward(mut d: Array2<f64>, pre: &Array2<f64>) -> Array2<f64> {
    d.zip_mut_with(pre, |g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
    d
}

/// Accumulates `dW = input^T dout`, `db = sum(dout)` and returns `dout W^T`.
fn dense_backward(
    grad: &mut [f64],
    layer: Dense,
    input: ArrayView2<'_, f64>,
    dout: &Array2<f64>,
    w: &ArrayView2<'_, f64>,
) -> Array2<f64> {
    add_block(grad, layer.w, input.t().dot(dout).view());
    add_block(grad, layer.b, dout.sum_axis(Axis(0)).view().insert_axis(Axis(0)));
    dout.dot(&w.t())
}

fn add_block(grad: &mut [f64], blk: Block, m: ArrayView2<'_, f64>) {
    debug_assert_eq!(m.dim(), (blk.rows, blk.cols));
    let dst = &mut grad[blk.offset..blk.offset + blk.len()];
    for (g, v) in dst.iter_mut().zip(m.iter()) {
        *g += v;
    }
}

/// Stacks `f32` states into an `f64` matrix.
pub fn stack_states<'a, I>(states: I, dim: usize) -> Array2<f64>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let rows: Vec<&[f32]> = states.into_iter().collect();
    Array2::from_shape_fn((rows.len(), dim), |(i, j)| rows[i][j] as f64)
}
