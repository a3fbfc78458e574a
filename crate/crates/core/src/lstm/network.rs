//! Single-layer LSTM over a 4-step window, followed by a ReLU dense layer and
//! a softmax output over the nine labels.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{Rows, FEATURES};
use crate::label::NUM_LABELS;

pub const INPUT_SIZE: usize = FEATURES;
/// Hidden width of the full-size model; slower to train than the default.
pub const FULL_HIDDEN: usize = 256;
pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_DENSE: usize = 156;
/// Lower bound applied to the true-class probability before taking the log.
pub const PROB_CLAMP: f64 = 1e-12;

/// Gate order inside [`LstmParams::gate_w`] and [`LstmParams::gate_b`].
pub const FORGET: usize = 0;
pub const INPUT: usize = 1;
pub const CANDIDATE: usize = 2;
pub const OUTPUT: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    fn uniform(dims: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: (0..n).map(|_| rng.gen_range(-bound..=bound)).collect(),
        }
    }
}

/// All trainable tensors. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub hidden: usize,
    pub dense: usize,
    /// `hidden x (hidden + input)` each, acting on `[h_prev, x]`.
    pub gate_w: [Tensor; 4],
    pub gate_b: [Tensor; 4],
    pub dense1_w: Tensor,
    pub dense1_b: Tensor,
    pub dense2_w: Tensor,
    pub dense2_b: Tensor,
}

pub const TENSOR_NAMES: [&str; 12] = [
    "W_f", "W_i", "W_C", "W_o", "b_f", "b_i", "b_C", "b_o", "dense1_W", "dense1_b", "dense2_W",
    "dense2_b",
];

impl LstmParams {
    pub fn zeros(hidden: usize, dense: usize) -> Self {
        let z = hidden + INPUT_SIZE;
        LstmParams {
            hidden,
            dense,
            gate_w: std::array::from_fn(|_| Tensor::zeros(&[hidden, z])),
            gate_b: std::array::from_fn(|_| Tensor::zeros(&[hidden])),
            dense1_w: Tensor::zeros(&[dense, hidden]),
            dense1_b: Tensor::zeros(&[dense]),
            dense2_w: Tensor::zeros(&[NUM_LABELS, dense]),
            dense2_b: Tensor::zeros(&[NUM_LABELS]),
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per layer, seeded.
    pub fn init(hidden: usize, dense: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = hidden + INPUT_SIZE;
        let g = 1.0 / (z as f64).sqrt();
        let d1 = 1.0 / (hidden as f64).sqrt();
        let d2 = 1.0 / (dense as f64).sqrt();
        let gate_w = std::array::from_fn(|_| Tensor::uniform(&[hidden, z], g, &mut rng));
        let gate_b = std::array::from_fn(|_| Tensor::uniform(&[hidden], g, &mut rng));
        LstmParams {
            hidden,
            dense,
            gate_w,
            gate_b,
            dense1_w: Tensor::uniform(&[dense, hidden], d1, &mut rng),
            dense1_b: Tensor::uniform(&[dense], d1, &mut rng),
            dense2_w: Tensor::uniform(&[NUM_LABELS, dense], d2, &mut rng),
            dense2_b: Tensor::uniform(&[NUM_LABELS], d2, &mut rng),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 12] {
        let [wf, wi, wc, wo] = &self.gate_w;
        let [bf, bi, bc, bo] = &self.gate_b;
        [
            wf,
            wi,
            wc,
            wo,
            bf,
            bi,
            bc,
            bo,
            &self.dense1_w,
            &self.dense1_b,
            &self.dense2_w,
            &self.dense2_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        let [wf, wi, wc, wo] = &mut self.gate_w;
        let [bf, bi, bc, bo] = &mut self.gate_b;
        [
            wf,
            wi,
            wc,
            wo,
            bf,
            bi,
            bc,
            bo,
            &mut self.dense1_w,
            &mut self.dense1_b,
            &mut self.dense2_w,
            &mut self.dense2_b,
        ]
    }

    /// Expected dims of every tensor for this hidden/dense size.
    pub fn expected_dims(hidden: usize, dense: usize) -> [Vec<usize>; 12] {
        let z = hidden + INPUT_SIZE;
        [
            vec![hidden, z],
            vec![hidden, z],
            vec![hidden, z],
            vec![hidden, z],
            vec![hidden],
            vec![hidden],
            vec![hidden],
            vec![hidden],
            vec![dense, hidden],
            vec![dense],
            vec![NUM_LABELS, dense],
            vec![NUM_LABELS],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::expected_dims(self.hidden, self.dense);
        for ((t, dims), name) in self.tensors().iter().zip(expected.iter()).zip(TENSOR_NAMES) {
            if &t.dims != dims || t.data.len() != dims.iter().product::<usize>() {
                return Err(Error::Shape(format!(
                    "{name}: expected {dims:?}, got {:?}",
                    t.dims
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn add_assign(&mut self, other: &LstmParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for x in &mut t.data {
                *x *= s;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(hidden: usize) -> Self {
        CellState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y = W x + b` for a row-major `rows x cols` matrix.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

/// Intermediate values of one LSTM step kept for backpropagation.
#[derive(Clone, Debug)]
struct StepCache {
    z: Vec<f64>,
    f: Vec<f64>,
    i: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn cell_forward(params: &LstmParams, x: &[f64], state: &CellState) -> (CellState, StepCache) {
    let hidden = params.hidden;
    let mut z = Vec::with_capacity(hidden + INPUT_SIZE);
    z.extend_from_slice(&state.h);
    z.extend_from_slice(x);
    let mut pre: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hidden]);
    for (gate, p) in pre.iter_mut().enumerate() {
        affine(&params.gate_w[gate].data, &params.gate_b[gate].data, &z, p);
    }
    let f: Vec<f64> = pre[FORGET].iter().map(|&v| sigmoid(v)).collect();
    let i: Vec<f64> = pre[INPUT].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = pre[CANDIDATE].iter().map(|&v| v.tanh()).collect();
    let o: Vec<f64> = pre[OUTPUT].iter().map(|&v| sigmoid(v)).collect();
    let c: Vec<f64> = (0..hidden)
        .map(|k| f[k] * state.c[k] + i[k] * g[k])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..hidden).map(|k| o[k] * tanh_c[k]).collect();
    let cache = StepCache {
        z,
        f,
        i,
        g,
        o,
        c_prev: state.c.clone(),
        tanh_c,
    };
    (CellState { h, c }, cache)
}

/// One LSTM step: gates from `[h_prev, x]`, new cell and hidden state.
pub fn lstm_cell(
    x: &[f64; INPUT_SIZE],
    state: &CellState,
    params: &LstmParams,
) -> Result<CellState> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lstm input"));
    }
    if state.h.len() != params.hidden || state.c.len() != params.hidden {
        return Err(Error::Shape(format!(
            "state size {} vs hidden {}",
            state.h.len(),
            params.hidden
        )));
    }
    Ok(cell_forward(params, x, state).0)
}

struct ForwardCache {
    steps: Vec<StepCache>,
    h_last: Vec<f64>,
    dense_pre: Vec<f64>,
    dense_act: Vec<f64>,
    probs: [f64; NUM_LABELS],
}

pub fn softmax(logits: &[f64; NUM_LABELS]) -> [f64; NUM_LABELS] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: [f64; NUM_LABELS] = std::array::from_fn(|k| (logits[k] - max).exp());
    let sum: f64 = exps.iter().sum();
    std::array::from_fn(|k| exps[k] / sum)
}

fn forward_cached(params: &LstmParams, window: &Rows) -> ForwardCache {
    let mut state = CellState::zeros(params.hidden);
    let mut steps = Vec::with_capacity(window.len());
    for row in window {
        let (next, cache) = cell_forward(params, row, &state);
        steps.push(cache);
        state = next;
    }
    let mut dense_pre = vec![0.0; params.dense];
    affine(
        &params.dense1_w.data,
        &params.dense1_b.data,
        &state.h,
        &mut dense_pre,
    );
    let dense_act: Vec<f64> = dense_pre.iter().map(|&v| v.max(0.0)).collect();
    let mut logits = [0.0; NUM_LABELS];
    affine(
        &params.dense2_w.data,
        &params.dense2_b.data,
        &dense_act,
        &mut logits,
    );
    ForwardCache {
        steps,
        h_last: state.h,
        dense_pre,
        dense_act,
        probs: softmax(&logits),
    }
}

/// Class probabilities for one scaled window.
pub fn forward(params: &LstmParams, window: &Rows) -> Result<[f64; NUM_LABELS]> {
    if window.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("window"));
    }
    Ok(forward_cached(params, window).probs)
}

/// Pre-softmax outputs, used to check shift invariance.
pub fn logits(params: &LstmParams, window: &Rows) -> [f64; NUM_LABELS] {
    let cache = forward_cached(params, window);
    let mut out = [0.0; NUM_LABELS];
    affine(
        &params.dense2_w.data,
        &params.dense2_b.data,
        &cache.dense_act,
        &mut out,
    );
    out
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = k;
        }
    }
    best
}

fn sample_loss(probs: &[f64; NUM_LABELS], label: usize) -> f64 {
    -probs[label].max(PROB_CLAMP).ln()
}

/// Accumulates `scale * dLoss/dParams` for one sample into `grad`; returns
/// the sample loss and whether the argmax matched the label.
fn backward_into(
    params: &LstmParams,
    window: &Rows,
    label: usize,
    scale: f64,
    grad: &mut LstmParams,
) -> (f64, bool) {
    let hidden = params.hidden;
    let dense = params.dense;
    let zdim = hidden + INPUT_SIZE;
    let cache = forward_cached(params, window);
    let loss = sample_loss(&cache.probs, label);
    let hit = argmax(&cache.probs) == label;

    let mut dlogits = [0.0; NUM_LABELS];
    if cache.probs[label] >= PROB_CLAMP {
        for k in 0..NUM_LABELS {
            dlogits[k] = scale * (cache.probs[k] - if k == label { 1.0 } else { 0.0 });
        }
    }

    let mut d_act = vec![0.0; dense];
    for k in 0..NUM_LABELS {
        let row = &params.dense2_w.data[k * dense..(k + 1) * dense];
        let grow = &mut grad.dense2_w.data[k * dense..(k + 1) * dense];
        for j in 0..dense {
            grow[j] += dlogits[k] * cache.dense_act[j];
            d_act[j] += row[j] * dlogits[k];
        }
        grad.dense2_b.data[k] += dlogits[k];
    }

    let mut dh = vec![0.0; hidden];
    for j in 0..dense {
        if cache.dense_pre[j] <= 0.0 {
            continue;
        }
        let dp = d_act[j];
        let row = &params.dense1_w.data[j * hidden..(j + 1) * hidden];
        let grow = &mut grad.dense1_w.data[j * hidden..(j + 1) * hidden];
        for k in 0..hidden {
            grow[k] += dp * cache.h_last[k];
            dh[k] += row[k] * dp;
        }
        grad.dense1_b.data[j] += dp;
    }

    let mut dc_next = vec![0.0; hidden];
    let mut dpre: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hidden]);
    for step in cache.steps.iter().rev() {
        for k in 0..hidden {
            let do_ = dh[k] * step.tanh_c[k];
            let dc = dc_next[k] + dh[k] * step.o[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]);
            let df = dc * step.c_prev[k];
            let di = dc * step.g[k];
            let dg = dc * step.i[k];
            dc_next[k] = dc * step.f[k];
            dpre[FORGET][k] = df * step.f[k] * (1.0 - step.f[k]);
            dpre[INPUT][k] = di * step.i[k] * (1.0 - step.i[k]);
            dpre[CANDIDATE][k] = dg * (1.0 - step.g[k] * step.g[k]);
            dpre[OUTPUT][k] = do_ * step.o[k] * (1.0 - step.o[k]);
        }
        let mut dz = vec![0.0; zdim];
        for gate in 0..4 {
            let w = &params.gate_w[gate].data;
            let gw = &mut grad.gate_w[gate].data;
            for k in 0..hidden {
                let dp = dpre[gate][k];
                if dp == 0.0 {
                    continue;
                }
                let row = &w[k * zdim..(k + 1) * zdim];
                let grow = &mut gw[k * zdim..(k + 1) * zdim];
                for m in 0..zdim {
                    grow[m] += dp * step.z[m];
                    dz[m] += row[m] * dp;
                }
                grad.gate_b[gate].data[k] += dp;
            }
        }
        dh.copy_from_slice(&dz[..hidden]);
    }
    (loss, hit)
}

/// Mean cross-entropy over the batch and its gradient for every tensor.
pub fn loss_and_gradients(
    params: &LstmParams,
    batch_x: &[Rows],
    batch_y: &[usize],
) -> Result<(f64, LstmParams)> {
    if batch_x.len() != batch_y.len() || batch_x.is_empty() {
        return Err(Error::Shape(
            "batch inputs and labels differ in length or are empty".into(),
        ));
    }
    if let Some(bad) = batch_y.iter().find(|&&y| y >= NUM_LABELS) {
        return Err(Error::InvalidInput(format!("label {bad} outside 0..=8")));
    }
    let mut grad = LstmParams::zeros(params.hidden, params.dense);
    let (loss, _) = accumulate(
        params,
        batch_x,
        batch_y,
        1.0 / batch_x.len() as f64,
        &mut grad,
    );
    Ok((loss / batch_x.len() as f64, grad))
}

/// Adds `scale`-weighted gradients into `grad` in index order. Returns the
/// summed loss and the number of correct argmax predictions.
pub(crate) fn accumulate(
    params: &LstmParams,
    batch_x: &[Rows],
    batch_y: &[usize],
    scale: f64,
    grad: &mut LstmParams,
) -> (f64, usize) {
    let mut loss = 0.0;
    let mut hits = 0;
    for (x, &y) in batch_x.iter().zip(batch_y) {
        let (l, hit) = backward_into(params, x, y, scale, grad);
        loss += l;
        hits += usize::from(hit);
    }
    (loss, hits)
}

/// Mean loss without gradients.
pub fn mean_loss(params: &LstmParams, batch_x: &[Rows], batch_y: &[usize]) -> f64 {
    let total: f64 = batch_x
        .iter()
        .zip(batch_y)
        .map(|(x, &y)| sample_loss(&forward_cached(params, x).probs, y))
        .sum();
    total / batch_x.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_window(rng: &mut impl Rng) -> Rows {
        std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-2.0..2.0)))
    }

    #[test]
    fn zero_cell_is_fixed_point() {
        let p = LstmParams::zeros(4, 3);
        let s = lstm_cell(&[0.0; 6], &CellState::zeros(4), &p).unwrap();
        assert!(s.h.iter().chain(&s.c).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_halve_cell() {
        let p = LstmParams::zeros(3, 3);
        let state = CellState {
            h: vec![0.0; 3],
            c: vec![1.0; 3],
        };
        let s = lstm_cell(&[0.3, -1.0, 2.0, 0.0, 5.0, 1.0], &state, &p).unwrap();
        // f = i = o = 0.5, candidate = 0 -> C' = 0.5 C, h' = 0.5 tanh(0.5)
        for k in 0..3 {
            assert!((s.c[k] - 0.5).abs() < 1e-15);
            assert!((s.h[k] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_is_pure() {
        let p = LstmParams::init(5, 4, 3);
        let state = CellState {
            h: vec![0.1, -0.2, 0.3, 0.0, 0.5],
            c: vec![1.0, 0.0, -1.0, 0.2, 0.1],
        };
        let x = [0.5, 1.0, -1.0, 0.0, 2.0, 0.1];
        assert_eq!(
            lstm_cell(&x, &state, &p).unwrap(),
            lstm_cell(&x, &state, &p).unwrap()
        );
        assert!(lstm_cell(&[f64::NAN; 6], &state, &p).is_err());
    }

    #[test]
    fn zero_model_is_uniform() {
        let p = LstmParams::zeros(8, 16);
        let probs = forward(&p, &[[1.0; 6]; 4]).unwrap();
        for v in probs {
            assert!((v - 1.0 / 9.0).abs() < 1e-15);
        }
        let (loss, _) = loss_and_gradients(&p, &[[[0.0; 6]; 4]], &[4]).unwrap();
        assert!((loss - 9f64.ln()).abs() < 1e-12);
        assert!((loss - 2.1972).abs() < 1e-4);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = LstmParams::init(6, 10, 1);
        let w = random_window(&mut rng);
        let base = forward(&p, &w).unwrap();
        let mut shifted = p.clone();
        for b in &mut shifted.dense2_b.data {
            *b += 3.75;
        }
        let moved = forward(&shifted, &w).unwrap();
        for k in 0..NUM_LABELS {
            assert!((base[k] - moved[k]).abs() <= 1e-12);
        }
        let l = logits(&p, &w);
        let l2 = logits(&shifted, &w);
        assert!((l2[0] - l[0] - 3.75).abs() < 1e-12);
    }

    #[test]
    fn duplicated_batch_same_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = LstmParams::init(8, 12, 4);
        let xs: Vec<Rows> = (0..5).map(|_| random_window(&mut rng)).collect();
        let ys = vec![0, 3, 8, 1, 1];
        let (l1, g1) = loss_and_gradients(&p, &xs, &ys).unwrap();
        let xs2: Vec<Rows> = xs.iter().chain(&xs).copied().collect();
        let ys2: Vec<usize> = ys.iter().chain(&ys).copied().collect();
        let (l2, g2) = loss_and_gradients(&p, &xs2, &ys2).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert!(loss_and_gradients(&p, &xs, &[0, 1, 2, 3, 9]).is_err());
    }

    #[test]
    fn clamp_kills_gradient_for_impossible_label() {
        let mut p = LstmParams::zeros(2, 2);
        p.dense2_b.data[0] = 100.0;
        let (loss, g) = loss_and_gradients(&p, &[[[0.0; 6]; 4]], &[5]).unwrap();
        assert!((loss + PROB_CLAMP.ln()).abs() < 1e-9);
        assert!(g.dense2_b.data.iter().all(|&v| v == 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn output_is_simplex(seed in 0u64..1000, scale in 0.01f64..50.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = LstmParams::init(6, 8, seed);
                let w: Rows = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-scale..scale)));
                let probs = forward(&p, &w).unwrap();
                let sum: f64 = probs.iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                prop_assert!(probs.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }
}
