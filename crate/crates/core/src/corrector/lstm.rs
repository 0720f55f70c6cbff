//! Recurrent regressor: input linear layer with ReLU, stacked LSTM layers,
//! output linear layer. Parameters live in one flat buffer so optimizers and
//! the weight file can treat them uniformly.
//!
//! Flat layout, every matrix row-major with shape (fan-in, fan-out):
//! `w_in, b_in`, then per LSTM layer `w_x, w_h, b` (gate order i, f, g, o),
//! then `w_out, b_out`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorrectorError;

pub trait Real:
    Float + LinalgScalar + ScalarOperand + std::ops::MulAssign + std::iter::Sum + std::fmt::Debug + Send + Sync
{
}
impl Real for f32 {}
impl Real for f64 {}

fn c<F: Real>(x: f64) -> F {
    F::from(x).expect("representable constant")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub output: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self { input: super::features::FEATURE_DIM, hidden: 256, layers: 2, output: 5 }
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    w_x: usize,
    w_h: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Offsets {
    w_in: usize,
    b_in: usize,
    layers: Vec<LayerOffsets>,
    w_out: usize,
    b_out: usize,
    total: usize,
}

impl Dims {
    fn offsets(&self) -> Offsets {
        let h = self.hidden;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let w_in = take(self.input * h);
        let b_in = take(h);
        let layers = (0..self.layers)
            .map(|_| LayerOffsets { w_x: take(h * 4 * h), w_h: take(h * 4 * h), b: take(4 * h) })
            .collect();
        let w_out = take(h * self.output);
        let b_out = take(self.output);
        Offsets { w_in, b_in, layers, w_out, b_out, total: at }
    }

    pub fn param_count(&self) -> usize {
        self.offsets().total
    }

    fn validate(&self) -> Result<(), CorrectorError> {
        if self.input == 0 || self.hidden == 0 || self.layers == 0 || self.output == 0 {
            return Err(CorrectorError::Shape(format!("all dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Recurrent state of every layer, `batch × hidden` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<F> {
    pub h: Vec<Array2<F>>,
    pub c: Vec<Array2<F>>,
}

impl<F: Real> LstmState<F> {
    pub fn zeros(dims: &Dims, batch: usize) -> Self {
        Self {
            h: (0..dims.layers).map(|_| Array2::zeros((batch, dims.hidden))).collect(),
            c: (0..dims.layers).map(|_| Array2::zeros((batch, dims.hidden))).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.c).all(|a| a.iter().all(|x| x.is_finite()))
    }
}

/// Dropout keep-masks (already scaled by 1/(1 − p)); `None` disables a site.
#[derive(Debug, Clone)]
pub struct Masks<F> {
    pub input: Option<Array2<F>>,
    /// After each LSTM layer except the last.
    pub between: Vec<Option<Array2<F>>>,
}

impl<F: Real> Masks<F> {
    pub fn sample(dims: &Dims, rows: usize, p: f64, rng: &mut impl Rng) -> Self {
        let mut draw = || {
            if p <= 0.0 {
                return None;
            }
            let scale = c::<F>(1.0 / (1.0 - p));
            Some(Array2::from_shape_simple_fn((rows, dims.hidden), || {
                if rng.random::<f64>() < p {
                    F::zero()
                } else {
                    scale
                }
            }))
        };
        let input = draw();
        let between = (0..dims.layers.saturating_sub(1)).map(|_| draw()).collect();
        Self { input, between }
    }
}

#[derive(Debug, Clone)]
struct LayerCache<F> {
    input: Array2<F>,
    gates: Array2<F>,
    c: Array2<F>,
    h: Array2<F>,
    h0: Array2<F>,
    c0: Array2<F>,
}

/// Activations kept by [`Lstm::forward`] for [`Lstm::backward`].
#[derive(Debug, Clone)]
pub struct Cache<F> {
    steps: usize,
    batch: usize,
    x: Array2<F>,
    relu: Array2<F>,
    layers: Vec<LayerCache<F>>,
    top: Array2<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<F> {
    dims: Dims,
    params: Vec<F>,
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn check_finite<F: Real>(a: &Array2<F>, layer: &str) -> Result<(), CorrectorError> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(CorrectorError::NumericalBlowUp { layer: layer.to_string() })
    }
}

impl<F: Real> Lstm<F> {
    pub fn zeros(dims: Dims) -> Result<Self, CorrectorError> {
        dims.validate()?;
        Ok(Self { dims, params: vec![F::zero(); dims.param_count()] })
    }

    /// Glorot-uniform matrices, zero biases except a forget-gate bias of 1.
    pub fn init(dims: Dims, seed: u64) -> Result<Self, CorrectorError> {
        let mut net = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = dims.offsets();
        let h = dims.hidden;
        let mut fill = |params: &mut [F], off: usize, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[off..off + fan_in * fan_out] {
                *p = c(rng.random_range(-limit..limit));
            }
        };
        fill(&mut net.params, o.w_in, dims.input, h);
        for l in &o.layers {
            fill(&mut net.params, l.w_x, h, 4 * h);
            fill(&mut net.params, l.w_h, h, 4 * h);
            for p in &mut net.params[l.b + h..l.b + 2 * h] {
                *p = F::one();
            }
        }
        fill(&mut net.params, o.w_out, h, dims.output);
        Ok(net)
    }

    pub fn from_params(dims: Dims, params: Vec<F>) -> Result<Self, CorrectorError> {
        dims.validate()?;
        if params.len() != dims.param_count() {
            return Err(CorrectorError::Shape(format!(
                "expected {} parameters, got {}",
                dims.param_count(),
                params.len()
            )));
        }
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn cast<G: Real>(&self) -> Lstm<G> {
        Lstm {
            dims: self.dims,
            params: self.params.iter().map(|p| G::from(*p).expect("finite parameter")).collect(),
        }
    }

    fn mat(&self, off: usize, rows: usize, cols: usize) -> ArrayView2<'_, F> {
        ArrayView2::from_shape((rows, cols), &self.params[off..off + rows * cols]).expect("layout")
    }

    fn row(&self, off: usize, cols: usize) -> ArrayView2<'_, F> {
        self.mat(off, 1, cols)
    }

    /// Runs `steps` time steps of a batch. Row `t * batch + b` of `x` is
    /// time `t` of sequence `b`. Returns outputs in the same row order, the
    /// cache for backpropagation and the final recurrent state.
    pub fn forward(
        &self,
        x: ArrayView2<F>,
        steps: usize,
        batch: usize,
        init: &LstmState<F>,
        masks: Option<&Masks<F>>,
    ) -> Result<(Array2<F>, Cache<F>, LstmState<F>), CorrectorError> {
        let d = self.dims;
        let h = d.hidden;
        let rows = steps * batch;
        if x.dim() != (rows, d.input) {
            return Err(CorrectorError::Shape(format!("input is {:?}, expected ({rows}, {})", x.dim(), d.input)));
        }
        let o = d.offsets();

        let mut relu = x.dot(&self.mat(o.w_in, d.input, h)) + self.row(o.b_in, h);
        relu.mapv_inplace(|v| v.max(F::zero()));
        check_finite(&relu, "input")?;
        let mut z = match masks.and_then(|m| m.input.as_ref()) {
            Some(m) => &relu * m,
            None => relu.clone(),
        };

        let mut layers = Vec::with_capacity(d.layers);
        let mut final_state = LstmState { h: Vec::new(), c: Vec::new() };
        for (l, lo) in o.layers.iter().enumerate() {
            let w_h = self.mat(lo.w_h, h, 4 * h);
            let mut gates = z.dot(&self.mat(lo.w_x, h, 4 * h)) + self.row(lo.b, 4 * h);
            let mut c_all = Array2::<F>::zeros((rows, h));
            let mut h_all = Array2::<F>::zeros((rows, h));
            let mut h_prev = init.h[l].clone();
            let mut c_prev = init.c[l].clone();
            for t in 0..steps {
                let span = t * batch..(t + 1) * batch;
                let mut g_t = gates.slice_mut(s![span.clone(), ..]);
                general_mat_mul(F::one(), &h_prev, &w_h, F::one(), &mut g_t);
                let mut c_t = c_all.slice_mut(s![span.clone(), ..]);
                let mut h_t = h_all.slice_mut(s![span, ..]);
                for b in 0..batch {
                    let g = g_t.row_mut(b).into_slice().expect("contiguous gate row");
                    for j in 0..h {
                        let i = sigmoid(g[j]);
                        let f = sigmoid(g[h + j]);
                        let gg = g[2 * h + j].tanh();
                        let og = sigmoid(g[3 * h + j]);
                        g[j] = i;
                        g[h + j] = f;
                        g[2 * h + j] = gg;
                        g[3 * h + j] = og;
                        let cell = f * c_prev[[b, j]] + i * gg;
                        c_t[[b, j]] = cell;
                        h_t[[b, j]] = og * cell.tanh();
                    }
                }
                h_prev = h_t.to_owned();
                c_prev = c_t.to_owned();
            }
            check_finite(&h_all, &format!("lstm{}", l + 1))?;
            let next = match masks.and_then(|m| m.between.get(l)).and_then(|m| m.as_ref()) {
                Some(m) => &h_all * m,
                None => h_all.clone(),
            };
            final_state.h.push(h_prev);
            final_state.c.push(c_prev);
            layers.push(LayerCache {
                input: std::mem::replace(&mut z, next),
                gates,
                c: c_all,
                h: h_all,
                h0: init.h[l].clone(),
                c0: init.c[l].clone(),
            });
        }
        let y = z.dot(&self.mat(o.w_out, h, d.output)) + self.row(o.b_out, d.output);
        check_finite(&y, "output")?;
        let cache = Cache { steps, batch, x: x.to_owned(), relu, layers, top: z };
        Ok((y, cache, final_state))
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// gradient `dy` with respect to the outputs of [`Lstm::forward`].
    pub fn backward(&self, cache: &Cache<F>, dy: &Array2<F>, masks: Option<&Masks<F>>) -> Vec<F> {
        let d = self.dims;
        let h = d.hidden;
        let o = d.offsets();
        let (steps, batch) = (cache.steps, cache.batch);
        let rows = steps * batch;
        let mut grad = vec![F::zero(); o.total];

        let add = |grad: &mut [F], off: usize, m: &Array2<F>| {
            for (g, v) in grad[off..off + m.len()].iter_mut().zip(m.iter()) {
                *g = *g + *v;
            }
        };

        add(&mut grad, o.w_out, &cache.top.t().dot(dy));
        add(&mut grad, o.b_out, &dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let mut dz = dy.dot(&self.mat(o.w_out, h, d.output).t());

        for (l, lo) in o.layers.iter().enumerate().rev() {
            let lc = &cache.layers[l];
            if let Some(m) = masks.and_then(|m| m.between.get(l)).and_then(|m| m.as_ref()) {
                dz *= m;
            }
            let w_h = self.mat(lo.w_h, h, 4 * h);
            let mut da = Array2::<F>::zeros((rows, 4 * h));
            let mut dh_next = Array2::<F>::zeros((batch, h));
            let mut dc_next = Array2::<F>::zeros((batch, h));
            for t in (0..steps).rev() {
                for b in 0..batch {
                    let r = t * batch + b;
                    let g = lc.gates.row(r);
                    let mut dar = da.row_mut(r);
                    for j in 0..h {
                        let (i, f, gg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                        let cell = lc.c[[r, j]];
                        let c_prev = if t > 0 { lc.c[[r - batch, j]] } else { lc.c0[[b, j]] };
                        let tc = cell.tanh();
                        let dh = dz[[r, j]] + dh_next[[b, j]];
                        let d_o = dh * tc;
                        let dc = dh * og * (F::one() - tc * tc) + dc_next[[b, j]];
                        dc_next[[b, j]] = dc * f;
                        dar[j] = dc * gg * i * (F::one() - i);
                        dar[h + j] = dc * c_prev * f * (F::one() - f);
                        dar[2 * h + j] = dc * i * (F::one() - gg * gg);
                        dar[3 * h + j] = d_o * og * (F::one() - og);
                    }
                }
                let da_t = da.slice(s![t * batch..(t + 1) * batch, ..]);
                dh_next = da_t.dot(&w_h.t());
            }
            let mut h_prev = Array2::<F>::zeros((rows, h));
            h_prev.slice_mut(s![..batch, ..]).assign(&lc.h0);
            if steps > 1 {
                h_prev.slice_mut(s![batch.., ..]).assign(&lc.h.slice(s![..rows - batch, ..]));
            }
            add(&mut grad, lo.w_x, &lc.input.t().dot(&da));
            add(&mut grad, lo.w_h, &h_prev.t().dot(&da));
            add(&mut grad, lo.b, &da.sum_axis(Axis(0)).insert_axis(Axis(0)));
            dz = da.dot(&self.mat(lo.w_x, h, 4 * h).t());
        }

        if let Some(m) = masks.and_then(|m| m.input.as_ref()) {
            dz *= m;
        }
        ndarray::Zip::from(&mut dz).and(&cache.relu).for_each(|g, a| {
            if *a <= F::zero() {
                *g = F::zero();
            }
        });
        add(&mut grad, o.w_in, &cache.x.t().dot(&dz));
        add(&mut grad, o.b_in, &dz.sum_axis(Axis(0)).insert_axis(Axis(0)));
        grad
    }

    /// One streaming inference step (dropout off) for a single sequence.
    pub fn step(&self, state: &mut LstmState<F>, x: &[F]) -> Result<Vec<F>, CorrectorError> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| CorrectorError::Shape(e.to_string()))?;
        let (y, _, next) = self.forward(view, 1, 1, state, None)?;
        *state = next;
        Ok(y.into_raw_vec_and_offset().0)
    }
}

/// Mean over rows of the per-row L2 norm of `y − target`, with per-row
/// weights (0 for padding). Returns the loss and its gradient.
pub fn l2_loss<F: Real>(y: &Array2<F>, target: &Array2<F>, weights: &[F]) -> (F, Array2<F>) {
    let total: F = weights.iter().copied().sum();
    let mut grad = y - target;
    let mut loss = F::zero();
    if total <= F::zero() {
        grad.fill(F::zero());
        return (loss, grad);
    }
    for (mut row, w) in grad.rows_mut().into_iter().zip(weights) {
        let norm = row.iter().map(|v| *v * *v).sum::<F>().sqrt();
        loss = loss + *w * norm;
        let scale = if norm > F::zero() { *w / (norm * total) } else { F::zero() };
        row.mapv_inplace(|v| v * scale);
    }
    (loss / total, grad)
}

const MAGIC: &[u8; 8] = b"MAGGLSTM";
const VERSION: u32 = 1;

impl Lstm<f32> {
    /// Weight file: magic `MAGGLSTM`, version (u32), dimension table
    /// `input, hidden, layers, output` (u32 each), then every parameter as a
    /// little-endian f32 in the flat layout order.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [self.dims.input, self.dims.hidden, self.dims.layers, self.dims.output] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.params.len() * 4);
        for p in &self.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, CorrectorError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CorrectorError::Format("bad magic".into()));
        }
        let mut word = [0u8; 4];
        let mut next = |r: &mut dyn Read| -> Result<u32, CorrectorError> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = next(r)?;
        if version != VERSION {
            return Err(CorrectorError::Format(format!("unsupported version {version}")));
        }
        let dims = Dims {
            input: next(r)? as usize,
            hidden: next(r)? as usize,
            layers: next(r)? as usize,
            output: next(r)? as usize,
        };
        dims.validate()?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != dims.param_count() * 4 {
            return Err(CorrectorError::Format(format!(
                "expected {} parameter bytes, got {}",
                dims.param_count() * 4,
                bytes.len()
            )));
        }
        let params: Vec<f32> =
            bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("four bytes"))).collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(CorrectorError::Format("non-finite weight".into()));
        }
        Self::from_params(dims, params)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorrectorError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorrectorError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dims {
        Dims { input: 4, hidden: 3, layers: 2, output: 2 }
    }

    fn rand_array(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn param_count_of_standard_network() {
        let d = Dims::default();
        let h = 256;
        let expected = 63 * h + h + 2 * (2 * h * 4 * h + 4 * h) + h * 5 + 5;
        assert_eq!(d.param_count(), expected);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let d = Dims::default();
        let net = Lstm::<f32>::zeros(d).unwrap();
        let mut state = LstmState::zeros(&d, 1);
        for k in 0..5 {
            let x: Vec<f32> = (0..63).map(|i| (i * k) as f32 * 0.1 - 2.0).collect();
            assert!(net.step(&mut state, &x).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn streaming_matches_batched_forward() {
        let d = small();
        let net = Lstm::<f64>::init(d, 3).unwrap();
        let x = rand_array(6, 4, 1);
        let (y, _, _) = net.forward(x.view(), 6, 1, &LstmState::zeros(&d, 1), None).unwrap();
        let mut state = LstmState::zeros(&d, 1);
        for t in 0..6 {
            let out = net.step(&mut state, x.row(t).as_slice().unwrap()).unwrap();
            for k in 0..2 {
                assert_eq!(out[k], y[[t, k]]);
            }
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let d = Dims::default();
        let net = Lstm::<f32>::init(d, 9).unwrap();
        let run = || {
            let mut s = LstmState::zeros(&d, 1);
            (0..4).flat_map(|k| net.step(&mut s, &[k as f32 * 0.3; 63]).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn blow_up_names_the_layer() {
        let d = small();
        let mut net = Lstm::<f64>::init(d, 3).unwrap();
        let o = d.offsets();
        net.params[o.w_out] = f64::INFINITY;
        let x = rand_array(2, 4, 1);
        match net.forward(x.view(), 2, 1, &LstmState::zeros(&d, 1), None) {
            Err(CorrectorError::NumericalBlowUp { layer }) => assert_eq!(layer, "output"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn loss(net: &Lstm<f64>, x: &Array2<f64>, target: &Array2<f64>, steps: usize, batch: usize, masks: Option<&Masks<f64>>) -> f64 {
        let (y, _, _) = net.forward(x.view(), steps, batch, &LstmState::zeros(net.dims(), batch), masks).unwrap();
        l2_loss(&y, target, &vec![1.0; steps * batch]).0
    }

    fn check_gradient(dims: Dims, steps: usize, batch: usize, dropout: f64, sample: Option<usize>) {
        let mut net = Lstm::<f64>::init(dims, 5).unwrap();
        // non-trivial biases so every gate path is exercised
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for p in net.params_mut().iter_mut() {
            *p += rng.random_range(-0.1..0.1);
        }
        let rows = steps * batch;
        let x = rand_array(rows, dims.input, 2);
        let target = rand_array(rows, dims.output, 3);
        let masks = Masks::sample(&dims, rows, dropout, &mut rng);
        let (y, cache, _) = net.forward(x.view(), steps, batch, &LstmState::zeros(&dims, batch), Some(&masks)).unwrap();
        let (_, dy) = l2_loss(&y, &target, &vec![1.0; rows]);
        let grad = net.backward(&cache, &dy, Some(&masks));

        let indices: Vec<usize> = match sample {
            None => (0..dims.param_count()).collect(),
            Some(n) => (0..n).map(|_| rng.random_range(0..dims.param_count())).collect(),
        };
        // fourth-order central stencil keeps roundoff low at a large step
        let h = 1e-4;
        let mut worst = 0.0f64;
        for &k in &indices {
            let orig = net.params[k];
            let mut at = |d: f64| {
                net.params[k] = orig + d;
                loss(&net, &x, &target, steps, batch, Some(&masks))
            };
            let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            net.params[k] = orig;
            let scale = fd.abs().max(grad[k].abs());
            if scale > 1e-7 {
                worst = worst.max((fd - grad[k]).abs() / scale);
            }
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn gradient_matches_finite_differences_small_network() {
        check_gradient(small(), 10, 2, 0.0, None);
    }

    #[test]
    fn gradient_matches_finite_differences_with_dropout() {
        check_gradient(Dims { input: 5, hidden: 4, layers: 2, output: 3 }, 10, 3, 0.4, None);
    }

    #[test]
    fn gradient_matches_finite_differences_full_size_sample() {
        check_gradient(Dims::default(), 10, 1, 0.0, Some(300));
    }

    #[test]
    fn weight_file_round_trip() {
        let net = Lstm::<f32>::init(small(), 1).unwrap();
        let mut bytes = Vec::new();
        net.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], b"MAGGLSTM");
        assert_eq!(bytes.len(), 8 + 4 * 5 + 4 * small().param_count());
        let back = Lstm::<f32>::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, net);
        bytes[3] = b'x';
        assert!(Lstm::<f32>::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn loss_is_mean_row_norm() {
        let y = Array2::from_shape_vec((2, 2), vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let t = Array2::zeros((2, 2));
        let (l, g) = l2_loss(&y, &t, &[1.0, 1.0]);
        assert!((l - 2.5).abs() < 1e-12);
        assert!((g[[0, 0]] - 0.3).abs() < 1e-12);
        assert_eq!(g[[1, 0]], 0.0);
    }
}
