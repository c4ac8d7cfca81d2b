//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheaply cloneable handle (`Rc<RefCell<..>>`) to a flat
//! row-major buffer. Differentiable operations live on [`Tape`]: each call
//! computes the forward value and, when any input requires gradients, records
//! a backward closure. [`Tape::backward`] replays the closures in reverse,
//! accumulating into every reachable tensor's `grad` buffer.
//!
//! The tape is rebuilt each training step (define-by-run). Repeated backward
//! calls without a reset accumulate gradients; the trainer zeroes parameter
//! gradients between steps. A tensor with no tape attachment is a plain
//! immutable value.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Result, SpanError};
use crate::rng::Rng;

struct Inner {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Handle to a dense n-dimensional f64 array with optional gradient.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

fn check_shape(data_len: usize, shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&e| e == 0) {
        return Err(SpanError::Parameter(format!(
            "tensor shape {shape:?} has a zero extent"
        )));
    }
    let numel: usize = shape.iter().product();
    if numel != data_len {
        return Err(SpanError::Parameter(format!(
            "tensor shape {shape:?} wants {numel} elements, data has {data_len}"
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        check_shape(data.len(), shape)?;
        Ok(Tensor {
            inner: Rc::new(RefCell::new(Inner {
                data,
                shape: shape.to_vec(),
                requires_grad: false,
                grad: None,
            })),
        })
    }

    /// Leaf parameter: tracked by the tape and given a gradient on backward.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::from_vec(data, shape)?;
        t.inner.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn param_uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.uniform(-bound, bound)).collect();
        Tensor::param(data, shape).expect("generated data matches shape")
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(vec![0.0; numel], shape).expect("zero fill matches shape")
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(vec![v], &[1]).expect("scalar")
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Read access without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.borrow().data)
    }

    /// Value of a scalar (1-element) tensor.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        debug_assert_eq!(inner.data.len(), 1, "item() on non-scalar tensor");
        inner.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrite the value buffer (optimizer updates, test hooks).
    pub fn set_data(&self, data: &[f64]) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if data.len() != inner.data.len() {
            return Err(SpanError::Contract(format!(
                "set_data length {} != tensor numel {}",
                data.len(),
                inner.data.len()
            )));
        }
        inner.data.copy_from_slice(data);
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.borrow_mut().data);
    }

    /// Value copy detached from any tape, never requiring gradients.
    pub fn detached(&self) -> Tensor {
        let inner = self.inner.borrow();
        Tensor::from_vec(inner.data.clone(), &inner.shape).expect("valid source tensor")
    }

    fn set_requires_grad(&self, v: bool) {
        self.inner.borrow_mut().requires_grad = v;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        let n = inner.data.len();
        debug_assert_eq!(delta.len(), n);
        let grad = inner.grad.get_or_insert_with(|| vec![0.0; n]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Take the current gradient, if any, leaving it in place.
    fn grad_snapshot(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

type BackwardFn = Box<dyn Fn()>;

/// Records differentiable operations in execution order.
pub struct Tape {
    ops: RefCell<Vec<BackwardFn>>,
    /// Outputs of recorded ops. Their gradients are scratch space owned by
    /// the tape: cleared at the start of every backward pass so repeated
    /// passes accumulate only into leaf tensors.
    outputs: RefCell<Vec<Tensor>>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            ops: RefCell::new(Vec::new()),
            outputs: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// Tape that records nothing; forward values only. Used for closed-loop
    /// evaluation where gradients are never needed.
    pub fn inference() -> Tape {
        Tape {
            ops: RefCell::new(Vec::new()),
            outputs: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    /// Number of recorded operations (linearity checks, instrumentation).
    pub fn len(&self) -> usize {
        self.ops.borrow().len()
    }

    pub(crate) fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn is_empty(&self) -> bool {
        self.ops.borrow().is_empty()
    }

    fn wants_grad(&self, inputs: &[&Tensor]) -> bool {
        self.recording && inputs.iter().any(|t| t.requires_grad())
    }

    /// Record a backward closure producing `out`: flags it as
    /// gradient-carrying and registers it as tape-owned scratch.
    pub(crate) fn record(&self, out: &Tensor, f: impl Fn() + 'static) {
        out.set_requires_grad(true);
        self.outputs.borrow_mut().push(out.clone());
        self.ops.borrow_mut().push(Box::new(f));
    }

    /// Run reverse-mode accumulation from a scalar loss.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(SpanError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !loss.requires_grad() {
            return Err(SpanError::Contract(
                "backward on a tensor that is not connected to the tape".into(),
            ));
        }
        for t in self.outputs.borrow().iter() {
            t.zero_grad();
        }
        loss.accumulate_grad(&[1.0]);
        for op in self.ops.borrow().iter().rev() {
            op();
        }
        Ok(())
    }

    // ── elementwise ─────────────────────────────────────────────────────

    fn binary_check(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa != sb {
            return Err(SpanError::ShapeMismatch {
                op,
                lhs: sa,
                rhs: sb,
            });
        }
        Ok(())
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::binary_check("add", a, b)?;
        let data = a.with_data(|xa| b.with_data(|xb| xa.iter().zip(xb).map(|(x, y)| x + y).collect()));
        let out = Tensor::from_vec(data, &a.shape())?;
        if self.wants_grad(&[a, b]) {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.record(&out, move || {
                if let Some(g) = o.grad_snapshot() {
                    if a.requires_grad() {
                        a.accumulate_grad(&g);
                    }
                    if b.requires_grad() {
                        b.accumulate_grad(&g);
                    }
                }
            });
        }
        Ok(out)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::binary_check("sub", a, b)?;
        let data = a.with_data(|xa| b.with_data(|xb| xa.iter().zip(xb).map(|(x, y)| x - y).collect()));
        let out = Tensor::from_vec(data, &a.shape())?;
        if self.wants_grad(&[a, b]) {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.record(&out, move || {
                if let Some(g) = o.grad_snapshot() {
                    if a.requires_grad() {
                        a.accumulate_grad(&g);
                    }
                    if b.requires_grad() {
                        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                        b.accumulate_grad(&neg);
                    }
                }
            });
        }
        Ok(out)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::binary_check("mul", a, b)?;
        let data = a.with_data(|xa| b.with_data(|xb| xa.iter().zip(xb).map(|(x, y)| x * y).collect()));
        let out = Tensor::from_vec(data, &a.shape())?;
        if self.wants_grad(&[a, b]) {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.record(&out, move || {
                if let Some(g) = o.grad_snapshot() {
                    if a.requires_grad() {
                        let da: Vec<f64> =
                            b.with_data(|xb| g.iter().zip(xb).map(|(gv, y)| gv * y).collect());
                        a.accumulate_grad(&da);
                    }
                    if b.requires_grad() {
                        let db: Vec<f64> =
                            a.with_data(|xa| g.iter().zip(xa).map(|(gv, x)| gv * x).collect());
                        b.accumulate_grad(&db);
                    }
                }
            });
        }
        Ok(out)
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        let data = a.with_data(|xs| xs.iter().map(|x| x * c).collect());
        let out = Tensor::from_vec(data, &a.shape())?;
        if self.wants_grad(&[a]) {
            let (a, o) = (a.clone(), out.clone());
            self.record(&out, move || {
                if let Some(g) = o.grad_snapshot() {
                    let da: Vec<f64> = g.iter().map(|v| v * c).collect();
                    a.accumulate_grad(&da);
                }
            });
        }
        Ok(out)
    }

    fn unary(
        &self,
        a: &Tensor,
        fwd: impl Fn(f64) -> f64,
        // derivative expressed in terms of (input, output)
        dfn: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Tensor> {
        let data: Vec<f64> = a.with_data(|xs| xs.iter().map(|&x| fwd(x)).collect());
        let out = Tensor::from_vec(data, &a.shape())?;
        if self.wants_grad(&[a]) {
            let (a, o) = (a.clone(), out.clone());
            self.record(&out, move || {
                if let Some(g) = o.grad_snapshot() {
                    let da: Vec<f64> = a.with_data(|xs| {
                        o.with_data(|ys| {
                            g.iter()
                                .zip(xs.iter().zip(ys))
                                .map(|(gv, (&x, &y))| gv * dfn(x, y))
                                .collect()
                        })
                    });
                    a.accumulate_grad(&da);
                }
            });
        }
        Ok(out)
    }

    pub fn tanh(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn relu(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    // ── reductions ──────────────────────────────────────────────────────

    pub fn sum(&self, a: &Tensor) -> Result<Tensor> {
        let total = a.with_data(|xs| xs.iter().sum());
        let out = Tensor::scalar(total);
        if self.wants_grad(&[a]) {
            let (a, o) = (a.clone(), out.clone());
            self.record(&out, move || {
                if let Some(g) = o.grad_snapshot() {
                    let da = vec![g[0]; a.numel()];
                    a.accumulate_grad(&da);
                }
            });
        }
        Ok(out)
    }

    /// Mean squared error (1/n)·Σ(pred − target)². The target is a constant:
    /// it must not require gradients.
    pub fn mse(&self, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
        Self::binary_check("mse", pred, target)?;
        if target.requires_grad() {
            return Err(SpanError::Contract(
                "mse target must not require gradients".into(),
            ));
        }
        let n = pred.numel() as f64;
        let total: f64 = pred.with_data(|ps| {
            target.with_data(|ts| {
                ps.iter()
                    .zip(ts)
                    .map(|(p, t)| {
                        let d = p - t;
                        d * d
                    })
                    .sum()
            })
        });
        let out = Tensor::scalar(total / n);
        if self.wants_grad(&[pred]) {
            let (p, t, o) = (pred.clone(), target.clone(), out.clone());
            self.record(&out, move || {
                if let Some(g) = o.grad_snapshot() {
                    let scale = 2.0 * g[0] / n;
                    let dp: Vec<f64> = p.with_data(|ps| {
                        t.with_data(|ts| ps.iter().zip(ts).map(|(pv, tv)| scale * (pv - tv)).collect())
                    });
                    p.accumulate_grad(&dp);
                }
            });
        }
        Ok(out)
    }

    // ── linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(SpanError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = a.with_data(|xa| b.with_data(|xb| matmul_raw(xa, xb, m, k, n)));
        let out = Tensor::from_vec(data, &[m, n])?;
        if self.wants_grad(&[a, b]) {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.record(&out, move || {
                if let Some(g) = o.grad_snapshot() {
                    if a.requires_grad() {
                        // dA = G · Bᵀ
                        let da = b.with_data(|xb| {
                            let mut da = vec![0.0; m * k];
                            for i in 0..m {
                                for j in 0..n {
                                    let gv = g[i * n + j];
                                    for p in 0..k {
                                        da[i * k + p] += gv * xb[p * n + j];
                                    }
                                }
                            }
                            da
                        });
                        a.accumulate_grad(&da);
                    }
                    if b.requires_grad() {
                        // dB = Aᵀ · G
                        let db = a.with_data(|xa| {
                            let mut db = vec![0.0; k * n];
                            for i in 0..m {
                                for p in 0..k {
                                    let av = xa[i * k + p];
                                    for j in 0..n {
                                        db[p * n + j] += av * g[i * n + j];
                                    }
                                }
                            }
                            db
                        });
                        b.accumulate_grad(&db);
                    }
                }
            });
        }
        Ok(out)
    }

    /// Matrix–vector product: [M×K]·[K] → [M].
    pub fn matvec(&self, a: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (sa, sx) = (a.shape(), x.shape());
        if sa.len() != 2 || sx.len() != 1 || sa[1] != sx[0] {
            return Err(SpanError::ShapeMismatch {
                op: "matvec",
                lhs: sa,
                rhs: sx,
            });
        }
        let (m, k) = (sa[0], sa[1]);
        let data = a.with_data(|xa| {
            x.with_data(|xv| {
                (0..m)
                    .map(|i| {
                        let row = &xa[i * k..(i + 1) * k];
                        row.iter().zip(xv).map(|(w, v)| w * v).sum()
                    })
                    .collect::<Vec<f64>>()
            })
        });
        let out = Tensor::from_vec(data, &[m])?;
        if self.wants_grad(&[a, x]) {
            let (a, x, o) = (a.clone(), x.clone(), out.clone());
            self.record(&out, move || {
                if let Some(g) = o.grad_snapshot() {
                    if a.requires_grad() {
                        let da = x.with_data(|xv| {
                            let mut da = vec![0.0; m * k];
                            for i in 0..m {
                                for p in 0..k {
                                    da[i * k + p] = g[i] * xv[p];
                                }
                            }
                            da
                        });
                        a.accumulate_grad(&da);
                    }
                    if x.requires_grad() {
                        let dx = a.with_data(|xa| {
                            let mut dx = vec![0.0; k];
                            for i in 0..m {
                                let gi = g[i];
                                for p in 0..k {
                                    dx[p] += gi * xa[i * k + p];
                                }
                            }
                            dx
                        });
                        x.accumulate_grad(&dx);
                    }
                }
            });
        }
        Ok(out)
    }

    // ── shape ───────────────────────────────────────────────────────────

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != a.numel() || shape.iter().any(|&e| e == 0) {
            return Err(SpanError::ShapeMismatch {
                op: "reshape",
                lhs: a.shape(),
                rhs: shape.to_vec(),
            });
        }
        let out = Tensor::from_vec(a.to_vec(), shape)?;
        if self.wants_grad(&[a]) {
            let (a, o) = (a.clone(), out.clone());
            self.record(&out, move || {
                if let Some(g) = o.grad_snapshot() {
                    a.accumulate_grad(&g);
                }
            });
        }
        Ok(out)
    }

    /// Contiguous slice of a 1-D tensor.
    pub fn slice(&self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let sa = a.shape();
        if sa.len() != 1 || start + len > sa[0] || len == 0 {
            return Err(SpanError::Contract(format!(
                "slice [{start}, {start}+{len}) out of bounds for shape {sa:?}"
            )));
        }
        let data = a.with_data(|xs| xs[start..start + len].to_vec());
        let out = Tensor::from_vec(data, &[len])?;
        if self.wants_grad(&[a]) {
            let (a, o) = (a.clone(), out.clone());
            self.record(&out, move || {
                if let Some(g) = o.grad_snapshot() {
                    let mut da = vec![0.0; a.numel()];
                    da[start..start + len].copy_from_slice(&g);
                    a.accumulate_grad(&da);
                }
            });
        }
        Ok(out)
    }

    /// Concatenate 1-D tensors.
    pub fn concat(&self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(SpanError::Contract("concat of zero tensors".into()));
        }
        for t in parts {
            if t.shape().len() != 1 {
                return Err(SpanError::Contract(format!(
                    "concat expects 1-D tensors, got shape {:?}",
                    t.shape()
                )));
            }
        }
        let mut data = Vec::new();
        let mut offsets = Vec::with_capacity(parts.len());
        for t in parts {
            offsets.push(data.len());
            t.with_data(|xs| data.extend_from_slice(xs));
        }
        let total = data.len();
        let out = Tensor::from_vec(data, &[total])?;
        if self.wants_grad(parts) {
            let owned: Vec<Tensor> = parts.iter().map(|t| (*t).clone()).collect();
            let o = out.clone();
            self.record(&out, move || {
                if let Some(g) = o.grad_snapshot() {
                    for (t, &off) in owned.iter().zip(&offsets) {
                        if t.requires_grad() {
                            t.accumulate_grad(&g[off..off + t.numel()]);
                        }
                    }
                }
            });
        }
        Ok(out)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

// Aliasing note: binary ops may receive the same tensor on both sides
// (e.g. mul(x, x)); backward accumulates sequentially so both contributions
// land.
