//! The gated-residual projection head for pooled field vectors and the
//! linear projector for POI text embeddings, with analytic reverse-mode
//! gradients.
//!
//! Head wiring, applied to a pooled input `a`:
//!
//! ```text
//! x0 = w_in a
//! m  = mlp_w2 relu(mlp_w1 x0 + b1) + b2
//! g  = sigmoid(gate_w x0 + gate_b)
//! x1 = x0 + g .* m
//! z  = v / (|v| + 1e-12),  v = w_out x1
//! ```
//!
//! The backward pass propagates through the normalization with the Jacobian
//! `(I - z z^T) / (|v| + 1e-12)`.

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;

use super::tensor::{axpy, check_finite, dot, matvec, matvec_t, outer_acc, Tensor2D};

/// Epsilon added to the L2 norm (not its square) before division. It enters
/// the backward pass, so it is fixed here rather than per call site.
pub const NORM_EPSILON: f64 = 1e-12;

/// Writes `out = v / (|v| + NORM_EPSILON)` and returns the raw norm.
/// A zero vector comes back unchanged.
pub fn l2_normalize(v: &[f64], out: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    let inv = 1.0 / (norm + NORM_EPSILON);
    for (o, x) in out.iter_mut().zip(v) {
        *o = x * inv;
    }
    norm
}

/// Gradient of `z = v / (|v| + eps)` with respect to `v`:
/// `out = (upstream - (upstream . z) z) / (|v| + eps)`.
pub fn normalize_grad(upstream: &[f64], z: &[f64], raw_norm: f64, out: &mut [f64]) {
    let uz = dot(upstream, z);
    let inv = 1.0 / (raw_norm + NORM_EPSILON);
    for ((o, u), zi) in out.iter_mut().zip(upstream).zip(z) {
        *o = (u - uz * zi) * inv;
    }
}

fn kaiming_uniform(rows: usize, cols: usize, seed: u64, tag: &str) -> Tensor2D {
    let bound = (6.0 / cols as f64).sqrt();
    let mut rng = rng::stream(seed, tag);
    let data = (0..rows * cols)
        .map(|_| bound * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    Tensor2D { rows, cols, data }
}

/// Projection head mapping a pooled field vector onto the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct AeProjectionHead {
    pub w_in: Tensor2D,   // hidden x input
    pub mlp_w1: Tensor2D, // hidden x hidden
    pub mlp_b1: Vec<f64>,
    pub mlp_w2: Tensor2D, // hidden x hidden
    pub mlp_b2: Vec<f64>,
    pub gate_w: Tensor2D, // hidden x hidden
    pub gate_b: Vec<f64>,
    pub w_out: Tensor2D, // output x hidden
}

impl AeProjectionHead {
    /// Kaiming-uniform weights (fan-in scaling), zero biases, seeded.
    pub fn init(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        AeProjectionHead {
            w_in: kaiming_uniform(hidden, input, seed, "init.w_in"),
            mlp_w1: kaiming_uniform(hidden, hidden, seed, "init.mlp_w1"),
            mlp_b1: vec![0.0; hidden],
            mlp_w2: kaiming_uniform(hidden, hidden, seed, "init.mlp_w2"),
            mlp_b2: vec![0.0; hidden],
            gate_w: kaiming_uniform(hidden, hidden, seed, "init.gate_w"),
            gate_b: vec![0.0; hidden],
            w_out: kaiming_uniform(output, hidden, seed, "init.w_out"),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_in.rows
    }

    pub fn output_dim(&self) -> usize {
        self.w_out.rows
    }

    /// Forward pass into a reusable cache; `cache.z` holds the result.
    pub fn forward_cached(&self, a: &[f64], cache: &mut HeadCache) -> Result<()> {
        if a.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "head input has length {}, expected {}",
                a.len(),
                self.input_dim()
            )));
        }
        cache.resize(self.hidden_dim(), self.output_dim());

        matvec(&self.w_in, a, &mut cache.x0);
        check_finite("head layer w_in", &cache.x0)?;

        matvec(&self.mlp_w1, &cache.x0, &mut cache.pre1);
        for (p, b) in cache.pre1.iter_mut().zip(&self.mlp_b1) {
            *p += b;
        }
        for (h, p) in cache.h.iter_mut().zip(&cache.pre1) {
            *h = p.max(0.0);
        }
        matvec(&self.mlp_w2, &cache.h, &mut cache.m);
        for (m, b) in cache.m.iter_mut().zip(&self.mlp_b2) {
            *m += b;
        }
        check_finite("head layer mlp", &cache.m)?;

        matvec(&self.gate_w, &cache.x0, &mut cache.g);
        for (g, b) in cache.g.iter_mut().zip(&self.gate_b) {
            *g = sigmoid(*g + b);
        }

        for i in 0..self.hidden_dim() {
            cache.x1[i] = cache.x0[i] + cache.g[i] * cache.m[i];
        }

        matvec(&self.w_out, &cache.x1, &mut cache.v);
        check_finite("head layer w_out", &cache.v)?;
        cache.norm = l2_normalize(&cache.v, &mut cache.z);
        Ok(())
    }

    /// Convenience forward returning a fresh unit vector.
    pub fn forward(&self, a: &[f64]) -> Result<Vec<f64>> {
        let mut cache = HeadCache::default();
        self.forward_cached(a, &mut cache)?;
        Ok(cache.z.clone())
    }

    /// Reverse-mode gradients for one input. Parameter gradients accumulate
    /// into `grads`; the gradient with respect to `a` lands in `grads.input`.
    pub fn backward(
        &self,
        a: &[f64],
        cache: &mut HeadCache,
        upstream: &[f64],
        grads: &mut HeadGrads,
    ) {
        let hidden = self.hidden_dim();
        debug_assert_eq!(upstream.len(), self.output_dim());

        normalize_grad(upstream, &cache.z, cache.norm, &mut cache.dv);

        outer_acc(&cache.dv, &cache.x1, &mut grads.w_out);
        matvec_t(&self.w_out, &cache.dv, &mut cache.dx1);

        // x1 = x0 + g .* m
        cache.dx0.copy_from_slice(&cache.dx1);
        for i in 0..hidden {
            let d = cache.dx1[i];
            let g = cache.g[i];
            // gate branch: dpre_g = d * m * g * (1 - g)
            cache.dpre[i] = d * cache.m[i] * g * (1.0 - g);
            // mlp branch output gradient, reusing dx1 as dm
            cache.dx1[i] = d * g;
        }
        outer_acc(&cache.dpre, &cache.x0, &mut grads.gate_w);
        axpy(1.0, &cache.dpre, &mut grads.gate_b);
        matvec_t(&self.gate_w, &cache.dpre, &mut cache.dh);
        axpy(1.0, &cache.dh, &mut cache.dx0);

        // m = mlp_w2 h + b2
        outer_acc(&cache.dx1, &cache.h, &mut grads.mlp_w2);
        axpy(1.0, &cache.dx1, &mut grads.mlp_b2);
        matvec_t(&self.mlp_w2, &cache.dx1, &mut cache.dh);
        // relu: subgradient 0 at exactly 0
        for i in 0..hidden {
            cache.dpre[i] = if cache.pre1[i] > 0.0 { cache.dh[i] } else { 0.0 };
        }
        outer_acc(&cache.dpre, &cache.x0, &mut grads.mlp_w1);
        axpy(1.0, &cache.dpre, &mut grads.mlp_b1);
        matvec_t(&self.mlp_w1, &cache.dpre, &mut cache.dh);
        axpy(1.0, &cache.dh, &mut cache.dx0);

        outer_acc(&cache.dx0, a, &mut grads.w_in);
        grads.input.resize(self.input_dim(), 0.0);
        matvec_t(&self.w_in, &cache.dx0, &mut grads.input);
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Forward intermediates plus backward scratch, reusable across rows.
#[derive(Debug, Clone, Default)]
pub struct HeadCache {
    pub x0: Vec<f64>,
    pub pre1: Vec<f64>,
    pub h: Vec<f64>,
    pub m: Vec<f64>,
    pub g: Vec<f64>,
    pub x1: Vec<f64>,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
    pub norm: f64,
    dv: Vec<f64>,
    dx1: Vec<f64>,
    dx0: Vec<f64>,
    dpre: Vec<f64>,
    dh: Vec<f64>,
}

impl HeadCache {
    fn resize(&mut self, hidden: usize, output: usize) {
        for buf in [
            &mut self.x0,
            &mut self.pre1,
            &mut self.h,
            &mut self.m,
            &mut self.g,
            &mut self.x1,
            &mut self.dx1,
            &mut self.dx0,
            &mut self.dpre,
            &mut self.dh,
        ] {
            buf.resize(hidden, 0.0);
        }
        self.v.resize(output, 0.0);
        self.z.resize(output, 0.0);
        self.dv.resize(output, 0.0);
    }
}

/// Parameter gradients for the head, same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub w_in: Tensor2D,
    pub mlp_w1: Tensor2D,
    pub mlp_b1: Vec<f64>,
    pub mlp_w2: Tensor2D,
    pub mlp_b2: Vec<f64>,
    pub gate_w: Tensor2D,
    pub gate_b: Vec<f64>,
    pub w_out: Tensor2D,
    pub input: Vec<f64>,
}

impl HeadGrads {
    pub fn zeros_like(head: &AeProjectionHead) -> Self {
        let h = head.hidden_dim();
        HeadGrads {
            w_in: Tensor2D::zeros(h, head.input_dim()),
            mlp_w1: Tensor2D::zeros(h, h),
            mlp_b1: vec![0.0; h],
            mlp_w2: Tensor2D::zeros(h, h),
            mlp_b2: vec![0.0; h],
            gate_w: Tensor2D::zeros(h, h),
            gate_b: vec![0.0; h],
            w_out: Tensor2D::zeros(head.output_dim(), h),
            input: vec![0.0; head.input_dim()],
        }
    }

    pub fn add_assign(&mut self, other: &HeadGrads) {
        axpy(1.0, &other.w_in.data, &mut self.w_in.data);
        axpy(1.0, &other.mlp_w1.data, &mut self.mlp_w1.data);
        axpy(1.0, &other.mlp_b1, &mut self.mlp_b1);
        axpy(1.0, &other.mlp_w2.data, &mut self.mlp_w2.data);
        axpy(1.0, &other.mlp_b2, &mut self.mlp_b2);
        axpy(1.0, &other.gate_w.data, &mut self.gate_w.data);
        axpy(1.0, &other.gate_b, &mut self.gate_b);
        axpy(1.0, &other.w_out.data, &mut self.w_out.data);
    }
}

/// Bias-free linear projector for POI text embeddings, followed by the same
/// L2 normalization as the head.
#[derive(Debug, Clone, PartialEq)]
pub struct PoiProjector {
    pub w: Tensor2D, // output x text_dim
}

impl PoiProjector {
    pub fn init(text_dim: usize, output: usize, seed: u64) -> Self {
        PoiProjector {
            w: kaiming_uniform(output, text_dim, seed, "init.poi_w"),
        }
    }

    pub fn text_dim(&self) -> usize {
        self.w.cols
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows
    }

    pub fn forward_cached(&self, t: &[f64], v: &mut Vec<f64>, z: &mut Vec<f64>) -> Result<f64> {
        if t.len() != self.text_dim() {
            return Err(Error::ShapeMismatch(format!(
                "projector input has length {}, expected {}",
                t.len(),
                self.text_dim()
            )));
        }
        v.resize(self.output_dim(), 0.0);
        z.resize(self.output_dim(), 0.0);
        matvec(&self.w, t, v);
        check_finite("poi projector", v)?;
        Ok(l2_normalize(v, z))
    }

    pub fn forward(&self, t: &[f64]) -> Result<Vec<f64>> {
        let mut v = Vec::new();
        let mut z = Vec::new();
        self.forward_cached(t, &mut v, &mut z)?;
        Ok(z)
    }

    /// Accumulates `dw` and writes the input gradient into `dt` if given.
    pub fn backward(
        &self,
        t: &[f64],
        z: &[f64],
        raw_norm: f64,
        upstream: &[f64],
        dw: &mut Tensor2D,
        scratch: &mut Vec<f64>,
        dt: Option<&mut Vec<f64>>,
    ) {
        scratch.resize(self.output_dim(), 0.0);
        normalize_grad(upstream, z, raw_norm, scratch);
        outer_acc(scratch, t, dw);
        if let Some(dt) = dt {
            dt.resize(self.text_dim(), 0.0);
            matvec_t(&self.w, scratch, dt);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        l2_normalize(v, &mut out);
        out
    }

    #[test]
    fn zero_head_returns_zero_vector() {
        let mut head = AeProjectionHead::init(4, 6, 3, 0);
        head.w_in.fill(0.0);
        head.mlp_w1.fill(0.0);
        head.mlp_w2.fill(0.0);
        head.gate_w.fill(0.0);
        head.w_out.fill(0.0);
        let z = head.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(z, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn residual_only_head_normalizes_input() {
        // w_in embeds the input into the first 4 hidden coordinates, the MLP
        // and gate are zero (so g = 0.5 but m = 0), and w_out selects the
        // first 4 coordinates back out: z = normalize(a).
        let input = 4;
        let hidden = 9;
        let output = 4;
        let mut head = AeProjectionHead::init(input, hidden, output, 0);
        head.w_in.fill(0.0);
        head.mlp_w1.fill(0.0);
        head.mlp_b1.fill(0.0);
        head.mlp_w2.fill(0.0);
        head.mlp_b2.fill(0.0);
        head.gate_w.fill(0.0);
        head.gate_b.fill(0.0);
        head.w_out.fill(0.0);
        for i in 0..input {
            head.w_in.set(i, i, 1.0);
            head.w_out.set(i, i, 1.0);
        }
        let a = [3.0, -1.0, 2.0, 0.5];
        let z = head.forward(&a).unwrap();
        let expect = unit(&a);
        for (got, want) in z.iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        // Independent re-evaluation of the head formula, written as plainly
        // as possible.
        let head = AeProjectionHead::init(5, 8, 3, 42);
        let a: Vec<f64> = (0..5).map(|i| 0.3 * (i as f64) - 0.7).collect();
        let z = head.forward(&a).unwrap();

        let h = 8;
        let mut x0 = vec![0.0; h];
        for r in 0..h {
            for c in 0..5 {
                x0[r] += head.w_in.get(r, c) * a[c];
            }
        }
        let mut hid = vec![0.0; h];
        for r in 0..h {
            let mut s = head.mlp_b1[r];
            for c in 0..h {
                s += head.mlp_w1.get(r, c) * x0[c];
            }
            hid[r] = if s > 0.0 { s } else { 0.0 };
        }
        let mut m = vec![0.0; h];
        for r in 0..h {
            let mut s = head.mlp_b2[r];
            for c in 0..h {
                s += head.mlp_w2.get(r, c) * hid[c];
            }
            m[r] = s;
        }
        let mut x1 = vec![0.0; h];
        for r in 0..h {
            let mut s = head.gate_b[r];
            for c in 0..h {
                s += head.gate_w.get(r, c) * x0[c];
            }
            let g = 1.0 / (1.0 + (-s).exp());
            x1[r] = x0[r] + g * m[r];
        }
        let mut v = vec![0.0; 3];
        for r in 0..3 {
            for c in 0..h {
                v[r] += head.w_out.get(r, c) * x1[c];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for r in 0..3 {
            let want = v[r] / (norm + NORM_EPSILON);
            assert!((z[r] - want).abs() < 1e-12, "coord {r}: {} vs {want}", z[r]);
        }
    }

    #[test]
    fn output_unit_norm_and_scale_invariant_in_w_out() {
        let head = AeProjectionHead::init(6, 12, 5, 3);
        let a: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect();
        let z = head.forward(&a).unwrap();
        let n = dot(&z, &z).sqrt();
        assert!((n - 1.0).abs() < 1e-6);

        let mut scaled = head.clone();
        scaled.w_out.scale(3.0);
        let z3 = scaled.forward(&a).unwrap();
        for (x, y) in z.iter().zip(&z3) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn normalization_grad_at_unit_norm() {
        // At |v| = 1 the Jacobian maps u to u - (u.v)v.
        let v = unit(&[0.6, 0.8, 0.0]);
        let u = [0.3, -0.2, 0.9];
        let mut out = vec![0.0; 3];
        normalize_grad(&u, &v, 1.0, &mut out);
        let uv = dot(&u, &v);
        for i in 0..3 {
            assert!((out[i] - (u[i] - uv * v[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let head = AeProjectionHead::init(4, 8, 3, 1);
        let a = [0.2, -0.4, 0.9, 1.3];
        let mut cache = HeadCache::default();
        head.forward_cached(&a, &mut cache).unwrap();
        let mut grads = HeadGrads::zeros_like(&head);
        head.backward(&a, &mut cache, &[0.0, 0.0, 0.0], &mut grads);
        assert!(grads.w_in.data.iter().all(|&g| g == 0.0));
        assert!(grads.w_out.data.iter().all(|&g| g == 0.0));
        assert!(grads.input.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn projector_identity_and_scale_invariance() {
        let mut proj = PoiProjector::init(4, 4, 0);
        proj.w.fill(0.0);
        for i in 0..4 {
            proj.w.set(i, i, 1.0);
        }
        let t = unit(&[1.0, 2.0, -1.0, 0.5]);
        let z = proj.forward(&t).unwrap();
        for (x, y) in z.iter().zip(&t) {
            assert!((x - y).abs() < 1e-12);
        }

        let proj = PoiProjector::init(6, 3, 9);
        let t: Vec<f64> = (0..6).map(|i| 0.1 + i as f64).collect();
        let t2: Vec<f64> = t.iter().map(|x| 2.0 * x).collect();
        let za = proj.forward(&t).unwrap();
        let zb = proj.forward(&t2).unwrap();
        for (x, y) in za.iter().zip(&zb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn projector_matches_matvec_normalize_oracle() {
        let proj = PoiProjector::init(7, 4, 5);
        let t: Vec<f64> = (0..7).map(|i| (i as f64 * 1.3).cos()).collect();
        let z = proj.forward(&t).unwrap();
        let mut v = vec![0.0; 4];
        for r in 0..4 {
            for c in 0..7 {
                v[r] += proj.w.get(r, c) * t[c];
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for r in 0..4 {
            assert!((z[r] - v[r] / (n + NORM_EPSILON)).abs() < 1e-12);
        }
    }
}
