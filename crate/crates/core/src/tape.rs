//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends one node holding its output value and a record
//! of which earlier nodes fed it. `backward` walks the tape once in reverse,
//! accumulating vector-Jacobian products, and returns a gradient per node.
//! Node ids are plain indices, so "inputs come before outputs" holds by
//! construction and a single reverse sweep visits each node after all of
//! its consumers.

use crate::error::{Error, Result};
use crate::ops::{self, PoolMode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a value on the tape.
pub type ValueId = usize;

enum Record<T: Scalar> {
    Leaf,
    Conv2d { x: ValueId, k: ValueId, b: Option<ValueId>, stride: usize, padding: usize },
    ConvT2d { x: ValueId, k: ValueId, b: Option<ValueId>, stride: usize },
    Linear { x: ValueId, w: ValueId, b: Option<ValueId> },
    Relu { x: ValueId },
    Sigmoid { x: ValueId },
    GlobalPool { x: ValueId, mode: PoolMode, arg: Vec<usize> },
    ChannelPool { x: ValueId, mode: PoolMode, arg: Vec<usize> },
    BroadcastMul { x: ValueId, s: ValueId },
    Concat { a: ValueId, b: ValueId },
    Add { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    Div { a: ValueId, b: ValueId },
    Scale { x: ValueId, c: T },
    AddScalar { x: ValueId },
    Clamp { x: ValueId, lo: T, hi: T },
    Ln { x: ValueId },
    Sum { x: ValueId },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    rec: Record<T>,
}

/// Gradient of the loss with respect to each tape node. Nodes the loss does
/// not depend on have no entry.
pub struct Grads<T: Scalar = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient for `id`, if the loss depends on it.
    pub fn get(&self, id: ValueId) -> Option<&Tensor<T>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Remove and return the gradient for `id`.
    pub fn take(&mut self, id: ValueId) -> Option<Tensor<T>> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
}

/// Differentiability margins of a recorded graph at its current values,
/// reported by [`Tape::conditioning`].
#[derive(Debug, Clone, Copy)]
pub struct Conditioning {
    /// Smallest distance from any piecewise boundary: ReLU and clamp
    /// inputs to their thresholds, max-pool leaders to their runners-up.
    pub kink_margin: f64,
    /// Smallest `ln` input; tiny values mean exploding curvature.
    pub ln_margin: f64,
}

/// Lead of the largest value over the best strictly smaller one; infinite
/// when no distinct runner-up exists. Exact ties at the top collapse into
/// one group: in these graphs they only arise from values pinned to the
/// same constant (clipped ReLUs, one bias over dead receptive fields),
/// which move together or not at all, so no argmax switch can happen
/// inside a difference interval.
fn top_two_gap(values: impl Iterator<Item = f64>) -> f64 {
    let (mut best, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in values {
        if v > best {
            second = best;
            best = v;
        } else if v > second && v < best {
            second = v;
        }
    }
    if second == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        best - second
    }
}

/// Recording tape. Create one per forward pass, push leaves, build the
/// computation, then call `backward` on the (scalar) loss node.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value held by a node.
    pub fn value(&self, id: ValueId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor<T>, rec: Record<T>) -> ValueId {
        self.nodes.push(Node { value, rec });
        self.nodes.len() - 1
    }

    /// Register an input or parameter value.
    pub fn leaf(&mut self, value: Tensor<T>) -> ValueId {
        self.push(value, Record::Leaf)
    }

    pub fn conv2d(
        &mut self,
        x: ValueId,
        k: ValueId,
        b: Option<ValueId>,
        stride: usize,
        padding: usize,
    ) -> Result<ValueId> {
        let v = ops::conv2d(
            &self.nodes[x].value,
            &self.nodes[k].value,
            b.map(|i| &self.nodes[i].value),
            stride,
            padding,
        )?;
        Ok(self.push(v, Record::Conv2d { x, k, b, stride, padding }))
    }

    pub fn transposed_conv2d(
        &mut self,
        x: ValueId,
        k: ValueId,
        b: Option<ValueId>,
        stride: usize,
    ) -> Result<ValueId> {
        let v = ops::transposed_conv2d(
            &self.nodes[x].value,
            &self.nodes[k].value,
            b.map(|i| &self.nodes[i].value),
            stride,
        )?;
        Ok(self.push(v, Record::ConvT2d { x, k, b, stride }))
    }

    pub fn linear(&mut self, x: ValueId, w: ValueId, b: Option<ValueId>) -> Result<ValueId> {
        let v = ops::fully_connected(
            &self.nodes[x].value,
            &self.nodes[w].value,
            b.map(|i| &self.nodes[i].value),
        )?;
        Ok(self.push(v, Record::Linear { x, w, b }))
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let v = ops::relu(&self.nodes[x].value);
        self.push(v, Record::Relu { x })
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let v = ops::sigmoid(&self.nodes[x].value);
        self.push(v, Record::Sigmoid { x })
    }

    pub fn global_pool(&mut self, x: ValueId, mode: PoolMode) -> Result<ValueId> {
        let (v, arg) = ops::global_pool_with_arg(&self.nodes[x].value, mode)?;
        Ok(self.push(v, Record::GlobalPool { x, mode, arg }))
    }

    pub fn channel_pool(&mut self, x: ValueId, mode: PoolMode) -> Result<ValueId> {
        let (v, arg) = ops::channel_pool_with_arg(&self.nodes[x].value, mode)?;
        Ok(self.push(v, Record::ChannelPool { x, mode, arg }))
    }

    pub fn broadcast_mul(&mut self, x: ValueId, s: ValueId) -> Result<ValueId> {
        let v = ops::broadcast_mul(&self.nodes[x].value, &self.nodes[s].value)?;
        Ok(self.push(v, Record::BroadcastMul { x, s }))
    }

    pub fn concat_channels(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = ops::concat_channels(&self.nodes[a].value, &self.nodes[b].value)?;
        Ok(self.push(v, Record::Concat { a, b }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = ops::add(&self.nodes[a].value, &self.nodes[b].value)?;
        Ok(self.push(v, Record::Add { a, b }))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = ops::mul(&self.nodes[a].value, &self.nodes[b].value)?;
        Ok(self.push(v, Record::Mul { a, b }))
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = ops::div(&self.nodes[a].value, &self.nodes[b].value)?;
        Ok(self.push(v, Record::Div { a, b }))
    }

    pub fn scale(&mut self, x: ValueId, c: T) -> ValueId {
        let v = ops::scale(&self.nodes[x].value, c);
        self.push(v, Record::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: ValueId, c: T) -> ValueId {
        let v = ops::add_scalar(&self.nodes[x].value, c);
        self.push(v, Record::AddScalar { x })
    }

    pub fn clamp(&mut self, x: ValueId, lo: T, hi: T) -> ValueId {
        let v = ops::clamp(&self.nodes[x].value, lo, hi);
        self.push(v, Record::Clamp { x, lo, hi })
    }

    pub fn ln(&mut self, x: ValueId) -> ValueId {
        let v = ops::ln(&self.nodes[x].value);
        self.push(v, Record::Ln { x })
    }

    pub fn sum(&mut self, x: ValueId) -> ValueId {
        let v = ops::sum(&self.nodes[x].value);
        self.push(v, Record::Sum { x })
    }

    /// Measure how far the recorded values sit from every piecewise
    /// boundary and from the high-curvature region of `ln`.
    ///
    /// Finite-difference gradient checks are only valid where the function
    /// is smooth across the whole difference interval: a ReLU or clamp
    /// input near its threshold, a max-pool leader barely ahead of the
    /// runner-up, or a log argument near zero all poison the estimate
    /// without indicating a wrong gradient. Callers can probe one forward
    /// pass and reject poorly conditioned evaluation points up front.
    pub fn conditioning(&self) -> Conditioning {
        let mut kink = f64::INFINITY;
        let mut ln_margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.rec {
                Record::Relu { x } => {
                    for v in self.nodes[*x].value.data() {
                        kink = kink.min(v.to_f64().abs());
                    }
                }
                Record::Clamp { x, lo, hi } => {
                    let (lo, hi) = (lo.to_f64(), hi.to_f64());
                    for v in self.nodes[*x].value.data() {
                        let v = v.to_f64();
                        kink = kink.min((v - lo).abs()).min((v - hi).abs());
                    }
                }
                Record::GlobalPool { x, mode: PoolMode::Max, .. } => {
                    let f = &self.nodes[*x].value;
                    let (c, h, w) = f.dims3("conditioning").expect("recorded pool input");
                    let hw = h * w;
                    for ci in 0..c {
                        kink = kink.min(top_two_gap(
                            f.data()[ci * hw..(ci + 1) * hw].iter().map(|v| v.to_f64()),
                        ));
                    }
                }
                Record::ChannelPool { x, mode: PoolMode::Max, .. } => {
                    let f = &self.nodes[*x].value;
                    let (c, h, w) = f.dims3("conditioning").expect("recorded pool input");
                    let hw = h * w;
                    for px in 0..hw {
                        kink = kink.min(top_two_gap(
                            (0..c).map(|ci| f.data()[ci * hw + px].to_f64()),
                        ));
                    }
                }
                Record::Ln { x } => {
                    for v in self.nodes[*x].value.data() {
                        ln_margin = ln_margin.min(v.to_f64());
                    }
                }
                _ => {}
            }
        }
        Conditioning { kink_margin: kink, ln_margin }
    }

    /// Reverse sweep from a scalar loss node. Returns one gradient per
    /// reachable node; calling it again on the same tape recomputes from
    /// scratch (gradients never persist on the tape itself).
    pub fn backward(&self, loss: ValueId) -> Result<Grads<T>> {
        let lv = &self.nodes[loss].value;
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.data()[0].is_finite() {
            return Err(Error::NonFinite { op: "backward: loss" });
        }

        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss + 1);
        grads.resize_with(loss + 1, || None);
        grads[loss] = Some(lv.like(vec![T::ONE]));

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].clone() else { continue };
            match &self.nodes[id].rec {
                Record::Leaf => {}
                Record::Conv2d { x, k, b, stride, padding } => {
                    let (dx, dk, db) = ops::conv2d_vjp(
                        &self.nodes[*x].value,
                        &self.nodes[*k].value,
                        *stride,
                        *padding,
                        &g,
                    );
                    acc(&mut grads[*x], dx);
                    acc(&mut grads[*k], dk);
                    if let Some(bi) = b {
                        acc(&mut grads[*bi], db);
                    }
                }
                Record::ConvT2d { x, k, b, stride } => {
                    let (dx, dk, db) = ops::transposed_conv2d_vjp(
                        &self.nodes[*x].value,
                        &self.nodes[*k].value,
                        *stride,
                        &g,
                    );
                    acc(&mut grads[*x], dx);
                    acc(&mut grads[*k], dk);
                    if let Some(bi) = b {
                        acc(&mut grads[*bi], db);
                    }
                }
                Record::Linear { x, w, b } => {
                    let (dx, dw, db) = ops::fully_connected_vjp(
                        &self.nodes[*x].value,
                        &self.nodes[*w].value,
                        &g,
                    );
                    acc(&mut grads[*x], dx);
                    acc(&mut grads[*w], dw);
                    if let Some(bi) = b {
                        acc(&mut grads[*bi], db);
                    }
                }
                Record::Relu { x } => {
                    let xv = self.nodes[*x].value.data();
                    let dx = g.like(
                        g.data()
                            .iter()
                            .zip(xv)
                            .map(|(gv, xv)| if *xv > T::ZERO { *gv } else { T::ZERO })
                            .collect(),
                    );
                    acc(&mut grads[*x], dx);
                }
                Record::Sigmoid { x } => {
                    let yv = self.nodes[id].value.data();
                    let dx = g.like(
                        g.data()
                            .iter()
                            .zip(yv)
                            .map(|(gv, yv)| *gv * *yv * (T::ONE - *yv))
                            .collect(),
                    );
                    acc(&mut grads[*x], dx);
                }
                Record::GlobalPool { x, mode, arg } => {
                    let xs = self.nodes[*x].value.shape();
                    let (c, h, w) = (xs[0], xs[1], xs[2]);
                    let mut dx = vec![T::ZERO; c * h * w];
                    match mode {
                        PoolMode::Avg => {
                            let inv = T::from_f64(1.0 / (h * w) as f64);
                            for ci in 0..c {
                                let gv = g.data()[ci] * inv;
                                dx[ci * h * w..(ci + 1) * h * w].fill(gv);
                            }
                        }
                        PoolMode::Max => {
                            for ci in 0..c {
                                dx[ci * h * w + arg[ci]] = g.data()[ci];
                            }
                        }
                    }
                    acc(&mut grads[*x], self.nodes[*x].value.like(dx));
                }
                Record::ChannelPool { x, mode, arg } => {
                    let xs = self.nodes[*x].value.shape();
                    let (c, h, w) = (xs[0], xs[1], xs[2]);
                    let hw = h * w;
                    let mut dx = vec![T::ZERO; c * hw];
                    match mode {
                        PoolMode::Avg => {
                            let inv = T::from_f64(1.0 / c as f64);
                            for ci in 0..c {
                                for px in 0..hw {
                                    dx[ci * hw + px] = g.data()[px] * inv;
                                }
                            }
                        }
                        PoolMode::Max => {
                            for px in 0..hw {
                                dx[arg[px] * hw + px] = g.data()[px];
                            }
                        }
                    }
                    acc(&mut grads[*x], self.nodes[*x].value.like(dx));
                }
                Record::BroadcastMul { x, s } => {
                    let xv = &self.nodes[*x].value;
                    let sv = &self.nodes[*s].value;
                    let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                    let hw = h * w;
                    let mut dx = vec![T::ZERO; c * hw];
                    if sv.shape() == [c] {
                        let mut ds = vec![T::ZERO; c];
                        for ci in 0..c {
                            let scale = sv.data()[ci];
                            let mut a = T::ZERO;
                            for px in 0..hw {
                                let gv = g.data()[ci * hw + px];
                                dx[ci * hw + px] = gv * scale;
                                a += gv * xv.data()[ci * hw + px];
                            }
                            ds[ci] = a;
                        }
                        acc(&mut grads[*s], sv.like(ds));
                    } else {
                        let mut ds = vec![T::ZERO; hw];
                        for ci in 0..c {
                            for px in 0..hw {
                                let gv = g.data()[ci * hw + px];
                                dx[ci * hw + px] = gv * sv.data()[px];
                                ds[px] += gv * xv.data()[ci * hw + px];
                            }
                        }
                        acc(&mut grads[*s], sv.like(ds));
                    }
                    acc(&mut grads[*x], xv.like(dx));
                }
                Record::Concat { a, b } => {
                    let na = self.nodes[*a].value.len();
                    let da = self.nodes[*a].value.like(g.data()[..na].to_vec());
                    let db = self.nodes[*b].value.like(g.data()[na..].to_vec());
                    acc(&mut grads[*a], da);
                    acc(&mut grads[*b], db);
                }
                Record::Add { a, b } => {
                    acc(&mut grads[*a], g.clone());
                    acc(&mut grads[*b], g.clone());
                }
                Record::Mul { a, b } => {
                    let da = ops::mul(&g, &self.nodes[*b].value).expect("mul vjp shape");
                    let db = ops::mul(&g, &self.nodes[*a].value).expect("mul vjp shape");
                    acc(&mut grads[*a], da);
                    acc(&mut grads[*b], db);
                }
                Record::Div { a, b } => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let da = ops::div(&g, bv).expect("div vjp shape");
                    let db = bv.like(
                        g.data()
                            .iter()
                            .zip(av.data())
                            .zip(bv.data())
                            .map(|((gv, a), b)| -(*gv * *a) / (*b * *b))
                            .collect(),
                    );
                    acc(&mut grads[*a], da);
                    acc(&mut grads[*b], db);
                }
                Record::Scale { x, c } => {
                    acc(&mut grads[*x], ops::scale(&g, *c));
                }
                Record::AddScalar { x } => {
                    acc(&mut grads[*x], g.clone());
                }
                Record::Clamp { x, lo, hi } => {
                    let xv = self.nodes[*x].value.data();
                    let dx = g.like(
                        g.data()
                            .iter()
                            .zip(xv)
                            .map(|(gv, xv)| if *xv >= *lo && *xv <= *hi { *gv } else { T::ZERO })
                            .collect(),
                    );
                    acc(&mut grads[*x], dx);
                }
                Record::Ln { x } => {
                    let xv = &self.nodes[*x].value;
                    acc(&mut grads[*x], ops::div(&g, xv).expect("ln vjp shape"));
                }
                Record::Sum { x } => {
                    let gv = g.data()[0];
                    let xv = &self.nodes[*x].value;
                    acc(&mut grads[*x], xv.like(vec![gv; xv.len()]));
                }
            }
        }
        Ok(Grads { grads })
    }
}

fn acc<T: Scalar>(slot: &mut Option<Tensor<T>>, delta: Tensor<T>) {
    match slot {
        None => *slot = Some(delta),
        Some(t) => {
            debug_assert_eq!(t.shape(), delta.shape());
            for (a, d) in t.data_mut().iter_mut().zip(delta.data()) {
                *a += *d;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_t(data: Vec<f64>) -> Tensor<f64> {
        let n = data.len();
        Tensor::from_vec(vec![n], data).unwrap()
    }

    #[test]
    fn sum_of_squares_gradient_is_two_x() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(vec_t(vec![1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        assert_eq!(tape.value(loss).item().unwrap(), 14.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_a_quarter() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(vec_t(vec![0.0]));
        let s = tape.sigmoid(x);
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        assert!((grads.get(x).unwrap().data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn relu_gates_on_its_input_sign() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(vec_t(vec![2.0, -3.0]));
        let y = tape.scale(x, -1.0);
        let r = tape.relu(y);
        let loss = tape.sum(r);
        assert_eq!(tape.value(loss).item().unwrap(), 3.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, -1.0]);
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(vec_t(vec![1.0]));
        let z = tape.leaf(vec_t(vec![5.0]));
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).is_some());
        assert!(grads.get(z).is_none());
    }

    #[test]
    fn fan_out_accumulates_gradients() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(vec_t(vec![1.0, -2.0]));
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn product_and_quotient_rules() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.leaf(vec_t(vec![3.0]));
        let b = tape.leaf(vec_t(vec![4.0]));
        let p = tape.mul(a, b).unwrap();
        let q = tape.div(a, b).unwrap();
        let s = tape.add(p, q).unwrap();
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        // d(ab + a/b)/da = b + 1/b; d/db = a - a/b^2
        assert!((grads.get(a).unwrap().data()[0] - 4.25).abs() < 1e-15);
        assert!((grads.get(b).unwrap().data()[0] - (3.0 - 3.0 / 16.0)).abs() < 1e-15);
    }

    #[test]
    fn conv_node_wires_all_three_gradients() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1, 2, 2], vec![1., 2., 3., 4.]).unwrap());
        let k = tape.leaf(Tensor::from_vec(vec![1, 1, 1, 1], vec![2.0]).unwrap());
        let b = tape.leaf(vec_t(vec![0.0]));
        let y = tape.conv2d(x, k, Some(b), 1, 0).unwrap();
        let loss = tape.sum(y);
        assert_eq!(tape.value(loss).item().unwrap(), 20.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0; 4]);
        assert_eq!(grads.get(k).unwrap().data(), &[10.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[4.0]);
    }

    #[test]
    fn max_pool_routes_gradient_to_the_argmax() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1, 2, 2], vec![1., 5., 2., 3.]).unwrap());
        let m = tape.global_pool(x, PoolMode::Max).unwrap();
        let loss = tape.sum(m);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_splits_gradient_between_sources() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.leaf(Tensor::from_vec(vec![1, 1, 2], vec![1., 2.]).unwrap());
        let b = tape.leaf(Tensor::from_vec(vec![1, 1, 2], vec![3., 4.]).unwrap());
        let c = tape.concat_channels(a, b).unwrap();
        let w = tape.leaf(Tensor::from_vec(vec![2, 1, 2], vec![10., 20., 30., 40.]).unwrap());
        let p = tape.mul(c, w).unwrap();
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[10.0, 20.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[30.0, 40.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_non_finite_losses() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(vec_t(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));

        let mut tape2: Tape<f64> = Tape::new();
        let y = tape2.leaf(vec_t(vec![f64::NAN]));
        let l = tape2.sum(y);
        assert!(matches!(tape2.backward(l), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn backward_is_repeatable_on_one_tape() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(vec_t(vec![0.3, -0.7, 1.1]));
        let s = tape.sigmoid(x);
        let m = tape.mul(s, x).unwrap();
        let loss = tape.sum(m);
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        assert!(g1.get(x).unwrap().bits_eq(g2.get(x).unwrap()));
    }
}
