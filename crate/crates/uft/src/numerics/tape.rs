//! Per-step recording tape for reverse-mode differentiation.
//!
//! One tape may be active per thread. Ops record nodes while a tape is
//! active and any input requires a gradient; [`backward`] replays the tape in
//! reverse exactly once, accumulates gradients into reachable leaves, and
//! consumes the tape.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::kernels as k;
use crate::numerics::tensor::{Buffer, NodeRef, Tensor};

pub(crate) trait Elem: k::Real {
    fn slice(b: &Buffer) -> &[Self];
    fn wrap(v: Vec<Self>) -> Buffer;
}

impl Elem for f32 {
    fn slice(b: &Buffer) -> &[f32] {
        b.as_f32()
    }
    fn wrap(v: Vec<f32>) -> Buffer {
        Buffer::F32(v)
    }
}

impl Elem for f64 {
    fn slice(b: &Buffer) -> &[f64] {
        b.as_f64()
    }
    fn wrap(v: Vec<f64>) -> Buffer {
        Buffer::F64(v)
    }
}

#[derive(Clone, Debug)]
pub(crate) enum OpKind {
    Matmul,
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    Reshape,
    Transpose(Vec<usize>),
    Concat { axis: usize },
    Slice { axis: usize, start: usize },
    Softmax,
    LayerNorm { eps: f64 },
    Silu,
    MeanAll,
    SumAll,
    Square,
    Sqrt,
    Embedding { indices: Arc<Vec<usize>> },
    Rotary { angles: Arc<Vec<f64>>, invert: bool },
}

struct Node {
    op: OpKind,
    inputs: Vec<Tensor>,
    output: Tensor,
}

struct Tape {
    gen: u64,
    nodes: Vec<Node>,
}

thread_local! {
    static ACTIVE: RefCell<Option<Tape>> = const { RefCell::new(None) };
}

static NEXT_GEN: AtomicU64 = AtomicU64::new(1);

/// Begin recording on this thread. Errors if a tape is already active.
pub fn start_recording() -> Result<()> {
    ACTIVE.with(|slot| {
        let mut slot = slot.borrow_mut();
        if slot.is_some() {
            return Err(Error::Autodiff("a tape is already active on this thread"));
        }
        *slot = Some(Tape {
            gen: NEXT_GEN.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        });
        Ok(())
    })
}

pub fn recording() -> bool {
    ACTIVE.with(|slot| slot.borrow().is_some())
}

/// Drop the active tape without running backward (error-path cleanup).
pub fn abort_recording() {
    ACTIVE.with(|slot| *slot.borrow_mut() = None);
}

/// Leaf parameters referenced so far by the active tape, by tensor uid.
pub fn touched_leaf_uids() -> Vec<u64> {
    ACTIVE.with(|slot| {
        let slot = slot.borrow();
        let mut uids = Vec::new();
        if let Some(tape) = slot.as_ref() {
            for node in &tape.nodes {
                for t in &node.inputs {
                    if t.requires_grad() && t.node().is_none() {
                        uids.push(t.uid());
                    }
                }
            }
        }
        uids.sort_unstable();
        uids.dedup();
        uids
    })
}

/// Construct the op output, recording a node when a tape is active and any
/// input requires grad. Called by every op in the catalog.
pub(crate) fn emit(
    op: OpKind,
    inputs: Vec<Tensor>,
    out_shape: Vec<usize>,
    out_buf: Buffer,
) -> Result<Tensor> {
    let any_grad = inputs.iter().any(|t| t.requires_grad());
    if !any_grad || !recording() {
        return Ok(Tensor::build(out_shape, out_buf, false, None));
    }
    ACTIVE.with(|slot| {
        let mut slot = slot.borrow_mut();
        let tape = slot.as_mut().expect("tape vanished during emit");
        for t in &inputs {
            if let Some(nref) = t.node() {
                if nref.gen != tape.gen {
                    return Err(Error::Autodiff(
                        "tensor from a previous tape used in the active recording",
                    ));
                }
            }
        }
        let idx = tape.nodes.len();
        let out = Tensor::build(
            out_shape,
            out_buf,
            true,
            Some(NodeRef { gen: tape.gen, idx }),
        );
        tape.nodes.push(Node {
            op,
            inputs,
            output: out.clone(),
        });
        Ok(out)
    })
}

/// Reverse sweep from a scalar loss. Populates `grad` on every reachable
/// requires-grad leaf (accumulating across multiple uses) and consumes the
/// active tape.
pub fn backward(loss: &Tensor) -> Result<()> {
    let tape = ACTIVE
        .with(|slot| slot.borrow_mut().take())
        .ok_or(Error::Autodiff("backward called without an active tape"))?;
    if loss.numel() != 1 {
        return Err(Error::invalid(
            "loss",
            format!("backward requires a scalar, got shape {:?}", loss.shape()),
        ));
    }
    let node_ref = match loss.node() {
        Some(n) if n.gen == tape.gen => n,
        _ => {
            return Err(Error::Autodiff(
                "loss was not produced under the active tape",
            ))
        }
    };

    let mut grads: Vec<Option<Buffer>> = (0..tape.nodes.len()).map(|_| None).collect();
    grads[node_ref.idx] = Some(Buffer::full(loss.dtype(), 1, 1.0));

    for idx in (0..tape.nodes.len()).rev() {
        let g = match grads[idx].take() {
            Some(g) => g,
            None => continue,
        };
        let node = &tape.nodes[idx];
        let want: Vec<bool> = node
            .inputs
            .iter()
            .map(|t| match t.node() {
                Some(nref) => nref.gen == tape.gen,
                None => t.requires_grad(),
            })
            .collect();
        let contributions = match &g {
            Buffer::F32(gv) => node_backward::<f32>(node, gv, &want),
            Buffer::F64(gv) => node_backward::<f64>(node, gv, &want),
        };
        for (slot_i, contrib) in contributions.into_iter().enumerate() {
            let Some(c) = contrib else { continue };
            let input = &node.inputs[slot_i];
            match input.node() {
                Some(nref) => match grads[nref.idx].as_mut() {
                    Some(acc) => acc.add_assign(&c),
                    None => grads[nref.idx] = Some(c),
                },
                None => input.accumulate_grad(&c),
            }
        }
    }
    Ok(())
}

fn node_backward<T: Elem>(node: &Node, g: &[T], want: &[bool]) -> Vec<Option<Buffer>> {
    let ins = &node.inputs;
    let out_shape = node.output.shape();
    let mut res: Vec<Option<Buffer>> = vec![None; ins.len()];

    macro_rules! put {
        ($slot:expr, $vec:expr) => {
            if want[$slot] {
                res[$slot] = Some(T::wrap($vec));
            }
        };
    }

    match &node.op {
        OpKind::Matmul => {
            let a_shape = ins[0].shape();
            let b_shape = ins[1].shape();
            let r = a_shape.len();
            let (m, kk) = (a_shape[r - 2], a_shape[r - 1]);
            let n = b_shape[r - 1];
            let batch: usize = a_shape[..r - 2].iter().product();
            let a = T::slice(ins[0].buffer());
            let b = T::slice(ins[1].buffer());
            if want[0] {
                // dA = dC · Bᵀ
                let mut da = vec![T::zero(); batch * m * kk];
                for bi in 0..batch {
                    k::gemm_bt(
                        m,
                        n,
                        kk,
                        &g[bi * m * n..(bi + 1) * m * n],
                        &b[bi * kk * n..(bi + 1) * kk * n],
                        &mut da[bi * m * kk..(bi + 1) * m * kk],
                    );
                }
                res[0] = Some(T::wrap(da));
            }
            if want[1] {
                // dB = Aᵀ · dC
                let mut db = vec![T::zero(); batch * kk * n];
                for bi in 0..batch {
                    k::gemm_at(
                        kk,
                        m,
                        n,
                        &a[bi * m * kk..(bi + 1) * m * kk],
                        &g[bi * m * n..(bi + 1) * m * n],
                        &mut db[bi * kk * n..(bi + 1) * kk * n],
                    );
                }
                res[1] = Some(T::wrap(db));
            }
        }
        OpKind::Add => {
            put!(0, k::reduce_to(g, out_shape, ins[0].shape()));
            put!(1, k::reduce_to(g, out_shape, ins[1].shape()));
        }
        OpKind::Sub => {
            put!(0, k::reduce_to(g, out_shape, ins[0].shape()));
            if want[1] {
                let mut r = k::reduce_to(g, out_shape, ins[1].shape());
                for v in r.iter_mut() {
                    *v = -*v;
                }
                res[1] = Some(T::wrap(r));
            }
        }
        OpKind::Mul => {
            if want[0] {
                let full = k::bc_binary(
                    g,
                    out_shape,
                    T::slice(ins[1].buffer()),
                    ins[1].shape(),
                    out_shape,
                    |x, y| x * y,
                );
                res[0] = Some(T::wrap(k::reduce_to(&full, out_shape, ins[0].shape())));
            }
            if want[1] {
                let full = k::bc_binary(
                    g,
                    out_shape,
                    T::slice(ins[0].buffer()),
                    ins[0].shape(),
                    out_shape,
                    |x, y| x * y,
                );
                res[1] = Some(T::wrap(k::reduce_to(&full, out_shape, ins[1].shape())));
            }
        }
        OpKind::ScalarMul(c) => {
            let c = T::fr(*c);
            put!(0, g.iter().map(|&v| v * c).collect());
        }
        OpKind::Reshape => {
            put!(0, g.to_vec());
        }
        OpKind::Transpose(perm) => {
            let mut inv = vec![0usize; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            put!(0, transpose_copy(g, out_shape, &inv).0);
        }
        OpKind::Concat { axis } => {
            let inner: usize = out_shape[axis + 1..].iter().product();
            let outer: usize = out_shape[..*axis].iter().product();
            let total_axis = out_shape[*axis];
            let mut offset = 0usize;
            for (slot, input) in ins.iter().enumerate() {
                let ext = input.shape()[*axis];
                if want[slot] {
                    let mut part = vec![T::zero(); outer * ext * inner];
                    for o in 0..outer {
                        let src = (o * total_axis + offset) * inner;
                        let dst = o * ext * inner;
                        part[dst..dst + ext * inner]
                            .copy_from_slice(&g[src..src + ext * inner]);
                    }
                    res[slot] = Some(T::wrap(part));
                }
                offset += ext;
            }
        }
        OpKind::Slice { axis, start } => {
            if want[0] {
                let in_shape = ins[0].shape();
                let inner: usize = in_shape[*axis + 1..].iter().product();
                let outer: usize = in_shape[..*axis].iter().product();
                let full_axis = in_shape[*axis];
                let taken = out_shape[*axis];
                let mut dx = vec![T::zero(); ins[0].numel()];
                for o in 0..outer {
                    let dst = (o * full_axis + start) * inner;
                    let src = o * taken * inner;
                    dx[dst..dst + taken * inner]
                        .copy_from_slice(&g[src..src + taken * inner]);
                }
                res[0] = Some(T::wrap(dx));
            }
        }
        OpKind::Softmax => {
            let row = *out_shape.last().unwrap();
            let y = T::slice(node.output.buffer());
            put!(0, k::softmax_rows_grad(y, g, row));
        }
        OpKind::LayerNorm { eps } => {
            let row = *out_shape.last().unwrap();
            let x = T::slice(ins[0].buffer());
            put!(0, k::layer_norm_rows_grad(x, g, row, *eps));
        }
        OpKind::Silu => {
            let x = T::slice(ins[0].buffer());
            put!(
                0,
                x.iter()
                    .zip(g)
                    .map(|(&xv, &gv)| {
                        let s = k::sigmoid(xv);
                        gv * (s + xv * s * (T::one() - s))
                    })
                    .collect()
            );
        }
        OpKind::MeanAll => {
            let n = ins[0].numel();
            let v = g[0] * T::fr(1.0 / n as f64);
            put!(0, vec![v; n]);
        }
        OpKind::SumAll => {
            put!(0, vec![g[0]; ins[0].numel()]);
        }
        OpKind::Square => {
            let x = T::slice(ins[0].buffer());
            let two = T::fr(2.0);
            put!(0, x.iter().zip(g).map(|(&xv, &gv)| two * xv * gv).collect());
        }
        OpKind::Sqrt => {
            let y = T::slice(node.output.buffer());
            let half = T::fr(0.5);
            put!(0, y.iter().zip(g).map(|(&yv, &gv)| half * gv / yv).collect());
        }
        OpKind::Embedding { indices } => {
            if want[0] {
                let table_shape = ins[0].shape();
                let d = table_shape[1];
                let mut dt = vec![T::zero(); ins[0].numel()];
                for (row, &idx) in indices.iter().enumerate() {
                    for c in 0..d {
                        dt[idx * d + c] = dt[idx * d + c] + g[row * d + c];
                    }
                }
                res[0] = Some(T::wrap(dt));
            }
        }
        OpKind::Rotary { angles, invert } => {
            let n = out_shape[0];
            let heads = out_shape[1];
            let d_head = out_shape[2];
            put!(0, k::rotary_pairs(g, n, heads, d_head, angles, !invert));
        }
    }
    res
}

/// Permute axes with an explicit copy. Returns (data, new_shape).
pub(crate) fn transpose_copy<T: k::Real>(
    x: &[T],
    shape: &[usize],
    perm: &[usize],
) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let perm_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n: usize = shape.iter().product();
    let mut out = vec![T::zero(); n];
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for o in out.iter_mut() {
        *o = x[src];
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += perm_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
            src -= perm_strides[ax] * out_shape[ax];
        }
    }
    (out, out_shape)
}
