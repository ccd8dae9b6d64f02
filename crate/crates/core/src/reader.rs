//! Pixel-level memory read.
//!
//! Memory features are stacked into a `THW x C` matrix, every query pixel
//! attends over every memory row with a column softmax at temperature
//! `sqrt(C)`, and the weighted sum of memory rows is concatenated after the
//! query features. The same tensor serves as key and value.

use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::{gemm, ops, Graph, Scalar, Tensor, Transpose, Var};

/// Query columns processed per block in [`read`]. Keeps the `THW x tile`
/// weight block in cache for the second product.
pub const COLUMN_TILE: usize = 64;

/// `T` memory feature maps flattened to `THW x C`.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedMemory<F: Scalar = f32> {
    pub data: Tensor<F>,
    /// Source frame index of every row. Diagnostics only.
    pub provenance: Vec<usize>,
    frames: usize,
    height: usize,
    width: usize,
}

impl<F: Scalar> StackedMemory<F> {
    pub fn rows(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Reorders the rows; `perm[i]` is the source row of new row `i`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        let (r, c) = (self.rows(), self.channels());
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("row permutation is not a bijection"));
        }
        let src = self.data.data();
        let mut data = Vec::with_capacity(r * c);
        for &p in perm {
            data.extend_from_slice(&src[p * c..(p + 1) * c]);
        }
        Ok(StackedMemory {
            data: Tensor::new(&[r, c], data)?,
            provenance: perm.iter().map(|&p| self.provenance[p]).collect(),
            ..self.clone()
        })
    }
}

/// Stacks `C x H x W` maps; row `t*H*W + h*W + w` holds frame `t` at
/// pixel `(h, w)`.
pub fn stack_memory<F: Scalar>(features: &[(&Tensor<F>, usize)]) -> Result<StackedMemory<F>> {
    let first = features
        .first()
        .ok_or_else(|| Error::invalid("memory needs at least one frame"))?
        .0;
    first.expect_rank(3, "memory feature")?;
    let shape = first.shape().to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let hw = h * w;
    let mut data = vec![F::zero(); features.len() * hw * c];
    let mut provenance = Vec::with_capacity(features.len() * hw);
    for (t, (f, frame)) in features.iter().enumerate() {
        if f.shape() != shape.as_slice() {
            return Err(Error::invalid(format!(
                "memory frame {t} has shape {:?}, frame 0 has {shape:?}",
                f.shape()
            )));
        }
        let block = &mut data[t * hw * c..(t + 1) * hw * c];
        for (ch, plane) in f.data().chunks(hw).enumerate() {
            for (p, &v) in plane.iter().enumerate() {
                block[p * c + ch] = v;
            }
        }
        provenance.extend(std::iter::repeat(*frame).take(hw));
    }
    Ok(StackedMemory {
        data: Tensor::new(&[features.len() * hw, c], data)?,
        provenance,
        frames: features.len(),
        height: h,
        width: w,
    })
}

/// Inverse of [`stack_memory`].
pub fn unstack_memory<F: Scalar>(memory: &StackedMemory<F>) -> Vec<Tensor<F>> {
    let (h, w) = memory.spatial();
    let (hw, c) = (h * w, memory.channels());
    memory
        .data
        .data()
        .chunks(hw * c)
        .map(|block| {
            Tensor::from_fn(&[c, h, w], |i| {
                let (ch, p) = (i / hw, i % hw);
                block[p * c + ch]
            })
        })
        .collect()
}

/// Column-stochastic `THW x HW` attention weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix<F: Scalar = f32> {
    pub weights: Tensor<F>,
}

/// `2C x H x W`: query features followed by the readout.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthFeature<F: Scalar = f32> {
    pub data: Tensor<F>,
}

impl<F: Scalar> SynthFeature<F> {
    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    /// The readout half, `C x H x W`.
    pub fn readout(&self) -> Tensor<F> {
        let s = self.data.shape();
        let half = s[0] / 2;
        let plane = s[1] * s[2];
        Tensor::new(&[half, s[1], s[2]], self.data.data()[half * plane..].to_vec())
            .expect("half of a valid tensor")
    }
}

fn check_query<F: Scalar>(memory: &StackedMemory<F>, query: &Tensor<F>) -> Result<(usize, usize)> {
    query.expect_rank(3, "query feature")?;
    let c = query.shape()[0];
    if c != memory.channels() {
        return Err(Error::invalid(format!(
            "memory has {} channels, query has {c}",
            memory.channels()
        )));
    }
    Ok((c, query.shape()[1] * query.shape()[2]))
}

fn temperature<F: Scalar>(c: usize) -> F {
    F::c((c as f64).sqrt())
}

/// Full attention weights `softmax_columns(M Q / sqrt(C))`.
pub fn similarity<F: Scalar>(memory: &StackedMemory<F>, query: &Tensor<F>) -> Result<SimilarityMatrix<F>> {
    let (c, hw) = check_query(memory, query)?;
    let q = query.clone().reshape(&[c, hw])?;
    let logits = ops::matmul(&memory.data, &q)?;
    Ok(SimilarityMatrix {
        weights: ops::softmax_columns(&logits, temperature(c))?,
    })
}

/// Blocked inference read. Equal to [`read_graph`] up to summation order.
pub fn read<F: Scalar>(memory: &StackedMemory<F>, query: &Tensor<F>) -> Result<SynthFeature<F>> {
    let (c, hw) = check_query(memory, query)?;
    let r = memory.rows();
    let m = memory.data.data();
    let q = query.data();
    let s = temperature::<F>(c);

    let mut out = vec![F::zero(); 2 * c * hw];
    out[..c * hw].copy_from_slice(q);
    let readout = &mut out[c * hw..];

    let mut q_tile = vec![F::zero(); c * COLUMN_TILE];
    let mut w_tile = vec![F::zero(); r * COLUMN_TILE];
    let mut r_tile = vec![F::zero(); c * COLUMN_TILE];
    for j0 in (0..hw).step_by(COLUMN_TILE) {
        let tw = COLUMN_TILE.min(hw - j0);
        for ch in 0..c {
            q_tile[ch * tw..(ch + 1) * tw].copy_from_slice(&q[ch * hw + j0..ch * hw + j0 + tw]);
        }
        let w = &mut w_tile[..r * tw];
        gemm(Transpose::No, Transpose::No, r, tw, c, F::one(), m, &q_tile, F::zero(), w);
        ops::softmax_columns_inplace(w, r, tw, s);
        gemm(Transpose::Yes, Transpose::No, c, tw, r, F::one(), m, w, F::zero(), &mut r_tile);
        for ch in 0..c {
            readout[ch * hw + j0..ch * hw + j0 + tw].copy_from_slice(&r_tile[ch * tw..(ch + 1) * tw]);
        }
    }
    let (h, wd) = (query.shape()[1], query.shape()[2]);
    Ok(SynthFeature {
        data: Tensor::new(&[2 * c, h, wd], out)?,
    })
}

/// Differentiable read over `C x H x W` memory and query nodes.
pub fn read_graph<F: Scalar>(g: &mut Graph<F>, memory: &[Var], query: Var) -> Result<Var> {
    let qs = g.shape(query).to_vec();
    if qs.len() != 3 {
        return Err(Error::invalid(format!("query feature must be C x H x W, got {qs:?}")));
    }
    let (c, hw) = (qs[0], qs[1] * qs[2]);
    if memory.is_empty() {
        return Err(Error::invalid("memory needs at least one frame"));
    }
    let mut rows = Vec::with_capacity(memory.len());
    for &f in memory {
        if g.shape(f)[0] != c {
            return Err(Error::invalid(format!(
                "memory has {} channels, query has {c}",
                g.shape(f)[0]
            )));
        }
        if g.shape(f) != qs.as_slice() {
            return Err(Error::invalid(format!(
                "memory shape {:?} differs from query shape {qs:?}",
                g.shape(f)
            )));
        }
        let flat = g.reshape(f, &[c, hw])?;
        rows.push(g.transpose(flat)?);
    }
    let m = g.concat(&rows)?;
    let q = g.reshape(query, &[c, hw])?;
    let logits = g.matmul(m, q)?;
    let w = g.softmax_columns(logits, temperature(c))?;
    let mt = g.transpose(m)?;
    let readout = g.matmul(mt, w)?;
    let readout = g.reshape(readout, &qs)?;
    g.concat_channels(query, readout)
}

/// Writes one column of the weights as `row_index,frame_index,weight`.
pub fn write_similarity_column<F: Scalar>(
    out: &mut impl Write,
    weights: &SimilarityMatrix<F>,
    provenance: &[usize],
    column: usize,
) -> Result<()> {
    let (r, k) = (weights.weights.shape()[0], weights.weights.shape()[1]);
    if column >= k {
        return Err(Error::invalid(format!("column {column} out of range 0..{k}")));
    }
    if provenance.len() != r {
        return Err(Error::invalid("provenance length differs from row count"));
    }
    writeln!(out, "row_index,frame_index,weight")?;
    let w = weights.weights.data();
    for (i, frame) in provenance.iter().enumerate() {
        writeln!(out, "{i},{frame},{}", w[i * k + column].f64())?;
    }
    Ok(())
}
