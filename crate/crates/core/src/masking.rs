//! Message-dropout masks.
//!
//! An agent's network input is the flat vector `x = (own observation |
//! message from agent a | message from agent b | ...)`, described by a
//! [`BlockLayout`]. Training zeroes whole message blocks (block-wise) or
//! single elements (element-wise ablation) with probability `p`; the own
//! block survives unless a "full" variant is requested. At execution the
//! dropped-out inputs are instead multiplied by `1 - p`, which for the first
//! affine layer is the same as scaling the outgoing weights.
//!
//! Masks are plain zeroing; there is no `1 / (1 - p)` inflation at train time.


use crate::error::{check_prob, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageBlock {
    /// Sender of the message.
    pub agent: usize,
    pub offset: usize,
    pub len: usize,
}

impl MessageBlock {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Partition of a flat input into the own block and per-sender message blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    own: Block,
    messages: Vec<MessageBlock>,
    total_dim: usize,
}

impl BlockLayout {
    /// Own block first, then messages in the given order, all contiguous.
    pub fn new(own_len: usize, messages: &[(usize, usize)]) -> Result<Self> {
        let mut offset = own_len;
        let blocks = messages
            .iter()
            .map(|&(agent, len)| {
                let b = MessageBlock { agent, offset, len };
                offset += len;
                b
            })
            .collect();
        Self::from_parts(Block { offset: 0, len: own_len }, blocks, offset)
    }

    /// Layout for agent `me` of `n` agents that all send `msg_len`-long messages.
    pub fn for_agent(me: usize, n: usize, own_len: usize, msg_len: usize) -> Result<Self> {
        let msgs: Vec<(usize, usize)> = (0..n).filter(|&j| j != me).map(|j| (j, msg_len)).collect();
        Self::new(own_len, &msgs)
    }

    /// Arbitrary placement; blocks must be disjoint, non-empty, and cover
    /// `0..total_dim` exactly.
    pub fn from_parts(own: Block, messages: Vec<MessageBlock>, total_dim: usize) -> Result<Self> {
        let mut spans: Vec<(usize, usize)> = std::iter::once((own.offset, own.len))
            .chain(messages.iter().map(|m| (m.offset, m.len)))
            .collect();
        if spans.iter().any(|&(_, len)| len == 0) {
            return Err(Error::Shape("empty block in layout".into()));
        }
        spans.sort_unstable();
        let mut cursor = 0;
        for (offset, len) in spans {
            if offset != cursor {
                return Err(Error::Shape(format!("layout gap or overlap at {offset}")));
            }
            cursor += len;
        }
        if cursor != total_dim {
            return Err(Error::Shape(format!("layout covers {cursor} of {total_dim} entries")));
        }
        Ok(Self {
            own,
            messages,
            total_dim,
        })
    }

    pub fn own(&self) -> Block {
        self.own
    }

    pub fn messages(&self) -> &[MessageBlock] {
        &self.messages
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn message_dim(&self) -> usize {
        self.messages.iter().map(|m| m.len).sum()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.total_dim {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "input has {} entries, layout expects {}",
                x.len(),
                self.total_dim
            )))
        }
    }
}

/// One keep/drop decision per message block (and optionally the own block).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockMask {
    pub keep_own: bool,
    pub keep: Vec<bool>,
}

impl BlockMask {
    pub fn keep_all(layout: &BlockLayout) -> Self {
        Self {
            keep_own: true,
            keep: vec![true; layout.messages.len()],
        }
    }
}

/// One keep/drop decision per input element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementMask {
    pub keep: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mask {
    Block(BlockMask),
    Element(ElementMask),
}

impl From<BlockMask> for Mask {
    fn from(m: BlockMask) -> Self {
        Mask::Block(m)
    }
}

impl From<ElementMask> for Mask {
    fn from(m: ElementMask) -> Self {
        Mask::Element(m)
    }
}

/// Keep each message block independently with probability `1 - p`; the own
/// block is always kept unless `include_own`.
pub fn sample_block_mask<R: rand::Rng + ?Sized>(
    layout: &BlockLayout,
    p: f64,
    include_own: bool,
    rng: &mut R,
) -> Result<BlockMask> {
    check_prob(p)?;
    let keep_own = if include_own { rng.random::<f64>() >= p } else { true };
    let keep = layout.messages.iter().map(|_| rng.random::<f64>() >= p).collect();
    Ok(BlockMask { keep_own, keep })
}

/// Keep each message element (and own element iff `include_own`)
/// independently with probability `1 - p`.
pub fn sample_element_mask<R: rand::Rng + ?Sized>(
    layout: &BlockLayout,
    p: f64,
    include_own: bool,
    rng: &mut R,
) -> Result<ElementMask> {
    check_prob(p)?;
    let mut keep = vec![true; layout.total_dim];
    if include_own {
        for k in layout.own.range() {
            keep[k] = rng.random::<f64>() >= p;
        }
    }
    for m in &layout.messages {
        for k in m.range() {
            keep[k] = rng.random::<f64>() >= p;
        }
    }
    Ok(ElementMask { keep })
}

/// Zero the dropped blocks or elements of `x`.
pub fn apply_mask(x: &[f64], layout: &BlockLayout, mask: &Mask) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    apply_mask_in_place(&mut out, layout, mask)?;
    Ok(out)
}

pub fn apply_mask_in_place(x: &mut [f64], layout: &BlockLayout, mask: &Mask) -> Result<()> {
    layout.check(x)?;
    match mask {
        Mask::Block(m) => {
            if m.keep.len() != layout.messages.len() {
                return Err(Error::Shape(format!(
                    "mask has {} blocks, layout has {}",
                    m.keep.len(),
                    layout.messages.len()
                )));
            }
            if !m.keep_own {
                x[layout.own.range()].fill(0.0);
            }
            for (block, &keep) in layout.messages.iter().zip(&m.keep) {
                if !keep {
                    x[block.range()].fill(0.0);
                }
            }
        }
        Mask::Element(m) => {
            if m.keep.len() != x.len() {
                return Err(Error::Shape("element mask length differs from input".into()));
            }
            for (v, &keep) in x.iter_mut().zip(&m.keep) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
    }
    Ok(())
}

/// Execution-time compensation: message entries times `1 - p`, own block as is.
pub fn exec_scale(x: &[f64], layout: &BlockLayout, p: f64) -> Result<Vec<f64>> {
    exec_scale_with(x, layout, p, false)
}

/// [`exec_scale`], optionally scaling the own block too (full-dropout variants).
pub fn exec_scale_with(x: &[f64], layout: &BlockLayout, p: f64, include_own: bool) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    exec_scale_in_place(&mut out, layout, p, include_own)?;
    Ok(out)
}

pub fn exec_scale_in_place(x: &mut [f64], layout: &BlockLayout, p: f64, include_own: bool) -> Result<()> {
    check_prob(p)?;
    layout.check(x)?;
    if p == 0.0 {
        return Ok(());
    }
    let s = 1.0 - p;
    if include_own {
        x[layout.own.range()].iter_mut().for_each(|v| *v *= s);
    }
    for block in &layout.messages {
        x[block.range()].iter_mut().for_each(|v| *v *= s);
    }
    Ok(())
}

/// Every distinct block mask that keeps the own block: `2^(blocks)` of them.
pub fn enumerate_block_masks(layout: &BlockLayout) -> Vec<BlockMask> {
    let n = layout.messages.len();
    (0..1u64 << n)
        .map(|bits| BlockMask {
            keep_own: true,
            keep: (0..n).map(|k| bits >> k & 1 == 1).collect(),
        })
        .collect()
}
