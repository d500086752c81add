use crate::error::{Error, Result};
use crate::tensor::{AttentionSpec, Tape, Tensor};

/// Applies rotary position encoding to query and key rows.
///
/// Both tensors are `[n × k·head_dim]`; row `r` is rotated for position
/// `positions[r]`, pair `(2i, 2i+1)` of every head by `m·base^(−2i/head_dim)`.
pub fn rope_rotate(
    q: &Tensor,
    k: &Tensor,
    positions: &[usize],
    head_dim: usize,
    base: f64,
) -> Result<(Tensor, Tensor)> {
    Ok((
        rotate(q, positions, head_dim, base)?,
        rotate(k, positions, head_dim, base)?,
    ))
}

fn rotate(x: &Tensor, positions: &[usize], head_dim: usize, base: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.leaf(x);
    let out = tape.rope(v, positions, head_dim, base)?;
    Ok(tape.value(out).clone().with_requires_grad(false))
}

/// Single-sequence masked attention over `[seq × heads·head_dim]` queries and
/// `[seq × kv_heads·head_dim]` keys/values. `key_mask[j] == false` hides key
/// `j`; with `causal`, query `i` only sees keys `j ≤ i`.
pub fn attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    key_mask: &[bool],
    causal: bool,
) -> Result<Tensor> {
    if q.shape().len() != 2 || heads == 0 || !q.last_dim().is_multiple_of(heads) {
        return Err(Error::Dimension {
            op: "attention",
            lhs: q.shape().to_vec(),
            rhs: vec![heads],
        });
    }
    let head_dim = q.last_dim() / heads;
    let kv_heads = k.last_dim() / head_dim.max(1);
    let spec = AttentionSpec {
        batch: 1,
        seq: q.shape()[0],
        heads,
        kv_heads,
        head_dim,
        causal,
        key_mask: key_mask.to_vec(),
    };
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.leaf(q), tape.leaf(k), tape.leaf(v));
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let out = tape.attention(qv, kv, vv, spec, 0.0, false, &mut rng)?;
    Ok(tape.value(out).clone().with_requires_grad(false))
}
