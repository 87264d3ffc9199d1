//! Q-mix: a secret, banded, block-structured permutation applied before an
//! inner operator and undone afterwards.
//!
//! Permutations are drawn per stay from that stay's stream. Every full block
//! of `block_length` points inside a stay uses the same permutation; a
//! shorter trailing block gets its own. Bandedness comes from sorting jittered
//! keys `i + b * U_i` with `U_i ~ U[0, 1)`: any two indices at least `b`
//! apart keep their order, so no element moves by more than `b - 1`.

use rand::Rng;

use super::{ColumnOperator, Layout, OperatorKind, QmixConfig};
use crate::error::{Error, Result};
use crate::manifold::StandardizedColumn;
use crate::rng::RandomnessContext;

/// Banded permutation of `0..len`; `perm[p]` is the source index placed at
/// position `p`.
pub fn qmix_permutation_from_rng(len: usize, bandwidth: usize, rng: &mut impl Rng) -> Vec<usize> {
    if bandwidth == 0 {
        return (0..len).collect();
    }
    let mut keyed: Vec<(f64, usize)> = (0..len)
        .map(|i| (i as f64 + bandwidth as f64 * rng.gen::<f64>(), i))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// The block permutation of `0..block_length` for one stay.
pub fn qmix_make_permutation(ctx: &RandomnessContext, cfg: &QmixConfig) -> Vec<usize> {
    let m = cfg.block_length.max(1);
    qmix_permutation_from_rng(m, cfg.bandwidth.min(m), &mut ctx.stream("qmix-perm"))
}

/// Permutation of one stay of length `len`, block structure included.
pub fn qmix_stay_permutation(ctx: &RandomnessContext, cfg: &QmixConfig, len: usize) -> Vec<usize> {
    let m = cfg.block_length.max(1);
    let b = cfg.bandwidth.min(m);
    let mut rng = ctx.stream("qmix-perm");
    let block = qmix_permutation_from_rng(m, b, &mut rng);
    let full = len / m;
    let mut perm = Vec::with_capacity(len);
    for k in 0..full {
        perm.extend(block.iter().map(|&i| k * m + i));
    }
    let rest = len - full * m;
    if rest > 0 {
        let tail = qmix_permutation_from_rng(rest, b.min(rest), &mut rng);
        perm.extend(tail.into_iter().map(|i| full * m + i));
    }
    perm
}

#[derive(Debug)]
pub struct QmixWrapper {
    inner: Box<dyn ColumnOperator>,
    cfg: QmixConfig,
}

impl QmixWrapper {
    pub fn inner(&self) -> &dyn ColumnOperator {
        self.inner.as_ref()
    }

    pub fn config(&self) -> &QmixConfig {
        &self.cfg
    }

    fn column_permutation(&self, layout: &Layout, ctx: &RandomnessContext) -> Vec<usize> {
        let mut perm = Vec::with_capacity(layout.len());
        for seg in layout.segments() {
            let local = qmix_stay_permutation(&layout.context(seg, ctx), &self.cfg, seg.len);
            perm.extend(local.into_iter().map(|i| seg.start + i));
        }
        perm
    }
}

/// Wraps `inner` in Q-mix. Reflections are rejected: a fixed linear map
/// conjugated by a permutation is still a fixed linear map.
pub fn qmix_wrap(inner: Box<dyn ColumnOperator>, cfg: QmixConfig) -> Result<QmixWrapper> {
    if inner.name() == OperatorKind::T3.name() {
        return Err(Error::ConfigError("Q-mix cannot wrap T3".into()));
    }
    cfg.validate()?;
    Ok(QmixWrapper { inner, cfg })
}

impl ColumnOperator for QmixWrapper {
    fn name(&self) -> String {
        format!("Q+{}", self.inner.name())
    }

    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    fn apply(
        &self,
        z: &StandardizedColumn,
        layout: &Layout,
        ctx: &RandomnessContext,
    ) -> Result<StandardizedColumn> {
        layout.check(z.len())?;
        let zs = z.as_slice();
        let perm = self.column_permutation(layout, ctx);
        let mixed: Vec<f64> = perm.iter().map(|&i| zs[i]).collect();
        let moved = self.inner.apply(
            &StandardizedColumn::from_vec(mixed),
            layout,
            &ctx.scoped("qmix-inner"),
        )?;
        let mut out = vec![0.0; zs.len()];
        for (p, &i) in perm.iter().enumerate() {
            out[i] = moved.as_slice()[p];
        }
        Ok(StandardizedColumn::from_vec(out))
    }
}
