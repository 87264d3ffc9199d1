//! Name-keyed construction of column operators.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{
    qmix_wrap, ColumnOperator, HouseholderReflection, IdentityOperator, NoiseProjection,
    OperatorConfig, OperatorKind, TripletRotation,
};
use crate::error::{Error, Result};

/// Builds an operator from a resolved config.
pub type OperatorFactory =
    Arc<dyn Fn(&OperatorConfig) -> Result<Box<dyn ColumnOperator>> + Send + Sync>;

#[derive(Clone, Default)]
pub struct OperatorRegistry {
    factories: BTreeMap<String, OperatorFactory>,
}

impl std::fmt::Debug for OperatorRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorRegistry")
            .field("names", &self.names())
            .finish()
    }
}

impl OperatorRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(
            OperatorKind::Identity.name(),
            Arc::new(|_| Ok(Box::new(IdentityOperator))),
        );
        for kind in [OperatorKind::T1Uniform, OperatorKind::T1Weighted] {
            r.register(
                kind.name(),
                Arc::new(|cfg| Ok(Box::new(TripletRotation::from_config(cfg)?))),
            );
        }
        r.register(
            OperatorKind::T2.name(),
            Arc::new(|cfg| Ok(Box::new(NoiseProjection::from_config(cfg)?))),
        );
        r.register(
            OperatorKind::T3.name(),
            Arc::new(|cfg| Ok(Box::new(HouseholderReflection::from_config(cfg)?))),
        );
        r
    }

    /// Registers (or replaces) the factory for `name`.
    pub fn register(&mut self, name: &str, factory: OperatorFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    /// Builds the operator named by `cfg.kind`, wrapped in Q-mix when enabled.
    pub fn build(&self, cfg: &OperatorConfig) -> Result<Box<dyn ColumnOperator>> {
        cfg.validate()?;
        let name = cfg.kind.name();
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::ConfigError(format!("operator `{name}` is not registered")))?;
        let op = factory(cfg)?;
        match cfg.qmix {
            Some(q) if q.enabled => Ok(Box::new(qmix_wrap(op, q)?)),
            _ => Ok(op),
        }
    }
}
