//! Name-keyed registries of interchangeable strategy implementations.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrategyError {
    #[error("unknown {kind} {name:?}; available: {}", available.join(", "))]
    Unknown { kind: &'static str, name: String, available: Vec<String> },
    #[error("{kind} {name:?} cannot be built: {reason}")]
    Config { kind: &'static str, name: String, reason: String },
}

/// Free-form key/value settings handed to strategy factories.
pub type StrategyOptions = BTreeMap<String, String>;

type Factory<T> = Box<dyn Fn(&StrategyOptions) -> Result<Box<T>, String> + Send + Sync>;

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    default: &'static str,
    factories: BTreeMap<&'static str, Factory<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str, default: &'static str) -> Self {
        Registry { kind, default, factories: BTreeMap::new() }
    }

    pub fn register(
        &mut self,
        name: &'static str,
        factory: impl Fn(&StrategyOptions) -> Result<Box<T>, String> + Send + Sync + 'static,
    ) -> &mut Self {
        self.factories.insert(name, Box::new(factory));
        self
    }

    pub fn default_name(&self) -> &'static str {
        self.default
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str, options: &StrategyOptions) -> Result<Box<T>, StrategyError> {
        let factory = self.factories.get(name).ok_or_else(|| StrategyError::Unknown {
            kind: self.kind,
            name: name.to_string(),
            available: self.names().iter().map(|s| s.to_string()).collect(),
        })?;
        factory(options).map_err(|reason| StrategyError::Config { kind: self.kind, name: name.to_string(), reason })
    }

    pub fn create_default(&self) -> Box<T> {
        self.create(self.default, &StrategyOptions::new()).expect("default strategy builds without options")
    }
}
