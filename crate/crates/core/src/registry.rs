//! Name-keyed tables of interchangeable strategies.
//!
//! Each strategy family (field samplers, conditional laws, quadrature rules,
//! nonlinearities, ...) exposes a `Registry` of constructors so callers can
//! pick an implementation by name from configuration.

use crate::error::{Error, Result};

pub struct Registry<C> {
    family: &'static str,
    entries: Vec<(&'static str, C)>,
}

impl<C: Clone> Registry<C> {
    pub fn new(family: &'static str) -> Self {
        Self { family, entries: Vec::new() }
    }

    /// Adds or replaces the entry called `name`.
    pub fn register(&mut self, name: &'static str, ctor: C) -> &mut Self {
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = ctor,
            None => self.entries.push((name, ctor)),
        }
        self
    }

    pub fn get(&self, name: &str) -> Result<C> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, c)| c.clone())
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown {} '{name}' (available: {})",
                    self.family,
                    self.names().join(", ")
                ))
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}
