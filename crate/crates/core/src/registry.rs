//! Named strategy factories, selected by config key or CLI flag.

use indexmap::IndexMap;
use u2seg_tensor::{Adam, AdamThenSgd, Optimizer, SgdMomentum};

use crate::post::{FloodFill, Labeler, UnionFind};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

pub type Factory<T, Ctx> = fn(&Ctx) -> Box<T>;

pub struct Registry<T: ?Sized, Ctx> {
    kind: &'static str,
    entries: IndexMap<&'static str, Factory<T, Ctx>>,
}

impl<T: ?Sized, Ctx> Registry<T, Ctx> {
    pub fn new(kind: &'static str) -> Self {
        Registry { kind, entries: IndexMap::new() }
    }

    /// Adds or replaces a factory.
    pub fn register(&mut self, name: &'static str, f: Factory<T, Ctx>) -> &mut Self {
        self.entries.insert(name, f);
        self
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn create(&self, name: &str, ctx: &Ctx) -> Result<Box<T>> {
        match self.entries.get(name) {
            Some(f) => Ok(f(ctx)),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_owned(),
                available: self.names().collect::<Vec<_>>().join(", "),
            }),
        }
    }
}

fn adam(c: &TrainConfig) -> Box<dyn Optimizer> {
    Box::new(Adam::new(c.hyper()))
}

fn sgd(c: &TrainConfig) -> Box<dyn Optimizer> {
    Box::new(SgdMomentum::new(c.hyper()))
}

fn adam_then_sgd(c: &TrainConfig) -> Box<dyn Optimizer> {
    Box::new(AdamThenSgd::new(c.hyper(), c.switch_step))
}

fn union_find(_: &()) -> Box<dyn Labeler> {
    Box::new(UnionFind)
}

fn flood_fill(_: &()) -> Box<dyn Labeler> {
    Box::new(FloodFill)
}

/// `adam`, `sgd`, `adam-then-sgd`.
pub fn optimizers() -> Registry<dyn Optimizer, TrainConfig> {
    let mut r = Registry::new("optimizer");
    r.register("adam", adam).register("sgd", sgd).register("adam-then-sgd", adam_then_sgd);
    r
}

/// `union-find` (default), `flood-fill`.
pub fn labelers() -> Registry<dyn Labeler, ()> {
    let mut r = Registry::new("labeler");
    r.register("union-find", union_find).register("flood-fill", flood_fill);
    r
}
