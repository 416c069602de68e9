use std::fmt;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// Network component a trainable parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    Fe,
    Pgp,
    Scorer,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Fe, ParamGroup::Pgp, ParamGroup::Scorer];

    fn bit(self) -> u8 {
        match self {
            ParamGroup::Fe => 1,
            ParamGroup::Pgp => 2,
            ParamGroup::Scorer => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Fe => "FE",
            ParamGroup::Pgp => "PGP",
            ParamGroup::Scorer => "SCORER",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "FE" => Some(ParamGroup::Fe),
            "PGP" => Some(ParamGroup::Pgp),
            "SCORER" => Some(ParamGroup::Scorer),
            _ => None,
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Set of parameter groups allowed to receive gradient from a backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GroupSet(u8);

impl GroupSet {
    pub const ALL: GroupSet = GroupSet(7);
    pub const NONE: GroupSet = GroupSet(0);
    /// FE and PGP.
    pub const ALL_BUT_SCORER: GroupSet = GroupSet(3);
    /// FE and SCORER.
    pub const ALL_BUT_PGP: GroupSet = GroupSet(5);

    pub fn of(groups: &[ParamGroup]) -> Self {
        GroupSet(groups.iter().fold(0, |m, g| m | g.bit()))
    }

    pub fn contains(self, g: ParamGroup) -> bool {
        self.0 & g.bit() != 0
    }

    pub fn complement(self) -> Self {
        GroupSet(!self.0 & 7)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
}

/// Registry of trainable tensors with their gradient and momentum buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn register(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let zeros = Tensor::zeros(value.shape());
        self.params.push(Param {
            name,
            group,
            grad: zeros.clone(),
            velocity: zeros,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn grads_in(&self, group: ParamGroup) -> impl Iterator<Item = &Tensor> {
        self.params.iter().filter(move |p| p.group == group).map(|p| &p.grad)
    }
}
