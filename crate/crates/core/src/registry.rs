use std::collections::BTreeMap;

use thiserror::Error;

use crate::types::NodeId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("{0} is already registered")]
    Duplicate(NodeId),
    #[error("registry is full ({0} users)")]
    Full(usize),
}

/// Current-user slot assignment as seen by one node: index = CUS position.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CusRegistry {
    members: Vec<NodeId>,
    last_heard: BTreeMap<NodeId, u64>,
    max_users: usize,
}

impl CusRegistry {
    pub fn new(max_users: usize) -> Self {
        CusRegistry {
            members: Vec::new(),
            last_heard: BTreeMap::new(),
            max_users,
        }
    }

    pub fn from_members(members: Vec<NodeId>, max_users: usize) -> Result<Self, RegistryError> {
        let mut r = CusRegistry::new(max_users);
        for m in members {
            r.append(m)?;
        }
        Ok(r)
    }

    pub fn members(&self) -> &[NodeId] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn max_users(&self) -> usize {
        self.max_users
    }

    pub fn is_full(&self) -> bool {
        self.members.len() >= self.max_users
    }

    pub fn position(&self, node: NodeId) -> Option<usize> {
        self.members.iter().position(|&m| m == node)
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.position(node).is_some()
    }

    /// Gives `node` the next vacant slot.
    pub fn append(&mut self, node: NodeId) -> Result<usize, RegistryError> {
        if self.contains(node) {
            return Err(RegistryError::Duplicate(node));
        }
        if self.is_full() {
            return Err(RegistryError::Full(self.max_users));
        }
        self.members.push(node);
        Ok(self.members.len() - 1)
    }

    pub fn mark_heard(&mut self, node: NodeId, superframe: u64) {
        if self.contains(node) {
            self.last_heard.insert(node, superframe);
        }
    }

    pub fn last_heard(&self, node: NodeId) -> Option<u64> {
        self.last_heard.get(&node).copied()
    }

    /// Removes `silent` members; survivors shift down keeping their order.
    pub fn heal(&mut self, silent: &[NodeId]) {
        self.members.retain(|m| !silent.contains(m));
        self.last_heard.retain(|m, _| !silent.contains(m));
    }

    pub fn clear(&mut self) {
        self.members.clear();
        self.last_heard.clear();
    }
}
