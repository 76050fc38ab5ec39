use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Condition label fed to the denoiser: either a class index or the
/// reserved null token used for unconditional prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    Class(u16),
    Null,
}

impl ClassLabel {
    pub fn index(&self) -> Option<u16> {
        match self {
            ClassLabel::Class(i) => Some(*i),
            ClassLabel::Null => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, ClassLabel::Null)
    }
}

/// The ordered set of glyph classes for a corpus. The null token is never
/// a member; it only exists as a condition value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSet {
    names: Vec<String>,
}

impl ClassSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(CoreError::InvalidLabel("class set is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.clone()) {
                return Err(CoreError::InvalidLabel(format!("duplicate class '{n}'")));
            }
        }
        Ok(Self { names })
    }

    /// The 52 Latin letter classes 'A'..'Z' then 'a'..'z'.
    pub fn latin52() -> Self {
        let names = ('A'..='Z')
            .chain('a'..='z')
            .map(|c| c.to_string())
            .collect();
        Self { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: u16) -> Option<&str> {
        self.names.get(index as usize).map(|s| s.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<u16> {
        self.names.iter().position(|n| n == name).map(|i| i as u16)
    }

    /// Resolves a class name to a label, erroring on unknown names.
    pub fn label(&self, name: &str) -> Result<ClassLabel> {
        self.index_of(name)
            .map(ClassLabel::Class)
            .ok_or_else(|| CoreError::InvalidLabel(format!("unknown class '{name}'")))
    }

    /// Checks that a condition label is valid for this set.
    pub fn validate(&self, label: ClassLabel) -> Result<()> {
        match label {
            ClassLabel::Null => Ok(()),
            ClassLabel::Class(i) if (i as usize) < self.names.len() => Ok(()),
            ClassLabel::Class(i) => Err(CoreError::InvalidLabel(format!(
                "class index {i} out of range (have {} classes)",
                self.names.len()
            ))),
        }
    }
}
