//! Named, ordered variable scopes.
//!
//! A scope partitions an `n`-vector into named blocks, e.g.
//! `[("x", 3), ("y", 2)]` for a 5-dimensional factor. Factor rows/columns are
//! laid out in scope order.

use serde::{Deserialize, Serialize};

use crate::error::{FactorError, FactorResult};

/// Ordered list of `(variable, dimension)` blocks with unique names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scope {
    vars: Vec<(String, usize)>,
}

impl Scope {
    pub fn new<S: Into<String>>(vars: Vec<(S, usize)>) -> FactorResult<Self> {
        let vars: Vec<(String, usize)> = vars.into_iter().map(|(n, d)| (n.into(), d)).collect();
        for (i, (name, _)) in vars.iter().enumerate() {
            if vars[..i].iter().any(|(m, _)| m == name) {
                return Err(FactorError::NameCollision(name.clone()));
            }
        }
        Ok(Self { vars })
    }

    /// Single-variable scope.
    pub fn single<S: Into<String>>(name: S, dim: usize) -> Self {
        Self {
            vars: vec![(name.into(), dim)],
        }
    }

    /// Empty scope (dimension zero); the value of a factor over it is a bare
    /// scalar.
    pub fn empty() -> Self {
        Self { vars: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.vars.iter().map(|(_, d)| d).sum()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn vars(&self) -> &[(String, usize)] {
        &self.vars
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.iter().map(|(n, _)| n.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.iter().any(|(n, _)| n == name)
    }

    pub fn dim_of(&self, name: &str) -> Option<usize> {
        self.vars.iter().find(|(n, _)| n == name).map(|(_, d)| *d)
    }

    /// Row range of a variable inside the stacked vector.
    pub fn range_of(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut offset = 0;
        for (n, d) in &self.vars {
            if n == name {
                return Some(offset..offset + d);
            }
            offset += d;
        }
        None
    }

    /// Row indices (in order) of the listed variables.
    pub fn indices_of(&self, names: &[&str]) -> FactorResult<Vec<usize>> {
        let mut idx = Vec::new();
        for name in names {
            let range = self
                .range_of(name)
                .ok_or_else(|| FactorError::UnknownVariable((*name).to_string()))?;
            idx.extend(range);
        }
        Ok(idx)
    }

    /// Sub-scope of the listed variables, in the listed order.
    pub fn select(&self, names: &[&str]) -> FactorResult<Scope> {
        let mut vars = Vec::with_capacity(names.len());
        for name in names {
            let dim = self
                .dim_of(name)
                .ok_or_else(|| FactorError::UnknownVariable((*name).to_string()))?;
            vars.push(((*name).to_string(), dim));
        }
        Scope::new(vars)
    }

    /// Concatenates two scopes; errors on a name collision.
    pub fn extend(&self, other: &Scope) -> FactorResult<Scope> {
        let mut vars = self.vars.clone();
        for (n, d) in &other.vars {
            if self.contains(n) {
                return Err(FactorError::NameCollision(n.clone()));
            }
            vars.push((n.clone(), *d));
        }
        Ok(Scope { vars })
    }

    /// Union scope: this scope's variables followed by the other's unseen
    /// variables, in their original order. Dimensions must agree on shared
    /// names.
    pub fn union(&self, other: &Scope) -> FactorResult<Scope> {
        let mut vars = self.vars.clone();
        for (n, d) in &other.vars {
            match self.dim_of(n) {
                Some(existing) if existing != *d => {
                    return Err(FactorError::DimensionMismatch {
                        context: "scope union (shared variable dimensions differ)",
                        expected: existing,
                        got: *d,
                    })
                }
                Some(_) => {}
                None => vars.push((n.clone(), *d)),
            }
        }
        Ok(Scope { vars })
    }

    /// Variables of this scope not present in `other`.
    pub fn difference(&self, other: &Scope) -> Vec<&str> {
        self.vars
            .iter()
            .filter(|(n, _)| !other.contains(n))
            .map(|(n, _)| n.as_str())
            .collect()
    }

    /// Whether `order` names exactly the variables of this scope.
    pub fn is_permutation(&self, order: &[&str]) -> bool {
        order.len() == self.vars.len() && order.iter().all(|n| self.contains(n))
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, (n, d)) in self.vars.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{n}:{d}")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_and_dims() {
        let s = Scope::new(vec![("x", 2), ("y", 3)]).unwrap();
        assert_eq!(s.dim(), 5);
        assert_eq!(s.range_of("y"), Some(2..5));
        assert_eq!(s.indices_of(&["y", "x"]).unwrap(), vec![2, 3, 4, 0, 1]);
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(Scope::new(vec![("x", 1), ("x", 2)]).is_err());
    }

    #[test]
    fn union_keeps_left_order() {
        let a = Scope::new(vec![("x", 2), ("y", 1)]).unwrap();
        let b = Scope::new(vec![("z", 1), ("x", 2)]).unwrap();
        let u = a.union(&b).unwrap();
        assert_eq!(
            u.names().collect::<Vec<_>>(),
            vec!["x", "y", "z"]
        );
    }
}
