//! Density recipes: arithmetic expressions in `x` and `y`.

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid};

/// A validated expression such as `1+2*cos(2*pi*x)`.
///
/// Supported: `+ - * / ^`, `sin cos tan exp ln sqrt abs` and friends, the
/// constants `pi` and `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    source: String,
}

impl Recipe {
    /// Parses `source`; `field` names the config key in error messages.
    pub fn parse(field: &str, source: &str) -> Result<Self> {
        let bad = |reason: String| Error::Validation {
            field: field.to_string(),
            reason,
        };
        let expr: meval::Expr = source
            .parse()
            .map_err(|e| bad(format!("cannot parse `{source}`: {e}")))?;
        let _ = expr
            .bind2("x", "y")
            .map_err(|e| bad(format!("`{source}`: {e}")))?;
        Ok(Self {
            source: source.to_string(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluates the recipe once per node.
    pub fn sample(&self, grid: &TorusGrid) -> Result<ScalarField> {
        let expr: meval::Expr = self.source.parse().expect("validated at parse time");
        let f = expr.bind2("x", "y").expect("validated at parse time");
        let field = grid.from_fn(f);
        if !field.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "recipe `{}` is not finite at every node",
                self.source
            )));
        }
        Ok(field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_at_nodes() {
        let g = TorusGrid::new(8).unwrap();
        let r = Recipe::parse("background", "1+2*cos(2*pi*x)").unwrap();
        let f = r.sample(&g).unwrap();
        assert!((f[(0, 3)] - 3.0).abs() < 1e-15);
        assert!((f[(4, 0)] + 1.0).abs() < 1e-14);
        let r = Recipe::parse("volume", "e^(y) * 2").unwrap();
        assert!((r.sample(&g).unwrap()[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let e = Recipe::parse("background", "1+").unwrap_err();
        assert!(matches!(e, Error::Validation { ref field, .. } if field == "background"));
        assert!(Recipe::parse("volume", "z+1").is_err());
        let g = TorusGrid::new(8).unwrap();
        assert!(Recipe::parse("volume", "1/x").unwrap().sample(&g).is_err());
    }
}
