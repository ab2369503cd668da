//! Comparison systems: a flow with a class-dependent prior and a latent
//! classifier, and latent editing with stored mean attribute directions.

mod cglow;
mod prestore;

pub use cglow::{train_cglow, CGlow, ClassPrior};
pub use prestore::{compute_attribute_directions, manipulate, AttributeDirection, AttributeDirections};

use std::str::FromStr;

use crate::autodiff::Real;
use crate::error::{Error, Result};

/// One latent edit: push attribute `attribute` on (`sign = +1`) or off (`-1`).
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeEdit {
    pub attribute: String,
    pub sign: Real,
}

impl AttributeEdit {
    pub fn on(attribute: &str) -> Self {
        Self {
            attribute: attribute.to_string(),
            sign: 1.0,
        }
    }

    pub fn off(attribute: &str) -> Self {
        Self {
            attribute: attribute.to_string(),
            sign: -1.0,
        }
    }
}

impl FromStr for AttributeEdit {
    type Err = Error;

    /// `name`, `+name` or `-name`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (sign, name) = match s.as_bytes().first() {
            Some(b'-') => (-1.0, &s[1..]),
            Some(b'+') => (1.0, &s[1..]),
            _ => (1.0, s),
        };
        if name.is_empty() {
            return Err(Error::InvalidArgument(format!("empty attribute edit `{s}`")));
        }
        Ok(Self {
            attribute: name.to_string(),
            sign,
        })
    }
}

/// Parses a comma-separated edit list such as `thick,invert,-thick`.
pub fn parse_edits(s: &str) -> Result<Vec<AttributeEdit>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}
