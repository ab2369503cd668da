use std::collections::BTreeMap;
use std::str::FromStr;

use caglow::condnet::{ConditionBundle, ConditionSchema};
use caglow::{Error, Real, SeedStream};
use serde::Serialize;

/// Textual condition such as `id=3,attr:thick=1,attr:invert=0,cu=0.5`.
///
/// `cu` sets code 0 and `cu:K` sets code `K`. Unset attributes are off and
/// unset codes are drawn from their prior.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ConditionSpec {
    pub identity: Option<usize>,
    pub attributes: BTreeMap<String, u8>,
    pub codes: BTreeMap<usize, Real>,
}

impl FromStr for ConditionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let mut spec = ConditionSpec::default();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let bad = |why: &str| Error::InvalidArgument(format!("condition `{item}`: {why}"));
            let (key, value) = item.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "id" {
                spec.identity = Some(value.parse().map_err(|_| bad("identity must be a non-negative integer"))?);
            } else if let Some(name) = key.strip_prefix("attr:") {
                let v = match value {
                    "0" => 0,
                    "1" => 1,
                    _ => return Err(bad("attribute values are 0 or 1")),
                };
                spec.attributes.insert(name.to_string(), v);
            } else if key == "cu" || key.starts_with("cu:") {
                let k = match key.strip_prefix("cu:") {
                    Some(k) => k.parse().map_err(|_| bad("code index must be an integer"))?,
                    None => 0,
                };
                let v: Real = value.parse().map_err(|_| bad("code value must be a number"))?;
                if !v.is_finite() {
                    return Err(bad("code value must be finite"));
                }
                spec.codes.insert(k, v);
            } else {
                return Err(bad("unknown key (use id, attr:NAME, cu or cu:K)"));
            }
        }
        Ok(spec)
    }
}

impl ConditionSpec {
    pub fn is_empty(&self) -> bool {
        self.identity.is_none() && self.attributes.is_empty() && self.codes.is_empty()
    }

    /// Identity (default 0) and attribute flags aligned with `names`.
    pub fn labels(&self, identities: usize, names: &[String]) -> Result<(usize, Vec<u8>), Error> {
        let id = self.identity.unwrap_or(0);
        if id >= identities {
            return Err(Error::LabelOutOfRange {
                label: id,
                classes: identities,
            });
        }
        if let Some(unknown) = self.attributes.keys().find(|k| !names.contains(k)) {
            return Err(Error::UnknownAttribute(unknown.clone()));
        }
        let flags = names.iter().map(|n| self.attributes.get(n).copied().unwrap_or(0)).collect();
        Ok((id, flags))
    }

    /// `n` rows of this condition; noise and unset codes come from `stream`,
    /// so the same stream gives the same draws for any spec.
    pub fn bundle(&self, schema: &ConditionSchema, n: usize, stream: SeedStream) -> Result<ConditionBundle, Error> {
        let (id, flags) = self.labels(schema.identities, &schema.attributes)?;
        if let Some(&k) = self.codes.keys().find(|&&k| k >= schema.codes) {
            return Err(Error::InvalidArgument(format!(
                "code {k} out of range: the model has {} codes",
                schema.codes
            )));
        }
        let mut b = ConditionBundle::from_labels(schema, &vec![id; n], &vec![flags; n], stream)?;
        for i in 0..n {
            for (&k, &v) in &self.codes {
                b.codes.row_mut(i)[k] = v;
            }
        }
        b.validate(schema)?;
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_keys() {
        let s: ConditionSpec = "id=3, attr:thick=1,attr:invert=0,cu=0.5,cu:1=-1".parse().unwrap();
        assert_eq!(s.identity, Some(3));
        assert_eq!(s.attributes["thick"], 1);
        assert_eq!(s.attributes["invert"], 0);
        assert_eq!(s.codes[&0], 0.5);
        assert_eq!(s.codes[&1], -1.0);
        assert!("".parse::<ConditionSpec>().unwrap().is_empty());
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["id", "id=-1", "attr:thick=2", "cu=x", "color=1", "cu:a=1", "cu=inf"] {
            assert!(bad.parse::<ConditionSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn labels_check_ranges() {
        let names = vec!["thick".to_string(), "frame".to_string()];
        let s: ConditionSpec = "id=2,attr:frame=1".parse().unwrap();
        assert_eq!(s.labels(3, &names).unwrap(), (2, vec![0, 1]));
        assert!(matches!(s.labels(2, &names), Err(Error::LabelOutOfRange { .. })));
        let u: ConditionSpec = "attr:bold=1".parse().unwrap();
        assert!(matches!(u.labels(3, &names), Err(Error::UnknownAttribute(_))));
    }
}
