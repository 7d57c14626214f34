//! Experiment configuration file: JSON, every field optional, defaults equal
//! to the reference setup (16 ONUs x 20 clients, 100 Mbit/s slice, 25 s
//! threshold).

use std::path::Path;

use schemars::gen::SchemaGenerator;
use schemars::schema::{InstanceType, Schema, SchemaObject, SubschemaValidation};

use crate::error::{Error, Result};
use crate::orchestrator::ExperimentConfig;

/// Serializes `f64::INFINITY` as the string `"inf"` and accepts either a
/// number or `"inf"` on input.
pub mod f64_or_inf {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = f64;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match v {
                    "inf" | "infinity" => Ok(f64::INFINITY),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

pub(crate) fn f64_or_inf_schema(_: &mut SchemaGenerator) -> Schema {
    let number = SchemaObject {
        instance_type: Some(InstanceType::Number.into()),
        ..Default::default()
    };
    let inf = SchemaObject {
        enum_values: Some(vec!["inf".into()]),
        ..Default::default()
    };
    SchemaObject {
        subschemas: Some(Box::new(SubschemaValidation {
            any_of: Some(vec![number.into(), inf.into()]),
            ..Default::default()
        })),
        ..Default::default()
    }
    .into()
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str, origin: &Path) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}

/// JSON Schema of the configuration document.
pub fn config_schema() -> String {
    let schema = schemars::schema_for!(ExperimentConfig);
    let mut s = serde_json::to_string_pretty(&schema).expect("schema serializes");
    s.push('\n');
    s
}
