//! Versioned JSON encoding of generated instances.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ambiguity::{AmbiguitySet, AuxiliaryConstraint, ExpectationRow, ProbabilityConstraint};
use crate::datagen::{Instance, InstanceConfig, Nominal, SampleSet};
use crate::graph::{Graph, NodeId};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum InstanceError {
    #[error("unsupported instance format {0}")]
    UnsupportedFormat(u32),
    #[error("inconsistent instance: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub train: SampleSet,
    pub verify: SampleSet,
}

/// On-disk layout of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub format: u32,
    pub graph: Graph,
    pub prob_constraints: Vec<Vec<ProbabilityConstraint>>,
    pub expectation_rows: Vec<ExpectationRow>,
    pub auxiliary: Vec<AuxiliaryConstraint>,
    pub sensors: Vec<NodeId>,
    pub nominal: Nominal,
    pub samples: Samples,
    pub config: InstanceConfig,
}

impl From<&Instance> for InstanceFile {
    fn from(i: &Instance) -> Self {
        InstanceFile {
            format: FORMAT_VERSION,
            graph: i.graph.clone(),
            prob_constraints: i.ambiguity.prob.clone(),
            expectation_rows: i.ambiguity.rows.clone(),
            auxiliary: i.auxiliary.clone(),
            sensors: i.sensors.clone(),
            nominal: i.nominal.clone(),
            samples: Samples {
                train: i.train.clone(),
                verify: i.verify.clone(),
            },
            config: i.config.clone(),
        }
    }
}

impl TryFrom<InstanceFile> for Instance {
    type Error = InstanceError;

    fn try_from(f: InstanceFile) -> Result<Self, InstanceError> {
        if f.format != FORMAT_VERSION {
            return Err(InstanceError::UnsupportedFormat(f.format));
        }
        let arcs = f.graph.num_arcs();
        let bad = |m: String| Err(InstanceError::Inconsistent(m));
        if f.prob_constraints.len() != arcs {
            return bad(format!(
                "{} probability lists for {arcs} arcs",
                f.prob_constraints.len()
            ));
        }
        if f.nominal.num_arcs() != arcs {
            return bad(format!(
                "{} nominal marginals for {arcs} arcs",
                f.nominal.num_arcs()
            ));
        }
        for set in [&f.samples.train, &f.samples.verify] {
            if set.rows.iter().any(|r| r.len() != arcs) {
                return bad("sample row length differs from the arc count".into());
            }
        }
        for c in &f.auxiliary {
            if c.arcs()
                .iter()
                .any(|&a| a >= arcs || f.graph.tail(a) != c.node)
            {
                return bad(format!(
                    "auxiliary constraint at node {} uses arcs outside its forward star",
                    c.node
                ));
            }
        }
        let ambiguity = AmbiguitySet {
            prob: f.prob_constraints,
            rows: f.expectation_rows,
        };
        ambiguity
            .validate()
            .map_err(|e| InstanceError::Inconsistent(e.to_string()))?;
        Ok(Instance {
            config: f.config,
            graph: f.graph,
            ambiguity,
            auxiliary: f.auxiliary,
            sensors: f.sensors,
            nominal: f.nominal,
            train: f.samples.train,
            verify: f.samples.verify,
        })
    }
}

pub fn to_json(i: &Instance) -> String {
    serde_json::to_string_pretty(&InstanceFile::from(i)).expect("instance serializes")
}

pub fn from_json(text: &str) -> Result<Instance, InstanceError> {
    let file: InstanceFile = serde_json::from_str(text)?;
    Instance::try_from(file)
}

pub fn read(path: &Path) -> Result<Instance, InstanceError> {
    from_json(&std::fs::read_to_string(path)?)
}

pub fn write(path: &Path, i: &Instance) -> Result<(), InstanceError> {
    std::fs::write(path, to_json(i))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_instance;
    use crate::graph::GraphClass;

    #[test]
    fn round_trip_is_exact() {
        for class in [GraphClass::Acyclic, GraphClass::General] {
            let cfg = InstanceConfig {
                class,
                h: 2,
                r: 2,
                num_aux: 2,
                seed: 11,
                ..InstanceConfig::default()
            };
            let inst = generate_instance(&cfg).unwrap();
            let text = to_json(&inst);
            assert!(text.contains("\"format\": 1"));
            assert_eq!(from_json(&text).unwrap(), inst);
        }
    }

    #[test]
    fn rejects_other_versions() {
        let inst = generate_instance(&InstanceConfig {
            h: 1,
            r: 2,
            num_aux: 1,
            kappa: 0.9,
            ..InstanceConfig::default()
        })
        .unwrap();
        let mut file = InstanceFile::from(&inst);
        file.format = 2;
        let text = serde_json::to_string(&file).unwrap();
        assert!(matches!(
            from_json(&text),
            Err(InstanceError::UnsupportedFormat(2))
        ));
    }
}
