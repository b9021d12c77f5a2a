//! Protocol spec files: a small JSON document that names either a builtin
//! protocol or a composed lightest-bin pipeline, with enough declared shape
//! (players, rounds, message widths, domain) to cross-check the result.

use crate::boolfn::BooleanFunction;
use crate::construct::{build_pipeline, PipelineConfig, PipelineShape};
use crate::protocol::{
    half_majority, leader_const, leader_mod, one_round_fn, one_round_fn_multibit, parity_rounds,
    select_then_vote, xor_tribes, OutcomeDomain, ProtocolSpec,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecIoError {
    #[error("cannot read spec file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed spec document: {0}")]
    Parse(String),
    #[error("unknown {kind} protocol `{name}`")]
    UnknownName { kind: String, name: String },
    #[error("declared {field} = {declared} but the protocol has {actual}")]
    ShapeMismatch {
        field: String,
        declared: String,
        actual: String,
    },
    #[error(transparent)]
    BoolFn(#[from] crate::boolfn::BoolFnError),
    #[error(transparent)]
    Protocol(#[from] crate::protocol::ProtocolError),
    #[error(transparent)]
    Construct(#[from] crate::construct::ConstructError),
}

pub type Result<T> = std::result::Result<T, SpecIoError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecDoc {
    pub kind: String,
    pub name: String,
    pub k: usize,
    pub players: u32,
    pub bits: Vec<u32>,
    pub domain: String,
    #[serde(default)]
    pub params: Value,
}

/// A loaded spec: the evaluable protocol plus, for composed pipelines, the
/// construction's shape summary.
pub struct LoadedSpec {
    pub protocol: ProtocolSpec,
    pub shape: Option<PipelineShape>,
}

fn param_str(params: &Value, key: &str) -> Result<String> {
    params
        .get(key)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| SpecIoError::Parse(format!("params.{key} (string) is required")))
}

fn param_u32(params: &Value, key: &str) -> Result<u32> {
    params
        .get(key)
        .and_then(Value::as_u64)
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| SpecIoError::Parse(format!("params.{key} (integer) is required")))
}

fn build_from_doc(doc: &SpecDoc) -> Result<(ProtocolSpec, Option<PipelineShape>)> {
    match (doc.kind.as_str(), doc.name.as_str()) {
        ("builtin", "one-round-fn") => {
            let f = BooleanFunction::from_name(&param_str(&doc.params, "fn")?)?;
            Ok((one_round_fn(f)?, None))
        }
        ("builtin", "one-round-fn-multibit") => {
            let f = BooleanFunction::from_name(&param_str(&doc.params, "fn")?)?;
            let r = param_u32(&doc.params, "r")?;
            Ok((one_round_fn_multibit(f, doc.players, r)?, None))
        }
        ("builtin", "select-then-vote") => Ok((select_then_vote(doc.players)?, None)),
        ("builtin", "parity-rounds") => Ok((parity_rounds(doc.players, doc.bits.clone())?, None)),
        ("builtin", "half-majority") => Ok((half_majority(doc.players)?, None)),
        ("builtin", "xor-tribes") => {
            let tribes = param_u32(&doc.params, "tribes")?;
            let width = param_u32(&doc.params, "width")?;
            Ok((xor_tribes(doc.players, tribes, width)?, None))
        }
        ("builtin", "leader-mod") => {
            let r = doc.bits.first().copied().unwrap_or(1);
            Ok((leader_mod(doc.players, r)?, None))
        }
        ("builtin", "leader-const") => {
            let leader = param_u32(&doc.params, "leader")?;
            Ok((leader_const(doc.players, leader)?, None))
        }
        ("composed", "lightest-bin-pipeline") => {
            let cfg: PipelineConfig = serde_json::from_value(doc.params.clone())
                .map_err(|e| SpecIoError::Parse(format!("params: {e}")))?;
            let (p, shape) = build_pipeline(&cfg, doc.players)?;
            Ok((p, Some(shape)))
        }
        (kind, name) => Err(SpecIoError::UnknownName {
            kind: kind.to_string(),
            name: name.to_string(),
        }),
    }
}

fn domain_str(d: OutcomeDomain) -> &'static str {
    match d {
        OutcomeDomain::Coin => "coin",
        OutcomeDomain::Leader => "leader",
    }
}

/// Builds the protocol a document describes, then checks the declared shape
/// against the actual protocol.
pub fn realize(doc: &SpecDoc) -> Result<LoadedSpec> {
    let (protocol, shape) = build_from_doc(doc)?;
    let mismatch = |field: &str, declared: String, actual: String| {
        Err(SpecIoError::ShapeMismatch {
            field: field.into(),
            declared,
            actual,
        })
    };
    if doc.players != protocol.players() {
        return mismatch(
            "players",
            doc.players.to_string(),
            protocol.players().to_string(),
        );
    }
    if doc.k != protocol.rounds() {
        return mismatch("k", doc.k.to_string(), protocol.rounds().to_string());
    }
    if doc.bits != protocol.bits_per_round() {
        return mismatch(
            "bits",
            format!("{:?}", doc.bits),
            format!("{:?}", protocol.bits_per_round()),
        );
    }
    if doc.domain != domain_str(protocol.domain()) {
        return mismatch(
            "domain",
            doc.domain.clone(),
            domain_str(protocol.domain()).into(),
        );
    }
    Ok(LoadedSpec { protocol, shape })
}

pub fn parse(text: &str) -> Result<LoadedSpec> {
    let doc: SpecDoc = serde_json::from_str(text).map_err(|e| SpecIoError::Parse(e.to_string()))?;
    realize(&doc)
}

pub fn load(path: &std::path::Path) -> Result<LoadedSpec> {
    parse(&std::fs::read_to_string(path)?)
}

/// Spec document for a composed pipeline, as emitted by the build command.
pub fn pipeline_doc(cfg: &PipelineConfig, l: u32) -> Result<SpecDoc> {
    let (p, _) = build_pipeline(cfg, l)?;
    Ok(SpecDoc {
        kind: "composed".into(),
        name: "lightest-bin-pipeline".into(),
        k: p.rounds(),
        players: p.players(),
        bits: p.bits_per_round().to_vec(),
        domain: domain_str(p.domain()).into(),
        params: serde_json::to_value(cfg).expect("config serializes"),
    })
}

/// Spec document for a named builtin with explicit params.
pub fn builtin_doc(name: &str, players: u32, bits: Vec<u32>, params: Value) -> Result<SpecDoc> {
    let mut doc = SpecDoc {
        kind: "builtin".into(),
        name: name.into(),
        k: bits.len(),
        players,
        bits,
        domain: "coin".into(),
        params,
    };
    let (p, _) = build_from_doc(&doc)?;
    doc.k = p.rounds();
    doc.players = p.players();
    doc.bits = p.bits_per_round().to_vec();
    doc.domain = domain_str(p.domain()).into();
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::default_schedule;
    use crate::protocol::{exact_honest_value, OutcomeTarget};

    #[test]
    fn builtin_round_trips() {
        let text = r#"{
            "kind": "builtin", "name": "one-round-fn", "k": 1, "players": 4,
            "bits": [1], "domain": "coin", "params": {"fn": "parity:4"}
        }"#;
        let loaded = parse(text).unwrap();
        assert_eq!(loaded.protocol.players(), 4);
        let v = exact_honest_value(&loaded.protocol, &OutcomeTarget::Coin(true)).unwrap();
        assert_eq!(v, crate::dyadic::Dyadic::from_count(1, 1));
    }

    #[test]
    fn declared_shape_is_checked() {
        let text = r#"{
            "kind": "builtin", "name": "one-round-fn", "k": 2, "players": 4,
            "bits": [1], "domain": "coin", "params": {"fn": "parity:4"}
        }"#;
        assert!(matches!(
            parse(text),
            Err(SpecIoError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn unknown_name_and_malformed_json() {
        let text = r#"{
            "kind": "builtin", "name": "no-such-thing", "k": 1, "players": 4,
            "bits": [1], "domain": "coin", "params": {}
        }"#;
        assert!(matches!(parse(text), Err(SpecIoError::UnknownName { .. })));
        assert!(matches!(parse("{not json"), Err(SpecIoError::Parse(_))));
    }

    #[test]
    fn composed_pipeline_round_trips() {
        let (cfg, _) = default_schedule(2, 4096).unwrap();
        let doc = pipeline_doc(&cfg, 4096).unwrap();
        assert_eq!(doc.kind, "composed");
        assert_eq!(doc.k, 2);
        let text = serde_json::to_string(&doc).unwrap();
        let loaded = parse(&text).unwrap();
        assert_eq!(loaded.protocol.players(), 4096);
        assert_eq!(loaded.shape.unwrap().sets_per_stage, vec![(57, 36)]);
    }

    #[test]
    fn leader_builtin_has_leader_domain() {
        let text = r#"{
            "kind": "builtin", "name": "leader-mod", "k": 1, "players": 3,
            "bits": [2], "domain": "leader", "params": {}
        }"#;
        let loaded = parse(text).unwrap();
        assert_eq!(loaded.protocol.domain(), OutcomeDomain::Leader);
    }
}
