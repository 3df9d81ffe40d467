use serde_json::{Map, Value};
use thiserror::Error;

use super::{validate_graph, Anchor, Framework, MrpEdge, MrpGraph, MrpNode, Violation, ViolationCode};

#[derive(Debug, Error)]
pub enum MrpError {
    #[error("malformed MRP record at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("invalid MRP record: {0}")]
    Field(String),
    #[error("graph `{id}` fails validation: {violations:?}")]
    Validation { id: String, violations: Vec<Violation> },
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<MrpError>,
    },
}

fn field_err(msg: impl Into<String>) -> MrpError {
    MrpError::Field(msg.into())
}

/// Byte offset of a serde_json error position within a single line.
fn byte_offset(line: &str, err: &serde_json::Error) -> usize {
    let mut remaining = err.line().saturating_sub(1);
    let mut base = 0;
    for (i, b) in line.bytes().enumerate() {
        if remaining == 0 {
            break;
        }
        if b == b'\n' {
            remaining -= 1;
            base = i + 1;
        }
    }
    (base + err.column().saturating_sub(1)).min(line.len())
}

fn take_u32(v: &Value, what: &str) -> Result<u32, MrpError> {
    v.as_u64()
        .and_then(|x| u32::try_from(x).ok())
        .ok_or_else(|| field_err(format!("{what} must be a non-negative integer, found {v}")))
}

fn take_usize(v: &Value, what: &str) -> Result<usize, MrpError> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| field_err(format!("{what} must be a non-negative integer, found {v}")))
}

fn take_str_list(v: Option<Value>, what: &str) -> Result<Vec<String>, MrpError> {
    match v {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|item| match item {
                Value::String(s) => Ok(s),
                other => Err(field_err(format!("{what} entries must be strings, found {other}"))),
            })
            .collect(),
        Some(other) => Err(field_err(format!("{what} must be an array, found {other}"))),
    }
}

fn take_array(v: Option<Value>, what: &str) -> Result<Vec<Value>, MrpError> {
    match v {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => Ok(items),
        Some(other) => Err(field_err(format!("{what} must be an array, found {other}"))),
    }
}

fn parse_node(v: Value) -> Result<MrpNode, MrpError> {
    let Value::Object(mut obj) = v else {
        return Err(field_err("node must be an object"));
    };
    let id = take_u32(&obj.shift_remove("id").ok_or_else(|| field_err("node without id"))?, "node id")?;
    let label = match obj.shift_remove("label") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        Some(other) => return Err(field_err(format!("node {id}: label must be a string, found {other}"))),
    };
    let names = take_str_list(obj.shift_remove("properties"), "properties")?;
    let values = take_str_list(obj.shift_remove("values"), "values")?;
    if names.len() != values.len() {
        return Err(field_err(format!(
            "node {id}: {} properties but {} values",
            names.len(),
            values.len()
        )));
    }
    let anchors = match obj.shift_remove("anchors") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => {
            let mut anchors = Vec::with_capacity(items.len());
            for item in items {
                let from = item
                    .get("from")
                    .ok_or_else(|| field_err(format!("node {id}: anchor without `from`")))?;
                let to = item.get("to").ok_or_else(|| field_err(format!("node {id}: anchor without `to`")))?;
                anchors.push(Anchor::new(take_usize(from, "from")?, take_usize(to, "to")?));
            }
            Some(anchors)
        }
        Some(other) => return Err(field_err(format!("node {id}: anchors must be an array, found {other}"))),
    };
    Ok(MrpNode {
        id,
        label,
        properties: names.into_iter().zip(values).collect(),
        anchors,
        extras: obj,
    })
}

fn parse_edge(v: Value) -> Result<MrpEdge, MrpError> {
    let Value::Object(mut obj) = v else {
        return Err(field_err("edge must be an object"));
    };
    let source = take_u32(
        &obj.shift_remove("source").ok_or_else(|| field_err("edge without source"))?,
        "edge source",
    )?;
    let target = take_u32(
        &obj.shift_remove("target").ok_or_else(|| field_err("edge without target"))?,
        "edge target",
    )?;
    let label = match obj.shift_remove("label") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s,
        Some(other) => return Err(field_err(format!("edge label must be a string, found {other}"))),
    };
    let names = take_str_list(obj.shift_remove("attributes"), "attributes")?;
    let values = take_array(obj.shift_remove("values"), "values")?;
    if names.len() != values.len() {
        return Err(field_err(format!(
            "edge {source}->{target}: {} attributes but {} values",
            names.len(),
            values.len()
        )));
    }
    Ok(MrpEdge {
        source,
        target,
        label,
        attributes: names.into_iter().zip(values).collect(),
        extras: obj,
    })
}

/// Parse one line of the MRP interchange format.
///
/// Keys outside the modelled set are kept in `extras` so that
/// [`serialize_mrp`] reproduces them. Dangling edge or top references are
/// rejected; other invariants are left to [`validate_graph`].
pub fn parse_mrp(line: &str) -> Result<MrpGraph, MrpError> {
    let value: Value = serde_json::from_str(line).map_err(|e| MrpError::Syntax {
        offset: byte_offset(line, &e),
        message: e.to_string(),
    })?;
    let Value::Object(mut obj) = value else {
        return Err(MrpError::Syntax {
            offset: 0,
            message: "record is not a JSON object".into(),
        });
    };
    let id = match obj.shift_remove("id") {
        Some(Value::String(s)) => s,
        Some(other) => return Err(field_err(format!("id must be a string, found {other}"))),
        None => return Err(field_err("record without id")),
    };
    let framework = match obj.shift_remove("framework") {
        Some(Value::String(s)) => s.parse::<Framework>().map_err(field_err)?,
        _ => return Err(field_err(format!("graph `{id}`: missing framework"))),
    };
    let input = match obj.shift_remove("input") {
        Some(Value::String(s)) => s,
        None | Some(Value::Null) => String::new(),
        Some(other) => return Err(field_err(format!("input must be a string, found {other}"))),
    };
    let tops = take_array(obj.shift_remove("tops"), "tops")?
        .iter()
        .map(|v| take_u32(v, "top"))
        .collect::<Result<Vec<_>, _>>()?;
    let nodes = take_array(obj.shift_remove("nodes"), "nodes")?
        .into_iter()
        .map(parse_node)
        .collect::<Result<Vec<_>, _>>()?;
    let edges = take_array(obj.shift_remove("edges"), "edges")?
        .into_iter()
        .map(parse_edge)
        .collect::<Result<Vec<_>, _>>()?;
    let graph = MrpGraph {
        id,
        framework,
        input,
        tops,
        nodes,
        edges,
        extras: obj,
    };
    let dangling: Vec<Violation> = validate_graph(&graph)
        .into_iter()
        .filter(|v| matches!(v.code, ViolationCode::DanglingEdge | ViolationCode::DanglingTop))
        .collect();
    if !dangling.is_empty() {
        return Err(MrpError::Validation {
            id: graph.id,
            violations: dangling,
        });
    }
    Ok(graph)
}

fn node_value(node: &MrpNode) -> Value {
    let mut obj = Map::new();
    obj.insert("id".into(), node.id.into());
    if let Some(label) = &node.label {
        obj.insert("label".into(), label.clone().into());
    }
    if !node.properties.is_empty() {
        obj.insert(
            "properties".into(),
            node.properties.iter().map(|(k, _)| Value::from(k.clone())).collect(),
        );
        obj.insert(
            "values".into(),
            node.properties.iter().map(|(_, v)| Value::from(v.clone())).collect(),
        );
    }
    if let Some(anchors) = &node.anchors {
        let list = anchors
            .iter()
            .map(|a| {
                let mut m = Map::new();
                m.insert("from".into(), a.from.into());
                m.insert("to".into(), a.to.into());
                Value::Object(m)
            })
            .collect();
        obj.insert("anchors".into(), Value::Array(list));
    }
    for (k, v) in &node.extras {
        obj.insert(k.clone(), v.clone());
    }
    Value::Object(obj)
}

fn edge_value(edge: &MrpEdge) -> Value {
    let mut obj = Map::new();
    obj.insert("source".into(), edge.source.into());
    obj.insert("target".into(), edge.target.into());
    if !edge.label.is_empty() {
        obj.insert("label".into(), edge.label.clone().into());
    }
    if !edge.attributes.is_empty() {
        obj.insert(
            "attributes".into(),
            edge.attributes.iter().map(|(k, _)| Value::from(k.clone())).collect(),
        );
        obj.insert("values".into(), edge.attributes.iter().map(|(_, v)| v.clone()).collect());
    }
    for (k, v) in &edge.extras {
        obj.insert(k.clone(), v.clone());
    }
    Value::Object(obj)
}

/// Serialise a graph as one MRP line (no trailing newline).
pub fn serialize_mrp(g: &MrpGraph) -> String {
    let mut obj = Map::new();
    obj.insert("id".into(), g.id.clone().into());
    if let Some(flavor) = g.extras.get("flavor") {
        obj.insert("flavor".into(), flavor.clone());
    }
    obj.insert("framework".into(), g.framework.as_str().into());
    for key in ["version", "time"] {
        if let Some(v) = g.extras.get(key) {
            obj.insert(key.into(), v.clone());
        }
    }
    obj.insert("input".into(), g.input.clone().into());
    obj.insert("tops".into(), g.tops.iter().map(|&t| Value::from(t)).collect());
    obj.insert("nodes".into(), g.nodes.iter().map(node_value).collect());
    obj.insert("edges".into(), g.edges.iter().map(edge_value).collect());
    for (k, v) in &g.extras {
        if !obj.contains_key(k) {
            obj.insert(k.clone(), v.clone());
        }
    }
    Value::Object(obj).to_string()
}

/// Parse every non-blank line of a document.
pub fn read_mrp_lines(doc: &str) -> Result<Vec<MrpGraph>, MrpError> {
    doc.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_mrp(l).map_err(|e| MrpError::Line {
                line: i + 1,
                source: Box::new(e),
            })
        })
        .collect()
}
