//! Operator HTTP API, independent of any HTTP stack.
//!
//! | method | path                  | body              |
//! |--------|-----------------------|-------------------|
//! | GET    | `/tes`                |                   |
//! | GET    | `/tes/{id}/status`    |                   |
//! | POST   | `/tes/{id}/control`   | `{"cmd": "arm"}`  |
//! | POST   | `/tes/{id}/query`     |                   |
//! | GET    | `/events?since=N`     |                   |
//! | POST   | `/events/{id}/ack`    |                   |
//! | GET    | `/requests/{id}`      |                   |
//!
//! `/stream` is served by the transport from [`super::Hmi::subscribe`].

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Hmi, HmiError};
use crate::protocol::{ControlCmd, TeId};
use crate::Millis;

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok(body: Value) -> Self {
        Self { status: 200, body }
    }

    fn accepted(body: Value) -> Self {
        Self { status: 202, body }
    }

    fn error(status: u16, msg: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": msg.into() }),
        }
    }
}

impl From<HmiError> for ApiResponse {
    fn from(e: HmiError) -> Self {
        let status = match e {
            HmiError::NotAnAlarm(_) => 409,
            _ => 404,
        };
        ApiResponse::error(status, e.to_string())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlBody {
    cmd: String,
}

fn query_param<'a>(query: &'a str, key: &str) -> Option<&'a str> {
    query
        .split('&')
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
}

fn te_id(seg: &str) -> Result<TeId, ApiResponse> {
    seg.parse()
        .map(TeId)
        .map_err(|_| ApiResponse::error(400, format!("bad terminal id `{seg}`")))
}

fn to_json<T: serde::Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("API types serialize")
}

/// Routes one request. `target` is the path with optional query string.
pub fn handle(hmi: &mut Hmi, method: &str, target: &str, body: &[u8], now: Millis) -> ApiResponse {
    match route(hmi, method, target, body, now) {
        Ok(r) | Err(r) => r,
    }
}

fn route(hmi: &mut Hmi, method: &str, target: &str, body: &[u8], now: Millis) -> Result<ApiResponse, ApiResponse> {
    let (path, query) = target.split_once('?').unwrap_or((target, ""));
    let segs: Vec<&str> = path.trim_matches('/').split('/').collect();
    let resp = match (method, segs.as_slice()) {
        ("GET", ["tes"]) => ApiResponse::ok(to_json(hmi.list_tes())),
        ("GET", ["tes", id, "status"]) => {
            let id = te_id(id)?;
            let view = hmi
                .te_view(id)
                .ok_or_else(|| ApiResponse::from(HmiError::UnknownTe(id)))?;
            ApiResponse::ok(to_json(view))
        }
        ("POST", ["tes", id, "control"]) => {
            let id = te_id(id)?;
            let body: ControlBody = serde_json::from_slice(body)
                .map_err(|e| ApiResponse::error(400, format!("bad control body: {e}")))?;
            let cmd = ControlCmd::from_name(&body.cmd)
                .ok_or_else(|| ApiResponse::error(400, format!("unknown command `{}`", body.cmd)))?;
            let rid = hmi.send_control(id, cmd, now)?;
            ApiResponse::accepted(to_json(hmi.request(rid)?))
        }
        ("POST", ["tes", id, "query"]) => {
            let id = te_id(id)?;
            let rid = hmi.query_status(id, now)?;
            ApiResponse::accepted(to_json(hmi.request(rid)?))
        }
        ("GET", ["events"]) => {
            let since = match query_param(query, "since") {
                None => 0,
                Some(s) => s
                    .parse()
                    .map_err(|_| ApiResponse::error(400, format!("bad since `{s}`")))?,
            };
            ApiResponse::ok(to_json(hmi.events_since(since)))
        }
        ("POST", ["events", id, "ack"]) => {
            let id: u64 = id
                .parse()
                .map_err(|_| ApiResponse::error(400, format!("bad event id `{id}`")))?;
            hmi.ack_alarm(id, now)?;
            ApiResponse::ok(json!({ "acked": id }))
        }
        ("GET", ["requests", id]) => {
            let id: u64 = id
                .parse()
                .map_err(|_| ApiResponse::error(400, format!("bad request id `{id}`")))?;
            ApiResponse::ok(to_json(hmi.request(id)?))
        }
        (_, ["tes"] | ["tes", _, "status" | "control" | "query"] | ["events"] | ["events", _, "ack"] | ["requests", _]) => {
            ApiResponse::error(405, format!("{method} not allowed on {path}"))
        }
        _ => ApiResponse::error(404, format!("no route for {path}")),
    };
    Ok(resp)
}
