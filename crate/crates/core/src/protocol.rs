//! JSON-lines control channel for out-of-process clients.
//!
//! One request object per input line, one response object per output line.
//! Every response carries `"ok"`; failures add `"error"` and leave the
//! session usable.
//!
//! | request | response fields |
//! |---|---|
//! | `{"cmd":"reset","seed":0,"scenario":"path.toml"}` | `observation`, `schema` |
//! | `{"cmd":"reset","seed":0,"scenario_toml":"..."}` | as above |
//! | `{"cmd":"step","actions":[{..}, ..]}` | `observation`, `reward`, `terminated`, `truncated`, `info` |
//! | `{"cmd":"step"}` | as above, actions from the scenario's controller |
//! | `{"cmd":"schema"}` | `observation`, `action`, `n_houses`, `horizon_steps` |
//! | `{"cmd":"close"}` | `ok`, then the server stops |
//!
//! `reset` without a scenario reuses the current one. An action object has
//! the fields `u_ac` (bool), `u_mode` (`"heat"`/`"cool"`), `u_pv`, `c`, `d`
//! (numbers in [0, 1]) and `u_loads` (8 bools, P1 first). Numbers are
//! written in shortest round-trip form, so values survive the channel
//! bit-exactly.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{load_scenario, parse_scenario, ScenarioConfig};
use crate::devices::ActionVector;
use crate::env::{observation_schema, CommunityEnv, StepAction, StepRecord};

#[derive(Debug, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Reset {
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        scenario: Option<String>,
        #[serde(default)]
        scenario_toml: Option<String>,
    },
    Step {
        #[serde(default)]
        actions: Option<Vec<ActionVector<f64>>>,
    },
    Schema,
    Close,
}

#[derive(Debug, Serialize)]
pub struct ActionSlot {
    pub name: &'static str,
    pub kind: &'static str,
    pub low: f64,
    pub high: f64,
}

/// Per-house action components.
pub fn action_schema() -> Vec<ActionSlot> {
    let slot = |name, kind, high| ActionSlot { name, kind, low: 0.0, high };
    vec![
        slot("u_ac", "bool", 1.0),
        slot("u_mode", "heat|cool", 1.0),
        slot("u_pv", "real", 1.0),
        slot("c", "real", 1.0),
        slot("d", "real", 1.0),
        slot("u_loads", "bool[8]", 1.0),
    ]
}

fn info(r: &StepRecord<f64>) -> Value {
    json!({
        "step": r.step,
        "verdict": r.outcome.verdict,
        "reason": r.outcome.reason,
        "e_gen": r.balance.e_gen,
        "e_dem": r.balance.e_dem,
        "e_mis": r.balance.e_mis,
        "e_grid": r.balance.e_grid,
        "p_mis_ac": r.candidate.p_mis_ac,
        "load_desired": r.desired_total(),
        "load_served": r.served_total(),
        "comfort_violation": r.comfort_violation,
        "actions": r.actions,
    })
}

/// Session state: the current scenario and engine.
#[derive(Default)]
pub struct Session {
    scenario: Option<ScenarioConfig<f64>>,
    env: Option<CommunityEnv<f64>>,
}

impl Session {
    pub fn new(scenario: Option<ScenarioConfig<f64>>) -> Self {
        Session { scenario, env: None }
    }

    /// Handles one request line. Returns the response line and whether the
    /// session should end.
    pub fn handle_line(&mut self, line: &str) -> (String, bool) {
        let req: Request = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return (json!({"ok": false, "error": format!("bad request: {e}")}).to_string(), false),
        };
        let close = matches!(req, Request::Close);
        let resp = match self.handle(req) {
            Ok(v) => v,
            Err(e) => json!({"ok": false, "error": e}),
        };
        (resp.to_string(), close)
    }

    fn handle(&mut self, req: Request) -> Result<Value, String> {
        match req {
            Request::Reset {
                seed,
                scenario,
                scenario_toml,
            } => {
                let new = match (scenario, scenario_toml) {
                    (Some(p), None) => Some(load_scenario::<f64>(Path::new(&p)).map_err(|e| e.to_string())?),
                    (None, Some(t)) => Some(parse_scenario::<f64>(&t, None).map_err(|e| e.to_string())?),
                    (None, None) => None,
                    _ => return Err("give either scenario or scenario_toml".into()),
                };
                if let Some(s) = new {
                    self.scenario = Some(s);
                    self.env = None;
                }
                let s = self.scenario.as_ref().ok_or("no scenario loaded")?;
                let seed = seed.unwrap_or(s.seed);
                if self.env.is_none() {
                    self.env = Some(CommunityEnv::new(s.clone()).map_err(|e| e.to_string())?);
                }
                let env = self.env.as_mut().expect("env");
                let obs = env.reset(seed).map_err(|e| e.to_string())?;
                Ok(json!({"ok": true, "observation": obs.values, "schema": observation_schema(env.scenario())}))
            }
            Request::Step { actions } => {
                let env = self.env.as_mut().ok_or("step called before reset")?;
                let a = actions.map_or(StepAction::Builtin, StepAction::External);
                let out = env.step(a).map_err(|e| e.to_string())?;
                Ok(json!({
                    "ok": true,
                    "observation": out.observation.values,
                    "reward": out.reward,
                    "terminated": out.terminated,
                    "truncated": out.truncated,
                    "info": info(&out.record),
                }))
            }
            Request::Schema => {
                let s = self.scenario.as_ref().ok_or("no scenario loaded")?;
                Ok(json!({
                    "ok": true,
                    "observation": observation_schema(s),
                    "action": action_schema(),
                    "n_houses": s.houses.len(),
                    "horizon_steps": s.horizon_steps,
                }))
            }
            Request::Close => Ok(json!({"ok": true})),
        }
    }
}

/// Serves requests from `input` until `close` or end of input.
pub fn serve<R: BufRead, W: Write>(session: &mut Session, input: R, mut output: W) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (resp, close) = session.handle_line(&line);
        writeln!(output, "{resp}")?;
        output.flush()?;
        if close {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ControllerKind, DerClass, GridMode, StartupMode};
    use crate::devices::AcMode;
    use crate::env::StepAction;

    fn scenario() -> ScenarioConfig<f64> {
        let mut s = ScenarioConfig::synthetic("p", &[DerClass::PvAndBattery, DerClass::NoDer], GridMode::OffGrid, ControllerKind::RuleBased, StartupMode::Wacsc);
        s.horizon_steps = 20;
        s
    }

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn session_round_trip_matches_native() {
        let mut sess = Session::new(Some(scenario()));
        let (r, _) = sess.handle_line(r#"{"cmd":"reset","seed":4}"#);
        let r = parse(&r);
        assert_eq!(r["ok"], true);
        let mut native = CommunityEnv::new(scenario()).unwrap();
        let obs = native.reset(4).unwrap();
        let got: Vec<f64> = serde_json::from_value(r["observation"].clone()).unwrap();
        assert_eq!(got, obs.values);

        let mut a = ActionVector::<f64>::idle(AcMode::Cool);
        a.u_loads[0] = true;
        a.c = 0.3;
        let req = json!({"cmd": "step", "actions": [a, ActionVector::<f64>::idle(AcMode::Heat)]}).to_string();
        for _ in 0..20 {
            let r = parse(&sess.handle_line(&req).0);
            assert_eq!(r["ok"], true, "{r}");
            let out = native.step(StepAction::External(vec![a, ActionVector::idle(AcMode::Heat)])).unwrap();
            let got: Vec<f64> = serde_json::from_value(r["observation"].clone()).unwrap();
            assert_eq!(got, out.observation.values);
            assert_eq!(r["reward"].as_f64().unwrap(), out.reward);
            assert_eq!(r["truncated"], out.truncated);
        }
        let r = parse(&sess.handle_line(&req).0);
        assert_eq!(r["ok"], false);
        assert!(r["error"].as_str().unwrap().contains("finished"));
    }

    #[test]
    fn errors_keep_session_alive() {
        let mut sess = Session::default();
        let r = parse(&sess.handle_line(r#"{"cmd":"step"}"#).0);
        assert!(r["error"].as_str().unwrap().contains("before reset"));
        let r = parse(&sess.handle_line("not json").0);
        assert!(r["error"].as_str().unwrap().starts_with("bad request"));
        let r = parse(&sess.handle_line(r#"{"cmd":"schema"}"#).0);
        assert_eq!(r["ok"], false);
        let toml_text = scenario().to_toml_string().unwrap();
        let req = json!({"cmd": "reset", "scenario_toml": toml_text}).to_string();
        assert_eq!(parse(&sess.handle_line(&req).0)["ok"], true);
        let r = parse(&sess.handle_line(r#"{"cmd":"schema"}"#).0);
        assert_eq!(r["observation"].as_array().unwrap().len(), 6 + 22);
        assert_eq!(r["n_houses"], 2);
        let r = parse(&sess.handle_line(r#"{"cmd":"step","actions":[]}"#).0);
        assert!(r["error"].as_str().unwrap().contains("expected 2 actions"));
        let r = parse(&sess.handle_line(r#"{"cmd":"step"}"#).0);
        assert_eq!(r["info"]["step"], 0);
    }

    #[test]
    fn serve_stops_on_close() {
        let input = "{\"cmd\":\"reset\"}\n\n{\"cmd\":\"close\"}\n{\"cmd\":\"schema\"}\n";
        let mut out = Vec::new();
        serve(&mut Session::new(Some(scenario())), input.as_bytes(), &mut out).unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(parse(lines[1]), json!({"ok": true}));
    }
}
