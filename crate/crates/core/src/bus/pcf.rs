//! Policy control: stores the EE policy per sensing task.

use super::{body, parse_body, Bus, BusError, NetworkFunction, NfDescriptor, NfError, NfKind, NfMessage};
use crate::geometry::Aabb;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub const GET_POLICY: &str = "pcf.get_policy/1";
pub const SET_POLICY: &str = "pcf.set_policy/1";
pub const POLICY: &str = "pcf.policy/1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyMode {
    PerformanceFirst,
    EnergyFirst,
    /// Weight on accuracy; `1 - lambda` goes to energy.
    Balanced(f64),
}

impl Default for PolicyMode {
    fn default() -> Self {
        PolicyMode::Balanced(0.5)
    }
}

impl PolicyMode {
    pub fn validate(&self) -> Result<(), BusError> {
        match *self {
            PolicyMode::Balanced(l) if !(0.0..=1.0).contains(&l) => {
                Err(BusError::Value(format!("balanced weight {l} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyMode::PerformanceFirst => f.write_str("performance_first"),
            PolicyMode::EnergyFirst => f.write_str("energy_first"),
            PolicyMode::Balanced(l) => write!(f, "balanced:{l}"),
        }
    }
}

impl FromStr for PolicyMode {
    type Err = BusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mode = match s.trim() {
            "performance_first" => PolicyMode::PerformanceFirst,
            "energy_first" => PolicyMode::EnergyFirst,
            "balanced" => PolicyMode::default(),
            other => {
                let l = other
                    .strip_prefix("balanced:")
                    .ok_or_else(|| BusError::Value(format!("unknown policy `{other}`")))?;
                let l: f64 = l
                    .parse()
                    .map_err(|_| BusError::Value(format!("bad balanced weight `{l}`")))?;
                PolicyMode::Balanced(l)
            }
        };
        mode.validate()?;
        Ok(mode)
    }
}

impl Serialize for PolicyMode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PolicyMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Includes (`enabled`) or excludes a region from the sensing targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionGate {
    pub region: Aabb,
    pub enabled: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EePolicy {
    pub mode: PolicyMode,
    #[serde(default)]
    pub region_gates: Vec<RegionGate>,
}

impl EePolicy {
    pub fn new(mode: PolicyMode) -> Self {
        Self {
            mode,
            region_gates: vec![],
        }
    }

    pub fn validate(&self) -> Result<(), BusError> {
        self.mode.validate()?;
        if let Some(g) = self.region_gates.iter().find(|g| !g.region.is_well_formed()) {
            return Err(BusError::Value(format!("region gate {:?} is malformed", g.region)));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TaskRef {
    task: String,
}

#[derive(Serialize, Deserialize)]
struct SetPolicy {
    task: String,
    policy: EePolicy,
}

/// Policy store. Unknown tasks get the default policy.
#[derive(Debug)]
pub struct Pcf {
    id: String,
    default: EePolicy,
    policies: BTreeMap<String, EePolicy>,
}

impl Pcf {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            default: EePolicy::default(),
            policies: BTreeMap::new(),
        }
    }

    pub fn policy(&self, task: &str) -> &EePolicy {
        self.policies.get(task).unwrap_or(&self.default)
    }

    pub fn set_policy(&mut self, task: &str, policy: EePolicy) -> Result<(), BusError> {
        policy.validate()?;
        self.policies.insert(task.into(), policy);
        Ok(())
    }

    /// Fetches a policy through the bus.
    pub fn get_via(bus: &mut Bus, sender: &str, pcf: &str, task: &str) -> Result<EePolicy, BusError> {
        let resp = bus.request(sender, pcf, body(GET_POLICY, &TaskRef { task: task.into() }))?;
        parse_body(&resp, POLICY).map_err(|e| BusError::Codec(e.0))
    }

    pub fn set_via(bus: &mut Bus, sender: &str, pcf: &str, task: &str, policy: &EePolicy) -> Result<(), BusError> {
        let req = SetPolicy {
            task: task.into(),
            policy: policy.clone(),
        };
        bus.request(sender, pcf, body(SET_POLICY, &req)).map(|_| ())
    }
}

impl NetworkFunction for Pcf {
    fn descriptor(&self) -> NfDescriptor {
        NfDescriptor::new(self.id.clone(), NfKind::Pcf, &["npcf-policy"])
    }

    fn handle_request(&mut self, _bus: &mut Bus, msg: &NfMessage) -> Result<Value, NfError> {
        match msg.schema() {
            Some(GET_POLICY) => {
                let r: TaskRef = parse_body(&msg.body, GET_POLICY)?;
                Ok(body(POLICY, self.policy(&r.task)))
            }
            Some(SET_POLICY) => {
                let r: SetPolicy = parse_body(&msg.body, SET_POLICY)?;
                self.set_policy(&r.task, r.policy.clone()).map_err(NfError::new)?;
                Ok(body(POLICY, &r.policy))
            }
            other => Err(NfError::new(format!("pcf: unsupported schema {other:?}"))),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_modes() {
        assert_eq!("energy_first".parse::<PolicyMode>().unwrap(), PolicyMode::EnergyFirst);
        assert_eq!(
            "performance_first".parse::<PolicyMode>().unwrap(),
            PolicyMode::PerformanceFirst
        );
        assert_eq!(
            "balanced:0.25".parse::<PolicyMode>().unwrap(),
            PolicyMode::Balanced(0.25)
        );
        assert_eq!("balanced".parse::<PolicyMode>().unwrap(), PolicyMode::Balanced(0.5));
        assert!("balanced:1.5".parse::<PolicyMode>().is_err());
        assert!("balanced:-0.1".parse::<PolicyMode>().is_err());
        assert!("balanced:nan".parse::<PolicyMode>().is_err());
        assert!("cheap".parse::<PolicyMode>().is_err());
    }

    #[test]
    fn display_round_trips() {
        for m in [
            PolicyMode::EnergyFirst,
            PolicyMode::PerformanceFirst,
            PolicyMode::Balanced(0.3),
        ] {
            assert_eq!(m.to_string().parse::<PolicyMode>().unwrap(), m);
        }
    }

    #[test]
    fn default_policy_is_balanced() {
        let pcf = Pcf::new("pcf");
        assert_eq!(pcf.policy("any").mode, PolicyMode::Balanced(0.5));
    }

    #[test]
    fn get_and_set_over_bus() {
        let mut bus = Bus::new();
        bus.register(Box::new(Pcf::new("pcf"))).unwrap();
        let p = EePolicy::new(PolicyMode::EnergyFirst);
        Pcf::set_via(&mut bus, "scf", "pcf", "t1", &p).unwrap();
        assert_eq!(Pcf::get_via(&mut bus, "scf", "pcf", "t1").unwrap(), p);
        assert_eq!(
            Pcf::get_via(&mut bus, "scf", "pcf", "t2").unwrap().mode,
            PolicyMode::Balanced(0.5)
        );
        let bad = serde_json::json!({"schema": SET_POLICY, "task": "t", "policy": {"mode": "balanced:2"}});
        assert!(matches!(bus.request("scf", "pcf", bad), Err(BusError::Handler { .. })));
    }
}
