//! Simulated world: road graph, vehicles and base stations, advanced in
//! fixed time steps with piecewise-linear kinematics along each route.

use crate::energy::ComputeProfile;
use crate::geometry::{Aabb, Vec3};
use crate::metrics::Environment;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weather {
    #[default]
    Clear,
    Adverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadNode {
    pub id: String,
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadEdge {
    pub id: String,
    pub from: usize,
    pub to: usize,
    /// Travel length in meters; may exceed the straight-line distance.
    pub length: f64,
    pub capacity: u32,
    pub speed_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoadGraph {
    pub nodes: Vec<RoadNode>,
    pub edges: Vec<RoadEdge>,
    edge_index: HashMap<String, usize>,
}

impl RoadGraph {
    pub fn new(nodes: Vec<RoadNode>, edges: Vec<RoadEdge>) -> Self {
        let edge_index = edges.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        Self {
            nodes,
            edges,
            edge_index,
        }
    }

    pub fn edge_by_id(&self, id: &str) -> Option<usize> {
        self.edge_index.get(id).copied()
    }

    pub fn endpoints(&self, edge: usize) -> (Vec3, Vec3) {
        let e = &self.edges[edge];
        (self.nodes[e.from].position, self.nodes[e.to].position)
    }

    /// Unit direction of travel along an edge.
    pub fn direction(&self, edge: usize) -> Vec3 {
        let (a, b) = self.endpoints(edge);
        (b - a).normalized()
    }

    pub fn point_at(&self, edge: usize, offset: f64) -> Vec3 {
        let (a, b) = self.endpoints(edge);
        let t = offset / self.edges[edge].length;
        a.lerp(b, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleKind {
    Regular,
    Emergency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: String,
    pub kind: VehicleKind,
    /// Edge indices into the road graph, in travel order.
    pub route: Vec<usize>,
    /// Index into `route` of the current edge.
    pub leg: usize,
    /// Meters travelled along the current edge.
    pub offset: f64,
    /// Desired speed; the actual speed is capped by each edge's limit.
    pub cruise_speed: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub connected: bool,
    pub parked: bool,
}

impl Vehicle {
    pub fn current_edge(&self) -> usize {
        self.route[self.leg]
    }

    /// Interpolation parameter along the current edge, in [0, 1].
    pub fn edge_parameter(&self, graph: &RoadGraph) -> f64 {
        self.offset / graph.edges[self.current_edge()].length
    }

    /// Distance travelled since the start of the route.
    pub fn route_distance(&self, graph: &RoadGraph) -> f64 {
        self.route[..self.leg]
            .iter()
            .map(|&e| graph.edges[e].length)
            .sum::<f64>()
            + self.offset
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    fn refresh_kinematics(&mut self, graph: &RoadGraph) {
        let edge = self.current_edge();
        self.position = graph.point_at(edge, self.offset);
        self.velocity = if self.parked {
            Vec3::ZERO
        } else {
            graph.direction(edge) * self.cruise_speed.min(graph.edges[edge].speed_limit)
        };
    }
}

/// One-way link from a base station to the next compute tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub latency: f64,
    pub energy_per_bit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseStation {
    pub id: String,
    pub position: Vec3,
    pub attached_sources: Vec<String>,
    pub edge_compute: ComputeProfile,
    /// Sensor-to-edge-server link at the site.
    pub local_link: Link,
    /// Site-to-central-compute link.
    pub backhaul: Link,
}

/// True kinematics of one vehicle at a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTruth {
    pub id: String,
    pub position: Vec3,
    pub velocity: Vec3,
    /// Unit direction of the vehicle's current edge.
    pub heading: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthState {
    pub step: u64,
    pub vehicles: Vec<VehicleTruth>,
}

impl GroundTruthState {
    pub fn get(&self, id: &str) -> Option<&VehicleTruth> {
        self.vehicles
            .binary_search_by(|v| v.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.vehicles[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub road_graph: RoadGraph,
    /// Sorted by id.
    pub vehicles: Vec<Vehicle>,
    pub base_stations: Vec<BaseStation>,
    pub step_duration: f64,
    pub current_step: u64,
    pub environment: Environment,
    pub weather: Weather,
}

impl World {
    pub(crate) fn place(&mut self) {
        let graph = &self.road_graph;
        for v in &mut self.vehicles {
            let len = graph.edges[v.current_edge()].length;
            if v.leg + 1 == v.route.len() && v.offset >= len {
                v.offset = len;
                v.parked = true;
            }
            v.refresh_kinematics(graph);
        }
    }

    /// Advances every vehicle by one step and increments the step counter.
    pub fn step(&mut self) {
        let dt = self.step_duration;
        let graph = &self.road_graph;
        for v in &mut self.vehicles {
            if v.parked {
                continue;
            }
            v.offset += v.speed() * dt;
            loop {
                let len = graph.edges[v.current_edge()].length;
                if v.offset < len {
                    break;
                }
                if v.leg + 1 < v.route.len() {
                    v.offset -= len;
                    v.leg += 1;
                } else {
                    v.offset = len;
                    v.parked = true;
                    break;
                }
            }
            v.refresh_kinematics(graph);
        }
        self.current_step += 1;
    }

    pub fn ground_truth(&self) -> GroundTruthState {
        GroundTruthState {
            step: self.current_step,
            vehicles: self
                .vehicles
                .iter()
                .map(|v| VehicleTruth {
                    id: v.id.clone(),
                    position: v.position,
                    velocity: v.velocity,
                    heading: self.road_graph.direction(v.current_edge()),
                })
                .collect(),
        }
    }

    /// Ids of vehicles inside the closed box, sorted.
    pub fn vehicles_in_region(&self, region: &Aabb) -> Vec<String> {
        let mut ids: Vec<String> = self
            .vehicles
            .iter()
            .filter(|v| region.contains(v.position))
            .map(|v| v.id.clone())
            .collect();
        ids.sort();
        ids
    }

    pub fn base_station(&self, id: &str) -> Option<&BaseStation> {
        self.base_stations.iter().find(|b| b.id == id)
    }

    pub fn vehicle(&self, id: &str) -> Option<&Vehicle> {
        self.vehicles
            .binary_search_by(|v| v.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.vehicles[i])
    }

    /// Current position of a base station or vehicle.
    pub fn host_position(&self, host: &str) -> Option<Vec3> {
        self.base_station(host)
            .map(|b| b.position)
            .or_else(|| self.vehicle(host).map(|v| v.position))
    }

    /// Base station serving a host: itself, or the nearest one for a vehicle.
    pub fn serving_station(&self, host: &str) -> Option<&BaseStation> {
        if let Some(bs) = self.base_station(host) {
            return Some(bs);
        }
        let p = self.vehicle(host)?.position;
        self.base_stations.iter().min_by(|a, b| {
            a.position
                .distance(p)
                .total_cmp(&b.position.distance(p))
                .then_with(|| a.id.cmp(&b.id))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(len: f64, limit: f64) -> RoadGraph {
        RoadGraph::new(
            vec![
                RoadNode {
                    id: "a".into(),
                    position: Vec3::ZERO,
                },
                RoadNode {
                    id: "b".into(),
                    position: Vec3::new(len, 0.0, 0.0),
                },
                RoadNode {
                    id: "c".into(),
                    position: Vec3::new(len, len, 0.0),
                },
            ],
            vec![
                RoadEdge {
                    id: "ab".into(),
                    from: 0,
                    to: 1,
                    length: len,
                    capacity: 10,
                    speed_limit: limit,
                },
                RoadEdge {
                    id: "bc".into(),
                    from: 1,
                    to: 2,
                    length: len,
                    capacity: 10,
                    speed_limit: limit,
                },
            ],
        )
    }

    fn world(route: Vec<usize>, offset: f64, speed: f64, dt: f64) -> World {
        let mut w = World {
            road_graph: straight(100.0, 30.0),
            vehicles: vec![Vehicle {
                id: "v1".into(),
                kind: VehicleKind::Regular,
                route,
                leg: 0,
                offset,
                cruise_speed: speed,
                position: Vec3::ZERO,
                velocity: Vec3::ZERO,
                connected: true,
                parked: false,
            }],
            base_stations: vec![],
            step_duration: dt,
            current_step: 0,
            environment: Environment::Outdoor,
            weather: Weather::Clear,
        };
        w.place();
        w
    }

    #[test]
    fn advance_from_edge_start() {
        let mut w = world(vec![0], 0.0, 10.0, 0.1);
        w.step();
        assert_eq!(w.current_step, 1);
        let v = &w.vehicles[0];
        assert!((v.edge_parameter(&w.road_graph) - 0.01).abs() < 1e-15);
        assert!((v.position.x - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_vehicles_only_step_changes() {
        let mut w = world(vec![0], 0.0, 10.0, 0.1);
        w.vehicles.clear();
        let before = w.clone();
        w.step();
        assert_eq!(w.current_step, 1);
        assert_eq!(w.vehicles, before.vehicles);
    }

    #[test]
    fn park_at_route_end() {
        let mut w = world(vec![0], 99.0, 20.0, 0.1);
        w.step();
        let v = &w.vehicles[0];
        assert!(v.parked);
        assert_eq!(v.velocity, Vec3::ZERO);
        assert_eq!(v.position, Vec3::new(100.0, 0.0, 0.0));
        w.step();
        assert_eq!(w.vehicles[0].position, Vec3::new(100.0, 0.0, 0.0));
    }

    #[test]
    fn crosses_onto_next_edge_with_new_heading() {
        let mut w = world(vec![0, 1], 99.5, 10.0, 0.1);
        w.step();
        let v = &w.vehicles[0];
        assert_eq!(v.leg, 1);
        assert!((v.offset - 0.5).abs() < 1e-12);
        assert!((v.velocity.y - 10.0).abs() < 1e-12);
        let t = w.ground_truth();
        assert_eq!(t.vehicles[0].heading, Vec3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn speed_capped_by_edge_limit() {
        let w = world(vec![0], 0.0, 50.0, 0.1);
        assert_eq!(w.vehicles[0].speed(), 30.0);
    }

    #[test]
    fn region_query_sorted_and_closed() {
        let mut w = world(vec![0], 10.0, 0.0, 0.1);
        let mut second = w.vehicles[0].clone();
        second.id = "v0".into();
        w.vehicles.insert(0, second);
        let all = Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(200.0, 200.0, 1.0));
        assert_eq!(w.vehicles_in_region(&all), vec!["v0", "v1"]);
        let edge = Aabb::new(Vec3::new(10.0, 0.0, 0.0), Vec3::new(10.0, 0.0, 0.0));
        assert_eq!(w.vehicles_in_region(&edge).len(), 2);
        let off_road = Aabb::new(Vec3::new(50.0, 50.0, 0.0), Vec3::new(50.0, 50.0, 0.0));
        assert!(w.vehicles_in_region(&off_road).is_empty());
    }
}
