use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tick;

/// Delivery delay `base + U{0..=jitter}` ticks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayModel {
    pub base: Tick,
    pub jitter: Tick,
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel { base: 1, jitter: 4 }
    }
}

impl DelayModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Tick {
        self.base.max(1) + if self.jitter == 0 { 0 } else { rng.gen_range(0..=self.jitter) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crash {
    pub node: u32,
    pub at: Tick,
}

/// Two disjoint node sets that cannot reach each other during
/// `[start, start + duration)`. An empty `b` means every node not in `a`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub a: Vec<u32>,
    #[serde(default)]
    pub b: Vec<u32>,
    pub start: Tick,
    pub duration: Tick,
}

impl Partition {
    pub fn active(&self, at: Tick) -> bool {
        at >= self.start && at < self.start + self.duration
    }

    fn in_b(&self, n: u32) -> bool {
        if self.b.is_empty() {
            !self.a.contains(&n)
        } else {
            self.b.contains(&n)
        }
    }

    pub fn separates(&self, x: u32, y: u32) -> bool {
        (self.a.contains(&x) && self.in_b(y)) || (self.a.contains(&y) && self.in_b(x))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultSchedule {
    pub crashes: Vec<Crash>,
    pub partitions: Vec<Partition>,
}

impl FaultSchedule {
    pub fn validate(&self, nodes: usize) -> Result<(), String> {
        for c in &self.crashes {
            if c.node as usize >= nodes {
                return Err(format!("crash names node {} but there are {nodes} nodes", c.node));
            }
        }
        for (i, p) in self.partitions.iter().enumerate() {
            if let Some(n) = p.a.iter().chain(&p.b).find(|&&n| n as usize >= nodes) {
                return Err(format!("partition {i} names node {n} but there are {nodes} nodes"));
            }
            if p.a.iter().any(|n| p.b.contains(n)) {
                return Err(format!("partition {i} sides overlap"));
            }
        }
        Ok(())
    }
}
