//! Lossless zero-delay broadcast medium.
//!
//! Each robot owns one register that its neighbours read. When the two axes
//! are triggered separately an axis can be published on its own; the other
//! axis keeps its older value and timestamp.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::model::Graph;

/// One delivery: agent `agent` published `value` on the masked axes at `step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub step: usize,
    pub agent: usize,
    pub axes: [bool; 2],
    pub value: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisterBank {
    registers: Vec<Vector2<f64>>,
    stamps: Vec<[Option<usize>; 2]>,
    last_publish: Vec<Option<usize>>,
    ledger: Vec<Delivery>,
}

impl RegisterBank {
    pub fn new(agents: usize) -> Self {
        RegisterBank {
            registers: vec![Vector2::zeros(); agents],
            stamps: vec![[None; 2]; agents],
            last_publish: vec![None; agents],
            ledger: Vec::new(),
        }
    }

    pub fn agents(&self) -> usize {
        self.registers.len()
    }

    /// Publish the masked axes of `value`. A second publish by the same agent
    /// in one step, or a step older than the last one, is a logic error.
    pub fn publish(
        &mut self,
        agent: usize,
        value: Vector2<f64>,
        k: usize,
        axes: [bool; 2],
    ) -> Result<()> {
        if agent >= self.agents() {
            return Err(Error::Logic(format!("no agent {agent} on the network")));
        }
        if let Some(last) = self.last_publish[agent] {
            if k <= last {
                return Err(Error::Logic(format!(
                    "agent {agent} published at step {k} after publishing at step {last}"
                )));
            }
        }
        if !axes[0] && !axes[1] {
            return Ok(());
        }
        for axis in 0..2 {
            if axes[axis] {
                self.registers[agent][axis] = value[axis];
                self.stamps[agent][axis] = Some(k);
            }
        }
        self.last_publish[agent] = Some(k);
        self.ledger.push(Delivery {
            step: k,
            agent,
            axes,
            value,
        });
        Ok(())
    }

    pub fn register(&self, agent: usize) -> Vector2<f64> {
        self.registers[agent]
    }

    /// Step of the last publish per axis.
    pub fn timestamps(&self, agent: usize) -> [Option<usize>; 2] {
        self.stamps[agent]
    }

    /// `(j, register_j)` for every `j` with `a_ij = 1`, in index order.
    pub fn read_neighbors(&self, agent: usize, graph: &Graph) -> Vec<(usize, Vector2<f64>)> {
        graph
            .neighbors(agent)
            .map(|j| (j, self.registers[j]))
            .collect()
    }

    pub fn ledger(&self) -> &[Delivery] {
        &self.ledger
    }

    /// Transmission rate per agent and axis recounted from the ledger over
    /// `steps` decision steps.
    pub fn ledger_rates(&self, steps: usize) -> Result<Vec<[f64; 2]>> {
        if steps == 0 {
            return Err(Error::Logic("transmission rate over zero steps".into()));
        }
        let mut counts = vec![[0usize; 2]; self.agents()];
        for d in self.ledger.iter().filter(|d| d.step < steps) {
            for axis in 0..2 {
                counts[d.agent][axis] += usize::from(d.axes[axis]);
            }
        }
        Ok(counts
            .iter()
            .map(|c| [c[0] as f64 / steps as f64, c[1] as f64 / steps as f64])
            .collect())
    }
}

/// Replay the ledger and return agent `owner`'s register as it stood at the
/// end of step `k`, or `None` if an axis had never been published.
pub fn replay_register(ledger: &[Delivery], owner: usize, k: usize) -> Option<Vector2<f64>> {
    let mut v = [None; 2];
    for d in ledger.iter().filter(|d| d.agent == owner && d.step <= k) {
        for axis in 0..2 {
            if d.axes[axis] {
                v[axis] = Some(d.value[axis]);
            }
        }
    }
    Some(Vector2::new(v[0]?, v[1]?))
}
