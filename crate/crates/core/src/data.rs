//! Offline datasets collected by a behavior policy.
//!
//! A dataset is stored as its tuple view `(s0, s, a, r, s')`. Trajectories are
//! consecutive runs of `horizon` tuples, so the trajectory view is a chunking of the
//! tuple list and the two can never disagree.
//!
//! On disk the dataset is JSON lines: one header object followed by one object per
//! transition.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mdp::{TabularMdp, TabularPolicy};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Independent draw from the initial distribution paired with this tuple.
    #[serde(rename = "s0")]
    pub init_state: usize,
    #[serde(rename = "s")]
    pub state: usize,
    #[serde(rename = "a")]
    pub action: usize,
    #[serde(rename = "r")]
    pub reward: f64,
    #[serde(rename = "sp")]
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: String,
    pub gamma: f64,
    pub seed: u64,
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TupleDataset {
    pub meta: DatasetMeta,
    pub tuples: Vec<Transition>,
}

impl TupleDataset {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn num_trajectories(&self) -> usize {
        self.tuples.len().checked_div(self.meta.horizon).unwrap_or(0)
    }

    /// Trajectory view: consecutive runs of `horizon` transitions.
    pub fn trajectories(&self) -> std::slice::Chunks<'_, Transition> {
        self.tuples.chunks(self.meta.horizon.max(1))
    }

    pub fn with_behavior_label(mut self, label: impl Into<String>) -> Self {
        self.meta.behavior = Some(label.into());
        self
    }

    /// Checks state/action bounds, finiteness and trajectory continuity.
    /// Errors carry the 1-based position of the offending tuple.
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        if m.horizon == 0 {
            return Err(Error::MalformedDataset { line: 0, message: "horizon must be positive".into() });
        }
        if !self.tuples.len().is_multiple_of(m.horizon) {
            return Err(Error::MalformedDataset {
                line: self.tuples.len(),
                message: format!("{} tuples is not a multiple of horizon {}", self.tuples.len(), m.horizon),
            });
        }
        for (i, t) in self.tuples.iter().enumerate() {
            check_transition(t, m).map_err(|message| Error::MalformedDataset { line: i + 1, message })?;
            let continues = (i + 1) % m.horizon != 0;
            if continues && self.tuples[i + 1].state != t.next_state {
                return Err(Error::MalformedDataset {
                    line: i + 2,
                    message: "trajectory is discontinuous with the previous transition".into(),
                });
            }
        }
        Ok(())
    }
}

fn check_transition(t: &Transition, m: &DatasetMeta) -> std::result::Result<(), String> {
    for (name, s) in [("s0", t.init_state), ("s", t.state), ("sp", t.next_state)] {
        if s >= m.num_states {
            return Err(format!("{name} = {s} is out of range for {} states", m.num_states));
        }
    }
    if t.action >= m.num_actions {
        return Err(format!("a = {} is out of range for {} actions", t.action, m.num_actions));
    }
    if !t.reward.is_finite() {
        return Err("reward is not finite".into());
    }
    Ok(())
}

/// Rolls out `num_trajectories` trajectories of length `horizon` under `behavior`.
pub fn sample_dataset(
    mdp: &TabularMdp,
    behavior: &TabularPolicy,
    num_trajectories: usize,
    horizon: usize,
    seed: u64,
) -> Result<TupleDataset> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    behavior.check_dims(mdp)?;
    let mut rng = seed::rng(seed);
    let mut tuples = Vec::with_capacity(num_trajectories * horizon);
    for _ in 0..num_trajectories {
        let mut state = mdp.sample_initial_state(&mut rng);
        for _ in 0..horizon {
            let action = behavior.sample_action(&mut rng, state);
            let reward = mdp.sample_reward(&mut rng, state, action);
            let next_state = mdp.sample_next_state(&mut rng, state, action);
            let init_state = mdp.sample_initial_state(&mut rng);
            tuples.push(Transition { init_state, state, action, reward, next_state });
            state = next_state;
        }
    }
    Ok(TupleDataset {
        meta: DatasetMeta {
            env: mdp.env_id().to_string(),
            gamma: mdp.gamma(),
            seed,
            horizon,
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            behavior: None,
        },
        tuples,
    })
}

pub fn write_dataset<W: Write>(ds: &TupleDataset, mut w: W) -> Result<()> {
    serde_json::to_writer(&mut w, &ds.meta)?;
    writeln!(w)?;
    for t in &ds.tuples {
        serde_json::to_writer(&mut w, t)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<TupleDataset> {
    let mut lines = r.lines().enumerate();
    let meta: DatasetMeta = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?)
            .map_err(|e| Error::MalformedDataset { line: 1, message: format!("header: {e}") })?,
        None => return Err(Error::MalformedDataset { line: 1, message: "missing header".into() }),
    };
    let mut tuples = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transition =
            serde_json::from_str(&line).map_err(|e| Error::MalformedDataset { line: i + 1, message: e.to_string() })?;
        check_transition(&t, &meta).map_err(|message| Error::MalformedDataset { line: i + 1, message })?;
        tuples.push(t);
    }
    let ds = TupleDataset { meta, tuples };
    // Tuple k sits on line k + 1 of the file.
    ds.validate().map_err(|e| match e {
        Error::MalformedDataset { line, message } => Error::MalformedDataset { line: line + 1, message },
        other => other,
    })?;
    Ok(ds)
}

pub fn save_dataset(ds: &TupleDataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<TupleDataset> {
    read_dataset(BufReader::new(File::open(path)?))
}
